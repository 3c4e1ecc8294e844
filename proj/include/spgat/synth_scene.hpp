#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "spgat/hsi_data.hpp"

namespace spgat {

struct SynthParams {
  int64_t classes = 4;
  int64_t bands = 32;
  int64_t height = 48;
  int64_t width = 48;
  double noise_sigma = 0.3;
  // Scales the widths of the spectral bumps; larger values spread class
  // evidence across more of the spectrum.
  double context_scale = 1.0;
  uint64_t seed = 7;
};

// Seeded Voronoi layout (2 cells per class, round-robin assignment, ties to
// the lowest cell index) over per-class signatures built from two Gaussian
// bumps, plus i.i.d. Gaussian noise. Every pixel is labeled.
std::pair<HsiCube, LabelMap> synth_scene(const SynthParams& params);

// The noiseless signature of one class, length `bands`; the same curves the
// generator samples from. Exposed for centroid-oracle tests.
std::vector<double> synth_signature(const SynthParams& params, int64_t cls);

}  // namespace spgat
