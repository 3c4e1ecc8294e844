#include "spgat/synth_scene.hpp"

#include <cmath>
#include <set>

#include "spgat/rng.hpp"

namespace spgat {
namespace {

struct Bump {
  double center, width, amplitude;
};

void validate(const SynthParams& p) {
  if (p.classes < 2) throw ConfigError("synth_scene: classes must be >= 2");
  if (p.bands < 8) throw ConfigError("synth_scene: bands must be >= 8");
  if (p.height < 1 || p.width < 1) {
    throw ConfigError("synth_scene: height and width must be >= 1");
  }
  if (p.height * p.width < 2 * p.classes) {
    throw ConfigError("synth_scene: scene too small for " +
                      std::to_string(2 * p.classes) + " Voronoi cells");
  }
  if (!(p.noise_sigma >= 0.0)) {
    throw ConfigError("synth_scene: noise_sigma must be >= 0");
  }
  if (!(p.context_scale > 0.0)) {
    throw ConfigError("synth_scene: context_scale must be positive");
  }
}

// Two bumps per class, drawn in class order from one stream. The first
// bump's center lives in a class-exclusive slot of the spectrum so classes
// stay separable at every context scale.
std::vector<std::vector<Bump>> draw_signature_bumps(const SynthParams& p) {
  Rng rng(Rng::derive(p.seed, 1));
  const double s = static_cast<double>(p.bands);
  const double slot = s / static_cast<double>(p.classes);
  std::vector<std::vector<Bump>> bumps(static_cast<size_t>(p.classes));
  for (int64_t c = 0; c < p.classes; ++c) {
    Bump narrow;
    narrow.center = rng.uniform(slot * static_cast<double>(c) + 0.15 * slot,
                                slot * static_cast<double>(c) + 0.85 * slot);
    narrow.width = rng.uniform(0.8, 1.6) * p.context_scale;
    narrow.amplitude = rng.uniform(0.8, 1.2);
    Bump wide;
    wide.center = rng.uniform(0.0, s);
    wide.width = rng.uniform(3.0, 6.0) * p.context_scale;
    wide.amplitude = rng.uniform(0.5, 0.9);
    bumps[static_cast<size_t>(c)] = {narrow, wide};
  }
  return bumps;
}

std::vector<double> signature_from_bumps(const std::vector<Bump>& bumps,
                                         int64_t bands) {
  std::vector<double> sig(static_cast<size_t>(bands), 0.0);
  for (int64_t s = 0; s < bands; ++s) {
    double v = 0.0;
    for (const Bump& b : bumps) {
      const double d = (static_cast<double>(s) - b.center) / b.width;
      v += b.amplitude * std::exp(-0.5 * d * d);
    }
    sig[static_cast<size_t>(s)] = v;
  }
  return sig;
}

}  // namespace

std::vector<double> synth_signature(const SynthParams& params, int64_t cls) {
  validate(params);
  if (cls < 1 || cls > params.classes) {
    throw ConfigError("synth_signature: class " + std::to_string(cls) +
                      " outside [1, " + std::to_string(params.classes) + "]");
  }
  const auto bumps = draw_signature_bumps(params);
  return signature_from_bumps(bumps[static_cast<size_t>(cls - 1)], params.bands);
}

std::pair<HsiCube, LabelMap> synth_scene(const SynthParams& params) {
  validate(params);
  const int64_t H = params.height, W = params.width, S = params.bands;
  const int64_t ncells = 2 * params.classes;

  // Distinct cell centers: rejection keeps every cell non-empty (each center
  // pixel is closest to itself), so every class keeps >= 1 pixel.
  Rng cell_rng(Rng::derive(params.seed, 0));
  std::vector<std::pair<int64_t, int64_t>> centers;
  std::set<std::pair<int64_t, int64_t>> used;
  while (static_cast<int64_t>(centers.size()) < ncells) {
    const int64_t r = static_cast<int64_t>(cell_rng.below(static_cast<uint64_t>(H)));
    const int64_t c = static_cast<int64_t>(cell_rng.below(static_cast<uint64_t>(W)));
    if (used.insert({r, c}).second) centers.push_back({r, c});
  }

  LabelMap labels;
  labels.height = H;
  labels.width = W;
  labels.classes.resize(static_cast<size_t>(H * W));
  for (int64_t r = 0; r < H; ++r) {
    for (int64_t c = 0; c < W; ++c) {
      int64_t best = 0;
      int64_t best_d = -1;
      for (int64_t i = 0; i < ncells; ++i) {
        const int64_t dr = r - centers[static_cast<size_t>(i)].first;
        const int64_t dc = c - centers[static_cast<size_t>(i)].second;
        const int64_t d = dr * dr + dc * dc;
        if (best_d < 0 || d < best_d) {  // ties keep the lowest cell index
          best_d = d;
          best = i;
        }
      }
      labels.classes[static_cast<size_t>(r * W + c)] =
          static_cast<uint16_t>(best % params.classes + 1);
    }
  }

  const auto bumps = draw_signature_bumps(params);
  std::vector<std::vector<double>> sigs(static_cast<size_t>(params.classes));
  for (int64_t c = 0; c < params.classes; ++c) {
    sigs[static_cast<size_t>(c)] = signature_from_bumps(bumps[static_cast<size_t>(c)], S);
  }

  HsiCube cube;
  cube.bands = S;
  cube.height = H;
  cube.width = W;
  cube.values.resize(static_cast<size_t>(S * H * W));
  Rng noise_rng(Rng::derive(params.seed, 2));
  for (int64_t b = 0; b < S; ++b) {
    for (int64_t p = 0; p < H * W; ++p) {
      const int64_t cls = labels.classes[static_cast<size_t>(p)] - 1;
      double v = sigs[static_cast<size_t>(cls)][static_cast<size_t>(b)];
      if (params.noise_sigma > 0.0) {
        v += noise_rng.normal(0.0, params.noise_sigma);
      }
      cube.values[static_cast<size_t>(b * H * W + p)] = v;
    }
  }
  check_finite(cube.values, "synth_scene");
  return {std::move(cube), std::move(labels)};
}

}  // namespace spgat
