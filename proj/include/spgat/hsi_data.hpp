#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spgat/tensor.hpp"

namespace spgat {

// Radiance cube stored band-sequential in memory: values[(b*H + r)*W + c].
struct HsiCube {
  int64_t bands = 0;
  int64_t height = 0;
  int64_t width = 0;
  std::vector<double> values;

  double at(int64_t b, int64_t r, int64_t c) const {
    return values[static_cast<size_t>((b * height + r) * width + c)];
  }
  double& at(int64_t b, int64_t r, int64_t c) {
    return values[static_cast<size_t>((b * height + r) * width + c)];
  }
};

// Per-pixel class in [0, C]; 0 means unlabeled.
struct LabelMap {
  int64_t height = 0;
  int64_t width = 0;
  std::vector<uint16_t> classes;

  uint16_t at(int64_t r, int64_t c) const {
    return classes[static_cast<size_t>(r * width + c)];
  }
  // Highest class index present (the C of [1, C]).
  int64_t num_classes() const;
};

enum class Interleave { kBsq, kBip };

// Header: text key/value lines (bands, height, width, dtype f32le,
// interleave bsq|bip). Data: raw little-endian 32-bit floats.
HsiCube load_cube(const std::string& header_path, const std::string& data_path);
void save_cube(const HsiCube& cube, const std::string& header_path,
               const std::string& data_path, Interleave interleave);

// Raw little-endian uint16, row-major H*W. Every class in [1, max] must
// appear at least once.
LabelMap load_labels(const std::string& path, int64_t height, int64_t width);
void save_labels(const LabelMap& labels, const std::string& path);

// Per-band standardization using mean/std over labeled pixels only, applied
// to every pixel. Variance floor 1e-8.
HsiCube normalize_bands(const HsiCube& cube, const LabelMap& labels);

struct PixelRef {
  uint16_t cls = 0;
  int64_t row = 0;
  int64_t col = 0;
  bool operator==(const PixelRef&) const = default;
};

struct SplitRequest {
  // count > 0 selects that many per class; otherwise fraction in (0,1) of
  // each class, rounded half up.
  int64_t count = 0;
  double fraction = 0.0;

  static SplitRequest per_class_count(int64_t n) { return {n, 0.0}; }
  static SplitRequest per_class_fraction(double f) { return {0, f}; }
};

struct SplitSpec {
  uint64_t seed = 0;
  std::vector<PixelRef> train;
  std::vector<PixelRef> test;
};

// Seeded per-class sampling without replacement; unselected labeled pixels
// become the test set (row-major order).
SplitSpec make_split(const LabelMap& labels, const SplitRequest& request,
                     uint64_t seed);

// Text records "class,row,col,role" with role train|test.
std::string split_to_text(const SplitSpec& split);
SplitSpec split_from_text(const std::string& text, const LabelMap& labels);

struct PatchBatch {
  Tensor inputs;                 // [B,1,S,P,P]
  std::vector<int64_t> labels;   // center class - 1, each in [0, C)
  std::vector<PixelRef> centers;
};

// Reflects i into [0, n) without repeating the border sample.
int64_t mirror_index(int64_t i, int64_t n);

PatchBatch extract_patches(const HsiCube& cube, const LabelMap& labels,
                           std::span<const PixelRef> coords, int64_t patch);

}  // namespace spgat
