#include "spgat/hsi_data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "spgat/rng.hpp"

namespace spgat {
namespace {

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return bytes;
}

void write_file(const std::string& path, const void* data, size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out) throw FormatError("write failed for " + path);
}

float load_f32le(const unsigned char* p) {
  const uint32_t u = static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
                     (static_cast<uint32_t>(p[2]) << 16) |
                     (static_cast<uint32_t>(p[3]) << 24);
  return std::bit_cast<float>(u);
}

void store_f32le(float v, unsigned char* p) {
  const uint32_t u = std::bit_cast<uint32_t>(v);
  p[0] = static_cast<unsigned char>(u & 0xff);
  p[1] = static_cast<unsigned char>((u >> 8) & 0xff);
  p[2] = static_cast<unsigned char>((u >> 16) & 0xff);
  p[3] = static_cast<unsigned char>((u >> 24) & 0xff);
}

uint16_t load_u16le(const unsigned char* p) {
  return static_cast<uint16_t>(static_cast<uint16_t>(p[0]) |
                               (static_cast<uint16_t>(p[1]) << 8));
}

void validate_class_coverage(const LabelMap& labels) {
  const int64_t c_max = labels.num_classes();
  std::vector<bool> seen(static_cast<size_t>(c_max + 1), false);
  for (uint16_t v : labels.classes) seen[v] = true;
  for (int64_t c = 1; c <= c_max; ++c) {
    if (!seen[static_cast<size_t>(c)]) {
      throw LabelError("label map has no pixel of class " + std::to_string(c) +
                       " but classes up to " + std::to_string(c_max) + " exist");
    }
  }
}

}  // namespace

int64_t LabelMap::num_classes() const {
  uint16_t m = 0;
  for (uint16_t v : classes) m = std::max(m, v);
  return static_cast<int64_t>(m);
}

HsiCube load_cube(const std::string& header_path, const std::string& data_path) {
  std::ifstream in(header_path);
  if (!in) throw FormatError("cannot open " + header_path);
  int64_t bands = -1, height = -1, width = -1;
  std::string dtype, interleave;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;  // blank line
    std::string value;
    if (!(ls >> value)) {
      throw FormatError(header_path + ":" + std::to_string(lineno) +
                        ": key '" + key + "' has no value");
    }
    auto as_dim = [&](const char* what) {
      int64_t v = 0;
      try {
        size_t used = 0;
        v = std::stoll(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
      } catch (const std::exception&) {
        throw FormatError(header_path + ": " + what + " is not an integer: '" +
                          value + "'");
      }
      if (v < 1) {
        throw FormatError(header_path + ": " + what + " must be >= 1, got " + value);
      }
      return v;
    };
    if (key == "bands") bands = as_dim("bands");
    else if (key == "height") height = as_dim("height");
    else if (key == "width") width = as_dim("width");
    else if (key == "dtype") dtype = value;
    else if (key == "interleave") interleave = value;
    else throw FormatError(header_path + ": unknown header key '" + key + "'");
  }
  if (bands < 0 || height < 0 || width < 0 || dtype.empty() || interleave.empty()) {
    throw FormatError(header_path +
                      ": header must define bands, height, width, dtype, interleave");
  }
  if (dtype != "f32le") {
    throw FormatError(header_path + ": unsupported dtype '" + dtype +
                      "' (only f32le)");
  }
  Interleave il;
  if (interleave == "bsq") il = Interleave::kBsq;
  else if (interleave == "bip") il = Interleave::kBip;
  else {
    throw FormatError(header_path + ": unknown interleave tag '" + interleave + "'");
  }

  const auto bytes = read_file(data_path);
  const size_t expected = static_cast<size_t>(bands * height * width) * 4;
  if (bytes.size() != expected) {
    throw FormatError(data_path + ": expected " + std::to_string(expected) +
                      " bytes, found " + std::to_string(bytes.size()));
  }

  HsiCube cube;
  cube.bands = bands;
  cube.height = height;
  cube.width = width;
  cube.values.resize(static_cast<size_t>(bands * height * width));
  const int64_t hw = height * width;
  for (int64_t b = 0; b < bands; ++b) {
    for (int64_t p = 0; p < hw; ++p) {
      const int64_t offset =
          il == Interleave::kBsq ? b * hw + p : p * bands + b;
      cube.values[static_cast<size_t>(b * hw + p)] =
          static_cast<double>(load_f32le(&bytes[static_cast<size_t>(offset) * 4]));
    }
  }
  check_finite(cube.values, "load_cube");
  return cube;
}

void save_cube(const HsiCube& cube, const std::string& header_path,
               const std::string& data_path, Interleave interleave) {
  if (cube.bands < 1 || cube.height < 1 || cube.width < 1 ||
      cube.values.size() !=
          static_cast<size_t>(cube.bands * cube.height * cube.width)) {
    throw FormatError("save_cube: inconsistent cube dimensions");
  }
  std::ostringstream header;
  header << "bands " << cube.bands << "\n"
         << "height " << cube.height << "\n"
         << "width " << cube.width << "\n"
         << "dtype f32le\n"
         << "interleave " << (interleave == Interleave::kBsq ? "bsq" : "bip")
         << "\n";
  const std::string htext = header.str();
  write_file(header_path, htext.data(), htext.size());

  const int64_t hw = cube.height * cube.width;
  std::vector<unsigned char> bytes(cube.values.size() * 4);
  for (int64_t b = 0; b < cube.bands; ++b) {
    for (int64_t p = 0; p < hw; ++p) {
      const int64_t offset =
          interleave == Interleave::kBsq ? b * hw + p : p * cube.bands + b;
      store_f32le(static_cast<float>(cube.values[static_cast<size_t>(b * hw + p)]),
                  &bytes[static_cast<size_t>(offset) * 4]);
    }
  }
  write_file(data_path, bytes.data(), bytes.size());
}

LabelMap load_labels(const std::string& path, int64_t height, int64_t width) {
  if (height < 1 || width < 1) throw FormatError("load_labels: bad dimensions");
  const auto bytes = read_file(path);
  const size_t expected = static_cast<size_t>(height * width) * 2;
  if (bytes.size() != expected) {
    throw FormatError(path + ": expected " + std::to_string(expected) +
                      " bytes, found " + std::to_string(bytes.size()));
  }
  LabelMap labels;
  labels.height = height;
  labels.width = width;
  labels.classes.resize(static_cast<size_t>(height * width));
  for (size_t i = 0; i < labels.classes.size(); ++i) {
    labels.classes[i] = load_u16le(&bytes[i * 2]);
  }
  validate_class_coverage(labels);
  return labels;
}

void save_labels(const LabelMap& labels, const std::string& path) {
  std::vector<unsigned char> bytes(labels.classes.size() * 2);
  for (size_t i = 0; i < labels.classes.size(); ++i) {
    bytes[i * 2] = static_cast<unsigned char>(labels.classes[i] & 0xff);
    bytes[i * 2 + 1] = static_cast<unsigned char>(labels.classes[i] >> 8);
  }
  write_file(path, bytes.data(), bytes.size());
}

HsiCube normalize_bands(const HsiCube& cube, const LabelMap& labels) {
  if (labels.height != cube.height || labels.width != cube.width) {
    throw ShapeError("normalize_bands: label map " + std::to_string(labels.height) +
                     "x" + std::to_string(labels.width) + " does not match cube " +
                     std::to_string(cube.height) + "x" + std::to_string(cube.width));
  }
  const int64_t hw = cube.height * cube.width;
  int64_t labeled = 0;
  for (uint16_t v : labels.classes) labeled += v != 0 ? 1 : 0;
  if (labeled == 0) throw LabelError("normalize_bands: no labeled pixels");

  HsiCube out = cube;
  for (int64_t b = 0; b < cube.bands; ++b) {
    const double* src = cube.values.data() + b * hw;
    double mean = 0.0;
    for (int64_t p = 0; p < hw; ++p) {
      if (labels.classes[static_cast<size_t>(p)] != 0) mean += src[p];
    }
    mean /= static_cast<double>(labeled);
    double var = 0.0;
    for (int64_t p = 0; p < hw; ++p) {
      if (labels.classes[static_cast<size_t>(p)] != 0) {
        const double d = src[p] - mean;
        var += d * d;
      }
    }
    var /= static_cast<double>(labeled);
    const double inv = 1.0 / std::sqrt(std::max(var, 1e-8));
    double* dst = out.values.data() + b * hw;
    for (int64_t p = 0; p < hw; ++p) dst[p] = (src[p] - mean) * inv;
  }
  check_finite(out.values, "normalize_bands");
  return out;
}

SplitSpec make_split(const LabelMap& labels, const SplitRequest& request,
                     uint64_t seed) {
  if (request.count <= 0 &&
      !(request.fraction > 0.0 && request.fraction < 1.0)) {
    throw SplitError("make_split: request needs count >= 1 or fraction in (0,1)");
  }
  const int64_t c_max = labels.num_classes();
  if (c_max == 0) throw SplitError("make_split: label map has no labeled pixels");
  validate_class_coverage(labels);

  SplitSpec split;
  split.seed = seed;
  Rng rng(seed);
  for (int64_t c = 1; c <= c_max; ++c) {
    std::vector<PixelRef> pool;
    for (int64_t r = 0; r < labels.height; ++r) {
      for (int64_t col = 0; col < labels.width; ++col) {
        if (labels.at(r, col) == static_cast<uint16_t>(c)) {
          pool.push_back({static_cast<uint16_t>(c), r, col});
        }
      }
    }
    const int64_t n = static_cast<int64_t>(pool.size());
    int64_t take;
    if (request.count > 0) {
      take = request.count;
    } else {
      // Round half up.
      take = static_cast<int64_t>(
          std::floor(request.fraction * static_cast<double>(n) + 0.5));
    }
    if (take < 1 || take > n) {
      throw SplitError("make_split: class " + std::to_string(c) + " has " +
                       std::to_string(n) + " pixels, cannot take " +
                       std::to_string(take) + " for training");
    }
    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    rng.shuffle(order);
    std::vector<bool> picked(static_cast<size_t>(n), false);
    for (int64_t i = 0; i < take; ++i) {
      picked[static_cast<size_t>(order[static_cast<size_t>(i)])] = true;
      split.train.push_back(pool[static_cast<size_t>(order[static_cast<size_t>(i)])]);
    }
    for (int64_t i = 0; i < n; ++i) {
      if (!picked[static_cast<size_t>(i)]) split.test.push_back(pool[static_cast<size_t>(i)]);
    }
  }
  return split;
}

std::string split_to_text(const SplitSpec& split) {
  std::ostringstream out;
  for (const PixelRef& p : split.train) {
    out << p.cls << "," << p.row << "," << p.col << ",train\n";
  }
  for (const PixelRef& p : split.test) {
    out << p.cls << "," << p.row << "," << p.col << ",test\n";
  }
  return out.str();
}

SplitSpec split_from_text(const std::string& text, const LabelMap& labels) {
  SplitSpec split;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  std::set<std::pair<int64_t, int64_t>> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string f_cls, f_row, f_col, f_role;
    if (!std::getline(ls, f_cls, ',') || !std::getline(ls, f_row, ',') ||
        !std::getline(ls, f_col, ',') || !std::getline(ls, f_role)) {
      throw SplitError("split line " + std::to_string(lineno) +
                       ": expected class,row,col,role");
    }
    PixelRef p;
    try {
      p.cls = static_cast<uint16_t>(std::stoul(f_cls));
      p.row = std::stoll(f_row);
      p.col = std::stoll(f_col);
    } catch (const std::exception&) {
      throw SplitError("split line " + std::to_string(lineno) +
                       ": non-numeric field");
    }
    if (p.row < 0 || p.row >= labels.height || p.col < 0 || p.col >= labels.width) {
      throw SplitError("split line " + std::to_string(lineno) +
                       ": pixel out of bounds");
    }
    if (labels.at(p.row, p.col) != p.cls) {
      throw SplitError("split line " + std::to_string(lineno) + ": class " +
                       std::to_string(p.cls) + " disagrees with label map value " +
                       std::to_string(labels.at(p.row, p.col)));
    }
    if (p.cls == 0) {
      throw SplitError("split line " + std::to_string(lineno) +
                       ": unlabeled pixel in split");
    }
    if (!seen.insert({p.row, p.col}).second) {
      throw SplitError("split line " + std::to_string(lineno) +
                       ": duplicate pixel");
    }
    if (f_role == "train") split.train.push_back(p);
    else if (f_role == "test") split.test.push_back(p);
    else {
      throw SplitError("split line " + std::to_string(lineno) + ": unknown role '" +
                       f_role + "'");
    }
  }
  return split;
}

int64_t mirror_index(int64_t i, int64_t n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

PatchBatch extract_patches(const HsiCube& cube, const LabelMap& labels,
                           std::span<const PixelRef> coords, int64_t patch) {
  if (patch < 1 || patch % 2 == 0) {
    throw ConfigError("extract_patches: patch side must be odd and positive, got " +
                      std::to_string(patch));
  }
  if (labels.height != cube.height || labels.width != cube.width) {
    throw ShapeError("extract_patches: label map does not match cube dimensions");
  }
  const int64_t B = static_cast<int64_t>(coords.size());
  PatchBatch batch;
  if (B == 0) return batch;
  const int64_t S = cube.bands;
  const int64_t half = patch / 2;
  Tensor inputs = Tensor::zeros({B, 1, S, patch, patch});
  batch.labels.reserve(static_cast<size_t>(B));
  double* out = inputs.data_mut().data();
  for (int64_t b = 0; b < B; ++b) {
    const PixelRef& p = coords[static_cast<size_t>(b)];
    if (p.row < 0 || p.row >= cube.height || p.col < 0 || p.col >= cube.width) {
      throw LabelError("extract_patches: pixel (" + std::to_string(p.row) + "," +
                       std::to_string(p.col) + ") out of bounds");
    }
    const uint16_t cls = labels.at(p.row, p.col);
    if (cls == 0) {
      throw LabelError("extract_patches: pixel (" + std::to_string(p.row) + "," +
                       std::to_string(p.col) + ") is unlabeled");
    }
    for (int64_t s = 0; s < S; ++s) {
      for (int64_t pr = 0; pr < patch; ++pr) {
        const int64_t r = mirror_index(p.row - half + pr, cube.height);
        for (int64_t pc = 0; pc < patch; ++pc) {
          const int64_t c = mirror_index(p.col - half + pc, cube.width);
          out[static_cast<size_t>(((b * S + s) * patch + pr) * patch + pc)] =
              cube.at(s, r, c);
        }
      }
    }
    batch.labels.push_back(static_cast<int64_t>(cls) - 1);
    batch.centers.push_back(p);
  }
  batch.inputs = inputs;
  return batch;
}

}  // namespace spgat
