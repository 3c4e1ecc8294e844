#include "spgat/params_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "spgat/errors.hpp"

namespace spgat {
namespace {

constexpr char kMagic[4] = {'S', 'P', 'G', 'P'};
constexpr uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "parameter files assume a little-endian host");

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::ifstream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw FormatError("params: truncated file '" + path + "'");
  return v;
}

}  // namespace

void save_parameters(const std::vector<Tensor>& tensors, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("params: cannot open '" + path + "' for writing");
  out.write(kMagic, 4);
  put(out, kVersion);
  put(out, static_cast<uint64_t>(tensors.size()));
  for (const Tensor& t : tensors) {
    if (!t.defined()) throw FormatError("params: undefined tensor in save list");
    put(out, static_cast<uint32_t>(t.ndim()));
    for (int64_t d = 0; d < t.ndim(); ++d) put(out, t.dim(d));
    std::span<const double> data = t.data();
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(double)));
  }
  if (!out) throw FormatError("params: short write to '" + path + "'");
}

void load_parameters(const std::vector<Tensor>& tensors, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("params: cannot open '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("params: '" + path + "' is not a parameter file");
  }
  if (take<uint32_t>(in, path) != kVersion) {
    throw FormatError("params: unsupported version in '" + path + "'");
  }
  const uint64_t count = take<uint64_t>(in, path);
  if (count != tensors.size()) {
    throw FormatError("params: file holds " + std::to_string(count) +
                      " tensors, model expects " + std::to_string(tensors.size()));
  }
  for (size_t i = 0; i < tensors.size(); ++i) {
    const Tensor& t = tensors[i];
    const uint32_t ndim = take<uint32_t>(in, path);
    if (static_cast<int64_t>(ndim) != t.ndim()) {
      throw FormatError("params: tensor " + std::to_string(i) + " rank mismatch");
    }
    for (int64_t d = 0; d < t.ndim(); ++d) {
      if (take<int64_t>(in, path) != t.dim(d)) {
        throw FormatError("params: tensor " + std::to_string(i) + " extent mismatch");
      }
    }
    std::span<double> dst = t.data_mut();
    in.read(reinterpret_cast<char*>(dst.data()),
            static_cast<std::streamsize>(dst.size() * sizeof(double)));
    if (!in) throw FormatError("params: truncated file '" + path + "'");
    check_finite(dst, "params load");
  }
  char extra;
  if (in.read(&extra, 1)) {
    throw FormatError("params: trailing bytes in '" + path + "'");
  }
}

}  // namespace spgat
