#include "spgat/ppm.hpp"

#include <fstream>

#include "spgat/errors.hpp"

namespace spgat {

// 21 visually distinct colors; index order is part of the map format.
const std::array<Rgb, 21> kClassPalette = {{
    {230, 25, 75},    // red
    {60, 180, 75},    // green
    {255, 225, 25},   // yellow
    {0, 130, 200},    // blue
    {245, 130, 48},   // orange
    {145, 30, 180},   // purple
    {70, 240, 240},   // cyan
    {240, 50, 230},   // magenta
    {210, 245, 60},   // lime
    {250, 190, 212},  // pink
    {0, 128, 128},    // teal
    {220, 190, 255},  // lavender
    {170, 110, 40},   // brown
    {255, 250, 200},  // beige
    {128, 0, 0},      // maroon
    {170, 255, 195},  // mint
    {128, 128, 0},    // olive
    {255, 215, 180},  // apricot
    {0, 0, 128},      // navy
    {128, 128, 128},  // gray
    {255, 255, 255},  // white
}};

Rgb class_color(uint16_t cls) {
  if (cls == 0) return {0, 0, 0};
  return kClassPalette[static_cast<size_t>((cls - 1) % 21)];
}

std::string labels_to_ppm(const LabelMap& labels) {
  if (labels.height < 1 || labels.width < 1 ||
      static_cast<int64_t>(labels.classes.size()) != labels.height * labels.width) {
    throw ShapeError("ppm: malformed label map");
  }
  std::string out = "P6\n" + std::to_string(labels.width) + " " +
                    std::to_string(labels.height) + "\n255\n";
  out.reserve(out.size() + static_cast<size_t>(3 * labels.height * labels.width));
  for (uint16_t cls : labels.classes) {
    Rgb c = class_color(cls);
    out.push_back(static_cast<char>(c[0]));
    out.push_back(static_cast<char>(c[1]));
    out.push_back(static_cast<char>(c[2]));
  }
  return out;
}

void save_ppm(const LabelMap& labels, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("ppm: cannot open '" + path + "' for writing");
  std::string bytes = labels_to_ppm(labels);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("ppm: short write to '" + path + "'");
}

namespace {

// Reads one whitespace-delimited token; PPM allows any whitespace here.
std::string next_token(const std::string& s, size_t& pos) {
  while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\n' || s[pos] == '\t' ||
                            s[pos] == '\r')) {
    ++pos;
  }
  size_t start = pos;
  while (pos < s.size() && s[pos] != ' ' && s[pos] != '\n' && s[pos] != '\t' &&
         s[pos] != '\r') {
    ++pos;
  }
  if (start == pos) throw FormatError("ppm: truncated header");
  return s.substr(start, pos - start);
}

int64_t header_int(const std::string& s, size_t& pos, const char* what) {
  const std::string tok = next_token(s, pos);
  int64_t v = 0;
  for (char ch : tok) {
    if (ch < '0' || ch > '9') {
      throw FormatError(std::string("ppm: bad ") + what + " '" + tok + "'");
    }
    v = v * 10 + (ch - '0');
  }
  return v;
}

}  // namespace

LabelMap labels_from_ppm_text(const std::string& bytes) {
  size_t pos = 0;
  if (next_token(bytes, pos) != "P6") throw FormatError("ppm: not a P6 file");
  const int64_t width = header_int(bytes, pos, "width");
  const int64_t height = header_int(bytes, pos, "height");
  const int64_t maxval = header_int(bytes, pos, "maxval");
  if (width < 1 || height < 1) throw FormatError("ppm: bad dimensions");
  if (maxval != 255) throw FormatError("ppm: expected maxval 255");
  ++pos;  // single whitespace byte after maxval
  if (bytes.size() - pos != static_cast<size_t>(3 * width * height)) {
    throw FormatError("ppm: expected " + std::to_string(3 * width * height) +
                      " pixel bytes, found " + std::to_string(bytes.size() - pos));
  }
  LabelMap out;
  out.height = height;
  out.width = width;
  out.classes.resize(static_cast<size_t>(height * width));
  for (size_t i = 0; i < out.classes.size(); ++i) {
    Rgb c = {static_cast<uint8_t>(bytes[pos + 3 * i]),
             static_cast<uint8_t>(bytes[pos + 3 * i + 1]),
             static_cast<uint8_t>(bytes[pos + 3 * i + 2])};
    if (c == Rgb{0, 0, 0}) {
      out.classes[i] = 0;
      continue;
    }
    bool found = false;
    for (size_t p = 0; p < kClassPalette.size(); ++p) {
      if (kClassPalette[p] == c) {
        out.classes[i] = static_cast<uint16_t>(p + 1);
        found = true;
        break;
      }
    }
    if (!found) {
      throw FormatError("ppm: pixel " + std::to_string(i) +
                        " color is not in the class palette");
    }
  }
  return out;
}

LabelMap load_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("ppm: cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return labels_from_ppm_text(bytes);
}

}  // namespace spgat
