#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "spgat/hsi_data.hpp"

namespace spgat {

// Fixed 21-entry color table for classification maps. Class c uses
// palette entry (c-1) mod 21; class 0 (unlabeled) renders black.
using Rgb = std::array<uint8_t, 3>;
extern const std::array<Rgb, 21> kClassPalette;

Rgb class_color(uint16_t cls);

// Binary PPM: header `P6\n{W} {H}\n255\n` then 3*H*W bytes row-major.
std::string labels_to_ppm(const LabelMap& labels);
void save_ppm(const LabelMap& labels, const std::string& path);

// Inverse palette lookup. Colors outside the table (other than black)
// throw FormatError; black maps to class 0.
LabelMap labels_from_ppm_text(const std::string& bytes);
LabelMap load_ppm(const std::string& path);

}  // namespace spgat
