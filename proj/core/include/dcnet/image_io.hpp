#pragma once

#include <filesystem>

#include "dcnet/tensor.hpp"

// Binary netpbm: P6 for [3,H,W] RGB, P5 for [1,H,W] grayscale, maxval 255.
// Values in [0,1] are clamped and rounded to 8 bits.
namespace dcnet::io {

void write_ppm(const std::filesystem::path& path, const Tensor& image);
void write_pgm(const std::filesystem::path& path, const Tensor& image);
// Reads either format back into [C,H,W] with values k/255.
Tensor read_pnm(const std::filesystem::path& path);

}  // namespace dcnet::io
