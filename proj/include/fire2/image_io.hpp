#pragma once

#include <string>

#include "fire2/tensor.hpp"

namespace fire2::io {

/// NPY v1.0, dtype <f8, C order. Round-trips doubles bit-exactly.
void write_npy(const std::string& path, const Tensor& t);
Tensor read_npy(const std::string& path);

/// Minimal 8-bit truecolor PNG (zlib stored blocks, no compression).
/// Values are quantized to [0,255]; the reader only accepts files this
/// writer produces.
void write_png_rgb8(const std::string& path, const Tensor& hwc);
Tensor read_png_rgb8(const std::string& path);

uint32_t crc32(const unsigned char* data, size_t len, uint32_t seed = 0);

}  // namespace fire2::io
