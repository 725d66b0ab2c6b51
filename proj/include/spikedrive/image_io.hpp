#pragma once

#include <string>

#include "spikedrive/tensor.hpp"

namespace spikedrive {

// Binary portable graymap (P5) from a [H, W] raster; values clamped to [0, 1].
void write_pgm(const std::string& path, const TensorF& image);

// Binary portable pixmap (P6) from a [3, H, W] raster; values clamped to [0, 1].
void write_ppm(const std::string& path, const TensorF& image);

}  // namespace spikedrive
