#include "spikedrive/image_io.hpp"

#include <algorithm>
#include <fstream>

namespace spikedrive {

namespace {

unsigned char to_byte(float v) {
  return static_cast<unsigned char>(std::clamp(v, 0.0f, 1.0f) * 255.0f + 0.5f);
}

}  // namespace

void write_pgm(const std::string& path, const TensorF& image) {
  contract(image.rank() == 2, "write_pgm expects [H,W]");
  std::ofstream out(path, std::ios::binary);
  contract(out.good(), "cannot open " + path);
  out << "P5\n" << image.dim(1) << " " << image.dim(0) << "\n255\n";
  for (int64_t i = 0; i < image.size(); ++i) out.put(static_cast<char>(to_byte(image[i])));
  contract(out.good(), "pgm write failed: " + path);
}

void write_ppm(const std::string& path, const TensorF& image) {
  contract(image.rank() == 3 && image.dim(0) == 3, "write_ppm expects [3,H,W]");
  const int64_t H = image.dim(1), W = image.dim(2);
  std::ofstream out(path, std::ios::binary);
  contract(out.good(), "cannot open " + path);
  out << "P6\n" << W << " " << H << "\n255\n";
  for (int64_t h = 0; h < H; ++h)
    for (int64_t w = 0; w < W; ++w)
      for (int64_t c = 0; c < 3; ++c)
        out.put(static_cast<char>(to_byte(image[(c * H + h) * W + w])));
  contract(out.good(), "ppm write failed: " + path);
}

}  // namespace spikedrive
