#pragma once

#include <cstdint>
#include <vector>

namespace matrixkit {

// Row-major interleaved image, values in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, int c) : width(w), height(h), channels(c) {
    data.assign(static_cast<std::size_t>(w) * h * c, 0.0);
  }

  double& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  double at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  std::size_t size() const { return data.size(); }
};

inline std::uint8_t quantize8(double v) {
  const double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return static_cast<std::uint8_t>(c * 255.0 + 0.5);
}

}  // namespace matrixkit
