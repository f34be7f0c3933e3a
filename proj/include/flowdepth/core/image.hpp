#pragma once

#include "flowdepth/core/tensor.hpp"

namespace flowdepth {

// Images are Tensors in CHW layout with values in [0,1].
using ImageFrame = Tensor;

inline ImageFrame make_image(int H, int W, int C = 3, double fill = 0.0) {
  return Tensor::full({C, H, W}, fill);
}

inline double clamp01(double v) { return v < 0 ? 0 : (v > 1 ? 1 : v); }

inline uint8_t to_u8(double v) {
  return static_cast<uint8_t>(std::lround(clamp01(v) * 255.0));
}

inline double from_u8(uint8_t v) { return v / 255.0; }

inline double rmse(const Tensor& a, const Tensor& b, const Mask* region = nullptr) {
  check_same_shape(a, b, "rmse");
  double acc = 0;
  long n = 0;
  const int C = a.ndim() == 3 ? a.dim(0) : 1;
  const long hw = a.numel() / C;
  for (long p = 0; p < hw; ++p) {
    if (region && !(*region)[p]) continue;
    for (int c = 0; c < C; ++c) {
      const double d = a[c * hw + p] - b[c * hw + p];
      acc += d * d;
    }
    n += C;
  }
  return n ? std::sqrt(acc / n) : 0.0;
}

}  // namespace flowdepth
