#pragma once

// Separable cubic-convolution resampling, Keys kernel with a = -0.5.
// Half-pixel center alignment, clamped edges. When downscaling, the kernel is
// stretched by the scale factor (antialiasing) and the tap weights are
// normalized per output sample.

#include <cmath>
#include <vector>

#include "tsan/data/image.hpp"

namespace tsan {

inline double cubic_kernel(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0;
  if (t < 2.0) return a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a;
  return 0.0;
}

namespace detail {

struct TapSet {
  int first = 0;                 // first source index (clamped later)
  std::vector<double> weights;   // normalized
};

inline std::vector<TapSet> build_taps(int in_extent, int out_extent) {
  const double scale = static_cast<double>(in_extent) / out_extent;
  const double stretch = scale > 1.0 ? scale : 1.0;
  const double radius = 2.0 * stretch;
  std::vector<TapSet> taps(static_cast<std::size_t>(out_extent));
  for (int o = 0; o < out_extent; ++o) {
    const double center = (o + 0.5) * scale - 0.5;
    const int lo = static_cast<int>(std::floor(center - radius)) + 1;
    const int hi = static_cast<int>(std::floor(center + radius));
    TapSet& t = taps[static_cast<std::size_t>(o)];
    t.first = lo;
    double sum = 0.0;
    for (int s = lo; s <= hi; ++s) {
      const double w = cubic_kernel((s - center) / stretch);
      t.weights.push_back(w);
      sum += w;
    }
    for (double& w : t.weights) w /= sum;
  }
  return taps;
}

inline int clamp_index(int i, int extent) { return i < 0 ? 0 : (i >= extent ? extent - 1 : i); }

}  // namespace detail

// Resamples one plane (row-major, width x height) to (out_w x out_h).
inline std::vector<float> bicubic_resize_plane(const float* src, int width, int height, int out_w,
                                               int out_h) {
  contract(width >= 1 && height >= 1 && out_w >= 1 && out_h >= 1, "bicubic: extents must be >= 1");
  const auto tx = detail::build_taps(width, out_w);
  const auto ty = detail::build_taps(height, out_h);

  // horizontal pass
  std::vector<double> tmp(static_cast<std::size_t>(out_w) * height);
  for (int y = 0; y < height; ++y) {
    const float* row = src + static_cast<std::size_t>(y) * width;
    for (int x = 0; x < out_w; ++x) {
      const auto& t = tx[static_cast<std::size_t>(x)];
      double acc = 0.0;
      for (std::size_t k = 0; k < t.weights.size(); ++k)
        acc += t.weights[k] * row[detail::clamp_index(t.first + static_cast<int>(k), width)];
      tmp[static_cast<std::size_t>(y) * out_w + x] = acc;
    }
  }
  // vertical pass
  std::vector<float> out(static_cast<std::size_t>(out_w) * out_h);
  for (int y = 0; y < out_h; ++y) {
    const auto& t = ty[static_cast<std::size_t>(y)];
    for (int x = 0; x < out_w; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < t.weights.size(); ++k)
        acc += t.weights[k] *
               tmp[static_cast<std::size_t>(detail::clamp_index(t.first + static_cast<int>(k), height)) * out_w + x];
      out[static_cast<std::size_t>(y) * out_w + x] = static_cast<float>(acc);
    }
  }
  return out;
}

inline FloatImage bicubic_resize(const FloatImage& img, int out_w, int out_h) {
  FloatImage out(out_w, out_h, img.channels);
  for (int c = 0; c < img.channels; ++c) {
    std::vector<float> plane = bicubic_resize_plane(
        &img.data[static_cast<std::size_t>(c) * img.height * img.width], img.width, img.height,
        out_w, out_h);
    std::copy(plane.begin(), plane.end(),
              out.data.begin() + static_cast<std::size_t>(c) * out_h * out_w);
  }
  return out;
}

}  // namespace tsan
