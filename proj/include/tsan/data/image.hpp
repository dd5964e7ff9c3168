#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "tsan/core/tensor.hpp"

namespace tsan {

// 8-bit interleaved RGB image, row-major.
struct ImageRGB {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // 3 * width * height

  ImageRGB() = default;
  ImageRGB(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(3) * w * h, 0) {
    contract(w > 0 && h > 0, "ImageRGB: extents must be positive");
  }

  std::uint8_t& at(int x, int y, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
};

// Planar float image (channel-major), values on the 0-255 scale.
struct FloatImage {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> data;  // channels * height * width, planar

  FloatImage() = default;
  FloatImage(int w, int h, int c)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, 0.0f) {
    contract(w > 0 && h > 0 && c > 0, "FloatImage: extents must be positive");
  }

  float& at(int x, int y, int c) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  float at(int x, int y, int c) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
};

inline FloatImage to_float(const ImageRGB& img) {
  FloatImage out(img.width, img.height, 3);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) out.at(x, y, c) = static_cast<float>(img.at(x, y, c));
  return out;
}

inline ImageRGB to_u8(const FloatImage& img) {
  contract(img.channels == 3, "to_u8: need a 3-channel image");
  ImageRGB out(img.width, img.height);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        const float v = std::round(img.at(x, y, c));
        out.at(x, y, c) = static_cast<std::uint8_t>(v < 0.0f ? 0.0f : (v > 255.0f ? 255.0f : v));
      }
  return out;
}

inline ImageRGB center_crop(const ImageRGB& img, int w, int h) {
  contract(w >= 1 && h >= 1 && w <= img.width && h <= img.height, "center_crop: bad extents");
  ImageRGB out(w, h);
  const int x0 = (img.width - w) / 2;
  const int y0 = (img.height - h) / 2;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(x0 + x, y0 + y, c);
  return out;
}

// The 8 dihedral transforms: bit 0 horizontal flip, bit 1 vertical flip,
// bit 2 transpose (applied last). k=0 is the identity; k=1 (h-flip) is an
// involution.
inline FloatImage dihedral(const FloatImage& img, int k) {
  contract(k >= 0 && k < 8, "dihedral: k must be in [0,8)");
  const bool flip_h = k & 1, flip_v = k & 2, transpose = k & 4;
  const int ow = transpose ? img.height : img.width;
  const int oh = transpose ? img.width : img.height;
  FloatImage out(ow, oh, img.channels);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        int sx = flip_h ? img.width - 1 - x : x;
        int sy = flip_v ? img.height - 1 - y : y;
        if (transpose)
          out.at(y, x, c) = img.at(sx, sy, c);
        else
          out.at(x, y, c) = img.at(sx, sy, c);
      }
  return out;
}

// (N,3,H,W) tensor from a float image, with the dataset RGB mean subtracted.
inline Tensor<float> image_to_tensor(const FloatImage& img, const std::array<float, 3>& mean) {
  contract(img.channels == 3, "image_to_tensor: need 3 channels");
  Tensor<float> t(Shape{1, 3, img.height, img.width});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) t.at4(0, c, y, x) = img.at(x, y, c) - mean[static_cast<std::size_t>(c)];
  return t;
}

inline FloatImage tensor_to_image(const Tensor<float>& t, int n, const std::array<float, 3>& mean) {
  contract(t.shape.rank() == 4 && t.shape[1] == 3, "tensor_to_image: need (N,3,H,W)");
  FloatImage img(t.shape[3], t.shape[2], 3);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < t.shape[2]; ++y)
      for (int x = 0; x < t.shape[3]; ++x)
        img.at(x, y, c) = t.at4(n, c, y, x) + mean[static_cast<std::size_t>(c)];
  return img;
}

}  // namespace tsan
