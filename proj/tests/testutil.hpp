#pragma once

// Shared test helpers: independent oracles and tensor generators. Everything
// here stays decoupled from the library's compute paths so the tests remain a
// second route to the same answers.

#include <cmath>
#include <cstdint>
#include <vector>

#include "tsan/core/rng.hpp"
#include "tsan/core/tensor.hpp"

namespace testutil {

template <typename T>
tsan::Tensor<T> rand_tensor(tsan::Rng& rng, const tsan::Shape& s, double lo = -1.0,
                            double hi = 1.0) {
  tsan::Tensor<T> t(s);
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

// Brute-force direct-summation convolution: quadruple loop, zero padding,
// stride 1. The reference the fast path is checked against.
template <typename T>
tsan::Tensor<T> conv_oracle(const tsan::Tensor<T>& x, const tsan::Tensor<T>& w,
                            const tsan::Tensor<T>& b, int dh, int dw, int ph, int pw,
                            int groups = 1) {
  const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const int Cout = w.shape[0], Cg = w.shape[1], kh = w.shape[2], kw = w.shape[3];
  const int Ho = H + 2 * ph - dh * (kh - 1);
  const int Wo = W + 2 * pw - dw * (kw - 1);
  const int Cog = Cout / groups;
  tsan::Tensor<T> y(tsan::Shape{N, Cout, Ho, Wo});
  for (int n = 0; n < N; ++n)
    for (int co = 0; co < Cout; ++co) {
      const int grp = co / Cog;
      for (int ho = 0; ho < Ho; ++ho)
        for (int wo = 0; wo < Wo; ++wo) {
          double acc = static_cast<double>(b.data[static_cast<std::size_t>(co)]);
          for (int ci = 0; ci < Cg; ++ci)
            for (int i = 0; i < kh; ++i)
              for (int j = 0; j < kw; ++j) {
                const int hi = ho - ph + i * dh;
                const int wi = wo - pw + j * dw;
                if (hi < 0 || hi >= H || wi < 0 || wi >= W) continue;
                acc += static_cast<double>(x.at4(n, grp * Cg + ci, hi, wi)) *
                       static_cast<double>(w.at4(co, ci, i, j));
              }
          y.at4(n, co, ho, wo) = static_cast<T>(acc);
        }
    }
  (void)C;
  return y;
}

template <typename T>
double max_abs_diff(const tsan::Tensor<T>& a, const tsan::Tensor<T>& b) {
  if (!(a.shape == b.shape)) return 1e30;
  double m = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i])));
  return m;
}

}  // namespace testutil

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "tsan/data/image.hpp"

namespace testutil {

// Unique scratch directory, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("tsan_" + tag + "_" + std::to_string(rd()) + std::to_string(rd() % 1000));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file_bytes(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

// Synthetic HR images with hard edges and repeating texture: content bicubic
// interpolation handles poorly but a small network can memorize. Blocky
// palette regions, one diagonal stripe field, and a mild gradient.
inline tsan::ImageRGB synthetic_image(int width, int height, std::uint64_t seed) {
  tsan::Rng rng(seed);
  const int levels[4] = {30, 100, 170, 240};
  const int block = 8;
  tsan::ImageRGB img(width, height);
  const int bw = (width + block - 1) / block;
  const int bh = (height + block - 1) / block;
  std::vector<std::array<int, 3>> palette(static_cast<std::size_t>(bw * bh));
  for (auto& p : palette)
    for (int c = 0; c < 3; ++c) p[static_cast<std::size_t>(c)] = levels[rng.uniform_int(4)];
  const int stripe_phase = rng.uniform_int(8);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const auto& base = palette[static_cast<std::size_t>((y / block) * bw + x / block)];
      for (int c = 0; c < 3; ++c) {
        int v = base[static_cast<std::size_t>(c)];
        if (((x + y + stripe_phase) / 4) % 2 == 0) v = v > 127 ? v - 60 : v + 60;
        v += (x * 20) / width - 10;
        img.at(x, y, c) = static_cast<std::uint8_t>(v < 0 ? 0 : (v > 255 ? 255 : v));
      }
    }
  return img;
}

}  // namespace testutil
