#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "tsan/data/image.hpp"

namespace tsan {

// BT.601 luma, full-swing RGB to studio-swing Y:
//   Y = 16 + (65.481 R + 128.553 G + 24.966 B) / 255,  inputs in [0,255].
struct YPlane {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  float at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
};

inline YPlane rgb_to_y(const FloatImage& img) {
  contract(img.channels == 3, "rgb_to_y: need a 3-channel image");
  YPlane p;
  p.width = img.width;
  p.height = img.height;
  p.data.resize(static_cast<std::size_t>(img.width) * img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      p.data[static_cast<std::size_t>(y) * img.width + x] =
          16.0f + (65.481f * img.at(x, y, 0) + 128.553f * img.at(x, y, 1) +
                   24.966f * img.at(x, y, 2)) /
                      255.0f;
  return p;
}

// Identical planes return the documented 100 dB cap.
constexpr double kPsnrCap = 100.0;

inline double psnr(const YPlane& a, const YPlane& b, int shave) {
  contract(a.width == b.width && a.height == b.height, "psnr: extent mismatch");
  contract(shave >= 0 && a.width > 2 * shave && a.height > 2 * shave,
           "psnr: extents must exceed twice the shave width");
  double mse = 0.0;
  std::int64_t n = 0;
  for (int y = shave; y < a.height - shave; ++y)
    for (int x = shave; x < a.width - shave; ++x) {
      const double d = static_cast<double>(a.at(x, y)) - b.at(x, y);
      mse += d * d;
      ++n;
    }
  mse /= static_cast<double>(n);
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / mse));
}

// Mean local SSIM: 11x11 Gaussian window, sigma 1.5, K1=0.01, K2=0.03,
// L=255, valid-mode windows over the shaved interior.
inline double ssim(const YPlane& a, const YPlane& b, int shave) {
  contract(a.width == b.width && a.height == b.height, "ssim: extent mismatch");
  const int w = a.width - 2 * shave, h = a.height - 2 * shave;
  contract(w >= 11 && h >= 11, "ssim: image too small after shaving (need >= 11)");

  static const std::vector<double> win = [] {
    std::vector<double> k(121);
    double sum = 0;
    for (int i = 0; i < 11; ++i)
      for (int j = 0; j < 11; ++j) {
        const double dy = i - 5, dx = j - 5;
        k[static_cast<std::size_t>(i * 11 + j)] = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
        sum += k[static_cast<std::size_t>(i * 11 + j)];
      }
    for (double& v : k) v /= sum;
    return k;
  }();

  const double c1 = (0.01 * 255) * (0.01 * 255);
  const double c2 = (0.03 * 255) * (0.03 * 255);
  double total = 0.0;
  std::int64_t count = 0;
  for (int y = 0; y + 11 <= h; ++y)
    for (int x = 0; x + 11 <= w; ++x) {
      double mu1 = 0, mu2 = 0, s11 = 0, s22 = 0, s12 = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          const double k = win[static_cast<std::size_t>(i * 11 + j)];
          const double v1 = a.at(shave + x + j, shave + y + i);
          const double v2 = b.at(shave + x + j, shave + y + i);
          mu1 += k * v1;
          mu2 += k * v2;
          s11 += k * v1 * v1;
          s22 += k * v2 * v2;
          s12 += k * v1 * v2;
        }
      const double var1 = s11 - mu1 * mu1;
      const double var2 = s22 - mu2 * mu2;
      const double cov = s12 - mu1 * mu2;
      total += ((2 * mu1 * mu2 + c1) * (2 * cov + c2)) /
               ((mu1 * mu1 + mu2 * mu2 + c1) * (var1 + var2 + c2));
      ++count;
    }
  return total / static_cast<double>(count);
}

// Per-image and aggregate PSNR/SSIM rows.
struct EvalReport {
  struct Row {
    std::string name;
    double psnr_db = 0;
    double ssim = 0;
  };
  std::vector<Row> rows;
  int scale = 0;
  int shave = 0;

  double mean_psnr() const {
    double s = 0;
    for (const auto& r : rows) s += r.psnr_db;
    return rows.empty() ? 0.0 : s / static_cast<double>(rows.size());
  }
  double mean_ssim() const {
    double s = 0;
    for (const auto& r : rows) s += r.ssim;
    return rows.empty() ? 0.0 : s / static_cast<double>(rows.size());
  }

  // CSV: one (name,psnr,ssim) row per image plus a mean summary line.
  void write_csv(const std::string& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError(path + ": cannot write report");
    f << "name,psnr,ssim\n";
    char buf[160];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof(buf), "%s,%.4f,%.6f\n", r.name.c_str(), r.psnr_db, r.ssim);
      f << buf;
    }
    std::snprintf(buf, sizeof(buf), "mean,%.4f,%.6f\n", mean_psnr(), mean_ssim());
    f << buf;
  }
};

}  // namespace tsan
