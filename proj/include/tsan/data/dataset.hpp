#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsan/core/rng.hpp"
#include "tsan/data/bicubic.hpp"
#include "tsan/data/png_io.hpp"

namespace tsan {

// Dataset manifest: pairs of HR/LR paths plus the corpus RGB mean. Stored as
// UTF-8 JSON {scale, rgb_mean:[r,g,b], pairs:[{hr,lr}]}, paths relative to
// the manifest file.
struct DatasetManifest {
  int scale = 2;
  std::array<float, 3> rgb_mean = {0, 0, 0};
  struct Pair {
    std::string hr;
    std::string lr;
  };
  std::vector<Pair> pairs;
  std::string notes;
  std::filesystem::path base_dir;  // directory the relative paths resolve against

  std::filesystem::path hr_path(std::size_t i) const { return base_dir / pairs[i].hr; }
  std::filesystem::path lr_path(std::size_t i) const { return base_dir / pairs[i].lr; }
};

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  nlohmann::json j;
  j["scale"] = m.scale;
  j["rgb_mean"] = {m.rgb_mean[0], m.rgb_mean[1], m.rgb_mean[2]};
  j["pairs"] = nlohmann::json::array();
  for (const auto& p : m.pairs) j["pairs"].push_back({{"hr", p.hr}, {"lr", p.lr}});
  if (!m.notes.empty()) j["notes"] = m.notes;
  std::ofstream f(path);
  if (!f) throw IoError(path.string() + ": cannot write manifest");
  f << j.dump(2) << "\n";
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError(path.string() + ": cannot open manifest");
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": malformed manifest JSON: " + e.what());
  }
  DatasetManifest m;
  m.scale = j.at("scale").get<int>();
  auto mean = j.at("rgb_mean").get<std::vector<float>>();
  contract(mean.size() == 3, "manifest: rgb_mean must have 3 entries");
  std::copy(mean.begin(), mean.end(), m.rgb_mean.begin());
  for (const auto& p : j.at("pairs")) m.pairs.push_back({p.at("hr"), p.at("lr")});
  m.notes = j.value("notes", "");
  m.base_dir = path.parent_path();
  return m;
}

// Builds LR/HR training pairs from a directory of HR PNGs: center-crop each
// HR to a multiple of the scale (so r * LR extent = HR extent exactly),
// synthesize LR by antialiased bicubic downscaling, record the corpus mean
// over the cropped HR images.
inline DatasetManifest make_dataset(const std::filesystem::path& hr_dir, int scale,
                                    const std::filesystem::path& out_dir) {
  contract(scale >= 2 && scale <= 4, "make_dataset: scale must be in {2,3,4}");
  if (!std::filesystem::is_directory(hr_dir))
    throw IoError(hr_dir.string() + ": not a directory");
  std::vector<std::filesystem::path> inputs;
  for (const auto& e : std::filesystem::directory_iterator(hr_dir))
    if (e.is_regular_file() && e.path().extension() == ".png") inputs.push_back(e.path());
  std::sort(inputs.begin(), inputs.end());
  if (inputs.empty()) throw IoError(hr_dir.string() + ": no PNG files found");

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (!std::filesystem::is_directory(out_dir))
    throw IoError(out_dir.string() + ": cannot create output directory");

  DatasetManifest m;
  m.scale = scale;
  m.base_dir = out_dir;
  m.notes = "pairs synthesized by antialiased bicubic (Keys a=-0.5) downscaling";
  double sum[3] = {0, 0, 0};
  std::int64_t count = 0;
  for (const auto& in : inputs) {
    ImageRGB hr = read_png(in.string());
    const int cw = hr.width / scale * scale;
    const int ch = hr.height / scale * scale;
    contract(cw >= scale && ch >= scale, in.string() + ": image smaller than the scale factor");
    hr = center_crop(hr, cw, ch);
    FloatImage hrf = to_float(hr);
    FloatImage lrf = bicubic_resize(hrf, cw / scale, ch / scale);

    const std::string stem = in.stem().string();
    const std::string hr_name = stem + "_hr.png";
    const std::string lr_name = stem + "_lr.png";
    write_png(hr, (out_dir / hr_name).string());
    write_png(to_u8(lrf), (out_dir / lr_name).string());
    m.pairs.push_back({hr_name, lr_name});

    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < ch; ++y)
        for (int x = 0; x < cw; ++x) sum[c] += hrf.at(x, y, c);
    count += static_cast<std::int64_t>(cw) * ch;
  }
  for (int c = 0; c < 3; ++c)
    m.rgb_mean[static_cast<std::size_t>(c)] = static_cast<float>(sum[c] / static_cast<double>(count));
  save_manifest(m, out_dir / "manifest.json");
  return m;
}

// One LR/HR training patch pair; hr is the exact scale-aligned window of the
// LR window's source location.
struct PatchPair {
  FloatImage lr;
  FloatImage hr;
  int augmentation = 0;  // dihedral index actually applied (0 = none)
};

// Loads every pair into memory and serves random aligned crops. Pairs whose
// LR extent is below the patch size are skipped with a diagnostic.
class PatchSampler {
 public:
  PatchSampler(const DatasetManifest& m, int lr_patch) : scale_(m.scale), patch_(lr_patch) {
    contract(lr_patch >= 1, "PatchSampler: patch size must be positive");
    for (std::size_t i = 0; i < m.pairs.size(); ++i) {
      FloatImage lr = to_float(read_png(m.lr_path(i).string()));
      FloatImage hr = to_float(read_png(m.hr_path(i).string()));
      contract(hr.width == lr.width * scale_ && hr.height == lr.height * scale_,
               m.pairs[i].lr + ": LR extents must be HR extents / scale");
      if (lr.width < lr_patch || lr.height < lr_patch) {
        std::cerr << "[dataset] skipping " << m.pairs[i].lr << ": " << lr.width << "x" << lr.height
                  << " smaller than patch " << lr_patch << "\n";
        continue;
      }
      lr_.push_back(std::move(lr));
      hr_.push_back(std::move(hr));
    }
    contract(!lr_.empty(), "PatchSampler: no usable pairs (all below patch size)");
  }

  std::size_t size() const { return lr_.size(); }
  int scale() const { return scale_; }
  int patch() const { return patch_; }
  const FloatImage& lr_image(std::size_t i) const { return lr_[i]; }
  const FloatImage& hr_image(std::size_t i) const { return hr_[i]; }

  // Uniform image, window position, and (optionally) one of the 8 dihedral
  // transforms applied identically to both patches.
  PatchPair sample(Rng& rng, bool augment) const {
    const int idx = rng.uniform_int(static_cast<int>(lr_.size()));
    const FloatImage& lr = lr_[static_cast<std::size_t>(idx)];
    const FloatImage& hr = hr_[static_cast<std::size_t>(idx)];
    const int x0 = rng.uniform_int(lr.width - patch_ + 1);
    const int y0 = rng.uniform_int(lr.height - patch_ + 1);

    PatchPair out;
    out.lr = crop(lr, x0, y0, patch_);
    out.hr = crop(hr, x0 * scale_, y0 * scale_, patch_ * scale_);
    if (augment) {
      out.augmentation = rng.uniform_int(8);
      if (out.augmentation != 0) {
        out.lr = dihedral(out.lr, out.augmentation);
        out.hr = dihedral(out.hr, out.augmentation);
      }
    }
    return out;
  }

 private:
  static FloatImage crop(const FloatImage& img, int x0, int y0, int size) {
    FloatImage out(size, size, img.channels);
    for (int c = 0; c < img.channels; ++c)
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) out.at(x, y, c) = img.at(x0 + x, y0 + y, c);
    return out;
  }

  int scale_;
  int patch_;
  std::vector<FloatImage> lr_;
  std::vector<FloatImage> hr_;
};

// Stacks `batch` sampled patch pairs into mean-subtracted (B,3,p,p) and
// (B,3,rp,rp) tensors.
inline void sample_batch(const PatchSampler& sampler, Rng& rng, int batch, bool augment,
                         const std::array<float, 3>& mean, Tensor<float>& lr_out,
                         Tensor<float>& hr_out) {
  const int p = sampler.patch();
  const int r = sampler.scale();
  lr_out = Tensor<float>(Shape{batch, 3, p, p});
  hr_out = Tensor<float>(Shape{batch, 3, r * p, r * p});
  for (int b = 0; b < batch; ++b) {
    PatchPair pair = sampler.sample(rng, augment);
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x)
          lr_out.at4(b, c, y, x) = pair.lr.at(x, y, c) - mean[static_cast<std::size_t>(c)];
      for (int y = 0; y < r * p; ++y)
        for (int x = 0; x < r * p; ++x)
          hr_out.at4(b, c, y, x) = pair.hr.at(x, y, c) - mean[static_cast<std::size_t>(c)];
    }
  }
}

}  // namespace tsan
