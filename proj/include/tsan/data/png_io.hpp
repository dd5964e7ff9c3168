#pragma once

// Minimal PNG reader/writer backed by zlib. Supports what the pipeline
// needs: 8-bit depth, color types 0 (gray, expanded to RGB), 2 (RGB),
// 4 (gray+alpha) and 6 (RGBA), alpha dropped, no interlacing. Writes color
// type 2 with filter 0 scanlines.

#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "tsan/data/image.hpp"

namespace tsan {

namespace detail {

inline std::uint32_t read_be32(const std::uint8_t* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | p[3];
}

inline void push_be32(std::vector<std::uint8_t>& v, std::uint32_t x) {
  v.push_back(static_cast<std::uint8_t>(x >> 24));
  v.push_back(static_cast<std::uint8_t>(x >> 16));
  v.push_back(static_cast<std::uint8_t>(x >> 8));
  v.push_back(static_cast<std::uint8_t>(x));
}

inline int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

inline std::vector<std::uint8_t> zlib_inflate(const std::vector<std::uint8_t>& in,
                                              std::size_t expected, const std::string& path) {
  std::vector<std::uint8_t> out(expected);
  z_stream zs;
  std::memset(&zs, 0, sizeof(zs));
  if (inflateInit(&zs) != Z_OK) throw IoError(path + ": inflate init failed");
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  inflateEnd(&zs);
  if (rc != Z_STREAM_END || zs.avail_out != 0)
    throw IoError(path + ": malformed or truncated PNG pixel stream");
  return out;
}

}  // namespace detail

inline ImageRGB read_png(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(path + ": cannot open file");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  static const std::uint8_t kSig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kSig, 8) != 0)
    throw IoError(path + ": not a PNG file");

  int width = 0, height = 0, bit_depth = 0, color_type = 0;
  std::vector<std::uint8_t> idat;
  bool saw_ihdr = false, saw_iend = false;
  std::size_t pos = 8;
  while (pos + 8 <= bytes.size() && !saw_iend) {
    const std::uint32_t len = detail::read_be32(&bytes[pos]);
    if (pos + 12 + len > bytes.size()) throw IoError(path + ": truncated chunk");
    const char* type = reinterpret_cast<const char*>(&bytes[pos + 4]);
    const std::uint8_t* data = &bytes[pos + 8];
    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw IoError(path + ": bad IHDR");
      width = static_cast<int>(detail::read_be32(data));
      height = static_cast<int>(detail::read_be32(data + 4));
      bit_depth = data[8];
      color_type = data[9];
      if (data[10] != 0 || data[11] != 0) throw IoError(path + ": unsupported compression/filter");
      if (data[12] != 0) throw IoError(path + ": interlaced PNG not supported");
      if (bit_depth != 8) throw IoError(path + ": unsupported bit depth (need 8)");
      if (color_type != 0 && color_type != 2 && color_type != 4 && color_type != 6)
        throw IoError(path + ": unsupported color type (palette PNG not supported)");
      if (width <= 0 || height <= 0) throw IoError(path + ": bad image extents");
      saw_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      saw_iend = true;
    }
    pos += 12 + len;
  }
  if (!saw_ihdr || !saw_iend || idat.empty()) throw IoError(path + ": missing PNG chunks");

  const int bpp = color_type == 0 ? 1 : (color_type == 2 ? 3 : (color_type == 4 ? 2 : 4));
  const std::size_t rowbytes = static_cast<std::size_t>(width) * bpp;
  std::vector<std::uint8_t> raw =
      detail::zlib_inflate(idat, (rowbytes + 1) * static_cast<std::size_t>(height), path);

  // undo per-scanline filters in place
  std::vector<std::uint8_t> prev(rowbytes, 0);
  ImageRGB img(width, height);
  for (int y = 0; y < height; ++y) {
    std::uint8_t* row = &raw[(rowbytes + 1) * static_cast<std::size_t>(y)];
    const int filter = row[0];
    std::uint8_t* cur = row + 1;
    switch (filter) {
      case 0: break;
      case 1:
        for (std::size_t i = bpp; i < rowbytes; ++i) cur[i] = static_cast<std::uint8_t>(cur[i] + cur[i - bpp]);
        break;
      case 2:
        for (std::size_t i = 0; i < rowbytes; ++i) cur[i] = static_cast<std::uint8_t>(cur[i] + prev[i]);
        break;
      case 3:
        for (std::size_t i = 0; i < rowbytes; ++i) {
          const int left = i >= static_cast<std::size_t>(bpp) ? cur[i - bpp] : 0;
          cur[i] = static_cast<std::uint8_t>(cur[i] + ((left + prev[i]) >> 1));
        }
        break;
      case 4:
        for (std::size_t i = 0; i < rowbytes; ++i) {
          const int left = i >= static_cast<std::size_t>(bpp) ? cur[i - bpp] : 0;
          const int upleft = i >= static_cast<std::size_t>(bpp) ? prev[i - bpp] : 0;
          cur[i] = static_cast<std::uint8_t>(cur[i] + detail::paeth(left, prev[i], upleft));
        }
        break;
      default: throw IoError(path + ": unknown scanline filter");
    }
    std::memcpy(prev.data(), cur, rowbytes);
    for (int x = 0; x < width; ++x) {
      const std::uint8_t* px = cur + static_cast<std::size_t>(x) * bpp;
      switch (color_type) {
        case 0: img.at(x, y, 0) = img.at(x, y, 1) = img.at(x, y, 2) = px[0]; break;
        case 2:
          img.at(x, y, 0) = px[0];
          img.at(x, y, 1) = px[1];
          img.at(x, y, 2) = px[2];
          break;
        case 4: img.at(x, y, 0) = img.at(x, y, 1) = img.at(x, y, 2) = px[0]; break;
        case 6:
          img.at(x, y, 0) = px[0];
          img.at(x, y, 1) = px[1];
          img.at(x, y, 2) = px[2];
          break;
      }
    }
  }
  return img;
}

inline void write_png(const ImageRGB& img, const std::string& path) {
  const std::size_t rowbytes = static_cast<std::size_t>(img.width) * 3;
  std::vector<std::uint8_t> raw((rowbytes + 1) * static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y) {
    std::uint8_t* row = &raw[(rowbytes + 1) * static_cast<std::size_t>(y)];
    row[0] = 0;  // filter: None
    std::memcpy(row + 1, &img.pixels[static_cast<std::size_t>(y) * rowbytes], rowbytes);
  }
  uLongf comp_cap = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> comp(comp_cap);
  if (compress2(comp.data(), &comp_cap, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw IoError(path + ": deflate failed");
  comp.resize(comp_cap);

  std::vector<std::uint8_t> out;
  static const std::uint8_t kSig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  out.insert(out.end(), kSig, kSig + 8);
  auto chunk = [&](const char* type, const std::vector<std::uint8_t>& data) {
    detail::push_be32(out, static_cast<std::uint32_t>(data.size()));
    std::vector<std::uint8_t> body(type, type + 4);
    body.insert(body.end(), data.begin(), data.end());
    out.insert(out.end(), body.begin(), body.end());
    detail::push_be32(out,
                      static_cast<std::uint32_t>(crc32(0, body.data(), static_cast<uInt>(body.size()))));
  };
  std::vector<std::uint8_t> ihdr;
  detail::push_be32(ihdr, static_cast<std::uint32_t>(img.width));
  detail::push_be32(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // color type: RGB
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  chunk("IHDR", ihdr);
  chunk("IDAT", comp);
  chunk("IEND", {});

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError(path + ": cannot open file for writing");
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError(path + ": write failed");
}

}  // namespace tsan
