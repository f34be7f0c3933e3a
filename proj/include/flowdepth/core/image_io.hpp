#pragma once

#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <fstream>

#include "flowdepth/core/image.hpp"
#include "flowdepth/geometry.hpp"

namespace flowdepth {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace io_detail {

inline void put_be32(std::string& s, uint32_t v) {
  s.push_back(static_cast<char>(v >> 24));
  s.push_back(static_cast<char>(v >> 16));
  s.push_back(static_cast<char>(v >> 8));
  s.push_back(static_cast<char>(v));
}

inline uint32_t get_be32(const uint8_t* p) {
  return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | p[3];
}

inline void write_chunk(std::string& out, const char type[5], const std::string& data) {
  put_be32(out, static_cast<uint32_t>(data.size()));
  std::string body = std::string(type, 4) + data;
  out += body;
  uint32_t crc = crc32(0L, reinterpret_cast<const Bytef*>(body.data()),
                       static_cast<uInt>(body.size()));
  put_be32(out, crc);
}

inline std::string zlib_compress(const std::string& raw) {
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::string out(bound, '\0');
  if (compress2(reinterpret_cast<Bytef*>(out.data()), &bound,
                reinterpret_cast<const Bytef*>(raw.data()),
                static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw IoError("png: deflate failed");
  out.resize(bound);
  return out;
}

inline std::string zlib_decompress(const std::string& comp, size_t expect) {
  std::string out(expect, '\0');
  uLongf len = static_cast<uLongf>(expect);
  if (uncompress(reinterpret_cast<Bytef*>(out.data()), &len,
                 reinterpret_cast<const Bytef*>(comp.data()),
                 static_cast<uLong>(comp.size())) != Z_OK ||
      len != expect)
    throw IoError("png: inflate failed");
  return out;
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open file: " + path);
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, const std::string& data) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write file: " + path);
  f.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!f) throw IoError("short write: " + path);
}

}  // namespace io_detail

// ---- PNG (8-bit, RGB color type 2 or grayscale color type 0, filter 0) ----

inline void save_png(const std::string& path, const ImageFrame& img) {
  const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  if (C != 1 && C != 3) throw IoError("save_png: expected 1 or 3 channels");
  std::string raw;
  raw.reserve(static_cast<size_t>(H) * (W * C + 1));
  for (int y = 0; y < H; ++y) {
    raw.push_back('\0');  // filter type 0
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < C; ++c)
        raw.push_back(static_cast<char>(to_u8(img.at(c, y, x))));
  }
  std::string ihdr;
  io_detail::put_be32(ihdr, static_cast<uint32_t>(W));
  io_detail::put_be32(ihdr, static_cast<uint32_t>(H));
  ihdr.push_back(8);                      // bit depth
  ihdr.push_back(C == 3 ? 2 : 0);         // color type
  ihdr.push_back(0);                      // compression
  ihdr.push_back(0);                      // filter
  ihdr.push_back(0);                      // interlace
  std::string out("\x89PNG\r\n\x1a\n", 8);
  io_detail::write_chunk(out, "IHDR", ihdr);
  io_detail::write_chunk(out, "IDAT", io_detail::zlib_compress(raw));
  io_detail::write_chunk(out, "IEND", "");
  io_detail::write_file(path, out);
}

inline ImageFrame load_png(const std::string& path) {
  const std::string buf = io_detail::read_file(path);
  const auto* p = reinterpret_cast<const uint8_t*>(buf.data());
  if (buf.size() < 8 || std::memcmp(p, "\x89PNG\r\n\x1a\n", 8) != 0)
    throw IoError("png: bad signature in " + path);
  size_t pos = 8;
  int W = 0, H = 0, C = 0;
  std::string idat;
  while (pos + 12 <= buf.size()) {
    const uint32_t len = io_detail::get_be32(p + pos);
    const std::string type(buf, pos + 4, 4);
    if (pos + 12 + len > buf.size()) throw IoError("png: truncated chunk in " + path);
    const uint8_t* data = p + pos + 8;
    if (type == "IHDR") {
      W = static_cast<int>(io_detail::get_be32(data));
      H = static_cast<int>(io_detail::get_be32(data + 4));
      if (data[8] != 8) throw IoError("png: only 8-bit supported");
      if (data[9] == 2) C = 3;
      else if (data[9] == 0) C = 1;
      else throw IoError("png: unsupported color type");
      if (data[12] != 0) throw IoError("png: interlaced not supported");
    } else if (type == "IDAT") {
      idat.append(reinterpret_cast<const char*>(data), len);
    } else if (type == "IEND") {
      break;
    }
    pos += 12 + len;
  }
  if (W <= 0 || H <= 0 || C == 0) throw IoError("png: missing IHDR in " + path);
  const int stride = W * C;
  std::string raw = io_detail::zlib_decompress(idat, static_cast<size_t>(H) * (stride + 1));
  // un-filter
  std::vector<uint8_t> img(static_cast<size_t>(H) * stride);
  for (int y = 0; y < H; ++y) {
    const auto* row = reinterpret_cast<const uint8_t*>(raw.data()) +
                      static_cast<size_t>(y) * (stride + 1);
    const uint8_t filter = row[0];
    uint8_t* cur = img.data() + static_cast<size_t>(y) * stride;
    const uint8_t* prev = y > 0 ? cur - stride : nullptr;
    for (int i = 0; i < stride; ++i) {
      const uint8_t rawv = row[1 + i];
      const uint8_t a = i >= C ? cur[i - C] : 0;
      const uint8_t b = prev ? prev[i] : 0;
      const uint8_t cc = (prev && i >= C) ? prev[i - C] : 0;
      switch (filter) {
        case 0: cur[i] = rawv; break;
        case 1: cur[i] = rawv + a; break;
        case 2: cur[i] = rawv + b; break;
        case 3: cur[i] = rawv + static_cast<uint8_t>((a + b) / 2); break;
        case 4: {
          const int pp = a + b - cc;
          const int pa = std::abs(pp - a), pb = std::abs(pp - b), pc = std::abs(pp - cc);
          const uint8_t pred = (pa <= pb && pa <= pc) ? a : (pb <= pc ? b : cc);
          cur[i] = rawv + pred;
          break;
        }
        default: throw IoError("png: unknown filter type");
      }
    }
  }
  ImageFrame out({C, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < C; ++c)
        out.at(c, y, x) = from_u8(img[static_cast<size_t>(y) * stride + x * C + c]);
  return out;
}

inline void save_mask_png(const std::string& path, const Mask& m) {
  ImageFrame img({1, m.shape[0], m.shape[1]});
  for (long i = 0; i < m.numel(); ++i) img[i] = m[i] ? 1.0 : 0.0;
  save_png(path, img);
}

inline Mask load_mask_png(const std::string& path) {
  ImageFrame img = load_png(path);
  if (img.dim(0) != 1) throw IoError("mask png: expected grayscale: " + path);
  Mask m({img.dim(1), img.dim(2)});
  for (long i = 0; i < m.numel(); ++i) m[i] = img[i] > 0.5 ? 1 : 0;
  return m;
}

// ---- PFM (grayscale, little-endian, scale -1.0) ----

inline void save_pfm(const std::string& path, const Tensor& map) {
  if (map.ndim() != 2) throw IoError("save_pfm: expected [H,W]");
  const int H = map.dim(0), W = map.dim(1);
  std::string out = "Pf\n" + std::to_string(W) + " " + std::to_string(H) + "\n-1.0\n";
  // PFM stores rows bottom-to-top
  for (int y = H - 1; y >= 0; --y)
    for (int x = 0; x < W; ++x) {
      const float v = static_cast<float>(map.at(y, x));
      const char* b = reinterpret_cast<const char*>(&v);
      out.append(b, 4);
    }
  io_detail::write_file(path, out);
}

inline Tensor load_pfm(const std::string& path) {
  const std::string buf = io_detail::read_file(path);
  size_t pos = 0;
  auto token = [&]() -> std::string {
    while (pos < buf.size() && std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
    size_t start = pos;
    while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
    return buf.substr(start, pos - start);
  };
  if (token() != "Pf") throw IoError("pfm: expected grayscale 'Pf' header in " + path);
  const int W = std::stoi(token());
  const int H = std::stoi(token());
  const double scale = std::stod(token());
  if (scale >= 0) throw IoError("pfm: expected little-endian (negative scale) in " + path);
  ++pos;  // single whitespace after scale
  if (buf.size() - pos < static_cast<size_t>(H) * W * 4)
    throw IoError("pfm: truncated data in " + path);
  Tensor out({H, W});
  const char* data = buf.data() + pos;
  for (int y = H - 1; y >= 0; --y)
    for (int x = 0; x < W; ++x) {
      float v;
      std::memcpy(&v, data, 4);
      data += 4;
      out.at(y, x) = v;
    }
  return out;
}

// ---- Middlebury .flo ----

inline void save_flo(const std::string& path, const FlowField& flow) {
  const int H = flow.height(), W = flow.width();
  std::string out;
  const float magic = 202021.25f;
  const int32_t wi = W, hi = H;
  out.append(reinterpret_cast<const char*>(&magic), 4);
  out.append(reinterpret_cast<const char*>(&wi), 4);
  out.append(reinterpret_cast<const char*>(&hi), 4);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const float u = static_cast<float>(flow.u(y, x));
      const float v = static_cast<float>(flow.v(y, x));
      out.append(reinterpret_cast<const char*>(&u), 4);
      out.append(reinterpret_cast<const char*>(&v), 4);
    }
  io_detail::write_file(path, out);
}

inline FlowField load_flo(const std::string& path) {
  const std::string buf = io_detail::read_file(path);
  if (buf.size() < 12) throw IoError("flo: truncated header in " + path);
  float magic;
  int32_t W, H;
  std::memcpy(&magic, buf.data(), 4);
  std::memcpy(&W, buf.data() + 4, 4);
  std::memcpy(&H, buf.data() + 8, 4);
  if (magic != 202021.25f) throw IoError("flo: bad magic in " + path);
  if (W <= 0 || H <= 0) throw IoError("flo: bad dimensions in " + path);
  if (buf.size() < 12 + static_cast<size_t>(W) * H * 8)
    throw IoError("flo: truncated data in " + path);
  FlowField flow(H, W);
  const char* data = buf.data() + 12;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      float u, v;
      std::memcpy(&u, data, 4);
      std::memcpy(&v, data + 4, 4);
      data += 8;
      flow.u(y, x) = u;
      flow.v(y, x) = v;
    }
  return flow;
}

}  // namespace flowdepth
