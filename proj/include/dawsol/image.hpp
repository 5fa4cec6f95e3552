// Image I/O: binary PPM (P6) for RGB images, binary PGM (P5) for masks.
// Images travel through the library as 3 x (H*W) matrices with values in
// [0, 1], row-major spatial flattening.
#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "dawsol/types.hpp"

namespace dawsol {

struct Image {
  Matrix pixels;  // 3 x (H*W), values in [0, 1]
  int h = 0, w = 0;
};

namespace detail {

inline void skip_pnm_whitespace(std::istream& is) {
  int c = is.peek();
  while (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '#') {
    if (c == '#') {
      std::string line;
      std::getline(is, line);
    } else {
      is.get();
    }
    c = is.peek();
  }
}

inline int read_pnm_int(std::istream& is) {
  skip_pnm_whitespace(is);
  int v = 0;
  if (!(is >> v)) throw IoError("PNM: malformed header");
  return v;
}

}  // namespace detail

inline void write_ppm(const Image& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image '" + path + "'");
  out << "P6\n" << img.w << " " << img.h << "\n255\n";
  std::vector<std::uint8_t> buf(static_cast<size_t>(img.h) * img.w * 3);
  for (long p = 0; p < static_cast<long>(img.h) * img.w; ++p)
    for (int c = 0; c < 3; ++c) {
      double v = img.pixels(c, p);
      v = v < 0 ? 0 : (v > 1 ? 1 : v);
      buf[p * 3 + c] = static_cast<std::uint8_t>(v * 255.0 + 0.5);
    }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

namespace detail {

inline Image parse_ppm(std::istream& in, const std::string& path) {
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P6") throw IoError("'" + path + "': not a binary PPM (P6)");
  const int w = detail::read_pnm_int(in);
  const int h = detail::read_pnm_int(in);
  const int maxval = detail::read_pnm_int(in);
  if (maxval != 255) throw IoError("'" + path + "': unsupported maxval");
  in.get();  // single whitespace after header
  std::vector<std::uint8_t> buf(static_cast<size_t>(h) * w * 3);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!in) throw IoError("'" + path + "': truncated pixel data");
  Image img;
  img.h = h;
  img.w = w;
  img.pixels.resize(3, static_cast<long>(h) * w);
  for (long p = 0; p < static_cast<long>(h) * w; ++p)
    for (int c = 0; c < 3; ++c) img.pixels(c, p) = buf[p * 3 + c] / 255.0;
  return img;
}

// Whole-file read memoized by path. Callers must only use this for files
// that stay immutable for the lifetime of the process (dataset images and
// masks); the bytes are never re-read from disk.
inline const std::string& cached_file_bytes(const std::string& path, const char* what) {
  static std::unordered_map<std::string, std::string> cache;
  auto it = cache.find(path);
  if (it != cache.end()) return it->second;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(std::string("cannot open ") + what + " '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return cache.emplace(path, ss.str()).first->second;
}

}  // namespace detail

inline Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image '" + path + "'");
  return detail::parse_ppm(in, path);
}

// read_ppm over the process-wide byte cache; for immutable dataset files.
inline Image read_ppm_cached(const std::string& path) {
  std::istringstream in(detail::cached_file_bytes(path, "image"));
  return detail::parse_ppm(in, path);
}

inline void write_pgm_mask(const BinaryMask& mask, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write mask '" + path + "'");
  out << "P5\n" << mask.w << " " << mask.h << "\n255\n";
  std::vector<std::uint8_t> buf(mask.data.size());
  for (size_t i = 0; i < mask.data.size(); ++i) buf[i] = mask.data[i] ? 255 : 0;
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

namespace detail {

inline BinaryMask parse_pgm_mask(std::istream& in, const std::string& path) {
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P5") throw IoError("'" + path + "': not a binary PGM (P5)");
  const int w = detail::read_pnm_int(in);
  const int h = detail::read_pnm_int(in);
  const int maxval = detail::read_pnm_int(in);
  if (maxval != 255) throw IoError("'" + path + "': unsupported maxval");
  in.get();
  std::vector<std::uint8_t> buf(static_cast<size_t>(h) * w);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!in) throw IoError("'" + path + "': truncated pixel data");
  BinaryMask mask;
  mask.h = h;
  mask.w = w;
  mask.data.resize(buf.size());
  for (size_t i = 0; i < buf.size(); ++i) mask.data[i] = buf[i] >= 128 ? 1 : 0;
  return mask;
}

}  // namespace detail

inline BinaryMask read_pgm_mask(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open mask '" + path + "'");
  return detail::parse_pgm_mask(in, path);
}

// read_pgm_mask over the process-wide byte cache; for immutable dataset files.
inline BinaryMask read_pgm_mask_cached(const std::string& path) {
  std::istringstream in(detail::cached_file_bytes(path, "mask"));
  return detail::parse_pgm_mask(in, path);
}

}  // namespace dawsol
