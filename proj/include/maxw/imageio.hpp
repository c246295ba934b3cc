#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "maxw/error.hpp"

namespace maxw {

// Interleaved 8-bit RGB, row-major.
struct ImageU8 {
  int height = 0;
  int width = 0;
  std::vector<unsigned char> rgb;
};

// Per-pixel mask identifiers; 0 means void.
struct MaskIdMap {
  int height = 0;
  int width = 0;
  std::vector<std::uint16_t> ids;
};

namespace detail {

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "' for reading");
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to '" + path + "'");
}

// netpbm header scanner: whitespace- and #-comment-aware, errors carry byte
// offsets into the file.
class PnmScanner {
 public:
  PnmScanner(const std::string& bytes, const std::string& path) : bytes_(bytes), path_(path) {}

  std::size_t offset() const { return pos_; }

  void expect_magic(const char* magic) {
    if (bytes_.size() < 2 || bytes_.compare(0, 2, magic) != 0)
      throw ParseError(path_ + ": expected " + magic + " magic at byte 0");
    pos_ = 2;
  }

  int next_uint(const char* what, long long max_value) {
    skip_separators();
    if (pos_ >= bytes_.size())
      throw ParseError(path_ + ": missing " + what + " at byte " + std::to_string(pos_));
    if (!is_digit(bytes_[pos_]))
      throw ParseError(path_ + ": malformed " + what + " at byte " + std::to_string(pos_));
    long long v = 0;
    while (pos_ < bytes_.size() && is_digit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > max_value)
        throw ParseError(path_ + ": " + what + " too large at byte " + std::to_string(pos_));
      ++pos_;
    }
    return static_cast<int>(v);
  }

  // exactly one whitespace char separates the header from raster data
  void begin_raster() {
    if (pos_ >= bytes_.size() || !is_space(bytes_[pos_]))
      throw ParseError(path_ + ": expected whitespace before raster at byte " +
                       std::to_string(pos_));
    ++pos_;
  }

  const unsigned char* raster(std::size_t n, const char* what) {
    if (pos_ + n > bytes_.size())
      throw ParseError(path_ + ": truncated " + what + " raster at byte " +
                       std::to_string(bytes_.size()) + " (need " +
                       std::to_string(pos_ + n) + " bytes)");
    const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes_.data()) + pos_;
    pos_ += n;
    return p;
  }

 private:
  static bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }
  static bool is_digit(char c) { return c >= '0' && c <= '9'; }

  void skip_separators() {
    while (pos_ < bytes_.size()) {
      if (is_space(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::string& bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline void write_ppm(const std::string& path, const ImageU8& img) {
  if (img.rgb.size() != static_cast<std::size_t>(img.height) * img.width * 3)
    throw ContractError("image buffer does not match its dimensions");
  std::string buf = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) +
                    "\n255\n";
  buf.append(reinterpret_cast<const char*>(img.rgb.data()), img.rgb.size());
  detail::write_file_bytes(path, buf);
}

inline ImageU8 read_ppm(const std::string& path) {
  const std::string bytes = detail::read_file_bytes(path);
  detail::PnmScanner sc(bytes, path);
  sc.expect_magic("P6");
  ImageU8 img;
  img.width = sc.next_uint("width", 1 << 20);
  img.height = sc.next_uint("height", 1 << 20);
  const int maxval = sc.next_uint("maxval", 65535);
  if (maxval != 255)
    throw ParseError(path + ": unsupported maxval " + std::to_string(maxval) + " at byte " +
                     std::to_string(sc.offset()) + " (expected 255)");
  if (img.width == 0 || img.height == 0) throw ParseError(path + ": zero image dimension");
  sc.begin_raster();
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height * 3;
  const unsigned char* p = sc.raster(n, "PPM");
  img.rgb.assign(p, p + n);
  return img;
}

// 16-bit big-endian P5, the netpbm convention for maxval > 255.
inline void write_pgm16(const std::string& path, const MaskIdMap& map) {
  if (map.ids.size() != static_cast<std::size_t>(map.height) * map.width)
    throw ContractError("mask-id buffer does not match its dimensions");
  std::string buf = "P5\n" + std::to_string(map.width) + " " + std::to_string(map.height) +
                    "\n65535\n";
  for (std::uint16_t v : map.ids) {
    buf.push_back(static_cast<char>(v >> 8));
    buf.push_back(static_cast<char>(v & 0xff));
  }
  detail::write_file_bytes(path, buf);
}

inline MaskIdMap read_pgm16(const std::string& path) {
  const std::string bytes = detail::read_file_bytes(path);
  detail::PnmScanner sc(bytes, path);
  sc.expect_magic("P5");
  MaskIdMap map;
  map.width = sc.next_uint("width", 1 << 20);
  map.height = sc.next_uint("height", 1 << 20);
  const int maxval = sc.next_uint("maxval", 1 << 20);
  if (maxval != 65535)
    throw ParseError(path + ": unsupported maxval " + std::to_string(maxval) + " at byte " +
                     std::to_string(sc.offset()) + " (expected 65535)");
  if (map.width == 0 || map.height == 0) throw ParseError(path + ": zero image dimension");
  sc.begin_raster();
  const std::size_t n = static_cast<std::size_t>(map.width) * map.height;
  const unsigned char* p = sc.raster(2 * n, "PGM");
  map.ids.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    map.ids[i] = static_cast<std::uint16_t>((p[2 * i] << 8) | p[2 * i + 1]);
  return map;
}

// `mask_id<TAB>class_name` per line, UTF-8.
inline void write_labels(const std::string& path, const std::map<int, std::string>& labels) {
  std::string buf;
  for (const auto& [id, name] : labels) buf += std::to_string(id) + "\t" + name + "\n";
  detail::write_file_bytes(path, buf);
}

inline std::map<int, std::string> read_labels(const std::string& path) {
  const std::string bytes = detail::read_file_bytes(path);
  std::map<int, std::string> labels;
  std::size_t pos = 0;
  int lineno = 1;
  while (pos < bytes.size()) {
    std::size_t eol = bytes.find('\n', pos);
    if (eol == std::string::npos) eol = bytes.size();
    const std::string line = bytes.substr(pos, eol - pos);
    if (!line.empty()) {
      const std::size_t tab = line.find('\t');
      if (tab == std::string::npos)
        throw ParseError(path + ": line " + std::to_string(lineno) + " has no tab (byte " +
                         std::to_string(pos) + ")");
      const std::string id_str = line.substr(0, tab);
      const std::string name = line.substr(tab + 1);
      if (id_str.empty() || name.empty() ||
          id_str.find_first_not_of("0123456789") != std::string::npos)
        throw ParseError(path + ": malformed line " + std::to_string(lineno) + " (byte " +
                         std::to_string(pos) + ")");
      const int id = std::stoi(id_str);
      if (labels.count(id))
        throw ParseError(path + ": duplicate mask id " + std::to_string(id) + " at line " +
                         std::to_string(lineno));
      labels[id] = name;
    }
    pos = eol + 1;
    ++lineno;
  }
  return labels;
}

inline void write_manifest(const std::string& path, const std::vector<std::string>& stems) {
  std::string buf;
  for (const auto& s : stems) buf += s + "\n";
  detail::write_file_bytes(path, buf);
}

inline std::vector<std::string> read_manifest(const std::string& path) {
  const std::string bytes = detail::read_file_bytes(path);
  std::vector<std::string> stems;
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    std::size_t eol = bytes.find('\n', pos);
    if (eol == std::string::npos) eol = bytes.size();
    std::string line = bytes.substr(pos, eol - pos);
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) stems.push_back(line);
    pos = eol + 1;
  }
  return stems;
}

// [3,H,W] planar doubles in [0,1], the model's input convention.
inline std::vector<double> image_to_planar(const ImageU8& img) {
  const std::size_t hw = static_cast<std::size_t>(img.height) * img.width;
  std::vector<double> out(3 * hw);
  for (std::size_t p = 0; p < hw; ++p)
    for (int c = 0; c < 3; ++c)
      out[static_cast<std::size_t>(c) * hw + p] = img.rgb[p * 3 + static_cast<std::size_t>(c)] / 255.0;
  return out;
}

}  // namespace maxw
