#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "maxw/error.hpp"
#include "maxw/tensor.hpp"

namespace maxw {

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

// Binary container: magic "MAXW", version u32, then entries until EOF.
// Entry: name_len u32, UTF-8 name, rank u32, dims as u64s, payload as raw
// little-endian IEEE-754 f64. All integers little-endian. Round-trips are
// bit-exact: doubles move as their raw 64-bit patterns.

namespace detail {

inline void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& buf, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(buf, bits);
}

class ByteReader {
 public:
  ByteReader(const std::string& bytes, const std::string& path)
      : bytes_(bytes), path_(path) {}

  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }

  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8, "u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    pos_ += 8;
    return v;
  }

  double f64() {
    std::uint64_t bits = u64();
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }

  std::string raw(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError(path_ + ": " + msg + " at byte " + std::to_string(pos_));
  }

 private:
  void need(std::size_t n, const char* what) {
    if (pos_ + n > bytes_.size())
      throw ParseError(path_ + ": truncated " + what + " at byte " + std::to_string(pos_));
  }

  const std::string& bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_checkpoint(const std::string& path, const std::vector<NamedTensor>& entries) {
  std::string buf;
  buf += "MAXW";
  detail::put_u32(buf, kCheckpointVersion);
  for (const NamedTensor& e : entries) {
    if (numel(e.shape) != e.data.size())
      throw ContractError("checkpoint entry '" + e.name + "': shape/data mismatch");
    detail::put_u32(buf, static_cast<std::uint32_t>(e.name.size()));
    buf += e.name;
    detail::put_u32(buf, static_cast<std::uint32_t>(e.shape.size()));
    for (int d : e.shape) detail::put_u64(buf, static_cast<std::uint64_t>(d));
    for (double d : e.data) detail::put_f64(buf, d);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw Error("short write to '" + path + "'");
}

inline std::vector<NamedTensor> read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "' for reading");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  detail::ByteReader r(bytes, path);
  if (r.raw(4, "magic") != "MAXW") throw ParseError(path + ": bad magic at byte 0");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw ParseError(path + ": unsupported version " + std::to_string(version) + " at byte 4");
  std::vector<NamedTensor> entries;
  while (!r.at_end()) {
    NamedTensor e;
    const std::uint32_t name_len = r.u32();
    if (name_len > (1u << 20)) r.fail("implausible name length " + std::to_string(name_len));
    e.name = r.raw(name_len, "name");
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 64) r.fail("implausible rank " + std::to_string(rank));
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint64_t d = r.u64();
      if (d == 0 || d > (1ull << 32)) r.fail("implausible dimension " + std::to_string(d));
      e.shape.push_back(static_cast<int>(d));
      n *= static_cast<std::size_t>(d);
    }
    e.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) e.data[i] = r.f64();
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace maxw
