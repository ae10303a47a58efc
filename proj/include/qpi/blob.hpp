#pragma once

// QPI1 array blobs: "QPI1", u32 rank, u32 dims[rank], then row-major float32
// values. Everything little-endian regardless of host order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "qpi/error.hpp"

namespace qpi {

struct Blob {
  std::vector<std::uint32_t> dims;
  std::vector<float> values;

  std::size_t expected_count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 | std::uint32_t{p[2]} << 16 |
         std::uint32_t{p[3]} << 24;
}

inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

} // namespace detail

inline std::string encode_blob(const Blob& blob) {
  if (blob.values.size() != blob.expected_count())
    throw DimensionError("blob value count does not match dims");
  std::string out = "QPI1";
  detail::put_u32(out, static_cast<std::uint32_t>(blob.dims.size()));
  for (auto d : blob.dims) detail::put_u32(out, d);
  out.reserve(out.size() + 4 * blob.values.size());
  for (float v : blob.values) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

inline Blob decode_blob(const std::string& bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 8 || std::memcmp(p, "QPI1", 4) != 0) throw CorruptFile("not a QPI1 blob");
  Blob blob;
  const std::uint32_t rank = detail::get_u32(p + 4);
  if (rank > 8 || bytes.size() < 8 + 4ull * rank) throw CorruptFile("QPI1 header truncated");
  for (std::uint32_t i = 0; i < rank; ++i) blob.dims.push_back(detail::get_u32(p + 8 + 4 * i));
  const std::size_t n = blob.expected_count();
  const std::size_t offset = 8 + 4ull * rank;
  if (bytes.size() != offset + 4 * n) throw CorruptFile("QPI1 payload size mismatch");
  blob.values.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    blob.values[i] = std::bit_cast<float>(detail::get_u32(p + offset + 4 * i));
  return blob;
}

inline void write_blob(const std::string& path, const Blob& blob) {
  detail::write_file(path, encode_blob(blob));
}

inline Blob read_blob(const std::string& path) { return decode_blob(detail::read_file(path)); }

} // namespace qpi
