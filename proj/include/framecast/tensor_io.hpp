#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "framecast/tensor.hpp"

namespace framecast {

// "FCT1" container: magic, u32le rank, u32le extents, f32le payload,
// row-major. Bit-exact on round trip; used for checkpoints, frame
// sequences and golden fixtures.

inline constexpr char kTensorMagic[4] = {'F', 'C', 'T', '1'};

namespace detail {

inline void put_u32le(std::string& buf, std::uint32_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
  buf.push_back(static_cast<char>((v >> 16) & 0xff));
  buf.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline std::uint32_t get_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

inline std::string encode_tensor(const Tensor<float>& t) {
  std::string buf;
  buf.reserve(8 + 4 * t.rank() + 4 * t.size());
  buf.append(kTensorMagic, 4);
  detail::put_u32le(buf, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t a = 0; a < t.rank(); ++a)
    detail::put_u32le(buf, static_cast<std::uint32_t>(t.extent(a)));
  for (std::size_t i = 0; i < t.size(); ++i)
    detail::put_u32le(buf, std::bit_cast<std::uint32_t>(t[i]));
  return buf;
}

inline Tensor<float> decode_tensor(const std::string& buf, const std::string& origin) {
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  if (buf.size() < 4 || std::memcmp(p, kTensorMagic, 4) != 0)
    throw std::runtime_error(origin + ": bad magic, not an FCT1 tensor file");
  if (buf.size() < 8) throw std::runtime_error(origin + ": truncated tensor header");
  const std::uint32_t rank = detail::get_u32le(p + 4);
  if (rank < 1 || rank > kMaxRank)
    throw std::runtime_error(origin + ": invalid tensor rank " + std::to_string(rank));
  if (buf.size() < 8 + 4ull * rank) throw std::runtime_error(origin + ": truncated extent list");
  Extents dims(rank);
  std::size_t n = 1;
  for (std::uint32_t a = 0; a < rank; ++a) {
    dims[a] = detail::get_u32le(p + 8 + 4 * a);
    if (dims[a] == 0) throw std::runtime_error(origin + ": zero extent in tensor file");
    n *= dims[a];
  }
  const std::size_t need = 8 + 4ull * rank + 4ull * n;
  if (buf.size() < need) throw std::runtime_error(origin + ": truncated tensor payload");
  if (buf.size() > need) throw std::runtime_error(origin + ": trailing bytes after payload");
  std::vector<float> data(n);
  const unsigned char* q = p + 8 + 4 * rank;
  for (std::size_t i = 0; i < n; ++i)
    data[i] = std::bit_cast<float>(detail::get_u32le(q + 4 * i));
  return Tensor<float>::from_data(std::move(dims), std::move(data));
}

inline void write_tensor(const std::filesystem::path& path, const Tensor<float>& t) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("write_tensor: cannot open " + path.string());
  const std::string buf = encode_tensor(t);
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw std::runtime_error("write_tensor: write failed for " + path.string());
}

inline Tensor<float> read_tensor(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_tensor: cannot open " + path.string());
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_tensor(buf, path.string());
}

}  // namespace framecast
