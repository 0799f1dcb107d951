#pragma once

#include <zlib.h>

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "segattn/array.hpp"

namespace segattn {

// Versioned binary checkpoint container:
//   magic "SGAT" | u32 version | u64 iteration | config text | named tensors
//   | RNG state | trailing crc32 over everything before it.
// Tensors are raw little-endian scalar dumps tagged f32/f64 so round trips
// are bit-exact.

constexpr std::uint32_t kCheckpointVersion = 1;

template <typename S>
struct CheckpointContent {
  std::uint64_t iteration = 0;
  std::string config_text;
  std::vector<std::pair<std::string, Array<S>>> tensors;
  std::array<std::uint64_t, 6> rng_state{};
};

namespace detail {

template <typename T>
void put_raw(std::string& buf, const T& v) {
  buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

inline void put_string(std::string& buf, const std::string& s) {
  put_raw(buf, static_cast<std::uint64_t>(s.size()));
  buf.append(s);
}

template <typename T>
T take_raw(const std::string& buf, size_t& off) {
  if (off + sizeof(T) > buf.size()) throw IoError("truncated checkpoint");
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

inline std::string take_string(const std::string& buf, size_t& off) {
  const auto len = take_raw<std::uint64_t>(buf, off);
  if (off + len > buf.size()) throw IoError("truncated checkpoint");
  std::string s = buf.substr(off, len);
  off += len;
  return s;
}

template <typename S>
constexpr std::uint8_t dtype_tag() {
  return sizeof(S) == 4 ? 0 : 1;
}

}  // namespace detail

template <typename S>
void save_checkpoint(const std::string& path, const CheckpointContent<S>& content) {
  std::string buf;
  buf.append("SGAT");
  detail::put_raw(buf, kCheckpointVersion);
  detail::put_raw(buf, content.iteration);
  detail::put_string(buf, content.config_text);
  detail::put_raw(buf, static_cast<std::uint64_t>(content.tensors.size()));
  for (const auto& [name, arr] : content.tensors) {
    detail::put_string(buf, name);
    detail::put_raw(buf, detail::dtype_tag<S>());
    detail::put_raw(buf, static_cast<std::uint32_t>(arr.rank()));
    for (Index i = 0; i < arr.rank(); ++i)
      detail::put_raw(buf, static_cast<std::uint64_t>(arr.dim(i)));
    buf.append(reinterpret_cast<const char*>(arr.data()),
               static_cast<size_t>(arr.size()) * sizeof(S));
  }
  for (std::uint64_t w : content.rng_state) detail::put_raw(buf, w);

  const auto crc = static_cast<std::uint32_t>(
      crc32(0, reinterpret_cast<const Bytef*>(buf.data()),
            static_cast<uInt>(buf.size())));
  detail::put_raw(buf, crc);

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + tmp);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw IoError("rename failed: " + tmp + " -> " + path);
}

template <typename S>
CheckpointContent<S> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  if (buf.size() < 8 || buf.compare(0, 4, "SGAT") != 0)
    throw IoError("not a checkpoint file: " + path);

  const std::string body = buf.substr(0, buf.size() - 4);
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
  const auto crc = static_cast<std::uint32_t>(
      crc32(0, reinterpret_cast<const Bytef*>(body.data()),
            static_cast<uInt>(body.size())));
  if (crc != stored_crc)
    throw IoError("checkpoint checksum mismatch: " + path);

  size_t off = 4;
  CheckpointContent<S> content;
  const auto version = detail::take_raw<std::uint32_t>(body, off);
  if (version != kCheckpointVersion)
    throw IoError("checkpoint version " + std::to_string(version) +
                  " unsupported (expected " + std::to_string(kCheckpointVersion) + ")");
  content.iteration = detail::take_raw<std::uint64_t>(body, off);
  content.config_text = detail::take_string(body, off);
  const auto count = detail::take_raw<std::uint64_t>(body, off);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = detail::take_string(body, off);
    const auto dtype = detail::take_raw<std::uint8_t>(body, off);
    if (dtype != detail::dtype_tag<S>())
      throw IoError("checkpoint tensor '" + name + "' has mismatched scalar type");
    const auto rank = detail::take_raw<std::uint32_t>(body, off);
    Shape shape(rank);
    for (auto& d : shape)
      d = static_cast<Index>(detail::take_raw<std::uint64_t>(body, off));
    Array<S> arr(shape);
    const size_t bytes = static_cast<size_t>(arr.size()) * sizeof(S);
    if (off + bytes > body.size()) throw IoError("truncated checkpoint");
    std::memcpy(arr.data(), body.data() + off, bytes);
    off += bytes;
    content.tensors.emplace_back(std::move(name), std::move(arr));
  }
  for (auto& w : content.rng_state) w = detail::take_raw<std::uint64_t>(body, off);
  return content;
}

}  // namespace segattn
