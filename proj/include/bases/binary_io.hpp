#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "bases/errors.hpp"

namespace bases::io {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
T to_little_endian(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  } else {
    return v;
  }
}

class Writer {
 public:
  void bytes(std::string_view s) { buf_.append(s); }
  template <typename T>
  void scalar(T v) {
    const T le = to_little_endian(v);
    buf_.append(reinterpret_cast<const char*>(&le), sizeof(T));
  }
  void u16(std::uint16_t v) { scalar(v); }
  void u32(std::uint32_t v) { scalar(v); }
  void f32(float v) { scalar(v); }
  template <typename It>
  void f32_range(It first, It last) {
    for (; first != last; ++first) f32(static_cast<float>(*first));
  }

  const std::string& buffer() const { return buf_; }

 private:
  std::string buf_;
};

/// Bounds-checked little-endian reader; every failure reports the byte offset.
class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

  std::string_view bytes(std::size_t n, const char* what) {
    require(n, what);
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  template <typename T>
  T scalar(const char* what) {
    require(sizeof(T), what);
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return to_little_endian(v);
  }
  std::uint16_t u16(const char* what) { return scalar<std::uint16_t>(what); }
  std::uint32_t u32(const char* what) { return scalar<std::uint32_t>(what); }
  float f32(const char* what) { return scalar<float>(what); }

 private:
  void require(std::size_t n, const char* what) const {
    if (remaining() < n) throw FormatError(std::string("truncated while reading ") + what, pos_);
  }

  std::string_view data_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

}  // namespace bases::io
