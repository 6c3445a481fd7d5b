#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>

#include "ctvqa/errors.hpp"

namespace ctvqa::binary {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put_le(std::string& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

/// Bounds-checked little-endian reader over an in-memory file image.
class Reader {
 public:
  Reader(std::string_view data, std::string source) : data_(data), source_(std::move(source)) {}

  template <typename T>
  T get_le(const char* what) {
    require(sizeof(T), what);
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, data_.data() + offset_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
      for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    }
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    offset_ += sizeof(T);
    return value;
  }

  std::string_view bytes(std::size_t n, const char* what) {
    require(n, what);
    const auto view = data_.substr(offset_, n);
    offset_ += n;
    return view;
  }

  /// Throws FormatError when fewer than n bytes remain.
  void require(std::size_t n, const char* what) const {
    if (data_.size() - offset_ < n) {
      throw FormatError(source_ + ": truncated reading " + what + " at offset " +
                        std::to_string(offset_) + ": expected " +
                        std::to_string(offset_ + n) + " bytes, file has " +
                        std::to_string(data_.size()));
    }
  }

  std::size_t offset() const { return offset_; }
  std::size_t remaining() const { return data_.size() - offset_; }
  const std::string& source() const { return source_; }

 private:
  std::string_view data_;
  std::string source_;
  std::size_t offset_ = 0;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace ctvqa::binary
