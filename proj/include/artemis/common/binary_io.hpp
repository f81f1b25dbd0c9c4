#pragma once

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace artemis {

/// Raised for malformed or truncated binary files.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a file was written by an incompatible version.
class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Little-endian append-only buffer (the build targets little-endian hosts).
class ByteWriter {
 public:
  template <typename T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const char*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_bytes(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  template <typename T>
  void put_array(const T* p, std::size_t n) {
    const auto* c = reinterpret_cast<const char*>(p);
    bytes_.insert(bytes_.end(), c, c + n * sizeof(T));
  }
  const std::vector<char>& bytes() const { return bytes_; }
  std::vector<char>& bytes() { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class ByteReader {
 public:
  ByteReader(const char* data, std::size_t size, std::string what) : data_(data), size_(size), what_(std::move(what)) {}

  template <typename T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  std::string_view get_bytes(std::size_t n) { return {take(n), n}; }
  template <typename T>
  void get_array(T* out, std::size_t n) {
    if (n > remaining() / sizeof(T)) {
      fail(n * sizeof(T));
    }
    std::memcpy(out, take(n * sizeof(T)), n * sizeof(T));
  }
  std::size_t remaining() const { return size_ - pos_; }
  std::size_t position() const { return pos_; }

 private:
  const char* take(std::size_t n) {
    if (n > remaining()) {
      fail(n);
    }
    const char* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  [[noreturn]] void fail(std::size_t n) const {
    throw FormatError(what_ + ": truncated at byte " + std::to_string(pos_) + " (needed " + std::to_string(n) +
                      " more, " + std::to_string(remaining()) + " left)");
  }

  const char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  std::string what_;
};

/// Whole-file helpers; failures raise IoError.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<char> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<char>& bytes);

}  // namespace artemis
