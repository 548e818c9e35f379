#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace saccade {

class TruncatedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Little-endian byte sink.
class ByteWriter {
 public:
  void bytes(std::string_view s);
  void u8(std::uint8_t v);
  void u32(std::uint32_t v);
  void f32(float v);
  void f64(double v);

  const std::vector<std::uint8_t>& buffer() const { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

// Little-endian byte source; reads past the end throw TruncatedError.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::string bytes(std::size_t n);
  std::uint8_t u8();
  std::uint32_t u32();
  float f32();
  double f64();

  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const;

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path,
                std::span<const std::uint8_t> data);
void write_text(const std::filesystem::path& path, std::string_view text);

}  // namespace saccade
