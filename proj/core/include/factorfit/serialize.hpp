#pragma once

#include "factorfit/types.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace factorfit {

/// Little-endian byte encoder for collective payloads.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void str(std::string_view s);
  /// rows, cols, then entries in column-major order.
  void matrix(const Matrix& m);
  void vector(const Vector& v);

  Bytes take() && { return std::move(buf_); }
  const Bytes& bytes() const noexcept { return buf_; }

 private:
  Bytes buf_;
};

/// Decoder matching ByteWriter. Throws CollectiveContractError when the
/// buffer runs short, since a short payload means the peers disagree on the
/// message layout.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::string str();
  Matrix matrix();
  Vector vector();

  bool done() const noexcept { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const;

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

void store_le64(std::uint8_t* out, std::uint64_t v) noexcept;
std::uint64_t load_le64(const std::uint8_t* in) noexcept;
void store_le32(std::uint8_t* out, std::uint32_t v) noexcept;
std::uint32_t load_le32(const std::uint8_t* in) noexcept;

}  // namespace factorfit
