#include "factorfit/serialize.hpp"

#include "factorfit/error.hpp"

#include <bit>

namespace factorfit {

void store_le64(std::uint8_t* out, std::uint64_t v) noexcept {
  for (int i = 0; i < 8; ++i) out[i] = static_cast<std::uint8_t>(v >> (8 * i));
}

std::uint64_t load_le64(const std::uint8_t* in) noexcept {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[i]) << (8 * i);
  return v;
}

void store_le32(std::uint8_t* out, std::uint32_t v) noexcept {
  for (int i = 0; i < 4; ++i) out[i] = static_cast<std::uint8_t>(v >> (8 * i));
}

std::uint32_t load_le32(const std::uint8_t* in) noexcept {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[i]) << (8 * i);
  return v;
}

void ByteWriter::u32(std::uint32_t v) {
  const auto n = buf_.size();
  buf_.resize(n + 4);
  store_le32(buf_.data() + n, v);
}

void ByteWriter::u64(std::uint64_t v) {
  const auto n = buf_.size();
  buf_.resize(n + 8);
  store_le64(buf_.data() + n, v);
}

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::str(std::string_view s) {
  u64(s.size());
  buf_.insert(buf_.end(), s.begin(), s.end());
}

void ByteWriter::matrix(const Matrix& m) {
  u64(static_cast<std::uint64_t>(m.rows()));
  u64(static_cast<std::uint64_t>(m.cols()));
  const auto n = buf_.size();
  buf_.resize(n + 8 * static_cast<std::size_t>(m.size()));
  std::uint8_t* out = buf_.data() + n;
  for (Index i = 0; i < m.size(); ++i)
    store_le64(out + 8 * i, std::bit_cast<std::uint64_t>(m.data()[i]));
}

void ByteWriter::vector(const Vector& v) { matrix(v); }

void ByteReader::need(std::size_t n) const {
  if (data_.size() - pos_ < n)
    throw CollectiveContractError("payload truncated: need " + std::to_string(n) +
                                  " bytes at offset " + std::to_string(pos_));
}

std::uint8_t ByteReader::u8() {
  need(1);
  return data_[pos_++];
}

std::uint32_t ByteReader::u32() {
  need(4);
  const auto v = load_le32(data_.data() + pos_);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  const auto v = load_le64(data_.data() + pos_);
  pos_ += 8;
  return v;
}

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string ByteReader::str() {
  const auto n = u64();
  need(n);
  std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
  pos_ += n;
  return s;
}

Matrix ByteReader::matrix() {
  const auto rows = static_cast<Index>(u64());
  const auto cols = static_cast<Index>(u64());
  if (rows < 0 || cols < 0) throw CollectiveContractError("negative matrix dimensions");
  need(8 * static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols));
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) {
    m.data()[i] = std::bit_cast<double>(load_le64(data_.data() + pos_));
    pos_ += 8;
  }
  return m;
}

Vector ByteReader::vector() {
  Matrix m = matrix();
  if (m.cols() != 1 && m.size() != 0) throw CollectiveContractError("expected a column vector");
  return Vector(Eigen::Map<Vector>(m.data(), m.rows()));
}

}  // namespace factorfit
