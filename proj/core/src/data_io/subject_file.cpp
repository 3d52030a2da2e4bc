#include "factorfit/data_io.hpp"

#include "factorfit/error.hpp"
#include "factorfit/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace factorfit::data_io {

namespace {

constexpr char kMagic[4] = {'S', 'F', 'A', 'B'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kFloat64 = 0;

}  // namespace

void save_matrix(const fs::path& path, const Matrix& m) {
  std::uint8_t header[kHeaderBytes];
  std::memcpy(header, kMagic, 4);
  store_le32(header + 4, kVersion);
  store_le32(header + 8, kFloat64);
  store_le64(header + 12, static_cast<std::uint64_t>(m.rows()));
  store_le64(header + 20, static_cast<std::uint64_t>(m.cols()));

  Bytes payload(static_cast<std::size_t>(m.size()) * 8);
  std::size_t at = 0;
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c, at += 8)
      store_le64(payload.data() + at, std::bit_cast<std::uint64_t>(m(r, c)));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(header), kHeaderBytes);
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

SubjectFileHeader read_header(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::uint8_t h[kHeaderBytes];
  in.read(reinterpret_cast<char*>(h), kHeaderBytes);
  const auto got = static_cast<std::size_t>(in.gcount());
  const std::string p = path.string();
  if (got < 4 || std::memcmp(h, kMagic, 4) != 0)
    throw FormatError(p, 0, "magic", "expected \"SFAB\"");
  if (got < 8) throw FormatError(p, 4, "version", "file ends inside the header");
  SubjectFileHeader hdr;
  hdr.version = load_le32(h + 4);
  if (hdr.version != kVersion)
    throw FormatError(p, 4, "version", "unsupported version " + std::to_string(hdr.version));
  if (got < 12) throw FormatError(p, 8, "dtype", "file ends inside the header");
  hdr.dtype = load_le32(h + 8);
  if (hdr.dtype != kFloat64)
    throw FormatError(p, 8, "dtype", "unsupported dtype " + std::to_string(hdr.dtype));
  if (got < 20) throw FormatError(p, 12, "rows", "file ends inside the header");
  hdr.rows = load_le64(h + 12);
  if (got < kHeaderBytes) throw FormatError(p, 20, "cols", "file ends inside the header");
  hdr.cols = load_le64(h + 20);

  std::error_code ec;
  const auto size = fs::file_size(path, ec);
  if (ec) throw IoError("cannot stat " + p + ": " + ec.message());
  const long double expected = static_cast<long double>(hdr.rows) * static_cast<long double>(hdr.cols) * 8.0L;
  if (static_cast<long double>(size - kHeaderBytes) != expected)
    throw FormatError(p, kHeaderBytes, "payload length",
                      "expected " + std::to_string(hdr.rows) + "x" + std::to_string(hdr.cols) +
                          " float64 values, found " + std::to_string(size - kHeaderBytes) + " bytes");
  return hdr;
}

Matrix load_matrix(const fs::path& path) {
  const SubjectFileHeader hdr = read_header(path);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  in.seekg(static_cast<std::streamoff>(kHeaderBytes));
  const auto rows = static_cast<Index>(hdr.rows);
  const auto cols = static_cast<Index>(hdr.cols);
  Bytes payload(static_cast<std::size_t>(hdr.rows * hdr.cols * 8));
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (static_cast<std::size_t>(in.gcount()) != payload.size())
    throw FormatError(path.string(), kHeaderBytes, "payload length", "short read");
  Matrix m(rows, cols);
  std::size_t at = 0;
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c, at += 8)
      m(r, c) = std::bit_cast<double>(load_le64(payload.data() + at));
  return m;
}

}  // namespace factorfit::data_io
