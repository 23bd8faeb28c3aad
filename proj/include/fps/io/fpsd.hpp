#pragma once

// FPSD array container.
//
//   offset  size      field
//   0       4         magic "FPSD"
//   4       2         version, u16 little-endian (= 1)
//   6       1         dtype: 1 float32, 2 float64, 3 complex64 (interleaved float32)
//   7       1         ndim
//   8       4*ndim    dims, u32 little-endian
//   ...               payload, row-major, little-endian
//
// A file may hold several arrays back to back (a "stream").

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fps/common.hpp"

namespace fps::io {

enum class DType : std::uint8_t { float32 = 1, float64 = 2, complex64 = 3 };

inline constexpr std::uint16_t kFpsdVersion = 1;

inline std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::float32: return 4;
    case DType::float64: return 8;
    case DType::complex64: return 8;
  }
  return 0;
}

/// In-memory array. values holds one double per scalar; complex64 arrays
/// hold interleaved (re, im) so values.size() == 2 * element_count().
struct FpsdArray {
  DType dtype = DType::float64;
  std::vector<std::uint32_t> dims;
  std::vector<double> values;

  std::size_t element_count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
  std::size_t scalar_count() const {
    return element_count() * (dtype == DType::complex64 ? 2 : 1);
  }
};

inline FpsdArray make_array(DType t, std::vector<std::uint32_t> dims, std::vector<double> values) {
  FpsdArray a{t, std::move(dims), std::move(values)};
  require(a.values.size() == a.scalar_count(), ErrorKind::shape,
          "FPSD array: value count does not match dims");
  return a;
}

namespace detail {

template <class U>
void put_le(std::string& out, U v) {
  for (std::size_t b = 0; b < sizeof(U); ++b)
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * b)) & 0xFF));
}

template <class U>
U get_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (std::size_t b = 0; b < sizeof(U); ++b) v |= static_cast<std::uint64_t>(p[b]) << (8 * b);
  return static_cast<U>(v);
}

}  // namespace detail

inline void encode(const FpsdArray& a, std::string& out) {
  require(a.dims.size() <= 255, ErrorKind::shape, "FPSD array: too many dimensions");
  require(a.values.size() == a.scalar_count(), ErrorKind::shape,
          "FPSD array: value count does not match dims");
  out.append("FPSD", 4);
  detail::put_le<std::uint16_t>(out, kFpsdVersion);
  out.push_back(static_cast<char>(a.dtype));
  out.push_back(static_cast<char>(a.dims.size()));
  for (auto d : a.dims) detail::put_le<std::uint32_t>(out, d);
  if (a.dtype == DType::float64) {
    for (double v : a.values) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  } else {
    for (double v : a.values)
      detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
}

/// Decodes one array starting at `offset`; advances offset past it.
inline FpsdArray decode(const std::string& buf, std::size_t& offset) {
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  const std::size_t start = offset;
  auto need = [&](std::size_t n, const char* what) {
    if (buf.size() < offset + n)
      throw FormatError(offset, std::string("truncated ") + what);
  };
  need(4, "magic");
  if (std::memcmp(p + offset, "FPSD", 4) != 0) throw FormatError(start, "bad magic");
  offset += 4;
  need(2, "version");
  const auto version = detail::get_le<std::uint16_t>(p + offset);
  if (version != kFpsdVersion)
    throw FormatError(offset, "unsupported version " + std::to_string(version));
  offset += 2;
  need(2, "dtype/ndim");
  const std::uint8_t code = p[offset];
  if (code < 1 || code > 3) throw FormatError(offset, "unknown dtype code " + std::to_string(code));
  FpsdArray a;
  a.dtype = static_cast<DType>(code);
  const std::uint8_t ndim = p[offset + 1];
  offset += 2;
  need(4ull * ndim, "dims");
  for (std::uint8_t d = 0; d < ndim; ++d) {
    a.dims.push_back(detail::get_le<std::uint32_t>(p + offset));
    offset += 4;
  }
  const std::size_t scalars = a.scalar_count();
  const std::size_t width = a.dtype == DType::float64 ? 8 : 4;
  need(scalars * width, "payload");
  a.values.resize(scalars);
  for (std::size_t k = 0; k < scalars; ++k, offset += width) {
    if (width == 8)
      a.values[k] = std::bit_cast<double>(detail::get_le<std::uint64_t>(p + offset));
    else
      a.values[k] = std::bit_cast<float>(detail::get_le<std::uint32_t>(p + offset));
  }
  return a;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes to a temporary sibling then renames, so readers never observe a
/// partial file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::io, "cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::io, "write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::io, "cannot rename " + tmp + ": " + ec.message());
}

inline void write_stream(const std::filesystem::path& path, const std::vector<FpsdArray>& arrays) {
  std::string bytes;
  for (const auto& a : arrays) encode(a, bytes);
  write_file_atomic(path, bytes);
}

inline void write_array(const std::filesystem::path& path, const FpsdArray& a) {
  write_stream(path, {a});
}

inline std::vector<FpsdArray> read_stream(const std::filesystem::path& path) {
  const std::string buf = read_file(path);
  std::vector<FpsdArray> out;
  std::size_t offset = 0;
  while (offset < buf.size()) out.push_back(decode(buf, offset));
  return out;
}

inline FpsdArray read_array(const std::filesystem::path& path) {
  auto arrays = read_stream(path);
  if (arrays.size() != 1)
    throw FormatError(0, path.string() + ": expected exactly one array, found " +
                             std::to_string(arrays.size()));
  return std::move(arrays.front());
}

}  // namespace fps::io
