#include "emonet/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "emonet/error.hpp"
#include "emonet/tensor.hpp"

namespace emonet {

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) {
    fail(ErrorCode::ShapeMismatch, "matmul: " + std::to_string(a.rows) + "x" +
                                       std::to_string(a.cols) + " times " +
                                       std::to_string(b.rows) + "x" + std::to_string(b.cols));
  }
  Matrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    double* o = out.data.data() + i * out.cols;
    for (std::size_t p = 0; p < a.cols; ++p) {
      const double s = a.data[i * a.cols + p];
      const double* brow = b.data.data() + p * b.cols;
      for (std::size_t j = 0; j < b.cols; ++j) o[j] += s * brow[j];
    }
  }
  return out;
}

namespace {

template <typename T>
void put_le(std::vector<unsigned char>& buf, T v) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

template <typename T>
T get_le(const unsigned char* p) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
  return v;
}

}  // namespace

void ByteWriter::magic() { buf_.insert(buf_.end(), kMagic.begin(), kMagic.end()); }
void ByteWriter::u32(std::uint32_t v) { put_le(buf_, v); }
void ByteWriter::u64(std::uint64_t v) { put_le(buf_, v); }
void ByteWriter::f32(float v) { put_le(buf_, std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) { put_le(buf_, std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::tag(std::string_view four_cc) {
  for (std::size_t i = 0; i < 4; ++i) buf_.push_back(i < four_cc.size() ? four_cc[i] : ' ');
}

void ByteWriter::text(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  buf_.insert(buf_.end(), s.begin(), s.end());
}

void ByteWriter::write_file(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
  if (!out) fail(ErrorCode::IoError, "write failed for " + path.string());
}

ByteReader::ByteReader(std::vector<unsigned char> bytes, std::string source)
    : buf_(std::move(bytes)), source_(std::move(source)) {}

ByteReader ByteReader::from_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return ByteReader(std::move(bytes), path.string());
}

void ByteReader::need(std::size_t n) {
  if (remaining() < n) {
    fail(ErrorCode::TruncatedFile, source_ + ": needed " + std::to_string(n) + " bytes at offset " +
                                       std::to_string(pos_) + ", " + std::to_string(remaining()) +
                                       " left");
  }
}

void ByteReader::expect_magic() {
  if (remaining() < kMagic.size() || std::memcmp(buf_.data() + pos_, kMagic.data(), kMagic.size()) != 0) {
    fail(ErrorCode::FormatError, source_ + ": bad magic (expected NMOE)");
  }
  pos_ += kMagic.size();
}

std::uint32_t ByteReader::u32() {
  need(4);
  const auto v = get_le<std::uint32_t>(buf_.data() + pos_);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  const auto v = get_le<std::uint64_t>(buf_.data() + pos_);
  pos_ += 8;
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }
double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string ByteReader::tag() {
  need(4);
  std::string t(reinterpret_cast<const char*>(buf_.data() + pos_), 4);
  pos_ += 4;
  return t;
}

std::string ByteReader::text() {
  const std::uint32_t n = u32();
  need(n);
  std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
  pos_ += n;
  return s;
}

}  // namespace emonet
