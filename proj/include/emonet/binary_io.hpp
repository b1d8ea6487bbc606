#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace emonet {

// Little-endian byte buffer helpers shared by the embedding cache, the
// backbone weights file and the trainable checkpoint. All three start with
// the 4-byte magic "NMOE" followed by a u32 version.
inline constexpr std::array<char, 4> kMagic = {'N', 'M', 'O', 'E'};

inline constexpr std::uint32_t kStackVersion = 1;
inline constexpr std::uint32_t kCheckpointVersion = 2;
inline constexpr std::uint32_t kBackboneWeightsVersion = 3;

class ByteWriter {
 public:
  void magic();
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void tag(std::string_view four_cc);
  void text(std::string_view s);  // u32 length + bytes

  const std::vector<unsigned char>& bytes() const { return buf_; }
  void write_file(const std::filesystem::path& path) const;

 private:
  std::vector<unsigned char> buf_;
};

class ByteReader {
 public:
  ByteReader(std::vector<unsigned char> bytes, std::string source);
  static ByteReader from_file(const std::filesystem::path& path);

  // Throws FormatError unless the next four bytes are "NMOE".
  void expect_magic();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::string tag();
  std::string text();

  std::size_t remaining() const { return buf_.size() - pos_; }
  const std::string& source() const { return source_; }

 private:
  void need(std::size_t n);

  std::vector<unsigned char> buf_;
  std::size_t pos_ = 0;
  std::string source_;
};

}  // namespace emonet
