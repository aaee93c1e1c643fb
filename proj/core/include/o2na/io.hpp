#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace o2na {

// Little-endian byte buffer for the binary file formats.
class ByteWriter {
 public:
  void u32(std::uint32_t v);
  void f32(float v);
  void f64(double v);
  void bytes(std::string_view s);
  const std::vector<unsigned char>& buffer() const { return buf_; }
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<unsigned char> buf_;
};

// Reads a whole file and decodes it front to back. Running past the end
// raises FormatError naming the byte offset.
class ByteReader {
 public:
  explicit ByteReader(const std::filesystem::path& path);
  ByteReader(std::vector<unsigned char> data, std::string label);

  std::uint32_t u32();
  float f32();
  double f64();
  std::string bytes(std::size_t n);

  bool done() const { return pos_ == data_.size(); }
  std::size_t offset() const { return pos_; }
  std::size_t size() const { return data_.size(); }
  const std::string& label() const { return label_; }

 private:
  void need(std::size_t n) const;
  std::vector<unsigned char> data_;
  std::string label_;
  std::size_t pos_ = 0;
};

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace o2na
