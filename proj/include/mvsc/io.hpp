#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mvsc/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts unsupported");

namespace mvsc {

// Little-endian binary writer for the container formats. All multi-byte
// values are written via memcpy of the native representation.
class BinaryWriter {
 public:
  explicit BinaryWriter(const std::filesystem::path& path)
      : out_(path, std::ios::binary), path_(path.string()) {
    if (!out_) throw Error("cannot open for writing: " + path_);
  }

  void magic(const char (&tag)[9]) { out_.write(tag, 8); }

  void u32(std::uint32_t v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }

  void u64(std::uint64_t v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }

  void f32(float v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }

  // Doubles are narrowed to f32 on disk.
  void f32_array(const std::vector<double>& values) {
    for (double v : values) f32(static_cast<float>(v));
  }

  void f32_array(const std::vector<float>& values) {
    out_.write(reinterpret_cast<const char*>(values.data()),
               static_cast<std::streamsize>(values.size() * sizeof(float)));
  }

  void bytes(const std::string& s) {
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

  void close() {
    out_.close();
    if (!out_) throw Error("write failed: " + path_);
  }

 private:
  std::ofstream out_;
  std::string path_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::filesystem::path& path)
      : in_(path, std::ios::binary), path_(path.string()) {
    if (!in_) throw Error("cannot open for reading: " + path_);
  }

  // Reads 8 bytes and checks them against the expected tag.
  void expect_magic(const char (&tag)[9]) {
    char got[8];
    in_.read(got, 8);
    if (!in_ || std::memcmp(got, tag, 8) != 0) {
      throw FormatError("bad magic in " + path_ + " (expected " +
                        std::string(tag, 8) + ")");
    }
  }

  std::uint32_t u32() {
    std::uint32_t v = 0;
    in_.read(reinterpret_cast<char*>(&v), sizeof(v));
    check("u32");
    return v;
  }

  std::uint64_t u64() {
    std::uint64_t v = 0;
    in_.read(reinterpret_cast<char*>(&v), sizeof(v));
    check("u64");
    return v;
  }

  float f32() {
    float v = 0;
    in_.read(reinterpret_cast<char*>(&v), sizeof(v));
    check("f32");
    return v;
  }

  std::vector<float> f32_array(std::size_t count) {
    std::vector<float> values(count);
    in_.read(reinterpret_cast<char*>(values.data()),
             static_cast<std::streamsize>(count * sizeof(float)));
    check("f32 payload");
    return values;
  }

  std::string bytes(std::size_t count) {
    std::string s(count, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(count));
    check("bytes");
    return s;
  }

  // True when no payload bytes remain.
  bool at_eof() {
    return in_.peek() == std::char_traits<char>::eof();
  }

  const std::string& path() const { return path_; }

 private:
  void check(const char* what) {
    if (!in_) {
      throw CorruptionError(std::string("truncated ") + what + " in " + path_);
    }
  }

  std::ifstream in_;
  std::string path_;
};

// Shortest-round-trip decimal for doubles; used everywhere a float lands in
// a text artifact so rerun bytes match.
inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_text_file(const std::filesystem::path& path,
                            const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error("write failed: " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open for reading: " + path.string());
  std::string content((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
  return content;
}

}  // namespace mvsc
