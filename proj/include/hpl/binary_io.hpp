#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace hpl {

// Little-endian binary artifact helpers. All multi-byte fields in the
// project's file formats are 64-bit little-endian.
class ByteWriter {
 public:
  explicit ByteWriter(const std::filesystem::path& path);
  ~ByteWriter();

  void magic(const char tag[4]);
  void u8(std::uint8_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void f64_array(const double* p, std::size_t n);
  void close();

 private:
  void write_raw(const void* p, std::size_t n);
  std::ofstream out_;
  std::string path_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::filesystem::path& path);

  void expect_magic(const char tag[4]);
  std::uint8_t u8();
  std::uint64_t u64();
  double f64();
  void f64_array(double* p, std::size_t n);
  void expect_eof();

 private:
  void read_raw(void* p, std::size_t n);
  std::ifstream in_;
  std::string path_;
};

// FNV-1a over a file's bytes, as a 16-hex-digit string. Used for artifact
// accounting in reports, not for security.
std::string file_digest(const std::filesystem::path& path);

void require_artifact(const std::filesystem::path& path, const char* stage_hint);

}  // namespace hpl
