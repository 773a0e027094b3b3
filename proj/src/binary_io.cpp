#include "hpl/binary_io.hpp"

#include <bit>
#include <cstring>

#include "hpl/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "artifact formats assume a little-endian host");

namespace hpl {

ByteWriter::ByteWriter(const std::filesystem::path& path)
    : out_(path, std::ios::binary | std::ios::trunc), path_(path.string()) {
  if (!out_) throw FormatError("cannot open for writing: " + path_);
}

ByteWriter::~ByteWriter() = default;

void ByteWriter::write_raw(const void* p, std::size_t n) {
  out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!out_) throw FormatError("write failed: " + path_);
}

void ByteWriter::magic(const char tag[4]) { write_raw(tag, 4); }
void ByteWriter::u8(std::uint8_t v) { write_raw(&v, 1); }
void ByteWriter::u64(std::uint64_t v) { write_raw(&v, 8); }
void ByteWriter::f64(double v) { write_raw(&v, 8); }
void ByteWriter::f64_array(const double* p, std::size_t n) {
  write_raw(p, 8 * n);
}

void ByteWriter::close() {
  out_.flush();
  if (!out_) throw FormatError("flush failed: " + path_);
  out_.close();
}

ByteReader::ByteReader(const std::filesystem::path& path)
    : in_(path, std::ios::binary), path_(path.string()) {
  if (!in_) throw FormatError("cannot open for reading: " + path_);
}

void ByteReader::read_raw(void* p, std::size_t n) {
  in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in_.gcount()) != n) {
    throw FormatError("truncated file: " + path_);
  }
}

void ByteReader::expect_magic(const char tag[4]) {
  char got[4];
  read_raw(got, 4);
  if (std::memcmp(got, tag, 4) != 0) {
    throw FormatError("bad magic in " + path_ + " (expected " +
                      std::string(tag, 4) + ")");
  }
}

std::uint8_t ByteReader::u8() {
  std::uint8_t v;
  read_raw(&v, 1);
  return v;
}

std::uint64_t ByteReader::u64() {
  std::uint64_t v;
  read_raw(&v, 8);
  return v;
}

double ByteReader::f64() {
  double v;
  read_raw(&v, 8);
  return v;
}

void ByteReader::f64_array(double* p, std::size_t n) { read_raw(p, 8 * n); }

void ByteReader::expect_eof() {
  char c;
  in_.read(&c, 1);
  if (!in_.eof()) throw FormatError("trailing bytes in " + path_);
}

std::string file_digest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open for digest: " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[4096];
  while (in) {
    in.read(buf, sizeof(buf));
    const std::streamsize n = in.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  char out[17];
  std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
  return std::string(out, 16);
}

void require_artifact(const std::filesystem::path& path,
                      const char* stage_hint) {
  if (!std::filesystem::exists(path)) {
    throw MissingArtifactError("missing artifact '" + path.string() +
                               "': run stage '" + stage_hint + "' first");
  }
}

}  // namespace hpl
