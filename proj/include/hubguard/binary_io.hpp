#pragma once

// Little-endian record files with a trailing CRC32 over everything before it.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace hubguard::binio {

std::uint32_t crc32(std::span<const std::uint8_t> bytes);
std::uint32_t crc32(std::string_view text);

class Writer {
 public:
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void f64s(std::span<const double> values);
  void str(std::string_view s);
  void raw(std::string_view s);

  /// Appends the checksum and writes atomically (temp file + rename).
  void commit(const std::filesystem::path& path) const;

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  /// Loads the file and verifies the trailing checksum; throws CacheError on any problem.
  explicit Reader(const std::filesystem::path& path);

  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  void f64s(std::span<double> out);
  std::string str();
  void expect_raw(std::string_view magic);
  void expect_end() const;

 private:
  void need(std::size_t n) const;

  std::filesystem::path path_;
  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
  std::size_t end_ = 0;
};

}  // namespace hubguard::binio
