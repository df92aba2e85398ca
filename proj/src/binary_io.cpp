#include "hubguard/binary_io.hpp"

#include "hubguard/common.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace hubguard::binio {

static_assert(std::endian::native == std::endian::little, "cache formats assume a little-endian host");

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for large payloads.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = ::crc32(crc, bytes.data() + off, chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::uint32_t crc32(std::string_view text) {
  return crc32(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

namespace {
template <typename T>
void put(std::vector<std::uint8_t>& buf, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  buf.insert(buf.end(), p, p + sizeof(T));
}
}  // namespace

void Writer::u32(std::uint32_t v) { put(buf_, v); }
void Writer::u64(std::uint64_t v) { put(buf_, v); }
void Writer::f64(double v) { put(buf_, v); }

void Writer::f64s(std::span<const double> values) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
  buf_.insert(buf_.end(), p, p + values.size_bytes());
}

void Writer::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  raw(s);
}

void Writer::raw(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

void Writer::commit(const std::filesystem::path& path) const {
  std::vector<std::uint8_t> out = buf_;
  put(out, crc32(std::span<const std::uint8_t>(buf_)));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DomainError("cannot open " + tmp.string() + " for writing");
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw DomainError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Reader::Reader(const std::filesystem::path& path) : path_(path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CacheError("cannot open " + path.string());
  buf_.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  if (buf_.size() < 4) throw CacheError("truncated file: " + path.string());
  end_ = buf_.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, buf_.data() + end_, 4);
  if (stored != crc32(std::span<const std::uint8_t>(buf_.data(), end_)))
    throw CacheError("checksum mismatch: " + path.string());
}

void Reader::need(std::size_t n) const {
  if (pos_ + n > end_) throw CacheError("truncated record: " + path_.string());
}

std::uint32_t Reader::u32() {
  need(4);
  std::uint32_t v;
  std::memcpy(&v, buf_.data() + pos_, 4);
  pos_ += 4;
  return v;
}

std::uint64_t Reader::u64() {
  need(8);
  std::uint64_t v;
  std::memcpy(&v, buf_.data() + pos_, 8);
  pos_ += 8;
  return v;
}

double Reader::f64() {
  need(8);
  double v;
  std::memcpy(&v, buf_.data() + pos_, 8);
  pos_ += 8;
  return v;
}

void Reader::f64s(std::span<double> out) {
  need(out.size_bytes());
  std::memcpy(out.data(), buf_.data() + pos_, out.size_bytes());
  pos_ += out.size_bytes();
}

std::string Reader::str() {
  const auto n = u32();
  need(n);
  std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
  pos_ += n;
  return s;
}

void Reader::expect_raw(std::string_view magic) {
  need(magic.size());
  if (std::memcmp(buf_.data() + pos_, magic.data(), magic.size()) != 0)
    throw CacheError("bad magic in " + path_.string());
  pos_ += magic.size();
}

void Reader::expect_end() const {
  if (pos_ != end_) throw CacheError("trailing bytes in " + path_.string());
}

}  // namespace hubguard::binio
