#ifndef CAATTN_DETAIL_BINARY_IO_HPP_
#define CAATTN_DETAIL_BINARY_IO_HPP_

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace caattn {

/// Malformed or unreadable data file. `kind` distinguishes the failure so
/// callers (and tests) can tell a bad magic from a short payload.
class ParseError : public std::runtime_error {
 public:
  enum class Kind { Io, BadMagic, BadVersion, Truncated, NonFinite, Malformed };

  ParseError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

namespace detail {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <class T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

/// Append-only little-endian byte sink.
class ByteWriter {
 public:
  void raw(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void raw(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <class T>
  void put(T v) {
    v = to_little(v);
    raw(&v, sizeof(T));
  }
  void u32(std::uint32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }
  void f32(float v) { put(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }

  const std::vector<char>& bytes() const noexcept { return buf_; }

 private:
  std::vector<char> buf_;
};

/// Bounds-checked little-endian reader over an in-memory buffer.
class ByteReader {
 public:
  ByteReader(const std::vector<char>& buf, std::string source)
      : buf_(buf), source_(std::move(source)) {}

  std::size_t remaining() const noexcept { return buf_.size() - pos_; }
  std::size_t position() const noexcept { return pos_; }

  void need(std::size_t n, std::string_view what) const {
    if (remaining() < n) {
      throw ParseError(ParseError::Kind::Truncated,
                       source_ + ": truncated " + std::string(what) + ", expected " + std::to_string(n) +
                           " bytes but only " + std::to_string(remaining()) + " remain");
    }
  }
  std::string_view raw(std::size_t n, std::string_view what) {
    need(n, what);
    std::string_view s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  template <class T>
  T get(std::string_view what) {
    auto s = raw(sizeof(T), what);
    T v;
    std::memcpy(&v, s.data(), sizeof(T));
    return to_little(v);
  }
  std::uint32_t u32(std::string_view what) { return get<std::uint32_t>(what); }
  std::uint64_t u64(std::string_view what) { return get<std::uint64_t>(what); }
  float f32(std::string_view what) { return std::bit_cast<float>(get<std::uint32_t>(what)); }
  double f64(std::string_view what) { return std::bit_cast<double>(get<std::uint64_t>(what)); }
  std::string_view rest() { return raw(remaining(), "tail"); }

  const std::string& source() const noexcept { return source_; }

 private:
  const std::vector<char>& buf_;
  std::string source_;
  std::size_t pos_ = 0;
};

inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(ParseError::Kind::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::vector<char>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace detail
}  // namespace caattn

#endif  // CAATTN_DETAIL_BINARY_IO_HPP_
