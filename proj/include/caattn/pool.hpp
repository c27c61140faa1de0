#ifndef CAATTN_POOL_HPP_
#define CAATTN_POOL_HPP_

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <openssl/evp.h>

#include "caattn/corpus.hpp"
#include "caattn/detail/binary_io.hpp"
#include "caattn/features.hpp"
#include "caattn/rng.hpp"

namespace caattn {

using Fingerprint = std::array<std::uint8_t, 32>;

/// SHA-256 over the shape and little-endian bytes of a projection matrix.
inline Fingerprint fingerprint(const Tensor& W) {
  detail::ByteWriter w;
  w.u64(W.rows());
  w.u64(W.cols());
  for (double v : W.data()) w.f64(v);
  Fingerprint out{};
  unsigned int len = 0;
  if (EVP_Digest(w.bytes().data(), w.bytes().size(), out.data(), &len, EVP_sha256(), nullptr) != 1 ||
      len != out.size()) {
    throw std::runtime_error("SHA-256 digest failed");
  }
  return out;
}

inline std::string to_hex(const Fingerprint& f) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  for (auto b : f) {
    s += digits[b >> 4];
    s += digits[b & 15];
  }
  return s;
}

/// N_P global features of normal training images, with provenance.
struct NormalityPool {
  Tensor entries;
  std::vector<std::string> ids;
  std::uint64_t build_seed = 0;
  Fingerprint projection_fingerprint{};

  std::size_t size() const noexcept { return entries.rows(); }
  std::size_t d() const noexcept { return entries.cols(); }
};

class InsufficientNormalsError : public std::runtime_error {
 public:
  InsufficientNormalsError(std::size_t wanted, std::size_t available)
      : std::runtime_error("normality pool needs " + std::to_string(wanted) + " normal instances but only " +
                           std::to_string(available) + " are available"),
        available_(available) {}
  std::size_t available() const noexcept { return available_; }

 private:
  std::size_t available_;
};

inline constexpr std::size_t kDefaultPoolSize = 1000;

/// Samples `size` normal instances without replacement and stores their
/// projected global features. A pure function of (corpus order, W_I, size, seed).
inline NormalityPool build_pool(const std::vector<Instance>& corpus, const Tensor& W_I,
                                std::size_t size = kDefaultPoolSize, std::uint64_t seed = 0) {
  if (size == 0) throw std::invalid_argument("normality pool size must be at least 1");
  std::vector<std::size_t> normals;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    if (corpus[i].normal) normals.push_back(i);
  if (normals.size() < size) throw InsufficientNormalsError(size, normals.size());

  Rng rng(seed);
  const auto picks = rng.sample_without_replacement(normals.size(), size);
  NormalityPool pool;
  pool.build_seed = seed;
  pool.projection_fingerprint = fingerprint(W_I);
  pool.entries = Tensor(size, W_I.cols());
  for (std::size_t k = 0; k < size; ++k) {
    const Instance& inst = corpus[normals[picks[k]]];
    const Tensor g = global_pool(project(inst.raw, W_I));
    std::copy(g.data().begin(), g.data().end(), pool.entries.row(k).begin());
    pool.ids.push_back(inst.id);
  }
  return pool;
}

/// Recomputes every entry under the current W_I, keeping ids and order.
inline NormalityPool refresh_pool(const NormalityPool& pool, const std::vector<Instance>& corpus,
                                  const Tensor& W_I) {
  std::unordered_map<std::string, const Instance*> by_id;
  for (const auto& inst : corpus) by_id.emplace(inst.id, &inst);
  NormalityPool out;
  out.ids = pool.ids;
  out.build_seed = pool.build_seed;
  out.projection_fingerprint = fingerprint(W_I);
  out.entries = Tensor(pool.ids.size(), W_I.cols());
  for (std::size_t k = 0; k < pool.ids.size(); ++k) {
    auto it = by_id.find(pool.ids[k]);
    if (it == by_id.end()) throw std::invalid_argument("refresh_pool: id " + pool.ids[k] + " not in corpus");
    const Tensor g = global_pool(project(it->second->raw, W_I));
    std::copy(g.data().begin(), g.data().end(), out.entries.row(k).begin());
  }
  return out;
}

/// Non-empty when the pool was built under a different projection.
inline std::optional<std::string> fingerprint_warning(const NormalityPool& pool, const Tensor& W_I) {
  const Fingerprint now = fingerprint(W_I);
  if (now == pool.projection_fingerprint) return std::nullopt;
  return "normality pool was built with projection " + to_hex(pool.projection_fingerprint).substr(0, 12) +
         " but the current projection is " + to_hex(now).substr(0, 12) + "; consider refreshing it";
}

// ---------------------------------------------------------------------------
// NPOL files: "NPOL", u32 version, u64 seed, u32 N_P, u32 d, 32-byte
// fingerprint, N_P*d f64, then newline-joined UTF-8 ids. All LE.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kPoolVersion = 1;

inline std::vector<char> encode_pool(const NormalityPool& pool) {
  detail::ByteWriter w;
  w.raw("NPOL");
  w.u32(kPoolVersion);
  w.u64(pool.build_seed);
  w.u32(static_cast<std::uint32_t>(pool.size()));
  w.u32(static_cast<std::uint32_t>(pool.d()));
  w.raw(pool.projection_fingerprint.data(), pool.projection_fingerprint.size());
  for (double v : pool.entries.data()) w.f64(v);
  std::string ids;
  for (std::size_t i = 0; i < pool.ids.size(); ++i) {
    if (i) ids += '\n';
    ids += pool.ids[i];
  }
  w.raw(ids);
  return w.bytes();
}

inline NormalityPool decode_pool(const std::vector<char>& bytes, const std::string& source) {
  detail::ByteReader r(bytes, source);
  if (r.remaining() < 4 || r.raw(4, "magic") != "NPOL") {
    throw ParseError(ParseError::Kind::BadMagic, source + ": bad magic, expected NPOL");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kPoolVersion) {
    throw ParseError(ParseError::Kind::BadVersion,
                     source + ": unsupported pool version " + std::to_string(version));
  }
  NormalityPool pool;
  pool.build_seed = r.u64("seed");
  const std::uint32_t n = r.u32("pool size");
  const std::uint32_t d = r.u32("dimension");
  auto fp = r.raw(32, "fingerprint");
  std::copy(fp.begin(), fp.end(), pool.projection_fingerprint.begin());
  r.need(static_cast<std::size_t>(n) * d * 8, "pool entries");
  pool.entries = Tensor(n, d);
  for (double& v : pool.entries.data()) v = r.f64("pool entries");
  if (!pool.entries.all_finite()) throw ParseError(ParseError::Kind::NonFinite, source + ": non-finite entry");
  const std::string_view tail = r.rest();
  std::size_t start = 0;
  while (start <= tail.size() && n > 0) {
    const std::size_t nl = tail.find('\n', start);
    const std::size_t end = nl == std::string_view::npos ? tail.size() : nl;
    pool.ids.emplace_back(tail.substr(start, end - start));
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
  if (pool.ids.size() != n) {
    throw ParseError(ParseError::Kind::Malformed, source + ": expected " + std::to_string(n) + " ids, found " +
                                                      std::to_string(pool.ids.size()));
  }
  return pool;
}

inline void save_pool(const NormalityPool& pool, const std::filesystem::path& path) {
  detail::write_file(path, encode_pool(pool));
}

inline NormalityPool load_pool(const std::filesystem::path& path) {
  return decode_pool(detail::read_file(path), path.string());
}

struct PoolStats {
  std::size_t count = 0;
  Tensor mean;  // 1 x d
  Tensor std;   // 1 x d, population standard deviation
  /// Smallest Euclidean distance between two distinct entries; infinity for
  /// a single-entry pool.
  double nearest_duplicate_distance = std::numeric_limits<double>::infinity();
};

inline PoolStats pool_stats(const NormalityPool& pool) {
  if (pool.size() == 0) throw EmptyInputError("pool_stats: empty pool");
  PoolStats s;
  s.count = pool.size();
  s.mean = mean_rows(pool.entries);
  s.std = Tensor(1, pool.d());
  for (std::size_t r = 0; r < pool.size(); ++r)
    for (std::size_t c = 0; c < pool.d(); ++c) {
      const double dv = pool.entries(r, c) - s.mean[c];
      s.std[c] += dv * dv;
    }
  for (double& v : s.std.data()) v = std::sqrt(v / static_cast<double>(pool.size()));
  for (std::size_t i = 0; i < pool.size(); ++i)
    for (std::size_t j = i + 1; j < pool.size(); ++j) {
      double acc = 0.0;
      for (std::size_t c = 0; c < pool.d(); ++c) {
        const double dv = pool.entries(i, c) - pool.entries(j, c);
        acc += dv * dv;
      }
      s.nearest_duplicate_distance = std::min(s.nearest_duplicate_distance, std::sqrt(acc));
    }
  return s;
}

}  // namespace caattn

#endif  // CAATTN_POOL_HPP_
