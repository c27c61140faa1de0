#ifndef CAATTN_FEATURES_HPP_
#define CAATTN_FEATURES_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>

#include "caattn/detail/binary_io.hpp"
#include "caattn/rng.hpp"
#include "caattn/synth_spec.hpp"
#include "caattn/tensor.hpp"

namespace caattn {

/// Patch features before projection, N_I x D_raw.
struct RawFeatures {
  std::string image_id;
  Tensor patches;
};

/// Projected patch features V (N_I x d) and their global mean v_hat (1 x d).
struct FeatureGrid {
  std::string image_id;
  Tensor V;
  Tensor v_hat;

  std::size_t d() const noexcept { return V.cols(); }
};

template <class T>
T project(const T& patches, const T& W_I) {
  if (patches.cols() != W_I.rows()) {
    throw ShapeError("project: patches " + patches.shape() + " incompatible with W_I " + W_I.shape());
  }
  return matmul(patches, W_I);
}

inline Tensor project(const RawFeatures& raw, const Tensor& W_I) { return project(raw.patches, W_I); }

/// Average pooling over patches.
template <class T>
T global_pool(const T& V) {
  if (V.rows() == 0) throw EmptyInputError("global_pool: no patches");
  return mean_rows(V);
}

inline FeatureGrid make_grid(const RawFeatures& raw, const Tensor& W_I) {
  FeatureGrid g;
  g.image_id = raw.image_id;
  g.V = project(raw, W_I);
  g.v_hat = global_pool(g.V);
  return g;
}

/// Seeded uniform [-1/sqrt(D_raw), 1/sqrt(D_raw)] initialization of W_I.
inline Tensor init_projection(std::size_t raw_dim, std::size_t d, Rng& rng) {
  const double a = 1.0 / std::sqrt(static_cast<double>(raw_dim));
  return rng.uniform_tensor(raw_dim, d, -a, a);
}

/// Row-stacks the patches of paired views (e.g. frontal + lateral) into one
/// instance so that projection and pooling apply unchanged.
inline RawFeatures stack_views(const RawFeatures& a, const RawFeatures& b) {
  return {a.image_id, concat_rows({a.patches, b.patches})};
}

// ---------------------------------------------------------------------------
// FMAT feature files: "FMAT", u32 rows, u32 cols, rows*cols f32, all LE.
// ---------------------------------------------------------------------------

inline std::vector<char> encode_features(const Tensor& patches) {
  detail::ByteWriter w;
  w.raw("FMAT");
  w.u32(static_cast<std::uint32_t>(patches.rows()));
  w.u32(static_cast<std::uint32_t>(patches.cols()));
  for (double v : patches.data()) w.f32(static_cast<float>(v));
  return w.bytes();
}

inline RawFeatures decode_features(const std::vector<char>& bytes, const std::string& source,
                                   std::string image_id = {}) {
  detail::ByteReader r(bytes, source);
  if (r.remaining() < 4 || r.raw(4, "magic") != "FMAT") {
    throw ParseError(ParseError::Kind::BadMagic, source + ": bad magic, expected FMAT");
  }
  const std::uint32_t rows = r.u32("row count");
  const std::uint32_t cols = r.u32("column count");
  if (rows == 0 || cols == 0) {
    throw ParseError(ParseError::Kind::Malformed, source + ": empty feature matrix");
  }
  const std::size_t expected = static_cast<std::size_t>(rows) * cols * 4;
  if (r.remaining() != expected) {
    throw ParseError(r.remaining() < expected ? ParseError::Kind::Truncated : ParseError::Kind::Malformed,
                     source + ": payload size mismatch, expected " + std::to_string(expected) +
                         " bytes, got " + std::to_string(r.remaining()));
  }
  Tensor t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const float v = r.f32("payload");
    if (!std::isfinite(v)) {
      throw ParseError(ParseError::Kind::NonFinite,
                       source + ": non-finite value at entry " + std::to_string(i));
    }
    t[i] = static_cast<double>(v);
  }
  return {std::move(image_id), std::move(t)};
}

inline RawFeatures load_features(const std::filesystem::path& path, std::string image_id = {}) {
  if (image_id.empty()) image_id = path.stem().string();
  return decode_features(detail::read_file(path), path.string(), std::move(image_id));
}

inline void save_features(const std::filesystem::path& path, const Tensor& patches) {
  detail::write_file(path, encode_features(patches));
}

// ---------------------------------------------------------------------------
// Synthetic featurizer.
// ---------------------------------------------------------------------------

/// Corpus-wide appearance model: one patch pattern per orientation and one
/// signature direction per abnormality tag. Depends only on the world seed.
struct SyntheticWorld {
  std::vector<Tensor> prototypes;  // orientations x (patches x raw_dim)
  std::vector<Tensor> signatures;  // tags x (1 x raw_dim)

  SyntheticWorld(std::uint64_t world_seed, const SynthConfig& cfg) {
    Rng rng(mix_seed(world_seed, 0x5eed));
    for (std::size_t o = 0; o < cfg.orientations; ++o) {
      Tensor p(cfg.patches, cfg.raw_dim);
      for (double& v : p.data()) v = cfg.prototype_scale * rng.normal();
      prototypes.push_back(std::move(p));
    }
    for (std::size_t t = 0; t < synth_tags().size(); ++t) {
      Tensor s(1, cfg.raw_dim);
      double mean = 0.0;
      for (double& v : s.data()) mean += (v = rng.normal());
      mean /= static_cast<double>(cfg.raw_dim);
      for (double& v : s.data()) v = v - mean + cfg.signature_bias;
      signatures.push_back(std::move(s));
    }
  }
};

/// Deterministic patch features for a synthetic instance. Values are rounded
/// to float precision so they survive an FMAT round trip bit-exactly.
inline RawFeatures featurize_synthetic(const InstanceSpec& spec, const SynthConfig& cfg,
                                       const SyntheticWorld& world) {
  Rng rng(mix_seed(spec.seed, 0xfea7));
  Tensor patches = world.prototypes.at(spec.orientation % world.prototypes.size());
  for (double& v : patches.data()) v += cfg.noise_std * rng.normal();
  if (spec.abnormal_block) {
    const auto& blk = *spec.abnormal_block;
    Tensor sig(1, cfg.raw_dim);
    const auto& names = synth_tags();
    for (const auto& tag : spec.tags) {
      const auto it = std::find(names.begin(), names.end(), tag);
      if (it == names.end()) throw std::invalid_argument("unknown synthetic tag " + tag);
      sig = add(sig, world.signatures[static_cast<std::size_t>(it - names.begin())]);
    }
    for (std::size_t r = blk.start; r < std::min(blk.start + blk.length, patches.rows()); ++r)
      for (std::size_t c = 0; c < patches.cols(); ++c) patches(r, c) += blk.shift * sig[c];
  }
  for (double& v : patches.data()) v = static_cast<double>(static_cast<float>(v));
  return {spec.id, std::move(patches)};
}

inline RawFeatures featurize_synthetic(const InstanceSpec& spec, const SynthConfig& cfg) {
  return featurize_synthetic(spec, cfg, SyntheticWorld(spec.world_seed, cfg));
}

}  // namespace caattn

#endif  // CAATTN_FEATURES_HPP_
