#ifndef CAATTN_MODEL_HPP_
#define CAATTN_MODEL_HPP_

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <algorithm>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "caattn/contrastive.hpp"
#include "caattn/corpus.hpp"
#include "caattn/decoder.hpp"
#include "caattn/detail/binary_io.hpp"
#include "caattn/features.hpp"
#include "caattn/pool.hpp"
#include "caattn/rng.hpp"
#include "caattn/tape.hpp"
#include "caattn/vocab.hpp"

namespace caattn {

/// Which parts of the contrastive block feed the decoder.
///   Off               : decoder sees the raw (v_hat, V)
///   DifferentiateOnly : P' is n randomly chosen pool rows, no aggregation
///   Full              : aggregate + differentiate
enum class CaMode { Off, DifferentiateOnly, Full };

inline std::string to_string(CaMode m) {
  switch (m) {
    case CaMode::Off: return "off";
    case CaMode::DifferentiateOnly: return "da";
    case CaMode::Full: return "full";
  }
  return "?";
}

inline CaMode ca_mode_from_string(const std::string& s) {
  if (s == "off") return CaMode::Off;
  if (s == "da") return CaMode::DifferentiateOnly;
  if (s == "full") return CaMode::Full;
  throw std::invalid_argument("unknown contrastive attention mode '" + s + "'");
}

struct ModelConfig {
  std::size_t raw_dim = 32;
  std::size_t d = 64;
  std::size_t heads = 6;
  std::size_t embed = 32;
  std::size_t hidden = 64;
  CaMode ca_mode = CaMode::Full;
  double lr = 2e-3;
  std::size_t steps = 2000;
  std::uint64_t seed = 0;
  std::size_t refresh_pool_every = 0;
  std::size_t max_len = 40;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline nlohmann::ordered_json to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["raw_dim"] = c.raw_dim;
  j["d"] = c.d;
  j["heads"] = c.heads;
  j["embed"] = c.embed;
  j["hidden"] = c.hidden;
  j["ca_mode"] = to_string(c.ca_mode);
  j["lr"] = c.lr;
  j["steps"] = c.steps;
  j["seed"] = c.seed;
  j["refresh_pool_every"] = c.refresh_pool_every;
  j["max_len"] = c.max_len;
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.raw_dim = j.at("raw_dim");
  c.d = j.at("d");
  c.heads = j.at("heads");
  c.embed = j.at("embed");
  c.hidden = j.at("hidden");
  c.ca_mode = ca_mode_from_string(j.at("ca_mode"));
  c.lr = j.at("lr");
  c.steps = j.at("steps");
  c.seed = j.at("seed");
  c.refresh_pool_every = j.at("refresh_pool_every");
  c.max_len = j.at("max_len");
  return c;
}

/// Every trainable tensor of the pipeline: projection, contrastive block, decoder.
template <class T>
struct ModelWeights {
  T W_I;
  CAWeights<T> ca;
  DecoderWeights<T> dec;
};

/// Named parameters in a fixed order (the checkpoint and optimizer order).
template <class W>
auto param_list(W& w) {
  std::vector<std::pair<std::string, decltype(&w.W_I)>> out;
  out.emplace_back("W_I", &w.W_I);
  for (std::size_t k = 0; k < w.ca.heads(); ++k) {
    out.emplace_back("ca.head_x." + std::to_string(k), &w.ca.head_x[k]);
    out.emplace_back("ca.head_y." + std::to_string(k), &w.ca.head_y[k]);
  }
  out.emplace_back("ca.self_x", &w.ca.self_x);
  out.emplace_back("ca.self_y", &w.ca.self_y);
  out.emplace_back("ca.fuse", &w.ca.fuse);
  out.emplace_back("dec.embed", &w.dec.embed);
  out.emplace_back("dec.init", &w.dec.init);
  out.emplace_back("dec.update", &w.dec.update);
  out.emplace_back("dec.reset", &w.dec.reset);
  out.emplace_back("dec.candidate", &w.dec.candidate);
  out.emplace_back("dec.attn", &w.dec.attn);
  out.emplace_back("dec.out", &w.dec.out);
  return out;
}

template <class U, class T, class F>
ModelWeights<U> map_weights(const ModelWeights<T>& src, F&& f) {
  ModelWeights<U> dst;
  dst.ca.head_x.resize(src.ca.heads());
  dst.ca.head_y.resize(src.ca.heads());
  auto from = param_list(src);
  auto to = param_list(dst);
  for (std::size_t i = 0; i < from.size(); ++i) *to[i].second = f(*from[i].second);
  return dst;
}

inline ModelWeights<Var> on_tape(Tape& tape, const ModelWeights<Tensor>& w) {
  return map_weights<Var>(w, [&](const Tensor& t) { return tape.leaf(t); });
}

/// The projection every fresh model starts from; a function of (seed, dims)
/// only, so a pool built before training sees the same W_I.
inline Tensor initial_projection(const ModelConfig& c) {
  Rng rng(mix_seed(c.seed, 0x1));
  return init_projection(c.raw_dim, c.d, rng);
}

struct Model {
  ModelConfig config;
  Vocab vocab;
  ModelWeights<Tensor> weights;
};

inline Model init_model(const ModelConfig& config, const Vocab& vocab) {
  Model m{config, vocab, {}};
  m.weights.W_I = initial_projection(config);
  Rng ca_rng(mix_seed(config.seed, 0x2));
  m.weights.ca = init_ca_params(config.d, config.heads, ca_rng);
  Rng dec_rng(mix_seed(config.seed, 0x3));
  m.weights.dec = init_decoder_params(vocab.size(), config.embed, config.hidden, config.d, dec_rng);
  return m;
}

/// n pool rows chosen uniformly at random; stands in for P' when
/// aggregation is disabled.
inline Tensor random_pool_rows(const Tensor& pool, std::size_t n, Rng& rng) {
  Tensor out(n, pool.cols());
  const auto picks = n <= pool.rows() ? rng.sample_without_replacement(pool.rows(), n) : std::vector<std::size_t>{};
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t r = n <= pool.rows() ? picks[k] : rng.below(pool.rows());
    std::copy(pool.row(r).begin(), pool.row(r).end(), out.row(k).begin());
  }
  return out;
}

template <class T>
struct DecoderInputs {
  T v_hat;
  T V;
  T v_hat_fused;
  T V_fused;
  std::optional<ContrastiveOutput<T>> contrast;
};

/// Projection, pooling and (depending on mode) contrastive attention.
/// `da_rows` is required in DifferentiateOnly mode.
template <class T>
DecoderInputs<T> encode_inputs(const T& patches, const T& pool, const ModelWeights<T>& w, CaMode mode,
                               const T* da_rows = nullptr) {
  DecoderInputs<T> in;
  in.V = project(patches, w.W_I);
  in.v_hat = global_pool(in.V);
  if (mode == CaMode::Off) {
    in.v_hat_fused = in.v_hat;
    in.V_fused = in.V;
    return in;
  }
  if (mode == CaMode::DifferentiateOnly && da_rows == nullptr) {
    throw UsageError("encode_inputs: differentiate-only mode needs substitute pool rows");
  }
  auto out = contrastive_forward(in.v_hat, in.V, pool, w.ca, mode == CaMode::DifferentiateOnly ? da_rows : nullptr);
  in.v_hat_fused = out.v_hat_fused;
  in.V_fused = out.V_fused;
  in.contrast = std::move(out);
  return in;
}

/// Seed for the substitute rows used at inference time in DifferentiateOnly mode.
inline std::uint64_t inference_da_seed(const Model& m, const std::string& id) {
  return mix_seed(m.config.seed ^ hash_string(id), 0xda);
}

/// Evaluates decoder inputs for one instance without recording a tape.
inline DecoderInputs<Tensor> encode_instance(const Model& m, const RawFeatures& raw, const NormalityPool& pool) {
  if (raw.patches.cols() != m.config.raw_dim) {
    throw ShapeError("instance " + raw.image_id + " has feature width " + std::to_string(raw.patches.cols()) +
                     " but the model expects " + std::to_string(m.config.raw_dim));
  }
  if (m.config.ca_mode != CaMode::Off && pool.d() != m.config.d) {
    throw ShapeError("pool dimension " + std::to_string(pool.d()) + " differs from model d=" +
                     std::to_string(m.config.d));
  }
  std::optional<Tensor> da;
  if (m.config.ca_mode == CaMode::DifferentiateOnly) {
    Rng rng(inference_da_seed(m, raw.image_id));
    da = random_pool_rows(pool.entries, m.config.heads, rng);
  }
  return encode_inputs<Tensor>(raw.patches, pool.entries, m.weights, m.config.ca_mode, da ? &*da : nullptr);
}

inline std::vector<std::string> greedy_decode(const Model& m, const RawFeatures& raw, const NormalityPool& pool,
                                              std::size_t max_len) {
  auto in = encode_instance(m, raw, pool);
  return m.vocab.decode(greedy_decode_ids(in.v_hat_fused, in.V_fused, m.weights.dec, max_len));
}

inline std::vector<std::string> greedy_decode(const Model& m, const RawFeatures& raw, const NormalityPool& pool) {
  return greedy_decode(m, raw, pool, m.config.max_len);
}

/// Loss of one instance on a fresh tape; used by training and gradient checks.
struct TapedLoss {
  std::unique_ptr<Tape> tape;
  ModelWeights<Var> vars;
  Var loss;
};

inline TapedLoss taped_sequence_loss(const ModelWeights<Tensor>& weights, const Tensor& patches, const Tensor& pool,
                                     const std::vector<std::size_t>& tokens, CaMode mode,
                                     const Tensor* da_rows = nullptr) {
  TapedLoss out;
  out.tape = std::make_unique<Tape>();
  Tape& tape = *out.tape;
  out.vars = on_tape(tape, weights);
  const Var x = tape.constant(patches);
  const Var p = tape.constant(pool);
  std::optional<Var> da;
  if (da_rows) da = tape.constant(*da_rows);
  auto in = encode_inputs<Var>(x, p, out.vars, mode, da ? &*da : nullptr);
  out.loss = sequence_loss(tokens, in.v_hat_fused, in.V_fused, out.vars.dec);
  return out;
}

/// Plain evaluation of the same loss, for finite-difference oracles.
inline double plain_sequence_loss(const ModelWeights<Tensor>& weights, const Tensor& patches, const Tensor& pool,
                                  const std::vector<std::size_t>& tokens, CaMode mode,
                                  const Tensor* da_rows = nullptr) {
  auto in = encode_inputs<Tensor>(patches, pool, weights, mode, da_rows);
  return sequence_loss(tokens, in.v_hat_fused, in.V_fused, weights.dec)[0];
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Adam with beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
class Adam {
 public:
  static constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

  explicit Adam(double lr) : lr_(lr) {}

  void step(std::vector<Tensor*> params, const std::vector<Tensor>& grads) {
    if (m_.empty()) {
      for (auto* p : params) {
        m_.emplace_back(p->rows(), p->cols());
        v_.emplace_back(p->rows(), p->cols());
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& p = *params[i];
      const Tensor& g = grads[i];
      for (std::size_t k = 0; k < p.size(); ++k) {
        m_[i][k] = kBeta1 * m_[i][k] + (1.0 - kBeta1) * g[k];
        v_[i][k] = kBeta2 * v_[i][k] + (1.0 - kBeta2) * g[k] * g[k];
        const double mh = m_[i][k] / c1;
        const double vh = v_[i][k] / c2;
        p[k] -= lr_ * mh / (std::sqrt(vh) + kEps);
      }
    }
  }

 private:
  double lr_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

struct TrainResult {
  Model model;
  std::vector<double> losses;  // one per step
  NormalityPool pool;          // as used at the last step
  std::vector<std::string> warnings;
};

using StepCallback = std::function<void(std::size_t step, double loss)>;

/// Teacher-forced training with one instance per step, visiting the corpus
/// in seeded shuffled epochs.
inline TrainResult train(Model model, const std::vector<Instance>& corpus, NormalityPool pool,
                         const StepCallback& on_step = {}) {
  if (corpus.empty()) throw std::invalid_argument("train: empty corpus");
  const ModelConfig& cfg = model.config;
  TrainResult res;
  if (cfg.ca_mode != CaMode::Off) {
    if (pool.size() == 0) throw std::invalid_argument("train: contrastive attention needs a normality pool");
    if (auto w = fingerprint_warning(pool, model.weights.W_I)) res.warnings.push_back(*w);
  }

  std::vector<std::vector<std::size_t>> encoded;
  for (const auto& inst : corpus) encoded.push_back(model.vocab.encode(inst.report));

  Rng order_rng(mix_seed(cfg.seed, 0x4));
  Rng da_rng(mix_seed(cfg.seed, 0x5));
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  Adam opt(cfg.lr);
  std::vector<Tensor*> params;
  for (auto& [name, p] : param_list(model.weights)) params.push_back(p);

  for (std::size_t s = 0; s < cfg.steps; ++s) {
    if (s % order.size() == 0) order_rng.shuffle(order);
    if (cfg.ca_mode != CaMode::Off && cfg.refresh_pool_every > 0 && s > 0 && s % cfg.refresh_pool_every == 0) {
      pool = refresh_pool(pool, corpus, model.weights.W_I);
    }
    const std::size_t idx = order[s % order.size()];
    std::optional<Tensor> da;
    if (cfg.ca_mode == CaMode::DifferentiateOnly) da = random_pool_rows(pool.entries, cfg.heads, da_rng);

    double loss = 0.0;
    std::vector<Tensor> grads;
    try {
      auto taped = taped_sequence_loss(model.weights, corpus[idx].raw.patches, pool.entries, encoded[idx],
                                       cfg.ca_mode, da ? &*da : nullptr);
      loss = taped.loss.value()[0];
      taped.tape->backward(taped.loss);
      for (auto& [name, v] : param_list(taped.vars)) grads.push_back(taped.tape->grad(*v));
    } catch (const std::domain_error& e) {
      throw DivergenceError("training diverged at step " + std::to_string(s) + " on " + corpus[idx].id + ": " +
                            e.what());
    }
    if (!std::isfinite(loss)) {
      throw DivergenceError("training diverged at step " + std::to_string(s) + " on " + corpus[idx].id +
                            ": loss is not finite");
    }
    opt.step(params, grads);
    res.losses.push_back(loss);
    if (on_step) on_step(s, loss);
  }
  res.model = std::move(model);
  res.pool = std::move(pool);
  return res;
}

// ---------------------------------------------------------------------------
// Checkpoints: "CACKPT01", one line of JSON manifest terminated by '\n',
// then f64 LE payloads in manifest order.
// ---------------------------------------------------------------------------

inline constexpr std::string_view kCheckpointMagic = "CACKPT01";
inline constexpr int kCheckpointVersion = 1;

inline std::vector<char> encode_checkpoint(const Model& model) {
  const Model& m = model;
  nlohmann::ordered_json manifest;
  manifest["version"] = kCheckpointVersion;
  manifest["config"] = to_json(m.config);
  manifest["vocab"] = m.vocab.tokens();
  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  std::size_t offset = 0;
  for (auto& [name, t] : param_list(m.weights)) {
    nlohmann::ordered_json e;
    e["name"] = name;
    e["rows"] = t->rows();
    e["cols"] = t->cols();
    e["offset"] = offset;
    tensors.push_back(e);
    offset += t->size() * 8;
  }
  manifest["tensors"] = tensors;
  detail::ByteWriter w;
  w.raw(kCheckpointMagic);
  w.raw(manifest.dump());
  w.raw("\n");
  for (auto& [name, t] : param_list(m.weights))
    for (double v : t->data()) w.f64(v);
  return w.bytes();
}

inline Model decode_checkpoint(const std::vector<char>& bytes, const std::string& source) {
  detail::ByteReader r(bytes, source);
  if (r.remaining() < kCheckpointMagic.size() || r.raw(kCheckpointMagic.size(), "magic") != kCheckpointMagic) {
    throw ParseError(ParseError::Kind::BadMagic, source + ": not a checkpoint (bad magic)");
  }
  const auto it = std::find(bytes.begin() + static_cast<std::ptrdiff_t>(r.position()), bytes.end(), '\n');
  if (it == bytes.end()) throw ParseError(ParseError::Kind::Truncated, source + ": manifest not terminated");
  const std::size_t manifest_len = static_cast<std::size_t>(it - bytes.begin()) - r.position();
  const std::string_view text = r.raw(manifest_len, "manifest");
  r.raw(1, "manifest terminator");

  Model m;
  std::vector<std::tuple<std::string, std::size_t, std::size_t, std::size_t>> entries;
  try {
    const auto manifest = nlohmann::json::parse(text);
    const int version = manifest.at("version");
    if (version != kCheckpointVersion) {
      throw ParseError(ParseError::Kind::BadVersion,
                       source + ": unsupported checkpoint version " + std::to_string(version));
    }
    m.config = model_config_from_json(manifest.at("config"));
    m.vocab = Vocab::from_lines(manifest.at("vocab").get<std::vector<std::string>>(), source);
    for (const auto& e : manifest.at("tensors")) {
      entries.emplace_back(e.at("name"), e.at("rows"), e.at("cols"), e.at("offset"));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(ParseError::Kind::Malformed, source + ": bad manifest: " + e.what());
  }

  m.weights.ca.head_x.resize(m.config.heads);
  m.weights.ca.head_y.resize(m.config.heads);
  auto params = param_list(m.weights);
  if (params.size() != entries.size()) {
    throw ParseError(ParseError::Kind::Malformed, source + ": expected " + std::to_string(params.size()) +
                                                      " tensors, manifest lists " + std::to_string(entries.size()));
  }
  const std::size_t base = r.position();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, rows, cols, offset] = entries[i];
    if (name != params[i].first) {
      throw ParseError(ParseError::Kind::Malformed, source + ": tensor " + std::to_string(i) + " is " + name +
                                                        ", expected " + params[i].first);
    }
    if (r.position() - base != offset) {
      throw ParseError(ParseError::Kind::Malformed, source + ": tensor " + name + " offset mismatch");
    }
    r.need(rows * cols * 8, name);
    Tensor t(rows, cols);
    for (double& v : t.data()) v = r.f64(name);
    if (!t.all_finite()) throw ParseError(ParseError::Kind::NonFinite, source + ": tensor " + name + " not finite");
    *params[i].second = std::move(t);
  }
  if (r.remaining() != 0) throw ParseError(ParseError::Kind::Malformed, source + ": trailing bytes");
  return m;
}

inline void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  detail::write_file(path, encode_checkpoint(model));
}

inline Model load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(detail::read_file(path), path.string());
}

}  // namespace caattn

#endif  // CAATTN_MODEL_HPP_
