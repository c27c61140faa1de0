#ifndef CAATTN_DECODER_HPP_
#define CAATTN_DECODER_HPP_

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "caattn/contrastive.hpp"
#include "caattn/rng.hpp"
#include "caattn/tape.hpp"
#include "caattn/tensor.hpp"
#include "caattn/vocab.hpp"

namespace caattn {

/// Single-layer gated recurrent decoder with dot-product attention over the
/// (fused) patch features.
///   embed   : |V| x e
///   init    : d x h          hidden_0 = tanh(v_hat' init)
///   update, reset, candidate : (e + d + h) x h
///   attn    : h x d          query projection for the visual context
///   out     : h x |V|
template <class T>
struct DecoderWeights {
  T embed;
  T init;
  T update;
  T reset;
  T candidate;
  T attn;
  T out;

  std::size_t vocab_size() const { return embed.rows(); }
  std::size_t embed_dim() const { return embed.cols(); }
  std::size_t hidden_dim() const { return init.cols(); }
  std::size_t feature_dim() const { return init.rows(); }
};

using DecoderParams = DecoderWeights<Tensor>;

inline DecoderParams init_decoder_params(std::size_t vocab, std::size_t e, std::size_t h, std::size_t d,
                                         Rng& rng) {
  auto uni = [&](std::size_t r, std::size_t c) {
    const double a = 1.0 / std::sqrt(static_cast<double>(r));
    return rng.uniform_tensor(r, c, -a, a);
  };
  DecoderParams p;
  p.embed = rng.uniform_tensor(vocab, e, -0.1, 0.1);
  p.init = uni(d, h);
  p.update = uni(e + d + h, h);
  p.reset = uni(e + d + h, h);
  p.candidate = uni(e + d + h, h);
  p.attn = uni(h, d);
  p.out = uni(h, vocab);
  return p;
}

template <class T>
struct DecodeState {
  T hidden;  // 1 x h
  std::size_t step = 0;
  std::vector<std::size_t> emitted;
};

template <class T>
DecodeState<T> init_state(const T& v_hat_fused, const DecoderWeights<T>& w) {
  if (v_hat_fused.rows() != 1 || v_hat_fused.cols() != w.init.rows()) {
    throw ShapeError("init_state: v_hat'" + v_hat_fused.shape() + " vs init" + w.init.shape());
  }
  return {tanh(matmul(v_hat_fused, w.init)), 0, {}};
}

template <class T>
struct StepResult {
  DecodeState<T> next;
  T logits;       // 1 x |V|
  T context;      // 1 x d
  T attention;    // 1 x N_I
};

/// One decoder step: attend over V' with the current hidden state, feed
/// [embed(token); context] through the gated update, project to logits.
template <class T>
StepResult<T> step(const DecodeState<T>& state, std::size_t token, const T& V_fused, const DecoderWeights<T>& w) {
  if (token >= w.vocab_size()) {
    throw std::out_of_range("decoder step: token " + std::to_string(token) + " outside vocabulary of " +
                            std::to_string(w.vocab_size()));
  }
  if (V_fused.cols() != w.attn.cols()) {
    throw ShapeError("decoder step: V'" + V_fused.shape() + " vs attn" + w.attn.shape());
  }
  const T& h = state.hidden;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(V_fused.cols()));
  T scores = scale(matmul(matmul(h, w.attn), transpose(V_fused)), inv_sqrt_d);
  T attention = softmax_rows(scores);
  T context = matmul(attention, V_fused);

  T x = concat_cols({row_of(w.embed, token), context});
  T xh = concat_cols({x, h});
  T z = sigmoid(matmul(xh, w.update));
  T r = sigmoid(matmul(xh, w.reset));
  T c = tanh(matmul(concat_cols({x, hadamard(r, h)}), w.candidate));
  T h_next = add(hadamard(one_minus(z), h), hadamard(z, c));

  StepResult<T> res{{h_next, state.step + 1, state.emitted}, matmul(h_next, w.out), context, attention};
  res.next.emitted.push_back(token);
  return res;
}

/// Mean teacher-forced cross-entropy of `tokens` (bos ... eos) given the
/// decoder inputs (v_hat', V').
template <class T>
T sequence_loss(const std::vector<std::size_t>& tokens, const T& v_hat_fused, const T& V_fused,
                const DecoderWeights<T>& w) {
  if (tokens.size() < 2) throw EmptyInputError("sequence_loss: need at least bos and eos");
  if (tokens.front() != Vocab::kBos || tokens.back() != Vocab::kEos) {
    throw std::invalid_argument("sequence_loss: sequence must start with bos and end with eos");
  }
  DecodeState<T> state = init_state(v_hat_fused, w);
  std::vector<T> losses;
  losses.reserve(tokens.size() - 1);
  for (std::size_t t = 0; t + 1 < tokens.size(); ++t) {
    auto res = step(state, tokens[t], V_fused, w);
    losses.push_back(cross_entropy(res.logits, tokens[t + 1]));
    state = std::move(res.next);
  }
  return scale(add_n(std::span<const T>(losses)), 1.0 / static_cast<double>(losses.size()));
}

/// Lowest index wins ties.
inline std::size_t argmax_row(const Tensor& logits) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.cols(); ++i)
    if (logits[i] > logits[best]) best = i;
  return best;
}

/// Greedy decoding; returns token ids without bos/eos.
inline std::vector<std::size_t> greedy_decode_ids(const Tensor& v_hat_fused, const Tensor& V_fused,
                                                  const DecoderParams& w, std::size_t max_len) {
  if (max_len == 0) throw std::invalid_argument("greedy_decode: max_len must be at least 1");
  DecodeState<Tensor> state = init_state(v_hat_fused, w);
  std::vector<std::size_t> out;
  std::size_t token = Vocab::kBos;
  while (out.size() < max_len) {
    auto res = step(state, token, V_fused, w);
    const std::size_t next = argmax_row(res.logits);
    if (next == Vocab::kEos) break;
    out.push_back(next);
    token = next;
    state = std::move(res.next);
  }
  return out;
}

}  // namespace caattn

#endif  // CAATTN_DECODER_HPP_
