#ifndef CAATTN_CONTRASTIVE_HPP_
#define CAATTN_CONTRASTIVE_HPP_

#include <cmath>
#include <string>
#include <vector>

#include "caattn/features.hpp"
#include "caattn/pool.hpp"
#include "caattn/rng.hpp"
#include "caattn/tape.hpp"
#include "caattn/tensor.hpp"

namespace caattn {

/// Creates a detached value next to `like`: the tensor itself for plain
/// evaluation, a constant node on the same tape for taped evaluation.
inline Tensor constant_like(const Tensor&, Tensor value) { return value; }
inline Var constant_like(const Var& like, Tensor value) { return like.tape()->constant(std::move(value)); }

inline const Tensor& value_of(const Tensor& t) { return t; }
inline const Tensor& value_of(const Var& v) { return v.value(); }

/// Learnable weights of the contrastive attention block.
///   head_x[k], head_y[k] : d x d   query/key projections of aggregation head k
///   self_x, self_y       : d x d   projections of the self-attention over [v_hat; P']
///   fuse                 : 2d x d  shared fusion matrix W'
template <class T>
struct CAWeights {
  std::vector<T> head_x;
  std::vector<T> head_y;
  T self_x;
  T self_y;
  T fuse;

  std::size_t heads() const noexcept { return head_x.size(); }
  std::size_t d() const { return fuse.cols(); }
};

using CAParams = CAWeights<Tensor>;

/// Seeded uniform [-1/sqrt(d), 1/sqrt(d)] for every matrix.
inline CAParams init_ca_params(std::size_t d, std::size_t heads, Rng& rng) {
  if (heads == 0) throw std::invalid_argument("contrastive attention needs at least one head");
  const double a = 1.0 / std::sqrt(static_cast<double>(d));
  CAParams p;
  for (std::size_t k = 0; k < heads; ++k) {
    p.head_x.push_back(rng.uniform_tensor(d, d, -a, a));
    p.head_y.push_back(rng.uniform_tensor(d, d, -a, a));
  }
  p.self_x = rng.uniform_tensor(d, d, -a, a);
  p.self_y = rng.uniform_tensor(d, d, -a, a);
  p.fuse = rng.uniform_tensor(2 * d, d, -a, a);
  return p;
}

inline CAWeights<Var> on_tape(Tape& tape, const CAParams& p) {
  CAWeights<Var> w;
  for (const auto& m : p.head_x) w.head_x.push_back(tape.leaf(m));
  for (const auto& m : p.head_y) w.head_y.push_back(tape.leaf(m));
  w.self_x = tape.leaf(p.self_x);
  w.self_y = tape.leaf(p.self_y);
  w.fuse = tape.leaf(p.fuse);
  return w;
}

template <class T>
struct Attended {
  T output;   // N_x x d, convex combinations of the rows of y
  T weights;  // N_x x N_y, rows sum to one
};

/// Dot-product attention Att(x, y) = softmax(M) y with
/// M = (x W_x)(y W_y)^T / sqrt(d). The values are the raw rows of y; the
/// projections only shape the scores. The product is evaluated as
/// ((x W_x) W_y^T) y^T, which avoids projecting every key row.
template <class T>
Attended<T> att(const T& x, const T& y, const T& W_x, const T& W_y) {
  const std::size_t d = x.cols();
  if (y.cols() != d || W_x.rows() != d || W_x.cols() != d || W_y.rows() != d || W_y.cols() != d) {
    throw ShapeError("att: incompatible shapes x" + x.shape() + " y" + y.shape() + " W_x" + W_x.shape() +
                     " W_y" + W_y.shape());
  }
  if (y.rows() == 0) throw EmptyInputError("att: no keys");
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  T query = matmul(matmul(x, W_x), transpose(W_y));
  T scores = scale(matmul(query, transpose(y)), inv_sqrt_d);
  T weights = softmax_rows(scores);
  return {matmul(weights, y), weights};
}

template <class T>
struct Aggregated {
  T P_prime;                 // n x d
  std::vector<T> head_weights;  // n rows of 1 x N_P
};

/// n independent attentions from v_hat over the pool, stacked row-wise.
template <class T>
Aggregated<T> aggregate_attention(const T& v_hat, const T& pool, const CAWeights<T>& w) {
  if (pool.rows() == 0) throw EmptyInputError("aggregate_attention: empty normality pool");
  if (v_hat.rows() != 1) throw ShapeError("aggregate_attention: v_hat must be 1 x d, got " + v_hat.shape());
  if (w.heads() == 0) throw std::invalid_argument("aggregate_attention: no heads");
  Aggregated<T> out;
  std::vector<T> rows;
  for (std::size_t k = 0; k < w.heads(); ++k) {
    auto a = att(v_hat, pool, w.head_x[k], w.head_y[k]);
    rows.push_back(a.output);
    out.head_weights.push_back(a.weights);
  }
  out.P_prime = concat_rows(std::span<const T>(rows));
  return out;
}

template <class T>
struct Differentiated {
  T v_common;    // 1 x d
  T v_contrast;  // 1 x d, v_hat - v_common
  T weights;     // (n+1) x (n+1) self-attention weights
};

/// Self-attention over [v_hat; P'], mean-pooled into the common
/// information, which is then subtracted from v_hat.
template <class T>
Differentiated<T> differentiate_attention(const T& v_hat, const T& P_prime, const T& self_x, const T& self_y) {
  if (v_hat.rows() != 1 || P_prime.cols() != v_hat.cols()) {
    throw ShapeError("differentiate_attention: v_hat" + v_hat.shape() + " vs P'" + P_prime.shape());
  }
  T stacked = concat_rows({v_hat, P_prime});
  auto a = att(stacked, stacked, self_x, self_y);
  T common = mean_rows(a.output);
  return {common, sub(v_hat, common), a.weights};
}

template <class T>
struct Fused {
  T v_hat_fused;  // 1 x d
  T V_fused;      // N_I x d
};

/// v_hat' = ReLU([v_hat; v_d] W'), v_i' = ReLU([v_i; v_d] W'), same W'.
template <class T>
Fused<T> fuse(const T& v_hat, const T& V, const T& v_contrast, const T& W_prime) {
  const std::size_t d = v_hat.cols();
  if (v_hat.rows() != 1 || v_contrast.rows() != 1 || v_contrast.cols() != d || V.cols() != d ||
      W_prime.rows() != 2 * d || W_prime.cols() != d) {
    throw ShapeError("fuse: v_hat" + v_hat.shape() + " V" + V.shape() + " v_d" + v_contrast.shape() + " W'" +
                     W_prime.shape());
  }
  T broadcast = matmul(constant_like(v_contrast, Tensor::ones(V.rows(), 1)), v_contrast);
  Fused<T> out;
  out.v_hat_fused = relu(matmul(concat_cols({v_hat, v_contrast}), W_prime));
  out.V_fused = relu(matmul(concat_cols({V, broadcast}), W_prime));
  return out;
}

template <class T>
struct ContrastiveOutput {
  T P_prime;
  T v_common;
  T v_contrast;
  T v_hat_fused;
  T V_fused;
  Tensor head_weights;  // n x N_P diagnostic; empty when aggregation is bypassed
};

/// Aggregate -> differentiate -> fuse. When `P_prime_override` is given the
/// aggregation step is skipped and those rows stand in for P'.
template <class T>
ContrastiveOutput<T> contrastive_forward(const T& v_hat, const T& V, const T& pool, const CAWeights<T>& w,
                                         const T* P_prime_override = nullptr) {
  if (v_hat.cols() != pool.cols() || V.cols() != v_hat.cols() || w.d() != v_hat.cols()) {
    throw ShapeError("contrastive_forward: dimension mismatch v_hat" + v_hat.shape() + " V" + V.shape() +
                     " pool" + pool.shape() + " d=" + std::to_string(w.d()));
  }
  ContrastiveOutput<T> out;
  if (P_prime_override) {
    out.P_prime = *P_prime_override;
  } else {
    auto agg = aggregate_attention(v_hat, pool, w);
    out.P_prime = agg.P_prime;
    out.head_weights = Tensor(agg.head_weights.size(), pool.rows());
    for (std::size_t k = 0; k < agg.head_weights.size(); ++k) {
      const Tensor& hw = value_of(agg.head_weights[k]);
      std::copy(hw.data().begin(), hw.data().end(), out.head_weights.row(k).begin());
    }
  }
  auto diff = differentiate_attention(v_hat, out.P_prime, w.self_x, w.self_y);
  out.v_common = diff.v_common;
  out.v_contrast = diff.v_contrast;
  auto fused = fuse(v_hat, V, diff.v_contrast, w.fuse);
  out.v_hat_fused = fused.v_hat_fused;
  out.V_fused = fused.V_fused;
  return out;
}

inline ContrastiveOutput<Tensor> contrastive_forward(const FeatureGrid& grid, const NormalityPool& pool,
                                                     const CAParams& params) {
  if (grid.d() != pool.d() || pool.d() != params.d()) {
    throw ShapeError("contrastive_forward: grid d=" + std::to_string(grid.d()) +
                     ", pool d=" + std::to_string(pool.d()) + ", params d=" + std::to_string(params.d()));
  }
  return contrastive_forward<Tensor>(grid.v_hat, grid.V, pool.entries, params);
}

}  // namespace caattn

#endif  // CAATTN_CONTRASTIVE_HPP_
