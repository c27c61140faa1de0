#ifndef CAATTN_TENSOR_HPP_
#define CAATTN_TENSOR_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace caattn {

/// Raised when operand shapes do not line up.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when an operation needs at least one row or element.
class EmptyInputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised on API misuse, e.g. running backward on an empty tape.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Dense row-major matrix of doubles. Every matrix symbol in the model
/// (patch features, pool, projections, attention scores) is one of these.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(rows, cols));
    }
  }
  Tensor(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw ShapeError("ragged initializer list");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Tensor zeros(std::size_t rows, std::size_t cols) { return {rows, cols, 0.0}; }
  static Tensor ones(std::size_t rows, std::size_t cols) { return {rows, cols, 1.0}; }
  static Tensor identity(std::size_t n) {
    Tensor t(n, n);
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  std::string shape() const { return shape_string(rows_, cols_); }

  static std::string shape_string(std::size_t r, std::size_t c) {
    return "(" + std::to_string(r) + "x" + std::to_string(c) + ")";
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline std::ostream& operator<<(std::ostream& os, const Tensor& t) {
  os << '[';
  for (std::size_t r = 0; r < t.rows(); ++r) {
    os << (r ? ",[" : "[");
    for (std::size_t c = 0; c < t.cols(); ++c) os << (c ? "," : "") << t(r, c);
    os << ']';
  }
  return os << ']';
}

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape() + " vs " + b.shape());
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Forward primitives on plain tensors.
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ, " + a.shape() + " * " + b.shape());
  }
  Tensor out(a.rows(), b.cols());
  const std::size_t n = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* orow = out.data().data() + i * m;
    for (std::size_t k = 0; k < n; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* brow = b.data().data() + k * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  Tensor out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

/// Row-wise softmax with row-max subtraction.
inline Tensor softmax_rows(const Tensor& m) {
  Tensor out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto in = m.row(r);
    auto o = out.row(r);
    if (in.empty()) continue;
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) sum += (o[c] = std::exp(in[c] - mx));
    for (double& v : o) v /= sum;
  }
  return out;
}

inline Tensor relu(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

inline Tensor tanh(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.data()) v = std::tanh(v);
  return out;
}

inline Tensor sigmoid(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.data()) v = 1.0 / (1.0 + std::exp(-v));
  return out;
}

/// 1 x cols row of column means.
inline Tensor mean_rows(const Tensor& x) {
  if (x.rows() == 0) throw EmptyInputError("mean_rows: input has zero rows");
  Tensor out(1, x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out[c] += x(r, c);
  const double n = static_cast<double>(x.rows());
  for (double& v : out.data()) v /= n;
  return out;
}

inline Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw EmptyInputError("concat_rows: no parts");
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) {
      throw ShapeError("concat_rows: column mismatch " + parts.front().shape() + " vs " + p.shape());
    }
    rows += p.rows();
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const auto& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
  return {rows, cols, std::move(data)};
}

inline Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw EmptyInputError("concat_cols: no parts");
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) {
      throw ShapeError("concat_cols: row mismatch " + parts.front().shape() + " vs " + p.shape());
    }
    cols += p.cols();
  }
  Tensor out(rows, cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(p.row(r).begin(), p.row(r).end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p.cols();
  }
  return out;
}

inline Tensor concat_rows(std::initializer_list<Tensor> parts) {
  return concat_rows(std::span<const Tensor>(parts.begin(), parts.size()));
}
inline Tensor concat_cols(std::initializer_list<Tensor> parts) {
  return concat_cols(std::span<const Tensor>(parts.begin(), parts.size()));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "hadamard");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

inline Tensor scale(const Tensor& a, double s) {
  Tensor out = a;
  for (double& v : out.data()) v *= s;
  return out;
}

/// 1 - x, elementwise.
inline Tensor one_minus(const Tensor& a) {
  Tensor out = a;
  for (double& v : out.data()) v = 1.0 - v;
  return out;
}

inline Tensor row_of(const Tensor& a, std::size_t r) {
  if (r >= a.rows()) {
    throw ShapeError("row_of: row " + std::to_string(r) + " out of range for " + a.shape());
  }
  return {1, a.cols(), std::vector<double>(a.row(r).begin(), a.row(r).end())};
}

inline double sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return s;
}

inline double max_abs(const Tensor& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// -log softmax(logits)[gold] for a 1 x V row.
inline double cross_entropy_value(const Tensor& logits, std::size_t gold) {
  if (logits.rows() != 1 || gold >= logits.cols()) {
    throw ShapeError("cross_entropy: bad logits " + logits.shape() + " or gold index " +
                     std::to_string(gold));
  }
  const auto row = logits.row(0);
  const double mx = *std::max_element(row.begin(), row.end());
  double s = 0.0;
  for (double v : row) s += std::exp(v - mx);
  return -(row[gold] - mx - std::log(s));
}

/// 1 x 1 tensor form of cross_entropy_value.
inline Tensor cross_entropy(const Tensor& logits, std::size_t gold) {
  return {1, 1, std::vector<double>{cross_entropy_value(logits, gold)}};
}

/// Elementwise sum of equally shaped tensors.
inline Tensor add_n(std::span<const Tensor> parts) {
  if (parts.empty()) throw EmptyInputError("add_n: no parts");
  Tensor acc = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) {
    detail::require_same_shape(acc, parts[i], "add_n");
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += parts[i][k];
  }
  return acc;
}

}  // namespace caattn

#endif  // CAATTN_TENSOR_HPP_
