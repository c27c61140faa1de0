#ifndef CAATTN_FINITE_DIFF_HPP_
#define CAATTN_FINITE_DIFF_HPP_

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>

#include "caattn/tensor.hpp"

namespace caattn {

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every entry of x.
template <class F>
Tensor finite_diff(F&& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff: step must be positive");
  Tensor probe = x;
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(static_cast<const Tensor&>(probe));
    probe[i] = orig - h;
    const double fm = f(static_cast<const Tensor&>(probe));
    probe[i] = orig;
    out[i] = (fp - fm) / (2.0 * h);
  }
  return out;
}

/// Tolerances for analytic-vs-numeric comparison. Entries whose analytic
/// magnitude is below `small` are judged by absolute error instead.
struct GradTolerance {
  double rel = 1e-4;
  double abs = 1e-7;
  double small = 1e-4;
};

struct GradComparison {
  double max_rel_err = 0.0;  // over entries judged relatively
  double max_abs_err = 0.0;  // over entries judged absolutely
  std::size_t checked = 0;
  std::size_t failures = 0;
  bool ok() const noexcept { return failures == 0; }
};

inline GradComparison compare_gradients(const Tensor& analytic, const Tensor& numeric,
                                        const GradTolerance& tol = {}) {
  detail::require_same_shape(analytic, numeric, "compare_gradients");
  GradComparison cmp;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i], n = numeric[i];
    const double err = std::abs(a - n);
    ++cmp.checked;
    if (std::abs(a) < tol.small) {
      cmp.max_abs_err = std::max(cmp.max_abs_err, err);
      if (err > tol.abs) ++cmp.failures;
    } else {
      const double rel = err / std::max(std::abs(a), std::abs(n));
      cmp.max_rel_err = std::max(cmp.max_rel_err, rel);
      if (rel > tol.rel) ++cmp.failures;
    }
  }
  return cmp;
}

inline void merge(GradComparison& into, const GradComparison& other) {
  into.max_rel_err = std::max(into.max_rel_err, other.max_rel_err);
  into.max_abs_err = std::max(into.max_abs_err, other.max_abs_err);
  into.checked += other.checked;
  into.failures += other.failures;
}

}  // namespace caattn

#endif  // CAATTN_FINITE_DIFF_HPP_
