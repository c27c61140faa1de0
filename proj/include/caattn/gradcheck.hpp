#ifndef CAATTN_GRADCHECK_HPP_
#define CAATTN_GRADCHECK_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "caattn/finite_diff.hpp"
#include "caattn/model.hpp"

namespace caattn {

/// Toy-scale end-to-end gradient check of the teacher-forced loss with
/// respect to every parameter, projection included.
struct GradcheckConfig {
  std::size_t d = 8;
  std::size_t heads = 2;
  std::size_t pool = 5;
  std::size_t patches = 4;
  std::size_t vocab = 12;
  std::size_t raw_dim = 6;
  std::size_t embed = 5;
  std::size_t hidden = 7;
  std::size_t seq_len = 6;  // tokens between bos and eos
  std::uint64_t seed = 7;
  double step = 1e-5;
  GradTolerance tol;
  CaMode mode = CaMode::Full;
  std::optional<OpKind> corrupt;  // negative control
};

struct ParamCheck {
  std::string name;
  GradComparison cmp;
};

struct GradcheckReport {
  std::vector<ParamCheck> params;
  double min_relu_margin = 0.0;
  double loss = 0.0;

  GradComparison total() const {
    GradComparison t;
    for (const auto& p : params) merge(t, p.cmp);
    return t;
  }
  bool ok() const { return total().ok(); }
};

inline GradcheckReport run_gradcheck(const GradcheckConfig& gc) {
  if (gc.vocab < 5) throw std::invalid_argument("gradcheck: vocabulary needs room beyond reserved tokens");
  std::vector<std::string> words;
  for (std::size_t i = 4; i < gc.vocab; ++i) words.push_back("w" + std::to_string(i));
  const Vocab vocab(words);

  ModelConfig mc;
  mc.raw_dim = gc.raw_dim;
  mc.d = gc.d;
  mc.heads = gc.heads;
  mc.embed = gc.embed;
  mc.hidden = gc.hidden;
  mc.ca_mode = gc.mode;
  mc.seed = gc.seed;
  Model model = init_model(mc, vocab);

  Rng rng(mix_seed(gc.seed, 0x9c));
  const Tensor patches = rng.uniform_tensor(gc.patches, gc.raw_dim, -1.0, 1.0);
  const Tensor pool = rng.uniform_tensor(gc.pool, gc.d, -1.0, 1.0);
  std::vector<std::size_t> tokens{Vocab::kBos};
  for (std::size_t i = 0; i < gc.seq_len; ++i) tokens.push_back(4 + rng.below(gc.vocab - 4));
  tokens.push_back(Vocab::kEos);
  std::optional<Tensor> da;
  if (gc.mode == CaMode::DifferentiateOnly) da = random_pool_rows(pool, gc.heads, rng);
  const Tensor* da_ptr = da ? &*da : nullptr;

  auto taped = taped_sequence_loss(model.weights, patches, pool, tokens, gc.mode, da_ptr);
  if (gc.corrupt) taped.tape->corrupt_adjoint_for_testing(*gc.corrupt);
  taped.tape->backward(taped.loss);

  GradcheckReport report;
  report.loss = taped.loss.value()[0];
  report.min_relu_margin = taped.tape->min_relu_margin();

  auto vars = param_list(taped.vars);
  auto params = param_list(model.weights);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (gc.mode == CaMode::Off && params[i].first.rfind("ca.", 0) == 0) continue;
    if (gc.mode == CaMode::DifferentiateOnly && params[i].first.rfind("ca.head_", 0) == 0) continue;
    const Tensor analytic = taped.tape->grad(*vars[i].second);
    ModelWeights<Tensor> probe_weights = model.weights;
    Tensor* slot = param_list(probe_weights)[i].second;
    auto f = [&](const Tensor& probe) {
      *slot = probe;
      return plain_sequence_loss(probe_weights, patches, pool, tokens, gc.mode, da_ptr);
    };
    const Tensor numeric = finite_diff(f, *params[i].second, gc.step);
    report.params.push_back({params[i].first, compare_gradients(analytic, numeric, gc.tol)});
  }
  return report;
}

}  // namespace caattn

#endif  // CAATTN_GRADCHECK_HPP_
