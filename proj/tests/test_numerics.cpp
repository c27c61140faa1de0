#include <cmath>
#include <functional>
#include <random>

#include <gtest/gtest.h>

#include "caattn/finite_diff.hpp"
#include "caattn/tape.hpp"
#include "caattn/tensor.hpp"
#include "test_util.hpp"

namespace caattn {
namespace {

using test::expect_near;
using test::random_tensor;

TEST(Matmul, IdentityLeavesOperandUnchanged) {
  const Tensor b{{3, 4}, {5, 6}};
  EXPECT_EQ(matmul(Tensor::identity(2), b), b);
}

TEST(Matmul, HandDotProduct) {
  const Tensor out = matmul(Tensor{{1, 2}}, Tensor{{3}, {4}});
  ASSERT_EQ(out.rows(), 1u);
  ASSERT_EQ(out.cols(), 1u);
  EXPECT_EQ(out[0], 11.0);
}

TEST(Matmul, MatchesTripleLoop) {
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor a = random_tensor(3, 4, gen), b = random_tensor(4, 2, gen);
    expect_near(matmul(a, b), test::reference_matmul(a, b), 1e-12);
  }
}

TEST(Matmul, ShapeErrorNamesBothShapes) {
  try {
    matmul(Tensor(2, 3), Tensor(2, 3));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(2x3) * (2x3)"), std::string::npos) << msg;
  }
}

TEST(SoftmaxRows, Examples) {
  expect_near(softmax_rows(Tensor{{0, 0}}), Tensor{{0.5, 0.5}}, 1e-15);
  expect_near(softmax_rows(Tensor{{5, 5}}), Tensor{{0.5, 0.5}}, 1e-15);
  expect_near(softmax_rows(Tensor{{0, std::log(3.0)}}), Tensor{{0.25, 0.75}}, 1e-15);
}

TEST(SoftmaxRows, RowsSumToOneAndShiftInvariant) {
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> shift(-50.0, 50.0);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor m = random_tensor(1 + trial % 5, 1 + trial % 7, gen, -50.0, 50.0);
    const Tensor s = softmax_rows(m);
    for (std::size_t r = 0; r < s.rows(); ++r) {
      double sum = 0.0;
      for (double v : s.row(r)) {
        EXPECT_GT(v, 0.0);
        EXPECT_LE(v, 1.0);
        sum += v;
      }
      EXPECT_NEAR(sum, 1.0, 1e-9);
    }
    Tensor shifted = m;
    const double c = shift(gen);
    for (double& v : shifted.data()) v += c;
    expect_near(softmax_rows(shifted), s, 1e-12);
  }
}

TEST(Relu, Examples) {
  EXPECT_EQ(relu(Tensor{{1, -2}}), (Tensor{{1, 0}}));
  EXPECT_EQ(relu(Tensor{{-1, -2}, {-0.5, -3}}), Tensor::zeros(2, 2));
  std::mt19937_64 gen(5);
  const Tensor x = random_tensor(4, 4, gen);
  EXPECT_EQ(relu(relu(x)), relu(x));
}

TEST(MeanRows, Examples) {
  EXPECT_EQ(mean_rows(Tensor{{0, 0}, {2, 4}}), (Tensor{{1, 2}}));
  EXPECT_EQ(mean_rows(Tensor{{1.5, -2}}), (Tensor{{1.5, -2}}));
  const Tensor r{{0.25, -3.5, 7}};
  EXPECT_EQ(mean_rows(concat_rows({r, r, r, r})), r);
  EXPECT_THROW(mean_rows(Tensor(0, 3)), EmptyInputError);
}

TEST(Concat, ShapesAndOrder) {
  const std::size_t d = 5, n = 3;
  const Tensor v(1, d, 1.0), p(n, d, 2.0);
  const Tensor rows = concat_rows({v, p});
  EXPECT_EQ(rows.rows(), n + 1);
  EXPECT_EQ(rows.cols(), d);
  EXPECT_EQ(rows(0, 0), 1.0);
  EXPECT_EQ(rows(1, 0), 2.0);

  const Tensor cols = concat_cols({v, Tensor(1, d, 3.0)});
  EXPECT_EQ(cols.rows(), 1u);
  EXPECT_EQ(cols.cols(), 2 * d);
  EXPECT_EQ(cols(0, d - 1), 1.0);
  EXPECT_EQ(cols(0, d), 3.0);

  EXPECT_EQ(concat_rows({p}), p);
  EXPECT_THROW(concat_rows({v, Tensor(1, d + 1)}), ShapeError);
  EXPECT_THROW(concat_cols({v, Tensor(2, d)}), ShapeError);
}

TEST(Backward, SumOfMatmulGradient) {
  Tape tape;
  const Tensor a_val{{1, 2}, {3, 4}}, b_val{{5, 6}, {7, 8}};
  Var a = tape.leaf(a_val), b = tape.leaf(b_val);
  Var c = matmul(a, b);
  tape.backward(c, Tensor::ones(2, 2));
  // d sum(AB) / dA = 1 B^T: every row is the row sums of B.
  EXPECT_EQ(tape.grad(a), (Tensor{{11, 15}, {11, 15}}));
  // d sum(AB) / dB = A^T 1: every column is the row sums of A^T.
  EXPECT_EQ(tape.grad(b), (Tensor{{4, 4}, {6, 6}}));
}

TEST(Backward, ConstantReceivesZeroGradient) {
  Tape tape;
  Var w = tape.leaf(Tensor{{1, 2}});
  Var x = tape.constant(Tensor{{3}, {4}});
  Var y = matmul(w, x);
  tape.backward(y);
  EXPECT_EQ(tape.grad(x), Tensor::zeros(2, 1));
  EXPECT_EQ(tape.grad(w), (Tensor{{3, 4}}));
}

TEST(Backward, UsageErrors) {
  Tape tape;
  Var dangling;
  EXPECT_THROW(tape.backward(dangling, Tensor(1, 1)), UsageError);
  Var x = tape.leaf(Tensor{{1}});
  EXPECT_THROW(tape.grad(x), UsageError);
  EXPECT_THROW(tape.backward(x, Tensor(2, 2)), ShapeError);
}

TEST(Backward, SoftmaxMatchesFiniteDifferences) {
  std::mt19937_64 gen(17);
  const Tensor x0 = random_tensor(3, 4, gen);
  const Tensor weights = random_tensor(3, 4, gen);
  Tape tape;
  Var x = tape.leaf(x0);
  Var y = softmax_rows(x);
  tape.backward(y, weights);
  const Tensor numeric = finite_diff([&](const Tensor& p) { return sum(hadamard(softmax_rows(p), weights)); }, x0, 1e-5);
  const auto cmp = compare_gradients(tape.grad(x), numeric, {1e-6, 1e-9, 1e-6});
  EXPECT_TRUE(cmp.ok()) << "max rel err " << cmp.max_rel_err << ", max abs err " << cmp.max_abs_err;
}

TEST(Backward, DeterministicAcrossPasses) {
  std::mt19937_64 gen(23);
  Tape tape;
  Var a = tape.leaf(random_tensor(3, 3, gen));
  Var b = tape.leaf(random_tensor(3, 2, gen));
  Var out = mean_rows(tanh(matmul(softmax_rows(a), b)));
  tape.backward(out);
  const Tensor ga = tape.grad(a), gb = tape.grad(b);
  tape.backward(out);
  EXPECT_EQ(tape.grad(a), ga);
  EXPECT_EQ(tape.grad(b), gb);
}

TEST(FiniteDiff, Examples) {
  const Tensor g = finite_diff([](const Tensor& x) { return x[0] * x[0]; }, Tensor{{3}}, 1e-5);
  EXPECT_NEAR(g[0], 6.0, 1e-6);

  const Tensor w{{0.5, -2, 3}};
  const Tensor lin = finite_diff([&](const Tensor& x) { return sum(hadamard(x, w)); }, Tensor{{1, 2, 3}}, 1e-3);
  expect_near(lin, w, 1e-10);

  EXPECT_THROW(finite_diff([](const Tensor&) { return 0.0; }, Tensor{{1}}, 0.0), std::invalid_argument);
}

TEST(FiniteDiff, AgreesWithBackwardOnComposite) {
  std::mt19937_64 gen(29);
  const Tensor a0 = random_tensor(2, 3, gen), b0 = random_tensor(3, 3, gen);
  auto f = [&](const Tensor& a) { return sum(mean_rows(relu(matmul(a, b0)))); };
  Tape tape;
  Var a = tape.leaf(a0);
  Var out = mean_rows(relu(matmul(a, tape.constant(b0))));
  tape.backward(out);
  const auto cmp = compare_gradients(tape.grad(a), finite_diff(f, a0, 1e-5));
  EXPECT_TRUE(cmp.ok()) << cmp.max_rel_err;
}

// Every differentiable primitive against central differences, h = 1e-5,
// on seeded inputs in [-1, 1].
struct PrimitiveCase {
  const char* name;
  std::function<Var(Tape&, const std::vector<Var>&)> taped;
  std::function<Tensor(const std::vector<Tensor>&)> plain;
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
};

class PrimitiveGradient : public ::testing::TestWithParam<int> {};

std::vector<PrimitiveCase> primitive_cases() {
  using V = std::vector<Var>;
  using T = std::vector<Tensor>;
  return {
      {"matmul", [](Tape&, const V& v) { return matmul(v[0], v[1]); },
       [](const T& t) { return matmul(t[0], t[1]); }, {{3, 4}, {4, 2}}},
      {"transpose", [](Tape&, const V& v) { return transpose(v[0]); },
       [](const T& t) { return transpose(t[0]); }, {{3, 2}}},
      {"softmax_rows", [](Tape&, const V& v) { return softmax_rows(v[0]); },
       [](const T& t) { return softmax_rows(t[0]); }, {{3, 5}}},
      {"relu", [](Tape&, const V& v) { return relu(v[0]); }, [](const T& t) { return relu(t[0]); }, {{4, 4}}},
      {"tanh", [](Tape&, const V& v) { return tanh(v[0]); }, [](const T& t) { return tanh(t[0]); }, {{2, 3}}},
      {"sigmoid", [](Tape&, const V& v) { return sigmoid(v[0]); },
       [](const T& t) { return sigmoid(t[0]); }, {{2, 3}}},
      {"mean_rows", [](Tape&, const V& v) { return mean_rows(v[0]); },
       [](const T& t) { return mean_rows(t[0]); }, {{4, 3}}},
      {"concat_rows", [](Tape&, const V& v) { return concat_rows({v[0], v[1]}); },
       [](const T& t) { return concat_rows({t[0], t[1]}); }, {{1, 3}, {2, 3}}},
      {"concat_cols", [](Tape&, const V& v) { return concat_cols({v[0], v[1]}); },
       [](const T& t) { return concat_cols({t[0], t[1]}); }, {{2, 1}, {2, 3}}},
      {"add", [](Tape&, const V& v) { return add(v[0], v[1]); }, [](const T& t) { return add(t[0], t[1]); },
       {{2, 2}, {2, 2}}},
      {"sub", [](Tape&, const V& v) { return sub(v[0], v[1]); }, [](const T& t) { return sub(t[0], t[1]); },
       {{2, 2}, {2, 2}}},
      {"hadamard", [](Tape&, const V& v) { return hadamard(v[0], v[1]); },
       [](const T& t) { return hadamard(t[0], t[1]); }, {{2, 3}, {2, 3}}},
      {"scale", [](Tape&, const V& v) { return scale(v[0], -1.7); },
       [](const T& t) { return scale(t[0], -1.7); }, {{2, 2}}},
      {"one_minus", [](Tape&, const V& v) { return one_minus(v[0]); },
       [](const T& t) { return one_minus(t[0]); }, {{1, 4}}},
      {"row_of", [](Tape&, const V& v) { return row_of(v[0], 2); },
       [](const T& t) { return row_of(t[0], 2); }, {{4, 3}}},
      {"cross_entropy", [](Tape&, const V& v) { return cross_entropy(v[0], 3); },
       [](const T& t) { return cross_entropy(t[0], 3); }, {{1, 6}}},
      {"add_n", [](Tape&, const V& v) { return add_n(std::span<const Var>(v)); },
       [](const T& t) { return add_n(std::span<const Tensor>(t)); }, {{1, 2}, {1, 2}, {1, 2}}},
  };
}

TEST_P(PrimitiveGradient, MatchesCentralDifferences) {
  const auto pc = primitive_cases()[static_cast<std::size_t>(GetParam())];
  SCOPED_TRACE(pc.name);
  std::mt19937_64 gen(100 + static_cast<unsigned>(GetParam()));
  std::vector<Tensor> inputs;
  for (auto [r, c] : pc.shapes) {
    Tensor t = random_tensor(r, c, gen);
    if (std::string(pc.name) == "relu")
      for (double& v : t.data())
        if (std::abs(v) <= 1e-3) v = 0.5;
    inputs.push_back(t);
  }
  const Tensor out_shape = pc.plain(inputs);
  const Tensor weights = random_tensor(out_shape.rows(), out_shape.cols(), gen);

  Tape tape;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.leaf(t));
  Var out = pc.taped(tape, vars);
  tape.backward(out, weights);

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto f = [&](const Tensor& probe) {
      auto args = inputs;
      args[i] = probe;
      return sum(hadamard(pc.plain(args), weights));
    };
    const auto cmp = compare_gradients(tape.grad(vars[i]), finite_diff(f, inputs[i], 1e-5));
    EXPECT_TRUE(cmp.ok()) << "input " << i << ": max rel " << cmp.max_rel_err << ", max abs " << cmp.max_abs_err;
  }
}

INSTANTIATE_TEST_SUITE_P(AllPrimitives, PrimitiveGradient,
                         ::testing::Range(0, static_cast<int>(primitive_cases().size())),
                         [](const auto& info) { return std::string(primitive_cases()[info.param].name); });

TEST(Tape, CorruptedAdjointIsDetected) {
  std::mt19937_64 gen(41);
  const Tensor x0 = random_tensor(2, 3, gen);
  Tape tape;
  Var x = tape.leaf(x0);
  tape.corrupt_adjoint_for_testing(OpKind::Tanh);
  tape.backward(tanh(x));
  const Tensor numeric = finite_diff([](const Tensor& p) { return sum(tanh(p)); }, x0, 1e-5);
  EXPECT_FALSE(compare_gradients(tape.grad(x), numeric).ok());
}

}  // namespace
}  // namespace caattn
