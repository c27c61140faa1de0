#include <cstring>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "caattn/features.hpp"
#include "test_util.hpp"

namespace caattn {
namespace {

using test::expect_near;
using test::random_tensor;

TEST(Project, FullScaleShape) {
  Rng rng(1);
  const RawFeatures raw{"img", rng.uniform_tensor(49, 2048, -1, 1)};
  const Tensor W = init_projection(2048, 512, rng);
  const Tensor V = project(raw, W);
  EXPECT_EQ(V.rows(), 49u);
  EXPECT_EQ(V.cols(), 512u);
}

TEST(Project, IdentityProjectionKeepsPatches) {
  std::mt19937_64 gen(2);
  const RawFeatures raw{"img", random_tensor(5, 3, gen)};
  EXPECT_EQ(project(raw, Tensor::identity(3)), raw.patches);
}

TEST(Project, HandChosenCaseMatchesTripleLoop) {
  const Tensor patches{{1, 2, 3}, {-1, 0, 4}};
  const Tensor W{{0.5, -1}, {2, 0}, {0, 3}};
  expect_near(project(patches, W), test::reference_matmul(patches, W), 1e-15);
  expect_near(project(patches, W), Tensor{{4.5, 8}, {-0.5, 13}}, 1e-15);
}

TEST(Project, ShapeMismatch) {
  EXPECT_THROW(project(Tensor(2, 3), Tensor(4, 2)), ShapeError);
}

TEST(GlobalPool, Examples) {
  EXPECT_EQ(global_pool(Tensor{{1, 2}}), (Tensor{{1, 2}}));
  EXPECT_EQ(global_pool(Tensor{{0, 0}, {2, 4}}), (Tensor{{1, 2}}));
  std::mt19937_64 gen(3);
  const Tensor V = random_tensor(7, 5, gen);
  EXPECT_EQ(global_pool(V), mean_rows(V));
  EXPECT_THROW(global_pool(Tensor(0, 4)), EmptyInputError);
}

TEST(Features, PoolingCommutesWithProjection) {
  std::mt19937_64 gen(4);
  for (int trial = 0; trial < 25; ++trial) {
    const Tensor patches = random_tensor(6, 9, gen), W = random_tensor(9, 4, gen);
    expect_near(global_pool(project(patches, W)), project(global_pool(patches), W), 1e-9);
  }
}

TEST(Features, GridGlobalIsMeanOfV) {
  Rng rng(5);
  const RawFeatures raw{"a", rng.uniform_tensor(4, 6, -1, 1)};
  const FeatureGrid g = make_grid(raw, init_projection(6, 3, rng));
  expect_near(g.v_hat, mean_rows(g.V), 1e-9);
  EXPECT_EQ(g.d(), 3u);
  EXPECT_EQ(g.image_id, "a");
}

TEST(Features, InitProjectionWithinBounds) {
  Rng rng(6);
  const Tensor W = init_projection(16, 8, rng);
  for (double v : W.data()) EXPECT_LE(std::abs(v), 0.25);
  Rng again(6);
  EXPECT_EQ(init_projection(16, 8, again), W);
}

TEST(Features, StackViewsRowConcatenates) {
  const RawFeatures a{"p", Tensor{{1, 2}}}, b{"p-lateral", Tensor{{3, 4}, {5, 6}}};
  const RawFeatures s = stack_views(a, b);
  EXPECT_EQ(s.image_id, "p");
  EXPECT_EQ(s.patches, (Tensor{{1, 2}, {3, 4}, {5, 6}}));
}

TEST(FeatureFile, RoundTripFullScaleShape) {
  const auto dir = test::scratch_dir("fmat_full");
  Rng rng(7);
  Tensor patches = rng.uniform_tensor(49, 2048, -3, 3);
  for (double& v : patches.data()) v = static_cast<float>(v);
  save_features(dir / "x.fmat", patches);
  const RawFeatures raw = load_features(dir / "x.fmat");
  EXPECT_EQ(raw.image_id, "x");
  EXPECT_EQ(raw.patches.rows(), 49u);
  EXPECT_EQ(raw.patches.cols(), 2048u);
  EXPECT_EQ(raw.patches, patches);
  EXPECT_EQ(std::filesystem::file_size(dir / "x.fmat"), 12u + 49u * 2048u * 4u);
}

TEST(FeatureFile, SingleValueLittleEndianLayout) {
  const std::vector<char> bytes = encode_features(Tensor{{7.0}});
  ASSERT_EQ(bytes.size(), 16u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "FMAT");
  const unsigned char expected[12] = {1, 0, 0, 0, 1, 0, 0, 0, 0x00, 0x00, 0xe0, 0x40};
  EXPECT_EQ(std::memcmp(bytes.data() + 4, expected, 12), 0);
  EXPECT_EQ(decode_features(bytes, "mem").patches, (Tensor{{7.0}}));
}

ParseError::Kind kind_of(const std::vector<char>& bytes, std::string* message = nullptr) {
  try {
    decode_features(bytes, "mem");
  } catch (const ParseError& e) {
    if (message) *message = e.what();
    return e.kind();
  }
  ADD_FAILURE() << "expected a parse error";
  return ParseError::Kind::Io;
}

TEST(FeatureFile, DistinctParseErrors) {
  const std::vector<char> good = encode_features(Tensor{{1, 2}, {3, 4}});

  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_EQ(kind_of(bad_magic), ParseError::Kind::BadMagic);

  auto truncated = good;
  truncated.resize(truncated.size() - 3);
  std::string msg;
  EXPECT_EQ(kind_of(truncated, &msg), ParseError::Kind::Truncated);
  EXPECT_NE(msg.find("expected 16 bytes"), std::string::npos) << msg;
  EXPECT_NE(msg.find("got 13"), std::string::npos) << msg;

  auto nonfinite = good;
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(nonfinite.data() + 12 + 4, &nan, 4);
  EXPECT_EQ(kind_of(nonfinite), ParseError::Kind::NonFinite);

  auto inf = good;
  const float pinf = std::numeric_limits<float>::infinity();
  std::memcpy(inf.data() + 12, &pinf, 4);
  EXPECT_EQ(kind_of(inf), ParseError::Kind::NonFinite);

  EXPECT_EQ(kind_of(std::vector<char>{'F', 'M'}), ParseError::Kind::BadMagic);
}

TEST(FeatureFile, MissingFileIsIoError) {
  try {
    load_features("/nonexistent/caattn/none.fmat");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.kind(), ParseError::Kind::Io);
  }
}

InstanceSpec abnormal_spec(std::uint64_t seed, double shift) {
  InstanceSpec s;
  s.id = "spec";
  s.world_seed = 9;
  s.seed = seed;
  s.normal = false;
  s.orientation = 1;
  s.tags = {"nodule"};
  s.abnormal_block = AbnormalBlock{4, 4, shift};
  return s;
}

TEST(Featurize, Deterministic) {
  const SynthConfig cfg;
  const InstanceSpec s = abnormal_spec(3, 1.5);
  EXPECT_EQ(featurize_synthetic(s, cfg).patches, featurize_synthetic(s, cfg).patches);
  auto other = s;
  other.seed = 4;
  EXPECT_NE(featurize_synthetic(other, cfg).patches, featurize_synthetic(s, cfg).patches);
}

TEST(Featurize, NormalInstanceIsPrototypePlusNoise) {
  SynthConfig cfg;
  cfg.noise_std = 0.0;
  InstanceSpec s;
  s.world_seed = 9;
  s.seed = 1;
  s.orientation = 2;
  const SyntheticWorld world(9, cfg);
  Tensor proto = world.prototypes[2];
  for (double& v : proto.data()) v = static_cast<float>(v);
  EXPECT_EQ(featurize_synthetic(s, cfg).patches, proto);
}

double row_mean(const Tensor& t, std::size_t r) {
  double s = 0.0;
  for (double v : t.row(r)) s += v;
  return s / static_cast<double>(t.cols());
}

TEST(Featurize, ShiftedBlockRowsHaveLargerMeans) {
  const SynthConfig cfg;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const InstanceSpec abnormal = abnormal_spec(seed, 3.0);
    InstanceSpec base = abnormal;
    base.abnormal_block.reset();
    const Tensor a = featurize_synthetic(abnormal, cfg).patches;
    const Tensor b = featurize_synthetic(base, cfg).patches;
    double block = 0.0, rest = 0.0;
    for (std::size_t r = 0; r < a.rows(); ++r) {
      const bool inside = r >= 4 && r < 8;
      if (inside) {
        EXPECT_GT(row_mean(a, r), row_mean(b, r)) << "seed " << seed << " row " << r;
        block += row_mean(a, r) / 4.0;
      } else {
        EXPECT_EQ(row_mean(a, r), row_mean(b, r));
        rest += row_mean(a, r) / static_cast<double>(a.rows() - 4);
      }
    }
    EXPECT_GT(block, rest) << "seed " << seed;
  }
}

}  // namespace
}  // namespace caattn
