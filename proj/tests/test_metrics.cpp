#include <algorithm>
#include <cmath>
#include <random>
#include <unordered_map>

#include <gtest/gtest.h>

#include "caattn/metrics.hpp"
#include "caattn/vocab.hpp"

namespace caattn {
namespace {

Tokens toks(const std::string& s) { return split_tokens(s); }

// Independent corpus BLEU: n-grams keyed by joined strings.
std::array<double, 4> reference_bleu(const std::vector<Tokens>& cands, const std::vector<Tokens>& refs) {
  double match[4] = {}, total[4] = {}, c_len = 0, r_len = 0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    c_len += static_cast<double>(cands[i].size());
    r_len += static_cast<double>(refs[i].size());
    for (std::size_t n = 1; n <= 4; ++n) {
      std::unordered_map<std::string, int> c, r;
      auto key = [](const Tokens& t, std::size_t at, std::size_t n) {
        std::string k;
        for (std::size_t j = 0; j < n; ++j) k += t[at + j] + "\x1f";
        return k;
      };
      for (std::size_t j = 0; j + n <= cands[i].size(); ++j) ++c[key(cands[i], j, n)];
      for (std::size_t j = 0; j + n <= refs[i].size(); ++j) ++r[key(refs[i], j, n)];
      for (const auto& [k, v] : c) {
        match[n - 1] += std::min(v, r.count(k) ? r[k] : 0);
        total[n - 1] += v;
      }
    }
  }
  const double bp = c_len > r_len ? 1.0 : std::exp(1.0 - r_len / c_len);
  std::array<double, 4> out{};
  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t k = 0; k < 4; ++k) {
    if (match[k] == 0 || total[k] == 0) zero = true;
    if (!zero) log_sum += std::log(match[k] / total[k]);
    out[k] = zero ? 0.0 : bp * std::exp(log_sum / static_cast<double>(k + 1));
  }
  return out;
}

TEST(Bleu, IdenticalSentenceScoresOne) {
  const auto b = bleu({toks("a b c d")}, {toks("a b c d")});
  for (double v : b) EXPECT_NEAR(v, 1.0, 1e-12);
}

TEST(Bleu, ClippedUnigramPrecision) {
  const auto b = bleu({toks("a a a a")}, {toks("a b")});
  EXPECT_NEAR(b[0], 0.25, 1e-12);
  EXPECT_EQ(b[1], 0.0);
}

TEST(Bleu, BrevityPenalty) {
  const auto b = bleu({toks("a b")}, {toks("a b c d")});
  EXPECT_NEAR(b[0], std::exp(1.0 - 4.0 / 2.0), 1e-12);
  EXPECT_LT(b[0], 1.0);
}

TEST(Bleu, EmptyCorpusAndCountMismatch) {
  EXPECT_THROW(bleu({}, {}), std::invalid_argument);
  EXPECT_THROW(bleu({toks("a")}, {}), std::invalid_argument);
}

std::vector<Tokens> random_corpus(std::mt19937_64& gen, std::size_t n, std::size_t vocab) {
  std::uniform_int_distribution<std::size_t> len(1, 12), word(0, vocab - 1);
  std::vector<Tokens> out(n);
  for (auto& s : out) {
    const std::size_t l = len(gen);
    for (std::size_t i = 0; i < l; ++i) s.push_back("w" + std::to_string(word(gen)));
  }
  return out;
}

TEST(Bleu, MatchesIndependentCorpusComputation) {
  std::mt19937_64 gen(1);
  for (int trial = 0; trial < 50; ++trial) {
    const auto c = random_corpus(gen, 8, 4), r = random_corpus(gen, 8, 4);
    const auto a = bleu(c, r), b = reference_bleu(c, r);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(a[k], b[k], 1e-12) << "BLEU-" << k + 1;
  }
}

TEST(Bleu, InvariantUnderVocabularyRelabeling) {
  std::mt19937_64 gen(2);
  for (int trial = 0; trial < 30; ++trial) {
    const auto c = random_corpus(gen, 6, 5), r = random_corpus(gen, 6, 5);
    std::vector<std::string> image{"x", "y", "z", "u", "v"};
    std::shuffle(image.begin(), image.end(), gen);
    auto relabel = [&](std::vector<Tokens> corpus) {
      for (auto& s : corpus)
        for (auto& t : s) t = image[static_cast<std::size_t>(std::stoi(t.substr(1)))];
      return corpus;
    };
    const auto a = bleu(c, r), b = bleu(relabel(c), relabel(r));
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(a[k], b[k]);
  }
}

TEST(RougeL, Examples) {
  EXPECT_NEAR(rouge_l({toks("a b c")}, {toks("a b c")}), 1.0, 1e-12);
  EXPECT_EQ(lcs_length(toks("a b c"), toks("a c b")), 2u);
  EXPECT_NEAR(rouge_l({toks("a b c")}, {toks("a c b")}), 2.0 / 3.0, 1e-12);
  EXPECT_EQ(rouge_l({toks("a b")}, {toks("c d")}), 0.0);
  EXPECT_THROW(rouge_l({}, {}), std::invalid_argument);
}

TEST(RougeL, UnequalLengthsUseBeta) {
  // LCS 2, P = 2/2, R = 2/4.
  const double p = 1.0, r = 0.5, b2 = 1.2 * 1.2;
  EXPECT_NEAR(rouge_l_pair(toks("a b"), toks("a x b y")), (1 + b2) * p * r / (r + b2 * p), 1e-12);
}

TEST(RougeL, SelfScoreIsOne) {
  std::mt19937_64 gen(3);
  for (const auto& s : random_corpus(gen, 40, 6)) EXPECT_NEAR(rouge_l({s}, {s}), 1.0, 1e-12);
}

const TagLexicon kLexicon{{"A", {"alpha"}}, {"B", {"beta", "bravo"}}, {"C", {"gamma"}}};

TEST(TagEfficacy, Examples) {
  const Efficacy partial = tag_efficacy({toks("we see alpha here")}, {{"A", "B"}}, kLexicon);
  EXPECT_NEAR(partial.precision, 1.0, 1e-12);
  EXPECT_NEAR(partial.recall, 0.5, 1e-12);
  EXPECT_NEAR(partial.f1, 2.0 / 3.0, 1e-12);

  const Efficacy perfect = tag_efficacy({toks("alpha bravo"), toks("nothing"), toks("gamma")}, {{"A", "B"}, {}, {"C"}},
                                        kLexicon);
  EXPECT_EQ(perfect.precision, 1.0);
  EXPECT_EQ(perfect.recall, 1.0);
  EXPECT_EQ(perfect.f1, 1.0);

  const Efficacy none = tag_efficacy({toks("nothing at all")}, {{"A"}}, kLexicon);
  EXPECT_EQ(none.precision, 0.0);
  EXPECT_EQ(none.recall, 0.0);
  EXPECT_EQ(none.f1, 0.0);

  EXPECT_THROW(tag_efficacy({toks("a")}, {{}}, TagLexicon{}), std::invalid_argument);
}

TEST(TagEfficacy, InvariantUnderInstanceReordering) {
  std::mt19937_64 gen(4);
  const std::vector<std::string> words{"alpha", "beta", "gamma", "bravo", "x", "y"};
  const std::vector<std::string> tags{"A", "B", "C"};
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Tokens> reports(10);
    std::vector<std::vector<std::string>> gold(10);
    for (std::size_t i = 0; i < 10; ++i) {
      for (int k = 0; k < 3; ++k) reports[i].push_back(words[gen() % words.size()]);
      for (const auto& t : tags)
        if (gen() % 3 == 0) gold[i].push_back(t);
    }
    const Efficacy a = tag_efficacy(reports, gold, kLexicon);
    std::vector<std::size_t> perm(10);
    for (std::size_t i = 0; i < 10; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), gen);
    std::vector<Tokens> r2;
    std::vector<std::vector<std::string>> g2;
    for (auto p : perm) r2.push_back(reports[p]), g2.push_back(gold[p]);
    const Efficacy b = tag_efficacy(r2, g2, kLexicon);
    EXPECT_EQ(a.f1, b.f1);
    EXPECT_EQ(a.precision, b.precision);
    EXPECT_EQ(a.recall, b.recall);
  }
}

TEST(Evaluate, TsvRowLayout) {
  const auto report = evaluate({toks("a b c d")}, {toks("a b c d")}, {{}}, kLexicon);
  EXPECT_EQ(std::string(kEvalHeader), "B-1\tB-2\tB-3\tB-4\tM\tR-L\tP\tR\tF1");
  EXPECT_EQ(eval_row(report), "1.000000\t1.000000\t1.000000\t1.000000\tn/a\t1.000000\t0.000000\t0.000000\t0.000000");
  EXPECT_EQ(report.count, 1u);
}

}  // namespace
}  // namespace caattn
