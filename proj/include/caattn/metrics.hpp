#ifndef CAATTN_METRICS_HPP_
#define CAATTN_METRICS_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace caattn {

using Tokens = std::vector<std::string>;
using TagLexicon = std::vector<std::pair<std::string, std::vector<std::string>>>;

namespace metrics_detail {

inline std::map<Tokens, std::size_t> ngram_counts(const Tokens& s, std::size_t n) {
  std::map<Tokens, std::size_t> counts;
  if (s.size() < n) return counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++counts[Tokens(s.begin() + static_cast<std::ptrdiff_t>(i), s.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return counts;
}

inline void check_corpus(std::size_t candidates, std::size_t references, const char* what) {
  if (candidates == 0) throw std::invalid_argument(std::string(what) + ": empty corpus");
  if (candidates != references) {
    throw std::invalid_argument(std::string(what) + ": " + std::to_string(candidates) + " candidates but " +
                                std::to_string(references) + " references");
  }
}

}  // namespace metrics_detail

/// Corpus BLEU-1..4 with one reference per candidate. Clipped n-gram counts
/// and lengths are summed over the corpus before taking ratios.
inline std::array<double, 4> bleu(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references) {
  metrics_detail::check_corpus(candidates.size(), references.size(), "bleu");
  std::array<double, 4> matches{}, totals{};
  double cand_len = 0.0, ref_len = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    cand_len += static_cast<double>(candidates[i].size());
    ref_len += static_cast<double>(references[i].size());
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto c = metrics_detail::ngram_counts(candidates[i], n);
      const auto r = metrics_detail::ngram_counts(references[i], n);
      for (const auto& [gram, count] : c) {
        auto it = r.find(gram);
        if (it != r.end()) matches[n - 1] += static_cast<double>(std::min(count, it->second));
        totals[n - 1] += static_cast<double>(count);
      }
    }
  }
  std::array<double, 4> out{};
  if (cand_len == 0.0) return out;
  const double bp = cand_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t k = 1; k <= 4; ++k) {
    const double p = totals[k - 1] > 0.0 ? matches[k - 1] / totals[k - 1] : 0.0;
    if (p == 0.0) zero = true;
    if (zero) {
      out[k - 1] = 0.0;
      continue;
    }
    log_sum += std::log(p);
    out[k - 1] = bp * std::exp(log_sum / static_cast<double>(k));
  }
  return out;
}

inline std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline constexpr double kRougeBeta = 1.2;

inline double rouge_l_pair(const Tokens& candidate, const Tokens& reference) {
  const std::size_t lcs = lcs_length(candidate, reference);
  if (lcs == 0) return 0.0;
  const double p = static_cast<double>(lcs) / static_cast<double>(candidate.size());
  const double r = static_cast<double>(lcs) / static_cast<double>(reference.size());
  const double b2 = kRougeBeta * kRougeBeta;
  return (1.0 + b2) * p * r / (r + b2 * p);
}

/// Mean of per-pair LCS F-measures.
inline double rouge_l(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references) {
  metrics_detail::check_corpus(candidates.size(), references.size(), "rouge_l");
  double s = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) s += rouge_l_pair(candidates[i], references[i]);
  return s / static_cast<double>(candidates.size());
}

struct Efficacy {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Tags whose trigger tokens occur in `report`.
inline std::set<std::string> label_tags(const Tokens& report, const TagLexicon& lexicon) {
  std::set<std::string> out;
  const std::set<std::string> words(report.begin(), report.end());
  for (const auto& [tag, triggers] : lexicon)
    for (const auto& t : triggers)
      if (words.count(t)) {
        out.insert(tag);
        break;
      }
  return out;
}

/// Micro-averaged precision/recall/F1 over (instance, tag) pairs; any ratio
/// with a zero denominator is 0.
inline Efficacy tag_efficacy(const std::vector<Tokens>& predicted_reports,
                             const std::vector<std::vector<std::string>>& gold_tags, const TagLexicon& lexicon) {
  if (lexicon.empty()) throw std::invalid_argument("tag_efficacy: empty tag lexicon");
  if (predicted_reports.size() != gold_tags.size()) {
    throw std::invalid_argument("tag_efficacy: report and gold counts differ");
  }
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < predicted_reports.size(); ++i) {
    const auto pred = label_tags(predicted_reports[i], lexicon);
    const std::set<std::string> gold(gold_tags[i].begin(), gold_tags[i].end());
    for (const auto& t : pred) (gold.count(t) ? tp : fp) += 1;
    for (const auto& t : gold)
      if (!pred.count(t)) fn += 1;
  }
  Efficacy e;
  e.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  e.recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  e.f1 = e.precision + e.recall > 0 ? 2.0 * e.precision * e.recall / (e.precision + e.recall) : 0.0;
  return e;
}

struct EvalReport {
  std::array<double, 4> bleu{};
  double rouge_l = 0.0;
  Efficacy efficacy;
  std::size_t count = 0;
};

inline EvalReport evaluate(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references,
                           const std::vector<std::vector<std::string>>& gold_tags, const TagLexicon& lexicon) {
  EvalReport r;
  r.bleu = bleu(candidates, references);
  r.rouge_l = rouge_l(candidates, references);
  r.efficacy = tag_efficacy(candidates, gold_tags, lexicon);
  r.count = candidates.size();
  return r;
}

inline const char* kEvalHeader = "B-1\tB-2\tB-3\tB-4\tM\tR-L\tP\tR\tF1";

/// One TSV row matching kEvalHeader; METEOR is not computed and reads "n/a".
inline std::string eval_row(const EvalReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%.6f\t%.6f\t%.6f\t%.6f\tn/a\t%.6f\t%.6f\t%.6f\t%.6f", r.bleu[0], r.bleu[1],
                r.bleu[2], r.bleu[3], r.rouge_l, r.efficacy.precision, r.efficacy.recall, r.efficacy.f1);
  return buf;
}

}  // namespace caattn

#endif  // CAATTN_METRICS_HPP_
