#ifndef CAATTN_EXPERIMENT_HPP_
#define CAATTN_EXPERIMENT_HPP_

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "caattn/corpus.hpp"
#include "caattn/metrics.hpp"
#include "caattn/model.hpp"
#include "caattn/pool.hpp"
#include "caattn/synth.hpp"

namespace caattn {

/// One train-then-evaluate run on a corpus already loaded in memory.
struct ExperimentData {
  std::vector<Instance> train;
  std::vector<Instance> test;
  Vocab vocab;
  TagLexicon lexicon;
};

inline ExperimentData load_experiment_data(const std::filesystem::path& corpus_dir,
                                           const std::string& eval_split = "test") {
  return {load_split(corpus_dir, "train"), load_split(corpus_dir, eval_split),
          Vocab::load(corpus_dir / "vocab.txt"), synth_tag_lexicon()};
}

struct RunResult {
  EvalReport eval;
  std::vector<double> losses;
  double seconds = 0.0;
};

inline std::size_t count_normals(const std::vector<Instance>& corpus) {
  return static_cast<std::size_t>(std::count_if(corpus.begin(), corpus.end(), [](const auto& i) { return i.normal; }));
}

/// Pool of min(pool_size, available normals) built under the model's
/// initial projection, seeded by the model seed.
inline NormalityPool experiment_pool(const ModelConfig& mc, const std::vector<Instance>& train,
                                     std::size_t pool_size = kDefaultPoolSize) {
  const std::size_t n = std::min(pool_size, count_normals(train));
  return build_pool(train, initial_projection(mc), n, mc.seed);
}

inline RunResult run_experiment(const ExperimentData& data, const ModelConfig& mc,
                                std::size_t pool_size = kDefaultPoolSize) {
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult trained = train(init_model(mc, data.vocab), data.train, experiment_pool(mc, data.train, pool_size));
  std::vector<Tokens> cands, refs;
  std::vector<std::vector<std::string>> gold;
  for (const auto& inst : data.test) {
    cands.push_back(greedy_decode(trained.model, inst.raw, trained.pool));
    refs.push_back(inst.report);
    gold.push_back(inst.tags);
  }
  RunResult r;
  r.eval = evaluate(cands, refs, gold, data.lexicon);
  r.losses = std::move(trained.losses);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw EmptyInputError("median of nothing");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

// ---------------------------------------------------------------------------
// Ablation over the contrastive block: Baseline, DA only, DA + AA with a
// sweep over the number of aggregation heads.
// ---------------------------------------------------------------------------

struct AblationSetting {
  std::string label;
  CaMode mode = CaMode::Full;
  std::size_t heads = 6;
};

inline std::vector<AblationSetting> default_ablation_settings(const std::vector<std::size_t>& sweep = {1, 2, 4, 6, 8, 10},
                                                              std::size_t da_heads = 6) {
  std::vector<AblationSetting> s{{"Baseline", CaMode::Off, da_heads}, {"w/ DA", CaMode::DifferentiateOnly, da_heads}};
  for (auto n : sweep) s.push_back({"w/ DA+AA", CaMode::Full, n});
  return s;
}

struct AblationRow {
  AblationSetting setting;
  std::vector<EvalReport> per_seed;
  EvalReport mean;
  double b4_std = 0.0;  // across seeds
};

enum class SweepTrend { MonotoneThenDeclining, Flat, Other };

inline std::string to_string(SweepTrend t) {
  switch (t) {
    case SweepTrend::MonotoneThenDeclining: return "monotone-then-declining";
    case SweepTrend::Flat: return "flat";
    case SweepTrend::Other: return "other";
  }
  return "?";
}

struct AblationResult {
  std::vector<AblationRow> rows;
  SweepTrend trend = SweepTrend::Other;
  double noise = 0.0;  // tolerance used when classifying the sweep
};

inline EvalReport mean_report(const std::vector<EvalReport>& rs) {
  EvalReport m;
  for (const auto& r : rs) {
    for (std::size_t k = 0; k < 4; ++k) m.bleu[k] += r.bleu[k];
    m.rouge_l += r.rouge_l;
    m.efficacy.precision += r.efficacy.precision;
    m.efficacy.recall += r.efficacy.recall;
    m.efficacy.f1 += r.efficacy.f1;
    m.count = r.count;
  }
  const double n = static_cast<double>(rs.size());
  for (auto& b : m.bleu) b /= n;
  m.rouge_l /= n;
  m.efficacy.precision /= n;
  m.efficacy.recall /= n;
  m.efficacy.f1 /= n;
  return m;
}

/// Classifies a sequence of scores. Steps smaller than `noise` count as
/// ties. Flat: overall range within noise. Monotone-then-declining: rises
/// (allowing ties) to a peak and never rises again afterwards.
inline SweepTrend classify_sweep(const std::vector<double>& y, double noise) {
  if (y.empty()) return SweepTrend::Other;
  const auto [lo, hi] = std::minmax_element(y.begin(), y.end());
  if (*hi - *lo <= noise) return SweepTrend::Flat;
  const std::size_t peak = static_cast<std::size_t>(hi - y.begin());
  for (std::size_t i = 1; i <= peak; ++i)
    if (y[i] < y[i - 1] - noise) return SweepTrend::Other;
  for (std::size_t i = peak + 1; i < y.size(); ++i)
    if (y[i] > y[i - 1] + noise) return SweepTrend::Other;
  return SweepTrend::MonotoneThenDeclining;
}

using AblationProgress = std::function<void(const AblationSetting&, std::uint64_t seed, const RunResult&)>;

/// Trains every setting for every seed and averages the metrics. The sweep
/// trend is judged on mean BLEU-4 of the DA+AA rows, with two standard
/// errors of the across-seed spread as the noise floor.
inline AblationResult run_ablation(const ExperimentData& data, const ModelConfig& base,
                                   const std::vector<std::uint64_t>& seeds,
                                   const std::vector<AblationSetting>& settings = default_ablation_settings(),
                                   std::size_t pool_size = kDefaultPoolSize, const AblationProgress& progress = {}) {
  if (seeds.empty()) throw std::invalid_argument("run_ablation: no seeds");
  AblationResult out;
  std::vector<double> sweep, errors;
  for (const auto& s : settings) {
    AblationRow row{s, {}, {}, 0.0};
    for (auto seed : seeds) {
      ModelConfig mc = base;
      mc.ca_mode = s.mode;
      mc.heads = s.heads;
      mc.seed = seed;
      auto r = run_experiment(data, mc, pool_size);
      if (progress) progress(s, seed, r);
      row.per_seed.push_back(r.eval);
    }
    row.mean = mean_report(row.per_seed);
    double var = 0.0;
    for (const auto& r : row.per_seed) var += std::pow(r.bleu[3] - row.mean.bleu[3], 2);
    row.b4_std = row.per_seed.size() > 1 ? std::sqrt(var / static_cast<double>(row.per_seed.size() - 1)) : 0.0;
    if (s.mode == CaMode::Full) {
      sweep.push_back(row.mean.bleu[3]);
      errors.push_back(row.b4_std / std::sqrt(static_cast<double>(seeds.size())));
    }
    out.rows.push_back(std::move(row));
  }
  out.noise = errors.empty() ? 0.0 : 2.0 * *std::max_element(errors.begin(), errors.end());
  out.trend = classify_sweep(sweep, out.noise);
  return out;
}

inline std::string ablation_header() { return std::string("Setting\tn\t") + kEvalHeader; }

inline std::string ablation_tsv(const AblationResult& a) {
  std::string out = ablation_header() + "\n";
  for (const auto& r : a.rows) {
    const std::string n = r.setting.mode == CaMode::Off ? "-" : std::to_string(r.setting.heads);
    out += r.setting.label + "\t" + n + "\t" + eval_row(r.mean) + "\n";
  }
  return out;
}

}  // namespace caattn

#endif  // CAATTN_EXPERIMENT_HPP_
