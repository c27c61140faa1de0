// caattn: synthetic data, pool building, training, generation, evaluation,
// gradient checking, inspection and ablation from the command line.
//
// Exit codes: 0 success, 1 usage, 2 data or parse error, 3 verification failure.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#if __has_include(<CLI11.hpp>)
#include <CLI11.hpp>
#else
#include <CLI/CLI.hpp>
#endif
#include <nlohmann/json.hpp>

#include "caattn/caattn.hpp"

namespace fs = std::filesystem;
using namespace caattn;

namespace {

constexpr int kUsage = 1;
constexpr int kData = 2;
constexpr int kVerify = 3;

struct Exit : std::runtime_error {
  Exit(int code, const std::string& what) : std::runtime_error(what), code(code) {}
  int code;
};

void log(const std::string& msg) { std::fprintf(stderr, "%s\n", msg.c_str()); }

std::string fmt(double v, int prec = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

// --- shared option plumbing --------------------------------------------------

struct Common {
  std::uint64_t seed = 0;
  std::string config;
  std::string out;
};

void add_common(CLI::App* sub, Common& c, bool out_required) {
  sub->add_option("--seed", c.seed, "Global seed");
  sub->add_option("--config", c.config, "key=value file; command-line flags take precedence")
      ->check(CLI::ExistingFile);
  auto* o = sub->add_option("--out", c.out, "Output path");
  if (out_required) o->required();
}

// Applies `key=value` lines to options of `sub` that were not given on the
// command line. Blank lines and lines starting with '#' are skipped.
void apply_config(CLI::App* sub, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Exit(kData, "cannot open config " + path);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Exit(kUsage, path + ":" + std::to_string(line_no) + ": expected key=value");
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r"), b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key == "config") throw Exit(kUsage, path + ": config files cannot include other config files");
    CLI::Option* opt = sub->get_option_no_throw("--" + key);
    if (!opt) throw Exit(kUsage, path + ":" + std::to_string(line_no) + ": unknown key '" + key + "' for " + sub->get_name());
    if (opt->count() > 0) continue;
    opt->add_result(value);
    try {
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw Exit(kUsage, path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

bool is_synthetic(const fs::path& corpus) { return fs::exists(corpus / "synth.json"); }

// Model dimensions shared by train and ablate.
struct ModelFlags {
  std::size_t d = 0;  // 0: 64 for synthetic corpora, 512 otherwise
  std::size_t heads = 6;
  std::size_t embed = 32;
  std::size_t hidden = 64;
  double lr = 2e-3;
  std::size_t steps = 2000;
  std::size_t max_len = 40;
};

void add_model_flags(CLI::App* sub, ModelFlags& m) {
  sub->add_option("--d", m.d, "Projected feature width (default 64 synthetic, 512 real)")->check(CLI::PositiveNumber);
  sub->add_option("--heads", m.heads, "Aggregate-attention heads")->check(CLI::PositiveNumber);
  sub->add_option("--embed", m.embed, "Token embedding width")->check(CLI::PositiveNumber);
  sub->add_option("--hidden", m.hidden, "GRU hidden width")->check(CLI::PositiveNumber);
  sub->add_option("--lr", m.lr, "Adam learning rate")->check(CLI::NonNegativeNumber);
  sub->add_option("--steps", m.steps, "Training steps (one instance each)");
  sub->add_option("--max-len", m.max_len, "Maximum generated tokens")->check(CLI::PositiveNumber);
}

ModelConfig model_config(const ModelFlags& f, const fs::path& corpus, std::size_t raw_dim, std::uint64_t seed) {
  ModelConfig mc;
  mc.raw_dim = raw_dim;
  mc.d = f.d ? f.d : (is_synthetic(corpus) ? 64 : 512);
  mc.heads = f.heads;
  mc.embed = f.embed;
  mc.hidden = f.hidden;
  mc.lr = f.lr;
  mc.steps = f.steps;
  mc.max_len = f.max_len;
  mc.seed = seed;
  return mc;
}

std::size_t raw_width(const std::vector<Instance>& corpus, const std::string& what) {
  if (corpus.empty()) throw Exit(kData, what + " is empty");
  const std::size_t w = corpus.front().raw.patches.cols();
  for (const auto& inst : corpus)
    if (inst.raw.patches.cols() != w)
      throw Exit(kData, inst.id + " has feature width " + std::to_string(inst.raw.patches.cols()) + ", expected " +
                            std::to_string(w));
  return w;
}

std::string default_pool_path(const std::string& checkpoint) { return checkpoint + ".pool"; }

NormalityPool pool_for(const Model& m, const std::string& pool_path, const std::string& checkpoint) {
  if (m.config.ca_mode == CaMode::Off) return {};
  const std::string p = pool_path.empty() ? default_pool_path(checkpoint) : pool_path;
  NormalityPool pool = load_pool(p);
  if (auto w = fingerprint_warning(pool, m.weights.W_I)) log("warning: " + *w);
  return pool;
}

TagLexicon load_lexicon(const std::string& path) {
  if (path.empty()) return synth_tag_lexicon();
  const auto bytes = detail::read_file(path);
  TagLexicon lex;
  try {
    const auto j = nlohmann::json::parse(bytes.begin(), bytes.end());
    for (const auto& [tag, words] : j.items()) lex.emplace_back(tag, words.get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(ParseError::Kind::Malformed, path + ": " + e.what());
  }
  return lex;
}

template <class T>
std::vector<T> parse_list(const std::string& s, const std::string& what) {
  std::vector<T> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(static_cast<T>(v));
    } catch (const std::logic_error&) {
      throw Exit(kUsage, what + ": '" + item + "' is not a non-negative integer");
    }
  }
  if (out.empty()) throw Exit(kUsage, what + " is empty");
  return out;
}

// --- subcommands ---------------------------------------------------------------

struct SynthArgs {
  Common c;
  std::size_t size = 300;
  double rate = 0.3;
  SynthConfig cfg;
};

int run_synth(const SynthArgs& a) {
  const auto s = gen_corpus(a.c.seed, a.size, a.rate, a.cfg, a.c.out);
  std::printf("wrote %zu instances to %s (train %zu, val %zu, test %zu; %zu abnormal; vocab %zu)\n", a.size,
              a.c.out.c_str(), s.split.train, s.split.val, s.split.test, s.abnormal, s.vocab_size);
  return 0;
}

struct PoolArgs {
  Common c;
  std::string corpus, split = "train", checkpoint;
  std::size_t size = kDefaultPoolSize;
  std::size_t d = 0;
};

int run_build_pool(const PoolArgs& a, bool size_given) {
  const auto corpus = load_split(a.corpus, a.split);
  Tensor W_I;
  if (!a.checkpoint.empty()) {
    W_I = load_checkpoint(a.checkpoint).weights.W_I;
  } else {
    ModelConfig mc;
    mc.raw_dim = raw_width(corpus, a.split + " split");
    mc.d = a.d ? a.d : (is_synthetic(a.corpus) ? 64 : 512);
    mc.seed = a.c.seed;
    W_I = initial_projection(mc);
  }
  std::size_t size = a.size;
  const std::size_t normals = count_normals(corpus);
  if (!size_given && normals < size) {
    log("note: only " + std::to_string(normals) + " normal instances; pool scaled down from " + std::to_string(size));
    size = normals;
  }
  const NormalityPool pool = build_pool(corpus, W_I, size, a.c.seed);
  save_pool(pool, a.c.out);
  const PoolStats st = pool_stats(pool);
  std::printf("pool %s: %zu x %zu, seed %llu, projection %s\n", a.c.out.c_str(), pool.size(), pool.d(),
              static_cast<unsigned long long>(pool.build_seed), to_hex(pool.projection_fingerprint).substr(0, 16).c_str());
  std::printf("nearest-duplicate distance %s\n", fmt(st.nearest_duplicate_distance).c_str());
  return 0;
}

struct TrainArgs {
  Common c;
  ModelFlags m;
  std::string corpus, pool, loss_log;
  bool no_ca = false, da_only = false;
  std::size_t refresh = 0;
  std::size_t pool_size = kDefaultPoolSize;
};

int run_train(const TrainArgs& a) {
  if (a.no_ca && a.da_only) throw Exit(kUsage, "--no-ca and --da-only are mutually exclusive");
  const auto corpus = load_split(a.corpus, "train");
  ModelConfig mc = model_config(a.m, a.corpus, raw_width(corpus, "train split"), a.c.seed);
  mc.ca_mode = a.no_ca ? CaMode::Off : a.da_only ? CaMode::DifferentiateOnly : CaMode::Full;
  mc.refresh_pool_every = a.refresh;
  const Model model = init_model(mc, Vocab::load(fs::path(a.corpus) / "vocab.txt"));

  NormalityPool pool;
  if (mc.ca_mode != CaMode::Off) {
    pool = a.pool.empty() ? experiment_pool(mc, corpus, a.pool_size) : load_pool(a.pool);
    if (pool.d() != mc.d)
      throw Exit(kData, "pool has d=" + std::to_string(pool.d()) + " but the model uses d=" + std::to_string(mc.d));
  }

  const std::string loss_path = a.loss_log.empty() ? a.c.out + ".loss.csv" : a.loss_log;
  std::ofstream loss_csv(loss_path);
  if (!loss_csv) throw Exit(kData, "cannot write " + loss_path);
  loss_csv << "step,loss\n";
  loss_csv.precision(17);
  const std::size_t every = std::max<std::size_t>(1, mc.steps / 10);
  auto res = train(model, corpus, std::move(pool), [&](std::size_t step, double loss) {
    loss_csv << step << ',' << loss << '\n';
    if ((step + 1) % every == 0) log("step " + std::to_string(step + 1) + "/" + std::to_string(mc.steps) + " loss " + fmt(loss, 4));
  });
  for (const auto& w : res.warnings) log("warning: " + w);
  save_checkpoint(res.model, a.c.out);
  if (mc.ca_mode != CaMode::Off) save_pool(res.pool, default_pool_path(a.c.out));
  std::printf("checkpoint %s (mode %s, %zu steps); loss log %s\n", a.c.out.c_str(), to_string(mc.ca_mode).c_str(),
              mc.steps, loss_path.c_str());
  return 0;
}

struct GenerateArgs {
  Common c;
  std::string checkpoint, corpus, split = "test", pool;
  std::size_t max_len = 0;
};

int run_generate(const GenerateArgs& a) {
  Model m = load_checkpoint(a.checkpoint);
  if (a.max_len) m.config.max_len = a.max_len;
  const NormalityPool pool = pool_for(m, a.pool, a.checkpoint);
  std::vector<GeneratedReport> out;
  for (const auto& inst : load_split(a.corpus, a.split)) out.push_back({inst.id, greedy_decode(m, inst.raw, pool)});
  std::sort(out.begin(), out.end(), [](const auto& x, const auto& y) { return x.id < y.id; });
  write_reports(a.c.out, out);
  std::printf("wrote %zu reports to %s\n", out.size(), a.c.out.c_str());
  return 0;
}

struct EvaluateArgs {
  Common c;
  std::string generated, corpus, split = "test", lexicon;
};

int run_evaluate(const EvaluateArgs& a) {
  const auto gold = load_split(a.corpus, a.split);
  std::map<std::string, Tokens> by_id;
  for (auto& r : read_reports(a.generated)) {
    if (!by_id.emplace(r.id, std::move(r.report)).second) throw Exit(kData, "duplicate id " + r.id + " in " + a.generated);
  }
  std::vector<Tokens> cands, refs;
  std::vector<std::vector<std::string>> tags;
  for (const auto& inst : gold) {
    auto it = by_id.find(inst.id);
    if (it == by_id.end()) throw Exit(kData, "no generated report for " + inst.id);
    cands.push_back(std::move(it->second));
    by_id.erase(it);
    refs.push_back(inst.report);
    tags.push_back(inst.tags);
  }
  if (!by_id.empty()) throw Exit(kData, "generated report for unknown id " + by_id.begin()->first);
  const EvalReport r = evaluate(cands, refs, tags, load_lexicon(a.lexicon));
  const std::string tsv = std::string(kEvalHeader) + "\n" + eval_row(r) + "\n";
  if (a.c.out.empty()) {
    std::fputs(tsv.c_str(), stdout);
  } else {
    std::ofstream(a.c.out) << tsv;
  }
  return 0;
}

struct GradcheckArgs {
  Common c;
  std::string dims, mode = "full", corrupt;
  double step = 1e-5;
};

OpKind op_from_name(const std::string& name) {
  for (int k = 0; k <= static_cast<int>(OpKind::AddN); ++k)
    if (name == op_name(static_cast<OpKind>(k))) return static_cast<OpKind>(k);
  throw Exit(kUsage, "unknown op '" + name + "' for --corrupt");
}

int run_gradcheck_cmd(const GradcheckArgs& a, bool seed_given) {
  GradcheckConfig gc;
  if (seed_given) gc.seed = a.c.seed;
  gc.step = a.step;
  gc.mode = ca_mode_from_string(a.mode);
  if (!a.corrupt.empty()) gc.corrupt = op_from_name(a.corrupt);
  const std::map<std::string, std::size_t*> keys{{"d", &gc.d},         {"n", &gc.heads},     {"np", &gc.pool},
                                                 {"ni", &gc.patches},  {"v", &gc.vocab},     {"raw", &gc.raw_dim},
                                                 {"e", &gc.embed},     {"h", &gc.hidden},    {"len", &gc.seq_len}};
  std::stringstream ss(a.dims);
  for (std::string kv; std::getline(ss, kv, ',');) {
    if (kv.empty()) continue;
    const auto eq = kv.find('=');
    const auto it = eq == std::string::npos ? keys.end() : keys.find(kv.substr(0, eq));
    if (it == keys.end()) throw Exit(kUsage, "--dims: bad entry '" + kv + "' (keys: d n np ni v raw e h len)");
    *it->second = parse_list<std::size_t>(kv.substr(eq + 1), "--dims " + it->first).front();
    if (*it->second == 0) throw Exit(kUsage, "--dims " + it->first + " must be positive");
  }
  if (gc.vocab < 5) throw Exit(kUsage, "--dims v must be at least 5");

  const GradcheckReport rep = run_gradcheck(gc);
  std::printf("%-22s %10s %12s %12s %s\n", "param", "entries", "max_rel", "max_abs", "ok");
  for (const auto& p : rep.params)
    std::printf("%-22s %10zu %12.3e %12.3e %s\n", p.name.c_str(), p.cmp.checked, p.cmp.max_rel_err, p.cmp.max_abs_err,
                p.cmp.ok() ? "yes" : "NO");
  const auto t = rep.total();
  std::printf("loss %.6f, min relu margin %.3e, %zu entries, %zu failures\n", rep.loss, rep.min_relu_margin, t.checked,
              t.failures);
  std::printf("%s\n", rep.ok() ? "PASS" : "FAIL");
  return rep.ok() ? 0 : kVerify;
}

struct InspectArgs {
  Common c;
  std::string checkpoint, corpus, id, pool;
  std::size_t top_k = 5, grid_width = 0;
  bool pgm = false;
};

int run_inspect(const InspectArgs& a) {
  const Model m = load_checkpoint(a.checkpoint);
  const NormalityPool pool = pool_for(m, a.pool, a.checkpoint);
  std::optional<Instance> inst;
  for (const char* split : {"train", "val", "test"}) {
    if (!fs::exists(fs::path(a.corpus) / (std::string(split) + ".jsonl"))) continue;
    for (auto& i : load_split(a.corpus, split))
      if (i.id == a.id) inst = std::move(i);
    if (inst) break;
  }
  if (!inst) throw Exit(kData, "no instance with id " + a.id + " in " + a.corpus);
  if (m.config.ca_mode == CaMode::Off) log("warning: model was trained without contrastive attention");

  const auto in = encode_instance(m, inst->raw, pool);
  const fs::path dir(a.c.out);
  fs::create_directories(dir);

  std::ofstream heads(dir / "head_weights.csv"), top(dir / "top_k.csv");
  heads << "head,pool_index,pool_id,weight\n";
  top << "head,rank,pool_index,pool_id,weight\n";
  heads.precision(9);
  top.precision(9);
  if (in.contrast && in.contrast->head_weights.size()) {
    const Tensor& hw = in.contrast->head_weights;
    for (std::size_t k = 0; k < hw.rows(); ++k) {
      std::vector<std::size_t> order(hw.cols());
      for (std::size_t j = 0; j < order.size(); ++j) {
        order[j] = j;
        heads << k << ',' << j << ',' << pool.ids[j] << ',' << hw(k, j) << '\n';
      }
      std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) { return hw(k, x) > hw(k, y); });
      for (std::size_t r = 0; r < std::min(a.top_k, order.size()); ++r)
        top << k << ',' << r + 1 << ',' << order[r] << ',' << pool.ids[order[r]] << ',' << hw(k, order[r]) << '\n';
    }
  } else {
    log("note: no aggregation head weights in mode " + to_string(m.config.ca_mode));
  }

  const std::size_t n = in.V.rows();
  std::size_t width = a.grid_width;
  if (!width && is_synthetic(a.corpus)) width = load_synth_manifest(a.corpus).config.grid_width;
  if (!width) width = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(std::sqrt(double(n)))));
  std::vector<double> sal(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < in.V.cols(); ++c) acc += std::pow(in.V_fused(i, c) - in.V(i, c), 2);
    sal[i] = std::sqrt(acc);
  }
  std::ofstream sal_csv(dir / "saliency.csv");
  sal_csv << "patch,row,col,saliency\n";
  sal_csv.precision(9);
  for (std::size_t i = 0; i < n; ++i) sal_csv << i << ',' << i / width << ',' << i % width << ',' << sal[i] << '\n';
  const std::size_t peak = static_cast<std::size_t>(std::max_element(sal.begin(), sal.end()) - sal.begin());

  if (a.pgm) {
    const std::size_t rows = (n + width - 1) / width;
    const double hi = sal[peak] > 0 ? sal[peak] : 1.0;
    std::ofstream img(dir / "saliency.pgm", std::ios::binary);
    img << "P5\n" << width << ' ' << rows << "\n255\n";
    for (std::size_t i = 0; i < rows * width; ++i)
      img.put(static_cast<char>(i < n ? static_cast<unsigned char>(std::lround(255.0 * sal[i] / hi)) : 0));
  }
  std::printf("%s: peak saliency at patch %zu (row %zu, col %zu) = %s; outputs in %s\n", a.id.c_str(), peak,
              peak / width, peak % width, fmt(sal[peak]).c_str(), dir.c_str());
  return 0;
}

struct AblateArgs {
  Common c;
  ModelFlags m;
  std::string corpus, seeds = "1,2,3", sweep = "1,2,4,6,8,10", split = "test";
  std::size_t pool_size = kDefaultPoolSize;
};

int run_ablate(const AblateArgs& a) {
  const auto data = load_experiment_data(a.corpus, a.split);
  const ModelConfig base = model_config(a.m, a.corpus, raw_width(data.train, "train split"), 0);
  const auto seeds = parse_list<std::uint64_t>(a.seeds, "--seeds");
  const auto sweep = parse_list<std::size_t>(a.sweep, "--sweep");
  const auto settings = default_ablation_settings(sweep, a.m.heads);
  const auto res = run_ablation(data, base, seeds, settings, a.pool_size, [](const auto& s, auto seed, const auto& r) {
    log(s.label + " n=" + std::to_string(s.heads) + " seed " + std::to_string(seed) + ": B-4 " + fmt(r.eval.bleu[3], 4) +
        " F1 " + fmt(r.eval.efficacy.f1, 4) + " (" + fmt(r.seconds, 1) + " s)");
  });
  const std::string tsv = ablation_tsv(res);
  if (a.c.out.empty()) {
    std::fputs(tsv.c_str(), stdout);
  } else {
    std::ofstream(a.c.out) << tsv;
  }
  std::fprintf(stderr, "trend over n: %s (noise %s)\n", to_string(res.trend).c_str(), fmt(res.noise).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive attention for report generation"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic corpus");
  add_common(s, synth.c, true);
  s->add_option("--size", synth.size, "Number of instances")->check(CLI::Range(10, 1000000));
  s->add_option("--rate", synth.rate, "Abnormal fraction")->check(CLI::Range(0.0, 1.0));
  s->add_option("--shift", synth.cfg.shift, "Abnormal block shift magnitude")->check(CLI::NonNegativeNumber);
  s->add_option("--noise-std", synth.cfg.noise_std, "Per-entry feature noise")->check(CLI::NonNegativeNumber);
  s->add_option("--raw-dim", synth.cfg.raw_dim, "Raw patch feature width")->check(CLI::PositiveNumber);

  PoolArgs pool;
  auto* p = app.add_subcommand("build-pool", "Build a normality pool from normal training instances");
  add_common(p, pool.c, true);
  p->add_option("--corpus", pool.corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  p->add_option("--split", pool.split, "Split to draw normals from");
  auto* pool_size = p->add_option("--size", pool.size, "Pool size N_P (default 1000, capped at the normals available)")
                        ->check(CLI::PositiveNumber);
  p->add_option("--d", pool.d, "Projected width (default 64 synthetic, 512 real)")->check(CLI::PositiveNumber);
  p->add_option("--checkpoint", pool.checkpoint, "Use this checkpoint's projection")->check(CLI::ExistingFile);

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model");
  add_common(t, tr.c, true);
  add_model_flags(t, tr.m);
  t->add_option("--corpus", tr.corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  t->add_option("--pool", tr.pool, "Normality pool (built from the training normals when omitted)")
      ->check(CLI::ExistingFile);
  t->add_option("--pool-size", tr.pool_size, "Pool size when building one")->check(CLI::PositiveNumber);
  t->add_option("--loss-log", tr.loss_log, "Per-step loss CSV (default <out>.loss.csv)");
  t->add_flag("--no-ca", tr.no_ca, "Disable contrastive attention");
  t->add_flag("--da-only", tr.da_only, "Differentiate attention only, random pool rows instead of aggregation");
  t->add_option("--refresh-pool-every", tr.refresh, "Re-project the pool every k steps (0: frozen)");

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Greedy-decode reports for a split");
  add_common(g, gen.c, true);
  g->add_option("--checkpoint", gen.checkpoint, "Checkpoint")->required()->check(CLI::ExistingFile);
  g->add_option("--corpus", gen.corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  g->add_option("--split", gen.split, "Split to decode");
  g->add_option("--pool", gen.pool, "Normality pool (default <checkpoint>.pool)");
  g->add_option("--max-len", gen.max_len, "Override the checkpoint's maximum length");

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Score generated reports against a split");
  add_common(e, ev.c, false);
  e->add_option("--generated", ev.generated, "JSONL of {id, report}")->required()->check(CLI::ExistingFile);
  e->add_option("--corpus", ev.corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  e->add_option("--split", ev.split, "Reference split");
  e->add_option("--lexicon", ev.lexicon, "JSON object tag -> trigger words (default: synthetic tags)")
      ->check(CLI::ExistingFile);

  GradcheckArgs gcs;
  auto* gc = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients at toy scale");
  add_common(gc, gcs.c, false);
  gc->add_option("--dims", gcs.dims, "Comma list of key=value from d n np ni v raw e h len, e.g. d=8,n=2");
  gc->add_option("--mode", gcs.mode, "full, da or off")->check(CLI::IsMember({"full", "da", "off"}));
  gc->add_option("--corrupt", gcs.corrupt, "Perturb the adjoint of one op kind (negative control)");
  gc->add_option("--step", gcs.step, "Central-difference step")->check(CLI::PositiveNumber);

  InspectArgs ins;
  auto* in = app.add_subcommand("inspect", "Dump head weights and patch saliency for one instance");
  add_common(in, ins.c, true);
  in->add_option("--checkpoint", ins.checkpoint, "Checkpoint")->required()->check(CLI::ExistingFile);
  in->add_option("--corpus", ins.corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  in->add_option("--id", ins.id, "Instance id")->required();
  in->add_option("--pool", ins.pool, "Normality pool (default <checkpoint>.pool)");
  in->add_option("--top-k", ins.top_k, "Pool entries listed per head")->check(CLI::PositiveNumber);
  in->add_option("--grid-width", ins.grid_width, "Patches per heatmap row (default: corpus grid, else sqrt(N_I))");
  in->add_flag("--pgm", ins.pgm, "Also write saliency.pgm");

  AblateArgs ab;
  auto* a = app.add_subcommand("ablate", "Baseline / DA / DA+AA ablation with a head-count sweep");
  add_common(a, ab.c, false);
  add_model_flags(a, ab.m);
  a->add_option("--corpus", ab.corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  a->add_option("--seeds", ab.seeds, "Comma-separated seeds");
  a->add_option("--sweep", ab.sweep, "Comma-separated head counts for DA+AA");
  a->add_option("--split", ab.split, "Evaluation split");
  a->add_option("--pool-size", ab.pool_size, "Pool size")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kUsage;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    if (auto* cfg = sub->get_option_no_throw("--config"); cfg && cfg->count()) apply_config(sub, cfg->as<std::string>());
    if (sub == s) return run_synth(synth);
    if (sub == p) return run_build_pool(pool, pool_size->count() > 0);
    if (sub == t) return run_train(tr);
    if (sub == g) return run_generate(gen);
    if (sub == e) return run_evaluate(ev);
    if (sub == gc) return run_gradcheck_cmd(gcs, sub->get_option("--seed")->count() > 0);
    if (sub == in) return run_inspect(ins);
    if (sub == a) return run_ablate(ab);
  } catch (const Exit& ex) {
    log("error: " + std::string(ex.what()));
    return ex.code;
  } catch (const UsageError& ex) {
    log("usage error: " + std::string(ex.what()));
    return kUsage;
  } catch (const InsufficientNormalsError& ex) {
    log("error: InsufficientNormals: " + std::string(ex.what()));
    return kData;
  } catch (const DivergenceError& ex) {
    log("error: " + std::string(ex.what()));
    return kData;
  } catch (const ParseError& ex) {
    log("parse error: " + std::string(ex.what()));
    return kData;
  } catch (const std::exception& ex) {
    log("error: " + std::string(ex.what()));
    return kData;
  }
  return kUsage;
}
