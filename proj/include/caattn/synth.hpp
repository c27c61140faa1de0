#ifndef CAATTN_SYNTH_HPP_
#define CAATTN_SYNTH_HPP_

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "caattn/features.hpp"
#include "caattn/rng.hpp"
#include "caattn/synth_spec.hpp"
#include "caattn/vocab.hpp"

namespace caattn {

namespace synth_detail {

inline const std::vector<std::string>& view_sentences() {
  static const std::vector<std::string> s{
      "frontal view of the chest .",
      "lateral view of the chest .",
      "portable frontal view of the chest .",
      "upright lateral view of the chest .",
  };
  return s;
}

// Index 0 contradicts cardiomegaly and is dropped when that tag is present.
inline const std::vector<std::string>& normal_sentences() {
  static const std::vector<std::string> s{
      "the heart size is within normal limits .",
      "the lungs are clear .",
      "the mediastinal contour is unremarkable .",
      "the osseous structures are intact .",
      "the pulmonary vasculature is normal .",
  };
  return s;
}

inline const std::string& closing_sentence() {
  static const std::string s = "no acute cardiopulmonary abnormality .";
  return s;
}

// Parallel to synth_tags(); each sentence contains its tag as the trigger.
inline const std::vector<std::string>& finding_sentences() {
  static const std::vector<std::string> s{
      "the cardiac silhouette is enlarged consistent with cardiomegaly .",
      "there is a small left pleural effusion .",
      "a small nodule is seen in the right upper lobe .",
      "there is patchy opacity at the left base .",
      "a small right apical pneumothorax is present .",
  };
  return s;
}

inline void append(std::vector<std::string>& dst, const std::string& sentence) {
  for (auto& t : split_tokens(sentence)) dst.push_back(std::move(t));
}

}  // namespace synth_detail

/// Lexicon used by the tag labeler: each tag triggers on its own name.
inline std::vector<std::pair<std::string, std::vector<std::string>>> synth_tag_lexicon() {
  std::vector<std::pair<std::string, std::vector<std::string>>> lex;
  for (const auto& t : synth_tags()) lex.push_back({t, {t}});
  return lex;
}

inline std::string synth_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "syn-%05zu", index);
  return buf;
}

/// Deterministic instance for (global_seed, index).
///
/// Normality is assigned by a seeded golden-ratio sequence rather than
/// independent coin flips, so any run of consecutive indices has an
/// abnormal fraction close to `abnormal_rate`.
inline InstanceSpec gen_instance(std::uint64_t global_seed, std::size_t index, double abnormal_rate,
                                 const SynthConfig& cfg = {}) {
  if (!(abnormal_rate >= 0.0 && abnormal_rate <= 1.0)) {
    throw std::invalid_argument("abnormal_rate must lie in [0, 1]");
  }
  InstanceSpec spec;
  spec.id = synth_id(index);
  spec.index = index;
  spec.world_seed = global_seed;
  spec.seed = mix_seed(global_seed, index + 1);
  Rng rng(spec.seed);

  const double phase = Rng(mix_seed(global_seed, 0xab)).uniform();
  const double u = std::fmod(phase + static_cast<double>(index) * 0.6180339887498949, 1.0);
  spec.normal = !(u < abnormal_rate);
  spec.orientation = rng.below(cfg.orientations);

  const auto& tags = synth_tags();
  std::vector<std::size_t> tag_ids;
  if (!spec.normal) {
    const std::size_t count = rng.bernoulli(cfg.second_tag_rate) ? 2 : 1;
    tag_ids = rng.sample_without_replacement(tags.size(), count);
    std::sort(tag_ids.begin(), tag_ids.end());
    for (auto t : tag_ids) spec.tags.push_back(tags[t]);
    AbnormalBlock blk;
    blk.length = std::min(cfg.block_length, cfg.patches);
    blk.start = rng.below(cfg.patches - blk.length + 1);
    blk.shift = cfg.shift;
    spec.abnormal_block = blk;
  }

  using namespace synth_detail;
  append(spec.report, view_sentences()[spec.orientation % view_sentences().size()]);
  const bool cardiomegaly = std::find(spec.tags.begin(), spec.tags.end(), "cardiomegaly") != spec.tags.end();
  const std::size_t first = cardiomegaly ? 1 : 0;
  auto picks = rng.sample_without_replacement(normal_sentences().size() - first, 2);
  std::sort(picks.begin(), picks.end());
  for (auto p : picks) append(spec.report, normal_sentences()[p + first]);
  if (spec.normal) {
    append(spec.report, closing_sentence());
  } else {
    for (auto t : tag_ids) append(spec.report, finding_sentences()[t]);
  }
  return spec;
}

struct CorpusSplit {
  std::size_t train = 0, val = 0, test = 0;
};

/// 70/10/20 split by index order.
inline CorpusSplit split_sizes(std::size_t size) {
  CorpusSplit s;
  s.train = size * 7 / 10;
  s.val = size / 10;
  s.test = size - s.train - s.val;
  return s;
}

struct SynthSummary {
  CorpusSplit split;
  std::size_t abnormal = 0;
  std::size_t vocab_size = 0;
};

/// Writes train/val/test JSONL, one FMAT file per instance, vocab.txt and a
/// synth.json manifest into `out_dir`.
inline SynthSummary gen_corpus(std::uint64_t global_seed, std::size_t size, double abnormal_rate,
                               const SynthConfig& cfg, const std::filesystem::path& out_dir) {
  if (size < 10) throw std::invalid_argument("corpus size must be at least 10");
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir / "features", ec);
  if (ec) throw std::runtime_error("cannot create " + (out_dir / "features").string() + ": " + ec.message());

  const SyntheticWorld world(global_seed, cfg);
  SynthSummary summary;
  summary.split = split_sizes(size);
  std::string jsonl[3];
  std::vector<std::vector<std::string>> train_reports;

  for (std::size_t i = 0; i < size; ++i) {
    const InstanceSpec spec = gen_instance(global_seed, i, abnormal_rate, cfg);
    const std::string rel = "features/" + spec.id + ".fmat";
    save_features(out_dir / rel, featurize_synthetic(spec, cfg, world).patches);
    nlohmann::ordered_json row;
    row["id"] = spec.id;
    row["feature_file"] = rel;
    row["report"] = join_tokens(spec.report);
    row["normal"] = spec.normal;
    row["tags"] = spec.tags;
    const int split = i < summary.split.train ? 0 : i < summary.split.train + summary.split.val ? 1 : 2;
    jsonl[split] += row.dump() + "\n";
    if (split == 0) train_reports.push_back(spec.report);
    if (!spec.normal) ++summary.abnormal;
  }
  const char* names[3] = {"train.jsonl", "val.jsonl", "test.jsonl"};
  for (int s = 0; s < 3; ++s)
    detail::write_file(out_dir / names[s], std::vector<char>(jsonl[s].begin(), jsonl[s].end()));

  const Vocab vocab = Vocab::from_corpus(train_reports, cfg.min_token_freq);
  vocab.save(out_dir / "vocab.txt");
  summary.vocab_size = vocab.size();

  nlohmann::ordered_json meta;
  meta["seed"] = global_seed;
  meta["size"] = size;
  meta["abnormal_rate"] = abnormal_rate;
  meta["patches"] = cfg.patches;
  meta["grid_width"] = cfg.grid_width;
  meta["raw_dim"] = cfg.raw_dim;
  meta["orientations"] = cfg.orientations;
  meta["prototype_scale"] = cfg.prototype_scale;
  meta["noise_std"] = cfg.noise_std;
  meta["block_length"] = cfg.block_length;
  meta["shift"] = cfg.shift;
  meta["signature_bias"] = cfg.signature_bias;
  meta["second_tag_rate"] = cfg.second_tag_rate;
  meta["min_token_freq"] = cfg.min_token_freq;
  const std::string text = meta.dump(2) + "\n";
  detail::write_file(out_dir / "synth.json", std::vector<char>(text.begin(), text.end()));
  return summary;
}

struct SynthManifest {
  std::uint64_t seed = 0;
  std::size_t size = 0;
  double abnormal_rate = 0.0;
  SynthConfig config;
};

/// Reads synth.json so that instance specs can be regenerated from a corpus.
inline SynthManifest load_synth_manifest(const std::filesystem::path& corpus_dir) {
  const auto bytes = detail::read_file(corpus_dir / "synth.json");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(ParseError::Kind::Malformed, "synth.json: " + std::string(e.what()));
  }
  SynthManifest m;
  m.seed = j.at("seed").get<std::uint64_t>();
  m.size = j.at("size").get<std::size_t>();
  m.abnormal_rate = j.at("abnormal_rate").get<double>();
  auto& c = m.config;
  c.patches = j.at("patches");
  c.grid_width = j.at("grid_width");
  c.raw_dim = j.at("raw_dim");
  c.orientations = j.at("orientations");
  c.prototype_scale = j.at("prototype_scale");
  c.noise_std = j.at("noise_std");
  c.block_length = j.at("block_length");
  c.shift = j.at("shift");
  c.signature_bias = j.at("signature_bias");
  c.second_tag_rate = j.at("second_tag_rate");
  c.min_token_freq = j.at("min_token_freq");
  return m;
}

}  // namespace caattn

#endif  // CAATTN_SYNTH_HPP_
