#ifndef CAATTN_CORPUS_HPP_
#define CAATTN_CORPUS_HPP_

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "caattn/features.hpp"
#include "caattn/vocab.hpp"

namespace caattn {

/// One corpus row with its patch features loaded.
struct Instance {
  std::string id;
  std::string feature_file;
  std::vector<std::string> report;
  bool normal = true;
  std::vector<std::string> tags;
  RawFeatures raw;
};

inline std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(ParseError::Kind::Io, "cannot open " + path.string());
  std::vector<nlohmann::json> rows;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty()) continue;
    try {
      rows.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(ParseError::Kind::Malformed,
                       path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

/// Loads `<dir>/<split>.jsonl` and the feature file of every row.
inline std::vector<Instance> load_split(const std::filesystem::path& dir, const std::string& split) {
  std::vector<Instance> out;
  for (const auto& row : read_jsonl(dir / (split + ".jsonl"))) {
    Instance inst;
    try {
      inst.id = row.at("id").get<std::string>();
      inst.feature_file = row.at("feature_file").get<std::string>();
      inst.report = split_tokens(row.at("report").get<std::string>());
      inst.normal = row.at("normal").get<bool>();
      inst.tags = row.at("tags").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(ParseError::Kind::Malformed, split + ".jsonl: " + e.what());
    }
    inst.raw = load_features(dir / inst.feature_file, inst.id);
    out.push_back(std::move(inst));
  }
  return out;
}

/// Reports keyed by id, as written by `generate`.
struct GeneratedReport {
  std::string id;
  std::vector<std::string> report;
};

inline void write_reports(const std::filesystem::path& path, const std::vector<GeneratedReport>& reports) {
  std::string text;
  for (const auto& r : reports) {
    nlohmann::ordered_json row;
    row["id"] = r.id;
    row["report"] = join_tokens(r.report);
    text += row.dump() + "\n";
  }
  detail::write_file(path, std::vector<char>(text.begin(), text.end()));
}

inline std::vector<GeneratedReport> read_reports(const std::filesystem::path& path) {
  std::vector<GeneratedReport> out;
  for (const auto& row : read_jsonl(path)) {
    try {
      out.push_back({row.at("id").get<std::string>(), split_tokens(row.at("report").get<std::string>())});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(ParseError::Kind::Malformed, path.string() + ": " + e.what());
    }
  }
  return out;
}

}  // namespace caattn

#endif  // CAATTN_CORPUS_HPP_
