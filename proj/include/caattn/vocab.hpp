#ifndef CAATTN_VOCAB_HPP_
#define CAATTN_VOCAB_HPP_

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "caattn/detail/binary_io.hpp"

namespace caattn {

inline std::vector<std::string> split_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

/// Token table with fixed reserved ids: pad=0, bos=1, eos=2, unk=3.
class Vocab {
 public:
  static constexpr std::size_t kPad = 0, kBos = 1, kEos = 2, kUnk = 3;

  Vocab() : Vocab(std::vector<std::string>{}) {}

  /// `words` are the non-reserved tokens in index order.
  explicit Vocab(const std::vector<std::string>& words) {
    for (const char* r : {"<pad>", "<bos>", "<eos>", "<unk>"}) add(r);
    for (const auto& w : words) add(w);
  }

  /// Tokens seen at least `min_freq` times, most frequent first, ties by
  /// lexicographic order.
  static Vocab from_corpus(const std::vector<std::vector<std::string>>& reports, std::size_t min_freq) {
    std::map<std::string, std::size_t> freq;
    for (const auto& r : reports)
      for (const auto& t : r) ++freq[t];
    std::vector<std::pair<std::string, std::size_t>> items(freq.begin(), freq.end());
    std::stable_sort(items.begin(), items.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> words;
    for (const auto& [w, f] : items)
      if (f >= min_freq) words.push_back(w);
    return Vocab(words);
  }

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  const std::string& token(std::size_t id) const { return tokens_.at(id); }

  std::size_t id(const std::string& tok) const {
    auto it = index_.find(tok);
    return it == index_.end() ? kUnk : it->second;
  }

  /// bos + ids + eos.
  std::vector<std::size_t> encode(const std::vector<std::string>& words) const {
    std::vector<std::size_t> ids{kBos};
    for (const auto& w : words) ids.push_back(id(w));
    ids.push_back(kEos);
    return ids;
  }

  /// Drops reserved markers other than unk.
  std::vector<std::string> decode(const std::vector<std::size_t>& ids) const {
    std::vector<std::string> out;
    for (auto i : ids)
      if (i != kPad && i != kBos && i != kEos) out.push_back(token(i));
    return out;
  }

  void save(const std::filesystem::path& path) const {
    std::string text;
    for (const auto& t : tokens_) text += t + "\n";
    detail::write_file(path, std::vector<char>(text.begin(), text.end()));
  }

  static Vocab load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(ParseError::Kind::Io, "cannot open vocab " + path.string());
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) lines.push_back(line);
    return from_lines(lines, path.string());
  }

  static Vocab from_lines(const std::vector<std::string>& lines, const std::string& source = "vocab") {
    const Vocab reserved;
    if (lines.size() < 4) throw ParseError(ParseError::Kind::Malformed, source + ": missing reserved tokens");
    for (std::size_t i = 0; i < 4; ++i) {
      if (lines[i] != reserved.tokens_[i]) {
        throw ParseError(ParseError::Kind::Malformed,
                         source + ": line " + std::to_string(i + 1) + " must be " + reserved.tokens_[i]);
      }
    }
    return Vocab(std::vector<std::string>(lines.begin() + 4, lines.end()));
  }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  void add(const std::string& tok) {
    if (index_.count(tok)) throw std::invalid_argument("duplicate vocab token " + tok);
    index_.emplace(tok, tokens_.size());
    tokens_.push_back(tok);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace caattn

#endif  // CAATTN_VOCAB_HPP_
