#pragma once

// Byte-pair-encoding vocabulary over whitespace-separated words. Each word is
// split into characters with an end-of-word marker on the last one; merges
// are learned greedily by pair frequency.

#include <algorithm>
#include <array>
#include <cstdio>
#include <set>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "plato/corpus/cleaning.hpp"
#include "plato/errors.hpp"

namespace plato::corpus {

inline constexpr std::string_view kEndOfWord = "</w>";

class Vocab {
 public:
  enum Special : int { kPad = 0, kBeginUtterance, kEndUtterance, kLatentMask, kMlmMask, kUnknown };
  static constexpr int kNumSpecial = 6;
  static constexpr std::array<std::string_view, kNumSpecial> kSpecialNames{
      "[PAD]", "[BOU]", "[EOU]", "[M]", "[MASK]", "[UNK]"};

  Vocab() {
    for (auto name : kSpecialNames) add_token(std::string(name));
  }

  // Builds the vocabulary from base symbols and ordered merges. Symbols use
  // the textual form, with "</w>" marking a word-final symbol.
  Vocab(const std::vector<std::string>& symbols,
        const std::vector<std::pair<std::string, std::string>>& merges)
      : Vocab() {
    for (const auto& s : symbols) {
      require(!index_.count(s), "vocab: duplicate base symbol " + s);
      add_token(s);
    }
    base_count_ = symbols.size();
    for (const auto& m : merges) add_merge(m.first, m.second);
  }

  std::size_t size() const { return tokens_.size(); }
  std::size_t base_symbol_count() const { return base_count_; }
  const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }
  const std::string& token(int id) const { return tokens_.at(std::size_t(id)); }
  static bool is_special(int id) { return id >= 0 && id < kNumSpecial; }

  int id_of(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnknown : it->second;
  }

  std::vector<int> encode(std::string_view text) const {
    std::vector<int> ids;
    for (const auto& word : detail::whitespace_words(text)) encode_word(word, ids);
    return ids;
  }

  std::size_t count_tokens(std::string_view text) const { return encode(text).size(); }

  // Concatenates token surfaces; word-final tokens are followed by a space
  // and special tokens are skipped.
  std::string decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
      if (is_special(id) || id < 0 || std::size_t(id) >= tokens_.size()) continue;
      const auto& t = tokens_[std::size_t(id)];
      if (ends_word(t)) {
        out.append(t, 0, t.size() - kEndOfWord.size());
        out.push_back(' ');
      } else {
        out += t;
      }
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
  }

  std::vector<std::string> base_symbols() const {
    return {tokens_.begin() + kNumSpecial, tokens_.begin() + std::ptrdiff_t(kNumSpecial + base_count_)};
  }

  // Header, base symbols (one per line), then merges (pair per line).
  void save(std::ostream& out) const {
    out << "#plato-bpe 1 symbols=" << base_count_ << " merges=" << merges_.size() << '\n';
    for (const auto& s : base_symbols()) out << s << '\n';
    for (const auto& [a, b] : merges_) out << a << ' ' << b << '\n';
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot write vocab file " + path);
    save(out);
  }

  static Vocab load(std::istream& in) {
    std::string header;
    if (!std::getline(in, header) || header.rfind("#plato-bpe 1 ", 0) != 0)
      throw LoadError("vocab: missing or unsupported header");
    std::size_t n_symbols = 0, n_merges = 0;
    if (std::sscanf(header.c_str(), "#plato-bpe 1 symbols=%zu merges=%zu", &n_symbols, &n_merges) != 2)
      throw LoadError("vocab: malformed header");
    std::vector<std::string> symbols;
    std::vector<std::pair<std::string, std::string>> merges;
    std::string line;
    for (std::size_t i = 0; i < n_symbols; ++i) {
      if (!std::getline(in, line) || line.empty()) throw LoadError("vocab: truncated symbol list");
      symbols.push_back(line);
    }
    for (std::size_t i = 0; i < n_merges; ++i) {
      if (!std::getline(in, line)) throw LoadError("vocab: truncated merge list");
      const auto sp = line.find(' ');
      if (sp == std::string::npos) throw LoadError("vocab: malformed merge line");
      merges.emplace_back(line.substr(0, sp), line.substr(sp + 1));
    }
    try {
      return Vocab(symbols, merges);
    } catch (const ContractViolation& e) {
      throw LoadError(e.what());
    }
  }

  static Vocab load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open vocab file " + path);
    return load(in);
  }

  static std::vector<std::string> split_word(std::string_view word) {
    std::vector<std::string> symbols;
    for (std::size_t i = 0; i < word.size();) {
      const auto c = static_cast<unsigned char>(word[i]);
      std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 1;
      len = std::min(len, word.size() - i);
      symbols.emplace_back(word.substr(i, len));
      i += len;
    }
    if (!symbols.empty()) symbols.back() += kEndOfWord;
    return symbols;
  }

 private:
  static bool ends_word(const std::string& t) {
    return t.size() >= kEndOfWord.size() &&
           std::string_view(t).substr(t.size() - kEndOfWord.size()) == kEndOfWord;
  }

  void add_token(const std::string& t) {
    index_.emplace(t, int(tokens_.size()));
    tokens_.push_back(t);
  }

  void add_merge(const std::string& a, const std::string& b) {
    require(index_.count(a) && index_.count(b), "vocab: merge of unknown symbols " + a + " " + b);
    rank_.emplace(a + ' ' + b, merges_.size());
    merges_.emplace_back(a, b);
    const std::string joined = a + b;
    if (!index_.count(joined)) add_token(joined);
  }

  void encode_word(const std::string& word, std::vector<int>& ids) const {
    auto symbols = split_word(word);
    while (symbols.size() > 1) {
      std::size_t best_rank = SIZE_MAX;
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
        auto it = rank_.find(symbols[i] + ' ' + symbols[i + 1]);
        if (it != rank_.end() && it->second < best_rank) best_rank = it->second;
      }
      if (best_rank == SIZE_MAX) break;
      const auto& [a, b] = merges_[best_rank];
      std::vector<std::string> next;
      for (std::size_t i = 0; i < symbols.size(); ++i) {
        if (i + 1 < symbols.size() && symbols[i] == a && symbols[i + 1] == b) {
          next.push_back(a + b);
          ++i;
        } else {
          next.push_back(std::move(symbols[i]));
        }
      }
      symbols = std::move(next);
    }
    for (const auto& s : symbols) ids.push_back(id_of(s));
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  std::vector<std::pair<std::string, std::string>> merges_;
  std::unordered_map<std::string, std::size_t> rank_;
  std::size_t base_count_ = 0;
};

struct BpeTrainResult {
  Vocab vocab;
  // False when the corpus ran out of pairs before the target size.
  bool target_reached = true;
};

// Greedy BPE: repeatedly merge the most frequent adjacent pair (ties go to
// the lexicographically smallest merged string) until the vocabulary holds
// `target_size` tokens, specials included.
inline BpeTrainResult train_bpe(const std::vector<std::string>& corpus, std::size_t target_size) {
  require(!corpus.empty(), "train_bpe: empty corpus");
  std::map<std::string, std::uint64_t> word_freq;
  for (const auto& line : corpus)
    for (auto& w : detail::whitespace_words(line)) ++word_freq[w];
  require(!word_freq.empty(), "train_bpe: corpus has no words");

  std::vector<std::pair<std::vector<std::string>, std::uint64_t>> words;
  std::set<std::string> alphabet;
  for (const auto& [w, f] : word_freq) {
    auto symbols = Vocab::split_word(w);
    alphabet.insert(symbols.begin(), symbols.end());
    words.emplace_back(std::move(symbols), f);
  }
  require(target_size > alphabet.size() + Vocab::kNumSpecial,
          "train_bpe: target size must exceed alphabet plus special tokens");

  std::vector<std::pair<std::string, std::string>> merges;
  std::set<std::string> known(alphabet.begin(), alphabet.end());
  std::size_t vocab_size = Vocab::kNumSpecial + alphabet.size();
  BpeTrainResult result;
  while (vocab_size < target_size) {
    std::map<std::pair<std::string, std::string>, std::uint64_t> pair_freq;
    for (const auto& [symbols, f] : words)
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i) pair_freq[{symbols[i], symbols[i + 1]}] += f;
    if (pair_freq.empty()) {
      result.target_reached = false;
      break;
    }
    const std::pair<std::string, std::string>* best = nullptr;
    std::uint64_t best_f = 0;
    std::string best_joined;
    for (const auto& [pair, f] : pair_freq) {
      std::string joined = pair.first + pair.second;
      if (!best || f > best_f || (f == best_f && joined < best_joined)) {
        best = &pair;
        best_f = f;
        best_joined = std::move(joined);
      }
    }
    const auto [a, b] = *best;
    merges.emplace_back(a, b);
    if (known.insert(best_joined).second) ++vocab_size;
    for (auto& [symbols, f] : words) {
      std::vector<std::string> next;
      next.reserve(symbols.size());
      for (std::size_t i = 0; i < symbols.size(); ++i) {
        if (i + 1 < symbols.size() && symbols[i] == a && symbols[i + 1] == b) {
          next.push_back(best_joined);
          ++i;
        } else {
          next.push_back(std::move(symbols[i]));
        }
      }
      symbols = std::move(next);
    }
  }
  result.vocab = Vocab({alphabet.begin(), alphabet.end()}, merges);
  return result;
}

}  // namespace plato::corpus
