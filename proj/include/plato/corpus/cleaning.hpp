#pragma once

#include <array>
#include <cctype>
#include <cstddef>
#include <functional>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "plato/corpus/message_tree.hpp"

namespace plato::corpus {

// Removal conditions, checked in this order. A node matching any of them is
// dropped together with its whole subtree.
enum class CleaningRule : std::size_t {
  kTokenCount = 0,      // fewer than 2 or more than 128 BPE tokens
  kLength,              // a word over 30 characters or message over 1024
  kAlphabetic,          // under 70% alphabetic characters
  kUrl,                 // contains a URL
  kSpecialString,       // r/, u/, &amp and configured extras
  kParentOverlap,       // near-copy of the parent text
  kRepeated,            // text occurs more than 100 times in the input
  kOffensive,           // contains a listed word
  kQuarantined,         // channel is quarantined
  kBot,                 // author is a known bot
};

inline constexpr std::size_t kRuleCount = 10;

inline constexpr std::array<std::string_view, kRuleCount> kRuleNames{
    "token_count", "length",    "alphabetic", "url",         "special_string",
    "parent_overlap", "repeated", "offensive", "quarantined", "bot"};

struct RuleConfig {
  std::size_t min_tokens = 2;
  std::size_t max_tokens = 128;
  std::size_t max_word_chars = 30;
  std::size_t max_message_chars = 1024;
  double min_alphabetic_fraction = 0.7;
  std::vector<std::string> special_strings{"r/", "u/", "&amp"};
  // Unigram Jaccard overlap with the parent above this counts as a copy.
  double parent_overlap_threshold = 0.9;
  std::uint64_t repeat_threshold = 100;
  std::unordered_set<std::string> offensive_words;  // lower-case
  std::unordered_set<std::string> known_bots;
  std::unordered_set<std::string> quarantined_channels;
  // BPE token counter; when empty the token-count rule is skipped, which is
  // the first pass of the two-pass pipeline (vocabulary not yet trained).
  std::function<std::size_t(const std::string&)> token_count;
};

struct CleanReport {
  std::array<std::size_t, kRuleCount> removed_by_rule{};
  std::size_t nodes_before = 0;
  std::size_t nodes_after = 0;

  std::size_t total_removed() const {
    std::size_t s = 0;
    for (auto c : removed_by_rule) s += c;
    return s;
  }
  CleanReport& operator+=(const CleanReport& o) {
    for (std::size_t i = 0; i < kRuleCount; ++i) removed_by_rule[i] += o.removed_by_rule[i];
    nodes_before += o.nodes_before;
    nodes_after += o.nodes_after;
    return *this;
  }
};

struct CleanResult {
  MessageTree tree;
  CleanReport report;
};

namespace detail {

// Code points of a UTF-8 string; invalid bytes count as one code point each.
inline std::vector<char32_t> code_points(std::string_view s) {
  std::vector<char32_t> out;
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 1;
    if (i + len > s.size()) len = 1;
    char32_t cp = len == 1 ? c : c & (0x7F >> len);
    for (std::size_t k = 1; k < len; ++k) cp = (cp << 6) | (static_cast<unsigned char>(s[i + k]) & 0x3F);
    out.push_back(cp);
    i += len;
  }
  return out;
}

inline bool is_space(char32_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

inline std::vector<std::string> whitespace_words(std::string_view s) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : s) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) words.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

inline std::string lower(std::string s) {
  for (auto& ch : s) ch = char(std::tolower(static_cast<unsigned char>(ch)));
  return s;
}

// Lower-cased maximal runs of ASCII letters, digits and apostrophes.
inline std::vector<std::string> word_tokens(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || ch == '\'') {
      cur.push_back(char(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline double jaccard(const std::string& a, const std::string& b) {
  std::set<std::string> sa, sb;
  for (auto& w : whitespace_words(lower(a))) sa.insert(w);
  for (auto& w : whitespace_words(lower(b))) sb.insert(w);
  if (sa.empty() && sb.empty()) return 0.0;
  std::size_t inter = 0;
  for (const auto& w : sa) inter += sb.count(w);
  return double(inter) / double(sa.size() + sb.size() - inter);
}

inline const std::regex& url_pattern() {
  static const std::regex re(R"((https?|ftp)://|www\.)", std::regex::icase);
  return re;
}

}  // namespace detail

// Fraction of non-whitespace code points that are ASCII letters.
inline double alphabetic_fraction(std::string_view text) {
  std::size_t total = 0, alpha = 0;
  for (char32_t c : detail::code_points(text)) {
    if (detail::is_space(c)) continue;
    ++total;
    if (c < 0x80 && std::isalpha(static_cast<int>(c))) ++alpha;
  }
  return total == 0 ? 0.0 : double(alpha) / double(total);
}

// First violated rule for `node` given its parent's text, if any.
inline std::optional<CleaningRule> first_violation(const MessageNode& node,
                                                   const std::string* parent_text,
                                                   const RuleConfig& cfg) {
  if (cfg.token_count) {
    const std::size_t n = cfg.token_count(node.text);
    if (n < cfg.min_tokens || n > cfg.max_tokens) return CleaningRule::kTokenCount;
  }
  if (detail::code_points(node.text).size() > cfg.max_message_chars) return CleaningRule::kLength;
  for (const auto& w : detail::whitespace_words(node.text))
    if (detail::code_points(w).size() > cfg.max_word_chars) return CleaningRule::kLength;
  if (alphabetic_fraction(node.text) < cfg.min_alphabetic_fraction) return CleaningRule::kAlphabetic;
  if (std::regex_search(node.text, detail::url_pattern())) return CleaningRule::kUrl;
  for (const auto& s : cfg.special_strings)
    if (!s.empty() && node.text.find(s) != std::string::npos) return CleaningRule::kSpecialString;
  if (parent_text && detail::jaccard(node.text, *parent_text) > cfg.parent_overlap_threshold)
    return CleaningRule::kParentOverlap;
  if (node.repeat_count > cfg.repeat_threshold) return CleaningRule::kRepeated;
  if (!cfg.offensive_words.empty())
    for (const auto& w : detail::word_tokens(node.text))
      if (cfg.offensive_words.count(w)) return CleaningRule::kOffensive;
  if (node.quarantined || cfg.quarantined_channels.count(node.channel)) return CleaningRule::kQuarantined;
  if (node.known_bot || cfg.known_bots.count(node.author)) return CleaningRule::kBot;
  return std::nullopt;
}

// Prunes every node that violates a rule, along with its subtree. Nodes
// removed only because an ancestor was removed are counted under the
// ancestor's rule, so the counts always sum to the number of removed nodes.
inline CleanResult clean_tree(const MessageTree& tree, const RuleConfig& cfg) {
  validate_tree(tree);
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) index[tree.nodes[i].id] = i;

  // removal[i]: rule responsible for removing node i (own or inherited)
  std::vector<std::optional<CleaningRule>> removal(tree.nodes.size());
  std::vector<int> state(tree.nodes.size(), 0);  // 0 = pending, 1 = decided
  std::function<void(std::size_t)> decide = [&](std::size_t i) {
    if (state[i]) return;
    const auto& n = tree.nodes[i];
    const std::string* parent_text = nullptr;
    if (n.parent_id) {
      const std::size_t p = index.at(*n.parent_id);
      decide(p);
      if (removal[p]) {
        removal[i] = removal[p];
        state[i] = 1;
        return;
      }
      parent_text = &tree.nodes[p].text;
    }
    removal[i] = first_violation(n, parent_text, cfg);
    state[i] = 1;
  };

  CleanResult result;
  result.report.nodes_before = tree.nodes.size();
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    decide(i);
    if (removal[i]) {
      ++result.report.removed_by_rule[static_cast<std::size_t>(*removal[i])];
    } else {
      result.tree.nodes.push_back(tree.nodes[i]);
    }
  }
  result.report.nodes_after = result.tree.nodes.size();
  return result;
}

}  // namespace plato::corpus
