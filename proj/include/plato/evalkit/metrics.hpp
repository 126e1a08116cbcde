#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "plato/errors.hpp"

namespace plato::evalkit {

inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::istringstream in{std::string(text)};
  for (std::string w; in >> w;) words.push_back(w);
  return words;
}

// Distinct n-grams (pooled over responses, never crossing a response
// boundary) divided by the total word count.
inline double distinct_n(const std::vector<std::string>& responses, std::size_t n) {
  require(n >= 1, "distinct_n: n must be positive");
  std::set<std::vector<std::string>> grams;
  std::size_t words = 0;
  bool long_enough = false;
  for (const auto& r : responses) {
    const auto w = split_words(r);
    words += w.size();
    if (w.size() < n) continue;
    long_enough = true;
    for (std::size_t i = 0; i + n <= w.size(); ++i) grams.insert({w.begin() + std::ptrdiff_t(i), w.begin() + std::ptrdiff_t(i + n)});
  }
  require(long_enough, "distinct_n: no response has " + std::to_string(n) + " words");
  return double(grams.size()) / double(words);
}

struct LabeledCandidateSet {
  std::vector<std::string> context;
  std::vector<std::string> candidates;
  std::vector<int> labels;  // 1 coherent, 0 not

  bool has_positive() const { return std::find(labels.begin(), labels.end(), 1) != labels.end(); }
};

struct RankingMetrics {
  double map = 0.0;
  double mrr = 0.0;
  double p_at_1 = 0.0;
  std::size_t sets = 0;     // sets averaged over
  std::size_t skipped = 0;  // sets without a positive
};

struct QueryMetrics {
  double ap = 0.0;
  double rr = 0.0;
  double p_at_1 = 0.0;
};

// Labels reordered by descending score; equal scores keep their order.
inline std::vector<int> ranked_labels(const std::vector<double>& scores, const std::vector<int>& labels) {
  require(scores.size() == labels.size(), "ranked_labels: size mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<int> out;
  for (auto i : order) out.push_back(labels[i]);
  return out;
}

// Average precision over positive positions, reciprocal rank of the first
// positive, and whether the top item is positive.
inline QueryMetrics query_metrics(const std::vector<int>& sorted_labels) {
  QueryMetrics q;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < sorted_labels.size(); ++i) {
    if (sorted_labels[i] != 1) continue;
    ++hits;
    q.ap += double(hits) / double(i + 1);
    if (hits == 1) q.rr = 1.0 / double(i + 1);
  }
  require(hits > 0, "query_metrics: no positive label");
  q.ap /= double(hits);
  q.p_at_1 = sorted_labels.front() == 1 ? 1.0 : 0.0;
  return q;
}

inline RankingMetrics aggregate(const std::vector<std::vector<int>>& sorted_label_lists) {
  RankingMetrics m;
  for (const auto& labels : sorted_label_lists) {
    if (labels.empty() || std::find(labels.begin(), labels.end(), 1) == labels.end()) {
      ++m.skipped;
      continue;
    }
    const auto q = query_metrics(labels);
    m.map += q.ap;
    m.mrr += q.rr;
    m.p_at_1 += q.p_at_1;
    ++m.sets;
  }
  require(m.sets > 0, "ranking_metrics: no set has a positive candidate");
  m.map /= double(m.sets);
  m.mrr /= double(m.sets);
  m.p_at_1 /= double(m.sets);
  return m;
}

using Scorer = std::function<double(const std::vector<std::string>& context, const std::string& response)>;

inline RankingMetrics ranking_metrics(const std::vector<LabeledCandidateSet>& sets, const Scorer& scorer) {
  std::vector<std::vector<int>> lists;
  for (const auto& s : sets) {
    require(s.candidates.size() == s.labels.size() && !s.candidates.empty(),
            "ranking_metrics: every set needs one label per candidate");
    if (!s.has_positive()) {
      lists.emplace_back();
      continue;
    }
    std::vector<double> scores;
    for (const auto& c : s.candidates) scores.push_back(scorer(s.context, c));
    lists.push_back(ranked_labels(scores, s.labels));
  }
  return aggregate(lists);
}

struct NamedScorer {
  std::string name;
  Scorer scorer;
};

struct ScorerRow {
  std::string name;
  RankingMetrics metrics;
};

inline std::vector<ScorerRow> compare_scorers(const std::vector<LabeledCandidateSet>& sets,
                                              const std::vector<NamedScorer>& scorers) {
  std::vector<ScorerRow> rows;
  for (const auto& s : scorers) rows.push_back({s.name, ranking_metrics(sets, s.scorer)});
  return rows;
}

inline std::string format_table(const std::vector<ScorerRow>& rows) {
  std::size_t width = 6;
  for (const auto& r : rows) width = std::max(width, r.name.size());
  std::ostringstream out;
  out << std::left << std::setw(int(width)) << "scorer" << std::right << std::setw(8) << "MAP" << std::setw(8)
      << "MRR" << std::setw(8) << "P@1" << "\n";
  out << std::fixed << std::setprecision(4);
  for (const auto& r : rows)
    out << std::left << std::setw(int(width)) << r.name << std::right << std::setw(8) << r.metrics.map
        << std::setw(8) << r.metrics.mrr << std::setw(8) << r.metrics.p_at_1 << "\n";
  return out.str();
}

inline nlohmann::ordered_json row_record(const ScorerRow& r) {
  nlohmann::ordered_json j;
  j["scorer"] = r.name;
  j["map"] = r.metrics.map;
  j["mrr"] = r.metrics.mrr;
  j["p_at_1"] = r.metrics.p_at_1;
  j["sets"] = r.metrics.sets;
  j["skipped"] = r.metrics.skipped;
  return j;
}

// Candidate sets as JSONL: {"context": [...], "candidates": [{"text", "label"}]}.
inline nlohmann::ordered_json set_record(const LabeledCandidateSet& s) {
  nlohmann::ordered_json j;
  j["context"] = s.context;
  j["candidates"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < s.candidates.size(); ++i)
    j["candidates"].push_back({{"text", s.candidates[i]}, {"label", s.labels[i]}});
  return j;
}

inline LabeledCandidateSet set_from_record(const nlohmann::json& j) {
  try {
    LabeledCandidateSet s;
    s.context = j.at("context").get<std::vector<std::string>>();
    for (const auto& c : j.at("candidates")) {
      s.candidates.push_back(c.at("text").get<std::string>());
      const int label = c.at("label").get<int>();
      if (label != 0 && label != 1) throw MalformedInput("candidate label must be 0 or 1");
      s.labels.push_back(label);
    }
    if (s.context.empty() || s.candidates.empty()) throw MalformedInput("candidate set needs a context and candidates");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw MalformedInput(std::string("candidate set: ") + e.what());
  }
}

inline void write_sets(std::ostream& out, const std::vector<LabeledCandidateSet>& sets) {
  for (const auto& s : sets) out << set_record(s).dump() << "\n";
}

inline std::vector<LabeledCandidateSet> read_sets(std::istream& in) {
  std::vector<LabeledCandidateSet> sets;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      sets.push_back(set_from_record(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw MalformedInput("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const MalformedInput& e) {
      throw MalformedInput("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return sets;
}

}  // namespace plato::evalkit
