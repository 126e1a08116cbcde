#pragma once

#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "plato/errors.hpp"

namespace plato::corpus {

struct MessageNode {
  std::string id;
  std::optional<std::string> parent_id;
  std::string text;
  std::string author;
  std::int64_t timestamp = 0;
  std::string channel;
  bool known_bot = false;
  bool quarantined = false;
  // Number of messages in the whole input with exactly this text.
  std::uint64_t repeat_count = 1;
};

// One comment tree. Node order is the input order; the root is the unique
// node without a parent.
struct MessageTree {
  std::vector<MessageNode> nodes;

  std::size_t size() const { return nodes.size(); }
};

// Checks that ids are unique, every parent exists inside the tree, there is
// exactly one root, and parent links are acyclic.
inline void validate_tree(const MessageTree& tree) {
  std::unordered_map<std::string, const MessageNode*> by_id;
  std::size_t roots = 0;
  for (const auto& n : tree.nodes) {
    if (!by_id.emplace(n.id, &n).second) throw MalformedInput("duplicate message id: " + n.id);
    if (!n.parent_id) ++roots;
    if (n.timestamp < 0) throw MalformedInput("negative timestamp on message " + n.id);
  }
  for (const auto& n : tree.nodes)
    if (n.parent_id && !by_id.count(*n.parent_id))
      throw MalformedInput("message " + n.id + " refers to missing parent " + *n.parent_id);
  for (const auto& n : tree.nodes) {
    std::unordered_set<std::string> path{n.id};
    const MessageNode* cur = &n;
    while (cur->parent_id) {
      cur = by_id.at(*cur->parent_id);
      if (!path.insert(cur->id).second) throw MalformedInput("cyclic parent links at " + n.id);
    }
  }
  if (!tree.nodes.empty() && roots != 1)
    throw MalformedInput("tree must have exactly one root, found " + std::to_string(roots));
}

// Record keys: id, parent_id (null or absent for roots), text, author, ts,
// channel, flags (array of "bot" / "quarantined").
inline MessageNode node_from_json(const nlohmann::json& j) {
  MessageNode n;
  try {
    n.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
    if (j.contains("parent_id") && !j.at("parent_id").is_null())
      n.parent_id = j.at("parent_id").is_string() ? j.at("parent_id").get<std::string>()
                                                  : j.at("parent_id").dump();
    n.text = j.at("text").get<std::string>();
    n.author = j.value("author", std::string{});
    n.timestamp = j.value("ts", std::int64_t{0});
    n.channel = j.value("channel", std::string{});
    if (j.contains("flags"))
      for (const auto& f : j.at("flags")) {
        const auto flag = f.get<std::string>();
        if (flag == "bot") n.known_bot = true;
        else if (flag == "quarantined") n.quarantined = true;
      }
  } catch (const nlohmann::json::exception& e) {
    throw MalformedInput(std::string("bad message record: ") + e.what());
  }
  return n;
}

inline nlohmann::json node_to_json(const MessageNode& n) {
  nlohmann::json flags = nlohmann::json::array();
  if (n.known_bot) flags.push_back("bot");
  if (n.quarantined) flags.push_back("quarantined");
  return {{"id", n.id},
          {"parent_id", n.parent_id ? nlohmann::json(*n.parent_id) : nlohmann::json(nullptr)},
          {"text", n.text},
          {"author", n.author},
          {"ts", n.timestamp},
          {"channel", n.channel},
          {"flags", flags}};
}

// Fills repeat_count with the number of identical texts across all trees.
inline void count_repeats(std::vector<MessageTree>& trees) {
  std::unordered_map<std::string, std::uint64_t> counts;
  for (const auto& t : trees)
    for (const auto& n : t.nodes) ++counts[n.text];
  for (auto& t : trees)
    for (auto& n : t.nodes) n.repeat_count = counts[n.text];
}

// Reads line-delimited message records and groups them into trees by root.
// Trees come out in order of first appearance of their root; nodes keep file
// order. Repeat counts are computed over the whole stream.
inline std::vector<MessageTree> read_message_trees(std::istream& in) {
  std::vector<MessageNode> all;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw MalformedInput("line " + std::to_string(line_no) + ": " + e.what());
    }
    all.push_back(node_from_json(j));
  }
  std::unordered_map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < all.size(); ++i)
    if (!by_id.emplace(all[i].id, i).second) throw MalformedInput("duplicate message id: " + all[i].id);

  std::vector<std::size_t> root_of(all.size());
  for (std::size_t i = 0; i < all.size(); ++i) {
    std::size_t cur = i;
    std::size_t steps = 0;
    while (all[cur].parent_id) {
      auto it = by_id.find(*all[cur].parent_id);
      if (it == by_id.end())
        throw MalformedInput("message " + all[cur].id + " refers to missing parent " +
                             *all[cur].parent_id);
      cur = it->second;
      if (++steps > all.size()) throw MalformedInput("cyclic parent links at " + all[i].id);
    }
    root_of[i] = cur;
  }
  std::vector<MessageTree> trees;
  std::unordered_map<std::size_t, std::size_t> tree_index;
  for (std::size_t i = 0; i < all.size(); ++i)
    if (!all[i].parent_id) {
      tree_index[i] = trees.size();
      trees.emplace_back();
    }
  for (std::size_t i = 0; i < all.size(); ++i) trees[tree_index.at(root_of[i])].nodes.push_back(all[i]);
  count_repeats(trees);
  return trees;
}

inline void write_message_tree(std::ostream& out, const MessageTree& tree) {
  for (const auto& n : tree.nodes) out << node_to_json(n).dump() << '\n';
}

}  // namespace plato::corpus
