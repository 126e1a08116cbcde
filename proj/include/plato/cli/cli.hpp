#pragma once

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "plato/corpus/bpe.hpp"
#include "plato/corpus/cleaning.hpp"
#include "plato/corpus/message_tree.hpp"
#include "plato/corpus/samples.hpp"
#include "plato/errors.hpp"
#include "plato/evalkit/harness.hpp"
#include "plato/evalkit/metrics.hpp"
#include "plato/inference/pipeline.hpp"
#include "plato/model/checkpoint.hpp"
#include "plato/model/config.hpp"
#include "plato/training/grad_harness.hpp"
#include "plato/training/synthetic.hpp"
#include "plato/training/trainer.hpp"

namespace plato::cli {

inline constexpr const char* kOutDirEnv = "PLATO_OUT_DIR";
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

struct Streams {
  std::istream& in;
  std::ostream& out;
  std::ostream& err;
};

inline std::string default_out_dir() {
  const char* v = std::getenv(kOutDirEnv);
  return v && *v ? std::string(v) : std::string(".");
}

namespace detail {

enum class Source { kDefault, kFile, kFlag };

// Keys belong to the model config, the training config, or the command.
enum class Scope { kCommand, kModel, kTrain };

struct Setting {
  std::string key;
  std::string value;
  Scope scope = Scope::kCommand;
  Source source = Source::kDefault;
  std::string flag_value;
  CLI::Option* option = nullptr;
};

inline std::string flag_name(const std::string& key) {
  std::string s = key;
  for (auto& c : s)
    if (c == '_') c = '-';
  return "--" + s;
}

inline std::string key_name(std::string s) {
  for (auto& c : s)
    if (c == '-') c = '_';
  return s;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// key=value lines; blank lines and lines starting with '#' are skipped.
inline std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key=value");
    out.emplace_back(key_name(trim(t.substr(0, eq))), trim(t.substr(eq + 1)));
  }
  return out;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  for (std::istringstream in(s); std::getline(in, item, ',');)
    if (!trim(item).empty()) out.push_back(trim(item));
  return out;
}

inline void ensure_parent(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
}

inline std::ofstream open_output(const std::string& path) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

inline std::vector<std::string> read_word_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::vector<std::string> words;
  for (std::string line; std::getline(in, line);) {
    const auto t = trim(line);
    if (!t.empty() && t[0] != '#') words.push_back(t);
  }
  return words;
}

}  // namespace detail

// One subcommand: its settings resolved as defaults < config file < flags.
class Command {
 public:
  Command(CLI::App& parent, std::string name, std::string description, bool seed_required)
      : seed_required_(seed_required) {
    app_ = parent.add_subcommand(std::move(name), std::move(description));
    app_->add_option("--config", config_path_, "key=value settings file (flags override it)");
    add("seed", "0", seed_required ? "random seed (required)" : "random seed");
  }

  CLI::App* app() const { return app_; }
  const std::string& name() const { return app_->get_name(); }

  Command& add(const std::string& key, const std::string& default_value, const std::string& help,
               detail::Scope scope = detail::Scope::kCommand) {
    auto& s = settings_[key];
    s.key = key;
    s.value = default_value;
    s.scope = scope;
    s.option = app_->add_option(detail::flag_name(key), s.flag_value, help)->default_str(default_value);
    order_.push_back(key);
    return *this;
  }

  void add_model_keys(bool with_vocab_size = false) {
    const model::ModelConfig d;
    std::istringstream in(d.to_text());
    for (std::string line; std::getline(in, line);) {
      const auto eq = line.find('=');
      const auto key = line.substr(0, eq);
      if (key == "vocab_size" && !with_vocab_size) continue;
      add(key, line.substr(eq + 1), "model: " + key, detail::Scope::kModel);
    }
  }

  void add_train_keys() {
    const training::TrainConfig d;
    std::istringstream in(d.to_text());
    for (std::string line; std::getline(in, line);) {
      const auto eq = line.find('=');
      const auto key = line.substr(0, eq);
      if (key == "seed") continue;
      add(key, line.substr(eq + 1), "training: " + key, detail::Scope::kTrain);
    }
  }

  void resolve() {
    if (!config_path_.empty()) {
      for (const auto& [key, value] : detail::read_config_file(config_path_)) {
        auto it = settings_.find(key);
        if (it == settings_.end()) throw ConfigError("unknown setting '" + key + "' for " + name());
        it->second.value = value;
        it->second.source = detail::Source::kFile;
      }
    }
    for (auto& [key, s] : settings_)
      if (s.option->count() > 0) {
        s.value = s.flag_value;
        s.source = detail::Source::kFlag;
      }
    if (seed_required_ && !explicit_("seed")) throw ConfigError(name() + ": --seed is required");
  }

  const std::string& get(const std::string& key) const { return settings_.at(key).value; }
  bool explicit_(const std::string& key) const { return settings_.at(key).source != detail::Source::kDefault; }

  std::uint64_t seed() const { return get_u64("seed"); }

  std::uint64_t get_u64(const std::string& key) const {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(get(key), &used);
      if (used == get(key).size() && get(key).find('-') == std::string::npos) return v;
    } catch (const std::logic_error&) {
    }
    throw ConfigError("bad value for " + key + ": " + get(key));
  }

  double get_double(const std::string& key) const {
    try {
      std::size_t used = 0;
      const auto v = std::stod(get(key), &used);
      if (used == get(key).size()) return v;
    } catch (const std::logic_error&) {
    }
    throw ConfigError("bad value for " + key + ": " + get(key));
  }

  // Required input file.
  std::string input(const std::string& key) const {
    const auto& p = get(key);
    if (p.empty()) throw ConfigError(name() + ": " + detail::flag_name(key) + " is required");
    if (!std::filesystem::is_regular_file(p)) throw ConfigError(name() + ": no such file: " + p);
    return p;
  }

  std::optional<std::string> optional_input(const std::string& key) const {
    if (get(key).empty()) return std::nullopt;
    return input(key);
  }

  // Output path; an empty value means `fallback` inside the output directory.
  std::string output(const std::string& key, const std::string& fallback) const {
    const auto& p = get(key);
    if (!p.empty()) return p;
    return (std::filesystem::path(get("out_dir")) / fallback).string();
  }

  void apply_model(model::ModelConfig& c) const {
    for (const auto& key : order_) {
      const auto& s = settings_.at(key);
      if (s.scope == detail::Scope::kModel && s.source != detail::Source::kDefault) c.set(key, s.value);
    }
  }

  training::TrainConfig train_config() const {
    training::TrainConfig c;
    for (const auto& key : order_) {
      const auto& s = settings_.at(key);
      if (s.scope == detail::Scope::kTrain) c.set(key, s.value);
    }
    c.seed = seed();
    c.validate();
    return c;
  }

  // Command-scope settings in registration order.
  std::string command_text() const {
    std::ostringstream out;
    for (const auto& key : order_) {
      const auto& s = settings_.at(key);
      if (s.scope == detail::Scope::kCommand) out << key << "=" << s.value << "\n";
    }
    return out.str();
  }

 private:
  CLI::App* app_ = nullptr;
  std::string config_path_;
  bool seed_required_ = false;
  std::map<std::string, detail::Setting> settings_;
  std::vector<std::string> order_;
};

namespace detail {

inline void print_header(const Command& cmd, std::ostream& err, const std::string& extra = "") {
  err << "# plato " << cmd.name() << "\n" << cmd.command_text() << extra;
  err.flush();
}

inline model::Checkpoint load_stage(const std::string& path, const std::string& stage) {
  auto ck = model::load_checkpoint(path);
  if (!stage.empty() && ck.stage != stage)
    throw LoadError(path + ": expected a " + stage + " checkpoint, found " + ck.stage);
  return ck;
}

inline corpus::SequenceLimits limits_for(const model::ModelConfig& c, std::size_t min_response) {
  corpus::SequenceLimits l;
  l.max_context = c.max_context;
  l.max_response = c.max_response;
  l.min_response = min_response;
  return l;
}

inline void check_vocab(const model::ModelConfig& c, const corpus::Vocab& vocab, const std::string& what) {
  if (c.vocab_size != vocab.size())
    throw ConfigError(what + " has vocabulary size " + std::to_string(c.vocab_size) + " but the vocabulary file has " +
                      std::to_string(vocab.size()));
}

// ---- clean ----

inline void add_clean(Command& c) {
  const corpus::RuleConfig d;
  c.add("in", "", "message tree JSONL (required)")
      .add("out", "", "surviving samples JSONL [out_dir/samples.jsonl]")
      .add("counts", "", "per-rule removal counts JSON [out_dir/clean_counts.json]")
      .add("vocab", "", "vocabulary file enabling the token-count rule")
      .add("offensive", "", "offensive word list, one per line")
      .add("bots", "", "known bot authors, one per line")
      .add("quarantined", "", "quarantined channels, one per line")
      .add("min_tokens", std::to_string(d.min_tokens), "minimum BPE tokens per message")
      .add("max_tokens", std::to_string(d.max_tokens), "maximum BPE tokens per message")
      .add("max_word_chars", std::to_string(d.max_word_chars), "maximum characters per word")
      .add("max_message_chars", std::to_string(d.max_message_chars), "maximum characters per message")
      .add("min_alphabetic_fraction", "0.7", "minimum alphabetic character fraction")
      .add("parent_overlap_threshold", "0.9", "parent word overlap that counts as a copy")
      .add("repeat_threshold", std::to_string(d.repeat_threshold), "occurrences that count as repeated")
      .add("out_dir", default_out_dir(), "output directory");
}

inline int run_clean(const Command& c, Streams io) {
  const auto in_path = c.input("in");
  const auto vocab_path = c.optional_input("vocab");
  const auto offensive = c.optional_input("offensive");
  const auto bots = c.optional_input("bots");
  const auto quarantined = c.optional_input("quarantined");
  const auto out_path = c.output("out", "samples.jsonl");
  const auto counts_path = c.output("counts", "clean_counts.json");
  corpus::RuleConfig cfg;
  cfg.min_tokens = c.get_u64("min_tokens");
  cfg.max_tokens = c.get_u64("max_tokens");
  cfg.max_word_chars = c.get_u64("max_word_chars");
  cfg.max_message_chars = c.get_u64("max_message_chars");
  cfg.min_alphabetic_fraction = c.get_double("min_alphabetic_fraction");
  cfg.parent_overlap_threshold = c.get_double("parent_overlap_threshold");
  cfg.repeat_threshold = c.get_u64("repeat_threshold");
  if (offensive)
    for (const auto& w : read_word_list(*offensive)) cfg.offensive_words.insert(corpus::detail::lower(w));
  if (bots)
    for (const auto& w : read_word_list(*bots)) cfg.known_bots.insert(w);
  if (quarantined)
    for (const auto& w : read_word_list(*quarantined)) cfg.quarantined_channels.insert(w);
  print_header(c, io.err);

  std::optional<corpus::Vocab> vocab;
  if (vocab_path) {
    vocab = corpus::Vocab::load(*vocab_path);
    cfg.token_count = [&vocab](const std::string& text) { return vocab->encode(text).size(); };
  }
  std::ifstream in(in_path);
  const auto trees = corpus::read_message_trees(in);
  corpus::CleanReport total;
  std::vector<corpus::RawSample> samples;
  for (const auto& t : trees) {
    auto r = corpus::clean_tree(t, cfg);
    total += r.report;
    auto s = corpus::extract_pairs(r.tree);
    samples.insert(samples.end(), s.begin(), s.end());
  }
  nlohmann::ordered_json counts;
  counts["nodes_before"] = total.nodes_before;
  counts["nodes_after"] = total.nodes_after;
  for (std::size_t i = 0; i < corpus::kRuleCount; ++i)
    counts["removed_by_rule"][std::string(corpus::kRuleNames[i])] = total.removed_by_rule[i];
  {
    auto out = open_output(out_path);
    corpus::write_samples(out, samples);
  }
  {
    auto out = open_output(counts_path);
    out << counts.dump(2) << "\n";
  }
  io.out << counts.dump(2) << "\n";
  io.err << "wrote " << samples.size() << " samples to " << out_path << "\n";
  return kExitOk;
}

// ---- bpe-train ----

inline void add_bpe(Command& c) {
  c.add("in", "", "samples JSONL; several files may be given comma-separated (required)")
      .add("vocab_size", "512", "target vocabulary size including specials")
      .add("out", "", "vocabulary file [out_dir/vocab.txt]")
      .add("out_dir", default_out_dir(), "output directory");
}

inline int run_bpe(const Command& c, Streams io) {
  const auto inputs = split_list(c.get("in"));
  if (inputs.empty()) throw ConfigError("bpe-train: --in is required");
  for (const auto& p : inputs)
    if (!std::filesystem::is_regular_file(p)) throw ConfigError("bpe-train: no such file: " + p);
  const auto target = c.get_u64("vocab_size");
  const auto out_path = c.output("out", "vocab.txt");
  print_header(c, io.err);
  std::vector<std::string> lines;
  for (const auto& p : inputs) {
    const auto l = training::corpus_lines(corpus::read_samples(p));
    lines.insert(lines.end(), l.begin(), l.end());
  }
  const auto r = corpus::train_bpe(lines, target);
  ensure_parent(out_path);
  r.vocab.save(out_path);
  nlohmann::ordered_json rec;
  rec["vocab_size"] = r.vocab.size();
  rec["target_reached"] = r.target_reached;
  rec["path"] = out_path;
  io.out << rec.dump() << "\n";
  return kExitOk;
}

// ---- make-synthetic ----

inline void add_synthetic(Command& c) {
  const training::SyntheticConfig d;
  c.add("contexts", std::to_string(d.contexts), "number of contexts")
      .add("topic_count", std::to_string(d.topic_count), "distinct topics (0 = one per context)")
      .add("responses_per_context", std::to_string(d.responses_per_context), "training responses per context")
      .add("template_pool", std::to_string(d.template_pool), "response templates available per context")
      .add("generic_repeats", std::to_string(d.generic_repeats), "generic replies added per context")
      .add("holdout_per_context", std::to_string(d.holdout_per_context), "held-out responses per context")
      .add("out", "", "training samples JSONL [out_dir/synthetic.jsonl]")
      .add("heldout", "", "held-out samples JSONL [out_dir/synthetic_heldout.jsonl]")
      .add("benchmark", "", "selection benchmark JSONL [out_dir/selection_sets.jsonl]")
      .add("out_dir", default_out_dir(), "output directory");
}

inline int run_synthetic(const Command& c, Streams io) {
  training::SyntheticConfig cfg;
  cfg.contexts = c.get_u64("contexts");
  cfg.topic_count = c.get_u64("topic_count");
  cfg.responses_per_context = c.get_u64("responses_per_context");
  cfg.template_pool = c.get_u64("template_pool");
  cfg.generic_repeats = c.get_u64("generic_repeats");
  cfg.holdout_per_context = c.get_u64("holdout_per_context");
  const auto train_path = c.output("out", "synthetic.jsonl");
  const auto heldout_path = c.output("heldout", "synthetic_heldout.jsonl");
  const auto bench_path = c.output("benchmark", "selection_sets.jsonl");
  print_header(c, io.err);
  const auto corpus = training::make_synthetic(cfg);
  {
    auto out = open_output(train_path);
    corpus::write_samples(out, corpus.train);
  }
  if (!corpus.heldout.empty()) {
    auto out = open_output(heldout_path);
    corpus::write_samples(out, corpus.heldout);
  }
  const auto sets = evalkit::make_selection_benchmark(corpus);
  {
    auto out = open_output(bench_path);
    evalkit::write_sets(out, sets);
  }
  nlohmann::ordered_json rec;
  rec["train"] = corpus.train.size();
  rec["heldout"] = corpus.heldout.size();
  rec["benchmark_sets"] = sets.size();
  io.out << rec.dump() << "\n";
  return kExitOk;
}

// ---- training ----

enum class TrainKind { kStage1, kBackward, kStage2Gen, kStage2Eval };

inline std::string stage_tag(TrainKind k) {
  switch (k) {
    case TrainKind::kStage1: return "stage1";
    case TrainKind::kBackward: return "backward";
    case TrainKind::kStage2Gen: return "stage2-gen";
    case TrainKind::kStage2Eval: return "stage2-eval";
  }
  return "";
}

inline void add_train(Command& c, TrainKind kind) {
  c.add("train", "", "training samples JSONL (required)")
      .add("val", "", "validation samples JSONL (default: the training set)")
      .add("vocab", "", "vocabulary file (required)");
  if (kind == TrainKind::kStage2Gen || kind == TrainKind::kStage2Eval)
    c.add("init", "", "stage-1 checkpoint to warm start from (required)");
  const auto tag = stage_tag(kind);
  c.add("min_response", "1", "shortest response kept, in tokens")
      .add("out", "", "best checkpoint [out_dir/" + tag + ".ckpt]")
      .add("log", "", "JSONL metric log [out_dir/" + tag + ".log.jsonl]")
      .add("out_dir", default_out_dir(), "output directory");
  c.add_model_keys();
  c.add_train_keys();
}

inline int run_train(const Command& c, Streams io, TrainKind kind) {
  const auto tag = stage_tag(kind);
  const auto train_path = c.input("train");
  const auto val_path = c.optional_input("val");
  const auto vocab = corpus::Vocab::load(c.input("vocab"));
  auto cfg = c.train_config();
  cfg.checkpoint_path = c.output("out", tag + ".ckpt");
  cfg.log_path = c.output("log", tag + ".log.jsonl");

  std::optional<model::UnifiedTransformer<float>> stage1;
  model::ModelConfig mc;
  if (kind == TrainKind::kStage2Gen || kind == TrainKind::kStage2Eval) {
    const auto ck = load_stage(c.input("init"), "stage1");
    check_vocab(ck.config, vocab, "stage-1 checkpoint");
    stage1 = model::restore_model<float>(ck);
    mc = ck.config;
  }
  c.apply_model(mc);
  mc.vocab_size = vocab.size();
  mc.validate();
  print_header(c, io.err, mc.to_text() + cfg.to_text());

  const auto raw = corpus::read_samples(train_path);
  const auto limits = limits_for(mc, c.get_u64("min_response"));
  const auto train = corpus::encode_samples(raw, vocab, limits);
  if (train.empty()) throw ConfigError(tag + ": no training samples survive encoding");
  std::vector<corpus::DialogueSample> val;
  if (val_path) val = corpus::encode_samples(corpus::read_samples(*val_path), vocab, limits);
  cfg.data_hash = corpus::samples_hash(raw);
  ensure_parent(cfg.checkpoint_path);
  ensure_parent(cfg.log_path);

  std::optional<training::TrainResult> r;
  switch (kind) {
    case TrainKind::kStage1: r = training::train_stage1(train, val, mc, cfg); break;
    case TrainKind::kBackward: r = training::train_backward_model(train, val, mc, cfg); break;
    case TrainKind::kStage2Gen: r = training::train_stage2_generation(*stage1, train, val, mc, cfg); break;
    case TrainKind::kStage2Eval: r = training::train_stage2_evaluation(*stage1, train, val, mc, cfg); break;
  }
  nlohmann::ordered_json rec;
  rec["stage"] = r->stage;
  rec["best_step"] = r->best_step;
  rec["best_metric"] = r->best_metric;
  rec["samples"] = train.size();
  rec["data_hash"] = cfg.data_hash;
  rec["checkpoint"] = cfg.checkpoint_path;
  io.out << rec.dump() << "\n";
  return kExitOk;
}

// ---- chat / self-chat ----

inline void add_chat(Command& c, bool self) {
  c.add("gen", "", "stage-2 generation checkpoint (required)")
      .add("eval", "", "evaluation checkpoint (required)")
      .add("vocab", "", "vocabulary file (required)")
      .add("decode_strategy", "", "greedy or topk [from the generation checkpoint]")
      .add("top_k", "", "top-k cutoff [from the generation checkpoint]")
      .add("decode_temperature", "", "sampling temperature [from the generation checkpoint]")
      .add("max_length", std::to_string(inference::kMaxDecodeLength), "longest response in tokens");
  if (self)
    c.add("seed_utterance", "", "opening utterance (required)")
        .add("turns", "10", "utterances in the transcript, including the seed")
        .add("out", "", "transcript JSONL [out_dir/self_chat.jsonl]")
        .add("out_dir", default_out_dir(), "output directory");
}

struct LoadedChat {
  corpus::Vocab vocab;
  model::UnifiedTransformer<float> gen;
  model::UnifiedTransformer<float> eval;
  inference::DecodeConfig decode;
};

inline LoadedChat load_chat(const Command& c) {
  const auto gen_ck = load_stage(c.input("gen"), "stage2-gen");
  const auto eval_ck = load_stage(c.input("eval"), "stage2-eval");
  auto vocab = corpus::Vocab::load(c.input("vocab"));
  check_vocab(gen_ck.config, vocab, "generation checkpoint");
  check_vocab(eval_ck.config, vocab, "evaluation checkpoint");
  auto mc = gen_ck.config;
  for (const std::string key : {"decode_strategy", "top_k", "decode_temperature"})
    if (!c.get(key).empty()) mc.set(key, c.get(key));
  auto decode = inference::DecodeConfig::from_model(mc);
  decode.max_length = c.get_u64("max_length");
  decode.validate();
  return {std::move(vocab), model::restore_model<float>(gen_ck), model::restore_model<float>(eval_ck), decode};
}

inline std::string decode_text(const inference::DecodeConfig& d) {
  std::ostringstream out;
  out.precision(17);
  out << "decode.strategy=" << d.strategy << "\ndecode.top_k=" << d.top_k << "\ndecode.temperature=" << d.temperature
      << "\ndecode.max_length=" << d.max_length << "\n";
  return out.str();
}

inline int run_chat(const Command& c, Streams io) {
  const auto loaded = load_chat(c);
  print_header(c, io.err, decode_text(loaded.decode));
  const inference::ChatModels models{loaded.gen, loaded.eval, loaded.vocab, loaded.decode};
  RngStream rng(c.seed());
  std::vector<std::string> history;
  for (std::string line; std::getline(io.in, line);) {
    line = trim(line);
    if (line.empty()) continue;
    history.push_back(line);
    const auto turn = inference::chat_turn(models, history, &rng);
    history.push_back(turn.text);
    io.out << turn.text << "\n";
    io.out.flush();
  }
  return kExitOk;
}

inline int run_self_chat(const Command& c, Streams io) {
  const auto seed_utterance = c.get("seed_utterance");
  if (trim(seed_utterance).empty()) throw ConfigError("self-chat: --seed-utterance is required");
  const auto turns = c.get_u64("turns");
  if (turns < 2) throw ConfigError("self-chat: --turns must be at least 2");
  const auto out_path = c.output("out", "self_chat.jsonl");
  const auto loaded = load_chat(c);
  print_header(c, io.err, decode_text(loaded.decode));
  const inference::ChatModels models{loaded.gen, loaded.eval, loaded.vocab, loaded.decode};
  RngStream rng(c.seed());
  const auto t = inference::self_chat(models, seed_utterance, turns, &rng);
  auto out = open_output(out_path);
  for (const auto& u : t.utterances) {
    out << inference::transcript_record(u).dump() << "\n";
    io.out << u.speaker << ": " << u.text << "\n";
  }
  return kExitOk;
}

// ---- evaluation ----

inline void add_distinct(Command& c) {
  c.add("in", "", "responses, one per line")
      .add("transcript", "", "self-chat transcript JSONL; the seed utterance is skipped");
}

inline int run_distinct(const Command& c, Streams io) {
  const auto in_path = c.optional_input("in");
  const auto transcript = c.optional_input("transcript");
  if (bool(in_path) == bool(transcript)) throw ConfigError("eval-distinct: give exactly one of --in or --transcript");
  print_header(c, io.err);
  std::vector<std::string> responses;
  std::ifstream in(in_path ? *in_path : *transcript);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (trim(line).empty()) continue;
    if (in_path) {
      responses.push_back(line);
      continue;
    }
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      if (j.at("latent_id").is_null()) continue;
      responses.push_back(j.at("text").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw MalformedInput("transcript line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  std::size_t words = 0;
  for (const auto& r : responses) words += evalkit::split_words(r).size();
  nlohmann::ordered_json rec;
  rec["responses"] = responses.size();
  rec["words"] = words;
  rec["distinct_1"] = evalkit::distinct_n(responses, 1);
  rec["distinct_2"] = evalkit::distinct_n(responses, 2);
  io.out << rec.dump() << "\n";
  return kExitOk;
}

inline void add_selection(Command& c) {
  c.add("sets", "", "labelled candidate sets JSONL (required)")
      .add("vocab", "", "vocabulary file (required)")
      .add("forward", "", "latent-free generation checkpoint for the forward scorer")
      .add("backward", "", "backward checkpoint for the backward scorer")
      .add("eval", "", "evaluation checkpoint for the coherence scorer")
      .add("out", "", "per-scorer JSONL records [out_dir/selection.jsonl]")
      .add("out_dir", default_out_dir(), "output directory");
}

inline int run_selection(const Command& c, Streams io) {
  const auto sets_path = c.input("sets");
  const auto vocab = corpus::Vocab::load(c.input("vocab"));
  const auto forward = c.optional_input("forward");
  const auto backward = c.optional_input("backward");
  const auto eval = c.optional_input("eval");
  if (!forward && !backward && !eval) throw ConfigError("eval-selection: give at least one scorer checkpoint");
  const auto out_path = c.output("out", "selection.jsonl");
  print_header(c, io.err);

  std::ifstream in(sets_path);
  const auto sets = evalkit::read_sets(in);
  std::vector<std::unique_ptr<model::UnifiedTransformer<float>>> models;
  std::vector<evalkit::NamedScorer> scorers;
  auto load = [&](const std::string& path, const std::string& stage) -> const model::UnifiedTransformer<float>& {
    const auto ck = load_stage(path, stage);
    check_vocab(ck.config, vocab, path);
    models.push_back(std::make_unique<model::UnifiedTransformer<float>>(model::restore_model<float>(ck)));
    return *models.back();
  };
  if (forward) scorers.push_back({"forward", evalkit::forward_scorer(load(*forward, "stage1"), vocab)});
  if (backward) scorers.push_back({"backward", evalkit::backward_scorer(load(*backward, "backward"), vocab)});
  if (eval) scorers.push_back({"coherence", evalkit::coherence_scorer(load(*eval, "stage2-eval"), vocab)});
  const auto rows = evalkit::compare_scorers(sets, scorers);
  io.out << evalkit::format_table(rows);
  auto out = open_output(out_path);
  for (const auto& row : rows) out << evalkit::row_record(row).dump() << "\n";
  return kExitOk;
}

inline void add_probe(Command& c) {
  c.add("stage1", "", "stage-1 checkpoint (required)")
      .add("stage2", "", "stage-2 generation checkpoint (required)")
      .add("corpus", "", "samples JSONL both checkpoints were trained on (required)")
      .add("vocab", "", "vocabulary file (required)");
}

inline int run_probe(const Command& c, Streams io) {
  const auto s1 = load_stage(c.input("stage1"), "");
  const auto s2 = load_stage(c.input("stage2"), "");
  const auto corpus = corpus::read_samples(c.input("corpus"));
  const auto vocab = corpus::Vocab::load(c.input("vocab"));
  check_vocab(s1.config, vocab, "stage-1 checkpoint");
  check_vocab(s2.config, vocab, "stage-2 checkpoint");
  print_header(c, io.err);
  const auto p = evalkit::one_to_many_probe(s1, s2, corpus, vocab, RngStream(c.seed()));
  nlohmann::ordered_json rec;
  rec["stage1_nll"] = p.stage1_nll;
  rec["stage2_nll"] = p.stage2_nll;
  rec["ratio"] = p.ratio();
  rec["contexts"] = p.distinct_candidates.size();
  rec["contexts_with_three"] = p.contexts_with_three;
  rec["diverse_fraction"] = p.diverse_fraction();
  rec["distinct_candidates"] = p.distinct_candidates;
  io.out << rec.dump() << "\n";
  return kExitOk;
}

inline void add_grad_check(Command& c) {
  c.add("cases", "20", "random configurations; case i uses seed + i")
      .add("epsilon", "0.001", "finite-difference step")
      .add("tolerance", "0.0001", "largest accepted relative error");
}

inline int run_grad_check(const Command& c, Streams io) {
  const auto cases = c.get_u64("cases");
  const auto eps = c.get_double("epsilon");
  const auto tol = c.get_double("tolerance");
  if (cases == 0) throw ConfigError("grad-check: --cases must be positive");
  if (!(eps > 0.0)) throw ConfigError("grad-check: --epsilon must be positive");
  print_header(c, io.err);
  bool ok = true;
  for (auto o : training::kAllObjectives) {
    double worst = 0.0;
    for (std::uint64_t i = 1; i <= cases; ++i) {
      const auto r = training::check_objective_gradients(o, training::random_grad_case(c.seed() + i), eps);
      worst = std::max(worst, r.max_relative_error);
    }
    const bool pass = worst < tol;
    ok = ok && pass;
    io.out << std::left << std::setw(12) << training::objective_name(o) << " max_rel_error=" << std::scientific
           << std::setprecision(3) << worst << std::defaultfloat << " " << (pass ? "PASS" : "FAIL") << "\n";
  }
  return ok ? kExitOk : kExitRuntime;
}

}  // namespace detail

// Parses argv, dispatches one subcommand and returns the process exit status.
inline int run(int argc, const char* const* argv, Streams io) {
  using detail::TrainKind;
  CLI::App app("Two-stage latent dialogue generation: data, training, chat and evaluation", "plato");
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  std::vector<std::unique_ptr<Command>> commands;
  std::map<const CLI::App*, std::function<int(const Command&)>> handlers;
  auto add = [&](const std::string& name, const std::string& desc, bool seed_required, auto setup, auto handler) {
    commands.push_back(std::make_unique<Command>(app, name, desc, seed_required));
    setup(*commands.back());
    handlers[commands.back()->app()] = handler;
  };
  add("clean", "Clean message trees and extract context-response samples", false, detail::add_clean,
      [&](const Command& c) { return detail::run_clean(c, io); });
  add("bpe-train", "Train a BPE vocabulary on sample text", false, detail::add_bpe,
      [&](const Command& c) { return detail::run_bpe(c, io); });
  add("make-synthetic", "Write the synthetic one-to-many corpus and selection benchmark", false,
      detail::add_synthetic, [&](const Command& c) { return detail::run_synthetic(c, io); });
  add("train-stage1", "Train the latent-free generation model", true,
      [](Command& c) { detail::add_train(c, TrainKind::kStage1); },
      [&](const Command& c) { return detail::run_train(c, io, TrainKind::kStage1); });
  add("train-stage2-gen", "Train the latent generation model from a stage-1 checkpoint", true,
      [](Command& c) { detail::add_train(c, TrainKind::kStage2Gen); },
      [&](const Command& c) { return detail::run_train(c, io, TrainKind::kStage2Gen); });
  add("train-stage2-eval", "Train the coherence evaluation model from a stage-1 checkpoint", true,
      [](Command& c) { detail::add_train(c, TrainKind::kStage2Eval); },
      [&](const Command& c) { return detail::run_train(c, io, TrainKind::kStage2Eval); });
  add("train-backward", "Train the response-to-context model", true,
      [](Command& c) { detail::add_train(c, TrainKind::kBackward); },
      [&](const Command& c) { return detail::run_train(c, io, TrainKind::kBackward); });
  add("chat", "Chat interactively: one utterance per input line", true,
      [](Command& c) { detail::add_chat(c, false); }, [&](const Command& c) { return detail::run_chat(c, io); });
  add("self-chat", "Let the model talk to itself from a seed utterance", true,
      [](Command& c) { detail::add_chat(c, true); }, [&](const Command& c) { return detail::run_self_chat(c, io); });
  add("eval-distinct", "Distinct-1/2 of a set of responses", false, detail::add_distinct,
      [&](const Command& c) { return detail::run_distinct(c, io); });
  add("eval-selection", "Compare response scorers on labelled candidate sets", false, detail::add_selection,
      [&](const Command& c) { return detail::run_selection(c, io); });
  add("probe", "Measure the one-to-many effect of stage-2 training", false, detail::add_probe,
      [&](const Command& c) { return detail::run_probe(c, io); });
  add("grad-check", "Finite-difference check of every objective's gradients", false, detail::add_grad_check,
      [&](const Command& c) { return detail::run_grad_check(c, io); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      const bool all = dynamic_cast<const CLI::CallForAllHelp*>(&e) != nullptr;
      io.out << app.help("", all ? CLI::AppFormatMode::All : CLI::AppFormatMode::Normal);
      return kExitOk;
    }
    io.err << "plato: error: " << e.what() << "\n";
    return kExitUsage;
  }
  for (auto& cmd : commands) {
    if (!cmd->app()->parsed()) continue;
    try {
      cmd->resolve();
      return handlers.at(cmd->app())(*cmd);
    } catch (const ConfigError& e) {
      io.err << "plato: error: " << e.what() << "\n";
      return kExitUsage;
    } catch (const std::exception& e) {
      io.err << "plato: error: " << e.what() << "\n";
      return kExitRuntime;
    }
  }
  return kExitUsage;
}

inline int run(int argc, const char* const* argv) { return run(argc, argv, {std::cin, std::cout, std::cerr}); }

}  // namespace plato::cli
