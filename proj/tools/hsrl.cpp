// hsrl: batch front end for corpus synthesis, topic fitting, training,
// generation, evaluation and gradient checking.
//
// Every subcommand reads flat `key = value` settings from --config, lets
// flags override them, and writes a manifest.json next to its outputs.

#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "hsrl/evalgen.hpp"
#include "hsrl/topics.hpp"
#include "hsrl/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hsrl;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Settings: config file first, flags on top.

class Settings {
 public:
  Settings(std::string command, std::set<std::string> known)
      : command_(std::move(command)), known_(std::move(known)) {}

  void load_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read config " + path);
    std::string line;
    int n = 0;
    while (std::getline(f, line)) {
      ++n;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string t = trim(line);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) {
        throw ParseError(path + ":" + std::to_string(n) + ": expected 'key = value'");
      }
      const std::string key = trim(t.substr(0, eq));
      check_known(key, path + ":" + std::to_string(n));
      if (flags_.count(key) == 0) values_[key] = trim(t.substr(eq + 1));
    }
  }

  void set_flag(const std::string& key, const std::string& value) {
    check_known(key, "--" + key);
    values_[key] = value;
    flags_.insert(key);
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string str(const std::string& key, const std::string& fallback) {
    auto it = values_.find(key);
    if (it == values_.end()) {
      values_[key] = fallback;
      return fallback;
    }
    return it->second;
  }

  std::string required(const std::string& key) {
    if (!has(key)) throw UsageError(command_ + ": missing --" + dashed(key));
    return values_.at(key);
  }

  double real(const std::string& key, double fallback) {
    const std::string s = str(key, num(fallback));
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError(key + ": '" + s + "' is not a number");
    }
  }

  long long integer(const std::string& key, long long fallback) {
    const std::string s = str(key, std::to_string(fallback));
    try {
      std::size_t used = 0;
      const long long v = std::stoll(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError(key + ": '" + s + "' is not an integer");
    }
  }

  bool boolean(const std::string& key, bool fallback) {
    const std::string s = str(key, fallback ? "true" : "false");
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError(key + ": '" + s + "' is not true/false");
  }

  /// Resolved values, paths excluded, so a manifest does not depend on where
  /// the run wrote its files.
  json snapshot() const {
    json j = json::object();
    for (const auto& [k, v] : values_) {
      if (k != "out" && k != "config") j[k] = v;
    }
    return j;
  }

  static std::string dashed(std::string key) {
    for (char& c : key) {
      if (c == '_') c = '-';
    }
    return key;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  static std::string num(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
  }

  void check_known(const std::string& key, const std::string& where) const {
    if (known_.count(key) == 0) throw UsageError(where + ": unknown setting '" + key + "' for " + command_);
  }

  std::string command_;
  std::set<std::string> known_;
  std::map<std::string, std::string> values_;
  std::set<std::string> flags_;
};

// ---------------------------------------------------------------------------
// Manifest

/// SHA-1 over "blob <size>\0" + bytes, as git hashes file contents.
std::string git_blob_hash(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path);
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const std::string header = "blob " + std::to_string(bytes.size()) + std::string(1, '\0');
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  const bool ok = ctx != nullptr && EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, md, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw IoError("sha1 failed for " + path);
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

/// UTC time, or SOURCE_DATE_EPOCH when set so that manifests are reproducible.
std::string timestamp() {
  std::time_t t = std::time(nullptr);
  if (const char* sde = std::getenv("SOURCE_DATE_EPOCH")) {
    try {
      t = static_cast<std::time_t>(std::stoll(sde));
    } catch (const std::exception&) {
      throw ConfigError("SOURCE_DATE_EPOCH is not an integer");
    }
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

class Run {
 public:
  Run(std::string command, Settings& settings) : command_(std::move(command)), settings_(settings) {
    started_ = timestamp();
  }

  fs::path out_dir() {
    const fs::path dir = settings_.required("out");
    fs::create_directories(dir);
    return dir;
  }

  std::string input(const std::string& key) {
    const std::string path = settings_.required(key);
    inputs_[key] = {{"path", path}, {"hash", git_blob_hash(path)}};
    return path;
  }

  std::string optional_input(const std::string& key) {
    return settings_.has(key) ? input(key) : std::string();
  }

  std::string output(const std::string& name) {
    const fs::path p = out_dir() / name;
    outputs_.push_back(name);
    return p.string();
  }

  void finish(std::uint64_t seed) {
    json outs = json::object();
    const fs::path dir = out_dir();
    for (const std::string& name : outputs_) outs[name] = git_blob_hash((dir / name).string());
    const json m = {{"tool", "hsrl"},
                    {"subcommand", command_},
                    {"seed", seed},
                    {"config", settings_.snapshot()},
                    {"inputs", inputs_},
                    {"outputs", outs},
                    {"timestamps", {{"started", started_}, {"finished", timestamp()}}}};
    std::ofstream f(dir / "manifest.json");
    if (!f) throw IoError("cannot write manifest in " + dir.string());
    f << m.dump(2) << '\n';
  }

 private:
  std::string command_;
  Settings& settings_;
  std::string started_;
  json inputs_ = json::object();
  std::vector<std::string> outputs_;
};

// ---------------------------------------------------------------------------
// Shared option groups

const std::set<std::string> kTrainKeys = {
    "seed", "scheme", "variant", "topics", "cell", "gamma_max", "gamma1", "gamma2",
    "warmup_epochs", "ramp_epochs", "learning_rate", "rl_learning_rate", "optimizer", "grad_clip",
    "batch_size", "epochs", "manager_epochs", "max_steps", "t_max", "paper_literal_sign",
    "story_bonus", "manager_h", "iterative_manager_phase", "worker_hidden", "embed", "factors",
    "manager_hidden", "validate_every"};

TrainConfig train_config(Settings& s) {
  TrainConfig c;
  c.seed = static_cast<std::uint64_t>(s.integer("seed", 1));
  c.scheme = parse_scheme(s.str("scheme", to_string(c.scheme)));
  c.dims.topics = static_cast<int>(s.integer("topics", c.dims.topics));
  c.dims.cell = parse_cell_variant(s.str("cell", to_string(c.dims.cell)));
  c.dims.worker_hidden = s.integer("worker_hidden", c.dims.worker_hidden);
  c.dims.embed = s.integer("embed", c.dims.embed);
  c.dims.factors = s.integer("factors", c.dims.factors);
  c.dims.manager_hidden = s.integer("manager_hidden", c.dims.manager_hidden);
  c.gamma_max = s.real("gamma_max", c.gamma_max);
  c.gamma1 = s.real("gamma1", c.gamma1);
  c.gamma2 = s.real("gamma2", c.gamma2);
  c.warmup_epochs = static_cast<int>(s.integer("warmup_epochs", c.warmup_epochs));
  c.ramp_epochs = static_cast<int>(s.integer("ramp_epochs", c.ramp_epochs));
  c.learning_rate = s.real("learning_rate", c.learning_rate);
  c.rl_learning_rate = s.real("rl_learning_rate", c.rl_learning_rate);
  c.optimizer = parse_optimizer(s.str("optimizer", to_string(c.optimizer)));
  c.grad_clip = s.real("grad_clip", c.grad_clip);
  c.batch_size = static_cast<int>(s.integer("batch_size", c.batch_size));
  c.epochs = static_cast<int>(s.integer("epochs", c.epochs));
  c.manager_epochs = static_cast<int>(s.integer("manager_epochs", c.manager_epochs));
  c.max_steps = static_cast<int>(s.integer("max_steps", c.max_steps));
  c.t_max = static_cast<int>(s.integer("t_max", c.t_max));
  c.paper_literal_sign = s.boolean("paper_literal_sign", c.paper_literal_sign);
  c.story_bonus = s.real("story_bonus", c.story_bonus);
  const std::string mh = s.str("manager_h", "teacher-forced");
  if (mh == "teacher-forced") {
    c.manager_h = ManagerHSource::TeacherForced;
  } else if (mh == "greedy") {
    c.manager_h = ManagerHSource::Greedy;
  } else {
    throw ConfigError("manager_h: '" + mh + "' (teacher-forced|greedy)");
  }
  c.iterative_manager_phase = s.boolean("iterative_manager_phase", c.iterative_manager_phase);
  c.validate();
  return c;
}

/// Name a checkpoint reports under when no --variant is given.
std::string variant_of(const HsrlModel& m) {
  switch (m.kind) {
    case ModelKind::Hierarchical: return to_string(Variant::Hsrl);
    case ModelKind::TopicWorker:
      return to_string(m.policy.feed == TopicFeed::Random ? Variant::WorkerRandomTopics
                                                          : Variant::WorkerGtt);
    case ModelKind::Flat: return "flat";
  }
  return "hsrl";
}

// ---------------------------------------------------------------------------
// Subcommands

int synth_data(Settings& s) {
  Run run("synth-data", s);
  SynthConfig c;
  c.seed = static_cast<std::uint64_t>(s.integer("seed", static_cast<long long>(c.seed)));
  c.num_records = static_cast<std::size_t>(s.integer("num_records", 250));
  const auto valid = static_cast<std::size_t>(s.integer("valid_records", 50));
  c.slots = static_cast<std::size_t>(s.integer("slots", static_cast<long long>(c.slots)));
  c.feature_dim = s.integer("d_v", c.feature_dim);
  c.topics = static_cast<int>(s.integer("topics", c.topics));
  c.vocab_per_topic = static_cast<int>(s.integer("vocab_per_topic", c.vocab_per_topic));
  c.min_len = static_cast<int>(s.integer("min_len", c.min_len));
  c.max_len = static_cast<int>(s.integer("max_len", c.max_len));
  c.templates_per_topic = static_cast<int>(s.integer("templates_per_topic", c.templates_per_topic));
  c.zipf_exponent = s.real("zipf_exponent", c.zipf_exponent);
  c.separation = s.real("separation", c.separation);
  c.sigma = s.real("sigma", c.sigma);
  if (valid >= c.num_records) throw ConfigError("valid_records must be below num_records");

  Corpus train = synthesize_corpus(c);
  Corpus held = split_off(train, c.num_records - valid, Split::Valid);
  train.vocab.save(run.output("vocab.txt"));
  save_corpus(train, run.output("train.jsonl"));
  if (!held.records.empty()) save_corpus(held, run.output("valid.jsonl"));
  run.finish(c.seed);
  std::cout << "synth-data: " << train.records.size() << " train / " << held.records.size()
            << " valid records, vocab " << train.vocab.size() << '\n';
  return 0;
}

int fit_topics(Settings& s) {
  Run run("fit-topics", s);
  const Vocab vocab = Vocab::load(run.input("vocab"));
  Corpus train = load_corpus(run.input("train"), vocab, Split::Train);
  const std::string valid_path = run.optional_input("valid");
  const auto seed = static_cast<std::uint64_t>(s.integer("seed", 1));
  const int k = static_cast<int>(s.integer("topics", 4));
  const int max_iter = static_cast<int>(s.integer("max_iter", 100));

  const TopicModel model = kmeans_fit(slot_features(train), k, seed, max_iter);
  save_topic_model(model, run.output("topic_model.json"));
  golden_topic_sequences(model, train);
  save_corpus(train, run.output("train.jsonl"));
  if (!valid_path.empty()) {
    Corpus valid = load_corpus(valid_path, vocab, Split::Valid);
    golden_topic_sequences(model, valid);
    save_corpus(valid, run.output("valid.jsonl"));
  }
  run.finish(seed);
  std::printf("fit-topics: K=%d inertia=%.6f iterations=%d\n", k, model.inertia, model.iterations);
  return 0;
}

int train(Settings& s) {
  Run run("train", s);
  const Vocab vocab = Vocab::load(run.input("vocab"));
  const Corpus corpus = load_corpus(run.input("train"), vocab, Split::Train);
  const std::string valid_path = run.optional_input("valid");
  const TrainConfig cfg = train_config(s);
  const Variant variant = parse_variant(s.str("variant", "hsrl"));
  const int validate_every = static_cast<int>(s.integer("validate_every", 0));

  std::optional<Corpus> valid;
  std::optional<RewardTables> tables;
  TrainHooks hooks;
  if (!valid_path.empty() && validate_every > 0) {
    valid = load_corpus(valid_path, vocab, Split::Valid);
    tables.emplace(corpus);
    hooks.validate_every = validate_every;
    hooks.validate = [&](const HsrlModel& m, int epoch) {
      const double c =
          evaluate_model(m, *valid, *tables, variant_generation(variant, cfg)).cider_story_concat;
      std::fprintf(stderr, "epoch %d validation CIDEr-D %.4f\n", epoch, c);
      return c;
    };
  }

  TrainResult tr;
  switch (variant) {
    case Variant::Hsrl: tr = train_hierarchical(corpus, cfg, hooks); break;
    case Variant::WorkerGtt: tr = train_topic_worker(corpus, cfg, TopicFeed::Golden, hooks); break;
    case Variant::WorkerRandomTopics:
      tr = train_topic_worker(corpus, cfg, TopicFeed::Random, hooks);
      break;
    case Variant::FlatMle: tr = train_flat(corpus, cfg, false, hooks); break;
    case Variant::FlatRl: tr = train_flat(corpus, cfg, true, hooks); break;
  }
  save_checkpoint(run.output("model.ckpt"), tr.model);
  tr.history.write_csv(run.output("history.csv"));
  run.finish(cfg.seed);
  const EpochRecord* last = tr.history.epochs.empty() ? nullptr : &tr.history.epochs.back();
  std::printf("train: %s, %zu steps", to_string(variant).c_str(), tr.history.steps.size());
  if (last) std::printf(", final worker_mle %.4f manager_mle %.4f", last->mean.worker_mle, last->mean.manager_mle);
  std::printf("\n");
  return 0;
}

GenerateOptions generation_options(Settings& s, const HsrlModel& model) {
  GenerateOptions g;
  g.seed = static_cast<std::uint64_t>(s.integer("seed", 1));
  g.t_max = static_cast<int>(s.integer("t_max", 20));
  const std::string mode = s.str("mode", "greedy");
  if (mode == "greedy") {
    g.mode = WorkerMode::Greedy;
  } else if (mode == "sample") {
    g.mode = WorkerMode::Sample;
  } else {
    throw ConfigError("mode: '" + mode + "' (greedy|sample)");
  }
  g.feed = parse_topic_feed(s.str("feed", to_string(model.policy.feed)));
  return g;
}

int generate(Settings& s) {
  Run run("generate", s);
  const HsrlModel model = load_checkpoint(run.input("checkpoint"));
  const Vocab vocab = Vocab::load(run.input("vocab"));
  const Corpus corpus = load_corpus(run.input("corpus"), vocab, Split::Test);
  const GenerateOptions g = generation_options(s, model);
  const auto traces = generate_stories(model, corpus.records, g);
  write_traces(run.output("stories.jsonl"), traces, vocab);
  run.finish(g.seed);
  std::printf("generate: %zu stories\n", traces.size());
  return 0;
}

int evaluate(Settings& s) {
  Run run("evaluate", s);
  const Vocab vocab = Vocab::load(run.input("vocab"));
  const Corpus train = load_corpus(run.input("train"), vocab, Split::Train);
  const Split split = parse_split(s.str("split", "valid"));
  const Corpus eval = load_corpus(run.input("corpus"), vocab, split);
  EvalReport report;
  std::uint64_t seed = 0;
  if (s.has("checkpoint")) {
    const HsrlModel model = load_checkpoint(run.input("checkpoint"));
    const GenerateOptions g = generation_options(s, model);
    seed = g.seed;
    report = evaluate_model(model, eval, RewardTables(train), g);
    report.variant = s.str("variant", variant_of(model));
  } else {
    // No checkpoint: train the variant from scratch, then score it.
    const TrainConfig cfg = train_config(s);
    seed = cfg.seed;
    const VariantRun vr = run_variant(parse_variant(s.str("variant", "hsrl")), train, eval, cfg);
    save_checkpoint(run.output("model.ckpt"), vr.model);
    vr.history.write_csv(run.output("history.csv"));
    report = vr.report;
  }
  {
    std::ofstream f(run.output("report.json"));
    if (!f) throw IoError("cannot write report");
    f << report.to_json().dump(2) << '\n';
  }
  run.finish(seed);
  std::printf("evaluate: %s on %s, CIDEr-D %.4f (sentence mean %.4f), BLEU-4 %.4f, ROUGE-L %.4f\n",
              report.variant.c_str(), report.split.c_str(), report.cider_story_concat,
              report.cider_sentence_mean, report.bleu4, report.rouge_l);
  return 0;
}

int grad_check(Settings& s) {
  const auto seed = static_cast<std::uint64_t>(s.integer("seed", 1));
  const CellVariant cell = parse_cell_variant(s.str("cell", "scn-lstm"));
  const double step = s.real("step", 1e-5);
  const double tol = s.real("tolerance", 1e-4);
  double worst = 0.0;
  std::string worst_loss;
  json results = json::array();
  for (const LossGradCheck& r : loss_gradient_suite(cell, seed, step)) {
    std::printf("%-14s max_rel_error %.3e over %zu coordinates (worst: %s)\n", r.loss.c_str(),
                r.report.max_rel_error, r.report.coordinates, r.report.worst_parameter.c_str());
    results.push_back({{"loss", r.loss},
                       {"max_rel_error", r.report.max_rel_error},
                       {"coordinates", r.report.coordinates},
                       {"worst_parameter", r.report.worst_parameter}});
    if (!(r.report.max_rel_error <= worst)) {
      worst = r.report.max_rel_error;
      worst_loss = r.loss;
    }
  }
  std::printf("max_rel_error %.3e\n", worst);
  if (s.has("out")) {
    Run run("grad-check", s);
    std::ofstream f(run.output("grad_check.json"));
    f << json{{"results", results}, {"max_rel_error", worst}, {"tolerance", tol}}.dump(2) << '\n';
    f.close();
    run.finish(seed);
  }
  if (!(worst < tol)) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "gradient check failed: %s max relative error %.3e >= %.1e",
                  worst_loss.c_str(), worst, tol);
    throw InvariantError(buf);
  }
  return 0;
}

struct Command {
  std::string name;
  std::string help;
  std::set<std::string> keys;
  int (*run)(Settings&);
};

std::set<std::string> with(std::set<std::string> a, const std::set<std::string>& b) {
  a.insert(b.begin(), b.end());
  return a;
}

}  // namespace

int main(int argc, char** argv) {
  const std::set<std::string> gen_keys = {"seed", "t_max", "mode", "feed"};
  const std::vector<Command> commands = {
      {"synth-data", "Write a synthetic topic-template corpus (train/valid JSON-lines + vocab)",
       {"seed", "num_records", "valid_records", "slots", "d_v", "topics", "vocab_per_topic",
        "min_len", "max_len", "templates_per_topic", "zipf_exponent", "separation", "sigma"},
       synth_data},
      {"fit-topics", "Cluster slot features with k-means and label golden topic sequences",
       {"seed", "topics", "max_iter", "train", "valid", "vocab"},
       fit_topics},
      {"train", "Train a model variant and write a checkpoint and loss history",
       with(kTrainKeys, {"train", "valid", "vocab"}),
       train},
      {"generate", "Generate stories from a checkpoint",
       with(gen_keys, {"checkpoint", "corpus", "vocab"}),
       generate},
      {"evaluate", "Score a checkpoint (or train and score a variant) on a split",
       with(with(kTrainKeys, gen_keys), {"checkpoint", "train", "corpus", "vocab", "split"}),
       evaluate},
      {"grad-check", "Finite-difference check of every training loss on toy dimensions",
       {"seed", "cell", "step", "tolerance"},
       grad_check},
  };

  CLI::App app{"Hierarchically structured reinforcement learning for story generation"};
  app.require_subcommand(1);
  std::map<std::string, std::unique_ptr<Settings>> settings;
  std::map<std::string, std::string> config_paths;
  for (const Command& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    std::set<std::string> keys = c.keys;
    keys.insert("out");
    keys.insert("config");
    auto st = std::make_unique<Settings>(c.name, keys);
    Settings* raw = st.get();
    settings[c.name] = std::move(st);
    sub->add_option_function<std::string>(
        "--config", [&config_paths, name = c.name](const std::string& p) { config_paths[name] = p; },
        "Flat 'key = value' settings file; flags win");
    for (const std::string& key : keys) {
      if (key == "config") continue;
      sub->add_option_function<std::string>(
          "--" + Settings::dashed(key), [raw, key](const std::string& v) { raw->set_flag(key, v); },
          key);
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    const std::string what = e.what();
    std::cerr << "usage_error: " << (what.empty() ? e.get_name() : what) << '\n';
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "usage_error: " << e.what() << '\n';
    return 2;
  }

  for (const Command& c : commands) {
    if (!app.got_subcommand(c.name)) continue;
    Settings& s = *settings.at(c.name);
    try {
      auto cp = config_paths.find(c.name);
      if (cp != config_paths.end()) s.load_file(cp->second);
      return c.run(s);
    } catch (const UsageError& e) {
      std::cerr << "usage_error: " << e.what() << '\n';
      return 2;
    } catch (const Error& e) {
      std::cerr << e.kind() << ": " << e.what() << '\n';
      return 1;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return 1;
    }
  }
  return 2;
}
