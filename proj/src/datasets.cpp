#include "hsrl/datasets.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iostream>
#include <sstream>

#include "json.hpp"

namespace hsrl {

using nlohmann::json;

namespace {
const std::vector<std::string> kReservedTokens = {"<pad>", "<bos>", "<eos>", "<unk>"};
}

Vocab::Vocab() {
  for (const auto& t : kReservedTokens) add(t);
}

int Vocab::add(const std::string& token) {
  if (auto it = index_.find(token); it != index_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

int Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary of size " +
                     std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocab file " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  if (lines.size() < kReservedTokens.size()) {
    throw SchemaError(path + ": vocab needs at least " + std::to_string(kReservedTokens.size()) +
                      " lines");
  }
  Vocab v;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i < kReservedTokens.size()) {
      if (lines[i] != kReservedTokens[i]) {
        throw SchemaError(path + ":" + std::to_string(i + 1) + ": expected reserved token " +
                          kReservedTokens[i] + ", found '" + lines[i] + "'");
      }
      continue;
    }
    if (lines[i].empty() || v.contains(lines[i])) {
      throw SchemaError(path + ":" + std::to_string(i + 1) + ": empty or duplicate token");
    }
    v.add(lines[i]);
  }
  return v;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocab file " + path);
  for (const auto& t : tokens_) out << t << '\n';
}

std::vector<int> tokenize(const std::string& text, const Vocab& vocab) {
  std::istringstream is(text);
  std::vector<int> ids;
  std::string word;
  while (is >> word) {
    std::transform(word.begin(), word.end(), word.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    ids.push_back(vocab.id(word));
  }
  return ids;
}

std::string detokenize(std::span<const int> ids, const Vocab& vocab) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += vocab.token(ids[i]);
  }
  return out;
}

std::vector<int> strip_special(std::span<const int> ids) {
  std::vector<int> out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id != Vocab::kPad && id != Vocab::kBos && id != Vocab::kEos) out.push_back(id);
  }
  return out;
}

std::string to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "valid") return Split::Valid;
  if (s == "test") return Split::Test;
  throw ConfigError("unknown split '" + s + "'");
}

bool Corpus::has_golden_topics() const {
  return !records.empty() && std::all_of(records.begin(), records.end(), [](const StoryRecord& r) {
           return r.golden_topics.has_value();
         });
}

void validate(const Corpus& corpus, std::optional<int> topics) {
  const std::size_t n = corpus.slots();
  const Index dv = corpus.feature_dim();
  const auto vsize = static_cast<int>(corpus.vocab.size());
  for (std::size_t r = 0; r < corpus.records.size(); ++r) {
    const StoryRecord& rec = corpus.records[r];
    const std::string where = "record " + std::to_string(r) + ": ";
    if (rec.features.empty()) throw SchemaError(where + "no features");
    if (rec.features.size() != rec.sentences.size()) {
      throw SchemaError(where + std::to_string(rec.features.size()) + " features but " +
                        std::to_string(rec.sentences.size()) + " sentences");
    }
    if (rec.features.size() != n) {
      throw SchemaError(where + "has " + std::to_string(rec.features.size()) +
                        " slots, corpus has " + std::to_string(n));
    }
    for (const Vector& f : rec.features) {
      if (f.size() != dv) {
        throw SchemaError(where + "feature dimension " + std::to_string(f.size()) +
                          " differs from " + std::to_string(dv));
      }
      if (!f.allFinite()) throw SchemaError(where + "non-finite feature value");
    }
    for (const auto& s : rec.sentences) {
      if (s.size() < 2 || s.back() != Vocab::kEos) {
        throw SchemaError(where + "sentence must hold at least one word and end in EOS");
      }
      for (std::size_t t = 0; t < s.size(); ++t) {
        if (s[t] < 0 || s[t] >= vsize) throw SchemaError(where + "token id outside vocabulary");
        if (s[t] == Vocab::kEos && t + 1 != s.size()) {
          throw SchemaError(where + "EOS inside sentence");
        }
      }
    }
    if (rec.golden_topics) {
      if (rec.golden_topics->size() != n) throw SchemaError(where + "topic count differs from n");
      for (int k : *rec.golden_topics) {
        if (k < 0 || (topics && k >= *topics)) {
          throw SchemaError(where + "topic id " + std::to_string(k) + " out of range");
        }
      }
    }
  }
}

Vector mean_pool(std::span<const Vector> features) {
  if (features.empty()) throw DimensionError("mean_pool: empty image sequence");
  Vector acc = Vector::Zero(features.front().size());
  for (const Vector& v : features) {
    if (v.size() != acc.size()) {
      throw DimensionError("mean_pool: feature sizes differ (" + std::to_string(v.size()) + " vs " +
                           std::to_string(acc.size()) + ")");
    }
    acc += v;
  }
  return acc / static_cast<double>(features.size());
}

Corpus load_corpus(const std::string& path, const Vocab& vocab, Split split) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus file " + path);
  Corpus corpus;
  corpus.vocab = vocab;
  corpus.split = split;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(where + ": " + e.what());
    }
    StoryRecord rec;
    try {
      for (const auto& f : obj.at("features")) {
        auto values = f.get<std::vector<double>>();
        rec.features.push_back(Eigen::Map<const Vector>(values.data(), static_cast<Index>(values.size())));
      }
      for (const auto& s : obj.at("sentences")) {
        auto ids = tokenize(s.get<std::string>(), vocab);
        for (int id : ids) corpus.unk_count += id == Vocab::kUnk ? 1 : 0;
        if (ids.empty()) throw SchemaError(where + ": empty sentence");
        ids.push_back(Vocab::kEos);
        rec.sentences.push_back(std::move(ids));
      }
      if (obj.contains("topics")) rec.golden_topics = obj.at("topics").get<std::vector<int>>();
    } catch (const json::exception& e) {
      throw ParseError(where + ": " + e.what());
    }
    if (rec.features.size() != rec.sentences.size()) {
      throw SchemaError(where + ": " + std::to_string(rec.features.size()) + " features but " +
                        std::to_string(rec.sentences.size()) + " sentences");
    }
    corpus.records.push_back(std::move(rec));
  }
  try {
    validate(corpus);
  } catch (const SchemaError& e) {
    throw SchemaError(path + ": " + e.what());
  }
  if (corpus.unk_count > 0) {
    std::clog << "load_corpus: " << path << ": " << corpus.unk_count
              << " out-of-vocabulary tokens mapped to <unk>\n";
  }
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write corpus file " + path);
  for (const StoryRecord& rec : corpus.records) {
    json obj;
    json feats = json::array();
    for (const Vector& f : rec.features) feats.push_back(std::vector<double>(f.data(), f.data() + f.size()));
    obj["features"] = std::move(feats);
    json sents = json::array();
    for (const auto& s : rec.sentences) {
      std::vector<int> words(s.begin(), s.end());
      if (!words.empty() && words.back() == Vocab::kEos) words.pop_back();
      sents.push_back(detokenize(words, corpus.vocab));
    }
    obj["sentences"] = std::move(sents);
    if (rec.golden_topics) obj["topics"] = *rec.golden_topics;
    out << obj.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& function_words() {
  static const std::vector<std::string> words = {"the", "a", "is", "with", "and", "on", "in"};
  return words;
}

namespace {

const std::string kConsonants = "bdfgklmnprstvz";
const std::string kVowels = "aeiou";

std::string content_word(int topic, int j) {
  std::string w;
  w += kConsonants[static_cast<std::size_t>(topic) % kConsonants.size()];
  w += kVowels[(static_cast<std::size_t>(topic) / kConsonants.size()) % kVowels.size()];
  w += kConsonants[static_cast<std::size_t>(j) % kConsonants.size()];
  w += kVowels[(static_cast<std::size_t>(j) / kConsonants.size()) % kVowels.size()];
  return w;
}

void check(const SynthConfig& cfg) {
  const auto cap = static_cast<int>(kConsonants.size() * kVowels.size());
  if (cfg.topics < 2) throw ConfigError("synthesize_corpus: need at least 2 topics");
  if (cfg.feature_dim < cfg.topics) throw ConfigError("synthesize_corpus: d_v must be >= K");
  if (cfg.topics > cap || cfg.vocab_per_topic < 1 || cfg.vocab_per_topic > cap) {
    throw ConfigError("synthesize_corpus: topic or per-topic vocabulary count out of range");
  }
  if (cfg.slots < 1 || cfg.num_records < 1) throw ConfigError("synthesize_corpus: empty corpus");
  if (cfg.min_len < 2 || cfg.max_len < cfg.min_len) {
    throw ConfigError("synthesize_corpus: sentence length range must satisfy 2 <= min <= max");
  }
  if (cfg.templates_per_topic < 1) throw ConfigError("synthesize_corpus: need at least one template");
  if (!(cfg.zipf_exponent >= 0.0)) throw ConfigError("synthesize_corpus: zipf exponent must be >= 0");
  if (!(cfg.sigma > 0.0) || !(cfg.separation > 0.0)) {
    throw ConfigError("synthesize_corpus: sigma and separation must be positive");
  }
}

}  // namespace

std::optional<int> content_word_topic(const std::string& token, const SynthConfig& cfg) {
  for (int k = 0; k < cfg.topics; ++k) {
    for (int j = 0; j < cfg.vocab_per_topic; ++j) {
      if (content_word(k, j) == token) return k;
    }
  }
  return std::nullopt;
}

Corpus synthesize_corpus(const SynthConfig& cfg) {
  check(cfg);
  Corpus corpus;
  const auto& fw = function_words();
  for (const auto& w : fw) corpus.vocab.add(w);
  std::vector<std::vector<int>> topic_words(static_cast<std::size_t>(cfg.topics));
  for (int k = 0; k < cfg.topics; ++k) {
    for (int j = 0; j < cfg.vocab_per_topic; ++j) {
      topic_words[static_cast<std::size_t>(k)].push_back(corpus.vocab.add(content_word(k, j)));
    }
  }
  std::vector<double> zipf(static_cast<std::size_t>(cfg.vocab_per_topic));
  for (std::size_t j = 0; j < zipf.size(); ++j) {
    zipf[j] = std::pow(static_cast<double>(j + 1), -cfg.zipf_exponent);
  }

  // Centres on scaled coordinate axes: pairwise distance = separation * sigma.
  const double axis = cfg.separation * cfg.sigma / std::sqrt(2.0);
  std::vector<int> openers = {corpus.vocab.id("the"), corpus.vocab.id("a")};
  std::vector<int> links;
  for (std::size_t i = 2; i < fw.size(); ++i) links.push_back(corpus.vocab.id(fw[i]));

  // Each topic owns a few templates: a fixed opener, length and link words,
  // with content-word holes at odd positions (marked -1).
  SeededRng template_rng = SeededRng(cfg.seed).derive(1);
  std::vector<std::vector<std::vector<int>>> templates(static_cast<std::size_t>(cfg.topics));
  for (auto& topic_templates : templates) {
    for (int i = 0; i < cfg.templates_per_topic; ++i) {
      const auto len = cfg.min_len + static_cast<int>(template_rng.below(
                                         static_cast<std::size_t>(cfg.max_len - cfg.min_len + 1)));
      std::vector<int> tpl = {openers[template_rng.below(openers.size())]};
      for (int t = 1; t < len; ++t) {
        tpl.push_back(t % 2 == 1 ? -1 : links[template_rng.below(links.size())]);
      }
      topic_templates.push_back(std::move(tpl));
    }
  }

  SeededRng rng(cfg.seed);
  for (std::size_t r = 0; r < cfg.num_records; ++r) {
    StoryRecord rec;
    std::vector<int> topics;
    for (std::size_t l = 0; l < cfg.slots; ++l) {
      const int k = static_cast<int>(rng.below(static_cast<std::size_t>(cfg.topics)));
      topics.push_back(k);
      Vector v(cfg.feature_dim);
      for (Index d = 0; d < cfg.feature_dim; ++d) v[d] = cfg.sigma * rng.normal();
      v[k] += axis;
      rec.features.push_back(std::move(v));

      const auto& options = templates[static_cast<std::size_t>(k)];
      std::vector<int> sentence = options[rng.below(options.size())];
      for (int& w : sentence) {
        if (w < 0) w = topic_words[static_cast<std::size_t>(k)][rng.categorical(zipf)];
      }
      sentence.push_back(Vocab::kEos);
      rec.sentences.push_back(std::move(sentence));
    }
    rec.golden_topics = std::move(topics);
    corpus.records.push_back(std::move(rec));
  }
  validate(corpus, cfg.topics);
  return corpus;
}

Corpus split_off(Corpus& head, std::size_t count, Split tail_split) {
  if (count > head.records.size()) throw ConfigError("split_off: not enough records");
  Corpus tail;
  tail.vocab = head.vocab;
  tail.split = tail_split;
  tail.records.assign(std::make_move_iterator(head.records.begin() + static_cast<std::ptrdiff_t>(count)),
                      std::make_move_iterator(head.records.end()));
  head.records.resize(count);
  return tail;
}

}  // namespace hsrl
