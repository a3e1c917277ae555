#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "hsrl/diffcore.hpp"

namespace hsrl {

/// Token <-> id bijection with four reserved ids.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kReserved = 4;

  Vocab();

  /// Returns the id of `token`, inserting it if new.
  int add(const std::string& token);
  /// Id of `token`, or kUnk when absent.
  int id(const std::string& token) const;
  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  const std::string& token(int id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// One token per line; line number is the id.
  static Vocab load(const std::string& path);
  void save(const std::string& path) const;

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// Lowercased whitespace tokenization; unknown words map to UNK.
std::vector<int> tokenize(const std::string& text, const Vocab& vocab);
std::string detokenize(std::span<const int> ids, const Vocab& vocab);
/// Drops PAD/BOS/EOS ids; what the metrics see.
std::vector<int> strip_special(std::span<const int> ids);

enum class Split { Train, Valid, Test };
std::string to_string(Split split);
Split parse_split(const std::string& s);

struct StoryRecord {
  std::vector<Vector> features;               // n vectors of d_v
  std::vector<std::vector<int>> sentences;    // n sequences, each EOS-terminated
  std::optional<std::vector<int>> golden_topics;

  std::size_t slots() const { return features.size(); }
  bool operator==(const StoryRecord&) const = default;
};

struct Corpus {
  std::vector<StoryRecord> records;
  Vocab vocab;
  Split split = Split::Train;
  /// Out-of-vocabulary tokens replaced by UNK while loading.
  std::size_t unk_count = 0;

  std::size_t slots() const { return records.empty() ? 0 : records.front().slots(); }
  Index feature_dim() const {
    return records.empty() || records.front().features.empty() ? 0
                                                               : records.front().features[0].size();
  }
  bool has_golden_topics() const;
};

/// Checks every StoryRecord/Corpus invariant; throws SchemaError on failure.
/// Topic ids are range-checked when `topics` is given.
void validate(const Corpus& corpus, std::optional<int> topics = std::nullopt);

/// Elementwise mean over the image sequence.
Vector mean_pool(std::span<const Vector> features);

/// JSON-lines: {"features": [[...]...], "sentences": ["..."...], "topics": [...]}.
Corpus load_corpus(const std::string& path, const Vocab& vocab, Split split = Split::Train);
void save_corpus(const Corpus& corpus, const std::string& path);

// ---------------------------------------------------------------------------

struct SynthConfig {
  std::size_t num_records = 250;
  std::size_t slots = 5;
  Index feature_dim = 16;
  int topics = 4;
  int vocab_per_topic = 6;
  int min_len = 5;
  int max_len = 9;
  /// Sentence templates per topic (opener, length and link words fixed).
  int templates_per_topic = 2;
  /// Content words are drawn with probability proportional to rank^-exponent.
  double zipf_exponent = 1.0;
  /// Distance between blob centres, in units of sigma.
  double separation = 10.0;
  double sigma = 1.0;
  std::uint64_t seed = 7;
};

/// Function words shared by every topic.
const std::vector<std::string>& function_words();

/// Corpus whose slot features come from K Gaussian blobs (blob id is written
/// as the golden topic) and whose sentences fill one of the topic's templates
/// (shared function words) with Zipf-weighted content words of that topic.
Corpus synthesize_corpus(const SynthConfig& cfg);

/// Topic owning a content word, or nullopt for function/reserved tokens.
std::optional<int> content_word_topic(const std::string& token, const SynthConfig& cfg);

/// First `count` records stay in `head`; the rest move to the returned corpus.
Corpus split_off(Corpus& head, std::size_t count, Split tail_split);

}  // namespace hsrl
