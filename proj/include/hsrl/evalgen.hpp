#pragma once

// Story generation with a trained model and the evaluation harness that
// scores it, plus the baseline variants of the comparison table.

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "hsrl/training.hpp"

namespace hsrl {

struct SlotTrace {
  std::vector<double> g;  // topic distribution handed to the Worker
  int topic = 0;          // argmax of g
  std::vector<int> tokens;
  std::vector<double> token_logp;
  std::vector<double> final_h;
};

struct GenerationTrace {
  std::vector<SlotTrace> slots;
  bool manager_invoked = false;

  std::vector<Tokens> sentences() const;
};

struct GenerateOptions {
  WorkerMode mode = WorkerMode::Greedy;
  /// Defaults to the model's own policy.
  std::optional<TopicFeed> feed;
  /// Seeds sampling and random topics.
  std::uint64_t seed = 0;
  int t_max = 20;
  /// Records decoded together; results do not depend on it in greedy mode.
  std::size_t batch = 50;
};

GenerationTrace generate_story(const HsrlModel& model, const StoryRecord& record,
                               const GenerateOptions& options = {});
std::vector<GenerationTrace> generate_stories(const HsrlModel& model,
                                              std::span<const StoryRecord> records,
                                              const GenerateOptions& options = {});

struct RecordScore {
  std::vector<double> sentence_rewards;  // CIDEr-D of sentence l vs reference l
  double story_cider = 0.0;
  bool operator==(const RecordScore&) const = default;
};

struct EvalReport {
  std::string variant;
  std::string split;
  std::size_t records = 0;
  double bleu4 = 0.0;
  double rouge_l = 0.0;
  double cider_story_concat = 0.0;
  double cider_sentence_mean = 0.0;
  double distinct_1 = 0.0;
  double distinct_2 = 0.0;
  /// Fraction of sentences that repeat an earlier sentence of the same story.
  double repetition_rate = 0.0;
  std::vector<RecordScore> per_record;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
  bool operator==(const EvalReport&) const = default;
};

/// Scores generated stories ([record][slot] tokens) against a split.  Story
/// metrics use each record's sentences concatenated; the DF tables come from
/// the training split.
EvalReport evaluate_split(const std::vector<std::vector<Tokens>>& generated, const Corpus& split,
                          const RewardTables& tables);
EvalReport evaluate_model(const HsrlModel& model, const Corpus& split, const RewardTables& tables,
                          const GenerateOptions& options = {});

/// distinct-n over all sentences: unique n-grams / total n-grams.
double distinct_n(const std::vector<std::vector<Tokens>>& stories, int n);
double repetition_rate(const std::vector<std::vector<Tokens>>& stories);

enum class Variant { Hsrl, WorkerRandomTopics, WorkerGtt, FlatMle, FlatRl };
std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

struct VariantRun {
  HsrlModel model;
  TrainHistory history;
  EvalReport report;
};

/// Trains (unless `trained` is given) and evaluates one variant.  hsrl uses
/// cfg.scheme; worker_random_topics is trained and evaluated with topics drawn
/// uniformly per slot.
VariantRun run_variant(Variant variant, const Corpus& train, const Corpus& eval,
                       const TrainConfig& cfg, const HsrlModel* trained = nullptr);

/// Topic feed and Worker settings a variant is evaluated with.
GenerateOptions variant_generation(Variant variant, const TrainConfig& cfg);

/// One JSON object per story: topic sequence, g rows and detokenized sentences.
void write_traces(const std::string& path, const std::vector<GenerationTrace>& traces,
                  const Vocab& vocab);

}  // namespace hsrl
