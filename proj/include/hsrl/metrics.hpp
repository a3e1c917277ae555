#pragma once

#include <array>
#include <span>
#include <unordered_map>
#include <vector>

#include "hsrl/datasets.hpp"

namespace hsrl {

using Tokens = std::vector<int>;

struct TokensHash {
  std::size_t operator()(const Tokens& t) const noexcept;
};

using NGramCounts = std::unordered_map<Tokens, int, TokensHash>;

/// Counts of every n-gram of order 1..max_order in `tokens`.
NGramCounts ngram_counts(std::span<const int> tokens, int max_order = 4);

/// Document frequencies of n-grams (orders 1..4) over a reference collection.
/// Each document contributes at most one count per distinct n-gram.
class DocFreqTable {
 public:
  DocFreqTable() = default;
  explicit DocFreqTable(std::span<const Tokens> documents);

  void add_document(std::span<const int> tokens);
  int frequency(const Tokens& ngram) const;
  std::size_t documents() const { return documents_; }

  /// Sentence-level table: every reference sentence of the corpus.
  static DocFreqTable from_sentences(const Corpus& corpus);
  /// Story-level table: each record's sentences concatenated.
  static DocFreqTable from_stories(const Corpus& corpus);

 private:
  NGramCounts df_;
  std::size_t documents_ = 0;
};

/// CIDEr-D as in the COCO caption evaluation code: tf-idf vectors per order
/// n = 1..4, clipped cosine similarity, Gaussian length penalty with
/// sigma = 6 on the bigram-count difference, averaged over orders and
/// references, scaled by 10.  Special tokens are stripped first; an empty
/// candidate scores 0.
double cider_d(std::span<const int> candidate, std::span<const Tokens> references,
               const DocFreqTable& df);

/// Corpus BLEU-4: clipped n-gram precisions summed over the corpus, brevity
/// penalty against the closest reference length.  No smoothing.
double bleu4(std::span<const Tokens> candidates, std::span<const std::vector<Tokens>> references);
double bleu4(std::span<const Tokens> candidates, std::span<const Tokens> references);
/// Per-sentence BLEU-4 with +1 added to numerator and denominator of every
/// precision.  Diagnostics only.
double sentence_bleu4(std::span<const int> candidate, std::span<const Tokens> references);

/// Longest common subsequence length.
std::size_t lcs_length(std::span<const int> a, std::span<const int> b);

/// ROUGE-L F-measure with beta = 1.2.  With several references the best
/// precision and best recall are combined (COCO convention).
double rouge_l(std::span<const int> candidate, std::span<const Tokens> references);
double rouge_l(std::span<const int> candidate, std::span<const int> reference);

struct RewardReport {
  std::vector<double> sentence_rewards;  // CIDEr-D of sentence l vs reference l
  double bleu4 = 0.0;                    // whole-story concatenation
  double rouge_l = 0.0;
  double cider_d = 0.0;
};

Tokens concat_story(std::span<const Tokens> sentences);

/// Per-sentence CIDEr-D rewards plus story-level metrics of the concatenation.
RewardReport sentence_rewards(std::span<const Tokens> generated, std::span<const Tokens> golden,
                              const DocFreqTable& sentence_df, const DocFreqTable& story_df);

}  // namespace hsrl
