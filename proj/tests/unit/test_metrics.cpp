#include <cmath>

#include "doctest.h"
#include "hsrl/metrics.hpp"
#include "oracles.hpp"

using namespace hsrl;

namespace {

const std::vector<int> kAlphabet = {4, 5, 6};

DocFreqTable table_of(const std::vector<Tokens>& docs) { return DocFreqTable(std::span<const Tokens>(docs)); }

double rouge_f(double p, double r) {
  const double b2 = 1.44;
  return (1 + b2) * p * r / (r + b2 * p);
}

}  // namespace

TEST_CASE("ngram_counts and document frequencies") {
  const Tokens s = {4, 5, 4, 5};
  const NGramCounts c = ngram_counts(s);
  CHECK(c.at({4}) == 2);
  CHECK(c.at({4, 5}) == 2);
  CHECK(c.at({5, 4}) == 1);
  CHECK(c.at({4, 5, 4, 5}) == 1);
  CHECK(c.size() == 2 + 2 + 2 + 1);

  const DocFreqTable df = table_of({{4, 5, 4}, {5, 6}, {7}});
  CHECK(df.documents() == 3);
  CHECK(df.frequency({4}) == 1);  // once per document
  CHECK(df.frequency({5}) == 2);
  CHECK(df.frequency({6, 5}) == 0);
}

TEST_CASE("cider_d: identity, disjoint, empty") {
  const std::vector<Tokens> docs = {{4, 5, 6, 7}, {8, 9, 10, 11}, {4, 9, 6}};
  const DocFreqTable df = table_of(docs);
  const std::vector<Tokens> ref = {docs[0]};
  CHECK(std::abs(cider_d(docs[0], ref, df) - 10.0) < 1e-9);
  CHECK(cider_d(Tokens{8, 9, 10, 11}, ref, df) == 0.0);
  CHECK(cider_d(Tokens{}, ref, df) == 0.0);
  // Special tokens are stripped before scoring.
  const Tokens with_eos = {Vocab::kBos, 4, 5, 6, 7, Vocab::kEos, Vocab::kPad};
  CHECK(std::abs(cider_d(with_eos, ref, df) - 10.0) < 1e-9);

  // A 3-token sentence has no 4-grams, so one order of four contributes 0.
  const std::vector<Tokens> short_ref = {docs[2]};
  CHECK(std::abs(cider_d(docs[2], short_ref, df) - 7.5) < 1e-9);
}

TEST_CASE("cider_d: 2-token toy pair by hand") {
  // docs: {4 5}, {5 6}; N = 2.  Candidate {4 5} vs reference {5 6}.
  const std::vector<Tokens> docs = {{4, 5}, {5, 6}};
  const DocFreqTable df = table_of(docs);
  // Unigrams: cand w(4)=log2, w(5)=0; ref w(5)=0, w(6)=log2.  Shared gram "5"
  // has weight 0 on both sides, so the dot product is 0; bigrams are disjoint.
  CHECK(cider_d(Tokens{4, 5}, std::vector<Tokens>{{5, 6}}, df) == 0.0);
  // Candidate {4 6} vs reference {4 5}: unigram "4" is shared.
  // cand = (log2, log2) over {4, 6}; ref = (log2, 0) over {4, 5}.
  // cos = log2^2 / (sqrt2 log2 * log2) = 1/sqrt2; bigram orders give 0.
  const double expect = 10.0 * (1.0 / std::sqrt(2.0)) / 4.0;
  CHECK(std::abs(cider_d(Tokens{4, 6}, std::vector<Tokens>{{4, 5}}, df) - expect) < 1e-12);
  CHECK(std::abs(oracle::cider_d({4, 6}, {{4, 5}}, docs) - expect) < 1e-12);
}

TEST_CASE("cider_d: exhaustive oracle over short sequences") {
  const auto seqs = oracle::all_sequences(kAlphabet, 4, false);
  const std::vector<Tokens> docs = {{4, 5, 6}, {5, 5}, {6, 4, 6, 5}, {4}, {5, 6, 4, 4}, {6, 6, 6}};
  const DocFreqTable df = table_of(docs);
  const std::vector<std::vector<Tokens>> ref_sets = {{docs[0]}, {docs[2], docs[4]}, {{4, 4}, {6, 5, 4}, {5}}};
  double worst = 0.0;
  for (const auto& refs : ref_sets) {
    for (const Tokens& cand : seqs) {
      worst = std::max(worst, std::abs(cider_d(cand, refs, df) - oracle::cider_d(cand, refs, docs)));
    }
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("bleu4: examples and exhaustive pair oracle") {
  const std::vector<Tokens> same = {{4, 5, 6, 7, 8}};
  CHECK(std::abs(bleu4(same, same) - 1.0) < 1e-12);
  CHECK(bleu4(std::vector<Tokens>{{4, 5}}, std::vector<Tokens>{{4, 5}}) == 0.0);
  CHECK_THROWS_AS(bleu4(std::vector<Tokens>{}, std::vector<Tokens>{}), ConfigError);

  // Hand count: cand "4 5 6 7 9" vs ref "4 5 6 7 8": p1 4/5, p2 3/4, p3 2/3, p4 1/2, BP 1.
  const double hand = std::pow(0.8 * 0.75 * (2.0 / 3.0) * 0.5, 0.25);
  CHECK(std::abs(bleu4(std::vector<Tokens>{{4, 5, 6, 7, 9}}, same) - hand) < 1e-12);

  const auto seqs = oracle::all_sequences(kAlphabet, 4, false);
  double worst = 0.0;
  for (const Tokens& c : seqs) {
    for (const Tokens& r : seqs) {
      const std::vector<Tokens> cs = {c}, rs = {r};
      worst = std::max(worst, std::abs(bleu4(cs, rs) - oracle::bleu4(cs, rs)));
    }
  }
  CHECK(worst < 1e-12);

  // Corpus-level pooling: counts are summed before the precisions are taken.
  const std::vector<Tokens> cs = {{4, 5, 6, 4}, {5, 6, 4, 5, 6}}, rs = {{4, 5, 6, 5}, {5, 6, 4, 5}};
  CHECK(std::abs(bleu4(cs, rs) - oracle::bleu4(cs, rs)) < 1e-12);
}

TEST_CASE("sentence_bleu4 is smoothed") {
  const std::vector<Tokens> ref = {{4, 5, 6, 7}};
  const double s = sentence_bleu4(Tokens{4, 5}, ref);
  CHECK(s > 0.0);
  CHECK(s < 1.0);
}

TEST_CASE("rouge_l: examples and exhaustive oracle") {
  CHECK(rouge_l(Tokens{4, 5, 6}, Tokens{4, 5, 6}) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(rouge_l(Tokens{4, 5}, Tokens{6, 7}) == 0.0);
  CHECK(rouge_l(Tokens{}, Tokens{6, 7}) == 0.0);
  // "a b c d" vs "a c d": LCS 3, P = 3/4, R = 1.
  CHECK(lcs_length(Tokens{4, 5, 6, 7}, Tokens{4, 6, 7}) == 3);
  CHECK(std::abs(rouge_l(Tokens{4, 5, 6, 7}, Tokens{4, 6, 7}) - rouge_f(0.75, 1.0)) < 1e-12);

  const auto seqs = oracle::all_sequences(kAlphabet, 4, false);
  double worst = 0.0;
  for (const Tokens& c : seqs) {
    for (const Tokens& r : seqs) {
      CHECK(lcs_length(c, r) == static_cast<std::size_t>(oracle::lcs(c, 0, r, 0)));
      worst = std::max(worst, std::abs(rouge_l(c, r) - oracle::rouge_l(c, r)));
    }
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("metrics are invariant to reference order") {
  const std::vector<Tokens> docs = {{4, 5, 6}, {5, 5, 6, 4}, {6, 4, 6, 5}};
  const DocFreqTable df = table_of(docs);
  const Tokens cand = {4, 5, 6, 4};
  std::vector<Tokens> refs = {docs[0], docs[1], docs[2]};
  const double c0 = cider_d(cand, refs, df), r0 = rouge_l(cand, refs);
  std::reverse(refs.begin(), refs.end());
  CHECK(std::abs(cider_d(cand, refs, df) - c0) < 1e-12);
  CHECK(rouge_l(cand, refs) == r0);
}

TEST_CASE("sentence_rewards: identity, one good sentence, alignment") {
  const std::vector<Tokens> golden = {{4, 5, 6, 7, Vocab::kEos}, {8, 9, 10, 11, Vocab::kEos}, {12, 13, 14, 15, Vocab::kEos}};
  std::vector<Tokens> extra = golden;
  extra.push_back({16, 17, 18, 19});
  const DocFreqTable sdf = table_of(extra);
  const std::vector<Tokens> stories = {concat_story(golden), Tokens{16, 17, 18, 19, 20}};
  const DocFreqTable story_df = table_of(stories);

  const RewardReport same = sentence_rewards(golden, golden, sdf, story_df);
  for (double r : same.sentence_rewards) CHECK(std::abs(r - 10.0) < 1e-9);
  CHECK(std::abs(same.bleu4 - 1.0) < 1e-12);
  CHECK(std::abs(same.rouge_l - 1.0) < 1e-12);
  CHECK(std::abs(same.cider_d - 10.0) < 1e-9);

  std::vector<Tokens> garbage = {{16, 17, 18, 19}, golden[1], {19, 18, 17, 16}};
  const RewardReport one = sentence_rewards(garbage, golden, sdf, story_df);
  int perfect = 0;
  for (double r : one.sentence_rewards) perfect += std::abs(r - 10.0) < 1e-9 ? 1 : 0;
  CHECK(perfect == 1);
  CHECK(std::abs(one.sentence_rewards[1] - 10.0) < 1e-9);

  std::vector<Tokens> rotated = {golden[1], golden[2], golden[0]};
  const RewardReport rot = sentence_rewards(rotated, golden, sdf, story_df);
  CHECK(rot.sentence_rewards != same.sentence_rewards);
  Tokens a = concat_story(rotated), b = concat_story(golden);
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  CHECK(a == b);

  CHECK_THROWS_AS(sentence_rewards(std::vector<Tokens>(golden.begin(), golden.begin() + 2), golden, sdf, story_df),
                  AlignmentError);
}

TEST_CASE("metric inputs are not mutated") {
  const std::vector<Tokens> docs = {{4, 5, 6}, {6, 5}};
  const DocFreqTable df = table_of(docs);
  const Tokens cand = {4, 5, Vocab::kEos};
  const std::vector<Tokens> refs = {docs[0]};
  const Tokens cand_copy = cand;
  const double first = cider_d(cand, refs, df);
  CHECK(cider_d(cand, refs, df) == first);
  CHECK(cand == cand_copy);
}
