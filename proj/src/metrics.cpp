#include "hsrl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace hsrl {

namespace {
constexpr int kOrders = 4;
constexpr double kCiderSigma = 6.0;
constexpr double kRougeBeta = 1.2;
}  // namespace

std::size_t TokensHash::operator()(const Tokens& t) const noexcept {
  std::size_t h = 1469598103934665603ULL;
  for (int v : t) {
    h ^= static_cast<std::size_t>(static_cast<unsigned>(v)) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  }
  return h;
}

NGramCounts ngram_counts(std::span<const int> tokens, int max_order) {
  NGramCounts counts;
  for (int n = 1; n <= max_order; ++n) {
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i) {
      ++counts[Tokens(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                      tokens.begin() + static_cast<std::ptrdiff_t>(i) + n)];
    }
  }
  return counts;
}

DocFreqTable::DocFreqTable(std::span<const Tokens> documents) {
  for (const Tokens& d : documents) add_document(d);
}

void DocFreqTable::add_document(std::span<const int> tokens) {
  const Tokens clean = strip_special(tokens);
  for (const auto& [gram, count] : ngram_counts(clean, kOrders)) {
    (void)count;
    ++df_[gram];
  }
  ++documents_;
}

int DocFreqTable::frequency(const Tokens& ngram) const {
  auto it = df_.find(ngram);
  return it == df_.end() ? 0 : it->second;
}

DocFreqTable DocFreqTable::from_sentences(const Corpus& corpus) {
  DocFreqTable df;
  for (const StoryRecord& r : corpus.records) {
    for (const auto& s : r.sentences) df.add_document(s);
  }
  return df;
}

DocFreqTable DocFreqTable::from_stories(const Corpus& corpus) {
  DocFreqTable df;
  for (const StoryRecord& r : corpus.records) df.add_document(concat_story(r.sentences));
  return df;
}

// ---------------------------------------------------------------------------

namespace {

struct TfIdf {
  std::array<std::unordered_map<Tokens, double, TokensHash>, kOrders> vec;
  std::array<double, kOrders> norm{};
  double length = 0.0;  // bigram count, as in the reference implementation
};

TfIdf tfidf(std::span<const int> tokens, const DocFreqTable& df) {
  TfIdf out;
  const double log_docs = std::log(static_cast<double>(std::max<std::size_t>(df.documents(), 1)));
  for (const auto& [gram, tf] : ngram_counts(tokens, kOrders)) {
    const std::size_t order = gram.size() - 1;
    const double log_df = std::log(std::max(1.0, static_cast<double>(df.frequency(gram))));
    const double w = static_cast<double>(tf) * (log_docs - log_df);
    out.vec[order][gram] = w;
    out.norm[order] += w * w;
    if (order == 1) out.length += tf;
  }
  for (double& n : out.norm) n = std::sqrt(n);
  return out;
}

std::array<double, kOrders> cider_sim(const TfIdf& hyp, const TfIdf& ref) {
  std::array<double, kOrders> val{};
  const double delta = hyp.length - ref.length;
  const double penalty = std::exp(-(delta * delta) / (2.0 * kCiderSigma * kCiderSigma));
  for (std::size_t n = 0; n < kOrders; ++n) {
    for (const auto& [gram, w] : hyp.vec[n]) {
      auto it = ref.vec[n].find(gram);
      if (it == ref.vec[n].end()) continue;
      val[n] += std::min(w, it->second) * it->second;
    }
    if (hyp.norm[n] != 0.0 && ref.norm[n] != 0.0) val[n] /= hyp.norm[n] * ref.norm[n];
    val[n] *= penalty;
  }
  return val;
}

}  // namespace

double cider_d(std::span<const int> candidate, std::span<const Tokens> references,
               const DocFreqTable& df) {
  if (references.empty()) throw ConfigError("cider_d: at least one reference is required");
  const Tokens cand = strip_special(candidate);
  if (cand.empty()) return 0.0;
  const TfIdf hyp = tfidf(cand, df);
  double total = 0.0;
  for (const Tokens& r : references) {
    const TfIdf ref = tfidf(strip_special(r), df);
    const auto val = cider_sim(hyp, ref);
    double mean = 0.0;
    for (double v : val) mean += v;
    total += mean / kOrders;
  }
  return total / static_cast<double>(references.size()) * 10.0;
}

// ---------------------------------------------------------------------------

namespace {

struct BleuStats {
  std::array<double, kOrders> matched{};
  std::array<double, kOrders> total{};
  double cand_len = 0.0;
  double ref_len = 0.0;
};

void accumulate_bleu(const Tokens& cand, std::span<const Tokens> refs, BleuStats& s) {
  const NGramCounts cc = ngram_counts(cand, kOrders);
  NGramCounts max_ref;
  std::size_t closest = 0;
  std::size_t best_gap = std::numeric_limits<std::size_t>::max();
  for (const Tokens& r : refs) {
    for (const auto& [g, c] : ngram_counts(r, kOrders)) max_ref[g] = std::max(max_ref[g], c);
    const std::size_t gap = r.size() > cand.size() ? r.size() - cand.size() : cand.size() - r.size();
    if (gap < best_gap || (gap == best_gap && r.size() < closest)) {
      best_gap = gap;
      closest = r.size();
    }
  }
  for (const auto& [g, c] : cc) {
    const std::size_t n = g.size() - 1;
    auto it = max_ref.find(g);
    s.matched[n] += std::min(c, it == max_ref.end() ? 0 : it->second);
  }
  for (std::size_t n = 0; n < kOrders; ++n) {
    s.total[n] += cand.size() > n ? static_cast<double>(cand.size() - n) : 0.0;
  }
  s.cand_len += static_cast<double>(cand.size());
  s.ref_len += static_cast<double>(closest);
}

double bleu_from_stats(const BleuStats& s, double smooth) {
  if (s.cand_len == 0.0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < kOrders; ++n) {
    const double num = s.matched[n] + smooth;
    const double den = s.total[n] + smooth;
    if (num <= 0.0 || den <= 0.0) return 0.0;
    log_sum += std::log(num / den);
  }
  const double bp = s.cand_len > s.ref_len ? 1.0 : std::exp(1.0 - s.ref_len / s.cand_len);
  return bp * std::exp(log_sum / kOrders);
}

}  // namespace

double bleu4(std::span<const Tokens> candidates, std::span<const std::vector<Tokens>> references) {
  if (candidates.empty()) throw ConfigError("bleu4: empty corpus");
  if (candidates.size() != references.size()) {
    throw AlignmentError("bleu4: " + std::to_string(candidates.size()) + " candidates but " +
                         std::to_string(references.size()) + " reference sets");
  }
  BleuStats s;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    std::vector<Tokens> refs;
    for (const Tokens& r : references[i]) refs.push_back(strip_special(r));
    if (refs.empty()) throw ConfigError("bleu4: candidate without references");
    accumulate_bleu(strip_special(candidates[i]), refs, s);
  }
  return bleu_from_stats(s, 0.0);
}

double bleu4(std::span<const Tokens> candidates, std::span<const Tokens> references) {
  std::vector<std::vector<Tokens>> refs;
  refs.reserve(references.size());
  for (const Tokens& r : references) refs.push_back({r});
  return bleu4(candidates, refs);
}

double sentence_bleu4(std::span<const int> candidate, std::span<const Tokens> references) {
  if (references.empty()) throw ConfigError("sentence_bleu4: no references");
  std::vector<Tokens> refs;
  for (const Tokens& r : references) refs.push_back(strip_special(r));
  BleuStats s;
  accumulate_bleu(strip_special(candidate), refs, s);
  return bleu_from_stats(s, 1.0);
}

// ---------------------------------------------------------------------------

std::size_t lcs_length(std::span<const int> a, std::span<const int> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(std::span<const int> candidate, std::span<const Tokens> references) {
  if (references.empty()) throw ConfigError("rouge_l: no references");
  const Tokens cand = strip_special(candidate);
  if (cand.empty()) return 0.0;
  double best_p = 0.0, best_r = 0.0;
  for (const Tokens& ref_raw : references) {
    const Tokens ref = strip_special(ref_raw);
    if (ref.empty()) throw ConfigError("rouge_l: empty reference");
    const double lcs = static_cast<double>(lcs_length(cand, ref));
    best_p = std::max(best_p, lcs / static_cast<double>(cand.size()));
    best_r = std::max(best_r, lcs / static_cast<double>(ref.size()));
  }
  if (best_p == 0.0 || best_r == 0.0) return 0.0;
  const double b2 = kRougeBeta * kRougeBeta;
  return (1.0 + b2) * best_p * best_r / (best_r + b2 * best_p);
}

double rouge_l(std::span<const int> candidate, std::span<const int> reference) {
  const Tokens ref(reference.begin(), reference.end());
  return rouge_l(candidate, std::span<const Tokens>(&ref, 1));
}

// ---------------------------------------------------------------------------

Tokens concat_story(std::span<const Tokens> sentences) {
  Tokens out;
  for (const Tokens& s : sentences) {
    const Tokens clean = strip_special(s);
    out.insert(out.end(), clean.begin(), clean.end());
  }
  return out;
}

RewardReport sentence_rewards(std::span<const Tokens> generated, std::span<const Tokens> golden,
                              const DocFreqTable& sentence_df, const DocFreqTable& story_df) {
  if (generated.size() != golden.size()) {
    throw AlignmentError("sentence_rewards: " + std::to_string(generated.size()) +
                         " generated sentences vs " + std::to_string(golden.size()) + " golden");
  }
  RewardReport report;
  for (std::size_t l = 0; l < generated.size(); ++l) {
    report.sentence_rewards.push_back(
        cider_d(generated[l], std::span<const Tokens>(&golden[l], 1), sentence_df));
  }
  const Tokens story = concat_story(generated);
  const Tokens ref = concat_story(golden);
  report.cider_d = cider_d(story, std::span<const Tokens>(&ref, 1), story_df);
  report.rouge_l = ref.empty() ? 0.0 : rouge_l(story, ref);
  const Tokens cand_arr[1] = {story};
  const Tokens ref_arr[1] = {ref};
  report.bleu4 = bleu4(std::span<const Tokens>(cand_arr), std::span<const Tokens>(ref_arr));
  return report;
}

}  // namespace hsrl
