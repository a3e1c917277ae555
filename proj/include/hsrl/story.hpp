#pragma once

// The two-level decoding loop shared by training and generation.  For each
// image slot l the Manager (when present) emits g_l from [v_l; s_l]; the
// Worker is initialised from a context vector and either scores the golden
// sentence (teacher forcing) or decodes one; its final hidden state h_{l,T}
// feeds the Manager's next step.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hsrl/datasets.hpp"
#include "hsrl/manager.hpp"
#include "hsrl/worker.hpp"

namespace hsrl {

struct ModelDims {
  Index feature_dim = 16;     // d_v
  Index worker_hidden = 48;   // n_h
  Index embed = 24;           // n_x
  Index factors = 16;         // n_f
  Index manager_hidden = 32;  // n_m
  int topics = 4;             // K
  Index vocab = 0;            // V
  CellVariant cell = CellVariant::ScnLstm;
};

/// What the Worker receives as its topic input.
enum class TopicFeed {
  ManagerSoft,    // g_l as emitted (differentiable path into the Manager)
  ManagerArgmax,  // one-hot of argmax g_l
  Golden,         // one-hot golden topic
  Random,         // one-hot topic drawn uniformly per slot
  Single,         // K = 1 decoder without a planner
};

/// What initialises the Worker for slot l.
enum class ContextMode {
  ManagerState,  // [v_l; s_l]
  ZeroState,     // zeros of the ManagerState size: a Worker without a Manager has no c_l
  Pooled,        // [v_bar; v_l]
};

enum class ModelKind { Hierarchical, TopicWorker, Flat };

std::string to_string(TopicFeed f);
TopicFeed parse_topic_feed(const std::string& s);
std::string to_string(ModelKind k);
ModelKind parse_model_kind(const std::string& s);

struct StoryPolicy {
  TopicFeed feed = TopicFeed::ManagerSoft;
  ContextMode context = ContextMode::ManagerState;
  /// Manager step input is h_{l-1,T}; when false it is always zero.
  bool manager_reads_worker = true;
};

struct HsrlModel {
  ModelKind kind = ModelKind::Hierarchical;
  ModelDims dims;
  std::optional<ManagerParams> manager;
  WorkerParams worker;
  StoryPolicy policy;

  ParameterList parameters();
  ParameterList manager_parameters();
  ParameterList worker_parameters();
};

/// Builds and initialises a model.  Hierarchical has a Manager and uses
/// [v_l; s_l]; TopicWorker has the same Worker shape but no Manager, so it is
/// conditioned on its topic input alone; Flat is a single-topic Worker
/// conditioned on [v_bar; v_l].
HsrlModel make_model(ModelKind kind, const ModelDims& dims, std::uint64_t seed);

class StoryBatch {
 public:
  explicit StoryBatch(std::vector<const StoryRecord*> records);

  std::size_t size() const { return records_.size(); }
  std::size_t slots() const { return slots_; }
  const StoryRecord& record(std::size_t b) const { return *records_[b]; }
  /// d_v x B features of slot l.
  Matrix features(std::size_t slot) const;
  Matrix pooled() const;
  std::vector<std::vector<int>> sentences(std::size_t slot) const;
  bool has_golden() const;
  std::vector<int> golden(std::size_t slot) const;

 private:
  std::vector<const StoryRecord*> records_;
  std::size_t slots_ = 0;
};

enum class WorkerMode { TeacherForced, Greedy, Sample };
enum class ManagerHSource { TeacherForced, Greedy };

struct StoryOptions {
  TopicFeed feed = TopicFeed::ManagerSoft;
  WorkerMode mode = WorkerMode::TeacherForced;
  bool manager_reads_worker = true;
  /// In teacher forcing, where the Manager's h_{l-1,T} comes from: the
  /// golden-sentence pass, or a greedy decode branched from the same state.
  ManagerHSource manager_h = ManagerHSource::TeacherForced;
  /// [slot][column] topic ids for TopicFeed::Random.
  const std::vector<std::vector<int>>* random_topics = nullptr;
  SeededRng* rng = nullptr;
  int t_max = 20;
  /// Also decode a greedy sentence per slot from the same state (no grad).
  bool greedy_baseline = false;
};

struct SlotPass {
  Matrix g;                   // K x B topic input handed to the Worker
  std::vector<int> topic;     // argmax of g per column
  Var topic_loglik;           // 1 x B log g_l[golden]; invalid if no Manager/golden
  SentenceScore score;
  std::vector<std::vector<int>> tokens;
  std::vector<std::vector<double>> token_logp;
  std::vector<std::vector<int>> greedy_tokens;
  Matrix final_h;             // n_h x B
};

struct StoryPass {
  std::vector<SlotPass> slots;
  bool manager_ran = false;
};

template <typename M>
StoryPass run_story(Tape& tape, M& model, const StoryBatch& batch, const StoryOptions& options);

/// Manager-only teacher-forced pass with zero Worker input; returns the
/// 1 x B log-likelihood row of every slot.
template <typename M>
std::vector<Var> manager_only_pass(Tape& tape, M& model, const StoryBatch& batch);

std::vector<int> argmax_cols(const Matrix& m);

}  // namespace hsrl
