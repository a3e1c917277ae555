#pragma once

// Losses, the optimizer, and the three policy-learning schemes.
//
// Loss scale: every loss is a sum over slots and tokens, averaged over the
// stories of a batch.
//   worker_mle = -(1/B) sum_b sum_l sum_t log p(y*_t)
//   worker_rl  = -(1/B) sum_b sum_l (r_sample - r_greedy) sum_t log p(y^_t)
//   manager    = -(1/B) sum_b sum_l log g_l[golden_l]
//   mixed      = gamma rl + (1 - gamma) mle
//   joint      = (1 - gamma1) manager + gamma1 mixed(gamma2)

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hsrl/metrics.hpp"
#include "hsrl/story.hpp"

namespace hsrl {

enum class Scheme { Cascaded, Iterative, Joint };
std::string to_string(Scheme s);
Scheme parse_scheme(const std::string& s);

enum class OptimizerKind { Adam, Sgd };
std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& s);

struct TrainConfig {
  ModelDims dims;
  double gamma_max = 0.7;
  double gamma1 = 0.7;
  double gamma2 = 0.9;
  int warmup_epochs = 40;
  int ramp_epochs = 40;
  double learning_rate = 1e-2;
  /// Step size once the RL term is fully on; interpolated along the ramp.
  double rl_learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double grad_clip = 5.0;
  int batch_size = 8;
  int epochs = 200;
  /// Cascaded stage 1 length.
  int manager_epochs = 60;
  /// Stop after this many optimizer steps (0 = no limit).
  int max_steps = 0;
  std::uint64_t seed = 1;
  Scheme scheme = Scheme::Joint;
  int t_max = 20;
  /// Use the printed (r_greedy - r_sample) advantage instead of the standard one.
  bool paper_literal_sign = false;
  /// Weight of a story-level CIDEr-D bonus added to every sentence reward.
  double story_bonus = 0.0;
  ManagerHSource manager_h = ManagerHSource::TeacherForced;
  /// Iterative scheme: run the Manager phase on alternate epochs.
  bool iterative_manager_phase = true;

  void validate() const;
};

struct LossBreakdown {
  double manager_mle = 0.0;
  double worker_mle = 0.0;
  double worker_rl = 0.0;
  double mixed = 0.0;
  double joint = 0.0;
  double gamma = 0.0;   // weight of rl inside mixed
  double gamma1 = 1.0;  // weight of mixed inside joint
  double mean_advantage = 0.0;
  double reward_mean = 0.0;
  double greedy_reward_mean = 0.0;
  double tokens = 0.0;  // golden tokens scored by worker_mle
  double grad_norm = 0.0;

  /// Throws InvariantError when the mixed or joint decomposition is off by
  /// more than `tol`.
  void check_identities(double tol = 1e-12) const;
  /// worker_mle per golden token, in nats.
  double mle_per_token(std::size_t batch) const;
};

double mixed_loss(double gamma, double worker_rl, double worker_mle);
double joint_loss(double gamma1, double gamma2, double manager_mle, double worker_rl,
                  double worker_mle);
Var mixed_loss(double gamma, Var worker_rl, Var worker_mle);

struct GammaSchedule {
  int warmup_epochs = 0;
  int ramp_epochs = 0;
  double gamma_max = 0.0;
};
/// 0 through warmup, then a linear ramp reaching gamma_max at
/// warmup + ramp, then constant.
double anneal_gamma(int epoch, const GammaSchedule& schedule);
/// learning_rate while gamma is 0, moving linearly to rl_learning_rate as
/// gamma reaches its target.
double learning_rate_for(double gamma, double gamma_target, const TrainConfig& cfg);

/// Teacher-forced worker loss of a pass, -(1/B) sum of golden log-probs.
Var worker_mle_loss(const StoryPass& pass, std::size_t batch);
/// Convenience form: runs the teacher-forced pass itself.
Var worker_mle_loss(Tape& tape, HsrlModel& model, const StoryBatch& batch, TopicFeed feed);

/// advantage[l][b] = r_sample - r_greedy (or the reverse with the literal sign).
std::vector<std::vector<double>> advantages(const std::vector<std::vector<double>>& sampled,
                                            const std::vector<std::vector<double>>& greedy,
                                            bool paper_literal_sign = false);
/// -(1/B) sum_l sum_b advantage[l][b] sum_t log p(sampled tokens); advantages
/// are constants.  Throws NumericError on non-finite advantages.
Var self_critical_loss(const StoryPass& sampled, const std::vector<std::vector<double>>& advantage);

/// -(1/B) sum_l sum_b log g_l[golden]; needs a pass that ran the Manager on a
/// batch with golden topics.
Var manager_mle_loss(const StoryPass& pass, std::size_t batch);
Var manager_mle_loss(const std::vector<Var>& loglik_rows, std::size_t batch);

/// CIDEr-D rewards of decoded sentences, [slot][column].
struct RewardTables {
  DocFreqTable sentence_df;
  DocFreqTable story_df;
  explicit RewardTables(const Corpus& train);
};
std::vector<std::vector<double>> sentence_level_rewards(
    const std::vector<std::vector<std::vector<int>>>& decoded,  // [slot][column]
    const StoryBatch& batch, const RewardTables& tables, double story_bonus);

class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
            double eps = 1e-8);
  /// Applies one update to `params` using their current gradients.
  void step(const ParameterList& params);
  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  struct Moments {
    Matrix m, v;
    long steps = 0;
  };
  OptimizerKind kind_;
  double lr_, beta1_, beta2_, eps_;
  std::map<const Parameter*, Moments> state_;
};

/// Rescales gradients so their global norm is at most max_norm; returns the
/// norm before clipping.
double clip_gradients(const ParameterList& params, double max_norm);

struct StepRecord {
  int epoch = 0;
  long step = 0;
  std::string phase;
  LossBreakdown loss;
};

struct EpochRecord {
  int epoch = 0;
  std::string phase;
  int steps = 0;
  LossBreakdown mean;
  std::optional<double> validation_cider;
};

struct TrainHistory {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;

  void write_csv(const std::string& path) const;
  std::string to_csv() const;
};

struct TrainResult {
  HsrlModel model;
  TrainHistory history;
};

/// Called after each epoch when set; returns a validation CIDEr-D.
using ValidationHook = std::function<double(const HsrlModel&, int epoch)>;

struct TrainHooks {
  ValidationHook validate;
  int validate_every = 0;
  /// Observes every step after its update.
  std::function<void(const StepRecord&, const HsrlModel&)> on_step;
};

TrainResult train_cascaded(const Corpus& corpus, const TrainConfig& cfg, const TrainHooks& hooks = {});
TrainResult train_iterative(const Corpus& corpus, const TrainConfig& cfg, const TrainHooks& hooks = {});
TrainResult train_joint(const Corpus& corpus, const TrainConfig& cfg, const TrainHooks& hooks = {});
/// Dispatches on cfg.scheme.
TrainResult train_hierarchical(const Corpus& corpus, const TrainConfig& cfg, const TrainHooks& hooks = {});
/// Worker without a Manager, trained with the mixed loss (gamma annealed to
/// gamma_max) on golden one-hot topics, or on topics drawn uniformly per slot.
TrainResult train_topic_worker(const Corpus& corpus, const TrainConfig& cfg,
                               TopicFeed feed = TopicFeed::Golden, const TrainHooks& hooks = {});
/// Single-topic decoder on [v_bar; v_l]; pure MLE unless `reinforce`.
TrainResult train_flat(const Corpus& corpus, const TrainConfig& cfg, bool reinforce,
                       const TrainHooks& hooks = {});

/// One optimizer step of the given weights on a batch.  Exposed for tests;
/// the trainers are loops over this.
struct StepPlan {
  TopicFeed feed = TopicFeed::ManagerSoft;
  bool manager_reads_worker = true;
  double gamma = 0.0;          // rl weight inside mixed; rollouts skipped at 0
  double gamma1 = 1.0;         // mixed weight inside joint; manager loss needs < 1
  bool worker_loss = true;     // false for Manager-only steps
  ParameterList trainable;
};
LossBreakdown train_step(HsrlModel& model, const StoryBatch& batch, const StepPlan& plan,
                         const TrainConfig& cfg, const RewardTables& rewards, SeededRng& sample_rng,
                         Optimizer& optimizer);

struct LossGradCheck {
  std::string loss;  // worker_mle, manager_nll, self_critical, joint
  GradCheckReport report;
};
/// Central-difference check of every training loss over every parameter of a
/// tiny hierarchical model on a two-story synthetic corpus.  The sampled
/// sentences and their advantages are drawn once and then held fixed.
std::vector<LossGradCheck> loss_gradient_suite(CellVariant cell = CellVariant::ScnLstm,
                                               std::uint64_t seed = 1, double step = 1e-5);

/// Binary checkpoint: "HSRLCKPT", little-endian u64 header length, a JSON
/// header (kind, dims, policy, parameter names/shapes/offsets), then the
/// float64 payload.
void save_checkpoint(const std::string& path, const HsrlModel& model);
HsrlModel load_checkpoint(const std::string& path);

}  // namespace hsrl
