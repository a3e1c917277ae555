#include "hsrl/training.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <utility>

#include "json.hpp"

namespace hsrl {

using nlohmann::json;

std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::Cascaded: return "cascaded";
    case Scheme::Iterative: return "iterative";
    case Scheme::Joint: return "joint";
  }
  return "joint";
}

Scheme parse_scheme(const std::string& s) {
  for (Scheme v : {Scheme::Cascaded, Scheme::Iterative, Scheme::Joint}) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError("unknown scheme '" + s + "' (cascaded|iterative|joint)");
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::Adam;
  if (s == "sgd") return OptimizerKind::Sgd;
  throw ConfigError("unknown optimizer '" + s + "' (adam|sgd)");
}

void TrainConfig::validate() const {
  auto unit = [](double x) { return x >= 0.0 && x <= 1.0; };
  if (!(gamma_max >= 0.0 && gamma_max < 1.0)) throw ConfigError("gamma_max must lie in [0, 1)");
  if (!unit(gamma1)) throw ConfigError("gamma1 must lie in [0, 1]");
  if (!unit(gamma2)) throw ConfigError("gamma2 must lie in [0, 1]");
  if (warmup_epochs < 0 || ramp_epochs < 0) throw ConfigError("warmup/ramp epochs must be >= 0");
  if (!(learning_rate > 0.0) || !(rl_learning_rate > 0.0)) {
    throw ConfigError("learning rates must be positive");
  }
  if (!(grad_clip > 0.0)) throw ConfigError("grad_clip must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 0 || manager_epochs < 0) throw ConfigError("epoch counts must be >= 0");
  if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
  if (t_max < 1) throw ConfigError("t_max must be >= 1");
  if (story_bonus < 0.0) throw ConfigError("story_bonus must be >= 0");
  if (dims.topics < 2) throw ConfigError("K must be >= 2");
}

// ---------------------------------------------------------------------------
// Losses

void LossBreakdown::check_identities(double tol) const {
  const double want_mixed = mixed_loss(gamma, worker_rl, worker_mle);
  if (std::abs(mixed - want_mixed) > tol) {
    throw InvariantError("mixed loss decomposition: " + std::to_string(mixed) + " vs " +
                         std::to_string(want_mixed));
  }
  const double want_joint = (1.0 - gamma1) * manager_mle + gamma1 * mixed;
  if (std::abs(joint - want_joint) > tol) {
    throw InvariantError("joint loss decomposition: " + std::to_string(joint) + " vs " +
                         std::to_string(want_joint));
  }
}

double LossBreakdown::mle_per_token(std::size_t batch) const {
  return tokens > 0.0 ? worker_mle * static_cast<double>(batch) / tokens : 0.0;
}

double mixed_loss(double gamma, double worker_rl, double worker_mle) {
  return gamma * worker_rl + (1.0 - gamma) * worker_mle;
}

double joint_loss(double gamma1, double gamma2, double manager_mle, double worker_rl,
                  double worker_mle) {
  return (1.0 - gamma1) * manager_mle + gamma1 * mixed_loss(gamma2, worker_rl, worker_mle);
}

Var mixed_loss(double gamma, Var worker_rl, Var worker_mle) {
  return add(scale(worker_rl, gamma), scale(worker_mle, 1.0 - gamma));
}

double anneal_gamma(int epoch, const GammaSchedule& s) {
  if (epoch < s.warmup_epochs) return 0.0;
  if (s.ramp_epochs <= 0) return s.gamma_max;
  const int into = epoch - s.warmup_epochs;
  if (into >= s.ramp_epochs) return s.gamma_max;
  return s.gamma_max * static_cast<double>(into) / static_cast<double>(s.ramp_epochs);
}

double learning_rate_for(double gamma, double gamma_target, const TrainConfig& cfg) {
  if (gamma <= 0.0 || gamma_target <= 0.0) return cfg.learning_rate;
  const double w = std::min(1.0, gamma / gamma_target);
  return (1.0 - w) * cfg.learning_rate + w * cfg.rl_learning_rate;
}

Var worker_mle_loss(const StoryPass& pass, std::size_t batch) {
  if (batch == 0 || pass.slots.empty()) throw ConfigError("worker_mle_loss: empty batch");
  const std::vector<double> ones(batch, 1.0);
  Var total;
  for (const SlotPass& slot : pass.slots) {
    Var term = slot.score.weighted(ones);
    total = total.valid() ? add(total, term) : term;
  }
  return scale(total, -1.0 / static_cast<double>(batch));
}

Var worker_mle_loss(Tape& tape, HsrlModel& model, const StoryBatch& batch, TopicFeed feed) {
  StoryOptions o;
  o.feed = feed;
  o.manager_reads_worker = model.policy.manager_reads_worker;
  return worker_mle_loss(run_story(tape, model, batch, o), batch.size());
}

std::vector<std::vector<double>> advantages(const std::vector<std::vector<double>>& sampled,
                                            const std::vector<std::vector<double>>& greedy,
                                            bool paper_literal_sign) {
  if (sampled.size() != greedy.size()) throw AlignmentError("advantages: slot count mismatch");
  std::vector<std::vector<double>> out(sampled.size());
  for (std::size_t l = 0; l < sampled.size(); ++l) {
    if (sampled[l].size() != greedy[l].size()) throw AlignmentError("advantages: batch mismatch");
    out[l].resize(sampled[l].size());
    for (std::size_t b = 0; b < sampled[l].size(); ++b) {
      out[l][b] = paper_literal_sign ? greedy[l][b] - sampled[l][b] : sampled[l][b] - greedy[l][b];
    }
  }
  return out;
}

Var self_critical_loss(const StoryPass& sampled, const std::vector<std::vector<double>>& advantage) {
  if (advantage.size() != sampled.slots.size()) {
    throw AlignmentError("self_critical_loss: " + std::to_string(advantage.size()) +
                         " advantage rows for " + std::to_string(sampled.slots.size()) + " slots");
  }
  if (sampled.slots.empty()) throw ConfigError("self_critical_loss: empty pass");
  const std::size_t batch = advantage.front().size();
  Var total;
  for (std::size_t l = 0; l < advantage.size(); ++l) {
    for (double a : advantage[l]) {
      if (!std::isfinite(a)) throw NumericError("self_critical_loss: non-finite reward");
    }
    Var term = sampled.slots[l].score.weighted(advantage[l]);
    total = total.valid() ? add(total, term) : term;
  }
  return scale(total, -1.0 / static_cast<double>(batch));
}

Var manager_mle_loss(const std::vector<Var>& rows, std::size_t batch) {
  if (rows.empty() || batch == 0) throw ConfigError("manager_mle_loss: empty batch");
  Var total;
  for (const Var& r : rows) {
    if (!r.valid()) throw ConfigError("manager_mle_loss: pass has no golden topic likelihoods");
    Var term = sum(r);
    total = total.valid() ? add(total, term) : term;
  }
  return scale(total, -1.0 / static_cast<double>(batch));
}

Var manager_mle_loss(const StoryPass& pass, std::size_t batch) {
  std::vector<Var> rows;
  for (const SlotPass& s : pass.slots) rows.push_back(s.topic_loglik);
  return manager_mle_loss(rows, batch);
}

// ---------------------------------------------------------------------------
// Rewards

RewardTables::RewardTables(const Corpus& train)
    : sentence_df(DocFreqTable::from_sentences(train)), story_df(DocFreqTable::from_stories(train)) {}

std::vector<std::vector<double>> sentence_level_rewards(
    const std::vector<std::vector<std::vector<int>>>& decoded, const StoryBatch& batch,
    const RewardTables& tables, double story_bonus) {
  if (decoded.size() != batch.slots()) throw AlignmentError("rewards: slot count mismatch");
  std::vector<std::vector<double>> out(decoded.size(), std::vector<double>(batch.size(), 0.0));
  for (std::size_t l = 0; l < decoded.size(); ++l) {
    if (decoded[l].size() != batch.size()) throw AlignmentError("rewards: batch size mismatch");
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const Tokens ref[1] = {batch.record(b).sentences[l]};
      out[l][b] = cider_d(decoded[l][b], ref, tables.sentence_df);
    }
  }
  if (story_bonus > 0.0) {
    for (std::size_t b = 0; b < batch.size(); ++b) {
      std::vector<Tokens> gen, gold;
      for (std::size_t l = 0; l < decoded.size(); ++l) {
        gen.push_back(decoded[l][b]);
        gold.push_back(batch.record(b).sentences[l]);
      }
      const Tokens ref[1] = {concat_story(gold)};
      const double bonus = story_bonus * cider_d(concat_story(gen), ref, tables.story_df);
      for (auto& row : out) row[b] += bonus;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer

Optimizer::Optimizer(OptimizerKind kind, double learning_rate, double beta1, double beta2, double eps)
    : kind_(kind), lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Optimizer::step(const ParameterList& params) {
  for (Parameter* p : params) {
    if (kind_ == OptimizerKind::Sgd) {
      p->data -= lr_ * p->grad;
      continue;
    }
    Moments& s = state_[p];
    if (s.steps == 0) {
      s.m = Matrix::Zero(p->data.rows(), p->data.cols());
      s.v = Matrix::Zero(p->data.rows(), p->data.cols());
    }
    ++s.steps;
    s.m = beta1_ * s.m + (1.0 - beta1_) * p->grad;
    s.v = beta2_ * s.v + (1.0 - beta2_) * p->grad.cwiseProduct(p->grad);
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(s.steps));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(s.steps));
    p->data.array() -= lr_ * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + eps_);
  }
}

double clip_gradients(const ParameterList& params, double max_norm) {
  const double norm = grad_norm(params);
  if (!std::isfinite(norm)) throw NumericError("gradient norm is not finite");
  if (norm > max_norm) {
    const double f = max_norm / norm;
    for (Parameter* p : params) p->grad *= f;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// One step

LossBreakdown train_step(HsrlModel& model, const StoryBatch& batch, const StepPlan& plan,
                         const TrainConfig& cfg, const RewardTables& rewards, SeededRng& sample_rng,
                         Optimizer& optimizer) {
  const std::size_t B = batch.size();
  zero_grads(model.parameters());
  Tape tape;
  LossBreakdown lb;
  lb.gamma = plan.gamma;
  lb.gamma1 = plan.gamma1;
  const bool want_manager = plan.gamma1 < 1.0;
  if (!plan.worker_loss && plan.gamma1 != 0.0) {
    throw ConfigError("train_step: a Manager-only step needs gamma1 = 0");
  }

  // A random topic feed draws one topic per story slot, shared by both passes.
  std::vector<std::vector<int>> random_ids;
  if (plan.feed == TopicFeed::Random) {
    const auto K = static_cast<std::size_t>(model.worker.topics());
    random_ids.assign(batch.slots(), std::vector<int>(B));
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t l = 0; l < batch.slots(); ++l) {
        random_ids[l][b] = static_cast<int>(sample_rng.below(K));
      }
    }
  }

  Var mgr, mle, rl;
  if (!plan.worker_loss && !plan.manager_reads_worker) {
    mgr = manager_mle_loss(manager_only_pass(tape, model, batch), B);
  } else {
    StoryOptions tf;
    tf.feed = plan.feed;
    tf.manager_reads_worker = plan.manager_reads_worker;
    tf.manager_h = cfg.manager_h;
    tf.t_max = cfg.t_max;
    tf.random_topics = random_ids.empty() ? nullptr : &random_ids;
    StoryPass pass = run_story(tape, model, batch, tf);
    if (want_manager) mgr = manager_mle_loss(pass, B);
    if (plan.worker_loss) {
      mle = worker_mle_loss(pass, B);
      for (const SlotPass& s : pass.slots) lb.tokens += s.score.token_count();
    }
  }

  if (plan.worker_loss && plan.gamma > 0.0) {
    StoryOptions so;
    so.feed = plan.feed;
    so.mode = WorkerMode::Sample;
    so.manager_reads_worker = plan.manager_reads_worker;
    so.rng = &sample_rng;
    so.t_max = cfg.t_max;
    so.greedy_baseline = true;
    so.random_topics = random_ids.empty() ? nullptr : &random_ids;
    StoryPass sp = run_story(tape, model, batch, so);
    std::vector<std::vector<std::vector<int>>> sampled, greedy;
    for (SlotPass& s : sp.slots) {
      sampled.push_back(s.tokens);
      greedy.push_back(s.greedy_tokens);
    }
    const auto r_sample = sentence_level_rewards(sampled, batch, rewards, cfg.story_bonus);
    const auto r_greedy = sentence_level_rewards(greedy, batch, rewards, cfg.story_bonus);
    const auto adv = advantages(r_sample, r_greedy, cfg.paper_literal_sign);
    rl = self_critical_loss(sp, adv);
    double n = 0.0;
    for (std::size_t l = 0; l < adv.size(); ++l) {
      for (std::size_t b = 0; b < B; ++b) {
        lb.mean_advantage += adv[l][b];
        lb.reward_mean += r_sample[l][b];
        lb.greedy_reward_mean += r_greedy[l][b];
        n += 1.0;
      }
    }
    lb.mean_advantage /= n;
    lb.reward_mean /= n;
    lb.greedy_reward_mean /= n;
  }

  Var mixed;
  if (plan.worker_loss) {
    mixed = rl.valid() ? mixed_loss(plan.gamma, rl, mle) : scale(mle, 1.0 - plan.gamma);
    lb.worker_mle = mle.scalar();
    lb.worker_rl = rl.valid() ? rl.scalar() : 0.0;
    lb.mixed = mixed.scalar();
  }
  if (mgr.valid()) lb.manager_mle = mgr.scalar();

  Var total;
  if (!plan.worker_loss) {
    total = scale(mgr, 1.0);
  } else if (want_manager) {
    total = add(scale(mgr, 1.0 - plan.gamma1), scale(mixed, plan.gamma1));
  } else {
    total = scale(mixed, plan.gamma1);
  }
  lb.joint = total.scalar();
  require_finite(total.value(), "training loss");
  tape.backward(total);
  lb.grad_norm = clip_gradients(plan.trainable, cfg.grad_clip);
  optimizer.step(plan.trainable);
  return lb;
}

// ---------------------------------------------------------------------------
// Gradient suite

std::vector<LossGradCheck> loss_gradient_suite(CellVariant cell, std::uint64_t seed, double step) {
  SynthConfig sc;
  sc.num_records = 2;
  sc.slots = 2;
  sc.feature_dim = 3;
  sc.topics = 2;
  sc.vocab_per_topic = 2;
  sc.min_len = 2;
  sc.max_len = 3;
  sc.templates_per_topic = 1;
  sc.seed = seed;
  const Corpus corpus = synthesize_corpus(sc);

  ModelDims d;
  d.feature_dim = sc.feature_dim;
  d.worker_hidden = 4;
  d.embed = 3;
  d.factors = 3;
  d.manager_hidden = 3;
  d.topics = sc.topics;
  d.vocab = static_cast<Index>(corpus.vocab.size());
  d.cell = cell;
  HsrlModel model = make_model(ModelKind::Hierarchical, d, seed);
  // Wider than the training init so that no gradient is vanishingly small.
  SeededRng rng = SeededRng(seed).derive(7);
  for (Parameter* p : model.parameters()) init_uniform(*p, rng, 0.5);

  std::vector<const StoryRecord*> members;
  for (const StoryRecord& r : corpus.records) members.push_back(&r);
  const StoryBatch golden(members);
  const std::size_t B = golden.size();

  // Sampled sentences become the teacher-forced targets of a second batch, so
  // perturbing a weight cannot flip a sampled token.
  std::vector<StoryRecord> sampled_records(corpus.records);
  {
    Tape tape(false);
    SeededRng sample_rng = SeededRng(seed).derive(8);
    StoryOptions o;
    o.mode = WorkerMode::Sample;
    o.rng = &sample_rng;
    o.t_max = 6;
    const StoryPass sp = run_story(tape, std::as_const(model), golden, o);
    for (std::size_t l = 0; l < sp.slots.size(); ++l) {
      for (std::size_t b = 0; b < B; ++b) {
        std::vector<int> y = sp.slots[l].tokens[b];
        if (y.back() != Vocab::kEos) y.push_back(Vocab::kEos);  // cut off at t_max
        sampled_records[b].sentences[l] = std::move(y);
      }
    }
  }
  std::vector<const StoryRecord*> sampled_members;
  for (const StoryRecord& r : sampled_records) sampled_members.push_back(&r);
  const StoryBatch sampled(sampled_members);
  std::vector<std::vector<double>> adv(golden.slots(), std::vector<double>(B));
  for (auto& row : adv) {
    for (double& a : row) a = rng.uniform(-1.0, 1.0);
  }

  auto tf = [&](Tape& tape, const StoryBatch& batch) {
    StoryOptions o;
    return run_story(tape, model, batch, o);
  };
  const double gamma1 = 0.7, gamma2 = 0.9;
  std::vector<std::pair<std::string, std::function<Var(Tape&)>>> losses = {
      {"worker_mle", [&](Tape& t) { return worker_mle_loss(tf(t, golden), B); }},
      {"manager_nll", [&](Tape& t) { return manager_mle_loss(tf(t, golden), B); }},
      {"self_critical", [&](Tape& t) { return self_critical_loss(tf(t, sampled), adv); }},
      {"joint",
       [&](Tape& t) {
         const StoryPass gp = tf(t, golden);
         Var mixed = mixed_loss(gamma2, self_critical_loss(tf(t, sampled), adv), worker_mle_loss(gp, B));
         return add(scale(manager_mle_loss(gp, B), 1.0 - gamma1), scale(mixed, gamma1));
       }},
  };
  std::vector<LossGradCheck> out;
  for (auto& [name, f] : losses) {
    out.push_back({name, finite_difference_check(f, model.parameters(), step)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Epoch loops

namespace {

LossBreakdown mean_of(const std::vector<LossBreakdown>& xs) {
  LossBreakdown m;
  if (xs.empty()) return m;
  const double n = static_cast<double>(xs.size());
  m.gamma = xs.front().gamma;
  m.gamma1 = xs.front().gamma1;
  for (const LossBreakdown& x : xs) {
    m.manager_mle += x.manager_mle / n;
    m.worker_mle += x.worker_mle / n;
    m.worker_rl += x.worker_rl / n;
    m.mean_advantage += x.mean_advantage / n;
    m.reward_mean += x.reward_mean / n;
    m.greedy_reward_mean += x.greedy_reward_mean / n;
    m.tokens += x.tokens / n;
    m.grad_norm += x.grad_norm / n;
  }
  // Recompose so the epoch means satisfy the same identities.
  m.mixed = mixed_loss(m.gamma, m.worker_rl, m.worker_mle);
  m.joint = (1.0 - m.gamma1) * m.manager_mle + m.gamma1 * m.mixed;
  return m;
}

ModelDims dims_for(const Corpus& corpus, const TrainConfig& cfg) {
  ModelDims d = cfg.dims;
  d.vocab = static_cast<Index>(corpus.vocab.size());
  d.feature_dim = corpus.feature_dim();
  return d;
}

class Loop {
 public:
  Loop(const Corpus& corpus, const TrainConfig& cfg, const TrainHooks& hooks)
      : corpus_(corpus),
        cfg_(cfg),
        hooks_(hooks),
        shuffle_rng_(SeededRng(cfg.seed).derive(101)),
        sample_rng_(SeededRng(cfg.seed).derive(202)),
        rewards_(corpus),
        optimizer_(cfg.optimizer, cfg.learning_rate) {
    cfg.validate();
    if (corpus.records.empty()) throw ConfigError("training corpus is empty");
  }

  bool exhausted() const { return cfg_.max_steps > 0 && step_ >= cfg_.max_steps; }

  void epoch(HsrlModel& model, int index, const std::string& phase, const StepPlan& plan,
             double gamma_target = 0.0) {
    if (exhausted()) return;
    optimizer_.set_learning_rate(learning_rate_for(plan.gamma, gamma_target, cfg_));
    std::vector<std::size_t> order(corpus_.records.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_rng_.shuffle(order);
    std::vector<LossBreakdown> seen;
    const auto bs = static_cast<std::size_t>(cfg_.batch_size);
    for (std::size_t start = 0; start < order.size() && !exhausted(); start += bs) {
      std::vector<const StoryRecord*> members;
      for (std::size_t i = start; i < std::min(order.size(), start + bs); ++i) {
        members.push_back(&corpus_.records[order[i]]);
      }
      StoryBatch batch(std::move(members));
      LossBreakdown lb = train_step(model, batch, plan, cfg_, rewards_, sample_rng_, optimizer_);
      lb.check_identities();
      ++step_;
      history_.steps.push_back({index, step_, phase, lb});
      if (hooks_.on_step) hooks_.on_step(history_.steps.back(), model);
      seen.push_back(lb);
    }
    EpochRecord rec{index, phase, static_cast<int>(seen.size()), mean_of(seen), std::nullopt};
    const bool last = index + 1 == final_epoch_ || exhausted();
    if (hooks_.validate && hooks_.validate_every > 0 &&
        ((index + 1) % hooks_.validate_every == 0 || last)) {
      rec.validation_cider = hooks_.validate(model, index);
    }
    history_.epochs.push_back(rec);
  }

  void set_final_epoch(int e) { final_epoch_ = e; }
  TrainHistory take_history() { return std::move(history_); }

 private:
  const Corpus& corpus_;
  const TrainConfig& cfg_;
  const TrainHooks& hooks_;
  SeededRng shuffle_rng_;
  SeededRng sample_rng_;
  RewardTables rewards_;
  Optimizer optimizer_;
  TrainHistory history_;
  long step_ = 0;
  int final_epoch_ = -1;
};

void require_golden(const Corpus& corpus, const TrainConfig& cfg, const char* who) {
  if (!corpus.has_golden_topics()) {
    throw ConfigError(std::string(who) + ": golden topics are required (run fit-topics first)");
  }
  validate(corpus, cfg.dims.topics);
}

GammaSchedule schedule(const TrainConfig& cfg, double target) {
  return {cfg.warmup_epochs, cfg.ramp_epochs, target};
}

}  // namespace

TrainResult train_cascaded(const Corpus& corpus, const TrainConfig& cfg, const TrainHooks& hooks) {
  require_golden(corpus, cfg, "train_cascaded");
  HsrlModel model = make_model(ModelKind::Hierarchical, dims_for(corpus, cfg), cfg.seed);
  Loop loop(corpus, cfg, hooks);
  loop.set_final_epoch(cfg.manager_epochs + cfg.epochs);

  // Stage 1: Manager alone, no Worker input.
  StepPlan mplan;
  mplan.manager_reads_worker = false;
  mplan.gamma1 = 0.0;
  mplan.worker_loss = false;
  mplan.trainable = model.manager_parameters();
  for (int e = 0; e < cfg.manager_epochs; ++e) loop.epoch(model, e, "manager", mplan);

  // Stage 2: Worker on golden topics, Manager frozen and supplying s_l.
  StepPlan wplan;
  wplan.feed = TopicFeed::Golden;
  wplan.manager_reads_worker = false;
  wplan.trainable = model.worker_parameters();
  for (int e = 0; e < cfg.epochs; ++e) {
    wplan.gamma = anneal_gamma(e, schedule(cfg, cfg.gamma_max));
    loop.epoch(model, cfg.manager_epochs + e, "worker", wplan, cfg.gamma_max);
  }
  model.policy = {TopicFeed::ManagerArgmax, ContextMode::ManagerState, false};
  return {std::move(model), loop.take_history()};
}

TrainResult train_iterative(const Corpus& corpus, const TrainConfig& cfg, const TrainHooks& hooks) {
  require_golden(corpus, cfg, "train_iterative");
  HsrlModel model = make_model(ModelKind::Hierarchical, dims_for(corpus, cfg), cfg.seed);
  Loop loop(corpus, cfg, hooks);
  loop.set_final_epoch(cfg.epochs);

  StepPlan wplan;
  wplan.feed = TopicFeed::ManagerSoft;
  wplan.trainable = model.worker_parameters();
  StepPlan mplan;
  mplan.feed = TopicFeed::ManagerSoft;
  mplan.gamma1 = 0.0;
  mplan.worker_loss = false;
  mplan.trainable = model.manager_parameters();
  for (int e = 0; e < cfg.epochs; ++e) {
    if (cfg.iterative_manager_phase && e % 2 == 1) {
      loop.epoch(model, e, "manager", mplan);
    } else {
      wplan.gamma = anneal_gamma(e, schedule(cfg, cfg.gamma_max));
      loop.epoch(model, e, "worker", wplan, cfg.gamma_max);
    }
  }
  model.policy = {TopicFeed::ManagerSoft, ContextMode::ManagerState, true};
  return {std::move(model), loop.take_history()};
}

TrainResult train_joint(const Corpus& corpus, const TrainConfig& cfg, const TrainHooks& hooks) {
  require_golden(corpus, cfg, "train_joint");
  HsrlModel model = make_model(ModelKind::Hierarchical, dims_for(corpus, cfg), cfg.seed);
  Loop loop(corpus, cfg, hooks);
  loop.set_final_epoch(cfg.epochs);

  StepPlan plan;
  plan.feed = TopicFeed::ManagerSoft;
  plan.gamma1 = cfg.gamma1;
  plan.trainable = cfg.gamma1 == 0.0 ? model.manager_parameters() : model.parameters();
  for (int e = 0; e < cfg.epochs; ++e) {
    plan.gamma = anneal_gamma(e, schedule(cfg, cfg.gamma2));
    loop.epoch(model, e, "joint", plan, cfg.gamma2);
  }
  model.policy = {TopicFeed::ManagerSoft, ContextMode::ManagerState, true};
  return {std::move(model), loop.take_history()};
}

TrainResult train_hierarchical(const Corpus& corpus, const TrainConfig& cfg, const TrainHooks& hooks) {
  switch (cfg.scheme) {
    case Scheme::Cascaded: return train_cascaded(corpus, cfg, hooks);
    case Scheme::Iterative: return train_iterative(corpus, cfg, hooks);
    case Scheme::Joint: return train_joint(corpus, cfg, hooks);
  }
  return train_joint(corpus, cfg, hooks);
}

TrainResult train_topic_worker(const Corpus& corpus, const TrainConfig& cfg, TopicFeed feed,
                               const TrainHooks& hooks) {
  if (feed != TopicFeed::Golden && feed != TopicFeed::Random) {
    throw ConfigError("train_topic_worker: topic feed must be golden or random");
  }
  if (feed == TopicFeed::Golden) {
    require_golden(corpus, cfg, "train_topic_worker");
  } else {
    validate(corpus, std::nullopt);
  }
  HsrlModel model = make_model(ModelKind::TopicWorker, dims_for(corpus, cfg), cfg.seed);
  model.policy.feed = feed;
  Loop loop(corpus, cfg, hooks);
  loop.set_final_epoch(cfg.epochs);
  StepPlan plan;
  plan.feed = feed;
  plan.manager_reads_worker = false;
  plan.trainable = model.parameters();
  for (int e = 0; e < cfg.epochs; ++e) {
    plan.gamma = anneal_gamma(e, schedule(cfg, cfg.gamma_max));
    loop.epoch(model, e, "worker", plan, cfg.gamma_max);
  }
  return {std::move(model), loop.take_history()};
}

TrainResult train_flat(const Corpus& corpus, const TrainConfig& cfg, bool reinforce,
                       const TrainHooks& hooks) {
  validate(corpus, std::nullopt);
  HsrlModel model = make_model(ModelKind::Flat, dims_for(corpus, cfg), cfg.seed);
  Loop loop(corpus, cfg, hooks);
  loop.set_final_epoch(cfg.epochs);
  StepPlan plan;
  plan.feed = TopicFeed::Single;
  plan.manager_reads_worker = false;
  plan.trainable = model.parameters();
  for (int e = 0; e < cfg.epochs; ++e) {
    plan.gamma = reinforce ? anneal_gamma(e, schedule(cfg, cfg.gamma_max)) : 0.0;
    loop.epoch(model, e, "worker", plan, cfg.gamma_max);
  }
  return {std::move(model), loop.take_history()};
}

// ---------------------------------------------------------------------------
// History

namespace {

std::string num(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

}  // namespace

std::string TrainHistory::to_csv() const {
  std::ostringstream out;
  out << "epoch,phase,steps,gamma,gamma1,manager_mle,worker_mle,worker_rl,mixed,joint,"
         "mean_advantage,reward_mean,greedy_reward_mean,grad_norm,validation_cider\n";
  for (const EpochRecord& e : epochs) {
    const LossBreakdown& m = e.mean;
    out << e.epoch << ',' << e.phase << ',' << e.steps << ',' << num(m.gamma) << ','
        << num(m.gamma1) << ',' << num(m.manager_mle) << ',' << num(m.worker_mle) << ','
        << num(m.worker_rl) << ',' << num(m.mixed) << ',' << num(m.joint) << ','
        << num(m.mean_advantage) << ',' << num(m.reward_mean) << ','
        << num(m.greedy_reward_mean) << ',' << num(m.grad_norm) << ','
        << (e.validation_cider ? num(*e.validation_cider) : std::string()) << '\n';
  }
  return out.str();
}

void TrainHistory::write_csv(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << to_csv();
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes little-endian");

constexpr char kMagic[8] = {'H', 'S', 'R', 'L', 'C', 'K', 'P', 'T'};

const char* context_name(ContextMode c) {
  switch (c) {
    case ContextMode::ManagerState: return "manager-state";
    case ContextMode::ZeroState: return "zero-state";
    case ContextMode::Pooled: return "pooled";
  }
  return "manager-state";
}

ContextMode parse_context(const std::string& s) {
  for (ContextMode c : {ContextMode::ManagerState, ContextMode::ZeroState, ContextMode::Pooled}) {
    if (s == context_name(c)) return c;
  }
  throw SchemaError("checkpoint: unknown context mode '" + s + "'");
}

}  // namespace

void save_checkpoint(const std::string& path, const HsrlModel& model) {
  // parameters() hands out mutable pointers; nothing is written through them.
  auto& m = const_cast<HsrlModel&>(model);
  json header;
  header["format"] = 1;
  header["kind"] = to_string(model.kind);
  const ModelDims& d = model.dims;
  header["dims"] = {{"feature_dim", d.feature_dim}, {"worker_hidden", d.worker_hidden},
                    {"embed", d.embed},             {"factors", d.factors},
                    {"manager_hidden", d.manager_hidden}, {"topics", d.topics},
                    {"vocab", d.vocab},             {"cell", to_string(d.cell)}};
  header["policy"] = {{"feed", to_string(model.policy.feed)},
                      {"context", context_name(model.policy.context)},
                      {"manager_reads_worker", model.policy.manager_reads_worker}};
  json params = json::array();
  std::uint64_t offset = 0;
  for (const Parameter* p : m.parameters()) {
    params.push_back({{"name", p->name}, {"rows", p->data.rows()}, {"cols", p->data.cols()},
                      {"offset", offset}});
    offset += static_cast<std::uint64_t>(p->data.size());
  }
  header["params"] = params;
  header["layout"] = "column-major float64";
  const std::string text = header.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f.write(kMagic, sizeof kMagic);
  const std::uint64_t len = text.size();
  f.write(reinterpret_cast<const char*>(&len), sizeof len);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const Parameter* p : m.parameters()) {
    f.write(reinterpret_cast<const char*>(p->data.data()),
            static_cast<std::streamsize>(p->data.size() * sizeof(double)));
  }
  if (!f) throw IoError("failed writing " + path);
}

HsrlModel load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  char magic[8];
  std::uint64_t len = 0;
  f.read(magic, sizeof magic);
  f.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!f || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw SchemaError(path + ": not a checkpoint");
  }
  if (len > (1u << 26)) throw SchemaError(path + ": implausible header length");
  std::string text(len, '\0');
  f.read(text.data(), static_cast<std::streamsize>(len));
  if (!f) throw SchemaError(path + ": truncated header");
  json header;
  try {
    header = json::parse(text);
    const json& jd = header.at("dims");
    ModelDims d;
    d.feature_dim = jd.at("feature_dim").get<Index>();
    d.worker_hidden = jd.at("worker_hidden").get<Index>();
    d.embed = jd.at("embed").get<Index>();
    d.factors = jd.at("factors").get<Index>();
    d.manager_hidden = jd.at("manager_hidden").get<Index>();
    d.topics = jd.at("topics").get<int>();
    d.vocab = jd.at("vocab").get<Index>();
    d.cell = parse_cell_variant(jd.at("cell").get<std::string>());
    const ModelKind kind = parse_model_kind(header.at("kind").get<std::string>());
    HsrlModel model = make_model(kind, d, 0);
    model.dims = d;
    const json& jp = header.at("policy");
    model.policy = {parse_topic_feed(jp.at("feed").get<std::string>()),
                    parse_context(jp.at("context").get<std::string>()),
                    jp.at("manager_reads_worker").get<bool>()};
    const ParameterList params = model.parameters();
    const json& list = header.at("params");
    if (list.size() != params.size()) throw SchemaError(path + ": parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter& p = *params[i];
      if (list[i].at("name").get<std::string>() != p.name ||
          list[i].at("rows").get<Index>() != p.data.rows() ||
          list[i].at("cols").get<Index>() != p.data.cols()) {
        throw SchemaError(path + ": parameter " + std::to_string(i) + " does not match " + p.name +
                          " " + shape_string(p.data));
      }
      f.read(reinterpret_cast<char*>(p.data.data()),
             static_cast<std::streamsize>(p.data.size() * sizeof(double)));
      if (!f) throw SchemaError(path + ": truncated payload at " + p.name);
    }
    return model;
  } catch (const json::exception& e) {
    throw SchemaError(path + ": bad checkpoint header: " + e.what());
  }
}

}  // namespace hsrl
