#include "hsrl/story.hpp"

#include <algorithm>

namespace hsrl {

std::string to_string(TopicFeed f) {
  switch (f) {
    case TopicFeed::ManagerSoft: return "manager-soft";
    case TopicFeed::ManagerArgmax: return "manager-argmax";
    case TopicFeed::Golden: return "golden";
    case TopicFeed::Random: return "random";
    case TopicFeed::Single: return "single";
  }
  return "manager-soft";
}

TopicFeed parse_topic_feed(const std::string& s) {
  for (TopicFeed f : {TopicFeed::ManagerSoft, TopicFeed::ManagerArgmax, TopicFeed::Golden,
                      TopicFeed::Random, TopicFeed::Single}) {
    if (to_string(f) == s) return f;
  }
  throw ConfigError("unknown topic feed '" + s + "'");
}

std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::Hierarchical: return "hierarchical";
    case ModelKind::TopicWorker: return "topic-worker";
    case ModelKind::Flat: return "flat";
  }
  return "hierarchical";
}

ModelKind parse_model_kind(const std::string& s) {
  for (ModelKind k : {ModelKind::Hierarchical, ModelKind::TopicWorker, ModelKind::Flat}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown model kind '" + s + "'");
}

ParameterList HsrlModel::manager_parameters() {
  return manager ? manager->parameters() : ParameterList{};
}

ParameterList HsrlModel::worker_parameters() { return worker.parameters(); }

ParameterList HsrlModel::parameters() {
  ParameterList out = manager_parameters();
  for (Parameter* p : worker_parameters()) out.push_back(p);
  return out;
}

HsrlModel make_model(ModelKind kind, const ModelDims& dims, std::uint64_t seed) {
  if (dims.vocab < Vocab::kReserved) throw ConfigError("make_model: vocabulary size not set");
  if (dims.topics < 2 && kind != ModelKind::Flat) throw ConfigError("make_model: K must be >= 2");
  HsrlModel m;
  m.kind = kind;
  m.dims = dims;
  SeededRng rng(seed);
  switch (kind) {
    case ModelKind::Hierarchical:
      m.manager.emplace(dims.feature_dim, dims.worker_hidden, dims.manager_hidden, dims.topics);
      m.manager->init(rng);
      m.policy = {TopicFeed::ManagerSoft, ContextMode::ManagerState, true};
      break;
    case ModelKind::TopicWorker:
      m.policy = {TopicFeed::Golden, ContextMode::ZeroState, false};
      break;
    case ModelKind::Flat:
      m.dims.topics = 1;
      m.policy = {TopicFeed::Single, ContextMode::Pooled, false};
      break;
  }
  const Index ctx = kind == ModelKind::Flat ? 2 * dims.feature_dim
                                            : dims.feature_dim + dims.manager_hidden;
  m.worker = WorkerParams(dims.cell, dims.vocab, dims.embed, dims.worker_hidden, dims.factors,
                          m.dims.topics, ctx);
  m.worker.init(rng);
  return m;
}

// ---------------------------------------------------------------------------

StoryBatch::StoryBatch(std::vector<const StoryRecord*> records) : records_(std::move(records)) {
  if (records_.empty()) throw ConfigError("StoryBatch: empty batch");
  slots_ = records_.front()->slots();
  for (const StoryRecord* r : records_) {
    if (r->slots() != slots_) throw SchemaError("StoryBatch: records differ in slot count");
  }
}

Matrix StoryBatch::features(std::size_t slot) const {
  const Index dv = records_.front()->features[slot].size();
  Matrix m(dv, static_cast<Index>(size()));
  for (std::size_t b = 0; b < size(); ++b) m.col(static_cast<Index>(b)) = records_[b]->features[slot];
  return m;
}

Matrix StoryBatch::pooled() const {
  const Index dv = records_.front()->features[0].size();
  Matrix m(dv, static_cast<Index>(size()));
  for (std::size_t b = 0; b < size(); ++b) m.col(static_cast<Index>(b)) = mean_pool(records_[b]->features);
  return m;
}

std::vector<std::vector<int>> StoryBatch::sentences(std::size_t slot) const {
  std::vector<std::vector<int>> out;
  out.reserve(size());
  for (const StoryRecord* r : records_) out.push_back(r->sentences[slot]);
  return out;
}

bool StoryBatch::has_golden() const {
  return std::all_of(records_.begin(), records_.end(),
                     [](const StoryRecord* r) { return r->golden_topics.has_value(); });
}

std::vector<int> StoryBatch::golden(std::size_t slot) const {
  std::vector<int> out;
  for (const StoryRecord* r : records_) {
    if (!r->golden_topics) throw ConfigError("golden topics required but missing");
    out.push_back((*r->golden_topics)[slot]);
  }
  return out;
}

std::vector<int> argmax_cols(const Matrix& m) {
  std::vector<int> out(static_cast<std::size_t>(m.cols()), 0);
  for (Index b = 0; b < m.cols(); ++b) {
    Index best = 0;
    for (Index k = 1; k < m.rows(); ++k) {
      if (m(k, b) > m(best, b)) best = k;
    }
    out[static_cast<std::size_t>(b)] = static_cast<int>(best);
  }
  return out;
}

namespace {

Matrix one_hot(std::span<const int> ids, int k) {
  Matrix m = Matrix::Zero(k, static_cast<Index>(ids.size()));
  for (std::size_t b = 0; b < ids.size(); ++b) {
    if (ids[b] < 0 || ids[b] >= k) {
      throw IndexError("topic id " + std::to_string(ids[b]) + " outside K=" + std::to_string(k));
    }
    m(ids[b], static_cast<Index>(b)) = 1.0;
  }
  return m;
}

bool needs_manager(const StoryOptions& o, ContextMode context) {
  return o.feed == TopicFeed::ManagerSoft || o.feed == TopicFeed::ManagerArgmax ||
         context == ContextMode::ManagerState;
}

/// Greedy decode on a throwaway non-recording tape, starting from the values
/// of a state living on another tape.
struct DetachedDecode {
  std::vector<std::vector<int>> tokens;
  Matrix final_h;
};

template <typename W>
DetachedDecode detached_greedy(W& worker, const WorkerState& init, const Matrix& g, int t_max) {
  Tape scratch(false);
  const W& frozen = worker;
  WorkerState s{scratch.constant(init.h.value()),
                init.c.valid() ? scratch.constant(init.c.value()) : Var{}};
  TopicConditioning cond = condition_on_topic(scratch, frozen, scratch.constant(g));
  SeededRng unused(0);
  DecodeResult r = decode_sentences(scratch, frozen, s, cond, DecodeMode::Greedy, unused, t_max);
  return {std::move(r.tokens), r.score.final_h.value()};
}

}  // namespace

template <typename M>
StoryPass run_story(Tape& tape, M& model, const StoryBatch& batch, const StoryOptions& options) {
  const bool use_manager = needs_manager(options, model.policy.context);
  if (use_manager && !model.manager) throw ConfigError("run_story: this model has no Manager");
  if (options.mode == WorkerMode::Sample && options.rng == nullptr) {
    throw ConfigError("run_story: sampling needs an rng");
  }
  if (options.feed == TopicFeed::Random &&
      (options.random_topics == nullptr || options.random_topics->size() != batch.slots())) {
    throw ConfigError("run_story: random topic feed needs one id row per slot");
  }
  const auto B = static_cast<Index>(batch.size());
  const int K = model.worker.topics();
  const bool golden_available = batch.has_golden();

  StoryPass pass;
  pass.manager_ran = use_manager;
  Var vbar = tape.constant(batch.pooled());
  ManagerState mstate;
  if (use_manager) mstate = manager_init(tape, *model.manager, vbar);
  Var prev_h = tape.constant(Matrix::Zero(model.worker.hidden(), B));
  Matrix prev_h_value = Matrix::Zero(model.worker.hidden(), B);

  for (std::size_t l = 0; l < batch.slots(); ++l) {
    SlotPass slot;
    Var v = tape.constant(batch.features(l));
    ManagerStep mstep;
    if (use_manager) {
      Var h_in = tape.constant(Matrix::Zero(model.worker.hidden(), B));
      if (options.manager_reads_worker && l > 0) {
        h_in = options.manager_h == ManagerHSource::Greedy ? tape.constant(prev_h_value) : prev_h;
      }
      mstep = manager_step(tape, *model.manager, mstate, v, h_in);
      mstate = mstep.state;
      if (golden_available) {
        const std::vector<int> gold = batch.golden(l);
        slot.topic_loglik = topic_log_likelihood(mstep.logits, gold);
      }
    }

    Var g;
    switch (options.feed) {
      case TopicFeed::ManagerSoft: g = mstep.g; break;
      case TopicFeed::ManagerArgmax: g = tape.constant(one_hot(argmax_cols(mstep.g.value()), K)); break;
      case TopicFeed::Golden: g = tape.constant(one_hot(batch.golden(l), K)); break;
      case TopicFeed::Random: g = tape.constant(one_hot((*options.random_topics)[l], K)); break;
      case TopicFeed::Single: g = tape.constant(Matrix::Ones(K, B) / static_cast<double>(K)); break;
    }
    slot.g = g.value();
    slot.topic = argmax_cols(slot.g);

    Var context;
    switch (model.policy.context) {
      case ContextMode::ManagerState: context = mstep.context; break;
      case ContextMode::ZeroState:
        context = tape.constant(Matrix::Zero(model.worker.context_dim(), B));
        break;
      case ContextMode::Pooled: context = concat_rows({vbar, v}); break;
    }
    WorkerState init = worker_init(tape, model.worker, context);
    TopicConditioning cond = condition_on_topic(tape, model.worker, g);

    if (options.mode == WorkerMode::TeacherForced) {
      slot.tokens = batch.sentences(l);
      slot.score = score_sentences(tape, model.worker, init, cond, slot.tokens);
    } else {
      SeededRng fallback(0);
      SeededRng& rng = options.rng ? *options.rng : fallback;
      DecodeResult r = decode_sentences(tape, model.worker, init, cond,
                                        options.mode == WorkerMode::Greedy ? DecodeMode::Greedy
                                                                           : DecodeMode::Sample,
                                        rng, options.t_max);
      slot.tokens = std::move(r.tokens);
      slot.token_logp = std::move(r.token_logp);
      slot.score = std::move(r.score);
    }
    slot.final_h = slot.score.final_h.value();
    prev_h = slot.score.final_h;

    const bool want_greedy =
        options.greedy_baseline ||
        (options.mode == WorkerMode::TeacherForced && options.manager_h == ManagerHSource::Greedy);
    if (want_greedy) {
      DetachedDecode r = detached_greedy(model.worker, init, slot.g, options.t_max);
      slot.greedy_tokens = std::move(r.tokens);
      prev_h_value = std::move(r.final_h);
    }
    pass.slots.push_back(std::move(slot));
  }
  return pass;
}

template <typename M>
std::vector<Var> manager_only_pass(Tape& tape, M& model, const StoryBatch& batch) {
  if (!model.manager) throw ConfigError("manager_only_pass: model has no Manager");
  const auto B = static_cast<Index>(batch.size());
  ManagerState state = manager_init(tape, *model.manager, tape.constant(batch.pooled()));
  Var zero = tape.constant(Matrix::Zero(model.manager->worker_hidden(), B));
  std::vector<Var> out;
  for (std::size_t l = 0; l < batch.slots(); ++l) {
    ManagerStep step = manager_step(tape, *model.manager, state, tape.constant(batch.features(l)), zero);
    state = step.state;
    out.push_back(topic_log_likelihood(step.logits, batch.golden(l)));
  }
  return out;
}

template StoryPass run_story(Tape&, HsrlModel&, const StoryBatch&, const StoryOptions&);
template StoryPass run_story(Tape&, const HsrlModel&, const StoryBatch&, const StoryOptions&);
template std::vector<Var> manager_only_pass(Tape&, HsrlModel&, const StoryBatch&);
template std::vector<Var> manager_only_pass(Tape&, const HsrlModel&, const StoryBatch&);

}  // namespace hsrl
