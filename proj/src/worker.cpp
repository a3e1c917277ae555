#include "hsrl/worker.hpp"

#include <algorithm>
#include <cmath>

#include "hsrl/datasets.hpp"

namespace hsrl {

std::string to_string(CellVariant v) {
  return v == CellVariant::ScnLstm ? "scn-lstm" : "scn-vanilla";
}

CellVariant parse_cell_variant(const std::string& s) {
  if (s == "scn-lstm") return CellVariant::ScnLstm;
  if (s == "scn-vanilla") return CellVariant::ScnVanilla;
  throw ConfigError("unknown cell variant '" + s + "' (expected scn-lstm or scn-vanilla)");
}

WorkerParams::WorkerParams(CellVariant cell_, Index vocab, Index embed_dim, Index hidden,
                           Index factors, int topics, Index context_dim)
    : cell(cell_) {
  if (vocab < Vocab::kReserved || embed_dim < 1 || hidden < 1 || factors < 1 || topics < 1 ||
      context_dim < 1) {
    throw ConfigError("worker: every dimension must be positive and V >= 4");
  }
  const Index g = cell == CellVariant::ScnLstm ? 4 : 1;
  const Index lstm_rows = cell == CellVariant::ScnLstm ? hidden : 0;
  embed = Parameter("worker.embed", vocab, embed_dim);
  init_h_w = Parameter("worker.init_h_w", hidden, context_dim);
  init_h_b = Parameter("worker.init_h_b", hidden, 1);
  init_c_w = Parameter("worker.init_c_w", lstm_rows, context_dim);
  init_c_b = Parameter("worker.init_c_b", lstm_rows, 1);
  w3a = Parameter("worker.w3a", g * hidden, factors);
  w3b = Parameter("worker.w3b", g * factors, topics);
  w3c = Parameter("worker.w3c", g * factors, embed_dim);
  w4a = Parameter("worker.w4a", g * hidden, factors);
  w4b = Parameter("worker.w4b", g * factors, topics);
  w4c = Parameter("worker.w4c", g * factors, hidden);
  bias = Parameter("worker.bias", g * hidden, 1);
  w2 = Parameter("worker.w2", embed_dim, hidden);
  b2 = Parameter("worker.b2", embed_dim, 1);
  mlp_w = Parameter("worker.mlp_w", embed_dim, embed_dim);
  mlp_b = Parameter("worker.mlp_b", embed_dim, 1);
  out_w = Parameter("worker.out_w", vocab, embed_dim);
  out_b = Parameter("worker.out_b", vocab, 1);
}

ParameterList WorkerParams::parameters() {
  ParameterList out = {&embed, &init_h_w, &init_h_b};
  if (cell == CellVariant::ScnLstm) {
    out.push_back(&init_c_w);
    out.push_back(&init_c_b);
  }
  for (Parameter* p : {&w3a, &w3b, &w3c, &w4a, &w4b, &w4c, &bias, &w2, &b2, &mlp_w, &mlp_b,
                       &out_w, &out_b}) {
    out.push_back(p);
  }
  return out;
}

void WorkerParams::init(SeededRng& rng, double scale) {
  for (Parameter* p : parameters()) init_uniform(*p, rng, scale);
  // Topic loadings start near 1 so every expert begins as the shared W_a W_c;
  // with all three factors near zero the product sits on a flat saddle.
  w3b.data.array() += 1.0;
  w4b.data.array() += 1.0;
  if (cell == CellVariant::ScnLstm) bias.data.middleRows(hidden(), hidden()).setOnes();
}

// ---------------------------------------------------------------------------

Matrix compose_weight(const Matrix& wa, const Matrix& wb, const Matrix& wc, const Vector& g) {
  if (wa.cols() != wb.rows() || wb.rows() != wc.rows() || wb.cols() != g.size()) {
    throw DimensionError("compose_weight: factors " + shape_string(wa) + ", " + shape_string(wb) +
                         ", " + shape_string(wc) + " with g of size " + std::to_string(g.size()));
  }
  const Vector d = wb * g;
  return wa * d.asDiagonal() * wc;
}

Var compose_weight(Var wa, Var wb, Var wc, Var g) {
  if (g.cols() != 1) throw DimensionError("compose_weight: g must be a single column");
  return matmul(wa, scale_rows(wc, matmul(wb, g)));
}

FactorTriple gate_factors(const WorkerParams& p, bool hidden_to_hidden, Index gate) {
  if (gate < 0 || gate >= p.gates()) throw IndexError("gate_factors: gate out of range");
  const Index nh = p.hidden();
  const Index nf = p.factors();
  const Parameter& a = hidden_to_hidden ? p.w4a : p.w3a;
  const Parameter& b = hidden_to_hidden ? p.w4b : p.w3b;
  const Parameter& c = hidden_to_hidden ? p.w4c : p.w3c;
  return {a.data.middleRows(gate * nh, nh), b.data.middleRows(gate * nf, nf),
          c.data.middleRows(gate * nf, nf)};
}

template <typename P>
WorkerState worker_init(Tape& tape, P& params, Var context) {
  if (context.rows() != params.context_dim()) {
    throw DimensionError("worker_init: context " + shape_string(context.value()) +
                         " vs expected rows " + std::to_string(params.context_dim()));
  }
  WorkerState s;
  s.h = tanh(affine(context, tape.param(params.init_h_w), tape.param(params.init_h_b)));
  if (params.cell == CellVariant::ScnLstm) {
    s.c = tanh(affine(context, tape.param(params.init_c_w), tape.param(params.init_c_b)));
  }
  return s;
}

template <typename P>
TopicConditioning condition_on_topic(Tape& tape, P& params, Var g) {
  if (g.rows() != params.topics()) {
    throw DimensionError("condition_on_topic: g " + shape_string(g.value()) + " vs K=" +
                         std::to_string(params.topics()));
  }
  return {matmul(tape.param(params.w3b), g), matmul(tape.param(params.w4b), g)};
}

template <typename P>
Var worker_logits(Tape& tape, P& params, Var h) {
  Var r = affine(h, tape.param(params.w2), tape.param(params.b2));
  Var m = tanh(affine(r, tape.param(params.mlp_w), tape.param(params.mlp_b)));
  return affine(m, tape.param(params.out_w), tape.param(params.out_b));
}

template <typename P>
ScnOutput scn_step(Tape& tape, P& params, const TopicConditioning& topic, const WorkerState& prev,
                   Var x_prev) {
  if (x_prev.rows() != params.embed_dim() || prev.h.rows() != params.hidden() ||
      x_prev.cols() != prev.h.cols() || topic.d_in.cols() != x_prev.cols()) {
    throw DimensionError("scn_step: input " + shape_string(x_prev.value()) + ", hidden " +
                         shape_string(prev.h.value()) + ", topic " +
                         shape_string(topic.d_in.value()));
  }
  const Index g = params.gates();
  Var in = blockdiag_matmul(tape.param(params.w3a),
                            mul(topic.d_in, matmul(tape.param(params.w3c), x_prev)), g);
  Var rec = blockdiag_matmul(tape.param(params.w4a),
                             mul(topic.d_hid, matmul(tape.param(params.w4c), prev.h)), g);
  Var z = add_bias(add(in, rec), tape.param(params.bias));
  ScnOutput out;
  if (params.cell == CellVariant::ScnLstm) {
    LstmState s = lstm_cell(z, prev.c);
    out.state = {s.h, s.c};
  } else {
    out.state = {sigmoid(z), Var{}};
  }
  out.logits = worker_logits(tape, params, out.state.h);
  return out;
}

// ---------------------------------------------------------------------------

std::vector<double> SentenceScore::column_logprob() const {
  std::vector<double> out;
  if (step_logp.empty()) return out;
  out.assign(static_cast<std::size_t>(step_logp.front().cols()), 0.0);
  for (std::size_t t = 0; t < step_logp.size(); ++t) {
    const Matrix& v = step_logp[t].value();
    for (std::size_t b = 0; b < out.size(); ++b) {
      if (step_mask[t][b] != 0.0) out[b] += v(0, static_cast<Index>(b));
    }
  }
  return out;
}

Var SentenceScore::weighted(std::span<const double> weights) const {
  if (step_logp.empty()) throw DimensionError("SentenceScore::weighted: empty score");
  Var total;
  std::vector<double> w(weights.size());
  for (std::size_t t = 0; t < step_logp.size(); ++t) {
    for (std::size_t b = 0; b < w.size(); ++b) w[b] = step_mask[t][b] * weights[b];
    Var term = weighted_sum(step_logp[t], w);
    total = total.valid() ? add(total, term) : term;
  }
  return total;
}

double SentenceScore::token_count() const {
  double n = 0.0;
  for (const auto& m : step_mask) {
    for (double v : m) n += v;
  }
  return n;
}

namespace {

bool all_set(const std::vector<double>& mask) {
  return std::all_of(mask.begin(), mask.end(), [](double v) { return v != 0.0; });
}

WorkerState advance(const WorkerState& prev, const WorkerState& next,
                    const std::vector<double>& mask) {
  if (all_set(mask)) return next;
  WorkerState s;
  s.h = blend_cols(mask, next.h, prev.h);
  if (next.c.valid()) s.c = blend_cols(mask, next.c, prev.c);
  return s;
}

}  // namespace

template <typename P>
SentenceScore score_sentences(Tape& tape, P& params, const WorkerState& init,
                              const TopicConditioning& topic,
                              std::span<const std::vector<int>> targets) {
  const auto batch = static_cast<std::size_t>(init.h.cols());
  if (targets.size() != batch) {
    throw DimensionError("score_sentences: " + std::to_string(targets.size()) +
                         " targets for batch of " + std::to_string(batch));
  }
  std::size_t longest = 0;
  for (const auto& t : targets) {
    if (t.empty() || t.back() != Vocab::kEos) {
      throw SchemaError("score_sentences: target must be non-empty and end in EOS");
    }
    longest = std::max(longest, t.size());
  }
  Var table = tape.param(params.embed);
  std::vector<int> ids(batch, Vocab::kBos);
  Var x = gather_rows_as_cols(table, ids);
  WorkerState state = init;
  SentenceScore score;
  for (std::size_t t = 0; t < longest; ++t) {
    std::vector<double> mask(batch, 0.0);
    for (std::size_t b = 0; b < batch; ++b) {
      const bool active = t < targets[b].size();
      mask[b] = active ? 1.0 : 0.0;
      ids[b] = active ? targets[b][t] : Vocab::kPad;
    }
    ScnOutput out = scn_step(tape, params, topic, state, x);
    score.step_logp.push_back(pick(log_softmax(out.logits), ids));
    score.step_mask.push_back(mask);
    state = advance(state, out.state, mask);
    if (t + 1 < longest) x = gather_rows_as_cols(table, ids);
  }
  score.final_h = state.h;
  return score;
}

template <typename P>
DecodeResult decode_sentences(Tape& tape, P& params, const WorkerState& init,
                              const TopicConditioning& topic, DecodeMode mode, SeededRng& rng,
                              int t_max) {
  if (t_max < 1) throw ConfigError("decode: T_max must be at least 1");
  const auto batch = static_cast<std::size_t>(init.h.cols());
  Var table = tape.param(params.embed);
  std::vector<int> ids(batch, Vocab::kBos);
  Var x = gather_rows_as_cols(table, ids);
  WorkerState state = init;
  DecodeResult result;
  result.tokens.resize(batch);
  result.token_logp.resize(batch);
  std::vector<char> active(batch, 1);
  std::vector<double> probs;
  for (int t = 0; t < t_max; ++t) {
    if (std::none_of(active.begin(), active.end(), [](char a) { return a != 0; })) break;
    ScnOutput out = scn_step(tape, params, topic, state, x);
    Var logp = log_softmax(out.logits);
    const Matrix& lp = logp.value();
    std::vector<double> mask(batch, 0.0);
    for (std::size_t b = 0; b < batch; ++b) {
      if (!active[b]) {
        ids[b] = Vocab::kPad;
        continue;
      }
      const auto col = static_cast<Index>(b);
      int chosen = 0;
      if (mode == DecodeMode::Greedy) {
        for (Index v = 1; v < lp.rows(); ++v) {
          if (lp(v, col) > lp(chosen, col)) chosen = static_cast<int>(v);
        }
      } else {
        probs.resize(static_cast<std::size_t>(lp.rows()));
        for (Index v = 0; v < lp.rows(); ++v) probs[static_cast<std::size_t>(v)] = std::exp(lp(v, col));
        chosen = static_cast<int>(rng.categorical(probs));
      }
      ids[b] = chosen;
      mask[b] = 1.0;
      result.tokens[b].push_back(chosen);
      result.token_logp[b].push_back(lp(chosen, col));
      if (chosen == Vocab::kEos) active[b] = 0;
    }
    result.score.step_logp.push_back(pick(logp, ids));
    result.score.step_mask.push_back(mask);
    state = advance(state, out.state, mask);
    x = gather_rows_as_cols(table, ids);
  }
  result.score.final_h = state.h;
  return result;
}

#define HSRL_INSTANTIATE_WORKER(P)                                                             \
  template WorkerState worker_init(Tape&, P&, Var);                                           \
  template TopicConditioning condition_on_topic(Tape&, P&, Var);                              \
  template Var worker_logits(Tape&, P&, Var);                                                 \
  template ScnOutput scn_step(Tape&, P&, const TopicConditioning&, const WorkerState&, Var);  \
  template SentenceScore score_sentences(Tape&, P&, const WorkerState&,                       \
                                         const TopicConditioning&,                            \
                                         std::span<const std::vector<int>>);                  \
  template DecodeResult decode_sentences(Tape&, P&, const WorkerState&,                       \
                                         const TopicConditioning&, DecodeMode, SeededRng&, int);

HSRL_INSTANTIATE_WORKER(WorkerParams)
HSRL_INSTANTIATE_WORKER(const WorkerParams)

#undef HSRL_INSTANTIATE_WORKER

}  // namespace hsrl
