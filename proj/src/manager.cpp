#include "hsrl/manager.hpp"

#include <cmath>

namespace hsrl {

ManagerParams::ManagerParams(Index feature_dim, Index worker_hidden, Index hidden, int topics)
    : vbar_w("manager.vbar_w", worker_hidden, feature_dim),
      vbar_b("manager.vbar_b", worker_hidden, 1),
      lstm("manager.lstm", worker_hidden, hidden),
      w1("manager.w1", hidden, feature_dim + hidden),
      b1("manager.b1", hidden, 1),
      mlp_w("manager.mlp_w", hidden, hidden),
      mlp_b("manager.mlp_b", hidden, 1),
      out_w("manager.out_w", topics, hidden),
      out_b("manager.out_b", topics, 1) {
  if (topics < 1) throw ConfigError("manager: topic count must be positive");
}

void ManagerParams::init(SeededRng& rng, double scale) {
  init_uniform(vbar_w, rng, scale);
  init_uniform(vbar_b, rng, scale);
  lstm.init(rng, scale);
  for (Parameter* p : {&w1, &b1, &mlp_w, &mlp_b, &out_w, &out_b}) init_uniform(*p, rng, scale);
}

ParameterList ManagerParams::parameters() {
  return {&vbar_w, &vbar_b, &lstm.wx, &lstm.wh, &lstm.b, &w1, &b1, &mlp_w, &mlp_b, &out_w, &out_b};
}

template <typename P>
ManagerState manager_init(Tape& tape, P& params, Var vbar) {
  if (vbar.rows() != params.feature_dim()) {
    throw DimensionError("manager_init: v_bar " + shape_string(vbar.value()) +
                         " vs feature dim " + std::to_string(params.feature_dim()));
  }
  const Index batch = vbar.cols();
  LstmState zero{tape.constant(Matrix::Zero(params.hidden(), batch)),
                 tape.constant(Matrix::Zero(params.hidden(), batch))};
  Var x = affine(vbar, tape.param(params.vbar_w), tape.param(params.vbar_b));
  return {lstm_step(x, zero, tape.param(params.lstm.wx), tape.param(params.lstm.wh),
                    tape.param(params.lstm.b))};
}

template <typename P>
ManagerStep manager_step(Tape& tape, P& params, const ManagerState& prev, Var v, Var h_worker) {
  if (v.rows() != params.feature_dim() || h_worker.rows() != params.worker_hidden() ||
      v.cols() != h_worker.cols()) {
    throw DimensionError("manager_step: v " + shape_string(v.value()) + ", h_worker " +
                         shape_string(h_worker.value()));
  }
  ManagerStep step;
  step.state.lstm = lstm_step(h_worker, prev.lstm, tape.param(params.lstm.wx),
                              tape.param(params.lstm.wh), tape.param(params.lstm.b));
  step.context = concat_rows({v, step.state.lstm.h});
  Var projected = affine(step.context, tape.param(params.w1), tape.param(params.b1));
  Var hidden = tanh(affine(projected, tape.param(params.mlp_w), tape.param(params.mlp_b)));
  step.logits = affine(hidden, tape.param(params.out_w), tape.param(params.out_b));
  step.g = softmax(step.logits);
  return step;
}

template ManagerState manager_init(Tape&, ManagerParams&, Var);
template ManagerState manager_init(Tape&, const ManagerParams&, Var);
template ManagerStep manager_step(Tape&, ManagerParams&, const ManagerState&, Var, Var);
template ManagerStep manager_step(Tape&, const ManagerParams&, const ManagerState&, Var, Var);

double manager_nll(std::span<const Vector> g_sequence, std::span<const int> golden) {
  if (g_sequence.size() != golden.size()) {
    throw AlignmentError("manager_nll: " + std::to_string(g_sequence.size()) +
                         " predictions for " + std::to_string(golden.size()) + " golden topics");
  }
  double loss = 0.0;
  for (std::size_t l = 0; l < golden.size(); ++l) {
    if (golden[l] < 0 || golden[l] >= g_sequence[l].size()) {
      throw IndexError("manager_nll: golden topic " + std::to_string(golden[l]) +
                       " outside K=" + std::to_string(g_sequence[l].size()));
    }
    loss -= std::log(g_sequence[l][golden[l]]);
  }
  return loss;
}

Var topic_log_likelihood(Var logits, std::span<const int> golden) {
  for (int k : golden) {
    if (k < 0 || k >= logits.rows()) {
      throw IndexError("golden topic " + std::to_string(k) + " outside K=" +
                       std::to_string(logits.rows()));
    }
  }
  return pick(log_softmax(logits), golden);
}

}  // namespace hsrl
