#pragma once

// High-level decoder: one LSTM step per image slot, emitting a topic
// distribution g_l from the context c_l = [v_l; s_l].
//
//   s_0       = LSTM(zero state, P v_bar)          (manager_init)
//   s_l       = LSTM(s_{l-1}, h_{l-1,T})           (h_{0,T} = 0)
//   c_l       = [v_l; s_l]
//   g_l       = softmax(W_out tanh(W_m (W_1 c_l + b_1) + b_m) + b_out)
//
// All tensors are column-batched: v is d_v x B, h_worker is n_h x B.

#include <span>
#include <vector>

#include "hsrl/diffcore.hpp"

namespace hsrl {

struct ManagerParams {
  Parameter vbar_w;  // n_h x d_v
  Parameter vbar_b;  // n_h x 1
  LstmParams lstm;   // input n_h, hidden n_m
  Parameter w1;      // n_m x (d_v + n_m)
  Parameter b1;
  Parameter mlp_w;   // n_m x n_m
  Parameter mlp_b;
  Parameter out_w;   // K x n_m
  Parameter out_b;

  ManagerParams() = default;
  ManagerParams(Index feature_dim, Index worker_hidden, Index hidden, int topics);

  void init(SeededRng& rng, double scale = 0.08);
  ParameterList parameters();

  int topics() const { return static_cast<int>(out_w.data.rows()); }
  Index hidden() const { return lstm.hidden(); }
  Index feature_dim() const { return vbar_w.data.cols(); }
  Index worker_hidden() const { return vbar_w.data.rows(); }
  Index context_dim() const { return w1.data.cols(); }
};

struct ManagerState {
  LstmState lstm;
};

struct ManagerStep {
  ManagerState state;
  Var context;  // [v_l; s_l], (d_v + n_m) x B
  Var logits;   // K x B, pre-softmax
  Var g;        // K x B, columns on the simplex
};

/// Runs the v_bar projection through one LSTM step from a zero state.
template <typename P>
ManagerState manager_init(Tape& tape, P& params, Var vbar);

template <typename P>
ManagerStep manager_step(Tape& tape, P& params, const ManagerState& prev, Var v, Var h_worker);

/// -sum_l log g_l[golden_l] over plain distributions.
double manager_nll(std::span<const Vector> g_sequence, std::span<const int> golden);

/// Row vector (1 x B) of log g[golden_b] computed stably from logits.
Var topic_log_likelihood(Var logits, std::span<const int> golden);

}  // namespace hsrl
