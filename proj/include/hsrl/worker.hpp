#pragma once

// Low-level decoder: a semantic compositional recurrent cell whose weight
// matrices are topic mixtures of K experts, stored in factored form
//
//   W(g) = W_a * diag(W_b g) * W_c
//
// so that W(g) x = W_a ((W_b g) .* (W_c x)) is applied without ever
// materializing W(g).  The `scn-lstm` cell factorizes all four gates of an
// LSTM this way (gate blocks stacked in the order input, forget, output,
// candidate); `scn-vanilla` is the single-gate h = sigmoid(W3(g) x + W4(g) h).

#include <span>
#include <string>
#include <vector>

#include "hsrl/diffcore.hpp"

namespace hsrl {

enum class CellVariant { ScnLstm, ScnVanilla };

std::string to_string(CellVariant v);
CellVariant parse_cell_variant(const std::string& s);

struct WorkerParams {
  CellVariant cell = CellVariant::ScnLstm;
  Parameter embed;     // V x n_x
  Parameter init_h_w;  // n_h x ctx
  Parameter init_h_b;
  Parameter init_c_w;  // n_h x ctx (scn-lstm only, zero-sized otherwise)
  Parameter init_c_b;
  Parameter w3a;       // G*n_h x n_f   input-to-hidden factors, G gate blocks
  Parameter w3b;       // G*n_f x K
  Parameter w3c;       // G*n_f x n_x
  Parameter w4a;       // G*n_h x n_f   hidden-to-hidden factors
  Parameter w4b;       // G*n_f x K
  Parameter w4c;       // G*n_f x n_h
  Parameter bias;      // G*n_h x 1
  Parameter w2;        // n_x x n_h     readout
  Parameter b2;
  Parameter mlp_w;     // n_x x n_x
  Parameter mlp_b;
  Parameter out_w;     // V x n_x
  Parameter out_b;

  WorkerParams() = default;
  WorkerParams(CellVariant cell, Index vocab, Index embed_dim, Index hidden, Index factors,
               int topics, Index context_dim);

  void init(SeededRng& rng, double scale = 0.08);
  ParameterList parameters();

  Index gates() const { return cell == CellVariant::ScnLstm ? 4 : 1; }
  Index hidden() const { return init_h_w.data.rows(); }
  Index embed_dim() const { return embed.data.cols(); }
  Index vocab() const { return embed.data.rows(); }
  Index factors() const { return w3c.data.rows() / gates(); }
  int topics() const { return static_cast<int>(w3b.data.cols()); }
  Index context_dim() const { return init_h_w.data.cols(); }
};

struct WorkerState {
  Var h;
  Var c;  // invalid for scn-vanilla
};

/// The per-sentence diagonals W3b g and W4b g (G*n_f x B).  g is constant
/// over a sentence, so these are computed once per sentence.
struct TopicConditioning {
  Var d_in;
  Var d_hid;
};

struct ScnOutput {
  WorkerState state;
  Var logits;  // V x B
};

/// W_a diag(W_b g) W_c for one gate block, on plain matrices.
Matrix compose_weight(const Matrix& wa, const Matrix& wb, const Matrix& wc, const Vector& g);
/// Differentiable form; g is K x 1.
Var compose_weight(Var wa, Var wb, Var wc, Var g);

/// Gate block `gate` of a stacked factor triple, as (wa, wb, wc).
struct FactorTriple {
  Matrix wa, wb, wc;
};
FactorTriple gate_factors(const WorkerParams& p, bool hidden_to_hidden, Index gate);

/// h_0 = tanh(A c + a), and for scn-lstm c_0 = tanh(C c + d).
template <typename P>
WorkerState worker_init(Tape& tape, P& params, Var context);

template <typename P>
TopicConditioning condition_on_topic(Tape& tape, P& params, Var g);

template <typename P>
ScnOutput scn_step(Tape& tape, P& params, const TopicConditioning& topic, const WorkerState& prev,
                   Var x_prev);

/// logits = W_out tanh(W_m (W_2 h + b_2) + b_m) + b_out.
template <typename P>
Var worker_logits(Tape& tape, P& params, Var h);

/// Log-probabilities of a batch of sentences, one token step at a time.
/// step_logp[t] is 1 x B; step_mask[t][b] is 1 where column b emitted a token
/// at step t.
struct SentenceScore {
  std::vector<Var> step_logp;
  std::vector<std::vector<double>> step_mask;
  Var final_h;  // hidden state at each column's last emitted token

  /// Per-column sum of log-probabilities (values only).
  std::vector<double> column_logprob() const;
  /// sum_t sum_b weights[b] * mask[t][b] * logp[t][b] on the tape.
  Var weighted(std::span<const double> weights) const;
  double token_count() const;
};

/// Teacher-forced scoring: the input at step t is the embedding of target
/// token t-1 (BOS at t = 0).  Every target must end in EOS.
template <typename P>
SentenceScore score_sentences(Tape& tape, P& params, const WorkerState& init,
                              const TopicConditioning& topic, std::span<const std::vector<int>> targets);

enum class DecodeMode { Greedy, Sample };

struct DecodeResult {
  std::vector<std::vector<int>> tokens;          // per column; EOS-terminated or T_max long
  std::vector<std::vector<double>> token_logp;   // per column, aligned with tokens
  SentenceScore score;
};

/// Free-running decode that feeds back emitted-word embeddings.  Greedy picks
/// the argmax (lowest id on ties); Sample draws from the softmax with `rng`,
/// column by column.
template <typename P>
DecodeResult decode_sentences(Tape& tape, P& params, const WorkerState& init,
                              const TopicConditioning& topic, DecodeMode mode, SeededRng& rng,
                              int t_max);

}  // namespace hsrl
