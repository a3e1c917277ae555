#pragma once

// Dense float64 numerics with a reverse-mode tape.
//
// Values are Eigen matrices; a batch of B column vectors is a (rows x B)
// matrix, so every decoder step runs on a whole minibatch at once.  A Tape
// records each operation eagerly (the value is computed immediately) together
// with a closure that propagates the output gradient to its inputs.  Calling
// Tape::backward on a 1x1 result accumulates exact gradients into the
// Parameter::grad of every parameter leaf that was touched.

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "hsrl/errors.hpp"

namespace hsrl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

std::string shape_string(const Matrix& m);

/// A learnable array and its gradient accumulator (same shape).
struct Parameter {
  std::string name;
  Matrix data;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string name, Index rows, Index cols);

  void zero_grad() { grad.setZero(); }
  Index size() const { return data.size(); }
};

using ParameterList = std::vector<Parameter*>;

void zero_grads(const ParameterList& params);
double grad_norm(const ParameterList& params);
std::size_t parameter_count(const ParameterList& params);

// ---------------------------------------------------------------------------
// Random numbers

/// mt19937_64 (whose output sequence is fixed by the C++ standard) with
/// distribution code written out here instead of std::*_distribution, whose
/// algorithms are implementation-defined.  Normal draws use Box-Muller.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  /// Uniform integer in [0, n), rejection sampled (no modulo bias).
  std::size_t below(std::size_t n);
  /// Draws an index with probability proportional to weights[i] (>= 0).
  std::size_t categorical(std::span<const double> weights);
  /// Independent stream derived from this seed and a stream id (splitmix64).
  SeededRng derive(std::uint64_t stream) const;

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Fills p.data uniformly in [-scale, scale].
void init_uniform(Parameter& p, SeededRng& rng, double scale = 0.08);

// ---------------------------------------------------------------------------
// Tape

class Tape;

/// Handle to a node on a Tape.  Cheap to copy; valid while its tape lives.
class Var {
 public:
  Var() = default;
  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  /// Value of a 1x1 node.
  double scalar() const;
  Tape& tape() const { return *tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  /// A non-recording tape computes values only; nothing requires grad.
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Matrix value);
  /// Leaf bound to a mutable parameter; gradients flow into p.grad.
  Var param(Parameter& p);
  /// Frozen parameter: enters the graph as a constant.
  Var param(const Parameter& p);

  using Backward = std::function<void(Tape&, int self)>;
  /// Appends an op result.  `backward` runs only if some input requires grad.
  Var push(Matrix value, std::initializer_list<Var> inputs, Backward backward);
  Var push(Matrix value, std::span<const Var> inputs, Backward backward);

  const Matrix& value(int id) const { return nodes_[id].value; }
  const Matrix& grad(int id) const { return nodes_[id].grad; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  /// grad(id) += g, allocating on first touch; no-op for constant nodes.
  template <typename Expr>
  void accumulate(int id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Reverse sweep from a 1x1 root, then adds leaf grads into Parameter::grad.
  void backward(Var root, double seed = 1.0);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };
  bool record_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_ids_;
};

// ---------------------------------------------------------------------------
// Differentiable operations.  Column-wise ops treat each column as one example.

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product.
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// x (m x B) plus column vector b (m x 1) broadcast across columns.
Var add_bias(Var x, Var b);
Var sigmoid(Var a);
Var tanh(Var a);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(Var a, Index start, Index count);
/// Rows `ids` of table (V x n) returned as columns: n x ids.size().
Var gather_rows_as_cols(Var table, std::span<const int> ids);
Var softmax(Var a);
Var log_softmax(Var a);
/// Row vector (1 x B) holding a(ids[b], b).
Var pick(Var a, std::span<const int> ids);
/// Column b is new_(:,b) where mask[b] != 0, otherwise old(:,b).
Var blend_cols(std::span<const double> mask, Var new_, Var old);
Var sum(Var a);
/// Scalar sum_b a(0,b) * weights[b] for a row vector a.
Var weighted_sum(Var a, std::span<const double> weights);
/// diag(d) * a for column vector d.
Var scale_rows(Var a, Var d);
/// Block-diagonal product: a holds `blocks` stacked (m x k) blocks, x holds
/// `blocks` stacked (k x B) blocks; block i of the result is a_i * x_i.
Var blockdiag_matmul(Var a, Var x, Index blocks);

/// W x + b.
Var affine(Var x, Var w, Var b);

/// Four-gate LSTM weights, gate order (input, forget, output, candidate).
struct LstmParams {
  Parameter wx;  // 4n x input
  Parameter wh;  // 4n x n
  Parameter b;   // 4n x 1
  LstmParams() = default;
  LstmParams(const std::string& prefix, Index input, Index hidden);
  Index hidden() const { return wh.data.cols(); }
  Index input() const { return wx.data.cols(); }
  void init(SeededRng& rng, double scale = 0.08);
  ParameterList parameters() { return {&wx, &wh, &b}; }
};

struct LstmState {
  Var h;
  Var c;
};

/// Gate nonlinearities given stacked pre-activations z (4n x B).
LstmState lstm_cell(Var z, Var c_prev);
LstmState lstm_step(Var x, const LstmState& prev, Var wx, Var wh, Var b);
LstmState lstm_step(Tape& tape, Var x, const LstmState& prev, LstmParams& p);

// ---------------------------------------------------------------------------
// Gradient verification

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  Index worst_index = -1;
  std::size_t coordinates = 0;
};

/// Compares analytic gradients of f against central differences over every
/// coordinate of every parameter.  Error per coordinate is
/// |analytic - numeric| / max(1, |numeric|).  f must be deterministic.
GradCheckReport finite_difference_check(const std::function<Var(Tape&)>& f,
                                        const ParameterList& params,
                                        double step = 1e-5);

/// Throws NumericError if any entry is NaN or infinite.
void require_finite(const Matrix& m, const std::string& what);

}  // namespace hsrl
