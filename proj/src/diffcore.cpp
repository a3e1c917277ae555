#include "hsrl/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace hsrl {

std::string shape_string(const Matrix& m) {
  std::ostringstream os;
  os << "[" << m.rows() << "x" << m.cols() << "]";
  return os.str();
}

Parameter::Parameter(std::string name_, Index rows, Index cols)
    : name(std::move(name_)), data(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)) {}

void zero_grads(const ParameterList& params) {
  for (Parameter* p : params) p->zero_grad();
}

double grad_norm(const ParameterList& params) {
  double sq = 0.0;
  for (const Parameter* p : params) sq += p->grad.squaredNorm();
  return std::sqrt(sq);
}

std::size_t parameter_count(const ParameterList& params) {
  std::size_t n = 0;
  for (const Parameter* p : params) n += static_cast<std::size_t>(p->size());
  return n;
}

void require_finite(const Matrix& m, const std::string& what) {
  if (!m.allFinite()) throw NumericError(what + " contains a non-finite value");
}

// ---------------------------------------------------------------------------

namespace {
std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace

SeededRng::SeededRng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

double SeededRng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double SeededRng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::size_t SeededRng::below(std::size_t n) {
  if (n == 0) throw ConfigError("SeededRng::below called with n = 0");
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return static_cast<std::size_t>(x % bound);
}

std::size_t SeededRng::categorical(std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw NumericError("categorical draw needs positive finite total weight");
  }
  const double u = uniform() * total;
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    acc += weights[i];
    last_positive = i;
    if (u < acc) return i;
  }
  return last_positive;
}

SeededRng SeededRng::derive(std::uint64_t stream) const {
  return SeededRng(splitmix64(seed_ ^ splitmix64(stream)));
}

void init_uniform(Parameter& p, SeededRng& rng, double scale) {
  for (Index i = 0; i < p.data.size(); ++i) p.data.data()[i] = rng.uniform(-scale, scale);
  p.grad = Matrix::Zero(p.data.rows(), p.data.cols());
}

// ---------------------------------------------------------------------------

const Matrix& Var::value() const { return tape_->value(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) {
    throw DimensionError("scalar() on non-scalar node " + shape_string(v));
  }
  return v(0, 0);
}

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::param(Parameter& p) {
  if (!record_) return param(static_cast<const Parameter&>(p));
  if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var(this, it->second);
  Node n;
  n.value = p.data;
  n.param = &p;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size() - 1);
  param_ids_.emplace(&p, id);
  return Var(this, id);
}

Var Tape::param(const Parameter& p) {
  if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var(this, it->second);
  Var v = constant(p.data);
  param_ids_.emplace(&p, v.id());
  return v;
}

Var Tape::push(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  return push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
              std::move(backward));
}

Var Tape::push(Matrix value, std::span<const Var> inputs, Backward backward) {
  Node n;
  n.value = std::move(value);
  if (record_) {
    for (const Var& in : inputs) {
      if (in.tape_ != this) throw DimensionError("operands belong to different tapes");
      if (nodes_[in.id_].requires_grad) n.requires_grad = true;
    }
    if (n.requires_grad) n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::backward(Var root, double seed) {
  if (root.tape_ != this) throw DimensionError("backward root belongs to another tape");
  const Matrix& rv = nodes_[root.id_].value;
  if (rv.rows() != 1 || rv.cols() != 1) {
    throw DimensionError("backward root must be 1x1, got " + shape_string(rv));
  }
  require_finite(rv, "loss");
  if (!nodes_[root.id_].requires_grad) return;
  accumulate(root.id_, Matrix::Constant(1, 1, seed));
  for (int i = root.id_; i >= 0; --i) {
    if (nodes_[i].grad.size() == 0) continue;
    if (nodes_[i].backward) nodes_[i].backward(*this, i);
  }
  for (Node& n : nodes_) {
    if (n.param != nullptr && n.grad.size() != 0) n.param->grad += n.grad;
  }
}

// ---------------------------------------------------------------------------
// Ops

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                         shape_string(b));
  }
}

Matrix sigmoid_values(const Matrix& x) {
  return x.unaryExpr([](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner dimensions differ " + shape_string(av) + " * " +
                         shape_string(bv));
  }
  const int ia = a.id(), ib = b.id();
  return a.tape().push(av * bv, {a, b}, [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  const int ia = a.id(), ib = b.id();
  return a.tape().push(a.value() + b.value(), {a, b}, [ia, ib](Tape& t, int self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, t.grad(self));
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  const int ia = a.id(), ib = b.id();
  return a.tape().push(a.value() - b.value(), {a, b}, [ia, ib](Tape& t, int self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, -t.grad(self));
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  const int ia = a.id(), ib = b.id();
  return a.tape().push(a.value().cwiseProduct(b.value()), {a, b}, [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    t.accumulate(ia, g.cwiseProduct(t.value(ib)));
    t.accumulate(ib, g.cwiseProduct(t.value(ia)));
  });
}

Var scale(Var a, double s) {
  const int ia = a.id();
  return a.tape().push(a.value() * s, {a},
                       [ia, s](Tape& t, int self) { t.accumulate(ia, t.grad(self) * s); });
}

Var add_bias(Var x, Var b) {
  const Matrix& xv = x.value();
  const Matrix& bv = b.value();
  if (bv.cols() != 1 || bv.rows() != xv.rows()) {
    throw DimensionError("add_bias: bias " + shape_string(bv) + " does not fit " +
                         shape_string(xv));
  }
  const int ix = x.id(), ib = b.id();
  Matrix out = xv.colwise() + bv.col(0);
  return x.tape().push(std::move(out), {x, b}, [ix, ib](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    t.accumulate(ix, g);
    t.accumulate(ib, g.rowwise().sum());
  });
}

Var sigmoid(Var a) {
  const int ia = a.id();
  return a.tape().push(sigmoid_values(a.value()), {a}, [ia](Tape& t, int self) {
    const Matrix& y = t.value(self);
    t.accumulate(ia, t.grad(self).cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
  });
}

Var tanh(Var a) {
  const int ia = a.id();
  return a.tape().push(a.value().array().tanh().matrix(), {a}, [ia](Tape& t, int self) {
    const Matrix& y = t.value(self);
    t.accumulate(ia, t.grad(self).cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) {
      throw DimensionError("concat_rows: column mismatch " + shape_string(parts.front().value()) +
                           " vs " + shape_string(p.value()));
    }
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<int> ids;
  std::vector<Index> offsets;
  Index off = 0;
  for (const Var& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    ids.push_back(p.id());
    offsets.push_back(off);
    off += p.rows();
  }
  return parts.front().tape().push(std::move(out), parts, [ids, offsets](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      t.accumulate(ids[i], g.middleRows(offsets[i], t.value(ids[i]).rows()));
    }
  });
}

Var slice_rows(Var a, Index start, Index count) {
  const Matrix& av = a.value();
  if (start < 0 || count < 0 || start + count > av.rows()) {
    throw DimensionError("slice_rows: rows [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of " + shape_string(av));
  }
  const int ia = a.id();
  return a.tape().push(av.middleRows(start, count), {a}, [ia, start, count](Tape& t, int self) {
    if (!t.requires_grad(ia)) return;
    Matrix g = Matrix::Zero(t.value(ia).rows(), t.value(ia).cols());
    g.middleRows(start, count) = t.grad(self);
    t.accumulate(ia, g);
  });
}

Var gather_rows_as_cols(Var table, std::span<const int> ids) {
  const Matrix& tv = table.value();
  Matrix out(tv.cols(), static_cast<Index>(ids.size()));
  for (std::size_t b = 0; b < ids.size(); ++b) {
    if (ids[b] < 0 || ids[b] >= tv.rows()) {
      throw IndexError("gather: id " + std::to_string(ids[b]) + " outside table " +
                       shape_string(tv));
    }
    out.col(static_cast<Index>(b)) = tv.row(ids[b]).transpose();
  }
  const int it = table.id();
  std::vector<int> idv(ids.begin(), ids.end());
  return table.tape().push(std::move(out), {table}, [it, idv](Tape& t, int self) {
    if (!t.requires_grad(it)) return;
    const Matrix& g = t.grad(self);
    Matrix acc = Matrix::Zero(t.value(it).rows(), t.value(it).cols());
    for (std::size_t b = 0; b < idv.size(); ++b) {
      acc.row(idv[b]) += g.col(static_cast<Index>(b)).transpose();
    }
    t.accumulate(it, acc);
  });
}

Var softmax(Var a) {
  const Matrix& av = a.value();
  if (av.size() == 0) throw DimensionError("softmax: empty input");
  Matrix out(av.rows(), av.cols());
  for (Index b = 0; b < av.cols(); ++b) {
    const double m = av.col(b).maxCoeff();
    out.col(b) = (av.col(b).array() - m).exp().matrix();
    out.col(b) /= out.col(b).sum();
  }
  const int ia = a.id();
  return a.tape().push(std::move(out), {a}, [ia](Tape& t, int self) {
    const Matrix& y = t.value(self);
    const Matrix& g = t.grad(self);
    Matrix ga(y.rows(), y.cols());
    for (Index b = 0; b < y.cols(); ++b) {
      const double dot = g.col(b).dot(y.col(b));
      ga.col(b) = y.col(b).cwiseProduct((g.col(b).array() - dot).matrix());
    }
    t.accumulate(ia, ga);
  });
}

Var log_softmax(Var a) {
  const Matrix& av = a.value();
  if (av.size() == 0) throw DimensionError("log_softmax: empty input");
  Matrix out(av.rows(), av.cols());
  for (Index b = 0; b < av.cols(); ++b) {
    const double m = av.col(b).maxCoeff();
    const double lse = m + std::log((av.col(b).array() - m).exp().sum());
    out.col(b) = (av.col(b).array() - lse).matrix();
  }
  const int ia = a.id();
  return a.tape().push(std::move(out), {a}, [ia](Tape& t, int self) {
    const Matrix& y = t.value(self);
    const Matrix& g = t.grad(self);
    Matrix ga(y.rows(), y.cols());
    for (Index b = 0; b < y.cols(); ++b) {
      const double gs = g.col(b).sum();
      ga.col(b) = g.col(b) - (y.col(b).array().exp() * gs).matrix();
    }
    t.accumulate(ia, ga);
  });
}

Var pick(Var a, std::span<const int> ids) {
  const Matrix& av = a.value();
  if (static_cast<Index>(ids.size()) != av.cols()) {
    throw DimensionError("pick: " + std::to_string(ids.size()) + " ids for " + shape_string(av));
  }
  Matrix out(1, av.cols());
  for (Index b = 0; b < av.cols(); ++b) {
    const int id = ids[static_cast<std::size_t>(b)];
    if (id < 0 || id >= av.rows()) {
      throw IndexError("pick: id " + std::to_string(id) + " outside " + shape_string(av));
    }
    out(0, b) = av(id, b);
  }
  const int ia = a.id();
  std::vector<int> idv(ids.begin(), ids.end());
  return a.tape().push(std::move(out), {a}, [ia, idv](Tape& t, int self) {
    if (!t.requires_grad(ia)) return;
    const Matrix& g = t.grad(self);
    Matrix ga = Matrix::Zero(t.value(ia).rows(), t.value(ia).cols());
    for (std::size_t b = 0; b < idv.size(); ++b) {
      ga(idv[b], static_cast<Index>(b)) = g(0, static_cast<Index>(b));
    }
    t.accumulate(ia, ga);
  });
}

Var blend_cols(std::span<const double> mask, Var new_, Var old) {
  require_same_shape(new_.value(), old.value(), "blend_cols");
  if (static_cast<Index>(mask.size()) != new_.cols()) {
    throw DimensionError("blend_cols: mask length does not match " + shape_string(new_.value()));
  }
  Matrix out = old.value();
  std::vector<char> take(mask.size());
  for (std::size_t b = 0; b < mask.size(); ++b) {
    take[b] = mask[b] != 0.0;
    if (take[b]) out.col(static_cast<Index>(b)) = new_.value().col(static_cast<Index>(b));
  }
  const int in = new_.id(), io = old.id();
  return new_.tape().push(std::move(out), {new_, old}, [in, io, take](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Matrix gn = Matrix::Zero(g.rows(), g.cols());
    Matrix go = Matrix::Zero(g.rows(), g.cols());
    for (std::size_t b = 0; b < take.size(); ++b) {
      const Index c = static_cast<Index>(b);
      if (take[b]) {
        gn.col(c) = g.col(c);
      } else {
        go.col(c) = g.col(c);
      }
    }
    t.accumulate(in, gn);
    t.accumulate(io, go);
  });
}

Var sum(Var a) {
  const int ia = a.id();
  return a.tape().push(Matrix::Constant(1, 1, a.value().sum()), {a}, [ia](Tape& t, int self) {
    const double g = t.grad(self)(0, 0);
    t.accumulate(ia, Matrix::Constant(t.value(ia).rows(), t.value(ia).cols(), g));
  });
}

Var weighted_sum(Var a, std::span<const double> weights) {
  const Matrix& av = a.value();
  if (av.rows() != 1 || av.cols() != static_cast<Index>(weights.size())) {
    throw DimensionError("weighted_sum: " + std::to_string(weights.size()) + " weights for " +
                         shape_string(av));
  }
  Eigen::Map<const Eigen::RowVectorXd> w(weights.data(), static_cast<Index>(weights.size()));
  const double total = av.row(0).dot(w);
  const int ia = a.id();
  Eigen::RowVectorXd wv = w;
  return a.tape().push(Matrix::Constant(1, 1, total), {a}, [ia, wv](Tape& t, int self) {
    t.accumulate(ia, wv * t.grad(self)(0, 0));
  });
}

Var scale_rows(Var a, Var d) {
  const Matrix& av = a.value();
  const Matrix& dv = d.value();
  if (dv.cols() != 1 || dv.rows() != av.rows()) {
    throw DimensionError("scale_rows: scale " + shape_string(dv) + " does not fit " +
                         shape_string(av));
  }
  const int ia = a.id(), id = d.id();
  return a.tape().push(dv.col(0).asDiagonal() * av, {a, d}, [ia, id](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.accumulate(ia, t.value(id).col(0).asDiagonal() * g);
    if (t.requires_grad(id)) t.accumulate(id, g.cwiseProduct(t.value(ia)).rowwise().sum());
  });
}

Var blockdiag_matmul(Var a, Var x, Index blocks) {
  const Matrix& av = a.value();
  const Matrix& xv = x.value();
  if (blocks <= 0 || av.rows() % blocks != 0 || xv.rows() != blocks * av.cols()) {
    throw DimensionError("blockdiag_matmul: " + std::to_string(blocks) + " blocks of " +
                         shape_string(av) + " cannot multiply " + shape_string(xv));
  }
  const Index m = av.rows() / blocks;
  const Index k = av.cols();
  Matrix out(blocks * m, xv.cols());
  for (Index i = 0; i < blocks; ++i) {
    out.middleRows(i * m, m).noalias() = av.middleRows(i * m, m) * xv.middleRows(i * k, k);
  }
  const int ia = a.id(), ix = x.id();
  return a.tape().push(std::move(out), {a, x}, [ia, ix, blocks, m, k](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    const Matrix& a_ = t.value(ia);
    const Matrix& x_ = t.value(ix);
    if (t.requires_grad(ia)) {
      Matrix ga(a_.rows(), a_.cols());
      for (Index i = 0; i < blocks; ++i) {
        ga.middleRows(i * m, m).noalias() =
            g.middleRows(i * m, m) * x_.middleRows(i * k, k).transpose();
      }
      t.accumulate(ia, ga);
    }
    if (t.requires_grad(ix)) {
      Matrix gx(x_.rows(), x_.cols());
      for (Index i = 0; i < blocks; ++i) {
        gx.middleRows(i * k, k).noalias() =
            a_.middleRows(i * m, m).transpose() * g.middleRows(i * m, m);
      }
      t.accumulate(ix, gx);
    }
  });
}

Var affine(Var x, Var w, Var b) { return add_bias(matmul(w, x), b); }

// ---------------------------------------------------------------------------
// LSTM

LstmParams::LstmParams(const std::string& prefix, Index input, Index hidden)
    : wx(prefix + ".wx", 4 * hidden, input),
      wh(prefix + ".wh", 4 * hidden, hidden),
      b(prefix + ".b", 4 * hidden, 1) {}

void LstmParams::init(SeededRng& rng, double scale_) {
  init_uniform(wx, rng, scale_);
  init_uniform(wh, rng, scale_);
  init_uniform(b, rng, scale_);
  const Index n = hidden();
  b.data.middleRows(n, n).setOnes();
}

LstmState lstm_cell(Var z, Var c_prev) {
  const Matrix& zv = z.value();
  const Matrix& cp = c_prev.value();
  const Index n = cp.rows();
  if (zv.rows() != 4 * n || zv.cols() != cp.cols()) {
    throw DimensionError("lstm_cell: gates " + shape_string(zv) + " vs cell " + shape_string(cp));
  }
  Tape& tape = z.tape();
  const Matrix ig = sigmoid_values(zv.middleRows(0, n));
  const Matrix fg = sigmoid_values(zv.middleRows(n, n));
  const Matrix og = sigmoid_values(zv.middleRows(2 * n, n));
  const Matrix ug = zv.middleRows(3 * n, n).array().tanh().matrix();
  Matrix c = fg.cwiseProduct(cp) + ig.cwiseProduct(ug);
  const int iz = z.id(), icp = c_prev.id();
  Var c_var = tape.push(std::move(c), {z, c_prev}, [iz, icp, n](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    const Matrix& zz = t.value(iz);
    const Matrix i_ = sigmoid_values(zz.middleRows(0, n));
    const Matrix f_ = sigmoid_values(zz.middleRows(n, n));
    const Matrix u_ = zz.middleRows(3 * n, n).array().tanh().matrix();
    if (t.requires_grad(iz)) {
      Matrix gz = Matrix::Zero(zz.rows(), zz.cols());
      gz.middleRows(0, n) = (g.array() * u_.array() * i_.array() * (1.0 - i_.array())).matrix();
      gz.middleRows(n, n) =
          (g.array() * t.value(icp).array() * f_.array() * (1.0 - f_.array())).matrix();
      gz.middleRows(3 * n, n) = (g.array() * i_.array() * (1.0 - u_.array().square())).matrix();
      t.accumulate(iz, gz);
    }
    t.accumulate(icp, g.cwiseProduct(f_));
  });
  const Matrix tc = c_var.value().array().tanh().matrix();
  Matrix h = og.cwiseProduct(tc);
  const int ic = c_var.id();
  Var h_var = tape.push(std::move(h), {z, c_var}, [iz, ic, n](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    const Matrix& zz = t.value(iz);
    const Matrix o_ = sigmoid_values(zz.middleRows(2 * n, n));
    const Matrix tc_ = t.value(ic).array().tanh().matrix();
    if (t.requires_grad(iz)) {
      Matrix gz = Matrix::Zero(zz.rows(), zz.cols());
      gz.middleRows(2 * n, n) =
          (g.array() * tc_.array() * o_.array() * (1.0 - o_.array())).matrix();
      t.accumulate(iz, gz);
    }
    t.accumulate(ic, (g.array() * o_.array() * (1.0 - tc_.array().square())).matrix());
  });
  return {h_var, c_var};
}

LstmState lstm_step(Var x, const LstmState& prev, Var wx, Var wh, Var b) {
  Var z = add_bias(add(matmul(wx, x), matmul(wh, prev.h)), b);
  return lstm_cell(z, prev.c);
}

LstmState lstm_step(Tape& tape, Var x, const LstmState& prev, LstmParams& p) {
  return lstm_step(x, prev, tape.param(p.wx), tape.param(p.wh), tape.param(p.b));
}

// ---------------------------------------------------------------------------

GradCheckReport finite_difference_check(const std::function<Var(Tape&)>& f,
                                        const ParameterList& params, double step) {
  if (!(step > 0.0)) throw ConfigError("finite difference step must be positive");
  zero_grads(params);
  {
    Tape tape;
    Var loss = f(tape);
    require_finite(loss.value(), "finite_difference_check objective");
    tape.backward(loss);
  }
  auto eval = [&]() {
    Tape tape(false);
    const double v = f(tape).scalar();
    if (!std::isfinite(v)) throw NumericError("finite_difference_check objective is non-finite");
    return v;
  };
  GradCheckReport report;
  for (Parameter* p : params) {
    for (Index i = 0; i < p->data.size(); ++i) {
      double& x = p->data.data()[i];
      const double saved = x;
      x = saved + step;
      const double up = eval();
      x = saved - step;
      const double down = eval();
      x = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = p->grad.data()[i];
      const double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
      ++report.coordinates;
      if (report.worst_index < 0 || err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_parameter = p->name;
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace hsrl
