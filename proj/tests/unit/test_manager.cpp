#include <cmath>

#include "doctest.h"
#include "hsrl/manager.hpp"

using namespace hsrl;

namespace {

constexpr Index kDv = 4, kNh = 5, kNm = 3;
constexpr int kK = 3;

struct Inputs {
  Matrix vbar, v[3], h[3];
};

Inputs inputs(std::uint64_t seed, Index batch = 2) {
  SeededRng rng(seed);
  auto rnd = [&](Index r) {
    Matrix m(r, batch);
    for (Index i = 0; i < m.size(); ++i) m(i) = rng.normal();
    return m;
  };
  Inputs in;
  in.vbar = rnd(kDv);
  for (int l = 0; l < 3; ++l) {
    in.v[l] = rnd(kDv);
    in.h[l] = l == 0 ? Matrix::Zero(kNh, batch) : rnd(kNh);
  }
  return in;
}

template <typename P>
std::vector<ManagerStep> run(Tape& t, P& p, const Inputs& in) {
  ManagerState s = manager_init(t, p, t.constant(in.vbar));
  std::vector<ManagerStep> out;
  for (int l = 0; l < 3; ++l) {
    ManagerStep step = manager_step(t, p, s, t.constant(in.v[l]), t.constant(in.h[l]));
    s = step.state;
    out.push_back(step);
  }
  return out;
}

}  // namespace

TEST_CASE("zero parameters emit uniform topics at every step") {
  ManagerParams p(kDv, kNh, kNm, kK);
  Tape t;
  for (const ManagerStep& s : run(t, p, inputs(1))) {
    CHECK((s.g.value().array() - 1.0 / kK).abs().maxCoeff() == 0.0);
  }
  ManagerParams q(kDv, kNh, kNm, kK);
  Tape t2;
  ManagerState s0 = manager_init(t2, q, t2.constant(Matrix::Zero(kDv, 1)));
  ManagerStep first = manager_step(t2, q, s0, t2.constant(Matrix::Zero(kDv, 1)), t2.constant(Matrix::Zero(kNh, 1)));
  CHECK((first.g.value().array() == 1.0 / kK).all());
}

TEST_CASE("emitted distributions lie on the simplex; context is [v; s]") {
  ManagerParams p(kDv, kNh, kNm, kK);
  SeededRng rng(2);
  p.init(rng, 0.8);
  Tape t;
  const Inputs in = inputs(3);
  const auto steps = run(t, p, in);
  for (int l = 0; l < 3; ++l) {
    const Matrix& g = steps[l].g.value();
    for (Index b = 0; b < g.cols(); ++b) {
      CHECK(std::abs(g.col(b).sum() - 1.0) < 1e-12);
      CHECK((g.col(b).array() > 0.0).all());
    }
    const Matrix& c = steps[l].context.value();
    CHECK(c.rows() == kDv + kNm);
    CHECK(c.topRows(kDv) == in.v[l]);
    CHECK(c.bottomRows(kNm) == steps[l].state.lstm.h.value());
  }
}

TEST_CASE("deterministic, and sensitive to the Worker's final hidden state") {
  ManagerParams p(kDv, kNh, kNm, kK);
  SeededRng rng(4);
  p.init(rng, 0.5);
  const Inputs in = inputs(5);
  Tape a, b;
  const auto sa = run(a, p, in), sb = run(b, p, in);
  for (int l = 0; l < 3; ++l) CHECK(sa[l].g.value() == sb[l].g.value());

  Inputs moved = in;
  moved.h[1].array() += 0.3;
  Tape c;
  const auto sc = run(c, p, moved);
  CHECK(sc[0].g.value() == sa[0].g.value());
  CHECK((sc[1].g.value() - sa[1].g.value()).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("manager_nll: closed forms") {
  const std::vector<Vector> uniform(4, Vector::Constant(3, 1.0 / 3.0));
  const std::vector<int> any = {0, 2, 1, 1};
  CHECK(std::abs(manager_nll(uniform, any) - 4.0 * std::log(3.0)) < 1e-12);

  std::vector<Vector> onehot = {Vector::Unit(3, 2), Vector::Unit(3, 0)};
  CHECK(manager_nll(onehot, std::vector<int>{2, 0}) == 0.0);

  Vector g1(2), g2(2);
  g1 << 0.25, 0.75;
  g2 << 0.5, 0.5;
  const std::vector<Vector> gs = {g1, g2};
  const double expected = -std::log(0.75) - std::log(0.5);
  CHECK(std::abs(manager_nll(gs, std::vector<int>{1, 0}) - expected) < 1e-12);
  CHECK(std::abs(expected - 0.9808) < 1e-4);

  CHECK_THROWS_AS(manager_nll(gs, std::vector<int>{2, 0}), IndexError);
  CHECK_THROWS_AS(manager_nll(gs, std::vector<int>{1}), AlignmentError);
}

TEST_CASE("topic_log_likelihood agrees with the distribution it came from") {
  ManagerParams p(kDv, kNh, kNm, kK);
  SeededRng rng(6);
  p.init(rng, 1.0);
  Tape t;
  const auto steps = run(t, p, inputs(7));
  const std::vector<int> gold = {2, 0};
  const Matrix ll = topic_log_likelihood(steps[1].logits, gold).value();
  for (Index b = 0; b < 2; ++b) {
    CHECK(std::abs(ll(0, b) - std::log(steps[1].g.value()(gold[b], b))) < 1e-12);
  }
  CHECK_THROWS_AS(topic_log_likelihood(steps[1].logits, std::vector<int>{3, 0}), IndexError);
}

TEST_CASE("NLL gradients match finite differences") {
  ManagerParams p(kDv, kNh, kNm, kK);
  SeededRng rng(8);
  p.init(rng, 0.6);
  const Inputs in = inputs(9);
  const std::vector<std::vector<int>> gold = {{0, 2}, {1, 1}, {2, 0}};

  SUBCASE("first step, v_bar projection") {
    auto f = [&](Tape& t) {
      ManagerState s = manager_init(t, p, t.constant(in.vbar));
      ManagerStep st = manager_step(t, p, s, t.constant(in.v[0]), t.constant(in.h[0]));
      return scale(sum(topic_log_likelihood(st.logits, gold[0])), -1.0);
    };
    CHECK(finite_difference_check(f, {&p.vbar_w, &p.vbar_b}).max_rel_error < 1e-4);
  }
  SUBCASE("whole sequence, every parameter") {
    auto f = [&](Tape& t) {
      Var total;
      const auto steps = run(t, p, in);
      for (int l = 0; l < 3; ++l) {
        Var term = sum(topic_log_likelihood(steps[l].logits, gold[l]));
        total = total.valid() ? add(total, term) : term;
      }
      return scale(total, -1.0);
    };
    CHECK(finite_difference_check(f, p.parameters()).max_rel_error < 1e-4);
  }
}

TEST_CASE("dimension mismatches are reported") {
  ManagerParams p(kDv, kNh, kNm, kK);
  Tape t;
  CHECK_THROWS_AS(manager_init(t, p, t.constant(Matrix::Zero(kDv + 1, 1))), DimensionError);
  ManagerState s = manager_init(t, p, t.constant(Matrix::Zero(kDv, 1)));
  CHECK_THROWS_AS(manager_step(t, p, s, t.constant(Matrix::Zero(kDv, 1)), t.constant(Matrix::Zero(kNh - 1, 1))),
                  DimensionError);
}
