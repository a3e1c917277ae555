#include <filesystem>

#include "doctest.h"
#include "hsrl/topics.hpp"
#include "oracles.hpp"

using namespace hsrl;

namespace {

Vector v1(double x) { return Vector::Constant(1, x); }

std::vector<Vector> random_points(std::size_t m, Index d, std::uint64_t seed) {
  SeededRng rng(seed);
  std::vector<Vector> out(m, Vector(d));
  for (Vector& v : out) {
    for (Index i = 0; i < d; ++i) v(i) = rng.normal() * 3.0;
  }
  return out;
}

}  // namespace

TEST_CASE("kmeans_fit: m = K distinct points are their own centroids") {
  const std::vector<Vector> pts = {v1(-2.0), v1(5.0), v1(0.5)};
  const TopicModel m = kmeans_fit(pts, 3, 1);
  CHECK(m.inertia == 0.0);
  std::vector<double> c = {m.centroids(0, 0), m.centroids(1, 0), m.centroids(2, 0)};
  std::sort(c.begin(), c.end());
  CHECK(c == std::vector<double>{-2.0, 0.5, 5.0});
}

TEST_CASE("kmeans_fit: two 1-D blobs") {
  const std::vector<Vector> pts = {v1(0.0), v1(0.1), v1(10.0), v1(10.1)};
  // Oracle: the best of all 2-way splits of the sorted points.
  double best = 1e300, lo = 0.0, hi = 0.0;
  for (unsigned mask = 1; mask < 15; ++mask) {
    double s[2] = {0, 0}, n[2] = {0, 0};
    for (unsigned i = 0; i < 4; ++i) {
      s[(mask >> i) & 1] += pts[i](0);
      n[(mask >> i) & 1] += 1;
    }
    double cost = 0.0;
    for (unsigned i = 0; i < 4; ++i) {
      const unsigned k = (mask >> i) & 1;
      cost += std::pow(pts[i](0) - s[k] / n[k], 2);
    }
    if (cost < best) {
      best = cost;
      lo = std::min(s[0] / n[0], s[1] / n[1]);
      hi = std::max(s[0] / n[0], s[1] / n[1]);
    }
  }
  const TopicModel m = kmeans_fit(pts, 2, 7);
  const double a = std::min(m.centroids(0, 0), m.centroids(1, 0));
  const double b = std::max(m.centroids(0, 0), m.centroids(1, 0));
  CHECK(std::abs(a - lo) < 1e-12);
  CHECK(std::abs(b - hi) < 1e-12);
  CHECK(std::abs(a - 0.05) < 1e-12);
  CHECK(std::abs(b - 10.05) < 1e-12);
  CHECK(std::abs(m.inertia - best) < 1e-12);
}

TEST_CASE("kmeans_fit: inertia never increases") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const TopicModel m = kmeans_fit(random_points(200, 3, seed), 5, seed, 100);
    REQUIRE(!m.inertia_history.empty());
    for (std::size_t i = 1; i < m.inertia_history.size(); ++i) {
      CHECK(m.inertia_history[i] <= m.inertia_history[i - 1] + 1e-9);
    }
    CHECK(m.inertia >= 0.0);
    CHECK(m.centroids.allFinite());
  }
}

TEST_CASE("kmeans_fit: deterministic and validated") {
  const auto pts = random_points(50, 2, 3);
  const TopicModel a = kmeans_fit(pts, 4, 9), b = kmeans_fit(pts, 4, 9);
  CHECK(a.centroids == b.centroids);
  CHECK_THROWS_AS(kmeans_fit(random_points(3, 2, 1), 4, 1), ConfigError);
  CHECK_THROWS_AS(kmeans_fit(pts, 1, 1), ConfigError);
  CHECK_THROWS_AS(kmeans_fit(pts, 4, 9, 100, 0), ConfigError);
}

TEST_CASE("kmeans_fit: restarts keep the best of the single runs") {
  const auto pts = random_points(120, 3, 4);
  const TopicModel many = kmeans_fit(pts, 6, 11, 100, 8);
  const TopicModel one = kmeans_fit(pts, 6, 11, 100, 1);
  CHECK(many.inertia <= one.inertia);
  // More restarts never hurt: the first runs are shared.
  for (int r = 1; r <= 8; ++r) CHECK(many.inertia <= kmeans_fit(pts, 6, 11, 100, r).inertia);
}

TEST_CASE("assign_topic: zero distance, ties, brute force") {
  TopicModel m;
  m.centroids.resize(4, 2);
  m.centroids << 0, 0, 1, 0, -1, 0, 5, 5;
  Vector c3(2);
  c3 << 5, 5;
  CHECK(assign_topic(m, c3) == 3);
  Vector mid(2);
  mid << 0, 0;
  m.centroids.row(0) << 9, 9;
  CHECK(assign_topic(m, mid) == 1);  // equidistant from 1 and 2
  CHECK_THROWS_AS(assign_topic(m, Vector::Zero(3)), DimensionError);

  SeededRng rng(4);
  const TopicModel fit = kmeans_fit(random_points(100, 3, 8), 6, 2);
  for (int q = 0; q < 1000; ++q) {
    Vector v(3);
    for (Index i = 0; i < 3; ++i) v(i) = rng.normal() * 4.0;
    int best = 0;
    double best_d = 1e300;
    for (int k = 0; k < fit.topics(); ++k) {
      double d = 0.0;
      for (Index i = 0; i < 3; ++i) d += std::pow(v(i) - fit.centroids(k, i), 2);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    CHECK(assign_topic(fit, v) == best);
  }
}

TEST_CASE("golden_topic_sequences: exact centroids and idempotence") {
  SynthConfig sc;
  sc.num_records = 40;
  Corpus c = synthesize_corpus(sc);
  const TopicModel m = kmeans_fit(slot_features(c), sc.topics, 5);

  Corpus at_centroids = c;
  for (StoryRecord& r : at_centroids.records) {
    for (std::size_t l = 0; l < r.slots(); ++l) r.features[l] = m.centroids.row(static_cast<Index>(l % 4)).transpose();
  }
  golden_topic_sequences(m, at_centroids);
  for (const StoryRecord& r : at_centroids.records) {
    for (std::size_t l = 0; l < r.slots(); ++l) CHECK((*r.golden_topics)[l] == static_cast<int>(l % 4));
  }

  golden_topic_sequences(m, c);
  const Corpus once = c;
  golden_topic_sequences(m, c);
  CHECK(c.records == once.records);
}

TEST_CASE("golden topics recover the synthetic blobs") {
  SynthConfig sc;
  sc.num_records = 250;
  sc.topics = 4;
  sc.separation = 10.0;
  Corpus c = synthesize_corpus(sc);
  std::vector<int> truth;
  for (const StoryRecord& r : c.records) truth.insert(truth.end(), r.golden_topics->begin(), r.golden_topics->end());
  const TopicModel m = kmeans_fit(slot_features(c), 4, 1);
  golden_topic_sequences(m, c);
  std::vector<int> found;
  for (const StoryRecord& r : c.records) found.insert(found.end(), r.golden_topics->begin(), r.golden_topics->end());
  CHECK(oracle::best_permutation_agreement(found, truth, 4) >= 0.99);
}

TEST_CASE("topic model JSON round trip") {
  const TopicModel m = kmeans_fit(random_points(30, 3, 2), 3, 4);
  const auto p = std::filesystem::temp_directory_path() / "hsrl_topic_model.json";
  save_topic_model(m, p.string());
  const TopicModel back = load_topic_model(p.string());
  CHECK(back.centroids == m.centroids);
  CHECK(back.inertia == m.inertia);
}
