#include "hsrl/topics.hpp"

#include <fstream>
#include <limits>

#include "json.hpp"

namespace hsrl {

namespace {

double sq_dist(const Vector& a, const Matrix& centroids, Index k) {
  return (a.transpose() - centroids.row(k)).squaredNorm();
}

int nearest(const Matrix& centroids, const Vector& v, double* dist = nullptr) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Index k = 0; k < centroids.rows(); ++k) {
    const double d = sq_dist(v, centroids, k);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(k);
    }
  }
  if (dist) *dist = best_d;
  return best;
}

Matrix kmeanspp_seed(std::span<const Vector> xs, int k, SeededRng& rng) {
  const Index dv = xs.front().size();
  Matrix centroids(k, dv);
  std::vector<char> chosen(xs.size(), 0);
  std::size_t first = rng.below(xs.size());
  centroids.row(0) = xs[first].transpose();
  chosen[first] = 1;
  std::vector<double> d2(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) d2[i] = sq_dist(xs[i], centroids, 0);
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (double d : d2) total += d;
    std::size_t pick = 0;
    if (total > 0.0) {
      pick = rng.categorical(d2);
    } else {
      // Every point coincides with a centroid: take the first unused one.
      while (pick < xs.size() && chosen[pick]) ++pick;
      if (pick == xs.size()) pick = 0;
    }
    chosen[pick] = 1;
    centroids.row(c) = xs[pick].transpose();
    for (std::size_t i = 0; i < xs.size(); ++i) d2[i] = std::min(d2[i], sq_dist(xs[i], centroids, c));
  }
  return centroids;
}

TopicModel lloyd(std::span<const Vector> vectors, int k, SeededRng& rng, int max_iter);

}  // namespace

TopicModel kmeans_fit(std::span<const Vector> vectors, int k, std::uint64_t seed, int max_iter, int restarts) {
  if (k < 2) throw ConfigError("kmeans_fit: K must be at least 2");
  if (vectors.size() < static_cast<std::size_t>(k)) {
    throw ConfigError("kmeans_fit: " + std::to_string(vectors.size()) + " points for K=" +
                      std::to_string(k));
  }
  if (max_iter < 1) throw ConfigError("kmeans_fit: max_iter must be positive");
  if (restarts < 1) throw ConfigError("kmeans_fit: restarts must be positive");
  const Index dv = vectors.front().size();
  for (const Vector& v : vectors) {
    if (v.size() != dv) throw DimensionError("kmeans_fit: vectors of differing dimension");
  }

  const SeededRng root(seed);
  TopicModel best;
  for (int r = 0; r < restarts; ++r) {
    SeededRng rng = r == 0 ? root : root.derive(static_cast<std::uint64_t>(r));
    TopicModel m = lloyd(vectors, k, rng, max_iter);
    if (r == 0 || m.inertia < best.inertia) best = std::move(m);
  }
  return best;
}

namespace {

TopicModel lloyd(std::span<const Vector> vectors, int k, SeededRng& rng, int max_iter) {
  const Index dv = vectors.front().size();
  TopicModel model;
  model.centroids = kmeanspp_seed(vectors, k, rng);
  std::vector<int> assign(vectors.size(), -1);
  for (int iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    double inertia = 0.0;
    for (std::size_t i = 0; i < vectors.size(); ++i) {
      double d = 0.0;
      const int a = nearest(model.centroids, vectors[i], &d);
      inertia += d;
      if (a != assign[i]) {
        assign[i] = a;
        changed = true;
      }
    }
    model.inertia = inertia;
    model.inertia_history.push_back(inertia);
    model.iterations = iter + 1;
    if (!changed && iter > 0) break;

    Matrix sums = Matrix::Zero(k, dv);
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < vectors.size(); ++i) {
      sums.row(assign[i]) += vectors[i].transpose();
      ++counts[static_cast<std::size_t>(assign[i])];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        model.centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
        continue;
      }
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < vectors.size(); ++i) {
        const double d = sq_dist(vectors[i], model.centroids, assign[i]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      model.centroids.row(c) = vectors[far].transpose();
    }
  }
  return model;
}

}  // namespace

int assign_topic(const TopicModel& model, const Vector& v) {
  if (v.size() != model.feature_dim()) {
    throw DimensionError("assign_topic: vector of size " + std::to_string(v.size()) +
                         " against centroids " + shape_string(model.centroids));
  }
  return nearest(model.centroids, v);
}

std::vector<Vector> slot_features(const Corpus& corpus) {
  std::vector<Vector> out;
  for (const StoryRecord& r : corpus.records) out.insert(out.end(), r.features.begin(), r.features.end());
  return out;
}

void golden_topic_sequences(const TopicModel& model, Corpus& corpus) {
  for (StoryRecord& r : corpus.records) {
    std::vector<int> topics;
    topics.reserve(r.features.size());
    for (const Vector& v : r.features) topics.push_back(assign_topic(model, v));
    r.golden_topics = std::move(topics);
  }
}

void save_topic_model(const TopicModel& model, const std::string& path) {
  nlohmann::json j;
  j["K"] = model.topics();
  j["d_v"] = model.feature_dim();
  std::vector<double> rows;
  for (Index k = 0; k < model.centroids.rows(); ++k) {
    for (Index d = 0; d < model.centroids.cols(); ++d) rows.push_back(model.centroids(k, d));
  }
  j["centroids"] = rows;
  j["inertia"] = model.inertia;
  j["iterations"] = model.iterations;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write topic model " + path);
  out << j.dump(2) << '\n';
}

TopicModel load_topic_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open topic model " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  TopicModel model;
  try {
    const int k = j.at("K").get<int>();
    const Index dv = j.at("d_v").get<Index>();
    const auto rows = j.at("centroids").get<std::vector<double>>();
    if (k < 2 || dv < 1 || rows.size() != static_cast<std::size_t>(k * dv)) {
      throw SchemaError(path + ": centroid payload does not match K x d_v");
    }
    model.centroids.resize(k, dv);
    for (Index r = 0; r < k; ++r) {
      for (Index d = 0; d < dv; ++d) model.centroids(r, d) = rows[static_cast<std::size_t>(r * dv + d)];
    }
    model.inertia = j.value("inertia", 0.0);
    model.iterations = j.value("iterations", 0);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return model;
}

}  // namespace hsrl
