#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hsrl/datasets.hpp"

namespace hsrl {

/// K centroids in feature space; each centroid stands for one topic.
struct TopicModel {
  Matrix centroids;  // K x d_v, one centroid per row
  double inertia = 0.0;
  /// Inertia after every assignment pass, in order.
  std::vector<double> inertia_history;
  int iterations = 0;

  int topics() const { return static_cast<int>(centroids.rows()); }
  Index feature_dim() const { return centroids.cols(); }
};

/// Lloyd's algorithm from k-means++ seeds.  Stops when assignments stop
/// changing or after max_iter passes.  A cluster that empties is re-seeded at
/// the point farthest from its current centroid (lowest index on ties).
/// Runs `restarts` independent seedings and keeps the lowest final inertia
/// (earliest run on ties).
TopicModel kmeans_fit(std::span<const Vector> vectors, int k, std::uint64_t seed,
                      int max_iter = 100, int restarts = 10);

/// Nearest centroid by squared Euclidean distance; ties go to the lowest index.
int assign_topic(const TopicModel& model, const Vector& v);

/// Every slot feature of every record, in record-major order.
std::vector<Vector> slot_features(const Corpus& corpus);

/// Fills golden_topics[l] = assign_topic(features[l]) for every record.
void golden_topic_sequences(const TopicModel& model, Corpus& corpus);

/// {"K": .., "d_v": .., "centroids": [row-major values], "inertia": ..}
void save_topic_model(const TopicModel& model, const std::string& path);
TopicModel load_topic_model(const std::string& path);

}  // namespace hsrl
