#pragma once

#include <vector>

#include "hsrl/training.hpp"

namespace fixture {

using namespace hsrl;

/// Small synthetic corpus; golden topics are the construction blobs.
inline Corpus tiny_corpus(std::size_t records = 6, std::size_t slots = 3, std::uint64_t seed = 3) {
  SynthConfig sc;
  sc.num_records = records;
  sc.slots = slots;
  sc.feature_dim = 4;
  sc.topics = 2;
  sc.vocab_per_topic = 3;
  sc.min_len = 3;
  sc.max_len = 5;
  sc.seed = seed;
  return synthesize_corpus(sc);
}

inline TrainConfig tiny_config(const Corpus& c) {
  TrainConfig cfg;
  cfg.dims.feature_dim = c.feature_dim();
  cfg.dims.worker_hidden = 6;
  cfg.dims.embed = 5;
  cfg.dims.factors = 4;
  cfg.dims.manager_hidden = 5;
  cfg.dims.topics = 2;
  cfg.batch_size = 3;
  cfg.epochs = 4;
  cfg.manager_epochs = 2;
  cfg.warmup_epochs = 1;
  cfg.ramp_epochs = 2;
  cfg.t_max = 8;
  return cfg;
}

inline ModelDims dims_of(const Corpus& c, const TrainConfig& cfg) {
  ModelDims d = cfg.dims;
  d.vocab = static_cast<Index>(c.vocab.size());
  d.feature_dim = c.feature_dim();
  return d;
}

inline std::vector<Matrix> snapshot(const ParameterList& params) {
  std::vector<Matrix> out;
  for (const Parameter* p : params) out.push_back(p->data);
  return out;
}

/// Exact equality of every entry.
inline bool bit_equal(const std::vector<Matrix>& a, const std::vector<Matrix>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].rows() != b[i].rows() || a[i].cols() != b[i].cols()) return false;
    if (!(a[i].array() == b[i].array()).all()) return false;
  }
  return true;
}

inline bool bit_equal(HsrlModel& a, HsrlModel& b) {
  return bit_equal(snapshot(a.parameters()), snapshot(b.parameters()));
}

inline StoryBatch whole_batch(const Corpus& c) {
  std::vector<const StoryRecord*> members;
  for (const StoryRecord& r : c.records) members.push_back(&r);
  return StoryBatch(std::move(members));
}

}  // namespace fixture
