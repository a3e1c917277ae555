#include "hsrl/evalgen.hpp"

#include <fstream>
#include <numeric>
#include <set>

namespace hsrl {

using nlohmann::json;

std::vector<Tokens> GenerationTrace::sentences() const {
  std::vector<Tokens> out;
  out.reserve(slots.size());
  for (const SlotTrace& s : slots) out.push_back(s.tokens);
  return out;
}

std::vector<GenerationTrace> generate_stories(const HsrlModel& model,
                                              std::span<const StoryRecord> records,
                                              const GenerateOptions& options) {
  if (options.batch == 0) throw ConfigError("generate: batch must be positive");
  const TopicFeed feed = options.feed.value_or(model.policy.feed);
  if (feed == TopicFeed::Golden) {
    for (const StoryRecord& r : records) {
      if (!r.golden_topics) throw ConfigError("generate: golden topic feed needs golden topics");
    }
  }
  const SeededRng root(options.seed);
  SeededRng sample_rng = root.derive(11);
  SeededRng topic_rng = root.derive(12);
  const auto K = static_cast<std::size_t>(model.worker.topics());

  // Random topics are drawn record by record so they do not depend on batching.
  std::vector<std::vector<int>> random_ids;
  if (feed == TopicFeed::Random) {
    for (const StoryRecord& r : records) {
      std::vector<int> ids;
      for (std::size_t l = 0; l < r.slots(); ++l) ids.push_back(static_cast<int>(topic_rng.below(K)));
      random_ids.push_back(std::move(ids));
    }
  }

  std::vector<GenerationTrace> out;
  out.reserve(records.size());
  for (std::size_t start = 0; start < records.size(); start += options.batch) {
    const std::size_t end = std::min(records.size(), start + options.batch);
    std::vector<const StoryRecord*> members;
    for (std::size_t i = start; i < end; ++i) members.push_back(&records[i]);
    StoryBatch batch(std::move(members));

    std::vector<std::vector<int>> chunk_ids;
    if (feed == TopicFeed::Random) {
      chunk_ids.assign(batch.slots(), std::vector<int>(batch.size()));
      for (std::size_t b = 0; b < batch.size(); ++b) {
        for (std::size_t l = 0; l < batch.slots(); ++l) chunk_ids[l][b] = random_ids[start + b][l];
      }
    }
    StoryOptions o;
    o.feed = feed;
    o.mode = options.mode == WorkerMode::TeacherForced ? WorkerMode::Greedy : options.mode;
    o.manager_reads_worker = model.policy.manager_reads_worker;
    o.random_topics = feed == TopicFeed::Random ? &chunk_ids : nullptr;
    o.rng = &sample_rng;
    o.t_max = options.t_max;
    Tape tape(false);
    const StoryPass pass = run_story(tape, model, batch, o);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      GenerationTrace trace;
      trace.manager_invoked = pass.manager_ran;
      for (const SlotPass& s : pass.slots) {
        const auto col = static_cast<Index>(b);
        SlotTrace st;
        st.g.assign(s.g.col(col).data(), s.g.col(col).data() + s.g.rows());
        st.topic = s.topic[b];
        st.tokens = s.tokens[b];
        st.token_logp = s.token_logp[b];
        st.final_h.assign(s.final_h.col(col).data(), s.final_h.col(col).data() + s.final_h.rows());
        trace.slots.push_back(std::move(st));
      }
      out.push_back(std::move(trace));
    }
  }
  return out;
}

GenerationTrace generate_story(const HsrlModel& model, const StoryRecord& record,
                               const GenerateOptions& options) {
  return generate_stories(model, std::span<const StoryRecord>(&record, 1), options).front();
}

// ---------------------------------------------------------------------------

double distinct_n(const std::vector<std::vector<Tokens>>& stories, int n) {
  std::set<Tokens> unique;
  std::size_t total = 0;
  for (const auto& story : stories) {
    for (const Tokens& raw : story) {
      const Tokens s = strip_special(raw);
      for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= s.size(); ++i) {
        unique.emplace(s.begin() + static_cast<std::ptrdiff_t>(i),
                       s.begin() + static_cast<std::ptrdiff_t>(i) + n);
        ++total;
      }
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(unique.size()) / static_cast<double>(total);
}

double repetition_rate(const std::vector<std::vector<Tokens>>& stories) {
  std::size_t repeats = 0, total = 0;
  for (const auto& story : stories) {
    std::set<Tokens> seen;
    for (const Tokens& raw : story) {
      if (!seen.insert(strip_special(raw)).second) ++repeats;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(repeats) / static_cast<double>(total);
}

EvalReport evaluate_split(const std::vector<std::vector<Tokens>>& generated, const Corpus& split,
                          const RewardTables& tables) {
  if (split.records.empty()) throw ConfigError("evaluate: empty split");
  if (generated.size() != split.records.size()) {
    throw AlignmentError("evaluate: " + std::to_string(generated.size()) + " stories for " +
                         std::to_string(split.records.size()) + " records");
  }
  EvalReport rep;
  rep.split = to_string(split.split);
  rep.records = split.records.size();
  std::vector<Tokens> cands, refs;
  double rouge = 0.0, story_cider = 0.0, sentence_cider = 0.0;
  std::size_t sentences = 0;
  for (std::size_t i = 0; i < generated.size(); ++i) {
    const StoryRecord& rec = split.records[i];
    if (generated[i].size() != rec.slots()) {
      throw AlignmentError("evaluate: record " + std::to_string(i) + " has " +
                           std::to_string(rec.slots()) + " slots but " +
                           std::to_string(generated[i].size()) + " sentences");
    }
    RewardReport rr = sentence_rewards(generated[i], rec.sentences, tables.sentence_df, tables.story_df);
    cands.push_back(concat_story(generated[i]));
    refs.push_back(concat_story(rec.sentences));
    rouge += rr.rouge_l;
    story_cider += rr.cider_d;
    for (double r : rr.sentence_rewards) sentence_cider += r;
    sentences += rr.sentence_rewards.size();
    rep.per_record.push_back({std::move(rr.sentence_rewards), rr.cider_d});
  }
  const double n = static_cast<double>(generated.size());
  rep.bleu4 = bleu4(cands, refs);
  rep.rouge_l = rouge / n;
  rep.cider_story_concat = story_cider / n;
  rep.cider_sentence_mean = sentence_cider / static_cast<double>(sentences);
  rep.distinct_1 = distinct_n(generated, 1);
  rep.distinct_2 = distinct_n(generated, 2);
  rep.repetition_rate = repetition_rate(generated);
  return rep;
}

EvalReport evaluate_model(const HsrlModel& model, const Corpus& split, const RewardTables& tables,
                          const GenerateOptions& options) {
  std::vector<std::vector<Tokens>> stories;
  for (const GenerationTrace& t : generate_stories(model, split.records, options)) {
    stories.push_back(t.sentences());
  }
  return evaluate_split(stories, split, tables);
}

json EvalReport::to_json() const {
  json per = json::array();
  for (const RecordScore& r : per_record) {
    per.push_back({{"sentence_rewards", r.sentence_rewards}, {"story_cider", r.story_cider}});
  }
  return {{"variant", variant},
          {"split", split},
          {"records", records},
          {"bleu4", bleu4},
          {"rouge_l", rouge_l},
          {"cider_d", {{"story_concat", cider_story_concat}, {"sentence_mean", cider_sentence_mean}}},
          {"distinct_1", distinct_1},
          {"distinct_2", distinct_2},
          {"repetition_rate", repetition_rate},
          {"per_record", per}};
}

EvalReport EvalReport::from_json(const json& j) {
  try {
    EvalReport r;
    r.variant = j.at("variant").get<std::string>();
    r.split = j.at("split").get<std::string>();
    r.records = j.at("records").get<std::size_t>();
    r.bleu4 = j.at("bleu4").get<double>();
    r.rouge_l = j.at("rouge_l").get<double>();
    r.cider_story_concat = j.at("cider_d").at("story_concat").get<double>();
    r.cider_sentence_mean = j.at("cider_d").at("sentence_mean").get<double>();
    r.distinct_1 = j.at("distinct_1").get<double>();
    r.distinct_2 = j.at("distinct_2").get<double>();
    r.repetition_rate = j.at("repetition_rate").get<double>();
    for (const json& p : j.at("per_record")) {
      r.per_record.push_back({p.at("sentence_rewards").get<std::vector<double>>(),
                              p.at("story_cider").get<double>()});
    }
    return r;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("evaluation report: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Hsrl: return "hsrl";
    case Variant::WorkerRandomTopics: return "worker_random_topics";
    case Variant::WorkerGtt: return "worker_gtt";
    case Variant::FlatMle: return "flat_mle";
    case Variant::FlatRl: return "flat_rl";
  }
  return "hsrl";
}

Variant parse_variant(const std::string& s) {
  for (Variant v : {Variant::Hsrl, Variant::WorkerRandomTopics, Variant::WorkerGtt,
                    Variant::FlatMle, Variant::FlatRl}) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError("unknown variant '" + s +
                    "' (hsrl|worker_random_topics|worker_gtt|flat_mle|flat_rl)");
}

GenerateOptions variant_generation(Variant variant, const TrainConfig& cfg) {
  GenerateOptions g;
  g.seed = cfg.seed;
  g.t_max = cfg.t_max;
  if (variant == Variant::WorkerRandomTopics) g.feed = TopicFeed::Random;
  return g;
}

VariantRun run_variant(Variant variant, const Corpus& train, const Corpus& eval,
                       const TrainConfig& cfg, const HsrlModel* trained) {
  const bool needs_golden = variant == Variant::Hsrl || variant == Variant::WorkerGtt;
  if (needs_golden && !train.has_golden_topics()) {
    throw ConfigError("variant " + to_string(variant) + " needs golden topics on the training split");
  }
  if (variant == Variant::WorkerGtt && !eval.has_golden_topics()) {
    throw ConfigError("worker_gtt needs golden topics on the evaluation split");
  }
  VariantRun run;
  if (trained != nullptr) {
    run.model = *trained;
  } else {
    TrainResult tr;
    switch (variant) {
      case Variant::Hsrl: tr = train_hierarchical(train, cfg); break;
      case Variant::WorkerRandomTopics: tr = train_topic_worker(train, cfg, TopicFeed::Random); break;
      case Variant::WorkerGtt: tr = train_topic_worker(train, cfg, TopicFeed::Golden); break;
      case Variant::FlatMle: tr = train_flat(train, cfg, false); break;
      case Variant::FlatRl: tr = train_flat(train, cfg, true); break;
    }
    run.model = std::move(tr.model);
    run.history = std::move(tr.history);
  }
  const RewardTables tables(train);
  run.report = evaluate_model(run.model, eval, tables, variant_generation(variant, cfg));
  run.report.variant = to_string(variant);
  return run;
}

void write_traces(const std::string& path, const std::vector<GenerationTrace>& traces,
                  const Vocab& vocab) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  for (std::size_t i = 0; i < traces.size(); ++i) {
    json slots = json::array();
    for (const SlotTrace& s : traces[i].slots) {
      slots.push_back({{"topic", s.topic},
                       {"g", s.g},
                       {"sentence", detokenize(strip_special(s.tokens), vocab)},
                       {"logprob", std::accumulate(s.token_logp.begin(), s.token_logp.end(), 0.0)}});
    }
    f << json{{"record", i}, {"manager_invoked", traces[i].manager_invoked}, {"slots", slots}}.dump()
      << '\n';
  }
}

}  // namespace hsrl
