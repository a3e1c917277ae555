#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "doctest.h"
#include "hsrl/datasets.hpp"

using namespace hsrl;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "hsrl_test_datasets";
  fs::create_directories(dir);
  return dir / name;
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream f(p);
  f << text;
}

Vocab small_vocab() {
  Vocab v;
  for (const char* w : {"a", "b", "cat", "dog"}) v.add(w);
  return v;
}

}  // namespace

TEST_CASE("mean_pool: examples") {
  std::vector<Vector> two = {Vector::Constant(2, 1.0), Vector::Constant(2, 3.0)};
  CHECK(mean_pool(two) == Vector::Constant(2, 2.0));
  std::vector<Vector> one = {Vector::LinSpaced(3, 0.5, 1.5)};
  CHECK(mean_pool(one) == one[0]);
  CHECK_THROWS_AS(mean_pool(std::vector<Vector>{}), DimensionError);
}

TEST_CASE("mean_pool: matches naive re-summation") {
  SeededRng rng(3);
  std::vector<Vector> vs(5, Vector(6));
  for (Vector& v : vs) {
    for (Index i = 0; i < v.size(); ++i) v(i) = rng.normal();
  }
  const Vector got = mean_pool(vs);
  for (Index j = 0; j < 6; ++j) {
    double s = 0.0;
    for (const Vector& v : vs) s += v(j);
    CHECK(std::abs(got(j) - s / 5.0) < 1e-12);
  }
}

TEST_CASE("vocab: reserved ids and file round trip") {
  Vocab v = small_vocab();
  CHECK(v.token(Vocab::kPad) == "<pad>");
  CHECK(v.token(Vocab::kBos) == "<bos>");
  CHECK(v.token(Vocab::kEos) == "<eos>");
  CHECK(v.token(Vocab::kUnk) == "<unk>");
  CHECK(v.size() == 8);
  CHECK(v.add("cat") == v.id("cat"));
  const fs::path p = scratch("vocab.txt");
  v.save(p.string());
  CHECK(Vocab::load(p.string()) == v);
  write(scratch("bad_vocab.txt"), "<pad>\n<eos>\n<bos>\n<unk>\n");
  CHECK_THROWS_AS(Vocab::load(scratch("bad_vocab.txt").string()), SchemaError);
}

TEST_CASE("tokenize / detokenize") {
  const Vocab v = small_vocab();
  CHECK(tokenize("a b", v) == std::vector<int>{v.id("a"), v.id("b")});
  CHECK(tokenize("A  Cat\tdog", v) == std::vector<int>{v.id("a"), v.id("cat"), v.id("dog")});
  CHECK(tokenize("zebra", v) == std::vector<int>{Vocab::kUnk});
  SeededRng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> ids;
    const std::size_t len = 1 + rng.below(6);
    for (std::size_t i = 0; i < len; ++i) ids.push_back(Vocab::kReserved + static_cast<int>(rng.below(4)));
    CHECK(tokenize(detokenize(ids, v), v) == ids);
  }
}

TEST_CASE("load_corpus: save/load round trip is bit-identical") {
  Vocab v = small_vocab();
  Corpus c;
  c.vocab = v;
  StoryRecord r;
  r.features = {Vector::Constant(3, 0.1), Vector::Constant(3, 1.0 / 3.0)};
  r.sentences = {{v.id("a"), v.id("cat"), Vocab::kEos}, {v.id("dog"), Vocab::kEos}};
  r.golden_topics = std::vector<int>{1, 0};
  c.records.push_back(r);
  const fs::path p = scratch("one.jsonl");
  save_corpus(c, p.string());
  const Corpus back = load_corpus(p.string(), v);
  REQUIRE(back.records.size() == 1);
  CHECK(back.records[0] == r);
  CHECK(back.unk_count == 0);
}

TEST_CASE("load_corpus: schema, parse and UNK handling") {
  const Vocab v = small_vocab();
  SUBCASE("4 features for 5 sentences") {
    const fs::path p = scratch("mismatch.jsonl");
    write(p, R"({"features": [[1],[2],[3],[4]], "sentences": ["a","b","a","b","a"]})"
             "\n");
    CHECK_THROWS_AS(load_corpus(p.string(), v), SchemaError);
  }
  SUBCASE("token absent from vocab") {
    const fs::path p = scratch("unk.jsonl");
    write(p, R"({"features": [[1,2]], "sentences": ["a zebra"]})"
             "\n");
    const Corpus c = load_corpus(p.string(), v);
    CHECK(c.unk_count == 1);
    CHECK(c.records[0].sentences[0] == std::vector<int>{v.id("a"), Vocab::kUnk, Vocab::kEos});
  }
  SUBCASE("malformed line reports its line number") {
    const fs::path p = scratch("broken.jsonl");
    write(p, R"({"features": [[1,2]], "sentences": ["a"]})"
             "\n{not json\n");
    try {
      load_corpus(p.string(), v);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find(":2") != std::string::npos);
    }
  }
  SUBCASE("inconsistent d_v across records") {
    const fs::path p = scratch("dv.jsonl");
    write(p, R"({"features": [[1,2]], "sentences": ["a"]})"
             "\n"
             R"({"features": [[1,2,3]], "sentences": ["b"]})"
             "\n");
    CHECK_THROWS_AS(load_corpus(p.string(), v), SchemaError);
  }
  SUBCASE("topic id must be an integer per slot") {
    const fs::path p = scratch("topics.jsonl");
    write(p, R"({"features": [[1,2]], "sentences": ["a"], "topics": [0, 1]})"
             "\n");
    CHECK_THROWS_AS(load_corpus(p.string(), v), SchemaError);
  }
}

TEST_CASE("synthesize_corpus: content words come from the slot's topic") {
  SynthConfig cfg;
  cfg.topics = 2;
  cfg.num_records = 10;
  const Corpus c = synthesize_corpus(cfg);
  validate(c, cfg.topics);
  CHECK(c.records.size() == 10);
  const std::set<std::string> function(function_words().begin(), function_words().end());
  for (const StoryRecord& r : c.records) {
    REQUIRE(r.golden_topics.has_value());
    for (std::size_t l = 0; l < r.slots(); ++l) {
      for (int id : strip_special(r.sentences[l])) {
        const std::string& w = c.vocab.token(id);
        const auto topic = content_word_topic(w, cfg);
        if (topic) {
          CHECK(*topic == (*r.golden_topics)[l]);
        } else {
          CHECK(function.count(w) == 1);
        }
      }
    }
  }
}

TEST_CASE("synthesize_corpus: a content word belongs to exactly one topic") {
  SynthConfig cfg;
  cfg.topics = 4;
  const Corpus c = synthesize_corpus(cfg);
  std::map<std::string, std::set<int>> seen;
  for (const StoryRecord& r : c.records) {
    for (std::size_t l = 0; l < r.slots(); ++l) {
      for (int id : strip_special(r.sentences[l])) {
        const std::string& w = c.vocab.token(id);
        if (content_word_topic(w, cfg)) seen[w].insert((*r.golden_topics)[l]);
      }
    }
  }
  CHECK(!seen.empty());
  for (const auto& [w, topics] : seen) CHECK(topics.size() == 1);
}

TEST_CASE("synthesize_corpus: deterministic under seed, config checked") {
  SynthConfig cfg;
  cfg.num_records = 20;
  const Corpus a = synthesize_corpus(cfg), b = synthesize_corpus(cfg);
  CHECK(a.records == b.records);
  CHECK(a.vocab == b.vocab);
  cfg.seed += 1;
  CHECK(!(synthesize_corpus(cfg).records == a.records));

  SynthConfig bad;
  bad.topics = 1;
  CHECK_THROWS_AS(synthesize_corpus(bad), ConfigError);
  bad = SynthConfig{};
  bad.feature_dim = 2;
  bad.topics = 3;
  CHECK_THROWS_AS(synthesize_corpus(bad), ConfigError);
  bad = SynthConfig{};
  bad.min_len = 6;
  bad.max_len = 5;
  CHECK_THROWS_AS(synthesize_corpus(bad), ConfigError);
}

TEST_CASE("synthesize_corpus: sentence lengths respect the configured range") {
  SynthConfig cfg;
  cfg.min_len = 4;
  cfg.max_len = 6;
  for (const StoryRecord& r : synthesize_corpus(cfg).records) {
    for (const auto& s : r.sentences) {
      CHECK(s.back() == Vocab::kEos);
      const auto words = s.size() - 1;
      CHECK(words >= 4);
      CHECK(words <= 6);
    }
  }
}

TEST_CASE("split_off keeps the head and moves the tail") {
  SynthConfig cfg;
  cfg.num_records = 12;
  Corpus head = synthesize_corpus(cfg);
  const Corpus full = head;
  Corpus tail = split_off(head, 9, Split::Valid);
  CHECK(head.records.size() == 9);
  CHECK(tail.records.size() == 3);
  CHECK(tail.split == Split::Valid);
  CHECK(tail.records[0] == full.records[9]);
  CHECK(tail.vocab == full.vocab);
  CHECK_THROWS_AS(split_off(head, 10, Split::Test), ConfigError);
}
