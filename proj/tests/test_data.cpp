#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <filesystem>
#include <set>

#include "prefopt/data.hpp"

using namespace prefopt;

namespace {

bool contains_token(const TokenSequence& seq, int token) {
    return std::find(seq.ids.begin(), seq.ids.end(), token) != seq.ids.end();
}

bool examples_equal(const PreferenceExample& a, const PreferenceExample& b) {
    return a.id == b.id && a.sensor == b.sensor && a.task == b.task && a.context == b.context &&
           a.positive == b.positive && a.negatives == b.negatives;
}

std::filesystem::path test_dir() {
    auto dir = std::filesystem::path("test_artifacts");
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("generate echoes the configured sizes") {
    GeneratorConfig cfg;
    cfg.seed = 7;
    cfg.n_per_sensor = 4;
    cfg.k = 3;
    auto corpus = generate(cfg);
    CHECK(corpus.train.size() == 12);
    for (const auto& ex : corpus.train) CHECK(ex.negatives.size() == 3);
    CHECK(corpus.eval.size() == 12);
    CHECK(corpus.neutral.size() == 12);
}

TEST_CASE("generate is deterministic per seed") {
    GeneratorConfig cfg;
    cfg.seed = 1234;
    cfg.n_per_sensor = 12;
    auto a = generate(cfg);
    auto b = generate(cfg);
    CHECK(serialize_dataset(a.train) == serialize_dataset(b.train));
    CHECK(serialize_dataset(a.eval) == serialize_dataset(b.eval));
    CHECK(serialize_dataset(a.neutral) == serialize_dataset(b.neutral));

    cfg.seed = 1235;
    auto c = generate(cfg);
    CHECK(serialize_dataset(a.train) != serialize_dataset(c.train));
}

TEST_CASE("bias_strength 0 plants no cue token in any negative") {
    GeneratorConfig cfg;
    cfg.seed = 3;
    cfg.n_per_sensor = 30;
    cfg.bias_strength = 0.0;
    auto corpus = generate(cfg);
    for (const auto& ex : corpus.train) {
        for (int cue = 0; cue < vocab::n_cues; ++cue) {
            for (const auto& neg : ex.negatives) {
                CHECK(!contains_token(neg, vocab::cue_token(cue)));
            }
        }
    }
}

TEST_CASE("bias_strength 1 plants the context cue in every negative") {
    GeneratorConfig cfg;
    cfg.seed = 3;
    cfg.n_per_sensor = 12;
    cfg.bias_strength = 1.0;
    auto corpus = generate(cfg);
    for (const auto& ex : corpus.train) {
        int cue = -1;
        for (int id : ex.context.ids) {
            if (id == vocab::cue_token(0) || id == vocab::cue_token(1)) cue = id;
        }
        REQUIRE(cue != -1);
        for (const auto& neg : ex.negatives) CHECK(contains_token(neg, cue));
    }
}

TEST_CASE("negatives are pairwise distinct and distinct from the positive") {
    GeneratorConfig cfg;
    cfg.seed = 99;
    cfg.n_per_sensor = 60;
    cfg.k = 5;
    auto corpus = generate(cfg);
    auto check_split = [](const Dataset& data) {
        for (const auto& ex : data) {
            for (size_t i = 0; i < ex.negatives.size(); ++i) {
                CHECK(!(ex.negatives[i] == ex.positive));
                for (size_t j = i + 1; j < ex.negatives.size(); ++j) {
                    CHECK(!(ex.negatives[i] == ex.negatives[j]));
                }
            }
        }
    };
    check_split(corpus.train);
    check_split(corpus.eval);
    check_split(corpus.neutral);
}

TEST_CASE("train and eval ids are disjoint; sensors and tasks all covered") {
    GeneratorConfig cfg;
    cfg.seed = 5;
    cfg.n_per_sensor = 18;
    auto corpus = generate(cfg);
    std::set<std::string> train_ids, eval_ids;
    for (const auto& ex : corpus.train) train_ids.insert(ex.id);
    for (const auto& ex : corpus.eval) eval_ids.insert(ex.id);
    CHECK(train_ids.size() == corpus.train.size());
    for (const auto& id : eval_ids) CHECK(!train_ids.count(id));

    std::set<std::pair<int, int>> cells;
    for (const auto& ex : corpus.train) {
        cells.insert({static_cast<int>(ex.sensor), static_cast<int>(ex.task)});
    }
    CHECK(cells.size() == static_cast<size_t>(n_sensors * n_tasks));
}

TEST_CASE("generated sequences respect the token and length budgets") {
    GeneratorConfig cfg;
    cfg.seed = 21;
    cfg.n_per_sensor = 24;
    auto corpus = generate(cfg);
    auto check_split = [&](const Dataset& data) {
        for (const auto& ex : data) {
            auto in_budget = [&](const TokenSequence& t) {
                for (int id : t.ids) {
                    CHECK(id >= 0);
                    CHECK(id < cfg.vocab_size);
                }
                CHECK(ex.context.length() + t.length() <= cfg.max_seq_len);
            };
            in_budget(ex.positive);
            for (const auto& n : ex.negatives) in_budget(n);
        }
    };
    check_split(corpus.train);
    check_split(corpus.eval);
    check_split(corpus.neutral);
}

TEST_CASE("neutral split answers carry no cue, appearance, or physics tokens") {
    GeneratorConfig cfg;
    cfg.seed = 11;
    cfg.n_per_sensor = 20;
    cfg.bias_strength = 1.0; // must not leak into the neutral split
    auto corpus = generate(cfg);
    for (const auto& ex : corpus.neutral) {
        auto content_only = [&](const TokenSequence& t) {
            for (int cue = 0; cue < vocab::n_cues; ++cue) {
                CHECK(!contains_token(t, vocab::cue_token(cue)));
                CHECK(!contains_token(t, vocab::bias_token(cue)));
            }
            for (int p = vocab::physics_base; p < vocab::physics_base + 6; ++p) {
                CHECK(!contains_token(t, p));
            }
        };
        content_only(ex.positive);
        for (const auto& n : ex.negatives) content_only(n);
    }
}

TEST_CASE("generator config validation") {
    GeneratorConfig cfg;
    cfg.k = 0;
    CHECK_THROWS_AS(generate(cfg), ConfigError);
    cfg = GeneratorConfig{};
    cfg.n_per_sensor = 0;
    CHECK_THROWS_AS(generate(cfg), ConfigError);
    cfg = GeneratorConfig{};
    cfg.max_seq_len = 10;
    CHECK_THROWS_AS(generate(cfg), ConfigError);
    cfg = GeneratorConfig{};
    cfg.bias_strength = 1.5;
    CHECK_THROWS_AS(generate(cfg), ConfigError);
}

TEST_CASE("dataset file round-trip is byte-identical") {
    GeneratorConfig cfg;
    cfg.seed = 41;
    cfg.n_per_sensor = 34; // ~100 records
    auto corpus = generate(cfg);
    auto path = (test_dir() / "roundtrip.jsonl").string();
    save_dataset(corpus.train, path);
    auto loaded = load_dataset(path);
    REQUIRE(loaded.size() == corpus.train.size());
    for (size_t i = 0; i < loaded.size(); ++i) CHECK(examples_equal(loaded[i], corpus.train[i]));

    auto reserialized = serialize_dataset(loaded);
    CHECK(reserialized == read_file_text(path));
}

TEST_CASE("empty file loads as an empty dataset") {
    auto path = (test_dir() / "empty.jsonl").string();
    atomic_write_file(path, "");
    CHECK(load_dataset(path).empty());
}

TEST_CASE("malformed line reports its line number") {
    auto good = serialize_dataset(generate(GeneratorConfig{.seed = 1, .n_per_sensor = 1}).train);
    auto path = (test_dir() / "malformed.jsonl").string();
    atomic_write_file(path, good + "{\"id\": }\n");
    try {
        load_dataset(path);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line == 4); // 3 good records then the bad line
        CHECK(std::string(e.what()).find("line 4") != std::string::npos);
    }
}

TEST_CASE("validation failure names the offending record id") {
    PreferenceExample ex;
    ex.id = "bad-record-7";
    ex.sensor = Sensor::depth;
    ex.task = Task::counting;
    ex.context = TokenSequence({0, 4, 14, 26, 22, 12, 2, 7});
    ex.positive = TokenSequence({26, 14, 1});
    ex.negatives = {TokenSequence({26, 14, 1})}; // duplicates the positive
    auto path = (test_dir() / "invalid.jsonl").string();
    atomic_write_file(path, serialize_dataset({ex}));
    try {
        load_dataset(path);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("bad-record-7") != std::string::npos);
    }
}

TEST_CASE("unknown sensor or task tag is rejected") {
    std::string line = R"({"id":"x","sensor":"lidar","task":"counting","context":[0,1],"positive":[2,1],"negatives":[[3,1]]})";
    CHECK_THROWS_AS(parse_dataset(line + "\n"), ValidationError);
    std::string line2 = R"({"id":"x","sensor":"depth","task":"segmentation","context":[0,1],"positive":[2,1],"negatives":[[3,1]]})";
    CHECK_THROWS_AS(parse_dataset(line2 + "\n"), ValidationError);
}
