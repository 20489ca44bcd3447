#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "prefopt/errors.hpp"
#include "prefopt/io.hpp"
#include "prefopt/model.hpp"
#include "prefopt/rng.hpp"

namespace prefopt {

// Synthetic sensor-QA preference corpus. Symbolic token ids stand in for
// text so every run is tokenizer-free and deterministic. Each context
// describes a scene seen through one sensor; the positive answer applies
// that sensor's physics to the scene's appearance cue, while negatives give
// plausible but sensor-mismatched readings. With probability bias_strength a
// negative additionally copies the context's cue token (a planted surface
// cue), so likelihood-only training inflates negatives while contrastive
// training has to push them down.

enum class Sensor { thermal = 0, depth = 1, xray = 2 };
enum class Task {
    existence = 0,
    counting = 1,
    position = 2,
    general_description = 3,
    contextual_understanding = 4,
    sensor_understanding = 5,
};

constexpr int n_sensors = 3;
constexpr int n_tasks = 6;
constexpr std::array<Task, 4> perception_tasks = {Task::existence, Task::counting, Task::position,
                                                  Task::general_description};
constexpr std::array<Task, 2> understanding_tasks = {Task::contextual_understanding,
                                                     Task::sensor_understanding};

inline const char* to_string(Sensor s) {
    switch (s) {
        case Sensor::thermal: return "thermal";
        case Sensor::depth: return "depth";
        case Sensor::xray: return "xray";
    }
    return "?";
}

inline const char* to_string(Task t) {
    switch (t) {
        case Task::existence: return "existence";
        case Task::counting: return "counting";
        case Task::position: return "position";
        case Task::general_description: return "general_description";
        case Task::contextual_understanding: return "contextual_understanding";
        case Task::sensor_understanding: return "sensor_understanding";
    }
    return "?";
}

inline Sensor sensor_from_string(const std::string& s) {
    for (int i = 0; i < n_sensors; ++i)
        if (s == to_string(static_cast<Sensor>(i))) return static_cast<Sensor>(i);
    throw ValidationError("unknown sensor tag: " + s);
}

inline Task task_from_string(const std::string& s) {
    for (int i = 0; i < n_tasks; ++i)
        if (s == to_string(static_cast<Task>(i))) return static_cast<Task>(i);
    throw ValidationError("unknown task tag: " + s);
}

// Fixed token layout; everything fits the default 64-token vocabulary.
namespace vocab {
constexpr int bos = 0;
constexpr int eoa = 1; // terminal end-of-answer marker, counted in |y|
constexpr int query = 2;
constexpr int sensor_base = 3;  // 3 sensor tags
constexpr int task_base = 6;    // 6 task markers
constexpr int cue_base = 12;    // cue_bright, cue_dark
constexpr int object_base = 14; // 8 objects
constexpr int position_base = 22; // left, right, top, bottom
constexpr int count_base = 26;  // counts 1..4
constexpr int physics_base = 30; // hot, cold, near, far, dense, hollow
constexpr int bias_base = 36;   // glare, shade (RGB-appearance words)
constexpr int yes = 38;
constexpr int no = 39;
constexpr int n_objects = 8;
constexpr int n_positions = 4;
constexpr int n_counts = 4;
constexpr int n_cues = 2;
constexpr int used = 40;

inline int sensor_token(Sensor s) { return sensor_base + static_cast<int>(s); }
inline int task_token(Task t) { return task_base + static_cast<int>(t); }
inline int cue_token(int cue) { return cue_base + cue; }
inline int object_token(int o) { return object_base + o; }
inline int position_token(int p) { return position_base + p; }
inline int count_token(int c) { return count_base + c; }
// Sensor-physics rule: what the cue really means through this sensor
// (thermal bright = hot, depth bright = near, xray bright = dense, ...).
inline int physics_token(Sensor s, int cue) { return physics_base + static_cast<int>(s) * 2 + cue; }
// RGB-bias rule: what the cue looks like to an appearance-only reader.
inline int bias_token(int cue) { return bias_base + cue; }
} // namespace vocab

struct PreferenceExample {
    std::string id;
    Sensor sensor = Sensor::thermal;
    Task task = Task::existence;
    TokenSequence context;
    TokenSequence positive;
    std::vector<TokenSequence> negatives;
};

using Dataset = std::vector<PreferenceExample>;

struct GeneratorConfig {
    uint64_t seed = 7;
    int n_per_sensor = 200;
    int k = 3;
    double bias_strength = 0.8;
    int vocab_size = 64;   // token budget
    int max_seq_len = 48;  // length budget: longest context+answer must fit

    void validate() const {
        if (n_per_sensor < 1) throw ConfigError("n_per_sensor must be >= 1");
        if (k < 1) throw ConfigError("k must be >= 1");
        if (k > 6) throw ConfigError("generator supports at most 6 negatives per example");
        if (bias_strength < 0.0 || bias_strength > 1.0) {
            throw ConfigError("bias_strength must lie in [0, 1]");
        }
        if (vocab_size < vocab::used) {
            throw ConfigError("vocab budget too small: need at least " + std::to_string(vocab::used));
        }
        // context (8) + longest answer core (3) + planted cue (1) + eoa (1)
        if (max_seq_len < 13) throw ConfigError("length budget exceeded: max_seq_len must be >= 13");
    }
};

struct GeneratedCorpus {
    Dataset train;
    Dataset eval;
    Dataset neutral;
};

inline void validate_example(const PreferenceExample& ex, int max_seq_len = 48) {
    if (ex.negatives.empty()) throw ValidationError("example " + ex.id + ": no negatives");
    if (ex.positive.empty()) throw ValidationError("example " + ex.id + ": empty positive answer");
    if (ex.context.empty()) throw ValidationError("example " + ex.id + ": empty context");
    for (const auto& neg : ex.negatives) {
        if (neg.empty()) throw ValidationError("example " + ex.id + ": empty negative answer");
        if (neg == ex.positive) {
            throw ValidationError("example " + ex.id + ": negative answer duplicates the positive");
        }
    }
    auto check_len = [&](const TokenSequence& ans) {
        if (ex.context.length() + ans.length() > max_seq_len) {
            throw ValidationError("example " + ex.id + ": sequence exceeds length budget " +
                                  std::to_string(max_seq_len));
        }
    };
    check_len(ex.positive);
    for (const auto& neg : ex.negatives) check_len(neg);
    auto check_ids = [&](const TokenSequence& t) {
        for (int id : t.ids) {
            if (id < 0) throw ValidationError("example " + ex.id + ": negative token id");
        }
    };
    check_ids(ex.context);
    check_ids(ex.positive);
    for (const auto& neg : ex.negatives) check_ids(neg);
}

namespace detail {

struct Scene {
    Sensor sensor;
    int object;
    int count;
    int position;
    int cue;
};

// Scene descriptors appear in per-item random order, so answering requires
// retrieving tokens by kind rather than by position.
inline TokenSequence make_context(const Scene& sc, Task task, Rng& rng) {
    std::vector<int> scene = {vocab::sensor_token(sc.sensor), vocab::object_token(sc.object),
                              vocab::count_token(sc.count), vocab::position_token(sc.position),
                              vocab::cue_token(sc.cue)};
    rng.shuffle(scene);
    std::vector<int> ids = {vocab::bos};
    ids.insert(ids.end(), scene.begin(), scene.end());
    ids.push_back(vocab::query);
    ids.push_back(vocab::task_token(task));
    return TokenSequence(std::move(ids));
}

// Perception answers echo scene content; the description answer echoes the
// appearance cue and its RGB reading (this is what makes appearance-style
// continuations a trained pattern, i.e. the shortcut SFT can fall into).
// Understanding answers resolve the cue through the sensor-physics table.
inline std::vector<int> positive_core(const Scene& sc, Task task) {
    using namespace vocab;
    switch (task) {
        case Task::existence:
            return {yes, object_token(sc.object)};
        case Task::counting:
            return {count_token(sc.count), object_token(sc.object)};
        case Task::position:
            return {object_token(sc.object), position_token(sc.position)};
        case Task::general_description:
            return {object_token(sc.object), cue_token(sc.cue), bias_token(sc.cue)};
        case Task::contextual_understanding:
            return {object_token(sc.object), physics_token(sc.sensor, sc.cue)};
        case Task::sensor_understanding:
            return {sensor_token(sc.sensor), physics_token(sc.sensor, sc.cue)};
    }
    throw ContractError("unreachable task");
}

// Candidate negative cores in priority order: hard sensor-mismatched
// readings first, then the RGB-appearance answer, then content errors.
// `alt` picks among same-shape variants.
inline std::vector<int> negative_core(const Scene& sc, Task task, int variant, int alt) {
    using namespace vocab;
    Sensor other = static_cast<Sensor>((static_cast<int>(sc.sensor) + 1 + (alt % 2)) % 3);
    Sensor third = static_cast<Sensor>((static_cast<int>(sc.sensor) + 2 - (alt % 2)) % 3);
    int wrong_obj = (sc.object + 1 + (alt % (n_objects - 1))) % n_objects;
    int wrong_obj2 = (sc.object + 1 + ((alt + 2) % (n_objects - 1))) % n_objects;
    int wrong_cnt = (sc.count + 1 + (alt % (n_counts - 1))) % n_counts;
    int wrong_pos = (sc.position + 1 + (alt % (n_positions - 1))) % n_positions;
    switch (task) {
        case Task::existence: {
            const std::vector<std::vector<int>> pool = {
                {yes, object_token(wrong_obj)}, {no, object_token(sc.object)},
                {no, object_token(wrong_obj)},  {yes, object_token(wrong_obj2)},
                {no, object_token(wrong_obj2)}, {yes, object_token((wrong_obj + 3) % n_objects)},
            };
            return pool[variant % pool.size()];
        }
        case Task::counting: {
            const std::vector<std::vector<int>> pool = {
                {count_token(wrong_cnt), object_token(sc.object)},
                {count_token((wrong_cnt + 1) % n_counts), object_token(sc.object)},
                {count_token((wrong_cnt + 2) % n_counts), object_token(sc.object)},
                {count_token(wrong_cnt), object_token(wrong_obj)},
                {count_token((wrong_cnt + 1) % n_counts), object_token(wrong_obj)},
                {count_token((wrong_cnt + 2) % n_counts), object_token(wrong_obj)},
            };
            return pool[variant % pool.size()];
        }
        case Task::position: {
            const std::vector<std::vector<int>> pool = {
                {object_token(sc.object), position_token(wrong_pos)},
                {object_token(sc.object), position_token((wrong_pos + 1) % n_positions)},
                {object_token(sc.object), position_token((wrong_pos + 2) % n_positions)},
                {object_token(wrong_obj), position_token(wrong_pos)},
                {object_token(wrong_obj), position_token((wrong_pos + 1) % n_positions)},
                {object_token(wrong_obj), position_token((wrong_pos + 2) % n_positions)},
            };
            return pool[variant % pool.size()];
        }
        case Task::general_description: {
            const std::vector<std::vector<int>> pool = {
                {object_token(sc.object), bias_token(1 - sc.cue)},
                {object_token(wrong_obj), bias_token(sc.cue)},
                {object_token(sc.object), physics_token(sc.sensor, sc.cue)},
                {object_token(wrong_obj), bias_token(1 - sc.cue)},
                {object_token(sc.object), physics_token(other, sc.cue)},
                {object_token(wrong_obj2), bias_token(sc.cue)},
            };
            return pool[variant % pool.size()];
        }
        case Task::contextual_understanding: {
            const std::vector<std::vector<int>> pool = {
                {object_token(sc.object), bias_token(sc.cue)}, // the RGB-bias answer
                {object_token(sc.object), physics_token(sc.sensor, 1 - sc.cue)},
                {object_token(sc.object), physics_token(other, sc.cue)},
                {object_token(sc.object), physics_token(third, sc.cue)},
                {object_token(sc.object), bias_token(1 - sc.cue)},
                {object_token(sc.object), physics_token(other, 1 - sc.cue)},
            };
            return pool[variant % pool.size()];
        }
        case Task::sensor_understanding: {
            const std::vector<std::vector<int>> pool = {
                {sensor_token(sc.sensor), bias_token(sc.cue)}, // the RGB-bias answer
                {sensor_token(sc.sensor), physics_token(sc.sensor, 1 - sc.cue)},
                {sensor_token(sc.sensor), physics_token(other, sc.cue)},
                {sensor_token(sc.sensor), physics_token(third, sc.cue)},
                {sensor_token(sc.sensor), bias_token(1 - sc.cue)},
                {sensor_token(sc.sensor), physics_token(other, 1 - sc.cue)},
            };
            return pool[variant % pool.size()];
        }
    }
    throw ContractError("unreachable task");
}

inline TokenSequence finish_answer(std::vector<int> core) {
    core.push_back(vocab::eoa);
    return TokenSequence(std::move(core));
}

inline PreferenceExample make_example(const std::string& id, const Scene& sc, Task task,
                                      const GeneratorConfig& cfg, Rng& rng) {
    PreferenceExample ex;
    ex.id = id;
    ex.sensor = sc.sensor;
    ex.task = task;
    ex.context = make_context(sc, task, rng);
    ex.positive = finish_answer(positive_core(sc, task));

    int alt = rng.uniform_int(1024);
    auto add = [&](std::vector<int> core, bool biased) {
        if (biased) {
            // planted surface cue: copy the context's cue token into the
            // answer, in the slot the description answers use, so the
            // negative mimics a trained appearance sentence
            core.insert(core.end() - 1, vocab::cue_token(sc.cue));
        }
        TokenSequence neg = finish_answer(std::move(core));
        if (neg == ex.positive) return;
        for (const auto& existing : ex.negatives) {
            if (existing == neg) return;
        }
        ex.negatives.push_back(std::move(neg));
    };

    // The three main negative types are stored in per-item rotated order, so
    // a k=1 consumer sees each type on only a third of the items while k=3
    // always covers all of them (the diversity that the k ablation measures).
    int rot = rng.uniform_int(3);
    auto variant_at = [rot](int j) { return j < 3 ? (rot + j) % 3 : j; };

    constexpr int pool_size = 6;
    for (int j = 0; static_cast<int>(ex.negatives.size()) < cfg.k && j < pool_size; ++j) {
        add(negative_core(sc, task, variant_at(j), alt), rng.bernoulli(cfg.bias_strength));
    }
    // Deterministic fill for duplicate-heavy draws. Pure settings stay pure:
    // bias 0 never plants a cue, bias 1 always does.
    std::vector<bool> fill_states;
    if (cfg.bias_strength <= 0.0) fill_states = {false};
    else if (cfg.bias_strength >= 1.0) fill_states = {true};
    else fill_states = {false, true};
    for (bool biased : fill_states) {
        for (int j = 0; static_cast<int>(ex.negatives.size()) < cfg.k && j < pool_size; ++j) {
            add(negative_core(sc, task, variant_at(j), alt), biased);
        }
    }
    if (static_cast<int>(ex.negatives.size()) < cfg.k) {
        throw ConfigError("cannot assemble " + std::to_string(cfg.k) + " distinct negatives for task " +
                          to_string(task) + " at bias_strength " + std::to_string(cfg.bias_strength));
    }
    validate_example(ex, cfg.max_seq_len);
    return ex;
}

inline Scene sample_scene(Sensor sensor, Rng& rng) {
    Scene sc;
    sc.sensor = sensor;
    sc.object = rng.uniform_int(vocab::n_objects);
    sc.count = rng.uniform_int(vocab::n_counts);
    sc.position = rng.uniform_int(vocab::n_positions);
    sc.cue = rng.uniform_int(vocab::n_cues);
    return sc;
}

// Neutral items: content-only scene questions (existence/counting/position)
// with no planted cue and no appearance or physics words in any answer. The
// answers complete the scene description verbatim, so these measure the
// plain QA ability both training modes are supposed to preserve.
inline PreferenceExample make_neutral_example(const std::string& id, Sensor sensor, int index,
                                              const GeneratorConfig& cfg, Rng& rng) {
    static const std::array<Task, 3> neutral_tasks = {Task::existence, Task::counting, Task::position};
    GeneratorConfig unbiased = cfg;
    unbiased.bias_strength = 0.0;
    auto sc = sample_scene(sensor, rng);
    return make_example(id, sc, neutral_tasks[static_cast<size_t>(index) % neutral_tasks.size()],
                        unbiased, rng);
}

inline std::string item_id(const char* split, Sensor sensor, int index) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s-%s-%06d", split, to_string(sensor), index);
    return buf;
}

} // namespace detail

// Train-split task mix: description-heavy, so the appearance-style answer is
// the dominant pattern likelihood training absorbs while physics supervision
// stays sparse. Eval splits cycle the six tasks uniformly.
constexpr std::array<Task, 10> train_task_cycle = {
    Task::general_description, Task::existence,
    Task::general_description, Task::counting,
    Task::general_description, Task::position,
    Task::contextual_understanding, Task::general_description,
    Task::sensor_understanding, Task::general_description,
};

// Deterministic per seed; train/eval item ids are disjoint by construction.
inline GeneratedCorpus generate(const GeneratorConfig& cfg) {
    cfg.validate();
    GeneratedCorpus out;
    Rng rng(cfg.seed);
    int eval_per_sensor = std::max(1, cfg.n_per_sensor);
    for (int s = 0; s < n_sensors; ++s) {
        Sensor sensor = static_cast<Sensor>(s);
        for (int i = 0; i < cfg.n_per_sensor; ++i) {
            auto sc = detail::sample_scene(sensor, rng);
            Task task = train_task_cycle[static_cast<size_t>(i) % train_task_cycle.size()];
            out.train.push_back(detail::make_example(detail::item_id("train", sensor, i), sc, task, cfg, rng));
        }
    }
    for (int s = 0; s < n_sensors; ++s) {
        Sensor sensor = static_cast<Sensor>(s);
        for (int i = 0; i < eval_per_sensor; ++i) {
            auto sc = detail::sample_scene(sensor, rng);
            Task task = static_cast<Task>(i % n_tasks);
            out.eval.push_back(detail::make_example(detail::item_id("eval", sensor, i), sc, task, cfg, rng));
        }
    }
    for (int s = 0; s < n_sensors; ++s) {
        Sensor sensor = static_cast<Sensor>(s);
        for (int i = 0; i < eval_per_sensor; ++i) {
            out.neutral.push_back(detail::make_neutral_example(detail::item_id("neutral", sensor, i),
                                                               sensor, i, cfg, rng));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Line-delimited dataset files (canonical form: fixed key order, one record
// per line, LF terminators; byte-identical re-serialization).
// ---------------------------------------------------------------------------

inline std::string serialize_dataset(const Dataset& data) {
    std::string out;
    for (const auto& ex : data) {
        nlohmann::ordered_json rec;
        rec["id"] = ex.id;
        rec["sensor"] = to_string(ex.sensor);
        rec["task"] = to_string(ex.task);
        rec["context"] = ex.context.ids;
        rec["positive"] = ex.positive.ids;
        auto negs = nlohmann::ordered_json::array();
        for (const auto& n : ex.negatives) negs.push_back(n.ids);
        rec["negatives"] = std::move(negs);
        out += rec.dump();
        out += '\n';
    }
    return out;
}

inline void save_dataset(const Dataset& data, const std::string& path) {
    atomic_write_file(path, serialize_dataset(data));
}

inline Dataset parse_dataset(const std::string& text, int max_seq_len = 48) {
    Dataset out;
    std::istringstream in(text);
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError("line " + std::to_string(line_no) + ": " + e.what(), line_no);
        }
        PreferenceExample ex;
        try {
            ex.id = rec.at("id").get<std::string>();
            ex.sensor = sensor_from_string(rec.at("sensor").get<std::string>());
            ex.task = task_from_string(rec.at("task").get<std::string>());
            ex.context = TokenSequence(rec.at("context").get<std::vector<int>>());
            ex.positive = TokenSequence(rec.at("positive").get<std::vector<int>>());
            for (const auto& n : rec.at("negatives")) {
                ex.negatives.push_back(TokenSequence(n.get<std::vector<int>>()));
            }
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("line " + std::to_string(line_no) + ": " + e.what(), line_no);
        }
        validate_example(ex, max_seq_len);
        out.push_back(std::move(ex));
    }
    return out;
}

inline Dataset load_dataset(const std::string& path, int max_seq_len = 48) {
    return parse_dataset(read_file_text(path), max_seq_len);
}

} // namespace prefopt
