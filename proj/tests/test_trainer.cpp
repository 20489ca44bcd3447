#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "prefopt/trainer.hpp"

using namespace prefopt;

namespace {

ModelConfig trainer_model_config(uint64_t seed = 100) {
    ModelConfig c;
    c.vocab_size = 64;
    c.d_model = 8;
    c.n_layers = 2;
    c.n_heads = 2;
    c.max_seq_len = 24;
    c.init_seed = seed;
    return c;
}

GeneratedCorpus small_corpus(uint64_t seed = 50) {
    GeneratorConfig g;
    g.seed = seed;
    g.n_per_sensor = 6;
    g.k = 3;
    return generate(g);
}

TrainConfig quick_train_config(Method m = Method::saft) {
    TrainConfig cfg;
    cfg.objective.method = m;
    cfg.steps = 5;
    cfg.batch_size = 4;
    cfg.probe_every = 2;
    cfg.seed = 9;
    return cfg;
}

} // namespace

TEST_CASE("adamw first step on a single weight matches the hand-evaluated recurrence") {
    auto w = make_tensor({1}, {1.0});
    w->grad[0] = 1.0;
    AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    auto state = AdamWState::for_params({w});
    adamw_step({w}, state, cfg, 0.001);
    // bias-corrected mhat = vhat = 1, so the update is -lr / (1 + eps)
    double expected = 1.0 - 0.001 * (1.0 / (1.0 + 1e-8));
    CHECK(w->values[0] == Catch::Approx(expected).margin(1e-12));
    CHECK(w->values[0] == Catch::Approx(1.0 - 0.001).margin(1e-8));
}

TEST_CASE("adamw with zero gradients and zero decay leaves parameters untouched") {
    auto w = make_tensor({2, 2}, {0.5, -1.5, 2.0, 0.0});
    auto before = w->values;
    AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    auto state = AdamWState::for_params({w});
    for (int i = 0; i < 3; ++i) adamw_step({w}, state, cfg, 0.01);
    CHECK(w->values == before);
}

TEST_CASE("adamw decoupled decay shrinks weights multiplicatively when g = 0") {
    auto w = make_tensor({1}, {2.0});
    AdamWConfig cfg; // weight_decay 0.01
    auto state = AdamWState::for_params({w});
    double lr = 0.1;
    adamw_step({w}, state, cfg, lr);
    CHECK(w->values[0] == 2.0 - lr * (cfg.weight_decay * 2.0));
    CHECK(w->values[0] == Catch::Approx(2.0 * (1.0 - lr * cfg.weight_decay)).margin(1e-12));
}

TEST_CASE("adamw rejects mismatched state") {
    auto w = make_tensor({2}, {1.0, 2.0});
    auto other = make_tensor({3}, {1.0, 2.0, 3.0});
    auto state = AdamWState::for_params({other});
    CHECK_THROWS_AS(adamw_step({w}, state, AdamWConfig{}, 0.01), ContractError);
}

TEST_CASE("zero learning rate leaves the model bit-identical but still probes") {
    auto corpus = small_corpus();
    auto model = init_model(trainer_model_config());
    auto before = serialize_checkpoint(model);
    auto cfg = quick_train_config();
    cfg.learning_rate = 0.0;
    auto trace = train(model, corpus.train, corpus.eval, cfg);
    CHECK(serialize_checkpoint(model) == before);
    CHECK(trace.rows.size() >= 3);
    for (const auto& r : trace.rows) {
        CHECK(std::isfinite(r.probe_pos_alp));
        CHECK(std::isfinite(r.probe_neg_alp));
    }
}

TEST_CASE("single full-batch step matches the direct summation oracle") {
    auto corpus = small_corpus(51);
    auto model = init_model(trainer_model_config(7));
    auto frozen = model.clone();

    TrainConfig cfg = quick_train_config(Method::saft);
    cfg.steps = 1;
    cfg.batch_size = static_cast<int>(corpus.train.size());
    auto trace = train(model, corpus.train, corpus.eval, cfg);

    // oracle: recompute the batch loss by direct summation on the frozen copy
    double acc = 0.0;
    for (const auto& ex : corpus.train) {
        acc += saft_loss_t(frozen, ex, cfg.objective).total->item();
    }
    double oracle = acc / static_cast<double>(corpus.train.size());
    REQUIRE(trace.rows.size() >= 2);
    CHECK(trace.rows[0].total_loss == Catch::Approx(oracle).margin(1e-12));
    CHECK(trace.rows[1].total_loss == Catch::Approx(oracle).margin(1e-12));
}

TEST_CASE("trace decomposition sums to the total within 1e-12") {
    auto corpus = small_corpus(52);
    auto model = init_model(trainer_model_config(8));
    for (Method m : {Method::saft, Method::sft_simpo}) {
        auto trace = train(model, corpus.train, corpus.eval, quick_train_config(m));
        for (const auto& r : trace.rows) {
            CHECK(std::abs(r.total_loss - (r.sft_loss + r.pref_loss)) < 1e-12);
        }
    }
}

TEST_CASE("training is deterministic: same seed gives identical artifacts") {
    auto corpus = small_corpus(53);
    auto run = [&] {
        auto model = init_model(trainer_model_config(3));
        auto trace = train(model, corpus.train, corpus.eval, quick_train_config());
        return std::pair{serialize_trace_csv(trace), serialize_checkpoint(model)};
    };
    auto [trace_a, ckpt_a] = run();
    auto [trace_b, ckpt_b] = run();
    CHECK(trace_a == trace_b);
    CHECK(ckpt_a == ckpt_b);

    auto model = init_model(trainer_model_config(3));
    auto cfg = quick_train_config();
    cfg.seed = 10;
    auto trace_c = serialize_trace_csv(train(model, corpus.train, corpus.eval, cfg));
    CHECK(trace_a != trace_c);
}

TEST_CASE("one step with positive learning rate moves at least one parameter") {
    auto corpus = small_corpus(54);
    auto model = init_model(trainer_model_config(4));
    auto before = serialize_checkpoint(model);
    auto cfg = quick_train_config(Method::sft);
    cfg.steps = 1;
    train(model, corpus.train, corpus.eval, cfg);
    CHECK(serialize_checkpoint(model) != before);
}

TEST_CASE("reference copies are immutable while training continues") {
    auto corpus = small_corpus(55);
    auto model = init_model(trainer_model_config(5));
    auto ref = make_reference(model);
    auto ref_bytes = serialize_checkpoint(ref);
    CHECK(ref_bytes == serialize_checkpoint(model));

    // DPO at the creation instant is exactly ln 2 on any pair
    CHECK(dpo_loss_t(model, &ref, corpus.train[0], 3, 0.1)->item() ==
          Catch::Approx(std::log(2.0)).margin(1e-12));

    auto cfg = quick_train_config(Method::sft_dpo);
    cfg.steps = 8;
    train(model, corpus.train, corpus.eval, cfg, &ref);
    CHECK(serialize_checkpoint(ref) == ref_bytes);
    CHECK(serialize_checkpoint(model) != ref_bytes);
}

TEST_CASE("trainer validates inputs before step 0") {
    auto corpus = small_corpus(56);
    auto model = init_model(trainer_model_config(6));
    auto cfg = quick_train_config();

    CHECK_THROWS_AS(train(model, {}, corpus.eval, cfg), ConfigError);
    CHECK_THROWS_AS(train(model, corpus.train, {}, cfg), ConfigError);

    cfg = quick_train_config(Method::sft_dpo);
    CHECK_THROWS_AS(train(model, corpus.train, corpus.eval, cfg, nullptr), ConfigError);

    cfg = quick_train_config();
    cfg.objective.k = 5; // corpus has 3 negatives per example
    auto before = serialize_checkpoint(model);
    CHECK_THROWS_AS(train(model, corpus.train, corpus.eval, cfg), ConfigError);
    CHECK(serialize_checkpoint(model) == before); // nothing was updated

    cfg = quick_train_config();
    cfg.steps = 0;
    CHECK_THROWS_AS(train(model, corpus.train, corpus.eval, cfg), ConfigError);
}

TEST_CASE("non-finite loss aborts with the step index") {
    auto corpus = small_corpus(57);
    auto model = init_model(trainer_model_config(7));
    auto cfg = quick_train_config(Method::saft);
    cfg.learning_rate = 1e9; // guaranteed blow-up
    cfg.steps = 50;
    try {
        train(model, corpus.train, corpus.eval, cfg);
        FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
        CHECK(e.step >= 1);
        CHECK(std::string(e.what()).find("step") != std::string::npos);
    }
}

TEST_CASE("trace csv round-trips through the parser") {
    auto corpus = small_corpus(58);
    auto model = init_model(trainer_model_config(8));
    auto trace = train(model, corpus.train, corpus.eval, quick_train_config());
    auto csv = serialize_trace_csv(trace);
    auto parsed = parse_trace_csv(csv);
    REQUIRE(parsed.rows.size() == trace.rows.size());
    for (size_t i = 0; i < parsed.rows.size(); ++i) {
        CHECK(parsed.rows[i].step == trace.rows[i].step);
        CHECK(parsed.rows[i].total_loss == trace.rows[i].total_loss);
        CHECK(parsed.rows[i].probe_neg_alp == trace.rows[i].probe_neg_alp);
    }
    CHECK(serialize_trace_csv(parsed) == csv);

    CHECK_THROWS_AS(parse_trace_csv("bogus header\n1,2,3\n"), ParseError);
    try {
        parse_trace_csv("step,total_loss,sft_loss,pref_loss,probe_pos_alp,probe_neg_alp\n1,2,oops\n");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line == 2);
    }
}

TEST_CASE("monotone step indices and finite entries in every trace") {
    auto corpus = small_corpus(59);
    auto model = init_model(trainer_model_config(9));
    auto trace = train(model, corpus.train, corpus.eval, quick_train_config());
    int prev = -1;
    for (const auto& r : trace.rows) {
        CHECK(r.step > prev);
        prev = r.step;
        CHECK(std::isfinite(r.total_loss));
        CHECK(std::isfinite(r.sft_loss));
        CHECK(std::isfinite(r.pref_loss));
    }
    CHECK(trace.rows.front().step == 0);
    CHECK(trace.rows.back().step == 5);
}
