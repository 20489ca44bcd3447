// prefopt: preference-optimization training engine and experiment harness.
//
// Subcommands: gen-data, train, eval, ablate, compare, gradcheck, plot.
// Exit codes: 0 success, 2 usage/config, 3 numerical failure, 4 I/O.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "prefopt/checkpoint.hpp"
#include "prefopt/data.hpp"
#include "prefopt/evaluator.hpp"
#include "prefopt/gradcheck.hpp"
#include "prefopt/manifest.hpp"
#include "prefopt/objectives.hpp"
#include "prefopt/svg.hpp"
#include "prefopt/trainer.hpp"

namespace fs = std::filesystem;
using namespace prefopt;

namespace {

// PREFOPT_SEED overrides --seed for every single-seed command when set.
void apply_env_seed(uint64_t& seed) {
    const char* env = std::getenv("PREFOPT_SEED");
    if (env == nullptr || *env == '\0') return;
    char* end = nullptr;
    unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0') throw ConfigError("PREFOPT_SEED is not an unsigned integer");
    seed = v;
}

std::string join_path(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

// ---------------------------------------------------------------------------
// Shared option bundles
// ---------------------------------------------------------------------------

struct ModelOptions {
    int vocab_size = 64;
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 4;
    int max_seq_len = 48;

    void attach(CLI::App* cmd) {
        cmd->add_option("--vocab-size", vocab_size, "Model vocabulary size")->capture_default_str();
        cmd->add_option("--d-model", d_model, "Model width")->capture_default_str();
        cmd->add_option("--n-layers", n_layers, "Decoder layers")->capture_default_str();
        cmd->add_option("--n-heads", n_heads, "Attention heads")->capture_default_str();
        cmd->add_option("--max-seq-len", max_seq_len, "Maximum sequence length")->capture_default_str();
    }

    ModelConfig config(uint64_t init_seed) const {
        ModelConfig c;
        c.vocab_size = vocab_size;
        c.d_model = d_model;
        c.n_layers = n_layers;
        c.n_heads = n_heads;
        c.max_seq_len = max_seq_len;
        c.init_seed = init_seed;
        return c;
    }

    void record(RunManifest& m) const {
        m.add("vocab_size", static_cast<int64_t>(vocab_size));
        m.add("d_model", static_cast<int64_t>(d_model));
        m.add("n_layers", static_cast<int64_t>(n_layers));
        m.add("n_heads", static_cast<int64_t>(n_heads));
        m.add("max_seq_len", static_cast<int64_t>(max_seq_len));
    }
};

struct TrainOptions {
    std::string method = "saft";
    double alpha = 2.0;
    double beta = 0.2;
    int k = 3;
    double dpo_beta = 0.1;
    double ipo_tau = 0.1;
    double simpo_beta = 2.0;
    double simpo_gamma = 0.2;
    double pref_weight = 1.0;
    double lr = 3e-4;
    int steps = 100;
    int batch_size = 8;
    int probe_every = 10;
    double weight_decay = 0.01;

    void attach(CLI::App* cmd, bool with_method) {
        if (with_method) {
            cmd->add_option("--method", method, "Objective: sft, saft, sft-dpo, sft-ipo, sft-simpo")
                ->capture_default_str();
        }
        cmd->add_option("--alpha", alpha, "Reward scale")->capture_default_str();
        cmd->add_option("--beta", beta, "Preference margin")->capture_default_str();
        cmd->add_option("--k", k, "Negatives consumed per example")->capture_default_str();
        cmd->add_option("--dpo-beta", dpo_beta, "DPO temperature")->capture_default_str();
        cmd->add_option("--ipo-tau", ipo_tau, "IPO tau")->capture_default_str();
        cmd->add_option("--simpo-beta", simpo_beta, "SimPO scale")->capture_default_str();
        cmd->add_option("--simpo-gamma", simpo_gamma, "SimPO margin")->capture_default_str();
        cmd->add_option("--pref-weight", pref_weight, "Weight of the preference term in the combined loss")
            ->capture_default_str();
        cmd->add_option("--lr", lr, "Learning rate")->capture_default_str();
        cmd->add_option("--steps", steps, "Training steps (>= 1)")->capture_default_str();
        cmd->add_option("--batch-size", batch_size, "Minibatch size")->capture_default_str();
        cmd->add_option("--probe-every", probe_every, "Probe interval in steps")->capture_default_str();
        cmd->add_option("--weight-decay", weight_decay, "AdamW decoupled weight decay")
            ->capture_default_str();
    }

    TrainConfig config(uint64_t seed) const {
        TrainConfig c;
        c.objective.method = method_from_string(method);
        c.objective.alpha = alpha;
        c.objective.beta_margin = beta;
        c.objective.k = k;
        c.objective.dpo_beta = dpo_beta;
        c.objective.ipo_tau = ipo_tau;
        c.objective.simpo_beta = simpo_beta;
        c.objective.simpo_gamma = simpo_gamma;
        c.objective.preference_weight = pref_weight;
        c.learning_rate = lr;
        c.steps = steps;
        c.batch_size = batch_size;
        c.probe_every = probe_every;
        c.adamw.weight_decay = weight_decay;
        c.seed = seed;
        return c;
    }

    void record(RunManifest& m) const {
        m.add("method", method);
        m.add("alpha", alpha);
        m.add("beta", beta);
        m.add("k", static_cast<int64_t>(k));
        m.add("dpo_beta", dpo_beta);
        m.add("ipo_tau", ipo_tau);
        m.add("simpo_beta", simpo_beta);
        m.add("simpo_gamma", simpo_gamma);
        m.add("pref_weight", pref_weight);
        m.add("lr", lr);
        m.add("steps", static_cast<int64_t>(steps));
        m.add("batch_size", static_cast<int64_t>(batch_size));
        m.add("probe_every", static_cast<int64_t>(probe_every));
        m.add("weight_decay", weight_decay);
    }
};

// Held-out probe carved from the tail of the training set when no explicit
// probe file is given.
Dataset carve_probe(Dataset& train) {
    size_t n = train.size();
    size_t take = std::clamp<size_t>(n / 10, 1, 64);
    if (take >= n) take = n > 1 ? n / 2 : 0;
    Dataset probe(train.end() - static_cast<long>(take), train.end());
    train.erase(train.end() - static_cast<long>(take), train.end());
    if (probe.empty()) throw ConfigError("dataset too small to carve a probe set");
    return probe;
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

struct GenDataArgs {
    std::string out;
    uint64_t seed = 7;
    int n_per_sensor = 200;
    int k = 3;
    double bias_strength = 0.8;
    int vocab_size = 64;
    int max_seq_len = 48;
};

int cmd_gen_data(GenDataArgs& args) {
    apply_env_seed(args.seed);
    GeneratorConfig cfg;
    cfg.seed = args.seed;
    cfg.n_per_sensor = args.n_per_sensor;
    cfg.k = args.k;
    cfg.bias_strength = args.bias_strength;
    cfg.vocab_size = args.vocab_size;
    cfg.max_seq_len = args.max_seq_len;
    cfg.validate();

    std::string train_path = join_path(args.out, "train.jsonl");
    std::string eval_path = join_path(args.out, "eval.jsonl");
    std::string neutral_path = join_path(args.out, "neutral.jsonl");

    RunManifest manifest;
    manifest.command = "gen-data";
    manifest.seed = args.seed;
    manifest.add("n_per_sensor", static_cast<int64_t>(args.n_per_sensor));
    manifest.add("k", static_cast<int64_t>(args.k));
    manifest.add("bias_strength", args.bias_strength);
    manifest.add("vocab_size", static_cast<int64_t>(args.vocab_size));
    manifest.add("max_seq_len", static_cast<int64_t>(args.max_seq_len));
    manifest.outputs = {train_path, eval_path, neutral_path};
    manifest.write(join_path(args.out, "manifest.json"));

    auto corpus = generate(cfg);
    save_dataset(corpus.train, train_path);
    save_dataset(corpus.eval, eval_path);
    save_dataset(corpus.neutral, neutral_path);
    std::printf("wrote %zu train, %zu eval, %zu neutral records under %s\n", corpus.train.size(),
                corpus.eval.size(), corpus.neutral.size(), args.out.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string data;
    std::string probe_data;
    std::string out_ckpt;
    std::string trace_path;
    std::string ref_ckpt;
    std::string init_ckpt;
    bool auto_ref = false;
    int ref_steps = 0; // 0: same as --steps
    uint64_t seed = 0;
    ModelOptions model;
    TrainOptions topt;
};

int cmd_train(TrainArgs& args) {
    apply_env_seed(args.seed);
    TrainConfig tcfg = args.topt.config(args.seed);
    tcfg.validate();
    Method method = tcfg.objective.method;
    if (method_needs_reference(method) && args.ref_ckpt.empty() && !args.auto_ref) {
        throw ConfigError(std::string(to_string(method)) +
                          " needs --ref-ckpt or --auto-ref to supply the frozen reference");
    }

    RunManifest manifest;
    manifest.command = "train";
    manifest.seed = args.seed;
    args.topt.record(manifest);
    args.model.record(manifest);
    manifest.add("auto_ref", std::string(args.auto_ref ? "true" : "false"));
    manifest.add("ref_steps", static_cast<int64_t>(args.ref_steps));
    manifest.inputs.push_back(args.data);
    if (!args.probe_data.empty()) manifest.inputs.push_back(args.probe_data);
    if (!args.ref_ckpt.empty()) manifest.inputs.push_back(args.ref_ckpt);
    if (!args.init_ckpt.empty()) manifest.inputs.push_back(args.init_ckpt);
    manifest.outputs = {args.out_ckpt, args.trace_path};
    manifest.write(args.out_ckpt + ".manifest.json");

    Dataset train_data = load_dataset(args.data, args.model.max_seq_len);
    if (train_data.empty()) throw ConfigError("training dataset is empty: " + args.data);
    Dataset probe = args.probe_data.empty() ? carve_probe(train_data)
                                            : load_dataset(args.probe_data, args.model.max_seq_len);

    ModelParameters model = args.init_ckpt.empty() ? init_model(args.model.config(args.seed))
                                                   : load_checkpoint(args.init_ckpt);

    std::optional<ModelParameters> reference;
    if (method_needs_reference(method)) {
        if (!args.ref_ckpt.empty()) {
            reference = load_checkpoint(args.ref_ckpt);
        } else {
            // --auto-ref: run a supervised phase to completion first and
            // freeze it as pi_ref; the main run still starts from the base
            // initialization.
            ModelParameters sft_model = model.clone();
            TrainConfig ref_cfg = tcfg;
            ref_cfg.objective = ObjectiveConfig{};
            ref_cfg.objective.method = Method::sft;
            ref_cfg.steps = args.ref_steps > 0 ? args.ref_steps : tcfg.steps;
            train(sft_model, train_data, probe, ref_cfg);
            reference = make_reference(sft_model);
        }
    }

    auto trace = train(model, train_data, probe, tcfg, reference ? &*reference : nullptr);
    save_checkpoint(model, args.out_ckpt);
    save_trace(trace, args.trace_path);
    const auto& last = trace.rows.back();
    std::printf("trained %s for %d steps: final loss %.6f, probe pos %.4f, probe neg %.4f\n",
                to_string(method), tcfg.steps, last.total_loss, last.probe_pos_alp, last.probe_neg_alp);
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string ckpt;
    std::string data;
    std::string report;
};

int cmd_eval(EvalArgs& args) {
    RunManifest manifest;
    manifest.command = "eval";
    manifest.inputs = {args.ckpt, args.data};
    manifest.outputs = {args.report};
    manifest.write(args.report + ".manifest.json");

    auto model = load_checkpoint(args.ckpt);
    auto data = load_dataset(args.data, model.config.max_seq_len);
    auto report = evaluate(model, data);
    save_report(report, args.report);
    std::printf("%ld/%ld correct, overall %.2f%%; margin mean %.4f min %.4f\n", report.total_correct,
                report.total_n, report.overall_pct(), report.margin_mean, report.margin_min);
    for (int s = 0; s < n_sensors; ++s) {
        Sensor sensor = static_cast<Sensor>(s);
        std::printf("  %-8s perception %.2f%%  understanding %.2f%%\n", to_string(sensor),
                    report.perception_avg(sensor), report.understanding_avg(sensor));
    }
    return 0;
}

// ---------------------------------------------------------------------------
// ablate / compare
// ---------------------------------------------------------------------------

struct CellOutcome {
    bool ok = false;
    double accuracy = 0.0;
    std::string error;
};

// One training+evaluation cell in a factorial study; artifacts land in their
// own directory.
CellOutcome run_cell(const std::string& dir, const GeneratedCorpus& corpus, const ModelConfig& mc,
                     const TrainConfig& tcfg, const ModelParameters* ref) {
    CellOutcome out;
    try {
        auto model = init_model(mc);
        auto trace = train(model, corpus.train, corpus.eval, tcfg, ref);
        save_trace(trace, join_path(dir, "trace.csv"));
        save_checkpoint(model, join_path(dir, "model.ckpt"));
        auto report = evaluate(model, corpus.eval);
        save_report(report, join_path(dir, "report.csv"));
        out.ok = true;
        out.accuracy = report.overall_pct();
    } catch (const Error& e) {
        out.error = e.what();
    }
    return out;
}

struct StudyArgs {
    std::string out_dir;
    std::vector<std::string> values;  // ablate only
    std::string param = "k";         // ablate only
    std::vector<std::string> methods; // compare only
    std::vector<uint64_t> seeds;
    int n_per_sensor = 200;
    double bias_strength = 0.8;
    int gen_k = 3;
    ModelOptions model;
    TrainOptions topt;
};

GeneratedCorpus study_corpus(const StudyArgs& args, uint64_t seed, int n_per_sensor, int k) {
    GeneratorConfig g;
    g.seed = seed * 1000;
    g.n_per_sensor = n_per_sensor;
    g.k = k;
    g.bias_strength = args.bias_strength;
    g.vocab_size = args.model.vocab_size;
    g.max_seq_len = args.model.max_seq_len;
    return generate(g);
}

int cmd_ablate(StudyArgs& args) {
    if (args.param != "k" && args.param != "n") {
        throw ConfigError("--param must be k or n, got " + args.param);
    }
    if (args.values.empty() || args.seeds.empty()) throw ConfigError("values and seeds must be nonempty");
    std::vector<int> values;
    for (const auto& v : args.values) {
        int parsed = std::atoi(v.c_str());
        if (parsed < 1) throw ConfigError("bad ablation value: " + v);
        values.push_back(parsed);
    }

    RunManifest manifest;
    manifest.command = "ablate";
    manifest.seed = args.seeds.front();
    manifest.add("param", args.param);
    for (size_t i = 0; i < values.size(); ++i) manifest.add("value" + std::to_string(i), (int64_t)values[i]);
    for (size_t i = 0; i < args.seeds.size(); ++i) manifest.add("seed" + std::to_string(i), (int64_t)args.seeds[i]);
    manifest.add("n_per_sensor", static_cast<int64_t>(args.n_per_sensor));
    manifest.add("bias_strength", args.bias_strength);
    args.topt.record(manifest);
    args.model.record(manifest);
    manifest.outputs = {join_path(args.out_dir, "summary.csv")};
    manifest.write(join_path(args.out_dir, "manifest.json"));

    int max_k = args.gen_k;
    if (args.param == "k") {
        for (int v : values) max_k = std::max(max_k, v);
    }

    std::string summary = "param,value,seed,accuracy_pct,status\n";
    bool any_failed = false;
    for (int value : values) {
        double acc_sum = 0.0;
        int ok_count = 0;
        for (uint64_t seed : args.seeds) {
            int n = args.param == "n" ? value : args.n_per_sensor;
            auto corpus = study_corpus(args, seed, n, max_k);
            TrainConfig tcfg = args.topt.config(seed);
            if (args.param == "k") tcfg.objective.k = value;
            std::string cell_dir = join_path(args.out_dir, "cell-" + args.param + std::to_string(value) +
                                                               "-seed" + std::to_string(seed));
            auto outcome = run_cell(cell_dir, corpus, args.model.config(seed), tcfg, nullptr);
            char row[160];
            if (outcome.ok) {
                std::snprintf(row, sizeof(row), "%s,%d,%llu,%.4f,ok\n", args.param.c_str(), value,
                              (unsigned long long)seed, outcome.accuracy);
                acc_sum += outcome.accuracy;
                ++ok_count;
            } else {
                std::snprintf(row, sizeof(row), "%s,%d,%llu,,failed\n", args.param.c_str(), value,
                              (unsigned long long)seed);
                std::fprintf(stderr, "cell %s failed: %s\n", cell_dir.c_str(), outcome.error.c_str());
                any_failed = true;
            }
            summary += row;
        }
        char mean_row[160];
        if (ok_count > 0) {
            std::snprintf(mean_row, sizeof(mean_row), "%s,%d,mean,%.4f,ok\n", args.param.c_str(), value,
                          acc_sum / ok_count);
        } else {
            std::snprintf(mean_row, sizeof(mean_row), "%s,%d,mean,,failed\n", args.param.c_str(), value);
        }
        summary += mean_row;
    }
    atomic_write_file(join_path(args.out_dir, "summary.csv"), summary);
    std::fputs(summary.c_str(), stdout);
    return any_failed ? 3 : 0;
}

int cmd_compare(StudyArgs& args) {
    if (args.methods.empty() || args.seeds.empty()) throw ConfigError("methods and seeds must be nonempty");
    std::vector<Method> methods;
    for (const auto& name : args.methods) methods.push_back(method_from_string(name)); // before any run
    bool needs_ref = false;
    for (Method m : methods) needs_ref = needs_ref || method_needs_reference(m) || m == Method::sft;

    RunManifest manifest;
    manifest.command = "compare";
    manifest.seed = args.seeds.front();
    for (size_t i = 0; i < methods.size(); ++i) manifest.add("method" + std::to_string(i), std::string(to_string(methods[i])));
    for (size_t i = 0; i < args.seeds.size(); ++i) manifest.add("seed" + std::to_string(i), (int64_t)args.seeds[i]);
    manifest.add("n_per_sensor", static_cast<int64_t>(args.n_per_sensor));
    manifest.add("bias_strength", args.bias_strength);
    args.topt.record(manifest);
    args.model.record(manifest);
    manifest.outputs = {join_path(args.out_dir, "summary.csv")};
    manifest.write(join_path(args.out_dir, "manifest.json"));

    // cells indexed [method][seed]
    std::vector<std::vector<CellOutcome>> outcomes(methods.size(),
                                                   std::vector<CellOutcome>(args.seeds.size()));
    for (size_t si = 0; si < args.seeds.size(); ++si) {
        uint64_t seed = args.seeds[si];
        auto corpus = study_corpus(args, seed, args.n_per_sensor, args.gen_k);
        ModelConfig mc = args.model.config(seed);

        // The supervised run doubles as the frozen reference for DPO/IPO.
        std::optional<ModelParameters> sft_model;
        CellOutcome sft_outcome;
        if (needs_ref) {
            TrainConfig tcfg = args.topt.config(seed);
            tcfg.objective.method = Method::sft;
            std::string dir = join_path(args.out_dir, "sft-seed" + std::to_string(seed));
            sft_model = init_model(mc);
            try {
                auto trace = train(*sft_model, corpus.train, corpus.eval, tcfg);
                save_trace(trace, join_path(dir, "trace.csv"));
                save_checkpoint(*sft_model, join_path(dir, "model.ckpt"));
                auto report = evaluate(*sft_model, corpus.eval);
                save_report(report, join_path(dir, "report.csv"));
                sft_outcome.ok = true;
                sft_outcome.accuracy = report.overall_pct();
            } catch (const Error& e) {
                sft_outcome.error = e.what();
                sft_model.reset();
            }
        }

        for (size_t mi = 0; mi < methods.size(); ++mi) {
            Method m = methods[mi];
            if (m == Method::sft) {
                outcomes[mi][si] = sft_outcome;
                continue;
            }
            TrainConfig tcfg = args.topt.config(seed);
            tcfg.objective.method = m;
            std::string dir = join_path(args.out_dir, std::string(to_string(m)) + "-seed" + std::to_string(seed));
            const ModelParameters* ref = nullptr;
            if (method_needs_reference(m)) {
                if (!sft_model) {
                    outcomes[mi][si].error = "reference run failed: " + sft_outcome.error;
                    continue;
                }
                ref = &*sft_model;
            }
            outcomes[mi][si] = run_cell(dir, corpus, mc, tcfg, ref);
            if (!outcomes[mi][si].ok) {
                std::fprintf(stderr, "cell %s failed: %s\n", dir.c_str(), outcomes[mi][si].error.c_str());
            }
        }
    }

    std::string summary = "method,seed,accuracy_pct,status\n";
    bool any_failed = false;
    for (size_t mi = 0; mi < methods.size(); ++mi) {
        double acc_sum = 0.0;
        int ok_count = 0;
        for (size_t si = 0; si < args.seeds.size(); ++si) {
            const auto& cell = outcomes[mi][si];
            char row[160];
            if (cell.ok) {
                std::snprintf(row, sizeof(row), "%s,%llu,%.4f,ok\n", to_string(methods[mi]),
                              (unsigned long long)args.seeds[si], cell.accuracy);
                acc_sum += cell.accuracy;
                ++ok_count;
            } else {
                std::snprintf(row, sizeof(row), "%s,%llu,,failed\n", to_string(methods[mi]),
                              (unsigned long long)args.seeds[si]);
                any_failed = true;
            }
            summary += row;
        }
        char mean_row[160];
        if (ok_count > 0) {
            std::snprintf(mean_row, sizeof(mean_row), "%s,mean,%.4f,ok\n", to_string(methods[mi]),
                          acc_sum / ok_count);
        } else {
            std::snprintf(mean_row, sizeof(mean_row), "%s,mean,,failed\n", to_string(methods[mi]));
        }
        summary += mean_row;
    }
    atomic_write_file(join_path(args.out_dir, "summary.csv"), summary);
    std::fputs(summary.c_str(), stdout);
    return any_failed ? 3 : 0;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

int cmd_gradcheck(uint64_t seed) {
    apply_env_seed(seed);
    GeneratorConfig g;
    g.seed = seed;
    g.n_per_sensor = 2;
    g.k = 3;
    auto corpus = generate(g);
    Dataset batch(corpus.train.begin(), corpus.train.begin() + 4);

    ModelConfig mc;
    mc.vocab_size = 64;
    mc.d_model = 8;
    mc.n_layers = 2;
    mc.n_heads = 2;
    mc.max_seq_len = 24;
    mc.init_seed = seed;
    auto model = init_model(mc);

    ModelConfig ref_cfg = mc;
    ref_cfg.init_seed = seed + 1;
    auto ref = init_model(ref_cfg);

    ObjectiveConfig obj;
    std::vector<RefScores> ref_scores;
    for (const auto& ex : batch) ref_scores.push_back(compute_ref_scores(ref, ex, obj.k));

    bool all_ok = true;
    std::printf("%-10s %-14s %s\n", "method", "max_rel_err", "status");
    for (Method m : {Method::sft, Method::saft, Method::sft_dpo, Method::sft_ipo, Method::sft_simpo}) {
        obj.method = m;
        auto build = [&] {
            TensorPtr acc;
            for (size_t i = 0; i < batch.size(); ++i) {
                auto loss = example_loss_t(model, batch[i], obj, &ref_scores[i]);
                acc = acc ? add(acc, loss.total) : loss.total;
            }
            return scale(acc, 1.0 / static_cast<double>(batch.size()));
        };
        GradCheckOptions opts;
        opts.step = 1e-4;
        opts.max_coords = 128;
        opts.seed = seed ^ (0x9e37u + static_cast<unsigned>(m));
        auto res = finite_diff_check(build, model.all_tensors(), opts);
        bool ok = res.max_rel_error < 1e-3;
        all_ok = all_ok && ok;
        std::printf("%-10s %-14.3e %s\n", to_string(m), res.max_rel_error, ok ? "PASS" : "FAIL");
    }
    return all_ok ? 0 : 3;
}

// ---------------------------------------------------------------------------
// plot
// ---------------------------------------------------------------------------

struct PlotArgs {
    std::string trace_path;
    std::string out_svg;
};

int cmd_plot(PlotArgs& args) {
    RunManifest manifest;
    manifest.command = "plot";
    manifest.inputs = {args.trace_path};
    manifest.outputs = {args.out_svg};
    manifest.write(args.out_svg + ".manifest.json");

    auto trace = load_trace(args.trace_path);
    save_trace_svg(trace, args.out_svg);
    std::printf("wrote %s (%zu probe rows)\n", args.out_svg.c_str(), trace.rows.size());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"preference-optimization training engine and experiment harness"};
    app.require_subcommand(1);

    GenDataArgs gen_args;
    auto* gen = app.add_subcommand("gen-data", "Generate the synthetic preference corpus");
    gen->add_option("--out", gen_args.out, "Output directory")->required();
    gen->add_option("--seed", gen_args.seed, "Generator seed")->capture_default_str();
    gen->add_option("--n-per-sensor", gen_args.n_per_sensor, "Training examples per sensor")
        ->capture_default_str();
    gen->add_option("--k", gen_args.k, "Negatives per example")->capture_default_str();
    gen->add_option("--bias-strength", gen_args.bias_strength,
                    "Probability that a negative carries the planted surface cue")
        ->capture_default_str();
    gen->add_option("--vocab-size", gen_args.vocab_size, "Token budget")->capture_default_str();
    gen->add_option("--max-seq-len", gen_args.max_seq_len, "Length budget")->capture_default_str();
    gen->set_config("--config");

    TrainArgs train_args;
    auto* tr = app.add_subcommand("train", "Train a model with the selected objective");
    tr->add_option("--data", train_args.data, "Training dataset (.jsonl)")->required();
    tr->add_option("--probe-data", train_args.probe_data,
                   "Held-out probe dataset; defaults to a tail carved off the training set");
    tr->add_option("--out-ckpt", train_args.out_ckpt, "Output checkpoint path")->required();
    tr->add_option("--trace", train_args.trace_path, "Output trace CSV path")->required();
    tr->add_option("--ref-ckpt", train_args.ref_ckpt, "Frozen reference checkpoint (DPO/IPO)");
    tr->add_flag("--auto-ref", train_args.auto_ref,
                 "Run a supervised phase first and freeze it as the reference");
    tr->add_option("--ref-steps", train_args.ref_steps, "Steps for the --auto-ref phase (0: same as --steps)")
        ->capture_default_str();
    tr->add_option("--init-ckpt", train_args.init_ckpt, "Start from this checkpoint instead of fresh init");
    tr->add_option("--seed", train_args.seed, "Training and init seed")->capture_default_str();
    train_args.model.attach(tr);
    train_args.topt.attach(tr, true);
    tr->set_config("--config");

    EvalArgs eval_args;
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
    ev->add_option("--ckpt", eval_args.ckpt, "Model checkpoint")->required();
    ev->add_option("--data", eval_args.data, "Evaluation dataset (.jsonl)")->required();
    ev->add_option("--report", eval_args.report, "Output report CSV")->required();
    ev->set_config("--config");

    StudyArgs ablate_args;
    auto* ab = app.add_subcommand("ablate", "Factorial study over k or n");
    ab->add_option("--param", ablate_args.param, "Swept parameter: k or n")->required();
    ab->add_option("--values", ablate_args.values, "Comma-separated values")->required()->delimiter(',');
    ab->add_option("--seeds", ablate_args.seeds, "Comma-separated seeds")->required()->delimiter(',');
    ab->add_option("--out-dir", ablate_args.out_dir, "Output directory")->required();
    ab->add_option("--n-per-sensor", ablate_args.n_per_sensor, "Examples per sensor (k sweeps)")
        ->capture_default_str();
    ab->add_option("--bias-strength", ablate_args.bias_strength, "Planted-cue probability")
        ->capture_default_str();
    ablate_args.model.attach(ab);
    ablate_args.topt.attach(ab, true);
    ab->set_config("--config");

    StudyArgs compare_args;
    auto* cp = app.add_subcommand("compare", "Method comparison study");
    cp->add_option("--methods", compare_args.methods, "Comma-separated method names")
        ->required()
        ->delimiter(',');
    cp->add_option("--seeds", compare_args.seeds, "Comma-separated seeds")->required()->delimiter(',');
    cp->add_option("--out-dir", compare_args.out_dir, "Output directory")->required();
    cp->add_option("--n-per-sensor", compare_args.n_per_sensor, "Examples per sensor")
        ->capture_default_str();
    cp->add_option("--bias-strength", compare_args.bias_strength, "Planted-cue probability")
        ->capture_default_str();
    compare_args.model.attach(cp);
    compare_args.topt.attach(cp, false);
    cp->set_config("--config");

    uint64_t gradcheck_seed = 0;
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every objective");
    gc->add_option("--seed", gradcheck_seed, "Model/batch seed")->capture_default_str();

    PlotArgs plot_args;
    auto* pl = app.add_subcommand("plot", "Render a trace CSV as an SVG figure");
    pl->add_option("--trace", plot_args.trace_path, "Input trace CSV")->required();
    pl->add_option("--out-svg", plot_args.out_svg, "Output SVG path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return static_cast<int>(ExitCode::usage);
    }

    try {
        if (*gen) return cmd_gen_data(gen_args);
        if (*tr) {
            if (train_args.topt.steps < 1) throw ConfigError("--steps must be >= 1");
            return cmd_train(train_args);
        }
        if (*ev) return cmd_eval(eval_args);
        if (*ab) return cmd_ablate(ablate_args);
        if (*cp) return cmd_compare(compare_args);
        if (*gc) return cmd_gradcheck(gradcheck_seed);
        if (*pl) return cmd_plot(plot_args);
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return static_cast<int>(ExitCode::numerical);
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return static_cast<int>(e.exit_code);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return static_cast<int>(ExitCode::io);
    }
    return 0;
}
