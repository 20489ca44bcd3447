#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "prefopt/checkpoint.hpp"
#include "prefopt/data.hpp"
#include "prefopt/io.hpp"
#include "prefopt/model.hpp"
#include "prefopt/objectives.hpp"
#include "prefopt/rng.hpp"

namespace prefopt {

// Minibatch training loop: seeded sampling without replacement per epoch,
// per-method loss assembly, AdamW updates, and probe-set trajectory tracing
// (the positive/negative mean avg_log_prob curves).

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

struct TrainConfig {
    ObjectiveConfig objective;
    double learning_rate = 3e-4;
    int steps = 100;
    int batch_size = 8;
    AdamWConfig adamw;
    uint64_t seed = 0;
    int probe_every = 10;
    int probe_cap = 32; // probe metrics use at most this many probe examples

    void validate() const {
        objective.validate();
        // learning_rate 0 is allowed: it is the documented null-update case.
        if (learning_rate < 0.0) throw ConfigError("learning_rate must be nonnegative");
        if (steps < 1) throw ConfigError("steps must be >= 1");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (probe_every < 1) throw ConfigError("probe_every must be >= 1");
        if (probe_cap < 1) throw ConfigError("probe_cap must be >= 1");
        if (adamw.beta1 <= 0.0 || adamw.beta1 >= 1.0 || adamw.beta2 <= 0.0 || adamw.beta2 >= 1.0) {
            throw ConfigError("adamw betas must lie in (0, 1)");
        }
        if (adamw.eps <= 0.0) throw ConfigError("adamw eps must be positive");
        if (adamw.weight_decay < 0.0) throw ConfigError("weight_decay must be nonnegative");
    }
};

struct TraceRow {
    int step = 0;
    double total_loss = 0.0;
    double sft_loss = 0.0;
    double pref_loss = 0.0;
    double probe_pos_alp = 0.0;
    double probe_neg_alp = 0.0;
};

struct TrainingTrace {
    std::vector<TraceRow> rows;
};

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string serialize_trace_csv(const TrainingTrace& trace) {
    std::string out = "step,total_loss,sft_loss,pref_loss,probe_pos_alp,probe_neg_alp\n";
    for (const auto& r : trace.rows) {
        out += std::to_string(r.step) + "," + format_double(r.total_loss) + "," +
               format_double(r.sft_loss) + "," + format_double(r.pref_loss) + "," +
               format_double(r.probe_pos_alp) + "," + format_double(r.probe_neg_alp) + "\n";
    }
    return out;
}

inline void save_trace(const TrainingTrace& trace, const std::string& path) {
    atomic_write_file(path, serialize_trace_csv(trace));
}

inline TrainingTrace parse_trace_csv(const std::string& text) {
    TrainingTrace trace;
    size_t pos = 0;
    long line_no = 0;
    while (pos < text.size()) {
        size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        std::string line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (line.empty()) continue;
        if (line_no == 1) {
            if (line != "step,total_loss,sft_loss,pref_loss,probe_pos_alp,probe_neg_alp") {
                throw ParseError("line 1: unexpected trace header", 1);
            }
            continue;
        }
        TraceRow r;
        char* cur = line.data();
        char* next = nullptr;
        double fields[6];
        for (int f = 0; f < 6; ++f) {
            fields[f] = std::strtod(cur, &next);
            if (next == cur || (f < 5 && *next != ',')) {
                throw ParseError("line " + std::to_string(line_no) + ": malformed trace row", line_no);
            }
            cur = next + 1;
        }
        if (*next != '\0') {
            throw ParseError("line " + std::to_string(line_no) + ": trailing junk in trace row", line_no);
        }
        r.step = static_cast<int>(fields[0]);
        r.total_loss = fields[1];
        r.sft_loss = fields[2];
        r.pref_loss = fields[3];
        r.probe_pos_alp = fields[4];
        r.probe_neg_alp = fields[5];
        trace.rows.push_back(r);
    }
    return trace;
}

inline TrainingTrace load_trace(const std::string& path) { return parse_trace_csv(read_file_text(path)); }

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

struct AdamWState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    int64_t t = 0;

    static AdamWState for_params(const std::vector<TensorPtr>& params) {
        AdamWState s;
        for (const auto& p : params) {
            s.m.emplace_back(p->values.size(), 0.0);
            s.v.emplace_back(p->values.size(), 0.0);
        }
        return s;
    }
};

// One decoupled-weight-decay Adam update with bias correction:
//   theta <- theta - lr * ( mhat / (sqrt(vhat) + eps) + wd * theta )
inline void adamw_step(const std::vector<TensorPtr>& params, AdamWState& state,
                       const AdamWConfig& cfg, double lr) {
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw ContractError("adamw_step: state tensor count does not match parameters");
    }
    state.t += 1;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (size_t i = 0; i < params.size(); ++i) {
        auto& p = *params[i];
        auto& m = state.m[i];
        auto& v = state.v[i];
        if (m.size() != p.values.size()) {
            throw ContractError("adamw_step: state shape mismatch on parameter " + std::to_string(i));
        }
        for (size_t j = 0; j < p.values.size(); ++j) {
            double g = p.grad[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            double mhat = m[j] / bc1;
            double vhat = v[j] / bc2;
            p.values[j] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * p.values[j]);
        }
    }
}

// Immutable deep copy that serves as the frozen pi_ref for DPO/IPO.
inline ModelParameters make_reference(const ModelParameters& params) { return params.clone(); }

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace detail {

struct BatchLoss {
    double total = 0.0;
    double sft = 0.0;
    double pref = 0.0;
};

// Batch loss graph: mean of per-example totals, in batch order.
inline BatchLoss batch_loss(ModelParameters& model, const Dataset& data,
                            const std::vector<size_t>& batch_idx, const ObjectiveConfig& objective,
                            const std::vector<RefScores>* ref_scores, bool do_backward) {
    TensorPtr total_acc, sft_acc, pref_acc;
    for (size_t idx : batch_idx) {
        const RefScores* ref = ref_scores ? &(*ref_scores)[idx] : nullptr;
        auto loss = example_loss_t(model, data[idx], objective, ref);
        total_acc = total_acc ? add(total_acc, loss.total) : loss.total;
        sft_acc = sft_acc ? add(sft_acc, loss.sft) : loss.sft;
        if (loss.pref) pref_acc = pref_acc ? add(pref_acc, loss.pref) : loss.pref;
    }
    double inv_b = 1.0 / static_cast<double>(batch_idx.size());
    auto total = scale(total_acc, inv_b);
    BatchLoss out;
    out.total = total->item();
    out.sft = scale(sft_acc, inv_b)->item();
    out.pref = pref_acc ? scale(pref_acc, inv_b)->item() : 0.0;
    if (do_backward) backward(total);
    return out;
}

struct ProbeMetrics {
    double pos_alp = 0.0;
    double neg_alp = 0.0;
};

// Fig. 5 ordinate: probe-set mean length-normalized log-prob of positives
// and of all stored negatives.
inline ProbeMetrics probe_metrics(const ModelParameters& model, const Dataset& probe, int cap) {
    ProbeMetrics out;
    size_t n = std::min(probe.size(), static_cast<size_t>(cap));
    double pos_sum = 0.0, neg_sum = 0.0;
    long neg_count = 0;
    for (size_t i = 0; i < n; ++i) {
        pos_sum += avg_log_prob(model, probe[i].context, probe[i].positive);
        for (const auto& neg : probe[i].negatives) {
            neg_sum += avg_log_prob(model, probe[i].context, neg);
            ++neg_count;
        }
    }
    out.pos_alp = pos_sum / static_cast<double>(n);
    out.neg_alp = neg_sum / static_cast<double>(neg_count);
    return out;
}

} // namespace detail

// Runs cfg.steps minibatch steps of the configured objective over
// train_data, probing on probe_data every probe_every steps (plus a step-0
// baseline row and the final step). Deterministic for a fixed (seed, config,
// dataset) triple.
inline TrainingTrace train(ModelParameters& model, const Dataset& train_data, const Dataset& probe_data,
                           const TrainConfig& cfg, const ModelParameters* ref = nullptr) {
    cfg.validate();
    if (train_data.empty()) throw ConfigError("train: empty dataset");
    if (probe_data.empty()) throw ConfigError("train: empty probe set");
    const auto& obj = cfg.objective;
    if (obj.method != Method::sft) {
        for (const auto& ex : train_data) {
            if (static_cast<int>(ex.negatives.size()) < obj.k) {
                throw ConfigError("example " + ex.id + " has only " +
                                  std::to_string(ex.negatives.size()) + " negatives, objective needs k=" +
                                  std::to_string(obj.k));
            }
        }
    }
    std::vector<RefScores> ref_scores;
    const std::vector<RefScores>* ref_scores_ptr = nullptr;
    if (method_needs_reference(obj.method)) {
        if (ref == nullptr) throw ConfigError("method " + std::string(to_string(obj.method)) +
                                              " requires a frozen reference model");
        ref_scores.reserve(train_data.size());
        for (const auto& ex : train_data) ref_scores.push_back(compute_ref_scores(*ref, ex, obj.k));
        ref_scores_ptr = &ref_scores;
    }

    auto params = model.all_tensors();
    auto state = AdamWState::for_params(params);
    Rng shuffle_rng(cfg.seed);
    std::vector<size_t> order(train_data.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    TrainingTrace trace;
    auto record = [&](int step, const detail::BatchLoss& loss) {
        auto probe = detail::probe_metrics(model, probe_data, cfg.probe_cap);
        TraceRow row{step, loss.total, loss.sft, loss.pref, probe.pos_alp, probe.neg_alp};
        if (!std::isfinite(row.total_loss) || !std::isfinite(row.probe_pos_alp) ||
            !std::isfinite(row.probe_neg_alp)) {
            throw NumericalError("non-finite trace entry at step " + std::to_string(step), step);
        }
        trace.rows.push_back(row);
    };

    size_t cursor = order.size(); // forces a shuffle before the first batch
    auto next_batch = [&]() {
        if (cursor >= order.size()) {
            shuffle_rng.shuffle(order);
            cursor = 0;
        }
        size_t take = std::min(static_cast<size_t>(cfg.batch_size), order.size() - cursor);
        std::vector<size_t> batch(order.begin() + static_cast<long>(cursor),
                                  order.begin() + static_cast<long>(cursor + take));
        cursor += take;
        return batch;
    };

    // Step-0 baseline: first batch's loss before any update.
    auto first_batch = next_batch();
    {
        model.zero_grad();
        auto loss0 = detail::batch_loss(model, train_data, first_batch, obj, ref_scores_ptr, false);
        record(0, loss0);
    }

    for (int step = 1; step <= cfg.steps; ++step) {
        auto batch = (step == 1) ? first_batch : next_batch();
        model.zero_grad();
        detail::BatchLoss loss;
        try {
            loss = detail::batch_loss(model, train_data, batch, obj, ref_scores_ptr, true);
        } catch (const NumericalError& e) {
            throw NumericalError(std::string(e.what()) + " (training step " + std::to_string(step) + ")",
                                 step);
        }
        if (!std::isfinite(loss.total)) {
            throw NumericalError("non-finite loss at training step " + std::to_string(step), step);
        }
        adamw_step(params, state, cfg.adamw, cfg.learning_rate);
        if (step % cfg.probe_every == 0 || step == cfg.steps) record(step, loss);
    }
    return trace;
}

} // namespace prefopt
