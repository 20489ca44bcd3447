#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "prefopt/data.hpp"
#include "prefopt/io.hpp"
#include "prefopt/model.hpp"

namespace prefopt {

// Multiple-choice evaluation: every candidate answer is scored by its
// length-normalized log-probability and the argmax is the prediction. An
// item is correct iff the positive outranks all stored negatives.

inline std::vector<double> score_candidates(const ModelParameters& p, const TokenSequence& context,
                                            const std::vector<TokenSequence>& candidates) {
    if (candidates.size() < 2) throw ContractError("score_candidates: need at least 2 candidates");
    std::vector<double> scores;
    scores.reserve(candidates.size());
    for (const auto& cand : candidates) {
        if (cand.empty()) throw ContractError("score_candidates: empty candidate answer");
        scores.push_back(avg_log_prob(p, context, cand));
    }
    return scores;
}

// Argmax with ties broken toward the lowest index.
inline int predict(const std::vector<double>& scores) {
    if (scores.empty()) throw ContractError("predict: empty score list");
    int best = 0;
    for (int i = 1; i < static_cast<int>(scores.size()); ++i) {
        if (scores[i] > scores[best]) best = i;
    }
    return best;
}

struct CellStat {
    long n = 0;
    long correct = 0;
    double accuracy_pct() const { return n == 0 ? 0.0 : 100.0 * static_cast<double>(correct) / n; }
};

struct EvaluationReport {
    // counts per (sensor, task); accuracies are exact integer ratios
    std::array<std::array<CellStat, n_tasks>, n_sensors> cells{};
    long total_n = 0;
    long total_correct = 0;
    // positive-minus-best-negative score gaps
    double margin_mean = 0.0;
    double margin_min = 0.0;

    const CellStat& cell(Sensor s, Task t) const {
        return cells[static_cast<size_t>(s)][static_cast<size_t>(t)];
    }
    CellStat& cell(Sensor s, Task t) { return cells[static_cast<size_t>(s)][static_cast<size_t>(t)]; }

    // Arithmetic mean of the covered task accuracies in the given group.
    template <size_t N>
    double group_avg(Sensor s, const std::array<Task, N>& tasks) const {
        double acc = 0.0;
        int covered = 0;
        for (Task t : tasks) {
            if (cell(s, t).n > 0) {
                acc += cell(s, t).accuracy_pct();
                ++covered;
            }
        }
        return covered == 0 ? 0.0 : acc / covered;
    }

    double perception_avg(Sensor s) const { return group_avg(s, perception_tasks); }
    double understanding_avg(Sensor s) const { return group_avg(s, understanding_tasks); }
    double overall_pct() const {
        return total_n == 0 ? 0.0 : 100.0 * static_cast<double>(total_correct) / total_n;
    }
};

inline EvaluationReport evaluate(const ModelParameters& p, const Dataset& data) {
    for (const auto& ex : data) {
        auto check = [&](const TokenSequence& t) {
            for (int id : t.ids) {
                if (id >= p.config.vocab_size) {
                    throw ValidationError("example " + ex.id + ": token id " + std::to_string(id) +
                                          " outside model vocab " + std::to_string(p.config.vocab_size));
                }
            }
        };
        check(ex.context);
        check(ex.positive);
        for (const auto& n : ex.negatives) check(n);
    }

    EvaluationReport report;
    double margin_sum = 0.0;
    double margin_min = std::numeric_limits<double>::infinity();
    for (const auto& ex : data) {
        std::vector<TokenSequence> candidates;
        candidates.reserve(ex.negatives.size() + 1);
        candidates.push_back(ex.positive);
        for (const auto& n : ex.negatives) candidates.push_back(n);
        auto scores = score_candidates(p, ex.context, candidates);
        bool correct = predict(scores) == 0;

        double best_neg = scores[1];
        for (size_t i = 2; i < scores.size(); ++i) best_neg = std::max(best_neg, scores[i]);
        double margin = scores[0] - best_neg;
        margin_sum += margin;
        margin_min = std::min(margin_min, margin);

        auto& cell = report.cell(ex.sensor, ex.task);
        cell.n += 1;
        cell.correct += correct ? 1 : 0;
        report.total_n += 1;
        report.total_correct += correct ? 1 : 0;
    }
    report.margin_mean = data.empty() ? 0.0 : margin_sum / static_cast<double>(data.size());
    report.margin_min = data.empty() ? 0.0 : margin_min;
    return report;
}

// Report CSV: one row per covered (sensor, task), perception/understanding
// summary rows per sensor, and a final overall row.
inline std::string serialize_report_csv(const EvaluationReport& report) {
    auto pct = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.4f", v);
        return std::string(buf);
    };
    std::string out = "sensor,task,n_items,n_correct,accuracy_pct\n";
    for (int s = 0; s < n_sensors; ++s) {
        Sensor sensor = static_cast<Sensor>(s);
        for (int t = 0; t < n_tasks; ++t) {
            const auto& cell = report.cell(sensor, static_cast<Task>(t));
            if (cell.n == 0) continue;
            out += std::string(to_string(sensor)) + "," + to_string(static_cast<Task>(t)) + "," +
                   std::to_string(cell.n) + "," + std::to_string(cell.correct) + "," +
                   pct(cell.accuracy_pct()) + "\n";
        }
        auto group_row = [&](const char* label, auto tasks, double avg) {
            long n = 0, correct = 0;
            for (Task t : tasks) {
                n += report.cell(sensor, t).n;
                correct += report.cell(sensor, t).correct;
            }
            if (n == 0) return;
            out += std::string(to_string(sensor)) + "," + label + "," + std::to_string(n) + "," +
                   std::to_string(correct) + "," + pct(avg) + "\n";
        };
        group_row("perception_avg", perception_tasks, report.perception_avg(sensor));
        group_row("understanding_avg", understanding_tasks, report.understanding_avg(sensor));
    }
    out += "overall,all," + std::to_string(report.total_n) + "," +
           std::to_string(report.total_correct) + "," + pct(report.overall_pct()) + "\n";
    return out;
}

inline void save_report(const EvaluationReport& report, const std::string& path) {
    atomic_write_file(path, serialize_report_csv(report));
}

} // namespace prefopt
