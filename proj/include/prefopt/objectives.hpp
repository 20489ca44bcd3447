#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "prefopt/data.hpp"
#include "prefopt/model.hpp"
#include "prefopt/tensor.hpp"

namespace prefopt {

// The loss zoo. The reward r(x,y) = alpha * log pi(y|x) / |y| is the
// length-normalized, alpha-scaled answer log-probability; the DNA loss is a
// margin preference loss averaged over k negatives on that reward, and SAFT
// is its unweighted sum with teacher-forced SFT. DPO/IPO/SimPO are the
// comparison baselines; with multiple negatives each averages pairwise over
// the same k negatives DNA sees.

enum class Method { sft, saft, sft_dpo, sft_ipo, sft_simpo };

inline const char* to_string(Method m) {
    switch (m) {
        case Method::sft: return "sft";
        case Method::saft: return "saft";
        case Method::sft_dpo: return "sft-dpo";
        case Method::sft_ipo: return "sft-ipo";
        case Method::sft_simpo: return "sft-simpo";
    }
    return "?";
}

inline Method method_from_string(const std::string& s) {
    for (Method m : {Method::sft, Method::saft, Method::sft_dpo, Method::sft_ipo, Method::sft_simpo}) {
        if (s == to_string(m)) return m;
    }
    throw ConfigError("unknown method: " + s + " (expected sft, saft, sft-dpo, sft-ipo, sft-simpo)");
}

inline bool method_needs_reference(Method m) { return m == Method::sft_dpo || m == Method::sft_ipo; }

struct ObjectiveConfig {
    Method method = Method::saft;
    double alpha = 2.0;       // reward scale
    double beta_margin = 0.2; // margin inside the sigmoid
    int k = 3;                // negatives consumed per example
    double dpo_beta = 0.1;
    double ipo_tau = 0.1;
    double simpo_beta = 2.0;
    double simpo_gamma = 0.2;
    // Optional weight on the preference term in the combined loss; 1 keeps
    // the plain unweighted sum.
    double preference_weight = 1.0;

    void validate() const {
        if (alpha <= 0.0) throw ConfigError("alpha must be positive");
        if (beta_margin < 0.0) throw ConfigError("beta_margin must be nonnegative");
        if (k < 1) throw ConfigError("k must be >= 1");
        if (dpo_beta <= 0.0) throw ConfigError("dpo_beta must be positive");
        if (ipo_tau <= 0.0) throw ConfigError("ipo_tau must be positive");
        if (simpo_beta <= 0.0) throw ConfigError("simpo_beta must be positive");
        if (simpo_gamma < 0.0) throw ConfigError("simpo_gamma must be nonnegative");
        if (preference_weight < 0.0) throw ConfigError("preference_weight must be nonnegative");
    }
};

// ---------------------------------------------------------------------------
// Scalar forms (plain doubles). These are the formula-level definitions the
// reduction-identity and oracle tests run against.
// ---------------------------------------------------------------------------

// -log sigma(z) as softplus(-z); stays finite for any finite z.
inline double neg_log_sigmoid(double z) {
    return std::max(-z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

inline double sigmoid_value(double z) {
    return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

// Bradley-Terry preference: exp(r+) / (exp(r+) + exp(r-)), computed as
// sigma(r+ - r-).
inline double preference_probability(double r_pos, double r_neg) {
    return sigmoid_value(r_pos - r_neg);
}

// Pairwise MLE loss: -log sigma(r+ - r-).
inline double pairwise_loss(double r_pos, double r_neg) {
    return neg_log_sigmoid(r_pos - r_neg);
}

// DNA loss over k negatives: -(1/k) sum_i log sigma(r+ - r_i- - beta).
// Terms are summed in sorted order so any permutation of the negative set
// produces bit-identical output.
inline double dna_loss(double r_pos, const std::vector<double>& r_negs, double beta_margin) {
    if (r_negs.empty()) throw ContractError("dna_loss: empty negative reward list");
    std::vector<double> terms;
    terms.reserve(r_negs.size());
    for (double rn : r_negs) terms.push_back(neg_log_sigmoid((r_pos - rn) - beta_margin));
    std::sort(terms.begin(), terms.end());
    double acc = 0.0;
    for (double t : terms) acc += t;
    return acc / static_cast<double>(r_negs.size());
}

// ---------------------------------------------------------------------------
// Graph forms (differentiable through the model)
// ---------------------------------------------------------------------------

// r(x, y) = alpha * log pi(y|x) / |y|
inline TensorPtr reward_t(const ModelParameters& p, const TokenSequence& context,
                          const TokenSequence& answer, double alpha) {
    if (alpha <= 0.0) throw ContractError("reward: alpha must be positive");
    return scale(avg_log_prob_t(p, context, answer), alpha);
}

inline double reward(const ModelParameters& p, const TokenSequence& context,
                     const TokenSequence& answer, double alpha) {
    return reward_t(p, context, answer, alpha)->item();
}

namespace detail {

inline TensorPtr neg_log_sigmoid_t(const TensorPtr& z) { return scale(log_sigmoid(z), -1.0); }

inline void require_k_negatives(const PreferenceExample& ex, int k) {
    if (static_cast<int>(ex.negatives.size()) < k) {
        throw DataError("example " + ex.id + " has " + std::to_string(ex.negatives.size()) +
                        " negatives, objective needs k=" + std::to_string(k));
    }
}

} // namespace detail

// Margin preference loss over reward tensors.
inline TensorPtr dna_loss_from_rewards(const TensorPtr& r_pos, const std::vector<TensorPtr>& r_negs,
                                       double beta_margin) {
    if (r_negs.empty()) throw ContractError("dna_loss: empty negative reward list");
    auto beta = scalar_tensor(beta_margin);
    std::vector<TensorPtr> terms;
    terms.reserve(r_negs.size());
    for (const auto& rn : r_negs) {
        terms.push_back(detail::neg_log_sigmoid_t(sub(sub(r_pos, rn), beta)));
    }
    return mean_scalars_sorted(terms);
}

// DNA loss for one example, over its first k stored negatives.
inline TensorPtr dna_loss_t(const ModelParameters& p, const PreferenceExample& ex,
                            const ObjectiveConfig& cfg) {
    detail::require_k_negatives(ex, cfg.k);
    auto r_pos = reward_t(p, ex.context, ex.positive, cfg.alpha);
    std::vector<TensorPtr> r_negs;
    r_negs.reserve(cfg.k);
    for (int i = 0; i < cfg.k; ++i) r_negs.push_back(reward_t(p, ex.context, ex.negatives[i], cfg.alpha));
    return dna_loss_from_rewards(r_pos, r_negs, cfg.beta_margin);
}

// Teacher-forced SFT: mean per-token NLL of the positive answer, i.e.
// -log pi(y+|x) / |y+|.
inline TensorPtr sft_loss_t(const ModelParameters& p, const TokenSequence& context,
                            const TokenSequence& positive) {
    return scale(avg_log_prob_t(p, context, positive), -1.0);
}

struct SaftTerms {
    TensorPtr total;
    TensorPtr sft;
    TensorPtr dna;
};

// L_SAFT = L_SFT + L_DNA (unweighted sum; preference_weight 1 by default).
inline SaftTerms saft_loss_t(const ModelParameters& p, const PreferenceExample& ex,
                             const ObjectiveConfig& cfg) {
    SaftTerms out;
    out.sft = sft_loss_t(p, ex.context, ex.positive);
    out.dna = dna_loss_t(p, ex, cfg);
    out.total = add(out.sft, scale(out.dna, cfg.preference_weight));
    return out;
}

// Frozen-reference raw log-probs for one example, precomputable because the
// reference never moves during training.
struct RefScores {
    double pos_lp = 0.0;
    std::vector<double> neg_lps;
};

inline RefScores compute_ref_scores(const ModelParameters& ref, const PreferenceExample& ex, int k) {
    detail::require_k_negatives(ex, k);
    RefScores out;
    out.pos_lp = answer_log_prob(ref, ex.context, ex.positive);
    for (int i = 0; i < k; ++i) out.neg_lps.push_back(answer_log_prob(ref, ex.context, ex.negatives[i]));
    return out;
}

// DPO with a frozen reference policy, averaged pairwise over k negatives:
// -log sigma( beta * [ (log pi(y+) - log ref(y+)) - (log pi(y-) - log ref(y-)) ] )
inline TensorPtr dpo_loss_t(const ModelParameters& p, const RefScores& ref,
                            const PreferenceExample& ex, int k, double dpo_beta) {
    detail::require_k_negatives(ex, k);
    auto pos_ratio = sub(answer_log_prob_t(p, ex.context, ex.positive), scalar_tensor(ref.pos_lp));
    std::vector<TensorPtr> terms;
    terms.reserve(k);
    for (int i = 0; i < k; ++i) {
        auto neg_ratio = sub(answer_log_prob_t(p, ex.context, ex.negatives[i]),
                             scalar_tensor(ref.neg_lps[i]));
        terms.push_back(detail::neg_log_sigmoid_t(scale(sub(pos_ratio, neg_ratio), dpo_beta)));
    }
    return mean_scalars_sorted(terms);
}

inline TensorPtr dpo_loss_t(const ModelParameters& p, const ModelParameters* ref,
                            const PreferenceExample& ex, int k, double dpo_beta) {
    if (ref == nullptr) throw ConfigError("dpo loss requires a frozen reference model");
    return dpo_loss_t(p, compute_ref_scores(*ref, ex, k), ex, k, dpo_beta);
}

// IPO: squared deviation of the log-ratio difference h from the 1/(2*tau)
// target, averaged over k negatives.
inline TensorPtr ipo_loss_t(const ModelParameters& p, const RefScores& ref,
                            const PreferenceExample& ex, int k, double ipo_tau) {
    detail::require_k_negatives(ex, k);
    auto pos_ratio = sub(answer_log_prob_t(p, ex.context, ex.positive), scalar_tensor(ref.pos_lp));
    auto target = scalar_tensor(1.0 / (2.0 * ipo_tau));
    std::vector<TensorPtr> terms;
    terms.reserve(k);
    for (int i = 0; i < k; ++i) {
        auto neg_ratio = sub(answer_log_prob_t(p, ex.context, ex.negatives[i]),
                             scalar_tensor(ref.neg_lps[i]));
        auto dev = sub(sub(pos_ratio, neg_ratio), target);
        terms.push_back(mul(dev, dev));
    }
    return mean_scalars_sorted(terms);
}

inline TensorPtr ipo_loss_t(const ModelParameters& p, const ModelParameters* ref,
                            const PreferenceExample& ex, int k, double ipo_tau) {
    if (ref == nullptr) throw ConfigError("ipo loss requires a frozen reference model");
    return ipo_loss_t(p, compute_ref_scores(*ref, ex, k), ex, k, ipo_tau);
}

// SimPO: reference-free, length-normalized margin loss
// -log sigma( beta*avg_lp(y+) - beta*avg_lp(y-) - gamma ), averaged over k.
// Structurally dna_loss under (alpha, beta_margin) = (simpo_beta, simpo_gamma).
inline TensorPtr simpo_loss_t(const ModelParameters& p, const PreferenceExample& ex, int k,
                              double simpo_beta, double simpo_gamma) {
    detail::require_k_negatives(ex, k);
    auto pos_scaled = scale(avg_log_prob_t(p, ex.context, ex.positive), simpo_beta);
    auto gamma = scalar_tensor(simpo_gamma);
    std::vector<TensorPtr> terms;
    terms.reserve(k);
    for (int i = 0; i < k; ++i) {
        auto neg_scaled = scale(avg_log_prob_t(p, ex.context, ex.negatives[i]), simpo_beta);
        terms.push_back(detail::neg_log_sigmoid_t(sub(sub(pos_scaled, neg_scaled), gamma)));
    }
    return mean_scalars_sorted(terms);
}

// ---------------------------------------------------------------------------
// Per-example assembly used by the trainer
// ---------------------------------------------------------------------------

struct ExampleLoss {
    TensorPtr total;
    TensorPtr sft;  // always present
    TensorPtr pref; // null for plain SFT
};

inline ExampleLoss example_loss_t(const ModelParameters& p, const PreferenceExample& ex,
                                  const ObjectiveConfig& cfg, const RefScores* ref) {
    ExampleLoss out;
    out.sft = sft_loss_t(p, ex.context, ex.positive);
    switch (cfg.method) {
        case Method::sft:
            out.total = out.sft;
            return out;
        case Method::saft:
            out.pref = dna_loss_t(p, ex, cfg);
            break;
        case Method::sft_dpo:
            if (ref == nullptr) throw ConfigError("sft-dpo requires a frozen reference model");
            out.pref = dpo_loss_t(p, *ref, ex, cfg.k, cfg.dpo_beta);
            break;
        case Method::sft_ipo:
            if (ref == nullptr) throw ConfigError("sft-ipo requires a frozen reference model");
            out.pref = ipo_loss_t(p, *ref, ex, cfg.k, cfg.ipo_tau);
            break;
        case Method::sft_simpo:
            out.pref = simpo_loss_t(p, ex, cfg.k, cfg.simpo_beta, cfg.simpo_gamma);
            break;
    }
    out.total = add(out.sft, scale(out.pref, cfg.preference_weight));
    return out;
}

} // namespace prefopt
