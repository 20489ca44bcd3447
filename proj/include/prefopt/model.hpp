#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "prefopt/rng.hpp"
#include "prefopt/tensor.hpp"

namespace prefopt {

// Tiny decoder-only autoregressive model: pre-norm causal self-attention,
// learned positional embeddings, GELU feed-forward. It is the conditional
// sequence scorer behind every objective; its only jobs are per-token
// log-probabilities and their gradients.

struct ModelConfig {
    int vocab_size = 64;
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 4;
    int max_seq_len = 48;
    uint64_t init_seed = 0;

    void validate() const {
        if (vocab_size <= 0 || d_model <= 0 || n_layers <= 0 || n_heads <= 0 || max_seq_len <= 0) {
            throw ConfigError("model config fields must be positive");
        }
        if (d_model % n_heads != 0) {
            throw ConfigError("d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                              std::to_string(n_heads));
        }
    }

    int head_dim() const { return d_model / n_heads; }
    int mlp_hidden() const { return 4 * d_model; }
};

struct TokenSequence {
    std::vector<int> ids;

    TokenSequence() = default;
    explicit TokenSequence(std::vector<int> tok) : ids(std::move(tok)) {}
    int length() const { return static_cast<int>(ids.size()); }
    bool empty() const { return ids.empty(); }
    bool operator==(const TokenSequence&) const = default;
};

struct LayerWeights {
    TensorPtr ln1_g, ln1_b;
    TensorPtr wq, wk, wv, wo;
    TensorPtr ln2_g, ln2_b;
    TensorPtr w1, b1, w2, b2;
};

struct ModelParameters {
    ModelConfig config;
    TensorPtr tok_emb; // [vocab x d]
    TensorPtr pos_emb; // [max_seq x d]
    std::vector<LayerWeights> layers;
    TensorPtr lnf_g, lnf_b;
    TensorPtr head; // [d x vocab]

    // Fixed manifest order; checkpoint layout and optimizer state follow it.
    std::vector<std::pair<std::string, TensorPtr>> named() const {
        std::vector<std::pair<std::string, TensorPtr>> out;
        out.push_back({"tok_emb", tok_emb});
        out.push_back({"pos_emb", pos_emb});
        for (size_t i = 0; i < layers.size(); ++i) {
            const auto& l = layers[i];
            std::string p = "layer" + std::to_string(i) + ".";
            out.push_back({p + "ln1.g", l.ln1_g});
            out.push_back({p + "ln1.b", l.ln1_b});
            out.push_back({p + "attn.wq", l.wq});
            out.push_back({p + "attn.wk", l.wk});
            out.push_back({p + "attn.wv", l.wv});
            out.push_back({p + "attn.wo", l.wo});
            out.push_back({p + "ln2.g", l.ln2_g});
            out.push_back({p + "ln2.b", l.ln2_b});
            out.push_back({p + "mlp.w1", l.w1});
            out.push_back({p + "mlp.b1", l.b1});
            out.push_back({p + "mlp.w2", l.w2});
            out.push_back({p + "mlp.b2", l.b2});
        }
        out.push_back({"ln_f.g", lnf_g});
        out.push_back({"ln_f.b", lnf_b});
        out.push_back({"head", head});
        return out;
    }

    std::vector<TensorPtr> all_tensors() const {
        std::vector<TensorPtr> out;
        for (auto& [name, t] : named()) out.push_back(t);
        return out;
    }

    int64_t parameter_count() const {
        int64_t n = 0;
        for (auto& [name, t] : named()) n += t->numel();
        return n;
    }

    void zero_grad() const {
        for (auto& t : all_tensors()) t->zero_grad();
    }

    // Deep copy; weight values are duplicated, gradients reset to zero.
    ModelParameters clone() const {
        ModelParameters out;
        out.config = config;
        auto dup = [](const TensorPtr& t) { return make_tensor(t->shape, t->values); };
        out.tok_emb = dup(tok_emb);
        out.pos_emb = dup(pos_emb);
        for (const auto& l : layers) {
            out.layers.push_back({dup(l.ln1_g), dup(l.ln1_b), dup(l.wq), dup(l.wk), dup(l.wv),
                                  dup(l.wo), dup(l.ln2_g), dup(l.ln2_b), dup(l.w1), dup(l.b1),
                                  dup(l.w2), dup(l.b2)});
        }
        out.lnf_g = dup(lnf_g);
        out.lnf_b = dup(lnf_b);
        out.head = dup(head);
        return out;
    }
};

// Seeded init: embeddings and projection matrices 0.02 * standard normal,
// layer-norm gains 1, all biases 0. Deterministic per seed.
inline ModelParameters init_model(const ModelConfig& config) {
    config.validate();
    Rng rng(config.init_seed);
    auto normal_init = [&rng](std::vector<int> shape) {
        int64_t n = 1;
        for (int d : shape) n *= d;
        std::vector<double> vals(static_cast<size_t>(n));
        for (double& v : vals) v = 0.02 * rng.normal();
        return make_tensor(std::move(shape), std::move(vals));
    };
    auto const_init = [](std::vector<int> shape, double c) {
        int64_t n = 1;
        for (int d : shape) n *= d;
        return make_tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), c));
    };

    int d = config.d_model, v = config.vocab_size, h = config.mlp_hidden();
    ModelParameters p;
    p.config = config;
    p.tok_emb = normal_init({v, d});
    p.pos_emb = normal_init({config.max_seq_len, d});
    for (int i = 0; i < config.n_layers; ++i) {
        LayerWeights l;
        l.ln1_g = const_init({d}, 1.0);
        l.ln1_b = const_init({d}, 0.0);
        l.wq = normal_init({d, d});
        l.wk = normal_init({d, d});
        l.wv = normal_init({d, d});
        l.wo = normal_init({d, d});
        l.ln2_g = const_init({d}, 1.0);
        l.ln2_b = const_init({d}, 0.0);
        l.w1 = normal_init({d, h});
        l.b1 = const_init({h}, 0.0);
        l.w2 = normal_init({h, d});
        l.b2 = const_init({d}, 0.0);
        p.layers.push_back(std::move(l));
    }
    p.lnf_g = const_init({d}, 1.0);
    p.lnf_b = const_init({d}, 0.0);
    p.head = normal_init({d, v});
    return p;
}

// Causal logits for a token sequence: row t depends on tokens <= t only.
inline TensorPtr forward_logits(const ModelParameters& p, const std::vector<int>& ids) {
    int len = static_cast<int>(ids.size());
    if (len < 1) throw ContractError("forward_logits: empty token sequence");
    if (len > p.config.max_seq_len) {
        throw ContractError("forward_logits: sequence length " + std::to_string(len) +
                            " exceeds max_seq_len " + std::to_string(p.config.max_seq_len));
    }
    for (int id : ids) {
        if (id < 0 || id >= p.config.vocab_size) {
            throw ContractError("forward_logits: token id " + std::to_string(id) + " out of vocab");
        }
    }

    std::vector<int> positions(ids.size());
    for (int i = 0; i < len; ++i) positions[i] = i;
    auto x = add(gather_rows(p.tok_emb, ids), gather_rows(p.pos_emb, positions));

    int n_heads = p.config.n_heads;
    int hd = p.config.head_dim();
    double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));

    for (const auto& l : p.layers) {
        auto normed = layer_norm(x, l.ln1_g, l.ln1_b);
        auto q = matmul(normed, l.wq);
        auto k = matmul(normed, l.wk);
        auto v = matmul(normed, l.wv);
        std::vector<TensorPtr> heads;
        heads.reserve(n_heads);
        for (int h = 0; h < n_heads; ++h) {
            auto qh = slice_cols(q, h * hd, (h + 1) * hd);
            auto kh = slice_cols(k, h * hd, (h + 1) * hd);
            auto vh = slice_cols(v, h * hd, (h + 1) * hd);
            auto scores = scale(matmul(qh, transpose(kh)), inv_sqrt_hd);
            heads.push_back(matmul(softmax_causal(scores), vh));
        }
        x = add(x, matmul(concat_cols(heads), l.wo));
        auto normed2 = layer_norm(x, l.ln2_g, l.ln2_b);
        auto hterm = gelu(add_rowvec(matmul(normed2, l.w1), l.b1));
        x = add(x, add_rowvec(matmul(hterm, l.w2), l.b2));
    }
    return matmul(layer_norm(x, p.lnf_g, p.lnf_b), p.head);
}

inline TensorPtr forward_logits(const ModelParameters& p, const TokenSequence& tokens) {
    return forward_logits(p, tokens.ids);
}

// Teacher-forced log pi(y | x): sum over answer positions of the realized
// token's log-softmax probability. Context tokens contribute no terms; the
// answer must be nonempty (|y| = 0 would leave the length-normalized reward
// undefined).
inline TensorPtr answer_log_prob_t(const ModelParameters& p, const TokenSequence& context,
                                   const TokenSequence& answer) {
    if (answer.empty()) throw ContractError("answer_log_prob: empty answer");
    if (context.empty()) throw ContractError("answer_log_prob: empty context");
    int c = context.length(), m = answer.length();
    if (c + m > p.config.max_seq_len) {
        throw ContractError("answer_log_prob: combined length " + std::to_string(c + m) +
                            " exceeds max_seq_len " + std::to_string(p.config.max_seq_len));
    }
    // The last answer token is never an input: position c+m-2 already
    // predicts it.
    std::vector<int> input = context.ids;
    input.insert(input.end(), answer.ids.begin(), answer.ids.end() - 1);
    auto lsm = log_softmax(forward_logits(p, input));
    auto rows = slice_rows(lsm, c - 1, c - 1 + m);
    return sum(take_per_row(rows, answer.ids));
}

// log pi(y | x) / |y|; |y| counts answer tokens including the terminal
// end-of-answer marker.
inline TensorPtr avg_log_prob_t(const ModelParameters& p, const TokenSequence& context,
                                const TokenSequence& answer) {
    return scale(answer_log_prob_t(p, context, answer), 1.0 / answer.length());
}

inline double answer_log_prob(const ModelParameters& p, const TokenSequence& context,
                              const TokenSequence& answer) {
    return answer_log_prob_t(p, context, answer)->item();
}

inline double avg_log_prob(const ModelParameters& p, const TokenSequence& context,
                           const TokenSequence& answer) {
    return avg_log_prob_t(p, context, answer)->item();
}

} // namespace prefopt
