#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "prefopt/errors.hpp"

namespace prefopt {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// One recorded forward operation. Nodes form a DAG through `inputs`;
// backward() visits each reachable node exactly once in reverse
// topological order.
struct TapeNode {
    const char* op;
    std::vector<TensorPtr> inputs;
    std::vector<double> saved;   // forward intermediates needed by the rule
    std::vector<int> saved_ints; // index data (gather ids, slice bounds, ...)
    // Reads this tensor's pass-local gradient, accumulates into the inputs'.
    std::function<void(Tensor&)> backward;
};

// Dense row-major double tensor with a same-shape gradient accumulator.
// `grad` persists across backward calls (they accumulate); `grad_scratch`
// holds the current pass's contribution and is folded into `grad` when the
// pass finishes.
class Tensor {
public:
    std::vector<int> shape;
    std::vector<double> values;
    std::vector<double> grad;
    std::vector<double> grad_scratch;
    std::unique_ptr<TapeNode> node; // null for leaves

    Tensor(std::vector<int> shp, std::vector<double> vals)
        : shape(std::move(shp)), values(std::move(vals)) {
        if (numel() != static_cast<int64_t>(values.size())) {
            throw ShapeError("tensor value count " + std::to_string(values.size()) +
                             " does not match shape " + shape_str());
        }
        grad.assign(values.size(), 0.0);
    }

    int64_t numel() const {
        int64_t n = 1;
        for (int d : shape) n *= d;
        return n;
    }

    bool is_scalar() const { return numel() == 1; }

    int rows() const { return shape.empty() ? 1 : shape[0]; }
    int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    double item() const {
        if (!is_scalar()) throw ContractError("item() on non-scalar tensor of shape " + shape_str());
        return values[0];
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
        os << "]";
        return os.str();
    }

    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

inline TensorPtr make_tensor(std::vector<int> shape, std::vector<double> values) {
    for (int d : shape) {
        if (d <= 0) throw ShapeError("non-positive dimension in tensor shape");
    }
    return std::make_shared<Tensor>(std::move(shape), std::move(values));
}

inline TensorPtr zeros(std::vector<int> shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return make_tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0));
}

inline TensorPtr scalar_tensor(double v) { return make_tensor({1}, {v}); }

namespace detail {

inline std::vector<double>& scratch_of(Tensor& t) {
    if (t.grad_scratch.size() != t.values.size()) t.grad_scratch.assign(t.values.size(), 0.0);
    return t.grad_scratch;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape != b.shape) {
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
}

inline void require_matrix(const Tensor& t, const char* op) {
    if (t.shape.size() != 2) {
        throw ShapeError(std::string(op) + ": expected a 2-d tensor, got " + t.shape_str());
    }
}

// Raw row-major matrix products used by forward matmul and its backward.
inline void gemm_nn(const double* a, const double* b, double* out, int m, int k, int n) {
    std::fill(out, out + static_cast<size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<size_t>(i) * k;
        double* orow = out + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            double av = arow[p];
            const double* brow = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

// out[m x n] += g[m x k] . b[n x k]^T  (accumulating, for dA = G . B^T)
inline void gemm_nt_acc(const double* g, const double* b, double* out, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* grow = g + static_cast<size_t>(i) * k;
        double* orow = out + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = b + static_cast<size_t>(j) * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += grow[p] * brow[p];
            orow[j] += acc;
        }
    }
}

// out[k x n] += a[m x k]^T . g[m x n]  (accumulating, for dB = A^T . G)
inline void gemm_tn_acc(const double* a, const double* g, double* out, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<size_t>(i) * k;
        const double* grow = g + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            double av = arow[p];
            if (av == 0.0) continue;
            double* orow = out + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * grow[j];
        }
    }
}

inline TensorPtr make_op(const char* op, std::vector<int> shape, std::vector<double> values,
                         std::vector<TensorPtr> inputs, std::function<void(Tensor&)> backward,
                         std::vector<double> saved = {}, std::vector<int> saved_ints = {}) {
    auto out = make_tensor(std::move(shape), std::move(values));
    out->node = std::make_unique<TapeNode>();
    out->node->op = op;
    out->node->inputs = std::move(inputs);
    out->node->saved = std::move(saved);
    out->node->saved_ints = std::move(saved_ints);
    out->node->backward = std::move(backward);
    return out;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and structural ops
// ---------------------------------------------------------------------------

inline TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    detail::require_same_shape(*a, *b, "add");
    std::vector<double> out(a->values.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a->values[i] + b->values[i];
    return detail::make_op("add", a->shape, std::move(out), {a, b}, [](Tensor& self) {
        auto& ga = detail::scratch_of(*self.node->inputs[0]);
        auto& gb = detail::scratch_of(*self.node->inputs[1]);
        for (size_t i = 0; i < self.grad_scratch.size(); ++i) {
            ga[i] += self.grad_scratch[i];
            gb[i] += self.grad_scratch[i];
        }
    });
}

inline TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
    detail::require_same_shape(*a, *b, "sub");
    std::vector<double> out(a->values.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a->values[i] - b->values[i];
    return detail::make_op("sub", a->shape, std::move(out), {a, b}, [](Tensor& self) {
        auto& ga = detail::scratch_of(*self.node->inputs[0]);
        auto& gb = detail::scratch_of(*self.node->inputs[1]);
        for (size_t i = 0; i < self.grad_scratch.size(); ++i) {
            ga[i] += self.grad_scratch[i];
            gb[i] -= self.grad_scratch[i];
        }
    });
}

inline TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
    detail::require_same_shape(*a, *b, "mul");
    std::vector<double> out(a->values.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a->values[i] * b->values[i];
    return detail::make_op("mul", a->shape, std::move(out), {a, b}, [](Tensor& self) {
        Tensor& a_in = *self.node->inputs[0];
        Tensor& b_in = *self.node->inputs[1];
        auto& ga = detail::scratch_of(a_in);
        auto& gb = detail::scratch_of(b_in);
        for (size_t i = 0; i < self.grad_scratch.size(); ++i) {
            ga[i] += self.grad_scratch[i] * b_in.values[i];
            gb[i] += self.grad_scratch[i] * a_in.values[i];
        }
    });
}

inline TensorPtr scale(const TensorPtr& a, double c) {
    std::vector<double> out(a->values.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = c * a->values[i];
    return detail::make_op(
        "scale", a->shape, std::move(out), {a},
        [](Tensor& self) {
            double c = self.node->saved[0];
            auto& ga = detail::scratch_of(*self.node->inputs[0]);
            for (size_t i = 0; i < self.grad_scratch.size(); ++i) ga[i] += c * self.grad_scratch[i];
        },
        {c});
}

// out = a + b broadcast over rows; b has length cols(a).
inline TensorPtr add_rowvec(const TensorPtr& a, const TensorPtr& b) {
    detail::require_matrix(*a, "add_rowvec");
    int m = a->shape[0], n = a->shape[1];
    if (b->numel() != n) {
        throw ShapeError("add_rowvec: row vector " + b->shape_str() + " does not match " + a->shape_str());
    }
    std::vector<double> out(a->values.size());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<size_t>(i) * n + j] = a->values[static_cast<size_t>(i) * n + j] + b->values[j];
    return detail::make_op("add_rowvec", a->shape, std::move(out), {a, b}, [m, n](Tensor& self) {
        auto& ga = detail::scratch_of(*self.node->inputs[0]);
        auto& gb = detail::scratch_of(*self.node->inputs[1]);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
                double g = self.grad_scratch[static_cast<size_t>(i) * n + j];
                ga[static_cast<size_t>(i) * n + j] += g;
                gb[j] += g;
            }
    });
}

inline TensorPtr sigmoid(const TensorPtr& a) {
    std::vector<double> out(a->values.size());
    for (size_t i = 0; i < out.size(); ++i) {
        double x = a->values[i];
        out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    return detail::make_op("sigmoid", a->shape, std::move(out), {a}, [](Tensor& self) {
        auto& ga = detail::scratch_of(*self.node->inputs[0]);
        for (size_t i = 0; i < self.grad_scratch.size(); ++i) {
            double s = self.values[i];
            ga[i] += self.grad_scratch[i] * s * (1.0 - s);
        }
    });
}

// log sigma(x) = -softplus(-x); stable at both tails.
inline TensorPtr log_sigmoid(const TensorPtr& a) {
    std::vector<double> out(a->values.size());
    for (size_t i = 0; i < out.size(); ++i) {
        double x = a->values[i];
        out[i] = std::min(x, 0.0) - std::log1p(std::exp(-std::abs(x)));
    }
    return detail::make_op("log_sigmoid", a->shape, std::move(out), {a}, [](Tensor& self) {
        Tensor& a_in = *self.node->inputs[0];
        auto& ga = detail::scratch_of(a_in);
        for (size_t i = 0; i < self.grad_scratch.size(); ++i) {
            double x = a_in.values[i];
            // d/dx log sigma(x) = sigma(-x)
            double s = x >= 0.0 ? std::exp(-x) / (1.0 + std::exp(-x)) : 1.0 / (1.0 + std::exp(x));
            ga[i] += self.grad_scratch[i] * s;
        }
    });
}

namespace detail {
inline constexpr double inv_sqrt2 = 0.7071067811865475244;
inline constexpr double inv_sqrt2pi = 0.3989422804014326779;
} // namespace detail

inline TensorPtr gelu(const TensorPtr& a) {
    using detail::inv_sqrt2;
    using detail::inv_sqrt2pi;
    std::vector<double> out(a->values.size());
    for (size_t i = 0; i < out.size(); ++i) {
        double x = a->values[i];
        out[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
    }
    return detail::make_op("gelu", a->shape, std::move(out), {a}, [](Tensor& self) {
        Tensor& a_in = *self.node->inputs[0];
        auto& ga = detail::scratch_of(a_in);
        for (size_t i = 0; i < self.grad_scratch.size(); ++i) {
            double x = a_in.values[i];
            double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
            ga[i] += self.grad_scratch[i] * (cdf + x * pdf);
        }
    });
}

inline TensorPtr transpose(const TensorPtr& a) {
    detail::require_matrix(*a, "transpose");
    int m = a->shape[0], n = a->shape[1];
    std::vector<double> out(a->values.size());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[static_cast<size_t>(j) * m + i] = a->values[static_cast<size_t>(i) * n + j];
    return detail::make_op("transpose", {n, m}, std::move(out), {a}, [m, n](Tensor& self) {
        auto& ga = detail::scratch_of(*self.node->inputs[0]);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                ga[static_cast<size_t>(i) * n + j] += self.grad_scratch[static_cast<size_t>(j) * m + i];
    });
}

inline TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
    detail::require_matrix(*a, "matmul");
    detail::require_matrix(*b, "matmul");
    if (a->shape[1] != b->shape[0]) {
        throw ShapeError("matmul: inner dimensions disagree, " + a->shape_str() + " x " + b->shape_str());
    }
    int m = a->shape[0], k = a->shape[1], n = b->shape[1];
    std::vector<double> out(static_cast<size_t>(m) * n);
    detail::gemm_nn(a->values.data(), b->values.data(), out.data(), m, k, n);
    return detail::make_op("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Tensor& self) {
        Tensor& a_in = *self.node->inputs[0];
        Tensor& b_in = *self.node->inputs[1];
        auto& ga = detail::scratch_of(a_in);
        auto& gb = detail::scratch_of(b_in);
        // dA = G . B^T, dB = A^T . G
        detail::gemm_nt_acc(self.grad_scratch.data(), b_in.values.data(), ga.data(), m, n, k);
        detail::gemm_tn_acc(a_in.values.data(), self.grad_scratch.data(), gb.data(), m, k, n);
    });
}

// Embedding lookup: out[i, :] = table[ids[i], :].
inline TensorPtr gather_rows(const TensorPtr& table, const std::vector<int>& ids) {
    detail::require_matrix(*table, "gather_rows");
    int v = table->shape[0], d = table->shape[1];
    for (int id : ids) {
        if (id < 0 || id >= v) {
            throw ContractError("gather_rows: id " + std::to_string(id) + " out of range [0, " +
                                std::to_string(v) + ")");
        }
    }
    int m = static_cast<int>(ids.size());
    std::vector<double> out(static_cast<size_t>(m) * d);
    for (int i = 0; i < m; ++i)
        std::copy_n(table->values.begin() + static_cast<size_t>(ids[i]) * d, d,
                    out.begin() + static_cast<size_t>(i) * d);
    return detail::make_op(
        "gather_rows", {m, d}, std::move(out), {table},
        [d](Tensor& self) {
            auto& gt = detail::scratch_of(*self.node->inputs[0]);
            const auto& ids = self.node->saved_ints;
            for (size_t i = 0; i < ids.size(); ++i)
                for (int j = 0; j < d; ++j)
                    gt[static_cast<size_t>(ids[i]) * d + j] += self.grad_scratch[i * d + j];
        },
        {}, ids);
}

inline TensorPtr slice_rows(const TensorPtr& a, int r0, int r1) {
    detail::require_matrix(*a, "slice_rows");
    int m = a->shape[0], n = a->shape[1];
    if (r0 < 0 || r1 > m || r0 >= r1) throw ContractError("slice_rows: bad range on " + a->shape_str());
    std::vector<double> out(a->values.begin() + static_cast<size_t>(r0) * n,
                            a->values.begin() + static_cast<size_t>(r1) * n);
    return detail::make_op(
        "slice_rows", {r1 - r0, n}, std::move(out), {a},
        [n](Tensor& self) {
            int r0 = self.node->saved_ints[0];
            auto& ga = detail::scratch_of(*self.node->inputs[0]);
            for (size_t i = 0; i < self.grad_scratch.size(); ++i)
                ga[static_cast<size_t>(r0) * n + i] += self.grad_scratch[i];
        },
        {}, {r0});
}

inline TensorPtr slice_cols(const TensorPtr& a, int c0, int c1) {
    detail::require_matrix(*a, "slice_cols");
    int m = a->shape[0], n = a->shape[1];
    if (c0 < 0 || c1 > n || c0 >= c1) throw ContractError("slice_cols: bad range on " + a->shape_str());
    int w = c1 - c0;
    std::vector<double> out(static_cast<size_t>(m) * w);
    for (int i = 0; i < m; ++i)
        std::copy_n(a->values.begin() + static_cast<size_t>(i) * n + c0, w,
                    out.begin() + static_cast<size_t>(i) * w);
    return detail::make_op(
        "slice_cols", {m, w}, std::move(out), {a},
        [m, n, w](Tensor& self) {
            int c0 = self.node->saved_ints[0];
            auto& ga = detail::scratch_of(*self.node->inputs[0]);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < w; ++j)
                    ga[static_cast<size_t>(i) * n + c0 + j] += self.grad_scratch[static_cast<size_t>(i) * w + j];
        },
        {}, {c0});
}

inline TensorPtr concat_cols(const std::vector<TensorPtr>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: empty input list");
    int m = parts[0]->shape[0];
    int total = 0;
    for (const auto& p : parts) {
        detail::require_matrix(*p, "concat_cols");
        if (p->shape[0] != m) detail::require_same_shape(*parts[0], *p, "concat_cols");
        total += p->shape[1];
    }
    std::vector<double> out(static_cast<size_t>(m) * total);
    std::vector<int> widths;
    int off = 0;
    for (const auto& p : parts) {
        int w = p->shape[1];
        for (int i = 0; i < m; ++i)
            std::copy_n(p->values.begin() + static_cast<size_t>(i) * w, w,
                        out.begin() + static_cast<size_t>(i) * total + off);
        widths.push_back(w);
        off += w;
    }
    return detail::make_op(
        "concat_cols", {m, total}, std::move(out), parts,
        [m, total](Tensor& self) {
            const auto& widths = self.node->saved_ints;
            int off = 0;
            for (size_t p = 0; p < widths.size(); ++p) {
                int w = widths[p];
                auto& gp = detail::scratch_of(*self.node->inputs[p]);
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < w; ++j)
                        gp[static_cast<size_t>(i) * w + j] +=
                            self.grad_scratch[static_cast<size_t>(i) * total + off + j];
                off += w;
            }
        },
        {}, widths);
}

// out[i] = a[i, cols[i]]; used to pick realized-token log-probs per position.
inline TensorPtr take_per_row(const TensorPtr& a, const std::vector<int>& cols) {
    detail::require_matrix(*a, "take_per_row");
    int m = a->shape[0], n = a->shape[1];
    if (static_cast<int>(cols.size()) != m) {
        throw ContractError("take_per_row: need one column index per row");
    }
    std::vector<double> out(cols.size());
    for (int i = 0; i < m; ++i) {
        if (cols[i] < 0 || cols[i] >= n) {
            throw ContractError("take_per_row: column " + std::to_string(cols[i]) + " out of range");
        }
        out[i] = a->values[static_cast<size_t>(i) * n + cols[i]];
    }
    return detail::make_op(
        "take_per_row", {m}, std::move(out), {a},
        [n](Tensor& self) {
            auto& ga = detail::scratch_of(*self.node->inputs[0]);
            const auto& cols = self.node->saved_ints;
            for (size_t i = 0; i < cols.size(); ++i)
                ga[i * n + cols[i]] += self.grad_scratch[i];
        },
        {}, cols);
}

inline TensorPtr sum(const TensorPtr& a) {
    double acc = 0.0;
    for (double v : a->values) acc += v;
    return detail::make_op("sum", {1}, {acc}, {a}, [](Tensor& self) {
        auto& ga = detail::scratch_of(*self.node->inputs[0]);
        double g = self.grad_scratch[0];
        for (double& v : ga) v += g;
    });
}

inline TensorPtr mean(const TensorPtr& a) {
    double acc = 0.0;
    for (double v : a->values) acc += v;
    double n = static_cast<double>(a->values.size());
    return detail::make_op(
        "mean", {1}, {acc / n}, {a},
        [n](Tensor& self) {
            auto& ga = detail::scratch_of(*self.node->inputs[0]);
            double g = self.grad_scratch[0] / n;
            for (double& v : ga) v += g;
        });
}

// Mean of scalar terms, summed in value-sorted order so the result is
// bit-identical under any permutation of the inputs (the DNA negative set
// is an unordered collection).
inline TensorPtr mean_scalars_sorted(const std::vector<TensorPtr>& terms) {
    if (terms.empty()) throw ContractError("mean_scalars_sorted: empty term list");
    std::vector<double> vals;
    vals.reserve(terms.size());
    for (const auto& t : terms) {
        if (!t->is_scalar()) throw ContractError("mean_scalars_sorted: non-scalar term " + t->shape_str());
        vals.push_back(t->values[0]);
    }
    std::sort(vals.begin(), vals.end());
    double acc = 0.0;
    for (double v : vals) acc += v;
    double k = static_cast<double>(terms.size());
    return detail::make_op(
        "mean_scalars_sorted", {1}, {acc / k}, terms,
        [k](Tensor& self) {
            double g = self.grad_scratch[0] / k;
            for (const auto& in : self.node->inputs) detail::scratch_of(*in)[0] += g;
        });
}

// ---------------------------------------------------------------------------
// Softmax-family ops
// ---------------------------------------------------------------------------

// Max-shifted log-softmax over the last dimension of a [rows x V] tensor.
inline TensorPtr log_softmax(const TensorPtr& a) {
    detail::require_matrix(*a, "log_softmax");
    int m = a->shape[0], v = a->shape[1];
    if (v < 1) throw ShapeError("log_softmax: empty last dimension");
    for (double x : a->values) {
        if (!std::isfinite(x)) throw NumericalError("log_softmax: non-finite input logit");
    }
    std::vector<double> out(a->values.size());
    for (int i = 0; i < m; ++i) {
        const double* row = a->values.data() + static_cast<size_t>(i) * v;
        double* orow = out.data() + static_cast<size_t>(i) * v;
        double mx = row[0];
        for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int j = 0; j < v; ++j) z += std::exp(row[j] - mx);
        double lz = mx + std::log(z);
        for (int j = 0; j < v; ++j) orow[j] = row[j] - lz;
    }
    return detail::make_op("log_softmax", a->shape, std::move(out), {a}, [m, v](Tensor& self) {
        auto& ga = detail::scratch_of(*self.node->inputs[0]);
        for (int i = 0; i < m; ++i) {
            const double* y = self.values.data() + static_cast<size_t>(i) * v;
            const double* g = self.grad_scratch.data() + static_cast<size_t>(i) * v;
            double gsum = 0.0;
            for (int j = 0; j < v; ++j) gsum += g[j];
            double* grow = ga.data() + static_cast<size_t>(i) * v;
            for (int j = 0; j < v; ++j) grow[j] += g[j] - std::exp(y[j]) * gsum;
        }
    });
}

// Row-wise softmax over a square attention-score matrix with a strict causal
// mask: row i distributes probability over columns j <= i only.
inline TensorPtr softmax_causal(const TensorPtr& s) {
    detail::require_matrix(*s, "softmax_causal");
    if (s->shape[0] != s->shape[1]) {
        throw ShapeError("softmax_causal: expected square scores, got " + s->shape_str());
    }
    int n = s->shape[0];
    std::vector<double> out(s->values.size(), 0.0);
    for (int i = 0; i < n; ++i) {
        const double* row = s->values.data() + static_cast<size_t>(i) * n;
        double* orow = out.data() + static_cast<size_t>(i) * n;
        double mx = row[0];
        for (int j = 1; j <= i; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int j = 0; j <= i; ++j) z += std::exp(row[j] - mx);
        for (int j = 0; j <= i; ++j) orow[j] = std::exp(row[j] - mx) / z;
    }
    return detail::make_op("softmax_causal", s->shape, std::move(out), {s}, [n](Tensor& self) {
        auto& gs = detail::scratch_of(*self.node->inputs[0]);
        for (int i = 0; i < n; ++i) {
            const double* p = self.values.data() + static_cast<size_t>(i) * n;
            const double* g = self.grad_scratch.data() + static_cast<size_t>(i) * n;
            double dot = 0.0;
            for (int j = 0; j <= i; ++j) dot += g[j] * p[j];
            double* grow = gs.data() + static_cast<size_t>(i) * n;
            for (int j = 0; j <= i; ++j) grow[j] += p[j] * (g[j] - dot);
        }
    });
}

// Row-wise layer norm with learned gain/bias vectors.
inline TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gain, const TensorPtr& bias,
                            double eps = 1e-5) {
    detail::require_matrix(*x, "layer_norm");
    int m = x->shape[0], n = x->shape[1];
    if (gain->numel() != n || bias->numel() != n) {
        throw ShapeError("layer_norm: gain/bias length must match row width " + std::to_string(n));
    }
    std::vector<double> out(x->values.size());
    std::vector<double> saved(static_cast<size_t>(m) * 2); // per-row mean, rstd
    for (int i = 0; i < m; ++i) {
        const double* row = x->values.data() + static_cast<size_t>(i) * n;
        double mu = 0.0;
        for (int j = 0; j < n; ++j) mu += row[j];
        mu /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= n;
        double rstd = 1.0 / std::sqrt(var + eps);
        saved[static_cast<size_t>(i) * 2] = mu;
        saved[static_cast<size_t>(i) * 2 + 1] = rstd;
        double* orow = out.data() + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) orow[j] = gain->values[j] * ((row[j] - mu) * rstd) + bias->values[j];
    }
    return detail::make_op(
        "layer_norm", x->shape, std::move(out), {x, gain, bias},
        [m, n](Tensor& self) {
            Tensor& x_in = *self.node->inputs[0];
            Tensor& gain_in = *self.node->inputs[1];
            auto& gx = detail::scratch_of(x_in);
            auto& gg = detail::scratch_of(gain_in);
            auto& gb = detail::scratch_of(*self.node->inputs[2]);
            for (int i = 0; i < m; ++i) {
                double mu = self.node->saved[static_cast<size_t>(i) * 2];
                double rstd = self.node->saved[static_cast<size_t>(i) * 2 + 1];
                const double* row = x_in.values.data() + static_cast<size_t>(i) * n;
                const double* g = self.grad_scratch.data() + static_cast<size_t>(i) * n;
                // dxhat = g * gain; reduce its mean and its xhat-weighted mean
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (int j = 0; j < n; ++j) {
                    double xhat = (row[j] - mu) * rstd;
                    double dxhat = g[j] * gain_in.values[j];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                    gg[j] += g[j] * xhat;
                    gb[j] += g[j];
                }
                double* gxrow = gx.data() + static_cast<size_t>(i) * n;
                for (int j = 0; j < n; ++j) {
                    double xhat = (row[j] - mu) * rstd;
                    double dxhat = g[j] * gain_in.values[j];
                    gxrow[j] += rstd * (dxhat - (sum_dxhat + xhat * sum_dxhat_xhat) / n);
                }
            }
        },
        std::move(saved));
}

// ---------------------------------------------------------------------------
// Reverse-mode sweep
// ---------------------------------------------------------------------------

namespace detail {

// Post-order DFS; ordering is fully determined by graph structure, never by
// pointer values, so gradient accumulation order is reproducible.
inline void topo_sort(const TensorPtr& root, std::vector<Tensor*>& topo) {
    std::unordered_set<const Tensor*> visited;
    std::vector<std::pair<Tensor*, size_t>> stack;
    stack.push_back({root.get(), 0});
    visited.insert(root.get());
    while (!stack.empty()) {
        Tensor* t = stack.back().first;
        size_t n_inputs = t->node ? t->node->inputs.size() : 0;
        if (stack.back().second < n_inputs) {
            Tensor* child = t->node->inputs[stack.back().second].get();
            ++stack.back().second; // advance before any push invalidates back()
            if (visited.insert(child).second) stack.push_back({child, 0});
            continue;
        }
        topo.push_back(t);
        stack.pop_back();
    }
}

} // namespace detail

// Accumulates d(root)/d(tensor) into the grad field of every tensor reachable
// from root. Each pass computes its contribution in scratch buffers and folds
// it into grad at the end, so repeated calls accumulate exactly.
inline void backward(const TensorPtr& root) {
    if (!root->is_scalar()) {
        throw ContractError("backward: root must be scalar, got shape " + root->shape_str());
    }
    std::vector<Tensor*> topo;
    detail::topo_sort(root, topo);
    for (Tensor* t : topo) t->grad_scratch.assign(t->values.size(), 0.0);
    root->grad_scratch[0] = 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Tensor* t = *it;
        if (t->node && t->node->backward) t->node->backward(*t);
    }
    for (Tensor* t : topo) {
        for (size_t i = 0; i < t->grad.size(); ++i) t->grad[i] += t->grad_scratch[i];
        t->grad_scratch.clear();
        t->grad_scratch.shrink_to_fit();
    }
}

} // namespace prefopt
