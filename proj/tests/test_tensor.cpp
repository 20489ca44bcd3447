#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "prefopt/gradcheck.hpp"
#include "prefopt/rng.hpp"
#include "prefopt/tensor.hpp"

using namespace prefopt;

namespace {

TensorPtr random_tensor(std::vector<int> shape, Rng& rng) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    std::vector<double> vals(static_cast<size_t>(n));
    for (double& v : vals) v = -2.0 + 4.0 * rng.next_double(); // inputs in [-2, 2]
    return make_tensor(std::move(shape), std::move(vals));
}

double fd_check_max_err(const std::function<TensorPtr()>& fn, const std::vector<TensorPtr>& params) {
    GradCheckOptions opts;
    opts.step = 1e-4;
    return finite_diff_check(fn, params, opts).max_rel_error;
}

} // namespace

TEST_CASE("matmul forward semantics") {
    auto eye = make_tensor({2, 2}, {1, 0, 0, 1});
    auto m = make_tensor({2, 2}, {1, 2, 3, 4});
    auto out = matmul(eye, m);
    CHECK(out->values == std::vector<double>{1, 2, 3, 4});

    auto proj = make_tensor({2, 2}, {1, 0, 0, 0});
    auto n = make_tensor({2, 2}, {5, 6, 7, 8});
    CHECK(matmul(proj, n)->values == std::vector<double>{5, 6, 0, 0});
}

TEST_CASE("matmul shape error names both shapes") {
    auto a = make_tensor({2, 3}, std::vector<double>(6, 1.0));
    auto b = make_tensor({2, 2}, std::vector<double>(4, 1.0));
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[2x2]") != std::string::npos);
    }
}

TEST_CASE("matmul gradient matches finite differences") {
    Rng rng(11);
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({4, 2}, rng);
    double err = fd_check_max_err([&] { return sum(matmul(a, b)); }, {a, b});
    CHECK(err < 1e-3);
}

TEST_CASE("log_softmax closed forms") {
    auto zero_row = make_tensor({1, 16}, std::vector<double>(16, 0.0));
    auto out = log_softmax(zero_row);
    for (double v : out->values) CHECK(v == Catch::Approx(-std::log(16.0)).epsilon(1e-12));

    auto two = make_tensor({1, 2}, {0.0, std::log(3.0)});
    auto out2 = log_softmax(two);
    CHECK(out2->values[0] == Catch::Approx(-std::log(4.0)).epsilon(1e-12));
    CHECK(out2->values[1] == Catch::Approx(std::log(3.0 / 4.0)).epsilon(1e-12));
}

TEST_CASE("exp(log_softmax) rows sum to one") {
    Rng rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        int v = 1 + rng.uniform_int(40);
        auto row = random_tensor({2, v}, rng);
        // include a large-magnitude row to stress the max shift
        for (int j = 0; j < v; ++j) row->values[j] *= 50.0;
        auto out = log_softmax(row);
        for (int i = 0; i < 2; ++i) {
            double s = 0.0;
            for (int j = 0; j < v; ++j) s += std::exp(out->values[static_cast<size_t>(i) * v + j]);
            CHECK(std::abs(s - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("log_softmax rejects non-finite input") {
    auto bad = make_tensor({1, 2}, {1.0, std::numeric_limits<double>::infinity()});
    CHECK_THROWS_AS(log_softmax(bad), NumericalError);
}

TEST_CASE("elementwise closed forms") {
    auto z = scalar_tensor(0.0);
    CHECK(sigmoid(z)->item() == 0.5);
    CHECK(log_sigmoid(z)->item() == Catch::Approx(-std::log(2.0)).epsilon(1e-12));

    auto deep = scalar_tensor(-50.0);
    double ls = log_sigmoid(deep)->item();
    CHECK(ls == Catch::Approx(-50.0).margin(1e-9));
    CHECK(std::isfinite(ls));

    // gelu fixed points: gelu(0) = 0, gelu(x) -> x for large x
    CHECK(gelu(scalar_tensor(0.0))->item() == 0.0);
    CHECK(gelu(scalar_tensor(10.0))->item() == Catch::Approx(10.0).epsilon(1e-12));
}

TEST_CASE("backward on linear reductions") {
    Rng rng(5);
    auto x = random_tensor({3, 5}, rng);
    backward(sum(x));
    for (double g : x->grad) CHECK(g == 1.0);

    auto y = random_tensor({4, 2}, rng);
    backward(mean(y));
    for (double g : y->grad) CHECK(g == 1.0 / 8.0);
}

TEST_CASE("backward requires scalar root") {
    auto x = make_tensor({2, 2}, {1, 2, 3, 4});
    CHECK_THROWS_AS(backward(add(x, x)), ContractError);
}

TEST_CASE("repeated backward accumulates") {
    auto x = make_tensor({3}, {1.0, 2.0, 3.0});
    auto root = sum(x);
    backward(root);
    backward(root);
    for (double g : x->grad) CHECK(g == 2.0);
}

TEST_CASE("sum of two graph copies doubles the gradient") {
    Rng rng(7);
    auto w = random_tensor({3, 3}, rng);
    auto v = random_tensor({3, 3}, rng);
    auto build = [&] { return sum(matmul(w, gelu(v))); };

    auto single = build();
    backward(single);
    std::vector<double> once = w->grad;

    w->zero_grad();
    v->zero_grad();
    backward(add(build(), build()));
    for (size_t i = 0; i < once.size(); ++i) CHECK(w->grad[i] == 2.0 * once[i]);
}

TEST_CASE("composite graph gradient vs finite differences") {
    Rng rng(13);
    auto table = random_tensor({6, 4}, rng);
    auto w = random_tensor({4, 5}, rng);
    std::vector<int> ids = {2, 0, 5, 2};
    std::vector<int> picks = {1, 4, 0, 3};
    auto build = [&] {
        auto h = matmul(gather_rows(table, ids), w);
        return mean(take_per_row(log_softmax(h), picks));
    };
    CHECK(fd_check_max_err(build, {table, w}) < 1e-3);
}

TEST_CASE("per-op gradients match finite differences") {
    Rng rng(42);
    struct Case {
        const char* name;
        std::function<TensorPtr()> build;
        std::vector<TensorPtr> params;
    };
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({3, 4}, rng);
    auto rowv = random_tensor({4}, rng);
    auto sq = random_tensor({4, 4}, rng);
    auto gain = random_tensor({4}, rng);
    auto bias = random_tensor({4}, rng);
    auto s1 = random_tensor({1}, rng);
    auto s2 = random_tensor({1}, rng);
    auto s3 = random_tensor({1}, rng);

    std::vector<Case> cases;
    cases.push_back({"add", [&] { return sum(add(a, b)); }, {a, b}});
    cases.push_back({"sub", [&] { return sum(sub(a, b)); }, {a, b}});
    cases.push_back({"mul", [&] { return sum(mul(a, b)); }, {a, b}});
    cases.push_back({"mul self (square)", [&] { return sum(mul(a, a)); }, {a}});
    cases.push_back({"scale", [&] { return sum(scale(a, -1.7)); }, {a}});
    cases.push_back({"add_rowvec", [&] { return sum(add_rowvec(a, rowv)); }, {a, rowv}});
    cases.push_back({"sigmoid", [&] { return sum(sigmoid(a)); }, {a}});
    cases.push_back({"log_sigmoid", [&] { return sum(log_sigmoid(a)); }, {a}});
    cases.push_back({"gelu", [&] { return sum(gelu(a)); }, {a}});
    cases.push_back({"transpose", [&] { return sum(mul(transpose(a), transpose(b))); }, {a, b}});
    cases.push_back({"log_softmax", [&] { return mean(take_per_row(log_softmax(a), {1, 3, 0})); }, {a}});
    cases.push_back({"softmax_causal", [&] { return sum(mul(softmax_causal(sq), sq)); }, {sq}});
    cases.push_back({"layer_norm", [&] { return sum(mul(layer_norm(a, gain, bias), b)); }, {a, gain, bias}});
    cases.push_back({"slice_rows", [&] { return sum(slice_rows(a, 1, 3)); }, {a}});
    cases.push_back({"slice_cols", [&] { return sum(gelu(slice_cols(a, 1, 4))); }, {a}});
    cases.push_back({"concat_cols", [&] { return sum(gelu(concat_cols({a, b}))); }, {a, b}});
    cases.push_back({"take_per_row", [&] { return sum(take_per_row(a, {3, 0, 2})); }, {a}});
    cases.push_back({"mean", [&] { return mean(mul(a, b)); }, {a, b}});
    cases.push_back({"mean_scalars_sorted",
                     [&] { return mean_scalars_sorted({mul(s1, s2), mul(s2, s3), s1}); },
                     {s1, s2, s3}});

    for (auto& c : cases) {
        INFO(c.name);
        CHECK(fd_check_max_err(c.build, c.params) < 1e-3);
    }
}

TEST_CASE("bit-identical recomputation") {
    Rng rng(99);
    auto a = random_tensor({4, 4}, rng);
    auto b = random_tensor({4, 4}, rng);
    auto run = [&] {
        auto r = mean(take_per_row(log_softmax(matmul(a, b)), {0, 1, 2, 3}));
        backward(r);
        return r->item();
    };
    a->zero_grad();
    b->zero_grad();
    double v1 = run();
    std::vector<double> g1 = a->grad;
    a->zero_grad();
    b->zero_grad();
    double v2 = run();
    CHECK(v1 == v2);
    CHECK(a->grad == g1);
}

TEST_CASE("finite_diff_check trivial oracles") {
    // f(p) = p^2 at p = 3: analytic 6, central differences exact for quadratics
    auto p = scalar_tensor(3.0);
    GradCheckOptions opts;
    opts.step = 1e-4;
    auto res = finite_diff_check([&] { return mul(p, p); }, {p}, opts);
    CHECK(res.max_rel_error < 1e-6);
    CHECK(res.worst_analytic == Catch::Approx(6.0).epsilon(1e-12));

    // constant function: both gradients exactly zero
    auto q = scalar_tensor(1.5);
    auto res2 = finite_diff_check([&] { return scale(q, 0.0); }, {q}, opts);
    CHECK(res2.max_rel_error == 0.0);
}

namespace {

// Negative control: an op whose backward rule is deliberately wrong. The
// checker must flag it.
TensorPtr broken_scale(const TensorPtr& a, double c) {
    std::vector<double> out(a->values.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = c * a->values[i];
    return detail::make_op(
        "broken_scale", a->shape, std::move(out), {a},
        [](Tensor& self) {
            double c = self.node->saved[0];
            auto& ga = detail::scratch_of(*self.node->inputs[0]);
            for (size_t i = 0; i < self.grad_scratch.size(); ++i)
                ga[i] += (c + 0.5) * self.grad_scratch[i]; // wrong on purpose
        },
        {c});
}

} // namespace

TEST_CASE("finite_diff_check catches a corrupted backward rule") {
    auto x = make_tensor({4}, {0.3, -1.1, 0.7, 1.9});
    double err = fd_check_max_err([&] { return sum(broken_scale(x, 2.0)); }, {x});
    CHECK(err > 1e-3);
}

TEST_CASE("tensor invariants") {
    CHECK_THROWS_AS(make_tensor({2, 3}, {1.0}), ShapeError);
    CHECK_THROWS_AS(make_tensor({0}, {}), ShapeError);
    auto t = make_tensor({2, 2}, {1, 2, 3, 4});
    CHECK(t->grad.size() == t->values.size());
    for (double g : t->grad) CHECK(g == 0.0);
}
