#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "gradcheck.hpp"
#include "pmnet/autodiff.hpp"
#include "pmnet/rng.hpp"

using namespace pmnet;
using namespace pmnet::ad;

namespace {

std::vector<double> randn(Rng& rng, int n, double scale = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = scale * rng.normal();
    return v;
}

// Generic gradcheck: loss = sum of elementwise-squared output of `build`.
template <class Build>
void check_op(const Build& build, int n_params, std::uint64_t seed, double tol = 1e-6) {
    Rng rng(seed);
    std::vector<double> theta = randn(rng, n_params, 0.5);
    auto eval = [&](const std::vector<double>& t) {
        Tape<double> tp;
        Var<double> lf = tp.leaf(1, n_params, t.data(), true);
        Var<double> out = build(tp, lf);
        Var<double> loss = sum_all(tp, mul(tp, out, out));
        return loss.item();
    };
    Tape<double> tp;
    Var<double> lf = tp.leaf(1, n_params, theta.data(), true);
    Var<double> out = build(tp, lf);
    Var<double> loss = sum_all(tp, mul(tp, out, out));
    tp.backward(loss);
    std::vector<double> g(lf.grad());
    auto res = testing::grad_check(eval, theta, g, 1e-5, 0, seed);
    INFO("worst index " << res.worst_index << " rel err " << res.max_rel_err);
    CHECK(res.ok(tol));
}

}  // namespace

TEST_CASE("matmul forward matches naive triple loop") {
    Rng rng(7);
    const int m = 3, k = 4, n = 5;
    auto a = randn(rng, m * k), b = randn(rng, k * n);
    Tape<double> tp;
    auto va = tp.leaf(m, k, a.data(), false);
    auto vb = tp.leaf(k, n, b.data(), false);
    auto c = matmul(tp, va, vb);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double s = 0;
            for (int p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
            CHECK(c.val()[i * n + j] == Catch::Approx(s).epsilon(1e-12));
        }
}

TEST_CASE("elementwise gradients") {
    check_op([](Tape<double>& tp, Var<double> t) {
        auto a = slice_cols(tp, t, 0, 6);
        auto b = slice_cols(tp, t, 6, 6);
        return mul(tp, silu(tp, a), softplus(tp, b));
    }, 12, 11);
}

TEST_CASE("matmul gradients") {
    Rng rng(13);
    const int m = 2, k = 3, n = 4;
    std::vector<double> theta = randn(rng, m * k + k * n, 0.6);
    auto eval = [&](const std::vector<double>& t) {
        Tape<double> tp;
        auto a = tp.leaf(m, k, t.data(), true);
        auto b = tp.leaf(k, n, t.data() + m * k, true);
        auto c = matmul(tp, a, b);
        return sum_all(tp, mul(tp, c, c)).item();
    };
    Tape<double> tp;
    auto a = tp.leaf(m, k, theta.data(), true);
    auto b = tp.leaf(k, n, theta.data() + m * k, true);
    auto c = matmul(tp, a, b);
    auto loss = sum_all(tp, mul(tp, c, c));
    tp.backward(loss);
    std::vector<double> g;
    g.insert(g.end(), a.grad().begin(), a.grad().end());
    g.insert(g.end(), b.grad().begin(), b.grad().end());
    auto res = testing::grad_check(eval, theta, g, 1e-5, 0, 17);
    CHECK(res.ok(1e-7));
}

TEST_CASE("softmax rows sum to one and gradcheck") {
    Rng rng(3);
    auto x = randn(rng, 4 * 6);
    Tape<double> tp;
    auto v = tp.leaf(4, 6, x.data(), true);
    auto p = softmax_rows(tp, v);
    for (int i = 0; i < 4; ++i) {
        double s = 0;
        for (int j = 0; j < 6; ++j) s += p.val()[i * 6 + j];
        CHECK(s == Catch::Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("masked softmax puts exact zeros on masked keys") {
    Rng rng(4);
    auto x = randn(rng, 2 * 5);
    std::vector<std::uint8_t> keep{1, 0, 1, 0, 1};
    Tape<double> tp;
    auto v = tp.leaf(2, 5, x.data(), false);
    auto p = softmax_rows(tp, v, &keep);
    for (int i = 0; i < 2; ++i) {
        CHECK(p.val()[i * 5 + 1] == 0.0);
        CHECK(p.val()[i * 5 + 3] == 0.0);
        double s = 0;
        for (int j = 0; j < 5; ++j) s += p.val()[i * 5 + j];
        CHECK(s == Catch::Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("layer norm rows: zero mean unit var before affine") {
    Rng rng(5);
    auto x = randn(rng, 3 * 8, 2.0);
    std::vector<double> gamma(8, 1.0), beta(8, 0.0);
    Tape<double> tp;
    auto v = tp.leaf(3, 8, x.data(), false);
    auto g = tp.leaf(1, 8, gamma.data(), false);
    auto b = tp.leaf(1, 8, beta.data(), false);
    auto y = layer_norm_rows(tp, v, g, b);
    for (int i = 0; i < 3; ++i) {
        double mu = 0, var = 0;
        for (int j = 0; j < 8; ++j) mu += y.val()[i * 8 + j];
        mu /= 8;
        for (int j = 0; j < 8; ++j) var += (y.val()[i * 8 + j] - mu) * (y.val()[i * 8 + j] - mu);
        var /= 8;
        CHECK(mu == Catch::Approx(0.0).margin(1e-9));
        CHECK(var == Catch::Approx(1.0).margin(1e-4));
    }
}

TEST_CASE("composite gradcheck: attention-like block") {
    // softmax(QK^T) V with LN and silu mixed in; catches interaction bugs.
    Rng rng(9);
    const int n = 30;  // parameters
    std::vector<double> theta = randn(rng, n, 0.7);
    auto build = [](Tape<double>& tp, const std::vector<double>& t) {
        auto q = tp.leaf(2, 3, t.data(), true);
        auto k = tp.leaf(2, 3, t.data() + 6, true);
        auto v = tp.leaf(2, 3, t.data() + 12, true);
        auto g = tp.leaf(1, 3, t.data() + 18, true);
        auto b = tp.leaf(1, 3, t.data() + 21, true);
        auto w = tp.leaf(3, 2, t.data() + 24, true);
        auto scores = scale(tp, matmul_nt(tp, q, k), 1.0 / std::sqrt(3.0));
        auto attn = matmul(tp, softmax_rows(tp, scores), v);
        auto y = layer_norm_rows(tp, attn, g, b);
        auto z = silu(tp, matmul(tp, y, w));
        return std::vector<Var<double>>{q, k, v, g, b, w, sum_all(tp, mul(tp, z, z))};
    };
    auto eval = [&](const std::vector<double>& t) {
        Tape<double> tp;
        return build(tp, t).back().item();
    };
    Tape<double> tp;
    auto vars = build(tp, theta);
    tp.backward(vars.back());
    std::vector<double> g(n);
    const int sizes[6] = {6, 6, 6, 3, 3, 6};
    int off = 0;
    for (int p = 0; p < 6; ++p) {
        for (int i = 0; i < sizes[p]; ++i) g[off + i] = vars[p].grad()[i];
        off += sizes[p];
    }
    auto res = testing::grad_check(eval, theta, g, 1e-5, 0, 42);
    INFO("worst " << res.worst_index << " err " << res.max_rel_err);
    CHECK(res.ok(1e-6));
}

TEST_CASE("normalize_rows gradcheck and zero-norm clamp") {
    Rng rng(12);
    std::vector<double> theta = randn(rng, 6, 0.8);
    std::vector<double> wfix = randn(rng, 6, 1.0);
    auto eval = [&](const std::vector<double>& t) {
        Tape<double> tp;
        auto v = tp.leaf(2, 3, t.data(), true);
        auto w = tp.leaf(2, 3, wfix.data(), false);
        auto y = mul(tp, normalize_rows(tp, v), w);
        return sum_all(tp, mul(tp, y, y)).item();
    };
    Tape<double> tp;
    auto v = tp.leaf(2, 3, theta.data(), true);
    auto w = tp.leaf(2, 3, wfix.data(), false);
    auto y = mul(tp, normalize_rows(tp, v), w);
    auto loss = sum_all(tp, mul(tp, y, y));
    tp.backward(loss);
    auto res = testing::grad_check(eval, theta, std::vector<double>(v.grad()), 1e-6, 0, 5);
    CHECK(res.ok(1e-5));

    std::vector<double> zero(3, 0.0);
    Tape<double> tz;
    auto vz = tz.leaf(1, 3, zero.data(), false);
    auto yz = normalize_rows(tz, vz);
    for (double x : yz.val()) CHECK(x == 0.0);
}

TEST_CASE("conv3x3_s2 gradcheck on a tiny image") {
    Rng rng(21);
    const int Cin = 2, H = 6, W = 6, Cout = 3;
    const int nx = Cin * H * W, nw = Cout * Cin * 9, nb = Cout;
    std::vector<double> theta = randn(rng, nx + nw + nb, 0.4);
    auto eval = [&](const std::vector<double>& t) {
        Tape<double> tp;
        auto x = tp.leaf(Cin, H * W, t.data(), true);
        auto w = tp.leaf(Cout, Cin * 9, t.data() + nx, true);
        auto b = tp.leaf(1, Cout, t.data() + nx + nw, true);
        auto y = conv3x3_s2(tp, x, H, W, w, b);
        return sum_all(tp, mul(tp, y, y)).item();
    };
    Tape<double> tp;
    auto x = tp.leaf(Cin, H * W, theta.data(), true);
    auto w = tp.leaf(Cout, Cin * 9, theta.data() + nx, true);
    auto b = tp.leaf(1, Cout, theta.data() + nx + nw, true);
    auto y = conv3x3_s2(tp, x, H, W, w, b);
    auto loss = sum_all(tp, mul(tp, y, y));
    tp.backward(loss);
    std::vector<double> g;
    g.insert(g.end(), x.grad().begin(), x.grad().end());
    g.insert(g.end(), w.grad().begin(), w.grad().end());
    g.insert(g.end(), b.grad().begin(), b.grad().end());
    auto res = testing::grad_check(eval, theta, g, 1e-5, 60, 31);
    INFO("worst " << res.worst_index << " err " << res.max_rel_err);
    CHECK(res.ok(1e-6));
}

TEST_CASE("softmax_ce matches manual cross entropy of softmax") {
    Rng rng(33);
    auto x = randn(rng, 3 * 5);
    std::vector<int> labels{2, 0, 4};
    std::vector<std::uint8_t> inc{1, 1, 1};
    Tape<double> tp;
    auto v = tp.leaf(3, 5, x.data(), false);
    auto loss = softmax_ce(tp, v, labels, inc);
    double expect = 0;
    for (int i = 0; i < 3; ++i) {
        double mx = x[i * 5];
        for (int j = 1; j < 5; ++j) mx = std::max(mx, x[i * 5 + j]);
        double z = 0;
        for (int j = 0; j < 5; ++j) z += std::exp(x[i * 5 + j] - mx);
        expect -= (x[i * 5 + labels[i]] - mx) - std::log(z);
    }
    expect /= 3;
    CHECK(loss.item() == Catch::Approx(expect).epsilon(1e-12));
}
