#include "doctest.h"

#include <cmath>
#include <random>

#include "moelab/autograd.hpp"

using namespace moelab;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = u(rng);
    return t;
}

}  // namespace

TEST_CASE("tensor storage invariants") {
    Tensor t(Shape{2, 3, 4}, 1.5);
    CHECK(t.size() == 24);
    CHECK(t.mat().rows() == 6);
    CHECK(t.mat().cols() == 4);
    CHECK(Tensor::scalar(3.0).item() == 3.0);
    CHECK_THROWS_AS(Tensor(Shape{2, 0}), DimensionError);
    const double vals[] = {1, 2, 3};
    CHECK_THROWS_AS(Tensor(Shape{2, 2}, vals), DimensionError);
}

TEST_CASE("elementwise examples") {
    Tensor zero = Tensor::scalar(0.0);
    CHECK(elementwise(OpKind::Sigmoid, zero).item() == 0.5);
    CHECK(elementwise(OpKind::Log, Tensor::scalar(1.0)).item() == 0.0);
    // x * sigma(x) at 1, mpmath reference
    CHECK(elementwise(OpKind::Silu, Tensor::scalar(1.0)).item() == doctest::Approx(0.731058578630004879).epsilon(1e-15));
}

TEST_CASE("elementwise broadcasting on trailing dims only") {
    Tensor a = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
    Tensor b = Tensor::vector({10, 20, 30});
    Tensor c = elementwise(OpKind::Add, a, &b);
    CHECK(c.mat()(1, 2) == 36);
    Tensor bad = Tensor::vector({1, 2});
    try {
        elementwise(OpKind::Mul, a, &bad);
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        std::string msg = e.what();
        CHECK(msg.find("[2, 3]") != std::string::npos);
        CHECK(msg.find("[2]") != std::string::npos);
    }
    CHECK_THROWS_AS(elementwise(OpKind::Add, a), ContractError);
}

TEST_CASE("matmul examples") {
    std::mt19937_64 rng(7);
    Tensor m = random_tensor({2, 2}, rng);
    Tensor eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
    CHECK(matmul(eye, m).mat() == m.mat());

    Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4});
    Tensor b = Tensor::matrix(2, 1, {0, 1});
    Tensor ab = matmul(a, b);
    CHECK(ab.shape() == Shape{2, 1});
    CHECK(ab.mat()(0, 0) == 2);
    CHECK(ab.mat()(1, 0) == 4);

    Tensor z = matmul(Tensor(Shape{2, 3}, 0.0), Tensor(Shape{3, 4}, 1.0));
    CHECK(z.shape() == Shape{2, 4});
    CHECK(z.mat().isZero(0.0));

    CHECK_THROWS_AS(matmul(Tensor(Shape{2, 3}), Tensor(Shape{2, 3})), DimensionError);
}

TEST_CASE("softmax examples") {
    Tensor u = softmax(Tensor::vector({0, 0, 0}));
    for (double v : u.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

    Tensor big = softmax(Tensor::vector({1000, 0}));
    CHECK(std::abs(big[0] - 1.0) <= 1e-12);
    CHECK(std::abs(big[1]) <= 1e-12);

    Tensor s = softmax(Tensor::vector({1, 2, 3}));
    CHECK(s[0] == doctest::Approx(0.0900305731703804580).epsilon(1e-14));
    CHECK(s[1] == doctest::Approx(0.2447284710547976525).epsilon(1e-14));
    CHECK(s[2] == doctest::Approx(0.6652409557748218895).epsilon(1e-14));
}

TEST_CASE("softmax sums to one along any axis") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor x = random_tensor({3, 4, 5}, rng, -50.0, 50.0);
        for (Index axis = 0; axis < 3; ++axis) {
            Tensor y = softmax(x, axis);
            const Index n = x.dim(axis);
            const Index inner = axis == 2 ? 1 : (axis == 1 ? 5 : 20);
            const Index outer = 60 / (n * inner);
            for (Index o = 0; o < outer; ++o) {
                for (Index i = 0; i < inner; ++i) {
                    double total = 0.0;
                    for (Index j = 0; j < n; ++j) {
                        const double v = y[o * n * inner + j * inner + i];
                        CHECK(v >= 0.0);
                        total += v;
                    }
                    CHECK(std::abs(total - 1.0) <= 1e-12);
                }
            }
        }
    }
}

TEST_CASE("backward requires a scalar loss") {
    Graph g;
    Tensor t(Shape{3}, 1.0);
    t.requires_grad = true;
    Var x = g.input(t);
    CHECK_THROWS_AS(g.backward(x * x), ContractError);
}

TEST_CASE("grad_check on sum of squares") {
    auto f = [](Graph&, Var x) { return sum(x * x); };
    Tensor x = Tensor::vector({1, 2, 3});
    Graph g;
    Tensor leaf = x;
    leaf.requires_grad = true;
    Var xv = g.input(leaf);
    g.backward(f(g, xv));
    Matrix grad = xv.grad();
    CHECK(grad(0, 0) == 2.0);
    CHECK(grad(0, 1) == 4.0);
    CHECK(grad(0, 2) == 6.0);
    CHECK(grad_check(f, x) < 1e-7);
}

TEST_CASE("grad_check reports non-finite coordinates") {
    auto f = [](Graph&, Var x) { return sum(log(x)); };
    try {
        grad_check(f, Tensor::vector({1.0, 1e-7}));
        FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("coordinate 1") != std::string::npos);
    }
}

TEST_CASE("every op passes grad_check on seeded inputs") {
    std::mt19937_64 rng(2024);
    const Tensor w = random_tensor({4, 3}, rng);
    const Tensor bias = random_tensor({4}, rng);
    const Tensor col = random_tensor({5, 1}, rng, 0.5, 1.5);
    const std::vector<Index> pos = {0, 1, 2, 5, 9};
    const std::vector<Index> gather_idx = {4, 0, 0, 2};
    const std::vector<int> targets = {0, 2, 1, 1, 0};
    const std::vector<double> mask = {1, 0, 1, 1, 0.5};

    std::vector<std::pair<const char*, ScalarFn>> cases = {
        {"add", [&](Graph& g, Var x) { return sum(exp(x + g.constant(bias)) * x); }},
        {"sub", [&](Graph& g, Var x) { return sum(sigmoid(x - g.constant(bias))); }},
        {"mul-broadcast", [&](Graph& g, Var x) {
             Tensor b = bias;
             b.requires_grad = true;
             Var bv = g.input(b);
             return sum(x * bv * x);
         }},
        {"neg-exp", [](Graph&, Var x) { return sum(exp(-x)); }},
        {"log", [](Graph&, Var x) { return sum(log(x * x + x * x + exp(x))); }},
        {"sigmoid", [](Graph&, Var x) { return sum(sigmoid(x) * x); }},
        {"silu", [](Graph&, Var x) { return sum(silu(x) * silu(x)); }},
        {"log_sigmoid", [](Graph&, Var x) { return sum(log_sigmoid(x * 3.0)); }},
        {"reciprocal", [](Graph&, Var x) { return sum(reciprocal(exp(x))); }},
        {"matmul", [&](Graph& g, Var x) { return sum(silu(matmul(x, g.constant(w)))); }},
        {"transpose", [&](Graph& g, Var x) { return sum(matmul(transpose(x), x) * g.constant(Tensor::scalar(0.3))); }},
        {"softmax-last", [](Graph&, Var x) { return sum(softmax(x) * x); }},
        {"softmax-axis0", [](Graph&, Var x) { return sum(softmax(x, 0) * x); }},
        {"mean", [](Graph&, Var x) { return mean(x * x); }},
        {"row_sum", [](Graph&, Var x) { return sum(exp(row_sum(x))); }},
        {"mean_rows", [](Graph&, Var x) { return sum(exp(mean_rows(x))); }},
        {"slices", [](Graph&, Var x) {
             Var parts[] = {slice_cols(x, 2, 2), slice_cols(x, 0, 2)};
             Var rows[] = {slice_rows(x, 1, 3), concat_cols(parts)};
             return sum(silu(concat_rows(rows)));
         }},
        {"gather-scatter", [&](Graph&, Var x) {
             Var gathered = gather_rows(x, gather_idx);
             return sum(silu(scatter_add_rows(gathered, std::vector<Index>{1, 1, 3, 0}, 6)));
         }},
        {"scale_rows", [&](Graph& g, Var x) {
             Tensor c = col;
             c.requires_grad = true;
             return sum(silu(scale_rows(x, g.input(c))));
         }},
        {"rms_norm", [&](Graph& g, Var x) {
             Tensor wt = bias;
             wt.requires_grad = true;
             return sum(sigmoid(rms_norm(x, g.input(wt))) * x);
         }},
        {"rope", [&](Graph&, Var x) { return sum(silu(rope(x, pos, 2, 10000.0)) * x); }},
        {"token_logprob_sum", [&](Graph&, Var x) { return token_logprob_sum(x, targets, mask); }},
    };

    for (auto& [name, f] : cases) {
        const std::string label = name;
        CAPTURE(label);
        Tensor x = random_tensor({5, 4}, rng, 0.2, 1.2);
        if (std::string(name) == "transpose" || std::string(name) == "gather-scatter" ||
            std::string(name) == "slices") {
            x = random_tensor({5, 4}, rng);
        }
        if (std::string(name) == "token_logprob_sum") x = random_tensor({5, 3}, rng, -2.0, 2.0);
        if (std::string(name) == "matmul") x = random_tensor({5, 4}, rng);
        CHECK(grad_check(f, x) < 1e-5);
    }
}

TEST_CASE("backward twice with zero-reset grads is deterministic") {
    std::mt19937_64 rng(5);
    Parameter p("w", random_tensor({4, 4}, rng));
    Tensor x = random_tensor({3, 4}, rng);
    Graph g;
    Var loss = sum(softmax(matmul(g.constant(x), g.parameter(p))) * g.constant(x));
    g.backward(loss);
    Matrix first = p.grad;
    g.zero_grad();
    CHECK(p.grad.isZero(0.0));
    g.backward(loss);
    CHECK(p.grad == first);
}

TEST_CASE("no-grad graphs skip closures") {
    Parameter p("w", Tensor(Shape{2, 2}, 1.0));
    Graph g(false);
    Var y = sum(g.parameter(p) * g.parameter(p));
    CHECK(y.item() == 4.0);
    g.backward(y);
    CHECK(p.grad.isZero(0.0));
}
