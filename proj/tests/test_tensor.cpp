#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "ramf/errors.hpp"
#include "ramf/random.hpp"
#include "ramf/tensor.hpp"

using namespace ramf;

namespace {

Tensor random_tensor(std::vector<int64_t> shape, Xoshiro256ss& rng) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.gaussian();
    return t;
}

// Fixed random projection to a scalar so gradients reach every coordinate.
Var project_to_scalar(const Var& x, uint64_t seed) {
    Xoshiro256ss rng(seed);
    Tensor weights(x->val.shape);
    for (double& v : weights.data) v = rng.gaussian();
    return sum_all(mul(x, make_const(std::move(weights))));
}

// Finite-difference check of the input gradient of a unary graph function.
void check_input_gradient(const std::function<Var(const Var&)>& f, std::vector<int64_t> shape,
                          uint64_t seed, double tol = 1e-3) {
    Xoshiro256ss rng(seed);
    Var x = make_leaf(random_tensor(shape, rng));
    backward(project_to_scalar(f(x), seed ^ 0x5a5a));
    REQUIRE(!x->grad.data.empty());
    const double step = 1e-5;
    Xoshiro256ss pick(seed ^ 0x77);
    for (int c = 0; c < 12; ++c) {
        const int64_t idx =
            static_cast<int64_t>(pick.bounded(static_cast<uint64_t>(x->val.numel())));
        const double saved = x->val.data[idx];
        x->val.data[idx] = saved + step;
        const double plus = project_to_scalar(f(x), seed ^ 0x5a5a)->val.data[0];
        x->val.data[idx] = saved - step;
        const double minus = project_to_scalar(f(x), seed ^ 0x5a5a)->val.data[0];
        x->val.data[idx] = saved;
        const double fd = (plus - minus) / (2 * step);
        const double an = x->grad.data[idx];
        const double denom = std::max({std::fabs(fd), std::fabs(an), 1e-8});
        CHECK(std::fabs(fd - an) / denom < tol);
    }
}

}  // namespace

TEST_CASE("matmul matches the scalar-loop oracle") {
    Xoshiro256ss rng(11);
    Var a = make_const(random_tensor({4, 6}, rng));
    Var b = make_const(random_tensor({6, 3}, rng));
    Var c = matmul(a, b);
    for (int64_t i = 0; i < 4; ++i) {
        for (int64_t j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (int64_t k = 0; k < 6; ++k) acc += a->val.at2(i, k) * b->val.at2(k, j);
            CHECK(c->val.at2(i, j) == doctest::Approx(acc).epsilon(1e-12));
        }
    }
    CHECK_THROWS_AS((void)matmul(a, a), Error);
}

TEST_CASE("matmul_nt equals matmul against the transpose") {
    Xoshiro256ss rng(12);
    Var a = make_const(random_tensor({3, 5}, rng));
    Var b = make_const(random_tensor({4, 5}, rng));
    Var c = matmul_nt(a, b);
    for (int64_t i = 0; i < 3; ++i) {
        for (int64_t j = 0; j < 4; ++j) {
            double acc = 0.0;
            for (int64_t k = 0; k < 5; ++k) acc += a->val.at2(i, k) * b->val.at2(j, k);
            CHECK(c->val.at2(i, j) == doctest::Approx(acc).epsilon(1e-12));
        }
    }
}

TEST_CASE("backward accumulates through shared subexpressions") {
    // f(x) = sum(mean_rows(x) + mean_rows(x)) so df/dx = 2/L everywhere.
    Xoshiro256ss rng(5);
    Var x = make_leaf(random_tensor({4, 3}, rng));
    Var m = mean_rows(x);
    backward(sum_all(add(m, m)));
    REQUIRE(!x->grad.data.empty());
    for (double g : x->grad.data) CHECK(g == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("input gradients per op match finite differences") {
    check_input_gradient([](const Var& x) { return relu(x); }, {5, 4}, 100);
    check_input_gradient([](const Var& x) { return sigmoid(x); }, {5, 4}, 101);
    check_input_gradient([](const Var& x) { return tanh_op(x); }, {5, 4}, 102);
    check_input_gradient([](const Var& x) { return max_rows(x); }, {6, 3}, 103);
    check_input_gradient([](const Var& x) { return mean_rows(x); }, {6, 3}, 104);

    Xoshiro256ss rng(42);
    Tensor w_t = random_tensor({4, 5}, rng);
    Tensor b_t = random_tensor({5}, rng);
    check_input_gradient(
        [&](const Var& x) { return affine(x, make_const(w_t), make_const(b_t)); }, {7, 4}, 105);

    Tensor k_dw = random_tensor({3, 4}, rng);
    Tensor k_b = random_tensor({4}, rng);
    check_input_gradient(
        [&](const Var& x) { return conv1d_time(x, make_const(k_dw), make_const(k_b), false); },
        {6, 4}, 106);
    Tensor k_mix = random_tensor({3, 4, 4}, rng);
    check_input_gradient(
        [&](const Var& x) { return conv1d_time(x, make_const(k_mix), make_const(k_b), true); },
        {6, 4}, 107);

    Tensor gamma = Tensor::full({6}, 1.3);
    Tensor beta = random_tensor({6}, rng);
    check_input_gradient(
        [&](const Var& x) { return group_norm_rows(x, make_const(gamma), make_const(beta), 2); },
        {4, 6}, 108);

    Tensor w9 = random_tensor({4, 4}, rng);
    check_input_gradient([&](const Var& x) { return matmul(x, make_const(w9)); }, {3, 4}, 109);
    check_input_gradient([&](const Var& x) { return matmul_nt(x, make_const(w9)); }, {3, 4}, 113);
}

TEST_CASE("softmax rows are stochastic and masked entries vanish") {
    Xoshiro256ss rng(9);
    Var logits = make_leaf(random_tensor({2, 4, 4}, rng));
    auto mask = std::vector<uint8_t>(16, 0);
    for (int64_t i = 0; i < 4; ++i) {
        for (int64_t j = i + 1; j < 4; ++j) mask[i * 4 + j] = 1;
    }
    Var a = softmax_maps_masked(logits, mask);
    for (int64_t h = 0; h < 2; ++h) {
        for (int64_t i = 0; i < 4; ++i) {
            double sum = 0.0;
            for (int64_t j = 0; j < 4; ++j) sum += a->val.at3(h, i, j);
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
            for (int64_t j = i + 1; j < 4; ++j) CHECK(a->val.at3(h, i, j) == 0.0);
        }
        CHECK(a->val.at3(h, 0, 0) == 1.0);  // first row attends only to itself
    }
    check_input_gradient(
        [&](const Var& x) { return softmax_maps_masked(x, mask); }, {2, 4, 4}, 110);
}

TEST_CASE("softmax rejects non-finite logits") {
    Tensor bad({1, 2, 2});
    bad.data[0] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS((void)softmax_maps_masked(make_const(bad), {}), Error);
}

TEST_CASE("pair_mix mixes head pairs entrywise") {
    Xoshiro256ss rng(21);
    Var maps = make_leaf(random_tensor({4, 3, 3}, rng));
    Tensor mix({2, 2, 2});
    // swap within each pair
    mix.at3(0, 0, 1) = 1.0;
    mix.at3(0, 1, 0) = 1.0;
    mix.at3(1, 0, 1) = 1.0;
    mix.at3(1, 1, 0) = 1.0;
    Var mixed = pair_mix(maps, make_const(mix));
    for (int64_t i = 0; i < 9; ++i) {
        CHECK(mixed->val.data[0 * 9 + i] == maps->val.data[1 * 9 + i]);
        CHECK(mixed->val.data[1 * 9 + i] == maps->val.data[0 * 9 + i]);
        CHECK(mixed->val.data[2 * 9 + i] == maps->val.data[3 * 9 + i]);
        CHECK(mixed->val.data[3 * 9 + i] == maps->val.data[2 * 9 + i]);
    }
    Tensor random_mix = random_tensor({2, 2, 2}, rng);
    check_input_gradient(
        [&](const Var& x) { return pair_mix(x, make_const(random_mix)); }, {4, 3, 3}, 111);
    CHECK_THROWS_AS((void)pair_mix(make_const(random_tensor({3, 2, 2}, rng)), make_const(mix)),
                    Error);
}

TEST_CASE("conv2d_shared applies the one kernel to every head") {
    Xoshiro256ss rng(33);
    Tensor kernel = random_tensor({3, 3}, rng);
    Tensor bias = random_tensor({1}, rng);
    Var maps = make_const(random_tensor({3, 5, 5}, rng));
    Var out = conv2d_shared(maps, make_const(kernel), make_const(bias));

    oracle::Matrix k = oracle::make_matrix(3, 3);
    for (int64_t i = 0; i < 3; ++i) {
        for (int64_t j = 0; j < 3; ++j) k[i][j] = kernel.at2(i, j);
    }
    for (int64_t h = 0; h < 3; ++h) {
        oracle::Matrix m = oracle::make_matrix(5, 5);
        for (int64_t i = 0; i < 5; ++i) {
            for (int64_t j = 0; j < 5; ++j) m[i][j] = maps->val.at3(h, i, j);
        }
        oracle::Matrix expect = oracle::conv2d_3x3(m, k, bias.data[0]);
        for (int64_t i = 0; i < 5; ++i) {
            for (int64_t j = 0; j < 5; ++j) {
                CHECK(out->val.at3(h, i, j) == doctest::Approx(expect[i][j]).epsilon(1e-9));
            }
        }
    }
    check_input_gradient(
        [&](const Var& x) { return conv2d_shared(x, make_const(kernel), make_const(bias)); },
        {3, 5, 5}, 112);
}

TEST_CASE("cross entropy gradient is softmax minus one-hot") {
    Tensor logits({2});
    logits.data = {0.3, -1.1};
    Var l = make_leaf(logits);
    Var loss = cross_entropy_logits(l, 1);
    backward(loss);
    const double m = std::max(0.3, -1.1);
    const double e0 = std::exp(0.3 - m), e1 = std::exp(-1.1 - m);
    CHECK(l->grad.data[0] == doctest::Approx(e0 / (e0 + e1)).epsilon(1e-12));
    CHECK(l->grad.data[1] == doctest::Approx(e1 / (e0 + e1) - 1.0).epsilon(1e-12));
    CHECK(loss->val.data[0] == doctest::Approx(-std::log(e1 / (e0 + e1))).epsilon(1e-12));
}

TEST_CASE("adam with zero learning rate leaves parameters untouched") {
    Xoshiro256ss rng(3);
    ParamStore params;
    Var p = params.add("p", random_tensor({4, 4}, rng));
    const std::vector<double> before = p->val.data;
    AdamOptimizer opt(params, 0.0);
    for (int i = 0; i < 3; ++i) {
        params.zero_grad();
        backward(sum_all(p));
        opt.step(params);
    }
    CHECK(p->val.data == before);
}

TEST_CASE("param store rejects duplicates and reports counts") {
    ParamStore params;
    params.add("a", Tensor::zeros({2, 3}));
    params.add("b", Tensor::zeros({5}));
    CHECK(params.param_count() == 11);
    CHECK_THROWS_AS(params.add("a", Tensor::zeros({1})), Error);
}

TEST_CASE("portable rng is stable across instantiations") {
    Xoshiro256ss a(123), b(123);
    for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
    Xoshiro256ss c(123);
    double first = c.gaussian();
    Xoshiro256ss d(123);
    CHECK(first == d.gaussian());
}
