#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "stripmlp/autograd.hpp"

using namespace stripmlp;
namespace ag = stripmlp::autograd;

TEST_CASE("backward: sum gives ones, hand chain rule, fan-out adds") {
    std::mt19937_64 rng(2);

    SUBCASE("loss = sum(x)") {
        ag::Var x = ag::leaf(oracle::random_tensor({2, 3}, rng), true);
        ag::backward(ag::sum_all(x));
        for (Index i = 0; i < 6; ++i) {
            CHECK(x->grad.data()[i] == 1.0);
        }
    }

    SUBCASE("loss = sum(w * x), x fixed: dw equals x on a 2x2") {
        Tensor xv({2, 2}, {1.0, -2.0, 3.0, 0.5});
        ag::Var w = ag::leaf(oracle::random_tensor({2, 2}, rng), true);
        ag::Var x = ag::constant(xv);
        ag::backward(ag::sum_all(ag::mul(w, x)));
        CHECK(oracle::max_abs_diff(w->grad, xv) == 0.0);
        CHECK_FALSE(x->has_grad);  // non-requires-grad leaves receive none
    }

    SUBCASE("node used twice accumulates both paths") {
        ag::Var x = ag::leaf(Tensor({2}, {1.0, 2.0}), true);
        // y = x + x  =>  dy/dx = 2
        ag::backward(ag::sum_all(ag::add(x, x)));
        CHECK(x->grad.data()[0] == 2.0);
        CHECK(x->grad.data()[1] == 2.0);
    }

    SUBCASE("leaf ignored by the loss gets zero gradient") {
        ag::Var x = ag::leaf(Tensor({2}, {1.0, 2.0}), true);
        ag::Var unused = ag::leaf(Tensor({2}, {5.0, 6.0}), true);
        ag::backward(ag::sum_all(x));
        CHECK_FALSE(unused->has_grad);
    }

    SUBCASE("non-scalar loss is a usage error") {
        ag::Var x = ag::leaf(Tensor({2}, {1.0, 2.0}), true);
        CHECK_THROWS_AS(ag::backward(ag::scale(x, 2.0)), UsageError);
    }
}

TEST_CASE("finite differences: exact for linear and quadratic scalars") {
    ag::Var x = ag::leaf(Tensor({3}, {1.0, -0.5, 2.0}), true);
    double err = ag::finite_diff_check([&] { return ag::sum_all(ag::scale(x, 3.0)); }, x);
    CHECK(err <= 1e-9);

    ag::Var x3 = ag::leaf(Tensor({1}, {3.0}), true);
    err = ag::finite_diff_check([&] { return ag::sum_all(ag::mul(x3, x3)); }, x3);
    // analytic gradient of x^2 at 3 is 6; central differences are exact for
    // quadratics up to roundoff
    ag::backward(ag::sum_all(ag::mul(x3, x3)));
    CHECK(err <= 1e-9);
}

namespace {

// Scalarize a tensor-valued graph with a fixed random projection.
ag::Var project(const ag::Var& y, std::mt19937_64& rng) {
    Tensor r = oracle::random_tensor(y->value.shape(), rng);
    return ag::sum_all(ag::mul(y, ag::constant(r)));
}

}  // namespace

TEST_CASE("finite_diff_check passes for every differentiable op") {
    std::mt19937_64 rng(42);
    const double tol = 1e-5;

    SUBCASE("linear, with and without bias") {
        ag::Var x = ag::leaf(oracle::random_tensor({3, 4}, rng), true);
        ag::Var w = ag::leaf(oracle::random_tensor({5, 4}, rng), true);
        ag::Var b = ag::leaf(oracle::random_tensor({5}, rng), true);
        auto fixed = [&] {
            std::mt19937_64 local(7);
            return project(ag::linear(x, w, b), local);
        };
        CHECK(ag::finite_diff_check(fixed, x) <= tol);
        CHECK(ag::finite_diff_check(fixed, w) <= tol);
        CHECK(ag::finite_diff_check(fixed, b) <= tol);
    }

    SUBCASE("conv2d grouped") {
        ConvSpec sp{4, 6, 3, 3, 1, 1, 1, 1, 2, true};
        ag::Var x = ag::leaf(oracle::random_tensor({2, 4, 5, 5}, rng), true);
        ag::Var w = ag::leaf(oracle::random_tensor(sp.weight_shape(), rng), true);
        ag::Var b = ag::leaf(oracle::random_tensor({6}, rng), true);
        auto fixed = [&] {
            std::mt19937_64 local(8);
            return project(ag::conv2d(x, sp, w, b), local);
        };
        CHECK(ag::finite_diff_check(fixed, x) <= tol);
        CHECK(ag::finite_diff_check(fixed, w) <= tol);
        CHECK(ag::finite_diff_check(fixed, b) <= tol);
    }

    SUBCASE("batch_norm2d train mode, batch statistics inside the function") {
        ag::Var x = ag::leaf(oracle::random_tensor({2, 3, 4, 4}, rng), true);
        ag::Var gamma = ag::leaf(oracle::random_tensor({3}, rng), true);
        ag::Var beta = ag::leaf(oracle::random_tensor({3}, rng), true);
        Tensor rm = Tensor::zeros({3});
        Tensor rv = Tensor::full({3}, 1.0);
        auto fixed = [&] {
            std::mt19937_64 local(9);
            return project(
                ag::batch_norm2d(x, gamma, beta, rm, rv, true, false), local);
        };
        CHECK(ag::finite_diff_check(fixed, x) <= tol);
        CHECK(ag::finite_diff_check(fixed, gamma) <= tol);
        CHECK(ag::finite_diff_check(fixed, beta) <= tol);
    }

    SUBCASE("gelu, softmax, pooling") {
        ag::Var x = ag::leaf(oracle::random_tensor({2, 3, 4, 4}, rng), true);
        auto g1 = [&] {
            std::mt19937_64 local(10);
            return project(ag::gelu(x), local);
        };
        CHECK(ag::finite_diff_check(g1, x) <= tol);

        ag::Var z = ag::leaf(oracle::random_tensor({3, 5}, rng), true);
        auto g2 = [&] {
            std::mt19937_64 local(11);
            return project(ag::softmax_axis(z, 1), local);
        };
        CHECK(ag::finite_diff_check(g2, z) <= tol);

        auto g3 = [&] {
            std::mt19937_64 local(12);
            return project(ag::global_avg_pool(x), local);
        };
        CHECK(ag::finite_diff_check(g3, x) <= tol);
    }

    SUBCASE("layout ops: permute, reshape, concat, split") {
        ag::Var x = ag::leaf(oracle::random_tensor({2, 4, 3, 3}, rng), true);
        auto g1 = [&] {
            std::mt19937_64 local(13);
            auto parts = ag::split(x, 1, {1, 3});
            auto back = ag::concat({parts[1], parts[0]}, 1);
            auto moved = ag::permute(back, {0, 2, 3, 1});
            return project(ag::reshape(moved, {2, 36}), local);
        };
        CHECK(ag::finite_diff_check(g1, x) <= tol);
    }

    SUBCASE("channel helpers: scale_channels, channel_affine, normalization chain") {
        ag::Var x = ag::leaf(oracle::random_tensor({2, 4, 3, 3}, rng), true);
        ag::Var s = ag::leaf(oracle::random_tensor({2, 4}, rng), true);
        ag::Var gain = ag::leaf(oracle::random_tensor({4}, rng), true);
        ag::Var shift = ag::leaf(oracle::random_tensor({4}, rng), true);
        auto g1 = [&] {
            std::mt19937_64 local(14);
            auto scaled = ag::scale_channels(x, s);
            auto affine = ag::channel_affine(scaled, gain, shift);
            // full chain used by response normalization
            auto norm = ag::div(ag::sqrt_elem(ag::sum_spatial(ag::mul(x, x))),
                                ag::add_scalar(ag::row_mean_broadcast(ag::sqrt_elem(
                                                   ag::sum_spatial(ag::mul(x, x)))),
                                               1e-6));
            auto y = ag::add(affine, ag::scale_channels(x, norm));
            return project(y, local);
        };
        CHECK(ag::finite_diff_check(g1, x) <= tol);
        CHECK(ag::finite_diff_check(g1, s) <= tol);
        CHECK(ag::finite_diff_check(g1, gain) <= tol);
        CHECK(ag::finite_diff_check(g1, shift) <= tol);
    }

    SUBCASE("cross entropy with label smoothing") {
        ag::Var logits = ag::leaf(oracle::random_tensor({4, 6}, rng), true);
        std::vector<int> labels{0, 3, 5, 2};
        auto g1 = [&] { return ag::cross_entropy(logits, labels, 0.1); };
        CHECK(ag::finite_diff_check(g1, logits) <= tol);
    }
}

TEST_CASE("NoGradGuard builds no graph") {
    ag::Var x = ag::leaf(Tensor({2}, {1.0, 2.0}), true);
    ag::NoGradGuard guard;
    ag::Var y = ag::sum_all(ag::scale(x, 2.0));
    CHECK_FALSE(y->requires_grad);
    CHECK(y->parents.empty());
}
