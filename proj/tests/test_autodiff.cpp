#include <doctest.h>

#include <cmath>
#include <memory>

#include "guide/autodiff.hpp"
#include "test_helpers.hpp"

using namespace guide;
using guide::testing::rel_err;

namespace {

// 0.5 * ||out||^2
struct HalfSquaredNorm final : Objective {
    double value(const Tensor& out) const override {
        double s = 0.0;
        for (double v : out.vec()) s += v * v;
        return 0.5 * s;
    }
    Tensor grad(const Tensor& out) const override { return out; }
};

// sum(out)
struct SumOut final : Objective {
    double value(const Tensor& out) const override {
        double s = 0.0;
        for (double v : out.vec()) s += v;
        return s;
    }
    Tensor grad(const Tensor& out) const override { return Tensor::full(out.shape(), 1.0); }
};

struct ConstantLoss final : Objective {
    double value(const Tensor&) const override { return 3.14; }
    Tensor grad(const Tensor& out) const override { return Tensor(out.shape()); }
};

}  // namespace

TEST_CASE("hand-differentiated dense gradient") {
    // loss = 0.5 * ||W x||^2, x = [1, 0], W = I -> dL/dW = [[1,0],[0,0]]
    Model m = make_mlp(2, {}, 2, LayerKind::Tanh, false);
    m.layers[0].weight = Tensor({2, 2}, {1.0, 0.0, 0.0, 1.0});
    const Tensor x({1, 2}, {1.0, 0.0});
    const auto grads = grad_params(m, x, HalfSquaredNorm{});
    CHECK(grads[0].weight.at2(0, 0) == doctest::Approx(1.0));
    CHECK(grads[0].weight.at2(0, 1) == doctest::Approx(0.0));
    CHECK(grads[0].weight.at2(1, 0) == doctest::Approx(0.0));
    CHECK(grads[0].weight.at2(1, 1) == doctest::Approx(0.0));
}

TEST_CASE("constant loss gives zero gradients") {
    Rng rng(2);
    Model m = guide::testing::random_mlp(rng, 4, {5}, 3, true);
    const auto grads = grad_params(m, guide::testing::random_batch(rng, 2, 4), ConstantLoss{});
    for (const auto& g : grads) {
        for (double v : g.weight.vec()) CHECK(v == 0.0);
        for (double v : g.bias.vec()) CHECK(v == 0.0);
    }
}

TEST_CASE("frozen models yield no parameter gradients") {
    Rng rng(3);
    Model m = guide::testing::random_mlp(rng, 4, {}, 2, true);
    m.frozen = true;
    CHECK(grad_params(m, guide::testing::random_batch(rng, 1, 4), SumOut{}).empty());
}

TEST_CASE("linear model input gradient equals weights") {
    Model m = make_mlp(3, {}, 1, LayerKind::Tanh, false);
    m.layers[0].weight = Tensor({3, 1}, {2.0, -1.0, 0.5});
    const Tensor x({1, 3}, {0.3, 0.1, -0.2});
    const Tensor g = grad_input(m, x, SumOut{});
    CHECK(g[0] == doctest::Approx(2.0));
    CHECK(g[1] == doctest::Approx(-1.0));
    CHECK(g[2] == doctest::Approx(0.5));
}

TEST_CASE("objective independent of input gives zero input gradient") {
    Rng rng(4);
    Model m = guide::testing::random_mlp(rng, 4, {6}, 3, true);
    const Tensor g = grad_input(m, guide::testing::random_batch(rng, 2, 4), ConstantLoss{});
    for (double v : g.vec()) CHECK(v == 0.0);
}

TEST_CASE("parameter gradients match central finite differences on random mlps") {
    Rng rng(7);
    for (int trial = 0; trial < 6; ++trial) {
        const bool softmax = trial % 2 == 0;
        Model m = guide::testing::random_mlp(rng, 3, {4}, 2, true,
                                             trial % 3 == 1 ? LayerKind::Relu : LayerKind::Tanh, softmax);
        Tensor x = guide::testing::random_batch(rng, 2, 3);
        // Keep away from ReLU kinks.
        for (auto& v : x.vec()) {
            if (std::abs(v) < 1e-3) v += 0.1;
        }
        std::vector<int> labels = {0, 1};
        std::unique_ptr<Objective> obj;
        if (softmax) {
            obj = std::make_unique<CrossEntropy>(labels);
        } else {
            obj = std::make_unique<HalfSquaredNorm>();
        }
        const auto grads = grad_params(m, x, *obj);
        auto eval = [&]() { return obj->value(forward(m, x, false).final_output()); };
        for (size_t li = 0; li < m.layers.size(); ++li) {
            if (!layer_kind_has_params(m.layers[li].kind)) continue;
            for (size_t j = 0; j < m.layers[li].weight.size(); ++j) {
                const double fd = guide::testing::central_diff(m.layers[li].weight[j], 1e-5, eval);
                CHECK(rel_err(grads[li].weight[j], fd) < 1e-4);
            }
            for (size_t j = 0; j < m.layers[li].bias.size(); ++j) {
                const double fd = guide::testing::central_diff(m.layers[li].bias[j], 1e-5, eval);
                CHECK(rel_err(grads[li].bias[j], fd) < 1e-4);
            }
        }
    }
}

TEST_CASE("input gradients match central finite differences") {
    Rng rng(8);
    Model m = guide::testing::random_mlp(rng, 4, {5}, 3, true, LayerKind::Tanh, true);
    Tensor x = guide::testing::random_batch(rng, 1, 4);
    const CrossEntropy obj({1});
    const Tensor g = grad_input(m, x, obj);
    for (size_t j = 0; j < x.size(); ++j) {
        const double fd = guide::testing::central_diff(x[j], 1e-5, [&]() {
            return obj.value(forward(m, x, false).final_output());
        });
        CHECK(rel_err(g[j], fd) < 1e-4);
    }
}

TEST_CASE("conv/pool network gradients match finite differences") {
    Rng rng(9);
    Model m = guide::testing::mini_conv_net(5);
    Tensor x({2, 12, 12, 1});
    for (auto& v : x.vec()) v = rng.u01();
    const CrossEntropy obj({0, 2});
    const auto grads = grad_params(m, x, obj);
    auto eval = [&]() { return obj.value(forward(m, x, false).final_output()); };
    // Spot-check a spread of parameters from each parametric layer.
    for (size_t li = 0; li < m.layers.size(); ++li) {
        if (!layer_kind_has_params(m.layers[li].kind)) continue;
        const size_t step = std::max<size_t>(1, m.layers[li].weight.size() / 17);
        for (size_t j = 0; j < m.layers[li].weight.size(); j += step) {
            const double fd = guide::testing::central_diff(m.layers[li].weight[j], 1e-5, eval);
            CHECK(rel_err(grads[li].weight[j], fd) < 1e-4);
        }
        const double fd_bias = guide::testing::central_diff(m.layers[li].bias[0], 1e-5, eval);
        CHECK(rel_err(grads[li].bias[0], fd_bias) < 1e-4);
    }
    const Tensor gx = grad_input(m, x, obj);
    for (size_t j = 0; j < gx.size(); j += 13) {
        const double fd = guide::testing::central_diff(x[j], 1e-5, eval);
        CHECK(rel_err(gx[j], fd) < 2e-4);
    }
}
