#pragma once

#include <cmath>
#include <vector>

#include "guide/autodiff.hpp"
#include "guide/layers.hpp"
#include "guide/rng.hpp"

namespace guide::testing {

// Small random dense net for gradient / relevance oracles.
inline Model random_mlp(Rng& rng, size_t input_dim, const std::vector<size_t>& hidden, size_t classes,
                        bool with_bias, LayerKind activation = LayerKind::Tanh, bool softmax = false) {
    Model m = make_mlp(input_dim, hidden, classes, activation, softmax);
    for (auto& l : m.layers) {
        if (!layer_kind_has_params(l.kind)) continue;
        for (auto& v : l.weight.vec()) v = rng.normal() * 0.7;
        for (auto& v : l.bias.vec()) v = with_bias ? rng.normal() * 0.3 : 0.0;
    }
    return m;
}

inline Tensor random_batch(Rng& rng, size_t n, size_t dim, double scale = 1.0) {
    Tensor t({n, dim});
    for (auto& v : t.vec()) v = rng.normal() * scale;
    return t;
}

// 12x12x1 input, both pool kinds, both activation kinds:
// conv(3,k3,same)+tanh -> avgpool -> conv(4,k3,valid)+relu -> maxpool ->
// flatten -> dense(K) -> softmax.
inline Model mini_conv_net(uint64_t seed, size_t classes = 3, bool with_bias = true) {
    Model m;
    m.input_shape = {12, 12, 1};
    m.num_classes = classes;
    auto conv = [&m](size_t cin, size_t cout, size_t k, size_t pad) {
        Layer l;
        l.kind = LayerKind::Conv2d;
        l.kernel = k;
        l.stride = 1;
        l.pad = pad;
        l.weight = Tensor({k, k, cin, cout});
        l.bias = Tensor({cout});
        m.layers.push_back(std::move(l));
    };
    auto act = [&m](LayerKind k) { m.layers.push_back(Layer{.kind = k}); };
    auto pool = [&m](LayerKind k) {
        Layer l;
        l.kind = k;
        l.kernel = 2;
        l.stride = 2;
        m.layers.push_back(std::move(l));
    };
    conv(1, 3, 3, 1);
    act(LayerKind::Tanh);
    pool(LayerKind::AvgPool2d);
    conv(3, 4, 3, 0);
    act(LayerKind::Relu);
    pool(LayerKind::MaxPool2d);
    m.layers.push_back(Layer{.kind = LayerKind::Flatten});
    Layer fc;
    fc.kind = LayerKind::Dense;
    fc.weight = Tensor({2 * 2 * 4, classes});
    fc.bias = Tensor({classes});
    m.layers.push_back(std::move(fc));
    act(LayerKind::Softmax);
    m.finalize();
    Rng rng = derive_stream(seed, 0x33);
    for (auto& l : m.layers) {
        if (!layer_kind_has_params(l.kind)) continue;
        for (auto& v : l.weight.vec()) v = rng.normal() * 0.4;
        for (auto& v : l.bias.vec()) v = with_bias ? rng.normal() * 0.2 : 0.0;
    }
    return m;
}

// Central finite difference of `objective` w.r.t. one coordinate of a
// parameter tensor, reusing the network forward path.
template <class Eval>
double central_diff(double& slot, double step, const Eval& eval) {
    const double saved = slot;
    slot = saved + step;
    const double hi = eval();
    slot = saved - step;
    const double lo = eval();
    slot = saved;
    return (hi - lo) / (2.0 * step);
}

inline double rel_err(double got, double want) {
    const double denom = std::max({std::abs(got), std::abs(want), 1e-10});
    return std::abs(got - want) / denom;
}

}  // namespace guide::testing
