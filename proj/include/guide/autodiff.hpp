#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "guide/layers.hpp"
#include "guide/tensor.hpp"

namespace guide {

// Scalar objective over the model's final batch output. Implementations
// provide the analytic gradient with respect to that output; reverse-mode
// propagation through the network is handled by the functions below.
struct Objective {
    virtual ~Objective() = default;
    virtual double value(const Tensor& out) const = 0;
    virtual Tensor grad(const Tensor& out) const = 0;
};

// Mean cross-entropy over the batch against integer labels. Expects the
// model's probability output (terminal softmax); probabilities are clamped
// at 1e-12 inside the log.
struct CrossEntropy final : Objective {
    explicit CrossEntropy(std::vector<int> labels) : labels(std::move(labels)) {}
    double value(const Tensor& out) const override;
    Tensor grad(const Tensor& out) const override;
    std::vector<int> labels;
};

struct LayerGrads {
    Tensor weight;  // empty for parameter-free layers
    Tensor bias;
};

// dL/d(output of layer `index`) for one full-batch gradient walk. Seeds are
// added when the walk reaches that depth, letting several taps contribute to
// one input gradient (the meta-model head reads multiple feature points).
struct GradSeed {
    size_t layer_index;
    Tensor grad;  // same shape as that layer's batch output
};

// Propagates gradient seeds backwards from the deepest seeded layer down to
// (and including) layer `stop_after`; returns dL/d(output of stop_after-1),
// i.e. the gradient at the model input when stop_after == 0. When
// param_grads is non-null, parameter gradients are accumulated along the way.
Tensor backward_walk(const Model& model, const ForwardTrace& trace, std::vector<GradSeed> seeds, size_t stop_after,
                     std::vector<LayerGrads>* param_grads);

// Gradient of `objective` w.r.t. every trainable parameter. A frozen model
// yields an empty result by contract.
std::vector<LayerGrads> grad_params(const Model& model, const Tensor& batch, const Objective& objective);
std::vector<LayerGrads> grad_params(const Model& model, const ForwardTrace& trace, const Objective& objective);

// Gradient of `objective` w.r.t. the input batch.
Tensor grad_input(const Model& model, const Tensor& batch, const Objective& objective);

}  // namespace guide
