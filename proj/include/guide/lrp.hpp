#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "guide/layers.hpp"
#include "guide/tensor.hpp"

namespace guide {

// Relevance maps of one input: one tensor per eligible feature point plus
// the input-level map. Produced by a single backward relevance pass.
struct RelevanceBundle {
    std::vector<FeaturePoint> points;      // eligible taps, model order
    std::vector<Tensor> layer_relevance;   // parallel to points, per-sample shape
    Tensor input_relevance;                // same shape as one input sample
    double true_class_logit = 0.0;

    double layer_sum(size_t point_index) const;
    double input_sum() const;
};

// Feature taps usable for relevance accounting and the meta-model. Throws
// when the model exposes none (e.g. a bare softmax head).
std::vector<FeaturePoint> eligible_layers(const Model& model);

// Epsilon-stabilised relevance propagation for a single sample. Relevance is
// initialised at the logits as z .* e_y and redistributed through every layer
// down to the input.
//
// `epsilon` is a relative stabiliser scale: each linear/pooling layer uses a
// sign-stable stabiliser of epsilon * mean(|denominator|) (floored at 1e-9
// when epsilon > 0). epsilon == 0 gives the exact unstabilised rule; negative
// values are rejected. Bias contributions are absorbed, not redistributed.
RelevanceBundle lrp(const Model& model, const Tensor& x, int label, double epsilon);

// Number of relevance propagation passes executed so far (test
// instrumentation for the one-pass contract).
uint64_t lrp_pass_count();

}  // namespace guide
