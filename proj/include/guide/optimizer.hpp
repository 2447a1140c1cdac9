#pragma once

#include <vector>

#include "guide/autodiff.hpp"
#include "guide/layers.hpp"

namespace guide {

// Adam with bias correction. One state per model; moments are laid out
// parallel to the layer list.
struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class AdamState {
public:
    AdamState() = default;
    AdamState(const Model& model, AdamConfig config);

    // Applies one update in place. Throws on a frozen model.
    void step(Model& model, const std::vector<LayerGrads>& grads);

    size_t step_count() const { return t_; }
    const AdamConfig& config() const { return config_; }

private:
    AdamConfig config_;
    std::vector<LayerGrads> m_;
    std::vector<LayerGrads> v_;
    size_t t_ = 0;
};

}  // namespace guide
