#include "guide/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace guide {

AdamState::AdamState(const Model& model, AdamConfig config) : config_(config) {
    m_.resize(model.layers.size());
    v_.resize(model.layers.size());
    for (size_t i = 0; i < model.layers.size(); ++i) {
        if (!layer_kind_has_params(model.layers[i].kind)) continue;
        m_[i].weight = Tensor(model.layers[i].weight.shape());
        m_[i].bias = Tensor(model.layers[i].bias.shape());
        v_[i].weight = Tensor(model.layers[i].weight.shape());
        v_[i].bias = Tensor(model.layers[i].bias.shape());
    }
}

void AdamState::step(Model& model, const std::vector<LayerGrads>& grads) {
    if (model.frozen) throw std::logic_error("adam step on a frozen model");
    if (grads.size() != model.layers.size()) throw std::invalid_argument("adam step: gradient layout mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    auto update = [&](Tensor& param, const Tensor& grad, Tensor& m, Tensor& v) {
        if (param.size() == 0) return;
        if (!grad.same_shape(param)) throw std::invalid_argument("adam step: gradient shape mismatch");
        for (size_t j = 0; j < param.size(); ++j) {
            const double g = grad[j];
            m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g;
            v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g * g;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            param[j] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
        }
    };
    for (size_t i = 0; i < model.layers.size(); ++i) {
        if (!layer_kind_has_params(model.layers[i].kind)) continue;
        update(model.layers[i].weight, grads[i].weight, m_[i].weight, v_[i].weight);
        update(model.layers[i].bias, grads[i].bias, m_[i].bias, v_[i].bias);
    }
}

}  // namespace guide
