#include "guide/lrp.hpp"

#include <cmath>
#include <stdexcept>

namespace guide {

namespace {

std::atomic<uint64_t> g_lrp_passes{0};

double sign_stable(double z, double eps_abs) {
    return z >= 0.0 ? z + eps_abs : z - eps_abs;
}

// Stabiliser magnitude for one layer's pre-activations.
double layer_eps(const double* z, size_t n, double eps_rel) {
    if (eps_rel == 0.0) return 0.0;
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += std::abs(z[i]);
    const double e = eps_rel * acc / static_cast<double>(n);
    return std::max(e, 1e-9);
}

void dense_relevance(const Layer& L, const double* a_in, const double* z_out, const std::vector<double>& r_out,
                     std::vector<double>& r_in, double eps_rel) {
    const size_t din = L.in_shape[0], dout = L.out_shape[0];
    const double eps_abs = layer_eps(z_out, dout, eps_rel);
    for (size_t j = 0; j < dout; ++j) {
        if (r_out[j] == 0.0) continue;
        const double denom = sign_stable(z_out[j], eps_abs);
        if (denom == 0.0) continue;  // dead neuron absorbs its relevance
        const double scale = r_out[j] / denom;
        const double* wcol = L.weight.data() + j;  // stride dout over inputs
        for (size_t i = 0; i < din; ++i) {
            r_in[i] += a_in[i] * wcol[i * dout] * scale;
        }
    }
}

void conv_relevance(const Layer& L, const double* a_in, const double* z_out, const std::vector<double>& r_out,
                    std::vector<double>& r_in, double eps_rel) {
    const size_t h = L.in_shape[0], w = L.in_shape[1], cin = L.in_shape[2];
    const size_t ho = L.out_shape[0], wo = L.out_shape[1], cout = L.out_shape[2];
    const size_t k = L.kernel, s = L.stride, p = L.pad;
    const double eps_abs = layer_eps(z_out, ho * wo * cout, eps_rel);
    for (size_t oy = 0; oy < ho; ++oy) {
        for (size_t ox = 0; ox < wo; ++ox) {
            for (size_t co = 0; co < cout; ++co) {
                const size_t j = (oy * wo + ox) * cout + co;
                if (r_out[j] == 0.0) continue;
                const double denom = sign_stable(z_out[j], eps_abs);
                if (denom == 0.0) continue;
                const double scale = r_out[j] / denom;
                for (size_t ky = 0; ky < k; ++ky) {
                    const long iy = static_cast<long>(oy * s + ky) - static_cast<long>(p);
                    if (iy < 0 || iy >= static_cast<long>(h)) continue;
                    for (size_t kx = 0; kx < k; ++kx) {
                        const long ix = static_cast<long>(ox * s + kx) - static_cast<long>(p);
                        if (ix < 0 || ix >= static_cast<long>(w)) continue;
                        const double* wcell = L.weight.data() + ((ky * k + kx) * cin) * cout + co;
                        const double* acell = a_in + (static_cast<size_t>(iy) * w + static_cast<size_t>(ix)) * cin;
                        double* rcell = r_in.data() + (static_cast<size_t>(iy) * w + static_cast<size_t>(ix)) * cin;
                        for (size_t ci = 0; ci < cin; ++ci) {
                            rcell[ci] += acell[ci] * wcell[ci * cout] * scale;
                        }
                    }
                }
            }
        }
    }
}

void avgpool_relevance(const Layer& L, const double* a_in, const double* z_out, const std::vector<double>& r_out,
                       std::vector<double>& r_in, double eps_rel) {
    const size_t h = L.in_shape[0], w = L.in_shape[1], c = L.in_shape[2];
    const size_t ho = L.out_shape[0], wo = L.out_shape[1];
    const size_t k = L.kernel, s = L.stride;
    const double inv_area = 1.0 / static_cast<double>(k * k);
    const double eps_abs = layer_eps(z_out, ho * wo * c, eps_rel);
    for (size_t oy = 0; oy < ho; ++oy) {
        for (size_t ox = 0; ox < wo; ++ox) {
            for (size_t ch = 0; ch < c; ++ch) {
                const size_t j = (oy * wo + ox) * c + ch;
                if (r_out[j] == 0.0) continue;
                const double denom = sign_stable(z_out[j], eps_abs);
                if (denom == 0.0) continue;
                const double scale = r_out[j] / denom;
                for (size_t ky = 0; ky < k; ++ky) {
                    for (size_t kx = 0; kx < k; ++kx) {
                        const size_t idx = ((oy * s + ky) * w + (ox * s + kx)) * c + ch;
                        r_in[idx] += a_in[idx] * inv_area * scale;
                    }
                }
            }
        }
    }
}

}  // namespace

double RelevanceBundle::layer_sum(size_t point_index) const {
    return pairwise_sum(layer_relevance.at(point_index).vec());
}

double RelevanceBundle::input_sum() const {
    return pairwise_sum(input_relevance.vec());
}

std::vector<FeaturePoint> eligible_layers(const Model& model) {
    if (!model.frozen) throw std::logic_error("eligible_layers: model must be frozen");
    auto pts = model.feature_points();
    if (pts.empty()) throw std::invalid_argument("model exposes no eligible feature layers");
    return pts;
}

uint64_t lrp_pass_count() { return g_lrp_passes.load(); }

RelevanceBundle lrp(const Model& model, const Tensor& x, int label, double epsilon) {
    if (epsilon < 0.0) throw std::invalid_argument("lrp: epsilon must be non-negative");
    if (!model.frozen) throw std::logic_error("lrp: model must be frozen");
    if (label < 0 || static_cast<size_t>(label) >= model.num_classes) throw std::invalid_argument("lrp: bad label");

    Tensor batch = x;
    if (x.shape() == model.input_shape) {
        std::vector<size_t> shape{1};
        shape.insert(shape.end(), x.shape().begin(), x.shape().end());
        batch = x.reshaped(shape);
    }
    if (batch.dim(0) != 1) throw std::invalid_argument("lrp: one sample at a time");

    const ForwardTrace trace = forward(model, batch, true);
    g_lrp_passes.fetch_add(1);

    RelevanceBundle bundle;
    bundle.points = model.feature_points();

    const size_t logits_idx = model.logits_layer();
    const Tensor& logits = trace.outputs[logits_idx];
    const double zy = logits[static_cast<size_t>(label)];
    bundle.true_class_logit = zy;

    // R at the logits: z .* e_y.
    std::vector<double> rel(model.num_classes, 0.0);
    rel[static_cast<size_t>(label)] = zy;

    bundle.layer_relevance.resize(bundle.points.size());
    auto record_if_tap = [&](size_t layer_index, const std::vector<double>& r) {
        for (size_t t = 0; t < bundle.points.size(); ++t) {
            if (bundle.points[t].layer_index == layer_index) {
                bundle.layer_relevance[t] = Tensor(model.layers[layer_index].out_shape, r);
            }
        }
    };

    for (size_t i = logits_idx + 1; i-- > 0;) {
        record_if_tap(i, rel);
        const Layer& L = model.layers[i];
        const double* a_in = (i == 0) ? trace.input.data() : trace.outputs[i - 1].data();
        const double* z_out = trace.outputs[i].data();
        std::vector<double> r_in(shape_product(L.in_shape), 0.0);
        switch (L.kind) {
            case LayerKind::Dense:
                dense_relevance(L, a_in, z_out, rel, r_in, epsilon);
                break;
            case LayerKind::Conv2d:
                conv_relevance(L, a_in, z_out, rel, r_in, epsilon);
                break;
            case LayerKind::AvgPool2d:
                avgpool_relevance(L, a_in, z_out, rel, r_in, epsilon);
                break;
            case LayerKind::MaxPool2d: {
                const auto& argmax = trace.pool_argmax.at(i);
                for (size_t j = 0; j < rel.size(); ++j) r_in[argmax[j]] += rel[j];
                break;
            }
            case LayerKind::Flatten:
            case LayerKind::Tanh:
            case LayerKind::Relu:
                r_in = rel;  // identity redistribution
                break;
            case LayerKind::Softmax:
                throw std::logic_error("lrp: softmax in relevance path");
        }
        rel = std::move(r_in);
    }

    bundle.input_relevance = Tensor(model.input_shape, rel);
    bundle.input_relevance.require_finite("relevance propagation");
    for (const auto& t : bundle.layer_relevance) t.require_finite("relevance propagation");
    return bundle;
}

}  // namespace guide
