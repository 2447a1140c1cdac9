#include "guide/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace guide {

double CrossEntropy::value(const Tensor& out) const {
    const size_t n = out.dim(0), k = out.dim(1);
    if (labels.size() != n) throw std::invalid_argument("cross-entropy: label count mismatch");
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double p = std::max(out[i * k + static_cast<size_t>(labels[i])], 1e-12);
        total -= std::log(p);
    }
    return total / static_cast<double>(n);
}

Tensor CrossEntropy::grad(const Tensor& out) const {
    const size_t n = out.dim(0), k = out.dim(1);
    Tensor g(out.shape());
    const double inv_n = 1.0 / static_cast<double>(n);
    for (size_t i = 0; i < n; ++i) {
        const size_t y = static_cast<size_t>(labels[i]);
        const double p = std::max(out[i * k + y], 1e-12);
        g[i * k + y] = -inv_n / p;
    }
    return g;
}

namespace {

constexpr size_t kConvChunk = 32;

void im2col_fill(const double* in, size_t h, size_t w, size_t c, size_t k, size_t s, size_t p, size_t ho, size_t wo,
                 double* cols) {
    size_t row = 0;
    for (size_t oy = 0; oy < ho; ++oy) {
        for (size_t ox = 0; ox < wo; ++ox, ++row) {
            double* dst = cols + row * (k * k * c);
            for (size_t ky = 0; ky < k; ++ky) {
                const long iy = static_cast<long>(oy * s + ky) - static_cast<long>(p);
                for (size_t kx = 0; kx < k; ++kx) {
                    const long ix = static_cast<long>(ox * s + kx) - static_cast<long>(p);
                    double* cell = dst + (ky * k + kx) * c;
                    if (iy < 0 || iy >= static_cast<long>(h) || ix < 0 || ix >= static_cast<long>(w)) {
                        std::memset(cell, 0, c * sizeof(double));
                    } else {
                        std::memcpy(cell, in + (static_cast<size_t>(iy) * w + static_cast<size_t>(ix)) * c,
                                    c * sizeof(double));
                    }
                }
            }
        }
    }
}

void col2im_accum(const double* cols, size_t h, size_t w, size_t c, size_t k, size_t s, size_t p, size_t ho, size_t wo,
                  double* out) {
    size_t row = 0;
    for (size_t oy = 0; oy < ho; ++oy) {
        for (size_t ox = 0; ox < wo; ++ox, ++row) {
            const double* src = cols + row * (k * k * c);
            for (size_t ky = 0; ky < k; ++ky) {
                const long iy = static_cast<long>(oy * s + ky) - static_cast<long>(p);
                if (iy < 0 || iy >= static_cast<long>(h)) continue;
                for (size_t kx = 0; kx < k; ++kx) {
                    const long ix = static_cast<long>(ox * s + kx) - static_cast<long>(p);
                    if (ix < 0 || ix >= static_cast<long>(w)) continue;
                    const double* cell = src + (ky * k + kx) * c;
                    double* dst = out + (static_cast<size_t>(iy) * w + static_cast<size_t>(ix)) * c;
                    for (size_t ch = 0; ch < c; ++ch) dst[ch] += cell[ch];
                }
            }
        }
    }
}

// dY -> (dX, dW, db) for one conv layer.
void conv2d_backward(const Layer& L, const Tensor& in, const Tensor& d_out, Tensor& d_in, LayerGrads* grads) {
    const size_t n = in.dim(0);
    const size_t h = L.in_shape[0], w = L.in_shape[1], cin = L.in_shape[2];
    const size_t ho = L.out_shape[0], wo = L.out_shape[1], cout = L.out_shape[2];
    const size_t patch = L.kernel * L.kernel * cin;
    const size_t rows_per_sample = ho * wo;
    std::vector<double> cols(kConvChunk * rows_per_sample * patch);
    std::vector<double> dcols(kConvChunk * rows_per_sample * patch);
    for (size_t base = 0; base < n; base += kConvChunk) {
        const size_t m = std::min(kConvChunk, n - base);
        const size_t rows = m * rows_per_sample;
        if (grads) {
            for (size_t j = 0; j < m; ++j) {
                im2col_fill(in.data() + (base + j) * h * w * cin, h, w, cin, L.kernel, L.stride, L.pad, ho, wo,
                            cols.data() + j * rows_per_sample * patch);
            }
            // dW += cols^T * dY_rows
            matmul_at_b_accum(cols.data(), d_out.data() + base * rows_per_sample * cout, grads->weight.data(), rows,
                              patch, cout);
        }
        // dcols = dY_rows * W^T
        matmul_a_bt(d_out.data() + base * rows_per_sample * cout, L.weight.data(), dcols.data(), rows, cout, patch);
        for (size_t j = 0; j < m; ++j) {
            col2im_accum(dcols.data() + j * rows_per_sample * patch, h, w, cin, L.kernel, L.stride, L.pad, ho, wo,
                         d_in.data() + (base + j) * h * w * cin);
        }
    }
    if (grads) {
        double* db = grads->bias.data();
        const double* dy = d_out.data();
        for (size_t r = 0; r < n * rows_per_sample; ++r) {
            for (size_t ch = 0; ch < cout; ++ch) db[ch] += dy[r * cout + ch];
        }
    }
}

}  // namespace

Tensor backward_walk(const Model& model, const ForwardTrace& trace, std::vector<GradSeed> seeds, size_t stop_after,
                     std::vector<LayerGrads>* param_grads) {
    if (seeds.empty()) throw std::invalid_argument("backward_walk: no gradient seeds");
    size_t top = 0;
    for (const auto& s : seeds) top = std::max(top, s.layer_index);
    if (param_grads) {
        param_grads->resize(model.layers.size());
        for (size_t i = 0; i < model.layers.size(); ++i) {
            if (layer_kind_has_params(model.layers[i].kind)) {
                (*param_grads)[i].weight = Tensor(model.layers[i].weight.shape());
                (*param_grads)[i].bias = Tensor(model.layers[i].bias.shape());
            }
        }
    }

    Tensor g(trace.outputs.at(top).shape());
    for (size_t i = top + 1; i-- > stop_after;) {
        for (const auto& s : seeds) {
            if (s.layer_index == i) {
                if (!s.grad.same_shape(g)) throw std::invalid_argument("backward_walk: seed shape mismatch");
                for (size_t j = 0; j < g.size(); ++j) g[j] += s.grad[j];
            }
        }
        const Layer& L = model.layers[i];
        const Tensor& layer_in = (i == 0) ? trace.input : trace.outputs[i - 1];
        const Tensor& layer_out = trace.outputs[i];
        std::vector<size_t> in_shape;
        in_shape.push_back(trace.batch);
        in_shape.insert(in_shape.end(), L.in_shape.begin(), L.in_shape.end());
        Tensor d_in(in_shape);
        switch (L.kind) {
            case LayerKind::Dense: {
                const size_t n = trace.batch, din = L.in_shape[0], dout = L.out_shape[0];
                if (param_grads) {
                    matmul_at_b_accum(layer_in.data(), g.data(), (*param_grads)[i].weight.data(), n, din, dout);
                    double* db = (*param_grads)[i].bias.data();
                    for (size_t r = 0; r < n; ++r) {
                        for (size_t j = 0; j < dout; ++j) db[j] += g[r * dout + j];
                    }
                }
                matmul_a_bt(g.data(), L.weight.data(), d_in.data(), n, dout, din);
                break;
            }
            case LayerKind::Conv2d:
                conv2d_backward(L, layer_in, g, d_in, param_grads ? &(*param_grads)[i] : nullptr);
                break;
            case LayerKind::AvgPool2d: {
                const size_t h = L.in_shape[0], w = L.in_shape[1], c = L.in_shape[2];
                const size_t ho = L.out_shape[0], wo = L.out_shape[1];
                const double inv_area = 1.0 / static_cast<double>(L.kernel * L.kernel);
                for (size_t s = 0; s < trace.batch; ++s) {
                    const double* gy = g.data() + s * ho * wo * c;
                    double* gx = d_in.data() + s * h * w * c;
                    for (size_t oy = 0; oy < ho; ++oy) {
                        for (size_t ox = 0; ox < wo; ++ox) {
                            for (size_t ch = 0; ch < c; ++ch) {
                                const double share = gy[(oy * wo + ox) * c + ch] * inv_area;
                                for (size_t ky = 0; ky < L.kernel; ++ky) {
                                    for (size_t kx = 0; kx < L.kernel; ++kx) {
                                        gx[((oy * L.stride + ky) * w + (ox * L.stride + kx)) * c + ch] += share;
                                    }
                                }
                            }
                        }
                    }
                }
                break;
            }
            case LayerKind::MaxPool2d: {
                const auto& argmax = trace.pool_argmax.at(i);
                if (argmax.empty()) throw std::logic_error("max-pool backward needs a kept trace");
                const size_t per_out = shape_product(L.out_shape);
                const size_t per_in = shape_product(L.in_shape);
                for (size_t s = 0; s < trace.batch; ++s) {
                    for (size_t j = 0; j < per_out; ++j) {
                        d_in[s * per_in + argmax[s * per_out + j]] += g[s * per_out + j];
                    }
                }
                break;
            }
            case LayerKind::Flatten:
                d_in.vec() = g.vec();
                break;
            case LayerKind::Tanh:
                for (size_t j = 0; j < g.size(); ++j) {
                    const double y = layer_out[j];
                    d_in[j] = g[j] * (1.0 - y * y);
                }
                break;
            case LayerKind::Relu:
                for (size_t j = 0; j < g.size(); ++j) d_in[j] = layer_out[j] > 0.0 ? g[j] : 0.0;
                break;
            case LayerKind::Softmax: {
                const size_t n = trace.batch, k = L.out_shape[0];
                for (size_t r = 0; r < n; ++r) {
                    const double* y = layer_out.data() + r * k;
                    const double* gy = g.data() + r * k;
                    double dot = 0.0;
                    for (size_t j = 0; j < k; ++j) dot += gy[j] * y[j];
                    for (size_t j = 0; j < k; ++j) d_in[r * k + j] = y[j] * (gy[j] - dot);
                }
                break;
            }
        }
        g = std::move(d_in);
    }
    g.require_finite("backward pass");
    return g;
}

std::vector<LayerGrads> grad_params(const Model& model, const Tensor& batch, const Objective& objective) {
    const ForwardTrace trace = forward(model, batch, true);
    return grad_params(model, trace, objective);
}

std::vector<LayerGrads> grad_params(const Model& model, const ForwardTrace& trace, const Objective& objective) {
    if (model.frozen) return {};
    std::vector<LayerGrads> grads;
    GradSeed seed{model.layers.size() - 1, objective.grad(trace.final_output())};
    backward_walk(model, trace, {std::move(seed)}, 0, &grads);
    for (size_t i = 0; i < grads.size(); ++i) {
        grads[i].weight.require_finite("parameter gradient (weight, layer " + std::to_string(i) + ")");
        grads[i].bias.require_finite("parameter gradient (bias, layer " + std::to_string(i) + ")");
    }
    return grads;
}

Tensor grad_input(const Model& model, const Tensor& batch, const Objective& objective) {
    const ForwardTrace trace = forward(model, batch, true);
    GradSeed seed{model.layers.size() - 1, objective.grad(trace.final_output())};
    return backward_walk(model, trace, {std::move(seed)}, 0, nullptr);
}

}  // namespace guide
