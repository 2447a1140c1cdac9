#include "guide/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "guide/hash.hpp"
#include "guide/rng.hpp"

namespace guide {

const char* layer_kind_name(LayerKind kind) {
    switch (kind) {
        case LayerKind::Dense: return "dense";
        case LayerKind::Conv2d: return "conv2d";
        case LayerKind::AvgPool2d: return "avgpool2d";
        case LayerKind::MaxPool2d: return "maxpool2d";
        case LayerKind::Flatten: return "flatten";
        case LayerKind::Tanh: return "tanh";
        case LayerKind::Relu: return "relu";
        case LayerKind::Softmax: return "softmax";
    }
    return "?";
}

bool layer_kind_has_params(LayerKind kind) {
    return kind == LayerKind::Dense || kind == LayerKind::Conv2d;
}

bool layer_kind_is_activation(LayerKind kind) {
    return kind == LayerKind::Tanh || kind == LayerKind::Relu || kind == LayerKind::Softmax;
}

namespace {

std::vector<size_t> conv_out_shape(const std::vector<size_t>& in, size_t cout, size_t k, size_t s, size_t p) {
    if (in.size() != 3) throw std::invalid_argument("conv2d expects (H,W,C) input");
    const size_t h = in[0], w = in[1];
    if (h + 2 * p < k || w + 2 * p < k) throw std::invalid_argument("conv2d kernel exceeds padded input");
    return {(h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1, cout};
}

std::vector<size_t> pool_out_shape(const std::vector<size_t>& in, size_t k, size_t s) {
    if (in.size() != 3) throw std::invalid_argument("pool expects (H,W,C) input");
    if (in[0] < k || in[1] < k) throw std::invalid_argument("pool kernel exceeds input");
    return {(in[0] - k) / s + 1, (in[1] - k) / s + 1, in[2]};
}

}  // namespace

void Model::finalize() {
    if (layers.empty()) throw std::invalid_argument("model has no layers");
    size_t n_conv = 0, n_pool = 0, n_fc = 0, n_flat = 0, n_act = 0;
    std::vector<size_t> cur = input_shape;
    for (size_t i = 0; i < layers.size(); ++i) {
        Layer& L = layers[i];
        L.in_shape = cur;
        switch (L.kind) {
            case LayerKind::Dense: {
                if (cur.size() != 1) throw std::invalid_argument("dense layer needs flat input, got " + shape_str(cur));
                if (L.weight.rank() != 2 || L.weight.dim(0) != cur[0]) {
                    throw std::invalid_argument("dense weight shape mismatch at layer " + std::to_string(i));
                }
                const size_t out = L.weight.dim(1);
                if (L.bias.size() != out) throw std::invalid_argument("dense bias shape mismatch");
                cur = {out};
                L.name = "fc" + std::to_string(++n_fc);
                break;
            }
            case LayerKind::Conv2d: {
                if (L.weight.rank() != 4 || L.weight.dim(0) != L.kernel || L.weight.dim(1) != L.kernel ||
                    L.weight.dim(2) != cur.at(2)) {
                    throw std::invalid_argument("conv weight shape mismatch at layer " + std::to_string(i));
                }
                const size_t cout = L.weight.dim(3);
                if (L.bias.size() != cout) throw std::invalid_argument("conv bias shape mismatch");
                cur = conv_out_shape(cur, cout, L.kernel, L.stride, L.pad);
                L.name = "conv" + std::to_string(++n_conv);
                break;
            }
            case LayerKind::AvgPool2d:
            case LayerKind::MaxPool2d:
                cur = pool_out_shape(cur, L.kernel, L.stride);
                L.name = "pool" + std::to_string(++n_pool);
                break;
            case LayerKind::Flatten:
                cur = {shape_product(cur)};
                L.name = "flatten" + std::to_string(++n_flat);
                break;
            case LayerKind::Tanh:
            case LayerKind::Relu:
                L.name = "act" + std::to_string(++n_act);
                break;
            case LayerKind::Softmax:
                if (cur.size() != 1) throw std::invalid_argument("softmax needs flat input");
                if (i + 1 != layers.size()) {
                    throw std::invalid_argument("softmax allowed only as the terminal activation");
                }
                L.name = "softmax";
                break;
        }
        L.out_shape = cur;
    }
    if (num_classes == 0) num_classes = cur.at(0);
    if (cur.size() != 1 || cur[0] != num_classes) {
        throw std::invalid_argument("model output " + shape_str(cur) + " does not match num_classes " +
                                    std::to_string(num_classes));
    }
}

size_t Model::param_count() const {
    size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
}

size_t Model::logits_layer() const {
    size_t idx = layers.size() - 1;
    if (layers[idx].kind == LayerKind::Softmax) {
        if (idx == 0) throw std::invalid_argument("model is only a softmax");
        --idx;
    }
    return idx;
}

bool Model::has_terminal_softmax() const {
    return !layers.empty() && layers.back().kind == LayerKind::Softmax;
}

std::vector<FeaturePoint> Model::feature_points() const {
    std::vector<FeaturePoint> pts;
    const size_t logits_idx = logits_layer();
    for (size_t i = 0; i < layers.size(); ++i) {
        const Layer& L = layers[i];
        bool tap = false;
        size_t tap_index = i;
        switch (L.kind) {
            case LayerKind::Dense:
            case LayerKind::Conv2d: {
                // Post-activation block output; the classifier head is not a
                // feature.
                tap = i != logits_idx;
                if (i + 1 < layers.size() && layer_kind_is_activation(layers[i + 1].kind) &&
                    layers[i + 1].kind != LayerKind::Softmax) {
                    tap_index = i + 1;
                }
                break;
            }
            case LayerKind::AvgPool2d:
            case LayerKind::MaxPool2d:
                tap = true;
                break;
            case LayerKind::Flatten:
                // A flatten over an already-tapped feature is the same values
                // reshaped; only a flatten ahead of any feature earns a tap.
                tap = pts.empty();
                break;
            default:
                break;
        }
        if (tap) {
            pts.push_back({tap_index, L.name, shape_product(L.out_shape)});
        }
    }
    if (pts.empty() && layer_kind_has_params(layers[logits_idx].kind)) {
        // Degenerate single-head model: the logits are the only readable
        // representation.
        pts.push_back({logits_idx, layers[logits_idx].name, shape_product(layers[logits_idx].out_shape)});
    }
    return pts;
}

uint64_t Model::param_checksum() const {
    Fnv1a h;
    for (const auto& l : layers) {
        const uint8_t kind = static_cast<uint8_t>(l.kind);
        h.update(&kind, 1);
        h.update(l.weight.data(), l.weight.size() * sizeof(double));
        h.update(l.bias.data(), l.bias.size() * sizeof(double));
    }
    return h.digest();
}

namespace {

// Chunked im2col keeps the GEMMs reasonably sized without materialising the
// whole batch worth of patches.
constexpr size_t kConvChunk = 32;

void im2col_fill(const double* in, size_t h, size_t w, size_t c, size_t k, size_t s, size_t p, size_t ho, size_t wo,
                 double* cols) {
    // cols has (ho*wo, k*k*c) layout for one sample.
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

void conv2d_forward(const Layer& L, const Tensor& in, Tensor& out) {
    const size_t n = in.dim(0);
    const size_t h = L.in_shape[0], w = L.in_shape[1], cin = L.in_shape[2];
    const size_t ho = L.out_shape[0], wo = L.out_shape[1], cout = L.out_shape[2];
    const size_t patch = L.kernel * L.kernel * cin;
    const size_t rows_per_sample = ho * wo;
    std::vector<double> cols(kConvChunk * rows_per_sample * patch);
    for (size_t base = 0; base < n; base += kConvChunk) {
        const size_t m = std::min(kConvChunk, n - base);
        for (size_t j = 0; j < m; ++j) {
            im2col_fill(in.data() + (base + j) * h * w * cin, h, w, cin, L.kernel, L.stride, L.pad, ho, wo,
                        cols.data() + j * rows_per_sample * patch);
        }
        matmul(cols.data(), L.weight.data(), out.data() + base * rows_per_sample * cout, m * rows_per_sample, patch,
               cout);
    }
    const double* b = L.bias.data();
    double* o = out.data();
    for (size_t r = 0; r < n * rows_per_sample; ++r) {
        for (size_t ch = 0; ch < cout; ++ch) o[r * cout + ch] += b[ch];
    }
}

void pool_forward(const Layer& L, const Tensor& in, Tensor& out, std::vector<uint32_t>* argmax) {
    const size_t n = in.dim(0);
    const size_t h = L.in_shape[0], w = L.in_shape[1], c = L.in_shape[2];
    const size_t ho = L.out_shape[0], wo = L.out_shape[1];
    const size_t k = L.kernel, s = L.stride;
    const bool is_max = L.kind == LayerKind::MaxPool2d;
    if (is_max && argmax) argmax->assign(n * ho * wo * c, 0);
    const double inv_area = 1.0 / static_cast<double>(k * k);
    for (size_t i = 0; i < n; ++i) {
        const double* src = in.data() + i * h * w * c;
        double* dst = out.data() + i * ho * wo * c;
        for (size_t oy = 0; oy < ho; ++oy) {
            for (size_t ox = 0; ox < wo; ++ox) {
                for (size_t ch = 0; ch < c; ++ch) {
                    if (is_max) {
                        double best = -1e300;
                        uint32_t best_idx = 0;
                        for (size_t ky = 0; ky < k; ++ky) {
                            for (size_t kx = 0; kx < k; ++kx) {
                                const size_t idx = ((oy * s + ky) * w + (ox * s + kx)) * c + ch;
                                if (src[idx] > best) {  // strict '>' keeps first index on ties
                                    best = src[idx];
                                    best_idx = static_cast<uint32_t>(idx);
                                }
                            }
                        }
                        dst[(oy * wo + ox) * c + ch] = best;
                        if (argmax) (*argmax)[i * ho * wo * c + (oy * wo + ox) * c + ch] = best_idx;
                    } else {
                        double acc = 0.0;
                        for (size_t ky = 0; ky < k; ++ky) {
                            for (size_t kx = 0; kx < k; ++kx) {
                                acc += src[((oy * s + ky) * w + (ox * s + kx)) * c + ch];
                            }
                        }
                        dst[(oy * wo + ox) * c + ch] = acc * inv_area;
                    }
                }
            }
        }
    }
}

void softmax_rows(Tensor& t) {
    const size_t n = t.dim(0), k = t.dim(1);
    for (size_t i = 0; i < n; ++i) {
        double* row = t.data() + i * k;
        double hi = row[0];
        for (size_t j = 1; j < k; ++j) hi = std::max(hi, row[j]);
        double sum = 0.0;
        for (size_t j = 0; j < k; ++j) {
            row[j] = std::exp(row[j] - hi);
            sum += row[j];
        }
        const double inv = 1.0 / sum;
        for (size_t j = 0; j < k; ++j) row[j] *= inv;
    }
}

}  // namespace

ForwardTrace forward(const Model& model, const Tensor& batch, bool keep_trace) {
    if (batch.rank() < 2) throw std::invalid_argument("forward: batch tensor needs a leading batch dimension");
    std::vector<size_t> sample_shape(batch.shape().begin() + 1, batch.shape().end());
    if (sample_shape != model.input_shape) {
        throw std::invalid_argument("forward: input shape " + shape_str(sample_shape) + " does not match model " +
                                    shape_str(model.input_shape));
    }
    const size_t n = batch.dim(0);

    ForwardTrace trace;
    trace.batch = n;
    trace.input = batch;
    trace.outputs.resize(model.layers.size());
    trace.pool_argmax.resize(model.layers.size());

    const Tensor* cur = &batch;
    for (size_t i = 0; i < model.layers.size(); ++i) {
        const Layer& L = model.layers[i];
        std::vector<size_t> out_shape;
        out_shape.push_back(n);
        out_shape.insert(out_shape.end(), L.out_shape.begin(), L.out_shape.end());
        Tensor out(out_shape);
        switch (L.kind) {
            case LayerKind::Dense: {
                matmul(cur->data(), L.weight.data(), out.data(), n, L.in_shape[0], L.out_shape[0]);
                const double* b = L.bias.data();
                for (size_t r = 0; r < n; ++r) {
                    for (size_t j = 0; j < L.out_shape[0]; ++j) out.data()[r * L.out_shape[0] + j] += b[j];
                }
                break;
            }
            case LayerKind::Conv2d:
                conv2d_forward(L, *cur, out);
                break;
            case LayerKind::AvgPool2d:
            case LayerKind::MaxPool2d:
                pool_forward(L, *cur, out, keep_trace ? &trace.pool_argmax[i] : nullptr);
                break;
            case LayerKind::Flatten:
                out.vec() = cur->vec();
                break;
            case LayerKind::Tanh: {
                const double* s = cur->data();
                for (size_t j = 0; j < out.size(); ++j) out[j] = std::tanh(s[j]);
                break;
            }
            case LayerKind::Relu: {
                const double* s = cur->data();
                for (size_t j = 0; j < out.size(); ++j) out[j] = s[j] > 0.0 ? s[j] : 0.0;
                break;
            }
            case LayerKind::Softmax:
                out.vec() = cur->vec();
                softmax_rows(out);
                break;
        }
        trace.outputs[i] = std::move(out);
        cur = &trace.outputs[i];
    }
    trace.outputs.back().require_finite("forward pass of " + std::string(layer_kind_name(model.layers.back().kind)));
    if (!keep_trace) {
        // Keep only logits and final output; drop intermediates.
        const size_t logits_idx = model.logits_layer();
        for (size_t i = 0; i + 1 < trace.outputs.size(); ++i) {
            if (i != logits_idx) trace.outputs[i] = Tensor();
        }
    }
    return trace;
}

std::vector<double> ForwardTrace::feature_row(size_t layer_index, size_t sample) const {
    const Tensor& t = outputs.at(layer_index);
    const size_t width = t.size() / t.dim(0);
    const double* p = t.data() + sample * width;
    return std::vector<double>(p, p + width);
}

Model make_mlp(size_t input_dim, const std::vector<size_t>& hidden, size_t num_classes, LayerKind activation,
               bool terminal_softmax) {
    Model m;
    m.input_shape = {input_dim};
    m.num_classes = num_classes;
    size_t in = input_dim;
    auto push_dense = [&m](size_t in_dim, size_t out_dim) {
        Layer l;
        l.kind = LayerKind::Dense;
        l.weight = Tensor({in_dim, out_dim});
        l.bias = Tensor({out_dim});
        m.layers.push_back(std::move(l));
    };
    for (size_t hdim : hidden) {
        push_dense(in, hdim);
        Layer act;
        act.kind = activation;
        m.layers.push_back(std::move(act));
        in = hdim;
    }
    push_dense(in, num_classes);
    if (terminal_softmax) {
        Layer sm;
        sm.kind = LayerKind::Softmax;
        m.layers.push_back(std::move(sm));
    }
    m.finalize();
    return m;
}

Model make_lenet5(size_t height, size_t width, size_t channels, size_t num_classes) {
    Model m;
    m.input_shape = {height, width, channels};
    m.num_classes = num_classes;
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
    auto act = [&m](LayerKind k) {
        Layer l;
        l.kind = k;
        m.layers.push_back(std::move(l));
    };
    auto avgpool = [&m]() {
        Layer l;
        l.kind = LayerKind::AvgPool2d;
        l.kernel = 2;
        l.stride = 2;
        m.layers.push_back(std::move(l));
    };
    conv(channels, 6, 5, 2);  // 'same' for 5x5
    act(LayerKind::Tanh);
    avgpool();
    conv(6, 16, 5, 0);
    act(LayerKind::Tanh);
    avgpool();
    conv(16, 120, 5, 0);
    act(LayerKind::Tanh);
    {
        Layer l;
        l.kind = LayerKind::Flatten;
        m.layers.push_back(std::move(l));
    }
    {
        Layer l;
        l.kind = LayerKind::Dense;
        const size_t flat = ((height / 2 - 4) / 2 - 4) * ((width / 2 - 4) / 2 - 4) * 120;
        l.weight = Tensor({flat, size_t{84}});
        l.bias = Tensor({size_t{84}});
        m.layers.push_back(std::move(l));
    }
    act(LayerKind::Tanh);
    {
        Layer l;
        l.kind = LayerKind::Dense;
        l.weight = Tensor({size_t{84}, num_classes});
        l.bias = Tensor({num_classes});
        m.layers.push_back(std::move(l));
    }
    act(LayerKind::Softmax);
    m.finalize();
    return m;
}

Model make_architecture(const std::string& id, const std::vector<size_t>& input_shape, size_t num_classes) {
    if (id == "lenet5") {
        if (input_shape.size() != 3) throw std::invalid_argument("lenet5 expects (H,W,C) input");
        return make_lenet5(input_shape[0], input_shape[1], input_shape[2], num_classes);
    }
    if (id == "mlp") {
        Model flat = make_mlp(shape_product(input_shape), {64, 32}, num_classes);
        if (input_shape.size() == 1) return flat;
        Model m;
        m.input_shape = input_shape;
        m.num_classes = num_classes;
        m.layers.push_back(Layer{.kind = LayerKind::Flatten});
        for (auto& l : flat.layers) m.layers.push_back(std::move(l));
        m.finalize();
        return m;
    }
    throw std::invalid_argument("unknown architecture id: " + id);
}

void init_params(Model& model, uint64_t seed) {
    Rng rng = derive_stream(seed, 0x1217);
    for (auto& l : model.layers) {
        if (!layer_kind_has_params(l.kind)) continue;
        size_t fan_in = 0;
        if (l.kind == LayerKind::Dense) fan_in = l.weight.dim(0);
        if (l.kind == LayerKind::Conv2d) fan_in = l.kernel * l.kernel * l.weight.dim(2);
        const double scale = std::sqrt(6.0 / static_cast<double>(fan_in + l.weight.size() / fan_in));
        for (auto& v : l.weight.vec()) v = (2.0 * rng.u01() - 1.0) * scale;
        for (auto& v : l.bias.vec()) v = 0.0;
    }
}

}  // namespace guide
