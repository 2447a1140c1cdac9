#include "guide/evidential.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "guide/hash.hpp"
#include "guide/rng.hpp"
#include "guide/serialize.hpp"
#include "guide/special.hpp"

namespace guide {

namespace {

size_t branch_width(const MetaModel::Branch& b) { return b.hidden ? b.w1.dim(1) : 0; }

// Branch forward for one flattened feature row; returns the K projection and
// (for hidden branches) the post-ReLU hidden vector needed by backward.
std::vector<double> branch_forward(const MetaModel::Branch& b, const std::vector<double>& feature,
                                   std::vector<double>* hidden_out) {
    const size_t k_out = b.hidden ? b.w2.dim(1) : b.w1.dim(1);
    if (!b.hidden) {
        std::vector<double> out(k_out, 0.0);
        matmul(feature.data(), b.w1.data(), out.data(), 1, b.in_dim, k_out);
        for (size_t j = 0; j < k_out; ++j) out[j] += b.b1[j];
        return out;
    }
    const size_t width = b.w1.dim(1);
    std::vector<double> h(width, 0.0);
    matmul(feature.data(), b.w1.data(), h.data(), 1, b.in_dim, width);
    for (size_t j = 0; j < width; ++j) h[j] = std::max(0.0, h[j] + b.b1[j]);
    if (hidden_out) *hidden_out = h;
    std::vector<double> out(k_out, 0.0);
    matmul(h.data(), b.w2.data(), out.data(), 1, width, k_out);
    for (size_t j = 0; j < k_out; ++j) out[j] += b.b2[j];
    return out;
}

}  // namespace

size_t MetaModel::param_count() const {
    size_t n = head_w.size() + head_b.size();
    for (const auto& b : branches) n += b.w1.size() + b.b1.size() + b.w2.size() + b.b2.size();
    return n;
}

MetaModel make_meta_model(const Model& base, const SalientSet& salient, const LayerMass& mass, uint64_t seed,
                          bool branch_hidden) {
    if (!base.frozen) throw std::logic_error("make_meta_model: base must be frozen");
    if (salient.point_indices.empty()) throw std::invalid_argument("make_meta_model: empty salient set");
    MetaModel meta;
    meta.num_classes = base.num_classes;
    meta.base_checksum = base.param_checksum();
    Rng rng = derive_stream(seed, 0x3e7a);
    const size_t k = base.num_classes;
    for (size_t idx : salient.point_indices) {
        const FeaturePoint& pt = mass.points.at(idx);
        MetaModel::Branch b;
        b.point_index = idx;
        b.layer_index = pt.layer_index;
        b.name = pt.name;
        b.in_dim = pt.dim;
        b.hidden = branch_hidden;
        const size_t out1 = branch_hidden ? 4 * k : k;
        b.w1 = Tensor({b.in_dim, out1});
        b.b1 = Tensor({out1});
        const double s1 = std::sqrt(2.0 / static_cast<double>(b.in_dim + out1));
        for (auto& v : b.w1.vec()) v = rng.normal() * s1;
        if (branch_hidden) {
            b.w2 = Tensor({out1, k});
            b.b2 = Tensor({k});
            const double s2 = std::sqrt(2.0 / static_cast<double>(out1 + k));
            for (auto& v : b.w2.vec()) v = rng.normal() * s2;
        }
        meta.branches.push_back(std::move(b));
    }
    const size_t psi_dim = meta.branches.size() * k;
    meta.head_w = Tensor({psi_dim, k});
    meta.head_b = Tensor({k});
    const double sh = std::sqrt(2.0 / static_cast<double>(psi_dim + k));
    for (auto& v : meta.head_w.vec()) v = rng.normal() * sh;
    return meta;
}

DirichletOutput meta_forward(const MetaModel& meta, const ForwardTrace& trace, size_t sample) {
    const size_t k = meta.num_classes;
    std::vector<double> psi;
    psi.reserve(meta.branches.size() * k);
    for (const auto& b : meta.branches) {
        if (b.layer_index >= trace.outputs.size() || trace.outputs[b.layer_index].size() == 0) {
            throw std::invalid_argument("meta_forward: trace is missing salient layer " + b.name);
        }
        const auto feature = trace.feature_row(b.layer_index, sample);
        if (feature.size() != b.in_dim) throw std::invalid_argument("meta_forward: feature width mismatch at " + b.name);
        const auto proj = branch_forward(b, feature, nullptr);
        psi.insert(psi.end(), proj.begin(), proj.end());
    }
    DirichletOutput out;
    out.head_logits.assign(k, 0.0);
    matmul(psi.data(), meta.head_w.data(), out.head_logits.data(), 1, psi.size(), k);
    out.alpha.resize(k);
    out.predictive_mean.resize(k);
    double total = 0.0;
    for (size_t j = 0; j < k; ++j) {
        double g = out.head_logits[j] + meta.head_b[j];
        g = std::clamp(g, -meta.logit_clamp, meta.logit_clamp);
        out.head_logits[j] = g;
        out.alpha[j] = std::exp(g) + 1.0;
        total += out.alpha[j];
    }
    out.total_evidence = total;
    for (size_t j = 0; j < k; ++j) out.predictive_mean[j] = out.alpha[j] / total;
    out.uncertainty = static_cast<double>(k) / total;
    return out;
}

double dirichlet_kl(const std::vector<double>& alpha, const std::vector<double>& beta) {
    if (alpha.size() != beta.size() || alpha.empty()) throw std::invalid_argument("dirichlet_kl: size mismatch");
    double s_alpha = 0.0, s_beta = 0.0;
    for (size_t i = 0; i < alpha.size(); ++i) {
        if (!(alpha[i] > 0.0) || !(beta[i] > 0.0)) throw std::invalid_argument("dirichlet_kl: nonpositive parameter");
        s_alpha += alpha[i];
        s_beta += beta[i];
    }
    double kl = std::lgamma(s_alpha) - std::lgamma(s_beta);
    const double psi_s = digamma(s_alpha);
    for (size_t i = 0; i < alpha.size(); ++i) {
        kl += std::lgamma(beta[i]) - std::lgamma(alpha[i]);
        kl += (alpha[i] - beta[i]) * (digamma(alpha[i]) - psi_s);
    }
    return kl;
}

LossBreakdown guide_loss(const DirichletOutput& out, const std::vector<double>& soft_target, double kl_weight,
                         const std::vector<double>& beta) {
    const size_t k = out.alpha.size();
    if (soft_target.size() != k) throw std::invalid_argument("guide_loss: target size mismatch");
    LossBreakdown loss;
    loss.kl_weight = kl_weight;
    const double psi_s = digamma(out.total_evidence);
    double ell = 0.0, agreement = 0.0;
    for (size_t j = 0; j < k; ++j) {
        ell -= soft_target[j] * (digamma(out.alpha[j]) - psi_s);
        agreement += soft_target[j] * out.predictive_mean[j];
    }
    loss.expected_log_likelihood = ell;
    loss.kl = dirichlet_kl(out.alpha, beta);
    loss.sre = out.total_evidence / static_cast<double>(k) * (1.0 - agreement);
    loss.total = loss.expected_log_likelihood + kl_weight * loss.kl + loss.sre;
    if (!std::isfinite(loss.total)) throw NumericError("guide_loss: non-finite loss");
    return loss;
}

std::vector<double> guide_loss_grad_logits(const DirichletOutput& out, const std::vector<double>& soft_target,
                                           double kl_weight, const std::vector<double>& beta) {
    const size_t k = out.alpha.size();
    const double s = out.total_evidence;
    const double trig_s = trigamma(s);
    double excess = 0.0;  // sum_j (alpha_j - beta_j)
    for (size_t j = 0; j < k; ++j) excess += out.alpha[j] - beta[j];

    std::vector<double> grad(k, 0.0);
    for (size_t j = 0; j < k; ++j) {
        // ELL: -y_j psi'(alpha_j) + psi'(S)  (targets sum to one)
        double d_alpha = -soft_target[j] * trigamma(out.alpha[j]) + trig_s;
        // KL
        d_alpha += kl_weight * ((out.alpha[j] - beta[j]) * trigamma(out.alpha[j]) - trig_s * excess);
        // SRE = S/K - (1/K) sum_j y_j alpha_j
        d_alpha += (1.0 - soft_target[j]) / static_cast<double>(k);
        // alpha = exp(g) + 1 inside the clamp; saturated logits get no pull.
        const double saturated = std::abs(out.head_logits[j]) >= 30.0 - 1e-12 ? 0.0 : 1.0;
        grad[j] = d_alpha * (out.alpha[j] - 1.0) * saturated;
    }
    return grad;
}

std::vector<Tensor*> meta_params(MetaModel& meta) {
    std::vector<Tensor*> params;
    for (auto& b : meta.branches) {
        params.push_back(&b.w1);
        params.push_back(&b.b1);
        if (b.hidden) {
            params.push_back(&b.w2);
            params.push_back(&b.b2);
        }
    }
    params.push_back(&meta.head_w);
    params.push_back(&meta.head_b);
    return params;
}

namespace {

// Flat Adam over the meta parameter tensors.
struct MetaAdam {
    std::vector<Tensor*> params;
    std::vector<Tensor> m, v;
    double lr, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    size_t t = 0;

    MetaAdam(MetaModel& meta, double lr_in) : lr(lr_in) {
        params = meta_params(meta);
        for (auto* p : params) {
            m.emplace_back(p->shape());
            v.emplace_back(p->shape());
        }
    }

    void step(const std::vector<Tensor>& grads) {
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (size_t i = 0; i < params.size(); ++i) {
            Tensor& p = *params[i];
            for (size_t j = 0; j < p.size(); ++j) {
                const double g = grads[i][j];
                m[i][j] = beta1 * m[i][j] + (1.0 - beta1) * g;
                v[i][j] = beta2 * v[i][j] + (1.0 - beta2) * g * g;
                p[j] -= lr * (m[i][j] / bc1) / (std::sqrt(v[i][j] / bc2) + eps);
            }
        }
    }
};

}  // namespace

std::vector<Tensor> meta_zero_grads(const MetaModel& meta) {
    std::vector<Tensor> out;
    for (const auto& b : meta.branches) {
        out.emplace_back(b.w1.shape());
        out.emplace_back(b.b1.shape());
        if (b.hidden) {
            out.emplace_back(b.w2.shape());
            out.emplace_back(b.b2.shape());
        }
    }
    out.emplace_back(meta.head_w.shape());
    out.emplace_back(meta.head_b.shape());
    return out;
}

// Accumulates meta parameter gradients for one sample given d(loss)/d(head
// logits); scale folds the batch mean in.
void meta_accumulate_grads(const MetaModel& meta, const ForwardTrace& trace, size_t sample,
                           const std::vector<double>& d_logits, double scale, std::vector<Tensor>& grads) {
    const size_t k = meta.num_classes;
    const size_t psi_dim = meta.branches.size() * k;
    std::vector<double> psi(psi_dim);
    std::vector<std::vector<double>> features(meta.branches.size());
    std::vector<std::vector<double>> hiddens(meta.branches.size());
    for (size_t bi = 0; bi < meta.branches.size(); ++bi) {
        const auto& b = meta.branches[bi];
        features[bi] = trace.feature_row(b.layer_index, sample);
        const auto proj = branch_forward(b, features[bi], &hiddens[bi]);
        std::copy(proj.begin(), proj.end(), psi.begin() + bi * k);
    }

    size_t gi = 0;
    // d psi = head_w * d_logits
    std::vector<double> d_psi(psi_dim, 0.0);
    for (size_t r = 0; r < psi_dim; ++r) {
        double acc = 0.0;
        for (size_t c = 0; c < k; ++c) acc += meta.head_w[r * k + c] * d_logits[c];
        d_psi[r] = acc;
    }
    for (size_t bi = 0; bi < meta.branches.size(); ++bi) {
        const auto& b = meta.branches[bi];
        const double* d_out = d_psi.data() + bi * k;
        Tensor& g_w1 = grads[gi];
        Tensor& g_b1 = grads[gi + 1];
        if (!b.hidden) {
            for (size_t i = 0; i < b.in_dim; ++i) {
                const double f = features[bi][i] * scale;
                if (f == 0.0) continue;
                for (size_t j = 0; j < k; ++j) g_w1[i * k + j] += f * d_out[j];
            }
            for (size_t j = 0; j < k; ++j) g_b1[j] += scale * d_out[j];
            gi += 2;
        } else {
            const size_t width = b.w1.dim(1);
            Tensor& g_w2 = grads[gi + 2];
            Tensor& g_b2 = grads[gi + 3];
            std::vector<double> d_h(width, 0.0);
            for (size_t r = 0; r < width; ++r) {
                double acc = 0.0;
                for (size_t c = 0; c < k; ++c) acc += b.w2[r * k + c] * d_out[c];
                d_h[r] = hiddens[bi][r] > 0.0 ? acc : 0.0;
            }
            for (size_t r = 0; r < width; ++r) {
                const double h = hiddens[bi][r] * scale;
                for (size_t c = 0; c < k; ++c) g_w2[r * k + c] += h * d_out[c];
            }
            for (size_t c = 0; c < k; ++c) g_b2[c] += scale * d_out[c];
            for (size_t i = 0; i < b.in_dim; ++i) {
                const double f = features[bi][i] * scale;
                if (f == 0.0) continue;
                for (size_t j = 0; j < width; ++j) g_w1[i * width + j] += f * d_h[j];
            }
            for (size_t j = 0; j < width; ++j) g_b1[j] += scale * d_h[j];
            gi += 4;
        }
    }
    // Head
    Tensor& g_head_w = grads[gi];
    Tensor& g_head_b = grads[gi + 1];
    for (size_t r = 0; r < psi_dim; ++r) {
        const double p = psi[r] * scale;
        for (size_t c = 0; c < k; ++c) g_head_w[r * k + c] += p * d_logits[c];
    }
    for (size_t c = 0; c < k; ++c) g_head_b[c] += scale * d_logits[c];
}

MetaTrainHistory train_meta(MetaModel& meta, const Model& base, const CurriculumCache& curriculum,
                            const MetaTrainConfig& config) {
    if (!base.frozen) throw std::logic_error("train_meta: base must be frozen");
    if (curriculum.input_count == 0) throw DataError("train_meta: empty curriculum");
    if (base.param_checksum() != curriculum.model_checksum) {
        throw DataError("train_meta: curriculum was built for a different base model");
    }
    if (meta.base_checksum != curriculum.model_checksum) {
        throw DataError("train_meta: meta model is bound to a different base model");
    }
    const uint64_t checksum_before = base.param_checksum();

    const size_t n = curriculum.input_count;
    const size_t k = meta.num_classes;
    const std::vector<double> beta(k, config.beta_prior);
    MetaAdam adam(meta, config.lr);
    MetaTrainHistory history;

    for (size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const StageSampler sampler = stage_sampler(epoch, std::max<size_t>(config.epochs, 2), curriculum.sched);
        Rng order_rng = derive_stream(config.seed, 0x0e50, epoch);
        const auto order = order_rng.permutation(n);

        double sum_ell = 0.0, sum_kl = 0.0, sum_sre = 0.0, sum_total = 0.0;
        for (size_t start = 0; start < n; start += config.batch_size) {
            const size_t m = std::min(config.batch_size, n - start);
            // Per-example stage draws keyed by (seed, epoch, input) so batch
            // membership cannot change them.
            std::vector<const CurriculumView*> batch_views(m);
            std::vector<size_t> shape{m};
            const auto& probe = curriculum.views[0][0].image;
            shape.insert(shape.end(), probe.shape().begin(), probe.shape().end());
            Tensor batch(shape);
            const size_t per = probe.size();
            for (size_t j = 0; j < m; ++j) {
                const size_t input = order[start + j];
                Rng stage_rng = derive_stream(config.seed, 0x57a6e ^ epoch, input);
                const size_t t = sampler.draw(stage_rng.u01());
                batch_views[j] = &curriculum.views[input][t];
                std::copy(batch_views[j]->image.vec().begin(), batch_views[j]->image.vec().end(),
                          batch.data() + j * per);
            }
            const ForwardTrace trace = forward(base, batch, true);
            auto grads = meta_zero_grads(meta);
            const double scale = 1.0 / static_cast<double>(m);
            for (size_t j = 0; j < m; ++j) {
                const DirichletOutput out = meta_forward(meta, trace, j);
                const LossBreakdown loss = guide_loss(out, batch_views[j]->soft_target, config.kl_weight, beta);
                sum_ell += loss.expected_log_likelihood;
                sum_kl += loss.kl;
                sum_sre += loss.sre;
                sum_total += loss.total;
                const auto d_logits = guide_loss_grad_logits(out, batch_views[j]->soft_target, config.kl_weight, beta);
                meta_accumulate_grads(meta, trace, j, d_logits, scale, grads);
            }
            adam.step(grads);
        }
        history.ell.push_back(sum_ell / static_cast<double>(n));
        history.kl.push_back(sum_kl / static_cast<double>(n));
        history.sre.push_back(sum_sre / static_cast<double>(n));
        history.total.push_back(sum_total / static_cast<double>(n));
    }

    if (base.param_checksum() != checksum_before) {
        throw NumericError("train_meta: base model parameters changed during training");
    }
    return history;
}

std::vector<DirichletOutput> meta_outputs(const MetaModel& meta, const Model& base, const Tensor& images,
                                          size_t batch_size) {
    const size_t n = images.dim(0);
    std::vector<DirichletOutput> outs;
    outs.reserve(n);
    const size_t per = images.size() / n;
    for (size_t start = 0; start < n; start += batch_size) {
        const size_t m = std::min(batch_size, n - start);
        std::vector<size_t> shape = images.shape();
        shape[0] = m;
        Tensor batch(shape);
        std::copy(images.data() + start * per, images.data() + (start + m) * per, batch.data());
        const ForwardTrace trace = forward(base, batch, true);
        for (size_t j = 0; j < m; ++j) outs.push_back(meta_forward(meta, trace, j));
    }
    return outs;
}

std::vector<double> ce_grad_logits(const DirichletOutput& out, int label) {
    const size_t k = out.alpha.size();
    const size_t y = static_cast<size_t>(label);
    const double p_y = std::max(out.predictive_mean[y], 1e-12);
    std::vector<double> grad(k, 0.0);
    for (size_t j = 0; j < k; ++j) {
        // d(-log p_y)/d alpha_j = (p_y - [j==y]) / (p_y * S)
        const double d_alpha = (out.predictive_mean[y] - (j == y ? 1.0 : 0.0)) / (p_y * out.total_evidence);
        const double saturated = std::abs(out.head_logits[j]) >= 30.0 - 1e-12 ? 0.0 : 1.0;
        grad[j] = d_alpha * (out.alpha[j] - 1.0) * saturated;
    }
    return grad;
}

std::vector<std::pair<size_t, std::vector<double>>> meta_feature_grads(const MetaModel& meta,
                                                                       const ForwardTrace& trace, size_t sample,
                                                                       const std::vector<double>& d_logits) {
    const size_t k = meta.num_classes;
    const size_t psi_dim = meta.branches.size() * k;
    std::vector<double> d_psi(psi_dim, 0.0);
    for (size_t r = 0; r < psi_dim; ++r) {
        double acc = 0.0;
        for (size_t c = 0; c < k; ++c) acc += meta.head_w[r * k + c] * d_logits[c];
        d_psi[r] = acc;
    }
    std::vector<std::pair<size_t, std::vector<double>>> out;
    for (size_t bi = 0; bi < meta.branches.size(); ++bi) {
        const auto& b = meta.branches[bi];
        const double* d_out = d_psi.data() + bi * k;
        std::vector<double> d_feature(b.in_dim, 0.0);
        if (!b.hidden) {
            for (size_t i = 0; i < b.in_dim; ++i) {
                double acc = 0.0;
                for (size_t j = 0; j < k; ++j) acc += b.w1[i * k + j] * d_out[j];
                d_feature[i] = acc;
            }
        } else {
            const size_t width = b.w1.dim(1);
            const auto feature = trace.feature_row(b.layer_index, sample);
            std::vector<double> h;
            branch_forward(b, feature, &h);
            std::vector<double> d_h(width, 0.0);
            for (size_t r = 0; r < width; ++r) {
                double acc = 0.0;
                for (size_t c = 0; c < k; ++c) acc += b.w2[r * k + c] * d_out[c];
                d_h[r] = h[r] > 0.0 ? acc : 0.0;
            }
            for (size_t i = 0; i < b.in_dim; ++i) {
                double acc = 0.0;
                for (size_t j = 0; j < width; ++j) acc += b.w1[i * width + j] * d_h[j];
                d_feature[i] = acc;
            }
        }
        out.push_back({b.layer_index, std::move(d_feature)});
    }
    return out;
}

void save_meta_model(const MetaModel& meta, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for write: " + path);
    write_tag(out, "GUIDEMM1");
    write_u32(out, static_cast<uint32_t>(meta.num_classes));
    write_u64(out, meta.base_checksum);
    write_f64(out, meta.logit_clamp);
    write_u32(out, static_cast<uint32_t>(meta.branches.size()));
    for (const auto& b : meta.branches) {
        write_u32(out, static_cast<uint32_t>(b.point_index));
        write_u32(out, static_cast<uint32_t>(b.layer_index));
        write_string(out, b.name);
        write_u32(out, static_cast<uint32_t>(b.in_dim));
        write_u8(out, b.hidden ? 1 : 0);
        write_tensor(out, b.w1);
        write_tensor(out, b.b1);
        if (b.hidden) {
            write_tensor(out, b.w2);
            write_tensor(out, b.b2);
        }
    }
    write_tensor(out, meta.head_w);
    write_tensor(out, meta.head_b);
    if (!out) throw DataError("write failed: " + path);
}

MetaModel load_meta_model(const std::string& path, const Model& base) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path);
    expect_tag(in, "GUIDEMM1");
    MetaModel meta;
    meta.num_classes = read_u32(in);
    meta.base_checksum = read_u64(in);
    meta.logit_clamp = read_f64(in);
    if (meta.base_checksum != base.param_checksum()) {
        throw DataError("meta model was trained against a different base model");
    }
    const uint32_t n_branches = read_u32(in);
    if (n_branches == 0 || n_branches > 256) throw DataError("meta model: unreasonable branch count");
    const auto points = base.feature_points();
    for (uint32_t i = 0; i < n_branches; ++i) {
        MetaModel::Branch b;
        b.point_index = read_u32(in);
        b.layer_index = read_u32(in);
        b.name = read_string(in);
        b.in_dim = read_u32(in);
        b.hidden = read_u8(in) != 0;
        b.w1 = read_tensor(in);
        b.b1 = read_tensor(in);
        if (b.hidden) {
            b.w2 = read_tensor(in);
            b.b2 = read_tensor(in);
        }
        if (b.point_index >= points.size() || points[b.point_index].layer_index != b.layer_index ||
            points[b.point_index].dim != b.in_dim) {
            throw DataError("meta model branch does not match the base model's feature layout");
        }
        meta.branches.push_back(std::move(b));
    }
    meta.head_w = read_tensor(in);
    meta.head_b = read_tensor(in);
    return meta;
}

}  // namespace guide
