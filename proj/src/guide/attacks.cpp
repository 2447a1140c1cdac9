#include "guide/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "guide/autodiff.hpp"
#include "guide/rng.hpp"
#include "guide/serialize.hpp"
#include "guide/threadpool.hpp"

namespace guide {

AttackKind parse_attack(const std::string& name) {
    if (name == "fgsm") return AttackKind::Fgsm;
    if (name == "l2pgd") return AttackKind::L2Pgd;
    if (name == "salt_pepper") return AttackKind::SaltPepper;
    throw std::invalid_argument("unknown attack kind: " + name);
}

const char* attack_name(AttackKind kind) {
    switch (kind) {
        case AttackKind::Fgsm: return "fgsm";
        case AttackKind::L2Pgd: return "l2pgd";
        case AttackKind::SaltPepper: return "salt_pepper";
    }
    return "?";
}

namespace {

Tensor as_batch(const Tensor& image) {
    std::vector<size_t> shape{1};
    shape.insert(shape.end(), image.shape().begin(), image.shape().end());
    return image.reshaped(shape);
}

Tensor clip01(Tensor t) {
    for (auto& v : t.vec()) v = std::clamp(v, 0.0, 1.0);
    return t;
}

}  // namespace

Tensor AttackTarget::input_gradient(const Tensor& image, int label) const {
    const Tensor batch = as_batch(image);
    if (!meta) {
        const CrossEntropy objective({label});
        return grad_input(*base, batch, objective).reshaped(image.shape());
    }
    // Composite: cross-entropy on the Dirichlet predictive mean, pulled back
    // through the meta branches into the frozen feature extractor.
    const ForwardTrace trace = forward(*base, batch, true);
    const DirichletOutput out = meta_forward(*meta, trace, 0);
    const auto d_logits = ce_grad_logits(out, label);
    const auto feature_grads = meta_feature_grads(*meta, trace, 0, d_logits);
    std::vector<GradSeed> seeds;
    for (const auto& [layer_index, grad] : feature_grads) {
        std::vector<size_t> shape{1};
        const auto& out_shape = base->layers[layer_index].out_shape;
        shape.insert(shape.end(), out_shape.begin(), out_shape.end());
        seeds.push_back({layer_index, Tensor(shape, grad)});
    }
    return backward_walk(*base, trace, std::move(seeds), 0, nullptr).reshaped(image.shape());
}

double AttackTarget::true_class_confidence(const Tensor& image, int label) const {
    const Tensor batch = as_batch(image);
    const ForwardTrace trace = forward(*base, batch, !meta ? false : true);
    if (!meta) return trace.final_output()[static_cast<size_t>(label)];
    return meta_forward(*meta, trace, 0).predictive_mean[static_cast<size_t>(label)];
}

Tensor fgsm(const AttackTarget& target, const Tensor& image, int label, double epsilon) {
    if (epsilon < 0.0) throw std::invalid_argument("fgsm: epsilon must be >= 0");
    if (epsilon == 0.0) return image;
    const Tensor grad = target.input_gradient(image, label);
    Tensor adv = image;
    for (size_t i = 0; i < adv.size(); ++i) {
        const double sign = grad[i] > 0.0 ? 1.0 : (grad[i] < 0.0 ? -1.0 : 0.0);
        adv[i] += epsilon * sign;
    }
    return clip01(std::move(adv));
}

Tensor l2pgd(const AttackTarget& target, const Tensor& image, int label, double epsilon, size_t steps,
             double step_size, uint64_t seed) {
    if (epsilon < 0.0) throw std::invalid_argument("l2pgd: epsilon must be >= 0");
    if (steps < 1) throw std::invalid_argument("l2pgd: need at least one step");
    if (epsilon == 0.0) return image;
    if (step_size <= 0.0) step_size = 2.5 * epsilon / static_cast<double>(steps);
    const size_t d = image.size();

    // Uniform random start inside the epsilon ball.
    Rng rng = derive_stream(seed, 0x96d);
    Tensor adv = image;
    {
        std::vector<double> dir(d);
        double norm2 = 0.0;
        for (auto& v : dir) {
            v = rng.normal();
            norm2 += v * v;
        }
        const double norm = std::sqrt(std::max(norm2, 1e-300));
        const double radius = epsilon * std::pow(rng.u01(), 1.0 / static_cast<double>(d));
        for (size_t i = 0; i < d; ++i) adv[i] += dir[i] / norm * radius;
        adv = clip01(std::move(adv));
    }

    auto project = [&](Tensor& x) {
        double dist2 = 0.0;
        for (size_t i = 0; i < d; ++i) {
            const double delta = x[i] - image[i];
            dist2 += delta * delta;
        }
        const double dist = std::sqrt(dist2);
        if (dist > epsilon) {
            const double scale = epsilon / dist;
            for (size_t i = 0; i < d; ++i) x[i] = image[i] + (x[i] - image[i]) * scale;
        }
    };
    project(adv);

    for (size_t step = 0; step < steps; ++step) {
        const Tensor grad = target.input_gradient(adv, label);
        const double norm = l2_norm(grad.vec());
        if (norm <= 1e-30) break;
        const double scale = step_size / norm;
        for (size_t i = 0; i < d; ++i) adv[i] += grad[i] * scale;
        project(adv);
        adv = clip01(std::move(adv));  // box clip never grows the L2 distance
    }
    return adv;
}

Tensor salt_pepper(const Tensor& image, double fraction, uint64_t seed) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw std::invalid_argument("salt_pepper: fraction outside [0,1]");
    const size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
    const size_t n_pixels = h * w;
    const size_t n_hit = static_cast<size_t>(std::llround(fraction * static_cast<double>(n_pixels)));
    Tensor adv = image;
    if (n_hit == 0) return adv;
    Rng rng = derive_stream(seed, 0x5a1f);
    // Partial Fisher-Yates: first n_hit entries form the hit set.
    std::vector<size_t> pixels(n_pixels);
    for (size_t i = 0; i < n_pixels; ++i) pixels[i] = i;
    for (size_t i = 0; i < n_hit; ++i) {
        const size_t j = i + static_cast<size_t>(rng.below(n_pixels - i));
        std::swap(pixels[i], pixels[j]);
    }
    for (size_t i = 0; i < n_hit; ++i) {
        const double value = rng.u01() < 0.5 ? 0.0 : 1.0;
        for (size_t ch = 0; ch < c; ++ch) adv[pixels[i] * c + ch] = value;
    }
    return adv;
}

Dataset attack_dataset(const AttackTarget& target, const Dataset& ds, const AttackConfig& config, size_t threads) {
    Dataset adv;
    adv.name = ds.name + ":adv:" + attack_name(config.kind);
    adv.labels = ds.labels;
    adv.images = Tensor(ds.images.shape());
    const size_t per = ds.images.size() / ds.count();
    const auto sample_shape = ds.sample_shape();
    parallel_for(ds.count(), threads, [&](size_t i) {
        const Tensor image = ds.sample_batch(i).reshaped(sample_shape);
        Tensor out;
        switch (config.kind) {
            case AttackKind::Fgsm:
                out = fgsm(target, image, ds.labels[i], config.epsilon);
                break;
            case AttackKind::L2Pgd:
                out = l2pgd(target, image, ds.labels[i], config.epsilon, config.steps, config.step_size,
                            config.seed ^ (0x9e3779b9ULL + i));
                break;
            case AttackKind::SaltPepper:
                out = salt_pepper(image, config.epsilon, config.seed ^ (0x9e3779b9ULL + i));
                break;
        }
        std::copy(out.vec().begin(), out.vec().end(), adv.images.data() + i * per);
    });
    return adv;
}

void save_attack_cache(const Dataset& adv, const std::string& path, uint64_t model_checksum,
                       const AttackConfig& config) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for write: " + path);
    write_tag(out, "GUIDEAV1");
    write_u64(out, model_checksum);
    write_u8(out, static_cast<uint8_t>(config.kind));
    write_f64(out, config.epsilon);
    write_u32(out, static_cast<uint32_t>(config.steps));
    write_f64(out, config.step_size);
    write_u64(out, config.seed);
    write_tensor(out, adv.images);
    Tensor labels({adv.labels.size()});
    for (size_t i = 0; i < adv.labels.size(); ++i) labels[i] = adv.labels[i];
    write_tensor(out, labels);
    write_string(out, adv.name);
}

Dataset load_attack_cache(const std::string& path, uint64_t model_checksum) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path);
    expect_tag(in, "GUIDEAV1");
    const uint64_t checksum = read_u64(in);
    if (checksum != model_checksum) throw DataError("attack cache was generated against a different model");
    read_u8(in);
    read_f64(in);
    read_u32(in);
    read_f64(in);
    read_u64(in);
    Dataset adv;
    adv.images = read_tensor(in);
    const Tensor labels = read_tensor(in);
    for (size_t i = 0; i < labels.size(); ++i) adv.labels.push_back(static_cast<int>(labels[i]));
    adv.name = read_string(in);
    return adv;
}

}  // namespace guide
