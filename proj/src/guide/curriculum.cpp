#include "guide/curriculum.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "guide/hash.hpp"
#include "guide/rng.hpp"
#include "guide/serialize.hpp"
#include "guide/text.hpp"
#include "guide/threadpool.hpp"

namespace guide {

NoiseSchedule schedule(double gamma, size_t stages) {
    if (!(gamma > 0.0)) throw std::invalid_argument("schedule: gamma must be positive");
    if (stages < 1) throw std::invalid_argument("schedule: need at least one stage");
    NoiseSchedule s;
    s.gamma = gamma;
    s.stages = stages;
    s.levels.resize(stages + 1);
    for (size_t t = 0; t <= stages; ++t) {
        s.levels[t] = 1.0 - std::exp(-gamma * static_cast<double>(t));
    }
    return s;
}

Tensor pixel_probs(const WeightMap& wm, double noise_level) {
    if (!(noise_level >= 0.0 && noise_level <= 1.0)) {
        throw std::invalid_argument("pixel_probs: noise level outside [0,1]");
    }
    const double budget = wm.mean_budget;
    Tensor probs(wm.map.shape());
    if (budget == 0.0) {
        // Zero relevance map: uniform corruption at the requested level.
        for (auto& v : probs.vec()) v = noise_level;
        return probs;
    }
    if (noise_level <= budget) {
        const double scale = noise_level / budget;
        for (size_t i = 0; i < probs.size(); ++i) probs[i] = scale * wm.map[i];
    } else {
        const double blend = (noise_level - budget) / (1.0 - budget);
        for (size_t i = 0; i < probs.size(); ++i) probs[i] = wm.map[i] + blend * (1.0 - wm.map[i]);
    }
    for (auto& v : probs.vec()) v = std::clamp(v, 0.0, 1.0);
    return probs;
}

Tensor corrupt(const Tensor& image, const Tensor& probs, const Tensor& base_mask) {
    if (image.rank() != 3) throw std::invalid_argument("corrupt: image must be (H,W,C)");
    const size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
    if (probs.rank() != 2 || probs.dim(0) != h || probs.dim(1) != w || !base_mask.same_shape(probs)) {
        throw std::invalid_argument("corrupt: probability/mask shape mismatch");
    }
    Tensor out = image;
    for (size_t y = 0; y < h; ++y) {
        for (size_t x = 0; x < w; ++x) {
            const double p = probs[y * w + x];
            const double m = base_mask[y * w + x];
            double value = -1.0;
            if (m < p * 0.5) {
                value = 0.0;  // pepper
            } else if (m > 1.0 - p * 0.5) {
                value = 1.0;  // salt
            }
            if (value >= 0.0) {
                for (size_t ch = 0; ch < c; ++ch) out[(y * w + x) * c + ch] = value;
            }
        }
    }
    return out;
}

std::vector<double> soft_target(double noise_level, double confidence, int label, size_t num_classes) {
    if (!(noise_level >= 0.0 && noise_level <= 1.0)) throw std::invalid_argument("soft_target: bad noise level");
    if (!(confidence >= 0.0 && confidence <= 1.0)) throw std::invalid_argument("soft_target: bad confidence");
    if (label < 0 || static_cast<size_t>(label) >= num_classes) throw std::invalid_argument("soft_target: bad label");
    const double tempered = noise_level * (1.0 - 0.5 * confidence * confidence);
    std::vector<double> target(num_classes, tempered / static_cast<double>(num_classes));
    target[static_cast<size_t>(label)] += 1.0 - tempered;
    return target;
}

size_t StageSampler::draw(double u) const {
    double acc = 0.0;
    for (size_t t = 0; t < probabilities.size(); ++t) {
        acc += probabilities[t];
        if (u < acc) return t;
    }
    return probabilities.size() - 1;
}

StageSampler stage_sampler(size_t epoch, size_t total_epochs, const NoiseSchedule& schedule) {
    if (total_epochs < 2) throw std::invalid_argument("stage_sampler: need at least two epochs");
    if (epoch >= total_epochs) throw std::invalid_argument("stage_sampler: epoch out of range");
    StageSampler s;
    s.epoch = epoch;
    s.total_epochs = total_epochs;
    const double frac = static_cast<double>(epoch) / static_cast<double>(total_epochs - 1);
    s.difficulty = frac * frac;
    s.probabilities.resize(schedule.levels.size());
    double total = 0.0;
    for (size_t t = 0; t < schedule.levels.size(); ++t) {
        const double level = schedule.levels[t];
        s.probabilities[t] = (1.0 - s.difficulty) * (1.0 - level) + s.difficulty * level;
        total += s.probabilities[t];
    }
    if (total <= 0.0) throw NumericError("stage_sampler: degenerate weights");
    for (auto& p : s.probabilities) p /= total;
    return s;
}

std::vector<CurriculumView> build_views(const Tensor& image, int label, const Model& base, const WeightMap& wm,
                                        const NoiseSchedule& sched, uint64_t seed, size_t input_index) {
    if (!base.frozen) throw std::logic_error("build_views: base model must be frozen");
    Rng rng = derive_stream(seed, 0xc0a5, input_index);
    const size_t h = image.dim(0), w = image.dim(1);
    Tensor mask({h, w});
    for (auto& v : mask.vec()) v = rng.u01();

    std::vector<CurriculumView> views;
    views.reserve(sched.levels.size());
    for (size_t t = 0; t < sched.levels.size(); ++t) {
        CurriculumView view;
        view.stage = t;
        view.noise_level = sched.levels[t];
        const Tensor probs = pixel_probs(wm, view.noise_level);
        view.image = corrupt(image, probs, mask);

        std::vector<size_t> batch_shape{1};
        batch_shape.insert(batch_shape.end(), view.image.shape().begin(), view.image.shape().end());
        const ForwardTrace trace = forward(base, view.image.reshaped(batch_shape), false);
        const Tensor& out = trace.final_output();
        view.confidence = std::clamp(out[static_cast<size_t>(label)], 0.0, 1.0);
        view.soft_target = soft_target(view.noise_level, view.confidence, label, base.num_classes);
        views.push_back(std::move(view));
    }
    return views;
}

CurriculumCache build_curriculum(const Dataset& train, const Model& base, const std::vector<WeightMap>& maps,
                                 const NoiseSchedule& sched, uint64_t seed, size_t threads) {
    if (maps.size() != train.count()) throw std::invalid_argument("build_curriculum: one weight map per input");
    CurriculumCache cache;
    cache.sched = sched;
    cache.input_count = train.count();
    cache.num_classes = base.num_classes;
    cache.seed = seed;
    cache.model_checksum = base.param_checksum();
    cache.labels = train.labels;
    cache.views.resize(train.count());
    parallel_for(train.count(), threads, [&](size_t i) {
        Tensor img = train.sample_batch(i).reshaped(train.sample_shape());
        cache.views[i] = build_views(img, train.labels[i], base, maps[i], sched, seed, i);
    });
    return cache;
}

namespace {

std::string stage_file(const std::string& dir, size_t t) {
    return dir + "/stage_" + std::to_string(t) + ".bin";
}

}  // namespace

void save_curriculum(const CurriculumCache& cache, const std::string& dir, double eta) {
    std::filesystem::create_directories(dir);
    for (size_t t = 0; t <= cache.sched.stages; ++t) {
        std::ofstream out(stage_file(dir, t), std::ios::binary);
        if (!out) throw DataError("cannot open for write: " + stage_file(dir, t));
        write_tag(out, "GUIDECV1");
        write_u32(out, static_cast<uint32_t>(cache.input_count));
        for (size_t i = 0; i < cache.input_count; ++i) {
            const CurriculumView& v = cache.views[i][t];
            write_u32(out, static_cast<uint32_t>(v.stage));
            write_f64(out, v.noise_level);
            write_f64(out, v.confidence);
            write_tensor(out, v.image);
            Tensor target({v.soft_target.size()}, v.soft_target);
            write_tensor(out, target);
        }
        if (!out) throw DataError("write failed: " + stage_file(dir, t));
    }
    std::ofstream man(dir + "/manifest.txt");
    if (!man) throw DataError("cannot open for write: " + dir + "/manifest.txt");
    man << "format = guide-curriculum-1\n";
    man << "seed = " << cache.seed << "\n";
    man << "gamma = " << format_double(cache.sched.gamma) << "\n";
    man << "stages = " << cache.sched.stages << "\n";
    man << "eta = " << format_double(eta) << "\n";
    man << "inputs = " << cache.input_count << "\n";
    man << "classes = " << cache.num_classes << "\n";
    man << "model_checksum = " << hash_hex(cache.model_checksum) << "\n";
    man << "labels =";
    for (size_t i = 0; i < cache.labels.size(); ++i) man << (i ? "," : " ") << cache.labels[i];
    man << "\n";
}

CurriculumCache load_curriculum(const std::string& dir, const Model& base) {
    std::map<std::string, std::string> kv;
    try {
        kv = load_key_values(dir + "/manifest.txt");
    } catch (const std::exception& e) {
        throw DataError(std::string("curriculum manifest: ") + e.what());
    }
    if (kv["format"] != "guide-curriculum-1") throw DataError("not a curriculum cache: " + dir);
    CurriculumCache cache;
    cache.seed = std::stoull(kv.at("seed"));
    cache.sched = schedule(std::stod(kv.at("gamma")), std::stoul(kv.at("stages")));
    cache.input_count = std::stoul(kv.at("inputs"));
    cache.num_classes = std::stoul(kv.at("classes"));
    cache.model_checksum = parse_hash_hex(kv.at("model_checksum"));
    if (cache.model_checksum != base.param_checksum()) {
        throw DataError("curriculum cache was built against a different base model");
    }
    {
        std::stringstream ss(kv.at("labels"));
        std::string item;
        while (std::getline(ss, item, ',')) cache.labels.push_back(std::stoi(trim(item)));
    }
    if (cache.labels.size() != cache.input_count) throw DataError("curriculum manifest label count mismatch");

    cache.views.assign(cache.input_count, std::vector<CurriculumView>(cache.sched.stages + 1));
    for (size_t t = 0; t <= cache.sched.stages; ++t) {
        std::ifstream in(stage_file(dir, t), std::ios::binary);
        if (!in) throw DataError("curriculum cache missing " + stage_file(dir, t));
        expect_tag(in, "GUIDECV1");
        const uint32_t n = read_u32(in);
        if (n != cache.input_count) throw DataError("curriculum cache record count mismatch");
        for (size_t i = 0; i < n; ++i) {
            CurriculumView v;
            v.stage = read_u32(in);
            v.noise_level = read_f64(in);
            v.confidence = read_f64(in);
            v.image = read_tensor(in);
            const Tensor target = read_tensor(in);
            v.soft_target.assign(target.data(), target.data() + target.size());
            if (v.stage != t) throw DataError("curriculum cache stage tag mismatch");
            cache.views[i][t] = std::move(v);
        }
    }
    return cache;
}

}  // namespace guide
