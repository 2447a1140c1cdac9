#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "guide/dataset.hpp"
#include "guide/layers.hpp"
#include "guide/saliency.hpp"

namespace guide {

// Exponential noise ladder s_t = 1 - exp(-gamma * t), t = 0..T.
struct NoiseSchedule {
    double gamma = 0.0;
    size_t stages = 0;            // T
    std::vector<double> levels;   // T+1 entries, s_0 = 0, strictly increasing
};

NoiseSchedule schedule(double gamma, size_t stages);

// One corrupted view of one training input.
struct CurriculumView {
    Tensor image;              // corrupted input, sample shape
    size_t stage = 0;          // t
    double noise_level = 0.0;  // s_t
    double confidence = 0.0;   // base model's true-class confidence on this view
    std::vector<double> soft_target;  // length K, sums to 1
};

// Per-pixel corruption probabilities matching the budget s_t in expectation,
// saliency-first below the map's mean budget and blended toward uniform
// above it. A zero weight map falls back to uniform corruption.
Tensor pixel_probs(const WeightMap& wm, double noise_level);

// Applies the salt/pepper rule through a shared base mask; all channels of a
// chosen pixel move to the same extreme.
Tensor corrupt(const Tensor& image, const Tensor& probs, const Tensor& base_mask);

// Soft target: uniform/one-hot mix weighted by noise and squared confidence.
std::vector<double> soft_target(double noise_level, double confidence, int label, size_t num_classes);

// Epoch-dependent sampling distribution over the T+1 noise levels.
struct StageSampler {
    size_t epoch = 0;
    size_t total_epochs = 0;
    double difficulty = 0.0;          // rho_e
    std::vector<double> probabilities;  // over levels, sums to 1

    size_t draw(double u) const;  // inverse-CDF lookup for u in [0,1)
};

StageSampler stage_sampler(size_t epoch, size_t total_epochs, const NoiseSchedule& schedule);

// All T+1 views of one input under one shared base mask. The mask stream is
// derived from (seed, input index), so parallel builds are bit-identical to
// serial ones.
std::vector<CurriculumView> build_views(const Tensor& image, int label, const Model& base, const WeightMap& wm,
                                        const NoiseSchedule& schedule, uint64_t seed, size_t input_index);

// Disk cache: per-stage record files plus a manifest binding the seeds and
// hyperparameters; loaders verify checksums.
struct CurriculumCache {
    NoiseSchedule sched;
    size_t input_count = 0;
    size_t num_classes = 0;
    uint64_t seed = 0;
    uint64_t model_checksum = 0;
    std::vector<std::vector<CurriculumView>> views;  // [input][stage]
    std::vector<int> labels;
};

CurriculumCache build_curriculum(const Dataset& train, const Model& base, const std::vector<WeightMap>& maps,
                                 const NoiseSchedule& schedule, uint64_t seed, size_t threads = 1);

void save_curriculum(const CurriculumCache& cache, const std::string& dir, double eta);
CurriculumCache load_curriculum(const std::string& dir, const Model& base);

}  // namespace guide
