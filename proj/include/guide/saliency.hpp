#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "guide/dataset.hpp"
#include "guide/layers.hpp"
#include "guide/lrp.hpp"

namespace guide {

// Dataset-average per-neuron relevance magnitude of every eligible layer.
struct LayerMass {
    std::vector<FeaturePoint> points;  // model order
    std::vector<double> mass;          // parallel to points, >= 0
    size_t sample_count = 0;
};

// The minimal high-mass layer prefix covering a fraction eta of total mass.
struct SalientSet {
    std::vector<size_t> point_indices;  // into LayerMass::points, descending mass
    std::vector<std::string> names;
    double eta = 0.0;
    double achieved_mass_fraction = 0.0;
};

// Per-input corruption priority map derived from input relevance.
struct WeightMap {
    Tensor map;           // (H,W), values in [0,1]; max == 1 unless all-zero
    double mean_budget = 0.0;  // spatial mean
};

// Accumulates LayerMass over a dataset sample; one relevance pass per input.
LayerMass layer_mass(const Model& model, const Dataset& sample, double epsilon, size_t threads = 1);

// Incremental form used when relevance bundles are needed for other outputs
// (weight maps) at the same time.
LayerMass layer_mass_from_bundles(const std::vector<FeaturePoint>& points,
                                  const std::vector<std::vector<double>>& per_sample_l1);

SalientSet select_layers(const LayerMass& mass, double eta);

WeightMap weight_map(const RelevanceBundle& bundle);

// Empirical Fisher-trace fraction captured by the salient set:
//   F_l = (1/N) sum_i ||J_l(x_i)||_F^2 * tr(Cov_l) / dim(l)
// with J_l the logit Jacobian w.r.t. layer-l activations and Cov_l the
// activation covariance over the sample. Returns the salient/total ratio.
double fisher_eta(const Model& model, const SalientSet& salient, const LayerMass& mass, const Dataset& sample,
                  size_t threads = 1);

// Human-readable calibration report (key = value lines).
struct SaliencyReport {
    LayerMass mass;
    SalientSet salient;
    double achieved_eta = 0.0;
    double epsilon = 0.0;
    uint64_t model_checksum = 0;
};

void save_saliency_report(const SaliencyReport& report, const std::string& path);
SaliencyReport load_saliency_report(const std::string& path, const Model& model);

}  // namespace guide
