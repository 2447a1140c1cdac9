#include "guide/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "guide/autodiff.hpp"
#include "guide/hash.hpp"
#include "guide/text.hpp"
#include "guide/threadpool.hpp"

namespace guide {

LayerMass layer_mass(const Model& model, const Dataset& sample, double epsilon, size_t threads) {
    const size_t n = sample.count();
    if (n == 0) throw DataError("layer_mass: empty sample");
    const auto points = eligible_layers(model);
    std::vector<std::vector<double>> per_sample(n);
    parallel_for(n, threads, [&](size_t i) {
        const auto bundle = lrp(model, sample.sample_batch(i), sample.labels[i], epsilon);
        std::vector<double> l1(points.size());
        for (size_t t = 0; t < points.size(); ++t) l1[t] = l1_norm(bundle.layer_relevance[t].vec());
        per_sample[i] = std::move(l1);
    });
    return layer_mass_from_bundles(points, per_sample);
}

LayerMass layer_mass_from_bundles(const std::vector<FeaturePoint>& points,
                                  const std::vector<std::vector<double>>& per_sample_l1) {
    LayerMass out;
    out.points = points;
    out.sample_count = per_sample_l1.size();
    out.mass.resize(points.size());
    std::vector<double> column(per_sample_l1.size());
    for (size_t t = 0; t < points.size(); ++t) {
        for (size_t i = 0; i < per_sample_l1.size(); ++i) column[i] = per_sample_l1[i].at(t);
        out.mass[t] = mean(column) / static_cast<double>(points[t].dim);
    }
    return out;
}

SalientSet select_layers(const LayerMass& mass, double eta) {
    if (!(eta > 0.0 && eta <= 1.0)) throw std::invalid_argument("select_layers: eta must lie in (0,1]");
    const double total = pairwise_sum(mass.mass);
    if (total <= 0.0) throw std::invalid_argument("select_layers: all layer masses are zero");

    std::vector<size_t> order(mass.mass.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    // Descending mass; equal masses favour the shallower layer.
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (mass.mass[a] != mass.mass[b]) return mass.mass[a] > mass.mass[b];
        return a < b;
    });

    SalientSet set;
    set.eta = eta;
    double acc = 0.0;
    for (size_t i : order) {
        if (mass.mass[i] <= 0.0) break;
        set.point_indices.push_back(i);
        set.names.push_back(mass.points[i].name);
        acc += mass.mass[i];
        if (acc >= eta * total) break;
    }
    set.achieved_mass_fraction = acc / total;
    if (set.achieved_mass_fraction + 1e-15 < eta) {
        // Only possible when zero-mass tail cannot close the gap.
        throw std::invalid_argument("select_layers: coverage unreachable with nonzero masses");
    }
    return set;
}

WeightMap weight_map(const RelevanceBundle& bundle) {
    const Tensor& r0 = bundle.input_relevance;
    if (r0.rank() != 3) throw std::invalid_argument("weight_map: input relevance must be (H,W,C)");
    const size_t h = r0.dim(0), w = r0.dim(1), c = r0.dim(2);
    WeightMap wm;
    wm.map = Tensor({h, w});
    double peak = 0.0;
    for (size_t y = 0; y < h; ++y) {
        for (size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (size_t ch = 0; ch < c; ++ch) acc += r0[(y * w + x) * c + ch];
            const double v = std::abs(acc);
            wm.map[y * w + x] = v;
            peak = std::max(peak, v);
        }
    }
    if (peak == 0.0) {
        // Defined all-zero; the curriculum falls back to uniform corruption.
        wm.mean_budget = 0.0;
        return wm;
    }
    const double inv = 1.0 / peak;
    for (auto& v : wm.map.vec()) v *= inv;
    wm.mean_budget = mean(wm.map.vec());
    return wm;
}

namespace {

// One sample's contribution to the Fisher proxy: squared Frobenius norm of
// the logit Jacobian at every feature point.
std::vector<double> jacobian_fro2(const Model& model, const std::vector<FeaturePoint>& points, const Tensor& x) {
    std::vector<size_t> shape{1};
    shape.insert(shape.end(), x.shape().begin(), x.shape().end());
    const ForwardTrace trace = forward(model, x.shape() == model.input_shape ? x.reshaped(shape) : x, true);
    const size_t logits_idx = model.logits_layer();
    const size_t k = model.num_classes;

    std::vector<double> fro2(points.size(), 0.0);
    for (size_t cls = 0; cls < k; ++cls) {
        Tensor seed({size_t{1}, k});
        seed[cls] = 1.0;
        // Walk once per class, harvesting the gradient at every tap depth.
        // Taps are visited deepest-first.
        std::vector<size_t> tap_order(points.size());
        for (size_t t = 0; t < points.size(); ++t) tap_order[t] = t;
        std::sort(tap_order.begin(), tap_order.end(),
                  [&](size_t a, size_t b) { return points[a].layer_index > points[b].layer_index; });
        Tensor g = seed;
        size_t from = logits_idx;
        for (size_t t : tap_order) {
            const size_t tap = points[t].layer_index;
            g = backward_walk(model, trace, {{from, g}}, tap + 1, nullptr);
            for (double v : g.vec()) fro2[t] += v * v;
            from = tap;
        }
    }
    return fro2;
}

}  // namespace

double fisher_eta(const Model& model, const SalientSet& salient, const LayerMass& mass, const Dataset& sample,
                  size_t threads) {
    if (salient.point_indices.empty()) throw std::invalid_argument("fisher_eta: empty salient set");
    const size_t n = sample.count();
    if (n == 0) throw DataError("fisher_eta: empty sample");
    const auto& points = mass.points;

    // Activation first/second moments per feature point (for tr(Cov)).
    std::vector<std::vector<double>> sum1(points.size()), sum2(points.size());
    for (size_t t = 0; t < points.size(); ++t) {
        sum1[t].assign(points[t].dim, 0.0);
        sum2[t].assign(points[t].dim, 0.0);
    }
    std::vector<std::vector<double>> fro2(n);
    parallel_for(n, threads, [&](size_t i) { fro2[i] = jacobian_fro2(model, points, sample.sample_batch(i)); });
    for (size_t i = 0; i < n; ++i) {
        const ForwardTrace trace = forward(model, sample.sample_batch(i), true);
        for (size_t t = 0; t < points.size(); ++t) {
            const auto row = trace.feature_row(points[t].layer_index, 0);
            for (size_t d = 0; d < row.size(); ++d) {
                sum1[t][d] += row[d];
                sum2[t][d] += row[d] * row[d];
            }
        }
    }

    std::vector<double> fisher(points.size(), 0.0);
    for (size_t t = 0; t < points.size(); ++t) {
        std::vector<double> column(n);
        for (size_t i = 0; i < n; ++i) column[i] = fro2[i].at(t);
        const double mean_fro2 = mean(column);
        double trace_cov = 0.0;
        for (size_t d = 0; d < points[t].dim; ++d) {
            const double mu = sum1[t][d] / static_cast<double>(n);
            trace_cov += std::max(0.0, sum2[t][d] / static_cast<double>(n) - mu * mu);
        }
        fisher[t] = mean_fro2 * trace_cov / static_cast<double>(points[t].dim);
    }

    const double total = pairwise_sum(fisher);
    if (!(total > 0.0)) throw NumericError("fisher_eta: total Fisher mass is zero");
    double selected = 0.0;
    for (size_t idx : salient.point_indices) selected += fisher[idx];
    return selected / total;
}

void save_saliency_report(const SaliencyReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for write: " + path);
    out << "format = guide-saliency-1\n";
    out << "model_checksum = " << hash_hex(report.model_checksum) << "\n";
    out << "epsilon = " << format_double(report.epsilon) << "\n";
    out << "eta = " << format_double(report.salient.eta) << "\n";
    out << "achieved_mass_fraction = " << format_double(report.salient.achieved_mass_fraction) << "\n";
    out << "achieved_eta = " << format_double(report.achieved_eta) << "\n";
    out << "sample_count = " << report.mass.sample_count << "\n";
    out << "layer_count = " << report.mass.points.size() << "\n";
    for (size_t i = 0; i < report.mass.points.size(); ++i) {
        out << "mass." << report.mass.points[i].name << " = " << format_double(report.mass.mass[i]) << "\n";
    }
    out << "selected =";
    for (size_t i = 0; i < report.salient.names.size(); ++i) out << (i ? "," : " ") << report.salient.names[i];
    out << "\n";
    if (!out) throw DataError("write failed: " + path);
}

SaliencyReport load_saliency_report(const std::string& path, const Model& model) {
    std::map<std::string, std::string> kv;
    try {
        kv = load_key_values(path);
    } catch (const std::exception& e) {
        throw DataError(std::string("saliency report: ") + e.what());
    }
    if (kv["format"] != "guide-saliency-1") throw DataError("not a saliency report: " + path);

    SaliencyReport report;
    report.model_checksum = parse_hash_hex(kv.at("model_checksum"));
    if (report.model_checksum != model.param_checksum()) {
        throw DataError("saliency report was calibrated against a different model");
    }
    report.epsilon = std::stod(kv.at("epsilon"));
    report.achieved_eta = std::stod(kv.at("achieved_eta"));
    report.mass.points = model.feature_points();
    report.mass.sample_count = std::stoul(kv.at("sample_count"));
    report.mass.mass.resize(report.mass.points.size());
    for (size_t i = 0; i < report.mass.points.size(); ++i) {
        report.mass.mass[i] = std::stod(kv.at("mass." + report.mass.points[i].name));
    }
    report.salient.eta = std::stod(kv.at("eta"));
    report.salient.achieved_mass_fraction = std::stod(kv.at("achieved_mass_fraction"));
    std::stringstream names(kv.at("selected"));
    std::string name;
    while (std::getline(names, name, ',')) {
        bool found = false;
        for (size_t i = 0; i < report.mass.points.size(); ++i) {
            if (report.mass.points[i].name == name) {
                report.salient.point_indices.push_back(i);
                report.salient.names.push_back(name);
                found = true;
                break;
            }
        }
        if (!found) throw DataError("saliency report names unknown layer: " + name);
    }
    return report;
}

}  // namespace guide
