#include "guide/uq.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "guide/special.hpp"
#include "guide/text.hpp"
#include "guide/train.hpp"

namespace guide {

UncertaintyMetric parse_metric(const std::string& name) {
    if (name == "max_prob") return UncertaintyMetric::MaxProb;
    if (name == "diff_entropy") return UncertaintyMetric::DiffEntropy;
    if (name == "mutual_info") return UncertaintyMetric::MutualInfo;
    throw std::invalid_argument("unknown uncertainty metric: " + name);
}

const char* metric_name(UncertaintyMetric metric) {
    switch (metric) {
        case UncertaintyMetric::MaxProb: return "max_prob";
        case UncertaintyMetric::DiffEntropy: return "diff_entropy";
        case UncertaintyMetric::MutualInfo: return "mutual_info";
    }
    return "?";
}

std::vector<double> ScoreVector::oriented() const {
    std::vector<double> out = values;
    if (!higher_means_id) {
        for (auto& v : out) v = -v;
    }
    return out;
}

double dirichlet_diff_entropy(const std::vector<double>& alpha) {
    double s = 0.0;
    for (double a : alpha) {
        if (!(a > 0.0)) throw std::invalid_argument("diff entropy: nonpositive alpha");
        s += a;
    }
    const double psi_s = digamma(s);
    double h = -std::lgamma(s);
    for (double a : alpha) {
        h += std::lgamma(a);
        h -= (a - 1.0) * (digamma(a) - psi_s);
    }
    return h;
}

double shannon_entropy(const std::vector<double>& probs) {
    double h = 0.0;
    for (double p : probs) {
        if (p > 0.0) h -= p * std::log(p);
    }
    return h;
}

double dirichlet_mutual_info(const std::vector<double>& alpha) {
    double s = 0.0;
    for (double a : alpha) s += a;
    std::vector<double> mean(alpha.size());
    for (size_t i = 0; i < alpha.size(); ++i) mean[i] = alpha[i] / s;
    // Expected conditional entropy of p ~ Dir(alpha):
    //   E[H(p)] = -sum_k (alpha_k/S) (psi(alpha_k+1) - psi(S+1))
    double expected_h = 0.0;
    const double psi_s1 = digamma(s + 1.0);
    for (size_t i = 0; i < alpha.size(); ++i) {
        expected_h -= mean[i] * (digamma(alpha[i] + 1.0) - psi_s1);
    }
    return shannon_entropy(mean) - expected_h;
}

ScoreVector score(const std::vector<DirichletOutput>& outputs, UncertaintyMetric metric) {
    ScoreVector sv;
    sv.metric = metric;
    sv.values.reserve(outputs.size());
    switch (metric) {
        case UncertaintyMetric::MaxProb:
            sv.higher_means_id = true;
            for (const auto& o : outputs) {
                sv.values.push_back(*std::max_element(o.predictive_mean.begin(), o.predictive_mean.end()));
            }
            break;
        case UncertaintyMetric::DiffEntropy:
            sv.higher_means_id = false;
            for (const auto& o : outputs) sv.values.push_back(dirichlet_diff_entropy(o.alpha));
            break;
        case UncertaintyMetric::MutualInfo:
            sv.higher_means_id = false;
            for (const auto& o : outputs) sv.values.push_back(dirichlet_mutual_info(o.alpha));
            break;
    }
    return sv;
}

ScoreVector score_softmax(const Tensor& probabilities, UncertaintyMetric metric) {
    if (metric != UncertaintyMetric::MaxProb) {
        throw std::invalid_argument(std::string(metric_name(metric)) +
                                    " requires a Dirichlet head; softmax models only support max_prob");
    }
    ScoreVector sv;
    sv.metric = metric;
    sv.higher_means_id = true;
    const size_t n = probabilities.dim(0), k = probabilities.dim(1);
    for (size_t i = 0; i < n; ++i) {
        double best = 0.0;
        for (size_t j = 0; j < k; ++j) best = std::max(best, probabilities[i * k + j]);
        sv.values.push_back(best);
    }
    return sv;
}

RocResult roc(const ScoreVector& id_scores, const ScoreVector& ood_scores) {
    const auto id = id_scores.oriented();
    const auto ood = ood_scores.oriented();
    if (id.empty() || ood.empty()) throw std::invalid_argument("roc: both score sets must be nonempty");

    RocResult result;
    // AUROC via midranks (exact pairwise probability with half-weight ties).
    {
        struct Entry {
            double value;
            bool is_id;
        };
        std::vector<Entry> all;
        all.reserve(id.size() + ood.size());
        for (double v : id) all.push_back({v, true});
        for (double v : ood) all.push_back({v, false});
        std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.value < b.value; });
        double rank_sum_id = 0.0;
        size_t i = 0;
        while (i < all.size()) {
            size_t j = i;
            while (j < all.size() && all[j].value == all[i].value) ++j;
            const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
            for (size_t t = i; t < j; ++t) {
                if (all[t].is_id) rank_sum_id += midrank;
            }
            i = j;
        }
        const double n1 = static_cast<double>(id.size());
        const double n0 = static_cast<double>(ood.size());
        result.auroc = (rank_sum_id - n1 * (n1 + 1.0) / 2.0) / (n1 * n0);
    }

    // Threshold sweep over every distinct score; retain rule is score >= tau.
    std::vector<double> candidates;
    candidates.reserve(id.size() + ood.size());
    candidates.insert(candidates.end(), id.begin(), id.end());
    candidates.insert(candidates.end(), ood.begin(), ood.end());
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

    double best_j = -2.0;
    for (double tau : candidates) {
        double tp = 0.0, fp = 0.0;
        for (double v : id) tp += v >= tau ? 1.0 : 0.0;
        for (double v : ood) fp += v >= tau ? 1.0 : 0.0;
        const double tpr = tp / static_cast<double>(id.size());
        const double fpr = fp / static_cast<double>(ood.size());
        result.thresholds.push_back(tau);
        result.tpr.push_back(tpr);
        result.fpr.push_back(fpr);
        const double j = tpr - fpr;
        // Strictly-better keeps the lowest tau among ties: lower tau retains
        // more ID samples (higher TPR side of the tie).
        if (j > best_j + 1e-15) {
            best_j = j;
            result.tau_star = tau;
        }
    }
    result.degenerate = candidates.size() <= 1;
    if (result.degenerate) result.tau_star = candidates.front();
    return result;
}

double coverage(const ScoreVector& scores, double tau_star) {
    const auto oriented = scores.oriented();
    if (oriented.empty()) return 0.0;
    size_t kept = 0;
    for (double v : oriented) {
        if (v >= tau_star) ++kept;
    }
    return static_cast<double>(kept) / static_cast<double>(oriented.size());
}

double nll(const Tensor& probabilities, const std::vector<int>& labels) {
    const size_t n = probabilities.dim(0), k = probabilities.dim(1);
    if (labels.size() != n) throw std::invalid_argument("nll: label count mismatch");
    std::vector<double> terms(n);
    for (size_t i = 0; i < n; ++i) {
        const double p = std::max(probabilities[i * k + static_cast<size_t>(labels[i])], 1e-12);
        terms[i] = -std::log(p);
    }
    return mean(terms);
}

double ece(const Tensor& probabilities, const std::vector<int>& labels, size_t bins) {
    if (bins < 2) throw std::invalid_argument("ece: need at least two bins");
    const size_t n = probabilities.dim(0), k = probabilities.dim(1);
    if (labels.size() != n) throw std::invalid_argument("ece: label count mismatch");
    std::vector<double> bin_conf(bins, 0.0), bin_acc(bins, 0.0);
    std::vector<size_t> bin_count(bins, 0);
    for (size_t i = 0; i < n; ++i) {
        size_t best = 0;
        for (size_t j = 1; j < k; ++j) {
            if (probabilities[i * k + j] > probabilities[i * k + best]) best = j;
        }
        const double conf = probabilities[i * k + best];
        size_t bin = static_cast<size_t>(conf * static_cast<double>(bins));
        if (bin >= bins) bin = bins - 1;
        bin_conf[bin] += conf;
        bin_acc[bin] += (static_cast<int>(best) == labels[i]) ? 1.0 : 0.0;
        bin_count[bin] += 1;
    }
    double err = 0.0;
    for (size_t b = 0; b < bins; ++b) {
        if (bin_count[b] == 0) continue;
        const double weight = static_cast<double>(bin_count[b]) / static_cast<double>(n);
        err += weight * std::abs(bin_acc[b] / bin_count[b] - bin_conf[b] / bin_count[b]);
    }
    return err;
}

double confidence_drop(const std::vector<double>& id_confidence, const std::vector<double>& shifted_confidence) {
    return mean(id_confidence) - mean(shifted_confidence);
}

namespace {

Tensor softmax_probs(const Model& base, const Tensor& images) {
    const ForwardTrace trace = forward(base, images, false);
    return trace.final_output();
}

Tensor dirichlet_prob_rows(const std::vector<DirichletOutput>& outs) {
    const size_t n = outs.size(), k = outs.empty() ? 0 : outs[0].predictive_mean.size();
    Tensor rows({n, k});
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j < k; ++j) rows[i * k + j] = outs[i].predictive_mean[j];
    }
    return rows;
}

std::vector<double> max_prob_rows(const Tensor& probs) {
    const size_t n = probs.dim(0), k = probs.dim(1);
    std::vector<double> out(n);
    for (size_t i = 0; i < n; ++i) {
        double best = 0.0;
        for (size_t j = 0; j < k; ++j) best = std::max(best, probs[i * k + j]);
        out[i] = best;
    }
    return out;
}

}  // namespace

EvalReport evaluate(const Model& base, const MetaModel* meta, const Dataset& id_test, const Dataset& ood_test,
                    const Dataset& adv_test, UncertaintyMetric metric, double tau_star) {
    EvalReport report;
    report.metric = metric_name(metric);
    report.tau_star = tau_star;
    report.used_meta = meta != nullptr;

    Tensor id_probs, ood_probs, adv_probs;
    ScoreVector id_scores, ood_scores, adv_scores;
    if (meta) {
        const auto id_out = meta_outputs(*meta, base, id_test.images);
        const auto ood_out = meta_outputs(*meta, base, ood_test.images);
        const auto adv_out = meta_outputs(*meta, base, adv_test.images);
        id_probs = dirichlet_prob_rows(id_out);
        ood_probs = dirichlet_prob_rows(ood_out);
        adv_probs = dirichlet_prob_rows(adv_out);
        id_scores = score(id_out, metric);
        ood_scores = score(ood_out, metric);
        adv_scores = score(adv_out, metric);
    } else {
        id_probs = softmax_probs(base, id_test.images);
        ood_probs = softmax_probs(base, ood_test.images);
        adv_probs = softmax_probs(base, adv_test.images);
        id_scores = score_softmax(id_probs, metric);
        ood_scores = score_softmax(ood_probs, metric);
        adv_scores = score_softmax(adv_probs, metric);
    }

    const size_t k = id_probs.dim(1);
    size_t correct = 0;
    for (size_t i = 0; i < id_test.count(); ++i) {
        size_t best = 0;
        for (size_t j = 1; j < k; ++j) {
            if (id_probs[i * k + j] > id_probs[i * k + best]) best = j;
        }
        if (static_cast<int>(best) == id_test.labels[i]) ++correct;
    }
    report.id_accuracy = static_cast<double>(correct) / static_cast<double>(id_test.count());

    report.id_coverage = 100.0 * coverage(id_scores, tau_star);
    report.ood_coverage = 100.0 * coverage(ood_scores, tau_star);
    report.adv_coverage = 100.0 * coverage(adv_scores, tau_star);
    report.auroc = 100.0 * roc(id_scores, ood_scores).auroc;
    report.adv_auroc = 100.0 * roc(id_scores, adv_scores).auroc;
    report.nll = nll(id_probs, id_test.labels);
    report.ece15 = ece(id_probs, id_test.labels, 15);
    report.conf_drop_ood = confidence_drop(max_prob_rows(id_probs), max_prob_rows(ood_probs));
    report.conf_drop_adv = confidence_drop(max_prob_rows(id_probs), max_prob_rows(adv_probs));
    return report;
}

std::string eval_report_csv_header() {
    return "metric,id_acc,id_cov,ood_cov,adv_cov,auroc,adv_auroc,nll,ece15,conf_drop_ood,conf_drop_adv,tau_star,"
           "used_meta";
}

std::string eval_report_csv_row(const EvalReport& r) {
    std::ostringstream os;
    os << r.metric << ',' << format_double(r.id_accuracy) << ',' << format_double(r.id_coverage) << ','
       << format_double(r.ood_coverage) << ',' << format_double(r.adv_coverage) << ',' << format_double(r.auroc) << ','
       << format_double(r.adv_auroc) << ',' << format_double(r.nll) << ',' << format_double(r.ece15) << ','
       << format_double(r.conf_drop_ood) << ',' << format_double(r.conf_drop_adv) << ',' << format_double(r.tau_star)
       << ',' << (r.used_meta ? 1 : 0);
    return os.str();
}

std::string eval_report_pretty(const EvalReport& r) {
    std::ostringstream os;
    os << "metric           : " << r.metric << (r.used_meta ? " (dirichlet)" : " (softmax)") << "\n";
    os << "ID accuracy      : " << r.id_accuracy * 100.0 << " %\n";
    os << "ID coverage      : " << r.id_coverage << " %\n";
    os << "OOD coverage     : " << r.ood_coverage << " %\n";
    os << "Adv coverage     : " << r.adv_coverage << " %\n";
    os << "AUROC            : " << r.auroc << " %\n";
    os << "Adv AUROC        : " << r.adv_auroc << " %\n";
    os << "NLL              : " << r.nll << "\n";
    os << "ECE(15)          : " << r.ece15 << "\n";
    os << "conf drop ID>OOD : " << r.conf_drop_ood << "\n";
    os << "conf drop ID>Adv : " << r.conf_drop_adv << "\n";
    os << "tau*             : " << r.tau_star << "\n";
    return os.str();
}

}  // namespace guide
