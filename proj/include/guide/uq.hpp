#pragma once

#include <optional>
#include <string>
#include <vector>

#include "guide/evidential.hpp"

namespace guide {

enum class UncertaintyMetric { MaxProb, DiffEntropy, MutualInfo };

UncertaintyMetric parse_metric(const std::string& name);
const char* metric_name(UncertaintyMetric metric);

// Per-sample scores, normalised internally so that higher always means
// "more in-distribution" before any ROC work.
struct ScoreVector {
    std::vector<double> values;
    UncertaintyMetric metric = UncertaintyMetric::MaxProb;
    bool higher_means_id = true;

    std::vector<double> oriented() const;
};

// Dirichlet differential entropy (closed form).
double dirichlet_diff_entropy(const std::vector<double>& alpha);
// Dirichlet mutual information: predictive entropy minus expected
// conditional entropy, both closed-form.
double dirichlet_mutual_info(const std::vector<double>& alpha);
double shannon_entropy(const std::vector<double>& probs);

// Scores from Dirichlet outputs (all three metrics available).
ScoreVector score(const std::vector<DirichletOutput>& outputs, UncertaintyMetric metric);
// Scores from plain softmax probability rows; only max-prob is defined and
// other metrics throw (softmax models have no Dirichlet posterior).
ScoreVector score_softmax(const Tensor& probabilities, UncertaintyMetric metric);

struct RocResult {
    std::vector<double> thresholds;
    std::vector<double> tpr, fpr;
    double auroc = 0.5;
    double tau_star = 0.0;  // retain when oriented score >= tau_star
    bool degenerate = false;
};

// ID positives vs OOD negatives over oriented scores. AUROC is the pairwise
// rank statistic with half-weight ties; tau* maximises TPR - FPR, ties
// resolved toward higher TPR.
RocResult roc(const ScoreVector& id_scores, const ScoreVector& ood_scores);

double coverage(const ScoreVector& scores, double tau_star);

double nll(const Tensor& probabilities, const std::vector<int>& labels);
double ece(const Tensor& probabilities, const std::vector<int>& labels, size_t bins = 15);
double confidence_drop(const std::vector<double>& id_confidence, const std::vector<double>& shifted_confidence);

struct EvalReport {
    std::string metric;
    double id_accuracy = 0.0;
    double id_coverage = 0.0;   // percent
    double ood_coverage = 0.0;  // percent
    double adv_coverage = 0.0;  // percent
    double auroc = 0.0;         // percent
    double adv_auroc = 0.0;     // percent
    double nll = 0.0;
    double ece15 = 0.0;
    double conf_drop_ood = 0.0;
    double conf_drop_adv = 0.0;
    double tau_star = 0.0;
    bool used_meta = false;
};

// Scores + report over ID/OOD/Adv test sets at a precalibrated threshold.
// With a meta-model the Dirichlet path is used, otherwise softmax max-prob.
EvalReport evaluate(const Model& base, const MetaModel* meta, const Dataset& id_test, const Dataset& ood_test,
                    const Dataset& adv_test, UncertaintyMetric metric, double tau_star);

std::string eval_report_csv_header();
std::string eval_report_csv_row(const EvalReport& report);
std::string eval_report_pretty(const EvalReport& report);

}  // namespace guide
