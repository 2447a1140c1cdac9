#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "guide/curriculum.hpp"
#include "guide/layers.hpp"
#include "guide/saliency.hpp"

namespace guide {

// Dirichlet head output for one sample. alpha_k = exp(clamped logit) + 1,
// so every component stays strictly above 1.
struct DirichletOutput {
    std::vector<double> alpha;
    double total_evidence = 0.0;             // S
    std::vector<double> predictive_mean;     // alpha / S
    double uncertainty = 0.0;                // K / S
    std::vector<double> head_logits;         // pre-exp values (clamped)
};

// Evidential meta-model: one affine branch per salient feature of the frozen
// base, concatenated and projected by an affine head. An optional hidden
// layer per branch (width 4K, ReLU) sits behind `branch_hidden`.
struct MetaModel {
    struct Branch {
        size_t point_index = 0;   // into the base model's feature points
        size_t layer_index = 0;   // tap depth in the base model
        std::string name;
        size_t in_dim = 0;
        Tensor w1, b1;  // in_dim x width
        Tensor w2, b2;  // hidden only: width x K
        bool hidden = false;
    };
    std::vector<Branch> branches;  // salient order (descending mass)
    Tensor head_w, head_b;         // (|branches| * K) x K
    size_t num_classes = 0;
    uint64_t base_checksum = 0;
    double logit_clamp = 30.0;

    size_t param_count() const;
};

MetaModel make_meta_model(const Model& base, const SalientSet& salient, const LayerMass& mass, uint64_t seed,
                          bool branch_hidden = false);

// Forward through branches and head for one sample of a traced base batch.
DirichletOutput meta_forward(const MetaModel& meta, const ForwardTrace& trace, size_t sample = 0);

// Closed-form KL(Dir(alpha) || Dir(beta)).
double dirichlet_kl(const std::vector<double>& alpha, const std::vector<double>& beta);

struct LossBreakdown {
    double expected_log_likelihood = 0.0;  // ELL term (positive = penalty)
    double kl = 0.0;
    double sre = 0.0;
    double total = 0.0;
    double kl_weight = 0.0;
};

// Per-sample loss: ELL + lambda_kl * KL + SRE with
//   ELL = -sum_k y_k (psi(alpha_k) - psi(S))
//   SRE = (S/K) (1 - <y, p>)
LossBreakdown guide_loss(const DirichletOutput& out, const std::vector<double>& soft_target, double kl_weight,
                         const std::vector<double>& beta);

// d(total)/d(head logits), analytic.
std::vector<double> guide_loss_grad_logits(const DirichletOutput& out, const std::vector<double>& soft_target,
                                           double kl_weight, const std::vector<double>& beta);

// Meta parameters in optimizer order (per branch w1,b1[,w2,b2], then head
// w,b), plus gradient accumulation through branches and head for one traced
// sample. Shared by the training loop and the gradient-oracle tests.
std::vector<Tensor*> meta_params(MetaModel& meta);
std::vector<Tensor> meta_zero_grads(const MetaModel& meta);
void meta_accumulate_grads(const MetaModel& meta, const ForwardTrace& trace, size_t sample,
                           const std::vector<double>& d_logits, double scale, std::vector<Tensor>& grads);

struct MetaTrainConfig {
    size_t epochs = 16;
    size_t batch_size = 64;
    double lr = 1e-2;
    double kl_weight = 0.1;
    double beta_prior = 1.0;
    uint64_t seed = 0;
};

struct MetaTrainHistory {
    std::vector<double> ell, kl, sre, total;  // per-epoch means
};

// Trains the meta-model over the curriculum: stages drawn per example from
// the epoch's kappa distribution, Adam on meta parameters only. The base
// model's checksum is verified before and after; any drift is a hard error.
MetaTrainHistory train_meta(MetaModel& meta, const Model& base, const CurriculumCache& curriculum,
                            const MetaTrainConfig& config);

// Dirichlet outputs for a whole dataset.
std::vector<DirichletOutput> meta_outputs(const MetaModel& meta, const Model& base, const Tensor& images,
                                          size_t batch_size = 256);

// d(cross-entropy on the predictive mean)/d(head logits) for one sample;
// used when attacking the composite base+meta pipeline.
std::vector<double> ce_grad_logits(const DirichletOutput& out, int label);

// Chain rule from head logits back to each salient feature tap:
// (tap layer index, d loss / d feature) pairs for one traced sample.
std::vector<std::pair<size_t, std::vector<double>>> meta_feature_grads(const MetaModel& meta,
                                                                       const ForwardTrace& trace, size_t sample,
                                                                       const std::vector<double>& d_logits);

void save_meta_model(const MetaModel& meta, const std::string& path);
MetaModel load_meta_model(const std::string& path, const Model& base);

}  // namespace guide
