#pragma once

#include <string>
#include <vector>

#include "guide/attacks.hpp"
#include "guide/config.hpp"
#include "guide/curriculum.hpp"
#include "guide/dataset.hpp"
#include "guide/evidential.hpp"
#include "guide/saliency.hpp"
#include "guide/uq.hpp"

namespace guide {

// Splits resolved from a RunConfig (IDX files or the synthetic generator).
struct RunData {
    Dataset id_train, id_val, id_test;
    Dataset ood_val, ood_test;
};

RunData load_run_data(const RunConfig& cfg);

// Artifact paths inside the run's output directory.
struct RunPaths {
    std::string dir;
    std::string base_model() const { return dir + "/base_model.bin"; }
    std::string base_history() const { return dir + "/base_history.csv"; }
    std::string saliency_report() const { return dir + "/saliency_report.txt"; }
    std::string weight_maps() const { return dir + "/weight_maps.bin"; }
    std::string curriculum_dir() const { return dir + "/curriculum"; }
    std::string meta_model() const { return dir + "/meta_model.bin"; }
    std::string meta_history() const { return dir + "/meta_history.csv"; }
    std::string adv_cache() const { return dir + "/adv_test.bin"; }
    std::string eval_csv() const { return dir + "/eval.csv"; }
    std::string scores_prefix() const { return dir + "/scores_"; }
};

// Per-input weight map cache (calibration output consumed by the curriculum
// builder).
void save_weight_maps(const std::vector<WeightMap>& maps, const std::string& path, uint64_t model_checksum);
std::vector<WeightMap> load_weight_maps(const std::string& path, uint64_t model_checksum);

// Pipeline stages. Each writes its artifacts under cfg.out_dir and refuses
// upstream artifacts whose checksums do not match.
void stage_train_base(const RunConfig& cfg);
SaliencyReport stage_calibrate(const RunConfig& cfg);
void stage_build_curriculum(const RunConfig& cfg);
void stage_train_meta(const RunConfig& cfg);
void stage_attack(const RunConfig& cfg);
EvalReport stage_evaluate(const RunConfig& cfg);

// Threshold calibration on the validation splits (never sees test data).
double calibrate_threshold(const Model& base, const MetaModel* meta, const Dataset& id_val, const Dataset& ood_val,
                           UncertaintyMetric metric);

}  // namespace guide
