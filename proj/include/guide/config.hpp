#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace guide {

// Raised for malformed configuration / usage problems. The CLI maps it to
// exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// One experiment, parsed from a flat key=value file with [section] headers.
// Unknown keys are hard errors; every path is checked at validation time.
struct RunConfig {
    // [data] — either IDX files or the synthetic generator
    std::string data_source = "idx";  // idx | synth
    std::string id_train_images, id_train_labels;
    std::string id_test_images, id_test_labels;
    std::string ood_images, ood_labels;
    size_t train_count = 10000;  // stratified subset; 0 = all
    size_t val_count = 2000;
    size_t test_count = 2000;
    size_t ood_count = 2000;
    // synth settings
    size_t synth_classes = 10;
    size_t synth_side = 28;
    size_t synth_per_class = 1400;
    double synth_noise = 0.12;
    double synth_jitter = 1.5;
    double synth_radius = 2.2;
    int synth_blobs = 2;
    uint64_t synth_id_layout = 1;
    uint64_t synth_ood_layout = 2;

    // [base]
    std::string arch = "lenet5";
    size_t base_epochs = 10;
    double base_lr = 1e-3;
    size_t base_batch = 64;

    // [saliency]
    double eta = 0.9;
    double lrp_epsilon = 1e-6;
    size_t mass_samples = 0;  // 0 = every curriculum input
    size_t fisher_samples = 256;

    // [curriculum]
    double gamma = 0.25;
    size_t stages = 5;

    // [meta]
    size_t meta_epochs = 16;
    size_t meta_batch = 64;
    double meta_lr = 1e-2;
    double kl_weight = 0.1;
    double beta_prior = 1.0;
    bool branch_hidden = false;

    // [attack]
    std::string attack_kind = "l2pgd";
    double attack_epsilon = 1.0;
    size_t attack_steps = 40;
    double attack_step_size = 0.0;
    std::string attack_target = "base";  // base | pipeline

    // [eval]
    std::string metric = "mutual_info";

    // [run]
    uint64_t seed = 7;
    size_t threads = 1;
    std::string out_dir = "out";

    void validate() const;
    uint64_t config_hash() const;
    std::string canonical_text() const;
};

RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::string& path);

}  // namespace guide
