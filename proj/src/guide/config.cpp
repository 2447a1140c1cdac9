#include "guide/config.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "guide/hash.hpp"
#include "guide/text.hpp"

namespace guide {

namespace {

struct Binder {
    std::map<std::string, std::function<void(const std::string&)>> setters;

    void number(const std::string& key, double* slot) {
        setters[key] = [slot, key](const std::string& v) {
            try {
                *slot = std::stod(v);
            } catch (...) {
                throw ConfigError("config key " + key + ": not a number: " + v);
            }
        };
    }
    template <class T>
    void integer(const std::string& key, T* slot) {
        setters[key] = [slot, key](const std::string& v) {
            try {
                *slot = static_cast<T>(std::stoull(v));
            } catch (...) {
                throw ConfigError("config key " + key + ": not an integer: " + v);
            }
        };
    }
    void boolean(const std::string& key, bool* slot) {
        setters[key] = [slot, key](const std::string& v) {
            if (v == "true" || v == "1") {
                *slot = true;
            } else if (v == "false" || v == "0") {
                *slot = false;
            } else {
                throw ConfigError("config key " + key + ": expected true/false: " + v);
            }
        };
    }
    void text(const std::string& key, std::string* slot) {
        setters[key] = [slot](const std::string& v) { *slot = v; };
    }
};

Binder make_binder(RunConfig& c) {
    Binder b;
    b.text("data.source", &c.data_source);
    b.text("data.id_train_images", &c.id_train_images);
    b.text("data.id_train_labels", &c.id_train_labels);
    b.text("data.id_test_images", &c.id_test_images);
    b.text("data.id_test_labels", &c.id_test_labels);
    b.text("data.ood_images", &c.ood_images);
    b.text("data.ood_labels", &c.ood_labels);
    b.integer("data.train_count", &c.train_count);
    b.integer("data.val_count", &c.val_count);
    b.integer("data.test_count", &c.test_count);
    b.integer("data.ood_count", &c.ood_count);
    b.integer("data.synth_classes", &c.synth_classes);
    b.integer("data.synth_side", &c.synth_side);
    b.integer("data.synth_per_class", &c.synth_per_class);
    b.number("data.synth_noise", &c.synth_noise);
    b.number("data.synth_jitter", &c.synth_jitter);
    b.number("data.synth_radius", &c.synth_radius);
    b.integer("data.synth_blobs", &c.synth_blobs);
    b.integer("data.synth_id_layout", &c.synth_id_layout);
    b.integer("data.synth_ood_layout", &c.synth_ood_layout);
    b.text("base.arch", &c.arch);
    b.integer("base.epochs", &c.base_epochs);
    b.number("base.lr", &c.base_lr);
    b.integer("base.batch_size", &c.base_batch);
    b.number("saliency.eta", &c.eta);
    b.number("saliency.epsilon", &c.lrp_epsilon);
    b.integer("saliency.mass_samples", &c.mass_samples);
    b.integer("saliency.fisher_samples", &c.fisher_samples);
    b.number("curriculum.gamma", &c.gamma);
    b.integer("curriculum.stages", &c.stages);
    b.integer("meta.epochs", &c.meta_epochs);
    b.integer("meta.batch_size", &c.meta_batch);
    b.number("meta.lr", &c.meta_lr);
    b.number("meta.kl_weight", &c.kl_weight);
    b.number("meta.beta", &c.beta_prior);
    b.boolean("meta.branch_hidden", &c.branch_hidden);
    b.text("attack.kind", &c.attack_kind);
    b.number("attack.epsilon", &c.attack_epsilon);
    b.integer("attack.steps", &c.attack_steps);
    b.number("attack.step_size", &c.attack_step_size);
    b.text("attack.target", &c.attack_target);
    b.text("eval.metric", &c.metric);
    b.integer("run.seed", &c.seed);
    b.integer("run.threads", &c.threads);
    b.text("run.out_dir", &c.out_dir);
    return b;
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    Binder binder = make_binder(cfg);
    std::map<std::string, std::string> kv;
    try {
        kv = parse_key_values(text);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    for (const auto& [key, value] : kv) {
        auto it = binder.setters.find(key);
        if (it == binder.setters.end()) throw ConfigError("unknown config key: " + key);
        it->second(value);
    }
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

void RunConfig::validate() const {
    if (data_source != "idx" && data_source != "synth") {
        throw ConfigError("data.source must be idx or synth, got " + data_source);
    }
    if (data_source == "idx") {
        for (const auto* p : {&id_train_images, &id_train_labels, &id_test_images, &id_test_labels, &ood_images,
                              &ood_labels}) {
            if (p->empty()) throw ConfigError("idx data source requires all six dataset paths");
            if (!std::filesystem::exists(*p)) throw ConfigError("dataset path does not exist: " + *p);
        }
    } else {
        if (synth_classes < 2 || synth_side < 8 || synth_per_class == 0) {
            throw ConfigError("synth data source parameters are degenerate");
        }
    }
    if (arch != "lenet5" && arch != "mlp") throw ConfigError("unknown base.arch: " + arch);
    if (!(eta > 0.0 && eta <= 1.0)) throw ConfigError("saliency.eta must lie in (0,1]");
    if (lrp_epsilon < 0.0) throw ConfigError("saliency.epsilon must be >= 0");
    if (!(gamma > 0.0)) throw ConfigError("curriculum.gamma must be > 0");
    if (stages < 1) throw ConfigError("curriculum.stages must be >= 1");
    if (meta_epochs < 2) throw ConfigError("meta.epochs must be >= 2 (the stage sampler needs both endpoints)");
    if (base_batch == 0 || meta_batch == 0) throw ConfigError("batch sizes must be positive");
    if (attack_kind != "fgsm" && attack_kind != "l2pgd" && attack_kind != "salt_pepper") {
        throw ConfigError("unknown attack.kind: " + attack_kind);
    }
    if (attack_target != "base" && attack_target != "pipeline") {
        throw ConfigError("attack.target must be base or pipeline");
    }
    if (attack_epsilon < 0.0) throw ConfigError("attack.epsilon must be >= 0");
    if (attack_steps < 1) throw ConfigError("attack.steps must be >= 1");
    if (metric != "max_prob" && metric != "diff_entropy" && metric != "mutual_info") {
        throw ConfigError("unknown eval.metric: " + metric);
    }
    if (threads == 0) throw ConfigError("run.threads must be >= 1");
    if (out_dir.empty()) throw ConfigError("run.out_dir must be set");
}

std::string RunConfig::canonical_text() const {
    std::ostringstream os;
    os << "data.source=" << data_source << '\n'
       << "data.id_train_images=" << id_train_images << '\n'
       << "data.id_train_labels=" << id_train_labels << '\n'
       << "data.id_test_images=" << id_test_images << '\n'
       << "data.id_test_labels=" << id_test_labels << '\n'
       << "data.ood_images=" << ood_images << '\n'
       << "data.ood_labels=" << ood_labels << '\n'
       << "data.train_count=" << train_count << '\n'
       << "data.val_count=" << val_count << '\n'
       << "data.test_count=" << test_count << '\n'
       << "data.ood_count=" << ood_count << '\n'
       << "data.synth_classes=" << synth_classes << '\n'
       << "data.synth_side=" << synth_side << '\n'
       << "data.synth_per_class=" << synth_per_class << '\n'
       << "data.synth_noise=" << format_double(synth_noise) << '\n'
       << "data.synth_jitter=" << format_double(synth_jitter) << '\n'
       << "data.synth_radius=" << format_double(synth_radius) << '\n'
       << "data.synth_blobs=" << synth_blobs << '\n'
       << "data.synth_id_layout=" << synth_id_layout << '\n'
       << "data.synth_ood_layout=" << synth_ood_layout << '\n'
       << "base.arch=" << arch << '\n'
       << "base.epochs=" << base_epochs << '\n'
       << "base.lr=" << format_double(base_lr) << '\n'
       << "base.batch_size=" << base_batch << '\n'
       << "saliency.eta=" << format_double(eta) << '\n'
       << "saliency.epsilon=" << format_double(lrp_epsilon) << '\n'
       << "saliency.mass_samples=" << mass_samples << '\n'
       << "saliency.fisher_samples=" << fisher_samples << '\n'
       << "curriculum.gamma=" << format_double(gamma) << '\n'
       << "curriculum.stages=" << stages << '\n'
       << "meta.epochs=" << meta_epochs << '\n'
       << "meta.batch_size=" << meta_batch << '\n'
       << "meta.lr=" << format_double(meta_lr) << '\n'
       << "meta.kl_weight=" << format_double(kl_weight) << '\n'
       << "meta.beta=" << format_double(beta_prior) << '\n'
       << "meta.branch_hidden=" << (branch_hidden ? 1 : 0) << '\n'
       << "attack.kind=" << attack_kind << '\n'
       << "attack.epsilon=" << format_double(attack_epsilon) << '\n'
       << "attack.steps=" << attack_steps << '\n'
       << "attack.step_size=" << format_double(attack_step_size) << '\n'
       << "attack.target=" << attack_target << '\n'
       << "eval.metric=" << metric << '\n'
       << "run.seed=" << seed << '\n';
    // threads and out_dir are excluded: they must not change results.
    return os.str();
}

uint64_t RunConfig::config_hash() const {
    const std::string text = canonical_text();
    return fnv1a(text.data(), text.size());
}

}  // namespace guide
