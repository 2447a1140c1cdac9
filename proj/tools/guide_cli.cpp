// Command-line driver for the evidential meta-model pipeline: trains the
// frozen base classifier, calibrates salient layers, builds the noise
// curriculum, trains the Dirichlet meta-model and evaluates ID/OOD/Adv
// separation with uncertainty-based rejection.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "guide/config.hpp"
#include "guide/pipeline.hpp"
#include "guide/text.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct GlobalOpts {
    std::string config_path;
    std::string out_dir;
    long long seed = -1;
    long long threads = -1;
};

guide::RunConfig resolve_config(const GlobalOpts& opts) {
    if (opts.config_path.empty()) throw guide::ConfigError("--config is required");
    guide::RunConfig cfg = guide::load_config(opts.config_path);
    if (opts.seed >= 0) cfg.seed = static_cast<uint64_t>(opts.seed);
    if (opts.threads > 0) cfg.threads = static_cast<size_t>(opts.threads);
    if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
    cfg.validate();
    return cfg;
}

int print_report(const std::string& csv_path) {
    std::ifstream in(csv_path);
    if (!in) throw guide::DataError("cannot open report: " + csv_path);
    std::string header, row;
    if (!std::getline(in, header) || !std::getline(in, row)) {
        throw guide::DataError("report file is incomplete: " + csv_path);
    }
    std::vector<std::string> names, values;
    std::stringstream hs(header), rs(row);
    std::string item;
    while (std::getline(hs, item, ',')) names.push_back(item);
    while (std::getline(rs, item, ',')) values.push_back(item);
    if (names.size() != values.size()) throw guide::DataError("report header/row mismatch");
    for (size_t i = 0; i < names.size(); ++i) {
        std::cout << names[i] << " = " << values[i] << "\n";
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"guide: post-hoc evidential meta-model pipeline"};
    app.require_subcommand(1);

    GlobalOpts opts;
    app.add_option("-c,--config", opts.config_path, "experiment config file (key = value sections)");
    app.add_option("-o,--out-dir", opts.out_dir, "override run.out_dir");
    app.add_option("-s,--seed", opts.seed, "override run.seed");
    app.add_option("-t,--threads", opts.threads, "override run.threads");

    auto* cmd_train_base = app.add_subcommand("train-base", "train and freeze the base classifier");
    auto* cmd_calibrate = app.add_subcommand("calibrate", "relevance calibration: layer masses, salient set, maps");
    auto* cmd_curriculum = app.add_subcommand("build-curriculum", "precompute corrupted views and soft targets");
    auto* cmd_train_meta = app.add_subcommand("train-meta", "train the Dirichlet meta-model on the curriculum");
    auto* cmd_attack = app.add_subcommand("attack", "generate adversarial test inputs");
    auto* cmd_evaluate = app.add_subcommand("evaluate", "threshold on validation, report on test splits");
    auto* cmd_report = app.add_subcommand("report", "pretty-print an evaluation CSV");
    std::string report_path;
    cmd_report->add_option("csv", report_path, "eval.csv produced by evaluate")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_report->parsed()) return print_report(report_path);
        const guide::RunConfig cfg = resolve_config(opts);
        if (cmd_train_base->parsed()) {
            guide::stage_train_base(cfg);
            std::cout << "base model written to " << guide::RunPaths{cfg.out_dir}.base_model() << "\n";
        } else if (cmd_calibrate->parsed()) {
            const auto report = guide::stage_calibrate(cfg);
            std::cout << "selected layers:";
            for (const auto& name : report.salient.names) std::cout << ' ' << name;
            std::cout << "\nachieved mass fraction = " << guide::format_double(report.salient.achieved_mass_fraction)
                      << "\nachieved eta (fisher)  = " << guide::format_double(report.achieved_eta) << "\n";
        } else if (cmd_curriculum->parsed()) {
            guide::stage_build_curriculum(cfg);
            std::cout << "curriculum cache written to " << guide::RunPaths{cfg.out_dir}.curriculum_dir() << "\n";
        } else if (cmd_train_meta->parsed()) {
            guide::stage_train_meta(cfg);
            std::cout << "meta model written to " << guide::RunPaths{cfg.out_dir}.meta_model() << "\n";
        } else if (cmd_attack->parsed()) {
            guide::stage_attack(cfg);
            std::cout << "adversarial cache written to " << guide::RunPaths{cfg.out_dir}.adv_cache() << "\n";
        } else if (cmd_evaluate->parsed()) {
            const auto report = guide::stage_evaluate(cfg);
            std::cout << guide::eval_report_pretty(report);
        }
        return kExitOk;
    } catch (const guide::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const CLI::Error& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const guide::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const guide::NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    }
}
