#include "guide/pipeline.hpp"

#include <filesystem>
#include <fstream>

#include "guide/hash.hpp"
#include "guide/idx.hpp"
#include "guide/serialize.hpp"
#include "guide/synth.hpp"
#include "guide/text.hpp"
#include "guide/threadpool.hpp"
#include "guide/train.hpp"

namespace guide {

RunData load_run_data(const RunConfig& cfg) {
    RunData data;
    if (cfg.data_source == "idx") {
        Dataset train_pool = load_idx(cfg.id_train_images, cfg.id_train_labels, "id:train-pool");
        Dataset test_pool = load_idx(cfg.id_test_images, cfg.id_test_labels, "id:test-pool");
        Dataset ood_pool = load_idx(cfg.ood_images, cfg.ood_labels, "ood:pool");

        SplitSpec spec;
        spec.train_count = cfg.train_count == 0 ? train_pool.count() - cfg.val_count : cfg.train_count;
        spec.val_count = cfg.val_count;
        spec.seed = cfg.seed;
        auto parts = split(train_pool, spec);
        data.id_train = std::move(parts.train);
        data.id_val = std::move(parts.val);
        data.id_test =
            cfg.test_count == 0 ? std::move(test_pool) : stratified_subset(test_pool, cfg.test_count, cfg.seed + 1);

        const size_t ood_total = cfg.ood_count == 0 ? ood_pool.count() : cfg.ood_count;
        SplitSpec ood_spec;
        ood_spec.train_count = ood_total / 2;      // OOD validation half
        ood_spec.val_count = ood_total - ood_total / 2;  // OOD test half
        ood_spec.seed = cfg.seed + 2;
        auto ood_parts = split(ood_pool, ood_spec);
        data.ood_val = std::move(ood_parts.train);
        data.ood_test = std::move(ood_parts.val);
        data.ood_val.name = "ood:val";
        data.ood_test.name = "ood:test";
    } else {
        BlobSpec id_spec;
        id_spec.noise = cfg.synth_noise;
        id_spec.jitter = cfg.synth_jitter;
        id_spec.radius = cfg.synth_radius;
        id_spec.blobs_per_class = cfg.synth_blobs;
        id_spec.layout_seed = cfg.synth_id_layout;
        Dataset id_pool =
            synth_blobs(cfg.seed + 10, cfg.synth_per_class, cfg.synth_classes, cfg.synth_side, id_spec, "synth:id");

        BlobSpec ood_spec = id_spec;
        ood_spec.layout_seed = cfg.synth_ood_layout;
        const size_t ood_total = std::max<size_t>(cfg.ood_count, 2);
        Dataset ood_pool = synth_blobs(cfg.seed + 11, (ood_total + cfg.synth_classes - 1) / cfg.synth_classes,
                                       cfg.synth_classes, cfg.synth_side, ood_spec, "synth:ood");

        SplitSpec spec;
        spec.train_count = std::min(cfg.train_count == 0 ? id_pool.count() : cfg.train_count,
                                    id_pool.count() - cfg.val_count - cfg.test_count);
        spec.val_count = cfg.val_count;
        spec.test_count = cfg.test_count;
        spec.seed = cfg.seed;
        auto parts = split(id_pool, spec);
        data.id_train = std::move(parts.train);
        data.id_val = std::move(parts.val);
        data.id_test = std::move(parts.test);

        SplitSpec ood_split;
        ood_split.train_count = ood_total / 2;
        ood_split.val_count = ood_total - ood_total / 2;
        ood_split.seed = cfg.seed + 2;
        auto ood_parts = split(ood_pool, ood_split);
        data.ood_val = std::move(ood_parts.train);
        data.ood_test = std::move(ood_parts.val);
        data.ood_val.name = "synth:ood:val";
        data.ood_test.name = "synth:ood:test";
    }
    return data;
}

void save_weight_maps(const std::vector<WeightMap>& maps, const std::string& path, uint64_t model_checksum) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for write: " + path);
    write_tag(out, "GUIDEWM1");
    write_u64(out, model_checksum);
    write_u32(out, static_cast<uint32_t>(maps.size()));
    for (const auto& wm : maps) {
        write_tensor(out, wm.map);
        write_f64(out, wm.mean_budget);
    }
}

std::vector<WeightMap> load_weight_maps(const std::string& path, uint64_t model_checksum) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path);
    expect_tag(in, "GUIDEWM1");
    if (read_u64(in) != model_checksum) throw DataError("weight-map cache belongs to a different model");
    const uint32_t n = read_u32(in);
    std::vector<WeightMap> maps(n);
    for (auto& wm : maps) {
        wm.map = read_tensor(in);
        wm.mean_budget = read_f64(in);
    }
    return maps;
}

namespace {

void write_history_csv(const std::string& path, const TrainHistory& history) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for write: " + path);
    out << "epoch,loss,accuracy\n";
    for (size_t e = 0; e < history.epoch_loss.size(); ++e) {
        out << e << ',' << format_double(history.epoch_loss[e]) << ',' << format_double(history.epoch_accuracy[e])
            << '\n';
    }
}

}  // namespace

void stage_train_base(const RunConfig& cfg) {
    cfg.validate();
    RunPaths paths{cfg.out_dir};
    std::filesystem::create_directories(paths.dir);
    const RunData data = load_run_data(cfg);
    Model model = make_architecture(cfg.arch, data.id_train.sample_shape(), data.id_train.num_classes());
    init_params(model, cfg.seed);
    const TrainHistory history = train_base(model, data.id_train, cfg.base_epochs, cfg.base_lr, cfg.base_batch,
                                            cfg.seed);
    save_model(model, paths.base_model());
    write_history_csv(paths.base_history(), history);
}

SaliencyReport stage_calibrate(const RunConfig& cfg) {
    cfg.validate();
    RunPaths paths{cfg.out_dir};
    const RunData data = load_run_data(cfg);
    const Model model = load_model(paths.base_model());

    // One relevance pass per training input yields both the layer masses and
    // the per-input weight maps.
    const auto points = eligible_layers(model);
    const size_t n = data.id_train.count();
    std::vector<std::vector<double>> per_sample_l1(n);
    std::vector<WeightMap> maps(n);
    parallel_for(n, cfg.threads, [&](size_t i) {
        const auto bundle = lrp(model, data.id_train.sample_batch(i), data.id_train.labels[i], cfg.lrp_epsilon);
        std::vector<double> l1(points.size());
        for (size_t t = 0; t < points.size(); ++t) l1[t] = l1_norm(bundle.layer_relevance[t].vec());
        per_sample_l1[i] = std::move(l1);
        maps[i] = weight_map(bundle);
    });

    SaliencyReport report;
    if (cfg.mass_samples != 0 && cfg.mass_samples < n) {
        std::vector<std::vector<double>> head(per_sample_l1.begin(),
                                              per_sample_l1.begin() + static_cast<long>(cfg.mass_samples));
        report.mass = layer_mass_from_bundles(points, head);
    } else {
        report.mass = layer_mass_from_bundles(points, per_sample_l1);
    }
    report.salient = select_layers(report.mass, cfg.eta);
    const Dataset fisher_sample =
        stratified_subset(data.id_train, std::min(cfg.fisher_samples, data.id_train.count()), cfg.seed + 3);
    report.achieved_eta = fisher_eta(model, report.salient, report.mass, fisher_sample, cfg.threads);
    report.epsilon = cfg.lrp_epsilon;
    report.model_checksum = model.param_checksum();

    save_saliency_report(report, paths.saliency_report());
    save_weight_maps(maps, paths.weight_maps(), report.model_checksum);
    return report;
}

void stage_build_curriculum(const RunConfig& cfg) {
    cfg.validate();
    RunPaths paths{cfg.out_dir};
    const RunData data = load_run_data(cfg);
    const Model model = load_model(paths.base_model());
    const auto maps = load_weight_maps(paths.weight_maps(), model.param_checksum());
    if (maps.size() != data.id_train.count()) throw DataError("weight-map cache does not cover the training split");
    const NoiseSchedule sched = schedule(cfg.gamma, cfg.stages);
    const CurriculumCache cache = build_curriculum(data.id_train, model, maps, sched, cfg.seed, cfg.threads);
    save_curriculum(cache, paths.curriculum_dir(), cfg.eta);
}

void stage_train_meta(const RunConfig& cfg) {
    cfg.validate();
    RunPaths paths{cfg.out_dir};
    const Model model = load_model(paths.base_model());
    const CurriculumCache cache = load_curriculum(paths.curriculum_dir(), model);
    const SaliencyReport report = load_saliency_report(paths.saliency_report(), model);

    MetaModel meta = make_meta_model(model, report.salient, report.mass, cfg.seed, cfg.branch_hidden);
    MetaTrainConfig train_cfg;
    train_cfg.epochs = cfg.meta_epochs;
    train_cfg.batch_size = cfg.meta_batch;
    train_cfg.lr = cfg.meta_lr;
    train_cfg.kl_weight = cfg.kl_weight;
    train_cfg.beta_prior = cfg.beta_prior;
    train_cfg.seed = cfg.seed;
    const MetaTrainHistory history = train_meta(meta, model, cache, train_cfg);
    save_meta_model(meta, paths.meta_model());

    std::ofstream out(paths.meta_history());
    if (!out) throw DataError("cannot open for write: " + paths.meta_history());
    out << "epoch,ell,kl,sre,total\n";
    for (size_t e = 0; e < history.total.size(); ++e) {
        out << e << ',' << format_double(history.ell[e]) << ',' << format_double(history.kl[e]) << ','
            << format_double(history.sre[e]) << ',' << format_double(history.total[e]) << '\n';
    }
}

void stage_attack(const RunConfig& cfg) {
    cfg.validate();
    RunPaths paths{cfg.out_dir};
    const RunData data = load_run_data(cfg);
    const Model model = load_model(paths.base_model());

    AttackTarget target;
    target.base = &model;
    MetaModel meta;
    if (cfg.attack_target == "pipeline") {
        meta = load_meta_model(paths.meta_model(), model);
        target.meta = &meta;
    }
    AttackConfig atk;
    atk.kind = parse_attack(cfg.attack_kind);
    atk.epsilon = cfg.attack_epsilon;
    atk.steps = cfg.attack_steps;
    atk.step_size = cfg.attack_step_size;
    atk.seed = cfg.seed;
    const Dataset adv = attack_dataset(target, data.id_test, atk, cfg.threads);
    save_attack_cache(adv, paths.adv_cache(), model.param_checksum(), atk);
}

double calibrate_threshold(const Model& base, const MetaModel* meta, const Dataset& id_val, const Dataset& ood_val,
                           UncertaintyMetric metric) {
    ScoreVector id_scores, ood_scores;
    if (meta) {
        id_scores = score(meta_outputs(*meta, base, id_val.images), metric);
        ood_scores = score(meta_outputs(*meta, base, ood_val.images), metric);
    } else {
        id_scores = score_softmax(forward(base, id_val.images, false).final_output(), metric);
        ood_scores = score_softmax(forward(base, ood_val.images, false).final_output(), metric);
    }
    return roc(id_scores, ood_scores).tau_star;
}

namespace {

void dump_scores(const std::string& path, const ScoreVector& scores) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for write: " + path);
    out << "index,score,oriented\n";
    const auto oriented = scores.oriented();
    for (size_t i = 0; i < scores.values.size(); ++i) {
        out << i << ',' << format_double(scores.values[i]) << ',' << format_double(oriented[i]) << '\n';
    }
}

}  // namespace

EvalReport stage_evaluate(const RunConfig& cfg) {
    cfg.validate();
    RunPaths paths{cfg.out_dir};
    const RunData data = load_run_data(cfg);
    const Model model = load_model(paths.base_model());
    const UncertaintyMetric metric = parse_metric(cfg.metric);

    MetaModel meta_storage;
    const MetaModel* meta = nullptr;
    if (std::filesystem::exists(paths.meta_model())) {
        meta_storage = load_meta_model(paths.meta_model(), model);
        meta = &meta_storage;
    }
    const Dataset adv = load_attack_cache(paths.adv_cache(), model.param_checksum());

    const double tau_star = calibrate_threshold(model, meta, data.id_val, data.ood_val, metric);
    const EvalReport report = evaluate(model, meta, data.id_test, data.ood_test, adv, metric, tau_star);

    std::ofstream out(paths.eval_csv());
    if (!out) throw DataError("cannot open for write: " + paths.eval_csv());
    out << "config_hash," << eval_report_csv_header() << '\n';
    out << hash_hex(cfg.config_hash()) << ',' << eval_report_csv_row(report) << '\n';

    if (meta) {
        dump_scores(paths.scores_prefix() + "id.csv", score(meta_outputs(*meta, model, data.id_test.images), metric));
        dump_scores(paths.scores_prefix() + "ood.csv",
                    score(meta_outputs(*meta, model, data.ood_test.images), metric));
        dump_scores(paths.scores_prefix() + "adv.csv", score(meta_outputs(*meta, model, adv.images), metric));
    } else {
        dump_scores(paths.scores_prefix() + "id.csv",
                    score_softmax(forward(model, data.id_test.images, false).final_output(), metric));
        dump_scores(paths.scores_prefix() + "ood.csv",
                    score_softmax(forward(model, data.ood_test.images, false).final_output(), metric));
        dump_scores(paths.scores_prefix() + "adv.csv",
                    score_softmax(forward(model, adv.images, false).final_output(), metric));
    }
    return report;
}

}  // namespace guide
