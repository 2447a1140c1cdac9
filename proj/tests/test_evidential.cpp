#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "guide/evidential.hpp"
#include "guide/special.hpp"
#include "guide/synth.hpp"
#include "guide/train.hpp"
#include "test_helpers.hpp"

using namespace guide;
using guide::testing::rel_err;

namespace {

// Marsaglia-Tsang gamma sampling for the Monte-Carlo KL oracle.
double sample_gamma(Rng& rng, double shape) {
    if (shape < 1.0) {
        const double u = std::max(rng.u01(), 1e-300);
        return sample_gamma(rng, shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x = rng.normal();
        double v = 1.0 + c * x;
        if (v <= 0.0) continue;
        v = v * v * v;
        const double u = rng.u01();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (std::log(std::max(u, 1e-300)) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

std::vector<double> sample_dirichlet(Rng& rng, const std::vector<double>& alpha) {
    std::vector<double> g(alpha.size());
    double total = 0.0;
    for (size_t i = 0; i < alpha.size(); ++i) {
        g[i] = sample_gamma(rng, alpha[i]);
        total += g[i];
    }
    for (auto& v : g) v /= total;
    return g;
}

double log_dirichlet_pdf(const std::vector<double>& p, const std::vector<double>& alpha) {
    double log_b = 0.0, s = 0.0;
    for (double a : alpha) {
        log_b += std::lgamma(a);
        s += a;
    }
    log_b -= std::lgamma(s);
    double acc = -log_b;
    for (size_t i = 0; i < p.size(); ++i) acc += (alpha[i] - 1.0) * std::log(std::max(p[i], 1e-300));
    return acc;
}

// Trained mini pipeline pieces shared by several cases.
struct Fixture {
    Dataset data;
    Model base;
    LayerMass mass;
    SalientSet salient;

    Fixture() {
        BlobSpec spec;
        spec.noise = 0.05;
        data = synth_blobs(71, 12, 3, 12, spec);
        base = guide::testing::mini_conv_net(72, 3);
        train_base(base, data, 5, 5e-3, 12, 3);
        const Dataset sample = data.subset({0, 1, 2, 3, 4, 5});
        mass = layer_mass(base, sample, 1e-6);
        salient = select_layers(mass, 0.9);
    }
};

}  // namespace

TEST_CASE("meta_forward: zero head gives alpha = 2 and uniform mean") {
    Fixture fx;
    MetaModel meta = make_meta_model(fx.base, fx.salient, fx.mass, 5);
    for (auto& b : meta.branches) {
        for (auto& v : b.w1.vec()) v = 0.0;
        for (auto& v : b.b1.vec()) v = 0.0;
    }
    for (auto& v : meta.head_w.vec()) v = 0.0;
    for (auto& v : meta.head_b.vec()) v = 0.0;
    const auto trace = forward(fx.base, fx.data.sample_batch(0), true);
    const auto out = meta_forward(meta, trace, 0);
    for (double a : out.alpha) CHECK(a == doctest::Approx(2.0));
    CHECK(out.total_evidence == doctest::Approx(2.0 * 3));
    for (double p : out.predictive_mean) CHECK(p == doctest::Approx(1.0 / 3));
    CHECK(out.uncertainty == doctest::Approx(0.5));
}

TEST_CASE("meta_forward worked example: logits (ln 9, 0) give alpha (10, 2)") {
    // A two-branch head is overkill here; drive the formula directly through
    // head bias with zeroed weights.
    Fixture fx;
    MetaModel meta = make_meta_model(fx.base, fx.salient, fx.mass, 6);
    meta.num_classes = fx.base.num_classes;
    for (auto& b : meta.branches) {
        for (auto& v : b.w1.vec()) v = 0.0;
        for (auto& v : b.b1.vec()) v = 0.0;
    }
    for (auto& v : meta.head_w.vec()) v = 0.0;
    meta.head_b[0] = std::log(9.0);
    meta.head_b[1] = 0.0;
    meta.head_b[2] = 0.0;
    const auto trace = forward(fx.base, fx.data.sample_batch(0), true);
    const auto out = meta_forward(meta, trace, 0);
    CHECK(out.alpha[0] == doctest::Approx(10.0));
    CHECK(out.alpha[1] == doctest::Approx(2.0));
    // alpha exceeds 1 structurally even under extreme logits
    meta.head_b[0] = -1e9;
    const auto clamped = meta_forward(meta, trace, 0);
    CHECK(clamped.alpha[0] > 1.0);
    CHECK(clamped.alpha[0] == doctest::Approx(1.0 + std::exp(-30.0)));
}

TEST_CASE("dirichlet KL: identity, worked value, nonnegativity, Monte-Carlo oracle") {
    CHECK(dirichlet_kl({2.0, 3.0, 1.5}, {2.0, 3.0, 1.5}) == doctest::Approx(0.0).epsilon(1e-12));

    // K=2, alpha=(2,2), beta=(1,1): ln 6 + 2 (psi(2) - psi(4))
    const double expect = std::log(6.0) + 2.0 * (digamma(2.0) - digamma(4.0));
    CHECK(expect == doctest::Approx(0.1250).epsilon(1e-3));
    CHECK(dirichlet_kl({2.0, 2.0}, {1.0, 1.0}) == doctest::Approx(expect).epsilon(1e-12));

    Rng rng(73);
    for (int trial = 0; trial < 1000; ++trial) {
        const size_t k = 2 + trial % 4;
        std::vector<double> a(k), b(k);
        for (size_t i = 0; i < k; ++i) {
            a[i] = 0.2 + 5.0 * rng.u01();
            b[i] = 0.2 + 5.0 * rng.u01();
        }
        CHECK(dirichlet_kl(a, b) >= -1e-10);
    }

    // Monte-Carlo estimate of E_p[log p(x)/q(x)] on fixed pairs
    for (int pair = 0; pair < 3; ++pair) {
        std::vector<double> a = {1.5 + pair, 2.0, 3.0 - 0.5 * pair};
        std::vector<double> b = {1.0, 1.0 + 0.5 * pair, 2.0};
        const size_t n = 1000000;
        double acc = 0.0, acc2 = 0.0;
        Rng mc(100 + pair);
        for (size_t i = 0; i < n; ++i) {
            const auto p = sample_dirichlet(mc, a);
            const double term = log_dirichlet_pdf(p, a) - log_dirichlet_pdf(p, b);
            acc += term;
            acc2 += term * term;
        }
        const double mc_mean = acc / n;
        const double mc_se = std::sqrt((acc2 / n - mc_mean * mc_mean) / n);
        CHECK(std::abs(dirichlet_kl(a, b) - mc_mean) <= 3.0 * mc_se + 1e-6);
    }

    CHECK_THROWS(dirichlet_kl({1.0, -0.5}, {1.0, 1.0}));
}

TEST_CASE("guide loss terms: perfect agreement, uniform case, SRE sign") {
    // one-hot agreement at concentrated alpha: SRE -> 0 only at a vertex
    DirichletOutput out;
    out.alpha = {1.0 + std::exp(8.0), 1.0 + 1e-8};
    out.total_evidence = out.alpha[0] + out.alpha[1];
    out.predictive_mean = {out.alpha[0] / out.total_evidence, out.alpha[1] / out.total_evidence};
    out.head_logits = {8.0, -18.4};
    const std::vector<double> onehot = {1.0, 0.0};
    const auto l1 = guide_loss(out, onehot, 0.0, {1.0, 1.0});
    // <y, p> = p_0 ~ 1 -> SRE ~ 0
    CHECK(l1.sre < 1e-3 * out.total_evidence);
    CHECK(l1.sre >= 0.0);

    // uniform target and mean with alpha=(2,2): SRE = 1, ELL = psi(4)-psi(2)
    DirichletOutput flat;
    flat.alpha = {2.0, 2.0};
    flat.total_evidence = 4.0;
    flat.predictive_mean = {0.5, 0.5};
    flat.head_logits = {0.0, 0.0};
    const std::vector<double> uniform = {0.5, 0.5};
    const auto l2 = guide_loss(flat, uniform, 0.7, {1.0, 1.0});
    CHECK(l2.sre == doctest::Approx(1.0));
    CHECK(l2.expected_log_likelihood == doctest::Approx(digamma(4.0) - digamma(2.0)).epsilon(1e-12));
    CHECK(l2.expected_log_likelihood == doctest::Approx(0.8333).epsilon(1e-3));
    CHECK(l2.total == doctest::Approx(l2.expected_log_likelihood + 0.7 * l2.kl + l2.sre));

    // SRE >= 0 with equality only at matching one-hot vertices
    Rng rng(74);
    for (int i = 0; i < 200; ++i) {
        DirichletOutput o;
        o.alpha = {1.0 + 9.0 * rng.u01(), 1.0 + 9.0 * rng.u01(), 1.0 + 9.0 * rng.u01()};
        o.total_evidence = o.alpha[0] + o.alpha[1] + o.alpha[2];
        o.predictive_mean = {o.alpha[0] / o.total_evidence, o.alpha[1] / o.total_evidence,
                             o.alpha[2] / o.total_evidence};
        o.head_logits = {0.0, 0.0, 0.0};
        std::vector<double> y = {rng.u01(), rng.u01(), rng.u01()};
        const double sum = y[0] + y[1] + y[2];
        for (auto& v : y) v /= sum;
        CHECK(guide_loss(o, y, 0.1, {1.0, 1.0, 1.0}).sre >= 0.0);
    }
}

TEST_CASE("loss gradient w.r.t. head logits matches finite differences") {
    Rng rng(75);
    for (int trial = 0; trial < 30; ++trial) {
        const size_t k = 2 + trial % 3;
        std::vector<double> logits(k), target(k);
        for (auto& v : logits) v = 4.0 * (rng.u01() - 0.5);
        double tsum = 0.0;
        for (auto& v : target) {
            v = 0.05 + rng.u01();
            tsum += v;
        }
        for (auto& v : target) v /= tsum;
        const double kl_w = 0.25 * rng.u01();
        const std::vector<double> beta(k, 1.0);

        auto make_out = [&](const std::vector<double>& g) {
            DirichletOutput o;
            o.head_logits = g;
            o.alpha.resize(k);
            o.total_evidence = 0.0;
            for (size_t j = 0; j < k; ++j) {
                o.alpha[j] = std::exp(g[j]) + 1.0;
                o.total_evidence += o.alpha[j];
            }
            o.predictive_mean.resize(k);
            for (size_t j = 0; j < k; ++j) o.predictive_mean[j] = o.alpha[j] / o.total_evidence;
            return o;
        };
        const auto out = make_out(logits);
        const auto grad = guide_loss_grad_logits(out, target, kl_w, beta);
        for (size_t j = 0; j < k; ++j) {
            auto probe = logits;
            const double h = 1e-6;
            probe[j] = logits[j] + h;
            const double hi = guide_loss(make_out(probe), target, kl_w, beta).total;
            probe[j] = logits[j] - h;
            const double lo = guide_loss(make_out(probe), target, kl_w, beta).total;
            const double fd = (hi - lo) / (2.0 * h);
            CHECK(rel_err(grad[j], fd) < 1e-4);
        }
    }
}

TEST_CASE("full composite gradient (branches -> head -> loss) vs finite differences") {
    Fixture fx;
    Rng rng(76);
    for (int trial = 0; trial < 20; ++trial) {
        MetaModel meta = make_meta_model(fx.base, fx.salient, fx.mass, 80 + trial, trial % 4 == 3);
        const size_t sample = trial % fx.data.count();
        const auto trace = forward(fx.base, fx.data.sample_batch(sample), true);
        std::vector<double> target(3);
        double tsum = 0.0;
        for (auto& v : target) {
            v = 0.05 + rng.u01();
            tsum += v;
        }
        for (auto& v : target) v /= tsum;
        const std::vector<double> beta(3, 0.5 + rng.u01());
        const double kl_w = 0.3 * rng.u01();

        const auto out = meta_forward(meta, trace, 0);
        const auto d_logits = guide_loss_grad_logits(out, target, kl_w, beta);
        auto grads = meta_zero_grads(meta);
        meta_accumulate_grads(meta, trace, 0, d_logits, 1.0, grads);

        auto loss_value = [&]() { return guide_loss(meta_forward(meta, trace, 0), target, kl_w, beta).total; };
        const auto params = meta_params(meta);
        REQUIRE(params.size() == grads.size());
        for (size_t pi = 0; pi < params.size(); ++pi) {
            Tensor* p = params[pi];
            const size_t stride = std::max<size_t>(1, p->size() / 7);
            for (size_t j = 0; j < p->size(); j += stride) {
                const double fd = guide::testing::central_diff((*p)[j], 1e-6, loss_value);
                CHECK(rel_err(grads[pi][j], fd) < 1e-4);
            }
        }
    }
}

TEST_CASE("train_meta: evidence separates clean from corrupted, ELL descends, determinism") {
    Fixture fx;
    // weight maps + curriculum
    std::vector<WeightMap> maps;
    for (size_t i = 0; i < fx.data.count(); ++i) {
        maps.push_back(weight_map(lrp(fx.base, fx.data.sample_batch(i), fx.data.labels[i], 1e-6)));
    }
    const auto sched = schedule(0.25, 4);
    const auto curriculum = build_curriculum(fx.data, fx.base, maps, sched, 5, 2);

    MetaModel meta = make_meta_model(fx.base, fx.salient, fx.mass, 9);
    MetaTrainConfig cfg;
    cfg.epochs = 10;
    cfg.batch_size = 12;
    cfg.lr = 5e-3;
    cfg.kl_weight = 0.1;
    cfg.seed = 11;
    const auto history = train_meta(meta, fx.base, curriculum, cfg);
    REQUIRE(history.total.size() == 10);

    // evidence ordering: mean S on clean inputs > mean S on stage-T views
    double s_clean = 0.0, s_noisy = 0.0;
    for (size_t i = 0; i < fx.data.count(); ++i) {
        const auto t0 = forward(fx.base, curriculum.views[i][0].image.reshaped({1, 12, 12, 1}), true);
        const auto tT = forward(fx.base, curriculum.views[i][4].image.reshaped({1, 12, 12, 1}), true);
        s_clean += meta_forward(meta, t0, 0).total_evidence;
        s_noisy += meta_forward(meta, tT, 0).total_evidence;
    }
    CHECK(s_clean > s_noisy);

    // determinism
    MetaModel meta2 = make_meta_model(fx.base, fx.salient, fx.mass, 9);
    const auto history2 = train_meta(meta2, fx.base, curriculum, cfg);
    CHECK(history2.total == history.total);
    CHECK(meta2.head_w.vec() == meta.head_w.vec());

    // base checksum mismatch is fatal
    Model other = guide::testing::mini_conv_net(99, 3);
    other.frozen = true;
    MetaModel meta3 = make_meta_model(fx.base, fx.salient, fx.mass, 9);
    CHECK_THROWS_AS(train_meta(meta3, other, curriculum, cfg), DataError);
}

TEST_CASE("ELL decreases over first steps on a repeated one-hot batch") {
    Fixture fx;
    std::vector<WeightMap> maps;
    for (size_t i = 0; i < fx.data.count(); ++i) {
        maps.push_back(weight_map(lrp(fx.base, fx.data.sample_batch(i), fx.data.labels[i], 1e-6)));
    }
    // single stage, zero noise: every view is the clean one-hot sample
    const auto sched = schedule(1e-9, 1);
    const auto curriculum = build_curriculum(fx.data, fx.base, maps, sched, 5, 1);
    MetaModel meta = make_meta_model(fx.base, fx.salient, fx.mass, 10);
    MetaTrainConfig cfg;
    cfg.epochs = 10;
    cfg.batch_size = fx.data.count();
    cfg.lr = 2e-3;
    cfg.kl_weight = 0.0;
    cfg.seed = 3;
    const auto history = train_meta(meta, fx.base, curriculum, cfg);
    for (size_t e = 1; e < history.ell.size(); ++e) CHECK(history.ell[e] <= history.ell[e - 1] + 1e-9);
}

TEST_CASE("meta model serialization round-trip and checksum binding") {
    Fixture fx;
    MetaModel meta = make_meta_model(fx.base, fx.salient, fx.mass, 12);
    const std::string path = (std::filesystem::temp_directory_path() / "guide_meta_test.bin").string();
    save_meta_model(meta, path);
    const MetaModel back = load_meta_model(path, fx.base);
    CHECK(back.head_w.vec() == meta.head_w.vec());
    CHECK(back.branches.size() == meta.branches.size());
    CHECK(back.branches[0].name == meta.branches[0].name);

    Model other = guide::testing::mini_conv_net(1234, 3);
    other.frozen = true;
    CHECK_THROWS_AS(load_meta_model(path, other), DataError);
    std::filesystem::remove(path);
}
