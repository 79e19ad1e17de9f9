#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fd_check.hpp"
#include "uhar/bnn.hpp"

using namespace uhar;

namespace {

// two well-separated gaussian blobs in embedding space
EmbeddingDataset blob_dataset(std::size_t per_class, std::size_t d, double gap, std::uint64_t seed) {
    Rng rng(seed);
    EmbeddingDataset ds;
    for (int cls = 0; cls < 2; ++cls)
        for (std::size_t i = 0; i < per_class; ++i) {
            EmbeddingDistribution e;
            e.mean.resize(d);
            e.variance.assign(d, 0.05);
            for (std::size_t k = 0; k < d; ++k)
                e.mean[k] = (cls ? gap : -gap) * (k == 0 ? 1.0 : 0.2) + 0.3 * rng.normal();
            ds.items.push_back(std::move(e));
            ds.labels.push_back(cls);
        }
    return ds;
}

double min_abs_preact(const FcBnnModel& m, const Vec& features, const Vec& noise) {
    std::vector<BayesianDenseCache> caches;
    fcbnn_logits(m, features, noise, &caches);
    double worst = 1e300;
    for (std::size_t l = 0; l + 1 < caches.size(); ++l)  // hidden layers only
        for (double p : caches[l].preact) worst = std::min(worst, std::abs(p));
    return worst;
}

}  // namespace

TEST_CASE("fcbnn construction and parameter count") {
    Rng rng(1);

    SECTION("matches the closed-form count") {
        const FcBnnModel m = build_fcbnn(16, 7, {32, 32, 16}, rng);
        REQUIRE(m.param_count() == 5518);
        REQUIRE(m.input_dim() == 32);
    }

    SECTION("tiny model") {
        const FcBnnModel m = build_fcbnn(1, 2, {1, 1, 1}, rng);
        REQUIRE(m.param_count() == 22);
    }

    SECTION("count is even and matches tensor enumeration") {
        const FcBnnModel m = build_fcbnn(5, 3, {8, 6, 4}, rng);
        REQUIRE(m.param_count() % 2 == 0);
        std::size_t enumerated = 0;
        for (const auto& l : m.layers)
            enumerated += l.weight_posterior.mu.size() + l.weight_posterior.rho.size() +
                          l.bias_posterior.mu.size() + l.bias_posterior.rho.size();
        REQUIRE(m.param_count() == enumerated);
        REQUIRE(fcbnn_flatten_params(m).size() == enumerated);
    }
}

TEST_CASE("embedding features compress the variance") {
    EmbeddingDistribution e{{1.0, 2.0}, {0.0, 3.0}};
    const Vec f = embedding_features(e, std::vector<std::size_t>{0, 1});
    REQUIRE(f == Vec{1.0, 2.0, 0.0, std::log1p(3.0)});

    const Vec g = embedding_features(e, std::vector<std::size_t>{1});
    REQUIRE(g == Vec{2.0, std::log1p(3.0)});
}

TEST_CASE("elbo loss") {
    Rng rng(3);
    FcBnnModel m = build_fcbnn(2, 3, {4, 4, 3}, rng);
    EmbeddingDataset ds = blob_dataset(6, 2, 2.0, 5);
    std::vector<Vec> feats;
    std::vector<const Vec*> fp;
    std::vector<int> labels;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        feats.push_back(embedding_features(ds.items[i], m));
        labels.push_back(ds.labels[i]);
    }
    for (const auto& f : feats) fp.push_back(&f);

    SECTION("kl term is non-negative") {
        REQUIRE(fcbnn_kl(m) >= 0.0);
        Rng r2(9);
        const double loss = elbo_loss(m, fp, labels, 2, 0.1, r2);
        REQUIRE(std::isfinite(loss));
    }

    SECTION("labels out of range throw") {
        std::vector<int> bad = labels;
        bad[0] = 7;
        Rng r2(9);
        REQUIRE_THROWS_AS(elbo_loss(m, fp, bad, 1, 0.1, r2), Error);
    }

    SECTION("invalid sample counts throw") {
        Rng r2(9);
        REQUIRE_THROWS_AS(elbo_loss(m, fp, labels, 0, 0.1, r2), Error);
        EmbeddingDistribution e{{0.1, 0.2}, {0.1, 0.1}};
        REQUIRE_THROWS_AS(predict(m, e, 1, 5), Error);
    }

    SECTION("confident correct logits leave only the kl term") {
        REQUIRE(nll_from_logits({30.0, 0.0, -5.0}, 0) == Catch::Approx(0.0).margin(1e-10));
    }

    SECTION("gradient matches finite differences with frozen noise") {
        Rng noise_rng(17);
        int done = 0;
        while (done < 3) {
            Rng init(noise_rng.next_u64());
            FcBnnModel probe = build_fcbnn(2, 3, {4, 3, 3}, init);
            const Vec noise = noise_rng.normal_vec(probe.noise_size());
            // stay away from relu kinks so the numeric probe is clean
            bool ok = true;
            for (const auto& f : feats) ok = ok && min_abs_preact(probe, f, noise) > 1e-3;
            if (!ok) continue;
            ++done;

            Vec analytic;
            elbo_loss_and_grad(probe, fp, labels, 0.37, noise, &analytic);
            FcBnnModel fd_model = probe;
            const Vec numeric = testutil::fd_gradient(
                [&](const Vec& params) {
                    fcbnn_set_params(fd_model, params);
                    return elbo_loss_and_grad(fd_model, fp, labels, 0.37, noise, nullptr).total;
                },
                fcbnn_flatten_params(probe));
            REQUIRE(testutil::max_rel_error(analytic, numeric) < 1e-4);
        }
    }
}

TEST_CASE("fcbnn training on separable blobs") {
    EmbeddingDataset train = blob_dataset(40, 4, 2.0, 11);
    EmbeddingDataset val = blob_dataset(15, 4, 2.0, 12);

    Rng rng(13);
    FcBnnModel m = build_fcbnn(4, 2, {8, 8, 4}, rng);
    BnnTrainConfig cfg;
    cfg.epochs = 15;
    const auto trace = train_fcbnn(m, train, val, cfg, 31337);

    REQUIRE(trace.back().loss < trace.front().loss);
    REQUIRE(trace.back().val_accuracy >= 0.95);

    SECTION("identical seeds give identical traces") {
        Rng rng2(13);
        FcBnnModel m2 = build_fcbnn(4, 2, {8, 8, 4}, rng2);
        const auto trace2 = train_fcbnn(m2, train, val, cfg, 31337);
        for (std::size_t i = 0; i < trace.size(); ++i) {
            REQUIRE(trace[i].loss == trace2[i].loss);
            REQUIRE(trace[i].val_accuracy == trace2[i].val_accuracy);
        }
    }

    SECTION("trained sigma dispersion exceeds the constant init") {
        Rng rng3(13);
        const FcBnnModel fresh = build_fcbnn(4, 2, {8, 8, 4}, rng3);
        const auto before = weight_variability_summary(fresh);
        const auto after = weight_variability_summary(m);
        double disp_before = 0.0, disp_after = 0.0;
        for (const auto& s : before) {
            disp_before += s.dispersion;
            std::size_t total = 0;
            for (std::size_t c : s.counts) total += c;
            REQUIRE(total == s.n);  // bins cover every sigma
        }
        for (const auto& s : after) disp_after += s.dispersion;
        REQUIRE(disp_before == Catch::Approx(0.0).margin(1e-15));
        REQUIRE(disp_after > disp_before);
    }
}

TEST_CASE("posterior predictive") {
    Rng rng(23);

    SECTION("probabilities form a simplex point") {
        FcBnnModel m = build_fcbnn(3, 4, {5, 5, 4}, rng);
        EmbeddingDistribution e{{0.1, -0.2, 0.4}, {0.2, 0.2, 0.2}};
        const PredictiveResult r = predict(m, e, 64, 7);
        double sum = 0.0;
        for (double p : r.prob_mean) sum += p;
        REQUIRE(sum == Catch::Approx(1.0).margin(1e-9));
        for (double s : r.prob_std) REQUIRE(s >= 0.0);
        REQUIRE(r.entropy >= 0.0);
        REQUIRE(r.entropy <= std::log(4.0) + 1e-12);
    }

    SECTION("collapsed posterior matches the mean network and has zero spread") {
        FcBnnModel m = build_fcbnn(2, 3, {4, 4, 3}, rng);
        for (auto& l : m.layers) {
            std::fill(l.weight_posterior.rho.begin(), l.weight_posterior.rho.end(), -60.0);
            std::fill(l.bias_posterior.rho.begin(), l.bias_posterior.rho.end(), -60.0);
        }
        EmbeddingDistribution e{{0.5, -0.5}, {0.1, 0.1}};
        const PredictiveResult r = predict(m, e, 16, 99);
        const Vec det = softmax(fcbnn_logits_mean(m, embedding_features(e, m)));
        for (std::size_t k = 0; k < det.size(); ++k) {
            REQUIRE(r.prob_mean[k] == Catch::Approx(det[k]).margin(1e-9));
            REQUIRE(r.prob_std[k] < 1e-9);
        }
        REQUIRE(ood_score(r) < 1e-9);  // zero-variance posterior scores zero
    }

    SECTION("symmetric two-class model stays near a coin flip") {
        FcBnnModel m = build_fcbnn(2, 2, {4, 4, 3}, rng);
        for (auto& l : m.layers) {
            std::fill(l.weight_posterior.mu.begin(), l.weight_posterior.mu.end(), 0.0);
            std::fill(l.bias_posterior.mu.begin(), l.bias_posterior.mu.end(), 0.0);
        }
        EmbeddingDistribution e{{0.3, 0.9}, {0.2, 0.2}};
        const std::size_t T = 1000;
        const PredictiveResult r = predict(m, e, T, 41);
        const double se = r.prob_std[0] / std::sqrt(static_cast<double>(T));
        REQUIRE(std::abs(r.prob_mean[0] - 0.5) < 3.0 * se + 1e-6);
    }

    SECTION("more samples cannot raise the standard error of the mean") {
        FcBnnModel m = build_fcbnn(2, 2, {4, 4, 3}, rng);
        EmbeddingDistribution e{{0.3, -0.1}, {0.3, 0.3}};
        auto spread = [&](std::size_t T) {
            double mean = 0.0, m2 = 0.0;
            const int reps = 24;
            for (int rep = 0; rep < reps; ++rep) {
                const double p = predict(m, e, T, 1000 + static_cast<std::uint64_t>(rep)).prob_mean[0];
                mean += p;
                m2 += p * p;
            }
            mean /= reps;
            return std::sqrt(std::max(m2 / reps - mean * mean, 0.0));
        };
        REQUIRE(spread(100) <= spread(10) + 1e-3);
    }
}

TEST_CASE("ood scoring and calibration") {
    SECTION("score is the mean per-class spread") {
        PredictiveResult r;
        r.prob_std = {0.1, 0.2, 0.3};
        REQUIRE(ood_score(r) == Catch::Approx(0.2));
        PredictiveResult perm;
        perm.prob_std = {0.3, 0.1, 0.2};  // relabeling permutes the spreads
        REQUIRE(ood_score(perm) == Catch::Approx(ood_score(r)));
    }

    SECTION("threshold calibration is the 99th percentile") {
        REQUIRE(calibrate_ood_threshold(std::vector<double>(100, 0.0)) == 0.0);
        std::vector<double> grid(1000);
        for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = static_cast<double>(i + 1) / 1000.0;
        REQUIRE(calibrate_ood_threshold(grid) == Catch::Approx(0.990));
        std::vector<double> vals{0.5, 0.1, 0.9, 0.3};
        const double t = calibrate_ood_threshold(vals);
        REQUIRE(t >= 0.1);
        REQUIRE(t <= 0.9);
    }
}

TEST_CASE("classify_pipeline modes") {
    Rng rng(47);
    EncoderModel enc = build_encoder(kImuChannels * 4, 3, {6}, Activation::Relu, rng);
    FcBnnModel m = build_fcbnn(3, 2, {4, 4, 3}, rng);

    std::vector<ImuWindow> windows;
    for (int i = 0; i < 6; ++i) {
        ImuWindow w{Mat(kImuChannels, 4), i % 2};
        rng.fill_normal(w.samples.data);
        windows.push_back(std::move(w));
    }

    SECTION("without a tracker the pipeline is encode-then-predict") {
        const auto out = classify_pipeline(enc, nullptr, m, windows, 32, 0.5, 2025);
        REQUIRE(out.size() == windows.size());
        for (std::size_t i = 0; i < windows.size(); ++i) {
            const EmbeddingDistribution e = encode(enc, windows[i]);
            const PredictiveResult direct = predict(m, e, 32, derive_seed(2025, "predict", i));
            REQUIRE(out[i].first.prob_mean == direct.prob_mean);
            REQUIRE(out[i].second.is_ood == (out[i].second.score > 0.5));
        }
    }

    SECTION("with a tracker the output length is unchanged") {
        KalmanConfig tracker;
        const auto out = classify_pipeline(enc, &tracker, m, windows, 32, 0.5, 2025);
        REQUIRE(out.size() == windows.size());
    }
}
