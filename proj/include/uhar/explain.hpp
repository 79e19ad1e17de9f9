#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "uhar/bnn.hpp"
#include "uhar/common.hpp"
#include "uhar/linalg.hpp"
#include "uhar/metrics.hpp"
#include "uhar/rng.hpp"

namespace uhar {

// model under explanation: feature vector -> K outputs
using ModelFn = std::function<Vec(const Vec&)>;

// Per-feature, per-class attributions. Efficiency holds by construction:
// column sums of phi equal output - base_value.
struct ShapExplanation {
    Vec base_value;  // K
    Mat phi;         // M x K
    Vec output;      // model output at x, K
    std::vector<std::string> feature_names;
};

// Shapley kernel weight for coalition size s of M features.
inline double shapley_kernel_weight(std::size_t M, std::size_t s) {
    if (s == 0 || s >= M)
        throw ConfigError("shapley kernel: full and empty coalitions are constraints, not samples");
    double binom = 1.0;
    for (std::size_t i = 1; i <= s; ++i)
        binom *= static_cast<double>(M - i + 1) / static_cast<double>(i);
    return static_cast<double>(M - 1) /
           (binom * static_cast<double>(s) * static_cast<double>(M - s));
}

struct ShapConfig {
    std::size_t n_coalitions = 2048;       // used when exhaustive enumeration is too large
    std::size_t exhaustive_limit = 4096;   // enumerate all coalitions when 2^M <= this
    std::uint64_t seed = 0;
    // Feature groups: masking feature i toggles all raw indices in groups[i].
    // Empty means one group per raw index.
    std::vector<std::vector<std::size_t>> groups;
};

namespace detail {

inline std::vector<std::vector<std::size_t>> identity_groups(std::size_t n) {
    std::vector<std::vector<std::size_t>> g(n);
    for (std::size_t i = 0; i < n; ++i) g[i] = {i};
    return g;
}

inline Vec background_mean(const std::vector<Vec>& background) {
    if (background.empty()) throw Error("shap: background must be non-empty");
    Vec mean(background.front().size(), 0.0);
    for (const auto& b : background)
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += b[i];
    for (double& v : mean) v /= static_cast<double>(background.size());
    return mean;
}

// Assemble the model input for a coalition mask over feature groups.
inline Vec masked_input(const Vec& x, const Vec& bg, const std::vector<std::vector<std::size_t>>& groups,
                        std::uint64_t mask) {
    Vec in = x;
    for (std::size_t g = 0; g < groups.size(); ++g)
        if (!(mask >> g & 1ull))
            for (std::size_t idx : groups[g]) in[idx] = bg[idx];
    return in;
}

}  // namespace detail

// KernelSHAP: weighted least squares over coalitions with the efficiency
// constraint imposed exactly by eliminating the last feature. Coalitions are
// enumerated exhaustively when 2^M <= exhaustive_limit and otherwise sampled
// with sizes drawn proportional to total kernel mass per size (uniform
// subsets within a size, so sampled rows carry unit weight).
inline ShapExplanation kernel_shap(const ModelFn& model_fn, const Vec& x,
                                   const std::vector<Vec>& background, const ShapConfig& cfg = {}) {
    const auto groups = cfg.groups.empty() ? detail::identity_groups(x.size()) : cfg.groups;
    const std::size_t M = groups.size();
    if (M == 0) throw Error("kernel_shap: need at least one feature");
    if (M > 62) throw Error("kernel_shap: too many features for mask enumeration");
    const Vec bg = detail::background_mean(background);

    ShapExplanation ex;
    ex.output = model_fn(x);
    ex.base_value = model_fn(detail::masked_input(x, bg, groups, 0));
    if (!all_finite(ex.output) || !all_finite(ex.base_value))
        throw NumericError("kernel_shap: model output non-finite");
    const std::size_t K = ex.output.size();
    ex.phi = Mat(M, K);
    ex.feature_names.resize(M);
    for (std::size_t i = 0; i < M; ++i) ex.feature_names[i] = "f" + std::to_string(i);

    if (M == 1) {
        for (std::size_t k = 0; k < K; ++k) ex.phi(0, k) = ex.output[k] - ex.base_value[k];
        return ex;
    }

    // collect (mask, weight) rows
    std::map<std::uint64_t, double> rows;
    const bool exhaustive = M < 63 && (1ull << M) <= cfg.exhaustive_limit;
    if (exhaustive) {
        for (std::uint64_t mask = 1; mask + 1 < (1ull << M); ++mask)
            rows[mask] = shapley_kernel_weight(M, static_cast<std::size_t>(std::popcount(mask)));
    } else {
        // per-size total kernel mass: binom(M,s) * w(M,s) = (M-1)/(s(M-s))
        Vec size_mass(M, 0.0);
        double total = 0.0;
        for (std::size_t s = 1; s < M; ++s) {
            size_mass[s] = static_cast<double>(M - 1) /
                           (static_cast<double>(s) * static_cast<double>(M - s));
            total += size_mass[s];
        }
        Rng rng(derive_seed(cfg.seed, "kernel-shap"));
        std::vector<std::size_t> perm(M);
        std::iota(perm.begin(), perm.end(), 0);
        for (std::size_t c = 0; c < cfg.n_coalitions; ++c) {
            double u = rng.uniform() * total;
            std::size_t s = 1;
            while (s + 1 < M && u > size_mass[s]) {
                u -= size_mass[s];
                ++s;
            }
            rng.shuffle(perm);
            std::uint64_t mask = 0;
            for (std::size_t i = 0; i < s; ++i) mask |= 1ull << perm[i];
            rows[mask] += 1.0;
        }
    }

    // residual targets per class and the reduced design matrix
    const std::size_t R = rows.size();
    Mat design(R, M - 1);
    Mat target(R, K);
    Vec weight(R);
    std::size_t r = 0;
    for (const auto& [mask, w] : rows) {
        const Vec y = model_fn(detail::masked_input(x, bg, groups, mask));
        if (!all_finite(y)) throw NumericError("kernel_shap: model output non-finite");
        const double last = (mask >> (M - 1)) & 1ull ? 1.0 : 0.0;
        for (std::size_t i = 0; i + 1 < M; ++i)
            design(r, i) = ((mask >> i & 1ull) ? 1.0 : 0.0) - last;
        for (std::size_t k = 0; k < K; ++k)
            target(r, k) = y[k] - ex.base_value[k] - last * (ex.output[k] - ex.base_value[k]);
        weight[r] = w;
        ++r;
    }

    // normal equations A^T W A phi = A^T W t, shared across classes
    Mat ata(M - 1, M - 1);
    Mat atb(M - 1, K);
    for (std::size_t c = 0; c < R; ++c) {
        for (std::size_t i = 0; i + 1 < M; ++i) {
            const double wi = weight[c] * design(c, i);
            if (wi == 0.0) continue;
            for (std::size_t j = 0; j + 1 < M; ++j) ata(i, j) += wi * design(c, j);
            for (std::size_t k = 0; k < K; ++k) atb(i, k) += wi * target(c, k);
        }
    }
    Mat l(0, 0);
    try {
        l = cholesky_jittered(ata, 1e-10);
    } catch (const NumericError&) {
        throw NumericError("kernel_shap: degenerate regression system");
    }
    const Mat sol = cholesky_solve(l, atb);
    for (std::size_t k = 0; k < K; ++k) {
        double sum = 0.0;
        for (std::size_t i = 0; i + 1 < M; ++i) {
            ex.phi(i, k) = sol(i, k);
            sum += sol(i, k);
        }
        ex.phi(M - 1, k) = ex.output[k] - ex.base_value[k] - sum;
    }
    return ex;
}

// Brute-force Shapley values over all subsets; oracle for kernel_shap.
inline Mat exact_shapley(const ModelFn& model_fn, const Vec& x, const std::vector<Vec>& background,
                         const std::vector<std::vector<std::size_t>>& groups_in = {}) {
    const auto groups = groups_in.empty() ? detail::identity_groups(x.size()) : groups_in;
    const std::size_t M = groups.size();
    if (M > 12) throw Error("exact_shapley: too many features for brute force");
    const Vec bg = detail::background_mean(background);

    const std::size_t n_masks = 1ull << M;
    std::vector<Vec> value(n_masks);
    for (std::uint64_t mask = 0; mask < n_masks; ++mask)
        value[mask] = model_fn(detail::masked_input(x, bg, groups, mask));
    const std::size_t K = value[0].size();

    Vec fact(M + 1, 1.0);
    for (std::size_t i = 1; i <= M; ++i) fact[i] = fact[i - 1] * static_cast<double>(i);

    Mat phi(M, K);
    for (std::size_t i = 0; i < M; ++i) {
        for (std::uint64_t mask = 0; mask < n_masks; ++mask) {
            if (mask >> i & 1ull) continue;
            const auto s = static_cast<std::size_t>(std::popcount(mask));
            const double w = fact[s] * fact[M - s - 1] / fact[M];
            const Vec& with = value[mask | (1ull << i)];
            const Vec& without = value[mask];
            for (std::size_t k = 0; k < K; ++k) phi(i, k) += w * (with[k] - without[k]);
        }
    }
    return phi;
}

// ---------------------------------------------------------------------------
// class similarity

inline double pearson(const Vec& u, const Vec& v) {
    if (u.size() != v.size() || u.size() < 2) throw Error("pearson: need two vectors of length >= 2");
    const double n = static_cast<double>(u.size());
    double mu = 0.0, mv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        mu += u[i];
        mv += v[i];
    }
    mu /= n;
    mv /= n;
    double suv = 0.0, su = 0.0, sv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double du = u[i] - mu, dv = v[i] - mv;
        suv += du * dv;
        su += du * du;
        sv += dv * dv;
    }
    if (su < 1e-300 || sv < 1e-300) throw NumericError("pearson: undefined for constant vector");
    return std::clamp(suv / std::sqrt(su * sv), -1.0, 1.0);
}

struct SimilarityMatrix {
    std::string mode;  // which embedding path produced the vectors
    Vec r;             // one coefficient per known class
};

inline SimilarityMatrix class_similarity(const std::vector<Vec>& known_class_means,
                                         const Vec& unknown_mean, const std::string& mode) {
    SimilarityMatrix s;
    s.mode = mode;
    s.r.reserve(known_class_means.size());
    for (const auto& km : known_class_means) s.r.push_back(pearson(km, unknown_mean));
    return s;
}

// ---------------------------------------------------------------------------
// global summaries for ranking / beeswarm / force plots

struct GlobalShapSummary {
    Vec mean_abs_phi;                  // per feature, over samples and classes
    std::vector<std::size_t> ranking;  // feature indices, most important first

    struct BeeswarmPoint {
        std::size_t sample = 0, feature = 0;
        double value = 0.0, phi = 0.0;  // phi of the sample's argmax class
    };
    std::vector<BeeswarmPoint> points;

    struct ForceRow {
        std::size_t sample = 0;
        std::size_t cls = 0;  // argmax class
        double base = 0.0, output = 0.0;
        Vec contributions;
    };
    std::vector<ForceRow> force;
};

// feature_values[s] supplies the displayed value per feature of sample s.
inline GlobalShapSummary global_shap_summary(const std::vector<ShapExplanation>& explanations,
                                             const std::vector<Vec>& feature_values) {
    if (explanations.empty()) throw Error("global_shap_summary: no explanations");
    if (feature_values.size() != explanations.size())
        throw Error("global_shap_summary: feature value rows must match explanations");
    const std::size_t M = explanations.front().phi.rows;
    const std::size_t K = explanations.front().phi.cols;

    GlobalShapSummary g;
    g.mean_abs_phi.assign(M, 0.0);
    for (const auto& ex : explanations)
        for (std::size_t i = 0; i < M; ++i)
            for (std::size_t k = 0; k < K; ++k) g.mean_abs_phi[i] += std::abs(ex.phi(i, k));
    for (double& v : g.mean_abs_phi) v /= static_cast<double>(explanations.size() * K);

    g.ranking.resize(M);
    std::iota(g.ranking.begin(), g.ranking.end(), 0);
    std::stable_sort(g.ranking.begin(), g.ranking.end(), [&g](std::size_t a, std::size_t b) {
        return g.mean_abs_phi[a] > g.mean_abs_phi[b];
    });

    for (std::size_t s = 0; s < explanations.size(); ++s) {
        const auto& ex = explanations[s];
        const auto cls = static_cast<std::size_t>(
            std::max_element(ex.output.begin(), ex.output.end()) - ex.output.begin());
        GlobalShapSummary::ForceRow row{s, cls, ex.base_value[cls], ex.output[cls], Vec(M)};
        for (std::size_t i = 0; i < M; ++i) {
            row.contributions[i] = ex.phi(i, cls);
            g.points.push_back({s, i, feature_values[s][i], ex.phi(i, cls)});
        }
        g.force.push_back(std::move(row));
    }
    return g;
}

// ---------------------------------------------------------------------------
// closed-loop compression

struct CompressionPolicy {
    double keep_fraction = 0.2;        // keep features with mean|phi| >= fraction * max
    double accuracy_tolerance = 0.02;  // band around baseline validation accuracy
    std::size_t min_hidden = 4;
    std::size_t explain_samples = 32;
    std::size_t n_coalitions = 1024;
    std::size_t model_fn_samples = 50;

    void validate() const {
        if (!(keep_fraction > 0.0) || keep_fraction > 1.0)
            throw ConfigError("compression: keep_fraction must be in (0, 1]");
        if (accuracy_tolerance < 0.0) throw ConfigError("compression: accuracy tolerance must be >= 0");
        if (min_hidden < 1) throw ConfigError("compression: min_hidden must be >= 1");
        if (explain_samples < 1 || n_coalitions < 1 || model_fn_samples < 1)
            throw ConfigError("compression: sample counts must be >= 1");
    }
};

struct CompressionIteration {
    std::vector<std::size_t> kept;
    std::array<std::size_t, 3> hidden{};
    std::size_t param_count = 0;
    double val_accuracy = 0.0;
    bool accepted = true;
};

struct CompressionReport {
    std::vector<CompressionIteration> iterations;  // [0] is the baseline
    std::string stop_reason;
    FcBnnModel final_model;  // last accepted model
};

namespace detail {

inline double mean_weight_accuracy(const FcBnnModel& m, const EmbeddingDataset& data) {
    std::vector<int> pred(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const Vec logits = fcbnn_logits_mean(m, embedding_features(data.items[i], m));
        pred[i] = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    }
    return accuracy(pred, data.labels);
}

// prob_mean under a fixed set of posterior draws: a deterministic function
// suitable for the SHAP regression
inline ModelFn deterministic_model_fn(const FcBnnModel& m, std::size_t T, std::uint64_t seed) {
    auto draws = std::make_shared<std::vector<Vec>>();
    Rng rng(derive_seed(seed, "shap-model"));
    for (std::size_t t = 0; t < T; ++t) draws->push_back(rng.normal_vec(m.noise_size()));
    const FcBnnModel model = m;  // frozen copy
    return [model, draws](const Vec& features) {
        Vec mean(model.num_classes, 0.0);
        for (const auto& noise : *draws) {
            const Vec p = softmax(fcbnn_logits(model, features, noise));
            for (std::size_t k = 0; k < p.size(); ++k) mean[k] += p[k];
        }
        for (double& v : mean) v /= static_cast<double>(draws->size());
        return mean;
    };
}

inline std::array<std::size_t, 3> model_hidden(const FcBnnModel& m) {
    return {m.layers[0].out, m.layers[1].out, m.layers[2].out};
}

}  // namespace detail

// Iterative SHAP-thresholded feature selection: explain the current model,
// drop latent dimensions whose mean |phi| falls below keep_fraction of the
// maximum, shrink hidden widths by the kept ratio, retrain, and continue
// while validation accuracy stays within tolerance of the baseline.
inline CompressionReport compress_loop(const EmbeddingDataset& train, const EmbeddingDataset& val,
                                       const FcBnnModel& baseline, const CompressionPolicy& policy,
                                       const BnnTrainConfig& train_cfg, std::uint64_t seed) {
    policy.validate();
    if (val.size() == 0) throw Error("compress_loop: empty validation set");
    CompressionReport report;
    const double base_acc = detail::mean_weight_accuracy(baseline, val);
    const auto base_hidden = detail::model_hidden(baseline);
    report.iterations.push_back(
        {baseline.kept, base_hidden, baseline.param_count(), base_acc, true});
    report.final_model = baseline;

    const FcBnnModel* current = &baseline;
    FcBnnModel candidate;
    const std::size_t base_kept = baseline.kept.size();

    for (std::size_t iter = 1; iter <= baseline.latent_dim; ++iter) {
        const std::vector<std::size_t>& kept = current->kept;
        const std::size_t M = kept.size();

        // explain a deterministic validation subset
        const ModelFn fn =
            detail::deterministic_model_fn(*current, policy.model_fn_samples, derive_seed(seed, "fn", iter));
        const std::size_t n_explain = std::min(policy.explain_samples, val.size());
        const std::size_t stride = std::max<std::size_t>(1, val.size() / n_explain);

        std::vector<Vec> train_features;
        train_features.reserve(train.size());
        for (const auto& item : train.items) train_features.push_back(embedding_features(item, *current));
        const std::vector<Vec> background{detail::background_mean(train_features)};

        ShapConfig shap_cfg;
        shap_cfg.n_coalitions = policy.n_coalitions;
        shap_cfg.seed = derive_seed(seed, "coalitions", iter);
        shap_cfg.groups.resize(M);
        for (std::size_t i = 0; i < M; ++i) shap_cfg.groups[i] = {i, M + i};

        Vec mean_abs(M, 0.0);
        std::size_t n_done = 0;
        for (std::size_t s = 0; s < val.size() && n_done < n_explain; s += stride, ++n_done) {
            const ShapExplanation ex =
                kernel_shap(fn, embedding_features(val.items[s], *current), background, shap_cfg);
            for (std::size_t i = 0; i < M; ++i)
                for (std::size_t k = 0; k < ex.phi.cols; ++k) mean_abs[i] += std::abs(ex.phi(i, k));
        }
        for (double& v : mean_abs) v /= static_cast<double>(n_done * current->num_classes);

        const double max_shap = *std::max_element(mean_abs.begin(), mean_abs.end());
        const double threshold = policy.keep_fraction * max_shap;
        std::vector<std::size_t> keep;
        for (std::size_t i = 0; i < M; ++i)
            if (mean_abs[i] >= threshold) keep.push_back(kept[i]);

        if (keep.empty()) {
            report.stop_reason = "would drop all features";
            break;
        }
        if (keep.size() == M) {
            report.stop_reason = "no features below threshold";
            break;
        }

        const double ratio = static_cast<double>(keep.size()) / static_cast<double>(base_kept);
        std::array<std::size_t, 3> hidden{};
        for (std::size_t i = 0; i < 3; ++i)
            hidden[i] = std::max(policy.min_hidden,
                                 static_cast<std::size_t>(std::lround(ratio * static_cast<double>(base_hidden[i]))));

        Rng init_rng(derive_seed(seed, "compress-init", iter));
        candidate = build_fcbnn(baseline.latent_dim, baseline.num_classes, hidden, init_rng,
                                baseline.layers[0].prior_sigma, keep);
        train_fcbnn(candidate, train, val, train_cfg, derive_seed(seed, "compress-train", iter));
        const double acc = detail::mean_weight_accuracy(candidate, val);
        const bool ok = std::abs(acc - base_acc) <= policy.accuracy_tolerance;
        report.iterations.push_back({keep, hidden, candidate.param_count(), acc, ok});
        if (!ok) {
            report.stop_reason = "validation accuracy left tolerance band";
            break;
        }
        report.final_model = candidate;
        current = &report.final_model;
    }
    if (report.stop_reason.empty()) report.stop_reason = "single feature reached";
    return report;
}

}  // namespace uhar
