#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "uhar/common.hpp"
#include "uhar/encoder.hpp"
#include "uhar/metrics.hpp"
#include "uhar/nn.hpp"
#include "uhar/rng.hpp"
#include "uhar/tracker.hpp"

namespace uhar {

// 4 Bayesian dense layers, relu hidden, identity output (pre-softmax).
// `kept` lists the latent dimensions the model consumes; the compression
// loop produces models with a reduced set.
struct FcBnnModel {
    std::vector<BayesianDenseLayer> layers;
    std::size_t latent_dim = 0;
    std::size_t num_classes = 0;
    std::vector<std::size_t> kept;

    std::size_t input_dim() const { return 2 * kept.size(); }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.param_count();
        return n;
    }

    std::size_t noise_size() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.noise_size();
        return n;
    }
};

inline FcBnnModel build_fcbnn(std::size_t latent_dim, std::size_t num_classes,
                              std::array<std::size_t, 3> hidden, Rng& rng, double prior_sigma = 1.0,
                              std::vector<std::size_t> kept = {}) {
    FcBnnModel m;
    m.latent_dim = latent_dim;
    m.num_classes = num_classes;
    if (kept.empty()) {
        kept.resize(latent_dim);
        std::iota(kept.begin(), kept.end(), 0);
    }
    for (std::size_t k : kept)
        if (k >= latent_dim) throw ConfigError("build_fcbnn: kept index out of range");
    m.kept = std::move(kept);
    const std::array<std::size_t, 5> dims{m.input_dim(), hidden[0], hidden[1], hidden[2], num_classes};
    for (std::size_t i = 0; i < 4; ++i) {
        const Activation act = (i == 3) ? Activation::Identity : Activation::Relu;
        m.layers.push_back(make_bayesian_dense(dims[i], dims[i + 1], act, prior_sigma, rng));
    }
    return m;
}

// Model input: kept means, then log(1+v) compressed kept variances.
inline Vec embedding_features(const EmbeddingDistribution& d, const std::vector<std::size_t>& kept) {
    Vec f(2 * kept.size());
    for (std::size_t i = 0; i < kept.size(); ++i) {
        f[i] = d.mean[kept[i]];
        f[kept.size() + i] = std::log1p(d.variance[kept[i]]);
    }
    return f;
}

inline Vec embedding_features(const EmbeddingDistribution& d, const FcBnnModel& m) {
    return embedding_features(d, m.kept);
}

namespace detail {

template <typename Model, typename F>
void for_each_posterior(Model& m, F&& f) {
    for (auto& l : m.layers) {
        f(l.weight_posterior);
        f(l.bias_posterior);
    }
}

}  // namespace detail

// flat order: per layer, weight mu, weight rho, bias mu, bias rho
inline Vec fcbnn_flatten_params(const FcBnnModel& m) {
    Vec out;
    out.reserve(m.param_count());
    detail::for_each_posterior(m, [&out](const GaussianPosterior& p) {
        out.insert(out.end(), p.mu.begin(), p.mu.end());
        out.insert(out.end(), p.rho.begin(), p.rho.end());
    });
    return out;
}

inline void fcbnn_set_params(FcBnnModel& m, const Vec& flat) {
    if (flat.size() != m.param_count()) throw Error("fcbnn_set_params: size mismatch");
    std::size_t k = 0;
    detail::for_each_posterior(m, [&flat, &k](GaussianPosterior& p) {
        std::copy_n(flat.begin() + static_cast<long>(k), p.mu.size(), p.mu.begin());
        k += p.mu.size();
        std::copy_n(flat.begin() + static_cast<long>(k), p.rho.size(), p.rho.begin());
        k += p.rho.size();
    });
}

// One stochastic forward pass; noise is one flat draw for the whole network.
inline Vec fcbnn_logits(const FcBnnModel& m, const Vec& features, const Vec& noise,
                        std::vector<BayesianDenseCache>* caches = nullptr) {
    if (noise.size() != m.noise_size()) throw Error("fcbnn_logits: noise size mismatch");
    if (caches) caches->resize(m.layers.size());
    Vec h = features;
    std::size_t off = 0;
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        const auto& l = m.layers[i];
        const Vec nw(noise.begin() + static_cast<long>(off),
                     noise.begin() + static_cast<long>(off + l.in * l.out));
        const Vec nb(noise.begin() + static_cast<long>(off + l.in * l.out),
                     noise.begin() + static_cast<long>(off + l.noise_size()));
        off += l.noise_size();
        h = bayesian_dense_forward(l, h, nw, nb, caches ? &(*caches)[i] : nullptr);
        if (!all_finite(h)) throw NumericError("fcbnn layer " + std::to_string(i) + " non-finite");
    }
    return h;
}

// Mean-weight (deterministic) forward pass.
inline Vec fcbnn_logits_mean(const FcBnnModel& m, const Vec& features) {
    return fcbnn_logits(m, features, Vec(m.noise_size(), 0.0));
}

inline Vec softmax(const Vec& logits) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    Vec p(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        z += p[i];
    }
    for (double& v : p) v /= z;
    return p;
}

inline double nll_from_logits(const Vec& logits, int label) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double v : logits) z += std::exp(v - mx);
    return std::log(z) + mx - logits[static_cast<std::size_t>(label)];
}

struct ElboParts {
    double kl_term = 0.0;
    double nll_term = 0.0;
    double total = 0.0;
};

inline double fcbnn_kl(const FcBnnModel& m) {
    double kl = 0.0;
    for (const auto& l : m.layers) {
        kl += kl_gaussian_to_prior(l.weight_posterior, l.prior_sigma);
        kl += kl_gaussian_to_prior(l.bias_posterior, l.prior_sigma);
    }
    return kl;
}

// Variational objective: layer-wise analytic KL scaled by kl_scale plus the
// batch-summed categorical NLL averaged over weight samples. `noise` holds
// n_weight_samples stacked network draws; grads (optional) come back flat in
// the fcbnn_flatten_params order.
inline ElboParts elbo_loss_and_grad(const FcBnnModel& m, const std::vector<const Vec*>& features,
                                    const std::vector<int>& labels, double kl_scale, const Vec& noise,
                                    Vec* flat_grad) {
    if (features.size() != labels.size() || features.empty())
        throw Error("elbo: batch size mismatch or empty");
    if (noise.size() % m.noise_size() != 0 || noise.empty()) throw Error("elbo: bad noise size");
    const std::size_t S = noise.size() / m.noise_size();
    for (int y : labels)
        if (y < 0 || y >= static_cast<int>(m.num_classes)) throw Error("elbo: label out of range");

    ElboParts parts;
    parts.kl_term = fcbnn_kl(m) * kl_scale;

    std::vector<BayesianDenseGrad> grads(m.layers.size());
    std::vector<BayesianDenseCache> caches;
    const double inv_s = 1.0 / static_cast<double>(S);

    for (std::size_t s = 0; s < S; ++s) {
        const Vec draw(noise.begin() + static_cast<long>(s * m.noise_size()),
                       noise.begin() + static_cast<long>((s + 1) * m.noise_size()));
        for (std::size_t i = 0; i < features.size(); ++i) {
            const Vec logits = fcbnn_logits(m, *features[i], draw, flat_grad ? &caches : nullptr);
            parts.nll_term += inv_s * nll_from_logits(logits, labels[i]);
            if (!flat_grad) continue;
            Vec dlogits = softmax(logits);
            dlogits[static_cast<std::size_t>(labels[i])] -= 1.0;
            for (double& g : dlogits) g *= inv_s;
            Vec dh = std::move(dlogits);
            for (std::size_t l = m.layers.size(); l-- > 0;)
                dh = bayesian_dense_backward(m.layers[l], caches[l], dh, grads[l]);
        }
    }
    parts.total = parts.kl_term + parts.nll_term;
    if (!std::isfinite(parts.total)) throw NumericError("elbo loss non-finite");
    if (!flat_grad) return parts;

    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        grads[l].ensure_shape(m.layers[l]);
        kl_gaussian_to_prior_backward(m.layers[l].weight_posterior, m.layers[l].prior_sigma, kl_scale,
                                      grads[l].dmu_w, grads[l].drho_w);
        kl_gaussian_to_prior_backward(m.layers[l].bias_posterior, m.layers[l].prior_sigma, kl_scale,
                                      grads[l].dmu_b, grads[l].drho_b);
    }
    flat_grad->clear();
    flat_grad->reserve(m.param_count());
    for (const auto& g : grads) {
        flat_grad->insert(flat_grad->end(), g.dmu_w.begin(), g.dmu_w.end());
        flat_grad->insert(flat_grad->end(), g.drho_w.begin(), g.drho_w.end());
        flat_grad->insert(flat_grad->end(), g.dmu_b.begin(), g.dmu_b.end());
        flat_grad->insert(flat_grad->end(), g.drho_b.begin(), g.drho_b.end());
    }
    if (!all_finite(*flat_grad)) throw NumericError("elbo gradient non-finite");
    return parts;
}

inline double elbo_loss(const FcBnnModel& m, const std::vector<const Vec*>& features,
                        const std::vector<int>& labels, std::size_t n_weight_samples, double kl_scale,
                        Rng& rng) {
    if (n_weight_samples < 1) throw Error("elbo: need at least one weight sample");
    Vec noise = rng.normal_vec(n_weight_samples * m.noise_size());
    return elbo_loss_and_grad(m, features, labels, kl_scale, noise, nullptr).total;
}

// ---------------------------------------------------------------------------
// datasets of embedding pairs

struct EmbeddingDataset {
    std::vector<EmbeddingDistribution> items;
    std::vector<int> labels;

    std::size_t size() const { return items.size(); }
};

struct BnnTrainConfig {
    std::size_t epochs = 40;
    std::size_t batch_size = 32;
    double learning_rate = 1e-3;
    std::size_t n_weight_samples = 1;
};

struct BnnTraceRow {
    std::size_t epoch = 0;
    double loss = 0.0;
    double val_accuracy = 0.0;
};

// Minibatch Adam on the variational objective; KL scaled by 1/num_batches.
// Validation accuracy per epoch uses the mean-weight network.
inline std::vector<BnnTraceRow> train_fcbnn(FcBnnModel& m, const EmbeddingDataset& train,
                                            const EmbeddingDataset& val, const BnnTrainConfig& cfg,
                                            std::uint64_t seed) {
    if (train.size() == 0) throw Error("train_fcbnn: empty training set");
    std::vector<Vec> feats(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) feats[i] = embedding_features(train.items[i], m);
    std::vector<Vec> val_feats(val.size());
    for (std::size_t i = 0; i < val.size(); ++i) val_feats[i] = embedding_features(val.items[i], m);

    const std::size_t nbatches = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
    const double kl_scale = 1.0 / static_cast<double>(nbatches);

    Vec params = fcbnn_flatten_params(m);
    AdamState adam;
    adam.lr = cfg.learning_rate;
    std::vector<BnnTraceRow> trace;

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        Rng rng(derive_seed(seed, "bnn-epoch", e));
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t b = 0; b < nbatches; ++b) {
            std::vector<const Vec*> bf;
            std::vector<int> bl;
            for (std::size_t i = b * cfg.batch_size; i < std::min((b + 1) * cfg.batch_size, train.size());
                 ++i) {
                bf.push_back(&feats[order[i]]);
                bl.push_back(train.labels[order[i]]);
            }
            Vec noise = rng.normal_vec(cfg.n_weight_samples * m.noise_size());
            Vec grad;
            epoch_loss += elbo_loss_and_grad(m, bf, bl, kl_scale, noise, &grad).total;
            optimizer_step(adam, params, grad);
            fcbnn_set_params(m, params);
        }
        BnnTraceRow row{e, epoch_loss / static_cast<double>(nbatches), 0.0};
        if (val.size() > 0) {
            std::vector<int> pred(val.size());
            for (std::size_t i = 0; i < val.size(); ++i) {
                const Vec logits = fcbnn_logits_mean(m, val_feats[i]);
                pred[i] = static_cast<int>(
                    std::max_element(logits.begin(), logits.end()) - logits.begin());
            }
            row.val_accuracy = accuracy(pred, val.labels);
        }
        trace.push_back(row);
    }
    return trace;
}

// ---------------------------------------------------------------------------
// prediction with uncertainty

struct PredictiveResult {
    Vec prob_mean;
    Vec prob_std;
    double entropy = 0.0;
    std::size_t samples_used = 0;
};

// T posterior draws; prob_std is the per-class population std over draws,
// entropy the natural-log entropy of the mean distribution.
inline PredictiveResult predict(const FcBnnModel& m, const EmbeddingDistribution& d, std::size_t T,
                                std::uint64_t seed) {
    if (T < 2) throw Error("predict: need T >= 2 samples");
    const Vec features = embedding_features(d, m);
    const std::size_t K = m.num_classes;
    std::vector<Vec> draws(T);
    Rng rng(seed);
    for (std::size_t t = 0; t < T; ++t)
        draws[t] = softmax(fcbnn_logits(m, features, rng.normal_vec(m.noise_size())));

    PredictiveResult r;
    r.samples_used = T;
    r.prob_mean.assign(K, 0.0);
    r.prob_std.assign(K, 0.0);
    const double invT = 1.0 / static_cast<double>(T);
    for (const auto& p : draws)
        for (std::size_t k = 0; k < K; ++k) r.prob_mean[k] += p[k] * invT;
    for (const auto& p : draws)
        for (std::size_t k = 0; k < K; ++k) {
            const double dev = p[k] - r.prob_mean[k];
            r.prob_std[k] += dev * dev * invT;
        }
    for (std::size_t k = 0; k < K; ++k) r.prob_std[k] = std::sqrt(r.prob_std[k]);
    double h = 0.0;
    for (double p : r.prob_mean)
        if (p > 0.0) h -= p * std::log(p);
    r.entropy = h;
    return r;
}

inline int argmax_class(const PredictiveResult& r) {
    return static_cast<int>(std::max_element(r.prob_mean.begin(), r.prob_mean.end()) -
                            r.prob_mean.begin());
}

// Mean per-class predictive std; higher means more alien.
inline double ood_score(const PredictiveResult& r) {
    double s = 0.0;
    for (double v : r.prob_std) s += v;
    return s / static_cast<double>(r.prob_std.size());
}

// 99th percentile of known-class validation scores.
inline double calibrate_ood_threshold(const std::vector<double>& validation_scores) {
    return percentile(validation_scores, 0.99);
}

struct OodDecision {
    double score = 0.0;
    double threshold = 0.0;
    bool is_ood = false;
};

// With a tracker config this is the full framework; without it the encoder
// output feeds the classifier directly.
inline std::vector<std::pair<PredictiveResult, OodDecision>> classify_pipeline(
    const EncoderModel& enc, const KalmanConfig* tracker_cfg, const FcBnnModel& m,
    const std::vector<ImuWindow>& windows, std::size_t T, double ood_threshold, std::uint64_t seed) {
    std::vector<EmbeddingDistribution> embeddings;
    embeddings.reserve(windows.size());
    for (const auto& w : windows) embeddings.push_back(encode(enc, w));
    if (tracker_cfg) embeddings = track_stream(embeddings, *tracker_cfg);

    std::vector<std::pair<PredictiveResult, OodDecision>> out;
    out.reserve(windows.size());
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
        PredictiveResult r = predict(m, embeddings[i], T, derive_seed(seed, "predict", i));
        const double score = ood_score(r);
        out.push_back({std::move(r), {score, ood_threshold, score > ood_threshold}});
    }
    return out;
}

// ---------------------------------------------------------------------------
// learned-sigma diagnostics

struct LayerSigmaStats {
    std::size_t layer = 0;
    Vec bin_edges;                    // bins+1 edges
    std::vector<std::size_t> counts;  // sums to the layer's sigma count
    double dispersion = 0.0;          // population std of sigma values
    double min_sigma = 0.0, max_sigma = 0.0;
    std::size_t n = 0;
};

inline std::vector<LayerSigmaStats> weight_variability_summary(const FcBnnModel& m,
                                                               std::size_t bins = 30) {
    std::vector<LayerSigmaStats> out;
    for (std::size_t li = 0; li < m.layers.size(); ++li) {
        const auto& l = m.layers[li];
        Vec sig = posterior_sigma(l.weight_posterior);
        const Vec bsig = posterior_sigma(l.bias_posterior);
        sig.insert(sig.end(), bsig.begin(), bsig.end());

        LayerSigmaStats st;
        st.layer = li;
        st.n = sig.size();
        st.min_sigma = *std::min_element(sig.begin(), sig.end());
        st.max_sigma = *std::max_element(sig.begin(), sig.end());
        double mean = 0.0;
        for (double s : sig) mean += s;
        mean /= static_cast<double>(sig.size());
        double var = 0.0;
        for (double s : sig) var += (s - mean) * (s - mean);
        st.dispersion = std::sqrt(var / static_cast<double>(sig.size()));

        const double lo = st.min_sigma;
        const double width = std::max(st.max_sigma - st.min_sigma, 1e-300);
        st.bin_edges.resize(bins + 1);
        for (std::size_t b = 0; b <= bins; ++b)
            st.bin_edges[b] = lo + width * static_cast<double>(b) / static_cast<double>(bins);
        st.counts.assign(bins, 0);
        for (double s : sig) {
            auto b = static_cast<std::size_t>((s - lo) / width * static_cast<double>(bins));
            if (b >= bins) b = bins - 1;
            ++st.counts[b];
        }
        out.push_back(std::move(st));
    }
    return out;
}

}  // namespace uhar
