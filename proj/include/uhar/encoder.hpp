#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "uhar/common.hpp"
#include "uhar/data.hpp"
#include "uhar/nn.hpp"
#include "uhar/rng.hpp"

namespace uhar {

// Diagonal-Gaussian latent: mean is the embedding, variance its uncertainty.
struct EmbeddingDistribution {
    Vec mean;
    Vec variance;
};

enum class MetricMode { Triplet, Quadruplet };
enum class MiningMode { Hard, SemiHard };

struct MetricConfig {
    MetricMode mode = MetricMode::Triplet;
    double alpha_margin = 0.5;
    double alpha1 = 0.5;
    double alpha2 = 0.25;
    MiningMode mining = MiningMode::SemiHard;

    void validate() const {
        if (!(alpha_margin > 0.0) || !(alpha1 > 0.0) || !(alpha2 > 0.0))
            throw ConfigError("metric config: margins must be positive");
    }
};

// log-variance head output is clamped before exp; the variance clamp is the
// contract-level bound.
inline constexpr double kLogVarMin = -18.0;
inline constexpr double kLogVarMax = 9.0;
inline constexpr double kVarMin = 1e-8;
inline constexpr double kVarMax = 1e4;

struct EncoderModel {
    std::vector<DenseLayer> trunk;   // shared by both heads
    DenseLayer mean_head;
    DenseLayer logvar_head;
    std::vector<DenseLayer> decoder;
    std::size_t input_dim = 0;
    std::size_t latent_dim = 0;

    std::size_t param_count() const {
        std::size_t n = 0;
        auto add = [&n](const DenseLayer& l) { n += l.weights.size() + l.bias.size(); };
        for (const auto& l : trunk) add(l);
        add(mean_head);
        add(logvar_head);
        for (const auto& l : decoder) add(l);
        return n;
    }
};

namespace detail {

template <typename Model, typename F>
void for_each_encoder_layer(Model& m, F&& f) {
    for (auto& l : m.trunk) f(l);
    f(m.mean_head);
    f(m.logvar_head);
    for (auto& l : m.decoder) f(l);
}

}  // namespace detail

inline Vec encoder_flatten_params(const EncoderModel& m) {
    Vec out;
    out.reserve(m.param_count());
    detail::for_each_encoder_layer(m, [&out](const DenseLayer& l) {
        out.insert(out.end(), l.weights.data.begin(), l.weights.data.end());
        out.insert(out.end(), l.bias.begin(), l.bias.end());
    });
    return out;
}

inline void encoder_set_params(EncoderModel& m, const Vec& flat) {
    if (flat.size() != m.param_count()) throw Error("encoder_set_params: size mismatch");
    std::size_t k = 0;
    detail::for_each_encoder_layer(m, [&flat, &k](DenseLayer& l) {
        std::copy_n(flat.begin() + static_cast<long>(k), l.weights.size(), l.weights.data.begin());
        k += l.weights.size();
        std::copy_n(flat.begin() + static_cast<long>(k), l.bias.size(), l.bias.begin());
        k += l.bias.size();
    });
}

// trunk widths default {128, 64}; heads are linear, decoder mirrors the trunk.
inline EncoderModel build_encoder(std::size_t input_dim, std::size_t latent_dim,
                                  std::vector<std::size_t> trunk_widths, Activation act, Rng& rng) {
    if (trunk_widths.empty()) throw ConfigError("build_encoder: need at least one trunk layer");
    EncoderModel m;
    m.input_dim = input_dim;
    m.latent_dim = latent_dim;
    std::size_t prev = input_dim;
    for (std::size_t w : trunk_widths) {
        m.trunk.push_back(make_dense(prev, w, act, rng));
        prev = w;
    }
    m.mean_head = make_dense(prev, latent_dim, Activation::Identity, rng);
    m.logvar_head = make_dense(prev, latent_dim, Activation::Identity, rng);
    // start the latent nearly deterministic so reconstruction gradients can
    // reach the encoder before the KL term inflates the variance
    std::fill(m.logvar_head.bias.begin(), m.logvar_head.bias.end(), -4.0);
    std::size_t dprev = latent_dim;
    for (std::size_t i = trunk_widths.size(); i-- > 0;) {
        m.decoder.push_back(make_dense(dprev, trunk_widths[i], act, rng));
        dprev = trunk_widths[i];
    }
    m.decoder.push_back(make_dense(dprev, input_dim, Activation::Identity, rng));
    return m;
}

inline Vec flatten_window(const ImuWindow& w) { return w.samples.data; }

inline EmbeddingDistribution encode(const EncoderModel& m, const ImuWindow& window) {
    Vec h = flatten_window(window);
    if (h.size() != m.input_dim) throw Error("encode: window shape does not match model");
    for (const auto& l : m.trunk) h = dense_forward(l, h);
    EmbeddingDistribution d;
    d.mean = dense_forward(m.mean_head, h);
    Vec logvar = dense_forward(m.logvar_head, h);
    d.variance.resize(m.latent_dim);
    for (std::size_t i = 0; i < m.latent_dim; ++i) {
        const double lv = std::clamp(logvar[i], kLogVarMin, kLogVarMax);
        d.variance[i] = std::clamp(std::exp(lv), kVarMin, kVarMax);
    }
    return d;
}

// z = mean + sqrt(variance) * eps
inline Vec reparameterized_latent(const EmbeddingDistribution& d, const Vec& noise) {
    Vec z(d.mean.size());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = d.mean[i] + std::sqrt(d.variance[i]) * noise[i];
    return z;
}

// ---------------------------------------------------------------------------
// losses

inline double triplet_loss(const Vec& za, const Vec& zp, const Vec& zn, double margin) {
    return std::max(dist_sq(za, zp) - dist_sq(za, zn) + margin, 0.0);
}

// Adds scale * d(loss)/dz into each gradient; returns the loss.
inline double triplet_loss_grad(const Vec& za, const Vec& zp, const Vec& zn, double margin,
                                double scale, Vec& dza, Vec& dzp, Vec& dzn) {
    const double arg = dist_sq(za, zp) - dist_sq(za, zn) + margin;
    if (arg <= 0.0) return 0.0;
    for (std::size_t i = 0; i < za.size(); ++i) {
        dza[i] += scale * 2.0 * (zn[i] - zp[i]);
        dzp[i] += scale * 2.0 * (zp[i] - za[i]);
        dzn[i] += scale * 2.0 * (za[i] - zn[i]);
    }
    return arg;
}

// Two hinge terms: the usual anchor/positive/negative plus a second negative
// pair (l, k) from two classes distinct from the anchor class.
inline double quadruplet_loss(const Vec& zi, const Vec& zj, const Vec& zk, const Vec& zl,
                              double alpha1, double alpha2) {
    const double dij = dist_sq(zi, zj);
    const double t1 = std::max(dij - dist_sq(zi, zk) + alpha1, 0.0);
    const double t2 = std::max(dij - dist_sq(zl, zk) + alpha2, 0.0);
    return t1 + t2;
}

inline double quadruplet_loss_grad(const Vec& zi, const Vec& zj, const Vec& zk, const Vec& zl,
                                   double alpha1, double alpha2, double scale, Vec& dzi, Vec& dzj,
                                   Vec& dzk, Vec& dzl) {
    const double dij = dist_sq(zi, zj);
    const double arg1 = dij - dist_sq(zi, zk) + alpha1;
    const double arg2 = dij - dist_sq(zl, zk) + alpha2;
    double loss = 0.0;
    if (arg1 > 0.0) {
        loss += arg1;
        for (std::size_t n = 0; n < zi.size(); ++n) {
            dzi[n] += scale * 2.0 * (zk[n] - zj[n]);
            dzj[n] += scale * 2.0 * (zj[n] - zi[n]);
            dzk[n] += scale * 2.0 * (zi[n] - zk[n]);
        }
    }
    if (arg2 > 0.0) {
        loss += arg2;
        for (std::size_t n = 0; n < zi.size(); ++n) {
            dzi[n] += scale * 2.0 * (zi[n] - zj[n]);
            dzj[n] += scale * 2.0 * (zj[n] - zi[n]);
            dzl[n] += scale * 2.0 * (zk[n] - zl[n]);
            dzk[n] += scale * 2.0 * (zl[n] - zk[n]);
        }
    }
    return loss;
}

// KL(N(mean, diag(variance)) || N(0, I))
inline double latent_kl_loss(const EmbeddingDistribution& d) {
    double kl = 0.0;
    for (std::size_t i = 0; i < d.mean.size(); ++i)
        kl += d.variance[i] + d.mean[i] * d.mean[i] - 1.0 - std::log(d.variance[i]);
    return 0.5 * kl;
}

// mean squared error over all entries
inline double reconstruction_loss(const Vec& target, const Vec& reconstructed) {
    if (target.size() != reconstructed.size()) throw Error("reconstruction_loss: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        const double d = reconstructed[i] - target[i];
        s += d * d;
    }
    return s / static_cast<double>(target.size());
}

inline double reconstruction_loss(const ImuWindow& target, const Vec& reconstructed) {
    return reconstruction_loss(target.samples.data, reconstructed);
}

inline double total_loss(double recon, double kl, double metric) {
    return 0.7 * recon + 0.3 * (kl + metric);
}

// ---------------------------------------------------------------------------
// online mining

struct TupleSet {
    std::vector<std::array<std::size_t, 3>> triplets;      // anchor, positive, negative
    std::vector<std::array<std::size_t, 4>> quadruplets;   // anchor, positive, negative, second-negative
};

// Hard: per anchor the farthest positive and nearest negative. Semi-hard:
// the nearest negative inside the margin band past the chosen positive,
// falling back to the nearest negative overall. Squared distances
// throughout; ties break toward the lowest index. Quadruplets pick the
// second negative nearest to the first from a third class.
inline TupleSet mine_pairs(const std::vector<Vec>& embeddings, const std::vector<int>& labels,
                           const MetricConfig& cfg) {
    cfg.validate();
    const std::size_t n = embeddings.size();
    if (n != labels.size()) throw Error("mine_pairs: label count mismatch");

    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < n; ++i) by_class[labels[i]].push_back(i);
    const std::size_t min_classes = cfg.mode == MetricMode::Quadruplet ? 3 : 2;
    if (by_class.size() < min_classes)
        throw Error("mine_pairs: batch needs at least " + std::to_string(min_classes) + " classes");

    Mat d(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double v = dist_sq(embeddings[i], embeddings[j]);
            d(i, j) = v;
            d(j, i) = v;
        }

    const double band = cfg.mode == MetricMode::Quadruplet ? cfg.alpha1 : cfg.alpha_margin;
    TupleSet out;
    for (std::size_t a = 0; a < n; ++a) {
        // hardest positive
        std::size_t p = n;
        double dp = -1.0;
        for (std::size_t i : by_class[labels[a]]) {
            if (i == a) continue;
            if (d(a, i) > dp) {
                dp = d(a, i);
                p = i;
            }
        }
        if (p == n) continue;  // anchor class has a single sample in this batch

        // nearest negative, and the semi-hard candidate
        std::size_t hard_n = n, semi_n = n;
        double dn_hard = 0.0, dn_semi = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (labels[i] == labels[a]) continue;
            const double dv = d(a, i);
            if (hard_n == n || dv < dn_hard) {
                dn_hard = dv;
                hard_n = i;
            }
            if (dv > dp && dv < dp + band && (semi_n == n || dv < dn_semi)) {
                dn_semi = dv;
                semi_n = i;
            }
        }
        const std::size_t neg = (cfg.mining == MiningMode::SemiHard && semi_n != n) ? semi_n : hard_n;

        if (cfg.mode == MetricMode::Triplet) {
            out.triplets.push_back({a, p, neg});
            continue;
        }

        // second negative from a class distinct from both anchor and negative
        std::size_t l = n;
        double dl = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (labels[i] == labels[a] || labels[i] == labels[neg]) continue;
            const double dv = d(neg, i);
            if (l == n || dv < dl) {
                dl = dv;
                l = i;
            }
        }
        if (l == n) continue;
        out.quadruplets.push_back({a, p, neg, l});
    }
    if (out.triplets.empty() && out.quadruplets.empty())
        throw Error("mine_pairs: no anchor has a same-class positive");
    return out;
}

// ---------------------------------------------------------------------------
// training

struct EncoderLossParts {
    double recon = 0.0, kl = 0.0, metric = 0.0, total = 0.0;
};

// Forward and reverse pass over one batch. latent_noise holds one epsilon
// vector per window (frozen, so gradients are exact for the sampled
// objective); flat_grad may be null for evaluation.
inline EncoderLossParts encoder_loss_and_grad(const EncoderModel& m,
                                              const std::vector<const ImuWindow*>& batch,
                                              const MetricConfig& metric_cfg, const Vec& latent_noise,
                                              Vec* flat_grad) {
    const std::size_t nb = batch.size();
    if (nb == 0) throw Error("encoder_loss_and_grad: empty batch");
    if (latent_noise.size() != nb * m.latent_dim) throw Error("encoder_loss_and_grad: noise size");

    struct SampleState {
        std::vector<DenseCache> trunk;
        DenseCache mean_head, logvar_head;
        std::vector<DenseCache> decoder;
        Vec x, mean, logvar_raw, var, z, recon;
    };
    std::vector<SampleState> st(nb);
    std::vector<Vec> means(nb);
    std::vector<int> labels(nb);

    EncoderLossParts parts;
    for (std::size_t s = 0; s < nb; ++s) {
        auto& S = st[s];
        S.x = flatten_window(*batch[s]);
        labels[s] = batch[s]->label;
        S.trunk.resize(m.trunk.size());
        Vec h = S.x;
        for (std::size_t l = 0; l < m.trunk.size(); ++l) {
            h = dense_forward(m.trunk[l], h, &S.trunk[l]);
            if (!all_finite(h))
                throw NumericError("encoder trunk layer " + std::to_string(l) + " non-finite");
        }
        S.mean = dense_forward(m.mean_head, h, &S.mean_head);
        S.logvar_raw = dense_forward(m.logvar_head, h, &S.logvar_head);
        if (!all_finite(S.mean) || !all_finite(S.logvar_raw))
            throw NumericError("encoder head produced non-finite values");
        S.var.resize(m.latent_dim);
        S.z.resize(m.latent_dim);
        double kl = 0.0;
        for (std::size_t i = 0; i < m.latent_dim; ++i) {
            const double lv = std::clamp(S.logvar_raw[i], kLogVarMin, kLogVarMax);
            S.var[i] = std::exp(lv);
            S.z[i] = S.mean[i] + std::sqrt(S.var[i]) * latent_noise[s * m.latent_dim + i];
            kl += S.var[i] + S.mean[i] * S.mean[i] - 1.0 - lv;
        }
        parts.kl += 0.5 * kl;

        S.decoder.resize(m.decoder.size());
        Vec y = S.z;
        for (std::size_t l = 0; l < m.decoder.size(); ++l) {
            y = dense_forward(m.decoder[l], y, &S.decoder[l]);
            if (!all_finite(y))
                throw NumericError("encoder decoder layer " + std::to_string(l) + " non-finite");
        }
        S.recon = std::move(y);
        parts.recon += reconstruction_loss(S.x, S.recon);
        means[s] = S.mean;
    }
    parts.recon /= static_cast<double>(nb);
    parts.kl /= static_cast<double>(nb);

    TupleSet tuples = mine_pairs(means, labels, metric_cfg);
    const std::size_t ntuples = tuples.triplets.size() + tuples.quadruplets.size();
    std::vector<Vec> dmean_metric(nb, Vec(m.latent_dim, 0.0));
    if (ntuples > 0) {
        const double w = 1.0 / static_cast<double>(ntuples);
        for (const auto& t : tuples.triplets)
            parts.metric += w * triplet_loss_grad(means[t[0]], means[t[1]], means[t[2]],
                                                  metric_cfg.alpha_margin, w, dmean_metric[t[0]],
                                                  dmean_metric[t[1]], dmean_metric[t[2]]);
        for (const auto& q : tuples.quadruplets)
            parts.metric += w * quadruplet_loss_grad(means[q[0]], means[q[1]], means[q[2]], means[q[3]],
                                                     metric_cfg.alpha1, metric_cfg.alpha2, w,
                                                     dmean_metric[q[0]], dmean_metric[q[1]],
                                                     dmean_metric[q[2]], dmean_metric[q[3]]);
    }
    parts.total = total_loss(parts.recon, parts.kl, parts.metric);
    if (!std::isfinite(parts.total)) throw NumericError("encoder loss non-finite");
    if (!flat_grad) return parts;

    std::vector<DenseGrad> trunk_g(m.trunk.size());
    DenseGrad mean_g, logvar_g;
    std::vector<DenseGrad> dec_g(m.decoder.size());
    const double inv_nb = 1.0 / static_cast<double>(nb);

    for (std::size_t s = 0; s < nb; ++s) {
        auto& S = st[s];
        // reconstruction head: d(total)/d(recon_j)
        Vec dy(S.recon.size());
        const double cr = 0.7 * inv_nb * 2.0 / static_cast<double>(S.x.size());
        for (std::size_t j = 0; j < dy.size(); ++j) dy[j] = cr * (S.recon[j] - S.x[j]);
        for (std::size_t l = m.decoder.size(); l-- > 0;)
            dy = dense_backward(m.decoder[l], S.decoder[l], dy, dec_g[l]);
        Vec dz = std::move(dy);

        Vec dmean(m.latent_dim), dlogvar(m.latent_dim);
        for (std::size_t i = 0; i < m.latent_dim; ++i) {
            const double eps = latent_noise[s * m.latent_dim + i];
            dmean[i] = dz[i] + 0.3 * inv_nb * S.mean[i] + 0.3 * dmean_metric[s][i];
            dlogvar[i] = dz[i] * 0.5 * std::sqrt(S.var[i]) * eps + 0.3 * inv_nb * 0.5 * (S.var[i] - 1.0);
            if (S.logvar_raw[i] < kLogVarMin || S.logvar_raw[i] > kLogVarMax) dlogvar[i] = 0.0;
        }

        Vec dh = dense_backward(m.mean_head, S.mean_head, dmean, mean_g);
        Vec dh2 = dense_backward(m.logvar_head, S.logvar_head, dlogvar, logvar_g);
        for (std::size_t i = 0; i < dh.size(); ++i) dh[i] += dh2[i];
        for (std::size_t l = m.trunk.size(); l-- > 0;)
            dh = dense_backward(m.trunk[l], S.trunk[l], dh, trunk_g[l]);
    }

    flat_grad->clear();
    flat_grad->reserve(m.param_count());
    auto append = [flat_grad](const DenseGrad& g) {
        flat_grad->insert(flat_grad->end(), g.weights.data.begin(), g.weights.data.end());
        flat_grad->insert(flat_grad->end(), g.bias.begin(), g.bias.end());
    };
    for (const auto& g : trunk_g) append(g);
    append(mean_g);
    append(logvar_g);
    for (const auto& g : dec_g) append(g);
    if (!all_finite(*flat_grad)) throw NumericError("encoder gradient non-finite");
    return parts;
}

struct EncoderHyper {
    std::size_t latent_dim = 16;
    std::vector<std::size_t> trunk_widths{128, 64};
    Activation activation = Activation::Relu;
    double learning_rate = 1e-3;
    std::size_t batch_classes = 4;
    std::size_t batch_samples = 8;
};

struct TrainTraceRow {
    std::size_t epoch = 0;
    double recon = 0.0, kl = 0.0, metric = 0.0, total = 0.0;
};

struct EncoderTrainResult {
    EncoderModel model;
    std::vector<TrainTraceRow> trace;
};

// Batches are P classes x S samples drawn from per-class shuffled queues;
// everything is a pure function of the dataset and seed.
inline EncoderTrainResult train_encoder(const DatasetSplit& data, const MetricConfig& metric_cfg,
                                        std::size_t epochs, std::uint64_t seed,
                                        const EncoderHyper& hyper = {}) {
    metric_cfg.validate();
    if (data.train.empty()) throw Error("train_encoder: empty training split");
    if (hyper.batch_samples < 2) throw ConfigError("train_encoder: mining needs >= 2 samples per class");
    const std::size_t input_dim = data.train.front().samples.size();

    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < data.train.size(); ++i) by_class[data.train[i].label].push_back(i);
    const std::size_t min_classes = metric_cfg.mode == MetricMode::Quadruplet ? 3 : 2;
    if (by_class.size() < min_classes) throw Error("train_encoder: not enough classes");

    Rng init_rng(derive_seed(seed, "encoder-init"));
    EncoderModel model =
        build_encoder(input_dim, hyper.latent_dim, hyper.trunk_widths, hyper.activation, init_rng);

    const std::size_t P = std::min(hyper.batch_classes, by_class.size());
    const std::size_t S = hyper.batch_samples;
    const std::size_t steps = std::max<std::size_t>(1, data.train.size() / (P * S));

    std::vector<int> class_ids;
    for (const auto& [c, _] : by_class) class_ids.push_back(c);

    Vec params = encoder_flatten_params(model);
    AdamState adam;
    adam.lr = hyper.learning_rate;
    EncoderTrainResult result;

    for (std::size_t e = 0; e < epochs; ++e) {
        Rng rng(derive_seed(seed, "encoder-epoch", e));
        std::map<int, std::vector<std::size_t>> queues = by_class;
        for (auto& [c, q] : queues) rng.shuffle(q);
        std::map<int, std::size_t> cursor;
        std::vector<int> class_order = class_ids;
        rng.shuffle(class_order);
        std::size_t class_cursor = 0;

        TrainTraceRow row{e, 0, 0, 0, 0};
        for (std::size_t step = 0; step < steps; ++step) {
            std::vector<const ImuWindow*> batch;
            batch.reserve(P * S);
            for (std::size_t pc = 0; pc < P; ++pc) {
                if (class_cursor == class_order.size()) {
                    rng.shuffle(class_order);
                    class_cursor = 0;
                }
                const int c = class_order[class_cursor++];
                auto& q = queues[c];
                for (std::size_t si = 0; si < S; ++si) {
                    if (cursor[c] == q.size()) {
                        rng.shuffle(q);
                        cursor[c] = 0;
                    }
                    batch.push_back(&data.train[q[cursor[c]++]]);
                }
            }
            Vec noise = rng.normal_vec(batch.size() * hyper.latent_dim);
            Vec grad;
            EncoderLossParts parts = encoder_loss_and_grad(model, batch, metric_cfg, noise, &grad);
            optimizer_step(adam, params, grad);
            encoder_set_params(model, params);
            row.recon += parts.recon;
            row.kl += parts.kl;
            row.metric += parts.metric;
            row.total += parts.total;
        }
        const double inv = 1.0 / static_cast<double>(steps);
        row.recon *= inv;
        row.kl *= inv;
        row.metric *= inv;
        row.total *= inv;
        result.trace.push_back(row);
    }
    result.model = std::move(model);
    return result;
}

}  // namespace uhar
