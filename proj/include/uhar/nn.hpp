#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "uhar/common.hpp"
#include "uhar/rng.hpp"

namespace uhar {

enum class Activation { Identity, Relu, Tanh };

inline double activate(Activation a, double x) {
    switch (a) {
        case Activation::Relu: return x > 0.0 ? x : 0.0;
        case Activation::Tanh: return std::tanh(x);
        default: return x;
    }
}

// derivative w.r.t. the pre-activation
inline double activate_grad(Activation a, double pre) {
    switch (a) {
        case Activation::Relu: return pre > 0.0 ? 1.0 : 0.0;
        case Activation::Tanh: {
            const double t = std::tanh(pre);
            return 1.0 - t * t;
        }
        default: return 1.0;
    }
}

inline double softplus(double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); }

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// deterministic dense layer

struct DenseLayer {
    Mat weights;  // out x in
    Vec bias;     // out
    Activation activation = Activation::Identity;

    std::size_t in_dim() const { return weights.cols; }
    std::size_t out_dim() const { return weights.rows; }
};

inline DenseLayer make_dense(std::size_t in, std::size_t out, Activation act, Rng& rng) {
    DenseLayer l{Mat(out, in), Vec(out, 0.0), act};
    const double scale = std::sqrt(2.0 / static_cast<double>(in + out));
    for (double& w : l.weights.data) w = scale * rng.normal();
    return l;
}

struct DenseCache {
    Vec input, preact;
};

inline Vec dense_forward(const DenseLayer& l, const Vec& x, DenseCache* cache = nullptr) {
    if (x.size() != l.in_dim()) throw Error("dense: input size mismatch");
    Vec pre = matvec(l.weights, x);
    for (std::size_t i = 0; i < pre.size(); ++i) pre[i] += l.bias[i];
    Vec y(pre.size());
    for (std::size_t i = 0; i < pre.size(); ++i) y[i] = activate(l.activation, pre[i]);
    if (cache) {
        cache->input = x;
        cache->preact = std::move(pre);
    }
    return y;
}

inline Vec forward_deterministic(const DenseLayer& l, const Vec& x) { return dense_forward(l, x); }

struct DenseGrad {
    Mat weights;
    Vec bias;
};

// Accumulates into grad, returns dL/dx.
inline Vec dense_backward(const DenseLayer& l, const DenseCache& cache, const Vec& dout, DenseGrad& grad) {
    if (grad.weights.size() == 0) grad = {Mat(l.out_dim(), l.in_dim()), Vec(l.out_dim(), 0.0)};
    Vec dpre(l.out_dim());
    for (std::size_t i = 0; i < dpre.size(); ++i)
        dpre[i] = dout[i] * activate_grad(l.activation, cache.preact[i]);
    for (std::size_t i = 0; i < l.out_dim(); ++i) {
        grad.bias[i] += dpre[i];
        for (std::size_t j = 0; j < l.in_dim(); ++j) grad.weights(i, j) += dpre[i] * cache.input[j];
    }
    Vec dx(l.in_dim(), 0.0);
    for (std::size_t i = 0; i < l.out_dim(); ++i)
        for (std::size_t j = 0; j < l.in_dim(); ++j) dx[j] += l.weights(i, j) * dpre[i];
    return dx;
}

// ---------------------------------------------------------------------------
// Gaussian variational posterior, sigma = softplus(rho)

struct GaussianPosterior {
    Vec mu, rho;

    std::size_t size() const { return mu.size(); }
};

inline Vec posterior_sigma(const GaussianPosterior& p) {
    Vec s(p.rho.size());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = softplus(p.rho[i]);
    return s;
}

// w = mu + softplus(rho) * eps
inline Vec sample_weights(const GaussianPosterior& p, const Vec& noise) {
    if (noise.size() != p.size()) throw Error("sample_weights: noise shape mismatch");
    Vec w(p.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = p.mu[i] + softplus(p.rho[i]) * noise[i];
    return w;
}

// KL(N(mu, sigma^2) || N(0, prior_sigma^2)) summed over elements.
inline double kl_gaussian_to_prior(const GaussianPosterior& p, double prior_sigma) {
    if (!(prior_sigma > 0.0)) throw ConfigError("kl: prior sigma must be positive");
    const double sp2 = prior_sigma * prior_sigma;
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double s = softplus(p.rho[i]);
        kl += std::log(prior_sigma / s) + (s * s + p.mu[i] * p.mu[i]) / (2.0 * sp2) - 0.5;
    }
    return kl;
}

// Accumulates scale * dKL/dtheta into (dmu, drho).
inline void kl_gaussian_to_prior_backward(const GaussianPosterior& p, double prior_sigma, double scale,
                                          Vec& dmu, Vec& drho) {
    const double sp2 = prior_sigma * prior_sigma;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double s = softplus(p.rho[i]);
        dmu[i] += scale * p.mu[i] / sp2;
        drho[i] += scale * (s / sp2 - 1.0 / s) * sigmoid(p.rho[i]);
    }
}

// ---------------------------------------------------------------------------
// Bayesian dense layer

struct BayesianDenseLayer {
    GaussianPosterior weight_posterior;  // flat, row-major out x in
    GaussianPosterior bias_posterior;    // out
    std::size_t in = 0, out = 0;
    double prior_sigma = 1.0;
    Activation activation = Activation::Relu;

    std::size_t noise_size() const { return in * out + out; }
    // trainable parameters: mu and rho per weight and bias
    std::size_t param_count() const { return 2 * (in * out + out); }
};

inline BayesianDenseLayer make_bayesian_dense(std::size_t in, std::size_t out, Activation act,
                                              double prior_sigma, Rng& rng) {
    BayesianDenseLayer l;
    l.in = in;
    l.out = out;
    l.prior_sigma = prior_sigma;
    l.activation = act;
    l.weight_posterior.mu.resize(in * out);
    l.weight_posterior.rho.assign(in * out, -3.0);
    l.bias_posterior.mu.assign(out, 0.0);
    l.bias_posterior.rho.assign(out, -3.0);
    const double scale = std::sqrt(2.0 / static_cast<double>(in + out));
    for (double& w : l.weight_posterior.mu) w = scale * rng.normal();
    return l;
}

struct BayesianDenseCache {
    Vec input, preact;
    Vec w, b;            // sampled weights for this pass
    Vec noise_w, noise_b;
};

// noise spans this layer's weights then biases.
inline Vec bayesian_dense_forward(const BayesianDenseLayer& l, const Vec& x, const Vec& noise_w,
                                  const Vec& noise_b, BayesianDenseCache* cache = nullptr) {
    if (x.size() != l.in) throw Error("bayesian dense: input size mismatch");
    Vec w = sample_weights(l.weight_posterior, noise_w);
    Vec b = sample_weights(l.bias_posterior, noise_b);
    Vec pre(l.out);
    for (std::size_t i = 0; i < l.out; ++i) {
        double s = b[i];
        const double* wr = &w[i * l.in];
        for (std::size_t j = 0; j < l.in; ++j) s += wr[j] * x[j];
        pre[i] = s;
    }
    Vec y(l.out);
    for (std::size_t i = 0; i < l.out; ++i) y[i] = activate(l.activation, pre[i]);
    if (cache) {
        cache->input = x;
        cache->preact = std::move(pre);
        cache->w = std::move(w);
        cache->b = std::move(b);
        cache->noise_w = noise_w;
        cache->noise_b = noise_b;
    }
    return y;
}

struct BayesianDenseGrad {
    Vec dmu_w, drho_w, dmu_b, drho_b;

    void ensure_shape(const BayesianDenseLayer& l) {
        if (dmu_w.empty()) {
            dmu_w.assign(l.in * l.out, 0.0);
            drho_w.assign(l.in * l.out, 0.0);
            dmu_b.assign(l.out, 0.0);
            drho_b.assign(l.out, 0.0);
        }
    }
};

// Reparameterized gradient: dL/dmu = dL/dw, dL/drho = dL/dw * eps * sigmoid(rho).
inline Vec bayesian_dense_backward(const BayesianDenseLayer& l, const BayesianDenseCache& cache,
                                   const Vec& dout, BayesianDenseGrad& grad) {
    grad.ensure_shape(l);
    Vec dpre(l.out);
    for (std::size_t i = 0; i < l.out; ++i)
        dpre[i] = dout[i] * activate_grad(l.activation, cache.preact[i]);
    for (std::size_t i = 0; i < l.out; ++i) {
        grad.dmu_b[i] += dpre[i];
        grad.drho_b[i] += dpre[i] * cache.noise_b[i] * sigmoid(l.bias_posterior.rho[i]);
        for (std::size_t j = 0; j < l.in; ++j) {
            const std::size_t k = i * l.in + j;
            const double dw = dpre[i] * cache.input[j];
            grad.dmu_w[k] += dw;
            grad.drho_w[k] += dw * cache.noise_w[k] * sigmoid(l.weight_posterior.rho[k]);
        }
    }
    Vec dx(l.in, 0.0);
    for (std::size_t i = 0; i < l.out; ++i)
        for (std::size_t j = 0; j < l.in; ++j) dx[j] += cache.w[i * l.in + j] * dpre[i];
    return dx;
}

// ---------------------------------------------------------------------------
// Adam over a flat parameter vector

struct AdamState {
    Vec m, v;
    long step = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

inline void optimizer_step(AdamState& st, Vec& params, const Vec& grads) {
    if (params.size() != grads.size()) throw Error("optimizer_step: shape mismatch");
    if (st.m.empty()) {
        st.m.assign(params.size(), 0.0);
        st.v.assign(params.size(), 0.0);
    }
    ++st.step;
    const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * g;
        st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * g * g;
        params[i] -= st.lr * (st.m[i] / c1) / (std::sqrt(st.v[i] / c2) + st.epsilon);
    }
}

}  // namespace uhar
