#pragma once

#include <cstdint>
#include <vector>

#include "uhar/common.hpp"
#include "uhar/encoder.hpp"
#include "uhar/linalg.hpp"

namespace uhar {

// Kalman state over the latent embedding: random-walk dynamics (F = I),
// measurement = encoder mean, measurement noise = encoder variance.
struct TrackState {
    Vec x;   // state mean
    Mat P;   // state covariance
    std::size_t age = 0;
    std::size_t misses = 0;
};

struct KalmanConfig {
    double process_noise_q = 1e-3;  // Q = q I
    double gate_prob = 0.99;
    double init_variance = 1.0;
    std::size_t max_misses = 5;

    void validate() const {
        if (process_noise_q < 0.0) throw ConfigError("kalman: process noise must be >= 0");
        if (!(gate_prob > 0.0 && gate_prob < 1.0)) throw ConfigError("kalman: gate_prob in (0,1)");
        if (!(init_variance > 0.0)) throw ConfigError("kalman: init variance must be positive");
        if (max_misses < 1) throw ConfigError("kalman: max_misses must be >= 1");
    }
};

inline TrackState init_track(const EmbeddingDistribution& meas, const KalmanConfig& cfg) {
    TrackState t;
    t.x = meas.mean;
    t.P = Mat::identity(meas.mean.size());
    for (std::size_t i = 0; i < t.P.rows; ++i) t.P(i, i) = cfg.init_variance;
    return t;
}

inline TrackState predict(TrackState t, const KalmanConfig& cfg) {
    for (std::size_t i = 0; i < t.P.rows; ++i) t.P(i, i) += cfg.process_noise_q;
    symmetrize(t.P);
    ++t.age;
    return t;
}

// sqrt((z-x)^T S^-1 (z-x)) with S = P + diag(measurement variance)
inline double mahalanobis(const TrackState& t, const EmbeddingDistribution& meas) {
    if (meas.mean.size() != t.x.size()) throw Error("mahalanobis: dimension mismatch");
    const std::size_t d = t.x.size();
    Mat s = t.P;
    for (std::size_t i = 0; i < d; ++i) s(i, i) += meas.variance[i];
    Mat l = cholesky_jittered(s);
    Vec innov(d);
    for (std::size_t i = 0; i < d; ++i) innov[i] = meas.mean[i] - t.x[i];
    const Vec u = cholesky_solve(l, innov);
    return std::sqrt(dot(innov, u));
}

// Standard normal quantile (Acklam's rational approximation, |rel err| < 1.2e-9).
inline double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw ConfigError("normal_quantile: p must be in (0,1)");
    static constexpr double A[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                   -2.759285104469687e+02, 1.383577518672690e+02,
                                   -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double B[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                   -1.556989798598866e+02, 6.680131188771972e+01,
                                   -1.328068155288572e+01};
    static constexpr double C[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                   -2.400758277161838e+00, -2.549732539343734e+00,
                                   4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double D[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                   2.445134137142996e+00, 3.754408661907416e+00};
    constexpr double plow = 0.02425;
    double q, r;
    if (p < plow) {
        q = std::sqrt(-2.0 * std::log(p));
        return (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5]) /
               ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0);
    }
    if (p > 1.0 - plow) {
        q = std::sqrt(-2.0 * std::log(1.0 - p));
        return -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5]) /
               ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0);
    }
    q = p - 0.5;
    r = q * q;
    return (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q /
           (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0);
}

// Chi-square quantile via the Wilson-Hilferty cube transform.
inline double chi_square_quantile(double p, std::size_t dof) {
    const double z = normal_quantile(p);
    const double k = static_cast<double>(dof);
    const double t = 1.0 - 2.0 / (9.0 * k) + z * std::sqrt(2.0 / (9.0 * k));
    return k * t * t * t;
}

inline bool gate(double distance, std::size_t d, double gate_prob) {
    return distance * distance <= chi_square_quantile(gate_prob, d);
}

// KF measurement update with H = I, R = diag(meas.variance).
inline TrackState update(TrackState t, const EmbeddingDistribution& meas) {
    const std::size_t d = t.x.size();
    Mat s = t.P;
    for (std::size_t i = 0; i < d; ++i) s(i, i) += meas.variance[i];
    Mat l = cholesky_jittered(s);
    // K = P S^-1; S symmetric, so K^T = S^-1 P
    Mat kt = cholesky_solve(l, t.P);
    Vec innov(d);
    for (std::size_t i = 0; i < d; ++i) innov[i] = meas.mean[i] - t.x[i];
    for (std::size_t i = 0; i < d; ++i) {
        double dx = 0.0;
        for (std::size_t j = 0; j < d; ++j) dx += kt(j, i) * innov[j];
        t.x[i] += dx;
    }
    Mat ik = Mat::identity(d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) ik(i, j) -= kt(j, i);
    t.P = matmul(ik, t.P);
    symmetrize(t.P);
    t.misses = 0;
    return t;
}

struct TrackStepTrace {
    std::size_t step = 0;
    bool accepted = false;
    bool reinitialized = false;
    double mahalanobis = 0.0;
    double trace_p = 0.0;
};

inline double trace_of(const Mat& m) {
    double s = 0.0;
    for (std::size_t i = 0; i < m.rows; ++i) s += m(i, i);
    return s;
}

// Single-track lifecycle over one embedding stream. Gate failures emit the
// prediction; max_misses consecutive failures re-initialize the track at the
// current measurement (activity transition). One output per input.
inline std::vector<EmbeddingDistribution> track_stream(const std::vector<EmbeddingDistribution>& meas,
                                                       const KalmanConfig& cfg,
                                                       std::vector<TrackStepTrace>* trace = nullptr) {
    cfg.validate();
    std::vector<EmbeddingDistribution> out;
    if (meas.empty()) return out;
    out.reserve(meas.size());

    auto emit = [&out](const TrackState& t) {
        EmbeddingDistribution e;
        e.mean = t.x;
        e.variance.resize(t.x.size());
        for (std::size_t i = 0; i < t.x.size(); ++i) e.variance[i] = t.P(i, i);
        out.push_back(std::move(e));
    };

    TrackState track = init_track(meas.front(), cfg);
    emit(track);
    if (trace) trace->push_back({0, true, true, 0.0, trace_of(track.P)});

    for (std::size_t k = 1; k < meas.size(); ++k) {
        track = predict(std::move(track), cfg);
        const double dist = mahalanobis(track, meas[k]);
        TrackStepTrace row{k, false, false, dist, 0.0};
        if (gate(dist, track.x.size(), cfg.gate_prob)) {
            track = update(std::move(track), meas[k]);
            row.accepted = true;
        } else {
            ++track.misses;
            if (track.misses >= cfg.max_misses) {
                track = init_track(meas[k], cfg);
                row.reinitialized = true;
            }
        }
        emit(track);
        row.trace_p = trace_of(track.P);
        if (trace) trace->push_back(row);
    }
    return out;
}

}  // namespace uhar
