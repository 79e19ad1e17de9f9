#pragma once

#include <array>
#include <complex>
#include <span>

#include "uhar/common.hpp"

namespace uhar {

// Third-order IIR coefficients, a[0] == 1.
struct FilterCoefficients {
    std::array<double, 4> b{};
    std::array<double, 4> a{};
};

// High-pass Butterworth: analog low-pass prototype, low-pass-to-high-pass
// transform at the pre-warped corner, then bilinear transform. Gain is 1 at
// Nyquist and 1/sqrt(2) at the corner.
inline FilterCoefficients design_butterworth(int order, double corner_hz, double sample_rate_hz) {
    if (order != 3) throw ConfigError("butterworth: only order 3 supported");
    if (!(sample_rate_hz > 0.0)) throw ConfigError("butterworth: sample rate must be positive");
    if (!(corner_hz > 0.0) || corner_hz >= 0.5 * sample_rate_hz)
        throw ConfigError("butterworth: corner must lie in (0, Nyquist)");

    using cplx = std::complex<double>;
    constexpr double pi = 3.14159265358979323846;
    const int n = order;

    // pre-warped analog corner
    const double wc = 2.0 * sample_rate_hz * std::tan(pi * corner_hz / sample_rate_hz);
    const double c = 2.0 * sample_rate_hz;

    // low-pass prototype poles on the unit circle, left half-plane
    std::array<cplx, 3> hp_poles;
    for (int k = 0; k < n; ++k) {
        const double theta = pi * (2.0 * k + n + 1.0) / (2.0 * n);
        const cplx proto{std::cos(theta), std::sin(theta)};
        hp_poles[k] = wc / proto;  // s -> wc/s moves each pole to wc/p
    }

    // H(z) numerator: c^3 (z-1)^3; denominator: prod over poles of
    // ((c - q) z - (c + q)). Coefficients kept in descending powers of z.
    std::array<cplx, 4> den{cplx{1.0}, cplx{0.0}, cplx{0.0}, cplx{0.0}};
    int deg = 0;
    for (int k = 0; k < n; ++k) {
        const cplx hi = c - hp_poles[k];
        const cplx lo = -(c + hp_poles[k]);
        for (int i = deg + 1; i > 0; --i) den[i] = den[i] * hi + den[i - 1] * lo;
        den[0] *= hi;
        ++deg;
    }

    FilterCoefficients f;
    const double c3 = c * c * c;
    const std::array<double, 4> num{c3, -3.0 * c3, 3.0 * c3, -c3};
    const double a0 = den[0].real();
    for (int i = 0; i < 4; ++i) {
        f.b[i] = num[i] / a0;
        f.a[i] = den[i].real() / a0;
    }

    // digital poles are the bilinear images (c + q)/(c - q); left-half-plane
    // analog poles land strictly inside the unit circle
    for (int k = 0; k < n; ++k) {
        const cplx zk = (c + hp_poles[k]) / (c - hp_poles[k]);
        if (!(std::abs(zk) < 1.0)) throw NumericError("butterworth: unstable design");
    }
    return f;
}

// |H(e^{i 2 pi f / fs})|
inline double filter_gain(const FilterCoefficients& f, double freq_hz, double sample_rate_hz) {
    using cplx = std::complex<double>;
    const double w = 2.0 * 3.14159265358979323846 * freq_hz / sample_rate_hz;
    cplx num{0.0}, den{0.0};
    for (int k = 0; k < 4; ++k) {
        const cplx zk = std::polar(1.0, -w * k);
        num += f.b[k] * zk;
        den += f.a[k] * zk;
    }
    return std::abs(num / den);
}

// Causal direct-form-II-transposed recursion, zero initial state.
inline Vec filter_channel(const FilterCoefficients& f, std::span<const double> x) {
    Vec y(x.size());
    double s1 = 0.0, s2 = 0.0, s3 = 0.0;
    for (std::size_t n = 0; n < x.size(); ++n) {
        const double xn = x[n];
        if (!std::isfinite(xn)) throw NumericError("filter: non-finite input sample");
        const double yn = f.b[0] * xn + s1;
        s1 = f.b[1] * xn - f.a[1] * yn + s2;
        s2 = f.b[2] * xn - f.a[2] * yn + s3;
        s3 = f.b[3] * xn - f.a[3] * yn;
        y[n] = yn;
    }
    return y;
}

}  // namespace uhar
