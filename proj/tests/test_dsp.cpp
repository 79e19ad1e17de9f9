#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>

#include "uhar/data.hpp"
#include "uhar/dsp.hpp"
#include "uhar/rng.hpp"

using namespace uhar;

namespace {

// Durand-Kerner roots of z^3 + a1 z^2 + a2 z + a3; independent stability
// oracle for the designed denominators.
std::array<std::complex<double>, 3> cubic_roots(double a1, double a2, double a3) {
    using cplx = std::complex<double>;
    auto p = [&](cplx z) { return ((z + a1) * z + a2) * z + a3; };
    std::array<cplx, 3> r{cplx{0.4, 0.9}, cplx{0.4, 0.9} * cplx{0.4, 0.9},
                          cplx{0.4, 0.9} * cplx{0.4, 0.9} * cplx{0.4, 0.9}};
    for (int it = 0; it < 200; ++it) {
        for (int i = 0; i < 3; ++i) {
            cplx denom{1.0, 0.0};
            for (int j = 0; j < 3; ++j)
                if (j != i) denom *= r[i] - r[j];
            r[i] -= p(r[i]) / denom;
        }
    }
    return r;
}

// Steady-state gain measured in the time domain: filter a long sinusoid and
// fit amplitude by least squares against sin/cos at the same frequency.
double measured_gain(const FilterCoefficients& f, double freq, double fs) {
    const std::size_t n = 20000;
    Vec x(n);
    for (std::size_t i = 0; i < n; ++i)
        x[i] = std::sin(2.0 * M_PI * freq * static_cast<double>(i) / fs);
    const Vec y = filter_channel(f, x);
    double cs = 0.0, cc = 0.0;
    const std::size_t skip = n / 2;  // past the transient
    for (std::size_t i = skip; i < n; ++i) {
        const double t = 2.0 * M_PI * freq * static_cast<double>(i) / fs;
        cs += y[i] * std::sin(t);
        cc += y[i] * std::cos(t);
    }
    const double half = static_cast<double>(n - skip) / 2.0;
    return std::sqrt(cs * cs + cc * cc) / half;
}

}  // namespace

TEST_CASE("butterworth high-pass frequency response") {
    const auto f = design_butterworth(3, 0.3, 100.0);

    SECTION("DC gain is zero") { REQUIRE(filter_gain(f, 0.0, 100.0) < 1e-9); }

    SECTION("corner gain is 1/sqrt(2)") {
        REQUIRE(filter_gain(f, 0.3, 100.0) == Catch::Approx(0.7071).margin(1e-3));
    }

    SECTION("pass band is flat well above the corner") {
        REQUIRE(filter_gain(f, 10.0, 100.0) >= 0.999);
        // independent time-domain measurement agrees
        REQUIRE(measured_gain(f, 10.0, 100.0) == Catch::Approx(filter_gain(f, 10.0, 100.0)).margin(1e-3));
    }
}

TEST_CASE("butterworth stability over random corners") {
    Rng rng(20240501);
    for (int i = 0; i < 20; ++i) {
        const double fs = rng.uniform(20.0, 2000.0);
        const double corner = rng.uniform(0.01, 0.45) * fs;
        const auto f = design_butterworth(3, corner, fs);
        const auto roots = cubic_roots(f.a[1], f.a[2], f.a[3]);
        for (const auto& z : roots) REQUIRE(std::abs(z) < 1.0);
    }
}

TEST_CASE("butterworth rejects invalid parameters") {
    REQUIRE_THROWS_AS(design_butterworth(3, 50.0, 100.0), ConfigError);
    REQUIRE_THROWS_AS(design_butterworth(3, 60.0, 100.0), ConfigError);
    REQUIRE_THROWS_AS(design_butterworth(3, 0.0, 100.0), ConfigError);
    REQUIRE_THROWS_AS(design_butterworth(2, 0.3, 100.0), ConfigError);
}

TEST_CASE("filter recursion") {
    const auto f = design_butterworth(3, 0.3, 100.0);

    SECTION("zero input stays zero") {
        const Vec y = filter_channel(f, Vec(500, 0.0));
        for (double v : y) REQUIRE(v == 0.0);
    }

    SECTION("constant input decays to zero") {
        const std::size_t T = static_cast<std::size_t>(10.0 * 100.0 / 0.3);
        const Vec y = filter_channel(f, Vec(T, 1.0));
        REQUIRE(std::abs(y.back()) < 1e-6);
    }

    SECTION("impulse response matches the direct-form difference equation") {
        Vec x(200, 0.0);
        x[0] = 1.0;
        const Vec y = filter_channel(f, x);
        // direct form I oracle
        Vec z(200, 0.0);
        for (std::size_t n = 0; n < z.size(); ++n) {
            double s = 0.0;
            for (std::size_t k = 0; k < 4 && k <= n; ++k) s += f.b[k] * x[n - k];
            for (std::size_t k = 1; k < 4 && k <= n; ++k) s -= f.a[k] * z[n - k];
            z[n] = s;
        }
        for (std::size_t n = 0; n < z.size(); ++n) REQUIRE(y[n] == Catch::Approx(z[n]).margin(1e-12));
    }

    SECTION("non-finite input throws") {
        Vec x(10, 0.0);
        x[3] = std::numeric_limits<double>::quiet_NaN();
        REQUIRE_THROWS_AS(filter_channel(f, x), NumericError);
    }
}

TEST_CASE("apply_filter runs channels independently") {
    const auto f = design_butterworth(3, 0.3, 100.0);
    Rng rng(9);
    ImuSeries s{Mat(6, 300), 100.0};
    rng.fill_normal(s.samples.data);
    const ImuSeries out = apply_filter(f, s);
    REQUIRE(out.samples.cols == s.samples.cols);
    for (std::size_t ch = 0; ch < 6; ++ch) {
        std::span<const double> x(&s.samples.data[ch * 300], 300);
        const Vec y = filter_channel(f, x);
        for (std::size_t t = 0; t < 300; ++t) REQUIRE(out.samples(ch, t) == y[t]);
    }
}

TEST_CASE("zscore normalization") {
    SECTION("constant channel becomes zero") {
        ImuWindow w{Mat(6, 8, 3.5), 0};
        const ImuWindow out = zscore_normalize(w);
        for (double v : out.samples.data) REQUIRE(v == 0.0);
    }

    SECTION("hand case [1,2,3]") {
        ImuWindow w{Mat(6, 3), 0};
        for (std::size_t ch = 0; ch < 6; ++ch)
            for (std::size_t t = 0; t < 3; ++t) w.samples(ch, t) = static_cast<double>(t + 1);
        const ImuWindow out = zscore_normalize(w);
        REQUIRE(out.samples(0, 0) == Catch::Approx(-1.2247448713915890).margin(1e-9));
        REQUIRE(out.samples(0, 1) == Catch::Approx(0.0).margin(1e-12));
        REQUIRE(out.samples(0, 2) == Catch::Approx(1.2247448713915890).margin(1e-9));
    }

    SECTION("output has zero mean and unit population std; idempotent") {
        Rng rng(7);
        ImuWindow w{Mat(6, 64), 0};
        rng.fill_normal(w.samples.data);
        const ImuWindow out = zscore_normalize(w);
        for (std::size_t ch = 0; ch < 6; ++ch) {
            double mean = 0.0, var = 0.0;
            for (std::size_t t = 0; t < 64; ++t) mean += out.samples(ch, t);
            mean /= 64.0;
            for (std::size_t t = 0; t < 64; ++t) {
                const double d = out.samples(ch, t) - mean;
                var += d * d;
            }
            REQUIRE(std::abs(mean) < 1e-12);
            REQUIRE(std::sqrt(var / 64.0) == Catch::Approx(1.0).margin(1e-9));
        }
        const ImuWindow twice = zscore_normalize(out);
        for (std::size_t i = 0; i < out.samples.data.size(); ++i)
            REQUIRE(std::abs(twice.samples.data[i] - out.samples.data[i]) < 1e-9);
    }
}

TEST_CASE("window_stream slicing") {
    ImuSeries s{Mat(6, 100), 100.0};
    for (std::size_t ch = 0; ch < 6; ++ch)
        for (std::size_t t = 0; t < 100; ++t) s.samples(ch, t) = static_cast<double>(ch * 1000 + t);

    REQUIRE(window_stream(s, 100, 1).size() == 1);
    REQUIRE(window_stream(s, 50, 25).size() == 3);
    REQUIRE(window_stream(s, 101, 1).empty());

    const auto wins = window_stream(s, 50, 25);
    for (std::size_t w = 0; w < wins.size(); ++w)
        for (std::size_t ch = 0; ch < 6; ++ch)
            for (std::size_t t = 0; t < 50; ++t)
                REQUIRE(wins[w].samples(ch, t) == s.samples(ch, w * 25 + t));
}
