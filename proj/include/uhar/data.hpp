#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "uhar/common.hpp"
#include "uhar/dsp.hpp"
#include "uhar/rng.hpp"

namespace uhar {

inline constexpr int kUnknownLabel = -1;
inline constexpr std::size_t kImuChannels = 6;  // 3 accel + 3 gyro

// 6xT stream, accel in m/s^2 rows 0-2, gyro in rad/s rows 3-5.
struct ImuSeries {
    Mat samples;
    double sample_rate_hz = 100.0;
};

// Fixed-length segment; label is an activity id or kUnknownLabel.
struct ImuWindow {
    Mat samples;  // 6xW
    int label = kUnknownLabel;
};

// Per-class signal recipe for the synthetic generator. Harmonic weight h
// scales the (h+1)-th multiple of the fundamental.
struct ClassSignalSpec {
    double fundamental_hz = 1.0;
    std::array<double, kImuChannels> amplitude{};
    std::vector<double> harmonics{1.0};
    double noise_std = 0.1;
};

struct SyntheticSpec {
    std::vector<ClassSignalSpec> classes;
    std::size_t window_len = 128;
    std::size_t windows_per_class = 200;
    int unknown_class = 7;          // held out of train/val/test entirely
    double sample_rate_hz = 100.0;
    double corner_hz = 0.3;         // high-pass corner used in preprocessing
    double phase_jitter = 1.0;      // fraction of a full cycle of random phase
    double freq_jitter = 0.02;      // relative sigma on the fundamental
    double amp_jitter = 0.05;       // relative sigma on channel amplitudes
    std::uint64_t seed = 0;

    void validate() const {
        if (classes.size() < 2) throw ConfigError("synthetic spec: need at least 2 classes");
        if (window_len < 2) throw ConfigError("synthetic spec: window_len must be >= 2");
        if (windows_per_class < 1) throw ConfigError("synthetic spec: windows_per_class must be >= 1");
        if (!(sample_rate_hz > 0.0)) throw ConfigError("synthetic spec: sample rate must be positive");
        for (const auto& c : classes) {
            if (c.noise_std < 0.0) throw ConfigError("synthetic spec: noise std must be >= 0");
            if (c.harmonics.empty()) throw ConfigError("synthetic spec: harmonics must be non-empty");
        }
        for (std::size_t i = 0; i < classes.size(); ++i)
            for (std::size_t j = i + 1; j < classes.size(); ++j) {
                const bool same_freq = classes[i].fundamental_hz == classes[j].fundamental_hz;
                const bool same_amp = classes[i].amplitude == classes[j].amplitude;
                if (same_freq && same_amp)
                    throw ConfigError("synthetic spec: classes " + std::to_string(i) + " and " +
                                      std::to_string(j) + " coincide in (frequency, amplitude)");
            }
        // known labels must stay contiguous 0..K-1, so only the last class
        // can be held out
        if (unknown_class >= 0 && static_cast<std::size_t>(unknown_class) < classes.size() &&
            static_cast<std::size_t>(unknown_class) + 1 != classes.size())
            throw ConfigError("synthetic spec: the held-out class must be the last one");
    }
};

struct DatasetSplit {
    std::vector<ImuWindow> train, validation, test, unknown;
    std::uint64_t seed = 0;
    std::size_t window_len = 0;
    std::size_t num_known_classes = 0;
    double sample_rate_hz = 100.0;
};

// Per-channel (x - mean)/std with population std; channels with std below
// 1e-9 come out all-zero.
inline ImuWindow zscore_normalize(const ImuWindow& w) {
    const std::size_t n = w.samples.cols;
    if (n < 2) throw ConfigError("zscore: window length must be >= 2");
    ImuWindow out{Mat(w.samples.rows, n), w.label};
    for (std::size_t ch = 0; ch < w.samples.rows; ++ch) {
        double mean = 0.0;
        for (std::size_t t = 0; t < n; ++t) mean += w.samples(ch, t);
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
            const double d = w.samples(ch, t) - mean;
            var += d * d;
        }
        const double sd = std::sqrt(var / static_cast<double>(n));
        if (sd < 1e-9) continue;  // degenerate channel stays zero
        for (std::size_t t = 0; t < n; ++t) out.samples(ch, t) = (w.samples(ch, t) - mean) / sd;
    }
    return out;
}

inline ImuSeries apply_filter(const FilterCoefficients& f, const ImuSeries& s) {
    ImuSeries out{Mat(s.samples.rows, s.samples.cols), s.sample_rate_hz};
    for (std::size_t ch = 0; ch < s.samples.rows; ++ch) {
        std::span<const double> x(&s.samples.data[ch * s.samples.cols], s.samples.cols);
        Vec y = filter_channel(f, x);
        std::copy(y.begin(), y.end(), out.samples.data.begin() + ch * s.samples.cols);
    }
    return out;
}

// floor((T - length)/hop) + 1 windows in temporal order; empty when the
// series is shorter than one window.
inline std::vector<ImuWindow> window_stream(const ImuSeries& s, std::size_t length, std::size_t hop) {
    if (hop < 1) throw ConfigError("window_stream: hop must be >= 1");
    std::vector<ImuWindow> out;
    if (length > s.samples.cols || length == 0) return out;
    const std::size_t count = (s.samples.cols - length) / hop + 1;
    out.reserve(count);
    for (std::size_t w = 0; w < count; ++w) {
        ImuWindow win{Mat(s.samples.rows, length), kUnknownLabel};
        const std::size_t t0 = w * hop;
        for (std::size_t ch = 0; ch < s.samples.rows; ++ch)
            for (std::size_t t = 0; t < length; ++t) win.samples(ch, t) = s.samples(ch, t0 + t);
        out.push_back(std::move(win));
    }
    return out;
}

namespace detail {

// One raw window with a settle-in prefix so the high-pass transient from the
// gravity offset has decayed by the time the kept samples start.
inline ImuSeries synth_raw_window(const SyntheticSpec& spec, const ClassSignalSpec& cls, Rng& rng,
                                  std::size_t warmup) {
    const std::size_t total = spec.window_len + warmup;
    ImuSeries s{Mat(kImuChannels, total), spec.sample_rate_hz};
    const double f0 = cls.fundamental_hz * (1.0 + spec.freq_jitter * rng.normal());
    constexpr double two_pi = 6.283185307179586476925286766559;
    for (std::size_t ch = 0; ch < kImuChannels; ++ch) {
        const double amp = cls.amplitude[ch] * (1.0 + spec.amp_jitter * rng.normal());
        const double phase = two_pi * spec.phase_jitter * rng.uniform();
        const double gravity = (ch == 2) ? 9.81 : 0.0;
        for (std::size_t t = 0; t < total; ++t) {
            const double time = static_cast<double>(t) / spec.sample_rate_hz;
            double v = gravity;
            for (std::size_t h = 0; h < cls.harmonics.size(); ++h)
                v += amp * cls.harmonics[h] * std::sin(two_pi * f0 * (h + 1.0) * time + phase * (h + 1.0));
            if (cls.noise_std > 0.0) v += cls.noise_std * rng.normal();
            s.samples(ch, t) = v;
        }
    }
    return s;
}

}  // namespace detail

// Deterministic synthetic dataset: class-parametric sinusoid mixtures plus
// Gaussian noise, high-pass filtered and z-scored, split 52/23/25 per known
// class. The unknown class is kept whole.
inline DatasetSplit generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    const FilterCoefficients filt = design_butterworth(3, spec.corner_hz, spec.sample_rate_hz);
    constexpr std::size_t warmup = 512;

    DatasetSplit out;
    out.seed = spec.seed;
    out.window_len = spec.window_len;
    out.sample_rate_hz = spec.sample_rate_hz;
    out.num_known_classes = 0;
    for (std::size_t c = 0; c < spec.classes.size(); ++c)
        if (static_cast<int>(c) != spec.unknown_class) ++out.num_known_classes;

    for (std::size_t c = 0; c < spec.classes.size(); ++c) {
        std::vector<ImuWindow> windows;
        windows.reserve(spec.windows_per_class);
        for (std::size_t w = 0; w < spec.windows_per_class; ++w) {
            Rng rng(derive_seed(spec.seed, "window", c * 1000003ull + w));
            ImuSeries raw = detail::synth_raw_window(spec, spec.classes[c], rng, warmup);
            ImuSeries filtered = apply_filter(filt, raw);
            ImuWindow win{Mat(kImuChannels, spec.window_len), static_cast<int>(c)};
            for (std::size_t ch = 0; ch < kImuChannels; ++ch)
                for (std::size_t t = 0; t < spec.window_len; ++t)
                    win.samples(ch, t) = filtered.samples(ch, warmup + t);
            windows.push_back(zscore_normalize(win));
        }

        if (static_cast<int>(c) == spec.unknown_class) {
            for (auto& w : windows) {
                w.label = kUnknownLabel;
                out.unknown.push_back(std::move(w));
            }
            continue;
        }

        std::vector<std::size_t> order(windows.size());
        std::iota(order.begin(), order.end(), 0);
        Rng split_rng(derive_seed(spec.seed, "split", c));
        split_rng.shuffle(order);
        const std::size_t n = windows.size();
        const std::size_t n_train = static_cast<std::size_t>(0.52 * static_cast<double>(n));
        const std::size_t n_val = static_cast<std::size_t>(0.23 * static_cast<double>(n));
        for (std::size_t i = 0; i < n; ++i) {
            auto& dst = (i < n_train) ? out.train : (i < n_train + n_val) ? out.validation : out.test;
            dst.push_back(std::move(windows[order[i]]));
        }
    }
    return out;
}

// Bundled 8-class recipe: 7 known activities plus one held-out class whose
// parameters sit deliberately close to class 1, so the unknown class has a
// clear nearest neighbour in embedding space. Fundamentals are spaced by
// ~1.3x so classes stay separable after per-channel normalization; phase
// jitter is modest so windows of a class share a learnable template.
inline SyntheticSpec default_synthetic_spec() {
    SyntheticSpec spec;
    spec.classes = {
        {1.0, {1.00, 0.20, 0.10, 0.30, 0.10, 0.10}, {1.0}, 0.15},
        {3.2, {1.00, 0.80, 0.50, 0.20, 0.30, 0.20}, {1.0, 0.6}, 0.15},
        {1.4, {0.20, 1.00, 0.30, 0.10, 0.40, 0.10}, {1.0, 0.3}, 0.15},
        {4.5, {0.50, 0.50, 1.00, 0.30, 0.20, 0.40}, {1.0, 0.0, 0.5}, 0.15},
        {1.9, {0.70, 0.30, 0.90, 0.50, 0.60, 0.20}, {1.0, 0.4, 0.2}, 0.15},
        {2.5, {0.10, 0.15, 0.10, 1.00, 0.80, 0.60}, {1.0}, 0.15},
        {5.5, {0.90, 0.60, 0.40, 0.40, 0.50, 0.90}, {1.0, 0.5, 0.3}, 0.15},
        {3.0, {1.00, 0.75, 0.55, 0.25, 0.30, 0.25}, {1.0, 0.3, 0.6}, 0.4},
    };
    spec.unknown_class = 7;
    spec.phase_jitter = 0.2;
    return spec;
}

}  // namespace uhar
