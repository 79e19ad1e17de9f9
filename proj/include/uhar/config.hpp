#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <string>
#include <vector>

#include <json.hpp>

#include "uhar/bnn.hpp"
#include "uhar/common.hpp"
#include "uhar/data.hpp"
#include "uhar/encoder.hpp"
#include "uhar/explain.hpp"
#include "uhar/io.hpp"
#include "uhar/tracker.hpp"

namespace uhar {

inline constexpr const char* kToolVersion = "0.1.0";

struct PipelineConfig {
    std::uint64_t seed = 1;
    std::string out_dir = "runs/out";

    SyntheticSpec dataset = default_synthetic_spec();
    DatasetFormat dataset_format = DatasetFormat::Binary;

    EncoderHyper encoder;
    std::size_t encoder_epochs = 30;
    MetricConfig metric;

    KalmanConfig tracker;

    std::array<std::size_t, 3> bnn_hidden{32, 32, 16};
    BnnTrainConfig bnn_train;
    double prior_sigma = 1.0;
    std::size_t eval_samples = 100;  // posterior draws per prediction

    CompressionPolicy compression;
};

namespace detail {

using json = nlohmann::json;

inline void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                       const std::string& ctx) {
    if (!obj.is_object()) throw ConfigError("config: " + ctx + " must be an object");
    for (const auto& [key, _] : obj.items()) {
        bool ok = false;
        for (const char* a : allowed)
            if (key == a) ok = true;
        if (!ok) throw ConfigError("config: unknown key '" + key + "' in " + ctx);
    }
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("config: bad value for '") + key + "'");
    }
}

inline void parse_dataset(const json& j, PipelineConfig& cfg) {
    check_keys(j,
               {"preset", "classes", "window_len", "windows_per_class", "unknown_class",
                "sample_rate_hz", "corner_hz", "phase_jitter", "freq_jitter", "amp_jitter", "format"},
               "dataset");
    if (j.contains("preset") && j.at("preset") != "default")
        throw ConfigError("config: unknown dataset preset");
    SyntheticSpec spec = default_synthetic_spec();
    if (j.contains("classes")) {
        spec.classes.clear();
        for (const auto& c : j.at("classes")) {
            check_keys(c, {"fundamental_hz", "amplitude", "harmonics", "noise_std"}, "dataset.classes[]");
            ClassSignalSpec cs;
            cs.fundamental_hz = get_or(c, "fundamental_hz", cs.fundamental_hz);
            if (c.contains("amplitude")) {
                const auto amp = c.at("amplitude").get<std::vector<double>>();
                if (amp.size() != kImuChannels)
                    throw ConfigError("config: amplitude needs 6 channel entries");
                std::copy(amp.begin(), amp.end(), cs.amplitude.begin());
            }
            if (c.contains("harmonics")) cs.harmonics = c.at("harmonics").get<std::vector<double>>();
            cs.noise_std = get_or(c, "noise_std", cs.noise_std);
            spec.classes.push_back(std::move(cs));
        }
    }
    spec.window_len = get_or<std::size_t>(j, "window_len", spec.window_len);
    spec.windows_per_class = get_or<std::size_t>(j, "windows_per_class", spec.windows_per_class);
    spec.unknown_class = get_or<int>(j, "unknown_class", spec.unknown_class);
    spec.sample_rate_hz = get_or<double>(j, "sample_rate_hz", spec.sample_rate_hz);
    spec.corner_hz = get_or<double>(j, "corner_hz", spec.corner_hz);
    spec.phase_jitter = get_or<double>(j, "phase_jitter", spec.phase_jitter);
    spec.freq_jitter = get_or<double>(j, "freq_jitter", spec.freq_jitter);
    spec.amp_jitter = get_or<double>(j, "amp_jitter", spec.amp_jitter);
    cfg.dataset = std::move(spec);
    const std::string fmt = get_or<std::string>(j, "format", "binary");
    if (fmt == "binary")
        cfg.dataset_format = DatasetFormat::Binary;
    else if (fmt == "csv")
        cfg.dataset_format = DatasetFormat::Csv;
    else
        throw ConfigError("config: dataset format must be binary or csv");
}

}  // namespace detail

inline MetricMode metric_mode_from_string(const std::string& s) {
    if (s == "triplet") return MetricMode::Triplet;
    if (s == "quadruplet") return MetricMode::Quadruplet;
    throw ConfigError("config: metric mode must be triplet or quadruplet");
}

inline PipelineConfig parse_config(const nlohmann::json& j) {
    using detail::check_keys;
    using detail::get_or;
    check_keys(j, {"seed", "out_dir", "dataset", "encoder", "metric", "tracker", "bnn", "explain"},
               "top level");
    PipelineConfig cfg;
    cfg.seed = get_or<std::uint64_t>(j, "seed", cfg.seed);
    cfg.out_dir = get_or<std::string>(j, "out_dir", cfg.out_dir);
    if (j.contains("dataset")) detail::parse_dataset(j.at("dataset"), cfg);
    cfg.dataset.seed = derive_seed(cfg.seed, "data");

    if (j.contains("encoder")) {
        const auto& e = j.at("encoder");
        check_keys(e, {"latent_dim", "trunk", "epochs", "learning_rate", "batch_classes", "batch_samples"},
                   "encoder");
        cfg.encoder.latent_dim = get_or<std::size_t>(e, "latent_dim", cfg.encoder.latent_dim);
        if (e.contains("trunk")) cfg.encoder.trunk_widths = e.at("trunk").get<std::vector<std::size_t>>();
        cfg.encoder_epochs = get_or<std::size_t>(e, "epochs", cfg.encoder_epochs);
        cfg.encoder.learning_rate = get_or<double>(e, "learning_rate", cfg.encoder.learning_rate);
        cfg.encoder.batch_classes = get_or<std::size_t>(e, "batch_classes", cfg.encoder.batch_classes);
        cfg.encoder.batch_samples = get_or<std::size_t>(e, "batch_samples", cfg.encoder.batch_samples);
    }
    if (j.contains("metric")) {
        const auto& m = j.at("metric");
        check_keys(m, {"mode", "alpha_margin", "alpha1", "alpha2", "mining"}, "metric");
        cfg.metric.mode = metric_mode_from_string(get_or<std::string>(m, "mode", "triplet"));
        cfg.metric.alpha_margin = get_or<double>(m, "alpha_margin", cfg.metric.alpha_margin);
        cfg.metric.alpha1 = get_or<double>(m, "alpha1", cfg.metric.alpha1);
        cfg.metric.alpha2 = get_or<double>(m, "alpha2", cfg.metric.alpha2);
        const std::string mining = get_or<std::string>(m, "mining", "semi-hard");
        if (mining == "hard")
            cfg.metric.mining = MiningMode::Hard;
        else if (mining == "semi-hard")
            cfg.metric.mining = MiningMode::SemiHard;
        else
            throw ConfigError("config: mining must be hard or semi-hard");
    }
    if (j.contains("tracker")) {
        const auto& t = j.at("tracker");
        check_keys(t, {"process_noise_q", "gate_prob", "init_variance", "max_misses"}, "tracker");
        cfg.tracker.process_noise_q = get_or<double>(t, "process_noise_q", cfg.tracker.process_noise_q);
        cfg.tracker.gate_prob = get_or<double>(t, "gate_prob", cfg.tracker.gate_prob);
        cfg.tracker.init_variance = get_or<double>(t, "init_variance", cfg.tracker.init_variance);
        cfg.tracker.max_misses = get_or<std::size_t>(t, "max_misses", cfg.tracker.max_misses);
        cfg.tracker.validate();
    }
    if (j.contains("bnn")) {
        const auto& b = j.at("bnn");
        check_keys(b,
                   {"hidden", "epochs", "batch_size", "learning_rate", "train_weight_samples",
                    "eval_samples", "prior_sigma"},
                   "bnn");
        if (b.contains("hidden")) {
            const auto h = b.at("hidden").get<std::vector<std::size_t>>();
            if (h.size() != 3) throw ConfigError("config: bnn hidden needs exactly 3 widths");
            std::copy(h.begin(), h.end(), cfg.bnn_hidden.begin());
        }
        cfg.bnn_train.epochs = get_or<std::size_t>(b, "epochs", cfg.bnn_train.epochs);
        cfg.bnn_train.batch_size = get_or<std::size_t>(b, "batch_size", cfg.bnn_train.batch_size);
        cfg.bnn_train.learning_rate = get_or<double>(b, "learning_rate", cfg.bnn_train.learning_rate);
        cfg.bnn_train.n_weight_samples =
            get_or<std::size_t>(b, "train_weight_samples", cfg.bnn_train.n_weight_samples);
        cfg.eval_samples = get_or<std::size_t>(b, "eval_samples", cfg.eval_samples);
        cfg.prior_sigma = get_or<double>(b, "prior_sigma", cfg.prior_sigma);
    }
    if (j.contains("explain")) {
        const auto& x = j.at("explain");
        check_keys(x,
                   {"samples", "coalitions", "model_fn_samples", "keep_fraction", "accuracy_tolerance",
                    "min_hidden"},
                   "explain");
        cfg.compression.explain_samples = get_or<std::size_t>(x, "samples", cfg.compression.explain_samples);
        cfg.compression.n_coalitions = get_or<std::size_t>(x, "coalitions", cfg.compression.n_coalitions);
        cfg.compression.model_fn_samples =
            get_or<std::size_t>(x, "model_fn_samples", cfg.compression.model_fn_samples);
        cfg.compression.keep_fraction = get_or<double>(x, "keep_fraction", cfg.compression.keep_fraction);
        cfg.compression.accuracy_tolerance =
            get_or<double>(x, "accuracy_tolerance", cfg.compression.accuracy_tolerance);
        cfg.compression.min_hidden = get_or<std::size_t>(x, "min_hidden", cfg.compression.min_hidden);
    }
    cfg.metric.validate();
    cfg.dataset.validate();
    cfg.compression.validate();
    if (cfg.encoder.latent_dim < 1 || cfg.encoder.trunk_widths.empty())
        throw ConfigError("config: encoder needs a latent dim and at least one trunk layer");
    if (cfg.encoder.batch_classes < 2 || cfg.encoder.batch_samples < 2)
        throw ConfigError("config: encoder batches need >= 2 classes and >= 2 samples per class");
    if (cfg.encoder_epochs < 1 || cfg.bnn_train.epochs < 1)
        throw ConfigError("config: epochs must be >= 1");
    if (cfg.bnn_train.batch_size < 1 || cfg.bnn_train.n_weight_samples < 1)
        throw ConfigError("config: bnn batch size and weight samples must be >= 1");
    if (cfg.eval_samples < 2) throw ConfigError("config: eval_samples must be >= 2");
    if (!(cfg.prior_sigma > 0.0)) throw ConfigError("config: prior sigma must be positive");
    for (std::size_t h : cfg.bnn_hidden)
        if (h < 1) throw ConfigError("config: bnn hidden widths must be >= 1");
    return cfg;
}

inline PipelineConfig load_config_file(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: cannot parse " + path.string() + ": " + e.what());
    }
    return parse_config(j);
}

// Canonical re-serialization of the parsed config; the hash changes exactly
// when a field that affects computed values changes. The output directory is
// placement, not computation, so it stays out of the hash.
inline nlohmann::json canonical_json(const PipelineConfig& cfg) {
    nlohmann::json j;
    j["seed"] = cfg.seed;
    auto& d = j["dataset"];
    for (const auto& c : cfg.dataset.classes) {
        nlohmann::json cj;
        cj["fundamental_hz"] = c.fundamental_hz;
        cj["amplitude"] = c.amplitude;
        cj["harmonics"] = c.harmonics;
        cj["noise_std"] = c.noise_std;
        d["classes"].push_back(cj);
    }
    d["window_len"] = cfg.dataset.window_len;
    d["windows_per_class"] = cfg.dataset.windows_per_class;
    d["unknown_class"] = cfg.dataset.unknown_class;
    d["sample_rate_hz"] = cfg.dataset.sample_rate_hz;
    d["corner_hz"] = cfg.dataset.corner_hz;
    d["phase_jitter"] = cfg.dataset.phase_jitter;
    d["freq_jitter"] = cfg.dataset.freq_jitter;
    d["amp_jitter"] = cfg.dataset.amp_jitter;
    d["format"] = cfg.dataset_format == DatasetFormat::Binary ? "binary" : "csv";
    auto& e = j["encoder"];
    e["latent_dim"] = cfg.encoder.latent_dim;
    e["trunk"] = cfg.encoder.trunk_widths;
    e["epochs"] = cfg.encoder_epochs;
    e["learning_rate"] = cfg.encoder.learning_rate;
    e["batch_classes"] = cfg.encoder.batch_classes;
    e["batch_samples"] = cfg.encoder.batch_samples;
    auto& m = j["metric"];
    m["mode"] = cfg.metric.mode == MetricMode::Triplet ? "triplet" : "quadruplet";
    m["alpha_margin"] = cfg.metric.alpha_margin;
    m["alpha1"] = cfg.metric.alpha1;
    m["alpha2"] = cfg.metric.alpha2;
    m["mining"] = cfg.metric.mining == MiningMode::Hard ? "hard" : "semi-hard";
    auto& t = j["tracker"];
    t["process_noise_q"] = cfg.tracker.process_noise_q;
    t["gate_prob"] = cfg.tracker.gate_prob;
    t["init_variance"] = cfg.tracker.init_variance;
    t["max_misses"] = cfg.tracker.max_misses;
    auto& b = j["bnn"];
    b["hidden"] = cfg.bnn_hidden;
    b["epochs"] = cfg.bnn_train.epochs;
    b["batch_size"] = cfg.bnn_train.batch_size;
    b["learning_rate"] = cfg.bnn_train.learning_rate;
    b["train_weight_samples"] = cfg.bnn_train.n_weight_samples;
    b["eval_samples"] = cfg.eval_samples;
    b["prior_sigma"] = cfg.prior_sigma;
    auto& x = j["explain"];
    x["samples"] = cfg.compression.explain_samples;
    x["coalitions"] = cfg.compression.n_coalitions;
    x["model_fn_samples"] = cfg.compression.model_fn_samples;
    x["keep_fraction"] = cfg.compression.keep_fraction;
    x["accuracy_tolerance"] = cfg.compression.accuracy_tolerance;
    x["min_hidden"] = cfg.compression.min_hidden;
    return j;
}

inline std::string config_hash(const PipelineConfig& cfg) {
    const std::uint64_t h = fnv1a64(canonical_json(cfg).dump());
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace uhar
