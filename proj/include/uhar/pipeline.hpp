#pragma once

#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "uhar/config.hpp"
#include "uhar/explain.hpp"
#include "uhar/io.hpp"
#include "uhar/metrics.hpp"

namespace uhar {

inline std::string metric_name(MetricMode m) {
    return m == MetricMode::Triplet ? "triplet" : "quadruplet";
}

inline std::string mode_name(bool tracked) { return tracked ? "tracked" : "sota"; }

// Artifact layout under one output directory; stages reuse each other's
// files by these names.
struct RunPaths {
    std::filesystem::path out;

    std::filesystem::path dataset_dir() const { return out / "dataset"; }
    std::filesystem::path manifest() const { return out / "run_manifest.json"; }
    std::filesystem::path encoder_ckpt(const std::string& metric) const {
        return out / ("encoder_" + metric + ".ckpt");
    }
    std::filesystem::path encoder_trace(const std::string& metric) const {
        return out / ("trace_encoder_" + metric + ".csv");
    }
    std::filesystem::path bnn_ckpt(const std::string& metric, const std::string& mode) const {
        return out / ("bnn_" + metric + "_" + mode + ".ckpt");
    }
    std::filesystem::path bnn_trace(const std::string& metric, const std::string& mode) const {
        return out / ("trace_bnn_" + metric + "_" + mode + ".csv");
    }
    std::filesystem::path ood_json(const std::string& metric, const std::string& mode) const {
        return out / ("ood_" + metric + "_" + mode + ".json");
    }
    std::filesystem::path preds_csv(const std::string& metric, const std::string& mode) const {
        return out / ("preds_" + metric + "_" + mode + ".csv");
    }
    std::filesystem::path summary_csv(const std::string& metric, const std::string& mode) const {
        return out / ("summary_" + metric + "_" + mode + ".csv");
    }
    std::filesystem::path tracker_trace(const std::string& metric) const {
        return out / ("trace_tracker_" + metric + ".csv");
    }
    std::filesystem::path shap_csv(const std::string& metric, const std::string& mode,
                                   const std::string& what) const {
        return out / ("shap_" + metric + "_" + mode + "_" + what + ".csv");
    }
    std::filesystem::path shap_summary_json(const std::string& metric, const std::string& mode) const {
        return out / ("shap_" + metric + "_" + mode + "_summary.json");
    }
    std::filesystem::path similarity_csv(const std::string& metric) const {
        return out / ("similarity_" + metric + ".csv");
    }
    std::filesystem::path compress_csv(const std::string& metric, const std::string& mode) const {
        return out / ("compress_" + metric + "_" + mode + ".csv");
    }
    std::filesystem::path compress_json(const std::string& metric, const std::string& mode) const {
        return out / ("compress_" + metric + "_" + mode + ".json");
    }
    std::filesystem::path compressed_ckpt(const std::string& metric, const std::string& mode) const {
        return out / ("bnn_" + metric + "_" + mode + "_compressed.ckpt");
    }
    std::filesystem::path report_csv() const { return out / "report.csv"; }
    std::filesystem::path report_txt() const { return out / "report.txt"; }
};

namespace detail {

inline std::uint64_t stage_seed(const PipelineConfig& cfg, const std::string& stage) {
    return derive_seed(cfg.seed, "stage:" + stage);
}

inline void update_manifest(const RunPaths& paths, const PipelineConfig& cfg, const std::string& stage,
                            const nlohmann::json& entry) {
    nlohmann::json m;
    if (std::filesystem::exists(paths.manifest())) {
        try {
            m = nlohmann::json::parse(read_file(paths.manifest()));
        } catch (const nlohmann::json::exception&) {
            m = nlohmann::json::object();
        }
    }
    m["tool_version"] = kToolVersion;
    m["config_hash"] = config_hash(cfg);
    m["seed"] = cfg.seed;
    m["stages"][stage] = entry;
    atomic_write_file(paths.manifest(), m.dump(2) + "\n");
}

inline DatasetSplit load_dataset_stage(const RunPaths& paths) {
    if (!std::filesystem::exists(paths.dataset_dir() / "manifest.txt"))
        throw ArtifactError("dataset missing under " + paths.dataset_dir().string() +
                            "; run the generate stage first");
    return load_dataset(paths.dataset_dir());
}

inline EncoderModel load_encoder_stage(const RunPaths& paths, const std::string& metric) {
    const auto p = paths.encoder_ckpt(metric);
    if (!std::filesystem::exists(p))
        throw ArtifactError("encoder checkpoint " + p.string() + " missing; run train-encoder with --metric " +
                            metric);
    return load_encoder(p);
}

inline FcBnnModel load_bnn_stage(const RunPaths& paths, const std::string& metric,
                                 const std::string& mode) {
    const auto p = paths.bnn_ckpt(metric, mode);
    if (!std::filesystem::exists(p))
        throw ArtifactError("classifier checkpoint " + p.string() + " missing; run train-bnn with --mode " +
                            mode);
    return load_fcbnn(p);
}

// Tracked embeddings: windows of the same label form one tracker session;
// results are scattered back to the original positions.
inline std::vector<EmbeddingDistribution> embed_windows(const EncoderModel& enc,
                                                        const std::vector<ImuWindow>& windows,
                                                        bool tracked, const KalmanConfig& tracker_cfg,
                                                        std::vector<TrackStepTrace>* trace = nullptr) {
    std::vector<EmbeddingDistribution> raw(windows.size());
    for (std::size_t i = 0; i < windows.size(); ++i) raw[i] = encode(enc, windows[i]);
    if (!tracked) return raw;

    std::map<int, std::vector<std::size_t>> sessions;
    for (std::size_t i = 0; i < windows.size(); ++i) sessions[windows[i].label].push_back(i);
    std::vector<EmbeddingDistribution> out(windows.size());
    for (const auto& [label, idx] : sessions) {
        std::vector<EmbeddingDistribution> stream;
        stream.reserve(idx.size());
        for (std::size_t i : idx) stream.push_back(raw[i]);
        std::vector<TrackStepTrace> session_trace;
        auto smoothed = track_stream(stream, tracker_cfg, trace ? &session_trace : nullptr);
        for (std::size_t k = 0; k < idx.size(); ++k) out[idx[k]] = std::move(smoothed[k]);
        if (trace) trace->insert(trace->end(), session_trace.begin(), session_trace.end());
    }
    return out;
}

inline EmbeddingDataset embedding_dataset(const EncoderModel& enc, const std::vector<ImuWindow>& windows,
                                          bool tracked, const KalmanConfig& tracker_cfg) {
    EmbeddingDataset ds;
    ds.items = embed_windows(enc, windows, tracked, tracker_cfg);
    ds.labels.reserve(windows.size());
    for (const auto& w : windows) ds.labels.push_back(w.label);
    return ds;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// stages

inline void run_generate(const PipelineConfig& cfg, const RunPaths& paths) {
    std::filesystem::create_directories(paths.out);
    const DatasetSplit ds = generate_synthetic(cfg.dataset);
    save_dataset(paths.dataset_dir(), ds, cfg.dataset_format);
    nlohmann::json entry;
    entry["artifacts"] = {paths.dataset_dir().filename().string()};
    entry["metrics"] = {{"train", ds.train.size()},
                        {"validation", ds.validation.size()},
                        {"test", ds.test.size()},
                        {"unknown", ds.unknown.size()},
                        {"known_classes", ds.num_known_classes}};
    detail::update_manifest(paths, cfg, "generate", entry);
}

inline void run_train_encoder(const PipelineConfig& cfg, const RunPaths& paths) {
    const std::string metric = metric_name(cfg.metric.mode);
    const DatasetSplit ds = detail::load_dataset_stage(paths);
    EncoderTrainResult result = train_encoder(ds, cfg.metric, cfg.encoder_epochs,
                                              detail::stage_seed(cfg, "train-encoder-" + metric),
                                              cfg.encoder);
    save_encoder(paths.encoder_ckpt(metric), result.model);

    std::ostringstream csv;
    csv << "epoch,recon,kl,metric,total\n";
    for (const auto& r : result.trace)
        csv << r.epoch << ',' << fmt_double(r.recon) << ',' << fmt_double(r.kl) << ','
            << fmt_double(r.metric) << ',' << fmt_double(r.total) << "\n";
    atomic_write_file(paths.encoder_trace(metric), csv.str());

    nlohmann::json entry;
    entry["artifacts"] = {paths.encoder_ckpt(metric).filename().string(),
                          paths.encoder_trace(metric).filename().string()};
    entry["metrics"] = {{"final_total", result.trace.back().total},
                        {"initial_total", result.trace.front().total},
                        {"epochs", result.trace.size()}};
    detail::update_manifest(paths, cfg, "train-encoder-" + metric, entry);
}

inline void run_train_bnn(const PipelineConfig& cfg, const RunPaths& paths, bool tracked) {
    const std::string metric = metric_name(cfg.metric.mode);
    const std::string mode = mode_name(tracked);
    const std::string stage = "train-bnn-" + metric + "-" + mode;
    const std::uint64_t seed = detail::stage_seed(cfg, stage);

    const DatasetSplit ds = detail::load_dataset_stage(paths);
    const EncoderModel enc = detail::load_encoder_stage(paths, metric);
    const EmbeddingDataset train = detail::embedding_dataset(enc, ds.train, tracked, cfg.tracker);
    const EmbeddingDataset val = detail::embedding_dataset(enc, ds.validation, tracked, cfg.tracker);

    Rng init_rng(derive_seed(seed, "init"));
    FcBnnModel model =
        build_fcbnn(cfg.encoder.latent_dim, ds.num_known_classes, cfg.bnn_hidden, init_rng, cfg.prior_sigma);
    const auto trace = train_fcbnn(model, train, val, cfg.bnn_train, seed);
    save_fcbnn(paths.bnn_ckpt(metric, mode), model);

    std::ostringstream csv;
    csv << "epoch,loss,val_accuracy\n";
    for (const auto& r : trace)
        csv << r.epoch << ',' << fmt_double(r.loss) << ',' << fmt_double(r.val_accuracy) << "\n";
    atomic_write_file(paths.bnn_trace(metric, mode), csv.str());

    // OOD threshold from known-class validation scores
    std::vector<double> scores(val.size());
    for (std::size_t i = 0; i < val.size(); ++i)
        scores[i] = ood_score(predict(model, val.items[i], cfg.eval_samples, derive_seed(seed, "ood-val", i)));
    const double threshold = calibrate_ood_threshold(scores);

    nlohmann::json ood;
    ood["threshold"] = threshold;
    ood["calibration"] = "p99 of known-class validation ood scores";
    ood["metric"] = metric;
    ood["mode"] = mode;
    ood["n_validation"] = scores.size();
    atomic_write_file(paths.ood_json(metric, mode), ood.dump(2) + "\n");

    nlohmann::json entry;
    entry["artifacts"] = {paths.bnn_ckpt(metric, mode).filename().string(),
                          paths.bnn_trace(metric, mode).filename().string(),
                          paths.ood_json(metric, mode).filename().string()};
    entry["metrics"] = {{"final_loss", trace.back().loss},
                        {"final_val_accuracy", trace.back().val_accuracy},
                        {"ood_threshold", threshold},
                        {"param_count", model.param_count()}};
    detail::update_manifest(paths, cfg, stage, entry);
}

struct EvalSummary {
    double accuracy = 0.0;
    double mean_ood_known = 0.0;
    bool with_unknown = false;
    double mean_ood_unknown = 0.0;
    double auroc_unknown = 0.0;
    double unknown_reject_rate = 0.0;
};

inline EvalSummary run_evaluate(const PipelineConfig& cfg, const RunPaths& paths, bool tracked,
                                bool with_unknown) {
    const std::string metric = metric_name(cfg.metric.mode);
    const std::string mode = mode_name(tracked);
    const std::string stage = "evaluate-" + metric + "-" + mode;
    const std::uint64_t seed = detail::stage_seed(cfg, stage);

    const DatasetSplit ds = detail::load_dataset_stage(paths);
    const EncoderModel enc = detail::load_encoder_stage(paths, metric);
    const FcBnnModel model = detail::load_bnn_stage(paths, metric, mode);
    const auto ood_path = paths.ood_json(metric, mode);
    if (!std::filesystem::exists(ood_path))
        throw ArtifactError("ood calibration " + ood_path.string() + " missing; run train-bnn with --mode " +
                            mode);
    const double threshold = nlohmann::json::parse(read_file(ood_path)).at("threshold").get<double>();

    if (with_unknown && ds.unknown.empty())
        throw ConfigError("dataset has no held-out class; regenerate with an unknown_class to use --with-unknown");

    std::vector<TrackStepTrace> tracker_rows;
    const auto known = detail::embed_windows(enc, ds.test, tracked, cfg.tracker,
                                             tracked ? &tracker_rows : nullptr);
    std::vector<EmbeddingDistribution> unknown;
    if (with_unknown)
        unknown = detail::embed_windows(enc, ds.unknown, tracked, cfg.tracker, nullptr);

    std::ostringstream csv;
    const std::size_t K = model.num_classes;
    csv << "window_id,true_label,argmax";
    for (std::size_t k = 0; k < K; ++k) csv << ",prob_mean_" << k;
    for (std::size_t k = 0; k < K; ++k) csv << ",prob_std_" << k;
    csv << ",entropy,ood_score,is_ood,mode\n";

    EvalSummary summary;
    summary.with_unknown = with_unknown;
    std::vector<int> pred, truth;
    std::vector<double> ood_known, ood_unknown;

    auto emit = [&](std::size_t id, int true_label, const EmbeddingDistribution& e, std::uint64_t s) {
        const PredictiveResult r = predict(model, e, cfg.eval_samples, s);
        const int am = argmax_class(r);
        const double score = ood_score(r);
        csv << id << ',' << true_label << ',' << am;
        for (double v : r.prob_mean) csv << ',' << fmt_double(v);
        for (double v : r.prob_std) csv << ',' << fmt_double(v);
        csv << ',' << fmt_double(r.entropy) << ',' << fmt_double(score) << ','
            << (score > threshold ? 1 : 0) << ',' << mode << "\n";
        if (true_label >= 0) {
            pred.push_back(am);
            truth.push_back(true_label);
            ood_known.push_back(score);
        } else {
            ood_unknown.push_back(score);
        }
        return score;
    };

    for (std::size_t i = 0; i < known.size(); ++i)
        emit(i, ds.test[i].label, known[i], derive_seed(seed, "predict", i));
    for (std::size_t i = 0; i < unknown.size(); ++i)
        emit(known.size() + i, kUnknownLabel, unknown[i], derive_seed(seed, "predict-unknown", i));
    atomic_write_file(paths.preds_csv(metric, mode), csv.str());

    if (tracked) {
        std::ostringstream tcsv;
        tcsv << "step,accepted,reinitialized,mahalanobis,trace_p\n";
        for (const auto& r : tracker_rows)
            tcsv << r.step << ',' << (r.accepted ? 1 : 0) << ',' << (r.reinitialized ? 1 : 0) << ','
                 << fmt_double(r.mahalanobis) << ',' << fmt_double(r.trace_p) << "\n";
        atomic_write_file(paths.tracker_trace(metric), tcsv.str());
    }

    summary.accuracy = accuracy(pred, truth);
    for (double s : ood_known) summary.mean_ood_known += s;
    summary.mean_ood_known /= static_cast<double>(ood_known.size());

    std::ostringstream sum;
    sum << "measure,value\n";
    sum << "accuracy," << fmt_double(summary.accuracy) << "\n";
    sum << "mean_ood_score," << fmt_double(summary.mean_ood_known) << "\n";
    if (with_unknown) {
        for (double s : ood_unknown) summary.mean_ood_unknown += s;
        summary.mean_ood_unknown /= static_cast<double>(ood_unknown.size());
        summary.auroc_unknown = auroc(ood_unknown, ood_known);
        std::size_t rejected = 0;
        for (double s : ood_unknown)
            if (s > threshold) ++rejected;
        summary.unknown_reject_rate = static_cast<double>(rejected) / static_cast<double>(ood_unknown.size());
        sum << "mean_ood_score_unknown," << fmt_double(summary.mean_ood_unknown) << "\n";
        sum << "auroc_unknown," << fmt_double(summary.auroc_unknown) << "\n";
        sum << "unknown_reject_rate," << fmt_double(summary.unknown_reject_rate) << "\n";
    }
    atomic_write_file(paths.summary_csv(metric, mode), sum.str());

    nlohmann::json entry;
    entry["artifacts"] = {paths.preds_csv(metric, mode).filename().string(),
                          paths.summary_csv(metric, mode).filename().string()};
    entry["metrics"] = {{"accuracy", summary.accuracy}, {"mean_ood_known", summary.mean_ood_known}};
    if (with_unknown) {
        entry["metrics"]["mean_ood_unknown"] = summary.mean_ood_unknown;
        entry["metrics"]["auroc_unknown"] = summary.auroc_unknown;
    }
    detail::update_manifest(paths, cfg, stage, entry);
    return summary;
}

inline void run_explain(const PipelineConfig& cfg, const RunPaths& paths, bool tracked) {
    const std::string metric = metric_name(cfg.metric.mode);
    const std::string mode = mode_name(tracked);
    const std::string stage = "explain-" + metric + "-" + mode;
    const std::uint64_t seed = detail::stage_seed(cfg, stage);

    const DatasetSplit ds = detail::load_dataset_stage(paths);
    const EncoderModel enc = detail::load_encoder_stage(paths, metric);
    const FcBnnModel model = detail::load_bnn_stage(paths, metric, mode);

    const EmbeddingDataset train = detail::embedding_dataset(enc, ds.train, tracked, cfg.tracker);
    const EmbeddingDataset val = detail::embedding_dataset(enc, ds.validation, tracked, cfg.tracker);

    const std::size_t M = model.kept.size();
    const ModelFn fn = detail::deterministic_model_fn(model, cfg.compression.model_fn_samples,
                                                      derive_seed(seed, "fn"));
    std::vector<Vec> train_features;
    train_features.reserve(train.size());
    for (const auto& item : train.items) train_features.push_back(embedding_features(item, model));
    const std::vector<Vec> background{detail::background_mean(train_features)};

    ShapConfig shap_cfg;
    shap_cfg.n_coalitions = cfg.compression.n_coalitions;
    shap_cfg.seed = derive_seed(seed, "coalitions");
    shap_cfg.groups.resize(M);
    for (std::size_t i = 0; i < M; ++i) shap_cfg.groups[i] = {i, M + i};

    const std::size_t n_explain = std::min(cfg.compression.explain_samples, val.size());
    const std::size_t stride = std::max<std::size_t>(1, val.size() / std::max<std::size_t>(n_explain, 1));
    std::vector<ShapExplanation> explanations;
    std::vector<Vec> feature_values;
    std::ostringstream exp_csv;
    exp_csv << "input_id,class,feature,value,phi\n";
    std::size_t done = 0;
    for (std::size_t s = 0; s < val.size() && done < n_explain; s += stride, ++done) {
        const Vec x = embedding_features(val.items[s], model);
        ShapExplanation ex = kernel_shap(fn, x, background, shap_cfg);
        Vec values(M);
        for (std::size_t i = 0; i < M; ++i) values[i] = x[i];  // latent mean per feature group
        for (std::size_t i = 0; i < M; ++i)
            for (std::size_t k = 0; k < ex.phi.cols; ++k)
                exp_csv << s << ',' << k << ',' << i << ',' << fmt_double(values[i]) << ','
                        << fmt_double(ex.phi(i, k)) << "\n";
        feature_values.push_back(std::move(values));
        explanations.push_back(std::move(ex));
    }
    atomic_write_file(paths.shap_csv(metric, mode, "explanations"), exp_csv.str());

    const GlobalShapSummary summary = global_shap_summary(explanations, feature_values);
    std::ostringstream rank_csv;
    rank_csv << "rank,feature,latent_dim,mean_abs_phi\n";
    for (std::size_t r = 0; r < summary.ranking.size(); ++r)
        rank_csv << r << ',' << summary.ranking[r] << ',' << model.kept[summary.ranking[r]] << ','
                 << fmt_double(summary.mean_abs_phi[summary.ranking[r]]) << "\n";
    atomic_write_file(paths.shap_csv(metric, mode, "ranking"), rank_csv.str());

    std::ostringstream bee_csv;
    bee_csv << "sample,feature,value,phi\n";
    for (const auto& p : summary.points)
        bee_csv << p.sample << ',' << p.feature << ',' << fmt_double(p.value) << ',' << fmt_double(p.phi)
                << "\n";
    atomic_write_file(paths.shap_csv(metric, mode, "beeswarm"), bee_csv.str());

    std::ostringstream force_csv;
    force_csv << "sample,class,base,output,feature,contribution\n";
    for (const auto& row : summary.force)
        for (std::size_t i = 0; i < row.contributions.size(); ++i)
            force_csv << row.sample << ',' << row.cls << ',' << fmt_double(row.base) << ','
                      << fmt_double(row.output) << ',' << i << ',' << fmt_double(row.contributions[i])
                      << "\n";
    atomic_write_file(paths.shap_csv(metric, mode, "force"), force_csv.str());

    nlohmann::json sj;
    sj["ranking"] = summary.ranking;
    sj["mean_abs_phi"] = summary.mean_abs_phi;
    sj["base_values"] = explanations.front().base_value;
    sj["n_explanations"] = explanations.size();
    atomic_write_file(paths.shap_summary_json(metric, mode), sj.dump(2) + "\n");

    // class similarity for both embedding paths
    std::ostringstream sim_csv;
    sim_csv << "mode,known_class,pearson_r\n";
    for (const bool sim_tracked : {false, true}) {
        const auto test_emb = detail::embedding_dataset(enc, ds.test, sim_tracked, cfg.tracker);
        const auto unk_emb = detail::embedding_dataset(enc, ds.unknown, sim_tracked, cfg.tracker);
        if (unk_emb.size() == 0) continue;
        std::map<int, Vec> sums;
        std::map<int, std::size_t> counts;
        for (std::size_t i = 0; i < test_emb.size(); ++i) {
            Vec& s = sums.try_emplace(test_emb.labels[i], Vec(enc.latent_dim, 0.0)).first->second;
            for (std::size_t k = 0; k < enc.latent_dim; ++k) s[k] += test_emb.items[i].mean[k];
            ++counts[test_emb.labels[i]];
        }
        std::vector<Vec> known_means;
        for (auto& [label, s] : sums) {
            for (double& v : s) v /= static_cast<double>(counts[label]);
            known_means.push_back(s);
        }
        Vec unk_mean(enc.latent_dim, 0.0);
        for (const auto& e : unk_emb.items)
            for (std::size_t k = 0; k < enc.latent_dim; ++k) unk_mean[k] += e.mean[k];
        for (double& v : unk_mean) v /= static_cast<double>(unk_emb.size());

        const SimilarityMatrix sim = class_similarity(known_means, unk_mean, mode_name(sim_tracked));
        for (std::size_t c = 0; c < sim.r.size(); ++c)
            sim_csv << sim.mode << ',' << c << ',' << fmt_double(sim.r[c]) << "\n";
    }
    atomic_write_file(paths.similarity_csv(metric), sim_csv.str());

    nlohmann::json entry;
    entry["artifacts"] = {paths.shap_csv(metric, mode, "explanations").filename().string(),
                          paths.shap_csv(metric, mode, "ranking").filename().string(),
                          paths.similarity_csv(metric).filename().string()};
    entry["metrics"] = {{"n_explanations", explanations.size()},
                        {"top_feature", summary.ranking.front()}};
    detail::update_manifest(paths, cfg, stage, entry);
}

inline CompressionReport run_compress(const PipelineConfig& cfg, const RunPaths& paths, bool tracked) {
    const std::string metric = metric_name(cfg.metric.mode);
    const std::string mode = mode_name(tracked);
    const std::string stage = "compress-" + metric + "-" + mode;
    const std::uint64_t seed = detail::stage_seed(cfg, stage);

    const DatasetSplit ds = detail::load_dataset_stage(paths);
    const EncoderModel enc = detail::load_encoder_stage(paths, metric);
    const FcBnnModel baseline = detail::load_bnn_stage(paths, metric, mode);
    const EmbeddingDataset train = detail::embedding_dataset(enc, ds.train, tracked, cfg.tracker);
    const EmbeddingDataset val = detail::embedding_dataset(enc, ds.validation, tracked, cfg.tracker);

    CompressionReport report = compress_loop(train, val, baseline, cfg.compression, cfg.bnn_train, seed);
    save_fcbnn(paths.compressed_ckpt(metric, mode), report.final_model);

    std::ostringstream csv;
    csv << "iteration,accepted,kept_count,kept_dims,h1,h2,h3,param_count,val_accuracy\n";
    for (std::size_t i = 0; i < report.iterations.size(); ++i) {
        const auto& it = report.iterations[i];
        std::string dims;
        for (std::size_t k = 0; k < it.kept.size(); ++k)
            dims += (k ? ";" : "") + std::to_string(it.kept[k]);
        csv << i << ',' << (it.accepted ? 1 : 0) << ',' << it.kept.size() << ',' << dims << ','
            << it.hidden[0] << ',' << it.hidden[1] << ',' << it.hidden[2] << ',' << it.param_count << ','
            << fmt_double(it.val_accuracy) << "\n";
    }
    atomic_write_file(paths.compress_csv(metric, mode), csv.str());

    nlohmann::json cj;
    cj["stop_reason"] = report.stop_reason;
    cj["baseline_params"] = report.iterations.front().param_count;
    cj["final_params"] = report.final_model.param_count();
    cj["baseline_accuracy"] = report.iterations.front().val_accuracy;
    double final_acc = report.iterations.front().val_accuracy;
    for (const auto& it : report.iterations)
        if (it.accepted) final_acc = it.val_accuracy;
    cj["final_accuracy"] = final_acc;
    cj["kept_dims"] = report.final_model.kept;
    atomic_write_file(paths.compress_json(metric, mode), cj.dump(2) + "\n");

    nlohmann::json entry;
    entry["artifacts"] = {paths.compress_csv(metric, mode).filename().string(),
                          paths.compressed_ckpt(metric, mode).filename().string()};
    entry["metrics"] = {{"iterations", report.iterations.size()},
                        {"stop_reason", report.stop_reason},
                        {"final_params", report.final_model.param_count()}};
    detail::update_manifest(paths, cfg, stage, entry);
    return report;
}

namespace detail {

inline std::map<std::string, std::string> read_summary_csv(const std::filesystem::path& p) {
    std::map<std::string, std::string> kv;
    std::istringstream in(read_file(p));
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        const auto comma = line.find(',');
        if (comma == std::string::npos) continue;
        kv[line.substr(0, comma)] = line.substr(comma + 1);
    }
    return kv;
}

}  // namespace detail

// Consolidated comparison: SOTA vs tracked from the evaluate summaries,
// full vs compressed from the compression report when present.
inline void run_report(const PipelineConfig& cfg, const RunPaths& paths) {
    const std::string metric = metric_name(cfg.metric.mode);
    std::ostringstream csv, txt;
    csv << "metric,mode,variant,measure,value\n";
    txt << "pipeline comparison (" << metric << " metric)\n";
    txt << "=========================================\n";

    for (const char* mode : {"sota", "tracked"}) {
        const auto p = paths.summary_csv(metric, mode);
        if (!std::filesystem::exists(p))
            throw ArtifactError("summary " + p.string() + " missing; run evaluate with --mode " + mode);
        const auto kv = detail::read_summary_csv(p);
        for (const auto& [measure, value] : kv) {
            csv << metric << ',' << mode << ",full," << measure << ',' << value << "\n";
            txt << "  " << mode << " " << measure << " = " << value << "\n";
        }
    }

    for (const char* mode : {"sota", "tracked"}) {
        const auto p = paths.compress_json(metric, mode);
        if (!std::filesystem::exists(p)) continue;
        const auto cj = nlohmann::json::parse(read_file(p));
        csv << metric << ',' << mode << ",compressed,param_count,"
            << cj.at("final_params").get<std::size_t>() << "\n";
        csv << metric << ',' << mode << ",compressed,val_accuracy,"
            << fmt_double(cj.at("final_accuracy").get<double>()) << "\n";
        csv << metric << ',' << mode << ",full,param_count,"
            << cj.at("baseline_params").get<std::size_t>() << "\n";
        txt << "  " << mode << " compressed: " << cj.at("baseline_params").get<std::size_t>() << " -> "
            << cj.at("final_params").get<std::size_t>() << " params, val accuracy "
            << fmt_double(cj.at("final_accuracy").get<double>()) << " (" << cj.at("stop_reason").get<std::string>()
            << ")\n";
    }

    if (std::filesystem::exists(paths.similarity_csv(metric))) {
        txt << "  class similarity table: " << paths.similarity_csv(metric).filename().string() << "\n";
    }

    atomic_write_file(paths.report_csv(), csv.str());
    atomic_write_file(paths.report_txt(), txt.str());

    nlohmann::json entry;
    entry["artifacts"] = {paths.report_csv().filename().string(), paths.report_txt().filename().string()};
    entry["metrics"] = nlohmann::json::object();
    detail::update_manifest(paths, cfg, "report", entry);
}

}  // namespace uhar
