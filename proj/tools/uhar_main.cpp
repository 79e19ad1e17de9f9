// uhar: activity-recognition pipeline over synthetic IMU streams.
//
// Stage-wise commands share one output directory, so ablations (sota vs
// tracked, full vs compressed) reuse earlier checkpoints. Exit codes:
// 0 ok, 2 config error, 3 missing artifact, 4 numeric failure.

#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "uhar/pipeline.hpp"

namespace {

struct CommonFlags {
    std::string config_path;
    std::string out_dir;
    std::string metric;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "pipeline config file (JSON)")->required();
    cmd->add_option("--out", flags.out_dir, "output directory (overrides config and UHAR_OUT_DIR)");
    cmd->add_option("--metric", flags.metric, "metric loss: triplet or quadruplet")
        ->check(CLI::IsMember({"triplet", "quadruplet"}));
    cmd->add_option("--seed", flags.seed, "root seed override")->each([&flags](const std::string&) {
        flags.seed_set = true;
    });
}

uhar::PipelineConfig resolve_config(const CommonFlags& flags) {
    uhar::PipelineConfig cfg = uhar::load_config_file(flags.config_path);
    if (flags.seed_set) {
        cfg.seed = flags.seed;
        cfg.dataset.seed = uhar::derive_seed(cfg.seed, "data");
    }
    if (const char* env = std::getenv("UHAR_OUT_DIR"); env && *env) cfg.out_dir = env;
    if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
    if (!flags.metric.empty()) cfg.metric.mode = uhar::metric_mode_from_string(flags.metric);
    return cfg;
}

uhar::RunPaths paths_for(const uhar::PipelineConfig& cfg) { return {cfg.out_dir}; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bayesian activity recognition pipeline"};
    app.require_subcommand(1);

    CommonFlags flags;
    std::string mode = "tracked";
    bool with_unknown = false;

    CLI::App* generate = app.add_subcommand("generate", "synthesize the dataset");
    add_common(generate, flags);

    CLI::App* train_encoder = app.add_subcommand("train-encoder", "train the variational encoder");
    add_common(train_encoder, flags);

    CLI::App* train_bnn = app.add_subcommand("train-bnn", "train the Bayesian classifier");
    add_common(train_bnn, flags);
    train_bnn->add_option("--mode", mode, "embedding path: sota or tracked")
        ->check(CLI::IsMember({"sota", "tracked"}));

    CLI::App* evaluate = app.add_subcommand("evaluate", "prediction report and accuracy/OOD summary");
    add_common(evaluate, flags);
    evaluate->add_option("--mode", mode, "embedding path: sota or tracked")
        ->check(CLI::IsMember({"sota", "tracked"}));
    evaluate->add_flag("--with-unknown", with_unknown, "also score the held-out class");

    CLI::App* explain = app.add_subcommand("explain", "SHAP exports and similarity matrices");
    add_common(explain, flags);
    explain->add_option("--mode", mode, "embedding path: sota or tracked")
        ->check(CLI::IsMember({"sota", "tracked"}));

    CLI::App* compress = app.add_subcommand("compress", "closed-loop SHAP compression");
    add_common(compress, flags);
    compress->add_option("--mode", mode, "embedding path: sota or tracked")
        ->check(CLI::IsMember({"sota", "tracked"}));

    CLI::App* report = app.add_subcommand("report", "consolidated comparison report");
    add_common(report, flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        const uhar::PipelineConfig cfg = resolve_config(flags);
        const uhar::RunPaths paths = paths_for(cfg);
        const bool tracked = mode == "tracked";

        if (generate->parsed()) {
            uhar::run_generate(cfg, paths);
            std::cout << "dataset written to " << paths.dataset_dir().string() << "\n";
        } else if (train_encoder->parsed()) {
            uhar::run_train_encoder(cfg, paths);
            std::cout << "encoder checkpoint: "
                      << paths.encoder_ckpt(uhar::metric_name(cfg.metric.mode)).string() << "\n";
        } else if (train_bnn->parsed()) {
            uhar::run_train_bnn(cfg, paths, tracked);
            std::cout << "classifier checkpoint: "
                      << paths.bnn_ckpt(uhar::metric_name(cfg.metric.mode), mode).string() << "\n";
        } else if (evaluate->parsed()) {
            const uhar::EvalSummary s = uhar::run_evaluate(cfg, paths, tracked, with_unknown);
            std::cout << "accuracy=" << uhar::fmt_double(s.accuracy)
                      << " mean_ood=" << uhar::fmt_double(s.mean_ood_known);
            if (with_unknown) std::cout << " auroc_unknown=" << uhar::fmt_double(s.auroc_unknown);
            std::cout << "\n";
        } else if (explain->parsed()) {
            uhar::run_explain(cfg, paths, tracked);
            std::cout << "shap exports under " << paths.out.string() << "\n";
        } else if (compress->parsed()) {
            const uhar::CompressionReport r = uhar::run_compress(cfg, paths, tracked);
            std::cout << "compression: " << r.iterations.front().param_count << " -> "
                      << r.final_model.param_count() << " params (" << r.stop_reason << ")\n";
        } else if (report->parsed()) {
            uhar::run_report(cfg, paths);
            std::cout << "report: " << paths.report_txt().string() << "\n";
        }
        return 0;
    } catch (const uhar::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const uhar::ArtifactError& e) {
        std::cerr << "missing artifact: " << e.what() << "\n";
        return 3;
    } catch (const uhar::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
