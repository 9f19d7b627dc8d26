// seqrec: dataset prep, repetition statistics, training, evaluation, grid
// search, and report aggregation for partitioned-softmax sequential
// recommenders. Every command validates its config up front and writes a
// manifest that is sufficient to reproduce the run.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "seqrec/experiment.hpp"

namespace {

seqrec::ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream is(path);
    SEQREC_CHECK(is.good(), "io", "cannot open config '", path, "'");
    seqrec::json doc;
    try {
        doc = seqrec::json::parse(is);
    } catch (const seqrec::json::exception& e) {
        throw seqrec::Error("config", std::string("config '") + path +
                                          "' is not valid JSON: " + e.what());
    }
    return seqrec::parse_experiment_config(doc);
}

void apply_overrides(seqrec::ExperimentConfig& cfg, long long seed,
                     int threads) {
    if (seed >= 0) {
        cfg.train.seed = static_cast<std::uint64_t>(seed);
        cfg.raw["train"]["seed"] = cfg.train.seed;
    }
    if (threads > 0) {
        cfg.train.threads = threads;
        cfg.raw["train"]["threads"] = threads;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"partitioned-softmax sequential recommendation toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_dir, checkpoint, split = "test";
    std::string sequences_path, catalog_path;
    long long seed = -1;
    int threads = 0;
    std::vector<std::string> run_dirs;

    auto add_common = [&](CLI::App* cmd, bool needs_config) {
        auto* opt = cmd->add_option("--config", config_path, "experiment config (JSON)");
        if (needs_config) opt->required();
        cmd->add_option("--out", out_dir, "output directory")->required();
        cmd->add_option("--seed", seed, "override train.seed");
        cmd->add_option("--threads", threads,
                        "worker cap (also see SEQREC_MAX_THREADS)");
    };

    CLI::App* prep = app.add_subcommand(
        "prep", "ingest interactions, filter, write sequences + catalog");
    add_common(prep, true);

    CLI::App* stats = app.add_subcommand(
        "stats", "repetition-probability curves as CSV");
    add_common(stats, false);
    stats->add_option("--sequences", sequences_path,
                      "prepped sequences.tsv (alternative to --config)");
    stats->add_option("--catalog", catalog_path, "catalog.tsv for --sequences");

    CLI::App* train_cmd = app.add_subcommand("train", "train one configuration");
    add_common(train_cmd, true);

    CLI::App* evaluate = app.add_subcommand(
        "evaluate", "evaluate a checkpoint on the test or valid split");
    add_common(evaluate, true);
    evaluate->add_option("--checkpoint", checkpoint, "checkpoint.bin")->required();
    evaluate->add_option("--split", split, "test|valid");

    CLI::App* grid = app.add_subcommand(
        "grid", "exhaustive hyperparameter grid, selected by valid NDCG");
    add_common(grid, true);

    CLI::App* report = app.add_subcommand(
        "report", "aggregate run directories into tables with geometric means");
    report->add_option("dirs", run_dirs, "train run directories")->required();
    report->add_option("--out", out_dir, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (prep->parsed()) {
            auto cfg = load_config_file(config_path);
            seqrec::run_prep_command(cfg, out_dir);
            std::cout << "prep: wrote " << out_dir << "/sequences.tsv and catalog.tsv\n";
        } else if (stats->parsed()) {
            seqrec::ExperimentConfig cfg;
            if (!config_path.empty()) {
                cfg = load_config_file(config_path);
            } else {
                SEQREC_CHECK(!sequences_path.empty() && !catalog_path.empty(),
                             "cli",
                             "stats needs --config or --sequences with --catalog");
                seqrec::json doc;
                doc["dataset"]["sequences"] = sequences_path;
                doc["dataset"]["catalog"] = catalog_path;
                cfg = seqrec::parse_experiment_config(doc);
            }
            seqrec::run_stats_command(cfg, out_dir);
            std::cout << "stats: wrote " << out_dir << "/repetition.csv\n";
        } else if (train_cmd->parsed()) {
            auto cfg = load_config_file(config_path);
            apply_overrides(cfg, seed, threads);
            auto summary = seqrec::run_train_command(cfg, out_dir);
            std::cout << "train: best epoch " << summary.best_epoch
                      << ", valid ndcg@" << cfg.eval.k << " "
                      << summary.best_valid_ndcg << ", test ndcg@" << cfg.eval.k
                      << " " << summary.test.ndcg << "\n";
        } else if (evaluate->parsed()) {
            auto cfg = load_config_file(config_path);
            apply_overrides(cfg, seed, threads);
            auto metrics =
                seqrec::run_evaluate_command(cfg, checkpoint, split, out_dir);
            std::cout << "evaluate: " << split << " ndcg@" << cfg.eval.k << " "
                      << metrics.ndcg << ", hr " << metrics.hr << ", mrr "
                      << metrics.mrr << "\n";
        } else if (grid->parsed()) {
            auto cfg = load_config_file(config_path);
            apply_overrides(cfg, seed, threads);
            auto rows = seqrec::run_grid_command(cfg, out_dir);
            for (const auto& row : rows) {
                if (!row.selected) continue;
                std::cout << "grid: selected lr " << row.learning_rate << ", batch "
                          << row.batch_size << ", dropout " << row.dropout
                          << " (valid ndcg " << row.valid_ndcg << ", test ndcg "
                          << row.summary.test.ndcg << ")\n";
            }
        } else if (report->parsed()) {
            seqrec::run_report_command(run_dirs, out_dir, std::cout);
            std::cout << "report: wrote " << out_dir << "/report.csv and summary.csv\n";
        }
    } catch (const seqrec::Error& e) {
        std::cerr << "error: " << e.category() << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
