#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "seqrec/checkpoint.hpp"
#include "seqrec/config.hpp"
#include "seqrec/metrics.hpp"
#include "seqrec/train.hpp"

namespace seqrec {

namespace fs = std::filesystem;

struct LoadedDataset {
    SequenceDataset data;
    std::size_t raw_interactions = 0;
    std::size_t malformed_rows = 0;
};

inline LoadedDataset load_dataset(const DatasetConfig& cfg) {
    LoadedDataset out;
    if (!cfg.interactions.empty()) {
        LoadReport report = load_interactions(cfg.interactions, cfg.format);
        out.raw_interactions = report.interactions.size();
        out.malformed_rows = report.malformed_rows;
        out.data = build_sequences(report.interactions, cfg.min_seq_len,
                                   cfg.min_item_freq);
    } else {
        std::ifstream cat(cfg.catalog);
        SEQREC_CHECK(cat.good(), "io", "cannot open catalog '", cfg.catalog, "'");
        out.data.catalog = read_catalog(cat, cfg.catalog);
        std::ifstream seq(cfg.sequences);
        SEQREC_CHECK(seq.good(), "io", "cannot open sequences '", cfg.sequences,
                     "'");
        out.data.sequences = read_sequences(seq, out.data.catalog, cfg.sequences);
    }
    return out;
}

namespace detail {

inline std::string fingerprint_hex(std::uint64_t fp) {
    char buf[19];
    std::snprintf(buf, sizeof buf, "0x%016llx",
                  static_cast<unsigned long long>(fp));
    return buf;
}

inline void write_text(const fs::path& path, const std::string& content) {
    std::ofstream os(path);
    SEQREC_CHECK(os.good(), "io", "cannot write '", path.string(), "'");
    os << content;
    SEQREC_CHECK(os.good(), "io", "short write to '", path.string(), "'");
}

inline std::string fmt_double(double v) {
    std::ostringstream ss;
    ss.precision(17);
    ss << v;
    return ss.str();
}

inline json dataset_summary(const ExperimentConfig& cfg, const LoadedDataset& ds,
                            const SplitDataset* split) {
    json out;
    out["name"] = cfg.dataset.name;
    out["fingerprint"] = fingerprint_hex(dataset_fingerprint(ds.data));
    out["items"] = ds.data.catalog.item_count();
    out["users"] = ds.data.sequences.size();
    if (!cfg.dataset.interactions.empty()) {
        out["raw_interactions"] = ds.raw_interactions;
        out["malformed_rows"] = ds.malformed_rows;
    }
    if (split) {
        out["train_windows"] = split->train.size();
        out["valid_instances"] = split->valid.size();
        out["test_instances"] = split->test.size();
    }
    return out;
}

inline json design_flags(const ExperimentConfig& cfg) {
    json out;
    out["topk_over_full_catalog"] = !cfg.head.exclude_context_from_topk;
    out["topk_tie_break"] = "ascending_id";
    out["dedup_renormalizes"] = false;
    out["mi_missing_positions"] = "zero_vectors";
    out["layer_norm_epsilon"] = 1e-12;
    out["attention_block"] = "post_norm";
    out["init_stddev"] = 0.02;
    out["train_targets"] = "per_position";
    return out;
}

inline json metrics_json(const MetricSummary& m) {
    json out;
    out["ndcg"] = m.ndcg;
    out["hr"] = m.hr;
    out["mrr"] = m.mrr;
    out["users"] = m.users;
    return out;
}

inline std::string metrics_csv(const std::string& dataset,
                               const std::string& variant, int k,
                               const MetricSummary& test,
                               const MetricSummary* valid) {
    std::ostringstream os;
    os << "dataset,variant,metric,value\n";
    auto row = [&](const std::string& metric, double value) {
        os << dataset << ',' << variant << ',' << metric << ','
           << fmt_double(value) << '\n';
    };
    row("ndcg@" + std::to_string(k), test.ndcg);
    row("hr@" + std::to_string(k), test.hr);
    row("mrr@" + std::to_string(k), test.mrr);
    if (valid) row("valid_ndcg@" + std::to_string(k), valid->ndcg);
    return os.str();
}

}  // namespace detail

struct RunSummary {
    MetricSummary test;
    MetricSummary valid;
    double best_valid_ndcg = 0.0;
    int best_epoch = 0;
    int epochs_run = 0;
};

// --- train -------------------------------------------------------------------

template <typename S>
RunSummary run_train_impl(const ExperimentConfig& cfg, const LoadedDataset& ds,
                          const SplitDataset& split, const fs::path& out_dir) {
    cfg.head.validate(ds.data.catalog.item_count());

    Model<S> model(to_model_config(cfg, ds.data.catalog.item_count()),
                   cfg.train.seed);
    TrainResult<S> result = train(model, split, cfg.train);

    MetricSummary valid = evaluate_split(
        model, std::span<const EvalInstance>(split.valid), cfg.eval.k,
        resolve_threads(cfg.train.threads));
    MetricSummary test = evaluate_split(
        model, std::span<const EvalInstance>(split.test), cfg.eval.k,
        resolve_threads(cfg.train.threads));

    fs::create_directories(out_dir);
    save_checkpoint((out_dir / "checkpoint.bin").string(), model.registry());

    json manifest;
    manifest["command"] = "train";
    manifest["version"] = code_version();
    manifest["config"] = cfg.raw;
    manifest["dataset"] = detail::dataset_summary(cfg, ds, &split);
    manifest["variant"] = variant_label(cfg);
    manifest["group"] = cfg.eval.group;
    manifest["seed"] = cfg.train.seed;
    manifest["precision"] = cfg.precision;
    manifest["design_flags"] = detail::design_flags(cfg);
    manifest["parameters"] = model.registry().total_size();
    json history = json::array();
    for (const auto& e : result.history) {
        json row;
        row["epoch"] = e.epoch;
        row["train_loss"] = e.train_loss;
        row["valid_ndcg"] = e.valid_ndcg;
        history.push_back(row);
    }
    manifest["history"] = history;
    manifest["best_epoch"] = result.best_epoch;
    manifest["best_valid_ndcg"] = result.best_valid_ndcg;
    manifest["epochs_run"] = result.epochs_run;
    manifest["metrics"]["valid"] = detail::metrics_json(valid);
    manifest["metrics"]["test"] = detail::metrics_json(test);
    detail::write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");

    std::ostringstream epochs;
    epochs << "epoch,train_loss,valid_ndcg\n";
    for (const auto& e : result.history)
        epochs << e.epoch << ',' << detail::fmt_double(e.train_loss) << ','
               << detail::fmt_double(e.valid_ndcg) << '\n';
    detail::write_text(out_dir / "epochs.csv", epochs.str());

    detail::write_text(out_dir / "metrics.csv",
                       detail::metrics_csv(cfg.dataset.name, variant_label(cfg),
                                           cfg.eval.k, test, &valid));

    RunSummary summary;
    summary.test = test;
    summary.valid = valid;
    summary.best_valid_ndcg = result.best_valid_ndcg;
    summary.best_epoch = result.best_epoch;
    summary.epochs_run = result.epochs_run;
    return summary;
}

inline RunSummary run_train_command(const ExperimentConfig& cfg,
                                    const fs::path& out_dir) {
    LoadedDataset ds = load_dataset(cfg.dataset);
    SplitDataset split = split_leave_one_out(ds.data, cfg.dataset.max_seq_len);
    if (cfg.precision == "single")
        return run_train_impl<float>(cfg, ds, split, out_dir);
    return run_train_impl<double>(cfg, ds, split, out_dir);
}

// --- evaluate ------------------------------------------------------------------

template <typename S>
MetricSummary run_evaluate_impl(const ExperimentConfig& cfg,
                                const LoadedDataset& ds,
                                const SplitDataset& split,
                                const std::string& checkpoint_path,
                                const std::string& split_name,
                                const fs::path& out_dir) {
    cfg.head.validate(ds.data.catalog.item_count());
    Model<S> model(to_model_config(cfg, ds.data.catalog.item_count()),
                   cfg.train.seed);
    auto values = load_checkpoint<S>(checkpoint_path);
    restore_params(model.registry(), values, checkpoint_path);

    const std::vector<EvalInstance>& instances =
        split_name == "valid" ? split.valid : split.test;
    MetricSummary metrics =
        evaluate_split(model, std::span<const EvalInstance>(instances),
                       cfg.eval.k, resolve_threads(cfg.train.threads));

    fs::create_directories(out_dir);
    json manifest;
    manifest["command"] = "evaluate";
    manifest["version"] = code_version();
    manifest["config"] = cfg.raw;
    manifest["dataset"] = detail::dataset_summary(cfg, ds, &split);
    manifest["variant"] = variant_label(cfg);
    manifest["group"] = cfg.eval.group;
    manifest["checkpoint"] = checkpoint_path;
    manifest["split"] = split_name;
    manifest["metrics"][split_name] = detail::metrics_json(metrics);
    detail::write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
    detail::write_text(out_dir / "metrics.csv",
                       detail::metrics_csv(cfg.dataset.name, variant_label(cfg),
                                           cfg.eval.k, metrics, nullptr));
    return metrics;
}

inline MetricSummary run_evaluate_command(const ExperimentConfig& cfg,
                                          const std::string& checkpoint_path,
                                          const std::string& split_name,
                                          const fs::path& out_dir) {
    SEQREC_CHECK(split_name == "valid" || split_name == "test", "cli",
                 "evaluate: split must be 'valid' or 'test', got '", split_name,
                 "'");
    LoadedDataset ds = load_dataset(cfg.dataset);
    SplitDataset split = split_leave_one_out(ds.data, cfg.dataset.max_seq_len);
    if (cfg.precision == "single")
        return run_evaluate_impl<float>(cfg, ds, split, checkpoint_path,
                                        split_name, out_dir);
    return run_evaluate_impl<double>(cfg, ds, split, checkpoint_path, split_name,
                                     out_dir);
}

// --- grid ----------------------------------------------------------------------

struct GridRow {
    double learning_rate = 0.0;
    int batch_size = 0;
    double dropout = 0.0;
    double valid_ndcg = 0.0;
    bool selected = false;
    RunSummary summary;
    std::string dir;
};

inline std::vector<GridRow> run_grid_command(const ExperimentConfig& cfg,
                                             const fs::path& out_dir) {
    SEQREC_CHECK(cfg.grid.present, "config", "grid command needs a 'grid' block");
    LoadedDataset ds = load_dataset(cfg.dataset);
    SplitDataset split = split_leave_one_out(ds.data, cfg.dataset.max_seq_len);
    fs::create_directories(out_dir);

    std::vector<GridRow> rows;
    int index = 0;
    for (double lr : cfg.grid.learning_rates) {
        for (int bsz : cfg.grid.batch_sizes) {
            for (double dropout : cfg.grid.dropouts) {
                ExperimentConfig point = cfg;
                point.train.learning_rate = lr;
                point.train.batch_size = bsz;
                point.encoder.dropout = dropout;
                point.raw["train"]["learning_rate"] = lr;
                point.raw["train"]["batch_size"] = bsz;
                point.raw["encoder"]["dropout"] = dropout;

                char name[32];
                std::snprintf(name, sizeof name, "point_%03d", index++);
                fs::path point_dir = out_dir / name;
                RunSummary summary =
                    point.precision == "single"
                        ? run_train_impl<float>(point, ds, split, point_dir)
                        : run_train_impl<double>(point, ds, split, point_dir);
                GridRow row;
                row.learning_rate = lr;
                row.batch_size = bsz;
                row.dropout = dropout;
                row.valid_ndcg = summary.best_valid_ndcg;
                row.summary = summary;
                row.dir = name;
                rows.push_back(row);
            }
        }
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < rows.size(); ++i)
        if (rows[i].valid_ndcg > rows[best].valid_ndcg) best = i;
    rows[best].selected = true;

    // test metrics are reported only for the selected configuration
    std::ostringstream csv;
    csv << "learning_rate,batch_size,dropout,valid_ndcg,selected,test_ndcg,"
           "test_hr,test_mrr\n";
    for (const auto& row : rows) {
        csv << detail::fmt_double(row.learning_rate) << ',' << row.batch_size
            << ',' << detail::fmt_double(row.dropout) << ','
            << detail::fmt_double(row.valid_ndcg) << ','
            << (row.selected ? "1" : "0");
        if (row.selected) {
            csv << ',' << detail::fmt_double(row.summary.test.ndcg) << ','
                << detail::fmt_double(row.summary.test.hr) << ','
                << detail::fmt_double(row.summary.test.mrr);
        } else {
            csv << ",,,";
        }
        csv << '\n';
    }
    detail::write_text(out_dir / "grid.csv", csv.str());

    json manifest;
    manifest["command"] = "grid";
    manifest["version"] = code_version();
    manifest["config"] = cfg.raw;
    manifest["dataset"] = detail::dataset_summary(cfg, ds, &split);
    manifest["variant"] = variant_label(cfg);
    manifest["points"] = rows.size();
    manifest["selected_dir"] = rows[best].dir;
    manifest["selected_valid_ndcg"] = rows[best].valid_ndcg;
    manifest["selected_test"] = detail::metrics_json(rows[best].summary.test);
    detail::write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
    return rows;
}

// --- prep / stats ----------------------------------------------------------------

inline void run_prep_command(const ExperimentConfig& cfg, const fs::path& out_dir) {
    SEQREC_CHECK(!cfg.dataset.interactions.empty(), "config",
                 "prep needs dataset.interactions");
    LoadedDataset ds = load_dataset(cfg.dataset);
    fs::create_directories(out_dir);
    {
        std::ofstream os(out_dir / "sequences.tsv");
        write_sequences(ds.data, os);
    }
    {
        std::ofstream os(out_dir / "catalog.tsv");
        write_catalog(ds.data.catalog, os);
    }
    json manifest;
    manifest["command"] = "prep";
    manifest["version"] = code_version();
    manifest["config"] = cfg.raw;
    manifest["dataset"] = detail::dataset_summary(cfg, ds, nullptr);
    manifest["outputs"] = {"sequences.tsv", "catalog.tsv"};
    detail::write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
}

inline RepetitionCurve run_stats_command(const ExperimentConfig& cfg,
                                         const fs::path& out_dir) {
    LoadedDataset ds = load_dataset(cfg.dataset);
    RepetitionCurve curve = repetition_stats(ds.data.sequences);
    fs::create_directories(out_dir);
    std::ostringstream csv;
    write_repetition_csv(curve, csv);
    detail::write_text(out_dir / "repetition.csv", csv.str());
    json manifest;
    manifest["command"] = "stats";
    manifest["version"] = code_version();
    manifest["config"] = cfg.raw;
    manifest["dataset"] = detail::dataset_summary(cfg, ds, nullptr);
    manifest["outputs"] = {"repetition.csv"};
    detail::write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
    return curve;
}

// --- report ----------------------------------------------------------------------

struct ReportRow {
    std::string dataset;
    std::string variant;
    std::string group;
    double ndcg = 0.0, hr = 0.0, mrr = 0.0;
};

inline std::vector<ReportRow> collect_report_rows(
    const std::vector<std::string>& run_dirs) {
    std::vector<ReportRow> rows;
    for (const std::string& dir : run_dirs) {
        fs::path manifest_path = fs::path(dir) / "manifest.json";
        std::ifstream is(manifest_path);
        SEQREC_CHECK(is.good(), "io", "cannot open '", manifest_path.string(), "'");
        json manifest = json::parse(is);
        SEQREC_CHECK(manifest.contains("metrics") &&
                         manifest["metrics"].contains("test"),
                     "format", manifest_path.string(),
                     ": no test metrics (was this a train run?)");
        ReportRow row;
        row.dataset = manifest["dataset"]["name"].get<std::string>();
        row.variant = manifest["variant"].get<std::string>();
        row.group = manifest.value("group", std::string{});
        row.ndcg = manifest["metrics"]["test"]["ndcg"].get<double>();
        row.hr = manifest["metrics"]["test"]["hr"].get<double>();
        row.mrr = manifest["metrics"]["test"]["mrr"].get<double>();
        rows.push_back(row);
    }
    return rows;
}

// Aggregates per-run test metrics into the per-dataset table plus geometric
// means per (group, variant). Pure function of the input run directories.
inline void run_report_command(const std::vector<std::string>& run_dirs,
                               const fs::path& out_dir, std::ostream& console) {
    std::vector<ReportRow> rows = collect_report_rows(run_dirs);
    SEQREC_CHECK(!rows.empty(), "cli", "report: no run directories given");
    fs::create_directories(out_dir);

    std::ostringstream csv;
    csv << "dataset,variant,metric,value\n";
    for (const auto& r : rows) {
        csv << r.dataset << ',' << r.variant << ",ndcg," << detail::fmt_double(r.ndcg)
            << '\n';
        csv << r.dataset << ',' << r.variant << ",hr," << detail::fmt_double(r.hr)
            << '\n';
        csv << r.dataset << ',' << r.variant << ",mrr," << detail::fmt_double(r.mrr)
            << '\n';
    }
    detail::write_text(out_dir / "report.csv", csv.str());

    // group -> variant -> metric values across datasets
    std::map<std::string, std::map<std::string, std::vector<ReportRow>>> grouped;
    for (const auto& r : rows) {
        std::string group = r.group.empty() ? "all" : r.group;
        grouped[group][r.variant].push_back(r);
        if (!r.group.empty()) grouped["all"][r.variant].push_back(r);
    }

    std::ostringstream summary;
    summary << "group,variant,metric,value,datasets\n";
    console << "geometric means (test)\n";
    for (const auto& [group, variants] : grouped) {
        for (const auto& [variant, members] : variants) {
            std::vector<double> ndcg, hr, mrr;
            for (const auto& m : members) {
                ndcg.push_back(m.ndcg);
                hr.push_back(m.hr);
                mrr.push_back(m.mrr);
            }
            bool zero_seen = false;
            double g_ndcg = geometric_mean(ndcg, &zero_seen);
            double g_hr = geometric_mean(hr, &zero_seen);
            double g_mrr = geometric_mean(mrr, &zero_seen);
            if (zero_seen)
                std::cerr << "warning: zero metric in group '" << group
                          << "' variant '" << variant
                          << "'; its geometric mean is reported as 0\n";
            summary << group << ',' << variant << ",ndcg,"
                    << detail::fmt_double(g_ndcg) << ',' << members.size() << '\n';
            summary << group << ',' << variant << ",hr," << detail::fmt_double(g_hr)
                    << ',' << members.size() << '\n';
            summary << group << ',' << variant << ",mrr,"
                    << detail::fmt_double(g_mrr) << ',' << members.size() << '\n';
            char line[160];
            std::snprintf(line, sizeof line,
                          "  %-12s %-28s ndcg %.4f  hr %.4f  mrr %.4f  (%zu datasets)",
                          group.c_str(), variant.c_str(), g_ndcg, g_hr, g_mrr,
                          members.size());
            console << line << "\n";
        }
    }
    detail::write_text(out_dir / "summary.csv", summary.str());
}

}  // namespace seqrec
