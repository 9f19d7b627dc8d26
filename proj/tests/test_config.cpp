#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "seqrec/experiment.hpp"
#include "support/synthetic.hpp"

using namespace seqrec;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("seqrec_cfg_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

// Writes a prepped copy-task corpus and returns a config document that
// trains on it.
json corpus_config(const TempDir& dir, int users, int items, int total_len) {
    auto data = synthetic::make_copy_corpus(users, items, 3, total_len, 99);
    {
        std::ofstream os(dir.path / "sequences.tsv");
        write_sequences(data, os);
    }
    {
        std::ofstream os(dir.path / "catalog.tsv");
        write_catalog(data.catalog, os);
    }
    json doc;
    doc["dataset"]["sequences"] = (dir.path / "sequences.tsv").string();
    doc["dataset"]["catalog"] = (dir.path / "catalog.tsv").string();
    doc["dataset"]["name"] = "copytoy";
    doc["dataset"]["min_seq_len"] = 2;
    doc["dataset"]["min_item_freq"] = 1;
    doc["dataset"]["max_seq_len"] = 12;
    doc["encoder"] = {{"type", "gru"}, {"hidden_size", 6},
                      {"item_embedding_size", 6}};
    doc["head"] = {{"variant", "c"}};
    doc["train"] = {{"learning_rate", 1e-3}, {"batch_size", 16},
                    {"max_epochs", 2},       {"patience", 5},
                    {"seed", 11},            {"threads", 1}};
    doc["eval"] = {{"k", 10}, {"group", "toy"}};
    return doc;
}

}  // namespace

TEST_CASE("config defaults and dataset name derivation") {
    json doc;
    doc["dataset"]["interactions"] = "/data/movies-1m.tsv";
    auto cfg = parse_experiment_config(doc);
    REQUIRE(cfg.dataset.name == "movies-1m");
    REQUIRE(cfg.dataset.min_seq_len == 5);
    REQUIRE(cfg.dataset.min_item_freq == 5);
    REQUIRE(cfg.dataset.max_seq_len == 50);
    REQUIRE(cfg.train.batch_size == 64);
    REQUIRE(cfg.train.max_epochs == 300);
    REQUIRE(cfg.train.patience == 10);
    REQUIRE(cfg.train.seed == 42);
    REQUIRE(cfg.eval.k == 10);
    REQUIRE(cfg.precision == "double");
}

TEST_CASE("unknown keys are rejected with their path") {
    json doc;
    doc["dataset"]["interactions"] = "x.tsv";
    doc["dataset"]["frobnicate"] = 1;
    REQUIRE_THROWS_WITH(parse_experiment_config(doc),
                        Catch::Matchers::ContainsSubstring("frobnicate") &&
                            Catch::Matchers::ContainsSubstring("dataset"));

    json doc2;
    doc2["dataset"]["interactions"] = "x.tsv";
    doc2["trian"] = json::object();
    REQUIRE_THROWS_WITH(parse_experiment_config(doc2),
                        Catch::Matchers::ContainsSubstring("trian"));

    json doc3;
    doc3["dataset"]["interactions"] = "x.tsv";
    doc3["head"] = {{"variant", "cpr"}, {"klist", {100}}};
    REQUIRE_THROWS_WITH(parse_experiment_config(doc3),
                        Catch::Matchers::ContainsSubstring("klist"));
}

TEST_CASE("config structural validation") {
    json both;
    both["dataset"]["interactions"] = "a.tsv";
    both["dataset"]["sequences"] = "b.tsv";
    both["dataset"]["catalog"] = "c.tsv";
    REQUIRE_THROWS_AS(parse_experiment_config(both), Error);

    json neither;
    neither["dataset"] = json::object();
    REQUIRE_THROWS_AS(parse_experiment_config(neither), Error);

    json bad_type;
    bad_type["dataset"]["interactions"] = "a.tsv";
    bad_type["train"] = {{"learning_rate", "fast"}};
    REQUIRE_THROWS_WITH(parse_experiment_config(bad_type),
                        Catch::Matchers::ContainsSubstring("train.learning_rate"));

    json bad_variant;
    bad_variant["dataset"]["interactions"] = "a.tsv";
    bad_variant["head"] = {{"variant", "fancy"}};
    REQUIRE_THROWS_AS(parse_experiment_config(bad_variant), Error);

    json gru_with_attn_keys;
    gru_with_attn_keys["dataset"]["interactions"] = "a.tsv";
    gru_with_attn_keys["encoder"] = {{"type", "gru"}, {"heads", 2}};
    REQUIRE_THROWS_AS(parse_experiment_config(gru_with_attn_keys), Error);

    json mos_k_on_vanilla;
    mos_k_on_vanilla["dataset"]["interactions"] = "a.tsv";
    mos_k_on_vanilla["head"] = {{"variant", "vanilla"}, {"mos_k", 2}};
    REQUIRE_THROWS_AS(parse_experiment_config(mos_k_on_vanilla), Error);
}

TEST_CASE("cpr defaults and attention embedding tie") {
    json doc;
    doc["dataset"]["interactions"] = "a.tsv";
    doc["head"] = {{"variant", "cpr"}};
    doc["encoder"] = {{"type", "attention"}, {"hidden_size", 32}};
    auto cfg = parse_experiment_config(doc);
    REQUIRE(cfg.head.k_list == std::vector<int>{100});
    REQUIRE(cfg.encoder.item_embedding_size == 32);
    REQUIRE(cfg.encoder.layers == 2);
    REQUIRE(cfg.encoder.heads == 2);
    REQUIRE(cfg.encoder.inner_size == 256);
    REQUIRE(cfg.encoder.attention_dropout == 0.1);
}

TEST_CASE("variant labels") {
    json doc;
    doc["dataset"]["interactions"] = "a.tsv";
    doc["head"] = {{"variant", "cpr"}, {"k_list", {20, 100, 500}}, {"mi", true}};
    auto cfg = parse_experiment_config(doc);
    REQUIRE(variant_label(cfg) == "gru/cpr:20,100,500+mi");

    doc["head"] = {{"variant", "vanilla"}, {"dedup", true}};
    doc["encoder"] = {{"type", "attention"}, {"hidden_size", 8}};
    cfg = parse_experiment_config(doc);
    REQUIRE(variant_label(cfg) == "attn/vanilla+dedup");
}

TEST_CASE("oversized k is rejected before any training") {
    TempDir dir;
    json doc = corpus_config(dir, 30, 20, 8);
    doc["head"] = {{"variant", "cpr"}, {"k_list", {50}}};  // catalog is 20
    auto cfg = parse_experiment_config(doc);
    REQUIRE_THROWS_WITH(run_train_command(cfg, (dir.path / "out").string()),
                        Catch::Matchers::ContainsSubstring("catalog"));
    REQUIRE_FALSE(fs::exists(dir.path / "out" / "checkpoint.bin"));
}

TEST_CASE("train command writes a self-describing run directory") {
    TempDir dir;
    json doc = corpus_config(dir, 40, 24, 10);
    auto cfg = parse_experiment_config(doc);
    auto summary = run_train_command(cfg, (dir.path / "run").string());

    REQUIRE(fs::exists(dir.path / "run" / "manifest.json"));
    REQUIRE(fs::exists(dir.path / "run" / "checkpoint.bin"));
    REQUIRE(fs::exists(dir.path / "run" / "metrics.csv"));
    REQUIRE(fs::exists(dir.path / "run" / "epochs.csv"));

    std::ifstream is(dir.path / "run" / "manifest.json");
    json manifest = json::parse(is);
    REQUIRE(manifest["command"] == "train");
    REQUIRE(manifest["variant"] == "gru/c");
    REQUIRE(manifest["config"]["train"]["seed"] == 11);
    REQUIRE(manifest["metrics"]["test"]["ndcg"].get<double>() == summary.test.ndcg);
    REQUIRE(manifest["history"].size() == 2);

    // evaluate on the written checkpoint reproduces the manifest's metrics
    auto metrics = run_evaluate_command(
        cfg, (dir.path / "run" / "checkpoint.bin").string(), "test",
        (dir.path / "eval").string());
    REQUIRE(metrics.ndcg == summary.test.ndcg);
    REQUIRE(metrics.hr == summary.test.hr);
    REQUIRE(metrics.mrr == summary.test.mrr);
}

TEST_CASE("identical seeds give byte-identical manifests") {
    TempDir dir;
    json doc = corpus_config(dir, 30, 20, 8);
    auto cfg = parse_experiment_config(doc);
    run_train_command(cfg, (dir.path / "a").string());
    run_train_command(cfg, (dir.path / "b").string());
    std::ifstream a(dir.path / "a" / "manifest.json"), b(dir.path / "b" / "manifest.json");
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    REQUIRE(sa.str() == sb.str());
}

TEST_CASE("grid: 3 learning rates x 2 batch sizes gives 6 rows") {
    TempDir dir;
    json doc = corpus_config(dir, 24, 16, 6);
    doc["train"]["max_epochs"] = 1;
    doc["grid"] = {{"learning_rates", {5e-4, 1e-3, 2e-3}},
                   {"batch_sizes", {8, 16}},
                   {"dropouts", {0.0}}};
    auto cfg = parse_experiment_config(doc);
    auto rows = run_grid_command(cfg, (dir.path / "grid").string());
    REQUIRE(rows.size() == 6);
    int selected = 0;
    for (const auto& r : rows) selected += r.selected ? 1 : 0;
    REQUIRE(selected == 1);
    REQUIRE(fs::exists(dir.path / "grid" / "grid.csv"));
    REQUIRE(fs::exists(dir.path / "grid" / "point_005" / "manifest.json"));
}

TEST_CASE("single-point grid equals a plain train run") {
    TempDir dir;
    json doc = corpus_config(dir, 24, 16, 6);
    doc["grid"] = {{"learning_rates", {1e-3}}, {"batch_sizes", {16}},
                   {"dropouts", {0.0}}};
    auto cfg = parse_experiment_config(doc);
    auto rows = run_grid_command(cfg, (dir.path / "grid").string());
    auto summary = run_train_command(cfg, (dir.path / "plain").string());
    REQUIRE(rows.size() == 1);
    REQUIRE(rows[0].selected);
    REQUIRE(rows[0].valid_ndcg == summary.best_valid_ndcg);
    REQUIRE(rows[0].summary.test.ndcg == summary.test.ndcg);
}

TEST_CASE("grid selector skips a sabotaged zero learning rate") {
    TempDir dir;
    json doc = corpus_config(dir, 60, 30, 10);
    doc["train"]["max_epochs"] = 3;
    doc["grid"] = {{"learning_rates", {0.0, 2e-3}}, {"batch_sizes", {16}},
                   {"dropouts", {0.0}}};
    auto cfg = parse_experiment_config(doc);
    auto rows = run_grid_command(cfg, (dir.path / "grid").string());
    REQUIRE(rows.size() == 2);
    REQUIRE_FALSE(rows[0].selected);  // lr = 0 cannot learn the copy task
    REQUIRE(rows[1].selected);
    REQUIRE(rows[1].valid_ndcg > rows[0].valid_ndcg);
}

TEST_CASE("report reproduces a single run's metrics verbatim") {
    TempDir dir;
    json doc = corpus_config(dir, 30, 20, 8);
    auto cfg = parse_experiment_config(doc);
    auto summary = run_train_command(cfg, (dir.path / "run").string());

    std::ostringstream console;
    run_report_command({(dir.path / "run").string()},
                       (dir.path / "report").string(), console);
    std::ifstream is(dir.path / "report" / "report.csv");
    std::stringstream ss;
    ss << is.rdbuf();
    std::string expected_row = "copytoy,gru/c,ndcg," +
                               detail::fmt_double(summary.test.ndcg);
    REQUIRE_THAT(ss.str(), Catch::Matchers::ContainsSubstring(expected_row));

    // single dataset: the geometric mean equals the value itself
    std::ifstream sis(dir.path / "report" / "summary.csv");
    std::stringstream sss;
    sss << sis.rdbuf();
    REQUIRE_THAT(sss.str(), Catch::Matchers::ContainsSubstring(
                                "toy,gru/c,ndcg," +
                                detail::fmt_double(summary.test.ndcg)));
}

TEST_CASE("stats and prep commands produce the documented files") {
    TempDir dir;
    // raw interactions with one malformed row
    fs::path raw = dir.path / "raw.tsv";
    {
        std::ofstream os(raw);
        os << "user\titem\ttimestamp\n";
        os << "u1\ta\t1\nu1\tb\t2\nu1\ta\t3\nu2\t\t4\nu2\ta\t5\nu2\tb\t6\n"
           << "u2\tc\t7\n";
    }
    json doc;
    doc["dataset"]["interactions"] = raw.string();
    doc["dataset"]["min_seq_len"] = 2;
    doc["dataset"]["min_item_freq"] = 1;
    auto cfg = parse_experiment_config(doc);

    run_prep_command(cfg, (dir.path / "prep").string());
    std::ifstream manifest_is(dir.path / "prep" / "manifest.json");
    json manifest = json::parse(manifest_is);
    REQUIRE(manifest["dataset"]["malformed_rows"] == 1);
    REQUIRE(fs::exists(dir.path / "prep" / "sequences.tsv"));
    REQUIRE(fs::exists(dir.path / "prep" / "catalog.tsv"));

    auto curve = run_stats_command(cfg, (dir.path / "stats").string());
    std::ifstream csv(dir.path / "stats" / "repetition.csv");
    std::stringstream ss;
    ss << csv.rdbuf();
    REQUIRE_THAT(ss.str(),
                 Catch::Matchers::ContainsSubstring("2,without_dup,2,1,0.5"));
    REQUIRE(curve.buckets[2].count_without_dup == 2);
}
