#pragma once

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

#include "seqrec/corpus.hpp"
#include "seqrec/model.hpp"
#include "seqrec/train.hpp"

namespace seqrec {

using json = nlohmann::json;

struct DatasetConfig {
    std::string name;
    std::string interactions;  // raw delimited file, or
    std::string sequences;     // prepped pair of files
    std::string catalog;
    FileFormat format;
    int min_seq_len = 5;
    int min_item_freq = 5;
    int max_seq_len = 50;
};

struct EncoderConfig {
    EncoderKind kind = EncoderKind::Gru;
    int hidden_size = 64;
    int item_embedding_size = 64;  // gru only; attention ties it to hidden
    double dropout = 0.0;
    int layers = 2;
    int heads = 2;
    int inner_size = 256;
    double attention_dropout = 0.1;
};

struct GridBlock {
    bool present = false;
    std::vector<double> learning_rates = {5e-4, 1e-3, 2e-3};
    std::vector<int> batch_sizes = {64, 128};
    std::vector<double> dropouts;  // default depends on the encoder
};

struct EvalBlock {
    int k = 10;
    std::string group;
};

struct ExperimentConfig {
    DatasetConfig dataset;
    EncoderConfig encoder;
    HeadConfig head;
    TrainConfig train;
    std::string precision = "double";
    GridBlock grid;
    EvalBlock eval;
    json raw;  // the validated document, echoed into manifests
};

namespace cfg_detail {

inline void reject_unknown(const json& obj, const std::string& path,
                           std::initializer_list<const char*> allowed) {
    SEQREC_CHECK(obj.is_object(), "config", path, " must be an object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool known = false;
        for (const char* key : allowed)
            if (it.key() == key) known = true;
        SEQREC_CHECK(known, "config", "unknown key '", it.key(), "' at ", path);
    }
}

template <typename T>
T require(const json& obj, const std::string& path, const char* key) {
    SEQREC_CHECK(obj.contains(key), "config", path, " is missing '", key, "'");
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw Error("config", path + "." + key + " has the wrong type");
    }
}

template <typename T>
T get_or(const json& obj, const std::string& path, const char* key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw Error("config", path + "." + key + " has the wrong type");
    }
}

inline char parse_delimiter(const std::string& text, const std::string& path) {
    if (text == "tab" || text == "\t") return '\t';
    if (text == "comma" || text == ",") return ',';
    SEQREC_CHECK(text.size() == 1, "config", path,
                 ".delimiter must be 'tab', 'comma', or a single character");
    return text[0];
}

}  // namespace cfg_detail

inline DatasetConfig parse_dataset_config(const json& obj) {
    using namespace cfg_detail;
    reject_unknown(obj, "dataset",
                   {"name", "interactions", "format", "sequences", "catalog",
                    "min_seq_len", "min_item_freq", "max_seq_len"});
    DatasetConfig out;
    out.name = get_or<std::string>(obj, "dataset", "name", "");
    out.interactions = get_or<std::string>(obj, "dataset", "interactions", "");
    out.sequences = get_or<std::string>(obj, "dataset", "sequences", "");
    out.catalog = get_or<std::string>(obj, "dataset", "catalog", "");
    SEQREC_CHECK(out.interactions.empty() != out.sequences.empty(), "config",
                 "dataset needs exactly one of 'interactions' or 'sequences'");
    SEQREC_CHECK(out.sequences.empty() == out.catalog.empty(), "config",
                 "dataset 'sequences' and 'catalog' must be given together");
    if (obj.contains("format")) {
        const json& fmt = obj.at("format");
        reject_unknown(fmt, "dataset.format",
                       {"delimiter", "user_column", "item_column", "time_column"});
        out.format.delimiter = parse_delimiter(
            get_or<std::string>(fmt, "dataset.format", "delimiter", "tab"),
            "dataset.format");
        out.format.user_column =
            get_or<std::string>(fmt, "dataset.format", "user_column", "user");
        out.format.item_column =
            get_or<std::string>(fmt, "dataset.format", "item_column", "item");
        out.format.time_column = get_or<std::string>(fmt, "dataset.format",
                                                     "time_column", "timestamp");
    }
    out.min_seq_len = get_or<int>(obj, "dataset", "min_seq_len", 5);
    out.min_item_freq = get_or<int>(obj, "dataset", "min_item_freq", 5);
    out.max_seq_len = get_or<int>(obj, "dataset", "max_seq_len", 50);
    SEQREC_CHECK(out.min_seq_len >= 2, "config", "dataset.min_seq_len must be >= 2");
    SEQREC_CHECK(out.min_item_freq >= 1, "config",
                 "dataset.min_item_freq must be >= 1");
    SEQREC_CHECK(out.max_seq_len >= 1, "config", "dataset.max_seq_len must be >= 1");
    if (out.name.empty()) {
        const std::string& source =
            out.interactions.empty() ? out.sequences : out.interactions;
        auto slash = source.find_last_of('/');
        std::string stem = slash == std::string::npos ? source
                                                      : source.substr(slash + 1);
        auto dot = stem.find_last_of('.');
        out.name = dot == std::string::npos ? stem : stem.substr(0, dot);
    }
    return out;
}

inline EncoderConfig parse_encoder_config(const json& obj) {
    using namespace cfg_detail;
    reject_unknown(obj, "encoder",
                   {"type", "hidden_size", "item_embedding_size", "dropout",
                    "layers", "heads", "inner_size", "attention_dropout"});
    EncoderConfig out;
    std::string type = require<std::string>(obj, "encoder", "type");
    if (type == "gru") {
        out.kind = EncoderKind::Gru;
        SEQREC_CHECK(!obj.contains("layers") && !obj.contains("heads") &&
                         !obj.contains("inner_size") &&
                         !obj.contains("attention_dropout"),
                     "config", "encoder: attention-only keys given for gru");
    } else if (type == "attention") {
        out.kind = EncoderKind::Attention;
        SEQREC_CHECK(!obj.contains("item_embedding_size"), "config",
                     "encoder: attention ties item_embedding_size to hidden_size");
    } else {
        throw Error("config", "encoder.type must be 'gru' or 'attention'");
    }
    out.hidden_size = get_or<int>(obj, "encoder", "hidden_size", 64);
    out.item_embedding_size =
        get_or<int>(obj, "encoder", "item_embedding_size", 64);
    out.dropout = get_or<double>(obj, "encoder", "dropout", 0.0);
    out.layers = get_or<int>(obj, "encoder", "layers", 2);
    out.heads = get_or<int>(obj, "encoder", "heads", 2);
    out.inner_size = get_or<int>(obj, "encoder", "inner_size", 256);
    out.attention_dropout = get_or<double>(obj, "encoder", "attention_dropout", 0.1);
    SEQREC_CHECK(out.hidden_size > 0, "config", "encoder.hidden_size must be > 0");
    SEQREC_CHECK(out.dropout >= 0.0 && out.dropout < 1.0, "config",
                 "encoder.dropout must be in [0, 1)");
    if (out.kind == EncoderKind::Attention) {
        SEQREC_CHECK(out.hidden_size % out.heads == 0, "config",
                     "encoder.hidden_size must be divisible by heads");
        out.item_embedding_size = out.hidden_size;
    }
    return out;
}

inline HeadConfig parse_head_config(const json& obj) {
    using namespace cfg_detail;
    reject_unknown(obj, "head",
                   {"variant", "k_list", "mos_k", "mi", "dedup",
                    "exclude_context_from_topk"});
    HeadConfig out;
    std::string variant = require<std::string>(obj, "head", "variant");
    if (variant == "vanilla") out.variant = HeadVariant::Vanilla;
    else if (variant == "c" || variant == "context") out.variant = HeadVariant::Context;
    else if (variant == "cp") out.variant = HeadVariant::CP;
    else if (variant == "cpr") out.variant = HeadVariant::CPR;
    else if (variant == "mos") out.variant = HeadVariant::MoS;
    else throw Error("config",
                     "head.variant must be vanilla|c|cp|cpr|mos, got '" +
                         variant + "'");
    out.k_list = get_or<std::vector<int>>(obj, "head", "k_list", {});
    if (out.variant == HeadVariant::CPR && out.k_list.empty()) out.k_list = {100};
    out.mos_k = get_or<int>(obj, "head", "mos_k", 3);
    SEQREC_CHECK(out.variant == HeadVariant::MoS || !obj.contains("mos_k"),
                 "config", "head.mos_k is only valid for the mos variant");
    out.mi = get_or<bool>(obj, "head", "mi", false);
    out.dedup = get_or<bool>(obj, "head", "dedup", false);
    out.exclude_context_from_topk =
        get_or<bool>(obj, "head", "exclude_context_from_topk", false);
    return out;
}

inline ExperimentConfig parse_experiment_config(const json& doc) {
    using namespace cfg_detail;
    reject_unknown(doc, "$", {"dataset", "encoder", "head", "train", "grid", "eval"});
    ExperimentConfig out;
    out.raw = doc;
    SEQREC_CHECK(doc.contains("dataset"), "config", "config is missing 'dataset'");
    out.dataset = parse_dataset_config(doc.at("dataset"));
    if (doc.contains("encoder")) out.encoder = parse_encoder_config(doc.at("encoder"));
    if (doc.contains("head")) out.head = parse_head_config(doc.at("head"));

    if (doc.contains("train")) {
        const json& tr = doc.at("train");
        reject_unknown(tr, "train",
                       {"learning_rate", "batch_size", "max_epochs", "patience",
                        "seed", "precision", "threads"});
        out.train.learning_rate = get_or<double>(tr, "train", "learning_rate", 1e-3);
        out.train.batch_size = get_or<int>(tr, "train", "batch_size", 64);
        out.train.max_epochs = get_or<int>(tr, "train", "max_epochs", 300);
        out.train.patience = get_or<int>(tr, "train", "patience", 10);
        out.train.seed = get_or<std::uint64_t>(tr, "train", "seed", 42);
        out.train.threads = get_or<int>(tr, "train", "threads", 0);
        out.precision = get_or<std::string>(tr, "train", "precision", "double");
        SEQREC_CHECK(out.precision == "double" || out.precision == "single",
                     "config", "train.precision must be 'double' or 'single'");
        out.train.validate();
    }

    if (doc.contains("grid")) {
        const json& gr = doc.at("grid");
        reject_unknown(gr, "grid", {"learning_rates", "batch_sizes", "dropouts"});
        out.grid.present = true;
        out.grid.learning_rates = get_or<std::vector<double>>(
            gr, "grid", "learning_rates", out.grid.learning_rates);
        out.grid.batch_sizes = get_or<std::vector<int>>(gr, "grid", "batch_sizes",
                                                        out.grid.batch_sizes);
        std::vector<double> default_dropouts =
            out.encoder.kind == EncoderKind::Gru ? std::vector<double>{0.0, 0.5}
                                                 : std::vector<double>{0.0, 0.1};
        out.grid.dropouts = get_or<std::vector<double>>(gr, "grid", "dropouts",
                                                        default_dropouts);
        SEQREC_CHECK(!out.grid.learning_rates.empty() &&
                         !out.grid.batch_sizes.empty() &&
                         !out.grid.dropouts.empty(),
                     "config", "grid axes must be non-empty");
    }

    if (doc.contains("eval")) {
        const json& ev = doc.at("eval");
        reject_unknown(ev, "eval", {"k", "group"});
        out.eval.k = get_or<int>(ev, "eval", "k", 10);
        out.eval.group = get_or<std::string>(ev, "eval", "group", "");
        SEQREC_CHECK(out.eval.k >= 1, "config", "eval.k must be >= 1");
    }
    out.train.metric_k = out.eval.k;
    return out;
}

inline ModelConfig to_model_config(const ExperimentConfig& cfg, int item_count,
                                   int layers_override = -1) {
    ModelConfig mc;
    mc.item_count = item_count;
    mc.head = cfg.head;
    if (cfg.encoder.kind == EncoderKind::Gru) {
        mc.encoder = EncoderKind::Gru;
        mc.gru.hidden_size = cfg.encoder.hidden_size;
        mc.gru.item_embedding_size = cfg.encoder.item_embedding_size;
        mc.gru.dropout = cfg.encoder.dropout;
    } else {
        mc.encoder = EncoderKind::Attention;
        mc.attn.hidden_size = cfg.encoder.hidden_size;
        mc.attn.layers = layers_override > 0 ? layers_override : cfg.encoder.layers;
        mc.attn.heads = cfg.encoder.heads;
        mc.attn.inner_size = cfg.encoder.inner_size;
        mc.attn.attention_dropout = cfg.encoder.attention_dropout;
        mc.attn.dropout = cfg.encoder.dropout;
        mc.attn.max_positions = cfg.dataset.max_seq_len;
    }
    return mc;
}

// Short run label, e.g. "gru/cpr:20,100,500+mi" or "attn/vanilla+dedup".
inline std::string variant_label(const ExperimentConfig& cfg) {
    std::string label =
        cfg.encoder.kind == EncoderKind::Gru ? "gru/" : "attn/";
    label += head_variant_name(cfg.head.variant);
    if (cfg.head.variant == HeadVariant::CPR) {
        label += ":";
        for (std::size_t i = 0; i < cfg.head.k_list.size(); ++i) {
            if (i) label += ",";
            label += std::to_string(cfg.head.k_list[i]);
        }
    }
    if (cfg.head.variant == HeadVariant::MoS)
        label += ":" + std::to_string(cfg.head.mos_k);
    if (cfg.head.mi) label += "+mi";
    if (cfg.head.dedup) label += "+dedup";
    return label;
}

}  // namespace seqrec
