#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "seqrec/common.hpp"

namespace seqrec {

// One raw interaction row. Timestamps are optional; ordering falls back to
// file order.
struct Interaction {
    std::string user;
    std::string item;
    std::int64_t timestamp = 0;
    bool has_timestamp = false;
};

// Delimited-text descriptor. The input file must carry a header row naming
// the columns; `time_column` may be empty when the data has no timestamps.
struct FileFormat {
    char delimiter = '\t';
    std::string user_column = "user";
    std::string item_column = "item";
    std::string time_column = "timestamp";  // optional; "" disables
};

struct LoadReport {
    std::vector<Interaction> interactions;
    std::size_t malformed_rows = 0;
};

// Bijective map between raw string ids and dense ids in [0, item_count).
// item_count itself is reserved as a padding id and never denotes an item.
class Catalog {
public:
    int encode(const std::string& id) const {
        auto it = forward_.find(id);
        SEQREC_CHECK(it != forward_.end(), "catalog", "unknown item id '", id, "'");
        return it->second;
    }

    const std::string& decode(int dense) const {
        SEQREC_CHECK(dense >= 0 && static_cast<std::size_t>(dense) < reverse_.size(),
                     "catalog", "dense id ", dense, " out of range");
        return reverse_[dense];
    }

    bool contains(const std::string& id) const { return forward_.count(id) > 0; }
    int item_count() const { return static_cast<int>(reverse_.size()); }
    int padding_id() const { return item_count(); }

    int intern(const std::string& id) {
        auto it = forward_.find(id);
        if (it != forward_.end()) return it->second;
        int dense = static_cast<int>(reverse_.size());
        forward_.emplace(id, dense);
        reverse_.push_back(id);
        return dense;
    }

private:
    std::unordered_map<std::string, int> forward_;
    std::vector<std::string> reverse_;
};

// One user's time-ordered dense item ids.
struct UserSequence {
    int user = 0;
    std::string user_id;
    std::vector<int> items;
};

struct SequenceDataset {
    Catalog catalog;
    std::vector<UserSequence> sequences;
};

// One model input: a window of items plus the per-position (or single) target.
struct TrainWindow {
    int user = 0;
    std::vector<int> inputs;
    std::vector<int> targets;  // targets[j] is the next item after inputs[j]
};

struct EvalInstance {
    int user = 0;
    std::vector<int> inputs;
    int target = 0;
};

struct SplitDataset {
    std::vector<TrainWindow> train;
    std::vector<EvalInstance> valid;
    std::vector<EvalInstance> test;
    int item_count = 0;
    int max_seq_len = 0;
};

struct RepetitionBucket {
    std::size_t count_with_dup = 0;
    std::size_t repeat_with_dup = 0;
    std::size_t count_without_dup = 0;
    std::size_t repeat_without_dup = 0;
};

// Per prefix-length repetition counters; index n holds statistics for
// prefixes of length n (n >= 1).
struct RepetitionCurve {
    std::vector<RepetitionBucket> buckets;  // buckets[0] unused

    std::optional<double> prob_with_dup(std::size_t n) const {
        if (n >= buckets.size() || buckets[n].count_with_dup == 0) return std::nullopt;
        return static_cast<double>(buckets[n].repeat_with_dup) /
               static_cast<double>(buckets[n].count_with_dup);
    }
    std::optional<double> prob_without_dup(std::size_t n) const {
        if (n >= buckets.size() || buckets[n].count_without_dup == 0)
            return std::nullopt;
        return static_cast<double>(buckets[n].repeat_without_dup) /
               static_cast<double>(buckets[n].count_without_dup);
    }
};

namespace detail {

inline std::vector<std::string> split_line(const std::string& line, char delim) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, delim)) out.push_back(field);
    if (!line.empty() && line.back() == delim) out.push_back("");
    return out;
}

inline std::string strip_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

}  // namespace detail

// Reads a delimited interaction file. The header row must name the declared
// user/item (and optional timestamp) columns; malformed data rows are skipped
// and counted.
inline LoadReport load_interactions(const std::string& path, const FileFormat& fmt) {
    std::ifstream in(path);
    SEQREC_CHECK(in.good(), "io", "cannot open interaction file '", path, "'");

    std::string header_line;
    SEQREC_CHECK(static_cast<bool>(std::getline(in, header_line)), "format",
                 "interaction file '", path, "' is empty (no header row)");
    header_line = detail::strip_cr(header_line);
    std::vector<std::string> header = detail::split_line(header_line, fmt.delimiter);

    auto find_col = [&](const std::string& name) -> int {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        return -1;
    };
    int user_col = find_col(fmt.user_column);
    int item_col = find_col(fmt.item_column);
    SEQREC_CHECK(user_col >= 0, "format", "interaction file '", path,
                 "': header has no column '", fmt.user_column, "'");
    SEQREC_CHECK(item_col >= 0, "format", "interaction file '", path,
                 "': header has no column '", fmt.item_column, "'");
    int time_col = -1;
    if (!fmt.time_column.empty()) time_col = find_col(fmt.time_column);

    LoadReport report;
    std::string line;
    while (std::getline(in, line)) {
        line = detail::strip_cr(line);
        if (line.empty()) continue;
        std::vector<std::string> fields = detail::split_line(line, fmt.delimiter);
        int needed = std::max(user_col, item_col);
        if (time_col >= 0) needed = std::max(needed, time_col);
        if (static_cast<int>(fields.size()) <= needed) {
            ++report.malformed_rows;
            continue;
        }
        Interaction row;
        row.user = fields[user_col];
        row.item = fields[item_col];
        if (row.user.empty() || row.item.empty()) {
            ++report.malformed_rows;
            continue;
        }
        if (time_col >= 0 && !fields[time_col].empty()) {
            try {
                std::size_t used = 0;
                // accept integral prefixes of float-ish timestamps
                double t = std::stod(fields[time_col], &used);
                if (used == 0) throw std::invalid_argument("empty");
                row.timestamp = static_cast<std::int64_t>(t);
                row.has_timestamp = true;
            } catch (const std::exception&) {
                ++report.malformed_rows;
                continue;
            }
        }
        report.interactions.push_back(std::move(row));
    }
    return report;
}

// Iteratively drops rare items and short users until a fixpoint, then builds
// dense ids (first-occurrence order) and per-user time-sorted sequences.
// Timestamp ties keep file order.
inline SequenceDataset build_sequences(const std::vector<Interaction>& interactions,
                                       int min_seq_len, int min_item_freq) {
    SEQREC_CHECK(min_seq_len >= 2, "config",
                 "build_sequences: min_seq_len must be >= 2, got ", min_seq_len);
    SEQREC_CHECK(min_item_freq >= 1, "config",
                 "build_sequences: min_item_freq must be >= 1, got ", min_item_freq);

    std::vector<char> alive(interactions.size(), 1);
    bool changed = true;
    while (changed) {
        changed = false;
        std::unordered_map<std::string, int> item_freq;
        for (std::size_t i = 0; i < interactions.size(); ++i)
            if (alive[i]) ++item_freq[interactions[i].item];
        for (std::size_t i = 0; i < interactions.size(); ++i) {
            if (alive[i] && item_freq[interactions[i].item] < min_item_freq) {
                alive[i] = 0;
                changed = true;
            }
        }
        std::unordered_map<std::string, int> user_len;
        for (std::size_t i = 0; i < interactions.size(); ++i)
            if (alive[i]) ++user_len[interactions[i].user];
        for (std::size_t i = 0; i < interactions.size(); ++i) {
            if (alive[i] && user_len[interactions[i].user] < min_seq_len) {
                alive[i] = 0;
                changed = true;
            }
        }
    }

    SequenceDataset out;
    std::unordered_map<std::string, int> user_ids;
    std::vector<std::string> user_names;
    // (user, file_index) pairs grouped per user, preserving file order
    std::vector<std::vector<std::size_t>> rows_per_user;
    for (std::size_t i = 0; i < interactions.size(); ++i) {
        if (!alive[i]) continue;
        const Interaction& it = interactions[i];
        auto [u, inserted] = user_ids.emplace(it.user,
                                              static_cast<int>(user_names.size()));
        if (inserted) {
            user_names.push_back(it.user);
            rows_per_user.emplace_back();
        }
        out.catalog.intern(it.item);
        rows_per_user[u->second].push_back(i);
    }
    SEQREC_CHECK(!user_names.empty(), "filter",
                 "build_sequences: all data filtered away (min_seq_len=",
                 min_seq_len, ", min_item_freq=", min_item_freq, ")");

    for (std::size_t u = 0; u < user_names.size(); ++u) {
        auto& rows = rows_per_user[u];
        std::stable_sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
            return interactions[a].timestamp < interactions[b].timestamp;
        });
        UserSequence seq;
        seq.user = static_cast<int>(u);
        seq.user_id = user_names[u];
        seq.items.reserve(rows.size());
        for (std::size_t r : rows) seq.items.push_back(out.catalog.encode(interactions[r].item));
        out.sequences.push_back(std::move(seq));
    }
    return out;
}

namespace detail {
inline std::vector<int> suffix_window(const std::vector<int>& items,
                                      std::size_t end, int max_len) {
    std::size_t start = end > static_cast<std::size_t>(max_len)
                            ? end - static_cast<std::size_t>(max_len)
                            : 0;
    return std::vector<int>(items.begin() + start, items.begin() + end);
}
}  // namespace detail

// Leave-one-out protocol: last item is the test target, second-to-last the
// validation target; the train window carries per-position targets over the
// remaining prefix. Users shorter than 3 keep a train window but contribute
// no holdouts. All model inputs are suffix windows of length <= max_seq_len.
inline SplitDataset split_leave_one_out(const SequenceDataset& data,
                                        int max_seq_len) {
    SEQREC_CHECK(max_seq_len >= 1, "config",
                 "split_leave_one_out: max_seq_len must be >= 1, got ", max_seq_len);
    SplitDataset out;
    out.item_count = data.catalog.item_count();
    out.max_seq_len = max_seq_len;
    for (const UserSequence& seq : data.sequences) {
        std::size_t len = seq.items.size();
        if (len < 2) continue;
        // train inputs end right before the valid target for holdout users,
        // and cover the whole sequence for short users
        std::size_t train_end = len >= 3 ? len - 2 : len - 1;
        {
            TrainWindow w;
            w.user = seq.user;
            std::size_t start = train_end > static_cast<std::size_t>(max_seq_len)
                                    ? train_end - static_cast<std::size_t>(max_seq_len)
                                    : 0;
            for (std::size_t j = start; j < train_end; ++j) {
                w.inputs.push_back(seq.items[j]);
                w.targets.push_back(seq.items[j + 1]);
            }
            if (!w.inputs.empty()) out.train.push_back(std::move(w));
        }
        if (len < 3) continue;
        {
            EvalInstance v;
            v.user = seq.user;
            v.inputs = detail::suffix_window(seq.items, len - 2, max_seq_len);
            v.target = seq.items[len - 2];
            out.valid.push_back(std::move(v));
        }
        {
            EvalInstance t;
            t.user = seq.user;
            t.inputs = detail::suffix_window(seq.items, len - 1, max_seq_len);
            t.target = seq.items[len - 1];
            out.test.push_back(std::move(t));
        }
    }
    return out;
}

// Fig.-3-style statistics: for every prefix items[0..n-1], classify it by
// whether it already contains a duplicate, and count whether items[n] repeats
// an item of the prefix.
inline RepetitionCurve repetition_stats(const std::vector<UserSequence>& sequences) {
    RepetitionCurve curve;
    std::size_t max_len = 0;
    for (const auto& s : sequences) max_len = std::max(max_len, s.items.size());
    if (max_len < 2) return curve;
    curve.buckets.resize(max_len);

    for (const auto& s : sequences) {
        std::unordered_set<int> seen;
        bool has_dup = false;
        for (std::size_t n = 1; n < s.items.size(); ++n) {
            int prev = s.items[n - 1];
            if (!seen.insert(prev).second) has_dup = true;
            bool repeat = seen.count(s.items[n]) > 0;
            RepetitionBucket& b = curve.buckets[n];
            if (has_dup) {
                ++b.count_with_dup;
                if (repeat) ++b.repeat_with_dup;
            } else {
                ++b.count_without_dup;
                if (repeat) ++b.repeat_without_dup;
            }
        }
    }
    return curve;
}

// --- serialization -----------------------------------------------------------

// Sequences: one user per line, `user<TAB>item,item,...` with raw string ids.
inline void write_sequences(const SequenceDataset& data, std::ostream& os) {
    for (const auto& seq : data.sequences) {
        os << seq.user_id << '\t';
        for (std::size_t i = 0; i < seq.items.size(); ++i) {
            if (i) os << ',';
            os << data.catalog.decode(seq.items[i]);
        }
        os << '\n';
    }
}

// Catalog: one item per line, `dense_id<TAB>item`.
inline void write_catalog(const Catalog& catalog, std::ostream& os) {
    for (int i = 0; i < catalog.item_count(); ++i)
        os << i << '\t' << catalog.decode(i) << '\n';
}

inline Catalog read_catalog(std::istream& is, const std::string& origin) {
    Catalog catalog;
    std::string line;
    int expected = 0;
    while (std::getline(is, line)) {
        line = detail::strip_cr(line);
        if (line.empty()) continue;
        auto fields = detail::split_line(line, '\t');
        SEQREC_CHECK(fields.size() == 2, "format", origin,
                     ": catalog line must be `dense_id<TAB>item`, got '", line, "'");
        int dense = std::stoi(fields[0]);
        SEQREC_CHECK(dense == expected, "format", origin,
                     ": catalog ids must be dense and ascending, got ", dense,
                     " expecting ", expected);
        SEQREC_CHECK(!fields[1].empty(), "format", origin,
                     ": empty item id at dense id ", dense);
        int got = catalog.intern(fields[1]);
        SEQREC_CHECK(got == dense, "format", origin, ": duplicate item '",
                     fields[1], "'");
        ++expected;
    }
    return catalog;
}

inline std::vector<UserSequence> read_sequences(std::istream& is,
                                                const Catalog& catalog,
                                                const std::string& origin) {
    std::vector<UserSequence> out;
    std::string line;
    int user = 0;
    while (std::getline(is, line)) {
        line = detail::strip_cr(line);
        if (line.empty()) continue;
        auto fields = detail::split_line(line, '\t');
        SEQREC_CHECK(fields.size() == 2, "format", origin,
                     ": sequence line must be `user<TAB>item,item,...`, got '",
                     line, "'");
        UserSequence seq;
        seq.user = user++;
        seq.user_id = fields[0];
        for (const std::string& item : detail::split_line(fields[1], ','))
            seq.items.push_back(catalog.encode(item));
        SEQREC_CHECK(!seq.items.empty(), "format", origin,
                     ": user '", seq.user_id, "' has no items");
        out.push_back(std::move(seq));
    }
    return out;
}

// Repetition curve CSV: `n,class,count,repeats,probability`. Rows with zero
// count are omitted (probability undefined).
inline void write_repetition_csv(const RepetitionCurve& curve, std::ostream& os) {
    os << "n,class,count,repeats,probability\n";
    auto fmt_prob = [](double p) {
        std::ostringstream ss;
        ss.precision(17);
        ss << p;
        return ss.str();
    };
    for (std::size_t n = 1; n < curve.buckets.size(); ++n) {
        const RepetitionBucket& b = curve.buckets[n];
        if (b.count_with_dup > 0) {
            os << n << ",with_dup," << b.count_with_dup << ',' << b.repeat_with_dup
               << ',' << fmt_prob(*curve.prob_with_dup(n)) << '\n';
        }
        if (b.count_without_dup > 0) {
            os << n << ",without_dup," << b.count_without_dup << ','
               << b.repeat_without_dup << ','
               << fmt_prob(*curve.prob_without_dup(n)) << '\n';
        }
    }
}

// FNV-1a over the dense representation; used as the dataset fingerprint in
// run manifests.
inline std::uint64_t dataset_fingerprint(const SequenceDataset& data) {
    std::uint64_t h = 14695981039346656037ULL;
    auto mix = [&h](std::uint64_t v) {
        for (int b = 0; b < 8; ++b) {
            h ^= (v >> (b * 8)) & 0xff;
            h *= 1099511628211ULL;
        }
    };
    mix(static_cast<std::uint64_t>(data.catalog.item_count()));
    for (const auto& seq : data.sequences) {
        mix(static_cast<std::uint64_t>(seq.items.size()));
        for (int it : seq.items) mix(static_cast<std::uint64_t>(it));
    }
    return h;
}

}  // namespace seqrec
