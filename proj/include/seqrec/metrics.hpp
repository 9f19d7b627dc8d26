#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "seqrec/common.hpp"

namespace seqrec {

// 1-based rank of `target` under full-catalog scoring. Ties are broken by
// ascending item id, so among equal scores the smaller id ranks first.
template <typename S>
int full_rank(std::span<const S> scores, int target) {
    SEQREC_CHECK(target >= 0 && static_cast<std::size_t>(target) < scores.size(),
                 "range", "full_rank: target ", target, " out of ", scores.size());
    S ts = scores[target];
    SEQREC_CHECK(std::isfinite(static_cast<double>(ts)), "numeric",
                 "full_rank: non-finite target score");
    int rank = 1;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        SEQREC_CHECK(std::isfinite(static_cast<double>(scores[i])), "numeric",
                     "full_rank: non-finite score at item ", i);
        if (scores[i] > ts) ++rank;
        else if (scores[i] == ts && static_cast<int>(i) < target) ++rank;
    }
    return rank;
}

// Single-relevant-item metric forms.
inline double ndcg_at_k(int rank, int k = 10) {
    return rank <= k ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
}

inline double hr_at_k(int rank, int k = 10) { return rank <= k ? 1.0 : 0.0; }

inline double mrr_at_k(int rank, int k = 10) {
    return rank <= k ? 1.0 / static_cast<double>(rank) : 0.0;
}

struct MetricSummary {
    double ndcg = 0.0;
    double hr = 0.0;
    double mrr = 0.0;
    std::size_t users = 0;
};

inline MetricSummary summarize_ranks(std::span<const int> ranks, int k = 10) {
    MetricSummary m;
    m.users = ranks.size();
    if (ranks.empty()) return m;
    for (int r : ranks) {
        m.ndcg += ndcg_at_k(r, k);
        m.hr += hr_at_k(r, k);
        m.mrr += mrr_at_k(r, k);
    }
    m.ndcg /= static_cast<double>(ranks.size());
    m.hr /= static_cast<double>(ranks.size());
    m.mrr /= static_cast<double>(ranks.size());
    return m;
}

// Geometric mean via exp(mean of logs). A zero (or negative) entry makes the
// whole mean 0; `zero_seen` lets callers surface a warning.
inline double geometric_mean(std::span<const double> values,
                             bool* zero_seen = nullptr) {
    SEQREC_CHECK(!values.empty(), "range", "geometric_mean: no values");
    double log_sum = 0.0;
    for (double v : values) {
        if (v <= 0.0) {
            if (zero_seen) *zero_seen = true;
            return 0.0;
        }
        log_sum += std::log(v);
    }
    return std::exp(log_sum / static_cast<double>(values.size()));
}

// Per-dataset metric rows plus geometric-mean aggregates over named groups.
struct MetricReport {
    struct Row {
        std::string dataset;
        std::string variant;
        std::string group;
        MetricSummary metrics;
    };
    std::vector<Row> rows;
};

}  // namespace seqrec
