#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "seqrec/encoders.hpp"
#include "seqrec/tape.hpp"

namespace seqrec {

enum class HeadVariant { Vanilla, Context, CP, CPR, MoS };

inline const char* head_variant_name(HeadVariant v) {
    switch (v) {
        case HeadVariant::Vanilla: return "vanilla";
        case HeadVariant::Context: return "c";
        case HeadVariant::CP: return "cp";
        case HeadVariant::CPR: return "cpr";
        case HeadVariant::MoS: return "mos";
    }
    return "?";
}

// Which softmax head to assemble, plus the Mi and dedup switches.
struct HeadConfig {
    HeadVariant variant = HeadVariant::Vanilla;
    std::vector<int> k_list;  // CPR: {k1} or {k1,k2,k3}, strictly increasing
    int mos_k = 3;
    bool mi = false;
    bool dedup = false;
    // Alternative reading of the cascade: drop window items before each
    // top-k selection so every reranker partition holds exactly k items.
    bool exclude_context_from_topk = false;

    void validate(int item_count) const {
        if (variant == HeadVariant::CPR) {
            SEQREC_CHECK(k_list.size() == 1 || k_list.size() == 3, "config",
                         "head: k_list must have 1 or 3 entries, got ",
                         k_list.size());
            for (std::size_t i = 0; i < k_list.size(); ++i) {
                SEQREC_CHECK(k_list[i] >= 1, "config", "head: k_list[", i,
                             "] must be positive");
                if (i > 0)
                    SEQREC_CHECK(k_list[i] > k_list[i - 1], "config",
                                 "head: k_list must be strictly increasing");
                SEQREC_CHECK(k_list[i] < item_count, "config", "head: k=",
                             k_list[i], " must be smaller than the catalog (",
                             item_count, " items)");
            }
        } else {
            SEQREC_CHECK(k_list.empty(), "config",
                         "head: k_list is only valid for the cpr variant");
        }
        if (variant == HeadVariant::MoS) {
            SEQREC_CHECK(mos_k >= 1, "config", "head: mos_k must be >= 1");
        }
    }

    bool uses_context() const {
        return variant == HeadVariant::Context || variant == HeadVariant::CP ||
               variant == HeadVariant::CPR;
    }
    bool uses_pointer() const {
        return variant == HeadVariant::CP || variant == HeadVariant::CPR;
    }
    int rerank_stages() const {
        return variant == HeadVariant::CPR ? static_cast<int>(k_list.size()) : 0;
    }
};

enum LogitSource : std::int8_t {
    kSourceContext = 0,
    kSourceR1 = 1,
    kSourceR2 = 2,
    kSourceR3 = 3,
    kSourceVocab = 4,
};

// Assignment of every catalog item to exactly one logit source for one
// prediction step. Reranker sets are reported net of the context set
// (set-difference semantics).
struct PartitionMap {
    std::vector<std::int8_t> source;  // LogitSource per item
    std::vector<int> context, r1, r2, r3, vocabulary;

    void build_sets() {
        context.clear();
        r1.clear();
        r2.clear();
        r3.clear();
        vocabulary.clear();
        for (std::size_t i = 0; i < source.size(); ++i) {
            switch (source[i]) {
                case kSourceContext: context.push_back(static_cast<int>(i)); break;
                case kSourceR1: r1.push_back(static_cast<int>(i)); break;
                case kSourceR2: r2.push_back(static_cast<int>(i)); break;
                case kSourceR3: r3.push_back(static_cast<int>(i)); break;
                default: vocabulary.push_back(static_cast<int>(i)); break;
            }
        }
    }
};

// Affine map W*x + b applied rowwise to matrices or directly to vectors.
template <typename S>
struct Projection {
    Parameter<S> w, b;

    Projection() = default;
    Projection(const std::string& name, int out_size, int in_size)
        : w(name + ".w", Tensor<S>::zeros({static_cast<std::size_t>(out_size),
                                           static_cast<std::size_t>(in_size)})),
          b(name + ".b", Tensor<S>::zeros({static_cast<std::size_t>(out_size)})) {}

    void init(Rng& rng, double stddev = 0.02) {
        w.value = Tensor<S>::randn(w.value.shape, rng, stddev);
        b.value.fill(S(0));
    }

    void register_params(ParamRegistry<S>& reg) {
        reg.add(w);
        reg.add(b);
    }

    Var apply(Tape<S>& tape, Var x) {
        if (tape.val(x).rank() == 1)
            return tape.add(tape.matvec(tape.leaf(w), x), tape.leaf(b));
        return tape.add_rowvec(tape.matmul_nt(x, tape.leaf(w)), tape.leaf(b));
    }
};

// The projections demanded by a head configuration. Only those the variant
// needs are instantiated.
template <typename S>
struct ProjectionSet {
    std::optional<Projection<S>> v, c, p, l, h;
    std::array<std::optional<Projection<S>>, 3> r;
    std::vector<Projection<S>> mos;

    // `state_size` is the decision-state width after optional Mi expansion;
    // `concat_size` the Mi reducer input (3 positions x all layers x hidden).
    static ProjectionSet build(const HeadConfig& cfg, int emb_size,
                               int hidden_size, int num_layers) {
        ProjectionSet set;
        int state_size = cfg.mi ? 2 * hidden_size : hidden_size;
        if (cfg.variant == HeadVariant::MoS) {
            for (int k = 0; k < cfg.mos_k; ++k)
                set.mos.emplace_back("proj.mos" + std::to_string(k), emb_size,
                                     state_size);
        } else {
            set.v.emplace("proj.v", emb_size, state_size);
            if (cfg.uses_context()) set.c.emplace("proj.c", emb_size, state_size);
            if (cfg.uses_pointer()) {
                set.p.emplace("proj.p", emb_size, state_size);
                set.l.emplace("proj.l", emb_size, state_size);
            }
            for (int i = 0; i < cfg.rerank_stages(); ++i)
                set.r[i].emplace("proj.r" + std::to_string(i + 1), emb_size,
                                 state_size);
        }
        if (cfg.mi)
            set.h.emplace("proj.h", hidden_size, 3 * num_layers * hidden_size);
        return set;
    }

    void init(Rng& rng, double stddev = 0.02) {
        for (auto* proj : {&v, &c, &p, &l, &h})
            if (*proj) (*proj)->init(rng, stddev);
        for (auto& proj : r)
            if (proj) proj->init(rng, stddev);
        for (auto& proj : mos) proj.init(rng, stddev);
    }

    void register_params(ParamRegistry<S>& reg) {
        for (auto* proj : {&v, &c, &p, &l, &h})
            if (*proj) (*proj)->register_params(reg);
        for (auto& proj : r)
            if (proj) proj->register_params(reg);
        for (auto& proj : mos) proj.register_params(reg);
    }
};

inline std::vector<int> unique_sorted(std::span<const int> items) {
    std::vector<int> out(items.begin(), items.end());
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

// ---------------------------------------------------------------------------
// Head operations. All per-position functions take the projected decision
// states for one step (vectors of size emb_size) and produce a [item_count]
// logit vector on the tape.
// ---------------------------------------------------------------------------

// Logit(x) = f_v . p_x for every catalog item.
template <typename S>
Var logits_vanilla(Tape<S>& tape, Var f_v, Var table) {
    return tape.matvec(table, f_v);
}

// Overwrite window items with f_c . p_x on top of base vanilla logits.
template <typename S>
Var logits_context(Tape<S>& tape, Var base_logits, Var f_c, Var table,
                   std::span<const int> window_items) {
    if (window_items.empty()) return base_logits;
    std::vector<int> ctx = unique_sorted(window_items);
    Var ctx_emb = tape.embedding_gather(table, ctx);
    Var vals = tape.matvec(ctx_emb, f_c);
    return tape.index_scatter_assign(base_logits, std::move(ctx), vals);
}

// Local (context-dependent) embeddings: mean of the projected per-position
// states over each window item's occurrences. `ll_rows` is L_L applied to
// the per-position decision states; only positions < limit participate.
struct LocalEmbeddings {
    std::vector<int> items;   // unique window items, ascending
    std::vector<Var> values;  // aligned [emb_size] vectors
};

template <typename S>
LocalEmbeddings local_embeddings_from_rows(Tape<S>& tape,
                                           std::span<const int> window_items,
                                           Var ll_rows, std::size_t limit) {
    LocalEmbeddings out;
    SEQREC_CHECK(limit <= window_items.size() &&
                     limit <= tape.val(ll_rows).rows(),
                 "shape", "local_embeddings: limit ", limit, " beyond window");
    out.items = unique_sorted(window_items.subspan(0, limit));
    for (int item : out.items) {
        std::vector<int> occ;
        for (std::size_t j = 0; j < limit; ++j)
            if (window_items[j] == item) occ.push_back(static_cast<int>(j));
        out.values.push_back(tape.mean_rows(ll_rows, std::move(occ)));
    }
    return out;
}

// Spec-facing form: applies the L_L projection to the per-position states.
template <typename S>
LocalEmbeddings local_embeddings(Tape<S>& tape, std::span<const int> window_items,
                                 Var q_rows, Projection<S>& proj_l) {
    return local_embeddings_from_rows(tape, window_items, proj_l.apply(tape, q_rows),
                                      window_items.size());
}

// Context + pointer values for the window items: f_c . p_x + f_p . f_{x,L}.
// Returns the scatter ids (unique window items) and the value vector.
template <typename S>
std::pair<std::vector<int>, Var> context_pointer_values(
    Tape<S>& tape, Var table, Var f_c, Var f_p, Var ll_rows,
    std::span<const int> window_items, std::size_t limit) {
    LocalEmbeddings locals =
        local_embeddings_from_rows(tape, window_items, ll_rows, limit);
    Var ctx_emb = tape.embedding_gather(table, locals.items);
    Var ctx_vals = tape.matvec(ctx_emb, f_c);
    Var local_mat = tape.stack_rows(locals.values);
    Var ptr_vals = tape.matvec(local_mat, f_p);
    return {locals.items, tape.add(ctx_vals, ptr_vals)};
}

// Full CP logits for one position.
template <typename S>
Var logits_cp(Tape<S>& tape, Var base_logits, Var table, Var f_c, Var f_p,
              Var ll_rows, std::span<const int> window_items) {
    if (window_items.empty()) return base_logits;
    auto [ids, vals] = context_pointer_values(tape, table, f_c, f_p, ll_rows,
                                              window_items, window_items.size());
    return tape.index_scatter_assign(base_logits, std::move(ids), vals);
}

// Reranker cascade. Stage order for k_list {k1,k2,k3}: select top-k3 from the
// base logits and overwrite with f_r3 . p_x, then top-k2 from the updated
// logits (f_r2), then top-k1 (f_r1). A single-entry k_list runs only the
// {k1, f_r1} stage. Top-k runs over all items unless `exclude_ctx` masks the
// window out of the selection. Selection indices are constants; gradients
// flow through the overwritten values only.
template <typename S>
Var rerank_cascade(Tape<S>& tape, Var logits, const std::vector<int>& k_list,
                   std::span<const Var> f_r, Var table,
                   std::span<const int> ctx_items, bool exclude_ctx,
                   PartitionMap* map) {
    SEQREC_CHECK(k_list.size() == 1 || k_list.size() == 3, "config",
                 "rerank_cascade: k_list must have 1 or 3 entries");
    SEQREC_CHECK(f_r.size() >= k_list.size(), "config",
                 "rerank_cascade: missing reranker states");
    std::size_t item_count = tape.val(logits).numel();
    for (int k : k_list)
        SEQREC_CHECK(k >= 1 && static_cast<std::size_t>(k) < item_count, "config",
                     "rerank_cascade: k=", k, " out of range for catalog of ",
                     item_count);
    std::vector<int> ctx = unique_sorted(ctx_items);

    if (map) {
        map->source.assign(item_count, kSourceVocab);
    }

    auto select = [&](Var current, int k) {
        if (!exclude_ctx || ctx.empty())
            return Tape<S>::top_k_ids(tape.val(current), static_cast<std::size_t>(k));
        Tensor<S> masked = tape.val(current);
        for (int id : ctx)
            masked.data[id] = -std::numeric_limits<S>::infinity();
        SEQREC_CHECK(static_cast<std::size_t>(k) <= item_count - ctx.size(),
                     "config", "rerank_cascade: k=", k,
                     " exceeds the catalog net of the context");
        return Tape<S>::top_k_ids(masked, static_cast<std::size_t>(k));
    };

    // stage index into f_r / partition source, from the widest partition down
    std::vector<std::pair<int, LogitSource>> stages;
    if (k_list.size() == 3) {
        stages = {{k_list[2], kSourceR3}, {k_list[1], kSourceR2},
                  {k_list[0], kSourceR1}};
    } else {
        stages = {{k_list[0], kSourceR1}};
    }
    for (auto [k, source] : stages) {
        std::vector<int> ids = select(logits, k);
        int stage_index = static_cast<int>(source) - static_cast<int>(kSourceR1);
        Var vals = tape.matvec(tape.embedding_gather(table, ids), f_r[stage_index]);
        if (map)
            for (int id : ids) map->source[id] = static_cast<std::int8_t>(source);
        logits = tape.index_scatter_assign(logits, std::move(ids), vals);
    }
    if (map) {
        for (int id : ctx) map->source[id] = kSourceContext;
        map->build_sets();
    }
    return logits;
}

// Efficient mixture-of-softmax: elementwise max of the per-head logits.
template <typename S>
Var logits_mos(Tape<S>& tape, std::span<const Var> per_head_logits) {
    SEQREC_CHECK(!per_head_logits.empty(), "config", "logits_mos: no heads");
    Var out = per_head_logits[0];
    for (std::size_t k = 1; k < per_head_logits.size(); ++k)
        out = tape.elementwise_max(out, per_head_logits[k]);
    return out;
}

// ---------------------------------------------------------------------------
// Mi expansion: q_j = h_top_j (+) GELU(L_h(concat of the last 3 positions'
// states across all layers)); missing positions contribute zero vectors.
// Returns the [n x 2*hidden] matrix of expanded per-position states.
// ---------------------------------------------------------------------------
template <typename S>
Var mi_expand(Tape<S>& tape, const HiddenStates& states, Projection<S>& proj_h) {
    SEQREC_CHECK(!states.layers.empty(), "shape", "mi_expand: no layer states");
    std::size_t n = tape.val(states.top()).rows();
    std::size_t hidden = tape.val(states.top()).cols();
    Var zero = tape.constant(Tensor<S>::zeros({hidden}));
    std::vector<Var> q_rows;
    q_rows.reserve(n);
    for (std::size_t j = 0; j < n; ++j) {
        std::vector<Var> parts;
        parts.reserve(3 * states.layers.size());
        for (std::size_t off = 0; off < 3; ++off) {
            for (std::size_t m = states.layers.size(); m-- > 0;) {
                if (j >= off)
                    parts.push_back(tape.row_select(states.layers[m], j - off));
                else
                    parts.push_back(zero);
            }
        }
        Var reduced = tape.gelu(proj_h.apply(tape, tape.concat(parts)));
        std::vector<Var> q_parts{tape.row_select(states.top(), j), reduced};
        q_rows.push_back(tape.concat(q_parts));
    }
    return tape.stack_rows(q_rows);
}

// Per-position decision states alongside the raw hidden states.
template <typename S>
Var decision_states(Tape<S>& tape, const HiddenStates& states,
                    const HeadConfig& cfg, ProjectionSet<S>& proj) {
    if (!cfg.mi) return states.top();
    SEQREC_CHECK(proj.h.has_value(), "config", "mi enabled but no reducer");
    return mi_expand(tape, states, *proj.h);
}

// ---------------------------------------------------------------------------
// Probabilities and dedup post-processing (plain tensors, evaluation path).
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> probabilities(const Tensor<S>& logits) {
    SEQREC_CHECK(logits.rank() == 1 && logits.numel() > 0, "shape",
                 "probabilities: logits ", logits.shape_str());
    S mx = logits.data[0];
    for (S v : logits.data) {
        SEQREC_CHECK(std::isfinite(static_cast<double>(v)), "numeric",
                     "probabilities: non-finite logit");
        mx = std::max(mx, v);
    }
    Tensor<S> out = logits;
    S sum = S(0);
    for (auto& v : out.data) {
        v = std::exp(v - mx);
        sum += v;
    }
    S inv = S(1) / sum;
    for (auto& v : out.data) v *= inv;
    return out;
}

// Zeroes the window items' probabilities. Deliberately does not renormalize:
// every consumer in the toolkit ranks, and ranking is unaffected.
template <typename S>
void dedup_postprocess(Tensor<S>& probs, std::span<const int> window_items) {
    for (int item : window_items) {
        SEQREC_CHECK(item >= 0 && static_cast<std::size_t>(item) < probs.numel(),
                     "range", "dedup_postprocess: item ", item, " out of range");
        probs.data[item] = S(0);
    }
}

}  // namespace seqrec
