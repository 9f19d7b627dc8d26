#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "seqrec/corpus.hpp"
#include "seqrec/encoders.hpp"
#include "seqrec/heads.hpp"

namespace seqrec {

enum class EncoderKind { Gru, Attention };

struct ModelConfig {
    EncoderKind encoder = EncoderKind::Gru;
    GruConfig gru;
    AttnConfig attn;
    HeadConfig head;
    int item_count = 0;
    double init_stddev = 0.02;

    int embedding_size() const {
        return encoder == EncoderKind::Gru ? gru.item_embedding_size
                                           : attn.hidden_size;
    }
    int hidden_size() const {
        return encoder == EncoderKind::Gru ? gru.hidden_size : attn.hidden_size;
    }
    int num_layers() const { return encoder == EncoderKind::Gru ? 1 : attn.layers; }
};

// Shared input/output item embedding table + neural encoder + the configured
// softmax head. One instance owns all trainable parameters.
template <typename S>
class Model {
public:
    explicit Model(const ModelConfig& cfg, std::uint64_t init_seed = 42)
        : cfg_(cfg) {
        SEQREC_CHECK(cfg.item_count > 0, "config", "model: empty catalog");
        cfg_.head.validate(cfg_.item_count);
        table_ = Parameter<S>(
            "item_embeddings",
            Tensor<S>::zeros({static_cast<std::size_t>(cfg_.item_count),
                              static_cast<std::size_t>(cfg_.embedding_size())}));
        if (cfg_.encoder == EncoderKind::Gru) {
            gru_ = std::make_unique<GruEncoder<S>>(cfg_.gru);
        } else {
            attn_ = std::make_unique<AttnEncoder<S>>(cfg_.attn);
        }
        proj_ = ProjectionSet<S>::build(cfg_.head, cfg_.embedding_size(),
                                        cfg_.hidden_size(), cfg_.num_layers());
        registry_.add(table_);
        if (gru_) gru_->register_params(registry_);
        if (attn_) attn_->register_params(registry_);
        proj_.register_params(registry_);

        Rng rng(init_seed);
        table_.value = Tensor<S>::randn(table_.value.shape, rng, cfg_.init_stddev);
        if (gru_) gru_->init(rng, cfg_.init_stddev);
        if (attn_) attn_->init(rng, cfg_.init_stddev);
        proj_.init(rng, cfg_.init_stddev);
    }

    const ModelConfig& config() const { return cfg_; }
    ParamRegistry<S>& registry() { return registry_; }
    ProjectionSet<S>& projections() { return proj_; }
    Parameter<S>& embedding_table() { return table_; }
    GruEncoder<S>* gru() { return gru_.get(); }
    AttnEncoder<S>* attn() { return attn_.get(); }

    // Per-position logits for a whole window: row t scores the next item
    // after window position t, with the context partition limited to the
    // items visible at t. Returns an [n x item_count] matrix.
    Var window_logits(Tape<S>& tape, std::span<const int> inputs, bool training,
                      Rng* dropout_rng, PartitionMap* last_position_map = nullptr) {
        SEQREC_CHECK(!inputs.empty(), "shape", "window_logits: empty window");
        for (int item : inputs)
            SEQREC_CHECK(item >= 0 && item < cfg_.item_count, "range",
                         "window_logits: item ", item, " out of catalog");
        Var table = tape.leaf(table_);
        Var emb = tape.embedding_gather(
            table, std::vector<int>(inputs.begin(), inputs.end()));
        HiddenStates states = gru_ ? gru_->forward(tape, emb, training, dropout_rng)
                                   : attn_->forward(tape, emb, training, dropout_rng);
        Var q = decision_states(tape, states, cfg_.head, proj_);
        std::size_t n = inputs.size();

        if (cfg_.head.variant == HeadVariant::Vanilla) {
            Var f_v = proj_.v->apply(tape, q);
            return tape.matmul_nt(f_v, table);
        }
        if (cfg_.head.variant == HeadVariant::MoS) {
            std::vector<Var> head_logits;
            head_logits.reserve(proj_.mos.size());
            for (auto& proj : proj_.mos)
                head_logits.push_back(tape.matmul_nt(proj.apply(tape, q), table));
            return logits_mos(tape, std::span<const Var>(head_logits));
        }

        // context-partition family
        Var f_v_all = proj_.v->apply(tape, q);
        Var base_all = tape.matmul_nt(f_v_all, table);
        Var f_c_all = proj_.c->apply(tape, q);
        Var f_p_all, ll_rows;
        if (cfg_.head.uses_pointer()) {
            f_p_all = proj_.p->apply(tape, q);
            ll_rows = proj_.l->apply(tape, q);
        }
        std::array<Var, 3> f_r_all;
        for (int i = 0; i < cfg_.head.rerank_stages(); ++i)
            f_r_all[i] = proj_.r[i]->apply(tape, q);

        std::vector<Var> rows;
        rows.reserve(n);
        for (std::size_t t = 0; t < n; ++t) {
            Var row = tape.row_select(base_all, t);
            std::span<const int> prefix = inputs.subspan(0, t + 1);
            PartitionMap* map =
                (last_position_map && t + 1 == n) ? last_position_map : nullptr;
            if (cfg_.head.variant == HeadVariant::CPR) {
                std::vector<Var> f_r;
                for (int i = 0; i < cfg_.head.rerank_stages(); ++i)
                    f_r.push_back(tape.row_select(f_r_all[i], t));
                row = rerank_cascade(tape, row, cfg_.head.k_list,
                                     std::span<const Var>(f_r), table, prefix,
                                     cfg_.head.exclude_context_from_topk, map);
            } else if (map) {
                map->source.assign(static_cast<std::size_t>(cfg_.item_count),
                                   kSourceVocab);
                for (int id : unique_sorted(prefix)) map->source[id] = kSourceContext;
                map->build_sets();
            }
            Var f_c = tape.row_select(f_c_all, t);
            if (cfg_.head.uses_pointer()) {
                Var f_p = tape.row_select(f_p_all, t);
                auto [ids, vals] = context_pointer_values(tape, table, f_c, f_p,
                                                          ll_rows, prefix, t + 1);
                row = tape.index_scatter_assign(row, std::move(ids), vals);
            } else {
                row = logits_context(tape, row, f_c, table, prefix);
            }
            rows.push_back(row);
        }
        return tape.stack_rows(rows);
    }

    // Mean cross-entropy over the window's positions.
    Var window_loss(Tape<S>& tape, const TrainWindow& window, bool training,
                    Rng* dropout_rng) {
        SEQREC_CHECK(window.inputs.size() == window.targets.size() &&
                         !window.inputs.empty(),
                     "shape", "window_loss: window with ", window.inputs.size(),
                     " inputs and ", window.targets.size(), " targets");
        Var logits = window_logits(tape, window.inputs, training, dropout_rng);
        return tape.softmax_cross_entropy(logits, window.targets);
    }

    // Evaluation scores for the next item after `inputs`: softmax
    // probabilities, with window items zeroed when dedup is configured.
    Tensor<S> score_next(std::span<const int> inputs,
                         PartitionMap* map = nullptr) {
        Tape<S> tape(false);
        Var logits = window_logits(tape, inputs, false, nullptr, map);
        std::size_t n = inputs.size();
        Tensor<S> last = Tensor<S>::zeros({static_cast<std::size_t>(cfg_.item_count)});
        const Tensor<S>& all = tape.val(logits);
        std::copy(all.row_ptr(n - 1), all.row_ptr(n - 1) + cfg_.item_count,
                  last.data.begin());
        Tensor<S> probs = probabilities(last);
        if (cfg_.head.dedup) dedup_postprocess(probs, inputs);
        return probs;
    }

private:
    ModelConfig cfg_;
    Parameter<S> table_;
    std::unique_ptr<GruEncoder<S>> gru_;
    std::unique_ptr<AttnEncoder<S>> attn_;
    ProjectionSet<S> proj_;
    ParamRegistry<S> registry_;
};

}  // namespace seqrec
