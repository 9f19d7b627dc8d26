#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "seqrec/tape.hpp"

namespace seqrec {

// Ordered registry of every trainable tensor in a model; slot indices align
// gradient sinks and optimizer state.
template <typename S>
struct ParamRegistry {
    std::vector<Parameter<S>*> params;

    void add(Parameter<S>& p) {
        for (const auto* existing : params)
            SEQREC_CHECK(existing->name != p.name, "config",
                         "duplicate parameter name '", p.name, "'");
        p.slot = static_cast<int>(params.size());
        params.push_back(&p);
    }

    std::size_t total_size() const {
        std::size_t n = 0;
        for (auto* p : params) n += p->value.numel();
        return n;
    }
};

template <typename S>
Tensor<S> dropout_mask(std::vector<std::size_t> shape, double rate, Rng& rng) {
    Tensor<S> mask = Tensor<S>::zeros(std::move(shape));
    S scale = static_cast<S>(1.0 / (1.0 - rate));
    for (auto& v : mask.data) v = rng.next_uniform() >= rate ? scale : S(0);
    return mask;
}

// Per-position hidden states, one [n x hidden] matrix per encoder layer;
// layers.back() is the top layer consumed by the output head.
struct HiddenStates {
    std::vector<Var> layers;
    Var top() const { return layers.back(); }
};

struct GruConfig {
    int hidden_size = 64;
    int item_embedding_size = 64;
    double dropout = 0.0;  // input (embedding) dropout
};

struct AttnConfig {
    int hidden_size = 64;  // also the item embedding size
    int layers = 2;
    int heads = 2;
    int inner_size = 256;
    double attention_dropout = 0.1;
    double dropout = 0.0;  // hidden-state dropout
    int max_positions = 50;
};

// Optional capture of attention probabilities, [layer][head] value tensors.
template <typename S>
struct AttnTrace {
    std::vector<std::vector<Tensor<S>>> probs;
};

// Single-layer GRU with the standard gate equations and zero initial state.
template <typename S>
class GruEncoder {
public:
    GruEncoder() = default;

    explicit GruEncoder(const GruConfig& cfg) : cfg_(cfg) {
        SEQREC_CHECK(cfg.hidden_size > 0 && cfg.item_embedding_size > 0, "config",
                     "GruEncoder: sizes must be positive");
        auto zeros = [](int r, int c) {
            return Tensor<S>::zeros({static_cast<std::size_t>(r),
                                     static_cast<std::size_t>(c)});
        };
        int h = cfg.hidden_size, e = cfg.item_embedding_size;
        w_ir_ = Parameter<S>("gru.w_ir", zeros(h, e));
        w_iz_ = Parameter<S>("gru.w_iz", zeros(h, e));
        w_in_ = Parameter<S>("gru.w_in", zeros(h, e));
        w_hr_ = Parameter<S>("gru.w_hr", zeros(h, h));
        w_hz_ = Parameter<S>("gru.w_hz", zeros(h, h));
        w_hn_ = Parameter<S>("gru.w_hn", zeros(h, h));
        auto vec = [h] { return Tensor<S>::zeros({static_cast<std::size_t>(h)}); };
        b_ir_ = Parameter<S>("gru.b_ir", vec());
        b_iz_ = Parameter<S>("gru.b_iz", vec());
        b_in_ = Parameter<S>("gru.b_in", vec());
        b_hr_ = Parameter<S>("gru.b_hr", vec());
        b_hz_ = Parameter<S>("gru.b_hz", vec());
        b_hn_ = Parameter<S>("gru.b_hn", vec());
    }

    void init(Rng& rng, double stddev = 0.02) {
        for (auto* w : {&w_ir_, &w_iz_, &w_in_, &w_hr_, &w_hz_, &w_hn_})
            w->value = Tensor<S>::randn(w->value.shape, rng, stddev);
    }

    void register_params(ParamRegistry<S>& reg) {
        for (auto* p : {&w_ir_, &w_iz_, &w_in_, &w_hr_, &w_hz_, &w_hn_, &b_ir_,
                        &b_iz_, &b_in_, &b_hr_, &b_hz_, &b_hn_})
            reg.add(*p);
    }

    int num_layers() const { return 1; }
    int hidden_size() const { return cfg_.hidden_size; }
    const GruConfig& config() const { return cfg_; }

    // `emb` is the [n x e] window embedding matrix.
    HiddenStates forward(Tape<S>& tape, Var emb, bool training, Rng* rng) {
        const auto& te = tape.val(emb);
        SEQREC_CHECK(te.rank() == 2 && te.rows() >= 1, "shape",
                     "gru_forward: window embeddings ", te.shape_str());
        std::size_t n = te.rows();
        if (training && cfg_.dropout > 0.0) {
            SEQREC_CHECK(rng != nullptr, "state", "gru_forward: dropout needs rng");
            emb = tape.apply_mask(emb, dropout_mask<S>(te.shape, cfg_.dropout, *rng));
        }

        Var w_ir = tape.leaf(w_ir_);
        Var w_iz = tape.leaf(w_iz_);
        Var w_in = tape.leaf(w_in_);
        Var w_hr = tape.leaf(w_hr_);
        Var w_hz = tape.leaf(w_hz_);
        Var w_hn = tape.leaf(w_hn_);
        Var b_ir = tape.leaf(b_ir_);
        Var b_iz = tape.leaf(b_iz_);
        Var b_in = tape.leaf(b_in_);
        Var b_hr = tape.leaf(b_hr_);
        Var b_hz = tape.leaf(b_hz_);
        Var b_hn = tape.leaf(b_hn_);

        Var h = tape.constant(
            Tensor<S>::zeros({static_cast<std::size_t>(cfg_.hidden_size)}));
        std::vector<Var> states;
        states.reserve(n);
        for (std::size_t t = 0; t < n; ++t) {
            Var x = tape.row_select(emb, t);
            Var r = tape.sigmoid(
                tape.add(tape.add(tape.matvec(w_ir, x), b_ir),
                         tape.add(tape.matvec(w_hr, h), b_hr)));
            Var z = tape.sigmoid(
                tape.add(tape.add(tape.matvec(w_iz, x), b_iz),
                         tape.add(tape.matvec(w_hz, h), b_hz)));
            Var cand = tape.tanh_(
                tape.add(tape.add(tape.matvec(w_in, x), b_in),
                         tape.mul(r, tape.add(tape.matvec(w_hn, h), b_hn))));
            // h' = (1-z)*cand + z*h
            h = tape.add(cand, tape.mul(z, tape.sub(h, cand)));
            states.push_back(h);
        }
        HiddenStates out;
        out.layers.push_back(tape.stack_rows(states));
        return out;
    }

private:
    GruConfig cfg_;
    Parameter<S> w_ir_, w_iz_, w_in_, w_hr_, w_hz_, w_hn_;
    Parameter<S> b_ir_, b_iz_, b_in_, b_hr_, b_hz_, b_hn_;
};

// Causal multi-head self-attention encoder (post-norm residual blocks,
// position-wise GELU feed-forward, learned positional embeddings).
template <typename S>
class AttnEncoder {
public:
    AttnEncoder() = default;

    explicit AttnEncoder(const AttnConfig& cfg) : cfg_(cfg) {
        SEQREC_CHECK(cfg.hidden_size > 0 && cfg.layers > 0 && cfg.heads > 0,
                     "config", "AttnEncoder: sizes must be positive");
        SEQREC_CHECK(cfg.hidden_size % cfg.heads == 0, "config",
                     "AttnEncoder: hidden_size ", cfg.hidden_size,
                     " not divisible by heads ", cfg.heads);
        int d = cfg.hidden_size;
        int dh = d / cfg.heads;
        pos_emb_ = Parameter<S>(
            "attn.pos_emb",
            Tensor<S>::zeros({static_cast<std::size_t>(cfg.max_positions),
                              static_cast<std::size_t>(d)}));
        layers_.resize(cfg.layers);
        for (int l = 0; l < cfg.layers; ++l) {
            Layer& layer = layers_[l];
            std::string prefix = "attn.l" + std::to_string(l) + ".";
            layer.heads.resize(cfg.heads);
            for (int hd = 0; hd < cfg.heads; ++hd) {
                std::string hp = prefix + "h" + std::to_string(hd) + ".";
                auto mat = [&](const char* name, int r, int c) {
                    return Parameter<S>(hp + name,
                                        Tensor<S>::zeros(
                                            {static_cast<std::size_t>(r),
                                             static_cast<std::size_t>(c)}));
                };
                layer.heads[hd].wq = mat("wq", dh, d);
                layer.heads[hd].wk = mat("wk", dh, d);
                layer.heads[hd].wv = mat("wv", dh, d);
                layer.heads[hd].wo = mat("wo", d, dh);
                layer.heads[hd].bq = Parameter<S>(
                    hp + "bq", Tensor<S>::zeros({static_cast<std::size_t>(dh)}));
                layer.heads[hd].bk = Parameter<S>(
                    hp + "bk", Tensor<S>::zeros({static_cast<std::size_t>(dh)}));
                layer.heads[hd].bv = Parameter<S>(
                    hp + "bv", Tensor<S>::zeros({static_cast<std::size_t>(dh)}));
            }
            auto vec_d = [d] { return Tensor<S>::zeros({static_cast<std::size_t>(d)}); };
            layer.bo = Parameter<S>(prefix + "bo", vec_d());
            layer.ln1_g = Parameter<S>(prefix + "ln1.gain", vec_d());
            layer.ln1_b = Parameter<S>(prefix + "ln1.bias", vec_d());
            layer.ln2_g = Parameter<S>(prefix + "ln2.gain", vec_d());
            layer.ln2_b = Parameter<S>(prefix + "ln2.bias", vec_d());
            layer.ln1_g.value.fill(S(1));
            layer.ln2_g.value.fill(S(1));
            layer.ffn_w1 = Parameter<S>(
                prefix + "ffn.w1",
                Tensor<S>::zeros({static_cast<std::size_t>(cfg.inner_size),
                                  static_cast<std::size_t>(d)}));
            layer.ffn_b1 = Parameter<S>(
                prefix + "ffn.b1",
                Tensor<S>::zeros({static_cast<std::size_t>(cfg.inner_size)}));
            layer.ffn_w2 = Parameter<S>(
                prefix + "ffn.w2",
                Tensor<S>::zeros({static_cast<std::size_t>(d),
                                  static_cast<std::size_t>(cfg.inner_size)}));
            layer.ffn_b2 = Parameter<S>(prefix + "ffn.b2", vec_d());
        }
    }

    void init(Rng& rng, double stddev = 0.02) {
        pos_emb_.value = Tensor<S>::randn(pos_emb_.value.shape, rng, stddev);
        for (auto& layer : layers_) {
            for (auto& head : layer.heads) {
                for (auto* w : {&head.wq, &head.wk, &head.wv, &head.wo})
                    w->value = Tensor<S>::randn(w->value.shape, rng, stddev);
            }
            layer.ffn_w1.value = Tensor<S>::randn(layer.ffn_w1.value.shape, rng, stddev);
            layer.ffn_w2.value = Tensor<S>::randn(layer.ffn_w2.value.shape, rng, stddev);
        }
    }

    void register_params(ParamRegistry<S>& reg) {
        reg.add(pos_emb_);
        for (auto& layer : layers_) {
            for (auto& head : layer.heads) {
                reg.add(head.wq);
                reg.add(head.bq);
                reg.add(head.wk);
                reg.add(head.bk);
                reg.add(head.wv);
                reg.add(head.bv);
                reg.add(head.wo);
            }
            reg.add(layer.bo);
            reg.add(layer.ln1_g);
            reg.add(layer.ln1_b);
            reg.add(layer.ffn_w1);
            reg.add(layer.ffn_b1);
            reg.add(layer.ffn_w2);
            reg.add(layer.ffn_b2);
            reg.add(layer.ln2_g);
            reg.add(layer.ln2_b);
        }
    }

    int num_layers() const { return cfg_.layers; }
    int hidden_size() const { return cfg_.hidden_size; }
    const AttnConfig& config() const { return cfg_; }

    HiddenStates forward(Tape<S>& tape, Var emb, bool training, Rng* rng,
                         AttnTrace<S>* trace = nullptr) {
        const auto& te = tape.val(emb);
        SEQREC_CHECK(te.rank() == 2 && te.rows() >= 1, "shape",
                     "attn_forward: window embeddings ", te.shape_str());
        std::size_t n = te.rows();
        SEQREC_CHECK(n <= static_cast<std::size_t>(cfg_.max_positions), "range",
                     "attn_forward: window length ", n, " exceeds max positions ",
                     cfg_.max_positions);
        int dh = cfg_.hidden_size / cfg_.heads;
        const S inv_sqrt_dh = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
        bool use_dropout = training && cfg_.dropout > 0.0;
        bool use_attn_dropout = training && cfg_.attention_dropout > 0.0;
        if ((use_dropout || use_attn_dropout)) {
            SEQREC_CHECK(rng != nullptr, "state", "attn_forward: dropout needs rng");
        }
        auto maybe_dropout = [&](Var x) {
            if (!use_dropout) return x;
            return tape.apply_mask(
                x, dropout_mask<S>(tape.val(x).shape, cfg_.dropout, *rng));
        };

        std::vector<int> pos_ids(n);
        for (std::size_t i = 0; i < n; ++i) pos_ids[i] = static_cast<int>(i);
        Var pos = tape.embedding_gather(tape.leaf(pos_emb_), pos_ids);
        Var x = maybe_dropout(tape.add(emb, pos));

        if (trace) trace->probs.assign(layers_.size(), {});

        HiddenStates out;
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            Layer& layer = layers_[l];
            Var attn_sum;
            for (std::size_t hd = 0; hd < layer.heads.size(); ++hd) {
                auto& head = layer.heads[hd];
                Var q = tape.add_rowvec(tape.matmul_nt(x, tape.leaf(head.wq)),
                                        tape.leaf(head.bq));
                Var k = tape.add_rowvec(tape.matmul_nt(x, tape.leaf(head.wk)),
                                        tape.leaf(head.bk));
                Var v = tape.add_rowvec(tape.matmul_nt(x, tape.leaf(head.wv)),
                                        tape.leaf(head.bv));
                Var scores = tape.scale(tape.matmul_nt(q, k), inv_sqrt_dh);
                Var probs = tape.causal_row_softmax(scores);
                if (trace) trace->probs[l].push_back(tape.val(probs));
                if (use_attn_dropout) {
                    probs = tape.apply_mask(
                        probs, dropout_mask<S>(tape.val(probs).shape,
                                               cfg_.attention_dropout, *rng));
                }
                Var ctx = tape.matmul(probs, v);
                Var proj = tape.matmul_nt(ctx, tape.leaf(head.wo));
                attn_sum = hd == 0 ? proj : tape.add(attn_sum, proj);
            }
            attn_sum = tape.add_rowvec(attn_sum, tape.leaf(layer.bo));
            attn_sum = maybe_dropout(attn_sum);
            x = tape.layer_norm(tape.add(x, attn_sum), tape.leaf(layer.ln1_g),
                                tape.leaf(layer.ln1_b));

            Var f = tape.gelu(tape.add_rowvec(
                tape.matmul_nt(x, tape.leaf(layer.ffn_w1)), tape.leaf(layer.ffn_b1)));
            f = tape.add_rowvec(tape.matmul_nt(f, tape.leaf(layer.ffn_w2)),
                                tape.leaf(layer.ffn_b2));
            f = maybe_dropout(f);
            x = tape.layer_norm(tape.add(x, f), tape.leaf(layer.ln2_g),
                                tape.leaf(layer.ln2_b));
            out.layers.push_back(x);
        }
        return out;
    }

private:
    struct Head {
        Parameter<S> wq, bq, wk, bk, wv, bv, wo;
    };
    struct Layer {
        std::vector<Head> heads;
        Parameter<S> bo;
        Parameter<S> ln1_g, ln1_b;
        Parameter<S> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
        Parameter<S> ln2_g, ln2_b;
    };

    AttnConfig cfg_;
    Parameter<S> pos_emb_;
    std::vector<Layer> layers_;
};

}  // namespace seqrec
