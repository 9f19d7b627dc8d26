#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "seqrec/tensor.hpp"

namespace seqrec {

// A named tensor registered with a model. `slot` is the position in the
// model's parameter registry and indexes optimizer state and gradient sinks.
template <typename S>
struct Parameter {
    std::string name;
    Tensor<S> value;
    Tensor<S> grad;
    int slot = -1;

    Parameter() = default;
    Parameter(std::string n, Tensor<S> v)
        : name(std::move(n)), value(std::move(v)) {
        grad = Tensor<S>::zeros(value.shape);
    }

    void zero_grad() { grad.fill(S(0)); }
};

// Handle to a node on a tape.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Records one node per executed primitive; backward()
// replays the records in exact reverse order, accumulating (+=) into each
// node's grad buffer. A tape is single-use: build a fresh one per forward
// pass.
template <typename S>
class Tape {
public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    bool grad_enabled() const { return grad_enabled_; }

    // --- node access -------------------------------------------------------

    const Tensor<S>& val(Var v) const { return nodes_[v.id].value; }
    Tensor<S>& mutable_val(Var v) { return nodes_[v.id].value; }

    // Grad buffer of a node after backward(); empty tensor if nothing flowed.
    const Tensor<S>& grad_of(Var v) const { return nodes_[v.id].grad; }

    // --- leaves -------------------------------------------------------------

    Var constant(Tensor<S> t) { return push(std::move(t)); }

    Var leaf(Parameter<S>& p) {
        Var v = push(p.value);  // copy; parameters stay valid across tapes
        if (grad_enabled_) bindings_.push_back({v.id, &p});
        return v;
    }

    // --- elementwise / simple ----------------------------------------------

    Var add(Var a, Var b) {
        const Tensor<S>& ta = val(a);
        const Tensor<S>& tb = val(b);
        SEQREC_CHECK(ta.same_shape(tb), "shape",
                     "add: ", ta.shape_str(), " vs ", tb.shape_str());
        Tensor<S> out = ta;
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += tb.data[i];
        Var o = push(std::move(out));
        record([this, a, b, o] {
            const Tensor<S>& g = nodes_[o.id].grad;
            if (g.data.empty()) return;
            accumulate(grad_buf(a), g);
            accumulate(grad_buf(b), g);
        });
        return o;
    }

    // M [n x d] + v [d], broadcast over rows.
    Var add_rowvec(Var m, Var v) {
        const Tensor<S>& tm = val(m);
        const Tensor<S>& tv = val(v);
        SEQREC_CHECK(tm.rank() == 2 && tv.rank() == 1 && tm.cols() == tv.numel(),
                     "shape", "add_rowvec: ", tm.shape_str(), " vs ", tv.shape_str());
        Tensor<S> out = tm;
        for (std::size_t r = 0; r < tm.rows(); ++r) {
            S* row = out.row_ptr(r);
            for (std::size_t c = 0; c < tm.cols(); ++c) row[c] += tv.data[c];
        }
        Var o = push(std::move(out));
        record([this, m, v, o] {
            const Tensor<S>& g = nodes_[o.id].grad;
            if (g.data.empty()) return;
            accumulate(grad_buf(m), g);
            Tensor<S>& gv = grad_buf(v);
            std::size_t rows = g.shape[0], cols = g.shape[1];
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c)
                    gv.data[c] += g.data[r * cols + c];
        });
        return o;
    }

    Var sub(Var a, Var b) {
        const Tensor<S>& ta = val(a);
        const Tensor<S>& tb = val(b);
        SEQREC_CHECK(ta.same_shape(tb), "shape",
                     "sub: ", ta.shape_str(), " vs ", tb.shape_str());
        Tensor<S> out = ta;
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= tb.data[i];
        Var o = push(std::move(out));
        record([this, a, b, o] {
            const Tensor<S>& g = nodes_[o.id].grad;
            if (g.data.empty()) return;
            accumulate(grad_buf(a), g);
            Tensor<S>& gb = grad_buf(b);
            for (std::size_t i = 0; i < g.data.size(); ++i) gb.data[i] -= g.data[i];
        });
        return o;
    }

    Var mul(Var a, Var b) {
        const Tensor<S>& ta = val(a);
        const Tensor<S>& tb = val(b);
        SEQREC_CHECK(ta.same_shape(tb), "shape",
                     "mul: ", ta.shape_str(), " vs ", tb.shape_str());
        Tensor<S> out = ta;
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= tb.data[i];
        Var o = push(std::move(out));
        record([this, a, b, o] {
            const Tensor<S>& g = nodes_[o.id].grad;
            if (g.data.empty()) return;
            const Tensor<S>& va = nodes_[a.id].value;
            const Tensor<S>& vb = nodes_[b.id].value;
            Tensor<S>& ga = grad_buf(a);
            Tensor<S>& gb = grad_buf(b);
            for (std::size_t i = 0; i < g.data.size(); ++i) {
                ga.data[i] += g.data[i] * vb.data[i];
                gb.data[i] += g.data[i] * va.data[i];
            }
        });
        return o;
    }

    Var scale(Var a, S c) {
        Tensor<S> out = val(a);
        for (auto& v : out.data) v *= c;
        Var o = push(std::move(out));
        record([this, a, o, c] {
            const Tensor<S>& g = nodes_[o.id].grad;
            if (g.data.empty()) return;
            Tensor<S>& ga = grad_buf(a);
            for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] * c;
        });
        return o;
    }

    Var sigmoid(Var a) {
        Tensor<S> out = val(a);
        for (auto& v : out.data) v = S(1) / (S(1) + std::exp(-v));
        Var o = push(std::move(out));
        record([this, a, o] {
            const Tensor<S>& g = nodes_[o.id].grad;
            if (g.data.empty()) return;
            const Tensor<S>& y = nodes_[o.id].value;
            Tensor<S>& ga = grad_buf(a);
            for (std::size_t i = 0; i < g.data.size(); ++i)
                ga.data[i] += g.data[i] * y.data[i] * (S(1) - y.data[i]);
        });
        return o;
    }

    Var tanh_(Var a) {
        Tensor<S> out = val(a);
        for (auto& v : out.data) v = std::tanh(v);
        Var o = push(std::move(out));
        record([this, a, o] {
            const Tensor<S>& g = nodes_[o.id].grad;
            if (g.data.empty()) return;
            const Tensor<S>& y = nodes_[o.id].value;
            Tensor<S>& ga = grad_buf(a);
            for (std::size_t i = 0; i < g.data.size(); ++i)
                ga.data[i] += g.data[i] * (S(1) - y.data[i] * y.data[i]);
        });
        return o;
    }

    // Exact (erf-based) GELU.
    Var gelu(Var a) {
        Tensor<S> out = val(a);
        for (auto& v : out.data) v = gelu_fwd(v);
        Var o = push(std::move(out));
        record([this, a, o] {
            const Tensor<S>& g = nodes_[o.id].grad;
            if (g.data.empty()) return;
            const Tensor<S>& x = nodes_[a.id].value;
            Tensor<S>& ga = grad_buf(a);
            for (std::size_t i = 0; i < g.data.size(); ++i)
                ga.data[i] += g.data[i] * gelu_bwd(x.data[i]);
        });
        return o;
    }

    // out = x * mask, mask is a plain tensor (dropout keep-mask, already
    // scaled by 1/keep_prob). Backward multiplies by the same mask.
    Var apply_mask(Var a, Tensor<S> mask) {
        const Tensor<S>& ta = val(a);
        SEQREC_CHECK(ta.same_shape(mask), "shape",
                     "apply_mask: ", ta.shape_str(), " vs ", mask.shape_str());
        Tensor<S> out = ta;
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= mask.data[i];
        Var o = push(std::move(out));
        record([this, a, o, mask = std::move(mask)] {
            const Tensor<S>& g = nodes_[o.id].grad;
            if (g.data.empty()) return;
            Tensor<S>& ga = grad_buf(a);
            for (std::size_t i = 0; i < g.data.size(); ++i)
                ga.data[i] += g.data[i] * mask.data[i];
        });
        return o;
    }

    // Elementwise max; ties route the gradient to `a`.
    Var elementwise_max(Var a, Var b) {
        const Tensor<S>& ta = val(a);
        const Tensor<S>& tb = val(b);
        SEQREC_CHECK(ta.same_shape(tb), "shape",
                     "elementwise_max: ", ta.shape_str(), " vs ", tb.shape_str());
        Tensor<S> out = ta;
        for (std::size_t i = 0; i < out.data.size(); ++i)
            out.data[i] = ta.data[i] >= tb.data[i] ? ta.data[i] : tb.data[i];
        Var o = push(std::move(out));
        record([this, a, b, o] {
            const Tensor<S>& g = nodes_[o.id].grad;
            if (g.data.empty()) return;
            const Tensor<S>& va = nodes_[a.id].value;
            const Tensor<S>& vb = nodes_[b.id].value;
            Tensor<S>& ga = grad_buf(a);
            Tensor<S>& gb = grad_buf(b);
            for (std::size_t i = 0; i < g.data.size(); ++i) {
                if (va.data[i] >= vb.data[i]) ga.data[i] += g.data[i];
                else gb.data[i] += g.data[i];
            }
        });
        return o;
    }

    // --- linear algebra ------------------------------------------------------

    // C [m x n] = A [m x k] * B [k x n]
    Var matmul(Var a, Var b) {
        const Tensor<S>& ta = val(a);
        const Tensor<S>& tb = val(b);
        SEQREC_CHECK(ta.rank() == 2 && tb.rank() == 2 && ta.cols() == tb.rows(),
                     "shape", "matmul: ", ta.shape_str(), " * ", tb.shape_str());
        Tensor<S> out = mm(ta, tb);
        Var o = push(std::move(out));
        record([this, a, b, o] {
            const Tensor<S>& g = nodes_[o.id].grad;
            if (g.data.empty()) return;
            const Tensor<S>& va = nodes_[a.id].value;
            const Tensor<S>& vb = nodes_[b.id].value;
            mm_nt_acc(g, vb, grad_buf(a));  // dA += G * B^T
            mm_tn_acc(va, g, grad_buf(b));  // dB += A^T * G
        });
        return o;
    }

    // C [m x n] = A [m x k] * B^T, B is [n x k]
    Var matmul_nt(Var a, Var b) {
        const Tensor<S>& ta = val(a);
        const Tensor<S>& tb = val(b);
        SEQREC_CHECK(ta.rank() == 2 && tb.rank() == 2 && ta.cols() == tb.cols(),
                     "shape", "matmul_nt: ", ta.shape_str(), " * ", tb.shape_str(), "^T");
        Tensor<S> out = Tensor<S>::zeros({ta.rows(), tb.rows()});
        mm_nt_acc(ta, tb, out);
        Var o = push(std::move(out));
        record([this, a, b, o] {
            const Tensor<S>& g = nodes_[o.id].grad;
            if (g.data.empty()) return;
            const Tensor<S>& va = nodes_[a.id].value;
            const Tensor<S>& vb = nodes_[b.id].value;
            // dA += G * B  ; dB += G^T * A
            mm_acc(g, vb, grad_buf(a));
            mm_tn_acc(g, va, grad_buf(b));
        });
        return o;
    }

    // y [r] = M [r x c] * v [c]
    Var matvec(Var m, Var v) {
        const Tensor<S>& tm = val(m);
        const Tensor<S>& tv = val(v);
        SEQREC_CHECK(tm.rank() == 2 && tv.rank() == 1 && tm.cols() == tv.numel(),
                     "shape", "matvec: ", tm.shape_str(), " * ", tv.shape_str());
        Tensor<S> out = Tensor<S>::zeros({tm.rows()});
        for (std::size_t r = 0; r < tm.rows(); ++r) {
            const S* row = tm.row_ptr(r);
            S acc = S(0);
            for (std::size_t c = 0; c < tm.cols(); ++c) acc += row[c] * tv.data[c];
            out.data[r] = acc;
        }
        Var o = push(std::move(out));
        record([this, m, v, o] {
            const Tensor<S>& g = nodes_[o.id].grad;
            if (g.data.empty()) return;
            const Tensor<S>& vm = nodes_[m.id].value;
            const Tensor<S>& vv = nodes_[v.id].value;
            Tensor<S>& gm = grad_buf(m);
            Tensor<S>& gv = grad_buf(v);
            std::size_t rows = vm.rows(), cols = vm.cols();
            for (std::size_t r = 0; r < rows; ++r) {
                S gr = g.data[r];
                if (gr == S(0)) continue;
                S* gm_row = gm.row_ptr(r);
                const S* m_row = vm.row_ptr(r);
                for (std::size_t c = 0; c < cols; ++c) {
                    gm_row[c] += gr * vv.data[c];
                    gv.data[c] += gr * m_row[c];
                }
            }
        });
        return o;
    }

    Var dot(Var u, Var v) {
        const Tensor<S>& tu = val(u);
        const Tensor<S>& tv = val(v);
        SEQREC_CHECK(tu.numel() == tv.numel(), "shape",
                     "dot: ", tu.shape_str(), " vs ", tv.shape_str());
        S acc = S(0);
        for (std::size_t i = 0; i < tu.numel(); ++i) acc += tu.data[i] * tv.data[i];
        Var o = push(Tensor<S>::scalar(acc));
        record([this, u, v, o] {
            const Tensor<S>& g = nodes_[o.id].grad;
            if (g.data.empty()) return;
            S gs = g.data[0];
            const Tensor<S>& vu = nodes_[u.id].value;
            const Tensor<S>& vv = nodes_[v.id].value;
            Tensor<S>& gu = grad_buf(u);
            Tensor<S>& gv = grad_buf(v);
            for (std::size_t i = 0; i < vu.numel(); ++i) {
                gu.data[i] += gs * vv.data[i];
                gv.data[i] += gs * vu.data[i];
            }
        });
        return o;
    }

    // --- shape ops -----------------------------------------------------------

    // Concatenate rank-1 tensors along their only dimension.
    Var concat(std::span<const Var> parts) {
        SEQREC_CHECK(!parts.empty(), "shape", "concat: no inputs");
        std::size_t total = 0;
        for (Var p : parts) {
            SEQREC_CHECK(val(p).rank() == 1, "shape",
                         "concat: rank-1 inputs required, got ", val(p).shape_str());
            total += val(p).numel();
        }
        Tensor<S> out = Tensor<S>::zeros({total});
        std::size_t off = 0;
        for (Var p : parts) {
            const Tensor<S>& t = val(p);
            std::copy(t.data.begin(), t.data.end(), out.data.begin() + off);
            off += t.numel();
        }
        Var o = push(std::move(out));
        record([this, ps = std::vector<Var>(parts.begin(), parts.end()), o] {
            const Tensor<S>& g = nodes_[o.id].grad;
            if (g.data.empty()) return;
            std::size_t off = 0;
            for (Var p : ps) {
                Tensor<S>& gp = grad_buf(p);
                for (std::size_t i = 0; i < gp.data.size(); ++i)
                    gp.data[i] += g.data[off + i];
                off += gp.data.size();
            }
        });
        return o;
    }

    // Stack rank-1 tensors of equal length into a matrix [n x d].
    Var stack_rows(std::span<const Var> rows) {
        SEQREC_CHECK(!rows.empty(), "shape", "stack_rows: no inputs");
        std::size_t d = val(rows[0]).numel();
        Tensor<S> out = Tensor<S>::zeros({rows.size(), d});
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const Tensor<S>& t = val(rows[r]);
            SEQREC_CHECK(t.rank() == 1 && t.numel() == d, "shape",
                         "stack_rows: row ", r, " has shape ", t.shape_str());
            std::copy(t.data.begin(), t.data.end(), out.data.begin() + r * d);
        }
        Var o = push(std::move(out));
        record([this, rs = std::vector<Var>(rows.begin(), rows.end()), o, d] {
            const Tensor<S>& g = nodes_[o.id].grad;
            if (g.data.empty()) return;
            for (std::size_t r = 0; r < rs.size(); ++r) {
                Tensor<S>& gr = grad_buf(rs[r]);
                const S* src = g.data.data() + r * d;
                for (std::size_t i = 0; i < d; ++i) gr.data[i] += src[i];
            }
        });
        return o;
    }

    // Select row r of a matrix as a rank-1 tensor.
    Var row_select(Var m, std::size_t r) {
        const Tensor<S>& tm = val(m);
        SEQREC_CHECK(tm.rank() == 2 && r < tm.rows(), "shape",
                     "row_select: row ", r, " of ", tm.shape_str());
        Tensor<S> out = Tensor<S>::zeros({tm.cols()});
        std::copy(tm.row_ptr(r), tm.row_ptr(r) + tm.cols(), out.data.begin());
        Var o = push(std::move(out));
        record([this, m, o, r] {
            const Tensor<S>& g = nodes_[o.id].grad;
            if (g.data.empty()) return;
            Tensor<S>& gm = grad_buf(m);
            S* dst = gm.row_ptr(r);
            for (std::size_t i = 0; i < g.data.size(); ++i) dst[i] += g.data[i];
        });
        return o;
    }

    // --- gather / scatter ----------------------------------------------------

    // Rows of `table` [V x d] selected by ids -> [n x d]. Ids are constants;
    // gradients flow into the gathered rows only.
    Var embedding_gather(Var table, std::vector<int> ids) {
        const Tensor<S>& tt = val(table);
        SEQREC_CHECK(tt.rank() == 2, "shape",
                     "embedding_gather: table shape ", tt.shape_str());
        std::size_t d = tt.cols();
        Tensor<S> out = Tensor<S>::zeros({ids.size(), d});
        for (std::size_t i = 0; i < ids.size(); ++i) {
            SEQREC_CHECK(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < tt.rows(),
                         "range", "embedding_gather: id ", ids[i], " out of ",
                         tt.rows());
            std::copy(tt.row_ptr(ids[i]), tt.row_ptr(ids[i]) + d,
                      out.data.begin() + i * d);
        }
        Var o = push(std::move(out));
        record([this, table, o, ids = std::move(ids), d] {
            const Tensor<S>& g = nodes_[o.id].grad;
            if (g.data.empty()) return;
            Tensor<S>& gt = grad_buf(table);
            for (std::size_t i = 0; i < ids.size(); ++i) {
                S* dst = gt.row_ptr(ids[i]);
                const S* src = g.data.data() + i * d;
                for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
            }
        });
        return o;
    }

    // Elements of a rank-1 tensor selected by ids.
    Var vec_gather(Var v, std::vector<int> ids) {
        const Tensor<S>& tv = val(v);
        SEQREC_CHECK(tv.rank() == 1, "shape", "vec_gather: ", tv.shape_str());
        Tensor<S> out = Tensor<S>::zeros({ids.size()});
        for (std::size_t i = 0; i < ids.size(); ++i) {
            SEQREC_CHECK(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < tv.numel(),
                         "range", "vec_gather: id ", ids[i], " out of ", tv.numel());
            out.data[i] = tv.data[ids[i]];
        }
        Var o = push(std::move(out));
        record([this, v, o, ids = std::move(ids)] {
            const Tensor<S>& g = nodes_[o.id].grad;
            if (g.data.empty()) return;
            Tensor<S>& gv = grad_buf(v);
            for (std::size_t i = 0; i < ids.size(); ++i)
                gv.data[ids[i]] += g.data[i];
        });
        return o;
    }

    // out = copy of dest (rank 1); out[ids[i]] = src[i]. Ids are constants.
    // Gradient routes to src at written positions; dest receives the upstream
    // gradient only at untouched positions.
    Var index_scatter_assign(Var dest, std::vector<int> ids, Var src) {
        const Tensor<S>& td = val(dest);
        const Tensor<S>& ts = val(src);
        SEQREC_CHECK(td.rank() == 1 && ts.rank() == 1 && ts.numel() == ids.size(),
                     "shape", "index_scatter_assign: dest ", td.shape_str(),
                     ", src ", ts.shape_str(), ", ids ", ids.size());
        Tensor<S> out = td;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            SEQREC_CHECK(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < td.numel(),
                         "range", "index_scatter_assign: id ", ids[i], " out of ",
                         td.numel());
            out.data[ids[i]] = ts.data[i];
        }
        Var o = push(std::move(out));
        record([this, dest, src, o, ids = std::move(ids)] {
            const Tensor<S>& g = nodes_[o.id].grad;
            if (g.data.empty()) return;
            Tensor<S>& gd = grad_buf(dest);
            Tensor<S>& gs = grad_buf(src);
            // Duplicate ids behave like the forward overwrite: the last write
            // wins, earlier writes get zero gradient.
            std::vector<char> written(g.data.size(), 0);
            for (std::size_t i = ids.size(); i-- > 0;) {
                if (!written[ids[i]]) {
                    gs.data[i] += g.data[ids[i]];
                    written[ids[i]] = 1;
                }
            }
            for (std::size_t i = 0; i < g.data.size(); ++i)
                if (!written[i]) gd.data[i] += g.data[i];
        });
        return o;
    }

    // Mean of selected rows of M [n x d] -> [d]. Row ids are constants.
    Var mean_rows(Var m, std::vector<int> row_ids) {
        const Tensor<S>& tm = val(m);
        SEQREC_CHECK(tm.rank() == 2 && !row_ids.empty(), "shape",
                     "mean_rows: ", tm.shape_str(), ", ", row_ids.size(), " rows");
        std::size_t d = tm.cols();
        Tensor<S> out = Tensor<S>::zeros({d});
        for (int r : row_ids) {
            SEQREC_CHECK(r >= 0 && static_cast<std::size_t>(r) < tm.rows(), "range",
                         "mean_rows: row ", r, " out of ", tm.rows());
            const S* src = tm.row_ptr(r);
            for (std::size_t c = 0; c < d; ++c) out.data[c] += src[c];
        }
        S inv = S(1) / static_cast<S>(row_ids.size());
        for (auto& v : out.data) v *= inv;
        Var o = push(std::move(out));
        record([this, m, o, row_ids = std::move(row_ids), inv] {
            const Tensor<S>& g = nodes_[o.id].grad;
            if (g.data.empty()) return;
            Tensor<S>& gm = grad_buf(m);
            for (int r : row_ids) {
                S* dst = gm.row_ptr(r);
                for (std::size_t c = 0; c < g.data.size(); ++c)
                    dst[c] += g.data[c] * inv;
            }
        });
        return o;
    }

    // --- reductions / normalization ------------------------------------------

    Var reduce_mean(Var a) {
        const Tensor<S>& ta = val(a);
        SEQREC_CHECK(ta.numel() > 0, "shape", "reduce_mean: empty tensor");
        S acc = S(0);
        for (S v : ta.data) acc += v;
        S inv = S(1) / static_cast<S>(ta.numel());
        Var o = push(Tensor<S>::scalar(acc * inv));
        record([this, a, o, inv] {
            const Tensor<S>& g = nodes_[o.id].grad;
            if (g.data.empty()) return;
            S gs = g.data[0] * inv;
            Tensor<S>& ga = grad_buf(a);
            for (auto& v : ga.data) v += gs;
        });
        return o;
    }

    // Row-wise layer normalization with learned gain/bias, epsilon 1e-12.
    Var layer_norm(Var x, Var gain, Var bias) {
        const Tensor<S>& tx = val(x);
        const Tensor<S>& tgain = val(gain);
        const Tensor<S>& tbias = val(bias);
        SEQREC_CHECK(tx.rank() == 2 && tgain.rank() == 1 && tbias.rank() == 1 &&
                         tgain.numel() == tx.cols() && tbias.numel() == tx.cols(),
                     "shape", "layer_norm: x ", tx.shape_str(), ", gain ",
                     tgain.shape_str(), ", bias ", tbias.shape_str());
        const S eps = S(1e-12);
        std::size_t n = tx.rows(), d = tx.cols();
        Tensor<S> out = Tensor<S>::zeros({n, d});
        Tensor<S> xhat = Tensor<S>::zeros({n, d});
        std::vector<S> inv_std(n);
        for (std::size_t r = 0; r < n; ++r) {
            const S* row = tx.row_ptr(r);
            S mean = S(0);
            for (std::size_t c = 0; c < d; ++c) mean += row[c];
            mean /= static_cast<S>(d);
            S var = S(0);
            for (std::size_t c = 0; c < d; ++c) {
                S t = row[c] - mean;
                var += t * t;
            }
            var /= static_cast<S>(d);
            S istd = S(1) / std::sqrt(var + eps);
            inv_std[r] = istd;
            S* xh = xhat.row_ptr(r);
            S* orow = out.row_ptr(r);
            for (std::size_t c = 0; c < d; ++c) {
                xh[c] = (row[c] - mean) * istd;
                orow[c] = xh[c] * tgain.data[c] + tbias.data[c];
            }
        }
        Var o = push(std::move(out));
        record([this, x, gain, bias, o, xhat = std::move(xhat),
                inv_std = std::move(inv_std)] {
            const Tensor<S>& g = nodes_[o.id].grad;
            if (g.data.empty()) return;
            const Tensor<S>& tgain = nodes_[gain.id].value;
            Tensor<S>& gx = grad_buf(x);
            Tensor<S>& ggain = grad_buf(gain);
            Tensor<S>& gbias = grad_buf(bias);
            std::size_t n = g.shape[0], d = g.shape[1];
            for (std::size_t r = 0; r < n; ++r) {
                const S* grow = g.data.data() + r * d;
                const S* xh = xhat.data.data() + r * d;
                S sum_dxhat = S(0), sum_dxhat_xhat = S(0);
                for (std::size_t c = 0; c < d; ++c) {
                    S dxhat = grow[c] * tgain.data[c];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xh[c];
                    ggain.data[c] += grow[c] * xh[c];
                    gbias.data[c] += grow[c];
                }
                S* gxr = gx.row_ptr(r);
                S invd = S(1) / static_cast<S>(d);
                for (std::size_t c = 0; c < d; ++c) {
                    S dxhat = grow[c] * tgain.data[c];
                    gxr[c] += inv_std[r] *
                              (dxhat - invd * sum_dxhat - invd * xh[c] * sum_dxhat_xhat);
                }
            }
        });
        return o;
    }

    // Softmax over each row of S_scores [n x n] restricted to columns 0..row
    // (causal self-attention); masked columns output 0.
    Var causal_row_softmax(Var scores) {
        const Tensor<S>& ts = val(scores);
        SEQREC_CHECK(ts.rank() == 2 && ts.rows() == ts.cols(), "shape",
                     "causal_row_softmax: ", ts.shape_str());
        std::size_t n = ts.rows();
        Tensor<S> out = Tensor<S>::zeros({n, n});
        for (std::size_t r = 0; r < n; ++r) {
            const S* row = ts.row_ptr(r);
            S mx = row[0];
            for (std::size_t c = 1; c <= r; ++c) mx = std::max(mx, row[c]);
            S sum = S(0);
            S* orow = out.row_ptr(r);
            for (std::size_t c = 0; c <= r; ++c) {
                orow[c] = std::exp(row[c] - mx);
                sum += orow[c];
            }
            S inv = S(1) / sum;
            for (std::size_t c = 0; c <= r; ++c) orow[c] *= inv;
        }
        Var o = push(std::move(out));
        record([this, scores, o] {
            const Tensor<S>& g = nodes_[o.id].grad;
            if (g.data.empty()) return;
            const Tensor<S>& p = nodes_[o.id].value;
            Tensor<S>& gs = grad_buf(scores);
            std::size_t n = p.rows();
            for (std::size_t r = 0; r < n; ++r) {
                const S* prow = p.row_ptr(r);
                const S* grow = g.data.data() + r * n;
                S dotv = S(0);
                for (std::size_t c = 0; c <= r; ++c) dotv += prow[c] * grow[c];
                S* gsr = gs.row_ptr(r);
                for (std::size_t c = 0; c <= r; ++c)
                    gsr[c] += prow[c] * (grow[c] - dotv);
            }
        });
        return o;
    }

    // Mean softmax cross-entropy. `logits` is [V] with one target or [n x V]
    // with n targets; returns a scalar. Uses the log-sum-exp max shift.
    Var softmax_cross_entropy(Var logits, std::vector<int> targets) {
        const Tensor<S>& tl = val(logits);
        std::size_t n, v;
        if (tl.rank() == 1) {
            n = 1;
            v = tl.numel();
        } else {
            SEQREC_CHECK(tl.rank() == 2, "shape",
                         "softmax_cross_entropy: logits ", tl.shape_str());
            n = tl.rows();
            v = tl.cols();
        }
        SEQREC_CHECK(targets.size() == n, "shape",
                     "softmax_cross_entropy: ", targets.size(), " targets for ", n,
                     " rows");
        S total = S(0);
        for (std::size_t r = 0; r < n; ++r) {
            const S* row = tl.data.data() + r * v;
            int tgt = targets[r];
            SEQREC_CHECK(tgt >= 0 && static_cast<std::size_t>(tgt) < v, "range",
                         "softmax_cross_entropy: target ", tgt, " out of ", v);
            S mx = row[0];
            for (std::size_t c = 1; c < v; ++c) mx = std::max(mx, row[c]);
            SEQREC_CHECK(std::isfinite(static_cast<double>(mx)), "numeric",
                         "softmax_cross_entropy: non-finite logit in row ", r);
            S lse = S(0);
            for (std::size_t c = 0; c < v; ++c) lse += std::exp(row[c] - mx);
            lse = std::log(lse) + mx;
            total += lse - row[tgt];
        }
        S inv = S(1) / static_cast<S>(n);
        Var o = push(Tensor<S>::scalar(total * inv));
        record([this, logits, o, targets = std::move(targets), n, v, inv] {
            const Tensor<S>& g = nodes_[o.id].grad;
            if (g.data.empty()) return;
            S gs = g.data[0] * inv;
            const Tensor<S>& tl = nodes_[logits.id].value;
            Tensor<S>& gl = grad_buf(logits);
            for (std::size_t r = 0; r < n; ++r) {
                const S* row = tl.data.data() + r * v;
                S* grow = gl.data.data() + r * v;
                S mx = row[0];
                for (std::size_t c = 1; c < v; ++c) mx = std::max(mx, row[c]);
                S sum = S(0);
                for (std::size_t c = 0; c < v; ++c) sum += std::exp(row[c] - mx);
                S inv_sum = S(1) / sum;
                for (std::size_t c = 0; c < v; ++c)
                    grow[c] += gs * std::exp(row[c] - mx) * inv_sum;
                grow[targets[r]] -= gs;
            }
        });
        return o;
    }

    // --- top-k (selection is not differentiated) ------------------------------

    struct TopK {
        std::vector<int> ids;  // sorted by value desc, ties by ascending id
        Var values;            // gathered values, differentiable
    };

    TopK top_k(Var v, std::size_t k) {
        const Tensor<S>& tv = val(v);
        SEQREC_CHECK(tv.rank() == 1, "shape", "top_k: ", tv.shape_str());
        SEQREC_CHECK(k >= 1 && k <= tv.numel(), "range", "top_k: k=", k,
                     " for length ", tv.numel());
        std::vector<int> ids = top_k_ids(tv, k);
        TopK out;
        out.values = vec_gather(v, ids);
        out.ids = std::move(ids);
        return out;
    }

    static std::vector<int> top_k_ids(const Tensor<S>& tv, std::size_t k) {
        std::vector<int> idx(tv.numel());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
        auto cmp = [&tv](int a, int b) {
            if (tv.data[a] != tv.data[b]) return tv.data[a] > tv.data[b];
            return a < b;
        };
        std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), cmp);
        idx.resize(k);
        return idx;
    }

    // --- backward --------------------------------------------------------------

    // Runs the reverse sweep from `loss` (seed gradient 1). Leaf gradients are
    // accumulated into each bound Parameter::grad, or into `sink` (indexed by
    // Parameter::slot) when provided.
    void backward(Var loss, std::vector<Tensor<S>>* sink = nullptr) {
        SEQREC_CHECK(grad_enabled_, "state", "backward() on a no-grad tape");
        SEQREC_CHECK(val(loss).numel() == 1, "shape",
                     "backward: loss must be scalar, got ", val(loss).shape_str());
        grad_buf(loss).data[0] = S(1);
        for (std::size_t i = records_.size(); i-- > 0;) records_[i]();
        for (auto& [node_id, param] : bindings_) {
            const Tensor<S>& g = nodes_[node_id].grad;
            if (g.data.empty()) continue;
            if (sink) {
                SEQREC_CHECK(param->slot >= 0 &&
                                 static_cast<std::size_t>(param->slot) < sink->size(),
                             "state", "backward: parameter '", param->name,
                             "' has no registry slot");
                accumulate((*sink)[param->slot], g);
            } else {
                accumulate(param->grad, g);
            }
        }
    }

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor<S> value;
        Tensor<S> grad;  // lazily allocated
    };

    Var push(Tensor<S> t) {
        nodes_.push_back(Node{std::move(t), Tensor<S>{}});
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    Tensor<S>& grad_buf(Var v) {
        Node& n = nodes_[v.id];
        if (n.grad.data.empty()) n.grad = Tensor<S>::zeros(n.value.shape);
        return n.grad;
    }

    template <typename F>
    void record(F&& f) {
        if (grad_enabled_) records_.emplace_back(std::forward<F>(f));
    }

    // C += A * B
    static void mm_acc(const Tensor<S>& a, const Tensor<S>& b, Tensor<S>& c) {
        std::size_t m = a.rows(), k = a.cols(), n = b.cols();
        for (std::size_t i = 0; i < m; ++i) {
            S* crow = c.row_ptr(i);
            const S* arow = a.row_ptr(i);
            for (std::size_t p = 0; p < k; ++p) {
                S av = arow[p];
                if (av == S(0)) continue;
                const S* brow = b.row_ptr(p);
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    }

    static Tensor<S> mm(const Tensor<S>& a, const Tensor<S>& b) {
        Tensor<S> c = Tensor<S>::zeros({a.rows(), b.cols()});
        mm_acc(a, b, c);
        return c;
    }

    // C += A * B^T  (rows of both operands are contiguous)
    static void mm_nt_acc(const Tensor<S>& a, const Tensor<S>& b, Tensor<S>& c) {
        std::size_t m = a.rows(), k = a.cols(), n = b.rows();
        for (std::size_t i = 0; i < m; ++i) {
            const S* arow = a.row_ptr(i);
            S* crow = c.row_ptr(i);
            for (std::size_t j = 0; j < n; ++j) {
                const S* brow = b.row_ptr(j);
                S acc = S(0);
                for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
                crow[j] += acc;
            }
        }
    }

    // C += A^T * B, A is [n x m], B is [n x k], C is [m x k]
    static void mm_tn_acc(const Tensor<S>& a, const Tensor<S>& b, Tensor<S>& c) {
        std::size_t n = a.rows(), m = a.cols(), k = b.cols();
        for (std::size_t r = 0; r < n; ++r) {
            const S* arow = a.row_ptr(r);
            const S* brow = b.row_ptr(r);
            for (std::size_t i = 0; i < m; ++i) {
                S av = arow[i];
                if (av == S(0)) continue;
                S* crow = c.row_ptr(i);
                for (std::size_t j = 0; j < k; ++j) crow[j] += av * brow[j];
            }
        }
    }

    static S gelu_fwd(S x) {
        return S(0.5) * x * (S(1) + std::erf(x * S(0.70710678118654752440)));
    }

    static S gelu_bwd(S x) {
        S cdf = S(0.5) * (S(1) + std::erf(x * S(0.70710678118654752440)));
        S pdf = S(0.39894228040143267794) * std::exp(S(-0.5) * x * x);
        return cdf + x * pdf;
    }

    bool grad_enabled_;
    std::vector<Node> nodes_;
    std::vector<std::function<void()>> records_;
    std::vector<std::pair<int, Parameter<S>*>> bindings_;
};

}  // namespace seqrec
