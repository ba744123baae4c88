#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "img2inchi/errors.hpp"
#include "img2inchi/rng.hpp"
#include "img2inchi/tensor.hpp"

namespace img2inchi {

// Boolean attention mask; true = attend, false = forbid.
struct Mask {
    int rows = 0;
    int cols = 0;
    std::vector<std::uint8_t> v;

    Mask() = default;
    Mask(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, 0) {}
    bool at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c] != 0; }
    void set(int r, int c, bool b) { v[static_cast<std::size_t>(r) * cols + c] = b ? 1 : 0; }
};

// Additive stand-in for -inf; keeps 32-bit softmax NaN-free.
inline constexpr double kMaskFill = -1e9;

namespace ops {

template <typename F>
inline void ensure_rank2(const Tensor<F>& t, const char* op) {
    if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
}

template <typename F>
inline bool taped(Tape<F>* tape, bool any_requires) {
    return tape != nullptr && any_requires;
}

// ---- elementwise ----

template <typename F>
Tensor<F> add(const Tensor<F>& a, const Tensor<F>& b, Tape<F>* tape = nullptr) {
    if (a.shape() != b.shape())
        throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<F> out(a.shape());
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
    check_finite(out, "add");
    if (taped(tape, a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        Tensor<F> pa = a, pb = b, po = out;
        tape->record([pa, pb, po]() mutable {
            const std::size_t m = po.numel();
            if (pa.requires_grad())
                for (std::size_t i = 0; i < m; ++i) pa.grad()[i] += po.grad()[i];
            if (pb.requires_grad())
                for (std::size_t i = 0; i < m; ++i) pb.grad()[i] += po.grad()[i];
        });
    }
    return out;
}

// a[m x n] + bias[n] broadcast over rows.
template <typename F>
Tensor<F> add_bias(const Tensor<F>& a, const Tensor<F>& bias, Tape<F>* tape = nullptr) {
    ensure_rank2(a, "add_bias");
    if (bias.rank() != 1 || bias.dim(0) != a.dim(1))
        throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match " + shape_str(a.shape()));
    const int m = a.dim(0), n = a.dim(1);
    Tensor<F> out(a.shape());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) = a.at(i, j) + bias.data()[static_cast<std::size_t>(j)];
    check_finite(out, "add_bias");
    if (taped(tape, a.requires_grad() || bias.requires_grad())) {
        out.set_requires_grad(true);
        Tensor<F> pa = a, pb = bias, po = out;
        tape->record([pa, pb, po, m, n]() mutable {
            if (pa.requires_grad())
                for (std::size_t i = 0; i < pa.numel(); ++i) pa.grad()[i] += po.grad()[i];
            if (pb.requires_grad())
                for (int j = 0; j < n; ++j) {
                    F s = F(0);
                    for (int i = 0; i < m; ++i) s += po.grad()[static_cast<std::size_t>(i) * n + j];
                    pb.grad()[static_cast<std::size_t>(j)] += s;
                }
        });
    }
    return out;
}

template <typename F>
Tensor<F> scale(const Tensor<F>& a, F s, Tape<F>* tape = nullptr) {
    Tensor<F> out(a.shape());
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * s;
    check_finite(out, "scale");
    if (taped(tape, a.requires_grad())) {
        out.set_requires_grad(true);
        Tensor<F> pa = a, po = out;
        tape->record([pa, po, s]() mutable {
            for (std::size_t i = 0; i < pa.numel(); ++i) pa.grad()[i] += po.grad()[i] * s;
        });
    }
    return out;
}

// ---- matrix products ----

// C[m x n] = A[m x k] * B[k x n]. Accumulation over k is sequential and
// ascending for every output element; this order is part of the contract.
template <typename F>
Tensor<F> matmul(const Tensor<F>& a, const Tensor<F>& b, Tape<F>* tape = nullptr) {
    ensure_rank2(a, "matmul");
    ensure_rank2(b, "matmul");
    if (a.dim(1) != b.dim(0))
        throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<F> out({m, n});
    const F* ad = a.data().data();
    const F* bd = b.data().data();
    F* od = out.data().data();
    for (int i = 0; i < m; ++i) {
        F* orow = od + static_cast<std::size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const F av = ad[static_cast<std::size_t>(i) * k + kk];
            const F* brow = bd + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    check_finite(out, "matmul");
    if (taped(tape, a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        Tensor<F> pa = a, pb = b, po = out;
        tape->record([pa, pb, po, m, k, n]() mutable {
            const F* gd = po.grad().data();
            if (pa.requires_grad()) {  // dA = dC * B^T
                F* ag = pa.grad().data();
                const F* bd2 = pb.data().data();
                for (int i = 0; i < m; ++i)
                    for (int kk = 0; kk < k; ++kk) {
                        F s = F(0);
                        for (int j = 0; j < n; ++j)
                            s += gd[static_cast<std::size_t>(i) * n + j] * bd2[static_cast<std::size_t>(kk) * n + j];
                        ag[static_cast<std::size_t>(i) * k + kk] += s;
                    }
            }
            if (pb.requires_grad()) {  // dB = A^T * dC
                F* bg = pb.grad().data();
                const F* ad2 = pa.data().data();
                for (int kk = 0; kk < k; ++kk)
                    for (int i = 0; i < m; ++i) {
                        const F av = ad2[static_cast<std::size_t>(i) * k + kk];
                        for (int j = 0; j < n; ++j)
                            bg[static_cast<std::size_t>(kk) * n + j] += av * gd[static_cast<std::size_t>(i) * n + j];
                    }
            }
        });
    }
    return out;
}

// C[m x n] = A[m x k] * B[n x k]^T.
template <typename F>
Tensor<F> matmul_nt(const Tensor<F>& a, const Tensor<F>& b, Tape<F>* tape = nullptr) {
    ensure_rank2(a, "matmul_nt");
    ensure_rank2(b, "matmul_nt");
    if (a.dim(1) != b.dim(1))
        throw ShapeError("matmul_nt: inner dimensions differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    Tensor<F> out({m, n});
    const F* ad = a.data().data();
    const F* bd = b.data().data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            F s = F(0);
            const F* arow = ad + static_cast<std::size_t>(i) * k;
            const F* brow = bd + static_cast<std::size_t>(j) * k;
            for (int kk = 0; kk < k; ++kk) s += arow[kk] * brow[kk];
            out.at(i, j) = s;
        }
    check_finite(out, "matmul_nt");
    if (taped(tape, a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        Tensor<F> pa = a, pb = b, po = out;
        tape->record([pa, pb, po, m, k, n]() mutable {
            const F* gd = po.grad().data();
            if (pa.requires_grad()) {  // dA = dC * B
                F* ag = pa.grad().data();
                const F* bd2 = pb.data().data();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) {
                        const F gv = gd[static_cast<std::size_t>(i) * n + j];
                        for (int kk = 0; kk < k; ++kk)
                            ag[static_cast<std::size_t>(i) * k + kk] += gv * bd2[static_cast<std::size_t>(j) * k + kk];
                    }
            }
            if (pb.requires_grad()) {  // dB = dC^T * A
                F* bg = pb.grad().data();
                const F* ad2 = pa.data().data();
                for (int j = 0; j < n; ++j)
                    for (int i = 0; i < m; ++i) {
                        const F gv = gd[static_cast<std::size_t>(i) * n + j];
                        for (int kk = 0; kk < k; ++kk)
                            bg[static_cast<std::size_t>(j) * k + kk] += gv * ad2[static_cast<std::size_t>(i) * k + kk];
                    }
            }
        });
    }
    return out;
}

// ---- normalization / activation ----

// Softmax along the last axis with max subtraction. Works for rank 1..4 by
// treating all leading axes as rows.
template <typename F>
Tensor<F> softmax(const Tensor<F>& x, Tape<F>* tape = nullptr) {
    const int n = x.dim(x.rank() - 1);
    const std::size_t rows = x.numel() / static_cast<std::size_t>(n);
    Tensor<F> out(x.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const F* xi = x.data().data() + r * n;
        F* yi = out.data().data() + r * n;
        F mx = xi[0];
        for (int j = 1; j < n; ++j)
            if (xi[j] > mx) mx = xi[j];
        F sum = F(0);
        for (int j = 0; j < n; ++j) {
            yi[j] = std::exp(xi[j] - mx);
            sum += yi[j];
        }
        const F inv = F(1) / sum;
        for (int j = 0; j < n; ++j) yi[j] *= inv;
    }
    check_finite(out, "softmax");
    if (taped(tape, x.requires_grad())) {
        out.set_requires_grad(true);
        Tensor<F> px = x, po = out;
        tape->record([px, po, rows, n]() mutable {
            for (std::size_t r = 0; r < rows; ++r) {
                const F* y = po.data().data() + r * n;
                const F* gy = po.grad().data() + r * n;
                F* gx = px.grad().data() + r * n;
                F dot = F(0);
                for (int j = 0; j < n; ++j) dot += gy[j] * y[j];
                for (int j = 0; j < n; ++j) gx[j] += y[j] * (gy[j] - dot);
            }
        });
    }
    return out;
}

// Per-row standardization followed by affine gain/bias along the last axis.
template <typename F>
Tensor<F> layer_norm(const Tensor<F>& x, const Tensor<F>& gain, const Tensor<F>& bias, F eps,
                     Tape<F>* tape = nullptr) {
    const int d = x.dim(x.rank() - 1);
    if (gain.rank() != 1 || gain.dim(0) != d || bias.rank() != 1 || bias.dim(0) != d)
        throw ShapeError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                         " do not match last dim of " + shape_str(x.shape()));
    const std::size_t rows = x.numel() / static_cast<std::size_t>(d);
    Tensor<F> out(x.shape());
    std::vector<F> inv_std(rows), mean(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const F* xi = x.data().data() + r * d;
        F mu = F(0);
        for (int j = 0; j < d; ++j) mu += xi[j];
        mu /= F(d);
        F var = F(0);
        for (int j = 0; j < d; ++j) var += (xi[j] - mu) * (xi[j] - mu);
        var /= F(d);
        const F inv = F(1) / std::sqrt(var + eps);
        mean[r] = mu;
        inv_std[r] = inv;
        F* yi = out.data().data() + r * d;
        for (int j = 0; j < d; ++j)
            yi[j] = (xi[j] - mu) * inv * gain.data()[static_cast<std::size_t>(j)] +
                    bias.data()[static_cast<std::size_t>(j)];
    }
    check_finite(out, "layer_norm");
    if (taped(tape, x.requires_grad() || gain.requires_grad() || bias.requires_grad())) {
        out.set_requires_grad(true);
        Tensor<F> px = x, pg = gain, pb = bias, po = out;
        tape->record([px, pg, pb, po, rows, d, mean, inv_std]() mutable {
            for (std::size_t r = 0; r < rows; ++r) {
                const F* xi = px.data().data() + r * d;
                const F* gy = po.grad().data() + r * d;
                const F mu = mean[r], inv = inv_std[r];
                // dyg = dy * gain; xhat = (x - mu) * inv
                F mean_dyg = F(0), mean_dyg_xhat = F(0);
                for (int j = 0; j < d; ++j) {
                    const F xhat = (xi[j] - mu) * inv;
                    const F dyg = gy[j] * pg.data()[static_cast<std::size_t>(j)];
                    mean_dyg += dyg;
                    mean_dyg_xhat += dyg * xhat;
                }
                mean_dyg /= F(d);
                mean_dyg_xhat /= F(d);
                for (int j = 0; j < d; ++j) {
                    const F xhat = (xi[j] - mu) * inv;
                    const F dyg = gy[j] * pg.data()[static_cast<std::size_t>(j)];
                    if (px.requires_grad())
                        px.grad()[r * d + j] += inv * (dyg - mean_dyg - xhat * mean_dyg_xhat);
                    if (pg.requires_grad()) pg.grad()[static_cast<std::size_t>(j)] += gy[j] * xhat;
                    if (pb.requires_grad()) pb.grad()[static_cast<std::size_t>(j)] += gy[j];
                }
            }
        });
    }
    return out;
}

// Exact erf-based GELU: x * Phi(x).
template <typename F>
Tensor<F> gelu(const Tensor<F>& x, Tape<F>* tape = nullptr) {
    Tensor<F> out(x.shape());
    const std::size_t n = out.numel();
    const F inv_sqrt2 = F(0.7071067811865475244L);
    for (std::size_t i = 0; i < n; ++i) {
        const F v = x.data()[i];
        out.data()[i] = F(0.5) * v * (F(1) + std::erf(v * inv_sqrt2));
    }
    check_finite(out, "gelu");
    if (taped(tape, x.requires_grad())) {
        out.set_requires_grad(true);
        Tensor<F> px = x, po = out;
        tape->record([px, po, n, inv_sqrt2]() mutable {
            const F inv_sqrt2pi = F(0.3989422804014326779L);
            for (std::size_t i = 0; i < n; ++i) {
                const F v = px.data()[i];
                const F phi_cdf = F(0.5) * (F(1) + std::erf(v * inv_sqrt2));
                const F phi_pdf = inv_sqrt2pi * std::exp(F(-0.5) * v * v);
                px.grad()[i] += po.grad()[i] * (phi_cdf + v * phi_pdf);
            }
        });
    }
    return out;
}

// Bernoulli keep-mask scaled by 1/(1-p). Identity when p == 0 or not training.
template <typename F>
Tensor<F> dropout(const Tensor<F>& x, F p, Rng& rng, bool training, Tape<F>* tape = nullptr) {
    if (!training || p <= F(0)) return x;
    if (p >= F(1)) throw ContractError("dropout: rate must be < 1");
    Tensor<F> out(x.shape());
    const std::size_t n = out.numel();
    const F inv_keep = F(1) / (F(1) - p);
    std::vector<F> mask(n);
    for (std::size_t i = 0; i < n; ++i) {
        mask[i] = (rng.uniform() >= static_cast<double>(p)) ? inv_keep : F(0);
        out.data()[i] = x.data()[i] * mask[i];
    }
    check_finite(out, "dropout");
    if (taped(tape, x.requires_grad())) {
        out.set_requires_grad(true);
        Tensor<F> px = x, po = out;
        tape->record([px, po, mask = std::move(mask), n]() mutable {
            for (std::size_t i = 0; i < n; ++i) px.grad()[i] += po.grad()[i] * mask[i];
        });
    }
    return out;
}

// out[t] = table[ids[t]] for a [V x D] table.
template <typename F>
Tensor<F> embedding(const Tensor<F>& table, const std::vector<int>& ids, Tape<F>* tape = nullptr) {
    ensure_rank2(table, "embedding");
    const int v = table.dim(0), d = table.dim(1);
    const int t = static_cast<int>(ids.size());
    if (t == 0) throw ContractError("embedding: empty id list");
    for (int i : ids)
        if (i < 0 || i >= v) throw ContractError("embedding: id " + std::to_string(i) + " out of range [0," +
                                                 std::to_string(v) + ")");
    Tensor<F> out({t, d});
    for (int r = 0; r < t; ++r)
        for (int j = 0; j < d; ++j) out.at(r, j) = table.at(ids[static_cast<std::size_t>(r)], j);
    if (taped(tape, table.requires_grad())) {
        out.set_requires_grad(true);
        Tensor<F> pt = table, po = out;
        tape->record([pt, po, ids, t, d]() mutable {
            for (int r = 0; r < t; ++r)
                for (int j = 0; j < d; ++j)
                    pt.grad()[static_cast<std::size_t>(ids[static_cast<std::size_t>(r)]) * d + j] +=
                        po.grad()[static_cast<std::size_t>(r) * d + j];
        });
    }
    return out;
}

// Column-wise concatenation of equally tall matrices.
template <typename F>
Tensor<F> concat_cols(const std::vector<Tensor<F>>& parts, Tape<F>* tape = nullptr) {
    if (parts.empty()) throw ContractError("concat_cols: no inputs");
    const int m = parts[0].dim(0);
    int total = 0;
    bool any_grad = false;
    for (const auto& p : parts) {
        ensure_rank2(p, "concat_cols");
        if (p.dim(0) != m) throw ShapeError("concat_cols: row count mismatch");
        total += p.dim(1);
        any_grad = any_grad || p.requires_grad();
    }
    Tensor<F> out({m, total});
    int off = 0;
    for (const auto& p : parts) {
        const int c = p.dim(1);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < c; ++j) out.at(i, off + j) = p.at(i, j);
        off += c;
    }
    if (taped(tape, any_grad)) {
        out.set_requires_grad(true);
        std::vector<Tensor<F>> pp = parts;
        Tensor<F> po = out;
        tape->record([pp, po, m, total]() mutable {
            int o = 0;
            for (auto& p : pp) {
                const int c = p.dim(1);
                if (p.requires_grad())
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < c; ++j)
                            p.grad()[static_cast<std::size_t>(i) * c + j] +=
                                po.grad()[static_cast<std::size_t>(i) * total + o + j];
                o += c;
            }
        });
    }
    return out;
}

// Row-wise (vertical) concatenation of equally wide matrices.
template <typename F>
Tensor<F> concat_rows(const std::vector<Tensor<F>>& parts, Tape<F>* tape = nullptr) {
    if (parts.empty()) throw ContractError("concat_rows: no inputs");
    const int n = parts[0].dim(parts[0].rank() - 1);
    int total = 0;
    bool any_grad = false;
    for (const auto& p : parts) {
        ensure_rank2(p, "concat_rows");
        if (p.dim(1) != n) throw ShapeError("concat_rows: column count mismatch");
        total += p.dim(0);
        any_grad = any_grad || p.requires_grad();
    }
    Tensor<F> out({total, n});
    std::size_t off = 0;
    for (const auto& p : parts) {
        for (std::size_t i = 0; i < p.numel(); ++i) out.data()[off + i] = p.data()[i];
        off += p.numel();
    }
    if (taped(tape, any_grad)) {
        out.set_requires_grad(true);
        std::vector<Tensor<F>> pp = parts;
        Tensor<F> po = out;
        tape->record([pp, po]() mutable {
            std::size_t o = 0;
            for (auto& p : pp) {
                if (p.requires_grad())
                    for (std::size_t i = 0; i < p.numel(); ++i) p.grad()[i] += po.grad()[o + i];
                o += p.numel();
            }
        });
    }
    return out;
}

// Adds kMaskFill where the mask forbids attention. Gradient passes through
// unchanged (the fill is an additive constant).
template <typename F>
Tensor<F> mask_fill(const Tensor<F>& scores, const Mask& mask, Tape<F>* tape = nullptr) {
    ensure_rank2(scores, "mask_fill");
    if (scores.dim(0) != mask.rows || scores.dim(1) != mask.cols)
        throw ShapeError("mask_fill: mask " + std::to_string(mask.rows) + "x" + std::to_string(mask.cols) +
                         " does not match scores " + shape_str(scores.shape()));
    for (int r = 0; r < mask.rows; ++r) {
        bool any = false;
        for (int c = 0; c < mask.cols && !any; ++c) any = mask.at(r, c);
        if (!any) throw ContractError("mask_fill: mask row " + std::to_string(r) + " forbids every position");
    }
    Tensor<F> out(scores.shape());
    for (int r = 0; r < mask.rows; ++r)
        for (int c = 0; c < mask.cols; ++c)
            out.at(r, c) = scores.at(r, c) + (mask.at(r, c) ? F(0) : F(kMaskFill));
    if (taped(tape, scores.requires_grad())) {
        out.set_requires_grad(true);
        Tensor<F> ps = scores, po = out;
        tape->record([ps, po]() mutable {
            for (std::size_t i = 0; i < ps.numel(); ++i) ps.grad()[i] += po.grad()[i];
        });
    }
    return out;
}

// ---- attention ----

// Softmax(Q K^T / sqrt(dk) + mask) V. When a counter is supplied it advances
// by q*s query-key pair evaluations.
template <typename F>
Tensor<F> scaled_dot_attention(const Tensor<F>& q, const Tensor<F>& k, const Tensor<F>& v, const Mask* mask,
                               std::uint64_t* qk_pair_counter, Tape<F>* tape = nullptr) {
    ensure_rank2(q, "scaled_dot_attention");
    ensure_rank2(k, "scaled_dot_attention");
    ensure_rank2(v, "scaled_dot_attention");
    if (q.dim(1) != k.dim(1))
        throw ShapeError("scaled_dot_attention: key dim mismatch, " + shape_str(q.shape()) + " vs " +
                         shape_str(k.shape()));
    if (k.dim(0) != v.dim(0))
        throw ShapeError("scaled_dot_attention: K rows != V rows, " + shape_str(k.shape()) + " vs " +
                         shape_str(v.shape()));
    if (mask && (mask->rows != q.dim(0) || mask->cols != k.dim(0)))
        throw ShapeError("scaled_dot_attention: mask size mismatch");
    if (qk_pair_counter)
        *qk_pair_counter += static_cast<std::uint64_t>(q.dim(0)) * static_cast<std::uint64_t>(k.dim(0));
    Tensor<F> scores = matmul_nt(q, k, tape);
    scores = scale(scores, F(1) / std::sqrt(F(q.dim(1))), tape);
    if (mask) scores = mask_fill(scores, *mask, tape);
    Tensor<F> probs = softmax(scores, tape);
    return matmul(probs, v, tape);
}

// Per-head projection weights plus the output aggregation W0.
template <typename F>
struct MhaWeights {
    std::vector<Tensor<F>> wq, wk, wv;  // each [D x D/H]
    Tensor<F> wo;                       // [D x D]
    int heads() const { return static_cast<int>(wq.size()); }
};

// Concat(h1..hH) W0 with each head running scaled dot-product attention at
// head dim D/H. The pair counter advances by Tq*Tkv once per call: it counts
// query-key position pairs, which is what the decode cost model measures, so
// the count is independent of the head split.
template <typename F>
Tensor<F> multi_head_attention(const Tensor<F>& x_q, const Tensor<F>& x_kv, const MhaWeights<F>& w,
                               const Mask* mask, std::uint64_t* qk_pair_counter, Tape<F>* tape = nullptr) {
    ensure_rank2(x_q, "multi_head_attention");
    ensure_rank2(x_kv, "multi_head_attention");
    const int d = x_q.dim(1);
    const int h = w.heads();
    if (h == 0 || w.wk.size() != w.wq.size() || w.wv.size() != w.wq.size())
        throw ConfigError("multi_head_attention: malformed head weights");
    if (d % h != 0)
        throw ConfigError("multi_head_attention: model dim " + std::to_string(d) + " not divisible by " +
                          std::to_string(h) + " heads");
    if (w.wq[0].dim(0) != d || w.wq[0].dim(1) != d / h)
        throw ConfigError("multi_head_attention: head weight shape " + shape_str(w.wq[0].shape()) +
                          " does not match model dim " + std::to_string(d));
    if (qk_pair_counter)
        *qk_pair_counter += static_cast<std::uint64_t>(x_q.dim(0)) * static_cast<std::uint64_t>(x_kv.dim(0));
    std::vector<Tensor<F>> heads;
    heads.reserve(static_cast<std::size_t>(h));
    for (int i = 0; i < h; ++i) {
        Tensor<F> qi = matmul(x_q, w.wq[static_cast<std::size_t>(i)], tape);
        Tensor<F> ki = matmul(x_kv, w.wk[static_cast<std::size_t>(i)], tape);
        Tensor<F> vi = matmul(x_kv, w.wv[static_cast<std::size_t>(i)], tape);
        heads.push_back(scaled_dot_attention(qi, ki, vi, mask, nullptr, tape));
    }
    Tensor<F> cat = concat_cols(heads, tape);
    return matmul(cat, w.wo, tape);
}

// ---- loss ----

// Sum over non-PAD positions of -log softmax(logits)[target], plus the count
// of contributing positions. The gradient of the sum w.r.t. logits is
// (softmax - onehot) on non-PAD rows.
template <typename F>
std::pair<Tensor<F>, int> xent_sum(const Tensor<F>& logits, const std::vector<int>& targets, int pad_id,
                                   Tape<F>* tape = nullptr) {
    ensure_rank2(logits, "xent_sum");
    const int t = logits.dim(0), v = logits.dim(1);
    if (static_cast<int>(targets.size()) != t)
        throw ShapeError("xent_sum: " + std::to_string(targets.size()) + " targets for " + std::to_string(t) +
                         " logit rows");
    int count = 0;
    F total = F(0);
    for (int r = 0; r < t; ++r) {
        const int y = targets[static_cast<std::size_t>(r)];
        if (y == pad_id) continue;
        if (y < 0 || y >= v) throw ContractError("xent_sum: target id " + std::to_string(y) + " out of range");
        const F* row = logits.data().data() + static_cast<std::size_t>(r) * v;
        F mx = row[0];
        for (int j = 1; j < v; ++j)
            if (row[j] > mx) mx = row[j];
        F lse = F(0);
        for (int j = 0; j < v; ++j) lse += std::exp(row[j] - mx);
        total += std::log(lse) + mx - row[y];
        ++count;
    }
    if (count == 0) throw ContractError("xent_sum: every target position is PAD");
    Tensor<F> out = Tensor<F>::scalar(total);
    check_finite(out, "xent_sum");
    if (taped(tape, logits.requires_grad())) {
        out.set_requires_grad(true);
        Tensor<F> pl = logits, po = out;
        tape->record([pl, po, targets, pad_id, t, v]() mutable {
            const F g = po.grad()[0];
            for (int r = 0; r < t; ++r) {
                const int y = targets[static_cast<std::size_t>(r)];
                if (y == pad_id) continue;
                const F* row = pl.data().data() + static_cast<std::size_t>(r) * v;
                F* grow = pl.grad().data() + static_cast<std::size_t>(r) * v;
                F mx = row[0];
                for (int j = 1; j < v; ++j)
                    if (row[j] > mx) mx = row[j];
                F lse = F(0);
                for (int j = 0; j < v; ++j) lse += std::exp(row[j] - mx);
                const F inv = F(1) / lse;
                for (int j = 0; j < v; ++j) {
                    F p = std::exp(row[j] - mx) * inv;
                    grow[j] += g * (p - (j == y ? F(1) : F(0)));
                }
            }
        });
    }
    return {out, count};
}

// Mean over non-PAD target positions of -log softmax(logits)[target].
template <typename F>
Tensor<F> xent_loss(const Tensor<F>& logits, const std::vector<int>& targets, int pad_id,
                    Tape<F>* tape = nullptr) {
    auto [sum, count] = xent_sum(logits, targets, pad_id, tape);
    return scale(sum, F(1) / F(count), tape);
}

}  // namespace ops
}  // namespace img2inchi
