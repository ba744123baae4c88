#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "img2inchi/counters.hpp"
#include "img2inchi/encoder.hpp"
#include "img2inchi/model.hpp"
#include "img2inchi/ops.hpp"
#include "img2inchi/tensor.hpp"

namespace img2inchi {

// Sinusoidal position table: PE(pos, 2i) = sin(pos / base^(2i/D)),
// PE(pos, 2i+1) = cos(pos / base^(2i/D)). All entries lie in [-1, 1].
template <typename F>
Tensor<F> sinusoidal_pe(int max_len, int d, double base) {
    if (d % 2 != 0) throw ConfigError("sinusoidal_pe: model dim must be even, got " + std::to_string(d));
    if (max_len < 1) throw ConfigError("sinusoidal_pe: max_len must be >= 1");
    Tensor<F> pe({max_len, d});
    for (int pos = 0; pos < max_len; ++pos)
        for (int i = 0; i < d / 2; ++i) {
            const double angle = pos / std::pow(base, (2.0 * i) / d);
            pe.at(pos, 2 * i) = static_cast<F>(std::sin(angle));
            pe.at(pos, 2 * i + 1) = static_cast<F>(std::cos(angle));
        }
    return pe;
}

// Lower-triangular boolean mask: position q may attend to s iff s <= q.
inline Mask causal_mask(int t) {
    if (t < 1) throw ContractError("causal_mask: sequence length must be >= 1");
    Mask m(t, t);
    for (int q = 0; q < t; ++q)
        for (int s = 0; s <= q; ++s) m.set(q, s, true);
    return m;
}

// Selects rows [start, start+count) as a constant (no gradient flows into the
// source; used for the fixed sinusoidal table).
template <typename F>
Tensor<F> take_rows(const Tensor<F>& t, int start, int count) {
    const int n = t.dim(1);
    Tensor<F> out({count, n});
    for (int i = 0; i < count; ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) = t.at(start + i, j);
    return out;
}

// One post-norm decoder block applied to x (queries) against self_kv for the
// masked self-attention and memory for the cross-attention. x and self_kv
// coincide in the full forward; the caching engine passes the single new row
// as x and the cached layer inputs as self_kv.
template <typename F>
Tensor<F> decoder_block(const Tensor<F>& x, const Tensor<F>& self_kv, const Tensor<F>& memory,
                        const DecoderLayerWeights<F>& layer, const Mask* self_mask, std::uint64_t* qk,
                        F dropout_rate, Rng& rng, bool training, Tape<F>* tape) {
    Tensor<F> sa = ops::multi_head_attention(x, self_kv, layer.self_attn, self_mask, qk, tape);
    Tensor<F> h = ops::layer_norm(ops::add(x, sa, tape), layer.ln1.gain, layer.ln1.bias, F(1e-5), tape);
    Tensor<F> ca = ops::multi_head_attention(h, memory, layer.cross_attn, nullptr, qk, tape);
    h = ops::layer_norm(ops::add(h, ca, tape), layer.ln2.gain, layer.ln2.bias, F(1e-5), tape);
    Tensor<F> ff = ffn_forward(h, layer.ffn, dropout_rate, rng, training, tape);
    return ops::layer_norm(ops::add(h, ff, tape), layer.ln3.gain, layer.ln3.bias, F(1e-5), tape);
}

// Weights plus the fixed sinusoidal position table they decode with.
template <typename F>
struct Model {
    ModelWeights<F> weights;
    Tensor<F> pe;

    explicit Model(ModelWeights<F> w)
        : weights(std::move(w)),
          pe(sinusoidal_pe<F>(weights.cfg.max_len, weights.cfg.model_dim, weights.cfg.pe_base)) {}

    const ModelConfig& cfg() const { return weights.cfg; }
};

// Full decoder forward over a token prefix: embedding + sinusoidal PE,
// L_dec post-norm blocks (masked self-attention, cross-attention over the
// encoder memory, FFN), then the vocabulary projection. Returns [T x V]
// logits.
template <typename F>
Tensor<F> decode_forward(const std::vector<int>& tokens, const EncoderMemory<F>& memory,
                         const ModelWeights<F>& w, const Tensor<F>& pe, OpCounter* counter = nullptr,
                         Tape<F>* tape = nullptr, bool training = false, Rng* rng = nullptr) {
    const ModelConfig& cfg = w.cfg;
    const int t = static_cast<int>(tokens.size());
    if (t == 0) throw ContractError("decode_forward: empty token prefix");
    if (t > cfg.max_len)
        throw ContractError("decode_forward: prefix length " + std::to_string(t) + " exceeds max_len " +
                            std::to_string(cfg.max_len));
    if (memory.dim(1) != cfg.model_dim)
        throw ShapeError("decode_forward: memory dim " + shape_str(memory.shape()) +
                         " does not match model dim " + std::to_string(cfg.model_dim));
    std::uint64_t* qk = counter ? &counter->decoder_qk_pairs : nullptr;
    Rng fallback(0);
    Rng& r = rng ? *rng : fallback;
    const F p = static_cast<F>(cfg.dropout_rate);

    Tensor<F> x = ops::embedding(w.tok_embed, tokens, tape);
    x = ops::add(x, take_rows(pe, 0, t), tape);
    x = ops::dropout(x, p, r, training, tape);
    const Mask mask = causal_mask(t);
    for (const auto& layer : w.dec) x = decoder_block(x, x, memory, layer, &mask, qk, p, r, training, tape);
    return ops::add_bias(ops::matmul(x, w.out_proj, tape), w.out_bias, tape);
}

}  // namespace img2inchi
