#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "img2inchi/counters.hpp"
#include "img2inchi/model.hpp"
#include "img2inchi/ops.hpp"
#include "img2inchi/tensor.hpp"

namespace img2inchi {

// The (N+1) x D image representation: row 0 is the class-token output, rows
// 1..N come from the patches.
template <typename F>
using EncoderMemory = Tensor<F>;

// Reshapes an [H x W x C] (or [H x W]) image into N = HW/P^2 flattened
// non-overlapping patches in row-major patch order; each patch is flattened
// rows, then columns, then channels.
template <typename F>
Tensor<F> patchify(const Tensor<F>& img, int patch) {
    if (img.rank() != 2 && img.rank() != 3)
        throw ShapeError("patchify: expected [HxW] or [HxWxC] image, got " + shape_str(img.shape()));
    const int h = img.dim(0);
    const int w = img.dim(1);
    const int c = img.rank() == 3 ? img.dim(2) : 1;
    if (patch <= 0 || h % patch != 0 || w % patch != 0)
        throw ShapeError("patchify: image " + std::to_string(h) + "x" + std::to_string(w) +
                         " not divisible by patch size " + std::to_string(patch));
    const int ph = h / patch, pw = w / patch;
    const int n = ph * pw;
    const int pd = patch * patch * c;
    Tensor<F> out({n, pd});
    const F* src = img.data().data();
    for (int pr = 0; pr < ph; ++pr)
        for (int pc = 0; pc < pw; ++pc) {
            F* row = out.data().data() + static_cast<std::size_t>(pr * pw + pc) * pd;
            std::size_t k = 0;
            for (int r = 0; r < patch; ++r)
                for (int col = 0; col < patch; ++col)
                    for (int ch = 0; ch < c; ++ch)
                        row[k++] = src[((static_cast<std::size_t>(pr * patch + r) * w) + (pc * patch + col)) * c + ch];
        }
    return out;
}

// Linear projection of patches, prepended class embedding, learned 1D
// position embeddings: row 0 = cls + pos0, row i+1 = patch_i W + pos_{i+1}.
template <typename F>
Tensor<F> embed_patches(const Tensor<F>& patches, const ModelWeights<F>& w, Tape<F>* tape = nullptr) {
    if (patches.dim(1) != w.patch_proj.dim(0))
        throw ShapeError("embed_patches: patch dim " + shape_str(patches.shape()) +
                         " does not match projection " + shape_str(w.patch_proj.shape()));
    if (patches.dim(0) + 1 != w.pos_embed.dim(0))
        throw ConfigError("embed_patches: position table has " + std::to_string(w.pos_embed.dim(0)) +
                          " rows but image yields " + std::to_string(patches.dim(0)) +
                          " patches; tables are per image size");
    Tensor<F> proj = ops::matmul(patches, w.patch_proj, tape);
    Tensor<F> x = ops::concat_rows<F>({w.cls_embed, proj}, tape);
    return ops::add(x, w.pos_embed, tape);
}

template <typename F>
Tensor<F> ffn_forward(const Tensor<F>& x, const FfnWeights<F>& f, F dropout_rate, Rng& rng, bool training,
                      Tape<F>* tape) {
    Tensor<F> h = ops::add_bias(ops::matmul(x, f.w1, tape), f.b1, tape);
    h = ops::gelu(h, tape);
    h = ops::dropout(h, dropout_rate, rng, training, tape);
    return ops::add_bias(ops::matmul(h, f.w2, tape), f.b2, tape);
}

// Full encoder: patchify, embed, L transformer layers, final layer norm.
// Pre-norm blocks by default (x += MHA(LN(x)); x += FFN(LN(x))); the
// post-norm variant (LN after the residual sum) is selectable via config.
template <typename F>
EncoderMemory<F> encode_image(const Tensor<F>& img, const ModelWeights<F>& w, OpCounter* counter = nullptr,
                              Tape<F>* tape = nullptr, bool training = false, Rng* rng = nullptr) {
    const ModelConfig& cfg = w.cfg;
    if (img.dim(0) != cfg.image_size || img.dim(1) != cfg.image_size ||
        (img.rank() == 3 ? img.dim(2) : 1) != cfg.channels)
        throw ShapeError("encode_image: image " + shape_str(img.shape()) + " does not match configured " +
                         std::to_string(cfg.image_size) + "x" + std::to_string(cfg.image_size) + "x" +
                         std::to_string(cfg.channels));
    if (counter) counter->encoder_calls += 1;
    std::uint64_t* qk = counter ? &counter->encoder_qk_pairs : nullptr;
    Rng fallback(0);
    Rng& r = rng ? *rng : fallback;
    const F p = static_cast<F>(cfg.dropout_rate);

    Tensor<F> x = embed_patches(patchify(img, cfg.patch_size), w, tape);
    x = ops::dropout(x, p, r, training, tape);
    for (const auto& layer : w.enc) {
        if (cfg.pre_norm_encoder) {
            Tensor<F> n1 = ops::layer_norm(x, layer.ln1.gain, layer.ln1.bias, F(1e-5), tape);
            Tensor<F> sa = ops::multi_head_attention(n1, n1, layer.attn, nullptr, qk, tape);
            x = ops::add(x, sa, tape);
            Tensor<F> n2 = ops::layer_norm(x, layer.ln2.gain, layer.ln2.bias, F(1e-5), tape);
            Tensor<F> ff = ffn_forward(n2, layer.ffn, p, r, training, tape);
            x = ops::add(x, ff, tape);
        } else {
            Tensor<F> sa = ops::multi_head_attention(x, x, layer.attn, nullptr, qk, tape);
            x = ops::layer_norm(ops::add(x, sa, tape), layer.ln1.gain, layer.ln1.bias, F(1e-5), tape);
            Tensor<F> ff = ffn_forward(x, layer.ffn, p, r, training, tape);
            x = ops::layer_norm(ops::add(x, ff, tape), layer.ln2.gain, layer.ln2.bias, F(1e-5), tape);
        }
    }
    return ops::layer_norm(x, w.enc_final_ln.gain, w.enc_final_ln.bias, F(1e-5), tape);
}

}  // namespace img2inchi
