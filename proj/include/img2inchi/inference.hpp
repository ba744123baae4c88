#pragma once

#include <cstdint>
#include <cstring>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "img2inchi/counters.hpp"
#include "img2inchi/decoder.hpp"
#include "img2inchi/encoder.hpp"
#include "img2inchi/tokenizer.hpp"

namespace img2inchi {

inline std::uint64_t fnv1a64(const void* p, std::size_t len) {
    const auto* b = static_cast<const unsigned char*>(p);
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= b[i];
        h *= 0x100000001B3ULL;
    }
    return h;
}

// Per-layer sequences of already-computed output rows. Level 0 holds the
// embedded inputs; level l+1 holds decoder layer l's outputs. Rows are
// append-only; a digest is taken at write time so write-once can be audited
// after the fact.
template <typename F>
class DecodeCache {
   public:
    DecodeCache(int dec_layers, int dim) : dim_(dim), levels_(static_cast<std::size_t>(dec_layers) + 1) {}

    int steps() const { return steps_; }
    int dim() const { return dim_; }
    int num_levels() const { return static_cast<int>(levels_.size()); }

    const std::vector<std::vector<F>>& level(int l) const { return levels_[static_cast<std::size_t>(l)]; }

    void append(int level, std::vector<F> row) {
        auto& lv = levels_[static_cast<std::size_t>(level)];
        digests_[key(level, static_cast<int>(lv.size()))] = fnv1a64(row.data(), row.size() * sizeof(F));
        lv.push_back(std::move(row));
    }

    void bump_steps() { ++steps_; }

    // Every level must hold exactly `steps` rows between steps.
    void check_aligned() const {
        for (std::size_t l = 0; l < levels_.size(); ++l)
            if (static_cast<int>(levels_[l].size()) != steps_)
                throw InvariantError("decode cache desynchronized: level " + std::to_string(l) + " holds " +
                                     std::to_string(levels_[l].size()) + " rows after " + std::to_string(steps_) +
                                     " steps");
    }

    // Recomputes all row digests and compares with the write-time ones.
    bool rows_unchanged_since_write() const {
        for (std::size_t l = 0; l < levels_.size(); ++l)
            for (std::size_t r = 0; r < levels_[l].size(); ++r) {
                const auto& row = levels_[l][r];
                const auto it = digests_.find(key(static_cast<int>(l), static_cast<int>(r)));
                if (it == digests_.end() || it->second != fnv1a64(row.data(), row.size() * sizeof(F)))
                    return false;
            }
        return true;
    }

    Tensor<F> level_matrix(int l) const {
        const auto& lv = levels_[static_cast<std::size_t>(l)];
        Tensor<F> m({static_cast<int>(lv.size()), dim_});
        for (std::size_t r = 0; r < lv.size(); ++r)
            std::memcpy(m.data().data() + r * static_cast<std::size_t>(dim_), lv[r].data(),
                        sizeof(F) * static_cast<std::size_t>(dim_));
        return m;
    }

   private:
    static std::uint64_t key(int level, int row) {
        return (static_cast<std::uint64_t>(level) << 32) | static_cast<std::uint32_t>(row);
    }

    int dim_;
    int steps_ = 0;
    std::vector<std::vector<std::vector<F>>> levels_;
    std::unordered_map<std::uint64_t, std::uint64_t> digests_;
};

// Computes one new row per decoder layer for the appended token and returns
// the next-token logits (a [1 x V] tensor). The new row's self-attention
// query attends over that layer's cached input rows; cross-attention attends
// over the fixed memory. Row t of a full decode_forward over the same prefix
// is reproduced exactly (the per-row arithmetic is identical).
template <typename F>
Tensor<F> step_cached(DecodeCache<F>& cache, int new_token_id, const EncoderMemory<F>& memory,
                      const Model<F>& model, OpCounter& counter) {
    const ModelWeights<F>& w = model.weights;
    const ModelConfig& cfg = w.cfg;
    cache.check_aligned();
    const int pos = cache.steps();
    if (pos + 1 > cfg.max_len)
        throw ContractError("step_cached: prefix length " + std::to_string(pos + 1) + " exceeds max_len " +
                            std::to_string(cfg.max_len));
    Rng rng(0);  // dropout is off in inference; never consulted

    Tensor<F> x = ops::embedding(w.tok_embed, {new_token_id});
    x = ops::add(x, take_rows(model.pe, pos, 1));
    cache.append(0, x.data());
    for (std::size_t l = 0; l < w.dec.size(); ++l) {
        Tensor<F> kv = cache.level_matrix(static_cast<int>(l));
        x = decoder_block<F>(x, kv, memory, w.dec[l], nullptr, &counter.decoder_qk_pairs,
                             F(0), rng, false, nullptr);
        cache.append(static_cast<int>(l) + 1, x.data());
    }
    cache.bump_steps();
    return ops::add_bias(ops::matmul(x, w.out_proj), w.out_bias);
}

enum class Engine { Naive, EncoderOnce, Cached };

inline const char* engine_name(Engine e) {
    switch (e) {
        case Engine::Naive: return "naive";
        case Engine::EncoderOnce: return "encoder-once";
        case Engine::Cached: return "cached";
    }
    return "?";
}

inline Engine engine_from_name(const std::string& s) {
    if (s == "naive") return Engine::Naive;
    if (s == "encoder-once") return Engine::EncoderOnce;
    if (s == "cached") return Engine::Cached;
    throw UsageError("unknown engine '" + s + "' (expected naive or cached)");
}

struct DecodeOptions {
    int max_new_tokens = 0;     // emitted non-EOS tokens cap; 0 = max_len - 2
    bool suppress_eos = false;  // benchmark mode: never emit EOS, run to the cap
};

template <typename F>
struct DecodeResult {
    std::vector<int> ids;  // [SOS, tokens..., EOS?] as produced
    OpCounter counter;
    int steps = 0;  // forward evaluations performed
};

namespace detail {

// Argmax over the final logits row; ties break to the lowest id.
template <typename F>
int pick_token(const Tensor<F>& logits, bool suppress_eos) {
    const int v = logits.dim(1);
    const int r = logits.dim(0) - 1;
    int best = -1;
    F best_v = F(0);
    for (int j = 0; j < v; ++j) {
        if (suppress_eos && j == Vocab::kEos) continue;
        if (best < 0 || logits.at(r, j) > best_v) {
            best = j;
            best_v = logits.at(r, j);
        }
    }
    return best;
}

// Shared greedy loop; `memory_for_step` is consulted before every decoder
// evaluation, which is what lets the naive engine recompute the encoder.
template <typename F>
DecodeResult<F> greedy_full_forward(const std::function<EncoderMemory<F>(OpCounter&)>& memory_for_step,
                                    const Model<F>& model, const DecodeOptions& opts) {
    DecodeResult<F> out;
    const int cap = opts.max_new_tokens > 0 ? opts.max_new_tokens : model.cfg().max_len - 2;
    std::vector<int> prefix{Vocab::kSos};
    out.ids = prefix;
    for (;;) {
        EncoderMemory<F> mem = memory_for_step(out.counter);
        Tensor<F> logits = decode_forward(prefix, mem, model.weights, model.pe, &out.counter);
        ++out.steps;
        const int id = pick_token(logits, opts.suppress_eos);
        if (id == Vocab::kEos) {
            out.ids.push_back(Vocab::kEos);
            break;
        }
        out.ids.push_back(id);
        prefix.push_back(id);
        if (static_cast<int>(out.ids.size()) - 1 >= cap) break;
    }
    return out;
}

}  // namespace detail

// Baseline engine: recomputes the encoder output and the full decoder
// forward at every step.
template <typename F>
DecodeResult<F> greedy_decode_naive(const Tensor<F>& img, const Model<F>& model, const DecodeOptions& opts = {}) {
    return detail::greedy_full_forward<F>(
        [&](OpCounter& c) { return encode_image(img, model.weights, &c); }, model, opts);
}

// Middle variant: encoder memory computed once, decoder still fully
// recomputed per step. Separates the encoder-reuse saving from the
// layer-output-caching saving.
template <typename F>
DecodeResult<F> greedy_decode_encoder_once(const Tensor<F>& img, const Model<F>& model,
                                           const DecodeOptions& opts = {}) {
    EncoderMemory<F> mem;
    bool have = false;
    return detail::greedy_full_forward<F>(
        [&](OpCounter& c) {
            if (!have) {
                mem = encode_image(img, model.weights, &c);
                have = true;
            }
            return mem;
        },
        model, opts);
}

// Cached engine: encoder called exactly once, decoder advances through
// step_cached so each layer only computes the newest token's row.
template <typename F>
DecodeResult<F> greedy_decode_cached(const Tensor<F>& img, const Model<F>& model, const DecodeOptions& opts = {}) {
    DecodeResult<F> out;
    EncoderMemory<F> mem = encode_image(img, model.weights, &out.counter);
    const int cap = opts.max_new_tokens > 0 ? opts.max_new_tokens : model.cfg().max_len - 2;
    DecodeCache<F> cache(model.cfg().dec_layers, model.cfg().model_dim);
    out.ids = {Vocab::kSos};
    int next_input = Vocab::kSos;
    for (;;) {
        Tensor<F> logits = step_cached(cache, next_input, mem, model, out.counter);
        ++out.steps;
        const int id = detail::pick_token(logits, opts.suppress_eos);
        if (id == Vocab::kEos) {
            out.ids.push_back(Vocab::kEos);
            break;
        }
        out.ids.push_back(id);
        next_input = id;
        if (static_cast<int>(out.ids.size()) - 1 >= cap) break;
    }
    if (!cache.rows_unchanged_since_write()) throw InvariantError("decode cache rows mutated after write");
    return out;
}

template <typename F>
DecodeResult<F> greedy_decode(const Tensor<F>& img, const Model<F>& model, Engine engine,
                              const DecodeOptions& opts = {}) {
    switch (engine) {
        case Engine::Naive: return greedy_decode_naive(img, model, opts);
        case Engine::EncoderOnce: return greedy_decode_encoder_once(img, model, opts);
        case Engine::Cached: return greedy_decode_cached(img, model, opts);
    }
    throw ContractError("greedy_decode: bad engine");
}

}  // namespace img2inchi
