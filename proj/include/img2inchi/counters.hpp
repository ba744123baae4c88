#pragma once

#include <cstdint>

namespace img2inchi {

// Deterministic cost instrumentation for a decode session. qk pairs count
// query-key position pair evaluations inside attention (independent of the
// head split, so the closed-form decode cost laws hold for any head count);
// encoder and decoder attention are tracked separately because the naive
// engine recomputes the encoder every step.
struct OpCounter {
    std::uint64_t encoder_qk_pairs = 0;
    std::uint64_t decoder_qk_pairs = 0;
    std::uint64_t encoder_calls = 0;

    std::uint64_t qk_pairs() const { return encoder_qk_pairs + decoder_qk_pairs; }

    OpCounter& operator+=(const OpCounter& o) {
        encoder_qk_pairs += o.encoder_qk_pairs;
        decoder_qk_pairs += o.decoder_qk_pairs;
        encoder_calls += o.encoder_calls;
        return *this;
    }
};

// Closed forms for the decoder attention cost after n steps against a memory
// of m rows, per decoder layer.
//
// Full-recompute engines evaluate t*t self pairs and m*t cross pairs at the
// step with prefix length t; the caching engine evaluates t + m.
inline std::uint64_t naive_decoder_qk_pairs(std::uint64_t n, std::uint64_t m, std::uint64_t layers) {
    std::uint64_t total = 0;
    for (std::uint64_t t = 1; t <= n; ++t) total += t * t + m * t;
    return total * layers;
}

inline std::uint64_t cached_decoder_qk_pairs(std::uint64_t n, std::uint64_t m, std::uint64_t layers) {
    return (n * (n + 1) / 2 + m * n) * layers;
}

}  // namespace img2inchi
