#pragma once

// Small model builders shared across the test suites.

#include "img2inchi/decoder.hpp"
#include "img2inchi/encoder.hpp"
#include "img2inchi/model.hpp"
#include "img2inchi/rng.hpp"

namespace test_models {

inline img2inchi::ModelConfig tiny_cfg(int image = 32, int patch = 16, int dim = 16, int enc_layers = 1,
                                       int dec_layers = 1, int heads = 2, int ffn = 32, int vocab = 9,
                                       int max_len = 40) {
    img2inchi::ModelConfig cfg;
    cfg.image_size = image;
    cfg.patch_size = patch;
    cfg.channels = 1;
    cfg.model_dim = dim;
    cfg.enc_layers = enc_layers;
    cfg.dec_layers = dec_layers;
    cfg.heads = heads;
    cfg.ffn_dim = ffn;
    cfg.vocab_size = vocab;
    cfg.max_len = max_len;
    cfg.dropout_rate = 0.0;
    return cfg;
}

template <typename F = float>
img2inchi::Model<F> tiny_model(const img2inchi::ModelConfig& cfg, std::uint64_t seed) {
    return img2inchi::Model<F>(img2inchi::ModelWeights<F>::init(cfg, seed));
}

template <typename F = float>
img2inchi::Tensor<F> random_image(const img2inchi::ModelConfig& cfg, std::uint64_t seed) {
    img2inchi::Rng rng(seed);
    img2inchi::Tensor<F> img({cfg.image_size, cfg.image_size, cfg.channels});
    for (F& v : img.data()) v = static_cast<F>(rng.uniform());
    return img;
}

template <typename F = float>
std::vector<int> random_tokens(const img2inchi::ModelConfig& cfg, std::uint64_t seed, int len) {
    img2inchi::Rng rng(seed);
    std::vector<int> ids{1};  // SOS
    for (int i = 1; i < len; ++i) ids.push_back(3 + static_cast<int>(rng.below(cfg.vocab_size - 3)));
    return ids;
}

}  // namespace test_models
