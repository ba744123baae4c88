#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "img2inchi/errors.hpp"
#include "img2inchi/ops.hpp"
#include "img2inchi/rng.hpp"
#include "img2inchi/tensor.hpp"

namespace img2inchi {

// All hyperparameters of the encoder-decoder model. Round-trips through the
// checkpoint header as canonical JSON.
struct ModelConfig {
    int image_size = 224;       // H == W
    int patch_size = 16;        // P
    int channels = 1;           // grayscale structure drawings by default
    int model_dim = 512;        // D
    int enc_layers = 12;
    int dec_layers = 12;
    int heads = 8;
    int ffn_dim = 2048;         // 4*D by convention
    int vocab_size = 0;         // set from the vocabulary
    int max_len = 300;
    double pe_base = 10000.0;
    double dropout_rate = 0.1;
    bool pre_norm_encoder = true;  // post-norm selectable for experimentation

    int patches_per_side() const { return image_size / patch_size; }
    int num_patches() const { return patches_per_side() * patches_per_side(); }
    int memory_rows() const { return num_patches() + 1; }  // class token + patches
    int head_dim() const { return model_dim / heads; }
    int patch_dim() const { return patch_size * patch_size * channels; }

    void validate() const {
        if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0)
            throw ConfigError("image size " + std::to_string(image_size) + " not divisible by patch size " +
                              std::to_string(patch_size));
        if (channels < 1) throw ConfigError("channels must be >= 1");
        if (model_dim <= 0 || model_dim % 2 != 0)
            throw ConfigError("model dim must be positive and even for sin/cos pairing, got " +
                              std::to_string(model_dim));
        if (heads <= 0 || model_dim % heads != 0)
            throw ConfigError("model dim " + std::to_string(model_dim) + " not divisible by " +
                              std::to_string(heads) + " heads");
        if (enc_layers < 0 || dec_layers < 0) throw ConfigError("layer counts must be >= 0");
        if (ffn_dim <= 0) throw ConfigError("ffn dim must be positive");
        if (vocab_size < 4) throw ConfigError("vocab size must cover the three specials plus content tokens");
        if (max_len < 2) throw ConfigError("max_len must be >= 2");
        if (pe_base <= 1.0) throw ConfigError("pe base must exceed 1");
        if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw ConfigError("dropout rate must be in [0,1)");
    }

    nlohmann::json to_json() const {
        return nlohmann::json{{"image_size", image_size},
                              {"patch_size", patch_size},
                              {"channels", channels},
                              {"model_dim", model_dim},
                              {"enc_layers", enc_layers},
                              {"dec_layers", dec_layers},
                              {"heads", heads},
                              {"ffn_dim", ffn_dim},
                              {"vocab_size", vocab_size},
                              {"max_len", max_len},
                              {"pe_base", pe_base},
                              {"dropout_rate", dropout_rate},
                              {"pre_norm_encoder", pre_norm_encoder}};
    }

    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig cfg;
        cfg.image_size = j.at("image_size").get<int>();
        cfg.patch_size = j.at("patch_size").get<int>();
        cfg.channels = j.at("channels").get<int>();
        cfg.model_dim = j.at("model_dim").get<int>();
        cfg.enc_layers = j.at("enc_layers").get<int>();
        cfg.dec_layers = j.at("dec_layers").get<int>();
        cfg.heads = j.at("heads").get<int>();
        cfg.ffn_dim = j.at("ffn_dim").get<int>();
        cfg.vocab_size = j.at("vocab_size").get<int>();
        cfg.max_len = j.at("max_len").get<int>();
        cfg.pe_base = j.at("pe_base").get<double>();
        cfg.dropout_rate = j.at("dropout_rate").get<double>();
        cfg.pre_norm_encoder = j.at("pre_norm_encoder").get<bool>();
        return cfg;
    }

    // D=64, 2+2 layers, 4 heads, 64x64 images, patch 16.
    static ModelConfig tiny_preset() {
        ModelConfig cfg;
        cfg.image_size = 64;
        cfg.patch_size = 16;
        cfg.model_dim = 64;
        cfg.enc_layers = 2;
        cfg.dec_layers = 2;
        cfg.heads = 4;
        cfg.ffn_dim = 256;
        return cfg;
    }

    // 384px images, patch 16, D=512, 12+12 layers. 512 is not divisible by
    // 12, so 8 heads (the classic D/H = 64 split) are used.
    static ModelConfig paper_preset() {
        ModelConfig cfg;
        cfg.image_size = 384;
        cfg.patch_size = 16;
        cfg.model_dim = 512;
        cfg.enc_layers = 12;
        cfg.dec_layers = 12;
        cfg.heads = 8;
        cfg.ffn_dim = 2048;
        return cfg;
    }
};

// Feed-forward block weights (two layers with a GELU in between).
template <typename F>
struct FfnWeights {
    Tensor<F> w1, b1, w2, b2;
};

template <typename F>
struct LayerNormWeights {
    Tensor<F> gain, bias;
};

template <typename F>
struct EncoderLayerWeights {
    LayerNormWeights<F> ln1;
    ops::MhaWeights<F> attn;
    LayerNormWeights<F> ln2;
    FfnWeights<F> ffn;
};

template <typename F>
struct DecoderLayerWeights {
    ops::MhaWeights<F> self_attn;
    LayerNormWeights<F> ln1;
    ops::MhaWeights<F> cross_attn;
    LayerNormWeights<F> ln2;
    FfnWeights<F> ffn;
    LayerNormWeights<F> ln3;
};

// Named table of parameter tensors plus structured views into it. The views
// share storage with the table, so optimizer updates through the table are
// visible to the forward passes and vice versa.
template <typename F>
struct ModelWeights {
    ModelConfig cfg;
    std::vector<std::pair<std::string, Tensor<F>>> table;  // insertion order is the checkpoint order
    std::unordered_map<std::string, std::size_t> index;

    Tensor<F> patch_proj;  // [P*P*C x D]
    Tensor<F> cls_embed;   // [1 x D]
    Tensor<F> pos_embed;   // [(N+1) x D]
    std::vector<EncoderLayerWeights<F>> enc;
    LayerNormWeights<F> enc_final_ln;
    Tensor<F> tok_embed;  // [V x D]
    std::vector<DecoderLayerWeights<F>> dec;
    Tensor<F> out_proj;  // [D x V]
    Tensor<F> out_bias;  // [V]

    Tensor<F>& param(const std::string& name) {
        auto it = index.find(name);
        if (it == index.end()) throw InvariantError("unknown parameter " + name);
        return table[it->second].second;
    }

    void zero_grads() {
        for (auto& [name, t] : table) t.zero_grad();
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& [name, t] : table) n += t.numel();
        return n;
    }

    // Builds all parameters in a fixed order with the standard init:
    // truncated normal (std 0.02) for projections and embeddings, zeros for
    // biases, ones for layer-norm gains.
    static ModelWeights init(const ModelConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        ModelWeights w;
        w.cfg = cfg;
        Rng rng(seed);
        const int d = cfg.model_dim;

        w.patch_proj = w.add_normal(rng, "enc.patch_proj.w", {cfg.patch_dim(), d});
        w.cls_embed = w.add_normal(rng, "enc.cls", {1, d});
        w.pos_embed = w.add_normal(rng, "enc.pos", {cfg.memory_rows(), d});
        for (int l = 0; l < cfg.enc_layers; ++l) {
            const std::string p = "enc.l" + std::to_string(l) + ".";
            EncoderLayerWeights<F> layer;
            layer.ln1 = w.add_layer_norm(p + "ln1");
            layer.attn = w.add_mha(rng, p + "attn", cfg);
            layer.ln2 = w.add_layer_norm(p + "ln2");
            layer.ffn = w.add_ffn(rng, p + "ffn", cfg);
            w.enc.push_back(layer);
        }
        w.enc_final_ln = w.add_layer_norm("enc.ln_f");

        w.tok_embed = w.add_normal(rng, "dec.embed", {cfg.vocab_size, d});
        for (int l = 0; l < cfg.dec_layers; ++l) {
            const std::string p = "dec.l" + std::to_string(l) + ".";
            DecoderLayerWeights<F> layer;
            layer.self_attn = w.add_mha(rng, p + "self", cfg);
            layer.ln1 = w.add_layer_norm(p + "ln1");
            layer.cross_attn = w.add_mha(rng, p + "cross", cfg);
            layer.ln2 = w.add_layer_norm(p + "ln2");
            layer.ffn = w.add_ffn(rng, p + "ffn", cfg);
            layer.ln3 = w.add_layer_norm(p + "ln3");
            w.dec.push_back(layer);
        }
        w.out_proj = w.add_normal(rng, "dec.out.w", {d, cfg.vocab_size});
        w.out_bias = w.add_zeros("dec.out.b", {cfg.vocab_size});
        return w;
    }

   private:
    Tensor<F> add_param(const std::string& name, Shape shape) {
        if (index.count(name)) throw InvariantError("duplicate parameter name " + name);
        Tensor<F> t(std::move(shape), true);
        index[name] = table.size();
        table.emplace_back(name, t);
        return t;
    }

    Tensor<F> add_normal(Rng& rng, const std::string& name, Shape shape) {
        Tensor<F> t = add_param(name, std::move(shape));
        for (F& v : t.data()) v = static_cast<F>(rng.truncated_normal(0.02));
        return t;
    }

    Tensor<F> add_zeros(const std::string& name, Shape shape) { return add_param(name, std::move(shape)); }

    Tensor<F> add_ones(const std::string& name, Shape shape) {
        Tensor<F> t = add_param(name, std::move(shape));
        for (F& v : t.data()) v = F(1);
        return t;
    }

    LayerNormWeights<F> add_layer_norm(const std::string& prefix) {
        LayerNormWeights<F> ln;
        ln.gain = add_ones(prefix + ".g", {cfg.model_dim});
        ln.bias = add_zeros(prefix + ".b", {cfg.model_dim});
        return ln;
    }

    ops::MhaWeights<F> add_mha(Rng& rng, const std::string& prefix, const ModelConfig& c) {
        ops::MhaWeights<F> m;
        for (int h = 0; h < c.heads; ++h) {
            const std::string hp = prefix + ".h" + std::to_string(h) + ".";
            m.wq.push_back(add_normal(rng, hp + "wq", {c.model_dim, c.head_dim()}));
            m.wk.push_back(add_normal(rng, hp + "wk", {c.model_dim, c.head_dim()}));
            m.wv.push_back(add_normal(rng, hp + "wv", {c.model_dim, c.head_dim()}));
        }
        m.wo = add_normal(rng, prefix + ".wo", {c.model_dim, c.model_dim});
        return m;
    }

    FfnWeights<F> add_ffn(Rng& rng, const std::string& prefix, const ModelConfig& c) {
        FfnWeights<F> f;
        f.w1 = add_normal(rng, prefix + ".w1", {c.model_dim, c.ffn_dim});
        f.b1 = add_zeros(prefix + ".b1", {c.ffn_dim});
        f.w2 = add_normal(rng, prefix + ".w2", {c.ffn_dim, c.model_dim});
        f.b2 = add_zeros(prefix + ".b2", {c.model_dim});
        return f;
    }
};

}  // namespace img2inchi
