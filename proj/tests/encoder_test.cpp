#include <doctest.h>

#include <cmath>

#include "img2inchi/encoder.hpp"
#include "test_models.hpp"
#include "test_oracles.hpp"

using namespace img2inchi;

TEST_CASE("patchify yields 576 patches at 384/16 and 196 at 224/16") {
    Tensor32 big({384, 384, 1});
    CHECK(patchify(big, 16).shape() == Shape{576, 256});
    Tensor32 mid({224, 224, 1});
    CHECK(patchify(mid, 16).shape() == Shape{196, 256});
}

TEST_CASE("patchify of a single-patch image is the flattened image") {
    Rng rng(3);
    Tensor32 img({16, 16, 1});
    oracles::fill_uniform(img, rng, 0.0, 1.0);
    Tensor32 p = patchify(img, 16);
    REQUIRE(p.shape() == Shape{1, 256});
    for (std::size_t i = 0; i < img.numel(); ++i) CHECK(p.data()[i] == img.data()[i]);
}

TEST_CASE("patchify rejects indivisible sizes naming the geometry") {
    Tensor32 img({100, 100, 1});
    CHECK_THROWS_WITH_AS(patchify(img, 16), doctest::Contains("100"), ShapeError);
}

TEST_CASE("patchify flattens rows, then columns, then channels") {
    Tensor32 img({4, 4, 2});
    for (std::size_t i = 0; i < img.numel(); ++i) img.data()[i] = static_cast<float>(i);
    Tensor32 p = patchify(img, 2);
    REQUIRE(p.shape() == Shape{4, 8});
    // Patch (0,0) covers pixels (0,0),(0,1),(1,0),(1,1); channel-minor order.
    const float expect[] = {0, 1, 2, 3, 8, 9, 10, 11};
    for (int j = 0; j < 8; ++j) CHECK(p.at(0, j) == expect[j]);
    // Patch row-major order: second patch is pixels (0,2),(0,3),(1,2),(1,3).
    CHECK(p.at(1, 0) == 4.0f);
}

TEST_CASE("embed_patches with zero patches and class embedding equals the position table") {
    auto cfg = test_models::tiny_cfg();
    auto w = ModelWeights<float>::init(cfg, 5);
    Tensor32 patches({cfg.num_patches(), cfg.patch_dim()});
    for (float& v : w.cls_embed.data()) v = 0.0f;
    Tensor32 x = embed_patches(patches, w);
    REQUIRE(x.shape() == Shape{cfg.memory_rows(), cfg.model_dim});
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(x.data()[i] == w.pos_embed.data()[i]);
}

TEST_CASE("embed_patches output is (196+1) x 512 for the 224/16/512 config") {
    auto cfg = test_models::tiny_cfg(224, 16, 512, 0, 0, 8, 64, 9);
    auto w = ModelWeights<float>::init(cfg, 1);
    Tensor32 patches({196, 256});
    CHECK(embed_patches(patches, w).shape() == Shape{197, 512});
}

TEST_CASE("embed_patches rejects a patch count the position table was not built for") {
    auto cfg = test_models::tiny_cfg();
    auto w = ModelWeights<float>::init(cfg, 5);
    Tensor32 patches({cfg.num_patches() + 1, cfg.patch_dim()});
    CHECK_THROWS_AS(embed_patches(patches, w), ConfigError);
}

TEST_CASE("before attention, perturbing patch k moves only row k+1") {
    auto cfg = test_models::tiny_cfg();
    auto w = ModelWeights<float>::init(cfg, 9);
    Rng rng(10);
    Tensor32 patches({cfg.num_patches(), cfg.patch_dim()});
    oracles::fill_uniform(patches, rng, 0.0, 1.0);
    Tensor32 base = embed_patches(patches, w);
    Tensor32 poked = patches.clone();
    poked.at(2, 5) += 0.5f;
    Tensor32 moved = embed_patches(poked, w);
    for (int r = 0; r < cfg.memory_rows(); ++r) {
        bool differs = false;
        for (int j = 0; j < cfg.model_dim; ++j) differs = differs || base.at(r, j) != moved.at(r, j);
        CHECK(differs == (r == 3));
    }
}

TEST_CASE("encode_image with zero layers is the embedding plus final layer norm") {
    auto cfg = test_models::tiny_cfg(32, 16, 16, /*enc=*/0, /*dec=*/0);
    auto w = ModelWeights<float>::init(cfg, 21);
    Tensor32 img = test_models::random_image(cfg, 22);
    Tensor32 mem = encode_image(img, w);
    Tensor32 expect = ops::layer_norm(embed_patches(patchify(img, cfg.patch_size), w), w.enc_final_ln.gain,
                                      w.enc_final_ln.bias, 1e-5f);
    REQUIRE(mem.shape() == expect.shape());
    for (std::size_t i = 0; i < mem.numel(); ++i) CHECK(mem.data()[i] == expect.data()[i]);
}

TEST_CASE("encode_image emits (N+1) x D memories across configs") {
    for (auto [image, patch] : {std::pair{32, 16}, std::pair{48, 16}, std::pair{64, 16}}) {
        auto cfg = test_models::tiny_cfg(image, patch, 16, 1, 0, 2, 32);
        auto w = ModelWeights<float>::init(cfg, 2);
        Tensor32 mem = encode_image(test_models::random_image(cfg, 3), w);
        CHECK(mem.shape() == Shape{cfg.num_patches() + 1, 16});
    }
}

TEST_CASE("with at least one layer a single perturbed patch reaches every memory row") {
    auto cfg = test_models::tiny_cfg(32, 16, 16, 1, 0);
    auto w = ModelWeights<float>::init(cfg, 31);
    Tensor32 img = test_models::random_image(cfg, 32);
    Tensor32 base = encode_image(img, w);
    Tensor32 poked = img.clone();
    poked.at(3, 3) += 0.25f;  // inside patch 0
    Tensor32 moved = encode_image(poked, w);
    for (int r = 0; r < cfg.memory_rows(); ++r) {
        bool differs = false;
        for (int j = 0; j < cfg.model_dim; ++j) differs = differs || base.at(r, j) != moved.at(r, j);
        CHECK(differs);
    }
}

TEST_CASE("encoder counter: one call, (N+1)^2 pairs per layer") {
    auto cfg = test_models::tiny_cfg(32, 16, 16, 2, 0);
    auto w = ModelWeights<float>::init(cfg, 41);
    OpCounter counter;
    encode_image(test_models::random_image(cfg, 42), w, &counter);
    CHECK(counter.encoder_calls == 1);
    const std::uint64_t rows = static_cast<std::uint64_t>(cfg.memory_rows());
    CHECK(counter.encoder_qk_pairs == 2 * rows * rows);
    CHECK(counter.decoder_qk_pairs == 0);
}

TEST_CASE("encode_image is deterministic in inference mode") {
    auto cfg = test_models::tiny_cfg(32, 16, 16, 2, 0);
    cfg.dropout_rate = 0.1;  // must not fire outside training
    auto w = ModelWeights<float>::init(cfg, 51);
    Tensor32 img = test_models::random_image(cfg, 52);
    Tensor32 a = encode_image(img, w);
    Tensor32 b = encode_image(img, w);
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == b.data()[i]);
}

TEST_CASE("the post-norm encoder variant runs and differs from pre-norm") {
    auto cfg = test_models::tiny_cfg(32, 16, 16, 2, 0);
    auto pre = ModelWeights<float>::init(cfg, 71);
    cfg.pre_norm_encoder = false;
    auto post = ModelWeights<float>::init(cfg, 71);
    Tensor32 img = test_models::random_image(cfg, 72);
    Tensor32 mem_pre = encode_image(img, pre);
    Tensor32 mem_post = encode_image(img, post);
    REQUIRE(mem_pre.shape() == mem_post.shape());
    bool differs = false;
    for (std::size_t i = 0; i < mem_pre.numel(); ++i)
        differs = differs || mem_pre.data()[i] != mem_post.data()[i];
    CHECK(differs);
}

TEST_CASE("swapping two patches and their position rows permutes the memory rows") {
    auto cfg = test_models::tiny_cfg(32, 16, 16, 2, 0);
    auto w = ModelWeights<float>::init(cfg, 61);
    Tensor32 img = test_models::random_image(cfg, 62);

    // Reference forward from patches, mirroring encode_image's layer stack.
    Rng unused(0);
    auto forward_from_patches = [&](const Tensor32& patches, const Tensor32& pos) {
        Tensor32 proj = ops::matmul(patches, w.patch_proj);
        Tensor32 x = ops::concat_rows<float>({w.cls_embed, proj});
        x = ops::add(x, pos);
        for (const auto& layer : w.enc) {
            Tensor32 n1 = ops::layer_norm(x, layer.ln1.gain, layer.ln1.bias, 1e-5f);
            x = ops::add(x, ops::multi_head_attention(n1, n1, layer.attn, nullptr, nullptr));
            Tensor32 n2 = ops::layer_norm(x, layer.ln2.gain, layer.ln2.bias, 1e-5f);
            x = ops::add(x, ffn_forward<float>(n2, layer.ffn, 0.0f, unused, false, nullptr));
        }
        return ops::layer_norm(x, w.enc_final_ln.gain, w.enc_final_ln.bias, 1e-5f);
    };

    Tensor32 patches = patchify(img, cfg.patch_size);
    Tensor32 base = forward_from_patches(patches, w.pos_embed);

    Tensor32 swapped = patches.clone();
    Tensor32 pos = w.pos_embed.clone();
    const int a = 0, b = 2;
    for (int j = 0; j < cfg.patch_dim(); ++j) std::swap(swapped.at(a, j), swapped.at(b, j));
    for (int j = 0; j < cfg.model_dim; ++j) std::swap(pos.at(a + 1, j), pos.at(b + 1, j));
    Tensor32 permuted = forward_from_patches(swapped, pos);

    auto row_close = [&](const Tensor32& x, int rx, const Tensor32& y, int ry) {
        for (int j = 0; j < cfg.model_dim; ++j)
            if (std::abs(x.at(rx, j) - y.at(ry, j)) > 1e-4f) return false;
        return true;
    };
    CHECK(row_close(base, 0, permuted, 0));          // class row unchanged up to fp noise
    CHECK(row_close(base, a + 1, permuted, b + 1));  // swapped rows follow the permutation
    CHECK(row_close(base, b + 1, permuted, a + 1));
    CHECK(row_close(base, 4, permuted, 4));
}
