#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "img2inchi/checkpoint.hpp"
#include "img2inchi/dataset.hpp"
#include "img2inchi/trainer.hpp"
#include "test_models.hpp"
#include "test_oracles.hpp"

using namespace img2inchi;

TEST_CASE("uniform logits over 275 classes cost ln 275") {
    Tensor32 logits({4, 275});
    std::vector<int> targets = {5, 17, 100, 274};
    Tensor32 loss = ops::xent_loss(logits, targets, Vocab::kPad);
    CHECK(loss.item() == doctest::Approx(std::log(275.0)).epsilon(1e-5));
    CHECK(loss.item() == doctest::Approx(5.6168).epsilon(1e-4));
}

TEST_CASE("a huge margin on the correct class drives the loss to zero") {
    Tensor32 logits({3, 6});
    std::vector<int> targets = {1, 4, 2};
    for (int r = 0; r < 3; ++r) logits.at(r, targets[static_cast<std::size_t>(r)]) = 1e6f;
    CHECK(ops::xent_loss(logits, targets, Vocab::kPad).item() == doctest::Approx(0.0).epsilon(1e-7));
}

TEST_CASE("cross-entropy matches the per-position hand computation") {
    Rng rng(121);
    Tensor32 logits({5, 7});
    oracles::fill_uniform(logits, rng, -2.0, 2.0);
    std::vector<int> targets = {6, 5, 3, 3, 1};
    double expect = 0;
    for (int r = 0; r < 5; ++r) {
        double denom = 0;
        for (int j = 0; j < 7; ++j) denom += std::exp(static_cast<double>(logits.at(r, j)));
        expect += -std::log(std::exp(static_cast<double>(logits.at(r, targets[static_cast<std::size_t>(r)]))) / denom);
    }
    expect /= 5;
    CHECK(ops::xent_loss(logits, targets, Vocab::kPad).item() == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("PAD positions contribute nothing and all-PAD is an error") {
    Rng rng(122);
    Tensor32 logits({4, 5});
    oracles::fill_uniform(logits, rng, -1.0, 1.0);
    std::vector<int> live = {3, 4, Vocab::kPad, Vocab::kPad};
    std::vector<int> live2 = {3, 4};
    Tensor32 trimmed({2, 5});
    for (int r = 0; r < 2; ++r)
        for (int j = 0; j < 5; ++j) trimmed.at(r, j) = logits.at(r, j);
    CHECK(ops::xent_loss(logits, live, Vocab::kPad).item() ==
          ops::xent_loss(trimmed, live2, Vocab::kPad).item());
    std::vector<int> all_pad = {Vocab::kPad, Vocab::kPad, Vocab::kPad, Vocab::kPad};
    CHECK_THROWS_AS(ops::xent_loss(logits, all_pad, Vocab::kPad), ContractError);
}

TEST_CASE("adam leaves parameters unchanged on a zero gradient") {
    std::vector<Tensor32> params{Tensor32({3}, {1.0f, -2.0f, 0.5f}, true)};
    auto state = AdamState<float>::for_params(params);
    TrainConfig cfg;
    adam_step(params, state, cfg, 0.1);
    CHECK(params[0].data() == std::vector<float>{1.0f, -2.0f, 0.5f});
}

TEST_CASE("first adam step with unit gradient moves by about -lr") {
    std::vector<Tensor32> params{Tensor32({1}, {0.0f}, true)};
    params[0].grad()[0] = 1.0f;
    auto state = AdamState<float>::for_params(params);
    TrainConfig cfg;
    adam_step(params, state, cfg, 0.01);
    CHECK(params[0].data()[0] == doctest::Approx(-0.01).epsilon(1e-6));
}

TEST_CASE("adam drives x^2 near zero in 200 steps") {
    std::vector<Tensor32> params{Tensor32({1}, {1.0f}, true)};
    auto state = AdamState<float>::for_params(params);
    TrainConfig cfg;
    for (int i = 0; i < 200; ++i) {
        params[0].grad()[0] = 2.0f * params[0].data()[0];  // d/dx x^2
        adam_step(params, state, cfg, 0.1);
    }
    CHECK(std::abs(params[0].data()[0]) < 0.05);
}

TEST_CASE("learning rate schedule halves entering each of the last two epochs") {
    TrainConfig cfg;
    cfg.epochs = 10;
    cfg.lr = 3e-5;
    CHECK(lr_at_epoch(cfg, 1) == doctest::Approx(3e-5));
    CHECK(lr_at_epoch(cfg, 8) == doctest::Approx(3e-5));
    CHECK(lr_at_epoch(cfg, 9) == doctest::Approx(1.5e-5));
    CHECK(lr_at_epoch(cfg, 10) == doctest::Approx(7.5e-6));
    CHECK_THROWS_AS(lr_at_epoch(cfg, 0), ContractError);
    CHECK_THROWS_AS(lr_at_epoch(cfg, 11), ContractError);
}

namespace {

SampleManifest fake_manifest(int n) {
    SampleManifest m;
    m.base_dir = ".";
    for (int i = 0; i < n; ++i) m.rows.push_back({"img_" + std::to_string(i) + ".pgm", "InChI=1S/CH4"});
    return m;
}

}  // namespace

TEST_CASE("dataset split sizes are 70/20/10 on n=100, disjoint and covering") {
    const SampleManifest m = fake_manifest(100);
    const DatasetSplit s = split_dataset(m, 5);
    CHECK(s.train.size() == 70);
    CHECK(s.validation.size() == 20);
    CHECK(s.test.size() == 10);
    std::set<std::string> seen;
    for (const auto* part : {&s.train, &s.validation, &s.test})
        for (const auto& row : part->rows) CHECK(seen.insert(row.path).second);
    CHECK(seen.size() == 100);
}

TEST_CASE("dataset split is deterministic under the seed") {
    const SampleManifest m = fake_manifest(37);
    const DatasetSplit a = split_dataset(m, 99);
    const DatasetSplit b = split_dataset(m, 99);
    for (std::size_t i = 0; i < a.train.size(); ++i) CHECK(a.train.rows[i].path == b.train.rows[i].path);
    const DatasetSplit c = split_dataset(m, 100);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.train.size(); ++i)
        any_diff = any_diff || a.train.rows[i].path != c.train.rows[i].path;
    CHECK(any_diff);
    CHECK_THROWS_AS(split_dataset(SampleManifest{}, 1), ContractError);
}

namespace {

std::vector<TrainSample<float>> synthetic_samples(const ModelConfig& cfg, int count, std::uint64_t seed) {
    std::vector<TrainSample<float>> samples;
    Rng rng(seed);
    for (int i = 0; i < count; ++i) {
        TrainSample<float> s;
        s.image = test_models::random_image(cfg, seed * 1000 + static_cast<std::uint64_t>(i));
        const int len = 4 + static_cast<int>(rng.below(5));
        s.encoded.push_back(Vocab::kSos);
        for (int t = 0; t < len; ++t) s.encoded.push_back(3 + static_cast<int>(rng.below(cfg.vocab_size - 3)));
        s.encoded.push_back(Vocab::kEos);
        samples.push_back(std::move(s));
    }
    return samples;
}

}  // namespace

TEST_CASE("a tiny model memorizes one sample in 200 steps") {
    auto cfg = test_models::tiny_cfg(32, 16, 32, 1, 1, 2, 64, 9);
    auto model = test_models::tiny_model(cfg, 501);
    auto samples = synthetic_samples(cfg, 1, 502);
    TrainConfig tcfg;
    tcfg.epochs = 200;
    tcfg.decay = 1.0;
    tcfg.lr = 1e-3;
    tcfg.batch_size = 1;
    tcfg.seed = 503;
    auto log = train(model, samples, tcfg);
    CHECK(log.epoch_mean_loss.back() < 0.1);
}

TEST_CASE("a fresh random init predicts near ln V on the first batch") {
    auto cfg = test_models::tiny_cfg(32, 16, 16, 1, 1, 2, 32, 23);
    auto model = test_models::tiny_model(cfg, 511);
    auto samples = synthetic_samples(cfg, 4, 512);
    TrainConfig tcfg;
    tcfg.epochs = 1;
    tcfg.decay = 1.0;
    tcfg.batch_size = 4;
    auto log = train(model, samples, tcfg);
    REQUIRE(log.lines.size() == 1);
    const double loss = std::stod(log.lines[0].substr(log.lines[0].rfind(' ')));
    CHECK(loss == doctest::Approx(std::log(23.0)).epsilon(0.15));
}

TEST_CASE("checkpoints round-trip bit-identically and train on identically") {
    auto cfg = test_models::tiny_cfg(32, 16, 16, 1, 1, 2, 32, 11);
    auto model = test_models::tiny_model(cfg, 521);
    auto samples = synthetic_samples(cfg, 2, 522);
    TrainConfig tcfg;
    tcfg.epochs = 3;
    tcfg.decay = 1.0;
    tcfg.lr = 1e-3;
    tcfg.seed = 523;

    const auto dir = std::filesystem::temp_directory_path();
    const std::string p1 = (dir / "i2i_ck_a.isck").string();
    const std::string p2 = (dir / "i2i_ck_b.isck").string();
    checkpoint::save(p1, model.weights);
    ModelWeights<float> loaded = checkpoint::load(p1);
    for (std::size_t i = 0; i < model.weights.table.size(); ++i) {
        CHECK(model.weights.table[i].first == loaded.table[i].first);
        CHECK(model.weights.table[i].second.data() == loaded.table[i].second.data());
    }
    checkpoint::save(p2, loaded);
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);

    Model<float> reloaded(std::move(loaded));
    auto log_a = train(model, samples, tcfg);
    auto log_b = train(reloaded, samples, tcfg);
    CHECK(log_a.lines == log_b.lines);
    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
}

TEST_CASE("checkpoint load rejects wrong magic and missing files") {
    const auto dir = std::filesystem::temp_directory_path();
    const std::string bad = (dir / "i2i_ck_bad.isck").string();
    {
        std::ofstream f(bad, std::ios::binary);
        f << "NOPE un checkpoint";
    }
    CHECK_THROWS_AS(checkpoint::load(bad), IoError);
    CHECK_THROWS_AS(checkpoint::load((dir / "i2i_missing.isck").string()), IoError);
    std::filesystem::remove(bad);
}

TEST_CASE("teacher-forced loss is invariant to extra PAD") {
    auto cfg = test_models::tiny_cfg();
    auto model = test_models::tiny_model(cfg, 531);
    Tensor32 mem = encode_image(test_models::random_image(cfg, 532), model.weights);
    std::vector<int> input = {Vocab::kSos, 4, 5, 6};
    std::vector<int> target = {4, 5, 6, Vocab::kEos};
    const float base = ops::xent_loss(decode_forward(input, mem, model.weights, model.pe), target,
                                      Vocab::kPad)
                           .item();
    for (int extra = 1; extra <= 5; ++extra) {
        std::vector<int> in_p = input, tg_p = target;
        in_p.resize(input.size() + static_cast<std::size_t>(extra), Vocab::kPad);
        tg_p.resize(target.size() + static_cast<std::size_t>(extra), Vocab::kPad);
        const float padded = ops::xent_loss(decode_forward(in_p, mem, model.weights, model.pe), tg_p,
                                            Vocab::kPad)
                                 .item();
        CHECK(padded == base);
    }
}

TEST_CASE("a single small-lr step decreases the loss in at least 9 of 10 trials") {
    int decreased = 0;
    for (std::uint64_t trial = 0; trial < 10; ++trial) {
        auto cfg = test_models::tiny_cfg(32, 16, 16, 1, 1, 2, 32, 9);
        auto model = test_models::tiny_model(cfg, 600 + trial);
        auto samples = synthetic_samples(cfg, 2, 700 + trial);
        TrainConfig tcfg;
        tcfg.epochs = 2;  // two passes over the same fixed batch
        tcfg.decay = 1.0;
        tcfg.lr = 1e-4;
        tcfg.batch_size = 2;
        tcfg.seed = 800 + trial;
        auto log = train(model, samples, tcfg);
        REQUIRE(log.epoch_mean_loss.size() == 2);
        if (log.epoch_mean_loss[1] < log.epoch_mean_loss[0]) ++decreased;
    }
    CHECK(decreased >= 9);
}

TEST_CASE("identical seeds give identical loss logs") {
    auto cfg = test_models::tiny_cfg(32, 16, 16, 1, 1, 2, 32, 9);
    cfg.dropout_rate = 0.1;  // exercise the stochastic path too
    auto samples = synthetic_samples(cfg, 3, 901);
    TrainConfig tcfg;
    tcfg.epochs = 3;
    tcfg.decay = 1.0;
    tcfg.lr = 1e-3;
    tcfg.batch_size = 2;
    tcfg.seed = 902;
    auto model_a = test_models::tiny_model(cfg, 903);
    auto model_b = test_models::tiny_model(cfg, 903);
    auto log_a = train(model_a, samples, tcfg);
    auto log_b = train(model_b, samples, tcfg);
    CHECK(log_a.lines == log_b.lines);
}
