#include <doctest.h>

#include <cmath>

#include "test_gradcheck.hpp"

using namespace img2inchi;

TEST_CASE("analytic gradients match finite differences at 64-bit precision") {
    for (std::uint64_t seed : {1001ULL, 1002ULL}) {
        auto cfg = test_models::tiny_cfg(8, 4, 8, 1, 1, 2, 16, 7, 16);
        const double worst = test_gradcheck::gradcheck<double>(cfg, seed, 1e-4, 1e-2);
        CAPTURE(seed);
        CHECK(worst < 1e-5);
    }
}

TEST_CASE("analytic gradients match finite differences at 32-bit precision") {
    auto cfg = test_models::tiny_cfg(8, 4, 8, 1, 1, 2, 16, 7, 16);
    const double worst = test_gradcheck::gradcheck<float>(cfg, 1003, 1e-3, 0.5);
    CHECK(worst < 1e-2);
}

TEST_CASE("gradients flow into every parameter of a one-layer model") {
    auto cfg = test_models::tiny_cfg(8, 4, 8, 1, 1, 2, 16, 7, 16);
    Model<float> model = test_models::tiny_model<float>(cfg, 1004);
    Tensor32 img = test_models::random_image(cfg, 1005);
    model.weights.zero_grads();
    Tape<float> tape;
    test_gradcheck::full_model_loss<float>(model, img, {Vocab::kSos, 3, 4}, {3, 4, Vocab::kEos}, &tape);
    for (auto& [name, t] : model.weights.table) {
        double norm = 0;
        for (float g : t.grad()) norm += std::abs(g);
        CAPTURE(name);
        CHECK(norm > 0.0);
    }
}
