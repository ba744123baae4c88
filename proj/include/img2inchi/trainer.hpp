#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "img2inchi/decoder.hpp"
#include "img2inchi/encoder.hpp"
#include "img2inchi/model.hpp"
#include "img2inchi/ops.hpp"
#include "img2inchi/rng.hpp"
#include "img2inchi/tokenizer.hpp"

namespace img2inchi {

struct TrainConfig {
    int epochs = 10;
    double lr = 3e-5;
    double decay = 0.5;  // multiplies the rate entering each of the last two epochs; 1.0 disables
    int batch_size = 64;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double clip_norm = 1.0;  // global gradient norm clip; 0 disables
    std::uint64_t seed = 0;
    double early_stop_loss = 0.0;  // stop once an epoch's mean loss drops below; 0 disables

    void validate() const {
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (decay != 1.0 && epochs < 2) throw ConfigError("epochs must be >= 2 when lr decay is enabled");
        if (batch_size < 1) throw ConfigError("batch size must be >= 1");
        if (lr <= 0.0) throw ConfigError("learning rate must be positive");
    }
};

// lr0 through epoch E-2, then lr0*decay at E-1 and lr0*decay^2 at E.
inline double lr_at_epoch(const TrainConfig& cfg, int epoch) {
    if (epoch < 1 || epoch > cfg.epochs)
        throw ContractError("lr_at_epoch: epoch " + std::to_string(epoch) + " outside 1.." +
                            std::to_string(cfg.epochs));
    if (epoch == cfg.epochs) return cfg.lr * cfg.decay * cfg.decay;
    if (epoch == cfg.epochs - 1) return cfg.lr * cfg.decay;
    return cfg.lr;
}

// Standard Adam with bias correction, state kept per parameter tensor.
template <typename F>
struct AdamState {
    std::vector<std::vector<F>> m, v;
    long step = 0;

    template <typename Params>
    static AdamState for_params(const Params& params) {
        AdamState s;
        for (const Tensor<F>& t : params) {
            s.m.emplace_back(t.numel(), F(0));
            s.v.emplace_back(t.numel(), F(0));
        }
        return s;
    }
};

// One Adam update over a parameter list using the gradients stored in the
// tensors themselves.
template <typename F>
void adam_step(std::vector<Tensor<F>>& params, AdamState<F>& state, const TrainConfig& cfg, double lr) {
    if (state.m.size() != params.size()) throw InvariantError("adam state does not match parameter list");
    state.step += 1;
    const double b1 = cfg.beta1, b2 = cfg.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor<F>& t = params[p];
        auto& m = state.m[p];
        auto& v = state.v[p];
        for (std::size_t i = 0; i < t.numel(); ++i) {
            const double g = static_cast<double>(t.grad()[i]);
            m[i] = static_cast<F>(b1 * m[i] + (1.0 - b1) * g);
            v[i] = static_cast<F>(b2 * v[i] + (1.0 - b2) * g * g);
            const double mhat = static_cast<double>(m[i]) / bc1;
            const double vhat = static_cast<double>(v[i]) / bc2;
            t.data()[i] = static_cast<F>(t.data()[i] - lr * mhat / (std::sqrt(vhat) + cfg.adam_eps));
        }
    }
}

// Scales all gradients so their global L2 norm is at most clip (no-op when
// already below). Returns the pre-clip norm.
template <typename F>
double clip_gradients(std::vector<Tensor<F>>& params, double clip) {
    double sq = 0.0;
    for (const Tensor<F>& t : params)
        for (F g : t.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    const double norm = std::sqrt(sq);
    if (clip > 0.0 && norm > clip) {
        const F s = static_cast<F>(clip / norm);
        for (Tensor<F>& t : params)
            for (F& g : t.grad()) g *= s;
    }
    return norm;
}

// A training sample: the image tensor plus its encoded label [SOS ... EOS].
template <typename F>
struct TrainSample {
    Tensor<F> image;
    std::vector<int> encoded;
};

template <typename F>
struct TrainLog {
    std::vector<std::string> lines;             // "epoch <e> step <s> loss <float>"
    std::vector<double> epoch_mean_loss;
    int steps = 0;
};

namespace detail {

// Teacher-forced loss for one sample at a forced sequence length: decoder
// input [SOS, t1..tk] padded to in_len, target [t1..tk, EOS] likewise.
template <typename F>
struct PreparedSample {
    std::vector<int> input, target;
    int live_positions = 0;
};

template <typename F>
PreparedSample<F> prepare(const std::vector<int>& encoded, int in_len) {
    PreparedSample<F> p;
    const int body = static_cast<int>(encoded.size()) - 1;  // drop trailing EOS for the input
    p.input.assign(encoded.begin(), encoded.end() - 1);
    p.target.assign(encoded.begin() + 1, encoded.end());
    p.live_positions = body;
    p.input.resize(static_cast<std::size_t>(in_len), Vocab::kPad);
    p.target.resize(static_cast<std::size_t>(in_len), Vocab::kPad);
    return p;
}

}  // namespace detail

// Teacher-forced training: per batch, forward + backward per sample with the
// gradient of (sum of non-PAD token losses) / (total non-PAD tokens in the
// batch), then clip and Adam. Samples are shuffled each epoch under the run
// seed. The callback runs at the end of every epoch (checkpointing,
// mid-train evaluation); returning true stops the run early.
template <typename F>
TrainLog<F> train(Model<F>& model, std::vector<TrainSample<F>>& samples, const TrainConfig& cfg,
                  const std::function<bool(int /*epoch*/)>& on_epoch_end = nullptr) {
    cfg.validate();
    if (samples.empty()) throw ContractError("train: no samples");
    ModelWeights<F>& w = model.weights;
    for (const auto& s : samples)
        if (static_cast<int>(s.encoded.size()) - 1 > w.cfg.max_len)
            throw ContractError("train: sample sequence exceeds max_len " + std::to_string(w.cfg.max_len));

    std::vector<Tensor<F>> params;
    params.reserve(w.table.size());
    for (auto& [name, t] : w.table) params.push_back(t);
    AdamState<F> state = AdamState<F>::for_params(params);
    Rng rng(cfg.seed ^ 0x5DEECE66DULL);  // shuffling + dropout stream
    TrainLog<F> log;
    char line[96];

    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const double lr = lr_at_epoch(cfg, epoch);
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.below(i)]);
        double epoch_loss_sum = 0.0;
        long epoch_tokens = 0;

        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            int in_len = 0, total_tokens = 0;
            for (std::size_t b = start; b < end; ++b) {
                const int body = static_cast<int>(samples[order[b]].encoded.size()) - 1;
                in_len = std::max(in_len, body);
                total_tokens += body;
            }
            w.zero_grads();
            double batch_sum = 0.0;
            for (std::size_t b = start; b < end; ++b) {
                TrainSample<F>& s = samples[order[b]];
                auto prep = detail::prepare<F>(s.encoded, in_len);
                Tape<F> tape;
                EncoderMemory<F> mem = encode_image(s.image, w, nullptr, &tape, true, &rng);
                Tensor<F> logits = decode_forward(prep.input, mem, w, model.pe, nullptr, &tape, true, &rng);
                auto loss_parts = ops::xent_sum(logits, prep.target, Vocab::kPad, &tape);
                batch_sum += static_cast<double>(loss_parts.first.item());
                tape.backward(loss_parts.first, F(1) / F(total_tokens));
            }
            clip_gradients(params, cfg.clip_norm);
            adam_step(params, state, cfg, lr);

            const double batch_loss = batch_sum / total_tokens;
            epoch_loss_sum += batch_sum;
            epoch_tokens += total_tokens;
            ++log.steps;
            std::snprintf(line, sizeof(line), "epoch %d step %d loss %.6f", epoch, log.steps, batch_loss);
            log.lines.emplace_back(line);
        }
        log.epoch_mean_loss.push_back(epoch_loss_sum / static_cast<double>(epoch_tokens));
        if (on_epoch_end && on_epoch_end(epoch)) break;
        if (cfg.early_stop_loss > 0.0 && log.epoch_mean_loss.back() < cfg.early_stop_loss) break;
    }
    return log;
}

}  // namespace img2inchi
