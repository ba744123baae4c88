#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "img2inchi/counters.hpp"
#include "img2inchi/dataset.hpp"
#include "img2inchi/inference.hpp"

namespace img2inchi {

// Minimal number of single-character insertions, deletions and substitutions
// turning a into b; two-row dynamic program.
inline int levenshtein(const std::string& a, const std::string& b) {
    const std::size_t n = b.size();
    std::vector<int> prev(n + 1), cur(n + 1);
    for (std::size_t j = 0; j <= n; ++j) prev[j] = static_cast<int>(j);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = static_cast<int>(i);
        for (std::size_t j = 1; j <= n; ++j) {
            const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[n];
}

struct EvalSample {
    std::string label;
    std::string prediction;
    int distance = 0;
};

struct EvalReport {
    std::vector<EvalSample> samples;
    double mean_distance = 0.0;
    double exact_match_rate = 0.0;
    OpCounter counter;

    std::size_t count() const { return samples.size(); }

    void finalize() {
        long sum = 0;
        long exact = 0;
        for (const auto& s : samples) {
            sum += s.distance;
            if (s.distance == 0) ++exact;
        }
        mean_distance = samples.empty() ? 0.0 : static_cast<double>(sum) / samples.size();
        exact_match_rate = samples.empty() ? 0.0 : static_cast<double>(exact) / samples.size();
    }

    void write_tsv(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot write report " + path);
        f << "label\tprediction\tdistance\n";
        for (const auto& s : samples) f << s.label << "\t" << s.prediction << "\t" << s.distance << "\n";
    }

    std::string human_text() const {
        char buf[160];
        std::snprintf(buf, sizeof(buf),
                      "samples %zu  mean_levenshtein %.4f  exact_match %.4f", samples.size(),
                      mean_distance, exact_match_rate);
        return buf;
    }
};

// Evaluation against an arbitrary decoder callback (label in, prediction
// out); the stub point for tests and the shared core of evaluate().
inline EvalReport evaluate_with(const std::function<std::string(const std::string& image_path)>& predict,
                                const SampleManifest& manifest) {
    EvalReport report;
    for (std::size_t i = 0; i < manifest.size(); ++i) {
        EvalSample s;
        s.label = manifest.rows[i].label;
        s.prediction = predict(manifest.resolved_path(i));
        s.distance = levenshtein(s.label, s.prediction);
        report.samples.push_back(std::move(s));
    }
    report.finalize();
    return report;
}

// Decodes every manifest sample with the chosen engine and aggregates
// character-level Levenshtein distances against the labels.
template <typename F>
EvalReport evaluate(const Model<F>& model, const Vocab& vocab, const SampleManifest& manifest, Engine engine) {
    OpCounter total;
    EvalReport report = evaluate_with(
        [&](const std::string& image_path) {
            const Tensor<F> img = image_to_tensor<F>(read_image(image_path));
            DecodeResult<F> r = greedy_decode(img, model, engine);
            total += r.counter;
            return vocab.decode(TokenSequence{r.ids});
        },
        manifest);
    report.counter = total;
    return report;
}

// ---- decode cost benchmark ----

struct BenchRow {
    int steps = 0;               // N
    int memory_rows = 0;         // M
    std::uint64_t naive_qk = 0;  // measured decoder qk pairs
    std::uint64_t cached_qk = 0;
    std::uint64_t predicted_naive = 0;
    std::uint64_t predicted_cached = 0;
    std::uint64_t naive_encoder_calls = 0;
    std::uint64_t cached_encoder_calls = 0;
    double naive_ms = 0.0;
    double encoder_once_ms = 0.0;  // middle variant, informational
    double cached_ms = 0.0;
};

// Reuses the first M rows (cycling when M exceeds the natural count) so the
// benchmark can sweep memory sizes that no square image produces.
template <typename F>
EncoderMemory<F> adapt_memory_rows(const EncoderMemory<F>& mem, int m) {
    const int d = mem.dim(1);
    Tensor<F> out({m, d});
    for (int r = 0; r < m; ++r)
        for (int j = 0; j < d; ++j) out.at(r, j) = mem.at(r % mem.dim(0), j);
    return out;
}

namespace detail {

template <typename F>
std::vector<int> bench_decode_steps(const std::function<EncoderMemory<F>(OpCounter&)>& memory_for_step,
                                    const Model<F>& model, int steps, bool cached, OpCounter& counter) {
    std::vector<int> emitted;
    if (cached) {
        EncoderMemory<F> mem = memory_for_step(counter);
        DecodeCache<F> cache(model.cfg().dec_layers, model.cfg().model_dim);
        int next = Vocab::kSos;
        for (int t = 0; t < steps; ++t) {
            Tensor<F> logits = step_cached(cache, next, mem, model, counter);
            next = pick_token(logits, true);
            emitted.push_back(next);
        }
    } else {
        std::vector<int> prefix{Vocab::kSos};
        for (int t = 0; t < steps; ++t) {
            EncoderMemory<F> mem = memory_for_step(counter);
            Tensor<F> logits = decode_forward(prefix, mem, model.weights, model.pe, &counter);
            const int id = pick_token(logits, true);
            emitted.push_back(id);
            prefix.push_back(id);
        }
    }
    return emitted;
}

}  // namespace detail

// Runs the naive and cached engines for exactly N steps each (EOS
// suppressed) against an M-row memory and cross-checks the measured counter
// values against the closed forms; a count mismatch or any disagreement in
// the emitted tokens is a hard failure. Wall times are informational.
template <typename F>
std::vector<BenchRow> bench_decode(const Model<F>& model, const Tensor<F>& img,
                                   const std::vector<int>& n_targets, int memory_rows) {
    using Clock = std::chrono::steady_clock;
    std::vector<BenchRow> rows;
    const int layers = model.cfg().dec_layers;
    for (int n : n_targets) {
        if (n < 1) throw ContractError("bench_decode: step counts must be >= 1");
        if (n + 1 > model.cfg().max_len)
            throw ContractError("bench_decode: " + std::to_string(n) + " steps exceed max_len");
        BenchRow row;
        row.steps = n;
        row.memory_rows = memory_rows;

        auto naive_memory = [&](OpCounter& c) {
            return adapt_memory_rows(encode_image(img, model.weights, &c), memory_rows);
        };
        OpCounter naive_counter;
        auto t0 = Clock::now();
        const auto naive_tokens = detail::bench_decode_steps<F>(naive_memory, model, n, false, naive_counter);
        row.naive_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();

        EncoderMemory<F> once;
        bool have_once = false;
        auto once_memory = [&](OpCounter& c) {
            if (!have_once) {
                once = adapt_memory_rows(encode_image(img, model.weights, &c), memory_rows);
                have_once = true;
            }
            return once;
        };
        OpCounter middle_counter;
        t0 = Clock::now();
        const auto middle_tokens = detail::bench_decode_steps<F>(once_memory, model, n, false, middle_counter);
        row.encoder_once_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();

        EncoderMemory<F> cached_mem;
        bool have_cached = false;
        auto cached_memory = [&](OpCounter& c) {
            if (!have_cached) {
                cached_mem = adapt_memory_rows(encode_image(img, model.weights, &c), memory_rows);
                have_cached = true;
            }
            return cached_mem;
        };
        OpCounter cached_counter;
        t0 = Clock::now();
        const auto cached_tokens = detail::bench_decode_steps<F>(cached_memory, model, n, true, cached_counter);
        row.cached_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();

        if (naive_tokens != cached_tokens || naive_tokens != middle_tokens)
            throw InvariantError("bench_decode: engines disagree on emitted tokens at N=" + std::to_string(n));

        row.naive_qk = naive_counter.decoder_qk_pairs;
        row.cached_qk = cached_counter.decoder_qk_pairs;
        row.predicted_naive = naive_decoder_qk_pairs(static_cast<std::uint64_t>(n),
                                                     static_cast<std::uint64_t>(memory_rows),
                                                     static_cast<std::uint64_t>(layers));
        row.predicted_cached = cached_decoder_qk_pairs(static_cast<std::uint64_t>(n),
                                                       static_cast<std::uint64_t>(memory_rows),
                                                       static_cast<std::uint64_t>(layers));
        row.naive_encoder_calls = naive_counter.encoder_calls;
        row.cached_encoder_calls = cached_counter.encoder_calls;
        if (row.naive_qk != row.predicted_naive)
            throw InvariantError("bench_decode: naive qk count " + std::to_string(row.naive_qk) +
                                 " != closed form " + std::to_string(row.predicted_naive) + " at N=" +
                                 std::to_string(n));
        if (middle_counter.decoder_qk_pairs != row.predicted_naive)
            throw InvariantError("bench_decode: encoder-once qk count deviates from the full-recompute form");
        if (row.cached_qk != row.predicted_cached)
            throw InvariantError("bench_decode: cached qk count " + std::to_string(row.cached_qk) +
                                 " != closed form " + std::to_string(row.predicted_cached) + " at N=" +
                                 std::to_string(n));
        rows.push_back(row);
    }
    return rows;
}

inline std::string bench_table_text(const std::vector<BenchRow>& rows) {
    std::string out =
        "N\tM\tnaive_qk\tcached_qk\tpredicted_naive\tpredicted_cached\tenc_calls_naive\tenc_calls_cached\t"
        "naive_ms\tencoder_once_ms\tcached_ms\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%d\t%d\t%llu\t%llu\t%llu\t%llu\t%llu\t%llu\t%.2f\t%.2f\t%.2f\n",
                      r.steps, r.memory_rows, static_cast<unsigned long long>(r.naive_qk),
                      static_cast<unsigned long long>(r.cached_qk),
                      static_cast<unsigned long long>(r.predicted_naive),
                      static_cast<unsigned long long>(r.predicted_cached),
                      static_cast<unsigned long long>(r.naive_encoder_calls),
                      static_cast<unsigned long long>(r.cached_encoder_calls), r.naive_ms, r.encoder_once_ms,
                      r.cached_ms);
        out += buf;
    }
    return out;
}

}  // namespace img2inchi
