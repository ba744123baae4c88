#pragma once

// Independent reference implementations the tests check the library against.
// Nothing in here may call into the implementation paths it verifies.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "img2inchi/rng.hpp"
#include "img2inchi/tensor.hpp"

namespace oracles {

// Brute-force triple-loop matrix product.
template <typename F>
img2inchi::Tensor<F> matmul_ref(const img2inchi::Tensor<F>& a, const img2inchi::Tensor<F>& b) {
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    img2inchi::Tensor<F> c({m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            F s = F(0);
            for (int kk = 0; kk < k; ++kk) s += a.at(i, kk) * b.at(kk, j);
            c.at(i, j) = s;
        }
    return c;
}

// Explicit-loop scaled dot-product attention (no masking).
template <typename F>
img2inchi::Tensor<F> attention_ref(const img2inchi::Tensor<F>& q, const img2inchi::Tensor<F>& k,
                                   const img2inchi::Tensor<F>& v) {
    const int qn = q.dim(0), s = k.dim(0), dk = q.dim(1), dv = v.dim(1);
    img2inchi::Tensor<F> out({qn, dv});
    for (int i = 0; i < qn; ++i) {
        std::vector<double> scores(static_cast<std::size_t>(s));
        double mx = -1e300;
        for (int j = 0; j < s; ++j) {
            double dot = 0;
            for (int kk = 0; kk < dk; ++kk) dot += static_cast<double>(q.at(i, kk)) * k.at(j, kk);
            scores[static_cast<std::size_t>(j)] = dot / std::sqrt(static_cast<double>(dk));
            mx = std::max(mx, scores[static_cast<std::size_t>(j)]);
        }
        double denom = 0;
        for (int j = 0; j < s; ++j) denom += std::exp(scores[static_cast<std::size_t>(j)] - mx);
        for (int j = 0; j < s; ++j) {
            const double w = std::exp(scores[static_cast<std::size_t>(j)] - mx) / denom;
            for (int d = 0; d < dv; ++d) out.at(i, d) += static_cast<F>(w * v.at(j, d));
        }
    }
    return out;
}

// Recursive-definition Levenshtein distance with memoization; exponential
// structure but fine on short strings.
inline int levenshtein_ref(const std::string& a, const std::string& b) {
    std::vector<std::vector<int>> memo(a.size() + 1, std::vector<int>(b.size() + 1, -1));
    std::function<int(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) -> int {
        if (i == a.size()) return static_cast<int>(b.size() - j);
        if (j == b.size()) return static_cast<int>(a.size() - i);
        int& slot = memo[i][j];
        if (slot >= 0) return slot;
        if (a[i] == b[j]) return slot = go(i + 1, j + 1);
        return slot = 1 + std::min({go(i + 1, j), go(i, j + 1), go(i + 1, j + 1)});
    };
    return go(0, 0);
}

inline std::string random_ascii(img2inchi::Rng& rng, int max_len) {
    const int len = static_cast<int>(rng.below(static_cast<std::uint64_t>(max_len) + 1));
    std::string s;
    for (int i = 0; i < len; ++i) s.push_back(static_cast<char>(32 + rng.below(95)));
    return s;
}

// Relative error with an absolute floor: values below `floor` are compared
// on an absolute scale, which keeps 32-bit finite-difference noise from
// drowning out genuinely wrong gradients.
inline double rel_err(double a, double b, double floor) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

template <typename F>
void fill_uniform(img2inchi::Tensor<F>& t, img2inchi::Rng& rng, double lo, double hi) {
    for (F& v : t.data()) v = static_cast<F>(lo + rng.uniform() * (hi - lo));
}

}  // namespace oracles
