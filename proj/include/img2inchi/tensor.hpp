#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "img2inchi/errors.hpp"

// Finite checks after every forward op are on in debug builds, off in release.
// Test targets force them on regardless of build type.
#ifndef I2I_CHECK_FINITE
#ifdef NDEBUG
#define I2I_CHECK_FINITE 0
#else
#define I2I_CHECK_FINITE 1
#endif
#endif

namespace img2inchi {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
}

// Dense row-major tensor of rank 1..4 with an optional gradient buffer.
// Value type over shared storage: copies alias the same buffer, which lets
// tape closures and model weight tables refer to the same parameters.
template <typename F>
class Tensor {
   public:
    Tensor() = default;

    explicit Tensor(Shape shape, bool requires_grad = false)
        : st_(std::make_shared<Storage>()) {
        validate_shape(shape);
        st_->shape = std::move(shape);
        st_->data.assign(shape_numel(st_->shape), F(0));
        set_requires_grad(requires_grad);
    }

    Tensor(Shape shape, std::vector<F> data, bool requires_grad = false)
        : st_(std::make_shared<Storage>()) {
        validate_shape(shape);
        if (shape_numel(shape) != data.size())
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        st_->shape = std::move(shape);
        st_->data = std::move(data);
        set_requires_grad(requires_grad);
    }

    bool defined() const { return st_ != nullptr; }
    const Shape& shape() const { return st_->shape; }
    int dim(int i) const { return st_->shape[static_cast<std::size_t>(i)]; }
    int rank() const { return static_cast<int>(st_->shape.size()); }
    std::size_t numel() const { return st_->data.size(); }

    std::vector<F>& data() { return st_->data; }
    const std::vector<F>& data() const { return st_->data; }
    std::vector<F>& grad() { return st_->grad; }
    const std::vector<F>& grad() const { return st_->grad; }

    bool requires_grad() const { return st_->requires_grad; }
    void set_requires_grad(bool rg) {
        st_->requires_grad = rg;
        if (rg && st_->grad.size() != st_->data.size()) st_->grad.assign(st_->data.size(), F(0));
        if (!rg) st_->grad.clear();
    }

    void zero_grad() {
        if (st_->requires_grad) st_->grad.assign(st_->data.size(), F(0));
    }

    // 2D accessors (most model math is matrix shaped).
    int rows() const { return st_->shape.size() >= 1 ? st_->shape[0] : 1; }
    int cols() const { return st_->shape.size() >= 2 ? st_->shape[1] : 1; }
    F& at(int r, int c) { return st_->data[static_cast<std::size_t>(r) * cols() + c]; }
    F at(int r, int c) const { return st_->data[static_cast<std::size_t>(r) * cols() + c]; }

    F item() const {
        if (numel() != 1) throw ContractError("item() requires a scalar tensor, got " + shape_str(shape()));
        return st_->data[0];
    }

    bool same_storage(const Tensor& o) const { return st_ == o.st_; }

    Tensor clone() const {
        Tensor out;
        out.st_ = std::make_shared<Storage>(*st_);
        return out;
    }

    static Tensor scalar(F v, bool requires_grad = false) {
        return Tensor({1}, {v}, requires_grad);
    }

    static Tensor full(Shape shape, F v) {
        Tensor t(std::move(shape));
        for (F& x : t.data()) x = v;
        return t;
    }

   private:
    struct Storage {
        Shape shape;
        std::vector<F> data;
        std::vector<F> grad;  // empty unless requires_grad
        bool requires_grad = false;
    };

    static void validate_shape(const Shape& shape) {
        if (shape.empty() || shape.size() > 4)
            throw ShapeError("tensor rank must be 1..4, got " + shape_str(shape));
        for (int d : shape)
            if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
    }

    std::shared_ptr<Storage> st_;
};

template <typename F>
inline void check_finite(const Tensor<F>& t, const char* op) {
#if I2I_CHECK_FINITE
    for (F v : t.data())
        if (!std::isfinite(static_cast<double>(v)))
            throw InvariantError(std::string("non-finite value produced by ") + op);
#else
    (void)t;
    (void)op;
#endif
}

// Reverse-mode tape: an ordered list of recorded backward rules. Replaying in
// reverse recorded order visits each rule exactly once; gradient buffers are
// allocated when the producing op is recorded, so after backward() every
// requires_grad leaf reachable from the loss holds its gradient.
template <typename F>
class Tape {
   public:
    void record(std::function<void()> step) { steps_.push_back(std::move(step)); }

    std::size_t size() const { return steps_.size(); }

    void clear() { steps_.clear(); }

    // Seeds d(loss)/d(loss) = seed (1 for plain backward) and replays.
    void backward(Tensor<F>& loss, F seed = F(1)) {
        if (loss.numel() != 1)
            throw ContractError("backward requires a scalar loss, got " + shape_str(loss.shape()));
        if (!loss.requires_grad())
            throw ContractError("backward requires a loss that requires grad");
        loss.grad()[0] += seed;
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    }

   private:
    std::vector<std::function<void()>> steps_;
};

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

}  // namespace img2inchi
