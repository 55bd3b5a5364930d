#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "glad/core/error.hpp"

namespace glad {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), int64_t{1}, std::multiplies<int64_t>());
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

// Global instrumentation over live graph nodes. Lets tests compare the peak
// graph footprint of the constant-memory paths against full unrolling.
struct GraphStats {
    static std::atomic<int64_t>& live() {
        static std::atomic<int64_t> v{0};
        return v;
    }
    static std::atomic<int64_t>& peak() {
        static std::atomic<int64_t> v{0};
        return v;
    }
    static void on_create() {
        const int64_t now = live().fetch_add(1) + 1;
        int64_t p = peak().load();
        while (now > p && !peak().compare_exchange_weak(p, now)) {
        }
    }
    static void on_destroy() { live().fetch_sub(1); }
    static void reset_peak() { peak().store(live().load()); }
};

namespace detail {
inline bool& grad_enabled_flag() {
    thread_local bool v = true;
    return v;
}
inline bool& strict_finite_flag() {
    thread_local bool v = false;
    return v;
}
}  // namespace detail

// Suppresses graph recording on this thread for the guard's lifetime.
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
    ~NoGradGuard() { detail::grad_enabled_flag() = prev_; }

private:
    bool prev_;
};

// Strict mode: every op output is checked for NaN/Inf. Off by default since
// distillation losses can transiently spike.
class StrictFiniteGuard {
public:
    StrictFiniteGuard() : prev_(detail::strict_finite_flag()) { detail::strict_finite_flag() = true; }
    ~StrictFiniteGuard() { detail::strict_finite_flag() = prev_; }

private:
    bool prev_;
};

inline bool grad_enabled() { return detail::grad_enabled_flag(); }
inline bool strict_finite() { return detail::strict_finite_flag(); }

template <class S>
class TensorT;

// One recorded operation. `parents` keeps the producing subgraph alive;
// `vjp` maps the output cotangent to per-parent cotangents, expressed through
// the public op catalog so gradients stay differentiable.
template <class S>
struct NodeT {
    const char* op = "leaf";
    std::vector<TensorT<S>> parents;
    std::function<std::vector<TensorT<S>>(const TensorT<S>&)> vjp;

    NodeT() { GraphStats::on_create(); }
    NodeT(const NodeT&) = delete;
    NodeT& operator=(const NodeT&) = delete;
    ~NodeT() { GraphStats::on_destroy(); }
};

// Dense n-dimensional value array with an optional graph handle. Copies are
// shallow (shared storage); every op allocates fresh output storage, so
// tensors behave as immutable values.
template <class S>
class TensorT {
public:
    using Scalar = S;

    TensorT() = default;

    static TensorT from(Shape shape, std::vector<S> values) {
        require(shape_numel(shape) == static_cast<int64_t>(values.size()),
                "tensor: shape ", shape_str(shape), " does not match value count ", values.size());
        TensorT t;
        t.shape_ = std::move(shape);
        t.values_ = std::make_shared<std::vector<S>>(std::move(values));
        return t;
    }

    static TensorT zeros(Shape shape) {
        const auto n = shape_numel(shape);
        return from(std::move(shape), std::vector<S>(static_cast<size_t>(n), S(0)));
    }

    static TensorT full(Shape shape, S value) {
        const auto n = shape_numel(shape);
        return from(std::move(shape), std::vector<S>(static_cast<size_t>(n), value));
    }

    static TensorT scalar(S value) { return from({1}, {value}); }

    bool defined() const { return values_ != nullptr; }
    const Shape& shape() const { return shape_; }
    int64_t numel() const { return values_ ? static_cast<int64_t>(values_->size()) : 0; }
    int64_t dim(size_t i) const { return shape_.at(i); }
    size_t rank() const { return shape_.size(); }

    const std::vector<S>& values() const { return *values_; }
    const S* data() const { return values_->data(); }
    // Mutable access to the underlying storage. Callers own the aliasing:
    // optimizer state and leaf refresh only.
    S* data_mut() { return values_->data(); }

    S item() const {
        require(numel() == 1, "item: tensor has ", numel(), " elements");
        return (*values_)[0];
    }

    bool is_tracked() const { return node_ != nullptr; }
    const std::shared_ptr<NodeT<S>>& node() const { return node_; }

    // A tracked view of the same storage: fresh leaf node, shared values.
    TensorT tracked_leaf() const {
        TensorT t = *this;
        t.node_ = std::make_shared<NodeT<S>>();
        return t;
    }

    // Same storage, no graph handle.
    TensorT detached() const {
        TensorT t = *this;
        t.node_ = nullptr;
        return t;
    }

    // Deep copy of the values, untracked.
    TensorT clone_values() const { return from(shape_, *values_); }

    bool all_finite() const {
        for (const S v : *values_) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

    template <class T>
    TensorT<T> cast() const {
        std::vector<T> out(values_->size());
        for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>((*values_)[i]);
        return TensorT<T>::from(shape_, std::move(out));
    }

    // Internal: attach a result node. Used by the op layer only.
    void attach_node(std::shared_ptr<NodeT<S>> node) { node_ = std::move(node); }

private:
    Shape shape_;
    std::shared_ptr<std::vector<S>> values_;
    std::shared_ptr<NodeT<S>> node_;
};

using Tensor = TensorT<double>;
using TensorF = TensorT<float>;

template <class S>
bool same_shape(const TensorT<S>& a, const TensorT<S>& b) {
    return a.shape() == b.shape();
}

template <class S>
bool bitwise_equal(const TensorT<S>& a, const TensorT<S>& b) {
    if (a.shape() != b.shape()) return false;
    return std::memcmp(a.data(), b.data(), sizeof(S) * a.numel()) == 0;
}

template <class S>
double max_abs_diff(const TensorT<S>& a, const TensorT<S>& b) {
    require(same_shape(a, b), "max_abs_diff: shapes ", shape_str(a.shape()), " vs ", shape_str(b.shape()));
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
    }
    return m;
}

// max |a-b| / max(floor, |a|, |b|), per coordinate
template <class S>
double max_rel_diff(const TensorT<S>& a, const TensorT<S>& b, double floor = 1e-12) {
    require(same_shape(a, b), "max_rel_diff: shapes ", shape_str(a.shape()), " vs ", shape_str(b.shape()));
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double x = static_cast<double>(a.data()[i]);
        const double y = static_cast<double>(b.data()[i]);
        const double denom = std::max({floor, std::abs(x), std::abs(y)});
        m = std::max(m, std::abs(x - y) / denom);
    }
    return m;
}

template <class S>
double max_abs(const TensorT<S>& a) {
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(static_cast<double>(a.data()[i])));
    return m;
}

// Infinity-norm relative error, the metric used by the gradient oracles:
// ||a-b||_inf normalized by the larger gradient magnitude. Robust for
// entries near zero where per-coordinate ratios are ill-conditioned.
template <class S>
double grad_rel_error(const TensorT<S>& a, const TensorT<S>& b) {
    require(same_shape(a, b), "grad_rel_error: shapes ", shape_str(a.shape()), " vs ", shape_str(b.shape()));
    const double scale = std::max({max_abs(a), max_abs(b), 1e-10});
    return max_abs_diff(a, b) / scale;
}

}  // namespace glad
