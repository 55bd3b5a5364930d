#pragma once

#include <functional>

#include "glad/tensor/tensor.hpp"

namespace glad {

// Central-difference gradient estimate, (f(x+eps e_i) - f(x-eps e_i)) / 2eps
// per coordinate. This is the repo's independent gradient oracle: it only
// evaluates f and never touches the graph machinery it is used to check.
template <class S>
TensorT<S> finite_diff_gradient(const std::function<double(const TensorT<S>&)>& f,
                                const TensorT<S>& x, double eps = 1e-5) {
    require(eps > 0, "finite_diff_gradient: eps must be positive");
    std::vector<S> grad(static_cast<size_t>(x.numel()));
    std::vector<S> work(x.values());
    for (int64_t i = 0; i < x.numel(); ++i) {
        const S orig = work[i];
        work[i] = orig + static_cast<S>(eps);
        const double f_plus = f(TensorT<S>::from(x.shape(), work));
        work[i] = orig - static_cast<S>(eps);
        const double f_minus = f(TensorT<S>::from(x.shape(), work));
        work[i] = orig;
        grad[i] = static_cast<S>((f_plus - f_minus) / (2.0 * eps));
    }
    return TensorT<S>::from(x.shape(), std::move(grad));
}

}  // namespace glad
