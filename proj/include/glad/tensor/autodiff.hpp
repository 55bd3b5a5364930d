#pragma once

#include <span>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "glad/tensor/ops.hpp"
#include "glad/tensor/tensor.hpp"

namespace glad {

// Cotangents for a requested set of inputs. Inputs the loss does not reach
// get explicit zeros of the matching shape.
template <class S>
class GradientSetT {
public:
    void put(const NodeT<S>* key, TensorT<S> grad) { grads_[key] = std::move(grad); }

    bool contains(const TensorT<S>& t) const {
        return t.is_tracked() && grads_.count(t.node().get()) > 0;
    }

    const TensorT<S>& at(const TensorT<S>& t) const {
        require(t.is_tracked(), "gradient lookup: tensor is untracked");
        auto it = grads_.find(t.node().get());
        require(it != grads_.end(), "gradient lookup: tensor was not in the requested set");
        return it->second;
    }

    size_t size() const { return grads_.size(); }

private:
    std::unordered_map<const NodeT<S>*, TensorT<S>> grads_;
};

using GradientSet = GradientSetT<double>;

namespace detail {

// Iterative postorder over the ancestry of `root` (parents listed before
// consumers). Order depends only on graph structure, never on pointer values.
template <class S>
std::vector<const NodeT<S>*> topo_order(const NodeT<S>* root) {
    std::vector<const NodeT<S>*> order;
    std::unordered_set<const NodeT<S>*> visited;
    struct Frame {
        const NodeT<S>* node;
        size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({root, 0});
    visited.insert(root);
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            const auto& parent = f.node->parents[f.next_parent++];
            if (parent.is_tracked()) {
                const NodeT<S>* p = parent.node().get();
                if (visited.insert(p).second) stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }
    return order;
}

template <class S>
GradientSetT<S> run_vjp(const TensorT<S>& outputs, const TensorT<S>& cotangent,
                        std::span<const TensorT<S>> wrt, bool retain_higher) {
    require(outputs.is_tracked(), "vjp: outputs tensor is untracked (no graph recorded)");
    require(same_shape(outputs, cotangent), "vjp: cotangent shape ", shape_str(cotangent.shape()),
            " does not match outputs shape ", shape_str(outputs.shape()));
    for (const auto& t : wrt) {
        require(t.is_tracked(), "vjp: a requested input is untracked");
    }

    const auto order = topo_order<S>(outputs.node().get());
    std::unordered_map<const NodeT<S>*, TensorT<S>> accum;
    accum.emplace(outputs.node().get(), cotangent);

    auto propagate = [&] {
        // reverse postorder: every consumer finishes before its parents
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            const NodeT<S>* node = *it;
            auto found = accum.find(node);
            if (found == accum.end()) continue;
            if (!node->vjp) continue;  // leaf
            const TensorT<S> ct = found->second;
            auto parent_cts = node->vjp(ct);
            require(parent_cts.size() == node->parents.size(), "vjp rule for '", node->op,
                    "' returned ", parent_cts.size(), " cotangents for ", node->parents.size(), " parents");
            for (size_t i = 0; i < node->parents.size(); ++i) {
                const auto& parent = node->parents[i];
                if (!parent.is_tracked()) continue;
                auto [slot, inserted] = accum.emplace(parent.node().get(), parent_cts[i]);
                if (!inserted) slot->second = add(slot->second, parent_cts[i]);
            }
        }
    };
    if (retain_higher) {
        propagate();
    } else {
        NoGradGuard no_grad;
        propagate();
    }

    GradientSetT<S> result;
    for (const auto& t : wrt) {
        auto it = accum.find(t.node().get());
        if (it != accum.end()) {
            result.put(t.node().get(), it->second);
        } else {
            result.put(t.node().get(), TensorT<S>::zeros(t.shape()));
        }
    }
    return result;
}

}  // namespace detail

// cotangent^T * d(outputs)/d(wrt)
template <class S>
GradientSetT<S> vjp(const TensorT<S>& outputs, const TensorT<S>& cotangent,
                    std::span<const TensorT<S>> wrt, bool retain_higher = false) {
    return detail::run_vjp(outputs, cotangent, wrt, retain_higher);
}

// d(loss)/d(wrt) for a scalar loss; identical to vjp with a unit seed.
// With retain_higher the returned gradients are tracked expressions that can
// feed further backward calls.
template <class S>
GradientSetT<S> backward(const TensorT<S>& loss, std::span<const TensorT<S>> wrt,
                         bool retain_higher = false) {
    require(loss.numel() == 1, "backward: loss must be scalar, got ", shape_str(loss.shape()));
    return detail::run_vjp(loss, TensorT<S>::full(loss.shape(), S(1)), wrt, retain_higher);
}

// single-input conveniences
template <class S>
TensorT<S> backward_one(const TensorT<S>& loss, const TensorT<S>& x, bool retain_higher = false) {
    std::vector<TensorT<S>> wrt{x};
    return backward<S>(loss, std::span<const TensorT<S>>(wrt), retain_higher).at(x);
}

template <class S>
TensorT<S> vjp_one(const TensorT<S>& outputs, const TensorT<S>& cotangent, const TensorT<S>& x,
                   bool retain_higher = false) {
    std::vector<TensorT<S>> wrt{x};
    return vjp<S>(outputs, cotangent, std::span<const TensorT<S>>(wrt), retain_higher).at(x);
}

}  // namespace glad
