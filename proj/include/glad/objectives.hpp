#pragma once

#include <span>
#include <vector>

#include "glad/experts.hpp"
#include "glad/nets.hpp"
#include "glad/tensor/autodiff.hpp"

namespace glad {

// ---------------------------------------------------------------------------
// gradient matching (DC)
// ---------------------------------------------------------------------------

namespace detail {

template <class S>
TensorT<S> cosine_distance_term(const TensorT<S>& a, const TensorT<S>& b) {
    const double na = norm_sq(a.detached()).item();
    const double nb = norm_sq(b.detached()).item();
    require(na > 0 && nb > 0, "dc_loss: degenerate gradient (zero norm, cosine undefined)");
    return div(dot(a, b), mul(sqrt(norm_sq(a)), sqrt(norm_sq(b))));
}

}  // namespace detail

// Generic form over any differentiable forward map (flat theta, batch) ->
// logits. The real-side gradient is a constant w.r.t. the synthetic batch and
// is computed without a retained graph; the synthetic gradient is a tracked
// expression, which is what makes this loss differentiable through it.
template <class S, class ForwardFn>
TensorT<S> dc_loss_with(const TensorT<S>& syn_batch, const std::vector<int32_t>& syn_labels,
                        const TensorT<S>& real_batch, const std::vector<int32_t>& real_labels,
                        ForwardFn&& fwd, const TensorT<S>& theta_in) {
    auto theta = theta_in.is_tracked() ? theta_in : theta_in.tracked_leaf();
    auto g_syn = backward_one(cross_entropy_loss(fwd(theta, syn_batch), syn_labels), theta,
                              /*retain_higher=*/true);
    auto theta_const = theta_in.detached().tracked_leaf();
    auto g_real =
        backward_one(cross_entropy_loss(fwd(theta_const, real_batch), real_labels), theta_const).detached();
    return sub(TensorT<S>::scalar(S(1)), detail::cosine_distance_term(g_syn, g_real));
}

// 1 - cos(grad_theta loss_syn, grad_theta loss_real), over the full flattened
// gradient by default or summed per layout entry with `per_layer`.
template <class S>
TensorT<S> dc_loss(const TensorT<S>& syn_batch, const std::vector<int32_t>& syn_labels,
                   const TensorT<S>& real_batch, const std::vector<int32_t>& real_labels,
                   const NetSpec& spec, const ParamVectorT<S>& params, bool per_layer = false) {
    if (!per_layer) {
        return dc_loss_with(
            syn_batch, syn_labels, real_batch, real_labels,
            [&](const TensorT<S>& theta, const TensorT<S>& batch) {
                return forward_logits(spec, ParamVectorT<S>{theta, params.layout}, batch);
            },
            params.flat);
    }
    auto theta = params.flat.is_tracked() ? params.flat : params.flat.tracked_leaf();
    ParamVectorT<S> live{theta, params.layout};
    auto g_syn = backward_one(cross_entropy_loss(forward_logits(spec, live, syn_batch), syn_labels),
                              theta, /*retain_higher=*/true);

    auto theta_const = params.flat.detached().tracked_leaf();
    ParamVectorT<S> frozen{theta_const, params.layout};
    auto g_real = backward_one(cross_entropy_loss(forward_logits(spec, frozen, real_batch), real_labels),
                               theta_const)
                      .detached();

    TensorT<S> total = TensorT<S>::scalar(S(0));
    for (const auto& e : params.layout->entries) {
        const int64_t len = shape_numel(e.shape);
        auto gs = slice_axis0(g_syn, e.offset, len);
        auto gr = slice_axis0(g_real, e.offset, len);
        total = add(total, sub(TensorT<S>::scalar(S(1)), detail::cosine_distance_term(gs, gr)));
    }
    return total;
}

// ---------------------------------------------------------------------------
// distribution matching (DM)
// ---------------------------------------------------------------------------

// sum_c || mean psi(real_c) - mean psi(syn_c) ||^2 under a frozen randomly
// initialized extractor psi.
template <class S>
TensorT<S> dm_loss(const std::vector<TensorT<S>>& syn_per_class,
                   const std::vector<TensorT<S>>& real_per_class, const NetSpec& psi_spec,
                   const ParamVectorT<S>& psi_params) {
    require(syn_per_class.size() == real_per_class.size(), "dm_loss: class count mismatch, ",
            syn_per_class.size(), " vs ", real_per_class.size());
    require(!syn_per_class.empty(), "dm_loss: no classes");
    TensorT<S> total = TensorT<S>::scalar(S(0));
    for (size_t c = 0; c < syn_per_class.size(); ++c) {
        require(syn_per_class[c].defined() && syn_per_class[c].dim(0) > 0, "dm_loss: empty synthetic batch for class ", c);
        require(real_per_class[c].defined() && real_per_class[c].dim(0) > 0, "dm_loss: empty real batch for class ", c);
        auto mu_real = mean_axis0(feature_extract(psi_spec, psi_params, real_per_class[c]));
        auto mu_syn = mean_axis0(feature_extract(psi_spec, psi_params, syn_per_class[c]));
        total = add(total, norm_sq(sub(mu_real, mu_syn)));
    }
    return total;
}

// ---------------------------------------------------------------------------
// trajectory matching (MTT)
// ---------------------------------------------------------------------------

template <class S>
struct ExpertSegmentT {
    ParamVectorT<S> theta_start;   // expert params at epoch t
    ParamVectorT<S> theta_target;  // expert params at epoch t + M
    int64_t t = 0;
    int64_t m = 0;
};

using ExpertSegment = ExpertSegmentT<double>;

struct MttConfig {
    int64_t n_steps = 10;   // synthetic steps per iteration (N)
    int64_t m_expert = 2;   // expert epochs to match (M)
    int64_t t_plus = 2;     // maximum starting epoch (T+)
    int64_t syn_batch = 0;  // images per inner step; 0 = whole synthetic set

    void validate() const {
        require(n_steps >= 1 && m_expert >= 1, "mtt config: N and M must be >= 1");
        require(t_plus >= 0, "mtt config: T+ must be >= 0");
    }
};

template <class S>
ExpertSegmentT<S> sample_expert_segment(const TrajBufferT<S>& buffer, const MttConfig& cfg, Rng& rng) {
    cfg.validate();
    require(!buffer.trajectories.empty(), "sample_expert_segment: buffer has no trajectories");
    const int64_t needed = cfg.t_plus + cfg.m_expert + 1;
    require(buffer.snapshots_per_traj() >= needed, "sample_expert_segment: trajectories have ",
            buffer.snapshots_per_traj(), " snapshots, need at least ", needed);
    const auto& traj = buffer.trajectories[rng.randint(buffer.trajectories.size())];
    const int64_t t = static_cast<int64_t>(rng.randint(static_cast<uint64_t>(cfg.t_plus + 1)));
    ExpertSegmentT<S> seg;
    seg.theta_start = traj[static_cast<size_t>(t)];
    seg.theta_target = traj[static_cast<size_t>(t + cfg.m_expert)];
    seg.t = t;
    seg.m = cfg.m_expert;
    return seg;
}

namespace detail {

// fixed shuffled visit order of the synthetic set, cycled into inner batches
inline std::vector<std::vector<int64_t>> mtt_batches(int64_t n_syn, int64_t batch, int64_t steps,
                                                     uint64_t student_seed) {
    Rng rng(seed_chain(student_seed, 0x6d7474ull));
    std::vector<int64_t> order(static_cast<size_t>(n_syn));
    for (int64_t i = 0; i < n_syn; ++i) order[static_cast<size_t>(i)] = i;
    for (int64_t i = n_syn - 1; i > 0; --i) {
        std::swap(order[static_cast<size_t>(i)], order[rng.randint(static_cast<uint64_t>(i + 1))]);
    }
    const int64_t b = batch <= 0 || batch > n_syn ? n_syn : batch;
    std::vector<std::vector<int64_t>> out;
    int64_t cursor = 0;
    for (int64_t s = 0; s < steps; ++s) {
        std::vector<int64_t> idx;
        for (int64_t i = 0; i < b; ++i) {
            idx.push_back(order[static_cast<size_t>(cursor)]);
            cursor = (cursor + 1) % n_syn;
        }
        out.push_back(std::move(idx));
    }
    return out;
}

template <class S>
double segment_denominator(const TensorT<S>& theta_start, const TensorT<S>& theta_target) {
    auto diff = sub(theta_start.detached(), theta_target.detached());
    const double d = norm_sq(diff).item();
    require(d > 0, "mtt: degenerate segment (start equals target)");
    return d;
}

}  // namespace detail

// Fully unrolled trajectory matching over an arbitrary differentiable inner
// student loss: N plain SGD steps with the whole graph retained, normalized
// squared error against the expert target, exact gradients w.r.t. every
// tensor in `wrt` (synthetic images and the learnable step size alpha).
template <class S, class InnerLoss>
std::pair<TensorT<S>, GradientSetT<S>> mtt_unrolled_with(
    const TensorT<S>& syn_images, const std::vector<int32_t>& syn_labels, const TensorT<S>& alpha,
    const TensorT<S>& theta_start, const TensorT<S>& theta_target, const MttConfig& cfg,
    uint64_t student_seed, std::span<const TensorT<S>> wrt, InnerLoss&& inner) {
    cfg.validate();
    require(alpha.numel() == 1, "mtt: alpha must be scalar");
    const double denom = detail::segment_denominator(theta_start, theta_target);
    const auto batches = detail::mtt_batches(syn_images.dim(0), cfg.syn_batch, cfg.n_steps, student_seed);

    auto theta = theta_start.detached().tracked_leaf();
    TensorT<S> theta_expr = theta;
    for (const auto& idx : batches) {
        std::vector<int32_t> labels;
        for (int64_t i : idx) labels.push_back(syn_labels[static_cast<size_t>(i)]);
        auto batch = index_select(syn_images, idx);
        auto g = backward_one(inner(theta_expr, batch, labels), theta_expr, /*retain_higher=*/true);
        theta_expr = sub(theta_expr, mul(g, alpha));
    }
    auto diff = sub(theta_expr, theta_target.detached());
    auto loss = div(norm_sq(diff), TensorT<S>::scalar(static_cast<S>(denom)));
    auto grads = backward(loss, wrt);
    return {loss, grads};
}

// Constant-memory trajectory matching. Phase 1 runs the N inner steps with
// no retained graphs, snapshotting parameter values only, and forms the
// parameter-space adjoint at the final step. Phase 2 replays the steps in
// reverse, rebuilding one single-step graph at a time and pulling the
// adjoint through it with vjp; at no point is more than one step's
// activation graph alive. Gradients match the unrolled pass up to summation
// order.
template <class S, class InnerLoss>
std::pair<double, GradientSetT<S>> mtt_constmem_with(
    const TensorT<S>& syn_images, const std::vector<int32_t>& syn_labels, const TensorT<S>& alpha,
    const TensorT<S>& theta_start, const TensorT<S>& theta_target, const MttConfig& cfg,
    uint64_t student_seed, std::span<const TensorT<S>> wrt, InnerLoss&& inner) {
    cfg.validate();
    require(alpha.numel() == 1, "mtt: alpha must be scalar");
    const double denom = detail::segment_denominator(theta_start, theta_target);
    const auto batches = detail::mtt_batches(syn_images.dim(0), cfg.syn_batch, cfg.n_steps, student_seed);
    const auto syn_values = syn_images.detached();
    const auto alpha_values = alpha.detached();

    // phase 1: forward replay, values only
    std::vector<TensorT<S>> snaps;
    snaps.push_back(theta_start.detached());
    double loss_value = 0.0;
    {
        for (const auto& idx : batches) {
            std::vector<int32_t> labels;
            for (int64_t i : idx) labels.push_back(syn_labels[static_cast<size_t>(i)]);
            TensorT<S> g;
            {
                auto theta = snaps.back().tracked_leaf();
                g = backward_one(inner(theta, index_select(syn_values, idx), labels), theta);
            }
            NoGradGuard no_grad;
            snaps.push_back(sub(snaps.back(), mul(g, alpha_values)));
        }
        NoGradGuard no_grad;
        auto diff = sub(snaps.back(), theta_target.detached());
        loss_value = div(norm_sq(diff), TensorT<S>::scalar(static_cast<S>(denom))).item();
    }

    // adjoint at theta_N: 2 (theta_N - target) / denom
    TensorT<S> lambda;
    {
        NoGradGuard no_grad;
        lambda = scale(sub(snaps.back(), theta_target.detached()), 2.0 / denom);
    }

    // phase 2: reverse replay, one step graph alive at a time
    std::unordered_map<const NodeT<S>*, TensorT<S>> acc;
    for (int64_t step = cfg.n_steps - 1; step >= 0; --step) {
        const auto& idx = batches[static_cast<size_t>(step)];
        std::vector<int32_t> labels;
        for (int64_t i : idx) labels.push_back(syn_labels[static_cast<size_t>(i)]);

        auto theta = snaps[static_cast<size_t>(step)].tracked_leaf();
        auto batch = index_select(syn_images, idx);
        auto g = backward_one(inner(theta, batch, labels), theta, /*retain_higher=*/true);
        auto theta_next = sub(theta, mul(g, alpha));

        std::vector<TensorT<S>> step_wrt{theta};
        step_wrt.insert(step_wrt.end(), wrt.begin(), wrt.end());
        auto gs = vjp(theta_next, lambda, std::span<const TensorT<S>>(step_wrt));

        lambda = gs.at(theta).detached();
        NoGradGuard no_grad;
        for (const auto& t : wrt) {
            auto contribution = gs.at(t);
            auto [slot, inserted] = acc.emplace(t.node().get(), contribution);
            if (!inserted) slot->second = add(slot->second, contribution);
        }
    }

    GradientSetT<S> out;
    for (const auto& t : wrt) {
        auto it = acc.find(t.node().get());
        out.put(t.node().get(), it == acc.end() ? TensorT<S>::zeros(t.shape()) : it->second.detached());
    }
    return {loss_value, out};
}

namespace detail {

template <class S>
auto classifier_inner_loss(const NetSpec& spec, const ParamLayoutPtr& layout) {
    return [&spec, layout](const TensorT<S>& theta, const TensorT<S>& batch,
                           const std::vector<int32_t>& labels) {
        return cross_entropy_loss(forward_logits(spec, ParamVectorT<S>{theta, layout}, batch), labels);
    };
}

}  // namespace detail

template <class S>
std::pair<TensorT<S>, GradientSetT<S>> mtt_loss_unrolled(
    const TensorT<S>& syn_images, const std::vector<int32_t>& syn_labels, const TensorT<S>& alpha,
    const ExpertSegmentT<S>& segment, const NetSpec& spec, const MttConfig& cfg,
    uint64_t student_seed, std::span<const TensorT<S>> wrt) {
    return mtt_unrolled_with(syn_images, syn_labels, alpha, segment.theta_start.flat,
                             segment.theta_target.flat, cfg, student_seed, wrt,
                             detail::classifier_inner_loss<S>(spec, segment.theta_start.layout));
}

template <class S>
std::pair<double, GradientSetT<S>> mtt_grad_constmem(
    const TensorT<S>& syn_images, const std::vector<int32_t>& syn_labels, const TensorT<S>& alpha,
    const ExpertSegmentT<S>& segment, const NetSpec& spec, const MttConfig& cfg,
    uint64_t student_seed, std::span<const TensorT<S>> wrt) {
    return mtt_constmem_with(syn_images, syn_labels, alpha, segment.theta_start.flat,
                             segment.theta_target.flat, cfg, student_seed, wrt,
                             detail::classifier_inner_loss<S>(spec, segment.theta_start.layout));
}

}  // namespace glad
