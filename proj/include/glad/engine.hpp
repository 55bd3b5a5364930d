#pragma once

#include <functional>
#include <type_traits>
#include <optional>
#include <span>
#include <vector>

#include "glad/datakit.hpp"
#include "glad/dsa.hpp"
#include "glad/microstyle.hpp"
#include "glad/objectives.hpp"

namespace glad {

enum class Method { dc, dm, mtt };

inline Method method_from(const std::string& s) {
    if (s == "dc") return Method::dc;
    if (s == "dm") return Method::dm;
    if (s == "mtt") return Method::mtt;
    fail("unknown method '", s, "'");
}

inline std::string to_string(Method m) {
    switch (m) {
        case Method::dc: return "dc";
        case Method::dm: return "dm";
        case Method::mtt: return "mtt";
    }
    return "?";
}

// Distillation space: raw pixels, style codes only (wplus), or an
// intermediate feature cut f<n> with the remaining style codes.
struct SpaceSpec {
    enum class Kind { pixel, wplus, fcut };
    Kind kind = Kind::fcut;
    int64_t cut = 2;

    static SpaceSpec parse(const std::string& s) {
        SpaceSpec out;
        if (s == "pixel") {
            out.kind = Kind::pixel;
            return out;
        }
        if (s == "wplus") {
            out.kind = Kind::wplus;
            return out;
        }
        if (s.size() >= 2 && s[0] == 'f') {
            out.kind = Kind::fcut;
            try {
                out.cut = std::stoll(s.substr(1));
            } catch (...) {
                fail("unknown space '", s, "'");
            }
            require(out.cut >= 0, "space '", s, "': cut must be >= 0");
            return out;
        }
        fail("unknown space '", s, "' (expected pixel, wplus, or f<n>)");
    }

    std::string str() const {
        switch (kind) {
            case Kind::pixel: return "pixel";
            case Kind::wplus: return "wplus";
            case Kind::fcut: return "f" + std::to_string(cut);
        }
        return "?";
    }

    bool operator==(const SpaceSpec&) const = default;
};

// The distilled dataset: per-class latents (or raw pixels), the frozen
// generator it was distilled against, and the learnable step size alpha.
template <class S>
struct SynSetT {
    SpaceSpec space;
    int64_t classes = 0;
    int64_t ipc = 0;
    std::vector<GenLatentT<S>> items;  // class-major: items[c*ipc + j]
    std::vector<int32_t> labels;
    std::optional<GenSpec> generator;
    uint64_t generator_hash = 0;
    TensorT<S> alpha;

    void validate() const {
        require(classes >= 1 && ipc >= 1, "synset: empty");
        require(static_cast<int64_t>(items.size()) == classes * ipc, "synset: item count ",
                items.size(), " != classes*ipc");
        require(alpha.defined() && alpha.numel() == 1 && alpha.item() > S(0),
                "synset: alpha must be a positive scalar");
        require(space.kind == SpaceSpec::Kind::pixel || generator.has_value(),
                "synset: generator spaces need a generator reference");
    }
};

using SynSet = SynSetT<double>;

enum class MttBackward { constmem, unrolled };

struct DistillConfig {
    Method method = Method::dc;
    SpaceSpec space;
    NetSpec backbone;
    int64_t ipc = 1;
    int64_t iterations = 5000;  // reference run length; desk presets use fewer
    double latent_lr = 0.1;
    double alpha_lr = 1e-4;
    double momentum = 0.5;
    MttConfig mtt;
    MttBackward mtt_backward = MttBackward::constmem;
    bool use_aug = true;
    AugStrategy aug_strategy = AugStrategy::compose_all;
    uint64_t seed = 0;
    int64_t real_batch = 64;   // per-class real batch for dc/dm
    int64_t dc_outer = 1;
    int64_t dc_net_steps = 1;  // net training steps between matching updates
    double dc_net_lr = 0.01;
    bool dc_per_layer = false;
    int64_t gen_batch = 16;    // generator pass batching limit
    bool pixel_clamp = true;
    std::string pixel_init = "real";  // real | noise
    bool optimize_alpha = true;
    double alpha_init = 0.01;
    LatentInit init_mode = LatentInit::feedforward;
    int64_t moment_samples = 1024;
    bool strict = false;

    void validate() const {
        require(iterations >= 1, "distill config: iterations must be >= 1");
        require(ipc >= 1, "distill config: ipc must be >= 1");
        require(latent_lr >= 0, "distill config: latent_lr must be non-negative");
        require(pixel_init == "real" || pixel_init == "noise", "distill config: pixel_init must be real|noise");
        mtt.validate();
    }
};

// Tracked views over a synset's optimizable storage. Leaves share storage
// with the synset tensors, so the optimizer writes in place.
template <class S>
struct LeafSetT {
    std::vector<GenLatentT<S>> items;
    TensorT<S> alpha;
    bool optimize_features = true;
    bool optimize_alpha = false;

    std::vector<TensorT<S>> leaves(int64_t item_begin, int64_t item_end, bool with_alpha) const {
        std::vector<TensorT<S>> out;
        for (int64_t i = item_begin; i < item_end; ++i) {
            if (optimize_features) out.push_back(items[static_cast<size_t>(i)].feature);
            for (const auto& s : items[static_cast<size_t>(i)].styles) out.push_back(s);
        }
        if (with_alpha && optimize_alpha) out.push_back(alpha);
        return out;
    }
};

template <class S>
LeafSetT<S> make_leaves(const SynSetT<S>& synset, bool optimize_alpha) {
    LeafSetT<S> out;
    out.optimize_features = synset.space.kind != SpaceSpec::Kind::wplus;
    out.optimize_alpha = optimize_alpha;
    for (const auto& item : synset.items) {
        GenLatentT<S> leafed;
        leafed.cut = item.cut;
        leafed.feature = out.optimize_features ? item.feature.tracked_leaf() : item.feature;
        for (const auto& s : item.styles) leafed.styles.push_back(s.tracked_leaf());
        out.items.push_back(std::move(leafed));
    }
    out.alpha = synset.alpha.tracked_leaf();
    return out;
}

// Renders a contiguous item range to images; generator passes are chunked to
// `gen_batch` latents (pixel space is a stack of the stored tensors).
template <class S>
TensorT<S> render_items(const SynSetT<S>& synset, const LeafSetT<S>& leaves,
                        const std::type_identity_t<GenParamsT<S>>* gen_params, int64_t begin,
                        int64_t end, int64_t gen_batch) {
    require(begin >= 0 && end > begin && end <= static_cast<int64_t>(leaves.items.size()),
            "render_items: bad range");
    if (synset.space.kind == SpaceSpec::Kind::pixel) {
        std::vector<TensorT<S>> rows;
        for (int64_t i = begin; i < end; ++i) {
            const auto& f = leaves.items[static_cast<size_t>(i)].feature;
            Shape batched = f.shape();
            batched.insert(batched.begin(), 1);
            rows.push_back(reshape(f, batched));
        }
        return rows.size() == 1 ? rows[0] : concat_axis0(rows);
    }
    require(gen_params != nullptr, "render_items: generator spaces need generator weights");
    const auto& spec = *synset.generator;
    std::vector<TensorT<S>> chunks;
    const int64_t limit = gen_batch >= 1 ? gen_batch : end - begin;
    for (int64_t lo = begin; lo < end; lo += limit) {
        const int64_t hi = std::min(end, lo + limit);
        std::span<const GenLatentT<S>> span(leaves.items.data() + lo, static_cast<size_t>(hi - lo));
        chunks.push_back(synth_batch(spec, *gen_params, span));
    }
    return chunks.size() == 1 ? chunks[0] : concat_axis0(chunks);
}

// ---------------------------------------------------------------------------
// checkpointed gradient path
// ---------------------------------------------------------------------------

// What a distillation loss produces at the rendered-image boundary: the loss
// value, its gradient w.r.t. the images, and gradients for any extra leaves
// the loss owns (the MTT step size).
template <class S>
struct ImageLossGrad {
    double loss = 0.0;
    TensorT<S> image_grad;
    std::vector<std::pair<const NodeT<S>*, TensorT<S>>> extra;
};

// Adapts a graph-building loss to the image-boundary form used by the
// checkpointed scheme.
template <class S, class GraphLoss>
std::function<ImageLossGrad<S>(const TensorT<S>&)> engine_boundary(GraphLoss graph_loss) {
    return [graph_loss = std::move(graph_loss)](const TensorT<S>& images_leaf) {
        auto loss = graph_loss(images_leaf);
        ImageLossGrad<S> out;
        out.loss = loss.item();
        out.image_grad = backward_one(loss, images_leaf);
        return out;
    };
}

// Three-step scheme: (1) render the images with no graph, (2) evaluate the
// loss and d(loss)/d(images) on a detached leaf and drop that graph, (3)
// re-render with tracking and pull the cotangent through the generator with
// vjp. Gradients equal the direct single-graph path; the generator graph and
// the loss graph are never alive at the same time.
template <class S>
std::pair<double, GradientSetT<S>> checkpointed_syn_grad(
    const std::function<TensorT<S>()>& render_fn,
    const std::function<ImageLossGrad<S>(const TensorT<S>&)>& loss_fn,
    std::span<const TensorT<S>> latent_leaves) {
    TensorT<S> images_val;
    {
        NoGradGuard no_grad;
        images_val = render_fn();
    }
    auto images_leaf = images_val.tracked_leaf();
    auto res = loss_fn(images_leaf);
    require(same_shape(res.image_grad, images_leaf), "checkpointed_syn_grad: image gradient shape ",
            shape_str(res.image_grad.shape()), " != images ", shape_str(images_leaf.shape()));

    auto images_tracked = render_fn();
    auto grads = vjp(images_tracked, res.image_grad.detached(), latent_leaves);
    for (auto& [node, grad] : res.extra) grads.put(node, std::move(grad));
    return {res.loss, grads};
}

// Single-graph reference path (used by the equivalence tests).
template <class S>
std::pair<double, GradientSetT<S>> direct_syn_grad(
    const std::function<TensorT<S>()>& render_fn,
    const std::function<TensorT<S>(const TensorT<S>&)>& graph_loss_fn,
    std::span<const TensorT<S>> latent_leaves) {
    auto images = render_fn();
    auto loss = graph_loss_fn(images);
    auto grads = backward(loss, latent_leaves);
    return {loss.item(), grads};
}

// ---------------------------------------------------------------------------
// latent optimizer
// ---------------------------------------------------------------------------

template <class S>
struct LatentOptStateT {
    std::vector<TensorT<S>> feature_v;
    std::vector<std::vector<TensorT<S>>> style_v;
    TensorT<S> alpha_v;
};

template <class S>
LatentOptStateT<S> make_opt_state(const SynSetT<S>& synset) {
    LatentOptStateT<S> st;
    for (const auto& item : synset.items) {
        st.feature_v.push_back(TensorT<S>::zeros(item.feature.shape()));
        st.style_v.emplace_back();
        for (const auto& s : item.styles) st.style_v.back().push_back(TensorT<S>::zeros(s.shape()));
    }
    st.alpha_v = TensorT<S>::zeros({1});
    return st;
}

namespace detail {

constexpr double kAlphaFloor = 1e-8;

template <class S>
void sgd_in_place(TensorT<S>& value, const TensorT<S>& grad, TensorT<S>& velocity, double lr,
                  double momentum) {
    for (int64_t i = 0; i < value.numel(); ++i) {
        auto& v = velocity.data_mut()[i];
        v = static_cast<S>(momentum) * v + grad.data()[i];
        value.data_mut()[i] -= static_cast<S>(lr) * v;
    }
}

}  // namespace detail

// SGD with momentum over the optimized leaves of [item_begin, item_end).
// Learning rate is latent_lr for features and pixels and latent_lr/10 for
// style codes; alpha moves with alpha_lr and is clamped positive.
template <class S>
void latent_sgd_step(SynSetT<S>& synset, const LeafSetT<S>& leaves, const GradientSetT<S>& grads,
                     const DistillConfig& cfg, LatentOptStateT<S>& state, int64_t item_begin = 0,
                     int64_t item_end = -1, bool with_alpha = false) {
    if (item_end < 0) item_end = static_cast<int64_t>(synset.items.size());
    for (int64_t i = item_begin; i < item_end; ++i) {
        auto& item = synset.items[static_cast<size_t>(i)];
        const auto& leaf = leaves.items[static_cast<size_t>(i)];
        if (leaves.optimize_features) {
            require(grads.contains(leaf.feature), "latent_sgd_step: missing gradient for item ", i,
                    " feature");
            detail::sgd_in_place(item.feature, grads.at(leaf.feature),
                                 state.feature_v[static_cast<size_t>(i)], cfg.latent_lr, cfg.momentum);
        }
        for (size_t k = 0; k < item.styles.size(); ++k) {
            require(grads.contains(leaf.styles[k]), "latent_sgd_step: missing gradient for item ", i,
                    " style ", k);
            detail::sgd_in_place(item.styles[k], grads.at(leaf.styles[k]),
                                 state.style_v[static_cast<size_t>(i)][k], cfg.latent_lr / 10.0,
                                 cfg.momentum);
        }
    }
    if (with_alpha && leaves.optimize_alpha) {
        require(grads.contains(leaves.alpha), "latent_sgd_step: missing gradient for alpha");
        detail::sgd_in_place(synset.alpha, grads.at(leaves.alpha), state.alpha_v, cfg.alpha_lr,
                             cfg.momentum);
        if (synset.alpha.item() <= S(0)) {
            synset.alpha.data_mut()[0] = static_cast<S>(detail::kAlphaFloor);
        }
    }
}

// ---------------------------------------------------------------------------
// synset initialization
// ---------------------------------------------------------------------------

template <class S>
SynSetT<S> init_synset(const DistillConfig& cfg, const DatasetT<S>& data, const GenSpec* gen_spec,
                       const std::type_identity_t<GenParamsT<S>>* gen_params) {
    cfg.validate();
    SynSetT<S> synset;
    synset.space = cfg.space;
    synset.classes = data.classes;
    synset.ipc = cfg.ipc;
    synset.alpha = TensorT<S>::from({1}, {static_cast<S>(cfg.alpha_init)});

    const bool pixel = cfg.space.kind == SpaceSpec::Kind::pixel;
    if (!pixel) {
        require(gen_spec != nullptr && gen_params != nullptr,
                "distill: space '", cfg.space.str(), "' requires a generator");
        require(gen_spec->out_size == data.image_size() && gen_spec->img_channels == data.channels(),
                "distill: generator output geometry does not match the dataset");
        if (cfg.space.kind == SpaceSpec::Kind::fcut) {
            require(cfg.space.cut <= gen_spec->blocks, "distill: cut ", cfg.space.cut,
                    " exceeds generator depth ", gen_spec->blocks);
        }
        synset.generator = *gen_spec;
        synset.generator_hash = generator_hash(*gen_params);
    }

    Rng rng(seed_chain(cfg.seed, 0x696e6974ull));
    for (int64_t c = 0; c < data.classes; ++c) {
        if (pixel) {
            const auto pool = data.train_indices_of_class(c);
            require(!pool.empty(), "distill: class ", c, " has no training images");
            for (int64_t j = 0; j < cfg.ipc; ++j) {
                GenLatentT<S> item;
                item.cut = 0;
                if (cfg.pixel_init == "real") {
                    const int64_t pick = pool[rng.randint(pool.size())];
                    auto img = index_select(data.images, {pick});
                    item.feature =
                        reshape(img, {data.channels(), data.image_size(), data.image_size()}).clone_values();
                } else {
                    std::vector<S> v(static_cast<size_t>(data.channels() * data.image_size() * data.image_size()));
                    for (int64_t ch = 0; ch < data.channels(); ++ch) {
                        const double mu = data.channel_mean[static_cast<size_t>(ch)];
                        const double sd = data.channel_std[static_cast<size_t>(ch)];
                        for (int64_t p = 0; p < data.image_size() * data.image_size(); ++p) {
                            v[static_cast<size_t>(ch * data.image_size() * data.image_size() + p)] =
                                static_cast<S>(std::clamp(rng.normal(mu, sd), -1.0, 1.0));
                        }
                    }
                    item.feature = TensorT<S>::from({data.channels(), data.image_size(), data.image_size()},
                                                    std::move(v));
                }
                synset.items.push_back(std::move(item));
                synset.labels.push_back(static_cast<int32_t>(c));
            }
        } else {
            const int64_t cut = cfg.space.kind == SpaceSpec::Kind::wplus ? 0 : cfg.space.cut;
            auto latents = init_latents(*gen_spec, *gen_params, cfg.init_mode, c, cfg.ipc, cut, rng,
                                        cfg.moment_samples);
            for (auto& l : latents) {
                synset.items.push_back(std::move(l));
                synset.labels.push_back(static_cast<int32_t>(c));
            }
        }
    }
    synset.validate();
    return synset;
}

// ---------------------------------------------------------------------------
// distillation loop
// ---------------------------------------------------------------------------

template <class S>
struct DistillResult {
    SynSetT<S> synset;
    std::vector<double> losses;  // one entry per iteration
};

namespace detail {

template <class S>
std::vector<int64_t> sample_class_batch(const DatasetT<S>& data, int64_t cls, int64_t count, Rng& rng) {
    const auto pool = data.train_indices_of_class(cls);
    require(!pool.empty(), "distill: class ", cls, " has no training images");
    std::vector<int64_t> idx;
    for (int64_t i = 0; i < count; ++i) idx.push_back(pool[rng.randint(pool.size())]);
    return idx;
}

}  // namespace detail

template <class S>
DistillResult<S> distill(const DistillConfig& cfg, const DatasetT<S>& data, const GenSpec* gen_spec,
                         const std::type_identity_t<GenParamsT<S>>* gen_params,
                         const std::type_identity_t<TrajBufferT<S>>* expert_buffer) {
    cfg.validate();
    require(cfg.method != Method::mtt || expert_buffer != nullptr,
            "distill: method mtt requires an expert buffer");
    if (cfg.method == Method::mtt && expert_buffer) {
        require(expert_buffer->spec.classes == data.classes,
                "distill: expert buffer class count does not match the dataset");
    }

    DistillResult<S> result;
    result.synset = init_synset(cfg, data, gen_spec, gen_params);
    auto& synset = result.synset;
    const bool pixel = cfg.space.kind == SpaceSpec::Kind::pixel;
    auto leaves = make_leaves(synset, cfg.method == Method::mtt && cfg.optimize_alpha);
    auto opt_state = make_opt_state(synset);
    const int64_t n_items = static_cast<int64_t>(synset.items.size());
    const int64_t size = data.image_size();

    std::optional<StrictFiniteGuard> strict;
    if (cfg.strict) strict.emplace();

    for (int64_t it = 0; it < cfg.iterations; ++it) {
        const AugParams aug = cfg.use_aug ? sample_aug_params(cfg.seed, static_cast<uint64_t>(it), size,
                                                              cfg.aug_strategy)
                                          : AugParams::identity();
        double iter_loss = 0.0;

        if (cfg.method == Method::dc) {
            auto theta = init_params<S>(cfg.backbone, seed_chain(cfg.seed, 0xdc00ull, static_cast<uint64_t>(it)));
            Rng real_rng(seed_chain(cfg.seed, 0x7265616cull, static_cast<uint64_t>(it)));
            for (int64_t ol = 0; ol < cfg.dc_outer; ++ol) {
                for (int64_t c = 0; c < data.classes; ++c) {
                    const auto real_idx = detail::sample_class_batch(data, c, cfg.real_batch, real_rng);
                    std::vector<int32_t> real_labels(real_idx.size(), static_cast<int32_t>(c));
                    TensorT<S> real_batch;
                    {
                        NoGradGuard no_grad;
                        real_batch = apply_aug(index_select(data.images, real_idx), aug);
                    }
                    std::vector<int32_t> syn_labels(static_cast<size_t>(cfg.ipc), static_cast<int32_t>(c));
                    const int64_t begin = c * cfg.ipc, end = (c + 1) * cfg.ipc;
                    auto render_fn = [&] {
                        return render_items(synset, leaves, gen_params, begin, end, cfg.gen_batch);
                    };
                    auto graph_loss = [&](const TensorT<S>& images) {
                        return dc_loss(apply_aug(images, aug), syn_labels, real_batch, real_labels,
                                       cfg.backbone, ParamVectorT<S>{theta.flat, theta.layout},
                                       cfg.dc_per_layer);
                    };
                    auto wrt = leaves.leaves(begin, end, false);
                    auto [loss, grads] = checkpointed_syn_grad<S>(
                        render_fn, engine_boundary<S>(graph_loss), wrt);
                    iter_loss += loss;
                    latent_sgd_step(synset, leaves, grads, cfg, opt_state, begin, end, false);
                }
                // a few plain training steps of theta on the current synthetic set
                for (int64_t s = 0; s < cfg.dc_net_steps; ++s) {
                    TensorT<S> images;
                    {
                        NoGradGuard no_grad;
                        images = apply_aug(render_items(synset, leaves, gen_params, 0, n_items, cfg.gen_batch),
                                           aug);
                    }
                    auto theta_leaf = theta.flat.tracked_leaf();
                    auto g = backward_one(
                        cross_entropy_loss(
                            forward_logits(cfg.backbone, ParamVectorT<S>{theta_leaf, theta.layout}, images),
                            synset.labels),
                        theta_leaf);
                    for (int64_t i = 0; i < theta.flat.numel(); ++i) {
                        theta.flat.data_mut()[i] -= static_cast<S>(cfg.dc_net_lr) * g.data()[i];
                    }
                }
            }
        } else if (cfg.method == Method::dm) {
            auto psi = init_params<S>(cfg.backbone, seed_chain(cfg.seed, 0xd300ull, static_cast<uint64_t>(it)));
            Rng real_rng(seed_chain(cfg.seed, 0x7265616cull, static_cast<uint64_t>(it)));
            std::vector<TensorT<S>> real_per_class;
            {
                NoGradGuard no_grad;
                for (int64_t c = 0; c < data.classes; ++c) {
                    const auto idx = detail::sample_class_batch(data, c, cfg.real_batch, real_rng);
                    real_per_class.push_back(apply_aug(index_select(data.images, idx), aug));
                }
            }
            auto render_fn = [&] { return render_items(synset, leaves, gen_params, 0, n_items, cfg.gen_batch); };
            auto graph_loss = [&](const TensorT<S>& images) {
                auto augmented = apply_aug(images, aug);
                std::vector<TensorT<S>> syn_per_class;
                for (int64_t c = 0; c < data.classes; ++c) {
                    syn_per_class.push_back(slice_axis0(augmented, c * cfg.ipc, cfg.ipc));
                }
                return dm_loss(syn_per_class, real_per_class, cfg.backbone,
                               ParamVectorT<S>{psi.flat, psi.layout});
            };
            auto wrt = leaves.leaves(0, n_items, false);
            auto [loss, grads] =
                checkpointed_syn_grad<S>(render_fn, engine_boundary<S>(graph_loss), wrt);
            iter_loss = loss;
            latent_sgd_step(synset, leaves, grads, cfg, opt_state, 0, n_items, false);
        } else {
            Rng seg_rng(seed_chain(cfg.seed, 0x6d7474ull, static_cast<uint64_t>(it)));
            auto segment = sample_expert_segment(*expert_buffer, cfg.mtt, seg_rng);
            const uint64_t student_seed = seed_chain(cfg.seed, 0x73747564ull, static_cast<uint64_t>(it));
            auto render_fn = [&] { return render_items(synset, leaves, gen_params, 0, n_items, cfg.gen_batch); };
            auto loss_fn = [&](const TensorT<S>& images_leaf) {
                auto augmented = cfg.use_aug ? apply_aug(images_leaf, aug) : images_leaf;
                std::vector<TensorT<S>> wrt{images_leaf};
                if (leaves.optimize_alpha) wrt.push_back(leaves.alpha);
                ImageLossGrad<S> out;
                if (cfg.mtt_backward == MttBackward::constmem) {
                    auto [loss, grads] = mtt_grad_constmem<S>(augmented, synset.labels, leaves.alpha,
                                                              segment, cfg.backbone, cfg.mtt, student_seed,
                                                              std::span<const TensorT<S>>(wrt));
                    out.loss = loss;
                    out.image_grad = grads.at(images_leaf);
                    if (leaves.optimize_alpha) out.extra.emplace_back(leaves.alpha.node().get(), grads.at(leaves.alpha));
                } else {
                    auto [loss, grads] = mtt_loss_unrolled<S>(augmented, synset.labels, leaves.alpha,
                                                              segment, cfg.backbone, cfg.mtt, student_seed,
                                                              std::span<const TensorT<S>>(wrt));
                    out.loss = loss.item();
                    out.image_grad = grads.at(images_leaf).detached();
                    if (leaves.optimize_alpha) {
                        out.extra.emplace_back(leaves.alpha.node().get(), grads.at(leaves.alpha).detached());
                    }
                }
                return out;
            };
            auto wrt = leaves.leaves(0, n_items, true);
            auto [loss, grads] = checkpointed_syn_grad<S>(render_fn, loss_fn, wrt);
            iter_loss = loss;
            latent_sgd_step(synset, leaves, grads, cfg, opt_state, 0, n_items, true);
        }

        if (pixel && cfg.pixel_clamp) {
            for (auto& item : synset.items) {
                for (int64_t i = 0; i < item.feature.numel(); ++i) {
                    auto& v = item.feature.data_mut()[i];
                    v = std::clamp(v, S(-1), S(1));
                }
            }
        }
        require(std::isfinite(iter_loss) || !cfg.strict, "distill: non-finite loss at iteration ", it);
        result.losses.push_back(iter_loss);
    }
    return result;
}

// Renders the final distilled set to images (values, not a graph).
template <class S>
TensorT<S> render_synset(const SynSetT<S>& synset, const std::type_identity_t<GenParamsT<S>>* gen_params,
                         int64_t gen_batch = 16) {
    NoGradGuard no_grad;
    LeafSetT<S> plain;
    plain.items = synset.items;
    plain.alpha = synset.alpha;
    return render_items(synset, plain, gen_params, 0, static_cast<int64_t>(synset.items.size()), gen_batch);
}

// ---------------------------------------------------------------------------
// GLADSYNS container
// ---------------------------------------------------------------------------

template <class S>
void save_synset(const SynSetT<S>& synset, const std::filesystem::path& path) {
    synset.validate();
    BlobWriter w;
    w.magic("GLADSYNS", 1);
    w.str(synset.space.str());
    w.u32(static_cast<uint32_t>(synset.ipc));
    w.u32(static_cast<uint32_t>(synset.classes));
    w.u32(synset.generator.has_value() ? 1 : 0);
    if (synset.generator) write_gen_spec(w, *synset.generator);
    w.u64(synset.generator_hash);
    w.f64(static_cast<double>(synset.alpha.item()));
    w.u32(static_cast<uint32_t>(synset.items.size()));
    for (const auto& item : synset.items) {
        w.i64(item.cut);
        w.shape(item.feature.shape());
        auto wide = item.feature.template cast<double>();
        w.f64_array(wide.data(), static_cast<size_t>(wide.numel()));
        w.u32(static_cast<uint32_t>(item.styles.size()));
        for (const auto& s : item.styles) {
            w.shape(s.shape());
            auto ws = s.template cast<double>();
            w.f64_array(ws.data(), static_cast<size_t>(ws.numel()));
        }
    }
    w.save(path);
}

template <class S = double>
SynSetT<S> load_synset(const std::filesystem::path& path) {
    auto r = BlobReader::load(path);
    r.magic("GLADSYNS", 1);
    SynSetT<S> synset;
    synset.space = SpaceSpec::parse(r.str());
    synset.ipc = r.u32();
    synset.classes = r.u32();
    if (r.u32() != 0) synset.generator = read_gen_spec(r);
    synset.generator_hash = r.u64();
    synset.alpha = TensorT<S>::from({1}, {static_cast<S>(r.f64())});
    const uint32_t count = r.u32();
    require(count == static_cast<uint32_t>(synset.ipc * synset.classes), path.string(),
            ": item count mismatch");
    for (uint32_t i = 0; i < count; ++i) {
        GenLatentT<S> item;
        item.cut = r.i64();
        auto fshape = r.shape();
        auto fvals = r.f64_array();
        require(static_cast<int64_t>(fvals.size()) == shape_numel(fshape), path.string(),
                ": latent payload mismatch");
        std::vector<S> fv(fvals.begin(), fvals.end());
        item.feature = TensorT<S>::from(fshape, std::move(fv));
        const uint32_t n_styles = r.u32();
        for (uint32_t k = 0; k < n_styles; ++k) {
            auto sshape = r.shape();
            auto svals = r.f64_array();
            require(static_cast<int64_t>(svals.size()) == shape_numel(sshape), path.string(),
                    ": style payload mismatch");
            std::vector<S> sv(svals.begin(), svals.end());
            item.styles.push_back(TensorT<S>::from(sshape, std::move(sv)));
        }
        synset.items.push_back(std::move(item));
        synset.labels.push_back(static_cast<int32_t>(i / static_cast<uint32_t>(synset.ipc)));
    }
    r.expect_end();
    synset.validate();
    return synset;
}

}  // namespace glad
