#pragma once

#include <span>
#include <vector>

#include "glad/io/blob.hpp"
#include "glad/params.hpp"
#include "glad/tensor/ops.hpp"

namespace glad {

// Conditional style-modulated generator. A mapping MLP turns (z, class) into
// a style code w; the synthesis stack starts from a learned constant and
// applies B blocks of [upsample x2 -> conv3x3 -> per-channel scale/shift from
// affine(w_k) -> leaky-relu], then a 1x1 conv and tanh. Optimizable latent
// spaces are the block-n input feature ("cut n") together with the style
// codes of all remaining blocks; cut B degenerates to raw pixels.
struct GenSpec {
    int64_t z_dim = 64;
    int64_t w_dim = 64;
    int64_t blocks = 4;
    int64_t base_size = 2;
    int64_t base_channels = 128;
    int64_t out_size = 32;
    int64_t classes = 10;
    int64_t img_channels = 3;
    uint64_t seed = 0;

    void validate() const {
        require(blocks >= 2, "gen spec: need at least 2 blocks, got ", blocks);
        require(base_size << blocks == out_size, "gen spec: base ", base_size, " x 2^", blocks,
                " != out ", out_size);
        require(z_dim >= 1 && w_dim >= 1 && classes >= 1 && img_channels >= 1, "gen spec: bad dims");
    }

    // channels entering block k; k == blocks is the final conv input
    int64_t channels_in(int64_t k) const {
        return std::max<int64_t>(base_channels >> k, 8);
    }

    int64_t size_in(int64_t k) const { return base_size << k; }

    // shape of the optimizable feature at a given cut (no batch dim)
    Shape feature_shape(int64_t cut) const {
        require(cut >= 0 && cut <= blocks, "gen spec: cut ", cut, " outside [0,", blocks, "]");
        if (cut == blocks) return {img_channels, out_size, out_size};
        return {channels_in(cut), size_in(cut), size_in(cut)};
    }

    bool operator==(const GenSpec&) const = default;
};

template <class S>
using GenParamsT = ParamVectorT<S>;
using GenParams = GenParamsT<double>;

// One synthetic sample's latent code: the feature entering block `cut` plus
// one style vector per remaining block.
template <class S>
struct GenLatentT {
    int64_t cut = 0;
    TensorT<S> feature;               // feature_shape(cut)
    std::vector<TensorT<S>> styles;   // blocks - cut entries, each [w_dim]

    int64_t optimizable_scalars() const {
        int64_t n = feature.numel();
        for (const auto& s : styles) n += s.numel();
        return n;
    }
};

using GenLatent = GenLatentT<double>;

inline ParamLayoutPtr gen_layout(const GenSpec& spec) {
    spec.validate();
    auto layout = std::make_shared<ParamLayout>();
    layout->add("embed", {spec.classes, spec.w_dim});
    layout->add("map0.w", {spec.z_dim + spec.w_dim, 2 * spec.w_dim});
    layout->add("map0.b", {2 * spec.w_dim});
    layout->add("map1.w", {2 * spec.w_dim, spec.w_dim});
    layout->add("map1.b", {spec.w_dim});
    layout->add("const", {spec.channels_in(0), spec.base_size, spec.base_size});
    for (int64_t k = 0; k < spec.blocks; ++k) {
        const auto tag = "blk" + std::to_string(k);
        layout->add(tag + ".conv.w", {spec.channels_in(k + 1), spec.channels_in(k), 3, 3});
        layout->add(tag + ".conv.b", {spec.channels_in(k + 1)});
        layout->add(tag + ".affine.w", {spec.w_dim, 2 * spec.channels_in(k + 1)});
        layout->add(tag + ".affine.b", {2 * spec.channels_in(k + 1)});
    }
    layout->add("out.w", {spec.img_channels, spec.channels_in(spec.blocks), 1, 1});
    layout->add("out.b", {spec.img_channels});
    return layout;
}

// Random (untrained) generator weights; the default prior. Affine biases for
// the scale half start at 1 so modulation begins near identity.
template <class S = double>
GenParamsT<S> init_generator(const GenSpec& spec) {
    auto layout = gen_layout(spec);
    Rng rng(seed_chain(spec.seed, 0x67656e77ull));
    std::vector<S> vals(static_cast<size_t>(layout->total), S(0));
    for (const auto& e : layout->entries) {
        if (e.name.ends_with(".conv.b") || e.name == "out.b" || e.name.ends_with("map0.b") ||
            e.name.ends_with("map1.b")) {
            continue;  // zero biases
        }
        if (e.name.ends_with(".affine.b")) {
            const int64_t c = shape_numel(e.shape) / 2;
            for (int64_t i = 0; i < c; ++i) vals[static_cast<size_t>(e.offset + i)] = S(1);
            continue;
        }
        double stdev = 1.0;
        if (e.shape.size() == 4) {
            stdev = std::sqrt(2.0 / static_cast<double>(e.shape[1] * e.shape[2] * e.shape[3]));
        } else if (e.shape.size() == 2 && e.name != "embed") {
            stdev = std::sqrt(2.0 / static_cast<double>(e.shape[0]));
        }
        for (int64_t i = 0; i < shape_numel(e.shape); ++i) {
            vals[static_cast<size_t>(e.offset + i)] = static_cast<S>(rng.normal(0.0, stdev));
        }
    }
    return {TensorT<S>::from({layout->total}, std::move(vals)), layout};
}

namespace detail {

// [N,a] ++ [N,b] -> [N,a+b] along columns
template <class S>
TensorT<S> concat_cols(const TensorT<S>& a, const TensorT<S>& b) {
    return transpose2d(concat_axis0<S>({transpose2d(a), transpose2d(b)}));
}

template <class S>
TensorT<S> col_slice(const TensorT<S>& x, int64_t start, int64_t len) {
    return transpose2d(slice_axis0(transpose2d(x), start, len));
}

}  // namespace detail

// Batched mapping network: rows of z with per-row class labels -> rows of w.
// The class embedding is the only place class information enters.
template <class S>
TensorT<S> map_rows(const GenSpec& spec, const GenParamsT<S>& params,
                    const std::vector<int64_t>& classes, const TensorT<S>& z_rows) {
    require(z_rows.rank() == 2 && z_rows.dim(1) == spec.z_dim, "map_rows: z must be [N,",
            spec.z_dim, "], got ", shape_str(z_rows.shape()));
    require(static_cast<int64_t>(classes.size()) == z_rows.dim(0), "map_rows: class count mismatch");
    for (int64_t c : classes) {
        require(c >= 0 && c < spec.classes, "map_rows: class ", c, " outside [0,", spec.classes, ")");
    }
    auto embed = param_view(params, "embed");
    auto x = detail::concat_cols(z_rows, index_select(embed, classes));
    auto h = leaky_relu(bias_rows(matmul(x, param_view(params, "map0.w")), param_view(params, "map0.b")), 0.2);
    return bias_rows(matmul(h, param_view(params, "map1.w")), param_view(params, "map1.b"));
}

template <class S>
TensorT<S> map_latent(const GenSpec& spec, const GenParamsT<S>& params, int64_t cls,
                      const TensorT<S>& z) {
    require(z.numel() == spec.z_dim, "map_latent: z has ", z.numel(), " dims, spec wants ", spec.z_dim);
    auto w = map_rows(spec, params, {cls}, reshape(z, {1, spec.z_dim}));
    return reshape(w, {spec.w_dim});
}

// One synthesis block on a batch: upsample, conv, style scale/shift, leaky relu.
template <class S>
TensorT<S> synth_block(const GenSpec& spec, const GenParamsT<S>& params, int64_t k,
                       const TensorT<S>& x, const TensorT<S>& w_rows) {
    const auto tag = "blk" + std::to_string(k);
    auto h = upsample_nearest(x, 2);
    h = conv2d(h, param_view(params, tag + ".conv.w"), 1);
    h = bias_nchw(h, param_view(params, tag + ".conv.b"));
    auto st = bias_rows(matmul(w_rows, param_view(params, tag + ".affine.w")),
                        param_view(params, tag + ".affine.b"));
    const int64_t c = spec.channels_in(k + 1);
    h = channel_scale_shift(h, detail::col_slice(st, 0, c), detail::col_slice(st, c, c));
    return leaky_relu(h, 0.2);
}

template <class S>
TensorT<S> synth_tail(const GenSpec& spec, const GenParamsT<S>& params, const TensorT<S>& x) {
    auto h = conv2d(x, param_view(params, "out.w"), 0);
    h = bias_nchw(h, param_view(params, "out.b"));
    return tanh(h);
}

// Runs synthesis from a stack of same-cut latents; output is [N,img,H,W].
// Cut B is the identity on the stored pixels.
template <class S>
TensorT<S> synth_batch(const GenSpec& spec, const GenParamsT<S>& params,
                       std::span<const GenLatentT<S>> latents) {
    require(!latents.empty(), "synth_batch: no latents");
    const int64_t cut = latents[0].cut;
    const auto feat_shape = spec.feature_shape(cut);
    std::vector<TensorT<S>> feats;
    for (const auto& l : latents) {
        require(l.cut == cut, "synth_batch: mixed cuts ", cut, " and ", l.cut);
        require(l.feature.shape() == feat_shape, "synth_batch: feature is ",
                shape_str(l.feature.shape()), ", cut ", cut, " expects ", shape_str(feat_shape));
        require(static_cast<int64_t>(l.styles.size()) == spec.blocks - cut,
                "synth_batch: latent has ", l.styles.size(), " styles, cut ", cut, " expects ",
                spec.blocks - cut);
        Shape batched = feat_shape;
        batched.insert(batched.begin(), 1);
        feats.push_back(reshape(l.feature, batched));
    }
    auto x = feats.size() == 1 ? feats[0] : concat_axis0(feats);
    if (cut == spec.blocks) return x;

    for (int64_t k = cut; k < spec.blocks; ++k) {
        std::vector<TensorT<S>> rows;
        for (const auto& l : latents) rows.push_back(reshape(l.styles[k - cut], {1, spec.w_dim}));
        auto w_rows = rows.size() == 1 ? rows[0] : concat_axis0(rows);
        x = synth_block(spec, params, k, x, w_rows);
    }
    return synth_tail(spec, params, x);
}

template <class S>
TensorT<S> synth_from(const GenSpec& spec, const GenParamsT<S>& params, const GenLatentT<S>& latent) {
    if (latent.cut == spec.blocks) {
        require(latent.feature.shape() == spec.feature_shape(latent.cut),
                "synth_from: pixel latent has shape ", shape_str(latent.feature.shape()));
        return latent.feature;  // identity on stored pixels
    }
    std::span<const GenLatentT<S>> one(&latent, 1);
    auto img = synth_batch(spec, params, one);
    return reshape(img, spec.feature_shape(spec.blocks));
}

// Mapping once, style broadcast to every block, synthesis up to the cut.
// Produces plain values (no graph); the distillation engine re-leafs them.
template <class S>
GenLatentT<S> partial_forward(const GenSpec& spec, const GenParamsT<S>& params, int64_t cls,
                              const TensorT<S>& z, int64_t cut) {
    require(cut >= 0 && cut <= spec.blocks, "partial_forward: cut ", cut, " outside [0,", spec.blocks, "]");
    NoGradGuard no_grad;
    auto w_row = map_rows(spec, params, {cls}, reshape(z, {1, spec.z_dim}));
    auto w = reshape(w_row, {spec.w_dim});

    GenLatentT<S> latent;
    latent.cut = cut;
    for (int64_t k = cut; k < spec.blocks; ++k) latent.styles.push_back(w.clone_values());

    auto x = reshape(param_view(params, "const"), spec.feature_shape(0));
    if (cut == 0) {
        latent.feature = x.clone_values();
        return latent;
    }
    Shape batched = spec.feature_shape(0);
    batched.insert(batched.begin(), 1);
    x = reshape(x, batched);
    for (int64_t k = 0; k < std::min(cut, spec.blocks); ++k) {
        x = synth_block(spec, params, k, x, w_row);
    }
    if (cut == spec.blocks) x = synth_tail(spec, params, x);
    latent.feature = reshape(x, spec.feature_shape(cut)).clone_values();
    return latent;
}

template <class S>
TensorT<S> full_forward(const GenSpec& spec, const GenParamsT<S>& params, int64_t cls,
                        const TensorT<S>& z) {
    return synth_from(spec, params, partial_forward(spec, params, cls, z, 0));
}

enum class LatentInit { feedforward, gaussian };

inline LatentInit latent_init_from(const std::string& s) {
    if (s == "feedforward") return LatentInit::feedforward;
    if (s == "gaussian") return LatentInit::gaussian;
    fail("unknown latent init '", s, "'");
}

// Per-coordinate empirical mean/variance of feed-forward features at a cut,
// estimated from m fresh samples of one class.
template <class S>
std::pair<std::vector<double>, std::vector<double>> feature_moments(
    const GenSpec& spec, const GenParamsT<S>& params, int64_t cls, int64_t cut, int64_t m, Rng& rng) {
    require(m >= 2, "feature_moments: need m >= 2, got ", m);
    NoGradGuard no_grad;
    const auto fshape = spec.feature_shape(cut);
    const int64_t dim = shape_numel(fshape);
    std::vector<double> sum(static_cast<size_t>(dim), 0.0);
    std::vector<double> sumsq(static_cast<size_t>(dim), 0.0);

    const int64_t chunk = 256;
    for (int64_t done = 0; done < m; done += chunk) {
        const int64_t n = std::min(chunk, m - done);
        std::vector<S> zs(static_cast<size_t>(n * spec.z_dim));
        for (auto& v : zs) v = static_cast<S>(rng.normal());
        auto w_rows = map_rows(spec, params, std::vector<int64_t>(n, cls),
                               TensorT<S>::from({n, spec.z_dim}, std::move(zs)));
        auto base = param_view(params, "const");
        Shape batched{1, spec.channels_in(0), spec.base_size, spec.base_size};
        auto x = reshape(base, batched);
        std::vector<TensorT<S>> copies(static_cast<size_t>(n), x);
        x = n == 1 ? x : concat_axis0(copies);
        for (int64_t k = 0; k < cut; ++k) x = synth_block(spec, params, k, x, w_rows);
        if (cut == spec.blocks) x = synth_tail(spec, params, x);
        for (int64_t i = 0; i < n; ++i) {
            for (int64_t j = 0; j < dim; ++j) {
                const double v = static_cast<double>(x.data()[i * dim + j]);
                sum[static_cast<size_t>(j)] += v;
                sumsq[static_cast<size_t>(j)] += v * v;
            }
        }
    }
    std::vector<double> mean(static_cast<size_t>(dim)), var(static_cast<size_t>(dim));
    for (int64_t j = 0; j < dim; ++j) {
        mean[j] = sum[j] / static_cast<double>(m);
        var[j] = std::max(0.0, sumsq[j] / static_cast<double>(m) - mean[j] * mean[j]);
    }
    return {std::move(mean), std::move(var)};
}

// feedforward: fresh z through the partial pass. gaussian: feature sampled
// coordinate-wise from the empirical feed-forward moments, styles still from
// fresh mapping passes.
template <class S>
std::vector<GenLatentT<S>> init_latents(const GenSpec& spec, const GenParamsT<S>& params,
                                        LatentInit mode, int64_t cls, int64_t count, int64_t cut,
                                        Rng& rng, int64_t moment_samples = 1024) {
    require(count >= 1, "init_latents: count must be >= 1");
    std::vector<GenLatentT<S>> out;
    if (mode == LatentInit::feedforward) {
        for (int64_t i = 0; i < count; ++i) {
            std::vector<S> zv(static_cast<size_t>(spec.z_dim));
            for (auto& v : zv) v = static_cast<S>(rng.normal());
            out.push_back(partial_forward(spec, params, cls, TensorT<S>::from({spec.z_dim}, std::move(zv)), cut));
        }
        return out;
    }
    auto [mean, var] = feature_moments(spec, params, cls, cut, moment_samples, rng);
    const auto fshape = spec.feature_shape(cut);
    for (int64_t i = 0; i < count; ++i) {
        GenLatentT<S> latent;
        latent.cut = cut;
        std::vector<S> fv(mean.size());
        for (size_t j = 0; j < fv.size(); ++j) {
            fv[j] = static_cast<S>(rng.normal(mean[j], std::sqrt(var[j])));
        }
        latent.feature = TensorT<S>::from(fshape, std::move(fv));
        std::vector<S> zv(static_cast<size_t>(spec.z_dim));
        for (auto& v : zv) v = static_cast<S>(rng.normal());
        auto w = map_latent(spec, params, cls, TensorT<S>::from({spec.z_dim}, std::move(zv))).detached();
        for (int64_t k = cut; k < spec.blocks; ++k) latent.styles.push_back(w.clone_values());
        out.push_back(std::move(latent));
    }
    return out;
}

// ---------------------------------------------------------------------------
// GLADGENW container
// ---------------------------------------------------------------------------

inline void write_gen_spec(BlobWriter& w, const GenSpec& spec) {
    w.i64(spec.z_dim);
    w.i64(spec.w_dim);
    w.i64(spec.blocks);
    w.i64(spec.base_size);
    w.i64(spec.base_channels);
    w.i64(spec.out_size);
    w.i64(spec.classes);
    w.i64(spec.img_channels);
    w.u64(spec.seed);
}

inline GenSpec read_gen_spec(BlobReader& r) {
    GenSpec s;
    s.z_dim = r.i64();
    s.w_dim = r.i64();
    s.blocks = r.i64();
    s.base_size = r.i64();
    s.base_channels = r.i64();
    s.out_size = r.i64();
    s.classes = r.i64();
    s.img_channels = r.i64();
    s.seed = r.u64();
    s.validate();
    return s;
}

template <class S>
uint64_t generator_hash(const GenParamsT<S>& params) {
    const auto tmp = params.flat.template cast<double>();
    return fnv1a64(tmp.data(), sizeof(double) * static_cast<size_t>(tmp.numel()));
}

template <class S>
void save_generator(const GenSpec& spec, const GenParamsT<S>& params, const std::filesystem::path& path) {
    BlobWriter w;
    w.magic("GLADGENW", 1);
    write_gen_spec(w, spec);
    const auto flat = params.flat.template cast<double>();
    w.f64_array(flat.data(), static_cast<size_t>(flat.numel()));
    w.save(path);
}

template <class S = double>
std::pair<GenSpec, GenParamsT<S>> load_generator(const std::filesystem::path& path) {
    auto r = BlobReader::load(path);
    r.magic("GLADGENW", 1);
    const GenSpec spec = read_gen_spec(r);
    auto vals = r.f64_array();
    r.expect_end();
    auto layout = gen_layout(spec);
    require(static_cast<int64_t>(vals.size()) == layout->total, path.string(), ": weight payload has ",
            vals.size(), " values, layout expects ", layout->total);
    auto flat = Tensor::from({layout->total}, std::move(vals));
    if constexpr (std::is_same_v<S, double>) {
        return {spec, GenParamsT<S>{flat, layout}};
    } else {
        return {spec, GenParamsT<S>{flat.cast<S>(), layout}};
    }
}

// Decoder-style pretraining: fixed random latents, reconstruction loss on a
// sample of real images, SGD with momentum on the generator weights. Stands
// in for a trained prior without any adversarial machinery.
template <class S>
std::vector<double> pretrain_generator(const GenSpec& spec, GenParamsT<S>& params,
                                       const TensorT<S>& images, const std::vector<int32_t>& labels,
                                       int64_t steps, double lr, int64_t batch, Rng& rng) {
    require(images.rank() == 4 && images.dim(0) == static_cast<int64_t>(labels.size()),
            "pretrain_generator: images ", shape_str(images.shape()), " vs ", labels.size(), " labels");
    require(images.dim(2) == spec.out_size && images.dim(1) == spec.img_channels,
            "pretrain_generator: image geometry does not match the generator");
    const int64_t n = images.dim(0);
    std::vector<S> zs(static_cast<size_t>(n * spec.z_dim));
    for (auto& v : zs) v = static_cast<S>(rng.normal());
    auto z_all = TensorT<S>::from({n, spec.z_dim}, std::move(zs));

    std::vector<double> losses;
    auto momentum = TensorT<S>::zeros(params.flat.shape());
    for (int64_t step = 0; step < steps; ++step) {
        std::vector<int64_t> idx;
        for (int64_t i = 0; i < std::min(batch, n); ++i) idx.push_back(static_cast<int64_t>(rng.randint(n)));
        std::vector<int64_t> cls;
        for (int64_t i : idx) cls.push_back(labels[static_cast<size_t>(i)]);

        auto theta = params.flat.tracked_leaf();
        GenParamsT<S> live{theta, params.layout};
        auto w_rows = map_rows(spec, live, cls, index_select(z_all, idx));
        auto base = reshape(param_view(live, "const"), {1, spec.channels_in(0), spec.base_size, spec.base_size});
        std::vector<TensorT<S>> copies(idx.size(), base);
        auto x = idx.size() == 1 ? base : concat_axis0(copies);
        for (int64_t k = 0; k < spec.blocks; ++k) x = synth_block(spec, live, k, x, w_rows);
        x = synth_tail(spec, live, x);
        auto target = index_select(images, idx);
        auto diff = sub(x, target);
        auto loss = mean(mul(diff, diff));
        losses.push_back(loss.item());

        auto g = backward_one(loss, theta);
        for (int64_t i = 0; i < params.flat.numel(); ++i) {
            auto& m = momentum.data_mut()[i];
            m = S(0.9) * m + g.data()[i];
            params.flat.data_mut()[i] -= static_cast<S>(lr) * m;
        }
    }
    return losses;
}

}  // namespace glad
