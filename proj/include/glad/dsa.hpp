#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "glad/core/rng.hpp"
#include "glad/tensor/ops.hpp"

namespace glad {

// Differentiable siamese augmentation. One parameter set is sampled per
// iteration and applied identically to the real and synthetic batches; all
// transforms are differentiable in the pixel values (masks, grids and shifts
// are constants).
//
// Composition order: flip -> scale/rotate -> crop shift -> color -> cutout.

enum class AugStrategy { compose_all, single_random };

inline AugStrategy aug_strategy_from(const std::string& s) {
    if (s == "compose_all") return AugStrategy::compose_all;
    if (s == "single_random") return AugStrategy::single_random;
    fail("unknown augmentation strategy '", s, "'");
}

struct AugParams {
    bool flip = false;
    int64_t crop_dx = 0;
    int64_t crop_dy = 0;
    int64_t cutout_cx = 0;
    int64_t cutout_cy = 0;
    int64_t cutout_size = 0;
    double scale = 1.0;
    double rotate_deg = 0.0;
    double brightness = 0.0;  // additive, in [-1,1] pixel units
    double saturation = 1.0;
    double contrast = 1.0;

    static AugParams identity() { return AugParams{}; }

    bool operator==(const AugParams&) const = default;
};

// Sampling ranges (reference augmentation defaults):
//   flip p = 0.5; crop shift within +-ceil(size/8); cutout side ceil(size/2)
//   with a uniform center; scale in [0.8, 1.2]; rotation in [-15, 15] deg;
//   brightness in [-0.5, 0.5]; saturation in [0, 2]; contrast in [0.5, 1.5].
// Draw order is fixed (flip, crop, cutout, scale, rotate, color) so a given
// (seed, iteration) always produces the same parameters.
inline AugParams sample_aug_params(uint64_t seed, uint64_t iteration, int64_t image_size,
                                   AugStrategy strategy = AugStrategy::compose_all) {
    Rng rng(seed_chain(seed, 0x617567ull, iteration));
    AugParams p;
    const int64_t shift = (image_size + 7) / 8;
    p.flip = rng.bernoulli(0.5);
    p.crop_dx = static_cast<int64_t>(rng.randint(2 * shift + 1)) - shift;
    p.crop_dy = static_cast<int64_t>(rng.randint(2 * shift + 1)) - shift;
    p.cutout_size = (image_size + 1) / 2;
    p.cutout_cx = static_cast<int64_t>(rng.randint(image_size));
    p.cutout_cy = static_cast<int64_t>(rng.randint(image_size));
    p.scale = rng.uniform(0.8, 1.2);
    p.rotate_deg = rng.uniform(-15.0, 15.0);
    p.brightness = rng.uniform(-0.5, 0.5);
    p.saturation = rng.uniform(0.0, 2.0);
    p.contrast = rng.uniform(0.5, 1.5);

    if (strategy == AugStrategy::single_random) {
        const uint64_t keep = rng.randint(6);  // color, crop, cutout, flip, scale, rotate
        AugParams only;
        switch (keep) {
            case 0:
                only.brightness = p.brightness;
                only.saturation = p.saturation;
                only.contrast = p.contrast;
                break;
            case 1:
                only.crop_dx = p.crop_dx;
                only.crop_dy = p.crop_dy;
                break;
            case 2:
                only.cutout_cx = p.cutout_cx;
                only.cutout_cy = p.cutout_cy;
                only.cutout_size = p.cutout_size;
                break;
            case 3: only.flip = p.flip; break;
            case 4: only.scale = p.scale; break;
            default: only.rotate_deg = p.rotate_deg; break;
        }
        return only;
    }
    return p;
}

namespace detail {

template <class S>
TensorT<S> scale_rotate(const TensorT<S>& x, double scale_f, double angle_deg) {
    const int64_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const double theta = angle_deg * M_PI / 180.0;
    const double c = std::cos(theta), s = std::sin(theta);
    // output position p samples the input at R(-theta) p / scale
    std::vector<S> grid(static_cast<size_t>(n * h * w * 2));
    for (int64_t y = 0; y < h; ++y) {
        const double v = h == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(y) / static_cast<double>(h - 1);
        for (int64_t xx = 0; xx < w; ++xx) {
            const double u = w == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(xx) / static_cast<double>(w - 1);
            const double su = (c * u + s * v) / scale_f;
            const double sv = (-s * u + c * v) / scale_f;
            grid[(y * w + xx) * 2 + 0] = static_cast<S>(su);
            grid[(y * w + xx) * 2 + 1] = static_cast<S>(sv);
        }
    }
    for (int64_t b = 1; b < n; ++b) {
        std::copy(grid.begin(), grid.begin() + h * w * 2, grid.begin() + b * h * w * 2);
    }
    return grid_sample_bilinear(x, TensorT<S>::from({n, h, w, 2}, std::move(grid)));
}

template <class S>
TensorT<S> crop_shift(const TensorT<S>& x, int64_t dx, int64_t dy) {
    const int64_t h = x.dim(2), w = x.dim(3);
    const int64_t r = std::max(std::abs(dx), std::abs(dy));
    return crop2d(pad2d(x, r, r, r, r), r - dy, r - dx, h, w);
}

template <class S>
TensorT<S> channel_mean_broadcast(const TensorT<S>& x) {
    const int64_t c = x.dim(1);
    auto w_avg = TensorT<S>::full({1, c, 1, 1}, S(1) / static_cast<S>(c));
    auto m = conv2d(x, w_avg, 0);                      // [N,1,H,W]
    auto w_bc = TensorT<S>::full({c, 1, 1, 1}, S(1));  // broadcast back over channels
    return conv2d(m, w_bc, 0);
}

template <class S>
TensorT<S> image_mean_broadcast(const TensorT<S>& x) {
    const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    auto mu = scale(sum_axis1(reshape(x, {n, c * h * w})), 1.0 / static_cast<double>(c * h * w));
    return expand_nc(tile_axis1(mu, c), h, w);
}

template <class S>
TensorT<S> cutout(const TensorT<S>& x, int64_t cx, int64_t cy, int64_t size) {
    const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    std::vector<S> mask(static_cast<size_t>(x.numel()), S(1));
    const int64_t y0 = std::max<int64_t>(0, cy - size / 2);
    const int64_t y1 = std::min<int64_t>(h, cy - size / 2 + size);
    const int64_t x0 = std::max<int64_t>(0, cx - size / 2);
    const int64_t x1 = std::min<int64_t>(w, cx - size / 2 + size);
    for (int64_t p = 0; p < n * c; ++p) {
        for (int64_t y = y0; y < y1; ++y) {
            std::fill(mask.begin() + p * h * w + y * w + x0, mask.begin() + p * h * w + y * w + x1, S(0));
        }
    }
    return mul(x, TensorT<S>::from(x.shape(), std::move(mask)));
}

}  // namespace detail

template <class S>
TensorT<S> apply_aug(const TensorT<S>& images, const AugParams& p) {
    require(images.rank() == 4, "apply_aug: need NCHW, got ", shape_str(images.shape()));
    require(images.dim(2) == images.dim(3), "apply_aug: images must be square, got ",
            shape_str(images.shape()));
    auto x = images;
    if (p.flip) x = flip_w(x);
    if (p.scale != 1.0 || p.rotate_deg != 0.0) x = detail::scale_rotate(x, p.scale, p.rotate_deg);
    if (p.crop_dx != 0 || p.crop_dy != 0) x = detail::crop_shift(x, p.crop_dx, p.crop_dy);
    if (p.brightness != 0.0) x = add_const(x, p.brightness);
    if (p.saturation != 1.0) {
        auto m = detail::channel_mean_broadcast(x);
        x = add(scale(sub(x, m), p.saturation), m);
    }
    if (p.contrast != 1.0) {
        auto m = detail::image_mean_broadcast(x);
        x = add(scale(sub(x, m), p.contrast), m);
    }
    if (p.cutout_size > 0) x = detail::cutout(x, p.cutout_cx, p.cutout_cy, p.cutout_size);
    return x;
}

// per-image parameter lists (config flag); params cycle if shorter than the batch
template <class S>
TensorT<S> apply_aug_per_image(const TensorT<S>& images, std::span<const AugParams> params) {
    require(!params.empty(), "apply_aug_per_image: no parameters");
    const int64_t n = images.dim(0);
    std::vector<TensorT<S>> rows;
    for (int64_t i = 0; i < n; ++i) {
        rows.push_back(apply_aug(slice_axis0(images, i, 1), params[static_cast<size_t>(i) % params.size()]));
    }
    return rows.size() == 1 ? rows[0] : concat_axis0(rows);
}

}  // namespace glad
