#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "glad/core/parallel.hpp"
#include "glad/tensor/tensor.hpp"

// Dense op catalog. Every primitive records a VJP closure expressed through
// the catalog itself, so backward passes are differentiable expressions and
// second-order gradients (gradients of gradients) come out exact.
//
// Shape rules:
//   - elementwise binaries take equal shapes, or one operand with a single
//     element (broadcast scalar)
//   - conv2d is stride-1, square-kernel, symmetric zero padding
//   - reductions/broadcasts exist in dual pairs (sum_axis0/tile_axis0, ...)

namespace glad {

template <class S> TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b);
template <class S> TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b);
template <class S> TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b);
template <class S> TensorT<S> div(const TensorT<S>& a, const TensorT<S>& b);
template <class S> TensorT<S> neg(const TensorT<S>& x);
template <class S> TensorT<S> scale(const TensorT<S>& x, double c);
template <class S> TensorT<S> add_const(const TensorT<S>& x, double c);
template <class S> TensorT<S> exp(const TensorT<S>& x);
template <class S> TensorT<S> log(const TensorT<S>& x);
template <class S> TensorT<S> sqrt(const TensorT<S>& x);
template <class S> TensorT<S> tanh(const TensorT<S>& x);
template <class S> TensorT<S> relu(const TensorT<S>& x);
template <class S> TensorT<S> leaky_relu(const TensorT<S>& x, double slope);
template <class S> TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b);
template <class S> TensorT<S> transpose2d(const TensorT<S>& a);
template <class S> TensorT<S> conv2d(const TensorT<S>& x, const TensorT<S>& w, int64_t pad);
template <class S> TensorT<S> kernel_flip_swap(const TensorT<S>& w);
template <class S> TensorT<S> conv2d_weight_grad(const TensorT<S>& x, const TensorT<S>& g,
                                                 int64_t pad, int64_t kh, int64_t kw);
template <class S> TensorT<S> avgpool2d(const TensorT<S>& x, int64_t window);
template <class S> TensorT<S> upsample_nearest(const TensorT<S>& x, int64_t factor);
template <class S> TensorT<S> pad2d(const TensorT<S>& x, int64_t top, int64_t left, int64_t bottom, int64_t right);
template <class S> TensorT<S> crop2d(const TensorT<S>& x, int64_t oy, int64_t ox, int64_t h, int64_t w);
template <class S> TensorT<S> flip_w(const TensorT<S>& x);
template <class S> TensorT<S> reshape(const TensorT<S>& x, Shape shape);
template <class S> TensorT<S> sum(const TensorT<S>& x);
template <class S> TensorT<S> sum_axis0(const TensorT<S>& x);
template <class S> TensorT<S> sum_axis1(const TensorT<S>& x);
template <class S> TensorT<S> tile_axis0(const TensorT<S>& v, int64_t n);
template <class S> TensorT<S> tile_axis1(const TensorT<S>& v, int64_t n);
template <class S> TensorT<S> reduce_hw(const TensorT<S>& x);
template <class S> TensorT<S> expand_nc(const TensorT<S>& v, int64_t h, int64_t w);
template <class S> TensorT<S> concat_axis0(const std::vector<TensorT<S>>& xs);
template <class S> TensorT<S> slice_axis0(const TensorT<S>& x, int64_t start, int64_t len);
template <class S> TensorT<S> embed_axis0(const TensorT<S>& x, int64_t start, int64_t total);
template <class S> TensorT<S> index_select(const TensorT<S>& x, const std::vector<int64_t>& idx);
template <class S> TensorT<S> index_scatter_add(const TensorT<S>& g, const std::vector<int64_t>& idx, int64_t dim0);
template <class S> TensorT<S> take_class(const TensorT<S>& logits, const std::vector<int32_t>& labels);
template <class S> TensorT<S> put_class(const TensorT<S>& v, const std::vector<int32_t>& labels, int64_t classes);
template <class S> TensorT<S> grid_sample_bilinear(const TensorT<S>& img, const TensorT<S>& grid);
template <class S> TensorT<S> grid_sample_adjoint(const TensorT<S>& g, const TensorT<S>& grid, int64_t h, int64_t w);

namespace detail {

template <class S>
using VjpFn = std::function<std::vector<TensorT<S>>(const TensorT<S>&)>;

template <class S>
TensorT<S> make_result(const char* op, Shape shape, std::vector<S> vals,
                       std::vector<TensorT<S>> parents, VjpFn<S> vjp) {
    auto out = TensorT<S>::from(std::move(shape), std::move(vals));
    if (strict_finite() && !out.all_finite()) {
        fail(op, ": non-finite output under strict mode");
    }
    bool track = grad_enabled();
    if (track) {
        bool any = false;
        for (const auto& p : parents) any = any || p.is_tracked();
        track = any;
    }
    if (track) {
        auto node = std::make_shared<NodeT<S>>();
        node->op = op;
        node->parents = std::move(parents);
        node->vjp = std::move(vjp);
        out.attach_node(std::move(node));
    }
    return out;
}

// Collapses a full-shape cotangent back to a scalar operand.
template <class S>
TensorT<S> reduce_to(const TensorT<S>& ct, const Shape& target) {
    if (ct.shape() == target) return ct;
    return reshape(sum(ct), target);
}

template <class S, class Fn>
TensorT<S> binary_ew(const char* op, const TensorT<S>& a, const TensorT<S>& b, Fn fn, VjpFn<S> vjp) {
    const bool a_sc = a.numel() == 1;
    const bool b_sc = b.numel() == 1;
    require(a.shape() == b.shape() || a_sc || b_sc,
            op, ": incompatible shapes ", shape_str(a.shape()), " vs ", shape_str(b.shape()));
    const Shape& out_shape = a_sc && !b_sc ? b.shape() : a.shape();
    const int64_t n = shape_numel(out_shape);
    std::vector<S> vals(static_cast<size_t>(n));
    const S* pa = a.data();
    const S* pb = b.data();
    if (!a_sc && !b_sc) {
        for (int64_t i = 0; i < n; ++i) vals[i] = fn(pa[i], pb[i]);
    } else if (a_sc && !b_sc) {
        const S av = pa[0];
        for (int64_t i = 0; i < n; ++i) vals[i] = fn(av, pb[i]);
    } else if (!a_sc && b_sc) {
        const S bv = pb[0];
        for (int64_t i = 0; i < n; ++i) vals[i] = fn(pa[i], bv);
    } else {
        vals[0] = fn(pa[0], pb[0]);
    }
    return make_result<S>(op, out_shape, std::move(vals), {a, b}, std::move(vjp));
}

template <class S, class Fn>
TensorT<S> unary_ew(const char* op, const TensorT<S>& x, Fn fn, VjpFn<S> vjp) {
    std::vector<S> vals(static_cast<size_t>(x.numel()));
    const S* px = x.data();
    for (int64_t i = 0; i < x.numel(); ++i) vals[i] = fn(px[i]);
    return make_result<S>(op, x.shape(), std::move(vals), {x}, std::move(vjp));
}

inline int64_t conv_out_size(int64_t in, int64_t k, int64_t pad) { return in + 2 * pad - k + 1; }

// col layout: [ci*kh*kw, oh*ow], row-major
template <class S>
void im2col(const S* img, int64_t ci, int64_t h, int64_t w, int64_t kh, int64_t kw,
            int64_t pad, int64_t oh, int64_t ow, S* col) {
    for (int64_t c = 0; c < ci; ++c) {
        const S* plane = img + c * h * w;
        for (int64_t i = 0; i < kh; ++i) {
            for (int64_t j = 0; j < kw; ++j) {
                S* row = col + ((c * kh + i) * kw + j) * oh * ow;
                for (int64_t oy = 0; oy < oh; ++oy) {
                    const int64_t y = oy + i - pad;
                    S* dst = row + oy * ow;
                    if (y < 0 || y >= h) {
                        std::fill(dst, dst + ow, S(0));
                        continue;
                    }
                    const S* src = plane + y * w;
                    for (int64_t ox = 0; ox < ow; ++ox) {
                        const int64_t xx = ox + j - pad;
                        dst[ox] = (xx >= 0 && xx < w) ? src[xx] : S(0);
                    }
                }
            }
        }
    }
}

template <class S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr int64_t kConvChunk = 8;  // images per work chunk; fixed so results
                                   // do not depend on the worker count

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
    return detail::binary_ew<S>(
        "add", a, b, [](S x, S y) { return x + y; },
        [a, b](const TensorT<S>& g) {
            return std::vector<TensorT<S>>{detail::reduce_to(g, a.shape()), detail::reduce_to(g, b.shape())};
        });
}

template <class S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
    return detail::binary_ew<S>(
        "sub", a, b, [](S x, S y) { return x - y; },
        [a, b](const TensorT<S>& g) {
            return std::vector<TensorT<S>>{detail::reduce_to(g, a.shape()),
                                           detail::reduce_to(neg(g), b.shape())};
        });
}

template <class S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
    return detail::binary_ew<S>(
        "mul", a, b, [](S x, S y) { return x * y; },
        [a, b](const TensorT<S>& g) {
            return std::vector<TensorT<S>>{detail::reduce_to(mul(g, b), a.shape()),
                                           detail::reduce_to(mul(g, a), b.shape())};
        });
}

template <class S>
TensorT<S> div(const TensorT<S>& a, const TensorT<S>& b) {
    return detail::binary_ew<S>(
        "div", a, b, [](S x, S y) { return x / y; },
        [a, b](const TensorT<S>& g) {
            auto da = div(g, b);
            auto db = neg(div(mul(g, a), mul(b, b)));
            return std::vector<TensorT<S>>{detail::reduce_to(da, a.shape()),
                                           detail::reduce_to(db, b.shape())};
        });
}

template <class S>
TensorT<S> neg(const TensorT<S>& x) {
    return detail::unary_ew<S>(
        "neg", x, [](S v) { return -v; },
        [](const TensorT<S>& g) { return std::vector<TensorT<S>>{neg(g)}; });
}

template <class S>
TensorT<S> scale(const TensorT<S>& x, double c) {
    const S cs = static_cast<S>(c);
    return detail::unary_ew<S>(
        "scale", x, [cs](S v) { return v * cs; },
        [c](const TensorT<S>& g) { return std::vector<TensorT<S>>{scale(g, c)}; });
}

template <class S>
TensorT<S> add_const(const TensorT<S>& x, double c) {
    const S cs = static_cast<S>(c);
    return detail::unary_ew<S>(
        "add_const", x, [cs](S v) { return v + cs; },
        [](const TensorT<S>& g) { return std::vector<TensorT<S>>{g}; });
}

template <class S>
TensorT<S> exp(const TensorT<S>& x) {
    return detail::unary_ew<S>(
        "exp", x, [](S v) { return std::exp(v); },
        [x](const TensorT<S>& g) { return std::vector<TensorT<S>>{mul(g, exp(x))}; });
}

template <class S>
TensorT<S> log(const TensorT<S>& x) {
    return detail::unary_ew<S>(
        "log", x, [](S v) { return std::log(v); },
        [x](const TensorT<S>& g) { return std::vector<TensorT<S>>{div(g, x)}; });
}

template <class S>
TensorT<S> sqrt(const TensorT<S>& x) {
    return detail::unary_ew<S>(
        "sqrt", x, [](S v) { return std::sqrt(v); },
        [x](const TensorT<S>& g) {
            return std::vector<TensorT<S>>{div(g, scale(sqrt(x), 2.0))};
        });
}

template <class S>
TensorT<S> tanh(const TensorT<S>& x) {
    return detail::unary_ew<S>(
        "tanh", x, [](S v) { return std::tanh(v); },
        [x](const TensorT<S>& g) {
            auto t = tanh(x);
            return std::vector<TensorT<S>>{mul(g, add_const(neg(mul(t, t)), 1.0))};
        });
}

template <class S>
TensorT<S> relu(const TensorT<S>& x) {
    return detail::unary_ew<S>(
        "relu", x, [](S v) { return v > S(0) ? v : S(0); },
        [x](const TensorT<S>& g) {
            // mask is constant; d(relu')/dx == 0 almost everywhere
            std::vector<S> m(static_cast<size_t>(x.numel()));
            for (int64_t i = 0; i < x.numel(); ++i) m[i] = x.data()[i] > S(0) ? S(1) : S(0);
            auto mask = TensorT<S>::from(x.shape(), std::move(m));
            return std::vector<TensorT<S>>{mul(g, mask)};
        });
}

template <class S>
TensorT<S> leaky_relu(const TensorT<S>& x, double slope) {
    const S sl = static_cast<S>(slope);
    return detail::unary_ew<S>(
        "leaky_relu", x, [sl](S v) { return v > S(0) ? v : sl * v; },
        [x, sl](const TensorT<S>& g) {
            std::vector<S> m(static_cast<size_t>(x.numel()));
            for (int64_t i = 0; i < x.numel(); ++i) m[i] = x.data()[i] > S(0) ? S(1) : sl;
            auto mask = TensorT<S>::from(x.shape(), std::move(m));
            return std::vector<TensorT<S>>{mul(g, mask)};
        });
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
    require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
            "matmul: incompatible shapes ", shape_str(a.shape()), " x ", shape_str(b.shape()));
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<S> vals(static_cast<size_t>(m * n));
    {
        Eigen::Map<const detail::RowMat<S>> ma(a.data(), m, k);
        Eigen::Map<const detail::RowMat<S>> mb(b.data(), k, n);
        Eigen::Map<detail::RowMat<S>> mo(vals.data(), m, n);
        mo.noalias() = ma * mb;
    }
    return detail::make_result<S>(
        "matmul", {m, n}, std::move(vals), {a, b},
        [a, b](const TensorT<S>& g) {
            return std::vector<TensorT<S>>{matmul(g, transpose2d(b)), matmul(transpose2d(a), g)};
        });
}

template <class S>
TensorT<S> transpose2d(const TensorT<S>& a) {
    require(a.rank() == 2, "transpose2d: need rank-2, got ", shape_str(a.shape()));
    const int64_t m = a.dim(0), n = a.dim(1);
    std::vector<S> vals(static_cast<size_t>(m * n));
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) vals[j * m + i] = a.data()[i * n + j];
    }
    return detail::make_result<S>(
        "transpose2d", {n, m}, std::move(vals), {a},
        [](const TensorT<S>& g) { return std::vector<TensorT<S>>{transpose2d(g)}; });
}

// ---------------------------------------------------------------------------
// convolution (stride 1, square kernel, symmetric zero padding)
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> conv2d(const TensorT<S>& x, const TensorT<S>& w, int64_t pad) {
    require(x.rank() == 4 && w.rank() == 4, "conv2d: need NCHW input and OIHW kernel, got ",
            shape_str(x.shape()), " and ", shape_str(w.shape()));
    const int64_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), ww = x.dim(3);
    const int64_t co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    require(w.dim(1) == ci, "conv2d: channel mismatch ", shape_str(x.shape()), " vs ", shape_str(w.shape()));
    require(kh == kw, "conv2d: kernel must be square, got ", shape_str(w.shape()));
    const int64_t oh = detail::conv_out_size(h, kh, pad);
    const int64_t ow = detail::conv_out_size(ww, kw, pad);
    require(oh >= 1 && ow >= 1, "conv2d: output would be empty for input ", shape_str(x.shape()),
            " kernel ", shape_str(w.shape()), " pad ", pad);

    std::vector<S> vals(static_cast<size_t>(n * co * oh * ow));
    const int64_t ckk = ci * kh * kw;
    parallel_ranges(n, detail::kConvChunk, [&](int64_t lo, int64_t hi) {
        std::vector<S> col(static_cast<size_t>(ckk * oh * ow));
        Eigen::Map<const detail::RowMat<S>> mw(w.data(), co, ckk);
        for (int64_t img = lo; img < hi; ++img) {
            detail::im2col(x.data() + img * ci * h * ww, ci, h, ww, kh, kw, pad, oh, ow, col.data());
            Eigen::Map<const detail::RowMat<S>> mc(col.data(), ckk, oh * ow);
            Eigen::Map<detail::RowMat<S>> mo(vals.data() + img * co * oh * ow, co, oh * ow);
            mo.noalias() = mw * mc;
        }
    });

    return detail::make_result<S>(
        "conv2d", {n, co, oh, ow}, std::move(vals), {x, w},
        [x, w, pad, kh, kw](const TensorT<S>& g) {
            auto dx = conv2d(g, kernel_flip_swap(w), kh - 1 - pad);
            auto dw = conv2d_weight_grad(x, g, pad, kh, kw);
            return std::vector<TensorT<S>>{dx, dw};
        });
}

// OIHW -> IOHW with both spatial axes reversed; its own inverse up to the
// channel swap, and exactly the kernel conv2d's input-gradient needs.
template <class S>
TensorT<S> kernel_flip_swap(const TensorT<S>& w) {
    require(w.rank() == 4, "kernel_flip_swap: need rank-4, got ", shape_str(w.shape()));
    const int64_t co = w.dim(0), ci = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    std::vector<S> vals(static_cast<size_t>(w.numel()));
    for (int64_t o = 0; o < co; ++o) {
        for (int64_t i = 0; i < ci; ++i) {
            for (int64_t y = 0; y < kh; ++y) {
                for (int64_t x = 0; x < kw; ++x) {
                    vals[((i * co + o) * kh + (kh - 1 - y)) * kw + (kw - 1 - x)] =
                        w.data()[((o * ci + i) * kh + y) * kw + x];
                }
            }
        }
    }
    return detail::make_result<S>(
        "kernel_flip_swap", {ci, co, kh, kw}, std::move(vals), {w},
        [](const TensorT<S>& g) { return std::vector<TensorT<S>>{kernel_flip_swap(g)}; });
}

template <class S>
TensorT<S> conv2d_weight_grad(const TensorT<S>& x, const TensorT<S>& g, int64_t pad, int64_t kh, int64_t kw) {
    require(x.rank() == 4 && g.rank() == 4 && x.dim(0) == g.dim(0),
            "conv2d_weight_grad: incompatible ", shape_str(x.shape()), " vs ", shape_str(g.shape()));
    const int64_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int64_t co = g.dim(1), oh = g.dim(2), ow = g.dim(3);
    require(oh == detail::conv_out_size(h, kh, pad) && ow == detail::conv_out_size(w, kw, pad),
            "conv2d_weight_grad: grad spatial size mismatch");
    const int64_t ckk = ci * kh * kw;

    const int64_t n_chunks = (n + detail::kConvChunk - 1) / detail::kConvChunk;
    std::vector<std::vector<S>> partial(static_cast<size_t>(n_chunks));
    parallel_ranges(n, detail::kConvChunk, [&](int64_t lo, int64_t hi) {
        std::vector<S> col(static_cast<size_t>(ckk * oh * ow));
        std::vector<S>& acc = partial[static_cast<size_t>(lo / detail::kConvChunk)];
        acc.assign(static_cast<size_t>(co * ckk), S(0));
        Eigen::Map<detail::RowMat<S>> macc(acc.data(), co, ckk);
        for (int64_t img = lo; img < hi; ++img) {
            detail::im2col(x.data() + img * ci * h * w, ci, h, w, kh, kw, pad, oh, ow, col.data());
            Eigen::Map<const detail::RowMat<S>> mc(col.data(), ckk, oh * ow);
            Eigen::Map<const detail::RowMat<S>> mg(g.data() + img * co * oh * ow, co, oh * ow);
            macc.noalias() += mg * mc.transpose();
        }
    });
    // chunk partials summed in fixed chunk order: bit-stable for any pool size
    std::vector<S> vals(static_cast<size_t>(co * ckk), S(0));
    for (const auto& acc : partial) {
        for (size_t i = 0; i < vals.size(); ++i) vals[i] += acc[i];
    }

    return detail::make_result<S>(
        "conv2d_weight_grad", {co, ci, kh, kw}, std::move(vals), {x, g},
        [x, g, pad, kh, kw](const TensorT<S>& u) {
            auto dx = conv2d(g, kernel_flip_swap(u), kh - 1 - pad);
            auto dg = conv2d(x, u, pad);
            return std::vector<TensorT<S>>{dx, dg};
        });
}

// ---------------------------------------------------------------------------
// pooling / resampling / padding
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> avgpool2d(const TensorT<S>& x, int64_t window) {
    require(x.rank() == 4, "avgpool2d: need NCHW, got ", shape_str(x.shape()));
    require(window >= 1 && x.dim(2) % window == 0 && x.dim(3) % window == 0,
            "avgpool2d: spatial size ", shape_str(x.shape()), " not divisible by window ", window);
    const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int64_t oh = h / window, ow = w / window;
    std::vector<S> vals(static_cast<size_t>(n * c * oh * ow));
    const S inv = S(1) / static_cast<S>(window * window);
    for (int64_t p = 0; p < n * c; ++p) {
        const S* in = x.data() + p * h * w;
        S* out = vals.data() + p * oh * ow;
        for (int64_t oy = 0; oy < oh; ++oy) {
            for (int64_t ox = 0; ox < ow; ++ox) {
                S acc = S(0);
                for (int64_t dy = 0; dy < window; ++dy) {
                    for (int64_t dx = 0; dx < window; ++dx) {
                        acc += in[(oy * window + dy) * w + ox * window + dx];
                    }
                }
                out[oy * ow + ox] = acc * inv;
            }
        }
    }
    return detail::make_result<S>(
        "avgpool2d", {n, c, oh, ow}, std::move(vals), {x},
        [window](const TensorT<S>& g) {
            return std::vector<TensorT<S>>{scale(upsample_nearest(g, window), 1.0 / double(window * window))};
        });
}

template <class S>
TensorT<S> upsample_nearest(const TensorT<S>& x, int64_t factor) {
    require(x.rank() == 4, "upsample_nearest: need NCHW, got ", shape_str(x.shape()));
    require(factor >= 1, "upsample_nearest: factor ", factor);
    const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int64_t oh = h * factor, ow = w * factor;
    std::vector<S> vals(static_cast<size_t>(n * c * oh * ow));
    for (int64_t p = 0; p < n * c; ++p) {
        const S* in = x.data() + p * h * w;
        S* out = vals.data() + p * oh * ow;
        for (int64_t y = 0; y < oh; ++y) {
            const S* row = in + (y / factor) * w;
            for (int64_t xx = 0; xx < ow; ++xx) out[y * ow + xx] = row[xx / factor];
        }
    }
    return detail::make_result<S>(
        "upsample_nearest", {n, c, oh, ow}, std::move(vals), {x},
        [factor](const TensorT<S>& g) {
            return std::vector<TensorT<S>>{scale(avgpool2d(g, factor), double(factor * factor))};
        });
}

template <class S>
TensorT<S> pad2d(const TensorT<S>& x, int64_t top, int64_t left, int64_t bottom, int64_t right) {
    require(x.rank() == 4, "pad2d: need NCHW, got ", shape_str(x.shape()));
    require(top >= 0 && left >= 0 && bottom >= 0 && right >= 0, "pad2d: negative padding");
    const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int64_t oh = h + top + bottom, ow = w + left + right;
    std::vector<S> vals(static_cast<size_t>(n * c * oh * ow), S(0));
    for (int64_t p = 0; p < n * c; ++p) {
        const S* in = x.data() + p * h * w;
        S* out = vals.data() + p * oh * ow;
        for (int64_t y = 0; y < h; ++y) {
            std::copy(in + y * w, in + (y + 1) * w, out + (y + top) * ow + left);
        }
    }
    return detail::make_result<S>(
        "pad2d", {n, c, oh, ow}, std::move(vals), {x},
        [top, left, h, w](const TensorT<S>& g) {
            return std::vector<TensorT<S>>{crop2d(g, top, left, h, w)};
        });
}

template <class S>
TensorT<S> crop2d(const TensorT<S>& x, int64_t oy, int64_t ox, int64_t h, int64_t w) {
    require(x.rank() == 4, "crop2d: need NCHW, got ", shape_str(x.shape()));
    require(oy >= 0 && ox >= 0 && oy + h <= x.dim(2) && ox + w <= x.dim(3),
            "crop2d: window (", oy, ",", ox, ",", h, ",", w, ") outside ", shape_str(x.shape()));
    const int64_t n = x.dim(0), c = x.dim(1), ih = x.dim(2), iw = x.dim(3);
    std::vector<S> vals(static_cast<size_t>(n * c * h * w));
    for (int64_t p = 0; p < n * c; ++p) {
        const S* in = x.data() + p * ih * iw;
        S* out = vals.data() + p * h * w;
        for (int64_t y = 0; y < h; ++y) {
            std::copy(in + (oy + y) * iw + ox, in + (oy + y) * iw + ox + w, out + y * w);
        }
    }
    return detail::make_result<S>(
        "crop2d", {n, c, h, w}, std::move(vals), {x},
        [oy, ox, ih, iw, h, w](const TensorT<S>& g) {
            return std::vector<TensorT<S>>{pad2d(g, oy, ox, ih - h - oy, iw - w - ox)};
        });
}

template <class S>
TensorT<S> flip_w(const TensorT<S>& x) {
    require(x.rank() == 4, "flip_w: need NCHW, got ", shape_str(x.shape()));
    const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    std::vector<S> vals(static_cast<size_t>(x.numel()));
    for (int64_t p = 0; p < n * c * h; ++p) {
        const S* in = x.data() + p * w;
        S* out = vals.data() + p * w;
        for (int64_t xx = 0; xx < w; ++xx) out[xx] = in[w - 1 - xx];
    }
    return detail::make_result<S>(
        "flip_w", x.shape(), std::move(vals), {x},
        [](const TensorT<S>& g) { return std::vector<TensorT<S>>{flip_w(g)}; });
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> reshape(const TensorT<S>& x, Shape shape) {
    require(shape_numel(shape) == x.numel(), "reshape: ", shape_str(x.shape()), " -> ",
            shape_str(shape), " changes element count");
    Shape prev = x.shape();
    return detail::make_result<S>(
        "reshape", std::move(shape), std::vector<S>(x.values()), {x},
        [prev](const TensorT<S>& g) { return std::vector<TensorT<S>>{reshape(g, prev)}; });
}

template <class S>
TensorT<S> concat_axis0(const std::vector<TensorT<S>>& xs) {
    require(!xs.empty(), "concat: no inputs");
    Shape rest = xs[0].shape();
    int64_t total = 0;
    for (const auto& x : xs) {
        require(x.rank() == rest.size(), "concat: rank mismatch");
        for (size_t d = 1; d < rest.size(); ++d) {
            require(x.shape()[d] == rest[d], "concat: trailing shape mismatch ",
                    shape_str(x.shape()), " vs ", shape_str(rest));
        }
        total += x.dim(0);
    }
    Shape out_shape = rest;
    out_shape[0] = total;
    std::vector<S> vals;
    vals.reserve(static_cast<size_t>(shape_numel(out_shape)));
    for (const auto& x : xs) vals.insert(vals.end(), x.values().begin(), x.values().end());
    std::vector<int64_t> lens;
    for (const auto& x : xs) lens.push_back(x.dim(0));
    return detail::make_result<S>(
        "concat", std::move(out_shape), std::move(vals), xs,
        [lens](const TensorT<S>& g) {
            std::vector<TensorT<S>> parts;
            int64_t off = 0;
            for (int64_t len : lens) {
                parts.push_back(slice_axis0(g, off, len));
                off += len;
            }
            return parts;
        });
}

template <class S>
TensorT<S> slice_axis0(const TensorT<S>& x, int64_t start, int64_t len) {
    require(x.rank() >= 1 && start >= 0 && len >= 0 && start + len <= x.dim(0),
            "slice_axis0: [", start, ",", start + len, ") outside ", shape_str(x.shape()));
    const int64_t stride = x.numel() / x.dim(0);
    Shape out_shape = x.shape();
    out_shape[0] = len;
    std::vector<S> vals(x.values().begin() + start * stride, x.values().begin() + (start + len) * stride);
    const int64_t total = x.dim(0);
    return detail::make_result<S>(
        "slice_axis0", std::move(out_shape), std::move(vals), {x},
        [start, total](const TensorT<S>& g) {
            return std::vector<TensorT<S>>{embed_axis0(g, start, total)};
        });
}

template <class S>
TensorT<S> embed_axis0(const TensorT<S>& x, int64_t start, int64_t total) {
    require(x.rank() >= 1 && start >= 0 && start + x.dim(0) <= total,
            "embed_axis0: [", start, ",", start + x.dim(0), ") outside total ", total);
    const int64_t stride = x.numel() / std::max<int64_t>(x.dim(0), 1);
    Shape out_shape = x.shape();
    out_shape[0] = total;
    std::vector<S> vals(static_cast<size_t>(shape_numel(out_shape)), S(0));
    std::copy(x.values().begin(), x.values().end(), vals.begin() + start * stride);
    const int64_t len = x.dim(0);
    return detail::make_result<S>(
        "embed_axis0", std::move(out_shape), std::move(vals), {x},
        [start, len](const TensorT<S>& g) {
            return std::vector<TensorT<S>>{slice_axis0(g, start, len)};
        });
}

template <class S>
TensorT<S> index_select(const TensorT<S>& x, const std::vector<int64_t>& idx) {
    require(x.rank() >= 1, "index_select: need rank >= 1");
    const int64_t stride = x.numel() / x.dim(0);
    for (int64_t i : idx) {
        require(i >= 0 && i < x.dim(0), "index_select: index ", i, " outside ", shape_str(x.shape()));
    }
    Shape out_shape = x.shape();
    out_shape[0] = static_cast<int64_t>(idx.size());
    std::vector<S> vals(static_cast<size_t>(stride * idx.size()));
    for (size_t i = 0; i < idx.size(); ++i) {
        std::copy(x.values().begin() + idx[i] * stride, x.values().begin() + (idx[i] + 1) * stride,
                  vals.begin() + static_cast<int64_t>(i) * stride);
    }
    const int64_t total = x.dim(0);
    return detail::make_result<S>(
        "index_select", std::move(out_shape), std::move(vals), {x},
        [idx, total](const TensorT<S>& g) {
            return std::vector<TensorT<S>>{index_scatter_add(g, idx, total)};
        });
}

template <class S>
TensorT<S> index_scatter_add(const TensorT<S>& g, const std::vector<int64_t>& idx, int64_t dim0) {
    require(g.rank() >= 1 && g.dim(0) == static_cast<int64_t>(idx.size()),
            "index_scatter_add: leading dim ", shape_str(g.shape()), " vs ", idx.size(), " indices");
    const int64_t stride = g.numel() / std::max<int64_t>(g.dim(0), 1);
    Shape out_shape = g.shape();
    out_shape[0] = dim0;
    std::vector<S> vals(static_cast<size_t>(shape_numel(out_shape)), S(0));
    for (size_t i = 0; i < idx.size(); ++i) {
        require(idx[i] >= 0 && idx[i] < dim0, "index_scatter_add: index ", idx[i], " outside ", dim0);
        const S* src = g.data() + static_cast<int64_t>(i) * stride;
        S* dst = vals.data() + idx[i] * stride;
        for (int64_t j = 0; j < stride; ++j) dst[j] += src[j];
    }
    return detail::make_result<S>(
        "index_scatter_add", std::move(out_shape), std::move(vals), {g},
        [idx](const TensorT<S>& u) { return std::vector<TensorT<S>>{index_select(u, idx)}; });
}

// ---------------------------------------------------------------------------
// reductions and their broadcast duals
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> sum(const TensorT<S>& x) {
    S acc = S(0);
    for (int64_t i = 0; i < x.numel(); ++i) acc += x.data()[i];
    Shape xs = x.shape();
    return detail::make_result<S>(
        "sum", {1}, {acc}, {x},
        [xs](const TensorT<S>& g) {
            return std::vector<TensorT<S>>{mul(TensorT<S>::full(xs, S(1)), g)};
        });
}

template <class S>
TensorT<S> sum_axis0(const TensorT<S>& x) {
    require(x.rank() == 2, "sum_axis0: need rank-2, got ", shape_str(x.shape()));
    const int64_t n = x.dim(0), d = x.dim(1);
    std::vector<S> vals(static_cast<size_t>(d), S(0));
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < d; ++j) vals[j] += x.data()[i * d + j];
    }
    return detail::make_result<S>(
        "sum_axis0", {d}, std::move(vals), {x},
        [n](const TensorT<S>& g) { return std::vector<TensorT<S>>{tile_axis0(g, n)}; });
}

template <class S>
TensorT<S> sum_axis1(const TensorT<S>& x) {
    require(x.rank() == 2, "sum_axis1: need rank-2, got ", shape_str(x.shape()));
    const int64_t n = x.dim(0), d = x.dim(1);
    std::vector<S> vals(static_cast<size_t>(n), S(0));
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < d; ++j) vals[i] += x.data()[i * d + j];
    }
    return detail::make_result<S>(
        "sum_axis1", {n}, std::move(vals), {x},
        [d](const TensorT<S>& g) { return std::vector<TensorT<S>>{tile_axis1(g, d)}; });
}

template <class S>
TensorT<S> tile_axis0(const TensorT<S>& v, int64_t n) {
    require(v.rank() == 1, "tile_axis0: need rank-1, got ", shape_str(v.shape()));
    const int64_t d = v.dim(0);
    std::vector<S> vals(static_cast<size_t>(n * d));
    for (int64_t i = 0; i < n; ++i) std::copy(v.values().begin(), v.values().end(), vals.begin() + i * d);
    return detail::make_result<S>(
        "tile_axis0", {n, d}, std::move(vals), {v},
        [](const TensorT<S>& g) { return std::vector<TensorT<S>>{sum_axis0(g)}; });
}

template <class S>
TensorT<S> tile_axis1(const TensorT<S>& v, int64_t n) {
    require(v.rank() == 1, "tile_axis1: need rank-1, got ", shape_str(v.shape()));
    const int64_t d = v.dim(0);
    std::vector<S> vals(static_cast<size_t>(d * n));
    for (int64_t i = 0; i < d; ++i) std::fill(vals.begin() + i * n, vals.begin() + (i + 1) * n, v.data()[i]);
    return detail::make_result<S>(
        "tile_axis1", {d, n}, std::move(vals), {v},
        [](const TensorT<S>& g) { return std::vector<TensorT<S>>{sum_axis1(g)}; });
}

// sum over H,W: [N,C,H,W] -> [N,C]
template <class S>
TensorT<S> reduce_hw(const TensorT<S>& x) {
    require(x.rank() == 4, "reduce_hw: need NCHW, got ", shape_str(x.shape()));
    const int64_t nc = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
    std::vector<S> vals(static_cast<size_t>(nc), S(0));
    for (int64_t p = 0; p < nc; ++p) {
        const S* in = x.data() + p * hw;
        S acc = S(0);
        for (int64_t i = 0; i < hw; ++i) acc += in[i];
        vals[p] = acc;
    }
    const int64_t h = x.dim(2), w = x.dim(3);
    return detail::make_result<S>(
        "reduce_hw", {x.dim(0), x.dim(1)}, std::move(vals), {x},
        [h, w](const TensorT<S>& g) { return std::vector<TensorT<S>>{expand_nc(g, h, w)}; });
}

// broadcast [N,C] over a spatial extent: -> [N,C,H,W]
template <class S>
TensorT<S> expand_nc(const TensorT<S>& v, int64_t h, int64_t w) {
    require(v.rank() == 2, "expand_nc: need rank-2, got ", shape_str(v.shape()));
    const int64_t nc = v.numel(), hw = h * w;
    std::vector<S> vals(static_cast<size_t>(nc * hw));
    for (int64_t p = 0; p < nc; ++p) {
        std::fill(vals.begin() + p * hw, vals.begin() + (p + 1) * hw, v.data()[p]);
    }
    return detail::make_result<S>(
        "expand_nc", {v.dim(0), v.dim(1), h, w}, std::move(vals), {v},
        [](const TensorT<S>& g) { return std::vector<TensorT<S>>{reduce_hw(g)}; });
}

// ---------------------------------------------------------------------------
// class picking (cross-entropy support)
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> take_class(const TensorT<S>& logits, const std::vector<int32_t>& labels) {
    require(logits.rank() == 2 && logits.dim(0) == static_cast<int64_t>(labels.size()),
            "take_class: logits ", shape_str(logits.shape()), " vs ", labels.size(), " labels");
    const int64_t n = logits.dim(0), k = logits.dim(1);
    std::vector<S> vals(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        require(labels[i] >= 0 && labels[i] < k, "take_class: label ", labels[i], " outside [0,", k, ")");
        vals[i] = logits.data()[i * k + labels[i]];
    }
    return detail::make_result<S>(
        "take_class", {n}, std::move(vals), {logits},
        [labels, k](const TensorT<S>& g) {
            return std::vector<TensorT<S>>{put_class(g, labels, k)};
        });
}

template <class S>
TensorT<S> put_class(const TensorT<S>& v, const std::vector<int32_t>& labels, int64_t classes) {
    require(v.rank() == 1 && v.dim(0) == static_cast<int64_t>(labels.size()),
            "put_class: values ", shape_str(v.shape()), " vs ", labels.size(), " labels");
    const int64_t n = v.dim(0);
    std::vector<S> vals(static_cast<size_t>(n * classes), S(0));
    for (int64_t i = 0; i < n; ++i) {
        require(labels[i] >= 0 && labels[i] < classes, "put_class: label out of range");
        vals[i * classes + labels[i]] = v.data()[i];
    }
    return detail::make_result<S>(
        "put_class", {n, classes}, std::move(vals), {v},
        [labels](const TensorT<S>& g) { return std::vector<TensorT<S>>{take_class(g, labels)}; });
}

// ---------------------------------------------------------------------------
// bilinear sampling (differentiable w.r.t. the image; grid is a constant)
// ---------------------------------------------------------------------------

namespace detail {
struct Tap {
    int64_t x0, y0;
    double fx, fy;
    bool in(int64_t w, int64_t h, int64_t dx, int64_t dy) const {
        return x0 + dx >= 0 && x0 + dx < w && y0 + dy >= 0 && y0 + dy < h;
    }
};
inline Tap grid_tap(double gx, double gy, int64_t w, int64_t h) {
    // align-corners mapping: -1 -> 0, +1 -> size-1
    const double px = (gx + 1.0) * 0.5 * static_cast<double>(w - 1);
    const double py = (gy + 1.0) * 0.5 * static_cast<double>(h - 1);
    Tap t;
    t.x0 = static_cast<int64_t>(std::floor(px));
    t.y0 = static_cast<int64_t>(std::floor(py));
    t.fx = px - static_cast<double>(t.x0);
    t.fy = py - static_cast<double>(t.y0);
    return t;
}
}  // namespace detail

template <class S>
TensorT<S> grid_sample_bilinear(const TensorT<S>& img, const TensorT<S>& grid) {
    require(img.rank() == 4, "grid_sample: image must be NCHW, got ", shape_str(img.shape()));
    require(grid.rank() == 4 && grid.dim(3) == 2 && grid.dim(0) == img.dim(0),
            "grid_sample: grid must be [N,Ho,Wo,2] matching batch, got ", shape_str(grid.shape()));
    const int64_t n = img.dim(0), c = img.dim(1), h = img.dim(2), w = img.dim(3);
    const int64_t oh = grid.dim(1), ow = grid.dim(2);
    std::vector<S> vals(static_cast<size_t>(n * c * oh * ow), S(0));
    for (int64_t b = 0; b < n; ++b) {
        for (int64_t oy = 0; oy < oh; ++oy) {
            for (int64_t ox = 0; ox < ow; ++ox) {
                const S* gp = grid.data() + ((b * oh + oy) * ow + ox) * 2;
                const auto t = detail::grid_tap(static_cast<double>(gp[0]), static_cast<double>(gp[1]), w, h);
                const double w00 = (1 - t.fx) * (1 - t.fy), w10 = t.fx * (1 - t.fy);
                const double w01 = (1 - t.fx) * t.fy, w11 = t.fx * t.fy;
                for (int64_t ch = 0; ch < c; ++ch) {
                    const S* plane = img.data() + (b * c + ch) * h * w;
                    double acc = 0.0;
                    if (t.in(w, h, 0, 0)) acc += w00 * static_cast<double>(plane[t.y0 * w + t.x0]);
                    if (t.in(w, h, 1, 0)) acc += w10 * static_cast<double>(plane[t.y0 * w + t.x0 + 1]);
                    if (t.in(w, h, 0, 1)) acc += w01 * static_cast<double>(plane[(t.y0 + 1) * w + t.x0]);
                    if (t.in(w, h, 1, 1)) acc += w11 * static_cast<double>(plane[(t.y0 + 1) * w + t.x0 + 1]);
                    vals[((b * c + ch) * oh + oy) * ow + ox] = static_cast<S>(acc);
                }
            }
        }
    }
    auto grid_c = grid.detached();
    return detail::make_result<S>(
        "grid_sample_bilinear", {n, c, oh, ow}, std::move(vals), {img},
        [grid_c, h, w](const TensorT<S>& g) {
            return std::vector<TensorT<S>>{grid_sample_adjoint(g, grid_c, h, w)};
        });
}

// transpose of grid_sample_bilinear as a linear map in the image
template <class S>
TensorT<S> grid_sample_adjoint(const TensorT<S>& g, const TensorT<S>& grid, int64_t h, int64_t w) {
    require(g.rank() == 4 && grid.rank() == 4 && grid.dim(3) == 2, "grid_sample_adjoint: bad shapes ",
            shape_str(g.shape()), " / ", shape_str(grid.shape()));
    const int64_t n = g.dim(0), c = g.dim(1), oh = g.dim(2), ow = g.dim(3);
    require(grid.dim(0) == n && grid.dim(1) == oh && grid.dim(2) == ow, "grid_sample_adjoint: grid mismatch");
    std::vector<S> vals(static_cast<size_t>(n * c * h * w), S(0));
    for (int64_t b = 0; b < n; ++b) {
        for (int64_t oy = 0; oy < oh; ++oy) {
            for (int64_t ox = 0; ox < ow; ++ox) {
                const S* gp = grid.data() + ((b * oh + oy) * ow + ox) * 2;
                const auto t = detail::grid_tap(static_cast<double>(gp[0]), static_cast<double>(gp[1]), w, h);
                const double w00 = (1 - t.fx) * (1 - t.fy), w10 = t.fx * (1 - t.fy);
                const double w01 = (1 - t.fx) * t.fy, w11 = t.fx * t.fy;
                for (int64_t ch = 0; ch < c; ++ch) {
                    const double gv = static_cast<double>(g.data()[((b * c + ch) * oh + oy) * ow + ox]);
                    S* plane = vals.data() + (b * c + ch) * h * w;
                    if (t.in(w, h, 0, 0)) plane[t.y0 * w + t.x0] += static_cast<S>(w00 * gv);
                    if (t.in(w, h, 1, 0)) plane[t.y0 * w + t.x0 + 1] += static_cast<S>(w10 * gv);
                    if (t.in(w, h, 0, 1)) plane[(t.y0 + 1) * w + t.x0] += static_cast<S>(w01 * gv);
                    if (t.in(w, h, 1, 1)) plane[(t.y0 + 1) * w + t.x0 + 1] += static_cast<S>(w11 * gv);
                }
            }
        }
    }
    auto grid_c = grid.detached();
    return detail::make_result<S>(
        "grid_sample_adjoint", {n, c, h, w}, std::move(vals), {g},
        [grid_c](const TensorT<S>& u) {
            return std::vector<TensorT<S>>{grid_sample_bilinear(u, grid_c)};
        });
}

// ---------------------------------------------------------------------------
// composites
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> mean(const TensorT<S>& x) {
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

template <class S>
TensorT<S> mean_axis0(const TensorT<S>& x) {
    return scale(sum_axis0(x), 1.0 / static_cast<double>(x.dim(0)));
}

template <class S>
TensorT<S> dot(const TensorT<S>& a, const TensorT<S>& b) {
    require(same_shape(a, b), "dot: shapes ", shape_str(a.shape()), " vs ", shape_str(b.shape()));
    return sum(mul(a, b));
}

template <class S>
TensorT<S> norm_sq(const TensorT<S>& x) {
    return sum(mul(x, x));
}

// per-(instance, channel) normalization to zero mean / unit variance; no affine
template <class S>
TensorT<S> instance_norm(const TensorT<S>& x, double eps = 1e-5) {
    require(x.rank() == 4, "instance_norm: need NCHW, got ", shape_str(x.shape()));
    const int64_t h = x.dim(2), w = x.dim(3);
    const double inv_hw = 1.0 / static_cast<double>(h * w);
    auto mu = scale(reduce_hw(x), inv_hw);
    auto centered = sub(x, expand_nc(mu, h, w));
    auto var = scale(reduce_hw(mul(centered, centered)), inv_hw);
    auto inv_std = div(TensorT<S>::full({1}, S(1)), sqrt(add_const(var, eps)));
    return mul(centered, expand_nc(inv_std, h, w));
}

// per-(instance, group) normalization; groups must divide the channel count
template <class S>
TensorT<S> group_norm(const TensorT<S>& x, int64_t groups, double eps = 1e-5) {
    require(x.rank() == 4 && x.dim(1) % groups == 0, "group_norm: ", groups, " groups for ",
            shape_str(x.shape()));
    const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    auto grouped = reshape(x, {n, groups, (c / groups) * h, w});
    return reshape(instance_norm(grouped, eps), {n, c, h, w});
}

// mean over the batch of -log softmax(logits)[label]
template <class S>
TensorT<S> softmax_cross_entropy(const TensorT<S>& logits, const std::vector<int32_t>& labels) {
    require(logits.rank() == 2, "softmax_cross_entropy: logits must be [N,classes], got ",
            shape_str(logits.shape()));
    require(logits.dim(0) == static_cast<int64_t>(labels.size()),
            "softmax_cross_entropy: batch ", logits.dim(0), " vs ", labels.size(), " labels");
    const int64_t n = logits.dim(0), k = logits.dim(1);
    for (int32_t l : labels) {
        require(l >= 0 && l < k, "softmax_cross_entropy: label ", l, " outside [0,", k, ")");
    }
    // constant row-max shift; log-sum-exp is invariant to it, gradients exact
    std::vector<S> mx(static_cast<size_t>(n * k));
    std::vector<S> mrow(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        S m = logits.data()[i * k];
        for (int64_t j = 1; j < k; ++j) m = std::max(m, logits.data()[i * k + j]);
        mrow[i] = m;
        std::fill(mx.begin() + i * k, mx.begin() + (i + 1) * k, m);
    }
    auto shift = TensorT<S>::from({n, k}, std::move(mx));
    auto shifted = sub(logits, shift);
    auto lse = add(log(sum_axis1(exp(shifted))), TensorT<S>::from({n}, std::move(mrow)));
    auto picked = take_class(logits, labels);
    return mean(sub(lse, picked));
}

// bias broadcast helpers
template <class S>
TensorT<S> bias_rows(const TensorT<S>& x, const TensorT<S>& b) {
    require(x.rank() == 2 && b.rank() == 1 && x.dim(1) == b.dim(0), "bias_rows: ",
            shape_str(x.shape()), " vs ", shape_str(b.shape()));
    return add(x, tile_axis0(b, x.dim(0)));
}

template <class S>
TensorT<S> bias_nchw(const TensorT<S>& x, const TensorT<S>& b) {
    require(x.rank() == 4 && b.rank() == 1 && x.dim(1) == b.dim(0), "bias_nchw: ",
            shape_str(x.shape()), " vs ", shape_str(b.shape()));
    return add(x, expand_nc(tile_axis0(b, x.dim(0)), x.dim(2), x.dim(3)));
}

// [N,C] scale/shift broadcast over spatial dims (style modulation)
template <class S>
TensorT<S> channel_scale_shift(const TensorT<S>& x, const TensorT<S>& s, const TensorT<S>& t) {
    require(x.rank() == 4 && s.rank() == 2 && t.rank() == 2 && s.dim(0) == x.dim(0) &&
                s.dim(1) == x.dim(1) && same_shape(s, t),
            "channel_scale_shift: ", shape_str(x.shape()), " vs ", shape_str(s.shape()));
    const int64_t h = x.dim(2), w = x.dim(3);
    return add(mul(x, expand_nc(s, h, w)), expand_nc(t, h, w));
}

// ---------------------------------------------------------------------------
// string-keyed catalog entry point
// ---------------------------------------------------------------------------

struct OpAttrs {
    std::unordered_map<std::string, double> num;
    std::unordered_map<std::string, std::vector<int64_t>> ints;

    double get_num(const std::string& k, double fallback) const {
        auto it = num.find(k);
        return it == num.end() ? fallback : it->second;
    }
    const std::vector<int64_t>& get_ints(const std::string& k) const {
        auto it = ints.find(k);
        require(it != ints.end(), "op attrs: missing '", k, "'");
        return it->second;
    }
};

template <class S>
TensorT<S> forward_op_catalog(const std::string& op, std::span<const TensorT<S>> in, const OpAttrs& attrs = {}) {
    auto arity = [&](size_t k) {
        require(in.size() == k, op, ": expected ", k, " inputs, got ", in.size());
    };
    if (op == "add") { arity(2); return add(in[0], in[1]); }
    if (op == "sub") { arity(2); return sub(in[0], in[1]); }
    if (op == "mul") { arity(2); return mul(in[0], in[1]); }
    if (op == "div") { arity(2); return div(in[0], in[1]); }
    if (op == "neg") { arity(1); return neg(in[0]); }
    if (op == "matmul") { arity(2); return matmul(in[0], in[1]); }
    if (op == "conv2d") { arity(2); return conv2d(in[0], in[1], static_cast<int64_t>(attrs.get_num("pad", 0))); }
    if (op == "relu") { arity(1); return relu(in[0]); }
    if (op == "tanh") { arity(1); return tanh(in[0]); }
    if (op == "exp") { arity(1); return exp(in[0]); }
    if (op == "log") { arity(1); return log(in[0]); }
    if (op == "sum") {
        arity(1);
        const double axis = attrs.get_num("axis", -1);
        if (axis < 0) return sum(in[0]);
        require(in[0].rank() == 2 && (axis == 0 || axis == 1), "sum: axis reduction needs rank-2");
        return axis == 0 ? sum_axis0(in[0]) : sum_axis1(in[0]);
    }
    if (op == "mean") { arity(1); return mean(in[0]); }
    if (op == "reshape") { arity(1); return reshape(in[0], attrs.get_ints("shape")); }
    if (op == "pad") {
        arity(1);
        const auto p = static_cast<int64_t>(attrs.get_num("pad", 0));
        return pad2d(in[0], p, p, p, p);
    }
    if (op == "avgpool2d") { arity(1); return avgpool2d(in[0], static_cast<int64_t>(attrs.get_num("window", 2))); }
    if (op == "instance_norm") { arity(1); return instance_norm(in[0], attrs.get_num("eps", 1e-5)); }
    if (op == "grid_sample_bilinear") { arity(2); return grid_sample_bilinear(in[0], in[1]); }
    if (op == "concat") {
        return concat_axis0(std::vector<TensorT<S>>(in.begin(), in.end()));
    }
    if (op == "index_select") {
        arity(1);
        require(attrs.get_num("axis", 0) == 0, "index_select: only axis 0 is supported");
        return index_select(in[0], attrs.get_ints("indices"));
    }
    if (op == "softmax_cross_entropy") {
        arity(1);
        const auto& raw = attrs.get_ints("labels");
        std::vector<int32_t> labels(raw.begin(), raw.end());
        return softmax_cross_entropy(in[0], labels);
    }
    if (op == "dot") { arity(2); return dot(in[0], in[1]); }
    if (op == "norm_sq") { arity(1); return norm_sq(in[0]); }
    fail("forward_op_catalog: unknown op '", op, "'");
}

}  // namespace glad
