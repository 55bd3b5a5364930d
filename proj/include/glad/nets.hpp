#pragma once

#include <string>
#include <vector>

#include "glad/params.hpp"
#include "glad/tensor/ops.hpp"

namespace glad {

enum class NetFamily { convnet, mlp, altconvnet };
enum class NormKind { instance, none, group };

inline std::string to_string(NetFamily f) {
    switch (f) {
        case NetFamily::convnet: return "convnet";
        case NetFamily::mlp: return "mlp";
        case NetFamily::altconvnet: return "altconvnet";
    }
    return "?";
}

inline NetFamily net_family_from(const std::string& s) {
    if (s == "convnet") return NetFamily::convnet;
    if (s == "mlp") return NetFamily::mlp;
    if (s == "altconvnet") return NetFamily::altconvnet;
    fail("unknown net family '", s, "'");
}

inline std::string to_string(NormKind n) {
    switch (n) {
        case NormKind::instance: return "instance";
        case NormKind::none: return "none";
        case NormKind::group: return "group";
    }
    return "?";
}

inline NormKind norm_from(const std::string& s) {
    if (s == "instance") return NormKind::instance;
    if (s == "none") return NormKind::none;
    if (s == "group") return NormKind::group;
    fail("unknown norm kind '", s, "'");
}

// Classifier architecture description. The backbone is the convnet family:
// depth x [conv3x3 pad 1 -> norm -> relu -> avgpool 2x2 stride 2], then a
// linear head. `altconvnet` is the same stack with no normalization; `mlp`
// is two relu hidden layers of `width`.
struct NetSpec {
    NetFamily family = NetFamily::convnet;
    int64_t depth = 3;
    int64_t width = 128;
    NormKind norm = NormKind::instance;
    int64_t image_size = 32;
    int64_t channels = 3;
    int64_t classes = 10;
    int64_t group_count = 4;

    void validate() const {
        require(classes >= 2, "net spec: need at least 2 classes, got ", classes);
        if (family != NetFamily::mlp) {
            require(depth >= 1, "net spec: depth must be >= 1");
            int64_t s = image_size;
            for (int64_t k = 0; k < depth; ++k) {
                require(s % 2 == 0, "net spec: image size ", image_size, " not divisible by 2^",
                        depth);
                s /= 2;
            }
        }
    }

    int64_t feature_dim() const {
        if (family == NetFamily::mlp) return width;
        int64_t s = image_size;
        for (int64_t k = 0; k < depth; ++k) s /= 2;
        return width * s * s;
    }
};

inline NetSpec desk_convnet(int64_t classes = 10, int64_t image_size = 32) {
    NetSpec s;
    s.family = NetFamily::convnet;
    s.depth = 3;
    s.width = 64;
    s.norm = NormKind::instance;
    s.image_size = image_size;
    s.classes = classes;
    return s;
}

inline ParamLayoutPtr net_layout(const NetSpec& spec) {
    spec.validate();
    auto layout = std::make_shared<ParamLayout>();
    if (spec.family == NetFamily::mlp) {
        const int64_t in = spec.channels * spec.image_size * spec.image_size;
        layout->add("fc0.w", {in, spec.width});
        layout->add("fc0.b", {spec.width});
        layout->add("fc1.w", {spec.width, spec.width});
        layout->add("fc1.b", {spec.width});
        layout->add("head.w", {spec.width, spec.classes});
        layout->add("head.b", {spec.classes});
    } else {
        for (int64_t k = 0; k < spec.depth; ++k) {
            const int64_t cin = k == 0 ? spec.channels : spec.width;
            layout->add("conv" + std::to_string(k) + ".w", {spec.width, cin, 3, 3});
            layout->add("conv" + std::to_string(k) + ".b", {spec.width});
        }
        layout->add("head.w", {spec.feature_dim(), spec.classes});
        layout->add("head.b", {spec.classes});
    }
    return layout;
}

template <class S = double>
ParamVectorT<S> init_params(const NetSpec& spec, uint64_t seed) {
    auto layout = net_layout(spec);
    Rng rng(seed_chain(seed, 0x6e65747321ull));
    return init_kaiming<S>(layout, rng, [](const ParamLayout::Entry& e) {
        if (e.shape.size() == 4) return e.shape[1] * e.shape[2] * e.shape[3];  // conv, OIHW
        return e.shape[0];                                                    // linear, [in,out]
    });
}

namespace detail {

template <class S>
TensorT<S> apply_norm(const NetSpec& spec, const TensorT<S>& x) {
    switch (spec.family == NetFamily::altconvnet ? NormKind::none : spec.norm) {
        case NormKind::instance: return instance_norm(x);
        case NormKind::group: return group_norm(x, std::min(spec.group_count, x.dim(1)));
        case NormKind::none: return x;
    }
    return x;
}

}  // namespace detail

// Flattened pre-head activation, the embedding used by distribution matching.
template <class S>
TensorT<S> feature_extract(const NetSpec& spec, const ParamVectorT<S>& params, const TensorT<S>& batch) {
    require(batch.rank() == 4, "feature_extract: batch must be NCHW, got ", shape_str(batch.shape()));
    require(batch.dim(2) == spec.image_size && batch.dim(3) == spec.image_size,
            "feature_extract: batch is ", shape_str(batch.shape()), ", spec expects ", spec.image_size,
            "x", spec.image_size);
    require(batch.dim(1) == spec.channels, "feature_extract: channel mismatch");
    const int64_t n = batch.dim(0);
    const auto& L = *params.layout;

    if (spec.family == NetFamily::mlp) {
        auto x = reshape(batch, {n, spec.channels * spec.image_size * spec.image_size});
        x = relu(bias_rows(matmul(x, param_view(params.flat, L, "fc0.w")), param_view(params.flat, L, "fc0.b")));
        x = relu(bias_rows(matmul(x, param_view(params.flat, L, "fc1.w")), param_view(params.flat, L, "fc1.b")));
        return x;
    }
    auto x = batch;
    for (int64_t k = 0; k < spec.depth; ++k) {
        const auto tag = "conv" + std::to_string(k);
        x = conv2d(x, param_view(params.flat, L, tag + ".w"), 1);
        x = bias_nchw(x, param_view(params.flat, L, tag + ".b"));
        x = detail::apply_norm(spec, x);
        x = relu(x);
        x = avgpool2d(x, 2);
    }
    return reshape(x, {n, spec.feature_dim()});
}

template <class S>
TensorT<S> forward_logits(const NetSpec& spec, const ParamVectorT<S>& params, const TensorT<S>& batch) {
    auto feat = feature_extract(spec, params, batch);
    return bias_rows(matmul(feat, param_view(params.flat, *params.layout, "head.w")),
                     param_view(params.flat, *params.layout, "head.b"));
}

template <class S>
TensorT<S> cross_entropy_loss(const TensorT<S>& logits, const std::vector<int32_t>& labels) {
    return softmax_cross_entropy(logits, labels);
}

// value-level helpers for evaluation
template <class S>
std::vector<int32_t> argmax_rows(const TensorT<S>& logits) {
    require(logits.rank() == 2, "argmax_rows: need [N,classes]");
    std::vector<int32_t> out(static_cast<size_t>(logits.dim(0)));
    const int64_t k = logits.dim(1);
    for (int64_t i = 0; i < logits.dim(0); ++i) {
        int32_t best = 0;
        for (int64_t j = 1; j < k; ++j) {
            if (logits.data()[i * k + j] > logits.data()[i * k + best]) best = static_cast<int32_t>(j);
        }
        out[static_cast<size_t>(i)] = best;
    }
    return out;
}

template <class S>
double accuracy(const TensorT<S>& logits, const std::vector<int32_t>& labels) {
    const auto pred = argmax_rows(logits);
    require(pred.size() == labels.size(), "accuracy: size mismatch");
    int64_t hits = 0;
    for (size_t i = 0; i < labels.size(); ++i) hits += pred[i] == labels[i];
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

}  // namespace glad
