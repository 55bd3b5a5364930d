#pragma once

#include <vector>

#include "glad/datakit.hpp"
#include "glad/io/blob.hpp"
#include "glad/nets.hpp"
#include "glad/tensor/autodiff.hpp"

namespace glad {

// Teacher-trajectory store: per trajectory, the parameter vector after every
// `interval` epochs of training on the real data (snapshot 0 is the init).
template <class S>
struct TrajBufferT {
    NetSpec spec;
    int64_t epochs = 0;
    int64_t interval = 1;
    std::vector<std::vector<ParamVectorT<S>>> trajectories;

    int64_t snapshots_per_traj() const { return epochs / interval + 1; }

    void validate() const {
        for (const auto& traj : trajectories) {
            require(static_cast<int64_t>(traj.size()) == snapshots_per_traj(),
                    "trajectory buffer: expected ", snapshots_per_traj(), " snapshots, found ", traj.size());
            for (const auto& snap : traj) {
                require(snap.layout == trajectories[0][0].layout, "trajectory buffer: layouts differ");
            }
        }
    }

    template <class T>
    TrajBufferT<T> cast() const {
        TrajBufferT<T> out;
        out.spec = spec;
        out.epochs = epochs;
        out.interval = interval;
        ParamLayoutPtr shared;
        for (const auto& traj : trajectories) {
            out.trajectories.emplace_back();
            for (const auto& snap : traj) {
                auto converted = snap.template cast<T>();
                if (!shared) shared = converted.layout;
                converted.layout = shared;
                out.trajectories.back().push_back(std::move(converted));
            }
        }
        return out;
    }
};

using TrajBuffer = TrajBufferT<double>;

struct ExpertHyper {
    int64_t epochs = 15;   // paper recipe: 15 epochs of SGD
    double lr = 1e-2;      // lr 1e-2
    int64_t batch = 256;   // batch 256, no momentum or regularization
};

// Plain SGD on the real training split; appends one snapshot per epoch.
template <class S>
std::vector<ParamVectorT<S>> train_expert(const DatasetT<S>& data, const NetSpec& spec,
                                          const ExpertHyper& hyper, uint64_t seed) {
    require(data.train_count > 0, "train_expert: dataset has no training split");
    auto params = init_params<S>(spec, seed);
    std::vector<ParamVectorT<S>> snapshots;
    snapshots.push_back({params.flat.clone_values(), params.layout});

    Rng shuffle_rng(seed_chain(seed, 0x657870ull));
    std::vector<int64_t> order(static_cast<size_t>(data.train_count));
    for (int64_t i = 0; i < data.train_count; ++i) order[static_cast<size_t>(i)] = i;

    for (int64_t epoch = 0; epoch < hyper.epochs; ++epoch) {
        for (int64_t i = data.train_count - 1; i > 0; --i) {
            std::swap(order[static_cast<size_t>(i)], order[shuffle_rng.randint(static_cast<uint64_t>(i + 1))]);
        }
        for (int64_t start = 0; start < data.train_count; start += hyper.batch) {
            const int64_t len = std::min(hyper.batch, data.train_count - start);
            std::vector<int64_t> idx(order.begin() + start, order.begin() + start + len);
            std::vector<int32_t> labels;
            for (int64_t i : idx) labels.push_back(data.labels[static_cast<size_t>(i)]);

            auto theta = params.flat.tracked_leaf();
            auto logits = forward_logits(spec, ParamVectorT<S>{theta, params.layout},
                                         index_select(data.images, idx));
            auto grad = backward_one(cross_entropy_loss(logits, labels), theta);
            for (int64_t i = 0; i < params.flat.numel(); ++i) {
                params.flat.data_mut()[i] -= static_cast<S>(hyper.lr) * grad.data()[i];
            }
        }
        snapshots.push_back({params.flat.clone_values(), params.layout});
    }
    return snapshots;
}

template <class S>
TrajBufferT<S> build_expert_buffer(const DatasetT<S>& data, const NetSpec& spec,
                                   const ExpertHyper& hyper, int64_t n_trajectories, uint64_t seed) {
    TrajBufferT<S> buffer;
    buffer.spec = spec;
    buffer.epochs = hyper.epochs;
    buffer.interval = 1;
    ParamLayoutPtr shared;
    for (int64_t t = 0; t < n_trajectories; ++t) {
        auto traj = train_expert(data, spec, hyper, seed_chain(seed, static_cast<uint64_t>(t)));
        // snapshots from every trajectory share one layout object
        for (auto& snap : traj) {
            if (!shared) shared = snap.layout;
            snap.layout = shared;
        }
        buffer.trajectories.push_back(std::move(traj));
    }
    buffer.validate();
    return buffer;
}

// ---------------------------------------------------------------------------
// GLADTRAJ container
// ---------------------------------------------------------------------------

inline void write_net_spec(BlobWriter& w, const NetSpec& spec) {
    w.str(to_string(spec.family));
    w.i64(spec.depth);
    w.i64(spec.width);
    w.str(to_string(spec.norm));
    w.i64(spec.image_size);
    w.i64(spec.channels);
    w.i64(spec.classes);
    w.i64(spec.group_count);
}

inline NetSpec read_net_spec(BlobReader& r) {
    NetSpec s;
    s.family = net_family_from(r.str());
    s.depth = r.i64();
    s.width = r.i64();
    s.norm = norm_from(r.str());
    s.image_size = r.i64();
    s.channels = r.i64();
    s.classes = r.i64();
    s.group_count = r.i64();
    s.validate();
    return s;
}

template <class S>
void save_buffer(const TrajBufferT<S>& buffer, const std::filesystem::path& path) {
    buffer.validate();
    BlobWriter w;
    w.magic("GLADTRAJ", 1);
    write_net_spec(w, buffer.spec);
    w.i64(buffer.epochs);
    w.i64(buffer.interval);
    w.u32(static_cast<uint32_t>(buffer.trajectories.size()));
    w.u32(static_cast<uint32_t>(buffer.snapshots_per_traj()));
    const int64_t layout_len = buffer.trajectories.empty() ? net_layout(buffer.spec)->total
                                                           : buffer.trajectories[0][0].size();
    w.u64(static_cast<uint64_t>(layout_len));
    // one contiguous little-endian f64 block, [trajectory][snapshot][param]
    std::vector<double> payload;
    payload.reserve(static_cast<size_t>(layout_len) * buffer.trajectories.size() *
                    static_cast<size_t>(buffer.snapshots_per_traj()));
    for (const auto& traj : buffer.trajectories) {
        for (const auto& snap : traj) {
            auto wide = snap.flat.template cast<double>();
            payload.insert(payload.end(), wide.values().begin(), wide.values().end());
        }
    }
    w.f64_array(payload.data(), payload.size());
    w.save(path);
}

template <class S = double>
TrajBufferT<S> load_buffer(const std::filesystem::path& path) {
    auto r = BlobReader::load(path);
    r.magic("GLADTRAJ", 1);
    TrajBufferT<S> buffer;
    buffer.spec = read_net_spec(r);
    buffer.epochs = r.i64();
    buffer.interval = r.i64();
    const uint32_t n_traj = r.u32();
    const uint32_t n_snap = r.u32();
    const int64_t layout_len = static_cast<int64_t>(r.u64());
    auto layout = net_layout(buffer.spec);
    require(layout->total == layout_len, path.string(), ": layout length ", layout_len,
            " does not match the stored spec (", layout->total, ")");
    require(static_cast<int64_t>(n_snap) == buffer.epochs / buffer.interval + 1, path.string(),
            ": snapshot count ", n_snap, " inconsistent with ", buffer.epochs, " epochs");
    auto payload = r.f64_array();
    r.expect_end();
    require(payload.size() == static_cast<size_t>(n_traj) * n_snap * static_cast<size_t>(layout_len),
            path.string(), ": snapshot payload size mismatch");

    size_t off = 0;
    for (uint32_t t = 0; t < n_traj; ++t) {
        buffer.trajectories.emplace_back();
        for (uint32_t s = 0; s < n_snap; ++s) {
            std::vector<double> vals(payload.begin() + off, payload.begin() + off + layout_len);
            off += static_cast<size_t>(layout_len);
            auto flat = Tensor::from({layout_len}, std::move(vals));
            if constexpr (std::is_same_v<S, double>) {
                buffer.trajectories.back().push_back({flat, layout});
            } else {
                buffer.trajectories.back().push_back({flat.cast<S>(), layout});
            }
        }
    }
    buffer.validate();
    return buffer;
}

}  // namespace glad
