#pragma once

#include <cmath>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "glad/nets.hpp"
#include "glad/tensor/autodiff.hpp"

namespace glad {

// Downstream evaluation protocol: SGD with momentum and l2 weight decay,
// linear warm-up followed by cosine decay, final accuracy from the
// exponential moving average of the weights, repeated per (arch, seed).
struct EvalProtocol {
    int64_t warmup_epochs = 500;
    int64_t decay_epochs = 500;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    double ema_decay = 0.999;
    int64_t repeats = 5;
    int64_t batch = 256;
    double base_lr_convnet = 0.01;
    double base_lr_mlp = 0.01;
    double base_lr_altconvnet = 0.01;

    static EvalProtocol paper() { return {}; }

    // shrunk horizon for the desk benchmark; ema matched to the step count
    static EvalProtocol desk() {
        EvalProtocol p;
        p.warmup_epochs = 50;
        p.decay_epochs = 50;
        p.ema_decay = 0.95;
        p.batch = 64;
        return p;
    }

    double base_lr(NetFamily f) const {
        switch (f) {
            case NetFamily::convnet: return base_lr_convnet;
            case NetFamily::mlp: return base_lr_mlp;
            case NetFamily::altconvnet: return base_lr_altconvnet;
        }
        return base_lr_convnet;
    }

    void validate() const {
        require(repeats >= 1, "eval protocol: repeats must be >= 1");
        require(warmup_epochs + decay_epochs >= 1, "eval protocol: zero-length schedule");
        require(ema_decay >= 0.0 && ema_decay < 1.0, "eval protocol: ema decay must be in [0,1)");
    }
};

namespace detail {

// cos(pi t) with the analytically exact values pinned at t in {0, 1/2, 1};
// the floating-point pi would otherwise miss them by an ulp.
inline double cos_pi(double t) {
    if (t == 0.0) return 1.0;
    if (t == 0.5) return 0.0;
    if (t == 1.0) return -1.0;
    return std::cos(M_PI * t);
}

}  // namespace detail

// warmup: base*(epoch+1)/warmup; decay: base*(1 + cos(pi (epoch-warmup)/decay))/2
inline double lr_schedule(int64_t epoch, const EvalProtocol& protocol, double base) {
    protocol.validate();
    require(epoch >= 0 && epoch < protocol.warmup_epochs + protocol.decay_epochs,
            "lr_schedule: epoch ", epoch, " outside [0,", protocol.warmup_epochs + protocol.decay_epochs, ")");
    if (epoch < protocol.warmup_epochs) {
        return base * static_cast<double>(epoch + 1) / static_cast<double>(protocol.warmup_epochs);
    }
    const double t = static_cast<double>(epoch - protocol.warmup_epochs) /
                     static_cast<double>(protocol.decay_epochs);
    return base * 0.5 * (1.0 + detail::cos_pi(t));
}

// ema <- decay*ema + (1-decay)*current
template <class S>
ParamVectorT<S> ema_update(const ParamVectorT<S>& ema, const ParamVectorT<S>& current, double decay) {
    require(ema.layout == current.layout, "ema_update: parameter layouts differ");
    require(decay >= 0.0 && decay < 1.0, "ema_update: decay must be in [0,1)");
    std::vector<S> vals(static_cast<size_t>(ema.flat.numel()));
    for (int64_t i = 0; i < ema.flat.numel(); ++i) {
        vals[static_cast<size_t>(i)] =
            static_cast<S>(decay) * ema.flat.data()[i] + static_cast<S>(1.0 - decay) * current.flat.data()[i];
    }
    return {TensorT<S>::from(ema.flat.shape(), std::move(vals)), ema.layout};
}

template <class S>
double evaluate_accuracy(const NetSpec& arch, const ParamVectorT<S>& params, const TensorT<S>& images,
                         const std::vector<int32_t>& labels, int64_t batch = 256) {
    NoGradGuard no_grad;
    const int64_t n = images.dim(0);
    int64_t hits = 0;
    for (int64_t lo = 0; lo < n; lo += batch) {
        const int64_t hi = std::min(n, lo + batch);
        std::vector<int64_t> idx;
        for (int64_t i = lo; i < hi; ++i) idx.push_back(i);
        auto logits = forward_logits(arch, params, index_select(images, idx));
        auto pred = argmax_rows(logits);
        for (int64_t i = lo; i < hi; ++i) hits += pred[static_cast<size_t>(i - lo)] == labels[static_cast<size_t>(i)];
    }
    return static_cast<double>(hits) / static_cast<double>(n);
}

struct StudentResult {
    double ema_accuracy = 0.0;  // the reported number
    double raw_accuracy = 0.0;  // logged only
};

// Trains a fresh network on (rendered) synthetic images and reports the
// EMA-weight accuracy on the validation split.
template <class S>
StudentResult train_student(const TensorT<S>& syn_images, const std::vector<int32_t>& syn_labels,
                            const NetSpec& arch, const EvalProtocol& protocol, uint64_t seed,
                            const TensorT<S>& val_images, const std::vector<int32_t>& val_labels) {
    protocol.validate();
    require(syn_images.dim(0) == static_cast<int64_t>(syn_labels.size()), "train_student: label count");
    const int64_t n = syn_images.dim(0);
    auto params = init_params<S>(arch, seed);
    auto ema = ParamVectorT<S>{params.flat.clone_values(), params.layout};
    auto velocity = TensorT<S>::zeros(params.flat.shape());
    const double base = protocol.base_lr(arch.family);

    Rng shuffle_rng(seed_chain(seed, 0x657661ull));
    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

    const int64_t total_epochs = protocol.warmup_epochs + protocol.decay_epochs;
    for (int64_t epoch = 0; epoch < total_epochs; ++epoch) {
        const double lr = lr_schedule(epoch, protocol, base);
        for (int64_t i = n - 1; i > 0; --i) {
            std::swap(order[static_cast<size_t>(i)], order[shuffle_rng.randint(static_cast<uint64_t>(i + 1))]);
        }
        for (int64_t lo = 0; lo < n; lo += protocol.batch) {
            const int64_t hi = std::min(n, lo + protocol.batch);
            std::vector<int64_t> idx(order.begin() + lo, order.begin() + hi);
            std::vector<int32_t> labels;
            for (int64_t i : idx) labels.push_back(syn_labels[static_cast<size_t>(i)]);

            auto theta = params.flat.tracked_leaf();
            auto grad = backward_one(
                cross_entropy_loss(
                    forward_logits(arch, ParamVectorT<S>{theta, params.layout}, index_select(syn_images, idx)),
                    labels),
                theta);
            for (int64_t i = 0; i < params.flat.numel(); ++i) {
                auto& v = velocity.data_mut()[i];
                v = static_cast<S>(protocol.momentum) * v + grad.data()[i] +
                    static_cast<S>(protocol.weight_decay) * params.flat.data()[i];
                params.flat.data_mut()[i] -= static_cast<S>(lr) * v;
            }
            ema = ema_update(ema, params, protocol.ema_decay);
        }
    }

    StudentResult out;
    out.ema_accuracy = evaluate_accuracy(arch, ema, val_images, val_labels);
    out.raw_accuracy = evaluate_accuracy(arch, params, val_images, val_labels);
    return out;
}

// ---------------------------------------------------------------------------
// cross-architecture report
// ---------------------------------------------------------------------------

struct EvalReport {
    struct Cell {
        std::string arch;
        int64_t repeat = 0;
        double accuracy = 0.0;  // EMA accuracy
        double raw_accuracy = 0.0;
    };
    std::vector<Cell> cells;
    std::vector<std::string> arch_order;

    std::vector<double> arch_accuracies(const std::string& arch) const {
        std::vector<double> v;
        for (const auto& c : cells) {
            if (c.arch == arch) v.push_back(c.accuracy);
        }
        return v;
    }

    static std::pair<double, double> mean_std(const std::vector<double>& v) {
        require(!v.empty(), "eval report: no runs");
        double m = 0.0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) var += (x - m) * (x - m);
        var /= static_cast<double>(v.size());
        return {m, std::sqrt(var)};
    }

    std::pair<double, double> arch_mean_std(const std::string& arch) const {
        return mean_std(arch_accuracies(arch));
    }

    double cross_arch_mean() const {
        double m = 0.0;
        for (const auto& a : arch_order) m += arch_mean_std(a).first;
        return m / static_cast<double>(arch_order.size());
    }

    std::string to_tsv() const {
        std::ostringstream os;
        os << "arch\trepeat\taccuracy\traw_accuracy\n";
        os << std::setprecision(6) << std::fixed;
        for (const auto& c : cells) {
            os << c.arch << '\t' << c.repeat << '\t' << c.accuracy << '\t' << c.raw_accuracy << '\n';
        }
        return os.str();
    }

    std::string to_markdown(const std::string& row_label) const {
        std::ostringstream os;
        os << std::setprecision(1) << std::fixed;
        os << "| distilled set |";
        for (const auto& a : arch_order) os << ' ' << a << " |";
        os << " average |\n|---|";
        for (size_t i = 0; i < arch_order.size() + 1; ++i) os << "---|";
        os << '\n';
        os << "| " << row_label << " |";
        for (const auto& a : arch_order) {
            auto [m, s] = arch_mean_std(a);
            os << ' ' << 100.0 * m << " ± " << 100.0 * s << " |";
        }
        os << ' ' << 100.0 * cross_arch_mean() << " |\n";
        return os.str();
    }
};

// Trains `repeats` students per architecture; each cell owns an RNG stream
// derived from (base seed, arch index, repeat).
template <class S>
EvalReport cross_arch_eval(const TensorT<S>& syn_images, const std::vector<int32_t>& syn_labels,
                           const std::vector<NetSpec>& archs, const EvalProtocol& protocol,
                           const TensorT<S>& val_images, const std::vector<int32_t>& val_labels,
                           uint64_t base_seed) {
    protocol.validate();
    require(!archs.empty(), "cross_arch_eval: no architectures");
    EvalReport report;
    for (const auto& a : archs) report.arch_order.push_back(to_string(a.family));
    for (size_t ai = 0; ai < archs.size(); ++ai) {
        for (int64_t rep = 0; rep < protocol.repeats; ++rep) {
            const uint64_t seed = seed_chain(base_seed, static_cast<uint64_t>(ai), static_cast<uint64_t>(rep));
            auto res = train_student(syn_images, syn_labels, archs[ai], protocol, seed, val_images, val_labels);
            report.cells.push_back({to_string(archs[ai].family), rep, res.ema_accuracy, res.raw_accuracy});
        }
    }
    return report;
}

}  // namespace glad
