#pragma once

#include <memory>
#include <string>
#include <vector>

#include "glad/core/rng.hpp"
#include "glad/tensor/autodiff.hpp"
#include "glad/tensor/ops.hpp"

namespace glad {

// Ordered, contiguous map of named tensors into one flat vector. Every model
// in the repo (classifiers, the generator) stores its weights this way, so a
// whole parameter set is a single differentiable tensor.
struct ParamLayout {
    struct Entry {
        std::string name;
        Shape shape;
        int64_t offset = 0;
    };

    std::vector<Entry> entries;
    int64_t total = 0;

    void add(std::string name, Shape shape) {
        Entry e;
        e.name = std::move(name);
        e.shape = std::move(shape);
        e.offset = total;
        total += shape_numel(e.shape);
        entries.push_back(std::move(e));
    }

    const Entry& find(const std::string& name) const {
        for (const auto& e : entries) {
            if (e.name == name) return e;
        }
        fail("param layout: no entry named '", name, "'");
    }
};

using ParamLayoutPtr = std::shared_ptr<const ParamLayout>;

// Flattened parameters: one flat tensor plus the shared layout. The flat
// tensor may be a tracked expression (e.g. an unrolled student step), which
// is what lets losses differentiate through parameter updates.
template <class S>
struct ParamVectorT {
    TensorT<S> flat;
    ParamLayoutPtr layout;

    int64_t size() const { return layout ? layout->total : 0; }

    template <class T>
    ParamVectorT<T> cast() const {
        return {flat.template cast<T>(), layout};
    }
};

using ParamVector = ParamVectorT<double>;

// Differentiable view of one named parameter inside the flat vector.
template <class S>
TensorT<S> param_view(const TensorT<S>& flat, const ParamLayout& layout, const std::string& name) {
    const auto& e = layout.find(name);
    return reshape(slice_axis0(flat, e.offset, shape_numel(e.shape)), e.shape);
}

template <class S>
TensorT<S> param_view(const ParamVectorT<S>& pv, const std::string& name) {
    return param_view(pv.flat, *pv.layout, name);
}

// Named-tensor round trip used by tests and initializers.
template <class S>
std::vector<std::pair<std::string, TensorT<S>>> unflatten(const ParamVectorT<S>& pv) {
    std::vector<std::pair<std::string, TensorT<S>>> out;
    for (const auto& e : pv.layout->entries) {
        out.emplace_back(e.name, param_view(pv.flat, *pv.layout, e.name));
    }
    return out;
}

template <class S>
ParamVectorT<S> flatten(const ParamLayoutPtr& layout,
                        const std::vector<std::pair<std::string, TensorT<S>>>& named) {
    require(named.size() == layout->entries.size(), "flatten: expected ", layout->entries.size(),
            " tensors, got ", named.size());
    std::vector<S> vals(static_cast<size_t>(layout->total));
    for (const auto& [name, t] : named) {
        const auto& e = layout->find(name);
        require(t.shape() == e.shape, "flatten: '", name, "' has shape ", shape_str(t.shape()),
                ", layout expects ", shape_str(e.shape));
        std::copy(t.values().begin(), t.values().end(), vals.begin() + e.offset);
    }
    return {TensorT<S>::from({layout->total}, std::move(vals)), layout};
}

// Kaiming fan-in normal fill for weight entries, zeros for biases.
// An entry is a bias iff its name ends in ".b".
template <class S>
ParamVectorT<S> init_kaiming(const ParamLayoutPtr& layout, Rng& rng,
                             const std::function<int64_t(const ParamLayout::Entry&)>& fan_in) {
    std::vector<S> vals(static_cast<size_t>(layout->total), S(0));
    for (const auto& e : layout->entries) {
        const bool bias = e.name.size() >= 2 && e.name.compare(e.name.size() - 2, 2, ".b") == 0;
        if (bias) continue;
        const double stdev = std::sqrt(2.0 / static_cast<double>(fan_in(e)));
        for (int64_t i = 0; i < shape_numel(e.shape); ++i) {
            vals[static_cast<size_t>(e.offset + i)] = static_cast<S>(rng.normal(0.0, stdev));
        }
    }
    return {TensorT<S>::from({layout->total}, std::move(vals)), layout};
}

}  // namespace glad
