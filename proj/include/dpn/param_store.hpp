#pragma once

#include <map>
#include <string>
#include <vector>

#include "dpn/error.hpp"
#include "dpn/tensor.hpp"

namespace dpn {

/// A learnable (or frozen) tensor together with its gradient slot.
template <typename T>
struct ParamEntry {
    Tensor<T> value;
    Tensor<T> grad;
    bool trainable = true;
};

/// Named parameter collection keyed by hierarchical names such as
/// `encoder/conv3_2/kernel`. Iteration order is lexicographic by name.
template <typename T>
class ParamStore {
public:
    using Map = std::map<std::string, ParamEntry<T>>;

    ParamEntry<T>& add(const std::string& name, Tensor<T> value, bool trainable) {
        if (entries_.count(name)) throw ValueError("parameter '" + name + "' registered twice");
        Tensor<T> grad(value.shape());
        auto [it, _] = entries_.emplace(name, ParamEntry<T>{std::move(value), std::move(grad), trainable});
        return it->second;
    }

    /// Replaces or inserts an entry; used by checkpoint loading.
    void put(const std::string& name, Tensor<T> value, bool trainable) {
        Tensor<T> grad(value.shape());
        entries_[name] = ParamEntry<T>{std::move(value), std::move(grad), trainable};
    }

    bool contains(const std::string& name) const { return entries_.count(name) != 0; }

    ParamEntry<T>& entry(const std::string& name) {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ValueError("unknown parameter '" + name + "'");
        return it->second;
    }
    const ParamEntry<T>& entry(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ValueError("unknown parameter '" + name + "'");
        return it->second;
    }

    Tensor<T>& value(const std::string& name) { return entry(name).value; }
    const Tensor<T>& value(const std::string& name) const { return entry(name).value; }
    Tensor<T>& grad(const std::string& name) { return entry(name).grad; }

    /// Adds `g` into the gradient slot of a trainable entry; frozen slots stay zero.
    void accumulate_grad(const std::string& name, const Tensor<T>& g) {
        auto& e = entry(name);
        if (!e.trainable) return;
        require_same_shape(e.grad.shape(), g.shape(), name.c_str());
        for (std::size_t i = 0; i < g.size(); ++i) e.grad[i] += g[i];
        grads_ready_ = true;
    }

    /// Overwrites a gradient slot directly (tests, external gradient sources).
    void set_grad(const std::string& name, const Tensor<T>& g) {
        auto& e = entry(name);
        require_same_shape(e.grad.shape(), g.shape(), name.c_str());
        e.grad = g;
        grads_ready_ = true;
    }

    /// True once any gradient has been written since the last zero_grads().
    bool grads_ready() const noexcept { return grads_ready_; }

    void zero_grads() {
        for (auto& [_, e] : entries_) e.grad.fill(T(0));
        grads_ready_ = false;
    }

    void set_trainable_prefix(const std::string& prefix, bool trainable) {
        for (auto& [name, e] : entries_)
            if (name.rfind(prefix, 0) == 0) e.trainable = trainable;
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        for (const auto& [name, _] : entries_) out.push_back(name);
        return out;
    }

    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }

    Map& entries() noexcept { return entries_; }
    const Map& entries() const noexcept { return entries_; }

    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (const auto& [name, e] : entries_) out.put(name, e.value.template cast<U>(), e.trainable);
        return out;
    }

private:
    Map entries_;
    bool grads_ready_ = false;
};

} // namespace dpn
