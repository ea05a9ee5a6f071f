#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "moog/tensor.hpp"

namespace moog {

// Ordered map from dotted names ("predictor.layer0.self.wq") to tensors.
// Iteration follows insertion order, which is deterministic per build.
template <typename T>
class ParamSet {
public:
    struct Entry {
        std::string name;
        Tensor<T> tensor;
        bool trainable = true;
    };

    Tensor<T>& emplace(const std::string& name, Tensor<T> t, bool trainable = true) {
        require(!index_.count(name), "duplicate parameter name: " + name);
        index_[name] = static_cast<int>(entries_.size());
        entries_.push_back(Entry{name, std::move(t), trainable});
        return entries_.back().tensor;
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    const Tensor<T>& at(const std::string& name) const {
        auto it = index_.find(name);
        require(it != index_.end(), "unknown parameter: " + name);
        return entries_[static_cast<size_t>(it->second)].tensor;
    }
    Tensor<T>& at(const std::string& name) {
        auto it = index_.find(name);
        require(it != index_.end(), "unknown parameter: " + name);
        return entries_[static_cast<size_t>(it->second)].tensor;
    }
    const Entry& entry(const std::string& name) const {
        auto it = index_.find(name);
        require(it != index_.end(), "unknown parameter: " + name);
        return entries_[static_cast<size_t>(it->second)];
    }

    void set_trainable(const std::string& name, bool v) {
        auto it = index_.find(name);
        require(it != index_.end(), "unknown parameter: " + name);
        entries_[static_cast<size_t>(it->second)].trainable = v;
    }

    size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    int64_t scalar_count() const {
        int64_t n = 0;
        for (const auto& e : entries_) n += e.tensor.size();
        return n;
    }

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    ParamSet zeros_like() const {
        ParamSet out;
        for (const auto& e : entries_) out.emplace(e.name, Tensor<T>::zeros(e.tensor.shape), e.trainable);
        return out;
    }

    template <typename U>
    ParamSet<U> cast() const {
        ParamSet<U> out;
        for (const auto& e : entries_) out.emplace(e.name, e.tensor.template cast<U>(), e.trainable);
        return out;
    }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, int> index_;
};

using ParamSetF = ParamSet<float>;
using ParamSetD = ParamSet<double>;

// Adam moments; shapes mirror the parameter set, step counts updates applied.
template <typename T>
struct OptState {
    int64_t step = 0;
    ParamSet<T> m, v;

    static OptState init_like(const ParamSet<T>& params) {
        OptState s;
        s.m = params.zeros_like();
        s.v = params.zeros_like();
        return s;
    }
};

using OptStateF = OptState<float>;

}  // namespace moog
