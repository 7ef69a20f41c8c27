#ifndef PMNET_PARAMS_HPP
#define PMNET_PARAMS_HPP

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "pmnet/autodiff.hpp"
#include "pmnet/errors.hpp"
#include "pmnet/rng.hpp"

namespace pmnet {

// Named, ordered parameter registry. The order of registration defines the
// optimizer's flat layout and the checkpoint layout.
template <class T>
class ParamStore {
public:
    struct Entry {
        std::string name;
        int rows = 0, cols = 0;
        std::vector<T> value;
        std::vector<T> grad;
    };

    Entry& add(const std::string& name, int rows, int cols) {
        if (index_.count(name)) throw InputError("duplicate parameter: " + name);
        index_[name] = entries_.size();
        entries_.push_back(Entry{name, rows, cols,
                                 std::vector<T>(static_cast<std::size_t>(rows) * cols, T(0)),
                                 std::vector<T>(static_cast<std::size_t>(rows) * cols, T(0))});
        return entries_.back();
    }

    Entry& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw InputError("unknown parameter: " + name);
        return entries_[it->second];
    }
    const Entry& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw InputError("unknown parameter: " + name);
        return entries_[it->second];
    }

    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }

    std::size_t total_size() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.value.size();
        return n;
    }

    void zero_grad() {
        for (auto& e : entries_)
            std::fill(e.grad.begin(), e.grad.end(), T(0));
    }

    template <class U>
    void copy_from(const ParamStore<U>& other) {
        if (other.entries().size() != entries_.size())
            throw InputError("param store mismatch in copy_from");
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            const auto& src = other.entries()[i];
            auto& dst = entries_[i];
            if (src.name != dst.name || src.value.size() != dst.value.size())
                throw InputError("param mismatch at " + dst.name);
            for (std::size_t j = 0; j < src.value.size(); ++j)
                dst.value[j] = static_cast<T>(src.value[j]);
        }
    }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Per-forward-pass binding of parameters to tape leaves. Each entry becomes
// one leaf per tape so gradients accumulate across repeated uses.
template <class T>
class ParamBinder {
public:
    ParamBinder(ad::Tape<T>& tape, ParamStore<T>& store) : tape_(tape), store_(store) {}

    ad::Var<T> operator()(const std::string& name) {
        auto it = bound_.find(name);
        if (it != bound_.end()) return it->second;
        auto& e = store_.at(name);
        ad::Var<T> v = tape_.leaf(e.rows, e.cols, e.value.data(), true);
        bound_.emplace(name, v);
        return v;
    }

    // After tape.backward: push leaf gradients back into the store.
    void harvest_grads() {
        for (auto& [name, var] : bound_) {
            if (!var.n->needs_grad) continue;
            auto& e = store_.at(name);
            for (std::size_t i = 0; i < e.grad.size(); ++i) e.grad[i] += var.n->grad[i];
        }
    }

    ad::Tape<T>& tape() { return tape_; }

private:
    ad::Tape<T>& tape_;
    ParamStore<T>& store_;
    std::unordered_map<std::string, ad::Var<T>> bound_;
};

namespace init {

template <class T>
void normal(std::vector<T>& v, Rng& rng, double std_dev) {
    for (auto& x : v) x = static_cast<T>(std_dev * rng.normal());
}

template <class T>
void constant(std::vector<T>& v, double value) {
    for (auto& x : v) x = static_cast<T>(value);
}

// fan-in scaled init for linear layers [in, out]
template <class T>
void linear_weight(std::vector<T>& v, Rng& rng, int fan_in) {
    normal(v, rng, 1.0 / std::sqrt(static_cast<double>(fan_in)));
}

}  // namespace init

}  // namespace pmnet

#endif  // PMNET_PARAMS_HPP
