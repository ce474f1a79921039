// Named parameter arrays with gradients. Modules own their Param objects and
// register pointers in a ParameterStore; registration order is the
// construction order and defines the documented checkpoint array order.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "physiossl/common.hpp"
#include "physiossl/rng.hpp"

namespace physiossl::nn {

template <class S>
struct Param {
    std::string name;
    std::vector<long long> shape;
    std::vector<S> w;
    std::vector<S> g;        // gradient, same size as w (empty for buffers)
    bool is_buffer = false;  // buffers (BN running stats) carry no gradient

    long long size() const {
        long long n = 1;
        for (long long d : shape) n *= d;
        return n;
    }
};

template <class S>
class ParameterStore {
public:
    Param<S>& add(Param<S>* p) {
        items_.push_back(p);
        return *p;
    }

    const std::vector<Param<S>*>& items() const { return items_; }

    Param<S>* find(const std::string& name) const {
        for (Param<S>* p : items_)
            if (p->name == name) return p;
        return nullptr;
    }

    void zero_grads() {
        for (Param<S>* p : items_)
            if (!p->is_buffer) std::fill(p->g.begin(), p->g.end(), S(0));
    }

    // Post-backward sanity scan; names the offending array.
    void check_finite_grads() const {
        for (const Param<S>* p : items_) {
            if (p->is_buffer) continue;
            for (S v : p->g)
                if (!std::isfinite(static_cast<double>(v)))
                    throw NumericError("non-finite gradient in parameter '" + p->name + "'");
        }
    }

    long long total_parameters() const {
        long long n = 0;
        for (const Param<S>* p : items_)
            if (!p->is_buffer) n += p->size();
        return n;
    }

private:
    std::vector<Param<S>*> items_;
};

// Fan-in uniform init, the default for linear and convolution weights.
template <class S>
void init_uniform_fan_in(Param<S>& p, long long fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (S& v : p.w) v = static_cast<S>(rng.uniform(-bound, bound));
}

template <class S>
void make_param(ParameterStore<S>& store, Param<S>& p, std::string name,
                std::vector<long long> shape, bool is_buffer = false) {
    p.name = std::move(name);
    p.shape = std::move(shape);
    p.is_buffer = is_buffer;
    p.w.assign(static_cast<std::size_t>(p.size()), S(0));
    if (!is_buffer) p.g.assign(static_cast<std::size_t>(p.size()), S(0));
    store.add(&p);
}

}  // namespace physiossl::nn
