// SGD with L2 weight decay and optional momentum.
#pragma once

#include <functional>
#include <vector>

#include "physiossl/nn/params.hpp"

namespace physiossl::nn {

template <class S>
class Sgd {
public:
    Sgd(double lr, double weight_decay, double momentum = 0.0)
        : lr_(lr), wd_(weight_decay), momentum_(momentum) {}

    // filter: returns true for parameters this step is allowed to update
    // (used by frozen mode to confine updates to the emotion head).
    void step(ParameterStore<S>& store,
              const std::function<bool(const std::string&)>& filter = nullptr) {
        const auto& items = store.items();
        if (momentum_ != 0.0 && velocity_.size() != items.size()) {
            velocity_.resize(items.size());
            for (std::size_t i = 0; i < items.size(); ++i)
                velocity_[i].assign(items[i]->w.size(), S(0));
        }
        for (std::size_t i = 0; i < items.size(); ++i) {
            Param<S>* p = items[i];
            if (p->is_buffer) continue;
            if (filter && !filter(p->name)) continue;
            const S lr = static_cast<S>(lr_);
            const S wd = static_cast<S>(wd_);
            if (momentum_ == 0.0) {
                for (std::size_t j = 0; j < p->w.size(); ++j)
                    p->w[j] -= lr * (p->g[j] + wd * p->w[j]);
            } else {
                const S mom = static_cast<S>(momentum_);
                auto& vel = velocity_[i];
                for (std::size_t j = 0; j < p->w.size(); ++j) {
                    vel[j] = mom * vel[j] + p->g[j] + wd * p->w[j];
                    p->w[j] -= lr * vel[j];
                }
            }
        }
    }

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }

private:
    double lr_, wd_, momentum_;
    std::vector<std::vector<S>> velocity_;
};

}  // namespace physiossl::nn
