#pragma once

#include "glnet/layers.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace glnet {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
class Adam {
public:
    Adam(ParamRefs<T> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg)
    {
        if (cfg_.lr < 0)
            throw std::invalid_argument("negative learning rate");
        for (auto* p : params_) {
            p->moment1.fill(T(0));
            p->moment2.fill(T(0));
        }
    }

    const ParamRefs<T>& params() const noexcept { return params_; }
    long steps() const noexcept { return t_; }

    // Applies one update from each parameter's current .grad.
    void step()
    {
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (auto* p : params_) {
            for (std::size_t i = 0; i < p->value.size(); ++i) {
                const double g = static_cast<double>(p->grad[i]);
                const double m = cfg_.beta1 * p->moment1[i] + (1 - cfg_.beta1) * g;
                const double v = cfg_.beta2 * p->moment2[i] + (1 - cfg_.beta2) * g * g;
                p->moment1[i] = static_cast<T>(m);
                p->moment2[i] = static_cast<T>(v);
                const double update = cfg_.lr * (m / c1) / (std::sqrt(v / c2) + cfg_.eps);
                if (update != 0)
                    p->value[i] = static_cast<T>(p->value[i] - update);
            }
        }
    }

private:
    ParamRefs<T> params_;
    AdamConfig cfg_;
    long t_ = 0;
};

// "Late update": per-minibatch mean gradients are averaged over `period`
// minibatches before one optimizer step. Backward passes add raw per-sample
// gradients into Parameter::grad; end_minibatch(n) folds them in.
template <typename T>
class LateUpdate {
public:
    LateUpdate(Adam<T> optimizer, int period) : opt_(std::move(optimizer)), period_(period)
    {
        if (period < 1)
            throw std::invalid_argument("accumulation period must be >= 1");
        for (auto* p : opt_.params())
            acc_.emplace_back(p->value.shape());
    }

    int period() const noexcept { return period_; }
    int pending() const noexcept { return pending_; }
    long steps() const noexcept { return opt_.steps(); }

    // Returns true when an optimizer step was taken.
    bool end_minibatch(int samples)
    {
        if (samples < 1)
            throw std::invalid_argument("minibatch without samples");
        const T inv = T(1) / static_cast<T>(samples);
        const auto& ps = opt_.params();
        for (std::size_t k = 0; k < ps.size(); ++k) {
            auto& g = ps[k]->grad;
            for (std::size_t i = 0; i < g.size(); ++i)
                acc_[k][i] += g[i] * inv;
            g.fill(T(0));
        }
        if (++pending_ < period_)
            return false;
        apply();
        return true;
    }

    // Steps on a partial accumulation (e.g. at the end of an epoch).
    bool flush()
    {
        if (pending_ == 0)
            return false;
        apply();
        return true;
    }

private:
    void apply()
    {
        const auto& ps = opt_.params();
        const T inv = T(1) / static_cast<T>(pending_);
        for (std::size_t k = 0; k < ps.size(); ++k) {
            auto& g = ps[k]->grad;
            for (std::size_t i = 0; i < g.size(); ++i)
                g[i] = acc_[k][i] * inv;
            acc_[k].fill(T(0));
        }
        opt_.step();
        for (auto* p : ps)
            p->zero_grad();
        pending_ = 0;
    }

    Adam<T> opt_;
    int period_;
    int pending_ = 0;
    std::vector<Tensor<T>> acc_;
};

} // namespace glnet
