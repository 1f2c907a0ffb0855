#pragma once

#include "glnet/model.hpp"
#include "glnet/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace glnet {

struct LossConfig {
    double gamma = 6.0;
    double lambda = 0.15;
    double weight_main = 1.0;       // aggregated output
    double weight_aux_local = 1.0;  // local branch output
    double weight_aux_global = 1.0; // global branch output

    void validate() const
    {
        if (!(gamma >= 0))
            throw std::invalid_argument("gamma must be >= 0");
        if (!(lambda >= 0))
            throw std::invalid_argument("lambda must be >= 0");
        if (!(weight_main > 0 && weight_aux_local > 0 && weight_aux_global > 0))
            throw std::invalid_argument("loss weights must be > 0");
    }
};

template <typename T>
struct LossResult {
    T value = 0;
    Tensor<T> grad; // d value / d logits
};

// Mean over pixels of -(1 - p_t)^gamma * log p_t, p_t the softmax probability
// of the target class; log p_t is clamped below at log(1e-12).
template <typename T>
LossResult<T> focal_loss(const Tensor<T>& logits, const Mask& target, double gamma)
{
    if (target.height() != logits.height() || target.width() != logits.width() || target.channels() != 1)
        throw std::invalid_argument("focal loss shape mismatch: logits " + to_string(logits.shape()) + ", target " +
                                    to_string(target.shape()));
    if (!(gamma >= 0))
        throw std::invalid_argument("gamma must be >= 0");
    const int K = logits.channels();
    const std::size_t plane = logits.shape().plane();
    if (plane == 0)
        throw std::invalid_argument("empty logits");
    LossResult<T> out;
    out.grad = Tensor<T>(logits.shape());
    const double log_floor = std::log(1e-12);
    const double inv_n = 1.0 / static_cast<double>(plane);
    std::vector<double> p(K);
    double total = 0;
    for (std::size_t i = 0; i < plane; ++i) {
        const int t = target[i];
        if (t >= K)
            throw std::invalid_argument("target class " + std::to_string(t) + " outside [0, " + std::to_string(K) +
                                        ")");
        double zmax = -INFINITY;
        for (int c = 0; c < K; ++c) {
            const double z = static_cast<double>(logits[c * plane + i]);
            if (std::isnan(z))
                throw std::invalid_argument("NaN logit");
            zmax = std::max(zmax, z);
        }
        double sum = 0;
        for (int c = 0; c < K; ++c) {
            p[c] = std::exp(static_cast<double>(logits[c * plane + i]) - zmax);
            sum += p[c];
        }
        for (int c = 0; c < K; ++c)
            p[c] /= sum;
        const double raw_log_pt = static_cast<double>(logits[t * plane + i]) - zmax - std::log(sum);
        const bool clamped = raw_log_pt < log_floor;
        const double log_pt = clamped ? log_floor : raw_log_pt;
        const double pt = p[t];
        const double q = 1.0 - pt;
        const double mod = gamma == 0 ? 1.0 : std::pow(q, gamma);
        total += -mod * log_pt;

        // d/dz_c = [gamma q^(gamma-1) pt log_pt - q^gamma * dlog] (delta_ct - p_c)
        const double dmod_term = (gamma == 0 || q <= 0) ? 0.0 : gamma * std::pow(q, gamma - 1) * pt * log_pt;
        const double coeff = (dmod_term - (clamped ? 0.0 : mod)) * inv_n;
        for (int c = 0; c < K; ++c)
            out.grad[c * plane + i] = static_cast<T>(coeff * ((c == t ? 1.0 : 0.0) - p[c]));
    }
    out.value = static_cast<T>(total * inv_n);
    return out;
}

template <typename T>
LossResult<T> phase1_objective(const Tensor<T>& global_logits, const Mask& target_lr, const LossConfig& cfg)
{
    return focal_loss(global_logits, target_lr, cfg.gamma);
}

// (1/n) sum over a batch of (logits, target) pairs; grads are per item and
// already carry the 1/n factor.
template <typename T>
struct BatchLoss {
    T value = 0;
    std::vector<Tensor<T>> grads;
};

template <typename T>
BatchLoss<T> phase1_batch_objective(const std::vector<Tensor<T>>& logits, const std::vector<Mask>& targets,
                                    const LossConfig& cfg)
{
    if (logits.size() != targets.size() || logits.empty())
        throw std::invalid_argument("batch size mismatch");
    BatchLoss<T> out;
    const T inv = T(1) / static_cast<T>(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        auto r = phase1_objective(logits[i], targets[i], cfg);
        out.value += r.value * inv;
        r.grad *= inv;
        out.grads.push_back(std::move(r.grad));
    }
    return out;
}

template <typename T>
struct Phase2Loss {
    T value = 0;
    T focal_local = 0;
    T focal_agg = 0;
    T penalty = 0;
    Tensor<T> grad_local_logits;
    Tensor<T> grad_agg_logits;
    Tensor<T> grad_local_last;
};

// Focal(S^L) + Focal(S^Agg) + lambda * ||X^G_L - X^L_L||, everything in the
// patch frame; the global last tap is a constant.
template <typename T>
Phase2Loss<T> phase2_objective(const Tensor<T>& local_logits, const Tensor<T>& agg_logits, const Mask& target_hr,
                               const Tensor<T>& global_last, const Tensor<T>& local_last, const LossConfig& cfg)
{
    if (local_logits.shape() != agg_logits.shape())
        throw std::invalid_argument("phase-2 logits shape mismatch");
    auto fl = focal_loss(local_logits, target_hr, cfg.gamma);
    auto fa = focal_loss(agg_logits, target_hr, cfg.gamma);
    auto pen = coupling_penalty(cfg.lambda, local_last, global_last);
    Phase2Loss<T> out;
    out.focal_local = fl.value;
    out.focal_agg = fa.value;
    out.penalty = pen.value;
    out.value = static_cast<T>(cfg.weight_aux_local * fl.value + cfg.weight_main * fa.value + pen.value);
    fl.grad *= static_cast<T>(cfg.weight_aux_local);
    fa.grad *= static_cast<T>(cfg.weight_main);
    out.grad_local_logits = std::move(fl.grad);
    out.grad_agg_logits = std::move(fa.grad);
    out.grad_local_last = std::move(pen.grad_local);
    return out;
}

template <typename T>
struct Phase3Loss {
    T value = 0;
    T focal_global = 0;
    T focal_agg = 0;
    Tensor<T> grad_global_logits;
    Tensor<T> grad_agg_logits;
};

// Focal(S^G at the patch) + Focal(S^Agg).
template <typename T>
Phase3Loss<T> phase3_objective(const Tensor<T>& global_logits_at_patch, const Tensor<T>& agg_logits,
                               const Mask& target_hr, const LossConfig& cfg)
{
    if (global_logits_at_patch.shape() != agg_logits.shape())
        throw std::invalid_argument("phase-3 logits shape mismatch");
    auto fg = focal_loss(global_logits_at_patch, target_hr, cfg.gamma);
    auto fa = focal_loss(agg_logits, target_hr, cfg.gamma);
    Phase3Loss<T> out;
    out.focal_global = fg.value;
    out.focal_agg = fa.value;
    out.value = static_cast<T>(cfg.weight_aux_global * fg.value + cfg.weight_main * fa.value);
    fg.grad *= static_cast<T>(cfg.weight_aux_global);
    fa.grad *= static_cast<T>(cfg.weight_main);
    out.grad_global_logits = std::move(fg.grad);
    out.grad_agg_logits = std::move(fa.grad);
    return out;
}

} // namespace glnet
