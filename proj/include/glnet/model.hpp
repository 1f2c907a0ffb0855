#pragma once

#include "glnet/branch.hpp"
#include "glnet/sharing.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace glnet {

template <typename T>
struct AggregationCache {
    ConvCache<T> conv;
    Shape small;
};

// 3x3 convolution over concat(local last tap, global last tap) -> class logits,
// upsampled to the patch frame.
template <typename T>
class AggregationHead {
public:
    AggregationHead() = default;
    AggregationHead(int channels, int num_classes, double lambda)
        : conv_("agg", 2 * channels, num_classes, {3, 1, 1}, false), channels_(channels), lambda_(lambda)
    {
        if (lambda < 0)
            throw std::invalid_argument("negative coupling coefficient");
    }

    double lambda() const noexcept { return lambda_; }
    void set_lambda(double l)
    {
        if (l < 0)
            throw std::invalid_argument("negative coupling coefficient");
        lambda_ = l;
    }
    Conv2d<T>& conv() noexcept { return conv_; }

    template <typename Rng>
    void init(Rng& rng)
    {
        conv_.init(rng);
    }

    Tensor<T> forward(const Tensor<T>& local_last, const Tensor<T>& global_last, int out_h, int out_w,
                      AggregationCache<T>* cache = nullptr) const
    {
        if (local_last.shape() != global_last.shape())
            throw std::invalid_argument("aggregation inputs differ: " + to_string(local_last.shape()) + " vs " +
                                        to_string(global_last.shape()));
        if (local_last.channels() != channels_)
            throw std::invalid_argument("aggregation channel mismatch");
        Tensor<T> small = conv_.forward(ops::concat_channels<T>({&local_last, &global_last}),
                                        cache ? &cache->conv : nullptr);
        if (cache)
            cache->small = small.shape();
        return ops::resize_bilinear(small, out_h, out_w);
    }

    // Accumulates head gradients and writes input gradients for whichever of
    // dlocal/dglobal is non-null.
    void backward(const AggregationCache<T>& cache, const Tensor<T>& dlogits, Tensor<T>* dlocal, Tensor<T>* dglobal)
    {
        Tensor<T> dsmall(cache.small);
        ops::resize_bilinear_backward(dlogits, dsmall);
        Tensor<T> dcat;
        conv_.backward(cache.conv, dsmall, (dlocal || dglobal) ? &dcat : nullptr);
        if (dlocal)
            *dlocal += ops::slice_channels(dcat, 0, channels_);
        if (dglobal)
            *dglobal += ops::slice_channels(dcat, channels_, channels_);
    }

    ParamRefs<T> params()
    {
        ParamRefs<T> out;
        conv_.collect(out);
        return out;
    }

private:
    Conv2d<T> conv_;
    int channels_ = 0;
    double lambda_ = 0.15;
};

template <typename T>
struct PenaltyResult {
    T value = 0;
    Tensor<T> grad_local; // d value / d local; the global side gets none
};

// lambda * ||local - global||_F with `global` held constant.
template <typename T>
PenaltyResult<T> coupling_penalty(double lambda, const Tensor<T>& local_last, const Tensor<T>& global_last)
{
    if (local_last.shape() != global_last.shape())
        throw std::invalid_argument("coupling penalty shape mismatch");
    PenaltyResult<T> out;
    out.grad_local = Tensor<T>(local_last.shape());
    double ss = 0;
    for (std::size_t i = 0; i < local_last.size(); ++i) {
        const double d = static_cast<double>(local_last[i]) - static_cast<double>(global_last[i]);
        ss += d * d;
    }
    const double norm = std::sqrt(ss);
    out.value = static_cast<T>(lambda * norm);
    if (norm > 0)
        for (std::size_t i = 0; i < local_last.size(); ++i)
            out.grad_local[i] = static_cast<T>(lambda * (static_cast<double>(local_last[i]) - global_last[i]) / norm);
    return out;
}

enum class Phase : int { untrained = 0, global_only = 1, global_to_local = 2, bidirectional = 3 };

// Both branches, the aggregation head, and where training has got to. The
// branches share one architecture; only their input sizes differ (global
// image size vs patch size).
template <typename T>
struct GLNet {
    BranchConfig global_config;
    BranchConfig local_config;
    SharePlan plan;
    Branch<T> global;
    Branch<T> local;
    AggregationHead<T> head;
    Phase phase = Phase::untrained;

    GLNet() = default;
    GLNet(const BranchConfig& arch, int global_size, int patch_size, SharePlan share, double lambda)
        : global_config(with_input(arch, global_size)), local_config(with_input(arch, patch_size)), plan(share),
          global("global", global_config), local("local", local_config),
          head(arch.fpn_channels, arch.num_classes, lambda)
    {
    }

    static BranchConfig with_input(BranchConfig cfg, int size)
    {
        cfg.input_h = size;
        cfg.input_w = size;
        return cfg;
    }

    int num_classes() const noexcept { return local_config.num_classes; }
    int patch_size() const noexcept { return local_config.input_h; }
    int global_size() const noexcept { return global_config.input_h; }

    void init(std::uint64_t seed)
    {
        std::mt19937_64 rng(seed);
        global.init(rng);
        local.init(rng);
        head.init(rng);
    }

    std::vector<int> shared_taps() const { return plan.shared_taps(local_config); }

    ParamRefs<T> all_params()
    {
        auto out = global.params();
        for (auto* p : local.params())
            out.push_back(p);
        for (auto* p : head.params())
            out.push_back(p);
        return out;
    }

    void zero_grad()
    {
        for (auto* p : all_params())
            p->zero_grad();
    }
};

} // namespace glnet
