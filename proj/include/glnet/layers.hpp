#pragma once

#include "glnet/ops.hpp"
#include "glnet/tensor.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace glnet {

// A trainable array with its gradient and Adam moments.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    Tensor<T> moment1;
    Tensor<T> moment2;

    Parameter() = default;
    Parameter(std::string n, Shape s) : name(std::move(n)), value(s), grad(s), moment1(s), moment2(s) {}

    void zero_grad() { grad.fill(T(0)); }
    T grad_norm() const { return std::sqrt(squared_norm(grad)); }
};

template <typename T>
using ParamRefs = std::vector<Parameter<T>*>;

template <typename T>
struct ConvCache {
    Tensor<T> input;
    Tensor<T> cols;
    Tensor<T> output; // post-activation when the layer has one
};

template <typename T>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(std::string name, int in_channels, int out_channels, ops::ConvGeometry geometry, bool relu)
        : weight_(name + ".weight", {1, out_channels, in_channels * geometry.kernel * geometry.kernel}),
          bias_(name + ".bias", {1, 1, out_channels}), geometry_(geometry), in_(in_channels), out_(out_channels),
          relu_(relu)
    {
    }

    int in_channels() const noexcept { return in_; }
    int out_channels() const noexcept { return out_; }
    const ops::ConvGeometry& geometry() const noexcept { return geometry_; }
    Parameter<T>& weight() noexcept { return weight_; }
    Parameter<T>& bias() noexcept { return bias_; }
    const Parameter<T>& weight() const noexcept { return weight_; }
    const Parameter<T>& bias() const noexcept { return bias_; }

    // He-normal weights, zero bias.
    template <typename Rng>
    void init(Rng& rng)
    {
        const double fan_in = static_cast<double>(weight_.value.width());
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
        for (auto& v : weight_.value.values())
            v = static_cast<T>(dist(rng));
        bias_.value.fill(T(0));
    }

    Tensor<T> forward(const Tensor<T>& x, ConvCache<T>* cache) const
    {
        Tensor<T> y = ops::conv2d(x, weight_.value, bias_.value, geometry_, cache ? &cache->cols : nullptr);
        if (relu_)
            ops::relu_inplace(y);
        if (cache) {
            cache->input = x;
            if (relu_)
                cache->output = y;
        }
        return y;
    }

    // dy is consumed (masked in place for the activation).
    void backward(const ConvCache<T>& cache, Tensor<T>& dy, Tensor<T>* dx)
    {
        if (relu_)
            ops::relu_backward_inplace(cache.output, dy);
        ops::conv2d_backward(cache.input, cache.cols, weight_.value, geometry_, dy, weight_.grad, bias_.grad, dx);
    }

    void collect(ParamRefs<T>& out)
    {
        out.push_back(&weight_);
        out.push_back(&bias_);
    }

private:
    Parameter<T> weight_;
    Parameter<T> bias_;
    ops::ConvGeometry geometry_{};
    int in_ = 0;
    int out_ = 0;
    bool relu_ = false;
};

} // namespace glnet
