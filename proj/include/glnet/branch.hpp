#pragma once

#include "glnet/layers.hpp"
#include "glnet/ops.hpp"

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace glnet {

// Miniature FPN: a stride-2 stem, `stage_channels.size()` stride-2 encoder
// stages, a top-down pathway with 1x1 laterals and 3x3 smoothing, and a final
// lateral fusion at the finest pyramid level. Taps, in order:
//   [0, n)      encoder stages, finest first
//   [n, 2n)     smoothed top-down maps, coarsest first
//   2n          fused final map (reserved for aggregation and the coupling penalty)
struct BranchConfig {
    int input_h = 128;
    int input_w = 128;
    int num_classes = 3;
    int stem_channels = 8;
    std::vector<int> stage_channels{8, 16, 24, 32};
    int fpn_channels = 16;

    int num_stages() const noexcept { return static_cast<int>(stage_channels.size()); }
    int num_taps() const noexcept { return 2 * num_stages() + 1; }
    int last_tap() const noexcept { return num_taps() - 1; }

    void validate() const
    {
        if (stage_channels.empty())
            throw std::invalid_argument("branch needs at least one encoder stage");
        if (input_h <= 0 || input_w <= 0 || num_classes < 2 || stem_channels <= 0 || fpn_channels <= 0)
            throw std::invalid_argument("invalid branch config");
        for (int c : stage_channels)
            if (c <= 0)
                throw std::invalid_argument("invalid stage channel count");
    }

    // Spatial/channel shape of every tap for an input of the configured size.
    std::vector<Shape> tap_shapes() const
    {
        const int n = num_stages();
        auto half = [](int v) { return (v + 1) / 2; };
        std::vector<Shape> enc;
        int h = half(input_h), w = half(input_w);
        for (int k = 0; k < n; ++k) {
            h = half(h);
            w = half(w);
            enc.push_back({stage_channels[k], h, w});
        }
        std::vector<Shape> out = enc;
        for (int k = n - 1; k >= 0; --k)
            out.push_back({fpn_channels, enc[k].height, enc[k].width});
        out.push_back({fpn_channels, enc[0].height, enc[0].width});
        return out;
    }

    friend bool operator==(const BranchConfig&, const BranchConfig&) = default;
};

// Per-tap maps to concatenate into a branch; empty tensors mean "no injection".
template <typename T>
using Injection = std::vector<Tensor<T>>;

template <typename T>
struct BranchOutput {
    std::vector<Tensor<T>> taps;
    Tensor<T> logits; // num_classes x input_h x input_w
};

template <typename T>
struct BranchCache {
    ConvCache<T> stem;
    std::vector<ConvCache<T>> enc, enc_proj, lat, smooth, smooth_proj;
    std::vector<bool> enc_injected, smooth_injected;
    std::vector<Shape> td_shapes, smooth_shapes;
    ConvCache<T> fuse, clf;
    Shape clf_shape;
};

template <typename T>
class Branch {
public:
    Branch() = default;
    Branch(std::string name, BranchConfig cfg) : name_(std::move(name)), cfg_(std::move(cfg))
    {
        cfg_.validate();
        const int n = cfg_.num_stages();
        const int d = cfg_.fpn_channels;
        using G = ops::ConvGeometry;
        stem_ = Conv2d<T>(name_ + ".stem", 3, cfg_.stem_channels, G{3, 2, 1}, true);
        int prev = cfg_.stem_channels;
        for (int k = 0; k < n; ++k) {
            const int c = cfg_.stage_channels[k];
            const auto idx = std::to_string(k);
            enc_.emplace_back(name_ + ".enc" + idx, prev, c, G{3, 2, 1}, true);
            enc_proj_.emplace_back(name_ + ".enc_proj" + idx, 2 * c, c, G{1, 1, 0}, false);
            lat_.emplace_back(name_ + ".lat" + idx, c, d, G{1, 1, 0}, false);
            smooth_.emplace_back(name_ + ".smooth" + idx, d, d, G{3, 1, 1}, true);
            smooth_proj_.emplace_back(name_ + ".smooth_proj" + idx, 2 * d, d, G{1, 1, 0}, false);
            prev = c;
        }
        fuse_ = Conv2d<T>(name_ + ".fuse", n * d, d, G{1, 1, 0}, true);
        clf_ = Conv2d<T>(name_ + ".clf", d, cfg_.num_classes, G{1, 1, 0}, false);
    }

    const BranchConfig& config() const noexcept { return cfg_; }
    const std::string& name() const noexcept { return name_; }

    template <typename Rng>
    void init(Rng& rng)
    {
        stem_.init(rng);
        for (auto& l : enc_)
            l.init(rng);
        for (auto& l : lat_)
            l.init(rng);
        for (auto& l : smooth_)
            l.init(rng);
        fuse_.init(rng);
        clf_.init(rng);
        for (auto& p : enc_proj_)
            init_projection(p);
        for (auto& p : smooth_proj_)
            init_projection(p);
    }

    // Identity on the branch's own channels, zero on the injected ones.
    static void init_projection(Conv2d<T>& p)
    {
        auto& w = p.weight().value;
        w.fill(T(0));
        const int c = p.out_channels();
        for (int o = 0; o < c; ++o)
            w(0, o, o) = T(1);
        p.bias().value.fill(T(0));
    }

    // Projection layer consuming the injection at `tap` (tap < last_tap()).
    Conv2d<T>& projection(int tap)
    {
        const int n = cfg_.num_stages();
        if (tap < 0 || tap >= 2 * n)
            throw std::out_of_range("no projection for tap " + std::to_string(tap));
        return tap < n ? enc_proj_[tap] : smooth_proj_[2 * n - 1 - tap];
    }

    BranchOutput<T> forward(const Tensor<T>& input, const Injection<T>* inj = nullptr,
                            BranchCache<T>* cache = nullptr) const
    {
        if (input.channels() != 3 || input.height() != cfg_.input_h || input.width() != cfg_.input_w)
            throw std::invalid_argument(name_ + ": input " + to_string(input.shape()) + " does not match config " +
                                        std::to_string(cfg_.input_h) + "x" + std::to_string(cfg_.input_w));
        const int n = cfg_.num_stages();
        const int L = cfg_.num_taps();
        if (inj && !inj->empty() && static_cast<int>(inj->size()) != L - 1)
            throw std::invalid_argument("injection must list " + std::to_string(L - 1) + " taps");
        auto injected = [&](int tap) -> const Tensor<T>* {
            if (!inj || inj->empty() || (*inj)[tap].empty())
                return nullptr;
            return &(*inj)[tap];
        };
        if (cache) {
            cache->enc.assign(n, {});
            cache->enc_proj.assign(n, {});
            cache->lat.assign(n, {});
            cache->smooth.assign(n, {});
            cache->smooth_proj.assign(n, {});
            cache->enc_injected.assign(n, false);
            cache->smooth_injected.assign(n, false);
            cache->td_shapes.assign(n, {});
            cache->smooth_shapes.assign(n, {});
        }
        auto sub = [&](std::vector<ConvCache<T>> BranchCache<T>::*field, int k) -> ConvCache<T>* {
            return cache ? &((*cache).*field)[k] : nullptr;
        };

        BranchOutput<T> out;
        out.taps.resize(L);
        Tensor<T> prev = stem_.forward(input, cache ? &cache->stem : nullptr);
        std::vector<Tensor<T>> enc_out(n);
        for (int k = 0; k < n; ++k) {
            Tensor<T> c = enc_[k].forward(prev, sub(&BranchCache<T>::enc, k));
            if (const auto* extra = injected(k)) {
                check_injection(*extra, c.shape(), k);
                enc_out[k] = enc_proj_[k].forward(ops::concat_channels<T>({&c, extra}), sub(&BranchCache<T>::enc_proj, k));
                if (cache)
                    cache->enc_injected[k] = true;
            } else {
                enc_out[k] = c;
            }
            out.taps[k] = std::move(c);
            prev = enc_out[k];
        }

        std::vector<Tensor<T>> td(n);
        for (int k = n - 1; k >= 0; --k) {
            td[k] = lat_[k].forward(enc_out[k], sub(&BranchCache<T>::lat, k));
            if (k + 1 < n)
                td[k] += ops::resize_bilinear(td[k + 1], td[k].height(), td[k].width());
            if (cache)
                cache->td_shapes[k] = td[k].shape();
        }

        std::vector<Tensor<T>> sm(n);
        for (int k = n - 1; k >= 0; --k) {
            const int tap = 2 * n - 1 - k;
            Tensor<T> s = smooth_[k].forward(td[k], sub(&BranchCache<T>::smooth, k));
            if (const auto* extra = injected(tap)) {
                check_injection(*extra, s.shape(), tap);
                sm[k] = smooth_proj_[k].forward(ops::concat_channels<T>({&s, extra}),
                                                sub(&BranchCache<T>::smooth_proj, k));
                if (cache)
                    cache->smooth_injected[k] = true;
            } else {
                sm[k] = s;
            }
            if (cache)
                cache->smooth_shapes[k] = sm[k].shape();
            out.taps[tap] = std::move(s);
        }

        std::vector<Tensor<T>> up(n);
        std::vector<const Tensor<T>*> parts;
        for (int k = 0; k < n; ++k) {
            up[k] = k == 0 ? std::move(sm[0]) : ops::resize_bilinear(sm[k], sm[0].height(), sm[0].width());
            parts.push_back(&up[k]);
        }
        out.taps[L - 1] = fuse_.forward(ops::concat_channels(parts), cache ? &cache->fuse : nullptr);
        Tensor<T> small = clf_.forward(out.taps[L - 1], cache ? &cache->clf : nullptr);
        if (cache)
            cache->clf_shape = small.shape();
        out.logits = ops::resize_bilinear(small, cfg_.input_h, cfg_.input_w);
        return out;
    }

    // Accumulates parameter gradients. Either upstream gradient may be empty.
    // Injected maps are treated as constants.
    void backward(const BranchCache<T>& cache, const Tensor<T>& dlogits, const Tensor<T>& dlast)
    {
        const int n = cfg_.num_stages();
        const Shape last = cfg_.tap_shapes().back();
        Tensor<T> dx = dlast.empty() ? Tensor<T>(last) : dlast;
        if (dx.shape() != last)
            throw std::invalid_argument("last-tap gradient shape mismatch");
        if (!dlogits.empty()) {
            Tensor<T> dsmall(cache.clf_shape);
            ops::resize_bilinear_backward(dlogits, dsmall);
            clf_.backward(cache.clf, dsmall, &dx);
        }
        Tensor<T> dcat;
        fuse_.backward(cache.fuse, dx, &dcat);

        std::vector<Tensor<T>> dtd(n);
        for (int k = 0; k < n; ++k) {
            Tensor<T> dup = ops::slice_channels(dcat, k * cfg_.fpn_channels, cfg_.fpn_channels);
            Tensor<T> dsm(cache.smooth_shapes[k]);
            ops::resize_bilinear_backward(dup, dsm);
            Tensor<T> ds;
            if (cache.smooth_injected[k]) {
                Tensor<T> dproj;
                smooth_proj_[k].backward(cache.smooth_proj[k], dsm, &dproj);
                ds = ops::slice_channels(dproj, 0, cfg_.fpn_channels);
            } else {
                ds = std::move(dsm);
            }
            dtd[k] = Tensor<T>(cache.td_shapes[k]);
            smooth_[k].backward(cache.smooth[k], ds, &dtd[k]);
        }
        for (int k = 0; k + 1 < n; ++k)
            ops::resize_bilinear_backward(dtd[k], dtd[k + 1]);

        std::vector<Tensor<T>> denc(n);
        for (int k = 0; k < n; ++k)
            lat_[k].backward(cache.lat[k], dtd[k], &denc[k]);
        Tensor<T> dstem;
        for (int k = n - 1; k >= 0; --k) {
            Tensor<T> dc;
            if (cache.enc_injected[k]) {
                Tensor<T> dproj;
                enc_proj_[k].backward(cache.enc_proj[k], denc[k], &dproj);
                dc = ops::slice_channels(dproj, 0, cfg_.stage_channels[k]);
            } else {
                dc = std::move(denc[k]);
            }
            if (k > 0) {
                enc_[k].backward(cache.enc[k], dc, &denc[k - 1]);
            } else {
                enc_[k].backward(cache.enc[k], dc, &dstem);
            }
        }
        stem_.backward(cache.stem, dstem, nullptr);
    }

    // Everything except the classifier.
    ParamRefs<T> feature_params()
    {
        ParamRefs<T> out;
        stem_.collect(out);
        for (auto* group : {&enc_, &enc_proj_, &lat_, &smooth_, &smooth_proj_})
            for (auto& l : *group)
                l.collect(out);
        fuse_.collect(out);
        return out;
    }

    ParamRefs<T> classifier_params()
    {
        ParamRefs<T> out;
        clf_.collect(out);
        return out;
    }

    ParamRefs<T> params()
    {
        auto out = feature_params();
        clf_.collect(out);
        return out;
    }

    // FNV-1a over all parameter bytes; used to key caches of this branch's taps.
    std::uint64_t fingerprint() const
    {
        std::uint64_t h = 1469598103934665603ULL;
        auto mix = [&](const Parameter<T>& p) {
            const auto* bytes = reinterpret_cast<const unsigned char*>(p.value.data());
            for (std::size_t i = 0; i < p.value.size() * sizeof(T); ++i) {
                h ^= bytes[i];
                h *= 1099511628211ULL;
            }
        };
        auto& self = const_cast<Branch&>(*this);
        for (auto* p : self.params())
            mix(*p);
        return h;
    }

private:
    void check_injection(const Tensor<T>& extra, const Shape& own, int tap) const
    {
        if (extra.shape() != own)
            throw std::invalid_argument(name_ + ": injected tap " + std::to_string(tap) + " has shape " +
                                        to_string(extra.shape()) + ", expected " + to_string(own));
    }

    std::string name_;
    BranchConfig cfg_;
    Conv2d<T> stem_;
    std::vector<Conv2d<T>> enc_, enc_proj_, lat_, smooth_, smooth_proj_;
    Conv2d<T> fuse_, clf_;
};

} // namespace glnet
