#pragma once

#include "glnet/data.hpp"
#include "glnet/model.hpp"
#include "glnet/ops.hpp"
#include "glnet/tiling.hpp"

#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace glnet {

enum class InferMode { global_only, local_only, glnet_g2l, glnet_bidir };

inline std::string to_string(InferMode m)
{
    switch (m) {
    case InferMode::global_only: return "global-only";
    case InferMode::local_only: return "local-only";
    case InferMode::glnet_g2l: return "glnet-g2l";
    case InferMode::glnet_bidir: return "glnet-bidir";
    }
    return "?";
}

inline InferMode parse_mode(const std::string& s)
{
    for (auto m : {InferMode::global_only, InferMode::local_only, InferMode::glnet_g2l, InferMode::glnet_bidir})
        if (to_string(m) == s)
            return m;
    throw std::invalid_argument("unknown inference mode: " + s);
}

// The mode a model naturally serves after its last completed phase.
template <typename T>
InferMode natural_mode(const GLNet<T>& model)
{
    if (model.phase == Phase::global_only)
        return InferMode::global_only;
    if (model.plan.direction == ShareDirection::none)
        return InferMode::local_only;
    return model.phase == Phase::bidirectional ? InferMode::glnet_bidir : InferMode::glnet_g2l;
}

template <typename T>
void check_mode(const GLNet<T>& model, InferMode mode)
{
    auto fail = [&](const std::string& why) {
        throw std::invalid_argument("mode " + to_string(mode) + " does not match checkpoint: " + why);
    };
    switch (mode) {
    case InferMode::global_only:
        if (model.phase == Phase::untrained || model.phase == Phase::bidirectional)
            fail("global branch is untrained or expects local features");
        break;
    case InferMode::local_only:
        if (model.phase < Phase::global_to_local || model.plan.direction != ShareDirection::none)
            fail("local branch was not trained stand-alone");
        break;
    case InferMode::glnet_g2l:
        if (model.phase != Phase::global_to_local || model.plan.direction == ShareDirection::none)
            fail("needs a model trained through the global-to-local phase");
        break;
    case InferMode::glnet_bidir:
        if (model.phase != Phase::bidirectional)
            fail("needs a model trained through the bidirectional phase");
        break;
    }
}

struct InferOptions {
    int overlap = 16;
    BlendMode blend = BlendMode::average;
    bool check_weights = true;
    // glnet modes only: stitch local-branch logits instead of the aggregated ones
    bool aggregate = true;
    // processing order over grid rects; empty means grid order
    std::vector<std::size_t> patch_order;
};

struct InferResult {
    Mask mask;
    Raster<float> logits; // num_classes x H x W
    TileGrid grid;
};

namespace detail {

inline std::vector<std::size_t> patch_order(const InferOptions& opt, std::size_t n)
{
    if (opt.patch_order.empty()) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        return order;
    }
    if (opt.patch_order.size() != n)
        throw std::invalid_argument("patch order does not cover the grid");
    std::vector<bool> seen(n, false);
    for (auto i : opt.patch_order) {
        if (i >= n || seen[i])
            throw std::invalid_argument("patch order is not a permutation");
        seen[i] = true;
    }
    return opt.patch_order;
}

} // namespace detail

// Whole-image model: the full-resolution input and output live in the model
// path, so its working set grows with the source.
template <typename T>
InferResult infer_global_only(const GLNet<T>& model, const Image& image)
{
    const Tensor<T> full = ops::image_to_tensor<T>(image);
    const Tensor<T> small = ops::resize_bilinear(full, model.global_size(), model.global_size());
    const auto out = model.global.forward(small);
    const Tensor<T> logits = ops::resize_bilinear(out.logits, image.height(), image.width());
    InferResult r;
    r.mask = ops::argmax_channels(logits);
    r.logits = logits.template cast<float, std::allocator<float>>();
    return r;
}

// Patchwise inference. The source stays in caller memory; the model path only
// ever holds the downsampled global input and one patch at a time.
template <typename T>
InferResult infer_image(const GLNet<T>& model, const Image& image, InferMode mode, const InferOptions& opt = {})
{
    if (opt.check_weights)
        check_mode(model, mode);
    if (image.channels() != 3)
        throw std::invalid_argument("expected an RGB image");
    if (mode == InferMode::global_only)
        return infer_global_only(model, image);

    const int patch = model.patch_size();
    InferResult r;
    r.grid = build_grid(image.height(), image.width(), patch, patch, opt.overlap);
    const auto order = detail::patch_order(opt, r.grid.size());
    const int K = model.num_classes();
    const bool share = mode != InferMode::local_only;
    const auto shared = share ? model.shared_taps() : std::vector<int>{};
    const auto local_frames = model.local_config.tap_shapes();
    const auto global_frames = model.global_config.tap_shapes();
    const int last = model.local_config.last_tap();

    BranchOutput<T> global_plain, global_final;
    if (share) {
        const Image lr = ops::resize_image(image, model.global_size(), model.global_size());
        const Tensor<T> lr_t = ops::image_to_tensor<T>(lr);
        global_plain = model.global.forward(lr_t);
        if (mode == InferMode::glnet_bidir) {
            LocalToGlobalMerger<T> merger(r.grid, global_frames, shared);
            for (auto i : order) {
                const auto& rect = r.grid.rects[i];
                const auto rel = rect_to_relative(rect, image.height(), image.width());
                const auto inj = share_global_to_local(global_plain.taps, rel, local_frames, shared);
                const auto out = model.local.forward(ops::image_to_tensor<T>(crop(image, rect)), &inj);
                merger.add(i, out.taps);
            }
            const auto inj = merger.finish();
            global_final = model.global.forward(lr_t, &inj);
        }
    }
    const auto& global_for_agg = mode == InferMode::glnet_bidir ? global_final : global_plain;

    TileMerger<T> stitch({K, image.height(), image.width()}, opt.blend);
    for (auto i : order) {
        const auto& rect = r.grid.rects[i];
        const Tensor<T> x = ops::image_to_tensor<T>(crop(image, rect));
        if (!share) {
            stitch.add(rect, model.local.forward(x).logits, static_cast<std::int64_t>(i));
            continue;
        }
        const auto rel = rect_to_relative(rect, image.height(), image.width());
        const auto inj = share_global_to_local(global_plain.taps, rel, local_frames, shared);
        const auto out = model.local.forward(x, &inj);
        if (!opt.aggregate) {
            stitch.add(rect, out.logits, static_cast<std::int64_t>(i));
            continue;
        }
        const auto g_last = crop_resize(global_for_agg.taps[last], rel, local_frames[last].height,
                                        local_frames[last].width);
        stitch.add(rect, model.head.forward(out.taps[last], g_last, patch, patch), static_cast<std::int64_t>(i));
    }
    if (!stitch.covered())
        throw std::logic_error("stitching left pixels uncovered");
    r.logits = stitch.template result<std::allocator<T>>().template cast<float, std::allocator<float>>();
    r.mask = ops::argmax_channels(r.logits);
    return r;
}

} // namespace glnet
