#pragma once

#include "glnet/data.hpp"
#include "glnet/inference.hpp"
#include "glnet/model.hpp"
#include "glnet/ops.hpp"
#include "glnet/tiling.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

namespace glnet {

struct FgBox {
    PixelRect rect;
    double ratio = 0;     // fg:bg inside rect
    int iterations = 0;   // relaxation steps taken
    bool empty = true;    // no foreground at all
};

inline void to_json(nlohmann::json& j, const FgBox& b)
{
    j = {{"rect", b.rect}, {"ratio", b.ratio}, {"iterations", b.iterations}, {"empty", b.empty}};
}

// Global branch alone on the downsampled image; argmax is brought back to the
// source size by nearest neighbour.
template <typename T>
Mask coarse_segment(const GLNet<T>& model, const Image& image)
{
    if (model.phase == Phase::untrained)
        throw std::invalid_argument("coarse segmentation needs a trained global branch");
    const Image small = ops::resize_image(image, model.global_size(), model.global_size());
    const auto out = model.global.forward(ops::image_to_tensor<T>(small));
    return ops::resize_nearest(ops::argmax_channels(out.logits), image.height(), image.width());
}

namespace detail {

// Summed-area table of foreground (label != 0) pixels.
class FgIntegral {
public:
    explicit FgIntegral(const Mask& m) : h_(m.height()), w_(m.width()), s_(static_cast<std::size_t>(h_ + 1) * (w_ + 1), 0)
    {
        for (int y = 0; y < h_; ++y)
            for (int x = 0; x < w_; ++x)
                at(y + 1, x + 1) = (m(0, y, x) != 0) + at(y, x + 1) + at(y + 1, x) - at(y, x);
    }
    std::int64_t count(const PixelRect& r) const
    {
        return at(r.bottom(), r.right()) - at(r.top, r.right()) - at(r.bottom(), r.left) + at(r.top, r.left);
    }

private:
    std::int64_t& at(int y, int x) { return s_[static_cast<std::size_t>(y) * (w_ + 1) + x]; }
    std::int64_t at(int y, int x) const { return s_[static_cast<std::size_t>(y) * (w_ + 1) + x]; }
    int h_, w_;
    std::vector<std::int64_t> s_;
};

inline double fg_bg_ratio(std::int64_t fg, std::int64_t area)
{
    const auto bg = area - fg;
    return bg == 0 ? std::numeric_limits<double>::infinity() : static_cast<double>(fg) / static_cast<double>(bg);
}

// Grows [lo, lo+len) by `grow` cells inside [0, limit), splitting the growth
// evenly and moving whatever one side cannot take to the other side.
inline void grow_span(int& lo, int& len, int grow, int limit)
{
    const int target = std::min(limit, len + grow);
    int before = (target - len) / 2;
    int after = target - len - before;
    if (lo - before < 0) {
        after += before - lo;
        before = lo;
    }
    if (lo + len + after > limit) {
        before += lo + len + after - limit;
        after = limit - lo - len;
    }
    lo -= before;
    len = target;
}

} // namespace detail

inline PixelRect tight_box(const Mask& mask)
{
    int top = mask.height(), left = mask.width(), bottom = -1, right = -1;
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x)
            if (mask(0, y, x) != 0) {
                top = std::min(top, y);
                bottom = std::max(bottom, y);
                left = std::min(left, x);
                right = std::max(right, x);
            }
    if (bottom < 0)
        return {0, 0, 0, 0};
    return {top, left, bottom - top + 1, right - left + 1};
}

// Expand the tight foreground box by one pixel per side per iteration until
// fg:bg <= target * (1 + tolerance) or the box fills the image.
inline FgBox relax_bbox(const Mask& mask, double target_ratio = 1.0, double tolerance = 0.1)
{
    if (!(target_ratio > 0) || !(tolerance >= 0))
        throw std::invalid_argument("invalid relaxation target");
    FgBox box;
    box.rect = tight_box(mask);
    if (box.rect.area() == 0)
        return box;
    box.empty = false;
    const detail::FgIntegral fg(mask);
    const std::int64_t total = fg.count(box.rect);
    const double limit = target_ratio * (1 + tolerance);
    const int H = mask.height(), W = mask.width();
    box.ratio = detail::fg_bg_ratio(total, box.rect.area());
    while (box.ratio > limit && (box.rect.height < H || box.rect.width < W)) {
        detail::grow_span(box.rect.top, box.rect.height, 2, H);
        detail::grow_span(box.rect.left, box.rect.width, 2, W);
        box.ratio = detail::fg_bg_ratio(total, box.rect.area());
        ++box.iterations;
    }
    return box;
}

// Box grown (centred, clamped) to at least min_h x min_w.
inline PixelRect grow_to_min(PixelRect r, int min_h, int min_w, int image_h, int image_w)
{
    if (min_h > image_h || min_w > image_w)
        throw std::invalid_argument("patch exceeds image");
    if (r.height < min_h)
        detail::grow_span(r.top, r.height, min_h - r.height, image_h);
    if (r.width < min_w)
        detail::grow_span(r.left, r.width, min_w - r.width, image_w);
    return r;
}

struct FineResult {
    Mask mask;
    PixelRect window; // region the fine model actually ran on (box grown to patch size)
};

// Runs `model` on the box (grown to the model's input sizes) and keeps its
// prediction inside the box only; everything else is background.
template <typename T>
FineResult fine_segment(const GLNet<T>& model, const Image& image, const FgBox& box, InferMode mode,
                        const InferOptions& opt = {})
{
    FineResult out{Mask(1, image.height(), image.width()), {0, 0, 0, 0}};
    if (box.empty || box.rect.area() == 0)
        return out;
    const auto& r = box.rect;
    if (r.top < 0 || r.left < 0 || r.bottom() > image.height() || r.right() > image.width())
        throw std::invalid_argument("box outside image");
    const int need = std::max(model.patch_size(), model.global_size());
    out.window = grow_to_min(r, need, need, image.height(), image.width());
    const auto sub = infer_image(model, crop(image, out.window), mode, opt);
    for (int y = r.top; y < r.bottom(); ++y)
        for (int x = r.left; x < r.right(); ++x)
            out.mask(0, y, x) = sub.mask(0, y - out.window.top, x - out.window.left);
    return out;
}

struct TwoStageResult {
    Mask coarse;
    FgBox box;
    FineResult fine;
};

template <typename T>
TwoStageResult coarse_to_fine(const GLNet<T>& coarse_model, const GLNet<T>& fine_model, const Image& image,
                              InferMode mode, double tolerance = 0.1, const InferOptions& opt = {})
{
    TwoStageResult r;
    r.coarse = coarse_segment(coarse_model, image);
    r.box = relax_bbox(r.coarse, 1.0, tolerance);
    r.fine = fine_segment(fine_model, image, r.box, mode, opt);
    return r;
}

// Training set for the fine stage: each sample cropped to the relaxed box of
// its ground-truth mask, grown to at least `min_side`. Samples without
// foreground are kept whole.
inline std::vector<Sample> boxed_samples(const std::vector<Sample>& data, int min_side, double tolerance = 0.1)
{
    std::vector<Sample> out;
    out.reserve(data.size());
    for (const auto& s : data) {
        const auto box = relax_bbox(s.mask, 1.0, tolerance);
        if (box.empty) {
            out.push_back(s);
            continue;
        }
        const auto w = grow_to_min(box.rect, min_side, min_side, s.image.height(), s.image.width());
        out.push_back({s.id, crop(s.image, w), crop(s.mask, w)});
    }
    return out;
}

} // namespace glnet
