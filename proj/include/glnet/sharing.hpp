#pragma once

#include "glnet/branch.hpp"
#include "glnet/ops.hpp"
#include "glnet/tiling.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace glnet {

enum class ShareDirection { none, global_to_local, bidirectional };
enum class ShareDepth { shallow, deep };

inline std::string to_string(ShareDirection d)
{
    switch (d) {
    case ShareDirection::none: return "none";
    case ShareDirection::global_to_local: return "g2l";
    case ShareDirection::bidirectional: return "bidir";
    }
    return "?";
}

inline ShareDirection parse_direction(const std::string& s)
{
    if (s == "none")
        return ShareDirection::none;
    if (s == "g2l")
        return ShareDirection::global_to_local;
    if (s == "bidir")
        return ShareDirection::bidirectional;
    throw std::invalid_argument("unknown sharing direction: " + s);
}

struct SharePlan {
    ShareDirection direction = ShareDirection::bidirectional;
    ShareDepth depth = ShareDepth::deep;
    int shallow_tap = 0;

    // Taps exchanged between branches; never includes the last tap.
    std::vector<int> shared_taps(const BranchConfig& cfg) const
    {
        if (direction == ShareDirection::none)
            return {};
        if (depth == ShareDepth::shallow) {
            if (shallow_tap < 0 || shallow_tap >= cfg.last_tap())
                throw std::invalid_argument("shallow tap must precede the last tap");
            return {shallow_tap};
        }
        std::vector<int> out;
        for (int t = 0; t < cfg.last_tap(); ++t)
            out.push_back(t);
        return out;
    }
    bool global_to_local() const noexcept { return direction != ShareDirection::none; }
    bool local_to_global() const noexcept { return direction == ShareDirection::bidirectional; }

    friend bool operator==(const SharePlan&, const SharePlan&) = default;
};

template <typename T>
PixelRect checked_rect(const Tensor<T>& src, const RelativeRect& rel)
{
    const PixelRect r = relative_to_rect(rel, src.height(), src.width());
    if (r.height <= 0 || r.width <= 0)
        throw std::invalid_argument("tap frame under-resolved");
    return r;
}

// Crops the relative region of `src` and bilinearly resizes it to out_h x out_w.
template <typename T>
Tensor<T> crop_resize(const Tensor<T>& src, const RelativeRect& rel, int out_h, int out_w)
{
    return ops::resize_bilinear(crop(src, checked_rect(src, rel)), out_h, out_w);
}

template <typename T>
void crop_resize_backward(const Tensor<T>& dy, const RelativeRect& rel, Tensor<T>& dsrc)
{
    const PixelRect r = checked_rect(dsrc, rel);
    Tensor<T> dcrop(dsrc.channels(), r.height, r.width);
    ops::resize_bilinear_backward(dy, dcrop);
    ops::crop_backward(dcrop, r, dsrc);
}

// Global taps -> local injection: crop at the patch's relative location, then
// upsample to the local tap frame.
template <typename T>
Injection<T> share_global_to_local(const std::vector<Tensor<T>>& global_taps, const RelativeRect& patch_rel,
                                   const std::vector<Shape>& local_frames, const std::vector<int>& shared)
{
    if (!patch_rel.valid())
        throw std::invalid_argument("invalid patch relative rect");
    Injection<T> inj(local_frames.size() - 1);
    for (int t : shared) {
        if (t >= static_cast<int>(global_taps.size()) || global_taps[t].empty())
            throw std::invalid_argument("missing global tap " + std::to_string(t));
        inj[t] = crop_resize(global_taps[t], patch_rel, local_frames[t].height, local_frames[t].width);
    }
    return inj;
}

// Local taps -> global injection. Each patch's tap is downsampled to the
// patch's footprint in the global tap frame and pasted in grid order; overlaps
// are averaged. Patches may be added one at a time so only the global-frame
// canvases stay resident.
template <typename T>
class LocalToGlobalMerger {
public:
    LocalToGlobalMerger(const TileGrid& grid, std::vector<Shape> global_frames, std::vector<int> shared)
        : grid_(grid), frames_(std::move(global_frames)), shared_(std::move(shared)), seen_(grid.size(), false)
    {
        for (int t : shared_)
            mergers_.emplace_back(frames_[t], BlendMode::average);
    }

    void add(std::size_t patch_index, const std::vector<Tensor<T>>& local_taps)
    {
        if (patch_index >= grid_.size())
            throw std::out_of_range("patch index outside grid");
        const RelativeRect rel = rect_to_relative(grid_.rects[patch_index], grid_.image_h, grid_.image_w);
        for (std::size_t i = 0; i < shared_.size(); ++i) {
            const int t = shared_[i];
            if (t >= static_cast<int>(local_taps.size()) || local_taps[t].empty())
                throw std::invalid_argument("incomplete patch cover");
            const Shape& f = frames_[t];
            if (local_taps[t].channels() != f.channels)
                throw std::invalid_argument("local tap channel mismatch");
            const PixelRect r = relative_to_rect(rel, f.height, f.width);
            if (r.height <= 0 || r.width <= 0)
                throw std::invalid_argument("tap frame under-resolved");
            mergers_[i].add(r, ops::resize_bilinear(local_taps[t], r.height, r.width),
                            static_cast<std::int64_t>(patch_index));
        }
        seen_[patch_index] = true;
    }

    // Injection for the global branch (entries for unshared taps left empty).
    Injection<T> finish() const
    {
        for (bool s : seen_)
            if (!s)
                throw std::invalid_argument("incomplete patch cover");
        Injection<T> inj(frames_.size() - 1);
        for (std::size_t i = 0; i < shared_.size(); ++i)
            inj[shared_[i]] = mergers_[i].template result<TrackingAllocator<T>>();
        return inj;
    }

private:
    TileGrid grid_;
    std::vector<Shape> frames_;
    std::vector<int> shared_;
    std::vector<TileMerger<T>> mergers_;
    std::vector<bool> seen_;
};

template <typename T>
Injection<T> share_local_to_global(const std::vector<std::vector<Tensor<T>>>& local_taps_by_patch,
                                   const TileGrid& grid, const std::vector<Shape>& global_frames,
                                   const std::vector<int>& shared)
{
    if (local_taps_by_patch.size() != grid.size())
        throw std::invalid_argument("incomplete patch cover");
    LocalToGlobalMerger<T> merger(grid, global_frames, shared);
    for (std::size_t i = 0; i < local_taps_by_patch.size(); ++i)
        merger.add(i, local_taps_by_patch[i]);
    return merger.finish();
}

} // namespace glnet
