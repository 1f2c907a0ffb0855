#pragma once

#include "glnet/tensor.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace glnet {

struct PixelRect {
    int top = 0;
    int left = 0;
    int height = 0;
    int width = 0;

    int bottom() const noexcept { return top + height; }
    int right() const noexcept { return left + width; }
    long long area() const noexcept { return static_cast<long long>(height) * width; }
    friend bool operator==(const PixelRect&, const PixelRect&) = default;
};

// Rect expressed as fractions of its source frame.
struct RelativeRect {
    double top = 0;
    double left = 0;
    double height = 1;
    double width = 1;

    bool valid() const noexcept
    {
        constexpr double eps = 1e-12;
        return top >= 0 && left >= 0 && height >= 0 && width >= 0 && top + height <= 1 + eps &&
               left + width <= 1 + eps;
    }
};

struct TileGrid {
    int image_h = 0;
    int image_w = 0;
    int patch_h = 0;
    int patch_w = 0;
    int overlap = 0;
    std::vector<int> row_starts;
    std::vector<int> col_starts;
    std::vector<PixelRect> rects; // row-major by (top, left)

    std::size_t size() const noexcept { return rects.size(); }
    friend bool operator==(const TileGrid&, const TileGrid&) = default;
};

namespace detail {

inline std::vector<int> tile_starts(int extent, int patch, int stride)
{
    std::vector<int> starts{0};
    while (starts.back() + patch < extent)
        starts.push_back(std::min(starts.back() + stride, extent - patch));
    return starts;
}

} // namespace detail

inline TileGrid build_grid(int image_h, int image_w, int patch_h, int patch_w, int overlap)
{
    if (patch_h <= 0 || patch_w <= 0 || image_h <= 0 || image_w <= 0)
        throw std::invalid_argument("non-positive grid dimension");
    if (patch_h > image_h || patch_w > image_w)
        throw std::invalid_argument("patch exceeds image");
    if (overlap < 0 || overlap >= std::min(patch_h, patch_w))
        throw std::invalid_argument("degenerate stride");

    TileGrid grid{image_h, image_w, patch_h, patch_w, overlap, {}, {}, {}};
    grid.row_starts = detail::tile_starts(image_h, patch_h, patch_h - overlap);
    grid.col_starts = detail::tile_starts(image_w, patch_w, patch_w - overlap);
    grid.rects.reserve(grid.row_starts.size() * grid.col_starts.size());
    for (int top : grid.row_starts)
        for (int left : grid.col_starts)
            grid.rects.push_back({top, left, patch_h, patch_w});
    return grid;
}

inline void to_json(nlohmann::json& j, const PixelRect& r)
{
    j = nlohmann::json::array({r.top, r.left, r.height, r.width});
}

inline void from_json(const nlohmann::json& j, PixelRect& r)
{
    r = {j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>(), j.at(3).get<int>()};
}

inline void to_json(nlohmann::json& j, const TileGrid& g)
{
    j = nlohmann::json{{"image_h", g.image_h}, {"image_w", g.image_w}, {"patch_h", g.patch_h},
                       {"patch_w", g.patch_w}, {"overlap", g.overlap}, {"rects", g.rects}};
}

// Re-derives the grid from its parameters and rejects records whose rect list
// disagrees, so a stored grid can't silently drift from the tiling rule.
inline void from_json(const nlohmann::json& j, TileGrid& g)
{
    g = build_grid(j.at("image_h").get<int>(), j.at("image_w").get<int>(), j.at("patch_h").get<int>(),
                   j.at("patch_w").get<int>(), j.at("overlap").get<int>());
    if (j.contains("rects") && j.at("rects").get<std::vector<PixelRect>>() != g.rects)
        throw std::invalid_argument("grid record rects inconsistent with parameters");
}

template <typename T, typename A>
Array<T, A> crop(const Array<T, A>& src, const PixelRect& r)
{
    if (r.top < 0 || r.left < 0 || r.height < 0 || r.width < 0 || r.bottom() > src.height() ||
        r.right() > src.width())
        throw std::out_of_range("crop rect out of bounds");
    Array<T, A> out(src.channels(), r.height, r.width);
    for (int c = 0; c < src.channels(); ++c)
        for (int y = 0; y < r.height; ++y) {
            const T* row = src.channel(c) + static_cast<std::size_t>(r.top + y) * src.width() + r.left;
            std::copy(row, row + r.width, out.channel(c) + static_cast<std::size_t>(y) * r.width);
        }
    return out;
}

inline RelativeRect rect_to_relative(const PixelRect& r, int frame_h, int frame_w)
{
    if (frame_h <= 0 || frame_w <= 0)
        throw std::invalid_argument("zero frame dimension");
    if (r.top < 0 || r.left < 0 || r.height < 0 || r.width < 0 || r.bottom() > frame_h || r.right() > frame_w)
        throw std::out_of_range("rect outside frame");
    return {static_cast<double>(r.top) / frame_h, static_cast<double>(r.left) / frame_w,
            static_cast<double>(r.height) / frame_h, static_cast<double>(r.width) / frame_w};
}

// Origin is floored and the far edge ceiled, so the pixel rect always covers
// the relative region; the result is clamped to the frame.
inline PixelRect relative_to_rect(const RelativeRect& rel, int frame_h, int frame_w)
{
    if (frame_h <= 0 || frame_w <= 0)
        throw std::invalid_argument("zero frame dimension");
    if (!rel.valid())
        throw std::invalid_argument("relative rect outside unit frame");
    constexpr double eps = 1e-9;
    auto span = [&](double start, double extent, int frame) {
        int lo = static_cast<int>(std::floor(start * frame + eps));
        int hi = static_cast<int>(std::ceil((start + extent) * frame - eps));
        lo = std::clamp(lo, 0, frame);
        hi = std::clamp(hi, lo, frame);
        return std::pair{lo, hi - lo};
    };
    const auto [top, height] = span(rel.top, rel.height, frame_h);
    const auto [left, width] = span(rel.left, rel.width, frame_w);
    return {top, left, height, width};
}

enum class BlendMode { average, center_priority };

inline BlendMode parse_blend(const std::string& s)
{
    if (s == "average")
        return BlendMode::average;
    if (s == "center-priority")
        return BlendMode::center_priority;
    throw std::invalid_argument("unknown blend mode: " + s);
}

// Accumulates patches into a full-frame buffer. Results do not depend on the
// order in which patches arrive: averaging sums at most a handful of floats
// in double precision (exact for the values seen here), and center priority
// resolves ties by the patch key rather than by arrival.
template <typename T>
class TileMerger {
public:
    TileMerger(Shape frame, BlendMode mode)
        : frame_(frame), mode_(mode), count_(1, frame.height, frame.width)
    {
        if (mode_ == BlendMode::average) {
            sum_ = Raster<double>(frame);
        } else {
            value_ = Raster<T>(frame);
            best_dist_ = Raster<std::int64_t>(1, frame.height, frame.width, std::numeric_limits<std::int64_t>::max());
            best_key_ = Raster<std::int64_t>(1, frame.height, frame.width, std::numeric_limits<std::int64_t>::max());
        }
    }

    const Shape& frame() const noexcept { return frame_; }

    template <typename A>
    void add(const PixelRect& r, const Array<T, A>& patch, std::int64_t key)
    {
        if (patch.channels() != frame_.channels || patch.height() != r.height || patch.width() != r.width)
            throw std::invalid_argument("patch shape " + to_string(patch.shape()) + " does not match rect");
        if (r.top < 0 || r.left < 0 || r.bottom() > frame_.height || r.right() > frame_.width)
            throw std::out_of_range("merge rect out of bounds");
        for (int y = 0; y < r.height; ++y)
            for (int x = 0; x < r.width; ++x)
                count_(0, r.top + y, r.left + x) += 1;
        if (mode_ == BlendMode::average) {
            for (int c = 0; c < frame_.channels; ++c)
                for (int y = 0; y < r.height; ++y)
                    for (int x = 0; x < r.width; ++x)
                        sum_(c, r.top + y, r.left + x) += static_cast<double>(patch(c, y, x));
            return;
        }
        // doubled coordinates keep the center distance integral
        const std::int64_t cy2 = 2LL * r.top + r.height - 1;
        const std::int64_t cx2 = 2LL * r.left + r.width - 1;
        for (int y = 0; y < r.height; ++y)
            for (int x = 0; x < r.width; ++x) {
                const std::int64_t dy = 2LL * (r.top + y) - cy2;
                const std::int64_t dx = 2LL * (r.left + x) - cx2;
                const std::int64_t d = dy * dy + dx * dx;
                auto& bd = best_dist_(0, r.top + y, r.left + x);
                auto& bk = best_key_(0, r.top + y, r.left + x);
                if (d < bd || (d == bd && key < bk)) {
                    bd = d;
                    bk = key;
                    for (int c = 0; c < frame_.channels; ++c)
                        value_(c, r.top + y, r.left + x) = patch(c, y, x);
                }
            }
    }

    bool covered() const noexcept
    {
        return std::all_of(count_.values().begin(), count_.values().end(), [](int n) { return n > 0; });
    }

    // Uncovered pixels are zero.
    template <typename A = std::allocator<T>>
    Array<T, A> result() const
    {
        Array<T, A> out(frame_);
        const std::size_t plane = frame_.plane();
        for (int c = 0; c < frame_.channels; ++c)
            for (std::size_t i = 0; i < plane; ++i) {
                const int n = count_[i];
                if (n == 0)
                    continue;
                const std::size_t k = static_cast<std::size_t>(c) * plane + i;
                out[k] = mode_ == BlendMode::average ? static_cast<T>(sum_[k] / n) : value_[k];
            }
        return out;
    }

private:
    Shape frame_;
    BlendMode mode_;
    Raster<int> count_;
    Raster<double> sum_;
    Raster<T> value_;
    Raster<std::int64_t> best_dist_;
    Raster<std::int64_t> best_key_;
};

template <typename T, typename A>
Raster<T> merge(const std::vector<Array<T, A>>& patches, const TileGrid& grid, BlendMode blend)
{
    if (patches.size() != grid.rects.size())
        throw std::invalid_argument("patch count " + std::to_string(patches.size()) + " does not match grid size " +
                                    std::to_string(grid.rects.size()));
    if (patches.empty())
        throw std::invalid_argument("empty patch list");
    TileMerger<T> merger({patches.front().channels(), grid.image_h, grid.image_w}, blend);
    for (std::size_t i = 0; i < patches.size(); ++i)
        merger.add(grid.rects[i], patches[i], static_cast<std::int64_t>(i));
    return merger.result();
}

template <typename T, typename A>
std::vector<Array<T, A>> crop_all(const Array<T, A>& src, const TileGrid& grid)
{
    if (src.height() != grid.image_h || src.width() != grid.image_w)
        throw std::invalid_argument("grid built for a different image size");
    std::vector<Array<T, A>> out;
    out.reserve(grid.rects.size());
    for (const auto& r : grid.rects)
        out.push_back(crop(src, r));
    return out;
}

} // namespace glnet
