#include "glnet/tiling.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace glnet;

namespace {

// Independent oracle: paint every rect into a count map.
std::vector<int> coverage(const TileGrid& g)
{
    std::vector<int> hits(static_cast<std::size_t>(g.image_h) * g.image_w, 0);
    for (const auto& r : g.rects)
        for (int y = r.top; y < r.bottom(); ++y)
            for (int x = r.left; x < r.right(); ++x)
                ++hits[static_cast<std::size_t>(y) * g.image_w + x];
    return hits;
}

Raster<float> random_array(int c, int h, int w, std::mt19937& rng)
{
    std::uniform_real_distribution<float> u(-5.f, 5.f);
    Raster<float> a(c, h, w);
    for (auto& v : a.values())
        v = u(rng);
    return a;
}

} // namespace

TEST(BuildGrid, SinglePatchIdentity)
{
    auto g = build_grid(500, 500, 500, 500, 50);
    ASSERT_EQ(g.size(), 1u);
    EXPECT_EQ(g.rects[0], (PixelRect{0, 0, 500, 500}));
}

TEST(BuildGrid, LargeScaleGrid)
{
    auto g = build_grid(2448, 2448, 500, 500, 50);
    EXPECT_EQ(g.size(), 36u);
    EXPECT_EQ(g.row_starts, (std::vector<int>{0, 450, 900, 1350, 1800, 1948}));
    for (int hits : coverage(g))
        ASSERT_GE(hits, 1);
    // horizontal neighbours overlap by at least 50 px
    for (std::size_t i = 0; i + 1 < g.col_starts.size(); ++i)
        EXPECT_GE(g.col_starts[i] + 500 - g.col_starts[i + 1], 50);
}

TEST(BuildGrid, TwoByOne)
{
    auto g = build_grid(950, 500, 500, 500, 50);
    ASSERT_EQ(g.size(), 2u);
    EXPECT_EQ(g.rects[0].top, 0);
    EXPECT_EQ(g.rects[1].top, 450);
    for (int hits : coverage(g))
        ASSERT_GE(hits, 1);
}

TEST(BuildGrid, Errors)
{
    EXPECT_THROW(
        {
            try {
                build_grid(100, 100, 101, 50, 0);
            } catch (const std::invalid_argument& e) {
                EXPECT_STREQ(e.what(), "patch exceeds image");
                throw;
            }
        },
        std::invalid_argument);
    EXPECT_THROW(
        {
            try {
                build_grid(100, 100, 50, 50, 50);
            } catch (const std::invalid_argument& e) {
                EXPECT_STREQ(e.what(), "degenerate stride");
                throw;
            }
        },
        std::invalid_argument);
    EXPECT_THROW(build_grid(100, 100, 50, 50, -1), std::invalid_argument);
}

TEST(BuildGrid, RandomizedCoverageAndOverlap)
{
    std::mt19937 rng(11);
    for (int trial = 0; trial < 300; ++trial) {
        const int ph = std::uniform_int_distribution<int>(2, 40)(rng);
        const int pw = std::uniform_int_distribution<int>(2, 40)(rng);
        const int h = std::uniform_int_distribution<int>(ph, 120)(rng);
        const int w = std::uniform_int_distribution<int>(pw, 120)(rng);
        const int ov = std::uniform_int_distribution<int>(0, std::min(ph, pw) - 1)(rng);
        const auto g = build_grid(h, w, ph, pw, ov);
        for (int hits : coverage(g))
            ASSERT_GE(hits, 1);
        for (const auto& r : g.rects) {
            ASSERT_EQ(r.height, ph);
            ASSERT_EQ(r.width, pw);
            ASSERT_GE(r.top, 0);
            ASSERT_LE(r.bottom(), h);
            ASSERT_LE(r.right(), w);
        }
        for (std::size_t i = 0; i + 1 < g.col_starts.size(); ++i)
            ASSERT_GE(g.col_starts[i] + pw - g.col_starts[i + 1], ov);
        for (std::size_t i = 0; i + 1 < g.row_starts.size(); ++i)
            ASSERT_GE(g.row_starts[i] + ph - g.row_starts[i + 1], ov);
        for (std::size_t i = 0; i + 1 < g.rects.size(); ++i)
            ASSERT_TRUE(std::pair(g.rects[i].top, g.rects[i].left) < std::pair(g.rects[i + 1].top, g.rects[i + 1].left));
        // pure function
        ASSERT_EQ(build_grid(h, w, ph, pw, ov).rects, g.rects);
    }
}

TEST(BuildGrid, JsonRoundTrip)
{
    const auto g = build_grid(300, 260, 128, 100, 16);
    nlohmann::json j = g;
    const auto back = j.get<TileGrid>();
    EXPECT_EQ(back.rects, g.rects);
    EXPECT_EQ(back.overlap, 16);
    j["rects"][0][0] = 5;
    EXPECT_THROW(j.get<TileGrid>(), std::exception);
}

TEST(Crop, RampAndIdentity)
{
    Raster<int> a(1, 4, 4);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            a(0, i, j) = 4 * i + j;
    const auto c = crop(a, {1, 1, 2, 2});
    EXPECT_EQ(c(0, 0, 0), 5);
    EXPECT_EQ(c(0, 0, 1), 6);
    EXPECT_EQ(c(0, 1, 0), 9);
    EXPECT_EQ(c(0, 1, 1), 10);
    EXPECT_EQ(crop(a, {0, 0, 4, 4}), a);
    EXPECT_THROW(crop(a, {3, 3, 2, 2}), std::out_of_range);
    EXPECT_THROW(crop(a, {-1, 0, 2, 2}), std::out_of_range);
}

TEST(Merge, OneDimensionalAverage)
{
    // length-5 frame, patches [1,1,1] at 0 and [3,3,3] at 2
    TileMerger<float> m({1, 1, 5}, BlendMode::average);
    m.add(PixelRect{0, 0, 1, 3}, Raster<float>(1, 1, 3, 1.f), 0);
    m.add(PixelRect{0, 2, 1, 3}, Raster<float>(1, 1, 3, 3.f), 1);
    ASSERT_TRUE(m.covered());
    const auto r = m.result();
    const float expect[5] = {1, 1, 2, 3, 3};
    for (int x = 0; x < 5; ++x)
        EXPECT_EQ(r(0, 0, x), expect[x]);
}

TEST(Merge, RoundTripBothModes)
{
    std::mt19937 rng(5);
    for (int trial = 0; trial < 40; ++trial) {
        const int p = std::uniform_int_distribution<int>(3, 20)(rng);
        const int h = std::uniform_int_distribution<int>(p, 60)(rng);
        const int w = std::uniform_int_distribution<int>(p, 60)(rng);
        const int ov = std::uniform_int_distribution<int>(0, p - 1)(rng);
        const auto g = build_grid(h, w, p, p, ov);
        const auto a = random_array(3, h, w, rng);
        for (auto mode : {BlendMode::average, BlendMode::center_priority})
            ASSERT_EQ(merge(crop_all(a, g), g, mode), a);
    }
}

TEST(Merge, OrderIndependent)
{
    std::mt19937 rng(9);
    const auto g = build_grid(50, 40, 16, 16, 5);
    std::vector<Raster<float>> patches;
    for (std::size_t i = 0; i < g.size(); ++i)
        patches.push_back(random_array(2, 16, 16, rng));
    for (auto mode : {BlendMode::average, BlendMode::center_priority}) {
        TileMerger<float> a({2, 50, 40}, mode), b({2, 50, 40}, mode);
        std::vector<std::size_t> order(g.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t i = 0; i < g.size(); ++i)
            a.add(g.rects[i], patches[i], static_cast<std::int64_t>(i));
        for (auto i : order)
            b.add(g.rects[i], patches[i], static_cast<std::int64_t>(i));
        EXPECT_EQ(a.result(), b.result());
    }
}

TEST(Merge, Errors)
{
    const auto g = build_grid(20, 20, 10, 10, 2);
    std::vector<Raster<float>> few(g.size() - 1, Raster<float>(1, 10, 10));
    EXPECT_THROW(merge(few, g, BlendMode::average), std::invalid_argument);
    std::vector<Raster<float>> wrong(g.size(), Raster<float>(1, 9, 10));
    EXPECT_THROW(merge(wrong, g, BlendMode::average), std::invalid_argument);
}

TEST(RelativeRect, FullFrameAndLargeScaleMapping)
{
    const auto full = rect_to_relative({0, 0, 37, 53}, 37, 53);
    EXPECT_DOUBLE_EQ(full.top, 0);
    EXPECT_DOUBLE_EQ(full.left, 0);
    EXPECT_DOUBLE_EQ(full.height, 1);
    EXPECT_DOUBLE_EQ(full.width, 1);

    const auto rel = rect_to_relative({450, 0, 500, 500}, 2448, 2448);
    const auto r = relative_to_rect(rel, 64, 64);
    // floor(450*64/2448) = 11, ceil(500*64/2448) = 14
    EXPECT_EQ(r, (PixelRect{11, 0, 14, 14}));
    EXPECT_THROW(rect_to_relative({0, 0, 1, 1}, 0, 5), std::invalid_argument);
}

TEST(RelativeRect, RoundTripAndContainment)
{
    std::mt19937 rng(3);
    for (int t = 0; t < 2000; ++t) {
        const int H = std::uniform_int_distribution<int>(1, 3000)(rng);
        const int W = std::uniform_int_distribution<int>(1, 3000)(rng);
        const int h = std::uniform_int_distribution<int>(1, H)(rng);
        const int w = std::uniform_int_distribution<int>(1, W)(rng);
        const int top = std::uniform_int_distribution<int>(0, H - h)(rng);
        const int left = std::uniform_int_distribution<int>(0, W - w)(rng);
        const PixelRect p{top, left, h, w};
        const auto rel = rect_to_relative(p, H, W);
        ASSERT_TRUE(rel.valid());
        const auto back = relative_to_rect(rel, H, W);
        ASSERT_LE(std::abs(back.top - top), 1);
        ASSERT_LE(std::abs(back.left - left), 1);
        ASSERT_LE(std::abs(back.height - h), 1);
        ASSERT_LE(std::abs(back.width - w), 1);

        // mapped into another frame, the pixel rect covers the exact region
        const int fh = std::uniform_int_distribution<int>(1, 200)(rng);
        const int fw = std::uniform_int_distribution<int>(1, 200)(rng);
        const auto m = relative_to_rect(rel, fh, fw);
        ASSERT_GE(m.top, 0);
        ASSERT_LE(m.bottom(), fh);
        ASSERT_LE(m.right(), fw);
        ASSERT_LE(m.top, rel.top * fh + 1e-9);
        ASSERT_GE(m.bottom(), std::min<double>(fh, (rel.top + rel.height) * fh - 1e-9));
    }
}
