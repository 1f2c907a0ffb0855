#include "glnet/coarse2fine.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace glnet;

namespace {

Mask square_mask(int H, int W, int top, int left, int side)
{
    Mask m(1, H, W);
    for (int y = top; y < top + side; ++y)
        for (int x = left; x < left + side; ++x)
            m(0, y, x) = 1;
    return m;
}

GLNet<float> small_model(Phase phase, std::uint64_t seed = 4)
{
    BranchConfig a;
    a.num_classes = 2;
    a.stem_channels = 4;
    a.stage_channels = {4, 8};
    a.fpn_channels = 4;
    GLNet<float> m(a, 32, 32, SharePlan{ShareDirection::bidirectional, ShareDepth::deep, 0}, 0.15);
    m.init(seed);
    m.phase = phase;
    return m;
}

// Forces the global classifier to a constant class everywhere.
void force_global_class(GLNet<float>& m, int cls)
{
    for (auto* p : m.global.classifier_params()) {
        if (p->name.find("bias") != std::string::npos) {
            p->value.fill(-10.f);
            p->value[cls] = 10.f;
        } else {
            p->value.fill(0.f);
        }
    }
}

Image random_image(int h, int w, std::uint32_t seed)
{
    std::mt19937 rng(seed);
    Image img(3, h, w);
    for (auto& v : img.values())
        v = static_cast<std::uint8_t>(rng());
    return img;
}

} // namespace

TEST(RelaxBbox, CenteredSquareMatchesOracle)
{
    const auto m = square_mask(1000, 1000, 450, 450, 100);
    // independent oracle: grow the side by 2 (one pixel per side) until fg/bg <= limit
    auto oracle = [](double limit) {
        int side = 100;
        while (10000.0 / (static_cast<double>(side) * side - 10000.0 + 1e-300) > limit)
            side += 2;
        return side;
    };
    const auto b = relax_bbox(m, 1.0, 0.1);
    EXPECT_EQ(b.rect.height, oracle(1.1));
    EXPECT_EQ(b.rect.width, oracle(1.1));
    EXPECT_EQ(b.rect.height, 140);
    EXPECT_EQ(b.rect.top, 430);
    EXPECT_LE(b.ratio, 1.1);
    EXPECT_EQ(b.iterations, 20);

    const auto exact = relax_bbox(m, 1.0, 0.0);
    EXPECT_EQ(exact.rect.height, oracle(1.0));
    EXPECT_EQ(exact.rect.height, 142);
    EXPECT_NEAR(exact.ratio, 10000.0 / (142.0 * 142.0 - 10000.0), 1e-12);
}

TEST(RelaxBbox, FullAndEmpty)
{
    const auto full = relax_bbox(Mask(1, 30, 40, 1));
    EXPECT_EQ(full.rect, (PixelRect{0, 0, 30, 40}));
    EXPECT_TRUE(std::isinf(full.ratio));
    EXPECT_FALSE(full.empty);

    const auto none = relax_bbox(Mask(1, 30, 40));
    EXPECT_TRUE(none.empty);
    EXPECT_EQ(none.rect.area(), 0);
    EXPECT_THROW(relax_bbox(Mask(1, 3, 3), 0.0), std::invalid_argument);
}

TEST(RelaxBbox, BorderClampRebalances)
{
    // square in the corner: growth must go inward only
    const auto m = square_mask(200, 200, 0, 0, 40);
    const auto b = relax_bbox(m);
    EXPECT_EQ(b.rect.top, 0);
    EXPECT_EQ(b.rect.left, 0);
    EXPECT_LE(b.ratio, 1.1);
    EXPECT_EQ(b.rect.height, b.rect.width);
}

TEST(RelaxBbox, ContainmentAndRatioImprovement)
{
    std::mt19937 rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const int H = std::uniform_int_distribution<int>(20, 120)(rng);
        const int W = std::uniform_int_distribution<int>(20, 120)(rng);
        Mask m(1, H, W);
        const int blobs = 1 + static_cast<int>(rng() % 3);
        for (int k = 0; k < blobs; ++k) {
            const int h = std::uniform_int_distribution<int>(1, H / 3)(rng);
            const int w = std::uniform_int_distribution<int>(1, W / 3)(rng);
            const int t = std::uniform_int_distribution<int>(0, H - h)(rng);
            const int l = std::uniform_int_distribution<int>(0, W - w)(rng);
            for (int y = t; y < t + h; ++y)
                for (int x = l; x < l + w; ++x)
                    m(0, y, x) = 1;
        }
        long fg = 0;
        for (auto v : m.values())
            fg += v != 0;
        const auto b = relax_bbox(m);
        ASSERT_FALSE(b.empty);
        ASSERT_GE(b.rect.top, 0);
        ASSERT_LE(b.rect.bottom(), H);
        ASSERT_LE(b.rect.right(), W);
        const auto tight = tight_box(m);
        ASSERT_LE(b.rect.top, tight.top);
        ASSERT_LE(b.rect.left, tight.left);
        ASSERT_GE(b.rect.bottom(), tight.bottom());
        ASSERT_GE(b.rect.right(), tight.right());
        if (2 * fg < static_cast<long>(H) * W) {
            const double whole = static_cast<double>(fg) / (static_cast<double>(H) * W - fg);
            ASSERT_GE(b.ratio, whole - 1e-12);
            ASSERT_LE(b.ratio, 1.1 + 1e-12);
        }
    }
}

TEST(GrowToMin, CenteredAndClamped)
{
    EXPECT_EQ(grow_to_min({10, 10, 4, 4}, 8, 8, 100, 100), (PixelRect{8, 8, 8, 8}));
    EXPECT_EQ(grow_to_min({0, 97, 4, 3}, 8, 8, 100, 100), (PixelRect{0, 92, 8, 8}));
    EXPECT_EQ(grow_to_min({5, 5, 20, 20}, 8, 8, 100, 100), (PixelRect{5, 5, 20, 20}));
    EXPECT_THROW(grow_to_min({0, 0, 1, 1}, 8, 8, 6, 100), std::invalid_argument);
}

TEST(CoarseSegment, ForcedLogitsAndErrors)
{
    auto m = small_model(Phase::global_only);
    const auto img = random_image(70, 50, 1);
    force_global_class(m, 0);
    EXPECT_EQ(coarse_segment(m, img), Mask(1, 70, 50, 0));
    force_global_class(m, 1);
    EXPECT_EQ(coarse_segment(m, img), Mask(1, 70, 50, 1));
    EXPECT_THROW(coarse_segment(small_model(Phase::untrained), img), std::invalid_argument);
}

TEST(CoarseSegment, BlobSurvivesFourTimesRoundTrip)
{
    Mask m(1, 256, 256);
    for (int y = 0; y < 256; ++y)
        for (int x = 0; x < 256; ++x)
            m(0, y, x) = (y - 128) * (y - 128) + (x - 128) * (x - 128) <= 40 * 40;
    const auto back = ops::resize_nearest(ops::resize_nearest(m, 64, 64), 256, 256);
    long inter = 0, uni = 0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        inter += m[i] && back[i];
        uni += m[i] || back[i];
    }
    EXPECT_GE(static_cast<double>(inter) / uni, 0.8);
}

TEST(FineSegment, BackgroundOutsideBox)
{
    const auto m = small_model(Phase::bidirectional);
    const auto img = random_image(90, 100, 2);
    std::mt19937 rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        FgBox box;
        box.empty = false;
        box.rect.height = std::uniform_int_distribution<int>(5, 60)(rng);
        box.rect.width = std::uniform_int_distribution<int>(5, 60)(rng);
        box.rect.top = std::uniform_int_distribution<int>(0, 90 - box.rect.height)(rng);
        box.rect.left = std::uniform_int_distribution<int>(0, 100 - box.rect.width)(rng);
        InferOptions opt;
        opt.overlap = 8;
        const auto r = fine_segment(m, img, box, InferMode::glnet_bidir, opt);
        ASSERT_GE(r.window.height, 32);
        ASSERT_GE(r.window.width, 32);
        for (int y = 0; y < 90; ++y)
            for (int x = 0; x < 100; ++x) {
                const bool inside = y >= box.rect.top && y < box.rect.bottom() && x >= box.rect.left &&
                                    x < box.rect.right();
                if (!inside) {
                    ASSERT_EQ(r.mask(0, y, x), 0);
                }
            }
    }
    EXPECT_EQ(fine_segment(m, img, FgBox{}, InferMode::glnet_bidir).mask, Mask(1, 90, 100));
    FgBox outside;
    outside.empty = false;
    outside.rect = {80, 0, 20, 20};
    EXPECT_THROW(fine_segment(m, img, outside, InferMode::glnet_bidir), std::invalid_argument);
}

TEST(FineSegment, FullBoxIsPlainInference)
{
    const auto m = small_model(Phase::bidirectional);
    const auto img = random_image(64, 80, 3);
    FgBox box;
    box.empty = false;
    box.rect = {0, 0, 64, 80};
    InferOptions opt;
    opt.overlap = 8;
    EXPECT_EQ(fine_segment(m, img, box, InferMode::glnet_bidir, opt).mask,
              infer_image(m, img, InferMode::glnet_bidir, opt).mask);

    // a box at least one patch in size: inside equals one-stage inference on the box
    box.rect = {10, 20, 40, 50};
    const auto two = fine_segment(m, img, box, InferMode::glnet_bidir, opt);
    EXPECT_EQ(two.window, box.rect);
    const auto one = infer_image(m, crop(img, box.rect), InferMode::glnet_bidir, opt);
    for (int y = 0; y < 40; ++y)
        for (int x = 0; x < 50; ++x)
            ASSERT_EQ(two.mask(0, 10 + y, 20 + x), one.mask(0, y, x));
}

TEST(CoarseToFine, EmptyCoarseGivesBackground)
{
    auto m = small_model(Phase::bidirectional);
    force_global_class(m, 0);
    const auto img = random_image(64, 64, 4);
    const auto r = coarse_to_fine(m, m, img, InferMode::glnet_bidir);
    EXPECT_TRUE(r.box.empty);
    EXPECT_EQ(r.fine.mask, Mask(1, 64, 64));
}

TEST(BoxedSamples, CropsToRelaxedBox)
{
    Sample s{"a", Image(3, 200, 200, 9), square_mask(200, 200, 100, 100, 20)};
    Sample bg{"b", Image(3, 50, 50), Mask(1, 50, 50)};
    const auto out = boxed_samples({s, bg}, 32);
    ASSERT_EQ(out.size(), 2u);
    EXPECT_GE(out[0].image.height(), 32);
    EXPECT_LT(out[0].image.height(), 200);
    EXPECT_EQ(out[0].image.shape().height, out[0].mask.height());
    EXPECT_EQ(out[1].mask, bg.mask);
}
