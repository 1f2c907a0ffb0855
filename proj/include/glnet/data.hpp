#pragma once

#include "glnet/image_io.hpp"
#include "glnet/ops.hpp"
#include "glnet/tensor.hpp"
#include "glnet/tiling.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace glnet {

namespace fs = std::filesystem;

struct Sample {
    std::string id;
    Image image;
    Mask mask;
};

struct SegDataset {
    fs::path root;
    std::string split;
    int num_classes = 0;
    std::vector<std::pair<fs::path, fs::path>> pairs; // (image, mask), sorted by file name

    std::size_t size() const noexcept { return pairs.size(); }

    Sample load(std::size_t i) const
    {
        const auto& [img_path, mask_path] = pairs.at(i);
        Sample s{img_path.stem().string(), io::read_image(img_path), io::read_mask(mask_path)};
        check_sample(s, img_path, mask_path);
        return s;
    }

    std::vector<Sample> load_all() const
    {
        std::vector<Sample> out;
        out.reserve(size());
        for (std::size_t i = 0; i < size(); ++i)
            out.push_back(load(i));
        return out;
    }

    void check_sample(const Sample& s, const fs::path& img_path, const fs::path& mask_path) const
    {
        if (s.image.height() != s.mask.height() || s.image.width() != s.mask.width())
            throw std::runtime_error("size mismatch between " + img_path.string() + " and " + mask_path.string());
        for (auto v : s.mask.values())
            if (v >= num_classes)
                throw std::runtime_error("label " + std::to_string(v) + " >= " + std::to_string(num_classes) +
                                         " in " + mask_path.string());
    }
};

inline std::vector<fs::path> list_pngs(const fs::path& dir)
{
    std::vector<fs::path> out;
    if (!fs::is_directory(dir))
        return out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png")
            out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

// Layout: root/<split>/images/*.png paired by file name with root/<split>/masks/*.png.
// With validate=true every pair is read once to check sizes and labels.
inline SegDataset load_dataset(const fs::path& root, const std::string& split, int num_classes, bool validate = true)
{
    const fs::path base = root / split;
    if (!fs::is_directory(base / "images"))
        throw std::runtime_error("missing directory " + (base / "images").string());
    SegDataset ds{root, split, num_classes, {}};
    const auto images = list_pngs(base / "images");
    const auto masks = list_pngs(base / "masks");
    std::set<std::string> mask_names;
    for (const auto& m : masks)
        mask_names.insert(m.filename().string());
    for (const auto& img : images) {
        const fs::path m = base / "masks" / img.filename();
        if (!mask_names.count(img.filename().string()))
            throw std::runtime_error("image without mask: " + img.string());
        mask_names.erase(img.filename().string());
        ds.pairs.emplace_back(img, m);
    }
    if (!mask_names.empty())
        throw std::runtime_error("mask without image: " + (base / "masks" / *mask_names.begin()).string());
    if (validate)
        for (std::size_t i = 0; i < ds.size(); ++i)
            (void)ds.load(i);
    return ds;
}

struct LowRes {
    Image image;
    Mask mask;
};

// Bilinear image / nearest-neighbour mask downsample to exactly h x w.
inline LowRes make_lowres(const Image& image, const Mask& mask, int h, int w)
{
    if (h > image.height() || w > image.width())
        throw std::invalid_argument("lowres target larger than source");
    if (h <= 0 || w <= 0)
        throw std::invalid_argument("lowres target must be positive");
    return {ops::resize_image(image, h, w), ops::resize_nearest(mask, h, w)};
}

struct PatchPair {
    Image image;
    Mask mask;
};

inline std::vector<PatchPair> make_patches(const Image& image, const Mask& mask, const TileGrid& grid)
{
    if (image.height() != grid.image_h || image.width() != grid.image_w || mask.height() != grid.image_h ||
        mask.width() != grid.image_w)
        throw std::invalid_argument("grid built for a different sample size");
    std::vector<PatchPair> out;
    out.reserve(grid.size());
    for (const auto& r : grid.rects)
        out.push_back({crop(image, r), crop(mask, r)});
    return out;
}

// Synthetic ultra-resolution benchmark. The canvas is split into two zones
// (left/right halves) with differently tinted backgrounds. Foreground blobs
// all share one high-pass texture; a blob's class (1 = left zone, 2 = right
// zone) follows only from which zone it sits in. Blob outlines carry radial
// jags, and blob interiors small untinted background pores, both finer than
// the global downsampling step.
struct SynthSpec {
    int canvas = 1024;
    int blobs_per_zone = 2;
    double min_radius = 0.11; // fraction of canvas
    double max_radius = 0.20;
    double jaggedness = 12.0; // px amplitude of the fine outline jags
    double jag_wavelength_min = 12.0; // px along the outline
    double jag_wavelength_max = 40.0;
    double pore_fraction = 0.2; // share of blob area turned into background pores
    double pore_radius_min = 3.0; // px
    double pore_radius_max = 7.0;
    int min_patch = 128; // smallest patch the data is meant to be tiled with
    std::uint64_t seed = 7;

    static constexpr int num_classes = 3;

    void validate() const
    {
        if (canvas < min_patch)
            throw std::invalid_argument("canvas smaller than patch");
        if (blobs_per_zone < 1 || !(min_radius > 0) || max_radius < min_radius || max_radius >= 0.25)
            throw std::invalid_argument("invalid blob parameters");
        if (jaggedness < 0 || !(jag_wavelength_min > 0) || jag_wavelength_max < jag_wavelength_min)
            throw std::invalid_argument("invalid jag parameters");
        if (pore_fraction < 0 || pore_fraction >= 1 || !(pore_radius_min > 0) || pore_radius_max < pore_radius_min)
            throw std::invalid_argument("invalid pore parameters");
    }
};

inline void to_json(nlohmann::json& j, const SynthSpec& s)
{
    j = {{"canvas", s.canvas},
         {"blobs_per_zone", s.blobs_per_zone},
         {"min_radius", s.min_radius},
         {"max_radius", s.max_radius},
         {"jaggedness", s.jaggedness},
         {"jag_wavelength_min", s.jag_wavelength_min},
         {"jag_wavelength_max", s.jag_wavelength_max},
         {"pore_fraction", s.pore_fraction},
         {"pore_radius_min", s.pore_radius_min},
         {"pore_radius_max", s.pore_radius_max},
         {"min_patch", s.min_patch},
         {"seed", s.seed},
         {"num_classes", SynthSpec::num_classes}};
}

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b)
{
    std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// White noise minus its 5x5 box blur: a zero-mean high-pass field.
inline std::vector<float> highpass_noise(int h, int w, std::mt19937_64& rng)
{
    std::uniform_real_distribution<float> u(-1.f, 1.f);
    std::vector<float> n(static_cast<std::size_t>(h) * w);
    for (auto& v : n)
        v = u(rng);
    std::vector<float> integral(static_cast<std::size_t>(h + 1) * (w + 1), 0.f);
    auto I = [&](int y, int x) -> float& { return integral[static_cast<std::size_t>(y) * (w + 1) + x]; };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            I(y + 1, x + 1) = n[static_cast<std::size_t>(y) * w + x] + I(y, x + 1) + I(y + 1, x) - I(y, x);
    std::vector<float> out(n.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int y0 = std::max(0, y - 2), y1 = std::min(h, y + 3);
            const int x0 = std::max(0, x - 2), x1 = std::min(w, x + 3);
            const float box = (I(y1, x1) - I(y0, x1) - I(y1, x0) + I(y0, x0)) / float((y1 - y0) * (x1 - x0));
            out[static_cast<std::size_t>(y) * w + x] = n[static_cast<std::size_t>(y) * w + x] - box;
        }
    return out;
}

struct Blob {
    double cx, cy, radius;
    int label;
    std::vector<double> low_amp, low_phase; // harmonics 2 and 3
    std::vector<int> jag_freq;
    std::vector<double> jag_amp, jag_phase;

    double max_reach() const
    {
        double r = radius;
        for (double a : low_amp)
            r += radius * a;
        for (double a : jag_amp)
            r += a;
        return r;
    }

    double outline(double theta) const
    {
        double r = radius;
        for (std::size_t i = 0; i < low_amp.size(); ++i)
            r += radius * low_amp[i] * std::cos((i + 2) * theta + low_phase[i]);
        for (std::size_t i = 0; i < jag_freq.size(); ++i)
            r += jag_amp[i] * std::cos(jag_freq[i] * theta + jag_phase[i]);
        return r;
    }
};

} // namespace detail

inline Sample synthesize_sample(const SynthSpec& spec, std::uint64_t seed, std::string id)
{
    spec.validate();
    std::mt19937_64 rng(seed);
    const int W = spec.canvas, H = spec.canvas;
    const double half = W / 2.0;
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    auto uni = [&](double a, double b) { return a + (b - a) * u01(rng); };

    std::vector<detail::Blob> blobs;
    constexpr double pi = std::numbers::pi;
    for (int zone = 0; zone < 2; ++zone)
        for (int b = 0; b < spec.blobs_per_zone; ++b) {
            detail::Blob blob{};
            blob.radius = uni(spec.min_radius, spec.max_radius) * W;
            blob.label = zone + 1;
            const double reach = blob.radius * 1.25 + 2 * spec.jaggedness + 4;
            const double x_lo = zone * half + reach, x_hi = (zone + 1) * half - reach;
            blob.cx = x_hi > x_lo ? uni(x_lo, x_hi) : zone * half + half / 2;
            blob.cy = H - 2 * reach > 0 ? uni(reach, H - reach) : H / 2.0;
            for (int i = 0; i < 2; ++i) {
                blob.low_amp.push_back(uni(0.0, 0.1));
                blob.low_phase.push_back(uni(0.0, 2 * pi));
            }
            const double circumference = 2 * pi * blob.radius;
            const int f_lo = std::max(4, static_cast<int>(circumference / spec.jag_wavelength_max));
            const int f_hi = std::max(f_lo + 1, static_cast<int>(circumference / spec.jag_wavelength_min));
            std::uniform_int_distribution<int> freq(f_lo, f_hi);
            for (int i = 0; i < 4; ++i) {
                blob.jag_freq.push_back(freq(rng));
                blob.jag_amp.push_back(spec.jaggedness * uni(0.3, 0.6));
                blob.jag_phase.push_back(uni(0.0, 2 * pi));
            }
            blobs.push_back(std::move(blob));
        }

    struct Pore {
        double cx, cy, r;
    };
    std::vector<Pore> pores;
    std::uniform_real_distribution<double> angle(0.0, 2 * pi);
    for (const auto& b : blobs) {
        const double mean_r = (spec.pore_radius_min + spec.pore_radius_max) / 2;
        const int n = static_cast<int>(std::lround(spec.pore_fraction * b.radius * b.radius / (mean_r * mean_r)));
        for (int i = 0; i < n; ++i) {
            const double rho = b.radius * std::sqrt(u01(rng));
            const double th = angle(rng);
            pores.push_back({b.cx + rho * std::cos(th), b.cy + rho * std::sin(th),
                             uni(spec.pore_radius_min, spec.pore_radius_max)});
        }
    }

    Sample s{std::move(id), Image(3, H, W), Mask(1, H, W)};
    for (const auto& b : blobs) {
        const double reach = b.max_reach();
        const int y0 = std::max(0, static_cast<int>(b.cy - reach) - 1), y1 = std::min(H, static_cast<int>(b.cy + reach) + 2);
        const int x0 = std::max(0, static_cast<int>(b.cx - reach) - 1), x1 = std::min(W, static_cast<int>(b.cx + reach) + 2);
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) {
                if (s.mask(0, y, x) != 0)
                    continue;
                const double dx = x + 0.5 - b.cx, dy = y + 0.5 - b.cy;
                const double r = std::hypot(dx, dy);
                if (r <= reach && r <= b.outline(std::atan2(dy, dx)))
                    s.mask(0, y, x) = static_cast<std::uint8_t>(b.label);
            }
    }
    constexpr std::uint8_t pore_mark = 255;
    for (const auto& p : pores) {
        const int y0 = std::max(0, static_cast<int>(p.cy - p.r)), y1 = std::min(H, static_cast<int>(p.cy + p.r) + 1);
        const int x0 = std::max(0, static_cast<int>(p.cx - p.r)), x1 = std::min(W, static_cast<int>(p.cx + p.r) + 1);
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) {
                const double dx = x + 0.5 - p.cx, dy = y + 0.5 - p.cy;
                if (dx * dx + dy * dy <= p.r * p.r && s.mask(0, y, x) != 0)
                    s.mask(0, y, x) = pore_mark;
            }
    }

    const auto fg_tex = detail::highpass_noise(H, W, rng);
    std::normal_distribution<float> grain(0.f, 6.f);
    const float bg_tint[2][3] = {{62.f, 96.f, 70.f}, {112.f, 84.f, 58.f}};
    const float pore_tint[3] = {88.f, 88.f, 88.f};
    const float fg_base[3] = {176.f, 170.f, 160.f};
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            auto& label = s.mask(0, y, x);
            const std::size_t k = static_cast<std::size_t>(y) * W + x;
            for (int c = 0; c < 3; ++c) {
                float v;
                if (label == 0)
                    v = bg_tint[x < half ? 0 : 1][c] + grain(rng);
                else if (label == pore_mark)
                    v = pore_tint[c] + grain(rng);
                else
                    v = fg_base[c] + 70.f * fg_tex[k];
                s.image(c, y, x) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
            }
            if (label == pore_mark)
                label = 0;
        }
    return s;
}

inline std::uint64_t sample_seed(std::uint64_t seed, const std::string& split, std::size_t index)
{
    std::uint64_t h = seed;
    for (char c : split)
        h = detail::mix_seed(h, static_cast<unsigned char>(c));
    return detail::mix_seed(h, index);
}

inline std::string sample_name(std::size_t index)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "img_%04zu", index);
    return buf;
}

inline std::vector<Sample> synthesize_split(const SynthSpec& spec, const std::string& split, std::size_t n)
{
    std::vector<Sample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        out.push_back(synthesize_sample(spec, sample_seed(spec.seed, split, i), sample_name(i)));
    return out;
}

inline void write_split(const fs::path& root, const std::string& split, const std::vector<Sample>& samples)
{
    fs::create_directories(root / split / "images");
    fs::create_directories(root / split / "masks");
    for (const auto& s : samples) {
        io::write_png(root / split / "images" / (s.id + ".png"), s.image);
        io::write_png(root / split / "masks" / (s.id + ".png"), s.mask);
    }
}

// Writes `counts` = {split -> n} under out_root plus synth_manifest.json,
// which holds everything needed to regenerate the same bytes.
inline void generate_synthetic(const SynthSpec& spec, const std::vector<std::pair<std::string, std::size_t>>& counts,
                               const fs::path& out_root)
{
    spec.validate();
    nlohmann::json manifest = {{"generator", "glnet-synthetic-v1"}, {"spec", spec}, {"splits", nlohmann::json::object()}};
    for (const auto& [split, n] : counts) {
        write_split(out_root, split, synthesize_split(spec, split, n));
        manifest["splits"][split] = n;
    }
    std::ofstream(out_root / "synth_manifest.json") << manifest.dump(2) << "\n";
}

} // namespace glnet
