// Acceptance gate. Prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails. Pass criterion numbers as arguments to run a subset.
#include "glnet/glnet.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

using namespace glnet;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// 1. tiling -----------------------------------------------------------------

Outcome tiling_suite()
{
    std::mt19937 rng(2024);
    int failures = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const int ph = std::uniform_int_distribution<int>(2, 48)(rng);
        const int pw = std::uniform_int_distribution<int>(2, 48)(rng);
        const int h = std::uniform_int_distribution<int>(ph, 160)(rng);
        const int w = std::uniform_int_distribution<int>(pw, 160)(rng);
        const int ov = std::uniform_int_distribution<int>(0, std::min(ph, pw) - 1)(rng);
        const auto g = build_grid(h, w, ph, pw, ov);
        bool ok = true;
        std::vector<int> hits(static_cast<std::size_t>(h) * w, 0);
        for (const auto& r : g.rects) {
            ok = ok && r.height == ph && r.width == pw && r.top >= 0 && r.left >= 0 && r.bottom() <= h &&
                 r.right() <= w;
            if (!ok)
                break;
            for (int y = r.top; y < r.bottom(); ++y)
                for (int x = r.left; x < r.right(); ++x)
                    ++hits[static_cast<std::size_t>(y) * w + x];
        }
        for (int c : hits)
            ok = ok && c >= 1;
        for (std::size_t i = 0; i + 1 < g.row_starts.size(); ++i)
            ok = ok && g.row_starts[i] + ph - g.row_starts[i + 1] >= ov;
        for (std::size_t i = 0; i + 1 < g.col_starts.size(); ++i)
            ok = ok && g.col_starts[i] + pw - g.col_starts[i + 1] >= ov;

        std::uniform_real_distribution<float> u(-10.f, 10.f);
        Raster<float> a(3, h, w);
        for (auto& v : a.values())
            v = u(rng);
        for (auto mode : {BlendMode::average, BlendMode::center_priority})
            ok = ok && merge(crop_all(a, g), g, mode) == a;
        failures += !ok;
    }
    return {failures == 0, std::to_string(200 - failures) + "/200 grids covered, overlapped and round-tripped"};
}

// 2. losses -----------------------------------------------------------------

Tensor<double> random_logits(int k, int h, int w, std::mt19937& rng)
{
    std::normal_distribution<double> n(0.0, 1.5);
    Tensor<double> t(k, h, w);
    for (auto& v : t.values())
        v = n(rng);
    return t;
}

// Largest elementwise relative deviation between an analytic gradient and
// central differences of f.
double fd_error(Tensor<double>& x, const Tensor<double>& analytic, const std::function<double()>& f)
{
    const double h = 1e-6;
    double worst = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double up = f();
        x[i] = keep - h;
        const double down = f();
        x[i] = keep;
        const double fd = (up - down) / (2 * h);
        worst = std::max(worst, std::abs(analytic[i] - fd) / std::max(std::abs(fd), 1e-4));
    }
    return worst;
}

Outcome loss_suite()
{
    // two classes with equal logits: p_t = 1/2
    const Tensor<double> even2(2, 1, 1, 0.0);
    const Mask one(1, 1, 1, 0);
    const Tensor<double> even3(3, 1, 1, 0.0);
    const double closed[][2] = {
        {focal_loss(even2, one, 6.0).value, 0.0108304},
        {focal_loss(even2, one, 0.0).value, std::log(2.0)},
        {focal_loss(even3, one, 6.0).value, std::pow(2.0 / 3.0, 6) * std::log(3.0)},
    };
    double closed_err = 0;
    for (const auto& c : closed)
        closed_err = std::max(closed_err, std::abs(c[0] - c[1]));

    std::mt19937 rng(77);
    LossConfig cfg;
    const Mask t = [&] {
        Mask m(1, 4, 4);
        for (auto& v : m.values())
            v = static_cast<std::uint8_t>(rng() % 3);
        return m;
    }();
    double worst = 0;

    std::vector<Tensor<double>> z1{random_logits(3, 4, 4, rng)};
    const auto p1 = phase1_batch_objective(z1, {t}, cfg);
    worst = std::max(worst, fd_error(z1[0], p1.grads[0], [&] { return phase1_batch_objective(z1, {t}, cfg).value; }));

    auto sl = random_logits(3, 4, 4, rng), sa = random_logits(3, 4, 4, rng), xl = random_logits(3, 4, 4, rng);
    const auto xg = random_logits(3, 4, 4, rng);
    const auto p2 = phase2_objective(sl, sa, t, xg, xl, cfg);
    auto v2 = [&] { return phase2_objective(sl, sa, t, xg, xl, cfg).value; };
    worst = std::max({worst, fd_error(sl, p2.grad_local_logits, v2), fd_error(sa, p2.grad_agg_logits, v2),
                      fd_error(xl, p2.grad_local_last, v2)});

    auto sg = random_logits(3, 4, 4, rng), sa3 = random_logits(3, 4, 4, rng);
    const auto p3 = phase3_objective(sg, sa3, t, cfg);
    auto v3 = [&] { return phase3_objective(sg, sa3, t, cfg).value; };
    worst = std::max({worst, fd_error(sg, p3.grad_global_logits, v3), fd_error(sa3, p3.grad_agg_logits, v3)});

    return {closed_err <= 1e-6 && worst <= 1e-4,
            "closed-form error " + fmt("%.2e", closed_err) + ", worst finite-difference relative error " +
                fmt("%.2e", worst)};
}

// 3. phase isolation --------------------------------------------------------

BranchConfig tiny_arch(int classes = 3)
{
    BranchConfig a;
    a.num_classes = classes;
    a.stem_channels = 4;
    a.stage_channels = {4, 8};
    a.fpn_channels = 4;
    return a;
}

double grad_norm(const ParamRefs<float>& ps)
{
    double s = 0;
    for (auto* p : ps)
        for (float g : p->grad.values())
            s += static_cast<double>(g) * g;
    return std::sqrt(s);
}

std::vector<float> flatten(const ParamRefs<float>& ps)
{
    std::vector<float> out;
    for (auto* p : ps)
        out.insert(out.end(), p->value.values().begin(), p->value.values().end());
    return out;
}

Outcome isolation_suite()
{
    SynthSpec spec;
    spec.canvas = 256;
    spec.min_patch = 64;
    const auto data = synthesize_split(spec, "train", 2);
    TrainPlan plan;
    plan.epochs = {2, 2, 2};
    plan.lr_global = plan.lr_local = 1e-3;
    plan.batch_size = 2;
    plan.patches_per_image = 4;
    GLNet<float> m(tiny_arch(), 64, 64, SharePlan{}, plan.loss.lambda);
    m.init(5);
    Trainer t(m, data, plan);
    t.run_phase1();

    const std::vector<PatchRef> patches{{0, 0}, {1, 3}, {0, 7}};
    double worst_frozen = 0;
    bool trainable_moves = true;
    for (double lambda : {0.0, 0.15, 50.0}) {
        TrainPlan p = plan;
        p.loss.lambda = lambda;
        Trainer tl(m, data, p);
        m.zero_grad();
        tl.phase2_gradients(patches);
        worst_frozen = std::max(worst_frozen, grad_norm(m.global.params()));
        trainable_moves = trainable_moves && grad_norm(m.local.feature_params()) > 0;
    }
    m.head.set_lambda(plan.loss.lambda);

    // a full phase 2 leaves every global weight bit-identical
    const auto global_before = flatten(m.global.params());
    t.run_phase2();
    const bool global_untouched = flatten(m.global.params()) == global_before;

    m.zero_grad();
    t.phase3_gradients(1, std::vector<std::size_t>{0, 2, 5});
    worst_frozen = std::max(worst_frozen, grad_norm(m.local.params()));
    trainable_moves = trainable_moves && grad_norm(m.global.feature_params()) > 0;
    const auto local_before = flatten(m.local.params());
    t.run_phase3();
    const bool local_untouched = flatten(m.local.params()) == local_before;

    return {worst_frozen == 0.0 && trainable_moves && global_untouched && local_untouched,
            "frozen-side gradient norm " + fmt("%g", worst_frozen) + " (lambda 0, 0.15, 50), frozen weights " +
                (global_untouched && local_untouched ? "unchanged" : "CHANGED")};
}

// 4. ablation ordering ------------------------------------------------------

Outcome ablation_suite()
{
    const BranchConfig arch; // desk architecture
    TrainPlan plan;
    plan.epochs = {20, 20, 10};
    plan.lr_global = plan.lr_local = 1e-3;
    plan.patches_per_image = 16;
    plan.loss.lambda = 1e-4;
    double mean[4] = {};
    int wide_margin = 0;
    std::ostringstream per_seed;
    for (std::uint64_t seed : {1, 2, 3}) {
        SynthSpec spec;
        spec.seed = seed;
        const auto train = synthesize_split(spec, "train", 20);
        const auto test = synthesize_split(spec, "test", 5);
        plan.seed = seed;
        const auto s = run_ablation(train, test, arch, 128, 128, plan);
        mean[0] += s.global_only / 3;
        mean[1] += s.local_only / 3;
        mean[2] += s.glnet_g2l / 3;
        mean[3] += s.glnet_bidir / 3;
        wide_margin += s.glnet_bidir - s.best_single() >= 0.03;
        char buf[160];
        std::snprintf(buf, sizeof buf, "  seed %d: global %.4f local %.4f g2l %.4f bidir %.4f (%.0fs)\n",
                      static_cast<int>(seed), s.global_only, s.local_only, s.glnet_g2l, s.glnet_bidir, s.seconds);
        per_seed << buf;
        std::cout << buf << std::flush;
    }
    const bool ordered = mean[3] >= mean[2] && mean[2] >= std::max(mean[0], mean[1]);
    char buf[200];
    std::snprintf(buf, sizeof buf,
                  "mean mIoU global %.4f local %.4f g2l %.4f bidir %.4f; bidir +3 points over best single on %d/3 seeds",
                  mean[0], mean[1], mean[2], mean[3], wide_margin);
    return {ordered && wide_margin >= 2, buf};
}

// 5. memory flatness --------------------------------------------------------

Outcome memory_suite()
{
    const BranchConfig arch;
    GLNet<float> m(arch, 128, 128, SharePlan{}, 0.15);
    m.init(1);
    m.phase = Phase::bidirectional;
    GLNet<float> g = m;
    g.phase = Phase::global_only;
    std::mt19937 rng(3);
    std::size_t glnet_peak[3], global_peak[3];
    const int sizes[3] = {512, 1024, 2048};
    for (int i = 0; i < 3; ++i) {
        Image img(3, sizes[i], sizes[i]);
        for (auto& v : img.values())
            v = static_cast<std::uint8_t>(rng());
        glnet_peak[i] = measure_peak_memory([&] { infer_image(m, img, InferMode::glnet_bidir); }).peak_bytes;
        global_peak[i] = measure_peak_memory([&] { infer_image(g, img, InferMode::global_only); }).peak_bytes;
    }
    const auto [lo, hi] = std::minmax({glnet_peak[0], glnet_peak[1], glnet_peak[2]});
    const double spread = static_cast<double>(hi - lo) / static_cast<double>(lo);
    const double growth = static_cast<double>(global_peak[2]) / static_cast<double>(global_peak[0]);
    char buf[240];
    std::snprintf(buf, sizeof buf,
                  "glnet peak %.2f/%.2f/%.2f MB (spread %.1f%%), global-only %.2f/%.2f/%.2f MB (x%.1f 512->2048)",
                  glnet_peak[0] / 1e6, glnet_peak[1] / 1e6, glnet_peak[2] / 1e6, 100 * spread, global_peak[0] / 1e6,
                  global_peak[1] / 1e6, global_peak[2] / 1e6, growth);
    return {spread < 0.10 && growth >= 3.0, buf};
}

// 6. coarse-to-fine ratios --------------------------------------------------

// A cluster of one to three discs covering roughly `fraction` of the frame.
Mask imbalanced_mask(int side, double fraction, std::mt19937& rng)
{
    Mask m(1, side, side);
    const int blobs = 1 + static_cast<int>(rng() % 3);
    const double r = std::sqrt(fraction * side * side / (blobs * M_PI));
    std::uniform_real_distribution<double> centre(r + 1, side - r - 1), jitter(-r, r);
    const double cy = centre(rng), cx = centre(rng);
    for (int b = 0; b < blobs; ++b) {
        const double y0 = std::clamp(cy + (b ? jitter(rng) : 0.0), r, side - r);
        const double x0 = std::clamp(cx + (b ? jitter(rng) : 0.0), r, side - r);
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x)
                if ((y - y0) * (y - y0) + (x - x0) * (x - x0) <= r * r)
                    m(0, y, x) = 1;
    }
    return m;
}

Outcome coarse_to_fine_suite()
{
    std::mt19937 rng(6);
    GLNet<float> model(tiny_arch(2), 32, 32, SharePlan{}, 0.15);
    model.init(2);
    model.phase = Phase::bidirectional;
    InferOptions opt;
    opt.overlap = 8;

    int feasible = 0, in_band = 0, leaks = 0;
    long suppressed = 0;
    for (int i = 0; i < 100; ++i) {
        const double fraction = std::uniform_real_distribution<double>(0.01, 0.20)(rng);
        const auto mask = imbalanced_mask(192, fraction, rng);
        // growing from the tight box can only lower the ratio
        const auto tight = tight_box(mask);
        long fg = 0;
        for (int y = tight.top; y < tight.bottom(); ++y)
            for (int x = tight.left; x < tight.right(); ++x)
                fg += mask(0, y, x) != 0;
        const bool can_reach = static_cast<double>(fg) / (tight.area() - fg) >= 0.5;
        const auto box = relax_bbox(mask);
        if (can_reach) {
            ++feasible;
            in_band += box.ratio >= 0.5 && box.ratio <= 1.5;
        }

        Image img(3, 192, 192);
        for (auto& v : img.values())
            v = static_cast<std::uint8_t>(rng());
        const auto fine = fine_segment(model, img, box, InferMode::glnet_bidir, opt);
        const auto plain = infer_image(model, img, InferMode::glnet_bidir, opt).mask;
        for (int y = 0; y < 192; ++y)
            for (int x = 0; x < 192; ++x) {
                const bool inside = y >= box.rect.top && y < box.rect.bottom() && x >= box.rect.left &&
                                    x < box.rect.right();
                if (!inside) {
                    leaks += fine.mask(0, y, x) != 0;
                    suppressed += plain(0, y, x) != 0;
                }
            }
    }
    const bool ok = feasible > 0 && in_band >= 0.95 * feasible && leaks == 0;
    return {ok, std::to_string(in_band) + "/" + std::to_string(feasible) +
                    " feasible masks in [0.5, 1.5]; foreground outside box " + std::to_string(leaks) + " px (" +
                    std::to_string(suppressed) + " px suppressed vs. one-stage)"};
}

// 7. metrics ----------------------------------------------------------------

Outcome metric_suite()
{
    auto pair = [](int k) {
        Mask gt(1, 10, 10, 1), pred(1, 10, 10);
        for (int i = 0; i < k; ++i)
            pred[i] = 1;
        return std::pair{pred, gt};
    };
    const auto [p64, g64] = pair(64);
    const auto [p66, g66] = pair(66);
    const bool isic_ok = isic_threshold(0.64) == 0.0 && isic_threshold(0.66) == 0.66 &&
                         isic_score({p64}, {g64}) == 0.0 && std::abs(isic_score({p66}, {g66}) - 0.66) < 1e-15;

    std::mt19937 rng(8);
    double worst = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const int K = 2 + static_cast<int>(rng() % 5);
        std::vector<Mask> p, g;
        for (int n = 1 + static_cast<int>(rng() % 3); n > 0; --n) {
            const int h = 1 + static_cast<int>(rng() % 12), w = 1 + static_cast<int>(rng() % 12);
            Mask a(1, h, w), b(1, h, w);
            for (std::size_t i = 0; i < a.size(); ++i) {
                a[i] = static_cast<std::uint8_t>(rng() % K);
                b[i] = static_cast<std::uint8_t>(rng() % K);
            }
            p.push_back(a);
            g.push_back(b);
        }
        double sum = 0;
        int present = 0;
        for (int c = 0; c < K; ++c) {
            long inter = 0, uni = 0;
            for (std::size_t i = 0; i < p.size(); ++i)
                for (std::size_t j = 0; j < p[i].size(); ++j) {
                    inter += p[i][j] == c && g[i][j] == c;
                    uni += p[i][j] == c || g[i][j] == c;
                }
            if (uni) {
                sum += static_cast<double>(inter) / uni;
                ++present;
            }
        }
        worst = std::max(worst, std::abs(miou(p, g, K) - sum / present));
    }
    return {isic_ok && worst < 1e-12,
            std::string("isic rule ") + (isic_ok ? "exact" : "WRONG") + ", mIoU vs brute force max error " +
                fmt("%.1e", worst) + " over 200 cases"};
}

// 8. reproducibility --------------------------------------------------------

int run(const std::string& args)
{
    const std::string cmd = "GLNET_VERBOSE=0 " + std::string(GLNET_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p)
{
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

Outcome reproducibility_suite()
{
    const auto root = fs::temp_directory_path() / ("glnet_accept_" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
    if (run("synthesize --out " + (root / "data").string() + " --canvas 256 --patch 64 --n 4 --n-test 1") != 0)
        return {false, "synthesize failed"};
    std::ofstream(root / "run.conf") << "data_root = " << (root / "data").string() << "\n"
                                     << "epochs = 2,2,2\npatch = 64\nglobal_size = 64\noverlap = 8\n"
                                     << "stem_channels = 4\nchannels = 4,8\nfpn_channels = 4\n"
                                     << "patches_per_image = 4\nbatch_size = 2\nlr_global = 1e-3\n"
                                     << "lr_local = 1e-3\nseed = 11\n";
    for (const char* dir : {"a", "b"})
        if (run("train " + (root / "run.conf").string() + " --set out_dir=" + (root / dir).string()) != 0)
            return {false, "train failed"};
    int same = 0, total = 0;
    for (const char* file : {"loss.csv", "phase1.ckpt", "phase2.ckpt", "phase3.ckpt"}) {
        const auto a = slurp(root / "a" / file);
        ++total;
        same += !a.empty() && a == slurp(root / "b" / file);
    }
    fs::remove_all(root);
    return {same == total, std::to_string(same) + "/" + std::to_string(total) +
                               " artifacts byte-identical (loss.csv, three checkpoints)"};
}

} // namespace

int main(int argc, char** argv)
{
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"tiling oracle", tiling_suite},
        {"loss and gradient", loss_suite},
        {"phase isolation", isolation_suite},
        {"ablation ordering", ablation_suite},
        {"memory flatness", memory_suite},
        {"coarse-to-fine ratio", coarse_to_fine_suite},
        {"metrics", metric_suite},
        {"reproducibility", reproducibility_suite},
    };
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i)
        wanted.insert(std::atoi(argv[i]));

    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int n = static_cast<int>(i) + 1;
        if (!wanted.empty() && !wanted.count(n))
            continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        failed += !o.pass;
        std::printf("criterion %d %s: %s - %s (%.1fs)\n", n, criteria[i].first, o.pass ? "PASS" : "FAIL",
                    o.detail.c_str(), secs);
        std::fflush(stdout);
    }
    return failed ? 1 : 0;
}
