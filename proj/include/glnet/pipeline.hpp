#pragma once

#include "glnet/checkpoint.hpp"
#include "glnet/coarse2fine.hpp"
#include "glnet/config.hpp"
#include "glnet/data.hpp"
#include "glnet/evalprof.hpp"
#include "glnet/inference.hpp"
#include "glnet/metrics.hpp"
#include "glnet/training.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace glnet {

using LogFn = std::function<void(const std::string&)>;

// Writes `text` to path via a ".partial" sibling, then renames.
inline void write_text_atomic(const fs::path& path, const std::string& text)
{
    auto tmp = path;
    tmp += ".partial";
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f)
            throw std::runtime_error("cannot write " + tmp.string());
        f << text;
        if (!f)
            throw std::runtime_error("failed writing " + tmp.string());
    }
    fs::rename(tmp, path);
}

inline void write_png_atomic(const fs::path& path, const Raster<std::uint8_t>& img)
{
    auto tmp = path;
    tmp += ".partial";
    io::write_png(tmp, img);
    fs::rename(tmp, path);
}

inline fs::path phase_checkpoint(const fs::path& dir, int phase)
{
    return dir / ("phase" + std::to_string(phase) + ".ckpt");
}

inline std::string loss_csv(const std::vector<LossRecord>& rows)
{
    std::ostringstream o;
    o << "phase,epoch,step,loss\n";
    char buf[64];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.9g", r.loss);
        o << r.phase << ',' << r.epoch << ',' << r.step << ',' << buf << '\n';
    }
    return o.str();
}

// Phases a run executes for `requested` ("all" = every phase the sharing
// direction supports, taken from the config's phase list).
inline std::vector<int> resolve_phases(const RunConfig& cfg, const std::string& requested)
{
    std::vector<int> wanted;
    if (requested == "all")
        wanted = cfg.phases;
    else if (requested == "1" || requested == "2" || requested == "3")
        wanted = {requested[0] - '0'};
    else
        throw ConfigError("--phase must be 1, 2, 3 or all");
    std::vector<int> out;
    for (int p : wanted) {
        if (cfg.share.direction == ShareDirection::none && p != 2) {
            if (requested != "all")
                throw ConfigError("sharing=none trains the local branch alone (phase 2 only)");
            continue;
        }
        if (p == 3 && !cfg.share.local_to_global()) {
            if (requested != "all")
                throw ConfigError("phase 3 needs sharing=bidir");
            continue;
        }
        out.push_back(p);
    }
    return out;
}

inline GLNet<float> fresh_model(const RunConfig& cfg)
{
    GLNet<float> m(cfg.arch, cfg.global_size, cfg.patch, cfg.share, cfg.train.loss.lambda);
    m.init(cfg.train.seed);
    return m;
}

// Confirms that a checkpoint was produced by a compatible config.
inline void check_compatible(const GLNet<float>& m, const RunConfig& cfg, const fs::path& path)
{
    if (m.local_config.num_classes != cfg.arch.num_classes || m.local_config.stage_channels != cfg.arch.stage_channels ||
        m.local_config.stem_channels != cfg.arch.stem_channels || m.local_config.fpn_channels != cfg.arch.fpn_channels ||
        m.global_size() != cfg.global_size || m.patch_size() != cfg.patch || !(m.plan == cfg.share))
        throw ConfigError("checkpoint " + path.string() + " was trained with a different configuration");
}

struct TrainReport {
    std::vector<fs::path> checkpoints;
    std::vector<LossRecord> history;
};

// Runs the requested phases of one config, reading earlier phases'
// checkpoints from cfg.out_dir when a phase is started on its own. Writes
// phaseN.ckpt after each phase and loss.csv for the whole invocation.
inline TrainReport train_run(const RunConfig& cfg, const std::string& requested, const LogFn& log = {})
{
    cfg.validate();
    const auto phases = resolve_phases(cfg, requested);
    if (phases.empty())
        throw ConfigError("no phase to run");
    auto say = [&](const std::string& s) {
        if (log)
            log(s);
    };

    const auto ds = load_dataset(cfg.data_root, "train", cfg.arch.num_classes);
    if (ds.size() == 0)
        throw std::runtime_error("no training images under " + (cfg.data_root / "train").string());
    auto data = ds.load_all();
    if (cfg.c2f_crops)
        data = boxed_samples(data, std::max(cfg.patch, cfg.global_size), cfg.c2f_tolerance);
    say("loaded " + std::to_string(data.size()) + " training samples");

    std::vector<Sample> val;
    if (cfg.early_stop_patience > 0 && fs::exists(cfg.data_root / "val"))
        val = load_dataset(cfg.data_root, "val", cfg.arch.num_classes).load_all();

    fs::create_directories(cfg.out_dir);
    GLNet<float> model;
    const int first = phases.front();
    const bool needs_previous = first == 3 || (first == 2 && cfg.share.global_to_local());
    if (needs_previous) {
        const auto prev = phase_checkpoint(cfg.out_dir, first - 1);
        if (!fs::exists(prev))
            throw std::runtime_error("phase " + std::to_string(first) + " requires " + prev.string() +
                                     " (run phase " + std::to_string(first - 1) + " first)");
        model = load_checkpoint(prev);
        check_compatible(model, cfg, prev);
    } else {
        model = fresh_model(cfg);
    }

    Trainer trainer(model, data, cfg.train);
    if (!val.empty()) {
        double best = -1;
        int stale = 0, current = 0;
        trainer.on_epoch_end = [&](int phase, int epoch) {
            if (phase != current) {
                current = phase;
                best = -1;
                stale = 0;
            }
            const auto saved = model.phase;
            model.phase = static_cast<Phase>(phase);
            InferOptions opt;
            opt.overlap = cfg.train.overlap;
            opt.check_weights = false;
            const double v = evaluate(model, val, natural_mode(model), opt).miou;
            model.phase = saved;
            say("phase " + std::to_string(phase) + " epoch " + std::to_string(epoch) + " val mIoU " + std::to_string(v));
            if (v > best) {
                best = v;
                stale = 0;
            } else if (++stale >= cfg.early_stop_patience) {
                say("early stop");
                return false;
            }
            return true;
        };
    }

    TrainReport report;
    auto finish = [&](int phase) {
        const auto path = phase_checkpoint(cfg.out_dir, phase);
        save_checkpoint(model, path);
        report.checkpoints.push_back(path);
        say("phase " + std::to_string(phase) + " done -> " + path.string());
    };
    auto has = [&](int p) { return std::find(phases.begin(), phases.end(), p) != phases.end(); };
    if (has(1)) {
        trainer.run_phase1();
        finish(1);
    }
    for (int pass = 0; pass < cfg.train.repeat; ++pass) {
        if (has(2)) {
            trainer.run_phase2();
            finish(2);
        }
        if (has(3)) {
            trainer.run_phase3();
            finish(3);
        }
    }
    report.history = trainer.history();
    write_text_atomic(cfg.out_dir / "loss.csv", loss_csv(report.history));
    return report;
}

// Image files of an inference input: DIR/images/*.png when present, else DIR/*.png.
inline std::vector<fs::path> input_images(const fs::path& dir)
{
    if (!fs::is_directory(dir))
        throw std::runtime_error("input is not a directory: " + dir.string());
    return fs::is_directory(dir / "images") ? list_pngs(dir / "images") : list_pngs(dir);
}

struct InferJob {
    InferMode mode = InferMode::glnet_bidir;
    InferOptions options;
    bool coarse_to_fine = false;
    double tolerance = 0.1;
};

struct InferSummary {
    std::size_t written = 0;
    std::size_t failed = 0;
};

// One mask per input image (same file name) plus manifest.jsonl; a failing
// image is recorded in the manifest and the batch carries on.
inline InferSummary infer_dataset(const GLNet<float>& model, const GLNet<float>* coarse_model, const fs::path& input,
                                  const fs::path& out_dir, const InferJob& job, const LogFn& log = {})
{
    if (job.coarse_to_fine && !coarse_model)
        throw std::invalid_argument("coarse-to-fine needs a coarse model");
    if (job.options.check_weights)
        check_mode(model, job.mode);
    const auto files = input_images(input);
    fs::create_directories(out_dir);
    InferSummary sum;
    std::ostringstream manifest;
    for (const auto& f : files) {
        nlohmann::json line = {{"id", f.stem().string()}, {"mode", to_string(job.mode)}};
        try {
            const Image img = io::read_image(f);
            MemoryTracker::reset_peak();
            const auto idle = MemoryTracker::current();
            const auto t0 = std::chrono::steady_clock::now();
            Mask mask;
            if (job.coarse_to_fine) {
                auto r = coarse_to_fine(*coarse_model, model, img, job.mode, job.tolerance, job.options);
                line["box"] = r.box;
                line["window"] = r.fine.window;
                mask = std::move(r.fine.mask);
            } else {
                auto r = infer_image(model, img, job.mode, job.options);
                if (job.mode != InferMode::global_only)
                    line["grid"] = r.grid;
                mask = std::move(r.mask);
            }
            line["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            line["peak_bytes"] = MemoryTracker::peak();
            line["delta_bytes"] = MemoryTracker::peak() - idle;
            write_png_atomic(out_dir / f.filename(), mask);
            ++sum.written;
        } catch (const std::exception& e) {
            line["error"] = e.what();
            ++sum.failed;
            if (log)
                log(f.string() + ": " + e.what());
        }
        manifest << line.dump() << '\n';
    }
    write_text_atomic(out_dir / "manifest.jsonl", manifest.str());
    return sum;
}

struct EvalReport {
    std::string metric;
    double value = 0;
    std::size_t images = 0;
};

// Pairs prediction and ground-truth masks by file name.
inline EvalReport eval_dirs(const fs::path& pred_dir, const fs::path& gt_dir, const std::string& metric,
                            int num_classes, std::optional<int> ignore = std::nullopt)
{
    if (metric != "miou" && metric != "isic")
        throw std::invalid_argument("unknown metric: " + metric);
    const fs::path gt_masks = fs::is_directory(gt_dir / "masks") ? gt_dir / "masks" : gt_dir;
    const auto gts = list_pngs(gt_masks);
    std::vector<Mask> pred, gt;
    for (const auto& g : gts) {
        const auto p = pred_dir / g.filename();
        if (!fs::exists(p))
            throw std::runtime_error("no prediction for " + g.string());
        pred.push_back(io::read_mask(p));
        gt.push_back(io::read_mask(g));
    }
    EvalReport r{metric, 0, gts.size()};
    r.value = metric == "miou" ? miou(pred, gt, num_classes, ignore) : isic_score(pred, gt);
    return r;
}

} // namespace glnet
