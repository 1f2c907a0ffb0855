// glnet command-line entry point.
//
// Exit codes: 0 ok, 1 runtime failure, 2 usage or configuration error.
// GLNET_VERBOSE=0 silences progress messages (default 1).

#include "glnet/glnet.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

namespace {

using namespace glnet;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

int verbosity()
{
    const char* v = std::getenv("GLNET_VERBOSE");
    return v ? std::atoi(v) : 1;
}

void log_line(const std::string& s)
{
    if (verbosity() > 0)
        std::cerr << s << '\n';
}

RunConfig make_config(const std::string& path, const std::vector<std::string>& overrides)
{
    RunConfig cfg = path.empty() ? RunConfig{} : load_config(path);
    for (const auto& o : overrides)
        apply_override(cfg, o);
    cfg.validate();
    return cfg;
}

std::vector<int> parse_values(const std::string& s)
{
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        try {
            out.push_back(std::stoi(item));
        } catch (const std::exception&) {
            throw UsageError("bad --values entry: " + item);
        }
    if (out.empty())
        throw UsageError("--values is empty");
    return out;
}

int cmd_synthesize(const SynthSpec& spec, std::size_t n, std::size_t n_val, std::size_t n_test, const fs::path& out,
                   bool force)
{
    spec.validate();
    if (fs::exists(out) && !force)
        throw UsageError("output exists: " + out.string() + " (use --force)");
    auto tmp = out;
    tmp += ".partial";
    fs::remove_all(tmp);
    std::vector<std::pair<std::string, std::size_t>> counts{{"train", n}};
    if (n_val)
        counts.emplace_back("val", n_val);
    if (n_test)
        counts.emplace_back("test", n_test);
    generate_synthetic(spec, counts, tmp);
    if (fs::exists(out))
        fs::remove_all(out);
    fs::rename(tmp, out);
    log_line("wrote " + out.string());
    return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& phase)
{
    const auto report = train_run(cfg, phase, log_line);
    for (const auto& p : report.checkpoints)
        std::cout << p.string() << '\n';
    return 0;
}

int cmd_infer(const fs::path& checkpoint, const fs::path& input, const fs::path& out, const std::string& mode_name,
              int overlap, const std::string& blend, bool c2f, const fs::path& coarse_ckpt, double tolerance)
{
    auto model = load_checkpoint(checkpoint);
    std::optional<GLNet<float>> coarse;
    if (c2f)
        coarse = coarse_ckpt.empty() ? model : load_checkpoint(coarse_ckpt);
    InferJob job;
    job.mode = mode_name.empty() ? natural_mode(model) : parse_mode(mode_name);
    job.options.overlap = overlap;
    job.options.blend = parse_blend(blend);
    job.coarse_to_fine = c2f;
    job.tolerance = tolerance;
    const auto sum = infer_dataset(model, coarse ? &*coarse : nullptr, input, out, job, log_line);
    log_line("masks written: " + std::to_string(sum.written) + ", failed: " + std::to_string(sum.failed));
    if (sum.failed)
        throw std::runtime_error(std::to_string(sum.failed) + " image(s) failed; see manifest.jsonl");
    return 0;
}

int cmd_eval(const fs::path& pred, const fs::path& gt, const std::string& metric, int k, int ignore)
{
    const auto r = eval_dirs(pred, gt, metric, k, ignore >= 0 ? std::optional<int>(ignore) : std::nullopt);
    std::cout << nlohmann::json{{"metric", r.metric}, {"value", r.value}, {"images", r.images}}.dump() << '\n';
    return 0;
}

int cmd_sweep(RunConfig cfg, const std::string& axis, const std::vector<int>& values, const std::string& split,
              bool train)
{
    if (axis != "global_size" && axis != "patch_size")
        throw UsageError("--axis must be global_size or patch_size");
    const fs::path root = cfg.out_dir;
    std::vector<SweepEntry> entries;
    for (int v : values) {
        RunConfig c = cfg;
        (axis == "global_size" ? c.global_size : c.patch) = v;
        c.share.direction = ShareDirection::bidirectional;
        c.out_dir = root / (axis + "-" + std::to_string(v));
        RunConfig l = c;
        l.share.direction = ShareDirection::none;
        l.out_dir = c.out_dir / "local";
        if (train) {
            c.validate();
            if (!fs::exists(phase_checkpoint(c.out_dir, 3)))
                train_run(c, "all", log_line);
            if (!fs::exists(phase_checkpoint(l.out_dir, 2)))
                train_run(l, "all", log_line);
        }
        const std::string label = axis + "=" + std::to_string(v);
        entries.push_back({label, InferMode::global_only, v, phase_checkpoint(c.out_dir, 1)});
        entries.push_back({label, InferMode::local_only, v, phase_checkpoint(l.out_dir, 2)});
        entries.push_back({label, InferMode::glnet_g2l, v, phase_checkpoint(c.out_dir, 2)});
        entries.push_back({label, InferMode::glnet_bidir, v, phase_checkpoint(c.out_dir, 3)});
    }
    const auto data = load_dataset(cfg.data_root, split, cfg.arch.num_classes).load_all();
    InferOptions opt;
    opt.overlap = cfg.train.overlap;
    opt.blend = cfg.blend;
    const auto rows = sweep(entries, axis, data, opt);
    fs::create_directories(root);
    const auto plot = plot_data(rows);
    write_text_atomic(root / "tradeoff.csv", records_csv(rows));
    write_text_atomic(root / "tradeoff_plot.json", plot.dump(2) + "\n");
    write_text_atomic(root / "tradeoff.svg", tradeoff_svg(plot));
    std::cout << records_csv(rows);
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Global-local segmentation for ultra-high-resolution images"};
    app.require_subcommand(1);

    SynthSpec spec;
    std::size_t n = 20, n_val = 0, n_test = 5;
    fs::path synth_out;
    bool force = false;
    auto* syn = app.add_subcommand("synthesize", "generate the synthetic benchmark");
    syn->add_option("--out", synth_out, "output dataset root")->required();
    syn->add_option("--canvas", spec.canvas, "canvas side in pixels");
    syn->add_option("--n", n, "training images");
    syn->add_option("--n-val", n_val, "validation images");
    syn->add_option("--n-test", n_test, "test images");
    syn->add_option("--seed", spec.seed, "generator seed");
    syn->add_option("--patch", spec.min_patch, "patch size the data will be tiled with");
    syn->add_option("--blobs-per-zone", spec.blobs_per_zone);
    syn->add_option("--jaggedness", spec.jaggedness, "outline jag amplitude (px)");
    syn->add_option("--pore-fraction", spec.pore_fraction, "share of blob area turned into pores");
    syn->add_flag("--force", force, "replace an existing output directory");

    std::string config_path, phase = "all";
    std::vector<std::string> overrides;
    auto* tr = app.add_subcommand("train", "run training phases");
    tr->add_option("config", config_path, "key = value config file")->required();
    tr->add_option("--phase", phase, "1, 2, 3 or all")->check(CLI::IsMember({"1", "2", "3", "all"}));
    tr->add_option("--set", overrides, "key=value override (repeatable; wins over the file)");

    fs::path ckpt, input, out_dir, coarse_ckpt;
    std::string mode, blend = "average";
    int overlap = 16;
    bool c2f = false;
    double tolerance = 0.1;
    auto* inf = app.add_subcommand("infer", "segment a directory of images");
    inf->add_option("--checkpoint", ckpt)->required();
    inf->add_option("--input", input, "directory of PNGs (or a split dir with images/)")->required();
    inf->add_option("--out", out_dir)->required();
    inf->add_option("--mode", mode, "global-only, local-only, glnet-g2l or glnet-bidir (default: from checkpoint)");
    inf->add_option("--overlap", overlap);
    inf->add_option("--blend", blend, "average or center-priority");
    inf->add_flag("--coarse-to-fine", c2f, "two-stage: coarse global pass, relaxed box, fine pass");
    inf->add_option("--coarse-checkpoint", coarse_ckpt, "stage-one model (default: --checkpoint)");
    inf->add_option("--tolerance", tolerance, "box ratio tolerance");

    fs::path pred_dir, gt_dir;
    std::string metric = "miou";
    int num_classes = 3, ignore = -1;
    auto* ev = app.add_subcommand("eval", "score predicted masks");
    ev->add_option("--pred", pred_dir)->required();
    ev->add_option("--gt", gt_dir, "ground-truth masks (or a split dir with masks/)")->required();
    ev->add_option("--metric", metric)->check(CLI::IsMember({"miou", "isic"}));
    ev->add_option("--num-classes", num_classes);
    ev->add_option("--ignore", ignore, "class id left out of mIoU");

    std::string axis = "global_size", values_text, split = "test";
    bool sweep_train = false;
    auto* sw = app.add_subcommand("sweep", "accuracy vs peak-memory sweep");
    sw->add_option("config", config_path)->required();
    sw->add_option("--axis", axis)->check(CLI::IsMember({"global_size", "patch_size"}));
    sw->add_option("--values", values_text, "comma-separated sizes")->required();
    sw->add_option("--split", split);
    sw->add_flag("--train", sweep_train, "train configurations whose checkpoints are missing");
    sw->add_option("--set", overrides, "key=value override");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0)
            return app.exit(e);
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }

    try {
        if (*syn)
            return cmd_synthesize(spec, n, n_val, n_test, synth_out, force);
        if (*tr)
            return cmd_train(make_config(config_path, overrides), phase);
        if (*inf)
            return cmd_infer(ckpt, input, out_dir, mode, overlap, blend, c2f, coarse_ckpt, tolerance);
        if (*ev)
            return cmd_eval(pred_dir, gt_dir, metric, num_classes, ignore);
        if (*sw)
            return cmd_sweep(make_config(config_path, overrides), axis, parse_values(values_text), split,
                             sweep_train);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
