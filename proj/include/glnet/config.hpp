#pragma once

#include "glnet/branch.hpp"
#include "glnet/checkpoint.hpp"
#include "glnet/sharing.hpp"
#include "glnet/tiling.hpp"
#include "glnet/training.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace glnet {

// Thrown for anything the user got wrong in a config file or flag.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct RunConfig {
    std::filesystem::path data_root = "data";
    std::filesystem::path out_dir = "run";
    std::vector<int> phases{1, 2, 3};
    BranchConfig arch;
    int global_size = 128;
    int patch = 128;
    SharePlan share;
    TrainPlan train;
    BlendMode blend = BlendMode::average;
    int early_stop_patience = 0; // epochs without val mIoU gain; 0 = off
    bool c2f_crops = false;      // train on relaxed foreground boxes (fine stage)
    double c2f_tolerance = 0.1;

    void validate() const
    {
        arch.validate();
        train.validate();
        if (global_size <= 0 || patch <= 0)
            throw ConfigError("sizes must be positive");
        if (train.overlap < 0 || train.overlap >= patch)
            throw ConfigError("degenerate stride");
        (void)share.shared_taps(arch);
        if (early_stop_patience < 0)
            throw ConfigError("early_stop_patience must be >= 0");
    }
};

namespace detail {

inline std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(const std::string& key, const std::string& v)
{
    N out{};
    const auto* end = v.data() + v.size();
    auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc{} || ptr != end)
        throw ConfigError("bad value for " + key + ": '" + v + "'");
    return out;
}

template <typename N>
std::vector<N> parse_list(const std::string& key, const std::string& v)
{
    std::vector<N> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ','))
        out.push_back(parse_number<N>(key, trim(item)));
    if (out.empty())
        throw ConfigError("empty list for " + key);
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v)
{
    if (v == "1" || v == "true" || v == "yes" || v == "on")
        return true;
    if (v == "0" || v == "false" || v == "no" || v == "off")
        return false;
    throw ConfigError("bad boolean for " + key + ": '" + v + "'");
}

} // namespace detail

// Applies one key=value assignment.
inline void apply_setting(RunConfig& c, const std::string& key, const std::string& value)
{
    using namespace detail;
    const auto& v = value;
    auto i = [&] { return parse_number<int>(key, v); };
    auto d = [&] { return parse_number<double>(key, v); };
    try {
        if (key == "data_root")
            c.data_root = v;
        else if (key == "out_dir")
            c.out_dir = v;
        else if (key == "phases") {
            c.phases.clear();
            if (v == "all")
                c.phases = {1, 2, 3};
            else
                for (const char* p = v.c_str(); *p; ++p)
                    if (*p >= '1' && *p <= '3')
                        c.phases.push_back(*p - '0');
                    else if (*p != ',' && *p != ' ')
                        throw ConfigError("bad value for phases: '" + v + "'");
            if (c.phases.empty())
                throw ConfigError("bad value for phases: '" + v + "'");
        } else if (key == "epochs") {
            auto e = parse_list<int>(key, v);
            if (e.size() != 3)
                throw ConfigError("epochs needs three comma-separated counts");
            c.train.epochs = {e[0], e[1], e[2]};
        } else if (key == "epochs_phase1")
            c.train.epochs[0] = i();
        else if (key == "epochs_phase2")
            c.train.epochs[1] = i();
        else if (key == "epochs_phase3")
            c.train.epochs[2] = i();
        else if (key == "lr_global")
            c.train.lr_global = d();
        else if (key == "lr_local")
            c.train.lr_local = d();
        else if (key == "beta1")
            c.train.beta1 = d();
        else if (key == "beta2")
            c.train.beta2 = d();
        else if (key == "batch_size")
            c.train.batch_size = i();
        else if (key == "accum_period")
            c.train.accum_period = i();
        else if (key == "repeat")
            c.train.repeat = i();
        else if (key == "gamma")
            c.train.loss.gamma = d();
        else if (key == "lambda")
            c.train.loss.lambda = d();
        else if (key == "loss_weights") {
            auto w = parse_list<double>(key, v);
            if (w.size() != 3)
                throw ConfigError("loss_weights needs main,aux_local,aux_global");
            c.train.loss.weight_main = w[0];
            c.train.loss.weight_aux_local = w[1];
            c.train.loss.weight_aux_global = w[2];
        } else if (key == "patch")
            c.patch = i();
        else if (key == "overlap")
            c.train.overlap = i();
        else if (key == "global_size")
            c.global_size = i();
        else if (key == "seed")
            c.train.seed = parse_number<std::uint64_t>(key, v);
        else if (key == "num_classes")
            c.arch.num_classes = i();
        else if (key == "stem_channels")
            c.arch.stem_channels = i();
        else if (key == "channels")
            c.arch.stage_channels = parse_list<int>(key, v);
        else if (key == "fpn_channels")
            c.arch.fpn_channels = i();
        else if (key == "sharing")
            c.share.direction = parse_direction(v);
        else if (key == "share_depth")
            c.share.depth = parse_depth(v);
        else if (key == "shallow_tap")
            c.share.shallow_tap = i();
        else if (key == "patches_per_image")
            c.train.patches_per_image = i();
        else if (key == "blend")
            c.blend = parse_blend(v);
        else if (key == "early_stop_patience")
            c.early_stop_patience = i();
        else if (key == "c2f_crops")
            c.c2f_crops = parse_bool(key, v);
        else if (key == "c2f_tolerance")
            c.c2f_tolerance = d();
        else
            throw ConfigError("unknown config key: " + key);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(key + ": " + e.what());
    }
}

// "key=value" form used by command-line overrides.
inline void apply_override(RunConfig& c, const std::string& assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string::npos)
        throw ConfigError("override must look like key=value: " + assignment);
    apply_setting(c, detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
}

// UTF-8 key = value lines; '#' starts a comment.
inline RunConfig parse_config(std::istream& in, const std::string& origin = "config")
{
    RunConfig c;
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (auto hash = line.find('#'); hash != std::string::npos)
            line.erase(hash);
        line = detail::trim(line);
        if (line.empty())
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(n) + ": expected key = value");
        try {
            apply_setting(c, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(origin + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    return c;
}

inline RunConfig load_config(const std::filesystem::path& path)
{
    std::ifstream f(path);
    if (!f)
        throw ConfigError("cannot open config " + path.string());
    return parse_config(f, path.string());
}

} // namespace glnet
