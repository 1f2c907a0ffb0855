#pragma once

#include "glnet/checkpoint.hpp"
#include "glnet/data.hpp"
#include "glnet/inference.hpp"
#include "glnet/metrics.hpp"
#include "glnet/tensor.hpp"
#include "glnet/training.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace glnet {

struct MemoryReport {
    std::size_t peak_bytes = 0;  // tracker high-water mark, resident weights included
    std::size_t idle_bytes = 0;  // tracked bytes live before the measured run
    std::size_t delta_bytes = 0; // peak - idle: transient working set
    std::optional<std::size_t> rss_hwm_bytes;
};

// Process resident-set high-water mark, reset first. Linux only.
class RssProbe {
public:
    static bool available() { return std::filesystem::exists("/proc/self/clear_refs"); }

    static void reset()
    {
        std::ofstream f("/proc/self/clear_refs");
        if (!f)
            throw std::runtime_error("unsupported platform: cannot reset resident-set high-water mark");
        f << "5";
    }

    static std::size_t high_water_bytes()
    {
        std::ifstream f("/proc/self/status");
        std::string line;
        while (std::getline(f, line))
            if (line.rfind("VmHWM:", 0) == 0) {
                std::istringstream ss(line.substr(6));
                std::size_t kb = 0;
                ss >> kb;
                return kb * 1024;
            }
        throw std::runtime_error("unsupported platform: no VmHWM in /proc/self/status");
    }
};

// Protocol: one warm-up call (excluded), then one measured call. The thunk
// must run gradient-free inference at batch size 1, and the process should
// otherwise be idle.
inline MemoryReport measure_peak_memory(const std::function<void()>& thunk, bool with_rss = false)
{
    thunk();
    MemoryReport r;
    if (with_rss)
        RssProbe::reset();
    r.idle_bytes = MemoryTracker::current();
    MemoryTracker::reset_peak();
    thunk();
    r.peak_bytes = MemoryTracker::peak();
    r.delta_bytes = r.peak_bytes - r.idle_bytes;
    if (with_rss)
        r.rss_hwm_bytes = RssProbe::high_water_bytes();
    if (r.peak_bytes == 0)
        throw std::runtime_error("unsupported platform: memory probe reported nothing");
    return r;
}

struct EvalResult {
    double miou = 0;
    std::size_t peak_bytes = 0;  // max over images
    std::size_t delta_bytes = 0; // max over images
    double seconds = 0;          // total inference wall time
    std::vector<Mask> masks;
};

template <typename T>
EvalResult evaluate(const GLNet<T>& model, const std::vector<Sample>& data, InferMode mode,
                    const InferOptions& opt = {}, bool profile = false, bool keep_masks = false)
{
    ConfusionMatrix cm(model.num_classes());
    EvalResult r;
    for (const auto& s : data) {
        Mask pred;
        const auto t0 = std::chrono::steady_clock::now();
        if (profile) {
            auto mem = measure_peak_memory([&] { pred = infer_image(model, s.image, mode, opt).mask; });
            r.peak_bytes = std::max(r.peak_bytes, mem.peak_bytes);
            r.delta_bytes = std::max(r.delta_bytes, mem.delta_bytes);
        } else {
            pred = infer_image(model, s.image, mode, opt).mask;
        }
        r.seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        cm.add(pred, s.mask);
        if (keep_masks)
            r.masks.push_back(std::move(pred));
    }
    r.miou = cm.miou();
    return r;
}

struct TradeoffRecord {
    std::string config;
    std::string mode;
    std::string axis;
    int value = 0;
    std::optional<double> miou;           // empty for skipped rows
    std::optional<std::size_t> peak_bytes;
    std::optional<double> seconds;
    std::string skipped; // reason, empty when measured
};

inline void to_json(nlohmann::json& j, const TradeoffRecord& r)
{
    j = {{"config", r.config}, {"mode", r.mode}, {"axis", r.axis}, {"value", r.value}};
    j["miou"] = r.miou ? nlohmann::json(*r.miou) : nlohmann::json(nullptr);
    j["peak_bytes"] = r.peak_bytes ? nlohmann::json(*r.peak_bytes) : nlohmann::json(nullptr);
    j["seconds"] = r.seconds ? nlohmann::json(*r.seconds) : nlohmann::json(nullptr);
    if (!r.skipped.empty())
        j["skipped"] = r.skipped;
}

// Measured rows by memory ascending (ties by config, mode, value); skipped rows last.
inline void sort_records(std::vector<TradeoffRecord>& rows)
{
    std::stable_sort(rows.begin(), rows.end(), [](const TradeoffRecord& a, const TradeoffRecord& b) {
        if (a.peak_bytes.has_value() != b.peak_bytes.has_value())
            return a.peak_bytes.has_value();
        if (a.peak_bytes && *a.peak_bytes != *b.peak_bytes)
            return *a.peak_bytes < *b.peak_bytes;
        return std::tie(a.config, a.mode, a.value) < std::tie(b.config, b.mode, b.value);
    });
}

struct SweepEntry {
    std::string config;
    InferMode mode = InferMode::glnet_bidir;
    int value = 0;
    std::filesystem::path checkpoint;
};

inline std::vector<TradeoffRecord> sweep(const std::vector<SweepEntry>& entries, const std::string& axis,
                                         const std::vector<Sample>& data, const InferOptions& opt = {})
{
    if (axis != "global_size" && axis != "patch_size")
        throw std::invalid_argument("unknown sweep axis: " + axis);
    std::vector<TradeoffRecord> rows;
    for (const auto& e : entries) {
        TradeoffRecord r{e.config, to_string(e.mode), axis, e.value, {}, {}, {}, {}};
        if (!std::filesystem::exists(e.checkpoint)) {
            r.skipped = "missing checkpoint " + e.checkpoint.string();
            rows.push_back(r);
            continue;
        }
        try {
            auto model = load_checkpoint(e.checkpoint);
            const auto res = evaluate(model, data, e.mode, opt, true);
            r.miou = res.miou;
            r.peak_bytes = res.peak_bytes;
            r.seconds = res.seconds;
        } catch (const std::exception& ex) {
            r.skipped = ex.what();
        }
        rows.push_back(r);
    }
    sort_records(rows);
    return rows;
}

inline std::string records_csv(const std::vector<TradeoffRecord>& rows)
{
    std::ostringstream out;
    out << "config,mode,axis,value,miou,peak_bytes,seconds\n";
    char buf[64];
    for (const auto& r : rows) {
        out << r.config << ',' << r.mode << ',' << r.axis << ',' << r.value << ',';
        if (r.miou) {
            std::snprintf(buf, sizeof buf, "%.6f", *r.miou);
            out << buf;
        } else {
            out << "NA";
        }
        out << ',' << (r.peak_bytes ? std::to_string(*r.peak_bytes) : "NA") << ',';
        if (r.seconds) {
            std::snprintf(buf, sizeof buf, "%.4f", *r.seconds);
            out << buf;
        } else {
            out << "NA";
        }
        out << '\n';
    }
    return out.str();
}

// Points for the trade-off chart: measured rows only.
inline nlohmann::json plot_data(const std::vector<TradeoffRecord>& rows)
{
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& r : rows)
        if (r.miou && r.peak_bytes)
            pts.push_back({{"label", r.config + " " + std::to_string(r.value)},
                           {"mode", r.mode},
                           {"memory_mb", static_cast<double>(*r.peak_bytes) / (1024.0 * 1024.0)},
                           {"miou", *r.miou}});
    return {{"x", "peak memory (MB)"}, {"y", "mIoU"}, {"points", pts}};
}

// Static SVG scatter of a plot_data() document.
inline std::string tradeoff_svg(const nlohmann::json& plot)
{
    const double W = 640, H = 420, ml = 70, mr = 150, mt = 30, mb = 55;
    const auto& pts = plot.at("points");
    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    if (!pts.empty()) {
        xmin = ymin = std::numeric_limits<double>::max();
        xmax = ymax = std::numeric_limits<double>::lowest();
        for (const auto& p : pts) {
            xmin = std::min(xmin, p["memory_mb"].get<double>());
            xmax = std::max(xmax, p["memory_mb"].get<double>());
            ymin = std::min(ymin, p["miou"].get<double>());
            ymax = std::max(ymax, p["miou"].get<double>());
        }
        const double px = std::max(1e-3, (xmax - xmin) * 0.1), py = std::max(1e-3, (ymax - ymin) * 0.1);
        xmin -= px;
        xmax += px;
        ymin = std::max(0.0, ymin - py);
        ymax = std::min(1.0, ymax + py);
    }
    auto sx = [&](double v) { return ml + (v - xmin) / (xmax - xmin) * (W - ml - mr); };
    auto sy = [&](double v) { return H - mb - (v - ymin) / (ymax - ymin) * (H - mt - mb); };
    const std::map<std::string, std::string> colors = {{"global-only", "#1f77b4"},
                                                       {"local-only", "#2ca02c"},
                                                       {"glnet-g2l", "#ff7f0e"},
                                                       {"glnet-bidir", "#d62728"}};
    std::ostringstream o;
    char buf[256];
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    std::snprintf(buf, sizeof buf, "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n", ml, H - mb,
                  W - mr, H - mb);
    o << buf;
    std::snprintf(buf, sizeof buf, "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n", ml, mt, ml,
                  H - mb);
    o << buf;
    for (int i = 0; i <= 4; ++i) {
        const double xv = xmin + (xmax - xmin) * i / 4, yv = ymin + (ymax - ymin) * i / 4;
        std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">%.2f</text>\n", sx(xv),
                      H - mb + 16, xv);
        o << buf;
        std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\">%.3f</text>\n", ml - 6,
                      sy(yv) + 4, yv);
        o << buf;
    }
    o << "<text x=\"" << (ml + W - mr) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">"
      << plot.at("x").get<std::string>() << "</text>\n";
    o << "<text x=\"16\" y=\"" << (mt + H - mb) / 2 << "\" transform=\"rotate(-90 16 " << (mt + H - mb) / 2
      << ")\" text-anchor=\"middle\">" << plot.at("y").get<std::string>() << "</text>\n";
    for (const auto& p : pts) {
        const auto mode = p["mode"].get<std::string>();
        const auto it = colors.find(mode);
        std::snprintf(buf, sizeof buf, "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"5\" fill=\"%s\"/>\n",
                      sx(p["memory_mb"].get<double>()), sy(p["miou"].get<double>()),
                      it == colors.end() ? "#555555" : it->second.c_str());
        o << buf;
        std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\">%s</text>\n", sx(p["memory_mb"].get<double>()) + 7,
                      sy(p["miou"].get<double>()) - 6, p["label"].get<std::string>().c_str());
        o << buf;
    }
    int row = 0;
    for (const auto& [mode, color] : colors) {
        const double y = mt + 14 + 16 * row++;
        std::snprintf(buf, sizeof buf,
                      "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"5\" fill=\"%s\"/><text x=\"%.1f\" y=\"%.1f\">%s</text>\n",
                      W - mr + 20, y, color.c_str(), W - mr + 30, y + 4, mode.c_str());
        o << buf;
    }
    o << "</svg>\n";
    return o.str();
}

// Trains the full global/local pipeline and a stand-alone local model on
// `train`, and scores every inference mode on `test`.
struct AblationScores {
    double global_only = 0;
    double local_only = 0;
    double glnet_g2l = 0;
    double glnet_bidir = 0;
    double seconds = 0;

    double best_single() const { return std::max(global_only, local_only); }
};

inline AblationScores run_ablation(const std::vector<Sample>& train, const std::vector<Sample>& test,
                                   const BranchConfig& arch, int global_size, int patch, const TrainPlan& plan,
                                   const InferOptions& opt = {})
{
    const auto t0 = std::chrono::steady_clock::now();
    AblationScores s;
    GLNet<float> net(arch, global_size, patch, SharePlan{}, plan.loss.lambda);
    net.init(plan.seed);
    Trainer tr(net, train, plan);
    tr.run_phase1();
    s.global_only = evaluate(net, test, InferMode::global_only, opt).miou;
    tr.run_phase2();
    s.glnet_g2l = evaluate(net, test, InferMode::glnet_g2l, opt).miou;
    tr.run_phase3();
    s.glnet_bidir = evaluate(net, test, InferMode::glnet_bidir, opt).miou;

    SharePlan none;
    none.direction = ShareDirection::none;
    GLNet<float> local(arch, global_size, patch, none, plan.loss.lambda);
    local.init(plan.seed);
    Trainer tl(local, train, plan);
    tl.run_phase2();
    s.local_only = evaluate(local, test, InferMode::local_only, opt).miou;
    s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return s;
}

} // namespace glnet
