#pragma once

#include "glnet/model.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace glnet {

// Archive layout: magic line, decimal header length line, JSON header, then
// every parameter as little-endian float32 in header order.
inline constexpr char checkpoint_magic[] = "GLNETCKPT1";

inline std::string to_string(ShareDepth d) { return d == ShareDepth::deep ? "deep" : "shallow"; }

inline ShareDepth parse_depth(const std::string& s)
{
    if (s == "deep")
        return ShareDepth::deep;
    if (s == "shallow")
        return ShareDepth::shallow;
    throw std::invalid_argument("unknown sharing depth: " + s);
}

inline nlohmann::json arch_to_json(const BranchConfig& c)
{
    return {{"num_classes", c.num_classes},
            {"stem_channels", c.stem_channels},
            {"stage_channels", c.stage_channels},
            {"fpn_channels", c.fpn_channels}};
}

inline BranchConfig arch_from_json(const nlohmann::json& j)
{
    BranchConfig c;
    c.num_classes = j.at("num_classes").get<int>();
    c.stem_channels = j.at("stem_channels").get<int>();
    c.stage_channels = j.at("stage_channels").get<std::vector<int>>();
    c.fpn_channels = j.at("fpn_channels").get<int>();
    c.validate();
    return c;
}

inline nlohmann::json checkpoint_header(GLNet<float>& m)
{
    nlohmann::json params = nlohmann::json::array();
    for (auto* p : m.all_params())
        params.push_back({{"name", p->name}, {"shape", {p->value.channels(), p->value.height(), p->value.width()}}});
    return {{"arch", arch_to_json(m.local_config)},
            {"global_size", m.global_size()},
            {"patch_size", m.patch_size()},
            {"sharing", to_string(m.plan.direction)},
            {"share_depth", to_string(m.plan.depth)},
            {"shallow_tap", m.plan.shallow_tap},
            {"lambda", m.head.lambda()},
            {"phase", static_cast<int>(m.phase)},
            {"params", params}};
}

inline void save_checkpoint(GLNet<float>& m, std::ostream& out)
{
    const std::string header = checkpoint_header(m).dump();
    out << checkpoint_magic << "\n" << header.size() << "\n" << header;
    static_assert(sizeof(float) == 4);
    for (auto* p : m.all_params()) {
        for (float v : p->value.values()) {
            std::uint32_t bits;
            std::memcpy(&bits, &v, 4);
            const unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                                        static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
            out.write(reinterpret_cast<const char*>(b), 4);
        }
    }
    if (!out)
        throw std::runtime_error("failed writing checkpoint");
}

// Writes via a ".partial" sibling and renames on success.
inline void save_checkpoint(GLNet<float>& m, const std::filesystem::path& path)
{
    auto tmp = path;
    tmp += ".partial";
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f)
            throw std::runtime_error("cannot write " + tmp.string());
        save_checkpoint(m, f);
    }
    std::filesystem::rename(tmp, path);
}

inline GLNet<float> load_checkpoint(std::istream& in, const std::string& what = "checkpoint")
{
    std::string magic;
    std::getline(in, magic);
    if (magic != checkpoint_magic)
        throw std::runtime_error(what + ": not a glnet checkpoint");
    std::string len_line;
    std::getline(in, len_line);
    std::size_t len = 0;
    try {
        len = std::stoull(len_line);
    } catch (const std::exception&) {
        throw std::runtime_error(what + ": corrupt header length");
    }
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in)
        throw std::runtime_error(what + ": truncated header");
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(text);
    } catch (const std::exception& e) {
        throw std::runtime_error(what + ": corrupt header: " + e.what());
    }

    SharePlan plan;
    plan.direction = parse_direction(h.at("sharing").get<std::string>());
    plan.depth = parse_depth(h.at("share_depth").get<std::string>());
    plan.shallow_tap = h.at("shallow_tap").get<int>();
    GLNet<float> m(arch_from_json(h.at("arch")), h.at("global_size").get<int>(), h.at("patch_size").get<int>(), plan,
                   h.at("lambda").get<double>());
    const int phase = h.at("phase").get<int>();
    if (phase < 0 || phase > 3)
        throw std::runtime_error(what + ": invalid phase marker");
    m.phase = static_cast<Phase>(phase);

    const auto& listed = h.at("params");
    auto params = m.all_params();
    if (listed.size() != params.size())
        throw std::runtime_error(what + ": parameter count mismatch");
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto* p = params[k];
        const auto shape = listed[k].at("shape").get<std::vector<int>>();
        if (listed[k].at("name").get<std::string>() != p->name || shape.size() != 3 ||
            Shape{shape[0], shape[1], shape[2]} != p->value.shape())
            throw std::runtime_error(what + ": parameter layout mismatch at " + p->name);
        for (auto& v : p->value.values()) {
            unsigned char b[4];
            in.read(reinterpret_cast<char*>(b), 4);
            if (!in)
                throw std::runtime_error(what + ": truncated parameter data");
            const std::uint32_t bits = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
            std::memcpy(&v, &bits, 4);
        }
    }
    if (in.peek() != std::char_traits<char>::eof())
        throw std::runtime_error(what + ": trailing bytes");
    return m;
}

inline GLNet<float> load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw std::runtime_error("cannot open checkpoint " + path.string());
    return load_checkpoint(f, path.string());
}

} // namespace glnet
