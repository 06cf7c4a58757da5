#pragma once

#include <array>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dpn/adam.hpp"
#include "dpn/data.hpp"
#include "dpn/error.hpp"
#include "dpn/model.hpp"

namespace dpn {

/// Every knob of a training / inference run. Serialized as `key=value`
/// lines; each key doubles as a CLI flag name. Defaults are the full-scale
/// training setup (pretrained frozen encoder, 512x512 patches, N = 10,
/// Adam lr 1e-4 / betas 0.9, 0.999, 20000 iterations).
struct RunConfig {
    std::string profile = "paper";
    EncoderVariant encoder = EncoderVariant::pretrained_frozen;
    std::array<std::size_t, pyramid_levels> channels = vgg19_tap_channels;
    std::size_t kernel = 3;
    bool freeze_encoder = false;
    std::size_t fusion_width = 64;
    double bn_momentum = 0.9;
    double bn_epsilon = 1e-5;

    std::size_t patch = 512;
    std::size_t batch = 10;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_epsilon = 1e-8;
    std::uint64_t iters = 20000;
    std::uint64_t seed = 0;
    std::uint64_t checkpoint_every = 1000;

    std::string pretrained;
    std::string data;
    std::string run_dir = "run";
    std::string resume;

    std::size_t synth_scenes = 0;
    std::size_t synth_size = 64;
    double synth_coverage = 0.35;
    double synth_jitter = 0.15;
    Terrain synth_terrain = Terrain::textured;
    std::uint64_t synth_seed = 1000;

    NormalizationSpec norm;

    ModelConfig model_config() const {
        ModelConfig m;
        m.encoder.variant = encoder;
        m.encoder.channels = channels;
        m.encoder.kernel = kernel;
        m.encoder.freeze = freeze_encoder;
        m.generator.fusion_width = fusion_width;
        m.bn_momentum = bn_momentum;
        m.bn_epsilon = bn_epsilon;
        return m;
    }

    AdamConfig adam_config() const { return {lr, beta1, beta2, adam_epsilon}; }
};

/// Full-scale setup: the defaults above.
inline RunConfig paper_profile() { return RunConfig{}; }

/// Small CPU setup used by tests: custom encoder, 64x64 patches, N = 4.
inline RunConfig desk_profile() {
    RunConfig c;
    c.profile = "desk";
    c.encoder = EncoderVariant::random5;
    c.channels = {8, 16, 32, 64, 64};
    c.fusion_width = 32;
    c.patch = 64;
    c.batch = 4;
    // Ten times the full-scale rate: the small random encoder trains from scratch
    // and needs to converge within a few hundred steps.
    c.lr = 1e-3;
    c.iters = 300;
    c.checkpoint_every = 100;
    c.synth_scenes = 8;
    c.synth_size = 64;
    return c;
}

inline RunConfig profile_config(const std::string& name) {
    if (name == "paper") return paper_profile();
    if (name == "desk") return desk_profile();
    throw ConfigError("unknown profile '" + name + "' (expected paper or desk)");
}

namespace detail {

inline std::string fmt_double(double v) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline double parse_double(const std::string& key, const std::string& s) {
    double v = 0;
    auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ConfigError(key + ": not a number: '" + s + "'");
    return v;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& s) {
    std::uint64_t v = 0;
    auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size())
        throw ConfigError(key + ": not a non-negative integer: '" + s + "'");
    return v;
}

inline bool parse_bool(const std::string& key, const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError(key + ": expected true or false, got '" + s + "'");
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');) out.push_back(item);
    return out;
}

template <std::size_t N, typename F>
auto parse_list(const std::string& key, const std::string& s, F parse) {
    const auto items = split_list(s);
    if (items.size() != N) throw ConfigError(key + ": expected " + std::to_string(N) + " comma-separated values");
    std::array<decltype(parse(key, items[0])), N> out{};
    for (std::size_t i = 0; i < N; ++i) out[i] = parse(key, items[i]);
    return out;
}

template <typename A, typename F>
std::string join(const A& a, F fmt) {
    std::string out;
    for (std::size_t i = 0; i < a.size(); ++i) out += (i ? "," : "") + fmt(a[i]);
    return out;
}

struct Field {
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

inline const std::vector<std::pair<std::string, Field>>& fields() {
    using S = const std::string&;
    auto u = [](std::size_t v) { return std::to_string(v); };
    static const std::vector<std::pair<std::string, Field>> table = {
        {"profile", {[](const RunConfig& c) { return c.profile; }, [](RunConfig& c, S v) { c.profile = v; }}},
        {"encoder", {[](const RunConfig& c) { return std::string(to_string(c.encoder)); },
                     [](RunConfig& c, S v) { c.encoder = parse_encoder_variant(v); }}},
        {"channels", {[u](const RunConfig& c) { return join(c.channels, u); },
                      [](RunConfig& c, S v) {
                          auto a = parse_list<pyramid_levels>("channels", v, parse_uint);
                          for (std::size_t i = 0; i < a.size(); ++i) c.channels[i] = a[i];
                      }}},
        {"kernel", {[](const RunConfig& c) { return std::to_string(c.kernel); },
                    [](RunConfig& c, S v) { c.kernel = parse_uint("kernel", v); }}},
        {"freeze_encoder", {[](const RunConfig& c) { return std::string(c.freeze_encoder ? "true" : "false"); },
                            [](RunConfig& c, S v) { c.freeze_encoder = parse_bool("freeze_encoder", v); }}},
        {"fusion_width", {[](const RunConfig& c) { return std::to_string(c.fusion_width); },
                          [](RunConfig& c, S v) { c.fusion_width = parse_uint("fusion_width", v); }}},
        {"bn_momentum", {[](const RunConfig& c) { return fmt_double(c.bn_momentum); },
                         [](RunConfig& c, S v) { c.bn_momentum = parse_double("bn_momentum", v); }}},
        {"bn_epsilon", {[](const RunConfig& c) { return fmt_double(c.bn_epsilon); },
                        [](RunConfig& c, S v) { c.bn_epsilon = parse_double("bn_epsilon", v); }}},
        {"patch", {[](const RunConfig& c) { return std::to_string(c.patch); },
                   [](RunConfig& c, S v) { c.patch = parse_uint("patch", v); }}},
        {"batch", {[](const RunConfig& c) { return std::to_string(c.batch); },
                   [](RunConfig& c, S v) { c.batch = parse_uint("batch", v); }}},
        {"lr", {[](const RunConfig& c) { return fmt_double(c.lr); },
                [](RunConfig& c, S v) { c.lr = parse_double("lr", v); }}},
        {"beta1", {[](const RunConfig& c) { return fmt_double(c.beta1); },
                   [](RunConfig& c, S v) { c.beta1 = parse_double("beta1", v); }}},
        {"beta2", {[](const RunConfig& c) { return fmt_double(c.beta2); },
                   [](RunConfig& c, S v) { c.beta2 = parse_double("beta2", v); }}},
        {"adam_epsilon", {[](const RunConfig& c) { return fmt_double(c.adam_epsilon); },
                          [](RunConfig& c, S v) { c.adam_epsilon = parse_double("adam_epsilon", v); }}},
        {"iters", {[](const RunConfig& c) { return std::to_string(c.iters); },
                   [](RunConfig& c, S v) { c.iters = parse_uint("iters", v); }}},
        {"seed", {[](const RunConfig& c) { return std::to_string(c.seed); },
                  [](RunConfig& c, S v) { c.seed = parse_uint("seed", v); }}},
        {"checkpoint_every", {[](const RunConfig& c) { return std::to_string(c.checkpoint_every); },
                              [](RunConfig& c, S v) { c.checkpoint_every = parse_uint("checkpoint_every", v); }}},
        {"pretrained", {[](const RunConfig& c) { return c.pretrained; }, [](RunConfig& c, S v) { c.pretrained = v; }}},
        {"data", {[](const RunConfig& c) { return c.data; }, [](RunConfig& c, S v) { c.data = v; }}},
        {"run_dir", {[](const RunConfig& c) { return c.run_dir; }, [](RunConfig& c, S v) { c.run_dir = v; }}},
        {"resume", {[](const RunConfig& c) { return c.resume; }, [](RunConfig& c, S v) { c.resume = v; }}},
        {"synth_scenes", {[](const RunConfig& c) { return std::to_string(c.synth_scenes); },
                          [](RunConfig& c, S v) { c.synth_scenes = parse_uint("synth_scenes", v); }}},
        {"synth_size", {[](const RunConfig& c) { return std::to_string(c.synth_size); },
                        [](RunConfig& c, S v) { c.synth_size = parse_uint("synth_size", v); }}},
        {"synth_coverage", {[](const RunConfig& c) { return fmt_double(c.synth_coverage); },
                            [](RunConfig& c, S v) { c.synth_coverage = parse_double("synth_coverage", v); }}},
        {"synth_jitter", {[](const RunConfig& c) { return fmt_double(c.synth_jitter); },
                          [](RunConfig& c, S v) { c.synth_jitter = parse_double("synth_jitter", v); }}},
        {"synth_terrain", {[](const RunConfig& c) { return std::string(to_string(c.synth_terrain)); },
                           [](RunConfig& c, S v) { c.synth_terrain = parse_terrain(v); }}},
        {"synth_seed", {[](const RunConfig& c) { return std::to_string(c.synth_seed); },
                        [](RunConfig& c, S v) { c.synth_seed = parse_uint("synth_seed", v); }}},
        {"mean", {[](const RunConfig& c) { return join(c.norm.mean, fmt_double); },
                  [](RunConfig& c, S v) { c.norm.mean = parse_list<3>("mean", v, parse_double); }}},
        {"scale", {[](const RunConfig& c) { return fmt_double(c.norm.scale); },
                   [](RunConfig& c, S v) { c.norm.scale = parse_double("scale", v); }}},
    };
    return table;
}

} // namespace detail

inline std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& [k, _] : detail::fields()) keys.push_back(k);
    return keys;
}

inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
    for (const auto& [k, f] : detail::fields())
        if (k == key) return f.set(c, value);
    throw ConfigError("unknown config key '" + key + "'");
}

inline std::string get_config_value(const RunConfig& c, const std::string& key) {
    for (const auto& [k, f] : detail::fields())
        if (k == key) return f.get(c);
    throw ConfigError("unknown config key '" + key + "'");
}

inline std::string format_config(const RunConfig& c) {
    std::string out;
    for (const auto& [k, f] : detail::fields()) out += k + "=" + f.get(c) + "\n";
    return out;
}

/// Parses `key=value` lines (blank lines and `#` comments ignored) on top of
/// the profile named by a `profile=` line, or the paper profile if absent.
inline RunConfig parse_config(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> kv;
    std::istringstream in(text);
    std::size_t lineno = 0;
    for (std::string line; std::getline(in, line);) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
        kv.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }
    RunConfig c;
    for (const auto& [k, v] : kv)
        if (k == "profile") c = profile_config(v);
    for (const auto& [k, v] : kv) set_config_value(c, k, v);
    return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path.string() + ": cannot read config");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

inline void save_config(const std::filesystem::path& path, const RunConfig& c) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError(path.string() + ": cannot write config");
    out << format_config(c);
}

} // namespace dpn
