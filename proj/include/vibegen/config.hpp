#pragma once

// Plain-text run configuration: one `key = value` per line, `#` starts a
// comment. Every key must be known; command-line flags are applied on top
// of the file with the same keys.

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <string_view>

#include "vibegen/csv.hpp"
#include "vibegen/data.hpp"
#include "vibegen/errors.hpp"
#include "vibegen/training.hpp"

namespace vibegen {

struct RunConfig {
    TrainConfig train;
    std::filesystem::path data;
    std::filesystem::path out;
    std::filesystem::path checkpoint;
    std::string format = "auto";
    std::size_t count = 256;  // generate
    std::size_t num = 256;    // evaluate
    std::size_t bins = 100;   // evaluate
    bool aligned_windows = false;
};

namespace detail {

inline std::uint64_t parse_uint(const std::string& key, std::string_view v) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size() || v.empty())
        throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + std::string(v) + "'");
    return out;
}

inline double parse_real(const std::string& key, std::string_view v) {
    double out = 0.0;
    if (!parse_double(v, out) || !std::isfinite(out))
        throw ConfigError("config key '" + key + "': expected a number, got '" + std::string(v) + "'");
    return out;
}

inline bool parse_bool(const std::string& key, std::string_view v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + std::string(v) + "'");
}

using Setter = std::function<void(RunConfig&, const std::string&, std::string_view)>;
using Getter = std::function<std::string(const RunConfig&)>;

struct KeyInfo {
    Setter set;
    Getter get;
};

inline const std::map<std::string, KeyInfo>& config_keys() {
    static const std::map<std::string, KeyInfo> keys = [] {
        std::map<std::string, KeyInfo> k;
        auto real = [&](const char* name, double TrainConfig::*field) {
            k[name] = {[field](RunConfig& c, const std::string& key, std::string_view v) { c.train.*field = parse_real(key, v); },
                       [field](const RunConfig& c) { return format_number(c.train.*field); }};
        };
        auto count = [&](const char* name, std::size_t TrainConfig::*field) {
            k[name] = {[field](RunConfig& c, const std::string& key, std::string_view v) { c.train.*field = parse_uint(key, v); },
                       [field](const RunConfig& c) { return std::to_string(c.train.*field); }};
        };
        auto path = [&](const char* name, std::filesystem::path RunConfig::*field) {
            k[name] = {[field](RunConfig& c, const std::string&, std::string_view v) { c.*field = std::string(v); },
                       [field](const RunConfig& c) { return (c.*field).string(); }};
        };
        auto run_count = [&](const char* name, std::size_t RunConfig::*field) {
            k[name] = {[field](RunConfig& c, const std::string& key, std::string_view v) { c.*field = parse_uint(key, v); },
                       [field](const RunConfig& c) { return std::to_string(c.*field); }};
        };
        real("learning_rate", &TrainConfig::learning_rate);
        count("epochs", &TrainConfig::epochs);
        count("batch_size", &TrainConfig::batch_size);
        count("critic_iters_per_gen", &TrainConfig::critic_iters_per_gen);
        real("clip_value", &TrainConfig::clip_value);
        real("dropout_rate", &TrainConfig::dropout_rate);
        real("noise_sigma0_fraction", &TrainConfig::noise_sigma0_fraction);
        real("beta1", &TrainConfig::beta1);
        real("beta2", &TrainConfig::beta2);
        real("weight_decay", &TrainConfig::weight_decay);
        real("adam_eps", &TrainConfig::adam_eps);
        count("eval_samples_per_epoch", &TrainConfig::eval_samples_per_epoch);
        count("windows_per_epoch", &TrainConfig::windows_per_epoch);
        k["seed"] = {[](RunConfig& c, const std::string& key, std::string_view v) { c.train.seed = parse_uint(key, v); },
                     [](const RunConfig& c) { return std::to_string(c.train.seed); }};
        path("data", &RunConfig::data);
        path("out", &RunConfig::out);
        path("checkpoint", &RunConfig::checkpoint);
        k["format"] = {[](RunConfig& c, const std::string&, std::string_view v) {
                           parse_signal_format(v);
                           c.format = std::string(v);
                       },
                       [](const RunConfig& c) { return c.format; }};
        run_count("count", &RunConfig::count);
        run_count("num", &RunConfig::num);
        run_count("bins", &RunConfig::bins);
        k["aligned_windows"] = {[](RunConfig& c, const std::string& key, std::string_view v) { c.aligned_windows = parse_bool(key, v); },
                                [](const RunConfig& c) { return std::string(c.aligned_windows ? "true" : "false"); }};
        return k;
    }();
    return keys;
}

}  // namespace detail

inline void apply_config_value(RunConfig& cfg, const std::string& key, std::string_view value) {
    const auto& keys = detail::config_keys();
    const auto it = keys.find(key);
    if (it == keys.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second.set(cfg, key, detail::trim(value));
}

inline void apply_config_text(RunConfig& cfg, std::string_view text, const std::string& origin = "config") {
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(start, end - start);
        start = end + 1;
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
        const std::string key(detail::trim(line.substr(0, eq)));
        try {
            apply_config_value(cfg, key, line.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
}

inline void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path.string());
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    apply_config_text(cfg, text, path.string());
}

/// Every key with its resolved value, one `key = value` per line.
inline std::string render_config(const RunConfig& cfg) {
    std::string out;
    for (const auto& [key, info] : detail::config_keys()) out += key + " = " + info.get(cfg) + "\n";
    return out;
}

inline void write_resolved_config(const RunConfig& cfg, const std::filesystem::path& dir) {
    std::ofstream out(dir / "resolved_config.txt", std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write resolved_config.txt in " + dir.string());
    out << render_config(cfg);
}

}  // namespace vibegen
