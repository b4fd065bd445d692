#pragma once

// Single-channel vibration record and the random window sampler that feeds
// real batches to the critic. Samples are served raw: nothing in this module
// rescales, detrends or filters the record.

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "vibegen/errors.hpp"
#include "vibegen/tensor.hpp"

namespace vibegen {

inline constexpr std::size_t kWindowLength = 1024;
inline constexpr double kDefaultSampleRate = 1024.0;

struct SignalDataset {
    std::vector<double> samples;
    double sample_rate = kDefaultSampleRate;
    std::filesystem::path source;

    std::size_t size() const { return samples.size(); }
};

enum class SignalFormat { automatic, csv, f32le, f64le };

inline SignalFormat parse_signal_format(std::string_view s) {
    if (s == "auto") return SignalFormat::automatic;
    if (s == "csv") return SignalFormat::csv;
    if (s == "f32le" || s == "f32") return SignalFormat::f32le;
    if (s == "f64le" || s == "f64") return SignalFormat::f64le;
    throw ConfigError("unknown signal format '" + std::string(s) + "' (auto|csv|f32le|f64le)");
}

inline void validate_dataset(const SignalDataset& ds, std::size_t window = kWindowLength) {
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
        if (!std::isfinite(ds.samples[i])) throw DataError("non-finite sample in record", i);
    if (ds.samples.size() < window)
        throw DatasetTooSmallError("record has " + std::to_string(ds.samples.size()) + " samples, need at least " +
                                   std::to_string(window));
}

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline bool parse_double(std::string_view s, double& out) {
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size();
}

template <class F>
std::vector<double> read_raw(const std::filesystem::path& path) {
    using Bits = std::conditional_t<sizeof(F) == 4, std::uint32_t, std::uint64_t>;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open signal file: " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() % sizeof(F) != 0)
        throw FormatError("raw signal size is not a multiple of " + std::to_string(sizeof(F)) + " bytes",
                          bytes.size() - bytes.size() % sizeof(F));
    std::vector<double> out(bytes.size() / sizeof(F));
    for (std::size_t i = 0; i < out.size(); ++i) {
        Bits v = 0;
        for (std::size_t k = 0; k < sizeof(F); ++k)
            v |= Bits(static_cast<std::uint8_t>(bytes[i * sizeof(F) + k])) << (8 * k);
        out[i] = double(std::bit_cast<F>(v));
    }
    return out;
}

inline std::vector<double> read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open signal file: " + path.string());
    std::vector<double> out;
    std::string line;
    std::size_t line_no = 0;
    bool seen_content = false;
    while (std::getline(in, line)) {
        ++line_no;
        const auto field = trim(line);
        if (field.empty()) continue;
        double v = 0.0;
        if (!parse_double(field, v)) {
            // A single non-numeric first line is a header.
            if (!seen_content) {
                seen_content = true;
                continue;
            }
            throw ParseError("non-numeric value '" + std::string(field) + "'", line_no);
        }
        seen_content = true;
        out.push_back(v);
    }
    return out;
}

}  // namespace detail

/// Loads a record. CSV is one value per line (an optional header line is
/// skipped); raw formats are consecutive little-endian IEEE-754 values.
/// `automatic` picks the format from the extension (.csv, .f32, .f64).
inline SignalDataset load_signal(const std::filesystem::path& path, SignalFormat format = SignalFormat::automatic,
                                 double sample_rate = kDefaultSampleRate) {
    if (format == SignalFormat::automatic) {
        const auto ext = path.extension().string();
        if (ext == ".csv" || ext == ".txt") format = SignalFormat::csv;
        else if (ext == ".f32") format = SignalFormat::f32le;
        else if (ext == ".f64") format = SignalFormat::f64le;
        else throw ConfigError("cannot infer signal format from extension '" + ext + "' (use .csv, .f32 or .f64)");
    }
    SignalDataset ds;
    ds.source = path;
    ds.sample_rate = sample_rate;
    switch (format) {
        case SignalFormat::csv: ds.samples = detail::read_csv(path); break;
        case SignalFormat::f32le: ds.samples = detail::read_raw<float>(path); break;
        case SignalFormat::f64le: ds.samples = detail::read_raw<double>(path); break;
        case SignalFormat::automatic: break;
    }
    validate_dataset(ds);
    return ds;
}

template <class T>
struct WindowBatch {
    Tensor<T> tensor;                  // (batch, 1, window)
    std::vector<std::size_t> offsets;  // start index of each window in the record
};

/// Copies `batch` windows whose start offsets are i.i.d. uniform on
/// [0, len - window], sampling with replacement.
template <class T, class Rng>
WindowBatch<T> sample_windows(const SignalDataset& ds, std::size_t batch, Rng& rng,
                              std::size_t window = kWindowLength) {
    if (batch < 1) throw ConfigError("sample_windows: batch must be >= 1");
    if (ds.size() < window)
        throw DatasetTooSmallError("record has " + std::to_string(ds.size()) + " samples, need at least " +
                                   std::to_string(window));
    std::uniform_int_distribution<std::size_t> pick(0, ds.size() - window);
    WindowBatch<T> out{Tensor<T>(batch, 1, window), std::vector<std::size_t>(batch)};
    for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t o = pick(rng);
        out.offsets[b] = o;
        auto row = out.tensor.row(b, 0);
        for (std::size_t t = 0; t < window; ++t) row[t] = T(ds.samples[o + t]);
    }
    return out;
}

struct SignalStats {
    double mean = 0.0;
    double std = 0.0;  // population (divide by N)
    double min = 0.0;
    double max = 0.0;
};

/// Two-pass mean and population standard deviation.
inline SignalStats dataset_stats(std::span<const double> x) {
    if (x.empty()) throw DatasetTooSmallError("dataset_stats: empty record");
    SignalStats s;
    double sum = 0.0;
    s.min = s.max = x[0];
    for (double v : x) {
        sum += v;
        s.min = std::min(s.min, v);
        s.max = std::max(s.max, v);
    }
    s.mean = sum / double(x.size());
    double sq = 0.0;
    for (double v : x) sq += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(sq / double(x.size()));
    return s;
}

inline SignalStats dataset_stats(const SignalDataset& ds) { return dataset_stats(std::span<const double>(ds.samples)); }

// ---------------------------------------------------------------------------
// Synthetic stand-in record

/// Sum of sinusoids plus white Gaussian noise. Component frequencies are
/// fixed; phases are uniform on [0, 2pi) drawn from the seed in component
/// order, followed by the noise samples, all from one mt19937_64 stream.
struct SynthRecipe {
    std::vector<double> frequencies_hz{7.5, 18.25, 41.0, 87.5, 163.0};
    std::vector<double> amplitudes{0.25, 0.18, 0.12, 0.08, 0.05};
    double noise_std = 0.05;
    double sample_rate = kDefaultSampleRate;
};

inline std::vector<double> synthesize_signal(std::size_t samples, std::uint64_t seed, const SynthRecipe& recipe = {}) {
    if (recipe.frequencies_hz.size() != recipe.amplitudes.size())
        throw ConfigError("synth: frequency and amplitude lists differ in length");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
    std::vector<double> phases;
    for (std::size_t k = 0; k < recipe.frequencies_hz.size(); ++k) phases.push_back(phase_dist(rng));
    std::normal_distribution<double> noise(0.0, recipe.noise_std);
    std::vector<double> out(samples);
    for (std::size_t i = 0; i < samples; ++i) {
        const double t = double(i) / recipe.sample_rate;
        double v = 0.0;
        for (std::size_t k = 0; k < phases.size(); ++k)
            v += recipe.amplitudes[k] * std::sin(2.0 * std::numbers::pi * recipe.frequencies_hz[k] * t + phases[k]);
        out[i] = v + noise(rng);
    }
    return out;
}

inline void write_f32le(const std::filesystem::path& path, std::span<const double> values) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    std::vector<char> bytes(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(values[i]));
        for (std::size_t k = 0; k < 4; ++k) bytes[i * 4 + k] = static_cast<char>((bits >> (8 * k)) & 0xFF);
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing: " + path.string());
}

inline void write_f64le(const std::filesystem::path& path, std::span<const double> values) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    std::vector<char> bytes(values.size() * 8);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto bits = std::bit_cast<std::uint64_t>(values[i]);
        for (std::size_t k = 0; k < 8; ++k) bytes[i * 8 + k] = static_cast<char>((bits >> (8 * k)) & 0xFF);
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing: " + path.string());
}

}  // namespace vibegen
