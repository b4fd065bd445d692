#pragma once

// Locale-independent CSV output: '.' decimal separator, '\n' line endings,
// shortest round-trip formatting for floating-point values.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <string>
#include <system_error>

#include "vibegen/errors.hpp"

namespace vibegen {

inline std::string format_number(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) return "nan";
    return std::string(buf, ptr);
}

inline std::string format_number(float v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) return "nan";
    return std::string(buf, ptr);
}

class CsvWriter {
public:
    explicit CsvWriter(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_) throw IoError("cannot open for writing: " + path.string());
    }

    template <class... Fields>
    void row(const Fields&... fields) {
        bool first = true;
        ((write_field(fields, first)), ...);
        out_ << '\n';
    }

    /// Starts a row field by field; finish with end_row().
    template <class F>
    void field(const F& f) {
        write_field(f, first_in_row_);
    }
    void end_row() {
        out_ << '\n';
        first_in_row_ = true;
    }

    void close() {
        out_.flush();
        if (!out_) throw IoError("failed writing: " + path_.string());
        out_.close();
    }

    ~CsvWriter() {
        if (out_.is_open()) out_.flush();
    }

private:
    template <class F>
    void write_field(const F& f, bool& first) {
        if (!first) out_ << ',';
        first = false;
        if constexpr (std::is_floating_point_v<F>) out_ << format_number(f);
        else if constexpr (std::is_integral_v<F>) out_ << std::to_string(f);
        else out_ << f;
    }

    std::filesystem::path path_;
    std::ofstream out_;
    bool first_in_row_ = true;
};

}  // namespace vibegen
