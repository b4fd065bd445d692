#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vibegen {

/// Shape or axis disagreement between tensors and layer specs.
class DimensionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid hyperparameter, layer spec, or config key.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Normalization layer asked to compute statistics over a single element.
class DegenerateStatisticsError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed checkpoint or raw sample file. `offset` is the byte where reading failed.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

/// Non-numeric line in a CSV signal file. Lines are 1-based.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t line)
        : std::runtime_error(what + " (line " + std::to_string(line) + ")"), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Non-finite sample in an input record. `index` is the 0-based sample index.
class DataError : public std::runtime_error {
public:
    DataError(const std::string& what, std::size_t index)
        : std::runtime_error(what + " (sample " + std::to_string(index) + ")"), index_(index) {}

    std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

class DatasetTooSmallError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite loss, gradient or parameter during training.
class DivergenceError : public std::runtime_error {
public:
    explicit DivergenceError(const std::string& what, std::string last_checkpoint = {})
        : std::runtime_error(what), last_checkpoint_(std::move(last_checkpoint)) {}

    const std::string& last_checkpoint() const noexcept { return last_checkpoint_; }
    void set_last_checkpoint(std::string path) { last_checkpoint_ = std::move(path); }

private:
    std::string last_checkpoint_;
};

}  // namespace vibegen
