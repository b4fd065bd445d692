#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vibegen/errors.hpp"

namespace vibegen {

struct Shape {
    std::size_t batch = 0;
    std::size_t channels = 0;
    std::size_t length = 0;

    std::size_t size() const { return batch * channels * length; }
    bool operator==(const Shape&) const = default;

    std::string str() const {
        return "(" + std::to_string(batch) + ", " + std::to_string(channels) + ", " +
               std::to_string(length) + ")";
    }
};

/// Dense (batch, channels, length) array, row-major with position fastest.
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    Tensor(std::size_t batch, std::size_t channels, std::size_t length, T fill = T(0))
        : shape_{batch, channels, length}, data_(batch * channels * length, fill) {}
    explicit Tensor(Shape shape, T fill = T(0)) : Tensor(shape.batch, shape.channels, shape.length, fill) {}
    Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
        if (data_.size() != shape_.size())
            throw DimensionError("tensor data size " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_.str());
    }

    const Shape& shape() const { return shape_; }
    std::size_t batch() const { return shape_.batch; }
    std::size_t channels() const { return shape_.channels; }
    std::size_t length() const { return shape_.length; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> span() { return data_; }
    std::span<const T> span() const { return data_; }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator()(std::size_t b, std::size_t c, std::size_t t) {
        return data_[(b * shape_.channels + c) * shape_.length + t];
    }
    const T& operator()(std::size_t b, std::size_t c, std::size_t t) const {
        return data_[(b * shape_.channels + c) * shape_.length + t];
    }

    /// Contiguous row for one (batch, channel) pair.
    std::span<T> row(std::size_t b, std::size_t c) {
        return {data_.data() + (b * shape_.channels + c) * shape_.length, shape_.length};
    }
    std::span<const T> row(std::size_t b, std::size_t c) const {
        return {data_.data() + (b * shape_.channels + c) * shape_.length, shape_.length};
    }

    /// All channels of one batch entry.
    std::span<const T> sample(std::size_t b) const {
        const std::size_t n = shape_.channels * shape_.length;
        return {data_.data() + b * n, n};
    }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    /// Index of the first non-finite element, if any.
    std::optional<std::size_t> first_non_finite() const {
        for (std::size_t i = 0; i < data_.size(); ++i)
            if (!std::isfinite(data_[i])) return i;
        return std::nullopt;
    }

    void check_finite(const std::string& what) const {
        if (auto i = first_non_finite())
            throw DataError(what + ": non-finite tensor element", *i);
    }

    template <class U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    bool operator==(const Tensor&) const = default;

private:
    Shape shape_{};
    std::vector<T> data_;
};

template <class T>
double dot(std::span<const T> a, std::span<const T> b) {
    if (a.size() != b.size()) throw DimensionError("dot: size mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += double(a[i]) * double(b[i]);
    return acc;
}

template <class T>
double dot(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) throw DimensionError("dot: shape " + a.shape().str() + " vs " + b.shape().str());
    return dot(a.span(), b.span());
}

/// Fills with i.i.d. N(mean, stddev). A fresh distribution per call keeps the
/// engine state the only state, so serialized engines resume exactly.
template <class T, class Rng>
void fill_normal(std::span<T> out, Rng& rng, double mean = 0.0, double stddev = 1.0) {
    std::normal_distribution<double> dist(mean, stddev);
    for (auto& v : out) v = T(dist(rng));
}

template <class T>
void require_shape(const Tensor<T>& t, const Shape& expected, const std::string& what) {
    const Shape& s = t.shape();
    if (s.batch != expected.batch)
        throw DimensionError(what + ": batch axis is " + std::to_string(s.batch) + ", expected " +
                             std::to_string(expected.batch));
    if (s.channels != expected.channels)
        throw DimensionError(what + ": channel axis is " + std::to_string(s.channels) + ", expected " +
                             std::to_string(expected.channels));
    if (s.length != expected.length)
        throw DimensionError(what + ": length axis is " + std::to_string(s.length) + ", expected " +
                             std::to_string(expected.length));
}

}  // namespace vibegen
