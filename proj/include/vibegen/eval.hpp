#pragma once

// Moment-distance "FID" between 1-D signals:
//
//   score(x, y) = (|mu_x - mu_y|)^2 + (sigma_x - sigma_y)^2
//
// with per-window mean and standard deviation. This is a univariate moment
// distance, not the Inception-embedding Frechet distance it is named after:
// there is no feature extractor and no covariance matrix square root.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "vibegen/errors.hpp"
#include "vibegen/parallel.hpp"
#include "vibegen/tensor.hpp"

namespace vibegen {

/// Population (divide by N) is the default; sample (N-1) is available for
/// sensitivity studies.
enum class StdConvention { population, sample };

struct Moments {
    double mean = 0.0;
    double std = 0.0;
};

template <class T>
Moments window_moments(std::span<const T> x, StdConvention conv = StdConvention::population) {
    if (x.empty()) throw DimensionError("fid: empty window");
    double sum = 0.0;
    for (T v : x) sum += double(v);
    const double mean = sum / double(x.size());
    double sq = 0.0;
    for (T v : x) {
        const double d = double(v) - mean;
        sq += d * d;
    }
    const double denom = conv == StdConvention::sample && x.size() > 1 ? double(x.size() - 1) : double(x.size());
    return {mean, std::sqrt(sq / denom)};
}

inline double fid_from_moments(const Moments& a, const Moments& b) {
    const double dm = std::abs(a.mean - b.mean);
    const double ds = a.std - b.std;
    return dm * dm + ds * ds;
}

template <class T>
double fid_score(std::span<const T> x, std::span<const T> y, StdConvention conv = StdConvention::population) {
    return fid_from_moments(window_moments(x, conv), window_moments(y, conv));
}

template <class T>
double fid_score(const std::vector<T>& x, const std::vector<T>& y, StdConvention conv = StdConvention::population) {
    return fid_score(std::span<const T>(x), std::span<const T>(y), conv);
}

/// fid_score on the pooled samples of each set (one scalar per comparison).
template <class T>
double pooled_fid(const Tensor<T>& real, const Tensor<T>& fake) {
    return fid_score(real.span(), fake.span());
}

/// Row-major N x M matrix: scores[i * cols + j] = score(real_i, fake_j).
struct FidMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> scores;

    double at(std::size_t i, std::size_t j) const { return scores[i * cols + j]; }
};

template <class T>
void check_windows(const Tensor<T>& w, const char* what) {
    if (w.batch() < 1) throw DimensionError(std::string(what) + ": need at least one window");
    if (w.channels() != 1) throw DimensionError(std::string(what) + ": windows must have one channel");
    if (w.length() < 1) throw DimensionError(std::string(what) + ": empty windows");
}

template <class T>
FidMatrix fid_matrix(const Tensor<T>& real, const Tensor<T>& fake) {
    check_windows(real, "fid_matrix real");
    check_windows(fake, "fid_matrix fake");
    std::vector<Moments> mr(real.batch()), mf(fake.batch());
    for (std::size_t i = 0; i < real.batch(); ++i) mr[i] = window_moments(real.sample(i));
    for (std::size_t j = 0; j < fake.batch(); ++j) mf[j] = window_moments(fake.sample(j));
    FidMatrix m{real.batch(), fake.batch(), std::vector<double>(real.batch() * fake.batch())};
    parallel_for(m.rows, [&](std::size_t i) {
        for (std::size_t j = 0; j < m.cols; ++j) m.scores[i * m.cols + j] = fid_from_moments(mr[i], mf[j]);
    });
    return m;
}

struct Histogram {
    std::vector<double> edges;    // bins + 1 edges
    std::vector<double> density;  // sum(density * width) == 1
    std::vector<std::size_t> counts;

    double width(std::size_t k) const { return edges[k + 1] - edges[k]; }
};

/// Equal-width bins over [min, max], the last bin closed. When every score
/// is identical the bins span [v - 0.5, v + 0.5] so the value lands in one
/// bin of finite width.
inline Histogram histogram_density(std::span<const double> scores, std::size_t bins = 100) {
    if (scores.empty()) throw DimensionError("histogram: no scores");
    if (bins < 1) throw ConfigError("histogram: bins must be >= 1");
    const auto [lo_it, hi_it] = std::minmax_element(scores.begin(), scores.end());
    double lo = *lo_it, hi = *hi_it;
    if (hi == lo) {
        lo -= 0.5;
        hi += 0.5;
    }
    const double w = (hi - lo) / double(bins);
    Histogram h;
    h.edges.resize(bins + 1);
    for (std::size_t k = 0; k <= bins; ++k) h.edges[k] = lo + w * double(k);
    h.edges.back() = hi;
    h.counts.assign(bins, 0);
    for (double s : scores) {
        auto k = static_cast<std::size_t>((s - lo) / w);
        if (k >= bins) k = bins - 1;
        ++h.counts[k];
    }
    h.density.resize(bins);
    const double n = double(scores.size());
    for (std::size_t k = 0; k < bins; ++k) h.density[k] = double(h.counts[k]) / (n * h.width(k));
    return h;
}

/// Quantile by linear interpolation between order statistics at position p*(n-1).
inline double quantile_sorted(std::span<const double> sorted, double p) {
    const double pos = p * double(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - double(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

struct BoxStats {
    double mean = 0.0;
    double median = 0.0;
    double q1 = 0.0;
    double q3 = 0.0;
    double whisker_low = 0.0;   // most extreme point >= q1 - 1.5 IQR
    double whisker_high = 0.0;  // most extreme point <= q3 + 1.5 IQR
    std::size_t outliers = 0;
};

/// Tukey box-plot statistics.
template <class T>
BoxStats box_stats(std::span<const T> window) {
    if (window.empty()) throw DimensionError("box_stats: empty window");
    std::vector<double> v(window.begin(), window.end());
    std::sort(v.begin(), v.end());
    BoxStats s;
    double sum = 0.0;
    for (double x : v) sum += x;
    s.mean = sum / double(v.size());
    s.median = quantile_sorted(v, 0.5);
    s.q1 = quantile_sorted(v, 0.25);
    s.q3 = quantile_sorted(v, 0.75);
    const double iqr = s.q3 - s.q1;
    const double lo_fence = s.q1 - 1.5 * iqr, hi_fence = s.q3 + 1.5 * iqr;
    s.whisker_low = s.q1;
    s.whisker_high = s.q3;
    for (double x : v) {
        if (x < lo_fence || x > hi_fence) {
            ++s.outliers;
            continue;
        }
        s.whisker_low = std::min(s.whisker_low, x);
        s.whisker_high = std::max(s.whisker_high, x);
    }
    return s;
}

template <class T>
BoxStats box_stats(const std::vector<T>& window) {
    return box_stats(std::span<const T>(window));
}

struct ScorePair {
    std::size_t real = 0;
    std::size_t fake = 0;
    double score = 0.0;
    std::size_t rank = 0;  // number of matrix scores strictly below this one
};

struct Exemplars {
    ScorePair low;
    ScorePair median;
    ScorePair high;
};

/// Lowest, median-nearest and highest scoring pairs. Equal scores resolve to
/// the lowest flat index; for the median, two scores equally far from the
/// matrix median resolve to the larger score.
inline Exemplars select_exemplars(const FidMatrix& m) {
    if (m.scores.empty()) throw DimensionError("select_exemplars: empty matrix");
    std::vector<double> sorted = m.scores;
    std::sort(sorted.begin(), sorted.end());
    const double med = quantile_sorted(sorted, 0.5);

    std::size_t lo = 0, hi = 0, mid = 0;
    for (std::size_t k = 1; k < m.scores.size(); ++k) {
        const double s = m.scores[k];
        if (s < m.scores[lo]) lo = k;
        if (s > m.scores[hi]) hi = k;
        const double d = std::abs(s - med), best = std::abs(m.scores[mid] - med);
        if (d < best || (d == best && s > m.scores[mid])) mid = k;
    }
    auto pair = [&](std::size_t flat) {
        const double s = m.scores[flat];
        const auto rank = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), s) - sorted.begin());
        return ScorePair{flat / m.cols, flat % m.cols, s, rank};
    };
    return {pair(lo), pair(mid), pair(hi)};
}

/// Full evaluation of a real-vs-generated comparison.
struct FidReport {
    FidMatrix matrix;
    double min = 0.0;
    double max = 0.0;
    double mean = 0.0;
    Histogram histogram;
    Exemplars exemplars;
    // low_real, low_fake, median_real, median_fake, high_real, high_fake
    std::vector<std::pair<std::string, BoxStats>> box;
};

template <class T>
FidReport build_fid_report(const Tensor<T>& real, const Tensor<T>& fake, std::size_t bins = 100) {
    FidReport r;
    r.matrix = fid_matrix(real, fake);
    const auto& s = r.matrix.scores;
    r.min = *std::min_element(s.begin(), s.end());
    r.max = *std::max_element(s.begin(), s.end());
    double sum = 0.0;
    for (double v : s) sum += v;
    r.mean = sum / double(s.size());
    r.histogram = histogram_density(s, bins);
    r.exemplars = select_exemplars(r.matrix);
    const std::pair<const char*, const ScorePair*> picks[] = {
        {"low", &r.exemplars.low}, {"median", &r.exemplars.median}, {"high", &r.exemplars.high}};
    for (const auto& [label, p] : picks) {
        r.box.emplace_back(std::string(label) + "_real", box_stats(real.sample(p->real)));
        r.box.emplace_back(std::string(label) + "_fake", box_stats(fake.sample(p->fake)));
    }
    return r;
}

}  // namespace vibegen
