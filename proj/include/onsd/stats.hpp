#pragma once

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "onsd/error.hpp"

namespace onsd::stats {

inline double mean(std::span<const double> xs) {
    if (xs.empty()) throw Error("mean of empty sequence");
    return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

/// Population standard deviation (divides by n).
inline double stddev(std::span<const double> xs) {
    const double m = mean(xs);
    double ss = 0.0;
    for (double x : xs) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(xs.size()));
}

/// Quantile of already-sorted data by linear interpolation at index p * (n - 1).
inline double quantile_sorted(std::span<const double> sorted, double p) {
    if (sorted.empty()) throw Error("quantile of empty sequence");
    const double pos = p * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline double median(std::vector<double> xs) {
    std::sort(xs.begin(), xs.end());
    return quantile_sorted(xs, 0.5);
}

struct Correlation {
    double r = 0.0;
    double p = 1.0;  // two-sided
    std::size_t n = 0;
};

/// Sample Pearson correlation with a two-sided Student-t p-value on n - 2 dof.
inline Correlation pearson(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size()) throw Error("length mismatch");
    if (xs.size() < 3) throw Error("pearson needs at least 3 pairs");
    const double mx = mean(xs);
    const double my = mean(ys);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double dx = xs[i] - mx;
        const double dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx <= 0.0 || syy <= 0.0) throw Error("constant input");
    const double r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
    const double dof = static_cast<double>(xs.size()) - 2.0;
    double p = 0.0;
    if (std::abs(r) < 1.0) {
        const double t = r * std::sqrt(dof / (1.0 - r * r));
        const boost::math::students_t dist(dof);
        p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
    }
    return {r, p, xs.size()};
}

}  // namespace onsd::stats
