#pragma once

// Weighted summary statistics shared by the combination, modeling and
// validation stages.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "leadkin/common.hpp"

namespace leadkin::stats {

inline double sum(std::span<const double> w) { return std::accumulate(w.begin(), w.end(), 0.0); }

/// Kish effective sample size (sum w)^2 / sum w^2.
inline double effective_size(std::span<const double> w) {
    double s = 0.0, s2 = 0.0;
    for (double x : w) {
        s += x;
        s2 += x * x;
    }
    return s2 > 0.0 ? s * s / s2 : 0.0;
}

inline double weighted_mean(std::span<const double> x, std::span<const double> w) {
    double sw = 0.0, swx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sw += w[i];
        swx += w[i] * x[i];
    }
    if (!(sw > 0.0)) throw Error(ErrorCode::EmptyInput, "weighted mean of zero total weight");
    return swx / sw;
}

/// Frequency-weight variance: sum w (x - mean)^2 / (sum w - 1). NaN when sum w <= 1.
inline double weighted_variance_freq(std::span<const double> x, std::span<const double> w) {
    const double m = weighted_mean(x, w);
    double sw = 0.0, ss = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sw += w[i];
        ss += w[i] * (x[i] - m) * (x[i] - m);
    }
    if (sw <= 1.0) return std::numeric_limits<double>::quiet_NaN();
    return ss / (sw - 1.0);
}

/// Population-style weighted variance sum w (x - mean)^2 / sum w.
inline double weighted_variance_pop(std::span<const double> x, std::span<const double> w) {
    const double m = weighted_mean(x, w);
    double sw = 0.0, ss = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sw += w[i];
        ss += w[i] * (x[i] - m) * (x[i] - m);
    }
    return ss / sw;
}

/// True when all values are identical (no spread to model).
inline bool is_constant(std::span<const double> x) {
    if (x.empty()) return true;
    return std::all_of(x.begin(), x.end(), [&](double v) { return v == x.front(); });
}

struct Correlation {
    double r = 0.0;
    double p = 1.0;
    double n_eff = 0.0;
};

/// Two-sided p-value for a Pearson coefficient via the t statistic with n_eff - 2 dof.
inline double correlation_p_value(double r, double n_eff) {
    const double df = n_eff - 2.0;
    if (!(df > 0.0)) return 1.0;
    const double r2 = r * r;
    if (r2 >= 1.0) return 0.0;
    const double t = std::abs(r) * std::sqrt(df / (1.0 - r2));
    boost::math::students_t dist(df);
    return std::clamp(2.0 * boost::math::cdf(boost::math::complement(dist, t)), 0.0, 1.0);
}

/// Weighted Pearson correlation with effective-sample-size t-test p-value.
inline Correlation weighted_corr(std::span<const double> x, std::span<const double> y,
                                 std::span<const double> w) {
    if (x.size() != y.size() || x.size() != w.size())
        throw Error(ErrorCode::EmptyInput, "weighted_corr: length mismatch");
    const double mx = weighted_mean(x, w);
    const double my = weighted_mean(y, w);
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxx += w[i] * dx * dx;
        syy += w[i] * dy * dy;
        sxy += w[i] * dx * dy;
    }
    // Relative guard: sums of squares at rounding level count as zero variance.
    const auto negligible = [&](double ss, std::span<const double> v, double m) {
        double scale = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) scale += w[i] * (v[i] * v[i] + m * m);
        return ss <= 1e-24 * (scale + 1e-300);
    };
    if (negligible(sxx, x, mx) || negligible(syy, y, my))
        throw Error(ErrorCode::ZeroVariance, "weighted_corr: zero weighted variance");
    Correlation c;
    c.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
    c.n_eff = effective_size(w);
    c.p = correlation_p_value(c.r, c.n_eff);
    return c;
}

/// Weighted quantile by the inverse of the weighted ECDF (left-continuous inverse).
inline double weighted_quantile(std::span<const double> x, std::span<const double> w, double q) {
    if (x.empty()) throw Error(ErrorCode::EmptyInput, "weighted_quantile of empty sample");
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    const double total = sum(w);
    double acc = 0.0;
    for (std::size_t k : idx) {
        acc += w[k];
        if (acc >= q * total - 1e-12 * total) return x[k];
    }
    return x[idx.back()];
}

inline double median(std::vector<double> v) {
    if (v.empty()) throw Error(ErrorCode::EmptyInput, "median of empty sample");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace leadkin::stats
