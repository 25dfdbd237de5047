#pragma once

// Univariate families, weighted maximum-likelihood fitting with AIC selection,
// and the hurdle (point mass + continuous) mixture.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/skew_normal.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>
#include <boost/math/tools/roots.hpp>

#include "leadkin/common.hpp"
#include "leadkin/optimize.hpp"
#include "leadkin/stats.hpp"

namespace leadkin {

enum class Family { Normal, SkewNormal, ExpNormal, Gamma, GenGamma, Exponential };

inline constexpr std::string_view to_string(Family f) {
    switch (f) {
    case Family::Normal: return "Normal";
    case Family::SkewNormal: return "SkewNormal";
    case Family::ExpNormal: return "ExpNormal";
    case Family::Gamma: return "Gamma";
    case Family::GenGamma: return "GenGamma";
    case Family::Exponential: return "Exponential";
    }
    return "?";
}

inline std::optional<Family> parse_family(std::string_view s) {
    for (Family f : {Family::Normal, Family::SkewNormal, Family::ExpNormal, Family::Gamma, Family::GenGamma,
                     Family::Exponential})
        if (to_string(f) == s) return f;
    return std::nullopt;
}

inline constexpr bool positive_support(Family f) {
    return f == Family::Gamma || f == Family::GenGamma || f == Family::Exponential;
}

/// Number of free parameters of the family itself.
inline constexpr int family_param_count(Family f) {
    switch (f) {
    case Family::Exponential: return 1;
    case Family::Normal:
    case Family::Gamma: return 2;
    default: return 3;
    }
}

inline const std::vector<Family>& default_families() {
    static const std::vector<Family> f{Family::Normal, Family::SkewNormal, Family::ExpNormal, Family::Gamma};
    return f;
}

inline const std::vector<Family>& hurdle_families() {
    static const std::vector<Family> f{Family::Gamma, Family::GenGamma, Family::Exponential};
    return f;
}

namespace dist_detail {

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;

/// log Phi(t), with an asymptotic series deep in the lower tail.
inline double log_ndtr(double t) {
    if (t > -20.0) return std::log(0.5 * boost::math::erfc(-t / std::numbers::sqrt2));
    const double t2 = t * t;
    return -0.5 * t2 - std::log(-t) - kLogSqrt2Pi + std::log1p(-1.0 / t2 + 3.0 / (t2 * t2) - 15.0 / (t2 * t2 * t2));
}

inline double ndtr(double t) { return 0.5 * boost::math::erfc(-t / std::numbers::sqrt2); }

inline double ndtri(double p) {
    return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

} // namespace dist_detail

/// A fitted family on an affine image of the data: y = (reflect ? -x : x) + shift.
struct FittedDist {
    Family family = Family::Normal;
    std::vector<double> params;
    bool reflect = false;
    double shift = 0.0;
    bool shift_estimated = false;
    double loglik = -std::numeric_limits<double>::infinity();
    double aic = std::numeric_limits<double>::infinity();

    [[nodiscard]] int k() const { return family_param_count(family) + (shift_estimated ? 1 : 0); }
    [[nodiscard]] double to_internal(double x) const { return (reflect ? -x : x) + shift; }
    [[nodiscard]] double from_internal(double y) const { return reflect ? -(y - shift) : y - shift; }

    /// Density of the internal variable y.
    [[nodiscard]] double logpdf_internal(double y) const {
        using namespace dist_detail;
        const double ninf = -std::numeric_limits<double>::infinity();
        switch (family) {
        case Family::Normal: {
            const double z = (y - params[0]) / params[1];
            return -kLogSqrt2Pi - std::log(params[1]) - 0.5 * z * z;
        }
        case Family::SkewNormal: {
            const double z = (y - params[0]) / params[1];
            return std::log(2.0) - kLogSqrt2Pi - std::log(params[1]) - 0.5 * z * z + log_ndtr(params[2] * z);
        }
        case Family::ExpNormal: {
            const double mu = params[0], s = params[1], lam = params[2];
            const double z = (y - mu) / s;
            return std::log(lam) - lam * (y - mu) + 0.5 * lam * lam * s * s + log_ndtr(z - lam * s);
        }
        case Family::Gamma: {
            if (!(y > 0.0)) return ninf;
            const double k = params[0], th = params[1];
            return (k - 1.0) * std::log(y) - y / th - k * std::log(th) - std::lgamma(k);
        }
        case Family::GenGamma: {
            if (!(y > 0.0)) return ninf;
            const double a = params[0], c = params[1], s = params[2];
            const double u = y / s;
            return std::log(c) + (c * a - 1.0) * std::log(u) - std::pow(u, c) - std::lgamma(a) - std::log(s);
        }
        case Family::Exponential:
            if (y < 0.0) return ninf;
            return std::log(params[0]) - params[0] * y;
        }
        return ninf;
    }

    [[nodiscard]] double cdf_internal(double y) const {
        using namespace dist_detail;
        switch (family) {
        case Family::Normal: return ndtr((y - params[0]) / params[1]);
        case Family::SkewNormal: {
            boost::math::skew_normal_distribution<double> d(params[0], params[1], params[2]);
            return std::clamp(boost::math::cdf(d, y), 0.0, 1.0);
        }
        case Family::ExpNormal: {
            const double mu = params[0], s = params[1], lam = params[2];
            const double z = (y - mu) / s;
            const double tail = std::exp(-lam * (y - mu) + 0.5 * lam * lam * s * s + log_ndtr(z - lam * s));
            return std::clamp(ndtr(z) - tail, 0.0, 1.0);
        }
        case Family::Gamma:
            return y <= 0.0 ? 0.0 : boost::math::gamma_p(params[0], y / params[1]);
        case Family::GenGamma:
            return y <= 0.0 ? 0.0 : boost::math::gamma_p(params[0], std::pow(y / params[2], params[1]));
        case Family::Exponential:
            return y <= 0.0 ? 0.0 : -std::expm1(-params[0] * y);
        }
        return 0.0;
    }

    [[nodiscard]] double quantile_internal(double p) const {
        using namespace dist_detail;
        p = std::clamp(p, 1e-12, 1.0 - 1e-12);
        switch (family) {
        case Family::Normal: return params[0] + params[1] * ndtri(p);
        case Family::SkewNormal: {
            boost::math::skew_normal_distribution<double> d(params[0], params[1], params[2]);
            return boost::math::quantile(d, p);
        }
        case Family::ExpNormal: {
            const double mu = params[0], s = params[1], lam = params[2];
            double lo = mu - 10.0 * s, hi = mu + 10.0 * s + 40.0 / lam;
            while (cdf_internal(lo) > p) lo -= 10.0 * s;
            while (cdf_internal(hi) < p) hi += 40.0 / lam;
            std::uintmax_t iters = 200;
            const auto r = boost::math::tools::toms748_solve([&](double y) { return cdf_internal(y) - p; }, lo, hi,
                                                             boost::math::tools::eps_tolerance<double>(48), iters);
            return 0.5 * (r.first + r.second);
        }
        case Family::Gamma: return params[1] * boost::math::gamma_p_inv(params[0], p);
        case Family::GenGamma: return params[2] * std::pow(boost::math::gamma_p_inv(params[0], p), 1.0 / params[1]);
        case Family::Exponential: return -std::log1p(-p) / params[0];
        }
        return 0.0;
    }

    [[nodiscard]] double logpdf(double x) const { return logpdf_internal(to_internal(x)); }

    [[nodiscard]] double cdf(double x) const {
        const double y = to_internal(x);
        if (!reflect) return cdf_internal(y);
        return 1.0 - cdf_internal(y);
    }

    [[nodiscard]] double quantile(double p) const {
        return from_internal(quantile_internal(reflect ? 1.0 - p : p));
    }
};

/// Weights rescaled to sum to the Kish effective size, so likelihoods and AIC
/// do not depend on the scale of the input weights.
inline std::vector<double> normalized_weights(std::span<const double> w) {
    const double total = stats::sum(w);
    const double neff = stats::effective_size(w);
    std::vector<double> out(w.begin(), w.end());
    for (auto& x : out) x *= neff / total;
    return out;
}

namespace dist_detail {

inline double weighted_loglik(const FittedDist& d, std::span<const double> y, std::span<const double> w) {
    double ll = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (w[i] == 0.0) continue;
        const double l = d.logpdf_internal(y[i]);
        if (!std::isfinite(l)) return -std::numeric_limits<double>::infinity();
        ll += w[i] * l;
    }
    return ll;
}

struct Moments {
    double mean, sd, skew;
};

inline Moments moments(std::span<const double> y, std::span<const double> w) {
    const double m = stats::weighted_mean(y, w);
    double m2 = 0, m3 = 0, sw = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double d = y[i] - m;
        m2 += w[i] * d * d;
        m3 += w[i] * d * d * d;
        sw += w[i];
    }
    m2 /= sw;
    m3 /= sw;
    return {m, std::sqrt(m2), m2 > 0 ? m3 / std::pow(m2, 1.5) : 0.0};
}

inline FittedDist fit_normal(std::span<const double> y, std::span<const double> w) {
    const auto mo = moments(y, w);
    FittedDist d;
    d.family = Family::Normal;
    d.params = {mo.mean, mo.sd};
    return d;
}

inline FittedDist fit_skew_normal(std::span<const double> y, std::span<const double> w) {
    const auto mo = moments(y, w);
    FittedDist d;
    d.family = Family::SkewNormal;
    FittedDist best;
    double best_f = std::numeric_limits<double>::infinity();
    for (double a0 : {0.0, 2.0, -2.0, 5.0, -5.0}) {
        // Moment-matched start for the given shape.
        const double delta = a0 / std::sqrt(1.0 + a0 * a0);
        const double om = mo.sd / std::sqrt(1.0 - 2.0 * delta * delta / std::numbers::pi);
        const double xi = mo.mean - om * delta * std::sqrt(2.0 / std::numbers::pi);
        const auto obj = [&](const std::vector<double>& p) {
            d.params = {p[0], std::exp(p[1]), p[2]};
            return -weighted_loglik(d, y, w);
        };
        const auto m = optimize::nelder_mead(obj, {xi, std::log(om), a0});
        if (m.f < best_f) {
            best_f = m.f;
            best = d;
            best.params = {m.x[0], std::exp(m.x[1]), m.x[2]};
        }
    }
    return best;
}

inline FittedDist fit_exp_normal(std::span<const double> y, std::span<const double> w) {
    const auto mo = moments(y, w);
    double tau = mo.skew > 0 ? mo.sd * std::cbrt(mo.skew / 2.0) : 0.3 * mo.sd;
    tau = std::clamp(tau, 0.05 * mo.sd, 0.95 * mo.sd);
    const double sigma = std::sqrt(std::max(mo.sd * mo.sd - tau * tau, 1e-6 * mo.sd * mo.sd));
    FittedDist d;
    d.family = Family::ExpNormal;
    const auto obj = [&](const std::vector<double>& p) {
        d.params = {p[0], std::exp(p[1]), std::exp(p[2])};
        return -weighted_loglik(d, y, w);
    };
    const auto m = optimize::nelder_mead(obj, {mo.mean - tau, std::log(sigma), -std::log(tau)});
    d.params = {m.x[0], std::exp(m.x[1]), std::exp(m.x[2])};
    return d;
}

inline FittedDist fit_gamma(std::span<const double> y, std::span<const double> w) {
    const double mean = stats::weighted_mean(y, w);
    double mlog = 0, sw = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        mlog += w[i] * std::log(y[i]);
        sw += w[i];
    }
    mlog /= sw;
    const double s = std::log(mean) - mlog;
    double k = s > 0 ? (3.0 - s + std::sqrt((s - 3.0) * (s - 3.0) + 24.0 * s)) / (12.0 * s) : 1e6;
    for (int it = 0; it < 100 && s > 0; ++it) {
        const double g = std::log(k) - boost::math::digamma(k) - s;
        const double dg = 1.0 / k - boost::math::trigamma(k);
        const double next = std::max(k - g / dg, k / 10.0);
        if (std::abs(next - k) < 1e-12 * k) {
            k = next;
            break;
        }
        k = next;
    }
    FittedDist d;
    d.family = Family::Gamma;
    d.params = {k, mean / k};
    return d;
}

inline FittedDist fit_gen_gamma(std::span<const double> y, std::span<const double> w) {
    const auto g = fit_gamma(y, w);
    const double mean = stats::weighted_mean(y, w);
    FittedDist d;
    d.family = Family::GenGamma;
    FittedDist best = d;
    double best_f = std::numeric_limits<double>::infinity();
    const std::vector<std::vector<double>> starts{
        {g.params[0], 1.0, g.params[1]}, {1.0, 2.0, mean}, {2.0, 0.5, mean / 4.0}};
    for (const auto& s0 : starts) {
        // Shapes are kept in [1e-2, 1e3] x [1e-2, 50]; the likelihood of bounded data can
        // otherwise run off to the degenerate a -> 0, c -> inf corner.
        const auto obj = [&](const std::vector<double>& p) {
            if (p[0] < std::log(1e-2) || p[0] > std::log(1e3) || p[1] < std::log(1e-2) || p[1] > std::log(50.0))
                return std::numeric_limits<double>::infinity();
            d.params = {std::exp(p[0]), std::exp(p[1]), std::exp(p[2])};
            return -weighted_loglik(d, y, w);
        };
        const auto m = optimize::nelder_mead(obj, {std::log(std::clamp(s0[0], 0.02, 500.0)), std::log(s0[1]), std::log(s0[2])});
        if (m.f < best_f) {
            best_f = m.f;
            best.params = {std::exp(m.x[0]), std::exp(m.x[1]), std::exp(m.x[2])};
        }
    }
    return best;
}

inline FittedDist fit_exponential(std::span<const double> y, std::span<const double> w) {
    FittedDist d;
    d.family = Family::Exponential;
    d.params = {1.0 / stats::weighted_mean(y, w)};
    return d;
}

/// Rejects numerically degenerate fits: the quantile function must be finite,
/// increasing and inverted by the CDF.
inline bool usable(const FittedDist& d) {
    double prev = -std::numeric_limits<double>::infinity();
    for (double p : {0.01, 0.25, 0.5, 0.75, 0.99}) {
        const double x = d.quantile_internal(p);
        if (!std::isfinite(x) || !(x > prev) || std::abs(d.cdf_internal(x) - p) > 1e-6) return false;
        prev = x;
    }
    return true;
}

inline FittedDist fit_family(Family f, std::span<const double> y, std::span<const double> w) {
    switch (f) {
    case Family::Normal: return fit_normal(y, w);
    case Family::SkewNormal: return fit_skew_normal(y, w);
    case Family::ExpNormal: return fit_exp_normal(y, w);
    case Family::Gamma: return fit_gamma(y, w);
    case Family::GenGamma: return fit_gen_gamma(y, w);
    case Family::Exponential: return fit_exponential(y, w);
    }
    return {};
}

} // namespace dist_detail

struct FitOptions {
    // Candidate shifts (in data SDs) for positive families on data that is not
    // strictly positive after the optional reflection. The best is kept by likelihood.
    std::vector<double> shift_grid{0.01, 0.03, 0.1, 0.3, 1.0};
    double min_effective = 5.0;
};

/// Weighted MLE over `families`; returns the minimum-AIC fit.
inline FittedDist fit_univariate(std::span<const double> x, std::span<const double> weights,
                                 const std::vector<Family>& families = default_families(),
                                 const FitOptions& opt = {}) {
    if (x.size() != weights.size() || x.empty()) throw Error(ErrorCode::AllFitsFailed, "no data to fit");
    for (double v : x)
        if (!std::isfinite(v)) throw Error(ErrorCode::AllFitsFailed, "non-finite value");
    if (stats::effective_size(weights) < opt.min_effective - 1e-9)
        throw Error(ErrorCode::AllFitsFailed, "fewer than " + std::to_string(opt.min_effective) + " effective samples");
    if (stats::is_constant(x)) throw Error(ErrorCode::AllFitsFailed, "zero variance");

    const auto w = normalized_weights(weights);
    const double mean = stats::weighted_mean(x, w);
    const double sd = std::sqrt(stats::weighted_variance_pop(x, w));
    const double xmin = *std::min_element(x.begin(), x.end());

    FittedDist best;
    for (Family f : families) {
        std::vector<std::pair<bool, double>> affine{{false, 0.0}};
        if (positive_support(f) && !(xmin > 0.0)) {
            const bool reflect = mean < 0.0;
            double ymin = std::numeric_limits<double>::infinity();
            for (double v : x) ymin = std::min(ymin, reflect ? -v : v);
            affine.clear();
            if (ymin > 0.0) {
                affine.push_back({reflect, 0.0});
            } else {
                for (double g : opt.shift_grid) affine.push_back({reflect, g * sd - ymin});
            }
        }
        for (const auto& [reflect, shift] : affine) {
            std::vector<double> y(x.size());
            for (std::size_t i = 0; i < x.size(); ++i) y[i] = (reflect ? -x[i] : x[i]) + shift;
            try {
                auto d = dist_detail::fit_family(f, y, w);
                d.reflect = reflect;
                d.shift = shift;
                d.shift_estimated = affine.size() > 1;
                d.loglik = dist_detail::weighted_loglik(d, y, w);
                bool ok = std::isfinite(d.loglik) && dist_detail::usable(d);
                for (double p : d.params) ok = ok && std::isfinite(p);
                if (!ok) continue;
                d.aic = 2.0 * d.k() - 2.0 * d.loglik;
                if (d.aic < best.aic) best = d;
            } catch (const std::exception& e) {
                log(LogLevel::Debug, std::string("fit ") + std::string(to_string(f)) + " failed: " + e.what());
            }
        }
    }
    if (!std::isfinite(best.aic)) throw Error(ErrorCode::AllFitsFailed, "no candidate family could be fitted");
    return best;
}

// ------------------------------------------------------------ point mass ---

struct PointMassSpec {
    std::size_t param = 0;
    double mass_value = 0.0;
    double mass_probability = 0.0;
};

/// Most frequent exact value when its weighted share reaches `threshold`.
inline std::optional<PointMassSpec> detect_point_mass(std::span<const double> x, std::span<const double> w,
                                                      double threshold = 0.10, std::size_t param = 0) {
    if (x.empty()) return std::nullopt;
    std::vector<std::size_t> idx(x.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    const double total = stats::sum(w);
    double best_share = 0.0, best_value = 0.0;
    std::size_t best_count = 0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        double s = 0.0;
        while (j < idx.size() && x[idx[j]] == x[idx[i]]) s += w[idx[j++]];
        if (j - i >= 2 && s / total > best_share) {
            best_share = s / total;
            best_value = x[idx[i]];
            best_count = j - i;
        }
        i = j;
    }
    if (best_count < 2 || best_share < threshold - 1e-12) return std::nullopt;
    return PointMassSpec{param, best_value, best_share};
}

struct HurdleDist {
    PointMassSpec mass;
    std::optional<FittedDist> continuous;  // absent when every value sits at the mass

    /// Draw from two uniforms: u1 selects the component, u2 the continuous quantile.
    [[nodiscard]] double sample(double u1, double u2) const {
        if (!continuous || u1 < mass.mass_probability) return mass.mass_value;
        return continuous->quantile(u2);
    }
};

/// Binary component from the weighted mass share, continuous component fitted on
/// the remaining values. Falls back to an exponential when too few remain.
inline HurdleDist fit_hurdle(std::span<const double> x, std::span<const double> w, const PointMassSpec& mass,
                             const FitOptions& opt = {}) {
    HurdleDist h;
    h.mass = mass;
    std::vector<double> rx, rw;
    double total = 0.0, at_mass = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        total += w[i];
        if (x[i] == mass.mass_value) {
            at_mass += w[i];
        } else {
            rx.push_back(x[i]);
            rw.push_back(w[i]);
        }
    }
    h.mass.mass_probability = total > 0 ? at_mass / total : 1.0;
    if (rx.empty()) return h;
    const bool few = stats::effective_size(rw) < opt.min_effective || stats::is_constant(rx);
    if (!few) {
        try {
            h.continuous = fit_univariate(rx, rw, hurdle_families(), opt);
            return h;
        } catch (const Error&) {
        }
    }
    // Exponential with MLE rate on the (affinely mapped) non-mass values.
    FitOptions relaxed = opt;
    relaxed.min_effective = 0.0;
    const double mean = stats::weighted_mean(rx, rw);
    FittedDist d;
    d.family = Family::Exponential;
    d.reflect = mean < mass.mass_value;
    d.shift = d.reflect ? mass.mass_value : -mass.mass_value;
    double ysum = 0.0, wsum = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        ysum += rw[i] * std::max(d.to_internal(rx[i]), 0.0);
        wsum += rw[i];
    }
    const double ymean = ysum / wsum;
    d.params = {ymean > 0 ? 1.0 / ymean : 1.0};
    const auto nw = normalized_weights(rw);
    std::vector<double> y;
    for (double v : rx) y.push_back(std::max(d.to_internal(v), 0.0));
    d.loglik = dist_detail::weighted_loglik(d, y, nw);
    d.aic = 2.0 * d.k() - 2.0 * d.loglik;
    h.continuous = d;
    return h;
}

/// z = Phi^-1(F(x)), clamped to the normal quantiles of [1e-10, 1 - 1e-10].
inline double quantile_normalize(double x, const FittedDist& d) {
    const double p = std::clamp(d.cdf(x), 1e-10, 1.0 - 1e-10);
    return dist_detail::ndtri(p);
}

inline std::vector<double> quantile_normalize(std::span<const double> x, const FittedDist& d) {
    std::vector<double> z;
    z.reserve(x.size());
    for (double v : x) z.push_back(quantile_normalize(v, d));
    return z;
}

inline double quantile_denormalize(double z, const FittedDist& d) {
    return d.quantile(dist_detail::ndtr(z));
}

} // namespace leadkin
