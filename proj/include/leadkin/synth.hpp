#pragma once

// Synthetic event generation from model bundles, constraint filtering, and
// reconstruction of speed profiles from the six parameters.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "leadkin/common.hpp"
#include "leadkin/distributions.hpp"
#include "leadkin/ingest.hpp"
#include "leadkin/mvdist.hpp"

namespace leadkin {

/// Uniform on the open interval (0, 1) from the top 53 bits; identical on every
/// standard library, unlike std::uniform_real_distribution.
inline double uniform01(std::mt19937_64& rng) {
    return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

// ------------------------------------------------------------- profiles ---

/// Knot times and speeds from t = 0 backwards: 0, -tau_s, -tau_s-tau_1, ... and -5.
struct ProfileKnots {
    std::vector<double> t;  // increasing
    std::vector<double> v;
};

inline ProfileKnots profile_knots(const EventParams& e) {
    // Backward walk over (duration, slope) pairs, then the back-extension.
    const std::array<std::pair<double, double>, 3> segs{{{e.tau_s, 0.0}, {e.tau_1, e.a1}, {e.tau_2, e.a2}}};
    std::vector<double> t{kModelEnd}, v{e.v_c};
    double slope = 0.0;
    for (const auto& [dur, a] : segs) {
        if (!(dur > 0.0)) continue;
        slope = a;
        const double t0 = t.back();
        const double t1 = std::max(t0 - dur, kModelStart);
        v.push_back(v.back() - a * (t0 - t1));
        t.push_back(t1);
        if (t1 <= kModelStart) break;
    }
    if (t.back() > kModelStart) {
        v.push_back(v.back() - slope * (t.back() - kModelStart));
        t.push_back(kModelStart);
    }
    std::reverse(t.begin(), t.end());
    std::reverse(v.begin(), v.end());
    return {t, v};
}

inline double profile_value(const ProfileKnots& k, double t) {
    if (t <= k.t.front()) return k.v.front();
    for (std::size_t i = 1; i < k.t.size(); ++i) {
        if (t <= k.t[i]) {
            const double span = k.t[i] - k.t[i - 1];
            if (span <= 0.0) return k.v[i];
            return k.v[i - 1] + (k.v[i] - k.v[i - 1]) * (t - k.t[i - 1]) / span;
        }
    }
    return k.v.back();
}

/// Speed profile on a dt grid over [-5, 0].
inline SpeedProfile params_to_profile(const EventParams& e, double dt = 0.1) {
    if (!(dt > 0.0)) throw Error(ErrorCode::InvalidConfig, "dt must be positive");
    const auto k = profile_knots(e);
    SpeedProfile p;
    p.event_id = e.event_id;
    p.group = e.group;
    p.severity = e.severity;
    const auto n = static_cast<long>(std::floor((kModelEnd - kModelStart) / dt + 1e-9));
    for (long i = 0; i <= n; ++i) {
        const double t = kModelStart + static_cast<double>(i) * dt;
        p.samples.push_back({t, profile_value(k, t), sample_weight(t)});
    }
    if (p.samples.back().t < kModelEnd - 1e-9) p.samples.push_back({kModelEnd, e.v_c, sample_weight(kModelEnd)});
    for (const auto& s : p.samples) p.weight_sum += s.w;
    return p;
}

/// Lowest speed of the piecewise-linear reconstruction; linear pieces attain it at knots.
inline double min_speed(const EventParams& e, bool full_window = true) {
    const auto k = profile_knots(e);
    const double modeled_start = std::max(kModelStart, -(e.tau_s + e.tau_1 + e.tau_2));
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < k.t.size(); ++i) {
        if (!full_window && k.t[i] < modeled_start - 1e-12) continue;
        m = std::min(m, k.v[i]);
    }
    return m;
}

// ---------------------------------------------------------- constraints ---

enum class RejectReason { Range, Acceleration, NegativeSpeed, Categorization };
inline constexpr std::size_t kNumRejectReasons = 4;

inline constexpr std::string_view to_string(RejectReason r) {
    switch (r) {
    case RejectReason::Range: return "range";
    case RejectReason::Acceleration: return "acceleration";
    case RejectReason::NegativeSpeed: return "negative_speed";
    case RejectReason::Categorization: return "categorization";
    }
    return "?";
}

struct ConstraintSet {
    std::array<double, kNumParams> lo{0.0, -kGravity, -kGravity, 0.0, 0.0, 0.0};
    std::array<double, kNumParams> hi{std::numeric_limits<double>::infinity(), kGravity, kGravity, 5.0, 5.0, 5.0};
    double max_abs_accel = kGravity;
    bool full_window_speed = true;  // check v >= 0 on [-5, 0] rather than the modeled span only
};

/// First failed constraint, or nullopt if the event is admissible for `bundle`.
inline std::optional<RejectReason> check_constraints(const EventParams& e, const ConstraintSet& c,
                                                     const SubmodelBundle* bundle = nullptr) {
    const auto x = e.vec();
    for (std::size_t k = 0; k < kNumParams; ++k) {
        if (k == 1 || k == 2) continue;
        if (!std::isfinite(x[k]) || x[k] < c.lo[k] || x[k] > c.hi[k]) return RejectReason::Range;
    }
    if (!std::isfinite(e.a1) || !std::isfinite(e.a2) || std::abs(e.a1) > c.max_abs_accel || std::abs(e.a2) > c.max_abs_accel)
        return RejectReason::Acceleration;
    if (min_speed(e, c.full_window_speed) < 0.0) return RejectReason::NegativeSpeed;
    if (bundle && !bundle->admits(e)) return RejectReason::Categorization;
    return std::nullopt;
}

struct FilterResult {
    std::vector<EventParams> accepted;
    std::array<std::size_t, kNumRejectReasons> rejected{};
};

inline FilterResult filter_valid(const std::vector<EventParams>& events, const ConstraintSet& c,
                                 const SubmodelBundle* bundle = nullptr) {
    FilterResult r;
    for (const auto& e : events) {
        if (auto why = check_constraints(e, c, bundle))
            ++r.rejected[static_cast<std::size_t>(*why)];
        else
            r.accepted.push_back(e);
    }
    return r;
}

// ------------------------------------------------------------- sampling ---

/// Draws from one bundle; holds the copula factor so repeated draws are cheap.
class BundleSampler {
public:
    explicit BundleSampler(const SubmodelBundle& b) : b_(b) {
        if (!b.correlated.empty()) {
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(b.sigma);
            factor_ = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
        }
        if (b.empirical) {
            double acc = 0.0;
            for (double w : b.empirical_weights) cum_.push_back(acc += w);
        }
    }

    [[nodiscard]] ParamVector draw(std::mt19937_64& rng) const {
        ParamVector x{};
        if (b_.empirical) {
            const double u = uniform01(rng) * cum_.back();
            const auto it = std::lower_bound(cum_.begin(), cum_.end(), u);
            return b_.empirical_events[static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - cum_.begin(), static_cast<std::ptrdiff_t>(cum_.size()) - 1))];
        }
        for (std::size_t p = 0; p < kNumParams; ++p)
            if (b_.roles[p] == Role::Constant) x[p] = b_.constants[p];
        for (const auto& [p, h] : b_.hurdles) {
            const double u1 = uniform01(rng), u2 = uniform01(rng);
            x[p] = h.sample(u1, u2);
        }
        for (const auto& [p, d] : b_.uncorrelated) x[p] = d.quantile(uniform01(rng));
        if (!b_.correlated.empty()) {
            Eigen::VectorXd g(factor_.cols());
            for (Eigen::Index i = 0; i < g.size(); ++i) g(i) = dist_detail::ndtri(uniform01(rng));
            const Eigen::VectorXd z = factor_ * g;
            for (std::size_t k = 0; k < b_.correlated.size(); ++k)
                x[b_.correlated[k]] = quantile_denormalize(z(static_cast<Eigen::Index>(k)), b_.correlated_marginals[k]);
        }
        for (const auto& t : b_.transforms) x[t.param] += t.fitted(x);
        for (std::size_t p = 0; p < kNumParams; ++p)
            if (b_.roles[p] == Role::Derived) x[p] = x[b_.source[p]];
        return x;
    }

private:
    const SubmodelBundle& b_;
    Eigen::MatrixXd factor_;
    std::vector<double> cum_;
};

/// Unfiltered draws; deterministic for a fixed seed.
inline std::vector<EventParams> sample_submodel(const SubmodelBundle& b, std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    BundleSampler s(b);
    std::vector<EventParams> out(n);
    for (auto& e : out) {
        e.set(s.draw(rng));
        e.weight = 1.0;
    }
    return out;
}

// ------------------------------------------------------------- assembly ---

/// Largest-remainder apportionment of N over `shares` (normalized internally).
inline std::vector<std::size_t> apportion(const std::vector<double>& shares, std::size_t N) {
    const double total = std::accumulate(shares.begin(), shares.end(), 0.0);
    if (!(total > 0.0)) throw Error(ErrorCode::EmptyInput, "apportion: shares sum to zero");
    std::vector<std::size_t> counts(shares.size());
    std::vector<std::pair<double, std::size_t>> rem;
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < shares.size(); ++i) {
        const double q = static_cast<double>(N) * shares[i] / total;
        // Guard against 0.1-style representation error pushing an exact quota below its integer.
        const double fl = std::floor(q + 1e-9);
        counts[i] = static_cast<std::size_t>(fl);
        assigned += counts[i];
        rem.push_back({q - fl, i});
    }
    std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; assigned < N; ++k, ++assigned) ++counts[rem[k % rem.size()].second];
    return counts;
}

struct BundleStats {
    std::string name;
    std::size_t target = 0;
    std::size_t accepted = 0;
    std::size_t draws = 0;
    std::array<std::size_t, kNumRejectReasons> rejected{};
};

struct SyntheticDataset {
    std::vector<EventParams> events;
    std::vector<std::string> bundle_of;  // parallel to events
    std::vector<BundleStats> bundles;
    std::uint64_t seed = 0;
};

struct GenerateOptions {
    ConstraintSet constraints;
    double rejection_cap_factor = 100.0;
};

/// Samples one bundle until `target` admissible events are collected.
inline BundleStats generate_bundle(const SubmodelBundle& b, std::size_t target, std::uint64_t seed,
                                   const GenerateOptions& opt, std::vector<EventParams>& out) {
    BundleStats st;
    st.name = b.name;
    st.target = target;
    if (target == 0) return st;
    std::mt19937_64 rng(seed);
    BundleSampler s(b);
    const auto cap = static_cast<std::size_t>(std::ceil(opt.rejection_cap_factor * static_cast<double>(target)));
    while (st.accepted < target) {
        if (st.draws >= cap) {
            const auto worst = std::max_element(st.rejected.begin(), st.rejected.end()) - st.rejected.begin();
            throw Error(ErrorCode::RejectionCapExceeded,
                        "bundle " + b.name + " accepted " + std::to_string(st.accepted) + " of " + std::to_string(target) +
                            " after " + std::to_string(st.draws) + " draws; dominant rejection: " +
                            std::string(to_string(static_cast<RejectReason>(worst))));
        }
        EventParams e;
        e.set(s.draw(rng));
        ++st.draws;
        if (auto why = check_constraints(e, opt.constraints, &b)) {
            ++st.rejected[static_cast<std::size_t>(*why)];
            continue;
        }
        e.weight = 1.0;
        e.severity = Severity::None;
        ++st.accepted;
        out.push_back(e);
    }
    return st;
}

/// Synthetic dataset of N events, bundles contributing in proportion to their training weight.
inline SyntheticDataset assemble_synthetic(const ModelSet& models, std::size_t N, std::uint64_t seed,
                                           const GenerateOptions& opt = {}) {
    if (models.bundles.empty()) throw Error(ErrorCode::EmptyInput, "model set has no bundles");
    std::vector<double> shares;
    for (const auto& b : models.bundles) shares.push_back(b.train_weight_share);
    const auto counts = apportion(shares, N);
    SyntheticDataset out;
    out.seed = seed;
    for (std::size_t i = 0; i < models.bundles.size(); ++i) {
        const auto& b = models.bundles[i];
        std::vector<EventParams> ev;
        out.bundles.push_back(generate_bundle(b, counts[i], mix_seed(seed, fnv1a(b.name)), opt, ev));
        for (auto& e : ev) {
            e.event_id = "syn" + std::to_string(out.events.size() + 1);
            out.events.push_back(std::move(e));
            out.bundle_of.push_back(b.name);
        }
    }
    return out;
}

} // namespace leadkin
