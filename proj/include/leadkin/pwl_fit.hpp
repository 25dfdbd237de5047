#pragma once

// Weighted continuous piecewise-linear regression of a speed profile, loss-based
// selection of the breakpoint count, non-negativity repair, and extraction of the
// six-parameter event vector.
//
// The model with breakpoints psi_1 < ... < psi_k is
//     v(t) = b0 + b1 t + sum_j c_j (t - psi_j)_+
// Breakpoints are estimated by iterative linearization (Muggeo 2003): the
// regressor -1{t > psi_j} is added with coefficient g_j and psi_j moves by
// g_j / c_j until it settles. Several random starts are tried; if none settles,
// an exhaustive search over sample midpoints takes over.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "leadkin/common.hpp"
#include "leadkin/ingest.hpp"

namespace leadkin {

struct FitConfig {
    int n_b_max = 3;
    double lambda = 0.006;
    double epsilon = 1e-6;            // m/s
    double steady_slope_tol = 0.05;   // m/s^2
    int max_restarts = 10;
    double convergence_tol = 1e-6;
    int max_iterations = 100;
    int min_samples_per_segment = 2;

    void check() const {
        if (n_b_max < 0) throw Error(ErrorCode::InvalidConfig, "n_b_max must be >= 0");
        if (!(lambda > 0.0)) throw Error(ErrorCode::InvalidConfig, "lambda must be > 0");
        if (!(epsilon > 0.0)) throw Error(ErrorCode::InvalidConfig, "epsilon must be > 0");
        if (!(steady_slope_tol >= 0.0)) throw Error(ErrorCode::InvalidConfig, "steady_slope_tol must be >= 0");
        if (max_restarts < 0) throw Error(ErrorCode::InvalidConfig, "max_restarts must be >= 0");
    }
};

struct Segment {
    double t_start = 0.0;
    double t_end = 0.0;
    double slope = 0.0;      // m/s^2
    double intercept = 0.0;  // m/s, value of the line at t = 0

    [[nodiscard]] double value(double t) const { return intercept + slope * t; }
    [[nodiscard]] double duration() const { return t_end - t_start; }
};

/// A continuous piecewise-linear speed model on [-5, 0], stored as knots.
struct PwlFit {
    int n_b = 0;  // breakpoint count selected by the regression (before repair)
    std::vector<double> breakpoints;
    std::vector<Segment> segments;
    double r_squared = 0.0;
    double adj_r_squared = 0.0;
    double sse = 0.0;
    double sst = 0.0;
    double loss = 0.0;
    bool modified_for_nonnegativity = false;

    [[nodiscard]] std::vector<double> knot_times() const {
        std::vector<double> k;
        if (segments.empty()) return k;
        k.push_back(segments.front().t_start);
        for (const auto& s : segments) k.push_back(s.t_end);
        return k;
    }

    [[nodiscard]] std::vector<double> knot_values() const {
        std::vector<double> k;
        if (segments.empty()) return k;
        k.push_back(segments.front().value(segments.front().t_start));
        for (const auto& s : segments) k.push_back(s.value(s.t_end));
        return k;
    }

    [[nodiscard]] double value(double t) const {
        for (const auto& s : segments)
            if (t <= s.t_end) return s.value(t);
        return segments.back().value(t);
    }
};

/// Builds contiguous segments from knot times/values; zero-length pieces are dropped.
inline std::vector<Segment> segments_from_knots(const std::vector<double>& times,
                                                const std::vector<double>& values) {
    std::vector<Segment> out;
    for (std::size_t i = 0; i + 1 < times.size(); ++i) {
        const double dt = times[i + 1] - times[i];
        if (dt <= 1e-12) continue;
        Segment s;
        s.t_start = times[i];
        s.t_end = times[i + 1];
        s.slope = (values[i + 1] - values[i]) / dt;
        s.intercept = values[i] - s.slope * times[i];
        out.push_back(s);
    }
    return out;
}

namespace detail {

struct LinearFit {
    Eigen::VectorXd coef;
    double sse = 0.0;
    bool ok = false;
};

inline LinearFit weighted_lstsq(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& w) {
    const Eigen::VectorXd sw = w.cwiseSqrt();
    const Eigen::MatrixXd Xw = sw.asDiagonal() * X;
    const Eigen::VectorXd yw = sw.cwiseProduct(y);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xw);
    qr.setThreshold(1e-10);
    LinearFit f;
    if (qr.rank() < X.cols()) return f;
    f.coef = qr.solve(yw);
    f.sse = (yw - Xw * f.coef).squaredNorm();
    f.ok = std::isfinite(f.sse);
    return f;
}

struct ProfileData {
    Eigen::VectorXd t, v, w;
};

inline ProfileData to_data(const SpeedProfile& p) {
    ProfileData d;
    const auto n = static_cast<Eigen::Index>(p.samples.size());
    d.t.resize(n);
    d.v.resize(n);
    d.w.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        d.t[i] = p.samples[static_cast<std::size_t>(i)].t;
        d.v[i] = p.samples[static_cast<std::size_t>(i)].v;
        d.w[i] = p.samples[static_cast<std::size_t>(i)].w;
    }
    return d;
}

inline Eigen::MatrixXd hinge_design(const Eigen::VectorXd& t, const std::vector<double>& psi, bool with_jumps) {
    const auto n = t.size();
    const auto k = static_cast<Eigen::Index>(psi.size());
    Eigen::MatrixXd X(n, 2 + k * (with_jumps ? 2 : 1));
    X.col(0).setOnes();
    X.col(1) = t;
    for (Eigen::Index j = 0; j < k; ++j) {
        const double b = psi[static_cast<std::size_t>(j)];
        X.col(2 + j) = (t.array() - b).max(0.0).matrix();
        if (with_jumps) X.col(2 + k + j) = (t.array() > b).cast<double>().matrix() * -1.0;
    }
    return X;
}

/// Breakpoints must be increasing, strictly inside the sampled span, and leave
/// at least `min_per_seg` samples in every segment.
inline bool breakpoints_admissible(const Eigen::VectorXd& t, const std::vector<double>& psi, int min_per_seg) {
    const double lo = t[0], hi = t[t.size() - 1];
    double prev = lo;
    for (double b : psi) {
        if (!std::isfinite(b) || !(b > prev) || !(b < hi)) return false;
        prev = b;
    }
    std::size_t seg = 0;
    std::vector<int> counts(psi.size() + 1, 0);
    for (Eigen::Index i = 0; i < t.size(); ++i) {
        while (seg < psi.size() && t[i] > psi[seg]) ++seg;
        ++counts[seg];
    }
    return std::all_of(counts.begin(), counts.end(), [&](int c) { return c >= min_per_seg; });
}

inline LinearFit fit_fixed(const ProfileData& d, const std::vector<double>& psi) {
    return weighted_lstsq(hinge_design(d.t, psi, false), d.v, d.w);
}

/// One run of the iterative breakpoint update from `psi`. Returns the settled
/// breakpoints or nothing when the iteration leaves the admissible region or
/// fails to settle.
inline std::optional<std::vector<double>> iterate_breakpoints(const ProfileData& d, std::vector<double> psi,
                                                              const FitConfig& cfg) {
    if (!breakpoints_admissible(d.t, psi, cfg.min_samples_per_segment)) return std::nullopt;
    auto current = fit_fixed(d, psi);
    if (!current.ok) return std::nullopt;
    const auto k = psi.size();
    const double span = d.t[d.t.size() - 1] - d.t[0];
    for (int it = 0; it < cfg.max_iterations; ++it) {
        const auto aug = weighted_lstsq(hinge_design(d.t, psi, true), d.v, d.w);
        if (!aug.ok) return std::nullopt;
        std::vector<double> step(k);
        for (std::size_t j = 0; j < k; ++j) {
            const double c = aug.coef[static_cast<Eigen::Index>(2 + j)];
            const double g = aug.coef[static_cast<Eigen::Index>(2 + k + j)];
            if (std::abs(c) < 1e-12) return std::nullopt;
            step[j] = g / c;
        }
        bool accepted = false;
        std::vector<double> next(k);
        LinearFit next_fit;
        for (double h = 1.0; h > 1.0 / 64.0; h *= 0.5) {
            for (std::size_t j = 0; j < k; ++j) next[j] = psi[j] + h * step[j];
            if (!breakpoints_admissible(d.t, next, cfg.min_samples_per_segment)) continue;
            next_fit = fit_fixed(d, next);
            if (next_fit.ok && next_fit.sse <= current.sse * (1.0 + 1e-12) + 1e-300) {
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            // No improving step: psi is a stationary point if the proposed move is negligible.
            double max_step = 0.0;
            for (double s : step) max_step = std::max(max_step, std::abs(s));
            if (max_step < 1e-3 * span) return psi;
            return std::nullopt;
        }
        double max_move = 0.0;
        for (std::size_t j = 0; j < k; ++j) max_move = std::max(max_move, std::abs(next[j] - psi[j]));
        const double rel_gain = (current.sse - next_fit.sse) / (current.sse + 1e-300);
        psi = next;
        current = next_fit;
        if (max_move < cfg.convergence_tol || rel_gain < cfg.convergence_tol) return psi;
    }
    return std::nullopt;
}

/// Exhaustive search over sample midpoints, minimum weighted SSE.
inline std::optional<std::vector<double>> grid_breakpoints(const ProfileData& d, std::size_t k, int min_per_seg) {
    std::vector<double> mids;
    for (Eigen::Index i = 0; i + 1 < d.t.size(); ++i) mids.push_back(0.5 * (d.t[i] + d.t[i + 1]));
    if (mids.size() < k) return std::nullopt;
    std::optional<std::vector<double>> best;
    double best_sse = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> idx(k);
    std::vector<double> psi(k);
    // Enumerate increasing index tuples.
    const auto recurse = [&](auto&& self, std::size_t depth, std::size_t from) -> void {
        if (depth == k) {
            if (!breakpoints_admissible(d.t, psi, min_per_seg)) return;
            const auto f = fit_fixed(d, psi);
            if (f.ok && f.sse < best_sse) {
                best_sse = f.sse;
                best = psi;
            }
            return;
        }
        for (std::size_t i = from; i + (k - depth) <= mids.size(); ++i) {
            psi[depth] = mids[i];
            self(self, depth + 1, i + 1);
        }
    };
    recurse(recurse, 0, 0);
    return best;
}

inline double weighted_r2(double sse, double sst) {
    // Constant observations have no variance to explain; report 0.
    if (!(sst > 0.0)) return 0.0;
    return 1.0 - sse / sst;
}

} // namespace detail

/// Penalized loss: (eps + lambda * max_v / (delta_v + eps)) * n_b - R^2.
inline double loss_value(double max_v, double delta_v, int n_b, double r2, double lambda, double epsilon) {
    return (epsilon + lambda * max_v / (delta_v + epsilon)) * static_cast<double>(n_b) - r2;
}

inline double loss(const PwlFit& c, const SpeedProfile& p, const FitConfig& cfg) {
    double vmax = -std::numeric_limits<double>::infinity();
    double vmin = std::numeric_limits<double>::infinity();
    for (const auto& s : p.samples) {
        vmax = std::max(vmax, s.v);
        vmin = std::min(vmin, s.v);
    }
    return loss_value(vmax, vmax - vmin, c.n_b, c.r_squared, cfg.lambda, cfg.epsilon);
}

/// Fits with exactly the given breakpoints and expresses the result on [-5, 0].
inline PwlFit fit_with_breakpoints(const SpeedProfile& p, const std::vector<double>& psi) {
    const auto d = detail::to_data(p);
    const auto f = detail::fit_fixed(d, psi);
    if (!f.ok) throw Error(ErrorCode::FitDiverged, "singular design for event '" + p.event_id + "'");

    PwlFit fit;
    fit.n_b = static_cast<int>(psi.size());
    fit.breakpoints = psi;
    std::vector<double> kt{kModelStart};
    kt.insert(kt.end(), psi.begin(), psi.end());
    kt.push_back(kModelEnd);
    std::vector<double> kv;
    for (double t : kt) {
        double v = f.coef[0] + f.coef[1] * t;
        for (std::size_t j = 0; j < psi.size(); ++j)
            v += f.coef[static_cast<Eigen::Index>(2 + j)] * std::max(0.0, t - psi[j]);
        kv.push_back(v);
    }
    fit.segments = segments_from_knots(kt, kv);

    const double total_w = d.w.sum();
    const double mean = d.w.dot(d.v) / total_w;
    fit.sst = (d.w.array() * (d.v.array() - mean).square()).sum();
    fit.sse = f.sse;
    // Relative guard so rounding noise on constant data does not count as variance.
    const double scale = (d.w.array() * d.v.array().square()).sum();
    if (fit.sst <= 1e-20 * scale) fit.sst = 0.0;
    fit.r_squared = detail::weighted_r2(fit.sse, fit.sst);
    const double n = static_cast<double>(d.t.size());
    const double k = 2.0 * (fit.n_b + 1);
    fit.adj_r_squared = n - k > 0.0 ? 1.0 - (1.0 - fit.r_squared) * (n - 1.0) / (n - k) : fit.r_squared;
    return fit;
}

/// One candidate per breakpoint count 0..n_b_max; counts whose estimation fails are dropped.
inline std::vector<PwlFit> fit_candidates(const SpeedProfile& p, const FitConfig& cfg, std::uint64_t seed = 0) {
    cfg.check();
    if (p.samples.size() < 2)
        throw Error(ErrorCode::FitDiverged, "event '" + p.event_id + "' has fewer than two samples");
    const auto d = detail::to_data(p);
    std::mt19937_64 rng(mix_seed(seed, fnv1a(p.event_id)));
    const double lo = d.t[0], hi = d.t[d.t.size() - 1];

    std::vector<PwlFit> out;
    for (int nb = 0; nb <= cfg.n_b_max; ++nb) {
        const auto k = static_cast<std::size_t>(nb);
        if (p.samples.size() < static_cast<std::size_t>(cfg.min_samples_per_segment) * (k + 1)) break;
        std::optional<std::vector<double>> best;
        if (k == 0) {
            best = std::vector<double>{};
        } else {
            double best_sse = std::numeric_limits<double>::infinity();
            std::uniform_real_distribution<double> unif(lo, hi);
            for (int r = 0; r < cfg.max_restarts; ++r) {
                std::vector<double> start(k);
                bool ok = false;
                for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
                    for (auto& b : start) b = unif(rng);
                    std::sort(start.begin(), start.end());
                    ok = detail::breakpoints_admissible(d.t, start, cfg.min_samples_per_segment);
                }
                if (!ok) continue;
                auto psi = detail::iterate_breakpoints(d, start, cfg);
                if (!psi) continue;
                const auto f = detail::fit_fixed(d, *psi);
                if (f.ok && f.sse < best_sse) {
                    best_sse = f.sse;
                    best = psi;
                }
            }
            if (!best) {
                log(LogLevel::Debug, "event '" + p.event_id + "': iterative fit failed for n_b=" +
                                         std::to_string(nb) + ", using grid search");
                best = detail::grid_breakpoints(d, k, cfg.min_samples_per_segment);
            }
        }
        if (!best) {
            log(LogLevel::Info, "event '" + p.event_id + "': no fit for n_b=" + std::to_string(nb));
            continue;
        }
        auto fit = fit_with_breakpoints(p, *best);
        fit.loss = loss(fit, p, cfg);
        out.push_back(std::move(fit));
    }
    if (out.empty()) throw Error(ErrorCode::FitDiverged, "no candidate fit for event '" + p.event_id + "'");
    return out;
}

/// Minimum loss; ties go to the smaller breakpoint count.
inline PwlFit select_best(std::vector<PwlFit> candidates) {
    if (candidates.empty()) throw Error(ErrorCode::EmptyCandidates, "select_best on empty list");
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const PwlFit& a, const PwlFit& b) { return a.n_b < b.n_b; });
    std::size_t best = 0;
    for (std::size_t i = 1; i < candidates.size(); ++i)
        if (candidates[i].loss < candidates[best].loss) best = i;
    return candidates[best];
}

/// Clamps the model so that the predicted speed is non-negative on [-5, 0]:
/// negative terminal values are cut at the zero crossing of the terminal segment
/// (with a new breakpoint there) and negative breakpoint values are set to zero.
inline PwlFit enforce_nonnegative(PwlFit fit) {
    auto kt = fit.knot_times();
    auto kv = fit.knot_values();
    if (kt.size() < 2) return fit;
    bool modified = false;

    const auto cut_start = [&] {
        if (kv[0] >= 0.0) return;
        if (kv[1] > 0.0) {
            const double tz = kt[0] + (0.0 - kv[0]) * (kt[1] - kt[0]) / (kv[1] - kv[0]);
            kt.insert(kt.begin() + 1, tz);
            kv.insert(kv.begin() + 1, 0.0);
            kv[0] = 0.0;
            modified = true;
        } else if (kv[1] == 0.0) {
            kv[0] = 0.0;
            modified = true;
        }
    };
    const auto cut_end = [&] {
        const std::size_t n = kt.size() - 1;
        if (kv[n] >= 0.0) return;
        if (kv[n - 1] > 0.0) {
            const double tz = kt[n - 1] + (0.0 - kv[n - 1]) * (kt[n] - kt[n - 1]) / (kv[n] - kv[n - 1]);
            kt.insert(kt.begin() + static_cast<std::ptrdiff_t>(n), tz);
            kv.insert(kv.begin() + static_cast<std::ptrdiff_t>(n), 0.0);
            kv.back() = 0.0;
            modified = true;
        } else if (kv[n - 1] == 0.0) {
            kv[n] = 0.0;
            modified = true;
        }
    };

    cut_start();
    cut_end();
    for (std::size_t i = 1; i + 1 < kv.size(); ++i) {
        if (kv[i] < 0.0) {
            kv[i] = 0.0;
            modified = true;
        }
    }
    // Terminal segments whose inner knot was just raised to zero.
    cut_start();
    cut_end();

    if (!modified) return fit;
    fit.segments = segments_from_knots(kt, kv);
    fit.breakpoints.assign(kt.begin() + 1, kt.end() - 1);
    fit.modified_for_nonnegativity = true;
    return fit;
}

/// Duration of at least 3 s and every fitted slope within [-g, g].
inline bool validate_event(const SpeedProfile& p, const PwlFit& fit) {
    if (p.duration() < 3.0 - 1e-9) return false;
    return std::all_of(fit.segments.begin(), fit.segments.end(),
                       [](const Segment& s) { return s.slope >= -kGravity && s.slope <= kGravity; });
}

/// Reads the six parameters off the (at most three) segments nearest time zero.
/// The last segment is the steady segment S when its slope is within
/// `steady_slope_tol`; then come segment 1 and segment 2. Missing segments take
/// the defaults tau = 0, a1 = 0 and a2 = a1.
inline EventParams extract_params(const PwlFit& fit, const FitConfig& cfg) {
    EventParams e;
    if (fit.segments.empty()) return e;
    auto k = static_cast<std::ptrdiff_t>(fit.segments.size()) - 1;
    e.v_c = std::max(0.0, fit.segments.back().value(kModelEnd));
    const auto& last = fit.segments[static_cast<std::size_t>(k)];
    if (std::abs(last.slope) <= cfg.steady_slope_tol) {
        e.tau_s = last.duration();
        --k;
    }
    if (k >= 0) {
        const auto& s1 = fit.segments[static_cast<std::size_t>(k)];
        e.a1 = s1.slope;
        e.tau_1 = s1.duration();
        --k;
        if (k >= 0) {
            const auto& s2 = fit.segments[static_cast<std::size_t>(k)];
            e.a2 = s2.slope;
            e.tau_2 = s2.duration();
        } else {
            e.a2 = e.a1;
        }
    } else {
        e.a1 = 0.0;
        e.a2 = 0.0;
    }
    return e;
}

/// Outcome of the whole per-event parameterization.
struct Parameterized {
    SpeedProfile profile;
    PwlFit fit;
    EventParams params;
    bool valid = false;
    std::string reason;  // why the event was rejected, empty when valid
};

inline Parameterized parameterize(const RawEvent& raw, const FitConfig& cfg, std::uint64_t seed = 0) {
    Parameterized out;
    out.profile = window_event(raw);
    auto best = select_best(fit_candidates(out.profile, cfg, seed));
    out.fit = enforce_nonnegative(std::move(best));
    out.params = extract_params(out.fit, cfg);
    out.params.event_id = raw.event_id;
    out.params.group = raw.group;
    out.params.severity = raw.severity;
    out.params.weight = 1.0;
    if (!raw.meets_rate()) {
        out.reason = "sample rate below 5 Hz";
    } else if (out.profile.duration() < 3.0 - 1e-9) {
        out.reason = "duration below 3 s";
    } else if (!validate_event(out.profile, out.fit)) {
        out.reason = "fitted acceleration outside [-g, g]";
    } else {
        out.valid = true;
    }
    return out;
}

} // namespace leadkin
