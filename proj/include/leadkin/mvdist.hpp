#pragma once

// Sub-dataset categorization and the per-sub-dataset multivariate model:
// point masses, correlation-driven splitting, decorrelation of regular
// parameters from point-mass parameters, AIC-selected marginals, and a
// Gaussian copula over the correlated parameters.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "leadkin/common.hpp"
#include "leadkin/csv.hpp"
#include "leadkin/dataset.hpp"
#include "leadkin/distributions.hpp"
#include "leadkin/stats.hpp"

namespace leadkin {

enum class Pattern { ConstantAccel, IncreasingAccel, DecreasingAccel };

inline constexpr std::string_view to_string(Pattern p) {
    switch (p) {
    case Pattern::ConstantAccel: return "ConstantAccel";
    case Pattern::IncreasingAccel: return "IncreasingAccel";
    case Pattern::DecreasingAccel: return "DecreasingAccel";
    }
    return "?";
}

inline Pattern pattern_of(const EventParams& e) {
    if (e.a1 == e.a2) return Pattern::ConstantAccel;
    return e.a1 > e.a2 ? Pattern::IncreasingAccel : Pattern::DecreasingAccel;
}

inline Pattern pattern_of_label(int label) {
    if (label <= 3) return Pattern::ConstantAccel;
    return label <= 5 ? Pattern::IncreasingAccel : Pattern::DecreasingAccel;
}

inline std::string label_name(int label) { return "S" + std::to_string(label); }

/// Sub-dataset S1..S7. Two boundary cases are closed by convention: a zero
/// acceleration with nonzero end speed goes to S2, an increasing pattern with
/// a1 = 0 goes to S5.
inline int categorize_event(const EventParams& e) {
    switch (pattern_of(e)) {
    case Pattern::ConstantAccel:
        if (e.v_c == 0.0 && e.a1 == 0.0) return 1;
        if (e.tau_s > 0.0 && e.a1 != 0.0) return 3;
        return 2;
    case Pattern::IncreasingAccel: return e.a1 < 0.0 ? 4 : 5;
    case Pattern::DecreasingAccel: return e.tau_s == 0.0 ? 6 : 7;
    }
    return 2;
}

inline std::map<int, WeightedDataset> categorize(const WeightedDataset& d) {
    std::map<int, WeightedDataset> out;
    for (std::size_t i = 0; i < d.events.size(); ++i) {
        const auto& e = d.events[i];
        const int label = categorize_event(e);
        if (label == 2 && e.a1 == 0.0 && e.v_c > 0.0)
            log(LogLevel::Debug, "event " + e.event_id + ": steady nonzero speed assigned to S2");
        if (label == 5 && e.a1 == 0.0) log(LogLevel::Info, "event " + e.event_id + ": increasing pattern with a1 = 0 assigned to S5");
        auto& sub = out[label];
        sub.stage = d.stage;
        sub.push_back(e, i < d.provenance.size() ? d.provenance[i] : Provenance{});
    }
    return out;
}

/// Extra membership condition introduced by a point-mass split.
struct Condition {
    std::size_t param = 0;
    bool equal = true;  // param == value, or param != value
    double value = 0.0;

    [[nodiscard]] bool holds(const EventParams& e) const { return (e[param] == value) == equal; }
};

enum class Role { Constant, Derived, PointMass, Correlated, Uncorrelated };

inline constexpr std::string_view to_string(Role r) {
    switch (r) {
    case Role::Constant: return "constant";
    case Role::Derived: return "derived";
    case Role::PointMass: return "point_mass";
    case Role::Correlated: return "correlated";
    case Role::Uncorrelated: return "uncorrelated";
    }
    return "?";
}

/// x = x' + intercept + sum(coefficients[k] * x[regressors[k]]).
struct TransformSpec {
    std::size_t param = 0;
    double intercept = 0.0;
    std::vector<std::size_t> regressors;
    std::vector<double> coefficients;

    [[nodiscard]] double fitted(const ParamVector& x) const {
        double f = intercept;
        for (std::size_t k = 0; k < regressors.size(); ++k) f += coefficients[k] * x[regressors[k]];
        return f;
    }
};

struct SubmodelBundle {
    int label = 1;
    std::string name = "S1";
    std::vector<Condition> conditions;
    double train_weight = 0.0;
    double train_weight_share = 0.0;
    std::size_t n_train = 0;

    std::array<Role, kNumParams> roles{};
    ParamVector constants{};                       // used by Constant roles
    std::array<std::size_t, kNumParams> source{};  // used by Derived roles
    std::vector<TransformSpec> transforms;
    std::vector<std::size_t> correlated;  // copula order
    std::vector<FittedDist> correlated_marginals;
    Eigen::MatrixXd sigma;
    std::map<std::size_t, FittedDist> uncorrelated;
    std::map<std::size_t, HurdleDist> hurdles;

    // Fallback for sub-datasets too small to fit: weighted resampling of training events.
    bool empirical = false;
    std::vector<ParamVector> empirical_events;
    std::vector<double> empirical_weights;

    /// Categorization constraint of the bundle.
    [[nodiscard]] bool admits(const EventParams& e) const {
        if (categorize_event(e) != label) return false;
        return std::all_of(conditions.begin(), conditions.end(), [&](const Condition& c) { return c.holds(e); });
    }
};

struct ModelOptions {
    double mass_threshold = 0.10;
    double corr_threshold = 0.3;
    double alpha_corr = 0.05;
    int max_split_depth = 3;
    double min_effective = 5.0;
    FitOptions fit;
};

inline constexpr std::string_view kModelSchema = "leadkin.model/1";

struct ModelSet {
    std::vector<SubmodelBundle> bundles;
    double total_weight = 0.0;
    ModelOptions options;
};

namespace mv_detail {

struct Columns {
    std::array<std::vector<double>, kNumParams> x;
    std::vector<double> w;
};

inline Columns columns(const WeightedDataset& d) {
    Columns c;
    for (std::size_t k = 0; k < kNumParams; ++k) c.x[k] = d.column(k);
    c.w = d.weights();
    return c;
}

inline bool strong(const stats::Correlation& c, const ModelOptions& opt) {
    return std::abs(c.r) >= opt.corr_threshold && c.p < opt.alpha_corr;
}

inline stats::Correlation corr_or_zero(std::span<const double> x, std::span<const double> y, std::span<const double> w) {
    try {
        return stats::weighted_corr(x, y, w);
    } catch (const Error&) {
        return {};
    }
}

/// Weighted least squares of y on [1, X]; collinear columns are dropped.
inline TransformSpec regress(std::size_t param, const std::vector<double>& y, const Columns& c,
                             const std::vector<std::size_t>& regressors) {
    const auto n = static_cast<Eigen::Index>(y.size());
    const auto p = static_cast<Eigen::Index>(regressors.size()) + 1;
    Eigen::MatrixXd A(n, p);
    Eigen::VectorXd b(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double sw = std::sqrt(c.w[static_cast<std::size_t>(i)]);
        A(i, 0) = sw;
        for (Eigen::Index k = 1; k < p; ++k) A(i, k) = sw * c.x[regressors[static_cast<std::size_t>(k - 1)]][static_cast<std::size_t>(i)];
        b(i) = sw * y[static_cast<std::size_t>(i)];
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
    qr.setThreshold(1e-10);
    const Eigen::VectorXd beta = qr.solve(b);
    TransformSpec t;
    t.param = param;
    t.intercept = beta(0);
    const auto rank = qr.rank();
    std::vector<bool> kept(static_cast<std::size_t>(p), false);
    for (Eigen::Index r = 0; r < rank; ++r) kept[static_cast<std::size_t>(qr.colsPermutation().indices()(r))] = true;
    for (Eigen::Index k = 1; k < p; ++k) {
        if (!kept[static_cast<std::size_t>(k)]) {
            log(LogLevel::Info, "decorrelation of " + std::string(kParamNames[param]) + ": dropped collinear regressor " +
                                    std::string(kParamNames[regressors[static_cast<std::size_t>(k - 1)]]));
            continue;
        }
        t.regressors.push_back(regressors[static_cast<std::size_t>(k - 1)]);
        t.coefficients.push_back(beta(k));
    }
    return t;
}

/// Symmetric PSD matrix with unit diagonal closest (by eigenvalue clipping) to m.
inline Eigen::MatrixXd nearest_correlation(const Eigen::MatrixXd& m) {
    Eigen::MatrixXd s = 0.5 * (m + m.transpose());
    s.diagonal().setOnes();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
    if (es.eigenvalues().minCoeff() >= 0.0) return s;
    log(LogLevel::Info, "covariance clipped to PSD, min eigenvalue " + std::to_string(es.eigenvalues().minCoeff()));
    const Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0);
    Eigen::MatrixXd r = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
    const Eigen::VectorXd d = r.diagonal().cwiseMax(1e-300).cwiseSqrt().cwiseInverse();
    r = d.asDiagonal() * r * d.asDiagonal();
    r.diagonal().setOnes();
    return 0.5 * (r + r.transpose());
}

inline SubmodelBundle empirical_bundle(SubmodelBundle b, const WeightedDataset& sub) {
    b.empirical = true;
    b.transforms.clear();
    b.correlated.clear();
    b.correlated_marginals.clear();
    b.sigma.resize(0, 0);
    b.uncorrelated.clear();
    b.hurdles.clear();
    for (const auto& e : sub.events) {
        b.empirical_events.push_back(e.vec());
        b.empirical_weights.push_back(e.weight);
    }
    return b;
}

inline void build(const WeightedDataset& sub, int label, std::vector<Condition> conds, int depth,
                  const ModelOptions& opt, std::vector<SubmodelBundle>& out) {
    SubmodelBundle b;
    b.label = label;
    b.name = label_name(label);
    for (const auto& c : conds) b.name += std::string(c.equal ? "|" : "|!") + std::string(kParamNames[c.param]) + "=" + csv::fmt(c.value);
    b.conditions = conds;
    b.train_weight = sub.total_weight();
    b.n_train = sub.events.size();
    if (sub.events.empty()) throw Error(ErrorCode::EmptyInput, "empty sub-dataset " + b.name);

    auto c = columns(sub);

    // Step 0: constant and duplicated parameters need no model.
    std::vector<std::size_t> modeled;
    for (std::size_t p = 0; p < kNumParams; ++p) {
        if (stats::is_constant(c.x[p])) {
            b.roles[p] = Role::Constant;
            b.constants[p] = c.x[p].front();
            continue;
        }
        bool derived = false;
        for (std::size_t q : modeled) {
            if (c.x[q] == c.x[p]) {
                b.roles[p] = Role::Derived;
                b.source[p] = q;
                derived = true;
                break;
            }
        }
        if (!derived) modeled.push_back(p);
    }
    if (modeled.empty()) {
        out.push_back(std::move(b));
        return;
    }
    if (stats::effective_size(c.w) < opt.min_effective) {
        log(LogLevel::Warn, "sub-dataset " + b.name + " has too few events to fit; using weighted resampling");
        out.push_back(empirical_bundle(std::move(b), sub));
        return;
    }

    // Step 1: point masses.
    std::map<std::size_t, PointMassSpec> pm;
    for (std::size_t p : modeled)
        if (auto s = detect_point_mass(c.x[p], c.w, opt.mass_threshold, p)) pm[p] = *s;

    // Step 2-3: correlated point-mass pairs split the data.
    if (depth < opt.max_split_depth && pm.size() >= 2) {
        std::optional<std::size_t> split;
        for (auto i = pm.begin(); i != pm.end(); ++i) {
            for (auto j = std::next(i); j != pm.end(); ++j) {
                if (!strong(corr_or_zero(c.x[i->first], c.x[j->first], c.w), opt)) continue;
                for (std::size_t cand : {i->first, j->first}) {
                    const double score = std::abs(pm[cand].mass_probability - 0.5);
                    if (!split || score < std::abs(pm[*split].mass_probability - 0.5) - 1e-12) split = cand;
                }
            }
        }
        if (split) {
            const double v = pm[*split].mass_value;
            WeightedDataset at, off;
            for (std::size_t i = 0; i < sub.events.size(); ++i)
                (sub.events[i][*split] == v ? at : off).push_back(sub.events[i], sub.provenance[i]);
            if (at.events.empty() || off.events.empty()) {
                log(LogLevel::Warn, "split of " + b.name + " on " + std::string(kParamNames[*split]) + " leaves an empty side; not split");
            } else {
                auto ca = conds, co = conds;
                ca.push_back({*split, true, v});
                co.push_back({*split, false, v});
                build(at, label, ca, depth + 1, opt, out);
                build(off, label, co, depth + 1, opt, out);
                return;
            }
        }
    }

    try {
        // Step 4: remove linear dependence of regular parameters on point-mass parameters.
        std::vector<std::size_t> pm_params;
        for (const auto& [p, s] : pm) pm_params.push_back(p);
        for (std::size_t p : modeled) {
            if (pm.count(p)) continue;
            bool linked = false;
            for (std::size_t q : pm_params) linked = linked || strong(corr_or_zero(c.x[p], c.x[q], c.w), opt);
            if (!linked) continue;
            auto t = regress(p, c.x[p], c, pm_params);
            for (std::size_t i = 0; i < c.x[p].size(); ++i) {
                ParamVector row{};
                for (std::size_t k = 0; k < kNumParams; ++k) row[k] = c.x[k][i];
                c.x[p][i] -= t.fitted(row);
            }
            b.transforms.push_back(std::move(t));
        }

        // Step 5: classify regular parameters.
        std::vector<std::size_t> regular;
        for (std::size_t p : modeled)
            if (!pm.count(p)) regular.push_back(p);
        for (std::size_t p : modeled) {
            if (pm.count(p)) {
                b.roles[p] = Role::PointMass;
                continue;
            }
            bool corr = false;
            for (std::size_t q : regular)
                if (q != p) corr = corr || strong(corr_or_zero(c.x[p], c.x[q], c.w), opt);
            b.roles[p] = corr ? Role::Correlated : Role::Uncorrelated;
        }

        // Step 6: marginals, hurdles and the copula.
        std::vector<std::vector<double>> z;
        for (std::size_t p : modeled) {
            switch (b.roles[p]) {
            case Role::PointMass: b.hurdles[p] = fit_hurdle(c.x[p], c.w, pm[p], opt.fit); break;
            case Role::Uncorrelated: b.uncorrelated[p] = fit_univariate(c.x[p], c.w, default_families(), opt.fit); break;
            case Role::Correlated: {
                b.correlated.push_back(p);
                b.correlated_marginals.push_back(fit_univariate(c.x[p], c.w, default_families(), opt.fit));
                z.push_back(quantile_normalize(c.x[p], b.correlated_marginals.back()));
                break;
            }
            default: break;
            }
        }
        if (!z.empty()) {
            const auto nw = normalized_weights(c.w);
            const double sw = stats::sum(nw);
            const auto m = static_cast<Eigen::Index>(z.size());
            std::vector<double> mean(z.size());
            for (std::size_t a = 0; a < z.size(); ++a) mean[a] = stats::weighted_mean(z[a], nw);
            Eigen::MatrixXd cov(m, m);
            for (Eigen::Index a = 0; a < m; ++a)
                for (Eigen::Index bb = 0; bb <= a; ++bb) {
                    double s = 0.0;
                    const auto& za = z[static_cast<std::size_t>(a)];
                    const auto& zb = z[static_cast<std::size_t>(bb)];
                    for (std::size_t i = 0; i < za.size(); ++i)
                        s += nw[i] * (za[i] - mean[static_cast<std::size_t>(a)]) * (zb[i] - mean[static_cast<std::size_t>(bb)]);
                    cov(a, bb) = cov(bb, a) = s / sw;
                }
            b.sigma = nearest_correlation(cov);
        }
    } catch (const Error& e) {
        log(LogLevel::Warn, "model fit for " + b.name + " failed (" + e.what() + "); using weighted resampling");
        out.push_back(empirical_bundle(std::move(b), sub));
        return;
    }
    out.push_back(std::move(b));
}

} // namespace mv_detail

/// Model bundles for one sub-dataset; more than one when point-mass splits occur.
inline std::vector<SubmodelBundle> build_submodel(const WeightedDataset& sub, int label, const ModelOptions& opt = {}) {
    std::vector<SubmodelBundle> out;
    mv_detail::build(sub, label, {}, 0, opt, out);
    return out;
}

inline ModelSet build_models(const WeightedDataset& d, const ModelOptions& opt = {}) {
    if (d.events.empty()) throw Error(ErrorCode::EmptyInput, "no events to model");
    ModelSet ms;
    ms.options = opt;
    ms.total_weight = d.total_weight();
    for (const auto& [label, sub] : categorize(d)) {
        for (auto& b : build_submodel(sub, label, opt)) {
            b.train_weight_share = b.train_weight / ms.total_weight;
            ms.bundles.push_back(std::move(b));
        }
    }
    return ms;
}

/// Decorrelation on its own: residual of x after WLS on the point-mass columns.
inline std::pair<std::vector<double>, TransformSpec> decorrelate(std::span<const double> x,
                                                                 const std::vector<std::vector<double>>& pm_columns,
                                                                 std::span<const double> w) {
    mv_detail::Columns c;
    c.w.assign(w.begin(), w.end());
    std::vector<std::size_t> regs;
    // Regressor columns occupy parameter slots 1.. so TransformSpec indices stay meaningful.
    for (std::size_t k = 0; k < pm_columns.size() && k + 1 < kNumParams; ++k) {
        c.x[k + 1] = pm_columns[k];
        regs.push_back(k + 1);
    }
    auto t = mv_detail::regress(0, {x.begin(), x.end()}, c, regs);
    std::vector<double> out(x.begin(), x.end());
    for (std::size_t i = 0; i < out.size(); ++i) {
        ParamVector row{};
        for (std::size_t k : regs) row[k] = c.x[k][i];
        out[i] -= t.fitted(row);
    }
    return {out, t};
}

} // namespace leadkin
