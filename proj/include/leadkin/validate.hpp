#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "leadkin/common.hpp"
#include "leadkin/dataset.hpp"
#include "leadkin/mvdist.hpp"
#include "leadkin/stats.hpp"
#include "leadkin/synth.hpp"

namespace leadkin {

struct WeightedEcdf {
    std::vector<double> x;  // distinct, increasing
    std::vector<double> F;  // cumulative normalized weight at x

    [[nodiscard]] double operator()(double v) const {
        const auto it = std::upper_bound(x.begin(), x.end(), v);
        return it == x.begin() ? 0.0 : F[static_cast<std::size_t>(it - x.begin()) - 1];
    }
};

inline WeightedEcdf weighted_ecdf(std::span<const double> values, std::span<const double> weights) {
    const double total = stats::sum(weights);
    if (values.empty() || !(total > 0.0)) throw Error(ErrorCode::EmptyInput, "weighted_ecdf needs positive total weight");
    std::vector<std::size_t> idx(values.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    WeightedEcdf e;
    double acc = 0.0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        acc += weights[idx[k]];
        const double v = values[idx[k]];
        if (!e.x.empty() && e.x.back() == v)
            e.F.back() = acc / total;
        else {
            e.x.push_back(v);
            e.F.push_back(acc / total);
        }
    }
    e.F.back() = 1.0;
    return e;
}

struct KsResult {
    double statistic = 0.0;
    double p_value = 1.0;
    int n_permutations = 0;
};

namespace ks_detail {

struct Pooled {
    std::vector<double> v;   // sorted values
    std::vector<double> w;   // weights, each sample normalized to its size
    std::vector<std::size_t> tie_end;  // index one past the tie block starting at i (stored at block start)
};

/// D for a labelling of the pooled sorted sample.
inline double statistic(const Pooled& p, const std::vector<std::uint8_t>& label) {
    double t0 = 0.0, t1 = 0.0;
    for (std::size_t i = 0; i < p.v.size(); ++i) (label[i] ? t1 : t0) += p.w[i];
    if (!(t0 > 0.0) || !(t1 > 0.0)) return 0.0;
    double c0 = 0.0, c1 = 0.0, d = 0.0;
    for (std::size_t i = 0; i < p.v.size();) {
        const std::size_t end = p.tie_end[i];
        for (; i < end; ++i) (label[i] ? c1 : c0) += p.w[i];
        d = std::max(d, std::abs(c0 / t0 - c1 / t1));
    }
    return std::min(d, 1.0);
}

} // namespace ks_detail

/// D = sup |F_x - F_y| over the pooled support.
inline double ks_statistic(std::span<const double> x, std::span<const double> wx, std::span<const double> y,
                           std::span<const double> wy) {
    const auto fx = weighted_ecdf(x, wx);
    const auto fy = weighted_ecdf(y, wy);
    double d = 0.0;
    for (double v : fx.x) d = std::max(d, std::abs(fx(v) - fy(v)));
    for (double v : fy.x) d = std::max(d, std::abs(fx(v) - fy(v)));
    return d;
}

/// Weighted two-sample KS test with a permutation p-value (1 + #{D* >= D}) / (1 + B).
/// Each sample's weights are rescaled to sum to its size before pooling; labels
/// are reshuffled with event-weight pairs kept together and group sizes fixed.
inline KsResult weighted_ks_test(std::span<const double> x, std::span<const double> wx, std::span<const double> y,
                                 std::span<const double> wy, int n_perm = 2000, std::uint64_t seed = 0) {
    if (x.empty() || y.empty()) throw Error(ErrorCode::EmptyInput, "weighted_ks_test needs two non-empty samples");
    const double sx = stats::sum(wx), sy = stats::sum(wy);
    if (!(sx > 0.0) || !(sy > 0.0)) throw Error(ErrorCode::EmptyInput, "weighted_ks_test needs positive weights");

    const std::size_t n = x.size() + y.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    const auto val = [&](std::size_t i) { return i < x.size() ? x[i] : y[i - x.size()]; };
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return val(a) < val(b); });

    ks_detail::Pooled p;
    std::vector<std::uint8_t> label(n);
    p.v.resize(n);
    p.w.resize(n);
    p.tie_end.assign(n, 0);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t i = idx[k];
        p.v[k] = val(i);
        if (i < x.size()) {
            p.w[k] = wx[i] * static_cast<double>(x.size()) / sx;
            label[k] = 0;
        } else {
            p.w[k] = wy[i - x.size()] * static_cast<double>(y.size()) / sy;
            label[k] = 1;
        }
    }
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && p.v[j] == p.v[i]) ++j;
        p.tie_end[i] = j;
        i = j;
    }

    KsResult r;
    r.statistic = ks_detail::statistic(p, label);
    r.n_permutations = std::max(n_perm, 0);
    if (n_perm <= 0) return r;
    std::mt19937_64 rng(seed);
    std::size_t ge = 0;
    auto perm = label;
    for (int b = 0; b < n_perm; ++b) {
        for (std::size_t i = n - 1; i > 0; --i) {
            const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i + 1));
            std::swap(perm[i], perm[std::min(j, i)]);
        }
        if (ks_detail::statistic(p, perm) >= r.statistic - 1e-12) ++ge;
    }
    r.p_value = (1.0 + static_cast<double>(ge)) / (1.0 + static_cast<double>(n_perm));
    return r;
}

// ------------------------------------------------------------- describe ---

struct Moments2 {
    double mean = 0.0;
    double sd = 0.0;
};

/// Weighted mean and frequency-weight SD sqrt(sum w (x - m)^2 / (sum w - 1)) per parameter.
inline std::array<Moments2, kNumParams> describe(const std::vector<EventParams>& events) {
    if (events.empty()) throw Error(ErrorCode::EmptyInput, "describe of empty dataset");
    std::vector<double> w;
    for (const auto& e : events) w.push_back(e.weight);
    if (!(stats::sum(w) > 0.0)) throw Error(ErrorCode::EmptyInput, "describe needs positive total weight");
    std::array<Moments2, kNumParams> out;
    for (std::size_t k = 0; k < kNumParams; ++k) {
        std::vector<double> x;
        for (const auto& e : events) x.push_back(e[k]);
        out[k].mean = stats::weighted_mean(x, w);
        const double var = stats::weighted_variance_freq(x, w);
        out[k].sd = std::isfinite(var) ? std::sqrt(var) : 0.0;
    }
    return out;
}

inline std::array<Moments2, kNumParams> describe(const WeightedDataset& d) { return describe(d.events); }

// ----------------------------------------------------------- comparison ---

struct ParamComparison {
    Moments2 raw, synthetic;
    KsResult ks;
    WeightedEcdf raw_ecdf, synthetic_ecdf;
};

struct ValidationReport {
    std::array<ParamComparison, kNumParams> params;
    double alpha = 0.10;
    double raw_weight = 0.0;
    std::size_t n_raw = 0, n_synthetic = 0;

    [[nodiscard]] bool all_non_significant() const {
        return std::all_of(params.begin(), params.end(), [&](const auto& p) { return p.ks.p_value > alpha; });
    }
};

struct ValidateOptions {
    double alpha = 0.10;
    int n_perm = 2000;
    std::uint64_t seed = 0;
};

inline ValidationReport compare(const std::vector<EventParams>& raw, const std::vector<EventParams>& synthetic,
                                const ValidateOptions& opt = {}) {
    ValidationReport rep;
    rep.alpha = opt.alpha;
    rep.n_raw = raw.size();
    rep.n_synthetic = synthetic.size();
    const auto dr = describe(raw);
    const auto ds = describe(synthetic);
    std::vector<double> wr, ws;
    for (const auto& e : raw) wr.push_back(e.weight);
    for (const auto& e : synthetic) ws.push_back(e.weight);
    rep.raw_weight = stats::sum(wr);
    for (std::size_t k = 0; k < kNumParams; ++k) {
        std::vector<double> xr, xs;
        for (const auto& e : raw) xr.push_back(e[k]);
        for (const auto& e : synthetic) xs.push_back(e[k]);
        auto& pc = rep.params[k];
        pc.raw = dr[k];
        pc.synthetic = ds[k];
        pc.ks = weighted_ks_test(xr, wr, xs, ws, opt.n_perm, mix_seed(opt.seed, k));
        pc.raw_ecdf = weighted_ecdf(xr, wr);
        pc.synthetic_ecdf = weighted_ecdf(xs, ws);
    }
    return rep;
}

// ------------------------------------------------------------ bootstrap ---

struct BootstrapOptions {
    std::vector<double> fractions{0.9, 0.8};
    int reps = 100;
    std::size_t n_synth = 1000;
    std::size_t n_reference = 10000;
    double alpha = 0.10;
    int n_perm = 500;
    std::uint64_t seed = 0;
    ModelOptions model;
    GenerateOptions generate;
};

struct BootstrapFraction {
    double fraction = 0.0;
    int reps = 0;
    int failed = 0;
    std::array<double, kNumParams> proportion{};  // non-significant share over successful reps
    std::vector<std::array<double, kNumParams>> rep_p_values;
};

struct BootstrapReport {
    std::vector<BootstrapFraction> fractions;
    int reps = 0;
};

/// Subsample without replacement, rebuild all bundles, generate, and KS-test
/// every parameter against a synthetic reference built from the full data.
inline BootstrapReport bootstrap_robustness(const WeightedDataset& d, const BootstrapOptions& opt = {}) {
    if (opt.reps <= 0) throw Error(ErrorCode::EmptyReps, "bootstrap needs at least one rep");
    const auto full = build_models(d, opt.model);
    const auto reference = assemble_synthetic(full, opt.n_reference, mix_seed(opt.seed, 0xfeed), opt.generate);
    std::array<std::vector<double>, kNumParams> ref;
    for (const auto& e : reference.events)
        for (std::size_t k = 0; k < kNumParams; ++k) ref[k].push_back(e[k]);
    const std::vector<double> ref_w(reference.events.size(), 1.0);

    BootstrapReport rep;
    rep.reps = opt.reps;
    for (std::size_t fi = 0; fi < opt.fractions.size(); ++fi) {
        const double f = opt.fractions[fi];
        BootstrapFraction bf;
        bf.fraction = f;
        bf.reps = opt.reps;
        std::array<int, kNumParams> ok{};
        const auto m = static_cast<std::size_t>(std::floor(f * static_cast<double>(d.events.size()) + 1e-9));
        for (int r = 0; r < opt.reps; ++r) {
            const std::uint64_t rs = mix_seed(mix_seed(opt.seed, fi + 1), static_cast<std::uint64_t>(r));
            std::mt19937_64 rng(rs);
            std::vector<std::size_t> idx(d.events.size());
            std::iota(idx.begin(), idx.end(), 0);
            for (std::size_t i = 0; i < m && i + 1 < idx.size(); ++i) {
                const auto j = i + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(idx.size() - i));
                std::swap(idx[i], idx[std::min(j, idx.size() - 1)]);
            }
            idx.resize(m);
            std::sort(idx.begin(), idx.end());
            WeightedDataset sub;
            sub.stage = d.stage;
            for (std::size_t i : idx) sub.push_back(d.events[i], d.provenance[i]);
            try {
                const auto models = build_models(sub, opt.model);
                const auto syn = assemble_synthetic(models, opt.n_synth, mix_seed(rs, 1), opt.generate);
                std::array<double, kNumParams> pv{};
                const std::vector<double> sw(syn.events.size(), 1.0);
                for (std::size_t k = 0; k < kNumParams; ++k) {
                    std::vector<double> xs;
                    for (const auto& e : syn.events) xs.push_back(e[k]);
                    pv[k] = weighted_ks_test(xs, sw, ref[k], ref_w, opt.n_perm, mix_seed(rs, 10 + k)).p_value;
                    if (pv[k] >= opt.alpha) ++ok[k];
                }
                bf.rep_p_values.push_back(pv);
            } catch (const Error& e) {
                ++bf.failed;
                log(LogLevel::Warn, "bootstrap rep " + std::to_string(r) + " failed: " + e.what());
            }
        }
        const int good = bf.reps - bf.failed;
        for (std::size_t k = 0; k < kNumParams; ++k) bf.proportion[k] = good > 0 ? static_cast<double>(ok[k]) / good : 0.0;
        rep.fractions.push_back(std::move(bf));
    }
    return rep;
}

} // namespace leadkin
