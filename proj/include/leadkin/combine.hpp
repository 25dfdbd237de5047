#pragma once

// Combination of the two crash sources into one weighted crash dataset, and the
// merge of similar near-crashes as weight-sharing variations of crashes.
//
// Groups: 1 = CISS severe crashes (survey weighted), 2 = SHRP2 severe crashes,
// 3 = SHRP2 non-severe crashes, 4 = SHRP2 near-crashes.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "leadkin/common.hpp"
#include "leadkin/dataset.hpp"
#include "leadkin/stats.hpp"

namespace leadkin {

/// Raw and valid event counts for the three crash groups (index 0 = CISS_sc).
struct GroupCounts {
    std::array<int, 3> raw{};
    std::array<int, 3> valid{};

    [[nodiscard]] int n_cmb() const { return valid[0] + valid[1] + valid[2]; }
};

inline int crash_group_index(SourceGroup g) {
    switch (g) {
    case SourceGroup::CissSc: return 0;
    case SourceGroup::Shrp2Sc: return 1;
    case SourceGroup::Shrp2Nsc: return 2;
    case SourceGroup::Shrp2Nc: return -1;
    }
    return -1;
}

// ---------------------------------------------------------------- weights ---

/// Cut-point 3.5 * sqrt(1 + CV^2) * median. CV uses the n-1 standard deviation
/// unless `sample_sd` is false.
inline double trim_cut_point(std::span<const double> w, bool sample_sd = true) {
    if (w.empty()) throw Error(ErrorCode::EmptyInput, "trim_cut_point of empty weights");
    const double n = static_cast<double>(w.size());
    const double mean = stats::sum(w) / n;
    double ss = 0.0;
    for (double x : w) ss += (x - mean) * (x - mean);
    const double denom = sample_sd ? n - 1.0 : n;
    const double sd = denom > 0.0 ? std::sqrt(ss / denom) : 0.0;
    const double cv = sd / mean;
    return 3.5 * std::sqrt(1.0 + cv * cv) * stats::median({w.begin(), w.end()});
}

inline std::vector<double> trim_weights(std::span<const double> w, bool sample_sd = true) {
    const double cut = trim_cut_point(w, sample_sd);
    std::vector<double> out(w.begin(), w.end());
    for (auto& x : out) x = std::min(x, cut);
    return out;
}

/// Rescales so the weights sum to the valid sample size.
inline std::vector<double> scale_weights(std::span<const double> trimmed, int n_vld) {
    const double total = stats::sum(trimmed);
    if (!(total > 0.0)) throw Error(ErrorCode::EmptyInput, "scale_weights: non-positive weight total");
    std::vector<double> out;
    out.reserve(trimmed.size());
    for (double x : trimmed) out.push_back(static_cast<double>(n_vld) * x / total);
    return out;
}

/// Common weight of every event in SHRP2 group 2 or 3:
/// (n2_vld + n3_vld) * n_i / (n2 + n3) / n_i_vld.
inline double shrp2_group_weight(int n2, int n3, int n2_vld, int n3_vld, SourceGroup group) {
    if (n2 <= 0 || n3 <= 0 || n2_vld <= 0 || n3_vld <= 0)
        throw Error(ErrorCode::EmptyGroup, "shrp2_group_weight needs positive counts");
    const double ni = group == SourceGroup::Shrp2Sc ? n2 : n3;
    const double ni_vld = group == SourceGroup::Shrp2Sc ? n2_vld : n3_vld;
    return static_cast<double>(n2_vld + n3_vld) * (ni / static_cast<double>(n2 + n3)) / ni_vld;
}

/// Counts raw and valid events per crash group.
inline GroupCounts count_groups(std::span<const FittedEvent> events) {
    GroupCounts c;
    for (const auto& e : events) {
        const int g = crash_group_index(e.params.group);
        if (g < 0) continue;
        ++c.raw[static_cast<std::size_t>(g)];
        if (e.valid) ++c.valid[static_cast<std::size_t>(g)];
    }
    return c;
}

/// Pre-processed crash dataset: CISS weights trimmed and scaled to n1_vld, SHRP2
/// crashes given their common group weights. Invalid events and near-crashes
/// are skipped.
inline WeightedDataset preprocess(std::span<const FittedEvent> events, const GroupCounts& counts) {
    for (std::size_t g = 0; g < 3; ++g)
        if (counts.valid[g] <= 0)
            throw Error(ErrorCode::EmptyGroup, "no valid events in group " + std::string(to_string(static_cast<SourceGroup>(g))));

    std::vector<const FittedEvent*> ciss;
    for (const auto& e : events)
        if (e.valid && e.params.group == SourceGroup::CissSc) ciss.push_back(&e);
    std::vector<double> native;
    for (const auto* e : ciss) native.push_back(e->native_weight.value_or(1.0));
    const auto trimmed = trim_weights(native);
    const auto scaled = scale_weights(trimmed, counts.valid[0]);

    const double w2 = shrp2_group_weight(counts.raw[1], counts.raw[2], counts.valid[1], counts.valid[2], SourceGroup::Shrp2Sc);
    const double w3 = shrp2_group_weight(counts.raw[1], counts.raw[2], counts.valid[1], counts.valid[2], SourceGroup::Shrp2Nsc);

    WeightedDataset d;
    d.stage = Stage::Preprocessed;
    std::size_t k = 0;
    for (const auto& e : events) {
        if (!e.valid) continue;
        EventParams p = e.params;
        Provenance prov;
        switch (p.group) {
        case SourceGroup::CissSc:
            prov.original_weight = native[k];
            prov.trim_factor = trimmed[k] / native[k];
            prov.scale_factor = scaled[k] / trimmed[k];
            p.weight = scaled[k];
            ++k;
            break;
        case SourceGroup::Shrp2Sc:
            p.weight = w2;
            prov.scale_factor = w2;
            break;
        case SourceGroup::Shrp2Nsc:
            p.weight = w3;
            prov.scale_factor = w3;
            break;
        case SourceGroup::Shrp2Nc:
            continue;
        }
        d.push_back(std::move(p), prov);
    }
    return d;
}

// ------------------------------------------------------------- reweighting ---

struct CombinePlan {
    GroupCounts counts;
    double eta_ns = 0.0;
    double eta_hss = 0.0;
    double W_hss = 0.0;
    double W_lss = 0.0;
    double n_ns = 0.0;   // equivalent non-severe sample size after combination
    double n_hss = 0.0;  // high-speed severe
    double n_lss = 0.0;  // low-speed severe
    double v_c_split = 0.0;
    int n_cmb = 0;
};

/// Proportions to preserve: non-severe share from SHRP2 and high-speed share of
/// severe crashes from CISS, where "high speed" means v_c above the largest
/// SHRP2 severe-crash v_c.
inline CombinePlan build_plan(const WeightedDataset& d, const GroupCounts& counts) {
    CombinePlan plan;
    plan.counts = counts;
    bool have[3] = {false, false, false};
    plan.v_c_split = -std::numeric_limits<double>::infinity();
    for (const auto& e : d.events) {
        const int g = crash_group_index(e.group);
        if (g >= 0) have[g] = true;
        if (e.group == SourceGroup::Shrp2Sc) plan.v_c_split = std::max(plan.v_c_split, e.v_c);
    }
    for (int g = 0; g < 3; ++g)
        if (!have[g]) throw Error(ErrorCode::EmptyGroup, "group " + std::string(to_string(static_cast<SourceGroup>(g))) + " is empty");
    if (counts.raw[1] + counts.raw[2] <= 0) throw Error(ErrorCode::EmptyGroup, "no SHRP2 crashes");

    plan.eta_ns = static_cast<double>(counts.raw[2]) / static_cast<double>(counts.raw[1] + counts.raw[2]);
    for (const auto& e : d.events) {
        if (e.group == SourceGroup::CissSc) {
            (e.v_c > plan.v_c_split ? plan.W_hss : plan.W_lss) += e.weight;
        } else if (e.group == SourceGroup::Shrp2Sc) {
            plan.W_lss += e.weight;
        }
    }
    plan.eta_hss = plan.W_hss / static_cast<double>(counts.valid[0]);
    plan.n_cmb = counts.n_cmb();
    const double n = plan.n_cmb;
    plan.n_ns = n * plan.eta_ns;
    plan.n_hss = n * (1.0 - plan.eta_ns) * plan.eta_hss;
    plan.n_lss = n * (1.0 - plan.eta_ns) * (1.0 - plan.eta_hss);
    return plan;
}

/// Combined crash dataset whose weights sum to n_cmb.
inline WeightedDataset reweight_combine(const WeightedDataset& d, const CombinePlan& plan) {
    if (plan.n_lss > 0.0 && !(plan.W_lss > 0.0))
        throw Error(ErrorCode::DegenerateSplit, "no low-speed severe weight to carry n'_lss");
    if (plan.n_hss > 0.0 && !(plan.W_hss > 0.0))
        throw Error(ErrorCode::DegenerateSplit, "no high-speed severe weight to carry n'_hss");
    WeightedDataset out = d;
    out.stage = Stage::CombinedCrash;
    for (std::size_t i = 0; i < out.events.size(); ++i) {
        auto& e = out.events[i];
        const double before = e.weight;
        switch (e.group) {
        case SourceGroup::Shrp2Nsc:
            e.weight = plan.n_ns / static_cast<double>(plan.counts.valid[2]);
            break;
        case SourceGroup::Shrp2Sc:
            e.weight = plan.n_lss * e.weight / plan.W_lss;
            break;
        case SourceGroup::CissSc:
            e.weight = e.v_c > plan.v_c_split ? plan.n_hss * e.weight / plan.W_hss
                                              : plan.n_lss * e.weight / plan.W_lss;
            break;
        case SourceGroup::Shrp2Nc:
            throw Error(ErrorCode::EmptyGroup, "near-crash in crash dataset");
        }
        out.provenance[i].scale_factor *= e.weight / before;
    }
    return out;
}

// ------------------------------------------------------------------ merge ---

struct ZStats {
    ParamVector mean{};
    ParamVector sd{};
};

/// Weighted mean and frequency-weight SD of each parameter.
inline ZStats weighted_zstats(const WeightedDataset& d) {
    ZStats z;
    const auto w = d.weights();
    for (std::size_t k = 0; k < kNumParams; ++k) {
        const auto x = d.column(k);
        z.mean[k] = stats::weighted_mean(x, w);
        z.sd[k] = std::sqrt(stats::weighted_variance_freq(x, w));
    }
    return z;
}

/// Euclidean distance between z-scored six-vectors, optionally with per-parameter weights.
inline double standardized_distance(const EventParams& a, const EventParams& b, const ZStats& z,
                                    const ParamVector& param_weights = {1, 1, 1, 1, 1, 1}) {
    const auto va = a.vec(), vb = b.vec();
    double s = 0.0;
    for (std::size_t k = 0; k < kNumParams; ++k) {
        if (!(z.sd[k] > 0.0))
            throw Error(ErrorCode::ZeroVariance, "parameter " + std::string(kParamNames[k]) + " has zero SD");
        const double dz = (va[k] - vb[k]) / z.sd[k];
        s += param_weights[k] * dz * dz;
    }
    return std::sqrt(s);
}

struct SelectedNearCrash {
    std::string near_crash_id;
    std::string crash_id;
    double d_min = 0.0;
};

struct MergeResult {
    std::vector<SelectedNearCrash> selected;
    std::vector<SelectedNearCrash> nearest;  // every near-crash with its most similar crash
    double d_thd = 0.78;
    std::map<std::string, int> weight_splits;  // crash id -> attached near-crash count
};

struct MergeOptions {
    double d_thd = 0.78;
    ParamVector param_weights{1, 1, 1, 1, 1, 1};
};

namespace detail {
/// Index of the most similar crash; ties go to the lexicographically smallest id.
inline std::pair<std::size_t, double> most_similar(const EventParams& e, const WeightedDataset& crashes,
                                                   const ZStats& z, const ParamVector& pw,
                                                   std::optional<std::size_t> skip = std::nullopt) {
    std::size_t best = crashes.events.size();
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < crashes.events.size(); ++j) {
        if (skip && *skip == j) continue;
        const double dist = standardized_distance(e, crashes.events[j], z, pw);
        if (dist < best_d || (dist == best_d && best < crashes.events.size() &&
                              crashes.events[j].event_id < crashes.events[best].event_id)) {
            best = j;
            best_d = dist;
        }
    }
    return {best, best_d};
}
} // namespace detail

/// Adds near-crashes whose most similar crash is within d_thd; a crash with n
/// attached near-crashes shares its weight equally among the n + 1 events.
inline std::pair<WeightedDataset, MergeResult> merge_near_crashes(const WeightedDataset& crashes,
                                                                  std::span<const EventParams> near_crashes,
                                                                  const MergeOptions& opt = {}) {
    if (crashes.events.empty()) throw Error(ErrorCode::EmptyInput, "merge_near_crashes: no crashes");
    const auto z = weighted_zstats(crashes);
    MergeResult res;
    res.d_thd = opt.d_thd;
    std::vector<std::vector<std::size_t>> attached(crashes.events.size());
    for (std::size_t i = 0; i < near_crashes.size(); ++i) {
        const auto [j, d] = detail::most_similar(near_crashes[i], crashes, z, opt.param_weights);
        SelectedNearCrash s{near_crashes[i].event_id, crashes.events[j].event_id, d};
        res.nearest.push_back(s);
        if (d <= opt.d_thd) {
            res.selected.push_back(s);
            attached[j].push_back(i);
        }
    }

    WeightedDataset out;
    out.stage = Stage::CombinedIncident;
    for (std::size_t j = 0; j < crashes.events.size(); ++j) {
        const double share = crashes.events[j].weight / static_cast<double>(1 + attached[j].size());
        EventParams host = crashes.events[j];
        host.weight = share;
        Provenance hp = crashes.provenance[j];
        hp.scale_factor *= share / crashes.events[j].weight;
        out.push_back(host, hp);
        if (!attached[j].empty()) res.weight_splits[host.event_id] = static_cast<int>(attached[j].size());
        for (std::size_t i : attached[j]) {
            EventParams nc = near_crashes[i];
            nc.weight = share;
            Provenance np;
            np.original_weight = 1.0;
            np.scale_factor = share;
            np.attached_to = host.event_id;
            out.push_back(nc, np);
        }
    }
    return {std::move(out), std::move(res)};
}

/// Crash-to-crash minimum distances (each crash against all others).
inline std::vector<double> crash_min_distances(const WeightedDataset& crashes,
                                               const ParamVector& param_weights = {1, 1, 1, 1, 1, 1}) {
    const auto z = weighted_zstats(crashes);
    std::vector<double> out;
    for (std::size_t j = 0; j < crashes.events.size(); ++j)
        out.push_back(detail::most_similar(crashes.events[j], crashes, z, param_weights, j).second);
    return out;
}

/// Threshold taken as the weighted q-quantile of the crash-to-crash minimum
/// distance distribution. Approximates a visual elbow pick on new corpora.
inline double d_thd_from_quantile(const WeightedDataset& crashes, double q,
                                  const ParamVector& param_weights = {1, 1, 1, 1, 1, 1}) {
    if (crashes.events.size() < 2) throw Error(ErrorCode::EmptyInput, "need at least two crashes");
    const auto d = crash_min_distances(crashes, param_weights);
    const auto w = crashes.weights();
    return stats::weighted_quantile(d, w, q);
}

// -------------------------------------------------------------- pipeline ---

struct CombineOptions {
    MergeOptions merge;
    std::optional<double> d_thd_quantile;  // overrides merge.d_thd when set
};

struct CombineOutcome {
    GroupCounts counts;
    WeightedDataset preprocessed;
    CombinePlan plan;
    WeightedDataset combined_crash;
    WeightedDataset combined_incident;
    MergeResult merge;
};

inline CombineOutcome combine(std::span<const FittedEvent> events, const CombineOptions& opt = {}) {
    CombineOutcome out;
    out.counts = count_groups(events);
    out.preprocessed = preprocess(events, out.counts);
    out.plan = build_plan(out.preprocessed, out.counts);
    out.combined_crash = reweight_combine(out.preprocessed, out.plan);
    std::vector<EventParams> ncs;
    for (const auto& e : events)
        if (e.valid && e.params.group == SourceGroup::Shrp2Nc) ncs.push_back(e.params);
    auto mopt = opt.merge;
    if (opt.d_thd_quantile) mopt.d_thd = d_thd_from_quantile(out.combined_crash, *opt.d_thd_quantile, mopt.param_weights);
    auto [incident, merge] = merge_near_crashes(out.combined_crash, ncs, mopt);
    out.combined_incident = std::move(incident);
    out.merge = std::move(merge);
    return out;
}

} // namespace leadkin
