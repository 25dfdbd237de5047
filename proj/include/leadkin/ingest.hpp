#pragma once

// Raw speed-time series: loading, windowing relative to time zero, and the
// validity rules applied before parameterization.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "leadkin/common.hpp"
#include "leadkin/csv.hpp"

namespace leadkin {

struct SpeedSample {
    double t = 0.0;  // s relative to time zero
    double v = 0.0;  // m/s
};

struct RawEvent {
    std::string event_id;
    SourceGroup group = SourceGroup::CissSc;
    Severity severity = Severity::Severe;
    std::vector<SpeedSample> samples;
    std::optional<double> native_weight;
    double sample_rate = 0.0;  // Hz, estimated from the median spacing

    /// Recordings below 5 Hz are not used.
    [[nodiscard]] bool meets_rate() const { return sample_rate >= 5.0 - 1e-6; }
};

struct WeightedSample {
    double t = 0.0;
    double v = 0.0;
    double w = 1.0;
};

struct SpeedProfile {
    std::string event_id;
    SourceGroup group = SourceGroup::CissSc;
    Severity severity = Severity::Severe;
    std::vector<WeightedSample> samples;
    double weight_sum = 0.0;

    [[nodiscard]] double duration() const {
        return samples.empty() ? 0.0 : samples.back().t - samples.front().t;
    }
};

/// Fit weight (0.1 - t)^-0.5: samples nearer time zero count more.
inline double sample_weight(double t) { return 1.0 / std::sqrt(0.1 - t); }

inline std::vector<double> sample_weights(std::span<const double> times) {
    std::vector<double> w;
    w.reserve(times.size());
    for (double t : times) w.push_back(sample_weight(t));
    return w;
}

namespace detail {
inline double estimate_rate(const std::vector<SpeedSample>& s) {
    if (s.size() < 2) return 0.0;
    std::vector<double> dt;
    for (std::size_t i = 1; i < s.size(); ++i) dt.push_back(s[i].t - s[i - 1].t);
    std::nth_element(dt.begin(), dt.begin() + dt.size() / 2, dt.end());
    const double step = dt[dt.size() / 2];
    return step > 0.0 ? 1.0 / step : 0.0;
}
} // namespace detail

/// Reads the neutral event CSV (columns event_id, group, severity, t, v and an
/// optional weight). Events keep first-appearance order.
inline std::vector<RawEvent> load_events(const csv::Table& table) {
    const auto req = [&](std::string_view name) {
        auto c = table.column(name);
        if (!c) throw Error(ErrorCode::MalformedRow, "missing column '" + std::string(name) + "'");
        return *c;
    };
    const auto c_id = req("event_id"), c_group = req("group"), c_sev = req("severity"),
               c_t = req("t"), c_v = req("v");
    const auto c_w = table.column("weight");

    std::vector<RawEvent> events;
    std::map<std::string, std::size_t, std::less<>> index;
    for (const auto& row : table.rows) {
        const auto where = "line " + std::to_string(row.line);
        if (row.fields.size() < table.header.size())
            throw Error(ErrorCode::MalformedRow, where + ": expected " +
                                                     std::to_string(table.header.size()) + " fields");
        const auto& id = row.fields[c_id];
        auto group = parse_group(row.fields[c_group]);
        if (!group)
            throw Error(ErrorCode::UnknownGroup, where + ": unknown group '" + row.fields[c_group] + "'");
        auto sev = parse_severity(row.fields[c_sev]);
        if (!sev) throw Error(ErrorCode::MalformedRow, where + ": unknown severity '" + row.fields[c_sev] + "'");
        auto t = csv::to_double(row.fields[c_t]);
        auto v = csv::to_double(row.fields[c_v]);
        if (!t || !v) throw Error(ErrorCode::MalformedRow, where + ": non-numeric t or v");
        if (*v < 0.0) throw Error(ErrorCode::MalformedRow, where + ": negative speed");

        auto [it, inserted] = index.try_emplace(id, events.size());
        if (inserted) {
            RawEvent e;
            e.event_id = id;
            e.group = *group;
            e.severity = *sev;
            events.push_back(std::move(e));
        }
        auto& ev = events[it->second];
        if (ev.group != *group || ev.severity != *sev)
            throw Error(ErrorCode::MalformedRow, where + ": group/severity changes within event '" + id + "'");
        if (c_w && !row.fields[*c_w].empty()) {
            auto w = csv::to_double(row.fields[*c_w]);
            if (!w || *w <= 0.0) throw Error(ErrorCode::MalformedRow, where + ": weight must be positive");
            ev.native_weight = *w;
        }
        ev.samples.push_back({*t, *v});
    }

    for (auto& e : events) {
        std::stable_sort(e.samples.begin(), e.samples.end(),
                         [](const SpeedSample& a, const SpeedSample& b) { return a.t < b.t; });
        for (std::size_t i = 1; i < e.samples.size(); ++i)
            if (e.samples[i].t == e.samples[i - 1].t)
                throw Error(ErrorCode::DuplicateTimestamp,
                            "event '" + e.event_id + "' repeats t=" + csv::fmt(e.samples[i].t));
        e.sample_rate = detail::estimate_rate(e.samples);
    }
    return events;
}

inline std::vector<RawEvent> load_events(const std::string& path) {
    return load_events(csv::read_file(path));
}

/// Restricts samples to [-5, -0.3] s for crashes and [-5, 0] s for near-crashes
/// and attaches fit weights. Idempotent.
inline SpeedProfile window_event(const RawEvent& e) {
    constexpr double eps = 1e-9;
    const double hi = is_crash(e.severity) ? kCrashCutoff : kModelEnd;
    SpeedProfile p;
    p.event_id = e.event_id;
    p.group = e.group;
    p.severity = e.severity;
    for (const auto& s : e.samples) {
        if (s.t < kModelStart - eps || s.t > hi + eps) continue;
        const double w = sample_weight(s.t);
        p.samples.push_back({s.t, s.v, w});
        p.weight_sum += w;
    }
    if (p.samples.empty())
        throw Error(ErrorCode::EmptyWindow, "event '" + e.event_id + "' has no samples in the window");
    return p;
}

inline RawEvent to_raw(const SpeedProfile& p) {
    RawEvent e;
    e.event_id = p.event_id;
    e.group = p.group;
    e.severity = p.severity;
    for (const auto& s : p.samples) e.samples.push_back({s.t, s.v});
    e.sample_rate = detail::estimate_rate(e.samples);
    return e;
}

} // namespace leadkin
