#pragma once

#include <optional>
#include <string>
#include <vector>

#include "leadkin/common.hpp"

namespace leadkin {

/// One row of the parameterization artifact: the six parameters of an event
/// plus what the combination stage needs (validity, native survey weight).
struct FittedEvent {
    EventParams params;
    bool valid = true;
    std::optional<double> native_weight;
    double r2 = 0.0;
    int n_b = 0;
};

enum class Stage { Preprocessed, CombinedCrash, CombinedIncident };

inline constexpr std::string_view to_string(Stage s) {
    switch (s) {
    case Stage::Preprocessed: return "Preprocessed";
    case Stage::CombinedCrash: return "CombinedCrash";
    case Stage::CombinedIncident: return "CombinedIncident";
    }
    return "?";
}

inline std::optional<Stage> parse_stage(std::string_view s) {
    if (s == "Preprocessed") return Stage::Preprocessed;
    if (s == "CombinedCrash") return Stage::CombinedCrash;
    if (s == "CombinedIncident") return Stage::CombinedIncident;
    return std::nullopt;
}

/// Per-event record of how the weight was derived.
struct Provenance {
    double original_weight = 1.0;  // native survey weight, or 1 for unweighted sources
    double trim_factor = 1.0;      // trimmed / original
    double scale_factor = 1.0;     // preprocessed / trimmed
    std::string attached_to;       // host crash id for merged near-crashes
};

struct WeightedDataset {
    std::vector<EventParams> events;
    std::vector<Provenance> provenance;  // parallel to events
    Stage stage = Stage::Preprocessed;

    [[nodiscard]] double total_weight() const {
        double s = 0.0;
        for (const auto& e : events) s += e.weight;
        return s;
    }

    [[nodiscard]] std::vector<double> weights() const {
        std::vector<double> w;
        w.reserve(events.size());
        for (const auto& e : events) w.push_back(e.weight);
        return w;
    }

    [[nodiscard]] std::vector<double> column(std::size_t param) const {
        std::vector<double> x;
        x.reserve(events.size());
        for (const auto& e : events) x.push_back(e.vec()[param]);
        return x;
    }

    void push_back(EventParams e, Provenance p = {}) {
        events.push_back(std::move(e));
        provenance.push_back(std::move(p));
    }
};

} // namespace leadkin
