#pragma once

#include <array>
#include <cctype>
#include <cstdint>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace leadkin {

inline constexpr double kGravity = 9.80665;  // m/s^2
inline constexpr double kModelStart = -5.0;  // s
inline constexpr double kModelEnd = 0.0;     // s
inline constexpr double kCrashCutoff = -0.3; // s

enum class ErrorCode {
    MalformedRow,
    DuplicateTimestamp,
    UnknownGroup,
    EmptyWindow,
    FitDiverged,
    EmptyCandidates,
    EmptyGroup,
    DegenerateSplit,
    ZeroVariance,
    SingularDesign,
    AllFitsFailed,
    RejectionCapExceeded,
    EmptyInput,
    EmptyReps,
    ModelBuildFailed,
    MissingArtifact,
    InvalidConfig,
    Io,
};

inline constexpr std::string_view to_string(ErrorCode c) {
    switch (c) {
    case ErrorCode::MalformedRow: return "MalformedRow";
    case ErrorCode::DuplicateTimestamp: return "DuplicateTimestamp";
    case ErrorCode::UnknownGroup: return "UnknownGroup";
    case ErrorCode::EmptyWindow: return "EmptyWindow";
    case ErrorCode::FitDiverged: return "FitDiverged";
    case ErrorCode::EmptyCandidates: return "EmptyCandidates";
    case ErrorCode::EmptyGroup: return "EmptyGroup";
    case ErrorCode::DegenerateSplit: return "DegenerateSplit";
    case ErrorCode::ZeroVariance: return "ZeroVariance";
    case ErrorCode::SingularDesign: return "SingularDesign";
    case ErrorCode::AllFitsFailed: return "AllFitsFailed";
    case ErrorCode::RejectionCapExceeded: return "RejectionCapExceeded";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::EmptyReps: return "EmptyReps";
    case ErrorCode::ModelBuildFailed: return "ModelBuildFailed";
    case ErrorCode::MissingArtifact: return "MissingArtifact";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::Io: return "Io";
    }
    return "Unknown";
}

/// True for errors caused by bad or missing input rather than by a numerical failure.
inline constexpr bool is_input_error(ErrorCode c) {
    switch (c) {
    case ErrorCode::MalformedRow:
    case ErrorCode::DuplicateTimestamp:
    case ErrorCode::UnknownGroup:
    case ErrorCode::EmptyInput:
    case ErrorCode::EmptyGroup:
    case ErrorCode::MissingArtifact:
    case ErrorCode::InvalidConfig:
    case ErrorCode::Io:
        return true;
    default:
        return false;
    }
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

    /// Same error with `context: ` prepended to the message.
    [[nodiscard]] Error with_context(std::string_view context) const {
        return Error(code_, std::string(context) + ": " + what(), 0);
    }

private:
    Error(ErrorCode code, const std::string& full, int) : std::runtime_error(full), code_(code) {}


    ErrorCode code_;
};

enum class SourceGroup { CissSc, Shrp2Sc, Shrp2Nsc, Shrp2Nc };
enum class Severity { Severe, NonSevere, None };

inline constexpr std::string_view to_string(SourceGroup g) {
    switch (g) {
    case SourceGroup::CissSc: return "CISS_sc";
    case SourceGroup::Shrp2Sc: return "SHRP2_sc";
    case SourceGroup::Shrp2Nsc: return "SHRP2_nsc";
    case SourceGroup::Shrp2Nc: return "SHRP2_nc";
    }
    return "?";
}

inline constexpr std::string_view to_string(Severity s) {
    switch (s) {
    case Severity::Severe: return "Severe";
    case Severity::NonSevere: return "NonSevere";
    case Severity::None: return "None";
    }
    return "?";
}

namespace detail {
inline std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}
} // namespace detail

inline std::optional<SourceGroup> parse_group(std::string_view s) {
    const auto l = detail::lower(s);
    if (l == "ciss_sc") return SourceGroup::CissSc;
    if (l == "shrp2_sc") return SourceGroup::Shrp2Sc;
    if (l == "shrp2_nsc") return SourceGroup::Shrp2Nsc;
    if (l == "shrp2_nc") return SourceGroup::Shrp2Nc;
    return std::nullopt;
}

inline std::optional<Severity> parse_severity(std::string_view s) {
    const auto l = detail::lower(s);
    if (l == "severe") return Severity::Severe;
    if (l == "nonsevere" || l == "non-severe" || l == "non_severe") return Severity::NonSevere;
    if (l == "none" || l.empty()) return Severity::None;
    return std::nullopt;
}

inline constexpr bool is_crash(Severity s) { return s != Severity::None; }

/// Index into the six-parameter event vector.
enum class Param : std::size_t { Vc = 0, A1, A2, TauS, Tau1, Tau2 };
inline constexpr std::size_t kNumParams = 6;
inline constexpr std::array<std::string_view, kNumParams> kParamNames = {
    "v_c", "a1", "a2", "tau_s", "tau_1", "tau_2"};

inline std::optional<std::size_t> param_index(std::string_view name) {
    for (std::size_t i = 0; i < kNumParams; ++i)
        if (kParamNames[i] == name) return i;
    return std::nullopt;
}

using ParamVector = std::array<double, kNumParams>;

/// Six-parameter description of one event: speed at time zero, two accelerations
/// and the durations of the steady, first and second segments (backward from time zero).
struct EventParams {
    double v_c = 0.0;
    double a1 = 0.0;
    double a2 = 0.0;
    double tau_s = 0.0;
    double tau_1 = 0.0;
    double tau_2 = 0.0;
    double weight = 1.0;
    SourceGroup group = SourceGroup::CissSc;
    Severity severity = Severity::Severe;
    std::string event_id;

    [[nodiscard]] ParamVector vec() const { return {v_c, a1, a2, tau_s, tau_1, tau_2}; }

    void set(const ParamVector& p) {
        v_c = p[0];
        a1 = p[1];
        a2 = p[2];
        tau_s = p[3];
        tau_1 = p[4];
        tau_2 = p[5];
    }

    [[nodiscard]] double operator[](std::size_t i) const { return vec()[i]; }
};

/// 64-bit FNV-1a; stable across platforms, used to derive per-event seeds.
inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

/// splitmix64 finalizer for deriving independent substream seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

enum class LogLevel { Quiet = 0, Warn = 1, Info = 2, Debug = 3 };
inline LogLevel g_log_level = LogLevel::Warn;

inline void log(LogLevel level, std::string_view msg) {
    if (static_cast<int>(level) <= static_cast<int>(g_log_level) && level != LogLevel::Quiet)
        std::clog << "[leadkin] " << msg << '\n';
}

} // namespace leadkin
