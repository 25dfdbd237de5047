#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <thread>

#include "leadkin/combine.hpp"
#include "leadkin/io.hpp"
#include "leadkin/pwl_fit.hpp"

namespace leadkin {

/// Every tunable of the pipeline. Serialized as flat `key = value` lines.
struct PipelineConfig {
    FitConfig fit;
    double d_thd = 0.78;
    std::optional<double> d_thd_quantile;
    double mass_threshold = 0.10;
    double corr_threshold = 0.3;
    double alpha_corr = 0.05;
    double alpha_ks = 0.10;
    std::uint64_t seed = 0;
    std::size_t n_synthetic = 10000;
    double rejection_cap = 100.0;
    bool full_window_speed = true;
    int n_perm = 2000;
    std::optional<double> profiles_dt;  // emit profiles.csv when set

    std::vector<double> fractions{0.9, 0.8};
    int reps = 100;
    std::size_t bootstrap_n_synth = 1000;
    int bootstrap_n_perm = 500;

    int threads = 0;  // 0: hardware concurrency

    std::string workdir = ".";
    std::string input, params, combined, model, synthetic, report, profiles, bootstrap_report;

    [[nodiscard]] std::string path(const std::string& explicit_path, const char* default_name) const {
        if (!explicit_path.empty()) return explicit_path;
        return (std::filesystem::path(workdir) / default_name).string();
    }
    [[nodiscard]] std::string params_path() const { return path(params, "params.csv"); }
    [[nodiscard]] std::string combined_path() const { return path(combined, "combined.csv"); }
    [[nodiscard]] std::string model_path() const { return path(model, "model.json"); }
    [[nodiscard]] std::string synthetic_path() const { return path(synthetic, "synthetic.csv"); }
    [[nodiscard]] std::string report_path() const { return path(report, "report.json"); }
    [[nodiscard]] std::string profiles_path() const { return path(profiles, "profiles.csv"); }
    [[nodiscard]] std::string bootstrap_path() const { return path(bootstrap_report, "bootstrap.json"); }

    [[nodiscard]] ModelOptions model_options() const {
        ModelOptions m;
        m.mass_threshold = mass_threshold;
        m.corr_threshold = corr_threshold;
        m.alpha_corr = alpha_corr;
        return m;
    }

    [[nodiscard]] GenerateOptions generate_options() const {
        GenerateOptions g;
        g.rejection_cap_factor = rejection_cap;
        g.constraints.full_window_speed = full_window_speed;
        return g;
    }

    void check() const {
        fit.check();
        const auto unit = [](double v, const char* name, bool closed_hi = false) {
            if (!(v > 0.0 && (closed_hi ? v <= 1.0 : v < 1.0)))
                throw Error(ErrorCode::InvalidConfig, std::string(name) + " must lie in (0, 1)");
        };
        if (!(d_thd > 0.0)) throw Error(ErrorCode::InvalidConfig, "d_thd must be > 0");
        if (d_thd_quantile) unit(*d_thd_quantile, "d_thd_quantile");
        unit(mass_threshold, "mass_threshold");
        unit(corr_threshold, "corr_threshold");
        unit(alpha_corr, "alpha_corr");
        unit(alpha_ks, "alpha_ks");
        if (n_synthetic == 0) throw Error(ErrorCode::InvalidConfig, "n must be > 0");
        if (!(rejection_cap >= 1.0)) throw Error(ErrorCode::InvalidConfig, "rejection_cap must be >= 1");
        if (n_perm < 0 || bootstrap_n_perm < 0) throw Error(ErrorCode::InvalidConfig, "n_perm must be >= 0");
        if (profiles_dt && !(*profiles_dt > 0.0)) throw Error(ErrorCode::InvalidConfig, "dt must be > 0");
        for (double f : fractions) unit(f, "bootstrap fraction", true);
        if (reps <= 0) throw Error(ErrorCode::InvalidConfig, "reps must be > 0");
    }
};

namespace config_detail {

inline double num(const std::string& key, const std::string& v) {
    const auto d = csv::to_double(v);
    if (!d) throw Error(ErrorCode::InvalidConfig, "'" + key + "' expects a number, got '" + v + "'");
    return *d;
}

inline long long integer(const std::string& key, const std::string& v) {
    const double d = num(key, v);
    if (d != std::floor(d)) throw Error(ErrorCode::InvalidConfig, "'" + key + "' expects an integer, got '" + v + "'");
    return static_cast<long long>(d);
}

inline std::size_t count(const std::string& key, const std::string& v) {
    const auto n = integer(key, v);
    if (n < 0) throw Error(ErrorCode::InvalidConfig, "'" + key + "' must not be negative");
    return static_cast<std::size_t>(n);
}

inline std::uint64_t u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        throw Error(ErrorCode::InvalidConfig, "'" + key + "' expects an unsigned integer, got '" + v + "'");
    return out;
}

inline bool boolean(const std::string& key, const std::string& v) {
    const auto l = detail::lower(v);
    if (l == "true" || l == "1" || l == "yes" || l == "on") return true;
    if (l == "false" || l == "0" || l == "no" || l == "off") return false;
    throw Error(ErrorCode::InvalidConfig, "'" + key + "' expects true/false, got '" + v + "'");
}

inline std::vector<double> list(const std::string& key, const std::string& v) {
    std::vector<double> out;
    for (const auto& f : csv::split(v)) out.push_back(num(key, f));
    return out;
}

using Setter = std::function<void(PipelineConfig&, const std::string&, const std::string&)>;

inline const std::map<std::string, Setter, std::less<>>& setters() {
    static const std::map<std::string, Setter, std::less<>> s = {
        {"alpha_corr", [](auto& c, auto& k, auto& v) { c.alpha_corr = num(k, v); }},
        {"alpha_ks", [](auto& c, auto& k, auto& v) { c.alpha_ks = num(k, v); }},
        {"bootstrap_n_perm", [](auto& c, auto& k, auto& v) { c.bootstrap_n_perm = static_cast<int>(integer(k, v)); }},
        {"bootstrap_n_synth", [](auto& c, auto& k, auto& v) { c.bootstrap_n_synth = count(k, v); }},
        {"bootstrap_report", [](auto& c, auto&, auto& v) { c.bootstrap_report = v; }},
        {"combined", [](auto& c, auto&, auto& v) { c.combined = v; }},
        {"convergence_tol", [](auto& c, auto& k, auto& v) { c.fit.convergence_tol = num(k, v); }},
        {"corr_threshold", [](auto& c, auto& k, auto& v) { c.corr_threshold = num(k, v); }},
        {"d_thd", [](auto& c, auto& k, auto& v) { c.d_thd = num(k, v); }},
        {"d_thd_quantile", [](auto& c, auto& k, auto& v) {
             if (v.empty()) c.d_thd_quantile.reset(); else c.d_thd_quantile = num(k, v); }},
        {"dt", [](auto& c, auto& k, auto& v) { if (v.empty()) c.profiles_dt.reset(); else c.profiles_dt = num(k, v); }},
        {"epsilon", [](auto& c, auto& k, auto& v) { c.fit.epsilon = num(k, v); }},
        {"fractions", [](auto& c, auto& k, auto& v) { c.fractions = list(k, v); }},
        {"full_window_speed", [](auto& c, auto& k, auto& v) { c.full_window_speed = boolean(k, v); }},
        {"input", [](auto& c, auto&, auto& v) { c.input = v; }},
        {"lambda", [](auto& c, auto& k, auto& v) { c.fit.lambda = num(k, v); }},
        {"mass_threshold", [](auto& c, auto& k, auto& v) { c.mass_threshold = num(k, v); }},
        {"max_iterations", [](auto& c, auto& k, auto& v) { c.fit.max_iterations = static_cast<int>(integer(k, v)); }},
        {"max_restarts", [](auto& c, auto& k, auto& v) { c.fit.max_restarts = static_cast<int>(integer(k, v)); }},
        {"min_samples_per_segment", [](auto& c, auto& k, auto& v) { c.fit.min_samples_per_segment = static_cast<int>(integer(k, v)); }},
        {"model", [](auto& c, auto&, auto& v) { c.model = v; }},
        {"n", [](auto& c, auto& k, auto& v) { c.n_synthetic = count(k, v); }},
        {"n_perm", [](auto& c, auto& k, auto& v) { c.n_perm = static_cast<int>(integer(k, v)); }},
        {"nb_max", [](auto& c, auto& k, auto& v) { c.fit.n_b_max = static_cast<int>(integer(k, v)); }},
        {"params", [](auto& c, auto&, auto& v) { c.params = v; }},
        {"profiles", [](auto& c, auto&, auto& v) { c.profiles = v; }},
        {"rejection_cap", [](auto& c, auto& k, auto& v) { c.rejection_cap = num(k, v); }},
        {"report", [](auto& c, auto&, auto& v) { c.report = v; }},
        {"reps", [](auto& c, auto& k, auto& v) { c.reps = static_cast<int>(integer(k, v)); }},
        {"seed", [](auto& c, auto& k, auto& v) { c.seed = u64(k, v); }},
        {"steady_slope_tol", [](auto& c, auto& k, auto& v) { c.fit.steady_slope_tol = num(k, v); }},
        {"synthetic", [](auto& c, auto&, auto& v) { c.synthetic = v; }},
        {"threads", [](auto& c, auto& k, auto& v) { c.threads = static_cast<int>(integer(k, v)); }},
        {"workdir", [](auto& c, auto&, auto& v) { c.workdir = v; }},
    };
    return s;
}

} // namespace config_detail

inline void set_config_value(PipelineConfig& c, const std::string& key, const std::string& value) {
    const auto& s = config_detail::setters();
    const auto it = s.find(key);
    if (it == s.end()) throw Error(ErrorCode::InvalidConfig, "unknown config key '" + key + "'");
    it->second(c, key, value);
}

/// Parses `key = value` lines; `#` starts a comment. Later keys override earlier ones.
inline void apply_config(PipelineConfig& c, std::istream& in, const std::string& origin = "config") {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const auto text = csv::trim(line);
        if (text.empty()) continue;
        const auto eq = text.find('=');
        if (eq == std::string::npos)
            throw Error(ErrorCode::InvalidConfig, origin + ":" + std::to_string(lineno) + ": expected key = value");
        try {
            set_config_value(c, csv::trim(text.substr(0, eq)), csv::trim(text.substr(eq + 1)));
        } catch (const Error& e) {
            throw e.with_context(origin + ":" + std::to_string(lineno));
        }
    }
}

inline PipelineConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open config '" + path + "'");
    PipelineConfig c;
    apply_config(c, in, path);
    return c;
}

inline std::string serialize(const PipelineConfig& c) {
    std::map<std::string, std::string> kv;
    const auto n = [](double v) { return csv::fmt(v); };
    kv["alpha_corr"] = n(c.alpha_corr);
    kv["alpha_ks"] = n(c.alpha_ks);
    kv["bootstrap_n_perm"] = std::to_string(c.bootstrap_n_perm);
    kv["bootstrap_n_synth"] = std::to_string(c.bootstrap_n_synth);
    kv["bootstrap_report"] = c.bootstrap_report;
    kv["combined"] = c.combined;
    kv["convergence_tol"] = n(c.fit.convergence_tol);
    kv["corr_threshold"] = n(c.corr_threshold);
    kv["d_thd"] = n(c.d_thd);
    kv["d_thd_quantile"] = c.d_thd_quantile ? n(*c.d_thd_quantile) : "";
    kv["dt"] = c.profiles_dt ? n(*c.profiles_dt) : "";
    kv["epsilon"] = n(c.fit.epsilon);
    std::string fr;
    for (std::size_t i = 0; i < c.fractions.size(); ++i) fr += (i ? "," : "") + n(c.fractions[i]);
    kv["fractions"] = fr;
    kv["full_window_speed"] = c.full_window_speed ? "true" : "false";
    kv["input"] = c.input;
    kv["lambda"] = n(c.fit.lambda);
    kv["mass_threshold"] = n(c.mass_threshold);
    kv["max_iterations"] = std::to_string(c.fit.max_iterations);
    kv["max_restarts"] = std::to_string(c.fit.max_restarts);
    kv["min_samples_per_segment"] = std::to_string(c.fit.min_samples_per_segment);
    kv["model"] = c.model;
    kv["n"] = std::to_string(c.n_synthetic);
    kv["n_perm"] = std::to_string(c.n_perm);
    kv["nb_max"] = std::to_string(c.fit.n_b_max);
    kv["params"] = c.params;
    kv["profiles"] = c.profiles;
    kv["rejection_cap"] = n(c.rejection_cap);
    kv["report"] = c.report;
    kv["reps"] = std::to_string(c.reps);
    kv["seed"] = std::to_string(c.seed);
    kv["steady_slope_tol"] = n(c.fit.steady_slope_tol);
    kv["synthetic"] = c.synthetic;
    kv["threads"] = std::to_string(c.threads);
    kv["workdir"] = c.workdir;
    std::string out;
    for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
    return out;
}

// ---------------------------------------------------------------- stages ---

enum class PipelineStage { Fit, Combine, Model, Generate, Validate };
inline constexpr std::array<PipelineStage, 5> kAllStages = {PipelineStage::Fit, PipelineStage::Combine,
                                                            PipelineStage::Model, PipelineStage::Generate,
                                                            PipelineStage::Validate};

inline constexpr std::string_view to_string(PipelineStage s) {
    switch (s) {
    case PipelineStage::Fit: return "fit";
    case PipelineStage::Combine: return "combine";
    case PipelineStage::Model: return "model";
    case PipelineStage::Generate: return "generate";
    case PipelineStage::Validate: return "validate";
    }
    return "?";
}

inline std::optional<PipelineStage> parse_pipeline_stage(std::string_view s) {
    for (auto st : kAllStages)
        if (to_string(st) == s) return st;
    return std::nullopt;
}

/// Parameterizes every event. Events are independent, so they are spread over
/// threads; each uses a seed derived from its id, so the output does not depend
/// on the thread count.
inline std::vector<FittedEvent> fit_events(const std::vector<RawEvent>& raw, const FitConfig& cfg, std::uint64_t seed,
                                           int threads = 0) {
    cfg.check();
    std::vector<FittedEvent> out(raw.size());
    std::vector<std::string> reasons(raw.size());
    const auto work = [&](std::size_t i) {
        const auto& r = raw[i];
        auto& f = out[i];
        f.native_weight = r.native_weight;
        try {
            auto p = parameterize(r, cfg, mix_seed(seed, fnv1a(r.event_id)));
            f.params = p.params;
            f.valid = p.valid;
            f.r2 = p.fit.r_squared;
            f.n_b = p.fit.n_b;
            reasons[i] = p.reason;
        } catch (const Error& e) {
            if (e.code() != ErrorCode::EmptyWindow && e.code() != ErrorCode::EmptyCandidates &&
                e.code() != ErrorCode::FitDiverged)
                throw;
            f.params.event_id = r.event_id;
            f.params.group = r.group;
            f.params.severity = r.severity;
            f.valid = false;
            reasons[i] = e.what();
        }
    };
    std::size_t n_threads = threads > 0 ? static_cast<std::size_t>(threads) : std::thread::hardware_concurrency();
    n_threads = std::clamp<std::size_t>(n_threads, 1, std::max<std::size_t>(raw.size(), 1));
    if (n_threads == 1) {
        for (std::size_t i = 0; i < raw.size(); ++i) work(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::exception_ptr> errors(n_threads);
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < n_threads; ++t)
            pool.emplace_back([&, t] {
                try {
                    for (std::size_t i; (i = next.fetch_add(1)) < raw.size();) work(i);
                } catch (...) {
                    errors[t] = std::current_exception();
                    next = raw.size();
                }
            });
        for (auto& th : pool) th.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }
    for (std::size_t i = 0; i < raw.size(); ++i)
        if (!reasons[i].empty()) log(LogLevel::Info, "event '" + raw[i].event_id + "' invalid: " + reasons[i]);
    return out;
}

struct StageResult {
    PipelineStage stage;
    std::vector<std::string> artifacts;
    std::string summary;
};

namespace pipeline_detail {

inline StageResult run_fit(const PipelineConfig& c) {
    if (c.input.empty()) throw Error(ErrorCode::InvalidConfig, "no input file given");
    io::require_file(c.input);
    const auto raw = load_events(c.input);
    if (raw.empty()) throw Error(ErrorCode::EmptyInput, "'" + c.input + "' holds no events");
    const auto fitted = fit_events(raw, c.fit, c.seed, c.threads);
    io::write_params(c.params_path(), fitted);
    const auto valid = std::count_if(fitted.begin(), fitted.end(), [](const auto& f) { return f.valid; });
    return {PipelineStage::Fit, {c.params_path()},
            std::to_string(fitted.size()) + " events parameterized, " + std::to_string(valid) + " valid"};
}

inline StageResult run_combine(const PipelineConfig& c) {
    const auto events = io::read_params(c.params_path());
    CombineOptions opt;
    opt.merge.d_thd = c.d_thd;
    opt.d_thd_quantile = c.d_thd_quantile;
    const auto out = combine(events, opt);
    io::write_dataset(c.combined_path(), out.combined_incident);
    return {PipelineStage::Combine, {c.combined_path()},
            std::to_string(out.combined_incident.events.size()) + " events, total weight " +
                csv::brief(out.combined_incident.total_weight()) + ", " + std::to_string(out.merge.selected.size()) +
                " near-crashes merged at d_thd " + csv::fmt(out.merge.d_thd)};
}

inline StageResult run_model(const PipelineConfig& c) {
    const auto d = io::read_dataset(c.combined_path());
    const auto m = build_models(d, c.model_options());
    io::write_model(c.model_path(), m);
    return {PipelineStage::Model, {c.model_path()}, std::to_string(m.bundles.size()) + " bundles"};
}

inline StageResult run_generate(const PipelineConfig& c) {
    if (!std::filesystem::is_regular_file(c.model_path()))
        throw Error(ErrorCode::MissingArtifact, "model artifact missing: '" + c.model_path() + "'");
    const auto m = io::read_model(c.model_path());
    const auto s = assemble_synthetic(m, c.n_synthetic, c.seed, c.generate_options());
    io::write_synthetic(c.synthetic_path(), s);
    StageResult r{PipelineStage::Generate, {c.synthetic_path()}, std::to_string(s.events.size()) + " events"};
    if (c.profiles_dt) {
        io::write_profiles(c.profiles_path(), s.events, *c.profiles_dt);
        r.artifacts.push_back(c.profiles_path());
    }
    for (const auto& b : s.bundles)
        log(LogLevel::Info, b.name + ": " + std::to_string(b.accepted) + " accepted of " + std::to_string(b.draws) +
                                " draws");
    return r;
}

inline StageResult run_validate(const PipelineConfig& c) {
    const auto raw = io::read_dataset(c.combined_path());
    const auto syn = io::read_dataset(c.synthetic_path());
    ValidateOptions opt;
    opt.alpha = c.alpha_ks;
    opt.n_perm = c.n_perm;
    opt.seed = mix_seed(c.seed, 0x5a11da7e);
    const auto rep = compare(raw.events, syn.events, opt);
    io::write_json(c.report_path(), io::to_json(rep));
    std::string s = rep.all_non_significant() ? "all parameters non-significant" : "significant differences:";
    for (std::size_t k = 0; k < kNumParams; ++k)
        if (rep.params[k].ks.p_value <= rep.alpha) s += " " + std::string(kParamNames[k]);
    return {PipelineStage::Validate, {c.report_path()}, s};
}

} // namespace pipeline_detail

inline StageResult run_stage(const PipelineConfig& c, PipelineStage s) {
    try {
        switch (s) {
        case PipelineStage::Fit: return pipeline_detail::run_fit(c);
        case PipelineStage::Combine: return pipeline_detail::run_combine(c);
        case PipelineStage::Model: return pipeline_detail::run_model(c);
        case PipelineStage::Generate: return pipeline_detail::run_generate(c);
        case PipelineStage::Validate: return pipeline_detail::run_validate(c);
        }
    } catch (const Error& e) {
        throw e.with_context(to_string(s));
    }
    throw Error(ErrorCode::InvalidConfig, "unknown stage");
}

/// fit -> combine -> model -> generate -> validate, or a single stage.
inline std::vector<StageResult> run_pipeline(const PipelineConfig& c, std::optional<PipelineStage> only = std::nullopt) {
    c.check();
    std::vector<StageResult> results;
    for (auto s : kAllStages) {
        if (only && *only != s) continue;
        results.push_back(run_stage(c, s));
        log(LogLevel::Info, std::string(to_string(s)) + ": " + results.back().summary);
    }
    return results;
}

/// Bootstrap robustness on the combined dataset; writes the bootstrap report.
inline BootstrapReport run_bootstrap(const PipelineConfig& c) {
    try {
        c.check();
        const auto d = io::read_dataset(c.combined_path());
        BootstrapOptions opt;
        opt.fractions = c.fractions;
        opt.reps = c.reps;
        opt.n_synth = c.bootstrap_n_synth;
        opt.alpha = c.alpha_ks;
        opt.n_perm = c.bootstrap_n_perm;
        opt.seed = c.seed;
        opt.model = c.model_options();
        opt.generate = c.generate_options();
        auto rep = bootstrap_robustness(d, opt);
        io::write_json(c.bootstrap_path(), io::to_json(rep, c.alpha_ks));
        return rep;
    } catch (const Error& e) {
        throw e.with_context("bootstrap");
    }
}

} // namespace leadkin
