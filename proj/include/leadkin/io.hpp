#pragma once

// Stage artifacts: params.csv, combined.csv, model.json, synthetic.csv,
// profiles.csv and report JSON. Numbers are written in shortest round-trip form
// so a read/write cycle is lossless and reruns are byte-identical.

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "leadkin/csv.hpp"
#include "leadkin/dataset.hpp"
#include "leadkin/mvdist.hpp"
#include "leadkin/synth.hpp"
#include "leadkin/validate.hpp"

namespace leadkin::io {

using json = nlohmann::json;

inline std::ofstream open_out(const std::string& path) {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::Io, "cannot write '" + path + "'");
    return out;
}

inline void require_file(const std::string& path, std::string_view what = "input") {
    if (!std::filesystem::is_regular_file(path))
        throw Error(ErrorCode::Io, std::string(what) + " file not found: '" + path + "'");
}

namespace detail {

inline std::string field(const csv::Table&, const csv::Row& r, std::optional<std::size_t> col) {
    if (!col || *col >= r.fields.size()) return {};
    return r.fields[*col];
}

inline double number(const csv::Table& t, const csv::Row& r, std::size_t col, std::string_view name) {
    const auto s = field(t, r, col);
    const auto v = csv::to_double(s);
    if (!v)
        throw Error(ErrorCode::MalformedRow,
                    "line " + std::to_string(r.line) + ": non-numeric " + std::string(name) + " '" + s + "'");
    return *v;
}

/// Lowercase with separators removed, so "tau_s", "Tau S" and "taus" match.
inline std::string key(std::string_view s) {
    std::string out;
    for (char c : s)
        if (std::isalnum(static_cast<unsigned char>(c))) out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

inline std::optional<std::size_t> find(const csv::Table& t, const std::vector<std::string_view>& names) {
    for (std::size_t i = 0; i < t.header.size(); ++i)
        for (auto n : names)
            if (key(t.header[i]) == n) return i;
    return std::nullopt;
}

inline const std::array<std::vector<std::string_view>, kNumParams>& param_aliases() {
    static const std::array<std::vector<std::string_view>, kNumParams> a = {{
        {"vc", "v0", "speed"},
        {"a1"},
        {"a2"},
        {"taus", "ts"},
        {"tau1", "t1"},
        {"tau2", "t2"},
    }};
    return a;
}

/// Reads a whole file, turning semicolon or tab separated text into commas.
inline csv::Table read_sniffed(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    std::string text = ss.str();
    const auto eol = text.find('\n');
    const std::string_view head(text.data(), eol == std::string::npos ? text.size() : eol);
    if (head.find(',') == std::string_view::npos) {
        const char sep = head.find(';') != std::string_view::npos ? ';' : '\t';
        std::replace(text.begin(), text.end(), sep, ',');
    }
    std::istringstream is(text);
    return csv::parse(is);
}

} // namespace detail

// ---------------------------------------------------------- params.csv ---

inline void write_params(std::ostream& out, const std::vector<FittedEvent>& events) {
    csv::Writer w(out);
    w.row(std::vector<std::string>{"event_id", "group", "severity", "v_c", "a1", "a2", "tau_s", "tau_1", "tau_2", "r2",
                                   "n_b", "valid", "weight"});
    for (const auto& f : events) {
        const auto& e = f.params;
        w.row(e.event_id, to_string(e.group), to_string(e.severity), e.v_c, e.a1, e.a2, e.tau_s, e.tau_1, e.tau_2, f.r2,
              f.n_b, f.valid ? 1 : 0, f.native_weight ? csv::fmt(*f.native_weight) : std::string());
    }
}

inline void write_params(const std::string& path, const std::vector<FittedEvent>& events) {
    auto out = open_out(path);
    write_params(out, events);
}

inline std::vector<FittedEvent> read_params(const csv::Table& t) {
    const auto id = t.column("event_id"), group = t.column("group"), sev = t.column("severity");
    if (!id || !group || !sev) throw Error(ErrorCode::MalformedRow, "params file needs event_id, group, severity");
    std::array<std::size_t, kNumParams> pc{};
    for (std::size_t k = 0; k < kNumParams; ++k) {
        const auto c = t.column(kParamNames[k]);
        if (!c) throw Error(ErrorCode::MalformedRow, "params file lacks column " + std::string(kParamNames[k]));
        pc[k] = *c;
    }
    const auto r2 = t.column("r2"), nb = t.column("n_b"), valid = t.column("valid"), weight = t.column("weight");
    std::vector<FittedEvent> out;
    for (const auto& r : t.rows) {
        FittedEvent f;
        f.params.event_id = detail::field(t, r, id);
        const auto g = parse_group(detail::field(t, r, group));
        if (!g)
            throw Error(ErrorCode::UnknownGroup,
                        "line " + std::to_string(r.line) + ": unknown group '" + detail::field(t, r, group) + "'");
        f.params.group = *g;
        const auto s = parse_severity(detail::field(t, r, sev));
        if (!s) throw Error(ErrorCode::MalformedRow, "line " + std::to_string(r.line) + ": unknown severity");
        f.params.severity = *s;
        ParamVector p{};
        for (std::size_t k = 0; k < kNumParams; ++k) p[k] = detail::number(t, r, pc[k], kParamNames[k]);
        f.params.set(p);
        if (r2 && !detail::field(t, r, r2).empty()) f.r2 = detail::number(t, r, *r2, "r2");
        if (nb && !detail::field(t, r, nb).empty()) f.n_b = static_cast<int>(detail::number(t, r, *nb, "n_b"));
        if (valid) {
            const auto v = detail::key(detail::field(t, r, valid));
            f.valid = !(v == "0" || v == "false" || v == "no");
        }
        if (weight && !detail::field(t, r, weight).empty()) {
            const double w = detail::number(t, r, *weight, "weight");
            if (!(w > 0.0)) throw Error(ErrorCode::MalformedRow, "line " + std::to_string(r.line) + ": weight must be > 0");
            f.native_weight = w;
        }
        out.push_back(std::move(f));
    }
    return out;
}

inline std::vector<FittedEvent> read_params(const std::string& path) {
    require_file(path, "params");
    return read_params(csv::read_file(path));
}

// -------------------------------------------------------- combined.csv ---

inline void write_dataset(std::ostream& out, const WeightedDataset& d) {
    csv::Writer w(out);
    w.row(std::vector<std::string>{"event_id", "group", "severity", "v_c", "a1", "a2", "tau_s", "tau_1", "tau_2",
                                   "weight", "stage", "attached_to"});
    for (std::size_t i = 0; i < d.events.size(); ++i) {
        const auto& e = d.events[i];
        const std::string host = i < d.provenance.size() ? d.provenance[i].attached_to : std::string();
        w.row(e.event_id, to_string(e.group), to_string(e.severity), e.v_c, e.a1, e.a2, e.tau_s, e.tau_1, e.tau_2,
              e.weight, to_string(d.stage), host);
    }
}

inline void write_dataset(const std::string& path, const WeightedDataset& d) {
    auto out = open_out(path);
    write_dataset(out, d);
}

/// Reads any table of six parameters with an optional weight column: combined.csv,
/// synthetic.csv, or the published parameterized incident dataset. Header names are
/// matched loosely (case and separators ignored; "ts", "t1", "t2" accepted).
inline WeightedDataset read_dataset(const csv::Table& t) {
    std::array<std::size_t, kNumParams> pc{};
    for (std::size_t k = 0; k < kNumParams; ++k) {
        const auto c = detail::find(t, detail::param_aliases()[k]);
        if (!c) throw Error(ErrorCode::MalformedRow, "dataset lacks column " + std::string(kParamNames[k]));
        pc[k] = *c;
    }
    const auto id = detail::find(t, {"eventid", "id", "caseid"});
    const auto weight = detail::find(t, {"weight", "w", "sampleweight"});
    const auto group = detail::find(t, {"group", "sourcegroup"});
    const auto sev = detail::find(t, {"severity"});
    const auto stage = detail::find(t, {"stage"});
    const auto host = detail::find(t, {"attachedto"});

    WeightedDataset d;
    d.stage = Stage::CombinedIncident;
    std::size_t k = 0;
    for (const auto& r : t.rows) {
        EventParams e;
        ParamVector p{};
        for (std::size_t j = 0; j < kNumParams; ++j) p[j] = detail::number(t, r, pc[j], kParamNames[j]);
        e.set(p);
        e.event_id = id ? detail::field(t, r, id) : "row" + std::to_string(k + 1);
        if (weight) {
            e.weight = detail::number(t, r, *weight, "weight");
            if (!(e.weight >= 0.0))
                throw Error(ErrorCode::MalformedRow, "line " + std::to_string(r.line) + ": negative weight");
        }
        if (group)
            if (auto g = parse_group(detail::field(t, r, group))) e.group = *g;
        if (sev)
            if (auto s = parse_severity(detail::field(t, r, sev))) e.severity = *s;
        if (stage && k == 0)
            if (auto s = parse_stage(detail::field(t, r, stage))) d.stage = *s;
        Provenance pv;
        pv.original_weight = e.weight;
        if (host) pv.attached_to = detail::field(t, r, host);
        d.push_back(std::move(e), std::move(pv));
        ++k;
    }
    if (d.events.empty()) throw Error(ErrorCode::EmptyInput, "dataset has no rows");
    return d;
}

inline WeightedDataset read_dataset(const std::string& path) {
    require_file(path, "dataset");
    return read_dataset(detail::read_sniffed(path));
}

// ------------------------------------------------------- synthetic.csv ---

inline void write_synthetic(std::ostream& out, const SyntheticDataset& s) {
    csv::Writer w(out);
    w.row(std::vector<std::string>{"event_id", "bundle", "v_c", "a1", "a2", "tau_s", "tau_1", "tau_2", "weight"});
    for (std::size_t i = 0; i < s.events.size(); ++i) {
        const auto& e = s.events[i];
        w.row(e.event_id, s.bundle_of[i], e.v_c, e.a1, e.a2, e.tau_s, e.tau_1, e.tau_2, e.weight);
    }
}

inline void write_synthetic(const std::string& path, const SyntheticDataset& s) {
    auto out = open_out(path);
    write_synthetic(out, s);
}

inline void write_profiles(std::ostream& out, const std::vector<EventParams>& events, double dt) {
    csv::Writer w(out);
    w.row(std::vector<std::string>{"event_id", "t", "v"});
    for (const auto& e : events)
        for (const auto& s : params_to_profile(e, dt).samples) w.row(e.event_id, s.t, s.v);
}

inline void write_profiles(const std::string& path, const std::vector<EventParams>& events, double dt) {
    auto out = open_out(path);
    write_profiles(out, events, dt);
}

// ---------------------------------------------------------- model.json ---

namespace detail {

inline json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline double number_or(const json& j, const char* key, double fallback) {
    const auto it = j.find(key);
    return it == j.end() || it->is_null() ? fallback : it->get<double>();
}

inline std::size_t param_of(const json& j) {
    const auto name = j.get<std::string>();
    const auto i = param_index(name);
    if (!i) throw Error(ErrorCode::MalformedRow, "unknown parameter '" + name + "' in model");
    return *i;
}

inline Role parse_role(const std::string& s) {
    for (Role r : {Role::Constant, Role::Derived, Role::PointMass, Role::Correlated, Role::Uncorrelated})
        if (to_string(r) == s) return r;
    throw Error(ErrorCode::MalformedRow, "unknown role '" + s + "' in model");
}

} // namespace detail

inline json to_json(const FittedDist& d) {
    return json{{"family", to_string(d.family)},  {"params", d.params},
                {"reflect", d.reflect},           {"shift", d.shift},
                {"shift_estimated", d.shift_estimated}, {"loglik", detail::finite_or_null(d.loglik)},
                {"aic", detail::finite_or_null(d.aic)}};
}

inline FittedDist dist_from_json(const json& j) {
    FittedDist d;
    const auto f = parse_family(j.at("family").get<std::string>());
    if (!f) throw Error(ErrorCode::MalformedRow, "unknown family in model");
    d.family = *f;
    d.params = j.at("params").get<std::vector<double>>();
    if (d.params.size() != static_cast<std::size_t>(family_param_count(d.family)))
        throw Error(ErrorCode::MalformedRow, "wrong parameter count for " + std::string(to_string(d.family)));
    d.reflect = j.value("reflect", false);
    d.shift = j.value("shift", 0.0);
    d.shift_estimated = j.value("shift_estimated", false);
    d.loglik = detail::number_or(j, "loglik", -std::numeric_limits<double>::infinity());
    d.aic = detail::number_or(j, "aic", std::numeric_limits<double>::infinity());
    return d;
}

inline json to_json(const SubmodelBundle& b) {
    json j;
    j["name"] = b.name;
    j["label"] = b.label;
    j["pattern"] = to_string(pattern_of_label(b.label));
    j["train_weight"] = b.train_weight;
    j["weight_share"] = b.train_weight_share;
    j["n_train"] = b.n_train;
    json conds = json::array();
    for (const auto& c : b.conditions)
        conds.push_back({{"param", kParamNames[c.param]}, {"op", c.equal ? "==" : "!="}, {"value", c.value}});
    j["conditions"] = conds;

    json params = json::object();
    for (std::size_t k = 0; k < kNumParams; ++k) {
        json p{{"role", to_string(b.roles[k])}};
        switch (b.roles[k]) {
        case Role::Constant: p["value"] = b.constants[k]; break;
        case Role::Derived: p["source"] = kParamNames[b.source[k]]; break;
        case Role::Uncorrelated:
            if (auto it = b.uncorrelated.find(k); it != b.uncorrelated.end()) p["marginal"] = to_json(it->second);
            break;
        case Role::PointMass:
            if (auto it = b.hurdles.find(k); it != b.hurdles.end()) {
                p["mass_value"] = it->second.mass.mass_value;
                p["mass_probability"] = it->second.mass.mass_probability;
                p["continuous"] = it->second.continuous ? to_json(*it->second.continuous) : json(nullptr);
            }
            break;
        case Role::Correlated: break;
        }
        params[std::string(kParamNames[k])] = p;
    }
    j["params"] = params;

    json corr = json::array();
    for (std::size_t i = 0; i < b.correlated.size(); ++i)
        corr.push_back({{"param", kParamNames[b.correlated[i]]}, {"marginal", to_json(b.correlated_marginals[i])}});
    j["copula"]["params"] = corr;
    json sigma = json::array();
    for (Eigen::Index r = 0; r < b.sigma.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < b.sigma.cols(); ++c) row.push_back(b.sigma(r, c));
        sigma.push_back(row);
    }
    j["copula"]["sigma"] = sigma;

    json tr = json::array();
    for (const auto& t : b.transforms) {
        json regs = json::array();
        for (std::size_t k = 0; k < t.regressors.size(); ++k)
            regs.push_back({{"param", kParamNames[t.regressors[k]]}, {"coefficient", t.coefficients[k]}});
        tr.push_back({{"param", kParamNames[t.param]}, {"intercept", t.intercept}, {"regressors", regs}});
    }
    j["transforms"] = tr;

    j["empirical"] = b.empirical;
    if (b.empirical) {
        json ev = json::array();
        for (std::size_t i = 0; i < b.empirical_events.size(); ++i)
            ev.push_back({{"params", b.empirical_events[i]}, {"weight", b.empirical_weights[i]}});
        j["empirical_events"] = ev;
    }
    return j;
}

inline SubmodelBundle bundle_from_json(const json& j) {
    SubmodelBundle b;
    b.name = j.at("name").get<std::string>();
    b.label = j.at("label").get<int>();
    if (b.label < 1 || b.label > 7) throw Error(ErrorCode::MalformedRow, "bundle label out of range in model");
    b.train_weight = j.value("train_weight", 0.0);
    b.train_weight_share = j.at("weight_share").get<double>();
    b.n_train = j.value("n_train", std::size_t{0});
    for (const auto& c : j.value("conditions", json::array()))
        b.conditions.push_back(
            Condition{detail::param_of(c.at("param")), c.at("op").get<std::string>() == "==", c.at("value").get<double>()});

    const auto& params = j.at("params");
    for (std::size_t k = 0; k < kNumParams; ++k) {
        const auto& p = params.at(std::string(kParamNames[k]));
        b.roles[k] = detail::parse_role(p.at("role").get<std::string>());
        switch (b.roles[k]) {
        case Role::Constant: b.constants[k] = p.at("value").get<double>(); break;
        case Role::Derived: b.source[k] = detail::param_of(p.at("source")); break;
        case Role::Uncorrelated:
            if (p.contains("marginal")) b.uncorrelated[k] = dist_from_json(p.at("marginal"));
            break;
        case Role::PointMass:
            if (p.contains("mass_value")) {
                HurdleDist h;
                h.mass = PointMassSpec{k, p.at("mass_value").get<double>(), p.at("mass_probability").get<double>()};
                if (!p.at("continuous").is_null()) h.continuous = dist_from_json(p.at("continuous"));
                b.hurdles[k] = h;
            }
            break;
        case Role::Correlated: break;
        }
    }

    const auto& cop = j.at("copula");
    for (const auto& c : cop.at("params")) {
        b.correlated.push_back(detail::param_of(c.at("param")));
        b.correlated_marginals.push_back(dist_from_json(c.at("marginal")));
    }
    const auto& sigma = cop.at("sigma");
    const auto n = static_cast<Eigen::Index>(b.correlated.size());
    if (static_cast<Eigen::Index>(sigma.size()) != n) throw Error(ErrorCode::MalformedRow, "sigma size mismatch in model");
    b.sigma.resize(n, n);
    for (Eigen::Index r = 0; r < n; ++r) {
        const auto& row = sigma.at(static_cast<std::size_t>(r));
        if (static_cast<Eigen::Index>(row.size()) != n) throw Error(ErrorCode::MalformedRow, "sigma is not square");
        for (Eigen::Index c = 0; c < n; ++c) b.sigma(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
    }

    for (const auto& t : j.value("transforms", json::array())) {
        TransformSpec s;
        s.param = detail::param_of(t.at("param"));
        s.intercept = t.at("intercept").get<double>();
        for (const auto& r : t.at("regressors")) {
            s.regressors.push_back(detail::param_of(r.at("param")));
            s.coefficients.push_back(r.at("coefficient").get<double>());
        }
        b.transforms.push_back(std::move(s));
    }

    b.empirical = j.value("empirical", false);
    if (b.empirical) {
        for (const auto& e : j.at("empirical_events")) {
            b.empirical_events.push_back(e.at("params").get<ParamVector>());
            b.empirical_weights.push_back(e.at("weight").get<double>());
        }
        if (b.empirical_events.empty()) throw Error(ErrorCode::MalformedRow, "empirical bundle without events");
    }
    return b;
}

inline json to_json(const ModelSet& m) {
    json j;
    j["schema"] = kModelSchema;
    j["total_weight"] = m.total_weight;
    j["options"] = {{"mass_threshold", m.options.mass_threshold}, {"corr_threshold", m.options.corr_threshold},
                    {"alpha_corr", m.options.alpha_corr},         {"max_split_depth", m.options.max_split_depth},
                    {"min_effective", m.options.min_effective},   {"shift_grid", m.options.fit.shift_grid}};
    json bundles = json::array();
    for (const auto& b : m.bundles) bundles.push_back(to_json(b));
    j["bundles"] = bundles;
    return j;
}

inline ModelSet model_from_json(const json& j) {
    if (j.value("schema", std::string()) != kModelSchema)
        throw Error(ErrorCode::MalformedRow, "model schema is not " + std::string(kModelSchema));
    ModelSet m;
    m.total_weight = j.value("total_weight", 0.0);
    if (j.contains("options")) {
        const auto& o = j["options"];
        m.options.mass_threshold = o.value("mass_threshold", m.options.mass_threshold);
        m.options.corr_threshold = o.value("corr_threshold", m.options.corr_threshold);
        m.options.alpha_corr = o.value("alpha_corr", m.options.alpha_corr);
        m.options.max_split_depth = o.value("max_split_depth", m.options.max_split_depth);
        m.options.min_effective = o.value("min_effective", m.options.min_effective);
        m.options.fit.shift_grid = o.value("shift_grid", m.options.fit.shift_grid);
        m.options.fit.min_effective = m.options.min_effective;
    }
    for (const auto& b : j.at("bundles")) m.bundles.push_back(bundle_from_json(b));
    return m;
}

inline void write_json(const std::string& path, const json& j) {
    auto out = open_out(path);
    out << j.dump(2) << '\n';
}

inline json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::MalformedRow, "'" + path + "' is not valid JSON: " + e.what());
    }
}

inline void write_model(const std::string& path, const ModelSet& m) { write_json(path, to_json(m)); }

inline ModelSet read_model(const std::string& path) {
    try {
        return model_from_json(read_json(path));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedRow, "'" + path + "' is not a valid model: " + e.what());
    }
}

// ------------------------------------------------------------- reports ---

inline json ecdf_points(const WeightedEcdf& e) { return json{{"x", e.x}, {"F", e.F}}; }

inline json to_json(const ValidationReport& r, bool with_ecdf = true) {
    json params = json::array();
    for (std::size_t k = 0; k < kNumParams; ++k) {
        const auto& p = r.params[k];
        json row{{"param", kParamNames[k]},
                 {"raw", {{"mean", p.raw.mean}, {"sd", p.raw.sd}}},
                 {"synthetic", {{"mean", p.synthetic.mean}, {"sd", p.synthetic.sd}}},
                 {"statistic", p.ks.statistic},
                 {"p_value", p.ks.p_value},
                 {"n_permutations", p.ks.n_permutations},
                 {"significant", p.ks.p_value <= r.alpha}};
        if (with_ecdf) row["ecdf"] = {{"raw", ecdf_points(p.raw_ecdf)}, {"synthetic", ecdf_points(p.synthetic_ecdf)}};
        params.push_back(row);
    }
    return json{{"kind", "validation"},          {"alpha", r.alpha},
                {"n_raw", r.n_raw},              {"raw_weight", r.raw_weight},
                {"n_synthetic", r.n_synthetic},  {"all_non_significant", r.all_non_significant()},
                {"params", params}};
}

inline json to_json(const BootstrapReport& r, double alpha) {
    json fr = json::array();
    for (const auto& f : r.fractions) {
        json prop = json::object();
        for (std::size_t k = 0; k < kNumParams; ++k) prop[std::string(kParamNames[k])] = f.proportion[k];
        json reps = json::array();
        for (const auto& p : f.rep_p_values) reps.push_back(p);
        fr.push_back({{"fraction", f.fraction},
                      {"reps", f.reps},
                      {"failed", f.failed},
                      {"non_significant_proportion", prop},
                      {"rep_p_values", reps}});
    }
    return json{{"kind", "bootstrap"}, {"alpha", alpha}, {"reps", r.reps}, {"param_order", kParamNames}, {"fractions", fr}};
}

} // namespace leadkin::io
