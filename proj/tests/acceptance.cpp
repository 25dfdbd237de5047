// Acceptance checks. Prints one PASS/FAIL/SKIP line per criterion and exits
// non-zero if any criterion fails.
//
//   acceptance [criterion numbers...]     (default: all)

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "leadkin/pipeline.hpp"
#include "support/corpus.hpp"
#include "support/profiles.hpp"

#ifndef LEADKIN_SOURCE_DIR
#define LEADKIN_SOURCE_DIR "."
#endif

using namespace leadkin;

namespace {

struct Outcome {
    enum { Pass, Fail, Skip } status = Fail;
    std::string detail;
};

Outcome pass(std::string d) { return {Outcome::Pass, std::move(d)}; }
Outcome fail(std::string d) { return {Outcome::Fail, std::move(d)}; }
Outcome verdict(bool ok, std::string d) { return {ok ? Outcome::Pass : Outcome::Fail, std::move(d)}; }

std::string num(double v, int digits = 4) { return csv::brief(v, digits); }

// ------------------------------------------------------------------ 1 ---

Outcome combination_algebra() {
    // Raw/valid counts 52/49 (CISS), 24/20 (SHRP2 severe), 106/63 (SHRP2 non-severe).
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<FittedEvent> ev;
    const auto add = [&](SourceGroup g, Severity s, int raw, int valid, double vmax) {
        for (int i = 0; i < raw; ++i) {
            FittedEvent f;
            f.params.event_id = std::string(to_string(g)) + "_" + std::to_string(i);
            f.params.group = g;
            f.params.severity = s;
            f.params.set({vmax * u(rng), -3.0 * u(rng), -4.0 * u(rng), 2.0 * u(rng), 1.0 + u(rng), 1.0 + u(rng)});
            f.valid = i < valid;
            if (g == SourceGroup::CissSc) f.native_weight = 10.0 + 400.0 * u(rng);
            ev.push_back(f);
        }
    };
    add(SourceGroup::CissSc, Severity::Severe, 52, 49, 15.0);
    add(SourceGroup::Shrp2Sc, Severity::Severe, 24, 20, 7.9);
    add(SourceGroup::Shrp2Nsc, Severity::NonSevere, 106, 63, 5.0);
    add(SourceGroup::Shrp2Nc, Severity::None, 40, 40, 6.0);

    const auto out = combine(ev);
    const double eta = out.plan.eta_ns;
    const bool eta_ok = std::abs(eta - 106.0 / 130.0) <= 1e-9 && std::abs(eta - 0.81538) < 5e-6;
    const double crash_total = out.combined_crash.total_weight();
    const double incident_total = out.combined_incident.total_weight();
    const bool ok = eta_ok && out.plan.n_cmb == 132 && std::abs(crash_total - 132.0) <= 1e-9 &&
                    std::abs(incident_total - 132.0) <= 1e-9;
    return verdict(ok, "eta_ns " + num(eta, 10) + ", n_cmb " + std::to_string(out.plan.n_cmb) + ", sum w " +
                           num(crash_total, 15) + " (after merge " + num(incident_total, 15) + ")");
}

// ------------------------------------------------------------------ 2 ---

Outcome fit_recovery() {
    std::mt19937_64 rng(2024);
    const int n = 500;
    int match = 0, r2_ok = 0;
    const FitConfig cfg;
    for (int i = 0; i < n; ++i) {
        const int nb = i % 4;
        const double t_end = i % 2 ? kCrashCutoff : 0.0;
        const auto truth = testsupport::random_truth(nb, t_end, rng);
        const auto p = testsupport::sample_profile(truth, t_end, 0.05, rng, "p" + std::to_string(i),
                                                   t_end < 0 ? Severity::Severe : Severity::None);
        const auto best = select_best(fit_candidates(p, cfg, mix_seed(7, static_cast<std::uint64_t>(i))));
        bool ok = best.n_b == nb;
        for (int k = 0; ok && k < nb; ++k) ok = std::abs(best.breakpoints[k] - truth.breakpoints[k]) <= 0.15;
        match += ok;
        r2_ok += best.adj_r_squared > 0.9;
    }
    const double m = static_cast<double>(match) / n, r = static_cast<double>(r2_ok) / n;
    return verdict(m >= 0.95 && r >= 0.98,
                   "n_b and breakpoints match " + num(100 * m) + "%, adjusted R^2 > 0.9 in " + num(100 * r) + "%");
}

// ------------------------------------------------------------------ 3 ---

Outcome loss_oracle() {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const FitConfig cfg;
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        const double max_v = i < 10 ? 0.0 : 40.0 * u(rng);
        const double dv = i < 10 ? 0.0 : max_v * u(rng);
        const int nb = i % 4;
        const double r2 = u(rng);
        const double direct = (cfg.epsilon + cfg.lambda * max_v / (dv + cfg.epsilon)) * nb - r2;
        worst = std::max(worst, std::abs(loss_value(max_v, dv, nb, r2, cfg.lambda, cfg.epsilon) - direct));
    }
    return verdict(worst <= 1e-12, "max |difference| " + num(worst, 3) + " over 100 tuples (10 with max v = 0)");
}

// ------------------------------------------------------------------ 4 ---

Outcome round_trip() {
    const auto d = testsupport::ground_truth_corpus(300, 42);
    const auto models = build_models(d);
    const auto syn = assemble_synthetic(models, 10000, 4242);
    const auto rep = compare(d.events, syn.events, {.alpha = 0.10, .n_perm = 1000, .seed = 4});
    double min_p = 1.0, worst_rel = 0.0;
    for (const auto& p : rep.params) {
        min_p = std::min(min_p, p.ks.p_value);
        worst_rel = std::max(worst_rel, std::abs(p.synthetic.mean - p.raw.mean) / std::abs(p.raw.mean));
        worst_rel = std::max(worst_rel, std::abs(p.synthetic.sd - p.raw.sd) / p.raw.sd);
    }
    return verdict(rep.all_non_significant() && worst_rel < 0.15,
                   std::to_string(models.bundles.size()) + " bundles, min KS p " + num(min_p, 3) +
                       ", worst relative mean/SD difference " + num(100 * worst_rel, 3) + "%");
}

// ------------------------------------------------------------------ 5 ---

Outcome bootstrap() {
    const auto d = testsupport::ground_truth_corpus(300, 42);
    BootstrapOptions opt;
    opt.reps = 20;
    opt.fractions = {0.9, 0.8};
    opt.n_synth = 1000;
    opt.seed = 5;
    const auto rep = bootstrap_robustness(d, opt);
    bool ok = true;
    std::string s;
    for (const auto& f : rep.fractions) {
        const double lo = *std::min_element(f.proportion.begin(), f.proportion.end());
        ok = ok && lo > 0.1 && f.failed < f.reps;
        s += (s.empty() ? "" : "; ") + std::string("fraction ") + num(f.fraction, 2) + ": min proportion " + num(lo, 3) +
             " (" + std::to_string(f.failed) + " failed)";
    }
    return verdict(ok, s);
}

// ------------------------------------------------------------------ 6 ---

Outcome merge_conservation() {
    double worst_total = 0.0, worst_split = 0.0;
    int merged = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::normal_distribution<double> n01;
        const auto draw = [&](const std::string& id) {
            EventParams e;
            e.event_id = id;
            e.set({5 + 2 * n01(rng), -2 + n01(rng), -3 + n01(rng), 1 + 0.4 * n01(rng), 1.5 + 0.4 * n01(rng),
                   2 + 0.4 * n01(rng)});
            return e;
        };
        WeightedDataset crashes;
        crashes.stage = Stage::CombinedCrash;
        const int nc = 10 + static_cast<int>(u(rng) * 40), nn = static_cast<int>(u(rng) * 80);
        for (int i = 0; i < nc; ++i) {
            auto e = draw("c" + std::to_string(i));
            e.weight = 0.1 + 3.0 * u(rng);
            crashes.push_back(e);
        }
        std::vector<EventParams> near;
        for (int i = 0; i < nn; ++i) near.push_back(draw("n" + std::to_string(i)));
        const auto [inc, res] = merge_near_crashes(crashes, near, {});
        merged += static_cast<int>(res.selected.size());
        worst_total = std::max(worst_total, std::abs(inc.total_weight() - crashes.total_weight()));

        std::map<std::string, double> sums;
        for (std::size_t i = 0; i < inc.events.size(); ++i) {
            const auto& host = inc.provenance[i].attached_to.empty() ? inc.events[i].event_id : inc.provenance[i].attached_to;
            sums[host] += inc.events[i].weight;
        }
        for (const auto& c : crashes.events)
            worst_split = std::max(worst_split, std::abs(sums[c.event_id] - c.weight) / c.weight);
    }
    return verdict(worst_total <= 1e-9 && worst_split <= 1e-12,
                   std::to_string(merged) + " near-crashes merged over 100 seeds; max total drift " +
                       num(worst_total, 3) + ", max relative split error " + num(worst_split, 3));
}

// ------------------------------------------------------------------ 7 ---

Outcome ks_calibration() {
    int rejections = 0;
    const std::vector<double> w(200, 1.0);
    for (std::uint64_t trial = 0; trial < 100; ++trial) {
        std::mt19937_64 rng(1000 + trial);
        std::normal_distribution<double> n01;
        std::vector<double> x(200), y(200);
        for (auto& v : x) v = n01(rng);
        for (auto& v : y) v = n01(rng);
        rejections += weighted_ks_test(x, w, y, w, 500, trial).p_value <= 0.10;
    }
    const double rate = rejections / 100.0;
    return verdict(rate >= 0.04 && rate <= 0.18, "rejection rate " + num(rate, 3) + " at alpha 0.10");
}

// ------------------------------------------------------------------ 8 ---

Outcome published_dataset() {
    const char* path = std::getenv("LEADKIN_PUBLISHED_DATASET");
    if (!path || !*path) return {Outcome::Skip, "LEADKIN_PUBLISHED_DATASET not set"};
    const auto d = io::read_dataset(path);
    const auto m = describe(d);
    const std::array<std::pair<double, double>, kNumParams> expected{
        {{2.01, 4.69}, {-1.37, 1.82}, {-0.95, 1.72}, {1.73, 2.07}, {1.98, 1.64}, {1.18, 1.30}}};
    double worst = 0.0;
    for (std::size_t k = 0; k < kNumParams; ++k)
        worst = std::max({worst, std::abs(m[k].mean - expected[k].first), std::abs(m[k].sd - expected[k].second)});
    const auto syn = assemble_synthetic(build_models(d), 10000, 8);
    const auto rep = compare(d.events, syn.events, {.alpha = 0.10, .n_perm = 2000, .seed = 8});
    double min_p = 1.0;
    for (const auto& p : rep.params) min_p = std::min(min_p, p.ks.p_value);
    return verdict(worst <= 0.02 && min_p > 0.10,
                   "max |describe - reference| " + num(worst, 3) + ", min KS p " + num(min_p, 3));
}

// ------------------------------------------------------------------ 9 ---

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome determinism() {
    const auto root = std::filesystem::temp_directory_path() / "leadkin_acceptance_determinism";
    std::filesystem::remove_all(root);
    std::istringstream cfg_text("input = " LEADKIN_SOURCE_DIR "/data/example_events.csv\n"
                                "seed = 99\n"
                                "n = 5000\n"
                                "n_perm = 500\n");
    PipelineConfig base;
    apply_config(base, cfg_text);
    std::vector<std::string> names;
    for (const char* run : {"a", "b"}) {
        auto c = base;
        c.workdir = (root / run).string();
        c.threads = run[0] == 'a' ? 1 : 4;
        names.clear();
        for (const auto& r : run_pipeline(c))
            for (const auto& a : r.artifacts) names.push_back(std::filesystem::path(a).filename().string());
    }
    std::size_t same = 0;
    for (const auto& n : names) same += slurp(root / "a" / n) == slurp(root / "b" / n) && !slurp(root / "a" / n).empty();
    std::filesystem::remove_all(root);
    return verdict(names.size() == 5 && same == names.size(),
                   std::to_string(same) + " of " + std::to_string(names.size()) +
                       " artifacts byte-identical (1 vs 4 fitting threads)");
}

struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
};

} // namespace

int main(int argc, char** argv) {
    g_log_level = LogLevel::Quiet;
    const std::vector<Criterion> all{
        {1, "combination algebra", 1.0, combination_algebra},
        {2, "fit recovery", 60.0, fit_recovery},
        {3, "loss formula oracle", 1.0, loss_oracle},
        {4, "round-trip distribution fidelity", 300.0, round_trip},
        {5, "bootstrap robustness", 900.0, bootstrap},
        {6, "near-crash merge conservation", 10.0, merge_conservation},
        {7, "weighted KS calibration", 60.0, ks_calibration},
        {8, "published-dataset reproduction", 300.0, published_dataset},
        {9, "pipeline determinism", 300.0, determinism},
    };
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

    int failures = 0;
    for (const auto& c : all) {
        if (!wanted.empty() && !wanted.count(c.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = fail(std::string("threw: ") + e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (o.status == Outcome::Pass && secs > c.budget_s) {
            o.status = Outcome::Fail;
            o.detail += "; over the " + num(c.budget_s) + " s budget";
        }
        const char* tag = o.status == Outcome::Pass ? "PASS" : o.status == Outcome::Skip ? "SKIP" : "FAIL";
        failures += o.status == Outcome::Fail;
        std::cout << "[" << tag << "] " << c.id << ". " << c.name << ": " << o.detail << " (" << num(secs, 3) << " s)"
                  << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
