#include <catch_amalgamated.hpp>

#include <random>

#include "leadkin/combine.hpp"

using namespace leadkin;
using Catch::Approx;

namespace {

FittedEvent make(std::string id, SourceGroup g, double v_c, bool valid = true, double native = 1.0) {
    FittedEvent f;
    f.params.event_id = std::move(id);
    f.params.group = g;
    f.params.severity = g == SourceGroup::Shrp2Nc ? Severity::None
                        : g == SourceGroup::Shrp2Nsc ? Severity::NonSevere
                                                     : Severity::Severe;
    f.params.v_c = v_c;
    f.params.a1 = -1.0 - 0.1 * v_c;
    f.params.a2 = -2.0;
    f.params.tau_s = 0.5;
    f.params.tau_1 = 1.0 + 0.05 * v_c;
    f.params.tau_2 = 3.5 - 0.05 * v_c;
    f.valid = valid;
    if (g == SourceGroup::CissSc) f.native_weight = native;
    return f;
}

// Table I counts: CISS 52 raw / 49 valid, SHRP2_sc 24/20, SHRP2_nsc 106/63.
std::vector<FittedEvent> table_one_corpus(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<FittedEvent> ev;
    const auto add = [&](SourceGroup g, int raw, int valid, double vmax) {
        for (int i = 0; i < raw; ++i) {
            auto f = make(std::string(to_string(g)) + "_" + std::to_string(i), g, vmax * u(rng), i < valid,
                          10.0 + 400.0 * u(rng));
            f.params.a1 = -3.0 * u(rng);
            f.params.a2 = -4.0 * u(rng);
            f.params.tau_s = 2.0 * u(rng);
            ev.push_back(f);
        }
    };
    add(SourceGroup::CissSc, 52, 49, 15.0);
    add(SourceGroup::Shrp2Sc, 24, 20, 7.9);
    add(SourceGroup::Shrp2Nsc, 106, 63, 5.0);
    return ev;
}

} // namespace

TEST_CASE("trim_weights", "[combine]") {
    const std::vector<double> same{2, 2, 2, 2};
    CHECK(trim_weights(same) == same);

    // Oracle: mean 25.75, sample SD = sqrt(((24.75^2)*3 + 74.25^2)/3), median 1.
    const std::vector<double> w{1, 1, 1, 100};
    const double sd = std::sqrt((3 * 24.75 * 24.75 + 74.25 * 74.25) / 3.0);
    const double cv = sd / 25.75;
    CHECK(cv == Approx(1.922).epsilon(1e-3));
    const double w0 = 3.5 * std::sqrt(1 + cv * cv);
    CHECK(w0 == Approx(7.58).margin(0.005));
    const auto t = trim_weights(w);
    CHECK(t[0] == 1.0);
    CHECK(t[3] == Approx(w0).epsilon(1e-12));

    std::mt19937_64 rng(3);
    std::lognormal_distribution<double> ln(0.0, 1.5);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> r(30);
        for (auto& x : r) x = ln(rng);
        const double cut = trim_cut_point(r);
        for (double x : trim_weights(r)) CHECK(x <= cut);
    }
    CHECK_THROWS_AS(trim_cut_point(std::vector<double>{}), Error);
}

TEST_CASE("scale_weights and SHRP2 group weights", "[combine]") {
    CHECK(scale_weights(std::vector<double>{1, 1}, 2) == std::vector<double>{1, 1});
    const auto s = scale_weights(std::vector<double>{1, 3}, 2);
    CHECK(s[0] == Approx(0.5));
    CHECK(s[1] == Approx(1.5));

    CHECK(shrp2_group_weight(24, 106, 20, 63, SourceGroup::Shrp2Sc) == Approx(83.0 * 24 / (130.0 * 20)).epsilon(1e-12));
    CHECK(shrp2_group_weight(24, 106, 20, 63, SourceGroup::Shrp2Sc) == Approx(0.7662).margin(5e-5));
    // 83*106/(130*63) = 8798/8190 = 1.07424.
    CHECK(shrp2_group_weight(24, 106, 20, 63, SourceGroup::Shrp2Nsc) == Approx(8798.0 / 8190.0).epsilon(1e-12));
    CHECK(shrp2_group_weight(24, 106, 20, 63, SourceGroup::Shrp2Nsc) == Approx(1.0742).margin(5e-5));
    CHECK(shrp2_group_weight(10, 30, 10, 30, SourceGroup::Shrp2Sc) == Approx(1.0));
    CHECK(shrp2_group_weight(10, 30, 10, 30, SourceGroup::Shrp2Nsc) == Approx(1.0));
}

TEST_CASE("combination with Table I counts", "[combine]") {
    std::mt19937_64 rng(11);
    const auto ev = table_one_corpus(rng);
    const auto counts = count_groups(ev);
    CHECK(counts.raw == std::array<int, 3>{52, 24, 106});
    CHECK(counts.valid == std::array<int, 3>{49, 20, 63});

    const auto pre = preprocess(ev, counts);
    double w1 = 0, w23 = 0;
    for (const auto& e : pre.events) (e.group == SourceGroup::CissSc ? w1 : w23) += e.weight;
    CHECK(w1 == Approx(49.0).epsilon(1e-12));
    CHECK(w23 == Approx(83.0).epsilon(1e-12));

    const auto plan = build_plan(pre, counts);
    CHECK(std::abs(plan.eta_ns - 106.0 / 130.0) < 1e-12);
    CHECK(plan.n_cmb == 132);
    CHECK(std::abs(plan.n_ns + plan.n_hss + plan.n_lss - 132.0) < 1e-9);

    const auto cc = reweight_combine(pre, plan);
    CHECK(cc.stage == Stage::CombinedCrash);
    CHECK(std::abs(cc.total_weight() - 132.0) < 1e-9);
    double lss = 0, hss = 0;
    for (const auto& e : cc.events) {
        CHECK(e.weight > 0.0);
        if (e.group == SourceGroup::Shrp2Sc || (e.group == SourceGroup::CissSc && e.v_c <= plan.v_c_split)) lss += e.weight;
        if (e.group == SourceGroup::CissSc && e.v_c > plan.v_c_split) hss += e.weight;
    }
    CHECK(std::abs(lss - plan.n_lss) < 1e-9);
    CHECK(std::abs(hss - plan.n_hss) < 1e-9);
}

TEST_CASE("reweighting micro-dataset matches hand algebra", "[combine]") {
    // Split at 5 (max SHRP2_sc v_c). eta_ns = 0.5, W_hss = 1, W_lss = 3, eta_hss = 0.5,
    // n_cmb = 6, n'_ns = 3, n'_hss = n'_lss = 1.5.
    std::vector<FittedEvent> ev{
        make("c_low", SourceGroup::CissSc, 3.0), make("c_high", SourceGroup::CissSc, 10.0),
        make("s_a", SourceGroup::Shrp2Sc, 5.0),  make("s_b", SourceGroup::Shrp2Sc, 2.0),
        make("n_a", SourceGroup::Shrp2Nsc, 1.0), make("n_b", SourceGroup::Shrp2Nsc, 4.0),
    };
    const auto counts = count_groups(ev);
    const auto pre = preprocess(ev, counts);
    const auto plan = build_plan(pre, counts);
    CHECK(plan.v_c_split == 5.0);
    CHECK(plan.eta_ns == 0.5);
    CHECK(plan.W_hss == Approx(1.0));
    CHECK(plan.W_lss == Approx(3.0));
    CHECK(plan.eta_hss == Approx(0.5));
    CHECK(plan.n_ns == Approx(3.0));
    CHECK(plan.n_hss == Approx(1.5));
    CHECK(plan.n_lss == Approx(1.5));

    const auto cc = reweight_combine(pre, plan);
    std::map<std::string, double> w;
    for (const auto& e : cc.events) w[e.event_id] = e.weight;
    CHECK(w["c_low"] == Approx(0.5));
    CHECK(w["c_high"] == Approx(1.5));
    CHECK(w["s_a"] == Approx(0.5));
    CHECK(w["s_b"] == Approx(0.5));
    CHECK(w["n_a"] == Approx(1.5));
    CHECK(w["n_b"] == Approx(1.5));
}

TEST_CASE("no high-speed CISS crashes puts all severe mass on the low branch", "[combine]") {
    std::vector<FittedEvent> ev{
        make("c1", SourceGroup::CissSc, 1.0), make("c2", SourceGroup::CissSc, 2.0),
        make("s1", SourceGroup::Shrp2Sc, 6.0), make("n1", SourceGroup::Shrp2Nsc, 1.0),
    };
    const auto counts = count_groups(ev);
    const auto pre = preprocess(ev, counts);
    const auto plan = build_plan(pre, counts);
    CHECK(plan.eta_hss == 0.0);
    CHECK(plan.n_hss == 0.0);
    const auto cc = reweight_combine(pre, plan);
    CHECK(cc.total_weight() == Approx(4.0).epsilon(1e-12));
}

TEST_CASE("empty and degenerate groups", "[combine]") {
    std::vector<FittedEvent> ev{make("c1", SourceGroup::CissSc, 1.0), make("s1", SourceGroup::Shrp2Sc, 6.0)};
    const auto counts = count_groups(ev);
    try {
        (void)preprocess(ev, counts);
        FAIL("expected EmptyGroup");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::EmptyGroup);
    }

    CombinePlan plan;
    plan.n_lss = 1.0;
    plan.W_lss = 0.0;
    try {
        (void)reweight_combine(WeightedDataset{}, plan);
        FAIL("expected DegenerateSplit");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::DegenerateSplit);
    }
}

TEST_CASE("standardized_distance", "[combine]") {
    ZStats z;
    z.mean = {0, 0, 0, 0, 0, 0};
    z.sd = {2, 1, 1, 0.5, 1, 1};
    EventParams a, b;
    a.set({1, -1, -2, 0.5, 1, 2});
    CHECK(standardized_distance(a, a, z) == 0.0);
    b = a;
    b.v_c += 2.0;
    CHECK(standardized_distance(a, b, z) == Approx(1.0));

    std::mt19937_64 rng(5);
    std::normal_distribution<double> n01;
    for (int i = 0; i < 50; ++i) {
        ParamVector pa, pb;
        for (auto& x : pa) x = n01(rng);
        for (auto& x : pb) x = n01(rng);
        a.set(pa);
        b.set(pb);
        CHECK(standardized_distance(a, b, z) == standardized_distance(b, a, z));
    }

    z.sd[2] = 0.0;
    try {
        (void)standardized_distance(a, b, z);
        FAIL("expected ZeroVariance");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ZeroVariance);
    }
}

TEST_CASE("merge_near_crashes splits weight and conserves totals", "[combine]") {
    WeightedDataset crashes;
    crashes.stage = Stage::CombinedCrash;
    std::mt19937_64 rng(17);
    std::normal_distribution<double> n01;
    for (int i = 0; i < 20; ++i) {
        EventParams e;
        e.event_id = "c" + std::to_string(100 + i);
        e.set({5 + 2 * n01(rng), -2 + n01(rng), -3 + n01(rng), 1 + 0.3 * n01(rng), 1 + 0.3 * n01(rng), 2 + 0.3 * n01(rng)});
        e.weight = 0.5 + 0.1 * i;
        crashes.push_back(e);
    }
    std::vector<EventParams> ncs;
    // An exact copy of crash 3 is selected with d_min = 0; a far outlier is not.
    EventParams copy = crashes.events[3];
    copy.event_id = "nc_copy";
    copy.group = SourceGroup::Shrp2Nc;
    copy.severity = Severity::None;
    ncs.push_back(copy);
    EventParams far = copy;
    far.event_id = "nc_far";
    far.v_c += 100.0;
    ncs.push_back(far);

    const double total = crashes.total_weight();
    const auto [inc, res] = merge_near_crashes(crashes, ncs, {});
    CHECK(inc.stage == Stage::CombinedIncident);
    CHECK(inc.total_weight() == Approx(total).epsilon(1e-12));
    REQUIRE(res.selected.size() == 1);
    CHECK(res.selected[0].near_crash_id == "nc_copy");
    CHECK(res.selected[0].crash_id == "c103");
    CHECK(res.selected[0].d_min == 0.0);
    CHECK(res.weight_splits.at("c103") == 1);
    const double w3 = crashes.events[3].weight;
    for (std::size_t i = 0; i < inc.events.size(); ++i) {
        const auto& e = inc.events[i];
        if (e.event_id == "c103" || e.event_id == "nc_copy") CHECK(e.weight == Approx(w3 / 2));
        if (e.event_id == "nc_copy") CHECK(inc.provenance[i].attached_to == "c103");
        CHECK(e.event_id != "nc_far");
    }
    CHECK(inc.events.size() == 21);

    // Unit crash weight with one attached near-crash gives 0.5 each.
    WeightedDataset two;
    two.push_back(crashes.events[0]);
    two.push_back(crashes.events[1]);
    two.events[0].weight = 1.0;
    EventParams nc0 = two.events[0];
    nc0.event_id = "n0";
    const auto [inc2, res2] = merge_near_crashes(two, std::vector<EventParams>{nc0}, {});
    CHECK(inc2.events[0].weight == 0.5);
    CHECK(inc2.events[1].weight == 0.5);
}

TEST_CASE("ties go to the smallest crash id", "[combine]") {
    WeightedDataset crashes;
    EventParams a, b, c;
    a.set({1, -1, -1, 1, 1, 1});
    b.set({3, -1, -1, 1, 1, 1});
    c.set({2, -2, -2, 2, 2, 2});
    a.event_id = "zeta";
    b.event_id = "alpha";
    c.event_id = "mid";
    crashes.push_back(a);
    crashes.push_back(b);
    crashes.push_back(c);
    EventParams nc;
    nc.set({2, -1, -1, 1, 1, 1});
    nc.event_id = "nc";
    MergeOptions opt;
    opt.d_thd = 100.0;
    const auto [inc, res] = merge_near_crashes(crashes, std::vector<EventParams>{nc}, opt);
    REQUIRE(res.selected.size() == 1);
    CHECK(res.selected[0].crash_id == "alpha");
}

TEST_CASE("d_thd quantile mode", "[combine]") {
    WeightedDataset crashes;
    std::mt19937_64 rng(23);
    std::normal_distribution<double> n01;
    for (int i = 0; i < 40; ++i) {
        EventParams e;
        e.event_id = "c" + std::to_string(i);
        ParamVector p;
        for (auto& x : p) x = n01(rng);
        e.set(p);
        crashes.push_back(e);
    }
    const auto d = crash_min_distances(crashes);
    CHECK(d.size() == 40);
    for (double x : d) CHECK(x > 0.0);
    const double q0 = d_thd_from_quantile(crashes, 0.0);
    const double q1 = d_thd_from_quantile(crashes, 1.0);
    CHECK(q0 == Approx(*std::min_element(d.begin(), d.end())));
    CHECK(q1 == Approx(*std::max_element(d.begin(), d.end())));
    CHECK(d_thd_from_quantile(crashes, 0.5) <= q1);
}

TEST_CASE("full combine keeps n_cmb through the merge", "[combine]") {
    std::mt19937_64 rng(29);
    auto ev = table_one_corpus(rng);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 60; ++i) {
        auto f = make("nc_" + std::to_string(i), SourceGroup::Shrp2Nc, 6.0 * u(rng));
        f.params.a1 = -3.0 * u(rng);
        f.params.a2 = -4.0 * u(rng);
        f.params.tau_s = 2.0 * u(rng);
        ev.push_back(f);
    }
    const auto out = combine(ev);
    CHECK(std::abs(out.combined_incident.total_weight() - 132.0) < 1e-9);
    for (const auto& s : out.merge.selected) CHECK(s.d_min <= out.merge.d_thd);
    CHECK(out.combined_incident.events.size() == 132 + out.merge.selected.size());
}
