// Writes the bundled example corpus: simulated lead-vehicle speed traces for the
// four source groups in the event CSV format read by `leadkin fit`.
//
//   make_example_corpus [output.csv] [seed]

#include <fstream>
#include <iostream>
#include <random>

#include "leadkin/csv.hpp"
#include "leadkin/synth.hpp"

using namespace leadkin;

namespace {

struct GroupSpec {
    SourceGroup group;
    int count;
};

EventParams draw(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> n01;
    const auto gamma = [&](double k, double theta) { return std::gamma_distribution<double>(k, theta)(rng); };
    EventParams e;
    for (;;) {
        const double r = u(rng);
        if (r < 0.15) {  // stationary
            e.set({0, 0, 0, 5, 0, 0});
        } else if (r < 0.40) {  // steady deceleration or steady speed
            const double a = u(rng) < 0.2 ? 0.0 : std::min(-1.5 + 0.5 * n01(rng), -0.2);
            e.set({gamma(4.0, 1.5), a, a, a == 0.0 ? 5.0 : 0.0, a == 0.0 ? 0.0 : 5.0, 0.0});
        } else if (r < 0.50) {  // braking to a standstill, then stopped
            const double ts = 0.8 + 2.0 * u(rng);
            const double a = std::min(-2.0 + 0.8 * n01(rng), -0.3);
            e.set({0.0, a, a, ts, 5.0 - ts, 0.0});
        } else if (r < 0.75) {  // hard braking that eases off
            const double a2 = -4.0 + 0.8 * n01(rng);
            const double ts = u(rng) < 0.5 ? 0.0 : gamma(4.0, 0.3);
            const double t1 = 1.6 + 0.35 * n01(rng);
            e.set({gamma(3.0, 2.0), a2 + gamma(3.0, 0.7), a2, ts, t1, 5.0 - ts - t1});
        } else {  // acceleration, braking, then a steady tail
            const double ts = gamma(3.0, 0.5), t1 = gamma(9.0, 0.13);
            e.set({u(rng) < 0.3 ? 0.0 : gamma(2.5, 1.6), -3.0 + n01(rng), 0.6 + 0.4 * n01(rng), ts, t1,
                   std::max(5.0 - ts - t1, 0.0)});
        }
        const bool durations_ok = e.tau_s >= 0.0 && e.tau_1 >= 0.0 && e.tau_2 >= 0.0;
        const bool accel_ok = std::abs(e.a1) <= kGravity && std::abs(e.a2) <= kGravity;
        if (durations_ok && accel_ok && min_speed(e) >= 0.0) return e;
    }
}

} // namespace

int main(int argc, char** argv) {
    const std::string path = argc > 1 ? argv[1] : "example_events.csv";
    const std::uint64_t seed = argc > 2 ? std::stoull(argv[2]) : 2023;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 0.05);
    std::lognormal_distribution<double> survey(3.0, 0.8);

    const std::vector<GroupSpec> groups{{SourceGroup::CissSc, 60},
                                        {SourceGroup::Shrp2Sc, 20},
                                        {SourceGroup::Shrp2Nsc, 70},
                                        {SourceGroup::Shrp2Nc, 150}};
    std::ofstream out(path);
    if (!out) {
        std::cerr << "cannot write " << path << '\n';
        return 2;
    }
    csv::Writer w(out);
    w.row(std::vector<std::string>{"event_id", "group", "severity", "t", "v", "weight"});
    int id = 0;
    for (const auto& g : groups) {
        for (int i = 0; i < g.count; ++i) {
            const auto e = draw(rng);
            const auto k = profile_knots(e);
            Severity sev = Severity::None;
            if (g.group == SourceGroup::CissSc) sev = u(rng) < 0.3 ? Severity::Severe : Severity::NonSevere;
            if (g.group == SourceGroup::Shrp2Sc) sev = Severity::Severe;
            if (g.group == SourceGroup::Shrp2Nsc) sev = Severity::NonSevere;
            const std::string weight = g.group == SourceGroup::CissSc ? csv::fmt(std::round(survey(rng) * 10) / 10) : "";

            // A few recordings that fail the validity rules: too short, or too coarse.
            const double r = u(rng);
            const double start = r < 0.06 ? -2.5 : -5.0;
            const double dt = r > 0.97 ? 0.5 : 0.1;
            const std::string name = std::string(g.group == SourceGroup::Shrp2Nc ? "nc" : "c") + std::to_string(1000 + id++);
            for (int s = 0;; ++s) {
                const double t = std::round((start + s * dt) * 1000.0) / 1000.0;
                if (t > 1e-9) break;
                const double v = std::max(0.0, profile_value(k, t) + (e.v_c == 0.0 && k.v.front() == 0.0 ? 0.0 : noise(rng)));
                w.row(name, to_string(g.group), to_string(sev), t, std::round(v * 1000.0) / 1000.0, weight);
            }
        }
    }
    std::cout << "wrote " << id << " events to " << path << '\n';
    return 0;
}
