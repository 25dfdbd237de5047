// Fit one speed trace, then build a model from the bundled example corpus and
// draw a few synthetic lead-vehicle events from it.
//
//   basic_usage [path/to/example_events.csv]

#include <iostream>

#include "leadkin/pipeline.hpp"

using namespace leadkin;

int main(int argc, char** argv) {
    // Brake hard from 12 m/s for two seconds, then hold speed.
    SpeedProfile p;
    p.event_id = "demo";
    p.severity = Severity::None;
    for (int i = 0; i <= 50; ++i) {
        const double t = -5.0 + 0.1 * i;
        p.samples.push_back({t, t < -3.0 ? 12.0 - 3.0 * (t + 5.0) : 6.0, sample_weight(t)});
    }
    const FitConfig cfg;
    const auto best = select_best(fit_candidates(p, cfg, 1));
    const auto e = extract_params(best, cfg);
    std::cout << "breakpoints: " << best.n_b << ", v_c " << csv::brief(e.v_c, 3) << ", a1 " << csv::brief(e.a1, 3)
              << ", a2 " << csv::brief(e.a2, 3) << "\n";

    PipelineConfig c;
    c.input = argc > 1 ? argv[1] : LEADKIN_EXAMPLE_DATA;
    c.workdir = "basic_usage_out";
    c.n_synthetic = 1000;
    c.n_perm = 200;
    for (const auto& r : run_pipeline(c)) std::cout << to_string(r.stage) << ": " << r.summary << "\n";
}
