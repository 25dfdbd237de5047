// leadkin command-line driver.
//
// Every option maps onto a key of the flat config file, so
//   leadkin --config run.cfg generate --n 500
// reads run.cfg and then overrides `n`. Exit codes: 0 success, 2 input error,
// 3 numerical failure.

#include <CLI11.hpp>

#include <iomanip>

#include "leadkin/pipeline.hpp"

namespace {

using namespace leadkin;

constexpr int kExitInput = 2;
constexpr int kExitNumerical = 3;

/// Options collected from the command line, applied over the config file.
struct Overrides {
    std::vector<std::pair<std::string, CLI::Option*>> opts;
    std::map<std::string, std::string> values;

    CLI::Option* add(CLI::App& app, const std::string& flag, const std::string& key, const std::string& help) {
        auto* o = app.add_option(flag, values[key], help);
        opts.emplace_back(key, o);
        return o;
    }

    void apply(PipelineConfig& c) const {
        for (const auto& [key, o] : opts)
            if (o->count() > 0) set_config_value(c, key, values.at(key));
    }
};

void print_describe(const WeightedDataset& d) {
    const auto m = describe(d);
    std::cout << "n = " << d.events.size() << ", total weight = " << csv::brief(d.total_weight()) << '\n';
    std::cout << std::left << std::setw(8) << "param" << std::right << std::setw(12) << "mean" << std::setw(12) << "sd"
              << '\n';
    for (std::size_t k = 0; k < kNumParams; ++k) {
        std::cout << std::left << std::setw(8) << kParamNames[k] << std::right << std::fixed << std::setprecision(4)
                  << std::setw(12) << m[k].mean << std::setw(12) << m[k].sd << '\n';
    }
}

void print_report(const nlohmann::json& rep) {
    std::cout << std::left << std::setw(8) << "param" << std::right << std::setw(11) << "raw mean" << std::setw(10)
              << "raw sd" << std::setw(11) << "syn mean" << std::setw(10) << "syn sd" << std::setw(9) << "D"
              << std::setw(9) << "p" << '\n';
    for (const auto& p : rep.at("params")) {
        std::cout << std::left << std::setw(8) << p.at("param").get<std::string>() << std::right << std::fixed
                  << std::setprecision(3) << std::setw(11) << p["raw"]["mean"].get<double>() << std::setw(10)
                  << p["raw"]["sd"].get<double>() << std::setw(11) << p["synthetic"]["mean"].get<double>()
                  << std::setw(10) << p["synthetic"]["sd"].get<double>() << std::setw(9)
                  << p["statistic"].get<double>() << std::setw(9) << p["p_value"].get<double>() << '\n';
    }
    std::cout << std::defaultfloat;
}

void print_results(const std::vector<StageResult>& rs) {
    for (const auto& r : rs) {
        std::cout << to_string(r.stage) << ": " << r.summary << '\n';
        for (const auto& a : r.artifacts) std::cout << "  wrote " << a << '\n';
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Piecewise-linear lead-vehicle speed profiles: fit, combine, model, generate, validate"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", "leadkin 1.0");

    Overrides ov;
    std::string config_path;
    int verbose = 0;
    app.add_option("--config", config_path, "Flat key = value configuration file");
    ov.add(app, "--seed", "seed", "Random seed");
    ov.add(app, "--threads", "threads", "Worker threads for fitting (0: all cores)");
    app.add_flag("-v,--verbose", verbose, "More log output (repeatable)");

    auto* fit = app.add_subcommand("fit", "Parameterize raw speed profiles");
    ov.add(*fit, "--input", "input", "Event CSV (event_id, group, severity, t, v[, weight])");
    ov.add(*fit, "--output", "params", "Output params.csv");
    ov.add(*fit, "--lambda", "lambda", "Breakpoint penalty of the loss");
    ov.add(*fit, "--nb-max", "nb_max", "Maximum number of breakpoints");

    auto* comb = app.add_subcommand("combine", "Combine crash and near-crash datasets");
    ov.add(*comb, "--params", "params", "params.csv from the fit stage");
    ov.add(*comb, "--d-thd", "d_thd", "Near-crash distance threshold");
    ov.add(*comb, "--d-thd-quantile", "d_thd_quantile", "Derive the threshold from this quantile of crash distances");
    ov.add(*comb, "--output", "combined", "Output combined.csv");

    auto* model = app.add_subcommand("model", "Fit per-pattern multivariate models");
    ov.add(*model, "--input", "combined", "Combined dataset (combined.csv or the published format)");
    ov.add(*model, "--output", "model", "Output model.json");
    ov.add(*model, "--mass-threshold", "mass_threshold", "Minimum weighted share of a point mass");
    ov.add(*model, "--corr-threshold", "corr_threshold", "Minimum |r| for a correlation to be modeled");
    ov.add(*model, "--alpha-corr", "alpha_corr", "Significance level of correlations");

    auto* gen = app.add_subcommand("generate", "Sample synthetic events from a model");
    ov.add(*gen, "--model", "model", "model.json");
    ov.add(*gen, "--n", "n", "Number of synthetic events");
    ov.add(*gen, "--output", "synthetic", "Output synthetic.csv");
    ov.add(*gen, "--profiles-out", "profiles", "Also write speed time series here");
    ov.add(*gen, "--dt", "dt", "Time step of the written profiles (s)");

    auto* val = app.add_subcommand("validate", "Compare synthetic events with the training data");
    ov.add(*val, "--raw", "combined", "Training dataset");
    ov.add(*val, "--synthetic", "synthetic", "synthetic.csv");
    ov.add(*val, "--alpha", "alpha_ks", "KS significance level");
    ov.add(*val, "--n-perm", "n_perm", "Permutations per KS test");
    ov.add(*val, "--output", "report", "Output report.json");

    auto* boot = app.add_subcommand("bootstrap", "Subsample robustness of the modeling procedure");
    ov.add(*boot, "--input", "combined", "Training dataset");
    ov.add(*boot, "--fractions", "fractions", "Comma separated subsample fractions");
    ov.add(*boot, "--reps", "reps", "Repetitions per fraction");
    ov.add(*boot, "--n-synth", "bootstrap_n_synth", "Synthetic events per repetition");
    ov.add(*boot, "--n-perm", "bootstrap_n_perm", "Permutations per KS test");
    ov.add(*boot, "--alpha", "alpha_ks", "KS significance level");
    ov.add(*boot, "--output", "bootstrap_report", "Output bootstrap JSON");

    auto* desc = app.add_subcommand("describe", "Weighted mean and SD of each parameter");
    std::string describe_input;
    desc->add_option("input", describe_input, "Dataset file")->required();

    auto* pipe = app.add_subcommand("pipeline", "Run fit, combine, model, generate and validate");
    ov.add(*pipe, "--input", "input", "Event CSV");
    ov.add(*pipe, "--workdir", "workdir", "Directory for the stage artifacts");
    ov.add(*pipe, "--n", "n", "Number of synthetic events");
    ov.add(*pipe, "--profiles-dt", "dt", "Also write profiles.csv with this time step");
    std::string stage_name;
    pipe->add_option("--stage", stage_name, "Run only this stage")
        ->check(CLI::IsMember({"fit", "combine", "model", "generate", "validate"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitInput;
    }

    g_log_level = static_cast<LogLevel>(std::min(1 + verbose, 3));

    try {
        PipelineConfig cfg = config_path.empty() ? PipelineConfig{} : load_config(config_path);
        ov.apply(cfg);
        cfg.check();

        if (*desc) {
            print_describe(io::read_dataset(describe_input));
        } else if (*boot) {
            const auto rep = run_bootstrap(cfg);
            std::cout << "fraction";
            for (auto n : kParamNames) std::cout << std::setw(9) << n;
            std::cout << '\n';
            for (const auto& f : rep.fractions) {
                std::cout << std::left << std::setw(8) << f.fraction << std::right << std::fixed << std::setprecision(2);
                for (double p : f.proportion) std::cout << std::setw(9) << p;
                std::cout << std::defaultfloat << "   (" << f.failed << " failed)\n";
            }
            std::cout << "wrote " << cfg.bootstrap_path() << '\n';
        } else if (*pipe) {
            std::optional<PipelineStage> only;
            if (!stage_name.empty()) only = parse_pipeline_stage(stage_name);
            print_results(run_pipeline(cfg, only));
        } else {
            PipelineStage s = PipelineStage::Fit;
            if (*comb) s = PipelineStage::Combine;
            if (*model) s = PipelineStage::Model;
            if (*gen) s = PipelineStage::Generate;
            if (*val) s = PipelineStage::Validate;
            const auto r = run_stage(cfg, s);
            print_results({r});
            if (s == PipelineStage::Validate) print_report(io::read_json(cfg.report_path()));
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return is_input_error(e.code()) ? kExitInput : kExitNumerical;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInput;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInput;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitNumerical;
    }
    return 0;
}
