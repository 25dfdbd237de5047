#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "leadkin/pipeline.hpp"
#include "support/corpus.hpp"

using namespace leadkin;
using Catch::Approx;

namespace {

std::filesystem::path scratch(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("leadkin_test_io_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

csv::Table table(const std::string& text) {
    std::istringstream in(text);
    return csv::parse(in);
}

} // namespace

TEST_CASE("params.csv round trip", "[io]") {
    std::vector<FittedEvent> ev(3);
    ev[0].params.event_id = "a";
    ev[0].params.set({1.25, -0.1, -3.3333333333333335, 0.5, 2.0, 2.5});
    ev[0].native_weight = 17.5;
    ev[0].r2 = 0.987654321;
    ev[0].n_b = 2;
    ev[1].params.event_id = "b";
    ev[1].params.group = SourceGroup::Shrp2Nc;
    ev[1].params.severity = Severity::None;
    ev[1].valid = false;
    ev[2].params.event_id = "c";
    ev[2].params.group = SourceGroup::Shrp2Nsc;
    ev[2].params.severity = Severity::NonSevere;
    ev[2].params.v_c = 1e-17;

    std::ostringstream out;
    io::write_params(out, ev);
    const auto back = io::read_params(table(out.str()));
    REQUIRE(back.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(back[i].params.event_id == ev[i].params.event_id);
        CHECK(back[i].params.group == ev[i].params.group);
        CHECK(back[i].params.severity == ev[i].params.severity);
        CHECK(back[i].params.vec() == ev[i].params.vec());
        CHECK(back[i].valid == ev[i].valid);
        CHECK(back[i].native_weight == ev[i].native_weight);
        CHECK(back[i].r2 == ev[i].r2);
        CHECK(back[i].n_b == ev[i].n_b);
    }
    std::ostringstream again;
    io::write_params(again, back);
    CHECK(again.str() == out.str());

    CHECK_THROWS_AS(io::read_params(table("event_id,group,severity,v_c,a1,a2,tau_s,tau_1,tau_2\nx,bogus,None,1,0,0,5,0,0\n")),
                    Error);
    CHECK_THROWS_AS(io::read_params(table("event_id,group,severity,v_c,a1,a2,tau_s,tau_1,tau_2\nx,SHRP2_nc,None,NaN,0,0,5,0,0\n")),
                    Error);
}

TEST_CASE("combined.csv round trip and published-format import", "[io]") {
    auto d = testsupport::ground_truth_corpus(50, 2);
    d.provenance[3].attached_to = "gt1001";
    std::ostringstream out;
    io::write_dataset(out, d);
    const auto back = io::read_dataset(table(out.str()));
    REQUIRE(back.events.size() == 50);
    CHECK(back.stage == Stage::CombinedIncident);
    CHECK(back.provenance[3].attached_to == "gt1001");
    for (std::size_t i = 0; i < 50; ++i) {
        CHECK(back.events[i].vec() == d.events[i].vec());
        CHECK(back.events[i].weight == d.events[i].weight);
    }

    // Loose headers, no id column, semicolon separated.
    const auto dir = scratch("published");
    {
        std::ofstream f(dir / "pub.csv");
        f << "Vc;A1;A2;Ts;T1;T2;Weight\n"
             "2.5;-1;-1;0;5;0;1.5\n"
             "0;0;0;5;0;0;0.5\n";
    }
    const auto pub = io::read_dataset((dir / "pub.csv").string());
    REQUIRE(pub.events.size() == 2);
    CHECK(pub.events[0].event_id == "row1");
    CHECK(pub.events[0].v_c == 2.5);
    CHECK(pub.events[1].tau_s == 5.0);
    CHECK(pub.total_weight() == 2.0);

    CHECK_THROWS_AS(io::read_dataset(table("v_c,a1\n1,2\n")), Error);
    CHECK_THROWS_AS(io::read_dataset(table("v_c,a1,a2,tau_s,tau_1,tau_2\n")), Error);
    try {
        (void)io::read_dataset((dir / "missing.csv").string());
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Io);
        CHECK(std::string(e.what()).find("missing.csv") != std::string::npos);
    }
}

TEST_CASE("model JSON round trip reproduces sampling exactly", "[io]") {
    const auto d = testsupport::ground_truth_corpus(300, 21);
    const auto m = build_models(d);
    const auto j = io::to_json(m);
    CHECK(j["schema"] == "leadkin.model/1");
    const auto back = io::model_from_json(nlohmann::json::parse(j.dump()));
    REQUIRE(back.bundles.size() == m.bundles.size());
    CHECK(io::to_json(back).dump() == j.dump());

    const auto a = assemble_synthetic(m, 3000, 5);
    const auto b = assemble_synthetic(back, 3000, 5);
    for (std::size_t i = 0; i < a.events.size(); ++i) REQUIRE(a.events[i].vec() == b.events[i].vec());

    auto bad = j;
    bad["schema"] = "other/1";
    CHECK_THROWS_AS(io::model_from_json(bad), Error);
}

TEST_CASE("empirical bundles survive serialization", "[io]") {
    WeightedDataset tiny;
    for (int i = 0; i < 3; ++i) {
        EventParams e;
        e.set({1.0 + i, -1.0 - i, -2.0 - i, 0.0, 2.0, 3.0});
        e.event_id = "t" + std::to_string(i);
        tiny.push_back(e);
    }
    const auto b = build_submodel(tiny, 4);
    REQUIRE(b.size() == 1);
    REQUIRE(b[0].empirical);
    const auto back = io::bundle_from_json(io::to_json(b[0]));
    CHECK(back.empirical_events == b[0].empirical_events);
    const auto x = sample_submodel(b[0], 20, 3), y = sample_submodel(back, 20, 3);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(x[i].vec() == y[i].vec());
}

TEST_CASE("config parse and serialize", "[io]") {
    std::istringstream in(R"(# comment
seed = 42
lambda = 0.01   # trailing comment
fractions = 0.9, 0.7
d_thd_quantile = 0.5
dt = 0.2
full_window_speed = false
workdir = out/run
)");
    PipelineConfig c;
    apply_config(c, in);
    CHECK(c.seed == 42);
    CHECK(c.fit.lambda == 0.01);
    CHECK(c.fractions == std::vector<double>{0.9, 0.7});
    CHECK(c.d_thd_quantile == 0.5);
    CHECK(c.profiles_dt == 0.2);
    CHECK_FALSE(c.full_window_speed);
    CHECK(c.model_path() == (std::filesystem::path("out/run") / "model.json").string());

    const auto text = serialize(c);
    PipelineConfig c2;
    std::istringstream in2(text);
    apply_config(c2, in2);
    CHECK(serialize(c2) == text);

    PipelineConfig d;
    std::istringstream unknown("bogus = 1\n");
    CHECK_THROWS_AS(apply_config(d, unknown), Error);
    std::istringstream badnum("lambda = fast\n");
    CHECK_THROWS_AS(apply_config(d, badnum), Error);
    std::istringstream noeq("lambda 0.1\n");
    CHECK_THROWS_AS(apply_config(d, noeq), Error);
    std::istringstream neg("n = -5\n");
    CHECK_THROWS_AS(apply_config(d, neg), Error);

    PipelineConfig e;
    e.alpha_ks = 1.5;
    CHECK_THROWS_AS(e.check(), Error);
}

TEST_CASE("pipeline stage errors", "[io][pipeline]") {
    const auto dir = scratch("stages");
    PipelineConfig c;
    c.workdir = dir.string();
    try {
        (void)run_pipeline(c, PipelineStage::Generate);
        FAIL("expected MissingArtifact");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::MissingArtifact);
        CHECK(std::string(e.what()).find("model artifact missing") != std::string::npos);
        CHECK(std::string(e.what()).rfind("generate: ", 0) == 0);
    }
    c.input = (dir / "absent.csv").string();
    try {
        (void)run_pipeline(c, PipelineStage::Fit);
        FAIL("expected Io");
    } catch (const Error& e) {
        CHECK(is_input_error(e.code()));
        CHECK(std::string(e.what()).find("absent.csv") != std::string::npos);
    }
}

TEST_CASE("pipeline stages from combined data onward", "[io][pipeline]") {
    const auto dir = scratch("tail");
    PipelineConfig c;
    c.workdir = dir.string();
    c.n_synthetic = 2000;
    c.n_perm = 200;
    c.seed = 3;
    c.profiles_dt = 0.5;
    io::write_dataset(c.combined_path(), testsupport::ground_truth_corpus(300, 8));
    for (auto s : {PipelineStage::Model, PipelineStage::Generate, PipelineStage::Validate}) (void)run_stage(c, s);
    for (const char* f : {"model.json", "synthetic.csv", "profiles.csv", "report.json"})
        CHECK(std::filesystem::is_regular_file(dir / f));
    const auto report = io::read_json(c.report_path());
    CHECK(report["params"].size() == kNumParams);
    CHECK(report["params"][0].contains("ecdf"));

    const auto first = slurp(dir / "synthetic.csv");
    (void)run_stage(c, PipelineStage::Generate);
    CHECK(slurp(dir / "synthetic.csv") == first);

    // 2000 events on an 11-point grid plus the header.
    const auto prof = slurp(dir / "profiles.csv");
    CHECK(static_cast<std::size_t>(std::count(prof.begin(), prof.end(), '\n')) == 2000 * 11 + 1);
}
