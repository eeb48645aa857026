#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "ips/cli_runner.hpp"
#include "json.hpp"

using namespace ips;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> lines(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

RunConfig small(const std::string& dir) {
    RunConfig c;
    c.lambda = 4.0;
    c.p = 0.9;
    c.horizon = 5.0;
    c.trials = 5;
    c.seed = 11;
    c.threads = 1;
    c.output_dir = (fs::path(IPS_SCRATCH_DIR) / dir).string();
    fs::remove_all(c.output_dir);
    return c;
}

RunConfig smoke_audit(const std::string& dir) {
    RunConfig c = small(dir);
    c.audit.attractivity_trials = 20;
    c.audit.truncation_seeds = 5;
    return c;
}

}  // namespace

TEST_CASE("config round trip and validation") {
    RunConfig c;
    c.kind = RunKind::Coupled;
    c.lambda = 2.5;
    c.seed = 18446744073709551557ULL;
    c.initial = "explicit:-2:1,0,-1:blocked";
    c.grid.kinds = {RunKind::IS};
    c.audit.truncation_radii = {7, 9};
    c.policy.certificate.L1 = 3;
    c.fault_injection = "corrupt_replay";
    const RunConfig back = parse_config(emit_config(c));
    CHECK(back == c);
    CHECK(back.seed == c.seed);
    CHECK(emit_config(back) == emit_config(c));

    CHECK_THROWS_AS(parse_config("{\"lambda\": 4, \"bogus\": 1}"), ConfigError);
    CHECK_THROWS_AS(parse_config("{\"lambda\": 0}"), ConfigError);
    CHECK_THROWS_AS(parse_config("{\"p\": 1.5}"), ConfigError);
    CHECK_THROWS_AS(parse_config("{\"trials\": 0}"), ConfigError);
    CHECK_THROWS_AS(parse_config("{\"kind\": \"other\"}"), ConfigError);
    CHECK_THROWS_AS(parse_config("{\"initial\": \"single\"}"), ConfigError);
    CHECK_THROWS_AS(parse_config("not json"), ConfigError);
    CHECK_THROWS_AS(parse_config("{\"policy\": {\"mode\": \"Nope\"}}"), ConfigError);

    // the policy mode follows the kind unless given
    CHECK(parse_config("{\"kind\": \"is\"}").policy.mode == PropertyMode::ISSampledFamily);
    CHECK(parse_config("{}").policy.mode == PropertyMode::SpontExtremal);
}

TEST_CASE("initial spec strings") {
    CHECK(std::get<SingleOne>(parse_initial_spec("single:3", 4, 10)).x == 3);
    CHECK(std::get<Hostile>(parse_initial_spec("hostile:-1", 4, 10)).x == -1);
    const auto h = std::get<Heaviside>(parse_initial_spec("heaviside:0", 4, 10));
    CHECK(h.clamp == heaviside_clamp(0, 4, 10));
    const auto e = std::get<Explicit>(parse_initial_spec("explicit:-1:1,0,-1", 4, 10));
    CHECK(e.lo == -1);
    CHECK(e.states.size() == 3);
    CHECK(e.tail == TailKind::EmptyTail);
    CHECK_THROWS_AS(parse_initial_spec("explicit:0:2", 4, 10), ConfigError);
    CHECK_THROWS_AS(parse_initial_spec("explicit:0:1:sideways", 4, 10), ConfigError);
}

TEST_CASE("simulate") {
    SUBCASE("zero horizon writes the initial state only") {
        RunConfig c = small("sim_zero");
        c.trials = 1;
        c.horizon = 0.0;
        c.initial = "explicit:-1:1,0,1";
        REQUIRE(cmd_simulate(c) == exit_code::ok);
        const auto l = lines(slurp(fs::path(c.output_dir) / "simulate_trajectory.csv"));
        REQUIRE(l.size() >= 5);
        CHECK(l[0] == "#schema=trajectory:1");
        CHECK(l[1] == "run_id,layer,time,site,state");
        for (std::size_t k = 2; k < l.size(); ++k) CHECK(l[k].rfind("0,spont,0,", 0) == 0);
        CHECK(std::find(l.begin(), l.end(), "0,spont,0,-1,1") != l.end());
        CHECK(std::find(l.begin(), l.end(), "0,spont,0,0,0") != l.end());
        CHECK(std::find(l.begin(), l.end(), "0,spont,0,1,1") != l.end());
    }
    SUBCASE("same config gives byte-identical files") {
        RunConfig c = small("sim_a");
        c.kind = RunKind::Coupled;
        const char* files[] = {"simulate_trajectory.csv", "simulate_summary.json", "simulate_spacetime_0.svg"};
        REQUIRE(cmd_simulate(c) == exit_code::ok);
        std::vector<std::string> first;
        for (const char* f : files) first.push_back(slurp(fs::path(c.output_dir) / f));
        REQUIRE(cmd_simulate(c) == exit_code::ok);
        for (std::size_t k = 0; k < 3; ++k) CHECK(first[k] == slurp(fs::path(c.output_dir) / files[k]));
        // other thread count and directory: the summary echoes both, the rest must match
        RunConfig d = c;
        d.output_dir = (fs::path(IPS_SCRATCH_DIR) / "sim_b").string();
        d.threads = 3;
        REQUIRE(cmd_simulate(d) == exit_code::ok);
        CHECK(first[0] == slurp(fs::path(d.output_dir) / files[0]));
        CHECK(first[2] == slurp(fs::path(d.output_dir) / files[2]));
        auto a = nlohmann::json::parse(slurp(fs::path(c.output_dir) / "simulate_summary.json"));
        CHECK(a["diagnostics"]["coupling"]["order_violations"] == 0);
        CHECK(a["seed_manifest"].size() == 5);
    }
    SUBCASE("coupled diagram carries the three-layer legend") {
        RunConfig c = small("sim_svg");
        c.kind = RunKind::Coupled;
        c.trials = 1;
        c.horizon = 8.0;
        REQUIRE(cmd_simulate(c) == exit_code::ok);
        const std::string svg = slurp(fs::path(c.output_dir) / "simulate_spacetime_0.svg");
        CHECK(svg.find("<svg") == 0);
        for (const char* col : {"#ffffff", "#c0c0c0", "#606060", "#000000"}) CHECK(svg.find(col) != std::string::npos);
        CHECK(svg.find("IS and CP") != std::string::npos);
    }
    SUBCASE("window cap maps to exit 3") {
        RunConfig c = small("sim_cap");
        c.window_cap = 3;
        c.lambda = 10.0;
        c.p = 1.0;
        c.horizon = 20.0;
        CHECK(cmd_simulate(c) == exit_code::resource);
    }
}

TEST_CASE("renewal command") {
    SUBCASE("guard beyond the horizon censors everything") {
        RunConfig c = small("ren_guard");
        c.horizon = 10.0;
        c.guard = 12.0;
        c.trials = 20;
        REQUIRE(cmd_renewal(c) == exit_code::ok);
        const auto s = nlohmann::json::parse(slurp(fs::path(c.output_dir) / "renewal_summary.json"));
        CHECK(s["diagnostics"]["insufficient_samples"] == true);
        CHECK(s["diagnostics"]["runs_with_uncensored_renewal"] == 0);
        for (const auto& l : lines(slurp(fs::path(c.output_dir) / "renewal_records.csv")))
            if (l[0] != '#' && l[0] != 'r') CHECK(l.back() == '1');
        CHECK(lines(slurp(fs::path(c.output_dir) / "renewal_increments.csv")).size() == 2);
    }
    SUBCASE("fixed seed gives the same summary") {
        RunConfig c = small("ren_a");
        c.horizon = 30.0;
        c.guard = 5.0;
        c.trials = 8;
        REQUIRE(cmd_renewal(c) == exit_code::ok);
        RunConfig d = c;
        d.threads = 4;
        d.output_dir = (fs::path(IPS_SCRATCH_DIR) / "ren_b").string();
        REQUIRE(cmd_renewal(d) == exit_code::ok);
        for (const char* f : {"renewal_records.csv", "renewal_increments.csv"})
            CHECK(slurp(fs::path(c.output_dir) / f) == slurp(fs::path(d.output_dir) / f));
        auto a = nlohmann::json::parse(slurp(fs::path(c.output_dir) / "renewal_summary.json"));
        auto b = nlohmann::json::parse(slurp(fs::path(d.output_dir) / "renewal_summary.json"));
        a["params"].erase("output_dir");
        b["params"].erase("output_dir");
        a["params"].erase("threads");
        b["params"].erase("threads");
        CHECK(a == b);
    }
    SUBCASE("contact process or coupled runs are config errors") {
        RunConfig c = small("ren_cp");
        c.kind = RunKind::CP;
        CHECK(cmd_renewal(c) == exit_code::config);
        c.kind = RunKind::Spont;
        c.policy.mode = PropertyMode::ISSampledFamily;
        CHECK(cmd_renewal(c) == exit_code::config);
    }
}

TEST_CASE("sweep command") {
    SUBCASE("row count is grid size times kinds") {
        RunConfig c = small("sweep_rows");
        c.grid.lambdas = {2.0, 4.0};
        c.grid.ps = {0.9, 0.95, 1.0};
        c.grid.kinds = {RunKind::Spont, RunKind::Coupled};
        REQUIRE(cmd_sweep(c) == exit_code::ok);
        const auto l = lines(slurp(fs::path(c.output_dir) / "sweep_grid.csv"));
        CHECK(l[0] == "#schema=sweep:1");
        CHECK(l.size() == 2 + 2 * 3 * 2);
    }
    SUBCASE("a 1x1 grid matches simulate") {
        RunConfig c = small("sweep_one");
        c.trials = 40;
        c.horizon = 4.0;
        c.grid.lambdas = {c.lambda};
        c.grid.ps = {c.p};
        c.grid.kinds = {RunKind::Spont};
        REQUIRE(cmd_sweep(c) == exit_code::ok);
        RunConfig s = c;
        s.output_dir += "_sim";
        s.svg_runs = 0;
        REQUIRE(cmd_simulate(s) == exit_code::ok);
        const auto sw = nlohmann::json::parse(slurp(fs::path(c.output_dir) / "sweep_summary.json"));
        const auto sm = nlohmann::json::parse(slurp(fs::path(s.output_dir) / "simulate_summary.json"));
        CHECK(sw["estimates"][0]["survival"] == sm["estimates"]["spont"]["survival"]);
        CHECK(sw["estimates"][0]["speed_direct"] == sm["estimates"]["spont"]["speed_direct"]);
    }
    SUBCASE("coupled fronts stay ordered at high rates") {
        RunConfig c = small("sweep_order");
        c.trials = 10;
        c.horizon = 3.0;
        c.grid.lambdas = {20.0};
        c.grid.ps = {0.975};
        c.grid.kinds = {RunKind::Coupled};
        REQUIRE(cmd_sweep(c) == exit_code::ok);
        const auto sw = nlohmann::json::parse(slurp(fs::path(c.output_dir) / "sweep_summary.json"));
        CHECK(sw["estimates"][0]["front_order"]["runs"].get<int>() > 0);
        CHECK(sw["estimates"][0]["front_order"]["violations"] == 0);
    }
}

TEST_CASE("audit command") {
    SUBCASE("smoke config passes") {
        RunConfig c = smoke_audit("audit_ok");
        REQUIRE(cmd_audit(c) == exit_code::ok);
        const auto l = lines(slurp(fs::path(c.output_dir) / "audit_checks.csv"));
        CHECK(l[0] == "#schema=audit:1");
        CHECK(fs::exists(fs::path(c.output_dir) / "audit_is_counterexample.json"));
    }
    SUBCASE("a corrupted replay is reported") {
        RunConfig c = smoke_audit("audit_fault");
        c.fault_injection = "corrupt_replay";
        REQUIRE(cmd_audit(c) == exit_code::violation);
        const auto s = nlohmann::json::parse(slurp(fs::path(c.output_dir) / "audit_summary.json"));
        const auto& replay = s["diagnostics"]["checks"][0];
        CHECK(replay["check"] == "replay");
        CHECK(replay["violations"].get<int>() >= 1);
        CHECK(!replay["first_violation"].get<std::string>().empty());
    }
}
