#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ips/lattice.hpp"
#include "ips/renewal.hpp"

namespace ips {

enum class RunKind : std::uint8_t { Spont, IS, CP, Coupled };

const char* to_string(RunKind k);
RunKind parse_run_kind(const std::string& s);

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Initial spec strings: "single:X", "hostile:X", "heaviside:X", "max:X",
/// "explicit:LO:s,s,...[:empty|blocked]" with s in {-1,0,1}.
InitialSpec parse_initial_spec(const std::string& s, double lambda, double horizon);

struct GridConfig {
    std::vector<double> lambdas = {4.0};
    std::vector<double> ps = {0.95};
    std::vector<RunKind> kinds = {RunKind::Spont, RunKind::IS, RunKind::CP};
    friend bool operator==(const GridConfig&, const GridConfig&) = default;
};

struct AuditConfig {
    /// Times at which occupancy is compared with active-path reachability,
    /// as fractions of the horizon.
    std::vector<double> equivalence_fractions = {0.5, 1.0};
    std::size_t attractivity_trials = 1000;
    double attractivity_T = 5.0;
    int attractivity_window = 7;
    double is_lambda = 4.0;
    double is_p = 0.7;
    std::size_t is_budget = 100000;
    std::size_t truncation_seeds = 200;
    double truncation_T = 5.0;
    std::vector<Site> truncation_radii = {20, 30, 40};
    Site truncation_probe = 5;
    Site mono_n = 3;
    Site mono_m = 6;
    /// "target" (blocking arrows kept when their target is in the box) or
    /// "both_ends". The other rule is still run and reported.
    std::string truncation_rule = "target";
    friend bool operator==(const AuditConfig&, const AuditConfig&) = default;
};

struct RunConfig {
    RunKind kind = RunKind::Spont;
    double lambda = 4.0;
    double p = 0.95;
    std::string initial = "single:0";
    double horizon = 100.0;
    std::size_t trials = 100;
    std::uint64_t seed = 1;
    double guard = 50.0;
    PropertyPolicy policy;
    std::size_t window_cap = 1'000'000;
    std::string output_dir = "out";
    unsigned threads = 0;
    /// Space-time diagrams for the first `svg_runs` trials of `simulate`.
    std::size_t svg_runs = 1;
    GridConfig grid;
    AuditConfig audit;
    /// Test hook: "corrupt_replay" flips one delta before the replay audit.
    std::string fault_injection;
};

bool operator==(const RunConfig& a, const RunConfig& b);

/// Throws ConfigError on malformed documents, unknown keys or invalid values.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::string& path);
std::string emit_config(const RunConfig& c);
void validate_config(const RunConfig& c);

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int violation = 1;
inline constexpr int config = 2;
inline constexpr int resource = 3;
}  // namespace exit_code

/// Each command writes its files into c.output_dir and returns an exit code.
/// Errors are reported on stderr.
int cmd_simulate(const RunConfig& c);
int cmd_renewal(const RunConfig& c);
int cmd_sweep(const RunConfig& c);
int cmd_audit(const RunConfig& c);

/// Space-time diagram. Coupled runs use white for sites occupied in all
/// three layers, light gray for IS and CP only, dark gray for CP only and
/// black otherwise (blocked sites are not drawn).
std::string spacetime_svg(const std::vector<const Trajectory*>& layers, double horizon);

}  // namespace ips
