#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "ips/lattice.hpp"
#include "ips/renewal.hpp"

namespace ips {

struct TooFewSurvivors : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InsufficientSamples : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CounterexampleNotFound : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ModelParams {
    ProcessKind kind = ProcessKind::Spont;
    double lambda = 4.0;
    double p = 0.95;
    InitialSpec initial = SingleOne{0};
};

/// Per-trial seed derived from the master seed.
std::uint64_t trial_seed(std::uint64_t master, std::uint64_t trial);

/// Runs body(i) for i in [0, n) on up to `threads` workers (0 = hardware
/// concurrency). Callers store results by index so the fold is ordered.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& body);

struct StatsSummary {
    std::size_t n_trials = 0;
    std::size_t n_surviving = 0;
    double estimate = 0.0;
    double std_error = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    std::string method;
};

StatsSummary wilson_summary(std::size_t successes, std::size_t n);

struct TrialEndpoint {
    std::uint64_t seed = 0;
    bool survived = false;
    Site r_T = 0;
};

std::vector<TrialEndpoint> run_endpoints(const ModelParams& params, std::size_t trials, double T,
                                         std::uint64_t master, unsigned threads = 0);

StatsSummary estimate_survival(const ModelParams& params, std::size_t trials, double T,
                               std::uint64_t master, unsigned threads = 0);
StatsSummary survival_summary(const std::vector<TrialEndpoint>& runs);

/// Mean of r_T / T over surviving trials.
StatsSummary estimate_speed_direct(const ModelParams& params, std::size_t trials, double T,
                                   std::uint64_t master, unsigned threads = 0);
StatsSummary speed_direct_summary(const std::vector<TrialEndpoint>& runs, double T);

struct RenewalTrial {
    std::uint64_t seed = 0;
    /// Per horizon: survived to it, and r at it.
    std::vector<bool> survived;
    std::vector<Site> r;
    /// Renewal record per horizon; empty for horizons the run did not reach.
    std::vector<std::optional<RenewalRecord>> records;
};

/// One base run to max(horizons) and its renewal record cut at each horizon
/// it survives to.
RenewalTrial renewal_trial(const ModelParams& params, const std::vector<double>& horizons,
                           std::uint64_t seed, double guard, const PropertyPolicy& policy,
                           std::size_t window_cap = 1'000'000);

/// Ratio of mean space increment to mean time increment, delta-method SE.
StatsSummary estimate_speed_renewal(const std::vector<IncrementSample>& samples);

struct NormalityReport {
    std::size_t n = 0;
    std::size_t block = 1;
    double mean = 0.0;
    double variance = 0.0;
    double skewness = 0.0;
    double excess_kurtosis = 0.0;
    double ks_statistic = 0.0;
};

/// Moments of `z` and its KS distance to the standard normal.
NormalityReport normality(std::vector<double> z);

/// Standardized block sums of (d_r - mu_hat d_sigma), one report per block size.
std::vector<NormalityReport> clt_statistics(const std::vector<IncrementSample>& samples, double mu_hat,
                                            const std::vector<std::size_t>& blocks = {1, 8, 32});

struct LagCorrelation {
    int lag = 0;
    double value = 0.0;
    bool within_band = true;
};

struct IndependenceReport {
    std::size_t n = 0;
    double band = 0.0;
    std::vector<LagCorrelation> d_sigma;
    std::vector<LagCorrelation> d_r;
    /// corr(d_sigma_k, d_r_{k+lag})
    std::vector<LagCorrelation> cross;
    bool all_within() const;
};

/// Lag 1..3 correlations. Pairs only join increments of the same run.
IndependenceReport independence_check(const std::vector<IncrementSample>& samples);

struct AuditReport {
    std::size_t n_trials = 0;
    std::size_t n_events_checked = 0;
    std::size_t n_skipped = 0;
    std::size_t n_violations = 0;
    std::string first_violation;
    void violation(const std::string& what);
};

/// Random member of C^x: x occupied, [x-radius, x) in {-1,0,1}, (x, x+radius]
/// in {-1,0}, empty tail.
Configuration random_member(Site x, int radius, std::mt19937_64& rng);

/// Co-evolves pairs of starts in C^x on shared logs and checks the split-site
/// conditions at each first rightmost discrepancy. Spont pairs are (hostile,
/// c); IS pairs are (c, hostile). Without `c` a random member is drawn per
/// trial (for IS, both members are random).
AuditReport discrepancy_audit(ProcessKind kind, Site x, const std::optional<Configuration>& c,
                              std::size_t trials, double T, double lambda, double p,
                              std::uint64_t master, unsigned threads = 0);

struct Counterexample {
    std::uint64_t seed = 0;
    double lambda = 0.0;
    double p = 0.0;
    double T = 0.0;
    Configuration c1;
    Configuration c2;
    Site x = 0;
    double t = 0.0;
};

std::string counterexample_json(const Counterexample& ce);
Counterexample counterexample_from_json(const std::string& text);
/// Re-evolves both starts and confirms eta^{c1}_t(x) > eta^{c2}_t(x).
bool confirm_counterexample(const Counterexample& ce);

struct AttractivityOptions {
    double lambda = 4.0;
    double p = 0.9;
    double T = 5.0;
    int window = 7;
    double is_lambda = 4.0;
    double is_p = 0.7;
    std::size_t is_budget = 100000;
    std::uint64_t seed = 1;
};

struct AttractivityReport {
    AuditReport spont_monotone;
    AuditReport cp_additive;
    Counterexample is_counterexample;
    std::size_t is_probes = 0;
};

AttractivityReport attractivity_suite(std::size_t trials, const AttractivityOptions& opt,
                                      unsigned threads = 0);

struct TruncationOptions {
    double lambda = 4.0;
    double p = 0.9;
    double T = 5.0;
    std::uint64_t seed = 1;
    /// Box radii compared by the monotonicity check (n <= m).
    Site mono_n = 3;
    Site mono_m = 6;
    bool blocking_by_target = false;
    /// Radii whose runs must agree on the probe box [-probe, probe] x [0, T].
    std::vector<Site> radii = {20, 30, 40};
    Site probe = 5;
};

/// Truncated Spont from the hostile start: xi^n <= xi^m on [-n, n] at every
/// change time of either run.
AuditReport truncation_monotonicity(std::size_t seeds, const TruncationOptions& opt,
                                    unsigned threads = 0);

/// Truncated runs for every radius and the untruncated lazy run agree on the
/// probe box. Spont starts hostile at 0, IS from a single one at 0.
AuditReport truncation_agreement(ProcessKind kind, std::size_t seeds, const TruncationOptions& opt,
                                 unsigned threads = 0);

struct TailReport {
    std::size_t included = 0;
    std::size_t excluded = 0;
    std::vector<double> ages;
    std::vector<Site> excursions;
    /// (L, P(age > L)) on an integer grid.
    std::vector<std::pair<double, double>> age_tail;
    double log_tail_slope = 0.0;
    bool tail_decreasing = true;
    bool concave_or_linear = true;
};

/// Age t - sigma_{N(t)} of the last uncensored renewal strictly before t and
/// the front excursion after it. Records without one are excluded.
TailReport last_renewal_tail(const std::vector<RenewalRecord>& records, double t);

struct CertificateCalibration {
    double alpha_hat = 0.0;
    double alpha_se = 0.0;
    CertificateConstants constants;
    double pass_rate = 0.0;
    std::size_t samples = 0;
    bool reached_target = false;
};

/// alpha_hat from the slope of the contact-process front started from a
/// half-line; then the smallest L1 (with L2 = L1 + 1) for which R and H hold
/// on at least `target` of the pilot samples.
CertificateCalibration calibrate_certificate(double lambda, double p, std::size_t pilot_runs, double T,
                                             std::uint64_t master, double target = 0.9,
                                             unsigned threads = 0);

}  // namespace ips
