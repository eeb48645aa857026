#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ips/event_log.hpp"
#include "ips/lattice.hpp"

namespace ips {

enum class PropertyMode : std::uint8_t { SpontExtremal, ISSampledFamily, Certificate };

const char* to_string(PropertyMode m);
PropertyMode parse_property_mode(const std::string& s);

/// Constants of the sufficient event. The event implies the property only
/// when floor(L2) >= L1 + 1, which leaves one site of slack between the
/// envelope and the frontier.
struct CertificateConstants {
    double L1 = 8.0;
    double L2 = 9.0;
    double alpha_hat = 1.0;
};

struct PropertyPolicy {
    PropertyMode mode = PropertyMode::SpontExtremal;
    int family_size = 8;
    int family_window_radius = 30;
    CertificateConstants certificate;
    /// Decide the property by explicit restarts run to the horizon instead
    /// of the split-site shortcuts. Slow; used to cross-check them.
    bool reference = false;
    std::uint64_t family_seed = 0x5eed;
};

struct InvalidMode : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct ExtinctRun : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class FailureReason : std::uint8_t { None, SurvivalFailed, InvarianceFailed };

const char* to_string(FailureReason r);

struct PropertyVerdict {
    bool holds = false;
    std::optional<double> failure_time;
    FailureReason failure_reason = FailureReason::None;
    bool certified = false;
};

/// Outcome of a failure-time search. `time` empty means HorizonCertified.
struct FailureResult {
    std::optional<double> time;
    FailureReason reason = FailureReason::None;
    bool certified() const { return !time.has_value(); }
};

/// A base trajectory together with its log and a random-access index.
class BaseRun {
public:
    BaseRun(const EventLog& log, Trajectory traj);
    BaseRun(const BaseRun&) = delete;
    BaseRun& operator=(const BaseRun&) = delete;

    const EventLog& log() const { return *log_; }
    const Trajectory& traj() const { return traj_; }
    const TrajectoryIndex& index() const { return index_; }
    ProcessKind kind() const { return traj_.kind; }

private:
    const EventLog* log_;
    Trajectory traj_;
    TrajectoryIndex index_;
};

void validate_policy(ProcessKind kind, const PropertyPolicy& policy);

/// First s in (start, horizon] at which the special property on [start, s]
/// fails, or HorizonCertified.
FailureResult failure_time(const BaseRun& base, double start, const PropertyPolicy& policy,
                           double horizon);

PropertyVerdict special_property(const BaseRun& base, double t1, double t2,
                                 const PropertyPolicy& policy);

/// Sufficient event I, R, H for the property from time t, checked on
/// [t, horizon] with the rightmost r of the base at t.
bool certificate_IRH(const BaseRun& base, double t, const CertificateConstants& k);

struct CertificateParts {
    bool I = false;
    bool R = false;
    bool H = false;
};

/// The three events evaluated separately (for calibrating the constants).
CertificateParts certificate_parts(const BaseRun& base, double t, const CertificateConstants& k);

/// max over the envelope path of (running max - r) - 3 alpha_hat (s - t);
/// event R holds iff this is below L1.
double envelope_excess(const BaseRun& base, double t, double alpha_hat);
/// Event H alone.
bool frontier_event(const BaseRun& base, double t, const CertificateConstants& k);

struct RenewalRecord {
    std::vector<double> sigmas;
    std::vector<Site> rightmosts;
    std::vector<bool> censored;
    std::vector<double> failure_log;
    /// sup |r_s - r_sigma_k| over [sigma_k, sigma_k+1] (the horizon for the last).
    std::vector<Site> excursions;
    double horizon = 0.0;
    double guard = 0.0;
    std::size_t attempts = 0;
};

/// Renewal times of the base run: each sigma is the first failure time (or
/// restart time) from which the property holds up to the horizon; the next
/// search starts one time unit later. `horizon` defaults to the base run's
/// and may be shorter, which gives the record of the same run cut there.
RenewalRecord renewal_sequence(const BaseRun& base, double guard, const PropertyPolicy& policy,
                               std::optional<double> horizon = std::nullopt);

struct IncrementSample {
    double d_sigma = 0.0;
    Site d_r = 0;
    std::uint64_t run_id = 0;
    std::size_t index = 0;
};

std::vector<IncrementSample> harvest_increments(const RenewalRecord& record, std::uint64_t run_id);

/// Split-site candidate times after `start`: fertile arrows out of the base
/// rightmost R into R+1 while R+1 has not healed since `start`. The first
/// rightmost discrepancy of any restart can only happen at one of them.
std::vector<double> split_candidates(const BaseRun& base, double start, double horizon);

}  // namespace ips
