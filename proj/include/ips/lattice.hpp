#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "ips/event_log.hpp"

namespace ips {

enum class SiteState : std::int8_t { Blocked = -1, Empty = 0, Occupied = 1 };

inline int value(SiteState s) { return static_cast<int>(s); }

enum class ProcessKind : std::uint8_t { Spont, IS, CP };

const char* to_string(ProcessKind k);
ProcessKind parse_process_kind(const std::string& s);

enum class TailKind : std::uint8_t { EmptyTail, BlockedTail, OccupiedLeftClamp };

/// How the configuration continues outside its stored window.
///
/// Outside sites hold the nominal tail state (Empty or Blocked) at the start
/// of an evolution. A snapshot taken mid-run sets `since` instead: its tail
/// was nominal at that earlier time and has since followed the isolated
/// single-site dynamics of `since_kind`. With OccupiedLeftClamp every site
/// <= clamp is permanently occupied and the right tail is Empty.
struct BoundaryPolicy {
    TailKind kind = TailKind::EmptyTail;
    Site clamp = 0;
    std::optional<double> since;
    ProcessKind since_kind = ProcessKind::Spont;
};

struct InconsistentSpec : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct WindowOverflow : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct PreconditionViolation : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct Configuration {
    Site lo = 0;
    Site hi = -1;
    std::vector<SiteState> states;
    BoundaryPolicy policy;

    bool in_window(Site x) const { return x >= lo && x <= hi; }
    /// Stored state inside the window; nominal tail state outside it.
    SiteState at(Site x) const;
    void set(Site x, SiteState s);
};

struct SingleOne { Site x = 0; };
struct Hostile { Site x = 0; };
struct Heaviside { Site x = 0; Site clamp = 0; };
struct MaxConfig { Site x = 0; Site clamp = 0; };
struct Explicit {
    Site lo = 0;
    std::vector<SiteState> states;
    TailKind tail = TailKind::EmptyTail;
    std::optional<Site> claimed_rightmost;
};
using InitialSpec = std::variant<SingleOne, Hostile, Heaviside, MaxConfig, Explicit>;

/// Clamp site used for a Heaviside start at x over a run of length T.
Site heaviside_clamp(Site x, double lambda, double T);

Configuration make_initial(const InitialSpec& spec);

std::optional<Site> rightmost(const Configuration& c);
std::optional<Site> leftmost_one(const Configuration& c);

/// Pointwise order c1 <= c2 over the union of both windows (tails included).
bool dominated(const Configuration& c1, const Configuration& c2);

struct Delta {
    double time;
    Site site;
    SiteState state;
};

inline constexpr Site kNoSite = std::numeric_limits<Site>::min();

struct PathPoint {
    double time;
    Site site;  // kNoSite when there is no occupied site
};

struct Trajectory {
    Configuration initial;
    ProcessKind kind = ProcessKind::Spont;
    double start = 0.0;
    double horizon = 0.0;
    bool retained = true;
    std::vector<Delta> deltas;
    /// Piecewise-constant rightmost / leftmost occupied site, first entry at `start`.
    std::vector<PathPoint> rightmost_path;
    std::vector<PathPoint> leftmost_path;
    std::optional<double> extinction;
    Site lo_reached = 0;
    Site hi_reached = -1;
    std::size_t events_processed = 0;
    std::size_t ties = 0;
    bool stopped_early = false;
    /// Set for box-truncated runs: only arrivals inside the box were used.
    std::optional<std::pair<Site, Site>> box;
    bool box_blocking_by_target = false;

    std::optional<Site> rightmost_at(double t) const;
    std::optional<Site> leftmost_at(double t) const;
};

/// First time in [from, to] where the rightmost
/// paths differ, if any.
std::optional<double> first_path_discrepancy(const Trajectory& a, const Trajectory& b, double from,
                                             double to);

struct ExtinctionReport {
    bool censored = true;
    double tau = 0.0;  // extinction time, or the horizon when censored
};

ExtinctionReport extinction_time(const Trajectory& traj);

struct EvolveOptions {
    std::size_t window_cap = 1'000'000;
    bool retain_deltas = true;
    bool stop_at_extinction = false;
    /// Streams are restricted to this box when set (both arrow ends inside).
    std::optional<std::pair<Site, Site>> box;
    /// With a box: keep blocking arrows whose target is inside even when the
    /// origin is not (Spont blocking ignores the origin's state).
    bool box_blocking_by_target = false;
};

Trajectory evolve(ProcessKind kind, const Configuration& c0, const EventLog& log, double s, double t,
                  const EvolveOptions& opt = {});
Trajectory evolve(ProcessKind kind, const Configuration& c0, const RestrictedView& view, double s,
                  double t, const EvolveOptions& opt = {});

struct CoupledRun {
    Trajectory spont;
    Trajectory is;
    Trajectory cp;
    std::size_t order_checks = 0;
    std::size_t order_violations = 0;
    std::string first_violation;
};

/// Runs the three dynamics on one log and audits xi <= eta <= zeta at every
/// delta time and changed site.
CoupledRun evolve_coupled(const Configuration& xi0, const Configuration& eta0,
                          const Configuration& zeta0, const EventLog& log, double t,
                          const EvolveOptions& opt = {});

/// Spont dynamics driven only by the arrivals inside [-n, n], started from
/// xi0 restricted to the box. By default an arrow counts only when both ends
/// lie in the box. Under that rule n -> xi^n is not monotone: a blocking arrow
/// from n+1 can block site n in the larger box only. `blocking_by_target`
/// keeps those arrows and restores monotonicity.
Trajectory truncated_evolve_spont(Site n, const Configuration& xi0, const EventLog& log, double T,
                                  bool blocking_by_target = false);

/// IS dynamics where the k-th accepted arrival is the next arrival of the
/// construction restricted to [-(n+k), n+k].
Trajectory truncated_evolve_is(Site n, const Configuration& eta0, const EventLog& log, double T);

/// Replays a trajectory into per-site histories for random-access queries.
class TrajectoryIndex {
public:
    /// With a log, sites outside the reached window are reconstructed from
    /// their own streams; without one they report the nominal tail state.
    explicit TrajectoryIndex(const Trajectory& traj, const EventLog* log = nullptr);

    const Trajectory& trajectory() const { return *traj_; }
    /// State of x at time t (right-continuous). Sites never stored by the
    /// trajectory report their initial state.
    SiteState state_at(Site x, double t) const;
    Configuration snapshot(double t) const;
    /// Change times of x as (time, new state), ascending.
    const std::vector<std::pair<double, SiteState>>& history(Site x) const;
    Site lo() const { return lo_; }
    Site hi() const { return hi_; }

private:
    const Trajectory* traj_;
    const EventLog* log_;
    Site lo_;
    Site hi_;
    std::vector<std::vector<std::pair<double, SiteState>>> hist_;
};

/// States after every delta, compared to a full replay of the rules; counts
/// deltas not justified by an arrival (rule-locality audit).
struct ReplayAudit {
    std::size_t checked = 0;
    std::size_t violations = 0;
    std::string first_violation;
};
ReplayAudit replay_audit(const Trajectory& traj, const EventLog& log);

}  // namespace ips
