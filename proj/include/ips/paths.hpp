#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ips/event_log.hpp"
#include "ips/lattice.hpp"

namespace ips {

struct SpaceTimePoint {
    Site site = 0;
    double time = 0.0;
};

struct PathSegment {
    double t_start = 0.0;
    double t_end = 0.0;
    Site site = 0;
};

struct ArrowRef {
    ObjectKey key;
    double time = 0.0;
};

/// Step function on [s, t]: segment i holds on [t_start, t_end) (the last one
/// up to t inclusive). jump_arrows[i] moves the path from segment i to i+1.
struct PathWitness {
    std::vector<PathSegment> segments;
    std::vector<ArrowRef> jump_arrows;

    double start() const { return segments.front().t_start; }
    double end() const { return segments.back().t_end; }
    Site site_at(double t) const;
};

struct NoOccupiedSite : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct WitnessCheck {
    bool ok = true;
    std::string reason;
};

/// Independent check of a witness against the raw log: contiguous segments,
/// no healing mark on a segment's site in (t_start, t_end], every jump backed
/// by a fertile arrow between neighbours at the jump time. With a host, also
/// checks that no visited point is Blocked in the host.
WitnessCheck validate_witness(const PathWitness& w, const EventLog& log,
                              const TrajectoryIndex* host = nullptr);

struct ReachResult {
    bool reachable = false;
    std::optional<PathWitness> witness;
};

ReachResult active_reachable(const TrajectoryIndex& host, const EventLog& log, SpaceTimePoint from,
                             SpaceTimePoint to);
ReachResult active_reachable(const Trajectory& traj, const EventLog& log, SpaceTimePoint from,
                             SpaceTimePoint to);

struct EquivalenceReport {
    bool holds = true;
    std::size_t sites_checked = 0;
    std::size_t witnesses_validated = 0;
    std::size_t violations = 0;
    std::string first_violation;
};

/// Occupied at t iff reached at t by an active path from an initially
/// occupied site. Every witness is re-validated. Needs a finite initial
/// configuration.
EquivalenceReport occupancy_path_equivalence(const Trajectory& traj, const EventLog& log, double t);

/// The leftmost (in the order "left at the first divergence time") active
/// path from an initially occupied site to the leftmost occupied site at t.
PathWitness leftmost_active_path(const Trajectory& traj, const EventLog& log, double t);

struct Frontier {
    Site value = 0;
};

/// Least y > x with no healing mark in [1, t].
Frontier never_healed_frontier(const EventLog& log, Site x, double t);

/// Structural conditions at the first rightmost discrepancy of two runs on
/// one log that start together with the same rightmost one.
struct SplitSiteReport {
    bool discrepancy = false;
    /// False when the hostile Spont witness is extinct by D; the conditions
    /// are then not asserted.
    bool premise = true;
    double D = 0.0;
    Site R = 0;
    bool fertile_arrow = false;
    bool never_healed = false;
    bool never_occupied = false;
    bool state_split = false;
    bool ok() const {
        return !discrepancy || !premise ||
               (fertile_arrow && never_healed && never_occupied && state_split);
    }
    std::string describe() const;
};

/// For Spont, `a` must be the hostile start and the destination must be
/// Blocked in `a` and Empty in `b`. For IS it must be Blocked in exactly one
/// and Empty in the other. `witness_extinction` is the extinction time of
/// the hostile Spont restart (empty if it survives the horizon).
SplitSiteReport check_split_site(ProcessKind kind, const Trajectory& a, const Trajectory& b,
                                 const EventLog& log, std::optional<double> witness_extinction);

std::string witness_json(const PathWitness& w);

}  // namespace ips
