#include "ips/paths.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

namespace ips {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool has_arrival_at(const EventLog& log, const ObjectKey& key, double t) {
    const auto& s = log.stream(key);
    return std::binary_search(s.begin(), s.end(), t);
}

bool healed_in(const EventLog& log, Site y, double a, double b) {
    // Half-open (a, b]: a mark at the entry instant does not count.
    return log.first_after(ObjectKey::healing(y), a) <= b;
}

/// First time in (a, b] at which y turns Blocked in the host. Any such
/// change is caused by a blocking arrow into y at that instant.
double next_block_onset(const TrajectoryIndex& host, const EventLog& log, Site y, double a, double b) {
    double best = kInf;
    for (Site from : {y - 1, y + 1}) {
        const auto& s = log.stream(ObjectKey::blocking(from, y));
        for (auto it = std::upper_bound(s.begin(), s.end(), a); it != s.end() && *it <= b; ++it) {
            if (*it >= best) break;
            if (host.state_at(y, *it) == SiteState::Blocked) {
                best = *it;
                break;
            }
        }
    }
    return best;
}

/// Forward sweep of the set of sites reachable by active paths.
class ReachSweep {
public:
    ReachSweep(const TrajectoryIndex& host, const EventLog& log, double t) : host_(host), log_(log), t_(t) {}

    void add_source(Site y, double s) { add(y, s, -1); }

    void run() {
        while (!queue_.empty()) {
            const Ev e = queue_.top();
            queue_.pop();
            auto it = live_.find(e.site);
            if (it == live_.end() || it->second.gen != e.gen) continue;
            if (e.type != kArrow) {
                live_.erase(it);
                continue;
            }
            const int parent = it->second.node;
            const Site z = e.site + e.dir;
            const ObjectKey key = ObjectKey::fertile(e.site, z);
            const double next = log_.first_after(key, e.time);
            if (next <= t_) queue_.push({next, kArrow, e.site, e.dir, e.gen});
            if (!live_.count(z)) add(z, e.time, parent);
        }
    }

    bool reached(Site y) const { return live_.count(y) > 0; }
    std::vector<Site> reached_sites() const {
        std::vector<Site> out;
        for (const auto& [y, l] : live_) out.push_back(y);
        std::sort(out.begin(), out.end());
        return out;
    }

    PathWitness witness(Site y) const {
        std::vector<int> chain;
        for (int n = live_.at(y).node; n >= 0; n = nodes_[static_cast<std::size_t>(n)].parent)
            chain.push_back(n);
        std::reverse(chain.begin(), chain.end());
        PathWitness w;
        for (std::size_t i = 0; i < chain.size(); ++i) {
            const Node& n = nodes_[static_cast<std::size_t>(chain[i])];
            const double end = i + 1 < chain.size() ? nodes_[static_cast<std::size_t>(chain[i + 1])].entered : t_;
            w.segments.push_back({n.entered, end, n.site});
            if (i + 1 < chain.size()) {
                const Node& m = nodes_[static_cast<std::size_t>(chain[i + 1])];
                w.jump_arrows.push_back({ObjectKey::fertile(n.site, m.site), m.entered});
            }
        }
        return w;
    }

private:
    enum Type : int { kHeal = 0, kBlock = 1, kArrow = 2 };
    struct Ev {
        double time;
        int type;
        Site site;
        int dir;
        unsigned gen;
        bool operator>(const Ev& o) const {
            if (time != o.time) return time > o.time;
            if (type != o.type) return type > o.type;
            if (site != o.site) return site > o.site;
            return dir > o.dir;
        }
    };
    struct Node {
        Site site;
        double entered;
        int parent;
    };
    struct Live {
        int node;
        unsigned gen;
    };

    void add(Site y, double u, int parent) {
        if (host_.state_at(y, u) == SiteState::Blocked) return;
        const unsigned g = ++gen_[y];
        nodes_.push_back({y, u, parent});
        live_[y] = {static_cast<int>(nodes_.size()) - 1, g};
        const double h = log_.first_after(ObjectKey::healing(y), u);
        if (h <= t_) queue_.push({h, kHeal, y, 0, g});
        const double b = next_block_onset(host_, log_, y, u, t_);
        if (b <= t_) queue_.push({b, kBlock, y, 0, g});
        for (int dir : {-1, 1}) {
            const double a = log_.first_after(ObjectKey::fertile(y, y + dir), u);
            if (a <= t_) queue_.push({a, kArrow, y, dir, g});
        }
    }

    const TrajectoryIndex& host_;
    const EventLog& log_;
    double t_;
    std::vector<Node> nodes_;
    std::unordered_map<Site, Live> live_;
    std::unordered_map<Site, unsigned> gen_;
    std::priority_queue<Ev, std::vector<Ev>, std::greater<Ev>> queue_;
};

void require_finite_start(const Trajectory& traj) {
    if (traj.initial.policy.kind == TailKind::OccupiedLeftClamp)
        throw PreconditionViolation("path audits need finitely many initial ones");
}

std::vector<Site> initial_ones(const Trajectory& traj) {
    std::vector<Site> out;
    for (Site y = traj.initial.lo; y <= traj.initial.hi; ++y)
        if (traj.initial.at(y) == SiteState::Occupied) out.push_back(y);
    return out;
}

double just_before(double t) { return std::nextafter(t, -kInf); }

}  // namespace

Site PathWitness::site_at(double t) const {
    for (std::size_t i = 0; i + 1 < segments.size(); ++i)
        if (t < segments[i].t_end) return segments[i].site;
    return segments.back().site;
}

WitnessCheck validate_witness(const PathWitness& w, const EventLog& log, const TrajectoryIndex* host) {
    auto fail = [](std::string why) { return WitnessCheck{false, std::move(why)}; };
    if (w.segments.empty()) return fail("no segments");
    if (w.jump_arrows.size() + 1 != w.segments.size()) return fail("jump count mismatch");
    for (std::size_t i = 0; i < w.segments.size(); ++i) {
        const PathSegment& g = w.segments[i];
        std::ostringstream at;
        at << "segment " << i << " site " << g.site << " [" << g.t_start << ", " << g.t_end << "]";
        if (g.t_end < g.t_start) return fail(at.str() + ": reversed interval");
        if (i + 1 < w.segments.size()) {
            const PathSegment& h = w.segments[i + 1];
            const ArrowRef& a = w.jump_arrows[i];
            if (h.t_start != g.t_end) return fail(at.str() + ": gap before next segment");
            if (a.time != g.t_end || !(a.key == ObjectKey::fertile(g.site, h.site)) ||
                std::abs(h.site - g.site) != 1)
                return fail(at.str() + ": jump does not match its arrow");
            if (!has_arrival_at(log, a.key, a.time)) return fail(at.str() + ": no such fertile arrow");
        }
        if (healed_in(log, g.site, g.t_start, g.t_end)) return fail(at.str() + ": healing mark");
        if (host) {
            if (host->state_at(g.site, g.t_start) == SiteState::Blocked)
                return fail(at.str() + ": blocked on entry");
            if (next_block_onset(*host, log, g.site, g.t_start, g.t_end) < kInf)
                return fail(at.str() + ": blocked while visited");
        }
    }
    return {};
}

ReachResult active_reachable(const TrajectoryIndex& host, const EventLog& log, SpaceTimePoint from,
                             SpaceTimePoint to) {
    if (from.time > to.time || to.time > host.trajectory().horizon)
        throw PreconditionViolation("active_reachable needs from.time <= to.time <= horizon");
    ReachSweep sweep(host, log, to.time);
    sweep.add_source(from.site, from.time);
    sweep.run();
    ReachResult r;
    r.reachable = sweep.reached(to.site);
    if (r.reachable) r.witness = sweep.witness(to.site);
    return r;
}

ReachResult active_reachable(const Trajectory& traj, const EventLog& log, SpaceTimePoint from,
                             SpaceTimePoint to) {
    TrajectoryIndex host(traj, &log);
    return active_reachable(host, log, from, to);
}

EquivalenceReport occupancy_path_equivalence(const Trajectory& traj, const EventLog& log, double t) {
    require_finite_start(traj);
    if (t < traj.start || t > traj.horizon)
        throw PreconditionViolation("equivalence time outside the run");
    TrajectoryIndex host(traj, &log);
    ReachSweep sweep(host, log, t);
    for (Site y : initial_ones(traj)) sweep.add_source(y, traj.start);
    sweep.run();

    EquivalenceReport rep;
    auto violate = [&](const std::string& what) {
        rep.holds = false;
        if (rep.violations++ == 0) rep.first_violation = what;
    };
    const auto reached = sweep.reached_sites();
    Site lo = host.lo(), hi = host.hi();
    if (!reached.empty()) {
        lo = std::min(lo, reached.front());
        hi = std::max(hi, reached.back());
    }
    for (Site x = lo; x <= hi; ++x) {
        ++rep.sites_checked;
        const bool occ = host.state_at(x, t) == SiteState::Occupied;
        const bool reach = sweep.reached(x);
        std::ostringstream at;
        at << "site " << x << " at t=" << t;
        if (occ != reach) {
            violate(at.str() + (occ ? ": occupied but unreachable" : ": reachable but not occupied"));
            continue;
        }
        if (!reach) continue;
        const PathWitness w = sweep.witness(x);
        const WitnessCheck c = validate_witness(w, log, &host);
        ++rep.witnesses_validated;
        if (!c.ok) violate(at.str() + ": witness rejected: " + c.reason);
        else if (host.state_at(w.segments.front().site, traj.start) != SiteState::Occupied)
            violate(at.str() + ": witness does not start at an initial one");
    }
    return rep;
}

PathWitness leftmost_active_path(const Trajectory& traj, const EventLog& log, double t) {
    require_finite_start(traj);
    if (t < traj.start || t > traj.horizon) throw PreconditionViolation("time outside the run");
    const auto target = traj.leftmost_at(t);
    if (!target) throw NoOccupiedSite("no occupied site at the requested time");
    TrajectoryIndex host(traj, &log);
    const Site lo = host.lo(), hi = host.hi();
    const double s = traj.start;
    auto slot = [&](Site y) { return static_cast<std::size_t>(y - lo); };

    // Backward sweep of good(y, u): an active path from (y, u) reaches the
    // target at t. Membership changes are kept per site, latest first.
    struct Ev {
        double time;
        int type;  // 0 heal, 1 block onset, 2 fertile arrow
        Site site;
        Site to;
    };
    std::vector<Ev> evs;
    for (Site y = lo; y <= hi; ++y) {
        for (double h : log.arrivals(ObjectKey::healing(y), s, t))
            if (h > s) evs.push_back({h, 0, y, y});
        for (const auto& [u, st] : host.history(y))
            if (st == SiteState::Blocked && u > s && u <= t) evs.push_back({u, 1, y, y});
        for (Site z : {y - 1, y + 1}) {
            if (z < lo || z > hi) continue;
            for (double a : log.arrivals(ObjectKey::fertile(y, z), s, t))
                if (a > s) evs.push_back({a, 2, y, z});
        }
    }
    std::sort(evs.begin(), evs.end(), [](const Ev& a, const Ev& b) {
        if (a.time != b.time) return a.time > b.time;
        return a.type < b.type;
    });
    std::vector<char> in(static_cast<std::size_t>(hi - lo + 1), 0);
    std::vector<std::vector<std::pair<double, char>>> changes(in.size());
    in[slot(*target)] = 1;
    const std::vector<char> at_t = in;
    for (const Ev& e : evs) {
        if (e.type == 2) {
            if (in[slot(e.to)] && !in[slot(e.site)] && host.state_at(e.site, e.time) != SiteState::Blocked) {
                in[slot(e.site)] = 1;
                changes[slot(e.site)].push_back({e.time, 1});
            }
        } else if (in[slot(e.site)]) {
            in[slot(e.site)] = 0;
            changes[slot(e.site)].push_back({e.time, 0});
        }
    }
    auto good = [&](Site y, double u) -> bool {
        if (y < lo || y > hi) return false;
        const auto& c = changes[slot(y)];
        // c is in decreasing time; the first change strictly after u decides.
        auto it = std::partition_point(c.begin(), c.end(), [&](const auto& p) { return p.first > u; });
        if (it == c.begin()) return at_t[slot(y)];
        return std::prev(it)->second;
    };

    Site cur = kNoSite;
    for (Site y : initial_ones(traj))
        if (good(y, s)) {
            cur = y;
            break;
        }
    if (cur == kNoSite) throw std::logic_error("occupied site without an active path");

    PathWitness w;
    w.segments.push_back({s, t, cur});
    double u = s;
    while (true) {
        double v = kInf;
        Site z = cur;
        for (Site cand : {cur - 1, cur + 1}) {
            const double a = log.first_after(ObjectKey::fertile(cur, cand), u);
            if (a < v || (a == v && cand < z)) {
                v = a;
                z = cand;
            }
        }
        if (v > t) break;
        const bool jump_ok = good(z, v);
        const bool stay_ok = good(cur, v);
        if (jump_ok && (z < cur || !stay_ok)) {
            w.segments.back().t_end = v;
            w.jump_arrows.push_back({ObjectKey::fertile(cur, z), v});
            w.segments.push_back({v, t, z});
            cur = z;
        }
        u = v;
    }
    if (cur != *target) throw std::logic_error("leftmost path construction missed the target");
    return w;
}

Frontier never_healed_frontier(const EventLog& log, Site x, double t) {
    if (t < 1.0) throw PreconditionViolation("the frontier is defined for t >= 1");
    Site y = x + 1;
    while (log.any_in(ObjectKey::healing(y), 1.0, t)) ++y;
    return {y};
}

std::string SplitSiteReport::describe() const {
    std::ostringstream o;
    if (!discrepancy) return "no discrepancy";
    o << "D=" << D << " R=" << R << " fertile_arrow=" << fertile_arrow
      << " never_healed=" << never_healed << " never_occupied=" << never_occupied
      << " state_split=" << state_split << (premise ? "" : " (witness extinct)");
    return o.str();
}

SplitSiteReport check_split_site(ProcessKind kind, const Trajectory& a, const Trajectory& b,
                                 const EventLog& log, std::optional<double> witness_extinction) {
    SplitSiteReport rep;
    const double start = std::max(a.start, b.start);
    const auto d = first_path_discrepancy(a, b, start, std::min(a.horizon, b.horizon));
    if (!d) return rep;
    rep.discrepancy = true;
    rep.D = *d;
    rep.premise = !witness_extinction || *witness_extinction > rep.D;
    const auto ra = a.rightmost_at(just_before(rep.D));
    if (!ra || *d == start) return rep;
    rep.R = *ra;
    const Site dest = rep.R + 1;
    rep.fertile_arrow = has_arrival_at(log, ObjectKey::fertile(rep.R, dest), rep.D);
    rep.never_healed = !log.any_in(ObjectKey::healing(dest), start, rep.D);
    TrajectoryIndex ia(a, &log), ib(b, &log);
    rep.never_occupied = true;
    for (const TrajectoryIndex* ix : {&ia, &ib}) {
        if (ix->state_at(dest, start) == SiteState::Occupied) rep.never_occupied = false;
        for (const auto& [u, st] : ix->history(dest))
            if (u < rep.D && st == SiteState::Occupied) rep.never_occupied = false;
    }
    const SiteState sa = ia.state_at(dest, just_before(rep.D));
    const SiteState sb = ib.state_at(dest, just_before(rep.D));
    if (kind == ProcessKind::Spont)
        rep.state_split = sa == SiteState::Blocked && sb == SiteState::Empty;
    else
        rep.state_split = (sa == SiteState::Blocked && sb == SiteState::Empty) ||
                          (sa == SiteState::Empty && sb == SiteState::Blocked);
    return rep;
}

std::string witness_json(const PathWitness& w) {
    nlohmann::json out = nlohmann::json::array();
    for (std::size_t i = 0; i < w.segments.size(); ++i) {
        const PathSegment& g = w.segments[i];
        nlohmann::json seg{{"t_start", g.t_start}, {"t_end", g.t_end}, {"site", g.site}};
        if (i == 0) {
            seg["arrow_ref"] = nullptr;
        } else {
            const ArrowRef& a = w.jump_arrows[i - 1];
            seg["arrow_ref"] = {{"origin", a.key.origin}, {"target", a.key.target}, {"time", a.time}};
        }
        out.push_back(seg);
    }
    return out.dump();
}

}  // namespace ips
