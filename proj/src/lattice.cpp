#include "ips/lattice.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <set>
#include <sstream>
#include <unordered_map>

namespace ips {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

SiteState nominal_tail(const BoundaryPolicy& p, Site x) {
    switch (p.kind) {
    case TailKind::EmptyTail: return SiteState::Empty;
    case TailKind::BlockedTail: return SiteState::Blocked;
    case TailKind::OccupiedLeftClamp:
        return x <= p.clamp ? SiteState::Occupied : SiteState::Empty;
    }
    return SiteState::Empty;
}

bool blocking_needs_origin(ProcessKind k) { return k == ProcessKind::IS; }

}  // namespace

const char* to_string(ProcessKind k) {
    switch (k) {
    case ProcessKind::Spont: return "spont";
    case ProcessKind::IS: return "is";
    case ProcessKind::CP: return "cp";
    }
    return "?";
}

ProcessKind parse_process_kind(const std::string& s) {
    if (s == "spont") return ProcessKind::Spont;
    if (s == "is") return ProcessKind::IS;
    if (s == "cp") return ProcessKind::CP;
    throw InvalidParameter("unknown process kind: " + s);
}

SiteState Configuration::at(Site x) const {
    if (in_window(x)) return states[static_cast<std::size_t>(x - lo)];
    return nominal_tail(policy, x);
}

void Configuration::set(Site x, SiteState s) {
    if (hi < lo) {
        lo = hi = x;
        states.assign(1, s);
        return;
    }
    if (x < lo) {
        std::vector<SiteState> grown(static_cast<std::size_t>(lo - x), SiteState::Empty);
        for (Site y = x; y < lo; ++y) grown[static_cast<std::size_t>(y - x)] = nominal_tail(policy, y);
        states.insert(states.begin(), grown.begin(), grown.end());
        lo = x;
    } else if (x > hi) {
        for (Site y = hi + 1; y <= x; ++y) states.push_back(nominal_tail(policy, y));
        hi = x;
    }
    states[static_cast<std::size_t>(x - lo)] = s;
}

Site heaviside_clamp(Site x, double lambda, double T) {
    return x - static_cast<Site>(std::ceil(3.0 * lambda * T)) - 64;
}

Configuration make_initial(const InitialSpec& spec) {
    Configuration c;
    std::visit(
        [&](const auto& s) {
            using S = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<S, SingleOne> || std::is_same_v<S, Hostile>) {
                c.lo = c.hi = s.x;
                c.states = {SiteState::Occupied};
                c.policy.kind =
                    std::is_same_v<S, Hostile> ? TailKind::BlockedTail : TailKind::EmptyTail;
            } else if constexpr (std::is_same_v<S, Heaviside> || std::is_same_v<S, MaxConfig>) {
                if (s.clamp > s.x) throw InconsistentSpec("clamp must not exceed the front site");
                c.lo = s.clamp;
                c.hi = s.x;
                c.states.assign(static_cast<std::size_t>(s.x - s.clamp + 1), SiteState::Occupied);
                c.policy.kind = TailKind::OccupiedLeftClamp;
                c.policy.clamp = s.clamp;
            } else {
                if (s.states.empty()) throw InconsistentSpec("explicit window is empty");
                if (s.tail == TailKind::OccupiedLeftClamp)
                    throw InconsistentSpec("explicit configurations take an Empty or Blocked tail");
                c.lo = s.lo;
                c.hi = s.lo + static_cast<Site>(s.states.size()) - 1;
                c.states = s.states;
                c.policy.kind = s.tail;
                if (s.claimed_rightmost) {
                    const Site r = *s.claimed_rightmost;
                    if (!c.in_window(r) || c.at(r) != SiteState::Occupied)
                        throw InconsistentSpec("claimed rightmost site is not occupied");
                    for (Site y = r + 1; y <= c.hi; ++y)
                        if (c.at(y) == SiteState::Occupied)
                            throw InconsistentSpec("occupied site right of the claimed rightmost");
                }
            }
        },
        spec);
    return c;
}

std::optional<Site> rightmost(const Configuration& c) {
    for (Site y = c.hi; y >= c.lo; --y)
        if (c.at(y) == SiteState::Occupied) return y;
    if (c.policy.kind == TailKind::OccupiedLeftClamp) return c.policy.clamp;
    return std::nullopt;
}

std::optional<Site> leftmost_one(const Configuration& c) {
    for (Site y = c.lo; y <= c.hi; ++y)
        if (c.at(y) == SiteState::Occupied) return y;
    if (c.policy.kind == TailKind::OccupiedLeftClamp) return c.policy.clamp;
    return std::nullopt;
}

bool dominated(const Configuration& c1, const Configuration& c2) {
    Site lo = std::min(c1.lo, c2.lo) - 1;
    Site hi = std::max(c1.hi, c2.hi) + 1;
    if (c1.policy.kind == TailKind::OccupiedLeftClamp) lo = std::min(lo, c1.policy.clamp - 1);
    if (c2.policy.kind == TailKind::OccupiedLeftClamp) lo = std::min(lo, c2.policy.clamp - 1);
    for (Site y = lo; y <= hi; ++y)
        if (value(c1.at(y)) > value(c2.at(y))) return false;
    return true;
}

std::optional<Site> Trajectory::rightmost_at(double t) const {
    auto it = std::upper_bound(rightmost_path.begin(), rightmost_path.end(), t,
                               [](double v, const PathPoint& p) { return v < p.time; });
    if (it == rightmost_path.begin()) return std::nullopt;
    --it;
    if (it->site == kNoSite) return std::nullopt;
    return it->site;
}

std::optional<Site> Trajectory::leftmost_at(double t) const {
    auto it = std::upper_bound(leftmost_path.begin(), leftmost_path.end(), t,
                               [](double v, const PathPoint& p) { return v < p.time; });
    if (it == leftmost_path.begin()) return std::nullopt;
    --it;
    if (it->site == kNoSite) return std::nullopt;
    return it->site;
}

ExtinctionReport extinction_time(const Trajectory& traj) {
    if (traj.initial.policy.kind == TailKind::OccupiedLeftClamp || !traj.extinction)
        return {true, traj.horizon};
    return {false, *traj.extinction};
}

namespace {

struct StreamEntry {
    ObjectKey key;
    StreamCursor cur;
};

struct HeapEntry {
    double t;
    std::uint32_t idx;
};

/// Event-driven replay of one process over a lazily grown window.
class Engine {
public:
    Engine(ProcessKind kind, const Configuration& c0, const EventLog& log, double s, double t,
           const EvolveOptions& opt)
        : kind_(kind), log_(log), s_(s), t_(t), opt_(opt), pol_(c0.policy) {
        out_.kind = kind;
        out_.start = s;
        out_.horizon = t;
        out_.retained = opt.retain_deltas;
        out_.initial = c0;
        tail_t0_ = pol_.since.value_or(s);
        clamped_ = pol_.kind == TailKind::OccupiedLeftClamp;
        init(c0);
    }

    Trajectory run() {
        double last = -kInf;
        while (!heap_.empty() && heap_[0].t <= t_) {
            const HeapEntry top = heap_[0];
            StreamEntry& se = streams_[top.idx];
            const ObjectKey key = se.key;  // apply() may grow streams_
            se.cur.pop();
            const double nt = se.cur.peek();
            if (nt <= t_) {
                heap_[0].t = nt;
                sift_down(0);
            } else {
                pop_top();
            }
            if (top.t == last) ++out_.ties;
            last = top.t;
            ++out_.events_processed;
            apply(key, top.t);
            if (opt_.stop_at_extinction && occupied_ == 0) {
                out_.stopped_early = true;
                break;
            }
        }
        return finish();
    }

private:
    SiteState& cell(Site x) { return buf_[static_cast<std::size_t>(x - base_)]; }
    void pop_top() {
        heap_[0] = heap_.back();
        heap_.pop_back();
        if (!heap_.empty()) sift_down(0);
    }

    SiteState get(Site x) const {
        if (x >= lo_ && x <= hi_) return buf_[static_cast<std::size_t>(x - base_)];
        if (clamped_ && x < lo_) return SiteState::Occupied;
        return SiteState::Empty;  // outside sites are never occupied
    }

    bool in_box(Site x) const { return !opt_.box || (x >= opt_.box->first && x <= opt_.box->second); }

    bool blocking_in_box(Site origin) const { return opt_.box_blocking_by_target || in_box(origin); }

    bool later(const HeapEntry& a, const HeapEntry& b) const {
        if (a.t != b.t) return a.t > b.t;
        return streams_[b.idx].key < streams_[a.idx].key;
    }

    void sift_down(std::size_t i) {
        const std::size_t n = heap_.size();
        HeapEntry v = heap_[i];
        for (;;) {
            std::size_t c = 2 * i + 1;
            if (c >= n) break;
            if (c + 1 < n && later(heap_[c], heap_[c + 1])) ++c;
            if (!later(v, heap_[c])) break;
            heap_[i] = heap_[c];
            i = c;
        }
        heap_[i] = v;
    }

    void sift_up(std::size_t i) {
        HeapEntry v = heap_[i];
        while (i > 0) {
            std::size_t p = (i - 1) / 2;
            if (!later(heap_[p], v)) break;
            heap_[i] = heap_[p];
            i = p;
        }
        heap_[i] = v;
    }

    void push_stream(const ObjectKey& key, StreamCursor cur) {
        if (cur.peek() > t_) return;
        streams_.push_back({key, cur});
        heap_.push_back({cur.peek(), static_cast<std::uint32_t>(streams_.size() - 1)});
        sift_up(heap_.size() - 1);
    }

    void reserve_site(Site x) {
        if (buf_.empty()) {
            base_ = x - 32;
            buf_.assign(64, SiteState::Empty);
        }
        if (x < base_) {
            const Site grow = std::max<Site>(base_ - x, static_cast<Site>(buf_.size()));
            buf_.insert(buf_.begin(), static_cast<std::size_t>(grow), SiteState::Empty);
            base_ -= grow;
        } else if (x >= base_ + static_cast<Site>(buf_.size())) {
            const Site need = x - base_ + 1;
            const auto n = static_cast<std::size_t>(std::max<Site>(need, 2 * static_cast<Site>(buf_.size())));
            buf_.resize(n, SiteState::Empty);
        }
    }

    ProcessKind rule_kind(double time) const { return time <= s_ ? pol_.since_kind : kind_; }

    /// Brings an outside site into the window at time u: replays its isolated
    /// history from the tail reference time and registers its streams.
    void add_site(Site y, double u) {
        const std::size_t width = static_cast<std::size_t>(std::max(hi_, y) - std::min(lo_, y) + 1);
        if (width > opt_.window_cap)
            throw WindowOverflow("window exceeded the cap of " + std::to_string(opt_.window_cap) +
                                 " sites");
        reserve_site(y);
        SiteState st = nominal_tail(pol_, y);
        StreamCursor heal = log_.cursor_after(ObjectKey::healing(y), tail_t0_);
        StreamCursor bl = log_.cursor_after(ObjectKey::blocking(y - 1, y), tail_t0_);
        StreamCursor br = log_.cursor_after(ObjectKey::blocking(y + 1, y), tail_t0_);
        const bool use_l = blocking_in_box(y - 1), use_r = blocking_in_box(y + 1);
        SiteState at_start = st;
        bool start_fixed = tail_t0_ >= s_;
        for (;;) {
            const double th = heal.peek();
            const double tl = use_l ? bl.peek() : kInf;
            const double tr = use_r ? br.peek() : kInf;
            double tm = std::min({th, tl, tr});
            if (tm > u) break;
            if (tm > s_ && !start_fixed) {
                at_start = st;
                start_fixed = true;
            }
            SiteState next = st;
            if (tm > tail_t0_) {
                if (tm == th) {
                    next = SiteState::Empty;
                } else if (st == SiteState::Empty && rule_kind(tm) == ProcessKind::Spont) {
                    next = SiteState::Blocked;
                }
            }
            if (tm == th) heal.pop();
            else if (tm == tl) bl.pop();
            else br.pop();
            if (next != st) {
                st = next;
                if (tm > s_ && opt_.retain_deltas) tail_deltas_.push_back({tm, y, st});
            }
        }
        if (!start_fixed) at_start = st;
        if (y < lo_) lo_ = y;
        if (y > hi_) hi_ = y;
        cell(y) = st;
        if (!initial_has(y)) out_.initial.set(y, at_start);
        if (st == SiteState::Occupied) note_occupied(y, u);
        register_streams(y, u, heal, bl, br);
    }

    bool initial_has(Site y) const { return out_.initial.in_window(y); }

    void register_streams(Site y, double u, StreamCursor heal, StreamCursor bl, StreamCursor br) {
        if (clamped_ && y == pol_.clamp) return;  // pinned occupied
        push_stream(ObjectKey::healing(y), heal);
        for (Site x : {y - 1, y + 1}) {
            if (!in_box(x)) continue;
            const ObjectKey k = ObjectKey::fertile(x, y);
            push_stream(k, log_.cursor_after(k, u));
        }
        if (kind_ != ProcessKind::CP) {
            if (blocking_in_box(y - 1)) push_stream(ObjectKey::blocking(y - 1, y), bl);
            if (blocking_in_box(y + 1)) push_stream(ObjectKey::blocking(y + 1, y), br);
        }
    }

    void init(const Configuration& c0) {
        if (t_ < s_) throw InvalidParameter("evolution interval must satisfy s <= t");
        if (t_ > log_.horizon()) throw OutOfHorizon("evolution interval ends beyond the horizon");
        Site lo = c0.lo, hi = c0.hi;
        if (opt_.box) {
            lo = opt_.box->first;
            hi = opt_.box->second;
        }
        if (clamped_) lo = pol_.clamp;
        if (hi < lo) hi = lo;
        lo_ = lo;
        hi_ = lo - 1;
        const auto given = [&](Site y) {
            return c0.in_window(y) || opt_.box || (clamped_ && y <= pol_.clamp);
        };
        for (Site y = lo; y <= hi; ++y) {
            reserve_site(y);
            if (!given(y)) continue;
            const SiteState st = c0.at(y);
            hi_ = std::max(hi_, y);
            cell(y) = st;
            if (st == SiteState::Occupied) note_occupied(y, s_);
        }
        for (Site y = lo; y <= hi; ++y) {
            if (given(y)) {
                register_streams(y, s_, log_.cursor_after(ObjectKey::healing(y), s_),
                                 log_.cursor_after(ObjectKey::blocking(y - 1, y), s_),
                                 log_.cursor_after(ObjectKey::blocking(y + 1, y), s_));
            } else {
                hi_ = std::max(hi_, y);
                add_site(y, s_);
            }
        }
        if (!opt_.box) {
            if (!clamped_) add_site(lo_ - 1, s_);
            add_site(hi_ + 1, s_);
        }
        out_.rightmost_path.push_back({s_, occupied_ ? r_ : (clamped_ ? pol_.clamp : kNoSite)});
        out_.leftmost_path.push_back({s_, occupied_ ? l_ : kNoSite});
        if (occupied_ == 0) out_.extinction = s_;
    }

    void note_occupied(Site y, double) {
        if (occupied_ == 0) {
            r_ = l_ = y;
        } else {
            r_ = std::max(r_, y);
            l_ = std::min(l_, y);
        }
        ++occupied_;
    }

    void record_paths(double time) {
        const Site r = occupied_ ? r_ : kNoSite;
        const Site l = occupied_ ? l_ : kNoSite;
        if (out_.rightmost_path.back().site != r) out_.rightmost_path.push_back({time, r});
        if (out_.leftmost_path.back().site != l) out_.leftmost_path.push_back({time, l});
    }

    void set(Site y, SiteState v, double time) {
        SiteState& c = cell(y);
        const SiteState old = c;
        c = v;
        if (opt_.retain_deltas) out_.deltas.push_back({time, y, v});
        if (old == SiteState::Occupied) {
            --occupied_;
            if (occupied_ == 0) {
                if (!out_.extinction) out_.extinction = time;
            } else {
                if (y == r_) {
                    Site z = y - 1;
                    while (get(z) != SiteState::Occupied) --z;
                    r_ = z;
                }
                if (y == l_) {
                    Site z = y + 1;
                    while (get(z) != SiteState::Occupied) ++z;
                    l_ = z;
                }
            }
        }
        if (v == SiteState::Occupied) note_occupied(y, time);
        record_paths(time);
    }

    void apply(const ObjectKey& k, double time) {
        const Site y = k.target;
        switch (k.kind) {
        case ArrivalKind::Healing:
            if (get(y) != SiteState::Empty) set(y, SiteState::Empty, time);
            break;
        case ArrivalKind::FertileArrow:
            if (get(k.origin) == SiteState::Occupied && get(y) == SiteState::Empty) {
                set(y, SiteState::Occupied, time);
                if (!opt_.box) {
                    if (y == hi_) add_site(y + 1, time);
                    if (y == lo_ && !clamped_) add_site(y - 1, time);
                }
            }
            break;
        case ArrivalKind::BlockingArrow:
            if (kind_ == ProcessKind::CP) break;
            if (get(y) != SiteState::Empty) break;
            if (blocking_needs_origin(kind_) && get(k.origin) != SiteState::Occupied) break;
            set(y, SiteState::Blocked, time);
            break;
        }
    }

    Trajectory finish() {
        if (!tail_deltas_.empty()) {
            std::stable_sort(tail_deltas_.begin(), tail_deltas_.end(),
                             [](const Delta& a, const Delta& b) { return a.time < b.time; });
            std::vector<Delta> merged;
            merged.reserve(out_.deltas.size() + tail_deltas_.size());
            std::merge(tail_deltas_.begin(), tail_deltas_.end(), out_.deltas.begin(),
                       out_.deltas.end(), std::back_inserter(merged),
                       [](const Delta& a, const Delta& b) { return a.time < b.time; });
            out_.deltas = std::move(merged);
        }
        out_.lo_reached = lo_;
        out_.hi_reached = hi_;
        out_.box = opt_.box;
        out_.box_blocking_by_target = opt_.box_blocking_by_target;
        return std::move(out_);
    }

    ProcessKind kind_;
    const EventLog& log_;
    double s_;
    double t_;
    EvolveOptions opt_;
    BoundaryPolicy pol_;
    double tail_t0_ = 0.0;
    bool clamped_ = false;

    Site base_ = 0;
    std::vector<SiteState> buf_;
    Site lo_ = 0;
    Site hi_ = -1;
    std::vector<StreamEntry> streams_;
    std::vector<HeapEntry> heap_;
    Trajectory out_;
    std::vector<Delta> tail_deltas_;
    Site r_ = 0;
    Site l_ = 0;
    std::size_t occupied_ = 0;
};

}  // namespace

Trajectory evolve(ProcessKind kind, const Configuration& c0, const EventLog& log, double s, double t,
                  const EvolveOptions& opt) {
    if (c0.hi < c0.lo && c0.policy.kind != TailKind::OccupiedLeftClamp)
        throw InconsistentSpec("configuration window is empty");
    Engine e(kind, c0, log, s, t, opt);
    return e.run();
}

Trajectory evolve(ProcessKind kind, const Configuration& c0, const RestrictedView& view, double s,
                  double t, const EvolveOptions& opt) {
    return evolve(kind, c0, view.base(), std::max(s, view.start()), t, opt);
}

namespace {

SiteState autonomous_state(const EventLog& log, const BoundaryPolicy& pol, ProcessKind kind,
                           double start, Site x, double u) {
    SiteState st = nominal_tail(pol, x);
    if (pol.kind == TailKind::OccupiedLeftClamp) return st;
    const double t0 = pol.since.value_or(start);
    const auto& heal = log.stream(ObjectKey::healing(x));
    const auto& bl = log.stream(ObjectKey::blocking(x - 1, x));
    const auto& br = log.stream(ObjectKey::blocking(x + 1, x));
    std::size_t ih = std::upper_bound(heal.begin(), heal.end(), t0) - heal.begin();
    std::size_t il = std::upper_bound(bl.begin(), bl.end(), t0) - bl.begin();
    std::size_t ir = std::upper_bound(br.begin(), br.end(), t0) - br.begin();
    for (;;) {
        const double th = ih < heal.size() ? heal[ih] : kInf;
        const double tl = il < bl.size() ? bl[il] : kInf;
        const double tr = ir < br.size() ? br[ir] : kInf;
        const double tm = std::min({th, tl, tr});
        if (tm > u) break;
        const ProcessKind rk = tm <= start ? pol.since_kind : kind;
        if (tm == th) {
            st = SiteState::Empty;
            ++ih;
        } else {
            if (st == SiteState::Empty && rk == ProcessKind::Spont) st = SiteState::Blocked;
            if (tm == tl) ++il;
            else ++ir;
        }
    }
    return st;
}

/// Rebuilds paths and extinction from the retained deltas.
void summarize(Trajectory& tr) {
    std::unordered_map<Site, SiteState> cur;
    std::set<Site> occ;
    const bool clamped = tr.initial.policy.kind == TailKind::OccupiedLeftClamp;
    for (Site y = tr.initial.lo; y <= tr.initial.hi; ++y)
        if (tr.initial.at(y) == SiteState::Occupied) occ.insert(y);
    auto path_site = [&](bool right) {
        if (occ.empty()) return clamped ? tr.initial.policy.clamp : kNoSite;
        return right ? *occ.rbegin() : *occ.begin();
    };
    tr.rightmost_path = {{tr.start, path_site(true)}};
    tr.leftmost_path = {{tr.start, path_site(false)}};
    tr.extinction.reset();
    if (occ.empty() && !clamped) tr.extinction = tr.start;
    for (const Delta& d : tr.deltas) {
        if (d.state == SiteState::Occupied) occ.insert(d.site);
        else occ.erase(d.site);
        const Site r = path_site(true), l = path_site(false);
        if (tr.rightmost_path.back().site != r) tr.rightmost_path.push_back({d.time, r});
        if (tr.leftmost_path.back().site != l) tr.leftmost_path.push_back({d.time, l});
        if (occ.empty() && !clamped && !tr.extinction) tr.extinction = d.time;
    }
}

std::string describe(double t, Site x, int a, int b, int c) {
    std::ostringstream os;
    os << "t=" << t << " site=" << x << " spont=" << a << " is=" << b << " cp=" << c;
    return os.str();
}

}  // namespace

CoupledRun evolve_coupled(const Configuration& xi0, const Configuration& eta0,
                          const Configuration& zeta0, const EventLog& log, double t,
                          const EvolveOptions& opt) {
    if (!dominated(xi0, eta0) || !dominated(eta0, zeta0))
        throw PreconditionViolation("initial configurations are not ordered spont <= is <= cp");
    Site lo = std::min(zeta0.lo, std::min(xi0.lo, eta0.lo));
    Site hi = std::max(zeta0.hi, std::max(xi0.hi, eta0.hi));
    for (Site y = lo - 1; y <= hi + 1; ++y)
        if (zeta0.at(y) == SiteState::Blocked)
            throw PreconditionViolation("contact-process configuration holds a blocked site");

    EvolveOptions o = opt;
    o.retain_deltas = true;
    CoupledRun run;
    run.spont = evolve(ProcessKind::Spont, xi0, log, 0.0, t, o);
    run.is = evolve(ProcessKind::IS, eta0, log, 0.0, t, o);
    run.cp = evolve(ProcessKind::CP, zeta0, log, 0.0, t, o);

    const Trajectory* tr[3] = {&run.spont, &run.is, &run.cp};
    const TrajectoryIndex idx[3] = {TrajectoryIndex(run.spont, &log), TrajectoryIndex(run.is, &log),
                                    TrajectoryIndex(run.cp, &log)};
    std::unordered_map<Site, SiteState> cur[3];
    double tm = 0.0;
    auto state = [&](int i, Site x) {
        auto it = cur[i].find(x);
        if (it != cur[i].end()) return it->second;
        // never-reached sites follow their isolated dynamics
        if (x < idx[i].lo() || x > idx[i].hi()) return idx[i].state_at(x, tm);
        return tr[i]->initial.at(x);
    };
    std::size_t head[3] = {0, 0, 0};
    std::vector<Site> changed;
    for (;;) {
        tm = kInf;
        for (int i = 0; i < 3; ++i)
            if (head[i] < tr[i]->deltas.size()) tm = std::min(tm, tr[i]->deltas[head[i]].time);
        if (tm == kInf) break;
        changed.clear();
        for (int i = 0; i < 3; ++i) {
            const auto& ds = tr[i]->deltas;
            while (head[i] < ds.size() && ds[head[i]].time == tm) {
                cur[i][ds[head[i]].site] = ds[head[i]].state;
                changed.push_back(ds[head[i]].site);
                ++head[i];
            }
        }
        for (Site x : changed) {
            const int a = value(state(0, x)), b = value(state(1, x)), c = value(state(2, x));
            ++run.order_checks;
            if (a > b || b > c) {
                if (run.order_violations == 0) run.first_violation = describe(tm, x, a, b, c);
                ++run.order_violations;
            }
        }
    }
    return run;
}

Trajectory truncated_evolve_spont(Site n, const Configuration& xi0, const EventLog& log, double T,
                                  bool blocking_by_target) {
    if (n < 0) throw InvalidParameter("truncation radius must be non-negative");
    Configuration box;
    box.lo = -n;
    box.hi = n;
    for (Site y = -n; y <= n; ++y) box.states.push_back(xi0.at(y));
    box.policy.kind = TailKind::EmptyTail;
    EvolveOptions o;
    o.box = std::make_pair(-n, n);
    o.window_cap = static_cast<std::size_t>(2 * n + 1);
    o.box_blocking_by_target = blocking_by_target;
    return evolve(ProcessKind::Spont, box, log, 0.0, T, o);
}

Trajectory truncated_evolve_is(Site n, const Configuration& eta0, const EventLog& log, double T) {
    if (n < 0) throw InvalidParameter("truncation radius must be non-negative");
    if (T > log.horizon()) throw OutOfHorizon("evolution interval ends beyond the horizon");
    Configuration cfg;
    cfg.lo = -n;
    cfg.hi = n;
    for (Site y = -n; y <= n; ++y) cfg.states.push_back(eta0.at(y));
    cfg.policy.kind = TailKind::EmptyTail;

    Trajectory out;
    out.initial = cfg;
    out.kind = ProcessKind::IS;
    out.start = 0.0;
    out.horizon = T;

    // Phase 1: arrivals are taken one at a time from the growing region
    // [-m, m], m = n + k for the k-th acceptance. Once every non-zero site and
    // every neighbour of an occupied site lies inside the region, all later
    // arrivals that can act are accepted, so the plain lazy evolution takes over.
    Configuration cur = cfg;
    Site m = n + 1;
    std::vector<std::pair<ObjectKey, StreamCursor>> streams;
    // the region grows by x with inner neighbour `in`
    auto add_streams = [&](Site x, Site in, double from) {
        for (auto k : {ObjectKey::healing(x), ObjectKey::fertile(in, x), ObjectKey::fertile(x, in),
                       ObjectKey::blocking(in, x), ObjectKey::blocking(x, in)}) {
            streams.emplace_back(k, log.cursor_after(k, from));
        }
    };
    {
        const Site m0 = m;
        for (Site x = -m0; x <= m0; ++x) {
            StreamCursor c = log.cursor(ObjectKey::healing(x));
            streams.emplace_back(ObjectKey::healing(x), c);
            if (x < m0) {
                for (auto k : {ObjectKey::fertile(x, x + 1), ObjectKey::fertile(x + 1, x),
                               ObjectKey::blocking(x, x + 1), ObjectKey::blocking(x + 1, x)})
                    streams.emplace_back(k, log.cursor(k));
            }
        }
    }
    double now = 0.0;
    auto get = [&](Site x) { return cur.in_window(x) ? cur.at(x) : SiteState::Empty; };
    auto covered = [&]() {
        bool any = false;
        Site a = 0, b = 0;
        for (Site y = cur.lo; y <= cur.hi; ++y) {
            const SiteState st = cur.at(y);
            if (st == SiteState::Empty) continue;
            const Site l = st == SiteState::Occupied ? y - 1 : y;
            const Site r = st == SiteState::Occupied ? y + 1 : y;
            if (!any) a = l, b = r, any = true;
            a = std::min(a, l);
            b = std::max(b, r);
        }
        return !any || (a >= -m && b <= m);
    };
    while (!covered()) {
        std::size_t best = streams.size();
        for (std::size_t i = 0; i < streams.size(); ++i) {
            if (best == streams.size() || streams[i].second.peek() < streams[best].second.peek() ||
                (streams[i].second.peek() == streams[best].second.peek() &&
                 streams[i].first < streams[best].first))
                best = i;
        }
        const double tm = streams[best].second.peek();
        if (tm > T) {
            now = T;
            break;
        }
        const ObjectKey k = streams[best].first;
        streams[best].second.pop();
        now = tm;
        ++out.events_processed;
        const Site y = k.target;
        SiteState next = get(y);
        if (k.kind == ArrivalKind::Healing) {
            next = SiteState::Empty;
        } else if (get(y) == SiteState::Empty && get(k.origin) == SiteState::Occupied) {
            next = k.kind == ArrivalKind::FertileArrow ? SiteState::Occupied : SiteState::Blocked;
        }
        if (next != get(y)) {
            cur.set(y, next);
            out.deltas.push_back({tm, y, next});
        }
        ++m;
        add_streams(-m, -m + 1, now);
        add_streams(m, m - 1, now);
    }
    out.lo_reached = std::min(cur.lo, -m);
    out.hi_reached = std::max(cur.hi, m);

    if (now < T) {
        Configuration w;
        w.policy.kind = TailKind::EmptyTail;
        Site a = cur.hi, b = cur.lo;
        for (Site y = cur.lo; y <= cur.hi; ++y)
            if (cur.at(y) != SiteState::Empty) a = std::min(a, y), b = std::max(b, y);
        if (b < a) a = b = 0;
        w.lo = a;
        w.hi = b;
        for (Site y = a; y <= b; ++y) w.states.push_back(cur.at(y));
        Trajectory rest = evolve(ProcessKind::IS, w, log, now, T);
        out.deltas.insert(out.deltas.end(), rest.deltas.begin(), rest.deltas.end());
        out.events_processed += rest.events_processed;
        out.ties += rest.ties;
        out.lo_reached = std::min(out.lo_reached, rest.lo_reached);
        out.hi_reached = std::max(out.hi_reached, rest.hi_reached);
    }
    summarize(out);
    return out;
}

std::optional<double> first_path_discrepancy(const Trajectory& a, const Trajectory& b, double from,
                                             double to) {
    to = std::min({to, a.horizon, b.horizon});
    if (to < from) return std::nullopt;
    std::vector<double> times{from};
    for (const Trajectory* t : {&a, &b}) {
        for (const PathPoint& p : t->rightmost_path)
            if (p.time > from && p.time <= to) times.push_back(p.time);
    }
    std::sort(times.begin(), times.end());
    for (double t : times)
        if (a.rightmost_at(t) != b.rightmost_at(t)) return t;
    return std::nullopt;
}

TrajectoryIndex::TrajectoryIndex(const Trajectory& traj, const EventLog* log)
    : traj_(&traj), log_(log) {
    lo_ = std::min(traj.initial.lo, traj.lo_reached);
    hi_ = std::max(traj.initial.hi, traj.hi_reached);
    if (hi_ < lo_) hi_ = lo_ - 1;
    hist_.resize(static_cast<std::size_t>(hi_ - lo_ + 1));
    for (const Delta& d : traj.deltas) hist_[static_cast<std::size_t>(d.site - lo_)].push_back({d.time, d.state});
}

const std::vector<std::pair<double, SiteState>>& TrajectoryIndex::history(Site x) const {
    static const std::vector<std::pair<double, SiteState>> none;
    if (x < lo_ || x > hi_) return none;
    return hist_[static_cast<std::size_t>(x - lo_)];
}

SiteState TrajectoryIndex::state_at(Site x, double t) const {
    const Trajectory& tr = *traj_;
    if (x >= lo_ && x <= hi_) {
        const auto& h = hist_[static_cast<std::size_t>(x - lo_)];
        auto it = std::upper_bound(h.begin(), h.end(), t,
                                   [](double v, const auto& e) { return v < e.first; });
        if (it == h.begin()) return tr.initial.at(x);
        return std::prev(it)->second;
    }
    if (log_ && !tr.box && t > tr.start)
        return autonomous_state(*log_, tr.initial.policy, tr.kind, tr.start, x, t);
    if (log_ && !tr.box && tr.initial.policy.since)
        return autonomous_state(*log_, tr.initial.policy, tr.kind, tr.start, x, tr.start);
    return tr.initial.at(x);
}

Configuration TrajectoryIndex::snapshot(double t) const {
    const Trajectory& tr = *traj_;
    Configuration c;
    c.lo = lo_;
    c.hi = hi_;
    for (Site y = lo_; y <= hi_; ++y) c.states.push_back(state_at(y, t));
    c.policy = tr.initial.policy;
    if (c.policy.kind != TailKind::OccupiedLeftClamp && !tr.box) {
        if (c.policy.since && c.policy.since_kind != tr.kind && *c.policy.since < tr.start)
            throw PreconditionViolation("snapshot tail would mix two dynamics");
        c.policy.since = c.policy.since.value_or(tr.start);
        c.policy.since_kind = tr.kind;
    }
    return c;
}

ReplayAudit replay_audit(const Trajectory& traj, const EventLog& log) {
    ReplayAudit audit;
    if (!traj.retained) throw PreconditionViolation("replay audit needs retained deltas");
    const Site lo = std::min(traj.initial.lo, traj.lo_reached);
    const Site hi = std::max(traj.initial.hi, traj.hi_reached);
    const double end = traj.stopped_early && traj.extinction ? *traj.extinction : traj.horizon;
    auto inside = [&](Site x) {
        return !traj.box || (x >= traj.box->first && x <= traj.box->second);
    };
    const bool clamped = traj.initial.policy.kind == TailKind::OccupiedLeftClamp;

    struct Ev {
        double t;
        ObjectKey k;
    };
    std::vector<Ev> evs;
    for (Site y = lo; y <= hi; ++y) {
        if (clamped && y <= traj.initial.policy.clamp) continue;
        std::vector<ObjectKey> keys = {ObjectKey::healing(y)};
        for (Site x : {y - 1, y + 1}) {
            if (!inside(y)) continue;
            if (inside(x)) keys.push_back(ObjectKey::fertile(x, y));
            if (traj.kind != ProcessKind::CP && (inside(x) || traj.box_blocking_by_target))
                keys.push_back(ObjectKey::blocking(x, y));
        }
        for (const auto& k : keys)
            for (double t : log.stream(k))
                if (t > traj.start && t <= end) evs.push_back({t, k});
    }
    std::sort(evs.begin(), evs.end(), [](const Ev& a, const Ev& b) {
        return a.t != b.t ? a.t < b.t : a.k < b.k;
    });

    std::unordered_map<Site, SiteState> cur;
    auto get = [&](Site x) {
        auto it = cur.find(x);
        if (it != cur.end()) return it->second;
        const SiteState s = traj.initial.at(x);
        // only the origin role reads outside sites, and they are never occupied
        // except under the clamp
        if ((x < lo || x > hi) && s != SiteState::Occupied) return SiteState::Empty;
        return s;
    };
    std::vector<Delta> expect;
    for (const Ev& e : evs) {
        const Site y = e.k.target;
        const SiteState pre = get(y);
        SiteState next = pre;
        switch (e.k.kind) {
        case ArrivalKind::Healing: next = SiteState::Empty; break;
        case ArrivalKind::FertileArrow:
            if (pre == SiteState::Empty && get(e.k.origin) == SiteState::Occupied) next = SiteState::Occupied;
            break;
        case ArrivalKind::BlockingArrow:
            if (pre == SiteState::Empty &&
                (traj.kind == ProcessKind::Spont || get(e.k.origin) == SiteState::Occupied))
                next = SiteState::Blocked;
            break;
        }
        if (next != pre) {
            cur[y] = next;
            expect.push_back({e.t, y, next});
        }
    }
    auto key = [](const Delta& d) { return std::make_tuple(d.time, d.site, value(d.state)); };
    std::vector<Delta> got;
    for (const Delta& d : traj.deltas)
        if (d.time <= end) got.push_back(d);
    std::sort(expect.begin(), expect.end(), [&](const Delta& a, const Delta& b) { return key(a) < key(b); });
    std::sort(got.begin(), got.end(), [&](const Delta& a, const Delta& b) { return key(a) < key(b); });
    const std::size_t n = std::max(expect.size(), got.size());
    for (std::size_t i = 0; i < n; ++i) {
        ++audit.checked;
        const bool ok = i < expect.size() && i < got.size() && key(expect[i]) == key(got[i]);
        if (!ok) {
            if (audit.violations == 0) {
                std::ostringstream os;
                os << "delta " << i << ": ";
                if (i < got.size()) os << "recorded (t=" << got[i].time << ", x=" << got[i].site << ", s=" << value(got[i].state) << ")";
                else os << "recorded none";
                if (i < expect.size()) os << " replay (t=" << expect[i].time << ", x=" << expect[i].site << ", s=" << value(expect[i].state) << ")";
                else os << " replay none";
                audit.first_violation = os.str();
            }
            ++audit.violations;
        }
    }
    return audit;
}

}  // namespace ips
