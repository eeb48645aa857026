#include "ips/renewal.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <map>
#include <random>

namespace ips {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double first_after(const EventLog& log, const ObjectKey& key, double t) {
    return log.first_after(key, t);
}

// Last arrival of `key` in (a, b], or -inf.
double last_in(const EventLog& log, const ObjectKey& key, double a, double b) {
    const auto& s = log.stream(key);
    auto it = std::upper_bound(s.begin(), s.end(), b);
    if (it == s.begin()) return -kInf;
    --it;
    return *it > a ? *it : -kInf;
}

// Spont state at t of a site that nobody infects after t0, starting from s0.
SiteState isolated_spont(const EventLog& log, Site x, double t0, SiteState s0, double t) {
    SiteState st = s0;
    double from = t0;
    const double u = last_in(log, ObjectKey::healing(x), t0, t);
    if (u > -kInf) {
        st = SiteState::Empty;
        from = u;
    }
    if (st == SiteState::Empty &&
        (first_after(log, ObjectKey::blocking(x - 1, x), from) <= t ||
         first_after(log, ObjectKey::blocking(x + 1, x), from) <= t))
        st = SiteState::Blocked;
    return st;
}

// First time the rightmost of the hostile and the maximal Spont restarts
// separate: a fertile arrow from the common rightmost R into R+1 while R+1
// is still blocked in the hostile restart and empty in the maximal one,
// i.e. R+1 has seen neither a healing mark nor a blocking arrow since start.
double spont_split_time(const BaseRun& base, double start, double end) {
    const EventLog& log = base.log();
    const auto& path = base.traj().rightmost_path;
    auto it = std::upper_bound(path.begin(), path.end(), start,
                               [](double v, const PathPoint& p) { return v < p.time; });
    if (it == path.begin()) return kInf;
    for (--it; it != path.end(); ++it) {
        const double a = std::max(it->time, start);
        if (a >= end) break;
        const double b = std::next(it) == path.end() ? base.traj().horizon : std::next(it)->time;
        if (it->site == kNoSite) break;
        const Site R = it->site;
        const Site y = R + 1;
        const double cutoff = std::min({first_after(log, ObjectKey::healing(y), start),
                                        first_after(log, ObjectKey::blocking(R, y), start),
                                        first_after(log, ObjectKey::blocking(y + 1, y), start)});
        const double u = first_after(log, ObjectKey::fertile(R, y), a);
        if (u <= b && u <= end && u < cutoff) return u;
    }
    return kInf;
}

// Extinction time of the hostile Spont restart from the base rightmost at
// `start`, up to `end`, valid while the restart and base rightmost paths
// agree. The restart equals the base between its own leftmost and
// rightmost occupied sites, so only its leftmost needs tracking; sites left
// of it evolve in isolation from the state they had when it passed them.
double spont_hostile_extinction(const BaseRun& base, double start, double end) {
    const EventLog& log = base.log();
    const TrajectoryIndex& idx = base.index();
    auto r0 = base.traj().rightmost_at(start);
    if (!r0) return start;
    Site l = *r0;
    double now = start;
    std::map<Site, std::pair<double, SiteState>> passed;
    while (true) {
        const double tu = first_after(log, ObjectKey::healing(l), now);
        const double tn = first_after(log, ObjectKey::fertile(l, l - 1), now);
        const double t = std::min(tu, tn);
        if (t > end) return kInf;
        if (tu < tn) {
            auto rb = base.traj().rightmost_at(t);
            Site next = kNoSite;
            if (rb) {
                for (Site x = l + 1; x <= *rb; ++x) {
                    if (idx.state_at(x, t) == SiteState::Occupied) {
                        next = x;
                        break;
                    }
                }
            }
            if (next == kNoSite) return t;
            passed[l] = {t, SiteState::Empty};
            for (Site z = l + 1; z < next; ++z) passed[z] = {t, idx.state_at(z, t)};
            l = next;
        } else {
            auto rec = passed.find(l - 1);
            const auto [t0, s0] =
                rec == passed.end() ? std::pair{start, SiteState::Blocked} : rec->second;
            if (isolated_spont(log, l - 1, t0, s0, t) == SiteState::Empty) {
                if (rec != passed.end()) passed.erase(rec);
                --l;
            }
        }
        now = t;
    }
}

FailureResult combine(double tau, double split, double horizon) {
    if (tau <= split && tau <= horizon) return {tau, FailureReason::SurvivalFailed};
    if (split <= horizon) return {split, FailureReason::InvarianceFailed};
    return {};
}

double extinction_or_inf(const Trajectory& t) { return t.extinction ? *t.extinction : kInf; }

FailureResult spont_reference(const BaseRun& base, double start, double horizon) {
    const EventLog& log = base.log();
    const Site r0 = *base.traj().rightmost_at(start);
    Trajectory hostile = evolve(ProcessKind::Spont, make_initial(Hostile{r0}), log, start, horizon);
    Trajectory maximal = evolve(
        ProcessKind::Spont,
        make_initial(MaxConfig{r0, heaviside_clamp(r0, log.lambda(), horizon - start)}), log,
        start, horizon);
    const double tau = extinction_or_inf(hostile);
    double split = kInf;
    for (const Trajectory* other : {static_cast<const Trajectory*>(&hostile), &base.traj()}) {
        if (auto d = first_path_discrepancy(*other, maximal, start, horizon))
            split = std::min(split, *d);
    }
    return combine(tau, split, horizon);
}

double spont_hostile_explicit(const EventLog& log, Site r0, double start, double end) {
    if (end <= start) return kInf;
    EvolveOptions opt;
    opt.stop_at_extinction = true;
    opt.retain_deltas = false;
    Trajectory h = evolve(ProcessKind::Spont, make_initial(Hostile{r0}), log, start, end, opt);
    return extinction_or_inf(h);
}

std::vector<Configuration> is_family(const BaseRun& base, double start, Site r0,
                                     const PropertyPolicy& policy) {
    std::vector<Configuration> family;
    family.push_back(make_initial(Hostile{r0}));
    std::mt19937_64 rng(mix64(policy.family_seed ^ mix64(base.log().master_seed()) ^
                              std::bit_cast<std::uint64_t>(start)));
    const Site R = policy.family_window_radius;
    for (int i = 0; i < policy.family_size; ++i) {
        Explicit e;
        e.lo = r0 - R;
        e.states.resize(static_cast<std::size_t>(2 * R + 1));
        for (Site x = r0 - R; x <= r0 + R; ++x) {
            SiteState s = SiteState::Occupied;
            if (x < r0) s = static_cast<SiteState>(static_cast<int>(rng() % 3) - 1);
            if (x > r0) s = static_cast<SiteState>(-static_cast<int>(rng() % 2));
            e.states[static_cast<std::size_t>(x - e.lo)] = s;
        }
        e.tail = TailKind::EmptyTail;
        family.push_back(make_initial(e));
    }
    return family;
}

FailureResult is_family_search(const BaseRun& base, double start, const PropertyPolicy& policy,
                               double horizon) {
    const EventLog& log = base.log();
    const Site r0 = *base.traj().rightmost_at(start);
    if (policy.reference) {
        double split = kInf;
        for (const Configuration& c : is_family(base, start, r0, policy)) {
            Trajectory m = evolve(ProcessKind::IS, c, log, start, horizon);
            if (auto d = first_path_discrepancy(m, base.traj(), start, horizon))
                split = std::min(split, *d);
        }
        return combine(spont_hostile_explicit(log, r0, start, horizon), split, horizon);
    }
    const auto cands = split_candidates(base, start, horizon);
    // Members and the survival witness are evolved to growing prefixes of the
    // candidate list; the first stage that shows a discrepancy or an
    // extinction already contains the earliest one. Discrepancies after the
    // extinction do not matter.
    std::vector<double> stages;
    for (std::size_t n = 1; n < cands.size(); n *= 2) stages.push_back(cands[n - 1]);
    if (!cands.empty()) stages.push_back(cands.back());
    std::vector<Configuration> family;
    double split = kInf;
    for (double stage : stages) {
        const double tau = spont_hostile_explicit(log, r0, start, stage);
        const double end = std::min(stage, tau);
        if (cands.front() < tau) {
            if (family.empty()) family = is_family(base, start, r0, policy);
            for (const Configuration& c : family) {
                // Only an earlier discrepancy can still lower the minimum, and
                // none comes before the first candidate.
                const double until = std::min(end, split);
                EvolveOptions opt;
                opt.retain_deltas = false;
                Trajectory m = evolve(ProcessKind::IS, c, log, start, until, opt);
                if (auto d = first_path_discrepancy(m, base.traj(), start, until))
                    split = std::min(split, *d);
                if (split == cands.front()) break;
            }
        }
        if (split < kInf || tau < kInf) return combine(tau, split, horizon);
    }
    const double tau = spont_hostile_explicit(log, r0, start, horizon);
    return combine(tau, split, horizon);
}

FailureResult search(const BaseRun& base, double start, const PropertyPolicy& policy,
                     double horizon) {
    if (base.kind() == ProcessKind::Spont) {
        if (policy.reference) return spont_reference(base, start, horizon);
        const double split = spont_split_time(base, start, horizon);
        const double tau = spont_hostile_extinction(base, start, std::min(split, horizon));
        return combine(tau, split, horizon);
    }
    return is_family_search(base, start, policy, horizon);
}

}  // namespace

const char* to_string(PropertyMode m) {
    switch (m) {
    case PropertyMode::SpontExtremal: return "SpontExtremal";
    case PropertyMode::ISSampledFamily: return "ISSampledFamily";
    case PropertyMode::Certificate: return "Certificate";
    }
    return "?";
}

PropertyMode parse_property_mode(const std::string& s) {
    if (s == "SpontExtremal") return PropertyMode::SpontExtremal;
    if (s == "ISSampledFamily") return PropertyMode::ISSampledFamily;
    if (s == "Certificate") return PropertyMode::Certificate;
    throw InvalidMode("unknown property mode: " + s);
}

const char* to_string(FailureReason r) {
    switch (r) {
    case FailureReason::None: return "None";
    case FailureReason::SurvivalFailed: return "SurvivalFailed";
    case FailureReason::InvarianceFailed: return "InvarianceFailed";
    }
    return "?";
}

BaseRun::BaseRun(const EventLog& log, Trajectory traj)
    : log_(&log), traj_(std::move(traj)), index_(traj_, &log) {}

void validate_policy(ProcessKind kind, const PropertyPolicy& policy) {
    if (policy.family_size < 2) throw InvalidMode("family_size must be at least 2");
    if (policy.family_window_radius < 0) throw InvalidMode("family_window_radius must be >= 0");
    switch (policy.mode) {
    case PropertyMode::SpontExtremal:
        if (kind != ProcessKind::Spont) throw InvalidMode("SpontExtremal requires the Spont process");
        break;
    case PropertyMode::ISSampledFamily:
        if (kind != ProcessKind::IS) throw InvalidMode("ISSampledFamily requires the IS process");
        break;
    case PropertyMode::Certificate:
        if (kind == ProcessKind::CP) throw InvalidMode("Certificate mode needs Spont or IS");
        break;
    }
}

std::vector<double> split_candidates(const BaseRun& base, double start, double horizon) {
    const EventLog& log = base.log();
    const auto& path = base.traj().rightmost_path;
    std::vector<double> out;
    auto it = std::upper_bound(path.begin(), path.end(), start,
                               [](double v, const PathPoint& p) { return v < p.time; });
    if (it == path.begin()) return out;
    for (--it; it != path.end(); ++it) {
        const double a = std::max(it->time, start);
        if (a >= horizon) break;
        if (it->site == kNoSite) break;
        const double b = std::min(
            horizon, std::next(it) == path.end() ? base.traj().horizon : std::next(it)->time);
        const Site R = it->site;
        const double healed = first_after(log, ObjectKey::healing(R + 1), start);
        const auto& arrows = log.stream(ObjectKey::fertile(R, R + 1));
        for (auto u = std::upper_bound(arrows.begin(), arrows.end(), a);
             u != arrows.end() && *u <= b && *u < healed; ++u)
            out.push_back(*u);
    }
    return out;
}

FailureResult failure_time(const BaseRun& base, double start, const PropertyPolicy& policy,
                           double horizon) {
    validate_policy(base.kind(), policy);
    if (!(start < horizon)) throw std::invalid_argument("failure_time needs start < horizon");
    if (horizon > base.traj().horizon) throw OutOfHorizon("horizon beyond the base trajectory");
    auto r0 = base.traj().rightmost_at(start);
    if (!r0) return {start, FailureReason::SurvivalFailed};
    if (policy.mode == PropertyMode::Certificate) {
        // The certificate is only sufficient; when it fails fall back to the
        // search of the process kind.
        if (certificate_IRH(base, start, policy.certificate) &&
            spont_hostile_explicit(base.log(), *r0, start, horizon) == kInf)
            return {};
    }
    return search(base, start, policy, horizon);
}

PropertyVerdict special_property(const BaseRun& base, double t1, double t2,
                                 const PropertyPolicy& policy) {
    validate_policy(base.kind(), policy);
    if (!(t1 < t2)) throw std::invalid_argument("special_property needs t1 < t2");
    PropertyVerdict v;
    auto r0 = base.traj().rightmost_at(t1);
    if (!r0) {
        v.failure_time = t1;
        v.failure_reason = FailureReason::SurvivalFailed;
        return v;
    }
    if (policy.mode == PropertyMode::Certificate) {
        v.certified = certificate_IRH(base, t1, policy.certificate) &&
                      spont_hostile_explicit(base.log(), *r0, t1, t2) == kInf;
        v.holds = v.certified;
        return v;
    }
    const FailureResult f = failure_time(base, t1, policy, t2);
    v.holds = f.certified();
    v.failure_time = f.time;
    v.failure_reason = f.reason;
    return v;
}

double envelope_excess(const BaseRun& base, double t, double alpha_hat) {
    const EventLog& log = base.log();
    const double T = base.traj().horizon;
    const auto rr = base.traj().rightmost_at(t);
    if (t + 1.0 > T || !rr) throw PreconditionViolation("envelope needs an occupied front and t + 1 <= T");
    const Site r = *rr;
    // Contact process from the half-line left of r+1, started after the quiet unit.
    const Configuration h = make_initial(Heaviside{r + 1, heaviside_clamp(r + 1, log.lambda(), T - t - 1.0)});
    EvolveOptions opt;
    opt.retain_deltas = false;
    const Trajectory cp = evolve(ProcessKind::CP, h, log, t + 1.0, T, opt);
    Site running = kNoSite;
    double excess = -kInf;
    for (const PathPoint& p : cp.rightmost_path) {
        running = std::max(running, p.site);
        excess = std::max(excess, static_cast<double>(running - r) - 3.0 * alpha_hat * (p.time - t));
    }
    return excess;
}

bool frontier_event(const BaseRun& base, double t, const CertificateConstants& k) {
    const EventLog& log = base.log();
    const double T = base.traj().horizon;
    const auto rr = base.traj().rightmost_at(t);
    if (t + 1.0 > T || !rr) return false;
    const Site r = *rr;
    const Site L2 = static_cast<Site>(std::floor(k.L2));
    // Least site beyond r + 2 L2 without a healing mark in [t+1, t+s], checked
    // at the instants it moves.
    const auto bound = [&](double s) { return static_cast<double>(r) + k.L2 + 4.0 * k.alpha_hat * s; };
    const auto first_heal = [&](Site y) { return first_after(log, ObjectKey::healing(y), t + 1.0); };
    Site y = r + 2 * L2 + 1;
    while (true) {
        if (static_cast<double>(y) > bound(T - t)) return true;
        const double fy = first_heal(y);
        if (fy > T || !(static_cast<double>(y) > bound(fy - t))) return false;
        ++y;
        while (first_heal(y) <= fy) ++y;
    }
}

namespace {

CertificateParts certificate_eval(const BaseRun& base, double t, const CertificateConstants& k,
                                  bool all) {
    CertificateParts out;
    const EventLog& log = base.log();
    const double T = base.traj().horizon;
    if (t + 1.0 > T) return out;
    auto rr = base.traj().rightmost_at(t);
    if (!rr) return out;
    const Site r = *rr;
    const Site L2 = static_cast<Site>(std::floor(k.L2));

    // I: the front sits still during [t, t+1] while the block ahead heals.
    out.I = !log.any_in(ObjectKey::fertile(r, r + 1), t, t + 1) &&
            !log.any_in(ObjectKey::fertile(r, r - 1), t, t + 1) &&
            !log.any_in(ObjectKey::healing(r), t, t + 1);
    for (Site y = r + 1; out.I && y <= r + 2 * L2; ++y)
        if (!log.any_in(ObjectKey::healing(y), t, t + 1)) out.I = false;
    if (!all && !out.I) return out;
    // R: the envelope's running max stays below r + L1 + 3 alpha (s - t).
    out.R = envelope_excess(base, t, k.alpha_hat) < k.L1;
    if (!all && !out.R) return out;
    out.H = frontier_event(base, t, k);
    return out;
}

}  // namespace

CertificateParts certificate_parts(const BaseRun& base, double t, const CertificateConstants& k) {
    return certificate_eval(base, t, k, true);
}

bool certificate_IRH(const BaseRun& base, double t, const CertificateConstants& k) {
    const CertificateParts c = certificate_eval(base, t, k, false);
    return c.I && c.R && c.H;
}

RenewalRecord renewal_sequence(const BaseRun& base, double guard, const PropertyPolicy& policy,
                               std::optional<double> horizon) {
    validate_policy(base.kind(), policy);
    const double T = horizon.value_or(base.traj().horizon);
    if (!(T > base.traj().start) || T > base.traj().horizon)
        throw OutOfHorizon("renewal horizon outside the base run");
    if (guard < 0.0) throw std::invalid_argument("guard must be non-negative");
    RenewalRecord rec;
    rec.horizon = T;
    rec.guard = guard;
    double F = base.traj().start;
    while (F < T) {
        auto r = base.traj().rightmost_at(F);
        if (!r) break;
        ++rec.attempts;
        const FailureResult f = failure_time(base, F, policy, T);
        if (f.certified()) {
            rec.sigmas.push_back(F);
            rec.rightmosts.push_back(*r);
            rec.censored.push_back(T - F < guard);
            F += 1.0;
            continue;
        }
        if (!(*f.time > F)) throw std::logic_error("failure time did not advance");
        rec.failure_log.push_back(*f.time);
        F = *f.time;
    }
    const auto& ext = base.traj().extinction;
    if (rec.sigmas.empty() && ext && *ext <= T)
        throw ExtinctRun("base process died before its first renewal");

    const auto& path = base.traj().rightmost_path;
    for (std::size_t k = 0; k < rec.sigmas.size(); ++k) {
        const double a = rec.sigmas[k];
        const double b = k + 1 < rec.sigmas.size() ? rec.sigmas[k + 1] : T;
        Site sup = 0;
        auto it = std::upper_bound(path.begin(), path.end(), a,
                                   [](double v, const PathPoint& p) { return v < p.time; });
        for (--it; it != path.end() && it->time <= b; ++it)
            if (it->site != kNoSite) sup = std::max(sup, std::abs(it->site - rec.rightmosts[k]));
        rec.excursions.push_back(sup);
    }
    return rec;
}

std::vector<IncrementSample> harvest_increments(const RenewalRecord& record, std::uint64_t run_id) {
    std::vector<IncrementSample> out;
    for (std::size_t k = 0; k + 1 < record.sigmas.size(); ++k) {
        if (record.censored[k] || record.censored[k + 1]) continue;
        out.push_back({record.sigmas[k + 1] - record.sigmas[k],
                       record.rightmosts[k + 1] - record.rightmosts[k], run_id, k});
    }
    return out;
}

}  // namespace ips
