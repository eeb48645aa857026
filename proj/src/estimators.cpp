#include "ips/estimators.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <memory>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "ips/paths.hpp"

namespace ips {

namespace {

constexpr double kZ95 = 1.959963984540054;

double mean_of(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double var_of(const std::vector<double>& v, double m) {
    if (v.size() < 2) return 0.0;
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
}

double std_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

SiteState random_state(std::mt19937_64& rng, int lo, int hi) {
    return static_cast<SiteState>(lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1)));
}

Configuration window_config(Site lo, const std::vector<SiteState>& states) {
    Explicit e;
    e.lo = lo;
    e.states = states;
    return make_initial(e);
}

/// Every (time, site) at which either run changes a site, in time order.
std::vector<std::pair<double, Site>> change_points(std::initializer_list<const Trajectory*> runs) {
    std::vector<std::pair<double, Site>> out;
    for (const Trajectory* r : runs)
        for (const Delta& d : r->deltas) out.push_back({d.time, d.site});
    std::sort(out.begin(), out.end());
    return out;
}

/// First (t, x) with state(a) > state(b), if any.
std::optional<std::pair<double, Site>> first_order_violation(const Trajectory& a, const Trajectory& b,
                                                             const EventLog& log) {
    TrajectoryIndex ia(a, &log), ib(b, &log);
    for (Site x = std::min(ia.lo(), ib.lo()); x <= std::max(ia.hi(), ib.hi()); ++x)
        if (value(ia.state_at(x, a.start)) > value(ib.state_at(x, b.start))) return std::pair{a.start, x};
    for (const auto& [t, x] : change_points({&a, &b}))
        if (value(ia.state_at(x, t)) > value(ib.state_at(x, t))) return std::pair{t, x};
    return std::nullopt;
}

nlohmann::json config_json(const Configuration& c) {
    std::vector<int> states;
    for (SiteState s : c.states) states.push_back(value(s));
    return {{"lo", c.lo}, {"states", states}};
}

Configuration config_from_json(const nlohmann::json& j) {
    std::vector<SiteState> states;
    for (int v : j.at("states").get<std::vector<int>>()) states.push_back(static_cast<SiteState>(v));
    return window_config(j.at("lo").get<Site>(), states);
}

}  // namespace

std::uint64_t trial_seed(std::uint64_t master, std::uint64_t trial) {
    return mix64(mix64(master) ^ (trial * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL));
}

void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& body) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < threads; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < n;) {
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(mu);
                    if (!error) error = std::current_exception();
                    next = n;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

StatsSummary wilson_summary(std::size_t successes, std::size_t n) {
    StatsSummary s;
    s.method = "wilson";
    s.n_trials = n;
    s.n_surviving = successes;
    if (n == 0) return s;
    const double nn = static_cast<double>(n);
    const double ph = static_cast<double>(successes) / nn;
    const double z2 = kZ95 * kZ95;
    const double centre = (ph + z2 / (2 * nn)) / (1 + z2 / nn);
    const double half = kZ95 * std::sqrt(ph * (1 - ph) / nn + z2 / (4 * nn * nn)) / (1 + z2 / nn);
    s.estimate = ph;
    s.std_error = std::sqrt(ph * (1 - ph) / nn);
    s.ci_lo = std::max(0.0, centre - half);
    s.ci_hi = std::min(1.0, centre + half);
    return s;
}

std::vector<TrialEndpoint> run_endpoints(const ModelParams& params, std::size_t trials, double T,
                                         std::uint64_t master, unsigned threads) {
    std::vector<TrialEndpoint> out(trials);
    const Configuration c0 = make_initial(params.initial);
    if (params.lambda < 0.0) throw InvalidParameter("lambda must be non-negative");
    if (params.lambda == 0.0) {
        // No arrows: the initial ones just wait for their healing marks. The
        // healing streams do not depend on lambda, so any positive rate gives
        // the same marks.
        if (c0.policy.kind == TailKind::OccupiedLeftClamp)
            throw PreconditionViolation("lambda = 0 needs a finite start");
        parallel_for(trials, threads, [&](std::size_t i) {
            const std::uint64_t seed = trial_seed(master, i);
            EventLog log(seed, 1.0, params.p, T);
            std::optional<Site> r;
            for (Site y = c0.lo; y <= c0.hi; ++y)
                if (c0.at(y) == SiteState::Occupied && !log.any_in(ObjectKey::healing(y), 0.0, T)) r = y;
            out[i] = {seed, r.has_value(), r.value_or(0)};
        });
        return out;
    }
    parallel_for(trials, threads, [&](std::size_t i) {
        const std::uint64_t seed = trial_seed(master, i);
        EventLog log(seed, params.lambda, params.p, T);
        EvolveOptions opt;
        opt.retain_deltas = false;
        opt.stop_at_extinction = true;
        const Trajectory tr = evolve(params.kind, c0, log, 0.0, T, opt);
        const auto r = tr.rightmost_at(T);
        out[i] = {seed, r.has_value(), r.value_or(0)};
    });
    return out;
}

StatsSummary survival_summary(const std::vector<TrialEndpoint>& runs) {
    const auto alive = static_cast<std::size_t>(
        std::count_if(runs.begin(), runs.end(), [](const TrialEndpoint& e) { return e.survived; }));
    return wilson_summary(alive, runs.size());
}

StatsSummary estimate_survival(const ModelParams& params, std::size_t trials, double T,
                               std::uint64_t master, unsigned threads) {
    if (trials < 1) throw std::invalid_argument("trials must be >= 1");
    return survival_summary(run_endpoints(params, trials, T, master, threads));
}

StatsSummary speed_direct_summary(const std::vector<TrialEndpoint>& runs, double T) {
    std::vector<double> v;
    for (const auto& e : runs)
        if (e.survived) v.push_back(static_cast<double>(e.r_T) / T);
    if (v.size() < 30) throw TooFewSurvivors("direct speed needs at least 30 surviving trials");
    StatsSummary s;
    s.method = "direct";
    s.n_trials = runs.size();
    s.n_surviving = v.size();
    s.estimate = mean_of(v);
    s.std_error = std::sqrt(var_of(v, s.estimate) / static_cast<double>(v.size()));
    s.ci_lo = s.estimate - kZ95 * s.std_error;
    s.ci_hi = s.estimate + kZ95 * s.std_error;
    return s;
}

StatsSummary estimate_speed_direct(const ModelParams& params, std::size_t trials, double T,
                                   std::uint64_t master, unsigned threads) {
    if (trials < 1) throw std::invalid_argument("trials must be >= 1");
    return speed_direct_summary(run_endpoints(params, trials, T, master, threads), T);
}

RenewalTrial renewal_trial(const ModelParams& params, const std::vector<double>& horizons,
                           std::uint64_t seed, double guard, const PropertyPolicy& policy,
                           std::size_t window_cap) {
    if (horizons.empty()) throw std::invalid_argument("renewal_trial needs a horizon");
    const double T = *std::max_element(horizons.begin(), horizons.end());
    EventLog log(seed, params.lambda, params.p, T);
    EvolveOptions opt;
    opt.stop_at_extinction = true;
    opt.window_cap = window_cap;
    BaseRun base(log, evolve(params.kind, make_initial(params.initial), log, 0.0, T, opt));
    RenewalTrial out;
    out.seed = seed;
    for (double h : horizons) {
        const auto r = base.traj().rightmost_at(h);
        out.survived.push_back(r.has_value());
        out.r.push_back(r.value_or(0));
        out.records.emplace_back();
        if (r) out.records.back().emplace(renewal_sequence(base, guard, policy, h));
    }
    return out;
}

StatsSummary estimate_speed_renewal(const std::vector<IncrementSample>& samples) {
    if (samples.size() < 30) throw InsufficientSamples("renewal speed needs at least 30 increments");
    std::vector<double> ds, dr;
    for (const auto& s : samples) {
        ds.push_back(s.d_sigma);
        dr.push_back(static_cast<double>(s.d_r));
    }
    const double ms = mean_of(ds), mr = mean_of(dr);
    const double n = static_cast<double>(samples.size());
    double vs = 0, vr = 0, cv = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        vs += (ds[i] - ms) * (ds[i] - ms);
        vr += (dr[i] - mr) * (dr[i] - mr);
        cv += (ds[i] - ms) * (dr[i] - mr);
    }
    vs /= n - 1;
    vr /= n - 1;
    cv /= n - 1;
    StatsSummary out;
    out.method = "renewal";
    out.n_trials = samples.size();
    out.n_surviving = samples.size();
    out.estimate = mr / ms;
    const double mu = out.estimate;
    const double var = (vr - 2 * mu * cv + mu * mu * vs) / (ms * ms * n);
    out.std_error = std::sqrt(std::max(0.0, var));
    out.ci_lo = mu - kZ95 * out.std_error;
    out.ci_hi = mu + kZ95 * out.std_error;
    return out;
}

NormalityReport normality(std::vector<double> z) {
    NormalityReport r;
    r.n = z.size();
    if (z.empty()) return r;
    const double n = static_cast<double>(z.size());
    r.mean = mean_of(z);
    double m2 = 0, m3 = 0, m4 = 0;
    for (double x : z) {
        const double d = x - r.mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    r.variance = z.size() > 1 ? m2 * n / (n - 1) : 0.0;
    if (m2 > 0) {
        r.skewness = m3 / std::pow(m2, 1.5);
        r.excess_kurtosis = m4 / (m2 * m2) - 3.0;
    }
    std::sort(z.begin(), z.end());
    double d = 0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double f = std_normal_cdf(z[i]);
        d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
    }
    r.ks_statistic = d;
    return r;
}

std::vector<NormalityReport> clt_statistics(const std::vector<IncrementSample>& samples, double mu_hat,
                                            const std::vector<std::size_t>& blocks) {
    if (samples.size() < 500) throw InsufficientSamples("CLT statistics need at least 500 increments");
    std::vector<double> x;
    for (const auto& s : samples) x.push_back(static_cast<double>(s.d_r) - mu_hat * s.d_sigma);
    const double var = var_of(x, mean_of(x));
    std::vector<NormalityReport> out;
    for (std::size_t m : blocks) {
        std::vector<double> z;
        for (std::size_t i = 0; i + m <= x.size(); i += m) {
            double s = 0;
            for (std::size_t j = i; j < i + m; ++j) s += x[j];
            z.push_back(var > 0 ? s / std::sqrt(static_cast<double>(m) * var) : 0.0);
        }
        NormalityReport r = normality(std::move(z));
        r.block = m;
        out.push_back(r);
    }
    return out;
}

bool IndependenceReport::all_within() const {
    for (const auto* v : {&d_sigma, &d_r, &cross})
        for (const auto& c : *v)
            if (!c.within_band) return false;
    return true;
}

IndependenceReport independence_check(const std::vector<IncrementSample>& samples) {
    if (samples.size() < 200) throw InsufficientSamples("independence check needs at least 200 increments");
    IndependenceReport rep;
    rep.n = samples.size();
    rep.band = 3.0 / std::sqrt(static_cast<double>(rep.n));
    std::vector<double> a, b;
    for (const auto& s : samples) {
        a.push_back(s.d_sigma);
        b.push_back(static_cast<double>(s.d_r));
    }
    const double ma = mean_of(a), mb = mean_of(b);
    const double sa = std::sqrt(var_of(a, ma)), sb = std::sqrt(var_of(b, mb));
    auto corr = [&](const std::vector<double>& u, double mu, double su, const std::vector<double>& v,
                    double mv, double sv, int lag) {
        double acc = 0;
        std::size_t pairs = 0;
        for (std::size_t i = 0; i + static_cast<std::size_t>(lag) < samples.size(); ++i) {
            const std::size_t j = i + static_cast<std::size_t>(lag);
            if (samples[i].run_id != samples[j].run_id) continue;
            acc += (u[i] - mu) * (v[j] - mv);
            ++pairs;
        }
        if (pairs == 0 || su == 0 || sv == 0) return 0.0;
        return acc / static_cast<double>(pairs) / (su * sv);
    };
    for (int lag = 1; lag <= 3; ++lag) {
        auto entry = [&](double v) { return LagCorrelation{lag, v, std::abs(v) <= rep.band}; };
        rep.d_sigma.push_back(entry(corr(a, ma, sa, a, ma, sa, lag)));
        rep.d_r.push_back(entry(corr(b, mb, sb, b, mb, sb, lag)));
        rep.cross.push_back(entry(corr(a, ma, sa, b, mb, sb, lag)));
    }
    return rep;
}

void AuditReport::violation(const std::string& what) {
    if (n_violations++ == 0) first_violation = what;
}

Configuration random_member(Site x, int radius, std::mt19937_64& rng) {
    std::vector<SiteState> states;
    for (int i = -radius; i <= radius; ++i) {
        if (i < 0) states.push_back(random_state(rng, -1, 1));
        else if (i == 0) states.push_back(SiteState::Occupied);
        else states.push_back(random_state(rng, -1, 0));
    }
    return window_config(x - radius, states);
}

AuditReport discrepancy_audit(ProcessKind kind, Site x, const std::optional<Configuration>& c,
                              std::size_t trials, double T, double lambda, double p,
                              std::uint64_t master, unsigned threads) {
    if (kind == ProcessKind::CP) throw std::invalid_argument("discrepancy audit is for Spont or IS");
    if (c && rightmost(*c) != x) throw PreconditionViolation("c must have its rightmost one at x");
    std::vector<SplitSiteReport> reports(trials);
    parallel_for(trials, threads, [&](std::size_t i) {
        const std::uint64_t seed = trial_seed(master, i);
        EventLog log(seed, lambda, p, T);
        std::mt19937_64 rng(seed);
        const Configuration hostile = make_initial(Hostile{x});
        EvolveOptions wopt;
        wopt.retain_deltas = false;
        wopt.stop_at_extinction = true;
        const Trajectory witness = evolve(ProcessKind::Spont, hostile, log, 0.0, T, wopt);
        if (kind == ProcessKind::Spont) {
            const Configuration ci = c ? *c : random_member(x, 10, rng);
            const Trajectory a = evolve(ProcessKind::Spont, hostile, log, 0.0, T);
            const Trajectory b = evolve(ProcessKind::Spont, ci, log, 0.0, T);
            reports[i] = check_split_site(kind, a, b, log, witness.extinction);
        } else {
            const Configuration c1 = c ? *c : random_member(x, 10, rng);
            const Configuration c2 = c ? hostile : random_member(x, 10, rng);
            const Trajectory a = evolve(ProcessKind::IS, c1, log, 0.0, T);
            const Trajectory b = evolve(ProcessKind::IS, c2, log, 0.0, T);
            reports[i] = check_split_site(kind, a, b, log, witness.extinction);
        }
    });
    AuditReport rep;
    rep.n_trials = trials;
    for (std::size_t i = 0; i < trials; ++i) {
        const auto& r = reports[i];
        if (!r.discrepancy) continue;
        if (!r.premise) {
            ++rep.n_skipped;
            continue;
        }
        ++rep.n_events_checked;
        if (!r.ok()) rep.violation("trial " + std::to_string(i) + ": " + r.describe());
    }
    return rep;
}

std::string counterexample_json(const Counterexample& ce) {
    nlohmann::json j{{"seed", ce.seed}, {"lambda", ce.lambda}, {"p", ce.p},     {"T", ce.T},
                     {"c1", config_json(ce.c1)}, {"c2", config_json(ce.c2)}, {"x", ce.x}, {"t", ce.t}};
    return j.dump(2);
}

Counterexample counterexample_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    Counterexample ce;
    ce.seed = j.at("seed").get<std::uint64_t>();
    ce.lambda = j.at("lambda").get<double>();
    ce.p = j.at("p").get<double>();
    ce.T = j.at("T").get<double>();
    ce.c1 = config_from_json(j.at("c1"));
    ce.c2 = config_from_json(j.at("c2"));
    ce.x = j.at("x").get<Site>();
    ce.t = j.at("t").get<double>();
    return ce;
}

bool confirm_counterexample(const Counterexample& ce) {
    if (!dominated(ce.c1, ce.c2)) return false;
    EventLog log(ce.seed, ce.lambda, ce.p, ce.T);
    const Trajectory a = evolve(ProcessKind::IS, ce.c1, log, 0.0, ce.T);
    const Trajectory b = evolve(ProcessKind::IS, ce.c2, log, 0.0, ce.T);
    TrajectoryIndex ia(a, &log), ib(b, &log);
    return value(ia.state_at(ce.x, ce.t)) > value(ib.state_at(ce.x, ce.t));
}

AttractivityReport attractivity_suite(std::size_t trials, const AttractivityOptions& opt, unsigned threads) {
    AttractivityReport rep;
    const Site lo = -(opt.window / 2);
    struct Probe {
        std::optional<std::pair<double, Site>> spont;
        std::optional<std::pair<double, Site>> cp;
    };
    std::vector<Probe> probes(trials);
    parallel_for(trials, threads, [&](std::size_t i) {
        const std::uint64_t seed = trial_seed(opt.seed, i);
        std::mt19937_64 rng(seed ^ 0xa77);
        EventLog log(seed, opt.lambda, opt.p, opt.T);
        // Spont: c1 <= c2 pointwise.
        std::vector<SiteState> s1, s2;
        for (int k = 0; k < opt.window; ++k) {
            const SiteState a = random_state(rng, -1, 1);
            s1.push_back(a);
            s2.push_back(random_state(rng, value(a), 1));
        }
        const Trajectory x1 = evolve(ProcessKind::Spont, window_config(lo, s1), log, 0.0, opt.T);
        const Trajectory x2 = evolve(ProcessKind::Spont, window_config(lo, s2), log, 0.0, opt.T);
        probes[i].spont = first_order_violation(x1, x2, log);
        // CP: zeta^{c1 v c2} = zeta^{c1} v zeta^{c2}.
        std::vector<SiteState> a(opt.window), b(opt.window), ab(opt.window);
        for (int k = 0; k < opt.window; ++k) {
            a[k] = random_state(rng, 0, 1);
            b[k] = random_state(rng, 0, 1);
            ab[k] = std::max(a[k], b[k]);
        }
        const Trajectory za = evolve(ProcessKind::CP, window_config(lo, a), log, 0.0, opt.T);
        const Trajectory zb = evolve(ProcessKind::CP, window_config(lo, b), log, 0.0, opt.T);
        const Trajectory zab = evolve(ProcessKind::CP, window_config(lo, ab), log, 0.0, opt.T);
        TrajectoryIndex ia(za, &log), ib(zb, &log), iab(zab, &log);
        auto check = [&](double t, Site x) -> bool {
            return value(iab.state_at(x, t)) == std::max(value(ia.state_at(x, t)), value(ib.state_at(x, t)));
        };
        for (Site x = lo; x < lo + opt.window && !probes[i].cp; ++x)
            if (!check(0.0, x)) probes[i].cp = std::pair{0.0, x};
        for (const auto& [t, x] : change_points({&za, &zb, &zab})) {
            if (probes[i].cp) break;
            if (!check(t, x)) probes[i].cp = std::pair{t, x};
        }
    });
    rep.spont_monotone.n_trials = rep.cp_additive.n_trials = trials;
    for (std::size_t i = 0; i < trials; ++i) {
        ++rep.spont_monotone.n_events_checked;
        ++rep.cp_additive.n_events_checked;
        auto describe = [&](const std::pair<double, Site>& v) {
            std::ostringstream o;
            o << "trial " << i << " site " << v.second << " t=" << v.first;
            return o.str();
        };
        if (probes[i].spont) rep.spont_monotone.violation(describe(*probes[i].spont));
        if (probes[i].cp) rep.cp_additive.violation(describe(*probes[i].cp));
    }

    // IS: search sequentially so the first counterexample does not depend on
    // the thread count.
    for (std::size_t i = 0; i < opt.is_budget; ++i) {
        const std::uint64_t seed = trial_seed(opt.seed ^ 0x15, i);
        std::mt19937_64 rng(seed);
        std::vector<SiteState> s1, s2;
        for (int k = 0; k < opt.window; ++k) {
            const SiteState a = random_state(rng, -1, 1);
            s1.push_back(a);
            s2.push_back(random_state(rng, value(a), 1));
        }
        EventLog log(seed, opt.is_lambda, opt.is_p, opt.T);
        const Configuration c1 = window_config(lo, s1), c2 = window_config(lo, s2);
        const Trajectory a = evolve(ProcessKind::IS, c1, log, 0.0, opt.T);
        const Trajectory b = evolve(ProcessKind::IS, c2, log, 0.0, opt.T);
        rep.is_probes = i + 1;
        if (auto v = first_order_violation(a, b, log)) {
            rep.is_counterexample = {seed, opt.is_lambda, opt.is_p, opt.T, c1, c2, v->second, v->first};
            return rep;
        }
    }
    throw CounterexampleNotFound("no IS order violation within the search budget");
}

AuditReport truncation_monotonicity(std::size_t seeds, const TruncationOptions& opt, unsigned threads) {
    if (opt.mono_n > opt.mono_m) throw std::invalid_argument("monotonicity needs n <= m");
    std::vector<std::optional<std::pair<double, Site>>> found(seeds);
    parallel_for(seeds, threads, [&](std::size_t i) {
        EventLog log(trial_seed(opt.seed, i), opt.lambda, opt.p, opt.T);
        const Configuration init = make_initial(Hostile{0});
        const Trajectory a = truncated_evolve_spont(opt.mono_n, init, log, opt.T, opt.blocking_by_target);
        const Trajectory b = truncated_evolve_spont(opt.mono_m, init, log, opt.T, opt.blocking_by_target);
        TrajectoryIndex ia(a), ib(b);
        auto bad = [&](double t, Site x) { return value(ia.state_at(x, t)) > value(ib.state_at(x, t)); };
        for (Site x = -opt.mono_n; x <= opt.mono_n && !found[i]; ++x)
            if (bad(0.0, x)) found[i] = std::pair{0.0, x};
        for (const auto& [t, y] : change_points({&a, &b})) {
            if (found[i]) break;
            // a change at y can only break the order at y
            if (y >= -opt.mono_n && y <= opt.mono_n && bad(t, y)) found[i] = std::pair{t, y};
        }
    });
    AuditReport rep;
    rep.n_trials = seeds;
    for (std::size_t i = 0; i < seeds; ++i) {
        ++rep.n_events_checked;
        if (found[i]) {
            std::ostringstream o;
            o << "seed index " << i << ": site " << found[i]->second << " t=" << found[i]->first
              << " (n=" << opt.mono_n << " above m=" << opt.mono_m << ")";
            rep.violation(o.str());
        }
    }
    return rep;
}

AuditReport truncation_agreement(ProcessKind kind, std::size_t seeds, const TruncationOptions& opt,
                                 unsigned threads) {
    if (kind == ProcessKind::CP) throw std::invalid_argument("truncation agreement is for Spont or IS");
    if (opt.radii.empty()) throw std::invalid_argument("truncation agreement needs radii");
    std::vector<std::string> found(seeds);
    parallel_for(seeds, threads, [&](std::size_t i) {
        EventLog log(trial_seed(opt.seed, i), opt.lambda, opt.p, opt.T);
        const Configuration init =
            kind == ProcessKind::Spont ? make_initial(Hostile{0}) : make_initial(SingleOne{0});
        std::vector<Trajectory> runs;
        runs.push_back(evolve(kind, init, log, 0.0, opt.T));
        for (Site n : opt.radii)
            runs.push_back(kind == ProcessKind::Spont ? truncated_evolve_spont(n, init, log, opt.T)
                                                      : truncated_evolve_is(n, init, log, opt.T));
        std::vector<TrajectoryIndex> idx;
        idx.reserve(runs.size());
        idx.emplace_back(runs[0], &log);
        for (std::size_t k = 1; k < runs.size(); ++k) idx.emplace_back(runs[k]);
        std::vector<double> times{0.0};
        for (const auto& r : runs)
            for (const Delta& d : r.deltas)
                if (d.site >= -opt.probe && d.site <= opt.probe) times.push_back(d.time);
        std::sort(times.begin(), times.end());
        times.erase(std::unique(times.begin(), times.end()), times.end());
        for (double t : times)
            for (Site x = -opt.probe; x <= opt.probe; ++x)
                for (std::size_t k = 1; k < runs.size(); ++k)
                    if (idx[k].state_at(x, t) != idx[0].state_at(x, t)) {
                        std::ostringstream o;
                        o << "seed index " << i << ": n=" << opt.radii[k - 1] << " site " << x << " t=" << t
                          << " state " << value(idx[k].state_at(x, t)) << " vs untruncated "
                          << value(idx[0].state_at(x, t));
                        found[i] = o.str();
                        return;
                    }
    });
    AuditReport rep;
    rep.n_trials = seeds;
    for (std::size_t i = 0; i < seeds; ++i) {
        ++rep.n_events_checked;
        if (!found[i].empty()) rep.violation(found[i]);
    }
    return rep;
}

TailReport last_renewal_tail(const std::vector<RenewalRecord>& records, double t) {
    if (records.empty()) throw std::invalid_argument("last_renewal_tail needs records");
    TailReport rep;
    for (const auto& r : records) {
        std::optional<std::size_t> last;
        for (std::size_t k = 0; k < r.sigmas.size(); ++k)
            if (!r.censored[k] && r.sigmas[k] < t) last = k;
        if (!last) {
            ++rep.excluded;
            continue;
        }
        ++rep.included;
        rep.ages.push_back(t - r.sigmas[*last]);
        rep.excursions.push_back(r.excursions.empty() ? 0 : r.excursions[*last]);
    }
    if (rep.ages.empty()) return rep;
    const double top = *std::max_element(rep.ages.begin(), rep.ages.end());
    std::vector<double> xs, ys;
    for (double L = 0.0; L <= top; L += 1.0) {
        const auto above = std::count_if(rep.ages.begin(), rep.ages.end(), [&](double a) { return a > L; });
        const double pr = static_cast<double>(above) / static_cast<double>(rep.ages.size());
        if (!rep.age_tail.empty() && pr > rep.age_tail.back().second) rep.tail_decreasing = false;
        rep.age_tail.push_back({L, pr});
        // Only well-populated points enter the fit and the shape check.
        if (above >= 20) {
            xs.push_back(L);
            ys.push_back(std::log(pr));
        }
    }
    if (xs.size() >= 2) {
        const double mx = mean_of(xs), my = mean_of(ys);
        double sxy = 0, sxx = 0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            sxy += (xs[i] - mx) * (ys[i] - my);
            sxx += (xs[i] - mx) * (xs[i] - mx);
        }
        rep.log_tail_slope = sxy / sxx;
    }
    // Concave-or-linear up to sampling noise: no second difference clearly positive.
    for (std::size_t i = 1; i + 1 < ys.size(); ++i)
        if (ys[i + 1] - 2 * ys[i] + ys[i - 1] > 0.25) rep.concave_or_linear = false;
    return rep;
}

CertificateCalibration calibrate_certificate(double lambda, double p, std::size_t pilot_runs, double T,
                                             std::uint64_t master, double target, unsigned threads) {
    CertificateCalibration cal;
    // Contact-process front from a half-line: slope of the mean front.
    const int grid = 10;
    std::vector<std::vector<double>> fronts(pilot_runs, std::vector<double>(grid + 1, 0.0));
    parallel_for(pilot_runs, threads, [&](std::size_t i) {
        EventLog log(trial_seed(master, i), lambda, p, T);
        EvolveOptions opt;
        opt.retain_deltas = false;
        const Trajectory tr =
            evolve(ProcessKind::CP, make_initial(Heaviside{0, heaviside_clamp(0, lambda, T)}), log, 0.0, T, opt);
        for (int g = 0; g <= grid; ++g)
            fronts[i][g] = static_cast<double>(tr.rightmost_at(T * g / grid).value_or(0));
    });
    std::vector<double> slopes;
    for (const auto& f : fronts) slopes.push_back((f[grid] - f[grid / 2]) / (T / 2));
    cal.alpha_hat = mean_of(slopes);
    cal.alpha_se = std::sqrt(var_of(slopes, cal.alpha_hat) / static_cast<double>(slopes.size()));

    // Pilot Spont runs and one random time each.
    struct Pilot {
        std::unique_ptr<EventLog> log;
        std::unique_ptr<BaseRun> base;
        double t = 0.0;
    };
    std::vector<Pilot> pilots(pilot_runs);
    parallel_for(pilot_runs, threads, [&](std::size_t i) {
        const std::uint64_t seed = trial_seed(master ^ 0xce27, i);
        pilots[i].log = std::make_unique<EventLog>(seed, lambda, p, T);
        Trajectory tr = evolve(ProcessKind::Spont, make_initial(SingleOne{0}), *pilots[i].log, 0.0, T);
        std::mt19937_64 rng(seed);
        pilots[i].t = 1.0 + std::uniform_real_distribution<double>(0.0, T / 4)(rng);
        pilots[i].base = std::make_unique<BaseRun>(*pilots[i].log, std::move(tr));
    });
    std::vector<std::size_t> usable;
    for (std::size_t i = 0; i < pilot_runs; ++i)
        if (pilots[i].base->traj().rightmost_at(pilots[i].t)) usable.push_back(i);
    cal.samples = usable.size();
    if (usable.empty()) return cal;
    std::vector<double> excess(usable.size());
    parallel_for(usable.size(), threads, [&](std::size_t j) {
        const Pilot& pl = pilots[usable[j]];
        excess[j] = envelope_excess(*pl.base, pl.t, cal.alpha_hat);
    });
    for (int L1 = 1; L1 <= 400; L1 = L1 < 16 ? L1 + 1 : L1 + L1 / 8) {
        CertificateConstants k{static_cast<double>(L1), static_cast<double>(L1 + 1), cal.alpha_hat};
        std::size_t pass = 0;
        for (std::size_t j = 0; j < usable.size(); ++j) {
            const Pilot& pl = pilots[usable[j]];
            if (excess[j] < k.L1 && frontier_event(*pl.base, pl.t, k)) ++pass;
        }
        cal.constants = k;
        cal.pass_rate = static_cast<double>(pass) / static_cast<double>(usable.size());
        if (cal.pass_rate >= target) {
            cal.reached_target = true;
            break;
        }
    }
    return cal;
}

}  // namespace ips
