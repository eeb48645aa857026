#include "ips/cli_runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "ips/estimators.hpp"
#include "ips/paths.hpp"
#include "json.hpp"

namespace ips {

using nlohmann::json;

const char* to_string(RunKind k) {
    switch (k) {
    case RunKind::Spont: return "spont";
    case RunKind::IS: return "is";
    case RunKind::CP: return "cp";
    case RunKind::Coupled: return "coupled";
    }
    return "?";
}

RunKind parse_run_kind(const std::string& s) {
    if (s == "spont") return RunKind::Spont;
    if (s == "is") return RunKind::IS;
    if (s == "cp") return RunKind::CP;
    if (s == "coupled") return RunKind::Coupled;
    throw ConfigError("unknown kind: " + s);
}

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) out.push_back(cur);
    if (!s.empty() && s.back() == sep) out.push_back("");
    return out;
}

Site parse_site(const std::string& s) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(s, &used);
        if (used != s.size()) throw ConfigError("bad site: " + s);
        return v;
    } catch (const std::logic_error&) {
        throw ConfigError("bad site: " + s);
    }
}

std::optional<ProcessKind> process_of(RunKind k) {
    switch (k) {
    case RunKind::Spont: return ProcessKind::Spont;
    case RunKind::IS: return ProcessKind::IS;
    case RunKind::CP: return ProcessKind::CP;
    case RunKind::Coupled: return std::nullopt;
    }
    return std::nullopt;
}

/// CP states live in {0, 1}: blocked sites and tails become empty.
Configuration cp_projection(Configuration c) {
    for (auto& s : c.states)
        if (s == SiteState::Blocked) s = SiteState::Empty;
    if (c.policy.kind == TailKind::BlockedTail) c.policy.kind = TailKind::EmptyTail;
    return c;
}

Configuration start_for(ProcessKind k, const Configuration& c0) {
    return k == ProcessKind::CP ? cp_projection(c0) : c0;
}

std::string num(double v) {
    if (!std::isfinite(v)) return "";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
    }
    return out + "\"";
}

std::string csv_head(const std::string& schema, const std::string& header) {
    return "#schema=" + schema + ":1\n" + header + "\n";
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
}

json policy_json(const PropertyPolicy& p) {
    return {{"mode", to_string(p.mode)},
            {"family_size", p.family_size},
            {"family_window_radius", p.family_window_radius},
            {"L1", p.certificate.L1},
            {"L2", p.certificate.L2},
            {"alpha_hat", p.certificate.alpha_hat},
            {"reference", p.reference},
            {"family_seed", p.family_seed}};
}

json config_json(const RunConfig& c) {
    std::vector<std::string> kinds;
    for (RunKind k : c.grid.kinds) kinds.push_back(to_string(k));
    const AuditConfig& a = c.audit;
    return {{"kind", to_string(c.kind)},
            {"lambda", c.lambda},
            {"p", c.p},
            {"initial", c.initial},
            {"horizon", c.horizon},
            {"trials", c.trials},
            {"seed", c.seed},
            {"guard", c.guard},
            {"policy", policy_json(c.policy)},
            {"window_cap", c.window_cap},
            {"output_dir", c.output_dir},
            {"threads", c.threads},
            {"svg_runs", c.svg_runs},
            {"grid", {{"lambda", c.grid.lambdas}, {"p", c.grid.ps}, {"kinds", kinds}}},
            {"audit",
             {{"equivalence_fractions", a.equivalence_fractions},
              {"attractivity_trials", a.attractivity_trials},
              {"attractivity_T", a.attractivity_T},
              {"attractivity_window", a.attractivity_window},
              {"is_lambda", a.is_lambda},
              {"is_p", a.is_p},
              {"is_budget", a.is_budget},
              {"truncation_seeds", a.truncation_seeds},
              {"truncation_T", a.truncation_T},
              {"truncation_radii", a.truncation_radii},
              {"truncation_probe", a.truncation_probe},
              {"mono_n", a.mono_n},
              {"mono_m", a.mono_m},
              {"truncation_rule", a.truncation_rule}}},
            {"fault_injection", c.fault_injection}};
}

/// Reads `key` into `out` when present; rejects keys outside `allowed`.
class Reader {
public:
    Reader(const json& j, std::string where, std::set<std::string> allowed) : j_(j), where_(std::move(where)) {
        if (!j.is_object()) throw ConfigError(where_ + " must be a JSON object");
        for (const auto& [k, v] : j.items())
            if (!allowed.count(k)) throw ConfigError("unknown key " + where_ + "." + k);
    }
    template <class T>
    void get(const char* key, T& out) const {
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(where_ + "." + key + ": " + e.what());
        }
    }
    bool has(const char* key) const { return j_.contains(key); }
    const json& at(const char* key) const { return j_.at(key); }

private:
    const json& j_;
    std::string where_;
};

json stats_json(const StatsSummary& s) {
    return {{"method", s.method},       {"n_trials", s.n_trials}, {"n_surviving", s.n_surviving},
            {"estimate", s.estimate},   {"std_error", s.std_error}, {"ci", {s.ci_lo, s.ci_hi}}};
}

json normality_json(const NormalityReport& r) {
    return {{"block", r.block},       {"n", r.n},
            {"mean", r.mean},         {"variance", r.variance},
            {"skewness", r.skewness}, {"excess_kurtosis", r.excess_kurtosis},
            {"ks_statistic", r.ks_statistic}};
}

json lags_json(const std::vector<LagCorrelation>& v) {
    json out = json::array();
    for (const auto& l : v) out.push_back({{"lag", l.lag}, {"value", l.value}, {"within_band", l.within_band}});
    return out;
}

json audit_json(const AuditReport& r) {
    return {{"trials", r.n_trials},
            {"events_checked", r.n_events_checked},
            {"skipped", r.n_skipped},
            {"violations", r.n_violations},
            {"first_violation", r.first_violation}};
}

json seed_manifest(std::uint64_t master, std::size_t trials) {
    json out = json::array();
    for (std::size_t i = 0; i < trials; ++i) out.push_back({{"run_id", i}, {"seed", trial_seed(master, i)}});
    return out;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

/// Runs `body` and maps exceptions onto the exit-code contract.
template <class F>
int guarded(const char* cmd, F&& body) {
    try {
        return body();
    } catch (const WindowOverflow& e) {
        std::cerr << cmd << ": resource cap: " << e.what() << "\n";
        return exit_code::resource;
    } catch (const ConfigError& e) {
        std::cerr << cmd << ": config error: " << e.what() << "\n";
        return exit_code::config;
    } catch (const InvalidParameter& e) {
        std::cerr << cmd << ": config error: " << e.what() << "\n";
        return exit_code::config;
    } catch (const InvalidMode& e) {
        std::cerr << cmd << ": config error: " << e.what() << "\n";
        return exit_code::config;
    } catch (const InconsistentSpec& e) {
        std::cerr << cmd << ": config error: " << e.what() << "\n";
        return exit_code::config;
    } catch (const PreconditionViolation& e) {
        std::cerr << cmd << ": config error: " << e.what() << "\n";
        return exit_code::config;
    } catch (const std::exception& e) {
        std::cerr << cmd << ": error: " << e.what() << "\n";
        return exit_code::violation;
    }
}

std::filesystem::path out_path(const RunConfig& c, const std::string& name) {
    return std::filesystem::path(c.output_dir) / name;
}

Configuration initial_of(const RunConfig& c) {
    return make_initial(parse_initial_spec(c.initial, c.lambda, c.horizon));
}

EvolveOptions evolve_options(const RunConfig& c) {
    EvolveOptions o;
    o.window_cap = c.window_cap;
    return o;
}

/// One trial of `simulate`: one layer, or three for the coupled kind.
struct SimTrial {
    std::uint64_t seed = 0;
    std::vector<Trajectory> layers;
    std::size_t order_violations = 0;
    std::string first_violation;
};

SimTrial simulate_trial(const RunConfig& c, const Configuration& c0, std::size_t i) {
    SimTrial out;
    out.seed = trial_seed(c.seed, i);
    EventLog log(out.seed, c.lambda, c.p, c.horizon);
    if (auto k = process_of(c.kind)) {
        out.layers.push_back(evolve(*k, start_for(*k, c0), log, 0.0, c.horizon, evolve_options(c)));
    } else {
        CoupledRun run = evolve_coupled(c0, c0, cp_projection(c0), log, c.horizon, evolve_options(c));
        out.order_violations = run.order_violations;
        out.first_violation = run.first_violation;
        out.layers.push_back(std::move(run.spont));
        out.layers.push_back(std::move(run.is));
        out.layers.push_back(std::move(run.cp));
    }
    return out;
}

std::vector<ProcessKind> layer_kinds(RunKind k) {
    if (auto p = process_of(k)) return {*p};
    return {ProcessKind::Spont, ProcessKind::IS, ProcessKind::CP};
}

/// Direct speed summary, or an error note when there are too few survivors.
json speed_or_note(const std::vector<TrialEndpoint>& ends, double T) {
    try {
        if (!(T > 0.0)) throw TooFewSurvivors("horizon is zero");
        return stats_json(speed_direct_summary(ends, T));
    } catch (const TooFewSurvivors& e) {
        return {{"error", "too-few-survivors"}, {"detail", e.what()}};
    }
}

/// r_SP <= r_IS <= r_CP at the horizon for runs where all three survive.
struct FrontOrder {
    std::size_t runs = 0;
    std::size_t violations = 0;
    std::string first;
};

void check_front_order(FrontOrder& acc, const std::vector<const Trajectory*>& layers, double T,
                       std::size_t run_id) {
    const auto a = layers[0]->rightmost_at(T), b = layers[1]->rightmost_at(T), c = layers[2]->rightmost_at(T);
    if (!a || !b || !c) return;
    ++acc.runs;
    if (*a <= *b && *b <= *c) return;
    if (acc.violations++ == 0) {
        std::ostringstream o;
        o << "run " << run_id << ": r_spont=" << *a << " r_is=" << *b << " r_cp=" << *c;
        acc.first = o.str();
    }
}

const char* svg_colour(const std::vector<SiteState>& s) {
    if (s.size() == 1) {
        if (s[0] == SiteState::Occupied) return "#ffffff";
        if (s[0] == SiteState::Blocked) return "#7a1f1f";
        return nullptr;
    }
    const bool sp = s[0] == SiteState::Occupied, is = s[1] == SiteState::Occupied,
               cp = s[2] == SiteState::Occupied;
    if (sp && is && cp) return "#ffffff";
    if (is && cp) return "#c0c0c0";
    if (cp) return "#606060";
    return nullptr;
}

}  // namespace

InitialSpec parse_initial_spec(const std::string& s, double lambda, double horizon) {
    const auto parts = split(s, ':');
    if (parts.size() < 2) throw ConfigError("bad initial spec: " + s);
    const std::string& tag = parts[0];
    if (tag != "explicit") {
        if (parts.size() != 2) throw ConfigError("bad initial spec: " + s);
        const Site x = parse_site(parts[1]);
        if (tag == "single") return SingleOne{x};
        if (tag == "hostile") return Hostile{x};
        if (tag == "heaviside") return Heaviside{x, heaviside_clamp(x, lambda, horizon)};
        if (tag == "max") return MaxConfig{x, heaviside_clamp(x, lambda, horizon)};
        throw ConfigError("unknown initial spec: " + tag);
    }
    if (parts.size() < 3 || parts.size() > 4) throw ConfigError("bad explicit spec: " + s);
    Explicit e;
    e.lo = parse_site(parts[1]);
    for (const auto& v : split(parts[2], ',')) {
        const Site st = parse_site(v);
        if (st < -1 || st > 1) throw ConfigError("site states must be -1, 0 or 1");
        e.states.push_back(static_cast<SiteState>(st));
    }
    if (parts.size() == 4) {
        if (parts[3] == "blocked")
            e.tail = TailKind::BlockedTail;
        else if (parts[3] != "empty")
            throw ConfigError("explicit tail must be empty or blocked");
    }
    return e;
}

bool operator==(const RunConfig& a, const RunConfig& b) {
    return emit_config(a) == emit_config(b);
}

RunConfig parse_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    RunConfig c;
    Reader r(j, "config",
             {"kind", "lambda", "p", "initial", "horizon", "trials", "seed", "guard", "policy", "window_cap",
              "output_dir", "threads", "svg_runs", "grid", "audit", "fault_injection"});
    std::string kind = to_string(c.kind);
    r.get("kind", kind);
    c.kind = parse_run_kind(kind);
    r.get("lambda", c.lambda);
    r.get("p", c.p);
    r.get("initial", c.initial);
    r.get("horizon", c.horizon);
    r.get("trials", c.trials);
    r.get("seed", c.seed);
    r.get("guard", c.guard);
    r.get("window_cap", c.window_cap);
    r.get("output_dir", c.output_dir);
    r.get("threads", c.threads);
    r.get("svg_runs", c.svg_runs);
    r.get("fault_injection", c.fault_injection);

    c.policy.mode = c.kind == RunKind::IS ? PropertyMode::ISSampledFamily : PropertyMode::SpontExtremal;
    if (r.has("policy")) {
        Reader pr(r.at("policy"), "policy",
                  {"mode", "family_size", "family_window_radius", "L1", "L2", "alpha_hat", "reference",
                   "family_seed"});
        std::string mode = to_string(c.policy.mode);
        pr.get("mode", mode);
        try {
            c.policy.mode = parse_property_mode(mode);
        } catch (const InvalidMode& e) {
            throw ConfigError(e.what());
        }
        pr.get("family_size", c.policy.family_size);
        pr.get("family_window_radius", c.policy.family_window_radius);
        pr.get("L1", c.policy.certificate.L1);
        pr.get("L2", c.policy.certificate.L2);
        pr.get("alpha_hat", c.policy.certificate.alpha_hat);
        pr.get("reference", c.policy.reference);
        pr.get("family_seed", c.policy.family_seed);
    }
    if (r.has("grid")) {
        Reader gr(r.at("grid"), "grid", {"lambda", "p", "kinds"});
        gr.get("lambda", c.grid.lambdas);
        gr.get("p", c.grid.ps);
        if (gr.has("kinds")) {
            std::vector<std::string> kinds;
            gr.get("kinds", kinds);
            c.grid.kinds.clear();
            for (const auto& k : kinds) c.grid.kinds.push_back(parse_run_kind(k));
        }
    }
    if (r.has("audit")) {
        AuditConfig& a = c.audit;
        Reader ar(r.at("audit"), "audit",
                  {"equivalence_fractions", "attractivity_trials", "attractivity_T", "attractivity_window",
                   "is_lambda", "is_p", "is_budget", "truncation_seeds", "truncation_T", "truncation_radii",
                   "truncation_probe", "mono_n", "mono_m", "truncation_rule"});
        ar.get("equivalence_fractions", a.equivalence_fractions);
        ar.get("attractivity_trials", a.attractivity_trials);
        ar.get("attractivity_T", a.attractivity_T);
        ar.get("attractivity_window", a.attractivity_window);
        ar.get("is_lambda", a.is_lambda);
        ar.get("is_p", a.is_p);
        ar.get("is_budget", a.is_budget);
        ar.get("truncation_seeds", a.truncation_seeds);
        ar.get("truncation_T", a.truncation_T);
        ar.get("truncation_radii", a.truncation_radii);
        ar.get("truncation_probe", a.truncation_probe);
        ar.get("mono_n", a.mono_n);
        ar.get("mono_m", a.mono_m);
        ar.get("truncation_rule", a.truncation_rule);
    }
    validate_config(c);
    return c;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string emit_config(const RunConfig& c) { return dump(config_json(c)); }

void validate_config(const RunConfig& c) {
    auto rates = [](double lambda, double p, const std::string& where) {
        if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ConfigError(where + "lambda must be positive");
        if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(where + "p must lie in [0,1]");
    };
    rates(c.lambda, c.p, "");
    if (!(c.horizon >= 0.0) || !std::isfinite(c.horizon)) throw ConfigError("horizon must be finite and >= 0");
    if (c.trials < 1) throw ConfigError("trials must be >= 1");
    if (!(c.guard >= 0.0)) throw ConfigError("guard must be >= 0");
    if (c.window_cap < 1) throw ConfigError("window_cap must be >= 1");
    if (c.output_dir.empty()) throw ConfigError("output_dir must not be empty");
    parse_initial_spec(c.initial, c.lambda, c.horizon);
    if (c.policy.family_size < 2) throw ConfigError("policy.family_size must be >= 2");
    if (c.policy.family_window_radius < 0) throw ConfigError("policy.family_window_radius must be >= 0");
    if (c.grid.lambdas.empty() || c.grid.ps.empty() || c.grid.kinds.empty())
        throw ConfigError("grid must be nonempty");
    for (double l : c.grid.lambdas)
        for (double p : c.grid.ps) rates(l, p, "grid: ");
    const AuditConfig& a = c.audit;
    rates(a.is_lambda, a.is_p, "audit: ");
    if (a.truncation_rule != "target" && a.truncation_rule != "both_ends")
        throw ConfigError("audit.truncation_rule must be target or both_ends");
    if (a.mono_n < 0 || a.mono_n > a.mono_m) throw ConfigError("audit needs 0 <= mono_n <= mono_m");
    if (a.truncation_radii.empty()) throw ConfigError("audit.truncation_radii must be nonempty");
    for (double f : a.equivalence_fractions)
        if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("audit.equivalence_fractions must lie in [0,1]");
    if (a.attractivity_window < 1) throw ConfigError("audit.attractivity_window must be >= 1");
    if (!c.fault_injection.empty() && c.fault_injection != "corrupt_replay")
        throw ConfigError("unknown fault_injection: " + c.fault_injection);
}

std::string spacetime_svg(const std::vector<const Trajectory*>& layers, double horizon) {
    if (layers.empty()) throw std::invalid_argument("spacetime_svg needs a layer");
    Site lo = layers[0]->initial.lo, hi = layers[0]->initial.hi;
    for (const Trajectory* t : layers) {
        lo = std::min({lo, t->initial.lo, t->lo_reached});
        hi = std::max({hi, t->initial.hi, t->hi_reached});
    }
    constexpr Site kMaxSites = 2000;
    if (hi - lo + 1 > kMaxSites) {
        const Site mid = lo + (hi - lo) / 2;
        lo = mid - kMaxSites / 2;
        hi = lo + kMaxSites - 1;
    }
    const double n = static_cast<double>(hi - lo + 1);
    const double cell = std::clamp(1200.0 / n, 1.0, 12.0);
    const double width = cell * n;
    const double height = horizon > 0.0 ? 600.0 : cell;
    const double scale = horizon > 0.0 ? height / horizon : 0.0;
    auto f = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.3f", v);
        return std::string(buf);
    };

    std::vector<TrajectoryIndex> idx;
    idx.reserve(layers.size());
    for (const Trajectory* t : layers) idx.emplace_back(*t);

    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f(width) << "\" height=\"" << f(height + 40)
      << "\" viewBox=\"0 0 " << f(width) << " " << f(height + 40) << "\">\n";
    o << "<title>space-time diagram, sites " << lo << ".." << hi << ", time 0.." << num(horizon)
      << " upward</title>\n";
    o << "<rect x=\"0\" y=\"0\" width=\"" << f(width) << "\" height=\"" << f(height) << "\" fill=\"#000000\"/>\n";
    for (Site x = lo; x <= hi; ++x) {
        std::vector<double> times{0.0};
        for (const auto& ix : idx)
            for (const auto& [t, s] : ix.history(x))
                if (t > 0.0 && t < horizon) times.push_back(t);
        std::sort(times.begin(), times.end());
        times.erase(std::unique(times.begin(), times.end()), times.end());
        times.push_back(horizon);
        const double px = cell * static_cast<double>(x - lo);
        const char* run_colour = nullptr;
        double run_start = 0.0;
        auto flush = [&](double until) {
            if (!run_colour) return;
            const double y0 = horizon > 0.0 ? height - until * scale : 0.0;
            const double h = horizon > 0.0 ? (until - run_start) * scale : height;
            o << "<rect x=\"" << f(px) << "\" y=\"" << f(y0) << "\" width=\"" << f(cell) << "\" height=\""
              << f(h) << "\" fill=\"" << run_colour << "\"/>\n";
        };
        for (std::size_t k = 0; k + 1 < times.size() || (k == 0 && horizon == 0.0); ++k) {
            std::vector<SiteState> s;
            for (const auto& ix : idx) s.push_back(ix.state_at(x, times[k]));
            const char* col = svg_colour(s);
            if (col != run_colour) {
                flush(times[k]);
                run_colour = col;
                run_start = times[k];
            }
            if (horizon == 0.0) break;
        }
        flush(horizon);
    }
    o << "<g font-family=\"monospace\" font-size=\"11\" fill=\"#000000\">\n";
    if (layers.size() == 3) {
        o << "<rect x=\"4\" y=\"" << f(height + 8) << "\" width=\"10\" height=\"10\" fill=\"#ffffff\" stroke=\"#000000\"/>"
          << "<text x=\"18\" y=\"" << f(height + 17) << "\">all three</text>\n";
        o << "<rect x=\"100\" y=\"" << f(height + 8) << "\" width=\"10\" height=\"10\" fill=\"#c0c0c0\"/>"
          << "<text x=\"114\" y=\"" << f(height + 17) << "\">IS and CP</text>\n";
        o << "<rect x=\"196\" y=\"" << f(height + 8) << "\" width=\"10\" height=\"10\" fill=\"#606060\"/>"
          << "<text x=\"210\" y=\"" << f(height + 17) << "\">CP only</text>\n";
        o << "<rect x=\"280\" y=\"" << f(height + 8) << "\" width=\"10\" height=\"10\" fill=\"#000000\"/>"
          << "<text x=\"294\" y=\"" << f(height + 17) << "\">empty or blocked</text>\n";
    } else {
        o << "<rect x=\"4\" y=\"" << f(height + 8) << "\" width=\"10\" height=\"10\" fill=\"#ffffff\" stroke=\"#000000\"/>"
          << "<text x=\"18\" y=\"" << f(height + 17) << "\">occupied</text>\n";
        o << "<rect x=\"100\" y=\"" << f(height + 8) << "\" width=\"10\" height=\"10\" fill=\"#7a1f1f\"/>"
          << "<text x=\"114\" y=\"" << f(height + 17) << "\">blocked</text>\n";
        o << "<rect x=\"196\" y=\"" << f(height + 8) << "\" width=\"10\" height=\"10\" fill=\"#000000\"/>"
          << "<text x=\"210\" y=\"" << f(height + 17) << "\">empty</text>\n";
    }
    o << "</g>\n</svg>\n";
    return o.str();
}

int cmd_simulate(const RunConfig& c) {
    return guarded("simulate", [&] {
        validate_config(c);
        const Configuration c0 = initial_of(c);
        const auto kinds = layer_kinds(c.kind);
        std::string csv = csv_head("trajectory", "run_id,layer,time,site,state");
        std::vector<std::vector<TrialEndpoint>> ends(kinds.size(), std::vector<TrialEndpoint>(c.trials));
        std::size_t order_violations = 0, events = 0, ties = 0;
        std::string first_violation;
        FrontOrder front;
        constexpr std::size_t kBatch = 32;
        for (std::size_t b0 = 0; b0 < c.trials; b0 += kBatch) {
            const std::size_t nb = std::min(kBatch, c.trials - b0);
            std::vector<SimTrial> batch(nb);
            parallel_for(nb, c.threads, [&](std::size_t j) { batch[j] = simulate_trial(c, c0, b0 + j); });
            for (std::size_t j = 0; j < nb; ++j) {
                const std::size_t id = b0 + j;
                const SimTrial& tr = batch[j];
                std::vector<const Trajectory*> ptrs;
                for (std::size_t l = 0; l < tr.layers.size(); ++l) {
                    const Trajectory& t = tr.layers[l];
                    ptrs.push_back(&t);
                    const std::string pre = std::to_string(id) + "," + to_string(kinds[l]) + ",";
                    for (Site x = t.initial.lo; x <= t.initial.hi; ++x)
                        csv += pre + "0," + std::to_string(x) + "," + std::to_string(value(t.initial.at(x))) + "\n";
                    for (const Delta& d : t.deltas)
                        csv += pre + num(d.time) + "," + std::to_string(d.site) + "," +
                               std::to_string(value(d.state)) + "\n";
                    const auto r = t.rightmost_at(c.horizon);
                    ends[l][id] = {tr.seed, r.has_value(), r.value_or(0)};
                    events += t.events_processed;
                    ties += t.ties;
                }
                if (tr.order_violations && first_violation.empty())
                    first_violation = "run " + std::to_string(id) + ": " + tr.first_violation;
                order_violations += tr.order_violations;
                if (ptrs.size() == 3) check_front_order(front, ptrs, c.horizon, id);
                if (id < c.svg_runs)
                    write_file(out_path(c, "simulate_spacetime_" + std::to_string(id) + ".svg"),
                               spacetime_svg(ptrs, c.horizon));
            }
        }
        write_file(out_path(c, "simulate_trajectory.csv"), csv);

        json est = json::object(), ci = json::object();
        for (std::size_t l = 0; l < kinds.size(); ++l) {
            const auto surv = survival_summary(ends[l]);
            const json speed = speed_or_note(ends[l], c.horizon);
            est[to_string(kinds[l])] = {{"survival", stats_json(surv)}, {"speed_direct", speed}};
            ci[to_string(kinds[l])] = {{"survival", {surv.ci_lo, surv.ci_hi}},
                                       {"speed_direct", speed.contains("ci") ? speed["ci"] : json(nullptr)}};
        }
        json diag = {{"events_processed", events}, {"ties", ties}};
        if (c.kind == RunKind::Coupled)
            diag["coupling"] = {{"order_violations", order_violations},
                                {"first_violation", first_violation},
                                {"front_order_runs", front.runs},
                                {"front_order_violations", front.violations},
                                {"front_order_first_violation", front.first}};
        const json summary = {{"schema", "simulate_summary:1"}, {"params", config_json(c)},
                              {"estimates", est},                {"ci", ci},
                              {"diagnostics", diag},             {"seed_manifest", seed_manifest(c.seed, c.trials)}};
        write_file(out_path(c, "simulate_summary.json"), dump(summary));
        return (order_violations || front.violations) ? exit_code::violation : exit_code::ok;
    });
}

int cmd_renewal(const RunConfig& c) {
    return guarded("renewal", [&] {
        validate_config(c);
        const auto kind = process_of(c.kind);
        if (!kind || *kind == ProcessKind::CP) throw ConfigError("renewal needs kind spont or is");
        validate_policy(*kind, c.policy);
        const ModelParams params{*kind, c.lambda, c.p, parse_initial_spec(c.initial, c.lambda, c.horizon)};
        std::vector<RenewalTrial> trials(c.trials);
        parallel_for(c.trials, c.threads, [&](std::size_t i) {
            trials[i] = renewal_trial(params, {c.horizon}, trial_seed(c.seed, i), c.guard, c.policy, c.window_cap);
        });

        std::string rec_csv = csv_head("renewal_records", "run_id,k,sigma,r_sigma,censored");
        std::string inc_csv = csv_head("renewal_increments", "run_id,k,d_sigma,d_r");
        std::vector<TrialEndpoint> ends;
        std::vector<IncrementSample> samples;
        std::vector<RenewalRecord> records;
        std::size_t with_renewal = 0, attempts = 0;
        for (std::size_t i = 0; i < trials.size(); ++i) {
            const RenewalTrial& t = trials[i];
            ends.push_back({t.seed, t.survived[0], t.r[0]});
            if (!t.records[0]) continue;
            const RenewalRecord& r = *t.records[0];
            records.push_back(r);
            attempts += r.attempts;
            bool any = false;
            for (std::size_t k = 0; k < r.sigmas.size(); ++k) {
                rec_csv += std::to_string(i) + "," + std::to_string(k) + "," + num(r.sigmas[k]) + "," +
                           std::to_string(r.rightmosts[k]) + "," + (r.censored[k] ? "1" : "0") + "\n";
                any = any || !r.censored[k];
            }
            with_renewal += any;
            for (const auto& s : harvest_increments(r, i)) {
                inc_csv += std::to_string(i) + "," + std::to_string(s.index) + "," + num(s.d_sigma) + "," +
                           std::to_string(s.d_r) + "\n";
                samples.push_back(s);
            }
        }
        write_file(out_path(c, "renewal_records.csv"), rec_csv);
        write_file(out_path(c, "renewal_increments.csv"), inc_csv);

        const auto surv = survival_summary(ends);
        const json direct = speed_or_note(ends, c.horizon);
        json renewal, normal = json::array(), indep, two;
        bool insufficient = false;
        try {
            const auto s = estimate_speed_renewal(samples);
            renewal = stats_json(s);
            if (direct.contains("estimate")) {
                const double diff = std::abs(direct["estimate"].get<double>() - s.estimate);
                const double se = std::hypot(direct["std_error"].get<double>(), s.std_error);
                two = {{"difference", diff}, {"combined_se", se}, {"consistent", diff <= 3.0 * se}};
            }
            try {
                for (const auto& r : clt_statistics(samples, s.estimate)) normal.push_back(normality_json(r));
            } catch (const InsufficientSamples& e) {
                normal = {{"error", "insufficient-samples"}, {"detail", e.what()}};
            }
        } catch (const InsufficientSamples& e) {
            insufficient = true;
            renewal = {{"error", "insufficient-samples"}, {"detail", e.what()}};
        }
        try {
            const auto ir = independence_check(samples);
            indep = {{"n", ir.n},
                     {"band", ir.band},
                     {"d_sigma", lags_json(ir.d_sigma)},
                     {"d_r", lags_json(ir.d_r)},
                     {"cross", lags_json(ir.cross)},
                     {"all_within", ir.all_within()}};
        } catch (const InsufficientSamples& e) {
            indep = {{"error", "insufficient-samples"}, {"detail", e.what()}};
        }
        const std::size_t survivors = surv.n_surviving;
        const auto pos = wilson_summary(with_renewal, survivors);
        json diag = {{"insufficient_samples", insufficient},
                     {"n_surviving", survivors},
                     {"n_increments", samples.size()},
                     {"search_attempts", attempts},
                     {"runs_with_uncensored_renewal", with_renewal},
                     {"renewal_positive_fraction", stats_json(pos)},
                     {"two_estimator", two.is_null() ? json(nullptr) : two},
                     {"normality", normal},
                     {"independence", indep}};
        if (!records.empty()) {
            const auto tail = last_renewal_tail(records, c.horizon / 2);
            diag["last_renewal_tail"] = {{"t", c.horizon / 2},
                                         {"included", tail.included},
                                         {"excluded", tail.excluded},
                                         {"log_tail_slope", tail.log_tail_slope},
                                         {"tail_decreasing", tail.tail_decreasing},
                                         {"concave_or_linear", tail.concave_or_linear}};
        }
        const json est = {{"survival", stats_json(surv)}, {"mu_direct", direct}, {"mu_renewal", renewal}};
        const json ci = {{"survival", {surv.ci_lo, surv.ci_hi}},
                         {"mu_direct", direct.contains("ci") ? direct["ci"] : json(nullptr)},
                         {"mu_renewal", renewal.contains("ci") ? renewal["ci"] : json(nullptr)},
                         {"renewal_positive_fraction", {pos.ci_lo, pos.ci_hi}}};
        const json summary = {{"schema", "renewal_summary:1"}, {"params", config_json(c)},
                              {"estimates", est},               {"ci", ci},
                              {"diagnostics", diag},            {"seed_manifest", seed_manifest(c.seed, c.trials)}};
        write_file(out_path(c, "renewal_summary.json"), dump(summary));
        return exit_code::ok;
    });
}

int cmd_sweep(const RunConfig& c) {
    return guarded("sweep", [&] {
        validate_config(c);
        const Configuration c0 = initial_of(c);
        std::string csv = csv_head("sweep",
                                   "kind,lambda,p,trials,surviving,survival,survival_ci_lo,survival_ci_hi,"
                                   "speed,speed_se,speed_ci_lo,speed_ci_hi,ordered_runs,order_violations");
        json cells = json::array();
        std::size_t total_violations = 0;
        for (double lambda : c.grid.lambdas)
            for (double p : c.grid.ps)
                for (RunKind k : c.grid.kinds) {
                    RunConfig cell = c;
                    cell.lambda = lambda;
                    cell.p = p;
                    cell.kind = k;
                    std::string row = std::string(to_string(k)) + "," + num(lambda) + "," + num(p) + "," +
                                      std::to_string(c.trials) + ",";
                    json j = {{"kind", to_string(k)}, {"lambda", lambda}, {"p", p}};
                    if (auto pk = process_of(k)) {
                        std::vector<TrialEndpoint> ends(c.trials);
                        EvolveOptions opt = evolve_options(c);
                        opt.retain_deltas = false;
                        opt.stop_at_extinction = true;
                        const Configuration start = start_for(*pk, c0);
                        parallel_for(c.trials, c.threads, [&](std::size_t i) {
                            const std::uint64_t seed = trial_seed(c.seed, i);
                            EventLog log(seed, lambda, p, c.horizon);
                            const Trajectory t = evolve(*pk, start, log, 0.0, c.horizon, opt);
                            const auto r = t.rightmost_at(c.horizon);
                            ends[i] = {seed, r.has_value(), r.value_or(0)};
                        });
                        const auto surv = survival_summary(ends);
                        const json speed = speed_or_note(ends, c.horizon);
                        row += std::to_string(surv.n_surviving) + "," + num(surv.estimate) + "," + num(surv.ci_lo) +
                               "," + num(surv.ci_hi) + ",";
                        if (speed.contains("estimate"))
                            row += num(speed["estimate"].get<double>()) + "," + num(speed["std_error"].get<double>()) +
                                   "," + num(speed["ci"][0].get<double>()) + "," + num(speed["ci"][1].get<double>());
                        else
                            row += ",,,";
                        row += ",,\n";
                        j["survival"] = stats_json(surv);
                        j["speed_direct"] = speed;
                    } else {
                        std::vector<SimTrial> runs(c.trials);
                        parallel_for(c.trials, c.threads, [&](std::size_t i) {
                            SimTrial t = simulate_trial(cell, c0, i);
                            // keep only what the row needs
                            for (auto& l : t.layers) {
                                l.deltas.clear();
                                l.deltas.shrink_to_fit();
                            }
                            runs[i] = std::move(t);
                        });
                        FrontOrder front;
                        std::size_t pointwise = 0;
                        std::string first;
                        for (std::size_t i = 0; i < runs.size(); ++i) {
                            const auto& L = runs[i].layers;
                            check_front_order(front, {&L[0], &L[1], &L[2]}, c.horizon, i);
                            if (runs[i].order_violations && first.empty())
                                first = "run " + std::to_string(i) + ": " + runs[i].first_violation;
                            pointwise += runs[i].order_violations;
                        }
                        const auto all = wilson_summary(front.runs, c.trials);
                        row += std::to_string(front.runs) + "," + num(all.estimate) + "," + num(all.ci_lo) + "," +
                               num(all.ci_hi) + ",,,,," + std::to_string(front.runs) + "," +
                               std::to_string(front.violations + pointwise) + "\n";
                        j["all_three_survive"] = stats_json(all);
                        j["front_order"] = {{"runs", front.runs},
                                            {"violations", front.violations},
                                            {"first_violation", front.first}};
                        j["pointwise_order"] = {{"violations", pointwise}, {"first_violation", first}};
                        total_violations += front.violations + pointwise;
                    }
                    csv += row;
                    cells.push_back(j);
                }
        write_file(out_path(c, "sweep_grid.csv"), csv);
        const json summary = {{"schema", "sweep_summary:1"},
                              {"params", config_json(c)},
                              {"estimates", cells},
                              {"ci", nullptr},
                              {"diagnostics", {{"order_violations", total_violations}}},
                              {"seed_manifest", seed_manifest(c.seed, c.trials)}};
        write_file(out_path(c, "sweep_summary.json"), dump(summary));
        return total_violations ? exit_code::violation : exit_code::ok;
    });
}

int cmd_audit(const RunConfig& c) {
    return guarded("audit", [&] {
        validate_config(c);
        const Configuration c0 = initial_of(c);
        const AuditConfig& a = c.audit;
        struct Check {
            std::string name;
            bool enforced = true;
            AuditReport report;
        };
        std::vector<Check> checks;

        // Coupled runs: rule locality for every layer, pointwise order, and
        // occupancy against active-path reachability.
        struct RunAudit {
            ReplayAudit replay;
            std::size_t order_checks = 0, order_violations = 0;
            std::string order_first;
            EquivalenceReport equiv;
            bool equiv_skipped = false;
        };
        const bool finite = c0.policy.kind != TailKind::OccupiedLeftClamp;
        std::vector<RunAudit> runs(c.trials);
        parallel_for(c.trials, c.threads, [&](std::size_t i) {
            EventLog log(trial_seed(c.seed, i), c.lambda, c.p, c.horizon);
            CoupledRun cr = evolve_coupled(c0, c0, cp_projection(c0), log, c.horizon, evolve_options(c));
            RunAudit& ra = runs[i];
            ra.order_checks = cr.order_checks;
            ra.order_violations = cr.order_violations;
            ra.order_first = cr.first_violation;
            Trajectory* layers[3] = {&cr.spont, &cr.is, &cr.cp};
            if (i == 0 && c.fault_injection == "corrupt_replay") {
                for (Trajectory* t : layers)
                    if (!t->deltas.empty()) {
                        Delta& d = t->deltas.front();
                        d.state = d.state == SiteState::Occupied ? SiteState::Empty : SiteState::Occupied;
                        break;
                    }
            }
            for (Trajectory* t : layers) {
                const ReplayAudit r = replay_audit(*t, log);
                ra.replay.checked += r.checked;
                if (r.violations && ra.replay.violations == 0)
                    ra.replay.first_violation = std::string(to_string(t->kind)) + ": " + r.first_violation;
                ra.replay.violations += r.violations;
            }
            if (!finite) {
                ra.equiv_skipped = true;
                return;
            }
            for (Trajectory* t : layers)
                for (double f : a.equivalence_fractions) {
                    const EquivalenceReport e = occupancy_path_equivalence(*t, log, f * c.horizon);
                    ra.equiv.sites_checked += e.sites_checked;
                    ra.equiv.witnesses_validated += e.witnesses_validated;
                    if (e.violations && ra.equiv.violations == 0)
                        ra.equiv.first_violation = std::string(to_string(t->kind)) + " t=" + num(f * c.horizon) +
                                                   ": " + e.first_violation;
                    ra.equiv.violations += e.violations;
                }
        });
        Check replay{"replay", true, {}}, order{"coupling_order", true, {}}, equiv{"path_equivalence", true, {}};
        replay.report.n_trials = order.report.n_trials = equiv.report.n_trials = c.trials;
        for (std::size_t i = 0; i < runs.size(); ++i) {
            const RunAudit& r = runs[i];
            const std::string tag = "run " + std::to_string(i) + ": ";
            replay.report.n_events_checked += r.replay.checked;
            for (std::size_t v = 0; v < r.replay.violations; ++v) replay.report.violation(tag + r.replay.first_violation);
            order.report.n_events_checked += r.order_checks;
            for (std::size_t v = 0; v < r.order_violations; ++v) order.report.violation(tag + r.order_first);
            if (r.equiv_skipped) {
                ++equiv.report.n_skipped;
                continue;
            }
            equiv.report.n_events_checked += r.equiv.sites_checked;
            for (std::size_t v = 0; v < r.equiv.violations; ++v) equiv.report.violation(tag + r.equiv.first_violation);
        }
        checks.push_back(replay);
        checks.push_back(order);
        checks.push_back(equiv);

        checks.push_back({"split_site_spont", true,
                          discrepancy_audit(ProcessKind::Spont, 0, std::nullopt, c.trials, c.horizon, c.lambda, c.p,
                                            c.seed, c.threads)});
        checks.push_back({"split_site_is", true,
                          discrepancy_audit(ProcessKind::IS, 0, std::nullopt, c.trials, c.horizon, c.lambda, c.p,
                                            c.seed, c.threads)});

        AttractivityOptions ao;
        ao.lambda = c.lambda;
        ao.p = c.p;
        ao.T = a.attractivity_T;
        ao.window = a.attractivity_window;
        ao.is_lambda = a.is_lambda;
        ao.is_p = a.is_p;
        ao.is_budget = a.is_budget;
        ao.seed = c.seed;
        Check is_search{"is_counterexample_search", true, {}};
        is_search.report.n_trials = a.is_budget;
        std::optional<AttractivityReport> attr;
        try {
            attr = attractivity_suite(a.attractivity_trials, ao, c.threads);
            is_search.report.n_events_checked = attr->is_probes;
            write_file(out_path(c, "audit_is_counterexample.json"),
                       counterexample_json(attr->is_counterexample) + "\n");
            checks.push_back({"spont_monotone", true, attr->spont_monotone});
            checks.push_back({"cp_additive", true, attr->cp_additive});
        } catch (const CounterexampleNotFound& e) {
            is_search.report.n_events_checked = a.is_budget;
            is_search.report.violation(e.what());
        }
        checks.push_back(is_search);

        TruncationOptions to;
        to.lambda = c.lambda;
        to.p = c.p;
        to.T = a.truncation_T;
        to.seed = c.seed;
        to.mono_n = a.mono_n;
        to.mono_m = a.mono_m;
        to.radii = a.truncation_radii;
        to.probe = a.truncation_probe;
        for (const char* rule : {"target", "both_ends"}) {
            to.blocking_by_target = std::string(rule) == "target";
            checks.push_back({std::string("truncation_monotone_") + rule, a.truncation_rule == rule,
                              truncation_monotonicity(a.truncation_seeds, to, c.threads)});
        }
        checks.push_back({"truncation_agreement_spont", true,
                          truncation_agreement(ProcessKind::Spont, a.truncation_seeds, to, c.threads)});
        checks.push_back({"truncation_agreement_is", true,
                          truncation_agreement(ProcessKind::IS, a.truncation_seeds, to, c.threads)});

        std::string csv = csv_head("audit", "check,enforced,trials,events_checked,skipped,violations,first_violation");
        json list = json::array();
        bool failed = false;
        for (const Check& ch : checks) {
            const AuditReport& r = ch.report;
            csv += ch.name + "," + (ch.enforced ? "1" : "0") + "," + std::to_string(r.n_trials) + "," +
                   std::to_string(r.n_events_checked) + "," + std::to_string(r.n_skipped) + "," +
                   std::to_string(r.n_violations) + "," + csv_field(r.first_violation) + "\n";
            json j = audit_json(r);
            j["check"] = ch.name;
            j["enforced"] = ch.enforced;
            list.push_back(j);
            if (ch.enforced && r.n_violations) {
                failed = true;
                std::cerr << "audit: " << ch.name << ": " << r.n_violations << " violation(s); first: "
                          << r.first_violation << "\n";
            }
        }
        write_file(out_path(c, "audit_checks.csv"), csv);
        const json summary = {{"schema", "audit_summary:1"},
                              {"params", config_json(c)},
                              {"estimates", nullptr},
                              {"ci", nullptr},
                              {"diagnostics", {{"checks", list}, {"passed", !failed}}},
                              {"seed_manifest", seed_manifest(c.seed, c.trials)}};
        write_file(out_path(c, "audit_summary.json"), dump(summary));
        return failed ? exit_code::violation : exit_code::ok;
    });
}

}  // namespace ips
