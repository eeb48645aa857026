#include <doctest.h>

#include <functional>
#include <random>

#include <json.hpp>

#include "ips/paths.hpp"
#include "ips/renewal.hpp"
#include "path_oracle.hpp"

using namespace ips;
using namespace ips::oracle;

namespace {

bool left_of(const PathWitness& a, const PathWitness& b) {
    std::vector<double> times;
    for (const auto* w : {&a, &b})
        for (const auto& g : w->segments) times.push_back(g.t_start);
    std::sort(times.begin(), times.end());
    for (double u : times)
        if (a.site_at(u) != b.site_at(u)) return a.site_at(u) < b.site_at(u);
    return false;
}

bool same_path(const PathWitness& a, const PathWitness& b) { return !left_of(a, b) && !left_of(b, a); }

}  // namespace

TEST_CASE("degenerate reachability and logs without arrows") {
    auto log = EventLog::scripted(4.0, 0.9, 5.0, {{ObjectKey::healing(1), {2.0}}});
    Explicit e{-1, {SiteState::Occupied, SiteState::Occupied, SiteState::Occupied}};
    const Trajectory tr = evolve(ProcessKind::Spont, make_initial(e), log, 0.0, 5.0);
    auto r = active_reachable(tr, log, {0, 1.0}, {0, 1.0});
    REQUIRE(r.reachable);
    CHECK(r.witness->segments.size() == 1);
    CHECK(active_reachable(tr, log, {0, 0.0}, {0, 5.0}).reachable);
    CHECK_FALSE(active_reachable(tr, log, {0, 0.0}, {1, 5.0}).reachable);
    CHECK_FALSE(active_reachable(tr, log, {1, 0.0}, {1, 3.0}).reachable);
    CHECK(active_reachable(tr, log, {1, 0.0}, {1, 1.5}).reachable);
    CHECK(active_reachable(tr, log, {1, 2.0}, {1, 3.0}).reachable);
    CHECK_THROWS_AS(active_reachable(tr, log, {0, 3.0}, {0, 1.0}), PreconditionViolation);
}

TEST_CASE("active reachability agrees with enumeration of step functions") {
    std::mt19937_64 rng(11);
    int positives = 0, compared = 0;
    for (int rep = 0; rep < 300; ++rep) {
        const double T = 3.0;
        auto inst = random_instance(rng, 8, T);
        auto log = EventLog::scripted(4.0, 0.9, T, inst.streams);
        const ProcessKind kind = rep % 3 == 0 ? ProcessKind::Spont : rep % 3 == 1 ? ProcessKind::IS : ProcessKind::CP;
        if (kind == ProcessKind::CP)
            for (auto& s : inst.start.states)
                if (s == SiteState::Blocked) s = SiteState::Empty;
        const Trajectory tr = evolve(kind, make_initial(inst.start), log, 0.0, T);
        TrajectoryIndex host(tr, &log);
        for (double s : {0.0, 1.0}) {
            for (Site x = -2; x <= 2; ++x) {
                for (double t : {1.5, T}) {
                    if (t < s) continue;
                    for (Site y = -2; y <= 2; ++y) {
                        bool oracle = false;
                        for (const auto& p : enumerate_paths(inst.streams, x, s, t))
                            if (p.segments.back().site == y && validate_witness(p, log, &host).ok) oracle = true;
                        const auto r = active_reachable(host, log, {x, s}, {y, t});
                        INFO("rep " << rep << " from " << x << "@" << s << " to " << y << "@" << t);
                        CHECK(r.reachable == oracle);
                        if (r.reachable) {
                            CHECK(validate_witness(*r.witness, log, &host).ok);
                            ++positives;
                        }
                        ++compared;
                    }
                }
            }
        }
    }
    CHECK(positives > 200);
    CHECK(compared > 1000);
}

TEST_CASE("occupancy equals reachability from the initial ones") {
    SUBCASE("t = start and an empty log") {
        auto log = EventLog::scripted(4.0, 0.9, 5.0, {{ObjectKey::healing(0), {1.0}}});
        Explicit e{-2, {SiteState::Occupied, SiteState::Blocked, SiteState::Occupied, SiteState::Empty}};
        const Trajectory tr = evolve(ProcessKind::Spont, make_initial(e), log, 0.0, 5.0);
        CHECK(occupancy_path_equivalence(tr, log, 0.0).holds);
        const auto rep = occupancy_path_equivalence(tr, log, 5.0);
        CHECK(rep.holds);
        CHECK(rep.witnesses_validated == 1);
    }
    SUBCASE("seeded runs of every kind") {
        std::mt19937_64 rng(5);
        for (std::uint64_t seed = 1; seed <= 30; ++seed) {
            for (ProcessKind kind : {ProcessKind::Spont, ProcessKind::IS, ProcessKind::CP}) {
                EventLog log(seed, 4.0, 0.9, 6.0);
                Explicit e;
                e.lo = -5;
                for (int i = 0; i < 11; ++i) {
                    int v = int(rng() % 3) - 1;
                    if (kind == ProcessKind::CP && v < 0) v = 0;
                    e.states.push_back(static_cast<SiteState>(v));
                }
                const Trajectory tr = evolve(kind, make_initial(e), log, 0.0, 6.0);
                for (double t : {2.0, 6.0}) {
                    const auto rep = occupancy_path_equivalence(tr, log, t);
                    INFO(to_string(kind) << " seed " << seed << ": " << rep.first_violation);
                    CHECK(rep.holds);
                }
            }
        }
    }
}

TEST_CASE("witness validation rejects broken paths") {
    auto log = EventLog::scripted(4.0, 0.9, 5.0,
                                  {{ObjectKey::fertile(0, 1), {1.0}}, {ObjectKey::healing(1), {3.0}}});
    PathWitness w;
    w.segments = {{0.0, 1.0, 0}, {1.0, 2.0, 1}};
    w.jump_arrows = {{ObjectKey::fertile(0, 1), 1.0}};
    CHECK(validate_witness(w, log).ok);
    w.segments.back().t_end = 3.0;
    CHECK_FALSE(validate_witness(w, log).ok);
    w.segments.back().t_end = 2.0;
    w.jump_arrows[0].time = 1.5;
    CHECK_FALSE(validate_witness(w, log).ok);

    const auto j = nlohmann::json::parse(witness_json(PathWitness{{{0.0, 1.0, 0}, {1.0, 2.0, 1}},
                                                                   {{ObjectKey::fertile(0, 1), 1.0}}}));
    REQUIRE(j.size() == 2);
    CHECK(j[0]["arrow_ref"].is_null());
    CHECK(j[1]["arrow_ref"]["target"] == 1);
    CHECK(j[1]["site"] == 1);
}

TEST_CASE("leftmost active path") {
    SUBCASE("single constant path") {
        auto log = EventLog::scripted(4.0, 0.9, 2.0, {});
        const Trajectory tr = evolve(ProcessKind::Spont, make_initial(SingleOne{3}), log, 0.0, 2.0);
        const auto w = leftmost_active_path(tr, log, 2.0);
        REQUIRE(w.segments.size() == 1);
        CHECK(w.segments[0].site == 3);
    }
    SUBCASE("of two routes the one further left at the divergence wins") {
        // From 0, a detour through -1 or a direct stay; both end at 0.
        auto log = EventLog::scripted(4.0, 0.9, 4.0,
                                      {{ObjectKey::fertile(0, -1), {1.0}}, {ObjectKey::fertile(-1, 0), {2.0}},
                                       {ObjectKey::healing(-1), {3.0}}});
        const Trajectory tr = evolve(ProcessKind::Spont, make_initial(SingleOne{0}), log, 0.0, 4.0);
        const auto w = leftmost_active_path(tr, log, 4.0);
        REQUIRE(w.segments.size() == 3);
        CHECK(w.segments[1].site == -1);
        CHECK(w.segments.back().site == 0);
    }
    SUBCASE("extinct run") {
        auto log = EventLog::scripted(4.0, 0.9, 4.0, {{ObjectKey::healing(0), {1.0}}});
        const Trajectory tr = evolve(ProcessKind::Spont, make_initial(SingleOne{0}), log, 0.0, 4.0);
        CHECK_THROWS_AS(leftmost_active_path(tr, log, 2.0), NoOccupiedSite);
    }
    SUBCASE("agrees with the minimum over enumerated witnesses") {
        std::mt19937_64 rng(23);
        int checked = 0;
        for (int rep = 0; rep < 400; ++rep) {
            const double T = 3.0;
            auto inst = random_instance(rng, 8, T);
            auto log = EventLog::scripted(4.0, 0.9, T, inst.streams);
            const ProcessKind kind = rep % 2 ? ProcessKind::Spont : ProcessKind::IS;
            const Trajectory tr = evolve(kind, make_initial(inst.start), log, 0.0, T);
            const auto target = tr.leftmost_at(T);
            if (!target) continue;
            TrajectoryIndex host(tr, &log);
            std::optional<PathWitness> best;
            for (Site x = -2; x <= 2; ++x) {
                if (tr.initial.at(x) != SiteState::Occupied) continue;
                for (const auto& p : enumerate_paths(inst.streams, x, 0.0, T)) {
                    if (p.segments.back().site != *target || !validate_witness(p, log, &host).ok) continue;
                    if (!best || left_of(p, *best)) best = p;
                }
            }
            REQUIRE(best);
            const auto w = leftmost_active_path(tr, log, T);
            INFO("rep " << rep);
            CHECK(validate_witness(w, log, &host).ok);
            CHECK(same_path(w, *best));
            ++checked;
        }
        CHECK(checked > 50);
    }
}

TEST_CASE("never-healed frontier") {
    EventLog seeded(3, 4.0, 0.9, 10.0);
    CHECK(never_healed_frontier(seeded, 7, 1.0).value == 8);
    std::map<ObjectKey, std::vector<double>> streams;
    for (Site y = 1; y <= 5; ++y) streams[ObjectKey::healing(y)] = {1.0 + 0.5 * static_cast<double>(y)};
    streams[ObjectKey::healing(6)] = {0.5};
    auto log = EventLog::scripted(4.0, 0.9, 10.0, streams);
    CHECK(never_healed_frontier(log, 0, 5.0).value == 6);
    CHECK(never_healed_frontier(log, 0, 2.0).value == 3);
    CHECK_THROWS_AS(never_healed_frontier(log, 0, 0.5), PreconditionViolation);
}

TEST_CASE("split-site conditions at the first rightmost discrepancy") {
    SUBCASE("identical starts never split") {
        EventLog log(9, 4.0, 0.9, 20.0);
        const auto a = evolve(ProcessKind::Spont, make_initial(Hostile{0}), log, 0.0, 20.0);
        const auto b = evolve(ProcessKind::Spont, make_initial(Hostile{0}), log, 0.0, 20.0);
        CHECK_FALSE(check_split_site(ProcessKind::Spont, a, b, log, a.extinction).discrepancy);
    }
    SUBCASE("random pairs") {
        std::mt19937_64 rng(17);
        int asserted = 0;
        for (std::uint64_t seed = 1; seed <= 150; ++seed) {
            EventLog log(seed, 4.0, 0.9, 20.0);
            auto random_start = [&]() {
                Explicit e;
                e.lo = -10;
                for (int i = 0; i < 10; ++i) e.states.push_back(static_cast<SiteState>(int(rng() % 3) - 1));
                e.states.push_back(SiteState::Occupied);
                for (int i = 0; i < 10; ++i) e.states.push_back(static_cast<SiteState>(-int(rng() % 2)));
                return make_initial(e);
            };
            const auto h = evolve(ProcessKind::Spont, make_initial(Hostile{0}), log, 0.0, 20.0);
            const auto c = evolve(ProcessKind::Spont, random_start(), log, 0.0, 20.0);
            const auto rs = check_split_site(ProcessKind::Spont, h, c, log, h.extinction);
            INFO("spont seed " << seed << ": " << rs.describe());
            CHECK(rs.ok());
            const auto c1 = evolve(ProcessKind::IS, random_start(), log, 0.0, 20.0);
            const auto c2 = evolve(ProcessKind::IS, random_start(), log, 0.0, 20.0);
            const auto ri = check_split_site(ProcessKind::IS, c1, c2, log, h.extinction);
            INFO("is seed " << seed << ": " << ri.describe());
            CHECK(ri.ok());
            asserted += (rs.discrepancy && rs.premise) + (ri.discrepancy && ri.premise);
        }
        CHECK(asserted > 30);
    }
}
