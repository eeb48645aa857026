#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "ips/estimators.hpp"

using namespace ips;

namespace {

std::vector<IncrementSample> from_series(const std::vector<double>& d_sigma, const std::vector<Site>& d_r,
                                         std::uint64_t run_id = 0) {
    std::vector<IncrementSample> out;
    for (std::size_t i = 0; i < d_r.size(); ++i) out.push_back({d_sigma[i], d_r[i], run_id, i});
    return out;
}

double mean_dr(const std::vector<IncrementSample>& s) {
    double m = 0;
    for (const auto& x : s) m += static_cast<double>(x.d_r);
    return m / static_cast<double>(s.size());
}

}  // namespace

TEST_CASE("trial seeds and the parallel fold") {
    CHECK(trial_seed(1, 0) == trial_seed(1, 0));
    CHECK(trial_seed(1, 0) != trial_seed(1, 1));
    CHECK(trial_seed(1, 0) != trial_seed(2, 0));
    ModelParams m{ProcessKind::Spont, 4.0, 0.95, SingleOne{0}};
    const auto a = run_endpoints(m, 24, 10.0, 7, 1);
    const auto b = run_endpoints(m, 24, 10.0, 7, 3);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].seed == b[i].seed);
        CHECK(a[i].r_T == b[i].r_T);
        CHECK(a[i].survived == b[i].survived);
    }
}

TEST_CASE("survival estimates") {
    const auto w = wilson_summary(0, 2000);
    CHECK(w.estimate == 0.0);
    CHECK(w.ci_hi < 0.002);
    const auto sub = estimate_survival({ProcessKind::Spont, 0.5, 1.0, SingleOne{0}}, 2000, 200.0, 3);
    CHECK(sub.ci_hi < 0.02);
    const auto sterile = estimate_survival({ProcessKind::IS, 4.0, 0.0, SingleOne{0}}, 200, 50.0, 3);
    CHECK(sterile.estimate == 0.0);
    const auto half = wilson_summary(50, 100);
    CHECK(half.ci_lo < 0.5);
    CHECK(half.ci_hi > 0.5);
}

TEST_CASE("direct speed") {
    CHECK_THROWS_AS(estimate_speed_direct({ProcessKind::Spont, 0.0, 0.9, SingleOne{0}}, 100, 10.0, 1),
                    TooFewSurvivors);
    // With p = 1 Spont is the contact process on the same log.
    const auto s = estimate_speed_direct({ProcessKind::Spont, 4.0, 1.0, SingleOne{0}}, 60, 20.0, 5);
    const auto c = estimate_speed_direct({ProcessKind::CP, 4.0, 1.0, SingleOne{0}}, 60, 20.0, 5);
    CHECK(s.estimate == c.estimate);
    CHECK(s.n_surviving == c.n_surviving);
    CHECK(s.estimate > 0.0);
}

TEST_CASE("renewal speed") {
    const auto same = estimate_speed_renewal(from_series(std::vector<double>(40, 2.0), std::vector<Site>(40, 3)));
    CHECK(same.estimate == doctest::Approx(1.5));
    CHECK(same.std_error == doctest::Approx(0.0));
    std::vector<double> ds;
    std::vector<Site> dr;
    for (int i = 0; i < 40; ++i) {
        ds.push_back(1.0 + i % 3);
        dr.push_back(i % 2 ? 2 : -2);
    }
    CHECK(estimate_speed_renewal(from_series(ds, dr)).estimate == doctest::Approx(0.0));
    CHECK_THROWS_AS(estimate_speed_renewal(from_series({1.0}, {1})), InsufficientSamples);
}

TEST_CASE("normality statistics") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> g(0.0, 100.0);
    std::vector<Site> dr;
    for (int i = 0; i < 10000; ++i) dr.push_back(static_cast<Site>(std::lround(g(rng))));
    auto gauss = from_series(std::vector<double>(dr.size(), 1.0), dr);
    const auto rg = clt_statistics(gauss, mean_dr(gauss));
    REQUIRE(rg.size() == 3);
    CHECK(rg[0].n == 10000);
    CHECK(std::abs(rg[0].skewness) < 0.1);
    CHECK(std::abs(rg[0].excess_kurtosis) < 0.2);
    CHECK(rg[0].ks_statistic < 0.02);
    CHECK(rg[2].block == 32);
    CHECK(rg[2].n == 10000 / 32);

    std::exponential_distribution<double> e(1.0 / 1000.0);
    dr.clear();
    for (int i = 0; i < 10000; ++i) dr.push_back(static_cast<Site>(std::lround(e(rng))));
    auto expo = from_series(std::vector<double>(dr.size(), 1.0), dr);
    const auto re = clt_statistics(expo, mean_dr(expo), {1});
    CHECK(re[0].skewness == doctest::Approx(2.0).epsilon(0.15));
    CHECK(re[0].excess_kurtosis > 3.0);
    CHECK(re[0].ks_statistic > 0.05);
    CHECK_THROWS_AS(clt_statistics(from_series({1.0}, {1}), 0.0), InsufficientSamples);
}

TEST_CASE("independence check") {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> g(0.0, 1.0);
    int all_in = 0, single_in = 0, singles = 0;
    for (int rep = 0; rep < 100; ++rep) {
        std::vector<double> ds;
        std::vector<Site> dr;
        for (int i = 0; i < 2000; ++i) {
            ds.push_back(5.0 + g(rng));
            dr.push_back(static_cast<Site>(std::lround(100 * g(rng))));
        }
        const auto r = independence_check(from_series(ds, dr));
        all_in += r.all_within();
        for (const auto* v : {&r.d_sigma, &r.d_r, &r.cross})
            for (const auto& c : *v) {
                single_in += c.within_band;
                ++singles;
            }
    }
    CHECK(single_in >= 0.99 * singles);
    CHECK(all_in >= 93);

    std::vector<double> ds;
    std::vector<Site> dr;
    double x = 0;
    for (int i = 0; i < 2000; ++i) {
        x = 0.5 * x + g(rng);
        ds.push_back(1.0);
        dr.push_back(static_cast<Site>(std::lround(100 * x)));
    }
    const auto ar = independence_check(from_series(ds, dr));
    CHECK_FALSE(ar.d_r[0].within_band);
    CHECK(ar.d_r[0].value == doctest::Approx(0.5).epsilon(0.2));
}

TEST_CASE("independence pairs stay within a run") {
    std::vector<IncrementSample> s;
    for (std::uint64_t run = 0; run < 300; ++run) s.push_back({1.0 + static_cast<double>(run % 2), 1, run, 0});
    const auto r = independence_check(s);
    CHECK(r.d_sigma[0].value == 0.0);
}

TEST_CASE("discrepancy audits") {
    const auto none = discrepancy_audit(ProcessKind::Spont, 0, make_initial(Hostile{0}), 50, 20.0, 4.0, 0.9, 1);
    CHECK(none.n_events_checked == 0);
    CHECK(none.n_violations == 0);
    for (ProcessKind k : {ProcessKind::Spont, ProcessKind::IS}) {
        const auto rep = discrepancy_audit(k, 0, std::nullopt, 150, 20.0, 4.0, 0.9, 2);
        INFO(to_string(k) << ": " << rep.first_violation);
        CHECK(rep.n_violations == 0);
        CHECK(rep.n_events_checked > 10);
    }
    CHECK_THROWS_AS(discrepancy_audit(ProcessKind::Spont, 1, make_initial(Hostile{0}), 1, 5.0, 4.0, 0.9, 1),
                    PreconditionViolation);
}

TEST_CASE("attractivity suite") {
    AttractivityOptions opt;
    const auto rep = attractivity_suite(300, opt);
    CHECK(rep.spont_monotone.n_violations == 0);
    CHECK(rep.cp_additive.n_violations == 0);
    CHECK(rep.spont_monotone.n_events_checked == 300);
    CHECK(confirm_counterexample(rep.is_counterexample));
    const auto back = counterexample_from_json(counterexample_json(rep.is_counterexample));
    CHECK(back.seed == rep.is_counterexample.seed);
    CHECK(confirm_counterexample(back));
    AttractivityOptions tiny = opt;
    tiny.is_budget = 0;
    CHECK_THROWS_AS(attractivity_suite(1, tiny), CounterexampleNotFound);
}

TEST_CASE("stored IS counterexample still reproduces") {
    std::ifstream in(IPS_FIXTURE_DIR "/is_counterexample.json");
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    const auto ce = counterexample_from_json(ss.str());
    CHECK(ce.lambda == 4.0);
    CHECK(ce.p == 0.7);
    CHECK(confirm_counterexample(ce));
}

TEST_CASE("last renewal tail") {
    RenewalRecord unit;
    for (int k = 0; k < 20; ++k) {
        unit.sigmas.push_back(k);
        unit.rightmosts.push_back(k);
        unit.censored.push_back(false);
        unit.excursions.push_back(1);
    }
    RenewalRecord empty;
    const auto rep = last_renewal_tail({unit, unit, empty}, 10.5);
    CHECK(rep.included == 2);
    CHECK(rep.excluded == 1);
    for (double a : rep.ages) CHECK(a < 1.0);
    CHECK(rep.age_tail.front().second == 1.0);
    CHECK_THROWS(last_renewal_tail({}, 1.0));
}

TEST_CASE("certificate constant calibration") {
    const auto cal = calibrate_certificate(2.0, 0.95, 20, 12.0, 9);
    CHECK(cal.alpha_hat > 0.0);
    CHECK(cal.constants.L2 == cal.constants.L1 + 1);
    CHECK(cal.reached_target);
    CHECK(cal.pass_rate >= 0.9);
}

TEST_CASE("truncation audits") {
    TruncationOptions opt;
    SUBCASE("target rule keeps the boxes ordered") {
        opt.blocking_by_target = true;
        const auto rep = truncation_monotonicity(40, opt);
        CHECK(rep.n_violations == 0);
    }
    SUBCASE("both-ends rule breaks at the box edge") {
        const auto rep = truncation_monotonicity(40, opt);
        CHECK(rep.n_violations > 0);
        const bool at_edge = rep.first_violation.find("site 3 ") != std::string::npos ||
                             rep.first_violation.find("site -3 ") != std::string::npos;
        CHECK_MESSAGE(at_edge, rep.first_violation);
    }
    SUBCASE("large boxes agree with the untruncated runs") {
        CHECK(truncation_agreement(ProcessKind::Spont, 20, opt).n_violations == 0);
        CHECK(truncation_agreement(ProcessKind::IS, 20, opt).n_violations == 0);
    }
    SUBCASE("a box that is too small is caught") {
        opt.radii = {1};
        opt.lambda = 8.0;
        opt.p = 1.0;
        CHECK(truncation_agreement(ProcessKind::Spont, 20, opt).n_violations > 0);
    }
}
