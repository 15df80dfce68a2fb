#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <vector>

#include <boost/math/quadrature/tanh_sinh.hpp>

#include "catbond/crm.hpp"
#include "catbond/diagnostics.hpp"
#include "catbond/harness/synthetic.hpp"

using namespace catbond;
using namespace catbond::crm;
using namespace std::chrono;

namespace {

DateRange span_years(int first, int last) { return {year{first} / January / 1, year{last} / December / 31}; }

QuarterlyPanel synthetic_panel(std::uint64_t seed, std::vector<harness::SyntheticPeril> perils, int n_years = 13) {
    harness::SyntheticSpec spec;
    spec.perils = std::move(perils);
    spec.years = n_years;
    spec.seed = seed;
    return harness::generate_synthetic(spec).panel;
}

mcmc::McmcConfig schedule(int n_iter, int burn_in, std::uint64_t seed, int chains = 1, int thin = 1) {
    return {n_iter, burn_in, thin, seed, chains};
}

} // namespace

TEST_CASE("panel sums events per peril and quarter") {
    const std::vector<std::string> perils{"Flood", "Hail"};
    const std::vector<ClaimEvent> ev{{year{2013} / July / 8, "Flood", 30.0, 2}, {year{2013} / September / 30, "Flood", 40.0, 3}};
    const auto p = build_panel(ev, perils, span_years(2013, 2013));
    REQUIRE(p.n_quarters() == 4);
    CHECK(p.counts[0][2] == 2);
    CHECK(p.losses[0][2] == 70.0);
    CHECK(p.counts[1][2] == 0);
    CHECK(p.losses[1][2] == 0.0);
    CHECK(p.quarters[2] == Quarter{2013, 3});
}

TEST_CASE("empty event list gives a zero panel over the range") {
    const std::vector<std::string> perils{"Flood"};
    const auto p = build_panel({}, perils, span_years(2008, 2020));
    CHECK(p.n_quarters() == 52);
    for (long n : p.counts[0]) CHECK(n == 0);
    for (double s : p.losses[0]) CHECK(s == 0.0);
}

TEST_CASE("unknown perils are listed and out-of-range events rejected") {
    const std::vector<std::string> perils{"Flood"};
    const std::vector<ClaimEvent> ev{{year{2010} / May / 1, "Meteor", 1.0, 2}, {year{2010} / May / 2, "Locust", 1.0, 3}};
    try {
        build_panel(ev, perils, span_years(2010, 2010));
        FAIL("expected an error");
    } catch (const InputError& e) {
        const std::string m = e.what();
        CHECK(m.find("Meteor") != std::string::npos);
        CHECK(m.find("Locust") != std::string::npos);
    }
    const std::vector<ClaimEvent> late{{year{2011} / May / 1, "Flood", 1.0, 9}};
    CHECK_THROWS_AS(build_panel(late, perils, span_years(2010, 2010)), InputError);
}

TEST_CASE("130 synthetic events fill a 9 x 52 panel") {
    harness::SyntheticSpec spec = harness::two_cluster_spec(4);
    const auto data = harness::generate_synthetic(spec);
    REQUIRE(data.events.size() >= 130);
    std::vector<ClaimEvent> ev(data.events.begin(), data.events.begin() + 130);
    std::vector<std::string> names;
    for (const auto& p : spec.perils) names.push_back(p.name);
    const auto p = build_panel(ev, names, span_years(2008, 2020));
    CHECK(p.n_perils() == 9);
    CHECK(p.n_quarters() == 52);
    long total = 0;
    double loss = 0.0, expected_loss = 0.0;
    for (const auto& row : p.counts) total += std::accumulate(row.begin(), row.end(), 0L);
    for (const auto& row : p.losses) loss += std::accumulate(row.begin(), row.end(), 0.0);
    for (const auto& e : ev) expected_loss += e.loss;
    CHECK(total == 130);
    CHECK(loss == doctest::Approx(expected_loss).epsilon(1e-12));
}

TEST_CASE("log-likelihood of single cells") {
    QuarterlyPanel p;
    p.perils = {"A"};
    p.quarters = {{2010, 2}};
    p.counts = {{0}};
    p.losses = {{0.0}};
    const double k[] = {3.0}, th[] = {2.0}, a[] = {0.7};
    const double lambda = std::exp(0.7 + 0.1 * 2);
    CHECK(log_likelihood(k, th, a, 0.1, p) == doctest::Approx(-lambda).epsilon(1e-14));

    p.counts = {{2}};
    p.losses = {{5.0}};
    // InvGamma(shape 6, scale 2): density written out, and checked to integrate to one
    auto dens = [](double x) { return x > 0.0 ? std::exp(6.0 * std::log(2.0) - std::log(120.0) - 7.0 * std::log(x) - 2.0 / x) : 0.0; };
    boost::math::quadrature::tanh_sinh<double> integrator;
    CHECK(integrator.integrate(dens, 0.0, std::numeric_limits<double>::infinity()) == doctest::Approx(1.0).epsilon(1e-10));
    const double expected = 2.0 * std::log(lambda) - lambda - std::log(2.0) + std::log(dens(5.0));
    CHECK(log_likelihood(k, th, a, 0.1, p) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("seasonal intensity reconstruction") {
    CHECK(seasonal_rate(9.165, 0.0615, 1) == doctest::Approx(std::exp(9.2265)).epsilon(1e-14));
    CHECK(std::abs(seasonal_rate(9.165, 0.0615, 1) / 10168.0 - 1.0) < 1e-3);
    for (int s = 1; s < 4; ++s)
        CHECK(seasonal_rate(1.0, 0.0615, s + 1) / seasonal_rate(1.0, 0.0615, s) == doctest::Approx(std::exp(0.0615)));
}

TEST_CASE("expected count over a horizon follows the season schedule") {
    CHECK(expected_count(0.3, 0.1, {0.0, 1.0, 2}) == doctest::Approx(std::exp(0.3 + 0.2)));
    const double full_year = expected_count(0.3, 0.1, {0.0, 4.0, 3});
    double direct = 0.0;
    for (int s = 1; s <= 4; ++s) direct += std::exp(0.3 + 0.1 * s);
    CHECK(full_year == doctest::Approx(direct));
    CHECK(expected_count(0.0, 0.0, {0.5, 2.0, 1}) == doctest::Approx(1.5));
    CHECK_THROWS_AS(expected_count(0.0, 0.0, {2.0, 1.0, 1}), InputError);
}

TEST_CASE("fit configuration errors") {
    const auto panel = synthetic_panel(1, {{"A", 3, 2, 0.5, 0, 0}, {"B", 3, 2, 0.5, 0, 0}}, 2);
    CHECK_THROWS_AS(fit(panel, {}, schedule(100, 100, 1)), ConfigError);
    CrmHyperParams small;
    small.truncation = 1;
    CHECK_THROWS_AS(fit(panel, small, schedule(100, 10, 1)), ConfigError);
    QuarterlyPanel short_panel = panel;
    short_panel.quarters.resize(3);
    for (auto& r : short_panel.counts) r.resize(3);
    for (auto& r : short_panel.losses) r.resize(3);
    CHECK_THROWS_AS(fit(short_panel, {}, schedule(100, 10, 1)), ConfigError);
}

TEST_CASE("retained draws: count, positivity, single-peril clustering") {
    const auto panel = synthetic_panel(2, {{"Only", 4, 10, 0.8, 0, 0}});
    const auto post = fit(panel, {}, schedule(3000, 1000, 5, 2, 4));
    REQUIRE(post.chains.size() == 2);
    for (const auto& c : post.chains) {
        CHECK(c.size() == 500);
        for (const auto& d : c) {
            CHECK(d.severity_clusters == 1);
            CHECK(d.count_clusters == 1);
            CHECK(d.kappa[0] > 0.0);
            CHECK(d.theta[0] > 0.0);
        }
    }
    const auto s = cluster_summary(post);
    CHECK(s.occupancy[0][0] == 1.0);
    CHECK(s.modal[0] == 0);
}

TEST_CASE("stick weights lie in the simplex") {
    Rng rng = make_rng(3);
    const std::vector<int> occ{4, 2, 0, 1, 0, 0, 0, 0, 0, 0};
    for (int rep = 0; rep < 100; ++rep) {
        const auto w = detail::sample_sticks(occ, 9.0, rng);
        double total = 0.0;
        for (double v : w) {
            CHECK(v >= 0.0);
            total += v;
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("two planted severity clusters are recovered") {
    int hits = 0;
    for (std::uint64_t seed = 10; seed < 13; ++seed) {
        const auto data = harness::generate_synthetic(harness::two_cluster_spec(100 + seed));
        const auto post = fit(data.panel, {}, schedule(12000, 4000, seed + 1));
        const auto s = cluster_summary(post);
        hits += diagnostics::adjusted_rand_index(s.modal, data.severity_truth) == 1.0;
    }
    CHECK(hits >= 2);
}

TEST_CASE("identical perils share occupancy") {
    auto panel = synthetic_panel(8, {{"A", 3, 2, 0.6, 0, 0}, {"B", 8, 40, 0.6, 1, 0}, {"C", 8, 40, 0.6, 1, 0}});
    panel.counts[2] = panel.counts[1];
    panel.losses[2] = panel.losses[1];
    const auto post = fit(panel, {}, schedule(6000, 2000, 3));
    const auto s = cluster_summary(post);
    for (std::size_t h = 0; h < s.occupancy[1].size(); ++h) CHECK(std::abs(s.occupancy[1][h] - s.occupancy[2][h]) < 0.02);
    for (const auto& row : s.occupancy) CHECK(std::accumulate(row.begin(), row.end(), 0.0) == doctest::Approx(1.0));
}

TEST_CASE("permuting peril order permutes the posterior") {
    const std::vector<harness::SyntheticPeril> perils{
        {"A", 3, 2, 0.5, 0, 0}, {"B", 3, 2, 1.0, 0, 1}, {"C", 8, 40, 0.5, 1, 0}, {"D", 8, 40, 1.0, 1, 1}};
    const auto panel = synthetic_panel(21, perils);
    QuarterlyPanel rev = panel;
    std::reverse(rev.perils.begin(), rev.perils.end());
    std::reverse(rev.counts.begin(), rev.counts.end());
    std::reverse(rev.losses.begin(), rev.losses.end());
    const auto a = fit(panel, {}, schedule(8000, 2000, 9));
    const auto b = fit(rev, {}, schedule(8000, 2000, 9));
    const auto sa = cluster_summary(a), sb = cluster_summary(b);
    std::vector<int> modal_b(sb.modal.rbegin(), sb.modal.rend());
    CHECK(diagnostics::adjusted_rand_index(sa.modal, modal_b) == 1.0);
    for (std::size_t i = 0; i < 4; ++i) {
        auto mean = [](const std::vector<std::vector<double>>& t) { return diagnostics::detail::mean(t.front()); };
        const auto j = std::to_string(3 - i);
        CHECK(mean(a.trace("theta:" + std::to_string(i))) == doctest::Approx(mean(b.trace("theta:" + j))).epsilon(0.1));
        CHECK(mean(a.trace("alpha:" + std::to_string(i))) == doctest::Approx(mean(b.trace("alpha:" + j))).epsilon(0.1));
    }
}

TEST_CASE("severity kernel matches an independence-Metropolis reference") {
    const auto panel = synthetic_panel(31, {{"A", 2.5, 6.0, 0.9, 0, 0}}, 10);
    CrmHyperParams hyper;
    const BaseParams base{2.0, 1.0, 2.0, 0.5, 2.0, 2.0};

    detail::Sampler smp(panel, hyper);
    Rng rng = make_rng(1);
    smp.initialise(rng, false);
    smp.freeze_base = true;
    smp.s.base = base;
    std::vector<double> kernel;
    for (int it = 0; it < 2000 + 10000 * 5; ++it) {
        smp.severity_step(rng, it < 2000);
        if (it >= 2000 && (it - 2000) % 5 == 0) kernel.push_back(smp.s.kappa(0));
    }

    // reference: independence Metropolis on (log kappa, log theta) with a wide normal proposal
    // around the likelihood mode, on the target written from the full log-likelihood
    const auto mle = detail::severity_mle(detail::severity_stats(panel, 0));
    const double a0 = 0.0;
    auto target = [&](double lk, double lt) {
        const double k = std::exp(lk), t = std::exp(lt);
        const double kk[] = {k}, tt[] = {t}, aa[] = {a0};
        return log_likelihood(kk, tt, aa, 0.0, panel) + (base.zeta1) * lk - base.zeta2 * k + base.eta1 * lt - base.eta2 * t;
    };
    const double mk = std::log(mle.first), mt = std::log(mle.second), sd = 0.6;
    Rng ref_rng = make_rng(2);
    double ck = mk, ct = mt;
    auto logq = [&](double lk, double lt) { return -0.5 * ((lk - mk) * (lk - mk) + (lt - mt) * (lt - mt)) / (sd * sd); };
    double cur = target(ck, ct) - logq(ck, ct);
    std::vector<double> reference;
    for (int it = 0; it < 2000 + 10000 * 20; ++it) {
        const double pk = mk + sd * rnd::normal(ref_rng), pt = mt + sd * rnd::normal(ref_rng);
        const double prop = target(pk, pt) - logq(pk, pt);
        if (mcmc::accept(ref_rng, prop - cur)) {
            ck = pk;
            ct = pt;
            cur = prop;
        }
        if (it >= 2000 && (it - 2000) % 20 == 0) reference.push_back(std::exp(ck));
    }
    std::sort(reference.begin(), reference.end());
    std::sort(kernel.begin(), kernel.end());
    double d = 0.0;
    for (double x : reference) {
        const double fk = double(std::upper_bound(kernel.begin(), kernel.end(), x) - kernel.begin()) / double(kernel.size());
        const double fr = double(std::upper_bound(reference.begin(), reference.end(), x) - reference.begin()) / double(reference.size());
        d = std::max(d, std::abs(fk - fr));
    }
    CHECK(d < 0.05);
}

TEST_CASE("predictive counts") {
    Rng rng = make_rng(11);
    const std::vector<PredictiveDraw> zero{{0.0, 1.0, 1.0}, {0.0, 2.0, 2.0}};
    for (long n : predict_counts(zero, rng)) CHECK(n == 0);
    for (double s : predict_aggregate(zero, rng, 100)) CHECK(s == 0.0);

    const std::vector<PredictiveDraw> one(1'000'000, PredictiveDraw{4.0, 1.0, 1.0});
    const auto n = predict_counts(one, rng);
    std::vector<double> freq(12, 0.0);
    for (long v : n)
        if (v < 12) freq[std::size_t(v)] += 1.0;
    for (int k = 0; k < 12; ++k) {
        const double p = std::exp(-4.0 + k * std::log(4.0) - std::lgamma(k + 1.0));
        const double band = 3.0 * std::sqrt(p * (1.0 - p) / 1e6);
        CHECK(std::abs(freq[std::size_t(k)] / 1e6 - p) < band + 1e-12);
    }

    std::vector<PredictiveDraw> mix;
    for (int i = 0; i < 200000; ++i) mix.push_back({0.5 + (i % 4), 1.0, 1.0});
    const auto m = predict_counts(mix, rng);
    const double mean = std::accumulate(m.begin(), m.end(), 0.0) / double(m.size());
    const double se = std::sqrt((2.0 + 1.25) / double(m.size())); // Var = E[mu] + Var[mu]
    CHECK(std::abs(mean - 2.0) < 4.0 * se);
}

TEST_CASE("predictive aggregate mean matches the compound series") {
    Rng rng = make_rng(12);
    const std::vector<PredictiveDraw> d(1'000'000, PredictiveDraw{2.0, 5.0, 10.0});
    const auto s = predict_aggregate(d, rng);
    const double mean = std::accumulate(s.begin(), s.end(), 0.0) / double(s.size());
    double exact = 0.0;
    for (int n = 1; n < 80; ++n) exact += std::exp(-2.0 + n * std::log(2.0) - std::lgamma(n + 1.0)) * 10.0 / (5.0 * n - 1.0);
    CHECK(mean == doctest::Approx(exact).epsilon(0.01));
}

TEST_CASE("threshold probability limits, series agreement and monotonicity") {
    Rng rng = make_rng(13);
    const std::vector<PredictiveDraw> one{{1.0, 2.0, 3.0}};
    CHECK(threshold_probability(one, 1e300, rng, 10000).probability == 1.0);
    const auto low = threshold_probability(one, 1e-300, rng, 200000);
    CHECK(std::abs(low.probability - std::exp(-1.0)) < 4.0 * low.std_error);
    const double series = threshold_probability_series(one, 10.0);
    const auto mc = threshold_probability(one, 10.0, rng, 1'000'000);
    CHECK(std::abs(mc.probability - series) < 3.0 * mc.std_error);

    const auto sample = predict_aggregate(one, rng, 5000);
    double prev = 0.0;
    for (double dd : {0.5, 1.0, 2.0, 5.0, 10.0, 50.0}) {
        const double p = threshold_probability(sample, dd).probability;
        CHECK(p >= prev);
        prev = p;
    }
    CHECK_THROWS_AS(threshold_probability(sample, 0.0), InputError);
    CHECK_THROWS_AS(threshold_probability(std::vector<PredictiveDraw>{}, 1.0, rng), ConfigError);
}

TEST_CASE("cumulative loss paths are nondecreasing") {
    CrmDraw d;
    d.kappa = {2.0, 3.0};
    d.theta = {5.0, 1.0};
    d.alpha = {0.5, 1.0};
    d.beta = 0.05;
    Rng rng = make_rng(14);
    const std::size_t both[] = {0, 1};
    for (int rep = 0; rep < 50; ++rep) {
        const auto path = simulate_cumulative_losses(d, both, 3, 12, rng);
        CHECK(path.front() >= 0.0);
        CHECK(std::is_sorted(path.begin(), path.end()));
    }
}
