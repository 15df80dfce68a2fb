#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "catbond/entropy.hpp"
#include "catbond/random.hpp"
#include "oracles.hpp"

using namespace catbond;
using namespace catbond::entropy;

TEST_CASE("discounted payoffs") {
    Matrix zero(1, 3), pay(1, 3);
    pay(0, 2) = 100.0;
    CHECK(discounted_payoffs(zero, pay)[0] == 100.0);
    Matrix flat(1, 2, 0.01), pay2(1, 2);
    pay2(0, 1) = 100.0;
    CHECK(discounted_payoffs(flat, pay2)[0] == doctest::Approx(98.0198673306755).epsilon(1e-13));
    CHECK(discounted_payoffs(flat, Matrix(1, 2))[0] == 0.0);
    Matrix nan_rates(1, 2, std::nan(""));
    CHECK_THROWS_AS(discounted_payoffs(nan_rates, pay2), InputError);
    CHECK_THROWS_AS(discounted_payoffs(Matrix(2, 2), pay2), InputError);
}

TEST_CASE("two-point closed form") {
    const std::vector<double> a{1.0, 2.0};
    const auto w = calibrate(a, 1.25);
    CHECK(std::abs(w.lambda + std::log(3.0)) < 1e-10);
    CHECK(std::abs(w.weights[0] - 0.75) < 1e-10);
    CHECK(std::abs(w.weights[1] - 0.25) < 1e-10);
    CHECK(w.constraint_residual < 1e-12);
    CHECK(solve_lambda(a, 1.5) == 0.0);
    const auto r = risk_neutral_weights(a, -std::log(3.0));
    CHECK(r.weights[0] == doctest::Approx(0.75).epsilon(1e-14));
}

TEST_CASE("constant and unattainable prices") {
    const std::vector<double> c{5.0, 5.0, 5.0};
    CHECK(solve_lambda(c, 5.0) == 0.0);
    CHECK_THROWS_AS(solve_lambda(c, 4.0), NumericalError);
    const std::vector<double> a{1.0, 2.0, 3.0};
    CHECK_THROWS_AS(solve_lambda(a, 1.0), NumericalError);
    CHECK_THROWS_AS(solve_lambda(a, 3.0), NumericalError);
    CHECK_THROWS_AS(solve_lambda(a, 0.5), NumericalError);
    CHECK_THROWS_AS(solve_lambda(std::vector<double>{}, 1.0), InputError);
    CHECK_THROWS_AS(solve_lambda(std::vector<double>{1.0, INFINITY}, 1.0), InputError);
}

TEST_CASE("weights stay finite for large payoffs") {
    std::vector<double> a;
    for (int i = 0; i < 100; ++i) a.push_back(1e4 + 37.0 * i);
    for (double l : {1.0, -1.0}) {
        const auto w = risk_neutral_weights(a, l);
        const double s = std::accumulate(w.weights.begin(), w.weights.end(), 0.0);
        CHECK(std::abs(s - 1.0) < 1e-12);
        for (double v : w.weights) CHECK(std::isfinite(v));
    }
    const auto u = risk_neutral_weights(a, 0.0);
    for (double v : u.weights) CHECK(v == doctest::Approx(0.01));
}

TEST_CASE("Newton solution agrees with a grid search") {
    Rng rng = make_rng(1);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> a(10000);
        for (double& v : a) v = std::exp(4.0 + 0.3 * rnd::normal(rng));
        const double p0 = 0.98 * std::accumulate(a.begin(), a.end(), 0.0) / double(a.size());
        const auto w = calibrate(a, p0);
        CHECK(std::abs(w.lambda - oracle::entropy_lambda_grid(a, p0)) < 1e-6);
        CHECK(w.constraint_residual / p0 < 1e-8);
    }
}

TEST_CASE("tilted price is increasing in lambda") {
    const std::vector<double> a{0.0, 40.0, 95.0, 100.0, 100.0};
    double prev = -1.0;
    for (double l = -0.5; l <= 0.5; l += 0.01) {
        const auto w = risk_neutral_weights(a, l);
        const double m = weighted_mean(a, w.weights);
        CHECK(m > prev);
        prev = m;
    }
}

TEST_CASE("shift covariance") {
    const std::vector<double> a{3.0, 7.0, 8.0, 20.0, 1.0};
    std::vector<double> b(a);
    for (double& v : b) v += 1000.0;
    const auto wa = calibrate(a, 6.0), wb = calibrate(b, 1006.0);
    CHECK(wa.lambda == doctest::Approx(wb.lambda).epsilon(1e-9));
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(wa.weights[i] == doctest::Approx(wb.weights[i]).epsilon(1e-9));
}

TEST_CASE("stationarity equals the price constraint at the solution") {
    Rng rng = make_rng(2);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<double> a(200);
        for (double& v : a) v = rnd::uniform(rng) < 0.1 ? 0.0 : 90.0 + 10.0 * rnd::uniform(rng);
        const double p0 = 85.0 + 5.0 * rnd::uniform(rng);
        const double l = solve_lambda(a, p0);
        // d/dlambda sum exp(lambda (a - p0)) = sum (a - p0) exp(lambda (a - p0))
        double num = 0.0, den = 0.0;
        for (double v : a) {
            num += (v - p0) * std::exp(l * (v - p0));
            den += std::exp(l * (v - p0));
        }
        CHECK(std::abs(num / den) / p0 < 1e-8);
        const auto w = calibrate(ScenarioSet{a}, p0);
        CHECK(w.constraint_residual / p0 < 1e-8);
    }
}
