#pragma once

// Zero-coupon CAT bond with an industry-index trigger: payoff, present-value
// distributions and the risk-premium term structure.

#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "catbond/entropy.hpp"
#include "catbond/errors.hpp"
#include "catbond/matrix.hpp"

namespace catbond::pricing {

struct BondSpec {
    double face = 100.0;
    double recovery = 0.0;
    double threshold = 759.3; // currency-millions
    int maturity = 8;         // periods
    double period_length = 0.25;

    double maturity_years() const { return maturity * period_length; }

    void validate() const {
        if (!(face > 0.0)) throw ConfigError("bond: face must be positive");
        if (!(recovery >= 0.0 && recovery < 1.0)) throw ConfigError("bond: recovery must lie in [0, 1)");
        if (!(threshold > 0.0)) throw ConfigError("bond: threshold must be positive");
        if (maturity < 1) throw ConfigError("bond: maturity must be at least one period");
        if (!(period_length > 0.0)) throw ConfigError("bond: period length must be positive");
    }
};

/// K when the loss index stays at or below D, a*K otherwise.
inline double payoff(double loss, const BondSpec& spec) {
    return loss <= spec.threshold ? spec.face : spec.recovery * spec.face;
}

/// Per-period rates (N x T, period scale) and the loss index at maturity.
struct JointScenarios {
    Matrix rates;
    std::vector<double> losses;

    std::size_t size() const { return losses.size(); }
};

/// Full-horizon paths; truncating at T gives common random numbers across maturities.
struct ScenarioPaths {
    Matrix rates;
    Matrix cumulative_losses;

    JointScenarios at(int periods) const {
        if (periods < 1 || std::size_t(periods) > rates.cols())
            throw ConfigError("scenarios: maturity of " + std::to_string(periods) +
                              " periods exceeds the simulated horizon of " +
                              std::to_string(rates.cols()));
        JointScenarios out{Matrix(rates.rows(), std::size_t(periods)), std::vector<double>(rates.rows())};
        for (std::size_t i = 0; i < rates.rows(); ++i) {
            for (std::size_t t = 0; t < std::size_t(periods); ++t) out.rates(i, t) = rates(i, t);
            out.losses[i] = cumulative_losses(i, std::size_t(periods) - 1);
        }
        return out;
    }
};

struct Moments {
    double mean = 0.0;
    double sd = 0.0;
    double skewness = 0.0;
    double excess_kurtosis = 0.0;
};

inline Moments weighted_moments(std::span<const double> x, std::span<const double> w) {
    Moments m;
    if (x.empty()) return m;
    // centred on the first value, so a constant payoff prices exactly even when the weights
    // do not sum to one in floating point
    double shift = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) shift += w[i] * (x[i] - x[0]);
    m.mean = x[0] + shift;
    double m2 = 0.0, m3 = 0.0, m4 = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - m.mean;
        m2 += w[i] * d * d;
        m3 += w[i] * d * d * d;
        m4 += w[i] * d * d * d * d;
    }
    m.sd = std::sqrt(m2);
    if (m2 > 0.0) {
        m.skewness = m3 / std::pow(m2, 1.5);
        m.excess_kurtosis = m4 / (m2 * m2) - 3.0;
    }
    return m;
}

struct PresentValueDistribution {
    std::vector<double> values;
    std::vector<double> weights;
    Moments summary;
    double price = 0.0;
};

inline std::vector<double> uniform_weights(std::size_t n) {
    return std::vector<double>(n, 1.0 / double(n));
}

/// Discount factor exp(-sum of the first T per-period rates) per scenario.
inline std::vector<double> discount_factors(const Matrix& rates, int periods) {
    if (std::size_t(periods) > rates.cols())
        throw InputError("pricing: rate paths cover " + std::to_string(rates.cols()) +
                         " periods, bond needs " + std::to_string(periods));
    std::vector<double> out(rates.rows());
    for (std::size_t i = 0; i < rates.rows(); ++i) {
        double s = 0.0;
        for (int t = 0; t < periods; ++t) s += rates(i, std::size_t(t));
        out[i] = std::exp(-s);
    }
    return out;
}

inline PresentValueDistribution price(const JointScenarios& scenarios, const BondSpec& spec,
                                      std::span<const double> weights) {
    spec.validate();
    const std::size_t n = scenarios.size();
    if (n == 0) throw InputError("price: empty scenario set");
    if (scenarios.rates.rows() != n || weights.size() != n)
        throw InputError("price: " + std::to_string(weights.size()) + " weights and " +
                         std::to_string(scenarios.rates.rows()) + " rate paths for " +
                         std::to_string(n) + " loss scenarios");
    const auto disc = discount_factors(scenarios.rates, spec.maturity);
    PresentValueDistribution out;
    out.values.resize(n);
    out.weights.assign(weights.begin(), weights.end());
    for (std::size_t i = 0; i < n; ++i) {
        if (std::isnan(scenarios.losses[i]) || scenarios.losses[i] < 0.0)
            throw InputError("price: loss index must be a nonnegative number (scenario " +
                             std::to_string(i) + ")");
        out.values[i] = disc[i] * payoff(scenarios.losses[i], spec);
    }
    out.summary = weighted_moments(out.values, out.weights);
    out.price = out.summary.mean;
    return out;
}

inline PresentValueDistribution price(const JointScenarios& scenarios, const BondSpec& spec) {
    const auto w = uniform_weights(scenarios.size());
    return price(scenarios, spec, w);
}

/// Per-scenario discounted payoff alpha_i; the payoff is paid only at maturity.
inline std::vector<double> discounted_payoffs(const JointScenarios& scenarios, const BondSpec& spec) {
    const std::size_t n = scenarios.size();
    if (scenarios.rates.rows() != n || scenarios.rates.cols() < std::size_t(spec.maturity))
        throw InputError("discounted_payoffs: rate paths do not cover the bond's maturity");
    Matrix rates(n, std::size_t(spec.maturity)), pay(n, std::size_t(spec.maturity), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (int t = 0; t < spec.maturity; ++t) rates(i, std::size_t(t)) = scenarios.rates(i, std::size_t(t));
        pay(i, std::size_t(spec.maturity) - 1) = payoff(scenarios.losses[i], spec);
    }
    return entropy::discounted_payoffs(rates, pay);
}

/// Issue price with a hypothetical annualised spread delta: sum_i pi_i exp(-delta T) V_T.
inline double issue_price(const JointScenarios& scenarios, const BondSpec& spec, double delta) {
    double expected = 0.0;
    for (double l : scenarios.losses) expected += payoff(l, spec);
    expected /= double(scenarios.size());
    return std::exp(-delta * spec.maturity_years()) * expected;
}

/// Risk-neutral weights at a given market price of risk.
struct FixedLambda {
    double lambda = 0.0;
};

/// Calibrate at every maturity to the issue price implied by a spread delta0.
struct SpreadCalibrated {
    double delta0 = 0.025;
};

using RiskNeutralRule = std::variant<FixedLambda, SpreadCalibrated>;

struct PremiumPoint {
    int periods = 0;
    double maturity_years = 0.0;
    double delta = 0.0;
    double residual = 0.0;
    double lambda = 0.0;
    double physical_payoff = 0.0;   // E^P[V_T]
    double risk_neutral_price = 0.0;
};

struct PremiumCurve {
    std::vector<PremiumPoint> points;
};

inline constexpr double premium_tolerance = 1e-8;

/// delta solving sum_t [E^Q(exp(-sum r) V_t) - exp(-delta t) E^P(V_t)] = 0 with V_t = 0 before T.
inline PremiumPoint solve_premium(const JointScenarios& scenarios, const BondSpec& spec,
                                  std::span<const double> rn_weights) {
    const auto alpha = discounted_payoffs(scenarios, spec);
    if (rn_weights.size() != alpha.size()) throw InputError("premium: weight count mismatch");
    PremiumPoint p;
    p.periods = spec.maturity;
    p.maturity_years = spec.maturity_years();
    for (double l : scenarios.losses) p.physical_payoff += payoff(l, spec);
    p.physical_payoff /= double(alpha.size());
    p.risk_neutral_price = entropy::weighted_mean(alpha, rn_weights);
    if (!(p.physical_payoff > 0.0))
        throw NumericalError("premium: expected physical payoff is zero at T = " +
                             std::to_string(p.maturity_years) + ", spread undefined");

    auto residual = [&](double delta) {
        double r = 0.0;
        for (int t = 1; t <= spec.maturity; ++t) {
            const double eq = t == spec.maturity ? p.risk_neutral_price : 0.0;
            const double ep = t == spec.maturity ? p.physical_payoff : 0.0;
            r += eq - std::exp(-delta * t * spec.period_length) * ep;
        }
        return r;
    };
    double lo = -0.5, hi = 1.0;
    double flo = residual(lo), fhi = residual(hi);
    if (!(flo <= 0.0 && fhi >= 0.0))
        throw NumericalError("premium: no sign change on [-0.5, 1.0] at T = " +
                             std::to_string(p.maturity_years) + " (residuals " + std::to_string(flo) +
                             ", " + std::to_string(fhi) + ")");
    double mid = 0.5 * (lo + hi), fmid = residual(mid);
    for (int it = 0; it < 200; ++it) {
        mid = 0.5 * (lo + hi);
        fmid = residual(mid);
        if (std::abs(fmid) < premium_tolerance * 1e-4 || hi - lo < 1e-15) break;
        if (fmid < 0.0) lo = mid; else hi = mid;
    }
    if (!(std::abs(fmid) < premium_tolerance))
        throw NumericalError("premium: bisection stalled with residual " + std::to_string(fmid));
    p.delta = mid;
    p.residual = std::abs(fmid);
    return p;
}

using ScenarioFactory = std::function<JointScenarios(int periods)>;

inline PremiumCurve premium_curve(const ScenarioFactory& scenarios_for, const BondSpec& spec,
                                  std::span<const int> maturities, const RiskNeutralRule& rule) {
    spec.validate();
    PremiumCurve curve;
    for (int periods : maturities) {
        BondSpec s = spec;
        s.maturity = periods;
        s.validate();
        const auto sc = scenarios_for(periods);
        const auto alpha = discounted_payoffs(sc, s);
        entropy::RiskNeutralWeights w;
        if (const auto* fixed = std::get_if<FixedLambda>(&rule)) {
            w = entropy::risk_neutral_weights(alpha, fixed->lambda);
        } else {
            const double p0 = issue_price(sc, s, std::get<SpreadCalibrated>(rule).delta0);
            w = entropy::calibrate(alpha, p0);
        }
        auto point = solve_premium(sc, s, w.weights);
        point.lambda = w.lambda;
        curve.points.push_back(point);
    }
    return curve;
}

} // namespace catbond::pricing
