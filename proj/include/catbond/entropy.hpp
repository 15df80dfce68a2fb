#pragma once

// Minimum relative entropy change of measure from uniform physical weights to
// risk-neutral weights under a single price constraint.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "catbond/errors.hpp"
#include "catbond/matrix.hpp"

namespace catbond::entropy {

/// Discounted payoff per scenario with uniform physical weights 1/N.
struct ScenarioSet {
    std::vector<double> alpha;
};

struct RiskNeutralWeights {
    std::vector<double> weights;
    double lambda = 0.0;
    double constraint_residual = 0.0;
};

/// alpha_i = sum_t exp(-sum_{u<=t} r_u) V_t, with rates already at period scale.
inline std::vector<double> discounted_payoffs(const Matrix& rate_paths, const Matrix& payoff_paths) {
    if (rate_paths.rows() != payoff_paths.rows() || rate_paths.cols() != payoff_paths.cols())
        throw InputError("discounted_payoffs: rate and payoff paths are not conformable (" +
                         std::to_string(rate_paths.rows()) + "x" + std::to_string(rate_paths.cols()) +
                         " vs " + std::to_string(payoff_paths.rows()) + "x" +
                         std::to_string(payoff_paths.cols()) + ")");
    std::vector<double> out(rate_paths.rows(), 0.0);
    for (std::size_t i = 0; i < rate_paths.rows(); ++i) {
        double cum = 0.0, a = 0.0;
        for (std::size_t t = 0; t < rate_paths.cols(); ++t) {
            const double r = rate_paths(i, t), v = payoff_paths(i, t);
            if (std::isnan(r) || std::isnan(v))
                throw InputError("discounted_payoffs: NaN in scenario " + std::to_string(i) +
                                 ", period " + std::to_string(t + 1));
            cum += r;
            a += std::exp(-cum) * v;
        }
        out[i] = a;
    }
    return out;
}

namespace detail {

// Tilted mean of (alpha - p0) and its derivative (tilted variance) at lambda.
struct Tilt {
    double g = 0.0;
    double dg = 0.0;
};

inline Tilt tilt(std::span<const double> alpha, double p0, double lambda) {
    double gamma = -std::numeric_limits<double>::infinity();
    for (double a : alpha) gamma = std::max(gamma, lambda * (a - p0));
    double z = 0.0, m1 = 0.0, m2 = 0.0;
    for (double a : alpha) {
        const double d = a - p0;
        const double w = std::exp(lambda * d - gamma);
        z += w;
        m1 += w * d;
        m2 += w * d * d;
    }
    m1 /= z;
    m2 /= z;
    return {m1, std::max(m2 - m1 * m1, 0.0)};
}

inline void check_finite(std::span<const double> alpha) {
    if (alpha.empty()) throw InputError("entropy: empty scenario set");
    for (std::size_t i = 0; i < alpha.size(); ++i)
        if (!std::isfinite(alpha[i]))
            throw InputError("entropy: non-finite discounted payoff at scenario " + std::to_string(i));
}

} // namespace detail

/// Root of g(lambda) = sum pi*_i(lambda) (alpha_i - P0); the minimiser of
/// f(lambda) = sum exp(lambda (alpha_i - P0)).
inline double solve_lambda(std::span<const double> alpha, double p0) {
    detail::check_finite(alpha);
    if (!std::isfinite(p0)) throw InputError("solve_lambda: P0 must be finite");
    const auto [lo_it, hi_it] = std::minmax_element(alpha.begin(), alpha.end());
    const double lo = *lo_it, hi = *hi_it;
    if (lo == hi) {
        if (lo == p0) return 0.0;
        throw NumericalError("solve_lambda: price not attainable (constant payoffs " +
                             std::to_string(lo) + " != P0 " + std::to_string(p0) + ")");
    }
    if (!(lo < p0 && p0 < hi))
        throw NumericalError("solve_lambda: price not attainable, P0 = " + std::to_string(p0) +
                             " outside (" + std::to_string(lo) + ", " + std::to_string(hi) + ")");

    const double scale = std::max(std::abs(p0), std::max(hi - p0, p0 - lo));
    const double tol = 1e-14 * scale;
    if (std::abs(detail::tilt(alpha, p0, 0.0).g) <= tol) return 0.0;

    double a = -1.0, b = 1.0;
    for (int k = 0; k < 60 && detail::tilt(alpha, p0, a).g > 0.0; ++k) a *= 2.0;
    for (int k = 0; k < 60 && detail::tilt(alpha, p0, b).g < 0.0; ++k) b *= 2.0;
    if (detail::tilt(alpha, p0, a).g > 0.0 || detail::tilt(alpha, p0, b).g < 0.0)
        throw NumericalError("solve_lambda: no sign change after 60 bracket doublings");

    double x = std::clamp(0.0, a, b);
    for (int it = 0; it < 300; ++it) {
        const auto t = detail::tilt(alpha, p0, x);
        if (std::abs(t.g) <= tol) return x;
        if (t.g < 0.0) a = x; else b = x;
        double next = t.dg > 0.0 ? x - t.g / t.dg : 0.5 * (a + b);
        if (!(next > a && next < b)) next = 0.5 * (a + b);
        if (next == x || b - a <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(x)))
            return next;
        x = next;
    }
    return x;
}

/// pi*_i = exp(lambda alpha_i - G) / sum_j exp(lambda alpha_j - G), G = max_i lambda alpha_i.
inline RiskNeutralWeights risk_neutral_weights(std::span<const double> alpha, double lambda) {
    detail::check_finite(alpha);
    if (!std::isfinite(lambda)) throw InputError("risk_neutral_weights: lambda must be finite");
    double gamma = -std::numeric_limits<double>::infinity();
    for (double a : alpha) gamma = std::max(gamma, lambda * a);
    RiskNeutralWeights out;
    out.lambda = lambda;
    out.weights.resize(alpha.size());
    double z = 0.0;
    for (std::size_t i = 0; i < alpha.size(); ++i) {
        out.weights[i] = std::exp(lambda * alpha[i] - gamma);
        z += out.weights[i];
    }
    for (double& w : out.weights) w /= z;
    return out;
}

inline double weighted_mean(std::span<const double> values, std::span<const double> weights) {
    double s = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) s += weights[i] * values[i];
    return s;
}

inline RiskNeutralWeights calibrate(std::span<const double> alpha, double p0) {
    auto out = risk_neutral_weights(alpha, solve_lambda(alpha, p0));
    out.constraint_residual = std::abs(weighted_mean(alpha, out.weights) - p0);
    const double rel = out.constraint_residual / (p0 != 0.0 ? std::abs(p0) : 1.0);
    if (!(rel < 1e-8))
        throw NumericalError("calibrate: constraint residual " + std::to_string(rel) +
                             " (relative) exceeds 1e-8");
    return out;
}

inline RiskNeutralWeights calibrate(const ScenarioSet& scenarios, double p0) {
    return calibrate(std::span<const double>(scenarios.alpha), p0);
}

} // namespace catbond::entropy
