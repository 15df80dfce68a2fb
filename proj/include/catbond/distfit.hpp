#pragma once

// Goodness-of-fit testing and information-criterion ranking for claim severities.

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "catbond/errors.hpp"
#include "catbond/optimize.hpp"
#include "catbond/random.hpp"

namespace catbond::distfit {

/// Enum order doubles as the deterministic tie-break order in rank_models.
enum class Family { weibull, inverse_gamma, pareto, lognormal, gamma };

inline constexpr std::array<Family, 5> all_families{Family::weibull, Family::inverse_gamma,
                                                    Family::pareto, Family::lognormal,
                                                    Family::gamma};

inline std::string_view name(Family f) {
    switch (f) {
    case Family::weibull: return "Weibull";
    case Family::inverse_gamma: return "InverseGamma";
    case Family::pareto: return "Pareto";
    case Family::lognormal: return "LogNormal";
    case Family::gamma: return "Gamma";
    }
    return "?";
}

inline Family parse_family(std::string_view s) {
    for (Family f : all_families)
        if (name(f) == s) return f;
    throw InputError("unknown distribution family '" + std::string(s) + "'");
}

/// Two-parameter positive-support severity distribution.
///
/// Parameterisations (both parameters strictly positive):
///   Weibull       (shape k, scale s)        F = 1 - exp(-(x/s)^k)
///   InverseGamma  (shape kappa, scale theta) F = Q(kappa, theta/x)
///   Pareto        (shape a, scale s)        Lomax form, F = 1 - (1 + x/s)^-a
///   LogNormal     (median m, log-sd sigma)  F = Phi((ln x - ln m)/sigma)
///   Gamma         (shape k, scale s)        F = P(k, x/s)
struct CandidateDistribution {
    Family family = Family::inverse_gamma;
    std::array<double, 2> params{1.0, 1.0};

    bool valid() const {
        return std::isfinite(params[0]) && std::isfinite(params[1]) && params[0] > 0.0 &&
               params[1] > 0.0;
    }

    void validate() const {
        if (!valid())
            throw InputError("invalid parameters for " + std::string(name(family)) +
                             ": both must be finite and positive");
    }

    double cdf(double x) const {
        if (x <= 0.0) return 0.0;
        const auto [p0, p1] = params;
        switch (family) {
        case Family::weibull: return -std::expm1(-std::pow(x / p1, p0));
        case Family::inverse_gamma: return boost::math::gamma_q(p0, p1 / x);
        case Family::pareto: return -std::expm1(-p0 * std::log1p(x / p1));
        case Family::lognormal:
            return 0.5 * std::erfc(-(std::log(x) - std::log(p0)) / (p1 * std::numbers::sqrt2));
        case Family::gamma: return boost::math::gamma_p(p0, x / p1);
        }
        return 0.0;
    }

    double log_pdf(double x) const {
        if (x <= 0.0) return -std::numeric_limits<double>::infinity();
        const auto [p0, p1] = params;
        const double lx = std::log(x);
        switch (family) {
        case Family::weibull:
            return std::log(p0 / p1) + (p0 - 1.0) * (lx - std::log(p1)) - std::pow(x / p1, p0);
        case Family::inverse_gamma:
            return p0 * std::log(p1) - boost::math::lgamma(p0) - (p0 + 1.0) * lx - p1 / x;
        case Family::pareto: return std::log(p0 / p1) - (p0 + 1.0) * std::log1p(x / p1);
        case Family::lognormal: {
            const double z = (lx - std::log(p0)) / p1;
            return -lx - std::log(p1) - 0.5 * std::log(2.0 * std::numbers::pi) - 0.5 * z * z;
        }
        case Family::gamma:
            return -boost::math::lgamma(p0) - p0 * std::log(p1) + (p0 - 1.0) * lx - x / p1;
        }
        return 0.0;
    }
};

struct TestResult {
    double statistic = 0.0;
    double p_value = 1.0;
};

struct FitReport {
    Family family = Family::inverse_gamma;
    std::array<double, 2> mle_params{0.0, 0.0};
    double log_likelihood = 0.0;
    double ks_stat = 0.0;
    double ks_pvalue = 0.0;
    double ad_stat = 0.0;
    double ad_pvalue = 0.0;
    double aic = 0.0;
    double bic = 0.0;
    bool converged = false;
};

namespace detail {

inline constexpr double prob_floor = 1e-12;

inline double clamp_prob(double p) { return std::clamp(p, prob_floor, 1.0 - prob_floor); }

template <class Cdf>
std::vector<double> checked_cdf(std::span<const double> sorted, Cdf&& cdf) {
    if (sorted.empty()) throw InputError("goodness-of-fit test needs a nonempty sample");
    std::vector<double> g(sorted.size());
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (i > 0 && sorted[i] < sorted[i - 1])
            throw InputError("goodness-of-fit sample must be sorted ascending");
        const double v = cdf(sorted[i]);
        if (!(v >= 0.0 && v <= 1.0))
            throw InputError("CDF evaluation outside support at x = " + std::to_string(sorted[i]));
        g[i] = v;
    }
    return g;
}

inline void require_positive(std::span<const double> sorted) {
    for (double x : sorted)
        if (!(x > 0.0))
            throw InputError("sample value " + std::to_string(x) +
                             " lies outside the positive support");
}

// Marsaglia & Marsaglia (2004) piecewise approximations for the A-D distribution.
inline double ad_asymptotic_cdf(double z) {
    if (z <= 0.0) return 0.0;
    if (z < 2.0)
        return std::exp(-1.2337141 / z) / std::sqrt(z) *
               (2.00012 +
                (0.247105 - (0.0649821 - (0.0347962 - (0.011672 - 0.00168691 * z) * z) * z) * z) *
                    z);
    return std::exp(-std::exp(
        1.0776 - (2.30695 - (0.43424 - (0.082433 - (0.008056 - 0.0003146 * z) * z) * z) * z) * z));
}

inline double ad_finite_n_correction(double n, double x) {
    if (x > 0.8)
        return (-130.2137 +
                (745.2337 - (1705.091 - (1950.646 - (1116.360 - 255.7844 * x) * x) * x) * x) * x) /
               n;
    const double c = 0.01265 + 0.1757 / n;
    if (x < c) {
        double t = x / c;
        t = std::sqrt(t) * (1.0 - t) * (49.0 * t - 102.0);
        return t * (0.0037 / (n * n) + 0.00078 / n + 0.00006) / n;
    }
    double t = (x - c) / (0.8 - c);
    t = -0.00022633 + (6.54034 - (14.6538 - (14.458 - (8.259 - 1.91864 * t) * t) * t) * t) * t;
    return t * (0.04213 / n + 0.01365 / (n * n)) / n;
}

} // namespace detail

/// Survival function of the limiting Kolmogorov distribution, P(K > x).
inline double kolmogorov_survival(double x) {
    if (x <= 0.0) return 1.0;
    double s = 0.0;
    if (x < 1.18) {
        // Theta-function form; the alternating series converges poorly for small x.
        const double c = std::numbers::pi * std::numbers::pi / (8.0 * x * x);
        for (int k = 1; k <= 100; ++k) s += std::exp(-double((2 * k - 1) * (2 * k - 1)) * c);
        return std::clamp(1.0 - std::sqrt(2.0 * std::numbers::pi) / x * s, 0.0, 1.0);
    }
    for (int k = 1; k <= 100; ++k)
        s += ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * double(k) * double(k) * x * x);
    return std::clamp(2.0 * s, 0.0, 1.0);
}

/// P-value of A^2 for a fully specified null distribution and sample size n.
inline double anderson_darling_pvalue(double a2, std::size_t n) {
    const double x = detail::ad_asymptotic_cdf(a2);
    const double cdf = x + detail::ad_finite_n_correction(double(n), x);
    return std::clamp(1.0 - cdf, 0.0, 1.0);
}

/// One-sample Kolmogorov-Smirnov test against an arbitrary CDF.
template <class Cdf>
    requires std::invocable<Cdf, double>
TestResult ks_test(std::span<const double> sorted, Cdf&& cdf) {
    const auto g = detail::checked_cdf(sorted, cdf);
    const double n = double(g.size());
    double d = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        d = std::max(d, double(i + 1) / n - g[i]);
        d = std::max(d, g[i] - double(i) / n);
    }
    return {d, kolmogorov_survival(std::sqrt(n) * d)};
}

inline TestResult ks_test(std::span<const double> sorted, const CandidateDistribution& dist) {
    dist.validate();
    detail::require_positive(sorted);
    return ks_test(sorted, [&](double x) { return dist.cdf(x); });
}

/// Anderson-Darling test; CDF values are clamped to [1e-12, 1-1e-12] inside the logs.
template <class Cdf>
    requires std::invocable<Cdf, double>
TestResult ad_test(std::span<const double> sorted, Cdf&& cdf) {
    const auto g = detail::checked_cdf(sorted, cdf);
    const std::size_t n = g.size();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double lo = detail::clamp_prob(g[i]);
        const double hi = detail::clamp_prob(g[n - 1 - i]);
        s += double(2 * i + 1) * (std::log(lo) + std::log1p(-hi));
    }
    const double a2 = -double(n) - s / double(n);
    return {a2, anderson_darling_pvalue(a2, n)};
}

inline TestResult ad_test(std::span<const double> sorted, const CandidateDistribution& dist) {
    dist.validate();
    detail::require_positive(sorted);
    return ad_test(sorted, [&](double x) { return dist.cdf(x); });
}

inline double log_likelihood(std::span<const double> sample, const CandidateDistribution& dist) {
    double ll = 0.0;
    for (double x : sample) ll += dist.log_pdf(x);
    return ll;
}

/// Moment-matched starting parameters, used to seed the MLE restarts.
inline std::array<double, 2> moment_start(Family family, std::span<const double> sample) {
    const double n = double(sample.size());
    double m = 0.0, ml = 0.0;
    for (double x : sample) {
        m += x;
        ml += std::log(x);
    }
    m /= n;
    ml /= n;
    double v = 0.0, vl = 0.0;
    for (double x : sample) {
        v += (x - m) * (x - m);
        vl += (std::log(x) - ml) * (std::log(x) - ml);
    }
    v = std::max(v / std::max(1.0, n - 1.0), 1e-12 * m * m + 1e-300);
    const double sl = std::sqrt(std::max(vl / std::max(1.0, n - 1.0), 1e-12));
    const double cv = std::sqrt(v) / m;

    switch (family) {
    case Family::weibull: {
        const double k = std::clamp(std::pow(cv, -1.086), 0.05, 50.0);
        return {k, m / std::tgamma(1.0 + 1.0 / k)};
    }
    case Family::inverse_gamma: {
        const double kappa = m * m / v + 2.0;
        return {kappa, m * (kappa - 1.0)};
    }
    case Family::pareto: {
        const double a = v > m * m ? 2.0 * v / (v - m * m) : 3.0;
        return {a, m * (a - 1.0)};
    }
    case Family::lognormal: return {std::exp(ml), sl};
    case Family::gamma: return {m * m / v, v / m};
    }
    return {1.0, 1.0};
}

struct FitOptions {
    int restarts = 10;
    optimize::NelderMeadOptions nelder_mead{};
};

struct MleFit {
    CandidateDistribution dist;
    double log_likelihood = 0.0;
    bool converged = false;
};

/// Maximum likelihood by Nelder-Mead on log-parameters from moment-matched, jittered starts.
inline MleFit fit_mle(Family family, std::span<const double> sample, std::uint64_t seed = 0,
                      const FitOptions& opt = {}) {
    const auto start = moment_start(family, sample);
    auto nll = [&](const std::vector<double>& u) {
        CandidateDistribution d{family, {std::exp(u[0]), std::exp(u[1])}};
        if (!d.valid()) return std::numeric_limits<double>::infinity();
        return -log_likelihood(sample, d);
    };
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(family) + 1);
    MleFit best;
    best.dist.family = family;
    double best_value = std::numeric_limits<double>::infinity();
    for (int r = 0; r < std::max(1, opt.restarts); ++r) {
        std::vector<double> u{std::log(start[0]), std::log(start[1])};
        if (r > 0) {
            u[0] += 0.75 * rnd::normal(rng);
            u[1] += 0.75 * rnd::normal(rng);
        }
        if (!std::isfinite(u[0]) || !std::isfinite(u[1])) u = {0.0, 0.0};
        const auto res = optimize::nelder_mead(nll, u, opt.nelder_mead);
        if (res.converged && res.value < best_value) {
            best_value = res.value;
            best.dist.params = {std::exp(res.x[0]), std::exp(res.x[1])};
            best.converged = true;
        }
    }
    best.log_likelihood = best.converged ? -best_value : -std::numeric_limits<double>::infinity();
    if (best.converged && !(std::isfinite(best.log_likelihood) && best.dist.valid()))
        best.converged = false;
    return best;
}

/// Fits every family, attaches K-S / A-D / AIC / BIC, and orders by AIC ascending.
/// Ties break by enum order; families whose MLE failed follow the converged ones.
inline std::vector<FitReport> rank_models(std::span<const double> sample,
                                          std::span<const Family> families,
                                          std::uint64_t seed = 0, const FitOptions& opt = {}) {
    if (families.empty()) throw InputError("rank_models needs at least one family");
    constexpr std::size_t k = 2;
    if (sample.size() < 2 * k)
        throw InputError("rank_models needs at least " + std::to_string(2 * k) + " observations");
    std::vector<double> sorted(sample.begin(), sample.end());
    std::sort(sorted.begin(), sorted.end());
    detail::require_positive(sorted);

    const double n = double(sorted.size());
    std::vector<FitReport> reports;
    for (Family f : families) {
        FitReport rep;
        rep.family = f;
        const auto fit = fit_mle(f, sorted, seed, opt);
        rep.converged = fit.converged;
        if (fit.converged) {
            rep.mle_params = fit.dist.params;
            rep.log_likelihood = fit.log_likelihood;
            const auto ks = ks_test(sorted, fit.dist);
            const auto ad = ad_test(sorted, fit.dist);
            rep.ks_stat = ks.statistic;
            rep.ks_pvalue = ks.p_value;
            rep.ad_stat = ad.statistic;
            rep.ad_pvalue = ad.p_value;
            rep.aic = 2.0 * double(k) - 2.0 * rep.log_likelihood;
            rep.bic = double(k) * std::log(n) - 2.0 * rep.log_likelihood;
        } else {
            rep.log_likelihood = -std::numeric_limits<double>::infinity();
            rep.aic = rep.bic = std::numeric_limits<double>::infinity();
        }
        reports.push_back(rep);
    }
    std::stable_sort(reports.begin(), reports.end(), [](const FitReport& a, const FitReport& b) {
        if (a.converged != b.converged) return a.converged;
        if (a.converged && a.aic != b.aic) return a.aic < b.aic;
        return static_cast<int>(a.family) < static_cast<int>(b.family);
    });
    return reports;
}

inline std::vector<FitReport> rank_models(std::span<const double> sample, std::uint64_t seed = 0,
                                          const FitOptions& opt = {}) {
    return rank_models(sample, all_families, seed, opt);
}

} // namespace catbond::distfit
