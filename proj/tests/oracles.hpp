#pragma once

// Independent reference computations shared by the unit tests and the acceptance binary.
// Nothing here calls the library routine it is used to check.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "catbond/cir.hpp"
#include "catbond/random.hpp"

namespace oracle {

/// Plain Euler path, one step per observation.
inline std::vector<double> euler_path(double alpha, double beta, double sigma2, double r0, std::size_t steps, double dt,
                                      std::uint64_t seed) {
    catbond::Rng rng = catbond::make_rng(seed, 404);
    std::normal_distribution<double> z;
    std::vector<double> x{r0};
    for (std::size_t k = 0; k < steps; ++k) {
        const double r = x.back();
        x.push_back(std::max(r + (alpha - beta * r) * dt + std::sqrt(sigma2 * dt * r) * z(rng), 1e-8));
    }
    return x;
}

/// Log of prior times Euler likelihood in (alpha, beta) at fixed sigma^2, up to a constant.
inline double psi_log_target(std::span<const double> x, double alpha, double beta, double sigma2, double dt,
                             const catbond::cir::CirHyper& h) {
    double lp = -0.5 * h.precision0[0] * (alpha - h.mu0[0]) * (alpha - h.mu0[0]) -
                0.5 * h.precision0[1] * (beta - h.mu0[1]) * (beta - h.mu0[1]);
    for (std::size_t j = 0; j + 1 < x.size(); ++j) {
        const double e = x[j + 1] - x[j] - (alpha - beta * x[j]) * dt;
        lp -= e * e / (2.0 * sigma2 * dt * x[j]);
    }
    return lp;
}

struct Gaussian2 {
    std::array<double, 2> mean{};
    std::array<std::array<double, 2>, 2> cov{};
};

/// The target is exactly quadratic, so central differences with unit steps recover its
/// gradient at the origin and its Hessian without truncation error.
inline Gaussian2 psi_moments(std::span<const double> x, double sigma2, double dt, const catbond::cir::CirHyper& h) {
    auto f = [&](double a, double b) { return psi_log_target(x, a, b, sigma2, dt, h); };
    const double g0 = 0.5 * (f(1, 0) - f(-1, 0)), g1 = 0.5 * (f(0, 1) - f(0, -1));
    const double h00 = f(1, 0) - 2 * f(0, 0) + f(-1, 0);
    const double h11 = f(0, 1) - 2 * f(0, 0) + f(0, -1);
    const double h01 = 0.25 * (f(1, 1) - f(1, -1) - f(-1, 1) + f(-1, -1));
    // precision = -Hessian, mean = precision^-1 gradient
    const double p00 = -h00, p11 = -h11, p01 = -h01;
    const double det = p00 * p11 - p01 * p01;
    Gaussian2 g;
    g.cov = {{{p11 / det, -p01 / det}, {-p01 / det, p00 / det}}};
    g.mean = {g.cov[0][0] * g0 + g.cov[0][1] * g1, g.cov[1][0] * g0 + g.cov[1][1] * g1};
    return g;
}

/// Inverse-gamma conditional of sigma^2 from the raw residuals: (shape, scale).
inline std::array<double, 2> sigma2_shape_scale(std::span<const double> x, double alpha, double beta, double dt,
                                                const catbond::cir::CirHyper& h) {
    double ss = 0.0;
    for (std::size_t j = 0; j + 1 < x.size(); ++j) {
        const double e = x[j + 1] - x[j] - (alpha - beta * x[j]) * dt;
        ss += e * e / x[j];
    }
    return {h.upsilon0 + 0.5 * double(x.size() - 1), h.beta0 + ss / (2.0 * dt)};
}

struct SampleMoments {
    double mean = 0.0, var = 0.0, se_mean = 0.0, se_var = 0.0;
};

inline SampleMoments moments(std::span<const double> v) {
    SampleMoments m;
    const double n = double(v.size());
    for (double x : v) m.mean += x;
    m.mean /= n;
    double m2 = 0.0, m4 = 0.0;
    for (double x : v) {
        const double d = (x - m.mean) * (x - m.mean);
        m2 += d;
        m4 += d * d;
    }
    m.var = m2 / (n - 1.0);
    m.se_mean = std::sqrt(m.var / n);
    m.se_var = std::sqrt(std::max(m4 / n - (m2 / n) * (m2 / n), 0.0) / n);
    return m;
}

inline double sample_covariance(std::span<const double> a, std::span<const double> b) {
    const double n = double(a.size());
    double ma = 0.0, mb = 0.0, c = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    for (std::size_t i = 0; i < a.size(); ++i) c += (a[i] - ma) * (b[i] - mb);
    return c / (n - 1.0);
}

/// Dense grid search for the root of sum_i exp(l a_i)(a_i - p0); the root is bracketed on a
/// uniform grid, then refined by repeated subdivision of the bracketing cell.
inline double entropy_lambda_grid(std::span<const double> alpha, double p0) {
    auto g = [&](double l) {
        double mx = -std::numeric_limits<double>::infinity();
        for (double a : alpha) mx = std::max(mx, l * a);
        double s = 0.0;
        for (double a : alpha) s += std::exp(l * a - mx) * (a - p0);
        return s;
    };
    double lo = -50.0, hi = 50.0;
    for (int level = 0; level < 8; ++level) {
        const int cells = 100;
        const double w = (hi - lo) / cells;
        double prev = g(lo);
        for (int k = 1; k <= cells; ++k) {
            const double x = lo + w * k, cur = g(x);
            if ((prev <= 0.0) != (cur <= 0.0) || cur == 0.0) {
                hi = x;
                lo = x - w;
                break;
            }
            prev = cur;
        }
    }
    return 0.5 * (lo + hi);
}

} // namespace oracle
