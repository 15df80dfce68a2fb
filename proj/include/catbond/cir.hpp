#pragma once

// Bayesian CIR short-rate model dr = (alpha - beta r) dt + sigma sqrt(r) dW, discretised by
// Euler-Maruyama with M latent points between consecutive observations.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "catbond/errors.hpp"
#include "catbond/matrix.hpp"
#include "catbond/mcmc.hpp"
#include "catbond/random.hpp"

namespace catbond::cir {

struct RateSeries {
    std::vector<double> times; // years
    std::vector<double> rates;

    std::size_t size() const { return rates.size(); }
    double spacing() const { return (times.back() - times.front()) / double(times.size() - 1); }

    void validate() const {
        if (times.size() != rates.size()) throw InputError("rate series: times and rates differ in length");
        if (rates.size() < 3) throw InputError("rate series: needs at least 3 observations");
        for (std::size_t k = 0; k < rates.size(); ++k) {
            if (!(rates[k] > 0.0))
                throw InputError("rate series: rate at index " + std::to_string(k) + " is not positive");
            if (k > 0 && !(times[k] > times[k - 1]))
                throw InputError("rate series: times not strictly increasing at index " + std::to_string(k));
        }
    }
};

struct CirParams {
    double alpha = 0.0;
    double beta = 0.0;
    double sigma2 = 0.0;

    double long_run_mean() const { return alpha / beta; }
    bool feller() const { return alpha > sigma2 / 2.0; }
};

struct CirHyper {
    double upsilon0 = 2.1;
    double beta0 = 3.0;
    std::array<double, 2> mu0{0.0, 0.0};
    std::array<double, 2> precision0{10.0, 10.0};

    void validate() const {
        if (!(upsilon0 > 0.0 && beta0 > 0.0)) throw ConfigError("cir prior: upsilon0 and beta0 must be positive");
        if (!(precision0[0] > 0.0 && precision0[1] > 0.0))
            throw ConfigError("cir prior: precision0 must be positive definite");
    }
};

inline constexpr double rate_floor = 1e-8;

/// One Euler-Maruyama step; results below the floor are clamped to it.
inline double euler_step(double r, const CirParams& p, double dt, double eps) {
    const double next = r + (p.alpha - p.beta * r) * dt + std::sqrt(p.sigma2 * dt * r) * eps;
    return next < rate_floor ? rate_floor : next;
}

/// Observations and latent points on one grid: observation k sits at index k*(m+1).
struct AugmentedPath {
    std::size_t m = 0;
    double step = 0.0;
    std::vector<double> values;

    std::size_t transitions() const { return values.empty() ? 0 : values.size() - 1; }
    std::size_t gaps() const { return transitions() / (m + 1); }
};

struct SufficientStats {
    double a = 0.0; // sum 1/r_j
    double b = 0.0; // sum r_j
    double c = 0.0; // sum (r_{j+1} - r_j)/r_j
    double d = 0.0; // sum (r_j - r_{j+1})
    std::size_t n = 0;

    SufficientStats& operator+=(const SufficientStats& o) {
        a += o.a;
        b += o.b;
        c += o.c;
        d += o.d;
        n += o.n;
        return *this;
    }
};

inline SufficientStats operator+(SufficientStats x, const SufficientStats& y) { return x += y; }

/// Sums over every transition j -> j+1 of the grid.
inline SufficientStats sufficient_stats(std::span<const double> path) {
    SufficientStats s;
    for (std::size_t j = 0; j + 1 < path.size(); ++j) {
        const double r = path[j], next = path[j + 1];
        if (!(r > 0.0)) throw NumericalError("sufficient_stats: nonpositive path value at index " + std::to_string(j));
        s.a += 1.0 / r;
        s.b += r;
        s.c += (next - r) / r;
        s.d += r - next;
        s.n += 1;
    }
    if (!path.empty() && !(path.back() > 0.0)) throw NumericalError("sufficient_stats: nonpositive final path value");
    return s;
}

inline SufficientStats sufficient_stats(const AugmentedPath& p) { return sufficient_stats(p.values); }

/// Unconstrained Gaussian full conditional of (alpha, beta) given sigma^2 and the path.
struct PsiConditional {
    std::array<double, 2> mean{};
    std::array<std::array<double, 2>, 2> precision{};
    std::array<std::array<double, 2>, 2> covariance{};
};

inline PsiConditional psi_conditional(const SufficientStats& s, double sigma2, double step, const CirHyper& h) {
    PsiConditional out;
    const double k = step / sigma2;
    out.precision = {{{h.precision0[0] + k * s.a, -k * double(s.n)},
                      {-k * double(s.n), h.precision0[1] + k * s.b}}};
    const double det = out.precision[0][0] * out.precision[1][1] - out.precision[0][1] * out.precision[1][0];
    if (!(det > 0.0)) throw NumericalError("psi_conditional: precision matrix is not positive definite");
    out.covariance = {{{out.precision[1][1] / det, -out.precision[0][1] / det},
                       {-out.precision[1][0] / det, out.precision[0][0] / det}}};
    const double h0 = h.precision0[0] * h.mu0[0] + s.c / sigma2;
    const double h1 = h.precision0[1] * h.mu0[1] + s.d / sigma2;
    out.mean = {out.covariance[0][0] * h0 + out.covariance[0][1] * h1,
                out.covariance[1][0] * h0 + out.covariance[1][1] * h1};
    return out;
}

/// Draw from the conditional truncated to alpha, beta > 0 by rejection.
inline std::array<double, 2> sample_psi(const PsiConditional& c, Rng& rng, int max_tries = 10000) {
    const double l00 = std::sqrt(c.covariance[0][0]);
    const double l10 = c.covariance[1][0] / l00;
    const double l11 = std::sqrt(std::max(c.covariance[1][1] - l10 * l10, 0.0));
    for (int t = 0; t < max_tries; ++t) {
        const double z0 = rnd::normal(rng), z1 = rnd::normal(rng);
        const double a = c.mean[0] + l00 * z0;
        const double b = c.mean[1] + l10 * z0 + l11 * z1;
        if (a > 0.0 && b > 0.0) return {a, b};
    }
    throw NumericalError("sample_psi: no draw in the positive quadrant after " + std::to_string(max_tries) +
                         " tries (mean " + std::to_string(c.mean[0]) + ", " + std::to_string(c.mean[1]) +
                         "; sd " + std::to_string(l00) + ", " + std::to_string(std::sqrt(c.covariance[1][1])) + ")");
}

/// Inverse-gamma full conditional of sigma^2 given (alpha, beta) and the path.
struct Sigma2Conditional {
    double shape = 0.0;
    double scale = 0.0;
};

inline Sigma2Conditional sigma2_conditional(std::span<const double> path, double alpha, double beta, double step,
                                            const CirHyper& h) {
    double ss = 0.0;
    std::size_t n = 0;
    for (std::size_t j = 0; j + 1 < path.size(); ++j) {
        const double e = path[j + 1] - path[j] - (alpha - beta * path[j]) * step;
        ss += e * e / (2.0 * step * path[j]);
        ++n;
    }
    return {h.upsilon0 + 0.5 * double(n), h.beta0 + ss};
}

inline double sample_sigma2(const Sigma2Conditional& c, Rng& rng) {
    return rnd::inverse_gamma(rng, c.shape, c.scale);
}

struct CirPosterior {
    std::vector<std::vector<CirParams>> chains;
    std::size_t m = 0;
    double obs_spacing = 0.0;
    double step = 0.0;
    mcmc::McmcConfig mcmc;
    std::vector<double> latent_acceptance; // per chain, after burn-in
    std::vector<std::string> warnings;

    std::vector<CirParams> draws() const {
        std::vector<CirParams> out;
        for (const auto& c : chains) out.insert(out.end(), c.begin(), c.end());
        return out;
    }

    /// Per-chain trace of one of "alpha", "beta", "sigma2", "long_run_mean".
    std::vector<std::vector<double>> trace(const std::string& name) const {
        std::vector<std::vector<double>> out;
        for (const auto& c : chains) {
            std::vector<double> v;
            v.reserve(c.size());
            for (const auto& p : c) {
                if (name == "alpha") v.push_back(p.alpha);
                else if (name == "beta") v.push_back(p.beta);
                else if (name == "sigma2") v.push_back(p.sigma2);
                else if (name == "long_run_mean") v.push_back(p.long_run_mean());
                else throw InputError("cir trace: unknown parameter '" + name + "'");
            }
            out.push_back(std::move(v));
        }
        return out;
    }
};

namespace detail {

// Weighted least squares on the observed Euler increments.
inline CirParams initial_estimate(const RateSeries& s, double dt) {
    double a = 0.0, b = 0.0, c = 0.0, d = 0.0;
    const std::size_t n = s.size() - 1;
    for (std::size_t k = 0; k < n; ++k) {
        const double r = s.rates[k], y = s.rates[k + 1] - r;
        a += 1.0 / r;
        b += r;
        c += y / r;
        d -= y;
    }
    const double nn = double(n);
    const double det = dt * (a * b - nn * nn);
    CirParams p;
    if (det > 0.0) {
        p.alpha = (b * c + nn * d) / det;
        p.beta = (nn * c + a * d) / det;
    }
    if (!(p.alpha > 0.0 && p.beta > 0.0)) {
        p.beta = 1.0;
        p.alpha = b / nn;
    }
    double ss = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double r = s.rates[k];
        const double e = s.rates[k + 1] - r - (p.alpha - p.beta * r) * dt;
        ss += e * e / (dt * r);
    }
    p.sigma2 = std::max(ss / nn, 1e-12);
    return p;
}

// Linear interpolation plus Brownian-bridge noise at the local diffusion scale.
inline AugmentedPath initial_path(const RateSeries& s, std::size_t m, double step, double sigma2, Rng& rng) {
    AugmentedPath p;
    p.m = m;
    p.step = step;
    p.values.assign((s.size() - 1) * (m + 1) + 1, 0.0);
    const double len = double(m + 1);
    for (std::size_t k = 0; k + 1 < s.size(); ++k) {
        const double r0 = s.rates[k], r1 = s.rates[k + 1];
        p.values[k * (m + 1)] = r0;
        for (std::size_t j = 1; j <= m; ++j) {
            const double f = double(j) / len;
            const double mid = r0 + f * (r1 - r0);
            const double var = sigma2 * step * mid * double(j) * (len - double(j)) / len;
            p.values[k * (m + 1) + j] = std::max(mid + std::sqrt(var) * rnd::normal(rng), 0.5 * std::min(r0, r1));
        }
    }
    p.values.back() = s.rates.back();
    return p;
}

// Log density of all Euler transitions on the grid, including the normalising terms.
inline double path_log_density(std::span<const double> x, const CirParams& p, double step) {
    const double a = p.alpha * step, b = 1.0 - p.beta * step, inv = 1.0 / (2.0 * p.sigma2 * step);
    double lp = 0.0, logs = 0.0;
    for (std::size_t j = 0; j + 1 < x.size(); ++j) {
        const double e = x[j + 1] - a - b * x[j];
        lp -= e * e * inv / x[j];
        logs += std::log(x[j]);
    }
    return lp - 0.5 * logs - 0.5 * double(x.size() - 1) * std::log(p.sigma2 * step);
}

// One random-walk Metropolis pass over the interior points. Returns (accepted, proposed).
inline std::pair<long, long> latent_sweep(std::vector<double>& x, std::size_t m, const CirParams& p,
                                          double step, double tau, Rng& rng) {
    const double a = p.alpha * step, b = 1.0 - p.beta * step, inv = 1.0 / (2.0 * p.sigma2 * step);
    const double sd = tau * std::sqrt(p.sigma2 * step);
    long acc = 0, prop = 0;
    for (std::size_t j = 1; j + 1 < x.size(); ++j) {
        if (j % (m + 1) == 0) continue;
        ++prop;
        const double prev = x[j - 1], cur = x[j], next = x[j + 1];
        const double y = cur + sd * std::sqrt(prev) * rnd::normal(rng);
        if (!(y > 0.0)) continue;
        const double e1c = cur - a - b * prev, e1y = y - a - b * prev;
        const double e2c = next - a - b * cur, e2y = next - a - b * y;
        const double log_ratio = inv * ((e1c * e1c - e1y * e1y) / prev + e2c * e2c / cur - e2y * e2y / y) -
                                 0.5 * std::log(y / cur);
        if (mcmc::accept(rng, log_ratio)) {
            x[j] = y;
            ++acc;
        }
    }
    return {acc, prop};
}

// Joint move of sigma^2 and the latent points: deviations from the linear interpolation
// between observations are rescaled by sqrt(sigma2'/sigma2). Breaks the dependence between
// sigma^2 and the quadratic variation of a fine augmented path.
inline bool scale_move(std::vector<double>& x, std::span<const double> obs, std::size_t m, CirParams& p,
                       double step, const CirHyper& h, double scale, Rng& rng) {
    const double eps = scale * rnd::normal(rng);
    const double s2 = p.sigma2 * std::exp(eps);
    const double f = std::exp(0.5 * eps);
    std::vector<double> y(x);
    const double len = double(m + 1);
    for (std::size_t k = 0; k + 1 < obs.size(); ++k)
        for (std::size_t j = 1; j <= m; ++j) {
            const std::size_t idx = k * (m + 1) + j;
            const double lin = obs[k] + (double(j) / len) * (obs[k + 1] - obs[k]);
            y[idx] = lin + f * (x[idx] - lin);
            if (!(y[idx] > 0.0)) return false;
        }
    CirParams q = p;
    q.sigma2 = s2;
    auto log_prior = [&](double v) { return -(h.upsilon0 + 1.0) * std::log(v) - h.beta0 / v; };
    const double latent = double((obs.size() - 1) * m);
    const double log_ratio = path_log_density(y, q, step) - path_log_density(x, p, step) + log_prior(s2) -
                             log_prior(p.sigma2) + 0.5 * latent * eps + eps;
    if (!mcmc::accept(rng, log_ratio)) return false;
    x.swap(y);
    p.sigma2 = s2;
    return true;
}

} // namespace detail

struct ChainResult {
    std::vector<CirParams> draws;
    double latent_acceptance = 0.0;
};

/// One Gibbs chain: (alpha, beta) | sigma^2, path; sigma^2 | (alpha, beta), path; latent points.
inline ChainResult run_chain(const RateSeries& series, std::size_t m, const CirHyper& hyper,
                             const mcmc::McmcConfig& cfg, int chain) {
    Rng rng = make_rng(cfg.seed, std::uint64_t(chain));
    const double dt = series.spacing();
    const double step = dt / double(m + 1);
    CirParams p = detail::initial_estimate(series, dt);
    if (chain > 0) {
        p.alpha *= std::exp(0.2 * rnd::normal(rng));
        p.beta *= std::exp(0.2 * rnd::normal(rng));
        p.sigma2 *= std::exp(0.2 * rnd::normal(rng));
    }
    AugmentedPath path = detail::initial_path(series, m, step, p.sigma2, rng);
    auto& x = path.values;

    ChainResult out;
    out.draws.reserve(cfg.draws_per_chain());
    double tau = 1.5;
    mcmc::AdaptiveScale scale(0.05, 0.3);
    long batch_acc = 0, batch_prop = 0, acc = 0, prop = 0;
    int batches = 0;

    for (int it = 0; it < cfg.n_iter; ++it) {
        const bool burning = it < cfg.burn_in;
        const auto psi = sample_psi(psi_conditional(sufficient_stats(path), p.sigma2, step, hyper), rng);
        p.alpha = psi[0];
        p.beta = psi[1];
        p.sigma2 = sample_sigma2(sigma2_conditional(x, p.alpha, p.beta, step, hyper), rng);

        if (m > 0) {
            const auto [a, n] = detail::latent_sweep(x, m, p, step, tau, rng);
            if (burning) {
                batch_acc += a;
                batch_prop += n;
            } else {
                acc += a;
                prop += n;
            }
            if (burning && (it + 1) % 50 == 0 && batch_prop > 0) {
                const double rate = double(batch_acc) / double(batch_prop);
                tau *= std::exp(std::clamp(rate - 0.4, -0.5, 0.5) / std::sqrt(1.0 + double(++batches) / 10.0));
                batch_acc = batch_prop = 0;
            }
            scale.record(detail::scale_move(x, series.rates, m, p, step, hyper, scale.scale(), rng),
                         burning);
        }
        if (cfg.retained(it)) out.draws.push_back(p);
    }
    out.latent_acceptance = prop ? double(acc) / double(prop) : std::nan("");
    return out;
}

inline CirPosterior gibbs_fit(const RateSeries& series, std::size_t m, const CirHyper& hyper,
                              const mcmc::McmcConfig& cfg, int threads = 1) {
    series.validate();
    hyper.validate();
    cfg.validate();
    CirPosterior post;
    post.m = m;
    post.obs_spacing = series.spacing();
    post.step = post.obs_spacing / double(m + 1);
    post.mcmc = cfg;
    std::vector<ChainResult> results(std::size_t(cfg.n_chains));
    mcmc::parallel_for(cfg.n_chains, threads,
                       [&](int c) { results[std::size_t(c)] = run_chain(series, m, hyper, cfg, c); });
    for (auto& r : results) {
        post.chains.push_back(std::move(r.draws));
        post.latent_acceptance.push_back(r.latent_acceptance);
        if (m > 0 && !(r.latent_acceptance >= 0.05 && r.latent_acceptance <= 0.95))
            post.warnings.push_back("latent-path acceptance rate " + std::to_string(r.latent_acceptance) +
                                    " outside [0.05, 0.95]");
    }
    double a = 0.0, s2 = 0.0;
    std::size_t n = 0;
    for (const auto& c : post.chains)
        for (const auto& p : c) {
            a += p.alpha;
            s2 += p.sigma2;
            ++n;
        }
    if (n > 0 && !(a / double(n) > 0.5 * s2 / double(n)))
        post.warnings.push_back("posterior mean violates the Feller condition alpha > sigma2/2");
    return post;
}

/// r_1..r_steps per parameter draw, each by repeated Euler steps from r0.
inline Matrix forecast(std::span<const CirParams> draws, double r0, std::size_t steps, double dt, Rng& rng) {
    if (!(r0 > 0.0)) throw InputError("forecast: r0 must be positive");
    if (!(dt > 0.0)) throw InputError("forecast: step must be positive");
    Matrix out(draws.size(), steps);
    for (std::size_t i = 0; i < draws.size(); ++i) {
        double r = r0;
        for (std::size_t t = 0; t < steps; ++t) {
            r = euler_step(r, draws[i], dt, rnd::normal(rng));
            out(i, t) = r;
        }
    }
    return out;
}

inline Matrix forecast(const CirPosterior& post, double r0, std::size_t steps, double dt, Rng& rng) {
    const auto d = post.draws();
    return forecast(std::span<const CirParams>(d), r0, steps, dt, rng);
}

} // namespace catbond::cir
