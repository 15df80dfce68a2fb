#pragma once

// Hierarchical collective risk model with Dirichlet-process clustering of perils.
//   N_{i,t} ~ Poisson(exp(alpha_i + beta s_t)), s_t in {1,2,3,4} the calendar quarter
//   S_{i,t} | N = n > 0 ~ InvGamma(shape n kappa_i, scale theta_i)
//   (kappa_i, theta_i) ~ DP(gamma1, Gamma(zeta1, zeta2) x Gamma(eta1, eta2))
//   alpha_i ~ DP(gamma2, Gamma(psi1, psi2))
// Gamma(shape, rate) throughout. Fit by blocked Gibbs on truncated stick-breaking.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "catbond/diagnostics.hpp"
#include "catbond/errors.hpp"
#include "catbond/mcmc.hpp"
#include "catbond/optimize.hpp"
#include "catbond/random.hpp"

namespace catbond::crm {

using Date = std::chrono::year_month_day;

struct ClaimEvent {
    Date date;
    std::string peril;
    double loss = 0.0; // currency-millions
    std::size_t line = 0;
};

struct Quarter {
    int year = 0;
    int quarter = 1;

    friend bool operator==(const Quarter&, const Quarter&) = default;
};

inline Quarter quarter_of(const Date& d) {
    return {int(d.year()), int((unsigned(d.month()) - 1) / 3 + 1)};
}

struct DateRange {
    Date first;
    Date last;
};

struct QuarterlyPanel {
    std::vector<std::string> perils;
    std::vector<Quarter> quarters;
    std::vector<std::vector<long>> counts;    // [peril][quarter]
    std::vector<std::vector<double>> losses;  // [peril][quarter]

    std::size_t n_perils() const { return perils.size(); }
    std::size_t n_quarters() const { return quarters.size(); }

    void validate() const {
        if (counts.size() != perils.size() || losses.size() != perils.size())
            throw InputError("panel: row count does not match the peril list");
        for (std::size_t i = 0; i < perils.size(); ++i) {
            if (counts[i].size() != quarters.size() || losses[i].size() != quarters.size())
                throw InputError("panel: column count does not match the quarter list for " + perils[i]);
            for (std::size_t t = 0; t < quarters.size(); ++t) {
                const long n = counts[i][t];
                const double s = losses[i][t];
                if (n < 0 || !std::isfinite(s) || s < 0.0 || ((n == 0) != (s == 0.0)))
                    throw InputError("panel: inconsistent cell (" + perils[i] + ", " +
                                     std::to_string(quarters[t].year) + "Q" +
                                     std::to_string(quarters[t].quarter) + ")");
            }
        }
        for (const auto& q : quarters)
            if (q.quarter < 1 || q.quarter > 4) throw InputError("panel: quarter index outside 1..4");
    }
};

/// Aggregates events by (peril, calendar quarter) over every quarter the range touches.
inline QuarterlyPanel build_panel(std::span<const ClaimEvent> events, std::span<const std::string> peril_set,
                                  const DateRange& range) {
    if (!range.first.ok() || !range.last.ok() || range.last < range.first)
        throw ConfigError("build_panel: invalid date range");
    QuarterlyPanel p;
    p.perils.assign(peril_set.begin(), peril_set.end());
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < p.perils.size(); ++i)
        if (!index.emplace(p.perils[i], i).second)
            throw ConfigError("build_panel: duplicate peril '" + p.perils[i] + "'");

    std::set<std::string> unknown;
    for (const auto& e : events)
        if (!index.count(e.peril)) unknown.insert(e.peril);
    if (!unknown.empty()) {
        std::string list;
        for (const auto& u : unknown) list += (list.empty() ? "" : ", ") + u;
        throw InputError("build_panel: unknown peril id(s): " + list);
    }

    const Quarter q0 = quarter_of(range.first), q1 = quarter_of(range.last);
    for (Quarter q = q0;;) {
        p.quarters.push_back(q);
        if (q == q1) break;
        q = q.quarter == 4 ? Quarter{q.year + 1, 1} : Quarter{q.year, q.quarter + 1};
    }
    p.counts.assign(p.perils.size(), std::vector<long>(p.quarters.size(), 0));
    p.losses.assign(p.perils.size(), std::vector<double>(p.quarters.size(), 0.0));
    for (const auto& e : events) {
        if (e.date < range.first || range.last < e.date)
            throw InputError("build_panel: event outside the date range" +
                             (e.line ? " (line " + std::to_string(e.line) + ")" : std::string()));
        if (!(e.loss > 0.0))
            throw InputError("build_panel: nonpositive loss" +
                             (e.line ? " (line " + std::to_string(e.line) + ")" : std::string()));
        const Quarter q = quarter_of(e.date);
        const auto t = std::size_t((q.year - q0.year) * 4 + (q.quarter - q0.quarter));
        const auto i = index.at(e.peril);
        p.counts[i][t] += 1;
        p.losses[i][t] += e.loss;
    }
    return p;
}

struct HyperPrior {
    double shape = 0.01;
    double rate = 0.01;
};

struct CrmHyperParams {
    double gamma1 = 9.0;
    double gamma2 = 9.0;
    // Gamma(shape, rate) hyperpriors on zeta1, zeta2, eta1, eta2, psi1, psi2
    std::array<HyperPrior, 6> hyperpriors{};
    double beta_prior_mean = 0.0;
    double beta_prior_precision = 100.0;
    int truncation = 20;

    void validate(std::size_t n_perils) const {
        if (!(gamma1 > 0.0 && gamma2 > 0.0)) throw ConfigError("crm: DP concentrations must be positive");
        for (const auto& h : hyperpriors)
            if (!(h.shape > 0.0 && h.rate > 0.0)) throw ConfigError("crm: hyperprior shapes and rates must be positive");
        if (!(beta_prior_precision > 0.0)) throw ConfigError("crm: beta prior precision must be positive");
        if (truncation < 2) throw ConfigError("crm: DP truncation must be at least 2");
        if (std::size_t(truncation) < n_perils)
            throw ConfigError("crm: DP truncation " + std::to_string(truncation) + " is below the number of perils " +
                              std::to_string(n_perils));
    }
};

/// Hyperparameters of the two base measures.
struct BaseParams {
    double zeta1 = 1.0, zeta2 = 1.0; // kappa ~ Gamma(zeta1, zeta2)
    double eta1 = 1.0, eta2 = 1.0;   // theta ~ Gamma(eta1, eta2)
    double psi1 = 1.0, psi2 = 1.0;   // alpha ~ Gamma(psi1, psi2)
};

/// Full sampler state.
struct CrmState {
    std::vector<double> kappa_atoms, theta_atoms, severity_weights;
    std::vector<int> severity_labels;
    std::vector<double> alpha_atoms, count_weights;
    std::vector<int> count_labels;
    double beta = 0.0;
    BaseParams base;

    double kappa(std::size_t i) const { return kappa_atoms[std::size_t(severity_labels[i])]; }
    double theta(std::size_t i) const { return theta_atoms[std::size_t(severity_labels[i])]; }
    double alpha(std::size_t i) const { return alpha_atoms[std::size_t(count_labels[i])]; }
};

/// Retained per-iteration output: per-peril parameters, labels, shared slope, base parameters.
struct CrmDraw {
    std::vector<double> kappa, theta, alpha;
    std::vector<int> severity_label, count_label;
    double beta = 0.0;
    BaseParams base;
    int severity_clusters = 0;
    int count_clusters = 0;
};

inline double poisson_log_pmf(long n, double lambda) {
    return double(n) * std::log(lambda) - lambda - std::lgamma(double(n) + 1.0);
}

/// Inverse gamma, shape a, scale b.
inline double inverse_gamma_log_pdf(double x, double a, double b) {
    return a * std::log(b) - std::lgamma(a) - (a + 1.0) * std::log(x) - b / x;
}

inline double seasonal_rate(double alpha, double beta, int season) { return std::exp(alpha + beta * season); }

/// Full log-likelihood of the panel at per-peril parameters.
inline double log_likelihood(std::span<const double> kappa, std::span<const double> theta,
                             std::span<const double> alpha, double beta, const QuarterlyPanel& panel) {
    if (panel.n_perils() == 0 || panel.n_quarters() == 0) throw InputError("log_likelihood: empty panel");
    if (kappa.size() != panel.n_perils() || theta.size() != panel.n_perils() || alpha.size() != panel.n_perils())
        throw InputError("log_likelihood: parameter vectors do not match the panel");
    double ll = 0.0;
    for (std::size_t i = 0; i < panel.n_perils(); ++i)
        for (std::size_t t = 0; t < panel.n_quarters(); ++t) {
            const long n = panel.counts[i][t];
            ll += poisson_log_pmf(n, seasonal_rate(alpha[i], beta, panel.quarters[t].quarter));
            if (n > 0) ll += inverse_gamma_log_pdf(panel.losses[i][t], double(n) * kappa[i], theta[i]);
        }
    return ll;
}

inline double log_likelihood(const CrmState& s, const QuarterlyPanel& panel) {
    std::vector<double> k, th, a;
    for (std::size_t i = 0; i < s.severity_labels.size(); ++i) {
        k.push_back(s.kappa(i));
        th.push_back(s.theta(i));
        a.push_back(s.alpha(i));
    }
    return log_likelihood(k, th, a, s.beta, panel);
}

struct CrmPosterior {
    std::vector<std::string> perils;
    std::vector<std::vector<CrmDraw>> chains;
    mcmc::McmcConfig mcmc;
    CrmHyperParams hyper;
    int next_season = 1; // calendar quarter following the panel
    std::map<std::string, double> acceptance;
    std::vector<std::string> warnings;

    std::size_t size() const {
        std::size_t n = 0;
        for (const auto& c : chains) n += c.size();
        return n;
    }

    const CrmDraw& draw(std::size_t k) const {
        for (const auto& c : chains) {
            if (k < c.size()) return c[k];
            k -= c.size();
        }
        throw InputError("crm posterior: draw index out of range");
    }

    /// Per-chain trace of a scalar: beta, zeta1..psi2, or kappa/theta/alpha:<peril index>.
    std::vector<std::vector<double>> trace(const std::string& name) const {
        auto pick = [&](const CrmDraw& d) -> double {
            if (name == "beta") return d.beta;
            if (name == "zeta1") return d.base.zeta1;
            if (name == "zeta2") return d.base.zeta2;
            if (name == "eta1") return d.base.eta1;
            if (name == "eta2") return d.base.eta2;
            if (name == "psi1") return d.base.psi1;
            if (name == "psi2") return d.base.psi2;
            const auto colon = name.find(':');
            if (colon != std::string::npos) {
                const auto i = std::size_t(std::stoul(name.substr(colon + 1)));
                const auto key = name.substr(0, colon);
                if (i < d.kappa.size()) {
                    if (key == "kappa") return d.kappa[i];
                    if (key == "theta") return d.theta[i];
                    if (key == "alpha") return d.alpha[i];
                }
            }
            throw InputError("crm trace: unknown parameter '" + name + "'");
        };
        std::vector<std::vector<double>> out;
        for (const auto& c : chains) {
            std::vector<double> v;
            v.reserve(c.size());
            for (const auto& d : c) v.push_back(pick(d));
            out.push_back(std::move(v));
        }
        return out;
    }
};

namespace detail {

inline constexpr double tiny = std::numeric_limits<double>::min();

// Nonzero cells sharing one claim count n.
struct CountGroup {
    long n = 0;
    long cells = 0;
    double sum_log = 0.0; // sum of log S over these cells
};

struct SeverityStats {
    std::map<long, CountGroup> groups;
    double ntot = 0.0;    // sum of n over nonzero cells
    double sum_inv = 0.0; // sum of 1/S
    double sum_nlog = 0.0;
    double sum_log = 0.0;

    SeverityStats& operator+=(const SeverityStats& o) {
        for (const auto& [n, g] : o.groups) {
            auto& dst = groups[n];
            dst.n = n;
            dst.cells += g.cells;
            dst.sum_log += g.sum_log;
        }
        ntot += o.ntot;
        sum_inv += o.sum_inv;
        sum_nlog += o.sum_nlog;
        sum_log += o.sum_log;
        return *this;
    }
};

inline SeverityStats severity_stats(const QuarterlyPanel& p, std::size_t i) {
    SeverityStats s;
    for (std::size_t t = 0; t < p.n_quarters(); ++t) {
        const long n = p.counts[i][t];
        if (n == 0) continue;
        const double ls = std::log(p.losses[i][t]);
        auto& g = s.groups[n];
        g.n = n;
        g.cells += 1;
        g.sum_log += ls;
        s.ntot += double(n);
        s.sum_inv += 1.0 / p.losses[i][t];
        s.sum_nlog += double(n) * ls;
        s.sum_log += ls;
    }
    return s;
}

// Severity log-likelihood up to terms free of (kappa, theta).
inline double severity_loglik(const SeverityStats& s, double kappa, double theta) {
    double ll = kappa * s.ntot * std::log(theta) - kappa * s.sum_nlog - theta * s.sum_inv;
    for (const auto& [n, g] : s.groups) ll -= double(g.cells) * std::lgamma(double(n) * kappa);
    return ll;
}

// log of the severity likelihood with theta integrated against Gamma(eta1, eta2), up to constants.
inline double collapsed_kappa_target(const SeverityStats& s, double kappa, const BaseParams& b) {
    double lt = (b.zeta1 - 1.0) * std::log(kappa) - b.zeta2 * kappa - kappa * s.sum_nlog;
    for (const auto& [n, g] : s.groups) lt -= double(g.cells) * std::lgamma(double(n) * kappa);
    const double shape = b.eta1 + kappa * s.ntot;
    return lt + std::lgamma(shape) - shape * std::log(b.eta2 + s.sum_inv);
}

struct CountStats {
    double total = 0.0;    // sum_t N
    double seasonal = 0.0; // sum_t N s_t
};

inline CountStats count_stats(const QuarterlyPanel& p, std::size_t i) {
    CountStats c;
    for (std::size_t t = 0; t < p.n_quarters(); ++t) {
        c.total += double(p.counts[i][t]);
        c.seasonal += double(p.counts[i][t]) * p.quarters[t].quarter;
    }
    return c;
}

// sum_t exp(beta s_t): the exposure shared by every peril.
inline double exposure(const std::array<double, 4>& season_counts, double beta) {
    double e = 0.0;
    for (int s = 1; s <= 4; ++s) e += season_counts[std::size_t(s - 1)] * std::exp(beta * s);
    return e;
}

inline int sample_log_categorical(std::span<const double> logp, Rng& rng) {
    const double mx = *std::max_element(logp.begin(), logp.end());
    double z = 0.0;
    for (double l : logp) z += std::exp(l - mx);
    double u = rnd::uniform(rng) * z;
    for (std::size_t h = 0; h < logp.size(); ++h) {
        u -= std::exp(logp[h] - mx);
        if (u <= 0.0) return int(h);
    }
    return int(logp.size() - 1);
}

// Stick-breaking weights given cluster occupancies (last stick takes the remainder).
inline std::vector<double> sample_sticks(std::span<const int> occupancy, double gamma, Rng& rng) {
    const std::size_t h = occupancy.size();
    std::vector<double> w(h);
    double tail = 0.0;
    for (int c : occupancy) tail += c;
    double remaining = 1.0;
    for (std::size_t k = 0; k < h; ++k) {
        tail -= occupancy[k];
        const double v = k + 1 == h ? 1.0 : rnd::beta(rng, 1.0 + occupancy[k], gamma + tail);
        w[k] = remaining * v;
        remaining *= 1.0 - v;
    }
    return w;
}

// Relabel clusters by decreasing occupancy; ties keep their current order.
template <class... Atoms>
std::vector<int> relabel(std::vector<int>& labels, std::size_t h, Atoms&... atoms) {
    std::vector<int> occ(h, 0);
    for (int l : labels) occ[std::size_t(l)]++;
    std::vector<std::size_t> order(h);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return occ[a] > occ[b]; });
    std::vector<int> new_of(h);
    for (std::size_t k = 0; k < h; ++k) new_of[order[k]] = int(k);
    for (int& l : labels) l = new_of[std::size_t(l)];
    auto permute = [&](std::vector<double>& v) {
        std::vector<double> out(h);
        for (std::size_t k = 0; k < h; ++k) out[k] = v[order[k]];
        v.swap(out);
    };
    (permute(atoms), ...);
    std::vector<int> sorted(h);
    for (std::size_t k = 0; k < h; ++k) sorted[k] = occ[order[k]];
    return sorted;
}

// Gamma(shape, rate) given atoms x: rate is conjugate, shape by random walk on log scale.
inline void update_gamma_hyper(double& shape, double& rate, std::span<const double> x, const HyperPrior& shape_prior,
                               const HyperPrior& rate_prior, mcmc::AdaptiveScale& scale, bool burning, Rng& rng) {
    const double k = double(x.size());
    double sum = 0.0, sum_log = 0.0;
    for (double v : x) {
        sum += v;
        sum_log += std::log(v);
    }
    rate = std::max(rnd::gamma(rng, rate_prior.shape + k * shape, rate_prior.rate + sum), tiny);
    auto target = [&](double a) {
        return (shape_prior.shape - 1.0) * std::log(a) - shape_prior.rate * a + k * (a * std::log(rate) - std::lgamma(a)) +
               (a - 1.0) * sum_log + std::log(a);
    };
    const double prop = shape * std::exp(scale.scale() * rnd::normal(rng));
    const bool ok = prop > tiny && std::isfinite(prop) && mcmc::accept(rng, target(prop) - target(shape));
    if (ok) shape = prop;
    scale.record(ok, burning);
}

inline double base_draw(Rng& rng, double shape, double rate) {
    const double v = rnd::gamma(rng, shape, rate);
    return std::isfinite(v) ? std::max(v, tiny) : std::numeric_limits<double>::max();
}

// Method-of-moments Gamma(shape, rate) for initial base parameters.
inline std::pair<double, double> moment_gamma(std::span<const double> x) {
    const double m = diagnostics::detail::mean(x);
    const double v = x.size() > 1 ? diagnostics::detail::variance(x) : 0.0;
    if (v > 0.0 && m > 0.0) return {m * m / v, m / v};
    return {1.0, 1.0 / std::max(m, tiny)};
}

// Per-peril severity MLE on the log scale.
inline std::pair<double, double> severity_mle(const SeverityStats& s) {
    if (s.ntot <= 0.0) return {1.0, 1.0};
    auto nll = [&](const std::vector<double>& x) { return -severity_loglik(s, std::exp(x[0]), std::exp(x[1])); };
    const double k0 = 2.0, t0 = k0 * s.ntot / s.sum_inv;
    const auto r = optimize::nelder_mead(nll, {std::log(k0), std::log(t0)});
    return {std::exp(r.x[0]), std::exp(r.x[1])};
}

struct Sampler {
    const QuarterlyPanel& panel;
    const CrmHyperParams& hyper;
    std::size_t n = 0;
    std::size_t h = 0;
    std::vector<SeverityStats> sev;
    std::vector<CountStats> cnt;
    std::array<double, 4> season_counts{};
    CrmState s;
    mcmc::AdaptiveScale kappa_scale{0.3}, alpha_scale{0.1}, beta_scale{0.02};
    mcmc::AdaptiveScale zeta_scale{0.5}, eta_scale{0.5}, psi_scale{0.5};
    bool freeze_base = false; // hold the base-measure parameters fixed (used by kernel tests)

    Sampler(const QuarterlyPanel& p, const CrmHyperParams& hp) : panel(p), hyper(hp) {
        n = p.n_perils();
        h = std::size_t(hp.truncation);
        for (std::size_t i = 0; i < n; ++i) {
            sev.push_back(severity_stats(p, i));
            cnt.push_back(count_stats(p, i));
        }
        for (const auto& q : p.quarters) season_counts[std::size_t(q.quarter - 1)] += 1.0;
    }

    void initialise(Rng& rng, bool jitter) {
        auto j = [&](double v) { return jitter ? v * std::exp(0.3 * rnd::normal(rng)) : v; };
        std::vector<double> k0, t0, a0;
        const double e0 = exposure(season_counts, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto [k, t] = severity_mle(sev[i]);
            k0.push_back(j(k));
            t0.push_back(j(t));
            a0.push_back(j(std::max(std::log(std::max(cnt[i].total / e0, tiny)), 0.05)));
        }
        auto [z1, z2] = moment_gamma(k0);
        auto [e1, e2] = moment_gamma(t0);
        auto [p1, p2] = moment_gamma(a0);
        s.base = {z1, z2, e1, e2, p1, p2};
        s.beta = 0.0;
        s.kappa_atoms.assign(h, 0.0);
        s.theta_atoms.assign(h, 0.0);
        s.alpha_atoms.assign(h, 0.0);
        s.severity_labels.resize(n);
        s.count_labels.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            s.kappa_atoms[i] = k0[i];
            s.theta_atoms[i] = t0[i];
            s.alpha_atoms[i] = a0[i];
            s.severity_labels[i] = int(i);
            s.count_labels[i] = int(i);
        }
        for (std::size_t k = n; k < h; ++k) {
            s.kappa_atoms[k] = base_draw(rng, s.base.zeta1, s.base.zeta2);
            s.theta_atoms[k] = base_draw(rng, s.base.eta1, s.base.eta2);
            s.alpha_atoms[k] = base_draw(rng, s.base.psi1, s.base.psi2);
        }
        std::vector<int> occ(h, 0);
        for (std::size_t i = 0; i < n; ++i) occ[i] = 1;
        s.severity_weights = sample_sticks(occ, hyper.gamma1, rng);
        s.count_weights = sample_sticks(occ, hyper.gamma2, rng);
    }

    void severity_step(Rng& rng, bool burning) {
        std::vector<double> lp(h);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < h; ++k)
                lp[k] = std::log(std::max(s.severity_weights[k], tiny)) +
                        (sev[i].ntot > 0.0 ? severity_loglik(sev[i], s.kappa_atoms[k], s.theta_atoms[k]) : 0.0);
            s.severity_labels[i] = sample_log_categorical(lp, rng);
        }
        const auto occ = relabel(s.severity_labels, h, s.kappa_atoms, s.theta_atoms);
        s.severity_weights = sample_sticks(occ, hyper.gamma1, rng);

        std::vector<double> occ_k, occ_t;
        for (std::size_t k = 0; k < h && occ[k] > 0; ++k) {
            SeverityStats cs;
            for (std::size_t i = 0; i < n; ++i)
                if (s.severity_labels[i] == int(k)) cs += sev[i];
            double& kappa = s.kappa_atoms[k];
            if (cs.ntot > 0.0) {
                double cur = collapsed_kappa_target(cs, kappa, s.base) + std::log(kappa);
                for (int rep = 0; rep < 3; ++rep) {
                    const double prop = kappa * std::exp(kappa_scale.scale() * rnd::normal(rng));
                    const double lt = collapsed_kappa_target(cs, prop, s.base) + std::log(prop);
                    const bool ok = std::isfinite(lt) && mcmc::accept(rng, lt - cur);
                    if (ok) {
                        kappa = prop;
                        cur = lt;
                    }
                    kappa_scale.record(ok, burning);
                }
                s.theta_atoms[k] =
                    std::max(rnd::gamma(rng, s.base.eta1 + kappa * cs.ntot, s.base.eta2 + cs.sum_inv), tiny);
            } else {
                kappa = base_draw(rng, s.base.zeta1, s.base.zeta2);
                s.theta_atoms[k] = base_draw(rng, s.base.eta1, s.base.eta2);
            }
            occ_k.push_back(kappa);
            occ_t.push_back(s.theta_atoms[k]);
        }
        const auto& hp = hyper.hyperpriors;
        if (!freeze_base) {
            update_gamma_hyper(s.base.zeta1, s.base.zeta2, occ_k, hp[0], hp[1], zeta_scale, burning, rng);
            update_gamma_hyper(s.base.eta1, s.base.eta2, occ_t, hp[2], hp[3], eta_scale, burning, rng);
        }
        for (std::size_t k = occ_k.size(); k < h; ++k) {
            s.kappa_atoms[k] = base_draw(rng, s.base.zeta1, s.base.zeta2);
            s.theta_atoms[k] = base_draw(rng, s.base.eta1, s.base.eta2);
        }
    }

    void count_step(Rng& rng, bool burning) {
        const double e = exposure(season_counts, s.beta);
        std::vector<double> lp(h);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < h; ++k)
                lp[k] = std::log(std::max(s.count_weights[k], tiny)) + s.alpha_atoms[k] * cnt[i].total -
                        std::exp(s.alpha_atoms[k]) * e;
            s.count_labels[i] = sample_log_categorical(lp, rng);
        }
        const auto occ = relabel(s.count_labels, h, s.alpha_atoms);
        s.count_weights = sample_sticks(occ, hyper.gamma2, rng);

        std::vector<double> occ_a;
        for (std::size_t k = 0; k < h && occ[k] > 0; ++k) {
            double total = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                if (s.count_labels[i] == int(k)) total += cnt[i].total;
            const double ex = double(occ[k]) * e;
            auto target = [&](double a) {
                return (s.base.psi1 - 1.0) * std::log(a) - s.base.psi2 * a + a * total - std::exp(a) * ex + std::log(a);
            };
            double& a = s.alpha_atoms[k];
            for (int rep = 0; rep < 3; ++rep) {
                const double prop = a * std::exp(alpha_scale.scale() * rnd::normal(rng));
                const double lt = target(prop);
                const bool ok = prop > tiny && std::isfinite(lt) && mcmc::accept(rng, lt - target(a));
                if (ok) a = prop;
                alpha_scale.record(ok, burning);
            }
            occ_a.push_back(a);
        }
        const auto& hp = hyper.hyperpriors;
        if (!freeze_base) update_gamma_hyper(s.base.psi1, s.base.psi2, occ_a, hp[4], hp[5], psi_scale, burning, rng);
        for (std::size_t k = occ_a.size(); k < h; ++k) s.alpha_atoms[k] = base_draw(rng, s.base.psi1, s.base.psi2);
    }

    void beta_step(Rng& rng, bool burning) {
        double seasonal = 0.0;
        for (const auto& c : cnt) seasonal += c.seasonal;
        double rate_sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) rate_sum += std::exp(s.alpha(i));
        auto target = [&](double b) {
            const double d = b - hyper.beta_prior_mean;
            return b * seasonal - rate_sum * exposure(season_counts, b) - 0.5 * hyper.beta_prior_precision * d * d;
        };
        for (int rep = 0; rep < 2; ++rep) {
            const double prop = s.beta + beta_scale.scale() * rnd::normal(rng);
            const bool ok = mcmc::accept(rng, target(prop) - target(s.beta));
            if (ok) s.beta = prop;
            beta_scale.record(ok, burning);
        }
    }

    CrmDraw snapshot() const {
        CrmDraw d;
        for (std::size_t i = 0; i < n; ++i) {
            d.kappa.push_back(s.kappa(i));
            d.theta.push_back(s.theta(i));
            d.alpha.push_back(s.alpha(i));
        }
        d.severity_label = s.severity_labels;
        d.count_label = s.count_labels;
        d.beta = s.beta;
        d.base = s.base;
        d.severity_clusters = 1 + *std::max_element(s.severity_labels.begin(), s.severity_labels.end());
        d.count_clusters = 1 + *std::max_element(s.count_labels.begin(), s.count_labels.end());
        return d;
    }
};

} // namespace detail

inline CrmPosterior fit(const QuarterlyPanel& panel, const CrmHyperParams& hyper, const mcmc::McmcConfig& cfg,
                        int threads = 1) {
    panel.validate();
    if (panel.n_perils() < 1) throw ConfigError("crm fit: panel has no perils");
    if (panel.n_quarters() < 4) throw ConfigError("crm fit: panel needs at least 4 quarters");
    hyper.validate(panel.n_perils());
    cfg.validate();

    CrmPosterior post;
    post.perils = panel.perils;
    post.mcmc = cfg;
    post.hyper = hyper;
    post.next_season = panel.quarters.back().quarter % 4 + 1;
    post.chains.resize(std::size_t(cfg.n_chains));
    std::vector<std::map<std::string, double>> rates(std::size_t(cfg.n_chains));

    mcmc::parallel_for(cfg.n_chains, threads, [&](int c) {
        Rng rng = make_rng(cfg.seed, std::uint64_t(c));
        detail::Sampler smp(panel, hyper);
        smp.initialise(rng, c > 0);
        auto& out = post.chains[std::size_t(c)];
        out.reserve(cfg.draws_per_chain());
        for (int it = 0; it < cfg.n_iter; ++it) {
            const bool burning = it < cfg.burn_in;
            smp.severity_step(rng, burning);
            smp.count_step(rng, burning);
            smp.beta_step(rng, burning);
            if (cfg.retained(it)) out.push_back(smp.snapshot());
        }
        rates[std::size_t(c)] = {{"kappa", smp.kappa_scale.acceptance()}, {"alpha", smp.alpha_scale.acceptance()},
                                 {"beta", smp.beta_scale.acceptance()},   {"zeta1", smp.zeta_scale.acceptance()},
                                 {"eta1", smp.eta_scale.acceptance()},    {"psi1", smp.psi_scale.acceptance()}};
    });

    for (const auto& [name, _] : rates.front()) {
        double sum = 0.0;
        int k = 0;
        for (const auto& r : rates)
            if (std::isfinite(r.at(name))) {
                sum += r.at(name);
                ++k;
            }
        if (k == 0) continue;
        const double rate = sum / k;
        post.acceptance[name] = rate;
        if (rate < 0.05 || rate > 0.95)
            post.warnings.push_back("Metropolis acceptance for " + name + " is " + std::to_string(rate) +
                                    ", outside [0.05, 0.95]");
    }
    return post;
}

enum class Process { severity, count };

struct ClusterSummary {
    std::vector<std::vector<double>> occupancy; // [peril][cluster], fraction of draws
    std::vector<int> modal;                     // most frequent label per peril
    std::vector<int> partition;                 // most frequently sampled partition
    double partition_frequency = 0.0;
    std::size_t draws = 0;
};

/// Labels renumbered by order of first appearance, so equal partitions compare equal.
inline std::vector<int> canonical_partition(std::span<const int> labels) {
    std::map<int, int> seen;
    std::vector<int> out;
    for (int l : labels) out.push_back(seen.emplace(l, int(seen.size())).first->second);
    return out;
}

inline ClusterSummary cluster_summary(const CrmPosterior& post, Process which = Process::severity) {
    if (post.size() == 0) throw InputError("cluster_summary: posterior has no draws");
    const std::size_t n = post.perils.size(), h = std::size_t(post.hyper.truncation);
    ClusterSummary s;
    s.occupancy.assign(n, std::vector<double>(h, 0.0));
    for (const auto& c : post.chains)
        for (const auto& d : c) {
            const auto& lab = which == Process::severity ? d.severity_label : d.count_label;
            for (std::size_t i = 0; i < n; ++i) s.occupancy[i][std::size_t(lab[i])] += 1.0;
            ++s.draws;
        }
    for (auto& row : s.occupancy) {
        for (double& v : row) v /= double(s.draws);
        s.modal.push_back(int(std::max_element(row.begin(), row.end()) - row.begin()));
    }
    std::map<std::vector<int>, std::size_t> freq;
    for (const auto& c : post.chains)
        for (const auto& d : c) freq[canonical_partition(which == Process::severity ? d.severity_label : d.count_label)]++;
    std::size_t best = 0;
    for (const auto& [part, k] : freq)
        if (k > best) {
            best = k;
            s.partition = part;
        }
    s.partition_frequency = double(best) / double(s.draws);
    return s;
}

/// Forecast window in quarters; u = 0 is the start of a quarter whose season is first_season.
struct Horizon {
    double start = 0.0;
    double end = 4.0;
    int first_season = 1;
};

/// Integral of exp(alpha + beta s(u)) over the horizon, s(u) the season of quarter floor(u).
inline double expected_count(double alpha, double beta, const Horizon& hz) {
    if (!(hz.end > hz.start && hz.start >= 0.0)) throw InputError("horizon: need T > t >= 0");
    double total = 0.0;
    for (double u = hz.start; u < hz.end;) {
        const double q = std::floor(u);
        const double next = std::min(q + 1.0, hz.end);
        const int season = int((long(q) + hz.first_season - 1) % 4) + 1;
        total += (next - u) * seasonal_rate(alpha, beta, season);
        u = next;
    }
    return total;
}

/// What one posterior draw implies for one peril over a horizon.
struct PredictiveDraw {
    double mean_count = 0.0;
    double kappa = 1.0;
    double theta = 1.0;
};

inline std::size_t peril_index(const CrmPosterior& post, const std::string& peril) {
    const auto it = std::find(post.perils.begin(), post.perils.end(), peril);
    if (it == post.perils.end()) throw InputError("crm: unknown peril '" + peril + "'");
    return std::size_t(it - post.perils.begin());
}

inline std::vector<PredictiveDraw> predictive_draws(const CrmPosterior& post, std::size_t peril, const Horizon& hz) {
    if (post.size() == 0) throw ConfigError("crm predictive: posterior has no draws");
    std::vector<PredictiveDraw> out;
    out.reserve(post.size());
    for (const auto& c : post.chains)
        for (const auto& d : c) out.push_back({expected_count(d.alpha[peril], d.beta, hz), d.kappa[peril], d.theta[peril]});
    return out;
}

inline std::vector<long> predict_counts(std::span<const PredictiveDraw> draws, Rng& rng) {
    std::vector<long> out;
    out.reserve(draws.size());
    for (const auto& d : draws) out.push_back(rnd::poisson(rng, d.mean_count));
    return out;
}

inline double sample_aggregate(const PredictiveDraw& d, Rng& rng) {
    const long nf = rnd::poisson(rng, d.mean_count);
    return nf == 0 ? 0.0 : rnd::inverse_gamma(rng, double(nf) * d.kappa, d.theta);
}

/// N_f ~ Poisson(mean); S_f = 0 if N_f = 0, else InvGamma(N_f kappa, theta).
inline std::vector<double> predict_aggregate(std::span<const PredictiveDraw> draws, Rng& rng,
                                             std::size_t sims_per_draw = 1) {
    std::vector<double> out;
    out.reserve(draws.size() * sims_per_draw);
    for (const auto& d : draws)
        for (std::size_t k = 0; k < sims_per_draw; ++k) out.push_back(sample_aggregate(d, rng));
    return out;
}

inline std::vector<long> predict_counts(const CrmPosterior& post, const std::string& peril, const Horizon& hz,
                                        Rng& rng) {
    const auto d = predictive_draws(post, peril_index(post, peril), hz);
    return predict_counts(d, rng);
}

inline std::vector<double> predict_aggregate(const CrmPosterior& post, const std::string& peril, const Horizon& hz,
                                             Rng& rng) {
    const auto d = predictive_draws(post, peril_index(post, peril), hz);
    return predict_aggregate(d, rng);
}

/// Per draw, the sum of independent peril aggregates over a group of perils.
inline std::vector<double> predict_group_aggregate(const CrmPosterior& post, std::span<const std::size_t> perils,
                                                   const Horizon& hz, Rng& rng) {
    std::vector<double> out(post.size(), 0.0);
    for (std::size_t p : perils) {
        const auto d = predictive_draws(post, p, hz);
        for (std::size_t k = 0; k < d.size(); ++k) out[k] += sample_aggregate(d[k], rng);
    }
    return out;
}

struct ThresholdEstimate {
    double probability = 0.0;
    double std_error = 0.0;
    std::size_t n = 0;
};

inline ThresholdEstimate threshold_probability(std::span<const double> sample, double d) {
    if (!(d > 0.0)) throw InputError("threshold_probability: D must be positive");
    if (sample.empty()) throw ConfigError("threshold_probability: no predictive draws");
    ThresholdEstimate e;
    e.n = sample.size();
    std::size_t hit = 0;
    for (double s : sample) hit += s <= d;
    e.probability = double(hit) / double(e.n);
    e.std_error = std::sqrt(e.probability * (1.0 - e.probability) / double(e.n));
    return e;
}

inline ThresholdEstimate threshold_probability(std::span<const PredictiveDraw> draws, double d, Rng& rng,
                                               std::size_t sims_per_draw = 1) {
    if (draws.empty()) throw ConfigError("threshold_probability: no posterior draws");
    const auto s = predict_aggregate(draws, rng, sims_per_draw);
    return threshold_probability(s, d);
}

inline ThresholdEstimate threshold_probability(const CrmPosterior& post, std::span<const std::size_t> perils, double d,
                                               const Horizon& hz, Rng& rng) {
    if (post.size() == 0) throw ConfigError("threshold_probability: posterior has no draws");
    const auto s = predict_group_aggregate(post, perils, hz, rng);
    return threshold_probability(s, d);
}

/// Pr[S <= D] averaged over draws by the Poisson-weighted series of inverse-gamma CDFs,
/// Pr[InvGamma(n kappa, theta) <= D] = Q(n kappa, theta / D), truncated at n_max.
inline double threshold_probability_series(std::span<const PredictiveDraw> draws, double d, int n_max = 50) {
    if (!(d > 0.0)) throw InputError("threshold_probability_series: D must be positive");
    if (draws.empty()) throw ConfigError("threshold_probability_series: no posterior draws");
    double total = 0.0;
    for (const auto& pd : draws) {
        double p = std::exp(-pd.mean_count);
        for (int n = 1; n <= n_max; ++n)
            p += std::exp(-pd.mean_count + n * std::log(pd.mean_count) - std::lgamma(n + 1.0)) *
                 boost::math::gamma_q(n * pd.kappa, pd.theta / d);
        total += p;
    }
    return total / double(draws.size());
}

/// Cumulative loss path over n_quarters for a group of perils under one posterior draw,
/// summing independent quarterly aggregates.
inline std::vector<double> simulate_cumulative_losses(const CrmDraw& d, std::span<const std::size_t> perils,
                                                      int first_season, std::size_t n_quarters, Rng& rng) {
    std::vector<double> out(n_quarters);
    double cum = 0.0;
    for (std::size_t q = 0; q < n_quarters; ++q) {
        const int season = int((q + std::size_t(first_season) - 1) % 4) + 1;
        for (std::size_t p : perils)
            cum += sample_aggregate({seasonal_rate(d.alpha[p], d.beta, season), d.kappa[p], d.theta[p]}, rng);
        out[q] = cum;
    }
    return out;
}

} // namespace catbond::crm
