#pragma once

// MCMC convergence and posterior summary tooling.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "catbond/errors.hpp"

namespace catbond::diagnostics {

/// Ordered draws of one scalar parameter.
struct Chain {
    std::vector<double> draws;
    int id = 0;
    std::uint64_t seed = 0;
};

namespace detail {

inline double mean(std::span<const double> x) {
    double s = 0.0;
    for (double v : x) s += v;
    return s / double(x.size());
}

inline double variance(std::span<const double> x) {
    const double m = mean(x);
    double s = 0.0;
    for (double v : x) s += (v - m) * (v - m);
    return s / double(x.size() - 1);
}

// Squared standard error of the mean by non-overlapping batch means, floor(sqrt(n)) batches.
inline double batch_means_se2(std::span<const double> x) {
    const std::size_t batches = static_cast<std::size_t>(std::sqrt(double(x.size())));
    const std::size_t size = x.size() / batches;
    std::vector<double> means(batches);
    for (std::size_t b = 0; b < batches; ++b) means[b] = mean(x.subspan(b * size, size));
    return variance(means) / double(batches);
}

} // namespace detail

/// Geweke z-score comparing the mean of the first `first_frac` of the chain with the
/// mean of the last `last_frac`.
inline double geweke(std::span<const double> chain, double first_frac = 0.1,
                     double last_frac = 0.5) {
    if (!(first_frac > 0.0 && last_frac > 0.0 && first_frac + last_frac <= 1.0))
        throw InputError("geweke: window fractions must be positive and sum to at most 1");
    const auto na = static_cast<std::size_t>(first_frac * double(chain.size()));
    const auto nb = static_cast<std::size_t>(last_frac * double(chain.size()));
    if (na < 10 || nb < 10)
        throw InputError("geweke: both windows need at least 10 draws (chain has " +
                         std::to_string(chain.size()) + ")");
    const auto a = chain.first(na);
    const auto b = chain.last(nb);
    if (detail::variance(a) <= 0.0 || detail::variance(b) <= 0.0)
        throw NumericalError("geweke: degenerate chain (zero variance window)");
    const double se2 = detail::batch_means_se2(a) + detail::batch_means_se2(b);
    if (!(se2 > 0.0)) throw NumericalError("geweke: degenerate chain (zero spectral variance)");
    return (detail::mean(a) - detail::mean(b)) / std::sqrt(se2);
}

struct BgrResult {
    double r_hat = 0.0;
    double within = 0.0;
    double between = 0.0;
    bool converged = false;
};

inline constexpr double bgr_threshold = 1.1;

/// Brooks-Gelman-Rubin potential scale reduction factor over equal-length chains.
inline BgrResult bgr(std::span<const std::vector<double>> chains) {
    if (chains.size() < 2) throw InputError("bgr: needs at least two chains");
    const std::size_t n = chains.front().size();
    for (const auto& c : chains)
        if (c.size() != n) throw InputError("bgr: chains must have equal length");
    if (n < 10) throw InputError("bgr: chains need at least 10 draws");

    std::vector<double> means;
    double w = 0.0;
    for (const auto& c : chains) {
        means.push_back(detail::mean(c));
        w += detail::variance(c);
    }
    w /= double(chains.size());
    if (!(w > 0.0)) throw NumericalError("bgr: zero within-chain variance");
    const double b = double(n) * detail::variance(means);
    const double nn = double(n);
    BgrResult r;
    r.within = w;
    r.between = b;
    r.r_hat = std::sqrt(((nn - 1.0) / nn * w + b / nn) / w);
    r.converged = r.r_hat < bgr_threshold;
    return r;
}

inline BgrResult bgr(std::span<const Chain> chains) {
    std::vector<std::vector<double>> raw;
    for (const auto& c : chains) raw.push_back(c.draws);
    return bgr(std::span<const std::vector<double>>(raw));
}

struct BgrTracePoint {
    std::size_t iteration = 0;
    double r_hat = 0.0;
};

/// R-hat computed on growing prefixes of the chains, for plotting outside the repo.
inline std::vector<BgrTracePoint> bgr_trace(std::span<const std::vector<double>> chains,
                                            std::size_t points = 20) {
    if (chains.empty()) throw InputError("bgr_trace: no chains");
    const std::size_t n = chains.front().size();
    std::vector<BgrTracePoint> out;
    for (std::size_t p = 1; p <= points; ++p) {
        const std::size_t len = n * p / points;
        if (len < 10) continue;
        std::vector<std::vector<double>> prefix;
        for (const auto& c : chains) prefix.emplace_back(c.begin(), c.begin() + long(len));
        try {
            out.push_back({len, bgr(std::span<const std::vector<double>>(prefix)).r_hat});
        } catch (const NumericalError&) {
            // constant prefix: no point to report
        }
    }
    return out;
}

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
    double width() const { return hi - lo; }
};

/// Shortest contiguous window of sorted draws holding ceil(mass*n) of them.
inline Interval hpd(std::span<const double> samples, double mass = 0.95) {
    if (samples.size() < 100) throw InputError("hpd: needs at least 100 samples");
    if (!(mass > 0.0 && mass <= 1.0)) throw InputError("hpd: mass must lie in (0, 1]");
    std::vector<double> s(samples.begin(), samples.end());
    std::sort(s.begin(), s.end());
    const auto k = static_cast<std::size_t>(std::ceil(mass * double(s.size()) - 1e-9));
    std::size_t best = 0;
    for (std::size_t i = 1; i + k <= s.size(); ++i)
        if (s[i + k - 1] - s[i] < s[best + k - 1] - s[best]) best = i;
    return {s[best], s[best + k - 1]};
}

/// One row of a posterior summary table: mean, sd, 95% HPD, Geweke z.
struct ParameterSummary {
    std::string name;
    double mean = 0.0;
    double sd = 0.0;
    Interval hpd95;
    double geweke_z = 0.0;
    bool geweke_ok = true;
};

inline ParameterSummary summarize(std::string name, std::span<const double> draws) {
    ParameterSummary s;
    s.name = std::move(name);
    s.mean = detail::mean(draws);
    s.sd = std::sqrt(detail::variance(draws));
    s.hpd95 = hpd(draws, 0.95);
    try {
        s.geweke_z = geweke(draws);
    } catch (const NumericalError&) {
        s.geweke_z = 0.0;
        s.geweke_ok = false;
    }
    return s;
}

/// Hubert-Arabie adjusted Rand index between two labelings of the same items.
inline double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
    if (a.size() != b.size()) throw InputError("adjusted_rand_index: label vectors differ in size");
    const std::size_t n = a.size();
    std::map<std::pair<int, int>, double> joint;
    std::map<int, double> ra, rb;
    for (std::size_t i = 0; i < n; ++i) {
        joint[{a[i], b[i]}] += 1.0;
        ra[a[i]] += 1.0;
        rb[b[i]] += 1.0;
    }
    auto c2 = [](double x) { return x * (x - 1.0) / 2.0; };
    double index = 0.0, sa = 0.0, sb = 0.0;
    for (const auto& [k, v] : joint) index += c2(v);
    for (const auto& [k, v] : ra) sa += c2(v);
    for (const auto& [k, v] : rb) sb += c2(v);
    const double total = c2(double(n));
    const double expected = total > 0.0 ? sa * sb / total : 0.0;
    const double max_index = 0.5 * (sa + sb);
    if (max_index == expected) return 1.0; // both partitions trivial and identical in structure
    return (index - expected) / (max_index - expected);
}

} // namespace catbond::diagnostics
