#pragma once

// Synthetic catastrophe events and short-rate series with a full record of the truth.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "catbond/cir.hpp"
#include "catbond/crm.hpp"
#include "catbond/errors.hpp"
#include "catbond/random.hpp"

namespace catbond::harness {

struct SyntheticPeril {
    std::string name;
    double kappa = 1.0;
    double theta = 1.0;
    double alpha = 0.0;
    int severity_cluster = 0;
    int count_cluster = 0;
};

struct SyntheticSpec {
    std::vector<SyntheticPeril> perils;
    double beta = 0.0615;
    int first_year = 2008;
    int years = 13;

    cir::CirParams cir{3.0299, 3.2694, 0.00171}; // percent units
    double r0_percent = 0.9266;
    int rate_spacing_days = 7;
    int rate_years = 12;
    int fine_steps = 50;

    std::uint64_t seed = 1;

    void validate() const {
        if (perils.empty()) throw ConfigError("synthetic: no perils");
        for (const auto& p : perils)
            if (!(p.kappa > 0.0 && p.theta > 0.0) || !std::isfinite(p.alpha))
                throw ConfigError("synthetic: peril '" + p.name + "' needs kappa, theta > 0 and finite alpha");
        if (years < 1 || rate_years < 1 || rate_spacing_days < 1 || fine_steps < 1)
            throw ConfigError("synthetic: horizon settings must be positive");
        if (!(cir.alpha > 0.0 && cir.beta > 0.0 && cir.sigma2 > 0.0 && r0_percent > 0.0))
            throw ConfigError("synthetic: CIR parameters must be positive");
    }
};

/// Nine perils in two severity clusters, (kappa, theta) = (3, 2) and (8, 40), and two count levels.
inline SyntheticSpec two_cluster_spec(std::uint64_t seed) {
    SyntheticSpec s;
    s.seed = seed;
    const char* names[] = {"Flood", "Hailstorm", "Wildfire", "Tornado", "Winter",
                           "Windstorm", "Hurricane", "Earthquake", "Storm"};
    for (int i = 0; i < 9; ++i) {
        const bool a = i < 5;
        const bool low = i % 2 == 0;
        s.perils.push_back({names[i], a ? 3.0 : 8.0, a ? 2.0 : 40.0, low ? 0.4 : 1.0, a ? 0 : 1, low ? 0 : 1});
    }
    return s;
}

struct SyntheticData {
    std::vector<crm::ClaimEvent> events;
    crm::QuarterlyPanel panel;
    crm::DateRange range;
    std::vector<crm::Date> rate_dates;
    std::vector<double> yields_percent;
    std::vector<int> severity_truth;
    std::vector<int> count_truth;
};

inline crm::Date add_days(const crm::Date& d, int days) {
    return crm::Date{std::chrono::sys_days{d} + std::chrono::days{days}};
}

/// Events from the model's generative process with fixed labels; the quarterly aggregate
/// is split into individual claims by a flat Dirichlet. Rates from an Euler path on a grid
/// fine_steps times finer than the observations.
inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    using namespace std::chrono;
    spec.validate();
    Rng rng = make_rng(spec.seed, 0x5eed);
    SyntheticData out;
    out.range = {year{spec.first_year} / January / 1, year{spec.first_year + spec.years - 1} / December / 31};

    std::vector<std::string> names;
    for (const auto& p : spec.perils) {
        names.push_back(p.name);
        out.severity_truth.push_back(p.severity_cluster);
        out.count_truth.push_back(p.count_cluster);
    }
    for (int y = spec.first_year; y < spec.first_year + spec.years; ++y)
        for (int q = 1; q <= 4; ++q) {
            const crm::Date start = year{y} / month{unsigned(3 * q - 2)} / 1;
            const crm::Date stop = q == 4 ? crm::Date{year{y + 1} / January / 1} : crm::Date{year{y} / month{unsigned(3 * q + 1)} / 1};
            const int days = int((sys_days{stop} - sys_days{start}).count());
            for (const auto& p : spec.perils) {
                const long n = rnd::poisson(rng, crm::seasonal_rate(p.alpha, spec.beta, q));
                if (n == 0) continue;
                const double total = rnd::inverse_gamma(rng, double(n) * p.kappa, p.theta);
                std::vector<double> parts(static_cast<std::size_t>(n));
                double z = 0.0;
                for (double& v : parts) z += (v = rnd::gamma(rng, 1.0, 1.0));
                for (double v : parts) {
                    const int offset = int(rnd::uniform(rng) * days);
                    out.events.push_back({add_days(start, std::min(offset, days - 1)), p.name, total * v / z, 0});
                }
            }
        }
    out.panel = crm::build_panel(out.events, names, out.range);

    const crm::Date r_start = year{spec.first_year} / January / 2;
    const auto n_obs = std::size_t(std::floor(spec.rate_years * 365.25 / spec.rate_spacing_days)) + 1;
    const double dt = spec.rate_spacing_days / 365.25 / spec.fine_steps;
    double r = spec.r0_percent;
    for (std::size_t k = 0; k < n_obs; ++k) {
        out.rate_dates.push_back(add_days(r_start, int(k) * spec.rate_spacing_days));
        out.yields_percent.push_back(r);
        for (int f = 0; f < spec.fine_steps; ++f) r = cir::euler_step(r, spec.cir, dt, rnd::normal(rng));
    }
    return out;
}

/// Percent yields on their calendar dates to a decimal series in years from the first date.
inline cir::RateSeries to_rate_series(const std::vector<crm::Date>& dates, const std::vector<double>& yields_percent) {
    cir::RateSeries s;
    for (std::size_t k = 0; k < dates.size(); ++k) {
        s.times.push_back(double((std::chrono::sys_days{dates[k]} - std::chrono::sys_days{dates.front()}).count()) /
                          365.25);
        s.rates.push_back(yields_percent[k] / 100.0);
    }
    return s;
}

} // namespace catbond::harness
