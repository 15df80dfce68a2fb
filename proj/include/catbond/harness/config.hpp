#pragma once

// Run configuration: one JSON file; --seed, --out and --threads override it.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "catbond/cir.hpp"
#include "catbond/crm.hpp"
#include "catbond/distfit.hpp"
#include "catbond/errors.hpp"
#include "catbond/harness/io.hpp"
#include "catbond/harness/synthetic.hpp"
#include "catbond/mcmc.hpp"
#include "catbond/pricing.hpp"

namespace catbond::harness {

using json = nlohmann::json;

struct PricingConfig {
    double delta0_bps = 250.0;
    std::vector<double> maturities_years{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    std::size_t scenarios = 10000;
    std::optional<double> r0;            // decimal; defaults to the last observed rate
    bool clusters = true;                // price each severity cluster as well as the industry index
    std::vector<std::string> curve_instruments; // empty: every instrument
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::string output_dir = "out";
    int threads = 1;

    std::string events_csv;
    std::string rates_csv;
    std::vector<std::string> perils;
    crm::DateRange date_range;

    std::optional<SyntheticSpec> synthetic;
    std::vector<distfit::Family> families{distfit::all_families.begin(), distfit::all_families.end()};

    crm::CrmHyperParams crm;
    mcmc::McmcConfig crm_mcmc{40000, 10000, 10, 0, 3};
    std::size_t cir_m = 20;
    cir::CirHyper cir;
    mcmc::McmcConfig cir_mcmc{15000, 5000, 1, 0, 3};

    pricing::BondSpec bond;
    PricingConfig pricing;

    json source; // the parsed document, for hashing

    void validate() const {
        if (perils.empty()) throw ConfigError("config: data.perils is empty");
        if (events_csv.empty() || rates_csv.empty()) throw ConfigError("config: data.events_csv and data.rates_csv are required");
        if (threads < 1) throw ConfigError("config: threads must be at least 1");
        crm.validate(perils.size());
        crm_mcmc.validate();
        cir.validate();
        cir_mcmc.validate();
        bond.validate();
        if (pricing.scenarios < 2) throw ConfigError("config: pricing.scenarios must be at least 2");
        for (double y : pricing.maturities_years) {
            const double periods = y / bond.period_length;
            if (!(y > 0.0) || std::abs(periods - std::round(periods)) > 1e-9)
                throw ConfigError("config: maturity " + std::to_string(y) + " is not a whole number of periods");
        }
        if (pricing.r0 && !(*pricing.r0 > 0.0)) throw ConfigError("config: pricing.r0 must be positive");
        if (synthetic) synthetic->validate();
    }

    int periods(double years) const { return int(std::lround(years / bond.period_length)); }
};

namespace detail {

template <class T>
void get_to(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        j.at(key).get_to(out);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: key '") + key + "': " + e.what());
    }
}

inline void read_mcmc(const json& j, mcmc::McmcConfig& m) {
    get_to(j, "n_iter", m.n_iter);
    get_to(j, "burn_in", m.burn_in);
    get_to(j, "thin", m.thin);
    get_to(j, "n_chains", m.n_chains);
}

inline std::string resolve(const std::filesystem::path& base, const std::string& p) {
    if (p.empty()) return p;
    const std::filesystem::path path(p);
    return path.is_absolute() ? p : (base / path).lexically_normal().string();
}

inline SyntheticSpec read_synthetic(const json& j) {
    SyntheticSpec s;
    if (j.contains("perils")) {
        for (const auto& p : j.at("perils")) {
            SyntheticPeril sp;
            get_to(p, "name", sp.name);
            get_to(p, "kappa", sp.kappa);
            get_to(p, "theta", sp.theta);
            get_to(p, "alpha", sp.alpha);
            get_to(p, "severity_cluster", sp.severity_cluster);
            get_to(p, "count_cluster", sp.count_cluster);
            s.perils.push_back(sp);
        }
    }
    get_to(j, "beta", s.beta);
    get_to(j, "first_year", s.first_year);
    get_to(j, "years", s.years);
    if (j.contains("cir")) {
        const auto& c = j.at("cir");
        get_to(c, "alpha", s.cir.alpha);
        get_to(c, "beta", s.cir.beta);
        get_to(c, "sigma2", s.cir.sigma2);
        get_to(c, "r0_percent", s.r0_percent);
        get_to(c, "spacing_days", s.rate_spacing_days);
        get_to(c, "years", s.rate_years);
        get_to(c, "fine_steps", s.fine_steps);
    }
    return s;
}

} // namespace detail

inline RunConfig parse_config(const json& j, const std::filesystem::path& base_dir = ".") {
    using detail::get_to;
    RunConfig c;
    c.source = j;
    if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
    if (!j.contains("seed")) throw ConfigError("config: 'seed' is mandatory");
    get_to(j, "seed", c.seed);
    get_to(j, "output_dir", c.output_dir);
    get_to(j, "threads", c.threads);

    if (!j.contains("data")) throw ConfigError("config: 'data' section is required");
    const auto& d = j.at("data");
    get_to(d, "events_csv", c.events_csv);
    get_to(d, "rates_csv", c.rates_csv);
    c.events_csv = detail::resolve(base_dir, c.events_csv);
    c.rates_csv = detail::resolve(base_dir, c.rates_csv);
    get_to(d, "perils", c.perils);
    std::vector<std::string> range;
    get_to(d, "date_range", range);
    if (range.size() != 2) throw ConfigError("config: data.date_range must be [first, last]");
    c.date_range = {parse_date_or_throw(range[0], "config: data.date_range"),
                    parse_date_or_throw(range[1], "config: data.date_range")};

    if (j.contains("synthetic")) {
        c.synthetic = detail::read_synthetic(j.at("synthetic"));
        c.synthetic->seed = c.seed;
    }
    if (j.contains("distfit") && j.at("distfit").contains("families")) {
        c.families.clear();
        for (const auto& f : j.at("distfit").at("families")) {
            std::string s;
            get_to(json{{"family", f}}, "family", s);
            try {
                c.families.push_back(distfit::parse_family(s));
            } catch (const InputError& e) {
                throw ConfigError(std::string("config: distfit.families: ") + e.what());
            }
        }
    }
    if (j.contains("crm")) {
        const auto& k = j.at("crm");
        get_to(k, "gamma1", c.crm.gamma1);
        get_to(k, "gamma2", c.crm.gamma2);
        get_to(k, "beta_prior_mean", c.crm.beta_prior_mean);
        get_to(k, "beta_prior_precision", c.crm.beta_prior_precision);
        get_to(k, "truncation", c.crm.truncation);
        if (k.contains("hyperprior")) {
            crm::HyperPrior hp;
            get_to(k.at("hyperprior"), "shape", hp.shape);
            get_to(k.at("hyperprior"), "rate", hp.rate);
            c.crm.hyperpriors.fill(hp);
        }
        if (k.contains("mcmc")) detail::read_mcmc(k.at("mcmc"), c.crm_mcmc);
    }
    if (j.contains("cir")) {
        const auto& k = j.at("cir");
        get_to(k, "M", c.cir_m);
        get_to(k, "upsilon0", c.cir.upsilon0);
        get_to(k, "beta0", c.cir.beta0);
        get_to(k, "mu0", c.cir.mu0);
        get_to(k, "precision0", c.cir.precision0);
        if (k.contains("mcmc")) detail::read_mcmc(k.at("mcmc"), c.cir_mcmc);
    }
    if (j.contains("bond")) {
        const auto& b = j.at("bond");
        get_to(b, "face", c.bond.face);
        get_to(b, "recovery", c.bond.recovery);
        get_to(b, "threshold_millions", c.bond.threshold);
        get_to(b, "period_length_years", c.bond.period_length);
        double years = c.bond.maturity_years();
        get_to(b, "maturity_years", years);
        c.bond.maturity = int(std::lround(years / c.bond.period_length));
    }
    if (j.contains("pricing")) {
        const auto& p = j.at("pricing");
        get_to(p, "delta0_bps", c.pricing.delta0_bps);
        get_to(p, "maturities_years", c.pricing.maturities_years);
        get_to(p, "scenarios", c.pricing.scenarios);
        get_to(p, "clusters", c.pricing.clusters);
        get_to(p, "curve_instruments", c.pricing.curve_instruments);
        if (p.contains("r0")) c.pricing.r0 = p.at("r0").get<double>();
    }
    return c;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config '" + path + "': " + e.what());
    }
    return parse_config(j, std::filesystem::path(path).parent_path());
}

/// Applies command-line overrides; synthetic runs without data paths write and read
/// events.csv and rates.csv in the output directory.
inline void finalize(RunConfig& c, std::optional<std::uint64_t> seed = {}, std::optional<std::string> out = {},
                     std::optional<int> threads = {}) {
    if (seed) {
        c.seed = *seed;
        if (c.synthetic) c.synthetic->seed = *seed;
    }
    if (out) c.output_dir = *out;
    if (threads) c.threads = *threads;
    if (c.synthetic) {
        if (c.events_csv.empty()) c.events_csv = (std::filesystem::path(c.output_dir) / "events.csv").string();
        if (c.rates_csv.empty()) c.rates_csv = (std::filesystem::path(c.output_dir) / "rates.csv").string();
    }
    c.validate();
}

/// Stable 64-bit hash of the effective configuration.
inline std::uint64_t config_hash(const RunConfig& c) {
    json j = c.source;
    j["seed"] = c.seed;
    j["threads"] = nullptr; // thread count does not change results
    j["output_dir"] = nullptr;
    return fnv1a(j.dump());
}

} // namespace catbond::harness
