#pragma once

// Pipeline stages. Each stage reads its inputs from files (the data CSVs or an earlier
// stage's outputs in the output directory) and writes its own, so running a subcommand
// alone gives the same bytes as the composed run.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <boost/version.hpp>
#include <json.hpp>

#include "catbond/cir.hpp"
#include "catbond/crm.hpp"
#include "catbond/diagnostics.hpp"
#include "catbond/distfit.hpp"
#include "catbond/entropy.hpp"
#include "catbond/errors.hpp"
#include "catbond/harness/config.hpp"
#include "catbond/harness/io.hpp"
#include "catbond/harness/synthetic.hpp"
#include "catbond/pricing.hpp"
#include "catbond/random.hpp"

namespace catbond::harness {

inline constexpr const char* version = "0.1.0";

namespace fs = std::filesystem;

inline const std::vector<std::string>& output_files() {
    static const std::vector<std::string> files{
        "distfit.csv",      "events.csv",          "rates.csv",         "truth.json",
        "posterior_crm.csv", "cluster_occupancy.csv", "crm_fit.json",    "posterior_cir.csv",
        "cir_fit.json",     "price_distribution.csv", "price_summary.json", "premium_curve.csv",
        "diagnostics.json"};
    return files;
}

inline std::string out_path(const RunConfig& c, const std::string& name) { return (fs::path(c.output_dir) / name).string(); }

inline void ensure_output_dir(const RunConfig& c) {
    std::error_code ec;
    fs::create_directories(c.output_dir, ec);
    if (ec) throw ConfigError("cannot create output directory '" + c.output_dir + "': " + ec.message());
}

/// Rethrows any failure inside `body` with the stage name prefixed, keeping its exit code.
template <class F>
void in_stage(const std::string& stage, F&& body) {
    try {
        body();
    } catch (const Error& e) {
        const std::string msg = "stage '" + stage + "': " + e.what();
        switch (e.kind()) {
        case ErrorKind::config: throw ConfigError(msg);
        case ErrorKind::data: throw InputError(msg);
        case ErrorKind::numerical: throw NumericalError(msg);
        }
    } catch (const json::exception& e) {
        throw InputError("stage '" + stage + "': " + e.what());
    }
}

inline json read_json(const std::string& path) {
    auto in = open_input(path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw InputError(path + ": " + e.what());
    }
}

inline void write_json(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    out << j.dump(2) << '\n';
    if (!out) throw ConfigError("failed writing '" + path + "'");
}

/// JSON has no NaN; missing values become null.
inline json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

// ---------------------------------------------------------------- simulate

inline void stage_simulate(const RunConfig& c) {
    if (!c.synthetic) throw ConfigError("simulate: config has no 'synthetic' section");
    const auto data = generate_synthetic(*c.synthetic);
    for (const auto* p : {&c.events_csv, &c.rates_csv}) {
        const auto parent = fs::path(*p).parent_path();
        if (!parent.empty()) fs::create_directories(parent);
    }
    write_events(c.events_csv, data.events);
    write_rates(c.rates_csv, data.rate_dates, data.yields_percent);

    json truth;
    truth["seed"] = c.synthetic->seed;
    truth["beta"] = c.synthetic->beta;
    truth["first_year"] = c.synthetic->first_year;
    truth["years"] = c.synthetic->years;
    truth["events"] = data.events.size();
    for (std::size_t i = 0; i < c.synthetic->perils.size(); ++i) {
        const auto& p = c.synthetic->perils[i];
        long n = 0;
        double loss = 0.0;
        for (std::size_t t = 0; t < data.panel.n_quarters(); ++t) {
            n += data.panel.counts[i][t];
            loss += data.panel.losses[i][t];
        }
        truth["perils"].push_back({{"name", p.name},
                                   {"kappa", p.kappa},
                                   {"theta", p.theta},
                                   {"alpha", p.alpha},
                                   {"severity_cluster", p.severity_cluster},
                                   {"count_cluster", p.count_cluster},
                                   {"total_count", n},
                                   {"total_loss_millions", loss}});
    }
    const auto& cp = c.synthetic->cir;
    truth["cir_percent"] = {{"alpha", cp.alpha}, {"beta", cp.beta}, {"sigma2", cp.sigma2},
                            {"r0", c.synthetic->r0_percent}, {"long_run_mean", cp.long_run_mean()}};
    // r = r_pct / 100 rescales alpha by 1/100 and sigma2 by 1/100, leaving beta unchanged
    truth["cir_decimal"] = {{"alpha", cp.alpha / 100.0}, {"beta", cp.beta}, {"sigma2", cp.sigma2 / 100.0},
                            {"r0", c.synthetic->r0_percent / 100.0}, {"long_run_mean", cp.long_run_mean() / 100.0}};
    truth["rate_observations"] = data.rate_dates.size();
    write_json(out_path(c, "truth.json"), truth);
}

// ---------------------------------------------------------------- distfit

inline void stage_distfit(const RunConfig& c) {
    const auto events = ingest_events(c.events_csv);
    std::map<std::string, std::vector<double>> by_peril;
    std::vector<double> pooled;
    for (const auto& e : events)
        if (std::find(c.perils.begin(), c.perils.end(), e.peril) != c.perils.end()) {
            by_peril[e.peril].push_back(e.loss);
            pooled.push_back(e.loss);
        }
    const auto seed = stage_seed(c.seed, "distfit");
    CsvWriter w(out_path(c, "distfit.csv"));
    w.row(std::vector<std::string>{"sample", "n", "rank", "family", "param1", "param2", "log_likelihood", "ks_stat",
                                   "ks_pvalue", "ad_stat", "ad_pvalue", "aic", "bic", "converged"});
    auto emit = [&](const std::string& label, const std::vector<double>& x) {
        const auto reports = distfit::rank_models(x, c.families, seed);
        int rank = 0;
        for (const auto& r : reports)
            w.row(label, x.size(), ++rank, std::string(distfit::name(r.family)), r.mle_params[0], r.mle_params[1],
                  r.log_likelihood, r.ks_stat, r.ks_pvalue, r.ad_stat, r.ad_pvalue, r.aic, r.bic, int(r.converged));
    };
    if (pooled.size() < 4) throw InputError("distfit: fewer than 4 events for the configured perils");
    emit("all", pooled);
    for (const auto& p : c.perils) {
        const auto it = by_peril.find(p);
        if (it != by_peril.end() && it->second.size() >= 20) emit(p, it->second);
    }
    w.close();
}

// ---------------------------------------------------------------- fit-crm

inline mcmc::McmcConfig seeded(mcmc::McmcConfig m, const RunConfig& c, const char* stage) {
    m.seed = stage_seed(c.seed, stage);
    return m;
}

inline crm::QuarterlyPanel load_panel(const RunConfig& c) {
    const auto events = ingest_events(c.events_csv);
    return crm::build_panel(events, c.perils, c.date_range);
}

inline const std::vector<std::string> crm_columns{"chain",  "draw",  "peril", "kappa", "theta", "alpha",
                                                 "severity_label", "count_label", "beta", "zeta1", "zeta2",
                                                 "eta1", "eta2", "psi1", "psi2"};

inline void write_crm_posterior(const RunConfig& c, const crm::CrmPosterior& post) {
    CsvWriter w(out_path(c, "posterior_crm.csv"));
    w.row(crm_columns);
    for (std::size_t ch = 0; ch < post.chains.size(); ++ch)
        for (std::size_t k = 0; k < post.chains[ch].size(); ++k) {
            const auto& d = post.chains[ch][k];
            for (std::size_t i = 0; i < post.perils.size(); ++i)
                w.row(ch, k, post.perils[i], d.kappa[i], d.theta[i], d.alpha[i], d.severity_label[i], d.count_label[i],
                      d.beta, d.base.zeta1, d.base.zeta2, d.base.eta1, d.base.eta2, d.base.psi1, d.base.psi2);
        }
    w.close();

    json j;
    j["perils"] = post.perils;
    j["next_season"] = post.next_season;
    j["mcmc"] = {{"n_iter", post.mcmc.n_iter}, {"burn_in", post.mcmc.burn_in}, {"thin", post.mcmc.thin},
                 {"n_chains", post.mcmc.n_chains}, {"seed", post.mcmc.seed}};
    j["truncation"] = post.hyper.truncation;
    j["acceptance"] = json::object();
    for (const auto& [k, v] : post.acceptance) j["acceptance"][k] = num(v);
    j["warnings"] = post.warnings;
    write_json(out_path(c, "crm_fit.json"), j);
}

inline crm::CrmPosterior read_crm_posterior(const RunConfig& c) {
    const json meta = read_json(out_path(c, "crm_fit.json"));
    crm::CrmPosterior post;
    post.perils = meta.at("perils").get<std::vector<std::string>>();
    post.next_season = meta.at("next_season").get<int>();
    post.hyper = c.crm;
    post.hyper.truncation = meta.at("truncation").get<int>();
    const auto& m = meta.at("mcmc");
    post.mcmc = {m.at("n_iter").get<int>(), m.at("burn_in").get<int>(), m.at("thin").get<int>(),
                 m.at("seed").get<std::uint64_t>(), m.at("n_chains").get<int>()};
    for (const auto& [k, v] : meta.at("acceptance").items())
        post.acceptance[k] = v.is_null() ? std::nan("") : v.get<double>();
    post.warnings = meta.at("warnings").get<std::vector<std::string>>();

    const auto t = read_csv(out_path(c, "posterior_crm.csv"));
    if (t.header != crm_columns) throw InputError("posterior_crm.csv: unexpected header");
    const std::size_t n = post.perils.size();
    if (n == 0 || t.rows.size() % n != 0) throw InputError("posterior_crm.csv: row count is not a multiple of the peril count");
    auto as_int = [&](std::size_t r, std::size_t col) {
        int v = 0;
        if (!parse_int(t.rows[r][col], v)) throw InputError("posterior_crm.csv: row " + std::to_string(r + 2) + ", column '" + t.header[col] + "' is not an integer");
        return v;
    };
    for (std::size_t r0 = 0; r0 < t.rows.size(); r0 += n) {
        const int ch = as_int(r0, 0);
        if (ch < 0) throw InputError("posterior_crm.csv: negative chain index");
        if (std::size_t(ch) >= post.chains.size()) post.chains.resize(std::size_t(ch) + 1);
        crm::CrmDraw d;
        d.beta = cell_double(t, r0, 8);
        d.base = {cell_double(t, r0, 9),  cell_double(t, r0, 10), cell_double(t, r0, 11),
                  cell_double(t, r0, 12), cell_double(t, r0, 13), cell_double(t, r0, 14)};
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t r = r0 + i;
            if (t.rows[r][2] != post.perils[i]) throw InputError("posterior_crm.csv: peril order broken at row " + std::to_string(r + 2));
            d.kappa.push_back(cell_double(t, r, 3));
            d.theta.push_back(cell_double(t, r, 4));
            d.alpha.push_back(cell_double(t, r, 5));
            d.severity_label.push_back(as_int(r, 6));
            d.count_label.push_back(as_int(r, 7));
            if (d.severity_label.back() < 0 || d.severity_label.back() >= post.hyper.truncation ||
                d.count_label.back() < 0 || d.count_label.back() >= post.hyper.truncation)
                throw InputError("posterior_crm.csv: label out of range at row " + std::to_string(r + 2));
        }
        std::vector<int> sev_seen = d.severity_label, cnt_seen = d.count_label;
        std::sort(sev_seen.begin(), sev_seen.end());
        std::sort(cnt_seen.begin(), cnt_seen.end());
        d.severity_clusters = int(std::unique(sev_seen.begin(), sev_seen.end()) - sev_seen.begin());
        d.count_clusters = int(std::unique(cnt_seen.begin(), cnt_seen.end()) - cnt_seen.begin());
        post.chains[std::size_t(ch)].push_back(std::move(d));
    }
    return post;
}

inline void write_cluster_occupancy(const RunConfig& c, const crm::CrmPosterior& post) {
    CsvWriter w(out_path(c, "cluster_occupancy.csv"));
    w.row(std::vector<std::string>{"process", "peril", "cluster", "fraction", "modal", "mode_partition"});
    for (auto which : {crm::Process::severity, crm::Process::count}) {
        const auto s = crm::cluster_summary(post, which);
        const std::string label = which == crm::Process::severity ? "severity" : "count";
        for (std::size_t i = 0; i < post.perils.size(); ++i)
            for (std::size_t h = 0; h < s.occupancy[i].size(); ++h)
                if (s.occupancy[i][h] > 0.0)
                    w.row(label, post.perils[i], h, s.occupancy[i][h], int(s.modal[i] == int(h)), s.partition[i]);
    }
    w.close();
}

inline void stage_fit_crm(const RunConfig& c) {
    const auto panel = load_panel(c);
    const auto post = crm::fit(panel, c.crm, seeded(c.crm_mcmc, c, "fit-crm"), c.threads);
    write_crm_posterior(c, post);
    write_cluster_occupancy(c, post);
}

// ---------------------------------------------------------------- fit-cir

inline void stage_fit_cir(const RunConfig& c) {
    const auto rates = ingest_rates(c.rates_csv);
    const auto post = cir::gibbs_fit(rates.series, c.cir_m, c.cir, seeded(c.cir_mcmc, c, "fit-cir"), c.threads);
    CsvWriter w(out_path(c, "posterior_cir.csv"));
    w.row(std::vector<std::string>{"chain", "draw", "alpha", "beta", "sigma2"});
    for (std::size_t ch = 0; ch < post.chains.size(); ++ch)
        for (std::size_t k = 0; k < post.chains[ch].size(); ++k) {
            const auto& p = post.chains[ch][k];
            w.row(ch, k, p.alpha, p.beta, p.sigma2);
        }
    w.close();
    json j;
    j["m"] = post.m;
    j["obs_spacing_years"] = post.obs_spacing;
    j["step_years"] = post.step;
    j["mcmc"] = {{"n_iter", post.mcmc.n_iter}, {"burn_in", post.mcmc.burn_in}, {"thin", post.mcmc.thin},
                 {"n_chains", post.mcmc.n_chains}, {"seed", post.mcmc.seed}};
    j["latent_acceptance"] = json::array();
    for (double a : post.latent_acceptance) j["latent_acceptance"].push_back(num(a));
    j["last_rate"] = rates.series.rates.back();
    j["warnings"] = post.warnings;
    write_json(out_path(c, "cir_fit.json"), j);
}

inline cir::CirPosterior read_cir_posterior(const RunConfig& c) {
    const json meta = read_json(out_path(c, "cir_fit.json"));
    cir::CirPosterior post;
    post.m = meta.at("m").get<std::size_t>();
    post.obs_spacing = meta.at("obs_spacing_years").get<double>();
    post.step = meta.at("step_years").get<double>();
    const auto& m = meta.at("mcmc");
    post.mcmc = {m.at("n_iter").get<int>(), m.at("burn_in").get<int>(), m.at("thin").get<int>(),
                 m.at("seed").get<std::uint64_t>(), m.at("n_chains").get<int>()};
    for (const auto& a : meta.at("latent_acceptance")) post.latent_acceptance.push_back(a.is_null() ? std::nan("") : a.get<double>());
    post.warnings = meta.at("warnings").get<std::vector<std::string>>();
    const auto t = read_csv(out_path(c, "posterior_cir.csv"));
    if (t.header != std::vector<std::string>{"chain", "draw", "alpha", "beta", "sigma2"})
        throw InputError("posterior_cir.csv: unexpected header");
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        int ch = 0;
        if (!parse_int(t.rows[r][0], ch) || ch < 0) throw InputError("posterior_cir.csv: bad chain index at row " + std::to_string(r + 2));
        if (std::size_t(ch) >= post.chains.size()) post.chains.resize(std::size_t(ch) + 1);
        post.chains[std::size_t(ch)].push_back({cell_double(t, r, 2), cell_double(t, r, 3), cell_double(t, r, 4)});
    }
    if (post.chains.empty()) throw InputError("posterior_cir.csv: no draws");
    return post;
}

// ---------------------------------------------------------------- scenarios

struct Instrument {
    std::string name;
    std::vector<std::size_t> perils;
};

/// The industry index over every peril, then one index per cluster of the most frequent
/// severity partition when it has more than one cluster.
inline std::vector<Instrument> instruments(const RunConfig& c, const crm::CrmPosterior& post) {
    std::vector<Instrument> out{{"industry", {}}};
    for (std::size_t i = 0; i < post.perils.size(); ++i) out[0].perils.push_back(i);
    if (c.pricing.clusters) {
        const auto s = crm::cluster_summary(post, crm::Process::severity);
        const int k = *std::max_element(s.partition.begin(), s.partition.end()) + 1;
        if (k > 1)
            for (int g = 0; g < k; ++g) {
                Instrument ins{"cluster_" + std::to_string(g + 1), {}};
                for (std::size_t i = 0; i < s.partition.size(); ++i)
                    if (s.partition[i] == g) ins.perils.push_back(i);
                out.push_back(std::move(ins));
            }
    }
    return out;
}

struct ScenarioBook {
    std::vector<Instrument> instruments;
    std::vector<pricing::ScenarioPaths> paths; // one per instrument, sharing the rate paths
    double r0 = 0.0;
    std::size_t substeps = 1;
};

/// Joint rate/loss scenarios: scenario k uses posterior draw floor(k D / N) from each model.
/// Rates follow Euler steps at the observation spacing; each period's rate is the left-point
/// integral of r over the period. Losses are cumulative quarterly aggregates per instrument.
inline ScenarioBook build_scenarios(const RunConfig& c, const crm::CrmPosterior& crm_post,
                                    const cir::CirPosterior& cir_post, double last_rate, int horizon) {
    if (std::abs(c.bond.period_length - 0.25) > 1e-12)
        throw ConfigError("pricing: the loss model is quarterly, so bond.period_length_years must be 0.25");
    ScenarioBook book;
    book.instruments = instruments(c, crm_post);
    book.r0 = c.pricing.r0.value_or(last_rate);
    book.substeps = std::max<std::size_t>(1, std::size_t(std::lround(c.bond.period_length / cir_post.obs_spacing)));
    const double h = c.bond.period_length / double(book.substeps);
    const std::size_t n = c.pricing.scenarios, t_max = std::size_t(horizon), np = crm_post.perils.size();
    const auto cir_draws = cir_post.draws();
    if (crm_post.size() == 0 || cir_draws.empty()) throw InputError("pricing: empty posterior");

    Matrix rates(n, t_max);
    std::vector<Matrix> cum(book.instruments.size(), Matrix(n, t_max));
    std::vector<double> quarter(np);
    Rng rng = make_rng(stage_seed(c.seed, "scenarios"));
    for (std::size_t k = 0; k < n; ++k) {
        const auto& cp = cir_draws[k * cir_draws.size() / n];
        const auto& cd = crm_post.draw(k * crm_post.size() / n);
        double r = book.r0;
        std::vector<double> running(book.instruments.size(), 0.0);
        for (std::size_t t = 0; t < t_max; ++t) {
            double integral = 0.0;
            for (std::size_t s = 0; s < book.substeps; ++s) {
                integral += r * h;
                r = cir::euler_step(r, cp, h, rnd::normal(rng));
            }
            rates(k, t) = integral;
            const int season = int((t + std::size_t(crm_post.next_season) - 1) % 4) + 1;
            for (std::size_t p = 0; p < np; ++p)
                quarter[p] = crm::sample_aggregate({crm::seasonal_rate(cd.alpha[p], cd.beta, season), cd.kappa[p], cd.theta[p]}, rng);
            for (std::size_t g = 0; g < book.instruments.size(); ++g) {
                for (std::size_t p : book.instruments[g].perils) running[g] += quarter[p];
                cum[g](k, t) = running[g];
            }
        }
    }
    for (auto& m : cum) book.paths.push_back({rates, std::move(m)});
    return book;
}

struct PricingInputs {
    crm::CrmPosterior crm_post;
    cir::CirPosterior cir_post;
    double last_rate = 0.0;
};

inline PricingInputs load_pricing_inputs(const RunConfig& c) {
    PricingInputs in{read_crm_posterior(c), read_cir_posterior(c), 0.0};
    in.last_rate = read_json(out_path(c, "cir_fit.json")).at("last_rate").get<double>();
    return in;
}

inline int horizon_periods(const RunConfig& c) {
    int h = c.bond.maturity;
    for (double y : c.pricing.maturities_years) h = std::max(h, c.periods(y));
    return h;
}

/// Market price of risk implied by the industry instrument at the bond's maturity priced
/// at the hypothetical spread delta0.
struct Reference {
    double lambda = 0.0;
    double p0 = 0.0;
    double residual = 0.0;
};

inline Reference reference_lambda(const RunConfig& c, const ScenarioBook& book) {
    const auto sc = book.paths.front().at(c.bond.maturity);
    const auto alpha = pricing::discounted_payoffs(sc, c.bond);
    Reference ref;
    ref.p0 = pricing::issue_price(sc, c.bond, c.pricing.delta0_bps / 1e4);
    const auto w = entropy::calibrate(alpha, ref.p0);
    ref.lambda = w.lambda;
    ref.residual = w.constraint_residual;
    return ref;
}

// ---------------------------------------------------------------- price

inline void stage_price(const RunConfig& c) {
    const auto in = load_pricing_inputs(c);
    const auto book = build_scenarios(c, in.crm_post, in.cir_post, in.last_rate, horizon_periods(c));
    const auto ref = reference_lambda(c, book);

    CsvWriter w(out_path(c, "price_distribution.csv"));
    w.row(std::vector<std::string>{"instrument", "scenario", "loss_millions", "discount_factor", "discounted_payoff",
                                   "physical_weight", "risk_neutral_weight"});
    json summary;
    summary["maturity_years"] = c.bond.maturity_years();
    summary["threshold_millions"] = c.bond.threshold;
    summary["delta0_bps"] = c.pricing.delta0_bps;
    summary["issue_price"] = ref.p0;
    summary["lambda"] = ref.lambda;
    summary["calibration_residual"] = ref.residual;
    summary["r0"] = book.r0;
    summary["scenarios"] = c.pricing.scenarios;
    for (std::size_t g = 0; g < book.instruments.size(); ++g) {
        const auto sc = book.paths[g].at(c.bond.maturity);
        const auto alpha = pricing::discounted_payoffs(sc, c.bond);
        const auto q = entropy::risk_neutral_weights(alpha, ref.lambda);
        const auto phys = pricing::price(sc, c.bond);
        const auto rn = pricing::price(sc, c.bond, q.weights);
        const auto disc = pricing::discount_factors(sc.rates, c.bond.maturity);
        for (std::size_t k = 0; k < sc.size(); ++k)
            w.row(book.instruments[g].name, k, sc.losses[k], disc[k], alpha[k], phys.weights[k], q.weights[k]);
        const auto trig = crm::threshold_probability(sc.losses, c.bond.threshold);
        json perils = json::array();
        for (auto p : book.instruments[g].perils) perils.push_back(in.crm_post.perils[p]);
        auto moments = [](const pricing::Moments& m) {
            return json{{"mean", m.mean}, {"sd", m.sd}, {"skewness", m.skewness}, {"excess_kurtosis", m.excess_kurtosis}};
        };
        summary["instruments"].push_back({{"name", book.instruments[g].name},
                                          {"perils", perils},
                                          {"prob_no_trigger", trig.probability},
                                          {"prob_no_trigger_se", trig.std_error},
                                          {"physical", moments(phys.summary)},
                                          {"risk_neutral", moments(rn.summary)}});
    }
    w.close();
    write_json(out_path(c, "price_summary.json"), summary);
}

// ---------------------------------------------------------------- premium

inline void stage_premium(const RunConfig& c) {
    const auto in = load_pricing_inputs(c);
    const auto book = build_scenarios(c, in.crm_post, in.cir_post, in.last_rate, horizon_periods(c));
    const auto ref = reference_lambda(c, book);
    std::vector<int> maturities;
    for (double y : c.pricing.maturities_years) maturities.push_back(c.periods(y));

    CsvWriter w(out_path(c, "premium_curve.csv"));
    w.row(std::vector<std::string>{"instrument", "maturity_years", "periods", "delta", "delta_bps", "residual",
                                   "lambda", "physical_payoff", "risk_neutral_price"});
    for (std::size_t g = 0; g < book.instruments.size(); ++g) {
        const auto& name = book.instruments[g].name;
        if (!c.pricing.curve_instruments.empty() &&
            std::find(c.pricing.curve_instruments.begin(), c.pricing.curve_instruments.end(), name) ==
                c.pricing.curve_instruments.end())
            continue;
        const auto& paths = book.paths[g];
        const auto curve = pricing::premium_curve([&](int t) { return paths.at(t); }, c.bond, maturities,
                                                  pricing::FixedLambda{ref.lambda});
        for (const auto& p : curve.points)
            w.row(name, p.maturity_years, p.periods, p.delta, p.delta * 1e4, p.residual, p.lambda, p.physical_payoff,
                  p.risk_neutral_price);
    }
    w.close();
}

// ---------------------------------------------------------------- diagnose

inline json diagnose_parameter(const std::string& name, const std::vector<std::vector<double>>& chains) {
    json j;
    j["name"] = name;
    std::vector<double> pooled;
    for (const auto& ch : chains) pooled.insert(pooled.end(), ch.begin(), ch.end());
    j["mean"] = diagnostics::detail::mean(pooled);
    j["sd"] = std::sqrt(diagnostics::detail::variance(pooled));
    if (pooled.size() >= 100) {
        const auto iv = diagnostics::hpd(pooled);
        j["hpd95"] = {iv.lo, iv.hi};
    } else {
        j["hpd95"] = nullptr;
    }
    j["geweke_z"] = json::array();
    bool ok = true;
    for (const auto& ch : chains) {
        try {
            const double z = diagnostics::geweke(ch);
            j["geweke_z"].push_back(num(z));
            ok = ok && std::abs(z) < 2.0;
        } catch (const Error&) {
            j["geweke_z"].push_back(nullptr);
        }
    }
    j["geweke_ok"] = ok;
    j["r_hat"] = nullptr;
    j["r_hat_trace"] = json::array();
    if (chains.size() >= 2) {
        try {
            const auto b = diagnostics::bgr(chains);
            j["r_hat"] = num(b.r_hat);
            j["converged"] = b.converged;
            for (const auto& p : diagnostics::bgr_trace(chains)) j["r_hat_trace"].push_back({p.iteration, num(p.r_hat)});
        } catch (const Error&) {
            j["converged"] = nullptr; // constant draws: R-hat undefined
        }
    }
    return j;
}

inline void stage_diagnose(const RunConfig& c) {
    const auto crm_post = read_crm_posterior(c);
    const auto cir_post = read_cir_posterior(c);
    json out;
    std::vector<std::string> flagged;
    auto add = [&](json& section, const std::string& label, const std::vector<std::vector<double>>& chains) {
        auto d = diagnose_parameter(label, chains);
        if (!d["geweke_ok"].get<bool>() || (d.contains("converged") && d["converged"] == false)) flagged.push_back(label);
        section.push_back(std::move(d));
    };

    json crm_params = json::array();
    for (const char* p : {"beta", "zeta1", "zeta2", "eta1", "eta2", "psi1", "psi2"}) add(crm_params, p, crm_post.trace(p));
    for (std::size_t i = 0; i < crm_post.perils.size(); ++i)
        for (const char* p : {"kappa", "theta", "alpha"})
            add(crm_params, std::string(p) + ":" + crm_post.perils[i], crm_post.trace(std::string(p) + ":" + std::to_string(i)));
    json cir_params = json::array();
    for (const char* p : {"alpha", "beta", "sigma2", "long_run_mean"}) add(cir_params, p, cir_post.trace(p));

    const auto sev = crm::cluster_summary(crm_post, crm::Process::severity);
    const auto cnt = crm::cluster_summary(crm_post, crm::Process::count);
    out["crm"] = {{"parameters", crm_params},
                  {"acceptance", json::object()},
                  {"severity_partition", sev.partition},
                  {"severity_partition_frequency", sev.partition_frequency},
                  {"count_partition", cnt.partition},
                  {"count_partition_frequency", cnt.partition_frequency},
                  {"warnings", crm_post.warnings}};
    for (const auto& [k, v] : crm_post.acceptance) out["crm"]["acceptance"][k] = num(v);
    out["cir"] = {{"parameters", cir_params}, {"latent_acceptance", json::array()}, {"warnings", cir_post.warnings}};
    for (double a : cir_post.latent_acceptance) out["cir"]["latent_acceptance"].push_back(num(a));
    out["flagged"] = flagged;
    write_json(out_path(c, "diagnostics.json"), out);
}

// ---------------------------------------------------------------- manifest

inline std::string hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return hex(fnv1a(ss.str()));
}

/// Hashes every output present; no timestamps, so reruns with the same seed match.
inline void write_manifest(const RunConfig& c, const std::vector<std::string>& stages) {
    json j;
    j["config_hash"] = hex(config_hash(c));
    j["seed"] = c.seed;
    j["stages"] = stages;
    j["versions"] = {{"catbond", version},
                     {"boost", BOOST_LIB_VERSION},
                     {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                           std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                           std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
#if defined(__clang__)
                     {"compiler", "clang " __clang_version__}
#elif defined(__GNUC__)
                     {"compiler", "gcc " __VERSION__}
#else
                     {"compiler", "unknown"}
#endif
    };
    j["outputs"] = json::object();
    for (const auto& f : output_files()) {
        const auto p = out_path(c, f);
        if (fs::exists(p)) j["outputs"][f] = file_hash(p);
    }
    write_json(out_path(c, "run_manifest.json"), j);
}

// ---------------------------------------------------------------- dispatch

inline const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> names{"simulate", "distfit", "fit-crm", "fit-cir", "price", "premium", "diagnose"};
    return names;
}

inline void run_stage(const RunConfig& c, const std::string& stage) {
    ensure_output_dir(c);
    in_stage(stage, [&] {
        if (stage == "simulate") stage_simulate(c);
        else if (stage == "distfit") stage_distfit(c);
        else if (stage == "fit-crm") stage_fit_crm(c);
        else if (stage == "fit-cir") stage_fit_cir(c);
        else if (stage == "price") stage_price(c);
        else if (stage == "premium") stage_premium(c);
        else if (stage == "diagnose") stage_diagnose(c);
        else throw ConfigError("unknown stage '" + stage + "'");
    });
}

/// Every stage in order; simulate only when the config carries a synthetic section.
/// A failing stage leaves the earlier artifacts and a manifest of them behind.
inline void run_pipeline(const RunConfig& c) {
    std::vector<std::string> done;
    try {
        for (const auto& s : stage_names()) {
            if (s == "simulate" && !c.synthetic) continue;
            run_stage(c, s);
            done.push_back(s);
        }
    } catch (...) {
        write_manifest(c, done);
        throw;
    }
    write_manifest(c, done);
}

} // namespace catbond::harness
