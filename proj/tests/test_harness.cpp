#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "catbond/harness/pipeline.hpp"
#include "oracles.hpp"

using namespace catbond;
using namespace catbond::harness;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("catbond_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

template <class E, class F>
std::string message_of(F&& f) {
    try {
        f();
    } catch (const E& e) {
        return e.what();
    }
    return "";
}

json small_config() {
    return json::parse(R"({
      "seed": 3,
      "data": {"perils": ["A", "B", "C", "D"], "date_range": ["2008-01-01", "2020-12-31"]},
      "synthetic": {
        "perils": [
          {"name": "A", "kappa": 0.9, "theta": 15.0, "alpha": 0.5, "severity_cluster": 0, "count_cluster": 0},
          {"name": "B", "kappa": 0.9, "theta": 15.0, "alpha": 0.5, "severity_cluster": 0, "count_cluster": 0},
          {"name": "C", "kappa": 3.0, "theta": 40.0, "alpha": 1.0, "severity_cluster": 1, "count_cluster": 1},
          {"name": "D", "kappa": 3.0, "theta": 40.0, "alpha": 1.0, "severity_cluster": 1, "count_cluster": 1}
        ],
        "cir": {"years": 4, "fine_steps": 10}
      },
      "crm": {"mcmc": {"n_iter": 600, "burn_in": 200, "thin": 2, "n_chains": 2}},
      "cir": {"M": 1, "beta0": 0.001, "mcmc": {"n_iter": 500, "burn_in": 200, "thin": 1, "n_chains": 2}},
      "pricing": {"scenarios": 400, "maturities_years": [1, 2, 3]}
    })");
}

} // namespace

TEST_CASE("event ingestion") {
    std::istringstream ok("date,peril,loss_millions\r\n2010-03-04,Flood,12.5\n\n2011-07-01,Hail,0.25\n");
    const auto ev = ingest_events(ok);
    REQUIRE(ev.size() == 2);
    CHECK(ev[0].peril == "Flood");
    CHECK(ev[1].loss == 0.25);
    CHECK(ev[1].line == 4);

    std::istringstream header("date,peril,loss\n");
    CHECK_THROWS_AS(ingest_events(header), InputError);
    std::istringstream bad_date("date,peril,loss_millions\n2010-02-30,Flood,1\n");
    CHECK(message_of<InputError>([&] { ingest_events(bad_date); }).find("line 2, column 'date'") != std::string::npos);
    std::istringstream bad_num("date,peril,loss_millions\n2010-02-03,Flood,abc\n");
    CHECK(message_of<InputError>([&] { ingest_events(bad_num); }).find("loss_millions") != std::string::npos);
    std::istringstream neg("date,peril,loss_millions\n2010-02-03,Flood,-1\n2010-02-04,Flood,3\n2010-02-05,Flood,0\n");
    CHECK(message_of<InputError>([&] { ingest_events(neg); }).find("line(s) 2, 4") != std::string::npos);
    std::istringstream fields("date,peril,loss_millions\n2010-02-03,Flood\n");
    CHECK_THROWS_AS(ingest_events(fields), InputError);
}

TEST_CASE("rate ingestion") {
    std::istringstream ok("date,yield_percent\n2010-01-04,1.00\n2010-01-11,1.10\n2010-01-18,1.05\n");
    const auto r = ingest_rates(ok);
    CHECK(r.series.rates[1] == doctest::Approx(0.011));
    CHECK(r.series.times[2] == doctest::Approx(14.0 / 365.25));

    std::istringstream dup("date,yield_percent\n2010-01-04,1\n2010-01-04,1\n2010-01-11,1\n");
    CHECK(message_of<InputError>([&] { ingest_rates(dup); }).find("duplicated") != std::string::npos);
    std::istringstream order("date,yield_percent\n2010-01-11,1\n2010-01-04,1\n2010-01-18,1\n");
    CHECK(message_of<InputError>([&] { ingest_rates(order); }).find("out of order") != std::string::npos);
    std::istringstream gap("date,yield_percent\n2010-01-04,1\n2010-01-11,1\n2010-01-18,1\n2010-02-15,1\n");
    CHECK(message_of<InputError>([&] { ingest_rates(gap); }).find("gap of 28 days") != std::string::npos);
    std::istringstream zero("date,yield_percent\n2010-01-04,1\n2010-01-11,0\n2010-01-18,1\n");
    CHECK_THROWS_AS(ingest_rates(zero), InputError);
    std::istringstream shortf("date,yield_percent\n2010-01-04,1\n2010-01-11,1\n");
    CHECK_THROWS_AS(ingest_rates(shortf), InputError);
}

TEST_CASE("synthetic files round-trip through ingestion") {
    const auto dir = scratch("roundtrip");
    SyntheticSpec spec = two_cluster_spec(5);
    const auto d = generate_synthetic(spec);
    write_events((dir / "e.csv").string(), d.events);
    write_rates((dir / "r.csv").string(), d.rate_dates, d.yields_percent);
    const auto ev = ingest_events((dir / "e.csv").string());
    REQUIRE(ev.size() == d.events.size());
    for (std::size_t i = 0; i < ev.size(); ++i) {
        CHECK(ev[i].loss == d.events[i].loss);
        CHECK(ev[i].date == d.events[i].date);
    }
    const auto rt = ingest_rates((dir / "r.csv").string());
    // 12 years of weekly observations
    CHECK(rt.dates.size() == std::size_t(std::floor(12 * 365.25 / 7)) + 1);
    CHECK(rt.series.times[1] == doctest::Approx(7.0 / 365.25));
    CHECK(rt.series.rates == to_rate_series(d.rate_dates, d.yields_percent).rates);

    const std::vector<std::string> names{"Flood", "Hailstorm", "Wildfire", "Tornado", "Winter",
                                         "Windstorm", "Hurricane", "Earthquake", "Storm"};
    const auto panel = crm::build_panel(ev, names, d.range);
    CHECK(panel.counts == d.panel.counts);
}

TEST_CASE("synthetic seasonality") {
    auto ratio = [](double beta) {
        SyntheticSpec s;
        s.beta = beta;
        s.perils = {{"X", 3.0, 2.0, 6.5, 0, 0}, {"Y", 3.0, 2.0, 6.5, 0, 0}};
        s.seed = 17;
        const auto d = generate_synthetic(s);
        double q1 = 0.0, q4 = 0.0;
        for (std::size_t p = 0; p < d.panel.counts.size(); ++p)
            for (std::size_t t = 0; t < d.panel.quarters.size(); ++t) {
                if (t % 4 == 0) q1 += double(d.panel.counts[p][t]);
                if (t % 4 == 3) q4 += double(d.panel.counts[p][t]);
            }
        return q4 / q1;
    };
    // each season totals about 26 exp(6.5) = 17.3k claims, so the ratio has sd under 0.015
    CHECK(std::abs(ratio(0.0) - 1.0) < 0.05);
    CHECK(std::abs(ratio(0.0615) - std::exp(3 * 0.0615)) < 0.05);
}

TEST_CASE("synthetic rate path settles near its long-run mean") {
    SyntheticSpec s = two_cluster_spec(9);
    s.rate_years = 60;
    const auto d = generate_synthetic(s);
    double m = 0.0;
    for (double y : d.yields_percent) m += y;
    m /= double(d.yields_percent.size());
    CHECK(std::abs(m / s.cir.long_run_mean() - 1.0) < 0.10);
}

TEST_CASE("config parsing") {
    auto j = small_config();
    auto c = parse_config(j, "/base");
    CHECK(c.seed == 3);
    CHECK(c.synthetic->perils.size() == 4);
    CHECK(c.synthetic->seed == 3);
    CHECK(c.cir_m == 1);
    CHECK(c.crm_mcmc.n_iter == 600);
    CHECK(c.bond.maturity == 8);
    finalize(c, 11, std::string("/tmp/x"), 2);
    CHECK(c.seed == 11);
    CHECK(c.synthetic->seed == 11);
    CHECK(c.events_csv == "/tmp/x/events.csv");
    CHECK(c.threads == 2);

    auto rel = small_config();
    rel["data"]["events_csv"] = "data/e.csv";
    rel["data"]["rates_csv"] = "/abs/r.csv";
    const auto r = parse_config(rel, "/base/cfg");
    CHECK(r.events_csv == "/base/cfg/data/e.csv");
    CHECK(r.rates_csv == "/abs/r.csv");

    auto no_seed = small_config();
    no_seed.erase("seed");
    CHECK_THROWS_AS(parse_config(no_seed), ConfigError);
    auto bad_type = small_config();
    bad_type["crm"]["gamma1"] = "nine";
    CHECK_THROWS_AS(parse_config(bad_type), ConfigError);
    auto bad_family = small_config();
    bad_family["distfit"]["families"] = {"Cauchy"};
    CHECK_THROWS_AS(parse_config(bad_family), ConfigError);
    auto bad_maturity = small_config();
    bad_maturity["pricing"]["maturities_years"] = {1.1};
    auto bm = parse_config(bad_maturity);
    CHECK_THROWS_AS(finalize(bm), ConfigError);
    auto no_paths = small_config();
    no_paths.erase("synthetic");
    auto np = parse_config(no_paths);
    CHECK_THROWS_AS(finalize(np), ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);

    auto a = parse_config(small_config()), b = parse_config(small_config());
    finalize(a, {}, std::string("/tmp/a"), 1);
    finalize(b, {}, std::string("/tmp/b"), 4);
    CHECK(config_hash(a) == config_hash(b));
    finalize(b, 4);
    CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("issue price on three scenarios by hand") {
    // payoffs 100, 100, 0 at D = 759.3; delta0 = 250 bps over 2 years
    pricing::JointScenarios s{Matrix(3, 8, 0.002), {10.0, 759.3, 759.31}};
    pricing::BondSpec b;
    const double p0 = pricing::issue_price(s, b, 0.025);
    CHECK(p0 == doctest::Approx(200.0 / 3.0 * std::exp(-0.05)).epsilon(1e-14));
    const auto alpha = pricing::discounted_payoffs(s, b);
    CHECK(alpha[0] == doctest::Approx(100.0 * std::exp(-0.016)).epsilon(1e-14));
    CHECK(alpha[2] == 0.0);
    // two scenarios pay the same alpha, so the tilt is a two-point problem: q = p0 / alpha
    const auto w = entropy::calibrate(alpha, p0);
    CHECK(w.weights[0] + w.weights[1] == doctest::Approx(p0 / alpha[0]).epsilon(1e-10));
    CHECK(w.constraint_residual / p0 < 1e-8);
}

TEST_CASE("pipeline: every output, stages compose to the full run") {
    const auto base = scratch("pipeline");
    auto full = parse_config(small_config());
    finalize(full, {}, (base / "full").string());
    run_pipeline(full);
    for (const auto& f : output_files()) CHECK_MESSAGE(fs::exists(base / "full" / f), f);
    CHECK(fs::exists(base / "full" / "run_manifest.json"));

    const auto curve = read_csv((base / "full" / "premium_curve.csv").string());
    REQUIRE(curve.rows.size() >= 3);
    for (std::size_t i = 0; i < curve.rows.size(); ++i)
        CHECK(cell_double(curve, i, curve.column("residual")) < pricing::premium_tolerance);

    const auto summary = read_json((base / "full" / "price_summary.json").string());
    CHECK(summary.at("calibration_residual").get<double>() / summary.at("issue_price").get<double>() < 1e-8);
    const auto diag = read_json((base / "full" / "diagnostics.json").string());
    CHECK(diag.contains("cir"));
    CHECK(diag.contains("crm"));

    auto staged = parse_config(small_config());
    finalize(staged, {}, (base / "staged").string());
    for (const auto& s : stage_names()) run_stage(staged, s);
    for (const auto& f : output_files()) CHECK_MESSAGE(slurp((base / "full" / f).string()) == slurp((base / "staged" / f).string()), f);

    // posterior files read back to the values that were written
    const auto crm_post = read_crm_posterior(full);
    const auto cir_post = read_cir_posterior(full);
    CHECK(crm_post.size() == 2 * 200);
    CHECK(cir_post.chains.size() == 2);
    CHECK(cir_post.chains[0].size() == 300);
    const auto again = parse_config(small_config());
    auto copy = again;
    finalize(copy, {}, (base / "copy").string());
    ensure_output_dir(copy);
    write_crm_posterior(copy, crm_post);
    CHECK(slurp((base / "full" / "posterior_crm.csv").string()) == slurp((base / "copy" / "posterior_crm.csv").string()));
}

TEST_CASE("pipeline errors name the stage and keep their kind") {
    const auto base = scratch("errors");
    auto c = parse_config(small_config());
    finalize(c, {}, (base / "out").string());
    const auto msg = message_of<InputError>([&] { run_stage(c, "fit-crm"); });
    CHECK(msg.find("stage 'fit-crm'") == 0);
    CHECK_THROWS_AS(run_stage(c, "bogus"), ConfigError);

    std::ofstream(base / "out" / "events.csv") << "date,peril,loss_millions\n2010-01-01,A,-5\n";
    std::ofstream(base / "out" / "rates.csv") << "date,yield_percent\n2010-01-01,1\n";
    CHECK_THROWS_AS(run_stage(c, "distfit"), InputError);

    auto hot = parse_config(small_config());
    hot.bond.threshold = 1e-6; // every scenario triggers: no spread solves the premium equation
    finalize(hot, {}, (base / "hot").string());
    CHECK_THROWS_AS(run_pipeline(hot), NumericalError);
    CHECK(fs::exists(base / "hot" / "run_manifest.json"));
}
