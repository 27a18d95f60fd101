// pairs-hjb: command-line front end for the solver, simulator and pipelines.
//
// Exit codes: 0 ok, 1 unexpected error, 2 invalid input, 3 pair skipped by
// the calibration screen, 4 numerical failure.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "pairs_hjb/calibration.hpp"
#include "pairs_hjb/hjb_solver.hpp"
#include "pairs_hjb/path_sim.hpp"
#include "pairs_hjb/scenario.hpp"

namespace fs = std::filesystem;
using namespace pairs_hjb;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitOther = 1;
constexpr int kExitValidation = 2;
constexpr int kExitScreenSkip = 3;
constexpr int kExitNumerical = 4;

constexpr const char* kOutDirEnv = "PAIRS_HJB_OUT_DIR";

struct Common {
    std::string config;
    std::string scenario;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    std::string scheme;
    unsigned threads = 1;
};

fs::path out_dir(const Common& c) {
    if (!c.out_dir.empty()) return c.out_dir;
    if (const char* env = std::getenv(kOutDirEnv); env && *env) return env;
    return "out";
}

std::vector<ScenarioConfig> load_with_flags(const Common& c) {
    std::vector<ScenarioConfig> all =
        c.config.empty() ? std::vector<ScenarioConfig>{ScenarioConfig{}} : load_scenarios(fs::path(c.config));
    for (auto& s : all) {
        if (c.seed) s.simulation.seed = *c.seed;
        if (!c.scheme.empty()) s.simulation.scheme = parse_scheme(c.scheme);
    }
    return all;
}

ScenarioConfig one_scenario(const Common& c) { return select_scenario(load_with_flags(c), c.scenario); }

void finish_manifest(const fs::path& dir, const json& config, std::vector<std::string> files,
                     std::vector<std::uint64_t> seeds, const std::string& started) {
    RunManifest m;
    m.config_hash = config_hash(config);
    m.started_at = started;
    m.finished_at = utc_timestamp();
    m.seeds = std::move(seeds);
    m.outputs = std::move(files);
    m.write(dir);
}

int cmd_solve(const Common& c, bool full) {
    const std::string started = utc_timestamp();
    const ScenarioConfig cfg = one_scenario(c);
    const Solution sol = solve_scenario(cfg, c.threads);
    const fs::path dir = out_dir(c) / cfg.name;
    fs::create_directories(dir);
    std::vector<std::string> files;
    {
        std::ofstream out(dir / "lattice.json");
        out << lattice_summary(sol.boundaries.lattice(), sol.stats).dump(2) << '\n';
        files.push_back("lattice.json");
    }
    {
        std::ofstream out(dir / "boundaries_figures.csv");
        emit_boundary_figures_data(out, sol.boundaries, preset_probes(), figure_times());
        files.push_back("boundaries_figures.csv");
    }
    if (full) {
        std::ofstream out(dir / "boundary_field.csv");
        write_boundary_field_csv(out, sol.boundaries);
        files.push_back("boundary_field.csv");
    }
    finish_manifest(dir, to_json(cfg), files, {}, started);
    std::cout << fmt::format("solved {}: max fixed-point residual {:.3g}, outputs in {}\n", cfg.name,
                             sol.stats.max_fixed_point_residual, dir.string());
    return kExitOk;
}

int cmd_simulate(const Common& c) {
    const std::string started = utc_timestamp();
    const ScenarioConfig cfg = one_scenario(c);
    const PathSet paths = simulate_paths(cfg.model, simulation_request(cfg, c.threads));
    const fs::path dir = out_dir(c) / cfg.name;
    fs::create_directories(dir);
    {
        std::ofstream out(dir / "paths.csv");
        write_paths_csv(out, paths);
    }
    finish_manifest(dir, to_json(cfg), {"paths.csv"}, {cfg.simulation.seed}, started);
    std::cout << fmt::format("simulated {} paths x {} steps into {}\n", paths.n_paths, paths.n_steps,
                             (dir / "paths.csv").string());
    return kExitOk;
}

int cmd_run_scenario(const Common& c, bool all, bool no_trades) {
    auto scenarios = load_with_flags(c);
    if (!all) scenarios = {select_scenario(scenarios, c.scenario)};
    RunOptions opt;
    opt.threads = c.threads;
    opt.write_trades = !no_trades;
    const fs::path dir = out_dir(c);
    for (const auto& s : scenarios) {
        ScenarioOutcome o;
        try {
            o = run_scenario(s, dir, opt);
        } catch (const ValidationError& e) {
            throw ValidationError(s.name + ": " + e.what(), e.field());
        } catch (const NumericalError& e) {
            throw NumericalError(s.name + ": " + e.what());
        }
        std::cout << o.name;
        if (o.optimal)
            std::cout << fmt::format("  optimal N={:.3f} ({:.3f}) PL={:.4f} ({:.4f}) PS={:.4f} ({:.4f})",
                                     o.optimal->trades.mean, o.optimal->trades.se, o.optimal->profit.mean,
                                     o.optimal->profit.se, o.optimal->profit_per_share.mean,
                                     o.optimal->profit_per_share.se);
        if (o.benchmark)
            std::cout << fmt::format("  benchmark N={:.3f} ({:.3f}) PL={:.4f} ({:.4f})", o.benchmark->trades.mean,
                                     o.benchmark->trades.se, o.benchmark->profit.mean, o.benchmark->profit.se);
        std::cout << '\n';
    }
    return kExitOk;
}

PriceHistory load_history(const fs::path& p_csv, const fs::path& q_csv, double delta_t) {
    std::ifstream p(p_csv), q(q_csv);
    if (!p) throw ValidationError("cannot open " + p_csv.string(), "p_csv");
    if (!q) throw ValidationError("cannot open " + q_csv.string(), "q_csv");
    return align_histories(read_price_csv(p), read_price_csv(q), delta_t);
}

int cmd_backtest(const Common& c) {
    const std::string started = utc_timestamp();
    if (c.config.empty()) throw ValidationError("backtest: --config is required", "config");
    const json doc = read_json_file(c.config);
    const BacktestConfig cfg = backtest_from_json(doc);
    const fs::path base = fs::path(c.config).parent_path();
    auto resolve = [&](const std::string& f) { return fs::path(f).is_absolute() ? fs::path(f) : base / f; };
    if (cfg.p_csv.empty() || cfg.q_csv.empty()) throw ValidationError("backtest: p_csv and q_csv are required", "csv");
    const PriceHistory h = load_history(resolve(cfg.p_csv), resolve(cfg.q_csv), cfg.delta_t);
    const BacktestOutcome b = run_backtest(h, cfg, c.threads);

    const fs::path dir = out_dir(c) / cfg.name;
    fs::create_directories(dir);
    std::vector<std::string> files;
    {
        std::ofstream out(dir / "backtest.csv");
        write_backtest_header(out);
        write_backtest_row(out, cfg, b);
        files.push_back("backtest.csv");
    }
    if (b.calibration) {
        std::ofstream out(dir / "calibration.json");
        out << to_json(*b.calibration).dump(2) << '\n';
        files.push_back("calibration.json");
    }
    finish_manifest(dir, doc, files, {}, started);
    if (!b.traded) {
        std::cout << cfg.name << ": skipped (" << b.skip_reason << ")\n";
        return kExitScreenSkip;
    }
    std::cout << fmt::format("{}: optimal N={} PL={:.4f} PS={:.4f}  benchmark N={} PL={:.4f} PS={:.4f}\n", cfg.name,
                             b.optimal->n_trades, b.optimal->profit, b.optimal->profit_per_share,
                             b.benchmark->n_trades, b.benchmark->profit, b.benchmark->profit_per_share);
    return kExitOk;
}

int cmd_calibrate(const Common& c, const std::string& p_csv, const std::string& q_csv, const std::string& pair,
                  double delta_t, const CalibrationOptions& opt) {
    const std::string started = utc_timestamp();
    const PriceHistory h = load_history(p_csv, q_csv, delta_t);
    const CalibrationReport r = calibrate(h, opt);
    const fs::path dir = out_dir(c) / pair;
    fs::create_directories(dir);
    {
        std::ofstream out(dir / "calibration.json");
        out << to_json(r).dump(2) << '\n';
    }
    {
        std::ofstream out(dir / "calibration.csv");
        write_calibration_row_header(out);
        write_calibration_row(out, pair, r);
    }
    finish_manifest(dir, {{"p_csv", p_csv}, {"q_csv", q_csv}, {"delta_t", delta_t}, {"adf_lag", opt.adf_lag}},
                    {"calibration.json", "calibration.csv"}, {}, started);
    std::cout << fmt::format("{}: beta={:.4f} kappa={:.4f} theta={:.4f} nu={:.4f} ADF={:.3f} (5% {:.3f}) {}\n", pair,
                             r.hedge.beta, r.params.kappa, r.params.theta, r.params.nu, r.adf.statistic,
                             r.adf.critical_value_5pct, r.adf.is_stationary ? "stationary" : "unit root not rejected");
    return kExitOk;
}

int cmd_probe(const Common& c, const std::vector<double>& ps, const std::vector<double>& xs,
              const std::vector<double>& times) {
    const std::string started = utc_timestamp();
    const ScenarioConfig cfg = one_scenario(c);
    if (ps.size() != xs.size()) throw ValidationError("probe: --p and --x must be given the same number of times", "probe");
    std::vector<ProbePoint> probes;
    if (ps.empty()) {
        probes = preset_probes();
    } else {
        for (std::size_t i = 0; i < ps.size(); ++i) probes.push_back({fmt::format("p{}_x{}", ps[i], xs[i]), ps[i], xs[i]});
    }
    const std::vector<double> t = times.empty() ? figure_times() : times;
    const Solution sol = solve_scenario(cfg, c.threads);
    const fs::path dir = out_dir(c) / cfg.name;
    fs::create_directories(dir);
    {
        std::ofstream out(dir / "probes.csv");
        emit_boundary_figures_data(out, sol.boundaries, probes, t);
    }
    finish_manifest(dir, to_json(cfg), {"probes.csv"}, {}, started);
    std::cout << "wrote " << (dir / "probes.csv").string() << '\n';
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Optimal pairs-trading boundaries under proportional costs"};
    app.require_subcommand(1);
    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config, "Scenario (or backtest) JSON file");
        sub->add_option("--scenario", common.scenario, "Scenario name within the file (default: base)");
        sub->add_option("--seed", common.seed, "Override the simulation seed");
        sub->add_option("--out-dir", common.out_dir,
                        std::string("Output directory (default: $") + kOutDirEnv + " or ./out)");
        sub->add_option("--scheme", common.scheme, "Path scheme")->check(CLI::IsMember({"exact", "euler"}));
        sub->add_option("--threads", common.threads, "Worker threads")->check(CLI::PositiveNumber);
    };

    auto* solve_cmd = app.add_subcommand("solve", "Solve the boundaries of one scenario");
    add_common(solve_cmd);
    bool full = false;
    solve_cmd->add_flag("--full", full, "Also dump the boundary at every lattice node");

    auto* sim_cmd = app.add_subcommand("simulate", "Simulate (p, x) paths");
    add_common(sim_cmd);

    auto* run_cmd = app.add_subcommand("run-scenario", "Solve, simulate and evaluate both strategies");
    add_common(run_cmd);
    bool all = false, no_trades = false;
    run_cmd->add_flag("--all", all, "Run every scenario in the file");
    run_cmd->add_flag("--no-trades", no_trades, "Skip the per-trade CSV");

    auto* bt_cmd = app.add_subcommand("backtest", "Calibrate, screen and replay a historical pair");
    add_common(bt_cmd);

    auto* cal_cmd = app.add_subcommand("calibrate", "Calibrate a pair from two date,price CSV files");
    add_common(cal_cmd);
    std::string p_csv, q_csv, pair = "pair";
    double delta_t = 1.0 / 252.0;
    CalibrationOptions cal_opt;
    cal_cmd->add_option("--p-csv", p_csv, "Prices of stock P")->required()->check(CLI::ExistingFile);
    cal_cmd->add_option("--q-csv", q_csv, "Prices of stock Q")->required()->check(CLI::ExistingFile);
    cal_cmd->add_option("--pair", pair, "Pair label");
    cal_cmd->add_option("--delta-t", delta_t, "Years per observation");
    cal_cmd->add_option("--adf-lag", cal_opt.adf_lag, "ADF lag order");
    cal_cmd->add_option("--min-length", cal_opt.min_length, "Minimum observations");

    auto* probe_cmd = app.add_subcommand("probe", "Boundary values at probe points for plotting");
    add_common(probe_cmd);
    std::vector<double> probe_p, probe_x, probe_t;
    probe_cmd->add_option("--p", probe_p, "Probe prices (default: presets)");
    probe_cmd->add_option("--x", probe_x, "Probe spreads, paired with --p");
    probe_cmd->add_option("--t", probe_t, "Probe times (default: 0.05 0.35 0.65 0.95)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitValidation;
    }

    try {
        if (solve_cmd->parsed()) return cmd_solve(common, full);
        if (sim_cmd->parsed()) return cmd_simulate(common);
        if (run_cmd->parsed()) return cmd_run_scenario(common, all, no_trades);
        if (bt_cmd->parsed()) return cmd_backtest(common);
        if (cal_cmd->parsed()) return cmd_calibrate(common, p_csv, q_csv, pair, delta_t, cal_opt);
        if (probe_cmd->parsed()) return cmd_probe(common, probe_p, probe_x, probe_t);
    } catch (const ValidationError& e) {
        std::cerr << "invalid input: " << e.what() << '\n';
        return kExitValidation;
    } catch (const CalibrationError& e) {
        std::cerr << "calibration screen: " << e.what() << '\n';
        return kExitScreenSkip;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitOther;
    }
    return kExitOther;
}
