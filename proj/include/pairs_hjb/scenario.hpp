#pragma once

// Scenario configuration (JSON, base + overrides), report emission and the
// two end-to-end pipelines: simulated scenarios and historical backtests.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <json.hpp>

#include "pairs_hjb/calibration.hpp"
#include "pairs_hjb/errors.hpp"
#include "pairs_hjb/grid.hpp"
#include "pairs_hjb/hjb_solver.hpp"
#include "pairs_hjb/market_model.hpp"
#include "pairs_hjb/path_sim.hpp"
#include "pairs_hjb/trading.hpp"

namespace pairs_hjb {

inline constexpr const char* kToolVersion = "0.1.0";

using json = nlohmann::json;

struct SimulationSettings {
    std::size_t n_paths = 1000;
    std::size_t n_steps = 100;
    double p0 = 1.0;
    std::optional<double> x0;  // empty: stationary draw per path
    std::uint64_t seed = 20240601;
    Scheme scheme = Scheme::exact;

    bool operator==(const SimulationSettings&) const = default;
};

struct StrategyToggles {
    bool optimal = true;
    bool benchmark = true;
    BenchmarkRule benchmark_rule;

    bool operator==(const StrategyToggles& o) const {
        return optimal == o.optimal && benchmark == o.benchmark &&
               benchmark_rule.sd_mode == o.benchmark_rule.sd_mode &&
               benchmark_rule.threshold_sds == o.benchmark_rule.threshold_sds &&
               benchmark_rule.shares == o.benchmark_rule.shares &&
               benchmark_rule.high_spread_side == o.benchmark_rule.high_spread_side;
    }
};

struct ScenarioConfig {
    std::string name = "S1";
    ModelParams model;
    CostSpec costs;
    double gamma = 5.0;
    GridSpec grid;
    SimulationSettings simulation;
    StrategyToggles strategies;

    bool operator==(const ScenarioConfig& o) const {
        return name == o.name && model == o.model && costs == o.costs && gamma == o.gamma && grid == o.grid &&
               simulation == o.simulation && strategies == o.strategies;
    }

    // rethrows a section validator's error with the section prefixed to the field
    template <class F>
    static void section(const std::string& prefix, F&& check) {
        try {
            check();
        } catch (const ValidationError& e) {
            throw ValidationError(prefix + "." + e.what(), prefix + "." + e.field());
        }
    }

    void validate() const {
        detail::require(!name.empty(), "name", "must not be empty");
        section("model", [&] { model.validate(); });
        section("costs", [&] { costs.validate(); });
        CaraUtility{gamma}.validate();
        section("grid", [&] { grid.validate(model); });
        detail::require(simulation.n_paths >= 1, "simulation.n_paths", "must be >= 1");
        detail::require(simulation.n_steps >= 1, "simulation.n_steps", "must be >= 1");
        detail::require(simulation.p0 > 0 && std::isfinite(simulation.p0), "simulation.p0", "must be positive");
        if (simulation.x0) detail::require_finite(*simulation.x0, "simulation.x0");
        detail::require(strategies.benchmark_rule.threshold_sds > 0, "strategies.benchmark_threshold",
                        "must be positive");
        detail::require(strategies.benchmark_rule.shares > 0, "strategies.benchmark_shares", "must be positive");
        detail::require(strategies.benchmark_rule.high_spread_side == 1 ||
                            strategies.benchmark_rule.high_spread_side == -1,
                        "strategies.benchmark_high_spread_side", "must be +1 or -1");
    }
};

// ---- JSON schema ----

namespace detail {

// Reads a JSON object field by field; finish() rejects anything not consumed.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ValidationError(path_ + ": expected an object", path_);
    }
    /// Rejects any field that was not read.
    void finish() const {
        for (const auto& [key, _] : j_.items()) {
            if (!seen_.contains(key)) throw ValidationError(field(key) + ": unknown field", field(key));
        }
    }

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    template <class T>
    void read(const std::string& key, T& out) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        try {
            if constexpr (std::is_same_v<T, bool>) {
                if (!it->is_boolean()) throw ValidationError(field(key) + ": expected a boolean", field(key));
            } else if constexpr (std::is_arithmetic_v<T>) {
                if (!it->is_number()) throw ValidationError(field(key) + ": expected a number", field(key));
                if constexpr (std::is_integral_v<T>) {
                    if (!it->is_number_integer() || (std::is_unsigned_v<T> && it->get<double>() < 0))
                        throw ValidationError(field(key) + ": expected a non-negative integer", field(key));
                }
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!it->is_string()) throw ValidationError(field(key) + ": expected a string", field(key));
            }
            out = it->get<T>();
        } catch (const json::exception& e) {
            throw ValidationError(field(key) + ": " + e.what(), field(key));
        }
    }

    void read_optional(const std::string& key, std::optional<double>& out) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end() || it->is_null()) {
            out.reset();
            return;
        }
        if (!it->is_number()) throw ValidationError(field(key) + ": expected a number or null", field(key));
        out = it->get<double>();
    }

    const json* child(const std::string& key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline std::string join_path(const std::string& a, const std::string& b) { return a.empty() ? b : a + "." + b; }

}  // namespace detail

inline json to_json(const ModelParams& m) {
    return {{"mu", m.mu}, {"sigma", m.sigma}, {"kappa", m.kappa}, {"theta", m.theta},
            {"nu", m.nu}, {"rho", m.rho},     {"r", m.r},         {"T", m.T}};
}

inline json to_json(const CostSpec& c) {
    return {{"zeta_p", c.zeta_p}, {"zeta_q", c.zeta_q}, {"eta_p", c.eta_p}, {"eta_q", c.eta_q}};
}

inline json to_json(const GridSpec& g) {
    return {{"n_time", g.n_time}, {"z_half_width", g.z_half_width}, {"z_step", g.z_step},
            {"w_half_width", g.w_half_width}, {"w_step", g.w_step}, {"xi", g.xi},
            {"y_max", g.y_max}, {"quad_nodes", g.quad_nodes}};
}

inline json to_json(const ScenarioConfig& c) {
    const auto& s = c.simulation;
    const auto& b = c.strategies.benchmark_rule;
    return {{"name", c.name},
            {"model", to_json(c.model)},
            {"costs", to_json(c.costs)},
            {"gamma", c.gamma},
            {"grid", to_json(c.grid)},
            {"simulation",
             {{"n_paths", s.n_paths},
              {"n_steps", s.n_steps},
              {"p0", s.p0},
              {"x0", s.x0 ? json(*s.x0) : json(nullptr)},
              {"seed", s.seed},
              {"scheme", std::string(to_string(s.scheme))}}},
            {"strategies",
             {{"optimal", c.strategies.optimal},
              {"benchmark", c.strategies.benchmark},
              {"benchmark_sd", std::string(to_string(b.sd_mode))},
              {"benchmark_threshold", b.threshold_sds},
              {"benchmark_shares", b.shares},
              {"benchmark_high_spread_side", b.high_spread_side}}}};
}

inline void read_model(const json& j, const std::string& path, ModelParams& m) {
    detail::ObjectReader r(j, path);
    r.read("mu", m.mu);
    r.read("sigma", m.sigma);
    r.read("kappa", m.kappa);
    r.read("theta", m.theta);
    r.read("nu", m.nu);
    r.read("rho", m.rho);
    r.read("r", m.r);
    r.read("T", m.T);
    r.finish();
}

inline void read_costs(const json& j, const std::string& path, CostSpec& c) {
    detail::ObjectReader r(j, path);
    r.read("zeta_p", c.zeta_p);
    r.read("zeta_q", c.zeta_q);
    r.read("eta_p", c.eta_p);
    r.read("eta_q", c.eta_q);
    r.finish();
}

inline void read_grid(const json& j, const std::string& path, GridSpec& g) {
    detail::ObjectReader r(j, path);
    r.read("n_time", g.n_time);
    r.read("z_half_width", g.z_half_width);
    r.read("z_step", g.z_step);
    r.read("w_half_width", g.w_half_width);
    r.read("w_step", g.w_step);
    r.read("xi", g.xi);
    r.read("y_max", g.y_max);
    r.read("quad_nodes", g.quad_nodes);
    r.finish();
}

/// Fills `c` from a (possibly partial) scenario object; absent fields keep
/// their current values.
inline void read_scenario(const json& j, const std::string& path, ScenarioConfig& c) {
    detail::ObjectReader r(j, path);
    r.read("name", c.name);
    r.read("gamma", c.gamma);
    if (auto* m = r.child("model")) read_model(*m, detail::join_path(path, "model"), c.model);
    if (auto* k = r.child("costs")) read_costs(*k, detail::join_path(path, "costs"), c.costs);
    if (auto* g = r.child("grid")) read_grid(*g, detail::join_path(path, "grid"), c.grid);
    if (auto* s = r.child("simulation")) {
        const std::string sp = detail::join_path(path, "simulation");
        detail::ObjectReader sr(*s, sp);
        auto& sim = c.simulation;
        sr.read("n_paths", sim.n_paths);
        sr.read("n_steps", sim.n_steps);
        sr.read("p0", sim.p0);
        sr.read_optional("x0", sim.x0);
        sr.read("seed", sim.seed);
        std::string scheme(to_string(sim.scheme));
        sr.read("scheme", scheme);
        try {
            sim.scheme = parse_scheme(scheme);
        } catch (const ValidationError&) {
            throw ValidationError(sp + ".scheme: expected 'exact' or 'euler'", sp + ".scheme");
        }
        sr.finish();
    }
    if (auto* s = r.child("strategies")) {
        const std::string sp = detail::join_path(path, "strategies");
        detail::ObjectReader sr(*s, sp);
        auto& st = c.strategies;
        sr.read("optimal", st.optimal);
        sr.read("benchmark", st.benchmark);
        std::string sd(to_string(st.benchmark_rule.sd_mode));
        sr.read("benchmark_sd", sd);
        try {
            st.benchmark_rule.sd_mode = parse_benchmark_sd(sd);
        } catch (const ValidationError&) {
            throw ValidationError(sp + ".benchmark_sd: expected 'stationary' or 'sample'", sp + ".benchmark_sd");
        }
        sr.read("benchmark_threshold", st.benchmark_rule.threshold_sds);
        sr.read("benchmark_shares", st.benchmark_rule.shares);
        sr.read("benchmark_high_spread_side", st.benchmark_rule.high_spread_side);
        sr.finish();
    }
    r.finish();
}

inline ScenarioConfig scenario_from_json(const json& j, ScenarioConfig base = {}) {
    read_scenario(j, "", base);
    base.validate();
    return base;
}

/// Resolves {"base": {...}, "overrides": [{...}, ...]}. Each override inherits
/// the base and must carry a unique name; the base itself is the first entry.
inline std::vector<ScenarioConfig> load_scenarios(const json& doc) {
    if (!doc.is_object()) throw ValidationError("scenario file: expected an object", "");
    for (const auto& [key, _] : doc.items()) {
        if (key != "base" && key != "overrides") throw ValidationError(key + ": unknown field", key);
    }
    ScenarioConfig base;
    if (doc.contains("base")) read_scenario(doc["base"], "base", base);
    try {
        base.validate();
    } catch (const ValidationError& e) {
        throw ValidationError(std::string("base.") + e.what(), "base." + e.field());
    }
    std::vector<ScenarioConfig> out{base};
    std::set<std::string> names{base.name};
    if (doc.contains("overrides")) {
        const auto& list = doc["overrides"];
        if (!list.is_array()) throw ValidationError("overrides: expected an array", "overrides");
        for (std::size_t i = 0; i < list.size(); ++i) {
            const std::string path = fmt::format("overrides[{}]", i);
            if (!list[i].is_object() || !list[i].contains("name"))
                throw ValidationError(path + ".name: required", path + ".name");
            ScenarioConfig c = base;
            read_scenario(list[i], path, c);
            try {
                c.validate();
            } catch (const ValidationError& e) {
                throw ValidationError(path + "." + e.what(), path + "." + e.field());
            }
            if (!names.insert(c.name).second)
                throw ValidationError(path + ".name: duplicate scenario name '" + c.name + "'", path + ".name");
            out.push_back(std::move(c));
        }
    }
    return out;
}

inline json read_json_file(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ValidationError("cannot open " + file.string(), "config");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError(file.string() + ": " + e.what(), "config");
    }
}

inline std::vector<ScenarioConfig> load_scenarios(const std::filesystem::path& file) {
    return load_scenarios(read_json_file(file));
}

/// Picks one scenario by name (or the base when name is empty).
inline ScenarioConfig select_scenario(const std::vector<ScenarioConfig>& all, const std::string& name) {
    if (name.empty()) return all.front();
    for (const auto& c : all)
        if (c.name == name) return c;
    throw ValidationError("no scenario named '" + name + "'", "scenario");
}

// ---- manifest ----

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Hash of the canonical serialization; object keys are emitted sorted, so the
/// hash does not depend on field order in the source file.
inline std::string config_hash(const json& j) { return fmt::format("{:016x}", fnv1a64(j.dump())); }

inline std::string utc_timestamp() {
    const auto now = std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now());
    return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(std::chrono::system_clock::to_time_t(now)));
}

struct RunManifest {
    std::string config_hash;
    std::string tool_version = kToolVersion;
    std::string started_at;
    std::string finished_at;
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> outputs;  // relative to the run directory

    json to_json(const std::filesystem::path& dir) const {
        json files = json::array();
        for (const auto& f : outputs) {
            std::error_code ec;
            const auto size = std::filesystem::file_size(dir / f, ec);
            files.push_back({{"file", f}, {"bytes", ec ? 0 : size}});
        }
        return {{"config_hash", config_hash}, {"tool_version", tool_version}, {"started_at", started_at},
                {"finished_at", finished_at}, {"seeds", seeds},               {"outputs", files}};
    }

    void write(const std::filesystem::path& dir) const {
        std::ofstream out(dir / "manifest.json");
        out << to_json(dir).dump(2) << '\n';
    }
};

// ---- CSV emitters ----

inline std::string fmt_num(double v) { return fmt::format("{:.17g}", v); }

inline std::string fmt_opt(const std::optional<double>& v) { return v ? fmt_num(*v) : std::string("none"); }

struct ProbePoint {
    std::string id;
    double p;
    double x;
};

/// Quantile grid of the baseline figures plus the four comparison points.
inline std::vector<ProbePoint> preset_probes() {
    std::vector<ProbePoint> out;
    const double ps[] = {0.845, 1.095, 1.400, 2.108};
    const double xs[] = {0.023, 0.092, 0.157, 0.266};
    for (double p : ps)
        for (double x : xs) out.push_back({fmt::format("q_p{}_x{}", p, x), p, x});
    for (auto [p, x] : {std::pair{0.9, 0.09}, {0.9, 0.12}, {1.5, 0.09}, {1.5, 0.12}})
        out.push_back({fmt::format("c_p{}_x{}", p, x), p, x});
    return out;
}

inline std::vector<double> figure_times() { return {0.05, 0.35, 0.65, 0.95}; }

/// Long-format boundary table (probe_id, t, p, x, y_buy, y_sell). Probes are
/// bilinearly interpolated and must lie strictly inside the lattice.
inline void emit_boundary_figures_data(std::ostream& os, const BoundaryField& field,
                                       std::span<const ProbePoint> probes, std::span<const double> times) {
    const Lattice& lat = field.lattice();
    for (const auto& pr : probes) {
        const double z = lat.z_of_p(pr.p), w = lat.w_of_x(pr.x);
        const bool inside = z > lat.z_values().front() && z < lat.z_values().back() &&
                            w > lat.w_values().front() && w < lat.w_values().back();
        if (!inside)
            throw ValidationError(fmt::format("probe {} (p={}, x={}) is not strictly inside the lattice", pr.id,
                                              pr.p, pr.x),
                                  "probe");
    }
    os << "probe_id,t,p,x,y_buy,y_sell\n";
    for (double t : times) {
        const int i = field.time_index(t, 0.5 * lat.delta() + 1e-9);
        for (const auto& pr : probes) {
            const auto b = field.interpolated(i, pr.p, pr.x);
            os << pr.id << ',' << fmt_num(lat.time(i)) << ',' << fmt_num(pr.p) << ',' << fmt_num(pr.x) << ','
               << fmt_opt(b.buy) << ',' << fmt_opt(b.sell) << '\n';
        }
    }
}

/// Every node of every slice; large (n_time * nz * nw rows).
inline void write_boundary_field_csv(std::ostream& os, const BoundaryField& field) {
    const Lattice& lat = field.lattice();
    os << "t,p,x,y_buy,y_sell\n";
    for (int i = 0; i < field.n_time(); ++i) {
        for (std::size_t n = 0; n < lat.n_nodes(); ++n) {
            const auto [iz, jw] = lat.unflatten(n);
            os << fmt_num(lat.time(i)) << ',' << fmt_num(lat.p_values()[iz]) << ',' << fmt_num(lat.x_values()[jw])
               << ',' << fmt_opt(field.y_buy(i, n)) << ',' << fmt_opt(field.y_sell(i, n)) << '\n';
        }
    }
}

inline json lattice_summary(const Lattice& lat, const SolveStats& stats) {
    return {{"n_time", lat.n_time()},
            {"delta", lat.delta()},
            {"nz", lat.nz()},
            {"nw", lat.nw()},
            {"ny", lat.ny()},
            {"z_step", lat.z_step()},
            {"w_step", lat.w_step()},
            {"p_range", {lat.p_values().front(), lat.p_values().back()}},
            {"x_range", {lat.x_values().front(), lat.x_values().back()}},
            {"y_range", {lat.y_values().front(), lat.y_values().back()}},
            {"max_fixed_point_residual", stats.max_fixed_point_residual},
            {"edge_contacts", stats.edge_contacts}};
}

inline void write_trades_header(std::ostream& os) { os << "path_id,strategy,t,side,shares,price,spread,cash_flow\n"; }

inline void write_trades(std::ostream& os, std::size_t path_id, std::string_view strategy, const StrategyResult& r) {
    for (const auto& tr : r.trades) {
        os << path_id << ',' << strategy << ',' << fmt_num(tr.t) << ',' << to_string(tr.side) << ','
           << fmt_num(tr.shares) << ',' << fmt_num(tr.price_p) << ',' << fmt_num(tr.spread) << ','
           << fmt_num(tr.cash_flow) << '\n';
    }
}

inline void write_metrics_header(std::ostream& os) { os << "path_id,strategy,N,PL,PS,max_abs_y\n"; }

inline void write_metrics(std::ostream& os, std::size_t path_id, std::string_view strategy, const StrategyResult& r) {
    os << path_id << ',' << strategy << ',' << r.n_trades << ',' << fmt_num(r.profit) << ','
       << fmt_num(r.profit_per_share) << ',' << fmt_num(r.max_abs_position) << '\n';
}

inline void write_summary_header(std::ostream& os) {
    os << "scenario,strategy,N_mean,N_se,PL_mean,PL_se,PS_mean,PS_se\n";
}

inline void write_summary(std::ostream& os, std::string_view scenario, std::string_view strategy,
                          const StrategySummary& s) {
    os << scenario << ',' << strategy << ',' << fmt_num(s.trades.mean) << ',' << fmt_num(s.trades.se) << ','
       << fmt_num(s.profit.mean) << ',' << fmt_num(s.profit.se) << ',' << fmt_num(s.profit_per_share.mean) << ','
       << fmt_num(s.profit_per_share.se) << '\n';
}

// ---- scenario pipeline ----

struct RunOptions {
    unsigned threads = 1;
    bool write_trades = true;
};

struct ScenarioOutcome {
    std::string name;
    std::optional<StrategySummary> optimal;
    std::optional<StrategySummary> benchmark;
    SolveStats solve_stats;
    std::vector<std::string> files;
};

inline SimulationRequest simulation_request(const ScenarioConfig& c, unsigned threads) {
    SimulationRequest req;
    req.n_paths = c.simulation.n_paths;
    req.n_steps = c.simulation.n_steps;
    req.p0 = c.simulation.p0;
    req.x0 = c.simulation.x0;
    req.seed = c.simulation.seed;
    req.scheme = c.simulation.scheme;
    req.threads = threads;
    return req;
}

inline Solution solve_scenario(const ScenarioConfig& c, unsigned threads) {
    SolveOptions opt;
    opt.threads = threads;
    return solve(c.model, c.costs, c.gamma, c.grid, c.simulation.p0, opt);
}

/// Solve, simulate, run both strategies, write reports into out_dir/<name>/.
/// The manifest is written last.
inline ScenarioOutcome run_scenario(const ScenarioConfig& c, const std::filesystem::path& out_dir,
                                    const RunOptions& opt = {}) {
    c.validate();
    RunManifest manifest;
    manifest.started_at = utc_timestamp();
    manifest.config_hash = config_hash(to_json(c));
    manifest.seeds = {c.simulation.seed};

    const auto dir = out_dir / c.name;
    std::filesystem::create_directories(dir);
    ScenarioOutcome out;
    out.name = c.name;

    std::optional<Solution> sol;
    if (c.strategies.optimal) {
        sol = solve_scenario(c, opt.threads);
        out.solve_stats = sol->stats;
        std::ofstream b(dir / "boundaries.csv");
        std::vector<double> times;
        for (int i = 0; i < sol->boundaries.n_time(); ++i) times.push_back(sol->boundaries.lattice().time(i));
        std::vector<ProbePoint> probes;
        for (const auto& pr : preset_probes()) {
            const auto& lat = sol->boundaries.lattice();
            const double z = lat.z_of_p(pr.p), w = lat.w_of_x(pr.x);
            if (z > lat.z_values().front() && z < lat.z_values().back() && w > lat.w_values().front() &&
                w < lat.w_values().back())
                probes.push_back(pr);
        }
        emit_boundary_figures_data(b, sol->boundaries, probes, times);
        out.files.push_back("boundaries.csv");
        std::ofstream l(dir / "lattice.json");
        l << lattice_summary(sol->boundaries.lattice(), sol->stats).dump(2) << '\n';
        out.files.push_back("lattice.json");
    }

    const PathSet paths = simulate_paths(c.model, simulation_request(c, opt.threads));
    const std::size_t n = paths.n_paths;
    std::vector<StrategyResult> opt_res(c.strategies.optimal ? n : 0), bench_res(c.strategies.benchmark ? n : 0);
    parallel_for(n, opt.threads, [&](std::size_t i) {
        const PathView view{paths.path_p(i), paths.path_x(i), paths.delta_t};
        if (c.strategies.optimal) opt_res[i] = run_optimal_strategy(view, sol->boundaries, c.costs, c.model);
        if (c.strategies.benchmark)
            bench_res[i] = run_benchmark_strategy(view, c.model, c.costs, c.strategies.benchmark_rule);
    });

    {
        std::ofstream m(dir / "metrics.csv");
        write_metrics_header(m);
        for (std::size_t i = 0; i < n; ++i) {
            if (c.strategies.optimal) write_metrics(m, i, "optimal", opt_res[i]);
            if (c.strategies.benchmark) write_metrics(m, i, "benchmark", bench_res[i]);
        }
        out.files.push_back("metrics.csv");
    }
    if (opt.write_trades) {
        std::ofstream t(dir / "trades.csv");
        write_trades_header(t);
        for (std::size_t i = 0; i < n; ++i) {
            if (c.strategies.optimal) write_trades(t, i, "optimal", opt_res[i]);
            if (c.strategies.benchmark) write_trades(t, i, "benchmark", bench_res[i]);
        }
        out.files.push_back("trades.csv");
    }
    {
        std::ofstream s(dir / "summary.csv");
        write_summary_header(s);
        if (c.strategies.optimal) {
            out.optimal = aggregate_metrics(opt_res);
            write_summary(s, c.name, "optimal", *out.optimal);
        }
        if (c.strategies.benchmark) {
            out.benchmark = aggregate_metrics(bench_res);
            write_summary(s, c.name, "benchmark", *out.benchmark);
        }
        out.files.push_back("summary.csv");
    }
    {
        std::ofstream cfg(dir / "config.json");
        cfg << to_json(c).dump(2) << '\n';
        out.files.push_back("config.json");
    }
    manifest.outputs = out.files;
    manifest.finished_at = utc_timestamp();
    manifest.write(dir);
    out.files.push_back("manifest.json");
    return out;
}

// ---- backtest pipeline ----

struct BacktestConfig {
    std::string name = "pair";
    std::string p_csv;  // date,price files, resolved relative to the config file
    std::string q_csv;
    double delta_t = 1.0 / 252.0;
    std::string test_start;  // first date of the test window (inclusive)
    std::string test_end;    // last date of the test window (inclusive)
    std::size_t calibration_obs = 756;  // trailing window, three years of trading days
    CalibrationOptions calibration;
    CostSpec costs;
    double gamma = 5.0;
    GridSpec grid;
    BenchmarkRule benchmark_rule;
    bool ignore_screen = false;  // diagnostics only: trade even when the ADF screen fails
};

inline BacktestConfig backtest_from_json(const json& j) {
    BacktestConfig c;
    detail::ObjectReader r(j, "");
    r.read("name", c.name);
    r.read("test_start", c.test_start);
    r.read("test_end", c.test_end);
    r.read("calibration_obs", c.calibration_obs);
    r.read("gamma", c.gamma);
    r.read("ignore_screen", c.ignore_screen);
    r.read("p_csv", c.p_csv);
    r.read("q_csv", c.q_csv);
    r.read("delta_t", c.delta_t);
    detail::require(c.delta_t > 0, "delta_t", "must be positive");
    if (auto* cal = r.child("calibration")) {
        detail::ObjectReader cr(*cal, "calibration");
        cr.read("adf_lag", c.calibration.adf_lag);
        cr.read("min_length", c.calibration.min_length);
        cr.read("r", c.calibration.r);
        cr.finish();
    }
    if (auto* k = r.child("costs")) read_costs(*k, "costs", c.costs);
    if (auto* g = r.child("grid")) read_grid(*g, "grid", c.grid);
    if (auto* b = r.child("benchmark")) {
        detail::ObjectReader br(*b, "benchmark");
        std::string sd(to_string(c.benchmark_rule.sd_mode));
        br.read("sd", sd);
        c.benchmark_rule.sd_mode = parse_benchmark_sd(sd);
        br.read("threshold", c.benchmark_rule.threshold_sds);
        br.read("shares", c.benchmark_rule.shares);
        br.read("high_spread_side", c.benchmark_rule.high_spread_side);
        br.finish();
    }
    r.finish();
    CaraUtility{c.gamma}.validate();
    c.costs.validate();
    return c;
}

struct BacktestOutcome {
    std::string name;
    bool traded = false;
    std::string skip_reason;
    std::optional<CalibrationReport> calibration;
    std::optional<StrategyResult> optimal;
    std::optional<StrategyResult> benchmark;
};

inline std::size_t find_date(const PriceHistory& h, const std::string& date, const char* what) {
    for (std::size_t i = 0; i < h.dates.size(); ++i)
        if (h.dates[i] == date) return i;
    throw ValidationError(fmt::format("{} date {} is not in the price history", what, date), what);
}

/// Calibrate on the trailing window, screen, solve with the fitted model over
/// the test horizon and replay both strategies on the test window.
inline BacktestOutcome run_backtest(const PriceHistory& history, const BacktestConfig& cfg, unsigned threads = 1) {
    if (cfg.test_start.empty() || cfg.test_end.empty())
        throw ValidationError("backtest: test window (test_start, test_end) is required", "test_window");
    history.validate(0);
    const std::size_t s = find_date(history, cfg.test_start, "test_start");
    const std::size_t e = find_date(history, cfg.test_end, "test_end");
    if (e <= s + 1) throw ValidationError("backtest: test window needs at least 3 observations", "test_window");
    if (s < cfg.calibration_obs)
        throw ValidationError(fmt::format("backtest: insufficient history, {} observations before {} but {} needed",
                                          s, cfg.test_start, cfg.calibration_obs),
                              "history");

    BacktestOutcome out;
    out.name = cfg.name;
    const PriceHistory train = history.slice(s - cfg.calibration_obs, s);
    const PriceHistory test = history.slice(s, e + 1);

    CalibrationOptions copt = cfg.calibration;
    copt.T = static_cast<double>(test.size() - 1) * history.delta_t;
    try {
        out.calibration = calibrate(train, copt);
    } catch (const CalibrationError& err) {
        out.skip_reason = err.what();
        return out;
    }
    if (!out.calibration->actionable && !cfg.ignore_screen) {
        out.skip_reason = "unit root not rejected";
        return out;
    }

    std::vector<double> p_tilde;
    const std::vector<double> x = apply_hedge(out.calibration->hedge, test.p_series, test.q_series, &p_tilde);
    const ModelParams& m = out.calibration->params;
    SolveOptions sopt;
    sopt.threads = threads;
    const Solution sol = solve(m, cfg.costs, cfg.gamma, cfg.grid, p_tilde.front(), sopt);
    const PathView view{p_tilde, x, history.delta_t};
    out.optimal = run_optimal_strategy(view, sol.boundaries, cfg.costs, m);
    out.benchmark = run_benchmark_strategy(view, m, cfg.costs, cfg.benchmark_rule);
    out.traded = true;
    return out;
}

inline json to_json(const CalibrationReport& r) {
    return {{"alpha", r.hedge.alpha},
            {"beta", r.hedge.beta},
            {"alpha_se", r.hedge.alpha_se},
            {"beta_se", r.hedge.beta_se},
            {"r_squared", r.hedge.r_squared},
            {"residual_sd", r.hedge.residual_sd},
            {"params", to_json(r.params)},
            {"standard_errors",
             {{"mu", r.gbm.mu_se},
              {"sigma", r.gbm.sigma_se},
              {"kappa", r.ou.kappa_se},
              {"theta", r.ou.theta_se},
              {"nu", r.ou.nu_se},
              {"rho", r.correlation.rho_se}}},
            {"adf",
             {{"statistic", r.adf.statistic},
              {"critical_value_5pct", r.adf.critical_value_5pct},
              {"lags", r.adf.lags},
              {"n_obs", r.adf.n_obs},
              {"decision", r.adf.is_stationary ? "stationary" : "unit root not rejected"}}},
            {"actionable", r.actionable},
            {"spread_series", r.hedge.spread}};
}

inline void write_calibration_row_header(std::ostream& os) {
    os << "pair,alpha,beta,mu,sigma,kappa,theta,nu,rho,adf_statistic,adf_critical_5pct,stationary\n";
}

inline void write_calibration_row(std::ostream& os, std::string_view pair, const CalibrationReport& r) {
    const auto& m = r.params;
    os << pair << ',' << fmt_num(r.hedge.alpha) << ',' << fmt_num(r.hedge.beta) << ',' << fmt_num(m.mu) << ','
       << fmt_num(m.sigma) << ',' << fmt_num(m.kappa) << ',' << fmt_num(m.theta) << ',' << fmt_num(m.nu) << ','
       << fmt_num(m.rho) << ',' << fmt_num(r.adf.statistic) << ',' << fmt_num(r.adf.critical_value_5pct) << ','
       << (r.adf.is_stationary ? "true" : "false") << '\n';
}

inline void write_backtest_header(std::ostream& os) {
    os << "pair,test_start,test_end,status,N_o,PL_o,PS_o,N_b,PL_b,PS_b\n";
}

inline void write_backtest_row(std::ostream& os, const BacktestConfig& cfg, const BacktestOutcome& b) {
    os << cfg.name << ',' << cfg.test_start << ',' << cfg.test_end << ',';
    if (!b.traded) {
        os << "skipped: " << b.skip_reason << ",,,,,,\n";
        return;
    }
    os << "traded," << b.optimal->n_trades << ',' << fmt_num(b.optimal->profit) << ','
       << fmt_num(b.optimal->profit_per_share) << ',' << b.benchmark->n_trades << ','
       << fmt_num(b.benchmark->profit) << ',' << fmt_num(b.benchmark->profit_per_share) << '\n';
}

// ---- synthetic histories ----

/// ISO date `days` after 2000-01-03 counting only weekdays.
inline std::string synthetic_trading_date(std::size_t days) {
    using namespace std::chrono;
    sys_days d = sys_days{year{2000} / January / 3};  // a Monday
    d += std::chrono::days{(days / 5) * 7 + days % 5};
    const year_month_day ymd{d};
    return fmt::format("{:04d}-{:02d}-{:02d}", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                       static_cast<unsigned>(ymd.day()));
}

/// Pair generated from the model: p follows the GBM, log q = alpha + beta log p + x
/// with x the OU spread (x0 drawn from its stationary law).
inline PriceHistory synthetic_pair(const ModelParams& m, double alpha, double beta, std::size_t n_obs,
                                   double delta_t, std::uint64_t seed, double p0 = 1.0) {
    SimulationRequest req;
    req.n_paths = 1;
    req.n_steps = n_obs - 1;
    req.p0 = p0;
    req.seed = seed;
    ModelParams mm = m;
    mm.T = delta_t * static_cast<double>(n_obs - 1);
    const PathSet ps = simulate_paths(mm, req);
    PriceHistory h;
    h.delta_t = delta_t;
    for (std::size_t k = 0; k < n_obs; ++k) {
        const double p = ps.p(0, k), x = ps.x(0, k);
        h.dates.push_back(synthetic_trading_date(k));
        h.p_series.push_back(p);
        h.q_series.push_back(std::exp(alpha + beta * std::log(p) + x));
    }
    return h;
}

}  // namespace pairs_hjb
