#pragma once

// Correlated (price, spread) sample paths.
//
// Random stream: each path owns a std::mt19937_64 seeded with
// splitmix64(seed + (path_id + 1) * 0x9E3779B97F4A7C15). Uniforms take the top
// 53 bits, u = ((bits >> 11) + 0.5) * 2^-53, and standard normals come in pairs
// from the Box-Muller transform (cos branch first). Both generator and
// transform are fully specified, so streams are reproducible across platforms
// and languages.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numbers>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "pairs_hjb/errors.hpp"
#include "pairs_hjb/market_model.hpp"
#include "pairs_hjb/parallel.hpp"

namespace pairs_hjb {

enum class Scheme { exact, euler };

inline Scheme parse_scheme(std::string_view name) {
    if (name == "exact") return Scheme::exact;
    if (name == "euler") return Scheme::euler;
    throw ValidationError("scheme: unknown simulation scheme '" + std::string(name) + "'", "scheme");
}

inline std::string_view to_string(Scheme s) { return s == Scheme::exact ? "exact" : "euler"; }

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Standard-normal source for one path substream.
class NormalStream {
public:
    NormalStream(std::uint64_t seed, std::uint64_t path_id)
        : engine_(splitmix64(seed + (path_id + 1) * 0x9E3779B97F4A7C15ULL)) {}

    double uniform() {
        return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

struct PriceSpread {
    double p;
    double x;
};

/// Lower-triangular correlation: returns rho z1 + sqrt(1 - rho^2) z2.
inline double correlate(double rho, double z1, double z2) {
    return rho * z1 + std::sqrt(std::max(0.0, 1.0 - rho * rho)) * z2;
}

/// Exact conditional draw: GBM step for p and the Gaussian OU transition for x.
inline PriceSpread step_exact(double p, double x, double delta_t, const ModelParams& m,
                              double z1, double z2) {
    detail::require(delta_t > 0, "delta_t", "must be > 0");
    const double decay = std::exp(-m.kappa * delta_t);
    const double sd_x = m.nu * std::sqrt(-std::expm1(-2.0 * m.kappa * delta_t) / (2.0 * m.kappa));
    const double p_next =
        p * std::exp((m.mu - 0.5 * m.sigma * m.sigma) * delta_t + m.sigma * std::sqrt(delta_t) * z1);
    const double x_next = x * decay + m.theta * (1.0 - decay) + sd_x * correlate(m.rho, z1, z2);
    return {p_next, x_next};
}

/// One draw from the Euler bivariate-normal transition of (log p, x).
inline PriceSpread step_euler(double p, double x, double delta_t, const ModelParams& m,
                              double z1, double z2) {
    detail::require(delta_t > 0, "delta_t", "must be > 0");
    detail::require(delta_t * m.kappa < 1.0, "delta_t", "delta_t * kappa must be < 1");
    const double sq = std::sqrt(delta_t);
    const double p_next =
        p * std::exp((m.mu - 0.5 * m.sigma * m.sigma) * delta_t + m.sigma * sq * z1);
    const double x_next = (1.0 - delta_t * m.kappa) * x + delta_t * m.kappa * m.theta +
                          m.nu * sq * correlate(m.rho, z1, z2);
    return {p_next, x_next};
}

inline double stationary_spread_sd(const ModelParams& m) {
    detail::require(m.kappa > 0, "kappa", "must be > 0");
    return m.nu / std::sqrt(2.0 * m.kappa);
}

/// Simulated paths on the uniform clock t_k = k * delta_t, k = 0..n_steps.
struct PathSet {
    double delta_t = 0.0;
    std::size_t n_steps = 0;
    std::size_t n_paths = 0;
    std::uint64_t seed = 0;
    Scheme scheme = Scheme::exact;
    std::vector<double> p_series;  // row-major [path][step]
    std::vector<double> x_series;

    std::size_t stride() const { return n_steps + 1; }
    double p(std::size_t path, std::size_t step) const { return p_series[path * stride() + step]; }
    double x(std::size_t path, std::size_t step) const { return x_series[path * stride() + step]; }
    double t(std::size_t step) const { return static_cast<double>(step) * delta_t; }

    std::span<const double> path_p(std::size_t path) const {
        return std::span<const double>(p_series).subspan(path * stride(), stride());
    }
    std::span<const double> path_x(std::size_t path) const {
        return std::span<const double>(x_series).subspan(path * stride(), stride());
    }
};

struct SimulationRequest {
    std::size_t n_paths = 1000;
    std::size_t n_steps = 100;
    double p0 = 1.0;
    /// Fixed initial spread; when empty each path draws x0 from the stationary
    /// law Normal(theta, nu^2 / (2 kappa)) using its own substream.
    std::optional<double> x0;
    std::uint64_t seed = 20240601;
    Scheme scheme = Scheme::exact;
    unsigned threads = 1;
};

inline PathSet simulate_paths(const ModelParams& m, const SimulationRequest& req) {
    m.validate();
    detail::require(req.n_paths >= 1, "n_paths", "must be >= 1");
    detail::require(req.n_steps >= 1, "n_steps", "must be >= 1");
    detail::require(req.p0 > 0 && std::isfinite(req.p0), "p0", "must be > 0");
    if (req.x0) detail::require_finite(*req.x0, "x0");

    PathSet out;
    out.delta_t = m.T / static_cast<double>(req.n_steps);
    out.n_steps = req.n_steps;
    out.n_paths = req.n_paths;
    out.seed = req.seed;
    out.scheme = req.scheme;
    if (req.scheme == Scheme::euler) {
        detail::require(out.delta_t * m.kappa < 1.0, "n_steps", "Euler scheme needs delta_t * kappa < 1");
    }
    out.p_series.resize(req.n_paths * out.stride());
    out.x_series.resize(req.n_paths * out.stride());

    const double sd0 = stationary_spread_sd(m);
    parallel_for(req.n_paths, req.threads, [&](std::size_t path) {
        NormalStream rng(req.seed, path);
        double p = req.p0;
        double x = req.x0 ? *req.x0 : m.theta + sd0 * rng.normal();
        const std::size_t base = path * out.stride();
        out.p_series[base] = p;
        out.x_series[base] = x;
        for (std::size_t k = 1; k <= req.n_steps; ++k) {
            const double z1 = rng.normal();
            const double z2 = rng.normal();
            const auto next = req.scheme == Scheme::exact ? step_exact(p, x, out.delta_t, m, z1, z2)
                                                          : step_euler(p, x, out.delta_t, m, z1, z2);
            p = next.p;
            x = next.x;
            out.p_series[base + k] = p;
            out.x_series[base + k] = x;
        }
    });
    return out;
}

// CSV layout: path_id,step,t,p,x  (one row per step per path)

inline void write_paths_csv(std::ostream& os, const PathSet& paths) {
    os << "path_id,step,t,p,x\n";
    for (std::size_t i = 0; i < paths.n_paths; ++i) {
        for (std::size_t k = 0; k <= paths.n_steps; ++k) {
            os << fmt::format("{},{},{:.17g},{:.17g},{:.17g}\n", i, k, paths.t(k), paths.p(i, k),
                              paths.x(i, k));
        }
    }
}

inline PathSet read_paths_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line.rfind("path_id,step,t,p,x", 0) != 0) {
        throw ValidationError("paths csv: missing header 'path_id,step,t,p,x'", "header");
    }
    struct Row {
        std::size_t path, step;
        double t, p, x;
    };
    std::vector<Row> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        Row r{};
        char c1, c2, c3, c4;
        if (!(ls >> r.path >> c1 >> r.step >> c2 >> r.t >> c3 >> r.p >> c4 >> r.x) || c1 != ',' ||
            c2 != ',' || c3 != ',' || c4 != ',') {
            throw ValidationError("paths csv: malformed row '" + line + "'", "row");
        }
        rows.push_back(r);
    }
    if (rows.empty()) throw ValidationError("paths csv: no rows", "row");

    PathSet out;
    std::size_t max_path = 0, max_step = 0;
    for (const auto& r : rows) {
        max_path = std::max(max_path, r.path);
        max_step = std::max(max_step, r.step);
    }
    out.n_paths = max_path + 1;
    out.n_steps = max_step;
    detail::require(out.n_steps >= 1, "step", "need at least two time points");
    detail::require(rows.size() == out.n_paths * out.stride(), "row", "ragged path set");
    out.p_series.assign(rows.size(), 0.0);
    out.x_series.assign(rows.size(), 0.0);
    for (const auto& r : rows) {
        detail::require(r.p > 0, "p", "prices must be > 0");
        out.p_series[r.path * out.stride() + r.step] = r.p;
        out.x_series[r.path * out.stride() + r.step] = r.x;
        if (r.step == 1) out.delta_t = r.t;
    }
    return out;
}

}  // namespace pairs_hjb
