#pragma once

// Backward dynamic program for the reduced value H(t, p, x, y) of the CARA
// pairs-trading problem, and extraction of the buy/sell boundaries.
//
// Per time slice chi_i:
//   H(y) = min{ F_b H(y + xi),  F_s H(y - xi),  E[H(chi_{i+1}, ., ., y)] }
// with log F_b = gamma xi A_-(p, x) e^{r(T - chi_i)} and
//      log F_s = -gamma xi A_+(p, x) e^{r(T - chi_i)}.
// The same-slice references are resolved by a descending-y sweep (buys), an
// ascending-y sweep (sells) and a pointwise min; F_b F_s >= 1 makes that the
// fixed point, which is re-checked after every slice.
//
// All values are log H.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "pairs_hjb/errors.hpp"
#include "pairs_hjb/grid.hpp"
#include "pairs_hjb/market_model.hpp"
#include "pairs_hjb/parallel.hpp"

namespace pairs_hjb {

/// log F_b and log F_s for one (p, x, t) node.
struct ControlFactors {
    double log_buy = 0.0;
    double log_sell = 0.0;

    double buy() const { return std::exp(log_buy); }
    double sell() const { return std::exp(log_sell); }
};

inline ControlFactors control_factors(double p, double x, double t, double gamma, const CostSpec& costs,
                                      double xi, double r, double T) {
    detail::require(gamma > 0, "gamma", "must be > 0");
    detail::require(std::isfinite(xi) && xi >= 0, "xi", "must be >= 0");
    const auto a = effective_prices(p, x, costs);
    const double growth = std::exp(r * (T - t));
    return {gamma * xi * a.minus * growth, -gamma * xi * a.plus * growth};
}

/// Control factors of every (z, w) node at decision time chi_i.
inline std::vector<ControlFactors> slice_controls(const Lattice& lattice, int i, double gamma,
                                                  const CostSpec& costs, const ModelParams& m) {
    std::vector<ControlFactors> out(lattice.n_nodes());
    const double t = lattice.time(i);
    for (int iz = 0; iz < lattice.nz(); ++iz) {
        for (int jw = 0; jw < lattice.nw(); ++jw) {
            out[lattice.node(iz, jw)] = control_factors(lattice.p_values()[iz], lattice.x_values()[jw], t,
                                                        gamma, costs, lattice.xi(), m.r, m.T);
        }
    }
    return out;
}

/// log H at maturity: -gamma J(p, x, y) on every lattice point.
inline std::vector<double> terminal_slice(const Lattice& lattice, double gamma, const CostSpec& costs) {
    std::vector<double> out(lattice.slice_size());
    for (int iz = 0; iz < lattice.nz(); ++iz) {
        for (int jw = 0; jw < lattice.nw(); ++jw) {
            const auto node = lattice.node(iz, jw);
            for (int k = 0; k < lattice.ny(); ++k) {
                out[lattice.index(node, k)] = log_terminal_h(lattice.p_values()[iz], lattice.x_values()[jw],
                                                             lattice.y_values()[k], gamma, costs);
            }
        }
    }
    return out;
}

/// log E[H(chi_{i+1}, ., ., y)] at every lattice point.
inline std::vector<double> continuation(std::span<const double> next, const TransitionRule& rule,
                                        unsigned threads = 1) {
    const Lattice& lat = rule.lattice();
    const int ny = lat.ny();
    const std::size_t n_nodes = lat.n_nodes();
    if (next.size() != lat.slice_size()) throw ValidationError("slice: size does not match lattice", "slice");

    // per-y shift keeps exp() in range; the span of log H over (z, w) at fixed
    // y is far below the double exponent range
    std::vector<double> shift(ny, -std::numeric_limits<double>::infinity());
    for (std::size_t n = 0; n < n_nodes; ++n) {
        for (int k = 0; k < ny; ++k) {
            const double v = next[n * ny + k];
            if (!std::isfinite(v)) throw NumericalError("continuation: non-finite log H in next slice");
            shift[k] = std::max(shift[k], v);
        }
    }
    std::vector<double> scaled(next.size());
    for (std::size_t n = 0; n < n_nodes; ++n) {
        for (int k = 0; k < ny; ++k) scaled[n * ny + k] = std::exp(next[n * ny + k] - shift[k]);
    }

    std::vector<double> out(next.size());
    parallel_for(n_nodes, threads, [&](std::size_t n) {
        double* acc = out.data() + n * ny;
        std::fill(acc, acc + ny, 0.0);
        const auto targets = rule.targets(n);
        const auto weights = rule.weights(n);
        for (std::size_t t = 0; t < targets.size(); ++t) {
            const double w = weights[t];
            const double* src = scaled.data() + static_cast<std::size_t>(targets[t]) * ny;
            for (int k = 0; k < ny; ++k) acc[k] += w * src[k];
        }
        for (int k = 0; k < ny; ++k) {
            if (acc[k] > 1e-280) {
                acc[k] = std::log(acc[k]) + shift[k];
                continue;
            }
            // underflow: exact log-sum-exp for this entry
            double m = -std::numeric_limits<double>::infinity();
            for (auto tg : targets) m = std::max(m, next[static_cast<std::size_t>(tg) * ny + k]);
            double s = 0.0;
            for (std::size_t t = 0; t < targets.size(); ++t) {
                s += weights[t] * std::exp(next[static_cast<std::size_t>(targets[t]) * ny + k] - m);
            }
            acc[k] = std::log(s) + m;
        }
    });
    return out;
}

/// Resolves the within-slice min over chained trades for one (z, w) column.
/// `cont` and `out` have ny entries.
inline void resolve_column(std::span<const double> cont, ControlFactors f, std::span<double> out) {
    const std::size_t ny = cont.size();
    std::vector<double> buy(ny), sell(ny);
    buy[ny - 1] = cont[ny - 1];
    for (std::size_t k = ny - 1; k-- > 0;) buy[k] = std::min(cont[k], f.log_buy + buy[k + 1]);
    sell[0] = cont[0];
    for (std::size_t k = 1; k < ny; ++k) sell[k] = std::min(cont[k], f.log_sell + sell[k - 1]);
    for (std::size_t k = 0; k < ny; ++k) out[k] = std::min(buy[k], sell[k]);
}

/// Largest change (in log H, i.e. relative change in H) produced by
/// re-applying the three-way min to a resolved column.
inline double fixed_point_residual(std::span<const double> cont, ControlFactors f, std::span<const double> h) {
    const std::size_t ny = cont.size();
    double worst = 0.0;
    for (std::size_t k = 0; k < ny; ++k) {
        double v = cont[k];
        if (k + 1 < ny) v = std::min(v, f.log_buy + h[k + 1]);
        if (k > 0) v = std::min(v, f.log_sell + h[k - 1]);
        worst = std::max(worst, std::abs(v - h[k]) / std::max(1.0, std::abs(h[k])));
    }
    return worst;
}

struct StepResult {
    std::vector<double> log_h;
    std::vector<double> log_continuation;
    double fixed_point_residual = 0.0;
};

inline constexpr double kFixedPointTolerance = 1e-12;

/// One backward step: slice at chi_{i+1} -> slice at chi_i.
inline StepResult backward_step(std::span<const double> next, const TransitionRule& rule,
                                std::span<const ControlFactors> controls, unsigned threads = 1) {
    const Lattice& lat = rule.lattice();
    if (controls.size() != lat.n_nodes()) throw ValidationError("controls: one entry per node required", "controls");
    StepResult res;
    res.log_continuation = continuation(next, rule, threads);
    res.log_h.resize(next.size());
    const std::size_t ny = lat.ny();
    std::vector<double> residual(lat.n_nodes(), 0.0);
    parallel_for(lat.n_nodes(), threads, [&](std::size_t n) {
        std::span<const double> cont(res.log_continuation.data() + n * ny, ny);
        std::span<double> h(res.log_h.data() + n * ny, ny);
        resolve_column(cont, controls[n], h);
        residual[n] = fixed_point_residual(cont, controls[n], h);
    });
    res.fixed_point_residual = *std::max_element(residual.begin(), residual.end());
    if (!(res.fixed_point_residual < kFixedPointTolerance)) {
        throw NumericalError("backward_step: slice is not a fixed point of the three-way min (residual " +
                             std::to_string(res.fixed_point_residual) + ")");
    }
    return res;
}

enum class Branch : std::uint8_t { none, buy, sell };

/// Which branch attains the min at y-index k of a resolved column. Exact ties
/// (within the fixed-point tolerance) go to no-transaction.
inline Branch attribute_branch(std::span<const double> cont, ControlFactors f, std::span<const double> h,
                               std::size_t k) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    const std::size_t ny = cont.size();
    const double lb = k + 1 < ny ? f.log_buy + h[k + 1] : inf;
    const double ls = k > 0 ? f.log_sell + h[k - 1] : inf;
    const double tol = kFixedPointTolerance * std::max(1.0, std::abs(cont[k]));
    if (lb < cont[k] - tol && lb <= ls) return Branch::buy;
    if (ls < cont[k] - tol && ls < lb) return Branch::sell;
    return Branch::none;
}

inline constexpr int kNoBoundary = -1;

/// Buy/sell boundary y-indices per (z, w) node for one decision time.
struct BoundarySlice {
    std::vector<int> buy;   // largest k where buying is optimal, or kNoBoundary
    std::vector<int> sell;  // smallest k where selling is optimal, or kNoBoundary
};

inline BoundarySlice extract_boundaries(const Lattice& lat, std::span<const double> log_h,
                                        std::span<const double> log_cont, std::span<const ControlFactors> controls) {
    BoundarySlice out;
    out.buy.assign(lat.n_nodes(), kNoBoundary);
    out.sell.assign(lat.n_nodes(), kNoBoundary);
    const std::size_t ny = lat.ny();
    for (std::size_t n = 0; n < lat.n_nodes(); ++n) {
        std::span<const double> cont(log_cont.data() + n * ny, ny);
        std::span<const double> h(log_h.data() + n * ny, ny);
        for (std::size_t k = 0; k < ny; ++k) {
            const Branch b = attribute_branch(cont, controls[n], h, k);
            if (b == Branch::buy) out.buy[n] = static_cast<int>(k);
            if (b == Branch::sell && out.sell[n] == kNoBoundary) out.sell[n] = static_cast<int>(k);
        }
    }
    return out;
}

struct BoundaryPair {
    std::optional<double> buy;
    std::optional<double> sell;
};

/// Boundaries over all decision times chi_0 .. chi_{n-1}.
class BoundaryField {
public:
    BoundaryField(Lattice lattice) : lattice_(std::move(lattice)) {
        slices_.resize(lattice_.n_time());
    }

    const Lattice& lattice() const { return lattice_; }
    int n_time() const { return lattice_.n_time(); }
    const BoundarySlice& slice(int i) const { return slices_.at(i); }
    BoundarySlice& slice(int i) { return slices_.at(i); }

    std::optional<double> y_buy(int i, std::size_t node) const { return to_y(slices_.at(i).buy[node]); }
    std::optional<double> y_sell(int i, std::size_t node) const { return to_y(slices_.at(i).sell[node]); }

    /// Decision-time index nearest to t; throws when t is further than
    /// `tolerance` from every decision time.
    int time_index(double t, double tolerance) const {
        const double delta = lattice_.delta();
        const int i = static_cast<int>(std::lround(t / delta));
        if (i < 0 || i >= n_time() || std::abs(i * delta - t) > tolerance) {
            throw ValidationError("time " + std::to_string(t) + " does not match a boundary slice", "t");
        }
        return i;
    }

    /// Boundaries at the lattice node nearest to (p, x).
    BoundaryPair nearest(int i, double p, double x) const {
        const auto [iz, jw] = lattice_.nearest_node(p, x);
        const auto node = lattice_.node(iz, jw);
        return {y_buy(i, node), y_sell(i, node)};
    }

    /// Boundaries bilinearly interpolated in (z, w). A side that is missing at
    /// any of the four corners falls back to the nearest node.
    BoundaryPair interpolated(int i, double p, double x) const {
        if (!lattice_.contains(p, x)) {
            throw ValidationError("probe (" + std::to_string(p) + ", " + std::to_string(x) +
                                      ") lies outside the lattice",
                                  "probe");
        }
        const auto b = lattice_.bilinear(lattice_.z_of_p(p), lattice_.w_of_x(x));
        auto interp = [&](const std::vector<int>& idx) -> std::optional<double> {
            double acc = 0.0;
            for (int dz = 0; dz < 2; ++dz) {
                for (int dw = 0; dw < 2; ++dw) {
                    const int k = idx[lattice_.node(b.iz0 + dz, b.jw0 + dw)];
                    if (k == kNoBoundary) return std::nullopt;
                    acc += (dz ? b.tz : 1.0 - b.tz) * (dw ? b.tw : 1.0 - b.tw) * lattice_.y_values()[k];
                }
            }
            return acc;
        };
        const auto& s = slices_.at(i);
        BoundaryPair near = nearest(i, p, x);
        BoundaryPair out{interp(s.buy), interp(s.sell)};
        if (!out.buy) out.buy = near.buy;
        if (!out.sell) out.sell = near.sell;
        return out;
    }

private:
    std::optional<double> to_y(int k) const {
        if (k == kNoBoundary) return std::nullopt;
        return lattice_.y_values()[k];
    }

    Lattice lattice_;
    std::vector<BoundarySlice> slices_;
};

struct SolveOptions {
    unsigned threads = 1;
    bool keep_all_slices = false;
    std::vector<int> keep_slices;  // time indices whose log H is retained
};

struct SolveStats {
    double max_fixed_point_residual = 0.0;
    std::size_t edge_contacts = 0;  // boundary at the last buyable / first sellable y
};

struct Solution {
    BoundaryField boundaries;
    /// Retained log H slices keyed by time index (n_time = maturity).
    std::map<int, std::vector<double>> log_h;
    /// Matching log continuation slices (not present for maturity).
    std::map<int, std::vector<double>> log_continuation;
    SolveStats stats;
};

/// Full backward induction from maturity to chi_0.
inline Solution solve(const ModelParams& m, const CostSpec& costs, double gamma, const GridSpec& spec,
                      double p0 = 1.0, const SolveOptions& opt = {}) {
    m.validate();
    costs.validate();
    CaraUtility{gamma}.validate();
    Lattice lattice(spec, m, p0);
    TransitionRule rule(lattice, m);

    Solution sol{BoundaryField(lattice), {}, {}, {}};
    auto keep = [&](int i) {
        return opt.keep_all_slices ||
               std::find(opt.keep_slices.begin(), opt.keep_slices.end(), i) != opt.keep_slices.end();
    };

    std::vector<double> next = terminal_slice(lattice, gamma, costs);
    if (keep(lattice.n_time())) sol.log_h[lattice.n_time()] = next;
    const int ny = lattice.ny();
    for (int i = lattice.n_time() - 1; i >= 0; --i) {
        const auto controls = slice_controls(lattice, i, gamma, costs, m);
        StepResult step = backward_step(next, rule, controls, opt.threads);
        sol.stats.max_fixed_point_residual = std::max(sol.stats.max_fixed_point_residual, step.fixed_point_residual);
        auto& bs = sol.boundaries.slice(i);
        bs = extract_boundaries(lattice, step.log_h, step.log_continuation, controls);
        for (std::size_t n = 0; n < lattice.n_nodes(); ++n) {
            if (bs.buy[n] == ny - 2 || bs.sell[n] == 1) ++sol.stats.edge_contacts;
        }
        if (keep(i)) {
            sol.log_h[i] = step.log_h;
            sol.log_continuation[i] = step.log_continuation;
        }
        next = std::move(step.log_h);
    }
    return sol;
}

}  // namespace pairs_hjb
