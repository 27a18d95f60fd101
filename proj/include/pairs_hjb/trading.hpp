#pragma once

// Strategy execution along (p, x) paths with delta-neutral accounting:
// y shares of P against -y shares of Q, a bond account g accruing at r, and
// every trade settled at the effective prices A_-(p, x) (buy) / A_+(p, x) (sell).

#include <algorithm>
#include <cmath>
#include <span>
#include <string_view>
#include <vector>

#include "pairs_hjb/errors.hpp"
#include "pairs_hjb/hjb_solver.hpp"
#include "pairs_hjb/market_model.hpp"
#include "pairs_hjb/path_sim.hpp"

namespace pairs_hjb {

enum class Side { buy_p, sell_p };

inline std::string_view to_string(Side s) { return s == Side::buy_p ? "buy" : "sell"; }

struct TradeRecord {
    double t;
    Side side;
    double shares;  // > 0
    double price_p;
    double spread;
    double cash_flow;  // -A_- shares for buys, +A_+ shares for sells
};

struct StrategyResult {
    std::vector<TradeRecord> trades;
    int n_trades = 0;
    double profit = 0.0;             // PL
    double profit_per_share = 0.0;   // PS
    double max_abs_position = 0.0;
    std::vector<double> y_series;    // position after each clock point
    double g_terminal = 0.0;         // bond after liquidation at T
    double liquidation = 0.0;        // J at T, included in g_terminal
};

/// One observed path on a uniform clock t_k = k * delta_t.
struct PathView {
    std::span<const double> p;
    std::span<const double> x;
    double delta_t;
};

/// Accrue interest over delta_t, then trade `action` paired shares at the
/// state's (p, x). Positive action buys P (and sells Q).
inline MarketState accrue_and_trade(MarketState s, double action, const CostSpec& costs, double r, double delta_t,
                                    TradeRecord* record = nullptr) {
    detail::require_finite(action, "action");
    s.g *= std::exp(r * delta_t);
    if (action != 0.0) {
        const auto a = effective_prices(s.p, s.x, costs);
        const double cash = action > 0 ? -a.minus * action : -a.plus * action;
        s.g += cash;
        s.y += action;
        if (record) *record = {s.t, action > 0 ? Side::buy_p : Side::sell_p, std::abs(action), s.p, s.x, cash};
    }
    return s;
}

/// Jump to the nearest boundary when outside [Y_b, Y_s]; otherwise hold.
inline double optimal_action(double y, const BoundaryPair& b) {
    if (b.buy && y < *b.buy) return *b.buy - y;
    if (b.sell && y > *b.sell) return *b.sell - y;
    return 0.0;
}

namespace detail {

// Shared skeleton: no trade at t_0, decisions at t_1 .. t_{n-1}, liquidation at t_n.
template <class Decide>
StrategyResult run_strategy(const PathView& path, const CostSpec& costs, double r, Decide&& decide) {
    const std::size_t n = path.p.size();
    if (n < 2 || path.x.size() != n) throw ValidationError("path: need matching p/x series of length >= 2", "path");
    StrategyResult res;
    MarketState s{0.0, path.p[0], path.x[0], 0.0, 0.0};
    res.y_series.push_back(0.0);
    for (std::size_t k = 1; k < n; ++k) {
        s.t = static_cast<double>(k) * path.delta_t;
        s.p = path.p[k];
        s.x = path.x[k];
        if (k + 1 < n) {
            const double action = decide(k, s);
            TradeRecord rec{};
            s = accrue_and_trade(s, action, costs, r, path.delta_t, &rec);
            if (action != 0.0) {
                res.trades.push_back(rec);
                ++res.n_trades;
            }
            res.max_abs_position = std::max(res.max_abs_position, std::abs(s.y));
        } else {
            s = accrue_and_trade(s, 0.0, costs, r, path.delta_t);
            res.liquidation = liquidation_value(s.p, s.x, s.y, costs);
            s.g += res.liquidation;
        }
        res.y_series.push_back(s.y);
    }
    res.g_terminal = s.g;
    res.profit = s.g;
    res.profit_per_share = res.max_abs_position > 0 ? res.profit / res.max_abs_position : 0.0;
    return res;
}

}  // namespace detail

/// Boundary policy. Each decision time is matched to the nearest boundary
/// slice (within half a lattice step) and (p, x) to the nearest lattice node.
/// The path clock may be finer than the lattice clock.
inline StrategyResult run_optimal_strategy(const PathView& path, const BoundaryField& boundaries,
                                           const CostSpec& costs, const ModelParams& m) {
    const Lattice& lat = boundaries.lattice();
    const double tol = 0.5 * lat.delta() + 1e-9;
    const double last = lat.time(lat.n_time() - 1);
    return detail::run_strategy(path, costs, m.r, [&](std::size_t, const MarketState& s) {
        // decisions strictly before maturity but past the last slice use that slice
        const double t = s.t > last && s.t < lat.horizon() - 1e-12 ? last : s.t;
        const int i = boundaries.time_index(t, tol);
        return optimal_action(s.y, boundaries.nearest(i, s.p, s.x));
    });
}

enum class BenchmarkSd { stationary, sample };

inline BenchmarkSd parse_benchmark_sd(std::string_view name) {
    if (name == "stationary") return BenchmarkSd::stationary;
    if (name == "sample") return BenchmarkSd::sample;
    throw ValidationError("benchmark_sd: expected 'stationary' or 'sample'", "benchmark_sd");
}

inline std::string_view to_string(BenchmarkSd s) { return s == BenchmarkSd::stationary ? "stationary" : "sample"; }

struct BenchmarkRule {
    BenchmarkSd sd_mode = BenchmarkSd::stationary;
    double threshold_sds = 2.0;
    double shares = 1.0;
    /// +1: a high spread (Q rich) opens a long-P position; -1 reverses it.
    int high_spread_side = 1;
};

/// Threshold strategy: open one paired share when |x - theta| exceeds
/// threshold_sds standard deviations (long P when the spread is high), close
/// when x - theta reaches or crosses zero, liquidate at T.
/// In sample mode the sd is the running sample sd of x over t_0 .. t_k.
inline StrategyResult run_benchmark_strategy(const PathView& path, const ModelParams& m, const CostSpec& costs,
                                             const BenchmarkRule& rule = {}) {
    const double stationary = stationary_spread_sd(m);
    double sum = path.x.empty() ? 0.0 : path.x[0];
    double sum_sq = sum * sum;
    std::size_t count = 1;
    return detail::run_strategy(path, costs, m.r, [&](std::size_t, const MarketState& s) {
        sum += s.x;
        sum_sq += s.x * s.x;
        ++count;
        double sd = stationary;
        if (rule.sd_mode == BenchmarkSd::sample) {
            const double mean = sum / count;
            sd = std::sqrt(std::max(0.0, (sum_sq - count * mean * mean) / (count - 1)));
        }
        const double dev = s.x - m.theta;
        const double side = rule.high_spread_side >= 0 ? 1.0 : -1.0;
        if (s.y == 0.0) {
            if (dev > rule.threshold_sds * sd) return side * rule.shares;
            if (dev < -rule.threshold_sds * sd) return -side * rule.shares;
            return 0.0;
        }
        // opened on the high side when sign(y) == side
        const bool opened_high = (s.y > 0) == (side > 0);
        if ((opened_high && dev <= 0) || (!opened_high && dev >= 0)) return -s.y;
        return 0.0;
    });
}

/// -C(L, M; 0, T) recomputed from a trade log: every trade cash flow grown to
/// T at the bond rate, plus the terminal liquidation value.
inline double total_profit_from_log(std::span<const TradeRecord> trades, double liquidation, double r, double T) {
    double acc = liquidation;
    for (const auto& tr : trades) acc += std::exp(r * (T - tr.t)) * tr.cash_flow;
    return acc;
}

struct MetricSummary {
    double mean = 0.0;
    double se = 0.0;
};

struct StrategySummary {
    std::size_t n = 0;
    MetricSummary trades;
    MetricSummary profit;
    MetricSummary profit_per_share;
};

inline MetricSummary summarize(std::span<const double> v) {
    const double n = static_cast<double>(v.size());
    double mean = 0.0;
    for (double a : v) mean += a;
    mean /= n;
    if (v.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double a : v) ss += (a - mean) * (a - mean);
    return {mean, std::sqrt(ss / (n - 1)) / std::sqrt(n)};
}

/// Mean and standard error (sample sd / sqrt(n)) of N, PL and PS.
inline StrategySummary aggregate_metrics(std::span<const StrategyResult> results) {
    if (results.empty()) throw ValidationError("aggregate_metrics: empty result list", "results");
    std::vector<double> n, pl, ps;
    for (const auto& r : results) {
        n.push_back(r.n_trades);
        pl.push_back(r.profit);
        ps.push_back(r.profit_per_share);
    }
    return {results.size(), summarize(n), summarize(pl), summarize(ps)};
}

}  // namespace pairs_hjb
