#pragma once

// Un-reduced Bellman scheme over (chi, p, x, y, g) with U(z) = 1 - exp(-gamma z):
//
//   V(chi_i, p, x, y, g) = max{ V(chi_i, p, x, y + xi, g - A_- xi),
//                               V(chi_i, p, x, y - xi, g + A_+ xi),
//                               E[V(chi_{i+1}, p', x', y, g e^{r delta})] }
//
// The bond is carried as an exact real number rather than gridded, so the
// recursion is exponential in the number of steps. It exists to cross-check
// the reduced log-H solver on desk-scale lattices and refuses anything larger.

#include <cmath>
#include <functional>
#include <limits>

#include "pairs_hjb/errors.hpp"
#include "pairs_hjb/grid.hpp"
#include "pairs_hjb/market_model.hpp"

namespace pairs_hjb {

struct GeneralNode {
    int time_index;
    std::size_t node;
    double p;
    double x;
    double y;
    double g;
};

struct GeneralStep {
    double buy;
    double sell;
    double stay;
    double value;
};

enum class TradeDirection { buy, sell };

/// One Bellman comparison.
///   same(direction, y', g')  -> V at the same time and (p, x), or -inf when y' is off-grid
///   stay(y, g')              -> E[V(chi_{i+1}, ., ., y, g')]
template <class SameSlice, class Continuation>
GeneralStep general_value_step(const GeneralNode& s, const CostSpec& costs, double xi, double r, double delta,
                               SameSlice&& same, Continuation&& stay) {
    const auto a = effective_prices(s.p, s.x, costs);
    GeneralStep out{};
    out.buy = same(TradeDirection::buy, s.y + xi, s.g - a.minus * xi);
    out.sell = same(TradeDirection::sell, s.y - xi, s.g + a.plus * xi);
    out.stay = stay(s.y, s.g * std::exp(r * delta));
    out.value = std::max({out.buy, out.sell, out.stay});
    return out;
}

class GeneralSchemeOracle {
public:
    static constexpr std::size_t kMaxWork = 20'000;

    GeneralSchemeOracle(const TransitionRule& rule, const ModelParams& m, const CostSpec& costs, double gamma)
        : rule_(rule), m_(m), costs_(costs), utility_{gamma} {
        const Lattice& lat = rule.lattice();
        if (lat.n_time() > 3 || lat.slice_size() > kMaxWork) {
            throw ValidationError("general scheme: lattice exceeds the desk-scale guard (n_time <= 3, "
                                  "nodes * y-points <= 20000)",
                                  "grid");
        }
    }

    /// V^delta at time index i, lattice node, y-index k and exact bond g.
    double value(int i, std::size_t node, int k, double g) const {
        const Lattice& lat = rule_.lattice();
        const auto [iz, jw] = lat.unflatten(node);
        const double p = lat.p_values()[iz];
        const double x = lat.x_values()[jw];
        const double y = lat.y_values()[k];
        if (i == lat.n_time()) return utility_.utility(g + liquidation_value(p, x, y, costs_));
        return step(i, node, k, g).value;
    }

    GeneralStep step(int i, std::size_t node, int k, double g) const {
        const Lattice& lat = rule_.lattice();
        const auto [iz, jw] = lat.unflatten(node);
        const GeneralNode s{i, node, lat.p_values()[iz], lat.x_values()[jw], lat.y_values()[k], g};
        auto stay = [&](double y, double g_next) { return continuation(i, node, lat.y_index(y), g_next); };
        auto same = [&](TradeDirection dir, double y, double g2) { return chain(dir, s, y, g2); };
        return general_value_step(s, costs_, lat.xi(), m_.r, lat.delta(), same, stay);
    }

private:
    double continuation(int i, std::size_t node, int k, double g_next) const {
        return rule_.expect(node, [&](std::size_t target) { return value(i + 1, target, k, g_next); });
    }

    // Same-slice value reached by repeating one trade direction: the best of
    // stopping at y or continuing another xi in the same direction.
    double chain(TradeDirection dir, const GeneralNode& s, double y, double g) const {
        const Lattice& lat = rule_.lattice();
        const double lo = lat.y_values().front(), hi = lat.y_values().back();
        const double eps = 1e-9 * lat.xi();
        if (y < lo - eps || y > hi + eps) return -std::numeric_limits<double>::infinity();
        const int k = lat.y_index(y);
        const double stay = continuation(s.time_index, s.node, k, g * std::exp(m_.r * lat.delta()));
        const auto a = effective_prices(s.p, s.x, costs_);
        const double further = dir == TradeDirection::buy ? chain(dir, s, y + lat.xi(), g - a.minus * lat.xi())
                                                          : chain(dir, s, y - lat.xi(), g + a.plus * lat.xi());
        return std::max(stay, further);
    }

    TransitionRule rule_;
    ModelParams m_;
    CostSpec costs_;
    CaraUtility utility_;
};

}  // namespace pairs_hjb
