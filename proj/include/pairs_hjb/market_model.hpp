#pragma once

// Market coefficients, proportional cost arithmetic and the liquidation /
// terminal-utility formulas shared by the solver, the simulator and the
// strategy engine.

#include <cmath>

#include "pairs_hjb/errors.hpp"

namespace pairs_hjb {

/// Coefficients of the price/spread dynamics
///   dp = mu p dt + sigma p dB,   dx = kappa (theta - x) dt + nu dW,   dB dW = rho dt
/// plus the bond rate r and the horizon T.
struct ModelParams {
    double mu = 0.2;
    double sigma = 0.4;
    double kappa = 1.0;
    double theta = 0.1;
    double nu = 0.15;
    double rho = 0.5;
    double r = 0.01;
    double T = 1.0;

    void validate() const {
        using detail::require_finite;
        require_finite(mu, "mu");
        require_finite(sigma, "sigma");
        require_finite(kappa, "kappa");
        require_finite(theta, "theta");
        require_finite(nu, "nu");
        require_finite(rho, "rho");
        require_finite(r, "r");
        require_finite(T, "T");
        detail::require(sigma > 0, "sigma", "must be > 0");
        detail::require(nu > 0, "nu", "must be > 0");
        detail::require(kappa > 0, "kappa", "must be > 0");
        detail::require(std::abs(rho) <= 1, "rho", "must lie in [-1, 1]");
        detail::require(T > 0, "T", "must be > 0");
    }

    bool operator==(const ModelParams&) const = default;
};

/// Proportional cost fractions on purchase (zeta) and sale (eta) of P and Q.
/// Zero fractions are accepted so that frictionless limits can be evaluated.
struct CostSpec {
    double zeta_p = 0.0005;
    double zeta_q = 0.0005;
    double eta_p = 0.0005;
    double eta_q = 0.0005;

    static constexpr CostSpec uniform(double c) { return {c, c, c, c}; }

    double a_p() const { return 1.0 + zeta_p; }
    double a_q() const { return 1.0 + zeta_q; }
    double b_p() const { return 1.0 - eta_p; }
    double b_q() const { return 1.0 - eta_q; }

    bool any_positive() const { return zeta_p > 0 || zeta_q > 0 || eta_p > 0 || eta_q > 0; }

    void validate() const {
        auto check = [](double v, const char* name) {
            detail::require_finite(v, name);
            detail::require(v >= 0 && v < 1, name, "cost fraction must lie in [0, 1)");
        };
        check(zeta_p, "zeta_p");
        check(zeta_q, "zeta_q");
        check(eta_p, "eta_p");
        check(eta_q, "eta_q");
    }

    bool operator==(const CostSpec&) const = default;
};

/// Absolute risk aversion of U(z) = 1 - exp(-gamma z).
struct CaraUtility {
    double gamma = 5.0;

    void validate() const {
        detail::require_finite(gamma, "gamma");
        detail::require(gamma > 0, "gamma", "must be > 0");
    }

    double utility(double wealth) const { return -std::expm1(-gamma * wealth); }
};

/// Observable state of one pairs position. The Q holding is always -y.
struct MarketState {
    double t = 0.0;
    double p = 1.0;
    double x = 0.0;
    double y = 0.0;
    double g = 0.0;
};

/// Per-share cash of unwinding a long (plus) or short (minus) paired position.
/// A buy of one P share paired with a sale of one Q share costs `minus`;
/// the reverse trade brings in `plus`.
struct EffectivePrices {
    double plus;
    double minus;
};

inline EffectivePrices effective_prices(double p, double x, const CostSpec& costs) {
    detail::require_finite(p, "p");
    detail::require_finite(x, "x");
    detail::require(p > 0, "p", "price must be > 0");
    const double ex = std::exp(x);
    return {(costs.b_p() - costs.a_q() * ex) * p, (costs.a_p() - costs.b_q() * ex) * p};
}

/// Cash realised by closing y paired shares at (p, x).
inline double liquidation_value(double p, double x, double y, const CostSpec& costs) {
    detail::require_finite(y, "y");
    const auto a = effective_prices(p, x, costs);
    return y >= 0 ? a.plus * y : a.minus * y;
}

/// log of exp(-gamma J): the terminal condition of the reduced value H,
/// kept in log form so that large |y| grids do not overflow.
inline double log_terminal_h(double p, double x, double y, double gamma, const CostSpec& costs) {
    detail::require(gamma > 0, "gamma", "must be > 0");
    return -gamma * liquidation_value(p, x, y, costs);
}

inline double terminal_h(double p, double x, double y, double gamma, const CostSpec& costs) {
    return std::exp(log_terminal_h(p, x, y, gamma, costs));
}

/// Value function recovered from H:  V = 1 - exp(-gamma g e^{r(T-t)}) H.
inline double value_from_h(double h, double g, double t, double gamma, const ModelParams& m) {
    return 1.0 - std::exp(-gamma * g * std::exp(m.r * (m.T - t))) * h;
}

/// Inverse of value_from_h.
inline double h_from_value(double v, double g, double t, double gamma, const ModelParams& m) {
    return (1.0 - v) * std::exp(gamma * g * std::exp(m.r * (m.T - t)));
}

}  // namespace pairs_hjb
