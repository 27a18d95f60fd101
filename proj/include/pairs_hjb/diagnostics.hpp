#pragma once

// Central-difference residuals of the three continuous operators acting on H:
//
//   L_o H = H_t + kappa (theta - x) H_x + mu p H_p + nu^2/2 H_xx
//           + rho nu sigma p H_px + sigma^2 p^2 / 2 H_pp
//   L_b H = H_y + gamma e^{r(T-t)} A_-(p, x) H
//   L_s H = H_y + gamma e^{r(T-t)} A_+(p, x) H
//
// evaluated on a solved lattice. Derivatives in p and x go through the chain
// rule of the standardized axes; H_t is the forward difference to the next
// slice. Residuals are divided by H at the node so they are scale free.

#include <cmath>
#include <span>

#include "pairs_hjb/errors.hpp"
#include "pairs_hjb/grid.hpp"
#include "pairs_hjb/market_model.hpp"

namespace pairs_hjb {

struct OperatorResiduals {
    double no_trade;  // L_o H / H
    double buy;       // L_b H / H
    double sell;      // L_s H / H
};

/// Residuals at lattice point (iz, jw, ky) of slice i, using `log_h_i` (chi_i)
/// and `log_h_next` (chi_{i+1}). Only strictly interior points are accepted.
inline OperatorResiduals hjb_residuals(const Lattice& lat, int i, std::span<const double> log_h_i,
                                       std::span<const double> log_h_next, int iz, int jw, int ky,
                                       const ModelParams& m, const CostSpec& costs, double gamma) {
    if (iz <= 0 || iz >= lat.nz() - 1 || jw <= 0 || jw >= lat.nw() - 1 || ky <= 0 || ky >= lat.ny() - 1) {
        throw ValidationError("hjb_residuals: node must be strictly interior", "node");
    }
    if (i < 0 || i >= lat.n_time()) throw ValidationError("hjb_residuals: time index out of range", "t");
    auto H = [&](std::span<const double> s, int a, int b, int c) {
        return std::exp(s[lat.index(lat.node(a, b), c)]);
    };

    const double hz = lat.z_step(), hw = lat.w_step(), hy = lat.xi();
    const double h0 = H(log_h_i, iz, jw, ky);
    const double h_z = (H(log_h_i, iz + 1, jw, ky) - H(log_h_i, iz - 1, jw, ky)) / (2 * hz);
    const double h_zz = (H(log_h_i, iz + 1, jw, ky) - 2 * h0 + H(log_h_i, iz - 1, jw, ky)) / (hz * hz);
    const double h_w = (H(log_h_i, iz, jw + 1, ky) - H(log_h_i, iz, jw - 1, ky)) / (2 * hw);
    const double h_ww = (H(log_h_i, iz, jw + 1, ky) - 2 * h0 + H(log_h_i, iz, jw - 1, ky)) / (hw * hw);
    const double h_zw = (H(log_h_i, iz + 1, jw + 1, ky) - H(log_h_i, iz + 1, jw - 1, ky) -
                         H(log_h_i, iz - 1, jw + 1, ky) + H(log_h_i, iz - 1, jw - 1, ky)) /
                        (4 * hz * hw);
    const double h_y = (H(log_h_i, iz, jw, ky + 1) - H(log_h_i, iz, jw, ky - 1)) / (2 * hy);
    const double h_t = (H(log_h_next, iz, jw, ky) - h0) / lat.delta();

    const double p = lat.p_values()[iz];
    const double x = lat.x_values()[jw];
    const double s_p = m.sigma * std::sqrt(m.T);     // dz = dlog p / s_p
    const double s_x = m.nu / std::sqrt(2 * m.kappa);  // dw = dx / s_x

    // p H_p, p^2 H_pp, p H_px, H_x, H_xx in standardized derivatives
    const double pHp = h_z / s_p;
    const double p2Hpp = (h_zz / s_p - h_z) / s_p;
    const double pHpx = h_zw / (s_p * s_x);
    const double Hx = h_w / s_x;
    const double Hxx = h_ww / (s_x * s_x);

    const double l_o = h_t + m.kappa * (m.theta - x) * Hx + m.mu * pHp + 0.5 * m.nu * m.nu * Hxx +
                       m.rho * m.nu * m.sigma * pHpx + 0.5 * m.sigma * m.sigma * p2Hpp;
    const auto a = effective_prices(p, x, costs);
    const double growth = gamma * std::exp(m.r * (m.T - lat.time(i)));
    return {l_o / h0, (h_y + growth * a.minus * h0) / h0, (h_y + growth * a.plus * h0) / h0};
}

}  // namespace pairs_hjb
