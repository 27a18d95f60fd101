#pragma once

// State lattice over (time, standardized price z, standardized spread w, shares y)
// and the quadrature rule for the one-step conditional expectation.
//
//   p(z) = p0 * exp((mu - sigma^2/2) T + z sigma sqrt(T))
//   x(w) = theta + w * nu / sqrt(2 kappa)
//
// The one-step law of (log p, x) is the Euler bivariate normal with mean
// (log p + (mu - sigma^2/2) delta, (1 - delta kappa) x + delta kappa theta) and
// covariance delta [[sigma^2, rho sigma nu], [rho sigma nu, nu^2]]. It is
// integrated with a tensor Gauss-Hermite rule after a Cholesky split, and each
// quadrature point is spread onto the four surrounding lattice nodes by
// bilinear weights. Points beyond the lattice are projected onto its edge.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "pairs_hjb/errors.hpp"
#include "pairs_hjb/market_model.hpp"

namespace pairs_hjb {

struct GridSpec {
    int n_time = 100;
    double z_half_width = 3.5;
    double z_step = 0.0;  // 0 selects sqrt(delta)
    double w_half_width = 3.5;
    double w_step = 0.0;  // 0 selects sqrt(delta)
    double xi = 0.1;
    double y_max = 12.0;
    int quad_nodes = 5;

    double delta(const ModelParams& m) const { return m.T / n_time; }
    double resolved_z_step(const ModelParams& m) const { return z_step > 0 ? z_step : std::sqrt(delta(m)); }
    double resolved_w_step(const ModelParams& m) const { return w_step > 0 ? w_step : std::sqrt(delta(m)); }

    void validate(const ModelParams& m) const {
        m.validate();
        detail::require(n_time >= 1, "n_time", "must be >= 1");
        detail::require(delta(m) * m.kappa < 1.0, "n_time", "delta * kappa must be < 1");
        detail::require(std::isfinite(xi) && xi > 0, "xi", "must be > 0");
        detail::require(std::isfinite(y_max) && y_max > 0, "y_max", "must be > 0");
        const double ratio = y_max / xi;
        detail::require(std::abs(ratio - std::round(ratio)) < 1e-9 * std::max(1.0, ratio), "y_max",
                        "must be an integer multiple of xi");
        detail::require(quad_nodes >= 3, "quad_nodes", "must be >= 3");
        detail::require(z_step >= 0 && w_step >= 0, "z_step", "steps must be >= 0 (0 = default)");
        detail::require(z_half_width > 0 && w_half_width > 0, "z_half_width", "half widths must be > 0");
        detail::require(z_half_width >= resolved_z_step(m), "z_half_width", "must cover at least one step");
        detail::require(w_half_width >= resolved_w_step(m), "w_half_width", "must cover at least one step");
    }

    bool operator==(const GridSpec&) const = default;
};

struct NodeIndex {
    int iz;
    int jw;
};

/// Bilinear stencil of a point inside the (z, w) rectangle.
struct Bilinear {
    int iz0, jw0;  // lower-left corner
    double tz, tw; // fractional offsets in [0, 1]
};

class Lattice {
public:
    Lattice(const GridSpec& spec, const ModelParams& m, double p0) : spec_(spec), p0_(p0) {
        spec.validate(m);
        detail::require(std::isfinite(p0) && p0 > 0, "p0", "must be > 0");
        T_ = m.T;
        delta_ = spec.delta(m);
        n_time_ = spec.n_time;
        drift_T_ = (m.mu - 0.5 * m.sigma * m.sigma) * m.T;
        sigma_sqrt_T_ = m.sigma * std::sqrt(m.T);
        theta_ = m.theta;
        x_scale_ = m.nu / std::sqrt(2.0 * m.kappa);

        z_step_ = spec.resolved_z_step(m);
        w_step_ = spec.resolved_w_step(m);
        const int nz_half = static_cast<int>(std::floor(spec.z_half_width / z_step_ + 1e-9));
        const int nw_half = static_cast<int>(std::floor(spec.w_half_width / w_step_ + 1e-9));
        for (int i = -nz_half; i <= nz_half; ++i) {
            z_values_.push_back(i * z_step_);
            p_values_.push_back(p_of_z(i * z_step_));
        }
        for (int j = -nw_half; j <= nw_half; ++j) {
            w_values_.push_back(j * w_step_);
            x_values_.push_back(x_of_w(j * w_step_));
        }
        const int ny_half = static_cast<int>(std::lround(spec.y_max / spec.xi));
        for (int k = -ny_half; k <= ny_half; ++k) y_values_.push_back(k * spec.xi);
        ny_half_ = ny_half;
    }

    const GridSpec& spec() const { return spec_; }
    double p0() const { return p0_; }
    double horizon() const { return T_; }
    double delta() const { return delta_; }
    int n_time() const { return n_time_; }
    double time(int i) const { return i * delta_; }
    double xi() const { return spec_.xi; }
    double z_step() const { return z_step_; }
    double w_step() const { return w_step_; }

    int nz() const { return static_cast<int>(z_values_.size()); }
    int nw() const { return static_cast<int>(w_values_.size()); }
    int ny() const { return static_cast<int>(y_values_.size()); }
    std::size_t n_nodes() const { return static_cast<std::size_t>(nz()) * nw(); }
    std::size_t slice_size() const { return n_nodes() * ny(); }

    std::span<const double> z_values() const { return z_values_; }
    std::span<const double> w_values() const { return w_values_; }
    std::span<const double> p_values() const { return p_values_; }
    std::span<const double> x_values() const { return x_values_; }
    std::span<const double> y_values() const { return y_values_; }

    std::size_t node(int iz, int jw) const { return static_cast<std::size_t>(iz) * nw() + jw; }
    NodeIndex unflatten(std::size_t node) const {
        return {static_cast<int>(node / nw()), static_cast<int>(node % nw())};
    }
    std::size_t index(std::size_t node, int ky) const { return node * ny() + ky; }

    double p_of_z(double z) const { return p0_ * std::exp(drift_T_ + z * sigma_sqrt_T_); }
    double z_of_p(double p) const { return (std::log(p / p0_) - drift_T_) / sigma_sqrt_T_; }
    double x_of_w(double w) const { return theta_ + x_scale_ * w; }
    double w_of_x(double x) const { return (x - theta_) / x_scale_; }

    /// Nearest lattice node in standardized coordinates, clamped to the grid.
    NodeIndex nearest_node(double p, double x) const {
        const auto iz = static_cast<int>(std::lround((z_of_p(p) - z_values_.front()) / z_step_));
        const auto jw = static_cast<int>(std::lround((w_of_x(x) - w_values_.front()) / w_step_));
        return {std::clamp(iz, 0, nz() - 1), std::clamp(jw, 0, nw() - 1)};
    }

    bool contains(double p, double x) const {
        const double z = z_of_p(p), w = w_of_x(x);
        return z >= z_values_.front() && z <= z_values_.back() && w >= w_values_.front() &&
               w <= w_values_.back();
    }

    /// Bilinear stencil in (z, w); coordinates outside the grid are projected
    /// onto its edge.
    Bilinear bilinear(double z, double w) const {
        auto locate = [](double v, double lo, double step, int n, int& i0, double& t) {
            double f = (v - lo) / step;
            f = std::clamp(f, 0.0, static_cast<double>(n - 1));
            i0 = std::min(static_cast<int>(std::floor(f)), n - 2);
            t = f - i0;
        };
        Bilinear b{};
        locate(z, z_values_.front(), z_step_, nz(), b.iz0, b.tz);
        locate(w, w_values_.front(), w_step_, nw(), b.jw0, b.tw);
        return b;
    }

    /// y-index of the grid value nearest to y, clamped.
    int y_index(double y) const {
        return std::clamp(static_cast<int>(std::lround(y / spec_.xi)) + ny_half_, 0, ny() - 1);
    }
    int y_zero_index() const { return ny_half_; }

private:
    GridSpec spec_;
    double p0_;
    double T_ = 1.0, delta_ = 0.0;
    int n_time_ = 0;
    double drift_T_ = 0.0, sigma_sqrt_T_ = 1.0, theta_ = 0.0, x_scale_ = 1.0;
    double z_step_ = 0.0, w_step_ = 0.0;
    int ny_half_ = 0;
    std::vector<double> z_values_, w_values_, p_values_, x_values_, y_values_;
};

struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

/// Gauss-Hermite rule for the standard normal density (Golub-Welsch).
inline QuadratureRule gauss_hermite(int n) {
    detail::require(n >= 1, "quad_nodes", "must be >= 1");
    Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
    for (int k = 1; k < n; ++k) {
        jacobi(k - 1, k) = jacobi(k, k - 1) = std::sqrt(static_cast<double>(k));
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
    QuadratureRule rule;
    double total = 0.0;
    for (int k = 0; k < n; ++k) {
        rule.nodes.push_back(eig.eigenvalues()(k));
        const double v0 = eig.eigenvectors()(0, k);
        rule.weights.push_back(v0 * v0);
        total += v0 * v0;
    }
    for (double& w : rule.weights) w /= total;
    // the rule is symmetric about zero; enforce it so odd moments vanish exactly
    for (int k = 0; k < n / 2; ++k) {
        const int m = n - 1 - k;
        const double x = 0.5 * (rule.nodes[m] - rule.nodes[k]);
        const double w = 0.5 * (rule.weights[k] + rule.weights[m]);
        rule.nodes[k] = -x;
        rule.nodes[m] = x;
        rule.weights[k] = rule.weights[m] = w;
    }
    if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
    return rule;
}

/// One quadrature point of the one-step law, in (z, w) coordinates.
struct QuadraturePoint {
    double z;
    double w;
    double weight;
};

/// Conditional expectation operator on the (z, w) lattice.
/// For node n: E[f] = sum_k weight_k * f(target_k), stored in CSR form.
class TransitionRule {
public:
    TransitionRule(const Lattice& lattice, const ModelParams& m) : lattice_(lattice) {
        const double delta = lattice.delta();
        detail::require(delta * m.kappa < 1.0, "n_time", "delta * kappa must be < 1");
        const int q = lattice.spec().quad_nodes;
        const auto gh = gauss_hermite(q);

        mean_dz_ = (m.mu - 0.5 * m.sigma * m.sigma) * delta / (m.sigma * std::sqrt(m.T));
        sd_z_ = std::sqrt(delta / m.T);
        w_decay_ = 1.0 - delta * m.kappa;
        sd_w_ = std::sqrt(2.0 * m.kappa * delta);
        rho_ = m.rho;
        const double rho_c = std::sqrt(std::max(0.0, 1.0 - m.rho * m.rho));

        // standard-normal pairs (e1, e2) with corr(e1, e2) = rho
        if (rho_c < 1e-12) {
            for (int a = 0; a < q; ++a) {
                std_points_.push_back({gh.nodes[a], m.rho * gh.nodes[a], gh.weights[a]});
            }
        } else {
            for (int a = 0; a < q; ++a) {
                for (int b = 0; b < q; ++b) {
                    std_points_.push_back({gh.nodes[a], m.rho * gh.nodes[a] + rho_c * gh.nodes[b],
                                           gh.weights[a] * gh.weights[b]});
                }
            }
        }

        const std::size_t n_nodes = lattice.n_nodes();
        offsets_.reserve(n_nodes + 1);
        offsets_.push_back(0);
        clamped_.assign(n_nodes, false);
        std::vector<std::pair<std::uint32_t, double>> scratch;
        for (std::size_t node = 0; node < n_nodes; ++node) {
            scratch.clear();
            const auto [iz, jw] = lattice.unflatten(node);
            for (const auto& pt : points(iz, jw)) {
                if (pt.z < lattice.z_values().front() || pt.z > lattice.z_values().back() ||
                    pt.w < lattice.w_values().front() || pt.w > lattice.w_values().back()) {
                    clamped_[node] = true;
                }
                const auto b = lattice.bilinear(pt.z, pt.w);
                const double wz[2] = {1.0 - b.tz, b.tz};
                const double ww[2] = {1.0 - b.tw, b.tw};
                for (int dz = 0; dz < 2; ++dz) {
                    for (int dw = 0; dw < 2; ++dw) {
                        const double wt = pt.weight * wz[dz] * ww[dw];
                        if (wt == 0.0) continue;
                        scratch.emplace_back(
                            static_cast<std::uint32_t>(lattice.node(b.iz0 + dz, b.jw0 + dw)), wt);
                    }
                }
            }
            std::sort(scratch.begin(), scratch.end());
            double total = 0.0;
            for (std::size_t k = 0; k < scratch.size();) {
                const auto target = scratch[k].first;
                double wt = 0.0;
                for (; k < scratch.size() && scratch[k].first == target; ++k) wt += scratch[k].second;
                targets_.push_back(target);
                weights_.push_back(wt);
                total += wt;
            }
            // renormalise round-off so rows sum to one
            for (std::size_t k = offsets_.back(); k < weights_.size(); ++k) weights_[k] /= total;
            offsets_.push_back(targets_.size());
        }
    }

    const Lattice& lattice() const { return lattice_; }

    std::span<const std::uint32_t> targets(std::size_t node) const {
        return {targets_.data() + offsets_[node], offsets_[node + 1] - offsets_[node]};
    }
    std::span<const double> weights(std::size_t node) const {
        return {weights_.data() + offsets_[node], offsets_[node + 1] - offsets_[node]};
    }

    /// Raw quadrature points of the one-step law from node (iz, jw), before
    /// interpolation and edge projection.
    std::vector<QuadraturePoint> points(int iz, int jw) const {
        const double z = lattice_.z_values()[iz];
        const double w = lattice_.w_values()[jw];
        std::vector<QuadraturePoint> out;
        out.reserve(std_points_.size());
        for (const auto& sp : std_points_) {
            out.push_back({z + mean_dz_ + sd_z_ * sp.z, w_decay_ * w + sd_w_ * sp.w, sp.weight});
        }
        return out;
    }

    /// True when some quadrature point of this node fell outside the lattice.
    bool clamped(std::size_t node) const { return clamped_[node]; }

    /// Conditional mean/sd of the one-step law in standardized units.
    double mean_dz() const { return mean_dz_; }
    double sd_z() const { return sd_z_; }
    double w_decay() const { return w_decay_; }
    double sd_w() const { return sd_w_; }

    /// E[f(target)] for a per-node function.
    template <class Fn>
    double expect(std::size_t node, Fn&& f) const {
        double acc = 0.0;
        const auto t = targets(node);
        const auto w = weights(node);
        for (std::size_t k = 0; k < t.size(); ++k) acc += w[k] * f(static_cast<std::size_t>(t[k]));
        return acc;
    }

private:
    Lattice lattice_;
    double mean_dz_ = 0.0, sd_z_ = 0.0, w_decay_ = 1.0, sd_w_ = 0.0, rho_ = 0.0;
    std::vector<QuadraturePoint> std_points_;
    std::vector<std::size_t> offsets_;
    std::vector<std::uint32_t> targets_;
    std::vector<double> weights_;
    std::vector<bool> clamped_;
};

inline Lattice build_lattice(const GridSpec& spec, const ModelParams& m, double p0) {
    return Lattice(spec, m, p0);
}

inline TransitionRule build_transition(const Lattice& lattice, const ModelParams& m) {
    return TransitionRule(lattice, m);
}

}  // namespace pairs_hjb
