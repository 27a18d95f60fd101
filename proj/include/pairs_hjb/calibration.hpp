#pragma once

// Parameter estimation from historical price pairs: hedge regression of
// log q on log p, exact AR(1) fit of the OU spread, GBM moments of p, the
// innovation correlation, and an augmented Dickey-Fuller screen.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "pairs_hjb/errors.hpp"
#include "pairs_hjb/market_model.hpp"

namespace pairs_hjb {

struct PriceHistory {
    std::vector<std::string> dates;  // ISO-8601, strictly increasing
    std::vector<double> p_series;
    std::vector<double> q_series;
    double delta_t = 1.0 / 252.0;

    std::size_t size() const { return p_series.size(); }

    void validate(std::size_t min_length = 250) const {
        detail::require(p_series.size() == q_series.size(), "history", "p and q series differ in length");
        detail::require(dates.empty() || dates.size() == p_series.size(), "dates", "length differs from prices");
        detail::require(p_series.size() >= min_length, "history",
                        fmt::format("need at least {} observations, got {}", min_length, p_series.size()));
        detail::require(std::isfinite(delta_t) && delta_t > 0, "delta_t", "must be positive");
        for (std::size_t i = 0; i < p_series.size(); ++i) {
            if (!(p_series[i] > 0) || !(q_series[i] > 0) || !std::isfinite(p_series[i]) || !std::isfinite(q_series[i]))
                throw ValidationError(fmt::format("history: non-positive price at row {}", i), "price");
        }
        for (std::size_t i = 1; i < dates.size(); ++i) {
            // ISO-8601 dates order lexicographically
            if (!(dates[i - 1] < dates[i]))
                throw ValidationError(fmt::format("dates: not strictly increasing at row {}", i), "dates");
        }
    }

    PriceHistory slice(std::size_t begin, std::size_t end) const {
        PriceHistory out;
        out.delta_t = delta_t;
        if (!dates.empty()) out.dates.assign(dates.begin() + begin, dates.begin() + end);
        out.p_series.assign(p_series.begin() + begin, p_series.begin() + end);
        out.q_series.assign(q_series.begin() + begin, q_series.begin() + end);
        return out;
    }
};

struct OlsFit {
    Eigen::VectorXd coef;
    Eigen::VectorXd residuals;
    Eigen::MatrixXd cov;  // sigma^2 (X'X)^{-1}
    double sigma = 0.0;   // residual sd with n - k degrees of freedom
    double r_squared = 0.0;
};

inline OlsFit ols(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    const auto n = X.rows(), k = X.cols();
    if (n <= k) throw CalibrationError("ols: not enough observations");
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    if (qr.rank() < k) throw CalibrationError("ols: degenerate regressor");
    OlsFit f;
    f.coef = qr.solve(y);
    f.residuals = y - X * f.coef;
    const double ssr = f.residuals.squaredNorm();
    f.sigma = std::sqrt(ssr / static_cast<double>(n - k));
    const Eigen::MatrixXd xtx = X.transpose() * X;
    f.cov = f.sigma * f.sigma * xtx.ldlt().solve(Eigen::MatrixXd::Identity(k, k));
    const double tss = (y.array() - y.mean()).square().sum();
    f.r_squared = tss > 0 ? 1.0 - ssr / tss : 1.0;
    return f;
}

inline Eigen::VectorXd to_vector(std::span<const double> v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

struct HedgeFit {
    double alpha = 0.0;
    double beta = 0.0;
    double alpha_se = 0.0;  // iid OLS standard errors
    double beta_se = 0.0;
    double r_squared = 0.0;
    double residual_sd = 0.0;
    std::vector<double> transformed_p;  // exp(alpha + beta log p)
    std::vector<double> spread;         // log q - log transformed_p
};

/// log q_t = alpha + beta log p_t + x_t by OLS.
inline HedgeFit hedge_regression(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw ValidationError("hedge_regression: p and q differ in length", "history");
    if (p.size() < 3) throw ValidationError("hedge_regression: need at least 3 observations", "history");
    const auto n = static_cast<Eigen::Index>(p.size());
    Eigen::MatrixXd X(n, 2);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!(p[i] > 0) || !(q[i] > 0)) throw ValidationError("hedge_regression: non-positive price", "price");
        X(i, 0) = 1.0;
        X(i, 1) = std::log(p[i]);
        y(i) = std::log(q[i]);
    }
    const double lp_range = X.col(1).maxCoeff() - X.col(1).minCoeff();
    if (!(lp_range > 0)) throw CalibrationError("hedge_regression: constant log p regressor");

    const OlsFit f = ols(X, y);
    HedgeFit h;
    h.alpha = f.coef(0);
    h.beta = f.coef(1);
    h.alpha_se = std::sqrt(f.cov(0, 0));
    h.beta_se = std::sqrt(f.cov(1, 1));
    h.r_squared = f.r_squared;
    h.residual_sd = f.sigma;
    h.transformed_p.resize(p.size());
    h.spread.resize(p.size());
    for (Eigen::Index i = 0; i < n; ++i) {
        h.transformed_p[i] = std::exp(h.alpha + h.beta * X(i, 1));
        h.spread[i] = f.residuals(i);
    }
    return h;
}

inline HedgeFit hedge_regression(const PriceHistory& h) { return hedge_regression(h.p_series, h.q_series); }

/// Spread of an out-of-sample window under a previously fitted hedge.
inline std::vector<double> apply_hedge(const HedgeFit& fit, std::span<const double> p, std::span<const double> q,
                                       std::vector<double>* transformed_p = nullptr) {
    std::vector<double> x(p.size());
    if (transformed_p) transformed_p->resize(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double lp = fit.alpha + fit.beta * std::log(p[i]);
        x[i] = std::log(q[i]) - lp;
        if (transformed_p) (*transformed_p)[i] = std::exp(lp);
    }
    return x;
}

struct OuFit {
    double kappa = 0.0, theta = 0.0, nu = 0.0;
    double kappa_se = 0.0, theta_se = 0.0, nu_se = 0.0;
    double slope = 0.0, intercept = 0.0, residual_sd = 0.0;
    std::vector<double> residuals;  // AR(1) innovations, length n - 1
};

inline constexpr std::size_t kMinSeriesLength = 30;

/// Exact-discretization AR(1) fit x_{t+1} = b + a x_t + e_t.
inline OuFit fit_ou(std::span<const double> x, double delta_t) {
    if (x.size() < kMinSeriesLength)
        throw ValidationError(fmt::format("fit_ou: need at least {} observations", kMinSeriesLength), "spread");
    detail::require(std::isfinite(delta_t) && delta_t > 0, "delta_t", "must be positive");
    const auto n = static_cast<Eigen::Index>(x.size()) - 1;
    Eigen::MatrixXd X(n, 2);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        X(i, 0) = 1.0;
        X(i, 1) = x[i];
        y(i) = x[i + 1];
    }
    const double range = X.col(1).maxCoeff() - X.col(1).minCoeff();
    if (!(range > 0)) throw CalibrationError("fit_ou: constant spread series");
    const OlsFit f = ols(X, y);
    const double a = f.coef(1), b = f.coef(0), s = f.sigma;
    if (!(a < 1.0)) throw CalibrationError(fmt::format("fit_ou: AR slope {:.6f} >= 1, no mean reversion", a));
    if (!(a > 0.0)) throw CalibrationError(fmt::format("fit_ou: AR slope {:.6f} <= 0, oscillatory", a));

    OuFit o;
    o.slope = a;
    o.intercept = b;
    o.residual_sd = s;
    o.residuals.assign(f.residuals.data(), f.residuals.data() + n);
    o.kappa = -std::log(a) / delta_t;
    o.theta = b / (1 - a);
    const double g = -2 * std::log(a) / (1 - a * a);
    const double scale = std::sqrt(g / delta_t);
    o.nu = s * scale;

    // delta method; the residual variance estimate is asymptotically
    // independent of the regression coefficients
    const double var_a = f.cov(1, 1), var_b = f.cov(0, 0), cov_ab = f.cov(0, 1);
    o.kappa_se = std::sqrt(var_a) / (a * delta_t);
    const double d_b = 1 / (1 - a), d_a = b / ((1 - a) * (1 - a));
    o.theta_se = std::sqrt(std::max(0.0, d_b * d_b * var_b + 2 * d_b * d_a * cov_ab + d_a * d_a * var_a));
    const double dg = (-2 * (1 - a * a) / a - 4 * a * std::log(a)) / ((1 - a * a) * (1 - a * a));
    const double d_scale = dg / (2 * std::sqrt(g * delta_t));
    const double s_se = s / std::sqrt(2.0 * static_cast<double>(n));
    o.nu_se = std::sqrt(scale * scale * s_se * s_se + s * s * d_scale * d_scale * var_a);
    return o;
}

struct GbmFit {
    double mu = 0.0, sigma = 0.0;
    double mu_se = 0.0, sigma_se = 0.0;
    std::vector<double> innovations;  // demeaned log returns
};

inline GbmFit fit_gbm(std::span<const double> p, double delta_t) {
    if (p.size() < kMinSeriesLength)
        throw ValidationError(fmt::format("fit_gbm: need at least {} observations", kMinSeriesLength), "p_series");
    detail::require(std::isfinite(delta_t) && delta_t > 0, "delta_t", "must be positive");
    for (double v : p)
        if (!(v > 0) || !std::isfinite(v)) throw ValidationError("fit_gbm: non-positive price", "p_series");
    const std::size_t n = p.size() - 1;
    std::vector<double> ret(n);
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ret[i] = std::log(p[i + 1] / p[i]);
        mean += ret[i];
    }
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double& v : ret) {
        v -= mean;
        ss += v * v;
    }
    GbmFit g;
    const double nn = static_cast<double>(n);
    const double sd = std::sqrt(ss / (nn - 1));
    g.sigma = sd / std::sqrt(delta_t);
    g.mu = mean / delta_t + 0.5 * g.sigma * g.sigma;
    g.sigma_se = g.sigma / std::sqrt(2 * nn);
    g.mu_se = std::sqrt(g.sigma * g.sigma / (nn * delta_t) + std::pow(g.sigma * g.sigma_se, 2));
    g.innovations = std::move(ret);
    return g;
}

struct CorrelationFit {
    double rho = 0.0;
    double rho_se = 0.0;
};

/// Sample correlation of two innovation series.
inline CorrelationFit innovation_correlation(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 3)
        throw ValidationError("fit_correlation: innovation series must match and have length >= 3", "series");
    const Eigen::VectorXd u = to_vector(a).array() - to_vector(a).mean();
    const Eigen::VectorXd v = to_vector(b).array() - to_vector(b).mean();
    const double su = u.norm(), sv = v.norm();
    if (!(su > 0) || !(sv > 0)) throw CalibrationError("fit_correlation: zero-variance innovations");
    CorrelationFit c;
    c.rho = std::clamp(u.dot(v) / (su * sv), -1.0, 1.0);
    c.rho_se = (1 - c.rho * c.rho) / std::sqrt(static_cast<double>(a.size()));
    return c;
}

/// Correlation between log-return innovations of p and AR(1) residuals of x.
inline CorrelationFit fit_correlation(std::span<const double> p, std::span<const double> x, double delta_t) {
    if (p.size() != x.size()) throw ValidationError("fit_correlation: series differ in length", "series");
    const GbmFit g = fit_gbm(p, delta_t);
    const OuFit o = fit_ou(x, delta_t);
    return innovation_correlation(g.innovations, o.residuals);
}

struct AdfResult {
    double statistic = 0.0;
    double critical_value_5pct = 0.0;
    bool is_stationary = false;
    int lags = 0;
    std::size_t n_obs = 0;  // observations in the test regression
};

/// 5% critical value of the intercept-only Dickey-Fuller tau statistic,
/// MacKinnon (2010) response surface.
inline double adf_critical_value_5pct(std::size_t n_obs) {
    const double t = static_cast<double>(n_obs);
    return -2.86154 - 2.8903 / t - 4.234 / (t * t) - 40.040 / (t * t * t);
}

/// dx_t = c + g x_{t-1} + sum_j phi_j dx_{t-j} + e_t; the statistic is t(g).
inline AdfResult adf_test(std::span<const double> x, int max_lag = 1) {
    detail::require(max_lag >= 0, "adf_lag", "must be >= 0");
    if (x.size() <= static_cast<std::size_t>(max_lag) + 10)
        throw ValidationError("adf_test: series too short for the lag order", "spread");
    const auto n = static_cast<Eigen::Index>(x.size());
    const Eigen::Index rows = n - 1 - max_lag;
    Eigen::MatrixXd X(rows, 2 + max_lag);
    Eigen::VectorXd y(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const Eigen::Index t = r + 1 + max_lag;
        y(r) = x[t] - x[t - 1];
        X(r, 0) = 1.0;
        X(r, 1) = x[t - 1];
        for (int j = 1; j <= max_lag; ++j) X(r, 1 + j) = x[t - j] - x[t - j - 1];
    }
    const double range = X.col(1).maxCoeff() - X.col(1).minCoeff();
    if (!(range > 0)) throw CalibrationError("adf_test: constant series");
    const OlsFit f = ols(X, y);
    AdfResult res;
    res.statistic = f.coef(1) / std::sqrt(f.cov(1, 1));
    res.n_obs = static_cast<std::size_t>(rows);
    res.critical_value_5pct = adf_critical_value_5pct(res.n_obs);
    res.is_stationary = res.statistic < res.critical_value_5pct;
    res.lags = max_lag;
    return res;
}

struct CalibrationOptions {
    int adf_lag = 1;
    std::size_t min_length = 250;
    double r = 0.01;  // not estimable from prices
    double T = 1.0;   // trading horizon for the fitted model
};

struct CalibrationReport {
    HedgeFit hedge;
    OuFit ou;
    GbmFit gbm;
    CorrelationFit correlation;
    ModelParams params;
    AdfResult adf;
    bool actionable = false;  // stationary and kappa > 0
};

/// Full pipeline. GBM moments are fitted on the transformed price, which is
/// the "stock P" of the downstream model.
inline CalibrationReport calibrate(const PriceHistory& h, const CalibrationOptions& opt = {}) {
    h.validate(opt.min_length);
    CalibrationReport rep;
    rep.hedge = hedge_regression(h);
    rep.adf = adf_test(rep.hedge.spread, opt.adf_lag);
    rep.ou = fit_ou(rep.hedge.spread, h.delta_t);
    rep.gbm = fit_gbm(rep.hedge.transformed_p, h.delta_t);
    rep.correlation = innovation_correlation(rep.gbm.innovations, rep.ou.residuals);
    rep.params = ModelParams{rep.gbm.mu, rep.gbm.sigma, rep.ou.kappa, rep.ou.theta, rep.ou.nu,
                             rep.correlation.rho, opt.r, opt.T};
    rep.actionable = rep.adf.is_stationary && rep.ou.kappa > 0;
    return rep;
}

// ---- I/O ----

/// Reads a "date,price" CSV (header mandatory).
inline std::vector<std::pair<std::string, double>> read_price_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw ValidationError("price csv: missing header", "csv");
    std::vector<std::pair<std::string, double>> rows;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw ValidationError(fmt::format("price csv: line {} has no comma", lineno), "csv");
        std::size_t used = 0;
        double price = 0;
        try {
            price = std::stod(line.substr(comma + 1), &used);
        } catch (const std::exception&) {
            throw ValidationError(fmt::format("price csv: bad price on line {}", lineno), "price");
        }
        rows.emplace_back(line.substr(0, comma), price);
    }
    return rows;
}

/// Inner join of two ticker files on date.
inline PriceHistory align_histories(const std::vector<std::pair<std::string, double>>& p,
                                    const std::vector<std::pair<std::string, double>>& q, double delta_t) {
    std::map<std::string, double> qmap(q.begin(), q.end());
    PriceHistory h;
    h.delta_t = delta_t;
    std::map<std::string, double> pmap(p.begin(), p.end());
    for (const auto& [date, price] : pmap) {
        auto it = qmap.find(date);
        if (it == qmap.end()) continue;
        h.dates.push_back(date);
        h.p_series.push_back(price);
        h.q_series.push_back(it->second);
    }
    return h;
}

inline void write_price_csv(std::ostream& os, std::span<const std::string> dates, std::span<const double> prices) {
    os << "date,price\n";
    for (std::size_t i = 0; i < prices.size(); ++i) os << fmt::format("{},{:.17g}\n", dates[i], prices[i]);
}

}  // namespace pairs_hjb
