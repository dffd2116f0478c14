#pragma once

// Gaussian and integrated likelihoods of the range parameter, the matrix-free
// restricted log-likelihood on the spectral grid, REML fits with the variance
// profiled in closed form, and profile-likelihood confidence intervals.

#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include "gfref/covmodel.hpp"
#include "gfref/designs.hpp"
#include "gfref/detail/optimize.hpp"
#include "gfref/errors.hpp"
#include "gfref/priors.hpp"
#include "gfref/spectral_basis.hpp"

namespace gfref {

struct DataVector {
    SpatialDesign design;
    Eigen::VectorXd z;

    DataVector() = default;
    DataVector(SpatialDesign d, Eigen::VectorXd obs) : design(std::move(d)), z(std::move(obs)) {
        validate();
    }

    Eigen::Index n() const { return z.size(); }
    Eigen::Index p() const { return design.p(); }

    void validate() const {
        design.validate();
        if (z.size() != design.n())
            throw validation_error("DataVector: observation count must match the design");
        if (!z.allFinite()) throw validation_error("DataVector: non-finite observations");
    }
};

// Everything the Gaussian model needs at a fixed range: determinants, the GLS
// coefficient estimate, its unscaled covariance and the residual quadratic form.
struct GlsQuantities {
    double log_det_sigma = 0.0;  // log |Sigma_theta| (correlation matrix)
    double log_det_xsx = 0.0;    // log |X' Sigma^-1 X|
    double s2 = 0.0;             // (z - X b)' Sigma^-1 (z - X b) at b = beta_hat
    Eigen::VectorXd beta_hat;
    Eigen::MatrixXd beta_cov_unscaled;  // (X' Sigma^-1 X)^-1
};

inline GlsQuantities gls_quantities(double theta, const DataVector& data, double nu) {
    detail::check_theta(theta, "gls_quantities");
    const MaternParams par{1.0, theta, nu};
    const Eigen::MatrixXd sigma = matern_corr_matrix(data.design.locations, par);
    const auto llt = detail::guarded_chol(sigma, theta, "gls_quantities");
    const auto tri = llt.matrixL();

    GlsQuantities q;
    q.log_det_sigma = 2.0 * tri.toDenseMatrix().diagonal().array().log().sum();
    const Eigen::MatrixXd b = tri.solve(data.design.X);
    const Eigen::VectorXd w = tri.solve(data.z);
    Eigen::LLT<Eigen::MatrixXd> llt_xsx((b.transpose() * b).eval());
    if (llt_xsx.info() != Eigen::Success)
        throw numerical_error("gls_quantities: X' Sigma^-1 X not positive definite at theta=" +
                              std::to_string(theta));
    q.log_det_xsx = 2.0 * llt_xsx.matrixLLT().diagonal().array().log().sum();
    q.beta_hat = llt_xsx.solve(b.transpose() * w);
    q.beta_cov_unscaled =
        llt_xsx.solve(Eigen::MatrixXd::Identity(data.p(), data.p()));
    q.s2 = (w - b * q.beta_hat).squaredNorm();
    return q;
}

inline double gauss_loglik(const Eigen::VectorXd& beta, double sigma2, double theta,
                           const DataVector& data, double nu) {
    if (beta.size() != data.p())
        throw validation_error("gauss_loglik: coefficient length must match the design");
    if (!(sigma2 > 0.0) || !std::isfinite(sigma2))
        throw validation_error("gauss_loglik: sigma2 must be positive");
    detail::check_theta(theta, "gauss_loglik");
    const MaternParams par{1.0, theta, nu};
    const Eigen::MatrixXd sigma = matern_corr_matrix(data.design.locations, par);
    const auto llt = detail::guarded_chol(sigma, theta, "gauss_loglik");
    const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const Eigen::VectorXd u = llt.matrixL().solve((data.z - data.design.X * beta).eval());
    const double n = static_cast<double>(data.n());
    return -0.5 * n * std::log(2.0 * std::numbers::pi * sigma2) - 0.5 * log_det -
           u.squaredNorm() / (2.0 * sigma2);
}

// Log integrated likelihood of theta (flat prior on the mean, scale-invariant
// prior on the variance), up to a theta-free additive constant.  The two
// representations differ by -log|X'X|/2 exactly: the full-data determinants
// versus the contrast form through W with W'W = I, X'W = 0.
inline double integrated_loglik_theta(double theta, const DataVector& data, double nu,
                                      const ContrastProjector& proj) {
    detail::check_theta(theta, "integrated_loglik_theta");
    const MaternParams par{1.0, theta, nu};
    const Eigen::MatrixXd sigma = matern_corr_matrix(data.design.locations, par);
    const Eigen::MatrixXd sw = proj.W.transpose() * sigma * proj.W;
    const auto llt = detail::guarded_chol(sw, theta, "integrated_loglik_theta");
    const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const Eigen::VectorXd zw = proj.W.transpose() * data.z;
    const double q = zw.dot(llt.solve(zw));
    const double k = 0.5 * static_cast<double>(data.n() - data.p());
    return -0.5 * log_det - k * std::log(q);
}

inline double integrated_loglik_theta(double theta, const DataVector& data, double nu,
                                      ExactRep rep = ExactRep::a) {
    if (rep == ExactRep::b)
        return integrated_loglik_theta(theta, data, nu, build_contrast_projector(data.design));
    const GlsQuantities q = gls_quantities(theta, data, nu);
    const double k = 0.5 * static_cast<double>(data.n() - data.p());
    return -0.5 * q.log_det_sigma - 0.5 * q.log_det_xsx - k * std::log(q.s2);
}

// The error contrasts of the gridded data: the last M-1 entries of
// diag(col_scale) H1' ztilde.  The dropped first entry is the scaled grid mean.
inline Eigen::VectorXd error_contrasts(const SpectralBasis& basis, const Eigen::VectorXd& ztilde) {
    if (ztilde.size() != basis.H1.rows())
        throw validation_error("error_contrasts: data length must match the grid size");
    const Eigen::VectorXd v1 = basis.col_scale.asDiagonal() * (basis.H1.transpose() * ztilde);
    return v1.tail(v1.size() - 1);
}

namespace detail {

// Variances of the contrasts up to sigma2: c_delta * f~ at the M-1 non-origin
// layout frequencies, in the order matching error_contrasts.
inline Eigen::VectorXd contrast_lambda(double theta, const SpectralDesign& spectral,
                                       const MaternParams& params, const AliasConfig& alias) {
    const MaternParams pt{params.sigma2, theta, params.nu};
    const DiagonalSpectrum lt = lambda_tilde(spectral, pt, alias);
    return lt.lambda.tail(lt.lambda.size() - 1);
}

}  // namespace detail

inline double approx_restricted_loglik(double sigma2, double theta,
                                       const Eigen::VectorXd& v_contrasts,
                                       const SpectralDesign& spectral, const MaternParams& params,
                                       const AliasConfig& alias) {
    if (!(sigma2 > 0.0) || !std::isfinite(sigma2))
        throw validation_error("approx_restricted_loglik: sigma2 must be positive");
    detail::check_theta(theta, "approx_restricted_loglik");
    if (v_contrasts.size() != spectral.M() - 1)
        throw validation_error("approx_restricted_loglik: need M-1 contrasts");
    const Eigen::VectorXd lam = detail::contrast_lambda(theta, spectral, params, alias);
    const Eigen::ArrayXd var = sigma2 * lam.array();
    return -0.5 * (var.log() + v_contrasts.array().square() / var).sum();
}

// Closed-form maximizer of the restricted log-likelihood over sigma2 at fixed
// theta: the mean of V_j^2 / (c_delta f~_j).
inline double approx_reml_sigma2(double theta, const Eigen::VectorXd& v_contrasts,
                                 const SpectralDesign& spectral, const MaternParams& params,
                                 const AliasConfig& alias) {
    detail::check_theta(theta, "approx_reml_sigma2");
    if (v_contrasts.size() != spectral.M() - 1)
        throw validation_error("approx_reml_sigma2: need M-1 contrasts");
    const Eigen::VectorXd lam = detail::contrast_lambda(theta, spectral, params, alias);
    return (v_contrasts.array().square() / lam.array()).mean();
}

// Recognize a complete m1 x m2 lattice with one common spacing in both axes.
// perm maps grid rows (second coordinate fastest) to data rows.
struct GridMatch {
    AuxGrid grid;
    std::vector<int> perm;
};

namespace detail {

inline std::vector<double> distinct_sorted(std::vector<double> v, double tol) {
    std::sort(v.begin(), v.end());
    std::vector<double> out;
    for (double x : v)
        if (out.empty() || x - out.back() > tol) out.push_back(x);
    return out;
}

}  // namespace detail

inline std::optional<GridMatch> match_regular_grid(const Locations& locs) {
    const auto n = locs.rows();
    if (n < 4) return std::nullopt;
    const double scale = 1.0 + locs.cwiseAbs().maxCoeff();
    const double tol = 1e-8 * scale;
    std::vector<double> xs(static_cast<std::size_t>(n)), ys(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        xs[static_cast<std::size_t>(i)] = locs(i, 0);
        ys[static_cast<std::size_t>(i)] = locs(i, 1);
    }
    const auto ux = detail::distinct_sorted(std::move(xs), tol);
    const auto uy = detail::distinct_sorted(std::move(ys), tol);
    const auto m1 = static_cast<Eigen::Index>(ux.size());
    const auto m2 = static_cast<Eigen::Index>(uy.size());
    if (m1 < 2 || m2 < 2 || m1 * m2 != n) return std::nullopt;

    auto spacing = [&](const std::vector<double>& u) -> double {
        const double d = u[1] - u[0];
        for (std::size_t i = 2; i < u.size(); ++i)
            if (std::abs(u[i] - u[i - 1] - d) > tol) return 0.0;
        return d;
    };
    const double dx = spacing(ux), dy = spacing(uy);
    if (dx == 0.0 || dy == 0.0 || std::abs(dx - dy) > tol) return std::nullopt;
    const double delta = 0.5 * (dx + dy);

    auto index_of = [&](const std::vector<double>& u, double v) -> int {
        const auto it = std::lower_bound(u.begin(), u.end(), v - tol);
        return static_cast<int>(it - u.begin());
    };
    GridMatch match;
    match.grid = AuxGrid{static_cast<int>(m1), static_cast<int>(m2), delta, ux.front() - delta,
                         uy.front() - delta};
    match.perm.assign(static_cast<std::size_t>(n), -1);
    for (Eigen::Index r = 0; r < n; ++r) {
        const int i = index_of(ux, locs(r, 0));
        const int j = index_of(uy, locs(r, 1));
        if (std::abs(ux[static_cast<std::size_t>(i)] - locs(r, 0)) > tol ||
            std::abs(uy[static_cast<std::size_t>(j)] - locs(r, 1)) > tol)
            return std::nullopt;
        auto& slot = match.perm[static_cast<std::size_t>(match.grid.row(i + 1, j + 1))];
        if (slot != -1) return std::nullopt;  // duplicate cell
        slot = static_cast<int>(r);
    }
    for (int s : match.perm)
        if (s < 0) return std::nullopt;  // incomplete lattice
    return match;
}

enum class RemlMethod { exact, approximate };

struct RemlFit {
    double sigma2 = 0.0;
    double theta = 0.0;
    RemlMethod method = RemlMethod::exact;
    bool converged = false;  // interior maximum found
    bool at_lower_bound = false;
    bool at_upper_bound = false;
    double objective = 0.0;  // profile restricted log-likelihood, up to a constant
    int iterations = 0;      // objective evaluations
};

// Search range for the range parameter: three decades below the closest pair
// to three decades above the design diameter.
inline ThetaRange reml_search_range(const Locations& locs) {
    const auto nn = nearest_neighbor_distances(locs);
    double diameter = 0.0;
    for (Eigen::Index i = 0; i < locs.rows(); ++i)
        for (Eigen::Index j = 0; j < i; ++j)
            diameter = std::max(diameter, (locs.row(i) - locs.row(j)).norm());
    return {1e-3 * nn.d_min, 1e3 * diameter};
}

namespace detail {

// Maximize over log theta, treating conditioning failures as -inf.
inline ScalarMax maximize_over_theta(const std::function<double(double)>& f, const ThetaRange& range,
                                     double tol = 1e-6) {
    auto safe = [&](double logt) {
        try {
            return f(std::exp(logt));
        } catch (const numerical_error&) {
            return -HUGE_VAL;
        }
    };
    return golden_max(safe, std::log(range.lo), std::log(range.hi), tol);
}

}  // namespace detail

inline RemlFit reml_fit_exact(const DataVector& data, double nu) {
    const ThetaRange range = reml_search_range(data.design.locations);
    const auto best = detail::maximize_over_theta(
        [&](double t) { return integrated_loglik_theta(t, data, nu); }, range);
    if (!std::isfinite(best.value))
        throw numerical_error("reml_fit_exact: objective not finite anywhere on the search range");
    RemlFit fit;
    fit.method = RemlMethod::exact;
    fit.theta = std::exp(best.x);
    fit.sigma2 = gls_quantities(fit.theta, data, nu).s2 / static_cast<double>(data.n() - data.p());
    fit.objective = best.value;
    fit.iterations = best.evaluations;
    fit.at_lower_bound = best.at_lower;
    fit.at_upper_bound = best.at_upper;
    fit.converged = !best.at_lower && !best.at_upper;
    return fit;
}

inline RemlFit reml_fit_approx(const DataVector& data, double nu,
                               const std::optional<AliasConfig>& alias_in = std::nullopt) {
    if (data.p() != 1)
        throw validation_error("reml_fit_approx: restricted spectral fit needs a constant mean");
    const auto match = match_regular_grid(data.design.locations);
    if (!match)
        throw validation_error("reml_fit_approx: data must lie on a complete regular grid");
    const auto& grid = match->grid;
    if (grid.m1 % 2 != 0 || grid.m2 % 2 != 0)
        throw validation_error("reml_fit_approx: grid sides must be even to host the spectral design");
    const AliasConfig alias = alias_in.value_or(AliasConfig{grid.delta, 5});
    const auto spectral = build_spectral_design(grid.m1, grid.m2, grid.delta);
    detail::check_alias_delta(spectral, alias);
    const auto basis = build_H1(grid, spectral);

    Eigen::VectorXd ztilde(data.n());
    for (Eigen::Index r = 0; r < data.n(); ++r)
        ztilde(r) = data.z(match->perm[static_cast<std::size_t>(r)]);
    const Eigen::VectorXd v = error_contrasts(basis, ztilde);

    const MaternParams par{1.0, 1.0, nu};
    const double m_minus_1 = static_cast<double>(spectral.M() - 1);
    const ThetaRange range{1e-3 * grid.delta,
                           1e3 * std::hypot((grid.m1 - 1) * grid.delta, (grid.m2 - 1) * grid.delta)};
    const auto best = detail::maximize_over_theta(
        [&](double t) {
            const Eigen::VectorXd lam = detail::contrast_lambda(t, spectral, par, alias);
            const double s2h = (v.array().square() / lam.array()).mean();
            return -0.5 * (lam.array().log().sum() + m_minus_1 * (std::log(s2h) + 1.0));
        },
        range);
    RemlFit fit;
    fit.method = RemlMethod::approximate;
    fit.theta = std::exp(best.x);
    fit.sigma2 = approx_reml_sigma2(fit.theta, v, spectral, par, alias);
    fit.objective = best.value;
    fit.iterations = best.evaluations;
    fit.at_lower_bound = best.at_lower;
    fit.at_upper_bound = best.at_upper;
    fit.converged = !best.at_lower && !best.at_upper;
    return fit;
}

inline RemlFit reml_fit(const DataVector& data, RemlMethod method, double nu,
                        const std::optional<AliasConfig>& alias = std::nullopt) {
    return method == RemlMethod::exact ? reml_fit_exact(data, nu)
                                       : reml_fit_approx(data, nu, alias);
}

struct ConfidenceInterval {
    double lower = 0.0;
    double upper = 0.0;
    double level = 0.0;
    bool lower_at_bound = false;  // search-range end reached before the ratio dropped
    bool upper_at_bound = false;
    double log_length() const { return std::log(upper) - std::log(lower); }
};

enum class ProfileParam { sigma2, theta };

namespace detail {

// chi-square(1) quantile through the standard normal: Q(q) = Phi^-1((1+q)/2)^2.
inline double chi2_quantile_1(double level) {
    const double zq = boost::math::quantile(boost::math::normal_distribution<>(), 0.5 * (1.0 + level));
    return zq * zq;
}

}  // namespace detail

struct LrBounds {
    double lower = 0.0;
    double upper = 0.0;
    bool lower_at_bound = false;
    bool upper_at_bound = false;
};

// Endpoints where the log profile drops threshold/2 below its maximum, found by
// bisection on each side of x_hat.  Axis-agnostic: callers pass the profile on
// whatever scale they searched.
inline LrBounds invert_lr_interval(const std::function<double(double)>& profile, double x_hat,
                                   double l_max, double lo, double hi, double threshold,
                                   int max_iter = 60) {
    if (!(threshold > 0.0)) throw validation_error("invert_lr_interval: threshold must be positive");
    auto drop = [&](double x) { return 2.0 * (l_max - profile(x)) - threshold; };
    LrBounds out{lo, hi, true, true};
    const double g_hat = drop(x_hat);
    if (g_hat > 0.0)
        throw numerical_error("invert_lr_interval: profile maximum below the cut level");
    const double g_lo = lo < x_hat ? drop(lo) : g_hat;
    if (g_lo > 0.0) {
        out.lower = detail::bisect_root([&](double x) { return drop(x); }, lo, x_hat, g_lo, g_hat,
                                        max_iter);
        out.lower_at_bound = false;
    }
    const double g_hi = hi > x_hat ? drop(hi) : g_hat;
    if (g_hi > 0.0) {
        out.upper = detail::bisect_root([&](double x) { return drop(x); }, x_hat, hi, g_hat, g_hi,
                                        max_iter);
        out.upper_at_bound = false;
    }
    return out;
}

namespace detail {

// Profile log-likelihood of theta: the mean maximized in closed form (GLS) and
// the variance at its stationary value S2/n.
inline double ml_profile_theta(double theta, const DataVector& data, double nu) {
    const GlsQuantities q = gls_quantities(theta, data, nu);
    const double n = static_cast<double>(data.n());
    return -0.5 * q.log_det_sigma - 0.5 * n * std::log(q.s2 / n);
}

// Profile log-likelihood of sigma2: theta maximized numerically, mean in
// closed form.  inner_tol keeps the nested search cheap; the quadratic profile
// makes the interval endpoints second-order insensitive to it.
inline double ml_profile_sigma2(double sigma2, const DataVector& data, double nu,
                                const ThetaRange& range, double inner_tol = 1e-5) {
    const double n = static_cast<double>(data.n());
    const auto inner = maximize_over_theta(
        [&](double t) {
            const GlsQuantities q = gls_quantities(t, data, nu);
            return -0.5 * q.log_det_sigma - q.s2 / (2.0 * sigma2);
        },
        range, inner_tol);
    return inner.value - 0.5 * n * std::log(sigma2);
}

}  // namespace detail

inline ConfidenceInterval profile_ci(const DataVector& data, ProfileParam param, double level,
                                     double nu) {
    if (!(level > 0.0 && level < 1.0)) throw validation_error("profile_ci: level must be in (0,1)");
    const ThetaRange range = reml_search_range(data.design.locations);
    const double threshold = detail::chi2_quantile_1(level);

    std::function<double(double)> profile;  // on the log-parameter axis
    double axis_lo = 0.0, axis_hi = 0.0;
    if (param == ProfileParam::theta) {
        profile = [&data, nu](double logt) {
            try {
                return detail::ml_profile_theta(std::exp(logt), data, nu);
            } catch (const numerical_error&) {
                return -HUGE_VAL;
            }
        };
        axis_lo = std::log(range.lo);
        axis_hi = std::log(range.hi);
    } else {
        const auto theta_fit = detail::maximize_over_theta(
            [&](double t) { return detail::ml_profile_theta(t, data, nu); }, range);
        const double s2_hat =
            gls_quantities(std::exp(theta_fit.x), data, nu).s2 / static_cast<double>(data.n());
        profile = [&data, nu, range](double logs) {
            return detail::ml_profile_sigma2(std::exp(logs), data, nu, range);
        };
        axis_lo = std::log(s2_hat) - 4.0 * std::numbers::ln10;
        axis_hi = std::log(s2_hat) + 4.0 * std::numbers::ln10;
    }

    const auto best = detail::golden_max(profile, axis_lo, axis_hi, 1e-6);
    if (!std::isfinite(best.value))
        throw numerical_error("profile_ci: profile not finite anywhere on the search range");
    const LrBounds bounds =
        invert_lr_interval(profile, best.x, best.value, axis_lo, axis_hi, threshold);
    return {std::exp(bounds.lower), std::exp(bounds.upper), level, bounds.lower_at_bound,
            bounds.upper_at_bound};
}

}  // namespace gfref
