#pragma once

// Matérn correlation, its range derivative, and the (A1)-form spectral
// machinery: f_theta(w) = h1(w) h2(theta) / (|w|^2 + u(theta))^a, plus the
// aliased lattice sum and its analytic theta log-derivative.

#include <array>
#include <cmath>
#include <functional>
#include <numbers>

#include <Eigen/Dense>
#include <boost/math/special_functions/bessel.hpp>

#include "gfref/errors.hpp"

namespace gfref {

struct MaternParams {
    double sigma2 = 1.0;
    double theta = 1.0;
    double nu = 0.5;

    void validate() const {
        if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) throw validation_error("MaternParams: sigma2 must be positive");
        if (!(theta > 0.0) || !std::isfinite(theta)) throw validation_error("MaternParams: theta must be positive");
        if (!(nu > 0.0) || !std::isfinite(nu)) throw validation_error("MaternParams: nu must be positive");
    }
};

namespace detail {

// x = 2 sqrt(nu) r / theta exceeding this makes exp(-x) underflow to 0.
inline constexpr double kExpUnderflow = 745.0;

// P_m(x) = sum_{k=0}^m c_k x^(m-k) with c_0 = 1, c_k = c_{k-1}(m+k)(m-k+1)/(2k).
// The half-integer (nu = m + 1/2) correlation is P_m(x) exp(-x) / (2m-1)!!.
inline double halfint_poly(int m, double x) {
    std::array<double, 64> c{};
    c[0] = 1.0;
    for (int k = 1; k <= m; ++k)
        c[k] = c[k - 1] * static_cast<double>(m + k) * static_cast<double>(m - k + 1) / (2.0 * k);
    double p = c[0];
    for (int k = 1; k <= m; ++k) p = p * x + c[k];
    return p;
}

inline double double_factorial_odd(int m) {  // (2m-1)!!, with (-1)!! = 1
    double d = 1.0;
    for (int j = 3; j <= 2 * m - 1; j += 2) d *= j;
    return d;
}

// Returns m >= 0 when nu = m + 1/2 within tolerance and the closed form is usable.
inline int halfint_order(double nu) {
    const double mf = nu - 0.5;
    const auto m = static_cast<int>(std::lround(mf));
    if (m >= 0 && m <= 60 && std::abs(mf - m) < 1e-12) return m;
    return -1;
}

// log K_v(x) for large x via the 6-term asymptotic series; adequate for
// x > 650 and the smoothness ranges used here (v^2 << x).
inline double log_bessel_k_large(double v, double x) {
    const double fv = 4.0 * v * v;
    double term = 1.0, s = 1.0;
    for (int j = 1; j <= 6; ++j) {
        const double odd = 2.0 * j - 1.0;
        term *= (fv - odd * odd) / (8.0 * j * x);
        s += term;
    }
    double corr = s > 0.0 ? std::log(s) : 0.0;
    return 0.5 * std::log(std::numbers::pi / (2.0 * x)) - x + corr;
}

}  // namespace detail

// Matérn correlation K_theta(r) with x = 2 sqrt(nu) r / theta.
inline double matern_corr(double r, const MaternParams& p) {
    p.validate();
    if (!std::isfinite(r) || r < 0.0) throw validation_error("matern_corr: r must be finite and nonnegative");
    if (r == 0.0) return 1.0;
    const double x = 2.0 * std::sqrt(p.nu) * r / p.theta;
    if (x >= detail::kExpUnderflow) return 0.0;

    if (const int m = detail::halfint_order(p.nu); m >= 0) {
        if (m == 0) return std::exp(-x);
        return detail::halfint_poly(m, x) * std::exp(-x) / detail::double_factorial_odd(m);
    }

    if (std::log(2.0 / x) * p.nu > 600.0) return 1.0;  // K_nu prefactor would overflow; corr is 1 to machine precision
    if (x <= 650.0) {
        const double k = boost::math::cyl_bessel_k(p.nu, x);
        const double v = std::pow(2.0, 1.0 - p.nu) / std::tgamma(p.nu) * std::pow(x, p.nu) * k;
        return v < 1.0 ? v : 1.0;
    }
    const double lc = (1.0 - p.nu) * std::numbers::ln2 - std::lgamma(p.nu) + p.nu * std::log(x) +
                      detail::log_bessel_k_large(p.nu, x);
    return lc < -detail::kExpUnderflow ? 0.0 : std::exp(lc);
}

// d K_theta(r) / d theta, using d/dx [x^nu K_nu(x)] = -x^nu K_{nu-1}(x).
inline double matern_dcorr_dtheta(double r, const MaternParams& p) {
    p.validate();
    if (!std::isfinite(r) || r < 0.0) throw validation_error("matern_dcorr_dtheta: r must be finite and nonnegative");
    if (r == 0.0) return 0.0;
    const double x = 2.0 * std::sqrt(p.nu) * r / p.theta;
    if (x >= detail::kExpUnderflow) return 0.0;

    if (const int m = detail::halfint_order(p.nu); m >= 0) {
        if (m == 0) return x * std::exp(-x) / p.theta;
        return x * x * detail::halfint_poly(m - 1, x) * std::exp(-x) /
               (detail::double_factorial_odd(m) * p.theta);
    }

    const double ord = std::abs(p.nu - 1.0);
    if (ord > 0.0 && std::log(2.0 / x) * ord > 600.0) return 0.0;  // value is O(x^min(2nu,2))/theta, below underflow
    if (x <= 650.0) {
        const double k = boost::math::cyl_bessel_k(ord, x);
        return std::pow(2.0, 1.0 - p.nu) / std::tgamma(p.nu) * std::pow(x, p.nu + 1.0) * k / p.theta;
    }
    const double lc = (1.0 - p.nu) * std::numbers::ln2 - std::lgamma(p.nu) + (p.nu + 1.0) * std::log(x) +
                      detail::log_bessel_k_large(ord, x) - std::log(p.theta);
    return lc < -detail::kExpUnderflow ? 0.0 : std::exp(lc);
}

inline Eigen::MatrixXd matern_corr_matrix(const Eigen::Matrix<double, Eigen::Dynamic, 2>& locs,
                                          const MaternParams& p) {
    const auto n = locs.rows();
    Eigen::MatrixXd s(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        s(i, i) = 1.0;
        for (Eigen::Index j = 0; j < i; ++j) {
            const double r = (locs.row(i) - locs.row(j)).norm();
            s(i, j) = s(j, i) = matern_corr(r, p);
        }
    }
    return s;
}

inline Eigen::MatrixXd matern_dcorr_matrix(const Eigen::Matrix<double, Eigen::Dynamic, 2>& locs,
                                           const MaternParams& p) {
    const auto n = locs.rows();
    Eigen::MatrixXd s(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        s(i, i) = 0.0;
        for (Eigen::Index j = 0; j < i; ++j) {
            const double r = (locs.row(i) - locs.row(j)).norm();
            s(i, j) = s(j, i) = matern_dcorr_dtheta(r, p);
        }
    }
    return s;
}

// Pluggable (A1) spectral family. h1 depends on frequency only; h2 and u on
// theta only, with analytic derivatives so the aliased log-derivative never
// needs numerical differentiation.
struct SpectralFamily {
    std::function<double(double, double)> h1;
    std::function<double(double)> h2;
    std::function<double(double)> dh2;
    std::function<double(double)> u;
    std::function<double(double)> du;
    double a = 2.0;

    void validate() const {
        if (!h1 || !h2 || !dh2 || !u || !du) throw validation_error("SpectralFamily: all component functions must be set");
        if (!(a > 1.0)) throw validation_error("SpectralFamily: exponent a must exceed 1");
    }
};

inline SpectralFamily matern_family(double nu) {
    if (!(nu > 0.0) || !std::isfinite(nu)) throw validation_error("matern_family: nu must be positive");
    const double h1c = nu * std::pow(4.0 * nu, nu) / std::numbers::pi;
    SpectralFamily f;
    f.h1 = [h1c](double, double) { return h1c; };
    f.h2 = [nu](double th) { return std::pow(th, -2.0 * nu); };
    f.dh2 = [nu](double th) { return -2.0 * nu * std::pow(th, -2.0 * nu - 1.0); };
    f.u = [nu](double th) { return 4.0 * nu / (th * th); };
    f.du = [nu](double th) { return -8.0 * nu / (th * th * th); };
    f.a = nu + 1.0;
    return f;
}

struct AliasConfig {
    double delta = 1.0;
    int truncation = 5;

    void validate() const {
        if (!(delta > 0.0) || !std::isfinite(delta)) throw validation_error("AliasConfig: delta must be positive");
        if (truncation < 0) throw validation_error("AliasConfig: truncation must be nonnegative");
    }
};

inline double specden(double wx, double wy, const SpectralFamily& fam, double theta) {
    fam.validate();
    if (!(theta > 0.0)) throw validation_error("specden: theta must be positive");
    if (!std::isfinite(wx) || !std::isfinite(wy)) throw validation_error("specden: frequency must be finite");
    const double base = wx * wx + wy * wy + fam.u(theta);
    return fam.h1(wx, wy) * fam.h2(theta) * std::pow(base, -fam.a);
}

inline double specden(double wx, double wy, const MaternParams& p) {
    p.validate();
    if (!std::isfinite(wx) || !std::isfinite(wy)) throw validation_error("specden: frequency must be finite");
    const double h1c = p.nu * std::pow(4.0 * p.nu, p.nu) / std::numbers::pi;
    const double base = wx * wx + wy * wy + 4.0 * p.nu / (p.theta * p.theta);
    return h1c * std::pow(p.theta, -2.0 * p.nu) * std::pow(base, -(p.nu + 1.0));
}

namespace detail {

inline void check_nyquist(double wx, double wy, const AliasConfig& alias) {
    const double nyq = std::numbers::pi / alias.delta;
    const double tol = 1e-9 * (1.0 + nyq);
    if (std::abs(wx) > nyq + tol || std::abs(wy) > nyq + tol)
        throw validation_error("aliased_specden: frequency outside the Nyquist square [-pi/delta, pi/delta]^2");
}

}  // namespace detail

inline double aliased_specden(double wx, double wy, const SpectralFamily& fam, double theta,
                              const AliasConfig& alias) {
    fam.validate();
    alias.validate();
    detail::check_nyquist(wx, wy, alias);
    const double w0 = 2.0 * std::numbers::pi / alias.delta;
    const double uu = fam.u(theta), h2 = fam.h2(theta);
    double s = 0.0;
    for (int l1 = -alias.truncation; l1 <= alias.truncation; ++l1)
        for (int l2 = -alias.truncation; l2 <= alias.truncation; ++l2) {
            const double ox = wx + w0 * l1, oy = wy + w0 * l2;
            s += fam.h1(ox, oy) * std::pow(ox * ox + oy * oy + uu, -fam.a);
        }
    return h2 * s;
}

inline double aliased_specden(double wx, double wy, const MaternParams& p, const AliasConfig& alias) {
    p.validate();
    alias.validate();
    detail::check_nyquist(wx, wy, alias);
    const double w0 = 2.0 * std::numbers::pi / alias.delta;
    const double uu = 4.0 * p.nu / (p.theta * p.theta);
    const double a = p.nu + 1.0;
    double s = 0.0;
    for (int l1 = -alias.truncation; l1 <= alias.truncation; ++l1)
        for (int l2 = -alias.truncation; l2 <= alias.truncation; ++l2) {
            const double ox = wx + w0 * l1, oy = wy + w0 * l2;
            s += std::pow(ox * ox + oy * oy + uu, -a);
        }
    const double h1c = p.nu * std::pow(4.0 * p.nu, p.nu) / std::numbers::pi;
    return h1c * std::pow(p.theta, -2.0 * p.nu) * s;
}

// d/dtheta log f~ = h2'/h2 - a u' S_{a+1}/S_a with S_b = sum_l h1(w_l)(|w_l|^2+u)^-b.
inline double dlog_aliased_specden(double wx, double wy, const SpectralFamily& fam, double theta,
                                   const AliasConfig& alias) {
    fam.validate();
    alias.validate();
    detail::check_nyquist(wx, wy, alias);
    const double w0 = 2.0 * std::numbers::pi / alias.delta;
    const double uu = fam.u(theta);
    double sa = 0.0, sa1 = 0.0;
    for (int l1 = -alias.truncation; l1 <= alias.truncation; ++l1)
        for (int l2 = -alias.truncation; l2 <= alias.truncation; ++l2) {
            const double ox = wx + w0 * l1, oy = wy + w0 * l2;
            const double base = ox * ox + oy * oy + uu;
            const double pa = fam.h1(ox, oy) * std::pow(base, -fam.a);
            sa += pa;
            sa1 += pa / base;
        }
    return fam.dh2(theta) / fam.h2(theta) - fam.a * fam.du(theta) * sa1 / sa;
}

inline double dlog_aliased_specden(double wx, double wy, const MaternParams& p, const AliasConfig& alias) {
    p.validate();
    alias.validate();
    detail::check_nyquist(wx, wy, alias);
    const double w0 = 2.0 * std::numbers::pi / alias.delta;
    const double uu = 4.0 * p.nu / (p.theta * p.theta);
    const double a = p.nu + 1.0;
    double sa = 0.0, sa1 = 0.0;
    for (int l1 = -alias.truncation; l1 <= alias.truncation; ++l1)
        for (int l2 = -alias.truncation; l2 <= alias.truncation; ++l2) {
            const double ox = wx + w0 * l1, oy = wy + w0 * l2;
            const double base = ox * ox + oy * oy + uu;
            const double pa = std::pow(base, -a);
            sa += pa;
            sa1 += pa / base;
        }
    const double th = p.theta;
    return -2.0 * p.nu / th + 8.0 * p.nu * a / (th * th * th) * sa1 / sa;
}

}  // namespace gfref
