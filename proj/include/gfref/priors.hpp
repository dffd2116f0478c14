#pragma once

// Objective priors for the range parameter: the exact reference prior in both
// trace representations (full data and error contrasts), its spectral
// approximations (general mean via the diagonal-spectrum trace formula, and a
// matrix-free constant-mean form), plus tabulation on a log grid with
// normalization and tail/propriety diagnostics.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/SVD>

#include "gfref/covmodel.hpp"
#include "gfref/designs.hpp"
#include "gfref/detail/interp.hpp"
#include "gfref/detail/stats.hpp"
#include "gfref/errors.hpp"
#include "gfref/spectral_basis.hpp"

namespace gfref {

// Margin around slope -1 inside which integrability of a power-law tail
// cannot be certified from a tabulation.
inline constexpr double kTailSlopeMargin = 0.02;

// Largest RMS log residual at which a boundary decade still counts as
// power-law shaped; beyond it the fitted slope must not be extrapolated.
inline constexpr double kSlopeFitRmsTol = 0.25;

enum class Propriety { unknown, proper, improper, inconclusive };

inline const char* to_string(Propriety p) {
    switch (p) {
        case Propriety::proper: return "proper";
        case Propriety::improper: return "improper";
        case Propriety::inconclusive: return "inconclusive";
        default: return "unknown";
    }
}

struct QuadratureMeta {
    std::string rule = "log-grid trapezoid + power-law tail correction";
    double tolerance = 1e-4;
    double theta_lo = 0.0, theta_hi = 0.0;  // tabulation cutoffs
    double lower_slope = std::numeric_limits<double>::quiet_NaN();
    double upper_slope = std::numeric_limits<double>::quiet_NaN();
    double lower_tail_mass = 0.0, upper_tail_mass = 0.0;  // fractions of total mass
};

struct TabulatedDensity {
    Eigen::VectorXd theta_grid;  // strictly increasing
    Eigen::VectorXd values;      // density values; unnormalized until normalize()
    Eigen::VectorXd log_values;
    bool normalized = false;
    double log_C = std::numeric_limits<double>::quiet_NaN();  // log normalizing constant
    Propriety propriety = Propriety::unknown;
    QuadratureMeta quad;

    Eigen::Index size() const { return theta_grid.size(); }

    void validate() const {
        if (theta_grid.size() < 2) throw validation_error("TabulatedDensity: need at least two grid points");
        if (values.size() != theta_grid.size() || log_values.size() != theta_grid.size())
            throw validation_error("TabulatedDensity: value arrays must match the grid");
        if (!(theta_grid(0) > 0.0)) throw validation_error("TabulatedDensity: grid must be positive");
        for (Eigen::Index i = 1; i < theta_grid.size(); ++i)
            if (!(theta_grid(i) > theta_grid(i - 1)))
                throw validation_error("TabulatedDensity: grid must be strictly increasing");
        for (Eigen::Index i = 0; i < values.size(); ++i) {
            if (!(values(i) >= 0.0) || !std::isfinite(values(i)))
                throw validation_error("TabulatedDensity: density values must be finite and nonnegative");
            if (std::isnan(log_values(i)) || log_values(i) == std::numeric_limits<double>::infinity())
                throw validation_error("TabulatedDensity: log values must be in [-inf, finite)");
        }
    }

    // Monotone-cubic interpolation of log density against log theta; linear
    // extension (a power law with the boundary slope) outside the grid.
    double log_value_at(double theta) const {
        if (!(theta > 0.0) || !std::isfinite(theta))
            throw validation_error("TabulatedDensity: query theta must be positive");
        std::vector<double> xs, ys;
        xs.reserve(static_cast<std::size_t>(size()));
        ys.reserve(static_cast<std::size_t>(size()));
        for (Eigen::Index i = 0; i < size(); ++i)
            if (std::isfinite(log_values(i))) {
                xs.push_back(std::log(theta_grid(i)));
                ys.push_back(log_values(i));
            }
        if (xs.size() < 2) return -std::numeric_limits<double>::infinity();
        return detail::PchipSpline(std::move(xs), std::move(ys))(std::log(theta));
    }

    double value_at(double theta) const { return std::exp(log_value_at(theta)); }
};

inline Eigen::VectorXd log_spaced_grid(double lo, double hi, int n) {
    if (!(lo > 0.0) || !(hi > lo) || n < 2)
        throw validation_error("log_spaced_grid: need 0 < lo < hi and n >= 2");
    Eigen::VectorXd g(n);
    const double a = std::log(lo), step = (std::log(hi) - a) / (n - 1);
    for (int i = 0; i < n; ++i) g(i) = std::exp(a + i * step);
    g(0) = lo;
    g(n - 1) = hi;
    return g;
}

struct ThetaRange {
    double lo = 0.0, hi = 0.0;
};

// Default tabulation range: two decades below to three decades above the
// smallest nearest-neighbor distance.
inline ThetaRange default_prior_range(const SpatialDesign& design) {
    const auto nn = nearest_neighbor_distances(design);
    const double dmin = *std::min_element(nn.d.begin(), nn.d.end());
    return {1e-2 * dmin, 1e3 * dmin};
}

inline TabulatedDensity tabulate_log_density(const std::function<double(double)>& log_f, double lo,
                                             double hi, int n = 200) {
    if (!log_f) throw validation_error("tabulate_log_density: missing density function");
    TabulatedDensity d;
    d.theta_grid = log_spaced_grid(lo, hi, n);
    d.values.resize(n);
    d.log_values.resize(n);
    for (int i = 0; i < n; ++i) {
        const double lv = log_f(d.theta_grid(i));
        if (std::isnan(lv) || lv == std::numeric_limits<double>::infinity())
            throw numerical_error("tabulate_log_density: log density is " + std::to_string(lv) +
                                  " at theta=" + std::to_string(d.theta_grid(i)));
        d.log_values(i) = lv;
        d.values(i) = std::exp(lv);
    }
    d.quad.theta_lo = lo;
    d.quad.theta_hi = hi;
    return d;
}

inline TabulatedDensity tabulate_density(const std::function<double(double)>& f, double lo, double hi,
                                         int n = 200) {
    if (!f) throw validation_error("tabulate_density: missing density function");
    return tabulate_log_density(
        [&f](double t) {
            const double v = f(t);
            if (!(v >= 0.0) || !std::isfinite(v))
                throw numerical_error("tabulate_density: density value " + std::to_string(v) +
                                      " at theta=" + std::to_string(t));
            return std::log(v);
        },
        lo, hi, n);
}

namespace detail {

struct SlopeFit {
    double slope = std::numeric_limits<double>::quiet_NaN();
    int points = 0;
    double rms = std::numeric_limits<double>::quiet_NaN();  // residual of the log-log line
};

// Least-squares slope of log density against log theta over grid points with
// theta in [lo, hi] and a finite log value.
inline SlopeFit fit_log_slope(const Eigen::VectorXd& theta, const Eigen::VectorXd& logv, double lo,
                              double hi) {
    std::vector<double> xs, ys;
    for (Eigen::Index i = 0; i < theta.size(); ++i)
        if (theta(i) >= lo && theta(i) <= hi && std::isfinite(logv(i))) {
            xs.push_back(std::log(theta(i)));
            ys.push_back(logv(i));
        }
    SlopeFit f;
    f.points = static_cast<int>(xs.size());
    if (f.points < 3) return f;
    const double mx = gfref::detail::mean(xs), my = gfref::detail::mean(ys);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
    }
    f.slope = sxy / sxx;
    double ss = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double r = ys[i] - my - f.slope * (xs[i] - mx);
        ss += r * r;
    }
    f.rms = std::sqrt(ss / static_cast<double>(xs.size()));
    return f;
}

inline bool spans_two_decades(const TabulatedDensity& d) {
    return d.theta_grid(d.size() - 1) / d.theta_grid(0) >= 100.0 * (1.0 - 1e-12);
}

// True when the outermost finite log value on the chosen side sits at least
// one nat below the global maximum: the density is falling into that boundary.
inline bool boundary_below_peak(const TabulatedDensity& d, bool upper) {
    constexpr double neg_inf = -std::numeric_limits<double>::infinity();
    double global_max = neg_inf, boundary = neg_inf;
    for (Eigen::Index i = 0; i < d.size(); ++i)
        if (std::isfinite(d.log_values(i))) global_max = std::max(global_max, d.log_values(i));
    if (upper) {
        for (Eigen::Index i = d.size() - 1; i >= 0; --i)
            if (std::isfinite(d.log_values(i))) {
                boundary = d.log_values(i);
                break;
            }
    } else {
        for (Eigen::Index i = 0; i < d.size(); ++i)
            if (std::isfinite(d.log_values(i))) {
                boundary = d.log_values(i);
                break;
            }
    }
    return std::isfinite(boundary) && boundary <= global_max - 1.0;
}

}  // namespace detail

struct TailDiagnostic {
    double slope = std::numeric_limits<double>::quiet_NaN();
    Propriety verdict = Propriety::inconclusive;
    int points_used = 0;
};

// Upper-decade log-log slope; "proper" requires decay certifiably faster
// than 1/theta.
inline TailDiagnostic tail_diagnostic(const TabulatedDensity& d) {
    d.validate();
    TailDiagnostic out;
    if (!detail::spans_two_decades(d)) return out;  // insufficient range: inconclusive
    const double hi = d.theta_grid(d.size() - 1);
    const auto fit = detail::fit_log_slope(d.theta_grid, d.log_values, hi / 10.0, hi);
    out.points_used = fit.points;
    if (fit.points < 3) {
        // the density is (numerically) zero over the upper decade: it has died
        bool any_positive = false;
        for (Eigen::Index i = 0; i < d.size(); ++i)
            if (d.theta_grid(i) >= hi / 10.0 && d.values(i) > 0.0) any_positive = true;
        if (!any_positive) {
            out.slope = -std::numeric_limits<double>::infinity();
            out.verdict = Propriety::proper;
        }
        return out;
    }
    out.slope = fit.slope;
    if (fit.rms > kSlopeFitRmsTol) {
        // Not power-law shaped (e.g. an exponential cutoff).  Still certify
        // decay when the trend is steep and the boundary sits well below the
        // density's peak; otherwise the tail stays inconclusive.
        if (fit.slope < -1.0 - kTailSlopeMargin &&
            detail::boundary_below_peak(d, /*upper=*/true))
            out.verdict = Propriety::proper;
        return out;
    }
    if (fit.slope < -1.0 - kTailSlopeMargin)
        out.verdict = Propriety::proper;
    else if (fit.slope > -1.0 + kTailSlopeMargin)
        out.verdict = Propriety::improper;
    else
        out.verdict = Propriety::inconclusive;
    return out;
}

// Lower-boundary counterpart: certifies integrability of the density at the
// origin.  When the bottom decade is not power-law shaped (oscillating
// spectral approximations, exponential cutoffs), divergence is only credible
// if the density actually peaks at the lower boundary.
inline TailDiagnostic origin_diagnostic(const TabulatedDensity& d) {
    d.validate();
    TailDiagnostic out;
    if (!detail::spans_two_decades(d)) return out;  // insufficient range: inconclusive
    const double lo = d.theta_grid(0);
    const auto fit = detail::fit_log_slope(d.theta_grid, d.log_values, lo, 10.0 * lo);
    out.points_used = fit.points;
    if (fit.points < 3) {
        bool any_positive = false;
        for (Eigen::Index i = 0; i < d.size(); ++i)
            if (d.theta_grid(i) <= 10.0 * lo && d.values(i) > 0.0) any_positive = true;
        if (!any_positive) {
            out.slope = std::numeric_limits<double>::infinity();
            out.verdict = Propriety::proper;  // died toward the origin
        }
        return out;
    }
    out.slope = fit.slope;
    if (fit.rms <= kSlopeFitRmsTol) {
        if (fit.slope > -1.0 + kTailSlopeMargin)
            out.verdict = Propriety::proper;
        else if (fit.slope < -1.0 - kTailSlopeMargin)
            out.verdict = Propriety::improper;
        else
            out.verdict = Propriety::inconclusive;
        return out;
    }
    // Not power-law shaped at the bottom (oscillating spectral noise, an
    // exponential cutoff): the fitted slope must not be extrapolated.  A
    // boundary value well below the peak rules out a credible divergence.
    if (detail::boundary_below_peak(d, /*upper=*/false)) out.verdict = Propriety::proper;
    return out;
}

// Normalize by trapezoid quadrature in log theta plus analytic power-law tail
// corrections fitted on the boundary decades. Grids narrower than two decades
// are treated as compactly supported (no tail mass). A tail that cannot be
// certified integrable yields the improper/unknown flag and no constant.
inline TabulatedDensity normalize(const TabulatedDensity& din) {
    din.validate();
    TabulatedDensity d = din;
    const Eigen::Index n = d.size();
    constexpr double neg_inf = -std::numeric_limits<double>::infinity();

    std::vector<double> pieces;
    for (Eigen::Index i = 0; i + 1 < n; ++i) {
        const double ta = std::log(d.theta_grid(i)), tb = std::log(d.theta_grid(i + 1));
        const double ga = d.log_values(i) + ta, gb = d.log_values(i + 1) + tb;  // log of f*theta
        if (ga == neg_inf && gb == neg_inf) continue;
        pieces.push_back(gfref::detail::logsumexp({ga, gb}) + std::log(0.5 * (tb - ta)));
    }
    if (pieces.empty()) throw validation_error("normalize: density vanishes on the whole grid");
    const double log_main = gfref::detail::logsumexp(pieces);

    double log_up = neg_inf, log_lo = neg_inf;
    if (detail::spans_two_decades(d)) {
        const double th_hi = d.theta_grid(n - 1), th_lo = d.theta_grid(0);
        const auto diag = tail_diagnostic(din);
        d.quad.upper_slope = diag.slope;
        if (d.log_values(n - 1) != neg_inf) {
            if (diag.verdict != Propriety::proper) {
                d.propriety = diag.verdict == Propriety::improper ? Propriety::improper : Propriety::unknown;
                return d;  // no normalizing constant
            }
            if (std::isfinite(diag.slope))
                log_up = d.log_values(n - 1) + std::log(th_hi) - std::log(-1.0 - diag.slope);
        }
        const auto odiag = origin_diagnostic(din);
        d.quad.lower_slope = odiag.slope;
        if (d.log_values(0) != neg_inf && odiag.points_used >= 3) {
            if (odiag.verdict == Propriety::improper) {
                d.propriety = Propriety::improper;  // divergent at the origin
                return d;
            }
            if (odiag.verdict == Propriety::inconclusive) {
                d.propriety = Propriety::unknown;
                return d;
            }
            // analytic correction only when the power-law shape was credible;
            // a bounded non-power-law boundary decade contributes no mass
            const auto lofit =
                detail::fit_log_slope(d.theta_grid, d.log_values, th_lo, 10.0 * th_lo);
            if (lofit.rms <= kSlopeFitRmsTol && lofit.slope > -1.0 + kTailSlopeMargin)
                log_lo = d.log_values(0) + std::log(th_lo) - std::log(1.0 + lofit.slope);
        }
    }

    const double log_C = gfref::detail::logsumexp({log_main, log_up, log_lo});
    d.log_C = log_C;
    d.log_values.array() -= log_C;
    for (Eigen::Index i = 0; i < n; ++i) d.values(i) = std::exp(d.log_values(i));
    d.normalized = true;
    d.propriety = Propriety::proper;
    d.quad.upper_tail_mass = std::exp(log_up - log_C);
    d.quad.lower_tail_mass = std::exp(log_lo - log_C);
    return d;
}

namespace detail {

inline void json_number(std::ostream& os, double v) {
    if (std::isfinite(v)) {
        const auto prec = os.precision(17);
        os << v;
        os.precision(prec);
    } else {
        os << "null";
    }
}

}  // namespace detail

// CSV with one row per grid point. Log densities may be -inf; the literal
// "-inf" is written and accepted back by the CLI loader.
inline void to_csv(const TabulatedDensity& d, std::ostream& os) {
    const auto prec = os.precision(17);
    os << "theta,density,log_density\n";
    for (Eigen::Index i = 0; i < d.size(); ++i)
        os << d.theta_grid(i) << ',' << d.values(i) << ',' << d.log_values(i) << '\n';
    os.precision(prec);
}

// Metadata summary as a small JSON object (the array payload lives in CSV).
inline void to_json(const TabulatedDensity& d, std::ostream& os) {
    os << "{\"n\":" << d.size() << ",\"theta_min\":";
    detail::json_number(os, d.theta_grid(0));
    os << ",\"theta_max\":";
    detail::json_number(os, d.theta_grid(d.size() - 1));
    os << ",\"normalized\":" << (d.normalized ? "true" : "false") << ",\"log_normalizing_constant\":";
    detail::json_number(os, d.log_C);
    os << ",\"propriety\":\"" << to_string(d.propriety) << "\"";
    os << ",\"quadrature\":{\"rule\":\"" << d.quad.rule << "\",\"tolerance\":";
    detail::json_number(os, d.quad.tolerance);
    os << ",\"theta_lo\":";
    detail::json_number(os, d.quad.theta_lo);
    os << ",\"theta_hi\":";
    detail::json_number(os, d.quad.theta_hi);
    os << ",\"lower_slope\":";
    detail::json_number(os, d.quad.lower_slope);
    os << ",\"upper_slope\":";
    detail::json_number(os, d.quad.upper_slope);
    os << ",\"lower_tail_mass\":";
    detail::json_number(os, d.quad.lower_tail_mass);
    os << ",\"upper_tail_mass\":";
    detail::json_number(os, d.quad.upper_tail_mass);
    os << "}}";
}

// ---------------------------------------------------------------------------
// Exact reference prior
// ---------------------------------------------------------------------------

struct ContrastProjector {
    Eigen::MatrixXd W;  // n x (n-p); W'W = I, X'W = 0
};

inline ContrastProjector build_contrast_projector(const SpatialDesign& design) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(design.X, Eigen::ComputeFullU);
    const auto n = design.n(), p = design.p();
    const auto& sv = svd.singularValues();
    if (!(sv(p - 1) > static_cast<double>(n) * 1e-13 * sv(0)))
        throw validation_error("build_contrast_projector: design matrix is rank deficient");
    return {svd.matrixU().rightCols(n - p)};
}

enum class ExactRep { a, b };

namespace detail {

inline double ref_prior_from_traces(double t1, double t2, double dof) {
    const double v = t2 - t1 * t1 / dof;
    return v > 0.0 ? std::sqrt(v) : 0.0;
}

// Cholesky with a hard conditioning guard: no jitter, the failure names theta.
inline Eigen::LLT<Eigen::MatrixXd> guarded_chol(const Eigen::MatrixXd& S, double theta,
                                                const char* ctx) {
    Eigen::LLT<Eigen::MatrixXd> llt(S);
    if (llt.info() != Eigen::Success)
        throw numerical_error(std::string(ctx) + ": covariance Cholesky failed at theta=" +
                              std::to_string(theta));
    const auto diag = llt.matrixLLT().diagonal();
    const double dmin = diag.minCoeff(), dmax = diag.maxCoeff();
    if (!(dmin > 0.0) || (dmin / dmax) * (dmin / dmax) < 1e-14)
        throw numerical_error(std::string(ctx) +
                              ": covariance nearly singular (reciprocal condition estimate below "
                              "1e-14) at theta=" +
                              std::to_string(theta));
    return llt;
}

inline void check_theta(double theta, const char* ctx) {
    if (!(theta > 0.0) || !std::isfinite(theta))
        throw validation_error(std::string(ctx) + ": theta must be positive and finite");
}

}  // namespace detail

// Full-data representation: spectral-free trace form built from K = P M P with
// M = L^-1 (dSigma/dtheta) L^-T and P the projector orthogonal to L^-1 X.
inline double exact_ref_prior_full(double theta, const SpatialDesign& design, double nu) {
    detail::check_theta(theta, "exact_ref_prior");
    const MaternParams pm{1.0, theta, nu};
    const Eigen::MatrixXd Sigma = matern_corr_matrix(design.locations, pm);
    const Eigen::MatrixXd dSigma = matern_dcorr_matrix(design.locations, pm);
    const auto llt = detail::guarded_chol(Sigma, theta, "exact_ref_prior");
    const Eigen::MatrixXd L = llt.matrixL();
    const auto tri = L.triangularView<Eigen::Lower>();

    Eigen::MatrixXd Mm = tri.solve(dSigma);
    Mm = tri.solve(Eigen::MatrixXd(Mm.transpose()));
    Mm = ((Mm + Mm.transpose()) / 2.0).eval();

    const Eigen::MatrixXd B = tri.solve(design.X);
    const auto p = design.p();
    Eigen::LLT<Eigen::MatrixXd> lltS((B.transpose() * B).eval());
    if (lltS.info() != Eigen::Success)
        throw numerical_error("exact_ref_prior: X'Sigma^-1 X not positive definite at theta=" +
                              std::to_string(theta));
    const Eigen::MatrixXd F = lltS.solve(Eigen::MatrixXd::Identity(p, p));
    const Eigen::MatrixXd E = Mm * B;
    const Eigen::MatrixXd G = B.transpose() * E;
    const Eigen::MatrixXd K = Mm - E * F * B.transpose() - B * F * E.transpose() +
                              B * (F * G * F) * B.transpose();
    return detail::ref_prior_from_traces(K.trace(), K.squaredNorm(),
                                         static_cast<double>(design.n() - p));
}

// Error-contrast representation with a caller-supplied projector.
inline double exact_ref_prior_contrast(double theta, const SpatialDesign& design, double nu,
                                       const ContrastProjector& proj) {
    detail::check_theta(theta, "exact_ref_prior");
    if (proj.W.rows() != design.n() || proj.W.cols() != design.n() - design.p())
        throw validation_error("exact_ref_prior: projector shape does not match the design");
    const MaternParams pm{1.0, theta, nu};
    const Eigen::MatrixXd Sigma = matern_corr_matrix(design.locations, pm);
    const Eigen::MatrixXd dSigma = matern_dcorr_matrix(design.locations, pm);
    const Eigen::MatrixXd SW = proj.W.transpose() * Sigma * proj.W;
    const Eigen::MatrixXd dSW = proj.W.transpose() * dSigma * proj.W;
    const auto llt = detail::guarded_chol(SW, theta, "exact_ref_prior");
    const Eigen::MatrixXd L = llt.matrixL();
    const auto tri = L.triangularView<Eigen::Lower>();
    Eigen::MatrixXd A = tri.solve(dSW);
    A = tri.solve(Eigen::MatrixXd(A.transpose()));
    A = ((A + A.transpose()) / 2.0).eval();
    return detail::ref_prior_from_traces(A.trace(), A.squaredNorm(),
                                         static_cast<double>(design.n() - design.p()));
}

inline double exact_ref_prior(double theta, const SpatialDesign& design, double nu,
                              ExactRep rep = ExactRep::a) {
    if (rep == ExactRep::a) return exact_ref_prior_full(theta, design, nu);
    return exact_ref_prior_contrast(theta, design, nu, build_contrast_projector(design));
}

// ---------------------------------------------------------------------------
// Approximate (spectral) reference prior
// ---------------------------------------------------------------------------

namespace detail {

// d/dtheta log f~ at the distinct frequencies, C block then I block, matching
// distinct_aliased ordering.
template <typename Model>
Eigen::VectorXd distinct_dlog(const SpectralDesign& spectral, const Model& model, double theta,
                              const AliasConfig& alias) {
    const auto I = spectral.index_I();
    Eigen::VectorXd g(4 + I.size());
    for (std::size_t c = 0; c < 4; ++c) {
        const auto w = spectral.freq(spectral.index_C[c]);
        if constexpr (std::is_same_v<Model, SpectralFamily>)
            g(static_cast<Eigen::Index>(c)) = dlog_aliased_specden(w(0), w(1), model, theta, alias);
        else
            g(static_cast<Eigen::Index>(c)) = dlog_aliased_specden(w(0), w(1), model, alias);
    }
    for (std::size_t c = 0; c < I.size(); ++c) {
        const auto w = spectral.freq(I[c]);
        if constexpr (std::is_same_v<Model, SpectralFamily>)
            g(static_cast<Eigen::Index>(4 + c)) = dlog_aliased_specden(w(0), w(1), model, theta, alias);
        else
            g(static_cast<Eigen::Index>(4 + c)) = dlog_aliased_specden(w(0), w(1), model, alias);
    }
    return g;
}

// Centered two-pass sample-variance form over the M-1 non-origin layout
// entries (origin is the first C entry; each I entry appears twice). The
// centering absorbs the common O(1/theta) level of the log-derivatives, which
// otherwise wipes out the O(theta^-3) spread in the far tail.
inline double const_prior_from_gamma(const Eigen::VectorXd& g) {
    const Eigen::Index nI = g.size() - 4;
    const double count = 3.0 + 2.0 * static_cast<double>(nI);
    const double mean = (g.segment(1, 3).sum() + 2.0 * g.tail(nI).sum()) / count;
    const double ss = (g.segment(1, 3).array() - mean).square().sum() +
                      2.0 * (g.tail(nI).array() - mean).square().sum();
    return std::sqrt(ss);
}

}  // namespace detail

// Constant-mean (matrix-free) approximate reference prior. `params` supplies
// the smoothness; the range is the evaluation point `theta`.
inline double approx_ref_prior_const(double theta, const SpectralDesign& spectral,
                                     const MaternParams& params, const AliasConfig& alias) {
    detail::check_theta(theta, "approx_ref_prior_const");
    detail::check_alias_delta(spectral, alias);
    const MaternParams pt{params.sigma2, theta, params.nu};
    return detail::const_prior_from_gamma(detail::distinct_dlog(spectral, pt, theta, alias));
}

inline double approx_ref_prior_const(double theta, const SpectralDesign& spectral,
                                     const SpectralFamily& family, const AliasConfig& alias) {
    detail::check_theta(theta, "approx_ref_prior_const");
    detail::check_alias_delta(spectral, alias);
    return detail::const_prior_from_gamma(detail::distinct_dlog(spectral, family, theta, alias));
}

namespace detail {

inline double general_prior_core(const SpectralBasis& basis, Eigen::VectorXd gamma,
                                 const Eigen::VectorXd& lambda, double theta) {
    const auto& X1 = basis.X1;
    const Eigen::Index M = X1.rows(), p = X1.cols();
    // center: the trace functional is invariant, the arithmetic is not
    gamma.array() -= gamma.mean();
    const Eigen::ArrayXd invl = lambda.array().inverse();
    const Eigen::MatrixXd S = X1.transpose() * (X1.array().colwise() * invl).matrix();
    const Eigen::MatrixXd Sg =
        X1.transpose() * (X1.array().colwise() * (invl * gamma.array())).matrix();
    const Eigen::MatrixXd Sg2 =
        X1.transpose() * (X1.array().colwise() * (invl * gamma.array().square())).matrix();
    Eigen::LLT<Eigen::MatrixXd> llt(S);
    if (llt.info() != Eigen::Success)
        throw numerical_error("approx_ref_prior_general: X1' Lambda^-1 X1 not positive definite at theta=" +
                              std::to_string(theta));
    const Eigen::MatrixXd A = llt.solve(Sg);
    const Eigen::MatrixXd A2 = llt.solve(Sg2);
    const double t1 = gamma.sum() - A.trace();
    const double t2 = gamma.array().square().sum() - 2.0 * A2.trace() + (A * A).trace();
    return ref_prior_from_traces(t1, t2, static_cast<double>(M - p));
}

inline Eigen::VectorXd expand_to_layout(const Eigen::VectorXd& distinct) {
    const Eigen::Index nI = distinct.size() - 4;
    Eigen::VectorXd full(4 + 2 * nI);
    full.head(4) = distinct.head(4);
    full.segment(4, nI) = distinct.tail(nI);
    full.tail(nI) = distinct.tail(nI);
    return full;
}

}  // namespace detail

// General-mean approximate reference prior: the diagonal-spectrum trace
// formula, inverting only the p x p matrix X1' Lambda^-1 X1.
inline double approx_ref_prior_general(double theta, const SpectralBasis& basis,
                                       const MaternParams& params, const AliasConfig& alias) {
    detail::check_theta(theta, "approx_ref_prior_general");
    if (!basis.has_X1())
        throw validation_error("approx_ref_prior_general: basis has no X1 (call build_X1 first)");
    const MaternParams pt{params.sigma2, theta, params.nu};
    const DiagonalSpectrum lt = lambda_tilde(basis.spectral, pt, alias);
    if (!(lt.lambda.array() > 0.0).all())
        throw numerical_error("approx_ref_prior_general: spectrum not positive at theta=" +
                              std::to_string(theta));
    const Eigen::VectorXd gamma =
        detail::expand_to_layout(detail::distinct_dlog(basis.spectral, pt, theta, alias));
    return detail::general_prior_core(basis, gamma, lt.lambda, theta);
}

}  // namespace gfref
