#pragma once

// Posterior machinery for the range parameter and its companions: the factored
// posterior (beta | sigma2, theta) x (sigma2 | theta) x (theta | data), a cached
// tabulation of the theta marginal with the conjugate ingredients splined along
// the grid, an exact ratio-of-uniforms sampler, HPD intervals, posterior
// summaries with CSV/JSON serialization, and the integrated likelihood of the
// smoothness parameter.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "gfref/covmodel.hpp"
#include "gfref/designs.hpp"
#include "gfref/detail/interp.hpp"
#include "gfref/detail/optimize.hpp"
#include "gfref/detail/rng.hpp"
#include "gfref/detail/stats.hpp"
#include "gfref/errors.hpp"
#include "gfref/likelihoods.hpp"
#include "gfref/priors.hpp"
#include "gfref/spectral_basis.hpp"

namespace gfref {

enum class PriorKind { exact_ref, approx_ref, inverse_gamma, custom };

inline const char* to_string(PriorKind k) {
    switch (k) {
        case PriorKind::exact_ref: return "exact-ref";
        case PriorKind::approx_ref: return "approx-ref";
        case PriorKind::inverse_gamma: return "inverse-gamma";
        default: return "custom";
    }
}

// Log density of InverseGamma(shape, rate) at x: rate^shape / Gamma(shape) *
// x^-(shape+1) exp(-rate/x).  The default objective baseline uses
// (0.5, sqrt(2)/100).
inline double log_inverse_gamma_density(double x, double shape, double rate) {
    if (!(x > 0.0) || !std::isfinite(x))
        throw validation_error("log_inverse_gamma_density: x must be positive");
    if (!(shape > 0.0) || !(rate > 0.0))
        throw validation_error("log_inverse_gamma_density: shape and rate must be positive");
    return shape * std::log(rate) - std::lgamma(shape) - (shape + 1.0) * std::log(x) - rate / x;
}

namespace detail {

// Prior log density extended beyond the tabulation by the least-squares
// log-log slope of the boundary decade (falling back to the interpolant's own
// boundary-slope extension when the decade holds too few usable points).
inline double prior_log_extended(const TabulatedDensity& prior, double theta, bool* extrapolated) {
    const double lo = prior.theta_grid(0);
    const double hi = prior.theta_grid(prior.size() - 1);
    if (theta >= lo && theta <= hi) {
        if (extrapolated) *extrapolated = false;
        return prior.log_value_at(theta);
    }
    if (extrapolated) *extrapolated = true;
    const bool below = theta < lo;
    const auto fit = below ? fit_log_slope(prior.theta_grid, prior.log_values, lo, 10.0 * lo)
                           : fit_log_slope(prior.theta_grid, prior.log_values, hi / 10.0, hi);
    const double anchor = below ? prior.log_values(0) : prior.log_values(prior.size() - 1);
    if (fit.points >= 3 && std::isfinite(fit.slope) && std::isfinite(anchor))
        return anchor + fit.slope * (std::log(theta) - std::log(below ? lo : hi));
    return prior.log_value_at(theta);
}

}  // namespace detail

struct LogPosteriorValue {
    double value = 0.0;
    bool prior_extrapolated = false;  // theta fell outside the prior tabulation
};

// Unnormalized log posterior of the range: log prior plus the integrated log
// likelihood (mean and variance already integrated out).
inline LogPosteriorValue marginal_post_theta(double theta, const DataVector& data, double nu,
                                             const TabulatedDensity& prior) {
    detail::check_theta(theta, "marginal_post_theta");
    prior.validate();
    LogPosteriorValue out;
    out.value = detail::prior_log_extended(prior, theta, &out.prior_extrapolated) +
                integrated_loglik_theta(theta, data, nu);
    return out;
}

// The conjugate pieces of the posterior at a fixed range: residual quadratic
// form, GLS coefficients, and the Cholesky factor of their unscaled covariance.
struct ConditionalGaussian {
    double s2 = 0.0;
    Eigen::VectorXd beta_hat;
    Eigen::MatrixXd cov_chol;  // lower factor of (X' Sigma^-1 X)^-1
};

// ---------------------------------------------------------------------------
// Cached marginal posterior of the range
// ---------------------------------------------------------------------------

// Tabulation of the unnormalized log posterior on the prior grid, trimmed to
// the contiguous block where both the prior is positive and the likelihood is
// evaluable.  The conjugate ingredients are splined against log theta so a
// sampler never refactors the data covariance.
struct MarginalPosterior {
    Eigen::VectorXd theta_grid;  // the full prior grid
    Eigen::VectorXd log_prior, log_lik, log_post;  // -inf marks dead/failed points
    double theta_lo = 0.0, theta_hi = 0.0;  // usable contiguous support
    double mode_theta = 0.0;       // parabolic-refined maximizer of the tabulation
    double log_post_mode = 0.0;    // sup of the cached log posterior
    double log_norm = std::numeric_limits<double>::quiet_NaN();  // log integral over the support
    Propriety propriety = Propriety::unknown;
    double lower_slope = std::numeric_limits<double>::quiet_NaN();
    double upper_slope = std::numeric_limits<double>::quiet_NaN();
    int failed_evaluations = 0;  // grid points where the likelihood was unevaluable
    double nu = 0.5;
    Eigen::Index n_data = 0, n_covariates = 0;
    TabulatedDensity prior;  // retained for exact re-evaluation

    detail::PchipSpline post_spline;    // log posterior vs log theta
    detail::PchipSpline log_s2_spline;  // log S2 vs log theta
    std::vector<detail::PchipSpline> beta_splines;      // one per coefficient
    std::vector<detail::PchipSpline> cov_chol_splines;  // packed lower triangle; diagonal in log

    // Splined unnormalized log posterior; -inf outside the usable support.
    double log_value(double theta) const {
        if (!(theta > 0.0) || !std::isfinite(theta))
            throw validation_error("MarginalPosterior: theta must be positive");
        if (theta < theta_lo || theta > theta_hi) return -std::numeric_limits<double>::infinity();
        return post_spline(std::log(theta));
    }

    // Density normalized by quadrature over the usable support.
    double normalized_log_density(double theta) const { return log_value(theta) - log_norm; }

    ConditionalGaussian conditionals_at(double theta) const {
        if (!(theta >= theta_lo && theta <= theta_hi))
            throw validation_error("MarginalPosterior: theta outside the cached support");
        const double lx = std::log(theta);
        ConditionalGaussian c;
        c.s2 = std::exp(log_s2_spline(lx));
        const auto p = n_covariates;
        c.beta_hat.resize(p);
        for (Eigen::Index j = 0; j < p; ++j)
            c.beta_hat(j) = beta_splines[static_cast<std::size_t>(j)](lx);
        c.cov_chol = Eigen::MatrixXd::Zero(p, p);
        std::size_t k = 0;
        for (Eigen::Index r = 0; r < p; ++r)
            for (Eigen::Index s = 0; s <= r; ++s, ++k) {
                const double v = cov_chol_splines[k](lx);
                c.cov_chol(r, s) = r == s ? std::exp(v) : v;
            }
        return c;
    }
};

namespace detail {

// Vertex of the parabola through three tabulated points around the best knot;
// the knot itself at edges or under degenerate curvature.
inline double refine_mode(const Eigen::VectorXd& x, const Eigen::VectorXd& y, Eigen::Index b) {
    if (b <= 0 || b + 1 >= x.size()) return x(b);
    const double dl = x(b) - x(b - 1), dr = x(b + 1) - x(b);
    const double al = y(b - 1) - y(b), ar = y(b + 1) - y(b);  // both <= 0 at a strict max
    const double denom = al * dr + ar * dl;
    if (!(denom < 0.0)) return x(b);
    const double step = 0.5 * (al * dr * dr - ar * dl * dl) / denom;
    return std::clamp(x(b) + step, x(b - 1), x(b + 1));
}

// Trapezoid log integral of exp(logv) against theta, written in log theta.
inline double log_trapezoid_mass(const Eigen::VectorXd& theta, const Eigen::VectorXd& logv) {
    constexpr double neg_inf = -std::numeric_limits<double>::infinity();
    std::vector<double> pieces;
    for (Eigen::Index i = 0; i + 1 < theta.size(); ++i) {
        const double ta = std::log(theta(i)), tb = std::log(theta(i + 1));
        const double ga = logv(i) + ta, gb = logv(i + 1) + tb;
        if (ga == neg_inf && gb == neg_inf) continue;
        pieces.push_back(logsumexp({ga, gb}) + std::log(0.5 * (tb - ta)));
    }
    if (pieces.empty()) return neg_inf;
    return logsumexp(pieces);
}

}  // namespace detail

inline MarginalPosterior build_marginal_posterior(const DataVector& data, double nu,
                                                  const TabulatedDensity& prior) {
    data.validate();
    prior.validate();
    if (!(nu > 0.0) || !std::isfinite(nu))
        throw validation_error("build_marginal_posterior: nu must be positive");
    constexpr double neg_inf = -std::numeric_limits<double>::infinity();

    MarginalPosterior m;
    m.theta_grid = prior.theta_grid;
    m.log_prior = prior.log_values;
    m.nu = nu;
    m.n_data = data.n();
    m.n_covariates = data.p();
    m.prior = prior;

    const Eigen::Index g = m.theta_grid.size(), p = data.p();
    const double k = 0.5 * static_cast<double>(data.n() - p);
    m.log_lik.setConstant(g, neg_inf);
    m.log_post.setConstant(g, neg_inf);
    Eigen::MatrixXd betas(g, p);
    Eigen::MatrixXd chols(g, p * (p + 1) / 2);
    Eigen::VectorXd log_s2(g);
    std::vector<char> ok(static_cast<std::size_t>(g), 0);

    for (Eigen::Index j = 0; j < g; ++j) {
        if (m.log_prior(j) == neg_inf) continue;  // dead by prior: skip the factorization
        GlsQuantities q;
        try {
            q = gls_quantities(m.theta_grid(j), data, nu);
        } catch (const numerical_error&) {
            ++m.failed_evaluations;
            continue;
        }
        if (!(q.s2 > 0.0)) {
            ++m.failed_evaluations;
            continue;
        }
        const Eigen::MatrixXd cov = 0.5 * (q.beta_cov_unscaled + q.beta_cov_unscaled.transpose());
        Eigen::LLT<Eigen::MatrixXd> llt(cov);
        if (llt.info() != Eigen::Success) {
            ++m.failed_evaluations;
            continue;
        }
        m.log_lik(j) = -0.5 * q.log_det_sigma - 0.5 * q.log_det_xsx - k * std::log(q.s2);
        m.log_post(j) = m.log_prior(j) + m.log_lik(j);
        log_s2(j) = std::log(q.s2);
        betas.row(j) = q.beta_hat.transpose();
        const Eigen::MatrixXd L = llt.matrixL();
        std::size_t c = 0;
        for (Eigen::Index r = 0; r < p; ++r)
            for (Eigen::Index s = 0; s <= r; ++s, ++c)
                chols(j, static_cast<Eigen::Index>(c)) = r == s ? std::log(L(r, r)) : L(r, s);
        ok[static_cast<std::size_t>(j)] = 1;
    }

    Eigen::Index best = -1;
    for (Eigen::Index j = 0; j < g; ++j)
        if (std::isfinite(m.log_post(j)) && (best < 0 || m.log_post(j) > m.log_post(best))) best = j;
    if (best < 0)
        throw numerical_error("build_marginal_posterior: posterior vanishes on the whole grid");
    Eigen::Index r0 = best, r1 = best;
    while (r0 > 0 && ok[static_cast<std::size_t>(r0 - 1)] && std::isfinite(m.log_post(r0 - 1))) --r0;
    while (r1 + 1 < g && ok[static_cast<std::size_t>(r1 + 1)] && std::isfinite(m.log_post(r1 + 1)))
        ++r1;
    const Eigen::Index run = r1 - r0 + 1;
    if (run < 4)
        throw numerical_error("build_marginal_posterior: fewer than four usable grid points around "
                              "the posterior maximum");
    m.theta_lo = m.theta_grid(r0);
    m.theta_hi = m.theta_grid(r1);

    std::vector<double> xs(static_cast<std::size_t>(run));
    for (Eigen::Index j = 0; j < run; ++j)
        xs[static_cast<std::size_t>(j)] = std::log(m.theta_grid(r0 + j));
    auto column_spline = [&](auto&& value_at) {
        std::vector<double> ys(static_cast<std::size_t>(run));
        for (Eigen::Index j = 0; j < run; ++j) ys[static_cast<std::size_t>(j)] = value_at(r0 + j);
        return detail::PchipSpline(xs, std::move(ys));
    };
    m.post_spline = column_spline([&](Eigen::Index j) { return m.log_post(j); });
    m.log_s2_spline = column_spline([&](Eigen::Index j) { return log_s2(j); });
    m.beta_splines.reserve(static_cast<std::size_t>(p));
    for (Eigen::Index c = 0; c < p; ++c)
        m.beta_splines.push_back(column_spline([&](Eigen::Index j) { return betas(j, c); }));
    m.cov_chol_splines.reserve(static_cast<std::size_t>(p * (p + 1) / 2));
    for (Eigen::Index c = 0; c < p * (p + 1) / 2; ++c)
        m.cov_chol_splines.push_back(column_spline([&](Eigen::Index j) { return chols(j, c); }));

    const Eigen::VectorXd run_theta = m.theta_grid.segment(r0, run);
    const Eigen::VectorXd run_logp = m.log_post.segment(r0, run);
    Eigen::VectorXd run_logx(run);
    for (Eigen::Index j = 0; j < run; ++j) run_logx(j) = std::log(run_theta(j));
    m.log_post_mode = run_logp.maxCoeff();
    m.mode_theta = std::exp(detail::refine_mode(run_logx, run_logp, best - r0));
    m.log_norm = detail::log_trapezoid_mass(run_theta, run_logp);

    // Propriety: a normalized (certified integrable) prior times the bounded
    // integrated likelihood is integrable; otherwise fall back to tail
    // diagnostics of the tabulated posterior.  A support narrower than two
    // decades is treated as compact, matching the prior-normalization rule.
    TabulatedDensity post_td;
    post_td.theta_grid = run_theta;
    post_td.log_values = run_logp.array() - m.log_post_mode;
    post_td.values = post_td.log_values.array().exp();
    const auto updiag = tail_diagnostic(post_td);
    const auto lodiag = origin_diagnostic(post_td);
    m.upper_slope = updiag.slope;
    m.lower_slope = lodiag.slope;
    if (prior.propriety == Propriety::proper) {
        m.propriety = Propriety::proper;
    } else if (!detail::spans_two_decades(post_td)) {
        m.propriety = Propriety::proper;
    } else {
        const Propriety lower = lodiag.points_used >= 3 ? lodiag.verdict : Propriety::proper;
        if (updiag.verdict == Propriety::improper || lower == Propriety::improper)
            m.propriety = Propriety::improper;
        else if (updiag.verdict == Propriety::proper && lower == Propriety::proper)
            m.propriety = Propriety::proper;
        else
            m.propriety = Propriety::unknown;
    }
    return m;
}

// ---------------------------------------------------------------------------
// Posterior sampling
// ---------------------------------------------------------------------------

struct PosteriorDraws {
    Eigen::MatrixXd beta;  // one row per draw
    Eigen::VectorXd sigma2;
    Eigen::VectorXd theta;
    std::uint64_t seed = 0;
    double acceptance_rate = std::numeric_limits<double>::quiet_NaN();
    PriorKind prior = PriorKind::custom;

    Eigen::Index n_draws() const { return theta.size(); }
    Eigen::Index p() const { return beta.cols(); }

    void validate() const {
        if (theta.size() < 1) throw validation_error("PosteriorDraws: empty");
        if (sigma2.size() != theta.size() || beta.rows() != theta.size())
            throw validation_error("PosteriorDraws: component lengths disagree");
        if (!beta.allFinite()) throw validation_error("PosteriorDraws: non-finite coefficient draw");
        for (Eigen::Index i = 0; i < theta.size(); ++i) {
            if (!(sigma2(i) > 0.0) || !std::isfinite(sigma2(i)))
                throw validation_error("PosteriorDraws: sigma2 draws must be positive");
            if (!(theta(i) > 0.0) || !std::isfinite(theta(i)))
                throw validation_error("PosteriorDraws: theta draws must be positive");
        }
    }
};

struct SampleOptions {
    bool exact_marginal = false;          // recompute the likelihood at every proposal
    int max_proposals_per_draw = 200000;  // rejection-loop guard
};

namespace detail {

struct RouBox {
    double v_lo = 0.0, v_hi = 0.0;  // u ranges over (0, 1] after mode normalization
};

// Ratio-of-uniforms bounding box for exponent r, relocated to the mode: v
// bounds are sups of (x - mode) h(x)^(r/(1+r)) on each side, found on a log
// offset axis and widened 1% against scan misses (a larger box only rejects).
inline RouBox rou_box(const std::function<double(double)>& log_h, double mode, double log_h_mode,
                      double lo, double hi, double r, int scan_points) {
    const double power = r / (1.0 + r);
    auto side = [&](double width, double sign) -> double {
        if (!(width > 0.0)) return 0.0;
        const double ls_hi = std::log(width);
        const auto best = golden_max(
            [&](double ls) {
                const double x = mode + sign * std::exp(ls);
                const double lh = log_h(x);
                if (lh == -HUGE_VAL) return -HUGE_VAL;
                return ls + (lh - log_h_mode) * power;
            },
            ls_hi - 28.0, ls_hi, 1e-9, scan_points);
        return std::isfinite(best.value) ? std::exp(best.value) : 0.0;
    };
    RouBox box;
    box.v_hi = 1.01 * side(hi - mode, 1.0);
    box.v_lo = -1.01 * side(mode - lo, -1.0);
    return box;
}

// Exponent of the generalized ratio-of-uniforms transform.  r = 1/2 is the
// classical choice and is kept whenever the cached posterior tail decays at
// least as fast as theta^-3.  For heavier tails the box side
// sup (theta - mode) h^(r/(1+r)) keeps growing with the support's truncation
// point, collapsing the acceptance rate, so r is raised until the tail
// contribution is non-increasing: r >= 1/(s - 1) for a theta^-s tail.
inline double rou_exponent(double upper_slope) {
    const double s = -upper_slope;  // decay rate of the cached upper tail
    if (!std::isfinite(s) || s >= 3.0) return 0.5;
    return std::min(4.0, 1.0 / (std::max(s, 1.35) - 1.0));
}

inline ConditionalGaussian exact_conditionals(double theta, const DataVector& data, double nu) {
    const GlsQuantities q = gls_quantities(theta, data, nu);
    const Eigen::MatrixXd cov = 0.5 * (q.beta_cov_unscaled + q.beta_cov_unscaled.transpose());
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success)
        throw numerical_error("sample_posterior: coefficient covariance not positive definite "
                              "at theta=" +
                              std::to_string(theta));
    return {q.s2, q.beta_hat, llt.matrixL()};
}

}  // namespace detail

// Independent draws from the factored posterior: theta by generalized
// ratio-of-uniforms (mode-relocated, exponent adapted to the cached tail
// slope) against the cached marginal, then conjugate draws of sigma2 and
// beta.  Draw k consumes its own RNG substream, so output is reproducible
// and parallelizable over draws.
inline PosteriorDraws sample_posterior(const MarginalPosterior& marg, const DataVector& data,
                                       PriorKind kind, int n_draws, std::uint64_t seed,
                                       const SampleOptions& opts = {}) {
    if (n_draws < 1) throw validation_error("sample_posterior: need at least one draw");
    data.validate();
    if (marg.n_covariates != data.p() || marg.n_data != data.n())
        throw validation_error("sample_posterior: cached marginal does not match the data");
    if (marg.propriety != Propriety::proper) {
        const std::string what =
            marg.propriety == Propriety::improper ? "is improper" : "cannot be certified integrable";
        throw numerical_error("sample_posterior: the range posterior " + what +
                              " (boundary log-log slopes " + std::to_string(marg.lower_slope) + ", " +
                              std::to_string(marg.upper_slope) + "); refusing to sample");
    }

    std::function<double(double)> logpost;
    double mu = marg.mode_theta, m0 = marg.log_post_mode;
    int box_scan = 513;
    if (opts.exact_marginal) {
        logpost = [&marg, &data](double t) -> double {
            if (!(t > 0.0) || t < marg.theta_lo || t > marg.theta_hi) return -HUGE_VAL;
            try {
                return detail::prior_log_extended(marg.prior, t, nullptr) +
                       integrated_loglik_theta(t, data, marg.nu);
            } catch (const numerical_error&) {
                return -HUGE_VAL;
            }
        };
        const auto best = detail::golden_max(
            [&](double lx) { return logpost(std::exp(lx)); }, std::log(marg.theta_lo),
            std::log(marg.theta_hi), 1e-9, 161);
        if (!std::isfinite(best.value))
            throw numerical_error("sample_posterior: exact marginal not finite on the support");
        mu = std::exp(best.x);
        m0 = best.value;
        box_scan = 81;
    } else {
        logpost = [&marg](double t) {
            return t > 0.0 && std::isfinite(t) ? marg.log_value(t) : -HUGE_VAL;
        };
    }

    const double r = detail::rou_exponent(marg.upper_slope);
    const detail::RouBox box =
        detail::rou_box(logpost, mu, m0, marg.theta_lo, marg.theta_hi, r, box_scan);
    if (!std::isfinite(box.v_lo) || !std::isfinite(box.v_hi) || !(box.v_hi - box.v_lo > 0.0))
        throw numerical_error("sample_posterior: ratio-of-uniforms bounding box search failed "
                              "(v in [" +
                              std::to_string(box.v_lo) + ", " + std::to_string(box.v_hi) +
                              "], mode " + std::to_string(mu) + ")");

    const Eigen::Index p = data.p();
    const double shape = 0.5 * static_cast<double>(data.n() - p);
    PosteriorDraws out;
    out.beta.resize(n_draws, p);
    out.sigma2.resize(n_draws);
    out.theta.resize(n_draws);
    out.seed = seed;
    out.prior = kind;

    long long proposals = 0;
    for (int i = 0; i < n_draws; ++i) {
        detail::Rng rng(seed, static_cast<std::uint64_t>(i));
        double x = 0.0;
        int attempts = 0;
        while (true) {
            if (++attempts > opts.max_proposals_per_draw)
                throw numerical_error(
                    "sample_posterior: ratio-of-uniforms exceeded " +
                    std::to_string(opts.max_proposals_per_draw) + " proposals for draw " +
                    std::to_string(i) + " (box v in [" + std::to_string(box.v_lo) + ", " +
                    std::to_string(box.v_hi) + "], mode " + std::to_string(mu) + ")");
            const double u = rng.uniform();
            const double v = box.v_lo + (box.v_hi - box.v_lo) * rng.uniform();
            x = mu + v * std::pow(u, -r);
            if (!(x > 0.0) || !std::isfinite(x)) continue;
            const double dl = logpost(x) - m0;
            if (dl == -HUGE_VAL) continue;
            if ((1.0 + r) * std::log(u) <= dl) break;
        }
        proposals += attempts;
        out.theta(i) = x;
        const ConditionalGaussian c =
            opts.exact_marginal ? detail::exact_conditionals(x, data, marg.nu)
                                : marg.conditionals_at(x);
        out.sigma2(i) = rng.inverse_gamma(shape, 0.5 * c.s2);
        Eigen::VectorXd eps(p);
        for (Eigen::Index j = 0; j < p; ++j) eps(j) = rng.normal();
        out.beta.row(i) =
            (c.beta_hat + std::sqrt(out.sigma2(i)) * (c.cov_chol * eps)).transpose();
    }
    out.acceptance_rate = static_cast<double>(n_draws) / static_cast<double>(proposals);
    out.validate();
    return out;
}

inline PosteriorDraws sample_posterior(const DataVector& data, double nu,
                                       const TabulatedDensity& prior, PriorKind kind, int n_draws,
                                       std::uint64_t seed, const SampleOptions& opts = {}) {
    return sample_posterior(build_marginal_posterior(data, nu, prior), data, kind, n_draws, seed,
                            opts);
}

// ---------------------------------------------------------------------------
// HPD intervals and summaries
// ---------------------------------------------------------------------------

struct HpdInterval {
    double lower = 0.0;
    double upper = 0.0;
    double level = 0.0;
};

// Shortest window over the sorted draws containing ceil(level * n) of them.
inline HpdInterval hpd_interval(std::vector<double> draws, double level) {
    if (!(level > 0.0 && level < 1.0))
        throw validation_error("hpd_interval: level must be in (0,1)");
    if (draws.size() < 100) throw validation_error("hpd_interval: need at least 100 draws");
    std::sort(draws.begin(), draws.end());
    const std::size_t n = draws.size();
    std::size_t k = static_cast<std::size_t>(std::ceil(level * static_cast<double>(n)));
    k = std::clamp<std::size_t>(k, 2, n);
    std::size_t best = 0;
    for (std::size_t i = 0; i + k <= n; ++i)
        if (draws[i + k - 1] - draws[i] < draws[best + k - 1] - draws[best]) best = i;
    return {draws[best], draws[best + k - 1], level};
}

inline HpdInterval hpd_interval(const Eigen::VectorXd& draws, double level) {
    return hpd_interval(std::vector<double>(draws.data(), draws.data() + draws.size()), level);
}

struct ParamSummary {
    double mean = 0.0;
    double median = 0.0;
    HpdInterval hpd;
};

struct PosteriorSummary {
    std::vector<ParamSummary> beta;
    ParamSummary sigma2;
    ParamSummary theta;
    double theta_mode = std::numeric_limits<double>::quiet_NaN();  // quadrature maximizer
    double level = 0.95;
    double acceptance_rate = std::numeric_limits<double>::quiet_NaN();
    PriorKind prior = PriorKind::custom;
    Eigen::Index n_draws = 0;
    std::uint64_t seed = 0;
};

namespace detail {

inline ParamSummary summarize_column(const Eigen::VectorXd& v, double level) {
    std::vector<double> s(v.data(), v.data() + v.size());
    ParamSummary out;
    out.mean = mean(s);
    out.median = percentile(s, 0.5);
    out.hpd = hpd_interval(std::move(s), level);
    return out;
}

}  // namespace detail

// Point estimates follow the reporting convention: range by the maximizer of
// the quadrature-normalized marginal (passed in), variance by the posterior
// median, coefficients by the posterior mean.
inline PosteriorSummary summarize_posterior(const PosteriorDraws& draws, double theta_mode,
                                            double level = 0.95) {
    draws.validate();
    PosteriorSummary s;
    s.level = level;
    s.theta_mode = theta_mode;
    s.acceptance_rate = draws.acceptance_rate;
    s.prior = draws.prior;
    s.n_draws = draws.n_draws();
    s.seed = draws.seed;
    for (Eigen::Index j = 0; j < draws.p(); ++j)
        s.beta.push_back(detail::summarize_column(draws.beta.col(j), level));
    s.sigma2 = detail::summarize_column(draws.sigma2, level);
    s.theta = detail::summarize_column(draws.theta, level);
    return s;
}

inline void to_csv(const PosteriorDraws& d, std::ostream& os) {
    const auto prec = os.precision(17);
    for (Eigen::Index j = 0; j < d.p(); ++j) os << "beta_" << j + 1 << ',';
    os << "sigma2,theta\n";
    for (Eigen::Index i = 0; i < d.n_draws(); ++i) {
        for (Eigen::Index j = 0; j < d.p(); ++j) os << d.beta(i, j) << ',';
        os << d.sigma2(i) << ',' << d.theta(i) << '\n';
    }
    os.precision(prec);
}

namespace detail {

inline void json_param(std::ostream& os, const ParamSummary& s, const double* mode = nullptr) {
    os << "{\"mean\":";
    json_number(os, s.mean);
    os << ",\"median\":";
    json_number(os, s.median);
    if (mode) {
        os << ",\"mode\":";
        json_number(os, *mode);
    }
    os << ",\"hpd\":[";
    json_number(os, s.hpd.lower);
    os << ',';
    json_number(os, s.hpd.upper);
    os << "]}";
}

}  // namespace detail

inline void to_json(const PosteriorSummary& s, std::ostream& os) {
    os << "{\"prior\":\"" << to_string(s.prior) << "\",\"n_draws\":" << s.n_draws
       << ",\"seed\":" << s.seed << ",\"acceptance_rate\":";
    detail::json_number(os, s.acceptance_rate);
    os << ",\"level\":";
    detail::json_number(os, s.level);
    os << ",\"beta\":[";
    for (std::size_t j = 0; j < s.beta.size(); ++j) {
        if (j) os << ',';
        detail::json_param(os, s.beta[j]);
    }
    os << "],\"sigma2\":";
    detail::json_param(os, s.sigma2);
    os << ",\"theta\":";
    detail::json_param(os, s.theta, &s.theta_mode);
    os << '}';
}

// ---------------------------------------------------------------------------
// Integrated likelihood of the smoothness
// ---------------------------------------------------------------------------

struct SmoothnessScan {
    Eigen::VectorXd nu_grid;
    Eigen::VectorXd log_m;      // up to one common additive constant
    Eigen::VectorXd log_c;      // log normalization of the range prior at each nu
    std::vector<char> flagged;  // normalization not certified finite; excluded from the argmax
    Eigen::Index argmax = -1;
    double nu_hat = std::numeric_limits<double>::quiet_NaN();

    void validate() const {
        if (nu_grid.size() < 1) throw validation_error("SmoothnessScan: empty grid");
        if (log_m.size() != nu_grid.size() || log_c.size() != nu_grid.size() ||
            flagged.size() != static_cast<std::size_t>(nu_grid.size()))
            throw validation_error("SmoothnessScan: component lengths disagree");
        for (Eigen::Index i = 0; i < nu_grid.size(); ++i)
            if (!flagged[static_cast<std::size_t>(i)] &&
                (!std::isfinite(log_m(i)) || !std::isfinite(log_c(i))))
                throw validation_error("SmoothnessScan: non-finite value at an unflagged entry");
        if (!(argmax >= 0 && argmax < nu_grid.size()))
            throw validation_error("SmoothnessScan: invalid argmax");
    }
};

// m(z | nu) on a smoothness grid: for each nu, tabulate the spectral reference
// prior of the range, certify its normalization C(nu) is finite (decaying upper
// tail, integrable origin), then integrate prior times integrated likelihood by
// trapezoid quadrature in log theta, normalized by the prior mass.  Range
// values where the likelihood is unevaluable (conditioning failures far in the
// tail) contribute nothing.  A nu whose normalization cannot be certified is
// flagged and skipped; the scan continues.
inline SmoothnessScan integrated_lik_nu(const Eigen::VectorXd& nu_grid, const DataVector& data,
                                        const AliasConfig& alias, const SpectralDesign& spectral,
                                        int theta_points = 120) {
    if (nu_grid.size() < 1) throw validation_error("integrated_lik_nu: empty smoothness grid");
    for (Eigen::Index i = 0; i < nu_grid.size(); ++i) {
        if (!(nu_grid(i) > 0.0) || !std::isfinite(nu_grid(i)))
            throw validation_error("integrated_lik_nu: smoothness values must be positive");
        if (i > 0 && !(nu_grid(i) > nu_grid(i - 1)))
            throw validation_error("integrated_lik_nu: smoothness grid must be strictly increasing");
    }
    data.validate();
    if (theta_points < 8) throw validation_error("integrated_lik_nu: need at least 8 range points");
    constexpr double neg_inf = -std::numeric_limits<double>::infinity();
    const ThetaRange range = default_prior_range(data.design);

    SmoothnessScan scan;
    scan.nu_grid = nu_grid;
    scan.log_m.setConstant(nu_grid.size(), neg_inf);
    scan.log_c.setConstant(nu_grid.size(), neg_inf);
    scan.flagged.assign(static_cast<std::size_t>(nu_grid.size()), 0);
    for (Eigen::Index i = 0; i < nu_grid.size(); ++i) {
        const double nu = nu_grid(i);
        const TabulatedDensity prior = tabulate_density(
            [&](double t) {
                return approx_ref_prior_const(t, spectral, MaternParams{1.0, t, nu}, alias);
            },
            range.lo, range.hi, theta_points);
        const auto up = tail_diagnostic(prior);
        const auto lo = origin_diagnostic(prior);
        const double lc = detail::log_trapezoid_mass(prior.theta_grid, prior.log_values);
        if (up.verdict != Propriety::proper || lo.verdict != Propriety::proper ||
            !std::isfinite(lc)) {
            scan.flagged[static_cast<std::size_t>(i)] = 1;
            continue;
        }
        Eigen::VectorXd logv(theta_points);
        for (int j = 0; j < theta_points; ++j) {
            double ll;
            try {
                ll = integrated_loglik_theta(prior.theta_grid(j), data, nu);
            } catch (const numerical_error&) {
                ll = neg_inf;
            }
            logv(j) = prior.log_values(j) == neg_inf || ll == neg_inf
                          ? neg_inf
                          : prior.log_values(j) + ll;
        }
        const double lm = detail::log_trapezoid_mass(prior.theta_grid, logv);
        if (lm == neg_inf) {
            scan.flagged[static_cast<std::size_t>(i)] = 1;
            continue;
        }
        scan.log_c(i) = lc;
        scan.log_m(i) = lm - lc;
        if (scan.argmax < 0 || scan.log_m(i) > scan.log_m(scan.argmax)) scan.argmax = i;
    }
    if (scan.argmax < 0)
        throw numerical_error("integrated_lik_nu: no smoothness value admitted a finite "
                              "integrated likelihood");
    scan.nu_hat = scan.nu_grid(scan.argmax);
    scan.validate();
    return scan;
}

inline void to_csv(const SmoothnessScan& s, std::ostream& os) {
    const auto prec = os.precision(17);
    os << "nu,log_m,log_c,flagged\n";
    for (Eigen::Index i = 0; i < s.nu_grid.size(); ++i)
        os << s.nu_grid(i) << ',' << s.log_m(i) << ',' << s.log_c(i) << ','
           << (s.flagged[static_cast<std::size_t>(i)] ? 1 : 0) << '\n';
    os.precision(prec);
}

}  // namespace gfref
