#pragma once

// Monte Carlo machinery around the model: Cholesky simulation of Gaussian
// random fields on a fixed design, repeated-sampling experiments comparing the
// frequentist behaviour of credible and confidence intervals across priors,
// and empirical semivariograms with a least-squares Matern fit.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "gfref/bayes.hpp"
#include "gfref/covmodel.hpp"
#include "gfref/designs.hpp"
#include "gfref/detail/rng.hpp"
#include "gfref/errors.hpp"
#include "gfref/likelihoods.hpp"
#include "gfref/priors.hpp"

namespace gfref {

// ---------------------------------------------------------------------------
// Design helpers

// m1 x m2 lattice with the given spacing, row-major over the first coordinate.
inline Locations regular_grid_locations(int m1, int m2, double spacing, double x0 = 0.0,
                                        double y0 = 0.0) {
    if (m1 < 1 || m2 < 1) throw validation_error("regular_grid_locations: need positive dimensions");
    if (!(spacing > 0.0) || !std::isfinite(spacing))
        throw validation_error("regular_grid_locations: spacing must be positive");
    Locations locs(static_cast<Eigen::Index>(m1) * m2, 2);
    for (int i = 0; i < m1; ++i)
        for (int j = 0; j < m2; ++j)
            locs.row(static_cast<Eigen::Index>(i) * m2 + j) << x0 + i * spacing, y0 + j * spacing;
    return locs;
}

// Full quadratic surface in the coordinates: columns (1, x, y, x^2, xy, y^2).
inline Eigen::MatrixXd quadratic_trend_covariates(const Locations& locs) {
    Eigen::MatrixXd X(locs.rows(), 6);
    X.col(0).setOnes();
    X.col(1) = locs.col(0);
    X.col(2) = locs.col(1);
    X.col(3) = locs.col(0).array().square();
    X.col(4) = locs.col(0).array() * locs.col(1).array();
    X.col(5) = locs.col(1).array().square();
    return X;
}

inline SpatialDesign quadratic_trend_design(Locations locs) {
    Eigen::MatrixXd X = quadratic_trend_covariates(locs);
    return SpatialDesign{std::move(locs), std::move(X)};
}

// ---------------------------------------------------------------------------
// Field simulation

struct GrfParams {
    Eigen::VectorXd beta;  // regression coefficients, matching design.p()
    double sigma2 = 1.0;
    double theta = 1.0;
    double nu = 0.5;

    void validate() const {
        MaternParams{sigma2, theta, nu}.validate();
        if (beta.size() < 1) throw validation_error("GrfParams: beta must be nonempty");
        if (!beta.allFinite()) throw validation_error("GrfParams: beta must be finite");
    }
};

// Factors sigma2 * K_theta once so repeated draws cost one matrix-vector
// product; draws with the same (seed, stream) are identical.
struct FieldSimulator {
    SpatialDesign design;
    Eigen::VectorXd mean;   // X beta
    Eigen::MatrixXd chol;   // lower factor of sigma2 * K_theta

    Eigen::VectorXd draw(std::uint64_t seed, std::uint64_t stream) const {
        detail::Rng rng(seed, stream);
        Eigen::VectorXd eta(mean.size());
        for (Eigen::Index i = 0; i < eta.size(); ++i) eta(i) = rng.normal();
        const Eigen::VectorXd noise = chol.template triangularView<Eigen::Lower>() * eta;
        return mean + noise;
    }

    DataVector draw_data(std::uint64_t seed, std::uint64_t stream) const {
        return DataVector{design, draw(seed, stream)};
    }
};

inline FieldSimulator make_field_simulator(SpatialDesign design, const GrfParams& params) {
    design.validate();
    params.validate();
    if (params.beta.size() != design.p())
        throw validation_error("make_field_simulator: beta length must match the design");
    const Eigen::MatrixXd K =
        matern_corr_matrix(design.locations, MaternParams{1.0, params.theta, params.nu});
    Eigen::LLT<Eigen::MatrixXd> llt(K);
    if (llt.info() != Eigen::Success)
        throw numerical_error("make_field_simulator: correlation matrix not positive definite at theta=" +
                              std::to_string(params.theta));
    FieldSimulator sim;
    sim.mean = design.X * params.beta;
    sim.chol = std::sqrt(params.sigma2) * Eigen::MatrixXd(llt.matrixL());
    sim.design = std::move(design);
    return sim;
}

inline DataVector simulate_grf(const SpatialDesign& design, const GrfParams& params,
                               std::uint64_t seed, std::uint64_t stream = 0) {
    return make_field_simulator(design, params).draw_data(seed, stream);
}

// ---------------------------------------------------------------------------
// Interval records and their repeated-sampling aggregation

struct IntervalRecord {
    double lower = 0.0;
    double upper = 0.0;
    double estimate = 0.0;  // point estimate tallied for the absolute error

    bool covers(double truth) const { return lower < truth && truth < upper; }
    double log_length() const { return std::log(upper) - std::log(lower); }
};

struct ParamAggregate {
    double coverage = std::numeric_limits<double>::quiet_NaN();
    double avg_log_length = std::numeric_limits<double>::quiet_NaN();
    double mae = std::numeric_limits<double>::quiet_NaN();
    int n_used = 0;
};

// Indicator-average coverage, mean log-length, mean absolute error.
inline ParamAggregate aggregate_intervals(const std::vector<IntervalRecord>& records,
                                          double truth) {
    ParamAggregate agg;
    agg.n_used = static_cast<int>(records.size());
    if (records.empty()) return agg;
    double cov = 0.0, len = 0.0, mae = 0.0;
    for (const auto& r : records) {
        cov += r.covers(truth) ? 1.0 : 0.0;
        len += r.log_length();
        mae += std::abs(r.estimate - truth);
    }
    const double n = static_cast<double>(records.size());
    agg.coverage = cov / n;
    agg.avg_log_length = len / n;
    agg.mae = mae / n;
    return agg;
}

// ---------------------------------------------------------------------------
// Coverage experiment

struct PriorEntry {
    PriorKind kind = PriorKind::custom;
    TabulatedDensity density;  // tabulated once here, shared by every replicate
    std::string label;         // defaults to to_string(kind)
};

struct ExperimentConfig {
    SpatialDesign design;  // fixed across replicates
    GrfParams truth;
    std::vector<PriorEntry> priors;
    bool mle_theta_ci = false;   // profile-likelihood interval + ML point estimate
    bool mle_sigma2_ci = false;  // nested profile search; noticeably slower
    int replicates = 300;
    int n_draws = 2000;
    double level = 0.95;
    std::uint64_t seed = 0;
    int threads = 1;

    bool include_mle() const { return mle_theta_ci || mle_sigma2_ci; }

    void validate() const {
        design.validate();
        truth.validate();
        if (truth.beta.size() != design.p())
            throw validation_error("ExperimentConfig: truth.beta length must match the design");
        if (replicates < 1) throw validation_error("ExperimentConfig: need at least one replicate");
        if (n_draws < 100 && !priors.empty())
            throw validation_error("ExperimentConfig: need at least 100 posterior draws for HPD intervals");
        if (!(level > 0.0 && level < 1.0))
            throw validation_error("ExperimentConfig: level must be in (0,1)");
        if (threads < 1) throw validation_error("ExperimentConfig: need at least one thread");
        if (priors.empty() && !include_mle())
            throw validation_error("ExperimentConfig: nothing to compare");
        for (const auto& e : priors) e.density.validate();
    }
};

struct MethodRecord {
    std::optional<IntervalRecord> theta;
    std::optional<IntervalRecord> sigma2;
};

struct ReplicateOutcome {
    bool ok = true;     // every method produced its intervals
    std::string error;  // first failure, prefixed with the method label
    std::vector<MethodRecord> methods;
};

struct MethodSummary {
    std::string name;
    ParamAggregate theta;
    ParamAggregate sigma2;
};

struct ExperimentReport {
    std::vector<MethodSummary> methods;
    std::vector<ReplicateOutcome> records;  // one per replicate, in order
    double failure_fraction = 0.0;          // replicates with at least one failed method
    double wall_seconds = 0.0;
    int replicates = 0;
    int n_draws = 0;
    double level = 0.95;
    std::uint64_t seed = 0;
    GrfParams truth;

    void validate() const {
        if (static_cast<int>(records.size()) != replicates)
            throw validation_error("ExperimentReport: record count must match replicates");
        if (!(failure_fraction >= 0.0 && failure_fraction <= 1.0))
            throw validation_error("ExperimentReport: failure fraction must be in [0,1]");
        for (const auto& m : methods) {
            for (const ParamAggregate* a : {&m.theta, &m.sigma2}) {
                if (a->n_used == 0) continue;
                if (!(a->coverage >= 0.0 && a->coverage <= 1.0))
                    throw validation_error("ExperimentReport: coverage must be in [0,1]");
            }
        }
    }
};

namespace detail {

// Deterministic seed for (replicate, method) posterior sampling, disjoint from
// the simulation streams which use the master seed directly.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t replicate,
                                 std::uint64_t method) {
    std::uint64_t s = seed;
    s += 0x9e3779b97f4a7c15ULL * (replicate + 1);
    s += 0xbf58476d1ce4e5b9ULL * (method + 1);
    splitmix64(s);
    return splitmix64(s);
}

inline double median_of(Eigen::VectorXd v) {
    std::sort(v.data(), v.data() + v.size());
    const Eigen::Index n = v.size();
    return n % 2 == 1 ? v(n / 2) : 0.5 * (v(n / 2 - 1) + v(n / 2));
}

}  // namespace detail

// Simulate `replicates` fields from the configured truth and, for each, fit
// every prior (posterior draws, HPD intervals, quadrature mode / draw median
// as point estimates) and optionally the ML path (profile-likelihood
// intervals, ML point estimates).  Per-replicate failures are recorded and
// excluded from the aggregates rather than aborting the experiment.
// Replicates are independent: simulation uses stream = replicate index and
// sampling seeds derive from (seed, replicate, method), so the report is a
// deterministic function of (config, seed) for any thread count.
inline ExperimentReport coverage_experiment(const ExperimentConfig& config) {
    config.validate();
    const auto t_start = std::chrono::steady_clock::now();

    std::vector<std::string> names;
    names.reserve(config.priors.size() + 1);
    for (const auto& e : config.priors)
        names.push_back(e.label.empty() ? to_string(e.kind) : e.label);
    if (config.include_mle()) names.emplace_back("mle");
    const std::size_t n_methods = names.size();

    const FieldSimulator sim = make_field_simulator(config.design, config.truth);
    const double nu = config.truth.nu;

    std::vector<ReplicateOutcome> records(static_cast<std::size_t>(config.replicates));

    auto run_replicate = [&](int j) {
        ReplicateOutcome out;
        out.methods.resize(n_methods);
        const DataVector data = sim.draw_data(config.seed, static_cast<std::uint64_t>(j));
        auto fail = [&](std::size_t m, const std::exception& e) {
            if (out.ok) out.error = names[m] + ": " + e.what();
            out.ok = false;
        };
        for (std::size_t m = 0; m < config.priors.size(); ++m) {
            try {
                const auto marg = build_marginal_posterior(data, nu, config.priors[m].density);
                const auto draws =
                    sample_posterior(marg, data, config.priors[m].kind, config.n_draws,
                                     detail::derive_seed(config.seed, j, m));
                const auto ht = hpd_interval(draws.theta, config.level);
                const auto hs = hpd_interval(draws.sigma2, config.level);
                out.methods[m].theta = IntervalRecord{ht.lower, ht.upper, marg.mode_theta};
                out.methods[m].sigma2 =
                    IntervalRecord{hs.lower, hs.upper, detail::median_of(draws.sigma2)};
            } catch (const std::exception& e) {
                fail(m, e);
            }
        }
        if (config.include_mle()) {
            const std::size_t m = n_methods - 1;
            try {
                const ThetaRange range = reml_search_range(data.design.locations);
                const auto best = detail::maximize_over_theta(
                    [&](double t) { return detail::ml_profile_theta(t, data, nu); }, range);
                const double theta_hat = std::exp(best.x);
                if (config.mle_theta_ci) {
                    const auto ci = profile_ci(data, ProfileParam::theta, config.level, nu);
                    out.methods[m].theta = IntervalRecord{ci.lower, ci.upper, theta_hat};
                }
                if (config.mle_sigma2_ci) {
                    const double s2_hat = gls_quantities(theta_hat, data, nu).s2 /
                                          static_cast<double>(data.n());
                    const auto ci = profile_ci(data, ProfileParam::sigma2, config.level, nu);
                    out.methods[m].sigma2 = IntervalRecord{ci.lower, ci.upper, s2_hat};
                }
            } catch (const std::exception& e) {
                fail(m, e);
            }
        }
        records[static_cast<std::size_t>(j)] = std::move(out);
    };

    const int workers = std::min(config.threads, config.replicates);
    if (workers <= 1) {
        for (int j = 0; j < config.replicates; ++j) run_replicate(j);
    } else {
        std::atomic<int> next{0};
        auto pump = [&] {
            for (int j = next.fetch_add(1); j < config.replicates; j = next.fetch_add(1))
                run_replicate(j);
        };
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers) - 1);
        for (int w = 1; w < workers; ++w) pool.emplace_back(pump);
        pump();
        for (auto& t : pool) t.join();
    }

    ExperimentReport report;
    report.records = std::move(records);
    report.replicates = config.replicates;
    report.n_draws = config.n_draws;
    report.level = config.level;
    report.seed = config.seed;
    report.truth = config.truth;

    int failed = 0;
    for (const auto& r : report.records)
        if (!r.ok) ++failed;
    report.failure_fraction = static_cast<double>(failed) / config.replicates;

    for (std::size_t m = 0; m < n_methods; ++m) {
        MethodSummary ms;
        ms.name = names[m];
        std::vector<IntervalRecord> th, s2;
        for (const auto& r : report.records) {
            if (r.methods[m].theta) th.push_back(*r.methods[m].theta);
            if (r.methods[m].sigma2) s2.push_back(*r.methods[m].sigma2);
        }
        ms.theta = aggregate_intervals(th, config.truth.theta);
        ms.sigma2 = aggregate_intervals(s2, config.truth.sigma2);
        report.methods.push_back(std::move(ms));
    }

    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    report.validate();
    return report;
}

// One row per method: both parameters' aggregates side by side.
inline void to_csv(const ExperimentReport& report, std::ostream& os) {
    os << "method,coverage_theta,log_length_theta,mae_theta,n_theta,"
          "coverage_sigma2,log_length_sigma2,mae_sigma2,n_sigma2\n";
    os.precision(10);
    for (const auto& m : report.methods) {
        os << m.name << ',' << m.theta.coverage << ',' << m.theta.avg_log_length << ','
           << m.theta.mae << ',' << m.theta.n_used << ',' << m.sigma2.coverage << ','
           << m.sigma2.avg_log_length << ',' << m.sigma2.mae << ',' << m.sigma2.n_used << '\n';
    }
}

inline void to_json(const ExperimentReport& report, std::ostream& os) {
    const auto aggregate = [&os](const char* key, const ParamAggregate& a) {
        os << '"' << key << "\":{\"coverage\":";
        detail::json_number(os, a.coverage);
        os << ",\"avg_log_length\":";
        detail::json_number(os, a.avg_log_length);
        os << ",\"mae\":";
        detail::json_number(os, a.mae);
        os << ",\"n_used\":" << a.n_used << '}';
    };
    os << "{\"replicates\":" << report.replicates << ",\"n_draws\":" << report.n_draws
       << ",\"level\":";
    detail::json_number(os, report.level);
    os << ",\"seed\":" << report.seed << ",\"truth\":{\"sigma2\":";
    detail::json_number(os, report.truth.sigma2);
    os << ",\"theta\":";
    detail::json_number(os, report.truth.theta);
    os << ",\"nu\":";
    detail::json_number(os, report.truth.nu);
    os << "},\"failure_fraction\":";
    detail::json_number(os, report.failure_fraction);
    os << ",\"wall_seconds\":";
    detail::json_number(os, report.wall_seconds);
    os << ",\"methods\":[";
    for (std::size_t m = 0; m < report.methods.size(); ++m) {
        if (m) os << ',';
        os << "{\"name\":\"" << report.methods[m].name << "\",";
        aggregate("theta", report.methods[m].theta);
        os << ',';
        aggregate("sigma2", report.methods[m].sigma2);
        os << '}';
    }
    os << "]}";
}

// ---------------------------------------------------------------------------
// Empirical semivariogram

struct SemivariogramBin {
    double r_lo = 0.0, r_hi = 0.0;  // bin edges
    double r_mean = 0.0;            // mean pair distance, the fit abscissa
    Eigen::Index n_pairs = 0;
    double gamma = 0.0;  // average squared half-difference
};

struct SemivariogramFit {
    double sigma2 = 0.0;
    double theta = 0.0;
    double nu = 0.5;  // fixed smoothness the curve was fit at
    double rss = 0.0;
};

struct Semivariogram {
    std::vector<SemivariogramBin> bins;  // nonempty bins only
    SemivariogramFit fit;
};

// Classical moment estimator on least-squares residuals (for a constant mean
// the differences cancel the mean anyway), binned to equal widths up to half
// the design diameter, then sigma2 * (1 - K_theta(r)) fit by least squares
// over the bin estimates with sigma2 profiled in closed form.
inline Semivariogram empirical_semivariogram(const DataVector& data, double nu, int n_bins = 15) {
    data.validate();
    if (data.n() < 10) throw validation_error("empirical_semivariogram: need at least 10 observations");
    if (n_bins < 2) throw validation_error("empirical_semivariogram: need at least two bins");
    if (!(nu > 0.0) || !std::isfinite(nu))
        throw validation_error("empirical_semivariogram: nu must be positive");

    const Eigen::VectorXd resid =
        data.z - data.design.X * data.design.X.colPivHouseholderQr().solve(data.z);
    const auto& locs = data.design.locations;
    const Eigen::Index n = data.n();

    double diameter = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < i; ++j)
            diameter = std::max(diameter, (locs.row(i) - locs.row(j)).norm());
    if (!(diameter > 0.0))
        throw numerical_error("empirical_semivariogram: all locations coincide");

    const double cutoff = 0.5 * diameter;
    const double width = cutoff / n_bins;
    std::vector<double> sum_sq(static_cast<std::size_t>(n_bins), 0.0);
    std::vector<double> sum_r(static_cast<std::size_t>(n_bins), 0.0);
    std::vector<Eigen::Index> count(static_cast<std::size_t>(n_bins), 0);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < i; ++j) {
            const double r = (locs.row(i) - locs.row(j)).norm();
            if (r > cutoff) continue;
            const auto b = std::min(static_cast<std::size_t>(r / width),
                                    static_cast<std::size_t>(n_bins) - 1);
            const double d = resid(i) - resid(j);
            sum_sq[b] += d * d;
            sum_r[b] += r;
            ++count[b];
        }

    Semivariogram out;
    for (int b = 0; b < n_bins; ++b) {
        const auto ub = static_cast<std::size_t>(b);
        if (count[ub] == 0) continue;  // empty bins skipped
        SemivariogramBin bin;
        bin.r_lo = b * width;
        bin.r_hi = (b + 1) * width;
        bin.n_pairs = count[ub];
        bin.r_mean = sum_r[ub] / static_cast<double>(count[ub]);
        bin.gamma = 0.5 * sum_sq[ub] / static_cast<double>(count[ub]);
        out.bins.push_back(bin);
    }
    if (out.bins.size() < 3)
        throw numerical_error("empirical_semivariogram: fewer than three nonempty bins");

    // Profile the scale: for fixed theta the least-squares sigma2 is
    // sum(gamma * g) / sum(g^2) with g = 1 - K_theta(r), nonnegative for free.
    auto profile = [&](double theta) {
        double num = 0.0, den = 0.0;
        for (const auto& bin : out.bins) {
            const double g = 1.0 - matern_corr(bin.r_mean, MaternParams{1.0, theta, nu});
            num += bin.gamma * g;
            den += g * g;
        }
        const double s2 = den > 0.0 ? std::max(num / den, 0.0) : 0.0;
        double rss = 0.0;
        for (const auto& bin : out.bins) {
            const double g = 1.0 - matern_corr(bin.r_mean, MaternParams{1.0, theta, nu});
            const double e = bin.gamma - s2 * g;
            rss += e * e;
        }
        return std::pair{s2, rss};
    };
    const auto best = detail::golden_max(
        [&](double logt) { return -profile(std::exp(logt)).second; },
        std::log(1e-3 * diameter), std::log(1e2 * diameter), 1e-7);
    const auto [s2_hat, rss] = profile(std::exp(best.x));
    out.fit = SemivariogramFit{s2_hat, std::exp(best.x), nu, rss};
    return out;
}

inline void to_csv(const Semivariogram& sv, std::ostream& os) {
    os << "r_lo,r_hi,r_mean,n_pairs,gamma,fitted\n";
    os.precision(10);
    for (const auto& b : sv.bins) {
        const double fitted =
            sv.fit.sigma2 * (1.0 - matern_corr(b.r_mean, MaternParams{1.0, sv.fit.theta, sv.fit.nu}));
        os << b.r_lo << ',' << b.r_hi << ',' << b.r_mean << ',' << b.n_pairs << ',' << b.gamma
           << ',' << fitted << '\n';
    }
}

inline void to_json(const Semivariogram& sv, std::ostream& os) {
    os << "{\"fit\":{\"sigma2\":";
    detail::json_number(os, sv.fit.sigma2);
    os << ",\"theta\":";
    detail::json_number(os, sv.fit.theta);
    os << ",\"nu\":";
    detail::json_number(os, sv.fit.nu);
    os << ",\"rss\":";
    detail::json_number(os, sv.fit.rss);
    os << "},\"bins\":[";
    for (std::size_t i = 0; i < sv.bins.size(); ++i) {
        const auto& b = sv.bins[i];
        if (i) os << ',';
        os << "{\"r_lo\":";
        detail::json_number(os, b.r_lo);
        os << ",\"r_hi\":";
        detail::json_number(os, b.r_hi);
        os << ",\"r_mean\":";
        detail::json_number(os, b.r_mean);
        os << ",\"n_pairs\":" << b.n_pairs << ",\"gamma\":";
        detail::json_number(os, b.gamma);
        os << '}';
    }
    os << "]}";
}

}  // namespace gfref
