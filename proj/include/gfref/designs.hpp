#pragma once

// Sampling designs, the auxiliary regular grid U_M, the spectral design W_M
// with its corner/boundary/interior/exterior index classes, and the tuning
// heuristics for (M1, M2, delta).

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "gfref/detail/stats.hpp"
#include "gfref/errors.hpp"

namespace gfref {

using Locations = Eigen::Matrix<double, Eigen::Dynamic, 2>;

struct BoundingBox {
    double xmin = 0.0, xmax = 0.0, ymin = 0.0, ymax = 0.0;
    double width() const { return xmax - xmin; }
    double height() const { return ymax - ymin; }
    double diameter() const { return std::hypot(width(), height()); }
};

inline BoundingBox bounding_box(const Locations& locs) {
    if (locs.rows() == 0) throw validation_error("bounding_box: empty location set");
    return {locs.col(0).minCoeff(), locs.col(0).maxCoeff(), locs.col(1).minCoeff(), locs.col(1).maxCoeff()};
}

struct SpatialDesign {
    Locations locations;   // n x 2
    Eigen::MatrixXd X;     // n x p, first column all ones when an intercept is present

    SpatialDesign() = default;
    SpatialDesign(Locations locs, Eigen::MatrixXd covariates)
        : locations(std::move(locs)), X(std::move(covariates)) {
        validate();
    }

    Eigen::Index n() const { return locations.rows(); }
    Eigen::Index p() const { return X.cols(); }

    void validate() const {
        const auto nn = locations.rows();
        if (X.rows() != nn) throw validation_error("SpatialDesign: X row count must match location count");
        if (X.cols() < 1) throw validation_error("SpatialDesign: need at least one covariate column");
        if (nn <= X.cols()) throw validation_error("SpatialDesign: need n > p");
        if (!locations.allFinite() || !X.allFinite()) throw validation_error("SpatialDesign: non-finite entries");
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
        if (qr.rank() < X.cols()) throw validation_error("SpatialDesign: X is rank deficient");
        for (Eigen::Index i = 0; i < nn; ++i)
            for (Eigen::Index j = 0; j < i; ++j)
                if ((locations.row(i) - locations.row(j)).norm() == 0.0)
                    throw validation_error("SpatialDesign: duplicate locations at rows " + std::to_string(j) +
                                           " and " + std::to_string(i));
    }
};

inline SpatialDesign constant_mean_design(Locations locs) {
    Eigen::MatrixXd X = Eigen::MatrixXd::Ones(locs.rows(), 1);
    return SpatialDesign(std::move(locs), std::move(X));
}

// Auxiliary grid U_M: points origin + (i*delta, j*delta), i = 1..m1, j = 1..m2,
// anchored so that point (1,1) is the lower-left corner of the covered box.
// Row index r = (i-1)*m2 + (j-1): second coordinate fastest.
struct AuxGrid {
    int m1 = 0, m2 = 0;
    double delta = 0.0;
    double x0 = 0.0, y0 = 0.0;  // origin offset (one spacing below/left of the box corner)

    int M() const { return m1 * m2; }
    int row(int i, int j) const { return (i - 1) * m2 + (j - 1); }
    Eigen::Vector2d point(int i, int j) const { return {x0 + i * delta, y0 + j * delta}; }
    Eigen::Vector2d point_by_row(int r) const { return point(r / m2 + 1, r % m2 + 1); }

    Locations points() const {
        Locations pts(M(), 2);
        for (int i = 1; i <= m1; ++i)
            for (int j = 1; j <= m2; ++j) pts.row(row(i, j)) = point(i, j).transpose();
        return pts;
    }
};

namespace detail {

inline void check_even_positive(int m1, int m2) {
    if (m1 < 2 || m2 < 2 || m1 % 2 != 0 || m2 % 2 != 0)
        throw validation_error("spectral grid sizes must be positive even integers");
}

}  // namespace detail

inline AuxGrid build_aux_grid(const BoundingBox& box, int m1, int m2, double delta) {
    detail::check_even_positive(m1, m2);
    if (!(delta > 0.0)) throw validation_error("build_aux_grid: delta must be positive");
    if (!(box.width() >= 0.0) || !(box.height() >= 0.0)) throw validation_error("build_aux_grid: empty box");
    const double tol = 1e-9 * (1.0 + std::max(box.width(), box.height()));
    if ((m1 - 1) * delta + tol < box.width() || (m2 - 1) * delta + tol < box.height())
        throw validation_error("build_aux_grid: grid of " + std::to_string(m1) + "x" + std::to_string(m2) +
                               " at spacing " + std::to_string(delta) + " does not cover the sampling region (needs (m-1)*delta >= extent)");
    return {m1, m2, delta, box.xmin - delta, box.ymin - delta};
}

// Spectral design W_M: frequencies w_{k1,k2} = (2*pi*k1/(delta*m1), 2*pi*k2/(delta*m2)),
// k1 in (-m1/2, m1/2], k2 in (-m2/2, m2/2]. Index classes:
//   C: the four self-conjugate corners (0,0), (m1/2,0), (0,m2/2), (m1/2,m2/2)
//   B: boundary runs (k1,0), (k1,m2/2) for k1 = 1..m1/2-1 and (0,k2), (m1/2,k2) for k2 = 1..m2/2-1
//   interior: k1, k2 both in 1..m/2-1
//   E: k1 in 1..m1/2-1, k2 in -(m2/2-1)..-1
// One member of each conjugate pair appears in I = B + interior + E.
struct SpectralDesign {
    int m1 = 0, m2 = 0;
    double delta = 0.0;
    std::vector<std::array<int, 2>> index_C, index_B, index_interior, index_E;

    int M() const { return m1 * m2; }

    std::vector<std::array<int, 2>> index_I() const {
        std::vector<std::array<int, 2>> out;
        out.reserve(index_B.size() + index_interior.size() + index_E.size());
        out.insert(out.end(), index_B.begin(), index_B.end());
        out.insert(out.end(), index_interior.begin(), index_interior.end());
        out.insert(out.end(), index_E.begin(), index_E.end());
        return out;
    }

    Eigen::Vector2d freq(const std::array<int, 2>& k) const {
        const double c1 = 2.0 * std::numbers::pi / (delta * m1);
        const double c2 = 2.0 * std::numbers::pi / (delta * m2);
        return {c1 * k[0], c2 * k[1]};
    }

    // Layout used by the basis and diagonal spectra: C block, then I twice.
    std::vector<std::array<int, 2>> layout() const {
        auto I = index_I();
        std::vector<std::array<int, 2>> out;
        out.reserve(index_C.size() + 2 * I.size());
        out.insert(out.end(), index_C.begin(), index_C.end());
        out.insert(out.end(), I.begin(), I.end());
        out.insert(out.end(), I.begin(), I.end());
        return out;
    }
};

inline SpectralDesign build_spectral_design(int m1, int m2, double delta) {
    detail::check_even_positive(m1, m2);
    if (!(delta > 0.0)) throw validation_error("build_spectral_design: delta must be positive");
    SpectralDesign sd;
    sd.m1 = m1;
    sd.m2 = m2;
    sd.delta = delta;
    const int h1 = m1 / 2, h2 = m2 / 2;
    sd.index_C = {{{0, 0}}, {{h1, 0}}, {{0, h2}}, {{h1, h2}}};
    for (int k1 = 1; k1 < h1; ++k1) sd.index_B.push_back({k1, 0});
    for (int k1 = 1; k1 < h1; ++k1) sd.index_B.push_back({k1, h2});
    for (int k2 = 1; k2 < h2; ++k2) sd.index_B.push_back({0, k2});
    for (int k2 = 1; k2 < h2; ++k2) sd.index_B.push_back({h1, k2});
    for (int k1 = 1; k1 < h1; ++k1)
        for (int k2 = 1; k2 < h2; ++k2) sd.index_interior.push_back({k1, k2});
    for (int k1 = 1; k1 < h1; ++k1)
        for (int k2 = 1; k2 < h2; ++k2) sd.index_E.push_back({k1, -k2});
    return sd;
}

struct NearestNeighborSummary {
    std::vector<double> d;
    double d_min = 0.0;
};

inline NearestNeighborSummary nearest_neighbor_distances(const Locations& locs) {
    const auto n = locs.rows();
    if (n < 2) throw validation_error("nearest_neighbor_distances: need at least 2 locations");
    NearestNeighborSummary out;
    out.d.assign(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < i; ++j) {
            const double r = (locs.row(i) - locs.row(j)).norm();
            if (r == 0.0)
                throw validation_error("nearest_neighbor_distances: duplicate locations at rows " +
                                       std::to_string(j) + " and " + std::to_string(i));
            out.d[static_cast<std::size_t>(i)] = std::min(out.d[static_cast<std::size_t>(i)], r);
            out.d[static_cast<std::size_t>(j)] = std::min(out.d[static_cast<std::size_t>(j)], r);
        }
    out.d_min = *std::min_element(out.d.begin(), out.d.end());
    return out;
}

inline NearestNeighborSummary nearest_neighbor_distances(const SpatialDesign& design) {
    return nearest_neighbor_distances(design.locations);
}

enum class Regularity { regular, irregular };

// A design counts as regular when the nearest-neighbor distances are nearly
// constant (coefficient of variation below 5%).
inline Regularity detect_regularity(const SpatialDesign& design) {
    const auto nn = nearest_neighbor_distances(design);
    const double mu = detail::mean(nn.d);
    const double cv = nn.d.size() > 1 ? detail::sample_sd(nn.d) / mu : 0.0;
    return cv < 0.05 ? Regularity::regular : Regularity::irregular;
}

struct TuningReport {
    int m1 = 0, m2 = 0;
    double delta = 0.0;
    Regularity regularity = Regularity::regular;
    double d_min = 0.0;
    double percentile_used = 0.0;  // 0 means the regular-grid rule was applied
    std::vector<double> nn_distances;
};

namespace detail {

inline int round_to_even(double x) {
    const auto e = static_cast<int>(2 * std::lround(x / 2.0));
    return e;
}

inline int enlarge_to_cover(int m, double delta, double extent) {
    int out = std::max(m, 4);
    while ((out - 1) * delta < extent * (1.0 - 1e-12)) out += 2;
    return out;
}

}  // namespace detail

// Grid/spacing suggestions. Regular designs enlarge sqrt(n) and d_min by a
// nu-dependent factor (large grids need only 10%); irregular designs take
// delta from an upper percentile of the nearest-neighbor distances and size
// the grid to cover the region.
inline TuningReport tune_defaults(const SpatialDesign& design, Regularity regularity, double nu) {
    if (design.n() < 4) throw validation_error("tune_defaults: need at least 4 locations");
    if (!(nu > 0.0)) throw validation_error("tune_defaults: nu must be positive");
    const auto nn = nearest_neighbor_distances(design);
    const auto box = bounding_box(design.locations);
    TuningReport rep;
    rep.regularity = regularity;
    rep.d_min = nn.d_min;
    rep.nn_distances = nn.d;

    if (regularity == Regularity::regular) {
        const double root = std::sqrt(static_cast<double>(design.n()));
        const double factor = nu <= 1.0 ? 1.2 : (nu <= 2.0 ? 1.3 : 1.4);
        int m;
        if (root >= 20.0) {
            m = detail::round_to_even(root);
            rep.delta = 1.1 * nn.d_min;
        } else {
            m = detail::round_to_even(factor * root);
            rep.delta = factor * nn.d_min;
        }
        if (m < 4) {
            m = 4;
            rep.delta = nn.d_min;
        }
        rep.m1 = detail::enlarge_to_cover(m, rep.delta, box.width());
        rep.m2 = detail::enlarge_to_cover(m, rep.delta, box.height());
    } else {
        rep.percentile_used = 0.85;
        rep.delta = detail::percentile(nn.d, rep.percentile_used);
        rep.m1 = detail::enlarge_to_cover(4, rep.delta, box.width());
        rep.m2 = detail::enlarge_to_cover(4, rep.delta, box.height());
    }
    return rep;
}

inline TuningReport tune_defaults(const SpatialDesign& design, double nu) {
    return tune_defaults(design, detect_regularity(design), nu);
}

}  // namespace gfref
