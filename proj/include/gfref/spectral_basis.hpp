#pragma once

// The M x M trigonometric basis H1, its orthonormalized form L1 (known
// diagonal normalization, never a general matrix square root), the
// transformed design X1 = L1' * Xtilde, the diagonal spectra Lambda~ / G,
// and the spectral covariance approximation sigma^2 H1 G H1'.

#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "gfref/covmodel.hpp"
#include "gfref/designs.hpp"
#include "gfref/errors.hpp"

namespace gfref {

struct SpectralBasis {
    Eigen::MatrixXd H1;         // M x M, columns laid out (C | 2cos over I | -2sin over I)
    Eigen::VectorXd col_scale;  // diagonal of (H1'H1)^(-1/2): 1/sqrt(M) x4, then 1/sqrt(2M)
    Eigen::MatrixXd X1;         // M x p, filled by build_X1
    AuxGrid grid;
    SpectralDesign spectral;

    Eigen::MatrixXd L1() const { return H1 * col_scale.asDiagonal(); }
    bool has_X1() const { return X1.size() > 0; }
};

struct DiagonalSpectrum {
    Eigen::VectorXd lambda;                   // M entries, layout (C | I | I)
    std::vector<std::array<int, 2>> index;    // frequency index per entry
};

namespace detail {

inline void check_grid_spectral(const AuxGrid& grid, const SpectralDesign& spectral) {
    if (grid.m1 != spectral.m1 || grid.m2 != spectral.m2)
        throw validation_error("grid and spectral design dimensions disagree");
    if (std::abs(grid.delta - spectral.delta) > 1e-12 * (1.0 + grid.delta))
        throw validation_error("grid and spectral design spacings disagree");
}

inline void check_alias_delta(const SpectralDesign& spectral, const AliasConfig& alias) {
    if (std::abs(alias.delta - spectral.delta) > 1e-12 * (1.0 + spectral.delta))
        throw validation_error("alias spacing must match the spectral design spacing");
}

}  // namespace detail

// Phases use the grid's canonical indices: w' u = 2 pi (k1 i / m1 + k2 j / m2)
// exactly, which keeps the cosine/sine orthogonality at machine precision.
inline SpectralBasis build_H1(const AuxGrid& grid, const SpectralDesign& spectral) {
    detail::check_grid_spectral(grid, spectral);
    const int M = grid.M();
    const auto I = spectral.index_I();
    const auto nI = static_cast<int>(I.size());
    if (4 + 2 * nI != M) throw validation_error("build_H1: index classes do not partition the design");

    SpectralBasis basis;
    basis.grid = grid;
    basis.spectral = spectral;
    basis.H1.resize(M, M);
    const double twopi = 2.0 * std::numbers::pi;
    for (int i = 1; i <= grid.m1; ++i)
        for (int j = 1; j <= grid.m2; ++j) {
            const int r = grid.row(i, j);
            for (int c = 0; c < 4; ++c) {
                const auto& k = spectral.index_C[static_cast<std::size_t>(c)];
                const double phi = twopi * (static_cast<double>(k[0]) * i / grid.m1 +
                                            static_cast<double>(k[1]) * j / grid.m2);
                basis.H1(r, c) = std::cos(phi);
            }
            for (int c = 0; c < nI; ++c) {
                const auto& k = I[static_cast<std::size_t>(c)];
                const double phi = twopi * (static_cast<double>(k[0]) * i / grid.m1 +
                                            static_cast<double>(k[1]) * j / grid.m2);
                basis.H1(r, 4 + c) = 2.0 * std::cos(phi);
                basis.H1(r, 4 + nI + c) = -2.0 * std::sin(phi);
            }
        }
    basis.col_scale.resize(M);
    basis.col_scale.head(4).setConstant(1.0 / std::sqrt(static_cast<double>(M)));
    basis.col_scale.tail(M - 4).setConstant(1.0 / std::sqrt(2.0 * M));
    return basis;
}

inline Eigen::MatrixXd build_X1(SpectralBasis& basis, const Eigen::MatrixXd& Xtilde) {
    if (Xtilde.rows() != basis.H1.rows())
        throw validation_error("build_X1: covariate rows must match the grid size");
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xtilde);
    if (qr.rank() < Xtilde.cols()) throw validation_error("build_X1: covariates at the grid are rank deficient");
    basis.X1 = basis.col_scale.asDiagonal() * (basis.H1.transpose() * Xtilde);
    return basis.X1;
}

inline Eigen::MatrixXd covariates_at_grid(const AuxGrid& grid,
                                          const std::function<Eigen::VectorXd(double, double)>& f) {
    if (!f) throw validation_error("covariates_at_grid: missing covariate function");
    const int M = grid.M();
    Eigen::VectorXd first = f(grid.point(1, 1)(0), grid.point(1, 1)(1));
    Eigen::MatrixXd X(M, first.size());
    for (int r = 0; r < M; ++r) {
        const Eigen::Vector2d s = grid.point_by_row(r);
        X.row(r) = f(s(0), s(1)).transpose();
    }
    return X;
}

inline double c_delta(double delta) {
    const double w = 2.0 * std::numbers::pi / delta;
    return w * w;
}

namespace detail {

// f~ at the C frequencies followed by the I frequencies (each I value is
// shared by its cosine and sine basis columns).
inline Eigen::VectorXd distinct_aliased(const SpectralDesign& spectral, const MaternParams& p,
                                        const AliasConfig& alias) {
    const auto I = spectral.index_I();
    Eigen::VectorXd f(4 + I.size());
    for (std::size_t c = 0; c < 4; ++c) {
        const auto w = spectral.freq(spectral.index_C[c]);
        f(static_cast<Eigen::Index>(c)) = aliased_specden(w(0), w(1), p, alias);
    }
    for (std::size_t c = 0; c < I.size(); ++c) {
        const auto w = spectral.freq(I[c]);
        f(static_cast<Eigen::Index>(4 + c)) = aliased_specden(w(0), w(1), p, alias);
    }
    return f;
}

}  // namespace detail

inline DiagonalSpectrum lambda_tilde(const SpectralDesign& spectral, const MaternParams& p,
                                     const AliasConfig& alias) {
    detail::check_alias_delta(spectral, alias);
    const Eigen::VectorXd f = detail::distinct_aliased(spectral, p, alias);
    const auto nI = f.size() - 4;
    const double cd = c_delta(spectral.delta);
    DiagonalSpectrum out;
    out.lambda.resize(spectral.M());
    out.lambda.head(4) = cd * f.head(4);
    out.lambda.segment(4, nI) = cd * f.tail(nI);
    out.lambda.tail(nI) = cd * f.tail(nI);
    out.index = spectral.layout();
    return out;
}

// Diagonal of G: Lambda~/(2M) with the four self-conjugate corner entries doubled.
inline Eigen::VectorXd g_diag(const SpectralDesign& spectral, const MaternParams& p,
                              const AliasConfig& alias) {
    DiagonalSpectrum lt = lambda_tilde(spectral, p, alias);
    Eigen::VectorXd g = lt.lambda / (2.0 * spectral.M());
    g.head(4) *= 2.0;
    return g;
}

inline Eigen::MatrixXd spectral_cov(const SpectralBasis& basis, const MaternParams& p,
                                    const AliasConfig& alias) {
    const Eigen::VectorXd g = g_diag(basis.spectral, p, alias);
    Eigen::MatrixXd cov = p.sigma2 * basis.H1 * g.asDiagonal() * basis.H1.transpose();
    return (cov + cov.transpose()) / 2.0;
}

}  // namespace gfref
