#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "gfref/designs.hpp"

using namespace gfref;

namespace {

Locations grid_locations(int k, double lo = 0.0, double hi = 1.0) {
    Locations locs(k * k, 2);
    const double step = (hi - lo) / (k - 1);
    int r = 0;
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) locs.row(r++) << lo + i * step, lo + j * step;
    return locs;
}

Locations random_locations(int n, unsigned seed) {
    std::mt19937 gen(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Locations locs(n, 2);
    for (int i = 0; i < n; ++i) locs.row(i) << unif(gen), unif(gen);
    return locs;
}

// Wrap a frequency index into k1 in (-m1/2, m1/2], k2 in (-m2/2, m2/2].
std::array<int, 2> negate_index(const std::array<int, 2>& k, int m1, int m2) {
    auto wrap = [](int v, int m) {
        while (v <= -m / 2) v += m;
        while (v > m / 2) v -= m;
        return v;
    };
    return {wrap(-k[0], m1), wrap(-k[1], m2)};
}

}  // namespace

TEST_CASE("spectral design index classes partition as expected", "[designs]") {
    {
        const auto sd = build_spectral_design(6, 6, 1.0);
        CHECK(sd.index_C.size() == 4);
        CHECK(sd.index_B.size() == 8);
        CHECK(sd.index_interior.size() == 4);
        CHECK(sd.index_E.size() == 4);
        CHECK(sd.index_I().size() == 16);
        CHECK(static_cast<int>(sd.index_I().size()) == sd.M() / 2 - 2);
        const double nyq = std::numbers::pi;
        for (const auto& k : sd.layout()) {
            const auto w = sd.freq(k);
            CHECK(std::abs(w(0)) <= nyq + 1e-12);
            CHECK(std::abs(w(1)) <= nyq + 1e-12);
        }
    }
    {
        const auto sd = build_spectral_design(4, 4, 0.5);
        CHECK(sd.index_I().size() == 6);
    }
    for (auto [m1, m2] : std::vector<std::pair<int, int>>{{4, 4}, {6, 6}, {10, 12}, {8, 14}}) {
        const auto sd = build_spectral_design(m1, m2, 0.2);
        CHECK(4 + 2 * static_cast<int>(sd.index_I().size()) == sd.M());
    }
}

TEST_CASE("spectral design indices are distinct and conjugate-complete", "[designs]") {
    const auto sd = build_spectral_design(10, 12, 0.3);
    std::set<std::array<int, 2>> seen;
    for (const auto& k : sd.index_C) seen.insert(k);
    for (const auto& k : sd.index_I()) seen.insert(k);
    CHECK(seen.size() == sd.index_C.size() + sd.index_I().size());
    // the negation of every I-index falls outside I and C
    for (const auto& k : sd.index_I()) {
        const auto neg = negate_index(k, sd.m1, sd.m2);
        CHECK(!seen.count(neg));
    }
    // corners are self-conjugate
    for (const auto& k : sd.index_C) {
        const auto neg = negate_index(k, sd.m1, sd.m2);
        CHECK(neg == k);
    }
}

TEST_CASE("spectral design rejects odd or nonpositive sizes", "[designs]") {
    CHECK_THROWS_AS(build_spectral_design(5, 6, 1.0), validation_error);
    CHECK_THROWS_AS(build_spectral_design(6, 0, 1.0), validation_error);
    CHECK_THROWS_AS(build_spectral_design(-4, 4, 1.0), validation_error);
    CHECK_THROWS_AS(build_spectral_design(4, 4, -1.0), validation_error);
}

TEST_CASE("auxiliary grid construction and coverage", "[designs]") {
    const BoundingBox unit{0.0, 1.0, 0.0, 1.0};
    const auto grid = build_aux_grid(unit, 10, 10, 1.0 / 9.0 + 1e-4);
    CHECK(grid.M() == 100);
    CHECK(grid.point(1, 1)(0) == Catch::Approx(0.0));
    CHECK(grid.point(1, 1)(1) == Catch::Approx(0.0));
    CHECK(grid.point(10, 10)(0) >= 1.0);
    CHECK(grid.points().rows() == 100);

    CHECK_THROWS_AS(build_aux_grid(unit, 10, 10, 0.05), validation_error);
    CHECK_THROWS_AS(build_aux_grid(unit, 10, 11, 0.2), validation_error);

    // spacing/size pairs used in the worked analyses
    CHECK_NOTHROW(build_aux_grid(BoundingBox{0.0, 2.0, 0.0, 2.0}, 16, 16, 0.2));
    CHECK_NOTHROW(build_aux_grid(unit, 26, 26, 0.04));

    const auto g2 = build_aux_grid(unit, 4, 4, 0.5);
    CHECK(g2.row(1, 1) == 0);
    CHECK(g2.row(2, 1) == 4);
    CHECK(g2.row(1, 2) == 1);
    CHECK(g2.point_by_row(5)(0) == Catch::Approx(g2.point(2, 2)(0)));
}

TEST_CASE("nearest neighbor distances", "[designs]") {
    {
        Locations locs(3, 2);
        locs << 0.0, 0.0, 1.0, 0.0, 3.0, 0.0;
        const auto nn = nearest_neighbor_distances(locs);
        CHECK(nn.d == std::vector<double>{1.0, 1.0, 2.0});
        CHECK(nn.d_min == 1.0);
    }
    {
        const auto nn = nearest_neighbor_distances(grid_locations(10));
        for (double d : nn.d) CHECK_THAT(d, Catch::Matchers::WithinRel(1.0 / 9.0, 1e-12));
    }
    {
        const auto locs = random_locations(100, 42);
        const auto nn = nearest_neighbor_distances(locs);
        double best = std::numeric_limits<double>::infinity();
        for (int i = 0; i < 100; ++i)
            for (int j = 0; j < 100; ++j)
                if (i != j) best = std::min(best, (locs.row(i) - locs.row(j)).norm());
        CHECK(nn.d_min == best);
    }
    {
        Locations dup(3, 2);
        dup << 0.0, 0.0, 0.5, 0.5, 0.0, 0.0;
        CHECK_THROWS_WITH(nearest_neighbor_distances(dup),
                          Catch::Matchers::ContainsSubstring("duplicate"));
    }
}

TEST_CASE("regularity detection", "[designs]") {
    CHECK(detect_regularity(constant_mean_design(grid_locations(10))) == Regularity::regular);
    CHECK(detect_regularity(constant_mean_design(random_locations(120, 7))) == Regularity::irregular);
}

TEST_CASE("tuning heuristics match the documented rules", "[designs]") {
    {
        const auto rep = tune_defaults(constant_mean_design(grid_locations(10)), Regularity::regular, 0.5);
        CHECK(rep.m1 == 12);
        CHECK(rep.m2 == 12);
        CHECK_THAT(rep.delta, Catch::Matchers::WithinRel(1.2 / 9.0, 1e-12));
        CHECK_THAT(rep.delta, Catch::Matchers::WithinAbs(0.133, 5e-4));
    }
    {
        const auto rep = tune_defaults(constant_mean_design(grid_locations(10)), Regularity::regular, 1.5);
        CHECK(rep.m1 == 14);
        CHECK_THAT(rep.delta, Catch::Matchers::WithinRel(1.3 / 9.0, 1e-12));
    }
    {
        const auto rep = tune_defaults(constant_mean_design(grid_locations(20)), Regularity::regular, 0.5);
        CHECK(rep.m1 == 20);
        CHECK_THAT(rep.delta, Catch::Matchers::WithinRel(1.1 / 19.0, 1e-12));
    }
    {
        Locations sq(4, 2);
        sq << 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0;
        const auto rep = tune_defaults(SpatialDesign(sq, Eigen::MatrixXd::Ones(4, 1)), Regularity::regular, 0.5);
        CHECK(rep.m1 == 4);
        CHECK(rep.m2 == 4);
        CHECK(rep.delta == 1.0);
    }
    {
        const auto design = constant_mean_design(random_locations(100, 9));
        const auto rep = tune_defaults(design, Regularity::irregular, 0.5);
        const auto nn = nearest_neighbor_distances(design);
        auto sorted = nn.d;
        std::sort(sorted.begin(), sorted.end());
        const double h = 0.85 * (sorted.size() - 1);
        const auto i = static_cast<std::size_t>(h);
        const double pct = sorted[i] + (h - i) * (sorted[i + 1] - sorted[i]);
        CHECK_THAT(rep.delta, Catch::Matchers::WithinRel(pct, 1e-12));
        const auto box = bounding_box(design.locations);
        CHECK((rep.m1 - 1) * rep.delta >= box.width() - 1e-12);
        CHECK((rep.m2 - 1) * rep.delta >= box.height() - 1e-12);
        CHECK(rep.m1 % 2 == 0);
        CHECK(rep.m1 >= 4);
        // deterministic
        const auto rep2 = tune_defaults(design, Regularity::irregular, 0.5);
        CHECK(rep2.m1 == rep.m1);
        CHECK(rep2.delta == rep.delta);
    }
}

TEST_CASE("spatial design validation", "[designs]") {
    const auto locs = random_locations(10, 3);
    CHECK_NOTHROW(SpatialDesign(locs, Eigen::MatrixXd::Ones(10, 1)));

    Eigen::MatrixXd bad = Eigen::MatrixXd::Ones(10, 2);  // two identical columns
    CHECK_THROWS_AS(SpatialDesign(locs, bad), validation_error);

    CHECK_THROWS_AS(SpatialDesign(locs, Eigen::MatrixXd::Ones(9, 1)), validation_error);

    Locations two(2, 2);
    two << 0.0, 0.0, 1.0, 1.0;
    Eigen::MatrixXd x2 = Eigen::MatrixXd::Ones(2, 2);
    x2(1, 1) = 0.0;
    CHECK_THROWS_AS(SpatialDesign(two, x2), validation_error);  // n <= p

    Locations dup(3, 2);
    dup << 0.0, 0.0, 0.0, 0.0, 1.0, 1.0;
    CHECK_THROWS_WITH(SpatialDesign(dup, Eigen::MatrixXd::Ones(3, 1)).n(),
                      Catch::Matchers::ContainsSubstring("duplicate"));
}
