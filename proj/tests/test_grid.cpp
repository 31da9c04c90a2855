#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <vector>

#include "greenlab/grid.hpp"

using namespace greenlab;

namespace {
Grid cube(double lo, double hi, int n) { return build_grid({{lo, lo, lo}, {hi, hi, hi}}, {n, n, n}); }

ErrorKind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no error thrown";
    return ErrorKind::Io;
}
}  // namespace

TEST(BuildGrid, SpacingAndCounts) {
    const Grid g = cube(0, 1, 4);
    EXPECT_DOUBLE_EQ(g.h()[0], 0.25);
    EXPECT_EQ(g.node_count(), 125u);
    EXPECT_DOUBLE_EQ(cube(-1, 1, 64).h()[2], 1.0 / 32);
    EXPECT_EQ(kind_of([] { build_grid({{0, 0, 0}, {1, 1, 1}}, {0, 2, 2}); }), ErrorKind::InvalidGrid);
    EXPECT_EQ(kind_of([] { build_grid({{0, 0, 0}, {0, 1, 1}}, {2, 2, 2}); }), ErrorKind::InvalidGrid);
}

TEST(BuildGrid, LexicographicIndexing) {
    const Grid g = build_grid({{0, 0, 0}, {3, 4, 5}}, {3, 4, 5});
    for (std::size_t n = 0; n < g.node_count(); ++n) {
        const auto ijk = g.node_ijk(n);
        EXPECT_EQ(g.node_index(ijk[0], ijk[1], ijk[2]), n);
    }
    EXPECT_EQ(g.node_index(1, 0, 0), 1u);
    EXPECT_EQ(g.cell_index(0, 1, 0), 3u);
    const auto loc = g.locate({2.5, 3.25, 5.0});
    ASSERT_TRUE(loc);
    EXPECT_EQ(loc->first, (Index3{2, 3, 4}));
    EXPECT_NEAR(loc->second[1], 0.25, 1e-14);
    EXPECT_NEAR(loc->second[2], 1.0, 1e-14);
    EXPECT_FALSE(g.locate({-0.1, 0, 0}));
}

TEST(Mask, FullBoxBoundaryNodesAreFaces) {
    const Grid g = cube(0, 1, 4);
    const auto m = full_box_mask(g);
    EXPECT_TRUE(m.all_inside());
    const auto bn = m.boundary_nodes();
    EXPECT_EQ(bn.size(), 125u - 27u);
    for (auto n : bn) {
        const auto p = g.node_ijk(n);
        EXPECT_TRUE(p[0] == 0 || p[0] == 4 || p[1] == 0 || p[1] == 4 || p[2] == 0 || p[2] == 4);
    }
}

TEST(Mask, HalfSpaceHalfTheCells) {
    const Grid g = cube(-1, 1, 8);
    const auto m = half_space_mask(g, 2, 0.0);
    EXPECT_EQ(m.inside_count() * 2, g.cell_count());
}

TEST(Mask, EmptyAndDisconnected) {
    const Grid g = cube(0, 1, 8);
    EXPECT_EQ(kind_of([&] { mask_from_predicate(g, [](const Vec3&) { return false; }); }), ErrorKind::EmptyDomain);
    EXPECT_EQ(kind_of([&] {
                  mask_from_predicate(g, [](const Vec3& x) { return x[0] < 0.25 || x[0] > 0.75; });
              }),
              ErrorKind::DisconnectedDomain);
}

TEST(Mask, NodeKinds) {
    const Grid g = cube(0, 1, 4);
    const auto m = half_space_mask(g, 2, 0.5);
    EXPECT_EQ(m.node_kind(g.node_index(2, 2, 0)), NodeKind::Exterior);
    EXPECT_EQ(m.node_kind(g.node_index(2, 2, 2)), NodeKind::Boundary);
    EXPECT_EQ(m.node_kind(g.node_index(2, 2, 3)), NodeKind::Interior);
    EXPECT_EQ(m.node_kind(g.node_index(2, 2, 4)), NodeKind::Boundary);
}

TEST(BoundaryDistance, Examples) {
    EXPECT_NEAR(boundary_distance(full_box_mask(cube(0, 1, 8)), {0.5, 0.5, 0.5}), 0.5, 1e-14);
    const Grid g = cube(-1, 1, 16);
    const auto hs = half_space_mask(g, 2, 0.0);
    EXPECT_NEAR(boundary_distance(hs, {0, 0, 0.25}), 0.25, 1e-14);
    EXPECT_NEAR(boundary_distance(hs, {0.3, 0.1, 0.0}), 0.0, 1e-14);
    EXPECT_EQ(kind_of([&] { boundary_distance(hs, {0, 0, -0.5}); }), ErrorKind::OutsideDomain);
}

TEST(BoundaryDistance, NotchedCornerIsExact) {
    const Grid g = cube(-1, 1, 16);
    const auto m = notched_cube_mask(g, {0, 0, 0});
    // Nearest boundary point of (0.25, 0.25, -0.25) is the notch face z = 0 side at distance 0.25.
    EXPECT_NEAR(boundary_distance(m, {0.25, 0.25, -0.25}), 0.25, 1e-14);
    // Diagonal approach to the re-entrant corner edge.
    EXPECT_NEAR(boundary_distance(m, {-0.25, -0.25, -0.25}), 0.25 * std::sqrt(3.0), 1e-14);
}

TEST(BoundaryDistance, OneLipschitz) {
    const Grid g = cube(-1, 1, 16);
    const auto m = notched_cube_mask(g, {0.25, 0.0, -0.25});
    Rng rng(11);
    int checked = 0;
    while (checked < 200) {
        const Vec3 x{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        const Vec3 z{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        if (!m.contains(x) || !m.contains(z)) continue;
        EXPECT_LE(std::abs(boundary_distance(m, x) - boundary_distance(m, z)), distance(x, z) + 1e-12);
        ++checked;
    }
}

TEST(ConditionS, HalfSpace) {
    const Grid g = cube(-1, 1, 16);
    const auto m = half_space_mask(g, 2, 0.0);
    std::vector<double> radii{0.1, 0.3, 0.6, 0.9};
    const auto r = condition_s_estimate(m, {0, 0, 0}, radii, 20000, 5);
    for (double t : r.theta_hat) EXPECT_NEAR(t, 0.5, 0.02);
    for (double s : r.std_error) EXPECT_LE(s, 1.0 / std::sqrt(20000.0));
    EXPECT_TRUE(r.R_a_capped);
    EXPECT_DOUBLE_EQ(r.R_a, 0.9);
}

TEST(ConditionS, NotchedCorner) {
    const Grid g = cube(-1, 1, 16);
    const auto m = notched_cube_mask(g, {0, 0, 0});
    std::vector<double> radii{0.2, 0.5};
    const auto r = condition_s_estimate(m, {0, 0, 0}, radii, 20000, 9, 0.125);
    for (double t : r.theta_hat) EXPECT_NEAR(t, 0.125, 0.02);
}

TEST(ConditionS, InteriorPointRejected) {
    const auto m = half_space_mask(cube(-1, 1, 8), 2, 0.0);
    std::vector<double> radii{0.1};
    EXPECT_EQ(kind_of([&] { condition_s_estimate(m, {0, 0, 0.5}, radii, 100, 1); }), ErrorKind::NotOnBoundary);
}

TEST(ConditionS, FullBoxHasNoExterior) {
    const auto m = full_box_mask(cube(0, 1, 8));
    std::vector<double> radii{0.2};
    const auto r = condition_s_estimate(m, {0.5, 0.5, 0.0}, radii, 1000, 1);
    EXPECT_EQ(r.theta_hat[0], 0.0);
}

TEST(ConditionS, DeterministicAndConvergent) {
    const auto m = half_space_mask(cube(-1, 1, 8), 2, 0.0);
    std::vector<double> radii{0.5};
    const auto a = condition_s_estimate(m, {0, 0, 0}, radii, 10000, 42);
    const auto b = condition_s_estimate(m, {0, 0, 0}, radii, 10000, 42);
    EXPECT_EQ(a.theta_hat, b.theta_hat);
    const auto big = condition_s_estimate(m, {0, 0, 0}, radii, 1000000, 42);
    EXPECT_NEAR(big.theta_hat[0], 0.5, 0.002);
    EXPECT_LE(std::abs(big.theta_hat[0] - 0.5), std::abs(a.theta_hat[0] - 0.5) + 3 * a.std_error[0]);
}

TEST(ConditionS, CellCountingAgreesWithMonteCarlo) {
    const Grid g = cube(-1, 1, 16);
    const auto m = notched_cube_mask(g, {0, 0, 0});
    const Vec3 c{0.05, 0.02, -0.03};
    const double R = 0.6;
    // |Omega_R| by cell counting with subsampled fractions.
    const int sub = 8;
    double inside_vol = 0.0;
    for (std::size_t cell = 0; cell < g.cell_count(); ++cell) {
        if (!m.inside(cell)) continue;
        const auto ijk = g.cell_ijk(cell);
        const Vec3 lo = g.node_point(ijk[0], ijk[1], ijk[2]);
        for (int i = 0; i < sub; ++i)
            for (int j = 0; j < sub; ++j)
                for (int k = 0; k < sub; ++k) {
                    const Vec3 p{lo[0] + (i + 0.5) * g.h()[0] / sub, lo[1] + (j + 0.5) * g.h()[1] / sub,
                                 lo[2] + (k + 0.5) * g.h()[2] / sub};
                    if (distance(p, c) <= R) inside_vol += g.cell_volume() / (sub * sub * sub);
                }
    }
    const double frac_cells = 1.0 - inside_vol / (4.0 / 3.0 * M_PI * R * R * R);
    Rng rng(1);
    std::size_t out = 0, n = 0;
    while (n < 40000) {
        const Vec3 d{rng.uniform(-R, R), rng.uniform(-R, R), rng.uniform(-R, R)};
        if (dot(d, d) > R * R) continue;
        ++n;
        if (!m.in_domain_extended(c + d)) ++out;
    }
    const double p = static_cast<double>(out) / n;
    EXPECT_NEAR(frac_cells, p, 3.0 * std::sqrt(p * (1 - p) / n) + 0.005);
}

TEST(MaskExport, RoundTrip) {
    const Grid g = build_grid({{-1, 0, 0}, {1, 1, 2}}, {8, 4, 8});
    const auto m = notched_cube_mask(g, {0, 0.5, 1});
    const std::string path = ::testing::TempDir() + "mask.bin";
    export_mask(m, path);
    const auto back = import_mask(path);
    EXPECT_EQ(back.hash(), m.hash());
    std::remove(path.c_str());
}
