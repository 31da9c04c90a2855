#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <vector>

#include "greenlab/fem.hpp"

using namespace greenlab;

namespace {

Grid cube(double lo, double hi, int n) { return build_grid({{lo, lo, lo}, {hi, hi, hi}}, {n, n, n}); }

// Random field supported on interior nodes.
DiscreteField random_interior(const LinearSystem& sys, std::uint64_t seed) {
    DiscreteField u(sys.mask(), sys.components());
    Rng rng(seed);
    for (std::size_t p : sys.row_nodes())
        for (int i = 0; i < sys.components(); ++i) u.at(p, i) = rng.uniform(-1, 1);
    return u;
}

double max_transpose_mismatch(const LinearSystem& a, const LinearSystem& b) {
    // Entry (p,i;q,j) of a against entry (q,j;p,i) of b, over DOF pairs.
    const int n = a.components();
    const auto rows = a.row_nodes();
    std::vector<long> row_of(a.grid().node_count(), -1);
    for (std::size_t r = 0; r < rows.size(); ++r) row_of[rows[r]] = static_cast<long>(r);
    double worst = 0.0;
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (int o = 0; o < 27; ++o) {
            const long q = row_of[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(rows[r]) + a.stride(o))];
            if (q < 0) continue;
            const double* x = a.block(r, o);
            const double* y = b.block(static_cast<std::size_t>(q), 26 - o);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) worst = std::max(worst, std::abs(x[i * n + j] - y[j * n + i]));
        }
    return worst;
}

}  // namespace

TEST(Assemble, LaplacianDiagonalAndStencil) {
    const Grid g = cube(0, 1, 8);
    const auto sys = assemble(identity_operator(1), full_box_mask(g));
    const double h = 1.0 / 8;
    const std::size_t r = 100;
    EXPECT_NEAR(sys.block(r, 13)[0], 8.0 * h / 3.0, 1e-14);
    EXPECT_NEAR(sys.block(r, LinearSystem::offset_index(1, 0, 0))[0], 0.0, 1e-14);
    EXPECT_NEAR(sys.block(r, LinearSystem::offset_index(1, 1, 0))[0], -h / 6.0, 1e-14);
    EXPECT_NEAR(sys.block(r, LinearSystem::offset_index(1, 1, 1))[0], -h / 12.0, 1e-14);
    EXPECT_LE(max_transpose_mismatch(sys, sys), 1e-14);
}

TEST(Assemble, TransposeOperatorGivesTransposeMatrix) {
    const Grid g = cube(-1, 1, 8);
    const auto mask = notched_cube_mask(g, {0, 0, 0});
    const auto spec = coupled_operator([](const Vec3& x) { return 0.2 * x[0]; }, 0.2, 2);
    const auto a = assemble(spec, mask);
    const auto b = assemble(transpose_operator(spec), mask);
    EXPECT_FALSE(a.symmetric());
    EXPECT_LE(max_transpose_mismatch(a, b), 1e-14);
    EXPECT_GT(max_transpose_mismatch(a, a), 1e-3);
}

TEST(Assemble, IdentityFormIsDirichletEnergy) {
    const Grid g = cube(0, 1, 6);
    const auto sys = assemble(identity_operator(1), full_box_mask(g));
    const auto u = random_interior(sys, 1);
    const double q = sys.bilinear(u, u);
    EXPECT_NEAR(q, grad_l2_squared_exact(u), 1e-12 * q);
}

TEST(Assemble, CoercivityOnRandomVectors) {
    const Grid g = cube(-1, 1, 6);
    const auto spec = coupled_operator(0.4, 2);
    const SampledOperator op(spec, g);
    const LinearSystem sys(op, half_space_mask(g, 1, -0.3));
    for (std::uint64_t s = 0; s < 64; ++s) {
        const auto u = random_interior(sys, s + 100);
        const double q = sys.bilinear(u, u);
        const double d = grad_l2_squared_exact(u);
        EXPECT_GE(q, op.lambda_min() * d * (1.0 - 1e-10));
    }
}

TEST(Assemble, ApplyMatchesBilinearForm) {
    const Grid g = cube(0, 1, 5);
    const auto sys = assemble(coupled_operator(0.3, 2), full_box_mask(g));
    const auto u = random_interior(sys, 4), v = random_interior(sys, 5);
    std::vector<double> ku(sys.vector_size());
    sys.apply(u.values(), ku);
    double s = 0.0;
    for (std::size_t i = 0; i < ku.size(); ++i) s += ku[i] * v.values()[i];
    EXPECT_NEAR(s, sys.bilinear(u, v), 1e-12);
}

TEST(Assemble, ClaimedLambdaValidated) {
    auto spec = identity_operator(1);
    spec.lambda = 1.5;
    EXPECT_THROW(SampledOperator(spec, cube(0, 1, 2)), Error);
}

TEST(Assemble, ThreadCountIndependent) {
    const Grid g = cube(0, 1, 10);
    const auto spec = scalar_variable_operator(0.3, 2.0, 1);
    set_thread_count(1);
    const auto a = assemble(spec, full_box_mask(g));
    set_thread_count(3);
    const auto b = assemble(spec, full_box_mask(g));
    set_thread_count(1);
    for (std::size_t r = 0; r < a.row_nodes().size(); ++r)
        for (int o = 0; o < 27; ++o) ASSERT_EQ(a.block(r, o)[0], b.block(r, o)[0]);
}

TEST(Solve, ZeroRhsGivesZero) {
    const auto sys = assemble(identity_operator(2), full_box_mask(cube(0, 1, 6)));
    std::vector<double> load(sys.vector_size(), 0.0);
    const auto res = solve_dirichlet(sys, load, {});
    EXPECT_EQ(res.field.max_abs(), 0.0);
}

TEST(Solve, SineEigenfunction) {
    const Grid g = cube(0, 1, 32);
    const auto mask = full_box_mask(g);
    const auto sys = assemble(identity_operator(1), mask);
    auto exact = [](const Vec3& x) { return std::sin(M_PI * x[0]) * std::sin(M_PI * x[1]) * std::sin(M_PI * x[2]); };
    const auto load = load_vector(mask, 1, [&](const Vec3& x) { return std::vector<double>{3 * M_PI * M_PI * exact(x)}; });
    const auto res = solve_dirichlet(sys, load, {});
    EXPECT_LE(res.stats.relative_residual, 1e-8);
    const auto ue = DiscreteField::interpolate_function(mask, 1, [&](const Vec3& x) { return std::vector<double>{exact(x)}; });
    DiscreteField err(mask, 1);
    for (std::size_t n = 0; n < g.node_count(); ++n) err.at(n, 0) = res.field.at(n, 0) - ue.at(n, 0);
    const auto all = domain_region(mask);
    EXPECT_LE(lp_norm(err, 2, all) / lp_norm(ue, 2, all), 0.02);
    // Boundary values vanish exactly.
    for (auto n : mask.boundary_nodes()) EXPECT_EQ(res.field.at(n, 0), 0.0);
}

TEST(Solve, SineErrorIsSecondOrder) {
    double prev = 0.0;
    for (int n : {8, 16}) {
        const Grid g = cube(0, 1, n);
        const auto mask = full_box_mask(g);
        const auto sys = assemble(identity_operator(1), mask);
        auto exact = [](const Vec3& x) { return std::sin(M_PI * x[0]) * std::sin(M_PI * x[1]) * std::sin(M_PI * x[2]); };
        const auto load =
            load_vector(mask, 1, [&](const Vec3& x) { return std::vector<double>{3 * M_PI * M_PI * exact(x)}; });
        const auto res = solve_dirichlet(sys, load, {});
        double e = 0.0;
        for (std::size_t k = 0; k < g.node_count(); ++k)
            e = std::max(e, std::abs(res.field.at(k, 0) - exact(g.node_point(k))));
        if (prev > 0.0) EXPECT_NEAR(std::log2(prev / e), 2.0, 0.3);
        prev = e;
    }
}

TEST(Solve, LinearBoundaryDataIsExact) {
    const Grid g = cube(-1, 1, 10);
    const auto mask = notched_cube_mask(g, {0.2, 0.2, 0.2});
    const auto sys = assemble(identity_operator(1), mask);
    std::vector<double> load(sys.vector_size(), 0.0), bc(sys.vector_size(), 0.0);
    for (std::size_t n = 0; n < g.node_count(); ++n) bc[n] = g.node_point(n)[0];
    SolverSettings s;
    s.rel_tol = 1e-12;
    const auto res = solve_dirichlet(sys, load, s, bc);
    for (std::size_t n = 0; n < g.node_count(); ++n)
        if (mask.node_kind(n) != NodeKind::Exterior) EXPECT_NEAR(res.field.at(n, 0), g.node_point(n)[0], 1e-9);
}

TEST(Solve, NonsymmetricUsesBiCGStab) {
    const Grid g = cube(-1, 1, 12);
    const auto sys = assemble(coupled_operator(0.3, 2), full_box_mask(g));
    const auto f = averaged_indicator_rhs(sys.mask(), {0, 0, 0}, 0.4, 1);
    const auto res = solve_dirichlet(sys, f, {});
    EXPECT_EQ(res.stats.method, "bicgstab-jacobi");
    EXPECT_LE(res.stats.relative_residual, 1e-8);
}

TEST(Solve, IterationLimitCarriesHistory) {
    const auto sys = assemble(identity_operator(1), full_box_mask(cube(0, 1, 16)));
    const auto f = averaged_indicator_rhs(sys.mask(), {0.5, 0.5, 0.5}, 0.2, 0);
    SolverSettings s;
    s.max_iter = 2;
    try {
        solve_dirichlet(sys, f, s);
        FAIL();
    } catch (const IterationLimitError& e) {
        EXPECT_EQ(e.kind(), ErrorKind::IterationLimit);
        EXPECT_GE(e.residual_history().size(), 2u);
    }
}

TEST(Solve, DeterministicAcrossThreadCounts) {
    const auto sys = assemble(scalar_variable_operator(0.4, 1.0, 1), full_box_mask(cube(-1, 1, 16)));
    const auto f = averaged_indicator_rhs(sys.mask(), {0.1, 0, 0}, 0.3, 0);
    set_thread_count(1);
    const auto a = solve_dirichlet(sys, f, {});
    const auto a2 = solve_dirichlet(sys, f, {});
    set_thread_count(3);
    const auto b = solve_dirichlet(sys, f, {});
    set_thread_count(1);
    EXPECT_EQ(a.field.max_abs(), a2.field.max_abs());
    EXPECT_LE(a.stats.relative_residual, 1e-8);
    EXPECT_LE(b.stats.relative_residual, 1e-8);
    EXPECT_EQ(a.stats.iterations, b.stats.iterations);
}

TEST(Solve, SettingsValidated) {
    SolverSettings s;
    s.rel_tol = 1.5;
    EXPECT_THROW(s.validate(), Error);
}

TEST(AveragedIndicator, ConstantsAndZero) {
    const Grid g = cube(-1, 1, 16);
    const auto mask = half_space_mask(g, 2, 0.0);
    const auto f = averaged_indicator_rhs(mask, {0.1, 0, 0.05}, 0.3, 1);
    DiscreteField u(mask, 2);
    for (std::size_t n = 0; n < g.node_count(); ++n) {
        u.at(n, 0) = 5.0;
        u.at(n, 1) = 2.5;
    }
    EXPECT_NEAR(f.apply(u), 2.5, 1e-12);
    for (std::size_t n = 0; n < g.node_count(); ++n) u.at(n, 1) = 0.0;
    EXPECT_EQ(f.apply(u), 0.0);
}

TEST(AveragedIndicator, BallCentroid) {
    const Grid g = cube(-1, 1, 32);
    const auto mask = full_box_mask(g);
    const Vec3 y{0.13, -0.2, 0.05};
    const auto f = averaged_indicator_rhs(mask, y, 0.25, 0);
    const auto u = DiscreteField::interpolate_function(mask, 1, [](const Vec3& x) { return std::vector<double>{x[0]}; });
    EXPECT_NEAR(f.apply(u), y[0], 1e-3);
    EXPECT_NEAR(f.measure, 4.0 / 3.0 * M_PI * std::pow(0.25, 3), 0.01 * f.measure);
}

TEST(AveragedIndicator, Preconditions) {
    const Grid g = cube(-1, 1, 16);
    const auto mask = half_space_mask(g, 2, 0.0);
    EXPECT_THROW(averaged_indicator_rhs(mask, {0, 0, 0.5}, 0.1, 0), Error);  // rho < 2h
    EXPECT_THROW(averaged_indicator_rhs(mask, {0, 0, -0.5}, 0.3, 0), Error);
}

TEST(AveragedIndicator, StencilMatchesDirect) {
    const Grid g = cube(-1, 1, 16);
    const auto mask = notched_cube_mask(g, {0.5, 0.5, 0.5});
    const NodeBallStencil st(mask, 0.2);
    Rng rng(2);
    DiscreteField u(mask, 1);
    for (double& v : u.values()) v = rng.uniform(-1, 1);
    for (const Vec3 p : {Vec3{0, 0, 0}, Vec3{0.375, 0.5, 0.625}, Vec3{-0.875, 0.125, 0.25}}) {
        const auto node = g.nearest_node(p);
        const double direct = averaged_indicator_rhs(mask, g.node_point(node), 0.2, 0, 0.0).apply(u);
        EXPECT_NEAR(st.apply(u, node, 0), direct, 1e-12);
    }
}

TEST(PointEvaluation, TrilinearWeights) {
    const Grid g = cube(0, 1, 4);
    const auto mask = full_box_mask(g);
    const auto u = DiscreteField::interpolate_function(
        mask, 1, [](const Vec3& x) { return std::vector<double>{1 + 2 * x[0] - x[1] + 3 * x[2] + x[0] * x[1] * x[2]}; });
    const Vec3 x{0.3, 0.6, 0.9};
    EXPECT_NEAR(point_evaluation(mask, x, 0).apply(u), u.interpolate(x)[0], 1e-14);
}

TEST(Norms, ConstantAndLinear) {
    const Grid g = cube(0, 1, 8);
    const auto mask = full_box_mask(g);
    const auto one = DiscreteField::interpolate_function(mask, 1, [](const Vec3&) { return std::vector<double>{1.0}; });
    const auto half = slab_mask(g, 0, 0.0, 0.5);
    const auto one_half = DiscreteField::interpolate_function(half, 1, [](const Vec3&) { return std::vector<double>{1.0}; });
    EXPECT_NEAR(lp_norm(one, 3, domain_region(mask)), 1.0, 1e-14);
    EXPECT_NEAR(lp_norm(one_half, 3, domain_region(half)), std::pow(0.5, 1.0 / 3.0), 1e-14);
    const auto lin = DiscreteField::interpolate_function(mask, 1, [](const Vec3& x) { return std::vector<double>{x[0]}; });
    EXPECT_NEAR(grad_l2(lin, domain_region(mask)), 1.0, 1e-13);
    EXPECT_THROW(lp_norm(one, 2, Region{}), Error);
}

TEST(Norms, SobolevRatioStableUnderRefinement) {
    auto bump = [](const Vec3& x) {
        const double r2 = dot(x, x) / 0.36;
        return std::vector<double>{r2 < 1 ? std::pow(1 - r2, 3) : 0.0};
    };
    std::vector<double> ratios;
    for (int n : {24, 48}) {
        const auto mask = full_box_mask(cube(-1, 1, n));
        const auto u = DiscreteField::interpolate_function(mask, 1, bump);
        const auto all = domain_region(mask);
        ratios.push_back(lp_norm(u, 6, all) / grad_l2(u, all));
    }
    EXPECT_NEAR(ratios[1] / ratios[0], 1.0, 0.02);
    EXPECT_LT(ratios[1], 1.0);
}

TEST(Holder, Examples) {
    const Grid g = cube(0, 1, 6);
    const auto mask = full_box_mask(g);
    const auto nodes = region_nodes(g, domain_region(mask));
    const auto lin = DiscreteField::interpolate_function(mask, 1, [](const Vec3& x) { return std::vector<double>{x[0]}; });
    EXPECT_NEAR(holder_seminorm(lin, nodes, 1.0), 1.0, 1e-12);
    const auto c = DiscreteField::interpolate_function(mask, 1, [](const Vec3&) { return std::vector<double>{2.0}; });
    EXPECT_EQ(holder_seminorm(c, nodes, 0.5), 0.0);
    const Grid g2 = cube(-0.25, 0.25, 8);
    const auto m2 = full_box_mask(g2);
    const auto root =
        DiscreteField::interpolate_function(m2, 1, [](const Vec3& x) { return std::vector<double>{std::sqrt(norm(x))}; });
    const auto n2 = region_nodes(g2, domain_region(m2));
    EXPECT_NEAR(holder_seminorm(root, n2, 0.5), 1.0, 0.1);
    std::vector<std::size_t> one{0};
    EXPECT_THROW(holder_seminorm(c, one, 0.5), Error);
}

TEST(Holder, SubsampledIsDeterministic) {
    const Grid g = cube(0, 1, 8);
    const auto mask = full_box_mask(g);
    const auto nodes = region_nodes(g, domain_region(mask));
    const auto u = DiscreteField::interpolate_function(
        mask, 1, [](const Vec3& x) { return std::vector<double>{std::sin(4 * x[0]) * x[1]}; });
    const double a = holder_seminorm(u, nodes, 0.7, 5000, 3);
    EXPECT_EQ(a, holder_seminorm(u, nodes, 0.7, 5000, 3));
    EXPECT_LE(a, holder_seminorm(u, nodes, 0.7));
}

TEST(Distribution, ConstantField) {
    const Grid g = cube(0, 2, 4);
    const auto mask = full_box_mask(g);
    const auto u = DiscreteField::interpolate_function(mask, 1, [](const Vec3&) { return std::vector<double>{3.0}; });
    std::vector<double> t{1.0, 2.9, 3.0, 4.0};
    const auto d = distribution_function(cell_magnitudes(u, domain_region(mask), MagnitudeKind::Value), t);
    EXPECT_DOUBLE_EQ(d.measures[0], 8.0);
    EXPECT_DOUBLE_EQ(d.measures[1], 8.0);
    EXPECT_EQ(d.measures[2], 0.0);
    EXPECT_EQ(d.measures[3], 0.0);
}

TEST(Distribution, LaplaceKernelSuperlevelSets) {
    const Grid g = cube(-1, 1, 48);
    const auto mask = full_box_mask(g);
    const auto u = DiscreteField::interpolate_function(
        mask, 1, [](const Vec3& x) { return std::vector<double>{1.0 / (4 * M_PI * std::max(norm(x), 1e-3))}; });
    const auto region = ball_region(mask, {0, 0, 0}, 1.0);
    std::vector<double> t;
    for (double r : {0.6, 0.45, 0.35, 0.25}) t.push_back(1.0 / (4 * M_PI * r));
    const auto d = distribution_function(cell_magnitudes(u, region, MagnitudeKind::Value), t);
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double exact = 4.0 / 3.0 * M_PI * std::pow(4 * M_PI * t[i], -3.0);
        EXPECT_NEAR(d.measures[i] / exact, 1.0, 0.05) << t[i];
        if (i) EXPECT_LE(d.measures[i], d.measures[i - 1]);
    }
    std::vector<double> bad{2.0, 1.0};
    EXPECT_THROW(distribution_function(cell_magnitudes(u, region, MagnitudeKind::Value), bad), Error);
}

TEST(Poincare, HalfSpaceRatioBelowInverseTheta) {
    const Grid g = cube(-1, 1, 32);
    const auto mask = half_space_mask(g, 2, 0.0);
    const Vec3 c{0, 0, 0};
    for (double cap : {0.1, 0.3, 10.0}) {
        const auto u = DiscreteField::interpolate_function(
            mask, 1, [cap](const Vec3& x) { return std::vector<double>{std::min(std::max(x[2], 0.0), cap)}; });
        const auto r = boundary_poincare_ratio(u, c, 0.5);
        EXPECT_FALSE(r.condition_s_violated);
        EXPECT_NEAR(r.theta, 0.5, 0.02);
        EXPECT_LE(r.ratio, 1.0 / r.theta);
    }
}

TEST(Poincare, FullBoxFlagsConditionS) {
    const Grid g = cube(0, 1, 8);
    const auto mask = full_box_mask(g);
    const auto u = DiscreteField::interpolate_function(mask, 1, [](const Vec3& x) { return std::vector<double>{x[2]}; });
    EXPECT_TRUE(boundary_poincare_ratio(u, {0.5, 0.5, 0.0}, 0.3).condition_s_violated);
    const auto z = DiscreteField(mask, 1);
    EXPECT_THROW(boundary_poincare_ratio(z, {0.5, 0.5, 0.0}, 0.3), Error);
}

TEST(Caccioppoli, BoundedAndStableUnderRefinement) {
    // L u = 0 in the half ball with u = 0 on the flat part, random data on the sphere.
    const double R = 0.9, r = 0.45;
    std::vector<double> worst;
    for (int n : {16, 24}) {
        const Grid g = build_grid({{-1, -1, 0}, {1, 1, 1}}, {n, n, n / 2});
        const auto mask = mask_from_predicate(g, [R](const Vec3& x) { return x[2] > 0 && norm(x) < R; });
        const auto sys = assemble(scalar_variable_operator(0.3, 1.0, 1), mask);
        std::vector<double> load(sys.vector_size(), 0.0);
        double c = 0.0;
        for (int m = 0; m < 16; ++m) {
            Rng rng(splitmix64(1000 + m));
            // Smooth random data: a few random modes, vanishing on x3 = 0.
            const double a = rng.gaussian(), b = rng.gaussian(), d = rng.gaussian(), e = rng.gaussian();
            std::vector<double> bc(sys.vector_size(), 0.0);
            for (std::size_t k = 0; k < g.node_count(); ++k) {
                const Vec3 x = g.node_point(k);
                bc[k] = x[2] * (a + b * x[0] + d * x[1] + e * std::sin(3 * x[0] + x[1]));
            }
            const auto u = solve_dirichlet(sys, load, {}, bc).field;
            const double ratio =
                grad_l2(u, ball_region(mask, {0, 0, 0}, r)) * (R - r) / lp_norm(u, 2, ball_region(mask, {0, 0, 0}, R));
            EXPECT_TRUE(std::isfinite(ratio));
            c = std::max(c, ratio);
        }
        worst.push_back(c);
    }
    EXPECT_LT(worst[1], 10.0);
    EXPECT_NEAR(worst[1] / worst[0], 1.0, 0.15);
}

TEST(FieldExport, RoundTrip) {
    const Grid g = cube(0, 1, 4);
    const auto mask = full_box_mask(g);
    Rng rng(1);
    DiscreteField u(mask, 2);
    for (double& v : u.values()) v = rng.gaussian();
    const std::string stem = ::testing::TempDir() + "field";
    export_field(u, stem);
    const auto back = import_field(mask, stem);
    for (std::size_t i = 0; i < u.values().size(); ++i) EXPECT_EQ(back.values()[i], u.values()[i]);
    const auto side = field_sidecar(u);
    EXPECT_EQ(side["N"], 2);
    EXPECT_EQ(side["dims"][0], 5);
    std::remove((stem + ".f64").c_str());
    std::remove((stem + ".json").c_str());
}
