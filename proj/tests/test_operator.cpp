#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "greenlab/operator.hpp"

using namespace greenlab;

namespace {

// Cyclic Jacobi rotations; independent of Eigen.
double jacobi_min_eigenvalue(std::vector<std::vector<double>> a) {
    const std::size_t n = a.size();
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
        if (off < 1e-30) break;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(a[p][q]) < 1e-300) continue;
                const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a[k][p], akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a[p][k], aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
    }
    double m = a[0][0];
    for (std::size_t i = 1; i < n; ++i) m = std::min(m, a[i][i]);
    return m;
}

std::vector<std::vector<double>> symmetrized(const CoefficientTensor& t) {
    const int N = t.components();
    std::vector<std::vector<double>> m(3 * N, std::vector<double>(3 * N));
    for (int i = 0; i < N; ++i)
        for (int a = 0; a < 3; ++a)
            for (int j = 0; j < N; ++j)
                for (int b = 0; b < 3; ++b) m[i * 3 + a][j * 3 + b] = 0.5 * (t(a, b, i, j) + t(b, a, j, i));
    return m;
}

}  // namespace

TEST(CheckEllipticity, Identity) {
    auto r = check_ellipticity(CoefficientTensor::identity(2));
    EXPECT_NEAR(r.lambda_min, 1.0, 1e-14);
    EXPECT_NEAR(r.Lambda_frob, std::sqrt(6.0), 1e-14);
    auto s = check_ellipticity(CoefficientTensor::identity(1));
    EXPECT_NEAR(s.lambda_min, 1.0, 1e-14);
    EXPECT_NEAR(s.Lambda_frob, std::sqrt(3.0), 1e-14);
}

TEST(CheckEllipticity, CoupledMatchesJacobiOracle) {
    const auto t = CoefficientTensor::identity(2) + 0.1 * coupling_unit(2);
    const auto r = check_ellipticity(t);
    EXPECT_NEAR(r.lambda_min, jacobi_min_eigenvalue(symmetrized(t)), 1e-12);
    EXPECT_NEAR(r.lambda_min, 0.95, 1e-12);
}

TEST(CheckEllipticity, RandomTensorsMatchOracle) {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        CoefficientTensor t = CoefficientTensor::identity(3);
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b)
                for (int i = 0; i < 3; ++i)
                    for (int j = 0; j < 3; ++j) t(a, b, i, j) += 0.2 * rng.uniform(-1, 1);
        EXPECT_NEAR(check_ellipticity(t).lambda_min, jacobi_min_eigenvalue(symmetrized(t)), 1e-12);
    }
}

TEST(CheckEllipticity, NonFiniteRejected) {
    auto t = CoefficientTensor::identity(1);
    t(0, 0, 0, 0) = std::nan("");
    try {
        check_ellipticity(t);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::InvalidCoefficient);
    }
}

TEST(CheckEllipticity, TransposeInvariant) {
    Rng rng(3);
    CoefficientTensor t = CoefficientTensor::identity(2);
    for (double& v : t.data()) v += 0.3 * rng.uniform(-1, 1);
    EXPECT_NEAR(check_ellipticity(t).lambda_min, check_ellipticity(t.transposed()).lambda_min, 1e-13);
}

TEST(TransposeOperator, SymmetricIsFixed) {
    const auto s = identity_operator(2);
    const auto t = transpose_operator(s);
    const Vec3 x{0.1, 0.2, 0.3};
    EXPECT_TRUE(t.coeff(x) == s.coeff(x));
    EXPECT_EQ(t.lambda, s.lambda);
    EXPECT_EQ(t.Lambda, s.Lambda);
}

TEST(TransposeOperator, Involution) {
    const auto s = coupled_operator([](const Vec3& x) { return 0.1 * x[0]; }, 0.1, 2);
    const auto tt = transpose_operator(transpose_operator(s));
    for (const Vec3 x : {Vec3{0, 0, 0}, Vec3{1, 0.5, 0.2}}) EXPECT_TRUE(tt.coeff(x) == s.coeff(x));
}

TEST(TransposeOperator, ScalarIndexSwap) {
    OperatorSpec s;
    s.components = 1;
    s.coeff = [](const Vec3&) {
        auto t = CoefficientTensor::identity(1);
        t(0, 1, 0, 0) = 1.0;
        return t;
    };
    const auto t = transpose_operator(s).coeff({0, 0, 0});
    EXPECT_EQ(t(0, 1, 0, 0), 0.0);
    EXPECT_EQ(t(1, 0, 0, 0), 1.0);
}

TEST(DiagonalDistance, ExactScalarIsZero) {
    const auto spec = scalar_variable_operator(0.3, 1.0, 2);
    CoefficientField a = [](const Vec3& x) {
        return (1.0 + 0.3 * std::sin(M_PI * x[0]) * std::sin(M_PI * x[1]) * std::sin(M_PI * x[2])) *
               CoefficientTensor::identity(1);
    };
    std::vector<Vec3> pts{{0.1, 0.2, 0.3}, {0.5, 0.5, 0.5}, {-0.3, 0.7, 0.1}};
    const auto r = diagonal_distance(spec, a, pts);
    EXPECT_NEAR(r.eps_sup, 0.0, 1e-14);
}

TEST(DiagonalDistance, ConstantCoupling) {
    const auto spec = coupled_operator(-0.25, 2);
    CoefficientField a = [](const Vec3&) { return CoefficientTensor::identity(1); };
    std::vector<Vec3> pts{{0, 0, 0}, {1, 1, 1}};
    EXPECT_NEAR(diagonal_distance(spec, a, pts).eps_sup, 0.25, 1e-14);
}

TEST(DiagonalDistance, VaryingCouplingCellCenters) {
    const auto spec = coupled_operator([](const Vec3& x) { return x[0]; }, 1.0, 2);
    CoefficientField a = [](const Vec3&) { return CoefficientTensor::identity(1); };
    std::vector<Vec3> pts;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            for (int k = 0; k < 4; ++k) pts.push_back({(i + 0.5) / 4, (j + 0.5) / 4, (k + 0.5) / 4});
    const auto r = diagonal_distance(spec, a, pts);
    EXPECT_NEAR(r.eps_sup, 7.0 / 8.0, 1e-14);
    double m = 0.0;
    for (const auto& [p, e] : r.per_point) {
        EXPECT_GE(e, 0.0);
        m = std::max(m, e);
    }
    EXPECT_EQ(m, r.eps_sup);
}

TEST(DiagonalDistance, Homogeneous) {
    CoefficientField a = [](const Vec3&) { return CoefficientTensor::identity(1); };
    std::vector<Vec3> pts{{0.2, 0.4, 0.6}};
    const double e1 = diagonal_distance(coupled_operator(0.1, 2), a, pts).eps_sup;
    const double e3 = diagonal_distance(coupled_operator(-0.3, 2), a, pts).eps_sup;
    EXPECT_NEAR(e3, 3.0 * e1, 1e-14);
}

TEST(DiagonalDistance, DimensionMismatch) {
    CoefficientField bad = [](const Vec3&) { return CoefficientTensor::identity(2); };
    std::vector<Vec3> pts{{0, 0, 0}};
    EXPECT_THROW(diagonal_distance(identity_operator(2), bad, pts), Error);
}

TEST(DiagonalDistance, ZeroEpsImpliesScalarEllipticity) {
    const auto spec = scalar_operator("c", [](const Vec3&) { return 0.7; }, 0.7, 0.7, 2);
    EXPECT_NEAR(check_ellipticity(spec.coeff({0, 0, 0})).lambda_min, 0.7, 1e-14);
}

TEST(VmoModulus, ConstantIsZero) {
    std::vector<Vec3> c{{0, 0, 0}, {0.3, 0.1, 0.2}};
    std::vector<double> r{0.05, 0.1};
    EXPECT_EQ(vmo_modulus([](const Vec3&) { return 4.0; }, 0.1, c, r, 0.01).value, 0.0);
}

TEST(VmoModulus, LinearFieldMatchesClosedForm) {
    // mean over B_r of |x1| is (pi r^4 / 2) / (4/3 pi r^3) = 3r/8.
    const double delta = 0.2;
    std::vector<Vec3> c{{0, 0, 0}};
    std::vector<double> r{0.05, 0.1, 0.2};
    const auto m = vmo_modulus([](const Vec3& x) { return x[0]; }, delta, c, r, delta / 8);
    EXPECT_NEAR(m.value, 3.0 * delta / 8.0, 0.05 * 3.0 * delta / 8.0);
    EXPECT_EQ(m.samples, 3u);
}

TEST(VmoModulus, HalfSpaceIndicatorIsNotVmo) {
    auto f = [](const Vec3& x) { return x[2] > 0 ? 1.0 : 0.0; };
    std::vector<Vec3> c{{0, 0, 0}};
    for (double delta : {0.2, 0.02, 0.002}) {
        std::vector<double> r{delta};
        EXPECT_GT(vmo_modulus(f, delta, c, r, delta / 10).value, 0.45);
    }
}

TEST(VmoModulus, ShiftInvariantAndMonotone) {
    auto f = [](const Vec3& x) { return std::sin(3 * x[0]) * x[1]; };
    auto g = [&](const Vec3& x) { return f(x) + 5.0; };
    std::vector<Vec3> c{{0.1, 0.2, 0.3}, {0.5, -0.2, 0.0}};
    std::vector<double> small{0.05}, large{0.05, 0.1};
    const double a = vmo_modulus(f, 0.1, c, large, 0.01).value;
    EXPECT_NEAR(a, vmo_modulus(g, 0.1, c, large, 0.01).value, 1e-12);
    EXPECT_LE(vmo_modulus(f, 0.05, c, small, 0.01).value, a);
}

TEST(VmoModulus, RadiusAboveDeltaRejected) {
    std::vector<Vec3> c{{0, 0, 0}};
    std::vector<double> r{0.3};
    EXPECT_THROW(vmo_modulus([](const Vec3&) { return 0.0; }, 0.1, c, r, 0.01), Error);
}
