#pragma once
// Coefficient tensors A^{ab}_{ij} of divergence-form systems L u = -D_a (A^{ab} D_b u),
// their validation, and diagnostics (ellipticity, distance to diagonal systems,
// mean-oscillation modulus).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "greenlab/core.hpp"

namespace greenlab {

/// Dense 4-index array A^{alpha beta}_{ij}, alpha,beta in [0,3), i,j in [0,N).
class CoefficientTensor {
public:
    CoefficientTensor() = default;
    explicit CoefficientTensor(int components) : n_(components), a_(9 * components * components, 0.0) {
        require(components >= 1, ErrorKind::DimensionMismatch, "system size must be >= 1");
    }

    static CoefficientTensor identity(int components) {
        CoefficientTensor t(components);
        for (int a = 0; a < kDim; ++a)
            for (int i = 0; i < components; ++i) t(a, a, i, i) = 1.0;
        return t;
    }

    int components() const noexcept { return n_; }
    std::size_t size() const noexcept { return a_.size(); }

    double& operator()(int alpha, int beta, int i, int j) { return a_[index(alpha, beta, i, j)]; }
    double operator()(int alpha, int beta, int i, int j) const { return a_[index(alpha, beta, i, j)]; }

    std::span<const double> data() const noexcept { return a_; }
    std::span<double> data() noexcept { return a_; }

    bool all_finite() const {
        return std::all_of(a_.begin(), a_.end(), [](double v) { return std::isfinite(v); });
    }

    double frobenius() const {
        double s = 0.0;
        for (double v : a_) s += v * v;
        return std::sqrt(s);
    }

    /// Coefficients of the transpose operator: (tA)^{ab}_{ij} = A^{ba}_{ji}.
    CoefficientTensor transposed() const {
        CoefficientTensor t(n_);
        for (int a = 0; a < kDim; ++a)
            for (int b = 0; b < kDim; ++b)
                for (int i = 0; i < n_; ++i)
                    for (int j = 0; j < n_; ++j) t(a, b, i, j) = (*this)(b, a, j, i);
        return t;
    }

    CoefficientTensor& operator+=(const CoefficientTensor& o) {
        check_same(o);
        for (std::size_t k = 0; k < a_.size(); ++k) a_[k] += o.a_[k];
        return *this;
    }
    CoefficientTensor& operator-=(const CoefficientTensor& o) {
        check_same(o);
        for (std::size_t k = 0; k < a_.size(); ++k) a_[k] -= o.a_[k];
        return *this;
    }
    CoefficientTensor& operator*=(double s) {
        for (double& v : a_) v *= s;
        return *this;
    }
    friend CoefficientTensor operator+(CoefficientTensor a, const CoefficientTensor& b) { return a += b; }
    friend CoefficientTensor operator-(CoefficientTensor a, const CoefficientTensor& b) { return a -= b; }
    friend CoefficientTensor operator*(double s, CoefficientTensor a) { return a *= s; }
    friend bool operator==(const CoefficientTensor& a, const CoefficientTensor& b) {
        return a.n_ == b.n_ && a.a_ == b.a_;
    }

private:
    std::size_t index(int alpha, int beta, int i, int j) const {
        return static_cast<std::size_t>(((alpha * kDim + beta) * n_ + i) * n_ + j);
    }
    void check_same(const CoefficientTensor& o) const {
        require(o.n_ == n_, ErrorKind::DimensionMismatch, "tensor system sizes differ");
    }

    int n_ = 0;
    std::vector<double> a_;
};

struct EllipticityReport {
    double lambda_min = 0.0;    ///< smallest eigenvalue of the symmetrized Legendre form
    double Lambda_frob = 0.0;   ///< Frobenius norm of the tensor
};

/// The symmetrized (3N)x(3N) Legendre matrix M[(i,a),(j,b)] = (A^{ab}_{ij} + A^{ba}_{ji}) / 2.
inline Eigen::MatrixXd legendre_matrix(const CoefficientTensor& t) {
    const int n = t.components();
    Eigen::MatrixXd m(kDim * n, kDim * n);
    for (int i = 0; i < n; ++i)
        for (int a = 0; a < kDim; ++a)
            for (int j = 0; j < n; ++j)
                for (int b = 0; b < kDim; ++b)
                    m(i * kDim + a, j * kDim + b) = 0.5 * (t(a, b, i, j) + t(b, a, j, i));
    return m;
}

inline EllipticityReport check_ellipticity(const CoefficientTensor& t) {
    require(t.components() >= 1 && t.size() == static_cast<std::size_t>(9 * t.components() * t.components()),
            ErrorKind::DimensionMismatch, "tensor shape must be 3x3xNxN");
    require(t.all_finite(), ErrorKind::InvalidCoefficient, "non-finite coefficient entry");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(legendre_matrix(t), Eigen::EigenvaluesOnly);
    return {eig.eigenvalues().minCoeff(), t.frobenius()};
}

using CoefficientField = std::function<CoefficientTensor(const Vec3&)>;

/// A coefficient field with its claimed ellipticity constants. The claims are
/// checked whenever the field is sampled on a grid (see SampledOperator in fem.hpp).
struct OperatorSpec {
    std::string name;
    int components = 1;
    CoefficientField coeff;
    double lambda = 1.0;
    double Lambda = 1.0;
    /// True when A^{ab}_{ij} = A^{ba}_{ji} everywhere; a hint only, sampling re-checks it.
    bool self_adjoint = false;
};

inline OperatorSpec transpose_operator(const OperatorSpec& spec) {
    OperatorSpec t = spec;
    t.name = spec.name + "^t";
    auto inner = spec.coeff;
    t.coeff = [inner](const Vec3& x) { return inner(x).transposed(); };
    return t;
}

// ---------------------------------------------------------------------------
// Builtin coefficient fields.

inline OperatorSpec identity_operator(int components) {
    OperatorSpec s;
    s.name = "identity";
    s.components = components;
    auto t = CoefficientTensor::identity(components);
    s.coeff = [t](const Vec3&) { return t; };
    s.lambda = 1.0;
    s.Lambda = t.frobenius();
    s.self_adjoint = true;
    return s;
}

/// The fixed off-diagonal unit perturbation E: a single entry E^{12}_{12} = 1 (zero-based
/// alpha=0, beta=1, i=0, j=1). Nonsymmetric, with |E|_F = 1.
inline CoefficientTensor coupling_unit(int components = 2) {
    require(components >= 2, ErrorKind::DimensionMismatch, "coupling needs N >= 2");
    CoefficientTensor e(components);
    e(0, 1, 0, 1) = 1.0;
    return e;
}

/// A = I + kappa(x) E. The symmetrized Legendre form has lambda_min = 1 - |kappa|/2.
inline OperatorSpec coupled_operator(std::function<double(const Vec3&)> kappa, double kappa_max, int components = 2) {
    OperatorSpec s;
    s.name = "coupled";
    s.components = components;
    const auto id = CoefficientTensor::identity(components);
    const auto e = coupling_unit(components);
    s.coeff = [id, e, kappa](const Vec3& x) { return id + kappa(x) * e; };
    s.lambda = 1.0 - 0.5 * std::abs(kappa_max);
    s.Lambda = std::sqrt(3.0 * components + kappa_max * kappa_max);
    s.self_adjoint = kappa_max == 0.0;
    return s;
}

inline OperatorSpec coupled_operator(double kappa, int components = 2) {
    auto s = coupled_operator([kappa](const Vec3&) { return kappa; }, kappa, components);
    return s;
}

/// Scalar field a(x) delta^{ab} delta_{ij} lifted to N components.
inline OperatorSpec scalar_operator(std::string name, std::function<double(const Vec3&)> a, double a_min,
                                    double a_max, int components = 1) {
    require(a_min > 0.0 && a_max >= a_min, ErrorKind::InvalidCoefficient, "scalar bounds must satisfy 0 < min <= max");
    OperatorSpec s;
    s.name = std::move(name);
    s.components = components;
    const auto id = CoefficientTensor::identity(components);
    s.coeff = [id, a](const Vec3& x) { return a(x) * id; };
    s.lambda = a_min;
    s.Lambda = a_max * std::sqrt(3.0 * components);
    s.self_adjoint = true;
    return s;
}

/// a(x) = 1 + amp * sin(freq pi x1) sin(freq pi x2) sin(freq pi x3), |amp| < 1.
inline OperatorSpec scalar_variable_operator(double amp, double freq, int components = 1) {
    require(std::abs(amp) < 1.0, ErrorKind::InvalidCoefficient, "scalar-variable amplitude must be < 1");
    auto a = [amp, freq](const Vec3& x) {
        return 1.0 + amp * std::sin(freq * M_PI * x[0]) * std::sin(freq * M_PI * x[1]) * std::sin(freq * M_PI * x[2]);
    };
    return scalar_operator("scalar-variable", a, 1.0 - std::abs(amp), 1.0 + std::abs(amp), components);
}

/// a(x) = 1 + amp * exp(-|x - center|^2 / (2 width^2)); a smooth bump perturbation of the identity.
inline OperatorSpec scalar_bump_operator(double amp, Vec3 center, double width, int components = 1) {
    require(amp > -1.0, ErrorKind::InvalidCoefficient, "bump amplitude must exceed -1");
    require(width > 0.0, ErrorKind::InvalidArgument, "bump width must be positive");
    auto a = [amp, center, width](const Vec3& x) {
        const Vec3 d = x - center;
        return 1.0 + amp * std::exp(-dot(d, d) / (2.0 * width * width));
    };
    return scalar_operator("scalar-bump", a, std::min(1.0, 1.0 + amp), std::max(1.0, 1.0 + amp), components);
}

/// Piecewise constant a_lo / a_hi on a checkerboard of cubes with edge `period`.
inline OperatorSpec checkerboard_operator(double a_lo, double a_hi, double period, int components = 1) {
    require(period > 0.0, ErrorKind::InvalidArgument, "checkerboard period must be positive");
    auto a = [a_lo, a_hi, period](const Vec3& x) {
        long parity = 0;
        for (double c : x) parity += static_cast<long>(std::floor(c / period));
        return (parity % 2 == 0) ? a_hi : a_lo;
    };
    return scalar_operator("checkerboard", a, std::min(a_lo, a_hi), std::max(a_lo, a_hi), components);
}

// ---------------------------------------------------------------------------
// Distance to diagonal systems.

struct PerturbationReport {
    double eps_sup = 0.0;
    std::vector<std::pair<Vec3, double>> per_point;
};

/// eps(x) = |A(x) - a(x) delta|_F at each sample point. `scalar` must be an N = 1 field
/// that is itself strongly elliptic.
inline PerturbationReport diagonal_distance(const OperatorSpec& spec, const CoefficientField& scalar,
                                            std::span<const Vec3> points) {
    PerturbationReport rep;
    rep.per_point.reserve(points.size());
    for (const Vec3& x : points) {
        const CoefficientTensor a = scalar(x);
        require(a.components() == 1, ErrorKind::DimensionMismatch, "scalar coefficient field must have N = 1");
        const auto ell = check_ellipticity(a);
        require(ell.lambda_min > 0.0, ErrorKind::InvalidCoefficient, "scalar coefficient field is not elliptic");
        const CoefficientTensor full = spec.coeff(x);
        require(full.components() == spec.components, ErrorKind::DimensionMismatch,
                "coefficient field returned wrong system size");
        CoefficientTensor diag(spec.components);
        for (int al = 0; al < kDim; ++al)
            for (int be = 0; be < kDim; ++be)
                for (int i = 0; i < spec.components; ++i) diag(al, be, i, i) = a(al, be, 0, 0);
        const double eps = (full - diag).frobenius();
        rep.per_point.emplace_back(x, eps);
        rep.eps_sup = std::max(rep.eps_sup, eps);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Mean-oscillation modulus.

struct VmoModulus {
    double delta = 0.0;
    double value = 0.0;
    std::size_t samples = 0;
};

/// M_delta(f) estimated as the max over sampled (center, r <= delta) of the mean of
/// |f - f_B| over B = B_r(center). Means use midpoint quadrature on a lattice of
/// spacing h aligned with the ball's bounding cube.
inline VmoModulus vmo_modulus(const std::function<double(const Vec3&)>& f, double delta,
                              std::span<const Vec3> centers, std::span<const double> radii, double h) {
    require(delta > 0.0, ErrorKind::InvalidArgument, "delta must be positive");
    require(h > 0.0, ErrorKind::InvalidArgument, "quadrature spacing must be positive");
    require(!centers.empty() && !radii.empty(), ErrorKind::InvalidArgument, "empty sample set");
    VmoModulus out;
    out.delta = delta;
    std::vector<double> vals;
    for (double r : radii) {
        require(r > 0.0 && r <= delta * (1.0 + 1e-12), ErrorKind::InvalidArgument, "radius exceeds delta");
        const int m = static_cast<int>(std::ceil(r / h));
        for (const Vec3& c : centers) {
            vals.clear();
            for (int i = -m; i < m; ++i)
                for (int j = -m; j < m; ++j)
                    for (int k = -m; k < m; ++k) {
                        const Vec3 d{(i + 0.5) * h, (j + 0.5) * h, (k + 0.5) * h};
                        if (dot(d, d) <= r * r) vals.push_back(f(c + d));
                    }
            if (vals.empty()) continue;
            double mean = 0.0;
            for (double v : vals) mean += v;
            mean /= static_cast<double>(vals.size());
            double osc = 0.0;
            for (double v : vals) osc += std::abs(v - mean);
            osc /= static_cast<double>(vals.size());
            out.value = std::max(out.value, osc);
            ++out.samples;
        }
    }
    require(out.samples > 0, ErrorKind::InvalidArgument, "no resolvable (center, radius) pair");
    return out;
}

}  // namespace greenlab
