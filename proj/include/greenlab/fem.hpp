#pragma once
// Q1 finite elements on staircase domains: assembly of the bilinear form
//   B(u, v) = sum_cells int A^{ab}_{ij} D_b u^j D_a v^i,
// Krylov solves of Dirichlet problems, linear functionals (averaged indicators,
// point evaluation, loads), and the discrete norms used by the estimates.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "greenlab/core.hpp"
#include "greenlab/grid.hpp"
#include "greenlab/operator.hpp"

namespace greenlab {

// ---------------------------------------------------------------------------
// Coefficients sampled once per cell (cell-center value, piecewise constant).

class SampledOperator {
public:
    SampledOperator() = default;

    SampledOperator(const OperatorSpec& spec, const Grid& grid) : spec_(spec), grid_(grid) {
        require(static_cast<bool>(spec.coeff), ErrorKind::InvalidCoefficient, "operator has no coefficient field");
        require(spec.lambda > 0.0 && spec.Lambda > 0.0, ErrorKind::InvalidCoefficient, "claimed constants must be positive");
        const std::size_t nc = grid.cell_count();
        cell_tensor_.resize(nc);
        lambda_min_ = std::numeric_limits<double>::infinity();
        Lambda_max_ = 0.0;
        self_adjoint_ = true;
        for (std::size_t c = 0; c < nc; ++c) {
            CoefficientTensor t = spec.coeff(grid.cell_center(c));
            require(t.components() == spec.components, ErrorKind::DimensionMismatch,
                    "coefficient field returned wrong system size");
            std::uint32_t id;
            if (!unique_.empty() && unique_.back() == t) {
                id = static_cast<std::uint32_t>(unique_.size() - 1);
            } else if (!unique_.empty() && unique_.front() == t) {
                id = 0;
            } else {
                const auto ell = check_ellipticity(t);
                lambda_min_ = std::min(lambda_min_, ell.lambda_min);
                Lambda_max_ = std::max(Lambda_max_, ell.Lambda_frob);
                if (!(t.transposed() == t)) self_adjoint_ = false;
                unique_.push_back(std::move(t));
                id = static_cast<std::uint32_t>(unique_.size() - 1);
            }
            cell_tensor_[c] = id;
        }
        const double slack = 1e-12 * std::max(1.0, spec.Lambda);
        require(lambda_min_ >= spec.lambda - slack, ErrorKind::InvalidCoefficient,
                "sampled ellipticity " + std::to_string(lambda_min_) + " is below the claimed lambda " +
                    std::to_string(spec.lambda));
        require(Lambda_max_ <= spec.Lambda + slack, ErrorKind::InvalidCoefficient,
                "sampled bound " + std::to_string(Lambda_max_) + " exceeds the claimed Lambda " +
                    std::to_string(spec.Lambda));
    }

    const OperatorSpec& spec() const { return spec_; }
    const Grid& grid() const { return grid_; }
    int components() const { return spec_.components; }
    const CoefficientTensor& cell(std::size_t c) const { return unique_[cell_tensor_[c]]; }
    std::size_t distinct_tensors() const { return unique_.size(); }
    double lambda_min() const { return lambda_min_; }
    double Lambda_max() const { return Lambda_max_; }
    bool self_adjoint() const { return self_adjoint_; }

    /// Mean tensor over the outermost layer of cells; the coefficient "at infinity"
    /// used by far-field closures.
    CoefficientTensor far_field_tensor() const {
        CoefficientTensor acc(components());
        std::size_t count = 0;
        const auto& n = grid_.cells();
        for (std::size_t c = 0; c < grid_.cell_count(); ++c) {
            const auto ijk = grid_.cell_ijk(c);
            bool outer = false;
            for (int a = 0; a < kDim; ++a) outer = outer || ijk[a] == 0 || ijk[a] == n[a] - 1;
            if (!outer) continue;
            acc += cell(c);
            ++count;
        }
        acc *= 1.0 / static_cast<double>(count);
        return acc;
    }

private:
    OperatorSpec spec_;
    Grid grid_;
    std::vector<CoefficientTensor> unique_;
    std::vector<std::uint32_t> cell_tensor_;
    double lambda_min_ = 0.0;
    double Lambda_max_ = 0.0;
    bool self_adjoint_ = true;
};

// ---------------------------------------------------------------------------
// Reference-element data for a uniform grid.

/// Local vertex v of a cell has offset bit a = (v >> a) & 1 along axis a.
struct ElementBasis {
    /// stiff[a][b][u][v] = int_cell D_a phi_u D_b phi_v (exact; 2x2x2 Gauss).
    std::array<std::array<std::array<std::array<double, 8>, 8>, 3>, 3> stiff{};
    /// center_grad[a][v] = D_a phi_v at the cell center.
    std::array<std::array<double, 8>, 3> center_grad{};

    explicit ElementBasis(const Vec3& h) {
        const double g = 0.5 / std::sqrt(3.0);
        const double pts[2] = {0.5 - g, 0.5 + g};
        const double w = h[0] * h[1] * h[2] / 8.0;
        for (int qx = 0; qx < 2; ++qx)
            for (int qy = 0; qy < 2; ++qy)
                for (int qz = 0; qz < 2; ++qz) {
                    const Vec3 t{pts[qx], pts[qy], pts[qz]};
                    std::array<std::array<double, 8>, 3> d{};
                    for (int v = 0; v < 8; ++v)
                        for (int a = 0; a < kDim; ++a) d[a][v] = grad(v, a, t, h);
                    for (int a = 0; a < kDim; ++a)
                        for (int b = 0; b < kDim; ++b)
                            for (int u = 0; u < 8; ++u)
                                for (int v = 0; v < 8; ++v) stiff[a][b][u][v] += w * d[a][u] * d[b][v];
                }
        for (int v = 0; v < 8; ++v)
            for (int a = 0; a < kDim; ++a) center_grad[a][v] = grad(v, a, {0.5, 0.5, 0.5}, h);
    }

    static double shape(int v, const Vec3& t) {
        double s = 1.0;
        for (int a = 0; a < kDim; ++a) s *= ((v >> a) & 1) ? t[a] : 1.0 - t[a];
        return s;
    }
    static double grad(int v, int axis, const Vec3& t, const Vec3& h) {
        double s = (((v >> axis) & 1) ? 1.0 : -1.0) / h[axis];
        for (int a = 0; a < kDim; ++a)
            if (a != axis) s *= ((v >> a) & 1) ? t[a] : 1.0 - t[a];
        return s;
    }
};

// ---------------------------------------------------------------------------
// Nodal fields.

/// N-component nodal field on a masked grid; values[node * N + i].
class DiscreteField {
public:
    DiscreteField() = default;
    DiscreteField(DomainMask mask, int components)
        : mask_(std::move(mask)), n_(components), values_(mask_.grid().node_count() * components, 0.0) {}
    DiscreteField(DomainMask mask, int components, std::vector<double> values)
        : mask_(std::move(mask)), n_(components), values_(std::move(values)) {
        require(values_.size() == mask_.grid().node_count() * static_cast<std::size_t>(n_),
                ErrorKind::DimensionMismatch, "field size does not match grid");
    }

    /// Nodal interpolant of a vector function (all nodes, including boundary ones).
    static DiscreteField interpolate_function(const DomainMask& mask, int components,
                                              const std::function<std::vector<double>(const Vec3&)>& f) {
        DiscreteField u(mask, components);
        const auto& g = mask.grid();
        for (std::size_t n = 0; n < g.node_count(); ++n) {
            const auto v = f(g.node_point(n));
            for (int i = 0; i < components; ++i) u.values_[n * components + i] = v[i];
        }
        return u;
    }

    const DomainMask& mask() const { return mask_; }
    const Grid& grid() const { return mask_.grid(); }
    int components() const { return n_; }
    std::span<const double> values() const { return values_; }
    std::span<double> values() { return values_; }
    double& at(std::size_t node, int comp) { return values_[node * n_ + comp]; }
    double at(std::size_t node, int comp) const { return values_[node * n_ + comp]; }

    /// Trilinear interpolation at x (any point of the closed box).
    std::vector<double> interpolate(const Vec3& x) const {
        auto loc = grid().locate(x);
        require(loc.has_value(), ErrorKind::OutsideDomain, "point is outside the grid box");
        const auto& [c, t] = *loc;
        std::vector<double> out(n_, 0.0);
        for (int v = 0; v < 8; ++v) {
            const double w = ElementBasis::shape(v, t);
            if (w == 0.0) continue;
            const std::size_t node = grid().cell_vertex(c, v);
            for (int i = 0; i < n_; ++i) out[i] += w * values_[node * n_ + i];
        }
        return out;
    }

    /// Q1 gradient at the center of `cell`: g[i * 3 + a] = D_a u^i.
    std::vector<double> cell_gradient(std::size_t cell, const ElementBasis& basis) const {
        const auto c = grid().cell_ijk(cell);
        std::vector<double> g(static_cast<std::size_t>(n_) * kDim, 0.0);
        for (int v = 0; v < 8; ++v) {
            const std::size_t node = grid().cell_vertex(c, v);
            for (int i = 0; i < n_; ++i)
                for (int a = 0; a < kDim; ++a) g[i * kDim + a] += basis.center_grad[a][v] * values_[node * n_ + i];
        }
        return g;
    }

    /// Value at the cell center (mean of the 8 vertices).
    std::vector<double> cell_value(std::size_t cell) const {
        const auto c = grid().cell_ijk(cell);
        std::vector<double> out(n_, 0.0);
        for (int v = 0; v < 8; ++v) {
            const std::size_t node = grid().cell_vertex(c, v);
            for (int i = 0; i < n_; ++i) out[i] += 0.125 * values_[node * n_ + i];
        }
        return out;
    }

    double max_abs() const {
        double m = 0.0;
        for (double v : values_) m = std::max(m, std::abs(v));
        return m;
    }

    DiscreteField& operator*=(double s) {
        for (double& v : values_) v *= s;
        return *this;
    }

private:
    DomainMask mask_;
    int n_ = 1;
    std::vector<double> values_;
};

// ---------------------------------------------------------------------------
// Assembled system.

struct SolverSettings {
    double rel_tol = 1e-8;
    int max_iter = 20000;
    std::uint64_t seed = 0;

    void validate() const {
        require(rel_tol > 0.0 && rel_tol < 1.0, ErrorKind::InvalidArgument, "rel_tol must lie in (0, 1)");
        require(max_iter > 0, ErrorKind::InvalidArgument, "max_iter must be positive");
    }
};

/// Stiffness operator on the interior nodes, stored as 27 N x N blocks per row
/// (the Q1 stencil). Vectors are node-indexed (node * N + i) with zeros at non-DOF nodes.
class LinearSystem {
public:
    LinearSystem() = default;

    LinearSystem(const SampledOperator& op, const DomainMask& mask)
        : op_(std::make_shared<SampledOperator>(op)), mask_(mask), basis_(mask.grid().h()) {
        const Grid& g = mask.grid();
        require(op.grid().cells() == g.cells() && op.grid().box().lo == g.box().lo && op.grid().box().hi == g.box().hi,
                ErrorKind::DimensionMismatch, "operator was sampled on a different grid");
        n_ = op.components();
        const auto np = g.nodes_per_axis();
        for (int o = 0; o < 27; ++o) {
            const int di = o % 3 - 1, dj = (o / 3) % 3 - 1, dk = o / 9 - 1;
            stride_[o] = static_cast<std::ptrdiff_t>(di) + static_cast<std::ptrdiff_t>(np[0]) * (dj + static_cast<std::ptrdiff_t>(np[1]) * dk);
        }
        for (std::size_t n = 0; n < g.node_count(); ++n)
            if (mask.node_kind(n) == NodeKind::Interior) rows_.push_back(n);
        require(!rows_.empty(), ErrorKind::EmptyDomain, "domain has no interior nodes");

        const std::size_t bs = static_cast<std::size_t>(n_) * n_;
        blocks_.assign(rows_.size() * 27 * bs, 0.0);
        parallel_for(rows_.size(), [&](std::size_t r) { assemble_row(r); });

        diag_inv_.assign(rows_.size() * bs, 0.0);
        parallel_for(rows_.size(), [&](std::size_t r) {
            Eigen::MatrixXd d(n_, n_);
            const double* b = block(r, 13);
            for (int i = 0; i < n_; ++i)
                for (int j = 0; j < n_; ++j) d(i, j) = b[i * n_ + j];
            const Eigen::MatrixXd inv = d.inverse();
            for (int i = 0; i < n_; ++i)
                for (int j = 0; j < n_; ++j) diag_inv_[r * bs + i * n_ + j] = inv(i, j);
        });
    }

    const SampledOperator& op() const { return *op_; }
    const DomainMask& mask() const { return mask_; }
    const Grid& grid() const { return mask_.grid(); }
    const ElementBasis& basis() const { return basis_; }
    int components() const { return n_; }
    bool symmetric() const { return op_->self_adjoint(); }
    std::size_t dof_count() const { return rows_.size() * n_; }
    std::size_t vector_size() const { return grid().node_count() * n_; }
    std::span<const std::size_t> row_nodes() const { return rows_; }

    /// Block (N x N, row-major i, j) coupling row r to its neighbor at stencil offset o.
    const double* block(std::size_t r, int o) const {
        return &blocks_[(r * 27 + o) * static_cast<std::size_t>(n_) * n_];
    }
    /// Stencil offset index of (di, dj, dk) in {-1,0,1}^3.
    static int offset_index(int di, int dj, int dk) { return (di + 1) + 3 * (dj + 1) + 9 * (dk + 1); }
    std::ptrdiff_t stride(int o) const { return stride_[o]; }

    /// y = K x restricted to DOF rows; non-DOF entries of y are set to zero.
    /// Entries of x at non-DOF nodes participate (used for Dirichlet lifting).
    void apply(std::span<const double> x, std::span<double> y) const {
        std::fill(y.begin(), y.end(), 0.0);
        const int n = n_;
        parallel_for(rows_.size(), [&](std::size_t r) {
            const std::size_t p = rows_[r];
            double* out = &y[p * n];
            for (int o = 0; o < 27; ++o) {
                const std::size_t q = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(p) + stride_[o]);
                const double* b = block(r, o);
                const double* in = &x[q * n];
                if (n == 1) {
                    out[0] += b[0] * in[0];
                } else {
                    for (int i = 0; i < n; ++i) {
                        double s = 0.0;
                        for (int j = 0; j < n; ++j) s += b[i * n + j] * in[j];
                        out[i] += s;
                    }
                }
            }
        });
    }

    /// z = D^{-1} r on DOF rows (block Jacobi).
    void precondition(std::span<const double> r, std::span<double> z) const {
        const int n = n_;
        parallel_for(rows_.size(), [&](std::size_t k) {
            const std::size_t p = rows_[k];
            const double* d = &diag_inv_[k * static_cast<std::size_t>(n) * n];
            for (int i = 0; i < n; ++i) {
                double s = 0.0;
                for (int j = 0; j < n; ++j) s += d[i * n + j] * r[p * n + j];
                z[p * n + i] = s;
            }
        });
    }

    /// Exact bilinear form B(u, v) over inside cells for arbitrary nodal fields.
    double bilinear(const DiscreteField& u, const DiscreteField& v) const {
        const Grid& g = grid();
        const int n = n_;
        return deterministic_sum(g.cell_count(), [&](std::size_t c) {
            if (!mask_.inside(c)) return 0.0;
            const auto ijk = g.cell_ijk(c);
            const CoefficientTensor& A = op_->cell(c);
            std::array<std::size_t, 8> nodes{};
            for (int k = 0; k < 8; ++k) nodes[k] = g.cell_vertex(ijk, k);
            double s = 0.0;
            for (int a = 0; a < kDim; ++a)
                for (int b = 0; b < kDim; ++b)
                    for (int i = 0; i < n; ++i)
                        for (int j = 0; j < n; ++j) {
                            const double coef = A(a, b, i, j);
                            if (coef == 0.0) continue;
                            double t = 0.0;
                            for (int tu = 0; tu < 8; ++tu) {
                                const double vi = v.at(nodes[tu], i);
                                if (vi == 0.0) continue;
                                double inner = 0.0;
                                for (int tv = 0; tv < 8; ++tv) inner += basis_.stiff[a][b][tu][tv] * u.at(nodes[tv], j);
                                t += vi * inner;
                            }
                            s += coef * t;
                        }
            return s;
        });
    }

private:
    void assemble_row(std::size_t r) {
        const Grid& g = grid();
        const int n = n_;
        const std::size_t bs = static_cast<std::size_t>(n) * n;
        const auto p = g.node_ijk(rows_[r]);
        for (int cv = 0; cv < 8; ++cv) {
            // Cell whose local vertex `a` is the row node.
            const Index3 cell{p[0] - 1 + (cv & 1), p[1] - 1 + ((cv >> 1) & 1), p[2] - 1 + ((cv >> 2) & 1)};
            const std::size_t cid = g.cell_index(cell[0], cell[1], cell[2]);
            if (!mask_.inside(cid)) continue;
            const int a_loc = (~cv) & 7;
            const CoefficientTensor& A = op_->cell(cid);
            for (int b_loc = 0; b_loc < 8; ++b_loc) {
                const int di = ((b_loc & 1) - (a_loc & 1));
                const int dj = (((b_loc >> 1) & 1) - ((a_loc >> 1) & 1));
                const int dk = (((b_loc >> 2) & 1) - ((a_loc >> 2) & 1));
                double* out = &blocks_[(r * 27 + offset_index(di, dj, dk)) * bs];
                for (int al = 0; al < kDim; ++al)
                    for (int be = 0; be < kDim; ++be) {
                        const double s = basis_.stiff[al][be][a_loc][b_loc];
                        if (s == 0.0) continue;
                        for (int i = 0; i < n; ++i)
                            for (int j = 0; j < n; ++j) out[i * n + j] += A(al, be, i, j) * s;
                    }
            }
        }
    }

    std::shared_ptr<const SampledOperator> op_;
    DomainMask mask_;
    ElementBasis basis_{Vec3{1.0, 1.0, 1.0}};
    int n_ = 1;
    std::array<std::ptrdiff_t, 27> stride_{};
    std::vector<std::size_t> rows_;
    std::vector<double> blocks_;
    std::vector<double> diag_inv_;
};

inline LinearSystem assemble(const OperatorSpec& spec, const DomainMask& mask) {
    return LinearSystem(SampledOperator(spec, mask.grid()), mask);
}

// ---------------------------------------------------------------------------
// Linear functionals and loads.

/// Sparse linear functional phi -> sum w * phi^comp(node).
struct LinearFunctional {
    struct Term {
        std::size_t node;
        int comp;
        double weight;
    };
    std::vector<Term> terms;
    double measure = 0.0;  ///< |Omega_rho(y)| for averaged indicators, 0 otherwise

    double apply(const DiscreteField& u) const {
        double s = 0.0;
        for (const auto& t : terms) s += t.weight * u.at(t.node, t.comp);
        return s;
    }
    /// Dense nodal load vector (node * N + comp).
    std::vector<double> to_load(std::size_t node_count, int components) const {
        std::vector<double> out(node_count * components, 0.0);
        for (const auto& t : terms) out[t.node * components + t.comp] += t.weight;
        return out;
    }
    LinearFunctional& operator*=(double s) {
        for (auto& t : terms) t.weight *= s;
        return *this;
    }
};

/// Subsample count per axis used by ball-average weights.
inline constexpr int kBallSubsamples = 8;

namespace detail {

/// Shape-function values at the s^3 subcell midpoints of the reference cell.
inline const std::vector<std::array<double, 8>>& subsample_shapes(int s) {
    static thread_local std::vector<std::array<double, 8>> cache;
    static thread_local int cached = 0;
    if (cached != s) {
        cache.assign(static_cast<std::size_t>(s) * s * s, {});
        for (int k = 0; k < s; ++k)
            for (int j = 0; j < s; ++j)
                for (int i = 0; i < s; ++i) {
                    const Vec3 t{(i + 0.5) / s, (j + 0.5) / s, (k + 0.5) / s};
                    auto& row = cache[(static_cast<std::size_t>(k) * s + j) * s + i];
                    for (int v = 0; v < 8; ++v) row[v] = ElementBasis::shape(v, t);
                }
        cached = s;
    }
    return cache;
}

/// Node weights w_a = int_{Omega cap B_r(y)} phi_a (unnormalized) and the measure.
inline std::pair<std::vector<std::pair<std::size_t, double>>, double> ball_node_weights(const DomainMask& mask,
                                                                                       const Vec3& y, double r,
                                                                                       int sub) {
    const Grid& g = mask.grid();
    const auto& h = g.h();
    const auto& n = g.cells();
    Index3 lo{}, hi{};
    for (int a = 0; a < kDim; ++a) {
        lo[a] = std::max(0, static_cast<int>(std::floor((y[a] - r - g.box().lo[a]) / h[a])));
        hi[a] = std::min(n[a] - 1, static_cast<int>(std::floor((y[a] + r - g.box().lo[a]) / h[a])));
    }
    const auto& shapes = subsample_shapes(sub);
    const double sub_vol = g.cell_volume() / (static_cast<double>(sub) * sub * sub);
    std::vector<std::pair<std::size_t, double>> acc;
    double measure = 0.0;
    for (int k = lo[2]; k <= hi[2]; ++k)
        for (int j = lo[1]; j <= hi[1]; ++j)
            for (int i = lo[0]; i <= hi[0]; ++i) {
                if (!mask.inside(Index3{i, j, k})) continue;
                const Vec3 c0 = g.node_point(i, j, k);
                std::array<double, 8> w{};
                double cell_measure = 0.0;
                for (int sk = 0; sk < sub; ++sk)
                    for (int sj = 0; sj < sub; ++sj)
                        for (int si = 0; si < sub; ++si) {
                            const Vec3 pt{c0[0] + (si + 0.5) * h[0] / sub, c0[1] + (sj + 0.5) * h[1] / sub,
                                          c0[2] + (sk + 0.5) * h[2] / sub};
                            const Vec3 d = pt - y;
                            if (dot(d, d) > r * r) continue;
                            cell_measure += sub_vol;
                            const auto& row = shapes[(static_cast<std::size_t>(sk) * sub + sj) * sub + si];
                            for (int v = 0; v < 8; ++v) w[v] += sub_vol * row[v];
                        }
                if (cell_measure == 0.0) continue;
                measure += cell_measure;
                for (int v = 0; v < 8; ++v) acc.emplace_back(g.cell_vertex(Index3{i, j, k}, v), w[v]);
            }
    std::sort(acc.begin(), acc.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<std::pair<std::size_t, double>> merged;
    for (const auto& [node, w] : acc) {
        if (!merged.empty() && merged.back().first == node)
            merged.back().second += w;
        else
            merged.emplace_back(node, w);
    }
    return {std::move(merged), measure};
}

}  // namespace detail

/// phi -> (1/|Omega_rho(y)|) int_{Omega_rho(y)} phi^k, with per-cell volume-fraction
/// weights from 8^3 subsamples. `min_rho_cells` is the resolvability floor in units of h.
inline LinearFunctional averaged_indicator_rhs(const DomainMask& mask, const Vec3& y, double rho, int k,
                                               double min_rho_cells = 2.0) {
    require(mask.contains(y), ErrorKind::OutsideDomain, "averaging center is outside the domain");
    require(rho >= min_rho_cells * mask.grid().h_max() * (1.0 - 1e-12), ErrorKind::Precondition,
            "averaging radius is below the resolvability floor");
    auto [weights, measure] = detail::ball_node_weights(mask, y, rho, kBallSubsamples);
    require(measure > 0.0, ErrorKind::EmptyDomain, "Omega_rho(y) is empty");
    LinearFunctional f;
    f.measure = measure;
    f.terms.reserve(weights.size());
    for (const auto& [node, w] : weights) f.terms.push_back({node, k, w / measure});
    return f;
}

/// Node-centered ball average stencil, reusable at every node whose ball stays inside Omega.
class NodeBallStencil {
public:
    NodeBallStencil(const DomainMask& mask, double r) : mask_(mask), r_(r) {
        const Grid& g = mask.grid();
        // Build on a private full-box grid so the pattern is independent of the mask.
        const Vec3 h = g.h();
        const int m = static_cast<int>(std::ceil(r / g.h_min())) + 1;
        Box b{{-m * h[0], -m * h[1], -m * h[2]}, {m * h[0], m * h[1], m * h[2]}};
        Grid local(b, {2 * m, 2 * m, 2 * m});
        auto full = full_box_mask(local);
        auto [weights, measure] = detail::ball_node_weights(full, {0.0, 0.0, 0.0}, r, kBallSubsamples);
        measure_ = measure;
        for (const auto& [node, w] : weights) {
            const auto ijk = local.node_ijk(node);
            offsets_.push_back({ijk[0] - m, ijk[1] - m, ijk[2] - m});
            weights_.push_back(w / measure);
        }
        reach_ = m;
    }

    /// Ball average of component k of u around node (i, j, k); falls back to the exact
    /// masked functional near the boundary.
    double apply(const DiscreteField& u, std::size_t node, int comp) const {
        const Grid& g = mask_.grid();
        const auto p = g.node_ijk(node);
        if (!interior_cells_ok(p))
            return averaged_indicator_rhs(mask_, g.node_point(node), r_, comp, 0.0).apply(u);
        double s = 0.0;
        for (std::size_t t = 0; t < offsets_.size(); ++t) {
            const std::size_t q = g.node_index(p[0] + offsets_[t][0], p[1] + offsets_[t][1], p[2] + offsets_[t][2]);
            s += weights_[t] * u.at(q, comp);
        }
        return s;
    }

    double measure() const { return measure_; }

private:
    bool interior_cells_ok(const Index3& p) const {
        const Grid& g = mask_.grid();
        const auto& n = g.cells();
        for (int k = p[2] - reach_; k < p[2] + reach_; ++k)
            for (int j = p[1] - reach_; j < p[1] + reach_; ++j)
                for (int i = p[0] - reach_; i < p[0] + reach_; ++i) {
                    if (i < 0 || j < 0 || k < 0 || i >= n[0] || j >= n[1] || k >= n[2]) return false;
                    if (!mask_.inside(Index3{i, j, k})) return false;
                }
        return true;
    }

    DomainMask mask_;
    double r_ = 0.0;
    double measure_ = 0.0;
    int reach_ = 0;
    std::vector<Index3> offsets_;
    std::vector<double> weights_;
};

/// phi -> phi^k(x) (trilinear interpolation weights).
inline LinearFunctional point_evaluation(const DomainMask& mask, const Vec3& x, int k) {
    require(mask.contains(x), ErrorKind::OutsideDomain, "evaluation point is outside the domain");
    auto loc = mask.grid().locate(x);
    const auto& [c, t] = *loc;
    LinearFunctional f;
    for (int v = 0; v < 8; ++v) {
        const double w = ElementBasis::shape(v, t);
        if (w != 0.0) f.terms.push_back({mask.grid().cell_vertex(c, v), k, w});
    }
    return f;
}

/// Load vector phi -> int_Omega f . phi by 2x2x2 Gauss per inside cell.
inline std::vector<double> load_vector(const DomainMask& mask, int components,
                                       const std::function<std::vector<double>(const Vec3&)>& f) {
    const Grid& g = mask.grid();
    const auto& h = g.h();
    std::vector<double> out(g.node_count() * components, 0.0);
    const double gq = 0.5 / std::sqrt(3.0);
    const double pts[2] = {0.5 - gq, 0.5 + gq};
    const double w = g.cell_volume() / 8.0;
    for (std::size_t c = 0; c < g.cell_count(); ++c) {
        if (!mask.inside(c)) continue;
        const auto ijk = g.cell_ijk(c);
        const Vec3 c0 = g.node_point(ijk[0], ijk[1], ijk[2]);
        for (int q = 0; q < 8; ++q) {
            const Vec3 t{pts[q & 1], pts[(q >> 1) & 1], pts[(q >> 2) & 1]};
            const auto val = f({c0[0] + t[0] * h[0], c0[1] + t[1] * h[1], c0[2] + t[2] * h[2]});
            for (int v = 0; v < 8; ++v) {
                const double s = w * ElementBasis::shape(v, t);
                const std::size_t node = g.cell_vertex(ijk, v);
                for (int i = 0; i < components; ++i) out[node * components + i] += s * val[i];
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Krylov solves.

struct SolveStats {
    std::string method;
    int iterations = 0;
    double relative_residual = 0.0;
    std::vector<double> history;
};

struct SolveResult {
    DiscreteField field;
    SolveStats stats;
};

namespace detail {

inline double dot_dofs(const LinearSystem& sys, std::span<const double> a, std::span<const double> b) {
    const int n = sys.components();
    const auto rows = sys.row_nodes();
    return deterministic_sum(rows.size(), [&](std::size_t r) {
        const std::size_t p = rows[r] * n;
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += a[p + i] * b[p + i];
        return s;
    });
}

/// y += alpha * x on DOF entries.
inline void axpy_dofs(const LinearSystem& sys, double alpha, std::span<const double> x, std::span<double> y) {
    const int n = sys.components();
    const auto rows = sys.row_nodes();
    parallel_for(rows.size(), [&](std::size_t r) {
        const std::size_t p = rows[r] * n;
        for (int i = 0; i < n; ++i) y[p + i] += alpha * x[p + i];
    });
}

inline void cg(const LinearSystem& sys, std::span<const double> b, std::span<double> x, double tol, int max_iter,
               SolveStats& st) {
    const std::size_t m = sys.vector_size();
    std::vector<double> r(m), z(m, 0.0), p(m, 0.0), q(m);
    const double bnorm = std::sqrt(dot_dofs(sys, b, b));
    st.method = "pcg-jacobi";
    int it = 0;
    for (int restart = 0; restart < 4; ++restart) {
        sys.apply(x, q);
        for (std::size_t i = 0; i < m; ++i) r[i] = b[i] - q[i];
        double rnorm = std::sqrt(dot_dofs(sys, r, r));
        st.history.push_back(rnorm / bnorm);
        if (rnorm <= tol * bnorm) break;
        sys.precondition(r, z);
        p = z;
        double rz = dot_dofs(sys, r, z);
        while (it < max_iter) {
            sys.apply(p, q);
            const double alpha = rz / dot_dofs(sys, p, q);
            axpy_dofs(sys, alpha, p, x);
            axpy_dofs(sys, -alpha, q, r);
            ++it;
            rnorm = std::sqrt(dot_dofs(sys, r, r));
            st.history.push_back(rnorm / bnorm);
            if (rnorm <= tol * bnorm) break;
            sys.precondition(r, z);
            const double rz_new = dot_dofs(sys, r, z);
            const double beta = rz_new / rz;
            rz = rz_new;
            const auto rows = sys.row_nodes();
            const int n = sys.components();
            parallel_for(rows.size(), [&](std::size_t k) {
                const std::size_t o = rows[k] * n;
                for (int i = 0; i < n; ++i) p[o + i] = z[o + i] + beta * p[o + i];
            });
        }
        if (it >= max_iter) break;
    }
    st.iterations = it;
}

inline void bicgstab(const LinearSystem& sys, std::span<const double> b, std::span<double> x, double tol,
                     int max_iter, SolveStats& st) {
    const std::size_t m = sys.vector_size();
    std::vector<double> r(m), r0(m), p(m, 0.0), v(m, 0.0), s(m), t(m), ph(m, 0.0), sh(m, 0.0);
    const double bnorm = std::sqrt(dot_dofs(sys, b, b));
    st.method = "bicgstab-jacobi";
    const auto rows = sys.row_nodes();
    const int n = sys.components();
    int it = 0;
    for (int restart = 0; restart < 8 && it < max_iter; ++restart) {
        sys.apply(x, t);
        for (std::size_t i = 0; i < m; ++i) r[i] = b[i] - t[i];
        double rnorm = std::sqrt(dot_dofs(sys, r, r));
        st.history.push_back(rnorm / bnorm);
        if (rnorm <= tol * bnorm) break;
        r0 = r;
        std::fill(p.begin(), p.end(), 0.0);
        std::fill(v.begin(), v.end(), 0.0);
        double rho = 1.0, alpha = 1.0, omega = 1.0;
        bool breakdown = false;
        while (it < max_iter) {
            const double rho_new = dot_dofs(sys, r0, r);
            if (std::abs(rho_new) < 1e-300) {
                breakdown = true;
                break;
            }
            const double beta = (rho_new / rho) * (alpha / omega);
            rho = rho_new;
            parallel_for(rows.size(), [&](std::size_t k) {
                const std::size_t o = rows[k] * n;
                for (int i = 0; i < n; ++i) p[o + i] = r[o + i] + beta * (p[o + i] - omega * v[o + i]);
            });
            sys.precondition(p, ph);
            sys.apply(ph, v);
            const double r0v = dot_dofs(sys, r0, v);
            if (std::abs(r0v) < 1e-300) {
                breakdown = true;
                break;
            }
            alpha = rho / r0v;
            parallel_for(rows.size(), [&](std::size_t k) {
                const std::size_t o = rows[k] * n;
                for (int i = 0; i < n; ++i) s[o + i] = r[o + i] - alpha * v[o + i];
            });
            ++it;
            const double snorm = std::sqrt(dot_dofs(sys, s, s));
            if (snorm <= tol * bnorm) {
                axpy_dofs(sys, alpha, ph, x);
                st.history.push_back(snorm / bnorm);
                break;
            }
            sys.precondition(s, sh);
            sys.apply(sh, t);
            const double tt = dot_dofs(sys, t, t);
            omega = tt > 0.0 ? dot_dofs(sys, t, s) / tt : 0.0;
            parallel_for(rows.size(), [&](std::size_t k) {
                const std::size_t o = rows[k] * n;
                for (int i = 0; i < n; ++i) {
                    x[o + i] += alpha * ph[o + i] + omega * sh[o + i];
                    r[o + i] = s[o + i] - omega * t[o + i];
                }
            });
            rnorm = std::sqrt(dot_dofs(sys, r, r));
            st.history.push_back(rnorm / bnorm);
            if (rnorm <= tol * bnorm) break;
            if (omega == 0.0) {
                breakdown = true;
                break;
            }
        }
        // Loop again to confirm with the true residual (or restart after breakdown).
        (void)breakdown;
    }
    st.iterations = it;
}

}  // namespace detail

/// Solves B(u, phi) = load(phi) for all DOF test fields, with u = g on Dirichlet nodes
/// (g = 0 when `boundary_values` is empty). Symmetric operators use Jacobi-PCG; others
/// Jacobi-BiCGStab. The returned relative residual is the true one, ||b - K u|| / ||b||.
inline SolveResult solve_dirichlet(const LinearSystem& sys, std::span<const double> nodal_load,
                                   const SolverSettings& settings, std::span<const double> boundary_values = {}) {
    settings.validate();
    const int n = sys.components();
    const std::size_t m = sys.vector_size();
    require(nodal_load.size() == m, ErrorKind::DimensionMismatch, "load vector has the wrong size");
    require(boundary_values.empty() || boundary_values.size() == m, ErrorKind::DimensionMismatch,
            "boundary data has the wrong size");
    const DomainMask& mask = sys.mask();

    std::vector<double> b(m, 0.0);
    for (std::size_t p : sys.row_nodes())
        for (int i = 0; i < n; ++i) b[p * n + i] = nodal_load[p * n + i];
    std::vector<double> lift(m, 0.0);
    if (!boundary_values.empty()) {
        for (std::size_t node = 0; node < sys.grid().node_count(); ++node)
            if (mask.node_kind(node) == NodeKind::Boundary)
                for (int i = 0; i < n; ++i) lift[node * n + i] = boundary_values[node * n + i];
        std::vector<double> kg(m);
        sys.apply(lift, kg);
        for (std::size_t p : sys.row_nodes())
            for (int i = 0; i < n; ++i) b[p * n + i] -= kg[p * n + i];
    }

    std::vector<double> x(m, 0.0);
    SolveStats st;
    const double bnorm = std::sqrt(detail::dot_dofs(sys, b, b));
    if (bnorm == 0.0) {
        st.method = sys.symmetric() ? "pcg-jacobi" : "bicgstab-jacobi";
    } else {
        if (sys.symmetric())
            detail::cg(sys, b, x, settings.rel_tol, settings.max_iter, st);
        else
            detail::bicgstab(sys, b, x, settings.rel_tol, settings.max_iter, st);
        std::vector<double> kx(m);
        sys.apply(x, kx);
        double rr = 0.0;
        {
            std::vector<double> res(m, 0.0);
            for (std::size_t p : sys.row_nodes())
                for (int i = 0; i < n; ++i) res[p * n + i] = b[p * n + i] - kx[p * n + i];
            rr = std::sqrt(detail::dot_dofs(sys, res, res));
        }
        st.relative_residual = rr / bnorm;
        if (st.relative_residual > settings.rel_tol * 1.0001)
            throw IterationLimitError("solver stopped at relative residual " + std::to_string(st.relative_residual) +
                                          " after " + std::to_string(st.iterations) + " iterations",
                                      st.history);
    }
    for (std::size_t node = 0; node < sys.grid().node_count(); ++node)
        if (mask.node_kind(node) == NodeKind::Boundary)
            for (int i = 0; i < n; ++i) x[node * n + i] = lift[node * n + i];
    return {DiscreteField(mask, n, std::move(x)), std::move(st)};
}

inline SolveResult solve_dirichlet(const LinearSystem& sys, const LinearFunctional& rhs,
                                   const SolverSettings& settings, std::span<const double> boundary_values = {}) {
    const auto load = rhs.to_load(sys.grid().node_count(), sys.components());
    return solve_dirichlet(sys, load, settings, boundary_values);
}

// ---------------------------------------------------------------------------
// Regions and discrete norms.

/// Weighted set of inside cells; weight = fraction of the cell volume that belongs.
struct Region {
    std::vector<std::pair<std::size_t, double>> cells;

    double volume(const Grid& g) const {
        double s = 0.0;
        for (const auto& c : cells) s += c.second;
        return s * g.cell_volume();
    }
    bool empty() const { return cells.empty(); }
};

inline Region domain_region(const DomainMask& mask) {
    Region r;
    for (std::size_t c = 0; c < mask.grid().cell_count(); ++c)
        if (mask.inside(c)) r.cells.emplace_back(c, 1.0);
    return r;
}

namespace detail {
inline double ball_fraction(const Grid& g, std::size_t cell, const Vec3& center, double radius, int sub) {
    const auto ijk = g.cell_ijk(cell);
    const Vec3 c0 = g.node_point(ijk[0], ijk[1], ijk[2]);
    const auto& h = g.h();
    // Quick accept/reject from the nearest/farthest corner distance.
    double near2 = 0.0, far2 = 0.0;
    for (int a = 0; a < kDim; ++a) {
        const double lo = c0[a] - center[a], hi = lo + h[a];
        const double nd = (lo > 0) ? lo : (hi < 0 ? -hi : 0.0);
        const double fd = std::max(std::abs(lo), std::abs(hi));
        near2 += nd * nd;
        far2 += fd * fd;
    }
    if (near2 >= radius * radius) return 0.0;
    if (far2 <= radius * radius) return 1.0;
    int in = 0;
    for (int k = 0; k < sub; ++k)
        for (int j = 0; j < sub; ++j)
            for (int i = 0; i < sub; ++i) {
                const Vec3 pt{c0[0] + (i + 0.5) * h[0] / sub, c0[1] + (j + 0.5) * h[1] / sub, c0[2] + (k + 0.5) * h[2] / sub};
                const Vec3 d = pt - center;
                if (dot(d, d) <= radius * radius) ++in;
            }
    return static_cast<double>(in) / (static_cast<double>(sub) * sub * sub);
}
}  // namespace detail

/// Omega cap B_r(center) with subsampled volume fractions on straddling cells.
inline Region ball_region(const DomainMask& mask, const Vec3& center, double radius, int sub = kBallSubsamples) {
    Region r;
    const Grid& g = mask.grid();
    for (std::size_t c = 0; c < g.cell_count(); ++c) {
        if (!mask.inside(c)) continue;
        const double f = detail::ball_fraction(g, c, center, radius, sub);
        if (f > 0.0) r.cells.emplace_back(c, f);
    }
    return r;
}

/// Omega minus B_r(center).
inline Region outside_ball_region(const DomainMask& mask, const Vec3& center, double radius,
                                  int sub = kBallSubsamples) {
    Region r;
    const Grid& g = mask.grid();
    for (std::size_t c = 0; c < g.cell_count(); ++c) {
        if (!mask.inside(c)) continue;
        const double f = 1.0 - detail::ball_fraction(g, c, center, radius, sub);
        if (f > 0.0) r.cells.emplace_back(c, f);
    }
    return r;
}

/// (int_region |u|^p)^(1/p) with |u| the Euclidean norm over components at cell centers.
inline double lp_norm(const DiscreteField& u, double p, const Region& region) {
    require(p >= 1.0, ErrorKind::InvalidArgument, "p must be >= 1");
    require(!region.empty(), ErrorKind::EmptyDomain, "empty region");
    const double vol = u.grid().cell_volume();
    const double s = deterministic_sum(region.cells.size(), [&](std::size_t k) {
        const auto& [c, w] = region.cells[k];
        const auto v = u.cell_value(c);
        double m2 = 0.0;
        for (double x : v) m2 += x * x;
        return w * vol * std::pow(std::sqrt(m2), p);
    });
    return std::pow(s, 1.0 / p);
}

/// ||Du||_{L^2(region)} with per-cell Q1 gradients at cell centers.
inline double grad_l2(const DiscreteField& u, const Region& region) {
    require(!region.empty(), ErrorKind::EmptyDomain, "empty region");
    const ElementBasis basis(u.grid().h());
    const double vol = u.grid().cell_volume();
    const double s = deterministic_sum(region.cells.size(), [&](std::size_t k) {
        const auto& [c, w] = region.cells[k];
        const auto g = u.cell_gradient(c, basis);
        double m2 = 0.0;
        for (double x : g) m2 += x * x;
        return w * vol * m2;
    });
    return std::sqrt(s);
}

/// ||u||_{Y^{1,2}} = ||u||_{L^{2*}} + ||Du||_{L^2}, 2* = 2n/(n-2) = 6.
inline double y12_norm(const DiscreteField& u, const Region& region) {
    return lp_norm(u, 6.0, region) + grad_l2(u, region);
}

/// ||Du||^2 over inside cells with exact (Gauss) integration; matches the quadrature of
/// the assembled form.
inline double grad_l2_squared_exact(const DiscreteField& u) {
    const Grid& g = u.grid();
    const ElementBasis basis(g.h());
    const int n = u.components();
    return deterministic_sum(g.cell_count(), [&](std::size_t c) {
        if (!u.mask().inside(c)) return 0.0;
        const auto ijk = g.cell_ijk(c);
        double s = 0.0;
        for (int a = 0; a < kDim; ++a)
            for (int i = 0; i < n; ++i)
                for (int p = 0; p < 8; ++p) {
                    const double up = u.at(g.cell_vertex(ijk, p), i);
                    if (up == 0.0) continue;
                    for (int q = 0; q < 8; ++q) s += up * basis.stiff[a][a][p][q] * u.at(g.cell_vertex(ijk, q), i);
                }
        return s;
    });
}

/// max over node pairs of |u(x) - u(z)| / |x - z|^mu. All pairs when there are at most
/// `pair_cap` of them, otherwise `pair_cap` pairs drawn with the seeded generator.
inline double holder_seminorm(const DiscreteField& u, std::span<const std::size_t> nodes, double mu,
                              std::size_t pair_cap = 2'000'000, std::uint64_t seed = 0) {
    require(mu > 0.0 && mu <= 1.0, ErrorKind::InvalidArgument, "mu must lie in (0, 1]");
    require(nodes.size() >= 2, ErrorKind::InvalidArgument, "need at least two nodes");
    const Grid& g = u.grid();
    const int n = u.components();
    auto ratio = [&](std::size_t a, std::size_t b) {
        double d2 = 0.0;
        for (int i = 0; i < n; ++i) {
            const double d = u.at(a, i) - u.at(b, i);
            d2 += d * d;
        }
        return std::sqrt(d2) / std::pow(distance(g.node_point(a), g.node_point(b)), mu);
    };
    double best = 0.0;
    const std::size_t m = nodes.size();
    const std::size_t pairs = m * (m - 1) / 2;
    if (pairs <= pair_cap) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = i + 1; j < m; ++j) best = std::max(best, ratio(nodes[i], nodes[j]));
    } else {
        Rng rng(seed);
        for (std::size_t t = 0; t < pair_cap; ++t) {
            const std::size_t i = rng.next() % m;
            std::size_t j = rng.next() % m;
            if (i == j) j = (j + 1) % m;
            best = std::max(best, ratio(nodes[i], nodes[j]));
        }
    }
    return best;
}

/// Nodes of the cells of a region (sorted, unique).
inline std::vector<std::size_t> region_nodes(const Grid& g, const Region& region) {
    std::vector<std::size_t> out;
    for (const auto& [c, w] : region.cells) {
        const auto ijk = g.cell_ijk(c);
        for (int v = 0; v < 8; ++v) out.push_back(g.cell_vertex(ijk, v));
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

struct DistributionFunction {
    std::vector<double> thresholds;
    std::vector<double> measures;
};

enum class MagnitudeKind { Value, Gradient };

/// |u| (or |Du|) at the center of every region cell, paired with the cell's measure.
struct CellSamples {
    std::vector<double> magnitude;
    std::vector<double> measure;
};

inline CellSamples cell_magnitudes(const DiscreteField& u, const Region& region, MagnitudeKind kind) {
    CellSamples out;
    const ElementBasis basis(u.grid().h());
    const double vol = u.grid().cell_volume();
    out.magnitude.reserve(region.cells.size());
    for (const auto& [c, w] : region.cells) {
        const auto v = kind == MagnitudeKind::Value ? u.cell_value(c) : u.cell_gradient(c, basis);
        double m2 = 0.0;
        for (double x : v) m2 += x * x;
        out.magnitude.push_back(std::sqrt(m2));
        out.measure.push_back(w * vol);
    }
    return out;
}

/// |{x in region : |f(x)| > t}| for each threshold, by cell quadrature.
inline DistributionFunction distribution_function(const CellSamples& samples, std::span<const double> thresholds) {
    require(!samples.magnitude.empty(), ErrorKind::EmptyDomain, "empty region");
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
        require(thresholds[i] > 0.0, ErrorKind::InvalidArgument, "thresholds must be positive");
        require(i == 0 || thresholds[i] > thresholds[i - 1], ErrorKind::InvalidArgument,
                "thresholds must be strictly increasing");
    }
    // Sort magnitudes once; measure(t) is a suffix sum.
    std::vector<std::size_t> order(samples.magnitude.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return samples.magnitude[a] < samples.magnitude[b]; });
    std::vector<double> suffix(order.size() + 1, 0.0);
    for (std::size_t k = order.size(); k-- > 0;) suffix[k] = suffix[k + 1] + samples.measure[order[k]];
    DistributionFunction out;
    out.thresholds.assign(thresholds.begin(), thresholds.end());
    for (double t : thresholds) {
        // first index with magnitude > t
        std::size_t lo = 0, hi = order.size();
        while (lo < hi) {
            const std::size_t mid = (lo + hi) / 2;
            if (samples.magnitude[order[mid]] > t)
                hi = mid;
            else
                lo = mid + 1;
        }
        out.measures.push_back(suffix[lo]);
    }
    return out;
}

struct PoincareRatio {
    double ratio = 0.0;
    double theta = 0.0;          ///< exterior fraction |B_R \ Omega| / |B_R|
    bool condition_s_violated = false;
};

/// ||u||_{L2(Omega_R)} / (R ||Du||_{L2(Omega_R)}) for u vanishing on Sigma_R.
inline PoincareRatio boundary_poincare_ratio(const DiscreteField& u, const Vec3& center, double R) {
    PoincareRatio out;
    out.theta = exterior_fraction(u.mask(), center, R);
    out.condition_s_violated = out.theta <= 0.0;
    const Region region = ball_region(u.mask(), center, R);
    const double du = grad_l2(u, region);
    require(du > 0.0, ErrorKind::Precondition, "field has zero gradient on Omega_R");
    out.ratio = lp_norm(u, 2.0, region) / (R * du);
    return out;
}

// ---------------------------------------------------------------------------
// Field export: raw little-endian float64 node values (node-major, component-minor)
// plus a JSON sidecar.

inline nlohmann::json field_sidecar(const DiscreteField& u) {
    const Grid& g = u.grid();
    nlohmann::json j;
    j["dims"] = {g.cells()[0] + 1, g.cells()[1] + 1, g.cells()[2] + 1};
    j["box"] = {{"lo", g.box().lo}, {"hi", g.box().hi}};
    j["N"] = u.components();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(u.mask().hash()));
    j["mask_hash"] = buf;
    j["layout"] = "node-lexicographic x-fastest, component-minor, float64";
    return j;
}

inline void export_field(const DiscreteField& u, const std::string& stem) {
    {
        std::ofstream out(stem + ".f64", std::ios::binary);
        require(static_cast<bool>(out), ErrorKind::Io, "cannot open " + stem + ".f64");
        const auto v = u.values();
        out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
        require(static_cast<bool>(out), ErrorKind::Io, "write failed for " + stem + ".f64");
    }
    std::ofstream js(stem + ".json");
    require(static_cast<bool>(js), ErrorKind::Io, "cannot open " + stem + ".json");
    js << field_sidecar(u).dump(2) << "\n";
}

/// Reads a field written by export_field; the mask must match the sidecar hash.
inline DiscreteField import_field(const DomainMask& mask, const std::string& stem) {
    std::ifstream js(stem + ".json");
    require(static_cast<bool>(js), ErrorKind::Io, "cannot open " + stem + ".json");
    const auto meta = nlohmann::json::parse(js);
    const int n = meta.at("N").get<int>();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(mask.hash()));
    require(meta.at("mask_hash").get<std::string>() == buf, ErrorKind::Io, "mask hash mismatch for " + stem);
    std::vector<double> values(mask.grid().node_count() * n);
    std::ifstream in(stem + ".f64", std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + stem + ".f64");
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
    require(static_cast<bool>(in), ErrorKind::Io, "truncated field file " + stem + ".f64");
    return DiscreteField(mask, n, std::move(values));
}

}  // namespace greenlab
