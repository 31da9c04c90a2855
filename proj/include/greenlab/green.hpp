#pragma once
// Averaged fundamental / Green's matrices and the identities they satisfy.
//
// Column k of G^rho(., y) solves B(v, phi) = mean over Omega_rho(y) of phi^k. Identities
// that pair a pole at y with an evaluation at x are computed through the transpose
// operator: a single solve of tL with its pole at x gives G(x, z) for every z.

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "json.hpp"

#include "greenlab/core.hpp"
#include "greenlab/fem.hpp"
#include "greenlab/grid.hpp"
#include "greenlab/operator.hpp"

namespace greenlab {

// ---------------------------------------------------------------------------
// Constant-coefficient fundamental matrix.

/// Gamma0(x) = 1/(8 pi^2 |x|) * integral over the unit circle perpendicular to x of
/// M(xi)^{-1}, M(xi)_{ij} = A^{ab}_{ij} xi_a xi_b.
class FarField {
public:
    explicit FarField(CoefficientTensor a, int circle_points = 64) : a_(std::move(a)), q_(circle_points) {
        require(q_ >= 8, ErrorKind::InvalidArgument, "too few circle points");
    }

    int components() const { return a_.components(); }
    const CoefficientTensor& tensor() const { return a_; }

    Eigen::MatrixXd value(const Vec3& x) const {
        const double r = norm(x);
        require(r > 0.0, ErrorKind::InvalidArgument, "fundamental matrix is singular at the origin");
        const Vec3 e = (1.0 / r) * x;
        // Orthonormal frame (u, w) of the plane perpendicular to e.
        Vec3 t = std::abs(e[0]) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
        Vec3 u = t - dot(t, e) * e;
        u = (1.0 / norm(u)) * u;
        const Vec3 w{e[1] * u[2] - e[2] * u[1], e[2] * u[0] - e[0] * u[2], e[0] * u[1] - e[1] * u[0]};
        const int n = components();
        Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(n, n);
        Eigen::MatrixXd m(n, n);
        for (int s = 0; s < q_; ++s) {
            const double phi = 2.0 * M_PI * s / q_;
            const Vec3 xi = std::cos(phi) * u + std::sin(phi) * w;
            m.setZero();
            for (int al = 0; al < kDim; ++al)
                for (int be = 0; be < kDim; ++be)
                    for (int i = 0; i < n; ++i)
                        for (int j = 0; j < n; ++j) m(i, j) += a_(al, be, i, j) * xi[al] * xi[be];
            acc += m.inverse();
        }
        return acc * (2.0 * M_PI / q_) / (8.0 * M_PI * M_PI * r);
    }

    /// d/dx_a of Gamma0 by central differences; returned as N*N matrices per axis.
    std::array<Eigen::MatrixXd, 3> gradient(const Vec3& x) const {
        const double step = 1e-4 * norm(x);
        std::array<Eigen::MatrixXd, 3> g;
        for (int a = 0; a < kDim; ++a) {
            Vec3 p = x, m = x;
            p[a] += step;
            m[a] -= step;
            g[a] = (value(p) - value(m)) / (2.0 * step);
        }
        return g;
    }

private:
    CoefficientTensor a_;
    int q_;
};

/// Integrals over R^3 minus the box of |D_x Gamma0(x - y) e_k|^2 and |Gamma0(x - y) e_k|^6.
/// Both integrands are homogeneous in r = |x - y|, so the radial integrals are exact:
/// int_s^inf r^-4 r^2 dr = 1/s and int_s^inf r^-6 r^2 dr = 1/(3 s^3), s the ray-box exit distance.
struct ExteriorTail {
    double grad_sq = 0.0;
    double value6 = 0.0;
};

inline ExteriorTail exterior_tail(const FarField& ff, const Box& box, const Vec3& y, int column,
                                  int polar = 64, int azimuth = 128) {
    require(box.contains(y) && column >= 0 && column < ff.components(), ErrorKind::InvalidArgument,
            "pole must lie in the box");
    ExteriorTail out;
    const int n = ff.components();
    const double dw = (2.0 / polar) * (2.0 * M_PI / azimuth);
    for (int p = 0; p < polar; ++p) {
        const double z = -1.0 + (p + 0.5) * 2.0 / polar;
        const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
        for (int q = 0; q < azimuth; ++q) {
            const double phi = (q + 0.5) * 2.0 * M_PI / azimuth;
            const Vec3 om{s * std::cos(phi), s * std::sin(phi), z};
            double exit = std::numeric_limits<double>::infinity();
            for (int a = 0; a < kDim; ++a) {
                if (om[a] > 1e-14) exit = std::min(exit, (box.hi[a] - y[a]) / om[a]);
                if (om[a] < -1e-14) exit = std::min(exit, (box.lo[a] - y[a]) / om[a]);
            }
            if (!(exit > 0.0)) continue;
            const auto g = ff.gradient(om);
            double f2 = 0.0;
            for (int a = 0; a < kDim; ++a)
                for (int i = 0; i < n; ++i) f2 += g[a](i, column) * g[a](i, column);
            const auto v = ff.value(om);
            double v2 = 0.0;
            for (int i = 0; i < n; ++i) v2 += v(i, column) * v(i, column);
            out.grad_sq += dw * f2 / exit;
            out.value6 += dw * v2 * v2 * v2 / (3.0 * exit * exit * exit);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Context shared by all builds on one (operator, domain) pair.

/// Boundary treatment for pole solves. Zero gives the Green's matrix of the domain.
/// FarField (full-box masks only) prescribes the constant-coefficient fundamental matrix
/// of the outer-layer coefficients on the box faces, approximating the fundamental matrix
/// of R^3 rather than of the box.
enum class Closure { Zero, FarField };

inline const char* to_string(Closure c) { return c == Closure::Zero ? "zero" : "far-field"; }

class GreenContext {
public:
    GreenContext(OperatorSpec spec, DomainMask mask, SolverSettings settings = {}, Closure closure = Closure::Zero)
        : d_(std::make_shared<Data>()) {
        settings.validate();
        require(closure == Closure::Zero || mask.all_inside(), ErrorKind::Precondition,
                "far-field closure needs a full-box mask");
        d_->spec = std::move(spec);
        d_->mask = std::move(mask);
        d_->settings = settings;
        d_->closure = closure;
    }

    const OperatorSpec& spec() const { return d_->spec; }
    const DomainMask& mask() const { return d_->mask; }
    const Grid& grid() const { return d_->mask.grid(); }
    const SolverSettings& settings() const { return d_->settings; }
    Closure closure() const { return d_->closure; }
    int components() const { return d_->spec.components; }

    const LinearSystem& system(bool transpose = false) const {
        std::lock_guard<std::mutex> lock(d_->mu);
        auto& slot = transpose ? d_->sys_t : d_->sys;
        if (!slot) {
            if (transpose && d_->sys && d_->sys->symmetric()) return *d_->sys;
            slot = std::make_shared<LinearSystem>(
                SampledOperator(transpose ? transpose_operator(d_->spec) : d_->spec, grid()), d_->mask);
            if (!transpose && slot->symmetric()) d_->sys_t = slot;
        }
        return *slot;
    }

    const FarField& far_field(bool transpose = false) const {
        const LinearSystem& sys = system(transpose);
        std::lock_guard<std::mutex> lock(d_->mu);
        auto& slot = transpose ? d_->ff_t : d_->ff;
        if (!slot) slot = std::make_shared<FarField>(sys.op().far_field_tensor());
        return *slot;
    }

    /// Dirichlet data for column k of a pole solve at `pole` (empty under the zero closure).
    std::vector<double> closure_data(const Vec3& pole, int k, bool transpose = false) const {
        if (d_->closure == Closure::Zero) return {};
        const FarField& ff = far_field(transpose);
        const Grid& g = grid();
        const int n = components();
        std::vector<double> bc(g.node_count() * n, 0.0);
        for (std::size_t node = 0; node < g.node_count(); ++node) {
            if (mask().node_kind(node) != NodeKind::Boundary) continue;
            const Vec3 d = g.node_point(node) - pole;
            if (norm(d) == 0.0) continue;
            const auto v = ff.value(d);
            for (int i = 0; i < n; ++i) bc[node * n + i] = v(i, k);
        }
        return bc;
    }

    /// Pole-type solve: rhs concentrated near `pole`, column k.
    SolveResult solve_pole(const LinearFunctional& rhs, const Vec3& pole, int k, bool transpose = false) const {
        const auto bc = closure_data(pole, k, transpose);
        return solve_dirichlet(system(transpose), rhs, d_->settings, bc);
    }

    /// Load-type solve with homogeneous Dirichlet data.
    SolveResult solve_load(std::span<const double> load, bool transpose = false) const {
        return solve_dirichlet(system(transpose), load, d_->settings);
    }

    std::string spec_id() const { return d_->spec.name + "/N=" + std::to_string(components()); }

private:
    struct Data {
        OperatorSpec spec;
        DomainMask mask;
        SolverSettings settings;
        Closure closure = Closure::Zero;
        std::mutex mu;
        std::shared_ptr<LinearSystem> sys, sys_t;
        std::shared_ptr<FarField> ff, ff_t;
    };
    std::shared_ptr<Data> d_;
};

// ---------------------------------------------------------------------------
// Averaged Green's matrix.

struct AveragedGreenMatrix {
    Vec3 pole{};
    double rho = 0.0;
    bool transpose = false;
    Closure closure = Closure::Zero;
    std::vector<DiscreteField> columns;
    std::vector<SolveStats> stats;
    std::string spec_id;
    std::uint64_t mask_id = 0;
    double measure = 0.0;  ///< |Omega_rho(y)|

    int components() const { return static_cast<int>(columns.size()); }

    /// (j, k) = component j of column k, trilinearly interpolated at x.
    Eigen::MatrixXd evaluate(const Vec3& x) const {
        require(!columns.empty(), ErrorKind::Precondition, "empty Green matrix");
        require(columns[0].mask().contains(x), ErrorKind::OutsideDomain, "evaluation point is outside the domain");
        const int n = components();
        Eigen::MatrixXd m(n, n);
        for (int k = 0; k < n; ++k) {
            const auto v = columns[k].interpolate(x);
            for (int j = 0; j < n; ++j) m(j, k) = v[j];
        }
        return m;
    }

    /// ||D v_k||_{L2(Omega)} for each column.
    std::vector<double> energy() const {
        std::vector<double> out;
        for (const auto& c : columns) out.push_back(grad_l2(c, domain_region(c.mask())));
        return out;
    }
};

inline Vec3 snap_to_node(const Grid& g, const Vec3& y) { return g.node_point(g.nearest_node(y)); }

/// Builds G^rho(., y) (or tG^rho under the transpose operator). The pole is snapped to
/// the nearest grid node. `min_rho_cells` is the resolvability floor in units of h.
inline AveragedGreenMatrix build_averaged_green(const GreenContext& ctx, const Vec3& y, double rho,
                                                bool transpose = false, double min_rho_cells = 2.0) {
    const Vec3 pole = snap_to_node(ctx.grid(), y);
    require(ctx.mask().contains(pole), ErrorKind::OutsideDomain, "pole is outside the domain");
    AveragedGreenMatrix g;
    g.pole = pole;
    g.rho = rho;
    g.transpose = transpose;
    g.closure = ctx.closure();
    g.spec_id = ctx.spec_id() + (transpose ? "^t" : "");
    g.mask_id = ctx.mask().hash();
    for (int k = 0; k < ctx.components(); ++k) {
        const auto rhs = averaged_indicator_rhs(ctx.mask(), pole, rho, k, min_rho_cells);
        g.measure = rhs.measure;
        auto res = ctx.solve_pole(rhs, pole, k, transpose);
        g.columns.push_back(std::move(res.field));
        g.stats.push_back(std::move(res.stats));
    }
    return g;
}

/// Transpose point-evaluation solves at x: column l satisfies B_tL(t_l, psi) = psi^l(x),
/// so G^rho(x, z)_{lk} = (averaged indicator at z, component k)(t_l) for every z.
inline std::vector<DiscreteField> evaluation_fields(const GreenContext& ctx, const Vec3& x) {
    std::vector<DiscreteField> out;
    for (int l = 0; l < ctx.components(); ++l) {
        const auto rhs = point_evaluation(ctx.mask(), x, l);
        out.push_back(ctx.solve_pole(rhs, x, l, true).field);
    }
    return out;
}

/// Cache of Green matrices keyed by (pole, rho, transpose), with pair geometry.
class GreenSampler {
public:
    explicit GreenSampler(GreenContext ctx) : ctx_(std::move(ctx)) {}

    const GreenContext& context() const { return ctx_; }

    std::shared_ptr<const AveragedGreenMatrix> get(const Vec3& y, double rho, bool transpose = false) {
        const Vec3 pole = snap_to_node(ctx_.grid(), y);
        const Key key{pole, rho, transpose};
        {
            std::lock_guard<std::mutex> lock(mu_);
            auto it = cache_.find(key);
            if (it != cache_.end()) return it->second;
        }
        auto g = std::make_shared<const AveragedGreenMatrix>(build_averaged_green(ctx_, pole, rho, transpose));
        std::lock_guard<std::mutex> lock(mu_);
        return cache_.emplace(key, g).first->second;
    }

    Eigen::MatrixXd evaluate(const Vec3& x, const Vec3& y, double rho) { return get(y, rho)->evaluate(x); }

    /// min(d_x, d_y, |x - y|).
    double pair_distance(const Vec3& x, const Vec3& y) const {
        return std::min({boundary_distance(ctx_.mask(), x), boundary_distance(ctx_.mask(), y), distance(x, y)});
    }

    std::size_t size() const {
        std::lock_guard<std::mutex> lock(mu_);
        return cache_.size();
    }

private:
    using Key = std::tuple<Vec3, double, bool>;
    GreenContext ctx_;
    mutable std::mutex mu_;
    std::map<Key, std::shared_ptr<const AveragedGreenMatrix>> cache_;
};

// ---------------------------------------------------------------------------
// Identities.

namespace detail {
inline double max_abs(const Eigen::MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }
}  // namespace detail

struct SymmetryResult {
    double residual = 0.0;
    Eigen::MatrixXd lhs;  ///< (k, l): mean over Omega_rho(y) of tG^sigma_{kl}(., x)
    Eigen::MatrixXd rhs;  ///< (k, l): mean over Omega_sigma(x) of G^rho_{lk}(., y)
};

/// Residual of the identity  mean_{Omega_rho(y)} tG^sigma_{kl}(., x) = mean_{Omega_sigma(x)} G^rho_{lk}(., y),
/// normalized by the largest entry.
inline SymmetryResult symmetry_check(const GreenContext& ctx, const Vec3& x, const Vec3& y, double rho, double sigma) {
    require(ctx.closure() == Closure::Zero, ErrorKind::Precondition, "symmetry identity needs the zero closure");
    const Vec3 xs = snap_to_node(ctx.grid(), x), ys = snap_to_node(ctx.grid(), y);
    require(distance(xs, ys) > 0.0, ErrorKind::Precondition, "x and y must differ");
    const auto G = build_averaged_green(ctx, ys, rho);
    const auto Gt = build_averaged_green(ctx, xs, sigma, true);
    const int n = ctx.components();
    SymmetryResult r;
    r.lhs.resize(n, n);
    r.rhs.resize(n, n);
    for (int k = 0; k < n; ++k)
        for (int l = 0; l < n; ++l) {
            // column l of tG, component k, averaged over Omega_rho(y)
            r.lhs(k, l) = averaged_indicator_rhs(ctx.mask(), ys, rho, k).apply(Gt.columns[l]);
            // column k of G, component l, averaged over Omega_sigma(x)
            r.rhs(k, l) = averaged_indicator_rhs(ctx.mask(), xs, sigma, l).apply(G.columns[k]);
        }
    const double scale = std::max(detail::max_abs(r.lhs), detail::max_abs(r.rhs));
    r.residual = scale > 0.0 ? detail::max_abs(r.lhs - r.rhs) / scale : 0.0;
    return r;
}

inline double symmetry_residual(const GreenContext& ctx, const Vec3& x, const Vec3& y, double rho, double sigma) {
    return symmetry_check(ctx, x, y, rho, sigma).residual;
}

struct AveragingResult {
    double deviation = 0.0;
    Eigen::MatrixXd direct;    ///< G^rho(x, y)
    Eigen::MatrixXd averaged;  ///< mean over grid nodes z in B_rho(y) of G^{rho/2}(x, z)
    std::size_t poles = 0;
};

/// Compares G^rho(x, y) with the average of G^{rho/2}(x, z) over grid nodes z in B_rho(y).
/// All values come from one transpose solve at x. rho/2 may go down to one cell.
inline AveragingResult averaging_consistency(const GreenContext& ctx, const Vec3& x, const Vec3& y, double rho,
                                             const std::vector<DiscreteField>* eval_fields = nullptr) {
    require(ctx.closure() == Closure::Zero, ErrorKind::Precondition, "averaging identity needs the zero closure");
    const Grid& g = ctx.grid();
    const Vec3 xs = snap_to_node(g, x), ys = snap_to_node(g, y);
    require(distance(xs, ys) >= 4.0 * rho * (1.0 - 1e-12), ErrorKind::Precondition, "|x - y| must be at least 4 rho");
    require(rho / 2.0 >= g.h_max() * (1.0 - 1e-12), ErrorKind::Precondition, "ball is not resolvable at rho/2");
    require(ctx.mask().contains(x) && ctx.mask().contains(y), ErrorKind::OutsideDomain, "x and y must lie in the domain");
    std::vector<DiscreteField> own;
    if (!eval_fields) {
        own = evaluation_fields(ctx, xs);
        eval_fields = &own;
    }
    const auto& t = *eval_fields;
    const int n = ctx.components();
    AveragingResult r;
    r.direct.resize(n, n);
    r.averaged = Eigen::MatrixXd::Zero(n, n);
    for (int l = 0; l < n; ++l)
        for (int k = 0; k < n; ++k) r.direct(l, k) = averaged_indicator_rhs(ctx.mask(), ys, rho, k).apply(t[l]);

    const NodeBallStencil half(ctx.mask(), rho / 2.0);
    const auto yi = g.node_ijk(g.nearest_node(ys));
    const int m = static_cast<int>(std::ceil(rho / g.h_min()));
    for (int dk = -m; dk <= m; ++dk)
        for (int dj = -m; dj <= m; ++dj)
            for (int di = -m; di <= m; ++di) {
                const Index3 q{yi[0] + di, yi[1] + dj, yi[2] + dk};
                bool ok = true;
                for (int a = 0; a < kDim; ++a) ok = ok && q[a] >= 0 && q[a] <= g.cells()[a];
                if (!ok) continue;
                const std::size_t node = g.node_index(q[0], q[1], q[2]);
                if (distance(g.node_point(node), ys) > rho) continue;
                if (!ctx.mask().contains(g.node_point(node))) continue;
                for (int l = 0; l < n; ++l)
                    for (int k = 0; k < n; ++k) r.averaged(l, k) += half.apply(t[l], node, k);
                ++r.poles;
            }
    r.averaged /= static_cast<double>(r.poles);
    const double scale = detail::max_abs(r.direct);
    require(scale > 0.0, ErrorKind::DegenerateData, "G^rho(x, y) vanishes; no relative deviation");
    r.deviation = detail::max_abs(r.direct - r.averaged) / scale;
    return r;
}

struct RepresentationResult {
    std::vector<Vec3> points;
    std::vector<std::vector<double>> u_repr;
    std::vector<std::vector<double>> u_direct;
    DiscreteField direct;
    double relative_l2 = 0.0;
};

using VectorFunction = std::function<std::vector<double>(const Vec3&)>;

/// u_repr(x) = sum over cells of G^rho(x, y_c) f(y_c) |cell|, with G^rho(x, .) taken from
/// the transpose build at x (G(x, z)_{jk} = tG(z, x)_{kj}); u_direct solves B(u, phi) = int f.phi.
inline RepresentationResult represent_solution(const GreenContext& ctx, const VectorFunction& f,
                                               const std::vector<Vec3>& points, double rho) {
    require(ctx.closure() == Closure::Zero, ErrorKind::Precondition, "representation needs the zero closure");
    const Grid& g = ctx.grid();
    const int n = ctx.components();
    std::vector<std::vector<double>> fc(g.cell_count());
    bool any = false;
    for (std::size_t c = 0; c < g.cell_count(); ++c) {
        fc[c] = f(g.cell_center(c));
        require(static_cast<int>(fc[c].size()) == n, ErrorKind::DimensionMismatch, "f has the wrong size");
        double m = 0.0;
        for (double v : fc[c]) m = std::max(m, std::abs(v));
        if (!ctx.mask().inside(c))
            require(m == 0.0, ErrorKind::Precondition, "f is not supported inside the domain");
        any = any || m > 0.0;
    }
    RepresentationResult r;
    const auto load = load_vector(ctx.mask(), n, f);
    r.direct = any ? ctx.solve_load(load).field : DiscreteField(ctx.mask(), n);
    const double vol = g.cell_volume();
    double num = 0.0, den = 0.0;
    for (const Vec3& x0 : points) {
        const Vec3 x = snap_to_node(g, x0);
        r.points.push_back(x);
        std::vector<double> ur(n, 0.0);
        if (any) {
            const auto gt = build_averaged_green(ctx, x, rho, true);
            for (int j = 0; j < n; ++j)
                ur[j] = deterministic_sum(g.cell_count(), [&](std::size_t c) {
                    if (!ctx.mask().inside(c)) return 0.0;
                    const auto w = gt.columns[j].cell_value(c);
                    double s = 0.0;
                    for (int k = 0; k < n; ++k) s += w[k] * fc[c][k];
                    return s * vol;
                });
        }
        const auto ud = r.direct.interpolate(x);
        for (int j = 0; j < n; ++j) {
            num += (ur[j] - ud[j]) * (ur[j] - ud[j]);
            den += ud[j] * ud[j];
        }
        r.u_repr.push_back(std::move(ur));
        r.u_direct.push_back(ud);
    }
    r.relative_l2 = den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
    return r;
}

/// Cell-center quadrature of int A^{ab}_{ij} D_a w^i D_b u^j over inside cells, skipping `skip`.
inline double coupling_integral(const SampledOperator& a, const DomainMask& mask, const DiscreteField& w,
                                const DiscreteField& u, const std::vector<std::size_t>& skip = {},
                                const SampledOperator* minus = nullptr) {
    const Grid& g = mask.grid();
    const ElementBasis basis(g.h());
    const int n = u.components();
    const double vol = g.cell_volume();
    return deterministic_sum(g.cell_count(), [&](std::size_t c) {
        if (!mask.inside(c)) return 0.0;
        for (std::size_t s : skip)
            if (s == c) return 0.0;
        const auto dw = w.cell_gradient(c, basis);
        const auto du = u.cell_gradient(c, basis);
        const CoefficientTensor& A = a.cell(c);
        double s = 0.0;
        for (int al = 0; al < kDim; ++al)
            for (int be = 0; be < kDim; ++be)
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < n; ++j) {
                        double coef = A(al, be, i, j);
                        if (minus) coef -= minus->cell(c)(al, be, i, j);
                        if (coef != 0.0) s += coef * dw[i * kDim + al] * du[j * kDim + be];
                    }
        return s * vol;
    });
}

struct GradientRepresentationResult {
    double residual = 0.0;
    std::vector<double> rhs;    ///< right side per component k
    std::vector<double> value;  ///< f^k(x)
};

/// f^k(x) versus int D_a G_{ki}(x, .) A^{ab}_{ij} D_b f^j, with G(x, .) from the transpose
/// averaged build at x (radius rho) and one-point cell quadrature.
inline GradientRepresentationResult gradient_representation(const GreenContext& ctx, const DiscreteField& f,
                                                            const Vec3& x, double rho) {
    require(ctx.closure() == Closure::Zero, ErrorKind::Precondition, "gradient representation needs the zero closure");
    const Grid& g = ctx.grid();
    const Vec3 xs = snap_to_node(g, x);
    require(f.components() == ctx.components(), ErrorKind::DimensionMismatch, "f has the wrong size");
    GradientRepresentationResult r;
    const int n = ctx.components();
    r.value = f.interpolate(xs);
    r.rhs.assign(n, 0.0);
    if (f.max_abs() == 0.0) return r;
    for (std::size_t node : ctx.mask().boundary_nodes())
        for (int i = 0; i < n; ++i)
            require(f.at(node, i) == 0.0, ErrorKind::Precondition, "f must vanish on the boundary");
    require(boundary_distance(ctx.mask(), xs) >= 8.0 * g.h_max() * (1.0 - 1e-12), ErrorKind::Precondition,
            "x is within 8h of the boundary");
    const auto gt = build_averaged_green(ctx, xs, rho, true);
    const SampledOperator& a = ctx.system().op();
    double worst = 0.0;
    for (int k = 0; k < n; ++k) {
        r.rhs[k] = coupling_integral(a, ctx.mask(), gt.columns[k], f);
        worst = std::max(worst, std::abs(r.rhs[k] - r.value[k]));
    }
    r.residual = worst / std::max(f.max_abs(), 1e-300);
    return r;
}

inline double gradient_representation_residual(const GreenContext& ctx, const DiscreteField& f, const Vec3& x,
                                               double rho) {
    return gradient_representation(ctx, f, x, rho).residual;
}

struct PerturbationResult {
    double residual = 0.0;
    Eigen::MatrixXd g;         ///< G^rho(x, y) under A
    Eigen::MatrixXd g_tilde;   ///< G^rho(x, y) under B
    Eigen::MatrixXd coupling;  ///< int D G(x, .) (A - B) D G~(., y)
};

/// Residual of  G~(x, y) = G(x, y) + int D_a G(x, .) (A - B)^{ab} D_b G~(., y)  where G is the
/// Green matrix of A and G~ that of B. Point values are rho-averages at both x and y.
inline PerturbationResult perturbation_check(const GreenContext& ctx_a, const OperatorSpec& spec_b, const Vec3& x,
                                             const Vec3& y, double rho) {
    require(ctx_a.closure() == Closure::Zero, ErrorKind::Precondition, "perturbation identity needs the zero closure");
    require(spec_b.components == ctx_a.components(), ErrorKind::DimensionMismatch, "operators differ in N");
    const Grid& g = ctx_a.grid();
    const Vec3 xs = snap_to_node(g, x), ys = snap_to_node(g, y);
    require(distance(xs, ys) > 0.0, ErrorKind::Precondition, "x and y must differ");
    const GreenContext ctx_b(spec_b, ctx_a.mask(), ctx_a.settings());
    const auto G = build_averaged_green(ctx_a, ys, rho);
    const auto Gb = build_averaged_green(ctx_b, ys, rho);
    const auto Wt = build_averaged_green(ctx_a, xs, rho, true);
    const int n = ctx_a.components();
    const auto& opa = ctx_a.system().op();
    const auto& opb = ctx_b.system().op();
    std::vector<std::size_t> skip;
    for (const Vec3& p : {xs, ys}) {
        const auto loc = g.locate(p);
        skip.push_back(g.cell_index(loc->first[0], loc->first[1], loc->first[2]));
    }
    PerturbationResult r;
    r.g.resize(n, n);
    r.g_tilde.resize(n, n);
    r.coupling.resize(n, n);
    for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k) {
            const auto ax = averaged_indicator_rhs(ctx_a.mask(), xs, rho, j);
            r.g(j, k) = ax.apply(G.columns[k]);
            r.g_tilde(j, k) = ax.apply(Gb.columns[k]);
            r.coupling(j, k) = coupling_integral(opa, ctx_a.mask(), Wt.columns[j], Gb.columns[k], skip, &opb);
        }
    const double scale = detail::max_abs(r.g_tilde);
    r.residual = detail::max_abs(r.g_tilde - r.g - r.coupling) / scale;
    return r;
}

inline double perturbation_residual(const GreenContext& ctx_a, const OperatorSpec& spec_b, const Vec3& x,
                                    const Vec3& y, double rho) {
    return perturbation_check(ctx_a, spec_b, x, y, rho).residual;
}

// ---------------------------------------------------------------------------
// Dumps: one field pair per column plus a manifest.

inline void dump_green(const AveragedGreenMatrix& g, const std::string& dir, const std::string& stem) {
    std::filesystem::create_directories(dir);
    nlohmann::json m;
    m["pole"] = g.pole;
    m["rho"] = g.rho;
    m["transpose"] = g.transpose;
    m["closure"] = to_string(g.closure);
    m["spec"] = g.spec_id;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(g.mask_id));
    m["mask_hash"] = buf;
    m["measure"] = g.measure;
    for (int k = 0; k < g.components(); ++k) {
        const std::string col = stem + "_col" + std::to_string(k);
        export_field(g.columns[k], dir + "/" + col);
        m["columns"].push_back({{"file", col}, {"residual", g.stats[k].relative_residual},
                                {"iterations", g.stats[k].iterations}, {"method", g.stats[k].method}});
    }
    std::ofstream out(dir + "/" + stem + ".manifest.json");
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write Green manifest in " + dir);
    out << m.dump(2) << "\n";
}

inline AveragedGreenMatrix load_green(const DomainMask& mask, const std::string& dir, const std::string& stem) {
    std::ifstream in(dir + "/" + stem + ".manifest.json");
    require(static_cast<bool>(in), ErrorKind::Io, "cannot read Green manifest " + stem);
    const auto m = nlohmann::json::parse(in);
    AveragedGreenMatrix g;
    g.pole = m.at("pole").get<Vec3>();
    g.rho = m.at("rho").get<double>();
    g.transpose = m.at("transpose").get<bool>();
    g.closure = m.at("closure").get<std::string>() == "zero" ? Closure::Zero : Closure::FarField;
    g.spec_id = m.at("spec").get<std::string>();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(mask.hash()));
    require(m.at("mask_hash").get<std::string>() == buf, ErrorKind::InvalidArgument,
            "Green dump was built on a different mask");
    g.mask_id = mask.hash();
    g.measure = m.at("measure").get<double>();
    for (const auto& c : m.at("columns")) {
        g.columns.push_back(import_field(mask, dir + "/" + c.at("file").get<std::string>()));
        SolveStats s;
        s.relative_residual = c.at("residual").get<double>();
        s.iterations = c.at("iterations").get<int>();
        s.method = c.at("method").get<std::string>();
        g.stats.push_back(s);
    }
    return g;
}

}  // namespace greenlab
