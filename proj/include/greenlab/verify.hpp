#pragma once
// Verification harness: power-law fits, tails, norm scalings, regularity exponents,
// boundary decay, and the report that collects them.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "greenlab/core.hpp"
#include "greenlab/fem.hpp"
#include "greenlab/green.hpp"
#include "greenlab/grid.hpp"
#include "greenlab/operator.hpp"

namespace greenlab {

// ---------------------------------------------------------------------------
// Fits.

struct FitResult {
    double exponent = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
    double window_lo = 0.0;
    double window_hi = 0.0;
    std::size_t points = 0;
    std::vector<std::pair<double, double>> data;
};

/// Least squares on (log s, log v).
inline FitResult fit_power_law(std::vector<std::pair<double, double>> pts) {
    require(pts.size() >= 3, ErrorKind::InvalidArgument, "power-law fit needs at least 3 points");
    std::sort(pts.begin(), pts.end());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        require(pts[i].first > 0.0 && pts[i].second > 0.0, ErrorKind::InvalidArgument,
                "power-law fit needs positive data");
        require(std::isfinite(pts[i].first) && std::isfinite(pts[i].second), ErrorKind::InvalidArgument,
                "power-law fit needs finite data");
        require(i == 0 || pts[i].first > pts[i - 1].first, ErrorKind::InvalidArgument, "abscissae must be distinct");
    }
    const double n = static_cast<double>(pts.size());
    double mx = 0.0, my = 0.0;
    for (const auto& [s, v] : pts) {
        mx += std::log(s);
        my += std::log(v);
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (const auto& [s, v] : pts) {
        const double dx = std::log(s) - mx, dy = std::log(v) - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    FitResult f;
    f.exponent = sxy / sxx;
    f.intercept = my - f.exponent * mx;
    const double sse = std::max(0.0, syy - f.exponent * sxy);
    f.r_squared = syy > 1e-300 ? std::clamp(1.0 - sse / syy, 0.0, 1.0) : 1.0;
    f.window_lo = pts.front().first;
    f.window_hi = pts.back().first;
    f.points = pts.size();
    f.data = std::move(pts);
    return f;
}

inline std::vector<double> geometric_ladder(double lo, double hi, int count) {
    require(count >= 2 && lo > 0.0 && hi > lo, ErrorKind::InvalidArgument, "bad ladder");
    std::vector<double> out;
    for (int i = 0; i < count; ++i) out.push_back(lo * std::pow(hi / lo, static_cast<double>(i) / (count - 1)));
    return out;
}

/// The 26 unit lattice directions.
inline const std::vector<Vec3>& lattice_directions() {
    static const std::vector<Vec3> dirs = [] {
        std::vector<Vec3> d;
        for (int k = -1; k <= 1; ++k)
            for (int j = -1; j <= 1; ++j)
                for (int i = -1; i <= 1; ++i) {
                    if (!i && !j && !k) continue;
                    const Vec3 v{double(i), double(j), double(k)};
                    d.push_back((1.0 / norm(v)) * v);
                }
        return d;
    }();
    return dirs;
}

/// Fit window used for kernel decay: [8h, L/4], L the smallest box extent.
inline std::pair<double, double> decay_window(const Grid& g) { return {8.0 * g.h_max(), g.box().min_extent() / 4.0}; }

// ---------------------------------------------------------------------------
// Decay.

struct DecayProfile {
    FitResult fit;                                     ///< max-entry fit
    std::vector<std::vector<std::optional<FitResult>>> entries;  ///< per (j, k), when nonzero
};

/// |G(x, y)| averaged over the 26 lattice directions at each separation, then fitted.
inline DecayProfile decay_profile(const AveragedGreenMatrix& G, const std::vector<double>& separations) {
    const DomainMask& mask = G.columns.at(0).mask();
    const double floor = 8.0 * mask.grid().h_max();
    std::vector<double> seps;
    for (double r : separations)
        if (r >= floor * (1.0 - 1e-12)) seps.push_back(r);
    require(seps.size() >= 3, ErrorKind::InvalidArgument, "decay window holds fewer than 3 separations");
    const int n = G.components();
    std::vector<std::pair<double, double>> max_pts;
    std::vector<std::vector<std::vector<std::pair<double, double>>>> ent(
        n, std::vector<std::vector<std::pair<double, double>>>(n));
    for (double r : seps) {
        Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(n, n);
        int cnt = 0;
        for (const Vec3& d : lattice_directions()) {
            const Vec3 x = G.pole + r * d;
            if (!mask.contains(x)) continue;
            acc += G.evaluate(x).cwiseAbs();
            ++cnt;
        }
        require(cnt > 0, ErrorKind::OutsideDomain, "no sample direction stays inside the domain");
        acc /= cnt;
        max_pts.emplace_back(r, acc.maxCoeff());
        for (int j = 0; j < n; ++j)
            for (int k = 0; k < n; ++k) ent[j][k].emplace_back(r, acc(j, k));
    }
    DecayProfile p;
    p.fit = fit_power_law(max_pts);
    const double scale = max_pts.front().second;
    p.entries.assign(n, std::vector<std::optional<FitResult>>(n));
    for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k) {
            bool ok = true;
            for (const auto& [s, v] : ent[j][k]) ok = ok && v > 1e-6 * scale;
            if (ok) p.entries[j][k] = fit_power_law(ent[j][k]);
        }
    return p;
}

// ---------------------------------------------------------------------------
// Weak-Lp tails.

/// Exterior superlevel measure |{x outside the box : f(x) > t}| for f homogeneous of
/// degree -d about y, given f on the unit sphere: the ray set is r < (f(w)/t)^(1/d).
/// The sphere table is built once; the returned function maps t to the measure.
inline std::function<double(double)> exterior_superlevel_measure(const std::function<double(const Vec3&)>& unit_value,
                                                                 int degree, const Box& box, const Vec3& y,
                                                                 int polar = 48, int azimuth = 96) {
    struct Ray {
        double value, exit3;
    };
    std::vector<Ray> rays;
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
            rays.push_back({unit_value(om), exit * exit * exit});
        }
    }
    return [rays = std::move(rays), degree, dw](double t) {
        double m = 0.0;
        for (const auto& r : rays) {
            const double reach = std::pow(r.value / t, 1.0 / degree);
            const double reach3 = reach * reach * reach;
            if (reach3 > r.exit3) m += dw * (reach3 - r.exit3) / 3.0;
        }
        return m;
    };
}

inline double exterior_superlevel(const std::function<double(const Vec3&)>& unit_value, int degree, const Box& box,
                                  const Vec3& y, double t, int polar = 48, int azimuth = 96) {
    return exterior_superlevel_measure(unit_value, degree, box, y, polar, azimuth)(t);
}

/// Far-field magnitude of column k on the unit sphere: |Gamma0 e_k| or |D Gamma0 e_k|.
inline std::function<double(const Vec3&)> far_field_magnitude(const FarField& ff, int k, MagnitudeKind kind) {
    return [&ff, k, kind](const Vec3& w) {
        double m = 0.0;
        if (kind == MagnitudeKind::Value) {
            m = ff.value(w).col(k).squaredNorm();
        } else {
            for (const auto& d : ff.gradient(w)) m += d.col(k).squaredNorm();
        }
        return std::sqrt(m);
    };
}

struct TailFit {
    FitResult fit;
    DistributionFunction dist;
};

/// Fits log |{|f| > t}| against log t over one decade of thresholds, [t_top / 10, t_top].
/// `extra` adds a measure per threshold (the exterior of a closed box).
inline TailFit weak_tail_fit(const CellSamples& samples, double t_top, int count = 11,
                             const std::function<double(double)>& extra = {}) {
    require(t_top > 0.0 && std::isfinite(t_top), ErrorKind::DegenerateData, "degenerate threshold range");
    const auto ts = geometric_ladder(t_top / 10.0, t_top, count);
    TailFit out;
    out.dist = distribution_function(samples, ts);
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < ts.size(); ++i) {
        double m = out.dist.measures[i];
        if (extra) m += extra(ts[i]);
        out.dist.measures[i] = m;
        if (m > 0.0) pts.emplace_back(ts[i], m);
    }
    bool varies = false;
    for (std::size_t i = 1; i < pts.size(); ++i) varies = varies || pts[i].second != pts[0].second;
    require(pts.size() >= 3 && varies, ErrorKind::DegenerateData,
            "distribution function is constant or empty over the threshold range");
    out.fit = fit_power_law(pts);
    return out;
}

/// Threshold at the discretization floor: the smallest direction-averaged magnitude on the
/// sphere of radius 8h around the pole, so superlevel sets above the fit range stay outside
/// the unresolved core.
inline double floor_threshold(const DiscreteField& u, const Vec3& pole, MagnitudeKind kind) {
    const Grid& g = u.grid();
    const double r = 8.0 * g.h_max();
    const ElementBasis basis(g.h());
    double t = std::numeric_limits<double>::infinity();
    for (const Vec3& d : lattice_directions()) {
        const Vec3 x = pole + r * d;
        if (!u.mask().contains(x)) continue;
        double m2 = 0.0;
        if (kind == MagnitudeKind::Value) {
            for (double v : u.interpolate(x)) m2 += v * v;
        } else {
            const auto loc = g.locate(x);
            const auto& c = loc->first;
            for (double v : u.cell_gradient(g.cell_index(c[0], c[1], c[2]), basis)) m2 += v * v;
        }
        t = std::min(t, std::sqrt(m2));
    }
    return t;
}

// ---------------------------------------------------------------------------
// Reports.

struct CheckEntry {
    std::string id;
    std::string claim;        ///< the estimate under test, in words
    std::string kind;         ///< "fit", "ratio", "bound"
    double value = 0.0;       ///< exponent or ratio
    double target = 0.0;
    double tolerance = 0.0;   ///< |value - target| <= tolerance, or value <= target for bounds
    std::string comparison = "within";  ///< "within", "at-most", "at-least"
    std::optional<FitResult> fit;
    double min_r_squared = 0.0;
    bool pass = false;
    std::string error;        ///< non-empty when the check aborted
    nlohmann::json details = nlohmann::json::object();

    void decide() {
        if (!error.empty() || !std::isfinite(value)) {
            pass = false;
            return;
        }
        bool ok = false;
        if (comparison == "within") ok = std::abs(value - target) <= tolerance;
        if (comparison == "at-most") ok = value <= target + tolerance;
        if (comparison == "at-least") ok = value >= target - tolerance;
        if (fit) ok = ok && fit->r_squared >= min_r_squared;
        pass = ok;
    }
};

inline CheckEntry fit_check(std::string id, std::string claim, const FitResult& f, double target, double tol,
                            double min_r2 = 0.95) {
    CheckEntry e;
    e.id = std::move(id);
    e.claim = std::move(claim);
    e.kind = "fit";
    e.value = f.exponent;
    e.target = target;
    e.tolerance = tol;
    e.fit = f;
    e.min_r_squared = min_r2;
    e.decide();
    return e;
}

inline CheckEntry bound_check(std::string id, std::string claim, double value, double target,
                              std::string comparison = "at-most", double tol = 0.0) {
    CheckEntry e;
    e.id = std::move(id);
    e.claim = std::move(claim);
    e.kind = comparison == "within" ? "ratio" : "bound";
    e.value = value;
    e.target = target;
    e.tolerance = tol;
    e.comparison = std::move(comparison);
    e.decide();
    return e;
}

inline CheckEntry failed_check(std::string id, std::string claim, const std::string& error) {
    CheckEntry e;
    e.id = std::move(id);
    e.claim = std::move(claim);
    e.kind = "error";
    e.error = error;
    e.value = std::nan("");
    e.decide();
    return e;
}

/// Rounds to 9 significant digits so serialized reports are byte-stable.
inline nlohmann::json stable_number(double v) {
    if (!std::isfinite(v)) return nullptr;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return std::strtod(buf, nullptr);
}

inline nlohmann::json stabilize(const nlohmann::json& j) {
    if (j.is_number_float()) return stable_number(j.get<double>());
    if (j.is_object()) {
        nlohmann::json o = nlohmann::json::object();
        for (auto it = j.begin(); it != j.end(); ++it) o[it.key()] = stabilize(it.value());
        return o;
    }
    if (j.is_array()) {
        nlohmann::json a = nlohmann::json::array();
        for (const auto& v : j) a.push_back(stabilize(v));
        return a;
    }
    return j;
}

struct EstimateReport {
    std::vector<CheckEntry> checks;
    nlohmann::json provenance = nlohmann::json::object();

    void add(CheckEntry e) {
        for (const auto& c : checks)
            require(c.id != e.id, ErrorKind::InvalidArgument, "duplicate check id " + e.id);
        checks.push_back(std::move(e));
    }
    bool all_pass() const {
        for (const auto& c : checks)
            if (!c.pass) return false;
        return !checks.empty();
    }
    void merge(const EstimateReport& o) {
        for (const auto& c : o.checks) add(c);
    }
    void sort() {
        std::sort(checks.begin(), checks.end(), [](const CheckEntry& a, const CheckEntry& b) { return a.id < b.id; });
    }

    nlohmann::json to_json() const {
        nlohmann::json out;
        nlohmann::json cs = nlohmann::json::object();
        for (const auto& c : checks) {
            nlohmann::json j;
            j["claim"] = c.claim;
            j["kind"] = c.kind;
            j["value"] = c.value;
            j["target"] = c.target;
            j["tolerance"] = c.tolerance;
            j["comparison"] = c.comparison;
            j["pass"] = c.pass;
            if (!c.error.empty()) j["error"] = c.error;
            if (c.fit) {
                j["r_squared"] = c.fit->r_squared;
                j["min_r_squared"] = c.min_r_squared;
                j["window"] = {c.fit->window_lo, c.fit->window_hi};
                j["points"] = c.fit->points;
                j["intercept"] = c.fit->intercept;
            }
            if (!c.details.empty()) j["details"] = c.details;
            cs[c.id] = j;
        }
        out["checks"] = cs;
        out["provenance"] = provenance;
        out["all_pass"] = all_pass();
        return stabilize(out);
    }

    std::string to_csv() const {
        std::vector<const CheckEntry*> sorted;
        for (const auto& c : checks) sorted.push_back(&c);
        std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->id < b->id; });
        std::string s = "id,kind,value,target,tolerance,comparison,r_squared,window_lo,window_hi,pass\n";
        auto num = [](double v) {
            if (!std::isfinite(v)) return std::string("nan");
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.9g", v);
            return std::string(buf);
        };
        for (const auto* c : sorted) {
            s += c->id + "," + c->kind + "," + num(c->value) + "," + num(c->target) + "," + num(c->tolerance) + "," +
                 c->comparison + ",";
            s += c->fit ? num(c->fit->r_squared) + "," + num(c->fit->window_lo) + "," + num(c->fit->window_hi) : ",,";
            s += std::string(",") + (c->pass ? "true" : "false") + "\n";
        }
        return s;
    }
};

// ---------------------------------------------------------------------------
// Norm scalings of a Green column around its pole.

struct ScalingData {
    FitResult l1_mass;       ///< int_{B_r} |G|, slope 2 - n + n = 2
    FitResult l1_gradient;   ///< int_{B_r} |DG|, slope 1
    FitResult y12_tail;      ///< ||G||_{Y^{1,2}(Omega \ B_r)}, slope 1 - n/2
};

/// Ball-mass and tail fits for column k of G over the radii. Under the far-field closure
/// the exterior of the box is added analytically to the tail norms.
inline ScalingData norm_scalings(const GreenContext& ctx, const AveragedGreenMatrix& G, int k,
                                 const std::vector<double>& radii) {
    require(radii.size() >= 3, ErrorKind::InvalidArgument, "window holds fewer than 3 radii");
    const DomainMask& mask = ctx.mask();
    const DiscreteField& u = G.columns.at(k);
    std::optional<ExteriorTail> ext;
    if (ctx.closure() == Closure::FarField) ext = exterior_tail(ctx.far_field(G.transpose), ctx.grid().box(), G.pole, k);
    std::vector<std::pair<double, double>> mass, gmass, tail;
    for (double r : radii) {
        if (ctx.closure() == Closure::Zero)
            require(r < boundary_distance(mask, G.pole), ErrorKind::Precondition, "radius reaches the boundary");
        const Region ball = ball_region(mask, G.pole, r);
        const auto val = cell_magnitudes(u, ball, MagnitudeKind::Value);
        const auto grd = cell_magnitudes(u, ball, MagnitudeKind::Gradient);
        double m = 0.0, gm = 0.0;
        for (std::size_t i = 0; i < val.magnitude.size(); ++i) {
            m += val.magnitude[i] * val.measure[i];
            gm += grd.magnitude[i] * grd.measure[i];
        }
        mass.emplace_back(r, m);
        gmass.emplace_back(r, gm);
        const Region out = outside_ball_region(mask, G.pole, r);
        double l6 = std::pow(lp_norm(u, 6.0, out), 6.0);
        double d2 = std::pow(grad_l2(u, out), 2.0);
        if (ext) {
            l6 += ext->value6;
            d2 += ext->grad_sq;
        }
        tail.emplace_back(r, std::pow(l6, 1.0 / 6.0) + std::sqrt(d2));
    }
    return {fit_power_law(mass), fit_power_law(gmass), fit_power_law(tail)};
}

/// ||D v_rho||_{L2} for each rho (column k), fitted against rho; slope (2 - n)/2.
inline FitResult energy_scaling(const GreenContext& ctx, const Vec3& y, const std::vector<double>& rhos, int k = 0) {
    std::vector<std::pair<double, double>> pts;
    std::optional<ExteriorTail> ext;
    for (double rho : rhos) {
        const auto G = build_averaged_green(ctx, y, rho);
        double e2 = std::pow(grad_l2(G.columns[k], domain_region(ctx.mask())), 2.0);
        if (ctx.closure() == Closure::FarField) {
            if (!ext) ext = exterior_tail(ctx.far_field(), ctx.grid().box(), G.pole, k);
            e2 += ext->grad_sq;
        }
        pts.emplace_back(rho, std::sqrt(e2));
    }
    return fit_power_law(pts);
}

// ---------------------------------------------------------------------------
// Regularity exponents.

struct PropertyHReport {
    double mu_hat = 0.0;      ///< min over the ensemble of fitted exponents
    double H_hat = 0.0;       ///< max over the ensemble of the scaled energy ratio
    double median_r_squared = 0.0;
    std::size_t ensemble_size = 0;
    std::vector<double> radii;
    std::vector<double> member_mu;
    std::vector<double> member_r_squared;
    double R = 0.0;
    std::uint64_t seed = 0;
    bool reported = false;    ///< mu_hat reported only when the median r^2 >= 0.98
};

namespace detail {

/// Solves L u = 0 on `mask` with Gaussian nodal data on the Dirichlet nodes selected by
/// `data_node`, fits int_{Omega_r(c)} |Du|^2 ~ r^{1 + 2 mu} over the ladder.
inline PropertyHReport energy_decay_ensemble(const OperatorSpec& spec, const DomainMask& mask, const Vec3& c,
                                             double R, const std::vector<double>& radii, int ensemble_size,
                                             std::uint64_t seed, const SolverSettings& settings,
                                             const std::function<bool(std::size_t)>& data_node) {
    require(ensemble_size >= 16, ErrorKind::InvalidArgument, "ensemble needs at least 16 members");
    const auto sys = assemble(spec, mask);
    const Grid& g = mask.grid();
    const int n = spec.components;
    std::vector<double> load(sys.vector_size(), 0.0);
    std::vector<Region> balls;
    for (double r : radii) balls.push_back(ball_region(mask, c, r));
    const Region whole = ball_region(mask, c, R);
    PropertyHReport rep;
    rep.radii = radii;
    rep.R = R;
    rep.seed = seed;
    rep.ensemble_size = static_cast<std::size_t>(ensemble_size);
    std::vector<std::vector<double>> energies;
    std::vector<double> total;
    rep.mu_hat = std::numeric_limits<double>::infinity();
    for (int m = 0; m < ensemble_size; ++m) {
        Rng rng(splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(m) + 1)));
        std::vector<double> bc(sys.vector_size(), 0.0);
        for (std::size_t node = 0; node < g.node_count(); ++node) {
            if (mask.node_kind(node) != NodeKind::Boundary || !data_node(node)) continue;
            for (int i = 0; i < n; ++i) bc[node * n + i] = rng.gaussian();
        }
        const auto u = solve_dirichlet(sys, load, settings, bc).field;
        std::vector<std::pair<double, double>> pts;
        std::vector<double> e;
        for (std::size_t i = 0; i < radii.size(); ++i) {
            const double v = std::pow(grad_l2(u, balls[i]), 2.0);
            e.push_back(v);
            pts.emplace_back(radii[i], v);
        }
        const auto f = fit_power_law(pts);
        const double mu = (f.exponent - (kDim - 2)) / 2.0;
        rep.member_mu.push_back(mu);
        rep.member_r_squared.push_back(f.r_squared);
        rep.mu_hat = std::min(rep.mu_hat, mu);
        energies.push_back(std::move(e));
        total.push_back(std::pow(grad_l2(u, whole), 2.0));
    }
    auto r2 = rep.member_r_squared;
    std::sort(r2.begin(), r2.end());
    rep.median_r_squared = r2[r2.size() / 2];
    rep.reported = rep.median_r_squared >= 0.98;
    const double p = kDim - 2 + 2.0 * rep.mu_hat;
    for (std::size_t m = 0; m < energies.size(); ++m)
        for (std::size_t i = 0; i < radii.size(); ++i)
            rep.H_hat = std::max(rep.H_hat, energies[m][i] / total[m] * std::pow(R / radii[i], p));
    return rep;
}

}  // namespace detail

/// Default radius ladder for the energy-decay estimators: 6 radii in [R/12, R/3].
inline std::vector<double> regularity_ladder(double R) { return geometric_ladder(R / 12.0, R / 3.0, 6); }

/// Interior estimator on the ball B_R(center) (staircase ball inside the grid box).
inline PropertyHReport property_h_estimate(const OperatorSpec& spec, const Grid& grid, const Vec3& center, double R,
                                           int ensemble_size, std::uint64_t seed, const SolverSettings& settings = {},
                                           std::vector<double> radii = {}) {
    require(grid.box().contains(center) && R > 0.0, ErrorKind::InvalidArgument, "bad ball");
    for (int a = 0; a < kDim; ++a)
        require(center[a] - R >= grid.box().lo[a] - 1e-12 && center[a] + R <= grid.box().hi[a] + 1e-12,
                ErrorKind::Precondition, "ball must lie inside the box");
    if (radii.empty()) radii = regularity_ladder(R);
    const auto mask = mask_from_predicate(grid, [center, R](const Vec3& x) { return distance(x, center) < R; }, "ball");
    return detail::energy_decay_ensemble(spec, mask, center, R, radii, ensemble_size, seed, settings,
                                         [](std::size_t) { return true; });
}

/// Boundary estimator at x_bar: solutions on Omega cap B_R(x_bar) vanishing on the part of
/// the boundary that belongs to dOmega, with Gaussian data on the spherical cap.
inline PropertyHReport property_bh_estimate(const OperatorSpec& spec, const DomainMask& mask, const Vec3& x_bar,
                                            double R, int ensemble_size, std::uint64_t seed,
                                            const SolverSettings& settings = {}, std::vector<double> radii = {},
                                            double declared_theta = 0.5) {
    const std::vector<double> probe{R / 4.0, R / 2.0, R};
    const auto s = condition_s_estimate(mask, x_bar, probe, 20000, seed, declared_theta);
    require(s.theta_inf > 0.02, ErrorKind::ConditionSViolated,
            "condition (S) fails at the boundary point: theta = 0, no exterior");
    if (radii.empty()) radii = regularity_ladder(R);
    const Grid& g = mask.grid();
    const auto local = mask_from_predicate(
        g, [&mask, x_bar, R](const Vec3& x) { return distance(x, x_bar) < R && mask.in_domain_extended(x); }, "cap");
    // Data only on nodes of the spherical cap: nodes not on dOmega.
    auto on_cap = [&g, &mask](std::size_t node) { return mask.node_kind(node) == NodeKind::Interior; };
    (void)g;
    return detail::energy_decay_ensemble(spec, local, x_bar, R, radii, ensemble_size, seed, settings, on_cap);
}

// ---------------------------------------------------------------------------
// Pointwise checks.

/// Fits mean over directions of |G(x, y) - G(z, y)| against |x - z| for z = x + s d.
inline FitResult holder_continuity_fit(const AveragedGreenMatrix& G, const Vec3& x, const std::vector<double>& offsets) {
    const DomainMask& mask = G.columns.at(0).mask();
    const double h = mask.grid().h_max();
    const double dbar = std::min({boundary_distance(mask, x), boundary_distance(mask, G.pole), distance(x, G.pole)});
    std::vector<std::pair<double, double>> pts;
    const auto gx = G.evaluate(x);
    for (double s : offsets) {
        if (s == 0.0) continue;
        require(s >= 8.0 * h * (1.0 - 1e-12) && s <= dbar / 2.0 * (1.0 + 1e-12), ErrorKind::Precondition,
                "offset outside the window 8h <= |x - z| <= d/2");
        double acc = 0.0;
        int cnt = 0;
        for (const Vec3& d : lattice_directions()) {
            const Vec3 z = x + s * d;
            if (!mask.contains(z)) continue;
            acc += detail::max_abs(G.evaluate(z) - gx);
            ++cnt;
        }
        pts.emplace_back(s, acc / cnt);
    }
    return fit_power_law(pts);
}

/// Fits max-entry |G(x, y)| against d_x along the inward normal from x_bar.
inline FitResult boundary_decay_fit(const AveragedGreenMatrix& G, const Vec3& x_bar, const Vec3& normal,
                                    const std::vector<double>& offsets) {
    const DomainMask& mask = G.columns.at(0).mask();
    require(boundary_distance(mask, x_bar) <= 1e-9, ErrorKind::NotOnBoundary, "x_bar is not on the boundary");
    const double R = distance(x_bar, G.pole);
    std::vector<std::pair<double, double>> pts;
    for (double d : offsets) {
        require(d <= R / 8.0 * (1.0 + 1e-12), ErrorKind::Precondition, "pole too close: offsets must stay below |x_bar - y| / 8");
        const Vec3 x = x_bar + d * normal;
        pts.emplace_back(boundary_distance(mask, x), detail::max_abs(G.evaluate(x)));
    }
    return fit_power_law(pts);
}

struct ScalarBounds {
    double min_value = 0.0;   ///< smallest sampled G
    double max_scaled = 0.0;  ///< max of G |x - y|^{n-2}
};

inline ScalarBounds scalar_bounds_check(const AveragedGreenMatrix& G, const std::vector<Vec3>& points) {
    require(G.components() == 1, ErrorKind::NotApplicable, "scalar bounds apply to N = 1 only");
    ScalarBounds b;
    b.min_value = std::numeric_limits<double>::infinity();
    for (const Vec3& x : points) {
        const double r = distance(x, G.pole);
        if (r == 0.0) continue;
        const double v = G.evaluate(x)(0, 0);
        b.min_value = std::min(b.min_value, v);
        b.max_scaled = std::max(b.max_scaled, v * r);
    }
    return b;
}

/// Every node value of a scalar Green column (positivity over the whole grid).
inline double min_nodal_value(const AveragedGreenMatrix& G) {
    require(G.components() == 1, ErrorKind::NotApplicable, "scalar bounds apply to N = 1 only");
    double m = std::numeric_limits<double>::infinity();
    for (double v : G.columns[0].values()) m = std::min(m, v);
    return m;
}

// ---------------------------------------------------------------------------
// Emission.

inline void write_fit_points(const FitResult& f, const std::string& path) {
    std::ofstream out(path);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path);
    out << "# s value\n";
    char buf[96];
    for (const auto& [s, v] : f.data) {
        std::snprintf(buf, sizeof buf, "%.9g %.9g\n", s, v);
        out << buf;
    }
}

}  // namespace greenlab
