#pragma once
// Uniform hexahedral grids, staircase domain masks, boundary geometry and the
// exterior-density (condition S) estimator.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <vector>

#include "greenlab/core.hpp"

namespace greenlab {

struct Box {
    Vec3 lo{0.0, 0.0, 0.0};
    Vec3 hi{1.0, 1.0, 1.0};

    Vec3 extent() const { return hi - lo; }
    double min_extent() const { return std::min({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]}); }
    bool contains(const Vec3& x, double tol = 0.0) const {
        for (int a = 0; a < kDim; ++a)
            if (x[a] < lo[a] - tol || x[a] > hi[a] + tol) return false;
        return true;
    }
};

using Index3 = std::array<int, 3>;

/// Uniform grid over a box. Nodes and cells are numbered lexicographically with the
/// first axis fastest.
class Grid {
public:
    Grid() = default;
    Grid(Box box, Index3 cells) : box_(box), cells_(cells) {
        for (int a = 0; a < kDim; ++a) {
            require(cells[a] > 0, ErrorKind::InvalidGrid, "cell counts must be positive");
            require(box.hi[a] > box.lo[a], ErrorKind::InvalidGrid, "box extents must be positive");
            h_[a] = (box.hi[a] - box.lo[a]) / cells[a];
        }
    }

    const Box& box() const noexcept { return box_; }
    const Index3& cells() const noexcept { return cells_; }
    const Vec3& h() const noexcept { return h_; }
    double h_max() const { return std::max({h_[0], h_[1], h_[2]}); }
    double h_min() const { return std::min({h_[0], h_[1], h_[2]}); }
    double cell_volume() const { return h_[0] * h_[1] * h_[2]; }

    Index3 nodes_per_axis() const { return {cells_[0] + 1, cells_[1] + 1, cells_[2] + 1}; }
    std::size_t node_count() const {
        return static_cast<std::size_t>(cells_[0] + 1) * (cells_[1] + 1) * (cells_[2] + 1);
    }
    std::size_t cell_count() const { return static_cast<std::size_t>(cells_[0]) * cells_[1] * cells_[2]; }

    std::size_t node_index(int i, int j, int k) const {
        return static_cast<std::size_t>(i) +
               static_cast<std::size_t>(cells_[0] + 1) * (static_cast<std::size_t>(j) +
                                                          static_cast<std::size_t>(cells_[1] + 1) * k);
    }
    std::size_t cell_index(int i, int j, int k) const {
        return static_cast<std::size_t>(i) +
               static_cast<std::size_t>(cells_[0]) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(cells_[1]) * k);
    }
    Index3 node_ijk(std::size_t n) const {
        const std::size_t nx = cells_[0] + 1, ny = cells_[1] + 1;
        return {static_cast<int>(n % nx), static_cast<int>((n / nx) % ny), static_cast<int>(n / (nx * ny))};
    }
    Index3 cell_ijk(std::size_t c) const {
        const std::size_t nx = cells_[0], ny = cells_[1];
        return {static_cast<int>(c % nx), static_cast<int>((c / nx) % ny), static_cast<int>(c / (nx * ny))};
    }
    Vec3 node_point(int i, int j, int k) const {
        return {box_.lo[0] + i * h_[0], box_.lo[1] + j * h_[1], box_.lo[2] + k * h_[2]};
    }
    Vec3 node_point(std::size_t n) const {
        const auto [i, j, k] = node_ijk(n);
        return node_point(i, j, k);
    }
    Vec3 cell_center(std::size_t c) const {
        const auto [i, j, k] = cell_ijk(c);
        return {box_.lo[0] + (i + 0.5) * h_[0], box_.lo[1] + (j + 0.5) * h_[1], box_.lo[2] + (k + 0.5) * h_[2]};
    }
    /// Global node index of local vertex `v` (bit a of v = offset along axis a) of a cell.
    std::size_t cell_vertex(const Index3& c, int v) const {
        return node_index(c[0] + (v & 1), c[1] + ((v >> 1) & 1), c[2] + ((v >> 2) & 1));
    }

    /// Cell containing x together with local coordinates in [0,1]^3; points on the
    /// upper box faces map into the last cell.
    std::optional<std::pair<Index3, Vec3>> locate(const Vec3& x) const {
        Index3 c{};
        Vec3 t{};
        for (int a = 0; a < kDim; ++a) {
            const double s = (x[a] - box_.lo[a]) / h_[a];
            if (s < -1e-9 || s > cells_[a] + 1e-9) return std::nullopt;
            int i = static_cast<int>(std::floor(s));
            i = std::clamp(i, 0, cells_[a] - 1);
            c[a] = i;
            t[a] = std::clamp(s - i, 0.0, 1.0);
        }
        return std::make_pair(c, t);
    }

    /// Nearest node (ties toward the lower index).
    std::size_t nearest_node(const Vec3& x) const {
        Index3 n{};
        for (int a = 0; a < kDim; ++a) {
            const double s = (x[a] - box_.lo[a]) / h_[a];
            n[a] = std::clamp(static_cast<int>(std::lround(s)), 0, cells_[a]);
        }
        return node_index(n[0], n[1], n[2]);
    }

private:
    Box box_{};
    Index3 cells_{1, 1, 1};
    Vec3 h_{1.0, 1.0, 1.0};
};

inline Grid build_grid(const Box& box, const Index3& cells) { return Grid(box, cells); }

enum class NodeKind : std::uint8_t { Exterior = 0, Boundary = 1, Interior = 2 };

/// Axis-aligned boundary face between an inside cell and an outside cell (or the box exterior).
struct BoundaryFace {
    int axis = 0;      // normal axis
    double offset = 0; // coordinate of the face plane along `axis`
    Vec3 lo{};         // bounds of the rectangle (lo[axis] == hi[axis] == offset)
    Vec3 hi{};
};

inline double distance_to_face(const BoundaryFace& f, const Vec3& x) {
    double s = 0.0;
    for (int a = 0; a < kDim; ++a) {
        const double c = std::clamp(x[a], f.lo[a], f.hi[a]);
        s += (x[a] - c) * (x[a] - c);
    }
    return std::sqrt(s);
}

using RegionPredicate = std::function<bool(const Vec3&)>;

/// Staircase domain: the union of grid cells whose centers satisfy a predicate.
/// Immutable; copies share storage.
class DomainMask {
public:
    DomainMask() = default;

    static DomainMask from_predicate(const Grid& grid, RegionPredicate inside, std::string name = "custom") {
        auto d = std::make_shared<Data>();
        d->grid = grid;
        d->name = std::move(name);
        d->predicate = std::move(inside);
        d->inside.assign(grid.cell_count(), 0);
        std::size_t count = 0;
        for (std::size_t c = 0; c < grid.cell_count(); ++c) {
            d->inside[c] = d->predicate(grid.cell_center(c)) ? 1 : 0;
            count += d->inside[c];
        }
        require(count > 0, ErrorKind::EmptyDomain, "mask has no inside cells");
        d->inside_count = count;
        check_connected(*d);
        classify_nodes(*d);
        collect_faces(*d);
        DomainMask m;
        m.d_ = std::move(d);
        return m;
    }

    const Grid& grid() const { return d_->grid; }
    const std::string& name() const { return d_->name; }
    bool inside(std::size_t cell) const { return d_->inside[cell] != 0; }
    bool inside(const Index3& c) const {
        const auto& n = d_->grid.cells();
        if (c[0] < 0 || c[1] < 0 || c[2] < 0 || c[0] >= n[0] || c[1] >= n[1] || c[2] >= n[2]) return false;
        return inside(d_->grid.cell_index(c[0], c[1], c[2]));
    }
    std::size_t inside_count() const { return d_->inside_count; }
    bool all_inside() const { return d_->inside_count == d_->grid.cell_count(); }
    NodeKind node_kind(std::size_t n) const { return static_cast<NodeKind>(d_->node_kind[n]); }
    std::span<const std::uint8_t> inside_cells() const { return d_->inside; }
    std::span<const BoundaryFace> boundary_faces() const { return d_->faces; }
    std::vector<std::size_t> boundary_nodes() const {
        std::vector<std::size_t> out;
        for (std::size_t n = 0; n < d_->node_kind.size(); ++n)
            if (d_->node_kind[n] == static_cast<std::uint8_t>(NodeKind::Boundary)) out.push_back(n);
        return out;
    }

    /// Membership of the closed staircase domain.
    bool contains(const Vec3& x) const {
        const auto& g = d_->grid;
        if (!g.box().contains(x, 1e-12)) return false;
        // x may sit on faces/edges/corners shared by up to 8 cells; inside if any is.
        Index3 lo{}, hi{};
        for (int a = 0; a < kDim; ++a) {
            const double s = (x[a] - g.box().lo[a]) / g.h()[a];
            const double fl = std::floor(s + 1e-9);
            const bool on_plane = std::abs(s - std::round(s)) < 1e-9;
            lo[a] = on_plane ? static_cast<int>(std::round(s)) - 1 : static_cast<int>(fl);
            hi[a] = on_plane ? static_cast<int>(std::round(s)) : static_cast<int>(fl);
        }
        for (int i = lo[0]; i <= hi[0]; ++i)
            for (int j = lo[1]; j <= hi[1]; ++j)
                for (int k = lo[2]; k <= hi[2]; ++k)
                    if (inside(Index3{i, j, k})) return true;
        return false;
    }

    /// Classification of an arbitrary point of R^3 as belonging to Omega: inside the box
    /// by the staircase cells, outside the box by the defining predicate.
    bool in_domain_extended(const Vec3& x) const {
        const auto& g = d_->grid;
        if (g.box().contains(x)) {
            auto loc = g.locate(x);
            return loc && inside(loc->first);
        }
        return d_->predicate(x);
    }

    /// Dirichlet nodes are exactly the Boundary nodes.
    std::size_t interior_node_count() const { return d_->interior_count; }

    /// FNV-1a hash of dims, box and inside bytes; identifies the mask in exports.
    std::uint64_t hash() const {
        std::uint64_t h = 1469598103934665603ULL;
        auto mix = [&h](const void* p, std::size_t n) {
            const auto* b = static_cast<const unsigned char*>(p);
            for (std::size_t i = 0; i < n; ++i) {
                h ^= b[i];
                h *= 1099511628211ULL;
            }
        };
        const auto& g = d_->grid;
        mix(g.cells().data(), sizeof(int) * 3);
        mix(g.box().lo.data(), sizeof(double) * 3);
        mix(g.box().hi.data(), sizeof(double) * 3);
        mix(d_->inside.data(), d_->inside.size());
        return h;
    }

private:
    struct Data {
        Grid grid;
        std::string name;
        RegionPredicate predicate;
        std::vector<std::uint8_t> inside;
        std::vector<std::uint8_t> node_kind;
        std::vector<BoundaryFace> faces;
        std::size_t inside_count = 0;
        std::size_t interior_count = 0;
    };

    static void check_connected(const Data& d) {
        const auto& g = d.grid;
        const auto& n = g.cells();
        std::vector<std::uint8_t> seen(g.cell_count(), 0);
        std::size_t start = 0;
        while (!d.inside[start]) ++start;
        std::queue<std::size_t> q;
        q.push(start);
        seen[start] = 1;
        std::size_t reached = 1;
        while (!q.empty()) {
            const auto c = g.cell_ijk(q.front());
            q.pop();
            for (int a = 0; a < kDim; ++a)
                for (int s : {-1, 1}) {
                    Index3 nb = c;
                    nb[a] += s;
                    if (nb[a] < 0 || nb[a] >= n[a]) continue;
                    const std::size_t id = g.cell_index(nb[0], nb[1], nb[2]);
                    if (d.inside[id] && !seen[id]) {
                        seen[id] = 1;
                        ++reached;
                        q.push(id);
                    }
                }
        }
        require(reached == d.inside_count, ErrorKind::DisconnectedDomain, "inside cells are not face-connected");
    }

    static void classify_nodes(Data& d) {
        const auto& g = d.grid;
        const auto np = g.nodes_per_axis();
        d.node_kind.assign(g.node_count(), 0);
        std::size_t interior = 0;
        for (int k = 0; k < np[2]; ++k)
            for (int j = 0; j < np[1]; ++j)
                for (int i = 0; i < np[0]; ++i) {
                    int in = 0, total = 0;
                    for (int v = 0; v < 8; ++v) {
                        const Index3 c{i - 1 + (v & 1), j - 1 + ((v >> 1) & 1), k - 1 + ((v >> 2) & 1)};
                        ++total;
                        const auto& n = g.cells();
                        if (c[0] < 0 || c[1] < 0 || c[2] < 0 || c[0] >= n[0] || c[1] >= n[1] || c[2] >= n[2]) continue;
                        in += d.inside[g.cell_index(c[0], c[1], c[2])];
                    }
                    NodeKind kind = NodeKind::Exterior;
                    if (in == total) {
                        kind = NodeKind::Interior;
                        ++interior;
                    } else if (in > 0) {
                        kind = NodeKind::Boundary;
                    }
                    d.node_kind[g.node_index(i, j, k)] = static_cast<std::uint8_t>(kind);
                }
        d.interior_count = interior;
    }

    static void collect_faces(Data& d) {
        const auto& g = d.grid;
        const auto& n = g.cells();
        const auto& h = g.h();
        for (std::size_t c = 0; c < g.cell_count(); ++c) {
            if (!d.inside[c]) continue;
            const auto ijk = g.cell_ijk(c);
            const Vec3 lo = g.node_point(ijk[0], ijk[1], ijk[2]);
            for (int a = 0; a < kDim; ++a)
                for (int s : {0, 1}) {
                    Index3 nb = ijk;
                    nb[a] += s ? 1 : -1;
                    const bool outside_box = nb[a] < 0 || nb[a] >= n[a];
                    if (!outside_box && d.inside[g.cell_index(nb[0], nb[1], nb[2])]) continue;
                    BoundaryFace f;
                    f.axis = a;
                    f.lo = lo;
                    f.hi = lo + Vec3{h[0], h[1], h[2]};
                    f.offset = lo[a] + s * h[a];
                    f.lo[a] = f.hi[a] = f.offset;
                    d.faces.push_back(f);
                }
        }
    }

    std::shared_ptr<const Data> d_;
};

inline DomainMask mask_from_predicate(const Grid& grid, RegionPredicate inside, std::string name = "custom") {
    return DomainMask::from_predicate(grid, std::move(inside), std::move(name));
}

// ---------------------------------------------------------------------------
// Builtin masks.

inline DomainMask full_box_mask(const Grid& g) {
    return mask_from_predicate(g, [](const Vec3&) { return true; }, "full-box");
}

/// Omega = {x : x[axis] > offset} (or < offset when `upper` is false).
inline DomainMask half_space_mask(const Grid& g, int axis, double offset, bool upper = true) {
    require(axis >= 0 && axis < kDim, ErrorKind::InvalidArgument, "half-space axis must be 0, 1 or 2");
    return mask_from_predicate(
        g, [axis, offset, upper](const Vec3& x) { return upper ? x[axis] > offset : x[axis] < offset; }, "half-space");
}

/// Box with the octant {x >= corner componentwise} removed; `corner` is a re-entrant vertex.
inline DomainMask notched_cube_mask(const Grid& g, Vec3 corner) {
    return mask_from_predicate(
        g, [corner](const Vec3& x) { return !(x[0] > corner[0] && x[1] > corner[1] && x[2] > corner[2]); },
        "notched-cube");
}

/// Slab {lo < x[axis] < hi}.
inline DomainMask slab_mask(const Grid& g, int axis, double lo, double hi) {
    require(axis >= 0 && axis < kDim && hi > lo, ErrorKind::InvalidArgument, "slab needs a valid axis and lo < hi");
    return mask_from_predicate(g, [axis, lo, hi](const Vec3& x) { return x[axis] > lo && x[axis] < hi; }, "slab");
}

// ---------------------------------------------------------------------------
// Geometry.

/// Euclidean distance from x to the staircase boundary (the Dirichlet faces).
inline double boundary_distance(const DomainMask& mask, const Vec3& x) {
    require(mask.contains(x), ErrorKind::OutsideDomain, "point is outside the domain");
    double best = std::numeric_limits<double>::infinity();
    for (const auto& f : mask.boundary_faces()) best = std::min(best, distance_to_face(f, x));
    return best;
}

/// Fraction of B_R(center) lying outside Omega, by midpoint quadrature on a lattice with
/// `resolution` points across the ball diameter. Deterministic.
inline double exterior_fraction(const DomainMask& mask, const Vec3& center, double R, int resolution = 64) {
    require(R > 0.0 && resolution > 0, ErrorKind::InvalidArgument, "radius and resolution must be positive");
    const double step = 2.0 * R / resolution;
    std::size_t in_ball = 0, outside = 0;
    for (int i = 0; i < resolution; ++i)
        for (int j = 0; j < resolution; ++j)
            for (int k = 0; k < resolution; ++k) {
                const Vec3 d{-R + (i + 0.5) * step, -R + (j + 0.5) * step, -R + (k + 0.5) * step};
                if (dot(d, d) > R * R) continue;
                ++in_ball;
                if (!mask.in_domain_extended(center + d)) ++outside;
            }
    return in_ball ? static_cast<double>(outside) / static_cast<double>(in_ball) : 0.0;
}

struct ConditionSReport {
    Vec3 point{};
    std::vector<double> radii;
    std::vector<double> theta_hat;
    std::vector<double> std_error;
    double theta_inf = 0.0;
    double declared_theta = 0.0;
    double R_a = 0.0;          ///< largest radius of the passing prefix (0 if the first radius fails)
    bool R_a_capped = false;   ///< every in-box radius passed, so the true R_a may be larger
    double box_radius = 0.0;   ///< largest radius whose ball stays within the box
};

/// Monte Carlo estimate of |B_R(p) \ Omega| / |B_R(p)| for each radius.
inline ConditionSReport condition_s_estimate(const DomainMask& mask, const Vec3& point, std::span<const double> radii,
                                             std::size_t sample_count, std::uint64_t seed,
                                             double declared_theta = 0.5) {
    require(!radii.empty() && sample_count > 0, ErrorKind::InvalidArgument, "need radii and samples");
    require(mask.contains(point) && boundary_distance(mask, point) <= 1e-9 * mask.grid().h_max(),
            ErrorKind::NotOnBoundary, "point is not on the domain boundary");
    ConditionSReport rep;
    rep.point = point;
    rep.declared_theta = declared_theta;
    const Box& box = mask.grid().box();
    double box_r = std::numeric_limits<double>::infinity();
    for (int a = 0; a < kDim; ++a)
        for (double dist : {point[a] - box.lo[a], box.hi[a] - point[a]})
            if (dist > 1e-12) box_r = std::min(box_r, dist);
    rep.box_radius = box_r;

    std::vector<double> sorted(radii.begin(), radii.end());
    std::sort(sorted.begin(), sorted.end());
    bool prefix_ok = true;
    bool all_in_box_passed = true;
    rep.theta_inf = 1.0;
    for (std::size_t idx = 0; idx < sorted.size(); ++idx) {
        const double R = sorted[idx];
        require(R > 0.0, ErrorKind::InvalidArgument, "radii must be positive");
        Rng rng(splitmix64(seed) ^ splitmix64(idx + 1));
        std::size_t outside = 0;
        for (std::size_t s = 0; s < sample_count;) {
            const Vec3 d{rng.uniform(-R, R), rng.uniform(-R, R), rng.uniform(-R, R)};
            if (dot(d, d) > R * R) continue;
            ++s;
            if (!mask.in_domain_extended(point + d)) ++outside;
        }
        const double th = static_cast<double>(outside) / static_cast<double>(sample_count);
        rep.radii.push_back(R);
        rep.theta_hat.push_back(th);
        rep.std_error.push_back(std::sqrt(std::max(th * (1.0 - th), 0.0) / static_cast<double>(sample_count)));
        rep.theta_inf = std::min(rep.theta_inf, th);
        const bool in_box = R <= box_r;
        if (in_box) {
            if (prefix_ok && th >= declared_theta - 3.0 * rep.std_error.back()) {
                rep.R_a = R;
            } else {
                prefix_ok = false;
                all_in_box_passed = false;
            }
        }
    }
    rep.R_a_capped = all_in_box_passed && rep.R_a > 0.0;
    return rep;
}

// ---------------------------------------------------------------------------
// Mask export: 64-byte header then one 0/1 byte per cell in lexicographic order.

inline void export_mask(const DomainMask& mask, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot open " + path);
    const char magic[8] = {'G', 'L', 'M', 'A', 'S', 'K', '1', '\0'};
    out.write(magic, 8);
    const auto& g = mask.grid();
    std::int32_t dims[3] = {g.cells()[0], g.cells()[1], g.cells()[2]};
    out.write(reinterpret_cast<const char*>(dims), sizeof dims);
    std::int32_t pad = 0;
    out.write(reinterpret_cast<const char*>(&pad), sizeof pad);
    out.write(reinterpret_cast<const char*>(g.box().lo.data()), 3 * sizeof(double));
    out.write(reinterpret_cast<const char*>(g.box().hi.data()), 3 * sizeof(double));
    const auto cells = mask.inside_cells();
    out.write(reinterpret_cast<const char*>(cells.data()), static_cast<std::streamsize>(cells.size()));
    require(static_cast<bool>(out), ErrorKind::Io, "write failed for " + path);
}

/// Reads an exported mask back (the predicate outside the box is lost; the box exterior
/// is treated as outside Omega).
inline DomainMask import_mask(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    require(in && std::memcmp(magic, "GLMASK1", 7) == 0, ErrorKind::Io, "bad mask header in " + path);
    std::int32_t dims[3], pad;
    Box box;
    in.read(reinterpret_cast<char*>(dims), sizeof dims);
    in.read(reinterpret_cast<char*>(&pad), sizeof pad);
    in.read(reinterpret_cast<char*>(box.lo.data()), 3 * sizeof(double));
    in.read(reinterpret_cast<char*>(box.hi.data()), 3 * sizeof(double));
    Grid g(box, {dims[0], dims[1], dims[2]});
    std::vector<std::uint8_t> bytes(g.cell_count());
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(in), ErrorKind::Io, "truncated mask file " + path);
    auto shared = std::make_shared<std::vector<std::uint8_t>>(std::move(bytes));
    auto pred = [g, shared](const Vec3& x) {
        if (!g.box().contains(x)) return false;
        auto loc = g.locate(x);
        return loc && (*shared)[g.cell_index(loc->first[0], loc->first[1], loc->first[2])] != 0;
    };
    return mask_from_predicate(g, pred, "imported");
}

}  // namespace greenlab
