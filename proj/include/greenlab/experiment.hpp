#pragma once
// Config-driven experiments: parsing, named suites, report and manifest emission.

#include <yaml-cpp/yaml.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "greenlab/core.hpp"
#include "greenlab/fem.hpp"
#include "greenlab/green.hpp"
#include "greenlab/grid.hpp"
#include "greenlab/operator.hpp"
#include "greenlab/verify.hpp"

namespace greenlab {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kMemoryBudgetEnv = "GREENLAB_MEMORY_BUDGET_MB";
inline constexpr double kDefaultMemoryBudgetMb = 8192.0;

inline const std::vector<std::string>& suite_names() {
    static const std::vector<std::string> names{"calibrate",      "decay",        "tails",    "scalings",
                                                "symmetry",       "representation", "perturbation",
                                                "boundary",       "regularity"};
    return names;
}

// ---------------------------------------------------------------------------
// Config.

struct OperatorConfig {
    std::string name = "identity";
    int components = 1;
    double kappa = 0.1;
    double amplitude = 0.25;
    double frequency = 1.0;
    double a_lo = 1.0;
    double a_hi = 4.0;
    double period = 0.5;
    Vec3 center{0, 0, 0};
    double width = 0.3;
};

struct MaskConfig {
    std::string kind = "full-box";
    int axis = 2;
    double offset = 0.0;
    bool upper = true;
    Vec3 corner{0, 0, 0};
    double lo = -0.5;
    double hi = 0.5;
};

struct GreenBuildConfig {
    std::vector<Vec3> poles;
    bool transpose = false;
    std::string closure = "auto";  ///< auto: far-field on a full box, zero otherwise
};

struct ExperimentConfig {
    OperatorConfig op;
    Box box{{-1, -1, -1}, {1, 1, 1}};
    Index3 cells{32, 32, 32};
    MaskConfig mask;
    std::vector<std::string> suites{"calibrate"};
    std::vector<std::string> checks;  ///< optional filter on check ids (prefix match)
    SolverSettings solver;
    std::optional<std::uint64_t> seed;
    std::string output = "out";
    int ensemble = 16;
    double rho_cells = 2.0;
    GreenBuildConfig green;
    std::string green_cache;
    bool dump_fields = false;
};

namespace detail {

[[noreturn]] inline void config_error(const std::string& path, const std::string& what) {
    throw Error(ErrorKind::Config, "'" + path + "': " + what);
}

template <class T>
T scalar_at(const YAML::Node& n, const std::string& path) {
    if (!n.IsScalar()) config_error(path, "expected a scalar");
    try {
        return n.as<T>();
    } catch (const YAML::Exception&) {
        config_error(path, "type mismatch");
    }
}

inline Vec3 vec3_at(const YAML::Node& n, const std::string& path) {
    if (!n.IsSequence() || n.size() != 3) config_error(path, "expected a list of 3 numbers");
    Vec3 v{};
    for (int a = 0; a < 3; ++a) v[a] = scalar_at<double>(n[a], path + "[" + std::to_string(a) + "]");
    return v;
}

inline void check_keys(const YAML::Node& n, const std::string& path, const std::set<std::string>& allowed) {
    if (!n.IsMap()) config_error(path.empty() ? "<root>" : path, "expected a mapping");
    for (auto it = n.begin(); it != n.end(); ++it) {
        const auto key = it->first.as<std::string>();
        if (!allowed.count(key)) config_error(path.empty() ? key : path + "." + key, "unknown key");
    }
}

inline std::vector<std::string> string_list(const YAML::Node& n, const std::string& path) {
    std::vector<std::string> out;
    if (n.IsScalar()) {
        out.push_back(n.as<std::string>());
    } else if (n.IsSequence()) {
        for (std::size_t i = 0; i < n.size(); ++i)
            out.push_back(scalar_at<std::string>(n[i], path + "[" + std::to_string(i) + "]"));
    } else {
        config_error(path, "expected a name or a list of names");
    }
    return out;
}

}  // namespace detail

/// Estimated peak memory of one system with its transpose and Krylov work vectors.
inline double memory_estimate_mb(const Index3& cells, int components) {
    const double nodes = double(cells[0] + 1) * double(cells[1] + 1) * double(cells[2] + 1);
    const double bytes = nodes * components * 8.0 * (2.0 * 27.0 * components + 16.0);
    return bytes / (1024.0 * 1024.0);
}

inline double memory_budget_mb() {
    const char* env = std::getenv(kMemoryBudgetEnv);
    if (!env || !*env) return kDefaultMemoryBudgetMb;
    char* end = nullptr;
    const double v = std::strtod(env, &end);
    require(end && *end == '\0' && v > 0.0, ErrorKind::Config,
            std::string(kMemoryBudgetEnv) + " must be a positive number of megabytes");
    return v;
}

inline void expand_suites(std::vector<std::string>& suites) {
    std::vector<std::string> out;
    for (const auto& s : suites) {
        if (s == "all") {
            for (const auto& n : suite_names()) out.push_back(n);
            continue;
        }
        if (std::find(suite_names().begin(), suite_names().end(), s) == suite_names().end())
            detail::config_error("suite", "unknown suite '" + s + "'");
        out.push_back(s);
    }
    std::vector<std::string> uniq;
    for (const auto& s : out)
        if (std::find(uniq.begin(), uniq.end(), s) == uniq.end()) uniq.push_back(s);
    suites = uniq;
}

inline bool suites_need_seed(const std::vector<std::string>& suites) {
    for (const auto& s : suites)
        if (s == "boundary" || s == "regularity") return true;
    return false;
}

/// Command-line values that take precedence over the config file.
struct ConfigOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> suite;
    std::optional<std::string> output;
};

/// Parses and validates the YAML config. A manifest written by a previous run is accepted
/// too: its echoed config is used.
inline ExperimentConfig parse_config(const std::string& text, const ConfigOverrides& over = {}) {
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::Exception& e) {
        throw Error(ErrorKind::Config, std::string("malformed config: ") + e.what());
    }
    if (root.IsMap() && root["greenlab_manifest"]) {
        if (!root["config"]) detail::config_error("config", "manifest has no echoed config");
        root = root["config"];
    }
    using detail::scalar_at;
    detail::check_keys(root, "", {"operator", "grid", "mask", "suite", "checks", "solver", "seed", "output", "ensemble",
                                  "rho_cells", "green", "green_cache", "dump_fields"});
    ExperimentConfig c;

    if (!root["operator"]) detail::config_error("operator", "missing required key");
    {
        const auto n = root["operator"];
        detail::check_keys(n, "operator", {"name", "components", "kappa", "amplitude", "frequency", "a_lo", "a_hi",
                                           "period", "center", "width"});
        if (!n["name"]) detail::config_error("operator.name", "missing required key");
        c.op.name = scalar_at<std::string>(n["name"], "operator.name");
        static const std::set<std::string> ops{"identity", "scalar-variable", "coupled", "checkerboard", "scalar-bump"};
        if (!ops.count(c.op.name)) detail::config_error("operator.name", "unknown operator '" + c.op.name + "'");
        if (c.op.name == "coupled") c.op.components = 2;
        if (n["components"]) c.op.components = scalar_at<int>(n["components"], "operator.components");
        if (c.op.components < 1 || c.op.components > 8) detail::config_error("operator.components", "must be in 1..8");
        if (c.op.name == "coupled" && c.op.components < 2)
            detail::config_error("operator.components", "coupled operator needs at least 2 components");
        if (n["kappa"]) c.op.kappa = scalar_at<double>(n["kappa"], "operator.kappa");
        if (n["amplitude"]) c.op.amplitude = scalar_at<double>(n["amplitude"], "operator.amplitude");
        if (n["frequency"]) c.op.frequency = scalar_at<double>(n["frequency"], "operator.frequency");
        if (n["a_lo"]) c.op.a_lo = scalar_at<double>(n["a_lo"], "operator.a_lo");
        if (n["a_hi"]) c.op.a_hi = scalar_at<double>(n["a_hi"], "operator.a_hi");
        if (n["period"]) c.op.period = scalar_at<double>(n["period"], "operator.period");
        if (n["center"]) c.op.center = detail::vec3_at(n["center"], "operator.center");
        if (n["width"]) c.op.width = scalar_at<double>(n["width"], "operator.width");
    }

    if (!root["grid"]) detail::config_error("grid", "missing required key");
    {
        const auto n = root["grid"];
        detail::check_keys(n, "grid", {"lo", "hi", "cells"});
        if (n["lo"]) c.box.lo = detail::vec3_at(n["lo"], "grid.lo");
        if (n["hi"]) c.box.hi = detail::vec3_at(n["hi"], "grid.hi");
        if (!n["cells"]) detail::config_error("grid.cells", "missing required key");
        const auto cells = n["cells"];
        if (cells.IsScalar()) {
            const int m = scalar_at<int>(cells, "grid.cells");
            c.cells = {m, m, m};
        } else if (cells.IsSequence() && cells.size() == 3) {
            for (int a = 0; a < 3; ++a)
                c.cells[a] = scalar_at<int>(cells[a], "grid.cells[" + std::to_string(a) + "]");
        } else {
            detail::config_error("grid.cells", "expected an integer or a list of 3 integers");
        }
        for (int a = 0; a < 3; ++a) {
            if (c.cells[a] < 2) detail::config_error("grid.cells", "need at least 2 cells per axis");
            if (!(c.box.hi[a] > c.box.lo[a])) detail::config_error("grid.hi", "box must have positive extent");
        }
    }

    if (root["mask"]) {
        const auto n = root["mask"];
        detail::check_keys(n, "mask", {"kind", "axis", "offset", "upper", "corner", "lo", "hi"});
        if (n["kind"]) c.mask.kind = scalar_at<std::string>(n["kind"], "mask.kind");
        static const std::set<std::string> kinds{"full-box", "half-space", "notched-cube", "slab"};
        if (!kinds.count(c.mask.kind)) detail::config_error("mask.kind", "unknown mask '" + c.mask.kind + "'");
        if (n["axis"]) c.mask.axis = scalar_at<int>(n["axis"], "mask.axis");
        if (c.mask.axis < 0 || c.mask.axis > 2) detail::config_error("mask.axis", "must be 0, 1 or 2");
        if (n["offset"]) c.mask.offset = scalar_at<double>(n["offset"], "mask.offset");
        if (n["upper"]) c.mask.upper = scalar_at<bool>(n["upper"], "mask.upper");
        if (n["corner"]) c.mask.corner = detail::vec3_at(n["corner"], "mask.corner");
        if (n["lo"]) c.mask.lo = scalar_at<double>(n["lo"], "mask.lo");
        if (n["hi"]) c.mask.hi = scalar_at<double>(n["hi"], "mask.hi");
    }

    if (root["suite"]) c.suites = detail::string_list(root["suite"], "suite");
    if (over.suite) c.suites = {*over.suite};
    expand_suites(c.suites);
    if (root["checks"]) c.checks = detail::string_list(root["checks"], "checks");

    if (root["solver"]) {
        const auto n = root["solver"];
        detail::check_keys(n, "solver", {"rel_tol", "max_iter"});
        if (n["rel_tol"]) c.solver.rel_tol = scalar_at<double>(n["rel_tol"], "solver.rel_tol");
        if (n["max_iter"]) c.solver.max_iter = scalar_at<int>(n["max_iter"], "solver.max_iter");
        if (!(c.solver.rel_tol > 0.0 && c.solver.rel_tol < 1.0)) detail::config_error("solver.rel_tol", "must be in (0, 1)");
        if (c.solver.max_iter < 1) detail::config_error("solver.max_iter", "must be positive");
    }
    if (root["seed"]) c.seed = scalar_at<std::uint64_t>(root["seed"], "seed");
    if (root["output"]) c.output = scalar_at<std::string>(root["output"], "output");
    if (root["ensemble"]) c.ensemble = scalar_at<int>(root["ensemble"], "ensemble");
    if (c.ensemble < 16) detail::config_error("ensemble", "must be at least 16");
    if (root["rho_cells"]) c.rho_cells = scalar_at<double>(root["rho_cells"], "rho_cells");
    if (c.rho_cells < 1.0) detail::config_error("rho_cells", "must be at least 1");
    if (root["green"]) {
        const auto n = root["green"];
        detail::check_keys(n, "green", {"poles", "transpose", "closure"});
        if (n["poles"]) {
            if (!n["poles"].IsSequence()) detail::config_error("green.poles", "expected a list of points");
            for (std::size_t i = 0; i < n["poles"].size(); ++i)
                c.green.poles.push_back(detail::vec3_at(n["poles"][i], "green.poles[" + std::to_string(i) + "]"));
        }
        if (n["transpose"]) c.green.transpose = scalar_at<bool>(n["transpose"], "green.transpose");
        if (n["closure"]) c.green.closure = scalar_at<std::string>(n["closure"], "green.closure");
        if (c.green.closure != "auto" && c.green.closure != "zero" && c.green.closure != "far-field")
            detail::config_error("green.closure", "must be auto, zero or far-field");
    }
    if (root["green_cache"]) c.green_cache = scalar_at<std::string>(root["green_cache"], "green_cache");
    if (root["dump_fields"]) c.dump_fields = scalar_at<bool>(root["dump_fields"], "dump_fields");
    if (over.seed) c.seed = over.seed;
    if (over.output) c.output = *over.output;

    if (suites_need_seed(c.suites) && !c.seed)
        detail::config_error("seed", "required by the selected suites (randomized checks)");
    const double est = memory_estimate_mb(c.cells, c.op.components);
    const double budget = memory_budget_mb();
    if (est > budget) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "grid.cells: estimated %.0f MB exceeds the memory budget of %.0f MB (%s)", est,
                      budget, kMemoryBudgetEnv);
        throw Error(ErrorKind::Budget, buf);
    }
    return c;
}

inline ExperimentConfig load_config(const std::string& path, const ConfigOverrides& over = {}) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot read config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), over);
}

/// Canonical echo of the effective config; JSON, so it parses back as YAML.
inline nlohmann::json config_to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["operator"] = {{"name", c.op.name},           {"components", c.op.components}, {"kappa", c.op.kappa},
                     {"amplitude", c.op.amplitude}, {"frequency", c.op.frequency},   {"a_lo", c.op.a_lo},
                     {"a_hi", c.op.a_hi},           {"period", c.op.period},         {"center", c.op.center},
                     {"width", c.op.width}};
    j["grid"] = {{"lo", c.box.lo}, {"hi", c.box.hi}, {"cells", c.cells}};
    j["mask"] = {{"kind", c.mask.kind}, {"axis", c.mask.axis}, {"offset", c.mask.offset}, {"upper", c.mask.upper},
                 {"corner", c.mask.corner}, {"lo", c.mask.lo}, {"hi", c.mask.hi}};
    j["suite"] = c.suites;
    if (!c.checks.empty()) j["checks"] = c.checks;
    j["solver"] = {{"rel_tol", c.solver.rel_tol}, {"max_iter", c.solver.max_iter}};
    if (c.seed) j["seed"] = *c.seed;
    j["output"] = c.output;
    j["ensemble"] = c.ensemble;
    j["rho_cells"] = c.rho_cells;
    nlohmann::json poles = nlohmann::json::array();
    for (const auto& p : c.green.poles) poles.push_back(p);
    j["green"] = {{"poles", poles}, {"transpose", c.green.transpose}, {"closure", c.green.closure}};
    if (!c.green_cache.empty()) j["green_cache"] = c.green_cache;
    j["dump_fields"] = c.dump_fields;
    return j;
}

// ---------------------------------------------------------------------------
// Builders.

inline OperatorSpec make_operator(const OperatorConfig& o) {
    if (o.name == "identity") return identity_operator(o.components);
    if (o.name == "coupled") return coupled_operator(o.kappa, o.components);
    if (o.name == "scalar-variable") return scalar_variable_operator(o.amplitude, o.frequency, o.components);
    if (o.name == "checkerboard") return checkerboard_operator(o.a_lo, o.a_hi, o.period, o.components);
    if (o.name == "scalar-bump") return scalar_bump_operator(o.amplitude, o.center, o.width, o.components);
    throw Error(ErrorKind::Config, "'operator.name': unknown operator '" + o.name + "'");
}

inline DomainMask make_mask(const Grid& g, const MaskConfig& m) {
    if (m.kind == "full-box") return full_box_mask(g);
    if (m.kind == "half-space") return half_space_mask(g, m.axis, m.offset, m.upper);
    if (m.kind == "notched-cube") return notched_cube_mask(g, m.corner);
    if (m.kind == "slab") return slab_mask(g, m.axis, m.lo, m.hi);
    throw Error(ErrorKind::Config, "'mask.kind': unknown mask '" + m.kind + "'");
}

/// A multiplied by (1 + amp exp(-|x - c|^2 / (2 w^2))).
inline OperatorSpec perturbed_operator(const OperatorSpec& a, double amp, const Vec3& center, double width) {
    require(amp > -1.0 && width > 0.0, ErrorKind::InvalidArgument, "bad perturbation");
    OperatorSpec b = a;
    b.name = a.name + "+bump";
    auto coeff = a.coeff;
    b.coeff = [coeff, amp, center, width](const Vec3& x) {
        const Vec3 d = x - center;
        return (1.0 + amp * std::exp(-dot(d, d) / (2 * width * width))) * coeff(x);
    };
    b.lambda = a.lambda * std::min(1.0, 1.0 + amp);
    b.Lambda = a.Lambda * std::max(1.0, 1.0 + amp);
    return b;
}

/// Deterministic FNV-1a hash for cache keys.
inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

/// Everything a suite needs: operator, grid, mask, contexts and a Green store that reuses
/// dumps from a cache directory.
class Workspace {
public:
    explicit Workspace(const ExperimentConfig& cfg)
        : cfg_(cfg),
          spec_(make_operator(cfg.op)),
          grid_(build_grid(cfg.box, cfg.cells)),
          mask_(make_mask(grid_, cfg.mask)),
          sampled_(spec_, grid_) {}

    const ExperimentConfig& config() const { return cfg_; }
    const OperatorSpec& spec() const { return spec_; }
    const Grid& grid() const { return grid_; }
    const DomainMask& mask() const { return mask_; }
    const SampledOperator& sampled() const { return sampled_; }
    bool self_adjoint() const { return sampled_.self_adjoint(); }
    bool constant() const { return sampled_.distinct_tensors() == 1; }
    bool identity() const { return constant() && sampled_.cell(0) == CoefficientTensor::identity(spec_.components); }
    double h() const { return grid_.h_max(); }
    double rho() const { return cfg_.rho_cells * h(); }
    Vec3 center() const { return 0.5 * (grid_.box().lo + grid_.box().hi); }
    int long_axis() const {
        const Vec3 e = grid_.box().extent();
        return e[0] >= e[1] && e[0] >= e[2] ? 0 : (e[1] >= e[2] ? 1 : 2);
    }

    const GreenContext& context(Closure closure) {
        auto& slot = closure == Closure::Zero ? zero_ : far_;
        if (!slot) slot = std::make_unique<GreenContext>(spec_, mask_, cfg_.solver, closure);
        return *slot;
    }

    /// Cached build of G^rho(., y) (or the transpose build).
    std::shared_ptr<const AveragedGreenMatrix> green(Closure closure, const Vec3& y, double rho, bool transpose = false) {
        const auto& ctx = context(closure);
        const Vec3 pole = snap_to_node(grid_, y);
        std::ostringstream key;
        key.precision(17);
        key << config_to_json_operator() << "|" << cfg_.cells[0] << "," << cfg_.cells[1] << "," << cfg_.cells[2] << "|"
            << mask_.hash() << "|" << to_string(closure) << "|" << pole[0] << "," << pole[1] << "," << pole[2] << "|"
            << rho << "|" << transpose << "|" << cfg_.solver.rel_tol;
        char stem[40];
        std::snprintf(stem, sizeof stem, "g_%016llx", static_cast<unsigned long long>(fnv1a(key.str())));
        auto it = memo_.find(stem);
        if (it != memo_.end()) return it->second;
        std::shared_ptr<const AveragedGreenMatrix> g;
        const std::string& dir = cfg_.green_cache;
        if (!dir.empty() && std::filesystem::exists(dir + "/" + stem + ".manifest.json")) {
            g = std::make_shared<const AveragedGreenMatrix>(load_green(mask_, dir, stem));
        } else {
            g = std::make_shared<const AveragedGreenMatrix>(build_averaged_green(ctx, pole, rho, transpose));
            if (!dir.empty()) dump_green(*g, dir, stem);
        }
        if (!dump_dir_.empty()) dump_green(*g, dump_dir_, stem);
        memo_.emplace(stem, g);
        return g;
    }

    void set_dump_dir(std::string d) { dump_dir_ = std::move(d); }

private:
    std::string config_to_json_operator() const { return config_to_json(cfg_)["operator"].dump(); }

    ExperimentConfig cfg_;
    OperatorSpec spec_;
    Grid grid_;
    DomainMask mask_;
    SampledOperator sampled_;
    std::unique_ptr<GreenContext> zero_, far_;
    std::map<std::string, std::shared_ptr<const AveragedGreenMatrix>> memo_;
    std::string dump_dir_;
};

// ---------------------------------------------------------------------------
// Suites.

namespace detail {

struct SuiteRun {
    Workspace& ws;
    EstimateReport& report;
    std::vector<std::string>& skipped;

    bool wants(const std::string& id) const {
        const auto& f = ws.config().checks;
        if (f.empty()) return true;
        for (const auto& p : f)
            if (id.compare(0, p.size(), p) == 0) return true;
        return false;
    }
    /// Runs `body` when the check is selected; errors become failed entries.
    void check(const std::string& id, const std::string& claim, const std::function<CheckEntry()>& body) {
        if (!wants(id)) return;
        try {
            CheckEntry e = body();
            e.id = id;
            e.claim = claim;
            report.add(std::move(e));
        } catch (const Error& err) {
            report.add(failed_check(id, claim, err.what()));
        }
    }
    void skip(const std::string& id, const std::string& why) {
        if (wants(id)) skipped.push_back(id + ": " + why);
    }
};

inline Vec3 axis_unit(int a) {
    Vec3 e{0, 0, 0};
    e[a] = 1.0;
    return e;
}

inline std::vector<double> decay_separations(const Grid& g) {
    const auto [lo, hi] = decay_window(g);
    require(hi > lo, ErrorKind::Precondition, "decay window [8h, L/4] is empty on this grid");
    return geometric_ladder(lo, hi, 6);
}

/// Boundary point and inward unit normal for masks with an exterior.
inline std::optional<std::pair<Vec3, Vec3>> boundary_anchor(const Workspace& ws) {
    const auto& m = ws.config().mask;
    Vec3 c = ws.center();
    if (m.kind == "half-space") {
        c[m.axis] = m.offset;
        return std::make_pair(c, (m.upper ? 1.0 : -1.0) * axis_unit(m.axis));
    }
    if (m.kind == "slab") {
        c[m.axis] = m.lo;
        return std::make_pair(c, axis_unit(m.axis));
    }
    if (m.kind == "notched-cube") return std::make_pair(m.corner, (-1.0 / std::sqrt(3.0)) * Vec3{1, 1, 1});
    return std::nullopt;
}

inline double expected_theta(const MaskConfig& m) { return m.kind == "notched-cube" ? 0.125 : 0.5; }

inline CheckEntry with_fit(CheckEntry e, const FitResult& f, double min_r2) {
    e.fit = f;
    e.min_r_squared = min_r2;
    e.decide();
    return e;
}

// --- calibrate / decay -----------------------------------------------------

inline void suite_calibrate(SuiteRun& run) {
    Workspace& ws = run.ws;
    const bool full = ws.mask().all_inside();
    const bool identity = ws.identity();
    if (!full) {
        run.skip("calibrate", "needs a full-box mask");
        return;
    }
    if (identity) {
        run.check("calibrate.image_oracle", "Green values match the image formula near a flat face", [&] {
            const double h = ws.h();
            const Box& box = ws.grid().box();
            Vec3 y = ws.center();
            y[2] = box.lo[2] + 4.0 * h;
            const auto G = ws.green(Closure::Zero, y, ws.rho());
            const Vec3 ys{G->pole[0], G->pole[1], 2.0 * box.lo[2] - G->pole[2]};
            double worst = 0.0;
            std::size_t count = 0;
            for (double r : decay_separations(ws.grid()))
                for (const Vec3& d : lattice_directions()) {
                    const Vec3 x = G->pole + r * d;
                    if (!ws.mask().contains(x) || x[2] < box.lo[2] + 8.0 * h) continue;
                    const double image = (1.0 / distance(x, G->pole) - 1.0 / distance(x, ys)) / (4.0 * M_PI);
                    const auto v = G->evaluate(x);
                    for (int k = 0; k < v.rows(); ++k) worst = std::max(worst, std::abs(v(k, k) - image) / image);
                    ++count;
                }
            auto e = bound_check("", "", worst, 0.10);
            e.details = {{"samples", count}, {"pole", G->pole}};
            return e;
        });
    } else {
        run.skip("calibrate.image_oracle", "operator is not the identity");
    }
    run.check("calibrate.decay", "|G(x, y)| decays like |x - y|^(2 - n)", [&] {
        const auto G = ws.green(Closure::FarField, ws.center(), ws.rho());
        const auto p = decay_profile(*G, decay_separations(ws.grid()));
        return fit_check("", "", p.fit, -1.0, 0.15, 0.98);
    });
    if (ws.constant()) {
        run.check("calibrate.kernel_oracle", "Green values match the constant-coefficient fundamental matrix", [&] {
            const auto& ctx = ws.context(Closure::FarField);
            const auto G = ws.green(Closure::FarField, ws.center(), ws.rho());
            const FarField& ff = ctx.far_field();
            double worst = 0.0;
            for (double r : decay_separations(ws.grid()))
                for (const Vec3& d : lattice_directions()) {
                    const Vec3 x = G->pole + r * d;
                    const auto exact = ff.value(x - G->pole);
                    worst = std::max(worst, max_abs(G->evaluate(x) - exact) / max_abs(exact));
                }
            return bound_check("", "", worst, 0.10);
        });
    }
}

inline void suite_decay(SuiteRun& run) {
    Workspace& ws = run.ws;
    if (!ws.mask().all_inside()) {
        run.skip("decay", "needs a full-box mask");
        return;
    }
    std::optional<double> forward;
    run.check("decay.exponent", "|G(x, y)| decays like |x - y|^(2 - n)", [&] {
        const auto G = ws.green(Closure::FarField, ws.center(), ws.rho());
        const auto p = decay_profile(*G, decay_separations(ws.grid()));
        forward = p.fit.exponent;
        auto e = fit_check("", "", p.fit, -1.0, 0.15, 0.98);
        nlohmann::json per = nlohmann::json::object();
        for (std::size_t j = 0; j < p.entries.size(); ++j)
            for (std::size_t k = 0; k < p.entries[j].size(); ++k)
                if (p.entries[j][k]) per[std::to_string(j) + std::to_string(k)] = p.entries[j][k]->exponent;
        e.details = {{"entries", per}};
        return e;
    });
    if (!ws.self_adjoint()) {
        run.check("decay.transpose_duality", "decay exponents of L and its transpose agree", [&] {
            const auto Gt = ws.green(Closure::FarField, ws.center(), ws.rho(), true);
            const auto pt = decay_profile(*Gt, decay_separations(ws.grid()));
            if (!forward) {
                const auto G = ws.green(Closure::FarField, ws.center(), ws.rho());
                forward = decay_profile(*G, decay_separations(ws.grid())).fit.exponent;
            }
            auto e = bound_check("", "", std::abs(*forward - pt.fit.exponent), 0.05);
            e.details = {{"transpose_exponent", pt.fit.exponent}};
            return e;
        });
    }
}

// --- tails / scalings ------------------------------------------------------

inline void suite_tails(SuiteRun& run) {
    Workspace& ws = run.ws;
    if (!ws.mask().all_inside()) {
        run.skip("tails", "needs a full-box mask");
        return;
    }
    auto tail = [&](MagnitudeKind kind) {
        const auto& ctx = ws.context(Closure::FarField);
        const auto G = ws.green(Closure::FarField, ws.center(), ws.rho());
        const Region region = outside_ball_region(ws.mask(), G->pole, ws.rho());
        const double t = floor_threshold(G->columns[0], G->pole, kind);
        const auto ext = exterior_superlevel_measure(far_field_magnitude(ctx.far_field(), 0, kind),
                                                     kind == MagnitudeKind::Value ? 1 : 2, ws.grid().box(), G->pole);
        return weak_tail_fit(cell_magnitudes(G->columns[0], region, kind), t, 11, ext).fit;
    };
    run.check("tails.value", "G lies in weak-L^(n/(n-2)) uniformly", [&] {
        return fit_check("", "", tail(MagnitudeKind::Value), -3.0, 0.3);
    });
    run.check("tails.gradient", "DG lies in weak-L^(n/(n-1)) uniformly", [&] {
        return fit_check("", "", tail(MagnitudeKind::Gradient), -1.5, 0.3);
    });
}

inline void suite_scalings(SuiteRun& run) {
    Workspace& ws = run.ws;
    if (!ws.mask().all_inside()) {
        run.skip("scalings", "needs a full-box mask");
        return;
    }
    std::optional<ScalingData> data;
    auto scalings = [&]() -> const ScalingData& {
        if (!data) {
            const auto& ctx = ws.context(Closure::FarField);
            const auto G = ws.green(Closure::FarField, ws.center(), ws.rho());
            data = norm_scalings(ctx, *G, 0, decay_separations(ws.grid()));
        }
        return *data;
    };
    run.check("scalings.l1_mass", "||G||_L1(B_r) scales like r^(2 - n + n)", [&] {
        return fit_check("", "", scalings().l1_mass, 2.0, 0.2);
    });
    run.check("scalings.l1_gradient", "||DG||_L1(B_r) scales like r^(1 - n + n)", [&] {
        return fit_check("", "", scalings().l1_gradient, 1.0, 0.2);
    });
    run.check("scalings.y12_tail", "||G||_Y12(outside B_r) scales like r^(1 - n/2)", [&] {
        return fit_check("", "", scalings().y12_tail, -0.5, 0.15);
    });
    run.check("scalings.energy", "||D G^rho|| scales like rho^((2 - n)/2)", [&] {
        const double h = ws.h();
        return fit_check("", "", energy_scaling(ws.context(Closure::FarField), ws.center(), {2 * h, 4 * h, 8 * h, 16 * h}),
                         -0.5, 0.1);
    });
}

// --- identities ------------------------------------------------------------

inline std::pair<Vec3, Vec3> pair_along_long_axis(const Workspace& ws, double half_separation, double lateral = 0.0) {
    const int a = ws.long_axis();
    const Vec3 e = axis_unit(a), f = axis_unit((a + 1) % 3);
    return {ws.center() - half_separation * e + lateral * f, ws.center() + half_separation * e};
}

inline void suite_symmetry(SuiteRun& run) {
    Workspace& ws = run.ws;
    const double L = ws.grid().box().min_extent();
    run.check("symmetry.residual", "G(x, y) equals the transpose of tG(y, x)", [&] {
        const auto [x, y] = pair_along_long_axis(ws, L / 4.0, L / 16.0);
        const auto r = symmetry_check(ws.context(Closure::Zero), x, y, ws.rho(), ws.rho());
        return bound_check("", "", r.residual, ws.self_adjoint() ? 1e-3 : 1e-2);
    });
}

inline std::vector<double> smooth_bump(const Workspace& ws, const Vec3& x, int components) {
    const Box& b = ws.grid().box();
    const Vec3 c = ws.center();
    const double s = 0.2 * b.min_extent();
    double v = std::exp(-dot(x - c, x - c) / (2 * s * s));
    for (int a = 0; a < kDim; ++a) {
        const double t = (2.0 * x[a] - b.lo[a] - b.hi[a]) / (b.hi[a] - b.lo[a]);
        v *= std::max(0.0, 1.0 - t * t);
    }
    if (!ws.mask().in_domain_extended(x)) v = 0.0;
    std::vector<double> out(components);
    for (int i = 0; i < components; ++i) out[i] = v / (1.0 + i);
    return out;
}

/// Interpolated bump with the mask's boundary nodes cleared.
inline DiscreteField bump_field(const Workspace& ws, const DomainMask& mask) {
    const int n = ws.spec().components;
    auto f = DiscreteField::interpolate_function(mask, n, [&](const Vec3& x) { return smooth_bump(ws, x, n); });
    for (std::size_t node = 0; node < mask.grid().node_count(); ++node)
        if (mask.node_kind(node) != NodeKind::Interior)
            for (int i = 0; i < n; ++i) f.at(node, i) = 0.0;
    return f;
}

/// Points c + s d in a fixed order (s in {0, L/8, L/4}, d along the axes) at least `min_dist`
/// from the boundary.
inline std::vector<Vec3> interior_points(const Workspace& ws, double min_dist, std::size_t count) {
    const double L = ws.grid().box().min_extent();
    std::vector<Vec3> out;
    for (double s : {0.0, L / 20, L / 8, L / 4})
        for (int a = 0; a < kDim; ++a)
            for (double sign : {1.0, -1.0}) {
                const Vec3 p = ws.center() + (sign * s) * axis_unit(a);
                if (out.size() == count) return out;
                const bool seen = std::find(out.begin(), out.end(), p) != out.end();
                if (!seen && ws.mask().contains(p) && boundary_distance(ws.mask(), p) >= min_dist) out.push_back(p);
            }
    return out;
}

inline void suite_representation(SuiteRun& run) {
    Workspace& ws = run.ws;
    const double L = ws.grid().box().min_extent();
    const Vec3 c = ws.center();
    run.check("representation.relative_l2", "u(x) = int G(x, y) f(y) dy for the Dirichlet problem", [&] {
        const int n = ws.spec().components;
        const auto inside = interior_points(ws, 8.0 * ws.h(), 4);
        require(!inside.empty(), ErrorKind::Precondition, "no sample point lies 8h inside the domain");
        const auto r = represent_solution(ws.context(Closure::Zero), [&](const Vec3& x) { return smooth_bump(ws, x, n); },
                                          inside, ws.rho());
        auto e = bound_check("", "", r.relative_l2, 0.05);
        e.details = {{"points", inside.size()}};
        return e;
    });
    // 16h keeps x 8 coarse cells inside for the refinement check.
    const auto candidates = interior_points(ws, 16.0 * ws.h(), 2);
    const Vec3 xg = candidates.empty() ? c : candidates.back();
    const auto need_point = [&] {
        require(!candidates.empty(), ErrorKind::Precondition, "no evaluation point lies 16h inside the domain");
    };
    std::optional<double> fine;
    run.check("representation.gradient", "f(x) = int DG(x, .) A Df for f vanishing on the boundary", [&] {
        need_point();
        fine = gradient_representation(ws.context(Closure::Zero), bump_field(ws, ws.mask()), xg, ws.rho()).residual;
        return bound_check("", "", *fine, 0.10);
    });
    run.check("representation.gradient_refinement", "gradient representation residual decreases under refinement", [&] {
        need_point();
        ExperimentConfig coarse_cfg = ws.config();
        for (int a = 0; a < 3; ++a) {
            require(coarse_cfg.cells[a] % 2 == 0, ErrorKind::Precondition, "refinement check needs even cell counts");
            coarse_cfg.cells[a] /= 2;
        }
        coarse_cfg.green_cache.clear();
        Workspace coarse(coarse_cfg);
        const double rc =
            gradient_representation(coarse.context(Closure::Zero), bump_field(coarse, coarse.mask()), xg, coarse.rho())
                .residual;
        if (!fine)
            fine = gradient_representation(ws.context(Closure::Zero), bump_field(ws, ws.mask()), xg, ws.rho()).residual;
        // value = fine - coarse; passes when strictly negative.
        auto e = bound_check("", "", *fine - rc, 0.0, "at-most");
        e.pass = e.pass && *fine < rc;
        e.details = {{"coarse", rc}, {"fine", *fine}};
        return e;
    });
    // Averaging consistency at rho in {8h, 4h, 2h}; |x - y| = 34h keeps 4 rho < |x - y|. The pole
    // sits at c - L/4 (e_b + e_c) off the long axis, which is a face of a unit-period checkerboard.
    std::map<int, double> dev;
    std::optional<std::vector<DiscreteField>> eval;
    std::optional<Vec3> xa, ya;
    auto deviation = [&](int m) {
        if (dev.count(m)) return dev[m];
        const double h = ws.h();
        if (!xa) {
            const int a = ws.long_axis();
            const Vec3 eb = axis_unit((a + 1) % 3), ec = axis_unit((a + 2) % 3);
            ya = ws.center() - (L / 4.0) * (eb + ec);
            xa = *ya + (34.0 * h) * eb;
            eval = evaluation_fields(ws.context(Closure::Zero), snap_to_node(ws.grid(), *xa));
        }
        return dev[m] = averaging_consistency(ws.context(Closure::Zero), *xa, *ya, m * h, &*eval).deviation;
    };
    run.check("representation.averaging_4h", "G^rho(x, y) is the rho-average of G(x, .)", [&] {
        return bound_check("", "", deviation(4), 0.05);
    });
    run.check("representation.averaging_monotone", "averaging deviation decreases as rho shrinks", [&] {
        const double d8 = deviation(8), d4 = deviation(4), d2 = deviation(2);
        auto e = bound_check("", "", std::max(d4 - d8, d2 - d4), 0.0, "at-most");
        e.pass = e.pass && d4 < d8 && d2 < d4;
        e.details = {{"rho_8h", d8}, {"rho_4h", d4}, {"rho_2h", d2}};
        return e;
    });
}

inline void suite_perturbation(SuiteRun& run) {
    Workspace& ws = run.ws;
    const double L = ws.grid().box().min_extent();
    const auto [x, y] = pair_along_long_axis(ws, L / 4.0);
    const auto b = perturbed_operator(ws.spec(), 0.05, ws.center(), L / 6.0);
    run.check("perturbation.coincident", "perturbation identity is exact when B = A", [&] {
        return bound_check("", "", perturbation_residual(ws.context(Closure::Zero), ws.spec(), x, y, ws.rho()), 1e-3);
    });
    run.check("perturbation.bump", "G_B = G_A + int DG_A (A - B) DG_B for a 5% smooth perturbation", [&] {
        return bound_check("", "", perturbation_residual(ws.context(Closure::Zero), b, x, y, ws.rho()), 0.10);
    });
    run.check("perturbation.bump_swapped", "perturbation identity with the roles of A and B exchanged", [&] {
        const GreenContext cb(b, ws.mask(), ws.config().solver);
        return bound_check("", "", perturbation_residual(cb, ws.spec(), x, y, ws.rho()), 0.10);
    });
}

// --- boundary / regularity -------------------------------------------------

inline void suite_boundary(SuiteRun& run) {
    Workspace& ws = run.ws;
    const auto anchor = boundary_anchor(ws);
    if (!anchor) {
        run.skip("boundary", "mask has no exterior; condition (S) fails everywhere");
        return;
    }
    const auto [xb, normal] = *anchor;
    const double h = ws.h();
    const std::uint64_t seed = ws.config().seed.value_or(0);
    run.check("boundary.condition_s", "the domain satisfies condition (S)", [&] {
        std::vector<double> radii;
        for (double r : {8 * h, 16 * h, 32 * h}) radii.push_back(r);
        const auto s = condition_s_estimate(ws.mask(), xb, radii, 20000, seed, expected_theta(ws.config().mask));
        auto e = bound_check("", "", s.theta_inf, expected_theta(ws.config().mask), "within", 0.02);
        e.details = {{"R_a", s.R_a}, {"theta_hat", s.theta_hat}};
        return e;
    });
    run.check("boundary.decay", "G(x, y) vanishes like d_x^mu at the boundary", [&] {
        const auto G = ws.green(Closure::Zero, xb + (32.0 * h) * normal, ws.rho());
        const auto f = boundary_decay_fit(*G, xb, normal, {h, 2 * h, 3 * h, 4 * h});
        const bool laplace = ws.identity() && ws.spec().components == 1;
        CheckEntry e = laplace ? fit_check("", "", f, 1.0, 0.2) : fit_check("", "", f, 0.1, 0.0, 0.95);
        if (!laplace) {
            e.comparison = "at-least";
            e.decide();
        }
        if (laplace && ws.config().mask.kind == "half-space") {
            const Vec3 ys = G->pole - (2.0 * dot(G->pole - xb, normal)) * normal;
            std::vector<std::pair<double, double>> pts;
            for (double d : {h, 2 * h, 3 * h, 4 * h}) {
                const Vec3 x = xb + d * normal;
                pts.emplace_back(d, (1 / distance(x, G->pole) - 1 / distance(x, ys)) / (4 * M_PI));
            }
            e.details = {{"image_slope", fit_power_law(pts).exponent}};
        }
        return e;
    });
}

inline void suite_regularity(SuiteRun& run) {
    Workspace& ws = run.ws;
    const std::uint64_t seed = ws.config().seed.value_or(0);
    const int ens = ws.config().ensemble;
    const bool laplace = ws.identity();
    std::optional<PropertyHReport> h_rep;
    auto interior = [&]() -> const PropertyHReport& {
        if (!h_rep) {
            const Box& b = ws.grid().box();
            h_rep = property_h_estimate(ws.spec(), ws.grid(), ws.center(), 0.45 * b.min_extent(), ens, seed,
                                        ws.config().solver);
        }
        return *h_rep;
    };
    auto regularity_entry = [&](const PropertyHReport& r, bool harmonic) {
        CheckEntry e = harmonic ? bound_check("", "", r.mu_hat, 1.0, "within", 0.1)
                                : bound_check("", "", r.mu_hat, 1e-6, "at-least");
        e.kind = "fit";
        e.pass = e.pass && r.reported;
        e.details = {{"H_hat", r.H_hat},
                     {"median_r_squared", r.median_r_squared},
                     {"ensemble", r.ensemble_size},
                     {"seed", r.seed},
                     {"member_mu", r.member_mu},
                     {"empirical", true}};
        return e;
    };
    run.check("regularity.mu0", "interior property (H) with exponent mu0", [&] {
        return regularity_entry(interior(), laplace);
    });

    if (ws.mask().all_inside()) {
        const int a = ws.long_axis();
        const Box& b = ws.grid().box();
        const double la = b.extent()[a], ls = b.min_extent(), h = ws.h();
        // Largest d = min(d_x, d_y, |x - y|) for x, y placed symmetrically on the long axis.
        double best = -1, sep = 0;
        for (int i = 1; i < 200; ++i) {
            const double s = la * i / 400.0;
            const double d = std::min({la / 2 - s, ls / 2, 2 * s});
            if (d > best) best = d, sep = s;
        }
        if (best / 2 < 1.25 * 8.0 * h) {
            run.skip("regularity.holder", "window [8h, d/2] is too narrow for this box and grid");
        } else {
            run.check("regularity.holder", "G(., y) is Holder continuous with exponent mu0 away from y", [&] {
                const auto [x, y] = pair_along_long_axis(ws, sep);
                const auto G = ws.green(Closure::FarField, y, ws.rho());
                const Vec3 xs = snap_to_node(ws.grid(), x);
                const double dbar = std::min({boundary_distance(ws.mask(), xs),
                                              boundary_distance(ws.mask(), G->pole), distance(xs, G->pole)});
                const auto f = holder_continuity_fit(*G, xs, geometric_ladder(8.0 * h, dbar / 2.0, 4));
                auto e = fit_check("", "", f, interior().mu_hat - 0.15, 0.0);
                e.comparison = "at-least";
                e.decide();
                return e;
            });
        }
    } else {
        run.skip("regularity.holder", "needs a full-box mask");
    }

    const auto anchor = boundary_anchor(ws);
    if (!anchor) {
        run.skip("regularity.mu1", "mask has no exterior");
        run.skip("regularity.poincare", "mask has no exterior");
        return;
    }
    const auto [xb, normal] = *anchor;
    (void)normal;
    const Box& b = ws.grid().box();
    double R = 0.45 * b.min_extent();
    for (int a = 0; a < kDim; ++a) R = std::min({R, xb[a] - b.lo[a] > 1e-12 ? xb[a] - b.lo[a] : R,
                                                   b.hi[a] - xb[a] > 1e-12 ? b.hi[a] - xb[a] : R});
    run.check("regularity.mu1", "boundary property (BH) with exponent mu1", [&] {
        const auto r = property_bh_estimate(ws.spec(), ws.mask(), xb, R, ens, seed, ws.config().solver, {},
                                            expected_theta(ws.config().mask));
        return regularity_entry(r, laplace && ws.spec().components == 1 && ws.config().mask.kind == "half-space");
    });
    run.check("regularity.poincare", "boundary Poincare inequality with constant 1/theta", [&] {
        const auto& g = ws.grid();
        const auto local = mask_from_predicate(
            g, [&](const Vec3& x) { return distance(x, xb) < R && ws.mask().in_domain_extended(x); }, "cap");
        const auto sys = assemble(ws.spec(), local);
        const int n = ws.spec().components;
        std::vector<double> load(sys.vector_size(), 0.0);
        double worst = 0.0, theta = 0.0;
        for (int m = 0; m < ens; ++m) {
            Rng rng(splitmix64(seed ^ splitmix64(0x9e37u + static_cast<std::uint64_t>(m))));
            // Half the members get white-noise cap data, half a random affine profile.
            std::array<double, 4> coef{rng.gaussian(), rng.gaussian(), rng.gaussian(), rng.gaussian()};
            std::vector<double> bc(sys.vector_size(), 0.0);
            for (std::size_t node = 0; node < g.node_count(); ++node) {
                if (local.node_kind(node) != NodeKind::Boundary || ws.mask().node_kind(node) != NodeKind::Interior)
                    continue;
                const Vec3 p = g.node_point(node) - xb;
                for (int i = 0; i < n; ++i)
                    bc[node * n + i] = m % 2 ? rng.gaussian()
                                             : coef[0] + (coef[1] * p[0] + coef[2] * p[1] + coef[3] * p[2]) / R;
            }
            const auto u = solve_dirichlet(sys, load, ws.config().solver, bc).field;
            const auto pr = boundary_poincare_ratio(u, xb, R);
            worst = std::max(worst, pr.ratio);
            theta = pr.theta;
        }
        require(theta > 0.0, ErrorKind::ConditionSViolated, "no exterior in the ball: theta = 0");
        auto e = bound_check("", "", worst, 1.0 / theta);
        e.details = {{"theta", theta}, {"fields", ens}};
        return e;
    });
}

}  // namespace detail

struct RunOutcome {
    EstimateReport report;
    std::vector<std::string> skipped;
    nlohmann::json timings = nlohmann::json::object();
    int exit_code() const { return report.all_pass() ? 0 : 1; }
};

/// Runs the selected suites in order; checks that throw are recorded as failed.
inline RunOutcome run_suites(Workspace& ws) {
    RunOutcome out;
    detail::SuiteRun run{ws, out.report, out.skipped};
    static const std::map<std::string, void (*)(detail::SuiteRun&)> table{
        {"calibrate", detail::suite_calibrate},         {"decay", detail::suite_decay},
        {"tails", detail::suite_tails},                 {"scalings", detail::suite_scalings},
        {"symmetry", detail::suite_symmetry},           {"representation", detail::suite_representation},
        {"perturbation", detail::suite_perturbation},   {"boundary", detail::suite_boundary},
        {"regularity", detail::suite_regularity}};
    for (const auto& s : ws.config().suites) {
        const auto t0 = std::chrono::steady_clock::now();
        try {
            table.at(s)(run);
        } catch (const Error& e) {
            out.report.add(failed_check(s + ".setup", "suite setup", e.what()));
        }
        out.timings[s] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    out.report.sort();
    const auto& c = ws.config();
    out.report.provenance = {{"version", kVersion},
                             {"operator", config_to_json(c)["operator"]},
                             {"grid", {{"lo", c.box.lo}, {"hi", c.box.hi}, {"cells", c.cells}}},
                             {"mask", c.mask.kind},
                             {"mask_hash", std::to_string(ws.mask().hash())},
                             {"suites", c.suites},
                             {"seed", c.seed ? nlohmann::json(*c.seed) : nlohmann::json(nullptr)},
                             {"rho_cells", c.rho_cells},
                             {"solver_rel_tol", c.solver.rel_tol},
                             {"skipped", out.skipped}};
    return out;
}

/// Fails early when the output directory cannot be written.
inline void prepare_output(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    const std::string probe = dir + "/.write-probe";
    std::ofstream f(probe);
    require(!ec && static_cast<bool>(f), ErrorKind::Io, "output directory is not writable: " + dir);
    f.close();
    std::filesystem::remove(probe, ec);
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path);
    out << text;
    require(static_cast<bool>(out), ErrorKind::Io, "write failed: " + path);
}

/// report.json, report.csv, fits/<id>.dat, manifest.json.
inline void emit_outputs(const RunOutcome& run, const ExperimentConfig& cfg, const std::string& dir, int threads) {
    prepare_output(dir);
    write_text(dir + "/report.json", run.report.to_json().dump(2) + "\n");
    write_text(dir + "/report.csv", run.report.to_csv());
    std::filesystem::create_directories(dir + "/fits");
    for (const auto& c : run.report.checks)
        if (c.fit) write_fit_points(*c.fit, dir + "/fits/" + c.id + ".dat");
    nlohmann::json m;
    m["greenlab_manifest"] = 1;
    m["version"] = kVersion;
    m["config"] = config_to_json(cfg);
    m["seed"] = cfg.seed ? nlohmann::json(*cfg.seed) : nlohmann::json(nullptr);
    m["threads"] = threads;
    m["timings_seconds"] = run.timings;
    m["all_pass"] = run.report.all_pass();
    nlohmann::json pf = nlohmann::json::object();
    for (const auto& c : run.report.checks) pf[c.id] = c.pass;
    m["pass_fail"] = pf;
    write_text(dir + "/manifest.json", m.dump(2) + "\n");
}

}  // namespace greenlab
