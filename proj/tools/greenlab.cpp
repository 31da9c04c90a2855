// greenlab: config-driven Green matrix experiments.
//   greenlab check-operator --config c.yaml
//   greenlab build-green    --config c.yaml [--out DIR]
//   greenlab verify         --config c.yaml [--out DIR] [--suite NAME] [--seed S] [--threads K]
//   greenlab report         --out DIR
// Exit status: 0 all checks pass, 1 some check failed, 2 usage, config or I/O error.

#include <cstdio>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"

#include "greenlab/experiment.hpp"

using namespace greenlab;

namespace {

struct Options {
    std::string config;
    std::string out;
    std::string suite;
    std::uint64_t seed = 0;
    bool seed_given = false;
    int threads = 0;
};

ConfigOverrides overrides(const Options& o) {
    ConfigOverrides ov;
    if (o.seed_given) ov.seed = o.seed;
    if (!o.suite.empty()) ov.suite = o.suite;
    if (!o.out.empty()) ov.output = o.out;
    return ov;
}

int check_operator(const Options& o) {
    const auto cfg = load_config(o.config, overrides(o));
    const Workspace ws(cfg);
    const auto& s = ws.sampled();
    nlohmann::json j;
    j["operator"] = ws.spec().name;
    j["components"] = ws.spec().components;
    j["lambda_claimed"] = ws.spec().lambda;
    j["Lambda_claimed"] = ws.spec().Lambda;
    j["lambda_sampled"] = s.lambda_min();
    j["Lambda_sampled"] = s.Lambda_max();
    j["self_adjoint"] = s.self_adjoint();
    j["distinct_tensors"] = s.distinct_tensors();
    j["mask"] = cfg.mask.kind;
    j["memory_estimate_mb"] = memory_estimate_mb(cfg.cells, cfg.op.components);
    std::cout << stabilize(j).dump(2) << "\n";
    return 0;
}

int build_green(const Options& o) {
    auto cfg = load_config(o.config, overrides(o));
    const std::string dir = cfg.green_cache.empty() ? cfg.output + "/fields" : cfg.green_cache;
    prepare_output(dir);
    cfg.green_cache = dir;
    Workspace ws(cfg);
    const Closure closure =
        cfg.green.closure == "zero" || (cfg.green.closure == "auto" && !ws.mask().all_inside()) ? Closure::Zero
                                                                                                 : Closure::FarField;
    std::vector<Vec3> poles = cfg.green.poles;
    if (poles.empty()) poles.push_back(ws.center());
    for (const auto& y : poles) {
        const auto G = ws.green(closure, y, ws.rho(), cfg.green.transpose);
        std::printf("built G(., [%.6g, %.6g, %.6g]) rho=%.6g closure=%s in %s\n", G->pole[0], G->pole[1], G->pole[2],
                    ws.rho(), to_string(closure), dir.c_str());
    }
    return 0;
}

int verify(const Options& o) {
    const auto cfg = load_config(o.config, overrides(o));
    prepare_output(cfg.output);
    Workspace ws(cfg);
    if (cfg.dump_fields) ws.set_dump_dir(cfg.output + "/fields");
    const auto run = run_suites(ws);
    emit_outputs(run, cfg, cfg.output, thread_count());
    for (const auto& c : run.report.checks)
        std::printf("%s %-40s %s\n", c.pass ? "PASS" : "FAIL", c.id.c_str(),
                    c.error.empty() ? stable_number(c.value).dump().c_str() : c.error.c_str());
    for (const auto& s : run.skipped) std::printf("SKIP %s\n", s.c_str());
    return run.exit_code();
}

int report(const Options& o) {
    const std::string path = (o.out.empty() ? std::string("out") : o.out) + "/report.json";
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot read " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Io, path + ": " + e.what());
    }
    for (const auto& [id, c] : j.at("checks").items()) {
        const auto fmt = [](const nlohmann::json& v) { return v.is_null() ? std::string("-") : v.dump(); };
        std::printf("%s %-40s value=%s target=%s %s %s\n", c.at("pass").get<bool>() ? "PASS" : "FAIL", id.c_str(),
                    fmt(c.at("value")).c_str(), fmt(c.at("target")).c_str(), c.at("comparison").get<std::string>().c_str(),
                    fmt(c.at("tolerance")).c_str());
    }
    return j.at("all_pass").get<bool>() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Averaged Green matrices for elliptic systems and checks of their estimates"};
    app.require_subcommand(1);
    Options o;
    auto common = [&](CLI::App* s, bool needs_config) {
        auto* c = s->add_option("--config", o.config, "experiment config (YAML, or a previous manifest.json)");
        if (needs_config) c->required()->check(CLI::ExistingFile);
        s->add_option("--out", o.out, "output directory (overrides the config)");
        s->add_option("--threads", o.threads, "worker threads (0: runtime default)")->check(CLI::NonNegativeNumber);
    };
    auto* chk = app.add_subcommand("check-operator", "sample the operator and report ellipticity");
    common(chk, true);
    auto* build = app.add_subcommand("build-green", "build and dump averaged Green matrices");
    common(build, true);
    auto* ver = app.add_subcommand("verify", "run verification suites and write reports");
    common(ver, true);
    auto* seed = ver->add_option("--seed", o.seed, "seed for randomized checks (overrides the config)");
    ver->add_option("--suite", o.suite, "suite name (overrides the config)");
    auto* rep = app.add_subcommand("report", "summarize report.json from an output directory");
    rep->add_option("--out", o.out, "output directory of a verify run");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    o.seed_given = seed->count() > 0;
    try {
        if (o.threads > 0) set_thread_count(o.threads);
        if (*chk) return check_operator(o);
        if (*build) return build_green(o);
        if (*ver) return verify(o);
        if (*rep) return report(o);
    } catch (const Error& e) {
        std::fprintf(stderr, "greenlab: %s error: %s\n", to_string(e.kind()), e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "greenlab: %s\n", e.what());
        return 2;
    }
    return 2;
}
