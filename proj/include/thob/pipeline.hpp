#pragma once

#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "thob/analysis.hpp"
#include "thob/field_io.hpp"
#include "thob/run_config.hpp"

namespace thob {

inline constexpr int kFrequencyCsvVersion = 1;
inline constexpr int kDecayCsvVersion = 1;
inline constexpr int kManifestVersion = 1;

namespace detail {

// Shortest round-trip decimal form keeps the CSVs byte-stable between runs.
inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << text;
}

}  // namespace detail

struct PipelineStages {
    bool solve = true;
    bool free_boundary = true;
    bool frequency = true;
    bool decay = true;
    bool dichotomy = true;
    bool blowup = true;
    bool sanity = true;

    static PipelineStages all() { return {}; }
    static PipelineStages only_solve() {
        PipelineStages s;
        s.free_boundary = s.frequency = s.decay = s.dichotomy = s.blowup = s.sanity = false;
        return s;
    }
};

struct RunResult {
    ScalarField solution;
    SolveReport report;
    nlohmann::json manifest;
    std::filesystem::path manifest_path;
};

inline void write_frequency_csv(const std::filesystem::path& path, const FrequencyProfile& prof) {
    std::string text = "rho,D,H,N,doubling\n";
    for (std::size_t k = 0; k < prof.rho.size(); ++k) {
        text += detail::fmt(prof.rho[k]) + "," + detail::fmt(prof.D[k]) + "," +
                detail::fmt(prof.H[k]) + "," + detail::fmt(prof.N[k]) + "," +
                detail::fmt(prof.doubling[k]) + "\n";
    }
    detail::write_text(path, text);
}

inline void write_decay_csv(const std::filesystem::path& path, const DecayFit& l2,
                            const DecayFit& sup, const DecayFit& supgrad) {
    std::string text = "rho,l2norm,supnorm,supgrad\n";
    for (std::size_t k = 0; k < l2.rho.size(); ++k) {
        text += detail::fmt(l2.rho[k]) + "," + detail::fmt(l2.value[k]) + "," +
                detail::fmt(sup.value[k]) + "," + detail::fmt(supgrad.value[k]) + "\n";
    }
    detail::write_text(path, text);
}

inline void write_gnuplot_scripts(const std::filesystem::path& dir) {
    detail::write_text(dir / "frequency.gp",
                       "set datafile separator ','\n"
                       "set logscale x\n"
                       "set xlabel 'rho'\n"
                       "set key top left\n"
                       "plot 'frequency.csv' using 1:4 with linespoints title 'N(rho)', \\\n"
                       "     'frequency.csv' using 1:5 with linespoints title 'doubling'\n");
    detail::write_text(dir / "decay.gp",
                       "set datafile separator ','\n"
                       "set logscale xy\n"
                       "set xlabel 'rho'\n"
                       "set key top left\n"
                       "plot 'decay.csv' using 1:2 with linespoints title 'l2', \\\n"
                       "     'decay.csv' using 1:3 with linespoints title 'sup', \\\n"
                       "     'decay.csv' using 1:4 with linespoints title 'sup grad'\n");
}

// Execute the configured pipeline into `out_dir` and write manifest.json.
// Identical config + seed produce byte-identical THOB and CSV outputs; only
// the manifest's timing block varies between runs.
inline RunResult run_pipeline(const RunConfig& cfg, const std::filesystem::path& out_dir,
                              const PipelineStages& stages = PipelineStages::all(),
                              const ScalarField* preloaded = nullptr) {
    namespace fs = std::filesystem;
    const auto t_start = std::chrono::steady_clock::now();
    fs::create_directories(out_dir);

    const auto model = model_from_config(cfg);
    const auto bdata = boundary_from_config(cfg);
    auto grid = preloaded ? preloaded->grid : build_half_grid(cfg.dim, cfg.nodes_per_axis);

    RunResult result;
    auto& manifest = result.manifest;
    manifest["config_digest"] = cfg.digest;
    manifest["seed"] = cfg.seed;
    manifest["format_versions"] = {{"thob", kFieldFormatVersion},
                                   {"frequency_csv", kFrequencyCsvVersion},
                                   {"decay_csv", kDecayCsvVersion},
                                   {"manifest", kManifestVersion}};
    manifest["grid"] = {{"dim", cfg.dim},
                        {"nodes_per_axis", std::vector<int>(cfg.nodes_per_axis.begin(),
                                                            cfg.nodes_per_axis.begin() + cfg.dim)},
                        {"spacing", grid->spacing[0]}};
    manifest["nonlinearity"] = {{"name", cfg.nonlinearity_name}};
    nlohmann::json outputs = nlohmann::json::object();
    nlohmann::json timings = nlohmann::json::object();

    auto elapsed_ms = [&t_start] {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                         t_start)
            .count();
    };

    // --- solve ---------------------------------------------------------
    ScalarField u;
    if (preloaded) {
        u = *preloaded;
        result.report.status = SolveStatus::Converged;
        manifest["solver_report"] = {{"status", "preloaded_field"}};
    } else {
        auto [solved, report] = solve_signorini(grid, model, bdata, cfg.solver);
        u = std::move(solved);
        result.report = report;
        const char* status = report.status == SolveStatus::Converged      ? "converged"
                             : report.status == SolveStatus::NonConverged ? "non_converged"
                                                                          : "ill_posed";
        manifest["solver_report"] = {
            {"status", status},
            {"iterations", report.iterations},
            {"energy_final", report.energy_history.back()},
            {"kkt",
             {{"interior_residual_inf", report.kkt.interior_residual_inf},
              {"thin_complementarity_inf", report.kkt.thin_complementarity_inf},
              {"feasibility_inf", report.kkt.feasibility_inf},
              {"tol", cfg.solver.tol_kkt}}},
            {"active_count", report.active_set.size()},
            {"degenerate_count", report.degenerate_set.size()},
            {"max_gradient", report.max_gradient_norm},
            {"exceeded_t_bar", report.exceeded_t_bar},
            {"lambda_on_range", report.lambda_on_range}};
    }
    timings["solve_ms"] = elapsed_ms();
    write_field(out_dir / "solution.thob", u);
    outputs["solution_field"] = "solution.thob";

    const auto grad = node_gradient_field(u);
    AnalysisOptions opts;
    opts.quad_angular = cfg.analysis.quad_angular;
    opts.quad_radial = cfg.analysis.quad_radial;
    const double eps_contact =
        cfg.analysis.eps_contact > 0.0 ? cfg.analysis.eps_contact : 10.0 * cfg.solver.tol_kkt;
    const double rho_min =
        cfg.analysis.rho_min > 0.0 ? cfg.analysis.rho_min : 4.0 * grid->min_spacing();
    const double rho_max = cfg.analysis.rho_max;
    // Default ladder ratio is 2^{-1/4}; densify on coarse grids so the
    // frequency (>= 4 radii) and decay (>= 5 radii) fits stay well-posed.
    auto ladder_samples = [&](double lo, double hi) {
        if (cfg.analysis.samples > 0) return cfg.analysis.samples;
        const int automatic =
            int(std::floor(std::log(hi / lo) / std::log(std::pow(2.0, 0.25)))) + 1;
        return std::max(automatic, 8);
    };

    // --- free boundary ---------------------------------------------------
    // Analysis stage failures are recorded under their stage name; later
    // stages still run and the manifest is always written.
    nlohmann::json stage_errors = nlohmann::json::object();
    auto guarded = [&stage_errors](const char* stage, auto&& body) {
        try {
            body();
        } catch (const std::exception& e) {
            stage_errors[stage] = e.what();
        }
    };

    Vec3 center = cfg.analysis.center;
    Vec3 anchor = cfg.analysis.center;
    bool fb_found = false;
    if (stages.free_boundary || stages.frequency || stages.decay || stages.dichotomy ||
        stages.blowup) {
        const auto fb = extract_contact_set(u, eps_contact);
        if (const auto c = nearest_free_boundary_center(fb, cfg.analysis.center)) {
            center = *c;
            anchor = nearest_contact_anchor(fb, *grid, cfg.analysis.center).value_or(center);
            fb_found = true;
        }
        nlohmann::json cells = nlohmann::json::array();
        for (const auto& cell : fb.free_boundary_cells) {
            cells.push_back(std::vector<double>(cell.centroid.begin(),
                                                cell.centroid.begin() + cfg.dim - 1));
        }
        manifest["free_boundary"] = {
            {"eps_contact", eps_contact},
            {"contact_count", fb.contact_nodes.size()},
            {"cells", cells},
            {"found", fb_found},
            {"center_requested",
             std::vector<double>(cfg.analysis.center.begin(), cfg.analysis.center.begin() + cfg.dim)},
            {"center_used", std::vector<double>(center.begin(), center.begin() + cfg.dim)},
            {"anchor_used", std::vector<double>(anchor.begin(), anchor.begin() + cfg.dim)}};
        timings["free_boundary_ms"] = elapsed_ms();
    }

    // --- frequency + quasi-monotonicity ----------------------------------
    if (stages.frequency) guarded("frequency", [&] {
        const auto prof = frequency_profile(u, grad, model, center, rho_min, rho_max,
                                            ladder_samples(rho_min, rho_max), cfg.analysis.alpha,
                                            opts);
        write_frequency_csv(out_dir / "frequency.csv", prof);
        outputs["frequency_csv"] = "frequency.csv";
        const auto mono = monotonicity_fit(prof, cfg.analysis.alpha, cfg.analysis.slack);
        double floor = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < prof.rho.size(); ++k)
            floor = std::min(floor, prof.N[k] * std::exp(mono.fitted_c / cfg.analysis.alpha *
                                                         std::pow(prof.rho[k], cfg.analysis.alpha)));
        int untrusted = 0;
        for (bool t : prof.trusted) untrusted += t ? 0 : 1;
        manifest["frequency"] = {{"csv", "frequency.csv"},
                                 {"alpha", prof.alpha},
                                 {"gamma", prof.gamma_fit},
                                 {"n_min", prof.n_min()},
                                 {"n_max", prof.n_max()},
                                 {"weighted_floor", floor},
                                 {"fitted_c", mono.fitted_c},
                                 {"monotonizable", mono.monotonizable},
                                 {"slack", mono.slack},
                                 {"rho_min", prof.rho.front()},
                                 {"rho_max", prof.rho.back()},
                                 {"untrusted_radii", untrusted},
                                 {"dropped_radii", prof.dropped}};
        timings["frequency_ms"] = elapsed_ms();
    });

    // --- decay fits -------------------------------------------------------
    if (stages.decay) guarded("decay", [&] {
        const double decay_max = std::min(rho_max, 0.4);
        const auto ladder = radius_ladder(rho_min, decay_max, ladder_samples(rho_min, decay_max));
        const auto l2 = decay_fit(u, grad, center, ladder, DecayNorm::L2Average, opts);
        const auto sup = decay_fit(u, grad, center, ladder, DecayNorm::Sup, opts);
        const auto supg = decay_fit(u, grad, center, ladder, DecayNorm::SupGradient, opts);
        write_decay_csv(out_dir / "decay.csv", l2, sup, supg);
        outputs["decay_csv"] = "decay.csv";
        manifest["decay"] = {{"csv", "decay.csv"},
                             {"l2_slope", l2.slope},
                             {"sup_slope", sup.slope},
                             {"supgrad_slope", supg.slope},
                             {"l2_residual", l2.residual}};
        timings["decay_ms"] = elapsed_ms();
    });

    // --- dichotomy scan ----------------------------------------------------
    if (stages.dichotomy) guarded("dichotomy", [&] {
        std::vector<double> ladder;
        for (double rho = std::min(rho_max, 0.4); rho >= 4.0 * rho_min; rho *= 0.5)
            ladder.push_back(rho);
        int triggered = 0, violated = 0;
        if (ladder.size() >= 1) {
            for (const auto& flag : dichotomy_scan(u, center, cfg.analysis.delta, ladder, opts)) {
                triggered += flag.triggered ? 1 : 0;
                violated += flag.violated ? 1 : 0;
            }
        }
        manifest["dichotomy"] = {{"delta", cfg.analysis.delta},
                                 {"radii", ladder},
                                 {"triggered", triggered},
                                 {"violated", violated}};
        timings["dichotomy_ms"] = elapsed_ms();
    });

    // --- blow-up ------------------------------------------------------------
    if (stages.blowup && fb_found) guarded("blowup", [&] {
        std::vector<double> radii = cfg.analysis.blowup_radii;
        if (radii.empty())
            for (int jj = 0; jj < 4; ++jj) radii.push_back(0.4 * std::pow(2.0, -jj));
        auto target = build_half_grid(cfg.dim, cfg.analysis.target_nodes);
        const auto bu = blowup(u, anchor, radii, target, opts);
        nlohmann::json fields = nlohmann::json::array();
        for (std::size_t jj = 0; jj < bu.rescaled.size(); ++jj) {
            const std::string name = "blowup_" + std::to_string(jj) + ".thob";
            write_field(out_dir / name, bu.rescaled[jj]);
            fields.push_back(name);
        }
        outputs["blowup_fields"] = fields;
        manifest["blowup"] = {{"radii", bu.radii},
                              {"lambda", bu.lambda},
                              {"unit_norms", bu.unit_norm},
                              {"amplitude", bu.amplitude},
                              {"c0_distance", bu.c0_distance},
                              {"c1_distance", bu.c1_distance},
                              {"rotation_angle", bu.rotation_angle},
                              {"fitted_degree", bu.fitted_degree}};
        timings["blowup_ms"] = elapsed_ms();
    });

    // --- Poincare / trace diagnostics ---------------------------------------
    if (stages.sanity) guarded("sanity", [&] {
        const auto rep = sanity_inequalities(u, grad, center,
                                             radius_ladder(rho_min, rho_max, ladder_samples(rho_min, rho_max)),
                                             opts);
        manifest["sanity"] = {{"poincare_flagged", rep.poincare_flagged},
                              {"trace_flagged", rep.trace_flagged},
                              {"poincare_ratio", rep.poincare_ratio},
                              {"trace_ratio", rep.trace_ratio},
                              {"dropped", rep.dropped}};
        timings["sanity_ms"] = elapsed_ms();
    });

    write_gnuplot_scripts(out_dir);
    outputs["gnuplot"] = {"frequency.gp", "decay.gp"};

    if (!stage_errors.empty()) manifest["stage_errors"] = stage_errors;
    manifest["outputs"] = outputs;
    timings["total_ms"] = elapsed_ms();
    manifest["timings"] = timings;

    result.solution = std::move(u);
    result.manifest_path = out_dir / "manifest.json";
    detail::write_text(result.manifest_path, manifest.dump(2) + "\n");
    return result;
}

// Every file referenced by the manifest exists, and the solution field
// round-trips bit-exactly.
inline bool verify_manifest(const std::filesystem::path& manifest_path) {
    namespace fs = std::filesystem;
    std::ifstream is(manifest_path);
    if (!is) return false;
    nlohmann::json m;
    is >> m;
    const fs::path dir = manifest_path.parent_path();
    std::vector<std::string> files;
    const auto& outputs = m.at("outputs");
    for (const auto& [key, value] : outputs.items()) {
        if (value.is_string()) files.push_back(value.get<std::string>());
        if (value.is_array())
            for (const auto& v : value) files.push_back(v.get<std::string>());
    }
    for (const auto& f : files)
        if (!fs::exists(dir / f)) return false;
    if (outputs.contains("solution_field")) {
        const fs::path p = dir / outputs.at("solution_field").get<std::string>();
        const auto u = read_field(p);
        const fs::path copy = dir / ".roundtrip.thob";
        write_field(copy, u);
        std::ifstream a(p, std::ios::binary), b(copy, std::ios::binary);
        std::stringstream sa, sb;
        sa << a.rdbuf();
        sb << b.rdbuf();
        fs::remove(copy);
        if (sa.str() != sb.str()) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// `validate`: the module invariant battery behind the CLI subcommand.

namespace detail {

struct ValidateContext {
    int failures = 0;
    std::ostream& os;

    void check(bool ok, const std::string& name, const std::string& detail = "") {
        os << (ok ? "[ok]   " : "[FAIL] ") << name;
        if (!detail.empty()) os << "  (" << detail << ")";
        os << "\n";
        if (!ok) ++failures;
    }
};

}  // namespace detail

inline int run_validation(std::ostream& os, std::uint64_t seed = 0x5eed) {
    detail::ValidateContext v{0, os};

    // nonlinearity structure
    for (const auto& m : {make_quadratic(), make_minimal_surface(), make_perturbed_quadratic(0.1)}) {
        const auto rep = verify_structure(m, 1.0, 200, 2, seed);
        v.check(rep.remainder_ok && rep.violations.empty(), "nonlinearity/" + m.name + "/structure");
        v.check(rep.max_flux_fd_error <= 1e-6, "nonlinearity/" + m.name + "/flux_fd",
                detail::fmt(rep.max_flux_fd_error));
        v.check(rep.max_hessian_fd_error <= 1e-5, "nonlinearity/" + m.name + "/hessian_fd",
                detail::fmt(rep.max_hessian_fd_error));
        v.check(rep.lambda_estimate > 0.0, "nonlinearity/" + m.name + "/ellipticity");
        v.check(rep.max_omega2_identity_error <= 1e-6, "nonlinearity/" + m.name + "/omega2",
                detail::fmt(rep.max_omega2_identity_error));
    }
    {
        const auto rep = verify_structure(make_minimal_surface(), 1.0, 300, 2, seed);
        v.check(std::abs(rep.lambda_estimate - std::pow(2.0, -1.5)) <= 1e-6,
                "nonlinearity/minimal_surface/lambda_floor", detail::fmt(rep.lambda_estimate));
    }

    // geometry: classification and quadrature
    {
        auto g = build_half_grid(2, {5, 3, 1});
        int thin = 0, diri = 0, inter = 0;
        for (auto c : g->node_class) {
            thin += c == NodeClass::Thin;
            diri += c == NodeClass::Dirichlet;
            inter += c == NodeClass::Interior;
        }
        v.check(thin == 3 && diri == 9 && inter == 3, "geometry/classify_5x3");
        auto g3 = build_half_grid(3, {9, 9, 5});
        int thin3 = 0;
        for (auto c : g3->node_class) thin3 += c == NodeClass::Thin;
        v.check(thin3 == 49 && g3->node_count() == 405, "geometry/classify_9x9x5");
    }
    {
        const auto q2 = make_hemisphere_quadrature(2, {0, 0, 0}, 0.4);
        const double s = surface_integral(q2, [](Vec3 x) { return x[0] * x[0]; });
        v.check(std::abs(s - 0.5 * std::numbers::pi * std::pow(0.4, 3)) <=
                    1e-10 * std::abs(s),
                "geometry/quadrature_exactness_2d");
        const auto q3 = make_hemisphere_quadrature(3, {0, 0, 0}, 0.4);
        const double w = volume_integral(q3, [](Vec3 x) { return x[2]; });
        v.check(std::abs(w - 0.25 * std::numbers::pi * std::pow(0.4, 4)) <= 1e-10 * std::abs(w),
                "geometry/quadrature_exactness_3d");
    }
    {
        auto g = build_half_grid(2, {9, 5, 1});
        const auto u = sample_field(g, [](Vec3 x) { return 2.0 * x[0] - 0.5 * x[1] + 0.25; });
        const double got = interpolate(u, {0.13, 0.41, 0});
        v.check(std::abs(got - (2.0 * 0.13 - 0.5 * 0.41 + 0.25)) <= 1e-14,
                "geometry/interpolation_linear");
    }

    // field io round-trip
    {
        auto g = build_half_grid(2, {9, 5, 1});
        auto u = sample_field(g, [](Vec3 x) { return std::sin(3.0 * x[0]) * x[1]; });
        const auto path = std::filesystem::temp_directory_path() / "thob_validate_roundtrip.thob";
        write_field(path, u);
        const auto w = read_field(path);
        bool same = w.values.size() == u.values.size();
        for (std::size_t i = 0; same && i < u.values.size(); ++i)
            same = std::memcmp(&w.values[i], &u.values[i], sizeof(double)) == 0;
        std::filesystem::remove(path);
        v.check(same, "field_io/roundtrip_bit_exact");
    }

    // solver invariants
    {
        auto g = build_half_grid(2, {9, 5, 1});
        thob::detail::Rng rng(seed);
        bool fd_ok = true, convex_ok = true;
        for (const auto& m :
             {make_quadratic(), make_minimal_surface(), make_perturbed_quadratic(0.1)}) {
            ScalarField a(g), b(g);
            for (auto& x : a.values) x = rng.uniform(-1, 1);
            for (auto& x : b.values) x = rng.uniform(-1, 1);
            const auto r = discrete_residual(a, m);
            double worst = 0, scale_ref = 0;
            for (std::size_t i = 0; i < g->node_count(); i += 2) {
                if (g->node_class[i] == NodeClass::Dirichlet) continue;
                const double keep = a[i], step = 1e-6;
                a[i] = keep + step;
                const double ep = discrete_energy(a, m);
                a[i] = keep - step;
                const double em = discrete_energy(a, m);
                a[i] = keep;
                worst = std::max(worst, std::abs((ep - em) / (2 * step) - r[i]));
                scale_ref = std::max(scale_ref, std::abs(r[i]));
            }
            fd_ok = fd_ok && worst / std::max(scale_ref, 1e-12) <= 1e-6;
            ScalarField mid(g);
            for (std::size_t i = 0; i < g->node_count(); ++i) mid[i] = 0.5 * (a[i] + b[i]);
            convex_ok = convex_ok && discrete_energy(mid, m) <=
                                         0.5 * (discrete_energy(a, m) + discrete_energy(b, m)) + 1e-12;
        }
        v.check(fd_ok, "solver/gradient_consistency");
        v.check(convex_ok, "solver/midpoint_convexity");
    }
    {
        const ExactSignoriniSolution sol(1.0, 2);
        auto g = build_half_grid(2, {5, 3, 1});
        const auto model = make_quadratic();
        const auto bf = brute_force_solve(g, model, oracle_trace_boundary(sol));
        auto cfg = SolveConfig::for_model(model);
        const auto [u, rep] = solve_signorini(g, model, oracle_trace_boundary(sol), cfg);
        v.check(rep.status == SolveStatus::Converged &&
                    std::abs(discrete_energy(u, model) - bf.energy) <= 1e-8,
                "solver/oracle_equivalence_5x3");
    }

    // analysis invariants
    {
        const ExactSignoriniSolution sol(1.0, 2);
        auto g = build_half_grid(2, {65, 33, 1});
        const auto u = sample_field(g, [&](Vec3 x) { return sol.value(x); });
        const auto grad = node_gradient_field(u);
        const double n = compute_N(u, grad, make_quadratic(), {0, 0, 0}, 0.2);
        v.check(std::abs(n - 1.5) <= 0.02, "analysis/frequency_homogeneous", detail::fmt(n));
        std::vector<double> rho, val;
        for (int k = 0; k < 8; ++k) {
            rho.push_back(0.05 * std::pow(1.4, k));
            val.push_back(2.0 * std::pow(rho.back(), 1.5));
        }
        v.check(std::abs(fit_power_law(rho, val).slope - 1.5) <= 1e-10, "analysis/decay_synthetic");
        auto tgt = build_half_grid(2, {33, 17, 1});
        const auto bu = blowup(u, {0, 0, 0}, {0.4, 0.2}, tgt);
        bool unit = true;
        for (double nu : bu.unit_norm) unit = unit && std::abs(nu - 1.0) <= 1e-10;
        v.check(unit, "analysis/blowup_normalization");
    }

    // oracle reference values
    {
        const ExactSignoriniSolution sol(1.0, 2);
        v.check(std::abs(eval_exact(sol, {1, 0, 0}) - 1.0) <= 1e-14 &&
                    eval_exact(sol, {-1, 0, 0}) == 0.0 &&
                    std::abs(eval_exact(sol, {0, 1, 0}) + std::sqrt(2.0) / 2.0) <= 1e-14,
                "oracle/reference_values");
    }

    os << (v.failures == 0 ? "validation passed" : "validation FAILED") << " ("
       << v.failures << " failures)\n";
    return v.failures;
}

}  // namespace thob
