// Command-line driver: solve thin-obstacle problems and run the frequency,
// decay, blow-up, and free-boundary analyses as reproducible experiments.
//
// Exit codes: 0 success, 2 configuration error, 3 solver non-convergence,
// 4 validation failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "thob/field_io.hpp"
#include "thob/pipeline.hpp"
#include "thob/run_config.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitSolver = 3;
constexpr int kExitValidation = 4;

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::string field_path;
    std::optional<std::uint64_t> seed;
    std::optional<double> rho_min, rho_max, alpha, delta;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "run configuration (JSON)")->required();
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option("--seed", args.seed, "probe-sampling seed override");
    cmd->add_option("--rho-min", args.rho_min, "analysis ladder lower radius");
    cmd->add_option("--rho-max", args.rho_max, "analysis ladder upper radius");
    cmd->add_option("--alpha", args.alpha, "monotonicity weight exponent");
    cmd->add_option("--delta", args.delta, "dichotomy margin");
}

thob::RunConfig load(const CommonArgs& args) {
    auto cfg = thob::load_config(args.config_path);
    if (args.seed) cfg.seed = *args.seed;
    if (args.rho_min) cfg.analysis.rho_min = *args.rho_min;
    if (args.rho_max) cfg.analysis.rho_max = *args.rho_max;
    if (args.alpha) cfg.analysis.alpha = *args.alpha;
    if (args.delta) cfg.analysis.delta = *args.delta;
    if (!args.out_dir.empty()) cfg.output_dir = args.out_dir;
    if (cfg.output_dir.empty()) throw thob::ConfigError("no output directory (--out or \"output\")");
    return cfg;
}

int execute(const CommonArgs& args, const thob::PipelineStages& stages) {
    const auto cfg = load(args);
    std::optional<thob::ScalarField> preloaded;
    if (!args.field_path.empty()) preloaded = thob::read_field(args.field_path);
    const auto result = thob::run_pipeline(cfg, cfg.output_dir, stages,
                                           preloaded ? &*preloaded : nullptr);
    std::cout << "wrote " << result.manifest_path.string() << "\n";
    if (result.report.status != thob::SolveStatus::Converged) {
        std::cerr << "solver did not converge (status recorded in the manifest)\n";
        return kExitSolver;
    }
    return kExitOk;
}

int run_oracle(const std::string& grid_spec, const std::string& model_name, double c,
               double amplitude, const std::string& out_dir) {
    std::array<int, 3> npts{1, 1, 1};
    int dim = 0;
    for (const char* p = grid_spec.c_str();;) {
        char* end = nullptr;
        const long v = std::strtol(p, &end, 10);
        if (end == p || dim >= 3) throw thob::ConfigError("oracle: bad --grid, use e.g. 5x3");
        npts[std::size_t(dim++)] = int(v);
        if (*end == '\0') break;
        if (*end != 'x') throw thob::ConfigError("oracle: bad --grid, use e.g. 5x3");
        p = end + 1;
    }
    if (dim != 2 && dim != 3) throw thob::ConfigError("oracle: --grid must be 2D or 3D");

    const auto model = thob::make_model(model_name, c);
    auto grid = thob::build_half_grid(dim, npts);
    const thob::ExactSignoriniSolution sol(amplitude, dim);
    const auto bdata = thob::oracle_trace_boundary(sol);

    const auto bf = thob::brute_force_solve(grid, model, bdata);
    auto scfg = thob::SolveConfig::for_model(model);
    const auto [u, rep] = thob::solve_signorini(grid, model, bdata, scfg);

    double max_diff = 0.0;
    for (std::size_t i = 0; i < grid->node_count(); ++i)
        max_diff = std::max(max_diff, std::abs(u[i] - bf.solution[i]));
    const double solver_energy = thob::discrete_energy(u, model);

    std::printf("reference energy   %.12g (pattern %u, %ld feasible)\n", bf.energy, bf.pattern,
                bf.feasible_patterns);
    std::printf("solver energy      %.12g (status %s)\n", solver_energy,
                rep.status == thob::SolveStatus::Converged ? "converged" : "NOT converged");
    std::printf("energy gap         %.3e\n", std::abs(solver_energy - bf.energy));
    std::printf("max field diff     %.3e\n", max_diff);

    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        thob::write_field(std::filesystem::path(out_dir) / "oracle_reference.thob", bf.solution);
        thob::write_field(std::filesystem::path(out_dir) / "oracle_solver.thob", u);
        std::printf("wrote %s/{oracle_reference,oracle_solver}.thob\n", out_dir.c_str());
    }
    if (rep.status != thob::SolveStatus::Converged) return kExitSolver;
    const double threshold = model_name == "quadratic" ? 1e-8 : 1e-5;
    if (std::abs(solver_energy - bf.energy) > threshold) {
        std::fprintf(stderr, "energy gap exceeds %g\n", threshold);
        return 1;
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"thin-obstacle (Signorini) solver and frequency-function analysis toolkit"};
    app.require_subcommand(1);

    CommonArgs run_args, solve_args, freq_args, decay_args, blowup_args, fb_args;

    auto* cmd_run = app.add_subcommand("run", "solve, analyze, and write the full manifest");
    add_common(cmd_run, run_args);

    auto* cmd_solve = app.add_subcommand("solve", "solve only and write the solution field");
    add_common(cmd_solve, solve_args);

    auto* cmd_freq = app.add_subcommand("frequency", "frequency profile and monotonicity fit");
    add_common(cmd_freq, freq_args);
    cmd_freq->add_option("--field", freq_args.field_path, "analyze a saved field instead of solving");

    auto* cmd_decay = app.add_subcommand("decay", "decay-exponent fits at the free boundary");
    add_common(cmd_decay, decay_args);
    cmd_decay->add_option("--field", decay_args.field_path, "analyze a saved field instead of solving");

    auto* cmd_blowup = app.add_subcommand("blowup", "rescaled blow-up sequence and profile fit");
    add_common(cmd_blowup, blowup_args);
    cmd_blowup->add_option("--field", blowup_args.field_path, "analyze a saved field instead of solving");

    auto* cmd_fb = app.add_subcommand("freeboundary", "contact set and free-boundary cells");
    add_common(cmd_fb, fb_args);
    cmd_fb->add_option("--field", fb_args.field_path, "analyze a saved field instead of solving");

    std::string oracle_grid, oracle_model = "quadratic", oracle_out;
    double oracle_c = 0.1, oracle_amplitude = 1.0;
    auto* cmd_oracle =
        app.add_subcommand("oracle", "brute-force reference solve on a tiny grid, diffed vs the solver");
    cmd_oracle->add_option("--grid", oracle_grid, "node counts, e.g. 5x3 or 5x5x3")->required();
    cmd_oracle->add_option("--model", oracle_model, "nonlinearity name");
    cmd_oracle->add_option("--c", oracle_c, "perturbed-quadratic coefficient");
    cmd_oracle->add_option("--amplitude", oracle_amplitude, "oracle trace amplitude");
    cmd_oracle->add_option("--out", oracle_out, "directory for the reference/solver fields");

    std::uint64_t validate_seed = 0x5eed;
    auto* cmd_validate = app.add_subcommand("validate", "run the module invariant suites");
    cmd_validate->add_option("--seed", validate_seed, "probe-sampling seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_run->parsed()) return execute(run_args, thob::PipelineStages::all());
        if (cmd_solve->parsed()) return execute(solve_args, thob::PipelineStages::only_solve());
        if (cmd_freq->parsed()) {
            auto s = thob::PipelineStages::only_solve();
            s.free_boundary = s.frequency = true;
            return execute(freq_args, s);
        }
        if (cmd_decay->parsed()) {
            auto s = thob::PipelineStages::only_solve();
            s.free_boundary = s.decay = true;
            return execute(decay_args, s);
        }
        if (cmd_blowup->parsed()) {
            auto s = thob::PipelineStages::only_solve();
            s.free_boundary = s.blowup = true;
            return execute(blowup_args, s);
        }
        if (cmd_fb->parsed()) {
            auto s = thob::PipelineStages::only_solve();
            s.free_boundary = true;
            return execute(fb_args, s);
        }
        if (cmd_oracle->parsed())
            return run_oracle(oracle_grid, oracle_model, oracle_c, oracle_amplitude, oracle_out);
        if (cmd_validate->parsed())
            return thob::run_validation(std::cout, validate_seed) == 0 ? kExitOk : kExitValidation;
    } catch (const thob::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kExitOk;
}
