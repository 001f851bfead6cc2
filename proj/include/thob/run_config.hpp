#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "thob/detail/sha256.hpp"
#include "thob/grid.hpp"
#include "thob/nonlinearity.hpp"
#include "thob/oracle.hpp"
#include "thob/solver.hpp"

namespace thob {

// Configuration problems map to exit code 2 on the command line.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct BoundarySpec {
    std::string name;                 // oracle_trace | constant | custom_table
    double amplitude = 1.0;           // oracle_trace
    double value = 0.0;               // constant
    std::vector<Vec3> points;         // custom_table
    std::vector<double> values;
};

struct AnalysisSpec {
    Vec3 center{0, 0, 0};
    double rho_min = 0.0;             // 0: default 4 * spacing
    double rho_max = 0.45;
    int samples = 0;                  // 0: geometric ladder with ratio 2^{-1/4}
    double alpha = 0.5;
    double delta = 0.1;
    double slack = 1e-3;
    int quad_angular = 32;
    int quad_radial = 16;
    double eps_contact = 0.0;         // 0: default 10 * tol_kkt
    std::vector<double> blowup_radii; // empty: 0.4 * 2^{-j}, j = 0..3
    std::array<int, 3> target_nodes{65, 33, 1};
};

struct RunConfig {
    int dim = 2;
    std::array<int, 3> nodes_per_axis{129, 65, 1};
    std::string nonlinearity_name = "quadratic";
    double nonlinearity_c = 0.1;
    BoundarySpec boundary;
    SolveConfig solver;
    bool solver_tol_explicit = false;
    AnalysisSpec analysis;
    std::string output_dir;
    std::uint64_t seed = 0x5eed;
    std::string digest;               // SHA-256 of the canonicalized document
};

namespace detail {

template <class T>
T require_field(const nlohmann::json& j, const std::string& key) {
    if (!j.contains(key)) throw ConfigError("config: missing field \"" + key + "\"");
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("config: field \"" + key + "\" has the wrong type");
    }
}

template <class T>
T optional_field(const nlohmann::json& j, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("config: field \"" + key + "\" has the wrong type");
    }
}

}  // namespace detail

// Canonical bytes of a configuration document: parsed JSON re-serialized
// with sorted keys and no whitespace. The digest is the SHA-256 of these.
inline std::string canonicalize_config(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: not valid JSON: ") + e.what());
    }
    return j.dump();
}

inline RunConfig parse_config(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: not valid JSON: ") + e.what());
    }

    RunConfig cfg;
    cfg.digest = detail::sha256_hex(j.dump());
    cfg.dim = detail::require_field<int>(j, "dim");
    if (cfg.dim != 2 && cfg.dim != 3) throw ConfigError("config: \"dim\" must be 2 or 3");

    const auto axes = detail::require_field<std::vector<int>>(j, "nodes_per_axis");
    if (int(axes.size()) != cfg.dim)
        throw ConfigError("config: \"nodes_per_axis\" must list one count per axis");
    cfg.nodes_per_axis = {1, 1, 1};
    for (int d = 0; d < cfg.dim; ++d) cfg.nodes_per_axis[std::size_t(d)] = axes[std::size_t(d)];

    if (!j.contains("nonlinearity")) throw ConfigError("config: missing field \"nonlinearity\"");
    const auto& nl = j.at("nonlinearity");
    cfg.nonlinearity_name = detail::require_field<std::string>(nl, "name");
    cfg.nonlinearity_c = detail::optional_field<double>(nl, "c", 0.1);
    if (cfg.nonlinearity_name != "quadratic" && cfg.nonlinearity_name != "minimal_surface" &&
        cfg.nonlinearity_name != "perturbed_quadratic")
        throw ConfigError("config: unknown nonlinearity \"" + cfg.nonlinearity_name + "\"");

    if (!j.contains("boundary")) throw ConfigError("config: missing field \"boundary\"");
    const auto& bd = j.at("boundary");
    cfg.boundary.name = detail::require_field<std::string>(bd, "name");
    if (cfg.boundary.name == "oracle_trace") {
        cfg.boundary.amplitude = detail::optional_field<double>(bd, "amplitude", 1.0);
        if (!(cfg.boundary.amplitude > 0.0))
            throw ConfigError("config: boundary.amplitude must be positive");
    } else if (cfg.boundary.name == "constant") {
        cfg.boundary.value = detail::require_field<double>(bd, "value");
    } else if (cfg.boundary.name == "custom_table") {
        const auto pts = detail::require_field<std::vector<std::vector<double>>>(bd, "points");
        cfg.boundary.values = detail::require_field<std::vector<double>>(bd, "values");
        if (pts.empty() || pts.size() != cfg.boundary.values.size())
            throw ConfigError("config: boundary.points and boundary.values must match and be nonempty");
        for (const auto& p : pts) {
            if (int(p.size()) != cfg.dim)
                throw ConfigError("config: boundary.points entries must have dim coordinates");
            Vec3 x{0, 0, 0};
            for (int d = 0; d < cfg.dim; ++d) x[std::size_t(d)] = p[std::size_t(d)];
            cfg.boundary.points.push_back(x);
        }
    } else {
        throw ConfigError("config: unknown boundary generator \"" + cfg.boundary.name + "\"");
    }

    if (j.contains("solver")) {
        const auto& sv = j.at("solver");
        const auto method =
            detail::optional_field<std::string>(sv, "method", "active_set_newton");
        if (method == "active_set_newton")
            cfg.solver.method = SolveConfig::Method::ActiveSetNewton;
        else if (method == "projected_gradient")
            cfg.solver.method = SolveConfig::Method::ProjectedGradient;
        else
            throw ConfigError("config: unknown solver.method \"" + method + "\"");
        if (sv.contains("tol_kkt")) {
            cfg.solver.tol_kkt = detail::require_field<double>(sv, "tol_kkt");
            cfg.solver_tol_explicit = true;
            if (!(cfg.solver.tol_kkt > 0.0)) throw ConfigError("config: solver.tol_kkt must be positive");
        }
        cfg.solver.max_iterations =
            detail::optional_field<int>(sv, "max_iterations", cfg.solver.max_iterations);
        if (cfg.solver.max_iterations < 1)
            throw ConfigError("config: solver.max_iterations must be >= 1");
        cfg.solver.linear_tol =
            detail::optional_field<double>(sv, "linear_tol", cfg.solver.linear_tol);
    }

    if (j.contains("analysis")) {
        const auto& an = j.at("analysis");
        if (an.contains("center")) {
            const auto c = detail::require_field<std::vector<double>>(an, "center");
            if (int(c.size()) != cfg.dim - 1 && int(c.size()) != cfg.dim)
                throw ConfigError("config: analysis.center must be a thin-plane point");
            for (std::size_t d = 0; d < c.size() && d + 1 < std::size_t(cfg.dim); ++d)
                cfg.analysis.center[d] = c[d];
        }
        cfg.analysis.rho_min = detail::optional_field<double>(an, "rho_min", 0.0);
        cfg.analysis.rho_max = detail::optional_field<double>(an, "rho_max", 0.45);
        cfg.analysis.samples = detail::optional_field<int>(an, "samples", 0);
        cfg.analysis.alpha = detail::optional_field<double>(an, "alpha", 0.5);
        cfg.analysis.delta = detail::optional_field<double>(an, "delta", 0.1);
        cfg.analysis.slack = detail::optional_field<double>(an, "slack", 1e-3);
        cfg.analysis.quad_angular = detail::optional_field<int>(an, "quad_angular", 32);
        cfg.analysis.quad_radial = detail::optional_field<int>(an, "quad_radial", 16);
        cfg.analysis.eps_contact = detail::optional_field<double>(an, "eps_contact", 0.0);
        if (an.contains("blowup_radii"))
            cfg.analysis.blowup_radii =
                detail::require_field<std::vector<double>>(an, "blowup_radii");
        if (an.contains("target_nodes")) {
            const auto t = detail::require_field<std::vector<int>>(an, "target_nodes");
            if (int(t.size()) != cfg.dim)
                throw ConfigError("config: analysis.target_nodes must list one count per axis");
            cfg.analysis.target_nodes = {1, 1, 1};
            for (int d = 0; d < cfg.dim; ++d) cfg.analysis.target_nodes[std::size_t(d)] = t[std::size_t(d)];
        } else if (cfg.dim == 3) {
            cfg.analysis.target_nodes = {33, 33, 17};
        }
        if (!(cfg.analysis.alpha > 0.0) || cfg.analysis.alpha > 1.0)
            throw ConfigError("config: analysis.alpha must lie in (0, 1]");
        if (!(cfg.analysis.delta > 0.0) || cfg.analysis.delta >= 0.5)
            throw ConfigError("config: analysis.delta must lie in (0, 1/2)");
    } else if (cfg.dim == 3) {
        cfg.analysis.target_nodes = {33, 33, 17};
    }

    cfg.output_dir = detail::optional_field<std::string>(j, "output", "");
    cfg.seed = detail::optional_field<std::uint64_t>(j, "seed", 0x5eedULL);

    if (!j.contains("solver") || !j.at("solver").contains("tol_kkt")) {
        cfg.solver.tol_kkt = cfg.nonlinearity_name == "quadratic" ? 1e-8 : 1e-6;
    }
    return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str());
}

inline NonlinearityModel model_from_config(const RunConfig& cfg) {
    return make_model(cfg.nonlinearity_name, cfg.nonlinearity_c);
}

inline BoundaryData boundary_from_config(const RunConfig& cfg) {
    if (cfg.boundary.name == "oracle_trace") {
        const ExactSignoriniSolution sol(cfg.boundary.amplitude, cfg.dim);
        return BoundaryData{[sol](Vec3 x) { return sol.value(x); }, true};
    }
    if (cfg.boundary.name == "constant") return constant_boundary(cfg.boundary.value);
    // custom_table: nearest-neighbour lookup
    const auto points = cfg.boundary.points;
    const auto values = cfg.boundary.values;
    return BoundaryData{[points, values](Vec3 x) {
                            std::size_t best = 0;
                            double best_d = std::numeric_limits<double>::infinity();
                            for (std::size_t i = 0; i < points.size(); ++i) {
                                const double d = norm(sub(points[i], x));
                                if (d < best_d) {
                                    best_d = d;
                                    best = i;
                                }
                            }
                            return values[best];
                        },
                        false};
}

}  // namespace thob
