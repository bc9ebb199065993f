#include <chrono>
#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "bcocycle/cli.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitInfeasible = 3;

}  // namespace

int main(int argc, char** argv) {
    using namespace bcocycle;
    CLI::App app{"Blaschke product cocycles: random fixed points, transfer matrices, Lyapunov spectra"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    std::uint64_t seed = 0;
    int threads = 1;

    CLI::App* run = app.add_subcommand("run", "run the scenario described by a config file");
    run->add_option("--config", config_path, "JSON experiment config")->required();
    CLI::Option* out_opt = run->add_option("--out", out_dir, "output directory (overrides output.dir)");
    CLI::Option* seed_opt = run->add_option("--seed", seed, "base seed (overrides the config seed)");
    run->add_option("--threads", threads, "worker threads for grid cells")->check(CLI::PositiveNumber);

    CLI::App* validate = app.add_subcommand("validate", "check a config file and resolve R");
    validate->add_option("--config", config_path, "JSON experiment config")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    try {
        cli::ExperimentConfig cfg = cli::load_config(config_path);
        if (*validate) {
            const double R = cli::resolve_radius(cfg);
            nlohmann::json j = {{"valid", true},
                                {"scenario", cfg.scenario_name},
                                {"R", R},
                                {"R_auto", !cfg.R.has_value()},
                                {"r", family_r(cli::family_maps(cfg), R)},
                                {"N", cfg.N},
                                {"seed", cfg.seed}};
            std::cout << j.dump(2) << "\n";
            return 0;
        }
        if (*seed_opt) {
            cfg.seed = seed;
            cfg.raw["seed"] = seed;
        }
        if (*out_opt) cfg.out_dir = out_dir;
        const auto t0 = std::chrono::steady_clock::now();
        const cli::RunResult res = cli::run_experiment(cfg, threads);
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        cli::write_outputs(cfg, res, cfg.out_dir, wall);
        std::cout << "scenario " << cfg.scenario_name << ": " << res.tables.size() << " tables written to "
                  << cfg.out_dir << " (" << wall << " s)\n";
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const InfeasibilityError& e) {
        std::cerr << "numerical infeasibility: " << e.what() << "\n";
        return kExitInfeasible;
    } catch (const TransversalityError& e) {
        std::cerr << "numerical infeasibility: " << e.what() << "\n";
        return kExitInfeasible;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
