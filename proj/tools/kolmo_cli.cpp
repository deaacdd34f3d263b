#include "kolmo/cli/config.hpp"
#include "kolmo/cli/runs.hpp"
#include "kolmo/error.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

namespace {

kolmo::cli::ExperimentConfig load(const std::string& path, const std::optional<std::uint64_t>& seed) {
    auto config = path.empty() ? kolmo::cli::ExperimentConfig{} : kolmo::cli::load_config(path);
    if (seed) config.seeds = {*seed};
    return config;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Solve linear Kolmogorov PDEs with SDE-based losses"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::string checkpoint;
    std::string reference;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "Experiment config (JSON)");
        sub->add_option("--out", out, "Output directory (default: $KOLMO_OUT or ./runs)");
        sub->add_option("--seed", seed, "Override the config seed");
    };

    auto* train = app.add_subcommand("train", "Train one run and write metrics, checkpoint and manifest");
    add_common(train);
    auto* evaluate = app.add_subcommand("eval", "Append MSE and gradient MSE of a checkpoint to eval.csv");
    add_common(evaluate);
    evaluate->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    evaluate->add_option("--reference", reference, "Reference table from the reference subcommand");
    auto* diag = app.add_subcommand("diagnostics", "Append loss and gradient spreads to variance.csv");
    add_common(diag);
    diag->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    auto* ref = app.add_subcommand("reference", "Build the problem's reference solution");
    add_common(ref);
    auto* sweep = app.add_subcommand("sweep", "Train and evaluate every (loss, K, seed) run");
    add_common(sweep);

    CLI11_PARSE(app, argc, argv);

    try {
        const auto config = load(config_path, seed);
        const std::filesystem::path root = out.empty() ? kolmo::cli::default_output_root() : std::filesystem::path(out);
        if (train->parsed()) {
            const auto runs = kolmo::cli::expand(config);
            if (runs.size() != 1) throw kolmo::ConfigError("train takes a single run; use sweep for list-valued keys");
            return kolmo::cli::run_train(config, runs.front(), root);
        }
        if (evaluate->parsed()) {
            std::optional<std::filesystem::path> ref_path;
            if (!reference.empty()) ref_path = reference;
            return kolmo::cli::run_eval(config, checkpoint, ref_path, root);
        }
        if (diag->parsed()) return kolmo::cli::run_diagnostics(config, checkpoint, root, config.seeds.front());
        if (ref->parsed()) return kolmo::cli::run_reference(config, root, std::cout);
        if (sweep->parsed()) return kolmo::cli::run_sweep(config, root, std::cout);
    } catch (const kolmo::ConfigError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const kolmo::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
