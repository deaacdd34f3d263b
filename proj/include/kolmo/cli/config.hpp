#pragma once

#include "kolmo/eval/eval.hpp"
#include "kolmo/nets/model.hpp"
#include "kolmo/sde/problem.hpp"
#include "kolmo/train/train.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace kolmo::cli {

/// One experiment file. `losses`, `K` and `seeds` may be lists; a sweep runs
/// their Cartesian product.
struct ExperimentConfig {
    std::string problem = "heat";
    sde::ProblemOverrides overrides;

    std::vector<std::string> losses = {"FK"};
    std::vector<int> K = {128};
    std::vector<std::uint64_t> seeds = {0};

    std::string model = "feedforward-residual";
    int levels = 3;
    int q = 3;
    bool residual = true;

    int steps = 1000;
    double lr_before = 5e-4;
    double lr_after = 5e-6;
    double dt_before = 1e-2;
    double dt_after = 1e-3;
    double milestone = 0.9;
    std::optional<double> time_limit;
    bool wall_clock = true;
    std::uint64_t tape_budget_bytes = 0;
    bool zero_noise = false;

    int metrics_every = 100;
    int diag_batches = 0;
    int eval_samples = 1 << 15;
    int n_inner = 1 << 12;

    std::vector<int> diag_K;  // empty: use K
    int diag_B = 30;
    std::optional<double> diag_dt;  // default: dt_after

    double fd_M = 6.0;
    int fd_nx = 1000;
    int fd_nt = 1000;

    bool operator==(const ExperimentConfig&) const = default;

    eval::FdGrid fd_grid() const { return {fd_M, fd_nx, fd_nt}; }
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& c);
ExperimentConfig load_config(const std::filesystem::path& path);

/// A single (loss, K, seed) combination.
struct RunSpec {
    std::string loss;
    int K = 0;
    std::uint64_t seed = 0;

    std::string directory_name() const;
};

std::vector<RunSpec> expand(const ExperimentConfig& c);

sde::Problem build_problem(const ExperimentConfig& c);
train::TrainConfig build_train_config(const ExperimentConfig& c, const RunSpec& run, int d, double horizon);

} // namespace kolmo::cli
