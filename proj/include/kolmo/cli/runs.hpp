#pragma once

#include "kolmo/cli/config.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>

namespace kolmo::cli {

/// Output root from KOLMO_OUT, or "runs" in the working directory.
std::filesystem::path default_output_root();

/// Train one run into `out`: metrics.csv (replaced), checkpoint.bin and
/// manifest.json. Returns 1 when the run wrote a failure row.
int run_train(const ExperimentConfig& config, const RunSpec& run, const std::filesystem::path& out);

/// Append one row to out/eval.csv. HJB runs also write out/slice.csv with
/// the tilted potential along the diagonal.
int run_eval(const ExperimentConfig& config, const std::filesystem::path& checkpoint,
             const std::optional<std::filesystem::path>& reference, const std::filesystem::path& out);

/// Append one out/variance.csv row per (loss, K) of the config.
int run_diagnostics(const ExperimentConfig& config, const std::filesystem::path& checkpoint,
                    const std::filesystem::path& out, std::uint64_t seed);

/// Build or validate the problem's reference and report it on `log`.
int run_reference(const ExperimentConfig& config, const std::filesystem::path& out, std::ostream& log);

/// Train and evaluate every run of the matrix, each in its own subdirectory.
int run_sweep(const ExperimentConfig& config, const std::filesystem::path& out, std::ostream& log);

} // namespace kolmo::cli
