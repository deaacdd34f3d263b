#pragma once

#include "kolmo/eval/eval.hpp"
#include "kolmo/nets/model.hpp"
#include "kolmo/train/train.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace kolmo::io {

nlohmann::json spec_to_json(const nets::ModelSpec& spec);
nets::ModelSpec spec_from_json(const nlohmann::json& j);

/// One model stored in a checkpoint; `role` is "u" or "r".
struct StoredModel {
    std::string role;
    nets::ModelSpec spec;
    nets::ParameterVector params;
};

struct Checkpoint {
    std::vector<StoredModel> models;
    std::uint64_t seed = 0;
    int step = 0;
    nlohmann::json extra = nlohmann::json::object();  // free-form run metadata

    const StoredModel* find(const std::string& role) const;
};

/// Magic line, u64 little-endian header length, JSON header, raw f64 little-endian data.
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

void write_reference(const std::filesystem::path& path, const eval::FdTable& table, const nlohmann::json& extra = {});
eval::FdTable read_reference(const std::filesystem::path& path);
nlohmann::json read_reference_header(const std::filesystem::path& path);

// CSV outputs.

struct EvalRecord {
    int step = 0;
    std::string loss_kind;
    int K = 0;
    std::uint64_t seed = 0;
    int n_samples = 0;
    double mse = 0.0;
    double mse_grad = 0.0;
    std::string status = "ok";
};

struct VarianceRecord {
    std::string loss_kind;
    int K = 0;
    double dt = 0.0;
    int B = 0;
    double loss_mean = 0.0;
    double loss_std = 0.0;
    double grad_std_max = 0.0;
    std::uint64_t seed = 0;
};

extern const char* const kMetricsHeader;
extern const char* const kEvalHeader;
extern const char* const kVarianceHeader;

/// Shortest round-trip formatting; non-finite values as nan/inf/-inf.
std::string format_double(double x);
double parse_double(const std::string& s);

std::string csv_row(const train::MetricsRecord& r);
std::string csv_row(const EvalRecord& r);
std::string csv_row(const VarianceRecord& r);

/// Append rows, writing the header first if the file is new or empty.
/// Throws IoError if an existing header differs.
void append_csv(const std::filesystem::path& path, const char* header, const std::vector<std::string>& rows);

std::vector<train::MetricsRecord> read_metrics(const std::filesystem::path& path);
std::vector<EvalRecord> read_eval(const std::filesystem::path& path);
std::vector<VarianceRecord> read_variance(const std::filesystem::path& path);

} // namespace kolmo::io
