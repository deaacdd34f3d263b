#pragma once

#include "kolmo/losses/losses.hpp"
#include "kolmo/nets/model.hpp"
#include "kolmo/sde/problem.hpp"

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace kolmo::eval {
struct Reference;
}

namespace kolmo::train {

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// One bias-corrected Adam update of `theta` in place. Throws
/// DimensionError on a shape mismatch and Error on a non-finite gradient.
void adam_step(AdamState& state, std::span<double> theta, std::span<const double> gradient, double lr);

struct TrainConfig {
    losses::LossKind loss = losses::LossKind::FK;
    nets::ModelSpec model;
    std::optional<nets::ModelSpec> gradient_model;  // required by the gradient-network losses
    int steps = 1000;                               // M
    int K = 128;
    double lr_before = 5e-4;
    double lr_after = 5e-6;
    double dt_before = 1e-2;
    double dt_after = 1e-3;
    double milestone = 0.9;
    std::optional<double> time_limit_seconds;  // schedule B: stop on elapsed time
    std::uint64_t seed = 0;
    int metrics_every = 0;    // 0: initial and final records only
    int diag_batches = 0;     // >= 2: loss/gradient std from fresh batches at each record
    int eval_samples = 0;     // > 0 and a reference: MSE at each record
    bool wall_clock = true;   // false writes 0 wall time, for byte-identical logs
    std::size_t tape_budget_bytes = 0;  // 0: unlimited
    bool zero_noise = false;

    void validate() const;
};

/// Learning rate and step size in effect at step m.
struct ScheduleValue {
    double lr;
    double dt;
};
ScheduleValue schedule(const TrainConfig& config, int m);

/// Step at which the schedule switches: floor(milestone * M).
int milestone_step(const TrainConfig& config);

struct MetricsRecord {
    int step = 0;
    double wall_time_seconds = 0.0;
    std::string loss_kind;
    int K = 0;
    double dt = 0.0;
    double loss_mean = std::numeric_limits<double>::quiet_NaN();
    double loss_std = std::numeric_limits<double>::quiet_NaN();
    double grad_std_max = std::numeric_limits<double>::quiet_NaN();
    double mse = std::numeric_limits<double>::quiet_NaN();
    double mse_grad = std::numeric_limits<double>::quiet_NaN();
    std::uint64_t seed = 0;
    std::string status = "ok";
};

struct TrainResult {
    nets::ParameterVector theta;
    std::optional<nets::ParameterVector> theta_r;
    std::vector<MetricsRecord> log;
    std::vector<double> batch_losses;
    int steps_done = 0;
    bool failed = false;
    std::string failure;
    ad::TapeStats tape;
};

/// Optional hooks, called after each update and at each metrics record.
struct TrainHooks {
    std::function<void(int step, const TrainResult&)> on_record;
};

/// Algorithm: sample initials, simulate, loss gradient, Adam update; M times.
TrainResult train(const sde::Problem& problem, const TrainConfig& config, const eval::Reference* reference = nullptr,
                  const TrainHooks& hooks = {});

/// Continue from given parameters instead of a fresh initialization.
TrainResult train(const sde::Problem& problem, const TrainConfig& config, nets::ParameterVector theta,
                  std::optional<nets::ParameterVector> theta_r, const eval::Reference* reference,
                  const TrainHooks& hooks = {});

} // namespace kolmo::train
