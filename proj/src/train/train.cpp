#include "kolmo/train/train.hpp"

#include "kolmo/error.hpp"
#include "kolmo/eval/eval.hpp"

#include <chrono>
#include <cmath>

namespace kolmo::train {

void adam_step(AdamState& s, std::span<double> theta, std::span<const double> gradient, double lr) {
    if (theta.size() != gradient.size() || s.m.size() != theta.size() || s.v.size() != theta.size())
        throw DimensionError("adam: parameter, gradient and moment sizes differ");
    for (double g : gradient)
        if (!std::isfinite(g)) throw Error("adam: non-finite gradient at update " + std::to_string(s.step + 1));
    ++s.step;
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
    for (std::size_t i = 0; i < theta.size(); ++i) {
        s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * gradient[i];
        s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * gradient[i] * gradient[i];
        const double mhat = s.m[i] / c1;
        const double vhat = s.v[i] / c2;
        theta[i] -= lr * mhat / (std::sqrt(vhat) + s.epsilon);
    }
}

void TrainConfig::validate() const {
    if (steps < 1) throw ConfigError("steps must be at least 1");
    if (K < 1) throw ConfigError("batch size must be at least 1");
    if (!(lr_before > 0.0) || !(lr_after > 0.0)) throw ConfigError("learning rates must be positive");
    if (!(dt_before > 0.0) || !(dt_after > 0.0)) throw ConfigError("step sizes must be positive");
    if (!(milestone > 0.0 && milestone < 1.0)) throw ConfigError("milestone must lie in (0, 1)");
    if (metrics_every < 0 || diag_batches < 0 || eval_samples < 0) throw ConfigError("negative cadence or count");
    if (diag_batches == 1) throw ConfigError("diagnostics need at least two batches");
    if (time_limit_seconds && !(*time_limit_seconds > 0.0)) throw ConfigError("time limit must be positive");
    model.validate();
    if (model.output_dim() != 1) throw ConfigError("u must be a scalar model");
    if (losses::uses_gradient_network(loss)) {
        if (!gradient_model) throw ConfigError("loss " + std::string(losses::loss_name(loss)) + " needs a gradient model");
        gradient_model->validate();
        if (gradient_model->output_dim() != gradient_model->d) throw ConfigError("gradient model must output d values");
    }
}

int milestone_step(const TrainConfig& config) {
    return static_cast<int>(std::floor(config.milestone * config.steps));
}

ScheduleValue schedule(const TrainConfig& config, int m) {
    if (m < milestone_step(config)) return {config.lr_before, config.dt_before};
    return {config.lr_after, config.dt_after};
}

namespace {

using Clock = std::chrono::steady_clock;

} // namespace

TrainResult train(const sde::Problem& problem, const TrainConfig& config, const eval::Reference* reference,
                  const TrainHooks& hooks) {
    config.validate();
    nets::ParameterVector theta = nets::init_params(config.model, config.seed);
    std::optional<nets::ParameterVector> theta_r;
    if (losses::uses_gradient_network(config.loss))
        theta_r = nets::init_params(*config.gradient_model, config.seed ^ 0x9E3779B97F4A7C15ull);
    return train(problem, config, std::move(theta), std::move(theta_r), reference, hooks);
}

TrainResult train(const sde::Problem& problem, const TrainConfig& config, nets::ParameterVector theta,
                  std::optional<nets::ParameterVector> theta_r, const eval::Reference* reference,
                  const TrainHooks& hooks) {
    config.validate();
    if (config.model.d != problem.d) throw ConfigError("model dimension does not match the problem");
    if (theta.size() != nets::parameter_count(config.model)) throw DimensionError("initial parameters do not match the model");
    const bool with_r = losses::uses_gradient_network(config.loss);
    if (with_r && (!theta_r || theta_r->size() != nets::parameter_count(*config.gradient_model)))
        throw DimensionError("gradient-network parameters missing or mismatched");

    TrainResult res;
    res.theta = std::move(theta);
    if (with_r) res.theta_r = std::move(theta_r);
    AdamState adam(res.theta.size());
    AdamState adam_r(with_r ? res.theta_r->size() : 0);

    const auto start = Clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(Clock::now() - start).count(); };
    const std::string kind(losses::loss_name(config.loss));
    std::size_t window_begin = 0;

    auto refs = [&] {
        losses::ModelRef u{&config.model, res.theta.values};
        losses::ModelRef r{};
        if (with_r) r = {&*config.gradient_model, res.theta_r->values};
        return std::pair{u, r};
    };

    auto record = [&](int step, double dt, const std::string& status) {
        MetricsRecord rec;
        rec.step = step;
        rec.wall_time_seconds = config.wall_clock ? elapsed() : 0.0;
        rec.loss_kind = kind;
        rec.K = config.K;
        rec.dt = dt;
        rec.seed = config.seed;
        rec.status = status;
        if (status == "ok") {
            auto [u, r] = refs();
            if (config.diag_batches >= 2) {
                eval::DiagnosticsConfig dc;
                dc.kind = config.loss;
                dc.K = config.K;
                dc.B = config.diag_batches;
                dc.dt = dt;
                dc.seed = config.seed;
                dc.zero_noise = config.zero_noise;
                const auto diag = eval::variance_diagnostics(problem, u, with_r ? &r : nullptr, dc);
                rec.loss_mean = diag.loss_mean;
                rec.loss_std = diag.loss_std;
                rec.grad_std_max = diag.grad_std_max;
            } else if (res.batch_losses.size() > window_begin) {
                const std::span<const double> w(res.batch_losses.data() + window_begin,
                                                res.batch_losses.size() - window_begin);
                std::tie(rec.loss_mean, rec.loss_std) = eval::mean_std(w);
                if (w.size() < 2) rec.loss_std = std::numeric_limits<double>::quiet_NaN();
            }
            if (reference && config.eval_samples > 0) {
                rec.mse = eval::mse_eval(problem, u, *reference, config.eval_samples, config.seed).mse;
                if (reference->has_gradient())
                    rec.mse_grad = eval::mse_grad_eval(problem, with_r ? r : u, *reference, config.eval_samples,
                                                       config.seed).mse;
            }
        }
        window_begin = res.batch_losses.size();
        res.log.push_back(rec);
        if (hooks.on_record) hooks.on_record(step, res);
    };

    record(0, schedule(config, 0).dt, "ok");

    int m = 0;
    double dt = config.dt_before;
    for (; m < config.steps; ++m) {
        ScheduleValue sv = schedule(config, m);
        if (config.time_limit_seconds) {
            const double t = elapsed();
            if (t >= *config.time_limit_seconds) break;
            sv = t < config.milestone * *config.time_limit_seconds ? ScheduleValue{config.lr_before, config.dt_before}
                                                                   : ScheduleValue{config.lr_after, config.dt_after};
        }
        dt = sv.dt;
        losses::BatchSource src;
        src.dt = sv.dt;
        src.K = config.K;
        src.rng = RngStream(config.seed, Stream::Train, static_cast<std::uint64_t>(m));
        src.zero_noise = config.zero_noise;
        std::string failure;
        try {
            auto [u, r] = refs();
            const auto rep = losses::compute_gradient(config.loss, problem, u, with_r ? &r : nullptr, src);
            res.tape.merge(rep.tape);
            if (config.tape_budget_bytes > 0 && rep.tape.peak_doubles * sizeof(double) > config.tape_budget_bytes) {
                failure = "tape-budget";
            } else if (!std::isfinite(rep.loss)) {
                failure = "diverged";
            } else {
                res.batch_losses.push_back(rep.loss);
                adam_step(adam, res.theta.values, rep.gradient, sv.lr);
                if (with_r) adam_step(adam_r, res.theta_r->values, rep.gradient_r, sv.lr);
            }
        } catch (const NumericalError&) {
            failure = "diverged";
        } catch (const SimulationDiverged&) {
            failure = "diverged";
        } catch (const ConfigError&) {
            throw;
        } catch (const Error&) {
            failure = "diverged";
        }
        if (!failure.empty()) {
            res.failed = true;
            res.failure = failure + " at step " + std::to_string(m);
            res.steps_done = m;
            record(m, sv.dt, failure);
            return res;
        }
        const int done = m + 1;
        if (config.metrics_every > 0 && done % config.metrics_every == 0 && done < config.steps)
            record(done, schedule(config, std::min(done, config.steps - 1)).dt, "ok");
    }
    res.steps_done = m;
    record(m, dt, "ok");
    return res;
}

} // namespace kolmo::train
