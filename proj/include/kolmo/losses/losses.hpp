#pragma once

#include "kolmo/autodiff/tape.hpp"
#include "kolmo/nets/model.hpp"
#include "kolmo/rng.hpp"
#include "kolmo/sde/paths.hpp"
#include "kolmo/sde/problem.hpp"

#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace kolmo::losses {

enum class LossKind { FK, BSDE, BSDEDetach, BSDEGrad, BSDEEff, BSDEGradEff };

std::string_view loss_name(LossKind kind) noexcept;
LossKind parse_loss(std::string_view name);

/// Kinds that pair u with a gradient network r.
bool uses_gradient_network(LossKind kind) noexcept;

struct LossSpec {
    LossKind kind = LossKind::FK;
    double dt = 1e-2;
    int K = 128;
};

/// A model together with the parameters to evaluate it at.
struct ModelRef {
    const nets::ModelSpec* spec = nullptr;
    std::span<const double> theta;
};

/// Per-sample terminal mismatch, stochastic integral and error e = delta - s.
struct SampleTerms {
    std::vector<double> delta;
    std::vector<double> s;
    std::vector<double> e;
};

struct GradientReport {
    double loss = 0.0;
    std::vector<double> gradient;    // with respect to the parameters of u
    std::vector<double> gradient_r;  // with respect to the parameters of r, if any
    std::optional<SampleTerms> terms;
    ad::TapeStats tape;
};

/// g(X_T) - u(xi, tau) for sample k.
double delta_hat(const sde::Problem& problem, ModelRef u, const sde::PathBatch& batch, int k);

/// sum_j (sigma^T grad_x u)(X_j, t_j) . dW_j for sample k.
double s_hat(ModelRef u, const sde::PathBatch& batch, int k);

/// sum_j (sigma^T r)(X_j, t_j) . dW_j for sample k.
double s_tilde(ModelRef r, const sde::PathBatch& batch, int k);

/// Terms of all samples; `r` is required for the gradient-network kinds.
SampleTerms sample_terms(LossKind kind, const sde::Problem& problem, ModelRef u, const ModelRef* r,
                         const sde::PathBatch& batch);

/// Monte Carlo loss (1/K) sum e_k^2 (with s = 0 for FK).
double loss_estimate(LossKind kind, const sde::Problem& problem, ModelRef u, const ModelRef* r,
                     const sde::PathBatch& batch);

GradientReport grad_fk(const sde::Problem& problem, ModelRef u, const sde::PathBatch& batch);
GradientReport grad_bsde(const sde::Problem& problem, ModelRef u, const sde::PathBatch& batch);
GradientReport grad_bsde_detach(const sde::Problem& problem, ModelRef u, const sde::PathBatch& batch);
GradientReport grad_bsde_grad(const sde::Problem& problem, ModelRef u, ModelRef r, const sde::PathBatch& batch);

/// Everything that determines a training batch: its size, step size and RNG key.
struct BatchSource {
    double dt = 1e-2;
    int K = 128;
    RngStream rng;
    bool zero_noise = false;
    std::optional<sde::Initials> initials;  // overrides sampling when set
};

sde::Initials batch_initials(const sde::Problem& problem, const BatchSource& source);
sde::PathBatch make_batch(const sde::Problem& problem, const BatchSource& source);

/// Two-pass BSDE gradient: per-step tapes only, replaying the batch from
/// its RNG key. Throws ConsistencyError if the replay diverges bitwise.
GradientReport grad_bsde_eff(const sde::Problem& problem, ModelRef u, const BatchSource& source);
GradientReport grad_bsde_grad_eff(const sde::Problem& problem, ModelRef u, ModelRef r, const BatchSource& source);

/// Loss and gradient of `kind` on the batch described by `source`.
GradientReport compute_gradient(LossKind kind, const sde::Problem& problem, ModelRef u, const ModelRef* r,
                                const BatchSource& source, bool keep_terms = false);

} // namespace kolmo::losses
