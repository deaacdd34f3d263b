#pragma once

#include "kolmo/losses/losses.hpp"
#include "kolmo/sde/problem.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace kolmo::eval {

/// Crank-Nicolson grid on [-M, M] x [0, T].
struct FdGrid {
    double M = 6.0;
    int n_x = 1000;
    int n_t = 1000;
};

/// Solution table of a one-dimensional backward problem.
///
/// `values` holds n_t + 1 time levels of n_x points; level i is t = i T / n_t.
struct FdTable {
    FdGrid grid;
    double T = 1.0;
    std::vector<double> values;
    std::vector<double> derivatives;  // d/dx by central differences, same layout

    double dx() const noexcept { return 2.0 * grid.M / (grid.n_x - 1); }
    double dt() const noexcept { return T / grid.n_t; }
    double at(int level, int i) const { return values[static_cast<std::size_t>(level) * grid.n_x + i]; }

    /// Bilinear interpolation; points outside [-M, M] are clamped.
    double value(double x, double t) const;
    double derivative(double x, double t) const;
};

/// Solve V_t + V_xx / 2 - psi'(x) V_x = 0, V(., T) = g1, with Dirichlet
/// boundaries frozen at g1(-M), g1(M). Throws ConfigError when the cell
/// Peclet number max |psi'| dx exceeds 2.
FdTable fd_reference_1d(const std::function<double(double)>& dpsi, const std::function<double(double)>& g1,
                        double T, const FdGrid& grid);

enum class ReferenceKind { ClosedForm, MonteCarlo, FdTensorProduct };

std::string_view reference_name(ReferenceKind kind) noexcept;

struct Reference {
    ReferenceKind kind = ReferenceKind::ClosedForm;
    std::function<double(std::span<const double> x, double t)> value;
    /// Empty when the reference has no gradient.
    std::function<void(std::span<const double> x, double t, std::span<double> grad)> gradient;
    int n_inner = 4096;                   // Monte Carlo only
    std::shared_ptr<const FdTable> table;  // tensor-product only

    bool has_gradient() const noexcept { return static_cast<bool>(gradient); }
};

/// V = |x|^2 + d nu^2 (T - t), grad V = 2x.
Reference closed_form_heat(const sde::Problem& problem);

/// Inner Monte Carlo means over exact paths (heat, Black-Scholes).
Reference monte_carlo(const sde::Problem& problem, int n_inner);

/// V(x, t) = prod_i V1(x_i, t).
Reference fd_tensor_product(std::shared_ptr<const FdTable> table, int d);

/// The 1-D double-well table of an HJB problem.
FdTable hjb_table(const sde::Problem& problem, const FdGrid& grid = {});

/// Closed form for heat, FD tensor product for HJB, Monte Carlo otherwise.
Reference default_reference(const sde::Problem& problem, int n_inner = 4096, const FdGrid& grid = {});

/// Monte Carlo mean of g(X_T) for paths started at (x, t).
struct PointEstimate {
    double mean = 0.0;
    double standard_error = 0.0;
    long samples = 0;
};

/// Euler-Maruyama paths with step `dt`, or exact paths when `exact` is set.
/// Batches of `batch` paths use the user stream keyed by batch index.
PointEstimate feynman_kac_at(const sde::Problem& problem, std::span<const double> x, double t, long n, double dt,
                             std::uint64_t seed, bool exact = false, int batch = 8192);

struct MseEstimate {
    double mse = 0.0;
    double standard_error = 0.0;
    int samples = 0;
};

/// Mean of (V - u)^2 at N fresh initial points drawn from the evaluation stream.
MseEstimate mse_eval(const sde::Problem& problem, losses::ModelRef u, const Reference& reference, int N,
                     std::uint64_t seed);

/// Mean of |grad u - grad V|^2, or |r - grad V|^2 for a gradient network.
MseEstimate mse_grad_eval(const sde::Problem& problem, losses::ModelRef model, const Reference& reference, int N,
                          std::uint64_t seed);

struct DiagnosticsConfig {
    losses::LossKind kind = losses::LossKind::FK;
    int K = 128;
    int B = 30;
    double dt = 1e-2;
    std::uint64_t seed = 0;
    bool zero_noise = false;
    std::optional<sde::Initials> initials;
    int threads = 1;
};

struct VarianceDiagnostics {
    double loss_mean = 0.0;
    double loss_std = 0.0;
    std::vector<double> grad_std;  // u parameters followed by r parameters
    double grad_std_max = 0.0;
    int K = 0;
    int B = 0;
    std::vector<double> losses;
};

/// Loss and gradient spread over B independent batches at fixed parameters.
VarianceDiagnostics variance_diagnostics(const sde::Problem& problem, losses::ModelRef u, const losses::ModelRef* r,
                                         const DiagnosticsConfig& config);

/// Unbiased sample mean and standard deviation.
std::pair<double, double> mean_std(std::span<const double> xs);

/// Tilted potential and optimal control from a positive solution V of the
/// linearized HJB problem with sigma = Id.
struct HjbSolution {
    std::function<double(std::span<const double> x, double t)> tilted_potential;  // Psi + (-log V)
    std::function<std::vector<double>(std::span<const double> x, double t)> control;  // grad V / V
};

HjbSolution hjb_postprocess(double kappa_tilde, std::function<double(std::span<const double>, double)> value,
                            std::function<void(std::span<const double>, double, std::span<double>)> gradient);

HjbSolution hjb_postprocess(const sde::Problem& problem, const Reference& reference);
HjbSolution hjb_postprocess(const sde::Problem& problem, losses::ModelRef u);

} // namespace kolmo::eval
