#pragma once

#include <Eigen/Core>

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace kolmo::sde {

enum class ProblemKind { Heat, BlackScholes, HjbDoubleWell, Custom };

std::string_view problem_name(ProblemKind kind) noexcept;

/// Product of intervals for xi and an interval for tau; lo == hi gives a point mass.
struct InitialSampler {
    std::vector<double> lo;
    std::vector<double> hi;
    double tau_lo = 0.0;
    double tau_hi = 1.0;
};

/// A linear Kolmogorov problem (d_t + L) V = 0, V(., T) = g.
///
/// Coefficient callbacks work on one state vector of length d.
struct Problem {
    ProblemKind kind = ProblemKind::Custom;
    int d = 1;
    double T = 1.0;

    /// out = b(x, t)
    std::function<void(const double* x, double t, double* out)> drift;
    /// out = sigma(x, t) v
    std::function<void(const double* x, double t, const double* v, double* out)> diffuse;
    std::function<double(const double* x)> terminal;
    InitialSampler sampler;

    // Coefficients of the built-in families.
    double nu = 0.0;
    double bbar = 0.0;
    double kappa = 0.0;
    std::vector<double> beta;
    Eigen::MatrixXd Q;
    Eigen::MatrixXd sigma_bar;  // lower Cholesky factor of Q
    double kappa_tilde = 0.0;
    double eta = 0.0;

    std::string name() const { return std::string(problem_name(kind)); }
    bool has_exact_paths() const noexcept {
        return kind == ProblemKind::Heat || kind == ProblemKind::BlackScholes;
    }
};

struct ProblemOverrides {
    std::optional<int> d;
    std::optional<double> T;
    std::optional<double> nu;
    std::optional<double> bbar;
    std::optional<double> kappa;
    std::optional<double> rho;  // off-diagonal entry of Q
    std::optional<double> kappa_tilde;
    std::optional<double> eta;
    std::optional<double> xi_lo;
    std::optional<double> xi_hi;
    std::optional<double> tau_lo;
    std::optional<double> tau_hi;

    bool operator==(const ProblemOverrides&) const = default;
};

/// `heat`, `black-scholes` or `hjb-doublewell` with the defaults of the
/// benchmark suite, adjusted by `overrides`.
Problem make_problem(std::string_view name, const ProblemOverrides& overrides = {});

/// Double-well potential Psi(x) = kappa_tilde sum (x_i^2 - 1)^2.
double double_well(double kappa_tilde, std::span<const double> x);

} // namespace kolmo::sde
