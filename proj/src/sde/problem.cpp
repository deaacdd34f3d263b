#include "kolmo/sde/problem.hpp"

#include "kolmo/error.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>

namespace kolmo::sde {

std::string_view problem_name(ProblemKind kind) noexcept {
    switch (kind) {
    case ProblemKind::Heat: return "heat";
    case ProblemKind::BlackScholes: return "black-scholes";
    case ProblemKind::HjbDoubleWell: return "hjb-doublewell";
    case ProblemKind::Custom: return "custom";
    }
    return "unknown";
}

double double_well(double kappa_tilde, std::span<const double> x) {
    double s = 0.0;
    for (double xi : x) s += (xi * xi - 1.0) * (xi * xi - 1.0);
    return kappa_tilde * s;
}

namespace {

InitialSampler box(int d, double lo, double hi, double tau_lo, double tau_hi) {
    if (hi < lo || tau_hi < tau_lo) throw ConfigError("initial sampler bounds are reversed");
    return {std::vector<double>(static_cast<std::size_t>(d), lo), std::vector<double>(static_cast<std::size_t>(d), hi),
            tau_lo, tau_hi};
}

Problem heat(const ProblemOverrides& o) {
    Problem p;
    p.kind = ProblemKind::Heat;
    p.d = o.d.value_or(50);
    p.T = o.T.value_or(1.0);
    p.nu = o.nu.value_or(0.5);
    const int d = p.d;
    const double nu = p.nu;
    p.drift = [d](const double*, double, double* out) { std::fill_n(out, d, 0.0); };
    p.diffuse = [d, nu](const double*, double, const double* v, double* out) {
        for (int i = 0; i < d; ++i) out[i] = nu * v[i];
    };
    p.terminal = [d](const double* x) {
        double s = 0.0;
        for (int i = 0; i < d; ++i) s += x[i] * x[i];
        return s;
    };
    p.sampler = box(d, o.xi_lo.value_or(-0.5), o.xi_hi.value_or(0.5), o.tau_lo.value_or(0.0),
                    o.tau_hi.value_or(p.T));
    return p;
}

Problem black_scholes(const ProblemOverrides& o) {
    Problem p;
    p.kind = ProblemKind::BlackScholes;
    p.d = o.d.value_or(50);
    p.T = o.T.value_or(1.0);
    p.bbar = o.bbar.value_or(-0.05);
    p.kappa = o.kappa.value_or(5.5);
    const int d = p.d;
    p.beta.resize(static_cast<std::size_t>(d));
    for (int i = 1; i <= d; ++i) p.beta[static_cast<std::size_t>(i - 1)] = 0.1 + i / (2.0 * d);
    const double rho = o.rho.value_or(0.5);
    p.Q = Eigen::MatrixXd::Constant(d, d, rho);
    p.Q.diagonal().setOnes();
    Eigen::LLT<Eigen::MatrixXd> llt(p.Q);
    if (llt.info() != Eigen::Success) throw ConfigError("black-scholes: correlation matrix Q is not positive definite");
    p.sigma_bar = llt.matrixL();

    const double bbar = p.bbar;
    const double kappa = p.kappa;
    const std::vector<double> beta = p.beta;
    const Eigen::MatrixXd sb = p.sigma_bar;
    p.drift = [d, bbar](const double* x, double, double* out) {
        for (int i = 0; i < d; ++i) out[i] = bbar * x[i];
    };
    p.diffuse = [d, beta, sb](const double* x, double, const double* v, double* out) {
        // Lower-triangular product, then the diagonal scaling.
        for (int i = 0; i < d; ++i) {
            double s = 0.0;
            for (int j = 0; j <= i; ++j) s += sb(i, j) * v[j];
            out[i] = beta[static_cast<std::size_t>(i)] * x[i] * s;
        }
    };
    p.terminal = [d, kappa](const double* x) { return std::max(0.0, kappa - *std::min_element(x, x + d)); };
    p.sampler = box(d, o.xi_lo.value_or(4.5), o.xi_hi.value_or(5.5), o.tau_lo.value_or(0.0),
                    o.tau_hi.value_or(p.T));
    return p;
}

Problem hjb(const ProblemOverrides& o) {
    Problem p;
    p.kind = ProblemKind::HjbDoubleWell;
    p.d = o.d.value_or(10);
    p.T = o.T.value_or(1.0);
    p.kappa_tilde = o.kappa_tilde.value_or(0.1);
    p.eta = o.eta.value_or(0.04);
    const int d = p.d;
    const double kt = p.kappa_tilde;
    const double eta = p.eta;
    p.drift = [d, kt](const double* x, double, double* out) {
        for (int i = 0; i < d; ++i) out[i] = -4.0 * kt * x[i] * (x[i] * x[i] - 1.0);
    };
    p.diffuse = [d](const double*, double, const double* v, double* out) { std::copy_n(v, d, out); };
    p.terminal = [d, eta](const double* x) {
        double s = 0.0;
        for (int i = 0; i < d; ++i) s += (x[i] - 1.0) * (x[i] - 1.0);
        return std::exp(-eta * s);
    };
    p.sampler = box(d, o.xi_lo.value_or(-2.0), o.xi_hi.value_or(2.0), o.tau_lo.value_or(0.0),
                    o.tau_hi.value_or(p.T));
    return p;
}

} // namespace

Problem make_problem(std::string_view name, const ProblemOverrides& overrides) {
    if (overrides.d && *overrides.d < 1) throw ConfigError("problem dimension must be positive");
    if (overrides.T && !(*overrides.T > 0.0)) throw ConfigError("horizon T must be positive");
    Problem p;
    if (name == "heat") p = heat(overrides);
    else if (name == "black-scholes") p = black_scholes(overrides);
    else if (name == "hjb-doublewell") p = hjb(overrides);
    else throw ConfigError("unknown problem '" + std::string(name) + "'");
    if (p.sampler.tau_lo < 0.0 || p.sampler.tau_hi > p.T) throw ConfigError("tau range must lie in [0, T]");
    return p;
}

} // namespace kolmo::sde
