#include "kolmo/sde/paths.hpp"

#include "kolmo/error.hpp"

#include <algorithm>
#include <cmath>

namespace kolmo::sde {

Initials sample_initial(const Problem& problem, int K, const RngStream& rng) {
    if (K < 1) throw ConfigError("batch size must be at least 1");
    const auto& s = problem.sampler;
    const std::size_t d = static_cast<std::size_t>(problem.d);
    if (s.lo.size() != d || s.hi.size() != d) throw DimensionError("initial sampler has wrong dimension");
    Initials init;
    init.d = problem.d;
    init.xi.resize(d * static_cast<std::size_t>(K));
    init.tau.resize(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
        const auto kk = static_cast<std::uint64_t>(k);
        for (std::size_t i = 0; i < d; ++i) {
            const double u = rng.uniform(Purpose::InitialState, kk, 0, i);
            init.xi[static_cast<std::size_t>(k) * d + i] = s.lo[i] + (s.hi[i] - s.lo[i]) * u;
        }
        const double u = rng.uniform(Purpose::InitialTime, kk, 0, 0);
        init.tau[static_cast<std::size_t>(k)] = s.tau_lo + (s.tau_hi - s.tau_lo) * u;
    }
    return init;
}

int step_count(double T, double tau, double dt) {
    if (!(dt > 0.0)) throw ConfigError("step size must be positive");
    if (!(tau < T)) return 0;
    auto J = static_cast<long long>(std::ceil((T - tau) / dt));
    if (J < 1) J = 1;
    while (J > 1 && tau + static_cast<double>(J - 1) * dt >= T) --J;
    if (J > (1LL << 30)) throw ConfigError("step size too small for the horizon");
    return static_cast<int>(J);
}

double grid_time(double T, double tau, double dt, int J, int j) {
    return j >= J ? T : tau + static_cast<double>(j) * dt;
}

double step_length(double T, double tau, double dt, int J, int j) {
    return j + 1 < J ? dt : T - grid_time(T, tau, dt, J, j);
}

EulerStepper::EulerStepper(const Problem& problem, const Initials& initials, double dt, const RngStream& rng,
                           bool zero_noise)
    : problem_(&problem), dt_(dt), rng_(rng), zero_noise_(zero_noise), d_(problem.d), K_(initials.size()) {
    if (!(dt > 0.0) || dt > problem.T) throw ConfigError("step size must lie in (0, T]");
    if (initials.d != d_) throw DimensionError("initial states have wrong dimension");
    tau_ = initials.tau;
    X_ = initials.xi;
    J_.resize(static_cast<std::size_t>(K_));
    for (int k = 0; k < K_; ++k) {
        J_[static_cast<std::size_t>(k)] = step_count(problem.T, tau_[static_cast<std::size_t>(k)], dt);
        max_steps_ = std::max(max_steps_, J_[static_cast<std::size_t>(k)]);
    }
    drift_.resize(static_cast<std::size_t>(d_));
}

bool EulerStepper::next() {
    ++j_;
    if (j_ >= max_steps_) {
        active_.clear();
        return false;
    }
    active_.clear();
    for (int k = 0; k < K_; ++k)
        if (J_[static_cast<std::size_t>(k)] > j_) active_.push_back(k);
    const std::size_t A = active_.size();
    const std::size_t d = static_cast<std::size_t>(d_);
    x_.resize(d * A);
    t_.resize(A);
    h_.resize(A);
    dw_.resize(d * A);
    sdw_.resize(d * A);
    const double T = problem_->T;
    for (std::size_t a = 0; a < A; ++a) {
        const int k = active_[a];
        const std::size_t ku = static_cast<std::size_t>(k);
        const int J = J_[ku];
        const double tau = tau_[ku];
        const double tj = grid_time(T, tau, dt_, J, j_);
        const double h = step_length(T, tau, dt_, J, j_);
        t_[a] = tj;
        h_[a] = h;
        double* xk = X_.data() + ku * d;
        double* xa = x_.data() + a * d;
        double* dw = dw_.data() + a * d;
        double* sdw = sdw_.data() + a * d;
        std::copy_n(xk, d, xa);
        if (zero_noise_) {
            std::fill_n(dw, d, 0.0);
        } else {
            rng_.normals(Purpose::Increment, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(j_),
                         std::span<double>(dw, d));
            const double sq = std::sqrt(h);
            for (std::size_t i = 0; i < d; ++i) dw[i] *= sq;
        }
        problem_->diffuse(xa, tj, dw, sdw);
        problem_->drift(xa, tj, drift_.data());
        for (std::size_t i = 0; i < d; ++i) {
            xk[i] = xa[i] + drift_[i] * h + sdw[i];
            if (!(std::abs(xk[i]) <= kDivergenceBound))
                throw SimulationDiverged(ku, static_cast<std::size_t>(j_));
        }
    }
    return true;
}

int PathBatch::max_steps() const {
    return steps.empty() ? 0 : *std::max_element(steps.begin(), steps.end());
}

std::span<const double> PathBatch::state(int k, int j) const {
    const std::size_t ku = static_cast<std::size_t>(k);
    const std::size_t base = (offsets[ku] + ku + static_cast<std::size_t>(j)) * static_cast<std::size_t>(d);
    return std::span<const double>(states).subspan(base, static_cast<std::size_t>(d));
}

std::span<const double> PathBatch::increment(int k, int j) const {
    const std::size_t base = (offsets[static_cast<std::size_t>(k)] + static_cast<std::size_t>(j)) * d;
    return std::span<const double>(increments).subspan(base, static_cast<std::size_t>(d));
}

std::span<const double> PathBatch::diffused_increment(int k, int j) const {
    const std::size_t base = (offsets[static_cast<std::size_t>(k)] + static_cast<std::size_t>(j)) * d;
    return std::span<const double>(diffused).subspan(base, static_cast<std::size_t>(d));
}

double PathBatch::time(int k, int j) const {
    const std::size_t ku = static_cast<std::size_t>(k);
    return times[offsets[ku] + ku + static_cast<std::size_t>(j)];
}

namespace {

PathBatch allocate(const Problem& problem, const Initials& initials, double dt, const RngStream& rng,
                   const std::vector<int>& steps) {
    PathBatch b;
    b.d = problem.d;
    b.dt = dt;
    b.T = problem.T;
    b.rng = rng;
    b.initials = initials;
    b.steps = steps;
    b.offsets.resize(steps.size() + 1, 0);
    for (std::size_t k = 0; k < steps.size(); ++k) b.offsets[k + 1] = b.offsets[k] + static_cast<std::size_t>(steps[k]);
    const std::size_t total = b.offsets.back();
    const std::size_t d = static_cast<std::size_t>(b.d);
    b.times.resize(total + steps.size());
    b.states.resize((total + steps.size()) * d);
    b.increments.resize(total * d);
    b.diffused.resize(total * d);
    for (std::size_t k = 0; k < steps.size(); ++k) {
        const std::size_t base = b.offsets[k] + k;
        std::copy_n(initials.xi.begin() + static_cast<std::ptrdiff_t>(k * d), d,
                    b.states.begin() + static_cast<std::ptrdiff_t>(base * d));
        b.times[base] = initials.tau[k];
    }
    return b;
}

} // namespace

PathBatch simulate(const Problem& problem, const Initials& initials, double dt, const RngStream& rng,
                   bool zero_noise) {
    EulerStepper stepper(problem, initials, dt, rng, zero_noise);
    std::vector<int> steps(static_cast<std::size_t>(initials.size()));
    for (int k = 0; k < initials.size(); ++k) steps[static_cast<std::size_t>(k)] = stepper.steps(k);
    PathBatch b = allocate(problem, initials, dt, rng, steps);
    const std::size_t d = static_cast<std::size_t>(b.d);
    while (stepper.next()) {
        const std::size_t j = static_cast<std::size_t>(stepper.index());
        const auto active = stepper.active();
        const auto X = stepper.current();
        for (std::size_t a = 0; a < active.size(); ++a) {
            const std::size_t k = static_cast<std::size_t>(active[a]);
            const std::size_t inc = b.offsets[k] + j;
            const std::size_t st = b.offsets[k] + k + j + 1;
            std::copy_n(stepper.increments().begin() + static_cast<std::ptrdiff_t>(a * d), d,
                        b.increments.begin() + static_cast<std::ptrdiff_t>(inc * d));
            std::copy_n(stepper.diffused().begin() + static_cast<std::ptrdiff_t>(a * d), d,
                        b.diffused.begin() + static_cast<std::ptrdiff_t>(inc * d));
            std::copy_n(X.begin() + static_cast<std::ptrdiff_t>(k * d), d,
                        b.states.begin() + static_cast<std::ptrdiff_t>(st * d));
            b.times[st] = grid_time(problem.T, initials.tau[k], dt, steps[k], static_cast<int>(j) + 1);
        }
    }
    return b;
}

PathBatch exact_paths(const Problem& problem, const Initials& initials, const RngStream& rng,
                      std::optional<double> dt) {
    if (!problem.has_exact_paths()) throw ConfigError("exact paths are unavailable for problem " + problem.name());
    if (dt && (!(*dt > 0.0) || *dt > problem.T)) throw ConfigError("step size must lie in (0, T]");
    if (initials.d != problem.d) throw DimensionError("initial states have wrong dimension");
    const int K = initials.size();
    const double T = problem.T;
    std::vector<int> steps(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
        const double tau = initials.tau[static_cast<std::size_t>(k)];
        steps[static_cast<std::size_t>(k)] = dt ? step_count(T, tau, *dt) : (tau < T ? 1 : 0);
    }
    PathBatch b = allocate(problem, initials, dt.value_or(T), rng, steps);
    const std::size_t d = static_cast<std::size_t>(problem.d);
    std::vector<double> W(d), drift_rate(d);
    if (problem.kind == ProblemKind::BlackScholes)
        for (std::size_t i = 0; i < d; ++i) {
            const double beta = problem.beta[i];
            drift_rate[i] = problem.bbar - 0.5 * beta * beta * problem.Q(static_cast<Eigen::Index>(i),
                                                                          static_cast<Eigen::Index>(i));
        }
    for (int k = 0; k < K; ++k) {
        const std::size_t ku = static_cast<std::size_t>(k);
        const int J = steps[ku];
        const double tau = initials.tau[ku];
        const double* xi = initials.xi.data() + ku * d;
        std::fill(W.begin(), W.end(), 0.0);
        for (int j = 0; j < J; ++j) {
            const double h = dt ? step_length(T, tau, *dt, J, j) : T - tau;
            const double tj = dt ? grid_time(T, tau, *dt, J, j) : tau;
            const double s = dt ? grid_time(T, tau, *dt, J, j + 1) : T;
            const std::size_t inc = b.offsets[ku] + static_cast<std::size_t>(j);
            double* dw = b.increments.data() + inc * d;
            rng.normals(Purpose::Increment, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(j),
                        std::span<double>(dw, d));
            const double sq = std::sqrt(h);
            for (std::size_t i = 0; i < d; ++i) {
                dw[i] *= sq;
                W[i] += dw[i];
            }
            const std::size_t prev = b.offsets[ku] + ku + static_cast<std::size_t>(j);
            problem.diffuse(b.states.data() + prev * d, tj, dw, b.diffused.data() + inc * d);
            double* x = b.states.data() + (prev + 1) * d;
            if (problem.kind == ProblemKind::Heat) {
                for (std::size_t i = 0; i < d; ++i) x[i] = xi[i] + problem.nu * W[i];
            } else {
                for (std::size_t i = 0; i < d; ++i) {
                    double proj = 0.0;
                    for (std::size_t m = 0; m <= i; ++m)
                        proj += problem.sigma_bar(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(m)) * W[m];
                    x[i] = xi[i] * std::exp(drift_rate[i] * (s - tau) + problem.beta[i] * proj);
                }
            }
            b.times[prev + 1] = s;
        }
    }
    return b;
}

} // namespace kolmo::sde
