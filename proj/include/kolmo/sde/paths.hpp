#pragma once

#include "kolmo/rng.hpp"
#include "kolmo/sde/problem.hpp"

#include <optional>
#include <span>
#include <vector>

namespace kolmo::sde {

/// Initial points of a batch: xi is d x K column-major, tau has K entries.
struct Initials {
    int d = 0;
    std::vector<double> xi;
    std::vector<double> tau;

    int size() const noexcept { return static_cast<int>(tau.size()); }
    std::span<const double> point(int k) const {
        return std::span<const double>(xi).subspan(static_cast<std::size_t>(k) * d, static_cast<std::size_t>(d));
    }
};

/// K i.i.d. draws from the problem's initial sampler, keyed by `rng`.
Initials sample_initial(const Problem& problem, int K, const RngStream& rng);

/// Number of Euler steps from tau to T: ceil((T - tau) / dt), at least one
/// for tau < T, and zero when tau >= T.
int step_count(double T, double tau, double dt);

/// Grid time t_j = tau + j dt for j < J and t_J = T.
double grid_time(double T, double tau, double dt, int J, int j);

/// Length of step j: dt for interior steps, T - t_{J-1} for the last one.
double step_length(double T, double tau, double dt, int J, int j);

/// Streaming Euler-Maruyama integrator over a batch.
///
/// Each call to `next` exposes the samples that still have a step j to
/// take, with their pre-step states, and then advances them. The
/// arithmetic is shared by `simulate`, so streamed and stored batches agree
/// bitwise.
class EulerStepper {
public:
    static constexpr double kDivergenceBound = 1e8;

    EulerStepper(const Problem& problem, const Initials& initials, double dt, const RngStream& rng,
                 bool zero_noise = false);

    int max_steps() const noexcept { return max_steps_; }
    int steps(int k) const { return J_[static_cast<std::size_t>(k)]; }

    /// Advance every active sample by one step; false once all reached T.
    bool next();

    int index() const noexcept { return j_; }
    int active_count() const noexcept { return static_cast<int>(active_.size()); }
    std::span<const int> active() const noexcept { return active_; }
    /// Pre-step states X_j (d x A), times t_j, step lengths, increments
    /// dW_j and diffused increments sigma(X_j, t_j) dW_j (both d x A).
    std::span<const double> states() const noexcept { return x_; }
    std::span<const double> times() const noexcept { return t_; }
    std::span<const double> lengths() const noexcept { return h_; }
    std::span<const double> increments() const noexcept { return dw_; }
    std::span<const double> diffused() const noexcept { return sdw_; }

    /// Current states of all samples (d x K); terminal states once `next` returns false.
    std::span<const double> current() const noexcept { return X_; }

private:
    const Problem* problem_;
    double dt_;
    RngStream rng_;
    bool zero_noise_;
    int d_;
    int K_;
    int max_steps_ = 0;
    int j_ = -1;
    std::vector<int> J_;
    std::vector<double> tau_;
    std::vector<double> X_;
    std::vector<int> active_;
    std::vector<double> x_, t_, h_, dw_, sdw_, drift_;
};

/// K discretized trajectories with their grids and increments.
struct PathBatch {
    int d = 0;
    double dt = 0.0;
    double T = 0.0;
    RngStream rng;
    Initials initials;
    std::vector<int> steps;            // J per sample
    std::vector<std::size_t> offsets;  // prefix sums of J
    std::vector<double> times;         // (J+1) per sample
    std::vector<double> states;        // d x (J+1) per sample
    std::vector<double> increments;    // d x J per sample
    std::vector<double> diffused;      // sigma(X_j, t_j) dW_j, d x J per sample

    int size() const noexcept { return initials.size(); }
    int max_steps() const;
    std::span<const double> state(int k, int j) const;
    std::span<const double> increment(int k, int j) const;
    std::span<const double> diffused_increment(int k, int j) const;
    double time(int k, int j) const;
    std::span<const double> terminal(int k) const { return state(k, steps[static_cast<std::size_t>(k)]); }
};

/// Euler-Maruyama paths; ζ ≡ 0 when `zero_noise` is set.
PathBatch simulate(const Problem& problem, const Initials& initials, double dt, const RngStream& rng,
                   bool zero_noise = false);

/// Exact solution paths for heat and Black-Scholes, driven by the same
/// increments as `simulate` on the same grid. Without `dt` each sample is
/// a single step from tau to T.
PathBatch exact_paths(const Problem& problem, const Initials& initials, const RngStream& rng,
                      std::optional<double> dt = std::nullopt);

} // namespace kolmo::sde
