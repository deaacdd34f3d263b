#include "kolmo/eval/eval.hpp"

#include "kolmo/error.hpp"
#include "kolmo/nets/model.hpp"
#include "kolmo/rng.hpp"
#include "kolmo/sde/paths.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <thread>
#include <tuple>

namespace kolmo::eval {

namespace {

double interpolate(const FdTable& tab, const std::vector<double>& field, double x, double t) {
    const FdGrid& g = tab.grid;
    const double px = std::clamp((x + g.M) / tab.dx(), 0.0, static_cast<double>(g.n_x - 1));
    const double pt = std::clamp(t / tab.dt(), 0.0, static_cast<double>(g.n_t));
    const int i = std::min(static_cast<int>(px), g.n_x - 2);
    const int n = std::min(static_cast<int>(pt), g.n_t - 1);
    const double fx = px - i;
    const double ft = pt - n;
    auto f = [&](int level, int idx) { return field[static_cast<std::size_t>(level) * g.n_x + idx]; };
    const double lo = (1.0 - fx) * f(n, i) + fx * f(n, i + 1);
    const double hi = (1.0 - fx) * f(n + 1, i) + fx * f(n + 1, i + 1);
    return (1.0 - ft) * lo + ft * hi;
}

} // namespace

double FdTable::value(double x, double t) const { return interpolate(*this, values, x, t); }
double FdTable::derivative(double x, double t) const { return interpolate(*this, derivatives, x, t); }

FdTable fd_reference_1d(const std::function<double(double)>& dpsi, const std::function<double(double)>& g1, double T,
                        const FdGrid& grid) {
    if (!(grid.M > 0.0) || grid.n_x < 3 || grid.n_t < 1 || !(T > 0.0))
        throw ConfigError("invalid finite-difference grid");
    FdTable tab;
    tab.grid = grid;
    tab.T = T;
    const int nx = grid.n_x;
    const double dx = tab.dx();
    const double h = tab.dt();

    std::vector<double> x(static_cast<std::size_t>(nx)), drift(static_cast<std::size_t>(nx));
    double peclet = 0.0;
    for (int i = 0; i < nx; ++i) {
        x[static_cast<std::size_t>(i)] = -grid.M + i * dx;
        drift[static_cast<std::size_t>(i)] = dpsi(x[static_cast<std::size_t>(i)]);
        peclet = std::max(peclet, std::abs(drift[static_cast<std::size_t>(i)]) * dx);
    }
    if (!(peclet <= 2.0))
        throw ConfigError("finite-difference grid too coarse: cell Peclet number " + std::to_string(peclet) + " > 2");

    // Generator coefficients at interior node i: lo V_{i-1} + mid V_i + up V_{i+1}.
    std::vector<double> lo(static_cast<std::size_t>(nx)), up(static_cast<std::size_t>(nx));
    const double diff = 0.5 / (dx * dx);
    const double mid = -2.0 * diff;
    for (int i = 1; i < nx - 1; ++i) {
        const double adv = drift[static_cast<std::size_t>(i)] / (2.0 * dx);
        lo[static_cast<std::size_t>(i)] = diff + adv;
        up[static_cast<std::size_t>(i)] = diff - adv;
    }

    tab.values.assign(static_cast<std::size_t>(grid.n_t + 1) * nx, 0.0);
    double* last = tab.values.data() + static_cast<std::size_t>(grid.n_t) * nx;
    for (int i = 0; i < nx; ++i) last[i] = g1(x[static_cast<std::size_t>(i)]);
    const double left = last[0];
    const double right = last[nx - 1];

    const int m = nx - 2;
    std::vector<double> rhs(static_cast<std::size_t>(m)), cprime(static_cast<std::size_t>(m));
    for (int level = grid.n_t - 1; level >= 0; --level) {
        const double* old = tab.values.data() + static_cast<std::size_t>(level + 1) * nx;
        double* cur = tab.values.data() + static_cast<std::size_t>(level) * nx;
        for (int r = 0; r < m; ++r) {
            const int i = r + 1;
            const double l = lo[static_cast<std::size_t>(i)], u = up[static_cast<std::size_t>(i)];
            rhs[static_cast<std::size_t>(r)] = old[i] + 0.5 * h * (l * old[i - 1] + mid * old[i] + u * old[i + 1]);
        }
        rhs[0] += 0.5 * h * lo[1] * left;
        rhs[static_cast<std::size_t>(m - 1)] += 0.5 * h * up[static_cast<std::size_t>(nx - 2)] * right;
        // Thomas algorithm for (I - h/2 A) v = rhs.
        const double b = 1.0 - 0.5 * h * mid;
        for (int r = 0; r < m; ++r) {
            const int i = r + 1;
            const double a = -0.5 * h * lo[static_cast<std::size_t>(i)];
            const double c = -0.5 * h * up[static_cast<std::size_t>(i)];
            if (r == 0) {
                cprime[0] = c / b;
                rhs[0] /= b;
            } else {
                const double denom = b - a * cprime[static_cast<std::size_t>(r - 1)];
                cprime[static_cast<std::size_t>(r)] = c / denom;
                rhs[static_cast<std::size_t>(r)] =
                    (rhs[static_cast<std::size_t>(r)] - a * rhs[static_cast<std::size_t>(r - 1)]) / denom;
            }
        }
        for (int r = m - 2; r >= 0; --r)
            rhs[static_cast<std::size_t>(r)] -= cprime[static_cast<std::size_t>(r)] * rhs[static_cast<std::size_t>(r + 1)];
        cur[0] = left;
        cur[nx - 1] = right;
        std::copy(rhs.begin(), rhs.end(), cur + 1);
    }

    tab.derivatives.assign(tab.values.size(), 0.0);
    for (int level = 0; level <= grid.n_t; ++level) {
        const double* v = tab.values.data() + static_cast<std::size_t>(level) * nx;
        double* dv = tab.derivatives.data() + static_cast<std::size_t>(level) * nx;
        dv[0] = (v[1] - v[0]) / dx;
        dv[nx - 1] = (v[nx - 1] - v[nx - 2]) / dx;
        for (int i = 1; i < nx - 1; ++i) dv[i] = (v[i + 1] - v[i - 1]) / (2.0 * dx);
    }
    return tab;
}

std::string_view reference_name(ReferenceKind kind) noexcept {
    switch (kind) {
    case ReferenceKind::ClosedForm: return "closed-form";
    case ReferenceKind::MonteCarlo: return "mc-feynman-kac";
    case ReferenceKind::FdTensorProduct: return "fd-tensor-product";
    }
    return "unknown";
}

Reference closed_form_heat(const sde::Problem& problem) {
    if (problem.kind != sde::ProblemKind::Heat) throw ConfigError("closed-form reference needs the heat problem");
    const double trace = problem.d * problem.nu * problem.nu;
    const double T = problem.T;
    Reference r;
    r.kind = ReferenceKind::ClosedForm;
    r.value = [trace, T](std::span<const double> x, double t) {
        double s = 0.0;
        for (double xi : x) s += xi * xi;
        return s + trace * (T - t);
    };
    r.gradient = [](std::span<const double> x, double, std::span<double> g) {
        for (std::size_t i = 0; i < x.size(); ++i) g[i] = 2.0 * x[i];
    };
    return r;
}

namespace {

double inner_mean(const sde::Problem& problem, std::span<const double> x, double t, int n_inner, const RngStream& rng) {
    const std::size_t d = static_cast<std::size_t>(problem.d);
    sde::Initials inner;
    inner.d = problem.d;
    inner.xi.resize(d * static_cast<std::size_t>(n_inner));
    inner.tau.assign(static_cast<std::size_t>(n_inner), t);
    for (int m = 0; m < n_inner; ++m) std::copy(x.begin(), x.end(), inner.xi.begin() + static_cast<std::ptrdiff_t>(m * d));
    const auto paths = sde::exact_paths(problem, inner, rng);
    double s = 0.0;
    for (int m = 0; m < n_inner; ++m) s += problem.terminal(paths.terminal(m).data());
    return s / n_inner;
}

} // namespace

Reference monte_carlo(const sde::Problem& problem, int n_inner) {
    if (!problem.has_exact_paths()) throw ConfigError("Monte Carlo reference needs exact paths");
    if (n_inner < 1) throw ConfigError("inner sample count must be positive");
    Reference r;
    r.kind = ReferenceKind::MonteCarlo;
    r.n_inner = n_inner;
    // Point queries share one inner sample (common random numbers across points).
    r.value = [problem, n_inner](std::span<const double> x, double t) {
        if (x.size() != static_cast<std::size_t>(problem.d)) throw DimensionError("reference dimension mismatch");
        return inner_mean(problem, x, t, n_inner, RngStream(0, Stream::Reference, 0));
    };
    return r;
}

Reference fd_tensor_product(std::shared_ptr<const FdTable> table, int d) {
    Reference r;
    r.kind = ReferenceKind::FdTensorProduct;
    r.table = table;
    r.value = [table, d](std::span<const double> x, double t) {
        if (x.size() != static_cast<std::size_t>(d)) throw DimensionError("reference dimension mismatch");
        double v = 1.0;
        for (double xi : x) v *= table->value(xi, t);
        return v;
    };
    r.gradient = [table, d](std::span<const double> x, double t, std::span<double> g) {
        if (x.size() != static_cast<std::size_t>(d)) throw DimensionError("reference dimension mismatch");
        std::vector<double> v(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) v[i] = table->value(x[i], t);
        for (std::size_t i = 0; i < x.size(); ++i) {
            double p = table->derivative(x[i], t);
            for (std::size_t j = 0; j < x.size(); ++j)
                if (j != i) p *= v[j];
            g[i] = p;
        }
    };
    return r;
}

FdTable hjb_table(const sde::Problem& problem, const FdGrid& grid) {
    if (problem.kind != sde::ProblemKind::HjbDoubleWell) throw ConfigError("hjb_table needs the hjb-doublewell problem");
    const double kt = problem.kappa_tilde;
    const double eta = problem.eta;
    return fd_reference_1d([kt](double x) { return 4.0 * kt * x * (x * x - 1.0); },
                           [eta](double x) { return std::exp(-eta * (x - 1.0) * (x - 1.0)); }, problem.T, grid);
}

Reference default_reference(const sde::Problem& problem, int n_inner, const FdGrid& grid) {
    switch (problem.kind) {
    case sde::ProblemKind::Heat: return closed_form_heat(problem);
    case sde::ProblemKind::HjbDoubleWell:
        return fd_tensor_product(std::make_shared<const FdTable>(hjb_table(problem, grid)), problem.d);
    default: return monte_carlo(problem, n_inner);
    }
}

std::pair<double, double> mean_std(std::span<const double> xs) {
    if (xs.empty()) return {0.0, 0.0};
    // Shifted by the first sample, so constant input gives exactly zero spread.
    const double shift = xs.front();
    double dev = 0.0;
    for (double x : xs) dev += x - shift;
    dev /= static_cast<double>(xs.size());
    const double mean = shift + dev;
    if (xs.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double x : xs) ss += (x - shift - dev) * (x - shift - dev);
    return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

PointEstimate feynman_kac_at(const sde::Problem& problem, std::span<const double> x, double t, long n, double dt,
                             std::uint64_t seed, bool exact, int batch) {
    if (n < 2 || batch < 1) throw ConfigError("Monte Carlo estimate needs at least two paths");
    if (static_cast<int>(x.size()) != problem.d) throw DimensionError("start point dimension does not match the problem");
    double sum = 0.0, sum_sq = 0.0;
    long done = 0;
    for (std::uint64_t b = 0; done < n; ++b) {
        const int K = static_cast<int>(std::min<long>(batch, n - done));
        sde::Initials init;
        init.d = problem.d;
        init.tau.assign(static_cast<std::size_t>(K), t);
        init.xi.reserve(static_cast<std::size_t>(K) * x.size());
        for (int k = 0; k < K; ++k) init.xi.insert(init.xi.end(), x.begin(), x.end());
        const RngStream rng(seed, Stream::User, b);
        std::vector<double> terminal;
        if (exact) {
            const auto paths = sde::exact_paths(problem, init, rng);
            terminal.reserve(static_cast<std::size_t>(K));
            for (int k = 0; k < K; ++k) terminal.push_back(problem.terminal(paths.terminal(k).data()));
        } else {
            sde::EulerStepper stepper(problem, init, dt, rng);
            while (stepper.next()) {
            }
            const auto X = stepper.current();
            for (int k = 0; k < K; ++k) terminal.push_back(problem.terminal(X.data() + static_cast<std::size_t>(k) * x.size()));
        }
        for (double g : terminal) {
            sum += g;
            sum_sq += g * g;
        }
        done += K;
    }
    const double mean = sum / static_cast<double>(n);
    const double var = std::max(0.0, (sum_sq - static_cast<double>(n) * mean * mean) / static_cast<double>(n - 1));
    return {mean, std::sqrt(var / static_cast<double>(n)), n};
}

namespace {

MseEstimate summarize(const std::vector<double>& sq) {
    const auto [mean, sd] = mean_std(sq);
    return {mean, sd / std::sqrt(static_cast<double>(sq.size())), static_cast<int>(sq.size())};
}

std::vector<double> reference_values(const sde::Problem& problem, const Reference& reference,
                                     const sde::Initials& init, std::uint64_t seed) {
    const int N = init.size();
    std::vector<double> v(static_cast<std::size_t>(N));
    if (reference.kind != ReferenceKind::MonteCarlo) {
        for (int n = 0; n < N; ++n) v[static_cast<std::size_t>(n)] = reference.value(init.point(n), init.tau[static_cast<std::size_t>(n)]);
        return v;
    }
    for (int n = 0; n < N; ++n)
        v[static_cast<std::size_t>(n)] = inner_mean(problem, init.point(n), init.tau[static_cast<std::size_t>(n)],
                                                    reference.n_inner,
                                                    RngStream(seed, Stream::Reference, static_cast<std::uint64_t>(n)));
    return v;
}

} // namespace

MseEstimate mse_eval(const sde::Problem& problem, losses::ModelRef u, const Reference& reference, int N,
                     std::uint64_t seed) {
    if (N < 1) throw ConfigError("evaluation sample count must be positive");
    if (u.spec == nullptr || u.spec->output_dim() != 1) throw DimensionError("mse_eval needs a scalar model");
    const auto init = sde::sample_initial(problem, N, RngStream(seed, Stream::Eval, 0));
    const auto uv = nets::model_eval(*u.spec, u.theta, init.xi, init.tau);
    const auto ref = reference_values(problem, reference, init, seed);
    std::vector<double> sq(static_cast<std::size_t>(N));
    for (std::size_t n = 0; n < sq.size(); ++n) sq[n] = (ref[n] - uv[n]) * (ref[n] - uv[n]);
    return summarize(sq);
}

MseEstimate mse_grad_eval(const sde::Problem& problem, losses::ModelRef model, const Reference& reference, int N,
                          std::uint64_t seed) {
    if (N < 1) throw ConfigError("evaluation sample count must be positive");
    if (!reference.has_gradient()) throw ConfigError("reference has no gradient");
    if (model.spec == nullptr) throw ConfigError("missing model");
    const auto init = sde::sample_initial(problem, N, RngStream(seed, Stream::Eval, 0));
    const std::size_t d = static_cast<std::size_t>(problem.d);
    std::vector<double> grads;
    if (model.spec->kind == nets::ModelKind::GradientNetwork)
        grads = nets::model_eval(*model.spec, model.theta, init.xi, init.tau);
    else
        grads = nets::grad_input(*model.spec, model.theta, init.xi, init.tau).gradients;
    std::vector<double> sq(static_cast<std::size_t>(N)), ref(d);
    for (int n = 0; n < N; ++n) {
        reference.gradient(init.point(n), init.tau[static_cast<std::size_t>(n)], ref);
        double s = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double diff = grads[static_cast<std::size_t>(n) * d + i] - ref[i];
            s += diff * diff;
        }
        sq[static_cast<std::size_t>(n)] = s;
    }
    return summarize(sq);
}

VarianceDiagnostics variance_diagnostics(const sde::Problem& problem, losses::ModelRef u, const losses::ModelRef* r,
                                         const DiagnosticsConfig& config) {
    if (config.B < 2) throw ConfigError("variance diagnostics need at least two batches");
    const int B = config.B;
    std::vector<double> loss(static_cast<std::size_t>(B));
    std::vector<std::vector<double>> grads(static_cast<std::size_t>(B));

    auto run = [&](int b) {
        losses::BatchSource src;
        src.dt = config.dt;
        src.K = config.K;
        src.rng = RngStream(config.seed, Stream::Diagnostics, static_cast<std::uint64_t>(b));
        src.zero_noise = config.zero_noise;
        src.initials = config.initials;
        auto rep = losses::compute_gradient(config.kind, problem, u, r, src);
        loss[static_cast<std::size_t>(b)] = rep.loss;
        auto& g = grads[static_cast<std::size_t>(b)];
        g = std::move(rep.gradient);
        g.insert(g.end(), rep.gradient_r.begin(), rep.gradient_r.end());
    };

    const int threads = std::clamp(config.threads, 1, B);
    if (threads == 1) {
        for (int b = 0; b < B; ++b) run(b);
    } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
        for (int w = 0; w < threads; ++w)
            pool.emplace_back([&, w] {
                try {
                    for (int b = w; b < B; b += threads) run(b);
                } catch (...) {
                    errors[static_cast<std::size_t>(w)] = std::current_exception();
                }
            });
        for (auto& t : pool) t.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }

    VarianceDiagnostics out;
    out.K = config.K;
    out.B = B;
    std::tie(out.loss_mean, out.loss_std) = mean_std(loss);
    const std::size_t P = grads[0].size();
    out.grad_std.resize(P);
    std::vector<double> column(static_cast<std::size_t>(B));
    for (std::size_t i = 0; i < P; ++i) {
        for (int b = 0; b < B; ++b) column[static_cast<std::size_t>(b)] = grads[static_cast<std::size_t>(b)][i];
        out.grad_std[i] = mean_std(column).second;
    }
    out.grad_std_max = P ? *std::max_element(out.grad_std.begin(), out.grad_std.end()) : 0.0;
    out.losses = std::move(loss);
    return out;
}

HjbSolution hjb_postprocess(double kappa_tilde, std::function<double(std::span<const double>, double)> value,
                            std::function<void(std::span<const double>, double, std::span<double>)> gradient) {
    HjbSolution s;
    s.tilted_potential = [kappa_tilde, value](std::span<const double> x, double t) {
        const double v = value(x, t);
        if (!(v > 0.0)) throw DomainError("solution is not positive; -log V is undefined");
        return sde::double_well(kappa_tilde, x) - std::log(v);
    };
    s.control = [value, gradient](std::span<const double> x, double t) {
        const double v = value(x, t);
        if (!(v > 0.0)) throw DomainError("solution is not positive; -log V is undefined");
        std::vector<double> g(x.size());
        gradient(x, t, g);
        for (double& gi : g) gi /= v;
        return g;
    };
    return s;
}

HjbSolution hjb_postprocess(const sde::Problem& problem, const Reference& reference) {
    if (!reference.value || !reference.gradient) throw ConfigError("reference needs value and gradient");
    return hjb_postprocess(problem.kappa_tilde, reference.value, reference.gradient);
}

HjbSolution hjb_postprocess(const sde::Problem& problem, losses::ModelRef u) {
    const nets::ModelSpec spec = *u.spec;
    const std::vector<double> theta(u.theta.begin(), u.theta.end());
    return hjb_postprocess(
        problem.kappa_tilde,
        [spec, theta](std::span<const double> x, double t) { return nets::model_eval(spec, theta, x, t); },
        [spec, theta](std::span<const double> x, double t, std::span<double> g) {
            const auto dv = nets::grad_input(spec, theta, x, t);
            std::copy(dv.tangents.begin(), dv.tangents.end(), g.begin());
        });
}

} // namespace kolmo::eval
