#include "kolmo/losses/losses.hpp"

#include "kolmo/error.hpp"

#include <algorithm>
#include <cstring>
#include <string>

namespace kolmo::losses {

using ad::Tape;
using ad::Var;
using sde::PathBatch;
using sde::Problem;

std::string_view loss_name(LossKind kind) noexcept {
    switch (kind) {
    case LossKind::FK: return "FK";
    case LossKind::BSDE: return "BSDE";
    case LossKind::BSDEDetach: return "BSDE-detach";
    case LossKind::BSDEGrad: return "BSDE-grad";
    case LossKind::BSDEEff: return "BSDE-eff";
    case LossKind::BSDEGradEff: return "BSDE-grad-eff";
    }
    return "unknown";
}

LossKind parse_loss(std::string_view name) {
    for (LossKind k : {LossKind::FK, LossKind::BSDE, LossKind::BSDEDetach, LossKind::BSDEGrad, LossKind::BSDEEff,
                       LossKind::BSDEGradEff})
        if (loss_name(k) == name) return k;
    throw ConfigError("unknown loss kind '" + std::string(name) + "'");
}

bool uses_gradient_network(LossKind kind) noexcept {
    return kind == LossKind::BSDEGrad || kind == LossKind::BSDEGradEff;
}

namespace {

void check_u(ModelRef u, int d) {
    if (u.spec == nullptr) throw ConfigError("missing model");
    if (u.spec->output_dim() != 1) throw DimensionError("u must be a scalar model");
    if (u.spec->d != d) throw DimensionError("model dimension does not match the problem");
}

void check_r(ModelRef r, int d) {
    if (r.spec == nullptr) throw ConfigError("this loss needs a gradient network r");
    if (r.spec->output_dim() != d || r.spec->d != d) throw DimensionError("r must map R^(d+1) to R^d");
}

/// Columns of a stored batch that take step j, with their X_j, t_j and sigma dW_j.
struct StepColumns {
    std::vector<int> cols;
    std::vector<double> x;
    std::vector<double> t;
    std::vector<double> w;
};

void gather(const PathBatch& b, int j, StepColumns& out) {
    out.cols.clear();
    out.x.clear();
    out.t.clear();
    out.w.clear();
    for (int k = 0; k < b.size(); ++k) {
        if (b.steps[static_cast<std::size_t>(k)] <= j) continue;
        out.cols.push_back(k);
        const auto x = b.state(k, j);
        const auto w = b.diffused_increment(k, j);
        out.x.insert(out.x.end(), x.begin(), x.end());
        out.w.insert(out.w.end(), w.begin(), w.end());
        out.t.push_back(b.time(k, j));
    }
}

std::vector<double> terminal_values(const Problem& problem, const PathBatch& b) {
    std::vector<double> g(static_cast<std::size_t>(b.size()));
    for (int k = 0; k < b.size(); ++k) g[static_cast<std::size_t>(k)] = problem.terminal(b.terminal(k).data());
    return g;
}

std::vector<double> terminal_values(const Problem& problem, std::span<const double> X, int K) {
    std::vector<double> g(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k)
        g[static_cast<std::size_t>(k)] = problem.terminal(X.data() + static_cast<std::size_t>(k) * problem.d);
    return g;
}

/// Per-step integrand values: (grad_x u . w) for u, or (r . w) for a gradient network.
Var record_integrand(Tape& tape, const nets::ModelSpec& spec, const nets::BoundParams& p, int d, int A,
                     std::span<const double> x, std::span<const double> t, std::span<const double> w,
                     bool gradient_network) {
    if (gradient_network) {
        const Var xv = tape.input(d, A, x);
        const Var tv = tape.input(1, A, t);
        const Var wv = tape.input(d, A, w);
        return tape.inner(nets::record(spec, tape, p, xv, tv), wv);
    }
    const Var xv = tape.input(d, A, x, w);
    const Var tv = tape.input(1, A, t);
    return tape.tangent_of(nets::record(spec, tape, p, xv, tv), 0);
}

/// Stochastic integrals of all samples of a stored batch, accumulated with j ascending.
std::vector<double> integrals(ModelRef m, const PathBatch& b, bool gradient_network, ad::TapeStats* stats) {
    std::vector<double> S(static_cast<std::size_t>(b.size()), 0.0);
    Tape tape(gradient_network ? 0 : 1);
    StepColumns sc;
    for (int j = 0; j < b.max_steps(); ++j) {
        gather(b, j, sc);
        tape.reset();
        const auto p = nets::bind(tape, *m.spec, m.theta);
        const Var s = record_integrand(tape, *m.spec, p, b.d, static_cast<int>(sc.cols.size()), sc.x, sc.t, sc.w,
                                       gradient_network);
        const auto v = tape.value(s);
        for (std::size_t a = 0; a < sc.cols.size(); ++a) S[static_cast<std::size_t>(sc.cols[a])] += v[a];
    }
    if (stats) stats->merge(tape.stats());
    return S;
}

/// Records e = g - u(xi, tau) - S and the mean squared error on `tape`.
struct Residual {
    Var u0;
    Var e;
    Var loss;
};

Residual record_residual(Tape& tape, const nets::ModelSpec& spec, const nets::BoundParams& p,
                         const sde::Initials& init, std::span<const double> g, Var S) {
    const int K = init.size();
    const Var x0 = tape.input(init.d, K, init.xi);
    const Var t0 = tape.input(1, K, init.tau);
    const Var u0 = nets::record(spec, tape, p, x0, t0);
    const Var gv = tape.input(1, K, g);
    Var e = tape.add(gv, u0, 1.0, -1.0);
    if (S.valid()) e = tape.add(e, S, 1.0, -1.0);
    return {u0, e, tape.mean_cols(tape.square(e))};
}

SampleTerms terms_from(const Tape& tape, const Residual& r, std::span<const double> g,
                       std::span<const double> S) {
    SampleTerms t;
    const auto u0 = tape.value(r.u0);
    const auto e = tape.value(r.e);
    t.delta.resize(g.size());
    for (std::size_t k = 0; k < g.size(); ++k) t.delta[k] = g[k] - u0[k];
    t.s.assign(g.size(), 0.0);
    if (!S.empty()) std::copy(S.begin(), S.end(), t.s.begin());
    t.e.assign(e.begin(), e.end());
    return t;
}

/// Loss and gradient of (1/K) sum (g - u0 - S)^2 with S held constant.
GradientReport residual_gradient(const Problem& problem, ModelRef u, const sde::Initials& init,
                                 std::span<const double> g, std::span<const double> S) {
    Tape tape(0);
    const auto p = nets::bind(tape, *u.spec, u.theta);
    Var Sv;
    if (!S.empty()) Sv = tape.input(1, init.size(), S);
    const Residual r = record_residual(tape, *u.spec, p, init, g, Sv);
    tape.backward(r.loss);
    GradientReport rep;
    rep.loss = tape.value(r.loss)[0];
    rep.gradient.assign(p.total, 0.0);
    nets::accumulate_gradient(tape, p, rep.gradient);
    rep.terms = terms_from(tape, r, g, S);
    rep.tape = tape.stats();
    (void)problem;
    return rep;
}

} // namespace

double delta_hat(const Problem& problem, ModelRef u, const PathBatch& batch, int k) {
    check_u(u, batch.d);
    const double g = problem.terminal(batch.terminal(k).data());
    return g - nets::model_eval(*u.spec, u.theta, batch.initials.point(k), batch.initials.tau[static_cast<std::size_t>(k)]);
}

namespace {

double single_integral(ModelRef m, const PathBatch& batch, int k, bool gradient_network) {
    const int J = batch.steps[static_cast<std::size_t>(k)];
    if (J == 0) return 0.0;
    const std::size_t d = static_cast<std::size_t>(batch.d);
    std::vector<double> x, t;
    for (int j = 0; j < J; ++j) {
        const auto xj = batch.state(k, j);
        x.insert(x.end(), xj.begin(), xj.end());
        t.push_back(batch.time(k, j));
    }
    std::vector<double> v;
    if (gradient_network) {
        v = nets::model_eval(*m.spec, m.theta, x, t);
    } else {
        v = nets::grad_input(*m.spec, m.theta, x, t).gradients;
    }
    double s = 0.0;
    for (int j = 0; j < J; ++j) {
        const auto w = batch.diffused_increment(k, j);
        double sj = 0.0;
        for (std::size_t i = 0; i < d; ++i) sj += v[static_cast<std::size_t>(j) * d + i] * w[i];
        s += sj;
    }
    return s;
}

} // namespace

double s_hat(ModelRef u, const PathBatch& batch, int k) {
    check_u(u, batch.d);
    return single_integral(u, batch, k, false);
}

double s_tilde(ModelRef r, const PathBatch& batch, int k) {
    check_r(r, batch.d);
    return single_integral(r, batch, k, true);
}

SampleTerms sample_terms(LossKind kind, const Problem& problem, ModelRef u, const ModelRef* r,
                         const PathBatch& batch) {
    check_u(u, batch.d);
    if (batch.size() < 1) throw ConfigError("empty batch");
    const int K = batch.size();
    const auto g = terminal_values(problem, batch);
    const auto u0 = nets::model_eval(*u.spec, u.theta, batch.initials.xi, batch.initials.tau);
    SampleTerms t;
    t.delta.resize(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) t.delta[static_cast<std::size_t>(k)] = g[static_cast<std::size_t>(k)] - u0[static_cast<std::size_t>(k)];
    if (kind == LossKind::FK) {
        t.s.assign(static_cast<std::size_t>(K), 0.0);
    } else if (uses_gradient_network(kind)) {
        if (r == nullptr) throw ConfigError("this loss needs a gradient network r");
        check_r(*r, batch.d);
        t.s = integrals(*r, batch, true, nullptr);
    } else {
        t.s = integrals(u, batch, false, nullptr);
    }
    t.e.resize(static_cast<std::size_t>(K));
    for (std::size_t k = 0; k < t.e.size(); ++k) t.e[k] = t.delta[k] - t.s[k];
    return t;
}

double loss_estimate(LossKind kind, const Problem& problem, ModelRef u, const ModelRef* r, const PathBatch& batch) {
    const auto t = sample_terms(kind, problem, u, r, batch);
    double s = 0.0;
    for (double e : t.e) s += e * e;
    return s / static_cast<double>(t.e.size());
}

GradientReport grad_fk(const Problem& problem, ModelRef u, const PathBatch& batch) {
    check_u(u, batch.d);
    if (batch.size() < 1) throw ConfigError("empty batch");
    const auto g = terminal_values(problem, batch);
    return residual_gradient(problem, u, batch.initials, g, {});
}

GradientReport grad_bsde_detach(const Problem& problem, ModelRef u, const PathBatch& batch) {
    check_u(u, batch.d);
    if (batch.size() < 1) throw ConfigError("empty batch");
    ad::TapeStats stats;
    const auto S = integrals(u, batch, false, &stats);
    const auto g = terminal_values(problem, batch);
    GradientReport rep = residual_gradient(problem, u, batch.initials, g, S);
    rep.tape.merge(stats);
    return rep;
}

namespace {

/// One tape over the whole batch; `r` selects the gradient-network integrand.
GradientReport full_tape(const Problem& problem, ModelRef u, const ModelRef* r, const PathBatch& batch) {
    const int K = batch.size();
    if (K < 1) throw ConfigError("empty batch");
    const bool grad_net = r != nullptr;
    Tape tape(grad_net ? 0 : 1);
    const auto pu = nets::bind(tape, *u.spec, u.theta);
    nets::BoundParams pr;
    if (grad_net) pr = nets::bind(tape, *r->spec, r->theta);
    const std::vector<double> zeros(static_cast<std::size_t>(K), 0.0);
    Var S = tape.input(1, K, zeros);
    StepColumns sc;
    for (int j = 0; j < batch.max_steps(); ++j) {
        gather(batch, j, sc);
        const int A = static_cast<int>(sc.cols.size());
        const Var s = grad_net ? record_integrand(tape, *r->spec, pr, batch.d, A, sc.x, sc.t, sc.w, true)
                               : record_integrand(tape, *u.spec, pu, batch.d, A, sc.x, sc.t, sc.w, false);
        S = tape.scatter_cols(S, s, sc.cols);
    }
    const auto g = terminal_values(problem, batch);
    const Residual res = record_residual(tape, *u.spec, pu, batch.initials, g, S);
    tape.backward(res.loss);
    GradientReport rep;
    rep.loss = tape.value(res.loss)[0];
    rep.gradient.assign(pu.total, 0.0);
    nets::accumulate_gradient(tape, pu, rep.gradient);
    if (grad_net) {
        rep.gradient_r.assign(pr.total, 0.0);
        nets::accumulate_gradient(tape, pr, rep.gradient_r);
    }
    const auto Sv = tape.value(S);
    rep.terms = terms_from(tape, res, g, std::vector<double>(Sv.begin(), Sv.end()));
    rep.tape = tape.stats();
    return rep;
}

} // namespace

GradientReport grad_bsde(const Problem& problem, ModelRef u, const PathBatch& batch) {
    check_u(u, batch.d);
    return full_tape(problem, u, nullptr, batch);
}

GradientReport grad_bsde_grad(const Problem& problem, ModelRef u, ModelRef r, const PathBatch& batch) {
    check_u(u, batch.d);
    check_r(r, batch.d);
    return full_tape(problem, u, &r, batch);
}

sde::Initials batch_initials(const Problem& problem, const BatchSource& source) {
    if (source.initials) {
        if (source.initials->size() != source.K) throw DimensionError("fixed initials do not match K");
        return *source.initials;
    }
    return sde::sample_initial(problem, source.K, source.rng);
}

PathBatch make_batch(const Problem& problem, const BatchSource& source) {
    return sde::simulate(problem, batch_initials(problem, source), source.dt, source.rng, source.zero_noise);
}

namespace {

enum class Pass { TerminalOnly, Detach, Full };

GradientReport streamed(const Problem& problem, ModelRef u, const ModelRef* r, const BatchSource& source,
                        Pass mode) {
    const bool grad_net = r != nullptr;
    const ModelRef m = grad_net ? *r : u;
    const int d = problem.d;
    const sde::Initials init = batch_initials(problem, source);
    const int K = init.size();
    ad::TapeStats stats;

    // Pass 1: integrals S and terminal states, no retained per-step graph.
    std::vector<double> S(static_cast<std::size_t>(K), 0.0);
    Tape tape(grad_net ? 0 : 1);
    sde::EulerStepper first(problem, init, source.dt, source.rng, source.zero_noise);
    while (first.next()) {
        if (mode == Pass::TerminalOnly) continue;
        tape.reset();
        const auto p = nets::bind(tape, *m.spec, m.theta);
        const auto cols = first.active();
        const Var s = record_integrand(tape, *m.spec, p, d, static_cast<int>(cols.size()), first.states(),
                                       first.times(), first.diffused(), grad_net);
        const auto v = tape.value(s);
        for (std::size_t a = 0; a < cols.size(); ++a) S[static_cast<std::size_t>(cols[a])] += v[a];
    }
    const std::vector<double> terminal(first.current().begin(), first.current().end());
    const auto g = terminal_values(problem, terminal, K);

    GradientReport rep = residual_gradient(problem, u, init, g, S);
    if (mode != Pass::Full) {
        rep.tape.merge(tape.stats());
        return rep;
    }
    const std::vector<double>& e = rep.terms->e;
    std::vector<double> grad2(nets::parameter_count(*m.spec), 0.0);

    // Pass 2: replay and accumulate G2_j = -(2/K) sum_k e_k grad s_j^(k), j ascending.
    sde::EulerStepper second(problem, init, source.dt, source.rng, source.zero_noise);
    std::vector<double> seed;
    const double scale = -2.0 / static_cast<double>(K);
    while (second.next()) {
        tape.reset();
        const auto p = nets::bind(tape, *m.spec, m.theta);
        const auto cols = second.active();
        const Var s = record_integrand(tape, *m.spec, p, d, static_cast<int>(cols.size()), second.states(),
                                       second.times(), second.diffused(), grad_net);
        seed.resize(cols.size());
        for (std::size_t a = 0; a < cols.size(); ++a) seed[a] = scale * e[static_cast<std::size_t>(cols[a])];
        tape.backward(s, seed);
        nets::accumulate_gradient(tape, p, grad2);
    }
    const auto replayed = second.current();
    if (replayed.size() != terminal.size() ||
        std::memcmp(replayed.data(), terminal.data(), terminal.size() * sizeof(double)) != 0)
        throw ConsistencyError("two-pass replay produced different terminal states");

    stats.merge(tape.stats());
    rep.tape.merge(stats);
    if (grad_net) {
        rep.gradient_r = std::move(grad2);
    } else {
        for (std::size_t i = 0; i < grad2.size(); ++i) rep.gradient[i] += grad2[i];
    }
    return rep;
}

} // namespace

GradientReport grad_bsde_eff(const Problem& problem, ModelRef u, const BatchSource& source) {
    check_u(u, problem.d);
    return streamed(problem, u, nullptr, source, Pass::Full);
}

GradientReport grad_bsde_grad_eff(const Problem& problem, ModelRef u, ModelRef r, const BatchSource& source) {
    check_u(u, problem.d);
    check_r(r, problem.d);
    return streamed(problem, u, &r, source, Pass::Full);
}

GradientReport compute_gradient(LossKind kind, const Problem& problem, ModelRef u, const ModelRef* r,
                                const BatchSource& source, bool keep_terms) {
    if (uses_gradient_network(kind) && r == nullptr) throw ConfigError("this loss needs a gradient network r");
    GradientReport rep;
    switch (kind) {
    case LossKind::FK:
        check_u(u, problem.d);
        rep = streamed(problem, u, nullptr, source, Pass::TerminalOnly);
        break;
    case LossKind::BSDE: rep = grad_bsde(problem, u, make_batch(problem, source)); break;
    case LossKind::BSDEDetach:
        check_u(u, problem.d);
        rep = streamed(problem, u, nullptr, source, Pass::Detach);
        break;
    case LossKind::BSDEGrad: rep = grad_bsde_grad(problem, u, *r, make_batch(problem, source)); break;
    case LossKind::BSDEEff: rep = grad_bsde_eff(problem, u, source); break;
    case LossKind::BSDEGradEff: rep = grad_bsde_grad_eff(problem, u, *r, source); break;
    }
    if (!keep_terms) rep.terms.reset();
    return rep;
}

} // namespace kolmo::losses
