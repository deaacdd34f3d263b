// Acceptance checks. Usage: kolmo_acceptance [criterion ...]
// Prints one PASS/FAIL line per criterion; exits 1 if any fails.

#include "kolmo/autodiff/finite_difference.hpp"
#include "kolmo/error.hpp"
#include "kolmo/eval/eval.hpp"
#include "kolmo/losses/losses.hpp"
#include "kolmo/nets/model.hpp"
#include "kolmo/rng.hpp"
#include "kolmo/sde/paths.hpp"
#include "kolmo/sde/problem.hpp"
#include "kolmo/train/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

using namespace kolmo;
using losses::LossKind;
using losses::ModelRef;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    const char* title;
    double budget_seconds;  // 0: no runtime bound
    std::function<Outcome()> run;
};

std::string fmt(const char* format, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, format, args...);
    return buf;
}

double norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

double relative_error(std::span<const double> a, std::span<const double> b) {
    std::vector<double> diff(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) diff[i] = a[i] - b[i];
    return norm(diff) / std::max(norm(b), 1e-300);
}

std::vector<double> concat(std::vector<double> a, const std::vector<double>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Parameters with every entry drawn from N(0, scale^2).
std::vector<double> random_params(const nets::ModelSpec& spec, std::uint64_t seed, double scale) {
    std::vector<double> theta(nets::parameter_count(spec));
    const RngStream rng(seed, Stream::User, 0);
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] = scale * rng.normal(Purpose::Weights, 0, 0, i);
    return theta;
}

const char* kProblems[] = {"heat", "hjb-doublewell", "black-scholes"};

sde::Problem small_problem(int trial, int d) {
    sde::ProblemOverrides o;
    o.d = d;
    return sde::make_problem(kProblems[trial % 3], o);
}

/// Heat problem with the polynomial model at a = 1 + eps, c = d nu^2, e = 0.
struct HeatPolynomial {
    sde::Problem problem;
    nets::ModelSpec spec;
    std::vector<double> theta;

    explicit HeatPolynomial(double eps = 0.0, int d = 10) {
        sde::ProblemOverrides o;
        o.d = d;
        problem = sde::make_problem("heat", o);
        spec = nets::ModelSpec::polynomial_heat(d, problem.T);
        theta = {1.0 + eps, d * problem.nu * problem.nu, 0.0};
    }
    ModelRef ref() const { return {&spec, theta}; }
};

eval::VarianceDiagnostics diagnostics(const HeatPolynomial& h, LossKind kind, int K, double dt, int B,
                                      std::uint64_t seed = 0) {
    eval::DiagnosticsConfig dc;
    dc.kind = kind;
    dc.K = K;
    dc.B = B;
    dc.dt = dt;
    dc.seed = seed;
    return eval::variance_diagnostics(h.problem, h.ref(), nullptr, dc);
}

// ---------------------------------------------------------------------------

Outcome autodiff_oracle() {
    constexpr int kTrials = 60;
    constexpr double h = 1e-5;
    std::map<std::string, double> worst;
    for (int trial = 0; trial < kTrials; ++trial) {
        const int d = 1 + trial % 3;
        const int K = 1 + (trial / 3) % 4;
        const auto problem = small_problem(trial, d);
        const auto su = nets::ModelSpec::multilevel(d, 2, 2);
        const auto sr = nets::ModelSpec::multilevel(d, 2, 2, true, nets::ModelKind::GradientNetwork);
        const auto tu = random_params(su, 2 * trial, 0.5);
        const auto tr = random_params(sr, 2 * trial + 1, 0.5);

        losses::BatchSource src;
        src.dt = 0.2;  // at most five steps
        src.K = K;
        src.rng = RngStream(trial, Stream::Train, 0);
        const auto batch = losses::make_batch(problem, src);
        const ModelRef u{&su, tu};
        const ModelRef r{&sr, tr};

        auto loss_of = [&](LossKind kind) {
            return [&, kind](std::span<const double> p) {
                return losses::loss_estimate(kind, problem, {&su, p}, nullptr, batch);
            };
        };
        auto check = [&](const std::string& name, const std::vector<double>& ad, const std::vector<double>& fd) {
            worst[name] = std::max(worst[name], relative_error(ad, fd));
        };

        const auto fd_fk = ad::finite_difference_gradient(loss_of(LossKind::FK), tu, h);
        check("fk", losses::grad_fk(problem, u, batch).gradient, fd_fk);

        const auto fd_bsde = ad::finite_difference_gradient(loss_of(LossKind::BSDE), tu, h);
        check("bsde", losses::grad_bsde(problem, u, batch).gradient, fd_bsde);
        check("bsde-eff", losses::grad_bsde_eff(problem, u, src).gradient, fd_bsde);

        const auto S0 = losses::sample_terms(LossKind::BSDE, problem, u, nullptr, batch).s;
        const auto fd_detach = ad::finite_difference_gradient(
            [&](std::span<const double> p) {
                const auto delta = losses::sample_terms(LossKind::FK, problem, {&su, p}, nullptr, batch).delta;
                double s = 0.0;
                for (std::size_t k = 0; k < delta.size(); ++k) s += (delta[k] - S0[k]) * (delta[k] - S0[k]);
                return s / static_cast<double>(delta.size());
            },
            tu, h);
        check("bsde-detach", losses::grad_bsde_detach(problem, u, batch).gradient, fd_detach);

        const std::size_t nu = tu.size();
        const auto joint = concat(tu, tr);
        const auto fd_grad = ad::finite_difference_gradient(
            [&](std::span<const double> p) {
                const ModelRef rr{&sr, p.subspan(nu)};
                return losses::loss_estimate(LossKind::BSDEGrad, problem, {&su, p.first(nu)}, &rr, batch);
            },
            joint, h);
        const auto g = losses::grad_bsde_grad(problem, u, r, batch);
        check("bsde-grad", concat(g.gradient, g.gradient_r), fd_grad);
        const auto ge = losses::grad_bsde_grad_eff(problem, u, r, src);
        check("bsde-grad-eff", concat(ge.gradient, ge.gradient_r), fd_grad);
    }
    double max_err = 0.0;
    std::ostringstream detail;
    detail << kTrials << " instances; max relative error";
    for (const auto& [name, e] : worst) {
        detail << " " << name << "=" << fmt("%.2e", e);
        max_err = std::max(max_err, e);
    }
    detail << " (tol 1e-5)";
    return {max_err <= 1e-5, detail.str()};
}

Outcome two_pass_exactness() {
    double worst_u = 0.0;
    double worst_r = 0.0;
    for (int c = 0; c < 20; ++c) {
        const int d = 1 + c % 4;
        const auto problem = small_problem(c, d);
        const auto su = nets::ModelSpec::multilevel(d, 2 + c % 2, 2);
        const auto sr = nets::ModelSpec::multilevel(d, 2, 2, true, nets::ModelKind::GradientNetwork);
        const auto tu = random_params(su, 100 + c, 0.4);
        const auto tr = random_params(sr, 200 + c, 0.4);
        losses::BatchSource src;
        src.dt = 0.02 + 0.01 * (c % 5);
        src.K = 1 + (7 * c) % 9;
        src.rng = RngStream(1000 + c, Stream::Train, c);
        const auto batch = losses::make_batch(problem, src);
        const ModelRef u{&su, tu};
        const ModelRef r{&sr, tr};

        worst_u = std::max(worst_u, relative_error(losses::grad_bsde_eff(problem, u, src).gradient,
                                                   losses::grad_bsde(problem, u, batch).gradient));
        const auto full = losses::grad_bsde_grad(problem, u, r, batch);
        const auto eff = losses::grad_bsde_grad_eff(problem, u, r, src);
        worst_r = std::max(worst_r, relative_error(concat(eff.gradient, eff.gradient_r),
                                                   concat(full.gradient, full.gradient_r)));
    }
    return {worst_u <= 1e-8 && worst_r <= 1e-8,
            fmt("20 configurations; max relative error bsde-eff %.2e, bsde-grad-eff %.2e (tol 1e-8)", worst_u,
                worst_r)};
}

Outcome detach_identity() {
    double worst = 0.0;
    for (int c = 0; c < 20; ++c) {
        const int d = 1 + c % 3;
        const auto problem = small_problem(c, d);
        const auto su = nets::ModelSpec::multilevel(d, 2, 2);
        const auto tu = random_params(su, 300 + c, 0.5);
        losses::BatchSource src;
        src.dt = 0.1;
        src.K = 1 + c % 6;
        src.rng = RngStream(c, Stream::Train, 7);
        const auto batch = losses::make_batch(problem, src);
        const ModelRef u{&su, tu};

        const auto full = losses::grad_bsde(problem, u, batch);
        const auto& e = full.terms->e;
        // G2 = -(2/K) sum_k e_k sum_j grad_theta [grad_x u(X_j, t_j) . sigma dW_j]
        std::vector<double> g2(tu.size(), 0.0);
        const double scale = -2.0 / batch.size();
        for (int k = 0; k < batch.size(); ++k)
            for (int j = 0; j < batch.steps[static_cast<std::size_t>(k)]; ++j) {
                const auto inner = nets::grad_params_of_inner(su, tu, batch.state(k, j), batch.time(k, j),
                                                              batch.diffused_increment(k, j));
                for (std::size_t i = 0; i < g2.size(); ++i)
                    g2[i] += scale * e[static_cast<std::size_t>(k)] * inner.gradient[i];
            }
        const auto detached = losses::grad_bsde_detach(problem, u, batch).gradient;
        for (std::size_t i = 0; i < g2.size(); ++i) {
            const double g1 = full.gradient[i] - g2[i];
            worst = std::max(worst, std::abs(detached[i] - g1) / std::max(1.0, std::abs(g1)));
        }
    }
    return {worst <= 1e-10, fmt("20 configurations; max elementwise deviation %.2e (tol 1e-10)", worst)};
}

Outcome control_variate() {
    const HeatPolynomial hp;
    const auto& problem = hp.problem;
    const int d = problem.d;
    const double nu = problem.nu;
    constexpr int kPaths = 10000;
    constexpr int kChunk = 500;
    const double dts[] = {1e-2, 5e-3, 2.5e-3};
    std::vector<double> rms_bsde, rms_closed;
    for (double dt : dts) {
        double s_bsde = 0.0, s_closed = 0.0;
        for (int c = 0; c < kPaths / kChunk; ++c) {
            const RngStream rng(0, Stream::Train, static_cast<std::uint64_t>(c));
            const auto init = sde::sample_initial(problem, kChunk, rng);
            const auto batch = sde::simulate(problem, init, dt, rng);
            const auto terms = losses::sample_terms(LossKind::BSDE, problem, hp.ref(), nullptr, batch);
            for (int k = 0; k < kChunk; ++k) {
                std::vector<double> W(static_cast<std::size_t>(d), 0.0);
                for (int j = 0; j < batch.steps[static_cast<std::size_t>(k)]; ++j) {
                    const auto dw = batch.increment(k, j);
                    for (int i = 0; i < d; ++i) W[static_cast<std::size_t>(i)] += dw[static_cast<std::size_t>(i)];
                }
                const auto xi = init.point(k);
                double xw = 0.0, ww = 0.0;
                for (int i = 0; i < d; ++i) {
                    xw += xi[static_cast<std::size_t>(i)] * W[static_cast<std::size_t>(i)];
                    ww += W[static_cast<std::size_t>(i)] * W[static_cast<std::size_t>(i)];
                }
                const double tau = init.tau[static_cast<std::size_t>(k)];
                const double closed = 2.0 * nu * xw + nu * nu * (ww - d * (problem.T - tau));
                const double s = terms.s[static_cast<std::size_t>(k)];
                s_bsde += terms.e[static_cast<std::size_t>(k)] * terms.e[static_cast<std::size_t>(k)];
                s_closed += (s - closed) * (s - closed);
            }
        }
        rms_bsde.push_back(std::sqrt(s_bsde / kPaths));
        rms_closed.push_back(std::sqrt(s_closed / kPaths));
    }
    const double lo = std::sqrt(2.0) * 0.75, hi = std::sqrt(2.0) * 1.25;
    bool ok = true;
    std::ostringstream detail;
    detail << "RMS(delta-S)";
    for (double r : rms_bsde) detail << " " << fmt("%.4e", r);
    detail << "; RMS(S-closed)";
    for (double r : rms_closed) detail << " " << fmt("%.4e", r);
    detail << "; halving ratios";
    for (int i = 0; i < 2; ++i) {
        const double a = rms_bsde[i] / rms_bsde[i + 1];
        const double b = rms_closed[i] / rms_closed[i + 1];
        ok = ok && a >= lo && a <= hi && b >= lo && b <= hi;
        detail << " " << fmt("%.3f/%.3f", a, b);
    }
    detail << fmt(" (band [%.3f, %.3f])", lo, hi);
    return {ok, detail.str()};
}

Outcome loss_variance() {
    const HeatPolynomial hp;
    const auto fk = diagnostics(hp, LossKind::FK, 128, 1e-3, 30);
    const auto bsde = diagnostics(hp, LossKind::BSDE, 128, 1e-3, 30);
    const auto fk512 = diagnostics(hp, LossKind::FK, 512, 1e-3, 30);
    const double mean_ratio = bsde.loss_mean / fk.loss_mean;
    const double std_ratio = bsde.loss_std / fk.loss_std;
    const double k_ratio = fk.loss_std / fk512.loss_std;
    const bool ok = mean_ratio <= 0.05 && std_ratio <= 0.05 && k_ratio >= 1.4 && k_ratio <= 2.8;
    return {ok, fmt("FK mean %.4e std %.4e; BSDE mean %.4e std %.4e; ratios %.2e/%.2e (tol 0.05); "
                    "FK std K=128/K=512 %.3f (band [1.4, 2.8])",
                    fk.loss_mean, fk.loss_std, bsde.loss_mean, bsde.loss_std, mean_ratio, std_ratio, k_ratio)};
}

Outcome gradient_variance() {
    const HeatPolynomial hp;
    const auto fk = diagnostics(hp, LossKind::FK, 128, 1e-3, 30);
    const auto bsde = diagnostics(hp, LossKind::BSDE, 128, 1e-3, 30);
    const double ratio = bsde.grad_std_max / fk.grad_std_max;
    const bool ok = fk.grad_std_max > 0.0 && ratio <= 0.05 && fk.grad_std_max >= 10.0 * bsde.grad_std_max;
    return {ok, fmt("max gradient std FK %.4e, BSDE %.4e, ratio %.2e (tol 0.05); FK/BSDE %.1f (min 10)",
                    fk.grad_std_max, bsde.grad_std_max, ratio, fk.grad_std_max / bsde.grad_std_max)};
}

Outcome stability() {
    // The Euler floor of the BSDE error scales with dt and must sit well below eps = 0.01.
    auto variance = [&](double eps, int K, double dt, int B) {
        const HeatPolynomial hp(eps);
        const double s = diagnostics(hp, LossKind::BSDEEff, K, dt, B).grad_std_max;
        return s * s;
    };
    const double v_big = variance(0.1, 256, 2.5e-4, 100);
    const double v_small = variance(0.01, 256, 2.5e-4, 100);
    const double eps_ratio = v_big / v_small;
    std::vector<double> vk;
    for (int K : {64, 256, 1024}) vk.push_back(variance(0.1, K, 1e-2, 200));
    const double r1 = vk[0] / vk[1], r2 = vk[1] / vk[2];
    const bool ok = eps_ratio >= 30 && eps_ratio <= 300 && r1 >= 2 && r1 <= 8 && r2 >= 2 && r2 <= 8;
    return {ok, fmt("variance eps=0.1 %.4e, eps=0.01 %.4e, ratio %.1f (band [30, 300]); "
                    "K 64/256 %.2f, 256/1024 %.2f (band [2, 8])",
                    v_big, v_small, eps_ratio, r1, r2)};
}

Outcome heat_ordering() {
    sde::ProblemOverrides o;
    o.d = 10;
    const auto problem = sde::make_problem("heat", o);
    const auto reference = eval::closed_form_heat(problem);
    std::map<LossKind, std::vector<double>> finals;
    bool decreased = true;
    std::ostringstream detail;
    for (LossKind kind : {LossKind::FK, LossKind::BSDEEff}) {
        for (std::uint64_t seed : {0, 1, 2}) {
            train::TrainConfig tc;
            tc.loss = kind;
            tc.model = nets::ModelSpec::multilevel(10, 3, 3);
            tc.steps = 5000;
            tc.K = 128;
            tc.seed = seed;
            tc.eval_samples = 4096;
            const auto res = train::train(problem, tc, &reference);
            const double first = res.log.front().mse;
            const double last = res.log.back().mse;
            finals[kind].push_back(last);
            decreased = decreased && !res.failed && first >= 10.0 * last;
            detail << losses::loss_name(kind) << "/" << seed << " " << fmt("%.3e->%.3e", first, last) << "; ";
        }
    }
    const double m_fk = median(finals[LossKind::FK]);
    const double m_bsde = median(finals[LossKind::BSDEEff]);
    detail << fmt("median final MSE FK %.3e, BSDE-eff %.3e, ratio %.3f (tol 0.5)", m_fk, m_bsde, m_bsde / m_fk);
    return {decreased && m_bsde <= 0.5 * m_fk, detail.str()};
}

Outcome black_scholes_consistency() {
    sde::ProblemOverrides o;
    o.d = 10;
    const auto problem = sde::make_problem("black-scholes", o);
    const std::vector<double> xi(10, 5.0);
    const auto euler = eval::feynman_kac_at(problem, xi, 0.0, 100000, 1e-3, 0);
    const auto exact = eval::feynman_kac_at(problem, xi, 0.0, 100000, 1e-3, 1, true);
    const double se = std::hypot(euler.standard_error, exact.standard_error);
    const double gap = std::abs(euler.mean - exact.mean);
    return {gap <= 3.0 * se, fmt("Euler %.5f +- %.5f, exact %.5f +- %.5f, gap %.2f combined SE (tol 3)", euler.mean,
                                 euler.standard_error, exact.mean, exact.standard_error, gap / se)};
}

Outcome hjb_reference() {
    const auto problem = sde::make_problem("hjb-doublewell");
    const auto table = eval::hjb_table(problem);
    sde::ProblemOverrides o;
    o.d = 1;
    const auto line = sde::make_problem("hjb-doublewell", o);
    const double zero = 0.0;
    const auto mc1 = eval::feynman_kac_at(line, std::span<const double>(&zero, 1), 0.0, 1 << 18, 1e-3, 0);
    const double v1 = table.value(0.0, 0.0);
    const double rel = std::abs(v1 - mc1.mean) / std::abs(mc1.mean);

    const auto ref = eval::fd_tensor_product(std::make_shared<const eval::FdTable>(table), problem.d);
    const std::vector<double> origin(static_cast<std::size_t>(problem.d), 0.0);
    const double vd = ref.value(origin, 0.0);
    const auto mcd = eval::feynman_kac_at(problem, origin, 0.0, 1 << 16, 1e-3, 1);
    const double z = std::abs(vd - mcd.mean) / mcd.standard_error;
    return {rel <= 0.01 && z <= 3.0,
            fmt("V1(0,0) FD %.6f vs MC %.6f, relative %.2e (tol 1e-2); V(0,0) FD %.6f vs MC %.6f +- %.6f, "
                "%.2f SE (tol 3)",
                v1, mc1.mean, rel, vd, mcd.mean, mcd.standard_error, z)};
}

Outcome hjb_training() {
    const auto problem = sde::make_problem("hjb-doublewell");
    const auto reference = eval::default_reference(problem);
    const auto exact = eval::hjb_postprocess(problem, reference);
    std::ostringstream detail;
    std::map<LossKind, double> sup, mse_grad;
    for (LossKind kind : {LossKind::FK, LossKind::BSDEEff}) {
        train::TrainConfig tc;
        tc.loss = kind;
        tc.model = nets::ModelSpec::multilevel(problem.d, 3, 5);
        tc.steps = 5000;
        tc.K = 512;
        tc.dt_after = tc.dt_before;
        tc.seed = 0;
        const auto res = train::train(problem, tc);
        const ModelRef u{&tc.model, res.theta.values};
        const auto model = eval::hjb_postprocess(problem, u);
        double worst = 0.0;
        std::vector<double> x(static_cast<std::size_t>(problem.d));
        for (int i = 0; i <= 80; ++i) {
            std::fill(x.begin(), x.end(), -2.0 + 0.05 * i);
            worst = std::max(worst, std::abs(model.tilted_potential(x, 0.75) - exact.tilted_potential(x, 0.75)));
        }
        sup[kind] = worst;
        mse_grad[kind] = eval::mse_grad_eval(problem, u, reference, 1 << 14, 0).mse;
        detail << losses::loss_name(kind) << fmt(": sup |Psi error| %.3f, mse-grad %.4e; ", worst, mse_grad[kind]);
    }
    detail << "(tol sup 0.5 for BSDE-eff; BSDE-eff mse-grad below FK)";
    return {sup[LossKind::BSDEEff] <= 0.5 && mse_grad[LossKind::BSDEEff] < mse_grad[LossKind::FK], detail.str()};
}

Outcome memory_independence() {
    const auto problem = small_problem(0, 2);
    const auto su = nets::ModelSpec::multilevel(2, 2, 2);
    const auto tu = random_params(su, 5, 0.5);
    const ModelRef u{&su, tu};
    auto peaks = [&](int J) {
        losses::BatchSource src;
        src.K = 8;
        src.dt = problem.T / J;
        src.rng = RngStream(0, Stream::Train, 0);
        sde::Initials init;
        init.d = 2;
        init.xi.assign(16, 0.1);
        init.tau.assign(8, 0.0);
        src.initials = init;
        const auto eff = losses::grad_bsde_eff(problem, u, src).tape.peak_nodes;
        const auto full = losses::grad_bsde(problem, u, losses::make_batch(problem, src)).tape.peak_nodes;
        return std::pair{static_cast<double>(eff), static_cast<double>(full)};
    };
    const auto [eff10, full10] = peaks(10);
    const auto [eff100, full100] = peaks(100);
    const double drift = std::abs(eff100 - eff10) / eff10;
    const double growth = full100 / full10;
    return {drift <= 0.01 && growth >= 5.0,
            fmt("peak nodes bsde-eff J=10 %.0f, J=100 %.0f (change %.2f%%, tol 1%%); bsde %.0f -> %.0f (x%.1f, min 5)",
                eff10, eff100, 100.0 * drift, full10, full100, growth)};
}

const std::map<int, Criterion>& criteria() {
    static const std::map<int, Criterion> all = {
        {1, {"autodiff oracle", 60, autodiff_oracle}},
        {2, {"two-pass exactness", 60, two_pass_exactness}},
        {3, {"detach identity", 0, detach_identity}},
        {4, {"optimal control variate", 120, control_variate}},
        {5, {"loss variances", 180, loss_variance}},
        {6, {"gradient variances", 180, gradient_variance}},
        {7, {"stability near the solution", 180, stability}},
        {8, {"heat ordering", 900, heat_ordering}},
        {9, {"black-scholes weak consistency", 120, black_scholes_consistency}},
        {10, {"hjb reference", 300, hjb_reference}},
        {11, {"hjb training", 1800, hjb_training}},
        {12, {"memory independence", 0, memory_independence}},
    };
    return all;
}

} // namespace

int main(int argc, char** argv) {
    std::vector<int> ids;
    for (int i = 1; i < argc; ++i) ids.push_back(std::atoi(argv[i]));
    if (ids.empty())
        for (const auto& [id, c] : criteria()) ids.push_back(id);

    int failures = 0;
    for (int id : ids) {
        const auto it = criteria().find(id);
        if (it == criteria().end()) {
            std::printf("criterion %02d FAIL: unknown criterion\n", id);
            ++failures;
            continue;
        }
        const Criterion& c = it->second;
        const auto start = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = c.run();
        } catch (const std::exception& e) {
            out = {false, std::string("exception: ") + e.what()};
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_time = c.budget_seconds <= 0.0 || seconds <= c.budget_seconds;
        const bool pass = out.pass && in_time;
        std::printf("criterion %02d %s: %s: %s [%.1f s%s]\n", id, pass ? "PASS" : "FAIL", c.title,
                    out.detail.c_str(), seconds,
                    c.budget_seconds > 0 ? fmt(", budget %.0f s", c.budget_seconds).c_str() : "");
        std::fflush(stdout);
        if (!pass) ++failures;
    }
    return failures == 0 ? 0 : 1;
}
