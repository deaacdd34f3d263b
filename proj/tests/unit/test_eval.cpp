#include "kolmo/error.hpp"
#include "kolmo/eval/eval.hpp"
#include "kolmo/nets/model.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

using namespace kolmo;
using namespace kolmo::eval;

namespace {

sde::Problem heat10() {
    sde::ProblemOverrides o;
    o.d = 10;
    return sde::make_problem("heat", o);
}

constexpr double kExpectedNormSq = 10.0 / 12.0;  // E|xi|^2 for xi ~ Unif([-1/2, 1/2]^10)

} // namespace

TEST(FdReference, ConstantIsPreserved) {
    const FdGrid grid{6.0, 801, 200};
    const auto t = fd_reference_1d([](double x) { return 0.4 * x * (x * x - 1.0); }, [](double) { return 1.0; }, 1.0,
                                   grid);
    for (double v : t.values) EXPECT_NEAR(v, 1.0, 1e-12);
}

TEST(FdReference, OneDimensionalHeat) {
    const auto t = fd_reference_1d([](double) { return 0.0; }, [](double x) { return x * x; }, 1.0, FdGrid{});
    EXPECT_NEAR(t.value(0.0, 0.0), 1.0, 1e-4);
    EXPECT_NEAR(t.derivative(0.5, 0.0), 1.0, 1e-3);
}

TEST(FdReference, RejectsUnstableGrid) {
    EXPECT_THROW(fd_reference_1d([](double x) { return 100.0 * x; }, [](double) { return 1.0; }, 1.0,
                                 FdGrid{6.0, 101, 100}),
                 ConfigError);
}

TEST(FdReference, TensorProduct) {
    const auto table = std::make_shared<const FdTable>(hjb_table(sde::make_problem("hjb-doublewell")));
    const auto ref = fd_tensor_product(table, 3);
    const std::vector<double> x = {0.1, -0.4, 1.2};
    double prod = 1.0;
    for (double xi : x) prod *= table->value(xi, 0.3);
    EXPECT_NEAR(ref.value(x, 0.3), prod, 1e-14);
    std::vector<double> g(3);
    ref.gradient(x, 0.3, g);
    EXPECT_NEAR(g[1], table->derivative(-0.4, 0.3) * prod / table->value(-0.4, 0.3), 1e-12);
}

TEST(MseEval, ExactModelIsZero) {
    const auto p = heat10();
    const auto spec = nets::ModelSpec::polynomial_heat(10, 1.0);
    const std::vector<double> theta = {1.0, 2.5, 0.0};
    const auto ref = closed_form_heat(p);
    EXPECT_LE(mse_eval(p, {&spec, theta}, ref, 4096, 0).mse, 1e-20);
    EXPECT_LE(mse_grad_eval(p, {&spec, theta}, ref, 4096, 0).mse, 1e-20);
}

TEST(MseEval, ConstantOffset) {
    const auto p = heat10();
    const auto spec = nets::ModelSpec::polynomial_heat(10, 1.0);
    const std::vector<double> theta = {1.0, 2.5, 0.3};
    EXPECT_NEAR(mse_eval(p, {&spec, theta}, closed_form_heat(p), 1000, 1).mse, 0.09, 1e-12);
}

TEST(MseEval, ZeroNetworkMatchesMoment) {
    // E[(|xi|^2 + 2.5 (1 - tau))^2] = E|xi|^4 + 2 E|xi|^2 E[2.5(1 - tau)] + E[6.25 (1 - tau)^2] = 59/12
    const auto p = heat10();
    const auto spec = nets::ModelSpec::multilevel(10, 2, 3);
    const auto theta = nets::zero_params(spec).values;
    const auto est = mse_eval(p, {&spec, theta}, closed_form_heat(p), 1 << 16, 2);
    EXPECT_NEAR(est.mse, 59.0 / 12.0, 3.0 * est.standard_error);
}

TEST(MseGradEval, QuadraticPerturbation) {
    const auto p = heat10();
    const auto spec = nets::ModelSpec::polynomial_heat(10, 1.0);
    const double eps = 0.2;
    const std::vector<double> theta = {1.0 + eps, 2.5, 0.0};
    const auto est = mse_grad_eval(p, {&spec, theta}, closed_form_heat(p), 1 << 15, 3);
    EXPECT_NEAR(est.mse, 4 * eps * eps * kExpectedNormSq, 3.0 * est.standard_error);
}

TEST(MseGradEval, ZeroGradientNetwork) {
    const auto p = heat10();
    const auto spec = nets::ModelSpec::multilevel(10, 2, 2, true, nets::ModelKind::GradientNetwork);
    const auto theta = nets::zero_params(spec).values;
    const auto est = mse_grad_eval(p, {&spec, theta}, closed_form_heat(p), 1 << 15, 4);
    EXPECT_NEAR(est.mse, 4 * kExpectedNormSq, 3.0 * est.standard_error);
}

TEST(MonteCarloReference, AgreesWithClosedForm) {
    sde::ProblemOverrides o;
    o.d = 3;
    const auto p = sde::make_problem("heat", o);
    const auto mc = monte_carlo(p, 1 << 14);
    const auto exact = closed_form_heat(p);
    const std::vector<double> x = {0.2, -0.1, 0.4};
    EXPECT_NEAR(mc.value(x, 0.3), exact.value(x, 0.3), 0.02);
    EXPECT_FALSE(mc.has_gradient());
}

TEST(Diagnostics, DeterministicLossHasZeroSpread) {
    const auto p = heat10();
    const auto spec = nets::ModelSpec::multilevel(10, 2, 2);
    const auto theta = nets::init_params(spec, 0).values;
    DiagnosticsConfig dc;
    dc.kind = losses::LossKind::BSDE;
    dc.K = 8;
    dc.B = 5;
    dc.dt = 0.1;
    dc.zero_noise = true;
    dc.initials = sde::sample_initial(p, 8, RngStream(0, Stream::User, 0));
    const auto d = variance_diagnostics(p, {&spec, theta}, nullptr, dc);
    EXPECT_EQ(d.loss_std, 0.0);
    EXPECT_EQ(d.grad_std_max, 0.0);
}

TEST(Diagnostics, ThreadsDoNotChangeResults) {
    const auto p = heat10();
    const auto spec = nets::ModelSpec::multilevel(10, 2, 2);
    const auto theta = nets::init_params(spec, 1).values;
    DiagnosticsConfig dc;
    dc.kind = losses::LossKind::BSDEEff;
    dc.K = 8;
    dc.B = 4;
    dc.dt = 0.1;
    const auto a = variance_diagnostics(p, {&spec, theta}, nullptr, dc);
    dc.threads = 3;
    const auto b = variance_diagnostics(p, {&spec, theta}, nullptr, dc);
    EXPECT_EQ(a.losses, b.losses);
    ASSERT_EQ(a.grad_std.size(), b.grad_std.size());
    for (std::size_t i = 0; i < a.grad_std.size(); ++i) EXPECT_EQ(a.grad_std[i], b.grad_std[i]) << "parameter " << i;
}

TEST(MeanStd, Unbiased) {
    const std::vector<double> v = {1.0, 2.0, 3.0, 4.0};
    const auto [m, s] = mean_std(v);
    EXPECT_DOUBLE_EQ(m, 2.5);
    EXPECT_NEAR(s, std::sqrt(5.0 / 3.0), 1e-15);
}

TEST(HjbPostprocess, UnitValue) {
    const auto sol = hjb_postprocess(
        0.1, [](std::span<const double>, double) { return 1.0; },
        [](std::span<const double>, double, std::span<double> g) { std::fill(g.begin(), g.end(), 0.0); });
    const std::vector<double> x = {0.5, -1.5};
    EXPECT_NEAR(sol.tilted_potential(x, 0.3), sde::double_well(0.1, x), 1e-15);
    for (double v : sol.control(x, 0.3)) EXPECT_EQ(v, 0.0);
}

TEST(HjbPostprocess, TerminalControl) {
    const double eta = 0.04;
    auto g = [eta](std::span<const double> x, double) {
        double s = 0.0;
        for (double xi : x) s += (xi - 1.0) * (xi - 1.0);
        return std::exp(-eta * s);
    };
    auto grad = [eta, g](std::span<const double> x, double t, std::span<double> out) {
        const double v = g(x, t);
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = -2.0 * eta * (x[i] - 1.0) * v;
    };
    const auto sol = hjb_postprocess(0.1, g, grad);
    const std::vector<double> x(10, 0.0);
    for (double v : sol.control(x, 1.0)) EXPECT_NEAR(v, 0.08, 1e-15);
}
