#include "kolmo/error.hpp"
#include "kolmo/losses/losses.hpp"
#include "kolmo/nets/model.hpp"
#include "kolmo/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

using namespace kolmo;
using namespace kolmo::losses;

namespace {

sde::Problem heat(int d, double xi = -1.0, double tau = -1.0) {
    sde::ProblemOverrides o;
    o.d = d;
    if (xi >= 0.0) o.xi_lo = o.xi_hi = xi;
    if (tau >= 0.0) o.tau_lo = o.tau_hi = tau;
    return sde::make_problem("heat", o);
}

BatchSource source(int K, double dt, std::uint64_t seed, bool zero_noise = false) {
    BatchSource s;
    s.K = K;
    s.dt = dt;
    s.rng = RngStream(seed, Stream::Train, 0);
    s.zero_noise = zero_noise;
    return s;
}

std::vector<double> random_theta(const nets::ModelSpec& spec, std::uint64_t seed) {
    const RngStream rng(seed, Stream::User, 3);
    std::vector<double> theta(nets::parameter_count(spec));
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] = 0.5 * rng.normal(Purpose::Weights, 0, 0, i);
    return theta;
}

double max_rel(const std::vector<double>& a, const std::vector<double>& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(1e-300, std::abs(b[i])));
    return worst;
}

} // namespace

TEST(LossNames, RoundTrip) {
    for (auto k : {LossKind::FK, LossKind::BSDE, LossKind::BSDEDetach, LossKind::BSDEGrad, LossKind::BSDEEff,
                   LossKind::BSDEGradEff})
        EXPECT_EQ(parse_loss(loss_name(k)), k);
    EXPECT_THROW(parse_loss("L2"), ConfigError);
    EXPECT_TRUE(uses_gradient_network(LossKind::BSDEGradEff));
    EXPECT_FALSE(uses_gradient_network(LossKind::BSDEEff));
}

TEST(DeltaHat, ZeroNoiseExamples) {
    const auto p = heat(2, 1.0, 0.0);
    const auto spec = nets::ModelSpec::polynomial_heat(2, 1.0);
    const auto batch = make_batch(p, source(1, 0.1, 0, true));
    const std::vector<double> zero = {0.0, 0.0, 0.0};
    EXPECT_DOUBLE_EQ(delta_hat(p, {&spec, zero}, batch, 0), 2.0);
    const std::vector<double> exact = {1.0, 2 * 0.25, 0.0};
    EXPECT_DOUBLE_EQ(delta_hat(p, {&spec, exact}, batch, 0), -2 * 0.25 * 1.0);
}

TEST(SHat, ConstantModelAndSingleStep) {
    const auto p = heat(1, 1.5, 0.0);
    const auto spec = nets::ModelSpec::polynomial_heat(1, 1.0);
    const auto batch = make_batch(p, source(1, 1.0, 4));
    ASSERT_EQ(batch.steps[0], 1);
    const std::vector<double> constant = {0.0, 3.0, 1.0};
    EXPECT_EQ(s_hat({&spec, constant}, batch, 0), 0.0);
    // grad_x u(1.5, 0) = 3, sigma = 0.5
    const std::vector<double> square = {1.0, 0.0, 0.0};
    const double dw = batch.increment(0, 0)[0];
    EXPECT_NEAR(s_hat({&spec, square}, batch, 0), 3.0 * 0.5 * dw, 1e-15);
}

TEST(Losses, ZeroNoiseFkValue) {
    const auto p = heat(2, 1.0, 0.0);
    const auto spec = nets::ModelSpec::polynomial_heat(2, 1.0);
    const std::vector<double> zero(3, 0.0);
    const auto batch = make_batch(p, source(3, 0.1, 0, true));
    EXPECT_DOUBLE_EQ(loss_estimate(LossKind::FK, p, {&spec, zero}, nullptr, batch), 4.0);
}

TEST(Losses, ZeroNoiseBsdeEqualsFk) {
    const auto p = heat(3);
    const auto spec = nets::ModelSpec::multilevel(3, 2, 2);
    const auto theta = random_theta(spec, 1);
    const ModelRef u{&spec, theta};
    const auto src = source(5, 0.1, 2, true);
    const auto batch = make_batch(p, src);
    EXPECT_EQ(loss_estimate(LossKind::BSDE, p, u, nullptr, batch), loss_estimate(LossKind::FK, p, u, nullptr, batch));
    const auto fk = grad_fk(p, u, batch).gradient;
    EXPECT_EQ(grad_bsde(p, u, batch).gradient, fk);
    EXPECT_EQ(grad_bsde_eff(p, u, src).gradient, fk);
    EXPECT_EQ(grad_bsde_detach(p, u, batch).gradient, fk);
}

TEST(GradFk, PolynomialHandExample) {
    const auto p = heat(2, 1.0, 0.0);
    const auto spec = nets::ModelSpec::polynomial_heat(2, 1.0);
    const std::vector<double> zero(3, 0.0);
    const auto g = grad_fk(p, {&spec, zero}, make_batch(p, source(1, 0.1, 0, true))).gradient;
    EXPECT_DOUBLE_EQ(g[0], -8.0);
    EXPECT_DOUBLE_EQ(g[1], -4.0);
    EXPECT_DOUBLE_EQ(g[2], -4.0);
}

TEST(GradFk, ZeroMismatchGivesZeroGradient) {
    const auto p = heat(2);
    const auto spec = nets::ModelSpec::polynomial_heat(2, 1.0);
    const std::vector<double> theta = {1.0, 0.0, 0.0};  // u = g on constant paths
    for (double g : grad_fk(p, {&spec, theta}, make_batch(p, source(4, 0.1, 3, true))).gradient) EXPECT_EQ(g, 0.0);
}

TEST(GradBsde, ConstantInSpaceReducesToFk) {
    const auto p = heat(2);
    const auto spec = nets::ModelSpec::polynomial_heat(2, 1.0);
    const std::vector<double> theta = {0.0, 0.7, -0.2};
    const ModelRef u{&spec, theta};
    const auto src = source(6, 0.05, 5);
    const auto batch = make_batch(p, src);
    const auto fk = grad_fk(p, u, batch).gradient;
    EXPECT_LE(max_rel(grad_bsde_detach(p, u, batch).gradient, fk), 1e-14);
    // S vanishes but its derivative in a does not: only the c and e components agree.
    for (const auto& g : {grad_bsde(p, u, batch).gradient, grad_bsde_eff(p, u, src).gradient}) {
        EXPECT_NEAR(g[1], fk[1], 1e-14 * std::abs(fk[1]));
        EXPECT_NEAR(g[2], fk[2], 1e-14 * std::abs(fk[2]));
        EXPECT_GT(std::abs(g[0] - fk[0]), 1e-6);
    }
}

TEST(GradBsde, EfficientMatchesFullTape) {
    for (const char* name : {"heat", "black-scholes", "hjb-doublewell"}) {
        sde::ProblemOverrides o;
        o.d = 3;
        const auto p = sde::make_problem(name, o);
        const auto su = nets::ModelSpec::multilevel(3, 2, 2);
        const auto sr = nets::ModelSpec::multilevel(3, 2, 2, true, nets::ModelKind::GradientNetwork);
        const auto tu = random_theta(su, 10);
        const auto tr = random_theta(sr, 11);
        const auto src = source(7, 0.04, 6);
        const auto batch = make_batch(p, src);
        const ModelRef u{&su, tu}, r{&sr, tr};
        EXPECT_LE(max_rel(grad_bsde_eff(p, u, src).gradient, grad_bsde(p, u, batch).gradient), 1e-8) << name;
        const auto a = grad_bsde_grad_eff(p, u, r, src);
        const auto b = grad_bsde_grad(p, u, r, batch);
        EXPECT_LE(max_rel(a.gradient, b.gradient), 1e-8) << name;
        EXPECT_LE(max_rel(a.gradient_r, b.gradient_r), 1e-8) << name;
        EXPECT_NEAR(a.loss, b.loss, 1e-12 * std::abs(b.loss));
    }
}

TEST(GradBsdeGrad, ZeroGradientNetworkReducesToFk) {
    const auto p = heat(2);
    const auto su = nets::ModelSpec::multilevel(2, 2, 2);
    const auto sr = nets::ModelSpec::multilevel(2, 2, 2, true, nets::ModelKind::GradientNetwork);
    const auto tu = random_theta(su, 20);
    const auto tr = nets::zero_params(sr).values;
    const ModelRef u{&su, tu}, r{&sr, tr};
    const auto src = source(5, 0.1, 8);
    const auto batch = make_batch(p, src);
    EXPECT_DOUBLE_EQ(loss_estimate(LossKind::BSDEGrad, p, u, &r, batch), loss_estimate(LossKind::FK, p, u, nullptr, batch));
    const auto fk = grad_fk(p, u, batch).gradient;
    EXPECT_LE(max_rel(grad_bsde_grad(p, u, r, batch).gradient, fk), 1e-14);
    EXPECT_LE(max_rel(grad_bsde_grad_eff(p, u, r, src).gradient, fk), 1e-14);
}

TEST(GradBsdeGrad, ExactPairHasZeroErrorOnZeroNoise) {
    const auto p = heat(2, -1.0, -1.0);
    const auto su = nets::ModelSpec::polynomial_heat(2, 1.0);
    const std::vector<double> tu = {1.0, 0.0, 0.0};
    const auto sr = nets::ModelSpec::multilevel(2, 2, 2, true, nets::ModelKind::GradientNetwork);
    const auto tr = random_theta(sr, 21);
    const ModelRef u{&su, tu}, r{&sr, tr};
    const auto rep = grad_bsde_grad_eff(p, u, r, source(4, 0.1, 9, true));
    for (double g : rep.gradient) EXPECT_EQ(g, 0.0);
    for (double g : rep.gradient_r) EXPECT_EQ(g, 0.0);
}

TEST(Losses, BsdeLossNearOptimumIsSmall) {
    const int d = 10;
    const auto p = heat(d);
    const auto spec = nets::ModelSpec::polynomial_heat(d, 1.0);
    const std::vector<double> theta = {1.0, d * 0.25, 0.0};
    const ModelRef u{&spec, theta};
    const auto batch = make_batch(p, source(1024, 1e-3, 12));
    const double fk = loss_estimate(LossKind::FK, p, u, nullptr, batch);
    const double bsde = loss_estimate(LossKind::BSDE, p, u, nullptr, batch);
    EXPECT_GT(fk, 0.0);
    EXPECT_LE(bsde, 0.02 * fk);
}

TEST(Losses, ReportedLossMatchesEstimate) {
    const auto p = heat(2);
    const auto spec = nets::ModelSpec::multilevel(2, 2, 2);
    const auto theta = random_theta(spec, 30);
    const ModelRef u{&spec, theta};
    const auto src = source(4, 0.1, 13);
    const auto batch = make_batch(p, src);
    for (auto kind : {LossKind::FK, LossKind::BSDE, LossKind::BSDEEff}) {
        const auto rep = compute_gradient(kind, p, u, nullptr, src, true);
        const auto est_kind = kind == LossKind::FK ? LossKind::FK : LossKind::BSDE;
        EXPECT_NEAR(rep.loss, loss_estimate(est_kind, p, u, nullptr, batch), 1e-12);
        ASSERT_TRUE(rep.terms.has_value());
    }
    EXPECT_FALSE(compute_gradient(LossKind::FK, p, u, nullptr, src).terms.has_value());
}

TEST(Losses, MissingGradientNetwork) {
    const auto p = heat(2);
    const auto spec = nets::ModelSpec::multilevel(2, 2, 2);
    const auto theta = random_theta(spec, 31);
    EXPECT_THROW(compute_gradient(LossKind::BSDEGradEff, p, {&spec, theta}, nullptr, source(2, 0.1, 0)), ConfigError);
}

TEST(Losses, WrongModelDimension) {
    const auto p = heat(3);
    const auto spec = nets::ModelSpec::multilevel(2, 2, 2);
    const auto theta = random_theta(spec, 32);
    EXPECT_THROW(compute_gradient(LossKind::FK, p, {&spec, theta}, nullptr, source(2, 0.1, 0)), DimensionError);
}

TEST(Losses, StreamedPassesKeepTapeSmall) {
    const auto p = heat(2, -1.0, 0.0);
    const auto spec = nets::ModelSpec::multilevel(2, 2, 2);
    const auto theta = random_theta(spec, 33);
    const ModelRef u{&spec, theta};
    const auto eff10 = grad_bsde_eff(p, u, source(4, 0.1, 1)).tape.peak_nodes;
    const auto eff100 = grad_bsde_eff(p, u, source(4, 0.01, 1)).tape.peak_nodes;
    EXPECT_EQ(eff10, eff100);
    const auto full10 = grad_bsde(p, u, make_batch(p, source(4, 0.1, 1))).tape.peak_nodes;
    const auto full100 = grad_bsde(p, u, make_batch(p, source(4, 0.01, 1))).tape.peak_nodes;
    EXPECT_GE(full100, 5 * full10);
}
