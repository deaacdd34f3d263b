#include "kolmo/autodiff/finite_difference.hpp"
#include "kolmo/error.hpp"
#include "kolmo/nets/model.hpp"
#include "kolmo/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

using namespace kolmo;
using namespace kolmo::nets;

namespace {

std::vector<double> random_theta(const ModelSpec& spec, std::uint64_t seed) {
    const RngStream rng(seed, Stream::User, 1);
    std::vector<double> theta(parameter_count(spec));
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] = 0.5 * rng.normal(Purpose::Weights, 0, 0, i);
    return theta;
}

double rel_err(const std::vector<double>& a, const std::vector<double>& b) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - b[i]) * (a[i] - b[i]);
        den += b[i] * b[i];
    }
    return std::sqrt(num / den);
}

} // namespace

TEST(ModelSpec, ParameterCounts) {
    EXPECT_EQ(parameter_count(ModelSpec::multilevel(10, 2, 3)), 1321u);
    EXPECT_EQ(parameter_count(ModelSpec::multilevel(10, 3, 3)), 2251u);
    EXPECT_EQ(parameter_count(ModelSpec::multilevel(10, 3, 5)), 5751u);
    EXPECT_EQ(parameter_count(ModelSpec::polynomial_heat(50, 1.0)), 3u);
    const auto r = ModelSpec::multilevel(4, 2, 2, true, ModelKind::GradientNetwork);
    EXPECT_EQ(r.output_dim(), 4);
}

TEST(ModelSpec, LayoutPartitionsTheVector) {
    const auto spec = ModelSpec::multilevel(3, 3, 2);
    std::size_t next = 0;
    for (const auto& slot : layout(spec)) {
        EXPECT_EQ(slot.offset, next);
        next += slot.size();
    }
    EXPECT_EQ(next, parameter_count(spec));
}

TEST(ModelSpec, InvalidSpecsAreRejected) {
    ModelSpec s;
    s.hidden = {};
    EXPECT_THROW(s.validate(), ConfigError);
    s.hidden = {4, 0};
    EXPECT_THROW(s.validate(), ConfigError);
    EXPECT_THROW(parse_kind("transformer"), ConfigError);
}

TEST(InitParams, DeterministicAndScaled) {
    const auto spec = ModelSpec::multilevel(10, 2, 3);
    const auto a = init_params(spec, 7);
    const auto b = init_params(spec, 7);
    EXPECT_EQ(a.values, b.values);
    EXPECT_NE(a.values, init_params(spec, 8).values);
    for (const auto& slot : a.layout) {
        const auto v = a.slot(slot.name);
        if (slot.name[0] == 'b') {
            for (double x : v) EXPECT_EQ(x, 0.0);
        } else {
            const double bound = 1.0 / std::sqrt(static_cast<double>(slot.cols));
            for (double x : v) EXPECT_LE(std::abs(x), bound);
        }
    }
    for (double x : init_params(ModelSpec::polynomial_heat(5, 1.0), 3).values) EXPECT_EQ(x, 0.0);
}

TEST(ModelEval, PolynomialHeatExamples) {
    const auto spec = ModelSpec::polynomial_heat(50, 1.0);
    const std::vector<double> theta = {1.0, 12.5, 0.0};
    const std::vector<double> zero(50, 0.0);
    EXPECT_DOUBLE_EQ(model_eval(spec, theta, zero, 0.0), 12.5);
    std::vector<double> x(50, 0.0);
    x[0] = 1.0;
    x[7] = -1.0;
    EXPECT_DOUBLE_EQ(model_eval(spec, theta, x, 1.0), 2.0);
}

TEST(ModelEval, PolynomialAtOptimumIsTheHeatSolution) {
    const int d = 6;
    const double nu = 0.5;
    const auto spec = ModelSpec::polynomial_heat(d, 1.0);
    const std::vector<double> theta = {1.0, d * nu * nu, 0.0};
    const RngStream rng(0, Stream::User, 2);
    for (int k = 0; k < 50; ++k) {
        std::vector<double> x(d);
        double sq = 0.0;
        for (int i = 0; i < d; ++i) {
            x[i] = rng.normal(Purpose::InitialState, k, 0, i);
            sq += x[i] * x[i];
        }
        const double t = rng.uniform(Purpose::InitialTime, k, 0, 0);
        EXPECT_DOUBLE_EQ(model_eval(spec, theta, x, t), sq + d * nu * nu * (1.0 - t));
    }
}

TEST(ModelEval, ZeroNetworkIsZero) {
    const auto spec = ModelSpec::multilevel(3, 3, 2);
    const auto theta = zero_params(spec).values;
    const std::vector<double> x = {0.3, -2.0, 5.0, 1.0, 1.0, 1.0};
    const std::vector<double> t = {0.1, 0.9};
    for (double y : model_eval(spec, theta, x, t)) EXPECT_EQ(y, 0.0);
}

TEST(ModelEval, DimensionMismatch) {
    const auto spec = ModelSpec::multilevel(3, 2, 2);
    const auto theta = zero_params(spec).values;
    const std::vector<double> x = {1.0, 2.0};
    const std::vector<double> t = {0.0};
    EXPECT_THROW(model_eval(spec, theta, x, t), DimensionError);
    const std::vector<double> short_theta(3, 0.0);
    const std::vector<double> x3 = {1.0, 2.0, 3.0};
    EXPECT_THROW(model_eval(spec, short_theta, x3, t), DimensionError);
}

TEST(GradInput, Paraboloid) {
    const auto spec = ModelSpec::polynomial_heat(2, 1.0);
    const std::vector<double> theta = {1.0, 0.0, 0.0};
    const std::vector<double> x = {1.0, 2.0};
    const auto g = grad_input(spec, theta, x, 0.3);
    EXPECT_DOUBLE_EQ(g.value, 5.0);
    EXPECT_DOUBLE_EQ(g.tangents[0], 2.0);
    EXPECT_DOUBLE_EQ(g.tangents[1], 4.0);
}

TEST(GradInput, ConstantModel) {
    const auto spec = ModelSpec::polynomial_heat(3, 1.0);
    const std::vector<double> theta = {0.0, 2.0, 1.0};
    const std::vector<double> x = {1.0, 2.0, 3.0};
    for (double g : grad_input(spec, theta, x, 0.5).tangents) EXPECT_EQ(g, 0.0);
}

TEST(GradInput, RandomNetworkMatchesFiniteDifferences) {
    for (int trial = 0; trial < 10; ++trial) {
        const int d = 1 + trial % 4;
        const auto spec = ModelSpec::multilevel(d, 2, 2);
        const auto theta = random_theta(spec, trial);
        std::vector<double> x(d);
        for (int i = 0; i < d; ++i) x[i] = 0.3 * (i + 1) - 0.5 * trial / 10.0;
        const double t = 0.1 * trial;
        const auto g = grad_input(spec, theta, x, t);
        const auto fd = ad::finite_difference_gradient(
            [&](std::span<const double> p) { return model_eval(spec, theta, p, t); }, x, 1e-5);
        EXPECT_LE(rel_err(g.tangents, fd), 1e-6) << "trial " << trial;
        EXPECT_DOUBLE_EQ(g.value, model_eval(spec, theta, x, t));
    }
}

TEST(GradInput, BatchedAgreesWithSinglePoint) {
    const auto spec = ModelSpec::multilevel(3, 2, 2);
    const auto theta = random_theta(spec, 9);
    const std::vector<double> x = {0.1, 0.2, 0.3, -1.0, 0.5, 2.0};
    const std::vector<double> t = {0.25, 0.75};
    const auto batch = grad_input(spec, theta, x, t);
    for (int k = 0; k < 2; ++k) {
        const auto one = grad_input(spec, theta, std::span<const double>(x).subspan(3 * k, 3), t[k]);
        EXPECT_NEAR(batch.values[k], one.value, 1e-14);
        for (int i = 0; i < 3; ++i) EXPECT_NEAR(batch.gradients[3 * k + i], one.tangents[i], 1e-14);
    }
}

TEST(GradParamsOfInner, AnalyticFamily) {
    const auto spec = ModelSpec::polynomial_heat(2, 1.0);
    const std::vector<double> theta = {1.0, 0.0, 0.0};
    const std::vector<double> x = {1.0, 0.0};
    const std::vector<double> w = {1.0, 1.0};
    const auto r = grad_params_of_inner(spec, theta, x, 0.0, w);
    EXPECT_DOUBLE_EQ(r.inner, 2.0);
    EXPECT_DOUBLE_EQ(r.gradient[0], 2.0);
    EXPECT_DOUBLE_EQ(r.gradient[1], 0.0);
    EXPECT_DOUBLE_EQ(r.gradient[2], 0.0);
}

TEST(GradParamsOfInner, ZeroDirection) {
    const auto spec = ModelSpec::multilevel(2, 2, 2);
    const auto theta = random_theta(spec, 4);
    const std::vector<double> x = {0.5, -0.5};
    const std::vector<double> w = {0.0, 0.0};
    const auto r = grad_params_of_inner(spec, theta, x, 0.2, w);
    EXPECT_EQ(r.inner, 0.0);
    for (double g : r.gradient) EXPECT_EQ(g, 0.0);
}

TEST(GradParamsOfInner, RandomNetworkMatchesFiniteDifferences) {
    for (int trial = 0; trial < 8; ++trial) {
        const int d = 1 + trial % 3;
        const auto spec = ModelSpec::multilevel(d, 2, 2);
        const auto theta = random_theta(spec, 50 + trial);
        std::vector<double> x(d), w(d);
        for (int i = 0; i < d; ++i) {
            x[i] = 0.4 * i - 0.3;
            w[i] = 1.0 - 0.7 * i;
        }
        const auto r = grad_params_of_inner(spec, theta, x, 0.4, w);
        const auto fd = ad::finite_difference_gradient(
            [&](std::span<const double> p) {
                const auto g = grad_input(spec, p, x, 0.4);
                double s = 0.0;
                for (int i = 0; i < d; ++i) s += g.tangents[i] * w[i];
                return s;
            },
            theta, 1e-5);
        EXPECT_LE(rel_err(r.gradient, fd), 1e-5) << "trial " << trial;
    }
}
