#pragma once

#include "kolmo/autodiff/dual.hpp"
#include "kolmo/autodiff/tape.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace kolmo::nets {

enum class ModelKind {
    FeedforwardResidual,  // scalar u(x, t)
    GradientNetwork,      // d-vector r(x, t)
    PolynomialHeat,       // a |x|^2 + c (T - t) + e
};

std::string_view kind_name(ModelKind kind) noexcept;
ModelKind parse_kind(std::string_view name);

struct ModelSpec {
    ModelKind kind = ModelKind::FeedforwardResidual;
    int d = 1;
    std::vector<int> hidden;  // network kinds only
    bool residual = true;
    double horizon = 1.0;     // T, polynomial-heat only

    int input_dim() const noexcept { return d + 1; }
    int output_dim() const noexcept { return kind == ModelKind::GradientNetwork ? d : 1; }

    /// `levels` hidden layers of width q * d.
    static ModelSpec multilevel(int d, int levels, int q, bool residual = true,
                                ModelKind kind = ModelKind::FeedforwardResidual);
    static ModelSpec polynomial_heat(int d, double horizon);

    /// Throws ConfigError if the spec is malformed.
    void validate() const;

    bool operator==(const ModelSpec&) const = default;
};

/// A named block of the flat parameter vector, column-major `rows x cols`.
struct Slot {
    std::string name;
    std::size_t offset = 0;
    int rows = 0;
    int cols = 0;

    std::size_t size() const noexcept { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
    bool operator==(const Slot&) const = default;
};

std::vector<Slot> layout(const ModelSpec& spec);
std::size_t parameter_count(const ModelSpec& spec);

struct ParameterVector {
    std::vector<double> values;
    std::vector<Slot> layout;

    std::size_t size() const noexcept { return values.size(); }
    std::span<const double> slot(std::string_view name) const;
    std::span<double> slot(std::string_view name);
};

ParameterVector zero_params(const ModelSpec& spec);

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases;
/// polynomial-heat starts at zero.
ParameterVector init_params(const ModelSpec& spec, std::uint64_t seed);

/// Parameters recorded as leaves of one tape.
struct BoundParams {
    std::vector<ad::Var> vars;
    std::vector<std::size_t> offsets;
    std::size_t total = 0;
};

BoundParams bind(ad::Tape& tape, const ModelSpec& spec, std::span<const double> theta);

/// Add the parameter adjoints of `bound` into `gradient` (length `bound.total`).
void accumulate_gradient(const ad::Tape& tape, const BoundParams& bound, std::span<double> gradient);

/// Record the model on `x` (d x K) and `t` (1 x K); returns output_dim x K.
ad::Var record(const ModelSpec& spec, ad::Tape& tape, const BoundParams& params, ad::Var x, ad::Var t);

/// Model output at a batch of points; `x` is d x K column-major.
/// Returns output_dim x K column-major.
std::vector<double> model_eval(const ModelSpec& spec, std::span<const double> theta,
                               std::span<const double> x, std::span<const double> t);

double model_eval(const ModelSpec& spec, std::span<const double> theta, std::span<const double> x, double t);

/// Value and spatial gradient of a scalar model at one point, using d
/// forward-mode tangents in one pass.
ad::DualVector grad_input(const ModelSpec& spec, std::span<const double> theta, std::span<const double> x,
                          double t);

/// Batched `grad_input`: returns the K values and the d x K gradients.
struct InputGradients {
    std::vector<double> values;
    std::vector<double> gradients;
};
InputGradients grad_input(const ModelSpec& spec, std::span<const double> theta, std::span<const double> x,
                          std::span<const double> t);

/// (grad_x u) . w and its parameter gradient (forward-over-reverse).
struct InnerGradient {
    double inner = 0.0;
    std::vector<double> gradient;
};
InnerGradient grad_params_of_inner(const ModelSpec& spec, std::span<const double> theta,
                                   std::span<const double> x, double t, std::span<const double> w);

} // namespace kolmo::nets
