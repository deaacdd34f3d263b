#include "kolmo/nets/model.hpp"

#include "kolmo/error.hpp"
#include "kolmo/rng.hpp"

#include <algorithm>
#include <cmath>

namespace kolmo::nets {

namespace {

constexpr int kEvalChunk = 4096;

bool is_network(ModelKind kind) noexcept { return kind != ModelKind::PolynomialHeat; }

} // namespace

std::string_view kind_name(ModelKind kind) noexcept {
    switch (kind) {
    case ModelKind::FeedforwardResidual: return "feedforward-residual";
    case ModelKind::GradientNetwork: return "gradient-network";
    case ModelKind::PolynomialHeat: return "polynomial-heat";
    }
    return "unknown";
}

ModelKind parse_kind(std::string_view name) {
    for (ModelKind k : {ModelKind::FeedforwardResidual, ModelKind::GradientNetwork, ModelKind::PolynomialHeat})
        if (kind_name(k) == name) return k;
    throw ConfigError("unknown model kind '" + std::string(name) + "'");
}

ModelSpec ModelSpec::multilevel(int d, int levels, int q, bool residual, ModelKind kind) {
    if (levels < 1 || q < 1) throw ConfigError("multilevel: levels and q must be positive");
    ModelSpec s;
    s.kind = kind;
    s.d = d;
    s.hidden.assign(static_cast<std::size_t>(levels), q * d);
    s.residual = residual;
    s.validate();
    return s;
}

ModelSpec ModelSpec::polynomial_heat(int d, double horizon) {
    ModelSpec s;
    s.kind = ModelKind::PolynomialHeat;
    s.d = d;
    s.horizon = horizon;
    s.validate();
    return s;
}

void ModelSpec::validate() const {
    if (d < 1) throw ConfigError("model dimension must be positive");
    if (is_network(kind)) {
        if (hidden.empty()) throw ConfigError("network models need at least one hidden layer");
        for (int w : hidden)
            if (w < 1) throw ConfigError("hidden widths must be positive");
    } else if (!hidden.empty()) {
        throw ConfigError("polynomial-heat takes no hidden widths");
    }
}

std::vector<Slot> layout(const ModelSpec& spec) {
    spec.validate();
    std::vector<Slot> slots;
    std::size_t offset = 0;
    auto add = [&](std::string name, int rows, int cols) {
        slots.push_back({std::move(name), offset, rows, cols});
        offset += slots.back().size();
    };
    if (!is_network(spec.kind)) {
        add("theta", 3, 1);
        return slots;
    }
    int fan_in = spec.input_dim();
    for (std::size_t l = 0; l < spec.hidden.size(); ++l) {
        add("W" + std::to_string(l), spec.hidden[l], fan_in);
        add("b" + std::to_string(l), spec.hidden[l], 1);
        fan_in = spec.hidden[l];
    }
    add("Wout", spec.output_dim(), fan_in);
    add("bout", spec.output_dim(), 1);
    return slots;
}

std::size_t parameter_count(const ModelSpec& spec) {
    const auto slots = layout(spec);
    return slots.back().offset + slots.back().size();
}

std::span<const double> ParameterVector::slot(std::string_view name) const {
    for (const auto& s : layout)
        if (s.name == name) return std::span<const double>(values).subspan(s.offset, s.size());
    throw ConfigError("no parameter slot '" + std::string(name) + "'");
}

std::span<double> ParameterVector::slot(std::string_view name) {
    for (const auto& s : layout)
        if (s.name == name) return std::span<double>(values).subspan(s.offset, s.size());
    throw ConfigError("no parameter slot '" + std::string(name) + "'");
}

ParameterVector zero_params(const ModelSpec& spec) {
    ParameterVector p;
    p.layout = layout(spec);
    p.values.assign(p.layout.back().offset + p.layout.back().size(), 0.0);
    return p;
}

ParameterVector init_params(const ModelSpec& spec, std::uint64_t seed) {
    ParameterVector p = zero_params(spec);
    if (!is_network(spec.kind)) return p;
    const RngStream rng(seed, Stream::Init, 0);
    for (std::size_t s = 0; s < p.layout.size(); ++s) {
        const Slot& slot = p.layout[s];
        if (slot.name[0] != 'W') continue;
        const double bound = 1.0 / std::sqrt(static_cast<double>(slot.cols));
        for (std::size_t i = 0; i < slot.size(); ++i)
            p.values[slot.offset + i] = bound * (2.0 * rng.uniform(Purpose::Weights, s, 0, i) - 1.0);
    }
    return p;
}

BoundParams bind(ad::Tape& tape, const ModelSpec& spec, std::span<const double> theta) {
    const auto slots = layout(spec);
    BoundParams b;
    b.total = slots.back().offset + slots.back().size();
    if (theta.size() != b.total) throw DimensionError("parameter vector length does not match the model");
    auto leaf = [&](std::size_t offset, int rows, int cols) {
        b.vars.push_back(tape.param(rows, cols, theta.subspan(offset, static_cast<std::size_t>(rows) * cols)));
        b.offsets.push_back(offset);
    };
    for (std::size_t s = 0; s < slots.size(); ++s) {
        const Slot& slot = slots[s];
        if (s == 0 && is_network(spec.kind)) {
            // Split the first weight into its x block and its t column.
            leaf(slot.offset, slot.rows, spec.d);
            leaf(slot.offset + static_cast<std::size_t>(slot.rows) * spec.d, slot.rows, 1);
        } else {
            leaf(slot.offset, slot.rows, slot.cols);
        }
    }
    return b;
}

void accumulate_gradient(const ad::Tape& tape, const BoundParams& bound, std::span<double> gradient) {
    if (gradient.size() != bound.total) throw DimensionError("gradient buffer length mismatch");
    for (std::size_t i = 0; i < bound.vars.size(); ++i) {
        const auto adj = tape.adjoint(bound.vars[i]);
        double* out = gradient.data() + bound.offsets[i];
        for (std::size_t k = 0; k < adj.size(); ++k) out[k] += adj[k];
    }
}

ad::Var record(const ModelSpec& spec, ad::Tape& tape, const BoundParams& params, ad::Var x, ad::Var t) {
    if (tape.rows(x) != spec.d) throw DimensionError("model input has wrong spatial dimension");
    if (tape.rows(t) != 1 || tape.cols(t) != tape.cols(x)) throw DimensionError("time input shape mismatch");
    const auto& v = params.vars;
    if (!is_network(spec.kind)) {
        const ad::Var a = tape.slice_rows(v[0], 0, 1);
        const ad::Var c = tape.slice_rows(v[0], 1, 1);
        const ad::Var e = tape.slice_rows(v[0], 2, 1);
        const ad::Var quad = tape.mul(a, tape.sum_rows(tape.square(x)));
        const ad::Var lin = tape.mul(c, tape.scale_shift(t, -1.0, spec.horizon));
        return tape.add(tape.add(quad, lin), e);
    }
    ad::Var h = tape.silu(tape.add(tape.affine(v[0], x, v[2]), tape.mul(v[1], t)));
    std::size_t next = 3;
    for (std::size_t l = 1; l < spec.hidden.size(); ++l, next += 2) {
        const ad::Var z = tape.silu(tape.affine(v[next], h, v[next + 1]));
        h = spec.residual && spec.hidden[l] == spec.hidden[l - 1] ? tape.add(z, h) : z;
    }
    return tape.affine(v[next], h, v[next + 1]);
}

std::vector<double> model_eval(const ModelSpec& spec, std::span<const double> theta, std::span<const double> x,
                               std::span<const double> t) {
    const std::size_t d = static_cast<std::size_t>(spec.d);
    if (x.size() != d * t.size()) throw DimensionError("model_eval: x and t sizes disagree");
    const std::size_t n = t.size();
    const std::size_t out_dim = static_cast<std::size_t>(spec.output_dim());
    std::vector<double> out(out_dim * n);
    ad::Tape tape(0);
    for (std::size_t start = 0; start < n; start += kEvalChunk) {
        const std::size_t m = std::min<std::size_t>(kEvalChunk, n - start);
        tape.reset(0);
        const BoundParams p = bind(tape, spec, theta);
        const ad::Var xv = tape.input(spec.d, static_cast<int>(m), x.subspan(start * d, m * d));
        const ad::Var tv = tape.input(1, static_cast<int>(m), t.subspan(start, m));
        const auto y = tape.value(record(spec, tape, p, xv, tv));
        std::copy(y.begin(), y.end(), out.begin() + static_cast<std::ptrdiff_t>(start * out_dim));
    }
    return out;
}

double model_eval(const ModelSpec& spec, std::span<const double> theta, std::span<const double> x, double t) {
    if (spec.output_dim() != 1) throw DimensionError("model_eval: model is not scalar");
    const double tt[1] = {t};
    return model_eval(spec, theta, x, tt)[0];
}

InputGradients grad_input(const ModelSpec& spec, std::span<const double> theta, std::span<const double> x,
                          std::span<const double> t) {
    if (spec.output_dim() != 1) throw DimensionError("grad_input: model is not scalar");
    const std::size_t d = static_cast<std::size_t>(spec.d);
    if (x.size() != d * t.size()) throw DimensionError("grad_input: dimension mismatch between x and the model");
    const std::size_t n = t.size();
    InputGradients r;
    r.values.resize(n);
    r.gradients.resize(d * n);
    ad::Tape tape(spec.d);
    std::vector<double> seed;
    for (std::size_t start = 0; start < n; start += kEvalChunk) {
        const std::size_t m = std::min<std::size_t>(kEvalChunk, n - start);
        tape.reset(spec.d);
        seed.assign(d * d * m, 0.0);
        for (std::size_t p = 0; p < d; ++p)
            for (std::size_t k = 0; k < m; ++k) seed[p * d * m + k * d + p] = 1.0;
        const BoundParams bp = bind(tape, spec, theta);
        const ad::Var xv = tape.input(spec.d, static_cast<int>(m), x.subspan(start * d, m * d), seed);
        const ad::Var tv = tape.input(1, static_cast<int>(m), t.subspan(start, m));
        const ad::Var u = record(spec, tape, bp, xv, tv);
        const auto val = tape.value(u);
        std::copy(val.begin(), val.end(), r.values.begin() + static_cast<std::ptrdiff_t>(start));
        for (std::size_t p = 0; p < d; ++p) {
            const auto tan = tape.tangent(u, static_cast<int>(p));
            for (std::size_t k = 0; k < m; ++k) r.gradients[(start + k) * d + p] = tan.empty() ? 0.0 : tan[k];
        }
    }
    return r;
}

ad::DualVector grad_input(const ModelSpec& spec, std::span<const double> theta, std::span<const double> x,
                          double t) {
    if (x.size() != static_cast<std::size_t>(spec.d)) throw DimensionError("grad_input: dimension mismatch");
    const double tt[1] = {t};
    auto r = grad_input(spec, theta, x, tt);
    return {r.values[0], std::move(r.gradients)};
}

InnerGradient grad_params_of_inner(const ModelSpec& spec, std::span<const double> theta,
                                   std::span<const double> x, double t, std::span<const double> w) {
    if (spec.output_dim() != 1) throw DimensionError("grad_params_of_inner: model is not scalar");
    if (x.size() != static_cast<std::size_t>(spec.d) || w.size() != x.size())
        throw DimensionError("grad_params_of_inner: dimension mismatch");
    ad::Tape tape(1);
    const BoundParams bp = bind(tape, spec, theta);
    const ad::Var xv = tape.input(spec.d, 1, x, w);
    const double tt[1] = {t};
    const ad::Var tv = tape.input(1, 1, tt);
    const ad::Var s = tape.tangent_of(record(spec, tape, bp, xv, tv), 0);
    tape.backward(s);
    InnerGradient r;
    r.inner = tape.value(s)[0];
    r.gradient.assign(bp.total, 0.0);
    accumulate_gradient(tape, bp, r.gradient);
    return r;
}

} // namespace kolmo::nets
