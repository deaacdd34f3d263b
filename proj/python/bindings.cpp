#include "kolmo/cli/config.hpp"
#include "kolmo/cli/runs.hpp"
#include "kolmo/error.hpp"
#include "kolmo/eval/eval.hpp"
#include "kolmo/io/files.hpp"
#include "kolmo/losses/losses.hpp"
#include "kolmo/nets/model.hpp"
#include "kolmo/sde/problem.hpp"
#include "kolmo/train/train.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

namespace py = pybind11;
using namespace kolmo;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::span<const double> view(const Array& a) { return {a.data(), static_cast<std::size_t>(a.size())}; }

Array to_array(const std::vector<double>& v) {
    Array out(static_cast<py::ssize_t>(v.size()));
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

/// Points as a (K, d) array; row k is one point, matching the column-major d x K layout.
std::pair<Array, int> points(const Array& x, int d) {
    if (x.ndim() == 1 && x.shape(0) == d) return {x, 1};
    if (x.ndim() != 2 || x.shape(1) != d) throw DimensionError("points must have shape (K, d)");
    return {x, static_cast<int>(x.shape(0))};
}

sde::Problem problem_from(const std::string& name, const py::kwargs& kw) {
    sde::ProblemOverrides o;
    for (const auto& [k, v] : kw) {
        const auto key = k.cast<std::string>();
        if (key == "d") o.d = v.cast<int>();
        else if (key == "T") o.T = v.cast<double>();
        else if (key == "nu") o.nu = v.cast<double>();
        else if (key == "bbar") o.bbar = v.cast<double>();
        else if (key == "kappa") o.kappa = v.cast<double>();
        else if (key == "rho") o.rho = v.cast<double>();
        else if (key == "kappa_tilde") o.kappa_tilde = v.cast<double>();
        else if (key == "eta") o.eta = v.cast<double>();
        else if (key == "xi_lo") o.xi_lo = v.cast<double>();
        else if (key == "xi_hi") o.xi_hi = v.cast<double>();
        else if (key == "tau_lo") o.tau_lo = v.cast<double>();
        else if (key == "tau_hi") o.tau_hi = v.cast<double>();
        else throw ConfigError("unknown problem override '" + key + "'");
    }
    return sde::make_problem(name, o);
}

losses::BatchSource batch_source(int K, double dt, std::uint64_t seed, std::uint64_t step) {
    losses::BatchSource s;
    s.K = K;
    s.dt = dt;
    s.rng = RngStream(seed, Stream::Train, step);
    return s;
}

py::dict gradient_dict(const losses::GradientReport& rep) {
    py::dict d;
    d["loss"] = rep.loss;
    d["gradient"] = to_array(rep.gradient);
    d["gradient_r"] = to_array(rep.gradient_r);
    d["peak_nodes"] = rep.tape.peak_nodes;
    return d;
}

py::dict record_dict(const train::MetricsRecord& r) {
    py::dict d;
    d["step"] = r.step;
    d["wall_time_seconds"] = r.wall_time_seconds;
    d["loss_kind"] = r.loss_kind;
    d["K"] = r.K;
    d["dt"] = r.dt;
    d["loss_mean"] = r.loss_mean;
    d["loss_std"] = r.loss_std;
    d["grad_std_max"] = r.grad_std_max;
    d["mse"] = r.mse;
    d["mse_grad"] = r.mse_grad;
    d["seed"] = r.seed;
    d["status"] = r.status;
    return d;
}

cli::ExperimentConfig config_from(const py::dict& d) {
    const auto text = py::module_::import("json").attr("dumps")(d).cast<std::string>();
    return cli::config_from_json(nlohmann::json::parse(text));
}

} // namespace

PYBIND11_MODULE(_kolmo, m) {
    m.doc() = "Kolmogorov PDE solvers trained with SDE-based losses";

    // Translators are tried newest first: register the base class first.
    py::register_exception<Error>(m, "KolmoError", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);

    py::class_<sde::Problem>(m, "Problem")
        .def_readonly("d", &sde::Problem::d)
        .def_readonly("T", &sde::Problem::T)
        .def_property_readonly("name", &sde::Problem::name)
        .def("terminal", [](const sde::Problem& p, const Array& x) {
            auto [a, K] = points(x, p.d);
            std::vector<double> g(static_cast<std::size_t>(K));
            for (int k = 0; k < K; ++k) g[static_cast<std::size_t>(k)] = p.terminal(a.data() + static_cast<std::size_t>(k) * p.d);
            return to_array(g);
        });
    m.def("make_problem", &problem_from, py::arg("name"),
          "Built-in problem: heat, black-scholes or hjb-doublewell; keyword overrides such as d=10.");

    py::class_<nets::ModelSpec>(m, "ModelSpec")
        .def_readonly("d", &nets::ModelSpec::d)
        .def_readonly("hidden", &nets::ModelSpec::hidden)
        .def_property_readonly("kind", [](const nets::ModelSpec& s) { return std::string(nets::kind_name(s.kind)); })
        .def_property_readonly("parameter_count", [](const nets::ModelSpec& s) { return nets::parameter_count(s); })
        .def("__eq__", [](const nets::ModelSpec& a, const nets::ModelSpec& b) { return a == b; })
        .def("__repr__", [](const nets::ModelSpec& s) { return "ModelSpec(" + io::spec_to_json(s).dump() + ")"; });
    m.def(
        "multilevel",
        [](int d, int levels, int q, bool residual, bool gradient) {
            return nets::ModelSpec::multilevel(d, levels, q, residual,
                                               gradient ? nets::ModelKind::GradientNetwork
                                                        : nets::ModelKind::FeedforwardResidual);
        },
        py::arg("d"), py::arg("levels") = 3, py::arg("q") = 3, py::arg("residual") = true, py::arg("gradient") = false);
    m.def("polynomial_heat", &nets::ModelSpec::polynomial_heat, py::arg("d"), py::arg("horizon") = 1.0);
    m.def(
        "init_params", [](const nets::ModelSpec& s, std::uint64_t seed) { return to_array(nets::init_params(s, seed).values); },
        py::arg("spec"), py::arg("seed") = 0);

    m.def(
        "model_eval",
        [](const nets::ModelSpec& s, const Array& theta, const Array& x, const Array& t) {
            auto [a, K] = points(x, s.d);
            if (t.size() != K) throw DimensionError("t must have one entry per point");
            const auto y = nets::model_eval(s, view(theta), view(a), view(t));
            Array out(std::vector<py::ssize_t>{K, s.output_dim()});
            std::copy(y.begin(), y.end(), out.mutable_data());
            return out;
        },
        py::arg("spec"), py::arg("theta"), py::arg("x"), py::arg("t"),
        "Model values at K points; x has shape (K, d), t shape (K,). Returns (K, output_dim).");
    m.def(
        "grad_input",
        [](const nets::ModelSpec& s, const Array& theta, const Array& x, const Array& t) {
            auto [a, K] = points(x, s.d);
            if (t.size() != K) throw DimensionError("t must have one entry per point");
            const auto g = nets::grad_input(s, view(theta), view(a), view(t));
            Array grads(std::vector<py::ssize_t>{K, s.d});
            std::copy(g.gradients.begin(), g.gradients.end(), grads.mutable_data());
            return py::make_tuple(to_array(g.values), grads);
        },
        py::arg("spec"), py::arg("theta"), py::arg("x"), py::arg("t"), "Values (K,) and spatial gradients (K, d).");

    m.def(
        "compute_gradient",
        [](const std::string& loss, const sde::Problem& p, const nets::ModelSpec& s, const Array& theta, int K,
           double dt, std::uint64_t seed, std::uint64_t step, std::optional<nets::ModelSpec> r_spec,
           std::optional<Array> r_theta) {
            const auto kind = losses::parse_loss(loss);
            const losses::ModelRef u{&s, view(theta)};
            std::optional<losses::ModelRef> r;
            if (r_spec && r_theta) r = losses::ModelRef{&*r_spec, view(*r_theta)};
            py::gil_scoped_release release;
            const auto rep = losses::compute_gradient(kind, p, u, r ? &*r : nullptr, batch_source(K, dt, seed, step));
            py::gil_scoped_acquire acquire;
            return gradient_dict(rep);
        },
        py::arg("loss"), py::arg("problem"), py::arg("spec"), py::arg("theta"), py::arg("K") = 128,
        py::arg("dt") = 1e-2, py::arg("seed") = 0, py::arg("step") = 0, py::arg("r_spec") = py::none(),
        py::arg("r_theta") = py::none(), "Loss and parameter gradient on the training batch keyed by (seed, step).");

    m.def(
        "train",
        [](const sde::Problem& p, const std::string& loss, const nets::ModelSpec& s, int steps, int K, double lr_before,
           double lr_after, double dt_before, double dt_after, std::uint64_t seed, int metrics_every,
           int eval_samples) {
            train::TrainConfig c;
            c.loss = losses::parse_loss(loss);
            c.model = s;
            if (losses::uses_gradient_network(c.loss)) {
                if (s.hidden.empty()) throw ConfigError("gradient-network losses need a network model u");
                c.gradient_model = s;
                c.gradient_model->kind = nets::ModelKind::GradientNetwork;
            }
            c.steps = steps;
            c.K = K;
            c.lr_before = lr_before;
            c.lr_after = lr_after;
            c.dt_before = dt_before;
            c.dt_after = dt_after;
            c.seed = seed;
            c.metrics_every = metrics_every;
            c.eval_samples = eval_samples;
            std::optional<eval::Reference> ref;
            if (eval_samples > 0 && p.kind != sde::ProblemKind::BlackScholes) ref = eval::default_reference(p);
            train::TrainResult res;
            {
                py::gil_scoped_release release;
                res = train::train(p, c, ref ? &*ref : nullptr);
            }
            py::dict out;
            out["theta"] = to_array(res.theta.values);
            out["theta_r"] = res.theta_r ? py::object(to_array(res.theta_r->values)) : py::none();
            py::list log;
            for (const auto& r : res.log) log.append(record_dict(r));
            out["log"] = log;
            out["steps_done"] = res.steps_done;
            out["failed"] = res.failed;
            out["failure"] = res.failure;
            return out;
        },
        py::arg("problem"), py::arg("loss"), py::arg("spec"), py::arg("steps") = 1000, py::arg("K") = 128,
        py::arg("lr_before") = 5e-4, py::arg("lr_after") = 5e-6, py::arg("dt_before") = 1e-2,
        py::arg("dt_after") = 1e-3, py::arg("seed") = 0, py::arg("metrics_every") = 0, py::arg("eval_samples") = 0);

    m.def(
        "mse_eval",
        [](const sde::Problem& p, const nets::ModelSpec& s, const Array& theta, int N, std::uint64_t seed) {
            const auto ref = eval::default_reference(p);
            const auto e = eval::mse_eval(p, {&s, view(theta)}, ref, N, seed);
            return py::make_tuple(e.mse, e.standard_error);
        },
        py::arg("problem"), py::arg("spec"), py::arg("theta"), py::arg("N") = 1 << 15, py::arg("seed") = 0,
        "Mean squared error against the problem's default reference, with its standard error.");
    m.def(
        "variance_diagnostics",
        [](const std::string& loss, const sde::Problem& p, const nets::ModelSpec& s, const Array& theta, int K, int B,
           double dt, std::uint64_t seed) {
            eval::DiagnosticsConfig dc;
            dc.kind = losses::parse_loss(loss);
            dc.K = K;
            dc.B = B;
            dc.dt = dt;
            dc.seed = seed;
            const auto d = eval::variance_diagnostics(p, {&s, view(theta)}, nullptr, dc);
            py::dict out;
            out["loss_mean"] = d.loss_mean;
            out["loss_std"] = d.loss_std;
            out["grad_std_max"] = d.grad_std_max;
            out["grad_std"] = to_array(d.grad_std);
            return out;
        },
        py::arg("loss"), py::arg("problem"), py::arg("spec"), py::arg("theta"), py::arg("K") = 128, py::arg("B") = 30,
        py::arg("dt") = 1e-3, py::arg("seed") = 0);
    m.def(
        "feynman_kac_at",
        [](const sde::Problem& p, const Array& x, double t, long n, double dt, std::uint64_t seed, bool exact) {
            const auto e = eval::feynman_kac_at(p, view(x), t, n, dt, seed, exact);
            return py::make_tuple(e.mean, e.standard_error);
        },
        py::arg("problem"), py::arg("x"), py::arg("t") = 0.0, py::arg("n") = 1 << 16, py::arg("dt") = 1e-3,
        py::arg("seed") = 0, py::arg("exact") = false);

    m.def(
        "run_train",
        [](const py::dict& config, const std::filesystem::path& out) {
            const auto c = config_from(config);
            const auto runs = cli::expand(c);
            if (runs.size() != 1) throw ConfigError("run_train takes a single run");
            py::gil_scoped_release release;
            return cli::run_train(c, runs.front(), out);
        },
        py::arg("config"), py::arg("out"), "Same as `kolmo train`; returns the exit status.");
    m.def(
        "run_eval",
        [](const py::dict& config, const std::filesystem::path& checkpoint, const std::filesystem::path& out) {
            const auto c = config_from(config);
            py::gil_scoped_release release;
            return cli::run_eval(c, checkpoint, std::nullopt, out);
        },
        py::arg("config"), py::arg("checkpoint"), py::arg("out"));
    m.def(
        "read_checkpoint",
        [](const std::filesystem::path& path) {
            const auto ck = io::read_checkpoint(path);
            py::dict out;
            out["seed"] = ck.seed;
            out["step"] = ck.step;
            py::dict models;
            for (const auto& sm : ck.models) models[py::str(sm.role)] = py::make_tuple(sm.spec, to_array(sm.params.values));
            out["models"] = models;
            return out;
        },
        py::arg("path"));
}
