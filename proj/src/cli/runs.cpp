#include "kolmo/cli/runs.hpp"

#include "kolmo/error.hpp"
#include "kolmo/eval/eval.hpp"
#include "kolmo/io/files.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <ostream>

#ifndef KOLMO_VERSION
#define KOLMO_VERSION "unknown"
#endif

namespace kolmo::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kSliceHeader = "alpha,t,psi-model,psi-reference,control-model,control-reference";
constexpr double kSliceTime = 0.75;

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

eval::Reference load_reference(const ExperimentConfig& config, const sde::Problem& problem,
                               const std::optional<fs::path>& path) {
    if (!path) return eval::default_reference(problem, config.n_inner, config.fd_grid());
    if (!fs::exists(*path)) throw IoError("reference file " + path->string() + " does not exist");
    const json header = io::read_reference_header(*path);
    if (header.contains("problem") && header.at("problem") != config.problem)
        throw ConsistencyError("reference " + path->string() + " belongs to problem " + header.at("problem").dump());
    auto table = std::make_shared<const eval::FdTable>(io::read_reference(*path));
    if (std::abs(table->T - problem.T) > 1e-12) throw ConsistencyError("reference horizon differs from the problem's");
    return eval::fd_tensor_product(std::move(table), problem.d);
}

const io::StoredModel& require_model(const io::Checkpoint& ck, const std::string& role, int d) {
    const auto* m = ck.find(role);
    if (!m) throw ConsistencyError("checkpoint has no model '" + role + "'");
    if (m->spec.d != d) throw ConsistencyError("checkpoint model '" + role + "' has dimension " +
                                               std::to_string(m->spec.d) + ", problem has " + std::to_string(d));
    return *m;
}

void write_slice(const fs::path& path, const sde::Problem& problem, losses::ModelRef u, const eval::Reference& ref) {
    const auto model = eval::hjb_postprocess(problem, u);
    const auto exact = eval::hjb_postprocess(problem, ref);
    std::string text = std::string(kSliceHeader) + "\n";
    std::vector<double> x(static_cast<std::size_t>(problem.d));
    for (int i = 0; i <= 80; ++i) {
        const double alpha = -2.0 + 0.05 * i;
        std::fill(x.begin(), x.end(), alpha);
        text += io::format_double(alpha) + "," + io::format_double(kSliceTime) + "," +
                io::format_double(model.tilted_potential(x, kSliceTime)) + "," +
                io::format_double(exact.tilted_potential(x, kSliceTime)) + "," +
                io::format_double(model.control(x, kSliceTime)[0]) + "," +
                io::format_double(exact.control(x, kSliceTime)[0]) + "\n";
    }
    write_text(path, text);
}

} // namespace

fs::path default_output_root() {
    if (const char* env = std::getenv("KOLMO_OUT"); env && *env) return env;
    return "runs";
}

int run_train(const ExperimentConfig& config, const RunSpec& run, const fs::path& out) {
    const sde::Problem problem = build_problem(config);
    const train::TrainConfig tc = build_train_config(config, run, problem.d, problem.T);
    ensure_dir(out);

    std::optional<eval::Reference> reference;
    if (problem.kind != sde::ProblemKind::BlackScholes)
        reference = eval::default_reference(problem, config.n_inner, config.fd_grid());

    const auto result = train::train(problem, tc, reference ? &*reference : nullptr);

    std::vector<std::string> rows;
    for (const auto& rec : result.log) rows.push_back(io::csv_row(rec));
    const fs::path metrics = out / "metrics.csv";
    fs::remove(metrics);
    io::append_csv(metrics, io::kMetricsHeader, rows);

    io::Checkpoint ck;
    ck.seed = run.seed;
    ck.step = result.steps_done;
    ck.extra = {{"loss_kind", run.loss}, {"K", run.K}, {"problem", config.problem}};
    ck.models.push_back({"u", tc.model, result.theta});
    if (result.theta_r) ck.models.push_back({"r", *tc.gradient_model, *result.theta_r});
    io::write_checkpoint(out / "checkpoint.bin", ck);

    json manifest;
    manifest["config"] = config_to_json(config);
    manifest["run"] = {{"loss", run.loss}, {"K", run.K}, {"seed", run.seed}};
    manifest["version"] = KOLMO_VERSION;
    manifest["steps_done"] = result.steps_done;
    manifest["status"] = result.failed ? "failed" : "ok";
    if (result.failed) manifest["failure"] = result.failure;
    manifest["peak_tape_bytes"] = result.tape.peak_doubles * sizeof(double);
    write_text(out / "manifest.json", manifest.dump(2) + "\n");
    return result.failed ? 1 : 0;
}

int run_eval(const ExperimentConfig& config, const fs::path& checkpoint, const std::optional<fs::path>& reference,
             const fs::path& out) {
    const sde::Problem problem = build_problem(config);
    const io::Checkpoint ck = io::read_checkpoint(checkpoint);
    const auto& u_model = require_model(ck, "u", problem.d);
    const auto* r_model = ck.find("r");
    if (r_model) require_model(ck, "r", problem.d);
    const eval::Reference ref = load_reference(config, problem, reference);
    ensure_dir(out);

    io::EvalRecord rec;
    rec.step = ck.step;
    rec.loss_kind = ck.extra.value("loss_kind", std::string());
    rec.K = ck.extra.value("K", 0);
    rec.seed = ck.seed;
    rec.n_samples = config.eval_samples;
    const losses::ModelRef u{&u_model.spec, u_model.params.values};
    try {
        rec.mse = eval::mse_eval(problem, u, ref, config.eval_samples, ck.seed).mse;
        rec.mse_grad = std::numeric_limits<double>::quiet_NaN();
        if (ref.has_gradient()) {
            const losses::ModelRef g = r_model ? losses::ModelRef{&r_model->spec, r_model->params.values} : u;
            rec.mse_grad = eval::mse_grad_eval(problem, g, ref, config.eval_samples, ck.seed).mse;
        }
        if (problem.kind == sde::ProblemKind::HjbDoubleWell) write_slice(out / "slice.csv", problem, u, ref);
    } catch (const NumericalError&) {
        rec.status = "error";
    } catch (const DomainError&) {
        rec.status = "error";
    }
    io::append_csv(out / "eval.csv", io::kEvalHeader, {io::csv_row(rec)});
    return rec.status == "ok" ? 0 : 1;
}

int run_diagnostics(const ExperimentConfig& config, const fs::path& checkpoint, const fs::path& out,
                    std::uint64_t seed) {
    const sde::Problem problem = build_problem(config);
    const io::Checkpoint ck = io::read_checkpoint(checkpoint);
    const auto& u_model = require_model(ck, "u", problem.d);
    const losses::ModelRef u{&u_model.spec, u_model.params.values};
    ensure_dir(out);

    const double dt = config.diag_dt.value_or(config.dt_after);
    const auto& Ks = config.diag_K.empty() ? config.K : config.diag_K;
    std::vector<std::string> rows;
    for (const auto& name : config.losses) {
        const auto kind = losses::parse_loss(name);
        std::optional<losses::ModelRef> r;
        if (losses::uses_gradient_network(kind)) {
            const auto& m = require_model(ck, "r", problem.d);
            r = losses::ModelRef{&m.spec, m.params.values};
        }
        for (int K : Ks) {
            eval::DiagnosticsConfig dc;
            dc.kind = kind;
            dc.K = K;
            dc.B = config.diag_B;
            dc.dt = dt;
            dc.seed = seed;
            dc.zero_noise = config.zero_noise;
            const auto diag = eval::variance_diagnostics(problem, u, r ? &*r : nullptr, dc);
            rows.push_back(io::csv_row(io::VarianceRecord{name, K, dt, dc.B, diag.loss_mean, diag.loss_std,
                                                          diag.grad_std_max, seed}));
        }
    }
    io::append_csv(out / "variance.csv", io::kVarianceHeader, rows);
    return 0;
}

int run_reference(const ExperimentConfig& config, const fs::path& out, std::ostream& log) {
    const sde::Problem problem = build_problem(config);
    switch (problem.kind) {
    case sde::ProblemKind::Heat:
        log << "closed-form\n";
        return 0;
    case sde::ProblemKind::HjbDoubleWell: {
        const auto grid = config.fd_grid();
        const auto table = eval::hjb_table(problem, grid);
        ensure_dir(out);
        const fs::path path = out / "reference.bin";
        io::write_reference(path, table,
                            {{"problem", config.problem}, {"kappa_tilde", problem.kappa_tilde}, {"eta", problem.eta}});

        ExperimentConfig one = config;
        one.overrides.d = 1;
        const sde::Problem line = build_problem(one);
        const double x0 = 0.0;
        const auto mc = eval::feynman_kac_at(line, std::span<const double>(&x0, 1), 0.0, 1 << 17, 1e-3, 0);
        const double fd = table.value(0.0, 0.0);
        log << "fd-tensor-product " << path.string() << "\n"
            << "V1(0,0): fd " << io::format_double(fd) << ", monte-carlo " << io::format_double(mc.mean) << " +- "
            << io::format_double(mc.standard_error) << ", relative error "
            << io::format_double(std::abs(fd - mc.mean) / std::abs(mc.mean)) << "\n";
        return 0;
    }
    default:
        log << "mc-feynman-kac\n";
        return 0;
    }
}

int run_sweep(const ExperimentConfig& config, const fs::path& out, std::ostream& log) {
    ensure_dir(out);
    const fs::path summary = out / "eval.csv";
    fs::remove(summary);
    int status = 0;
    for (const auto& run : expand(config)) {
        const fs::path dir = out / run.directory_name();
        log << run.directory_name() << "\n";
        status |= run_train(config, run, dir);
        fs::remove(dir / "eval.csv");
        status |= run_eval(config, dir / "checkpoint.bin", std::nullopt, dir);
        std::vector<std::string> rows;
        for (const auto& rec : io::read_eval(dir / "eval.csv")) rows.push_back(io::csv_row(rec));
        io::append_csv(summary, io::kEvalHeader, rows);
    }
    return status;
}

} // namespace kolmo::cli
