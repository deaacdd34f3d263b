#include "kolmo/cli/config.hpp"

#include "kolmo/error.hpp"
#include "kolmo/losses/losses.hpp"

#include <fstream>
#include <set>

namespace kolmo::cli {

using nlohmann::json;

namespace {

template <typename T>
std::vector<T> scalar_or_list(const json& v) {
    if (v.is_array()) {
        if (v.empty()) throw ConfigError("list-valued keys must not be empty");
        return v.get<std::vector<T>>();
    }
    return {v.get<T>()};
}

template <typename T>
json list_or_scalar(const std::vector<T>& v) {
    if (v.size() == 1) return v.front();
    return v;
}

template <typename T>
void read_opt(const json& j, const char* key, std::optional<T>& out) {
    if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        "problem", "d", "T", "nu", "bbar", "kappa", "rho", "kappa_tilde", "eta", "xi_lo", "xi_hi", "tau_lo",
        "tau_hi", "loss", "K", "seed", "model", "levels", "q", "residual", "steps", "lr_before", "lr_after",
        "dt_before", "dt_after", "milestone", "time_limit", "wall_clock", "tape_budget_bytes", "zero_noise",
        "metrics_every", "diag_batches", "eval_samples", "n_inner", "diag_K", "diag_B", "diag_dt", "fd_M",
        "fd_nx", "fd_nt"};
    return keys;
}

} // namespace

ExperimentConfig config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [key, value] : j.items())
        if (!known_keys().count(key)) throw ConfigError("unknown config key '" + key + "'");
    ExperimentConfig c;
    try {
        read(j, "problem", c.problem);
        auto& o = c.overrides;
        read_opt(j, "d", o.d);
        read_opt(j, "T", o.T);
        read_opt(j, "nu", o.nu);
        read_opt(j, "bbar", o.bbar);
        read_opt(j, "kappa", o.kappa);
        read_opt(j, "rho", o.rho);
        read_opt(j, "kappa_tilde", o.kappa_tilde);
        read_opt(j, "eta", o.eta);
        read_opt(j, "xi_lo", o.xi_lo);
        read_opt(j, "xi_hi", o.xi_hi);
        read_opt(j, "tau_lo", o.tau_lo);
        read_opt(j, "tau_hi", o.tau_hi);
        if (j.contains("loss")) c.losses = scalar_or_list<std::string>(j.at("loss"));
        if (j.contains("K")) c.K = scalar_or_list<int>(j.at("K"));
        if (j.contains("seed")) c.seeds = scalar_or_list<std::uint64_t>(j.at("seed"));
        read(j, "model", c.model);
        read(j, "levels", c.levels);
        read(j, "q", c.q);
        read(j, "residual", c.residual);
        read(j, "steps", c.steps);
        read(j, "lr_before", c.lr_before);
        read(j, "lr_after", c.lr_after);
        read(j, "dt_before", c.dt_before);
        read(j, "dt_after", c.dt_after);
        read(j, "milestone", c.milestone);
        read_opt(j, "time_limit", c.time_limit);
        read(j, "wall_clock", c.wall_clock);
        read(j, "tape_budget_bytes", c.tape_budget_bytes);
        read(j, "zero_noise", c.zero_noise);
        read(j, "metrics_every", c.metrics_every);
        read(j, "diag_batches", c.diag_batches);
        read(j, "eval_samples", c.eval_samples);
        read(j, "n_inner", c.n_inner);
        if (j.contains("diag_K")) c.diag_K = scalar_or_list<int>(j.at("diag_K"));
        read(j, "diag_B", c.diag_B);
        read_opt(j, "diag_dt", c.diag_dt);
        read(j, "fd_M", c.fd_M);
        read(j, "fd_nx", c.fd_nx);
        read(j, "fd_nt", c.fd_nt);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid config value: ") + e.what());
    }
    for (const auto& l : c.losses) losses::parse_loss(l);
    nets::parse_kind(c.model);
    for (int k : c.K)
        if (k < 1) throw ConfigError("K must be positive");
    if (c.diag_B < 2) throw ConfigError("diag_B must be at least 2");
    return c;
}

json config_to_json(const ExperimentConfig& c) {
    json j;
    j["problem"] = c.problem;
    const auto& o = c.overrides;
    auto put = [&](const char* key, const auto& opt) {
        if (opt) j[key] = *opt;
    };
    put("d", o.d);
    put("T", o.T);
    put("nu", o.nu);
    put("bbar", o.bbar);
    put("kappa", o.kappa);
    put("rho", o.rho);
    put("kappa_tilde", o.kappa_tilde);
    put("eta", o.eta);
    put("xi_lo", o.xi_lo);
    put("xi_hi", o.xi_hi);
    put("tau_lo", o.tau_lo);
    put("tau_hi", o.tau_hi);
    j["loss"] = list_or_scalar(c.losses);
    j["K"] = list_or_scalar(c.K);
    j["seed"] = list_or_scalar(c.seeds);
    j["model"] = c.model;
    j["levels"] = c.levels;
    j["q"] = c.q;
    j["residual"] = c.residual;
    j["steps"] = c.steps;
    j["lr_before"] = c.lr_before;
    j["lr_after"] = c.lr_after;
    j["dt_before"] = c.dt_before;
    j["dt_after"] = c.dt_after;
    j["milestone"] = c.milestone;
    put("time_limit", c.time_limit);
    j["wall_clock"] = c.wall_clock;
    j["tape_budget_bytes"] = c.tape_budget_bytes;
    j["zero_noise"] = c.zero_noise;
    j["metrics_every"] = c.metrics_every;
    j["diag_batches"] = c.diag_batches;
    j["eval_samples"] = c.eval_samples;
    j["n_inner"] = c.n_inner;
    if (!c.diag_K.empty()) j["diag_K"] = c.diag_K;
    j["diag_B"] = c.diag_B;
    put("diag_dt", c.diag_dt);
    j["fd_M"] = c.fd_M;
    j["fd_nx"] = c.fd_nx;
    j["fd_nt"] = c.fd_nt;
    return j;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

std::string RunSpec::directory_name() const {
    return loss + "-K" + std::to_string(K) + "-seed" + std::to_string(seed);
}

std::vector<RunSpec> expand(const ExperimentConfig& c) {
    std::vector<RunSpec> runs;
    for (const auto& l : c.losses)
        for (int k : c.K)
            for (auto s : c.seeds) runs.push_back({l, k, s});
    return runs;
}

sde::Problem build_problem(const ExperimentConfig& c) { return sde::make_problem(c.problem, c.overrides); }

train::TrainConfig build_train_config(const ExperimentConfig& c, const RunSpec& run, int d, double horizon) {
    train::TrainConfig t;
    t.loss = losses::parse_loss(run.loss);
    const auto kind = nets::parse_kind(c.model);
    if (kind == nets::ModelKind::PolynomialHeat) t.model = nets::ModelSpec::polynomial_heat(d, horizon);
    else if (kind == nets::ModelKind::FeedforwardResidual) t.model = nets::ModelSpec::multilevel(d, c.levels, c.q, c.residual);
    else throw ConfigError("the trained model u must be scalar");
    if (losses::uses_gradient_network(t.loss))
        t.gradient_model = nets::ModelSpec::multilevel(d, c.levels, c.q, c.residual, nets::ModelKind::GradientNetwork);
    t.steps = c.steps;
    t.K = run.K;
    t.lr_before = c.lr_before;
    t.lr_after = c.lr_after;
    t.dt_before = c.dt_before;
    t.dt_after = c.dt_after;
    t.milestone = c.milestone;
    t.time_limit_seconds = c.time_limit;
    t.seed = run.seed;
    t.metrics_every = c.metrics_every;
    t.diag_batches = c.diag_batches;
    t.eval_samples = c.eval_samples;
    t.wall_clock = c.wall_clock;
    t.tape_budget_bytes = static_cast<std::size_t>(c.tape_budget_bytes);
    t.zero_noise = c.zero_noise;
    t.validate();
    return t;
}

} // namespace kolmo::cli
