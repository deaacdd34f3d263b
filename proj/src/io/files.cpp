#include "kolmo/io/files.hpp"

#include "kolmo/error.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace kolmo::io {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kCheckpointMagic[] = "KOLMOCKPT1\n";
constexpr char kReferenceMagic[] = "KOLMOREF1\n";

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

void write_container(const fs::path& path, const char* magic, const json& header, const std::vector<const std::vector<double>*>& blocks) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    const std::string h = header.dump();
    const std::uint64_t len = h.size();
    out.write(magic, static_cast<std::streamsize>(std::strlen(magic)));
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (const auto* b : blocks)
        out.write(reinterpret_cast<const char*>(b->data()), static_cast<std::streamsize>(b->size() * sizeof(double)));
    if (!out) throw IoError("failed writing " + path.string());
}

struct Container {
    json header;
    std::vector<double> data;
};

Container read_container(const fs::path& path, const char* magic) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    const std::size_t mlen = std::strlen(magic);
    std::string m(mlen, '\0');
    in.read(m.data(), static_cast<std::streamsize>(mlen));
    if (!in || m != magic) throw IoError(path.string() + ": bad magic");
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!in || len > (1ull << 30)) throw IoError(path.string() + ": bad header length");
    std::string h(len, '\0');
    in.read(h.data(), static_cast<std::streamsize>(len));
    if (!in) throw IoError(path.string() + ": truncated header");
    Container c;
    try {
        c.header = json::parse(h);
    } catch (const json::exception& e) {
        throw IoError(path.string() + ": invalid header: " + e.what());
    }
    const std::string rest((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (rest.size() % sizeof(double) != 0) throw IoError(path.string() + ": truncated data");
    c.data.resize(rest.size() / sizeof(double));
    std::memcpy(c.data.data(), rest.data(), rest.size());
    return c;
}

json layout_to_json(const std::vector<nets::Slot>& layout) {
    json a = json::array();
    for (const auto& s : layout) a.push_back({{"name", s.name}, {"offset", s.offset}, {"rows", s.rows}, {"cols", s.cols}});
    return a;
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

template <typename F>
auto read_rows(const fs::path& path, const char* header, std::size_t columns, F&& parse) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != header) throw IoError(path.string() + ": unexpected header");
    std::vector<decltype(parse(std::vector<std::string>{}))> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto cells = split(line);
        if (cells.size() != columns) throw IoError(path.string() + ": wrong column count");
        rows.push_back(parse(cells));
    }
    return rows;
}

} // namespace

json spec_to_json(const nets::ModelSpec& spec) {
    return {{"kind", std::string(nets::kind_name(spec.kind))},
            {"d", spec.d},
            {"hidden", spec.hidden},
            {"residual", spec.residual},
            {"horizon", spec.horizon}};
}

nets::ModelSpec spec_from_json(const json& j) {
    try {
        nets::ModelSpec s;
        s.kind = nets::parse_kind(j.at("kind").get<std::string>());
        s.d = j.at("d").get<int>();
        s.hidden = j.value("hidden", std::vector<int>{});
        s.residual = j.value("residual", true);
        s.horizon = j.value("horizon", 1.0);
        s.validate();
        return s;
    } catch (const json::exception& e) {
        throw IoError(std::string("invalid model spec: ") + e.what());
    }
}

const StoredModel* Checkpoint::find(const std::string& role) const {
    for (const auto& m : models)
        if (m.role == role) return &m;
    return nullptr;
}

void write_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
    json h = ckpt.extra.is_object() ? ckpt.extra : json::object();
    h["seed"] = ckpt.seed;
    h["step"] = ckpt.step;
    h["models"] = json::array();
    std::vector<const std::vector<double>*> blocks;
    for (const auto& m : ckpt.models) {
        if (m.params.size() != nets::parameter_count(m.spec)) throw IoError("checkpoint: parameters do not match spec");
        h["models"].push_back({{"role", m.role},
                               {"spec", spec_to_json(m.spec)},
                               {"layout", layout_to_json(m.params.layout)},
                               {"count", m.params.size()}});
        blocks.push_back(&m.params.values);
    }
    write_container(path, kCheckpointMagic, h, blocks);
}

Checkpoint read_checkpoint(const fs::path& path) {
    const Container c = read_container(path, kCheckpointMagic);
    Checkpoint ck;
    try {
        ck.seed = c.header.at("seed").get<std::uint64_t>();
        ck.step = c.header.at("step").get<int>();
        for (const auto& [key, value] : c.header.items())
            if (key != "seed" && key != "step" && key != "models") ck.extra[key] = value;
        std::size_t offset = 0;
        for (const auto& m : c.header.at("models")) {
            StoredModel sm;
            sm.role = m.at("role").get<std::string>();
            sm.spec = spec_from_json(m.at("spec"));
            sm.params = nets::zero_params(sm.spec);
            const std::size_t n = m.at("count").get<std::size_t>();
            if (n != sm.params.size() || layout_to_json(sm.params.layout) != m.at("layout"))
                throw IoError(path.string() + ": layout does not match the stored spec");
            if (offset + n > c.data.size()) throw IoError(path.string() + ": truncated parameter data");
            std::copy_n(c.data.begin() + static_cast<std::ptrdiff_t>(offset), n, sm.params.values.begin());
            offset += n;
            ck.models.push_back(std::move(sm));
        }
        if (offset != c.data.size()) throw IoError(path.string() + ": trailing data");
    } catch (const json::exception& e) {
        throw IoError(path.string() + ": invalid header: " + e.what());
    }
    return ck;
}

void write_reference(const fs::path& path, const eval::FdTable& table, const json& extra) {
    json h = extra.is_object() ? extra : json::object();
    h["M"] = table.grid.M;
    h["n_x"] = table.grid.n_x;
    h["n_t"] = table.grid.n_t;
    h["T"] = table.T;
    write_container(path, kReferenceMagic, h, {&table.values, &table.derivatives});
}

json read_reference_header(const fs::path& path) { return read_container(path, kReferenceMagic).header; }

eval::FdTable read_reference(const fs::path& path) {
    const Container c = read_container(path, kReferenceMagic);
    eval::FdTable t;
    try {
        t.grid.M = c.header.at("M").get<double>();
        t.grid.n_x = c.header.at("n_x").get<int>();
        t.grid.n_t = c.header.at("n_t").get<int>();
        t.T = c.header.at("T").get<double>();
    } catch (const json::exception& e) {
        throw IoError(path.string() + ": invalid header: " + e.what());
    }
    const std::size_t n = static_cast<std::size_t>(t.grid.n_t + 1) * static_cast<std::size_t>(t.grid.n_x);
    if (c.data.size() != 2 * n) throw IoError(path.string() + ": table size does not match header");
    t.values.assign(c.data.begin(), c.data.begin() + static_cast<std::ptrdiff_t>(n));
    t.derivatives.assign(c.data.begin() + static_cast<std::ptrdiff_t>(n), c.data.end());
    return t;
}

const char* const kMetricsHeader =
    "step,wall-time-seconds,loss-kind,K,dt,loss-mean,loss-std,grad-std-max,mse,mse-grad,seed,status";
const char* const kEvalHeader = "step,loss-kind,K,seed,n-samples,mse,mse-grad,status";
const char* const kVarianceHeader = "loss-kind,K,dt,B,loss-mean,loss-std,grad-std-max,seed";

std::string format_double(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, r.ptr);
}

double parse_double(const std::string& s) {
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    double x = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), x);
    if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) throw IoError("not a number: '" + s + "'");
    return x;
}

std::string csv_row(const train::MetricsRecord& r) {
    std::ostringstream o;
    o << r.step << ',' << format_double(r.wall_time_seconds) << ',' << r.loss_kind << ',' << r.K << ','
      << format_double(r.dt) << ',' << format_double(r.loss_mean) << ',' << format_double(r.loss_std) << ','
      << format_double(r.grad_std_max) << ',' << format_double(r.mse) << ',' << format_double(r.mse_grad) << ','
      << r.seed << ',' << r.status;
    return o.str();
}

std::string csv_row(const EvalRecord& r) {
    std::ostringstream o;
    o << r.step << ',' << r.loss_kind << ',' << r.K << ',' << r.seed << ',' << r.n_samples << ','
      << format_double(r.mse) << ',' << format_double(r.mse_grad) << ',' << r.status;
    return o.str();
}

std::string csv_row(const VarianceRecord& r) {
    std::ostringstream o;
    o << r.loss_kind << ',' << r.K << ',' << format_double(r.dt) << ',' << r.B << ',' << format_double(r.loss_mean)
      << ',' << format_double(r.loss_std) << ',' << format_double(r.grad_std_max) << ',' << r.seed;
    return o.str();
}

void append_csv(const fs::path& path, const char* header, const std::vector<std::string>& rows) {
    bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
    if (!fresh) {
        std::ifstream in(path);
        std::string first;
        std::getline(in, first);
        if (first != header) throw IoError(path.string() + ": existing header differs");
    }
    std::ofstream out(path, std::ios::app);
    if (!out) throw IoError("cannot open " + path.string() + " for appending");
    if (fresh) out << header << '\n';
    for (const auto& r : rows) out << r << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

std::vector<train::MetricsRecord> read_metrics(const fs::path& path) {
    return read_rows(path, kMetricsHeader, 12, [](const std::vector<std::string>& c) {
        train::MetricsRecord r;
        r.step = std::stoi(c[0]);
        r.wall_time_seconds = parse_double(c[1]);
        r.loss_kind = c[2];
        r.K = std::stoi(c[3]);
        r.dt = parse_double(c[4]);
        r.loss_mean = parse_double(c[5]);
        r.loss_std = parse_double(c[6]);
        r.grad_std_max = parse_double(c[7]);
        r.mse = parse_double(c[8]);
        r.mse_grad = parse_double(c[9]);
        r.seed = std::stoull(c[10]);
        r.status = c[11];
        return r;
    });
}

std::vector<EvalRecord> read_eval(const fs::path& path) {
    return read_rows(path, kEvalHeader, 8, [](const std::vector<std::string>& c) {
        EvalRecord r;
        r.step = std::stoi(c[0]);
        r.loss_kind = c[1];
        r.K = std::stoi(c[2]);
        r.seed = std::stoull(c[3]);
        r.n_samples = std::stoi(c[4]);
        r.mse = parse_double(c[5]);
        r.mse_grad = parse_double(c[6]);
        r.status = c[7];
        return r;
    });
}

std::vector<VarianceRecord> read_variance(const fs::path& path) {
    return read_rows(path, kVarianceHeader, 8, [](const std::vector<std::string>& c) {
        VarianceRecord r;
        r.loss_kind = c[0];
        r.K = std::stoi(c[1]);
        r.dt = parse_double(c[2]);
        r.B = std::stoi(c[3]);
        r.loss_mean = parse_double(c[4]);
        r.loss_std = parse_double(c[5]);
        r.grad_std_max = parse_double(c[6]);
        r.seed = std::stoull(c[7]);
        return r;
    });
}

} // namespace kolmo::io
