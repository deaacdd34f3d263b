#include "kolmo/autodiff/tape.hpp"

#include "kolmo/error.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>

namespace kolmo::ad {

namespace {

using Mat = Eigen::Map<Eigen::MatrixXd>;
using CMat = Eigen::Map<const Eigen::MatrixXd>;

// Index of element (i, j) of an operand of shape (r, c) broadcast to a larger shape.
inline std::size_t bidx(int r, int c, int i, int j) noexcept {
    return static_cast<std::size_t>(r == 1 ? 0 : i) +
           static_cast<std::size_t>(c == 1 ? 0 : j) * static_cast<std::size_t>(r);
}

int broadcast_dim(int x, int y, const char* what) {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    throw DimensionError(std::string("incompatible shapes for ") + what);
}

} // namespace

std::string_view op_name(Op op) noexcept {
    switch (op) {
    case Op::Input: return "input";
    case Op::Param: return "param";
    case Op::Affine: return "affine";
    case Op::Add: return "add";
    case Op::Mul: return "mul";
    case Op::ScaleShift: return "scale_shift";
    case Op::Silu: return "silu";
    case Op::Square: return "square";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Inner: return "inner";
    case Op::SumRows: return "sum_rows";
    case Op::MeanCols: return "mean_cols";
    case Op::SliceRows: return "slice_rows";
    case Op::ScatterCols: return "scatter_cols";
    case Op::HingeMin: return "hinge_min";
    case Op::TangentOf: return "tangent_of";
    }
    return "unknown";
}

Tape::Tape(int tangent_channels) : channels_(tangent_channels) {
    if (tangent_channels < 0) throw DimensionError("negative tangent channel count");
}

void Tape::reset(int tangent_channels) {
    if (tangent_channels < 0) throw DimensionError("negative tangent channel count");
    channels_ = tangent_channels;
    nodes_.clear();
    arena_.clear();
    indices_.clear();
}

TapeStats Tape::stats() const noexcept {
    return {std::max(peak_nodes_, nodes_.size()), std::max(peak_doubles_, arena_.size())};
}

const Tape::Node& Tape::node(Var v) const {
    if (v.tape != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
        throw DimensionError("variable does not belong to this tape");
    return nodes_[static_cast<std::size_t>(v.id)];
}

int Tape::rows(Var v) const { return node(v).rows; }
int Tape::cols(Var v) const { return node(v).cols; }
bool Tape::has_tangent(Var v) const { return node(v).has_tangent; }

std::span<const double> Tape::value(Var v) const {
    const Node& n = node(v);
    return {ptr(n.value), count(n)};
}

std::span<const double> Tape::tangent(Var v, int channel) const {
    const Node& n = node(v);
    if (channel < 0 || channel >= channels_) throw DimensionError("tangent channel out of range");
    if (!n.has_tangent) return {};
    return {ptr(n.tangent + static_cast<std::size_t>(channel) * count(n)), count(n)};
}

std::span<const double> Tape::adjoint(Var v) const {
    const Node& n = node(v);
    if (n.adjoint == npos) return {};
    return {ptr(n.adjoint), count(n)};
}

Var Tape::push(Node n, bool tangent, std::size_t aux_size) {
    if (n.rows <= 0 || n.cols <= 0) throw DimensionError("empty tape node");
    n.has_tangent = tangent && channels_ > 0;
    const std::size_t cnt = count(n);
    n.value = arena_.size();
    std::size_t total = cnt;
    if (n.has_tangent) {
        n.tangent = n.value + total;
        total += cnt * static_cast<std::size_t>(channels_);
    }
    if (aux_size > 0) {
        n.aux = n.value + total;
        total += aux_size;
    }
    arena_.grow(total);
    nodes_.push_back(n);
    peak_nodes_ = std::max(peak_nodes_, nodes_.size());
    peak_doubles_ = std::max(peak_doubles_, arena_.size());
    const int id = static_cast<int>(nodes_.size()) - 1;
    if (n.op != Op::Input && n.op != Op::Param) {
        forward(id);
        check_finite(id);
    }
    return {this, id};
}

Var Tape::input(int rows, int cols, std::span<const double> values, std::span<const double> tangents) {
    const std::size_t cnt = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    if (values.size() != cnt) throw DimensionError("input value size mismatch");
    const bool seeded = !tangents.empty() && channels_ > 0;
    if (seeded && tangents.size() != cnt * static_cast<std::size_t>(channels_))
        throw DimensionError("input tangent size mismatch");
    Node n{};
    n.op = Op::Input;
    n.rows = rows;
    n.cols = cols;
    Var v = push(n, seeded, 0);
    Node& stored = nodes_.back();
    std::copy(values.begin(), values.end(), ptr(stored.value));
    if (seeded) std::copy(tangents.begin(), tangents.end(), ptr(stored.tangent));
    check_finite(v.id);
    return v;
}

Var Tape::param(int rows, int cols, std::span<const double> values) {
    if (values.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols))
        throw DimensionError("parameter size mismatch");
    Node n{};
    n.op = Op::Param;
    n.rows = rows;
    n.cols = cols;
    n.requires_grad = true;
    Var v = push(n, false, 0);
    std::copy(values.begin(), values.end(), ptr(nodes_.back().value));
    check_finite(v.id);
    return v;
}

Var Tape::affine(Var w, Var x) { return affine(w, x, Var{}); }

Var Tape::affine(Var w, Var x, Var b) {
    const Node& nw = node(w);
    const Node& nx = node(x);
    if (nw.cols != nx.rows) throw DimensionError("affine: weight/input shape mismatch");
    Node n{};
    n.op = Op::Affine;
    n.a = w.id;
    n.b = x.id;
    n.rows = nw.rows;
    n.cols = nx.cols;
    bool tangent = nw.has_tangent || nx.has_tangent;
    bool grad = nw.requires_grad || nx.requires_grad;
    if (b.valid()) {
        const Node& nb = node(b);
        if (nb.rows != nw.rows || nb.cols != 1) throw DimensionError("affine: bias shape mismatch");
        n.c = b.id;
        tangent = tangent || nb.has_tangent;
        grad = grad || nb.requires_grad;
    }
    n.requires_grad = grad;
    return push(n, tangent, 0);
}

Var Tape::add(Var a, Var b, double alpha, double beta) {
    const Node& na = node(a);
    const Node& nb = node(b);
    Node n{};
    n.op = Op::Add;
    n.a = a.id;
    n.b = b.id;
    n.rows = broadcast_dim(na.rows, nb.rows, "add");
    n.cols = broadcast_dim(na.cols, nb.cols, "add");
    n.alpha = alpha;
    n.beta = beta;
    n.requires_grad = na.requires_grad || nb.requires_grad;
    return push(n, na.has_tangent || nb.has_tangent, 0);
}

Var Tape::mul(Var a, Var b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    Node n{};
    n.op = Op::Mul;
    n.a = a.id;
    n.b = b.id;
    n.rows = broadcast_dim(na.rows, nb.rows, "mul");
    n.cols = broadcast_dim(na.cols, nb.cols, "mul");
    n.requires_grad = na.requires_grad || nb.requires_grad;
    return push(n, na.has_tangent || nb.has_tangent, 0);
}

Var Tape::scale_shift(Var a, double alpha, double beta) {
    const Node& na = node(a);
    Node n{};
    n.op = Op::ScaleShift;
    n.a = a.id;
    n.rows = na.rows;
    n.cols = na.cols;
    n.alpha = alpha;
    n.beta = beta;
    n.requires_grad = na.requires_grad;
    return push(n, na.has_tangent, 0);
}

Var Tape::silu(Var a) {
    const Node& na = node(a);
    Node n{};
    n.op = Op::Silu;
    n.a = a.id;
    n.rows = na.rows;
    n.cols = na.cols;
    n.requires_grad = na.requires_grad;
    return push(n, na.has_tangent, count(na));
}

Var Tape::square(Var a) {
    const Node& na = node(a);
    Node n{};
    n.op = Op::Square;
    n.a = a.id;
    n.rows = na.rows;
    n.cols = na.cols;
    n.requires_grad = na.requires_grad;
    return push(n, na.has_tangent, 0);
}

Var Tape::exp(Var a) {
    const Node& na = node(a);
    Node n{};
    n.op = Op::Exp;
    n.a = a.id;
    n.rows = na.rows;
    n.cols = na.cols;
    n.requires_grad = na.requires_grad;
    return push(n, na.has_tangent, 0);
}

Var Tape::log(Var a) {
    const Node& na = node(a);
    Node n{};
    n.op = Op::Log;
    n.a = a.id;
    n.rows = na.rows;
    n.cols = na.cols;
    n.requires_grad = na.requires_grad;
    return push(n, na.has_tangent, 0);
}

Var Tape::inner(Var a, Var b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (na.rows != nb.rows || na.cols != nb.cols) throw DimensionError("inner: shape mismatch");
    Node n{};
    n.op = Op::Inner;
    n.a = a.id;
    n.b = b.id;
    n.rows = 1;
    n.cols = na.cols;
    n.requires_grad = na.requires_grad || nb.requires_grad;
    return push(n, na.has_tangent || nb.has_tangent, 0);
}

Var Tape::sum_rows(Var a) {
    const Node& na = node(a);
    Node n{};
    n.op = Op::SumRows;
    n.a = a.id;
    n.rows = 1;
    n.cols = na.cols;
    n.requires_grad = na.requires_grad;
    return push(n, na.has_tangent, 0);
}

Var Tape::mean_cols(Var a) {
    const Node& na = node(a);
    Node n{};
    n.op = Op::MeanCols;
    n.a = a.id;
    n.rows = na.rows;
    n.cols = 1;
    n.requires_grad = na.requires_grad;
    return push(n, na.has_tangent, 0);
}

Var Tape::slice_rows(Var a, int start, int cnt) {
    const Node& na = node(a);
    if (start < 0 || cnt <= 0 || start + cnt > na.rows) throw DimensionError("slice_rows: out of range");
    Node n{};
    n.op = Op::SliceRows;
    n.a = a.id;
    n.rows = cnt;
    n.cols = na.cols;
    n.ia = start;
    n.requires_grad = na.requires_grad;
    return push(n, na.has_tangent, 0);
}

Var Tape::scatter_cols(Var base, Var src, std::span<const int> columns) {
    const Node& nb = node(base);
    const Node& ns = node(src);
    if (nb.rows != ns.rows || static_cast<std::size_t>(ns.cols) != columns.size())
        throw DimensionError("scatter_cols: shape mismatch");
    for (int c : columns)
        if (c < 0 || c >= nb.cols) throw DimensionError("scatter_cols: column out of range");
    Node n{};
    n.op = Op::ScatterCols;
    n.a = base.id;
    n.b = src.id;
    n.rows = nb.rows;
    n.cols = nb.cols;
    n.ia = static_cast<int>(indices_.size());
    n.ib = static_cast<int>(columns.size());
    indices_.insert(indices_.end(), columns.begin(), columns.end());
    n.requires_grad = nb.requires_grad || ns.requires_grad;
    return push(n, nb.has_tangent || ns.has_tangent, 0);
}

Var Tape::hinge_min(Var a, double strike) {
    const Node& na = node(a);
    Node n{};
    n.op = Op::HingeMin;
    n.a = a.id;
    n.rows = 1;
    n.cols = na.cols;
    n.alpha = strike;
    n.requires_grad = na.requires_grad;
    return push(n, na.has_tangent, static_cast<std::size_t>(na.cols));
}

Var Tape::tangent_of(Var a, int channel) {
    const Node& na = node(a);
    if (channel < 0 || channel >= channels_) throw DimensionError("tangent_of: channel out of range");
    Node n{};
    n.op = Op::TangentOf;
    n.a = a.id;
    n.rows = na.rows;
    n.cols = na.cols;
    n.ia = channel;
    n.requires_grad = na.requires_grad;
    return push(n, false, 0);
}

void Tape::check_finite(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    std::size_t len = count(n);
    if (n.has_tangent) len += count(n) * static_cast<std::size_t>(channels_);
    // Exponent field all ones means inf or nan; branch-free so the loop vectorizes.
    constexpr std::uint64_t kExponent = 0x7FF0000000000000ull;
    const double* p = ptr(n.value);
    std::uint64_t bad = 0;
    for (std::size_t i = 0; i < len; ++i) {
        std::uint64_t bits;
        std::memcpy(&bits, p + i, sizeof bits);
        bad |= static_cast<std::uint64_t>((bits & kExponent) == kExponent);
    }
    if (bad) throw NumericalError(static_cast<std::size_t>(id), std::string(op_name(n.op)));
}

void Tape::reevaluate() {
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
        const Op op = nodes_[id].op;
        if (op == Op::Input || op == Op::Param) continue;
        forward(static_cast<int>(id));
        check_finite(static_cast<int>(id));
    }
}

void Tape::forward(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    const std::size_t cnt = count(n);
    double* y = ptr(n.value);
    const int P = n.has_tangent ? channels_ : 0;

    switch (n.op) {
    case Op::Input:
    case Op::Param:
        return;

    case Op::Affine: {
        const Node& w = nodes_[static_cast<std::size_t>(n.a)];
        const Node& x = nodes_[static_cast<std::size_t>(n.b)];
        CMat W(ptr(w.value), w.rows, w.cols);
        CMat X(ptr(x.value), x.rows, x.cols);
        Mat Y(y, n.rows, n.cols);
        const Node* bias = n.c >= 0 ? &nodes_[static_cast<std::size_t>(n.c)] : nullptr;
        if (fused_affine(n)) {
            // Values and tangents are adjacent blocks: one product covers both.
            Mat(y, n.rows, n.cols * (1 + P)).noalias() = W * CMat(ptr(x.value), x.rows, x.cols * (1 + P));
            if (bias) Y.colwise() += Eigen::Map<const Eigen::VectorXd>(ptr(bias->value), bias->rows);
            return;
        }
        Y.noalias() = W * X;
        if (bias) Y.colwise() += Eigen::Map<const Eigen::VectorXd>(ptr(bias->value), bias->rows);
        for (int p = 0; p < P; ++p) {
            Mat T(tan(n, p), n.rows, n.cols);
            T.setZero();
            if (x.has_tangent) T.noalias() += W * CMat(tan(x, p), x.rows, x.cols);
            if (w.has_tangent) T.noalias() += CMat(tan(w, p), w.rows, w.cols) * X;
            if (bias && bias->has_tangent)
                T.colwise() += Eigen::Map<const Eigen::VectorXd>(tan(*bias, p), bias->rows);
        }
        return;
    }

    case Op::Add:
    case Op::Mul: {
        const Node& a = nodes_[static_cast<std::size_t>(n.a)];
        const Node& b = nodes_[static_cast<std::size_t>(n.b)];
        const double* av = ptr(a.value);
        const double* bv = ptr(b.value);
        const bool is_add = n.op == Op::Add;
        if (count(a) == cnt && count(b) == cnt) {
            if (is_add) {
                for (std::size_t k = 0; k < cnt; ++k) y[k] = n.alpha * av[k] + n.beta * bv[k];
            } else {
                for (std::size_t k = 0; k < cnt; ++k) y[k] = av[k] * bv[k];
            }
            for (int p = 0; p < P; ++p) {
                double* t = tan(n, p);
                const double* at = a.has_tangent ? tan(a, p) : nullptr;
                const double* bt = b.has_tangent ? tan(b, p) : nullptr;
                std::fill_n(t, cnt, 0.0);
                if (is_add) {
                    if (at) for (std::size_t k = 0; k < cnt; ++k) t[k] += n.alpha * at[k];
                    if (bt) for (std::size_t k = 0; k < cnt; ++k) t[k] += n.beta * bt[k];
                } else {
                    if (at) for (std::size_t k = 0; k < cnt; ++k) t[k] += at[k] * bv[k];
                    if (bt) for (std::size_t k = 0; k < cnt; ++k) t[k] += av[k] * bt[k];
                }
            }
            return;
        }
        for (int j = 0; j < n.cols; ++j)
            for (int i = 0; i < n.rows; ++i) {
                const double x = av[bidx(a.rows, a.cols, i, j)];
                const double z = bv[bidx(b.rows, b.cols, i, j)];
                y[static_cast<std::size_t>(i) + static_cast<std::size_t>(j) * n.rows] =
                    is_add ? n.alpha * x + n.beta * z : x * z;
            }
        for (int p = 0; p < P; ++p) {
            double* t = tan(n, p);
            const double* at = a.has_tangent ? tan(a, p) : nullptr;
            const double* bt = b.has_tangent ? tan(b, p) : nullptr;
            for (int j = 0; j < n.cols; ++j)
                for (int i = 0; i < n.rows; ++i) {
                    const std::size_t ka = bidx(a.rows, a.cols, i, j);
                    const std::size_t kb = bidx(b.rows, b.cols, i, j);
                    double acc = 0.0;
                    if (is_add) {
                        if (at) acc += n.alpha * at[ka];
                        if (bt) acc += n.beta * bt[kb];
                    } else {
                        if (at) acc += at[ka] * bv[kb];
                        if (bt) acc += av[ka] * bt[kb];
                    }
                    t[static_cast<std::size_t>(i) + static_cast<std::size_t>(j) * n.rows] = acc;
                }
        }
        return;
    }

    case Op::ScaleShift: {
        const Node& a = nodes_[static_cast<std::size_t>(n.a)];
        const double* av = ptr(a.value);
        for (std::size_t k = 0; k < cnt; ++k) y[k] = n.alpha * av[k] + n.beta;
        for (int p = 0; p < P; ++p) {
            const double* at = tan(a, p);
            double* t = tan(n, p);
            for (std::size_t k = 0; k < cnt; ++k) t[k] = n.alpha * at[k];
        }
        return;
    }

    case Op::Silu:
    case Op::Square:
    case Op::Exp:
    case Op::Log: {
        const Node& a = nodes_[static_cast<std::size_t>(n.a)];
        const double* av = ptr(a.value);
        double* s = n.op == Op::Silu ? ptr(n.aux) : nullptr;
        if (n.op == Op::Silu) {
            using Arr = Eigen::Map<Eigen::ArrayXd>;
            using CArr = Eigen::Map<const Eigen::ArrayXd>;
            const auto len = static_cast<Eigen::Index>(cnt);
            CArr A(av, len);
            Arr S(s, len);
            S = 1.0 / (1.0 + (-A).exp());
            Arr(y, len) = A * S;
            for (int p = 0; p < P; ++p) Arr(tan(n, p), len) = S * (1.0 + A * (1.0 - S)) * CArr(tan(a, p), len);
            return;
        }
        switch (n.op) {
        case Op::Square:
            for (std::size_t k = 0; k < cnt; ++k) y[k] = av[k] * av[k];
            break;
        case Op::Exp:
            for (std::size_t k = 0; k < cnt; ++k) y[k] = std::exp(av[k]);
            break;
        default:
            for (std::size_t k = 0; k < cnt; ++k) y[k] = std::log(av[k]);
            break;
        }
        for (int p = 0; p < P; ++p) {
            const double* at = tan(a, p);
            double* t = tan(n, p);
            for (std::size_t k = 0; k < cnt; ++k) {
                double d1;
                switch (n.op) {
                case Op::Square: d1 = 2.0 * av[k]; break;
                case Op::Exp: d1 = y[k]; break;
                default: d1 = 1.0 / av[k]; break;
                }
                t[k] = d1 * at[k];
            }
        }
        return;
    }

    case Op::Inner: {
        const Node& a = nodes_[static_cast<std::size_t>(n.a)];
        const Node& b = nodes_[static_cast<std::size_t>(n.b)];
        CMat A(ptr(a.value), a.rows, a.cols);
        CMat B(ptr(b.value), b.rows, b.cols);
        Eigen::Map<Eigen::RowVectorXd>(y, n.cols) = A.cwiseProduct(B).colwise().sum();
        for (int p = 0; p < P; ++p) {
            Eigen::Map<Eigen::RowVectorXd> T(tan(n, p), n.cols);
            T.setZero();
            if (a.has_tangent) T += CMat(tan(a, p), a.rows, a.cols).cwiseProduct(B).colwise().sum();
            if (b.has_tangent) T += A.cwiseProduct(CMat(tan(b, p), b.rows, b.cols)).colwise().sum();
        }
        return;
    }

    case Op::SumRows: {
        const Node& a = nodes_[static_cast<std::size_t>(n.a)];
        Eigen::Map<Eigen::RowVectorXd>(y, n.cols) = CMat(ptr(a.value), a.rows, a.cols).colwise().sum();
        for (int p = 0; p < P; ++p)
            Eigen::Map<Eigen::RowVectorXd>(tan(n, p), n.cols) =
                CMat(tan(a, p), a.rows, a.cols).colwise().sum();
        return;
    }

    case Op::MeanCols: {
        const Node& a = nodes_[static_cast<std::size_t>(n.a)];
        Eigen::Map<Eigen::VectorXd>(y, n.rows) = CMat(ptr(a.value), a.rows, a.cols).rowwise().mean();
        for (int p = 0; p < P; ++p)
            Eigen::Map<Eigen::VectorXd>(tan(n, p), n.rows) =
                CMat(tan(a, p), a.rows, a.cols).rowwise().mean();
        return;
    }

    case Op::SliceRows: {
        const Node& a = nodes_[static_cast<std::size_t>(n.a)];
        Mat(y, n.rows, n.cols) = CMat(ptr(a.value), a.rows, a.cols).middleRows(n.ia, n.rows);
        for (int p = 0; p < P; ++p)
            Mat(tan(n, p), n.rows, n.cols) = CMat(tan(a, p), a.rows, a.cols).middleRows(n.ia, n.rows);
        return;
    }

    case Op::ScatterCols: {
        const Node& base = nodes_[static_cast<std::size_t>(n.a)];
        const Node& src = nodes_[static_cast<std::size_t>(n.b)];
        const int* cols = indices_.data() + n.ia;
        Mat Y(y, n.rows, n.cols);
        Y = CMat(ptr(base.value), base.rows, base.cols);
        CMat S(ptr(src.value), src.rows, src.cols);
        for (int j = 0; j < n.ib; ++j) Y.col(cols[j]) += S.col(j);
        for (int p = 0; p < P; ++p) {
            Mat T(tan(n, p), n.rows, n.cols);
            if (base.has_tangent) T = CMat(tan(base, p), base.rows, base.cols);
            else T.setZero();
            if (src.has_tangent) {
                CMat ST(tan(src, p), src.rows, src.cols);
                for (int j = 0; j < n.ib; ++j) T.col(cols[j]) += ST.col(j);
            }
        }
        return;
    }

    case Op::HingeMin: {
        const Node& a = nodes_[static_cast<std::size_t>(n.a)];
        CMat A(ptr(a.value), a.rows, a.cols);
        double* arg = ptr(n.aux);
        for (int j = 0; j < n.cols; ++j) {
            Eigen::Index imin = 0;
            const double m = A.col(j).minCoeff(&imin);
            const double v = n.alpha - m;
            y[j] = v > 0.0 ? v : 0.0;
            arg[j] = v > 0.0 ? static_cast<double>(imin) : -1.0;
        }
        for (int p = 0; p < P; ++p) {
            CMat AT(tan(a, p), a.rows, a.cols);
            double* t = tan(n, p);
            for (int j = 0; j < n.cols; ++j)
                t[j] = arg[j] >= 0.0 ? -AT(static_cast<Eigen::Index>(arg[j]), j) : 0.0;
        }
        return;
    }

    case Op::TangentOf: {
        const Node& a = nodes_[static_cast<std::size_t>(n.a)];
        if (a.has_tangent) std::copy_n(tan(a, n.ia), cnt, y);
        else std::fill_n(y, cnt, 0.0);
        return;
    }
    }
}

void Tape::backward(Var output, std::span<const double> seed) {
    const Node& out = node(output);
    const std::size_t last = static_cast<std::size_t>(output.id);
    if (!seed.empty() && seed.size() != count(out)) throw DimensionError("backward: seed size mismatch");

    std::size_t extra = 0;
    for (std::size_t id = 0; id <= last; ++id) {
        const Node& n = nodes_[id];
        if (!n.requires_grad) continue;
        extra += count(n);
        if (n.has_tangent) extra += count(n) * static_cast<std::size_t>(channels_);
    }
    std::size_t offset = arena_.size();
    arena_.grow(extra);
    std::fill_n(ptr(offset), extra, 0.0);
    peak_doubles_ = std::max(peak_doubles_, arena_.size());
    for (auto& n : nodes_) {
        n.adjoint = npos;
        n.tangent_adjoint = npos;
    }
    for (std::size_t id = 0; id <= last; ++id) {
        Node& n = nodes_[id];
        if (!n.requires_grad) continue;
        n.adjoint = offset;
        offset += count(n);
        if (n.has_tangent) {
            n.tangent_adjoint = offset;
            offset += count(n) * static_cast<std::size_t>(channels_);
        }
    }
    if (!out.requires_grad) return;

    double* g = ptr(out.adjoint);
    if (seed.empty()) std::fill_n(g, count(out), 1.0);
    else std::copy(seed.begin(), seed.end(), g);

    for (std::size_t id = last + 1; id-- > 0;) {
        const Node& n = nodes_[id];
        if (n.requires_grad && n.op != Op::Input && n.op != Op::Param) reverse(static_cast<int>(id));
    }
}

void Tape::reverse(int id) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    const std::size_t cnt = count(n);
    const double* gy = ptr(n.adjoint);
    const int P = n.has_tangent ? channels_ : 0;

    switch (n.op) {
    case Op::Input:
    case Op::Param:
        return;

    case Op::Affine: {
        const Node& w = nodes_[static_cast<std::size_t>(n.a)];
        const Node& x = nodes_[static_cast<std::size_t>(n.b)];
        CMat W(ptr(w.value), w.rows, w.cols);
        CMat X(ptr(x.value), x.rows, x.cols);
        CMat GY(gy, n.rows, n.cols);
        if (fused_affine(n) && n.tangent_adjoint == n.adjoint + cnt) {
            const Eigen::Index wide = static_cast<Eigen::Index>(n.cols) * (1 + P);
            CMat GYT(gy, n.rows, wide);
            if (w.requires_grad)
                Mat(ptr(w.adjoint), w.rows, w.cols).noalias() += GYT * CMat(ptr(x.value), x.rows, wide).transpose();
            if (x.requires_grad && x.tangent_adjoint == x.adjoint + count(x))
                Mat(ptr(x.adjoint), x.rows, wide).noalias() += W.transpose() * GYT;
            else if (x.requires_grad)
                Mat(ptr(x.adjoint), x.rows, x.cols).noalias() += W.transpose() * GY;
            if (n.c >= 0) {
                const Node& b = nodes_[static_cast<std::size_t>(n.c)];
                if (b.requires_grad) Eigen::Map<Eigen::VectorXd>(ptr(b.adjoint), b.rows) += GY.rowwise().sum();
            }
            return;
        }
        if (w.requires_grad) {
            Mat GW(ptr(w.adjoint), w.rows, w.cols);
            GW.noalias() += GY * X.transpose();
            for (int p = 0; p < P; ++p) {
                if (!x.has_tangent) break;
                GW.noalias() += CMat(tadj(n, p), n.rows, n.cols) * CMat(tan(x, p), x.rows, x.cols).transpose();
            }
            for (int p = 0; p < P && w.has_tangent; ++p)
                Mat(tadj(w, p), w.rows, w.cols).noalias() += CMat(tadj(n, p), n.rows, n.cols) * X.transpose();
        }
        if (x.requires_grad) {
            Mat GX(ptr(x.adjoint), x.rows, x.cols);
            GX.noalias() += W.transpose() * GY;
            for (int p = 0; p < P && w.has_tangent; ++p)
                GX.noalias() += CMat(tan(w, p), w.rows, w.cols).transpose() * CMat(tadj(n, p), n.rows, n.cols);
            for (int p = 0; p < P && x.has_tangent; ++p)
                Mat(tadj(x, p), x.rows, x.cols).noalias() += W.transpose() * CMat(tadj(n, p), n.rows, n.cols);
        }
        if (n.c >= 0) {
            const Node& b = nodes_[static_cast<std::size_t>(n.c)];
            if (b.requires_grad) {
                Eigen::Map<Eigen::VectorXd>(ptr(b.adjoint), b.rows) += GY.rowwise().sum();
                for (int p = 0; p < P && b.has_tangent; ++p)
                    Eigen::Map<Eigen::VectorXd>(tadj(b, p), b.rows) +=
                        CMat(tadj(n, p), n.rows, n.cols).rowwise().sum();
            }
        }
        return;
    }

    case Op::Add:
    case Op::Mul: {
        const Node& a = nodes_[static_cast<std::size_t>(n.a)];
        const Node& b = nodes_[static_cast<std::size_t>(n.b)];
        const bool is_add = n.op == Op::Add;
        const double* av = ptr(a.value);
        const double* bv = ptr(b.value);
        double* ga = a.requires_grad ? ptr(a.adjoint) : nullptr;
        double* gb = b.requires_grad ? ptr(b.adjoint) : nullptr;
        if (count(a) == cnt && count(b) == cnt) {
            if (ga) for (std::size_t k = 0; k < cnt; ++k) ga[k] += is_add ? n.alpha * gy[k] : gy[k] * bv[k];
            if (gb) for (std::size_t k = 0; k < cnt; ++k) gb[k] += is_add ? n.beta * gy[k] : gy[k] * av[k];
            for (int p = 0; p < P; ++p) {
                const double* gt = tadj(n, p);
                const double* at = a.has_tangent ? tan(a, p) : nullptr;
                const double* bt = b.has_tangent ? tan(b, p) : nullptr;
                double* gat = a.requires_grad ? tadj(a, p) : nullptr;
                double* gbt = b.requires_grad ? tadj(b, p) : nullptr;
                if (is_add) {
                    if (gat) for (std::size_t k = 0; k < cnt; ++k) gat[k] += n.alpha * gt[k];
                    if (gbt) for (std::size_t k = 0; k < cnt; ++k) gbt[k] += n.beta * gt[k];
                } else {
                    if (gat) for (std::size_t k = 0; k < cnt; ++k) gat[k] += gt[k] * bv[k];
                    if (gbt) for (std::size_t k = 0; k < cnt; ++k) gbt[k] += gt[k] * av[k];
                    if (ga && bt) for (std::size_t k = 0; k < cnt; ++k) ga[k] += gt[k] * bt[k];
                    if (gb && at) for (std::size_t k = 0; k < cnt; ++k) gb[k] += gt[k] * at[k];
                }
            }
            return;
        }
        for (int j = 0; j < n.cols; ++j)
            for (int i = 0; i < n.rows; ++i) {
                const double g = gy[static_cast<std::size_t>(i) + static_cast<std::size_t>(j) * n.rows];
                const std::size_t ka = bidx(a.rows, a.cols, i, j);
                const std::size_t kb = bidx(b.rows, b.cols, i, j);
                if (ga) ga[ka] += is_add ? n.alpha * g : g * bv[kb];
                if (gb) gb[kb] += is_add ? n.beta * g : g * av[ka];
            }
        for (int p = 0; p < P; ++p) {
            const double* gt = tadj(n, p);
            const double* at = a.has_tangent ? tan(a, p) : nullptr;
            const double* bt = b.has_tangent ? tan(b, p) : nullptr;
            double* gat = a.requires_grad ? tadj(a, p) : nullptr;
            double* gbt = b.requires_grad ? tadj(b, p) : nullptr;
            for (int j = 0; j < n.cols; ++j)
                for (int i = 0; i < n.rows; ++i) {
                    const double g = gt[static_cast<std::size_t>(i) + static_cast<std::size_t>(j) * n.rows];
                    const std::size_t ka = bidx(a.rows, a.cols, i, j);
                    const std::size_t kb = bidx(b.rows, b.cols, i, j);
                    if (is_add) {
                        if (gat) gat[ka] += n.alpha * g;
                        if (gbt) gbt[kb] += n.beta * g;
                    } else {
                        // t = at*b + a*bt
                        if (gat) gat[ka] += g * bv[kb];
                        if (gbt) gbt[kb] += g * av[ka];
                        if (ga && bt) ga[ka] += g * bt[kb];
                        if (gb && at) gb[kb] += g * at[ka];
                    }
                }
        }
        return;
    }

    case Op::ScaleShift: {
        const Node& a = nodes_[static_cast<std::size_t>(n.a)];
        double* ga = ptr(a.adjoint);
        for (std::size_t k = 0; k < cnt; ++k) ga[k] += n.alpha * gy[k];
        for (int p = 0; p < P; ++p) {
            double* gat = tadj(a, p);
            const double* gt = tadj(n, p);
            for (std::size_t k = 0; k < cnt; ++k) gat[k] += n.alpha * gt[k];
        }
        return;
    }

    case Op::Silu:
    case Op::Square:
    case Op::Exp:
    case Op::Log: {
        const Node& a = nodes_[static_cast<std::size_t>(n.a)];
        const double* av = ptr(a.value);
        const double* yv = ptr(n.value);
        const double* s = n.op == Op::Silu ? ptr(n.aux) : nullptr;
        double* ga = ptr(a.adjoint);
        if (n.op == Op::Silu) {
            using CArr = Eigen::Map<const Eigen::ArrayXd>;
            using Arr = Eigen::Map<Eigen::ArrayXd>;
            const auto len = static_cast<Eigen::Index>(cnt);
            CArr A(av, len), S(s, len), GY(gy, len);
            const auto d1 = S * (1.0 + A * (1.0 - S));
            const auto d2 = S * (1.0 - S) * (2.0 + A * (1.0 - 2.0 * S));
            if (P == 0) {
                Arr(ga, len) += GY * d1;
                return;
            }
            if (P == 1) {
                CArr GT(tadj(n, 0), len);
                Arr(ga, len) += GY * d1 + GT * d2 * CArr(tan(a, 0), len);
                Arr(tadj(a, 0), len) += GT * d1;
                return;
            }
            Eigen::ArrayXd acc = GY * d1;
            for (int p = 0; p < P; ++p) {
                CArr GT(tadj(n, p), len);
                acc += GT * d2 * CArr(tan(a, p), len);
                Arr(tadj(a, p), len) += GT * d1;
            }
            Arr(ga, len) += acc;
            return;
        }
        for (std::size_t k = 0; k < cnt; ++k) {
            double d1, d2;
            switch (n.op) {
            case Op::Silu:
                d1 = s[k] * (1.0 + av[k] * (1.0 - s[k]));
                d2 = s[k] * (1.0 - s[k]) * (2.0 + av[k] * (1.0 - 2.0 * s[k]));
                break;
            case Op::Square:
                d1 = 2.0 * av[k];
                d2 = 2.0;
                break;
            case Op::Exp:
                d1 = yv[k];
                d2 = yv[k];
                break;
            default:
                d1 = 1.0 / av[k];
                d2 = -d1 * d1;
                break;
            }
            double acc = gy[k] * d1;
            for (int p = 0; p < P; ++p) {
                const double gt = tadj(n, p)[k];
                acc += gt * d2 * tan(a, p)[k];
                tadj(a, p)[k] += gt * d1;
            }
            ga[k] += acc;
        }
        return;
    }

    case Op::Inner: {
        const Node& a = nodes_[static_cast<std::size_t>(n.a)];
        const Node& b = nodes_[static_cast<std::size_t>(n.b)];
        CMat A(ptr(a.value), a.rows, a.cols);
        CMat B(ptr(b.value), b.rows, b.cols);
        Eigen::Map<const Eigen::RowVectorXd> GY(gy, n.cols);
        if (a.requires_grad) {
            Mat GA(ptr(a.adjoint), a.rows, a.cols);
            GA += B * GY.asDiagonal();
            for (int p = 0; p < P; ++p) {
                Eigen::Map<const Eigen::RowVectorXd> GT(tadj(n, p), n.cols);
                if (b.has_tangent) GA += CMat(tan(b, p), b.rows, b.cols) * GT.asDiagonal();
                if (a.has_tangent) Mat(tadj(a, p), a.rows, a.cols) += B * GT.asDiagonal();
            }
        }
        if (b.requires_grad) {
            Mat GB(ptr(b.adjoint), b.rows, b.cols);
            GB += A * GY.asDiagonal();
            for (int p = 0; p < P; ++p) {
                Eigen::Map<const Eigen::RowVectorXd> GT(tadj(n, p), n.cols);
                if (a.has_tangent) GB += CMat(tan(a, p), a.rows, a.cols) * GT.asDiagonal();
                if (b.has_tangent) Mat(tadj(b, p), b.rows, b.cols) += A * GT.asDiagonal();
            }
        }
        return;
    }

    case Op::SumRows: {
        const Node& a = nodes_[static_cast<std::size_t>(n.a)];
        Mat(ptr(a.adjoint), a.rows, a.cols).rowwise() += Eigen::Map<const Eigen::RowVectorXd>(gy, n.cols);
        for (int p = 0; p < P; ++p)
            Mat(tadj(a, p), a.rows, a.cols).rowwise() += Eigen::Map<const Eigen::RowVectorXd>(tadj(n, p), n.cols);
        return;
    }

    case Op::MeanCols: {
        const Node& a = nodes_[static_cast<std::size_t>(n.a)];
        const double inv = 1.0 / static_cast<double>(a.cols);
        Mat(ptr(a.adjoint), a.rows, a.cols).colwise() += inv * Eigen::Map<const Eigen::VectorXd>(gy, n.rows);
        for (int p = 0; p < P; ++p)
            Mat(tadj(a, p), a.rows, a.cols).colwise() +=
                inv * Eigen::Map<const Eigen::VectorXd>(tadj(n, p), n.rows);
        return;
    }

    case Op::SliceRows: {
        const Node& a = nodes_[static_cast<std::size_t>(n.a)];
        Mat(ptr(a.adjoint), a.rows, a.cols).middleRows(n.ia, n.rows) += CMat(gy, n.rows, n.cols);
        for (int p = 0; p < P; ++p)
            Mat(tadj(a, p), a.rows, a.cols).middleRows(n.ia, n.rows) += CMat(tadj(n, p), n.rows, n.cols);
        return;
    }

    case Op::ScatterCols: {
        const Node& base = nodes_[static_cast<std::size_t>(n.a)];
        const Node& src = nodes_[static_cast<std::size_t>(n.b)];
        const int* cols = indices_.data() + n.ia;
        CMat GY(gy, n.rows, n.cols);
        if (base.requires_grad) {
            Mat(ptr(base.adjoint), base.rows, base.cols) += GY;
            for (int p = 0; p < P && base.has_tangent; ++p)
                Mat(tadj(base, p), base.rows, base.cols) += CMat(tadj(n, p), n.rows, n.cols);
        }
        if (src.requires_grad) {
            Mat GS(ptr(src.adjoint), src.rows, src.cols);
            for (int j = 0; j < n.ib; ++j) GS.col(j) += GY.col(cols[j]);
            for (int p = 0; p < P && src.has_tangent; ++p) {
                Mat GST(tadj(src, p), src.rows, src.cols);
                CMat GT(tadj(n, p), n.rows, n.cols);
                for (int j = 0; j < n.ib; ++j) GST.col(j) += GT.col(cols[j]);
            }
        }
        return;
    }

    case Op::HingeMin: {
        const Node& a = nodes_[static_cast<std::size_t>(n.a)];
        const double* arg = ptr(n.aux);
        Mat GA(ptr(a.adjoint), a.rows, a.cols);
        for (int j = 0; j < n.cols; ++j) {
            if (arg[j] < 0.0) continue;
            const auto i = static_cast<Eigen::Index>(arg[j]);
            GA(i, j) -= gy[j];
            for (int p = 0; p < P; ++p) Mat(tadj(a, p), a.rows, a.cols)(i, j) -= tadj(n, p)[j];
        }
        return;
    }

    case Op::TangentOf: {
        const Node& a = nodes_[static_cast<std::size_t>(n.a)];
        if (!a.has_tangent) return;
        double* gat = tadj(a, n.ia);
        for (std::size_t k = 0; k < cnt; ++k) gat[k] += gy[k];
        return;
    }
    }
}

} // namespace kolmo::ad
