#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <new>
#include <span>
#include <string_view>
#include <vector>

namespace kolmo::ad {

/// Primitive operations recordable on a tape.
///
/// Every node holds a column-major `rows x cols` matrix. Columns index
/// independent samples of a batch; parameter nodes usually have one column
/// and broadcast over the batch.
enum class Op : std::uint8_t {
    Input,
    Param,
    Affine,      // W x + b
    Add,         // alpha a + beta b, broadcasting singleton dimensions
    Mul,         // elementwise, broadcasting singleton dimensions
    ScaleShift,  // alpha a + beta
    Silu,
    Square,
    Exp,
    Log,
    Inner,       // column-wise dot product -> 1 x cols
    SumRows,     // 1 x cols
    MeanCols,    // rows x 1
    SliceRows,
    ScatterCols, // base with src columns added at given column indices
    HingeMin,    // max(0, strike - min_i a_i) per column
    TangentOf,   // value of a tangent channel of the operand
};

std::string_view op_name(Op op) noexcept;

class Tape;

/// Handle to a node of a tape.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    bool valid() const noexcept { return tape != nullptr && id >= 0; }
};

/// Peak resource usage of one or more tapes.
struct TapeStats {
    std::size_t peak_nodes = 0;
    std::size_t peak_doubles = 0;

    void merge(const TapeStats& other) noexcept {
        if (other.peak_nodes > peak_nodes) peak_nodes = other.peak_nodes;
        if (other.peak_doubles > peak_doubles) peak_doubles = other.peak_doubles;
    }
};

/// Growable buffer of doubles; `grow` leaves the new elements uninitialized.
/// Cache-line aligned, so vectorized kernels see the same alignment on every
/// tape and results do not depend on where the allocator put the buffer.
class Arena {
public:
    static constexpr std::size_t kAlign = 64;

    std::size_t size() const noexcept { return size_; }
    double* data() noexcept { return buf_.get(); }
    const double* data() const noexcept { return buf_.get(); }
    void clear() noexcept { size_ = 0; }
    void grow(std::size_t n) {
        if (size_ + n > capacity_) {
            const std::size_t cap = std::max(size_ + n, 2 * capacity_);
            Buffer next(static_cast<double*>(::operator new[](cap * sizeof(double), std::align_val_t{kAlign})));
            std::copy_n(buf_.get(), size_, next.get());
            buf_ = std::move(next);
            capacity_ = cap;
        }
        size_ += n;
    }

private:
    struct Free {
        void operator()(double* p) const noexcept { ::operator delete[](p, std::align_val_t{kAlign}); }
    };
    using Buffer = std::unique_ptr<double[], Free>;

    Buffer buf_;
    std::size_t size_ = 0;
    std::size_t capacity_ = 0;
};

/// Reverse-mode tape with optional forward-mode tangent channels.
///
/// With `tangent_channels() == P > 0` every node carries P tangents next to
/// its value; input nodes are seeded by the caller, parameters have zero
/// tangent. `backward` differentiates through values *and* tangents, so the
/// gradient of a tangent (a directional derivative in the inputs) with
/// respect to parameters is available from one sweep.
///
/// Values are computed eagerly while recording. A tape is single-writer;
/// once recording is finished it can be read concurrently.
class Tape {
public:
    explicit Tape(int tangent_channels = 0);

    /// Drop all nodes but keep allocated storage.
    void reset(int tangent_channels);
    void reset() { reset(channels_); }

    int tangent_channels() const noexcept { return channels_; }
    std::size_t size() const noexcept { return nodes_.size(); }
    std::size_t doubles() const noexcept { return arena_.size(); }
    TapeStats stats() const noexcept;

    // Leaves. `values` and each tangent block are column-major rows x cols.
    Var input(int rows, int cols, std::span<const double> values,
              std::span<const double> tangents = {});
    Var param(int rows, int cols, std::span<const double> values);

    Var affine(Var w, Var x);
    Var affine(Var w, Var x, Var b);
    Var add(Var a, Var b, double alpha = 1.0, double beta = 1.0);
    Var mul(Var a, Var b);
    Var scale_shift(Var a, double alpha, double beta = 0.0);
    Var silu(Var a);
    Var square(Var a);
    Var exp(Var a);
    Var log(Var a);
    Var inner(Var a, Var b);
    Var sum_rows(Var a);
    Var mean_cols(Var a);
    Var slice_rows(Var a, int start, int count);
    Var scatter_cols(Var base, Var src, std::span<const int> columns);
    Var hinge_min(Var a, double strike);
    Var tangent_of(Var a, int channel);

    int rows(Var v) const;
    int cols(Var v) const;
    bool has_tangent(Var v) const;

    std::span<const double> value(Var v) const;
    /// Empty when the node's tangent is identically zero.
    std::span<const double> tangent(Var v, int channel) const;
    /// Valid after `backward`; empty if the node does not depend on parameters.
    std::span<const double> adjoint(Var v) const;

    /// Reverse sweep from `output` with adjoint seed `seed` (defaults to all ones).
    void backward(Var output, std::span<const double> seed = {});

    /// Recompute every non-leaf node from the stored leaves, in order.
    void reevaluate();

private:
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    struct Node {
        Op op;
        bool requires_grad = false;
        bool has_tangent = false;
        int a = -1;
        int b = -1;
        int c = -1;
        int rows = 0;
        int cols = 0;
        int ia = 0;  // op-specific integer (slice start, channel, index offset)
        int ib = 0;  // op-specific integer (index count)
        double alpha = 0.0;
        double beta = 0.0;
        std::size_t value = npos;
        std::size_t tangent = npos;
        std::size_t aux = npos;
        std::size_t adjoint = npos;
        std::size_t tangent_adjoint = npos;
    };

    Var push(Node node, bool tangent, std::size_t aux_size);
    void forward(int id);
    void check_finite(int id) const;
    void reverse(int id);

    std::size_t count(const Node& n) const noexcept {
        return static_cast<std::size_t>(n.rows) * static_cast<std::size_t>(n.cols);
    }
    double* ptr(std::size_t offset) noexcept { return arena_.data() + offset; }
    const double* ptr(std::size_t offset) const noexcept { return arena_.data() + offset; }
    double* tan(const Node& n, int p) noexcept {
        return n.has_tangent ? ptr(n.tangent + static_cast<std::size_t>(p) * count(n)) : nullptr;
    }
    /// Affine node whose weight and bias carry no tangents while its input does.
    bool fused_affine(const Node& n) const noexcept {
        const Node& w = nodes_[static_cast<std::size_t>(n.a)];
        const Node& x = nodes_[static_cast<std::size_t>(n.b)];
        return n.has_tangent && !w.has_tangent && x.has_tangent &&
               (n.c < 0 || !nodes_[static_cast<std::size_t>(n.c)].has_tangent);
    }
    double* tadj(const Node& n, int p) noexcept {
        return n.tangent_adjoint != npos ? ptr(n.tangent_adjoint + static_cast<std::size_t>(p) * count(n))
                                         : nullptr;
    }
    const Node& node(Var v) const;

    int channels_;
    std::vector<Node> nodes_;
    Arena arena_;
    std::vector<int> indices_;
    std::size_t peak_nodes_ = 0;
    std::size_t peak_doubles_ = 0;
};

// Operator sugar over Var handles recorded on the same tape.
inline Var operator+(Var a, Var b) { return a.tape->add(a, b); }
inline Var operator-(Var a, Var b) { return a.tape->add(a, b, 1.0, -1.0); }
inline Var operator*(Var a, Var b) { return a.tape->mul(a, b); }
inline Var operator*(double s, Var a) { return a.tape->scale_shift(a, s); }
inline Var operator+(Var a, double s) { return a.tape->scale_shift(a, 1.0, s); }
inline Var operator-(Var a) { return a.tape->scale_shift(a, -1.0); }

} // namespace kolmo::ad
