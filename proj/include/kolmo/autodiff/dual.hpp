#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace kolmo::ad {

/// A real value together with its derivatives along d input coordinates.
struct DualVector {
    double value = 0.0;
    std::vector<double> tangents;

    DualVector() = default;
    DualVector(double v, std::size_t d) : value(v), tangents(d, 0.0) {}
    DualVector(double v, std::vector<double> t) : value(v), tangents(std::move(t)) {}

    /// The i-th coordinate of a d-dimensional input point.
    static DualVector variable(double v, std::size_t i, std::size_t d) {
        DualVector r(v, d);
        r.tangents[i] = 1.0;
        return r;
    }

    std::size_t dim() const noexcept { return tangents.size(); }
};

namespace detail {

template <typename F>
DualVector zip(const DualVector& a, const DualVector& b, double value, F&& f) {
    const std::size_t d = a.dim() > b.dim() ? a.dim() : b.dim();
    DualVector r(value, d);
    for (std::size_t i = 0; i < d; ++i) {
        const double ta = i < a.dim() ? a.tangents[i] : 0.0;
        const double tb = i < b.dim() ? b.tangents[i] : 0.0;
        r.tangents[i] = f(ta, tb);
    }
    return r;
}

inline DualVector chain(const DualVector& a, double value, double slope) {
    DualVector r(value, a.dim());
    for (std::size_t i = 0; i < a.dim(); ++i) r.tangents[i] = slope * a.tangents[i];
    return r;
}

} // namespace detail

inline DualVector operator+(const DualVector& a, const DualVector& b) {
    return detail::zip(a, b, a.value + b.value, [](double x, double y) { return x + y; });
}
inline DualVector operator-(const DualVector& a, const DualVector& b) {
    return detail::zip(a, b, a.value - b.value, [](double x, double y) { return x - y; });
}
inline DualVector operator*(const DualVector& a, const DualVector& b) {
    return detail::zip(a, b, a.value * b.value,
                       [&](double x, double y) { return x * b.value + a.value * y; });
}
inline DualVector operator/(const DualVector& a, const DualVector& b) {
    const double q = a.value / b.value;
    return detail::zip(a, b, q, [&](double x, double y) { return (x - q * y) / b.value; });
}
inline DualVector operator-(const DualVector& a) { return detail::chain(a, -a.value, -1.0); }
inline DualVector operator+(const DualVector& a, double s) { return detail::chain(a, a.value + s, 1.0); }
inline DualVector operator+(double s, const DualVector& a) { return a + s; }
inline DualVector operator-(const DualVector& a, double s) { return detail::chain(a, a.value - s, 1.0); }
inline DualVector operator-(double s, const DualVector& a) { return detail::chain(a, s - a.value, -1.0); }
inline DualVector operator*(const DualVector& a, double s) { return detail::chain(a, a.value * s, s); }
inline DualVector operator*(double s, const DualVector& a) { return a * s; }

inline DualVector exp(const DualVector& a) {
    const double e = std::exp(a.value);
    return detail::chain(a, e, e);
}
inline DualVector log(const DualVector& a) { return detail::chain(a, std::log(a.value), 1.0 / a.value); }
inline DualVector square(const DualVector& a) { return detail::chain(a, a.value * a.value, 2.0 * a.value); }
inline DualVector silu(const DualVector& a) {
    const double s = 1.0 / (1.0 + std::exp(-a.value));
    return detail::chain(a, a.value * s, s * (1.0 + a.value * (1.0 - s)));
}

} // namespace kolmo::ad
