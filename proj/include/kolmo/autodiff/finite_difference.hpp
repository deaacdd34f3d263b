#pragma once

#include "kolmo/error.hpp"

#include <functional>
#include <span>
#include <vector>

namespace kolmo::ad {

/// Central-difference gradient (f(p + h e_i) - f(p - h e_i)) / 2h.
inline std::vector<double> finite_difference_gradient(const std::function<double(std::span<const double>)>& f,
                                                      std::span<const double> point, double h) {
    if (!(h > 0.0)) throw ConfigError("finite difference step must be positive");
    std::vector<double> p(point.begin(), point.end());
    std::vector<double> grad(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double x = p[i];
        p[i] = x + h;
        const double up = f(p);
        p[i] = x - h;
        const double down = f(p);
        p[i] = x;
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

} // namespace kolmo::ad
