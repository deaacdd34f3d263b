#pragma once

#include "kolmo/autodiff/tape.hpp"

#include <functional>
#include <span>
#include <vector>

namespace kolmo::ad {

struct ValueAndGradient {
    double value = 0.0;
    std::vector<double> gradient;
};

/// Records a scalar (1 x 1) output from a parameter column vector.
using ScalarProgram = std::function<Var(Tape&, Var theta)>;

/// Value and parameter gradient of `f` at `theta`, from one reverse sweep.
ValueAndGradient grad_params(const ScalarProgram& f, std::span<const double> theta);

} // namespace kolmo::ad
