#include "kolmo/autodiff/gradient.hpp"

#include "kolmo/error.hpp"

#include <algorithm>

namespace kolmo::ad {

ValueAndGradient grad_params(const ScalarProgram& f, std::span<const double> theta) {
    Tape tape;
    const Var p = tape.param(static_cast<int>(theta.size()), 1, theta);
    const Var out = f(tape, p);
    if (tape.rows(out) != 1 || tape.cols(out) != 1) throw DimensionError("grad_params: output is not scalar");
    tape.backward(out);
    ValueAndGradient r;
    r.value = tape.value(out)[0];
    const auto g = tape.adjoint(p);
    r.gradient.assign(theta.size(), 0.0);
    if (!g.empty()) std::copy(g.begin(), g.end(), r.gradient.begin());
    return r;
}

} // namespace kolmo::ad
