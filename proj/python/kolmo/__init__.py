"""Kolmogorov PDE solvers trained with SDE-based losses.

Point arrays have shape ``(K, d)``; parameter vectors are flat float64 arrays
laid out as in the C++ core.
"""

from ._kolmo import (
    ConfigError,
    DimensionError,
    KolmoError,
    ModelSpec,
    Problem,
    compute_gradient,
    feynman_kac_at,
    grad_input,
    init_params,
    make_problem,
    model_eval,
    mse_eval,
    multilevel,
    polynomial_heat,
    read_checkpoint,
    run_eval,
    run_train,
    train,
    variance_diagnostics,
)

LOSSES = ("FK", "BSDE", "BSDE-detach", "BSDE-grad", "BSDE-eff", "BSDE-grad-eff")

__all__ = [
    "LOSSES",
    "ConfigError",
    "DimensionError",
    "KolmoError",
    "ModelSpec",
    "Problem",
    "compute_gradient",
    "feynman_kac_at",
    "grad_input",
    "init_params",
    "make_problem",
    "model_eval",
    "mse_eval",
    "multilevel",
    "polynomial_heat",
    "read_checkpoint",
    "run_eval",
    "run_train",
    "train",
    "variance_diagnostics",
]
