"""Data preconditioning for regularized loss minimization.

Spectral diagnostics (smoothed numerical rank, incoherence, condition
numbers), ZCA-style full and sampled preconditioners, curvature-shifted
losses, and first-order stochastic solvers with reproducible traces.
"""

from .datagen import Dataset, load_binary, load_dense_csv, load_sparse_text, save_binary, synth
from .errors import (
    DivergedError,
    FormatError,
    InputError,
    PrecondError,
    ResourceError,
    StateError,
)
from .losses import (
    LossModel,
    beta_lower,
    curvature,
    grad,
    loss_model,
    phi_grad,
    phi_value,
    psi_grad,
    psi_value,
    value,
)
from .precond import (
    Preconditioner,
    apply,
    apply_H_inv,
    build_full,
    build_naive,
    build_sampled,
    identity_preconditioner,
    map_back,
    precondition_dataset,
    resolve_sample_size,
    sample_size_bound,
)
from .problems import (
    Problem,
    full_precond_problem,
    ltilde,
    naive_precond_problem,
    objective,
    original_problem,
    sampled_precond_problem,
)
from .solvers import (
    SolverConfig,
    Trace,
    asg,
    reference_optimum,
    run_solver,
    sag,
    sgd,
    svrg,
)
from .spectral import (
    ConditionReport,
    Spectrum,
    coherence,
    condition_report,
    covariance_spectrum,
    leverage_scores,
    numerical_rank,
)

__version__ = "0.1.0"
