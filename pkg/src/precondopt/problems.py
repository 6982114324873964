"""Problem formulations the solvers run on.

Four variants of the same regularized loss minimization task:

* ``original``         -- mean loss(w.x_i, y_i) + (lam/2)||w||^2 on raw data
* ``precond_full``     -- shifted loss on whitened data + (beta/2)||v||^2
* ``precond_naive``    -- plain loss on whitened data + (lam/2) u^T H^{-1} u
* ``precond_sampled``  -- per-sample shifted loss (members of the sampling
                          set only) on whitened data + (beta_hat/2)||v||^2

All four share the same optimal value; the preconditioned ones differ only
through the variable transformation v = H^{1/2} w.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import losses, precond
from .datagen import Dataset, content_digest
from .errors import InputError, StateError
from .losses import LossModel

FORMULATIONS = ("original", "precond_full", "precond_naive", "precond_sampled")


@dataclass(frozen=True)
class Problem:
    """One formulation instance: working features, targets, loss, and the
    quadratic-term bookkeeping the solvers need."""

    data: np.ndarray                 # (d, n) features of THIS formulation
    targets: np.ndarray
    loss: LossModel
    formulation: str
    reg: float                       # coefficient of the quadratic term
    shift_beta: float = 0.0          # beta inside the shifted loss (0 = none)
    membership: np.ndarray | None = None   # bool (n,) for precond_sampled
    hinv: precond.Preconditioner | None = None  # H^{-1} handle for naive
    lam: float = float("nan")        # original regularization strength
    digest: str = ""
    _colnorms_sq: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def d(self) -> int:
        return self.data.shape[0]

    @property
    def n(self) -> int:
        return self.data.shape[1]

    def colnorms_sq(self) -> np.ndarray:
        out = self._colnorms_sq
        if out is None:
            out = np.sum(self.data * self.data, axis=0)
            object.__setattr__(self, "_colnorms_sq", out)
        return out


def _finish(dataset: Dataset, **kw) -> Problem:
    digest = content_digest(kw["data"], dataset.y, dataset.task)
    return Problem(targets=dataset.y, digest=f"{kw['formulation']}-{digest}", **kw)


def original_problem(dataset: Dataset, loss: LossModel, lam: float) -> Problem:
    if lam <= 0:
        raise InputError("lam must be positive")
    return _finish(dataset, data=dataset.X, loss=loss, formulation="original",
                   reg=float(lam), lam=float(lam))


def full_precond_problem(dataset: Dataset, loss: LossModel, P: precond.Preconditioner) -> Problem:
    if P.mode != "full":
        raise StateError(f"full formulation needs a full preconditioner, got {P.mode!r}")
    data = precond.precondition_dataset(P, dataset.X)
    return _finish(dataset, data=data, loss=loss, formulation="precond_full",
                   reg=P.beta, shift_beta=P.beta, lam=P.lam)


def naive_precond_problem(dataset: Dataset, loss: LossModel, P: precond.Preconditioner) -> Problem:
    if P.mode not in ("naive", "full"):
        raise StateError(f"naive formulation needs a full/naive preconditioner, got {P.mode!r}")
    data = precond.precondition_dataset(P, dataset.X)
    return _finish(dataset, data=data, loss=loss, formulation="precond_naive",
                   reg=P.lam, hinv=P, lam=P.lam)


def sampled_precond_problem(dataset: Dataset, loss: LossModel, P: precond.Preconditioner) -> Problem:
    if P.mode != "sampled":
        raise StateError(f"sampled formulation needs a sampled preconditioner, got {P.mode!r}")
    data = precond.precondition_dataset(P, dataset.X)
    membership = np.zeros(dataset.n, dtype=bool)
    membership[P.sample_indices] = True
    return _finish(dataset, data=data, loss=loss, formulation="precond_sampled",
                   reg=P.eff_strong_convexity, shift_beta=P.beta,
                   membership=membership, lam=P.lam)


def shift_coefficients(problem: Problem) -> np.ndarray:
    """Per-sample curvature shift applied inside the loss (0 where none)."""
    if problem.formulation == "precond_full":
        return np.full(problem.n, problem.shift_beta)
    if problem.formulation == "precond_sampled":
        return np.where(problem.membership, problem.shift_beta, 0.0)
    return np.zeros(problem.n)


def margins(problem: Problem, w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (problem.d,):
        raise InputError(f"w has shape {w.shape}, expected ({problem.d},)")
    return problem.data.T @ w


def objective(problem: Problem, w: np.ndarray) -> float:
    """Exact full-batch objective of the formulation."""
    z = margins(problem, w)
    shifts = shift_coefficients(problem)
    loss_mean = float(np.mean(
        losses.value(problem.loss, z, problem.targets) - 0.5 * shifts * z * z
    ))
    if problem.formulation == "precond_naive":
        quad = 0.5 * problem.reg * float(w @ precond.apply_H_inv(problem.hinv, w))
    else:
        quad = 0.5 * problem.reg * float(w @ w)
    return loss_mean + quad


def loss_coefficients(problem: Problem, w: np.ndarray) -> np.ndarray:
    """Per-sample scalar derivative of the formulation's loss at w."""
    z = margins(problem, w)
    return losses.grad(problem.loss, z, problem.targets) - shift_coefficients(problem) * z


def reg_gradient(problem: Problem, w: np.ndarray) -> np.ndarray:
    if problem.formulation == "precond_naive":
        return problem.reg * precond.apply_H_inv(problem.hinv, w)
    return problem.reg * w


def full_gradient(problem: Problem, w: np.ndarray) -> np.ndarray:
    """Gradient of the full-batch objective."""
    coeffs = loss_coefficients(problem, w)
    return problem.data @ coeffs / problem.n + reg_gradient(problem, w)


def reg_strength(problem: Problem) -> float:
    """Strong-convexity modulus contributed by the quadratic term: lam, beta,
    beta_hat, or lam / (sigma_1^2 + rho) for the naive regularizer."""
    if problem.formulation == "precond_naive":
        return problem.reg / (problem.hinv.sigma1_sq + problem.hinv.rho)
    return problem.reg


def reg_smoothness(problem: Problem) -> float:
    """Upper bound on the quadratic term's curvature (lam/rho for naive)."""
    if problem.formulation == "precond_naive":
        return problem.reg / problem.hinv.rho
    return problem.reg


def max_sq_norm(problem: Problem) -> float:
    """Largest squared column norm of the formulation's working data."""
    return float(problem.colnorms_sq().max())


def ltilde(problem: Problem) -> float:
    """Smoothness constant of the worst individual loss term plus the
    quadratic term, in the formulation's variables.

    The per-sample scalar loss is (L - beta)-smooth where the curvature shift
    applies and L-smooth elsewhere, so the data factor is the worst
    coefficient-weighted squared column norm.
    """
    if not problem.loss.smooth:
        raise InputError("ltilde is defined for smooth losses")
    L = problem.loss.L
    per_sample = (L - shift_coefficients(problem)) * problem.colnorms_sq()
    return float(per_sample.max()) + reg_smoothness(problem)
