"""Spectral analysis of the data: covariance spectrum, smoothed numerical
rank, generalized incoherence, leverage scores and condition-number reports.

All quantities live on the sample covariance C = X X^T / n and its ridge
smoothing H = rho I + C.  The decomposition route is chosen for cost: a
symmetric eigendecomposition of C when d <= n and no right factors are
needed, a thin SVD of X / sqrt(n) otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError, StateError
from .losses import LossModel

# Eigenvalues this far below the top one are treated as exact zeros inside
# the rank/coherence formulas (roundoff guard; the formulas are continuous).
EIG_FLOOR_REL = 1e-12

KAPPA_FLOOR = 1e-12


@dataclass(frozen=True)
class Spectrum:
    """Thin eigen/SVD factorization of the sample covariance.

    ``eigenvalues`` are the descending, nonnegative eigenvalues sigma_i^2 of
    C; ``left_basis`` the matching orthonormal (d, k) basis; and
    ``right_factors`` the optional (n, k) right singular-vector matrix whose
    rows drive the incoherence measure.
    """

    eigenvalues: np.ndarray
    left_basis: np.ndarray | None
    right_factors: np.ndarray | None
    n: int
    d: int

    @property
    def k(self) -> int:
        return len(self.eigenvalues)


def covariance_spectrum(X: np.ndarray, right_factors: bool = False) -> Spectrum:
    """Spectrum of X X^T / n with k = min(n, d) components.

    ``right_factors=True`` materializes the (n, k) right factor matrix needed
    by :func:`coherence` and :func:`leverage_scores` (O(n k) extra memory).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise InputError("X must be a (d, n) matrix")
    if not np.isfinite(X).all():
        raise InputError("X contains non-finite entries")
    d, n = X.shape
    if n < 1 or d < 1:
        raise InputError("X must be nonempty")

    if right_factors or d > n:
        U, s, Vt = np.linalg.svd(X / math.sqrt(n), full_matrices=False)
        eig = s * s
        V = Vt.T if right_factors else None
        return Spectrum(eigenvalues=eig, left_basis=U, right_factors=V, n=n, d=d)

    C = (X @ X.T) / n
    eig, Q = np.linalg.eigh(C)
    order = np.argsort(eig)[::-1]
    eig = np.clip(eig[order], 0.0, None)
    return Spectrum(eigenvalues=eig, left_basis=Q[:, order], right_factors=None, n=n, d=d)


def _effective_eigenvalues(spec: Spectrum) -> np.ndarray:
    eig = np.asarray(spec.eigenvalues, dtype=float)
    if eig.size == 0:
        return eig
    floor = EIG_FLOOR_REL * float(eig.max(initial=0.0))
    out = eig.copy()
    out[out < floor] = 0.0
    return out


def _check_rho(rho: float) -> float:
    rho = float(rho)
    if not rho > 0:
        raise InputError(f"rho must be positive, got {rho}")
    return rho


def numerical_rank(spec: Spectrum, rho: float) -> float:
    """Smoothed numerical rank sum_i sigma_i^2 / (sigma_i^2 + rho)."""
    rho = _check_rho(rho)
    eig = _effective_eigenvalues(spec)
    return float(np.sum(eig / (eig + rho)))


def _row_weights(spec: Spectrum, rho: float) -> np.ndarray:
    # n * sum_j sigma_j^2/(sigma_j^2+rho) V_ij^2, one entry per sample; this
    # equals x_i^T H^{-1} x_i for data consistent with the factorization.
    if spec.right_factors is None:
        raise StateError("spectrum has no right factors; rebuild with right_factors=True")
    eig = _effective_eigenvalues(spec)
    w = eig / (eig + rho)
    V = spec.right_factors
    return spec.n * ((V * V) @ w)


def coherence(spec: Spectrum, rho: float) -> float:
    """Generalized incoherence of the right factors, in [1, n].

    The maximum over samples of the weighted row energy of V, normalized so a
    perfectly spread V (all entries +-1/sqrt(n)) scores exactly 1.
    """
    rho = _check_rho(rho)
    gamma = numerical_rank(spec, rho)
    scores = _row_weights(spec, rho)
    return float(scores.max() / gamma)


def leverage_scores(X: np.ndarray, spec: Spectrum, rho: float) -> np.ndarray:
    """Per-sample x_i^T H^{-1} x_i; the maximum equals coherence * rank."""
    rho = _check_rho(rho)
    X = np.asarray(X, dtype=float)
    if X.shape != (spec.d, spec.n):
        raise InputError(f"X has shape {X.shape}, spectrum expects ({spec.d}, {spec.n})")
    return _row_weights(spec, rho)


@dataclass(frozen=True)
class ConditionReport:
    """Condition numbers of the original and preconditioned problems,
    together with the raw data/loss quantities that produced them."""

    R_sq: float
    gamma: float
    mu: float
    kappa_original: float
    kappa_precond: float
    cond1_holds: bool
    cond2_holds: bool
    rho: float
    mode: str
    lam: float
    beta: float
    r: float
    smooth: bool
    m: int | None = None
    degenerate: bool = False

    @property
    def reduction(self) -> float:
        return self.kappa_original / self.kappa_precond


def condition_report(
    X: np.ndarray,
    loss: LossModel,
    lam: float,
    beta: float,
    r: float | None = None,
    mode: str = "full",
    m: int | None = None,
    spectrum: Spectrum | None = None,
) -> ConditionReport:
    """Compare condition numbers with and without data preconditioning.

    ``mode`` selects the preconditioner the report describes: "full" uses the
    smoothing rho = lam/beta, "sampled" the inflated rho_hat = n lam/(m beta)
    with effective strong convexity m beta / n, and "identity" leaves the
    problem untouched.  For smooth losses the original condition number is
    L R^2 / lam; the non-smooth reading uses L^2 R^2 / lam and needs the
    prediction bound ``r`` (default R / sqrt(lam)).
    """
    lam = float(lam)
    beta = float(beta)
    if lam <= 0 or beta <= 0:
        raise InputError("lam and beta must be positive")
    if loss.smooth and beta > loss.L:
        raise InputError(
            f"beta={beta} exceeds the smoothness constant L={loss.L}; "
            "the curvature-shifted loss would not stay smooth-consistent"
        )
    if mode not in ("identity", "full", "sampled"):
        raise InputError(f"unknown preconditioner mode {mode!r}")

    X = np.asarray(X, dtype=float)
    d, n = X.shape
    if mode == "sampled":
        if m is None or not 1 <= int(m) <= n:
            raise InputError("sampled mode needs 1 <= m <= n")
        m = int(m)

    R_sq = float(np.max(np.sum(X * X, axis=0)))
    if r is None:
        r = math.sqrt(R_sq / lam)
    r = float(r)

    if spectrum is None or spectrum.right_factors is None:
        spectrum = covariance_spectrum(X, right_factors=True)

    rho = lam / beta
    beta_eff = beta
    if mode == "sampled":
        rho = n * lam / (m * beta)
        beta_eff = m * beta / n

    gamma = numerical_rank(spectrum, rho)
    mu = coherence(spectrum, rho)
    mug = mu * gamma

    L = loss.L
    if loss.smooth:
        kappa_original = L * R_sq / lam
    else:
        kappa_original = L * L * R_sq / lam

    degenerate = False
    if mode == "identity":
        kappa_precond = kappa_original
    elif loss.smooth:
        if mode == "full":
            kappa_precond = (L - beta) * mug / beta
            degenerate = L == beta
        else:
            kappa_precond = L * mug / beta_eff
    else:
        shifted_lip = (L + beta * r) ** 2
        kappa_precond = shifted_lip * mug / beta_eff

    kappa_original = max(kappa_original, KAPPA_FLOOR)
    kappa_precond = max(kappa_precond, KAPPA_FLOOR)

    rhs = R_sq / mug
    cond1_holds = lam * (L + beta * r) ** 2 / (beta * L * L) < rhs
    cond2_holds = lam / beta - lam / L < rhs

    return ConditionReport(
        R_sq=R_sq,
        gamma=gamma,
        mu=mu,
        kappa_original=kappa_original,
        kappa_precond=kappa_precond,
        cond1_holds=bool(cond1_holds),
        cond2_holds=bool(cond2_holds),
        rho=rho,
        mode=mode,
        lam=lam,
        beta=beta,
        r=r,
        smooth=loss.smooth,
        m=m,
        degenerate=degenerate,
    )
