"""Build and apply the inverse-square-root data preconditioner.

The full preconditioner whitens features with H^{-1/2} where H = rho I + C
and rho = lam/beta; the sampled variant builds the same object from m
uniformly chosen columns with the inflated smoothing rho_hat = n lam /
(m beta).  Both reduce to the closed form

    H^{-1/2} x = rho^{-1/2} x - U (S (U^T x)),   s_i = rho^{-1/2} - (sigma_i^2 + rho)^{-1/2},

which costs O(k d) per vector against the stored thin basis.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InputError, StateError
from .spectral import Spectrum, coherence, covariance_spectrum, numerical_rank


@dataclass(frozen=True)
class Preconditioner:
    """Immutable factored preconditioner; safe to share across threads."""

    mode: str                       # identity | full | sampled | naive
    d: int
    rho: float
    basis: np.ndarray | None        # (d, k) orthonormal
    shifts: np.ndarray | None       # (k,) rho^{-1/2} - (sigma^2 + rho)^{-1/2}
    sigma_sq: np.ndarray | None
    eff_strong_convexity: float     # beta (full/naive) or m beta / n (sampled)
    m: int
    lam: float
    beta: float
    sample_indices: np.ndarray | None = None

    @property
    def sigma1_sq(self) -> float:
        if self.sigma_sq is None or len(self.sigma_sq) == 0:
            return 0.0
        return float(self.sigma_sq[0])


def identity_preconditioner(d: int) -> Preconditioner:
    return Preconditioner(
        mode="identity", d=int(d), rho=1.0, basis=None, shifts=None,
        sigma_sq=None, eff_strong_convexity=float("nan"), m=0,
        lam=float("nan"), beta=float("nan"),
    )


def _densify(X) -> np.ndarray:
    if hasattr(X, "toarray"):
        warnings.warn("densifying sparse input; preconditioned data is dense", stacklevel=3)
        X = X.toarray()
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise InputError("X must be a (d, n) matrix")
    if not np.isfinite(X).all():
        raise InputError("X contains non-finite entries")
    return X


def _shifts(sigma_sq: np.ndarray, rho: float) -> np.ndarray:
    return 1.0 / math.sqrt(rho) - 1.0 / np.sqrt(sigma_sq + rho)


def _build_dense(X, lam: float, beta: float, mode: str) -> Preconditioner:
    X = _densify(X)
    if lam <= 0 or beta <= 0:
        raise InputError("lam and beta must be positive")
    d, n = X.shape
    rho = lam / beta
    spec = covariance_spectrum(X)
    return Preconditioner(
        mode=mode, d=d, rho=rho, basis=spec.left_basis,
        shifts=_shifts(spec.eigenvalues, rho), sigma_sq=spec.eigenvalues,
        eff_strong_convexity=beta, m=n, lam=float(lam), beta=float(beta),
    )


def build_full(X, lam: float, beta: float) -> Preconditioner:
    """Full preconditioner from all n columns; smoothing rho = lam/beta."""
    return _build_dense(X, lam, beta, "full")


def build_naive(X, lam: float, beta: float) -> Preconditioner:
    """Same factorization as :func:`build_full`, tagged for the naive
    formulation that keeps the plain loss and the H^{-1} regularizer."""
    return _build_dense(X, lam, beta, "naive")


def build_sampled(X, lam: float, beta: float, m: int, seed: int = 0) -> Preconditioner:
    """Sampled preconditioner from m columns drawn uniformly without
    replacement; smoothing rho_hat = n lam / (m beta), effective strong
    convexity m beta / n.  The chosen index set is recorded so solvers can
    shift the loss on exactly those samples."""
    X = _densify(X)
    if lam <= 0 or beta <= 0:
        raise InputError("lam and beta must be positive")
    d, n = X.shape
    m = int(m)
    if not 1 <= m <= n:
        raise InputError(f"m must be in [1, {n}], got {m}")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=m, replace=False))
    sub = X[:, idx]
    U, s, _ = np.linalg.svd(sub / math.sqrt(m), full_matrices=False)
    sigma_sq = s * s  # keep all m factors, zeros give zero shift
    rho_hat = n * lam / (m * beta)
    return Preconditioner(
        mode="sampled", d=d, rho=rho_hat, basis=U,
        shifts=_shifts(sigma_sq, rho_hat), sigma_sq=sigma_sq,
        eff_strong_convexity=m * beta / n, m=m, lam=float(lam), beta=float(beta),
        sample_indices=idx,
    )


def apply(P: Preconditioner, x: np.ndarray) -> np.ndarray:
    """H^{-1/2} x (or the identity in identity mode)."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise InputError("apply expects a vector; use precondition_dataset for matrices")
    if P.mode == "identity":
        return x
    if x.shape[0] != P.d:
        raise InputError(f"vector has dimension {x.shape[0]}, preconditioner expects {P.d}")
    proj = P.basis.T @ x
    return x / math.sqrt(P.rho) - P.basis @ (P.shifts * proj)


def apply_H_inv(P: Preconditioner, u: np.ndarray) -> np.ndarray:
    """H^{-1} u for the full/naive factorizations (regularizer of the naive
    formulation); equals apply(apply(u)) up to roundoff."""
    if P.mode not in ("full", "naive"):
        raise StateError(f"apply_H_inv needs a full or naive preconditioner, not {P.mode!r}")
    u = np.asarray(u, dtype=float)
    if u.shape != (P.d,):
        raise InputError(f"vector has shape {u.shape}, expected ({P.d},)")
    weights = 1.0 / P.rho - 1.0 / (P.sigma_sq + P.rho)
    return u / P.rho - P.basis @ (weights * (P.basis.T @ u))


def precondition_dataset(P: Preconditioner, X) -> np.ndarray:
    """Apply the preconditioner to every column of X (deterministic)."""
    X = _densify(X)
    if P.mode == "identity":
        return X
    if X.shape[0] != P.d:
        raise InputError(f"X has dimension {X.shape[0]}, preconditioner expects {P.d}")
    proj = P.basis.T @ X
    return X / math.sqrt(P.rho) - P.basis @ (P.shifts[:, None] * proj)


def map_back(P: Preconditioner, v: np.ndarray) -> np.ndarray:
    """Convert a solution of the preconditioned problem back to the original
    variables: w = H^{-1/2} v.  Same arithmetic as :func:`apply`; separate
    because it converts solutions, not data."""
    if P.mode == "identity":
        raise StateError("map_back is undefined for the identity preconditioner")
    return apply(P, v)


def sample_size_bound(delta: float, t: float, mu: float, gamma: float, d: int) -> int:
    """Smallest sample count certifying the leverage bound with probability
    1 - e^{-t}: ceil((2/delta^2) (mu gamma + 1) (t + log d))."""
    delta = float(delta)
    if not 0 < delta <= 0.5:
        raise InputError("delta must lie in (0, 1/2]")
    if t <= 0:
        raise InputError("t must be positive")
    if d < 1:
        raise InputError("d must be at least 1")
    if mu < 0 or gamma < 0:
        raise InputError("mu and gamma must be nonnegative")
    return int(math.ceil((2.0 / delta**2) * (mu * gamma + 1.0) * (t + math.log(d))))


def resolve_sample_size(
    spec: Spectrum, lam: float, beta: float, delta: float, t: float,
    max_rounds: int = 64,
) -> tuple[int, float]:
    """Fixed-point solve for the sample size: the certified bound is evaluated
    at rho_hat = (n/m) lam/beta, which itself depends on m.  Returns
    (m, rho_hat); m is capped at n."""
    n, d = spec.n, spec.d
    rho0 = lam / beta

    def bound_at(m):
        rho_hat = (n / m) * rho0
        mug = coherence(spec, rho_hat) * numerical_rank(spec, rho_hat)
        return min(n, sample_size_bound(delta, t, mug, 1.0, d))

    m = n
    for _ in range(max_rounds):
        m_new = bound_at(m)
        if m_new == m:
            break
        m = m_new
    # The iteration can land on a short cycle; walk m upward until the
    # certificate holds at the returned size (monotone, stops at n).
    for _ in range(max_rounds):
        need = bound_at(m)
        if m >= need:
            break
        m = need
    return m, (n / m) * rho0


def save_preconditioner(P: Preconditioner, path) -> None:
    """Persist as .npz so a later process can map solutions back."""
    arrays = {
        "mode": np.array(P.mode),
        "d": np.array(P.d),
        "rho": np.array(P.rho),
        "eff_strong_convexity": np.array(P.eff_strong_convexity),
        "m": np.array(P.m),
        "lam": np.array(P.lam),
        "beta": np.array(P.beta),
    }
    if P.basis is not None:
        arrays["basis"] = P.basis
        arrays["shifts"] = P.shifts
        arrays["sigma_sq"] = P.sigma_sq
    if P.sample_indices is not None:
        arrays["sample_indices"] = P.sample_indices
    np.savez(path, **arrays)


def load_preconditioner(path) -> Preconditioner:
    with np.load(path, allow_pickle=False) as z:
        mode = str(z["mode"])
        return Preconditioner(
            mode=mode,
            d=int(z["d"]),
            rho=float(z["rho"]),
            basis=z["basis"] if "basis" in z else None,
            shifts=z["shifts"] if "shifts" in z else None,
            sigma_sq=z["sigma_sq"] if "sigma_sq" in z else None,
            eff_strong_convexity=float(z["eff_strong_convexity"]),
            m=int(z["m"]),
            lam=float(z["lam"]),
            beta=float(z["beta"]),
            sample_indices=z["sample_indices"] if "sample_indices" in z else None,
        )
