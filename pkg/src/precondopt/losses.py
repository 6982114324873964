"""Scalar loss catalog with derivatives, curvature bounds and the
curvature-shifted losses used by the preconditioned formulations.

Every loss here has strictly positive second derivative on a bounded
prediction interval |z| <= r, which is what makes the curvature shift
phi(z, y) = loss(z, y) - (beta/2) z^2 convex there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError

_KINDS = ("square", "logistic", "poisson")

# Above this |t| the exact softplus/sigmoid branch is numerically identical
# to its asymptote; branching avoids overflow in exp.
_EXP_CUTOFF = 30.0


@dataclass(frozen=True)
class LossModel:
    """A scalar loss: its kind, smoothness constant L, and smoothness flag."""

    kind: str
    L: float
    smooth: bool = True


def loss_model(kind: str, r_cap: float = 1.0) -> LossModel:
    """Build a LossModel.

    L is the Lipschitz constant of the derivative: 1 for square, 1/4 for
    logistic.  The exponential count loss has unbounded curvature, so its
    constant is taken on |z| <= r_cap (default 1).
    """
    if kind == "square":
        return LossModel(kind="square", L=1.0)
    if kind == "logistic":
        return LossModel(kind="logistic", L=0.25)
    if kind == "poisson":
        if r_cap <= 0:
            raise InputError("r_cap must be positive")
        return LossModel(kind="poisson", L=math.exp(r_cap))
    raise InputError(f"unknown loss kind {kind!r}; expected one of {_KINDS}")


def _check_labels(model: LossModel, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if not np.isfinite(y).all():
        raise InputError("labels must be finite")
    if model.kind == "logistic":
        if not np.isin(y, (-1.0, 1.0)).all():
            raise InputError("logistic labels must be in {-1, +1}")
    elif model.kind == "poisson":
        if (y < 0).any():
            raise InputError("count labels must be nonnegative")
    return y


def _prepare(model: LossModel, z, y):
    z = np.asarray(z, dtype=float)
    y = _check_labels(model, y)
    scalar = z.ndim == 0 and y.ndim == 0
    zb, yb = np.broadcast_arrays(np.atleast_1d(z), np.atleast_1d(y))
    return zb, yb, scalar


def _finish(out: np.ndarray, scalar: bool):
    return float(out[0]) if scalar else out


def _sigmoid(t: np.ndarray) -> np.ndarray:
    # 1/(1+e^{-t}) without overflow for large |t|.
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def value(model: LossModel, z, y):
    """Loss value; vectorized over z and y."""
    zb, yb, scalar = _prepare(model, z, y)
    if model.kind == "square":
        out = 0.5 * (zb - yb) ** 2
    elif model.kind == "logistic":
        out = np.logaddexp(0.0, -yb * zb)
    else:
        out = np.exp(zb) - yb * zb
    return _finish(out, scalar)


def grad(model: LossModel, z, y):
    """First derivative with respect to z."""
    zb, yb, scalar = _prepare(model, z, y)
    if model.kind == "square":
        out = zb - yb
    elif model.kind == "logistic":
        out = -yb * _sigmoid(-yb * zb)
    else:
        out = np.exp(zb) - yb
    return _finish(out, scalar)


def curvature(model: LossModel, z, y):
    """Second derivative with respect to z."""
    zb, yb, scalar = _prepare(model, z, y)
    if model.kind == "square":
        out = np.ones_like(zb)
    elif model.kind == "logistic":
        s = _sigmoid(yb * zb)
        out = s * (1.0 - s)
    else:
        out = np.exp(zb)
    return _finish(out, scalar)


def beta_lower(model: LossModel, r: float) -> float:
    """Lower bound on the curvature over |z| <= r."""
    r = float(r)
    if r <= 0:
        raise InputError("r must be positive")
    if model.kind == "square":
        return 1.0
    if model.kind == "logistic":
        s = 1.0 / (1.0 + math.exp(-r))
        return s * (1.0 - s)
    return math.exp(-r)


def phi_value(model: LossModel, beta: float, z, y):
    """Curvature-shifted loss value: loss(z, y) - (beta/2) z^2."""
    zb, _, scalar = _prepare(model, z, y)
    out = np.atleast_1d(value(model, z, y)) - 0.5 * beta * zb * zb
    return _finish(out, scalar)


def phi_grad(model: LossModel, beta: float, z, y):
    zb, _, scalar = _prepare(model, z, y)
    out = np.atleast_1d(grad(model, z, y)) - beta * zb
    return _finish(out, scalar)


def psi_value(model: LossModel, beta: float, in_sample, z, y):
    """Shifted loss on preconditioner-sample members, plain loss elsewhere."""
    if isinstance(in_sample, np.ndarray):
        return np.where(in_sample, phi_value(model, beta, z, y), value(model, z, y))
    if in_sample:
        return phi_value(model, beta, z, y)
    return value(model, z, y)


def psi_grad(model: LossModel, beta: float, in_sample, z, y):
    if isinstance(in_sample, np.ndarray):
        return np.where(in_sample, phi_grad(model, beta, z, y), grad(model, z, y))
    if in_sample:
        return phi_grad(model, beta, z, y)
    return grad(model, z, y)


def scalar_grad_fn(model: LossModel):
    """Fast scalar derivative for solver hot loops (pure-python math).

    Matches :func:`grad` to machine precision; branch-based so single steps
    never touch numpy scalars.
    """
    kind = model.kind
    if kind == "square":
        def g(z: float, y: float) -> float:
            return z - y
    elif kind == "logistic":
        def g(z: float, y: float) -> float:
            t = y * z
            if t > _EXP_CUTOFF:
                return -y * math.exp(-t)
            if t < -_EXP_CUTOFF:
                return -y
            return -y / (1.0 + math.exp(t))
    else:
        def g(z: float, y: float) -> float:
            return math.exp(min(z, 700.0)) - y
    return g
