"""Dataset generation, ingestion and binary persistence.

Synthetic matrices are built from the SVD of a standard Gaussian matrix so
the singular bases are generic (incoherent) while the covariance spectrum is
prescribed exactly.  Real data comes in as sparse ``label idx:val`` text or
dense CSV; everything is stored densely.
"""

from __future__ import annotations

import hashlib
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, InputError

MAGIC = b"PRLM"
FORMAT_VERSION = 1

_TASKS = ("regression", "binary", "count")
_TASK_TAG = {name: tag for tag, name in enumerate(_TASKS)}


@dataclass
class Dataset:
    """Dense feature matrix ``X`` of shape (d, n) with per-column targets."""

    X: np.ndarray
    y: np.ndarray
    task: str = "regression"
    provenance: dict = field(default_factory=dict)
    _digest: str | None = field(default=None, repr=False)

    @property
    def d(self) -> int:
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[1]

    @property
    def digest(self) -> str:
        """64-bit content digest, stable across processes for equal content."""
        if self._digest is None:
            self._digest = content_digest(self.X, self.y, self.task)
        return self._digest

    def validate(self) -> "Dataset":
        if self.X.ndim != 2:
            raise InputError("X must be a (d, n) matrix")
        if self.y.shape != (self.n,):
            raise InputError(
                f"targets have length {self.y.shape}, expected ({self.n},)"
            )
        if self.task not in _TASKS:
            raise InputError(f"unknown task {self.task!r}")
        if not np.isfinite(self.X).all() or not np.isfinite(self.y).all():
            raise InputError("dataset contains non-finite entries")
        if self.task == "binary" and not np.isin(self.y, (-1.0, 1.0)).all():
            raise InputError("binary task requires labels in {-1, +1}")
        if self.task == "count":
            if (self.y < 0).any() or (self.y != np.rint(self.y)).any():
                raise InputError("count task requires nonnegative integer targets")
        return self


def content_digest(X: np.ndarray, y: np.ndarray, task: str = "regression") -> str:
    h = hashlib.blake2b(digest_size=8)
    h.update(struct.pack("<QQB", X.shape[0], X.shape[1], _TASK_TAG[task]))
    h.update(np.ascontiguousarray(X.T, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(y, dtype="<f8").tobytes())
    return h.hexdigest()


def _parse_decay(decay) -> tuple[str, float]:
    if isinstance(decay, str):
        kind, sep, rest = decay.partition(":")
        if not sep:
            raise InputError(f"decay spec {decay!r} must look like 'poly:0.5'")
        try:
            tau = float(rest)
        except ValueError as exc:
            raise InputError(f"bad decay rate in {decay!r}") from exc
    else:
        kind, tau = decay
        tau = float(tau)
    if kind == "poly":
        if tau < 0.5:
            raise InputError("polynomial decay requires tau >= 1/2")
    elif kind == "exp":
        if tau <= 0:
            raise InputError("exponential decay requires tau > 0")
    else:
        raise InputError(f"unknown decay kind {kind!r}")
    return kind, tau


def prescribed_eigenvalues(decay, k: int) -> np.ndarray:
    """Covariance eigenvalues sigma_i^2 for i = 1..k under the given decay."""
    kind, tau = _parse_decay(decay)
    i = np.arange(1, k + 1, dtype=float)
    if kind == "poly":
        return i ** (-2.0 * tau)
    return np.exp(-tau * i)


def synth(
    n: int,
    d: int,
    decay,
    task: str = "regression",
    seed: int = 0,
    allow_wide: bool = False,
) -> Dataset:
    """Generate a synthetic dataset with an exactly prescribed spectrum.

    A standard Gaussian (d, n) matrix supplies generic orthonormal factors U
    and V through its SVD; the data matrix is then sqrt(n) * U diag(sigma) V^T
    so that the sample covariance X X^T / n equals U diag(sigma^2) U^T with
    sigma_i^2 following ``decay`` ("poly:tau" -> i^{-2 tau}, "exp:tau" ->
    e^{-tau i}).  Targets are y = X^T w + eps with w_i ~ N(0, 100) and
    eps ~ N(0, 0.01); classification labels take the sign, counts are Poisson
    draws from a normalized link.

    Three independent seeded streams (matrix, weights, noise; a fourth for
    count draws) make the output bitwise reproducible for a given seed.

    Set ``allow_wide=True`` to permit d > n; the construction then prescribes
    the n nonzero eigenvalues and the covariance is rank deficient.
    """
    if n < 1 or d < 1:
        raise InputError("n and d must be positive")
    if d > n and not allow_wide:
        raise InputError(
            "synth requires n >= d (pass allow_wide=True for the d > n extension)"
        )
    kind, tau = _parse_decay(decay)
    if task not in _TASKS:
        raise InputError(f"unknown task {task!r}")

    streams = np.random.SeedSequence(seed).spawn(4)
    rng_m = np.random.default_rng(streams[0])
    rng_w = np.random.default_rng(streams[1])
    rng_e = np.random.default_rng(streams[2])

    k = min(n, d)
    M = rng_m.standard_normal((d, n))
    U, _, Vt = np.linalg.svd(M, full_matrices=False)
    sigma = np.sqrt(prescribed_eigenvalues((kind, tau), k))
    X = np.sqrt(n) * ((U * sigma) @ Vt)

    w = rng_w.normal(0.0, 10.0, size=d)
    eps = rng_e.normal(0.0, 0.1, size=n)
    z = X.T @ w + eps
    if task == "regression":
        y = z
    elif task == "binary":
        y = np.where(z >= 0, 1.0, -1.0)
    else:
        # Normalize the linear predictor so Poisson rates stay representable.
        rng_c = np.random.default_rng(streams[3])
        scale = max(1.0, float(np.std(z)))
        y = rng_c.poisson(np.exp(np.clip(z / scale, -10.0, 10.0))).astype(float)

    provenance = {
        "kind": "synthetic",
        "n": n,
        "d": d,
        "decay": f"{kind}:{tau:g}",
        "task": task,
        "seed": seed,
    }
    return Dataset(X=X, y=y, task=task, provenance=provenance).validate()


def _maybe_rescale_targets(y: np.ndarray, target_range) -> np.ndarray:
    if target_range is None:
        return y
    lo, hi = float(target_range[0]), float(target_range[1])
    if hi <= lo:
        raise InputError("target_range must satisfy lo < hi")
    return (y - lo) / (hi - lo)


def load_sparse_text(
    path,
    d: int | None = None,
    task: str | None = None,
    map01_labels: bool = False,
    target_range=None,
) -> Dataset:
    """Load ``label index:value ...`` text (1-based indices) into a dense matrix.

    Emits a warning when the file is genuinely sparse (density below 10%),
    since densification then inflates memory substantially.
    """
    labels: list[float] = []
    rows: list[list[tuple[int, float]]] = []
    max_idx = 0
    nnz = 0
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.split()
            try:
                label = float(tokens[0])
            except ValueError as exc:
                raise FormatError(f"{path}: line {lineno}: bad label {tokens[0]!r}") from exc
            entries = []
            for tok in tokens[1:]:
                idx_s, sep, val_s = tok.partition(":")
                if not sep:
                    raise FormatError(f"{path}: line {lineno}: expected index:value, got {tok!r}")
                try:
                    idx = int(idx_s)
                    val = float(val_s)
                except ValueError as exc:
                    raise FormatError(f"{path}: line {lineno}: bad pair {tok!r}") from exc
                if idx < 1:
                    raise FormatError(f"{path}: line {lineno}: indices are 1-based, got {idx}")
                entries.append((idx, val))
                max_idx = max(max_idx, idx)
            labels.append(label)
            rows.append(entries)
            nnz += len(entries)
    if not rows:
        raise InputError(f"{path}: empty dataset")
    if d is None:
        d = max_idx
    elif max_idx > d:
        raise InputError(f"{path}: feature index {max_idx} exceeds declared dimension {d}")
    n = len(rows)
    density = nnz / float(max(d * n, 1))
    if density < 0.10:
        warnings.warn(
            f"densifying sparse text with density {density:.1%}; "
            f"dense storage needs {d * n * 8 / 1e6:.1f} MB",
            stacklevel=2,
        )
    X = np.zeros((d, n))
    for j, entries in enumerate(rows):
        for idx, val in entries:
            X[idx - 1, j] = val
    y = np.asarray(labels, dtype=float)
    task, y = _resolve_labels(task, y, map01_labels)
    y = _maybe_rescale_targets(y, target_range)
    ds = Dataset(X=X, y=y, task=task, provenance={"kind": "file", "path": str(path)})
    ds.provenance["digest"] = ds.digest
    return ds.validate()


def load_dense_csv(
    path,
    has_header: bool | None = None,
    task: str | None = None,
    map01_labels: bool = False,
    target_range=None,
) -> Dataset:
    """Load CSV with one sample per row and the target in the last column."""
    rows: list[list[float]] = []
    with open(path, "r") as fh:
        lines = fh.read().splitlines()
    start = 0
    if lines and has_header is None:
        first = lines[0].split(",")[0].strip()
        try:
            float(first)
            has_header = False
        except ValueError:
            has_header = True
    if has_header:
        start = 1
    width = None
    for lineno, line in enumerate(lines[start:], start=start + 1):
        if not line.strip():
            continue
        fields = line.split(",")
        try:
            row = [float(f) for f in fields]
        except ValueError as exc:
            raise FormatError(f"{path}: line {lineno}: non-numeric field") from exc
        if len(row) < 2:
            raise FormatError(f"{path}: line {lineno}: need at least one feature and a target")
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise InputError(f"{path}: line {lineno}: expected {width} columns, got {len(row)}")
        rows.append(row)
    if not rows:
        raise InputError(f"{path}: empty dataset")
    arr = np.asarray(rows)
    X = arr[:, :-1].T.copy()
    y = arr[:, -1].copy()
    task, y = _resolve_labels(task, y, map01_labels)
    y = _maybe_rescale_targets(y, target_range)
    ds = Dataset(X=X, y=y, task=task, provenance={"kind": "file", "path": str(path)})
    ds.provenance["digest"] = ds.digest
    return ds.validate()


def _resolve_labels(task, y, map01_labels):
    if map01_labels:
        y = np.where(y == 0.0, -1.0, y)
        if task is None:
            task = "binary"
    if task is None:
        task = "binary" if np.isin(np.unique(y), (-1.0, 1.0)).all() else "regression"
    return task, y


def save_binary(data, path) -> str:
    """Persist a Dataset (or a bare matrix) in the package binary format.

    Layout: magic "PRLM", u32 version, u64 d, u64 n, u8 task tag, then X as
    column-major little-endian float64, then y.  Round trips bit-exactly.
    """
    if isinstance(data, Dataset):
        ds = data
    else:
        X = np.asarray(data, dtype=float)
        ds = Dataset(X=X, y=np.zeros(X.shape[1]), task="regression")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQQB", FORMAT_VERSION, ds.d, ds.n, _TASK_TAG[ds.task]))
        fh.write(np.asarray(ds.X, dtype="<f8").tobytes(order="F"))
        fh.write(np.asarray(ds.y, dtype="<f8").tobytes())
    return ds.digest


def load_binary(path) -> Dataset:
    """Read the binary format written by :func:`save_binary`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    header = struct.calcsize("<4sIQQB")
    if len(blob) < header:
        raise FormatError(f"{path}: truncated header")
    magic, version, d, n, tag = struct.unpack_from("<4sIQQB", blob)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = header + 8 * d * n + 8 * n
    if len(blob) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(blob)}")
    try:
        task = _TASKS[tag]
    except IndexError:
        raise FormatError(f"{path}: unknown task tag {tag}") from None
    X = np.frombuffer(blob, dtype="<f8", count=d * n, offset=header)
    X = X.reshape((d, n), order="F").copy()
    y = np.frombuffer(blob, dtype="<f8", count=n, offset=header + 8 * d * n).copy()
    ds = Dataset(X=X, y=y, task=task, provenance={"kind": "file", "path": str(path)})
    ds.provenance["digest"] = ds.digest
    return ds.validate()
