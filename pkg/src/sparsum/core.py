"""Problem and solution types shared by every solver.

The problem is unit-sum least squares with a cardinality cap ``k`` and an
absolute-sum cap ``1 + 2 s``::

    min ||y - X b||^2   s.t.  sum(b) = 1,  ||b||_0 <= k,  ||b||_1 <= 1 + 2 s

Weights are plain 1-D ``numpy`` arrays.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

ZERO_TOL = 1e-9
FEAS_TOL = 1e-8


@dataclass(frozen=True)
class ConstraintSpec:
    """Cardinality cap ``k`` and negative-mass cap ``s``."""

    k: int
    s: float

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k!r}")
        if not np.isfinite(self.s) or self.s < 0:
            raise ValueError(f"s must be finite and nonnegative, got {self.s!r}")
        object.__setattr__(self, "k", int(self.k))
        object.__setattr__(self, "s", float(self.s))

    @property
    def l1_budget(self) -> float:
        return 1.0 + 2.0 * self.s


@dataclass(frozen=True)
class RegressionData:
    """Design matrix ``X`` (t x m) and response ``y`` (length t)."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if X.ndim != 2:
            raise ValueError(f"X must be 2-D, got shape {X.shape}")
        if y.ndim != 1:
            raise ValueError(f"y must be 1-D, got shape {y.shape}")
        t, m = X.shape
        if t < 1 or m < 1:
            raise ValueError(f"X must be non-empty, got shape {X.shape}")
        if y.shape[0] != t:
            raise ValueError(f"X has {t} rows but y has length {y.shape[0]}")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def t(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.X.shape[1]

    def subset(self, rows) -> "RegressionData":
        return RegressionData(self.X[rows], self.y[rows])


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    HEURISTIC = "Heuristic"
    ITERATION_LIMIT = "IterationLimit"
    TIME_LIMIT = "TimeLimit"


@dataclass
class SolveReport:
    """Outcome of a solve.

    ``objective`` is always the plain squared error ``||y - X b||^2``.
    ``trace`` holds the per-iteration objective for iterative solvers.
    """

    objective: float
    status: Status
    gap: float | None = None
    iterations: int = 0
    elapsed: float = 0.0
    trace: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "objective": float(self.objective),
            "status": self.status.value,
            "gap": None if self.gap is None else float(self.gap),
            "iterations": int(self.iterations),
            "elapsed": float(self.elapsed),
        }


def _check_weights(data: RegressionData, w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (data.m,):
        raise ValueError(f"weights have shape {w.shape}, expected ({data.m},)")
    return w


def objective(data: RegressionData, w) -> float:
    """Squared residual norm ``||y - X w||^2``."""
    w = _check_weights(data, w)
    r = data.y - data.X @ w
    return float(r @ r)


def nonzeros(w, tol: float = ZERO_TOL) -> int:
    return int(np.count_nonzero(np.abs(np.asarray(w)) > tol))


def negative_sum(w) -> float:
    """Magnitude of the total short mass, ``-sum(w[w < 0])``."""
    w = np.asarray(w, dtype=float)
    return float(-w[w < 0].sum())


def is_feasible(w, spec: ConstraintSpec, tol: float = FEAS_TOL) -> bool:
    if tol <= 0:
        raise ValueError("tol must be positive")
    w = np.asarray(w, dtype=float)
    if not np.all(np.isfinite(w)):
        return False
    if abs(w.sum() - 1.0) > tol:
        return False
    if nonzeros(w) > spec.k:
        return False
    return bool(np.abs(w).sum() <= spec.l1_budget + tol)
