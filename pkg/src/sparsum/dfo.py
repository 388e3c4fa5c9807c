"""Discrete first-order descent for a general design matrix.

Each step linearizes ``f(b) = 0.5 ||y - X b||^2`` at the current point and
projects the gradient step ``b - grad f(b) / L`` back onto the (nonconvex)
feasible set with the exact orthogonal-design solver.  With ``L`` at least
the largest eigenvalue of ``X'X`` every step is a descent step.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .core import ConstraintSpec, RegressionData, SolveReport, Status, is_feasible
from .ortho import project

# applied to the power-iteration estimate so that L stays above the true value
LIPSCHITZ_SAFETY = 1.0 + 1e-6


@dataclass(frozen=True)
class DfoConfig:
    epsilon: float = 1e-6
    max_iterations: int = 10_000
    lipschitz_override: float | None = None
    relative: bool = False

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.lipschitz_override is not None and not self.lipschitz_override > 0:
            raise ValueError("lipschitz_override must be positive")


def power_iteration(A: np.ndarray, rtol: float = 1e-12, max_iter: int = 100_000) -> float:
    """Largest eigenvalue of a symmetric positive semidefinite matrix."""
    rng = np.random.default_rng(0)
    v = rng.standard_normal(A.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = A @ v
        lam_new = float(v @ w)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        if abs(lam_new - lam) <= rtol * abs(lam_new):
            return lam_new
        lam = lam_new
    return lam


def lipschitz_constant(data: RegressionData) -> float:
    """Spectral norm of ``X'X`` by power iteration.

    Works on whichever of ``X'X`` and ``XX'`` is smaller; both share the
    nonzero spectrum.
    """
    X = data.X
    if not np.any(X):
        raise ValueError("design matrix is all zeros")
    A = X.T @ X if X.shape[1] <= X.shape[0] else X @ X.T
    return power_iteration(A)


def gradient(data: RegressionData, w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (data.m,):
        raise ValueError(f"weights have shape {w.shape}, expected ({data.m},)")
    return data.X.T @ (data.X @ w - data.y)


def dfo_step(data: RegressionData, spec: ConstraintSpec, w, L: float) -> np.ndarray:
    """Project the gradient step ``w - grad / L`` onto the feasible set."""
    w = np.asarray(w, dtype=float)
    return project(w - gradient(data, w) / L, spec)


def _half_sse(data: RegressionData, w: np.ndarray) -> float:
    r = data.y - data.X @ w
    return 0.5 * float(r @ r)


def dfo_solve(
    data: RegressionData,
    spec: ConstraintSpec,
    init,
    cfg: DfoConfig = DfoConfig(),
) -> tuple[np.ndarray, SolveReport]:
    """Run projected descent from a feasible start until progress stalls.

    Parameters
    ----------
    data : RegressionData
    spec : ConstraintSpec
    init : (m,) array
        Feasible starting point, e.g. from forward stepwise selection.
    cfg : DfoConfig
        ``epsilon`` bounds the per-iteration improvement of
        ``0.5 ||y - X b||^2`` below which the loop stops.

    Returns
    -------
    beta : (m,) array
        Last accepted iterate.
    report : SolveReport
        ``Heuristic`` on convergence, ``IterationLimit`` otherwise.
        ``trace`` lists ``||y - X b||^2`` for the start and every accepted
        iterate, and is nonincreasing.
    """
    start = time.perf_counter()
    beta = np.asarray(init, dtype=float).copy()
    if not is_feasible(beta, spec):
        raise ValueError("initial point is not feasible")
    if cfg.lipschitz_override is not None:
        L = cfg.lipschitz_override
    else:
        L = lipschitz_constant(data) * LIPSCHITZ_SAFETY

    Xty = data.X.T @ data.y
    f = _half_sse(data, beta)
    trace = [2.0 * f]
    status = Status.ITERATION_LIMIT
    iterations = 0
    for iterations in range(1, cfg.max_iterations + 1):
        grad = data.X.T @ (data.X @ beta) - Xty
        candidate = project(beta - grad / L, spec)
        f_new = _half_sse(data, candidate)
        if f_new > f:
            # rounding noise at a fixed point; keep the better iterate
            status = Status.HEURISTIC
            break
        improvement = f - f_new
        beta, f = candidate, f_new
        trace.append(2.0 * f)
        threshold = cfg.epsilon * max(f + improvement, 0.0) if cfg.relative else cfg.epsilon
        if improvement < threshold:
            status = Status.HEURISTIC
            break

    return beta, SolveReport(
        objective=2.0 * f,
        status=status,
        gap=None,
        iterations=iterations,
        elapsed=time.perf_counter() - start,
        trace=trace,
    )
