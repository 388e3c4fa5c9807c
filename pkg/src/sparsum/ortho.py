"""Exact projection onto the sparse unit-sum set for an orthogonal design.

With ``X'X = I`` the problem reduces to ``min ||eta - b||^2`` over the
feasible set, where ``eta = X'y``.  An optimal point is determined by a
triple ``(p, n, z)``: the ``p`` largest scores carry positive weight
summing to ``1 + z``, the ``n`` smallest carry negative weight summing to
``-z``, and everything else is zero.  This module finds that triple in
``O(m log m + k)`` time and also exposes the sparsity formulas derived
from it.

All functions are pure and reentrant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ConstraintSpec, SolveReport, Status


@dataclass(frozen=True)
class SortedScores:
    """Scores sorted in descending order.

    ``eta[i] == raw[perm[i]]``; ties keep their original index order.
    """

    eta: np.ndarray
    perm: np.ndarray

    @property
    def m(self) -> int:
        return self.eta.shape[0]

    def unsort(self, values) -> np.ndarray:
        """Map a vector in sorted coordinates back to original order."""
        out = np.empty(self.m)
        out[self.perm] = values
        return out


@dataclass(frozen=True)
class SupportTriple:
    p: int
    n: int
    z: float


@dataclass(frozen=True)
class Breakpoints:
    """Negative-mass thresholds where the support sizes grow.

    ``zplus[p - 1]`` is the level above which ``p`` positive entries fit;
    ``zminus[n - 1]`` the level above which ``n`` negative entries fit.
    """

    zplus: np.ndarray
    zminus: np.ndarray


def sort_scores(eta_raw) -> SortedScores:
    eta_raw = np.asarray(eta_raw, dtype=float)
    if eta_raw.ndim != 1 or eta_raw.size == 0:
        raise ValueError("scores must be a non-empty 1-D vector")
    if not np.all(np.isfinite(eta_raw)):
        raise ValueError("scores must be finite")
    perm = np.argsort(-eta_raw, kind="stable")
    return SortedScores(eta=eta_raw[perm], perm=perm)


class _Prefix:
    """Prefix sums over the sorted scores from both ends."""

    def __init__(self, eta: np.ndarray):
        self.eta = eta
        self.m = eta.shape[0]
        self.top = np.concatenate(([0.0], np.cumsum(eta)))
        self.bottom = np.concatenate(([0.0], np.cumsum(eta[::-1])))
        self._sq = None

    @property
    def sq(self) -> np.ndarray:
        if self._sq is None:
            self._sq = np.concatenate(([0.0], np.cumsum(self.eta * self.eta)))
        return self._sq

    def pos_shift(self, p: int, z: float) -> float:
        return (self.top[p] - 1.0 - z) / p

    def neg_shift(self, n: int, z: float) -> float:
        return (self.bottom[n] + z) / n

    def loss(self, p: int, n: int, z: float) -> float:
        a = self.pos_shift(p, z)
        q = p * a * a
        if n > 0:
            b = self.neg_shift(n, z)
            q += n * b * b
        q += self.sq[self.m - n] - self.sq[p]
        return float(q)

    def interior(self, p: int, n: int) -> float:
        return (n * (self.top[p] - 1.0) - p * self.bottom[n]) / (p + n)


def _check_triple(m: int, p: int, n: int, z: float) -> None:
    if p < 1:
        raise ValueError("a feasible triple needs p >= 1")
    if n < 0 or p + n > m:
        raise ValueError(f"invalid support sizes p={p}, n={n} for m={m}")
    if z < 0:
        raise ValueError("z must be nonnegative")
    if n == 0 and z != 0:
        raise ValueError("z must be 0 when n = 0")


def _beta_sorted(pre: _Prefix, p: int, n: int, z: float) -> np.ndarray:
    beta = np.zeros(pre.m)
    beta[:p] = pre.eta[:p] - pre.pos_shift(p, z)
    if n > 0:
        beta[pre.m - n:] = pre.eta[pre.m - n:] - pre.neg_shift(n, z)
    return beta


def beta_from_triple(scores: SortedScores, tri: SupportTriple) -> np.ndarray:
    """Closed-form minimizer over the affine set fixed by ``tri``.

    Returned in the original (unsorted) index order.
    """
    _check_triple(scores.m, tri.p, tri.n, tri.z)
    pre = _Prefix(scores.eta)
    return scores.unsort(_beta_sorted(pre, tri.p, tri.n, float(tri.z)))


def _cumulative_gaps(eta: np.ndarray) -> np.ndarray:
    """``sum_{j<i} (eta_j - eta_i)`` for ``i = 1..m`` on descending ``eta``.

    Accumulated as ``sum_{j<i} j * (eta_j - eta_{j+1})`` so every term is
    nonnegative: ties give exactly zero and the sequence never decreases.
    """
    steps = np.arange(1, eta.size) * (eta[:-1] - eta[1:])
    return np.concatenate(([0.0], np.cumsum(steps)))


def _support_counts(pre: _Prefix, s: float) -> tuple[int, int]:
    pos_gap = _cumulative_gaps(pre.eta)
    neg_gap = _cumulative_gaps(-pre.eta[::-1])
    pos_ok = np.flatnonzero(pos_gap < 1.0 + s)
    # at least one slot stays positive
    neg_ok = np.flatnonzero(neg_gap[: pre.m - 1] < s)
    pbar = int(pos_ok[-1]) + 1 if pos_ok.size else 1
    nbar = int(neg_ok[-1]) + 1 if neg_ok.size else 0
    return pbar, nbar


def max_support_counts(scores: SortedScores, s: float) -> tuple[int, int]:
    """Largest positive and negative support sizes admissible at level ``s``."""
    if s < 0:
        raise ValueError("s must be nonnegative")
    return _support_counts(_Prefix(scores.eta), float(s))


def breakpoints(scores: SortedScores) -> Breakpoints:
    return Breakpoints(
        zplus=_cumulative_gaps(scores.eta) - 1.0,
        zminus=_cumulative_gaps(-scores.eta[::-1]),
    )


def interior_z(scores: SortedScores, p: int, n: int) -> float:
    """Unconstrained minimizer in ``z`` of the loss for fixed ``(p, n)``."""
    if n < 1:
        raise ValueError("interior_z needs n >= 1; use z = 0 when n = 0")
    if p < 1 or p + n > scores.m:
        raise ValueError(f"invalid support sizes p={p}, n={n} for m={scores.m}")
    return float(_Prefix(scores.eta).interior(p, n))


def _solve_sorted(pre: _Prefix, k: int, s: float) -> SupportTriple:
    k = min(k, pre.m)
    pbar, nbar = _support_counts(pre, s)
    # once the support fills all m slots the loss is a parabola in z again,
    # so that case goes through the vertex clamp below
    if pbar + nbar <= k and pbar + nbar < pre.m:
        return SupportTriple(pbar, nbar, s if nbar > 0 else 0.0)

    best = None
    for n in range(max(0, k - pbar), min(nbar, k - 1) + 1):
        p = k - n
        if n == 0:
            z = 0.0
        else:
            # the loss is a parabola in z; clamp its vertex into [0, s]
            z = min(max(pre.interior(p, n), 0.0), s)
        q = pre.loss(p, n, z)
        if best is None or q < best[0]:
            best = (q, SupportTriple(p, n, z))
    return best[1]


def solve_orthogonal_triple(
    eta_raw, spec: ConstraintSpec
) -> tuple[SortedScores, SupportTriple]:
    """Sorted scores and the optimal support triple (sorted coordinates)."""
    scores = sort_scores(eta_raw)
    return scores, _solve_sorted(_Prefix(scores.eta), spec.k, spec.s)


def solve_orthogonal(eta_raw, spec: ConstraintSpec) -> tuple[np.ndarray, SolveReport]:
    """Exact minimizer of ``||eta - b||^2`` over the feasible set.

    Parameters
    ----------
    eta_raw : (m,) array
        Scores, e.g. ``X'y`` for an orthogonal design.  Need not be sorted.
    spec : ConstraintSpec
        Cardinality and negative-mass caps.  ``k >= m`` makes the set
        convex and the result is then the Euclidean projection onto it.

    Returns
    -------
    beta : (m,) array
        Optimal weights in the original index order.
    report : SolveReport
        Always ``Optimal`` with zero gap; ``objective`` is
        ``||eta - beta||^2``.
    """
    projected = project(eta_raw, spec)
    r = np.asarray(eta_raw, dtype=float) - projected
    return projected, SolveReport(
        objective=float(r @ r), status=Status.OPTIMAL, gap=0.0, iterations=1
    )


def project(eta_raw, spec: ConstraintSpec) -> np.ndarray:
    """Weights-only variant of :func:`solve_orthogonal` for inner loops."""
    eta_raw = np.asarray(eta_raw, dtype=float)
    if eta_raw.ndim != 1 or eta_raw.size == 0 or not np.isfinite(eta_raw).all():
        raise ValueError("scores must be a non-empty finite 1-D vector")
    perm = np.argsort(-eta_raw, kind="stable")
    pre = _Prefix(eta_raw[perm])
    tri = _solve_sorted(pre, spec.k, spec.s)
    out = np.empty(pre.m)
    out[perm] = _beta_sorted(pre, tri.p, tri.n, tri.z)
    return out


def min_nonzeros(scores: SortedScores) -> int:
    """Fewest nonzeros any absolute-sum budget can produce (attained at s = 0)."""
    return int(np.flatnonzero(_cumulative_gaps(scores.eta) < 1.0)[-1]) + 1


def linear_spacing_bound(delta: float) -> int:
    """Closed form of :func:`min_nonzeros` for scores spaced ``delta`` apart."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    return int(math.floor(0.5 * (math.sqrt((delta + 8.0) / delta) + 1.0)))
