"""Convex unit-sum regression with an absolute-sum cap, and forward stepwise.

Without the cardinality cap the feasible set ``{sum b = 1, ||b||_1 <= 1+2s}``
is convex and the exact orthogonal solver is its Euclidean projection, so
the problem is solved by accelerated projected gradient.  Optimality is
certified with the Frank-Wolfe gap, which bounds the distance to the
optimal objective from above.
"""

from __future__ import annotations

import time

import numpy as np

from .core import ConstraintSpec, RegressionData, SolveReport, Status
from .ortho import project


class Quadratic:
    """``||y - X b||^2`` in Gram form: ``b'Gb - 2 c'b + yy``."""

    def __init__(self, G: np.ndarray, c: np.ndarray, yy: float):
        self.G = G
        self.c = c
        self.yy = float(yy)

    @classmethod
    def from_data(cls, data: RegressionData) -> "Quadratic":
        return cls(data.X.T @ data.X, data.X.T @ data.y, data.y @ data.y)

    @property
    def m(self) -> int:
        return self.c.shape[0]

    def restrict(self, idx) -> "Quadratic":
        idx = np.asarray(idx, dtype=int)
        return Quadratic(self.G[np.ix_(idx, idx)], self.c[idx], self.yy)

    def value(self, b: np.ndarray) -> float:
        # clipped at 0: the Gram form can go slightly negative at exact fits
        return max(float(b @ (self.G @ b) - 2.0 * (self.c @ b) + self.yy), 0.0)

    def grad(self, b: np.ndarray) -> np.ndarray:
        return 2.0 * (self.G @ b - self.c)


def _soft_clip(w, lam, lower, upper):
    return np.clip(np.sign(w) * np.maximum(np.abs(w) - lam, 0.0), lower, upper)


def _shift_for_unit_sum(v, lam, lower, upper) -> float:
    """Exact ``mu`` with ``sum(soft_clip(v - mu, lam)) == 1``.

    The sum is piecewise linear and nonincreasing in ``mu``; the root is
    found by locating the bracketing pair of kinks and interpolating.
    """
    kinks = [v - lam, v + lam]
    finite_u = np.isfinite(upper)
    finite_l = np.isfinite(lower)
    kinks.append((v - lam - upper)[finite_u])
    kinks.append((v + lam - lower)[finite_l])
    mus = np.unique(np.concatenate(kinks))
    sums = _soft_clip(v[None, :] - mus[:, None], lam, lower, upper).sum(axis=1)
    # sums is nonincreasing along mus
    if sums[0] < 1.0:
        slope = np.count_nonzero(~finite_u)
        if slope == 0:
            raise ValueError("upper bounds cannot reach a unit sum")
        return float(mus[0] - (1.0 - sums[0]) / slope)
    if sums[-1] > 1.0:
        slope = np.count_nonzero(~finite_l)
        if slope == 0:
            raise ValueError("lower bounds cannot reach a unit sum")
        return float(mus[-1] + (sums[-1] - 1.0) / slope)
    j = int(np.searchsorted(-sums, -1.0, side="left"))
    if sums[j] == 1.0 or j == 0:
        return float(mus[j])
    a, b = mus[j - 1], mus[j]
    fa, fb = sums[j - 1], sums[j]
    return float(a + (fa - 1.0) * (b - a) / (fa - fb))


def project_box(v, s: float, lower, upper) -> np.ndarray:
    """Projection onto ``{sum b = 1, ||b||_1 <= 1 + 2s, lower <= b <= upper}``.

    ``lower <= 0 <= upper`` elementwise; infinite bounds are allowed.  Uses
    the Lagrangian form ``b = clip(soft(v - mu, lam))`` with ``mu`` exact
    and ``lam`` found by a safeguarded secant search.
    """
    v = np.asarray(v, dtype=float)
    lower = np.broadcast_to(np.asarray(lower, dtype=float), v.shape)
    upper = np.broadcast_to(np.asarray(upper, dtype=float), v.shape)
    budget = 1.0 + 2.0 * s

    def point(lam):
        mu = _shift_for_unit_sum(v, lam, lower, upper)
        return _soft_clip(v - mu, lam, lower, upper)

    b = point(0.0)
    if np.abs(b).sum() <= budget:
        return b
    def excess(lam):
        return np.abs(point(lam)).sum() - budget

    # the excess is piecewise linear and nonincreasing in lam; Illinois
    # steps land on the root once the bracket sits inside one piece
    lo, hi = 0.0, 1.0
    f_lo, f_hi = excess(lo), excess(hi)
    while f_hi > 0:
        lo, f_lo = hi, f_hi
        hi *= 2.0
        f_hi = excess(hi)
    side = 0
    for _ in range(200):
        if f_hi > -1e-14 * budget or hi - lo <= 1e-16 * hi:
            break
        mid = hi - f_hi * (hi - lo) / (f_hi - f_lo)
        if not lo < mid < hi:
            mid = 0.5 * (lo + hi)
        f_mid = excess(mid)
        if f_mid > 0:
            lo, f_lo = mid, f_mid
            if side == -1:
                f_hi *= 0.5
            side = -1
        else:
            hi, f_hi = mid, f_mid
            if side == 1:
                f_lo *= 0.5
            side = 1
    return point(hi)


def linear_minimum(g, s: float, lower=None, upper=None) -> float:
    """``min g'u`` over ``{sum u = 1, ||u||_1 <= 1 + 2s, lower <= u <= upper}``."""
    g = np.asarray(g, dtype=float)
    if lower is None and upper is None:
        if g.size == 1:
            return float(g[0])
        return float((1.0 + s) * g.min() - s * g.max())
    upper = np.full(g.shape, np.inf) if upper is None else np.asarray(upper, float)
    lower = np.full(g.shape, -np.inf) if lower is None else np.asarray(lower, float)
    # positive mass never exceeds 1 + s, negative mass never exceeds s
    cap_pos = np.minimum(upper, 1.0 + s)
    cap_neg = np.minimum(-lower, s)

    asc = np.argsort(g, kind="stable")
    asc = asc[cap_pos[asc] > 0]
    cum_pos = np.concatenate(([0.0], np.cumsum(cap_pos[asc])))
    cost_pos = np.concatenate(([0.0], np.cumsum(cap_pos[asc] * g[asc])))
    desc = np.argsort(-g, kind="stable")
    desc = desc[cap_neg[desc] > 0]
    cum_neg = np.concatenate(([0.0], np.cumsum(cap_neg[desc])))
    gain_neg = np.concatenate(([0.0], np.cumsum(cap_neg[desc] * g[desc])))

    if cum_pos[-1] < 1.0:
        raise ValueError("bounds admit no unit-sum point")
    n_max = min(s, cum_neg[-1], cum_pos[-1] - 1.0)
    cands = np.concatenate(([0.0, n_max], cum_neg, cum_pos - 1.0))
    cands = cands[(cands >= 0.0) & (cands <= n_max)]
    vals = np.interp(1.0 + cands, cum_pos, cost_pos) - np.interp(cands, cum_neg, gain_neg)
    return float(vals.min())


def _fista(quad, s, x0, tol, max_iter, lower=None, upper=None):
    """Accelerated projected gradient with gradient-based restarts."""
    boxed = lower is not None or upper is not None
    n = quad.m
    if boxed:
        lo = np.full(n, -np.inf) if lower is None else np.asarray(lower, float)
        hi = np.full(n, np.inf) if upper is None else np.asarray(upper, float)

        def proj(v):
            return project_box(v, s, lo, hi)
    else:
        lo = hi = None
        spec = ConstraintSpec(n, s)

        def proj(v):
            return project(v, spec)

    L = 2.0 * float(np.linalg.eigvalsh(quad.G)[-1]) if n > 1 else 2.0 * float(quad.G[0, 0])
    x = proj(np.asarray(x0, dtype=float))
    fx = quad.value(x)
    if L <= 0:
        return x, fx, 0.0, 0
    yk, t = x.copy(), 1.0
    gap = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        gx = quad.grad(x)
        gap = max(float(gx @ x) - linear_minimum(gx, s, lo, hi), 0.0)
        if gap <= tol:
            break
        x_new = proj(yk - quad.grad(yk) / L)
        step = x_new - x
        if np.linalg.norm(step) <= 1e-15 * max(1.0, np.linalg.norm(x)):
            break
        if (yk - x_new) @ step > 0:
            # momentum points uphill: restart from a plain gradient step
            t = 1.0
            x_new = proj(x - gx / L)
            step = x_new - x
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        yk = x_new + ((t - 1.0) / t_new) * step
        x, t = x_new, t_new
    fx = quad.value(x)
    return x, fx, gap, it


def solve_quadratic(
    quad: Quadratic,
    s: float,
    init=None,
    tol: float = 1e-10,
    max_iter: int = 50_000,
    lower=None,
    upper=None,
) -> tuple[np.ndarray, SolveReport]:
    """Gram-form solver behind :func:`solve_l1_unit_sum`.

    ``report.gap`` is the Frank-Wolfe gap at the returned point, an upper
    bound on its suboptimality in squared-error units.
    """
    start = time.perf_counter()
    x0 = np.full(quad.m, 1.0 / quad.m) if init is None else init
    x, fx, gap, it = _fista(quad, s, x0, tol, max_iter, lower, upper)
    status = Status.OPTIMAL if gap <= tol else Status.ITERATION_LIMIT
    return x, SolveReport(
        objective=fx,
        status=status,
        gap=gap,
        iterations=it,
        elapsed=time.perf_counter() - start,
    )


def solve_l1_unit_sum(
    data: RegressionData, s: float, tol: float = 1e-10, init=None, max_iter: int = 50_000
) -> tuple[np.ndarray, SolveReport]:
    """Global minimizer of ``||y - X b||^2`` s.t. ``sum b = 1``, ``||b||_1 <= 1 + 2s``.

    ``tol`` is the target objective accuracy, certified by the Frank-Wolfe
    gap; the status is ``Optimal`` once the gap falls below it.
    """
    if s < 0:
        raise ValueError("s must be nonnegative")
    return solve_quadratic(Quadratic.from_data(data), s, init=init, tol=tol, max_iter=max_iter)


def _unit_sum_fits(quad: Quadratic, support: list[int], cands: np.ndarray):
    """Sum-to-one least squares on ``support + [j]`` for every candidate ``j``.

    These drop the absolute-sum cap, so their values bound the capped fits
    from below.  Returns ``(values, coefs)`` with ``coefs`` of shape
    ``(len(cands), len(support) + 1)``.
    """
    n = len(support) + 1
    idx = np.empty((cands.size, n), dtype=int)
    idx[:, :-1] = support
    idx[:, -1] = cands
    G = quad.G[idx[:, :, None], idx[:, None, :]]
    kkt = np.zeros((cands.size, n + 1, n + 1))
    kkt[:, :n, :n] = G
    kkt[:, :n, n] = 1.0
    kkt[:, n, :n] = 1.0
    rhs = np.zeros((cands.size, n + 1))
    rhs[:, :n] = quad.c[idx]
    rhs[:, n] = 1.0
    try:
        sol = np.linalg.solve(kkt, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError:
        sol = np.stack([np.linalg.lstsq(a, b, rcond=None)[0] for a, b in zip(kkt, rhs)])
    coefs = sol[:, :n]
    values = np.einsum("ci,cij,cj->c", coefs, G, coefs) - 2.0 * np.einsum(
        "ci,ci->c", coefs, quad.c[idx]
    ) + quad.yy
    return np.maximum(values, 0.0), coefs


def forward_stepwise_path(
    data: RegressionData, s: float, k_max: int, tol: float = 1e-9, quad: Quadratic | None = None
) -> list[np.ndarray]:
    """Greedy nested supports; entry ``j`` is the fit with ``j + 1`` variables.

    Each step adds the variable whose capped convex refit has the lowest
    objective (ties to the lowest index).  Candidates are visited in order
    of their uncapped sum-to-one fit, a lower bound on the capped fit, so
    most of them never need the iterative solver.  The list is shorter
    than ``k_max`` once no variable lowers the objective.
    """
    quad = Quadratic.from_data(data) if quad is None else quad
    m = quad.m
    budget = 1.0 + 2.0 * s
    # single-variable fits b = e_i
    single = np.diag(quad.G) - 2.0 * quad.c + quad.yy
    first = int(np.argmin(single))
    support = [first]
    coef = np.array([1.0])
    value = float(single[first])
    path = [_embed(m, support, coef)]

    while len(support) < min(k_max, m):
        cands = np.setdiff1d(np.arange(m), support)
        bounds, ls_coefs = _unit_sum_fits(quad, support, cands)
        best_val, best_j, best_coef = np.inf, -1, None
        for pos in np.lexsort((cands, bounds)):
            if bounds[pos] > best_val + tol:
                break
            j = int(cands[pos])
            if np.abs(ls_coefs[pos]).sum() <= budget:
                val, b = float(bounds[pos]), ls_coefs[pos]
            else:
                b, rep = solve_quadratic(
                    quad.restrict(support + [j]), s, init=np.append(coef, 0.0), tol=tol
                )
                val = rep.objective
            if val < best_val - tol or (val <= best_val + tol and j < best_j):
                best_val, best_j, best_coef = val, j, b
        if best_val >= value - tol:
            break
        value, coef = best_val, best_coef
        support = support + [best_j]
        path.append(_embed(m, support, coef))
    return path


def forward_stepwise(data: RegressionData, spec: ConstraintSpec) -> np.ndarray:
    """Forward stepwise selection; feasible for ``spec`` by construction."""
    return forward_stepwise_path(data, spec.s, spec.k)[-1]


def _embed(m: int, support, coef) -> np.ndarray:
    out = np.zeros(m)
    out[list(support)] = coef
    return out
