"""Mixed-integer formulation, desk-scale branch and bound, and LP export.

The model splits each weight into positive and negative parts and ties it
to a binary indicator through big-M rows::

    min  b'(X'X + lam I) b - 2 y'X b
    s.t. b = bp - bn,  sum b = 1,  sum bp <= 1 + s,  sum bn <= s,
         M_minus z_i <= b_i <= M_plus z_i,  sum z <= k,
         bp, bn >= 0,  z binary

At ``lam = 0`` the objective is ``||y - X b||^2 - y'y``.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import re
import time
from dataclasses import dataclass, field

import numpy as np

from .core import ZERO_TOL, ConstraintSpec, RegressionData, SolveReport, Status, is_feasible, objective
from .l1path import Quadratic, solve_quadratic

logger = logging.getLogger(__name__)

DEFAULT_TIME_LIMIT = 600.0


@dataclass(frozen=True)
class BigM:
    m_minus: float
    m_plus: float

    def __post_init__(self):
        if self.m_minus > 0 or self.m_plus < 0:
            raise ValueError("need m_minus <= 0 <= m_plus")

    @classmethod
    def natural(cls, spec: ConstraintSpec) -> "BigM":
        """Bounds implied by the absolute-sum cap alone."""
        return cls(-spec.s, 1.0 + spec.s)

    def is_natural(self, spec: ConstraintSpec) -> bool:
        return self.m_minus <= -spec.s and self.m_plus >= 1.0 + spec.s


def big_m_from_dfo(dfo_solution, spec: ConstraintSpec) -> BigM:
    """Big-M bounds scaled from a heuristic solution, clamped to the natural ones."""
    b = np.asarray(dfo_solution, dtype=float)
    k, s = spec.k, spec.s
    m_minus = max(1.5 * min(b.min(), -s / k), -s)
    m_plus = min(1.5 * max(b.max(), (1.0 + s) / k), 1.0 + s)
    return BigM(float(m_minus), float(m_plus))


def touches_big_m(beta, bigm: BigM, spec: ConstraintSpec, tol: float = 1e-7) -> bool:
    """True when a heuristic bound is active at ``beta`` (it may be cutting off better points)."""
    if bigm.is_natural(spec):
        return False
    beta = np.asarray(beta, dtype=float)
    hi = bigm.m_plus < 1.0 + spec.s and np.any(beta >= bigm.m_plus - tol)
    lo = bigm.m_minus > -spec.s and np.any((beta < 0) & (beta <= bigm.m_minus + tol))
    return bool(hi or lo)


@dataclass
class MiqpModel:
    """Dense MIQP data; variables are ordered ``b, bp, bn, z`` (4m total)."""

    quad: np.ndarray
    lin: np.ndarray
    offset: float
    spec: ConstraintSpec
    bigm: BigM
    lam: float = 0.0
    names: list[str] = field(init=False)

    def __post_init__(self):
        m = self.lin.shape[0]
        if self.quad.shape != (m, m):
            raise ValueError("quadratic term does not match the variable count")
        self.names = (
            [f"b{i + 1}" for i in range(m)]
            + [f"bp{i + 1}" for i in range(m)]
            + [f"bn{i + 1}" for i in range(m)]
            + [f"z{i + 1}" for i in range(m)]
        )

    @property
    def m(self) -> int:
        return self.lin.shape[0]

    def objective_value(self, beta) -> float:
        beta = np.asarray(beta, dtype=float)
        return float(beta @ self.quad @ beta + self.lin @ beta)

    def rows(self):
        """Linear constraints as ``(name, {var: coef}, sense, rhs)``."""
        m = self.m
        b = range(m)
        bp = range(m, 2 * m)
        bn = range(2 * m, 3 * m)
        z = range(3 * m, 4 * m)
        out = []
        for i in range(m):
            out.append((f"split{i + 1}", {b[i]: 1.0, bp[i]: -1.0, bn[i]: 1.0}, "=", 0.0))
        out.append(("unit_sum", {j: 1.0 for j in b}, "=", 1.0))
        out.append(("pos_mass", {j: 1.0 for j in bp}, "<=", 1.0 + self.spec.s))
        out.append(("neg_mass", {j: 1.0 for j in bn}, "<=", self.spec.s))
        for i in range(m):
            out.append((f"upper{i + 1}", {b[i]: 1.0, z[i]: -self.bigm.m_plus}, "<=", 0.0))
            out.append((f"lower{i + 1}", {b[i]: 1.0, z[i]: -self.bigm.m_minus}, ">=", 0.0))
        out.append(("card", {j: 1.0 for j in z}, "<=", float(self.spec.k)))
        return out

    def extend(self, beta) -> np.ndarray:
        """Lift weights to a full model point."""
        beta = np.asarray(beta, dtype=float)
        return np.concatenate(
            [beta, np.maximum(beta, 0.0), np.maximum(-beta, 0.0),
             (np.abs(beta) > ZERO_TOL).astype(float)]
        )

    def is_feasible_point(self, x, tol: float = 1e-9) -> bool:
        m = self.m
        x = np.asarray(x, dtype=float)
        if np.any(x[m:3 * m] < -tol):
            return False
        zs = x[3 * m:]
        if np.any(np.minimum(np.abs(zs), np.abs(zs - 1.0)) > tol):
            return False
        for _, coefs, sense, rhs in self.rows():
            lhs = sum(c * x[j] for j, c in coefs.items())
            if sense == "=" and abs(lhs - rhs) > tol:
                return False
            if sense == "<=" and lhs > rhs + tol:
                return False
            if sense == ">=" and lhs < rhs - tol:
                return False
        return True


def build_model(
    data: RegressionData, spec: ConstraintSpec, bigm: BigM, lam: float = 0.0
) -> MiqpModel:
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    X = data.X
    return MiqpModel(
        quad=X.T @ X + lam * np.eye(data.m),
        lin=-2.0 * (X.T @ data.y),
        offset=float(data.y @ data.y),
        spec=spec,
        bigm=bigm,
        lam=float(lam),
    )


def _fmt(v: float) -> str:
    v = float(v)
    if v == 0:
        v = 0.0  # no "-0"
    return f"{v:.17g}"


def _term(coef: float, name: str) -> str:
    sign = "-" if coef < 0 else "+"
    return f"{sign} {_fmt(abs(coef))} {name}"


def _wrap(terms: list[str], indent: str = "   ", per_line: int = 6) -> list[str]:
    return [indent + " ".join(terms[i:i + per_line]) for i in range(0, len(terms), per_line)]


def export_model(model: MiqpModel) -> str:
    """Render the model in CPLEX LP format.

    The constant ``y'y`` is written as a comment, not as part of the
    objective.  Output is deterministic for a given model.
    """
    m = model.m
    names = model.names
    lines = [
        "\\ sparse unit-sum regression",
        f"\\ m = {m}, k = {model.spec.k}, s = {_fmt(model.spec.s)}, lambda = {_fmt(model.lam)}",
        f"\\ objective offset y'y = {_fmt(model.offset)}",
        "Minimize",
        " obj:",
    ]
    lin_terms = [_term(model.lin[i], names[i]) for i in range(m) if model.lin[i] != 0]
    lines += _wrap(lin_terms)
    quad_terms = []
    for i in range(m):
        for j in range(i, m):
            if i == j:
                c = 2.0 * model.quad[i, i]
                if c != 0:
                    quad_terms.append(f"{'-' if c < 0 else '+'} {_fmt(abs(c))} {names[i]} ^ 2")
            else:
                c = 2.0 * (model.quad[i, j] + model.quad[j, i])
                if c != 0:
                    quad_terms.append(
                        f"{'-' if c < 0 else '+'} {_fmt(abs(c))} {names[i]} * {names[j]}"
                    )
    if quad_terms:
        lines.append("   + [")
        lines += _wrap(quad_terms, indent="     ", per_line=4)
        lines.append("   ] / 2")
    lines.append("Subject To")
    for name, coefs, sense, rhs in model.rows():
        expr = " ".join(_term(c, names[j]) for j, c in sorted(coefs.items()) if c != 0)
        lines.append(f" {name}: {expr} {sense} {_fmt(rhs)}")
    lines.append("Bounds")
    for i in range(m):
        lines.append(f" {names[i]} free")
    lines.append("Binaries")
    lines += _wrap(names[3 * m:], indent=" ", per_line=10)
    lines.append("End")
    return "\n".join(lines) + "\n"


_TERM = re.compile(r"([+-])\s*([0-9.eE+-]+)\s+(\w+)(?:\s*\^\s*2|\s*\*\s*(\w+))?")
_SECTIONS = ("Minimize", "Subject To", "Bounds", "Binaries", "End")


def parse_lp(text: str) -> dict:
    """Read back the LP subset written by :func:`export_model`.

    Returns a dict with ``linear`` and ``quadratic`` objective coefficients
    keyed by variable names (the quadratic part already divided by 2),
    ``constraints`` as ``name -> (coefs, sense, rhs)``, ``free`` and
    ``binaries`` name lists.
    """
    sections: dict[str, list[str]] = {}
    current = None
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("\\"):
            continue
        if line in _SECTIONS:
            current = line
            sections[current] = []
            continue
        if current is None:
            raise ValueError(f"content before any section: {line!r}")
        sections[current].append(line)

    obj = " ".join(sections.get("Minimize", []))
    obj = obj.split(":", 1)[1] if ":" in obj else obj
    quad_part = ""
    if "[" in obj:
        lin_part, rest = obj.split("[", 1)
        quad_part, tail = rest.split("]", 1)
        if tail.strip() != "/ 2":
            raise ValueError("quadratic objective must be written as [ ... ] / 2")
        lin_part = lin_part.rstrip().rstrip("+").rstrip()
    else:
        lin_part = obj
    linear: dict[str, float] = {}
    for sign, num, var, other in _TERM.findall(lin_part):
        linear[var] = linear.get(var, 0.0) + (-1 if sign == "-" else 1) * float(num)
    quadratic: dict[tuple[str, str], float] = {}
    for sign, num, var, other in _TERM.findall(quad_part):
        key = (var, other or var)
        quadratic[key] = quadratic.get(key, 0.0) + (-1 if sign == "-" else 1) * float(num) / 2.0

    constraints = {}
    for line in sections.get("Subject To", []):
        name, body = line.split(":", 1)
        match = re.match(r"(.*?)(<=|>=|=)\s*(\S+)\s*$", body)
        if not match:
            raise ValueError(f"cannot parse constraint {line!r}")
        expr, sense, rhs = match.groups()
        coefs = {}
        for sign, num, var, _ in _TERM.findall(expr):
            coefs[var] = coefs.get(var, 0.0) + (-1 if sign == "-" else 1) * float(num)
        constraints[name.strip()] = (coefs, sense, float(rhs))

    free = [line.split()[0] for line in sections.get("Bounds", []) if line.endswith("free")]
    binaries = " ".join(sections.get("Binaries", [])).split()
    return {
        "linear": linear,
        "quadratic": quadratic,
        "constraints": constraints,
        "free": free,
        "binaries": binaries,
    }


@dataclass(order=True)
class _Node:
    key: tuple
    excluded: frozenset = field(compare=False)
    included: frozenset = field(compare=False)
    bound: float = field(compare=False)
    relax: tuple | None = field(compare=False, default=None)


class _Relaxation:
    """Convex relaxation at a node: drop the cardinality cap, zero the excluded."""

    def __init__(self, model: MiqpModel, tol: float):
        self.quad = Quadratic(model.quad, -0.5 * model.lin, model.offset)
        self.s = model.spec.s
        self.boxed = not model.bigm.is_natural(model.spec)
        self.lower = np.full(model.m, model.bigm.m_minus)
        self.upper = np.full(model.m, model.bigm.m_plus)
        self.tol = tol
        self.m = model.m

    def feasible(self, free: np.ndarray) -> bool:
        if not self.boxed:
            return free.size > 0
        return free.size > 0 and self.upper[free].sum() >= 1.0

    def solve(self, free: np.ndarray, init=None):
        """Return ``(beta, value, lower_bound)`` on the full index set."""
        sub = self.quad.restrict(free)
        kwargs = {}
        if self.boxed:
            kwargs = {"lower": self.lower[free], "upper": self.upper[free]}
        x0 = None if init is None else init[free]
        if x0 is not None and not np.any(x0):
            x0 = None
        b, rep = solve_quadratic(sub, self.s, init=x0, tol=self.tol, **kwargs)
        beta = np.zeros(self.m)
        beta[free] = b
        return beta, rep.objective, rep.objective - rep.gap


def branch_and_bound(
    model: MiqpModel,
    data: RegressionData,
    spec: ConstraintSpec,
    time_limit: float = DEFAULT_TIME_LIMIT,
    gap_tol: float = 1e-6,
    incumbent=None,
    relax_tol: float | None = None,
) -> tuple[np.ndarray, SolveReport]:
    """Solve the model to certified optimality, or until the time limit.

    Parameters
    ----------
    model : MiqpModel
        Its big-M bounds become box constraints in every node relaxation,
        so optimality is certified for the big-M restricted problem.
    data, spec : the underlying regression problem.
    time_limit : float
        Wall-clock seconds; must be positive.
    gap_tol : float
        Absolute objective tolerance.  A node is pruned once its certified
        lower bound reaches ``incumbent - gap_tol``.
    incumbent : (m,) array, optional
        Feasible starting solution, typically the DFO output.
    relax_tol : float, optional
        Frank-Wolfe gap target for node relaxations (default
        ``gap_tol / 10``).

    Returns
    -------
    beta : (m,) array
    report : SolveReport
        ``Optimal`` when the tree is exhausted (``gap <= gap_tol``),
        ``TimeLimit`` otherwise, with the best incumbent.
    """
    if not time_limit > 0:
        raise ValueError("time_limit must be positive")
    start = time.perf_counter()
    m, k = data.m, min(spec.k, data.m)
    relax = _Relaxation(model, gap_tol / 10.0 if relax_tol is None else relax_tol)

    def model_value(beta):
        return model.objective_value(beta) + model.offset

    best_beta, best_val = None, np.inf
    if incumbent is not None:
        incumbent = np.asarray(incumbent, dtype=float)
        if not is_feasible(incumbent, spec):
            raise ValueError("incumbent is not feasible")
        best_beta, best_val = incumbent.copy(), model_value(incumbent)

    def offer(beta):
        nonlocal best_beta, best_val
        val = model_value(beta)
        if val < best_val and is_feasible(beta, spec):
            best_beta, best_val = beta, val

    counter = itertools.count()
    open_nodes: list[_Node] = []
    heapq.heappush(open_nodes, _Node((0, -np.inf, next(counter)), frozenset(), frozenset(), -np.inf))
    pruned_bound = np.inf
    nodes = 0
    timed_out = False

    while open_nodes:
        if time.perf_counter() - start > time_limit:
            timed_out = True
            break
        node = heapq.heappop(open_nodes)
        if node.bound >= best_val - gap_tol:
            pruned_bound = min(pruned_bound, node.bound)
            continue
        nodes += 1
        free = np.array([i for i in range(m) if i not in node.excluded], dtype=int)
        if not relax.feasible(free):
            continue
        if node.relax is not None:
            beta, val, lb = node.relax
        else:
            beta, val, lb = relax.solve(free, init=best_beta)
        lb = max(lb, node.bound)
        if lb >= best_val - gap_tol:
            pruned_bound = min(pruned_bound, lb)
            continue
        support = np.flatnonzero(np.abs(beta) > ZERO_TOL)
        if support.size <= k:
            # the relaxation already satisfies the cap: node solved
            offer(beta)
            pruned_bound = min(pruned_bound, lb)
            continue

        # rounding heuristic: refit on the k largest entries
        top = np.sort(support[np.argsort(-np.abs(beta[support]), kind="stable")[:k]])
        if relax.feasible(top):
            cand, _, _ = relax.solve(top, init=beta)
            offer(cand)
        if lb >= best_val - gap_tol:
            pruned_bound = min(pruned_bound, lb)
            continue

        undecided = [i for i in support if i not in node.included]
        if not undecided:
            # every nonzero is forced in, yet there are more than k
            continue
        branch = max(undecided, key=lambda i: (abs(beta[i]), -i))
        depth = len(node.excluded) + len(node.included) + 1

        included = node.included | {branch}
        if len(included) < k:
            inc_child = _Node((-depth, lb, next(counter)), node.excluded, included, lb, (beta, val, lb))
        else:
            excluded = frozenset(i for i in range(m) if i not in included)
            inc_child = _Node((-depth, lb, next(counter)), excluded, included, lb)
        exc_child = _Node((-depth, lb, next(counter)), node.excluded | {branch}, node.included, lb)
        # depth-first; the include child has the smaller counter so it pops first
        heapq.heappush(open_nodes, exc_child)
        heapq.heappush(open_nodes, inc_child)

    lower = min([n.bound for n in open_nodes] + [pruned_bound, best_val])
    gap = max(best_val - lower, 0.0) if np.isfinite(best_val) else None
    status = Status.TIME_LIMIT if timed_out else Status.OPTIMAL
    if best_beta is None:
        raise RuntimeError("no feasible solution found")
    if touches_big_m(best_beta, model.bigm, spec):
        logger.warning("solution sits on a heuristic big-M bound; optimality holds for the restricted problem only")
    return best_beta, SolveReport(
        objective=objective(data, best_beta),
        status=status,
        gap=gap,
        iterations=nodes,
        elapsed=time.perf_counter() - start,
    )
