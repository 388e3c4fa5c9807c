"""Index tracking: OR-library ingestion, return conversion and portfolio fits.

OR-library ``indtrack`` files are a whitespace-separated stream: a header
``N T`` followed by ``T + 1`` prices for the index and then for each of the
``N`` constituents in turn.
"""

from __future__ import annotations

import csv
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import ConstraintSpec, RegressionData, SolveReport, nonzeros, objective
from .dfo import DfoConfig, dfo_solve
from .l1path import forward_stepwise_path, solve_l1_unit_sum
from .mio import BigM, big_m_from_dfo, branch_and_bound, build_model

_TOKEN = re.compile(rb"\S+")


class ParseError(ValueError):
    """Malformed input; ``offset`` is a byte offset, ``line`` a 1-based line."""

    def __init__(self, message: str, offset: int | None = None, line: int | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"byte {offset}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.offset = offset
        self.line = line


@dataclass(frozen=True)
class PricePanel:
    index: np.ndarray
    constituents: np.ndarray
    source_id: str = ""

    @property
    def m(self) -> int:
        return self.constituents.shape[1]


@dataclass(frozen=True)
class IndexDataset:
    index_returns: np.ndarray
    constituent_returns: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        y = np.array(self.index_returns, dtype=float)
        X = np.array(self.constituent_returns, dtype=float)
        if y.ndim != 1 or X.ndim != 2 or X.shape[0] != y.size:
            raise ValueError(f"index returns {y.shape} and constituents {X.shape} disagree")
        if y.size == 0 or X.shape[1] == 0:
            raise ValueError("empty dataset")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
            raise ValueError("dataset has missing or non-finite values")
        y.setflags(write=False)
        X.setflags(write=False)
        object.__setattr__(self, "index_returns", y)
        object.__setattr__(self, "constituent_returns", X)

    @property
    def t(self) -> int:
        return self.index_returns.size

    @property
    def m(self) -> int:
        return self.constituent_returns.shape[1]

    def regression(self) -> RegressionData:
        return RegressionData(self.constituent_returns, self.index_returns)

    def rows(self, idx) -> "IndexDataset":
        return IndexDataset(self.index_returns[idx], self.constituent_returns[idx], self.source_id)


@dataclass
class TrackConfig:
    s: float = 0.0
    time_limit: float = 60.0
    gap_tol: float = 1e-9
    safe_bigm: bool = False
    split: int | None = None
    # return rows (0-based, full series) removed from the test half
    drop_rows: tuple = ()
    dfo: DfoConfig = field(default_factory=DfoConfig)


@dataclass
class TrackResult:
    k: int
    nonzeros: int
    r2_oos: float
    weights: np.ndarray
    in_sample_sse: float
    report: SolveReport
    non_unique: bool = False

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "nonzeros": self.nonzeros,
            "r2_oos": self.r2_oos,
            "in_sample_sse": self.in_sample_sse,
            "non_unique": self.non_unique,
            "weights": [float(v) for v in self.weights],
            "report": self.report.to_dict(),
        }


def parse_orlib(raw, source_id: str = "") -> PricePanel:
    """Parse an OR-library index-tracking price file.

    Raises
    ------
    ParseError
        On a malformed header, a token count that disagrees with the header,
        or a non-numeric token; each carries the byte offset.
    """
    raw = raw.encode() if isinstance(raw, str) else bytes(raw)
    tokens = [(mt.start(), mt.group()) for mt in _TOKEN.finditer(raw)]
    if len(tokens) < 2:
        raise ParseError("missing 'N T' header", offset=0)
    header = []
    for off, tok in tokens[:2]:
        try:
            header.append(int(tok))
        except ValueError:
            raise ParseError(f"header count {tok.decode(errors='replace')!r} is not an integer", offset=off)
    n_assets, periods = header
    if n_assets < 1 or periods < 1:
        raise ParseError(f"header counts must be positive, got N={n_assets} T={periods}", offset=tokens[0][0])
    expected = (n_assets + 1) * (periods + 1)
    body = tokens[2:]
    if len(body) != expected:
        offset = body[expected][0] if len(body) > expected else len(raw)
        raise ParseError(
            f"header N={n_assets} T={periods} expects {expected} prices, found {len(body)}",
            offset=offset,
        )
    values = np.empty(expected)
    for i, (off, tok) in enumerate(body):
        try:
            values[i] = float(tok)
        except ValueError:
            raise ParseError(f"non-numeric token {tok.decode(errors='replace')!r}", offset=off)
        if not np.isfinite(values[i]):
            raise ParseError(f"non-finite price {tok.decode(errors='replace')!r}", offset=off)
    series = values.reshape(n_assets + 1, periods + 1)
    return PricePanel(series[0], series[1:].T.copy(), source_id)


def format_orlib(panel: PricePanel) -> str:
    """Inverse of :func:`parse_orlib`, one price per line."""
    lines = [f"{panel.m} {panel.index.size - 1}"]
    for col in [panel.index] + list(panel.constituents.T):
        lines.extend(repr(float(v)) for v in col)
    return "\n".join(lines) + "\n"


def prices_to_returns(panel: PricePanel) -> IndexDataset:
    """Simple returns ``P_t / P_{t-1} - 1`` for the index and every constituent."""
    index = np.asarray(panel.index, dtype=float)
    cons = np.asarray(panel.constituents, dtype=float)
    if index.size < 2:
        raise ValueError("need at least two prices")
    if np.any(index <= 0) or np.any(cons <= 0):
        raise ValueError("prices must be strictly positive")
    return IndexDataset(index[1:] / index[:-1] - 1.0, cons[1:] / cons[:-1] - 1.0, panel.source_id)


def load_csv(path, source_id: str | None = None) -> IndexDataset:
    """Header-less CSV of returns: first column the index, the rest constituents."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise ParseError("non-numeric field", line=lineno)
            if len(rows[-1]) < 2:
                raise ParseError("need an index column and at least one constituent", line=lineno)
            if len(rows[-1]) != len(rows[0]):
                raise ParseError(f"expected {len(rows[0])} fields, found {len(rows[-1])}", line=lineno)
    if not rows:
        raise ParseError("empty file", line=1)
    arr = np.array(rows)
    return IndexDataset(arr[:, 0], arr[:, 1:], str(path) if source_id is None else source_id)


def load_dataset(path) -> IndexDataset:
    """OR-library text for ``.txt`` files, returns CSV otherwise."""
    path = str(path)
    if path.lower().endswith(".csv"):
        return load_csv(path)
    with open(path, "rb") as fh:
        return prices_to_returns(parse_orlib(fh.read(), source_id=path))


def split_halves(ds: IndexDataset, split: int | None = None) -> tuple[IndexDataset, IndexDataset]:
    """First ``split`` rows for training, the rest for testing (default: halves)."""
    split = ds.t // 2 if split is None else split
    if ds.t < 2 or not 1 <= split < ds.t:
        raise ValueError(f"cannot split {ds.t} rows at {split}")
    return ds.rows(slice(0, split)), ds.rows(slice(split, ds.t))


def out_of_sample_r2(test: IndexDataset, w) -> float:
    """``1 - SSE / SST`` with SST taken about the test-set mean."""
    w = np.asarray(w, dtype=float)
    if w.shape != (test.m,):
        raise ValueError(f"weights have shape {w.shape}, expected ({test.m},)")
    y = test.index_returns
    sst = float(((y - y.mean()) ** 2).sum())
    if sst == 0:
        raise ValueError("test index returns have zero variance")
    resid = y - test.constituent_returns @ w
    return 1.0 - float(resid @ resid) / sst


def parse_drop_rows(text: str) -> tuple[int, ...]:
    """Parse ``idx:t1,t2`` (or just ``t1,t2``) into return-row indices."""
    body = text.split(":", 1)[1] if ":" in text else text
    try:
        rows = tuple(int(v) for v in body.split(",") if v.strip())
    except ValueError:
        raise ValueError(f"bad outlier spec {text!r}; expected idx:t1,t2")
    if any(r < 0 for r in rows):
        raise ValueError("outlier rows must be nonnegative")
    return rows


def _train_test(ds: IndexDataset, cfg: TrackConfig):
    train, test = split_halves(ds, cfg.split)
    if cfg.drop_rows:
        start = train.t
        keep = [i for i in range(test.t) if start + i not in set(cfg.drop_rows)]
        test = test.rows(keep)
    return train, test


def track(ds: IndexDataset, k: int, cfg: TrackConfig = TrackConfig()) -> TrackResult:
    """Sparse tracking portfolio on the training half, scored on the test half.

    Forward stepwise selection seeds DFO, whose output seeds branch and
    bound.  Big-M bounds come from the DFO solution unless
    ``cfg.safe_bigm`` is set.
    """
    if not 1 <= k <= ds.m:
        raise ValueError(f"k must be in [1, {ds.m}]")
    train, test = _train_test(ds, cfg)
    data = train.regression()
    spec = ConstraintSpec(k, cfg.s)
    path = forward_stepwise_path(data, cfg.s, k)
    beta, _ = dfo_solve(data, spec, path[-1], cfg.dfo)
    bigm = BigM.natural(spec) if cfg.safe_bigm else big_m_from_dfo(beta, spec)
    model = build_model(data, spec, bigm)
    beta, report = branch_and_bound(
        model, data, spec, time_limit=cfg.time_limit, gap_tol=cfg.gap_tol, incumbent=beta
    )
    non_unique = False
    if ds.m > train.t:
        full, _ = solve_l1_unit_sum(data, cfg.s)
        non_unique = nonzeros(full) > train.t
    return TrackResult(
        k=k,
        nonzeros=nonzeros(beta),
        r2_oos=out_of_sample_r2(test, beta),
        weights=beta,
        in_sample_sse=objective(data, beta),
        report=report,
        non_unique=non_unique,
    )


def _track_one(args):
    return track(*args)


def track_many(ds: IndexDataset, ks, cfg: TrackConfig = TrackConfig(), jobs: int = 1) -> list[TrackResult]:
    tasks = [(ds, int(k), cfg) for k in ks]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_track_one, tasks))
    return [_track_one(t) for t in tasks]


def synthetic_panel(m: int = 31, periods: int = 290, seed: int = 0, extra: int = 10) -> PricePanel:
    """Factor-model prices with an index built from ``m + extra`` stocks.

    Only ``m`` stocks are reported as constituents, so no portfolio tracks
    the index exactly.
    """
    rng = np.random.default_rng(seed)
    n = m + extra
    market = 0.002 + 0.02 * rng.standard_normal(periods)
    loadings = rng.uniform(0.5, 1.5, n)
    rets = market[:, None] * loadings + 0.02 * rng.standard_normal((periods, n))
    caps = rng.lognormal(0.0, 1.0, n)
    caps /= caps.sum()
    index_rets = rets @ caps
    start = rng.uniform(10.0, 200.0, n)
    prices = start * np.vstack([np.ones(n), np.cumprod(1.0 + rets, axis=0)])
    index = 1000.0 * np.concatenate([[1.0], np.cumprod(1.0 + index_rets)])
    return PricePanel(index, prices[:, :m], f"synthetic-m{m}-seed{seed}")
