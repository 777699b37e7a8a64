"""Monte-Carlo FP/FN measurement, timing, the break-even cost model and report grids."""

import csv
import io
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .query import QueryOracle, QueryType, uniform_regions

CSV_FIELDS = ("method", "indicator", "query", "n", "fp", "fn", "tp", "tn", "fp_rate", "fn_rate",
              "median_ns_per_query")

# training seeds are small integers; evaluation streams live under this tag
HIDDEN_SEED_TAG = 0xE7A1


@dataclass
class EvalReport:
    method: str
    indicator: str
    query: str
    n: int
    fp: int
    fn: int
    tp: int
    tn: int
    median_ns_per_query: float = float("nan")

    @property
    def fp_rate(self):
        neg = self.fp + self.tn
        return self.fp / neg if neg else 0.0

    @property
    def fn_rate(self):
        pos = self.fn + self.tp
        return self.fn / pos if pos else 0.0

    def row(self):
        d = asdict(self)
        d["fp_rate"] = self.fp_rate
        d["fn_rate"] = self.fn_rate
        return {k: d[k] for k in CSV_FIELDS}


def _predictor_fn(predictor, query):
    """Turn a bounding primitive, NeuralBound, or plain callable into f(coords) -> bool array."""
    if hasattr(predictor, "test"):
        return lambda c: np.asarray(predictor.test(query, c), dtype=bool)
    return lambda c: np.asarray(predictor(c), dtype=bool)


def _check_match(predictor, oracle, query):
    dim = getattr(predictor, "dim", None)
    if dim is not None and dim != oracle.dim:
        raise ValueError(f"predictor is {dim}D but the indicator is {oracle.dim}D")
    own = getattr(predictor, "query", None)
    if own is not None and QueryType.parse(own) is not query:
        raise ValueError(f"predictor handles {QueryType.parse(own).value} queries, not {query.value}")


def eval_threads():
    try:
        return max(1, int(os.environ.get("NBOUND_THREADS", "1")))
    except ValueError:
        return 1


def _shard_counts(test, oracle, query, seed, shard, m):
    rng = np.random.default_rng([HIDDEN_SEED_TAG, seed, shard])
    coords = uniform_regions(rng, query, oracle.dim, m)
    y = oracle.labels(rng, query, coords)
    p = test(coords)
    return np.array([np.sum(p & ~y), np.sum(~p & y), np.sum(p & y), np.sum(~p & ~y)])


def measure(predictor, oracle, query="point", n=1_000_000, seed=0, method=None, indicator="",
            shard_size=1 << 17, threads=None):
    """Count FP/FN/TP/TN of `predictor` against `oracle` on n uniform regions.

    Regions come from per-shard streams keyed by (seed, shard index), so the
    counts do not depend on how many workers run.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    query = QueryType.parse(query)
    _check_match(predictor, oracle, query)
    test = _predictor_fn(predictor, query)
    sizes = [min(shard_size, n - s) for s in range(0, n, shard_size)]
    threads = threads or eval_threads()
    job = lambda i: _shard_counts(test, oracle, query, seed, i, sizes[i])
    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(job, range(len(sizes))))
    else:
        parts = [job(i) for i in range(len(sizes))]
    fp, fn, tp, tn = (int(v) for v in np.sum(parts, axis=0))
    name = method or getattr(predictor, "method", None) or getattr(predictor, "name", "predictor")
    return EvalReport(name, indicator, query.value, n, fp, fn, tp, tn)


@dataclass
class TimeStats:
    n: int
    repeats: int
    median_ns: float
    mean_ns: float
    samples_ns: list = field(repr=False, default_factory=list)

    @property
    def qps(self):
        return 1e9 / self.median_ns if self.median_ns > 0 else math.inf


def benchmark(predictor, queries, query="point", repeats=30, warmup=2):
    """Per-query wall time of batched evaluation over `queries` (monotonic clock)."""
    query = QueryType.parse(query)
    test = _predictor_fn(predictor, query)
    queries = np.asarray(queries, dtype=np.float64)
    n = len(queries)
    for _ in range(warmup):
        test(queries)
    per = []
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        test(queries)
        per.append((time.perf_counter_ns() - t0) / n)
    return TimeStats(n, repeats, float(np.median(per)), float(np.mean(per)), per)


@dataclass(frozen=True)
class CostModel:
    """Method A costs t_a per query and passes a fraction p_a of empty queries
    on to an exact test costing t; likewise method B."""

    t_a: float
    t_b: float
    p_a: float
    p_b: float
    N: int = 1

    def __post_init__(self):
        for name in ("t_a", "t_b", "p_a", "p_b", "N"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and non-negative")

    def total(self, t, which="a"):
        tq, p = (self.t_a, self.p_a) if which == "a" else (self.t_b, self.p_b)
        return self.N * (tq + p * t)


def breakeven_ratio(cm):
    """Exact-test cost t at which A and B tie: (t_b - t_a) / (p_a - p_b).

    With p_a > p_b, A wins for t below the threshold; with p_a < p_b, above it.
    Equal FP rates give +inf when A is faster (A always wins), -inf when A is
    slower (A never wins) and 0 when both are equally fast.
    """
    if cm.p_a == cm.p_b:
        diff = cm.t_b - cm.t_a
        return 0.0 if diff == 0 else math.copysign(math.inf, diff)
    return (cm.t_b - cm.t_a) / (cm.p_a - cm.p_b)


def a_wins(cm, t):
    return cm.t_a + cm.p_a * t < cm.t_b + cm.p_b * t


@dataclass
class GridResult:
    reports: list
    failures: list

    def csv(self):
        return reports_csv(self.reports)

    def rank_data(self):
        """Per-method FP rates across indicators, sorted ascending (rank-plot data)."""
        out = {}
        for r in self.reports:
            out.setdefault((r.method, r.query), []).append(r.fp_rate)
        return {k: sorted(v) for k, v in out.items()}


def reports_csv(reports):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        row = r.row()
        for k in ("fp_rate", "fn_rate", "median_ns_per_query"):
            row[k] = f"{row[k]:.8g}"
        w.writerow(row)
    return buf.getvalue()


def grid_report(methods, indicators, query_types, n=1_000_000, seed=0, samples_per_region=128,
                time_queries=0):
    """One EvalReport per (method, indicator, query type) cell.

    methods maps name -> factory(indicator, query) returning a predictor;
    indicators maps name -> indicator. Cell failures are collected, not raised.
    """
    reports, failures = [], []
    for mname, factory in methods.items():
        for iname, ind in indicators.items():
            oracle = QueryOracle(ind, samples_per_region)
            for q in query_types:
                q = QueryType.parse(q)
                try:
                    pred = factory(ind, q)
                    rep = measure(pred, oracle, q, n, seed, method=mname, indicator=iname)
                    if time_queries:
                        rng = np.random.default_rng([HIDDEN_SEED_TAG, seed, 1 << 20])
                        qs = uniform_regions(rng, q, ind.dim, time_queries)
                        rep.median_ns_per_query = benchmark(pred, qs, q, repeats=5).median_ns
                    reports.append(rep)
                except Exception as exc:  # noqa: BLE001 - recorded per cell
                    failures.append((mname, iname, q.value, repr(exc)))
    return GridResult(reports, failures)


class IndicatorPredictor:
    """The indicator itself as a point-query predictor (the zero-error reference)."""

    method = "indicator"

    def __init__(self, indicator):
        self.indicator = indicator
        self.dim = indicator.dim

    def test(self, tag, coords):
        if QueryType.parse(tag) is not QueryType.POINT:
            raise ValueError("the indicator answers point queries only")
        return self.indicator.eval(np.asarray(coords, dtype=np.float64))
