"""Conservative training with a scheduled asymmetric cross-entropy.

The loss weights false negatives by alpha and false positives by beta. Their
ratio starts at 1 and grows every scheduling window that still produced a
false negative; training stops once a run of windows stays FN-free and a
hidden validation resample agrees.
"""

import csv
import dataclasses
import io
import time
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .indicator import GridIndicator
from .nnet import (HIDDEN_WIDTH, EarlyExitNet, LearnableKDOP, NeuralBound, PositionalEncoding,
                   ReLUField, make_mlp)
from .query import QueryOracle, QueryType, region_width, sample_regions, uniform_regions

# harmonic decrement base of the FP-side weight per indicator dimension
PROFILE_BASE = {2: 20, 3: 100, 4: 200}
FN_WEIGHT_STEP = 0.2
CLAMP = 1e-7


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0  # false-negative weight
    beta: float = 1.0   # false-positive weight

    def __post_init__(self):
        for v in (self.alpha, self.beta):
            if not (np.isfinite(v) and v > 0):
                raise ValueError("loss weights must be finite and positive")

    @property
    def ratio(self):
        return self.alpha / self.beta

    def swapped(self):
        return LossWeights(self.beta, self.alpha)


def weighted_bce(yhat, y, w):
    """-(alpha * y * log(yhat) + beta * (1 - y) * log(1 - yhat)), yhat clamped to [1e-7, 1-1e-7]."""
    yhat = np.clip(np.asarray(yhat, dtype=np.float64), CLAMP, 1 - CLAMP)
    y = np.asarray(y, dtype=np.float64)
    out = -(w.alpha * y * np.log(yhat) + w.beta * (1 - y) * np.log1p(-yhat))
    return float(out) if out.ndim == 0 else out


def weighted_bce_logit(logit, y, w):
    """Loss value and d/dlogit of the same weighted cross-entropy, without clamping."""
    y = np.asarray(y, dtype=np.float64)
    loss = w.alpha * y * np.logaddexp(0.0, -logit) + w.beta * (1 - y) * np.logaddexp(0.0, logit)
    p = 1.0 / (1.0 + np.exp(-np.clip(logit, -700, 700)))
    grad = w.alpha * y * (p - 1.0) + w.beta * (1 - y) * p
    return loss, grad


@dataclass
class ScheduleState:
    """Asymmetry schedule. Each triggered step k lowers the FP-side weight by
    1/(base*k) and raises the FN-side weight by 0.2; the pair is reported
    renormalized so the smaller weight is 1."""

    dim_profile: int = 2
    step_every: int = 10_000
    t: int = 0
    steps: int = 0
    fn_weight: float = 1.0
    fp_weight: float = 1.0

    @property
    def ratio(self):
        return self.fn_weight / self.fp_weight

    def weights(self):
        low = min(self.fn_weight, self.fp_weight)
        return LossWeights(self.fn_weight / low, self.fp_weight / low)


def schedule_step(state, window_fn):
    """Advance the schedule after a window; weights change only if that window had FNs."""
    if window_fn > 0:
        state.steps += 1
        base = PROFILE_BASE.get(state.dim_profile, PROFILE_BASE[4])
        state.fp_weight = max(state.fp_weight - 1.0 / (base * state.steps), 1e-6)
        state.fn_weight += FN_WEIGHT_STEP
    return state.weights()


@dataclass
class TrainConfig:
    query: str = "point"
    lr: float = 1e-3
    batch: int = 8192
    max_iters: int = 200_000
    step_every: int = 2000
    stop_patience: int = 6
    eps: float = 1e-5
    invert: bool = False
    symmetric: bool = False
    seed: int = 0
    reg_lambda_max: float = 5e-7
    reg_ramp_steps: int = 20
    samples_per_region: int = 64
    val_n: int = 1_000_000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    encoding_depth: int = 8
    omega: float = 1.0
    width: int = 0
    relufield_res: int = 32
    tau_start: float = 0.05
    tau_end: float = 0.005
    select_n: int = 200_000

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)


def _parse_value(kind, text):
    if kind is bool:
        low = text.strip().lower()
        if low not in ("1", "0", "true", "false", "yes", "no"):
            raise ValueError(f"bad boolean {text!r}")
        return low in ("1", "true", "yes")
    return kind(text.strip())


def parse_config(text, base=None):
    """Flat `key = value` lines (# comments) over TrainConfig defaults."""
    cfg = base or TrainConfig()
    types = {f.name: type(getattr(cfg, f.name)) for f in dataclasses.fields(cfg)}
    updates = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        try:
            updates[key] = _parse_value(types[key], value)
        except ValueError as exc:
            raise ValueError(f"config line {lineno}: {exc}") from None
    return cfg.replace(**updates)


def load_config(path, base=None):
    with open(path) as fh:
        return parse_config(fh.read(), base)


def dump_config(cfg):
    return "".join(f"{f.name} = {getattr(cfg, f.name)}\n" for f in dataclasses.fields(cfg))


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)


@dataclass
class TrainingStats:
    rows: list = field(default_factory=list)
    fields = ("iteration", "alpha", "beta", "loss", "fn", "fp")

    def add(self, **row):
        self.rows.append(row)

    def column(self, name):
        return np.array([r[name] for r in self.rows])

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=self.fields, extrasaction="ignore",
                                lineterminator="\n")
        writer.writeheader()
        for r in self.rows:
            writer.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in r.items()})
        return buf.getvalue()


@dataclass
class TrainResult:
    model: object
    stats: TrainingStats
    conservative: bool
    iterations: int
    seconds: float
    weights: LossWeights
    val_errors: int = -1

    def bound(self, dim, query, eps, inverted=False, method=None):
        return NeuralBound(self.model, query, dim, eps, inverted, method)


def _reg_lambda(cfg, state):
    if cfg.reg_ramp_steps <= 0:
        return cfg.reg_lambda_max
    return cfg.reg_lambda_max * min(1.0, state.steps / cfg.reg_ramp_steps)


def _add_reg(params, grads, lam):
    if lam == 0:
        return 0.0
    total = 0.0
    for p, g in zip(params, grads):
        total += lam * float(np.abs(p).sum() + (p * p).sum())
        g += lam * (np.sign(p) + 2.0 * p)
    return total


def _loss_weights(state, cfg):
    if cfg.symmetric:
        return LossWeights(1.0, 1.0)
    w = state.weights()
    return w.swapped() if cfg.invert else w


def _decisions(yhat, eps, invert):
    return (yhat - eps >= 0.5) if invert else (yhat + eps >= 0.5)


def _kdop_region_forward(model, oracle, rng, query, coords):
    """Smooth k-DOP on region samples: a region's logit is the max over its samples."""
    pts, valid = sample_regions(rng, query, coords, oracle.samples_per_region)
    n, s = valid.shape
    flat = pts.reshape(-1, pts.shape[2])
    hit = np.zeros(flat.shape[0], dtype=bool)
    vflat = valid.ravel()
    hit[vflat] = oracle.indicator.eval(flat[vflat])
    y = hit.reshape(n, s).any(axis=1)
    yhat_s, cache = model.forward(flat)
    logits = np.where(valid, cache["logit"].reshape(n, s), -30.0)
    best = np.argmax(logits, axis=1)
    logit = logits[np.arange(n), best]
    return y, logit, cache, best, valid


def loss_batch(model, oracle, rng, batch_size, w, query="point", eps=1e-5, reg_lambda=0.0,
               invert=False):
    """One batch of the conservative loss: (loss, grads, fn_count, fp_count)."""
    query = QueryType.parse(query)
    coords = uniform_regions(rng, query, oracle.dim, batch_size)
    if isinstance(model, LearnableKDOP) and query is not QueryType.POINT:
        y, logit, cache, best, valid = _kdop_region_forward(model, oracle, rng, query, coords)
        loss, dlogit = weighted_bce_logit(logit, y, w)
        dlogit = np.where(valid[np.arange(len(y)), best], dlogit, 0.0) / batch_size
        full = np.zeros(valid.shape)
        full[np.arange(len(y)), best] = dlogit
        grads = model.backward_logit(cache, full.ravel())
        yhat = 1.0 / (1.0 + np.exp(-logit))
    else:
        y = oracle.labels(rng, query, coords)
        yhat, cache = model.forward(coords)
        loss, dlogit = weighted_bce_logit(cache["logit"], y, w)
        grads = model.backward_logit(cache, dlogit / batch_size)
    total = float(loss.mean()) + _add_reg(model.params, grads, reg_lambda)
    pred = _decisions(yhat, eps, invert)
    fn = int(np.sum(y & ~pred))
    fp = int(np.sum(~y & pred))
    return total, grads, fn, fp


def _validate(bound, oracle, cfg, invert, attempt, chunk=1 << 17):
    """Count the monitored error type on a fresh resample of cfg.val_n regions.

    Every attempt draws new regions, so repeated checks never reuse a sample
    the run has already been stopped against. Returns after the first chunk
    with errors, so a failing count is a lower bound.
    """
    rng = np.random.default_rng([cfg.seed, 0x5EED, attempt])
    errors = 0
    left = cfg.val_n
    while left > 0:
        m = min(chunk, left)
        coords = uniform_regions(rng, bound.query, oracle.dim, m)
        y = oracle.labels(rng, bound.query, coords)
        pred = bound.test(bound.query, coords)
        errors += int(np.sum(pred & ~y)) if invert else int(np.sum(y & ~pred))
        if errors:
            break
        left -= m
    return errors


class _Window:
    def __init__(self):
        self.reset()

    def reset(self):
        self.loss, self.fn, self.fp, self.errors, self.iters = 0.0, 0, 0, 0, 0

    def add(self, loss, fn, fp, errors):
        self.loss += loss
        self.fn += fn
        self.fp += fp
        self.errors += errors
        self.iters += 1


def train(model, oracle, cfg=None):
    """Fit a differentiable model so that it bounds the oracle conservatively.

    Returns a TrainResult; `conservative` is False when the iteration cap was
    hit before the stopping rule fired.
    """
    cfg = cfg or TrainConfig()
    query = QueryType.parse(cfg.query)
    rng = np.random.default_rng(cfg.seed)
    state = ScheduleState(dim_profile=oracle.dim, step_every=cfg.step_every)
    opt = Adam(model.params, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    stats = TrainingStats()
    bound = NeuralBound(model, query, oracle.dim, cfg.eps, cfg.invert)
    window = _Window()
    clean = 0
    converged = False
    val_errors = -1
    attempts = 0
    start = time.perf_counter()
    it = 0
    for it in range(1, cfg.max_iters + 1):
        w = _loss_weights(state, cfg)
        loss, grads, fn, fp = loss_batch(model, oracle, rng, cfg.batch, w, query, cfg.eps,
                                         _reg_lambda(cfg, state), cfg.invert)
        opt.step(grads)
        window.add(loss, fn, fp, fp if cfg.invert else fn)
        state.t = it
        if it % cfg.step_every:
            continue
        stats.add(iteration=it, alpha=w.alpha, beta=w.beta, loss=window.loss / window.iters,
                  fn=window.fn, fp=window.fp)
        errors = window.errors
        window.reset()
        clean = clean + 1 if errors == 0 else 0
        if clean >= cfg.stop_patience:
            val_errors = _validate(bound, oracle, cfg, cfg.invert, attempts)
            attempts += 1
            if val_errors == 0:
                converged = True
                break
            errors, clean = val_errors, 0
        if not cfg.symmetric:
            schedule_step(state, errors)
    return TrainResult(model, stats, converged, it, time.perf_counter() - start,
                       _loss_weights(state, cfg), val_errors)


def train_early(net, oracle, cfg=None):
    """Train both heads of an EarlyExitNet.

    The late head gets the conservative loss on g; the early head gets the
    mirrored loss on 1 - g, so its errors that matter (claiming empty where g
    is 1) carry the growing weight. Each head has its own schedule; stopping
    needs the combined predictor FN-free.
    """
    cfg = cfg or TrainConfig()
    query = QueryType.parse(cfg.query)
    rng = np.random.default_rng(cfg.seed)
    late_state = ScheduleState(dim_profile=oracle.dim, step_every=cfg.step_every)
    early_state = ScheduleState(dim_profile=oracle.dim, step_every=cfg.step_every)
    opt = Adam(net.params, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    stats = TrainingStats()
    bound = NeuralBound(net, query, oracle.dim, cfg.eps)
    late_err = early_err = combined = fp_total = 0
    loss_sum, iters = 0.0, 0
    clean = 0
    converged = False
    val_errors = -1
    attempts = 0
    start = time.perf_counter()
    it = 0
    for it in range(1, cfg.max_iters + 1):
        wl = LossWeights(1.0, 1.0) if cfg.symmetric else late_state.weights()
        we = LossWeights(1.0, 1.0) if cfg.symmetric else early_state.weights().swapped()
        coords = uniform_regions(rng, query, oracle.dim, cfg.batch)
        y = oracle.labels(rng, query, coords)
        cache = net.forward(coords)
        loss_l, dl = weighted_bce_logit(cache["logit"], y, wl)
        loss_e, de = weighted_bce_logit(cache["early_logit"], ~y, we)
        grads = net.backward_logit(cache, dl / cfg.batch, de / cfg.batch)
        lam = _reg_lambda(cfg, late_state)
        loss = float(loss_l.mean() + loss_e.mean()) + _add_reg(net.params, grads, lam)
        opt.step(grads)

        exits = cache["early"] - cfg.eps >= 0.5
        late_pos = cache["yhat"] + cfg.eps >= 0.5
        late_err += int(np.sum(y & ~late_pos))
        early_err += int(np.sum(y & exits))
        combined += int(np.sum(y & (exits | ~late_pos)))
        fp_total += int(np.sum(~y & ~exits & late_pos))
        loss_sum += loss
        iters += 1
        if it % cfg.step_every:
            continue
        stats.add(iteration=it, alpha=wl.alpha, beta=wl.beta, loss=loss_sum / iters,
                  fn=combined, fp=fp_total)
        clean = clean + 1 if combined == 0 else 0
        if clean >= cfg.stop_patience:
            val_errors = _validate(bound, oracle, cfg, False, attempts)
            attempts += 1
            if val_errors == 0:
                converged = True
                break
            clean = 0
            late_err = early_err = max(val_errors, 1)
        if not cfg.symmetric:
            schedule_step(late_state, late_err)
            schedule_step(early_state, early_err)
        late_err = early_err = combined = fp_total = 0
        loss_sum, iters = 0.0, 0
    return TrainResult(net, stats, converged, it, time.perf_counter() - start,
                       late_state.weights(), val_errors)


def support_points(indicator, rng=None, n=1_000_000):
    """Points the hardened k-DOP must contain: exact cell corners for grids, else
    the occupied subset of a dense uniform sample."""
    if isinstance(indicator, GridIndicator):
        return indicator.corner_points()
    rng = rng or np.random.default_rng(0)
    pts = rng.random((n, indicator.dim))
    return pts[indicator.eval(pts)]


@dataclass
class KDOPResult:
    prim: geometry.KDOPPrim
    model: LearnableKDOP
    stats: TrainingStats
    selected_score: float
    initial_score: float
    iterations: int
    seconds: float


def train_kdop(kdop, oracle, cfg=None, start=None):
    """Optimize k-DOP planes with the conservative loss, then harden.

    The smooth test anneals its temperature from tau_start to tau_end. At
    every window the planes are hardened (offsets pushed out to cover the
    support points) and scored; the best hardened k-DOP seen, including the
    starting one, is returned. For point queries a hardened k-DOP contains
    every occupied cell, so its false positive area is its volume inside the
    unit cube minus a constant and the score is that exact volume. Other
    query types count false positives on a fixed training selection set.

    `start` is an already conservative k-DOP (the heuristic fit the planes
    were initialized from). It competes unmodified, without the hardening
    margin, so the result is never looser than it.
    """
    cfg = cfg or TrainConfig()
    query = QueryType.parse(cfg.query)
    rng = np.random.default_rng(cfg.seed)
    support = support_points(oracle.indicator, np.random.default_rng([cfg.seed, 7]))
    if len(support) == 0:
        raise geometry.EmptyIndicatorError()
    sel_rng = np.random.default_rng([cfg.seed, 11])
    sel_coords = uniform_regions(sel_rng, query, oracle.dim, cfg.select_n)
    sel_neg = ~oracle.labels(sel_rng, query, sel_coords)

    def score(prim):
        fp = int(np.sum(prim.test(query, sel_coords) & sel_neg))
        key = prim.clipped_volume() if query is QueryType.POINT else float(fp)
        return prim, fp, key

    best_prim, _, best_key = score(kdop.harden(support, cfg.eps))
    if start is not None:
        _, _, key = score(start)
        if key <= best_key:
            best_prim, best_key = start, key
    initial_key = best_key
    best_params = [p.copy() for p in kdop.params]
    state = ScheduleState(dim_profile=oracle.dim, step_every=cfg.step_every)
    opt = Adam(kdop.params, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    stats = TrainingStats()
    window = _Window()
    clean = 0
    n_windows = max(1, cfg.max_iters // cfg.step_every)
    start = time.perf_counter()
    it = 0
    for it in range(1, cfg.max_iters + 1):
        frac = min(1.0, (it - 1) / cfg.step_every / n_windows)
        kdop.tau = cfg.tau_start * (cfg.tau_end / cfg.tau_start) ** frac
        w = _loss_weights(state, cfg)
        loss, grads, fn, fp = loss_batch(kdop, oracle, rng, cfg.batch, w, query, cfg.eps, 0.0)
        opt.step(grads)
        kdop.renormalize()
        window.add(loss, fn, fp, fn)
        if it % cfg.step_every:
            continue
        prim, fp_sel, key = score(kdop.harden(support, cfg.eps))
        if key < best_key:
            best_prim, best_key = prim, key
            best_params = [p.copy() for p in kdop.params]
        stats.add(iteration=it, alpha=w.alpha, beta=w.beta, loss=window.loss / window.iters,
                  fn=window.fn, fp=fp_sel)
        errors = window.errors
        window.reset()
        clean = clean + 1 if errors == 0 else 0
        if clean >= cfg.stop_patience:
            break
        if not cfg.symmetric:
            schedule_step(state, errors)
    for p, b in zip(kdop.params, best_params):
        p[...] = b
    return KDOPResult(best_prim, kdop, stats, best_key, initial_key, it,
                      time.perf_counter() - start)


@dataclass
class HierarchyNode:
    """User-supplied tree; each node's indicator covers all objects below it."""

    indicator: object
    children: list = field(default_factory=list)
    name: str = ""


@dataclass
class TrainedNode:
    bound: object
    result: TrainResult
    children: list
    name: str = ""


def train_hierarchy(tree, cfg=None, make_model=None):
    """One conservative model per node; schedules restart at every node."""
    cfg = cfg or TrainConfig()
    query = QueryType.parse(cfg.query)
    make_model = make_model or (lambda ind: build_model("nn", ind.dim, cfg))

    def visit(node):
        oracle = QueryOracle(node.indicator, cfg.samples_per_region)
        model = make_model(node.indicator)
        result = train(model, oracle, cfg)
        bound = NeuralBound(result.model, query, node.indicator.dim, cfg.eps)
        return TrainedNode(bound, result, [visit(c) for c in node.children], node.name)

    return visit(tree)


def hierarchy_test(node, tag, coords):
    """Descend only into children whose parent tests positive; a leaf decides."""
    coords = np.asarray(coords, dtype=np.float64)
    hit = node.bound.test(tag, coords)
    if not node.children:
        return hit
    out = np.zeros(len(coords), dtype=bool)
    idx = np.flatnonzero(hit)
    if len(idx):
        for child in node.children:
            out[idx] |= hierarchy_test(child, tag, coords[idx])
    return out


def hierarchy_leaves(node):
    if not node.children:
        return [node]
    return [leaf for c in node.children for leaf in hierarchy_leaves(c)]


NEURAL_METHODS = ("nn", "nn-early", "relufield", "kdop-opt")


def build_model(method, dim, cfg, indicator=None):
    query = QueryType.parse(cfg.query)
    width = cfg.width or HIDDEN_WIDTH.get(dim, 75)
    if method == "nn":
        enc = PositionalEncoding(cfg.encoding_depth) if cfg.encoding_depth else None
        return make_mlp(dim, query, seed=cfg.seed, omega=cfg.omega, encoding=enc, width=width)
    if method == "nn-early":
        return EarlyExitNet(region_width(query, dim), width, cfg.omega, cfg.seed)
    if method == "relufield":
        return ReLUField.for_query(dim, query, cfg.relufield_res)
    if method == "kdop-opt":
        return LearnableKDOP.from_prim(geometry.fit_kdop(indicator), tau=cfg.tau_start)
    raise ValueError(f"unknown neural method {method!r}; choose from {NEURAL_METHODS}")


def train_method(indicator, method, cfg=None):
    """Build and train one method on an indicator: (predictor, stats, conservative)."""
    cfg = cfg or TrainConfig()
    oracle = QueryOracle(indicator, cfg.samples_per_region)
    model = build_model(method, indicator.dim, cfg, indicator)
    if method == "kdop-opt":
        res = train_kdop(model, oracle, cfg, start=geometry.fit_kdop(indicator))
        return res.prim, res.stats, True
    fn = train_early if method == "nn-early" else train
    res = fn(model, oracle, cfg)
    bound = NeuralBound(res.model, cfg.query, indicator.dim, cfg.eps, cfg.invert, method)
    return bound, res.stats, res.conservative


# Desk-scale presets: one CPU core, a few minutes per model. The window is
# shorter than the default so the asymmetry ratio grows quickly, and the
# hidden validation resample is larger to make up for the smaller windows.
DESK_PRESETS = {
    "nn": dict(batch=2048, step_every=100, max_iters=90_000, val_n=20_000_000),
    "nn-early": dict(batch=2048, step_every=100, max_iters=90_000, val_n=20_000_000),
    "relufield": dict(batch=2048, step_every=25, max_iters=60_000, lr=0.5, val_n=20_000_000),
    "kdop-opt": dict(batch=2048, step_every=200, max_iters=6_000, lr=5e-3),
}


def desk_config(method="nn", **overrides):
    return TrainConfig(**{**DESK_PRESETS[method], **overrides})
