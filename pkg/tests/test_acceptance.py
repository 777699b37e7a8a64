"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Trained models are shared through a session cache, so the whole module trains
each (shape, method, variant) once. Expect roughly half an hour on one core.
Run alone with `pytest tests/test_acceptance.py -v -s` to see lines as they
happen; the terminal summary repeats them in any case.
"""

import math
import time
from functools import lru_cache

import numpy as np
import pytest

from gradcheck import max_rel_error
from nbound import container, geometry as geo
from nbound.evaluation import CostModel, a_wins, breakeven_ratio, measure
from nbound.indicator import (GridIndicator, ProceduralIndicator, disk_grid, dumps_grid,
                              load_asset, loads_grid, rasterize, star_grid)
from nbound.nnet import EarlyExitNet, LearnableKDOP, MLP, PositionalEncoding, ReLUField
from nbound.query import QueryOracle, QueryType, uniform_regions
from nbound.training import desk_config, train_method

pytestmark = pytest.mark.acceptance

RESULTS = []
HIDDEN_N = 1_000_000
HIDDEN_SEED = 424242   # disjoint from every training seed and validation stream


def record(cid, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {cid:>2}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


SHAPES_2D = {"disk": disk_grid, "star": star_grid, "fish": lambda: load_asset("fish")}


@lru_cache(maxsize=None)
def shape(name):
    if name == "shell3d":
        shell = ProceduralIndicator("annulus", {"center": (0.5, 0.45, 0.55), "r_in": 0.2,
                                                "r_out": 0.35})
        return rasterize(shell, (16, 16, 16))
    if name == "sparse":
        return disk_grid(radius=0.15, center=(0.35, 0.6))
    return SHAPES_2D[name]()


@lru_cache(maxsize=None)
def trained(name, method, **variant):
    """(predictor, stats, conservative flag, seconds), trained once per session."""
    cfg = desk_config(method, **variant)
    t0 = time.perf_counter()
    pred, stats, ok = train_method(shape(name), method, cfg)
    return pred, stats, ok, time.perf_counter() - t0


@lru_cache(maxsize=None)
def hidden(name, method, **variant):
    pred = trained(name, method, **variant)[0] if method not in geo.CLASSIC_FITS \
        else geo.fit(method, shape(name))
    return measure(pred, QueryOracle(shape(name)), "point", HIDDEN_N, HIDDEN_SEED)


def test_c01_neural_conservativeness():
    parts, ok = [], True
    for name in SHAPES_2D:
        _, _, flag, secs = trained(name, "nn")
        rep = hidden(name, "nn")
        ok &= rep.fn == 0 and secs <= 20 * 60
        parts.append(f"{name} fn={rep.fn} ({secs:.0f}s, stopped={flag})")
    record(1, ok, "OurNN point FN over 1e6 hidden queries: " + ", ".join(parts))


def test_c02_tightness_ordering():
    parts, ok = [], True
    for name in SHAPES_2D:
        nn, box, kdop = (hidden(name, m).fp_rate for m in ("nn", "aabb", "kdop"))
        ok &= nn <= 0.5 * box and nn <= 0.5 * kdop
        parts.append(f"{name} nn={100 * nn:.2f}% aabb={100 * box:.2f}% kdop={100 * kdop:.2f}%")
    record(2, ok, "FP(nn) <= 0.5 x FP(aabb), FP(kdop): " + "; ".join(parts))


def test_c03_optimized_kdop():
    parts, ok = [], True
    for name in SHAPES_2D:
        opt, heur = hidden(name, "kdop-opt"), hidden(name, "kdop")
        ok &= opt.fp_rate <= heur.fp_rate and opt.fn == 0 and heur.fn == 0
        parts.append(f"{name} {100 * opt.fp_rate:.2f}% vs {100 * heur.fp_rate:.2f}% "
                     f"(fn {opt.fn}/{heur.fn})")
    record(3, ok, "FP(OurkDOP) <= FP(kDOP): " + "; ".join(parts))


def test_c04_classic_exactly_conservative():
    misses = {}
    for name in list(SHAPES_2D) + ["shell3d"]:
        g = shape(name)
        centers = g.cell_centers()
        rng = np.random.default_rng([7, g.dim])
        batches = {}
        oracle = QueryOracle(g)
        for q in ("ray", "plane", "box"):
            c = uniform_regions(rng, q, g.dim, 100_000)
            batches[q] = (c, oracle.labels(rng, q, c))
        for m in sorted(geo.CLASSIC_FITS):
            prim = geo.fit(m, g)
            n = int(np.sum(~prim.contains(centers)))
            for q, (c, y) in batches.items():
                n += int(np.sum(y & ~prim.test(q, c)))
            misses[(name, m)] = n
    bad = {k: v for k, v in misses.items() if v}
    record(4, not bad, f"{len(misses)} method/shape pairs, cell centers + 3x1e5 regions, "
                       f"misses: {bad or 'none'}")


def test_c05_gradient_oracle():
    worst = {}
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        X2, X3 = rng.random((16, 2)), rng.random((16, 3))
        w1, w2 = rng.standard_normal(16), rng.standard_normal(16)
        mlp = MLP([2, 7, 5, 1], omega=float(rng.uniform(0.5, 3)), seed=seed,
                  encoding=PositionalEncoding(4) if seed % 2 else None)
        early = EarlyExitNet(3, width=6, omega=float(rng.uniform(0.5, 3)), seed=seed)
        field = ReLUField((5, 6))
        field.params[0][...] = rng.standard_normal(field.params[0].shape)
        kdop = LearnableKDOP.init_default(2, tau=0.2)
        kdop.params[0] += 0.1 * rng.standard_normal(kdop.params[0].shape)
        kdop.params[1] += 0.1 * rng.standard_normal(kdop.params[1].shape) - 0.3
        errs = {"MLP": max_rel_error(mlp, X2, w1),
                "EarlyExitNet": max(max_rel_error(early, X3, w1, w2),
                                    max_rel_error(early, X3, w1, 0 * w2),
                                    max_rel_error(early, X3, 0 * w1, w2)),
                "ReLUField": max_rel_error(field, X2, w1),
                "LearnableKDOP": max_rel_error(kdop, X2, w1)}
        for k, v in errs.items():
            worst[k] = max(worst.get(k, 0.0), v)
    ok = all(v < 1e-4 for v in worst.values())
    record(5, ok, "max relative FD error over 20 draws: "
           + ", ".join(f"{k}={v:.1e}" for k, v in worst.items()))


def test_c06_cost_model():
    t_b = 3.0
    r = breakeven_ratio(CostModel(5 * t_b, t_b, 0.1, 0.3))
    exact = r == pytest.approx(20 * t_b, rel=1e-12)
    rng = np.random.default_rng(6)
    fails = 0
    for _ in range(1000):
        t_a, t_b2 = rng.uniform(0.01, 100, 2)
        p_a, p_b = rng.uniform(0, 1, 2)
        cm = CostModel(t_a, t_b2, p_a, p_b)
        thr = breakeven_ratio(cm)
        t = rng.uniform(0.01, 100)
        if p_a == p_b:
            fails += a_wins(cm, t) != (t_a < t_b2)
        elif thr <= 0:
            # the threshold is behind us: one method wins for every t > 0
            fails += a_wins(cm, t) != (p_a < p_b)
        else:
            lo, hi = thr * 0.5, thr * 2
            want = (True, False) if p_a > p_b else (False, True)
            fails += (a_wins(cm, lo), a_wins(cm, hi)) != want
    record(6, exact and fails == 0,
           f"worked example -> {r / t_b:g} t_b; algebra failures on 1e3 draws: {fails}")


def test_c07_early_exit():
    pred, _, flag, secs = trained("sparse", "nn-early")
    rep = measure(pred, QueryOracle(shape("sparse")), "point", HIDDEN_N, HIDDEN_SEED)
    X = np.random.default_rng(HIDDEN_SEED).random((HIDDEN_N, 2))
    _, exits = pred.model.predict_early(X, pred.eps)
    frac = float(exits.mean())
    cost = float(EarlyExitNet.layer_evals(exits).mean())
    plain = 3   # weight layers of the 2x25x25 net
    ok = rep.fn == 0 and frac > 0.25 and cost < plain
    record(7, ok, f"combined fn={rep.fn}, early exits {100 * frac:.1f}%, mean layer-evals "
                  f"{cost:.3f} vs {plain} plain, FP {100 * rep.fp_rate:.2f}% "
                  f"({secs:.0f}s, stopped={flag})")


def test_c08_bvh_oracle():
    bad = []
    for name in list(SHAPES_2D) + ["shell3d"]:
        g = shape(name)
        bvh = geo.build_bvh(g)
        rng = np.random.default_rng(8)
        for q in QueryType:
            c = uniform_regions(rng, q, g.dim, 10_000)
            if not np.array_equal(bvh.test(q, c), bvh.brute_force(q, c)):
                bad.append((name, q.value))
    record(8, not bad, f"bvh_test vs leaf OR on 1e4 regions x 4 query types x 4 shapes, "
                       f"mismatches: {bad or 'none'}")


def test_c09_symmetric_ablation():
    sym = hidden("star", "nn", symmetric=True)
    asym = hidden("star", "nn")
    record(9, sym.fn > 0 and asym.fn == 0,
           f"star: symmetric fn={sym.fn} (fp {100 * sym.fp_rate:.2f}%), "
           f"asymmetric fn={asym.fn} (fp {100 * asym.fp_rate:.2f}%)")


def test_c10_inverted():
    pred, _, flag, secs = trained("star", "nn", invert=True)
    rep = measure(pred, QueryOracle(shape("star")), "point", HIDDEN_N, HIDDEN_SEED)
    record(10, rep.fp == 0, f"star inverted: fp={rep.fp}, fn_rate {100 * rep.fn_rate:.1f}% "
                            f"({secs:.0f}s, stopped={flag})")


def test_c11_serialization():
    ok, notes = True, []
    for name in list(SHAPES_2D) + ["shell3d"]:
        blob = dumps_grid(shape(name))
        ok &= dumps_grid(loads_grid(blob)) == blob
    pred = trained("star", "nn")[0]
    nbm = container.serialize(pred, "nn", "point", 2, pred.eps)
    ok &= container.serialize(container.deserialize(nbm).predictor, "nn", "point", 2,
                              pred.eps) == nbm
    caught = 0
    for pos in range(0, len(nbm), max(1, len(nbm) // 50)):
        bad = bytearray(nbm)
        bad[pos] ^= 0x10
        try:
            container.deserialize(bytes(bad))
        except container.NBMError:
            caught += 1
    flips = len(range(0, len(nbm), max(1, len(nbm) // 50)))
    ok &= caught == flips
    notes.append(f"corruptions caught {caught}/{flips}")
    cfg = desk_config("nn", max_iters=400, seed=11)
    runs = [train_method(shape("fish"), "nn", cfg)[0] for _ in range(2)]
    same = len({container.serialize(p, "nn", "point", 2, cfg.eps) for p in runs}) == 1
    ok &= same
    notes.append(f"fixed-seed NBM identical: {same}")
    record(11, ok, "NBG/NBM round trips byte-identical; " + ", ".join(notes))


def test_c12_relufield():
    _, _, flag, secs = trained("star", "relufield")
    rep, box = hidden("star", "relufield"), hidden("star", "aabb")
    mlp_secs = trained("star", "nn")[3]
    ok = rep.fn == 0 and rep.fp_rate < box.fp_rate and secs <= 60 \
        and mlp_secs >= 10 * secs
    record(12, ok, f"star fn={rep.fn}, FP {100 * rep.fp_rate:.2f}% vs aabb "
                   f"{100 * box.fp_rate:.2f}%, trained in {secs:.1f}s vs MLP {mlp_secs:.0f}s "
                   f"({mlp_secs / secs:.1f}x, stopped={flag})")
