"""Per-query timing of classic tests and a 3x50x50 net on forward-facing 3D rays.

Only ratios between methods on the same machine are meaningful.

    python3 scripts/bench_rays.py --n 200000
"""

import argparse

import numpy as np

from nbound import geometry
from nbound.evaluation import CostModel, benchmark, breakeven_ratio, measure
from nbound.indicator import ProceduralIndicator, rasterize
from nbound.nnet import NeuralBound, make_mlp
from nbound.query import QueryOracle, forward_facing_rays


def blob(res=32):
    ball = ProceduralIndicator("disk", {"center": (0.45, 0.5, 0.55), "radius": 0.3})
    return rasterize(ball, (res,) * 3)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n", type=int, default=200_000)
    ap.add_argument("--repeats", type=int, default=10)
    args = ap.parse_args()
    ind = blob()
    rays = forward_facing_rays(np.random.default_rng(0), args.n)
    preds = {m: geometry.fit(m, ind) for m in ("aabb", "sphere", "kdop", "bvh")}
    preds["nn (untrained)"] = NeuralBound(make_mlp(3, "ray"), "ray", 3)
    oracle = QueryOracle(ind)
    rows = []
    for name, p in preds.items():
        t = benchmark(p, rays, "ray", repeats=args.repeats)
        fp = measure(p, oracle, "ray", 100_000, seed=1).fp_rate
        rows.append((name, t.median_ns, fp))
        print(f"{name:>16s} {t.median_ns:10.1f} ns/ray  FP {100 * fp:6.2f}%")
    base = dict((r[0], r) for r in rows)["aabb"]
    for name, t, fp in rows:
        if name == "aabb" or fp == base[2]:
            continue
        ratio = breakeven_ratio(CostModel(t, base[1], fp, base[2]))
        print(f"break-even vs aabb for {name}: exact test must cost {ratio:.2f} ns")


if __name__ == "__main__":
    main()
