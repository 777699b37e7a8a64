"""FP table for 2D point queries: classic fits and trained models on the shipped shapes.

    python3 scripts/run_table.py --n 1000000 --out table.csv
    python3 scripts/run_table.py --classic-only --query box
"""

import argparse
import sys
import time

from nbound import geometry
from nbound.evaluation import grid_report
from nbound.indicator import disk_grid, load_asset, star_grid
from nbound.training import desk_config, load_config, train_method

SHAPES = {"disk": disk_grid, "star": star_grid, "fish": lambda: load_asset("fish")}
CLASSIC = ("aabb", "obox", "sphere", "aaelli", "oelli", "kdop")
TRAINED = ("nn", "relufield", "kdop-opt")

def trained_factory(method, config_path, log):
    base = desk_config(method)
    if config_path:
        base = load_config(config_path, base)

    def make(ind, query):
        cfg = base.replace(query=query.value)
        t0 = time.perf_counter()
        pred, _, ok = train_method(ind, method, cfg)
        log(f"  trained {method} in {time.perf_counter() - t0:.0f}s, conservative={ok}")
        return pred
    return make


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n", type=int, default=1_000_000)
    ap.add_argument("--query", default="point")
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--config", help="flat key=value training config")
    ap.add_argument("--classic-only", action="store_true")
    ap.add_argument("--out")
    args = ap.parse_args()
    log = lambda s: print(s, file=sys.stderr)  # noqa: E731
    methods = {m: (lambda ind, q, m=m: geometry.fit(m, ind)) for m in CLASSIC}
    if not args.classic_only:
        methods.update({m: trained_factory(m, args.config, log) for m in TRAINED})
    shapes = {k: f() for k, f in SHAPES.items()}
    res = grid_report(methods, shapes, [args.query], args.n, args.seed)
    text = res.csv()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    print(text, end="")
    for key, fps in sorted(res.rank_data().items()):
        mean = sum(fps) / len(fps)
        log(f"{key[0]:>10s} mean FP {100 * mean:6.2f}%")
    for f in res.failures:
        log(f"failed: {f}")


if __name__ == "__main__":
    main()
