"""nbound command line: fit, train, eval, bench, report, render."""

import argparse
import sys

import numpy as np

from . import container, evaluation, geometry
from .indicator import NBGError, load_grid
from .query import QueryOracle, QueryType, uniform_regions
from .training import NEURAL_METHODS, TrainConfig, load_config, train_method


def _fmt(v):
    return np.array2string(np.asarray(v), precision=6, separator=", ")


def describe(prim):
    if isinstance(prim, geometry.AABoxPrim):
        return f"lo={_fmt(prim.lo)} hi={_fmt(prim.hi)}"
    if isinstance(prim, geometry.SpherePrim):
        return f"center={_fmt(prim.center)} radius={prim.radius:.6g}"
    if isinstance(prim, geometry.EllipsoidPrim):
        return f"center={_fmt(prim.center)} radii={_fmt(prim.radii)}"
    if isinstance(prim, geometry.OrientedPrim):
        return f"rotation={_fmt(prim.rotation)} {describe(prim.base)}"
    if isinstance(prim, geometry.KDOPPrim):
        return f"k={prim.k} normals={_fmt(prim.normals)} offsets={_fmt(prim.offsets)}"
    if isinstance(prim, geometry.BVHPrim):
        return f"nodes={prim.n_nodes} leaves={len(prim.leaf_lo)} depth={prim.depth()}"
    return repr(prim)


def cmd_fit(args):
    ind = load_grid(args.grid)
    prim = geometry.fit(args.method, ind)
    container.save_model(args.out, prim, args.method, args.query, ind.dim, 0.0)
    print(f"{args.method}: {describe(prim)}")
    return 0


def _train_config(args):
    cfg = load_config(args.config) if args.config else TrainConfig()
    over = {"query": args.query}
    for key in ("seed", "eps"):
        if getattr(args, key) is not None:
            over[key] = getattr(args, key)
    if args.invert:
        over["invert"] = True
    if args.symmetric:
        over["symmetric"] = True
    if args.iters is not None:
        over["max_iters"] = args.iters
    return cfg.replace(**over)


def cmd_train(args):
    ind = load_grid(args.grid)
    cfg = _train_config(args)
    pred, stats, ok = train_method(ind, args.method, cfg)
    container.save_model(args.out, pred, args.method, cfg.query, ind.dim, cfg.eps)
    container.atomic_write(args.stats or f"{args.out}.stats.csv", stats.to_csv().encode())
    print(f"{args.method}: {'conservative' if ok else 'NOT conservative (iteration cap hit)'}")
    return 0 if ok else 3


def _load_pair(args):
    model = container.load_model(args.model)
    ind = load_grid(args.grid)
    if model.dim != ind.dim:
        raise ValueError(f"model is {model.dim}D but the grid is {ind.dim}D")
    return model, ind


def cmd_eval(args):
    model, ind = _load_pair(args)
    query = QueryType.parse(args.query) if args.query else model.query
    oracle = QueryOracle(ind)
    rep = evaluation.measure(model, oracle, query, args.n, args.seed or 0, method=model.method,
                             indicator=args.grid)
    sys.stdout.write(evaluation.reports_csv([rep]))
    return 0


def cmd_bench(args):
    model = container.load_model(args.model)
    query = QueryType.parse(args.query) if args.query else model.query
    rng = np.random.default_rng(args.seed or 0)
    qs = uniform_regions(rng, query, model.dim, args.n)
    st = evaluation.benchmark(model, qs, query, repeats=args.repeats)
    print(f"{model.method},{query.value},{st.n},{st.median_ns:.1f},{st.mean_ns:.1f},{st.qps:.4g}")
    return 0


def cmd_report(args):
    grids = {path: load_grid(path) for path in args.grids}
    methods = {m: (lambda ind, q, m=m: geometry.fit(m, ind)) for m in args.method}
    queries = [args.query] if args.query else list(QueryType)
    res = evaluation.grid_report(methods, grids, queries, args.n, args.seed or 0)
    text = res.csv()
    if args.out:
        container.atomic_write(args.out, text.encode())
    else:
        sys.stdout.write(text)
    for f in res.failures:
        print("failed:", *f, file=sys.stderr)
    return 0


def parse_slice(spec, dim):
    """'2=0.5,3=0.1' fixes axes beyond the first two; missing axes default to 0.5."""
    fixed = np.full(dim, 0.5)
    if spec:
        for part in spec.split(","):
            axis, value = part.split("=")
            axis, value = int(axis), float(value)
            if not 2 <= axis < dim:
                raise ValueError(f"slice axis {axis} out of range for a {dim}D grid")
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"slice value {value} outside [0, 1]")
            fixed[axis] = value
    return fixed


def render_image(predictor, ind, res=256, slice_spec=None):
    """(res, res, 3) uint8: red indicator, green predictor, blue missed cells."""
    fixed = parse_slice(slice_spec, ind.dim)
    u = (np.arange(res) + 0.5) / res
    xs, ys = np.meshgrid(u, u[::-1], indexing="xy")
    pts = np.tile(fixed, (res * res, 1))
    pts[:, 0], pts[:, 1] = xs.ravel(), ys.ravel()
    occ = ind.eval(pts)
    pos = np.asarray(predictor.test(QueryType.POINT, pts), dtype=bool)
    img = np.zeros((res * res, 3), dtype=np.uint8)
    img[:, 0] = occ * 255
    img[:, 1] = pos * 255
    img[:, 2] = (occ & ~pos) * 255
    return img.reshape(res, res, 3)


def ppm_bytes(img):
    h, w, _ = img.shape
    return f"P6\n{w} {h}\n255\n".encode() + img.tobytes()


def cmd_render(args):
    model, ind = _load_pair(args)
    if model.query is not QueryType.POINT:
        raise ValueError("render needs a point-query model")
    img = render_image(model, ind, args.res, args.slice)
    container.atomic_write(args.out, ppm_bytes(img))
    print(f"missed pixels: {int(np.count_nonzero(img[..., 2]))}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="nbound", description=__doc__)
    sub = p.add_subparsers(dest="cmd", required=True)
    queries = [q.value for q in QueryType]

    def common(sp, out=True):
        sp.add_argument("--query", choices=queries, default=None)
        sp.add_argument("--seed", type=int, default=None)
        if out:
            sp.add_argument("--out", required=True)

    sp = sub.add_parser("fit", help="fit a classic bounding primitive")
    sp.add_argument("grid")
    sp.add_argument("--method", required=True, choices=sorted(geometry.CLASSIC_FITS))
    common(sp)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("train", help="train a conservative neural bound")
    sp.add_argument("grid")
    sp.add_argument("--method", required=True, choices=NEURAL_METHODS)
    sp.add_argument("--config")
    sp.add_argument("--eps", type=float, default=None)
    sp.add_argument("--invert", action="store_true")
    sp.add_argument("--symmetric", action="store_true")
    sp.add_argument("--iters", type=int, default=None, help="override max_iters")
    sp.add_argument("--stats", help="stats CSV path (default: OUT.stats.csv)")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="measure FP/FN of a stored model")
    sp.add_argument("model")
    sp.add_argument("grid")
    sp.add_argument("--n", type=int, default=1_000_000)
    common(sp, out=False)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("bench", help="time a stored model")
    sp.add_argument("model")
    sp.add_argument("--n", type=int, default=100_000)
    sp.add_argument("--repeats", type=int, default=30)
    common(sp, out=False)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("report", help="classic methods x grids x query types as CSV")
    sp.add_argument("grids", nargs="+")
    sp.add_argument("--method", action="append", choices=sorted(geometry.CLASSIC_FITS),
                    required=True)
    sp.add_argument("--n", type=int, default=1_000_000)
    common(sp, out=False)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("render", help="PPM slice: indicator, predictor, misses")
    sp.add_argument("model")
    sp.add_argument("grid")
    sp.add_argument("--res", type=int, default=256)
    sp.add_argument("--slice", help="fixed coordinates beyond the first two, e.g. 2=0.5")
    common(sp)
    sp.set_defaults(func=cmd_render)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if getattr(args, "query", None) is None and args.cmd in ("fit", "train"):
        args.query = "point"
    try:
        return args.func(args)
    except (OSError, NBGError, container.NBMError, ValueError) as exc:
        print(f"nbound: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
