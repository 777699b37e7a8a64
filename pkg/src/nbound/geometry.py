"""Classic bounding primitives fitted to grid indicators.

All fits bound occupied cells by their corners, so any point inside an
occupied cell is inside the primitive. Every primitive answers the four query
types through `test(tag, coords)` on (N, w) coordinate batches. Tests may
over-report hits (e.g. oriented-frame boxes are widened to their local AABB)
but never miss one; a small tolerance widens every test against round-off.
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .query import QueryType, region_dim

TOL = 1e-9


class EmptyIndicatorError(ValueError):
    def __init__(self):
        super().__init__("nothing to bound: indicator has no occupied cells")


def _split(tag, coords):
    tag = QueryType.parse(tag)
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2:
        raise ValueError("expected a (N, w) batch of regions")
    n = region_dim(tag, coords.shape[1])
    if tag is QueryType.POINT:
        return tag, n, coords, None
    return tag, n, coords[:, :n], coords[:, n:]


def _check_dim(prim_dim, n):
    if prim_dim != n:
        raise ValueError(f"region dimension {n} does not match primitive dimension {prim_dim}")


def box_test(tag, coords, lo, hi):
    """Region vs axis-aligned box; lo/hi broadcast against the batch ((n,) or (N, n))."""
    tag, n, a, b = _split(tag, coords)
    lo = np.asarray(lo, float) - TOL
    hi = np.asarray(hi, float) + TOL
    if tag is QueryType.POINT:
        return np.all((a >= lo) & (a <= hi), axis=1)
    if tag is QueryType.BOX:
        return np.all((a <= hi) & (b >= lo), axis=1)
    if tag is QueryType.PLANE:
        center = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        dist = np.sum((center - a) * b, axis=1)
        return np.abs(dist) <= np.sum(np.abs(b) * half, axis=1)
    # ray slab test, t >= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - a) / b
        t2 = (hi - a) / b
    flat = b == 0
    inside = (a >= lo) & (a <= hi)
    tmin = np.where(flat, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
    tmax = np.where(flat, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
    return np.maximum(tmin.max(axis=1), 0.0) <= tmax.min(axis=1)


def local_frame(tag, coords, rotation):
    """Express regions in the frame whose axes are the columns of `rotation`.

    Boxes are not axis-aligned after rotation; they become their local AABB.
    """
    tag, n, a, b = _split(tag, coords)
    if tag is QueryType.POINT:
        return a @ rotation
    if tag is QueryType.BOX:
        center = 0.5 * (a + b) @ rotation
        half = 0.5 * (b - a) @ np.abs(rotation)
        return np.concatenate([center - half, center + half], axis=1)
    return np.concatenate([a @ rotation, b @ rotation], axis=1)


class Primitive:
    dim: int
    name = "primitive"

    def test(self, tag, coords):
        raise NotImplementedError

    def test_region(self, region):
        return int(self.test(region.tag, region.as_batch())[0])

    def contains(self, points):
        return self.test(QueryType.POINT, np.atleast_2d(points))


@dataclass(eq=False)
class AABoxPrim(Primitive):
    lo: np.ndarray
    hi: np.ndarray
    name = "aabb"

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=np.float64)
        self.hi = np.asarray(self.hi, dtype=np.float64)
        if np.any(self.lo > self.hi):
            raise ValueError("box needs lo <= hi")
        self.dim = len(self.lo)

    def test(self, tag, coords):
        tag, n, _, _ = _split(tag, coords)
        _check_dim(self.dim, n)
        return box_test(tag, coords, self.lo, self.hi)

    def volume(self):
        return float(np.prod(self.hi - self.lo))


@dataclass(eq=False)
class SpherePrim(Primitive):
    center: np.ndarray
    radius: float
    name = "sphere"

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.radius = float(self.radius)
        if self.radius < 0:
            raise ValueError("negative radius")
        self.dim = len(self.center)

    def test(self, tag, coords):
        tag, n, a, b = _split(tag, coords)
        _check_dim(self.dim, n)
        c, r = self.center, self.radius + TOL
        if tag is QueryType.POINT:
            return np.sum((a - c) ** 2, axis=1) <= r * r
        if tag is QueryType.PLANE:
            return np.abs(np.sum((c - a) * b, axis=1)) <= r
        if tag is QueryType.BOX:
            nearest = np.clip(c, a, b)
            return np.sum((nearest - c) ** 2, axis=1) <= r * r
        t = np.maximum(np.sum((c - a) * b, axis=1), 0.0)
        closest = a + t[:, None] * b
        return np.sum((closest - c) ** 2, axis=1) <= r * r


@dataclass(eq=False)
class EllipsoidPrim(Primitive):
    center: np.ndarray
    radii: np.ndarray
    name = "ellipsoid"

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.radii = np.asarray(self.radii, dtype=np.float64)
        if np.any(self.radii <= 0):
            raise ValueError("ellipsoid radii must be positive")
        self.dim = len(self.center)

    def test(self, tag, coords):
        tag, n, a, b = _split(tag, coords)
        _check_dim(self.dim, n)
        c, rad = self.center, self.radii + TOL
        if tag is QueryType.PLANE:
            support = np.sqrt(np.sum((b * rad) ** 2, axis=1))
            return np.abs(np.sum((c - a) * b, axis=1)) <= support
        # everything else in the unit-ball frame
        if tag is QueryType.POINT:
            return np.sum(((a - c) / rad) ** 2, axis=1) <= 1.0
        if tag is QueryType.BOX:
            lo, hi = (a - c) / rad, (b - c) / rad
            nearest = np.clip(0.0, lo, hi)
            return np.sum(nearest ** 2, axis=1) <= 1.0
        qo, qd = (a - c) / rad, b / rad
        t = np.maximum(-np.sum(qo * qd, axis=1) / np.sum(qd * qd, axis=1), 0.0)
        closest = qo + t[:, None] * qd
        return np.sum(closest ** 2, axis=1) <= 1.0


@dataclass(eq=False)
class OrientedPrim(Primitive):
    """A box or ellipsoid living in a rotated frame (columns of `rotation` are its axes)."""

    rotation: np.ndarray
    base: Primitive

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        ident = self.rotation.T @ self.rotation
        if not np.allclose(ident, np.eye(len(ident)), atol=1e-6):
            raise ValueError("rotation must be orthonormal")
        self.dim = self.base.dim
        self.name = "o" + ("box" if isinstance(self.base, AABoxPrim) else "elli")

    def test(self, tag, coords):
        tag, n, _, _ = _split(tag, coords)
        _check_dim(self.dim, n)
        return self.base.test(tag, local_frame(tag, coords, self.rotation))


@dataclass(eq=False)
class KDOPPrim(Primitive):
    """Intersection of slabs lo_j <= u_j . x <= hi_j; an infinite bound drops that side."""

    directions: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    name = "kdop"
    _vertices: np.ndarray = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.directions = np.atleast_2d(np.asarray(self.directions, dtype=np.float64))
        self.lo = np.asarray(self.lo, dtype=np.float64)
        self.hi = np.asarray(self.hi, dtype=np.float64)
        if np.any(self.lo > self.hi):
            raise ValueError("kDOP slab needs lo <= hi")
        self.dim = self.directions.shape[1]
        keep_hi = np.isfinite(self.hi)
        keep_lo = np.isfinite(self.lo)
        self.normals = np.concatenate([self.directions[keep_hi], -self.directions[keep_lo]])
        self.offsets = np.concatenate([self.hi[keep_hi], -self.lo[keep_lo]])

    @classmethod
    def from_halfspaces(cls, normals, offsets):
        normals = np.asarray(normals, dtype=np.float64)
        return cls(normals, np.full(len(normals), -np.inf), np.asarray(offsets, dtype=np.float64))

    @property
    def k(self):
        """Number of bounding planes."""
        return len(self.offsets)

    @property
    def vertices(self):
        if self._vertices is None:
            self._vertices = polytope_vertices(self.normals, self.offsets)
        return self._vertices

    def clipped_volume(self):
        """Volume of the k-DOP inside the unit cube."""
        eye = np.eye(self.dim)
        N = np.concatenate([self.normals, eye, -eye])
        d = np.concatenate([self.offsets, np.ones(self.dim), np.zeros(self.dim)])
        try:
            pts = polytope_vertices(N, d)
        except ValueError:
            return 0.0
        if len(pts) <= self.dim:
            return 0.0
        try:
            return float(ConvexHull(pts).volume)
        except QhullError:   # flat polytope
            return 0.0

    def test(self, tag, coords):
        tag, n, a, b = _split(tag, coords)
        _check_dim(self.dim, n)
        N, d = self.normals, self.offsets + TOL
        if tag is QueryType.POINT:
            return np.all(a @ N.T <= d, axis=1)
        if tag is QueryType.PLANE:
            v = self.vertices
            s = (v[None, :, :] - a[:, None, :]) @ b[:, :, None]
            return (s.min(axis=(1, 2)) <= TOL) & (s.max(axis=(1, 2)) >= -TOL)
        if tag is QueryType.BOX:
            center, half = 0.5 * (a + b), 0.5 * (b - a)
            low = center @ N.T - half @ np.abs(N).T
            v = self.vertices
            return np.all(low <= d, axis=1) & box_test(tag, coords, v.min(axis=0), v.max(axis=0))
        # Cyrus-Beck clipping of t >= 0 against every halfspace
        rate = b @ N.T
        room = d - a @ N.T
        with np.errstate(divide="ignore", invalid="ignore"):
            t = room / rate
        upper = np.where(rate > 0, t, np.inf).min(axis=1)
        lower = np.maximum(np.where(rate < 0, t, -np.inf).max(axis=1), 0.0)
        parallel_ok = np.all((rate != 0) | (room >= 0), axis=1)
        return parallel_ok & (lower <= upper)

    def slab(self, direction):
        """(lo, hi) of the slab whose direction matches `direction`."""
        u = np.asarray(direction, float)
        u = u / np.linalg.norm(u)
        j = int(np.argmax(self.directions @ u))
        if not np.allclose(self.directions[j], u):
            raise KeyError("no slab with that direction")
        return float(self.lo[j]), float(self.hi[j])


def polytope_vertices(normals, offsets, tol=1e-9):
    """Vertices of {x : N x <= d} by brute-force enumeration of n-plane intersections."""
    k, n = normals.shape
    combos = np.array(list(itertools.combinations(range(k), n)))
    mats = normals[combos]
    rhs = offsets[combos]
    ok = np.abs(np.linalg.det(mats)) > 1e-12
    pts = np.linalg.solve(mats[ok], rhs[ok][..., None])[..., 0]
    feasible = np.all(pts @ normals.T <= offsets + tol * (1 + np.abs(offsets)), axis=1)
    pts = pts[feasible]
    if len(pts) == 0:
        raise ValueError("empty or unbounded polytope")
    return np.unique(np.round(pts, 12), axis=0)


# -- fitting ------------------------------------------------------------------

def _occupied(ind):
    occ = ind.occupied
    if len(occ) == 0:
        raise EmptyIndicatorError()
    return occ


def fit_aabb(ind):
    occ = _occupied(ind)
    h = ind.cell_size
    return AABoxPrim(occ.min(axis=0) * h, (occ.max(axis=0) + 1) * h)


def _cell_projection_range(ind, directions):
    """Min/max of u . x over all corners of occupied cells, per direction u."""
    occ = _occupied(ind)
    h = ind.cell_size
    base = (occ * h) @ directions.T
    span = directions * h
    return base.min(axis=0) + np.minimum(span, 0).sum(axis=1), \
        base.max(axis=0) + np.maximum(span, 0).sum(axis=1)


def ritter_sphere(points):
    """Ritter's bounding sphere, then grown so every point is covered exactly."""
    p0 = points[0]
    y = points[np.argmax(np.sum((points - p0) ** 2, axis=1))]
    z = points[np.argmax(np.sum((points - y) ** 2, axis=1))]
    center = 0.5 * (y + z)
    radius = 0.5 * np.linalg.norm(z - y)
    for p in points:
        dist = np.linalg.norm(p - center)
        if dist > radius:
            new_radius = 0.5 * (radius + dist)
            center = center + (dist - new_radius) / dist * (p - center)
            radius = new_radius
    radius = max(radius, float(np.sqrt(np.max(np.sum((points - center) ** 2, axis=1)))))
    return center, radius * (1 + 1e-12)


def fit_sphere(ind):
    _occupied(ind)
    center, radius = ritter_sphere(ind.corner_points())
    return SpherePrim(center, radius)


def _enclosing_ellipsoid(corners):
    lo, hi = corners.min(axis=0), corners.max(axis=0)
    center = 0.5 * (lo + hi)
    half = np.maximum(0.5 * (hi - lo), 1e-12)
    scale = np.sqrt(np.max(np.sum(((corners - center) / half) ** 2, axis=1)))
    return EllipsoidPrim(center, half * scale * (1 + 1e-12))


def fit_aaelli(ind):
    _occupied(ind)
    return _enclosing_ellipsoid(ind.corner_points())


def pca_frame(ind):
    """Orthonormal axes (columns) from the covariance of occupied-cell centers."""
    centers = ind.cell_centers()
    if len(centers) < 2:
        return np.eye(ind.dim)
    cov = np.cov(centers.T)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evecs = evecs[:, order]
    # deterministic sign: largest component of each axis positive
    signs = np.sign(evecs[np.argmax(np.abs(evecs), axis=0), np.arange(ind.dim)])
    return evecs * np.where(signs == 0, 1, signs)


def fit_obox(ind):
    _occupied(ind)
    rot = pca_frame(ind)
    local = ind.corner_points() @ rot
    return OrientedPrim(rot, AABoxPrim(local.min(axis=0), local.max(axis=0)))


def fit_oelli(ind):
    _occupied(ind)
    rot = pca_frame(ind)
    return OrientedPrim(rot, _enclosing_ellipsoid(ind.corner_points() @ rot))


def kdop_directions(n, k=None):
    """Unit slab directions for a k-plane DOP (k/2 slabs; k defaults to 4n).

    Coordinate axes first, then main diagonals (first sign +) in lexicographic
    order, then face diagonals e_i +- e_j as padding.
    """
    k = 4 * n if k is None else int(k)
    if k % 2 or k < 2 * n:
        raise ValueError(f"k must be even and >= {2 * n} so the axes are included")
    dirs = [tuple(row) for row in np.eye(n)]
    diag = sorted((1.0,) + s for s in itertools.product((-1.0, 1.0), repeat=n - 1))
    dirs += diag if n > 1 else []
    for i, j in itertools.combinations(range(n), 2):
        for s in (-1.0, 1.0):
            v = np.zeros(n)
            v[i], v[j] = 1.0, s
            if n > 2:
                dirs.append(tuple(v))
    dirs = np.array(dirs[: k // 2], dtype=np.float64)
    if len(dirs) < k // 2:
        raise ValueError(f"k={k} exceeds the available direction set in {n}D")
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def fit_kdop(ind, k=None, directions=None):
    dirs = kdop_directions(ind.dim, k) if directions is None else np.asarray(directions, float)
    lo, hi = _cell_projection_range(ind, dirs)
    return KDOPPrim(dirs, lo, hi)


def fit_kdop_halfspaces(ind, normals):
    """Tightest offsets for fixed halfspace normals so every occupied cell is inside."""
    normals = np.asarray(normals, float)
    normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    _, hi = _cell_projection_range(ind, normals)
    return KDOPPrim.from_halfspaces(normals, hi)


# -- BVH ----------------------------------------------------------------------

def morton_codes(idx, bits=10):
    """Interleave the bits of integer cell indices (K, n), axis 0 most significant."""
    idx = np.asarray(idx, dtype=np.uint64)
    n = idx.shape[1]
    codes = np.zeros(len(idx), dtype=np.uint64)
    for bit in range(bits):
        for axis in range(n):
            b = (idx[:, axis] >> np.uint64(bit)) & np.uint64(1)
            codes |= b << np.uint64(bit * n + (n - 1 - axis))
    return codes


@dataclass(eq=False)
class BVHPrim(Primitive):
    """Linear BVH over occupied-cell boxes in Morton order with median splits.

    Node arrays: node_lo/node_hi (M, n), left/right (-1 for leaves),
    start/count into the Morton-sorted leaf boxes leaf_lo/leaf_hi.
    """

    node_lo: np.ndarray
    node_hi: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    leaf_lo: np.ndarray
    leaf_hi: np.ndarray
    name = "bvh"

    def __post_init__(self):
        self.dim = self.node_lo.shape[1]

    @property
    def root(self):
        return AABoxPrim(self.node_lo[0], self.node_hi[0])

    @property
    def n_nodes(self):
        return len(self.left)

    def depth(self):
        depth = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            for child in (self.left[i], self.right[i]):
                if child >= 0:
                    depth[child] = depth[i] + 1
        return int(depth.max()) + 1

    def traverse(self, tag, coords):
        """Batched traversal: (hit mask, number of node boxes tested per query)."""
        tag, n, _, _ = _split(tag, coords)
        _check_dim(self.dim, n)
        coords = np.asarray(coords, dtype=np.float64)
        nq = len(coords)
        hit = np.zeros(nq, dtype=bool)
        visits = np.zeros(nq, dtype=np.int64)
        q = np.arange(nq)
        node = np.zeros(nq, dtype=np.int64)
        while len(q):
            visits += np.bincount(q, minlength=nq)
            ok = box_test(tag, coords[q], self.node_lo[node], self.node_hi[node])
            q, node = q[ok], node[ok]
            leaf = self.left[node] < 0
            if leaf.any():
                hit[self._leaf_hits(tag, coords, q[leaf], node[leaf])] = True
            q, node = q[~leaf], node[~leaf]
            # early interruption: drop work for queries already decided
            alive = ~hit[q]
            q, node = q[alive], node[alive]
            q = np.concatenate([q, q])
            node = np.concatenate([self.left[node], self.right[node]])
        return hit, visits

    def _leaf_hits(self, tag, coords, q, node):
        single = self.count[node] == 1
        hits = [q[single]]
        for qi, ni in zip(q[~single], node[~single]):
            s, c = self.start[ni], self.count[ni]
            rows = np.repeat(coords[qi][None, :], c, axis=0)
            if box_test(tag, rows, self.leaf_lo[s:s + c], self.leaf_hi[s:s + c]).any():
                hits.append(np.array([qi]))
        return np.concatenate(hits).astype(np.int64)

    def test(self, tag, coords):
        return self.traverse(tag, coords)[0]

    def brute_force(self, tag, coords, chunk=2048):
        """OR of every leaf-box test, no pruning (reference for `test`)."""
        coords = np.asarray(coords, dtype=np.float64)
        out = np.zeros(len(coords), dtype=bool)
        nl = len(self.leaf_lo)
        per = max(1, chunk * 64 // max(nl, 1))
        for s in range(0, len(coords), per):
            block = coords[s:s + per]
            rows = np.repeat(block, nl, axis=0)
            lo = np.tile(self.leaf_lo, (len(block), 1))
            hi = np.tile(self.leaf_hi, (len(block), 1))
            out[s:s + per] = box_test(tag, rows, lo, hi).reshape(len(block), nl).any(axis=1)
        return out


def build_bvh(ind, leaf_size=1):
    occ = _occupied(ind)
    if leaf_size < 1:
        raise ValueError("leaf_size must be >= 1")
    h = ind.cell_size
    bits = max(1, int(math.ceil(math.log2(max(ind.shape)))))
    order = np.argsort(morton_codes(occ, bits), kind="stable")
    occ = occ[order]
    leaf_lo, leaf_hi = occ * h, (occ + 1) * h

    left, right, start, count, lo, hi = [], [], [], [], [], []

    def build(s, e):
        i = len(left)
        left.append(-1)
        right.append(-1)
        start.append(s)
        count.append(e - s)
        lo.append(None)
        hi.append(None)
        if e - s <= leaf_size:
            lo[i], hi[i] = leaf_lo[s:e].min(axis=0), leaf_hi[s:e].max(axis=0)
        else:
            mid = (s + e) // 2
            left[i] = build(s, mid)
            right[i] = build(mid, e)
            lo[i] = np.minimum(lo[left[i]], lo[right[i]])
            hi[i] = np.maximum(hi[left[i]], hi[right[i]])
        return i

    build(0, len(occ))
    return BVHPrim(np.array(lo), np.array(hi), np.array(left), np.array(right),
                   np.array(start), np.array(count), leaf_lo, leaf_hi)


CLASSIC_FITS = {
    "aabb": fit_aabb,
    "obox": fit_obox,
    "sphere": fit_sphere,
    "aaelli": fit_aaelli,
    "oelli": fit_oelli,
    "kdop": fit_kdop,
    "bvh": build_bvh,
}


def fit(method, ind, **kw):
    try:
        fn = CLASSIC_FITS[method]
    except KeyError:
        raise ValueError(f"unknown classic method {method!r}; choose from {sorted(CLASSIC_FITS)}")
    return fn(ind, **kw)


def prim_test(prim, region):
    return prim.test_region(region)


def bvh_test(bvh, region):
    return prim_test(bvh, region)
