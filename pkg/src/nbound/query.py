"""Query regions, uniform region sampling and the sampled ground-truth oracle.

Regions are stored as flat coordinate rows so batches are plain (N, w) arrays:

    point  (x)              w = n
    ray    (origin, dir)    w = 2n, direction unit length
    plane  (p0, normal)     w = 2n, normal unit length
    box    (lo, hi)         w = 2n, lo <= hi
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np


class QueryType(str, Enum):
    POINT = "point"
    RAY = "ray"
    PLANE = "plane"
    BOX = "box"

    @classmethod
    def parse(cls, value):
        return value if isinstance(value, cls) else cls(str(value).lower())


def region_width(tag, n):
    return n if QueryType.parse(tag) is QueryType.POINT else 2 * n


def region_dim(tag, width):
    return width if QueryType.parse(tag) is QueryType.POINT else width // 2


def _unit(v, what):
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norm == 0) or not np.all(np.isfinite(norm)):
        raise ValueError(f"{what} must have nonzero finite norm")
    return v / norm


def normalize_regions(tag, coords):
    """Validate a batch and bring it into canonical form (unit directions, sorted corners)."""
    tag = QueryType.parse(tag)
    coords = np.array(coords, dtype=np.float64, ndmin=2)
    if tag is QueryType.POINT:
        return coords
    if coords.shape[1] % 2:
        raise ValueError(f"{tag.value} regions need an even coordinate count")
    n = coords.shape[1] // 2
    a, b = coords[:, :n], coords[:, n:]
    if tag is QueryType.BOX:
        return np.concatenate([np.minimum(a, b), np.maximum(a, b)], axis=1)
    what = "ray direction" if tag is QueryType.RAY else "plane normal"
    return np.concatenate([a, _unit(b, what)], axis=1)


@dataclass(frozen=True)
class Region:
    tag: QueryType
    coords: np.ndarray

    def __post_init__(self):
        tag = QueryType.parse(self.tag)
        object.__setattr__(self, "tag", tag)
        object.__setattr__(self, "coords", normalize_regions(tag, self.coords)[0])

    @property
    def dim(self):
        return region_dim(self.tag, len(self.coords))

    @property
    def parts(self):
        if self.tag is QueryType.POINT:
            return (self.coords,)
        n = self.dim
        return self.coords[:n], self.coords[n:]

    def as_batch(self):
        return self.coords[None, :]

    @classmethod
    def point(cls, x):
        return cls(QueryType.POINT, np.asarray(x, float))

    @classmethod
    def ray(cls, origin, direction):
        return cls(QueryType.RAY, np.concatenate([origin, direction]).astype(float))

    @classmethod
    def plane(cls, p0, normal):
        return cls(QueryType.PLANE, np.concatenate([p0, normal]).astype(float))

    @classmethod
    def box(cls, lo, hi):
        return cls(QueryType.BOX, np.concatenate([lo, hi]).astype(float))


def random_directions(rng, count, n):
    v = rng.standard_normal((count, n))
    norm = np.linalg.norm(v, axis=1, keepdims=True)
    # a zero draw has probability ~0; retry keeps the stream deterministic anyway
    while np.any(norm < 1e-12):
        bad = norm[:, 0] < 1e-12
        v[bad] = rng.standard_normal((int(bad.sum()), n))
        norm = np.linalg.norm(v, axis=1, keepdims=True)
    return v / norm


def uniform_regions(rng, tag, n, count):
    """Draw `count` regions of one type: positions uniform in [0,1]^n, directions uniform on the sphere."""
    tag = QueryType.parse(tag)
    first = rng.random((count, n))
    if tag is QueryType.POINT:
        return first
    if tag is QueryType.BOX:
        second = rng.random((count, n))
        return np.concatenate([np.minimum(first, second), np.maximum(first, second)], axis=1)
    return np.concatenate([first, random_directions(rng, count, n)], axis=1)


def uniform_region(rng, tag, n):
    return Region(tag, uniform_regions(rng, tag, n, 1)[0])


def forward_facing_rays(rng, count):
    """3D benchmark rays: origins on the z=0 face, directions in the +z hemisphere."""
    origin = np.column_stack([rng.random((count, 2)), np.zeros(count)])
    d = random_directions(rng, count, 3)
    d[:, 2] = np.abs(d[:, 2])
    return np.concatenate([origin, d], axis=1)


def _strata(rng, count, samples, axes):
    # Latin-hypercube offsets in [0,1): each axis hits every stratum once per region
    u = rng.random((count, samples, axes))
    perm = np.argsort(rng.random((count, samples, axes)), axis=1)
    return (perm + u) / samples


def clip_rays(coords):
    """Parameter interval [t0, t1] of each ray inside [0,1]^n (t >= 0); t0 > t1 means a miss."""
    n = coords.shape[1] // 2
    o, d = coords[:, :n], coords[:, n:]
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = (0.0 - o) / d
        tb = (1.0 - o) / d
    lo = np.minimum(ta, tb)
    hi = np.maximum(ta, tb)
    flat = d == 0
    inside = (o >= 0) & (o <= 1)
    lo = np.where(flat, np.where(inside, -np.inf, np.inf), lo)
    hi = np.where(flat, np.where(inside, np.inf, -np.inf), hi)
    return np.maximum(lo.max(axis=1), 0.0), hi.min(axis=1)


def sample_regions(rng, tag, coords, samples):
    """Points inside each region and their validity mask: (N, S, n), (N, S).

    Points are returned as-is (S ignored, one sample). Rays are clipped to the
    domain and sampled stratified along the segment; planes use the dominant
    normal axis with rejection; boxes use Latin-hypercube strata.
    """
    tag = QueryType.parse(tag)
    coords = np.asarray(coords, dtype=np.float64)
    count = len(coords)
    if tag is QueryType.POINT:
        return coords[:, None, :], np.ones((count, 1), dtype=bool)
    if samples < 1:
        raise ValueError("need at least one sample per region")
    n = coords.shape[1] // 2
    a, b = coords[:, :n], coords[:, n:]
    if tag is QueryType.BOX:
        off = _strata(rng, count, samples, n)
        pts = a[:, None, :] + off * (b - a)[:, None, :]
        return pts, np.ones((count, samples), dtype=bool)
    if tag is QueryType.RAY:
        t0, t1 = clip_rays(coords)
        valid = t0 <= t1
        span = np.where(valid, t1 - t0, 0.0)
        frac = (np.arange(samples) + rng.random((count, samples))) / samples
        t = np.where(valid, t0, 0.0)[:, None] + frac * span[:, None]
        pts = np.clip(a[:, None, :] + t[..., None] * b[:, None, :], 0.0, 1.0)
        return pts, np.repeat(valid[:, None], samples, axis=1)
    # plane: stratify every axis, then solve the dominant-normal axis
    axis = np.argmax(np.abs(b), axis=1)
    rows = np.arange(count)[:, None]
    cols = np.arange(samples)[None, :]
    pts = _strata(rng, count, samples, n)
    na = b[rows[:, 0], axis][:, None]
    pa = a[rows[:, 0], axis][:, None]
    old = pts[rows, cols, axis[:, None]]
    rest = np.einsum("nsk,nk->ns", pts - a[:, None, :], b) - na * (old - pa)
    solved = pa - rest / na
    pts[rows, cols, axis[:, None]] = solved
    valid = (solved >= 0.0) & (solved <= 1.0)
    return pts, valid


def sample_region(rng, region, samples):
    """Sample points of a single region; an empty (0, n) array means it misses the domain."""
    pts, valid = sample_regions(rng, region.tag, region.as_batch(), samples)
    return pts[0][valid[0]]


class QueryOracle:
    """Ground truth for region queries: 1 iff any region sample hits the indicator."""

    def __init__(self, indicator, samples_per_region=128):
        self.indicator = indicator
        self.samples_per_region = int(samples_per_region)

    @property
    def dim(self):
        return self.indicator.dim

    def labels(self, rng, tag, coords):
        tag = QueryType.parse(tag)
        coords = np.asarray(coords, dtype=np.float64)
        if coords.shape[1] != region_width(tag, self.dim):
            raise ValueError("region width does not match indicator dimension")
        if tag is QueryType.POINT:
            return self.indicator.eval(coords)
        pts, valid = sample_regions(rng, tag, coords, self.samples_per_region)
        hit = np.zeros(valid.shape, dtype=bool)
        if valid.any():
            hit[valid] = self.indicator.eval(pts[valid])
        return hit.any(axis=1)

    def label(self, rng, region):
        return int(self.labels(rng, region.tag, region.as_batch())[0])


def oracle_label(oracle, rng, region):
    return oracle.label(rng, region)
