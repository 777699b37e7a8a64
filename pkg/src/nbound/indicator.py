"""Occupancy indicators over the unit hypercube.

Every indicator maps points in [0, 1]^n to {0, 1}. Points outside the domain
are free space and evaluate to 0.
"""

import math
import os
import struct
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

NBG_MAGIC = b"NBG1"


class NBGError(ValueError):
    """Malformed NBG grid file."""


class BadMagicError(NBGError):
    pass


class TruncatedError(NBGError):
    pass


class ShapeMismatchError(NBGError):
    pass


def _as_points(x, dim):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    pts = x[None, :] if single else x
    if pts.ndim != 2 or pts.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {x.shape}")
    return pts, single


def _in_domain(pts):
    return np.all((pts >= 0.0) & (pts <= 1.0), axis=1)


class Indicator:
    """Base class: subclasses implement `_eval_points` on in-domain (N, n) arrays."""

    dim: int

    def eval(self, x):
        """Evaluate at one point (n,) or a batch (N, n); returns bool / bool array."""
        pts, single = _as_points(x, self.dim)
        out = np.zeros(len(pts), dtype=bool)
        inside = _in_domain(pts)
        if inside.any():
            out[inside] = self._eval_points(pts[inside])
        return bool(out[0]) if single else out

    __call__ = eval


class GridIndicator(Indicator):
    """Binary voxel grid; cell i covers [i/shape, (i+1)/shape) per axis."""

    def __init__(self, cells):
        cells = np.ascontiguousarray(np.asarray(cells, dtype=bool))
        if cells.ndim < 1:
            raise ValueError("grid needs at least one axis")
        self.cells = cells
        self.cells.setflags(write=False)
        self.shape = cells.shape
        self.dim = cells.ndim

    @classmethod
    def empty(cls, shape):
        return cls(np.zeros(shape, dtype=bool))

    def _eval_points(self, pts):
        shape = np.asarray(self.shape)
        # x == 1.0 exactly belongs to the last cell
        idx = np.minimum(np.floor(pts * shape).astype(np.int64), shape - 1)
        return self.cells[tuple(idx.T)]

    @property
    def occupied(self):
        """Integer indices (K, n) of set cells, in row-major order."""
        return np.argwhere(self.cells)

    @property
    def cell_size(self):
        return 1.0 / np.asarray(self.shape, dtype=np.float64)

    def occupancy(self):
        return float(self.cells.mean())

    def cell_centers(self):
        return (self.occupied + 0.5) * self.cell_size

    def corner_points(self):
        """Unique grid vertices touching at least one occupied cell."""
        verts = np.zeros(tuple(s + 1 for s in self.shape), dtype=bool)
        for offset in np.ndindex(*(2,) * self.dim):
            sl = tuple(slice(o, o + s) for o, s in zip(offset, self.shape))
            verts[sl] |= self.cells
        return np.argwhere(verts) * self.cell_size

    def __eq__(self, other):
        return isinstance(other, GridIndicator) and np.array_equal(self.cells, other.cells)

    def __repr__(self):
        return f"GridIndicator(shape={self.shape}, occupied={int(self.cells.sum())})"


@dataclass(frozen=True)
class ProceduralIndicator(Indicator):
    """Closed-form shapes. Boundary points count as inside.

    kinds and params:
      disk      center, radius             (n-ball)
      annulus   center, r_in, r_out
      star      center, r_in, r_out, points, phase   (2D polygon star)
      halfspace normal, offset             (normal . x <= offset)
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("disk", "annulus", "star", "halfspace"):
            raise ValueError(f"unknown procedural kind {self.kind!r}")
        key = "normal" if self.kind == "halfspace" else "center"
        object.__setattr__(self, "dim", len(self.params[key]))
        if self.kind == "star" and self.dim != 2:
            raise ValueError("star indicator is two-dimensional")

    def _eval_points(self, pts):
        p = self.params
        if self.kind == "halfspace":
            return pts @ np.asarray(p["normal"], float) <= p["offset"]
        rel = pts - np.asarray(p["center"], float)
        rad = np.linalg.norm(rel, axis=1)
        if self.kind == "disk":
            return rad <= p["radius"]
        if self.kind == "annulus":
            return (rad >= p["r_in"]) & (rad <= p["r_out"])
        return rad <= _star_radius(np.arctan2(rel[:, 1], rel[:, 0]) - p.get("phase", 0.0),
                                   p["r_in"], p["r_out"], p["points"])


class UnionIndicator(Indicator):
    """Occupied wherever any member is; used for hierarchy nodes."""

    def __init__(self, members):
        members = list(members)
        if not members or len({m.dim for m in members}) != 1:
            raise ValueError("union needs members of one common dimension")
        self.members = members
        self.dim = members[0].dim

    def _eval_points(self, pts):
        out = np.zeros(len(pts), dtype=bool)
        for m in self.members:
            out |= m.eval(pts)
        return out


def _star_radius(theta, r_in, r_out, points):
    # distance from center to the star polygon edge along angle theta
    half = math.pi / points
    local = np.mod(theta, 2 * half)
    local = np.where(local > half, 2 * half - local, local)
    a = np.array([r_out, 0.0])
    b = np.array([r_in * math.cos(half), r_in * math.sin(half)])
    nrm = np.array([a[1] - b[1], b[0] - a[0]])
    return (nrm @ a) / (nrm[0] * np.cos(local) + nrm[1] * np.sin(local))


def rasterize(ind, shape):
    """Sample an indicator at cell centers into a GridIndicator."""
    shape = tuple(int(s) for s in shape)
    if len(shape) != ind.dim:
        raise ValueError("shape rank must match indicator dimension")
    axes = [(np.arange(s) + 0.5) / s for s in shape]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(shape))
    return GridIndicator(ind.eval(mesh).reshape(shape))


def disk_grid(res=32, radius=0.25, center=(0.5, 0.5)):
    return rasterize(ProceduralIndicator("disk", {"center": center, "radius": radius}), (res, res))


def star_grid(res=32, r_in=0.16, r_out=0.45, points=5, center=(0.5, 0.5), phase=math.pi / 2):
    star = ProceduralIndicator(
        "star", {"center": center, "r_in": r_in, "r_out": r_out, "points": points, "phase": phase})
    return rasterize(star, (res, res))


def load_asset(name):
    """Load one of the NBG grids shipped in nbound/data."""
    ref = resources.files("nbound").joinpath("data", f"{name}.nbg")
    return loads_grid(ref.read_bytes())


class AnimatedIndicator(Indicator):
    """A 3D grid spinning about the grid center; the 4th coordinate is time.

    Time is quantized to `steps` frames and the sequence spans one full turn.
    """

    def __init__(self, base, steps, axis=0):
        if base.dim != 3:
            raise ValueError("animated indicators need a 3D base grid")
        if steps < 1:
            raise ValueError("steps must be >= 1")
        self.base = base
        self.steps = int(steps)
        self.axis = int(axis)
        self.dim = 4

    def frame_angle(self, t):
        k = np.clip(np.floor(np.asarray(t) * self.steps), 0, self.steps - 1)
        return 2 * np.pi * k / self.steps

    def _eval_points(self, pts):
        ang = -self.frame_angle(pts[:, 3])
        c, s = np.cos(ang), np.sin(ang)
        i, j = [a for a in range(3) if a != self.axis]
        rel = pts[:, :3] - 0.5
        rot = rel.copy()
        rot[:, i] = c * rel[:, i] - s * rel[:, j]
        rot[:, j] = s * rel[:, i] + c * rel[:, j]
        return self.base.eval(rot + 0.5)


def make_rotation_sequence(base, steps, axis=0):
    return AnimatedIndicator(base, steps, axis)


# -- NBG files ---------------------------------------------------------------

def dumps_grid(ind):
    shape = ind.shape
    head = NBG_MAGIC + struct.pack("<B", len(shape)) + struct.pack(f"<{len(shape)}I", *shape)
    payload = np.packbits(ind.cells.ravel(), bitorder="little")
    return head + payload.tobytes()


def loads_grid(data):
    data = bytes(data)
    if len(data) < 5 or data[:4] != NBG_MAGIC:
        raise BadMagicError("not an NBG grid (bad magic)")
    dim = data[4]
    if dim == 0:
        raise ShapeMismatchError("grid dimension must be positive")
    head = 5 + 4 * dim
    if len(data) < head:
        raise TruncatedError("header truncated")
    shape = struct.unpack(f"<{dim}I", data[5:head])
    ncells = math.prod(shape)
    nbytes = (ncells + 7) // 8
    payload = data[head:]
    if len(payload) < nbytes:
        raise TruncatedError(f"payload has {len(payload)} bytes, need {nbytes}")
    if len(payload) > nbytes:
        raise ShapeMismatchError(f"payload has {len(payload) - nbytes} trailing bytes")
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), bitorder="little")
    if bits[ncells:].any():
        raise ShapeMismatchError("nonzero padding bits")
    return GridIndicator(bits[:ncells].astype(bool).reshape(shape))


def save_grid(ind, path):
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(dumps_grid(ind))
    os.replace(tmp, path)


def load_grid(path):
    with open(path, "rb") as fh:
        return loads_grid(fh.read())
