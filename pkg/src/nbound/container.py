"""NBM model container: one binary format for neural and classic bounds.

    "NBM1" | u16 version | u8 len + method tag | u8 query | u8 dim | f64 eps
    | u32 len + architecture JSON (sorted keys) | u32 count + f64 LE params
    | u32 CRC32 of everything before

Parameter arrays are flattened in order; their shapes live in the JSON.
"""

import json
import os
import struct
import zlib

import numpy as np

from . import geometry
from .nnet import MODEL_TYPES, NeuralBound
from .query import QueryType

NBM_MAGIC = b"NBM1"
NBM_VERSION = 1
QUERY_CODES = {q: i for i, q in enumerate(QueryType)}


class NBMError(ValueError):
    """Malformed NBM container."""


class CRCError(NBMError):
    pass


class VersionError(NBMError):
    pass


class NBMTruncatedError(NBMError):
    pass


def _prim_state(prim):
    if isinstance(prim, geometry.AABoxPrim):
        return {"prim": "aabb"}, [prim.lo, prim.hi]
    if isinstance(prim, geometry.SpherePrim):
        return {"prim": "sphere"}, [prim.center, np.array([prim.radius])]
    if isinstance(prim, geometry.EllipsoidPrim):
        return {"prim": "ellipsoid"}, [prim.center, prim.radii]
    if isinstance(prim, geometry.OrientedPrim):
        desc, arrays = _prim_state(prim.base)
        return {"prim": "oriented", "base": desc}, [prim.rotation] + arrays
    if isinstance(prim, geometry.KDOPPrim):
        return {"prim": "kdop"}, [prim.directions, prim.lo, prim.hi]
    if isinstance(prim, geometry.BVHPrim):
        names = ("node_lo", "node_hi", "left", "right", "start", "count", "leaf_lo", "leaf_hi")
        return {"prim": "bvh"}, [np.asarray(getattr(prim, k), dtype=np.float64) for k in names]
    raise TypeError(f"cannot store {type(prim).__name__}")


def _prim_from_state(desc, arrays):
    kind = desc["prim"]
    if kind == "aabb":
        return geometry.AABoxPrim(*arrays)
    if kind == "sphere":
        return geometry.SpherePrim(arrays[0], float(arrays[1][0]))
    if kind == "ellipsoid":
        return geometry.EllipsoidPrim(*arrays)
    if kind == "oriented":
        return geometry.OrientedPrim(arrays[0], _prim_from_state(desc["base"], arrays[1:]))
    if kind == "kdop":
        return geometry.KDOPPrim(*arrays)
    if kind == "bvh":
        ints = [a.astype(np.int64) for a in arrays[2:6]]
        return geometry.BVHPrim(arrays[0], arrays[1], *ints, arrays[6], arrays[7])
    raise NBMError(f"unknown primitive kind {kind!r}")


def _state(obj):
    if isinstance(obj, NeuralBound):
        desc, arrays = obj.model.state()
        return {"family": "neural", "model": obj.model.kind, "inverted": obj.inverted,
                "desc": desc}, arrays
    desc, arrays = _prim_state(obj)
    return {"family": "classic", "desc": desc}, arrays


def serialize(obj, method, query, dim, eps=0.0):
    """Encode a NeuralBound or a classic primitive as NBM bytes."""
    arch, arrays = _state(obj)
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    arch["shapes"] = [list(a.shape) for a in arrays]
    tag = method.encode("ascii")
    if len(tag) > 255:
        raise ValueError("method tag too long")
    js = json.dumps(arch, sort_keys=True, separators=(",", ":")).encode()
    body = b"".join([
        NBM_MAGIC,
        struct.pack("<H", NBM_VERSION),
        struct.pack("<B", len(tag)), tag,
        struct.pack("<BBd", QUERY_CODES[QueryType.parse(query)], int(dim), float(eps)),
        struct.pack("<I", len(js)), js,
        struct.pack("<I", sum(a.size for a in arrays)),
        b"".join(a.astype("<f8").tobytes() for a in arrays),
    ])
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data):
        self.data, self.pos = data, 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise NBMTruncatedError("container truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


class LoadedModel:
    """Header fields plus the reconstructed predictor."""

    def __init__(self, method, query, dim, eps, predictor, arch):
        self.method, self.query, self.dim, self.eps = method, query, dim, eps
        self.predictor, self.arch = predictor, arch

    def test(self, tag, coords):
        return self.predictor.test(tag, coords)


def deserialize(data):
    data = bytes(data)
    if len(data) < 4 or data[:4] != NBM_MAGIC:
        raise NBMError("not an NBM container (bad magic)")
    if len(data) < 10:
        raise NBMTruncatedError("container truncated")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    r = _Reader(body)
    r.take(4)
    (version,) = r.unpack("<H")
    if version != NBM_VERSION:
        raise VersionError(f"unsupported NBM version {version}")
    if zlib.crc32(body) != crc:
        raise CRCError("CRC mismatch")
    (tlen,) = r.unpack("<B")
    method = r.take(tlen).decode("ascii")
    qcode, dim, eps = r.unpack("<BBd")
    query = list(QueryType)[qcode]
    (jlen,) = r.unpack("<I")
    arch = json.loads(r.take(jlen))
    (count,) = r.unpack("<I")
    flat = np.frombuffer(r.take(8 * count), dtype="<f8").astype(np.float64)
    if r.pos != len(body):
        raise NBMError("trailing bytes before CRC")
    arrays, off = [], 0
    for shape in arch["shapes"]:
        size = int(np.prod(shape))
        arrays.append(flat[off:off + size].reshape(shape).copy())
        off += size
    if off != count:
        raise NBMError("parameter count does not match shapes")
    if arch["family"] == "neural":
        model = MODEL_TYPES[arch["model"]].from_state(arch["desc"], arrays)
        pred = NeuralBound(model, query, dim, eps, arch["inverted"], method)
    else:
        pred = _prim_from_state(arch["desc"], arrays)
    return LoadedModel(method, query, dim, eps, pred, arch)


def atomic_write(path, data):
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def save_model(path, obj, method, query, dim, eps=0.0):
    atomic_write(path, serialize(obj, method, query, dim, eps))


def load_model(path):
    with open(path, "rb") as fh:
        return deserialize(fh.read())
