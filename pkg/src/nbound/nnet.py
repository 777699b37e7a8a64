"""Small differentiable bounding models in plain numpy.

Each model maps a batch of flat region encodings X (N, m) to an occupancy
probability through a sigmoid, and exposes

    forward(X)                -> (yhat, cache)       cache["logit"] is pre-sigmoid
    backward_logit(cache, g)  -> grads for g = dLoss/dlogit
    backward(cache, g)        -> grads for g = dLoss/dyhat
    params                    list of arrays updated in place by the optimizer

Training works on the logit so saturated predictions keep useful gradients.
"""

import numpy as np
from scipy.special import expit

from .geometry import KDOPPrim, kdop_directions
from .query import QueryType, region_width

DEFAULT_EPS = 1e-5

# hidden width per indicator dimension; two hidden layers each
HIDDEN_WIDTH = {2: 25, 3: 50, 4: 75}


def sigmoid(z):
    return expit(z)


def _check_input(X, m):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != m:
        raise ValueError(f"model expects {m} inputs, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite model input")
    return X


def _uniform_layer(rng, d_in, d_out):
    bound = 1.0 / np.sqrt(d_in)
    return rng.uniform(-bound, bound, (d_in, d_out)), rng.uniform(-bound, bound, d_out)


class PositionalEncoding:
    """sin/cos at octave frequencies 2^k * pi, `depth` values per input coordinate.

    With include_input the raw coordinates are appended, so the output has
    m * depth + m columns (18 for m=2, depth=8).
    """

    def __init__(self, depth=8, include_input=True):
        if depth % 2:
            raise ValueError("depth counts sin and cos pairs, so it must be even")
        self.depth = int(depth)
        self.include_input = bool(include_input)

    def out_dim(self, m):
        return m * self.depth + (m if self.include_input else 0)

    def __call__(self, X):
        X = np.asarray(X, dtype=np.float64)
        freqs = np.pi * 2.0 ** np.arange(self.depth // 2)
        arg = X[:, :, None] * freqs
        enc = np.concatenate([np.sin(arg), np.cos(arg)], axis=2).reshape(len(X), -1)
        return np.concatenate([X, enc], axis=1) if self.include_input else enc


class MLP:
    """Sine-activated perceptron with a sigmoid output unit."""

    kind = "mlp"

    def __init__(self, layer_dims, omega=1.0, seed=0, encoding=None, zero=False):
        self.encoding = encoding
        self.input_dim = int(layer_dims[0])
        dims = list(layer_dims)
        if encoding is not None:
            dims[0] = encoding.out_dim(self.input_dim)
        if dims[-1] != 1:
            raise ValueError("the output layer must have a single unit")
        self.layer_dims = dims
        self.omega = float(omega)
        self.seed = int(seed)
        rng = np.random.default_rng(seed)
        self.params = []
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            W, b = _uniform_layer(rng, d_in, d_out)
            if zero:
                W, b = np.zeros_like(W), np.zeros_like(b)
            self.params += [W, b]

    @property
    def n_layers(self):
        return len(self.layer_dims) - 1

    @property
    def n_params(self):
        return sum(p.size for p in self.params)

    def _prepare(self, X):
        X = _check_input(X, self.input_dim)
        return self.encoding(X) if self.encoding is not None else X

    def forward(self, X):
        h = self._prepare(X)
        acts, pres = [h], []
        for i in range(self.n_layers - 1):
            W, b = self.params[2 * i], self.params[2 * i + 1]
            pre = h @ W + b
            h = np.sin(self.omega * pre)
            pres.append(pre)
            acts.append(h)
        logit = (h @ self.params[-2] + self.params[-1])[:, 0]
        yhat = sigmoid(logit)
        return yhat, {"acts": acts, "pres": pres, "logit": logit, "yhat": yhat}

    def backward_logit(self, cache, dlogit):
        acts, pres = cache["acts"], cache["pres"]
        grads = [None] * len(self.params)
        delta = np.asarray(dlogit, dtype=np.float64)[:, None]
        for i in reversed(range(self.n_layers)):
            grads[2 * i] = acts[i].T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i:
                delta = (delta @ self.params[2 * i].T) * self.omega * np.cos(self.omega * pres[i - 1])
        return grads

    def backward(self, cache, dyhat):
        y = cache["yhat"]
        return self.backward_logit(cache, np.asarray(dyhat) * y * (1 - y))

    def layer_evals(self):
        return self.n_layers

    def state(self):
        desc = {"layer_dims": [self.input_dim] + self.layer_dims[1:], "omega": self.omega,
                "seed": self.seed, "encoding": self.encoding.depth if self.encoding else 0}
        return desc, self.params

    @classmethod
    def from_state(cls, desc, arrays):
        enc = PositionalEncoding(desc["encoding"]) if desc["encoding"] else None
        model = cls(desc["layer_dims"], desc["omega"], desc["seed"], enc, zero=True)
        _load_params(model, arrays)
        return model


def _load_params(model, arrays):
    if len(arrays) != len(model.params):
        raise ValueError("parameter count does not match architecture")
    for p, a in zip(model.params, arrays):
        if p.shape != a.shape:
            raise ValueError(f"parameter shape {a.shape} does not match {p.shape}")
        p[...] = a


def architecture(dim, query="point", width=None):
    """Layer sizes used for each indicator dimension and query type."""
    w = HIDDEN_WIDTH[dim] if width is None else width
    return [region_width(query, dim), w, w, 1]


def make_mlp(dim, query="point", seed=0, omega=1.0, encoding=None, width=None):
    return MLP(architecture(dim, query, width), omega=omega, seed=seed, encoding=encoding)


class EarlyExitNet:
    """Two sigmoid heads on a shared first sine layer.

    early = sigmoid(A3 . trunk)             approximates 1 - g ("certainly empty")
    late  = sigmoid(Aout . sin(A2 . trunk))  approximates g
    trunk = sin(A1 . x)
    """

    kind = "early"

    def __init__(self, input_dim, width=25, omega=1.0, seed=0, zero=False):
        self.input_dim = int(input_dim)
        self.width = int(width)
        self.omega = float(omega)
        self.seed = int(seed)
        rng = np.random.default_rng(seed)
        layers = [_uniform_layer(rng, input_dim, width), _uniform_layer(rng, width, 1),
                  _uniform_layer(rng, width, width), _uniform_layer(rng, width, 1)]
        # order: A1, A3 (early head), A2, Aout
        self.params = [np.zeros_like(a) if zero else a for layer in layers for a in layer]

    @property
    def n_params(self):
        return sum(p.size for p in self.params)

    def forward(self, X, late=True):
        X = _check_input(X, self.input_dim)
        W1, b1, W3, b3, W2, b2, Wo, bo = self.params
        pre1 = X @ W1 + b1
        trunk = np.sin(self.omega * pre1)
        early_logit = (trunk @ W3 + b3)[:, 0]
        cache = {"X": X, "pre1": pre1, "trunk": trunk, "early_logit": early_logit,
                 "early": sigmoid(early_logit)}
        if late:
            pre2 = trunk @ W2 + b2
            h2 = np.sin(self.omega * pre2)
            cache.update(pre2=pre2, h2=h2)
            cache["logit"] = (h2 @ Wo + bo)[:, 0]
            cache["yhat"] = sigmoid(cache["logit"])
        return cache

    def backward_logit(self, cache, dlate, dearly):
        W1, b1, W3, b3, W2, b2, Wo, bo = self.params
        w = self.omega
        dl = np.asarray(dlate, dtype=np.float64)[:, None]
        de = np.asarray(dearly, dtype=np.float64)[:, None]
        gWo, gbo = cache["h2"].T @ dl, dl.sum(axis=0)
        d2 = (dl @ Wo.T) * w * np.cos(w * cache["pre2"])
        gW2, gb2 = cache["trunk"].T @ d2, d2.sum(axis=0)
        gW3, gb3 = cache["trunk"].T @ de, de.sum(axis=0)
        dtrunk = d2 @ W2.T + de @ W3.T
        d1 = dtrunk * w * np.cos(w * cache["pre1"])
        gW1, gb1 = cache["X"].T @ d1, d1.sum(axis=0)
        return [gW1, gb1, gW3, gb3, gW2, gb2, gWo, gbo]

    def backward(self, cache, dlate, dearly):
        yl, ye = cache["yhat"], cache["early"]
        return self.backward_logit(cache, np.asarray(dlate) * yl * (1 - yl),
                                   np.asarray(dearly) * ye * (1 - ye))

    def predict_early(self, X, eps=DEFAULT_EPS):
        """Bits and exit mask: exit where the early head certifies empty space."""
        cache = self.forward(X, late=False)
        exits = cache["early"] - eps >= 0.5
        bits = np.zeros(len(exits), dtype=bool)
        rest = ~exits
        if rest.any():
            late = self.forward(cache["X"][rest])
            bits[rest] = late["yhat"] + eps >= 0.5
        return bits, exits

    @staticmethod
    def layer_evals(exits):
        """Weight layers evaluated per query: trunk + early head, plus two more on continue."""
        return 2 + 2 * (~np.asarray(exits)).astype(int)

    def state(self):
        return {"input_dim": self.input_dim, "width": self.width, "omega": self.omega,
                "seed": self.seed}, self.params

    @classmethod
    def from_state(cls, desc, arrays):
        model = cls(desc["input_dim"], desc["width"], desc["omega"], desc["seed"], zero=True)
        _load_params(model, arrays)
        return model


class ReLUField:
    """Trainable vertex grid, multilinearly interpolated and squashed by a sigmoid.

    Inputs are mapped from [lo, hi] per axis onto `resolution` vertices and
    clipped to the grid.
    """

    kind = "relufield"

    def __init__(self, resolution, lo=None, hi=None):
        self.resolution = tuple(int(r) for r in resolution)
        if min(self.resolution) < 2:
            raise ValueError("need at least two vertices per axis")
        m = len(self.resolution)
        self.input_dim = m
        self.lo = np.zeros(m) if lo is None else np.asarray(lo, dtype=np.float64)
        self.hi = np.ones(m) if hi is None else np.asarray(hi, dtype=np.float64)
        self.params = [np.zeros(self.resolution)]
        self._strides = np.array([int(np.prod(self.resolution[i + 1:])) for i in range(m)])

    @classmethod
    def for_query(cls, dim, query="point", res=32):
        query = QueryType.parse(query)
        m = region_width(query, dim)
        lo, hi = np.zeros(m), np.ones(m)
        if query in (QueryType.RAY, QueryType.PLANE):
            lo[dim:] = -1.0
        return cls((res,) * m, lo, hi)

    @property
    def values(self):
        return self.params[0]

    @property
    def n_params(self):
        return self.values.size

    def forward(self, X):
        X = _check_input(X, self.input_dim)
        res = np.asarray(self.resolution)
        u = np.clip((X - self.lo) / (self.hi - self.lo), 0.0, 1.0) * (res - 1)
        base = np.minimum(np.floor(u).astype(np.int64), res - 2)
        frac = u - base
        flat = self.values.ravel()
        idx, wts = [], []
        logit = np.zeros(len(X))
        for corner in np.ndindex(*(2,) * self.input_dim):
            c = np.asarray(corner)
            w = np.prod(np.where(c, frac, 1.0 - frac), axis=1)
            i = (base + c) @ self._strides
            logit += w * flat[i]
            idx.append(i)
            wts.append(w)
        yhat = sigmoid(logit)
        return yhat, {"idx": idx, "wts": wts, "logit": logit, "yhat": yhat}

    def backward_logit(self, cache, dlogit):
        g = np.zeros(self.values.size)
        for i, w in zip(cache["idx"], cache["wts"]):
            g += np.bincount(i, weights=w * dlogit, minlength=g.size)
        return [g.reshape(self.resolution)]

    def backward(self, cache, dyhat):
        y = cache["yhat"]
        return self.backward_logit(cache, np.asarray(dyhat) * y * (1 - y))

    def state(self):
        return {"resolution": list(self.resolution), "lo": self.lo.tolist(),
                "hi": self.hi.tolist()}, self.params

    @classmethod
    def from_state(cls, desc, arrays):
        model = cls(desc["resolution"], desc["lo"], desc["hi"])
        _load_params(model, arrays)
        return model


class LearnableKDOP:
    """k halfspaces with learnable normals and offsets and a smooth inside test.

    yhat = prod_j sigmoid((d_j - u_j . x) / tau), u_j the normalized normals.
    The logit of that product is computed in log space for stability.
    """

    kind = "kdop"

    def __init__(self, normals, offsets, tau=0.02):
        normals = np.asarray(normals, dtype=np.float64)
        self.params = [normals / np.linalg.norm(normals, axis=1, keepdims=True),
                       np.asarray(offsets, dtype=np.float64).copy()]
        self.tau = float(tau)
        self.input_dim = normals.shape[1]

    @classmethod
    def from_prim(cls, prim, tau=0.02):
        return cls(prim.normals, prim.offsets, tau)

    @classmethod
    def init_default(cls, dim, k=None, tau=0.02):
        dirs = kdop_directions(dim, k)
        normals = np.concatenate([dirs, -dirs])
        # start as the k-DOP of the whole unit cube
        return cls(normals, np.maximum(normals, 0.0).sum(axis=1), tau)

    @property
    def k(self):
        return len(self.params[1])

    @property
    def unit_normals(self):
        u = self.params[0]
        return u / np.linalg.norm(u, axis=1, keepdims=True)

    def forward(self, X):
        X = _check_input(X, self.input_dim)
        raw, d = self.params
        norm = np.linalg.norm(raw, axis=1)
        u = raw / norm[:, None]
        z = np.clip((d - X @ u.T) / self.tau, -700.0, 700.0)
        out_sig = sigmoid(-z)                    # 1 - sigmoid(z)
        a = -np.logaddexp(0.0, -z).sum(axis=1)   # log prod sigmoid(z_j)
        gap = -np.expm1(a)                       # 1 - yhat
        logit = a - np.log(gap)
        yhat = np.exp(a)
        return yhat, {"X": X, "u": u, "norm": norm, "out_sig": out_sig, "gap": gap,
                      "logit": logit, "yhat": yhat}

    def backward_logit(self, cache, dlogit):
        dz = cache["out_sig"] / cache["gap"][:, None] * np.asarray(dlogit)[:, None]
        gd = dz.sum(axis=0) / self.tau
        gu = -(dz.T @ cache["X"]) / self.tau
        u, norm = cache["u"], cache["norm"]
        graw = (gu - np.sum(gu * u, axis=1, keepdims=True) * u) / norm[:, None]
        return [graw, gd]

    def backward(self, cache, dyhat):
        y = cache["yhat"]
        return self.backward_logit(cache, np.asarray(dyhat) * y * (1 - y))

    def harden(self, points, margin=DEFAULT_EPS):
        """Hard k-DOP on the learned normals, offsets pushed out to cover `points`."""
        u = self.unit_normals
        reach = (np.asarray(points, float) @ u.T).max(axis=0)
        return KDOPPrim.from_halfspaces(u, reach + margin)

    def renormalize(self):
        self.params[0] /= np.linalg.norm(self.params[0], axis=1, keepdims=True)

    def state(self):
        return {"k": self.k, "dim": self.input_dim, "tau": self.tau}, self.params

    @classmethod
    def from_state(cls, desc, arrays):
        model = cls(np.ones((desc["k"], desc["dim"])), np.zeros(desc["k"]), desc["tau"])
        _load_params(model, arrays)
        return model


MODEL_TYPES = {cls.kind: cls for cls in (MLP, EarlyExitNet, ReLUField, LearnableKDOP)}


def forward(model, X):
    return model.forward(X)[0]


def backward(model, X, upstream):
    _, cache = model.forward(X)
    return model.backward(cache, upstream)


def predict(model, X, eps=DEFAULT_EPS):
    """Conservative hard decision: 1 iff yhat + eps >= 0.5."""
    if isinstance(model, EarlyExitNet):
        return model.predict_early(X, eps)[0]
    return forward(model, X) + eps >= 0.5


def predict_early(net, X, eps=DEFAULT_EPS):
    return net.predict_early(X, eps)


class NeuralBound:
    """Wraps a trained model as a bounding predictor for one query type.

    In inverted mode the model bounds the certainly-occupied set, so the eps
    shift goes the other way (a hit must clear 0.5 by eps).
    """

    def __init__(self, model, query, dim, eps=DEFAULT_EPS, inverted=False, method=None):
        self.model = model
        self.query = QueryType.parse(query)
        self.dim = int(dim)
        self.eps = float(eps)
        self.inverted = bool(inverted)
        self.method = method or model.kind
        if getattr(model, "input_dim", None) != region_width(self.query, self.dim):
            raise ValueError("model input does not match the query encoding")

    def test(self, tag, coords, chunk=1 << 16):
        tag = QueryType.parse(tag)
        if tag is not self.query:
            raise ValueError(f"model was trained for {self.query.value} queries, not {tag.value}")
        coords = np.asarray(coords, dtype=np.float64)
        out = np.empty(len(coords), dtype=bool)
        for s in range(0, len(coords), chunk):
            out[s:s + chunk] = self._decide(coords[s:s + chunk])
        return out

    def _decide(self, X):
        if isinstance(self.model, EarlyExitNet):
            return self.model.predict_early(X, self.eps)[0]
        y = forward(self.model, X)
        return (y - self.eps >= 0.5) if self.inverted else (y + self.eps >= 0.5)

    def test_region(self, region):
        return int(self.test(region.tag, region.as_batch())[0])
