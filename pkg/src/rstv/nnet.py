"""A small numpy neural network engine: dense, conv2d, max-pool, ReLU, dropout, MSE, ADAM.

Tensors are numpy arrays; images are laid out ``N x C x H x W``. A dense
layer flattens everything after the batch axis.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from rstv.fileio import read_container, write_container

log = logging.getLogger(__name__)

MAGIC = b"RSTVNNET"
KINDS = ("dense", "conv2d", "maxpool2d", "relu", "dropout", "linear")


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    args: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        for key in ("in", "out", "in_ch", "out_ch", "k"):
            if key in self.args and int(self.args[key]) <= 0:
                raise ValueError(f"{self.kind}: {key} must be positive")
        if self.kind == "conv2d" and int(self.args.get("stride", 1)) not in (1, 2):
            raise ValueError("conv2d stride must be 1 or 2")
        if self.kind == "dropout" and not 0 <= float(self.args["p"]) < 1:
            raise ValueError("dropout rate must lie in [0, 1)")

    def to_json(self):
        return {"kind": self.kind, **self.args}

    @classmethod
    def from_json(cls, d):
        d = dict(d)
        return cls(d.pop("kind"), d)


def dense(n_in, n_out):
    return LayerSpec("dense", {"in": n_in, "out": n_out})


def conv2d(in_ch, out_ch, k, stride=1):
    return LayerSpec("conv2d", {"in_ch": in_ch, "out_ch": out_ch, "k": k, "stride": stride})


def maxpool2d(k=2):
    return LayerSpec("maxpool2d", {"k": k})


def relu():
    return LayerSpec("relu")


def dropout(p):
    return LayerSpec("dropout", {"p": p})


def linear():
    return LayerSpec("linear")


def _out_shape(spec: LayerSpec, shape: tuple) -> tuple:
    a = spec.args
    if spec.kind == "dense":
        if int(np.prod(shape)) != a["in"]:
            raise ShapeError(f"dense expects {a['in']} inputs, got shape {shape}")
        return (a["out"],)
    if spec.kind == "conv2d":
        if len(shape) != 3 or shape[0] != a["in_ch"]:
            raise ShapeError(f"conv2d expects {a['in_ch']} channels, got shape {shape}")
        k, s = a["k"], a.get("stride", 1)
        oh, ow = (shape[1] - k) // s + 1, (shape[2] - k) // s + 1
        if oh <= 0 or ow <= 0:
            raise ShapeError(f"conv2d kernel {k} larger than input {shape}")
        return (a["out_ch"], oh, ow)
    if spec.kind == "maxpool2d":
        if len(shape) != 3 or shape[1] < a["k"] or shape[2] < a["k"]:
            raise ShapeError(f"maxpool2d cannot pool shape {shape}")
        return (shape[0], shape[1] // a["k"], shape[2] // a["k"])
    return shape


class Network:
    """Feed-forward stack of layers with its own seeded generator."""

    def __init__(self, specs, input_shape, seed=0, dtype=np.float32):
        self.specs = [s if isinstance(s, LayerSpec) else LayerSpec.from_json(s) for s in specs]
        self.input_shape = tuple(int(d) for d in input_shape)
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        self.rng = np.random.default_rng(self.seed)
        self.shapes = [self.input_shape]
        for spec in self.specs:
            self.shapes.append(_out_shape(spec, self.shapes[-1]))
        self.params = []  # per layer: list of arrays (possibly empty)
        for spec in self.specs:
            self.params.append(self._init(spec))

    def _init(self, spec):
        a = spec.args
        if spec.kind == "dense":
            fan_in, fan_out, wshape = a["in"], a["out"], (a["in"], a["out"])
            bshape = (a["out"],)
        elif spec.kind == "conv2d":
            k = a["k"]
            fan_in, fan_out = a["in_ch"] * k * k, a["out_ch"] * k * k
            wshape, bshape = (a["out_ch"], a["in_ch"], k, k), (a["out_ch"],)
        else:
            return []
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        w = self.rng.uniform(-lim, lim, wshape).astype(self.dtype)
        return [w, np.zeros(bshape, dtype=self.dtype)]

    @property
    def output_shape(self):
        return self.shapes[-1]

    def parameters(self):
        return [p for layer in self.params for p in layer]

    def set_parameters(self, flat):
        it = iter(flat)
        self.params = [[np.asarray(next(it), dtype=self.dtype) for _ in layer] for layer in self.params]

    def copy(self):
        other = Network(self.specs, self.input_shape, self.seed, self.dtype)
        other.params = [[p.copy() for p in layer] for layer in self.params]
        other.rng = np.random.default_rng()
        other.rng.bit_generator.state = self.rng.bit_generator.state
        return other

    def _check_input(self, x):
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != self.input_shape:
            if x.shape == self.input_shape:
                x = x[None]
            else:
                raise ShapeError(f"network expects input {self.input_shape}, got {x.shape}")
        return x

    def _forward(self, x, train_mode):
        caches = []
        for spec, params in zip(self.specs, self.params):
            x, cache = _FORWARD[spec.kind](x, params, spec.args, train_mode, self.rng)
            caches.append(cache)
        return x, caches

    def forward(self, x, train_mode=False):
        return self._forward(self._check_input(x), train_mode)[0]

    __call__ = forward

    def backward(self, x, target, train_mode=False):
        """Mean-over-batch squared error and gradients for every parameter tensor."""
        x = self._check_input(x)
        target = np.asarray(target, dtype=self.dtype)
        y, caches = self._forward(x, train_mode)
        if target.shape != y.shape:
            target = target.reshape(y.shape)
        n = x.shape[0]
        diff = y - target
        loss = float(np.sum(diff.astype(np.float64) ** 2) / n)
        dy = (2.0 / n) * diff
        grads = [None] * len(self.specs)
        for i in range(len(self.specs) - 1, -1, -1):
            spec = self.specs[i]
            if i == 0 and spec.kind == "conv2d":
                dy, grads[i] = _conv_bwd(dy, self.params[i], spec.args, caches[i], need_dx=False)
            else:
                dy, grads[i] = _BACKWARD[spec.kind](dy, self.params[i], spec.args, caches[i])
        return loss, [g for layer in grads for g in layer]

    def save(self, path, extra=None):
        header = {
            "layers": [s.to_json() for s in self.specs],
            "input_shape": list(self.input_shape),
            "seed": self.seed,
        }
        if extra:
            header["extra"] = extra
        blobs = {f"p{i}": p for i, p in enumerate(self.parameters())}
        write_container(path, MAGIC, header, blobs)

    @classmethod
    def load(cls, path):
        header, blobs = read_container(path, MAGIC)
        net = cls(header["layers"], header["input_shape"], header["seed"])
        net.set_parameters([blobs[f"p{i}"] for i in range(len(blobs))])
        net.extra = header.get("extra", {})
        return net


# ---- layer kernels: forward(x, params, args, train, rng) -> (y, cache); backward(dy, params, args, cache) -> (dx, grads)

def _dense_fwd(x, params, a, train, rng):
    w, b = params
    x2 = x.reshape(x.shape[0], -1)
    return x2 @ w + b, (x.shape, x2)


def _dense_bwd(dy, params, a, cache):
    w, _ = params
    shape, x2 = cache
    return (dy @ w.T).reshape(shape), [x2.T @ dy, dy.sum(axis=0)]


def _im2col(x, k, s, oh, ow):
    # Rows ordered (a, b, c); columns ordered (n, i, j).
    n, c = x.shape[:2]
    cols = np.empty((k, k, c, n, oh, ow), dtype=x.dtype)
    for a in range(k):
        for b in range(k):
            cols[a, b] = x[:, :, a:a + s * (oh - 1) + 1:s, b:b + s * (ow - 1) + 1:s].transpose(1, 0, 2, 3)
    return cols.reshape(k * k * c, n * oh * ow)


def _conv_fwd(x, params, a, train, rng):
    w, b = params
    k, s = a["k"], a.get("stride", 1)
    n, c, h, wd = x.shape
    oh, ow = (h - k) // s + 1, (wd - k) // s + 1
    cols = _im2col(x, k, s, oh, ow)
    wr = w.transpose(0, 2, 3, 1).reshape(w.shape[0], -1)
    y = (cols.T @ wr.T).reshape(n, oh, ow, w.shape[0]).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(y) + b[None, :, None, None], (x.shape, cols)


def _conv_bwd(dy, params, a, cache, need_dx=True):
    w, _ = params
    k, s = a["k"], a.get("stride", 1)
    shape, cols = cache
    n, o, oh, ow = dy.shape
    c = shape[1]
    dyt = dy.transpose(0, 2, 3, 1).reshape(-1, o)
    dw = (cols @ dyt).reshape(k, k, c, o).transpose(3, 2, 0, 1)
    db = dy.sum(axis=(0, 2, 3))
    grads = [np.ascontiguousarray(dw), db]
    if not need_dx:
        return None, grads
    wr = w.transpose(0, 2, 3, 1).reshape(o, -1)
    dcols = (wr.T @ dy.transpose(1, 0, 2, 3).reshape(o, -1)).reshape(k, k, c, n, oh, ow)
    dx = np.zeros((c, n) + tuple(shape[2:]), dtype=dy.dtype)
    for i in range(k):
        for j in range(k):
            dx[:, :, i:i + s * (oh - 1) + 1:s, j:j + s * (ow - 1) + 1:s] += dcols[i, j]
    dx = dx.transpose(1, 0, 2, 3)
    return dx, grads


def _pool_fwd(x, params, a, train, rng):
    k = a["k"]
    n, c, h, w = x.shape
    oh, ow = h // k, w // k
    best = x[:, :, 0:oh * k:k, 0:ow * k:k].copy()
    arg = np.zeros(best.shape, dtype=np.int8)
    for idx in range(1, k * k):
        i, j = divmod(idx, k)
        cand = x[:, :, i:oh * k:k, j:ow * k:k]
        better = cand > best  # ties stay with the first position
        np.copyto(best, cand, where=better)
        arg[better] = idx
    return best, (x.shape, arg)


def _pool_bwd(dy, params, a, cache):
    k = a["k"]
    shape, arg = cache
    oh, ow = dy.shape[2:]
    dx = np.zeros(shape, dtype=dy.dtype)
    for idx in range(k * k):
        i, j = divmod(idx, k)
        dx[:, :, i:oh * k:k, j:ow * k:k] = dy * (arg == idx)
    return dx, []


def _relu_fwd(x, params, a, train, rng):
    mask = x > 0
    return x * mask, mask


def _relu_bwd(dy, params, a, mask):
    return dy * mask, []


def _dropout_fwd(x, params, a, train, rng):
    p = float(a["p"])
    if not train or p == 0.0:
        return x, None
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1.0 - p)
    return x * mask, mask


def _dropout_bwd(dy, params, a, mask):
    return (dy if mask is None else dy * mask), []


def _identity_fwd(x, params, a, train, rng):
    return x, None


def _identity_bwd(dy, params, a, cache):
    return dy, []


_FORWARD = {"dense": _dense_fwd, "conv2d": _conv_fwd, "maxpool2d": _pool_fwd,
            "relu": _relu_fwd, "dropout": _dropout_fwd, "linear": _identity_fwd}
_BACKWARD = {"dense": _dense_bwd, "conv2d": _conv_bwd, "maxpool2d": _pool_bwd,
             "relu": _relu_bwd, "dropout": _dropout_bwd, "linear": _identity_bwd}


def forward(net: Network, x, train_mode=False):
    return net.forward(x, train_mode)


def backward(net: Network, x, target, train_mode=False):
    return net.backward(x, target, train_mode)


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = None
    v: list = None


def adam_step(net: Network, grads, state: AdamState):
    """Bias-corrected ADAM update, in place on ``net``; returns ``(net, state)``."""
    params = net.parameters()
    if len(grads) != len(params):
        raise ShapeError("gradient list does not match the parameter list")
    if state.m is None:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        p -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)
    return net, state


def train(net: Network, inputs, targets, epochs: int, batch: int, state: AdamState = None,
          train_mode=True):
    """Mini-batch ADAM on mean squared error. Returns the per-epoch mean loss trace."""
    inputs = np.asarray(inputs)
    targets = np.asarray(targets)
    n = len(inputs)
    if n == 0:
        raise ValueError("empty training set")
    if len(targets) != n:
        raise ShapeError("inputs and targets differ in length")
    state = state or AdamState()
    trace = []
    for epoch in range(epochs):
        order = net.rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            loss, grads = net.backward(inputs[idx], targets[idx], train_mode=train_mode)
            adam_step(net, grads, state)
            total += loss * len(idx)
        trace.append(total / n)
        log.debug("epoch %d loss %.6g", epoch, trace[-1])
    return net, trace
