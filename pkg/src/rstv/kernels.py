"""Exact chi-square kernels and the random feature maps that approximate them.

The exponential-chi2 map is built in two stages. A homogeneous kernel map
turns each histogram bin into ``2 * order + 1`` features whose inner products
approximate the additive chi2 kernel ``sum 2 x y / (x + y)``. Since that
kernel gives ``k(x, x) = sum x``, squared distances in the mapped space
approximate ``chi2(x, y) = sum (x - y)^2 / (x + y)``, so a Gaussian random
Fourier map on top approximates ``exp(-gamma * chi2(x, y))``.
"""
from __future__ import annotations

import hashlib

import numpy as np

from rstv.fileio import read_container, write_container

MAGIC = b"RSTVEMBD"


def _check_hist(x, y=None):
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0):
        raise ValueError("histograms must be non-negative")
    if y is None:
        return x
    y = np.asarray(y, dtype=np.float64)
    if np.any(y < 0):
        raise ValueError("histograms must be non-negative")
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    return x, y


def chi2_distance(x, y) -> float:
    x, y = _check_hist(x, y)
    s = x + y
    d = np.divide((x - y) ** 2, s, out=np.zeros_like(s), where=s > 0)
    return float(d.sum())


def exp_chi2_kernel(x, y, gamma: float) -> float:
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return float(np.exp(-gamma * chi2_distance(x, y)))


def l1_normalize(X):
    X = np.asarray(X, dtype=np.float64)
    s = X.sum(axis=-1, keepdims=True)
    return np.divide(X, s, out=np.zeros_like(X), where=s > 0)


def homogeneous_chi2_map(X, order: int = 2, period: float = 0.6) -> np.ndarray:
    """Closed-form spectral samples of the chi2 kernel at frequencies ``j * period``.

    Output layout per input bin: ``[j=0, cos j=1, sin j=1, ..., cos j=order, sin j=order]``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, d = X.shape
    out = np.zeros((n, d, 2 * order + 1))
    pos = X > 0
    logx = np.log(X, out=np.zeros_like(X), where=pos)
    out[..., 0] = np.sqrt(X * period)
    for j in range(1, order + 1):
        lam = j * period
        amp = np.sqrt(2.0 * X * period / np.cosh(np.pi * lam))
        out[..., 2 * j - 1] = amp * np.cos(lam * logx)
        out[..., 2 * j] = amp * np.sin(lam * logx)
    return out.reshape(n, d * (2 * order + 1))


class ExpChi2Embedding:
    """Random Fourier features of ``exp(-gamma * chi2)`` on L1-normalized histograms.

    Gaussian frequencies are regenerated block by block from ``seed`` rather
    than stored, so a 15000-wide map over 3D HOG inputs stays cheap to save.
    """

    block = 1000

    def __init__(self, input_dim, dim=15000, order=2, period=0.6, gamma=1.0, seed=0,
                 normalize=True, cache_limit_bytes=600_000_000):
        if gamma <= 0:
            raise ValueError("gamma must be positive")
        self.input_dim = int(input_dim)
        self.dim = int(dim)
        self.order = int(order)
        self.period = float(period)
        self.gamma = float(gamma)
        self.seed = int(seed)
        self.normalize = bool(normalize)
        self.mapped_dim = self.input_dim * (2 * self.order + 1)
        self.phase = np.random.default_rng([self.seed, 0]).uniform(0, 2 * np.pi, self.dim)
        self._cache = None
        if self.mapped_dim * self.dim * 4 <= cache_limit_bytes:
            self._cache = [self._frequency_block(b) for b in range(self._n_blocks)]

    @property
    def _n_blocks(self):
        return -(-self.dim // self.block)

    def _frequency_block(self, b):
        cols = min(self.block, self.dim - b * self.block)
        rng = np.random.default_rng([self.seed, 1, b])
        return rng.standard_normal((self.mapped_dim, cols), dtype=np.float32)

    def _blocks(self):
        for b in range(self._n_blocks):
            yield self._cache[b] if self._cache is not None else self._frequency_block(b)

    def frequency_digest(self) -> str:
        h = hashlib.sha256()
        for blk in self._blocks():
            h.update(blk.tobytes())
        return h.hexdigest()

    def homogeneous(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.input_dim:
            raise ValueError(f"expected {self.input_dim}-dim histograms, got {X.shape[1]}")
        if np.any(X < 0):
            raise ValueError("histograms must be non-negative")
        if self.normalize:
            X = l1_normalize(X)
        return homogeneous_chi2_map(X, self.order, self.period)

    def embed(self, X) -> np.ndarray:
        single = np.asarray(X).ndim == 1
        psi = self.homogeneous(X).astype(np.float32)
        scale = np.sqrt(2.0 * self.gamma)
        proj = np.concatenate([psi @ blk for blk in self._blocks()], axis=1).astype(np.float64)
        out = np.sqrt(2.0 / self.dim) * np.cos(scale * proj + self.phase)
        return out[0] if single else out

    __call__ = embed

    def header(self):
        return {"kind": "exp_chi2", "input_dim": self.input_dim, "dim": self.dim,
                "order": self.order, "period": self.period, "gamma": self.gamma,
                "seed": self.seed, "normalize": self.normalize, "block": self.block,
                "digest": self.frequency_digest()}

    def blobs(self):
        return {"phase": self.phase}


class RBFOutputEmbedding:
    """Random Fourier features of ``exp(-gamma * ||y - y'||^2)``."""

    def __init__(self, input_dim, dim=4000, gamma=1.0, seed=0):
        if gamma <= 0:
            raise ValueError("gamma must be positive")
        self.input_dim = int(input_dim)
        self.dim = int(dim)
        self.gamma = float(gamma)
        self.seed = int(seed)
        rng = np.random.default_rng([self.seed, 2])
        # N(0, 2 gamma I) is the spectral density of exp(-gamma ||d||^2).
        self.omega = rng.normal(0.0, np.sqrt(2.0 * self.gamma), (self.input_dim, self.dim))
        self.phase = rng.uniform(0, 2 * np.pi, self.dim)

    def embed(self, Y) -> np.ndarray:
        Y = np.asarray(Y, dtype=np.float64)
        single = Y.ndim == 1
        Y = np.atleast_2d(Y).reshape(-1, self.input_dim)
        out = np.sqrt(2.0 / self.dim) * np.cos(Y @ self.omega + self.phase)
        return out[0] if single else out

    __call__ = embed

    def jacobian(self, y) -> np.ndarray:
        """``dim x input_dim`` derivative of :meth:`embed` at a single point."""
        y = np.asarray(y, dtype=np.float64).reshape(self.input_dim)
        s = -np.sqrt(2.0 / self.dim) * np.sin(y @ self.omega + self.phase)
        return s[:, None] * self.omega.T

    def header(self):
        return {"kind": "rbf", "input_dim": self.input_dim, "dim": self.dim,
                "gamma": self.gamma, "seed": self.seed}

    def blobs(self):
        return {"omega": self.omega, "phase": self.phase}


class IdentityEmbedding:
    """Output 'embedding' that returns the pose itself; reduces KDE to KRR."""

    def __init__(self, input_dim):
        self.input_dim = self.dim = int(input_dim)

    def embed(self, Y):
        return np.asarray(Y, dtype=np.float64)

    __call__ = embed

    def jacobian(self, y):
        return np.eye(self.input_dim)

    def header(self):
        return {"kind": "identity", "input_dim": self.input_dim}

    def blobs(self):
        return {}


def embed_input(e: ExpChi2Embedding, x):
    return e.embed(x)


def embed_output(e: RBFOutputEmbedding, y):
    return e.embed(y)


def _pairs(n, n_pairs, seed):
    rng = np.random.default_rng(seed)
    i = rng.integers(0, n, n_pairs)
    j = rng.integers(0, n - 1, n_pairs)
    j = j + (j >= i)
    return i, j


def median_chi2_gamma(X, n_pairs=1000, seed=0, normalize=True) -> float:
    """1 / median chi2 distance over random distinct pairs."""
    X = np.asarray(X, dtype=np.float64)
    if len(X) < 2:
        return 1.0
    if normalize:
        X = l1_normalize(X)
    i, j = _pairs(len(X), n_pairs, seed)
    a, b = X[i], X[j]
    s = a + b
    d = np.divide((a - b) ** 2, s, out=np.zeros_like(s), where=s > 0).sum(axis=1)
    med = float(np.median(d))
    return 1.0 / med if med > 0 else 1.0


def median_rbf_gamma(Y, n_pairs=1000, seed=0) -> float:
    Y = np.asarray(Y, dtype=np.float64).reshape(len(Y), -1)
    if len(Y) < 2:
        return 1.0
    i, j = _pairs(len(Y), n_pairs, seed)
    med = float(np.median(((Y[i] - Y[j]) ** 2).sum(axis=1)))
    return 1.0 / med if med > 0 else 1.0


def save_embedding(path, emb) -> None:
    write_container(path, MAGIC, emb.header(), emb.blobs())


def embedding_from_parts(header: dict, blobs: dict):
    kind = header["kind"]
    if kind == "exp_chi2":
        emb = ExpChi2Embedding(header["input_dim"], header["dim"], header["order"],
                               header["period"], header["gamma"], header["seed"],
                               header["normalize"])
        if not np.allclose(emb.phase, blobs["phase"], rtol=0, atol=1e-5):
            raise ValueError("saved phases do not match the seed")
        if emb.frequency_digest() != header["digest"]:
            raise ValueError("regenerated frequencies do not match the saved digest")
        return emb
    if kind == "rbf":
        emb = RBFOutputEmbedding(header["input_dim"], header["dim"], header["gamma"], header["seed"])
        if not (np.allclose(emb.omega, blobs["omega"], rtol=1e-6, atol=1e-6)
                and np.allclose(emb.phase, blobs["phase"], rtol=0, atol=1e-5)):
            raise ValueError("saved frequencies do not match the seed")
        return emb
    if kind == "identity":
        return IdentityEmbedding(header["input_dim"])
    raise ValueError(f"unknown embedding kind {kind!r}")


def load_embedding(path):
    header, blobs = read_container(path, MAGIC)
    return embedding_from_parts(header, blobs)
