"""Pose regressors: kernel ridge regression, kernel dependency estimation, deep network."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from rstv import nnet
from rstv.core import Pose3D, root_relativize
from rstv.fileio import read_container, write_container
from rstv.kernels import IdentityEmbedding, embedding_from_parts

log = logging.getLogger(__name__)

MAGIC = b"RSTVPOSE"


def _finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("inputs contain non-finite values")


def ridge_solve(Phi, Y, lam=1.0):
    """Minimizer of ``sum ||Y_i - W^T phi_i||^2 + lam ||W||^2`` with ``W`` of shape ``m x k``.

    Solves the primal normal equations when ``m <= N`` and the equivalent
    dual system ``W = Phi^T (Phi Phi^T + lam I)^-1 Y`` otherwise; both by
    Cholesky factorization.
    """
    Phi = np.asarray(Phi, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    _finite(Phi, Y)
    if lam <= 0:
        raise ValueError("ridge coefficient must be positive")
    n, m = Phi.shape
    if len(Y) != n:
        raise ValueError("Phi and Y differ in row count")
    if m <= n:
        A = Phi.T @ Phi
        A[np.diag_indices(m)] += lam
        return cho_solve(cho_factor(A), Phi.T @ Y)
    K = Phi @ Phi.T
    K[np.diag_indices(n)] += lam
    return Phi.T @ cho_solve(cho_factor(K), Y)


def _poses(flat, root_index=0):
    flat = np.atleast_2d(flat)
    return [root_relativize(row.reshape(-1, 3), root_index) for row in flat]


@dataclass
class KRRModel:
    W: np.ndarray
    lam: float = 1.0
    embedding: object = None

    def predict_raw(self, Phi):
        Phi = np.asarray(Phi, dtype=np.float64)
        if Phi.shape[-1] != self.W.shape[0]:
            raise ValueError(f"embedding dim {Phi.shape[-1]} != model dim {self.W.shape[0]}")
        return Phi @ self.W

    def predict(self, Phi):
        """Root-relative predictions, ``n x D x 3``."""
        raw = np.atleast_2d(self.predict_raw(Phi))
        out = raw.reshape(len(raw), -1, 3)
        return out - out[:, :1]


def krr_fit(Phi, Y, lam=1.0, embedding=None) -> KRRModel:
    return KRRModel(ridge_solve(Phi, Y, lam), lam, embedding)


def krr_predict(model: KRRModel, phi) -> Pose3D:
    return _poses(model.predict_raw(phi))[0]


@dataclass
class PreimageResult:
    pose: Pose3D
    objective: float
    init_objective: float
    steps: int
    failed: bool = False


@dataclass
class KDEModel:
    W: np.ndarray
    input_embedding: object
    output_embedding: object
    lam: float = 1.0
    steps: int = 200
    init_model: Optional[KRRModel] = None  # supplies pre-image starting points

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("pre-image needs at least one step")


def kde_fit(Phi_Z, Phi_Y, lam=1.0, input_embedding=None, output_embedding=None, steps=200,
            init_model=None) -> KDEModel:
    return KDEModel(ridge_solve(Phi_Z, Phi_Y, lam), input_embedding, output_embedding, lam, steps,
                    init_model)


def preimage_objective(target, emb, y):
    r = np.asarray(target) - emb.embed(np.asarray(y, dtype=np.float64))
    return float(r @ r)


def preimage_gradient(target, emb, y):
    y = np.asarray(y, dtype=np.float64).ravel()
    r = np.asarray(target) - emb.embed(y)
    return -2.0 * emb.jacobian(y).T @ r


def kde_preimage(model: KDEModel, phi, krr_init, steps: Optional[int] = None,
                 root_index=0) -> PreimageResult:
    """Gradient descent with backtracking on ``||W^T phi - Phi_Y(Y)||^2`` from ``krr_init``."""
    steps = model.steps if steps is None else steps
    emb = model.output_embedding
    init = krr_init.coords if isinstance(krr_init, Pose3D) else np.asarray(krr_init, dtype=np.float64)
    init = init.reshape(-1).astype(np.float64)
    if not np.all(np.isfinite(init)):
        raise ValueError("pre-image initialization must be finite")
    target = np.asarray(phi, dtype=np.float64) @ model.W
    free = np.ones_like(init)
    free[3 * root_index: 3 * root_index + 3] = 0.0  # root stays at the origin

    y = init.copy()
    f = f0 = preimage_objective(target, emb, y)
    if not np.isfinite(f):
        log.warning("non-finite pre-image objective at initialization")
        return PreimageResult(_poses(init, root_index)[0], f, f, 0, failed=True)
    jac = emb.jacobian(y)
    curv = 2.0 * float(np.mean(np.sum(jac ** 2, axis=0)))
    alpha = 1.0 / curv if curv > 0 else 1.0
    taken = 0
    for _ in range(steps):
        g = preimage_gradient(target, emb, y) * free
        gg = float(g @ g)
        if gg == 0.0:
            break
        while True:
            cand = y - alpha * g
            fc = preimage_objective(target, emb, cand)
            if np.isfinite(fc) and fc <= f - 1e-4 * alpha * gg:
                y, f = cand, fc
                alpha *= 2.0
                taken += 1
                break
            alpha *= 0.5
            if alpha < 1e-20:
                break
        if alpha < 1e-20:
            break
    return PreimageResult(_poses(y, root_index)[0], f, f0, taken)


def kde_predict(model: KDEModel, phi, krr_init, steps: Optional[int] = None) -> Pose3D:
    return kde_preimage(model, phi, krr_init, steps).pose


@dataclass
class DNHyper:
    epochs: int = 50
    batch: int = 64
    lr: float = 0.001
    dropout: float = 0.5
    hidden: int = 3000


def dn_architecture(in_dim, out_dim, hidden=3000, p=0.5):
    return [
        nnet.dense(in_dim, hidden), nnet.relu(), nnet.dropout(p),
        nnet.dense(hidden, hidden), nnet.relu(), nnet.dropout(p),
        nnet.dense(hidden, out_dim), nnet.linear(),
    ]


@dataclass
class DNModel:
    net: nnet.Network
    y_mean: np.ndarray
    y_scale: np.ndarray
    hyper: DNHyper = field(default_factory=DNHyper)
    loss_trace: list = field(default_factory=list)
    input_embedding: object = None  # set when the network consumes embedded descriptors
    x_mean: Optional[np.ndarray] = None
    x_scale: Optional[np.ndarray] = None

    def standardize(self, X):
        X = np.asarray(X, dtype=np.float32)
        if self.x_mean is None:
            return X
        return ((X - self.x_mean) / self.x_scale).astype(np.float32)

    def predict(self, X):
        X = np.asarray(X, dtype=np.float32)
        if X.ndim == 1:
            X = X[None]
        if X.shape[1] != self.net.input_shape[0]:
            raise ValueError(f"descriptor dim {X.shape[1]} != network input {self.net.input_shape[0]}")
        out = self.net.forward(self.standardize(X), train_mode=False).astype(np.float64) * self.y_scale + self.y_mean
        out = out.reshape(len(X), -1, 3)
        return out - out[:, :1]


def dn_fit(descriptors, poses, hyper: DNHyper = DNHyper(), seed=0, standardize=True) -> DNModel:
    """Fit the fully connected regressor on z-scored inputs and targets.

    Descriptor entries are non-negative and share a large common offset;
    centering them per feature is what lets ADAM make progress within the
    default 50 epochs. Near-constant features get a floor on their scale.
    """
    X = np.asarray(descriptors, dtype=np.float32)
    Y = np.asarray(poses, dtype=np.float64).reshape(len(poses), -1)
    if len(X) == 0:
        raise ValueError("empty training set")
    if len(X) != len(Y):
        raise ValueError("descriptor and pose counts differ")
    y_mean = Y.mean(axis=0)
    y_scale = Y.std(axis=0)
    y_scale[y_scale < 1e-9] = 1.0
    x_mean = x_scale = None
    if standardize:
        x_mean = X.mean(axis=0)
        x_scale = np.maximum(X.std(axis=0), 1e-3).astype(np.float32)
        X = (X - x_mean) / x_scale
    net = nnet.Network(dn_architecture(X.shape[1], Y.shape[1], hyper.hidden, hyper.dropout),
                       (X.shape[1],), seed=seed)
    state = nnet.AdamState(lr=hyper.lr)
    _, trace = nnet.train(net, X, ((Y - y_mean) / y_scale).astype(np.float32),
                          hyper.epochs, hyper.batch, state)
    return DNModel(net, y_mean, y_scale, hyper, trace, x_mean=x_mean, x_scale=x_scale)


def dn_predict(model: DNModel, descriptor) -> Pose3D:
    return Pose3D(model.predict(descriptor)[0])


# ---- persistence

def _emb_parts(prefix, emb):
    if emb is None:
        return None, {}
    return emb.header(), {f"{prefix}.{k}": v for k, v in emb.blobs().items()}


def _emb_load(prefix, header, blobs):
    if header is None:
        return None
    own = {k.split(".", 1)[1]: v for k, v in blobs.items() if k.startswith(prefix + ".")}
    return embedding_from_parts(header, own)


def save_model(path, model, extra: Optional[dict] = None) -> None:
    header = {"extra": extra or {}}
    if isinstance(model, KRRModel):
        eh, eb = _emb_parts("in", model.embedding)
        header.update(kind="krr", dims=list(model.W.shape), lam=model.lam, input_embedding=eh)
        blobs = {"W": model.W, **eb}
    elif isinstance(model, KDEModel):
        ih, ib = _emb_parts("in", model.input_embedding)
        oh, ob = _emb_parts("out", model.output_embedding)
        header.update(kind="kde", dims=list(model.W.shape), lam=model.lam, steps=model.steps,
                      input_embedding=ih, output_embedding=oh,
                      init_lam=model.init_model.lam if model.init_model else None)
        blobs = {"W": model.W, **ib, **ob}
        if model.init_model is not None:
            blobs["init_W"] = model.init_model.W
    elif isinstance(model, DNModel):
        header.update(kind="dn", dims=[model.net.input_shape[0], int(model.y_mean.size)],
                      hyper=asdict(model.hyper), seed=model.net.seed,
                      layers=[s.to_json() for s in model.net.specs], loss_trace=model.loss_trace)
        eh, eb = _emb_parts("in", model.input_embedding)
        header["input_embedding"] = eh
        blobs = {"y_mean": model.y_mean, "y_scale": model.y_scale, **eb}
        if model.x_mean is not None:
            blobs.update(x_mean=model.x_mean, x_scale=model.x_scale)
        blobs.update({f"p{i}": p for i, p in enumerate(model.net.parameters())})
    else:
        raise TypeError(f"cannot save {type(model).__name__}")
    write_container(path, MAGIC, header, blobs)


def load_model(path):
    header, blobs = read_container(path, MAGIC)
    kind = header["kind"]
    if kind == "krr":
        return KRRModel(blobs["W"].astype(np.float64), header["lam"],
                        _emb_load("in", header["input_embedding"], blobs))
    if kind == "kde":
        emb_in = _emb_load("in", header["input_embedding"], blobs)
        init = None
        if "init_W" in blobs:
            init = KRRModel(blobs["init_W"].astype(np.float64), header["init_lam"], emb_in)
        return KDEModel(blobs["W"].astype(np.float64), emb_in,
                        _emb_load("out", header["output_embedding"], blobs),
                        header["lam"], header["steps"], init)
    if kind == "dn":
        net = nnet.Network(header["layers"], (header["dims"][0],), header["seed"])
        n_params = sum(1 for k in blobs if k[0] == "p" and k[1:].isdigit())
        net.set_parameters([blobs[f"p{i}"] for i in range(n_params)])
        return DNModel(net, blobs["y_mean"].astype(np.float64), blobs["y_scale"].astype(np.float64),
                       DNHyper(**header["hyper"]), header["loss_trace"],
                       _emb_load("in", header.get("input_embedding"), blobs),
                       blobs.get("x_mean"), blobs.get("x_scale"))
    raise ValueError(f"unknown model kind {kind!r}")


__all__ = [
    "DNHyper", "DNModel", "IdentityEmbedding", "KDEModel", "KRRModel", "PreimageResult",
    "dn_fit", "dn_predict", "kde_fit", "kde_predict", "kde_preimage", "krr_fit", "krr_predict",
    "load_model", "preimage_gradient", "preimage_objective", "ridge_solve", "save_model",
]
