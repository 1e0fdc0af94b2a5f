"""End-to-end glue: configuration, per-sequence volumes and descriptors, pose regressor wrappers."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from rstv.core import crop_patch, extract_blocks
from rstv.hog3d import Hog3DConfig, descriptor
from rstv.kernels import (
    ExpChi2Embedding,
    RBFOutputEmbedding,
    median_chi2_gamma,
    median_rbf_gamma,
)
from rstv.motioncomp import CompensationConfig, compensate
from rstv.regress import DNHyper, dn_fit, kde_fit, kde_preimage, krr_fit, load_model, save_model

log = logging.getLogger(__name__)

PAPER_DIMS = (15000, 4000)


@dataclass(frozen=True)
class PipelineConfig:
    T: int = 24
    patch: int = 64
    hog: Hog3DConfig = field(default_factory=Hog3DConfig)
    comp: CompensationConfig = field(default_factory=CompensationConfig)
    regressor: str = "krr"
    input_embed_dim: int = 2000
    output_embed_dim: int = 800
    lam: float = 1.0
    kde_steps: int = 200
    dn: DNHyper = field(default_factory=DNHyper)
    dn_input: str = "raw"
    jitter: float = 12.0
    shift_samples_per_frame: int = 10
    shift_epochs: int = 6
    seed: int = 0

    def __post_init__(self):
        if self.patch % max(self.hog.spatial_levels):
            raise ValueError("patch size must be divisible by the largest spatial grid")
        if self.T % self.hog.temporal_cell:
            raise ValueError("temporal cell must divide T")
        if self.comp.patch != self.patch:
            object.__setattr__(self, "comp", replace(self.comp, patch=self.patch))
        if self.regressor not in ("krr", "kde", "dn"):
            raise ValueError(f"unknown regressor {self.regressor!r}")
        if self.dn_input not in ("raw", "embedded"):
            raise ValueError("dn_input must be 'raw' or 'embedded'")

    def with_paper_dims(self) -> "PipelineConfig":
        return replace(self, input_embed_dim=PAPER_DIMS[0], output_embed_dim=PAPER_DIMS[1])

    def to_json(self) -> dict:
        d = asdict(self)
        d["hog"]["spatial_levels"] = list(self.hog.spatial_levels)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "hog" in d:
            h = dict(d["hog"])
            if "spatial_levels" in h:
                h["spatial_levels"] = tuple(h["spatial_levels"])
            d["hog"] = Hog3DConfig(**h)
        if "comp" in d:
            d["comp"] = CompensationConfig(**d["comp"])
        if "dn" in d:
            d["dn"] = DNHyper(**d["dn"])
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def sequence_descriptors(frames, boxes, T: int, hog: Hog3DConfig, patch: int = 64):
    """Descriptors for every complete block. Returns ``(matrix, blocks)``."""
    frames = frames.frame_stack() if hasattr(frames, "frame_stack") else frames
    blocks = extract_blocks(len(frames), T)
    crops = np.stack([crop_patch(f, b, patch, patch) for f, b in zip(frames, boxes)])
    rows = [descriptor(crops[v.first:v.last + 1], hog, v).values for v in blocks]
    return np.asarray(rows, dtype=np.float32), blocks


def variant_boxes(manifest, variant: str, cfg: PipelineConfig, coarse=None, fine=None):
    """Boxes used to build volumes: the given ones (STV) or motion-compensated ones (RSTV)."""
    if manifest.boxes is None:
        raise ValueError("manifest has no boxes")
    if variant == "STV":
        return list(manifest.boxes)
    if variant == "RSTV":
        if coarse is None or fine is None:
            raise ValueError("RSTV needs coarse and fine shift regressors")
        return compensate(manifest, manifest.boxes[0], cfg.comp, coarse, fine)
    raise ValueError(f"unknown variant {variant!r}")


class PoseRegressor:
    """One fitted pose regressor (KRR, KDE or DN) behind a batch ``predict``."""

    def __init__(self, kind, model, cfg: PipelineConfig):
        self.kind = kind
        self.model = model
        self.cfg = cfg

    @classmethod
    def fit(cls, X, Y, cfg: PipelineConfig, kind=None) -> "PoseRegressor":
        kind = kind or cfg.regressor
        X = np.asarray(X, dtype=np.float64)
        Y = np.asarray(Y, dtype=np.float64).reshape(len(Y), -1)
        seed = cfg.seed
        if kind == "dn" and cfg.dn_input == "raw":
            return cls(kind, dn_fit(X, Y, cfg.dn, seed=seed), cfg)
        emb_in = ExpChi2Embedding(X.shape[1], cfg.input_embed_dim, gamma=median_chi2_gamma(X, seed=seed),
                                  seed=seed)
        Phi = emb_in.embed(X)
        if kind == "dn":
            model = dn_fit(Phi, Y, cfg.dn, seed=seed)
            model.input_embedding = emb_in
            return cls(kind, model, cfg)
        krr = krr_fit(Phi, Y, cfg.lam, emb_in)
        if kind == "krr":
            return cls(kind, krr, cfg)
        emb_out = RBFOutputEmbedding(Y.shape[1], cfg.output_embed_dim, gamma=median_rbf_gamma(Y, seed=seed),
                                     seed=seed)
        kde = kde_fit(Phi, emb_out.embed(Y), cfg.lam, emb_in, emb_out, cfg.kde_steps, init_model=krr)
        return cls(kind, kde, cfg)

    def predict(self, X) -> np.ndarray:
        """Root-relative poses, ``n x D x 3``."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.kind == "dn":
            emb = getattr(self.model, "input_embedding", None)
            return self.model.predict(emb.embed(X) if emb is not None else X)
        if self.kind == "krr":
            return self.model.predict(self.model.embedding.embed(X))
        Phi = self.model.input_embedding.embed(X)
        init = self.model.init_model.predict(Phi)
        return np.stack([kde_preimage(self.model, phi, y0).pose.coords for phi, y0 in zip(Phi, init)])

    def save(self, path, extra=None):
        save_model(path, self.model, extra={"pipeline": self.cfg.to_json(), **(extra or {})})

    @classmethod
    def load(cls, path) -> "PoseRegressor":
        from rstv.fileio import read_container
        from rstv.regress import MAGIC

        header, _ = read_container(path, MAGIC)
        cfg = PipelineConfig.from_json(header["extra"]["pipeline"])
        return cls(header["kind"], load_model(path), cfg)


def training_matrix(manifests, boxes_list, cfg: PipelineConfig):
    """Stacked descriptors and center-frame poses over several sequences."""
    Xs, Ys = [], []
    for m, boxes in zip(manifests, boxes_list):
        X, blocks = sequence_descriptors(m, boxes, cfg.T, cfg.hog, cfg.patch)
        poses = m.pose_array()
        Xs.append(X)
        Ys.append(np.stack([poses[b.center] for b in blocks]))
    return np.concatenate(Xs), np.concatenate(Ys)
