"""Pose metrics and the experiment harnesses (motion-compensation ablation, window sweep)."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from rstv.core import Pose3D, SkeletonSpec
from rstv.pipeline import PipelineConfig, PoseRegressor, sequence_descriptors, training_matrix, variant_boxes
from rstv.synthdata import JitterConfig, jitter_boxes

log = logging.getLogger(__name__)


def _coords(p):
    return p.coords if isinstance(p, Pose3D) else np.asarray(p, dtype=np.float64).reshape(-1, 3)


def mpjpe(pred, gt) -> float:
    """Mean Euclidean joint error (mm)."""
    a, b = _coords(pred), _coords(gt)
    if a.shape != b.shape:
        raise ValueError(f"skeleton mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b, axis=1).mean())


@dataclass
class PCPResult:
    limbs: dict  # (a, b) -> bool, skipped limbs absent
    score: float
    skipped: list


def pcp(pred, gt, skeleton: SkeletonSpec, alpha: float = 0.5) -> PCPResult:
    """A limb counts when both endpoint errors are at most ``alpha`` times its true length."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    a, b = _coords(pred), _coords(gt)
    if a.shape != b.shape or a.shape[0] != skeleton.joint_count:
        raise ValueError("pose does not match the skeleton")
    err = np.linalg.norm(a - b, axis=1)
    limbs, skipped = {}, []
    for i, j in skeleton.limbs:
        length = float(np.linalg.norm(b[i] - b[j]))
        if length == 0.0:
            log.warning("zero-length ground-truth limb (%d, %d) skipped", i, j)
            skipped.append((i, j))
            continue
        limbs[(i, j)] = bool(err[i] <= alpha * length and err[j] <= alpha * length)
    score = float(np.mean(list(limbs.values()))) if limbs else float("nan")
    return PCPResult(limbs, score, skipped)


@dataclass
class EvalReport:
    per_frame: list
    centers: list
    mean: float
    std: float
    excluded: int
    pcp_limbs: Optional[dict] = None
    pcp: Optional[float] = None
    config: Optional[dict] = None

    def to_json(self):
        d = asdict(self)
        if self.pcp_limbs is not None:
            d["pcp_limbs"] = {f"{a}-{b}": v for (a, b), v in self.pcp_limbs.items()}
        return d


def report_from_predictions(preds, gts, centers, n_frames, skeleton=None, alpha=0.5, config=None):
    errs = [mpjpe(p, g) for p, g in zip(preds, gts)]
    rep = EvalReport(errs, list(centers), float(np.mean(errs)), float(np.std(errs)),
                     n_frames - len(errs), config=config)
    if skeleton is not None:
        per_limb = {limb: [] for limb in skeleton.limbs}
        for p, g in zip(preds, gts):
            for limb, ok in pcp(p, g, skeleton, alpha).limbs.items():
                per_limb[limb].append(ok)
        rep.pcp_limbs = {k: float(np.mean(v)) for k, v in per_limb.items() if v}
        rep.pcp = float(np.mean([ok for v in per_limb.values() for ok in v]))
    return rep


def evaluate(model, manifest, cfg: PipelineConfig, coarse=None, fine=None, variant="STV",
             skeleton: Optional[SkeletonSpec] = None) -> EvalReport:
    """Volumes -> descriptors -> poses over every complete block; boundary frames excluded.

    ``variant="RSTV"`` motion-compensates the manifest boxes first; ``"STV"``
    uses them as given.
    """
    if manifest.poses is None:
        raise ValueError("manifest has no ground-truth poses")
    boxes = variant_boxes(manifest, variant, cfg, coarse, fine)
    X, blocks = sequence_descriptors(manifest, boxes, cfg.T, cfg.hog, cfg.patch)
    preds = model.predict(X)
    gts = manifest.pose_array()
    centers = [b.center for b in blocks]
    return report_from_predictions(preds, gts[centers], centers, len(manifest), skeleton,
                                   config=cfg.to_json())


def _jittered(manifests, jitter: JitterConfig, offset: int):
    return [jitter_boxes(m, replace(jitter, seed=jitter.seed + offset + k))[0]
            for k, m in enumerate(manifests)]


def ablate_motion(train, test, jitter: JitterConfig, cfg: PipelineConfig, coarse, fine,
                  kinds=("krr",), variants=("STV", "RSTV")) -> list:
    """Train and evaluate each regressor on uncompensated and compensated volumes of the same data."""
    train_j = _jittered(train, jitter, 0)
    test_j = _jittered(test, jitter, 1000)
    rows = []
    for variant in variants:
        tr_boxes = [variant_boxes(m, variant, cfg, coarse, fine) for m in train_j]
        X, Y = training_matrix(train_j, tr_boxes, cfg)
        for kind in kinds:
            model = PoseRegressor.fit(X, Y, cfg, kind)
            errs = []
            for m in test_j:
                errs.extend(evaluate(model, m, cfg, coarse, fine, variant).per_frame)
            rows.append({"variant": variant, "regressor": kind, "mpjpe": float(np.mean(errs))})
            log.info("ablate %s/%s: %.2f mm", variant, kind, rows[-1]["mpjpe"])
    return rows


def sweep_window(train, test, T_list, cfg: PipelineConfig, coarse=None, fine=None, kind=None,
                 variant="RSTV", jitter: Optional[JitterConfig] = None) -> list:
    """Train and evaluate once per temporal window size; rows sorted by T."""
    for T in T_list:
        if T <= 0 or T % 2:
            raise ValueError(f"window sizes must be even and positive, got {T}")
        if any(T > len(m) for m in list(train) + list(test)):
            raise ValueError(f"window {T} exceeds a sequence length")
    if jitter is not None:
        train, test = _jittered(train, jitter, 0), _jittered(test, jitter, 1000)
    if variant == "RSTV" and (coarse is None or fine is None):
        variant = "STV"  # boxes are taken as given
    tr_boxes = [variant_boxes(m, variant, cfg, coarse, fine) for m in train]
    te_boxes = [variant_boxes(m, variant, cfg, coarse, fine) for m in test]
    rows = []
    for T in sorted(T_list):
        tcfg = replace(cfg, T=T)
        X, Y = training_matrix(train, tr_boxes, tcfg)
        model = PoseRegressor.fit(X, Y, tcfg, kind)
        errs = []
        for m, boxes in zip(test, te_boxes):
            Xt, blocks = sequence_descriptors(m, boxes, T, tcfg.hog, tcfg.patch)
            preds = model.predict(Xt)
            gts = m.pose_array()
            errs.extend(mpjpe(p, gts[b.center]) for p, b in zip(preds, blocks))
        rows.append({"T": T, "mpjpe": float(np.mean(errs))})
        log.info("sweep T=%d: %.2f mm", T, rows[-1]["mpjpe"])
    return rows


def write_csv(path, rows) -> None:
    if not rows:
        raise ValueError("no rows to write")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(rows[0]))
        for r in rows:
            w.writerow([f"{v:.2f}" if isinstance(v, float) else v for v in r.values()])


def write_report(out_dir, name: str, cfg: PipelineConfig, rows=None, report: Optional[EvalReport] = None):
    """CSV and JSON outputs stamped with the config digest. Returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{name}_{cfg.digest()}"
    paths = []
    if report is not None and rows is None:
        rows = [{"center": c, "mpjpe": e} for c, e in zip(report.centers, report.per_frame)]
    if rows:
        write_csv(out / f"{stem}.csv", rows)
        paths.append(out / f"{stem}.csv")
    doc = {"config": cfg.to_json(), "config_digest": cfg.digest(), "rows": rows}
    if report is not None:
        doc["report"] = report.to_json()
    (out / f"{stem}.json").write_text(json.dumps(doc, indent=1, sort_keys=True))
    paths.append(out / f"{stem}.json")
    return paths
