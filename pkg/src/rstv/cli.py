"""``rstv`` command line: one subcommand per pipeline stage.

Every subcommand accepts ``--config PATH`` (JSON PipelineConfig, overridden
by flags), ``--seed``, ``--out DIR``, ``--paper-dims`` and ``--threads``.
Outputs carry the digest of the resolved config in their names and headers.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from rstv.core import SequenceManifest, default_skeleton
from rstv.fileio import read_features, write_features
from rstv.pipeline import PipelineConfig, PoseRegressor, sequence_descriptors, variant_boxes

log = logging.getLogger("rstv")


class UsageError(Exception):
    pass


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="JSON pipeline config")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("--paper-dims", action="store_true", help="15000/4000-dim embeddings")
    p.add_argument("--threads", type=int, default=1, help="workers across sequences")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    ap = argparse.ArgumentParser(prog="rstv", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-gen", parents=[common], help="render a synthetic gait sequence")
    p.add_argument("--frames", type=int, default=200)
    p.add_argument("--yaw", type=float, default=0.9)
    p.add_argument("--noise", type=float, default=0.02)
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("jitter", parents=[common], help="perturb manifest boxes")
    p.add_argument("manifest", type=Path)
    p.add_argument("--max-shift", type=float, nargs="+", default=[12.0])
    p.set_defaults(func=cmd_jitter)

    p = sub.add_parser("train-shift", parents=[common], help="train a coarse or fine shift CNN")
    p.add_argument("manifests", type=Path, nargs="+")
    p.add_argument("--kind", choices=("coarse", "fine"), default="coarse")
    p.add_argument("--range", type=float, help="label range in pixels (default from config)")
    p.add_argument("--samples", type=int, help="crops per frame")
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train_shift)

    p = sub.add_parser("compensate", parents=[common], help="refine boxes with shift regressors")
    p.add_argument("manifest", type=Path)
    _shift_args(p, required=True)
    p.set_defaults(func=cmd_compensate)

    p = sub.add_parser("features", parents=[common], help="3D HOG descriptors for every block")
    p.add_argument("manifests", type=Path, nargs="+")
    p.add_argument("-T", "--window", type=int)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", parents=[common], help="fit a pose regressor on feature files")
    p.add_argument("features", type=Path, nargs="+")
    p.add_argument("--regressor", choices=("krr", "kde", "dn"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="predict poses for a feature file")
    p.add_argument("model", type=Path)
    p.add_argument("features", type=Path)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", parents=[common], help="MPJPE/PCP of a model on a manifest")
    p.add_argument("model", type=Path)
    p.add_argument("manifest", type=Path)
    p.add_argument("--variant", choices=("STV", "RSTV"), default="STV")
    _shift_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate-motion", parents=[common], help="STV vs RSTV on jittered data")
    p.add_argument("--train", type=Path, nargs="+", required=True)
    p.add_argument("--test", type=Path, nargs="+", required=True)
    p.add_argument("--regressors", nargs="+", choices=("krr", "kde", "dn"), default=["krr"])
    p.add_argument("--jitter", type=float)
    _shift_args(p, required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep-window", parents=[common], help="MPJPE as a function of T")
    p.add_argument("--train", type=Path, nargs="+", required=True)
    p.add_argument("--test", type=Path, nargs="+", required=True)
    p.add_argument("-T", "--windows", type=int, nargs="+", default=[4, 12, 24])
    p.add_argument("--regressor", choices=("krr", "kde", "dn"))
    p.add_argument("--variant", choices=("STV", "RSTV"), default="STV")
    p.add_argument("--jitter", type=float, help="jitter boxes first (RSTV needs shift models)")
    _shift_args(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("selftest", parents=[common], help="run the embedded invariant checks")
    p.set_defaults(func=cmd_selftest)
    return ap


def _shift_args(p, required=False):
    p.add_argument("--coarse", type=Path, required=required, help="coarse shift model")
    p.add_argument("--fine", type=Path, required=required, help="fine shift model")


def resolve_config(args) -> PipelineConfig:
    cfg = PipelineConfig()
    if args.config is not None:
        try:
            doc = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"cannot read config {args.config}: {e}") from e
        cfg = PipelineConfig.from_json(doc.get("config", doc))
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.paper_dims:
        cfg = cfg.with_paper_dims()
    return cfg


def _load_manifests(paths):
    out = []
    for p in paths:
        p = p / "manifest.json" if p.is_dir() else p
        if not p.exists():
            raise UsageError(f"no manifest at {p}")
        out.append(SequenceManifest.load(p))
    return out


def _shift_models(args):
    from rstv.motioncomp import CNNShiftRegressor

    if args.coarse is None or args.fine is None:
        return None, None
    return CNNShiftRegressor.load(args.coarse), CNNShiftRegressor.load(args.fine)


def _map(args, fn, items):
    # results come back in input order whatever the worker count
    if args.threads <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(args.threads) as pool:
        return list(pool.map(fn, items))


def _save_manifest(manifest, src_root, out_dir, name="manifest.json"):
    """Write a manifest into ``out_dir`` with frame paths rewritten relative to it."""
    out_dir.mkdir(parents=True, exist_ok=True)
    src_root = Path(src_root or ".").resolve()
    frames = [os.path.relpath(src_root / f, out_dir.resolve()) for f in manifest.frames]
    m = replace(manifest, frames=frames, root=out_dir)
    m.save(out_dir / name)
    return out_dir / name


def _stamp(cfg, extra=None):
    return {"config": cfg.to_json(), "config_digest": cfg.digest(), **(extra or {})}


def _write_json(path, doc):
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


# ---- subcommands

def cmd_synth_gen(args, cfg):
    from rstv.synthdata import SynthConfig, gen_sequence, write_sequence

    scfg = SynthConfig(frames=args.frames, seed=cfg.seed, yaw=args.yaw, noise_sigma=args.noise,
                       box_size=cfg.patch)
    path = write_sequence(gen_sequence(scfg), args.out)
    print(path)


def cmd_jitter(args, cfg):
    from rstv.synthdata import JitterConfig, jitter_boxes

    (m,) = _load_manifests([args.manifest])
    su, sv = (args.max_shift * 2)[:2]
    jm, offsets = jitter_boxes(m, JitterConfig(su, sv, seed=cfg.seed))
    path = _save_manifest(jm, m.root, args.out)
    np.savetxt(args.out / "offsets.csv", offsets, fmt="%.6f", delimiter=",", header="du,dv", comments="")
    print(path)


def cmd_train_shift(args, cfg):
    from rstv.motioncomp import make_shift_training_set, train_shift_regressor

    rng_range = args.range or (cfg.comp.coarse_range if args.kind == "coarse" else cfg.comp.fine_range)
    n = args.samples or cfg.shift_samples_per_frame
    manifests = _load_manifests(args.manifests)
    sets = [make_shift_training_set(m, rng_range, n, seed=cfg.seed + k, patch=cfg.patch)
            for k, m in enumerate(manifests)]
    data = sets[0]
    for s in sets[1:]:
        data = data + s
    reg = train_shift_regressor(data, args.kind, seed=cfg.seed, epochs=args.epochs or cfg.shift_epochs,
                                shift_range=rng_range, box_size=manifests[0].boxes[0].width)
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / f"shift_{args.kind}_{cfg.digest()}.net"
    reg.save(path)
    print(path)


def cmd_compensate(args, cfg):
    (m,) = _load_manifests([args.manifest])
    coarse, fine = _shift_models(args)
    boxes = variant_boxes(m, "RSTV", cfg, coarse, fine)
    path = _save_manifest(m.with_boxes(boxes), m.root, args.out)
    print(path)


def cmd_features(args, cfg):
    if args.window is not None:
        cfg = replace(cfg, T=args.window)
    manifests = _load_manifests(args.manifests)
    args.out.mkdir(parents=True, exist_ok=True)

    def one(m):
        return sequence_descriptors(m, m.boxes, cfg.T, cfg.hog, cfg.patch)

    for src, m, (X, blocks) in zip(args.manifests, manifests, _map(args, one, manifests)):
        centers = [b.center for b in blocks]
        footer = _stamp(cfg, {"manifest": str(src), "centers": centers})
        if m.poses is not None:
            footer["poses"] = m.pose_array()[centers].reshape(len(centers), -1).tolist()
        path = args.out / f"{Path(src).resolve().parent.name if src.name == 'manifest.json' else src.stem}_{cfg.digest()}.feat"
        write_features(path, X, footer)
        print(path)


def cmd_train(args, cfg):
    Xs, Ys = [], []
    for p in args.features:
        X, footer = read_features(p)
        if "poses" not in footer:
            raise UsageError(f"{p} carries no pose labels")
        if "config" in footer and args.config is None:
            cfg = replace(cfg, T=footer["config"]["T"])
        Xs.append(X)
        Ys.append(np.asarray(footer["poses"]))
    kind = args.regressor or cfg.regressor
    cfg = replace(cfg, regressor=kind)
    model = PoseRegressor.fit(np.concatenate(Xs), np.concatenate(Ys), cfg, kind)
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / f"model_{kind}_{cfg.digest()}.pose"
    model.save(path, extra={"config_digest": cfg.digest()})
    print(path)


def cmd_predict(args, cfg):
    model = PoseRegressor.load(args.model)
    X, footer = read_features(args.features)
    preds = model.predict(X)
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / f"predictions_{model.cfg.digest()}.json"
    _write_json(path, _stamp(model.cfg, {"centers": footer.get("centers"),
                                         "poses": np.round(preds, 6).tolist()}))
    print(path)


def cmd_eval(args, cfg):
    from rstv.evaluation import evaluate, write_report

    model = PoseRegressor.load(args.model)
    (m,) = _load_manifests([args.manifest])
    coarse, fine = _shift_models(args)
    if args.variant == "RSTV" and coarse is None:
        raise UsageError("--variant RSTV needs --coarse and --fine")
    rep = evaluate(model, m, model.cfg, coarse, fine, args.variant, default_skeleton())
    for p in write_report(args.out, "eval", model.cfg, report=rep):
        print(p)
    print(f"MPJPE {rep.mean:.2f} mm (std {rep.std:.2f}), PCP {rep.pcp:.3f}, "
          f"{len(rep.per_frame)} frames, {rep.excluded} excluded")


def _jitter_cfg(args, cfg):
    from rstv.synthdata import JitterConfig

    j = cfg.jitter if args.jitter is None else args.jitter
    return JitterConfig(j, j, seed=cfg.seed)


def cmd_ablate(args, cfg):
    from rstv.evaluation import ablate_motion, write_report

    coarse, fine = _shift_models(args)
    rows = ablate_motion(_load_manifests(args.train), _load_manifests(args.test), _jitter_cfg(args, cfg),
                         cfg, coarse, fine, kinds=tuple(args.regressors))
    for p in write_report(args.out, "ablate_motion", cfg, rows=rows):
        print(p)
    for r in rows:
        print(f"{r['variant']:5s} {r['regressor']:4s} {r['mpjpe']:.2f}")


def cmd_sweep(args, cfg):
    from rstv.evaluation import sweep_window, write_report

    coarse, fine = _shift_models(args)
    if args.variant == "RSTV" and coarse is None:
        raise UsageError("--variant RSTV needs --coarse and --fine")
    jitter = _jitter_cfg(args, cfg) if args.jitter is not None else None
    rows = sweep_window(_load_manifests(args.train), _load_manifests(args.test), args.windows, cfg,
                        coarse, fine, kind=args.regressor or cfg.regressor, variant=args.variant,
                        jitter=jitter)
    for p in write_report(args.out, "sweep_window", cfg, rows=rows):
        print(p)
    for r in rows:
        print(f"T={r['T']:3d} {r['mpjpe']:.2f}")


def cmd_selftest(args, cfg):
    from rstv.selftest import run_selftest

    return 0 if run_selftest(seed=cfg.seed, stream=sys.stdout) else 1


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("rstv: error: --threads must be positive", file=sys.stderr)
        return 2
    try:
        cfg = resolve_config(args)
        code = args.func(args, cfg)
    except UsageError as e:
        print(f"rstv: error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - every runtime failure maps to exit 1
        log.debug("failure", exc_info=True)
        print(f"rstv: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return int(code or 0)


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
