"""Scripted end-to-end CLI run shared by the CLI and acceptance tests."""
import io
import json
from contextlib import redirect_stdout
from pathlib import Path

from rstv.cli import run
from rstv.pipeline import PipelineConfig

# small enough to finish in seconds
FAST = PipelineConfig(T=8, input_embed_dim=300, output_embed_dim=60, shift_samples_per_frame=2,
                      shift_epochs=1, seed=7)


def rstv(*argv):
    buf = io.StringIO()
    with redirect_stdout(buf):
        code = run([str(a) for a in argv])
    if code != 0:
        raise AssertionError(f"rstv {' '.join(map(str, argv))} exited {code}")
    return buf.getvalue().splitlines()


def scripted_run(workdir: Path, cfg: PipelineConfig = FAST):
    """gen -> jitter -> train-shift -> compensate -> features -> train -> predict -> eval.

    Paths are relative, so call this with ``workdir`` as the current directory.
    Returns the path of every produced file keyed by stage.
    """
    Path("cfg.json").write_text(json.dumps(cfg.to_json()))
    c = ["--config", "cfg.json"]
    rstv("synth-gen", *c, "--frames", 48, "--out", "train")
    rstv("synth-gen", *c, "--seed", 8, "--frames", 48, "--out", "test")
    jit = rstv("jitter", *c, "train/manifest.json", "--out", "jit")[-1]
    coarse = rstv("train-shift", *c, "train/manifest.json", "--kind", "coarse", "--out", "shift")[-1]
    fine = rstv("train-shift", *c, "train/manifest.json", "--kind", "fine", "--out", "shift")[-1]
    comp = rstv("compensate", *c, jit, "--coarse", coarse, "--fine", fine, "--out", "comp")[-1]
    feats = rstv("features", *c, comp, "--out", "feat")[-1]
    model = rstv("train", *c, feats, "--regressor", "krr", "--out", "model")[-1]
    preds = rstv("predict", *c, model, feats, "--out", "pred")[-1]
    ev = rstv("eval", *c, model, "test/manifest.json", "--out", "report")
    return {"jitter": jit, "coarse": coarse, "fine": fine, "compensate": comp, "features": feats,
            "model": model, "predict": preds, "csv": ev[0], "json": ev[1], "summary": ev[-1]}
