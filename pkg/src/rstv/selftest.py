"""Fast embedded invariant checks behind ``rstv selftest``.

Each check is deterministic given the seed and prints one line, so two runs
with the same seed give byte-identical output.
"""
from __future__ import annotations

import math
import sys

import numpy as np

from rstv import nnet
from rstv.core import BoundingBox, SkeletonSpec, crop_patch, extract_blocks
from rstv.evaluation import mpjpe, pcp
from rstv.hog3d import Hog3DConfig, gradients3d, quantize_orientation, raw_cell_histograms
from rstv.kernels import (
    ExpChi2Embedding,
    RBFOutputEmbedding,
    exp_chi2_kernel,
    median_chi2_gamma,
    median_rbf_gamma,
)
from rstv.motioncomp import CompensationConfig, OracleShiftRegressor, refine_center
from rstv.regress import preimage_gradient, preimage_objective, ridge_solve


def _kernel_error(rng, seed):
    X = rng.dirichlet(np.ones(32), 100)
    gamma = median_chi2_gamma(X, seed=seed)
    emb = ExpChi2Embedding(32, 2000, gamma=gamma, seed=seed)
    P = emb.embed(X)
    err = max(abs(P[i] @ P[i + 1] - exp_chi2_kernel(X[i], X[i + 1], gamma)) for i in range(0, 100, 2))
    return err <= 0.10, f"max |approx - exact| = {err:.3f} (m=2000, bound 0.10)"


def _rbf_error(rng, seed):
    Y = rng.normal(0, 1, (100, 9))
    gamma = median_rbf_gamma(Y, seed=seed)
    emb = RBFOutputEmbedding(9, 4000, gamma=gamma, seed=seed)
    P = emb.embed(Y)
    err = max(abs(P[i] @ P[i + 1] - math.exp(-gamma * np.sum((Y[i] - Y[i + 1]) ** 2)))
              for i in range(0, 100, 2))
    return err <= 0.06, f"max |approx - exact| = {err:.3f} (m=4000, bound 0.06)"


def _ridge_oracle(rng, seed):
    Phi = rng.normal(size=(30, 10))
    Y = rng.normal(size=(30, 3))
    W = ridge_solve(Phi, Y, 1.0)
    # plain gradient descent on the ridge objective
    A = Phi.T @ Phi + np.eye(10)
    step = 1.0 / np.linalg.eigvalsh(A)[-1]
    V = np.zeros_like(W)
    for _ in range(20000):
        G = A @ V - Phi.T @ Y
        V -= step * G
        if np.abs(G).max() < 1e-12:
            break
    err = float(np.abs(W - V).max())
    return err < 1e-5, f"closed form vs descent: {err:.1e}"


def _nnet_gradcheck(rng, seed):
    specs = [nnet.conv2d(1, 2, 3), nnet.relu(), nnet.maxpool2d(2), nnet.dense(2 * 3 * 3, 4),
             nnet.relu(), nnet.dense(4, 2), nnet.linear()]
    net = nnet.Network(specs, (1, 8, 8), seed=seed, dtype=np.float64)
    x = rng.normal(size=(3, 1, 8, 8))
    t = rng.normal(size=(3, 2))
    _, grads = net.backward(x, t)
    worst = 0.0
    h = 1e-6
    for p, g in zip(net.parameters(), grads):
        flat = p.reshape(-1)
        for k in rng.choice(flat.size, min(4, flat.size), replace=False):
            old = flat[k]
            flat[k] = old + h
            lp = net.backward(x, t)[0]
            flat[k] = old - h
            lm = net.backward(x, t)[0]
            flat[k] = old
            fd = (lp - lm) / (2 * h)
            an = g.reshape(-1)[k]
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-8))
    return worst < 1e-4, f"worst relative error {worst:.1e}"


def _preimage_gradcheck(rng, seed):
    emb = RBFOutputEmbedding(6, 200, gamma=0.5, seed=seed)
    target = rng.normal(0, 0.1, 200)
    y = rng.normal(size=6)
    g = preimage_gradient(target, emb, y)
    h = 1e-6
    fd = np.array([(preimage_objective(target, emb, y + h * e) - preimage_objective(target, emb, y - h * e))
                   / (2 * h) for e in np.eye(6)])
    err = float(np.abs(fd - g).max() / max(np.abs(g).max(), 1e-12))
    return err < 1e-4, f"relative error {err:.1e}"


def _hog_oracle(rng, seed):
    vol = rng.random((8, 8, 8))
    grads = gradients3d(vol)
    fast = raw_cell_histograms(grads, 2, 4, 10)
    slow = np.zeros_like(fast)
    for t in range(8):
        for y in range(8):
            for x in range(8):
                b, m = quantize_orientation([grads[0][t, y, x], grads[1][t, y, x], grads[2][t, y, x]], 10)
                slow[t // 4, y // 4, x // 4, b] += m
    ok = np.array_equal(fast, slow) and Hog3DConfig().length(24) == 5040
    return ok, f"exact match {np.array_equal(fast, slow)}, default length {Hog3DConfig().length(24)}"


def _blocks(rng, seed):
    b = extract_blocks(50, 24)
    ok = len(b) == 27 and b[0].center == 11 and b[-1].center == 37
    return ok, f"{len(b)} blocks, centers {b[0].center}..{b[-1].center}"


def _metrics(rng, seed):
    m = mpjpe(np.array([[3.0, 4.0, 0.0]]), np.zeros((1, 3)))
    sk = SkeletonSpec(("a", "b"), (0, 0), ((0, 1),))
    gt = np.array([[0.0, 0, 0], [0, 0, 2.0]])
    pred = gt + np.array([[0.0, 0, 0], [1.0, 0, 0]])  # error exactly alpha * length
    ok = m == 5.0 and pcp(pred, gt, sk).score == 1.0
    return ok, f"mpjpe {m:.2f}, inclusive pcp boundary {pcp(pred, gt, sk).score:.1f}"


def _crop_identity(rng, seed):
    img = rng.random((16, 20))
    out = crop_patch(img, BoundingBox(10.0, 8.0, 20.0, 16.0), 20, 16)
    err = float(np.abs(out - img).max())
    return err < 1e-12, f"full-frame crop deviation {err:.1e}"


def _oracle_shift(rng, seed):
    frame = np.zeros((64, 64))
    truth = np.array([[30.0, 34.0]])
    oracle = OracleShiftRegressor(truth)
    box = BoundingBox(22.0, 40.0, 32.0, 32.0)
    visited = refine_center(frame, box, CompensationConfig(patch=32), oracle, oracle, frame_index=0)
    ok = np.array_equal(visited[1], truth[0]) and all(np.array_equal(v, truth[0]) for v in visited[1:])
    return ok, f"center after 1 iteration {visited[1].tolist()}"


CHECKS = [
    ("exp-chi2 random features", _kernel_error),
    ("rbf random features", _rbf_error),
    ("ridge closed form", _ridge_oracle),
    ("nnet gradients", _nnet_gradcheck),
    ("pre-image gradient", _preimage_gradcheck),
    ("3d hog histograms", _hog_oracle),
    ("block extraction", _blocks),
    ("metrics", _metrics),
    ("crop identity", _crop_identity),
    ("oracle shift regressor", _oracle_shift),
]


def run_selftest(seed: int = 0, stream=sys.stdout) -> bool:
    all_ok = True
    for k, (name, fn) in enumerate(CHECKS):
        rng = np.random.default_rng([seed, k])
        try:
            ok, detail = fn(rng, seed)
        except Exception as e:  # a crash is a failed check, not an aborted suite
            ok, detail = False, f"{type(e).__name__}: {e}"
        all_ok &= bool(ok)
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}", file=stream)
    print(f"selftest {'passed' if all_ok else 'FAILED'} ({len(CHECKS)} checks, seed {seed})", file=stream)
    return all_ok
