import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rstv.kernels import (
    ExpChi2Embedding,
    IdentityEmbedding,
    RBFOutputEmbedding,
    chi2_distance,
    embed_input,
    embed_output,
    exp_chi2_kernel,
    homogeneous_chi2_map,
    l1_normalize,
    load_embedding,
    median_chi2_gamma,
    median_rbf_gamma,
    save_embedding,
)

hist = arrays(np.float64, 8, elements=st.floats(0, 10))


def test_chi2_examples():
    x = np.array([0.2, 0.5, 0.3])
    assert chi2_distance(x, x) == 0
    assert chi2_distance([1, 0], [0, 1]) == 2
    assert chi2_distance([0, 0], [0, 0]) == 0
    with pytest.raises(ValueError):
        chi2_distance([-1, 0], [0, 1])
    with pytest.raises(ValueError):
        chi2_distance([1, 0, 0], [0, 1])


@given(hist, hist)
def test_chi2_symmetric_nonnegative(x, y):
    assert chi2_distance(x, y) == chi2_distance(y, x)
    assert chi2_distance(x, y) >= 0


def test_exp_chi2_examples():
    x = np.array([0.1, 0.9])
    assert exp_chi2_kernel(x, x, 3.0) == 1.0
    assert exp_chi2_kernel([1, 0], [0, 1], 0.5) == pytest.approx(math.exp(-1), abs=1e-12)
    with pytest.raises(ValueError):
        exp_chi2_kernel(x, x, 0.0)


@given(hist, hist, hist)
def test_exp_chi2_monotone(x, y, z):
    dy, dz = chi2_distance(x, y), chi2_distance(x, z)
    ky, kz = exp_chi2_kernel(x, y, 0.7), exp_chi2_kernel(x, z, 0.7)
    assert 0 < ky <= 1 and 0 < kz <= 1
    if dy < dz:
        assert ky >= kz


def test_homogeneous_map_approximates_additive_chi2(rng):
    X = rng.dirichlet(np.ones(16), 40)
    P = homogeneous_chi2_map(X)
    assert P.shape == (40, 16 * 5)
    # an order-2 map sampled at period 0.6 is good to a few percent
    for i in range(0, 40, 2):
        x, y = X[i], X[i + 1]
        exact = np.sum(2 * x * y / (x + y))
        assert P[i] @ P[i + 1] == pytest.approx(exact, rel=0.06)
        assert np.sum((P[i] - P[i + 1]) ** 2) == pytest.approx(chi2_distance(x, y), rel=0.08)
    # additive kernel gives k(x, x) = sum(x) = 1
    np.testing.assert_allclose(np.sum(P ** 2, axis=1), 1.0, rtol=0.02)


def test_l1_normalize():
    out = l1_normalize(np.array([[1.0, 3.0], [0.0, 0.0]]))
    np.testing.assert_array_equal(out, [[0.25, 0.75], [0.0, 0.0]])


def _pairs_error(emb, X, gamma):
    P = emb.embed(X)
    return max(abs(P[i] @ P[i + 1] - exp_chi2_kernel(l1_normalize(X[i]), l1_normalize(X[i + 1]), gamma))
               for i in range(0, len(X), 2))


def test_exp_chi2_embedding_m2000(rng):
    X = rng.dirichlet(np.ones(64), 200)
    g = median_chi2_gamma(X)
    emb = ExpChi2Embedding(64, 2000, gamma=g, seed=3)
    assert emb.embed(X[:3]).shape == (3, 2000)
    assert _pairs_error(emb, X, g) <= 0.10


def test_embedding_deterministic_and_seeded(rng):
    X = rng.dirichlet(np.ones(10), 5)
    a = ExpChi2Embedding(10, 300, gamma=1.0, seed=1).embed(X)
    b = ExpChi2Embedding(10, 300, gamma=1.0, seed=1).embed(X)
    c = ExpChi2Embedding(10, 300, gamma=1.0, seed=2).embed(X)
    assert a.tobytes() == b.tobytes()
    assert not np.allclose(a, c)
    # single rows go through a float32 GEMV instead of GEMM
    np.testing.assert_allclose(embed_input(ExpChi2Embedding(10, 300, gamma=1.0, seed=1), X[0]), a[0], atol=1e-6)


def test_streamed_frequencies_match_cached(rng):
    X = rng.dirichlet(np.ones(10), 4)
    cached = ExpChi2Embedding(10, 2500, gamma=1.0, seed=4)
    streamed = ExpChi2Embedding(10, 2500, gamma=1.0, seed=4, cache_limit_bytes=0)
    assert streamed._cache is None
    assert cached.embed(X).tobytes() == streamed.embed(X).tobytes()
    assert cached.frequency_digest() == streamed.frequency_digest()


def test_embedding_rejects_bad_input():
    emb = ExpChi2Embedding(4, 50)
    with pytest.raises(ValueError):
        emb.embed(np.array([1.0, -1.0, 0.0, 0.0]))
    with pytest.raises(ValueError):
        emb.embed(np.ones(5))
    with pytest.raises(ValueError):
        ExpChi2Embedding(4, 50, gamma=0)


def test_rff_unbiased(rng):
    X = rng.dirichlet(np.ones(12), 2)
    g = 1.5
    vals = []
    for s in range(20):
        P = ExpChi2Embedding(12, 500, gamma=g, seed=s).embed(X)
        vals.append(P[0] @ P[1])
    # the ground truth for the composed map is the Gaussian in homogeneous-map space
    H = ExpChi2Embedding(12, 10, gamma=g).homogeneous(X)
    target = math.exp(-g * np.sum((H[0] - H[1]) ** 2))
    se = np.std(vals, ddof=1) / math.sqrt(len(vals))
    assert abs(np.mean(vals) - target) <= 3 * se


def test_rbf_embedding(rng):
    Y = rng.normal(0, 1, (100, 12))
    g = median_rbf_gamma(Y)
    emb = RBFOutputEmbedding(12, 4000, gamma=g, seed=1)
    P = emb.embed(Y)
    assert np.abs(np.sum(P ** 2, axis=1) - 1).max() <= 0.04
    err = max(abs(P[i] @ P[i + 1] - math.exp(-g * np.sum((Y[i] - Y[i + 1]) ** 2))) for i in range(0, 100, 2))
    assert err <= 0.06
    np.testing.assert_allclose(embed_output(emb, Y[0]), P[0], atol=1e-12)


def test_rbf_frequency_scale():
    # exp(-g ||d||^2) has spectral density N(0, 2g I)
    emb = RBFOutputEmbedding(3, 20000, gamma=0.5, seed=0)
    assert emb.omega.var() == pytest.approx(1.0, rel=0.03)


def test_rbf_jacobian(rng):
    emb = RBFOutputEmbedding(5, 300, gamma=0.3, seed=2)
    y = rng.normal(size=5)
    J = emb.jacobian(y)
    h = 1e-6
    fd = np.stack([(emb.embed(y + h * e) - emb.embed(y - h * e)) / (2 * h) for e in np.eye(5)], axis=1)
    assert np.abs(fd - J).max() <= 1e-5 * max(1.0, np.abs(J).max())
    bound = math.sqrt(2 / 300) * np.linalg.norm(emb.omega, axis=0)
    assert np.all(np.linalg.norm(J, axis=1) <= bound + 1e-12)


def test_identity_embedding():
    e = IdentityEmbedding(3)
    np.testing.assert_array_equal(e.embed([1.0, 2.0, 3.0]), [1, 2, 3])
    np.testing.assert_array_equal(e.jacobian(np.zeros(3)), np.eye(3))


def test_median_gammas(rng):
    X = rng.dirichlet(np.ones(6), 50)
    g = median_chi2_gamma(X, seed=0)
    assert g > 0 and g == median_chi2_gamma(X, seed=0)
    assert median_chi2_gamma(X[:1]) == 1.0
    Y = np.zeros((5, 3))
    assert median_rbf_gamma(Y) == 1.0  # all distances zero


@pytest.mark.parametrize("kind", ["chi2", "rbf", "identity"])
def test_save_load(tmp_path, rng, kind):
    emb = {"chi2": ExpChi2Embedding(6, 120, gamma=0.8, seed=9),
           "rbf": RBFOutputEmbedding(6, 120, gamma=0.8, seed=9),
           "identity": IdentityEmbedding(6)}[kind]
    save_embedding(tmp_path / "e.bin", emb)
    assert (tmp_path / "e.bin").read_bytes()[:8] == b"RSTVEMBD"
    back = load_embedding(tmp_path / "e.bin")
    x = rng.dirichlet(np.ones(6), 3)
    assert emb.embed(x).tobytes() == back.embed(x).tobytes()


def test_load_detects_mismatch(tmp_path):
    from rstv.fileio import read_container, write_container
    from rstv.kernels import MAGIC

    save_embedding(tmp_path / "e.bin", ExpChi2Embedding(6, 120, seed=9))
    head, blobs = read_container(tmp_path / "e.bin", MAGIC)
    head["seed"] = 10
    write_container(tmp_path / "bad.bin", MAGIC, head, blobs)
    with pytest.raises(ValueError):
        load_embedding(tmp_path / "bad.bin")


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_embedding_values_bounded(seed):
    x = np.random.default_rng(seed).dirichlet(np.ones(5))
    v = ExpChi2Embedding(5, 64, seed=seed % 7).embed(x)
    assert np.abs(v).max() <= math.sqrt(2 / 64) + 1e-12
