import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rigsfm.errors import DegenerateError, VerificationFailed
from rigsfm.geometry import hat, so3_exp
from rigsfm.matching import (EssentialModel, FilterConfig, RansacConfig, RawMatchSet,
                             decompose_essential, eight_point_essential, essential_from_pose,
                             filter_matches, gate_overlap, ransac_essential, ransac_verify,
                             score_matches)
from rigsfm.synth.twoview import make_two_view

from oracles import brute_filter


def random_raw(rng, n, W=200, H=150, grid=None):
    if grid:
        xA = rng.integers(0, W // grid, (n, 2)) * grid + 0.5
        xB = rng.integers(0, W // grid, (n, 2)) * grid + 0.5
    else:
        xA = rng.uniform(0, [W, H], (n, 2))
        xB = rng.uniform(0, [W, H], (n, 2))
    return RawMatchSet(xA, xB, rng.random(n), rng.random(n), rng.random(n))


def test_gate_overlap():
    assert gate_overlap(0.9, 0) == 0
    assert gate_overlap(0.9, 1) == 0.9
    rng = np.random.default_rng(0)
    o = rng.random(100)
    m = rng.random(100) < 0.5
    assert gate_overlap(o, m).sum() == pytest.approx(o[m].sum(), abs=1e-12)


def test_score_examples():
    raw = RawMatchSet([[0, 0]] * 3, [[0, 0]] * 3, [1, 0.8, 0], [1, 0.5, 0.7], [1, 0.9, 0.3])
    np.testing.assert_allclose(score_matches(raw), [1, 0.4, 0], atol=1e-15)


def test_filter_non_bijective_dropped():
    raw = RawMatchSet([[10, 10], [11, 10]], [[50, 50], [90, 90]], [1, 1], [1, 1], [0.9, 0.8])
    out = filter_matches(raw, cfg=FilterConfig(q=4))
    assert len(out) == 0


def test_filter_per_cell_top_k():
    xA = [[1, 1], [5, 5], [9, 9], [13, 13], [17, 17]]
    xB = [[10 * i + 1, 1] for i in range(5)]
    s = [0.5, 0.9, 0.6, 0.95, 0.7]
    raw = RawMatchSet(xA, xB, s, [1] * 5, [1] * 5)
    out = filter_matches(raw, cfg=FilterConfig(g=32, K_cell=2, q=2))
    assert sorted(out.index.tolist()) == [1, 3]


def test_filter_matches_bruteforce_500(rng):
    raw = random_raw(rng, 500)
    cfg = FilterConfig(tau_s=0.2, g=20, K_cell=3, q=6, N_max=40)
    mA = rng.random((150, 200)) < 0.7
    mB = rng.random((150, 200)) < 0.7
    out = filter_matches(raw, (mA, mB), cfg)
    assert out.index.tolist() == brute_filter(raw, (mA, mB), cfg)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 120))
def test_filter_invariants(seed, n):
    rng = np.random.default_rng(seed)
    raw = random_raw(rng, n, grid=3 if seed % 2 else None)
    cfg = FilterConfig(tau_s=0.1, g=25, K_cell=2, q=5, N_max=15)
    mA = rng.random((150, 200)) < 0.8
    out = filter_matches(raw, (mA, None), cfg)
    assert len(out) <= cfg.N_max
    assert np.all(out.s >= cfg.tau_s)
    binsA = {tuple(np.floor(x / cfg.q).astype(int)) for x in out.matches.xA}
    binsB = {tuple(np.floor(x / cfg.q).astype(int)) for x in out.matches.xB}
    assert len(binsA) == len(out) == len(binsB)
    perm = rng.permutation(n)
    shuffled = filter_matches(raw.subset(perm), (mA, None), cfg)
    assert np.array_equal(perm[shuffled.index], out.index)


def test_eight_point_noise_free(fisheye):
    tv = make_two_view(3, 20, fisheye)
    model = eight_point_essential(tv.bA, tv.bB)
    assert np.abs(np.einsum("ni,ij,nj->n", tv.bB, model.E, tv.bA)).max() < 1e-10
    E_true = essential_from_pose(tv.R, tv.t)
    assert min(np.abs(model.E - E_true).max(), np.abs(model.E + E_true).max()) < 1e-8


def test_eight_point_pure_translation(rng):
    X = rng.uniform([-2, -2, 3], [2, 2, 8], (20, 3))
    XB = X + [1.0, 0, 0]
    model = eight_point_essential(X / np.linalg.norm(X, axis=1, keepdims=True),
                                  XB / np.linalg.norm(XB, axis=1, keepdims=True))
    ref = hat([1.0, 0, 0]) / np.linalg.norm(hat([1.0, 0, 0]))
    assert min(np.abs(model.E - ref).max(), np.abs(model.E + ref).max()) < 1e-9


def test_eight_point_pure_rotation_is_degenerate(rng):
    X = rng.uniform([-2, -2, 3], [2, 2, 8], (20, 3))
    b = X / np.linalg.norm(X, axis=1, keepdims=True)
    with pytest.raises(DegenerateError):
        eight_point_essential(b, b @ so3_exp([0.1, 0.2, 0]).T)


def test_essential_model_invariants(fisheye):
    tv = make_two_view(4, 30, fisheye, noise_rad=1e-3)
    E = eight_point_essential(tv.bA, tv.bB).E
    assert abs(np.linalg.det(E)) < 1e-9
    assert np.abs(2 * E @ E.T @ E - np.trace(E @ E.T) * E).max() < 1e-6


def test_decompose_recovers_pose(fisheye):
    tv = make_two_view(9, 50, fisheye)
    R, t = decompose_essential(essential_from_pose(tv.R, tv.t), tv.bA, tv.bB)
    np.testing.assert_allclose(R, tv.R, atol=1e-9)
    np.testing.assert_allclose(t, tv.t / np.linalg.norm(tv.t), atol=1e-9)


def test_ransac_noise_free_outliers(fisheye):
    tv = make_two_view(5, 100, fisheye, n_outliers=30)
    res = ransac_verify(tv.matches, fisheye, fisheye, RansacConfig(seed=1))
    assert np.array_equal(res.inliers, tv.is_inlier)


def test_ransac_all_outliers(fisheye, rng):
    raw = RawMatchSet(rng.uniform(0, [320, 240], (60, 2)), rng.uniform(0, [320, 240], (60, 2)),
                      np.ones(60), np.ones(60), np.ones(60))
    with pytest.raises(VerificationFailed):
        ransac_verify(raw, fisheye, fisheye)


def test_ransac_noisy_retention(fisheye):
    kept = []
    for seed in range(50):
        tv = make_two_view(100 + seed, 100, fisheye, noise_rad=1e-3)
        res = ransac_essential(tv.bA, tv.bB, RansacConfig(seed=seed))
        kept.append(res.n_inliers / 100)
    assert np.mean(kept) >= 0.95


def test_ransac_deterministic(fisheye):
    tv = make_two_view(6, 80, fisheye, noise_rad=1e-3, n_outliers=20)
    a = ransac_essential(tv.bA, tv.bB, RansacConfig(seed=3))
    b = ransac_essential(tv.bA, tv.bB, RansacConfig(seed=3))
    assert np.array_equal(a.model.E, b.model.E) and np.array_equal(a.inliers, b.inliers)


def test_refit_does_not_increase_inlier_residual(fisheye):
    for seed in range(10):
        tv = make_two_view(200 + seed, 60, fisheye, noise_rad=1e-3, n_outliers=10)
        res = ransac_essential(tv.bA, tv.bB, RansacConfig(seed=seed))
        assert np.linalg.matrix_rank(res.model.E, tol=1e-9) == 2
