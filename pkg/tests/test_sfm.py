import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse.csgraph import connected_components
from scipy.sparse import coo_matrix

from rigsfm.errors import InitializationError, ValidationError
from rigsfm.geometry import RigidPose, project, se3_exp, se3_log
from rigsfm.matching import RawMatchSet, essential_from_pose
from rigsfm.pairgraph import FrameId
from rigsfm.sfm import (PairGeometry, Reconstruction, SfmConfig, Track, build_tracks,
                        bundle_adjust, compute_metrics, extrinsics_from_pairs, huber,
                        initialize, triangulate)
from rigsfm.sfm.bundle import build_problem, prior_terms, residuals, total_cost
from rigsfm.sfm.triangulation import midpoint_batch
from rigsfm.synth.bench import make_ba_problem
from rigsfm.synth.rig import make_default_rig, perturb_priors


def F(c, t):
    return FrameId(c, t)


def matchset(xA, xB):
    n = len(xA)
    return RawMatchSet(np.asarray(xA, float), np.asarray(xB, float), np.ones(n), np.ones(n), np.ones(n))


@pytest.fixture(scope="module")
def small_problem():
    return make_ba_problem(n_times=6, n_points=400, seed=3, pixel_noise=0.0, point_noise=0.0,
                           pose_noise=0.0)


# ---------------------------------------------------------------------------
# tracks


def test_chain_forms_one_track():
    a, b, c = F("A", 0), F("B", 0), F("C", 0)
    tracks = build_tracks({(a, b): matchset([[10, 10]], [[20, 20]]),
                           (b, c): matchset([[20, 20]], [[30, 30]])})
    assert len(tracks) == 1
    assert len(tracks[0]) == 3
    assert set(tracks[0].frames) == {a, b, c}


def test_conflicting_component_is_dropped():
    a, b = F("A", 0), F("B", 0)
    # two keypoints of A end up in one component through B
    tracks = build_tracks({(a, b): matchset([[10, 10], [50, 50]], [[20, 20], [20, 20]])})
    assert tracks == []


def test_tracks_match_connected_components_oracle():
    rng = np.random.default_rng(5)
    frames = [F(c, t) for c in "ABC" for t in range(3)]
    kp = {f: rng.integers(0, 40, (25, 2)).astype(float) + 0.25 for f in frames}
    pairs = {}
    for i in range(len(frames)):
        for j in range(i + 1, len(frames)):
            if rng.random() < 0.5:
                k = rng.integers(1, 8)
                ia = rng.choice(25, k, replace=False)
                ib = rng.choice(25, k, replace=False)
                pairs[(frames[i], frames[j])] = matchset(kp[frames[i]][ia], kp[frames[j]][ib])
    tracks = build_tracks(pairs)

    # oracle: union of (frame, keypoint) nodes via scipy on an explicit graph
    nodes = {}
    def node(f, x):
        return nodes.setdefault((f, tuple(np.floor(np.asarray(x) / 0.5 + 0.5).astype(int))), len(nodes))
    edges = []
    for (fa, fb), m in pairs.items():
        for xa, xb in zip(m.xA, m.xB):
            edges.append((node(fa, xa), node(fb, xb)))
    e = np.array(edges)
    G = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(len(nodes), len(nodes)))
    _, lab = connected_components(G, directed=False)
    inv = {v: k for k, v in nodes.items()}
    comps = {}
    for n, l in enumerate(lab):
        comps.setdefault(l, []).append(inv[n][0])
    expected = sorted(sorted(fs) for fs in comps.values() if len(fs) == len(set(fs)) and len(fs) >= 2)
    got = sorted(sorted(t.frames) for t in tracks)
    assert got == expected


def test_track_validation():
    with pytest.raises(ValidationError):
        Track([F("A", 0)], [[1, 2]])
    with pytest.raises(ValidationError):
        Track([F("A", 0), F("A", 0)], [[1, 2], [3, 4]])


# ---------------------------------------------------------------------------
# triangulation


def test_orthogonal_rays_meet_exactly():
    X = np.array([1.0, 2.0, 3.0])
    c = np.array([[0.0, 2.0, 3.0], [1.0, 0.0, 3.0]])
    d = X - c
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    P, _ = midpoint_batch(c, d, np.array([0, 0]), 1)
    np.testing.assert_allclose(P[0], X, atol=1e-9)
    _, cond = midpoint_batch(c, np.array([[1.0, 0, 0], [1.0, 0, 0]]), np.array([0, 0]), 1)
    assert cond[0] < 1e-12


def test_parallel_rays_rejected(fisheye):
    poses = {F("A", 0): RigidPose(np.eye(3), [0, 0, 0]), F("A", 1): RigidPose(np.eye(3), [0, 0, 1.0])}
    x = project(np.array([0.0, 0.0, 5.0]), fisheye)
    out = triangulate([F("A", 0), F("A", 1)], np.array([x, x]), poses, {"A": fisheye}, SfmConfig())
    assert out is None


def test_noise_free_tracks_triangulate_exactly(fisheye):
    rng = np.random.default_rng(7)
    poses = {F("A", t): RigidPose(np.eye(3), [0.4 * t, 0.0, 0.0]) for t in range(3)}
    for _ in range(50):
        X = np.r_[rng.uniform(-1, 1, 2), rng.uniform(3, 6)]
        frames = list(poses)
        px = np.array([project(poses[f].inverse().apply(X), fisheye) for f in frames])
        out = triangulate(frames, px, poses, {"A": fisheye}, SfmConfig())
        assert out is not None
        assert np.linalg.norm(out - X) < 1e-6


# ---------------------------------------------------------------------------
# bundle adjustment internals


def test_huber_branches():
    d = 1.5
    s = np.array([0.0, 0.5, 1.5, 3.0, 10.0])
    h = huber(s, d)
    np.testing.assert_array_equal(h[:3], s[:3] ** 2)
    np.testing.assert_allclose(h[3:], 2 * d * s[3:] - d * d)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 50.0), st.floats(0.1, 5.0))
def test_huber_quadratic_then_linear(s, delta):
    if s <= delta:
        assert huber(s, delta) == s * s
    else:
        assert huber(s + 1.0, delta) - huber(s, delta) == pytest.approx(2 * delta, rel=1e-9)


def _perturbed(st, block, k, eps):
    st = st.copy()
    d = np.zeros(6)
    d[k % 6] = eps
    T = se3_exp(d)
    if block[0] == "A":
        i = block[1]
        P = T @ RigidPose(st.AR[i], st.At[i])
        st.AR[i], st.At[i] = P.rotation, P.translation
    elif block[0] == "B":
        i = block[1]
        P = T @ RigidPose(st.BR[i], st.Bt[i])
        st.BR[i], st.Bt[i] = P.rotation, P.translation
    else:
        st.X[block[1], k % 3] += eps
    return st


def test_jacobians_match_central_differences(small_problem):
    rig, truth, _ = small_problem
    rng = np.random.default_rng(0)
    prob, st0 = build_problem(truth, rig)
    worst = 0.0
    for trial in range(100):
        st = st0.copy()
        st.X = st.X + rng.normal(scale=0.01, size=st.X.shape)
        e, JA, JB, JX = residuals(prob, st, want_jac=True)
        o = rng.integers(len(prob.uv))
        kind = rng.choice(["A", "B", "X"])
        k = int(rng.integers(6 if kind != "X" else 3))
        idx = {"A": prob.slot[o], "B": prob.cam[o], "X": prob.point[o]}[kind]
        J = {"A": JA, "B": JB, "X": JX}[kind][o][:, k]
        h = 1e-6
        ep = residuals(prob, _perturbed(st, (kind, idx), k, h))[0][o]
        em = residuals(prob, _perturbed(st, (kind, idx), k, -h))[0][o]
        fd = (ep - em) / (2 * h)
        scale = max(np.abs(fd).max(), 1e-3)
        worst = max(worst, np.abs(J - fd).max() / scale)
    assert worst < 1e-5


def test_prior_jacobian_matches_differences():
    rig = perturb_priors(make_default_rig(), 0.02, 1.0, seed=1)
    truth = make_default_rig()
    rec = Reconstruction(np.zeros((1, 3)), [Track([F("L1side", 0), F("R1side", 0)], [[1, 1], [2, 2]])],
                         {0: RigidPose.identity()}, {c.id: c.prior for c in truth.cameras})
    prob, st = build_problem(rec, rig)
    r, J = prior_terms(prob, st, 1e4)
    c = 0 if prob.ref != 0 else 1
    for k in range(6):
        h = 1e-7
        rp = prior_terms(prob, _perturbed(st, ("B", c), k, h), 1e4)[0][c]
        rm = prior_terms(prob, _perturbed(st, ("B", c), k, -h), 1e4)[0][c]
        np.testing.assert_allclose(J[c][:, k], (rp - rm) / (2 * h), rtol=1e-5, atol=1e-4)


def test_gauge_invariance_of_reprojection_cost(small_problem):
    rig, truth, noisy = small_problem
    prob, st = build_problem(noisy, rig)
    cfg = SfmConfig()
    base = total_cost(prob, st, cfg)[1]
    G = se3_exp(np.array([0.3, -0.2, 0.5, 0.1, -0.2, 0.3]))
    moved = st.copy()
    for i in range(len(moved.AR)):
        P = G @ RigidPose(moved.AR[i], moved.At[i])
        moved.AR[i], moved.At[i] = P.rotation, P.translation
    moved.X = G.apply(moved.X)
    assert total_cost(prob, moved, cfg)[1] == pytest.approx(base, rel=1e-10)


def test_noise_free_ba_converges_to_truth():
    rig, truth, _ = make_ba_problem(n_times=6, n_points=400, seed=3, pixel_noise=0.0,
                                    point_noise=0.0, pose_noise=0.0)
    rng = np.random.default_rng(1)
    start = truth.copy()
    start.points = truth.points + rng.normal(scale=0.01, size=truth.points.shape)
    rec, rep = bundle_adjust(start, rig, SfmConfig(lm_tolerance=1e-12, lm_max_iters=100),
                             prune_outliers=False)
    assert rep.final_cost < 1e-10
    assert np.abs(rec.points - truth.points).max() < 1e-6


def test_cost_is_monotone_over_accepted_steps(small_problem):
    rig, _, noisy = make_ba_problem(n_times=6, n_points=400, seed=4, pixel_noise=1.0)
    _, rep = bundle_adjust(noisy, rig, SfmConfig(), prune_outliers=False)
    h = np.asarray(rep.cost_history)
    assert np.all(np.diff(h) <= 0)
    assert rep.converged


def test_prior_deviation_shrinks_as_one_over_lambda():
    """Huge prior weights pin the extrinsics; the residual offset is gradient / (2 lambda)."""
    rig0, truth, noisy = make_ba_problem(n_times=6, n_points=400, seed=5, pixel_noise=1.0)
    rig = perturb_priors(rig0, 0.02, 1.0, seed=2)
    dev = []
    for lam in (1e12, 1e14):
        start = noisy.copy()
        start.local_extrinsics = {c.id: c.prior for c in rig.cameras}
        rec, _ = bundle_adjust(start, rig, SfmConfig(lambda_prior=lam), prune_outliers=False)
        dev.append(max(np.linalg.norm(se3_log(rec.local_extrinsics[c.id] @ c.prior.inverse()).vector())
                       for c in rig.cameras))
    assert dev[0] < 1e-7
    assert dev[0] / dev[1] == pytest.approx(100.0, rel=0.01)


def test_reference_camera_stays_fixed():
    rig, _, noisy = make_ba_problem(n_times=6, n_points=300, seed=6, pixel_noise=1.0)
    rec, _ = bundle_adjust(noisy, rig, SfmConfig(), prune_outliers=False)
    ref = rec.local_extrinsics[rig.reference]
    np.testing.assert_array_equal(ref.rotation, np.eye(3))
    np.testing.assert_array_equal(ref.translation, np.zeros(3))


# ---------------------------------------------------------------------------
# initialization


def _scene_pairs(rig, traj, X, frames_per_pair):
    """Exact tracks and verified pair geometry for a point field."""
    obs = {}
    for f in {f for pr in frames_per_pair for f in pr}:
        cam = rig.camera(f.camera)
        T = (traj[f.t] @ cam.prior).inverse()
        P = T.apply(X)
        ok = P[:, 2] > 0.2
        ok &= np.arctan2(np.hypot(P[:, 0], P[:, 1]), np.maximum(P[:, 2], 1e-9)) < 1.2
        uv = np.full((len(X), 2), np.nan)
        uv[ok] = project(P[ok], cam.intrinsics)
        ok &= (uv[:, 0] >= 0) & (uv[:, 0] < cam.intrinsics.width) & (uv[:, 1] >= 0) & (uv[:, 1] < cam.intrinsics.height)
        obs[f] = (ok, uv)
    pairs = {}
    for a, b in frames_per_pair:
        ok = obs[a][0] & obs[b][0]
        if ok.sum() < 8:
            continue
        Ta = traj[a.t] @ rig.camera(a.camera).prior
        Tb = traj[b.t] @ rig.camera(b.camera).prior
        rel = Tb.inverse() @ Ta
        E = essential_from_pose(rel.rotation, rel.translation)
        pairs[(a, b)] = PairGeometry(E, matchset(obs[a][1][ok], obs[b][1][ok]))
    return pairs


def _field(n, rng):
    return np.column_stack([rng.uniform(-2.5, 2.5, n), rng.uniform(-1.2, 1.2, n), rng.uniform(0.2, 1.6, n)])


def _portal_traj(rig, n_t, speed):
    from rigsfm.synth.rig import lab_from_rig
    L = lab_from_rig()
    return {t: RigidPose(np.eye(3), [-1.5 + speed * t, 0, 0]).inverse() @ L for t in range(n_t)}


def _all_pairs(rig, n_t):
    ids = rig.ids
    out = []
    for t in range(n_t):
        for i in range(len(ids)):
            for j in range(i + 1, len(ids)):
                if rig.adjacency[i, j]:
                    out.append((F(ids[i], t), F(ids[j], t)))
        if t + 1 < n_t:
            out += [(F(c, t), F(c, t + 1)) for c in ids]
    return [tuple(sorted(p)) for p in out]


def test_initialize_constant_velocity_is_collinear_and_metric():
    rig = make_default_rig()
    rng = np.random.default_rng(2)
    n_t = 6
    traj = _portal_traj(rig, n_t, 0.25)
    X = _field(1500, rng)
    pairs = _scene_pairs(rig, traj, X, _all_pairs(rig, n_t))
    tracks = build_tracks({e: p.matches for e, p in pairs.items()})
    rec = initialize(tracks, rig, pairs, SfmConfig())
    ts = sorted(rec.rig_trajectory)
    assert len(ts) == n_t
    c = np.array([rec.rig_trajectory[t].translation for t in ts])
    d = c[1:] - c[0]
    u = d[-1] / np.linalg.norm(d[-1])
    angles = [np.degrees(np.arccos(np.clip(abs(v @ u) / np.linalg.norm(v), -1, 1))) for v in d]
    assert max(angles) < 5.0
    # metric scale: step length matches the simulated 0.25 m per frame within 10%
    steps = np.linalg.norm(np.diff(c, axis=0), axis=1)
    assert np.all(np.abs(steps / 0.25 - 1) < 0.1)


def test_initialize_stationary_gives_identity_motion():
    rig = make_default_rig()
    rng = np.random.default_rng(3)
    traj = _portal_traj(rig, 4, 0.0)
    X = _field(1500, rng)
    pairs = _scene_pairs(rig, traj, X, [p for p in _all_pairs(rig, 4) if p[0].t == p[1].t])
    tracks = build_tracks({e: p.matches for e, p in pairs.items()})
    rec = initialize(tracks, rig, pairs, SfmConfig())
    T0 = rec.rig_trajectory[min(rec.rig_trajectory)]
    for T in rec.rig_trajectory.values():
        D = T0.inverse() @ T
        assert np.linalg.norm(D.translation) < 1e-3
        assert np.abs(D.rotation - np.eye(3)).max() < 1e-3


def test_initialize_without_tracks_fails():
    with pytest.raises(InitializationError):
        initialize([], make_default_rig())


def test_extrinsics_from_pairs_recovers_rotations():
    rig = make_default_rig()
    rng = np.random.default_rng(4)
    traj = _portal_traj(rig, 3, 0.3)
    X = _field(2000, rng)
    pairs = _scene_pairs(rig, traj, X, [p for p in _all_pairs(rig, 3) if p[0].t == p[1].t])
    ext = extrinsics_from_pairs(rig, pairs)
    for c in rig.cameras:
        R = ext[c.id].rotation.T @ c.prior.rotation
        assert np.degrees(np.arccos(np.clip((np.trace(R) - 1) / 2, -1, 1))) < 0.01


# ---------------------------------------------------------------------------
# metrics


def test_metrics_hand_computed_fixture(fisheye):
    from rigsfm.geometry import RigCamera, RigConfig
    rig = RigConfig((RigCamera("A", fisheye, RigidPose.identity()),
                     RigCamera("B", fisheye, RigidPose(np.eye(3), [0.5, 0, 0]))), "A",
                    np.array([[0, 1], [1, 0]]))
    traj = {0: RigidPose.identity(), 1: RigidPose(np.eye(3), [0.2, 0, 0])}
    ext = {"A": rig.camera("A").prior, "B": rig.camera("B").prior}
    X = np.array([[0.1, 0.0, 4.0], [0.3, 0.2, 5.0], [-0.2, 0.1, 3.0]])
    offsets = [[1.0, 0.0], [0.0, 2.0], [3.0, 4.0]]   # norms 1, 2, 5
    tracks = []
    specs = [[F("A", 0), F("B", 0)], [F("A", 0), F("A", 1), F("B", 1)], [F("B", 0), F("B", 1)]]
    k = 0
    errs = []
    for j, frames in enumerate(specs):
        px = []
        for f in frames:
            T = (traj[f.t] @ ext[f.camera]).inverse()
            u = project(T.apply(X[j]), fisheye)
            off = np.array(offsets[k % 3]) if k < 3 else np.zeros(2)
            errs.append(np.linalg.norm(off))
            px.append(u + off)
            k += 1
        tracks.append(Track(frames, np.array(px)))
    rec = Reconstruction(X, tracks, traj, ext)
    rec.refresh_registered()
    all_frames = [F(c, t) for c in "AB" for t in range(3)]
    m = compute_metrics(rec, rig, all_frames)
    assert m["R_reg"] == 4 / 6
    assert m["N_pts"] == 3
    assert m["L_track"] == 7 / 3
    assert m["E_reproj"] == pytest.approx(8.0 / 7, abs=1e-9)


def test_metrics_empty_reconstruction():
    m = compute_metrics(None, make_default_rig(), [F("L1side", 0)])
    assert m["empty"] and m["N_pts"] == 0
