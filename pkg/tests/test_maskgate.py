import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rigsfm.errors import NoMotionError, ShapeError
from rigsfm.maskgate import (BackgroundModel, GateConfig, InstanceProposal, TrackState,
                             build_render_mask, build_rigid_mask, close_presence, iou,
                             motion_energy, motion_mask, motion_masks, score_instance,
                             select_anchor, track_sequence)
from rigsfm.synth.sequences import make_gate_sequence

masks32 = arrays(np.bool_, (32, 32))


def _square(shape, x, y, s):
    m = np.zeros(shape, dtype=bool)
    m[y:y + s, x:x + s] = True
    return m


def test_constant_video_gives_empty_masks():
    frames = [np.full((40, 50), 100.0)] * 6
    out = motion_masks(frames)
    assert all(not m.any() for m in out)


def test_first_frame_initializes_model():
    m, model = motion_mask(np.zeros((10, 12)), BackgroundModel())
    assert not m.any() and model.initialized


def test_illumination_step_below_floor():
    model = BackgroundModel(sigma_floor=5.0)
    _, model = motion_mask(np.full((30, 30), 80.0), model)
    m, _ = motion_mask(np.full((30, 30), 82.0), model)
    assert not m.any()


def test_moving_square_is_detected():
    shape = (80, 100)
    frames, truths = [], []
    for t in range(15):
        f = np.full(shape, 50.0)
        sq = np.zeros(shape, dtype=bool)
        if t >= 5:
            sq = _square(shape, 5 + 4 * (t - 5), 30, 20)
            f[sq] = 200.0
        frames.append(f)
        truths.append(sq)
    out = motion_masks(frames)
    for t in range(5, 15):
        assert iou(out[t], truths[t]) >= 0.8


def test_motion_mask_shape_mismatch():
    _, model = motion_mask(np.zeros((10, 10)), BackgroundModel())
    with pytest.raises(ShapeError):
        motion_mask(np.zeros((11, 10)), model)


def test_motion_energy():
    assert motion_energy(np.zeros((10, 10), bool)) == 0
    assert motion_energy(np.ones((10, 10), bool)) == 1
    m = np.zeros((10, 10), bool)
    m[:5, :5] = True
    assert motion_energy(m) == 0.25


@given(masks32, masks32)
def test_motion_energy_additive_on_disjoint(a, b):
    b = b & ~a
    assert math.isclose(motion_energy(a | b), motion_energy(a) + motion_energy(b))


def test_select_anchor_examples():
    cfg = GateConfig(boundary_fraction=0.0, smoothing_window=1)
    assert select_anchor([0, 0, 1, 0, 0], cfg) == 2
    assert select_anchor([0, 0.5, 0.5, 0], cfg) == 1
    e = np.zeros(100)
    e[0] = 10.0
    e[40] = 1.0
    idx = select_anchor(e, GateConfig(boundary_fraction=0.1))
    assert 10 <= idx < 90
    with pytest.raises(NoMotionError):
        select_anchor([0, 0, 0, 0], cfg)


def test_select_anchor_matches_bruteforce(rng):
    for _ in range(50):
        e = rng.random(40) * (rng.random(40) < 0.5)
        cfg = GateConfig(boundary_fraction=0.1, smoothing_window=1)
        lo, hi = 4, 36
        best = max(range(lo, hi), key=lambda i: (e[i], -i))
        if e[lo:hi].max() > 0:
            assert select_anchor(e, cfg) == best


def test_iou_examples():
    a = _square((30, 30), 0, 0, 10)
    assert iou(a, a, 1e-6) == pytest.approx(100 / (100 + 1e-6), rel=1e-15)
    assert iou(a, _square((30, 30), 15, 15, 10)) == 0
    b = np.zeros((30, 30), bool)
    b[0:10, 5:15] = True
    assert iou(a, b, 1e-6) == 50 / (150 + 1e-6)
    assert iou(np.zeros((4, 4), bool), np.zeros((4, 4), bool)) == 0
    with pytest.raises(ShapeError):
        iou(a, np.zeros((3, 3), bool))


def test_score_examples():
    shape = (50, 50)
    empty = np.zeros(shape, bool)
    s = score_instance(InstanceProposal(empty, 0.6), empty, None, TrackState())
    assert s == pytest.approx(0.25 * 0.6, abs=1e-15)

    m = np.zeros((40, 50), bool)
    m[:20, :] = True  # area 1000
    s = score_instance(InstanceProposal(m, 1.0), m, m, TrackState(reference_area=1000))
    eps_ratio = 1000 / (1000 + 1e-6)
    expected = 6 * eps_ratio + 2 * eps_ratio + 0.10 * math.log(1001) + 0.75 + 0.25
    assert s == pytest.approx(expected, abs=1e-12)
    assert s == pytest.approx(9.69, abs=0.01)


def test_score_difference_motion_overlap():
    shape = (40, 40)
    motion = _square(shape, 0, 0, 10)
    moving = np.zeros(shape, bool)
    moving[0:10, 0:8] = True      # IoU with motion = 80/100
    static = np.zeros(shape, bool)
    static[20:30, 20:28] = True   # same area, no overlap
    st_ = TrackState()
    a = score_instance(InstanceProposal(moving, 0.5), motion, None, st_)
    b = score_instance(InstanceProposal(static, 0.5), motion, None, st_)
    assert a - b == pytest.approx(6 * 80 / (100 + 1e-6), abs=1e-12)


@settings(max_examples=50)
@given(masks32, masks32, masks32, st.floats(0, 1), st.floats(0, 1))
def test_score_monotone_in_det(s, b, p, d1, d2):
    lo, hi = sorted((d1, d2))
    st_ = TrackState(reference_area=50)
    assert (score_instance(InstanceProposal(s, lo), b, p, st_)
            <= score_instance(InstanceProposal(s, hi), b, p, st_))


@given(masks32, masks32)
def test_rigid_mask_set_identities(v, w):
    r = build_rigid_mask(v, w)
    assert not (r & w).any()
    assert np.array_equal(r | (v & w), v)
    assert not (r & ~v).any()


def test_rigid_mask_examples():
    v = np.zeros((50, 50), bool)
    v[:20, :50] = True   # area 1000
    assert np.array_equal(build_rigid_mask(v, np.zeros_like(v)), v)
    assert not build_rigid_mask(v, np.ones_like(v)).any()
    w = np.zeros_like(v)
    w[:4, :] = True      # 200 pixels of the vehicle
    w[30:, :] = True
    assert build_rigid_mask(v, w).sum() == 800
    with pytest.raises(ShapeError):
        build_rigid_mask(v, np.zeros((2, 2), bool))


def test_render_mask_identity(rng):
    for _ in range(3):
        m = rng.random((20, 30)) < 0.4
        r = build_render_mask(m)
        assert np.array_equal(r, m) and r is not m


def test_close_presence():
    p = np.array([0, 1, 1, 0, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 1], bool)
    c = close_presence(p, 2)
    assert c[1:8].all() and not c[0] and not c[8:14].any() and c[14]


def _run(seq, cfg=GateConfig()):
    motions = motion_masks(seq.frames)
    return track_sequence(seq.proposals, motions, cfg)


def test_tracking_single_instance_exact_interval():
    seq = make_gate_sequence(3, n_distractors=0, clutter_rate=0.0)
    res = _run(seq)
    assert res.interval == seq.interval()
    assert np.array_equal(res.presence, seq.visible)


def test_tracking_bridges_detector_gap():
    seq = make_gate_sequence(11, n_frames=80, detector_gap=(40, 42), speed=1.5)
    lo, hi = seq.interval()
    assert lo < 40 and hi > 42
    res = _run(seq, GateConfig(G=5))
    assert res.interval == (lo, hi)
    assert res.presence[40:43].all()


def test_tracking_never_picks_distractor_after_exit():
    seq = make_gate_sequence(5)
    res = _run(seq)
    lo, hi = seq.interval()
    assert abs(res.interval[1] - hi) <= 1
    for t in range(res.interval[1] + 1, len(seq.frames)):
        assert not res.masks[t].any()
    for t in range(len(seq.frames)):
        assert iou(res.masks[t], seq.distractor_mask) == 0


def test_strict_lock_invariant():
    cfg = GateConfig()
    for seed in range(10):
        seq = make_gate_sequence(seed)
        res = _run(seq, cfg)
        prev = None
        for t in range(res.anchor, len(seq.frames)):
            if res.masks[t].any():
                if prev is not None:
                    assert iou(res.masks[t], prev) >= cfg.tau_track
                prev = res.masks[t]
