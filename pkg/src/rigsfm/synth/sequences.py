"""2D drive-by sequences for exercising the mask gate.

A textured rectangle crosses a static textured background once, a parked
"distractor" rectangle sits elsewhere in the frame, and a fake detector
emits instance proposals for both.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..maskgate import InstanceProposal


@dataclass
class GateSequence:
    frames: list[np.ndarray]
    proposals: list[list[InstanceProposal]]
    target_masks: list[np.ndarray]      # full visible footprint, empty when off-screen
    visible: np.ndarray                 # ground-truth presence interval (bool per frame)
    target_index: list[int | None]      # index of the target proposal in each frame
    distractor_mask: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames[0].shape

    def interval(self) -> tuple[int, int]:
        idx = np.flatnonzero(self.visible)
        return int(idx[0]), int(idx[-1])


def _snap(v: float) -> int:
    return int(np.floor(v + 0.5))


def _rect(shape, x0, y0, w, h) -> np.ndarray:
    H, W = shape
    m = np.zeros(shape, dtype=bool)
    xs, ys = _snap(x0), _snap(y0)
    xa, xb = max(xs, 0), min(xs + w, W)
    ya, yb = max(ys, 0), min(ys + h, H)
    if xa < xb and ya < yb:
        m[ya:yb, xa:xb] = True
    return m


def make_gate_sequence(seed: int, n_frames: int = 60, height: int = 96, width: int = 128,
                       n_distractors: int = 1, detector_gap: tuple[int, int] | None = None,
                       min_visible_fraction: float = 0.5, sensor_noise: float = 2.0,
                       clutter_rate: float = 0.3, speed: float | None = None) -> GateSequence:
    rng = np.random.default_rng(seed)
    shape = (height, width)
    bg = ndimage.gaussian_filter(rng.normal(size=shape), 3.0)
    bg = 60 + 120 * (bg - bg.min()) / (np.ptp(bg) + 1e-12)

    tw, th = int(rng.integers(22, 31)), int(rng.integers(14, 21))
    ty = float(rng.uniform(height * 0.55, height - th - 2))
    draw = float(rng.uniform(3.0, 6.0))
    speed = draw if speed is None else float(speed)
    direction = 1 if rng.random() < 0.5 else -1
    t_enter = int(rng.integers(6, 16))
    if direction > 0:
        x_at = lambda t: -tw + speed * (t - t_enter)
    else:
        x_at = lambda t: width - speed * (t - t_enter)
    target_tex = rng.uniform(190, 235) + 12 * rng.normal(size=(th, tw))

    distractors = []
    for _ in range(n_distractors):
        dw = int(rng.integers(18, 40))
        dh = int(rng.integers(12, 24))
        dx = float(rng.uniform(2, width - dw - 2))
        dy = float(rng.uniform(2, height * 0.5 - dh))
        dmask = _rect(shape, dx, dy, dw, dh)
        ddet = float(rng.uniform(0.7, 1.0))
        bg = np.where(dmask, rng.uniform(10, 40) + 5 * rng.normal(size=shape), bg)
        distractors.append((dmask, ddet))
    target_det = rng.uniform(0.5, 0.95, size=n_frames)

    frames, proposals, target_masks, target_index = [], [], [], []
    visible = np.zeros(n_frames, dtype=bool)
    full_area = tw * th
    for t in range(n_frames):
        x0 = x_at(t)
        tm = _rect(shape, x0, ty, tw, th)
        frame = bg.copy()
        if tm.any():
            ys, xs = np.nonzero(tm)
            frame[ys, xs] = target_tex[ys - _snap(ty), xs - _snap(x0)]
        frame = frame + sensor_noise * rng.normal(size=shape)
        frames.append(np.clip(frame, 0, 255))
        target_masks.append(tm)

        frac = np.count_nonzero(tm) / full_area
        present = frac >= min_visible_fraction
        visible[t] = present
        missed = detector_gap is not None and detector_gap[0] <= t <= detector_gap[1]
        props: list[InstanceProposal] = []
        idx = None
        for dmask, ddet in distractors:
            props.append(InstanceProposal(dmask, ddet))
        if present and not missed:
            idx = len(props)
            props.append(InstanceProposal(tm, float(target_det[t])))
        if rng.random() < clutter_rate:
            bw, bh = int(rng.integers(4, 9)), int(rng.integers(4, 9))
            blob = _rect(shape, rng.uniform(0, width - bw), rng.uniform(0, height - bh), bw, bh)
            props.append(InstanceProposal(blob, float(rng.uniform(0.2, 0.6))))
        order = rng.permutation(len(props))
        props = [props[i] for i in order]
        if idx is not None:
            idx = int(np.flatnonzero(order == idx)[0])
        proposals.append(props)
        target_index.append(idx)

    return GateSequence(frames, proposals, target_masks, visible, target_index,
                        distractors[0][0] if distractors else np.zeros(shape, dtype=bool))
