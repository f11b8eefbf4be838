"""Motion-gated instance selection, anchor-locked tracking and mask bifurcation.

Masks are plain ``(H, W)`` boolean numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import NoMotionError, NoTargetError, ShapeError, ValidationError

MaskRaster = np.ndarray

SCORE_WEIGHTS = (6.0, 2.0, 0.10, 0.75, 0.25)
_STRUCT3 = np.ones((3, 3), dtype=bool)


def empty_mask(height: int, width: int) -> MaskRaster:
    return np.zeros((height, width), dtype=bool)


def _check_same(a: MaskRaster, b: MaskRaster):
    if a.shape != b.shape:
        raise ShapeError(f"mask shapes differ: {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# background subtraction


@dataclass
class BackgroundModel:
    """Per-pixel running mean/variance background model.

    Foreground where ``|I - mean| > max(k_sigma * std, sigma_floor)``. Only
    pixels classified as background update the statistics, so a passing
    object does not bleed into the model.
    """

    alpha: float = 0.05
    k_sigma: float = 3.0
    sigma_floor: float = 5.0
    mean: np.ndarray | None = None
    var: np.ndarray | None = None

    @property
    def initialized(self) -> bool:
        return self.mean is not None


def motion_mask(frame_gray, bg_model: BackgroundModel) -> tuple[MaskRaster, BackgroundModel]:
    frame = np.asarray(frame_gray, dtype=float)
    if frame.ndim != 2:
        raise ShapeError(f"expected a 2D grayscale frame, got shape {frame.shape}")
    if not bg_model.initialized:
        model = BackgroundModel(bg_model.alpha, bg_model.k_sigma, bg_model.sigma_floor,
                                frame.copy(), np.zeros_like(frame))
        return empty_mask(*frame.shape), model
    if frame.shape != bg_model.mean.shape:
        raise ShapeError(f"frame {frame.shape} does not match model {bg_model.mean.shape}")
    diff = frame - bg_model.mean
    thresh = np.maximum(bg_model.k_sigma * np.sqrt(bg_model.var), bg_model.sigma_floor)
    raw = np.abs(diff) > thresh
    a = bg_model.alpha
    bg = ~raw
    mean = bg_model.mean + np.where(bg, a * diff, 0.0)
    var = np.where(bg, (1 - a) * bg_model.var + a * diff * diff, bg_model.var)
    mask = ndimage.binary_opening(raw, structure=_STRUCT3)
    mask = ndimage.binary_closing(mask, structure=_STRUCT3)
    return mask, BackgroundModel(a, bg_model.k_sigma, bg_model.sigma_floor, mean, var)


def motion_masks(frames: Sequence[np.ndarray], **model_kw) -> list[MaskRaster]:
    model = BackgroundModel(**model_kw)
    out = []
    for f in frames:
        m, model = motion_mask(f, model)
        out.append(m)
    return out


# ---------------------------------------------------------------------------
# scoring


def motion_energy(motion: MaskRaster) -> float:
    """Fraction of the image domain flagged as moving."""
    m = np.asarray(motion, dtype=bool)
    return float(np.count_nonzero(m)) / m.size


@dataclass(frozen=True)
class GateConfig:
    tau_track: float = 0.3
    G: int = 5
    boundary_fraction: float = 0.1
    top_k_anchors: int = 5
    closing_radius: int = 2
    area_ema_alpha: float = 0.2
    min_area_ratio: float = 0.35
    iou_epsilon: float = 1e-6
    smoothing_window: int = 5
    motion_gating: bool = True

    def __post_init__(self):
        if not 0 <= self.tau_track <= 1:
            raise ValidationError("tau_track must be in [0, 1]")
        if self.G < 0 or self.closing_radius < 0 or self.top_k_anchors < 1:
            raise ValidationError("G, closing_radius must be >= 0 and top_k_anchors >= 1")
        if not 0 <= self.boundary_fraction < 0.5:
            raise ValidationError("boundary_fraction must be in [0, 0.5)")
        if not (0 <= self.area_ema_alpha <= 1 and 0 <= self.min_area_ratio <= 1):
            raise ValidationError("area_ema_alpha and min_area_ratio must be in [0, 1]")
        if not self.iou_epsilon > 0 or self.smoothing_window < 1:
            raise ValidationError("iou_epsilon must be positive and smoothing_window >= 1")


def smooth_energies(energies: Sequence[float], window: int) -> np.ndarray:
    e = np.asarray(energies, dtype=float)
    if window <= 1:
        return e.copy()
    return ndimage.uniform_filter1d(e, size=window, mode="nearest")


def _anchor_range(n: int, boundary_fraction: float) -> tuple[int, int]:
    b = math.ceil(n * boundary_fraction)
    lo, hi = b, n - b
    if hi <= lo:
        lo, hi = 0, n
    return lo, hi


def candidate_anchor_frames(energies: Sequence[float], cfg: GateConfig) -> list[int]:
    """Top-k frames by smoothed energy inside the boundary-trimmed range."""
    e = np.asarray(energies, dtype=float)
    if len(e) < 3:
        raise ValidationError("need at least 3 frames to pick an anchor")
    if not np.any(e > 0):
        raise NoMotionError("motion energy is zero everywhere")
    s = smooth_energies(e, cfg.smoothing_window)
    lo, hi = _anchor_range(len(e), cfg.boundary_fraction)
    idx = np.arange(lo, hi)
    # stable sort on -s keeps the earliest index first among ties
    order = idx[np.argsort(-s[lo:hi], kind="stable")]
    order = [int(i) for i in order if s[i] > 0]
    if not order:
        raise NoMotionError("no motion inside the anchor search range")
    return order[: cfg.top_k_anchors]


def select_anchor(energies: Sequence[float], cfg: GateConfig = GateConfig()) -> int:
    return candidate_anchor_frames(energies, cfg)[0]


def iou(a: MaskRaster, b: MaskRaster, eps: float = 1e-6) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    _check_same(a, b)
    inter = np.count_nonzero(a & b)
    union = np.count_nonzero(a | b)
    return inter / (union + eps)


@dataclass(frozen=True)
class InstanceProposal:
    mask: MaskRaster
    det_score: float

    def __post_init__(self):
        if not 0 <= self.det_score <= 1:
            raise ValidationError(f"det_score {self.det_score} outside [0, 1]")


@dataclass
class TrackState:
    reference_area: float = 0.0
    previous_mask: MaskRaster | None = None
    gap_count: int = 0
    active_interval: tuple[int, int] | None = None


def area_similarity(area: float, reference: float) -> float:
    if reference <= 0:
        return 0.0
    hi = max(area, reference)
    return min(area, reference) / hi if hi > 0 else 0.0


def score_terms(candidate: InstanceProposal, motion: MaskRaster | None,
                prev: MaskRaster | None, state: TrackState, eps: float = 1e-6) -> np.ndarray:
    """The five raw terms of the selection score, before weighting."""
    m = np.asarray(candidate.mask, dtype=bool)
    area = float(np.count_nonzero(m))
    motion_iou = iou(m, motion, eps) if motion is not None else 0.0
    prev_iou = iou(m, prev, eps) if prev is not None else 0.0
    return np.array([motion_iou, prev_iou, math.log(area + 1.0),
                     area_similarity(area, state.reference_area), candidate.det_score])


def score_instance(candidate: InstanceProposal, motion: MaskRaster | None,
                   prev: MaskRaster | None, state: TrackState, eps: float = 1e-6) -> float:
    """``6 IoU(S,B) + 2 IoU(S,M_prev) + 0.10 log(|S|+1) + 0.75 AreaSim + 0.25 DetScore``."""
    terms = score_terms(candidate, motion, prev, state, eps)
    w = SCORE_WEIGHTS
    return float(w[0] * terms[0] + w[1] * terms[1] + w[2] * terms[2]
                 + w[3] * terms[3] + w[4] * terms[4])


# ---------------------------------------------------------------------------
# tracking


@dataclass
class TrackResult:
    masks: list[MaskRaster]
    interval: tuple[int, int]          # inclusive frame range
    anchor: int
    anchor_instance: int
    selected: list[int | None] = field(default_factory=list)
    presence: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))


def close_presence(presence: np.ndarray, radius: int) -> np.ndarray:
    """1D binary closing; fills false gaps of length <= 2 * radius."""
    p = np.asarray(presence, dtype=bool)
    if radius <= 0 or not p.any():
        return p.copy()
    pad = np.pad(p, radius, constant_values=False)
    closed = ndimage.binary_closing(pad, structure=np.ones(2 * radius + 1, dtype=bool))
    closed = closed[radius:-radius]
    # closing never extends past the outermost true samples
    idx = np.flatnonzero(p)
    closed[: idx[0]] = False
    closed[idx[-1] + 1:] = False
    return closed | p


def _track_direction(proposals, motions, cfg, state: TrackState, start: int, step: int,
                     selected: list, accepted: list):
    n = len(proposals)
    t = start + step
    while 0 <= t < n:
        prev = state.previous_mask
        best, best_score = None, -np.inf
        for i, cand in enumerate(proposals[t]):
            m = np.asarray(cand.mask, dtype=bool)
            area = np.count_nonzero(m)
            if iou(m, prev, cfg.iou_epsilon) < cfg.tau_track:
                continue
            if area < cfg.min_area_ratio * state.reference_area:
                continue
            motion = motions[t] if cfg.motion_gating else None
            s = score_instance(cand, motion, prev, state, cfg.iou_epsilon)
            if s > best_score:
                best, best_score = i, s
        if best is None:
            state.gap_count += 1
            if state.gap_count > cfg.G:
                break
        else:
            m = np.asarray(proposals[t][best].mask, dtype=bool)
            selected[t] = best
            accepted[t] = m
            state.previous_mask = m
            state.gap_count = 0
            a = cfg.area_ema_alpha
            state.reference_area = (1 - a) * state.reference_area + a * np.count_nonzero(m)
        t += step


def track_sequence(proposals: Sequence[Sequence[InstanceProposal]],
                   motions: Sequence[MaskRaster], cfg: GateConfig = GateConfig(),
                   shape: tuple[int, int] | None = None) -> TrackResult:
    """Anchor-locked bidirectional tracking of the moving instance.

    Frames outside the final active interval (and unresolved gap frames
    inside it) carry empty masks.
    """
    n = len(proposals)
    if len(motions) != n:
        raise ShapeError(f"{n} proposal frames but {len(motions)} motion masks")
    if shape is None:
        shape = np.asarray(motions[0]).shape
    energies = [motion_energy(m) for m in motions]
    try:
        anchors = candidate_anchor_frames(energies, cfg)
    except NoMotionError as e:
        raise NoTargetError(str(e)) from None

    best = None
    for t in anchors:
        for i, cand in enumerate(proposals[t]):
            if not np.any(cand.mask):
                continue
            motion = motions[t] if cfg.motion_gating else None
            s = score_instance(cand, motion, None, TrackState(), cfg.iou_epsilon)
            if best is None or s > best[0]:
                best = (s, t, i)
    if best is None:
        raise NoTargetError("no nonempty proposal at any candidate anchor frame")
    _, anchor, inst = best

    selected: list[int | None] = [None] * n
    accepted: list[MaskRaster | None] = [None] * n
    m0 = np.asarray(proposals[anchor][inst].mask, dtype=bool)
    selected[anchor] = inst
    accepted[anchor] = m0
    area0 = float(np.count_nonzero(m0))
    for step in (1, -1):
        state = TrackState(reference_area=area0, previous_mask=m0)
        _track_direction(proposals, motions, cfg, state, anchor, step, selected, accepted)

    presence = np.array([a is not None for a in accepted])
    closed = close_presence(presence, cfg.closing_radius)
    lo = hi = anchor
    while lo > 0 and closed[lo - 1]:
        lo -= 1
    while hi < n - 1 and closed[hi + 1]:
        hi += 1
    masks = []
    for t in range(n):
        if lo <= t <= hi and accepted[t] is not None:
            masks.append(accepted[t].copy())
        else:
            masks.append(empty_mask(*shape))
            if not lo <= t <= hi:
                selected[t] = None
    final_presence = np.zeros(n, dtype=bool)
    final_presence[lo:hi + 1] = True
    return TrackResult(masks, (lo, hi), anchor, inst, selected, final_presence)


# ---------------------------------------------------------------------------
# bifurcated masks


def build_rigid_mask(vehicle: MaskRaster, wheels: MaskRaster) -> MaskRaster:
    v = np.asarray(vehicle, dtype=bool)
    w = np.asarray(wheels, dtype=bool)
    _check_same(v, w)
    return v & ~w


def build_render_mask(vehicle: MaskRaster) -> MaskRaster:
    return np.array(vehicle, dtype=bool, copy=True)
