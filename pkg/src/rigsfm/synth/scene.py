"""Synthetic drive-through of a vehicle past the portal rig.

World frame is the vehicle frame (x forward, y left, z up, origin on the
ground under the body centre). The vehicle translates along lab +x, so in
world coordinates the rig moves backwards past a static body. Wheel points
additionally spin about their axles and static background clutter moves
with the rig, which is exactly what the masks are meant to exclude.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from skimage.draw import polygon as draw_polygon
from scipy.spatial import ConvexHull, QhullError

from ..errors import ValidationError
from ..geometry import RigConfig, RigidPose, in_image, project, so3_exp
from ..maskgate import InstanceProposal
from ..matching import RawMatchSet
from ..pairgraph import FrameId, PairGraph, PairGraphConfig, build_pair_graph, frames_for
from .rig import RigLayout, lab_from_rig, make_default_rig

BODY, WHEEL, BACKGROUND = 0, 1, 2


@dataclass(frozen=True)
class VehicleConfig:
    length: float = 4.6
    width: float = 1.85
    height: float = 1.45
    clearance: float = 0.18
    roundness: float = 6.0          # superellipsoid exponent; larger is boxier
    wheel_radius: float = 0.33
    wheelbase: float = 2.7
    n_body_points: int = 1200
    n_wheel_points: int = 40        # per wheel


@dataclass(frozen=True)
class SynthConfig:
    layout: RigLayout = RigLayout()
    vehicle: VehicleConfig = VehicleConfig()
    start_x: float = -5.5           # lab x of the body centre at t = 0
    lateral_offset: float = 0.0
    speed: float = 2.0              # m/s along lab +x
    duration: float = 3.0           # s
    frame_rate: float = 10.0        # Hz
    pixel_noise: float = 0.5        # RMS magnitude of 2D pixel noise
    outlier_fraction: float = 0.0
    clutter_points: int = 0
    clutter_extent: float = 8.0     # half-length of the cluttered stretch along x
    visibility_min_points: int = 30
    pairs: PairGraphConfig = PairGraphConfig()
    image_noise: float = 0.0
    distractor: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.frame_rate <= 0 or self.duration <= 0:
            raise ValidationError("frame_rate and duration must be positive")
        if not 0 <= self.outlier_fraction < 1:
            raise ValidationError("outlier_fraction must lie in [0, 1)")
        if self.pixel_noise < 0 or self.clutter_points < 0:
            raise ValidationError("noise and clutter counts must be non-negative")

    @property
    def n_frames(self) -> int:
        return int(round(self.duration * self.frame_rate))


@dataclass(frozen=True)
class FrameObservations:
    ids: np.ndarray        # point ids, increasing
    uv_true: np.ndarray
    uv: np.ndarray         # with pixel noise


@dataclass(eq=False)
class SynthScene:
    config: SynthConfig
    rig: RigConfig                         # exact extrinsics as priors
    times: np.ndarray                      # seconds
    trajectory: list[RigidPose]            # world_from_rig per frame index
    points: np.ndarray                     # (N, 3) world points at t = 0
    kinds: np.ndarray                      # BODY / WHEEL / BACKGROUND per point
    observations: dict[FrameId, FrameObservations]
    visible: dict[FrameId, bool]
    vehicle_masks: dict[FrameId, np.ndarray]
    wheel_masks: dict[FrameId, np.ndarray]
    graph: PairGraph
    correspondences: dict[tuple[FrameId, FrameId], RawMatchSet]
    frames: dict[FrameId, np.ndarray] = field(default_factory=dict)
    proposals: dict[FrameId, list[InstanceProposal]] = field(default_factory=dict)
    wheel_geometry: tuple | None = None   # axle centres, wheel index, radius, phase per wheel point

    @property
    def n_frames(self) -> int:
        return len(self.times)

    def points_at(self, ti: int) -> np.ndarray:
        return _points_at(self, ti)

    def camera_pose(self, frame: FrameId) -> RigidPose:
        """world_from_camera."""
        return self.trajectory[frame.t] @ self.rig.camera(frame.camera).prior

    def visibility_fraction(self) -> float:
        return float(np.mean(list(self.visible.values())))

    def label_lookup(self, decimals: int = 6) -> dict:
        """``(frame, rounded noisy pixel) -> point id`` for labelling reconstructions."""
        out = {}
        for f, obs in self.observations.items():
            for pid, uv in zip(obs.ids, np.round(obs.uv, decimals)):
                out[(f, float(uv[0]), float(uv[1]))] = int(pid)
        return out


# ---------------------------------------------------------------------------
# geometry of the vehicle


def _superellipsoid(n, half, p, rng):
    d = rng.normal(size=(n, 3))
    scale = (np.abs(d / half) ** p).sum(axis=1) ** (1.0 / p)
    pts = d / scale[:, None]
    grad = np.sign(pts) * np.abs(pts / half) ** (p - 1) / half
    return pts, grad / np.linalg.norm(grad, axis=1, keepdims=True)


def _vehicle_body(vc: VehicleConfig, rng):
    half = np.array([vc.length / 2, vc.width / 2, (vc.height - vc.clearance) / 2])
    centre = np.array([0.0, 0.0, vc.clearance + half[2]])
    pts, nrm = [], []
    while sum(len(p) for p in pts) < vc.n_body_points:
        p, n = _superellipsoid(2 * vc.n_body_points, half, vc.roundness, rng)
        keep = n[:, 2] > -0.5               # the underside is never seen
        pts.append(p[keep] + centre)
        nrm.append(n[keep])
    return np.vstack(pts)[: vc.n_body_points], np.vstack(nrm)[: vc.n_body_points]


def _wheel_layout(vc: VehicleConfig, rng):
    """Per wheel-point (wheel index, radius, angle) plus the four axle centres."""
    centres = np.array([[sx * vc.wheelbase / 2, sy * (vc.width / 2 + 0.02), vc.wheel_radius]
                        for sx in (1, -1) for sy in (1, -1)])
    idx = np.repeat(np.arange(4), vc.n_wheel_points)
    rad = vc.wheel_radius * np.sqrt(rng.uniform(0.05, 1.0, len(idx)))
    ang = rng.uniform(0, 2 * np.pi, len(idx))
    return centres, idx, rad, ang


def _wheel_points(centres, idx, rad, ang, spin):
    # rolling forward along +x spins the wheel about +y
    a = ang + spin
    off = np.column_stack([rad * np.sin(a), np.zeros_like(a), rad * np.cos(a)])
    return centres[idx] + off


def _clutter(cfg: SynthConfig, rng) -> np.ndarray:
    """Static lab-frame points on the floor and two side walls."""
    n = cfg.clutter_points
    L = cfg.clutter_extent
    wall_y = cfg.layout.pillar_separation / 2 + 1.5
    kind = rng.integers(0, 3, n)
    x = rng.uniform(-L, L, n)
    floor = np.column_stack([x, rng.uniform(-wall_y, wall_y, n), np.zeros(n)])
    wall = np.column_stack([x, np.where(kind == 1, wall_y, -wall_y), rng.uniform(0, 3.0, n)])
    return np.where((kind == 0)[:, None], floor, wall)


def _points_at(scene: SynthScene, ti: int) -> np.ndarray:
    """World coordinates of every point at frame index ``ti``."""
    cfg = scene.config
    P = scene.points.copy()
    wheel = scene.kinds == WHEEL
    if wheel.any():
        centres, idx, rad, ang = scene.wheel_geometry
        spin = cfg.speed * scene.times[ti] / cfg.vehicle.wheel_radius
        P[wheel] = _wheel_points(centres, idx, rad, ang, spin)
    bg = scene.kinds == BACKGROUND
    if bg.any():
        # background is static in the lab, so it moves with the rig in world coordinates
        P[bg] = scene.points[bg] - [cfg.speed * scene.times[ti], 0.0, 0.0]
    return P


def _hull_mask(uv: np.ndarray, shape) -> np.ndarray:
    m = np.zeros(shape, dtype=bool)
    if len(uv) < 3:
        return m
    try:
        hull = ConvexHull(uv)
    except QhullError:
        return m
    v = uv[hull.vertices]
    rr, cc = draw_polygon(v[:, 1], v[:, 0], shape=shape)
    m[rr, cc] = True
    return m


def _project_valid(Pc: np.ndarray, intr) -> tuple[np.ndarray, np.ndarray]:
    """Pixels of camera-frame points inside the lens domain; invalid rows are NaN."""
    r = np.hypot(Pc[:, 0], Pc[:, 1])
    ok = (Pc[:, 2] > 0.05) & (np.arctan2(r, Pc[:, 2]) < intr.theta_max - 1e-3)
    uv = np.full((len(Pc), 2), np.nan)
    if ok.any():
        uv[ok] = project(Pc[ok], intr)
    return uv, ok


def simulate(cfg: SynthConfig = SynthConfig()) -> SynthScene:
    rng = np.random.default_rng(cfg.seed)
    rig = make_default_rig(cfg.layout)
    L = lab_from_rig(cfg.layout)
    vc = cfg.vehicle
    n = cfg.n_frames
    times = np.arange(n) / cfg.frame_rate

    body, body_n = _vehicle_body(vc, rng)
    centres, widx, wrad, wang = _wheel_layout(vc, rng)
    wheel0 = _wheel_points(centres, widx, wrad, wang, 0.0)
    wheel_n = np.zeros((len(widx), 3))
    wheel_n[:, 1] = np.sign(centres[widx, 1])
    x0 = np.array([cfg.start_x, cfg.lateral_offset, 0.0])
    clutter_lab = _clutter(cfg, rng)
    clutter_world0 = clutter_lab - x0  # world coordinates at t = 0

    points = np.vstack([body, wheel0, clutter_world0])
    kinds = np.r_[np.full(len(body), BODY), np.full(len(wheel0), WHEEL),
                  np.full(len(clutter_lab), BACKGROUND)].astype(np.int8)
    normals = np.vstack([body_n, wheel_n])

    trajectory = []
    for t in times:
        lab_from_vehicle = RigidPose(np.eye(3), x0 + [cfg.speed * t, 0.0, 0.0])
        trajectory.append(lab_from_vehicle.inverse() @ L)

    shape = (cfg.layout.height, cfg.layout.width)
    ids = rig.ids
    n_veh = len(body) + len(wheel0)
    scene = SynthScene(cfg, rig, times, trajectory, points, kinds, {}, {}, {}, {},
                       None, {}, wheel_geometry=(centres, widx, wrad, wang))
    bg_tex = {c: _texture(rng, shape) for c in ids}
    distractor = {c: _distractor_mask(rng, shape) for c in ids}
    veh_tex = 170 + 25 * ndimage.gaussian_filter(rng.normal(size=shape), 1.5)

    for ti in range(n):
        P = _points_at(scene, ti)
        for cid in ids:
            f = FrameId(cid, ti)
            cam = rig.camera(cid)
            T = scene.camera_pose(f)
            Pc = T.inverse().apply(P)
            uv, ok = _project_valid(Pc, cam.intrinsics)
            front = ok
            inside = front.copy()
            inside[front] = in_image(uv[front], cam.intrinsics)
            cam_centre = T.translation
            facing = np.zeros(len(P), dtype=bool)
            facing[:n_veh] = np.einsum("ij,ij->i", normals, cam_centre - P[:n_veh]) > 0
            vis_veh = inside[:n_veh] & facing[:n_veh]
            n_body_vis = int(vis_veh[: len(body)].sum())
            present = n_body_vis >= cfg.visibility_min_points

            if present:
                hull_pts = uv[:n_veh][front[:n_veh]]
                vmask = _hull_mask(hull_pts, shape)
                wmask = np.zeros(shape, dtype=bool)
                for w in range(4):
                    sel = np.flatnonzero(widx == w) + len(body)
                    sel = sel[vis_veh[sel]]
                    if len(sel) >= 3:
                        wmask |= _hull_mask(uv[sel], shape)
                wmask &= vmask
                if not vmask.any():
                    present = False
            if not present:
                vmask = np.zeros(shape, dtype=bool)
                wmask = np.zeros(shape, dtype=bool)
                vis_veh[:] = False

            visible_pts = np.zeros(len(P), dtype=bool)
            visible_pts[:n_veh] = vis_veh
            if len(P) > n_veh:
                bg_in = inside[n_veh:]
                if bg_in.any():
                    rows = np.flatnonzero(bg_in) + n_veh
                    pix = np.floor(uv[rows] + 0.5).astype(int)
                    pix = np.clip(pix, 0, [shape[1] - 1, shape[0] - 1])
                    occluded = vmask[pix[:, 1], pix[:, 0]]
                    visible_pts[rows[~occluded]] = True
            vid = np.flatnonzero(visible_pts)
            uv_true = uv[vid]
            sigma = cfg.pixel_noise / np.sqrt(2.0)
            noise = rng.normal(scale=sigma, size=uv_true.shape) if sigma > 0 else 0.0
            uv_obs = np.clip(uv_true + noise, 0, [shape[1] - 1e-6, shape[0] - 1e-6])
            scene.observations[f] = FrameObservations(vid, uv_true, uv_obs)
            scene.visible[f] = present
            scene.vehicle_masks[f] = vmask
            scene.wheel_masks[f] = wmask

            img = bg_tex[cid].copy()
            img[vmask] = veh_tex[vmask]
            img[wmask] = 35.0
            if cfg.image_noise > 0:
                img = img + rng.normal(scale=cfg.image_noise, size=shape)
            scene.frames[f] = np.clip(np.round(img), 0, 255).astype(np.uint8)
            props = []
            if cfg.distractor:
                props.append(InstanceProposal(distractor[cid], 0.9))
            if present:
                props.append(InstanceProposal(vmask, float(rng.uniform(0.6, 0.95))))
            scene.proposals[f] = props

    if not any(scene.visible.values()):
        raise ValidationError("the vehicle is never visible to any camera")

    scene.graph = build_pair_graph(frames_for(ids, n), rig.adjacency, cfg.pairs, ids)
    for a, b, _ in scene.graph.edge_list():
        m = _correspondences(scene, a, b, rng)
        if m is not None:
            scene.correspondences[(a, b)] = m
    return scene


def _texture(rng, shape) -> np.ndarray:
    t = ndimage.gaussian_filter(rng.normal(size=shape), 4.0)
    return 40 + 90 * (t - t.min()) / (np.ptp(t) + 1e-12)


def _distractor_mask(rng, shape) -> np.ndarray:
    H, W = shape
    h, w = int(H * 0.15), int(W * 0.2)
    y0 = int(rng.integers(2, H // 3 - h // 2))
    x0 = int(rng.integers(2, W - w - 2))
    m = np.zeros(shape, dtype=bool)
    m[y0:y0 + h, x0:x0 + w] = True
    return m


def _correspondences(scene: SynthScene, a: FrameId, b: FrameId, rng) -> RawMatchSet | None:
    oa, ob = scene.observations[a], scene.observations[b]
    common, ia, ib = np.intersect1d(oa.ids, ob.ids, assume_unique=True, return_indices=True)
    k = len(common)
    if k == 0:
        return None
    xA, xB = oa.uv[ia].copy(), ob.uv[ib].copy()
    labels = common.astype(np.int64)
    conf = rng.uniform(0.7, 1.0, size=(k, 3))
    out = rng.random(k) < scene.config.outlier_fraction
    if out.any():
        H, W = scene.vehicle_masks[a].shape
        m = int(out.sum())
        xA[out] = rng.uniform(0, [W, H], (m, 2))
        xB[out] = rng.uniform(0, [W, H], (m, 2))
        conf[out] = rng.uniform(0.0, 0.4, size=(m, 3))
        labels[out] = -1
    return RawMatchSet(xA, xB, conf[:, 0], conf[:, 1], conf[:, 2], labels)
