"""Default two-pillar, three-tier, 14-camera portal rig.

Lab frame: x along the driving direction, y to the left, z up, origin on the
ground midway between the pillars. Camera frames use x right, y down, z along
the optical axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from ..geometry import FisheyeIntrinsics, RigCamera, RigConfig, RigidPose

INCH = 0.0254
PILLAR_SEPARATION = 140 * INCH                    # 3.556 m
TIER_HEIGHTS = (16 * INCH, 55 * INCH, 97 * INCH)  # 0.406, 1.397, 2.464 m

# (tier, yaw label) per pillar; 7 cameras each
LAYOUT = ((0, "front"), (0, "rear"), (1, "front"), (1, "side"), (1, "rear"), (2, "side"), (2, "rear"))
YAW_OFFSET_DEG = {"front": -50.0, "side": 0.0, "rear": 50.0}
TIER_PITCH_DEG = (8.0, -8.0, -35.0)
REFERENCE = "L1side"

# same-pillar neighbours, expressed on (tier, yaw) keys
_NEIGHBOURS = (
    ((0, "front"), (0, "rear")), ((1, "front"), (1, "side")), ((1, "side"), (1, "rear")),
    ((2, "side"), (2, "rear")),
    ((0, "front"), (1, "front")), ((0, "rear"), (1, "rear")), ((1, "side"), (2, "side")),
    ((1, "rear"), (2, "rear")),
)


def camera_name(pillar: str, tier: int, yaw: str) -> str:
    return f"{pillar}{tier}{yaw}"


def look_rotation(direction, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """``lab_from_camera`` rotation for a camera looking along ``direction``."""
    z = np.asarray(direction, dtype=float)
    z = z / np.linalg.norm(z)
    x = np.cross(z, up)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.column_stack([x, y, z])


@dataclass(frozen=True)
class RigLayout:
    pillar_separation: float = PILLAR_SEPARATION
    tier_heights: tuple[float, float, float] = TIER_HEIGHTS
    yaw_offset_deg: tuple[tuple[str, float], ...] = tuple(YAW_OFFSET_DEG.items())
    tier_pitch_deg: tuple[float, float, float] = TIER_PITCH_DEG
    width: int = 320
    height: int = 240
    focal: float = 150.0


def lab_camera_poses(layout: RigLayout = RigLayout()) -> dict[str, RigidPose]:
    """``lab_from_camera`` for every camera of the portal."""
    yaw_off = dict(layout.yaw_offset_deg)
    poses = {}
    for pillar, side_sign in (("L", 1.0), ("R", -1.0)):
        for tier, yaw in LAYOUT:
            a = np.radians(yaw_off[yaw])
            p = np.radians(layout.tier_pitch_deg[tier])
            # side cameras face across the lane (-y for the left pillar)
            horiz = np.array([np.sin(a), -side_sign * np.cos(a), 0.0])
            d = np.cos(p) * horiz + np.array([0, 0, np.sin(p)])
            shift = {"front": -0.08, "side": 0.0, "rear": 0.08}[yaw]
            pos = np.array([shift, side_sign * (layout.pillar_separation / 2 + 0.05),
                            layout.tier_heights[tier]])
            poses[camera_name(pillar, tier, yaw)] = RigidPose(look_rotation(d), pos)
    return poses


def default_intrinsics(index: int, layout: RigLayout = RigLayout()) -> FisheyeIntrinsics:
    # small deterministic per-unit spread, as from a real calibration
    j = (index % 5) - 2
    f = layout.focal * (1 + 0.004 * j)
    return FisheyeIntrinsics(fx=f, fy=f * 1.002, cx=(layout.width - 1) / 2 + 0.7 * j,
                             cy=(layout.height - 1) / 2 - 0.5 * j,
                             k1=0.02 + 0.002 * j, k2=-0.01, k3=0.004, k4=-0.0008,
                             width=layout.width, height=layout.height)


def make_default_rig(layout: RigLayout = RigLayout()) -> RigConfig:
    lab = lab_camera_poses(layout)
    ref_inv = lab[REFERENCE].inverse()
    ids = list(lab)
    cams = []
    for i, cid in enumerate(ids):
        prior = RigidPose.identity() if cid == REFERENCE else ref_inv @ lab[cid]
        cams.append(RigCamera(cid, default_intrinsics(i, layout), prior))
    n = len(ids)
    A = np.zeros((n, n), dtype=int)
    for pillar in ("L", "R"):
        for (ta, ya), (tb, yb) in _NEIGHBOURS:
            i = ids.index(camera_name(pillar, ta, ya))
            j = ids.index(camera_name(pillar, tb, yb))
            A[i, j] = A[j, i] = 1
    i, j = ids.index(camera_name("L", 2, "side")), ids.index(camera_name("R", 2, "side"))
    A[i, j] = A[j, i] = 1
    return RigConfig(tuple(cams), REFERENCE, A)


def lab_from_rig(layout: RigLayout = RigLayout()) -> RigidPose:
    return lab_camera_poses(layout)[REFERENCE]


def perturb_priors(rig: RigConfig, translation: float = 0.02, rotation_deg: float = 1.0,
                   seed: int = 0) -> RigConfig:
    """Offset every non-reference prior by a fixed-size shift and rotation in random directions."""
    rng = np.random.default_rng(seed)
    priors = {}
    for c in rig.cameras:
        if c.id == rig.reference:
            continue
        u = rng.normal(size=3)
        v = rng.normal(size=3)
        R = Rotation.from_rotvec(np.radians(rotation_deg) * v / np.linalg.norm(v)).as_matrix()
        priors[c.id] = RigidPose(R @ c.prior.rotation,
                                 c.prior.translation + translation * u / np.linalg.norm(u))
    return rig.with_priors(priors)
