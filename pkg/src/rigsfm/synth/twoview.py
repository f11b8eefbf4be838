"""Two-view fisheye correspondences with known relative pose."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import FisheyeIntrinsics, in_image, project, so3_exp, unproject
from ..matching import RawMatchSet


@dataclass
class TwoView:
    R: np.ndarray            # X_B = R X_A + t
    t: np.ndarray
    bA: np.ndarray
    bB: np.ndarray
    matches: RawMatchSet
    is_inlier: np.ndarray


def perturb_bearings(b: np.ndarray, rms_angle: float, rng) -> np.ndarray:
    """Rotate each unit vector by an isotropic tangent-plane angle with the given RMS."""
    if rms_angle <= 0:
        return b.copy()
    ref = np.where(np.abs(b[:, [0]]) < 0.9, [[1.0, 0, 0]], [[0, 1.0, 0]])
    e1 = np.cross(b, ref)
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(b, e1)
    d = rng.normal(scale=rms_angle / np.sqrt(2), size=(len(b), 2))
    out = b + d[:, [0]] * e1 + d[:, [1]] * e2
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def make_two_view(seed: int, n_inliers: int, intr_A: FisheyeIntrinsics,
                  intr_B: FisheyeIntrinsics | None = None, noise_rad: float = 0.0,
                  n_outliers: int = 0, baseline: float = 0.5,
                  max_angle: float = 0.35) -> TwoView:
    """Random rigid two-view scene whose points are visible in both images."""
    rng = np.random.default_rng(seed)
    intr_B = intr_B or intr_A
    axis = rng.normal(size=3)
    R = so3_exp(axis / np.linalg.norm(axis) * rng.uniform(0.05, max_angle))
    t = rng.normal(size=3)
    t *= baseline / np.linalg.norm(t)

    XA, xa, xb = [], [], []
    while len(XA) < n_inliers:
        px = np.column_stack([rng.uniform(0, intr_A.width, 4 * n_inliers),
                              rng.uniform(0, intr_A.height, 4 * n_inliers)])
        P = unproject(px, intr_A) * rng.uniform(2.0, 8.0, size=(len(px), 1))
        PB = P @ R.T + t
        front = PB[:, 2] > 0.1
        P, PB = P[front], PB[front]
        uvB = project(PB, intr_B)
        ok = in_image(uvB, intr_B)
        XA.extend(P[ok])
    XA = np.array(XA[:n_inliers])
    XB = XA @ R.T + t
    bA = perturb_bearings(XA / np.linalg.norm(XA, axis=1, keepdims=True), noise_rad, rng)
    bB = perturb_bearings(XB / np.linalg.norm(XB, axis=1, keepdims=True), noise_rad, rng)
    xA = project(bA, intr_A)
    xB = project(bB, intr_B)
    # noisy bearings can leave the image by a hair; pull them back in
    xA = np.clip(xA, 0, [intr_A.width - 1e-6, intr_A.height - 1e-6])
    xB = np.clip(xB, 0, [intr_B.width - 1e-6, intr_B.height - 1e-6])

    oA = np.column_stack([rng.uniform(0, intr_A.width, n_outliers), rng.uniform(0, intr_A.height, n_outliers)])
    oB = np.column_stack([rng.uniform(0, intr_B.width, n_outliers), rng.uniform(0, intr_B.height, n_outliers)])
    xA = np.vstack([xA, oA])
    xB = np.vstack([xB, oB])
    inl = np.r_[np.ones(n_inliers, bool), np.zeros(n_outliers, bool)]
    conf = lambda lo, hi: np.r_[rng.uniform(lo[0], lo[1], n_inliers), rng.uniform(hi[0], hi[1], n_outliers)]
    matches = RawMatchSet(xA, xB, conf((0.7, 1), (0, 0.4)), conf((0.7, 1), (0, 0.4)),
                          conf((0.7, 1), (0, 0.4)))
    perm = rng.permutation(len(xA))
    return TwoView(R, t, unproject(xA[perm], intr_A), unproject(xB[perm], intr_B),
                   matches.subset(perm), inl[perm])
