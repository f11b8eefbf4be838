"""Midpoint triangulation with parallax and reprojection gates."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from ..geometry import FisheyeIntrinsics, RigidPose, project, unproject
from .model import SfmConfig


def midpoint_batch(centres: np.ndarray, dirs: np.ndarray, group: np.ndarray,
                   n_groups: int) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares ray intersection per group.

    Minimizes the summed squared distance to every ray. Returns ``(X, cond)``
    where ``cond`` is the smallest eigenvalue of the normal matrix (0 for
    parallel rays).
    """
    P = np.eye(3) - dirs[:, :, None] * dirs[:, None, :]
    A = np.zeros((n_groups, 3, 3))
    b = np.zeros((n_groups, 3))
    np.add.at(A, group, P)
    np.add.at(b, group, np.einsum("nij,nj->ni", P, centres))
    ev = np.linalg.eigvalsh(A)[:, 0]
    X = np.full((n_groups, 3), np.nan)
    ok = ev > 1e-12
    if ok.any():
        X[ok] = np.linalg.solve(A[ok], b[ok][..., None])[..., 0]
    return X, ev


def max_pair_angle(dirs: np.ndarray, group: np.ndarray, n_groups: int) -> np.ndarray:
    """Largest angle between any two rays of a group (radians)."""
    order = np.argsort(group, kind="stable")
    g = group[order]
    d = dirs[order]
    starts = np.searchsorted(g, np.arange(n_groups))
    counts = np.bincount(g, minlength=n_groups)
    out = np.zeros(n_groups)
    # enumerate pairs (i, j) within each group
    rep = np.repeat(np.arange(len(g)), counts[g])
    offs = np.arange(len(rep)) - np.repeat(np.cumsum(counts[g]) - counts[g], counts[g])
    partner = starts[g[rep]] + offs
    cosang = np.clip(np.einsum("ij,ij->i", d[rep], d[partner]), -1, 1)
    np.maximum.at(out, g[rep], np.arccos(cosang))
    return out


def triangulate_observations(frame_poses: Sequence[RigidPose],
                             intrinsics: Sequence[FisheyeIntrinsics],
                             pixels: np.ndarray, group: np.ndarray, n_groups: int,
                             cfg: SfmConfig = SfmConfig(),
                             bearings: np.ndarray | None = None):
    """Batch triangulation.

    ``frame_poses[i]`` and ``intrinsics[i]`` belong to observation ``i``.
    Returns ``(X, accepted, reproj_max)``.
    """
    n = len(pixels)
    if bearings is None:
        bearings = np.empty((n, 3))
        by_intr: dict[int, list[int]] = {}
        for i, intr in enumerate(intrinsics):
            by_intr.setdefault(id(intr), []).append(i)
        for rows in by_intr.values():
            bearings[rows] = unproject(pixels[rows], intrinsics[rows[0]])
    R = np.stack([p.rotation for p in frame_poses])
    C = np.stack([p.translation for p in frame_poses])
    dirs = np.einsum("nij,nj->ni", R, bearings)
    X, _ = midpoint_batch(C, dirs, group, n_groups)
    ang = max_pair_angle(dirs, group, n_groups)
    ok = np.isfinite(X).all(axis=1) & (ang >= cfg.min_triangulation_angle)

    err = np.full(n, np.inf)
    Xo = X[group]
    Pc = np.einsum("nji,nj->ni", R, Xo - C)   # R^T (X - C)
    front = np.isfinite(Pc).all(axis=1) & (Pc[:, 2] > 1e-6)
    front &= np.arctan2(np.hypot(Pc[:, 0], Pc[:, 1]), Pc[:, 2]) < 1.5
    idx = np.flatnonzero(front)
    by_intr = {}
    for i in idx:
        by_intr.setdefault(id(intrinsics[i]), []).append(i)
    for rows in by_intr.values():
        uv = project(Pc[rows], intrinsics[rows[0]])
        err[rows] = np.linalg.norm(uv - pixels[rows], axis=1)
    worst = np.zeros(n_groups)
    np.maximum.at(worst, group, err)
    ok &= worst <= cfg.max_reprojection_px
    return X, ok, worst


def triangulate(frames, pixels, poses: Mapping, intrinsics: Mapping,
                cfg: SfmConfig = SfmConfig()) -> np.ndarray | None:
    """Triangulate one track; ``None`` when a gate rejects it.

    ``poses[frame]`` is ``world_from_camera``; ``intrinsics[frame.camera]`` the lens.
    """
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    if len(pixels) < 2:
        return None
    X, ok, _ = triangulate_observations([poses[f] for f in frames],
                                        [intrinsics[f[0]] for f in frames],
                                        pixels, np.zeros(len(pixels), dtype=int), 1, cfg)
    return X[0] if ok[0] else None
