"""Initial rig trajectory and structure.

The first time step with enough multi-camera tracks is triangulated through
the rig extrinsics alone, which fixes metric scale from the camera
baselines. Remaining time steps are added greedily: candidate rig rotations
come from the essential matrices of temporal pairs, the rig position from a
linear, RANSAC-wrapped solve against already triangulated points, followed
by a small robust pose refinement. Newly observable tracks are triangulated
after every registration.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

from ..errors import DegenerateError, InitializationError
from ..geometry import RigConfig, RigidPose, hat, project, se3_exp, unproject
from ..matching import RawMatchSet, decompose_essential, derive_seed
from ..pairgraph import FrameId
from .model import Reconstruction, SfmConfig, Track
from .triangulation import triangulate_observations


@dataclass(eq=False)
class PairGeometry:
    """A verified image pair: essential matrix and its inlier matches."""
    E: np.ndarray
    matches: RawMatchSet


def relative_motion(pair: PairGeometry, rig: RigConfig, a: FrameId, b: FrameId):
    """``(R, t_unit)`` with ``X_b = R X_a + t`` for a verified pair."""
    bA = unproject(pair.matches.xA, rig.camera(a.camera).intrinsics)
    bB = unproject(pair.matches.xB, rig.camera(b.camera).intrinsics)
    return decompose_essential(pair.E, bA, bB)


def chordal_mean(rotations, weights=None) -> np.ndarray:
    Rs = np.asarray(rotations, dtype=float).reshape(-1, 3, 3)
    w = np.ones(len(Rs)) if weights is None else np.asarray(weights, dtype=float)
    return Rotation.from_matrix(Rs).mean(weights=w).as_matrix()


def extrinsics_from_pairs(rig: RigConfig, pairs: Mapping[tuple[FrameId, FrameId], PairGeometry]
                          ) -> dict[str, RigidPose]:
    """Rig extrinsics from same-time pairs of adjacent cameras, without priors.

    Relative rotations are averaged over time and relative translations are
    unit length (there is no metric information). Cameras are chained outward
    from the reference along the adjacency graph.
    """
    rel: dict[tuple[str, str], list] = {}
    for (a, b), pg in sorted(pairs.items()):
        if a.t != b.t or a.camera == b.camera:
            continue
        try:
            R, t = relative_motion(pg, rig, a, b)
        except DegenerateError:
            continue
        rel.setdefault((a.camera, b.camera), []).append((R, t, len(pg.matches)))
    edges = {}
    for (ca, cb), items in rel.items():
        w = np.array([n for _, _, n in items], dtype=float)
        R = chordal_mean([r for r, _, _ in items], w)
        t = (w[:, None] * np.array([tt for _, tt, _ in items])).sum(axis=0)
        t /= np.linalg.norm(t)
        edges[(ca, cb)] = RigidPose(R, t)          # cam_b_from_cam_a
        edges[(cb, ca)] = RigidPose(R, t).inverse()
    out = {rig.reference: RigidPose.identity()}
    frontier = [rig.reference]
    ids = rig.ids
    while frontier:
        ca = frontier.pop(0)
        for j in np.flatnonzero(rig.adjacency[rig.index(ca)]):
            cb = ids[j]
            if cb in out or (ca, cb) not in edges:
                continue
            # rig_from_b = rig_from_a @ a_from_b
            out[cb] = out[ca] @ edges[(ca, cb)].inverse()
            frontier.append(cb)
    missing = [c for c in ids if c not in out]
    if missing:
        raise InitializationError(f"no verified same-time pairs link cameras {missing} to the reference")
    return out


# ---------------------------------------------------------------------------


@dataclass(eq=False)
class _Obs:
    track: np.ndarray
    cam: np.ndarray
    t: np.ndarray
    uv: np.ndarray
    bearing: np.ndarray


def _flatten(tracks: list[Track], rig: RigConfig) -> _Obs:
    ids = rig.ids
    cidx = {c: i for i, c in enumerate(ids)}
    tr, cam, t, uv = [], [], [], []
    for j, track in enumerate(tracks):
        for f, x in zip(track.frames, track.pixels):
            tr.append(j)
            cam.append(cidx[f.camera])
            t.append(f.t)
            uv.append(x)
    cam = np.asarray(cam, dtype=int)
    uv = np.asarray(uv, dtype=float).reshape(-1, 2)
    b = np.zeros((len(uv), 3))
    for c in np.unique(cam):
        rows = cam == c
        b[rows] = unproject(uv[rows], rig.cameras[c].intrinsics)
    return _Obs(np.asarray(tr, dtype=int), cam, np.asarray(t, dtype=int), uv, b)


def _triangulate_rows(rows: np.ndarray, obs: _Obs, rig: RigConfig, ext, traj, cfg):
    """Triangulate the tracks touched by ``rows`` (observation indices)."""
    if len(rows) == 0:
        return np.zeros(0, dtype=int), np.zeros((0, 3))
    trk, grp = np.unique(obs.track[rows], return_inverse=True)
    poses = [traj[int(obs.t[r])] @ ext[rig.cameras[obs.cam[r]].id] for r in rows]
    intr = [rig.cameras[obs.cam[r]].intrinsics for r in rows]
    X, ok, _ = triangulate_observations(poses, intr, obs.uv[rows], grp.reshape(-1), len(trk), cfg,
                                        bearings=obs.bearing[rows])
    return trk[ok], X[ok]


def _pose_inliers(A: RigidPose, rows, obs: _Obs, rig, ext, X, cfg):
    """Reprojection error of observation rows for rig pose ``A`` (inf if invalid)."""
    err = np.full(len(rows), np.inf)
    for c in np.unique(obs.cam[rows]):
        sel = np.flatnonzero(obs.cam[rows] == c)
        cam = rig.cameras[c]
        P = (A @ ext[cam.id]).inverse().apply(X[sel])
        ok = (P[:, 2] > 1e-6) & (np.arctan2(np.hypot(P[:, 0], P[:, 1]), np.maximum(P[:, 2], 1e-12)) < 1.5)
        if ok.any():
            uv = project(P[ok], cam.intrinsics)
            err[sel[ok]] = np.linalg.norm(uv - obs.uv[rows][sel[ok]], axis=1)
    return err


def _solve_position(R_A, rows, obs: _Obs, rig, ext, X):
    """Least-squares rig position given its rotation (bearing cross-product form)."""
    BR = np.stack([ext[rig.cameras[c].id].rotation for c in obs.cam[rows]])
    Bt = np.stack([ext[rig.cameras[c].id].translation for c in obs.cam[rows]])
    K = hat(obs.bearing[rows]) @ np.transpose(BR, (0, 2, 1))          # [b]x R_B^T
    rhs = np.einsum("nij,nj->ni", K, X @ R_A - Bt)                     # R_A^T X - t_B
    q, *_ = np.linalg.lstsq(K.reshape(-1, 3), rhs.reshape(-1), rcond=None)
    return RigidPose(R_A, R_A @ q)


def _register_time(t, R_candidates, rows, obs, rig, ext, X, cfg, rng):
    best = (None, np.zeros(len(rows), dtype=bool))
    thr = cfg.max_reprojection_px
    n = len(rows)
    for R_A in R_candidates:
        for _ in range(60):
            pick = rng.choice(n, 2, replace=False)
            try:
                A = _solve_position(R_A, rows[pick], obs, rig, ext, X[pick])
            except np.linalg.LinAlgError:
                continue
            inl = _pose_inliers(A, rows, obs, rig, ext, X, cfg) < thr
            if inl.sum() > best[1].sum():
                best = (A, inl)
    A, inl = best
    if A is None or inl.sum() < cfg.register_min_inliers:
        return None, inl
    A = _solve_position(A.rotation, rows[inl], obs, rig, ext, X[inl])
    A = _refine_pose(A, rows[inl], obs, rig, ext, X[inl], cfg)
    inl = _pose_inliers(A, rows, obs, rig, ext, X, cfg) < thr
    if inl.sum() < cfg.register_min_inliers:
        return None, inl
    return A, inl


def _refine_pose(A, rows, obs, rig, ext, X, cfg):
    def resid(d):
        T = se3_exp(d) @ A
        e = _pose_inliers_vec(T, rows, obs, rig, ext, X)
        return e.reshape(-1)
    try:
        sol = least_squares(resid, np.zeros(6), loss="huber", f_scale=cfg.huber_delta, max_nfev=50)
    except (ValueError, DegenerateError):
        return A
    return se3_exp(sol.x) @ A


def _pose_inliers_vec(A, rows, obs, rig, ext, X):
    out = np.zeros((len(rows), 2))
    for c in np.unique(obs.cam[rows]):
        sel = np.flatnonzero(obs.cam[rows] == c)
        cam = rig.cameras[c]
        P = (A @ ext[cam.id]).inverse().apply(X[sel])
        P[:, 2] = np.maximum(P[:, 2], 1e-3)
        r = np.hypot(P[:, 0], P[:, 1])
        scale = np.where(np.arctan2(r, P[:, 2]) > 1.5, np.tan(1.5) * P[:, 2] / np.maximum(r, 1e-12), 1.0)
        P[:, :2] *= scale[:, None]
        out[sel] = project(P, cam.intrinsics) - obs.uv[rows][sel]
    return out


def _rotation_candidates(t, registered: dict[int, RigidPose], temporal, rig, ext):
    """Rig rotations at ``t`` implied by temporal pairs to registered times."""
    cands, weights = [], []
    for (a, b), (R, _, n) in temporal.items():
        if b.t == t and a.t in registered:
            src, R_ab = a, R              # X_b = R X_a: cam_t_from_cam_src
        elif a.t == t and b.t in registered:
            src, R_ab = b, R.T
        else:
            continue
        RB = ext[a.camera].rotation
        # A_t = A_src B (R_ab)^-1 B^-1
        cands.append(registered[src.t].rotation @ RB @ R_ab.T @ RB.T)
        weights.append(n)
    out = []
    if cands:
        out.append(chordal_mean(cands, weights))
    nearest = min(registered, key=lambda s: (abs(s - t), s))
    out.append(registered[nearest].rotation)
    return out


def initialize(tracks: list[Track], rig: RigConfig,
               pairs: Mapping[tuple[FrameId, FrameId], PairGeometry] | None = None,
               cfg: SfmConfig = SfmConfig(), extrinsics: dict[str, RigidPose] | None = None
               ) -> Reconstruction:
    """Chained rig initialization; extrinsics default to the rig priors."""
    if not tracks:
        raise InitializationError("no tracks to initialize from")
    ext = dict(extrinsics) if extrinsics is not None else {c.id: c.prior for c in rig.cameras}
    obs = _flatten(tracks, rig)
    pairs = pairs or {}
    temporal = {}
    for (a, b), pg in sorted(pairs.items()):
        if a.camera == b.camera and a.t != b.t:
            try:
                R, t = relative_motion(pg, rig, a, b)
            except DegenerateError:
                continue
            temporal[(a, b)] = (R, t, len(pg.matches))

    times = np.unique(obs.t)
    rng = np.random.default_rng(derive_seed(cfg.seed, "initialize"))

    # seed: the time whose same-time multi-camera tracks triangulate best
    best = None
    order = sorted(times, key=lambda t: -len(np.unique(obs.track[obs.t == t])))
    for t in order[: max(5, len(order) // 4)]:
        rows = np.flatnonzero(obs.t == t)
        traj = {int(t): RigidPose.identity()}
        trk, X = _triangulate_rows(rows, obs, rig, ext, traj, cfg)
        if best is None or len(trk) > len(best[1]):
            best = (int(t), trk, X)
    if best is None or len(best[1]) < cfg.register_min_inliers:
        raise InitializationError("no time step has enough multi-camera tracks to seed the rig")
    t0, trk, X = best
    registered = {t0: RigidPose.identity()}
    points = np.full((len(tracks), 3), np.nan)
    points[trk] = X

    pending = set(int(t) for t in times) - {t0}
    failed: set[int] = set()
    while pending:
        known = np.isfinite(points[obs.track, 0])
        counts = {}
        for t in pending:
            counts[t] = int(np.count_nonzero(known & (obs.t == t)))
        t = max(pending, key=lambda s: (counts[s], -min(abs(s - r) for r in registered), -s))
        if counts[t] < cfg.register_min_inliers:
            break
        pending.discard(t)
        rows = np.flatnonzero(known & (obs.t == t))
        cands = _rotation_candidates(t, registered, temporal, rig, ext)
        A, _ = _register_time(t, cands, rows, obs, rig, ext, points[obs.track[rows]], cfg, rng)
        if A is None:
            failed.add(t)
            continue
        registered[t] = A
        # triangulate tracks that gained an observation at t
        touched = np.unique(obs.track[obs.t == t])
        todo = touched[~np.isfinite(points[touched, 0])]
        sel = np.flatnonzero(np.isin(obs.track, todo) & np.isin(obs.t, list(registered)))
        trk, X = _triangulate_rows(sel, obs, rig, ext, registered, cfg)
        points[trk] = X

    keep = np.flatnonzero(np.isfinite(points[:, 0]))
    out_tracks = []
    reg_t = set(registered)
    kept_pts = []
    for j in keep:
        tr = tracks[j]
        mask = np.array([f.t in reg_t for f in tr.frames])
        if mask.sum() < 2:
            continue
        out_tracks.append(tr if mask.all() else tr.subset(mask))
        kept_pts.append(j)
    rec = Reconstruction(points[kept_pts], out_tracks, dict(sorted(registered.items())), ext)
    rec.refresh_registered()
    return rec
