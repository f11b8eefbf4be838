"""Large random rig reconstructions for bundle-adjustment timing."""

from __future__ import annotations

import numpy as np

from ..geometry import RigidPose, in_image, project, se3_exp, unproject
from ..pairgraph import FrameId
from ..sfm.model import Reconstruction, Track
from .rig import make_default_rig


def make_ba_problem(n_times: int = 100, n_points: int = 50_000, seed: int = 0,
                    pixel_noise: float = 1.0, window: int = 3, point_noise: float = 0.01,
                    pose_noise: float = 0.01, mean_track_length: float | None = 4.5):
    """A rig driving past a random point field, seen over short time windows.

    Tracks are randomly thinned to ``2 + Poisson(mean_track_length - 2)``
    observations when ``mean_track_length`` is given.
    Returns ``(rig, truth, perturbed)`` reconstructions; the perturbed one has
    noisy pixels, jittered points and jittered rig poses.
    """
    rng = np.random.default_rng(seed)
    rig = make_default_rig()
    ids = rig.ids
    traj = {t: RigidPose(np.eye(3), np.array([-0.2 * t, 0.0, 0.0])) for t in range(n_times)}
    ext = {c.id: c.prior for c in rig.cameras}

    seed_t = rng.integers(0, n_times, n_points)
    seed_c = rng.integers(0, len(ids), n_points)
    pts = np.empty((n_points, 3))
    for c_i, cid in enumerate(ids):
        sel = np.flatnonzero(seed_c == c_i)
        intr = rig.camera(cid).intrinsics
        px = rng.uniform([10, 10], [intr.width - 10, intr.height - 10], (len(sel), 2))
        b = unproject(px, intr) * rng.uniform(2.0, 6.0, (len(sel), 1))
        for t in np.unique(seed_t[sel]):
            rows = sel[seed_t[sel] == t]
            T = traj[int(t)] @ ext[cid]
            pts[rows] = T.apply(b[seed_t[sel] == t])

    obs: list[list[tuple[FrameId, np.ndarray]]] = [[] for _ in range(n_points)]
    for t in range(n_times):
        near = np.flatnonzero(np.abs(seed_t - t) <= window // 2)
        if len(near) == 0:
            continue
        for cid in ids:
            T = (traj[t] @ ext[cid]).inverse()
            P = T.apply(pts[near])
            front = P[:, 2] > 0.2
            ang = np.arctan2(np.hypot(P[:, 0], P[:, 1]), np.maximum(P[:, 2], 1e-9))
            ok = front & (ang < 1.3)
            uv = np.full((len(near), 2), -1.0)
            uv[ok] = project(P[ok], rig.camera(cid).intrinsics)
            ok &= in_image(uv, rig.camera(cid).intrinsics)
            for j, x in zip(near[ok], uv[ok]):
                obs[j].append((FrameId(cid, t), x))
    if mean_track_length is not None:
        for j in range(n_points):
            want = 2 + rng.poisson(mean_track_length - 2)
            if len(obs[j]) > want:
                pick = np.sort(rng.choice(len(obs[j]), want, replace=False))
                obs[j] = [obs[j][i] for i in pick]
    keep = [j for j in range(n_points) if len(obs[j]) >= 2]
    tracks_true = [Track(tuple(f for f, _ in obs[j]), np.array([x for _, x in obs[j]])) for j in keep]
    truth = Reconstruction(pts[keep], tracks_true, traj, ext)
    truth.refresh_registered()

    sigma = pixel_noise / np.sqrt(2)
    tracks = [Track(tr.frames, tr.pixels + rng.normal(scale=sigma, size=tr.pixels.shape)) for tr in tracks_true]
    traj_p = {t: se3_exp(np.r_[rng.normal(scale=pose_noise, size=3), rng.normal(scale=pose_noise / 5, size=3)]) @ p
              for t, p in traj.items()}
    traj_p[0] = traj[0]
    noisy = Reconstruction(pts[keep] + rng.normal(scale=point_noise, size=(len(keep), 3)), tracks,
                           traj_p, dict(ext))
    noisy.refresh_registered()
    return rig, truth, noisy
