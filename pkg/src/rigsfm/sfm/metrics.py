"""Registration rate, point count, mean track length and reprojection error."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from ..geometry import RigConfig
from ..pairgraph import FrameId
from .bundle import reprojection_errors
from .model import Reconstruction, Track


def compute_metrics(recon: Reconstruction | None, rig: RigConfig,
                    extracted_frames: Iterable[FrameId], tracks: list[Track] | None = None) -> dict:
    """``{R_reg, N_pts, L_track, E_reproj}``; ``empty`` flags a reconstruction without points.

    ``tracks`` defaults to the observations stored in the reconstruction.
    """
    extracted = set(extracted_frames)
    if recon is None or len(recon.points) == 0:
        return {"R_reg": 0.0, "N_pts": 0, "L_track": 0.0, "E_reproj": 0.0, "empty": True}
    if tracks is not None:
        recon = Reconstruction(recon.points, tracks, recon.rig_trajectory,
                               recon.local_extrinsics, recon.registered)
    registered = {f for f in recon.registered if f in extracted}
    errs = np.concatenate(reprojection_errors(recon, rig))
    n_pts = len(recon.points)
    return {
        "R_reg": len(registered) / len(extracted) if extracted else 0.0,
        "N_pts": n_pts,
        "L_track": float(sum(len(t) for t in recon.tracks) / n_pts),
        "E_reproj": float(errs.mean()),
        "empty": False,
    }
