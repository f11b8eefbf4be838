"""Data types shared by the reconstruction stages."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError
from ..geometry import RigidPose
from ..pairgraph import FrameId


@dataclass(frozen=True)
class SfmConfig:
    huber_delta: float = 1.0            # pixels
    lambda_prior: float = 1e4
    lm_max_iters: int = 50
    lm_tolerance: float = 1e-5          # relative cost decrease that counts as converged
    lm_max_trials: int = 10             # consecutive rejected steps before giving up
    min_triangulation_angle: float = np.radians(1.0)
    max_reprojection_px: float = 4.0
    prune_rounds: int = 3
    track_quantum: float = 0.5          # pixels; keypoint identity across pairs
    register_min_inliers: int = 12
    seed: int = 0

    def __post_init__(self):
        for name in ("huber_delta", "lm_max_iters", "lm_tolerance", "lm_max_trials",
                     "min_triangulation_angle", "max_reprojection_px", "track_quantum"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if self.lambda_prior < 0:
            raise ValidationError("lambda_prior must be non-negative")


@dataclass(eq=False)
class Track:
    frames: tuple[FrameId, ...]
    pixels: np.ndarray                  # (L, 2)
    label: int = -1                     # synthetic ground truth, -1 when unknown

    def __post_init__(self):
        self.frames = tuple(FrameId(*f) for f in self.frames)
        self.pixels = np.asarray(self.pixels, dtype=float).reshape(-1, 2)
        if len(self.frames) != len(self.pixels):
            raise ValidationError("track frames and pixels differ in length")
        if len(self.frames) < 2:
            raise ValidationError("a track needs at least two observations")
        if len(set(self.frames)) != len(self.frames):
            raise ValidationError("a track observes each frame at most once")

    def __len__(self):
        return len(self.frames)

    @property
    def observations(self) -> list[tuple[FrameId, np.ndarray]]:
        return list(zip(self.frames, self.pixels))

    def subset(self, keep) -> "Track":
        keep = np.asarray(keep)
        return Track(tuple(f for f, k in zip(self.frames, keep) if k), self.pixels[keep], self.label)


@dataclass(eq=False)
class Reconstruction:
    points: np.ndarray                              # (N, 3) world
    tracks: list[Track]                             # observations used, aligned with points
    rig_trajectory: dict[int, RigidPose]            # world_from_rig per time index
    local_extrinsics: dict[str, RigidPose]          # rig_from_camera
    registered: set[FrameId] = field(default_factory=set)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if len(self.points) != len(self.tracks):
            raise ValidationError("points and tracks differ in length")

    def camera_pose(self, frame: FrameId) -> RigidPose:
        return self.rig_trajectory[frame.t] @ self.local_extrinsics[frame.camera]

    def refresh_registered(self) -> None:
        self.registered = {f for tr in self.tracks for f in tr.frames}

    def copy(self) -> "Reconstruction":
        return Reconstruction(self.points.copy(), list(self.tracks), dict(self.rig_trajectory),
                              dict(self.local_extrinsics), set(self.registered))


@dataclass
class BundleReport:
    initial_cost: float
    final_cost: float
    reprojection_cost: float
    prior_cost: float
    iterations: int
    accepted: int
    converged: bool
    warning: str = ""
    pruned: int = 0
    cost_history: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)
