"""Fisheye camera model, SE(3) algebra and rig pose factorization.

Pose convention used throughout the package: a camera pose ``T_{c,t}`` is
``world_from_camera``. It factorizes as ``world_from_rig(t) @ rig_from_camera``
and a world point ``X`` is projected with ``pi(T_{c,t}.inverse().apply(X))``.
The rig frame coincides with the reference camera frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

from .errors import (BehindCameraError, ConvergenceError, DegenerateError,
                     DomainError, ValidationError)

THETA_MAX = 1.7
NEWTON_TOL = 1e-12
NEWTON_MAX_ITERS = 20
SMALL_R = 1e-8
RENORMALIZE_EVERY = 100


# ---------------------------------------------------------------------------
# fisheye intrinsics


@dataclass(frozen=True)
class FisheyeIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0
    k4: float = 0.0
    width: int = 640
    height: int = 480
    theta_max: float = THETA_MAX

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValidationError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height}")
        if not 0 < self.theta_max < np.pi:
            raise ValidationError(f"theta_max must lie in (0, pi), got {self.theta_max}")
        theta = np.linspace(0.0, self.theta_max, 2048)
        if np.any(distort_theta_derivative(theta, self.k) <= 0):
            raise ValidationError(
                f"distortion {tuple(self.k)} is not strictly increasing on [0, {self.theta_max}]")

    @property
    def k(self) -> np.ndarray:
        return np.array([self.k1, self.k2, self.k3, self.k4])

    def params(self) -> np.ndarray:
        """The 8 lens parameters ``(fx, fy, cx, cy, k1, k2, k3, k4)``."""
        return np.array([self.fx, self.fy, self.cx, self.cy, self.k1, self.k2, self.k3, self.k4])

    def with_params(self, p: Sequence[float]) -> "FisheyeIntrinsics":
        fx, fy, cx, cy, k1, k2, k3, k4 = (float(v) for v in p)
        return FisheyeIntrinsics(fx, fy, cx, cy, k1, k2, k3, k4, self.width, self.height,
                                 self.theta_max)

    def without_distortion(self) -> "FisheyeIntrinsics":
        return self.with_params([self.fx, self.fy, self.cx, self.cy, 0, 0, 0, 0])

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "k": [self.k1, self.k2, self.k3, self.k4],
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "FisheyeIntrinsics":
        k = list(d.get("k", [0.0, 0.0, 0.0, 0.0]))
        if len(k) != 4:
            raise ValidationError(f"expected 4 distortion coefficients, got {len(k)}")
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   *map(float, k), width=int(d["width"]), height=int(d["height"]),
                   theta_max=float(d.get("theta_max", THETA_MAX)))


def _poly(theta, k):
    t2 = theta * theta
    return theta * (1 + t2 * (k[0] + t2 * (k[1] + t2 * (k[2] + t2 * k[3]))))


def distort_theta_derivative(theta, k) -> np.ndarray:
    t2 = np.asarray(theta, dtype=float) ** 2
    return 1 + t2 * (3 * k[0] + t2 * (5 * k[1] + t2 * (7 * k[2] + t2 * 9 * k[3])))


def distort_theta(theta, intr: FisheyeIntrinsics):
    """Distorted angle ``theta * (1 + k1 theta^2 + k2 theta^4 + k3 theta^6 + k4 theta^8)``."""
    theta = np.asarray(theta, dtype=float)
    if np.any(theta < 0) or np.any(theta > intr.theta_max):
        raise DomainError(f"theta outside [0, {intr.theta_max}]")
    out = _poly(theta, intr.k)
    return float(out) if out.ndim == 0 else out


def _radial_terms(x, y, k):
    """Return r, theta, g = theta_d / r and h = g'(r) / r with series at r -> 0."""
    r2 = x * x + y * y
    r = np.sqrt(r2)
    theta = np.arctan(r)
    small = r < SMALL_R
    safe_r = np.where(small, 1.0, r)
    theta_d = _poly(theta, k)
    g = np.where(small, 1.0 + (k[0] - 1.0 / 3.0) * r2, theta_d / safe_r)
    dtheta_d = distort_theta_derivative(theta, k) / (1 + r2)
    h = np.where(small, 2.0 * (k[0] - 1.0 / 3.0),
                 (dtheta_d * safe_r - theta_d) / safe_r ** 3)
    return r, theta, g, h


def _as_points(points) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    if p.shape[-1] != 3:
        raise ValidationError(f"expected (..., 3) points, got shape {p.shape}")
    return p


def project(point_cam, intr: FisheyeIntrinsics) -> np.ndarray:
    """Project camera-frame points ``(..., 3)`` to pixels ``(..., 2)``.

    Output may fall outside the image; callers clip or test bounds.
    """
    p = _as_points(point_cam)
    z = p[..., 2]
    if np.any(z <= 0):
        raise BehindCameraError("point with non-positive depth")
    x = p[..., 0] / z
    y = p[..., 1] / z
    _, theta, g, _ = _radial_terms(x, y, intr.k)
    if np.any(theta > intr.theta_max):
        raise DomainError("incidence angle beyond theta_max")
    return np.stack([intr.fx * g * x + intr.cx, intr.fy * g * y + intr.cy], axis=-1)


def project_jacobian(point_cam, intr: FisheyeIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Pixels and their derivative with respect to the camera-frame point.

    Returns ``(uv, J)`` with shapes ``(..., 2)`` and ``(..., 2, 3)``.
    """
    p = _as_points(point_cam)
    z = p[..., 2]
    if np.any(z <= 0):
        raise BehindCameraError("point with non-positive depth")
    iz = 1.0 / z
    x = p[..., 0] * iz
    y = p[..., 1] * iz
    _, _, g, h = _radial_terms(x, y, intr.k)
    uv = np.stack([intr.fx * g * x + intr.cx, intr.fy * g * y + intr.cy], axis=-1)
    # d(u,v)/d(x,y)
    a = g + x * x * h
    b = x * y * h
    d = g + y * y * h
    J = np.empty(p.shape[:-1] + (2, 3))
    J[..., 0, 0] = intr.fx * a * iz
    J[..., 0, 1] = intr.fx * b * iz
    J[..., 0, 2] = -intr.fx * (a * x + b * y) * iz
    J[..., 1, 0] = intr.fy * b * iz
    J[..., 1, 1] = intr.fy * d * iz
    J[..., 1, 2] = -intr.fy * (b * x + d * y) * iz
    return uv, J


def in_image(pixels, intr: FisheyeIntrinsics) -> np.ndarray:
    px = np.asarray(pixels, dtype=float)
    return ((px[..., 0] >= 0) & (px[..., 0] < intr.width)
            & (px[..., 1] >= 0) & (px[..., 1] < intr.height))


def undistort_theta(theta_d, intr: FisheyeIntrinsics) -> np.ndarray:
    """Invert the angle polynomial by Newton iteration from ``theta = theta_d``."""
    theta_d = np.asarray(theta_d, dtype=float)
    k = intr.k
    theta = theta_d.copy()
    step = np.full_like(theta, np.inf)
    for _ in range(NEWTON_MAX_ITERS):
        f = _poly(theta, k) - theta_d
        step = f / distort_theta_derivative(theta, k)
        theta = theta - step
        if np.all(np.abs(step) <= NEWTON_TOL):
            break
    else:
        raise ConvergenceError("Newton inversion of theta_d did not converge",
                               float(np.max(np.abs(step))))
    return theta


def unproject(pixel, intr: FisheyeIntrinsics) -> np.ndarray:
    """Unit bearing vectors ``(..., 3)`` for pixels ``(..., 2)`` inside the image."""
    px = np.asarray(pixel, dtype=float)
    if px.shape[-1] != 2:
        raise ValidationError(f"expected (..., 2) pixels, got shape {px.shape}")
    if not np.all(in_image(px, intr)):
        raise DomainError("pixel outside image bounds")
    mx = (px[..., 0] - intr.cx) / intr.fx
    my = (px[..., 1] - intr.cy) / intr.fy
    theta_d = np.hypot(mx, my)
    theta = undistort_theta(theta_d, intr)
    if np.any(theta >= min(intr.theta_max, np.pi / 2)):
        raise DomainError("pixel maps outside the forward hemisphere or theta domain")
    tiny = theta_d < 1e-15
    s = np.where(tiny, 1.0, np.sin(theta) / np.where(tiny, 1.0, theta_d))
    b = np.stack([s * mx, s * my, np.cos(theta)], axis=-1)
    return b / np.linalg.norm(b, axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# SO(3) / SE(3)


def hat(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def so3_exp(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    th = np.linalg.norm(phi)
    K = hat(phi)
    if th < 1e-8:
        return np.eye(3) + K + 0.5 * K @ K
    return np.eye(3) + np.sin(th) / th * K + (1 - np.cos(th)) / th ** 2 * K @ K


def so3_log(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    c = np.clip((np.trace(R) - 1) / 2, -1.0, 1.0)
    th = np.arccos(c)
    if np.pi - th < 1e-6:
        raise DomainError("rotation angle at pi; logarithm is not unique")
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if th < 1e-8:
        return 0.5 * w
    return th / (2 * np.sin(th)) * w


def so3_left_jacobian(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    th = np.linalg.norm(phi)
    K = hat(phi)
    if th < 1e-5:
        return np.eye(3) + 0.5 * K + K @ K / 6.0
    return (np.eye(3) + (1 - np.cos(th)) / th ** 2 * K
            + (th - np.sin(th)) / th ** 3 * K @ K)


@dataclass(frozen=True, eq=False)
class Twist:
    """se(3) tangent vector; ``rho`` translational (m), ``phi`` rotational (rad)."""

    rho: np.ndarray = field(default_factory=lambda: np.zeros(3))
    phi: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rho", np.asarray(self.rho, dtype=float).reshape(3))
        object.__setattr__(self, "phi", np.asarray(self.phi, dtype=float).reshape(3))

    def vector(self) -> np.ndarray:
        return np.concatenate([self.rho, self.phi])

    @classmethod
    def from_vector(cls, v) -> "Twist":
        v = np.asarray(v, dtype=float).reshape(6)
        return cls(v[:3], v[3:])

    def norm(self) -> float:
        return float(np.linalg.norm(self.vector()))


@dataclass(frozen=True, eq=False)
class RigidPose:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(R) - 1) > 1e-9:
            raise ValidationError("rotation is not a proper orthonormal matrix")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidPose":
        return cls()

    @classmethod
    def from_matrix(cls, M) -> "RigidPose":
        M = np.asarray(M, dtype=float)
        return cls(M[:3, :3], M[:3, 3])

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def __matmul__(self, other: "RigidPose") -> "RigidPose":
        return RigidPose(self.rotation @ other.rotation,
                         self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidPose":
        Rt = self.rotation.T
        return RigidPose(Rt, -Rt @ self.translation)

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def renormalized(self) -> "RigidPose":
        R = Rotation.from_matrix(self.rotation).as_matrix()
        return RigidPose(R, self.translation)

    def to_dict(self) -> dict:
        return {"R": self.rotation.ravel().tolist(), "t": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "RigidPose":
        R = np.asarray(d["R"], dtype=float)
        if R.size != 9 or len(d["t"]) != 3:
            raise ValidationError("pose needs R:[9] and t:[3]")
        R = R.reshape(3, 3)
        # tolerate round-off from short decimal formats; exact input stays bit-identical
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-12:
            R = Rotation.from_matrix(R).as_matrix()
        return cls(R, d["t"])

    def __repr__(self):
        return f"RigidPose(rotvec={Rotation.from_matrix(self.rotation).as_rotvec()}, t={self.translation})"


def _se3_Q(rho, phi) -> np.ndarray:
    th = np.linalg.norm(phi)
    P = hat(phi)
    Rh = hat(rho)
    PR = P @ Rh
    RP = Rh @ P
    PRP = P @ Rh @ P
    if th < 1e-3:
        t2 = th * th
        c1 = 1 / 6 - t2 / 120
        c2 = 1 / 24 - t2 / 720
        c3 = 1 / 120 - t2 / 2520
    else:
        s, c = np.sin(th), np.cos(th)
        c1 = (th - s) / th ** 3
        c2 = (th * th + 2 * c - 2) / (2 * th ** 4)
        c3 = (2 * th - 3 * s + th * c) / (2 * th ** 5)
    return (0.5 * Rh + c1 * (PR + RP + PRP)
            + c2 * (P @ PR + RP @ P - 3 * PRP)
            + c3 * (PRP @ P + P @ PRP))


def se3_exp(xi) -> RigidPose:
    """Exponential map; accepts a Twist or a 6-vector ``[rho, phi]``."""
    v = xi.vector() if isinstance(xi, Twist) else np.asarray(xi, dtype=float).reshape(6)
    rho, phi = v[:3], v[3:]
    return RigidPose(so3_exp(phi), so3_left_jacobian(phi) @ rho)


def se3_log(T: RigidPose) -> Twist:
    phi = so3_log(T.rotation)
    V = so3_left_jacobian(phi)
    return Twist(np.linalg.solve(V, T.translation), phi)


def se3_left_jacobian(xi) -> np.ndarray:
    """6x6 left Jacobian: ``exp(xi + d) ~ exp(J d) exp(xi)``, ordering ``[rho, phi]``."""
    v = xi.vector() if isinstance(xi, Twist) else np.asarray(xi, dtype=float).reshape(6)
    rho, phi = v[:3], v[3:]
    J = np.zeros((6, 6))
    Jl = so3_left_jacobian(phi)
    J[:3, :3] = Jl
    J[3:, 3:] = Jl
    J[:3, 3:] = _se3_Q(rho, phi)
    return J


def compose_chain(poses: Iterable[RigidPose]) -> RigidPose:
    """Left-to-right product with quaternion renormalization on long chains."""
    R = np.eye(3)
    t = np.zeros(3)
    n = 0
    for n, p in enumerate(poses, 1):
        t = R @ p.translation + t
        R = R @ p.rotation
        if n % RENORMALIZE_EVERY == 0:
            R = Rotation.from_matrix(R).as_matrix()
    if n > RENORMALIZE_EVERY:
        R = Rotation.from_matrix(R).as_matrix()
    return RigidPose(R, t)


def rig_absolute_pose(rig_traj_at_t: RigidPose, local: RigidPose) -> RigidPose:
    """``world_from_camera = world_from_rig(t) @ rig_from_camera``."""
    return rig_traj_at_t @ local


def rotation_angle_deg(R) -> float:
    c = np.clip((np.trace(np.asarray(R)) - 1) / 2, -1.0, 1.0)
    return float(np.degrees(np.arccos(c)))


# ---------------------------------------------------------------------------
# rig configuration


@dataclass(frozen=True, eq=False)
class RigCamera:
    id: str
    intrinsics: FisheyeIntrinsics
    prior: RigidPose  # rig_from_camera


@dataclass(frozen=True, eq=False)
class RigConfig:
    cameras: tuple[RigCamera, ...]
    reference: str
    adjacency: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "cameras", tuple(self.cameras))
        A = np.asarray(self.adjacency, dtype=int)
        object.__setattr__(self, "adjacency", A)
        n = len(self.cameras)
        ids = [c.id for c in self.cameras]
        if len(set(ids)) != n:
            raise ValidationError("duplicate camera ids")
        if self.reference not in ids:
            raise ValidationError(f"reference camera {self.reference!r} not in rig")
        ref = self.camera(self.reference).prior
        if (np.abs(ref.rotation - np.eye(3)).max() > 1e-9
                or np.abs(ref.translation).max() > 1e-9):
            raise ValidationError("reference camera prior must be the identity")
        if A.shape != (n, n):
            raise ValidationError(f"adjacency must be {n}x{n}")
        if not np.array_equal(A, A.T) or np.any(np.diag(A) != 0) or not np.isin(A, (0, 1)).all():
            raise ValidationError("adjacency must be symmetric 0/1 with zero diagonal")

    @property
    def ids(self) -> list[str]:
        return [c.id for c in self.cameras]

    def index(self, cam_id: str) -> int:
        return self.ids.index(cam_id)

    def camera(self, cam_id: str) -> RigCamera:
        for c in self.cameras:
            if c.id == cam_id:
                return c
        raise KeyError(cam_id)

    def is_connected(self) -> bool:
        n = len(self.cameras)
        seen = {0}
        stack = [0]
        while stack:
            i = stack.pop()
            for j in np.flatnonzero(self.adjacency[i]):
                if j not in seen:
                    seen.add(int(j))
                    stack.append(int(j))
        return len(seen) == n

    def max_degree(self) -> int:
        return int(self.adjacency.sum(axis=1).max()) if len(self.cameras) else 0

    def with_priors(self, priors: dict[str, RigidPose]) -> "RigConfig":
        cams = tuple(RigCamera(c.id, c.intrinsics, priors.get(c.id, c.prior)) for c in self.cameras)
        return RigConfig(cams, self.reference, self.adjacency)

    def with_intrinsics(self, intr: dict[str, FisheyeIntrinsics]) -> "RigConfig":
        cams = tuple(RigCamera(c.id, intr.get(c.id, c.intrinsics), c.prior) for c in self.cameras)
        return RigConfig(cams, self.reference, self.adjacency)

    def to_dict(self) -> dict:
        return {
            "cameras": [{"id": c.id, **c.intrinsics.to_dict(), "prior": c.prior.to_dict()}
                        for c in self.cameras],
            "adjacency": self.adjacency.tolist(),
            "reference": self.reference,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RigConfig":
        try:
            cams = tuple(RigCamera(str(c["id"]), FisheyeIntrinsics.from_dict(c),
                                   RigidPose.from_dict(c["prior"])) for c in d["cameras"])
            return cls(cams, str(d["reference"]), np.asarray(d["adjacency"], dtype=int))
        except KeyError as e:
            raise ValidationError(f"rig config missing field {e}") from None


# ---------------------------------------------------------------------------
# intrinsics refinement


def reprojection_rms(points_cam, pixels, intr: FisheyeIntrinsics) -> float:
    """Root mean squared residual norm, ``sqrt(mean ||pi(X) - x||^2)``."""
    e = project(points_cam, intr) - np.asarray(pixels, dtype=float)
    return float(np.sqrt(np.mean(np.sum(e * e, axis=-1))))


def _intrinsics_jacobian(P, intr: FisheyeIntrinsics) -> np.ndarray:
    x = P[:, 0] / P[:, 2]
    y = P[:, 1] / P[:, 2]
    r, theta, g, _ = _radial_terms(x, y, intr.k)
    small = r < SMALL_R
    theta_over_r = np.where(small, 1.0, theta / np.where(small, 1.0, r))
    n = len(P)
    J = np.zeros((2 * n, 8))
    J[0::2, 0] = g * x
    J[1::2, 1] = g * y
    J[0::2, 2] = 1
    J[1::2, 3] = 1
    for i in range(4):
        common = theta_over_r * theta ** (2 * i + 2)
        J[0::2, 4 + i] = intr.fx * common * x
        J[1::2, 4 + i] = intr.fy * common * y
    return J


def refine_intrinsics(points_cam, pixels, initial: FisheyeIntrinsics,
                      max_iters: int = 200) -> tuple[FisheyeIntrinsics, float]:
    """Least-squares refinement of the 8 lens parameters from 2D-3D pairs.

    ``points_cam`` are calibration-target points already expressed in the
    camera frame. Returns the refined intrinsics and their RMS reprojection
    error; the initial model is returned unchanged when no improvement is found.
    """
    P = _as_points(points_cam).reshape(-1, 3)
    x = np.asarray(pixels, dtype=float).reshape(-1, 2)
    if len(P) < 20:
        raise ValidationError(f"need at least 20 correspondences, got {len(P)}")
    J0 = _intrinsics_jacobian(P, initial)
    Jn = J0 / np.maximum(np.linalg.norm(J0, axis=0), 1e-300)
    sv = np.linalg.svd(Jn, compute_uv=False)
    if sv[-1] < 1e-10 * sv[0]:
        raise DegenerateError("correspondences do not constrain all 8 lens parameters")

    rms0 = reprojection_rms(P, x, initial)
    if rms0 == 0.0:
        return initial, rms0

    def resid(p):
        intr = _unchecked(initial, p)
        return (project(P, intr) - x).ravel()

    def jac(p):
        return _intrinsics_jacobian(P, _unchecked(initial, p))

    sol = least_squares(resid, initial.params(), jac=jac, method="lm", max_nfev=max_iters,
                        xtol=1e-15, ftol=1e-15, gtol=1e-15)
    refined = _monotone_model(initial, sol.x, float(np.arctan2(np.hypot(P[:, 0], P[:, 1]), P[:, 2]).max()))
    if refined is None:
        return initial, rms0
    rms = reprojection_rms(P, x, refined)
    if not rms < rms0:
        return initial, rms0
    return refined, rms


def _monotone_model(initial: FisheyeIntrinsics, p, theta_data: float) -> FisheyeIntrinsics | None:
    """Intrinsics from ``p``, with the angular domain cut back to where the
    distortion stays invertible; ``None`` if that excludes observed rays."""
    theta = np.linspace(0.0, initial.theta_max, 2048)
    bad = np.flatnonzero(distort_theta_derivative(theta, np.asarray(p[4:8], dtype=float)) <= 0)
    theta_max = initial.theta_max if len(bad) == 0 else 0.98 * theta[bad[0]]
    if theta_max < theta_data:
        return None
    fx, fy, cx, cy, k1, k2, k3, k4 = (float(v) for v in p)
    try:
        return FisheyeIntrinsics(fx, fy, cx, cy, k1, k2, k3, k4, initial.width, initial.height, theta_max)
    except ValidationError:
        return None


class _Params:
    """Duck-typed intrinsics that skips validation during optimization."""

    def __init__(self, base: FisheyeIntrinsics, p):
        self.fx, self.fy, self.cx, self.cy = (float(v) for v in p[:4])
        self.k = np.asarray(p[4:8], dtype=float)
        self.theta_max = base.theta_max


def _unchecked(base, p):
    return _Params(base, p)
