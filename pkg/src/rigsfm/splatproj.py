"""Projecting 3D Gaussians to image-space splats through the fisheye model.

Three estimators of the projected mean and covariance are provided:
the unscented transform (seven sigma points), first-order linearisation
through the analytic fisheye Jacobian, and a Monte Carlo reference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NotPositiveDefiniteError, ValidationError
from .geometry import FisheyeIntrinsics, RigidPose, project, project_jacobian


@dataclass(frozen=True, eq=False)
class Gaussian3D:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).reshape(3)
        S = np.asarray(self.sigma, dtype=float)
        if S.shape != (3, 3):
            raise ValidationError(f"covariance must be 3x3, got {S.shape}")
        if np.abs(S - S.T).max() > 1e-12 * max(1.0, np.abs(S).max()):
            raise ValidationError("covariance is not symmetric")
        if np.linalg.eigvalsh(S).min() <= 0:
            raise NotPositiveDefiniteError("covariance is not positive definite")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", 0.5 * (S + S.T))


@dataclass(frozen=True, eq=False)
class Splat2D:
    center: np.ndarray
    cov: np.ndarray

    def upper(self) -> list[float]:
        """Covariance as ``[S00, S01, S11]``."""
        return [float(self.cov[0, 0]), float(self.cov[0, 1]), float(self.cov[1, 1])]


@dataclass(frozen=True)
class UTConfig:
    lambda_ut: float = 0.0
    d: int = 3

    def __post_init__(self):
        if self.d != 3:
            raise ValidationError("state dimension is fixed at 3")
        if self.d + self.lambda_ut <= 0:
            raise ValidationError("d + lambda_ut must be positive")


def sigma_points(g: Gaussian3D, cfg: UTConfig = UTConfig()) -> tuple[np.ndarray, np.ndarray]:
    """The 2d+1 sigma points (rows) and their weights."""
    d, lam = cfg.d, cfg.lambda_ut
    try:
        L = np.linalg.cholesky((d + lam) * g.sigma)
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError("Cholesky factorisation failed") from None
    X = np.empty((2 * d + 1, d))
    X[0] = g.mu
    X[1:d + 1] = g.mu + L.T
    X[d + 1:] = g.mu - L.T
    w = np.full(2 * d + 1, 1.0 / (2 * (d + lam)))
    w[0] = lam / (d + lam)
    return X, w


def _to_camera(points, pose: RigidPose) -> np.ndarray:
    """``pose`` is world_from_camera."""
    return pose.inverse().apply(points)


def _psd(S: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    S = 0.5 * (S + S.T)
    vals, vecs = np.linalg.eigh(S)
    if vals.min() >= 0:
        return S
    vals = np.maximum(vals, floor)
    return (vecs * vals) @ vecs.T


def ut_project(g: Gaussian3D, pose: RigidPose, intr: FisheyeIntrinsics,
               cfg: UTConfig = UTConfig()) -> Splat2D:
    X, w = sigma_points(g, cfg)
    u = project(_to_camera(X, pose), intr)
    c = w @ u
    D = u - c
    return Splat2D(c, _psd((w[:, None] * D).T @ D))


def jacobian_project(g: Gaussian3D, pose: RigidPose, intr: FisheyeIntrinsics) -> Splat2D:
    """First-order propagation through the full fisheye projection at the mean."""
    R = pose.rotation.T
    uv, J = project_jacobian(_to_camera(g.mu, pose), intr)
    S_cam = R @ g.sigma @ R.T
    return Splat2D(uv, _psd(J @ S_cam @ J.T))


def mc_project_oracle(g: Gaussian3D, pose: RigidPose, intr: FisheyeIntrinsics,
                      n_samples: int = 1_000_000, seed: int = 0,
                      chunk: int = 250_000) -> Splat2D:
    """Sample mean and covariance of projected draws from the Gaussian.

    Raises ``DomainError`` if more than 1% of the draws cannot be projected.
    Accumulates in chunks so a million samples fit comfortably in memory.
    """
    rng = np.random.default_rng(seed)
    L = np.linalg.cholesky(g.sigma)
    Rt = pose.rotation.T
    tc = -Rt @ pose.translation
    n_bad = 0
    total = 0
    s1 = np.zeros(2)
    s2 = np.zeros((2, 2))
    ref = None
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        done += m
        Xw = g.mu + rng.standard_normal((m, 3)) @ L.T
        P = Xw @ Rt.T + tc
        ok = P[:, 2] > 0
        x = P[ok, 0] / P[ok, 2]
        y = P[ok, 1] / P[ok, 2]
        theta = np.arctan(np.hypot(x, y))
        keep = theta <= intr.theta_max
        n_bad += m - int(keep.sum())
        u = project(P[ok][keep], intr)
        if ref is None:
            ref = u.mean(axis=0) if len(u) else np.zeros(2)
        D = u - ref    # shifted sums for numerical stability
        s1 += D.sum(axis=0)
        s2 += D.T @ D
        total += len(u)
    if n_bad > 0.01 * n_samples:
        raise DomainError(f"{n_bad} of {n_samples} samples fall outside the projection domain")
    mean_d = s1 / total
    cov = (s2 - total * np.outer(mean_d, mean_d)) / (total - 1)
    return Splat2D(ref + mean_d, 0.5 * (cov + cov.T))


def ut_project_batch(mus: np.ndarray, sigmas: np.ndarray, pose: RigidPose,
                     intr: FisheyeIntrinsics, cfg: UTConfig = UTConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``ut_project`` over ``(N, 3)`` means and ``(N, 3, 3)`` covariances."""
    mus = np.asarray(mus, dtype=float)
    sigmas = np.asarray(sigmas, dtype=float)
    d, lam = cfg.d, cfg.lambda_ut
    try:
        L = np.linalg.cholesky((d + lam) * sigmas)
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError("a covariance is not positive definite") from None
    cols = np.swapaxes(L, 1, 2)                             # (N, 3, 3): rows are columns of L
    X = np.concatenate([mus[:, None], mus[:, None] + cols, mus[:, None] - cols], axis=1)
    w = np.full(2 * d + 1, 1.0 / (2 * (d + lam)))
    w[0] = lam / (d + lam)
    u = project(_to_camera(X.reshape(-1, 3), pose), intr).reshape(len(mus), 2 * d + 1, 2)
    c = np.einsum("k,nkj->nj", w, u)
    D = u - c[:, None]
    S = np.einsum("k,nki,nkj->nij", w, D, D)
    return c, np.stack([_psd(s) for s in S]) if lam < 0 else S
