"""Mask-gated match scoring, four-stage filtering and bearing-space verification."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateError, ValidationError, VerificationFailed
from .geometry import FisheyeIntrinsics, hat, unproject


@dataclass(eq=False)
class RawMatchSet:
    xA: np.ndarray
    xB: np.ndarray
    o: np.ndarray
    pab: np.ndarray
    pba: np.ndarray
    # synthetic ground-truth labels ride along when present; never used by the filters
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.xA = np.asarray(self.xA, dtype=float).reshape(-1, 2)
        self.xB = np.asarray(self.xB, dtype=float).reshape(-1, 2)
        n = len(self.xA)
        for name in ("o", "pab", "pba"):
            v = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if len(v) != n:
                raise ValidationError(f"{name} has {len(v)} entries, expected {n}")
            if np.any((v < 0) | (v > 1)):
                raise ValidationError(f"{name} confidences must lie in [0, 1]")
            setattr(self, name, v)
        if len(self.xB) != n:
            raise ValidationError("xA and xB lengths differ")

    def __len__(self):
        return len(self.xA)

    def subset(self, idx) -> "RawMatchSet":
        lab = None if self.labels is None else self.labels[idx]
        return RawMatchSet(self.xA[idx], self.xB[idx], self.o[idx], self.pab[idx],
                           self.pba[idx], lab)


@dataclass(frozen=True)
class FilterConfig:
    tau_s: float = 0.3
    g: int = 32
    K_cell: int = 4
    q: float = 4.0
    N_max: int = 4096

    def __post_init__(self):
        if not (self.tau_s > 0 and self.g > 0 and self.K_cell > 0 and self.q > 0 and self.N_max > 0):
            raise ValidationError("filter parameters must all be positive")


@dataclass(eq=False)
class FilteredMatchSet:
    matches: RawMatchSet
    s: np.ndarray
    index: np.ndarray  # positions in the raw set, canonical order

    def __len__(self):
        return len(self.index)


def gate_overlap(o, mask_value):
    """Overlap confidence multiplied by the rigid-mask value at the source pixel."""
    return np.asarray(o, dtype=float) * np.asarray(mask_value, dtype=float)


def score_matches(raw: RawMatchSet) -> np.ndarray:
    """``s_i = o_i * min(p_ab_i, p_ba_i)``."""
    return raw.o * np.minimum(raw.pab, raw.pba)


def pixel_index(x: np.ndarray) -> np.ndarray:
    return np.floor(np.asarray(x, dtype=float) + 0.5).astype(np.int64)


def mask_lookup(mask: np.ndarray | None, x: np.ndarray) -> np.ndarray:
    """Mask value at the nearest pixel; points outside the raster read as 0."""
    if mask is None:
        return np.ones(len(x), dtype=bool)
    H, W = mask.shape
    ij = pixel_index(x)
    ok = (ij[:, 0] >= 0) & (ij[:, 0] < W) & (ij[:, 1] >= 0) & (ij[:, 1] < H)
    out = np.zeros(len(x), dtype=bool)
    out[ok] = mask[ij[ok, 1], ij[ok, 0]]
    return out


def canonical_order(s, xA, xB) -> np.ndarray:
    """Descending score, then ascending coordinates (xA, yA, xB, yB)."""
    return np.lexsort((xB[:, 1], xB[:, 0], xA[:, 1], xA[:, 0], -s))


def _unique_rows(keys: np.ndarray) -> np.ndarray:
    """For each row, how many rows share its integer key."""
    _, inv, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    return counts[inv.reshape(-1)]


def filter_matches(raw: RawMatchSet, masks=(None, None), cfg: FilterConfig = FilterConfig()
                   ) -> FilteredMatchSet:
    """Threshold and mask test, per-cell top-K, bijectivity under q-bins, global cap."""
    s = score_matches(raw)
    order = canonical_order(s, raw.xA, raw.xB)
    mA, mB = masks
    keep = (s >= cfg.tau_s) & mask_lookup(mA, raw.xA) & mask_lookup(mB, raw.xB)
    idx = order[keep[order]]

    if len(idx):
        cells = np.floor(raw.xA[idx] / cfg.g).astype(np.int64)
        _, inv = np.unique(cells, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        # rank of each match within its cell, preserving canonical order
        by_cell = np.argsort(inv, kind="stable")
        sorted_cells = inv[by_cell]
        starts = np.r_[0, np.flatnonzero(np.diff(sorted_cells)) + 1]
        counts = np.diff(np.r_[starts, len(inv)])
        rank = np.empty(len(idx), dtype=np.int64)
        rank[by_cell] = np.arange(len(inv)) - np.repeat(starts, counts)
        idx = idx[rank < cfg.K_cell]

    if len(idx):
        binsA = np.floor(raw.xA[idx] / cfg.q).astype(np.int64)
        binsB = np.floor(raw.xB[idx] / cfg.q).astype(np.int64)
        unique = (_unique_rows(binsA) == 1) & (_unique_rows(binsB) == 1)
        idx = idx[unique]

    idx = idx[: cfg.N_max]
    return FilteredMatchSet(raw.subset(idx), s[idx], idx)


# ---------------------------------------------------------------------------
# essential matrix


@dataclass(frozen=True, eq=False)
class EssentialModel:
    E: np.ndarray

    def __post_init__(self):
        E = np.asarray(self.E, dtype=float).reshape(3, 3)
        if abs(np.linalg.norm(E) - 1) > 1e-9:
            raise ValidationError("essential matrix must have unit Frobenius norm")
        if abs(np.linalg.det(E)) > 1e-9:
            raise ValidationError("essential matrix must be rank 2")
        EEt = E @ E.T
        if np.abs(2 * EEt @ E - np.trace(EEt) * E).max() > 1e-6:
            raise ValidationError("matrix violates the essential cubic constraint")
        object.__setattr__(self, "E", E)


def project_to_essential(M) -> np.ndarray:
    U, s, Vt = np.linalg.svd(np.asarray(M, dtype=float))
    sigma = (s[0] + s[1]) / 2
    E = U @ np.diag([sigma, sigma, 0.0]) @ Vt
    return E / np.linalg.norm(E)


def eight_point_essential(bearings_A, bearings_B) -> EssentialModel:
    """Linear estimate of ``E`` with ``uB^T E uA = 0`` from >= 8 bearing pairs."""
    u = np.asarray(bearings_A, dtype=float).reshape(-1, 3)
    v = np.asarray(bearings_B, dtype=float).reshape(-1, 3)
    if len(u) < 8 or len(u) != len(v):
        raise ValidationError(f"need >= 8 paired bearings, got {len(u)}/{len(v)}")
    A = (v[:, :, None] * u[:, None, :]).reshape(-1, 9)
    _, s, Vt = np.linalg.svd(A, full_matrices=True)
    if len(s) < 8 or s[7] <= 1e-10 * s[0]:
        raise DegenerateError("bearing configuration does not determine E")
    return EssentialModel(project_to_essential(Vt[-1].reshape(3, 3)))


def essential_from_pose(R, t) -> np.ndarray:
    """Unit-norm ``[t]x R`` for the motion ``X_B = R X_A + t``."""
    E = hat(np.asarray(t, dtype=float)) @ np.asarray(R, dtype=float)
    return E / np.linalg.norm(E)


def algebraic_residual(E, bA, bB) -> np.ndarray:
    return np.einsum("ni,ij,nj->n", bB, E, bA)


def epipolar_angular_residual(E, bA, bB) -> np.ndarray:
    """First-order angular distance (rad) of a bearing pair from the epipolar constraint.

    The algebraic error is divided by the norm of its gradient restricted to the
    tangent planes of both bearings, i.e. the smallest total rotation of the two
    rays that satisfies ``uB^T E uA = 0`` to first order.
    """
    E = np.asarray(E)
    n1 = bA @ E.T     # E uA, normal of the epipolar plane in view B
    n2 = bB @ E       # E^T uB
    num = np.einsum("ni,ni->n", bB, n1)
    a = n1 - np.einsum("ni,ni->n", n1, bB)[:, None] * bB
    b = n2 - np.einsum("ni,ni->n", n2, bA)[:, None] * bA
    den = np.sqrt(np.einsum("ni,ni->n", a, a) + np.einsum("ni,ni->n", b, b))
    return np.abs(num) / np.maximum(den, 1e-300)


def decompose_essential(E, bA, bB) -> tuple[np.ndarray, np.ndarray]:
    """Relative motion ``(R, t)`` with ``X_B = R X_A + t`` and ``|t| = 1``.

    Picks the candidate that puts the most triangulated points in front of both cameras.
    """
    U, _, Vt = np.linalg.svd(np.asarray(E))
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    W = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1.0]])
    best, best_count = None, -1
    for R in (U @ W @ Vt, U @ W.T @ Vt):
        for t in (U[:, 2], -U[:, 2]):
            count = _cheirality_count(R, t, bA, bB)
            if count > best_count:
                best, best_count = (R, t), count
    return best


def _cheirality_count(R, t, bA, bB) -> int:
    # depths dA, dB solving dB*uB = dA*R uA + t in the least-squares sense
    ra = bA @ R.T
    A11 = np.einsum("ni,ni->n", ra, ra)
    A12 = -np.einsum("ni,ni->n", ra, bB)
    A22 = np.einsum("ni,ni->n", bB, bB)
    r1 = -ra @ t
    r2 = bB @ t
    det = A11 * A22 - A12 * A12
    ok = np.abs(det) > 1e-12
    dA = np.where(ok, (A22 * r1 - A12 * r2) / np.where(ok, det, 1), 0)
    dB = np.where(ok, (A11 * r2 - A12 * r1) / np.where(ok, det, 1), 0)
    return int(np.count_nonzero(ok & (dA > 0) & (dB > 0)))


# ---------------------------------------------------------------------------
# RANSAC


@dataclass(frozen=True)
class RansacConfig:
    threshold: float = 2e-3
    max_iters: int = 2000
    confidence: float = 0.999
    min_inlier_ratio: float = 0.15
    min_inliers: int = 15
    seed: int = 0


@dataclass(eq=False)
class Verification:
    model: EssentialModel
    inliers: np.ndarray          # boolean per input match
    residuals: np.ndarray
    iterations: int

    @property
    def n_inliers(self) -> int:
        return int(np.count_nonzero(self.inliers))


def derive_seed(master: int, key: str) -> int:
    """Stable per-item seed independent of scheduling and Python hash salting."""
    h = hashlib.sha256(f"{master}:{key}".encode()).digest()
    return int.from_bytes(h[:8], "little")


def msac_cost(residuals, threshold: float) -> float:
    """Truncated quadratic cost: inliers pay their squared residual, outliers the threshold's."""
    return float(np.minimum(np.square(residuals), threshold * threshold).sum())


def _polish(model: EssentialModel, bA, bB, threshold: float, rounds: int = 10):
    """Refit on the inliers, then repeatedly on a robust core of them (three
    MAD-sigmas), keeping whichever model has the lowest truncated cost."""
    r = epipolar_angular_residual(model.E, bA, bB)
    best = msac_cost(r, threshold)
    keep = r < threshold
    for _ in range(rounds):
        if keep.sum() < 8:
            break
        try:
            cand = eight_point_essential(bA[keep], bB[keep])
        except DegenerateError:
            break
        rc = epipolar_angular_residual(cand.E, bA, bB)
        c = msac_cost(rc, threshold)
        if c < best:
            model, r, best = cand, rc, c
        inl = rc < threshold
        sigma = 1.4826 * float(np.median(rc[inl])) if inl.any() else 0.0
        nxt = inl & (rc <= 3.0 * sigma)
        if np.array_equal(nxt, keep):
            break
        keep = nxt
    return model, r


def ransac_essential(bA, bB, cfg: RansacConfig = RansacConfig()) -> Verification:
    n = len(bA)
    if n < 8:
        raise VerificationFailed(f"only {n} matches; need at least 8")
    rng = np.random.default_rng(cfg.seed)
    best_E, best_cost = None, np.inf
    needed = cfg.max_iters
    it = 0
    while it < min(needed, cfg.max_iters):
        it += 1
        sample = rng.choice(n, 8, replace=False)
        try:
            model = eight_point_essential(bA[sample], bB[sample])
        except DegenerateError:
            continue
        r = epipolar_angular_residual(model.E, bA, bB)
        cost = msac_cost(r, cfg.threshold)
        if cost < best_cost:
            best_E, best_cost = model, cost
            w = int(np.count_nonzero(r < cfg.threshold)) / n
            if w >= 1:
                needed = it
            elif w ** 8 > 1e-12:
                needed = math.ceil(math.log(1 - cfg.confidence) / math.log1p(-w ** 8))
    if best_E is None:
        raise VerificationFailed("every minimal sample was degenerate")

    model, r = _polish(best_E, bA, bB, cfg.threshold)
    inl = r < cfg.threshold
    need = max(cfg.min_inlier_ratio * n, cfg.min_inliers)
    if inl.sum() < need:
        raise VerificationFailed(f"{int(inl.sum())} inliers of {n}; need {need:g}")
    return Verification(model, inl, r, it)


def ransac_verify(matches: FilteredMatchSet | RawMatchSet, intr_A: FisheyeIntrinsics,
                  intr_B: FisheyeIntrinsics, cfg: RansacConfig = RansacConfig()) -> Verification:
    raw = matches.matches if isinstance(matches, FilteredMatchSet) else matches
    if len(raw) < 8:
        raise VerificationFailed(f"only {len(raw)} matches; need at least 8")
    bA = unproject(raw.xA, intr_A)
    bB = unproject(raw.xB, intr_B)
    return ransac_essential(bA, bB, cfg)
