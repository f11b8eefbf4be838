"""Rig-aware bundle adjustment.

Unknowns are one world_from_rig pose per registered time, one rig_from_camera
pose per non-reference camera and the 3D points. Camera ``c`` at time ``t``
sees point ``X`` at ``pi_c(B_c^-1 A_t^-1 X)``. Pose updates are left
perturbations ``T <- exp(d) T``. The objective is

    sum_o huber(||pi - x||) + lambda * sum_c ||log(B_c Bbar_c^-1)||^2

with the reference camera and the first registered time held fixed. Each
Levenberg-Marquardt step eliminates the points with a Schur complement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.sparse import csr_matrix

from ..errors import NumericalError, ValidationError
from ..geometry import (FisheyeIntrinsics, RigConfig, RigidPose, hat, se3_exp, se3_left_jacobian,
                        se3_log)
from ..pairgraph import FrameId
from .model import BundleReport, Reconstruction, SfmConfig, Track

_MIN_DEPTH = 1e-6
_MAX_THETA = 1.65


@dataclass(eq=False)
class Problem:
    """Flattened observations of a reconstruction."""
    cams: list[str]
    times: list[int]
    intrinsics: list[FisheyeIntrinsics]
    priors: list[RigidPose]
    cam: np.ndarray        # camera slot per observation
    slot: np.ndarray       # time slot per observation
    point: np.ndarray      # point index per observation
    uv: np.ndarray
    ref: int               # reference camera slot
    fixed_slot: int        # gauge-fixed time slot
    n_points: int


@dataclass(eq=False)
class State:
    AR: np.ndarray         # (n_times, 3, 3) world_from_rig
    At: np.ndarray
    BR: np.ndarray         # (n_cams, 3, 3) rig_from_camera
    Bt: np.ndarray
    X: np.ndarray          # (n_points, 3)

    def copy(self) -> "State":
        return State(self.AR.copy(), self.At.copy(), self.BR.copy(), self.Bt.copy(), self.X.copy())


def huber(s, delta):
    """``s^2`` up to ``delta``, linear ``2 delta s - delta^2`` beyond."""
    s = np.asarray(s, dtype=float)
    return np.where(s <= delta, s * s, 2 * delta * s - delta * delta)


def huber_weight(s, delta):
    s = np.asarray(s, dtype=float)
    return np.where(s <= delta, 1.0, delta / np.maximum(s, 1e-300))


def build_problem(recon: Reconstruction, rig: RigConfig) -> tuple[Problem, State]:
    cams = rig.ids
    cam_slot = {c: i for i, c in enumerate(cams)}
    observed = {f.t for tr in recon.tracks for f in tr.frames}
    times = sorted(t for t in recon.rig_trajectory if t in observed)
    time_slot = {t: i for i, t in enumerate(times)}
    cam, slot, point, uv = [], [], [], []
    for j, tr in enumerate(recon.tracks):
        for f, x in zip(tr.frames, tr.pixels):
            if f.t not in time_slot:
                continue
            cam.append(cam_slot[f.camera])
            slot.append(time_slot[f.t])
            point.append(j)
            uv.append(x)
    if not cam:
        raise ValidationError("reconstruction has no observations in registered times")
    used_slots = sorted(set(slot))
    prob = Problem(cams, times, [rig.camera(c).intrinsics for c in cams],
                   [rig.camera(c).prior for c in cams],
                   np.asarray(cam), np.asarray(slot), np.asarray(point),
                   np.asarray(uv, dtype=float).reshape(-1, 2),
                   cam_slot[rig.reference], used_slots[0], len(recon.tracks))
    state = State(np.stack([recon.rig_trajectory[t].rotation for t in times]),
                  np.stack([recon.rig_trajectory[t].translation for t in times]),
                  np.stack([recon.local_extrinsics[c].rotation for c in cams]),
                  np.stack([recon.local_extrinsics[c].translation for c in cams]),
                  recon.points.copy())
    return prob, state


# ---------------------------------------------------------------------------
# residuals and Jacobians


def _camera_points(prob: Problem, st: State):
    X = st.X[prob.point]
    AR = st.AR[prob.slot]
    BR = st.BR[prob.cam]
    Y = np.einsum("nji,nj->ni", AR, X - st.At[prob.slot])
    P = np.einsum("nji,nj->ni", BR, Y - st.Bt[prob.cam])
    return X, Y, P, AR, BR


def _valid(P):
    ok = np.isfinite(P).all(axis=1) & (P[:, 2] > _MIN_DEPTH)
    ok &= np.arctan2(np.hypot(P[:, 0], P[:, 1]), np.where(ok, P[:, 2], 1.0)) < _MAX_THETA
    return ok


def _project_all(prob: Problem, P, want_jac: bool):
    from ..geometry import project, project_jacobian
    n = len(P)
    uv = np.zeros((n, 2))
    J = np.zeros((n, 2, 3)) if want_jac else None
    for c in np.unique(prob.cam):
        rows = np.flatnonzero(prob.cam == c)
        if want_jac:
            uv[rows], J[rows] = project_jacobian(P[rows], prob.intrinsics[c])
        else:
            uv[rows] = project(P[rows], prob.intrinsics[c])
    return uv, J


def residuals(prob: Problem, st: State, want_jac: bool = False):
    """Reprojection residuals ``pi - x`` and, optionally, their Jacobians.

    Returns ``(e, Jrig, Jext, Jpt)``; ``e`` is ``None`` if any point leaves the
    projection domain.
    """
    X, Y, P, AR, BR = _camera_points(prob, st)
    if not _valid(P).all():
        return None, None, None, None
    uv, Jp = _project_all(prob, P, want_jac)
    e = uv - prob.uv
    if not want_jac:
        return e, None, None, None
    M = np.einsum("nji,nkj->nik", BR, AR)           # BR^T AR^T
    dA = np.concatenate([-M, M @ hat(X)], axis=2)     # dP / d(delta_A)
    BRt = np.transpose(BR, (0, 2, 1))
    dB = np.concatenate([-BRt, BRt @ hat(Y)], axis=2)
    return e, Jp @ dA, Jp @ dB, Jp @ M


def prior_terms(prob: Problem, st: State, lam: float):
    """Per-camera prior residuals ``sqrt(lam) log(B Bbar^-1)`` and Jacobians."""
    n = len(prob.cams)
    r = np.zeros((n, 6))
    J = np.zeros((n, 6, 6))
    if lam == 0:
        return r, J
    s = np.sqrt(lam)
    for c in range(n):
        D = RigidPose(st.BR[c], st.Bt[c]) @ prob.priors[c].inverse()
        xi = se3_log(D).vector()
        r[c] = s * xi
        J[c] = s * np.linalg.inv(se3_left_jacobian(xi))
    r[prob.ref] = 0
    J[prob.ref] = 0
    return r, J


def total_cost(prob: Problem, st: State, cfg: SfmConfig) -> tuple[float, float, float]:
    e, *_ = residuals(prob, st)
    if e is None:
        return np.inf, np.inf, np.inf
    if not np.isfinite(e).all():
        raise NumericalError("non-finite reprojection residual")
    rep = float(huber(np.linalg.norm(e, axis=1), cfg.huber_delta).sum())
    r, _ = prior_terms(prob, st, cfg.lambda_prior)
    pri = float((r * r).sum())
    return rep + pri, rep, pri


# ---------------------------------------------------------------------------
# normal equations with point elimination


def _block_layout(prob: Problem, optimize_extrinsics: bool):
    n_t, n_c = len(prob.times), len(prob.cams)
    rig_block = np.full(n_t, -1)
    free_t = [i for i in range(n_t) if i != prob.fixed_slot]
    rig_block[free_t] = np.arange(len(free_t))
    ext_block = np.full(n_c, -1)
    if optimize_extrinsics:
        free_c = [c for c in range(n_c) if c != prob.ref]
        ext_block[free_c] = len(free_t) + np.arange(len(free_c))
    n_blocks = len(free_t) + (n_c - 1 if optimize_extrinsics else 0)
    return rig_block, ext_block, n_blocks


class _Grouping:
    """Precomputed sort order for repeated segmented sums over a fixed key array."""

    def __init__(self, keys: np.ndarray, n_keys: int):
        self.order = np.argsort(keys, kind="stable")
        sk = keys[self.order]
        self.starts = np.r_[0, np.flatnonzero(np.diff(sk)) + 1] if len(sk) else np.zeros(0, int)
        self.keys = sk[self.starts] if len(sk) else np.zeros(0, int)
        self.n_keys = n_keys

    def sum(self, values: np.ndarray) -> np.ndarray:
        out = np.zeros((self.n_keys,) + values.shape[1:])
        if len(self.starts):
            out[self.keys] = np.add.reduceat(values[self.order], self.starts, axis=0)
        return out


@dataclass(eq=False)
class _Structure:
    rig_block: np.ndarray
    ext_block: np.ndarray
    n_blocks: int
    rows: np.ndarray           # (n, 12) global parameter row per camera Jacobian column
    by_slot: _Grouping
    by_cam: _Grouping
    by_pair: _Grouping
    by_point: _Grouping
    by_row: _Grouping          # for scattering into the reduced right-hand side
    z_live: np.ndarray         # H entries that belong to free parameters
    z_inverse: np.ndarray      # live H entry -> nonzero of Z
    z_indices: np.ndarray
    z_indptr: np.ndarray
    zt_perm: np.ndarray        # nonzeros of Z reordered for Z^T in CSR form
    zt_indices: np.ndarray
    zt_indptr: np.ndarray


def _structure(prob: Problem, optimize_extrinsics: bool) -> _Structure:
    cache = prob.__dict__.setdefault("_cache", {})
    if optimize_extrinsics in cache:
        return cache[optimize_extrinsics]
    rig_block, ext_block, nb = _block_layout(prob, optimize_extrinsics)
    n_t, n_c, n_p = len(prob.times), len(prob.cams), prob.n_points
    rb = np.where(rig_block[prob.slot] >= 0, rig_block[prob.slot], nb)
    eb = np.where(ext_block[prob.cam] >= 0, ext_block[prob.cam], nb)
    rows = np.concatenate([6 * rb[:, None] + np.arange(6), 6 * eb[:, None] + np.arange(6)], axis=1)
    cols = 3 * prob.point[:, None] + np.arange(3)
    nC = 6 * nb
    # nonzeros of Z (rows of fixed parameters dropped), in CSR order, plus the transpose order
    lin = (np.repeat(rows, 3, axis=1) * (3 * n_p) + np.tile(cols, (1, 12))).reshape(-1)
    live = np.flatnonzero(lin < nC * 3 * n_p)
    uniq, inv = np.unique(lin[live], return_inverse=True)
    z_rows, z_cols = uniq // (3 * n_p), uniq % (3 * n_p)
    perm = np.lexsort((z_rows, z_cols))
    st = _Structure(rig_block, ext_block, nb, rows,
                    _Grouping(prob.slot, n_t), _Grouping(prob.cam, n_c),
                    _Grouping(prob.slot * n_c + prob.cam, n_t * n_c), _Grouping(prob.point, n_p),
                    _Grouping(rows.reshape(-1), nC + 6),
                    live, inv.reshape(-1), z_cols.astype(np.int64),
                    np.searchsorted(z_rows, np.arange(nC + 1)).astype(np.int64),
                    perm, z_rows[perm].astype(np.int64),
                    np.searchsorted(z_cols[perm], np.arange(3 * n_p + 1)).astype(np.int64))
    cache[optimize_extrinsics] = st
    return st


def _assemble(prob: Problem, lin, optimize_extrinsics: bool) -> dict:
    """Undamped normal-equation blocks at a linearization point."""
    e, Jr, Je, Jx, w, rp, Jpri = lin
    S = _structure(prob, optimize_extrinsics)
    nb = S.n_blocks
    nC = 6 * nb
    n_t, n_c = len(prob.times), len(prob.cams)
    sw = w[:, None, None]
    we = (w[:, None] * e)[..., None]

    JrT = np.transpose(Jr, (0, 2, 1))
    JeT = np.transpose(Je, (0, 2, 1))
    Urr = S.by_slot.sum(JrT @ (sw * Jr))
    Uee = S.by_cam.sum(JeT @ (sw * Je))
    Ure = S.by_pair.sum(JrT @ (sw * Je)).reshape(n_t, n_c, 6, 6)
    gr = S.by_slot.sum((JrT @ we)[..., 0])
    ge = S.by_cam.sum((JeT @ we)[..., 0])
    if optimize_extrinsics:
        Uee = Uee + np.transpose(Jpri, (0, 2, 1)) @ Jpri
        ge = ge + np.einsum("nji,nj->ni", Jpri, rp)

    U = np.zeros((nC + 6, nC + 6))                       # last block is a sink for fixed params
    g = np.zeros(nC + 6)
    for i in range(n_t):
        b = S.rig_block[i]
        if b < 0:
            continue
        U[6 * b:6 * b + 6, 6 * b:6 * b + 6] += Urr[i]
        g[6 * b:6 * b + 6] += gr[i]
        for c in range(n_c):
            bc = S.ext_block[c]
            if bc >= 0:
                U[6 * b:6 * b + 6, 6 * bc:6 * bc + 6] += Ure[i, c]
                U[6 * bc:6 * bc + 6, 6 * b:6 * b + 6] += Ure[i, c].T
    for c in range(n_c):
        bc = S.ext_block[c]
        if bc >= 0:
            U[6 * bc:6 * bc + 6, 6 * bc:6 * bc + 6] += Uee[c]
            g[6 * bc:6 * bc + 6] += ge[c]

    JxT = np.transpose(Jx, (0, 2, 1))
    V = S.by_point.sum(JxT @ (sw * Jx))
    gp = S.by_point.sum((JxT @ we)[..., 0])
    G = np.concatenate([JrT, JeT], axis=1) @ (sw * Jx)          # W_o = [Jr | Je]^T w Jx
    return {"U": U, "g": g, "V": V, "gp": gp, "G": G, "S": S}


def lm_step(prob: Problem, st: State, mu: float, asm: dict):
    """One damped Gauss-Newton step with the points eliminated (Schur complement)."""
    S: _Structure = asm["S"]
    nC = 6 * S.n_blocks
    n_t, n_c, n_p = len(prob.times), len(prob.cams), prob.n_points
    U = asm["U"].copy()
    g, V, gp, G = asm["g"], asm["V"], asm["gp"], asm["G"]

    dU = np.diagonal(U).copy()
    U[np.diag_indices_from(U)] += mu * np.maximum(dU, 1e-9)
    dV = np.diagonal(V, axis1=1, axis2=2)
    Vd = V + mu * np.maximum(dV, 1e-9)[:, :, None] * np.eye(3)
    try:
        Vinv = np.linalg.inv(Vd)
        C = np.linalg.cholesky(Vinv)
    except np.linalg.LinAlgError:
        return None

    # S = U - Z Z^T with Z_j = W_j chol(V_j^-1)
    H = G @ C[prob.point]
    data = np.bincount(S.z_inverse, H.reshape(-1)[S.z_live], minlength=len(S.z_indices))
    Z = csr_matrix((data, S.z_indices, S.z_indptr), shape=(nC, 3 * n_p))
    ZT = csr_matrix((data[S.zt_perm], S.zt_indices, S.zt_indptr), shape=(3 * n_p, nC))
    Sc = U[:nC, :nC] - (Z @ ZT).toarray()
    y = (Vinv @ gp[..., None])[..., 0]
    rhs = (-g + S.by_row.sum((G @ y[prob.point][..., None]).reshape(-1)))[:nC]
    try:
        dc = cho_solve(cho_factor(Sc), rhs) if nC else np.zeros(0)
    except LinAlgError:
        return None
    dcx = np.r_[dc, np.zeros(6)]
    WTdc = np.einsum("nij,ni->nj", G, dcx[S.rows])
    dx = -(Vinv @ (gp + S.by_point.sum(WTdc))[..., None])[..., 0]

    new = st.copy()
    for i in range(n_t):
        b = S.rig_block[i]
        if b >= 0:
            T = se3_exp(dc[6 * b:6 * b + 6]) @ RigidPose(st.AR[i], st.At[i])
            new.AR[i], new.At[i] = T.rotation, T.translation
    for c in range(n_c):
        b = S.ext_block[c]
        if b >= 0:
            T = se3_exp(dc[6 * b:6 * b + 6]) @ RigidPose(st.BR[c], st.Bt[c])
            new.BR[c], new.Bt[c] = T.rotation, T.translation
    new.X = st.X + dx
    return new, np.r_[dc, dx.reshape(-1)]


def linearize(prob: Problem, st: State, cfg: SfmConfig):
    e, Jr, Je, Jx = residuals(prob, st, want_jac=True)
    if e is None:
        raise NumericalError("a point left the projection domain at the linearization state")
    if not np.isfinite(e).all():
        raise NumericalError("non-finite reprojection residual")
    w = huber_weight(np.linalg.norm(e, axis=1), cfg.huber_delta)
    rp, Jp = prior_terms(prob, st, cfg.lambda_prior)
    return e, Jr, Je, Jx, w, rp, Jp


def levenberg_marquardt(prob: Problem, st: State, cfg: SfmConfig, optimize_extrinsics=True):
    cost, rep, pri = total_cost(prob, st, cfg)
    if not np.isfinite(cost):
        raise NumericalError("initial state has points outside the projection domain")
    history = [cost]
    mu = 1e-4
    accepted = 0
    converged = False
    warning = ""
    it = 0
    for it in range(1, cfg.lm_max_iters + 1):
        asm = _assemble(prob, linearize(prob, st, cfg), optimize_extrinsics)
        trials = 0
        while True:
            out = lm_step(prob, st, mu, asm)
            if out is not None:
                new, step = out
                new_cost = total_cost(prob, new, cfg)[0]
            else:
                new_cost, step = np.inf, None
            if new_cost < cost:
                break
            trials += 1
            mu *= 4.0
            if trials >= cfg.lm_max_trials:
                break
        if trials >= cfg.lm_max_trials:
            # no descent direction left at this damping: treat as converged
            converged = True
            warning = "no cost decrease within the trial budget"
            break
        rel = (cost - new_cost) / max(cost, 1e-300)
        st, cost = new, new_cost
        history.append(cost)
        accepted += 1
        mu = max(mu / 3.0, 1e-12)
        if rel < cfg.lm_tolerance or cost < 1e-24 or np.abs(step).max() < 1e-14:
            converged = True
            break
    _, rep, pri = total_cost(prob, st, cfg)
    report = BundleReport(history[0], cost, rep, pri, it, accepted, converged, warning,
                          cost_history=history)
    return st, report


# ---------------------------------------------------------------------------
# driver


def _state_to_recon(prob: Problem, st: State, tracks: list[Track]) -> Reconstruction:
    traj = {t: RigidPose(st.AR[i], st.At[i]) for i, t in enumerate(prob.times)}
    ext = {c: RigidPose(st.BR[i], st.Bt[i]) for i, c in enumerate(prob.cams)}
    rec = Reconstruction(st.X.copy(), tracks, traj, ext)
    rec.refresh_registered()
    return rec


def reprojection_errors(recon: Reconstruction, rig: RigConfig) -> list[np.ndarray]:
    """Per-track pixel error norms (``inf`` where projection fails)."""
    prob, st = build_problem(recon, rig)
    _, _, P, _, _ = _camera_points(prob, st)
    ok = _valid(P)
    err = np.full(len(P), np.inf)
    if ok.any():
        sub = Problem(prob.cams, prob.times, prob.intrinsics, prob.priors, prob.cam[ok],
                      prob.slot[ok], prob.point[ok], prob.uv[ok], prob.ref, prob.fixed_slot,
                      prob.n_points)
        uv, _ = _project_all(sub, P[ok], False)
        err[ok] = np.linalg.norm(uv - sub.uv, axis=1)
    out = [[] for _ in recon.tracks]
    registered_t = set(recon.rig_trajectory)
    k = 0
    for j, tr in enumerate(recon.tracks):
        vals = []
        for f in tr.frames:
            if f.t in registered_t:
                vals.append(err[k])
                k += 1
            else:
                vals.append(np.inf)
        out[j] = np.asarray(vals)
    return out


def prune(recon: Reconstruction, rig: RigConfig, max_px: float) -> tuple[Reconstruction, int]:
    """Drop observations above ``max_px`` and points left with fewer than two."""
    errs = reprojection_errors(recon, rig)
    keep_pts, tracks, removed = [], [], 0
    for j, (tr, e) in enumerate(zip(recon.tracks, errs)):
        ok = e <= max_px
        removed += int((~ok).sum())
        if ok.sum() >= 2:
            keep_pts.append(j)
            tracks.append(tr.subset(ok) if not ok.all() else tr)
        else:
            removed += int(ok.sum())
    out = Reconstruction(recon.points[keep_pts], tracks, dict(recon.rig_trajectory),
                         dict(recon.local_extrinsics))
    used = {f.t for tr in tracks for f in tr.frames}
    out.rig_trajectory = {t: p for t, p in out.rig_trajectory.items() if t in used}
    out.refresh_registered()
    return out, removed


def bundle_adjust(recon: Reconstruction, rig: RigConfig, cfg: SfmConfig = SfmConfig(),
                  optimize_extrinsics: bool = True, prune_outliers: bool = True
                  ) -> tuple[Reconstruction, BundleReport]:
    """Robust rig bundle adjustment with observation pruning between rounds.

    ``rig`` supplies intrinsics and the extrinsic priors.
    """
    rec = recon
    if prune_outliers:
        rec, pruned = prune(rec, rig, cfg.max_reprojection_px * 4)
    else:
        pruned = 0
    if not rec.tracks:
        raise ValidationError("no points survive for bundle adjustment")
    report = None
    rounds = cfg.prune_rounds if prune_outliers else 0
    for r in range(rounds + 1):
        prob, st = build_problem(rec, rig)
        st, rep = levenberg_marquardt(prob, st, cfg, optimize_extrinsics)
        if report is None:
            report = rep
        else:
            report.cost_history += rep.cost_history
            report.iterations += rep.iterations
            report.accepted += rep.accepted
            report.final_cost, report.reprojection_cost, report.prior_cost = (
                rep.final_cost, rep.reprojection_cost, rep.prior_cost)
            report.converged, report.warning = rep.converged, rep.warning
        rec = _state_to_recon(prob, st, rec.tracks)
        if r == rounds:
            break
        rec, removed = prune(rec, rig, cfg.max_reprojection_px)
        pruned += removed
        if removed == 0:
            break
    report.pruned = pruned
    return rec, report
