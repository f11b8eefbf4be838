"""In-memory pipeline stages: gating, pair graph, filtering, verification, SfM."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import NoTargetError, VerificationFailed
from .geometry import RigConfig
from .maskgate import GateConfig, InstanceProposal, build_rigid_mask, empty_mask, motion_masks, track_sequence
from .matching import (FilterConfig, FilteredMatchSet, RansacConfig, RawMatchSet, derive_seed,
                       filter_matches, ransac_verify)
from .pairgraph import FrameId, PairGraph, PairGraphConfig, build_pair_graph
from .sfm import BundleReport, Reconstruction, SfmConfig, build_tracks, bundle_adjust, compute_metrics
from .sfm.initialize import PairGeometry, extrinsics_from_pairs, initialize

Edge = tuple[FrameId, FrameId]


@dataclass(frozen=True)
class Ablation:
    masks: bool = True
    motion_gating: bool = True
    rig_priors: bool = True
    intrinsics: bool = True


@dataclass(frozen=True)
class PipelineConfig:
    gate: GateConfig = GateConfig()
    pairs: PairGraphConfig = PairGraphConfig()
    filter: FilterConfig = FilterConfig()
    ransac: RansacConfig = RansacConfig(threshold=1e-2)
    sfm: SfmConfig = SfmConfig()
    ablation: Ablation = Ablation()
    seed: int = 0
    threads: int = 1


def effective_rig(rig: RigConfig, ablation: Ablation) -> RigConfig:
    if ablation.intrinsics:
        return rig
    return rig.with_intrinsics({c.id: c.intrinsics.without_distortion() for c in rig.cameras})


# ---------------------------------------------------------------------------
# stage 1: masks


@dataclass(eq=False)
class CameraMasks:
    vehicle: list[np.ndarray]
    rigid: list[np.ndarray]
    interval: tuple[int, int] | None
    anchor: int | None


def gate_camera(frames: Sequence[np.ndarray], proposals: Sequence[Sequence[InstanceProposal]],
                wheels: Sequence[np.ndarray] | None, cfg: GateConfig,
                motion_gating: bool = True) -> CameraMasks:
    """Vehicle and rigid-body masks for one camera's frame sequence."""
    cfg = replace(cfg, motion_gating=motion_gating)
    shape = np.asarray(frames[0]).shape
    motions = motion_masks([np.asarray(f, dtype=float) for f in frames])
    try:
        res = track_sequence(proposals, motions, cfg, shape)
    except NoTargetError:
        blank = [empty_mask(*shape) for _ in frames]
        return CameraMasks(blank, [m.copy() for m in blank], None, None)
    if wheels is None:
        rigid = [m.copy() for m in res.masks]
    else:
        rigid = [build_rigid_mask(v, w) for v, w in zip(res.masks, wheels)]
    return CameraMasks(res.masks, rigid, res.interval, res.anchor)


# ---------------------------------------------------------------------------
# stage 2-4: pairs, filtering, verification


def pair_graph(rig: RigConfig, n_frames: int, cfg: PairGraphConfig) -> PairGraph:
    from .pairgraph import frames_for
    return build_pair_graph(frames_for(rig.ids, n_frames), rig.adjacency, cfg, rig.ids)


def filter_all(raw: Mapping[Edge, RawMatchSet], masks: Mapping[FrameId, np.ndarray] | None,
               cfg: FilterConfig) -> dict[Edge, FilteredMatchSet]:
    out = {}
    for (a, b), m in sorted(raw.items()):
        mk = (None, None) if masks is None else (masks[a], masks[b])
        out[(a, b)] = filter_matches(m, mk, cfg)
    return out


@dataclass(eq=False)
class PairResult:
    status: str                     # "verified" | "dropped"
    E: np.ndarray | None
    inliers: np.ndarray             # over the filtered matches
    reason: str = ""


def verify_pair(edge: Edge, matches: FilteredMatchSet | RawMatchSet, rig: RigConfig,
                cfg: RansacConfig, seed: int) -> PairResult:
    a, b = edge
    n = len(matches)
    key = f"{a.camera}:{a.t}|{b.camera}:{b.t}"
    try:
        v = ransac_verify(matches, rig.camera(a.camera).intrinsics, rig.camera(b.camera).intrinsics,
                          replace(cfg, seed=derive_seed(seed, key)))
    except VerificationFailed as e:
        return PairResult("dropped", None, np.zeros(n, dtype=bool), str(e))
    return PairResult("verified", v.model.E, v.inliers)


def verify_all(filtered: Mapping[Edge, FilteredMatchSet | RawMatchSet], rig: RigConfig,
               cfg: RansacConfig, seed: int, threads: int = 1) -> dict[Edge, PairResult]:
    edges = sorted(filtered)
    work = lambda e: verify_pair(e, filtered[e], rig, cfg, seed)
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(work, edges))
    else:
        results = [work(e) for e in edges]
    return dict(zip(edges, results))


def verified_geometry(filtered: Mapping[Edge, FilteredMatchSet | RawMatchSet],
                      results: Mapping[Edge, PairResult]) -> dict[Edge, PairGeometry]:
    out = {}
    for e, r in sorted(results.items()):
        if r.status != "verified":
            continue
        m = filtered[e]
        raw = m.matches if isinstance(m, FilteredMatchSet) else m
        out[e] = PairGeometry(r.E, raw.subset(np.flatnonzero(r.inliers)))
    return out


# ---------------------------------------------------------------------------
# stage 5: reconstruction


@dataclass(eq=False)
class SfmResult:
    reconstruction: Reconstruction
    report: BundleReport
    n_tracks: int
    initial: Reconstruction


def reconstruct(pairs: Mapping[Edge, PairGeometry], rig: RigConfig, cfg: SfmConfig,
                ablation: Ablation = Ablation()) -> SfmResult:
    tracks = build_tracks({e: p.matches for e, p in pairs.items()}, cfg.track_quantum)
    if ablation.rig_priors:
        ext = None
        ba_rig, ba_cfg = rig, cfg
    else:
        ext = extrinsics_from_pairs(rig, pairs)
        ba_rig = rig.with_priors(ext)
        ba_cfg = replace(cfg, lambda_prior=0.0)
    init = initialize(tracks, ba_rig, pairs, ba_cfg, extrinsics=ext)
    rec, report = bundle_adjust(init, ba_rig, ba_cfg)
    return SfmResult(rec, report, len(tracks), init)


def run_in_memory(rig: RigConfig, n_frames: int, raw: Mapping[Edge, RawMatchSet],
                  frames: Mapping[FrameId, np.ndarray], proposals: Mapping[FrameId, list],
                  wheels: Mapping[FrameId, np.ndarray] | None, cfg: PipelineConfig) -> dict:
    """Every stage on in-memory inputs; returns intermediate products and metrics."""
    timings = {}
    t0 = time.perf_counter()
    ab = cfg.ablation
    rig_eff = effective_rig(rig, ab)
    masks = None
    gates = {}
    if ab.masks:
        masks = {}
        for cid in rig.ids:
            fr = [frames[FrameId(cid, t)] for t in range(n_frames)]
            pr = [proposals[FrameId(cid, t)] for t in range(n_frames)]
            wh = None if wheels is None else [wheels[FrameId(cid, t)] for t in range(n_frames)]
            cm = gate_camera(fr, pr, wh, cfg.gate, ab.motion_gating)
            gates[cid] = cm
            for t in range(n_frames):
                masks[FrameId(cid, t)] = cm.rigid[t]
    timings["maskgate"] = time.perf_counter() - t0
    graph = pair_graph(rig, n_frames, cfg.pairs)
    edges = {e for e, _ in graph.edges.items()}
    raw_in = {e: m for e, m in raw.items() if e in edges}
    t1 = time.perf_counter()
    filtered = filter_all(raw_in, masks, cfg.filter)
    timings["filter"] = time.perf_counter() - t1
    t2 = time.perf_counter()
    results = verify_all(filtered, rig_eff, cfg.ransac, cfg.seed, cfg.threads)
    timings["verify"] = time.perf_counter() - t2
    pairs = verified_geometry(filtered, results)
    t3 = time.perf_counter()
    sfm = reconstruct(pairs, rig_eff, replace(cfg.sfm, seed=cfg.seed), ab)
    timings["sfm"] = time.perf_counter() - t3
    frames_all = [FrameId(c, t) for c in rig.ids for t in range(n_frames)]
    metrics = compute_metrics(sfm.reconstruction, rig_eff if ab.rig_priors else
                              rig_eff.with_priors(sfm.reconstruction.local_extrinsics), frames_all)
    return {"masks": masks, "gates": gates, "graph": graph, "filtered": filtered,
            "verification": results, "pairs": pairs, "sfm": sfm, "metrics": metrics,
            "timings": timings}
