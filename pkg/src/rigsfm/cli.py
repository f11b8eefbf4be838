"""Command-line front end: one subcommand per pipeline stage.

Stages share a working directory (``--out``). Each reads the products of
the stages before it from there, writes its own, and leaves a report in
``<out>/reports/<stage>.json``. Exit codes: 0 success, 2 invalid input,
3 numerical or degeneracy failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .config import from_dict, to_dict
from .errors import NumericalError, ValidationError
from .geometry import FisheyeIntrinsics, RigConfig, RigidPose
from .maskgate import GateConfig, build_render_mask
from .matching import FilterConfig, RansacConfig, score_matches
from .pairgraph import FrameId, PairGraphConfig, frames_for
from .pipeline import (Ablation, effective_rig, filter_all, gate_camera, pair_graph,
                       reconstruct, verify_all)
from .sfm import PairGeometry, Reconstruction, SfmConfig, compute_metrics

STAGES = ("synth", "maskgate", "pairs", "filter", "verify", "sfm", "metrics", "splatproj", "pipeline")
MASK_TMPL = "masks/{channel}/{cam}/{t:04d}.pgm"


class StageError(Exception):
    def __init__(self, stage: str, err: Exception):
        super().__init__(f"[{stage}] {err}")
        self.stage = stage
        self.err = err


# ---------------------------------------------------------------------------
# context


class Context:
    def __init__(self, args):
        self.args = args
        self.out = Path(args.out)
        self.manifest: io.Manifest | None = None
        if args.manifest:
            self.manifest = io.read_manifest(args.manifest)
        self.params = dict(self.manifest.params) if self.manifest else {}
        self.seed = args.seed if args.seed is not None else (self.manifest.seed if self.manifest else 0)
        self.threads = max(1, args.threads)
        ab = dict(self.params.get("ablation", {}))
        if args.no_masks:
            ab["masks"] = False
        if args.no_motion_gating:
            ab["motion_gating"] = False
        if args.no_rig_priors:
            ab["rig_priors"] = False
        if args.no_intrinsics:
            ab["intrinsics"] = False
        self.ablation = from_dict(Ablation, ab, "params.ablation")
        self.inputs: dict[str, str] = {}

    def need_manifest(self) -> io.Manifest:
        if self.manifest is None:
            raise ValidationError("--manifest is required for this stage")
        return self.manifest

    def cfg(self, cls, key):
        return from_dict(cls, self.params.get(key), f"params.{key}")

    def rig(self) -> RigConfig:
        m = self.need_manifest()
        self.track_input("rig", m.path(m.rig))
        return m.load_rig()

    def track_input(self, name: str, path: Path) -> Path:
        path = Path(path)
        if not path.exists():
            raise ValidationError(f"missing input {name}: {path}")
        self.inputs[name] = _sha256(path)
        return path

    def product(self, name: str) -> Path:
        return self.track_input(name, self.out / name)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_report(ctx: Context, stage: str, params: dict, counts: dict, wall: float) -> None:
    (ctx.out / "reports").mkdir(parents=True, exist_ok=True)
    rep = {"stage": stage, "seed": ctx.seed, "inputs": dict(sorted(ctx.inputs.items())),
           "params": params, "counts": counts, "wall_time_s": round(wall, 6)}
    io.write_json(ctx.out / "reports" / f"{stage}.json", rep)


# ---------------------------------------------------------------------------
# stages


def stage_synth(ctx: Context) -> tuple[dict, dict]:
    from .synth.export import export_scene
    from .synth.rig import perturb_priors
    from .synth.scene import SynthConfig, simulate

    p = ctx.params
    scfg = from_dict(SynthConfig, {**p.get("synth", {}), "seed": ctx.seed}, "params.synth")
    scene = simulate(scfg)
    rig = scene.rig
    pert = p.get("prior_perturbation")
    if pert:
        rig = perturb_priors(rig, float(pert.get("translation", 0.0)),
                             float(pert.get("rotation_deg", 0.0)), seed=ctx.seed)
    ctx.out.mkdir(parents=True, exist_ok=True)
    downstream = {k: v for k, v in p.items() if k not in ("synth", "prior_perturbation")}
    export_scene(scene, ctx.out, rig, downstream, ctx.seed)
    counts = {"frames": scene.n_frames * len(rig.ids), "pairs": len(scene.correspondences),
              "matches": int(sum(len(m) for m in scene.correspondences.values())),
              "visibility_fraction": scene.visibility_fraction()}
    return {"synth": to_dict(scfg), "prior_perturbation": pert}, counts


def stage_maskgate(ctx: Context) -> tuple[dict, dict]:
    m = ctx.need_manifest()
    rig = ctx.rig()
    gcfg = replace(ctx.cfg(GateConfig, "gate"), motion_gating=ctx.ablation.motion_gating)
    m.validate(rig)
    props = io.read_proposals(ctx.track_input("proposals", m.path(m.proposals)), m.root) \
        if m.proposals else {}
    n = m.n_frames
    summary = {}
    n_present = 0
    for cid in rig.ids:
        frames = [io.read_pgm(m.channel_path("frames", FrameId(cid, t))) for t in range(n)]
        wheels = ([io.read_mask(m.channel_path("wheels", FrameId(cid, t))) for t in range(n)]
                  if "wheels" in m.channels else None)
        pr = [props.get(FrameId(cid, t), []) for t in range(n)]
        cm = gate_camera(frames, pr, wheels, gcfg, ctx.ablation.motion_gating)
        for t in range(n):
            for ch, mask in (("vehicle", cm.vehicle[t]), ("rigid", cm.rigid[t]),
                             ("render", build_render_mask(cm.vehicle[t]))):
                path = ctx.out / MASK_TMPL.format(channel=ch, cam=cid, t=t)
                path.parent.mkdir(parents=True, exist_ok=True)
                io.write_mask(path, mask)
            n_present += bool(cm.vehicle[t].any())
        summary[cid] = {"interval": list(cm.interval) if cm.interval else None, "anchor": cm.anchor}
    io.write_json(ctx.out / "gate.json", summary)
    return {"gate": to_dict(gcfg)}, {"cameras": len(rig.ids), "frames_with_mask": n_present}


def stage_pairs(ctx: Context) -> tuple[dict, dict]:
    m = ctx.need_manifest()
    rig = ctx.rig()
    pcfg = ctx.cfg(PairGraphConfig, "pairs")
    g = pair_graph(rig, m.n_frames, pcfg)
    ctx.out.mkdir(parents=True, exist_ok=True)
    io.write_edges(ctx.out / "pairs.jsonl", g)
    kinds = {k: sum(1 for v in g.edges.values() if v == k) for k in ("spatial", "temporal", "both")}
    return {"pairs": to_dict(pcfg)}, {"vertices": len(g.vertices), "edges": len(g), "bound": g.bound,
                                      "connected": g.connected, **kinds}


def _masks_from_out(ctx: Context, rig: RigConfig, n: int) -> dict[FrameId, np.ndarray]:
    out = {}
    for f in frames_for(rig.ids, n):
        p = ctx.out / MASK_TMPL.format(channel="rigid", cam=f.camera, t=f.t)
        if not p.exists():
            raise ValidationError(f"rigid mask {p} missing; run maskgate first or pass --no-masks")
        out[f] = io.read_mask(p)
    return out


def stage_filter(ctx: Context) -> tuple[dict, dict]:
    m = ctx.need_manifest()
    rig = ctx.rig()
    fcfg = ctx.cfg(FilterConfig, "filter")
    if not m.matches:
        raise ValidationError("manifest names no match file")
    edges = {(a, b) for a, b, _ in io.read_edges(ctx.product("pairs.jsonl"))}
    blocks = io.read_matches(ctx.track_input("matches", m.path(m.matches)))
    raw = {}
    for blk in blocks:
        e = (blk.a, blk.b) if blk.a <= blk.b else (blk.b, blk.a)
        if e not in edges:
            continue
        if e != (blk.a, blk.b):
            mm = blk.matches
            blk.matches = type(mm)(mm.xB, mm.xA, mm.o, mm.pba, mm.pab, mm.labels)
        raw[e] = blk.matches
    masks = _masks_from_out(ctx, rig, m.n_frames) if ctx.ablation.masks else None
    filtered = filter_all(raw, masks, fcfg)
    io.write_matches(ctx.out / "filtered.jsonl", {e: f.matches for e, f in filtered.items()},
                     headers={e: {"n_raw": len(raw[e])} for e in filtered},
                     extra={e: {"s": f.s} for e, f in filtered.items()})
    n_in = sum(len(v) for v in raw.values())
    n_out = sum(len(v) for v in filtered.values())
    return ({"filter": to_dict(fcfg), "masks": ctx.ablation.masks},
            {"pairs": len(raw), "matches_in": n_in, "matches_out": n_out})


def _ransac_cfg(ctx: Context) -> RansacConfig:
    return from_dict(RansacConfig, {"threshold": 1e-2, **ctx.params.get("ransac", {})}, "params.ransac")


def stage_verify(ctx: Context) -> tuple[dict, dict]:
    rig = effective_rig(ctx.rig(), ctx.ablation)
    rcfg = _ransac_cfg(ctx)
    blocks = io.read_matches(ctx.product("filtered.jsonl"))
    sets = {(b.a, b.b): b.matches for b in blocks}
    results = verify_all(sets, rig, rcfg, ctx.seed, ctx.threads)
    headers, extra = {}, {}
    for b in blocks:
        e = (b.a, b.b)
        r = results[e]
        headers[e] = {"status": r.status, "E": None if r.E is None else r.E.ravel().tolist(),
                      "n_inliers": int(r.inliers.sum())}
        if r.reason:
            headers[e]["reason"] = r.reason
        extra[e] = {"s": score_matches(b.matches), "inlier": r.inliers}
    io.write_matches(ctx.out / "verified.jsonl", sets, headers, extra)
    n_ok = sum(r.status == "verified" for r in results.values())
    return ({"ransac": {k: v for k, v in to_dict(rcfg).items() if k != "seed"},
             "intrinsics": ctx.ablation.intrinsics},
            {"pairs": len(results), "verified": n_ok, "dropped": len(results) - n_ok,
             "inliers": int(sum(r.inliers.sum() for r in results.values()))})


def read_verified(path: Path) -> dict:
    pairs = {}
    for b in io.read_matches(path):
        if b.header.get("status") != "verified":
            continue
        inl = np.asarray(b.extra.get("inlier"), dtype=bool)
        E = np.asarray(b.header["E"], dtype=float).reshape(3, 3)
        pairs[(b.a, b.b)] = PairGeometry(E, b.matches.subset(np.flatnonzero(inl)))
    return pairs


def stage_sfm(ctx: Context) -> tuple[dict, dict]:
    rig = effective_rig(ctx.rig(), ctx.ablation)
    scfg = from_dict(SfmConfig, {**ctx.params.get("sfm", {}), "seed": ctx.seed}, "params.sfm")
    pairs = read_verified(ctx.product("verified.jsonl"))
    if not pairs:
        raise NumericalError("no verified pairs to reconstruct from")
    res = reconstruct(pairs, rig, scfg, ctx.ablation)
    rec = res.reconstruction
    io.write_ply_points(ctx.out / "points.ply", rec.points)
    io.write_tracks(ctx.out / "tracks.jsonl", rec.tracks)
    io.write_trajectory(ctx.out / "trajectory.json", rec.rig_trajectory)
    io.write_extrinsics(ctx.out / "extrinsics.json", rec.local_extrinsics)
    io.write_rig(ctx.out / "rig_used.json", rig.with_priors(rec.local_extrinsics))
    rep = res.report.to_dict()
    rep.pop("cost_history", None)
    io.write_json(ctx.out / "sfm_report.json", res.report.to_dict())
    return ({"sfm": {k: v for k, v in to_dict(scfg).items()},
             "ablation": to_dict(ctx.ablation)},
            {"tracks": res.n_tracks, "points": len(rec.points),
             "registered": len(rec.registered), **rep})


def _load_reconstruction(ctx: Context) -> tuple[Reconstruction, RigConfig]:
    pts, _ = io.read_ply_points(ctx.product("points.ply"))
    tracks = io.read_tracks(ctx.product("tracks.jsonl"))
    traj = io.read_trajectory(ctx.product("trajectory.json"))
    ext = io.read_extrinsics(ctx.product("extrinsics.json"))
    rig = io.read_rig(ctx.product("rig_used.json"))
    if len(pts) != len(tracks):
        raise ValidationError(f"{len(pts)} points but {len(tracks)} tracks")
    rec = Reconstruction(pts, tracks, traj, ext)
    rec.refresh_registered()
    return rec, rig


def stage_metrics(ctx: Context) -> tuple[dict, dict]:
    m = ctx.need_manifest()
    rec, rig = _load_reconstruction(ctx)
    metrics = compute_metrics(rec, rig, frames_for(rig.ids, m.n_frames))
    io.write_json(ctx.out / "metrics.json", metrics)
    print(json.dumps(metrics, sort_keys=True))
    return {}, metrics


def stage_splatproj(ctx: Context) -> tuple[dict, dict]:
    from .splatproj import UTConfig, ut_project_batch

    a = ctx.args
    sp = ctx.params.get("splat", {})
    g_path = a.gaussians or (ctx.manifest.path(sp["gaussians"]) if ctx.manifest and "gaussians" in sp else None)
    c_path = a.camera or (ctx.manifest.path(sp["camera"]) if ctx.manifest and "camera" in sp else None)
    if g_path is None or c_path is None:
        raise ValidationError("splatproj needs --gaussians and --camera (or params.splat)")
    mus, sigmas = io.read_ply_gaussians(ctx.track_input("gaussians", g_path))
    cam = io.read_json(ctx.track_input("camera", c_path))
    try:
        intr = FisheyeIntrinsics.from_dict(cam)
        pose = RigidPose.from_dict(cam["pose"])
    except KeyError as e:
        raise ValidationError(f"camera file missing field {e}") from None
    ucfg = ctx.cfg(UTConfig, "ut")
    c, S = ut_project_batch(mus, sigmas, pose, intr, ucfg) if len(mus) else (np.zeros((0, 2)), np.zeros((0, 2, 2)))
    ctx.out.mkdir(parents=True, exist_ok=True)
    io.write_jsonl(ctx.out / "splats.jsonl",
                   ({"u": c[i].tolist(), "S": [S[i, 0, 0], S[i, 0, 1], S[i, 1, 1]]} for i in range(len(c))))
    return {"ut": to_dict(ucfg)}, {"gaussians": len(mus)}


_RUNNERS = {"synth": stage_synth, "maskgate": stage_maskgate, "pairs": stage_pairs,
            "filter": stage_filter, "verify": stage_verify, "sfm": stage_sfm,
            "metrics": stage_metrics, "splatproj": stage_splatproj}


def run_stage(stage: str, ctx: Context) -> dict:
    ctx.inputs = {}
    t0 = time.perf_counter()
    try:
        params, counts = _RUNNERS[stage](ctx)
    except (ValidationError, NumericalError, OSError) as e:
        raise StageError(stage, e) from e
    _write_report(ctx, stage, params, counts, time.perf_counter() - t0)
    return counts


def run_pipeline(ctx: Context) -> dict:
    stages = ["pairs", "filter", "verify", "sfm", "metrics"]
    if ctx.ablation.masks:
        stages.insert(0, "maskgate")
    out = {}
    for s in stages:
        out[s] = run_stage(s, ctx)
    return out["metrics"]


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rigsfm", description=__doc__.splitlines()[0])
    p.add_argument("stage", choices=STAGES)
    p.add_argument("--manifest", help="JSON manifest (synth: optional parameter file)")
    p.add_argument("--seed", type=int, default=None, help="master seed (overrides the manifest)")
    p.add_argument("--out", default="out", help="working/output directory")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--no-masks", action="store_true", help="skip mask gating of matches")
    p.add_argument("--no-motion-gating", action="store_true", help="track without the motion term")
    p.add_argument("--no-rig-priors", action="store_true", help="estimate extrinsics without priors")
    p.add_argument("--no-intrinsics", action="store_true", help="ignore lens distortion")
    p.add_argument("--gaussians", help="splatproj: PLY of Gaussians")
    p.add_argument("--camera", help="splatproj: JSON intrinsics with a world_from_camera pose")
    return p


def _manifest_for_synth(args) -> dict:
    if not args.manifest:
        return {}
    d = io.read_json(args.manifest)
    if not isinstance(d, dict):
        raise ValidationError("synth parameter file must be a JSON object")
    return d


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.stage == "synth":
            params = _manifest_for_synth(args)
            args_m, args.manifest = args.manifest, None
            ctx = Context(args)
            ctx.params = params.get("params", params)
            if args_m:
                ctx.track_input("parameters", Path(args_m))
            if args.seed is None:
                ctx.seed = int(params.get("seed", 0))
            run_stage("synth", ctx)
        elif args.stage == "pipeline":
            run_pipeline(Context(args))
        else:
            run_stage(args.stage, Context(args))
    except StageError as e:
        print(f"rigsfm: {e}", file=sys.stderr)
        return 3 if isinstance(e.err, NumericalError) else 2
    except ValidationError as e:
        print(f"rigsfm: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"rigsfm: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"rigsfm: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
