"""Write a synthetic scene to disk in the pipeline's input formats."""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from .. import io
from ..geometry import RigConfig
from ..pairgraph import FrameId
from .scene import BACKGROUND, BODY, WHEEL, SynthScene

FRAME_TMPL = "frames/{cam}/{t:04d}.pgm"
WHEEL_TMPL = "wheels/{cam}/{t:04d}.pgm"


def export_scene(scene: SynthScene, out: Path, rig: RigConfig | None = None,
                 params: dict | None = None, seed: int = 0) -> io.Manifest:
    """Frames, wheel masks, proposals, matches, rig and ground truth under ``out``.

    ``rig`` overrides the rig written for the pipeline (e.g. with perturbed
    priors); the exact extrinsics always go to ``ground_truth.json``.
    """
    out = Path(out)
    rig = rig or scene.rig
    n = scene.n_frames
    for cid in rig.ids:
        for sub in ("frames", "wheels", "proposals"):
            (out / sub / cid).mkdir(parents=True, exist_ok=True)

    proposals = []
    for cid in rig.ids:
        seen: dict[str, str] = {}
        for t in range(n):
            f = FrameId(cid, t)
            io.write_pgm(out / FRAME_TMPL.format(cam=cid, t=t), scene.frames[f])
            io.write_mask(out / WHEEL_TMPL.format(cam=cid, t=t), scene.wheel_masks[f])
            for p in scene.proposals[f]:
                bits = np.asarray(p.mask, dtype=bool)
                key = hashlib.sha1(np.packbits(bits).tobytes()).hexdigest()[:16]
                if key not in seen:
                    rel = f"proposals/{cid}/{key}.pgm"
                    io.write_mask(out / rel, bits)
                    seen[key] = rel
                proposals.append({"cam": cid, "t": t, "mask": seen[key], "det": p.det_score})
    io.write_jsonl(out / "proposals.jsonl", proposals)
    io.write_matches(out / "matches.jsonl", scene.correspondences)
    io.write_rig(out / "rig.json", rig)
    io.write_json(out / "ground_truth.json", ground_truth(scene))
    m = io.Manifest(out, "rig.json", n, {"frames": FRAME_TMPL, "wheels": WHEEL_TMPL},
                    "proposals.jsonl", "matches.jsonl", params or {}, seed)
    io.write_manifest(out / "manifest.json", m)
    return m


def ground_truth(scene: SynthScene) -> dict:
    vis = [[f.camera, f.t, bool(v)] for f, v in sorted(scene.visible.items())]
    return {
        "trajectory": [{"frame": t, **p.to_dict()} for t, p in enumerate(scene.trajectory)],
        "extrinsics": {c.id: c.prior.to_dict() for c in scene.rig.cameras},
        "visible": vis,
        "visibility_fraction": scene.visibility_fraction(),
        "point_kinds": scene.kinds.astype(int).tolist(),
        "kind_names": {"body": BODY, "wheel": WHEEL, "background": BACKGROUND},
    }
