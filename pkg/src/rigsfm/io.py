"""Readers and writers for the on-disk formats.

Formats:

* PGM (binary P5, 8-bit) for frames and masks; masks threshold at 128.
* JSON lines for matches, verified matches, edge lists, tracks and splats.
  Multi-pair match files interleave a header line ``{"a": .., "b": .., "n": k}``
  with the ``k`` match lines that follow it.
* JSON for the rig, trajectories, extrinsics, metrics and manifests.
* ASCII PLY for point clouds (``x y z r g b``) and Gaussians
  (``x y z`` plus the six upper-triangular covariance entries).

Every reader raises ``ParseError`` naming the file and the line or byte offset.
"""

from __future__ import annotations

import io as _io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

from .errors import ParseError, ValidationError
from .geometry import RigConfig, RigidPose
from .matching import RawMatchSet
from .pairgraph import FrameId, PairGraph

PathLike = str | os.PathLike
Edge = tuple[FrameId, FrameId]


def dumps(obj) -> str:
    """Canonical JSON: sorted keys, no whitespace variance."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_json(path: PathLike, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def read_json(path: PathLike):
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, str(path), e.lineno, e.pos) from None


def iter_jsonl(path: PathLike) -> Iterator[tuple[int, dict]]:
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"bad JSON ({e.msg})", str(path), lineno, e.pos) from None


def write_jsonl(path: PathLike, rows: Iterable) -> None:
    with open(path, "w") as fh:
        for r in rows:
            fh.write(dumps(r) + "\n")


def _field(rec: dict, key: str, path, lineno):
    try:
        return rec[key]
    except (KeyError, TypeError):
        raise ParseError(f"missing field {key!r}", str(path), lineno) from None


# ---------------------------------------------------------------------------
# PGM


def _pgm_header(data: bytes, path) -> tuple[int, int, int, int]:
    """``(width, height, maxval, data_offset)`` of a P5 file."""
    if data[:2] != b"P5":
        raise ParseError("not a binary PGM (expected magic P5)", str(path), offset=0)
    vals, pos = [], 2
    while len(vals) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise ParseError("malformed PGM header", str(path), offset=pos)
        vals.append(int(data[start:pos]))
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise ParseError("malformed PGM header", str(path), offset=pos)
    w, h, maxval = vals
    if w <= 0 or h <= 0 or not 0 < maxval < 256:
        raise ParseError(f"unsupported PGM geometry {w}x{h} maxval {maxval}", str(path), offset=pos)
    return w, h, maxval, pos + 1


def pgm_shape(path: PathLike) -> tuple[int, int]:
    with open(path, "rb") as fh:
        head = fh.read(512)
    w, h, _, _ = _pgm_header(head, path)
    return h, w


def read_pgm(path: PathLike) -> np.ndarray:
    """8-bit grayscale image as ``uint8 (H, W)``."""
    data = Path(path).read_bytes()
    w, h, _, off = _pgm_header(data, path)
    if len(data) - off < w * h:
        raise ParseError(f"truncated PGM: {len(data) - off} of {w * h} pixel bytes",
                         str(path), offset=len(data))
    return np.frombuffer(data, dtype=np.uint8, count=w * h, offset=off).reshape(h, w).copy()


def write_pgm(path: PathLike, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.dtype == bool:
        img = img.astype(np.uint8) * 255
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValidationError("PGM writer expects a 2D uint8 or bool array")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(np.ascontiguousarray(img).tobytes())


def read_mask(path: PathLike) -> np.ndarray:
    return read_pgm(path) >= 128


write_mask = write_pgm


# ---------------------------------------------------------------------------
# frame ids and edges


def frame_to_json(f: FrameId) -> dict:
    return {"cam": f.camera, "t": int(f.t)}


def frame_from_json(d, path="<input>", lineno=None) -> FrameId:
    try:
        t = int(d["t"])
        cam = str(d["cam"])
    except (KeyError, TypeError, ValueError):
        raise ParseError("frame id needs {cam, t}", str(path), lineno) from None
    if t < 0:
        raise ParseError("negative frame index", str(path), lineno)
    return FrameId(cam, t)


def write_edges(path: PathLike, graph: PairGraph) -> None:
    write_jsonl(path, ({"a": frame_to_json(a), "b": frame_to_json(b), "kind": k}
                       for a, b, k in graph.edge_list()))


def read_edges(path: PathLike) -> list[tuple[FrameId, FrameId, str]]:
    out = []
    for ln, rec in iter_jsonl(path):
        a = frame_from_json(_field(rec, "a", path, ln), path, ln)
        b = frame_from_json(_field(rec, "b", path, ln), path, ln)
        kind = _field(rec, "kind", path, ln)
        if kind not in ("spatial", "temporal", "both"):
            raise ParseError(f"unknown edge kind {kind!r}", str(path), ln)
        out.append((a, b, kind))
    return out


# ---------------------------------------------------------------------------
# matches


def _match_rows(m: RawMatchSet, extra: Mapping[str, np.ndarray] | None = None) -> Iterator[dict]:
    for i in range(len(m)):
        r = {"xA": m.xA[i].tolist(), "xB": m.xB[i].tolist(), "o": float(m.o[i]),
             "pab": float(m.pab[i]), "pba": float(m.pba[i])}
        if m.labels is not None:
            r["label"] = int(m.labels[i])
        if extra:
            for k, v in extra.items():
                r[k] = v[i].item()
        yield r


def write_matches(path: PathLike, pairs: Mapping[Edge, RawMatchSet],
                  headers: Mapping[Edge, dict] | None = None,
                  extra: Mapping[Edge, Mapping[str, np.ndarray]] | None = None) -> None:
    """Write several pairs to one JSON-lines file, in canonical pair order."""
    with open(path, "w") as fh:
        for e in sorted(pairs):
            m = pairs[e]
            head = {"a": frame_to_json(e[0]), "b": frame_to_json(e[1]), "n": len(m)}
            if headers and e in headers:
                head.update(headers[e])
            fh.write(dumps(head) + "\n")
            for r in _match_rows(m, extra.get(e) if extra else None):
                fh.write(dumps(r) + "\n")


@dataclass
class MatchBlock:
    a: FrameId
    b: FrameId
    matches: RawMatchSet
    header: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)   # per-match columns beyond the raw fields


_RAW_KEYS = ("xA", "xB", "o", "pab", "pba")


def read_matches(path: PathLike) -> list[MatchBlock]:
    blocks: list[MatchBlock] = []
    lines = iter_jsonl(path)
    for ln, head in lines:
        if "a" not in head or "n" not in head:
            raise ParseError("expected a pair header with a, b, n", str(path), ln)
        a = frame_from_json(head["a"], path, ln)
        b = frame_from_json(_field(head, "b", path, ln), path, ln)
        n = int(head["n"])
        rows = []
        for _ in range(n):
            try:
                lm, rec = next(lines)
            except StopIteration:
                raise ParseError(f"pair header promises {n} matches; file ended after {len(rows)}",
                                 str(path), ln) from None
            for k in _RAW_KEYS:
                _field(rec, k, path, lm)
            if len(rec["xA"]) != 2 or len(rec["xB"]) != 2:
                raise ParseError("xA and xB must have 2 coordinates", str(path), lm)
            rows.append(rec)
        xA = np.array([r["xA"] for r in rows], dtype=float).reshape(-1, 2)
        xB = np.array([r["xB"] for r in rows], dtype=float).reshape(-1, 2)
        col = lambda k: np.array([r[k] for r in rows], dtype=float)
        labels = (np.array([r["label"] for r in rows], dtype=np.int64)
                  if rows and all("label" in r for r in rows) else None)
        try:
            m = RawMatchSet(xA, xB, col("o"), col("pab"), col("pba"), labels)
        except ValidationError as e:
            raise ParseError(str(e), str(path), ln) from None
        extra_keys = sorted(set().union(*(r.keys() for r in rows)) - set(_RAW_KEYS) - {"label"}) if rows else []
        extra = {k: np.array([r.get(k) for r in rows]) for k in extra_keys}
        meta = {k: v for k, v in head.items() if k not in ("a", "b", "n")}
        blocks.append(MatchBlock(a, b, m, meta, extra))
    return blocks


# ---------------------------------------------------------------------------
# rig, poses, metrics


def write_rig(path: PathLike, rig: RigConfig) -> None:
    write_json(path, rig.to_dict())


def read_rig(path: PathLike) -> RigConfig:
    return RigConfig.from_dict(read_json(path))


def write_trajectory(path: PathLike, traj: Mapping[int, RigidPose]) -> None:
    write_json(path, [{"frame": int(t), **traj[t].to_dict()} for t in sorted(traj)])


def read_trajectory(path: PathLike) -> dict[int, RigidPose]:
    data = read_json(path)
    if not isinstance(data, list):
        raise ParseError("trajectory must be a list of poses", str(path))
    out = {}
    for i, rec in enumerate(data):
        try:
            out[int(rec["frame"])] = RigidPose.from_dict(rec)
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"entry {i}: {e}", str(path)) from None
    return out


def write_extrinsics(path: PathLike, ext: Mapping[str, RigidPose]) -> None:
    write_json(path, {c: p.to_dict() for c, p in ext.items()})


def read_extrinsics(path: PathLike) -> dict[str, RigidPose]:
    data = read_json(path)
    try:
        return {str(c): RigidPose.from_dict(p) for c, p in data.items()}
    except (KeyError, TypeError, AttributeError, ValueError) as e:
        raise ParseError(f"bad extrinsics record: {e}", str(path)) from None


# ---------------------------------------------------------------------------
# PLY


_POINT_PROPS = ("x", "y", "z", "red", "green", "blue")
_GAUSS_PROPS = ("x", "y", "z", "c00", "c01", "c02", "c11", "c12", "c22")


def _ply_header(n: int, props: Iterable[tuple[str, str]]) -> str:
    lines = ["ply", "format ascii 1.0", f"element vertex {n}"]
    lines += [f"property {t} {p}" for p, t in props]
    lines.append("end_header")
    return "\n".join(lines) + "\n"


def _write_rows(fh, arr: np.ndarray, fmt: str) -> None:
    if len(arr):
        buf = _io.StringIO()
        np.savetxt(buf, arr, fmt=fmt)
        fh.write(buf.getvalue())


def write_ply_points(path: PathLike, xyz: np.ndarray, rgb: np.ndarray | None = None) -> None:
    xyz = np.asarray(xyz, dtype=float).reshape(-1, 3)
    rgb = np.full((len(xyz), 3), 200, np.uint8) if rgb is None else np.asarray(rgb, np.uint8)
    with open(path, "w") as fh:
        fh.write(_ply_header(len(xyz), [(p, "double") for p in "xyz"]
                             + [(p, "uchar") for p in ("red", "green", "blue")]))
        if len(xyz):
            arr = np.column_stack([xyz, rgb.astype(float)])
            _write_rows(fh, arr, "%.17g %.17g %.17g %d %d %d")


def _read_ply(path: PathLike, expected: tuple[str, ...]) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    end = raw.find(b"end_header")
    if not raw.startswith(b"ply") or end < 0:
        raise ParseError("not an ASCII PLY file", str(path), 1)
    nl = raw.find(b"\n", end)
    head = raw[:end].decode().splitlines()
    body_start = nl + 1 if nl >= 0 else len(raw)
    header_lines = len(head) + 1
    if "format ascii 1.0" not in (h.strip() for h in head):
        raise ParseError("only 'format ascii 1.0' is supported", str(path), 2)
    n, props = None, []
    for i, h in enumerate(head, 1):
        tok = h.split()
        if tok[:2] == ["element", "vertex"]:
            try:
                n = int(tok[2])
            except (IndexError, ValueError):
                raise ParseError("bad vertex count", str(path), i) from None
        elif tok and tok[0] == "property":
            props.append(tok[-1])
    if n is None:
        raise ParseError("missing 'element vertex'", str(path), header_lines)
    if tuple(props) != expected:
        raise ParseError(f"expected properties {expected}, found {tuple(props)}", str(path), header_lines)
    if n == 0:
        return np.zeros((0, len(expected)))
    try:
        arr = np.loadtxt(_io.BytesIO(raw[body_start:]), dtype=float, ndmin=2)
    except ValueError:
        arr = None
    if arr is None or arr.shape != (n, len(expected)):
        _locate_bad_row(raw[body_start:], n, len(expected), path, header_lines)
    return arr


def _locate_bad_row(body: bytes, n: int, width: int, path, offset_lines: int):
    rows = body.decode(errors="replace").splitlines()
    for i, line in enumerate(rows[:n], 1):
        tok = line.split()
        try:
            ok = len(tok) == width and len([float(t) for t in tok]) == width
        except ValueError:
            ok = False
        if not ok:
            raise ParseError(f"expected {width} numbers", str(path), offset_lines + i)
    raise ParseError(f"header declares {n} vertices, found {len([r for r in rows if r.strip()])}",
                     str(path), offset_lines + len(rows))


def read_ply_points(path: PathLike) -> tuple[np.ndarray, np.ndarray]:
    arr = _read_ply(path, _POINT_PROPS)
    return arr[:, :3], arr[:, 3:].astype(np.uint8)


def write_ply_gaussians(path: PathLike, mus: np.ndarray, sigmas: np.ndarray) -> None:
    mus = np.asarray(mus, dtype=float).reshape(-1, 3)
    S = np.asarray(sigmas, dtype=float).reshape(-1, 3, 3)
    iu = np.triu_indices(3)
    with open(path, "w") as fh:
        fh.write(_ply_header(len(mus), [(p, "double") for p in _GAUSS_PROPS]))
        _write_rows(fh, np.column_stack([mus, S[:, iu[0], iu[1]]]), "%.17g")


def read_ply_gaussians(path: PathLike) -> tuple[np.ndarray, np.ndarray]:
    arr = _read_ply(path, _GAUSS_PROPS)
    S = np.empty((len(arr), 3, 3))
    iu = np.triu_indices(3)
    S[:, iu[0], iu[1]] = arr[:, 3:]
    S[:, iu[1], iu[0]] = arr[:, 3:]
    return arr[:, :3], S


# ---------------------------------------------------------------------------
# tracks


def write_tracks(path: PathLike, tracks) -> None:
    write_jsonl(path, ({"id": i, "label": int(tr.label),
                        "obs": [[f.camera, int(f.t), float(p[0]), float(p[1])]
                                for f, p in zip(tr.frames, tr.pixels)]}
                       for i, tr in enumerate(tracks)))


def read_tracks(path: PathLike):
    from .sfm import Track
    out = []
    for ln, rec in iter_jsonl(path):
        obs = _field(rec, "obs", path, ln)
        try:
            frames = [FrameId(str(o[0]), int(o[1])) for o in obs]
            pix = np.array([[o[2], o[3]] for o in obs], dtype=float)
            out.append(Track(frames, pix, int(rec.get("label", -1))))
        except (IndexError, TypeError, ValueError) as e:
            raise ParseError(f"bad track: {e}", str(path), ln) from None
    return out


# ---------------------------------------------------------------------------
# manifest


CHANNELS = ("frames", "wheels", "vehicle", "rigid", "render", "motion")


@dataclass
class Manifest:
    """A sequence manifest; paths resolve relative to ``root``.

    ``channels`` maps a channel name to a template with ``{cam}`` and ``{t}``
    fields, e.g. ``"frames/{cam}/{t:04d}.pgm"``.  ``proposals`` names a JSON
    lines file of ``{cam, t, mask, det}`` records.
    """

    root: Path
    rig: str
    n_frames: int
    channels: dict[str, str] = field(default_factory=dict)
    proposals: str | None = None
    matches: str | None = None
    params: dict = field(default_factory=dict)
    seed: int = 0

    def path(self, rel: str) -> Path:
        return self.root / rel

    def channel_path(self, channel: str, frame: FrameId) -> Path:
        try:
            tmpl = self.channels[channel]
        except KeyError:
            raise ValidationError(f"manifest has no {channel!r} channel") from None
        return self.root / tmpl.format(cam=frame.camera, t=frame.t)

    def to_dict(self) -> dict:
        d = {"rig": self.rig, "n_frames": self.n_frames, "channels": self.channels,
             "params": self.params, "seed": self.seed}
        if self.proposals:
            d["proposals"] = self.proposals
        if self.matches:
            d["matches"] = self.matches
        return d

    def load_rig(self) -> RigConfig:
        return read_rig(self.path(self.rig))

    def validate(self, rig: RigConfig | None = None) -> None:
        """Check every referenced raster exists and matches the camera's image size."""
        rig = rig or self.load_rig()
        for ch in self.channels:
            if ch not in CHANNELS:
                raise ValidationError(f"unknown channel {ch!r}")
            for cam in rig.cameras:
                want = (cam.intrinsics.height, cam.intrinsics.width)
                for t in range(self.n_frames):
                    p = self.channel_path(ch, FrameId(cam.id, t))
                    if not p.exists():
                        raise ValidationError(f"missing {ch} raster {p}")
                    if pgm_shape(p) != want:
                        raise ValidationError(
                            f"{p} is {pgm_shape(p)[::-1]} but camera {cam.id} is {want[::-1]}")
        for rel in (self.proposals, self.matches):
            if rel and not self.path(rel).exists():
                raise ValidationError(f"missing file {self.path(rel)}")


def write_manifest(path: PathLike, m: Manifest) -> None:
    write_json(path, m.to_dict())


def read_manifest(path: PathLike) -> Manifest:
    path = Path(path)
    d = read_json(path)
    try:
        n = int(d["n_frames"])
        if n < 1:
            raise ValidationError("n_frames must be positive")
        return Manifest(path.parent, str(d["rig"]), n, dict(d.get("channels", {})),
                        d.get("proposals"), d.get("matches"), dict(d.get("params", {})),
                        int(d.get("seed", 0)))
    except KeyError as e:
        raise ParseError(f"manifest missing field {e}", str(path)) from None


def read_proposals(path: PathLike, root: Path) -> dict[FrameId, list]:
    from .maskgate import InstanceProposal
    out: dict[FrameId, list] = {}
    for ln, rec in iter_jsonl(path):
        f = frame_from_json(rec, path, ln)
        mask = read_mask(root / _field(rec, "mask", path, ln))
        try:
            prop = InstanceProposal(mask, float(_field(rec, "det", path, ln)))
        except ValidationError as e:
            raise ParseError(str(e), str(path), ln) from None
        out.setdefault(f, []).append(prop)
    return out
