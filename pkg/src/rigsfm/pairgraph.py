"""Bounded image-pair graph: rig-adjacent spatial edges plus same-camera windows."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import ValidationError


class FrameId(NamedTuple):
    camera: str
    t: int

    def to_dict(self) -> dict:
        return {"cam": self.camera, "t": self.t}


Edge = tuple[FrameId, FrameId]


def canonical(a: FrameId, b: FrameId) -> Edge:
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class PairGraphConfig:
    K: int = 1
    tau: int = 3

    def __post_init__(self):
        if self.K < 0 or self.tau < 1:
            raise ValidationError(f"need K >= 0 and tau >= 1, got K={self.K}, tau={self.tau}")


@dataclass
class PairGraph:
    vertices: list[FrameId]
    edges: dict[Edge, str] = field(default_factory=dict)  # edge -> spatial|temporal|both
    bound: int = 0
    connected: bool = True

    def edge_list(self) -> list[tuple[FrameId, FrameId, str]]:
        return [(a, b, k) for (a, b), k in sorted(self.edges.items())]

    def __len__(self):
        return len(self.edges)


def _by_camera(vertices: Iterable[FrameId]) -> dict[str, list[int]]:
    out: dict[str, list[int]] = {}
    for v in vertices:
        out.setdefault(v.camera, []).append(v.t)
    return {c: sorted(ts) for c, ts in out.items()}


def build_spatial_edges(vertices: Sequence[FrameId], adjacency, K: int,
                        camera_ids: Sequence[str]) -> set[Edge]:
    """Pairs ``(I_{k,t}, I_{j,t+d})`` for adjacent cameras ``k, j`` and ``|d| <= K``."""
    A = np.asarray(adjacency)
    present = set(vertices)
    times = _by_camera(vertices)
    edges: set[Edge] = set()
    for k, ck in enumerate(camera_ids):
        for j in np.flatnonzero(A[k]):
            cj = camera_ids[j]
            for t in times.get(ck, ()):
                for d in range(-K, K + 1):
                    other = FrameId(cj, t + d)
                    if other in present:
                        edges.add(canonical(FrameId(ck, t), other))
    return edges


def build_temporal_edges(vertices: Sequence[FrameId], tau: int) -> set[Edge]:
    """Same-camera pairs with ``1 <= |t1 - t2| <= tau``."""
    if tau < 1:
        raise ValidationError("tau must be >= 1")
    edges: set[Edge] = set()
    for cam, ts in _by_camera(vertices).items():
        for i, t1 in enumerate(ts):
            for t2 in ts[i + 1:]:
                if t2 - t1 > tau:
                    break
                edges.add((FrameId(cam, t1), FrameId(cam, t2)))
    return edges


def _adjacency_connected(A: np.ndarray) -> bool:
    n = len(A)
    if n == 0:
        return True
    seen, stack = {0}, [0]
    while stack:
        i = stack.pop()
        for j in np.flatnonzero(A[i]):
            if int(j) not in seen:
                seen.add(int(j))
                stack.append(int(j))
    return len(seen) == n


def edge_bound(n_vertices: int, adjacency, cfg: PairGraphConfig) -> int:
    A = np.asarray(adjacency)
    d_max = int(A.sum(axis=1).max()) if A.size else 0
    return n_vertices * cfg.tau + n_vertices * d_max * (2 * cfg.K + 1)


def build_pair_graph(vertices: Sequence[FrameId], adjacency, cfg: PairGraphConfig,
                     camera_ids: Sequence[str]) -> PairGraph:
    A = np.asarray(adjacency)
    if not np.array_equal(A, A.T) or np.any(np.diag(A) != 0):
        raise ValidationError("adjacency must be symmetric with zero diagonal")
    spatial = build_spatial_edges(vertices, A, cfg.K, camera_ids)
    temporal = build_temporal_edges(vertices, cfg.tau)
    edges = {e: "spatial" for e in spatial}
    for e in temporal:
        edges[e] = "both" if e in edges else "temporal"
    verts = sorted(set(vertices))
    bound = edge_bound(len(verts), A, cfg)
    if len(edges) > bound:
        raise AssertionError(f"edge count {len(edges)} exceeds bound {bound}")
    return PairGraph(verts, dict(sorted(edges.items())), bound, _adjacency_connected(A))


def frames_for(camera_ids: Sequence[str], n_frames: int) -> list[FrameId]:
    return [FrameId(c, t) for c in camera_ids for t in range(n_frames)]
