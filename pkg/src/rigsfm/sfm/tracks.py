"""Union-find of pairwise matches into multi-view tracks."""

from __future__ import annotations

from typing import Mapping

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from ..matching import RawMatchSet
from ..pairgraph import FrameId
from .model import Track


def build_tracks(verified: Mapping[tuple[FrameId, FrameId], RawMatchSet],
                 quantum: float = 0.5) -> list[Track]:
    """Connected components over ``(frame, quantized keypoint)`` nodes.

    ``verified`` maps each image pair to its inlier matches. Components that
    contain two distinct keypoints of the same frame are dropped.
    """
    frame_ids: dict[FrameId, int] = {}
    keys_a, keys_b, px_a, px_b, labels = [], [], [], [], []
    for (a, b), m in sorted(verified.items()):
        if len(m) == 0:
            continue
        ia = frame_ids.setdefault(FrameId(*a), len(frame_ids))
        ib = frame_ids.setdefault(FrameId(*b), len(frame_ids))
        qa = np.floor(m.xA / quantum).astype(np.int64)
        qb = np.floor(m.xB / quantum).astype(np.int64)
        keys_a.append(np.column_stack([np.full(len(m), ia), qa]))
        keys_b.append(np.column_stack([np.full(len(m), ib), qb]))
        px_a.append(m.xA)
        px_b.append(m.xB)
        labels.append(m.labels if m.labels is not None else np.full(len(m), -1))
    if not keys_a:
        return []
    ka, kb = np.vstack(keys_a), np.vstack(keys_b)
    n_match = len(ka)
    nodes, inv = np.unique(np.vstack([ka, kb]), axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    na, nb = inv[:n_match], inv[n_match:]
    n_nodes = len(nodes)
    graph = coo_matrix((np.ones(n_match), (na, nb)), shape=(n_nodes, n_nodes))
    _, comp = connected_components(graph, directed=False)

    # mean pixel of every node over the matches that touch it
    pix = np.vstack([np.vstack(px_a), np.vstack(px_b)])
    counts = np.bincount(inv, minlength=n_nodes)
    mean_px = np.column_stack([np.bincount(inv, pix[:, k], n_nodes) for k in range(2)]) / counts[:, None]
    lab = np.concatenate(labels)
    lab = np.r_[lab, lab]

    # drop components with two keypoints in one frame
    comp_frame = np.column_stack([comp, nodes[:, 0]])
    _, first, dup_counts = np.unique(comp_frame, axis=0, return_index=True, return_counts=True)
    bad = np.zeros(comp.max() + 1, dtype=bool)
    bad[comp_frame[first[dup_counts > 1], 0]] = True
    size = np.bincount(comp)

    inv_frames = {v: k for k, v in frame_ids.items()}
    order = np.argsort(comp, kind="stable")
    bounds = np.flatnonzero(np.diff(comp[order])) + 1
    node_label = np.full(n_nodes, -1)
    node_label[inv] = lab
    tracks = []
    for group in np.split(order, bounds):
        c = comp[group[0]]
        if bad[c] or size[c] < 2:
            continue
        frames = [inv_frames[int(i)] for i in nodes[group, 0]]
        srt = sorted(range(len(group)), key=lambda i: frames[i])
        g = group[srt]
        labs = node_label[g]
        label = int(np.bincount(labs + 1).argmax()) - 1
        tracks.append(Track(tuple(frames[i] for i in srt), mean_px[g], label))
    tracks.sort(key=lambda tr: (tr.frames[0], tuple(tr.pixels[0])))
    return tracks
