"""Probabilistic edge graphs over detection proposals.

Edges between proposals are expectations of the class co-occurrence prior
under the per-proposal class distributions: E = P @ T @ P.T. With one-hot P
this reduces to a direct table lookup, which is also what the oracle
construction produces for proposals matched to ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .prior import Box, PriorMatrix
from .tensorcore import as_matrix

__all__ = [
    "SceneGraph",
    "check_class_probs",
    "build_edges",
    "iou",
    "match_proposals",
    "build_oracle_edges",
    "connected_subset",
]

PROB_ROW_TOL = 1e-9


@dataclass
class SceneGraph:
    """Node features (N x D) plus a symmetric edge weight matrix (N x N)."""

    nodes: np.ndarray
    edges: np.ndarray

    def __post_init__(self):
        self.nodes = as_matrix("graph nodes", self.nodes)
        self.edges = as_matrix("graph edges", self.edges, rows=self.nodes.shape[0],
                               cols=self.nodes.shape[0])

    @property
    def num_nodes(self) -> int:
        return self.nodes.shape[0]


def check_class_probs(name: str, probs, num_classes: int | None = None) -> np.ndarray:
    """Validate an N x C row-stochastic matrix."""
    p = as_matrix(name, probs, cols=num_classes)
    if ((p < 0.0) | (p > 1.0)).any():
        raise ValueError(f"{name}: entries outside [0, 1]")
    rows = p.sum(axis=1)
    off = np.abs(rows - 1.0)
    if (off > PROB_ROW_TOL).any():
        i = int(np.argmax(off))
        raise ValueError(f"{name}: row {i} sums to {rows[i]}, expected 1 +- {PROB_ROW_TOL}")
    return p


def build_edges(class_probs, prior: PriorMatrix) -> np.ndarray:
    """Edge weights E = P @ T @ P.T.

    Symmetric with entries in [0, max(T)] by construction; with one-hot rows
    the (i, j) entry is exactly T[c_i][c_j].
    """
    p = check_class_probs("class probs", class_probs, prior.num_classes)
    return p @ prior.values @ p.T


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def match_proposals(proposals: list[Box], gt_boxes: list[Box], iou_thresh: float = 0.5) -> list[int | None]:
    """Match each proposal to the ground-truth box of highest IoU.

    Returns one ground-truth index (or None) per proposal. A match requires
    IoU >= iou_thresh; ties resolve to the lowest ground-truth index. Matching
    is independent per proposal, so several proposals may share a target.
    """
    matches: list[int | None] = []
    for prop in proposals:
        best_idx: int | None = None
        best_iou = 0.0
        for gi, gt in enumerate(gt_boxes):
            v = iou(prop, gt)
            if v > best_iou:
                best_iou = v
                best_idx = gi
        matches.append(best_idx if best_iou >= iou_thresh else None)
    return matches


def build_oracle_edges(proposals: list[Box], gt: list[tuple[int, Box]],
                       prior: PriorMatrix, iou_thresh: float = 0.5) -> np.ndarray:
    """Ground-truth edge graph: prior lookups between matched proposals.

    e_ij = T[c_i][c_j] when both proposals match ground truth (c_* the matched
    classes, including i == j); every pair involving an unmatched proposal is
    zero, leaving those nodes isolated.
    """
    gt_boxes = [box for _cid, box in gt]
    classes = [cid for cid, _box in gt]
    for cid in classes:
        if not 0 <= cid < prior.num_classes:
            raise ValueError(f"ground-truth class id {cid} out of range [0, {prior.num_classes})")
    matched = match_proposals(proposals, gt_boxes, iou_thresh)
    n = len(proposals)
    edges = np.zeros((n, n), dtype=np.float64)
    idx = [i for i, m in enumerate(matched) if m is not None]
    cls = np.array([classes[matched[i]] for i in idx], dtype=np.int64)
    if idx:
        sub = prior.values[np.ix_(cls, cls)]
        edges[np.ix_(idx, idx)] = sub
    return edges


def connected_subset(indices: list[int], edges: np.ndarray) -> list[int]:
    """Largest subset of indices whose restricted edge rows all carry mass.

    Doubly-stochastic attention needs every row of the kernel to be nonzero,
    so propagation runs on this subset; dropping one node can zero another's
    row, hence the iteration.
    """
    keep = list(indices)
    while keep:
        sub = edges[np.ix_(keep, keep)]
        dead = [keep[i] for i in range(len(keep)) if not sub[i].any()]
        if not dead:
            break
        keep = [i for i in keep if i not in dead]
    return keep
