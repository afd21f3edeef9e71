"""Crossmodal batch-hard triplet machinery.

A crossmodal batch stacks embeddings from both modalities into one matrix
with a modality tag and a discrete class label per row.  For every row (the
anchor) mining picks the same-class row at maximum distance (hardest
positive) and the different-class row at minimum distance (hardest negative),
ignoring modality tags entirely, and the loss sums positive-minus-negative
distances over all anchors.  Without a margin the sum can go negative; an
optional hinge variant clamps each term at zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MiningError, ShapeError


@dataclass
class CrossmodalBatch:
    embeddings: np.ndarray  # [K, E]
    modality: np.ndarray  # [K] str tags
    triplet_class: np.ndarray  # [K] int labels

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        self.modality = np.asarray(self.modality)
        self.triplet_class = np.asarray(self.triplet_class, dtype=np.int64)
        if self.embeddings.ndim != 2:
            raise ShapeError("embeddings must be [K, E]")
        k = self.embeddings.shape[0]
        if self.modality.shape != (k,) or self.triplet_class.shape != (k,):
            raise ShapeError("modality and class labels must have one entry per row")


@dataclass(frozen=True)
class HardTriplet:
    anchor: int
    positive: int
    negative: int


def pairwise_distances(embeddings: np.ndarray) -> np.ndarray:
    """Euclidean distance between all row pairs: symmetric, zero diagonal.

    Uses the norms-plus-Gram expansion, clamping tiny negative squared
    distances from cancellation to zero before the square root.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ShapeError("need a [K, E] matrix with K >= 2")
    gram = x @ x.T
    norms = np.diag(gram)
    sq = norms[:, np.newaxis] + norms[np.newaxis, :] - 2.0 * gram
    np.maximum(sq, 0.0, out=sq)
    np.fill_diagonal(sq, 0.0)
    return np.sqrt(sq)


def _check_batch(batch: CrossmodalBatch) -> np.ndarray:
    labels = batch.triplet_class
    uniq, counts = np.unique(labels, return_counts=True)
    if uniq.size < 2:
        raise MiningError(f"batch contains a single class ({uniq.tolist()}); need >= 2")
    if np.any(counts < 2):
        offender = int(uniq[np.argmin(counts)])
        anchor = int(np.nonzero(labels == offender)[0][0])
        raise MiningError(
            f"class {offender} has a single member (row {anchor}); every class needs >= 2"
        )
    return labels


def _mine_indices(labels: np.ndarray, dist: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    same_label = labels[:, np.newaxis] == labels[np.newaxis, :]
    pos_mask = same_label.copy()
    np.fill_diagonal(pos_mask, False)  # an anchor cannot be its own positive
    pos = np.argmax(np.where(pos_mask, dist, -np.inf), axis=1)
    neg = np.argmin(np.where(~same_label, dist, np.inf), axis=1)
    return pos, neg


def mine_hard_triplets(batch: CrossmodalBatch) -> list[HardTriplet]:
    """One hardest triplet per anchor row; distance ties go to the lowest row index."""
    labels = _check_batch(batch)
    pos, neg = _mine_indices(labels, pairwise_distances(batch.embeddings))
    return [HardTriplet(a, int(pos[a]), int(neg[a])) for a in range(labels.size)]


def triplet_loss(batch: CrossmodalBatch, margin: float | None = None) -> float:
    """Sum over anchors of (hardest-positive distance - hardest-negative distance).

    With ``margin`` set, each anchor contributes max(d+ - d- + margin, 0)
    instead of the raw difference.
    """
    loss, _ = triplet_loss_grad(batch, margin=margin, need_grad=False)
    return loss


def triplet_loss_grad(batch: CrossmodalBatch, margin: float | None = None, need_grad: bool = True):
    """Loss plus gradient w.r.t. the embedding rows.

    Mining indices are treated as constants (exact away from argmax/argmin
    ties); the distance gradient uses the unit difference vector, with zero
    contribution for coincident points.
    """
    labels = _check_batch(batch)
    emb = batch.embeddings
    dist = pairwise_distances(emb)
    positives, negatives = _mine_indices(labels, dist)
    anchors = np.arange(labels.size)
    terms = dist[anchors, positives] - dist[anchors, negatives]
    if margin is not None:
        terms = terms + margin
        active = terms > 0.0
        terms = np.where(active, terms, 0.0)
    else:
        active = np.ones(terms.size, dtype=bool)
    loss = float(terms.sum())
    if not need_grad:
        return loss, None

    grad = np.zeros_like(emb)

    def accumulate(a_idx, other_idx, sign):
        d = dist[a_idx, other_idx]
        ok = d > 0.0
        if not np.any(ok):
            return
        a_ok = a_idx[ok]
        o_ok = other_idx[ok]
        unit = (emb[a_ok] - emb[o_ok]) / d[ok, np.newaxis]
        np.add.at(grad, a_ok, sign * unit)
        np.add.at(grad, o_ok, -sign * unit)

    accumulate(anchors[active], positives[active], +1.0)
    accumulate(anchors[active], negatives[active], -1.0)
    return loss, grad


def binarize_classes(gold, threshold: float = 0.0) -> np.ndarray:
    """High/low class labels for a continuous gold standard."""
    g = np.asarray(gold, dtype=np.float64).ravel()
    return (g >= threshold).astype(np.int64)
