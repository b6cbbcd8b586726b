"""Tag-level analyses: listener consistency curves, co-occurrence, clustering.

The clustering is exemplar-based affinity propagation: responsibility and
availability messages passed on a similarity matrix until the exemplar set
stays unchanged for a window of iterations. No random tie-breaking is used
anywhere, so results are a pure function of the inputs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .corpus import InteractionMatrix, TagAnnotations
from .errors import DataError

_logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConsistencyCurve:
    """Mean play fraction of each listener's rank-n mood, n = 1..top_n.

    A listener with fewer than n distinct played moods contributes 0 at
    rank n, which keeps the curve non-increasing.
    """

    ratios: np.ndarray
    n_listeners: int
    n_excluded: int

    def __post_init__(self):
        if np.any(self.ratios < 0) or np.any(self.ratios > 1):
            raise DataError("consistency ratios must lie in [0, 1]")

    def ratio(self, rank: int) -> float:
        return float(self.ratios[rank - 1])


def consistency_ratios(
    interactions: InteractionMatrix,
    annotations: TagAnnotations,
    top_n: int = 25,
) -> ConsistencyCurve:
    """Play-weighted mood consistency per listener, averaged over listeners.

    For each listener, moods are ranked by total plays of tracks carrying
    the mood; the rank-n entry is that mood's plays divided by the
    listener's total plays (annotated or not). Listeners with no annotated
    plays are excluded and their count reported.
    """
    if top_n < 1:
        raise DataError(f"top_n must be at least 1, got {top_n}")
    aligned = annotations.aligned_matrix(interactions.track_ids).astype(np.float64)
    acc = np.zeros(top_n)
    included = 0
    excluded = 0
    for u in range(interactions.n_listeners):
        cols, counts = interactions.listener_items(u)
        if cols.size == 0:
            excluded += 1
            continue
        mood_plays = counts.astype(np.float64) @ aligned[cols]
        if mood_plays.sum() == 0:
            excluded += 1
            continue
        total = float(counts.sum())
        top = np.sort(mood_plays)[::-1][:top_n] / total
        padded = np.zeros(top_n)
        padded[: top.size] = top
        acc += padded
        included += 1
    if included == 0:
        raise DataError("every listener has zero annotated plays")
    if excluded:
        _logger.info("excluded %d listeners with no annotated plays", excluded)
    return ConsistencyCurve(acc / included, included, excluded)


@dataclass(frozen=True)
class CooccurrenceMatrix:
    """Symmetric tag-pair track counts; the diagonal holds tag frequencies."""

    counts: np.ndarray
    tags: tuple[str, ...]

    def __post_init__(self):
        if self.counts.shape != (len(self.tags), len(self.tags)):
            raise DataError("count matrix does not match the tag list")

    def count(self, tag_a: str, tag_b: str) -> int:
        i = self.tags.index(tag_a)
        j = self.tags.index(tag_b)
        return int(self.counts[i, j])


def cooccurrence(annotations: TagAnnotations) -> CooccurrenceMatrix:
    """counts[i, j] = number of tracks annotated with both tags."""
    if annotations.n_tracks == 0 or annotations.n_tags == 0:
        raise DataError("annotations are empty")
    m = annotations.matrix.astype(np.int64)
    return CooccurrenceMatrix(m.T @ m, tuple(annotations.vocabulary))


def mood_similarity(cooc: CooccurrenceMatrix) -> np.ndarray:
    """Cosine similarity between co-occurrence rows; zero rows map to 0."""
    rows = cooc.counts.astype(np.float64)
    norms = np.linalg.norm(rows, axis=1)
    safe = np.where(norms == 0, 1.0, norms)
    sim = (rows @ rows.T) / np.outer(safe, safe)
    sim[norms == 0, :] = 0.0
    sim[:, norms == 0] = 0.0
    return sim


@dataclass(frozen=True)
class ClusterAssignment:
    """Exemplar indices and the exemplar chosen for every point."""

    exemplar_of: np.ndarray
    exemplars: tuple[int, ...]
    converged: bool
    n_iterations: int

    def __post_init__(self):
        for k in self.exemplars:
            if self.exemplar_of[k] != k:
                raise DataError("every exemplar must be its own exemplar")
        if not set(np.unique(self.exemplar_of)) <= set(self.exemplars):
            raise DataError("points may only be assigned to exemplars")

    @property
    def n_clusters(self) -> int:
        return len(self.exemplars)

    def members(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {k: [] for k in self.exemplars}
        for i, k in enumerate(self.exemplar_of):
            out[int(k)].append(i)
        return out


def ap_iteration(
    s: np.ndarray, r: np.ndarray, a: np.ndarray, damping: float
) -> tuple[np.ndarray, np.ndarray]:
    """One damped responsibility/availability update; exposed for oracles."""
    n = s.shape[0]
    idx = np.arange(n)
    # responsibilities: r(i,k) = s(i,k) - max_{k' != k} (a(i,k') + s(i,k'))
    combined = a + s
    best_k = np.argmax(combined, axis=1)
    best = combined[idx, best_k]
    combined[idx, best_k] = -np.inf
    second = combined.max(axis=1)
    r_new = s - best[:, None]
    r_new[idx, best_k] = s[idx, best_k] - second
    r = damping * r + (1.0 - damping) * r_new
    # availabilities: a(i,k) = min(0, r(k,k) + sum_{i' not in {i,k}} max(0, r(i',k)))
    clipped = np.maximum(r, 0.0)
    clipped[idx, idx] = r[idx, idx]
    col_sums = clipped.sum(axis=0)
    a_new = col_sums[None, :] - clipped
    diag = a_new[idx, idx].copy()
    a_new = np.minimum(a_new, 0.0)
    a_new[idx, idx] = diag
    a = damping * a + (1.0 - damping) * a_new
    return r, a


def affinity_propagation(
    similarity: np.ndarray,
    preference: float | None = None,
    damping: float = 0.7,
    max_iter: int = 500,
    convergence_window: int = 50,
) -> ClusterAssignment:
    """Cluster points on a similarity matrix; cluster count emerges.

    ``preference`` (the self-similarity) defaults to the median off-diagonal
    similarity. Iteration stops once the exemplar set has been stable for
    ``convergence_window`` rounds; hitting ``max_iter`` first returns the
    current assignment flagged as non-converged.
    """
    s = np.array(similarity, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise DataError("similarity must be a square matrix")
    if not 0.5 <= damping < 1.0:
        raise DataError("damping must lie in [0.5, 1)")
    n = s.shape[0]
    if n == 0:
        raise DataError("similarity matrix is empty")
    if n == 1:
        return ClusterAssignment(np.zeros(1, dtype=np.int64), (0,), True, 0)
    if preference is None:
        off_diag = s[~np.eye(n, dtype=bool)]
        preference = float(np.median(off_diag))
    idx = np.arange(n)
    s[idx, idx] = preference
    r = np.zeros((n, n))
    a = np.zeros((n, n))
    last_exemplars: frozenset[int] | None = None
    stable = 0
    converged = False
    iteration = 0
    for iteration in range(1, max_iter + 1):
        r, a = ap_iteration(s, r, a, damping)
        exemplars = frozenset(np.flatnonzero(np.diag(a) + np.diag(r) > 0).tolist())
        if exemplars and exemplars == last_exemplars:
            stable += 1
            if stable >= convergence_window:
                converged = True
                break
        else:
            stable = 0
        last_exemplars = exemplars
    exemplar_list = sorted(np.flatnonzero(np.diag(a) + np.diag(r) > 0).tolist())
    if not exemplar_list:
        # degenerate run: fall back to the single best self-supporting point
        exemplar_list = [int(np.argmax(np.diag(a) + np.diag(r)))]
        converged = False
    cols = np.array(exemplar_list)
    assignment = cols[np.argmax(s[:, cols], axis=1)]
    assignment[cols] = cols
    return ClusterAssignment(
        exemplar_of=assignment.astype(np.int64),
        exemplars=tuple(int(k) for k in exemplar_list),
        converged=converged,
        n_iterations=iteration,
    )
