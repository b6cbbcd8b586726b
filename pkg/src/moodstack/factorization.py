"""Weighted matrix factorization of play counts by alternating least squares.

Play counts are treated as confidence weights on a binary preference
signal: an observed (listener, track) pair has preference 1 with confidence
1 + alpha * count, an unobserved pair has preference 0 with confidence 1.
Each half-sweep re-solves one side row by row in closed form while the
other side stays fixed, so the objective can only go down.

Embedding files use a plain text format: a header line ``E=<rank>``
followed by one ``track_id<TAB>v1<TAB>...<TAB>vE`` line per track.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .corpus import InteractionMatrix
from .errors import DataError, FactorizationError


@dataclass(frozen=True)
class ConfidenceParams:
    """Confidence scaling and L2 regularization for the factorization.

    ``regularization=None`` resolves to 0.01 times the mean observed
    confidence, which keeps the penalty proportionate when counts are
    rescaled.
    """

    alpha: float = 40.0
    regularization: float | None = None

    def __post_init__(self):
        if self.alpha < 0:
            raise DataError("alpha must be nonnegative")
        if self.regularization is not None and self.regularization < 0:
            raise DataError("regularization must be nonnegative")

    def resolve_regularization(self, interactions: InteractionMatrix) -> float:
        if self.regularization is not None:
            return self.regularization
        if interactions.nnz == 0:
            raise DataError("cannot resolve regularization on an empty matrix")
        mean_confidence = 1.0 + self.alpha * interactions.total_plays / interactions.nnz
        return 0.01 * mean_confidence


def solve_row(
    fixed: np.ndarray,
    observed: np.ndarray,
    counts: np.ndarray,
    alpha: float,
    regularization: float,
    gram: np.ndarray | None = None,
) -> np.ndarray:
    """Closed-form solution for one row given the fixed opposite side.

    Minimizes the row's share of the weighted objective:
    sum over all columns of confidence * (preference - fixed[j] . x)^2
    plus ``regularization * |x|^2``. ``gram`` may pass a precomputed
    ``fixed.T @ fixed`` to avoid recomputing it per row.
    """
    rank = fixed.shape[1]
    if gram is None:
        gram = fixed.T @ fixed
    a = alpha * np.asarray(counts, dtype=np.float64)
    m = fixed[observed]
    lhs = gram + regularization * np.eye(rank) + m.T @ (m * a[:, None])
    rhs = m.T @ (1.0 + a)
    try:
        factor = scipy.linalg.cho_factor(lhs)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(
            "normal equations are singular; set regularization > 0"
        ) from exc
    return scipy.linalg.cho_solve(factor, rhs)


def _sweep_side(
    target: np.ndarray,
    fixed: np.ndarray,
    row_items,
    alpha: float,
    regularization: float,
) -> None:
    # One half-sweep: re-solve every row of `target` in place.
    gram = fixed.T @ fixed
    for i in range(target.shape[0]):
        observed, counts = row_items(i)
        target[i] = solve_row(fixed, observed, counts, alpha, regularization, gram=gram)


@dataclass
class FactorModel:
    """Learned listener and track factors plus the ids they are aligned to."""

    listener_factors: np.ndarray
    track_factors: np.ndarray
    listener_ids: tuple[str, ...]
    track_ids: tuple[str, ...]
    params: ConfidenceParams
    regularization: float
    objective_trace: list[float] = field(default_factory=list)

    @property
    def rank(self) -> int:
        return self.listener_factors.shape[1]

    def scores_for_listener(self, listener_index: int) -> np.ndarray:
        """Predicted preference for every track, in track_ids order."""
        return self.track_factors @ self.listener_factors[listener_index]

    def embedding_table(self) -> "EmbeddingTable":
        return EmbeddingTable(self.track_ids, self.track_factors.copy())


def als_fit(
    interactions: InteractionMatrix,
    rank: int,
    params: ConfidenceParams | None = None,
    n_sweeps: int = 15,
    seed: int = 0,
    track_objective: bool = False,
) -> FactorModel:
    """Alternating least squares fit of the weighted factorization.

    Factors start uniform in [-0.01, 0.01] from ``seed``; each sweep solves
    the listener side, then the track side. With ``track_objective`` the
    full objective is recorded before the first sweep and after every
    half-sweep, which roughly doubles the cost.
    """
    if rank < 1:
        raise DataError(f"rank must be at least 1, got {rank}")
    if interactions.nnz == 0:
        raise DataError("interaction matrix has no observed plays")
    params = params or ConfidenceParams()
    regularization = params.resolve_regularization(interactions)
    rng = np.random.default_rng(seed)
    x = rng.uniform(-0.01, 0.01, size=(interactions.n_listeners, rank))
    y = rng.uniform(-0.01, 0.01, size=(interactions.n_tracks, rank))
    trace: list[float] = []

    def record():
        if track_objective:
            trace.append(wmf_objective(x, y, interactions, params.alpha, regularization))

    record()
    for _ in range(n_sweeps):
        _sweep_side(x, y, interactions.listener_items, params.alpha, regularization)
        record()
        _sweep_side(y, x, interactions.track_listeners, params.alpha, regularization)
        record()
    return FactorModel(
        listener_factors=x,
        track_factors=y,
        listener_ids=interactions.listener_ids,
        track_ids=interactions.track_ids,
        params=params,
        regularization=regularization,
        objective_trace=trace,
    )


def wmf_objective(
    listener_factors: np.ndarray,
    track_factors: np.ndarray,
    interactions: InteractionMatrix,
    alpha: float,
    regularization: float,
) -> float:
    """Weighted squared error over ALL listener-track pairs plus L2 penalty.

    The unobserved majority is never materialized: the unit-confidence
    prediction energy over every pair is sum_u x_u' (Y'Y) x_u, and each
    observed pair contributes its weighted residual minus the unit term
    already counted.
    """
    x, y = listener_factors, track_factors
    if x.shape[0] != interactions.n_listeners or y.shape[0] != interactions.n_tracks:
        raise DataError("factor shapes do not match the interaction matrix")
    gram = y.T @ y
    total = float(np.sum((x @ gram) * x))
    for u in range(interactions.n_listeners):
        cols, counts = interactions.listener_items(u)
        if cols.size == 0:
            continue
        preds = y[cols] @ x[u]
        conf = 1.0 + alpha * counts.astype(np.float64)
        total += float(np.sum(conf * (1.0 - preds) ** 2 - preds**2))
    total += regularization * (float(np.sum(x * x)) + float(np.sum(y * y)))
    return total


class EmbeddingTable:
    """Track id to vector mapping with an id -> row index."""

    def __init__(self, track_ids: Sequence[str], vectors: np.ndarray):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise DataError("embedding vectors must form a 2-d array")
        if vectors.shape[0] != len(track_ids):
            raise DataError(
                f"{len(track_ids)} ids but {vectors.shape[0]} vectors"
            )
        self.track_ids = tuple(track_ids)
        self.vectors = vectors
        self.index = {tid: i for i, tid in enumerate(self.track_ids)}
        if len(self.index) != len(self.track_ids):
            raise DataError("duplicate track ids in embedding table")

    @property
    def rank(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.track_ids)

    def __contains__(self, track_id: str) -> bool:
        return track_id in self.index

    def vector_for(self, track_id: str) -> np.ndarray:
        return self.vectors[self.index[track_id]]

    def matrix_for(self, track_ids: Sequence[str]) -> np.ndarray:
        """Rows aligned to ``track_ids``; any missing id is an error."""
        missing = [tid for tid in track_ids if tid not in self.index]
        if missing:
            raise DataError(
                f"{len(missing)} track ids have no embedding "
                f"(first missing: {missing[0]!r})"
            )
        rows = np.fromiter(
            (self.index[tid] for tid in track_ids), dtype=np.int64, count=len(track_ids)
        )
        return self.vectors[rows]


def export_embeddings(table: EmbeddingTable | FactorModel, path: str | os.PathLike) -> None:
    """Write an embedding file: ``E=<rank>`` header, then one row per track.

    Values are written with shortest round-trip float formatting, so a
    write/read cycle reproduces the vectors exactly.
    """
    if isinstance(table, FactorModel):
        table = table.embedding_table()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"E={table.rank}\n")
        for tid, row in zip(table.track_ids, table.vectors):
            fh.write(tid + "\t" + "\t".join(repr(float(v)) for v in row) + "\n")


def import_embeddings(path: str | os.PathLike) -> EmbeddingTable:
    """Read an embedding file written by :func:`export_embeddings`."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if not header.startswith("E=") or not header[2:].isdigit():
            raise DataError(f"bad embedding header {header!r}; expected E=<rank>")
        rank = int(header[2:])
        ids: list[str] = []
        rows: list[np.ndarray] = []
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != rank + 1:
                raise DataError(
                    f"line {lineno}: expected {rank + 1} fields, got {len(fields)}"
                )
            ids.append(fields[0])
            try:
                rows.append(np.array([float(v) for v in fields[1:]], dtype=np.float64))
            except ValueError as exc:
                raise DataError(f"line {lineno}: {exc}") from None
    vectors = np.vstack(rows) if rows else np.zeros((0, rank))
    return EmbeddingTable(ids, vectors)
