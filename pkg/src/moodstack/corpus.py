"""Corpus assembly: listening triplets, mood annotations, catalog linkage, splits.

File formats (all UTF-8, no headers):

* triplets: ``listener_id<TAB>track_id<TAB>play_count``
* annotations: ``track_id<TAB>tag1;tag2;...`` (empty tag field allowed)
* splits: a directory with ``train.txt``, ``val.txt``, ``test.txt``,
  one track id per line
"""

from __future__ import annotations

import logging
import os
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DataError, TripletParseError

_logger = logging.getLogger(__name__)

SPLIT_FILES = {"train": "train.txt", "val": "val.txt", "test": "test.txt"}


@dataclass(frozen=True)
class Track:
    """A catalog entry used for cross-catalog linkage."""

    track_id: str
    artist_name: str
    track_name: str
    duration: float

    def __post_init__(self):
        if self.duration < 0:
            raise DataError(f"track {self.track_id!r} has negative duration")


class TagVocabulary:
    """Ordered, duplicate-free list of tag names with a name<->index bijection."""

    def __init__(self, tags: Iterable[str]):
        self.tags = tuple(tags)
        self.index = {tag: i for i, tag in enumerate(self.tags)}
        if len(self.index) != len(self.tags):
            raise DataError("vocabulary contains duplicate tag names")

    @classmethod
    def from_tag_sets(cls, tag_sets: Iterable[Iterable[str]]) -> "TagVocabulary":
        """Build a vocabulary from tag collections, sorted for determinism."""
        union: set[str] = set()
        for tags in tag_sets:
            union.update(tags)
        return cls(sorted(union))

    def index_of(self, tag: str) -> int:
        return self.index[tag]

    def __len__(self) -> int:
        return len(self.tags)

    def __iter__(self):
        return iter(self.tags)

    def __contains__(self, tag: str) -> bool:
        return tag in self.index

    def __eq__(self, other) -> bool:
        return isinstance(other, TagVocabulary) and self.tags == other.tags

    def __repr__(self) -> str:
        return f"TagVocabulary({len(self.tags)} tags)"


class TagAnnotations:
    """Binary track-by-tag indicator matrix with a track_id -> row map."""

    def __init__(self, matrix: np.ndarray, vocabulary: TagVocabulary, track_ids: Sequence[str]):
        matrix = np.asarray(matrix, dtype=np.uint8)
        if matrix.ndim != 2:
            raise DataError("annotation matrix must be 2-dimensional")
        if matrix.shape != (len(track_ids), len(vocabulary)):
            raise DataError(
                f"annotation matrix shape {matrix.shape} does not match "
                f"{len(track_ids)} tracks x {len(vocabulary)} tags"
            )
        if matrix.size and matrix.max() > 1:
            raise DataError("annotation matrix entries must be 0 or 1")
        self.matrix = matrix
        self.vocabulary = vocabulary
        self.track_ids = tuple(track_ids)
        self.track_index = {tid: i for i, tid in enumerate(self.track_ids)}
        if len(self.track_index) != len(self.track_ids):
            raise DataError("duplicate track ids in annotations")

    @classmethod
    def from_tag_map(
        cls,
        track_tags: Mapping[str, Iterable[str]],
        vocabulary: TagVocabulary | None = None,
    ) -> "TagAnnotations":
        """Build annotations from a track_id -> tag collection mapping.

        Track rows follow sorted track-id order; the vocabulary defaults to
        the sorted union of all tags.
        """
        if vocabulary is None:
            vocabulary = TagVocabulary.from_tag_sets(track_tags.values())
        track_ids = sorted(track_tags)
        matrix = np.zeros((len(track_ids), len(vocabulary)), dtype=np.uint8)
        for row, tid in enumerate(track_ids):
            for tag in track_tags[tid]:
                if tag not in vocabulary:
                    raise DataError(f"tag {tag!r} not in vocabulary")
                matrix[row, vocabulary.index_of(tag)] = 1
        return cls(matrix, vocabulary, track_ids)

    @property
    def n_tracks(self) -> int:
        return len(self.track_ids)

    @property
    def n_tags(self) -> int:
        return len(self.vocabulary)

    def tags_for(self, track_id: str) -> frozenset[str]:
        row = self.matrix[self.track_index[track_id]]
        return frozenset(self.vocabulary.tags[j] for j in np.flatnonzero(row))

    def aligned_matrix(self, track_ids: Sequence[str]) -> np.ndarray:
        """Rows for ``track_ids`` in the given order; unknown ids get all-zero rows."""
        out = np.zeros((len(track_ids), self.n_tags), dtype=np.uint8)
        for i, tid in enumerate(track_ids):
            row = self.track_index.get(tid)
            if row is not None:
                out[i] = self.matrix[row]
        return out

    def subset(self, track_ids: Sequence[str]) -> "TagAnnotations":
        """Annotations restricted to ``track_ids`` in the given order."""
        return TagAnnotations(self.aligned_matrix(track_ids), self.vocabulary, track_ids)


class InteractionMatrix:
    """Sparse listener-by-track play counts with id <-> index bijections.

    Stored counts are strictly positive; absent pairs are implicit zeros.
    Row and column orders follow sorted listener and track ids so the
    structure is independent of input line order.
    """

    def __init__(self, csr: sp.csr_matrix, listener_ids: Sequence[str], track_ids: Sequence[str]):
        if csr.shape != (len(listener_ids), len(track_ids)):
            raise DataError("matrix shape does not match id lists")
        if csr.nnz and csr.data.min() <= 0:
            raise DataError("stored play counts must be positive")
        self.csr = csr
        self.listener_ids = tuple(listener_ids)
        self.track_ids = tuple(track_ids)
        self.listener_index = {lid: i for i, lid in enumerate(self.listener_ids)}
        self.track_index = {tid: j for j, tid in enumerate(self.track_ids)}
        if len(self.listener_index) != len(self.listener_ids):
            raise DataError("duplicate listener ids")
        if len(self.track_index) != len(self.track_ids):
            raise DataError("duplicate track ids")
        self._csc: sp.csc_matrix | None = None

    @classmethod
    def from_entries(
        cls, entries: Iterable[tuple[str, str, int]]
    ) -> "InteractionMatrix":
        """Build from (listener_id, track_id, count) tuples, summing duplicates."""
        listeners: list[str] = []
        tracks: list[str] = []
        counts: list[int] = []
        for lid, tid, count in entries:
            listeners.append(lid)
            tracks.append(tid)
            counts.append(count)
        listener_ids = sorted(set(listeners))
        track_ids = sorted(set(tracks))
        lmap = {lid: i for i, lid in enumerate(listener_ids)}
        tmap = {tid: j for j, tid in enumerate(track_ids)}
        rows = np.fromiter((lmap[lid] for lid in listeners), dtype=np.int64, count=len(listeners))
        cols = np.fromiter((tmap[tid] for tid in tracks), dtype=np.int64, count=len(tracks))
        data = np.asarray(counts, dtype=np.int64)
        coo = sp.coo_matrix((data, (rows, cols)), shape=(len(listener_ids), len(track_ids)))
        csr = coo.tocsr()  # duplicate coordinates are summed here
        csr.sum_duplicates()
        return cls(csr, listener_ids, track_ids)

    @property
    def n_listeners(self) -> int:
        return self.csr.shape[0]

    @property
    def n_tracks(self) -> int:
        return self.csr.shape[1]

    @property
    def nnz(self) -> int:
        return self.csr.nnz

    @property
    def total_plays(self) -> int:
        return int(self.csr.data.sum()) if self.csr.nnz else 0

    def listener_items(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Track column indices and counts for listener row ``i``."""
        start, end = self.csr.indptr[i], self.csr.indptr[i + 1]
        return self.csr.indices[start:end], self.csr.data[start:end]

    def track_listeners(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        """Listener row indices and counts for track column ``j``."""
        if self._csc is None:
            self._csc = self.csr.tocsc()
        start, end = self._csc.indptr[j], self._csc.indptr[j + 1]
        return self._csc.indices[start:end], self._csc.data[start:end]


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint train/validation/test track-id sets."""

    train_ids: frozenset[str]
    val_ids: frozenset[str]
    test_ids: frozenset[str]

    def __post_init__(self):
        if (
            self.train_ids & self.val_ids
            or self.train_ids & self.test_ids
            or self.val_ids & self.test_ids
        ):
            raise DataError("split sets must be pairwise disjoint")

    @property
    def all_ids(self) -> frozenset[str]:
        return self.train_ids | self.val_ids | self.test_ids

    def ids_for(self, split: str) -> frozenset[str]:
        try:
            return {"train": self.train_ids, "val": self.val_ids, "test": self.test_ids}[split]
        except KeyError:
            raise DataError(f"unknown split {split!r}; expected train, val or test") from None

    def save(self, directory: str | os.PathLike) -> None:
        os.makedirs(directory, exist_ok=True)
        for split, fname in SPLIT_FILES.items():
            with open(os.path.join(directory, fname), "w", encoding="utf-8") as fh:
                for tid in sorted(self.ids_for(split)):
                    fh.write(tid + "\n")

    @classmethod
    def load(cls, directory: str | os.PathLike) -> "DatasetSplit":
        sets = {}
        for split, fname in SPLIT_FILES.items():
            path = os.path.join(directory, fname)
            if not os.path.exists(path):
                raise DataError(f"missing split file {path}")
            with open(path, encoding="utf-8") as fh:
                sets[split] = frozenset(line.strip() for line in fh if line.strip())
        return cls(sets["train"], sets["val"], sets["test"])


def parse_triplets(path: str | os.PathLike) -> InteractionMatrix:
    """Parse a tab-separated triplets file into an interaction matrix.

    Duplicate (listener, track) pairs are summed. Lines with a non-positive
    play count are rejected and reported via the module logger; structurally
    malformed lines raise :class:`TripletParseError` with the line number.
    """
    entries: list[tuple[str, str, int]] = []
    rejected = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise TripletParseError(
                    f"expected 3 tab-separated fields, got {len(fields)}", lineno
                )
            lid, tid, raw_count = fields
            if not lid or not tid:
                raise TripletParseError("empty listener or track id", lineno)
            try:
                count = int(raw_count)
            except ValueError:
                raise TripletParseError(f"play count {raw_count!r} is not an integer", lineno) from None
            if count <= 0:
                rejected += 1
                _logger.warning("rejected line %d: non-positive play count %d", lineno, count)
                continue
            entries.append((lid, tid, count))
    if rejected:
        _logger.warning("rejected %d lines with non-positive play counts", rejected)
    return InteractionMatrix.from_entries(entries)


def parse_annotations(
    path: str | os.PathLike, vocabulary: TagVocabulary | None = None
) -> TagAnnotations:
    """Parse ``track_id<TAB>tag1;tag2;...`` lines into annotations.

    Duplicate track lines union their tag sets. A missing or empty tag field
    yields an all-zero row, keeping the track in the universe.
    """
    track_tags: dict[str, set[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise TripletParseError(
                    f"expected 2 tab-separated fields, got {len(fields)}", lineno
                )
            tid, tag_field = fields
            if not tid:
                raise TripletParseError("empty track id", lineno)
            tags = {t for t in tag_field.split(";") if t}
            track_tags.setdefault(tid, set()).update(tags)
    return TagAnnotations.from_tag_map(track_tags, vocabulary)


_ARTICLES = ("the", "a")
_PUNCT_RE = re.compile(r"[^0-9a-z\s]+")


def canonicalize_name(name: str) -> str:
    """Lowercase, strip punctuation, drop leading articles, collapse whitespace."""
    s = _PUNCT_RE.sub(" ", name.lower())
    words = [w for w in s.split() if w not in _ARTICLES]
    return " ".join(words)


def levenshtein(a: str, b: str) -> int:
    """Edit distance with unit insert/delete/substitute costs."""
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def name_similarity(a: str, b: str) -> float:
    """Normalized similarity of canonicalized names: 1 - edit_distance / max_length."""
    ca, cb = canonicalize_name(a), canonicalize_name(b)
    longest = max(len(ca), len(cb))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(ca, cb) / longest


def track_similarity(left: Track, right: Track) -> float:
    """Pair similarity: both artist and track names must match, so take the minimum."""
    return min(
        name_similarity(left.artist_name, right.artist_name),
        name_similarity(left.track_name, right.track_name),
    )


def link_catalogs(
    left: Sequence[Track],
    right: Sequence[Track],
    max_duration_delta: float = 10.0,
    min_name_similarity: float = 0.85,
) -> list[tuple[str, str]]:
    """One-to-one catalog linkage by fuzzy name matching plus a duration gate.

    A pair is a candidate iff its name similarity reaches the threshold and
    the track durations differ by at most ``max_duration_delta`` seconds.
    Candidates are taken greedily by descending similarity so each track on
    either side is matched at most once; the highest similarity wins.
    Unmatched tracks are simply omitted and their count logged.
    """
    if not left or not right:
        raise DataError("both catalogs must be nonempty")
    candidates: list[tuple[float, str, str]] = []
    for lt in left:
        for rt in right:
            if abs(lt.duration - rt.duration) > max_duration_delta:
                continue
            sim = track_similarity(lt, rt)
            if sim >= min_name_similarity:
                candidates.append((sim, lt.track_id, rt.track_id))
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
    used_left: set[str] = set()
    used_right: set[str] = set()
    matches: list[tuple[str, str]] = []
    for _, lid, rid in candidates:
        if lid in used_left or rid in used_right:
            continue
        used_left.add(lid)
        used_right.add(rid)
        matches.append((lid, rid))
    _logger.info(
        "linked %d pairs; %d left and %d right tracks unmatched",
        len(matches),
        len(left) - len(matches),
        len(right) - len(matches),
    )
    return matches


def unfold_album_tags(
    album_tags: Mapping[str, Iterable[str]],
    album_tracks: Mapping[str, Iterable[str]],
    track_universe: Iterable[str] | None = None,
) -> TagAnnotations:
    """Assign each track the union of its albums' tag sets.

    ``track_universe`` optionally names the full track set; universe tracks
    that appear on no album are excluded and reported via the module logger.
    Tracks whose albums carry no tags are kept as all-zero rows.
    """
    track_tags: dict[str, set[str]] = {}
    for album_id, tracks in album_tracks.items():
        tags = set(album_tags.get(album_id, ()))
        for tid in tracks:
            track_tags.setdefault(tid, set()).update(tags)
    vocabulary = TagVocabulary.from_tag_sets(album_tags.values())
    if track_universe is not None:
        universe = set(track_universe)
        missing = sorted(universe - track_tags.keys())
        if missing:
            _logger.warning("excluded %d tracks that belong to no album", len(missing))
        track_tags = {tid: tags for tid, tags in track_tags.items() if tid in universe}
    return TagAnnotations.from_tag_map(track_tags, vocabulary)


def make_splits(
    track_ids: Iterable[str],
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> DatasetSplit:
    """Deterministic random split with sizes floor(f1*N) / floor(f2*N) / remainder."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"fractions {fractions} must sum to 1")
    ids = sorted(set(track_ids))
    n = len(ids)
    if n < 3:
        raise DataError(f"need at least 3 tracks to split, got {n}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_train = int(np.floor(fractions[0] * n))
    n_val = int(np.floor(fractions[1] * n))
    shuffled = [ids[i] for i in order]
    return DatasetSplit(
        frozenset(shuffled[:n_train]),
        frozenset(shuffled[n_train : n_train + n_val]),
        frozenset(shuffled[n_train + n_val :]),
    )


@dataclass(frozen=True)
class CorpusStats:
    """Per-tag and per-track annotation count summary."""

    tag_counts: dict[str, int]
    tags_per_track: np.ndarray
    mean_tags_per_track: float
    std_tags_per_track: float
    median_tags_per_track: float
    mean_tracks_per_tag: float
    std_tracks_per_tag: float
    median_tracks_per_tag: float

    def top_tags(self, n: int = 10) -> list[tuple[str, int]]:
        return sorted(self.tag_counts.items(), key=lambda kv: (-kv[1], kv[0]))[:n]

    def bottom_tags(self, n: int = 10) -> list[tuple[str, int]]:
        return sorted(self.tag_counts.items(), key=lambda kv: (kv[1], kv[0]))[:n]

    def tags_per_track_histogram(self) -> list[tuple[int, int]]:
        """(n_tags, n_tracks) pairs for n_tags = 0 .. max observed."""
        counts = np.bincount(self.tags_per_track)
        return [(int(k), int(v)) for k, v in enumerate(counts)]

    def to_dict(self) -> dict:
        return {
            "n_tracks": int(len(self.tags_per_track)),
            "n_tags": int(len(self.tag_counts)),
            "tags_per_track": {
                "mean": self.mean_tags_per_track,
                "std": self.std_tags_per_track,
                "median": self.median_tags_per_track,
            },
            "tracks_per_tag": {
                "mean": self.mean_tracks_per_tag,
                "std": self.std_tracks_per_tag,
                "median": self.median_tracks_per_tag,
            },
            "top_tags": [[t, c] for t, c in self.top_tags(10)],
            "bottom_tags": [[t, c] for t, c in self.bottom_tags(10)],
        }


def corpus_stats(annotations: TagAnnotations) -> CorpusStats:
    """Counts of tracks per tag and tags per track, with mean/median/std of both."""
    if annotations.n_tracks == 0 or annotations.n_tags == 0:
        raise DataError("annotations are empty")
    per_tag = annotations.matrix.sum(axis=0).astype(np.int64)
    per_track = annotations.matrix.sum(axis=1).astype(np.int64)
    return CorpusStats(
        tag_counts={tag: int(per_tag[j]) for j, tag in enumerate(annotations.vocabulary)},
        tags_per_track=per_track,
        mean_tags_per_track=float(per_track.mean()),
        std_tags_per_track=float(per_track.std()),
        median_tags_per_track=float(np.median(per_track)),
        mean_tracks_per_tag=float(per_tag.mean()),
        std_tracks_per_tag=float(per_tag.std()),
        median_tracks_per_tag=float(np.median(per_tag)),
    )
