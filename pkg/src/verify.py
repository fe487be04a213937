"""
All-against-all verification protocol

Pairs are generated once over ids sorted lexicographically, scored with one
of five dissimilarity metrics and collected into a ScoreSet whose order is
the protocol order. Cosine distance is scale invariant and therefore not a
metric in the strict sense: d(a, 2a) == 0 although a != 2a.
"""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.embed import EmbeddingSet, EmbeddingVector
from src.errors import ConfigError, EmbeddingFormatError, MetricError, ProtocolError

logger = logging.getLogger(__name__)

VARIANCE_EPSILON = 1e-6
CHUNK_SIZE = 65536
_SCORE_HEADER = re.compile(r"^SCORES v1 metric=([a-z]+)$")


class MetricKind(Enum):
    COSINE = "cosine"
    EUCLIDEAN = "euclidean"
    MANHATTAN = "manhattan"
    MAHALANOBIS = "mahalanobis"
    JACCARD = "jaccard"


@dataclass(frozen=True, eq=False)
class DistanceMetric:
    """Metric kind plus the diagonal variances Mahalanobis needs"""

    kind: MetricKind = MetricKind.COSINE
    variances: Optional[np.ndarray] = None

    def __post_init__(self):
        if not isinstance(self.kind, MetricKind):
            try:
                object.__setattr__(self, "kind", MetricKind(str(self.kind).lower()))
            except ValueError:
                choices = ", ".join(k.value for k in MetricKind)
                raise ConfigError(f"Unknown metric '{self.kind}'. Choose from: {choices}") from None
        if self.variances is not None:
            variances = np.array(self.variances, dtype=np.float64, copy=True).reshape(-1)
            _check_variances(variances)
            variances.flags.writeable = False
            object.__setattr__(self, "variances", variances)

    @property
    def name(self):
        return self.kind.value

    def with_variances(self, variances) -> "DistanceMetric":
        return DistanceMetric(self.kind, variances)

    def __repr__(self):
        extra = "" if self.variances is None else f", dim={self.variances.shape[0]}"
        return f"DistanceMetric({self.name}{extra})"


def _check_variances(variances):
    if not (np.isfinite(variances).all() and (variances > 0).all()):
        raise MetricError("Mahalanobis variances must be finite and strictly positive")


# ----------------------------------------------------------------------------
# Row-wise kernels: (n, dim) x (n, dim) -> (n,), NaN where undefined
# ----------------------------------------------------------------------------

def _cosine(a, b, _):
    dot = np.einsum("ij,ij->i", a, b)
    norms = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = 1.0 - dot / norms
    d[norms == 0] = np.nan
    return np.clip(d, 0.0, 2.0)


def _euclidean(a, b, _):
    return np.sqrt(np.einsum("ij,ij->i", a - b, a - b))


def _manhattan(a, b, _):
    return np.abs(a - b).sum(axis=1)


def _mahalanobis(a, b, variances):
    diff = a - b
    return np.sqrt((diff * diff / variances).sum(axis=1))


def _jaccard(a, b, _):
    dot = np.einsum("ij,ij->i", a, b)
    denom = np.einsum("ij,ij->i", a, a) + np.einsum("ij,ij->i", b, b) - dot
    with np.errstate(divide="ignore", invalid="ignore"):
        d = 1.0 - dot / denom
    d[denom == 0] = np.nan
    return d


_KERNELS = {
    MetricKind.COSINE: _cosine,
    MetricKind.EUCLIDEAN: _euclidean,
    MetricKind.MANHATTAN: _manhattan,
    MetricKind.MAHALANOBIS: _mahalanobis,
    MetricKind.JACCARD: _jaccard,
}

_UNDEFINED = {
    MetricKind.COSINE: "zero-norm vector",
    MetricKind.JACCARD: "both vectors zero",
}


def _values(v):
    if isinstance(v, EmbeddingVector):
        return v.values
    return np.asarray(v, dtype=np.float64).reshape(-1)


def _single(kind, a, b, variances=None):
    a, b = _values(a), _values(b)
    if a.shape != b.shape:
        raise MetricError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    if kind is MetricKind.MAHALANOBIS:
        variances = np.asarray(variances, dtype=np.float64).reshape(-1)
        if variances.shape != a.shape:
            raise MetricError(f"dimension mismatch: {variances.shape[0]} variances for {a.shape[0]} features")
        _check_variances(variances)
    d = _KERNELS[kind](a[None, :], b[None, :], variances)[0]
    if np.isnan(d):
        raise MetricError(f"{kind.value} distance undefined: {_UNDEFINED[kind]}")
    return float(d)


def cosine_distance(a, b) -> float:
    """1 - cos(angle between a and b), in [0, 2]"""
    return _single(MetricKind.COSINE, a, b)


def euclidean_distance(a, b) -> float:
    return _single(MetricKind.EUCLIDEAN, a, b)


def manhattan_distance(a, b) -> float:
    return _single(MetricKind.MANHATTAN, a, b)


def mahalanobis_distance(a, b, variances) -> float:
    """Diagonal Mahalanobis distance, sqrt(sum((a - b)^2 / var))"""
    return _single(MetricKind.MAHALANOBIS, a, b, variances)


def jaccard_distance(a, b) -> float:
    """
    Tanimoto distance 1 - a.b / (|a|^2 + |b|^2 - a.b)

    In [0, 1] for non-negative features. Mixed signs widen the range to
    [0, 4/3]; the maximum is reached at b == -a.
    """
    return _single(MetricKind.JACCARD, a, b)


def distance(metric: DistanceMetric, a, b) -> float:
    if metric.kind is MetricKind.MAHALANOBIS and metric.variances is None:
        raise MetricError("Mahalanobis metric has no variances")
    return _single(metric.kind, a, b, metric.variances)


def estimate_variances(embeddings, epsilon: float = VARIANCE_EPSILON) -> np.ndarray:
    """
    Per-dimension population variance plus epsilon

    Accepts an EmbeddingSet or a (count, dim) array.
    """
    matrix = embeddings.matrix() if isinstance(embeddings, EmbeddingSet) else np.asarray(embeddings, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] < 2:
        raise MetricError(f"variance estimation needs at least 2 embeddings, got {matrix.shape[0] if matrix.ndim else 0}")
    if epsilon <= 0:
        raise MetricError(f"epsilon must be positive, got {epsilon}")
    return matrix.var(axis=0) + epsilon


# ----------------------------------------------------------------------------
# Protocol
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PairProtocol:
    """
    Every unordered pair of distinct ids, in lexicographic (id_a, id_b) order

    ``first`` and ``second`` index into ``ids``; ``genuine`` flags intra-class
    pairs.
    """

    ids: Tuple[str, ...]
    labels: Tuple[str, ...]
    first: np.ndarray
    second: np.ndarray
    genuine: np.ndarray

    def __len__(self):
        return int(self.first.shape[0])

    def pair(self, k) -> Tuple[str, str]:
        return self.ids[self.first[k]], self.ids[self.second[k]]

    def _pairs(self, selector):
        return [(self.ids[i], self.ids[j]) for i, j in zip(self.first[selector], self.second[selector])]

    @property
    def intra_pairs(self):
        return self._pairs(self.genuine)

    @property
    def inter_pairs(self):
        return self._pairs(~self.genuine)

    @property
    def n_intra(self):
        return int(self.genuine.sum())

    @property
    def n_inter(self):
        return len(self) - self.n_intra


def generate_pairs(labels: Sequence[Tuple[str, str]]) -> PairProtocol:
    """
    Build the all-against-all protocol from (id, class_label) rows

    Examples
    --------
    >>> p = generate_pairs([("a", "x"), ("b", "x"), ("c", "x"), ("d", "y"), ("e", "y")])
    >>> p.n_intra, p.n_inter
    (4, 6)
    """
    rows = sorted(labels, key=lambda r: r[0])
    ids = tuple(r[0] for r in rows)
    for prev, cur in zip(ids, ids[1:]):
        if prev == cur:
            raise ProtocolError(f"duplicate id {cur}")
    if len(ids) < 2:
        raise ProtocolError(f"need at least 2 ids to form pairs, got {len(ids)}")

    classes = tuple(r[1] for r in rows)
    _, codes = np.unique(np.array(classes, dtype=str), return_inverse=True)
    first, second = np.triu_indices(len(ids), k=1)
    genuine = codes[first] == codes[second]

    for arr in (first, second, genuine):
        arr.flags.writeable = False
    logger.debug("Generated %d pairs (%d intra, %d inter)", len(first), int(genuine.sum()),
                 len(first) - int(genuine.sum()))
    return PairProtocol(ids, classes, first, second, genuine)


@dataclass(frozen=True, eq=False)
class ScoreSet:
    """
    Dissimilarity scores in protocol order

    ``genuine`` and ``impostor`` are views derived from ``scores`` and
    ``is_genuine``; ``pairs`` holds (id_a, id_b) per score when known.
    Jaccard scores may exceed 1 when features take both signs.
    """

    metric: str
    scores: np.ndarray
    is_genuine: np.ndarray
    pairs: Optional[Tuple[Tuple[str, str], ...]] = None

    def __post_init__(self):
        scores = np.array(self.scores, dtype=np.float64, copy=True).reshape(-1)
        is_genuine = np.array(self.is_genuine, dtype=bool, copy=True).reshape(-1)
        if scores.shape != is_genuine.shape:
            raise MetricError("scores and genuine flags differ in length")
        if not (np.isfinite(scores).all() and (scores >= 0).all()):
            raise MetricError("scores must be finite and non-negative")
        if self.pairs is not None and len(self.pairs) != scores.shape[0]:
            raise MetricError("pair list and scores differ in length")
        scores.flags.writeable = False
        is_genuine.flags.writeable = False
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "is_genuine", is_genuine)

    @classmethod
    def from_lists(cls, genuine, impostor, metric="cosine"):
        genuine = np.asarray(genuine, dtype=np.float64)
        impostor = np.asarray(impostor, dtype=np.float64)
        flags = np.concatenate([np.ones(genuine.shape[0], bool), np.zeros(impostor.shape[0], bool)])
        return cls(metric, np.concatenate([genuine, impostor]), flags)

    @property
    def genuine(self) -> np.ndarray:
        return self.scores[self.is_genuine]

    @property
    def impostor(self) -> np.ndarray:
        return self.scores[~self.is_genuine]

    def __len__(self):
        return int(self.scores.shape[0])


def score_pairs(protocol: PairProtocol, embeddings: EmbeddingSet, metric: DistanceMetric,
                workers: int = 1, chunk_size: int = CHUNK_SIZE) -> ScoreSet:
    """
    Score every protocol pair

    Pairs are split into chunks scored concurrently; results are reassembled
    in protocol order.
    """
    if metric.kind is MetricKind.MAHALANOBIS:
        if metric.variances is None:
            raise MetricError("Mahalanobis metric has no variances")
        if metric.variances.shape[0] != embeddings.dim:
            raise MetricError(
                f"dimension mismatch: {metric.variances.shape[0]} variances for {embeddings.dim} features"
            )
    try:
        matrix = embeddings.select(protocol.ids).matrix()
    except EmbeddingFormatError as e:
        raise ProtocolError(str(e)) from e

    kernel = _KERNELS[metric.kind]
    bounds = [(start, min(start + chunk_size, len(protocol))) for start in range(0, len(protocol), chunk_size)]

    def score_chunk(bound):
        lo, hi = bound
        return kernel(matrix[protocol.first[lo:hi]], matrix[protocol.second[lo:hi]], metric.variances)

    workers = max(1, int(workers))
    if workers == 1 or len(bounds) <= 1:
        chunks = [score_chunk(b) for b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            chunks = list(executor.map(score_chunk, bounds))
    scores = np.concatenate(chunks) if chunks else np.zeros(0)

    bad = np.flatnonzero(np.isnan(scores))
    if bad.size:
        a, b = protocol.pair(bad[0])
        raise MetricError(f"{metric.name} distance undefined for pair ({a}, {b}): {_UNDEFINED[metric.kind]}")

    logger.info("Scored %d pairs with %s (%d genuine, %d impostor)",
                len(scores), metric.name, protocol.n_intra, protocol.n_inter)
    pairs = tuple(zip((protocol.ids[i] for i in protocol.first), (protocol.ids[j] for j in protocol.second)))
    return ScoreSet(metric.name, scores, protocol.genuine, pairs)


# ----------------------------------------------------------------------------
# Score files
# ----------------------------------------------------------------------------

def write_scores(score_set: ScoreSet, path) -> None:
    """Write ``SCORES v1 metric=<name>`` then ``id_a,id_b,genuine|impostor,score`` rows"""
    if score_set.pairs is None:
        raise ProtocolError("score set carries no pair ids and cannot be written")
    path = Path(path)
    frame = pd.DataFrame({
        "id_a": [p[0] for p in score_set.pairs],
        "id_b": [p[1] for p in score_set.pairs],
        "kind": np.where(score_set.is_genuine, "genuine", "impostor"),
        "score": score_set.scores,
    })
    try:
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(f"SCORES v1 metric={score_set.metric}\n")
            frame.to_csv(f, header=False, index=False, float_format="%.9g", lineterminator="\n")
    except OSError as e:
        raise ProtocolError(f"{path}: cannot write scores ({e})") from e


def read_scores(path) -> ScoreSet:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as f:
            header = f.readline().rstrip("\r\n")
    except OSError as e:
        raise ProtocolError(f"{path}: cannot read scores ({e})") from e
    match = _SCORE_HEADER.match(header)
    if match is None:
        raise ProtocolError(f"{path}: malformed score header {header[:60]!r}")

    try:
        frame = pd.read_csv(path, skiprows=1, header=None, names=["id_a", "id_b", "kind", "score"],
                            dtype={"id_a": str, "id_b": str, "kind": str}, keep_default_na=False)
    except pd.errors.EmptyDataError:
        frame = pd.DataFrame(columns=["id_a", "id_b", "kind", "score"])
    except (ValueError, pd.errors.ParserError) as e:
        raise ProtocolError(f"{path}: malformed score rows ({e})") from e

    bad_kind = ~frame["kind"].isin(["genuine", "impostor"])
    if bad_kind.any():
        row = int(np.flatnonzero(bad_kind.to_numpy())[0]) + 1
        raise ProtocolError(f"{path}: row {row}: pair kind must be 'genuine' or 'impostor'")
    scores = pd.to_numeric(frame["score"], errors="coerce").to_numpy(dtype=np.float64)
    bad_score = ~np.isfinite(scores)
    if bad_score.any():
        raise ProtocolError(f"{path}: row {int(np.flatnonzero(bad_score)[0]) + 1}: invalid score")

    pairs = tuple(zip(frame["id_a"], frame["id_b"]))
    return ScoreSet(match.group(1), scores, (frame["kind"] == "genuine").to_numpy(), pairs)
