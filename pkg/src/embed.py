"""
Embedding contract: baseline block-statistics embedder and the EMB v1 file
format for externally computed features
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence, Tuple

import numpy as np
from scipy import ndimage

from src.errors import EmbeddingFormatError, GeometryError
from src.raster import Raster, to_grayscale

logger = logging.getLogger(__name__)

EMBEDDING_DIM = 256
GRID = 8
_SOBEL_SCALE = 4.0 * 255.0
_HEADER = re.compile(r"^EMB v1 dim=([1-9][0-9]*) count=(0|[1-9][0-9]*)$")
_FORBIDDEN_ID_CHARS = (",", "\n", "\r")


class EmbeddingSource(Enum):
    BASELINE = "baseline"
    EXTERNAL = "external-file"


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    id: str
    class_label: str
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True).reshape(-1)
        if not np.isfinite(values).all():
            raise EmbeddingFormatError(f"{self.id}: non-finite feature")
        if not self.id or any(c in self.id for c in _FORBIDDEN_ID_CHARS):
            raise EmbeddingFormatError(f"Invalid embedding id {self.id!r}")
        if not self.class_label or any(c in self.class_label for c in _FORBIDDEN_ID_CHARS):
            raise EmbeddingFormatError(f"{self.id}: invalid class label {self.class_label!r}")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def dim(self):
        return self.values.shape[0]

    def __repr__(self):
        return f"EmbeddingVector(id={self.id!r}, class_label={self.class_label!r}, dim={self.dim})"


@dataclass(frozen=True)
class EmbeddingSet:
    """Ordered embeddings sharing one dimension, ids unique"""

    dim: int
    entries: Tuple[EmbeddingVector, ...] = ()
    source: EmbeddingSource = EmbeddingSource.BASELINE

    def __post_init__(self):
        if isinstance(self.dim, bool) or not isinstance(self.dim, (int, np.integer)) or self.dim < 1:
            raise EmbeddingFormatError(f"Embedding dimension must be a positive integer, got {self.dim!r}")
        object.__setattr__(self, "entries", tuple(self.entries))
        object.__setattr__(self, "source", EmbeddingSource(self.source))
        seen = set()
        for entry in self.entries:
            if entry.dim != self.dim:
                raise EmbeddingFormatError(f"{entry.id}: dimension {entry.dim} does not match set dimension {self.dim}")
            if entry.id in seen:
                raise EmbeddingFormatError(f"duplicate id {entry.id}")
            seen.add(entry.id)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def ids(self):
        return [e.id for e in self.entries]

    @property
    def labels(self):
        return [(e.id, e.class_label) for e in self.entries]

    def matrix(self) -> np.ndarray:
        """(count, dim) float64 array in entry order"""
        if not self.entries:
            return np.zeros((0, self.dim))
        return np.stack([e.values for e in self.entries])

    def select(self, ids: Iterable[str]) -> "EmbeddingSet":
        """Subset in the requested order; every id must be present"""
        ids = list(ids)
        index = {e.id: e for e in self.entries}
        missing = [i for i in ids if i not in index]
        if missing:
            shown = ", ".join(missing[:20]) + (" ..." if len(missing) > 20 else "")
            raise EmbeddingFormatError(f"{len(missing)} ids missing from embeddings: {shown}")
        return replace(self, entries=tuple(index[i] for i in ids))

    def with_matrix(self, matrix) -> "EmbeddingSet":
        matrix = np.asarray(matrix, dtype=np.float64)
        entries = tuple(EmbeddingVector(e.id, e.class_label, row) for e, row in zip(self.entries, matrix))
        return replace(self, dim=int(matrix.shape[1]) if matrix.ndim == 2 else self.dim, entries=entries)


def baseline_embed(image: Raster) -> np.ndarray:
    """
    Deterministic 256-value embedding of a square final-size image

    The grayscale image is split into an 8x8 grid of equal blocks, so the
    side must be a multiple of 8 (224 by default). Each
    block contributes four features in [0, 1]: mean intensity, population
    standard deviation, mean absolute horizontal Sobel response and mean
    absolute vertical Sobel response. Blocks are visited in row-major order.
    """
    if image.width != image.height or image.width % GRID != 0:
        raise GeometryError(
            f"baseline embedder needs a square image with a side divisible by {GRID}, "
            f"got {image.width}x{image.height}"
        )
    gray = to_grayscale(image).pixels[:, :, 0].astype(np.float64)
    grad_x = np.abs(ndimage.sobel(gray, axis=1, mode="nearest")) / _SOBEL_SCALE
    grad_y = np.abs(ndimage.sobel(gray, axis=0, mode="nearest")) / _SOBEL_SCALE

    block = image.width // GRID

    def blocks(arr):
        # (GRID, GRID, block*block), row-major over blocks
        return arr.reshape(GRID, block, GRID, block).transpose(0, 2, 1, 3).reshape(GRID, GRID, -1)

    intensity = blocks(gray / 255.0)
    features = np.stack([
        intensity.mean(axis=-1),
        intensity.std(axis=-1),
        blocks(grad_x).mean(axis=-1),
        blocks(grad_y).mean(axis=-1),
    ], axis=-1)
    return np.clip(features.reshape(-1), 0.0, 1.0)


def l2_normalize(embeddings: EmbeddingSet) -> EmbeddingSet:
    """Scale each vector to unit length; all-zero vectors are left as they are"""
    matrix = embeddings.matrix()
    if len(embeddings) == 0:
        return embeddings
    norms = np.linalg.norm(matrix, axis=1)
    zero = norms == 0
    if zero.any():
        logger.warning("%d zero-norm embeddings left unnormalized", int(zero.sum()))
    norms[zero] = 1.0
    return embeddings.with_matrix(matrix / norms[:, None])


def perturb(embeddings: EmbeddingSet, sigma: float, seed: int) -> EmbeddingSet:
    """Add seeded isotropic Gaussian noise; sigma == 0 returns the set unchanged"""
    if sigma < 0 or not math.isfinite(sigma):
        raise EmbeddingFormatError(f"embedding noise must be a non-negative number, got {sigma}")
    if sigma == 0 or len(embeddings) == 0:
        return embeddings
    rng = np.random.default_rng(seed)
    matrix = embeddings.matrix()
    return embeddings.with_matrix(matrix + rng.normal(0.0, sigma, size=matrix.shape))


# ----------------------------------------------------------------------------
# EMB v1 files
# ----------------------------------------------------------------------------

def write_embeddings(embeddings: EmbeddingSet, path) -> None:
    """
    Write ``EMB v1 dim=D count=N`` followed by one ``id,label,v1..vD`` row per entry

    Values keep 9 significant digits, a relative error of at most 5e-9. That
    stays within 1e-7 absolute only while |v| < 20; larger values round-trip
    to the relative bound.
    """
    path = Path(path)
    lines = [f"EMB v1 dim={embeddings.dim} count={len(embeddings)}"]
    for entry in embeddings:
        values = ",".join(format(float(v), ".9g") for v in entry.values)
        lines.append(f"{entry.id},{entry.class_label},{values}")
    try:
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as e:
        raise EmbeddingFormatError(f"{path}: cannot write embeddings ({e})") from e
    logger.info("Wrote %d embeddings (dim %d) to %s", len(embeddings), embeddings.dim, path)


def _parse_row(line: str, row: int, dim: int, path: Path) -> EmbeddingVector:
    fields = line.split(",")
    if len(fields) != dim + 2:
        raise EmbeddingFormatError(
            f"{path}: row {row}: expected {dim} values, found {max(len(fields) - 2, 0)}"
        )
    try:
        values = np.array([float(tok) for tok in fields[2:]])
    except ValueError as e:
        raise EmbeddingFormatError(f"{path}: row {row}: {e}") from None
    if not np.isfinite(values).all():
        raise EmbeddingFormatError(f"{path}: row {row}: non-finite feature")
    try:
        return EmbeddingVector(fields[0], fields[1], values)
    except EmbeddingFormatError as e:
        raise EmbeddingFormatError(f"{path}: row {row}: {e}") from None


def read_embeddings(path) -> EmbeddingSet:
    """
    Parse an EMB v1 file

    Rows are numbered from 1 after the header in error messages.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise EmbeddingFormatError(f"{path}: cannot read embeddings ({e})") from e

    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise EmbeddingFormatError(f"{path}: malformed header (empty file)")
    match = _HEADER.match(lines[0].rstrip("\r"))
    if match is None:
        raise EmbeddingFormatError(f"{path}: malformed header {lines[0][:60]!r}")
    dim, count = int(match.group(1)), int(match.group(2))

    rows = [line.rstrip("\r") for line in lines[1:]]
    if len(rows) != count:
        raise EmbeddingFormatError(f"{path}: header declares {count} rows, found {len(rows)}")

    entries = []
    seen = set()
    for row, line in enumerate(rows, start=1):
        entry = _parse_row(line, row, dim, path)
        if entry.id in seen:
            raise EmbeddingFormatError(f"{path}: row {row}: duplicate id {entry.id}")
        seen.add(entry.id)
        entries.append(entry)

    logger.debug("Read %d embeddings from %s", len(entries), path)
    return EmbeddingSet(dim=dim, entries=tuple(entries), source=EmbeddingSource.EXTERNAL)


def embedding_set(rows: Sequence[Tuple[str, str, np.ndarray]], dim: int = EMBEDDING_DIM,
                  source: EmbeddingSource = EmbeddingSource.BASELINE) -> EmbeddingSet:
    """Build a set from (id, class_label, values) rows"""
    return EmbeddingSet(dim=dim, entries=tuple(EmbeddingVector(i, c, v) for i, c, v in rows), source=source)
