"""
Dataset manifests and experiment configuration
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Optional

import pandas as pd

from src.augment import AugmentConfig
from src.embed import GRID as EMBED_GRID
from src.errors import ConfigError
from src.preprocess import PreprocessConfig
from src.verify import DistanceMetric

logger = logging.getLogger(__name__)

MANIFEST_COLUMNS = ["id", "image_path", "mask_path", "class_label", "split", "angle_deg"]
SPLITS = ("train", "test")
THREADS_ENV = "IRISBENCH_THREADS"
DEFAULT_SCHEME = "norm8x1-seg"


def resolve_workers(requested: Optional[int] = None) -> int:
    """Worker count: explicit value, else IRISBENCH_THREADS, else the CPU count"""
    if requested is not None:
        if requested < 1:
            raise ConfigError(f"worker count must be at least 1, got {requested}")
        return int(requested)
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            value = int(raw)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be a positive integer, got '{raw}'") from None
        if value < 1:
            raise ConfigError(f"{THREADS_ENV} must be a positive integer, got '{raw}'")
        return value
    return os.cpu_count() or 1


# ----------------------------------------------------------------------------
# Manifest
# ----------------------------------------------------------------------------

def load_manifest(path, check_files: bool = True) -> pd.DataFrame:
    """
    Read a manifest CSV

    Parameters
    ----------
    path : str or Path
        CSV with columns id, image_path, mask_path, class_label, split and
        optionally angle_deg (default 0)
    check_files : bool
        Require every referenced image and mask to exist

    Returns
    -------
    manifest : pd.DataFrame
        Rows in file order with paths resolved against the manifest directory
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Manifest not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise ConfigError(f"{path}: cannot parse manifest ({e})") from e

    if "angle_deg" not in frame.columns:
        frame["angle_deg"] = "0"
    missing = [c for c in MANIFEST_COLUMNS if c not in frame.columns]
    if missing:
        raise ConfigError(f"{path}: manifest is missing columns {', '.join(missing)}")
    frame = frame[MANIFEST_COLUMNS].copy()

    frame["id"] = frame["id"].str.strip()
    if (frame["id"] == "").any():
        raise ConfigError(f"{path}: empty id on row {int((frame['id'] == '').idxmax()) + 1}")
    dupes = frame["id"][frame["id"].duplicated()].unique().tolist()
    if dupes:
        raise ConfigError(f"{path}: duplicate ids {', '.join(dupes)}")
    empty_label = frame["class_label"].str.strip() == ""
    if empty_label.any():
        raise ConfigError(f"{path}: empty class label for ids {', '.join(frame['id'][empty_label])}")
    bad_split = ~frame["split"].isin(SPLITS)
    if bad_split.any():
        raise ConfigError(f"{path}: split must be 'train' or 'test' (ids {', '.join(frame['id'][bad_split])})")

    angles = pd.to_numeric(frame["angle_deg"].replace("", "0"), errors="coerce")
    if angles.isna().any():
        raise ConfigError(f"{path}: invalid angle_deg for ids {', '.join(frame['id'][angles.isna()])}")
    frame["angle_deg"] = angles.astype(float)

    base = path.parent
    for column in ("image_path", "mask_path"):
        frame[column] = [str((base / p).resolve()) if p else "" for p in frame[column]]

    if check_files:
        absent = [row.id for row in frame.itertuples()
                  if not Path(row.image_path).is_file() or not Path(row.mask_path).is_file()]
        if absent:
            raise ConfigError(f"{path}: missing image or mask files for ids {', '.join(absent)}")

    logger.debug("Loaded manifest %s (%d rows)", path, len(frame))
    return frame.reset_index(drop=True)


def save_manifest(frame: pd.DataFrame, path) -> None:
    """Write a manifest with paths relative to its own directory"""
    path = Path(path)
    base = path.parent.resolve()
    out = frame[MANIFEST_COLUMNS].copy()
    for column in ("image_path", "mask_path"):
        out[column] = [Path(os.path.relpath(Path(p).resolve(), base)).as_posix() if p else "" for p in out[column]]
    out["angle_deg"] = out["angle_deg"].astype(float)
    try:
        out.to_csv(path, index=False, float_format="%.9g", lineterminator="\n")
    except OSError as e:
        raise ConfigError(f"{path}: cannot write manifest ({e})") from e


def manifest_labels(frame: pd.DataFrame):
    return list(zip(frame["id"], frame["class_label"]))


# ----------------------------------------------------------------------------
# Experiment configuration
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class EmbedderChoice:
    """``baseline`` or an external EMB v1 file"""

    external: Optional[Path] = None

    @property
    def kind(self):
        return "baseline" if self.external is None else "external"

    def to_json(self):
        return "baseline" if self.external is None else {"external": str(self.external)}


@dataclass(frozen=True)
class ExperimentConfig:
    preprocess: PreprocessConfig = field(default_factory=lambda: PreprocessConfig.from_scheme(DEFAULT_SCHEME))
    augment: Optional[AugmentConfig] = None
    embedder: EmbedderChoice = field(default_factory=EmbedderChoice)
    metric: DistanceMetric = field(default_factory=DistanceMetric)
    runs: int = 1
    seed: int = 0
    embedding_noise: float = 0.0
    l2_normalize: bool = False

    def __post_init__(self):
        if isinstance(self.runs, bool) or not isinstance(self.runs, int) or self.runs < 1:
            raise ConfigError(f"runs must be a positive integer, got {self.runs!r}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be an unsigned integer, got {self.seed!r}")
        if not isinstance(self.embedding_noise, (int, float)) or not self.embedding_noise >= 0:
            raise ConfigError(f"embedding_noise must be non-negative, got {self.embedding_noise!r}")
        if self.embedder.external is not None and not Path(self.embedder.external).is_file():
            raise ConfigError(f"External embedding file not found: {self.embedder.external}")
        if self.embedder.external is None and self.preprocess.final_size % EMBED_GRID != 0:
            raise ConfigError(
                f"final_size {self.preprocess.final_size} is not divisible by {EMBED_GRID}, "
                "which the baseline embedder needs"
            )

    def with_overrides(self, scheme=None, metric=None, seed=None, runs=None) -> "ExperimentConfig":
        """Apply command-line overrides"""
        changes = {}
        if scheme is not None:
            changes["preprocess"] = PreprocessConfig.from_scheme(
                scheme,
                final_size=self.preprocess.final_size,
                segment_before_normalization=self.preprocess.segment_before_normalization,
            )
        if metric is not None:
            changes["metric"] = DistanceMetric(metric)
        if seed is not None:
            changes["seed"] = seed
        if runs is not None:
            changes["runs"] = runs
        return replace(self, **changes) if changes else self

    def to_dict(self) -> Dict:
        return {
            "preprocess": self.preprocess.to_dict(),
            "augment": None if self.augment is None else self.augment.to_dict(),
            "embedder": self.embedder.to_json(),
            "metric": self.metric.name,
            "runs": self.runs,
            "seed": self.seed,
            "embedding_noise": self.embedding_noise,
            "l2_normalize": self.l2_normalize,
        }


_KNOWN_KEYS = {"scheme", "preprocess", "augment", "embedder", "metric", "runs", "seed",
               "embedding_noise", "l2_normalize"}


def _preprocess_from(data: Dict) -> PreprocessConfig:
    if "scheme" in data and "preprocess" in data:
        raise ConfigError("give either 'scheme' or 'preprocess', not both")
    if "preprocess" in data:
        section = data["preprocess"]
        if not isinstance(section, dict):
            raise ConfigError("'preprocess' must be an object")
        try:
            return PreprocessConfig(**section)
        except TypeError as e:
            raise ConfigError(f"invalid 'preprocess' section ({e})") from None
    return PreprocessConfig.from_scheme(data.get("scheme", DEFAULT_SCHEME))


def _embedder_from(value, base: Path) -> EmbedderChoice:
    if value in (None, "baseline"):
        return EmbedderChoice()
    if isinstance(value, dict) and set(value) == {"external"}:
        return EmbedderChoice(external=(base / value["external"]).resolve())
    raise ConfigError(f"embedder must be 'baseline' or {{\"external\": path}}, got {value!r}")


def config_from_dict(data: Dict, base: Path = Path(".")) -> ExperimentConfig:
    """Build an ExperimentConfig; relative paths resolve against ``base``"""
    if not isinstance(data, dict):
        raise ConfigError("experiment config must be a JSON object")
    unknown = sorted(set(data) - _KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")

    augment = data.get("augment")
    if augment is not None:
        if not isinstance(augment, dict):
            raise ConfigError("'augment' must be an object or null")
        try:
            augment = AugmentConfig(**augment)
        except TypeError as e:
            raise ConfigError(f"invalid 'augment' section ({e})") from None

    return ExperimentConfig(
        preprocess=_preprocess_from(data),
        augment=augment,
        embedder=_embedder_from(data.get("embedder"), base),
        metric=DistanceMetric(data.get("metric", "cosine")),
        runs=data.get("runs", 1),
        seed=data.get("seed", 0),
        embedding_noise=data.get("embedding_noise", 0.0),
        l2_normalize=bool(data.get("l2_normalize", False)),
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read config {path} ({e})") from e
    except ValueError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e
    config = config_from_dict(data, base=path.parent)
    logger.info("Loaded config %s: scheme %s, metric %s, %d run(s)",
                path, config.preprocess.scheme, config.metric.name, config.runs)
    return config
