"""
Iris verification pipeline

preprocess -> augment (train rows) -> embed -> evaluate, repeated per run
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd

from src.augment import AugmentConfig, AugmentStage, angle_tag, augmentation_angles, rotate
from src.config import (EmbedderChoice, ExperimentConfig, manifest_labels, resolve_workers,
                        save_manifest)
from src.embed import (EMBEDDING_DIM, EmbeddingSet, EmbeddingSource, EmbeddingVector, baseline_embed,
                       l2_normalize, perturb, read_embeddings, write_embeddings)
from src.errors import ConfigError, EmbeddingFormatError, IrisBenchError, ProtocolError, StageError
from src.metrics import (VerificationReport, compare_series, evaluate_scores, format_decidability,
                         read_report, summarize_runs, write_det_csv, write_report)
from src.preprocess import DELINEATED_SCHEMES, FINAL_SIZE, PreprocessConfig, finalize, preprocess_intermediate
from src.raster import load_image, load_mask, save_image
from src.verify import (DistanceMetric, MetricKind, ScoreSet, estimate_variances, generate_pairs,
                        score_pairs, write_scores)

logger = logging.getLogger(__name__)

RULE = "=" * 60


@dataclass(frozen=True)
class RowFailure:
    id: str
    stage: str
    message: str


def output_name(image_id: str, scheme: str) -> str:
    """``<id>__<scheme>.png`` with the id made filename-safe"""
    safe = image_id.replace("/", "_").replace("\\", "_").replace("@", "__")
    return f"{safe}__{scheme}.png"


def augmented_id(image_id: str, angle: float) -> str:
    return f"{image_id}@{angle_tag(angle)}"


def print_summary(title: str, total: int, failures: Sequence[RowFailure], elapsed: float) -> None:
    print(f"\n{RULE}")
    print(title)
    print(RULE)
    print(f"Total rows:  {total}")
    print(f"Successful:  {total - len(failures)}")
    print(f"Failed:      {len(failures)}")
    print(f"Total time:  {elapsed:.1f}s")
    print(RULE)
    for failure in failures:
        print(f"✗ {failure.id} [{failure.stage}]: {failure.message}")


class IrisPipeline:
    """Stage-by-stage iris verification experiment"""

    def __init__(self, output_dir, workers: Optional[int] = None):
        """
        Initialize the pipeline

        Parameters
        ----------
        output_dir : str or Path
            Directory every stage writes under
        workers : int, optional
            Row/pair parallelism; defaults to IRISBENCH_THREADS or the CPU count
        """
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.workers = resolve_workers(workers)

    def _map(self, func, items):
        items = list(items)
        if self.workers == 1 or len(items) <= 1:
            return [func(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.workers) as executor:
            return list(executor.map(func, items))

    # ------------------------------------------------------------------
    # Preprocess
    # ------------------------------------------------------------------

    def _preprocess_row(self, row, config: PreprocessConfig, out_dir: Path,
                        augment: Optional[AugmentConfig]):
        produced = []
        try:
            image = load_image(row.image_path)
            mask = load_mask(row.mask_path)
            intermediate = preprocess_intermediate(image, mask, config)
            final = finalize(intermediate, config)
            path = out_dir / output_name(row.id, config.scheme)
            save_image(final, path)
            produced.append((row.id, path, float(row.angle_deg)))

            if augment is not None and row.split == "train":
                for angle in augmentation_angles(augment):
                    rotated = (finalize(rotate(intermediate, angle), config)
                               if augment.stage is AugmentStage.CROP else rotate(final, angle))
                    new_id = augmented_id(row.id, angle)
                    path = out_dir / output_name(new_id, config.scheme)
                    save_image(rotated, path)
                    produced.append((new_id, path, float(row.angle_deg) + angle))
        except IrisBenchError as e:
            logger.debug("Row %s failed: %s", row.id, e)
            return [], RowFailure(row.id, "preprocess", str(e))
        return produced, None

    def preprocess(self, manifest: pd.DataFrame, config: PreprocessConfig,
                   augment: Optional[AugmentConfig] = None,
                   out_dir: Optional[Path] = None) -> Tuple[pd.DataFrame, List[RowFailure]]:
        """
        Preprocess every manifest row into ``<out_dir>/<id>__<scheme>.png``

        With ``augment`` set, train rows also produce their rotated copies.

        Returns
        -------
        manifest : pd.DataFrame
            Rows for the written images, in input order
        failures : list of RowFailure
        """
        out_dir = Path(out_dir) if out_dir is not None else self.output_dir / config.scheme
        out_dir.mkdir(parents=True, exist_ok=True)
        print(f"Preprocessing {len(manifest)} rows with scheme {config.scheme} -> {out_dir}")

        rows = list(manifest.itertuples(index=False))
        results = self._map(lambda r: self._preprocess_row(r, config, out_dir, augment), rows)

        records, failures = [], []
        for row, (produced, failure) in zip(rows, results):
            if failure is not None:
                failures.append(failure)
                continue
            for image_id, path, angle in produced:
                records.append({
                    "id": image_id,
                    "image_path": str(path),
                    "mask_path": row.mask_path,
                    "class_label": row.class_label,
                    "split": row.split,
                    "angle_deg": angle,
                })

        out = pd.DataFrame(records, columns=manifest.columns)
        save_manifest(out, out_dir / "manifest.csv")
        print(f"✓ {config.scheme}: {len(out)} images written, {len(failures)} failed")
        return out, failures

    def sweep(self, manifest: pd.DataFrame, schemes: Sequence[str] = DELINEATED_SCHEMES,
              segment_before_normalization: bool = True,
              final_size: int = FINAL_SIZE) -> Dict[str, Tuple[pd.DataFrame, List[RowFailure]]]:
        """Run ``preprocess`` once per scheme into one directory each"""
        results = {}
        for scheme in schemes:
            config = PreprocessConfig.from_scheme(scheme, final_size=final_size,
                                                  segment_before_normalization=segment_before_normalization)
            results[scheme] = self.preprocess(manifest, config)
        return results

    # ------------------------------------------------------------------
    # Augment (already preprocessed images)
    # ------------------------------------------------------------------

    def augment(self, manifest: pd.DataFrame, config: AugmentConfig) -> Tuple[pd.DataFrame, List[RowFailure]]:
        """
        Expand train rows by their rotated copies; test rows pass through

        Originals keep their files; rotations are written under
        ``<output_dir>/augmented``.
        """
        train = manifest[manifest["split"] == "train"]
        if train.empty:
            raise ConfigError("nothing to augment: manifest has no train rows")
        angles = augmentation_angles(config)
        out_dir = self.output_dir / "augmented"
        out_dir.mkdir(parents=True, exist_ok=True)
        print(f"Augmenting {len(train)} train rows with angles {', '.join(f'{a:+g}' for a in angles)}")

        def expand(row):
            if row.split != "train":
                return [row._asdict()], None
            try:
                image = load_image(row.image_path)
                expanded = [row._asdict()]
                for angle in angles:
                    new_id = augmented_id(row.id, angle)
                    path = out_dir / f"{new_id.replace('@', '__')}.png"
                    save_image(rotate(image, angle), path)
                    expanded.append({**row._asdict(), "id": new_id, "image_path": str(path),
                                     "angle_deg": float(row.angle_deg) + angle})
                return expanded, None
            except IrisBenchError as e:
                return [], RowFailure(row.id, "augment", str(e))

        results = self._map(expand, manifest.itertuples(index=False))
        records = [rec for produced, _ in results for rec in produced]
        failures = [f for _, f in results if f is not None]
        out = pd.DataFrame(records, columns=manifest.columns)
        save_manifest(out, self.output_dir / "manifest.csv")
        print(f"✓ Augmented manifest: {len(out)} rows ({len(failures)} failed)")
        return out, failures

    # ------------------------------------------------------------------
    # Embed
    # ------------------------------------------------------------------

    def embed(self, manifest: pd.DataFrame,
              embedder: EmbedderChoice = EmbedderChoice()) -> Tuple[EmbeddingSet, List[RowFailure]]:
        """One embedding per manifest row, in manifest order"""
        if embedder.external is not None:
            external = read_embeddings(embedder.external)
            selected = external.select(manifest["id"])
            expected = dict(manifest_labels(manifest))
            wrong = [e.id for e in selected if e.class_label != expected[e.id]]
            if wrong:
                raise EmbeddingFormatError(f"class labels differ from the manifest for ids {', '.join(wrong)}")
            print(f"✓ Loaded {len(selected)} external embeddings (dim {selected.dim})")
            return selected, []

        def embed_row(row):
            try:
                values = baseline_embed(load_image(row.image_path))
                return EmbeddingVector(row.id, row.class_label, values), None
            except IrisBenchError as e:
                return None, RowFailure(row.id, "embed", str(e))

        results = self._map(embed_row, manifest.itertuples(index=False))
        entries = tuple(v for v, _ in results if v is not None)
        failures = [f for _, f in results if f is not None]
        embeddings = EmbeddingSet(EMBEDDING_DIM, entries, EmbeddingSource.BASELINE)
        print(f"✓ Embedded {len(entries)} images ({len(failures)} failed)")
        return embeddings, failures

    # ------------------------------------------------------------------
    # Evaluate
    # ------------------------------------------------------------------

    def score(self, embeddings: EmbeddingSet, metric: DistanceMetric,
              reference: Optional[EmbeddingSet] = None) -> ScoreSet:
        """
        All-against-all scores over ``embeddings``

        Mahalanobis variances come from ``reference`` when given (training
        embeddings), otherwise from the scored set itself.
        """
        if metric.kind is MetricKind.MAHALANOBIS and metric.variances is None:
            source = reference if reference is not None and len(reference) >= 2 else embeddings
            metric = metric.with_variances(estimate_variances(source))
        protocol = generate_pairs(embeddings.labels)
        if protocol.n_inter == 0:
            raise ProtocolError("no impostor pairs: evaluation needs at least 2 classes")
        return score_pairs(protocol, embeddings, metric, workers=self.workers)

    def evaluate(self, scores: ScoreSet, scheme: str = "", out_dir: Optional[Path] = None) -> VerificationReport:
        """Write scores.csv, det.csv and report.json for one score set"""
        out_dir = Path(out_dir) if out_dir is not None else self.output_dir
        out_dir.mkdir(parents=True, exist_ok=True)
        report = evaluate_scores(scores, scheme=scheme)
        if scores.pairs is not None:
            write_scores(scores, out_dir / "scores.csv")
        write_det_csv(report.curve, out_dir / "det.csv")
        write_report(report.to_dict(), out_dir / "report.json")
        print(f"✓ EER {report.eer * 100:.2f}%  d' {format_decidability(report.decidability)}  "
              f"({report.n_genuine} genuine / {report.n_impostor} impostor pairs)")
        return report

    # ------------------------------------------------------------------
    # Compare
    # ------------------------------------------------------------------

    def compare(self, report_paths: Sequence[Path], alpha: float = 0.05,
                labels: Optional[Sequence[str]] = None) -> Tuple[pd.DataFrame, pd.DataFrame]:
        report_paths = [Path(p) for p in report_paths]
        documents = [read_report(p) for p in report_paths]
        labels = list(labels) if labels else _report_labels(report_paths)
        summary, tests = compare_series(labels, documents, alpha)
        summary.to_csv(self.output_dir / "comparison.csv", index=False, lineterminator="\n")
        tests.to_csv(self.output_dir / "ttests.csv", index=False, float_format="%.6g", lineterminator="\n")

        print(f"\n{RULE}")
        print(f"COMPARISON ({len(documents)} reports, alpha = {alpha:g})")
        print(RULE)
        print(summary.to_string(index=False))
        print()
        for test in tests.itertuples(index=False):
            marker = "*" if test.significant else " "
            print(f"{marker} {test.a} vs {test.b} [{test.series}]: t = {test.t:.4f}, df = {test.df}, p = {test.p:.4g}")
        return summary, tests

    # ------------------------------------------------------------------
    # Full experiment
    # ------------------------------------------------------------------

    def run_full_pipeline(self, config: ExperimentConfig, manifest: pd.DataFrame) -> Tuple[Dict, List[RowFailure]]:
        """
        Execute the complete experiment

        Preprocessing and embedding are deterministic and run once; each run
        then perturbs the embeddings with seed + run index (when
        ``embedding_noise`` > 0) and evaluates the test split.

        Returns
        -------
        document : dict
            Aggregated report, also written to ``<output_dir>/report.json``
        failures : list of RowFailure
        """
        scheme = config.preprocess.scheme
        print(f"\n{RULE}")
        print(f"Experiment: {scheme}, metric {config.metric.name}, {config.runs} run(s), seed {config.seed}")
        print(f"{RULE}\n")
        start = time.time()

        try:
            prepared, failures = self.preprocess(manifest, config.preprocess, augment=config.augment,
                                                 out_dir=self.output_dir / "preprocessed")
        except IrisBenchError as e:
            raise StageError("preprocess", e) from e
        if prepared.empty:
            raise StageError("preprocess", "no rows were preprocessed")

        try:
            embeddings, embed_failures = self.embed(prepared, config.embedder)
        except IrisBenchError as e:
            raise StageError("embed", e) from e
        failures = failures + embed_failures
        write_embeddings(embeddings, self.output_dir / "embeddings.emb")

        embedded = set(embeddings.ids)
        test_ids = [i for i, s in zip(prepared["id"], prepared["split"]) if s == "test" and i in embedded]
        train_ids = [i for i, s in zip(prepared["id"], prepared["split"]) if s == "train" and i in embedded]
        if len(test_ids) < 2:
            raise StageError("evaluate", ProtocolError(f"need at least 2 test embeddings, got {len(test_ids)}"))

        reports = []
        for run in range(config.runs):
            run_dir = self.output_dir / "runs" / f"run-{run + 1:02d}"
            print(f"\n--- Run {run + 1}/{config.runs} (seed {config.seed + run}) ---")
            try:
                current = perturb(embeddings, config.embedding_noise, config.seed + run)
                if config.l2_normalize:
                    current = l2_normalize(current)
                reference = current.select(train_ids) if train_ids else None
                scores = self.score(current.select(test_ids), config.metric, reference)
                reports.append(self.evaluate(scores, scheme=scheme, out_dir=run_dir))
            except IrisBenchError as e:
                raise StageError("evaluate", e) from e

        document = summarize_runs(reports, scheme=scheme, metric=config.metric.name)
        document["config"] = config.to_dict()
        document["config"]["embedder"] = config.embedder.kind
        write_report(document, self.output_dir / "report.json")

        elapsed = time.time() - start
        print(f"\n✓ Pipeline complete in {elapsed:.1f}s")
        print(f"  EER  {document['summary']['eer_percent']} %")
        print(f"  d'   {document['summary']['decidability']}")
        return document, failures


def _report_labels(paths: Sequence[Path]) -> List[str]:
    """Shortest distinguishing labels: the parent directory name, else the full path"""
    names = [p.parent.name or p.stem for p in paths]
    if len(set(names)) == len(names):
        return names
    return [str(p) for p in paths]


if __name__ == "__main__":
    import sys

    from src.cli import main

    sys.exit(main(["pipeline"] + sys.argv[1:]))
