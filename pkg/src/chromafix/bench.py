"""Dataset manifests, run configuration, the benchmark pipeline and its reports."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import statistics
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .augment import AugmentSpec, apply_augment, draw_params
from .color import (
    ChartCorrespondence,
    ColorError,
    ImageBuffer,
    PatchRegion,
    clamp_to_rgb8,
    extract_chart,
    normalize_distance,
    quantize_12_to_8,
    read_image,
)
from .metrics import FailureThresholds, ScoreCard, inter_distance, pairwise_min, score, singular_score, within_distance
from .models import CorrectionModel, MethodId, SingularFitError, TpsConfig, apply_color, apply_image, make_method
from .synthetic import CONFIG_SCHEMA, MANIFEST_SCHEMA

log = logging.getLogger(__name__)

THREADS_ENV = "CHROMAFIX_THREADS"


class ConfigError(ValueError):
    pass


class ManifestError(ValueError):
    """Base class for manifest problems; ``location`` names the offending file/field."""

    def __init__(self, message: str, location: str = ""):
        super().__init__(f"{location}: {message}" if location else message)
        self.location = location


class ManifestMissingError(ManifestError, FileNotFoundError):
    pass


class ManifestFormatError(ManifestError):
    pass


class ManifestCountError(ManifestError):
    pass


class ManifestPathError(ManifestError):
    pass


# -- manifest ------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetEntry:
    image_path: Path
    bit_depth: int
    patch_regions: tuple[PatchRegion, ...]
    reference_chart_id: str
    ground_truth_path: Path | None = None
    replica: int | None = None

    @property
    def name(self) -> str:
        return self.image_path.stem


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[DatasetEntry, ...]
    reference_charts: dict[str, np.ndarray]
    path: Path | None = None

    def reference(self, entry: DatasetEntry) -> np.ndarray:
        return self.reference_charts[entry.reference_chart_id]


def _require(doc: dict, key: str, kind, where: str):
    if key not in doc:
        raise ManifestFormatError(f"missing field {key!r}", where)
    value = doc[key]
    if not isinstance(value, kind):
        raise ManifestFormatError(f"field {key!r} has type {type(value).__name__}", where)
    return value


def load_manifest(path: str | Path) -> DatasetManifest:
    """Parse and validate a manifest; image paths are resolved relative to it."""
    path = Path(path)
    if not path.is_file():
        raise ManifestMissingError("manifest file not found", str(path))
    try:
        doc = json.loads(path.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ManifestFormatError(f"not valid JSON ({exc})", str(path)) from None
    if not isinstance(doc, dict):
        raise ManifestFormatError("top level must be an object", str(path))
    if doc.get("schema") != MANIFEST_SCHEMA:
        raise ManifestFormatError(f"schema must be {MANIFEST_SCHEMA!r}, got {doc.get('schema')!r}", str(path))

    charts: dict[str, np.ndarray] = {}
    for cid, colors in _require(doc, "reference_charts", dict, str(path)).items():
        where = f"{path}:reference_charts[{cid!r}]"
        try:
            arr = np.asarray(colors, dtype=np.float64)
        except (TypeError, ValueError):
            raise ManifestFormatError("colors must be numeric [r, g, b] triples", where) from None
        if arr.ndim != 2 or arr.shape[1] != 3 or arr.shape[0] < 1 or not np.isfinite(arr).all():
            raise ManifestFormatError("colors must be a non-empty list of finite [r, g, b] triples", where)
        charts[str(cid)] = arr

    entries = []
    for i, e in enumerate(_require(doc, "entries", list, str(path))):
        where = f"{path}:entries[{i}]"
        if not isinstance(e, dict):
            raise ManifestFormatError("entry must be an object", where)
        image = path.parent / _require(e, "image", str, where)
        bit_depth = _require(e, "bit_depth", int, where)
        if bit_depth not in (8, 12):
            raise ManifestFormatError(f"bit_depth must be 8 or 12, got {bit_depth}", where)
        chart_id = _require(e, "chart", str, where)
        if chart_id not in charts:
            raise ManifestFormatError(f"unknown reference chart {chart_id!r}", where)
        regions = []
        for k, rect in enumerate(_require(e, "patches", list, where), start=1):
            if not (isinstance(rect, list) and len(rect) == 4 and all(isinstance(v, int) for v in rect)):
                raise ManifestFormatError(f"patch {k} must be [x, y, w, h] integers", where)
            try:
                regions.append(PatchRegion(k, *rect))
            except ColorError as exc:
                raise ManifestFormatError(str(exc), where) from None
        n_ref = charts[chart_id].shape[0]
        if len(regions) != n_ref:
            raise ManifestCountError(f"{len(regions)} patches but chart {chart_id!r} has {n_ref} colors", where)
        if not image.is_file():
            raise ManifestPathError(f"image file not found: {image}", where)
        gt = e.get("ground_truth")
        gt_path = path.parent / gt if isinstance(gt, str) else None
        if gt_path is not None and not gt_path.is_file():
            raise ManifestPathError(f"ground truth file not found: {gt_path}", where)
        replica = e.get("replica")
        entries.append(DatasetEntry(image, bit_depth, tuple(regions), chart_id, gt_path, replica))
    if not entries:
        raise ManifestFormatError("manifest has no entries", str(path))
    return DatasetManifest(tuple(entries), charts, path)


# -- run configuration -----------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    methods: tuple[MethodId, ...]
    augment: AugmentSpec = field(default_factory=AugmentSpec)
    tps: TpsConfig = field(default_factory=TpsConfig)
    thresholds: FailureThresholds = field(default_factory=FailureThresholds)
    timing_repeats: int = 3
    mask_margin: int = 0
    output_dir: Path | None = None

    def __post_init__(self) -> None:
        if not self.methods:
            raise ConfigError("methods must be non-empty")
        if self.timing_repeats < 1:
            raise ConfigError(f"timing_repeats must be >= 1, got {self.timing_repeats}")
        if self.mask_margin < 0:
            raise ConfigError(f"mask_margin must be >= 0, got {self.mask_margin}")


def config_from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    if doc.get("schema") != CONFIG_SCHEMA:
        raise ConfigError(f"schema must be {CONFIG_SCHEMA!r}, got {doc.get('schema')!r}")
    try:
        methods = tuple(MethodId.parse(m) for m in doc.get("methods", []))
        out = doc.get("output_dir")
        return RunConfig(
            methods=methods,
            augment=AugmentSpec(**doc.get("augment", {})),
            tps=TpsConfig(**doc.get("tps", {})),
            thresholds=FailureThresholds(**doc.get("thresholds", {})),
            timing_repeats=int(doc.get("timing_repeats", 3)),
            mask_margin=int(doc.get("mask_margin", 0)),
            output_dir=Path(out) if out else None,
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return config_from_dict(doc)


# -- timing ----------------------------------------------------------------------

def time_correction(model: CorrectionModel, img: ImageBuffer, repeats: int = 3) -> float:
    """Median wall-clock milliseconds of ``apply_image`` after one untimed warm-up."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    apply_image(model, img)
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        apply_image(model, img)
        samples.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(samples)


# -- pipeline --------------------------------------------------------------------

@dataclass(frozen=True)
class ScoreRow:
    image: str
    replica: int
    card: ScoreCard


@dataclass(frozen=True)
class MethodSummary:
    method: str
    corrections: int
    failed: int
    ill_conditioned: int
    singular: int
    within_mean: float
    within_std: float
    within_median: float
    within_mean_pct: float
    inter_mean: float
    inter_std: float
    inter_median: float
    inter_mean_pct: float
    exec_time_mean_ms: float
    fit_time_mean_ms: float


@dataclass(frozen=True)
class RunReport:
    rows: tuple[ScoreRow, ...]
    summary: tuple[MethodSummary, ...]

    def method(self, name: str | MethodId) -> MethodSummary:
        name = MethodId(name).value
        for s in self.summary:
            if s.method == name:
                return s
        raise KeyError(name)


def _worker_count() -> int:
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be >= 1, got {n}")
    return n


def load_ground_truth(entry: DatasetEntry) -> ImageBuffer:
    path = entry.ground_truth_path or entry.image_path
    return read_image(path)


def _score_replica(
    image_name: str,
    replica: int,
    source_img: ImageBuffer,
    gt8: ImageBuffer,
    gt: ImageBuffer,
    regions: Sequence[PatchRegion],
    reference: np.ndarray,
    config: RunConfig,
    timing_lock: threading.Lock,
) -> list[ScoreRow]:
    source = extract_chart(source_img, regions)
    corr = ChartCorrespondence(source, reference)
    within_none = within_distance(source, reference)
    rows = []
    for method in config.methods:
        fit_ms = 0.0
        if method is MethodId.PERF:
            model = CorrectionModel(method)
            target_img = gt8
            chart = extract_chart(gt8, regions)
        else:
            t0 = time.perf_counter()
            try:
                model = make_method(method, corr, config.tps)
            except SingularFitError as exc:
                log.debug("%s replica %d %s: %s", image_name, replica, method.value, exc)
                rows.append(ScoreRow(image_name, replica, singular_score(method, (time.perf_counter() - t0) * 1e3)))
                continue
            fit_ms = (time.perf_counter() - t0) * 1e3
            target_img = source_img
            chart = apply_color(model, source)
        if not np.isfinite(chart).all():
            rows.append(ScoreRow(image_name, replica, singular_score(method, fit_ms)))
            continue
        with timing_lock:
            exec_ms = time_correction(model, target_img, config.timing_repeats)
        corrected = apply_image(model, target_img)
        card = score(
            method,
            within=within_distance(chart, reference),
            pairwise=pairwise_min(clamp_to_rgb8(chart)),
            inter=inter_distance(corrected, gt, regions, config.mask_margin),
            within_none=within_none,
            thresholds=config.thresholds,
            exec_time_ms=exec_ms,
            fit_time_ms=fit_ms,
        )
        rows.append(ScoreRow(image_name, replica, card))
    return rows


def _entry_tasks(entry: DatasetEntry, reference: np.ndarray, index: int, config: RunConfig, lock: threading.Lock):
    gt = load_ground_truth(entry)
    gt8 = quantize_12_to_8(gt) if gt.bit_depth == 12 else gt
    regions = entry.patch_regions
    if entry.ground_truth_path is not None:
        # pre-augmented replica: the entry image is the capture
        capture = read_image(entry.image_path)
        capture = quantize_12_to_8(capture) if capture.bit_depth == 12 else capture
        replica = entry.replica if entry.replica is not None else 0
        yield lambda: _score_replica(entry.name, replica, capture, gt8, gt, regions, reference, config, lock)
        return
    for r in range(config.augment.replicas):
        params = draw_params(config.augment, r, stream=index)
        yield (lambda p=params, r=r: _score_replica(
            entry.name, r, apply_augment(p, gt8), gt8, gt, regions, reference, config, lock))


def run_benchmark(manifest: DatasetManifest, config: RunConfig, workers: int | None = None) -> RunReport:
    """Augment, fit, apply and score every (image, replica, method) combination.

    Singular fits become failed, ill-conditioned ScoreCards; they never abort
    the run.  Failure flags compare against the NONE within-distance of the
    same replica, computed whether or not NONE is among the methods.
    """
    workers = workers or _worker_count()
    lock = threading.Lock()
    tasks = []
    for i, entry in enumerate(manifest.entries):
        tasks.extend(_entry_tasks(entry, manifest.reference(entry), i, config, lock))
    log.info("benchmark: %d tasks x %d methods on %d worker(s)", len(tasks), len(config.methods), workers)
    if workers == 1:
        results = [t() for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda t: t(), tasks))
    rows = tuple(row for batch in results for row in batch)
    return RunReport(rows, summarize(rows, [m.value for m in config.methods]))


# -- aggregation -------------------------------------------------------------------

def _stats(values: list[float]) -> tuple[float, float, float]:
    if not values:
        nan = float("nan")
        return nan, nan, nan
    return math.fsum(values) / len(values), statistics.pstdev(values), statistics.median(values)


def _mean(values: list[float]) -> float:
    return math.fsum(values) / len(values) if values else float("nan")


def summarize(rows: Iterable[ScoreRow], methods: Sequence[str] | None = None) -> tuple[MethodSummary, ...]:
    """Per-method aggregates; distances use only non-failed corrections, counts use all."""
    rows = list(rows)
    if methods is None:
        methods = list(dict.fromkeys(MethodId(r.card.method).value for r in rows))
    out = []
    for name in methods:
        cards = [r.card for r in rows if MethodId(r.card.method).value == name]
        kept = [c for c in cards if not c.failed]
        w_mean, w_std, w_med = _stats([c.within_mean for c in kept])
        i_mean, i_std, i_med = _stats([c.inter_mean for c in kept])
        out.append(MethodSummary(
            method=name,
            corrections=len(cards),
            failed=sum(c.failed for c in cards),
            ill_conditioned=sum(c.ill_conditioned for c in cards),
            singular=sum(c.singular for c in cards),
            within_mean=w_mean,
            within_std=w_std,
            within_median=w_med,
            within_mean_pct=normalize_distance(w_mean),
            inter_mean=i_mean,
            inter_std=i_std,
            inter_median=i_med,
            inter_mean_pct=normalize_distance(i_mean),
            exec_time_mean_ms=_mean([c.exec_time_ms for c in cards if not c.singular]),
            fit_time_mean_ms=_mean([c.fit_time_ms for c in cards]),
        ))
    return tuple(out)


# -- reports ----------------------------------------------------------------------

SCORE_COLUMNS = [
    "image", "replica", "method",
    "within_mean", "within_pct", "pairwise_min", "inter_mean", "inter_pct",
    "failed", "ill_conditioned", "singular",
    "fit_time_ms", "exec_time_ms",
]
TIMING_COLUMNS = ("fit_time_ms", "exec_time_ms")
SUMMARY_COLUMNS = list(MethodSummary.__dataclass_fields__)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_scores(rows: Iterable[ScoreRow], path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(SCORE_COLUMNS)
        for row in rows:
            d = row.card.as_dict()
            d["image"], d["replica"] = row.image, row.replica
            w.writerow([_fmt(d[c]) for c in SCORE_COLUMNS])


def read_scores(path: str | Path) -> list[ScoreRow]:
    path = Path(path)
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(SCORE_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise ConfigError(f"{path}: missing columns {sorted(missing)}")
        for rec in reader:
            card = ScoreCard(
                method=MethodId.parse(rec["method"]),
                within_mean=float(rec["within_mean"]),
                within_pct=float(rec["within_pct"]),
                pairwise_min=float(rec["pairwise_min"]),
                inter_mean=float(rec["inter_mean"]),
                inter_pct=float(rec["inter_pct"]),
                failed=rec["failed"] == "true",
                ill_conditioned=rec["ill_conditioned"] == "true",
                singular=rec["singular"] == "true",
                exec_time_ms=float(rec["exec_time_ms"]),
                fit_time_ms=float(rec["fit_time_ms"]),
            )
            rows.append(ScoreRow(rec["image"], int(rec["replica"]), card))
    return rows


def _json_float(v):
    return None if isinstance(v, float) and math.isnan(v) else v


def write_summary(summary: Sequence[MethodSummary], out_dir: Path) -> None:
    with open(out_dir / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(SUMMARY_COLUMNS)
        for s in summary:
            w.writerow([_fmt(getattr(s, c)) for c in SUMMARY_COLUMNS])
    doc = {
        "schema": "chromafix.summary/1",
        "methods": [{c: _json_float(getattr(s, c)) for c in SUMMARY_COLUMNS} for s in summary],
    }
    (out_dir / "summary.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def emit_report(report: RunReport, output_dir: str | Path) -> list[Path]:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_scores(report.rows, out / "scores.csv")
    write_summary(report.summary, out)
    return [out / "scores.csv", out / "summary.csv", out / "summary.json"]
