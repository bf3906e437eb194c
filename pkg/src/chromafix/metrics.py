"""Quality metrics and failure criteria for corrected charts and images."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np

from .color import ImageBuffer, PatchRegion, chart_mask, normalize_distance, rgb_distance
from .models import MethodId

SQRT3 = math.sqrt(3.0)


@dataclass(frozen=True)
class FailureThresholds:
    pairwise_delta: float = SQRT3

    def __post_init__(self) -> None:
        if not self.pairwise_delta > 0:
            raise ValueError(f"pairwise_delta must be > 0, got {self.pairwise_delta}")


@dataclass(frozen=True)
class ScoreCard:
    """Metrics of one correction.

    Distances are in 8-bit RGB units; the ``*_pct`` fields are the same
    values as a percentage of the black-to-white distance.  A fit that
    raised SingularFitError is recorded with ``singular=True``, NaN
    distances, and both failure flags set.
    """

    method: MethodId
    within_mean: float
    within_pct: float
    pairwise_min: float
    inter_mean: float
    inter_pct: float
    failed: bool
    ill_conditioned: bool
    exec_time_ms: float
    fit_time_ms: float = 0.0
    singular: bool = False

    def __post_init__(self) -> None:
        if self.ill_conditioned and not self.failed:
            raise ValueError("an ill-conditioned correction must also be failed")
        if not self.singular:
            for name in ("within_mean", "pairwise_min", "inter_mean"):
                if not getattr(self, name) >= 0:
                    raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")

    def as_dict(self) -> dict:
        d = asdict(self)
        d["method"] = MethodId(self.method).value
        return d


def within_distance(corrected, reference) -> float:
    """Mean RGB distance between corrected chart colors and their references."""
    a = np.asarray(corrected, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"corrected {a.shape} and reference {b.shape} differ in shape")
    if a.ndim != 2 or a.shape[0] < 1:
        raise ValueError("need at least one (r, g, b) color")
    return float(np.mean(rgb_distance(a, b)))


def pairwise_min(colors) -> float:
    """Smallest RGB distance between any two distinct entries of ``colors``."""
    c = np.asarray(colors, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] < 2:
        raise ValueError("pairwise_min needs at least two colors")
    i, j = np.triu_indices(c.shape[0], k=1)
    return float(rgb_distance(c[i], c[j]).min())


def is_failed(within_corrected: float, within_none: float) -> bool:
    return within_corrected - within_none > 0


def is_ill_conditioned(failed: bool, pairwise: float, thresholds: FailureThresholds = FailureThresholds()) -> bool:
    # only failed corrections are screened for collapse
    return bool(failed) and pairwise < thresholds.pairwise_delta


def inter_distance(
    corrected_img: ImageBuffer,
    ground_truth_img: ImageBuffer,
    chart_regions: Sequence[PatchRegion],
    margin: int = 0,
) -> float:
    """Mean per-pixel RGB distance outside the chart area.

    Both images are compared in 8-bit scale, so a 12-bit ground truth is
    used at full precision (``v / 16``).
    """
    if corrected_img.pixels.shape != ground_truth_img.pixels.shape:
        raise ValueError(
            f"image dimensions differ: {corrected_img.pixels.shape[:2]} vs {ground_truth_img.pixels.shape[:2]}"
        )
    h, w = corrected_img.height, corrected_img.width
    for r in chart_regions:
        if not r.inside(w, h):
            raise ValueError(f"mask region {r.patch_index} lies outside the {w}x{h} image")
    keep = ~chart_mask(h, w, chart_regions, margin)
    if not keep.any():
        raise ValueError("chart mask covers the entire image")
    a = corrected_img.as_float8()[keep]
    b = ground_truth_img.as_float8()[keep]
    return float(np.mean(rgb_distance(a, b)))


def score(
    method: MethodId,
    within: float,
    pairwise: float,
    inter: float,
    within_none: float,
    thresholds: FailureThresholds = FailureThresholds(),
    exec_time_ms: float = 0.0,
    fit_time_ms: float = 0.0,
) -> ScoreCard:
    failed = is_failed(within, within_none)
    return ScoreCard(
        method=method,
        within_mean=within,
        within_pct=normalize_distance(within),
        pairwise_min=pairwise,
        inter_mean=inter,
        inter_pct=normalize_distance(inter),
        failed=failed,
        ill_conditioned=is_ill_conditioned(failed, pairwise, thresholds),
        exec_time_ms=exec_time_ms,
        fit_time_ms=fit_time_ms,
    )


def singular_score(method: MethodId, fit_time_ms: float = 0.0) -> ScoreCard:
    nan = float("nan")
    return ScoreCard(
        method=method,
        within_mean=nan,
        within_pct=nan,
        pairwise_min=nan,
        inter_mean=nan,
        inter_pct=nan,
        failed=True,
        ill_conditioned=True,
        exec_time_ms=nan,
        fit_time_ms=fit_time_ms,
        singular=True,
    )
