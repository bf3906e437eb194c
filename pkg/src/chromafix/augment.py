"""Seeded color augmentation (contrast, gamma, channel cross-talk) and chart degradation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .color import ChartCorrespondence, ImageBuffer, clamp_to_rgb8


@dataclass(frozen=True)
class AugmentSpec:
    seed: int = 0
    replicas: int = 5
    linear_contrast_range: tuple[float, float] = (0.6, 1.4)
    gamma_range: tuple[float, float] = (0.5, 2.0)
    crosstalk_strength: float = 0.15

    def __post_init__(self) -> None:
        object.__setattr__(self, "linear_contrast_range", tuple(float(v) for v in self.linear_contrast_range))
        object.__setattr__(self, "gamma_range", tuple(float(v) for v in self.gamma_range))
        lo, hi = self.linear_contrast_range
        if not lo < hi:
            raise ValueError(f"linear_contrast_range must satisfy lo < hi, got {self.linear_contrast_range}")
        lo, hi = self.gamma_range
        if not 0 < lo < hi:
            raise ValueError(f"gamma_range must satisfy 0 < lo < hi, got {self.gamma_range}")
        if not 0 <= self.crosstalk_strength <= 0.5:
            raise ValueError(f"crosstalk_strength must be in [0, 0.5], got {self.crosstalk_strength}")
        if self.replicas < 1:
            raise ValueError(f"replicas must be >= 1, got {self.replicas}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a non-negative 64-bit integer")


@dataclass(frozen=True)
class AugmentParams:
    alpha: float
    gamma: float
    mix: np.ndarray  # (3, 3), rows sum to 1

    @classmethod
    def identity(cls) -> "AugmentParams":
        return cls(1.0, 1.0, np.eye(3))

    def __eq__(self, other) -> bool:
        if not isinstance(other, AugmentParams):
            return NotImplemented
        return self.alpha == other.alpha and self.gamma == other.gamma and np.array_equal(self.mix, other.mix)

    def __hash__(self) -> int:
        return hash((self.alpha, self.gamma, self.mix.tobytes()))


def draw_params(spec: AugmentSpec, replica_index: int, stream: int = 0) -> AugmentParams:
    """Parameters of one replica.

    A Philox generator keyed by ``spec.seed`` is positioned at a counter
    block derived from ``(stream, replica_index)``, so every replica is
    reproducible on its own and independent of generation order.  The
    harness uses ``stream`` to give each dataset image its own replicas.
    """
    if not 0 <= replica_index < spec.replicas:
        raise IndexError(f"replica index {replica_index} outside [0, {spec.replicas})")
    bitgen = np.random.Philox(key=spec.seed, counter=[0, 0, stream, replica_index])
    rng = np.random.Generator(bitgen)
    alpha = rng.uniform(*spec.linear_contrast_range)
    gamma = rng.uniform(*spec.gamma_range)
    u = rng.uniform(0.0, 1.0, size=(3, 3)) * spec.crosstalk_strength
    np.fill_diagonal(u, 0.0)
    mix = np.eye(3) + u
    mix /= mix.sum(axis=1, keepdims=True)
    return AugmentParams(float(alpha), float(gamma), mix)


def _tone_curve(params: AugmentParams) -> np.ndarray:
    v = np.arange(256, dtype=np.float64)
    v = params.alpha * (v - 128.0) + 128.0
    v = np.clip(v, 0.0, 255.0)
    return 255.0 * (v / 255.0) ** params.gamma


def augment_colors(params: AugmentParams, colors) -> np.ndarray:
    """The augmentation on real-valued colors, without the final rounding."""
    v = np.asarray(colors, dtype=np.float64)
    v = np.clip(params.alpha * (v - 128.0) + 128.0, 0.0, 255.0)
    v = 255.0 * (v / 255.0) ** params.gamma
    return v @ params.mix.T


def apply_augment(params: AugmentParams, img: ImageBuffer) -> ImageBuffer:
    """Contrast, then gamma, then cross-talk, then round and clamp to 8 bits."""
    if img.bit_depth != 8:
        raise ValueError("apply_augment works on 8-bit images")
    toned = _tone_curve(params)[img.pixels]
    return ImageBuffer(clamp_to_rgb8(toned @ params.mix.T), 8)


def degrade_chart(
    corr: ChartCorrespondence,
    collapse_pairs: int = 1,
    noise_sigma: float = 0.0,
    seed: int = 0,
) -> ChartCorrespondence:
    """Copy of ``corr`` with noisy and/or duplicated source colors.

    Noise is added (and clamped to [0, 255]) first; then ``collapse_pairs``
    disjoint random pairs get identical source colors, so collapsed pairs
    stay at distance zero.  Targets are untouched.
    """
    n = corr.n
    if collapse_pairs < 0 or 2 * collapse_pairs > n:
        raise ValueError(f"cannot collapse {collapse_pairs} pairs among {n} colors")
    rng = np.random.default_rng(seed)
    src = corr.source.copy()
    if noise_sigma > 0:
        src = np.clip(src + rng.normal(0.0, noise_sigma, size=src.shape), 0.0, 255.0)
    if collapse_pairs:
        idx = rng.permutation(n)[: 2 * collapse_pairs].reshape(-1, 2)
        src[idx[:, 1]] = src[idx[:, 0]]
    return ChartCorrespondence(src, corr.target.copy())
