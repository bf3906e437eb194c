"""Fitting and applying chart-based color corrections.

Twenty-two method ids are supported: the PERF/NONE baselines, four affine
variants (AFF0-3), Vandermonde polynomials (VAN0-3), Cheung cross-term
polynomials (CHE0-3), Finlayson polynomial and root-polynomial expansions
(FIN0-3) and 3D thin-plate splines (TPS0-3).

Linear families are ``out = coefficients @ features(c)`` with one row of
coefficients per output channel.  Thin-plate splines add radial terms
centred on the chart source colors to an affine part.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Union

import numpy as np

from .color import ChartCorrespondence, ImageBuffer, clamp_to_rgb8

#: Fits whose (equilibrated) condition number exceeds this are rejected.
SINGULAR_CONDITION = 1e12

_APPLY_CHUNK = 1 << 16


class SingularFitError(ValueError):
    """The fitting system is singular or numerically rank-deficient."""

    def __init__(self, message: str, condition: float = float("inf")):
        super().__init__(f"{message} (condition estimate {condition:.3e})")
        self.condition = condition


class MethodId(str, Enum):
    PERF = "PERF"
    NONE = "NONE"
    AFF0 = "AFF0"
    AFF1 = "AFF1"
    AFF2 = "AFF2"
    AFF3 = "AFF3"
    VAN0 = "VAN0"
    VAN1 = "VAN1"
    VAN2 = "VAN2"
    VAN3 = "VAN3"
    CHE0 = "CHE0"
    CHE1 = "CHE1"
    CHE2 = "CHE2"
    CHE3 = "CHE3"
    FIN0 = "FIN0"
    FIN1 = "FIN1"
    FIN2 = "FIN2"
    FIN3 = "FIN3"
    TPS0 = "TPS0"
    TPS1 = "TPS1"
    TPS2 = "TPS2"
    TPS3 = "TPS3"

    @property
    def family(self) -> str:
        return "BASE" if self in (MethodId.PERF, MethodId.NONE) else self.value[:3]

    @classmethod
    def parse(cls, name: str) -> "MethodId":
        try:
            return cls(name.strip().upper())
        except ValueError:
            raise ValueError(f"unknown method {name!r}; expected one of {', '.join(m.value for m in cls)}") from None


class RbfKind(str, Enum):
    RBF2D = "RBF2D"
    RBF3D = "RBF3D"


@dataclass(frozen=True)
class TpsConfig:
    lambda_small: float = 1.0
    lambda_large: float = 10.0
    white_index: int = 19
    black_index: int = 24

    def __post_init__(self) -> None:
        if self.lambda_small < 0 or self.lambda_large < 0:
            raise ValueError("smoothing factors must be >= 0")
        if self.white_index < 1 or self.black_index < 1:
            raise ValueError("white/black patch indices are 1-based")


# -- radial basis functions ----------------------------------------------------

def rbf_2d(dist):
    """``d**2 * ln(d)``, taken as 0 at ``d == 0``."""
    d = np.asarray(dist, dtype=np.float64)
    safe = np.where(d > 0, d, 1.0)
    out = np.where(d > 0, d * d * np.log(safe), 0.0)
    return float(out) if out.ndim == 0 else out


def rbf_3d(dist):
    d = np.asarray(dist, dtype=np.float64)
    return float(d) if d.ndim == 0 else d.copy()


_RBF: dict[RbfKind, Callable] = {RbfKind.RBF2D: rbf_2d, RbfKind.RBF3D: rbf_3d}

# d^2 ln d is conditionally positive definite (order 2) while d is
# conditionally negative definite (order 1).  The smoothing term is added
# along the kernel's definite direction so it always moves the fit away
# from singularity and toward the affine limit; with d alone this is the
# same as using the 3D Green's function -d with +lambda on the diagonal.
_SMOOTHING_SIGN = {RbfKind.RBF2D: 1.0, RbfKind.RBF3D: -1.0}


# -- feature expansions --------------------------------------------------------

def _van(d: int):
    def f(r, g, b):
        cols = [np.ones_like(r)]
        for p in range(1, d + 1):
            cols += [r**p, g**p, b**p]
        return cols
    return f


def _fin_poly2(r, g, b):
    return [r, g, b, r * r, g * g, b * b, r * g, r * b, g * b]


def _fin_poly3(r, g, b):
    return _fin_poly2(r, g, b) + [
        r**3, g**3, b**3,
        r * r * g, r * r * b, g * g * r, g * g * b, b * b * r, b * b * g,
        r * g * b,
    ]


def _fin_root2(r, g, b):
    r, g, b = (np.maximum(x, 0.0) for x in (r, g, b))
    return [r, g, b, np.sqrt(r * g), np.sqrt(r * b), np.sqrt(g * b)]


def _fin_root3(r, g, b):
    r, g, b = (np.maximum(x, 0.0) for x in (r, g, b))
    return _fin_root2(r, g, b) + [
        np.cbrt(r * r * g), np.cbrt(r * r * b), np.cbrt(g * g * r), np.cbrt(g * g * b),
        np.cbrt(b * b * r), np.cbrt(b * b * g), np.cbrt(r * g * b),
    ]


_FEATURES: dict[str, Callable] = {
    # AFF0/AFF1 are fitted in closed form but stored in the AFF3 layout
    "AFF0": lambda r, g, b: [np.ones_like(r), r, g, b],
    "AFF1": lambda r, g, b: [np.ones_like(r), r, g, b],
    "AFF2": lambda r, g, b: [r, g, b],
    "AFF3": lambda r, g, b: [np.ones_like(r), r, g, b],
    "VAN0": _van(2),
    "VAN1": _van(3),
    "VAN2": _van(4),
    "VAN3": _van(5),
    "CHE0": lambda r, g, b: [np.ones_like(r), r, g, b, r * g * b],
    "CHE1": lambda r, g, b: [np.ones_like(r), r, g, b, r * g, r * b, g * b],
    "CHE2": lambda r, g, b: [np.ones_like(r), r, g, b, r * g, r * b, g * b, r * g * b],
    "CHE3": lambda r, g, b: [np.ones_like(r), r, g, b, r * g, r * b, g * b, r * r, g * g, b * b],
    "FIN0": _fin_poly2,
    "FIN1": _fin_poly3,
    "FIN2": _fin_root2,
    "FIN3": _fin_root3,
}

FEATURE_KINDS = tuple(_FEATURES)


def feature_count(kind: str) -> int:
    return build_features(kind, np.zeros(3)).shape[-1]


def build_features(kind: str, c) -> np.ndarray:
    """Feature expansion of colors ``c`` (shape ``(..., 3)``) -> ``(..., K)``."""
    try:
        f = _FEATURES[str(getattr(kind, "value", kind))]
    except KeyError:
        raise ValueError(f"unknown feature kind {kind!r}") from None
    c = np.asarray(c, dtype=np.float64)
    return np.stack(f(c[..., 0], c[..., 1], c[..., 2]), axis=-1)


# -- models --------------------------------------------------------------------

@dataclass(frozen=True)
class LinearModel:
    feature_kind: str
    coefficients: np.ndarray  # (3, K)

    def __post_init__(self) -> None:
        coef = np.ascontiguousarray(self.coefficients, dtype=np.float64)
        k = feature_count(self.feature_kind)
        if coef.shape != (3, k):
            raise ValueError(f"{self.feature_kind} needs 3x{k} coefficients, got {coef.shape}")
        if not np.isfinite(coef).all():
            raise ValueError("non-finite coefficients")
        object.__setattr__(self, "coefficients", coef)

    def __call__(self, c) -> np.ndarray:
        return build_features(self.feature_kind, c) @ self.coefficients.T


@dataclass(frozen=True)
class TpsModel:
    centers: np.ndarray  # (N, 3)
    weights: np.ndarray  # (3, N)
    affine: np.ndarray  # (3, 4): columns t, a_r, a_g, a_b
    rbf_kind: RbfKind
    lam: float = 0.0

    def __post_init__(self) -> None:
        # contiguous storage keeps BLAS summation order, and so results, reproducible
        centers = np.ascontiguousarray(self.centers, dtype=np.float64)
        weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        affine = np.ascontiguousarray(self.affine, dtype=np.float64)
        n = centers.shape[0]
        if centers.shape != (n, 3) or weights.shape != (3, n) or affine.shape != (3, 4):
            raise ValueError(
                f"inconsistent TPS shapes: centers {centers.shape}, weights {weights.shape}, affine {affine.shape}"
            )
        if not (np.isfinite(centers).all() and np.isfinite(weights).all() and np.isfinite(affine).all()):
            raise ValueError("non-finite TPS parameters")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "affine", affine)
        object.__setattr__(self, "rbf_kind", RbfKind(self.rbf_kind))

    def __call__(self, c) -> np.ndarray:
        c = np.asarray(c, dtype=np.float64)
        dist = np.linalg.norm(c[..., None, :] - self.centers, axis=-1)
        radial = _RBF[self.rbf_kind](dist) @ self.weights.T
        return self.affine[:, 0] + c @ self.affine[:, 1:].T + radial


Body = Union[None, LinearModel, TpsModel]


@dataclass(frozen=True)
class CorrectionModel:
    """A fitted correction.  ``body`` is None for the identity baselines."""

    method: MethodId
    body: Body = field(default=None)

    def __post_init__(self) -> None:
        method = MethodId(self.method)
        object.__setattr__(self, "method", method)
        expected = {"BASE": type(None), "TPS": TpsModel}.get(method.family, LinearModel)
        if not isinstance(self.body, expected):
            raise ValueError(f"{method.value} needs a {expected.__name__} body, got {type(self.body).__name__}")

    @property
    def is_identity(self) -> bool:
        return self.body is None


# -- fitting -------------------------------------------------------------------

def fit_white_balance(corr: ChartCorrespondence, white_index: int, black_index: int | None = None) -> LinearModel:
    """Per-channel white balance (AFF0) or white balance with black subtraction (AFF1).

    Indices are 1-based patch numbers.
    """
    n = corr.n
    for idx in (white_index, black_index):
        if idx is not None and not 1 <= idx <= n:
            raise IndexError(f"patch index {idx} outside 1..{n}")
    ws, wt = corr.source[white_index - 1], corr.target[white_index - 1]
    if black_index is None:
        if (ws <= 0).any():
            raise SingularFitError(f"white patch source {ws.tolist()} has a non-positive channel", float("inf"))
        gain = wt / ws
        bias = np.zeros(3)
        kind = "AFF0"
    else:
        bs, bt = corr.source[black_index - 1], corr.target[black_index - 1]
        span = ws - bs
        if (span <= 0).any():
            raise SingularFitError(f"white-black source span {span.tolist()} has a non-positive channel", float("inf"))
        gain = (wt - bt) / span
        bias = bt - gain * bs
        kind = "AFF1"
    coef = np.zeros((3, 4))
    coef[:, 0] = bias
    coef[:, 1:] = np.diag(gain)
    return LinearModel(kind, coef)


def fit_linear(kind: str, corr: ChartCorrespondence) -> LinearModel:
    """Least-squares fit of a linear-in-features correction.

    Columns are scaled to unit norm before an SVD-based solve; the condition
    number of the scaled matrix decides singularity.
    """
    kind = str(getattr(kind, "value", kind))
    feats = build_features(kind, corr.source)
    n, k = feats.shape
    if n < k:
        raise SingularFitError(f"{kind} needs at least {k} reference colors, got {n}", float("inf"))
    scale = np.linalg.norm(feats, axis=0)
    if (scale == 0).any():
        raise SingularFitError(f"{kind} feature matrix has an all-zero column", float("inf"))
    scaled = feats / scale
    sol, _, rank, sv = np.linalg.lstsq(scaled, corr.target, rcond=None)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")
    if rank < k or cond > SINGULAR_CONDITION:
        raise SingularFitError(f"{kind} feature matrix is rank-deficient", cond)
    return LinearModel(kind, (sol / scale[:, None]).T)


def _equilibrate(a: np.ndarray, sweeps: int = 20) -> np.ndarray:
    """Symmetric Ruiz scaling vector ``d`` so that ``diag(d) a diag(d)`` has unit max-norm rows."""
    d = np.ones(a.shape[0])
    b = a.copy()
    for _ in range(sweeps):
        m = np.abs(b).max(axis=1)
        m[m == 0] = 1.0
        s = 1.0 / np.sqrt(m)
        b *= s[:, None] * s[None, :]
        d *= s
    return d


def tps_system(centers: np.ndarray, rbf_kind: RbfKind, lam: float) -> np.ndarray:
    """The ``(N+4) x (N+4)`` block matrix ``[[K + s*lam*I, P], [P^T, 0]]``."""
    rbf_kind = RbfKind(rbf_kind)
    n = centers.shape[0]
    dist = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=-1)
    a = np.zeros((n + 4, n + 4))
    a[:n, :n] = _RBF[rbf_kind](dist) + _SMOOTHING_SIGN[rbf_kind] * lam * np.eye(n)
    a[:n, n] = 1.0
    a[:n, n + 1:] = centers
    a[n:, :n] = a[:n, n:].T
    return a


def fit_tps(corr: ChartCorrespondence, rbf_kind: RbfKind = RbfKind.RBF3D, lam: float = 0.0) -> TpsModel:
    """Fit a (smoothed) thin-plate spline through the chart correspondence.

    Raises SingularFitError for duplicated sources at ``lam == 0``, coplanar
    sources, or fewer than four references.
    """
    if lam < 0:
        raise ValueError(f"smoothing factor must be >= 0, got {lam}")
    n = corr.n
    if n < 4:
        raise SingularFitError(f"thin-plate spline needs at least 4 reference colors, got {n}", float("inf"))
    a = tps_system(corr.source, rbf_kind, lam)
    d = _equilibrate(a)
    scaled = a * d[:, None] * d[None, :]
    cond = float(np.linalg.cond(scaled))
    if not np.isfinite(cond) or cond > SINGULAR_CONDITION:
        raise SingularFitError("thin-plate spline system is singular", cond)
    rhs = np.zeros((n + 4, 3))
    rhs[:n] = corr.target
    x = d[:, None] * np.linalg.solve(scaled, d[:, None] * rhs)
    return TpsModel(corr.source.copy(), x[:n].T, x[n:].T, RbfKind(rbf_kind), float(lam))


# -- application ---------------------------------------------------------------

def apply_color(model: CorrectionModel, c) -> np.ndarray:
    """Apply ``model`` to colors ``(..., 3)``; the result is unclamped."""
    c = np.asarray(c, dtype=np.float64)
    if model.body is None:
        return c.copy()
    return model.body(c)


def apply_image(model: CorrectionModel, img: ImageBuffer) -> ImageBuffer:
    if img.bit_depth != 8:
        raise ValueError("apply_image works on 8-bit images")
    if model.body is None:
        return ImageBuffer(img.pixels.copy(), 8)
    flat = img.pixels.reshape(-1, 3)
    out = np.empty_like(flat)
    for start in range(0, flat.shape[0], _APPLY_CHUNK):
        block = flat[start:start + _APPLY_CHUNK].astype(np.float64)
        out[start:start + _APPLY_CHUNK] = clamp_to_rgb8(model.body(block))
    return ImageBuffer(out.reshape(img.pixels.shape), 8)


_TPS_VARIANTS = {
    MethodId.TPS0: (RbfKind.RBF2D, None),
    MethodId.TPS1: (RbfKind.RBF3D, None),
    MethodId.TPS2: (RbfKind.RBF3D, "lambda_small"),
    MethodId.TPS3: (RbfKind.RBF3D, "lambda_large"),
}


def make_method(method: MethodId | str, corr: ChartCorrespondence, config: TpsConfig | None = None) -> CorrectionModel:
    method = MethodId.parse(method) if isinstance(method, str) else method
    config = config or TpsConfig()
    if method.family == "BASE":
        return CorrectionModel(method)
    if method is MethodId.AFF0:
        return CorrectionModel(method, fit_white_balance(corr, config.white_index))
    if method is MethodId.AFF1:
        return CorrectionModel(method, fit_white_balance(corr, config.white_index, config.black_index))
    if method.family == "TPS":
        rbf_kind, attr = _TPS_VARIANTS[method]
        lam = getattr(config, attr) if attr else 0.0
        return CorrectionModel(method, fit_tps(corr, rbf_kind, lam))
    return CorrectionModel(method, fit_linear(method.value, corr))


# -- serialization -------------------------------------------------------------

def model_to_dict(model: CorrectionModel) -> dict:
    doc: dict = {"method": model.method.value}
    body = model.body
    if isinstance(body, LinearModel):
        doc["feature_kind"] = body.feature_kind
        doc["coefficients"] = body.coefficients.tolist()
    elif isinstance(body, TpsModel):
        doc["rbf_kind"] = body.rbf_kind.value
        doc["lambda"] = body.lam
        doc["centers"] = body.centers.tolist()
        doc["weights"] = body.weights.tolist()
        doc["affine"] = body.affine.tolist()
    return doc


def model_from_dict(doc: dict) -> CorrectionModel:
    method = MethodId.parse(doc["method"])
    if method.family == "BASE":
        return CorrectionModel(method)
    if method.family == "TPS":
        body: Body = TpsModel(
            np.array(doc["centers"], dtype=np.float64),
            np.array(doc["weights"], dtype=np.float64),
            np.array(doc["affine"], dtype=np.float64),
            RbfKind(doc["rbf_kind"]),
            float(doc["lambda"]),
        )
    else:
        body = LinearModel(doc["feature_kind"], np.array(doc["coefficients"], dtype=np.float64))
    return CorrectionModel(method, body)


def model_to_json(model: CorrectionModel) -> str:
    # Python float repr is the shortest string that round-trips exactly
    return json.dumps(model_to_dict(model), indent=2)


def model_from_json(text: str) -> CorrectionModel:
    return model_from_dict(json.loads(text))
