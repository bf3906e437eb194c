"""Chart-based color correction and a benchmark harness for comparing methods."""

from .color import (
    ChartCorrespondence,
    ImageBuffer,
    PatchRegion,
    clamp_to_rgb8,
    extract_patch_color,
    normalize_distance,
    quantize_12_to_8,
    read_image,
    rgb_distance,
    write_image,
)
from .models import (
    CorrectionModel,
    LinearModel,
    MethodId,
    RbfKind,
    SingularFitError,
    TpsConfig,
    TpsModel,
    apply_color,
    apply_image,
    build_features,
    fit_linear,
    fit_tps,
    fit_white_balance,
    make_method,
)

__version__ = "0.1.0"
