"""Bundled reference chart and a small synthetic 12-bit dataset generator.

The synthetic scenes are smooth color gradients with a few flat shapes and
mild sensor noise; each holds a 6x4 Macbeth-style chart with flat patches.
The reference colors written to the manifest are the exact 12-bit patch
values expressed in 8-bit scale.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .color import ImageBuffer, PatchRegion, write_image

# Macbeth ColorChecker Classic, sRGB (D65) 8-bit, row-major 6x4 (BabelColor averages)
MACBETH_SRGB8 = np.array([
    [115, 82, 68], [194, 150, 130], [98, 122, 157], [87, 108, 67], [133, 128, 177], [103, 189, 170],
    [214, 126, 44], [80, 91, 166], [193, 90, 99], [94, 60, 108], [157, 188, 64], [224, 163, 46],
    [56, 61, 150], [70, 148, 73], [175, 54, 60], [231, 199, 31], [187, 86, 149], [8, 133, 161],
    [243, 243, 242], [200, 200, 200], [160, 160, 160], [122, 122, 121], [85, 85, 85], [52, 52, 52],
], dtype=np.float64)

MANIFEST_SCHEMA = "chromafix.manifest/1"
CONFIG_SCHEMA = "chromafix.config/1"


def chart_layout(x0: int, y0: int, patch: int = 6, gap: int = 2, cols: int = 6, rows: int = 4) -> list[PatchRegion]:
    regions = []
    for row in range(rows):
        for col in range(cols):
            regions.append(PatchRegion(row * cols + col + 1, x0 + col * (patch + gap), y0 + row * (patch + gap), patch, patch))
    return regions


def synthetic_scene(
    rng: np.random.Generator,
    width: int = 96,
    height: int = 72,
    patch: int = 6,
    gap: int = 2,
) -> tuple[ImageBuffer, list[PatchRegion], np.ndarray]:
    """One 12-bit scene with an embedded chart.

    Returns the image, the chart regions and the reference colors (8-bit scale).
    """
    chart_w = 6 * patch + 5 * gap
    chart_h = 4 * patch + 3 * gap
    if width < chart_w or height < chart_h:
        raise ValueError(f"image {width}x{height} is too small for a {chart_w}x{chart_h} chart")

    corners = rng.uniform(300, 3800, size=(2, 2, 3))
    ty = np.linspace(0.0, 1.0, height)[:, None, None]
    tx = np.linspace(0.0, 1.0, width)[None, :, None]
    top = corners[0, 0] * (1 - tx) + corners[0, 1] * tx
    bottom = corners[1, 0] * (1 - tx) + corners[1, 1] * tx
    scene = top * (1 - ty) + bottom * ty

    yy, xx = np.mgrid[0:height, 0:width]
    for _ in range(rng.integers(3, 7)):
        cx, cy = rng.uniform(0, width), rng.uniform(0, height)
        rx, ry = rng.uniform(4, width / 3), rng.uniform(4, height / 3)
        inside = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
        scene[inside] = rng.uniform(100, 4000, size=3)
    scene += rng.normal(0.0, 12.0, size=scene.shape)

    # per-scene illuminant tint on the chart, flat patches
    tint = rng.uniform(0.85, 1.0, size=3)
    chart12 = np.floor(np.clip(MACBETH_SRGB8 * 16.0 * tint + rng.uniform(0, 16, size=(24, 3)), 0, 4095))
    x0 = int(rng.integers(0, width - chart_w + 1))
    y0 = int(rng.integers(0, height - chart_h + 1))
    regions = chart_layout(x0, y0, patch, gap)
    for region, color in zip(regions, chart12):
        scene[region.y:region.y + region.h, region.x:region.x + region.w] = color

    pixels = np.clip(np.rint(scene), 0, 4095).astype(np.uint16)
    return ImageBuffer(pixels, 12), regions, chart12 / 16.0


def write_synthetic_dataset(
    out_dir: str | Path,
    n_images: int = 20,
    seed: int = 0,
    width: int = 96,
    height: int = 72,
    replicas: int = 5,
    methods: list[str] | None = None,
) -> Path:
    """Write PNGs, ``manifest.json`` and a default ``config.json``; returns the manifest path."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries, charts = [], {}
    for i in range(n_images):
        img, regions, reference = synthetic_scene(rng, width, height)
        name = f"scene{i:03d}"
        write_image(out / "images" / f"{name}.png", img)
        charts[name] = reference.tolist()
        entries.append({
            "image": f"images/{name}.png",
            "bit_depth": 12,
            "chart": name,
            "patches": [[r.x, r.y, r.w, r.h] for r in regions],
        })
    manifest = {"schema": MANIFEST_SCHEMA, "reference_charts": charts, "entries": entries}
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1) + "\n")
    config = {
        "schema": CONFIG_SCHEMA,
        "methods": methods or ["PERF", "NONE", "AFF3", "VAN3", "TPS0", "TPS1", "TPS2", "TPS3"],
        "augment": {"seed": seed, "replicas": replicas},
        "timing_repeats": 1,
    }
    (out / "config.json").write_text(json.dumps(config, indent=1) + "\n")
    return path
