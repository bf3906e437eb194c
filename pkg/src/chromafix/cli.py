"""Command line entry point: ``chromafix {augment,correct,benchmark,report,synth}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .augment import apply_augment, draw_params
from .bench import (
    ConfigError,
    ManifestError,
    RunConfig,
    emit_report,
    load_config,
    load_ground_truth,
    load_manifest,
    read_scores,
    run_benchmark,
    summarize,
    write_summary,
)
from .color import ChartCorrespondence, ColorError, extract_chart, quantize_12_to_8, read_image, write_image
from .models import MethodId, SingularFitError, TpsConfig, apply_image, make_method, model_to_json
from .synthetic import MANIFEST_SCHEMA, write_synthetic_dataset

log = logging.getLogger("chromafix")

EXIT_OK, EXIT_ERROR, EXIT_MANIFEST = 0, 1, 2


def _as_8bit(img):
    return quantize_12_to_8(img) if img.bit_depth == 12 else img


def cmd_augment(args) -> int:
    manifest = load_manifest(args.manifest)
    config = load_config(args.config)
    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, entry in enumerate(manifest.entries):
        gt8 = _as_8bit(load_ground_truth(entry))
        gt_rel = os.path.relpath(entry.ground_truth_path or entry.image_path, out)
        for r in range(config.augment.replicas):
            img = apply_augment(draw_params(config.augment, r, stream=i), gt8)
            rel = f"images/{entry.name}_r{r:03d}.png"
            write_image(out / rel, img)
            entries.append({
                "image": rel,
                "bit_depth": 8,
                "chart": entry.reference_chart_id,
                "patches": [[p.x, p.y, p.w, p.h] for p in entry.patch_regions],
                "ground_truth": gt_rel,
                "replica": r,
            })
    doc = {
        "schema": MANIFEST_SCHEMA,
        "reference_charts": {k: v.tolist() for k, v in manifest.reference_charts.items()},
        "entries": entries,
    }
    (out / "manifest.json").write_text(json.dumps(doc, indent=1) + "\n")
    print(f"wrote {len(entries)} replicas to {out}")
    return EXIT_OK


def cmd_correct(args) -> int:
    manifest = load_manifest(args.manifest)
    tps = load_config(args.config).tps if args.config else TpsConfig()
    image_path = Path(args.image).resolve()
    entry = next((e for e in manifest.entries if e.image_path.resolve() == image_path), manifest.entries[0])
    img = _as_8bit(read_image(image_path))
    corr = ChartCorrespondence(extract_chart(img, entry.patch_regions), manifest.reference(entry))
    try:
        model = make_method(MethodId.parse(args.method), corr, tps)
    except SingularFitError as exc:
        print(f"error: {args.method} fit failed: {exc}", file=sys.stderr)
        return EXIT_ERROR
    write_image(args.out, apply_image(model, img))
    if args.model_json:
        Path(args.model_json).write_text(model_to_json(model) + "\n")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    manifest = load_manifest(args.manifest)
    config: RunConfig = load_config(args.config)
    out = Path(args.out) if args.out else config.output_dir
    if out is None:
        raise ConfigError("no output directory: pass --out or set output_dir in the config")
    report = run_benchmark(manifest, config)
    for path in emit_report(report, out):
        print(f"wrote {path}")
    return EXIT_OK


def cmd_report(args) -> int:
    rows = read_scores(args.scores)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_summary(summarize(rows), out)
    print(f"wrote {out / 'summary.csv'} and {out / 'summary.json'}")
    return EXIT_OK


def cmd_synth(args) -> int:
    path = write_synthetic_dataset(args.out, n_images=args.images, seed=args.seed,
                                   width=args.width, height=args.height, replicas=args.replicas)
    print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chromafix", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("augment", help="write augmented replicas and an extended manifest")
    a.add_argument("--manifest", required=True)
    a.add_argument("--config", required=True)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_augment)

    c = sub.add_parser("correct", help="color-correct a single image")
    c.add_argument("--manifest", required=True)
    c.add_argument("--method", required=True)
    c.add_argument("--image", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--config", help="run config supplying TPS smoothing and white/black patches")
    c.add_argument("--model-json", help="also write the fitted model as JSON")
    c.set_defaults(func=cmd_correct)

    b = sub.add_parser("benchmark", help="run the full pipeline and write CSV/JSON reports")
    b.add_argument("--manifest", required=True)
    b.add_argument("--config", required=True)
    b.add_argument("--out")
    b.set_defaults(func=cmd_benchmark)

    r = sub.add_parser("report", help="recompute summaries from a scores.csv")
    r.add_argument("--scores", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)

    s = sub.add_parser("synth", help="generate the synthetic 12-bit dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--images", type=int, default=20)
    s.add_argument("--replicas", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--width", type=int, default=96)
    s.add_argument("--height", type=int, default=72)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ManifestError as exc:
        print(f"manifest error: {exc}", file=sys.stderr)
        return EXIT_MANIFEST
    except (ConfigError, ColorError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
