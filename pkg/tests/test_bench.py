import csv
import json
import statistics

import numpy as np
import pytest

from chromafix.augment import AugmentSpec
from chromafix.bench import (
    ConfigError,
    ManifestCountError,
    ManifestFormatError,
    ManifestMissingError,
    ManifestPathError,
    RunConfig,
    config_from_dict,
    emit_report,
    load_config,
    load_manifest,
    read_scores,
    run_benchmark,
    summarize,
    time_correction,
)
from chromafix.cli import main
from chromafix.color import ImageBuffer, read_image, write_image
from chromafix.metrics import SQRT3
from chromafix.models import CorrectionModel, MethodId, make_method, model_from_json
from chromafix.synthetic import synthetic_scene


def _config(methods, replicas=2, seed=3, **kw):
    return RunConfig(methods=tuple(MethodId.parse(m) for m in methods),
                     augment=AugmentSpec(seed=seed, replicas=replicas), timing_repeats=1, **kw)


def _write_manifest(tmp_path, doc):
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(doc))
    return path


def _one_image_doc(tmp_path, n_patches=24, image="img.png"):
    img, regions, ref = synthetic_scene(np.random.default_rng(0))
    write_image(tmp_path / "img.png", img)
    return {
        "schema": "chromafix.manifest/1",
        "reference_charts": {"m": ref.tolist()},
        "entries": [{"image": image, "bit_depth": 12, "chart": "m",
                     "patches": [[r.x, r.y, r.w, r.h] for r in regions[:n_patches]]}],
    }


# -- manifest ---------------------------------------------------------------------

def test_load_manifest(tmp_path):
    m = load_manifest(_write_manifest(tmp_path, _one_image_doc(tmp_path)))
    assert len(m.entries) == 1
    assert len(m.entries[0].patch_regions) == 24
    assert m.reference(m.entries[0]).shape == (24, 3)


def test_manifest_count_mismatch(tmp_path):
    with pytest.raises(ManifestCountError, match="23 patches"):
        load_manifest(_write_manifest(tmp_path, _one_image_doc(tmp_path, n_patches=23)))


def test_manifest_absent_image(tmp_path):
    with pytest.raises(ManifestPathError, match="missing.png"):
        load_manifest(_write_manifest(tmp_path, _one_image_doc(tmp_path, image="missing.png")))


def test_manifest_missing_and_malformed(tmp_path):
    with pytest.raises(ManifestMissingError):
        load_manifest(tmp_path / "none.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ManifestFormatError):
        load_manifest(bad)
    doc = _one_image_doc(tmp_path)
    doc["schema"] = "other/1"
    with pytest.raises(ManifestFormatError, match="schema"):
        load_manifest(_write_manifest(tmp_path, doc))
    doc = _one_image_doc(tmp_path)
    del doc["entries"][0]["patches"]
    with pytest.raises(ManifestFormatError, match=r"entries\[0\]"):
        load_manifest(_write_manifest(tmp_path, doc))


# -- config -------------------------------------------------------------------------

def test_config_defaults():
    cfg = config_from_dict({"schema": "chromafix.config/1", "methods": ["tps2", "NONE"]})
    assert cfg.methods == (MethodId.TPS2, MethodId.NONE)
    assert cfg.tps.lambda_small == 1.0 and cfg.tps.lambda_large == 10.0
    assert cfg.tps.white_index == 19 and cfg.tps.black_index == 24
    assert cfg.thresholds.pairwise_delta == pytest.approx(SQRT3)
    assert cfg.augment.linear_contrast_range == (0.6, 1.4)


@pytest.mark.parametrize("doc", [
    {"schema": "chromafix.config/1", "methods": []},
    {"schema": "chromafix.config/1", "methods": ["NOPE"]},
    {"schema": "chromafix.config/1", "methods": ["NONE"], "timing_repeats": 0},
    {"schema": "chromafix.config/1", "methods": ["NONE"], "augment": {"gamma_range": [2, 1]}},
    {"schema": "chromafix.config/1", "methods": ["NONE"], "augment": {"colour": 1}},
    {"methods": ["NONE"]},
])
def test_config_rejects(doc):
    with pytest.raises(ConfigError):
        config_from_dict(doc)


def test_load_config_missing(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.json")


# -- pipeline --------------------------------------------------------------------------

def test_none_never_fails(small_dataset):
    report = run_benchmark(load_manifest(small_dataset), _config(["NONE"]))
    assert len(report.rows) == 4 * 2
    assert all(not r.card.failed for r in report.rows)
    assert report.method("NONE").failed == 0


def test_perf_is_quantization_error(small_dataset):
    report = run_benchmark(load_manifest(small_dataset), _config(["PERF"]))
    for r in report.rows:
        assert r.card.within_mean < SQRT3 and r.card.inter_mean < SQRT3
        assert 0.1 < r.card.within_pct < 0.392


def test_failure_accounting(small_dataset):
    report = run_benchmark(load_manifest(small_dataset), _config(["NONE", "AFF0", "AFF3", "TPS1", "TPS3"]))
    for s in report.summary:
        assert s.failed >= s.ill_conditioned
        assert s.corrections == 8
    for r in report.rows:
        assert r.card.failed or not r.card.ill_conditioned


def _collapsed_dataset(tmp_path, n_images=3):
    """Scenes whose charts have patches 20 and 21 painted the same color."""
    rng = np.random.default_rng(8)
    (tmp_path / "images").mkdir()
    entries, charts = [], {}
    for i in range(n_images):
        img, regions, ref = synthetic_scene(rng)
        px = img.pixels.copy()
        a, b = regions[19], regions[20]
        px[b.y:b.y + b.h, b.x:b.x + b.w] = px[a.y, a.x]
        write_image(tmp_path / "images" / f"s{i}.png", ImageBuffer(px, 12))
        charts[f"s{i}"] = ref.tolist()
        entries.append({"image": f"images/s{i}.png", "bit_depth": 12, "chart": f"s{i}",
                        "patches": [[r.x, r.y, r.w, r.h] for r in regions]})
    return _write_manifest(tmp_path, {"schema": "chromafix.manifest/1", "reference_charts": charts, "entries": entries})


def test_smoothing_removes_ill_conditioning(tmp_path):
    manifest = load_manifest(_collapsed_dataset(tmp_path))
    report = run_benchmark(manifest, _config(["TPS1", "TPS2"], replicas=3))
    assert report.method("TPS1").ill_conditioned > 0
    assert report.method("TPS2").ill_conditioned == 0


def test_pre_augmented_manifest(tmp_path, small_dataset):
    cfg_path = small_dataset.parent / "config.json"
    assert main(["augment", "--manifest", str(small_dataset), "--config", str(cfg_path), "--out", str(tmp_path)]) == 0
    ext = load_manifest(tmp_path / "manifest.json")
    assert len(ext.entries) == 8
    assert all(e.bit_depth == 8 and e.ground_truth_path is not None for e in ext.entries)
    direct = run_benchmark(load_manifest(small_dataset), _config(["NONE", "AFF3"]))
    via_files = run_benchmark(ext, _config(["NONE", "AFF3"], replicas=1))
    a = sorted((r.replica, r.card.method, r.card.within_mean) for r in direct.rows)
    b = sorted((r.replica, r.card.method, r.card.within_mean) for r in via_files.rows)
    assert a == b


def test_threaded_run_matches_serial(small_dataset, monkeypatch):
    manifest = load_manifest(small_dataset)
    cfg = _config(["NONE", "VAN1", "TPS2"])
    serial = run_benchmark(manifest, cfg, workers=1)
    monkeypatch.setenv("CHROMAFIX_THREADS", "3")
    threaded = run_benchmark(manifest, cfg)
    key = lambda r: (r.image, r.replica, r.card.method, r.card.within_mean, r.card.inter_mean, r.card.failed)
    assert [key(r) for r in serial.rows] == [key(r) for r in threaded.rows]


# -- timing -------------------------------------------------------------------------------

def test_time_correction(corr):
    img = ImageBuffer(np.random.default_rng(0).integers(0, 256, size=(128, 128, 3)).astype(np.uint8))
    t_none = time_correction(CorrectionModel(MethodId.NONE), img, 5)
    t_tps = time_correction(make_method(MethodId.TPS1, corr), img, 5)
    assert t_tps > t_none > 0
    again = time_correction(make_method(MethodId.TPS1, corr), img, 5)
    assert abs(again - t_tps) <= 0.5 * max(again, t_tps)
    with pytest.raises(ValueError):
        time_correction(CorrectionModel(MethodId.NONE), img, 0)


def test_time_scales_with_area(corr):
    model = make_method(MethodId.TPS3, corr)
    rng = np.random.default_rng(1)
    small = ImageBuffer(rng.integers(0, 256, size=(128, 128, 3)).astype(np.uint8))
    big = ImageBuffer(rng.integers(0, 256, size=(256, 256, 3)).astype(np.uint8))
    ratio = time_correction(model, big, 5) / time_correction(model, small, 5)
    assert 2 <= ratio <= 8


# -- reports ------------------------------------------------------------------------------

def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_emit_report_and_recompute(tmp_path, small_dataset):
    report = run_benchmark(load_manifest(small_dataset), _config(["NONE", "AFF0", "VAN0", "TPS0"]))
    emit_report(report, tmp_path)
    rows = _read_csv(tmp_path / "scores.csv")
    assert len(rows) == 4 * 2 * 4
    summary = {r["method"]: r for r in _read_csv(tmp_path / "summary.csv")}
    assert summary["NONE"]["failed"] == "0"

    # independent aggregation over non-failed rows
    for method, s in summary.items():
        mine = [r for r in rows if r["method"] == method]
        kept = [float(r["within_mean"]) for r in mine if r["failed"] == "false"]
        assert int(s["failed"]) == sum(r["failed"] == "true" for r in mine)
        if kept:
            assert float(s["within_mean"]) == pytest.approx(statistics.fmean(kept), rel=1e-12)
            assert float(s["within_median"]) == statistics.median(kept)
            assert min(kept) <= float(s["within_median"]) <= max(kept)

    # report subcommand reproduces the summary byte for byte
    out = tmp_path / "again"
    assert main(["report", "--scores", str(tmp_path / "scores.csv"), "--out", str(out)]) == 0
    assert (out / "summary.csv").read_bytes() == (tmp_path / "summary.csv").read_bytes()
    assert json.loads((out / "summary.json").read_text()) == json.loads((tmp_path / "summary.json").read_text())


def test_read_scores_roundtrip(tmp_path, small_dataset):
    report = run_benchmark(load_manifest(small_dataset), _config(["NONE", "TPS2"]))
    emit_report(report, tmp_path)
    back = read_scores(tmp_path / "scores.csv")
    assert [r.card for r in back] == [r.card for r in report.rows]
    assert summarize(back, ["NONE", "TPS2"]) == report.summary


def test_constant_values_have_zero_std():
    from chromafix.bench import ScoreRow
    from chromafix.metrics import score

    rows = [ScoreRow("a", i, score(MethodId.AFF3, 2.0, 10.0, 3.0, 50.0)) for i in range(4)]
    (s,) = summarize(rows)
    assert s.within_std == 0 and s.within_median == 2.0 and s.corrections == 4


# -- CLI ------------------------------------------------------------------------------------

def test_cli_benchmark(tmp_path, small_dataset):
    cfg = small_dataset.parent / "config.json"
    assert main(["benchmark", "--manifest", str(small_dataset), "--config", str(cfg), "--out", str(tmp_path)]) == 0
    for name in ("scores.csv", "summary.csv", "summary.json"):
        assert (tmp_path / name).is_file()


def test_cli_correct(tmp_path, small_dataset):
    manifest = load_manifest(small_dataset)
    entry = manifest.entries[0]
    out = tmp_path / "corrected.png"
    model_path = tmp_path / "model.json"
    rc = main(["correct", "--manifest", str(small_dataset), "--method", "TPS2",
               "--image", str(entry.image_path), "--out", str(out), "--model-json", str(model_path)])
    assert rc == 0
    img = read_image(out, bit_depth=8)
    assert img.pixels.shape == read_image(entry.image_path).pixels.shape
    assert model_from_json(model_path.read_text()).method is MethodId.TPS2


def test_cli_exit_codes(tmp_path, small_dataset, capsys):
    cfg = small_dataset.parent / "config.json"
    assert main(["benchmark", "--manifest", str(tmp_path / "none.json"), "--config", str(cfg), "--out", str(tmp_path)]) == 2
    bad_cfg = tmp_path / "bad.json"
    bad_cfg.write_text('{"schema": "chromafix.config/1", "methods": []}')
    assert main(["benchmark", "--manifest", str(small_dataset), "--config", str(bad_cfg), "--out", str(tmp_path)]) == 1
    assert main(["correct", "--manifest", str(small_dataset), "--method", "BOGUS",
                 "--image", str(load_manifest(small_dataset).entries[0].image_path), "--out", str(tmp_path / "x.png")]) == 1
    assert main(["report", "--scores", str(tmp_path / "missing.csv"), "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert "manifest error" in err


def test_cli_synth(tmp_path):
    assert main(["synth", "--out", str(tmp_path), "--images", "2", "--replicas", "1"]) == 0
    m = load_manifest(tmp_path / "manifest.json")
    assert len(m.entries) == 2 and m.entries[0].bit_depth == 12
    assert load_config(tmp_path / "config.json").augment.replicas == 1
