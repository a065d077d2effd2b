"""Whole-checkpoint conversions checked against the engine's forward pass."""

import numpy as np
import pytest

pytest.importorskip("slrw_converter")
pytest.importorskip("tensorflow")
pytest.importorskip("keras")
pytest.importorskip("signet")

from slrw_converter.cli import run
from slrw_converter.convert import ConversionError, collect_tensors, convert
from slrw_converter.mapping import name_map


def engine_features_for(bundle_path, images):
    from signet.bundle import load_bundle
    from signet.mobilenet import build_model, forward_features, load_weights

    model = load_weights(build_model(), load_bundle(bundle_path))
    return forward_features(model, np.asarray(images, dtype=np.float32))


def test_source_model_exposes_exactly_the_mapped_tensors(source_model):
    tensors = collect_tensors(source_model)
    assert len(tensors) == 260
    for p in name_map():
        assert tensors[p.source].shape == p.shape


def test_converted_bundle_reproduces_source_features(source_checkpoint, tmp_path):
    from signet.bundle import load_bundle

    bundle = tmp_path / "backbone.slrw"
    fixture = tmp_path / "backbone.fixture.slrw"
    report = convert(
        source_checkpoint, bundle, fixture_out=fixture, fixture_count=3, seed=5
    )
    assert report.mapped == 260
    assert report.skipped == []

    fixture_bundle = load_bundle(fixture)
    assert fixture_bundle.metadata["kind"] == "conversion-fixture"
    count = int(fixture_bundle.metadata["count"])
    assert count == 3
    images = np.stack(
        [fixture_bundle.entries[f"fixture.image{i}"] for i in range(count)]
    )
    want = np.stack(
        [fixture_bundle.entries[f"fixture.features{i}"] for i in range(count)]
    )

    got = engine_features_for(bundle, images)
    assert got.shape == (count, 1280)
    assert np.max(np.abs(got - want)) <= 1e-2

    # Distinct images must give distinct feature vectors, otherwise the
    # agreement bound above would hold for any weight mix-up.
    unit = want / np.linalg.norm(want, axis=1, keepdims=True)
    assert unit[0] @ unit[1] < 0.99


def test_rescaled_sources_convert_to_matching_features(source_checkpoint, tmp_path):
    """A checkpoint trained on [0, 255] pixels should map the engine's
    [0, 1] inputs onto the same features once the scale folds into the stem.
    """
    from signet.bundle import load_bundle

    bundle = tmp_path / "scaled.slrw"
    fixture = tmp_path / "scaled.fixture.slrw"
    convert(
        source_checkpoint,
        bundle,
        fixture_out=fixture,
        fixture_count=2,
        input_range=(0.0, 255.0),
        seed=5,
    )
    fixture_bundle = load_bundle(fixture)
    assert fixture_bundle.metadata["input_range"] == "0,255"
    images = np.stack([fixture_bundle.entries[f"fixture.image{i}"] for i in range(2)])
    want = np.stack([fixture_bundle.entries[f"fixture.features{i}"] for i in range(2)])
    got = engine_features_for(bundle, images)
    assert np.max(np.abs(got - want)) <= 1e-2


def test_conversion_is_byte_deterministic(source_checkpoint, tmp_path):
    first = tmp_path / "a.slrw"
    second = tmp_path / "b.slrw"
    convert(source_checkpoint, first)
    convert(source_checkpoint, second)
    assert first.read_bytes() == second.read_bytes()


def test_failed_load_leaves_no_partial_bundle(source_checkpoint, tmp_path):
    broken = tmp_path / "broken.keras"
    raw = source_checkpoint.read_bytes()
    broken.write_bytes(raw[: len(raw) // 2])
    out = tmp_path / "never.slrw"
    with pytest.raises(ConversionError, match="cannot load source checkpoint"):
        convert(broken, out)
    assert not out.exists()


def test_cli_converts_and_reports(source_checkpoint, tmp_path, capsys):
    bundle = tmp_path / "cli.slrw"
    fixture = tmp_path / "cli.fixture.slrw"
    code = run(
        [
            "--source", str(source_checkpoint),
            "--out", str(bundle),
            "--fixture", str(fixture),
            "--fixture-count", "2",
            "--seed", "3",
        ]
    )
    assert code == 0
    out = capsys.readouterr().out
    assert f"mapped 260 parameters -> {bundle}" in out
    assert f"fixture written: {fixture}" in out
    assert bundle.exists() and fixture.exists()


def test_cli_missing_checkpoint_is_exit_2(tmp_path, capsys):
    code = run(
        ["--source", str(tmp_path / "ghost.keras"), "--out", str(tmp_path / "o.slrw")]
    )
    assert code == 2
    assert capsys.readouterr().err.startswith("error: cannot load source checkpoint")
