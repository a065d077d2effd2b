"""Tensor-level conversion rules, checked without any source framework."""

import numpy as np
import pytest

pytest.importorskip("slrw_converter")

from slrw_converter.cli import run
from slrw_converter.convert import (
    ConversionError,
    convert_tensors,
    default_fixture_images,
    parse_input_range,
)
from slrw_converter.mapping import name_map
from slrw_converter.slrw import write_bundle


def make_tensors(seed=0):
    """A complete synthetic checkpoint keyed by source names."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for p in name_map():
        if p.source.endswith("moving_variance"):
            arr = rng.uniform(0.5, 1.5, p.shape)
        else:
            arr = rng.normal(0.0, 0.05, p.shape)
        tensors[p.source] = arr.astype(np.float32)
    return tensors


def test_all_parameters_map_in_declared_order():
    entries, skipped = convert_tensors(make_tensors())
    assert skipped == []
    assert list(entries) == [p.target for p in name_map()]
    tensors = make_tensors()
    for p in name_map():
        np.testing.assert_array_equal(entries[p.target], tensors[p.source])


def test_missing_parameter_is_reported_by_name():
    tensors = make_tensors()
    del tensors["block_7_depthwise/kernel"]
    with pytest.raises(ConversionError, match="block_7_depthwise/kernel"):
        convert_tensors(tensors)


def test_unknown_parameter_is_rejected():
    tensors = make_tensors()
    tensors["mystery/kernel"] = np.zeros((3, 3), np.float32)
    with pytest.raises(ConversionError, match="mystery/kernel"):
        convert_tensors(tensors)


def test_classifier_head_is_skipped_and_listed():
    tensors = make_tensors()
    tensors["predictions/kernel"] = np.zeros((1280, 1000), np.float32)
    tensors["predictions/bias"] = np.zeros((1000,), np.float32)
    entries, skipped = convert_tensors(tensors)
    assert skipped == ["predictions/bias", "predictions/kernel"]
    assert len(entries) == 260


def test_shape_mismatch_names_both_shapes():
    tensors = make_tensors()
    tensors["Conv_1/kernel"] = np.zeros((1, 1, 320, 1000), np.float32)
    with pytest.raises(ConversionError) as err:
        convert_tensors(tensors)
    assert "(1, 1, 320, 1000)" in str(err.value)
    assert "(1, 1, 320, 1280)" in str(err.value)


def test_non_finite_values_are_rejected():
    tensors = make_tensors()
    tensors["block_3_expand/kernel"][0, 0, 0, 0] = np.nan
    with pytest.raises(ConversionError, match="non-finite"):
        convert_tensors(tensors)


def test_input_range_folds_into_the_stem_only():
    tensors = make_tensors()
    plain, _ = convert_tensors(tensors, (0.0, 1.0))
    folded, _ = convert_tensors(tensors, (-1.0, 1.0))
    kernel = plain["stem.conv.kernel"].astype(np.float64)
    np.testing.assert_allclose(folded["stem.conv.kernel"], 2.0 * kernel, rtol=1e-6)
    np.testing.assert_allclose(
        folded["stem.conv.bn.mean"],
        plain["stem.conv.bn.mean"] + kernel.sum(axis=(0, 1, 2)),
        rtol=1e-5,
        atol=1e-7,
    )
    for name in plain:
        if name in ("stem.conv.kernel", "stem.conv.bn.mean"):
            continue
        np.testing.assert_array_equal(folded[name], plain[name])


def _conv_same_stride2(image, kernel, pad_value):
    """Plain float64 stride-2 conv with bottom/right padding (even sizes)."""
    h, w, ci = image.shape
    oh, ow = (h + 1) // 2, (w + 1) // 2
    padded = np.full((2 * oh + 1, 2 * ow + 1, ci), pad_value, dtype=np.float64)
    padded[:h, :w] = image
    out = np.zeros((oh, ow, kernel.shape[3]))
    for oy in range(oh):
        for ox in range(ow):
            patch = padded[2 * oy : 2 * oy + 3, 2 * ox : 2 * ox + 3, :]
            out[oy, ox] = np.tensordot(patch, kernel, axes=3)
    return out


def test_folding_preserves_normalized_stem_outputs_inside_the_frame():
    """Fold identity: conv(lo + (hi - lo) v, K) - mean equals
    conv(v, K') - mean' for the emitted K' and mean', wherever the window
    reads real pixels. On the padded edge the two sides disagree by
    construction, because the source pads with zeros in its own input scale
    and that value is not zero in the engine's scale unless lo == 0.
    """
    tensors = make_tensors()
    plain, _ = convert_tensors(tensors, (0.0, 1.0))
    folded, _ = convert_tensors(tensors, (-1.0, 1.0))

    rng = np.random.default_rng(3)
    v = rng.uniform(0.0, 1.0, (16, 16, 3))
    u = -1.0 + 2.0 * v

    y_source = _conv_same_stride2(u, plain["stem.conv.kernel"].astype(np.float64), 0.0)
    y_engine = _conv_same_stride2(v, folded["stem.conv.kernel"].astype(np.float64), 0.0)
    gap = np.abs(
        (y_source - plain["stem.conv.bn.mean"])
        - (y_engine - folded["stem.conv.bn.mean"])
    )
    assert gap[:-1, :-1].max() < 1e-6
    assert gap[-1].max() > 1e-3


def test_input_range_parsing():
    assert parse_input_range("0,1") == (0.0, 1.0)
    assert parse_input_range("-1,1") == (-1.0, 1.0)
    for bad in ("1,0", "0,0", "a,b", "1", "1,2,3"):
        with pytest.raises(ConversionError):
            parse_input_range(bad)


def test_fixture_images_are_blocky_seeded_and_bounded():
    images = default_fixture_images(3, seed=5)
    assert images.shape == (3, 224, 224, 3)
    assert images.dtype == np.float32
    assert images.min() >= 0.0 and images.max() <= 1.0
    coarse = images[:, ::8, ::8]
    np.testing.assert_array_equal(coarse.repeat(8, axis=1).repeat(8, axis=2), images)
    np.testing.assert_array_equal(default_fixture_images(3, seed=5), images)
    with pytest.raises(ConversionError):
        default_fixture_images(0)


def test_bundle_writer_emits_the_expected_header():
    data = write_bundle({"x": np.ones((2, 3), np.float32)}, {"k": "v"})
    assert data[:5] == b"SLRW1"
    assert int.from_bytes(data[5:9], "little") == 1
    meta_len = int.from_bytes(data[9:13], "little")
    assert data[13 : 13 + meta_len] == b"k=v"


def test_bundle_writer_rejects_non_finite_payloads():
    with pytest.raises(ValueError):
        write_bundle({"x": np.array([np.nan], np.float32)})


def test_cli_rejects_a_backward_input_range(tmp_path, capsys):
    out = tmp_path / "w.slrw"
    code = run(
        ["--source", "whatever.keras", "--out", str(out), "--input-range", "1,0"]
    )
    assert code == 2
    assert capsys.readouterr().err.startswith("error:")
    assert not out.exists()
