"""Turn a Keras MobileNetV2 checkpoint into an .slrw backbone bundle.

The conversion validates everything before writing anything: every expected
backbone parameter must be present with its declared shape, and every source
parameter must either map onto the bundle or belong to a recognized
classification head, which is reported rather than silently dropped. Files
are written through a temp-and-rename step so a failed run never leaves a
partial bundle behind.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from slrw_converter.mapping import name_map
from slrw_converter.slrw import write_bundle

# Weighted layers a source checkpoint may carry beyond the backbone. The
# stock ImageNet classifier shows up when a model was saved with its top.
SKIP_LAYERS = ("predictions",)

INPUT_SIZE = 224
FEATURE_DIM = 1280


class ConversionError(Exception):
    """The source checkpoint cannot be converted; the message names why."""


@dataclass
class ConversionReport:
    mapped: int
    skipped: list[str]
    bundle_path: str
    fixture_path: str | None


def parse_input_range(text: str) -> tuple[float, float]:
    """Parse 'lo,hi' into the input range the source model was trained on."""
    parts = text.split(",")
    if len(parts) != 2:
        raise ConversionError(f"input range must look like 'lo,hi', got {text!r}")
    try:
        lo, hi = float(parts[0]), float(parts[1])
    except ValueError:
        raise ConversionError(f"input range must be numeric, got {text!r}") from None
    if not lo < hi:
        raise ConversionError(f"input range needs lo < hi, got {lo} and {hi}")
    return lo, hi


def load_source_model(source):
    """Open a .keras/.h5 checkpoint, or build the stock pretrained model."""
    import keras

    try:
        if str(source) == "imagenet":
            return keras.applications.MobileNetV2(
                weights="imagenet", include_top=False, input_shape=(INPUT_SIZE, INPUT_SIZE, 3)
            )
        return keras.saving.load_model(source, compile=False)
    except Exception as e:
        raise ConversionError(f"cannot load source checkpoint {source}: {e}") from e


def _weight_name(variable) -> str:
    name = str(getattr(variable, "name", variable))
    return name.rsplit("/", 1)[-1].split(":", 1)[0]


def collect_tensors(model) -> dict[str, np.ndarray]:
    """Flatten a Keras model into '{layer}/{weight}' -> array."""
    out: dict[str, np.ndarray] = {}
    for layer in model.layers:
        arrays = layer.get_weights()
        if not arrays:
            continue
        names = [_weight_name(v) for v in layer.weights]
        for name, arr in zip(names, arrays):
            out[f"{layer.name}/{name}"] = np.asarray(arr)
    return out


def convert_tensors(
    tensors: dict[str, np.ndarray],
    input_range: tuple[float, float] = (0.0, 1.0),
) -> tuple[dict[str, np.ndarray], list[str]]:
    """Map source tensors onto bundle entries; returns (entries, skipped).

    When the source model was trained on inputs in [lo, hi] rather than the
    engine's [0, 1], the affine rescaling u = lo + (hi - lo) * v folds into
    the stem: its kernel scales by (hi - lo) and the constant term
    lo * sum(W) moves into the stem's batch-norm mean. The fold reproduces
    the source exactly wherever the stem window reads real pixels. Both
    frameworks zero-pad the stem in their own input scale, so when lo != 0
    the padded bottom/right edge sees different effective values and the
    outputs diverge along that band; ranges with lo == 0 are exact
    everywhere.
    """
    table = name_map()

    missing = [p.source for p in table if p.source not in tensors]
    if missing:
        raise ConversionError(
            "source checkpoint is missing parameters: " + ", ".join(missing)
        )
    for p in table:
        got = tuple(tensors[p.source].shape)
        if got != p.shape:
            raise ConversionError(
                f"source parameter {p.source} has shape {got}, expected {p.shape}"
            )

    mapped_sources = {p.source for p in table}
    skipped: list[str] = []
    unknown: list[str] = []
    for name in tensors:
        if name in mapped_sources:
            continue
        layer = name.split("/", 1)[0]
        (skipped if layer in SKIP_LAYERS else unknown).append(name)
    if unknown:
        raise ConversionError(
            "unmapped source parameters: " + ", ".join(sorted(unknown))
        )

    entries = {
        p.target: np.ascontiguousarray(tensors[p.source], dtype=np.float32)
        for p in table
    }
    for name, arr in entries.items():
        if not np.isfinite(arr).all():
            raise ConversionError(f"parameter for {name} contains non-finite values")

    lo, hi = input_range
    if (lo, hi) != (0.0, 1.0):
        kernel = entries["stem.conv.kernel"]
        shift = lo * kernel.sum(axis=(0, 1, 2))
        entries["stem.conv.kernel"] = ((hi - lo) * kernel).astype(np.float32)
        entries["stem.conv.bn.mean"] = (
            entries["stem.conv.bn.mean"] - shift
        ).astype(np.float32)

    return entries, sorted(skipped)


def default_fixture_images(count: int, seed: int = 0) -> np.ndarray:
    """Blocky seeded noise in [0, 1]; coarse structure keeps activations alive."""
    if count < 1:
        raise ConversionError(f"fixture count must be >= 1, got {count}")
    rng = np.random.default_rng(seed)
    coarse = rng.uniform(0.0, 1.0, (count, 28, 28, 3)).astype(np.float32)
    return coarse.repeat(8, axis=1).repeat(8, axis=2)


def source_features(model, images, input_range: tuple[float, float]) -> np.ndarray:
    """1280-dim pooled features from the source framework, one row per image."""
    import keras

    images = np.asarray(images, dtype=np.float32)
    if images.ndim != 4 or images.shape[1:] != (INPUT_SIZE, INPUT_SIZE, 3):
        raise ConversionError(
            f"fixture images must be (n, {INPUT_SIZE}, {INPUT_SIZE}, 3), got {images.shape}"
        )
    lo, hi = input_range
    feature_model = keras.Model(model.input, model.get_layer("out_relu").output)
    activations = feature_model.predict(lo + (hi - lo) * images, verbose=0)
    return activations.mean(axis=(1, 2)).astype(np.float32)


def _atomic_write(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def convert(
    source,
    out_bundle,
    fixture_out=None,
    fixture_images=None,
    fixture_count: int = 4,
    input_range: tuple[float, float] = (0.0, 1.0),
    seed: int = 0,
) -> ConversionReport:
    """Convert a checkpoint; optionally emit a reference-prediction fixture.

    The fixture file uses the same container format with entries
    fixture.image{i} (224x224x3 float32 in [0, 1]) and fixture.features{i}
    (the source framework's 1280-dim feature vector for that image).
    """
    model = load_source_model(source)
    tensors = collect_tensors(model)
    entries, skipped = convert_tensors(tensors, input_range)
    lo, hi = input_range
    metadata = {
        "producer": "slrw-converter",
        "source": str(source),
        "input_range": f"{lo:g},{hi:g}",
    }
    _atomic_write(out_bundle, write_bundle(entries, metadata))

    fixture_path = None
    if fixture_out is not None:
        if fixture_images is None:
            fixture_images = default_fixture_images(fixture_count, seed)
        features = source_features(model, fixture_images, input_range)
        fixture_entries: dict[str, np.ndarray] = {}
        for i, (image, vector) in enumerate(zip(fixture_images, features)):
            fixture_entries[f"fixture.image{i}"] = np.asarray(image, dtype=np.float32)
            fixture_entries[f"fixture.features{i}"] = vector
        _atomic_write(
            fixture_out,
            write_bundle(
                fixture_entries,
                {
                    "kind": "conversion-fixture",
                    "count": str(len(fixture_images)),
                    "source": str(source),
                    "input_range": f"{lo:g},{hi:g}",
                },
            ),
        )
        fixture_path = str(fixture_out)

    return ConversionReport(
        mapped=len(entries),
        skipped=skipped,
        bundle_path=str(out_bundle),
        fixture_path=fixture_path,
    )
