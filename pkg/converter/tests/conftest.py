"""Shared fixtures: a seeded, input-sensitive source model saved as .keras."""

import pytest

pytest.importorskip("slrw_converter")


def _apply_engine_weights(model, entries):
    """Push bundle entries into the Keras layers via the reverse name map."""
    from slrw_converter.mapping import name_map

    by_layer = {}
    for param in name_map():
        layer, weight = param.source.split("/")
        by_layer.setdefault(layer, {})[weight] = entries[param.target]
    for name, weights in by_layer.items():
        layer = model.get_layer(name)
        if "kernel" in weights:
            layer.set_weights([weights["kernel"]])
        else:
            order = ("gamma", "beta", "moving_mean", "moving_variance")
            layer.set_weights([weights[key] for key in order])


@pytest.fixture(scope="session")
def source_model():
    """A MobileNetV2 whose features actually depend on the input.

    Freshly initialized backbones squash every image onto nearly the same
    feature ray, which would let a broken conversion pass the agreement
    checks unnoticed. Loading the engine's conditioned weights through the
    reverse name map keeps features input-dependent and exercises the
    mapping in both directions.
    """
    pytest.importorskip("tensorflow")
    keras = pytest.importorskip("keras")
    mobilenet = pytest.importorskip("signet.mobilenet")

    bundle = mobilenet.conditioned_weight_bundle(mobilenet.build_model(), seed=11)
    model = keras.applications.MobileNetV2(
        weights=None, include_top=False, input_shape=(224, 224, 3)
    )
    _apply_engine_weights(model, bundle.entries)
    return model


@pytest.fixture(scope="session")
def source_checkpoint(source_model, tmp_path_factory):
    path = tmp_path_factory.mktemp("source") / "backbone.keras"
    source_model.save(str(path))
    return path
