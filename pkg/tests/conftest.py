"""Shared fixtures: synthetic datasets on disk and saved weight bundles.

Everything here is seeded so the whole suite is reproducible; session scope
keeps the expensive pieces (backbone weight generation, image trees) to one
build per run.
"""

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from PIL import Image

from signet import mobilenet, pipeline
from signet.bundle import save_bundle
from signet.rng import derive_rng

settings.register_profile(
    "suite",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
    print_blob=True,
)
settings.load_profile("suite")

GESTURES = ("fist", "open_palm", "thumbs_up")

# Ten well-separated RGB anchors for the larger synthetic dataset. With heavy
# per-pixel noise on top, classes overlap enough that the head cannot reach
# its final accuracy in one epoch, which is the regime the training-curve
# checks need.
COLOR_ANCHORS = (
    (220, 30, 30),
    (30, 220, 30),
    (30, 30, 220),
    (220, 220, 30),
    (220, 30, 220),
    (30, 220, 220),
    (240, 240, 240),
    (20, 20, 20),
    (240, 130, 20),
    (130, 20, 240),
)


GESTURE_TONES = ((225, 90, 60), (60, 210, 90), (70, 90, 225))


def gesture_image(rng, class_index: int, size: int = 64) -> np.ndarray:
    """A crude synthetic gesture: class-toned blob at a jittered position."""
    img = rng.integers(15, 55, size=(size, size, 3)).astype(np.uint8)
    cy, cx = size // 2 + int(rng.integers(-4, 5)), size // 2 + int(rng.integers(-4, 5))
    yy, xx = np.mgrid[0:size, 0:size]
    palm = (yy - cy) ** 2 + (xx - cx) ** 2 < (size * 2 // 5) ** 2
    img[palm] = GESTURE_TONES[class_index]
    if class_index == 1:  # five bright streaks above the blob
        for f in range(5):
            x0 = cx - 10 + 5 * f
            img[max(cy - 24, 0) : cy - 8, max(x0, 0) : x0 + 3] = (215, 180, 150)
    elif class_index == 2:  # one streak to the side
        img[cy - 6 : cy + 6, min(cx + 12, size - 4) : min(cx + 20, size)] = (
            215,
            180,
            150,
        )
    return img


def color_field_image(rng, class_index: int, size: int = 96, noise: float = 120.0):
    base = np.full((size, size, 3), COLOR_ANCHORS[class_index], dtype=np.float32)
    base += rng.normal(0.0, noise, size=(size, size, 3))
    return np.clip(base, 0, 255).astype(np.uint8)


def write_tree(root, class_names, images_per_class, make_image, seed=0):
    rng = derive_rng(seed, "dataset", str(root))
    for ci, name in enumerate(class_names):
        class_dir = root / name
        class_dir.mkdir(parents=True)
        for j in range(images_per_class):
            Image.fromarray(make_image(rng, ci)).save(class_dir / f"img_{j:03d}.png")
    return root


@pytest.fixture(scope="session")
def gesture_tree(tmp_path_factory):
    """Small 3-class image tree for datapipe, pipeline, CLI and service tests."""
    root = tmp_path_factory.mktemp("gestures")
    return write_tree(root, GESTURES, 12, gesture_image, seed=3)


@pytest.fixture(scope="session")
def color_tree(tmp_path_factory):
    """10 classes x 50 images, the transfer-learning curve dataset."""
    root = tmp_path_factory.mktemp("colors")
    names = [f"color_{i}" for i in range(10)]
    return write_tree(root, names, 50, color_field_image, seed=7)


@pytest.fixture(scope="session")
def backbone_path(tmp_path_factory):
    """Conditioned synthetic backbone weights saved as a bundle on disk."""
    model = mobilenet.build_model(1.0)
    bundle = mobilenet.conditioned_weight_bundle(model, seed=11)
    path = tmp_path_factory.mktemp("weights") / "backbone.slrw"
    save_bundle(path, bundle.entries, bundle.metadata)
    return path


@pytest.fixture(scope="session")
def random_backbone_path(tmp_path_factory):
    """Unconditioned random weights; enough for numeric and IO checks."""
    model = mobilenet.build_model(1.0)
    bundle = mobilenet.random_weight_bundle(model, seed=5)
    path = tmp_path_factory.mktemp("weights_rand") / "backbone.slrw"
    save_bundle(path, bundle.entries, bundle.metadata)
    return path


@pytest.fixture(scope="session")
def trained_artifacts(tmp_path_factory, gesture_tree, backbone_path):
    """One prepare->extract->train run shared by eval/predict/bench/CLI tests."""
    work = tmp_path_factory.mktemp("run")
    manifest = work / "dataset.manifest"
    features = work / "features.slrw"
    checkpoint = work / "head.slrw"
    pipeline.prepare(gesture_tree, manifest, seed=0, ratio=0.8)
    pipeline.extract(manifest, backbone_path, features, seed=0, augment_copies=1)
    from signet.head import TrainConfig

    pipeline.train(
        features,
        checkpoint,
        out_history=work / "history.tsv",
        cfg=TrainConfig(epochs=10, patience=8, seed=0),
    )
    return {
        "work": work,
        "manifest": manifest,
        "features": features,
        "checkpoint": checkpoint,
        "history": work / "history.tsv",
    }
