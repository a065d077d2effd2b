"""Dataset loading, deterministic splits, preprocessing, and augmentation.

A dataset is a folder per class; classes are indexed by sorted directory
name. Images flow through resize_normalize into the backbone's
(1, 224, 224, 3) float32 [0, 1] input. Training images may additionally be
augmented (rotation, shift, zoom, horizontal flip) as one composed affine
warp with edge-replicate fill, driven by an explicit seeded generator.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from signet.errors import ConfigError, DataError, FormatError
from signet.rng import derive_rng

IMAGE_EXTENSIONS = (".jpg", ".jpeg", ".png", ".bmp")
INPUT_SIZE = 224
MANIFEST_ROLES = ("train", "val")


@dataclass
class Sample:
    """One decoded image with its class assignment."""

    image: np.ndarray  # uint8 (h, w, 3)
    class_index: int
    class_name: str
    source_path: str


@dataclass
class LoadReport:
    class_counts: dict[str, int] = field(default_factory=dict)
    skipped: list[tuple[str, str]] = field(default_factory=list)  # (path, reason)

    @property
    def total(self) -> int:
        return sum(self.class_counts.values())


@dataclass
class LoadedDataset:
    samples: list[Sample]
    class_names: list[str]
    report: LoadReport


@dataclass
class SplitDataset:
    train: list[Sample]
    val: list[Sample]
    class_names: list[str]
    seed: int


@dataclass(frozen=True)
class AugmentConfig:
    """Bounds for the four augmentations; zeros (and hflip off) mean identity."""

    rotation_deg: float = 20.0
    shift_frac: float = 0.1
    zoom_frac: float = 0.2
    hflip: bool = True
    fill: str = "edge_replicate"

    def __post_init__(self):
        if self.rotation_deg < 0:
            raise ConfigError(f"rotation_deg must be >= 0, got {self.rotation_deg}")
        for name in ("shift_frac", "zoom_frac"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                raise ConfigError(f"{name} must be in [0, 1), got {v}")
        if self.fill != "edge_replicate":
            raise ConfigError(f"unsupported fill mode {self.fill!r}")

    @classmethod
    def identity(cls) -> "AugmentConfig":
        return cls(rotation_deg=0.0, shift_frac=0.0, zoom_frac=0.0, hflip=False)


@dataclass(frozen=True)
class AffineParams:
    """One concrete draw: rotation degrees, pixel shifts, zoom factor, flip."""

    angle_deg: float
    shift_x: float
    shift_y: float
    zoom: float
    flip: bool

    @property
    def is_identity(self) -> bool:
        return (
            self.angle_deg == 0.0
            and self.shift_x == 0.0
            and self.shift_y == 0.0
            and self.zoom == 1.0
            and not self.flip
        )


def load_image(path) -> np.ndarray:
    """Decode an image file to a uint8 (h, w, 3) RGB array."""
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except FileNotFoundError:
        raise DataError(f"image file not found: {path}")
    except (UnidentifiedImageError, OSError, ValueError) as e:
        raise DataError(f"cannot decode image {path}: {e}")
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DataError(f"image {path} did not decode to RGB, got shape {arr.shape}")
    return arr


def load_dataset(root) -> LoadedDataset:
    """Read a folder-per-class tree into decoded samples.

    Class order is the sorted directory-name order; files within a class are
    sorted by name. Files that fail to decode are skipped and listed in the
    report rather than aborting the load.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    class_names = sorted(d.name for d in root.iterdir() if d.is_dir())
    if not class_names:
        raise DataError(f"dataset root {root} contains no class directories")

    samples: list[Sample] = []
    report = LoadReport()
    for index, name in enumerate(class_names):
        count = 0
        files = sorted(
            p
            for p in (root / name).iterdir()
            if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS
        )
        for path in files:
            try:
                image = load_image(path)
            except DataError as e:
                report.skipped.append((str(path), str(e)))
                continue
            samples.append(
                Sample(
                    image=image,
                    class_index=index,
                    class_name=name,
                    source_path=str(path),
                )
            )
            count += 1
        report.class_counts[name] = count
    return LoadedDataset(samples=samples, class_names=class_names, report=report)


def split(
    samples: list[Sample],
    ratio: float = 0.8,
    seed: int = 0,
    class_names: list[str] | None = None,
) -> SplitDataset:
    """Stratified split: per-class seeded shuffle, first round(ratio*n) to train."""
    if not 0 < ratio < 1:
        raise ConfigError(f"split ratio must be in (0, 1), got {ratio}")
    if not samples:
        raise DataError("cannot split an empty sample list")

    by_class: dict[int, list[Sample]] = {}
    names: dict[int, str] = {}
    for s in samples:
        by_class.setdefault(s.class_index, []).append(s)
        names[s.class_index] = s.class_name
    if class_names is None:
        class_names = [names[i] for i in sorted(names)]

    train: list[Sample] = []
    val: list[Sample] = []
    for index in sorted(by_class):
        group = by_class[index]
        if len(group) < 2:
            raise DataError(
                f"class {names[index]!r} has {len(group)} sample(s); need at least 2"
            )
        perm = derive_rng(seed, "split", index).permutation(len(group))
        n_train = round(ratio * len(group))
        train.extend(group[i] for i in perm[:n_train])
        val.extend(group[i] for i in perm[n_train:])
    return SplitDataset(train=train, val=val, class_names=class_names, seed=seed)


def _bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-center bilinear resize of an (h, w, c) float32 array."""
    h, w = image.shape[:2]

    def axis_coords(n_in, n_out):
        src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = (src - lo).astype(np.float32)
        return lo, hi, frac

    y0, y1, fy = axis_coords(h, out_h)
    x0, x1, fx = axis_coords(w, out_w)
    fx = fx[None, :, None]
    fy = fy[:, None, None]

    # lerp as a + f*(b - a) so constant regions survive bit-exactly
    top = image[np.ix_(y0, x0)]
    top = top + fx * (image[np.ix_(y0, x1)] - top)
    bot = image[np.ix_(y1, x0)]
    bot = bot + fx * (image[np.ix_(y1, x1)] - bot)
    return top + fy * (bot - top)


def resize_normalize(image: np.ndarray) -> np.ndarray:
    """Bilinear-resize to 224x224 and scale values to [0, 1].

    Returns a (1, 224, 224, 3) float32 batch ready for the backbone.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise DataError(f"expected an (h, w, 3) RGB image, got shape {image.shape}")
    h, w = image.shape[:2]
    if h < 1 or w < 1:
        raise DataError(f"image has a zero dimension: {image.shape}")
    resized = _bilinear_resize(image.astype(np.float32), INPUT_SIZE, INPUT_SIZE)
    out = np.clip(resized / np.float32(255.0), 0.0, 1.0)
    return out[np.newaxis].astype(np.float32, copy=False)


def sample_affine_params(
    cfg: AugmentConfig, rng: np.random.Generator, height: int, width: int
) -> AffineParams:
    """Draw one transform from the configured bounds.

    Always consumes exactly five draws in a fixed order, so the stream
    position is config-independent.
    """
    angle = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg)
    shift_x = rng.uniform(-cfg.shift_frac, cfg.shift_frac) * width
    shift_y = rng.uniform(-cfg.shift_frac, cfg.shift_frac) * height
    zoom = rng.uniform(1.0 - cfg.zoom_frac, 1.0 + cfg.zoom_frac)
    flip_draw = rng.uniform()
    flip = bool(flip_draw < 0.5) if cfg.hflip else False
    return AffineParams(
        angle_deg=float(angle),
        shift_x=float(shift_x),
        shift_y=float(shift_y),
        zoom=float(zoom),
        flip=flip,
    )


def _affine_matrix(params: AffineParams, height: int, width: int) -> np.ndarray:
    """Forward 3x3 matrix: rotate about center, shift, zoom about center, flip."""
    cx = (width - 1) / 2.0
    cy = (height - 1) / 2.0

    def translate(tx, ty):
        return np.array([[1, 0, tx], [0, 1, ty], [0, 0, 1]], dtype=np.float64)

    theta = math.radians(params.angle_deg)
    cos, sin = math.cos(theta), math.sin(theta)
    rot = np.array([[cos, -sin, 0], [sin, cos, 0], [0, 0, 1]], dtype=np.float64)
    rotate = translate(cx, cy) @ rot @ translate(-cx, -cy)

    shift = translate(params.shift_x, params.shift_y)

    scale = np.diag([params.zoom, params.zoom, 1.0])
    zoom = translate(cx, cy) @ scale @ translate(-cx, -cy)

    matrix = zoom @ shift @ rotate
    if params.flip:
        flip = np.array([[-1, 0, width - 1], [0, 1, 0], [0, 0, 1]], dtype=np.float64)
        matrix = flip @ matrix
    return matrix


def apply_affine(image: np.ndarray, params: AffineParams) -> np.ndarray:
    """Warp a uint8 image by the composed transform, bilinear, edge-replicate.

    Output has the input's dims and dtype; the identity transform returns the
    pixels unchanged.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise DataError(f"expected an (h, w, 3) RGB image, got shape {image.shape}")
    if params.is_identity:
        return image.copy()
    if params.zoom <= 0:
        raise ConfigError(f"zoom factor must be positive, got {params.zoom}")

    h, w = image.shape[:2]
    inverse = np.linalg.inv(_affine_matrix(params, h, w))
    xs, ys = np.meshgrid(
        np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64)
    )
    src_x = inverse[0, 0] * xs + inverse[0, 1] * ys + inverse[0, 2]
    src_y = inverse[1, 0] * xs + inverse[1, 1] * ys + inverse[1, 2]
    # clamping both the coordinates and the neighbor indices replicates edges
    src_x = np.clip(src_x, 0.0, w - 1)
    src_y = np.clip(src_y, 0.0, h - 1)
    x0 = np.floor(src_x).astype(np.int64)
    y0 = np.floor(src_y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (src_x - x0).astype(np.float32)[..., None]
    fy = (src_y - y0).astype(np.float32)[..., None]

    img = image.astype(np.float32)
    top = img[y0, x0]
    top = top + fx * (img[y0, x1] - top)
    bot = img[y1, x0]
    bot = bot + fx * (img[y1, x1] - bot)
    warped = top + fy * (bot - top)
    return np.clip(np.rint(warped), 0, 255).astype(np.uint8)


def augment(
    image: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator
) -> np.ndarray:
    """Rotation, shift, zoom, and flip as one warp; uint8 in, uint8 out."""
    image = np.asarray(image)
    params = sample_affine_params(cfg, rng, image.shape[0], image.shape[1])
    return apply_affine(image, params)


def augment_rng(seed: int, epoch: int, sample_index: int) -> np.random.Generator:
    """Per-sample augmentation stream, independent of execution order."""
    return derive_rng(seed, "augment", epoch, sample_index)


@dataclass
class ManifestEntry:
    class_index: int
    class_name: str
    path: str  # resolved against the manifest's directory
    role: str  # "train" or "val"


def write_manifest(path, dataset: SplitDataset) -> None:
    """Write the split as tab-separated lines with manifest-relative paths."""
    path = Path(path)
    lines = []
    for role, part in (("train", dataset.train), ("val", dataset.val)):
        for s in part:
            rel = Path(os.path.relpath(s.source_path, start=path.parent)).as_posix()
            lines.append(f"{s.class_index}\t{s.class_name}\t{rel}\t{role}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def read_manifest(path) -> tuple[list[ManifestEntry], list[str]]:
    """Parse a split manifest; paths come back resolved, classes validated."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest {path} does not exist")
    entries: list[ManifestEntry] = []
    names: dict[int, str] = {}
    for lineno, line in enumerate(
        path.read_text(encoding="utf-8").splitlines(), start=1
    ):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise FormatError(
                f"{path}:{lineno}: expected 4 tab-separated fields, got {len(fields)}"
            )
        idx_text, name, rel, role = fields
        try:
            index = int(idx_text)
        except ValueError:
            raise FormatError(f"{path}:{lineno}: class index {idx_text!r} not an integer")
        if index < 0:
            raise FormatError(f"{path}:{lineno}: negative class index {index}")
        if role not in MANIFEST_ROLES:
            raise FormatError(f"{path}:{lineno}: role {role!r} not in {MANIFEST_ROLES}")
        if names.setdefault(index, name) != name:
            raise FormatError(
                f"{path}:{lineno}: class index {index} maps to both "
                f"{names[index]!r} and {name!r}"
            )
        entries.append(
            ManifestEntry(
                class_index=index,
                class_name=name,
                path=str((path.parent / rel).resolve()),
                role=role,
            )
        )
    if not entries:
        raise FormatError(f"manifest {path} lists no samples")
    indices = sorted(names)
    if indices != list(range(len(indices))):
        raise FormatError(f"manifest class indices {indices} are not contiguous from 0")
    return entries, [names[i] for i in indices]
