"""End-to-end orchestration: prepare, extract, train, evaluate, predict, bench.

These functions are the single implementation behind both the HTTP service
and the command line. They work in terms of filesystem paths (manifests,
weight bundles, feature caches, checkpoints) and return plain result
objects; callers decide how to present them.
"""

from __future__ import annotations

import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from signet import datapipe, head as head_mod, metrics, mobilenet
from signet.bundle import load_bundle, save_bundle
from signet.datapipe import AugmentConfig, ManifestEntry, Sample, SplitDataset
from signet.errors import ConfigError, DataError
from signet.head import HeadParams, TrainConfig, TrainHistory
from signet.metrics import EvalReport, LatencyReport
from signet.mobilenet import Model

FEATURE_ENTRIES = ("features.train", "labels.train", "features.val", "labels.val")


@dataclass
class PrepareResult:
    manifest: str
    class_names: list[str]
    train_counts: dict[str, int]
    val_counts: dict[str, int]
    skipped: list[tuple[str, str]]


@dataclass
class ExtractResult:
    features_path: str
    n_train: int
    n_val: int
    feature_dim: int
    class_names: list[str]


@dataclass
class TrainResult:
    checkpoint: str
    history: TrainHistory
    class_names: list[str]


@dataclass
class FramePrediction:
    class_name: str
    probability: float
    latency_ms: float


class ModelCache:
    """Loaded backbones and checkpoints keyed by path identity and mtime."""

    def __init__(self):
        self._lock = threading.Lock()
        self._items: dict[tuple, object] = {}

    @staticmethod
    def _key(kind: str, path) -> tuple:
        p = Path(path)
        if not p.is_file():
            raise DataError(f"{kind} file {p} does not exist")
        st = p.stat()
        return (kind, str(p.resolve()), st.st_mtime_ns, st.st_size)

    def backbone(self, weights_path) -> Model:
        key = self._key("weights", weights_path)
        with self._lock:
            if key not in self._items:
                model = mobilenet.build_model(width=1.0)
                mobilenet.load_weights(model, load_bundle(weights_path), fold_bn=True)
                self._items[key] = model
            return self._items[key]

    def head(self, checkpoint_path) -> tuple[HeadParams, list[str]]:
        key = self._key("checkpoint", checkpoint_path)
        with self._lock:
            if key not in self._items:
                params, class_names, _ = head_mod.load_checkpoint(checkpoint_path)
                self._items[key] = (params, class_names)
            return self._items[key]

    def clear(self):
        with self._lock:
            self._items.clear()


CACHE = ModelCache()


def prepare(dataset_root, out_manifest, seed: int = 0, ratio: float = 0.8) -> PrepareResult:
    """Load a dataset tree, split it, and write the manifest."""
    loaded = datapipe.load_dataset(dataset_root)
    ds = datapipe.split(
        loaded.samples, ratio=ratio, seed=seed, class_names=loaded.class_names
    )
    out_manifest = Path(out_manifest)
    out_manifest.parent.mkdir(parents=True, exist_ok=True)
    datapipe.write_manifest(out_manifest, ds)

    def counts(part):
        c = {name: 0 for name in ds.class_names}
        for s in part:
            c[s.class_name] += 1
        return c

    return PrepareResult(
        manifest=str(out_manifest),
        class_names=ds.class_names,
        train_counts=counts(ds.train),
        val_counts=counts(ds.val),
        skipped=loaded.report.skipped,
    )


def _entry_batches(entries: list[ManifestEntry], batch_size: int):
    for start in range(0, len(entries), batch_size):
        yield entries[start : start + batch_size]


def _extract_features(
    model: Model,
    entries: list[ManifestEntry],
    batch_size: int,
    threads: int,
    preprocess,
) -> np.ndarray:
    """Forward all entries in fixed batch order; optionally thread across batches.

    preprocess(entry, position) -> (1, 224, 224, 3); position is the entry's
    index in the full list so augmentation streams ignore execution order.
    """
    batches = list(_entry_batches(list(enumerate(entries)), batch_size))

    def run(batch):
        x = np.concatenate([preprocess(e, pos) for pos, e in batch])
        return mobilenet.forward_features(model, x)

    if threads > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, batches))
    else:
        parts = [run(b) for b in batches]
    return np.concatenate(parts) if parts else np.zeros((0, model.feature_dim), np.float32)


def extract(
    manifest_path,
    weights_path,
    out_features,
    seed: int = 0,
    augment_copies: int = 0,
    aug_cfg: AugmentConfig | None = None,
    batch_size: int = 32,
    threads: int = 1,
) -> ExtractResult:
    """Cache backbone features for every manifest sample into a bundle.

    Validation images are resized/normalized only. Training images get the
    same, plus augment_copies extra augmented passes (each pass uses its own
    per-sample RNG stream, so results do not depend on batch or thread
    scheduling). Entries: features.train, labels.train, features.val,
    labels.val; labels are stored as float32 per the bundle format.
    """
    if augment_copies < 0:
        raise ConfigError(f"augment_copies must be >= 0, got {augment_copies}")
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    if threads < 1:
        raise ConfigError(f"threads must be >= 1, got {threads}")
    entries, class_names = datapipe.read_manifest(manifest_path)
    model = CACHE.backbone(weights_path)
    cfg = aug_cfg or AugmentConfig()

    train_entries = [e for e in entries if e.role == "train"]
    val_entries = [e for e in entries if e.role == "val"]
    if not train_entries:
        raise DataError(f"manifest {manifest_path} has no train samples")
    if not val_entries:
        raise DataError(f"manifest {manifest_path} has no val samples")

    def plain(entry, _pos):
        return datapipe.resize_normalize(datapipe.load_image(entry.path))

    feat_parts = [_extract_features(model, train_entries, batch_size, threads, plain)]
    label_parts = [np.array([e.class_index for e in train_entries], np.float32)]
    for copy in range(1, augment_copies + 1):

        def augmented(entry, pos, _copy=copy):
            image = datapipe.load_image(entry.path)
            image = datapipe.augment(image, cfg, datapipe.augment_rng(seed, _copy, pos))
            return datapipe.resize_normalize(image)

        feat_parts.append(
            _extract_features(model, train_entries, batch_size, threads, augmented)
        )
        label_parts.append(label_parts[0])

    features_train = np.concatenate(feat_parts)
    labels_train = np.concatenate(label_parts)
    features_val = _extract_features(model, val_entries, batch_size, threads, plain)
    labels_val = np.array([e.class_index for e in val_entries], np.float32)

    out_features = Path(out_features)
    out_features.parent.mkdir(parents=True, exist_ok=True)
    save_bundle(
        out_features,
        {
            "features.train": features_train,
            "labels.train": labels_train,
            "features.val": features_val,
            "labels.val": labels_val,
        },
        metadata={
            "kind": "feature-cache",
            "class_names": json.dumps(class_names),
            "seed": str(seed),
            "augment_copies": str(augment_copies),
            "backbone_checksum": mobilenet.backbone_checksum(model),
        },
    )
    return ExtractResult(
        features_path=str(out_features),
        n_train=int(features_train.shape[0]),
        n_val=int(features_val.shape[0]),
        feature_dim=int(features_train.shape[1]),
        class_names=class_names,
    )


def load_features(features_path):
    """Read a feature cache; returns (Xtr, ytr, Xval, yval, class_names)."""
    b = load_bundle(features_path)
    missing = [n for n in FEATURE_ENTRIES if n not in b.entries]
    if missing:
        raise DataError(
            f"feature file {features_path} is missing entries: {', '.join(missing)}"
        )
    class_names = json.loads(b.metadata.get("class_names", "[]"))
    return (
        b.entries["features.train"],
        b.entries["labels.train"].astype(np.int64),
        b.entries["features.val"],
        b.entries["labels.val"].astype(np.int64),
        class_names,
    )


def train(
    features_path,
    out_checkpoint,
    out_history=None,
    cfg: TrainConfig | None = None,
) -> TrainResult:
    """Train the head on cached features; write checkpoint and history file."""
    cfg = cfg or TrainConfig()
    x_train, y_train, x_val, y_val, class_names = load_features(features_path)
    num_classes = len(class_names) if class_names else None
    params, history = head_mod.train_head(
        x_train, y_train, x_val, y_val, cfg, num_classes=num_classes
    )
    if not class_names:
        class_names = [str(i) for i in range(params.num_classes)]

    out_checkpoint = Path(out_checkpoint)
    out_checkpoint.parent.mkdir(parents=True, exist_ok=True)
    head_mod.save_checkpoint(
        out_checkpoint,
        params,
        class_names,
        cfg,
        extra_metadata={"best_epoch": str(history.best_epoch)},
    )
    if out_history is not None:
        Path(out_history).write_text(history_lines(history), encoding="utf-8")
    return TrainResult(
        checkpoint=str(out_checkpoint), history=history, class_names=class_names
    )


def history_lines(history: TrainHistory) -> str:
    """Epoch-keyed TSV of accuracy and loss, ending with the best epoch."""
    lines = ["epoch\ttrain_loss\ttrain_accuracy\tval_loss\tval_accuracy"]
    for r in history.epochs:
        lines.append(
            f"{r.epoch}\t{r.train_loss:.6f}\t{r.train_accuracy:.6f}"
            f"\t{r.val_loss:.6f}\t{r.val_accuracy:.6f}"
        )
    lines.append(f"# best_epoch = {history.best_epoch}")
    return "\n".join(lines) + "\n"


def _manifest_samples(entries: list[ManifestEntry], role: str) -> list[Sample]:
    picked = [e for e in entries if e.role == role]
    return [
        Sample(
            image=datapipe.load_image(e.path),
            class_index=e.class_index,
            class_name=e.class_name,
            source_path=e.path,
        )
        for e in picked
    ]


def evaluate(
    manifest_path,
    weights_path,
    checkpoint_path,
    subset: str = "val",
    batch_size: int = 32,
) -> EvalReport:
    """Evaluate a checkpoint against one manifest partition."""
    if subset not in datapipe.MANIFEST_ROLES:
        raise ConfigError(f"subset must be one of {datapipe.MANIFEST_ROLES}, got {subset!r}")
    entries, class_names = datapipe.read_manifest(manifest_path)
    model = CACHE.backbone(weights_path)
    params, ckpt_names = CACHE.head(checkpoint_path)
    if len(class_names) != params.num_classes:
        raise ConfigError(
            f"checkpoint was trained on {params.num_classes} classes but the "
            f"manifest lists {len(class_names)}"
        )
    split_ds = SplitDataset(
        train=_manifest_samples(entries, "train") if subset == "train" else [],
        val=_manifest_samples(entries, "val") if subset == "val" else [],
        class_names=ckpt_names or class_names,
        seed=0,
    )
    return metrics.evaluate(model, params, split_ds, subset=subset, batch_size=batch_size)


def predict_image(
    image_path, weights_path, checkpoint_path, top_k: int = 5
) -> list[tuple[str, float]]:
    """Ranked (class_name, probability) pairs for one image file."""
    if top_k < 1:
        raise ConfigError(f"top_k must be >= 1, got {top_k}")
    model = CACHE.backbone(weights_path)
    params, class_names = CACHE.head(checkpoint_path)
    image = datapipe.load_image(image_path)
    feats = mobilenet.forward_features(model, datapipe.resize_normalize(image))
    _, probs = head_mod.predict(params, feats)
    row = probs[0]
    order = np.argsort(-row, kind="stable")[: min(top_k, row.shape[0])]
    return [(class_names[i], float(row[i])) for i in order]


def load_frames_dir(frames_dir, limit: int | None = None) -> list[np.ndarray]:
    """Decode every image in a directory, lexicographic filename order."""
    root = Path(frames_dir)
    if not root.is_dir():
        raise DataError(f"frames directory {root} does not exist")
    paths = sorted(
        p
        for p in root.iterdir()
        if p.is_file() and p.suffix.lower() in datapipe.IMAGE_EXTENSIONS
    )
    if limit is not None:
        paths = paths[:limit]
    if not paths:
        raise DataError(f"frames directory {root} holds no images")
    return [datapipe.load_image(p) for p in paths]


def bench(
    frames_dir, weights_path, checkpoint_path, warmup: int = 10, limit: int | None = None
) -> LatencyReport:
    model = CACHE.backbone(weights_path)
    params, _ = CACHE.head(checkpoint_path)
    frames = load_frames_dir(frames_dir, limit=limit)
    return metrics.bench_latency(model, params, frames, warmup=warmup)


def classify_frame(weights_path, checkpoint_path, frame: np.ndarray) -> FramePrediction:
    """One-frame inference with its wall-clock latency."""
    model = CACHE.backbone(weights_path)
    params, class_names = CACHE.head(checkpoint_path)
    start = time.perf_counter()
    feats = mobilenet.forward_features(model, datapipe.resize_normalize(frame))
    indices, probs = head_mod.predict(params, feats)
    latency_ms = (time.perf_counter() - start) * 1000.0
    idx = int(indices[0])
    return FramePrediction(
        class_name=class_names[idx],
        probability=float(probs[0, idx]),
        latency_ms=latency_ms,
    )
