"""Request and response bodies for the HTTP service.

Paths in requests refer to the server's filesystem; the bundled CLI targets
a server sharing its filesystem (or runs the app in-process).
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class PrepareRequest(BaseModel):
    dataset_root: str
    out_manifest: str
    seed: int = 0
    ratio: float = 0.8


class PrepareResponse(BaseModel):
    manifest: str
    class_names: list[str]
    train_counts: dict[str, int]
    val_counts: dict[str, int]
    skipped: list[tuple[str, str]] = Field(default_factory=list)


class AugmentOverrides(BaseModel):
    rotation_deg: float = 20.0
    shift_frac: float = 0.1
    zoom_frac: float = 0.2
    hflip: bool = True


class ExtractRequest(BaseModel):
    manifest: str
    weights: str
    out_features: str
    seed: int = 0
    augment_copies: int = 0
    augment: AugmentOverrides | None = None
    batch_size: int = 32
    threads: int = 1


class ExtractResponse(BaseModel):
    features: str
    n_train: int
    n_val: int
    feature_dim: int
    class_names: list[str]


class TrainRequest(BaseModel):
    features: str
    out_checkpoint: str
    out_history: str | None = None
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-7
    patience: int = 3
    seed: int = 0


class EpochRow(BaseModel):
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float


class TrainResponse(BaseModel):
    checkpoint: str
    best_epoch: int
    history: list[EpochRow]
    class_names: list[str]


class EvalRequest(BaseModel):
    manifest: str
    weights: str
    checkpoint: str
    subset: str = "val"
    batch_size: int = 32


class ClassStatsRow(BaseModel):
    class_name: str
    tp: int
    fp: int
    fn: int
    tn: int


class EvalResponse(BaseModel):
    accuracy: float
    mean_loss: float
    n_samples: int
    class_names: list[str]
    confusion: list[list[int]]
    per_class: list[ClassStatsRow]


class PredictRequest(BaseModel):
    image: str
    weights: str
    checkpoint: str
    top_k: int = 5


class RankedClass(BaseModel):
    class_name: str
    probability: float


class PredictResponse(BaseModel):
    ranking: list[RankedClass]


class BenchRequest(BaseModel):
    frames_dir: str
    weights: str
    checkpoint: str
    warmup: int = 10
    limit: int | None = None


class BenchResponse(BaseModel):
    durations_ms: list[float]
    warmup_frames: int
    mean_ms: float
    median_ms: float
    p95_ms: float
    p99_ms: float
    environment: str


class FrameResponse(BaseModel):
    frame_id: int
    class_name: str
    probability: float
    latency_ms: float


class HealthResponse(BaseModel):
    status: str
    version: str


class ErrorBody(BaseModel):
    error: str
    message: str
