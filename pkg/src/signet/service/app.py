"""FastAPI application exposing the pipeline operations.

Every endpoint is a thin wrapper over signet.pipeline; loaded backbones and
checkpoints are cached across requests. Domain errors map to HTTP status
codes: input problems (bad config, data, file format, malformed frames)
become 400, runtime failures (shape, numeric, state) become 500, both with
a JSON body naming the error type.
"""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI, Query, Request
from fastapi.responses import JSONResponse

import signet
from signet import pipeline
from signet.datapipe import AugmentConfig
from signet.errors import INPUT_ERRORS, ProtocolError, SignetError
from signet.head import TrainConfig
from signet.service import schemas

app = FastAPI(title="signet", version=signet.__version__)


@app.exception_handler(SignetError)
async def signet_error_handler(_request: Request, exc: SignetError):
    status = 400 if isinstance(exc, INPUT_ERRORS) else 500
    return JSONResponse(
        status_code=status,
        content={"error": type(exc).__name__, "message": str(exc)},
    )


@app.get("/healthz", response_model=schemas.HealthResponse)
def healthz():
    return schemas.HealthResponse(status="ok", version=signet.__version__)


@app.post("/prepare", response_model=schemas.PrepareResponse)
def prepare(req: schemas.PrepareRequest):
    result = pipeline.prepare(
        req.dataset_root, req.out_manifest, seed=req.seed, ratio=req.ratio
    )
    return schemas.PrepareResponse(
        manifest=result.manifest,
        class_names=result.class_names,
        train_counts=result.train_counts,
        val_counts=result.val_counts,
        skipped=result.skipped,
    )


@app.post("/extract", response_model=schemas.ExtractResponse)
def extract(req: schemas.ExtractRequest):
    aug_cfg = None
    if req.augment is not None:
        aug_cfg = AugmentConfig(
            rotation_deg=req.augment.rotation_deg,
            shift_frac=req.augment.shift_frac,
            zoom_frac=req.augment.zoom_frac,
            hflip=req.augment.hflip,
        )
    result = pipeline.extract(
        req.manifest,
        req.weights,
        req.out_features,
        seed=req.seed,
        augment_copies=req.augment_copies,
        aug_cfg=aug_cfg,
        batch_size=req.batch_size,
        threads=req.threads,
    )
    return schemas.ExtractResponse(
        features=result.features_path,
        n_train=result.n_train,
        n_val=result.n_val,
        feature_dim=result.feature_dim,
        class_names=result.class_names,
    )


@app.post("/train", response_model=schemas.TrainResponse)
def train(req: schemas.TrainRequest):
    cfg = TrainConfig(
        epochs=req.epochs,
        batch_size=req.batch_size,
        learning_rate=req.learning_rate,
        beta1=req.beta1,
        beta2=req.beta2,
        eps_adam=req.eps_adam,
        patience=req.patience,
        seed=req.seed,
    )
    result = pipeline.train(
        req.features, req.out_checkpoint, out_history=req.out_history, cfg=cfg
    )
    return schemas.TrainResponse(
        checkpoint=result.checkpoint,
        best_epoch=result.history.best_epoch,
        history=[schemas.EpochRow(**r.__dict__) for r in result.history.epochs],
        class_names=result.class_names,
    )


@app.post("/evaluate", response_model=schemas.EvalResponse)
def evaluate(req: schemas.EvalRequest):
    report = pipeline.evaluate(
        req.manifest,
        req.weights,
        req.checkpoint,
        subset=req.subset,
        batch_size=req.batch_size,
    )
    cm = report.confusion
    per_class = [
        schemas.ClassStatsRow(class_name=name, **cm.class_stats(i).__dict__)
        for i, name in enumerate(cm.class_names)
    ]
    return schemas.EvalResponse(
        accuracy=report.accuracy,
        mean_loss=report.mean_loss,
        n_samples=report.n_samples,
        class_names=cm.class_names,
        confusion=cm.counts.tolist(),
        per_class=per_class,
    )


@app.post("/predict", response_model=schemas.PredictResponse)
def predict(req: schemas.PredictRequest):
    ranking = pipeline.predict_image(
        req.image, req.weights, req.checkpoint, top_k=req.top_k
    )
    return schemas.PredictResponse(
        ranking=[
            schemas.RankedClass(class_name=name, probability=prob)
            for name, prob in ranking
        ]
    )


@app.post("/bench", response_model=schemas.BenchResponse)
def bench(req: schemas.BenchRequest):
    report = pipeline.bench(
        req.frames_dir, req.weights, req.checkpoint, warmup=req.warmup, limit=req.limit
    )
    summary = report.summary()
    return schemas.BenchResponse(
        durations_ms=report.durations_ms,
        warmup_frames=report.warmup_frames,
        mean_ms=summary["mean_ms"],
        median_ms=summary["median_ms"],
        p95_ms=summary["p95_ms"],
        p99_ms=summary["p99_ms"],
        environment=report.environment,
    )


@app.post("/frame", response_model=schemas.FrameResponse)
async def frame(
    request: Request,
    width: int = Query(ge=1),
    height: int = Query(ge=1),
    frame_id: int = Query(ge=0),
    weights: str = Query(),
    checkpoint: str = Query(),
):
    """Classify one raw RGB frame posted as width*height*3 bytes."""
    body = await request.body()
    expected = width * height * 3
    if len(body) != expected:
        raise ProtocolError(
            f"frame payload is {len(body)} bytes; width {width} x height {height} "
            f"x 3 needs {expected}"
        )
    image = np.frombuffer(body, dtype=np.uint8).reshape(height, width, 3)
    result = pipeline.classify_frame(weights, checkpoint, image)
    return schemas.FrameResponse(
        frame_id=frame_id,
        class_name=result.class_name,
        probability=result.probability,
        latency_ms=result.latency_ms,
    )
