"""Command-line client for the gesture-classification service.

Every subcommand talks to the HTTP API. With --server (or SIGNET_SERVER)
the request goes to a running server that shares this machine's
filesystem; otherwise the app is run in-process, so the CLI works
standalone with identical behavior. Exit codes: 0 success, 1 runtime
failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import os
import struct
import sys
import tempfile
import time
import warnings
from pathlib import Path

import httpx
import numpy as np

from signet import metrics
from signet.errors import INPUT_ERRORS, ProtocolError, SignetError

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
FRAME_HEADER = struct.Struct("<IIII")  # width, height, frame_id, reserved=0
MAX_FRAME_BYTES = 64 * 1024 * 1024


class CommandFailed(Exception):
    def __init__(self, message: str, exit_code: int):
        super().__init__(message)
        self.exit_code = exit_code


def make_client(server: str | None):
    if server:
        return httpx.Client(base_url=server, timeout=600.0)
    # The import warns about the httpx version it was built against; that is
    # upstream's business, not something the user can act on from here.
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message=r".*starlette\.testclient.*")
        from fastapi.testclient import TestClient

    from signet.service.app import app

    return TestClient(app, raise_server_exceptions=False)


def call(client, method: str, path: str, **kwargs) -> dict:
    response = client.request(method, path, **kwargs)
    if response.status_code >= 400:
        try:
            body = response.json()
            message = body.get("message") or str(body.get("detail", body))
            error = body.get("error", f"HTTP {response.status_code}")
        except ValueError:
            message = response.text
            error = f"HTTP {response.status_code}"
        code = EXIT_RUNTIME if response.status_code >= 500 else EXIT_USAGE
        raise CommandFailed(f"{error}: {message}", code)
    return response.json()


def cmd_prepare(args, client) -> int:
    result = call(
        client,
        "POST",
        "/prepare",
        json={
            "dataset_root": args.data,
            "out_manifest": args.out,
            "seed": args.seed,
            "ratio": args.ratio,
        },
    )
    print("class\ttrain\tval")
    for name in result["class_names"]:
        print(f"{name}\t{result['train_counts'][name]}\t{result['val_counts'][name]}")
    for path, reason in result["skipped"]:
        print(f"skipped {path}: {reason}", file=sys.stderr)
    print(f"manifest written: {result['manifest']}")
    return EXIT_OK


def cmd_extract(args, client) -> int:
    body = {
        "manifest": args.manifest,
        "weights": args.weights,
        "out_features": args.out,
        "seed": args.seed,
        "augment_copies": args.augment,
        "batch_size": args.batch_size,
        "threads": args.threads,
    }
    if args.rotation is not None or args.shift is not None or args.zoom is not None or args.no_hflip:
        body["augment"] = {
            "rotation_deg": args.rotation if args.rotation is not None else 20.0,
            "shift_frac": args.shift if args.shift is not None else 0.1,
            "zoom_frac": args.zoom if args.zoom is not None else 0.2,
            "hflip": not args.no_hflip,
        }
    result = call(client, "POST", "/extract", json=body)
    print(
        f"features written: {result['features']} "
        f"(train {result['n_train']}, val {result['n_val']}, "
        f"dim {result['feature_dim']})"
    )
    return EXIT_OK


def cmd_train(args, client) -> int:
    history_path = args.history or args.out + ".history.tsv"
    result = call(
        client,
        "POST",
        "/train",
        json={
            "features": args.features,
            "out_checkpoint": args.out,
            "out_history": history_path,
            "epochs": args.epochs,
            "batch_size": args.batch_size,
            "learning_rate": args.lr,
            "beta1": args.beta1,
            "beta2": args.beta2,
            "eps_adam": args.eps,
            "patience": args.patience,
            "seed": args.seed,
        },
    )
    print("epoch\ttrain_accuracy\tval_accuracy\ttrain_loss\tval_loss")
    for row in result["history"]:
        print(
            f"{row['epoch']}\t{row['train_accuracy']:.4f}\t{row['val_accuracy']:.4f}"
            f"\t{row['train_loss']:.4f}\t{row['val_loss']:.4f}"
        )
    print(f"best epoch: {result['best_epoch']}")
    print(f"checkpoint written: {result['checkpoint']}")
    print(f"history written: {history_path}")
    return EXIT_OK


def _rebuild_confusion(result: dict) -> metrics.ConfusionMatrix:
    return metrics.ConfusionMatrix(
        counts=np.array(result["confusion"], dtype=np.int64),
        class_names=result["class_names"],
    )


def cmd_eval(args, client) -> int:
    result = call(
        client,
        "POST",
        "/evaluate",
        json={
            "manifest": args.manifest,
            "weights": args.weights,
            "checkpoint": args.checkpoint,
            "subset": args.subset,
            "batch_size": args.batch_size,
        },
    )
    cm = _rebuild_confusion(result)
    report = metrics.EvalReport(
        confusion=cm,
        accuracy=result["accuracy"],
        mean_loss=result["mean_loss"],
        n_samples=result["n_samples"],
    )
    prefix = Path(args.out_prefix or args.checkpoint + ".eval")
    prefix.parent.mkdir(parents=True, exist_ok=True)
    Path(f"{prefix}.kv").write_text(metrics.eval_report_kv(report), encoding="utf-8")
    Path(f"{prefix}.confusion.csv").write_text(
        metrics.confusion_csv(cm), encoding="utf-8"
    )
    Path(f"{prefix}.txt").write_text(metrics.eval_report_text(report), encoding="utf-8")
    print(f"accuracy: {result['accuracy']:.4f}")
    print(f"mean loss: {result['mean_loss']:.4f}")
    print(f"reports written: {prefix}.kv, {prefix}.confusion.csv, {prefix}.txt")
    return EXIT_OK


def cmd_predict(args, client) -> int:
    result = call(
        client,
        "POST",
        "/predict",
        json={
            "image": args.image,
            "weights": args.weights,
            "checkpoint": args.checkpoint,
            "top_k": args.top_k,
        },
    )
    for rank, row in enumerate(result["ranking"], start=1):
        print(f"{rank}\t{row['class_name']}\t{row['probability']:.6f}")
    return EXIT_OK


def read_stream_frames(stream):
    """Yield (frame_id, width, height, payload) from a length-prefixed stream."""
    while True:
        header = stream.read(FRAME_HEADER.size)
        if not header:
            return
        if len(header) < FRAME_HEADER.size:
            raise ProtocolError(
                f"truncated frame header: got {len(header)} of {FRAME_HEADER.size} bytes"
            )
        width, height, frame_id, reserved = FRAME_HEADER.unpack(header)
        if reserved != 0:
            raise ProtocolError(f"frame header reserved field is {reserved}, expected 0")
        if width == 0 or height == 0:
            raise ProtocolError(f"frame {frame_id} has zero dimension {width}x{height}")
        need = width * height * 3
        if need > MAX_FRAME_BYTES:
            raise ProtocolError(
                f"frame {frame_id} claims {need} bytes, above the "
                f"{MAX_FRAME_BYTES}-byte limit"
            )
        payload = stream.read(need)
        if len(payload) < need:
            raise ProtocolError(
                f"frame {frame_id} payload truncated: got {len(payload)} of {need} bytes"
            )
        yield frame_id, width, height, payload


def _dir_frames(source: str):
    """Yield stream-style frames from a directory of images, in name order."""
    from signet import pipeline

    for frame_id, image in enumerate(pipeline.load_frames_dir(source)):
        h, w = image.shape[:2]
        yield frame_id, w, h, np.ascontiguousarray(image).tobytes()


def _frame_source(source: str):
    if source == "-":
        return read_stream_frames(sys.stdin.buffer)
    return _dir_frames(source)


def cmd_stream(args, client) -> int:
    for frame_id, width, height, payload in _frame_source(args.source):
        start = time.perf_counter()
        result = call(
            client,
            "POST",
            "/frame",
            params={
                "width": width,
                "height": height,
                "frame_id": frame_id,
                "weights": args.weights,
                "checkpoint": args.checkpoint,
            },
            content=payload,
            headers={"content-type": "application/octet-stream"},
        )
        latency_ms = (time.perf_counter() - start) * 1000.0
        print(
            f"{result['frame_id']}\t{result['class_name']}"
            f"\t{result['probability']:.6f}\t{latency_ms:.3f}",
            flush=True,
        )
    return EXIT_OK


def cmd_bench(args, client) -> int:
    frames_dir = args.frames
    tmp = None
    try:
        if frames_dir == "-":
            from PIL import Image

            tmp = tempfile.TemporaryDirectory(prefix="signet-bench-")
            count = 0
            for frame_id, width, height, payload in read_stream_frames(sys.stdin.buffer):
                arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
                Image.fromarray(arr).save(Path(tmp.name) / f"frame{count:06d}.png")
                count += 1
            frames_dir = tmp.name
        result = call(
            client,
            "POST",
            "/bench",
            json={
                "frames_dir": frames_dir,
                "weights": args.weights,
                "checkpoint": args.checkpoint,
                "warmup": args.warmup,
                "limit": args.limit,
            },
        )
    finally:
        if tmp is not None:
            tmp.cleanup()

    report = metrics.LatencyReport(
        durations_ms=result["durations_ms"],
        warmup_frames=result["warmup_frames"],
        environment=result["environment"],
    )
    prefix = Path(args.out_prefix or args.checkpoint + ".bench")
    prefix.parent.mkdir(parents=True, exist_ok=True)
    Path(f"{prefix}.kv").write_text(metrics.latency_report_kv(report), encoding="utf-8")
    Path(f"{prefix}.raw.txt").write_text(
        metrics.latency_raw_lines(report), encoding="utf-8"
    )
    Path(f"{prefix}.txt").write_text(
        metrics.latency_report_text(report), encoding="utf-8"
    )
    print(
        f"mean {result['mean_ms']:.2f} ms  median {result['median_ms']:.2f} ms  "
        f"p95 {result['p95_ms']:.2f} ms over {len(result['durations_ms'])} frames"
    )
    print(f"reports written: {prefix}.kv, {prefix}.raw.txt, {prefix}.txt")
    return EXIT_OK


def cmd_serve(args, _client) -> int:
    import uvicorn

    uvicorn.run(
        "signet.service.app:app", host=args.host, port=args.port, log_level="info"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="signet",
        description="Sign-language gesture classification pipeline client.",
    )
    parser.add_argument(
        "--server",
        default=os.environ.get("SIGNET_SERVER"),
        help="service URL; omit to run the service in-process",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="split a dataset tree into a manifest")
    p.add_argument("--data", required=True, help="dataset root (folder per class)")
    p.add_argument("--out", required=True, help="manifest path to write")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ratio", type=float, default=0.8)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("extract", help="cache backbone features for a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--weights", required=True, help=".slrw backbone bundle")
    p.add_argument("--out", required=True, help="feature file to write")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--augment",
        type=int,
        default=0,
        metavar="N",
        help="extra augmented copies per training image",
    )
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--rotation", type=float, default=None, help="rotation bound, degrees")
    p.add_argument("--shift", type=float, default=None, help="shift bound, fraction")
    p.add_argument("--zoom", type=float, default=None, help="zoom bound, fraction")
    p.add_argument("--no-hflip", action="store_true")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train the classification head on features")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--history", default=None, help="history TSV (default <out>.history.tsv)")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--beta1", type=float, default=0.9)
    p.add_argument("--beta2", type=float, default=0.999)
    p.add_argument("--eps", type=float, default=1e-7)
    p.add_argument("--patience", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest partition")
    p.add_argument("--manifest", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--subset", choices=["train", "val"], default="val")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--out-prefix", default=None, help="report prefix (default <checkpoint>.eval)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="classify one image file")
    p.add_argument("--image", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--top-k", type=int, default=5)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("bench", help="measure per-frame latency")
    p.add_argument(
        "--frames", required=True, help="directory of frames, or - for a stdin stream"
    )
    p.add_argument("--weights", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--out-prefix", default=None, help="report prefix (default <checkpoint>.bench)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("stream", help="classify frames line by line")
    p.add_argument(
        "--source", default="-", help="directory of frames, or - for a stdin stream"
    )
    p.add_argument("--weights", required=True)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8787)
    p.set_defaults(func=cmd_serve)

    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    client = None
    try:
        if args.func is not cmd_serve:
            client = make_client(args.server)
        return args.func(args, client)
    except CommandFailed as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except SignetError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE if isinstance(e, INPUT_ERRORS) else EXIT_RUNTIME
    except httpx.HTTPError as e:
        print(f"error: cannot reach server: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        if client is not None:
            client.close()


def main() -> None:
    sys.exit(run())
