"""MobileNetV2 backbone assembled from the low-level kernels.

The backbone is a frozen feature extractor: weights arrive via a bundle,
batch norm is folded into conv kernels by default, and forward passes are
pure functions of the input. The optional classification head (dense 1024
relu -> dense num_classes -> softmax) hangs off the pooled 1280-d features.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from signet.bundle import WeightBundle
from signet.errors import ConfigError, ShapeError, StateError
from signet.head import HeadParams, init_head
from signet.nnops.kernels import (
    BatchNormParams,
    ConvSpec,
    as_f32,
    batchnorm,
    conv2d,
    conv_output_size,
    dense,
    depthwise_conv2d,
    fold_batchnorm,
    global_avg_pool,
    relu6,
    require_finite,
    softmax,
)
from signet.rng import derive_rng

# Inverted-residual schedule: (expansion t, out channels c, repeats n, first stride s).
BLOCK_SCHEDULE = (
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
)

VALID_WIDTHS = (0.35, 0.5, 0.75, 1.0, 1.3, 1.4)
INPUT_SIZE = 224
BN_EPSILON = 1e-3
BN_SUFFIXES = ("bn.gamma", "bn.beta", "bn.mean", "bn.variance")

# Feature-map side length after each stride-2 stage, for 224x224 input.
SPATIAL_LEDGER = (112, 56, 28, 14, 7)


def _make_divisible(value: float, divisor: int = 8) -> int:
    """Round channel counts to the nearest multiple of 8, never below 90%."""
    new_v = max(divisor, int(value + divisor / 2) // divisor * divisor)
    if new_v < 0.9 * value:
        new_v += divisor
    return new_v


@dataclass
class ConvUnit:
    """One conv + batch norm + optional relu6, identified by its weight-name stem."""

    name: str
    kind: str  # "standard" or "depthwise"
    kernel_size: int
    stride: int
    in_channels: int
    out_channels: int
    activation: str  # "relu6" or "none"
    spec: ConvSpec | None = None
    bn: BatchNormParams | None = None


@dataclass
class Block:
    index: int
    expand: ConvUnit | None  # absent when the expansion factor is 1
    depthwise: ConvUnit
    project: ConvUnit
    use_residual: bool

    def units(self):
        return [u for u in (self.expand, self.depthwise, self.project) if u is not None]


@dataclass
class Model:
    width: float
    feature_dim: int
    input_size: int
    stem: ConvUnit
    blocks: list[Block]
    final: ConvUnit
    head: HeadParams | None = None
    class_names: list[str] | None = None
    loaded: bool = False
    bn_folded: bool = False
    metadata: dict[str, str] = field(default_factory=dict)

    def units(self):
        out = [self.stem]
        for block in self.blocks:
            out.extend(block.units())
        out.append(self.final)
        return out


def build_model(width: float = 1.0, num_classes: int | None = None) -> Model:
    """Assemble the layer graph; weights are attached later by load_weights.

    With num_classes given, a freshly initialized head (seed 0) is attached
    so classify works immediately; training or a checkpoint replaces it.
    """
    if width not in VALID_WIDTHS:
        raise ConfigError(f"width {width} not one of {VALID_WIDTHS}")

    stem_out = _make_divisible(32 * width)
    stem = ConvUnit("stem.conv", "standard", 3, 2, 3, stem_out, "relu6")

    blocks = []
    in_ch = stem_out
    index = 0
    for t, c, n, s in BLOCK_SCHEDULE:
        out_ch = _make_divisible(c * width)
        for repeat in range(n):
            stride = s if repeat == 0 else 1
            hidden = in_ch * t
            prefix = f"block{index}"
            expand = None
            if t != 1:
                expand = ConvUnit(
                    f"{prefix}.expand", "standard", 1, 1, in_ch, hidden, "relu6"
                )
            depthwise = ConvUnit(
                f"{prefix}.depthwise", "depthwise", 3, stride, hidden, hidden, "relu6"
            )
            project = ConvUnit(
                f"{prefix}.project", "standard", 1, 1, hidden, out_ch, "none"
            )
            blocks.append(
                Block(
                    index=index,
                    expand=expand,
                    depthwise=depthwise,
                    project=project,
                    use_residual=stride == 1 and in_ch == out_ch,
                )
            )
            in_ch = out_ch
            index += 1

    feature_dim = _make_divisible(1280 * width) if width > 1.0 else 1280
    final = ConvUnit("final.conv", "standard", 1, 1, in_ch, feature_dim, "relu6")

    model = Model(
        width=width,
        feature_dim=feature_dim,
        input_size=INPUT_SIZE,
        stem=stem,
        blocks=blocks,
        final=final,
    )
    assert _spatial_trace(model, INPUT_SIZE) == SPATIAL_LEDGER

    if num_classes is not None:
        model.head = init_head(num_classes, seed=0, feature_dim=feature_dim)
        model.class_names = [str(i) for i in range(num_classes)]
    return model


def _spatial_trace(model: Model, size: int) -> tuple[int, ...]:
    """Side lengths recorded after every stride-2 unit."""
    trace = []
    for unit in model.units():
        size = conv_output_size(size, unit.kernel_size, unit.stride, "same")
        if unit.stride == 2:
            trace.append(size)
    return tuple(trace)


def parameter_shapes(model: Model) -> dict[str, tuple[int, ...]]:
    """Every backbone weight name mapped to its expected dims, in graph order."""
    shapes: dict[str, tuple[int, ...]] = {}
    for unit in model.units():
        k = unit.kernel_size
        if unit.kind == "depthwise":
            kernel_shape = (k, k, unit.in_channels, 1)
        else:
            kernel_shape = (k, k, unit.in_channels, unit.out_channels)
        shapes[f"{unit.name}.kernel"] = kernel_shape
        for suffix in BN_SUFFIXES:
            shapes[f"{unit.name}.{suffix}"] = (unit.out_channels,)
    return shapes


def parameter_count(model: Model, include_bn_stats: bool = False) -> int:
    """Trainable-style parameter count: kernels plus gamma/beta.

    BN moving statistics are bookkeeping, not weights; include_bn_stats
    adds them for anyone comparing against a framework's total count.
    """
    total = 0
    for name, shape in parameter_shapes(model).items():
        if not include_bn_stats and (name.endswith(".bn.mean") or name.endswith(".bn.variance")):
            continue
        total += int(np.prod(shape))
    return total


def head_parameter_count(head: HeadParams) -> int:
    return sum(a.size for a in head.astuple())


def load_weights(model: Model, weights: WeightBundle, fold_bn: bool = True) -> Model:
    """Attach backbone weights from a bundle, optionally folding batch norm.

    The bundle must contain exactly one entry per backbone parameter; any
    missing or unexpected names abort with the offending names listed, and
    dim mismatches name the tensor and both shapes. Attached arrays are
    marked read-only. A model can only be loaded once.
    """
    if model.loaded:
        raise StateError("model already has weights loaded")

    expected = parameter_shapes(model)
    missing = [n for n in expected if n not in weights.entries]
    unexpected = [n for n in weights.entries if n not in expected]
    if missing:
        raise ShapeError(f"bundle is missing weights: {', '.join(sorted(missing))}")
    if unexpected:
        raise ShapeError(
            f"bundle has entries the model does not use: {', '.join(sorted(unexpected))}"
        )
    for name, shape in expected.items():
        got = weights.entries[name].shape
        if got != shape:
            raise ShapeError(f"{name}: bundle shape {got} does not match model {shape}")

    for unit in model.units():
        kernel = as_f32(weights.entries[f"{unit.name}.kernel"])
        bn = BatchNormParams(
            gamma=weights.entries[f"{unit.name}.bn.gamma"],
            beta=weights.entries[f"{unit.name}.bn.beta"],
            mean=weights.entries[f"{unit.name}.bn.mean"],
            variance=weights.entries[f"{unit.name}.bn.variance"],
            epsilon=BN_EPSILON,
        )
        spec = ConvSpec(kernel=kernel, stride=unit.stride, padding="same", kind=unit.kind)
        if fold_bn:
            spec = fold_batchnorm(spec, bn)
            unit.bn = None
        else:
            unit.bn = bn
        for arr in (spec.kernel, spec.bias):
            if arr is not None:
                arr.setflags(write=False)
        unit.spec = spec

    model.loaded = True
    model.bn_folded = fold_bn
    model.metadata = dict(weights.metadata)
    return model


def _run_unit(x: np.ndarray, unit: ConvUnit) -> np.ndarray:
    if unit.kind == "depthwise":
        x = depthwise_conv2d(x, unit.spec, validate=False)
    else:
        x = conv2d(x, unit.spec, validate=False)
    if unit.bn is not None:
        x = batchnorm(x, unit.bn)
    if unit.activation == "relu6":
        x = relu6(x)
    return x


def forward_features(model: Model, batch: np.ndarray) -> np.ndarray:
    """Pooled 1280-d features for a (batch, 224, 224, 3) float32 batch in [0, 1]."""
    if not model.loaded:
        raise StateError("model has no weights; call load_weights first")
    batch = as_f32(batch)
    if batch.ndim != 4 or batch.shape[1:] != (INPUT_SIZE, INPUT_SIZE, 3):
        raise ShapeError(
            f"input shape {batch.shape} invalid: the backbone takes "
            f"(batch, {INPUT_SIZE}, {INPUT_SIZE}, 3) RGB images"
        )
    require_finite(batch, "input batch")

    x = _run_unit(batch, model.stem)
    for block in model.blocks:
        inputs = x
        for unit in block.units():
            x = _run_unit(x, unit)
        if block.use_residual:
            x = x + inputs
    x = _run_unit(x, model.final)
    return global_avg_pool(x)


def classify(model: Model, batch: np.ndarray) -> np.ndarray:
    """Per-class probability rows for an image batch; requires an attached head."""
    if model.head is None:
        raise StateError("model has no classification head attached")
    features = forward_features(model, batch)
    hidden = dense(features, model.head.w1, model.head.b1, activation="relu")
    logits = dense(hidden, model.head.w2, model.head.b2, activation="none")
    return softmax(logits)


def attach_head(
    model: Model, head: HeadParams, class_names: list[str] | None = None
) -> Model:
    if head.feature_dim != model.feature_dim:
        raise ShapeError(
            f"head expects {head.feature_dim}-d features, backbone emits "
            f"{model.feature_dim}"
        )
    if class_names is not None and len(class_names) != head.num_classes:
        raise ConfigError(
            f"{len(class_names)} class names for a {head.num_classes}-class head"
        )
    model.head = head
    model.class_names = class_names or [str(i) for i in range(head.num_classes)]
    return model


def random_weight_bundle(model: Model, seed: int = 0) -> WeightBundle:
    """Seeded synthetic backbone weights with activation-friendly scales.

    Kernels are He-scaled normals; batch norm statistics stay near identity
    (variance well above zero) so folded and unfolded paths both remain
    finite through all 17 blocks.
    """
    entries: dict[str, np.ndarray] = {}
    for name, shape in parameter_shapes(model).items():
        rng = derive_rng(seed, "weights", name)
        if name.endswith(".kernel"):
            if ".depthwise." in name:
                fan_in = shape[0] * shape[1]
            else:
                fan_in = shape[0] * shape[1] * shape[2]
            arr = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        elif name.endswith(".bn.gamma"):
            arr = rng.uniform(0.8, 1.2, size=shape)
        elif name.endswith(".bn.variance"):
            arr = rng.uniform(0.5, 1.5, size=shape)
        else:  # beta, mean
            arr = rng.normal(0.0, 0.05, size=shape)
        entries[name] = arr.astype(np.float32)
    return WeightBundle(
        entries=entries, metadata={"producer": "random_weight_bundle", "seed": str(seed)}
    )


def conditioned_weight_bundle(
    model: Model,
    seed: int = 0,
    probe: np.ndarray | None = None,
    noise_frac: float = 0.5,
) -> WeightBundle:
    """Seeded synthetic weights that keep pooled features informative.

    Purely random kernels collapse every input onto nearly the same
    direction after 17 blocks, so features from `random_weight_bundle`
    carry almost no information about the image. This generator instead
    plants an identity tap at each kernel's centre (tiled across channels
    when widths differ) with fan-in-scaled noise mixed in, then runs a
    probe batch through the net and records each unit's observed pre-norm
    channel mean and variance as its batch norm statistics. That is the
    same role those statistics play in a trained checkpoint: activations
    stay in range at every depth and the pooled output still separates
    inputs. Useful wherever transfer-learning behaviour must be exercised
    without shipping trained weights.

    The probe defaults to blocky seeded noise images; pass a (n, 224,
    224, 3) float32 batch in [0, 1] to calibrate against other data.
    """
    if probe is None:
        rng = derive_rng(seed, "probe")
        coarse = rng.uniform(0.0, 1.0, size=(8, 28, 28, 3)).astype(np.float32)
        probe = coarse.repeat(8, axis=1).repeat(8, axis=2)
    probe = as_f32(probe)
    if probe.ndim != 4 or probe.shape[1:] != (INPUT_SIZE, INPUT_SIZE, 3):
        raise ShapeError(
            f"probe shape {probe.shape} invalid: need "
            f"(n, {INPUT_SIZE}, {INPUT_SIZE}, 3)"
        )
    if noise_frac < 0:
        raise ConfigError(f"noise_frac must be >= 0, got {noise_frac}")

    kernels: dict[str, np.ndarray] = {}
    residual_projects = {b.project.name for b in model.blocks if b.use_residual}
    for name, shape in parameter_shapes(model).items():
        if not name.endswith(".kernel"):
            continue
        rng = derive_rng(seed, "weights", name)
        kh, kw, dim_a, dim_b = shape
        fan_in = kh * kw if ".depthwise." in name else kh * kw * dim_a
        k = rng.normal(0.0, noise_frac * np.sqrt(2.0 / fan_in), size=shape)
        cy, cx = kh // 2, kw // 2
        unit_name = name[: -len(".kernel")]
        if ".depthwise." in name:
            k[cy, cx, :, 0] += 1.0
        elif unit_name not in residual_projects:
            # Residual projections stay noise-only: the skip connection
            # already carries the identity for those blocks.
            cin, cout = dim_a, dim_b
            if cout >= cin:
                out_idx = np.arange(cout)
                k[cy, cx, out_idx % cin, out_idx] += 1.0
            else:
                in_idx = np.arange(cin)
                k[cy, cx, in_idx, in_idx % cout] += cout / cin
        kernels[name] = k.astype(np.float32)

    entries = dict(kernels)

    def calibrate(x: np.ndarray, unit: ConvUnit) -> np.ndarray:
        spec = ConvSpec(
            kernel=kernels[unit.name + ".kernel"],
            stride=unit.stride,
            padding="same",
            kind=unit.kind,
        )
        if unit.kind == "depthwise":
            y = depthwise_conv2d(x, spec, validate=False)
        else:
            y = conv2d(x, spec, validate=False)
        mean = y.mean(axis=(0, 1, 2)).astype(np.float32)
        variance = np.maximum(y.var(axis=(0, 1, 2)), 1e-4).astype(np.float32)
        entries[unit.name + ".bn.gamma"] = np.ones_like(mean)
        entries[unit.name + ".bn.beta"] = np.zeros_like(mean)
        entries[unit.name + ".bn.mean"] = mean
        entries[unit.name + ".bn.variance"] = variance
        bn = BatchNormParams(
            gamma=np.ones_like(mean),
            beta=np.zeros_like(mean),
            mean=mean,
            variance=variance,
            epsilon=BN_EPSILON,
        )
        y = batchnorm(y, bn)
        if unit.activation == "relu6":
            y = relu6(y)
        return y

    x = calibrate(probe, model.stem)
    for block in model.blocks:
        inputs = x
        for unit in block.units():
            x = calibrate(x, unit)
        if block.use_residual:
            x = x + inputs
    calibrate(x, model.final)

    return WeightBundle(
        entries=entries,
        metadata={"producer": "conditioned_weight_bundle", "seed": str(seed)},
    )


def backbone_checksum(model: Model) -> str:
    """SHA-256 over all attached backbone tensors, in deterministic name order.

    Changes iff some backbone weight changes; used to prove the extractor
    stays frozen across training runs.
    """
    if not model.loaded:
        raise StateError("model has no weights; nothing to checksum")
    digest = hashlib.sha256()
    for unit in model.units():
        digest.update(unit.name.encode())
        digest.update(np.ascontiguousarray(unit.spec.kernel).tobytes())
        if unit.spec.bias is not None:
            digest.update(np.ascontiguousarray(unit.spec.bias).tobytes())
        if unit.bn is not None:
            for arr in (unit.bn.gamma, unit.bn.beta, unit.bn.mean, unit.bn.variance):
                digest.update(np.ascontiguousarray(arr).tobytes())
    return digest.hexdigest()
