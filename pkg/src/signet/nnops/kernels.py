"""Vectorized float32 CNN kernels (production path)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from signet.errors import ConfigError, NumericError, ShapeError

PADDINGS = ("same", "valid")
CONV_KINDS = ("standard", "depthwise")


def as_f32(x) -> np.ndarray:
    """Contiguous float32 view/copy of array-like input."""
    return np.ascontiguousarray(x, dtype=np.float32)


def require_finite(x: np.ndarray, what: str) -> None:
    if not np.isfinite(x).all():
        raise NumericError(f"{what} contains non-finite values")


def conv_output_size(n: int, kernel: int, stride: int, padding: str) -> int:
    """Spatial output extent for one axis."""
    if padding not in PADDINGS:
        raise ConfigError(f"unknown padding {padding!r}")
    if padding == "same":
        return -(-n // stride)  # ceil(n / stride)
    out = (n - kernel) // stride + 1
    if out < 1:
        raise ShapeError(
            f"valid-padding conv: kernel extent {kernel} exceeds input extent {n}"
        )
    return out


def _same_pad(n: int, kernel: int, stride: int) -> tuple[int, int]:
    # Asymmetric: the extra pixel goes to the trailing edge (bottom/right),
    # matching the convention the public pre-trained weights assume.
    out = -(-n // stride)
    total = max((out - 1) * stride + kernel - n, 0)
    return total // 2, total - total // 2


@dataclass(frozen=True)
class ConvSpec:
    """A convolution's parameters: kernel, optional bias, stride, padding.

    kernel is (kh, kw, in_ch, out_ch) for kind="standard" and
    (kh, kw, ch, 1) for kind="depthwise".
    """

    kernel: np.ndarray
    bias: np.ndarray | None = None
    stride: int = 1
    padding: str = "same"
    kind: str = "standard"

    def __post_init__(self):
        object.__setattr__(self, "kernel", as_f32(self.kernel))
        if self.bias is not None:
            object.__setattr__(self, "bias", as_f32(self.bias))
        if self.kernel.ndim != 4:
            raise ShapeError(f"conv kernel must be rank 4, got rank {self.kernel.ndim}")
        if self.kind not in CONV_KINDS:
            raise ConfigError(f"unknown conv kind {self.kind!r}")
        if self.kind == "depthwise" and self.kernel.shape[3] != 1:
            raise ShapeError(
                f"depthwise kernel must have last dim 1, got {self.kernel.shape}"
            )
        if self.padding not in PADDINGS:
            raise ConfigError(f"unknown padding {self.padding!r}")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if self.bias is not None:
            if self.bias.ndim != 1 or self.bias.shape[0] != self.out_channels:
                raise ShapeError(
                    f"bias length {self.bias.shape} does not match "
                    f"{self.out_channels} output channels"
                )
            require_finite(self.bias, "conv bias")
        require_finite(self.kernel, "conv kernel")

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[2]

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[2] if self.kind == "depthwise" else self.kernel.shape[3]


@dataclass(frozen=True)
class BatchNormParams:
    """Inference-time batch normalization parameters (one vector per channel)."""

    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    epsilon: float = 1e-3

    def __post_init__(self):
        for name in ("gamma", "beta", "mean", "variance"):
            object.__setattr__(self, name, as_f32(getattr(self, name)))
        n = self.gamma.shape
        for name in ("gamma", "beta", "mean", "variance"):
            v = getattr(self, name)
            if v.ndim != 1 or v.shape != n:
                raise ShapeError(
                    f"batchnorm {name} must be rank 1 of length {n}, got {v.shape}"
                )
            require_finite(v, f"batchnorm {name}")
        if (self.variance < 0).any():
            raise NumericError("batchnorm variance must be non-negative")
        if not self.epsilon > 0:
            raise ConfigError(f"batchnorm epsilon must be > 0, got {self.epsilon}")

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


def _require_nhwc(x: np.ndarray, op: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{op} expects a rank-4 (batch, h, w, channel) input, got rank {x.ndim}")


def _pad_input(x: np.ndarray, kh: int, kw: int, stride: int, padding: str):
    b, h, w, c = x.shape
    if padding == "same":
        pt, pb = _same_pad(h, kh, stride)
        pl, pr = _same_pad(w, kw, stride)
        if pt or pb or pl or pr:
            x = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    oh = conv_output_size(h, kh, stride, padding)
    ow = conv_output_size(w, kw, stride, padding)
    return x, oh, ow


def conv2d(x: np.ndarray, spec: ConvSpec, *, validate: bool = True) -> np.ndarray:
    """Standard 2-D convolution, channel-last, float32.

    out[b, y, x, o] = sum_{ky,kx,c} input[b, y*s+ky-pad, x*s+kx-pad, c]
                      * kernel[ky, kx, c, o]  (+ bias[o])
    """
    x = as_f32(x)
    _require_nhwc(x, "conv2d")
    if spec.kind != "standard":
        raise ShapeError("conv2d requires a standard-conv spec; use depthwise_conv2d")
    kh, kw, ic, oc = spec.kernel.shape
    if x.shape[3] != ic:
        raise ShapeError(
            f"conv2d input has {x.shape[3]} channels but kernel expects {ic}"
        )
    if validate:
        require_finite(x, "conv2d input")

    b = x.shape[0]
    s = spec.stride
    xp, oh, ow = _pad_input(x, kh, kw, s, spec.padding)

    if kh == 1 and kw == 1:
        # Pointwise convolution: a channel-mixing matmul on strided pixels.
        src = xp[:, ::s, ::s, :] if s > 1 else xp
        out = src.reshape(-1, ic) @ spec.kernel.reshape(ic, oc)
    else:
        win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
        win = win[:, ::s, ::s]  # (b, oh, ow, ic, kh, kw)
        cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(b * oh * ow, kh * kw * ic)
        out = cols @ spec.kernel.reshape(kh * kw * ic, oc)
    out = out.reshape(b, oh, ow, oc)
    if spec.bias is not None:
        out += spec.bias
    return out


def depthwise_conv2d(x: np.ndarray, spec: ConvSpec, *, validate: bool = True) -> np.ndarray:
    """Depthwise 2-D convolution: each channel filtered independently."""
    x = as_f32(x)
    _require_nhwc(x, "depthwise_conv2d")
    if spec.kind != "depthwise":
        raise ShapeError("depthwise_conv2d requires a depthwise spec")
    kh, kw, ch, _ = spec.kernel.shape
    if x.shape[3] != ch:
        raise ShapeError(
            f"depthwise_conv2d input has {x.shape[3]} channels but kernel expects {ch}"
        )
    if validate:
        require_finite(x, "depthwise_conv2d input")

    b = x.shape[0]
    s = spec.stride
    xp, oh, ow = _pad_input(x, kh, kw, s, spec.padding)
    kern = spec.kernel[:, :, :, 0]

    # Accumulate kh*kw shifted, strided slices; cheaper than materializing
    # an im2col buffer for a per-channel filter.
    out = np.zeros((b, oh, ow, ch), dtype=np.float32)
    for i in range(kh):
        for j in range(kw):
            sl = xp[:, i : i + (oh - 1) * s + 1 : s, j : j + (ow - 1) * s + 1 : s, :]
            out += sl * kern[i, j]
    if spec.bias is not None:
        out += spec.bias
    return out


def batchnorm(x: np.ndarray, bn: BatchNormParams) -> np.ndarray:
    """Apply inference batch normalization along the channel (last) axis."""
    x = as_f32(x)
    if x.shape[-1] != bn.channels:
        raise ShapeError(
            f"batchnorm over {bn.channels} channels applied to input with "
            f"{x.shape[-1]} channels"
        )
    scale = bn.gamma / np.sqrt(bn.variance + np.float32(bn.epsilon))
    return (x - bn.mean) * scale + bn.beta


def fold_batchnorm(spec: ConvSpec, bn: BatchNormParams) -> ConvSpec:
    """Absorb batchnorm into the preceding convolution.

    Returns spec' with conv(x, spec') == batchnorm(conv(x, spec), bn):
    kernel scaled by gamma/sqrt(variance+eps) per output channel, bias
    becoming beta + (bias - mean) * gamma/sqrt(variance+eps).
    """
    if bn.channels != spec.out_channels:
        raise ShapeError(
            f"batchnorm over {bn.channels} channels cannot fold into a conv "
            f"with {spec.out_channels} output channels"
        )
    scale = bn.gamma / np.sqrt(bn.variance + np.float32(bn.epsilon))
    if spec.kind == "depthwise":
        kernel = spec.kernel * scale[None, None, :, None]
    else:
        kernel = spec.kernel * scale[None, None, None, :]
    bias = spec.bias if spec.bias is not None else np.zeros(bn.channels, np.float32)
    bias = bn.beta + (bias - bn.mean) * scale
    return ConvSpec(kernel, bias, spec.stride, spec.padding, spec.kind)


def relu6(x: np.ndarray) -> np.ndarray:
    """Elementwise min(max(x, 0), 6)."""
    return np.clip(as_f32(x), np.float32(0), np.float32(6))


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """Mean over the spatial plane: (b, h, w, c) -> (b, c)."""
    x = as_f32(x)
    _require_nhwc(x, "global_avg_pool")
    if x.shape[1] == 0 or x.shape[2] == 0:
        raise ShapeError(f"global_avg_pool on zero spatial extent {x.shape}")
    return x.mean(axis=(1, 2))


def dense(
    x: np.ndarray,
    weights: np.ndarray,
    bias: np.ndarray,
    activation: str = "none",
) -> np.ndarray:
    """Fully connected layer: activation(x @ weights + bias)."""
    x = as_f32(x)
    weights = as_f32(weights)
    bias = as_f32(bias)
    if activation not in ("relu", "none"):
        raise ConfigError(f"unknown dense activation {activation!r}")
    if x.ndim != 2 or weights.ndim != 2:
        raise ShapeError(
            f"dense expects rank-2 input and weights, got {x.ndim} and {weights.ndim}"
        )
    if x.shape[1] != weights.shape[0]:
        raise ShapeError(
            f"dense inner dimensions differ: input has {x.shape[1]}, "
            f"weights expect {weights.shape[0]}"
        )
    if bias.shape != (weights.shape[1],):
        raise ShapeError(
            f"dense bias shape {bias.shape} does not match {weights.shape[1]} outputs"
        )
    out = x @ weights + bias
    if activation == "relu":
        out = np.maximum(out, np.float32(0))
    return out


def softmax(logits: np.ndarray, *, validate: bool = True) -> np.ndarray:
    """Row-wise softmax, max-subtracted for overflow stability."""
    logits = as_f32(logits)
    if logits.ndim != 2 or logits.shape[1] < 1:
        raise ShapeError(
            f"softmax expects a rank-2 (batch, classes) input, got shape {logits.shape}"
        )
    if validate:
        require_finite(logits, "softmax logits")
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)
