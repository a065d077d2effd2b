"""Framework-free numeric kernels for CNN inference.

Everything the backbone and classification head are assembled from:
convolutions, batch-norm application and folding, activations, pooling,
dense layers, and softmax. All public operations are pure functions over
float32 numpy arrays laid out (batch, height, width, channel) with the
channel axis innermost.

The vectorized implementations here are the production path; the naive
direct-loop implementations in `signet.nnops.reference` are the in-tree
oracle they are tested against.
"""

from signet.nnops.kernels import (
    BatchNormParams,
    ConvSpec,
    batchnorm,
    conv2d,
    conv_output_size,
    dense,
    depthwise_conv2d,
    fold_batchnorm,
    global_avg_pool,
    relu6,
    softmax,
)

__all__ = [
    "BatchNormParams",
    "ConvSpec",
    "batchnorm",
    "conv2d",
    "conv_output_size",
    "dense",
    "depthwise_conv2d",
    "fold_batchnorm",
    "global_avg_pool",
    "relu6",
    "softmax",
]
