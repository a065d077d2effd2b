"""Name and shape tables for MobileNetV2 width 1.0 at 224x224.

Keras names the first inverted-residual block "expanded_conv" (it has no
expansion layer) and the rest "block_1" .. "block_16"; the bundle side
numbers them block0..block16. Each convolution contributes one kernel and
four batch-norm vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

STEM_CHANNELS = 32
FINAL_CHANNELS = 1280

# (expansion factor, output channels, repeats, first stride)
BLOCK_SCHEDULE = (
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
)

# source weight name -> bundle suffix
BN_FIELDS = (
    ("gamma", "gamma"),
    ("beta", "beta"),
    ("moving_mean", "mean"),
    ("moving_variance", "variance"),
)


@dataclass(frozen=True)
class MappedParam:
    """One source parameter and where it lands in the bundle."""

    source: str
    target: str
    shape: tuple[int, ...]


def _block_dims() -> list[tuple[int, int, int]]:
    """(input channels, expansion factor, output channels) for all 17 blocks."""
    dims = []
    in_ch = STEM_CHANNELS
    for t, c, n, _s in BLOCK_SCHEDULE:
        for _ in range(n):
            dims.append((in_ch, t, c))
            in_ch = c
    return dims


def name_map() -> list[MappedParam]:
    """Ordered bijection from Keras parameter names to bundle entry names."""
    table: list[MappedParam] = []

    def conv(src_layer, dst_unit, shape):
        table.append(MappedParam(f"{src_layer}/kernel", f"{dst_unit}.kernel", shape))

    def bn(src_layer, dst_unit, channels):
        for src, dst in BN_FIELDS:
            table.append(
                MappedParam(f"{src_layer}/{src}", f"{dst_unit}.bn.{dst}", (channels,))
            )

    conv("Conv1", "stem.conv", (3, 3, 3, STEM_CHANNELS))
    bn("bn_Conv1", "stem.conv", STEM_CHANNELS)

    for i, (in_ch, t, out_ch) in enumerate(_block_dims()):
        mid = in_ch * t
        if i == 0:
            expand_src = None  # factor-1 block carries no expansion layer
            dw_src, proj_src = "expanded_conv_depthwise", "expanded_conv_project"
        else:
            expand_src = f"block_{i}_expand"
            dw_src, proj_src = f"block_{i}_depthwise", f"block_{i}_project"
        dst = f"block{i}"
        if expand_src is not None:
            conv(expand_src, f"{dst}.expand", (1, 1, in_ch, mid))
            bn(f"{expand_src}_BN", f"{dst}.expand", mid)
        conv(dw_src, f"{dst}.depthwise", (3, 3, mid, 1))
        bn(f"{dw_src}_BN", f"{dst}.depthwise", mid)
        conv(proj_src, f"{dst}.project", (1, 1, mid, out_ch))
        bn(f"{proj_src}_BN", f"{dst}.project", out_ch)

    conv("Conv_1", "final.conv", (1, 1, 320, FINAL_CHANNELS))
    bn("Conv_1_bn", "final.conv", FINAL_CHANNELS)
    return table
