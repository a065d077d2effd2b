"""Keras MobileNetV2 checkpoints to .slrw weight bundles."""

from slrw_converter.convert import (
    ConversionError,
    ConversionReport,
    convert,
    convert_tensors,
)
from slrw_converter.mapping import MappedParam, name_map

__all__ = [
    "ConversionError",
    "ConversionReport",
    "MappedParam",
    "convert",
    "convert_tensors",
    "name_map",
]
