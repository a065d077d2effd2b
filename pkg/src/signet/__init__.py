"""Static sign-language gesture classification on a hand-rolled MobileNetV2.

The backbone runs on in-repo numpy kernels with weights supplied as .slrw
bundles; only the small classification head trains, on cached features.
"""

__version__ = "0.1.0"
