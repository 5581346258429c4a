"""3D U-Net segmentation of volumetric images.

Arrays are numpy, shaped (Z, Y, X); intensities float32, masks uint8.
"""

from ._core import (
    GRADCHECK_TOLERANCE,
    ConfigError,
    Error,
    FormatError,
    IoError,
    NumericError,
    ShapeError,
    UNet,
    binarize,
    confusion_counts,
    fuse_masks,
    generate_phantom,
    gradcheck,
    metrics,
    param_count,
    preprocess_case,
    read_mask,
    read_volume,
    write_srv,
    zscore_normalize,
)

__version__ = "0.1.0"

__all__ = [
    "GRADCHECK_TOLERANCE",
    "ConfigError",
    "Error",
    "FormatError",
    "IoError",
    "NumericError",
    "ShapeError",
    "UNet",
    "binarize",
    "confusion_counts",
    "fuse_masks",
    "generate_phantom",
    "gradcheck",
    "metrics",
    "param_count",
    "preprocess_case",
    "read_mask",
    "read_volume",
    "write_srv",
    "zscore_normalize",
]
