"""Depth colorization: hand-crafted and learned depth-to-RGB mappings, plus the experiment runner."""

from ._deco import (
    ConfigError,
    DataError,
    DecoColorizer,
    DecoError,
    MissingArtifactError,
    ProtocolError,
    TrainingError,
    colorize_depth,
    colorjet,
    commands,
    compute_normals,
    cross_validate_alpha,
    fuse_predictions,
    load_checkpoint,
    normalize_depth,
    recursive_median_fill,
    run_command,
    sha256_file,
    version,
)

__version__ = version()

__all__ = [
    "ConfigError",
    "DataError",
    "DecoColorizer",
    "DecoError",
    "MissingArtifactError",
    "ProtocolError",
    "TrainingError",
    "colorize_depth",
    "colorjet",
    "commands",
    "compute_normals",
    "cross_validate_alpha",
    "fuse_predictions",
    "load_checkpoint",
    "normalize_depth",
    "recursive_median_fill",
    "run_command",
    "sha256_file",
    "version",
]
