"""Spectral pyramid graph attention for hyperspectral pixel classification.

Thin numpy bridge over the C++ core: scene synthesis, the spectral
convolution and attention primitives, metrics, and a full experiment
runner driven by the same config format the command-line tool reads.
"""

from ._core import (
    ConfigError,
    FormatError,
    NumericError,
    ShapeError,
    atrous_conv_spectral,
    cli,
    conv_pointwise,
    extract_patches,
    gat_attention,
    gradcheck_suite,
    labels_to_ppm,
    lattice_adjacency,
    leaky_relu,
    make_split,
    metrics,
    normalize_bands,
    run_experiment,
    sigmoid,
    softmax,
    synth_scene,
)

__all__ = [
    "ConfigError",
    "FormatError",
    "NumericError",
    "ShapeError",
    "atrous_conv_spectral",
    "cli",
    "conv_pointwise",
    "extract_patches",
    "gat_attention",
    "gradcheck_suite",
    "labels_to_ppm",
    "lattice_adjacency",
    "leaky_relu",
    "make_split",
    "metrics",
    "normalize_bands",
    "run_experiment",
    "sigmoid",
    "softmax",
    "synth_scene",
]

__version__ = "0.1.0"
