"""Triangular-reference Schrödinger bridge generation for time series."""

from . import (
    bridge,
    conditioning,
    descriptor,
    dgp,
    errors,
    generator,
    psd_linalg,
    reference,
    scoring,
)

__version__ = "0.1.0"

__all__ = [
    "bridge",
    "conditioning",
    "descriptor",
    "dgp",
    "errors",
    "generator",
    "psd_linalg",
    "reference",
    "scoring",
]
