"""Covariance-descriptor streams and maps.

Cumulative-average realized covariance of coarse increments, the PSD
projection pipeline applied to generated descriptors, and the hybrid-frame
parametrization (dominant direction plus two normalized scales) with its
backward map for 2-d paths.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .errors import TooShort, ZeroVariance
from .psd_linalg import FlooredPsd, SymMatrix, psd_project, spectral_floor, unvech, vech

__all__ = [
    "DescriptorPath",
    "HybridFrame",
    "cumulative_avg_cov",
    "project_descriptor",
    "hybrid_frame_encode",
    "hybrid_frame_decode",
    "write_descriptor_csv",
    "read_descriptor_csv",
]


@dataclass(frozen=True)
class DescriptorPath:
    """PSD descriptor per coarse index with aligned vech rows."""

    times: np.ndarray  # coarse indices (starting at 1 for streams)
    descriptors: tuple  # SymMatrix per index
    packed: np.ndarray  # (n, d(d+1)/2)

    def __len__(self) -> int:
        return len(self.descriptors)


@dataclass(frozen=True)
class HybridFrame:
    """Dominant principal direction plus top-two normalized scales."""

    direction: np.ndarray  # unit vector, sign-canonical
    scale_primary: float
    scale_secondary: float

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.direction, [self.scale_primary, self.scale_secondary]]
        )

    @staticmethod
    def from_vector(v) -> "HybridFrame":
        v = np.asarray(v, dtype=float)
        direction = v[:-2]
        n = np.linalg.norm(direction)
        if n <= 0:
            raise ZeroVariance("zero direction vector")
        direction = _canonical_sign(direction / n)
        return HybridFrame(
            direction=direction,
            scale_primary=max(float(v[-2]), 0.0),
            scale_secondary=max(float(v[-1]), 0.0),
        )


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    """Flip sign so the first nonzero coordinate is positive."""
    for c in v:
        if c != 0.0:
            return v if c > 0 else -v
    return v


def cumulative_avg_cov(path, dt: float) -> DescriptorPath:
    """Running average of increment outer products, M_t = (1/(t dt)) sum_{i<=t} dz_i dz_i^T.

    The stream starts at coarse index 1 (index 0 is undefined).
    """
    x = np.asarray(path, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise TooShort("need at least 2 path points")
    if dt <= 0:
        raise ValueError("dt must be positive")
    inc = np.diff(x, axis=0)  # (T-1, d)
    outer = np.einsum("ti,tj->tij", inc, inc)
    cum = np.cumsum(outer, axis=0)
    times = np.arange(1, x.shape[0])
    descriptors = []
    packed = []
    for t, c in zip(times, cum):
        m = SymMatrix(c / (t * dt))
        descriptors.append(m)
        packed.append(vech(m))
    return DescriptorPath(
        times=times, descriptors=tuple(descriptors), packed=np.array(packed)
    )


def project_descriptor(raw: SymMatrix, eps: float):
    """(PSD-projected descriptor, its spectral floor) for a generated row.

    The projected value is what gets stored; the floored value feeds the
    reference backend.
    """
    proj = psd_project(raw)
    return proj, spectral_floor(proj, eps)


def hybrid_frame_encode(cum: SymMatrix, x_variance: float) -> HybridFrame:
    """Top-eigenpair parametrization of cum / x_variance.

    Direction is the dominant eigenvector with canonical sign; scales are
    the top-two eigenvalues of the normalized matrix (clamped at 0).
    """
    if x_variance <= 0:
        raise ZeroVariance("x_variance must be positive")
    w, q = SymMatrix(cum.entries / x_variance).eig
    direction = _canonical_sign(q[:, -1].copy())
    s1 = max(float(w[-1]), 0.0)
    s2 = max(float(w[-2]), 0.0) if cum.dim >= 2 else 0.0
    return HybridFrame(direction=direction, scale_primary=s1, scale_secondary=s2)


def hybrid_frame_decode(hf: HybridFrame) -> SymMatrix:
    """Backward map into the PSD cone.

    Rank-one reconstruction s1 * u u^T works in any dimension; the secondary
    mass is placed on the orthogonal complement, which is unique only for
    d = 2, so a nonzero secondary scale requires a 2-d frame.
    """
    u = hf.direction
    out = hf.scale_primary * np.outer(u, u)
    if hf.scale_secondary > 0.0:
        if u.size != 2:
            raise ZeroVariance(
                "secondary mass is only defined for 2-d hybrid frames"
            )
        v = np.array([-u[1], u[0]])
        out = out + hf.scale_secondary * np.outer(v, v)
    return SymMatrix(out)


def write_descriptor_csv(path: str, entries) -> None:
    """Write (path_id, coarse_index, vech...) rows at 17 significant digits."""
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        first = True
        for path_id, idx, row in entries:
            if first:
                writer.writerow(
                    ["path_id", "coarse_index"]
                    + [f"v{k}" for k in range(len(row))]
                )
                first = False
            writer.writerow([path_id, idx] + [f"{v:.17g}" for v in row])
    os.replace(tmp, path)


def read_descriptor_csv(path: str):
    """Yield (path_id, coarse_index, SymMatrix) triples from a descriptor CSV."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n_v = len(header) - 2
        for row in reader:
            vals = np.array([float(v) for v in row[2 : 2 + n_v]])
            yield int(row[0]), int(row[1]), unvech(vals)
