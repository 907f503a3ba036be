"""Reductions of the conditioning past and kernel weight machinery.

Block PCR, the reference-aware Mahalanobis pseudo-distance, the past-window
WLS drift regressor, kernel logweights (Gaussian / quartic compact /
truncated Gaussian) and the stable softmax that turns logweights into a
terminal surrogate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AllExcluded,
    DegenerateData,
    ShapeMismatch,
    SingularDesign,
)
from .psd_linalg import FlooredPsd, log_spectral_dist, mahalanobis

__all__ = [
    "PcrReducer",
    "ConditioningSummary",
    "KernelConfig",
    "TerminalSurrogate",
    "pcr_fit",
    "wls_drift",
    "pseudo_distance",
    "kernel_logweight",
    "stable_softmax",
    "pcr_logweights",
]

NEG_INF = float("-inf")

# Uniform fallback width when every candidate leaves the kernel support.
FALLBACK_KNN = 16


@dataclass(frozen=True)
class PcrReducer:
    """Principal-component projection fitted on one conditioning block."""

    mean: np.ndarray
    components: np.ndarray  # (k, d), orthonormal rows
    scales: np.ndarray  # (k,), sqrt eigenvalues
    explained_threshold: float

    @property
    def k(self) -> int:
        return self.components.shape[0]

    def transform(self, x, whiten: bool = False) -> np.ndarray:
        """Project onto the retained components; rows or a single vector."""
        x = np.asarray(x, dtype=float)
        z = (x - self.mean) @ self.components.T
        if whiten:
            z = z / self.scales
        return z

    def projector(self) -> np.ndarray:
        return self.components.T @ self.components


def pcr_fit(samples, threshold: float, center: bool = True) -> PcrReducer:
    """Fit a PCR reducer by eigendecomposition of the sample covariance.

    Keeps the smallest number of leading eigenvalues whose cumulative
    variance share reaches ``threshold``. Scales are sqrt eigenvalues,
    floored at 1e-12 of the largest.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DegenerateData("need at least 2 samples")
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must lie in (0, 1]")
    mean = x.mean(axis=0) if center else np.zeros(x.shape[1])
    xc = x - mean
    cov = (xc.T @ xc) / (x.shape[0] - 1)
    w, q = np.linalg.eigh(cov)
    w = w[::-1]
    q = q[:, ::-1]
    total = float(np.sum(np.maximum(w, 0.0)))
    if total < 1e-14:
        raise DegenerateData("all variance below absolute tolerance")
    share = np.cumsum(np.maximum(w, 0.0)) / total
    k = int(np.searchsorted(share, threshold - 1e-12) + 1)
    k = min(k, x.shape[1])
    scales = np.sqrt(np.maximum(w[:k], 1e-12 * max(w[0], 0.0)))
    return PcrReducer(
        mean=mean,
        components=np.ascontiguousarray(q[:, :k].T),
        scales=scales,
        explained_threshold=float(threshold),
    )


@dataclass(frozen=True)
class ConditioningSummary:
    """Macro-conditioning variable for one query or training sample.

    ``past_increments`` is (p, d), newest last; ``frozen_cumulants`` aligns
    with it when the reference-aware distance is active. ``latent`` may be
    empty. ``wls_theta`` is an optional drift summary.
    """

    anchor: np.ndarray
    past_increments: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    latent: np.ndarray = field(default_factory=lambda: np.zeros(0))
    frozen_cumulants: tuple = ()
    wls_theta: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "anchor", np.asarray(self.anchor, dtype=float))
        object.__setattr__(
            self, "past_increments", np.asarray(self.past_increments, dtype=float)
        )
        object.__setattr__(self, "latent", np.asarray(self.latent, dtype=float))
        if self.frozen_cumulants and len(self.frozen_cumulants) != len(
            self.past_increments
        ):
            raise ShapeMismatch("cumulants must align with past increments")


@dataclass(frozen=True)
class KernelConfig:
    """Kernel family, bandwidth and optional truncation radius."""

    variant: str = "gaussian"  # gaussian | quartic_compact | truncated_gaussian
    h: float = 1.0
    R: float = 3.0
    anchor_bandwidth: float = 1.0

    def __post_init__(self):
        if self.variant not in ("gaussian", "quartic_compact", "truncated_gaussian"):
            raise ValueError(f"unknown kernel variant {self.variant!r}")
        if self.h <= 0:
            raise ValueError("bandwidth must be positive")
        if self.variant == "truncated_gaussian" and self.R <= 0:
            raise ValueError("truncation radius must be positive")


@dataclass(frozen=True)
class TerminalSurrogate:
    """Weighted atom cloud over historical next-step increments."""

    weights: np.ndarray  # (M',), nonnegative, sums to 1
    atoms: np.ndarray  # (M', d)
    source_indices: np.ndarray  # (M',)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        a = np.asarray(self.atoms, dtype=float)
        if w.ndim != 1 or a.ndim != 2 or w.shape[0] != a.shape[0]:
            raise ShapeMismatch("weights and atoms misaligned")
        if w.size == 0:
            raise ShapeMismatch("empty surrogate")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ShapeMismatch("weights must be a probability vector")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "atoms", a)
        object.__setattr__(
            self, "source_indices", np.asarray(self.source_indices, dtype=int)
        )

    @property
    def size(self) -> int:
        return self.weights.size

    def mean(self) -> np.ndarray:
        return self.weights @ self.atoms


def wls_drift(increments, cumulants, model: str = "locally_constant") -> np.ndarray:
    """Weighted least squares drift fit over a past window.

    Minimizes sum_k ||dx_k - mu_k(theta)||^2 in the C_k^{-1} metrics.
    Models: ``locally_constant`` (mu_k = theta) and ``linear_in_time``
    (mu_k = theta0 + theta1 * k, k = 0..L-1). A ridge of 1e-10 * trace
    guards conditioning of the normal equations.
    """
    dx = np.asarray(increments, dtype=float)
    if dx.ndim != 2 or dx.shape[0] < 1:
        raise ShapeMismatch("need (L, d) increments with L >= 1")
    L, d = dx.shape
    if len(cumulants) != L:
        raise ShapeMismatch("one cumulant per increment required")
    if model == "locally_constant":
        n_feat = 1
    elif model == "linear_in_time":
        n_feat = 2
    else:
        raise ValueError(f"unknown drift model {model!r}")
    q = n_feat * d
    A = np.zeros((q, q))
    b = np.zeros(q)
    for k in range(L):
        w = cumulants[k].inv if isinstance(cumulants[k], FlooredPsd) else np.asarray(
            cumulants[k], dtype=float
        )
        feats = [1.0, float(k)][:n_feat]
        for i, fi in enumerate(feats):
            b[i * d : (i + 1) * d] += fi * (w @ dx[k])
            for j, fj in enumerate(feats):
                A[i * d : (i + 1) * d, j * d : (j + 1) * d] += fi * fj * w
    A += 1e-10 * max(np.trace(A) / q, 1e-300) * np.eye(q)
    try:
        theta = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise SingularDesign("normal equations singular after ridge") from exc
    if not np.all(np.isfinite(theta)):
        raise SingularDesign("non-finite WLS solution")
    return theta


def pseudo_distance(
    query: ConditioningSummary,
    sample: ConditioningSummary,
    anchor_metric: FlooredPsd | float | None = None,
) -> float:
    """Query-dependent macro pseudo-distance between two summaries.

    Component terms: anchor distance (Euclidean, scalar-scaled, or
    Mahalanobis in a supplied floored metric), per-increment Mahalanobis in
    the QUERY's floored cumulant, Euclidean latent distance, and the
    log-spectral distance between aligned reference components.
    """
    if query.anchor.shape != sample.anchor.shape:
        raise ShapeMismatch("anchor shapes differ")
    if query.past_increments.shape != sample.past_increments.shape:
        raise ShapeMismatch("increment blocks differ")
    if query.latent.shape != sample.latent.shape:
        raise ShapeMismatch("latent shapes differ")
    sq = 0.0
    gap = query.anchor - sample.anchor
    if anchor_metric is None:
        sq += float(gap @ gap)
    elif isinstance(anchor_metric, FlooredPsd):
        sq += mahalanobis(gap, anchor_metric) ** 2
    else:
        sq += float(gap @ gap) / float(anchor_metric) ** 2
    for k in range(query.past_increments.shape[0]):
        diff = query.past_increments[k] - sample.past_increments[k]
        if query.frozen_cumulants:
            sq += mahalanobis(diff, query.frozen_cumulants[k]) ** 2
        else:
            sq += float(diff @ diff)
    if query.latent.size:
        lat = query.latent - sample.latent
        sq += float(lat @ lat)
    if query.frozen_cumulants and sample.frozen_cumulants:
        for ga, gb in zip(query.frozen_cumulants, sample.frozen_cumulants):
            sq += log_spectral_dist(ga, gb) ** 2
    return float(np.sqrt(max(sq, 0.0)))


def kernel_logweight(cfg: KernelConfig, dist: float) -> float:
    """Log kernel value at a nonnegative pseudo-distance; NEG_INF outside support."""
    if dist < 0:
        raise ValueError("distance must be nonnegative")
    u2 = (dist / cfg.h) ** 2
    if cfg.variant == "gaussian":
        return -0.5 * u2
    if cfg.variant == "quartic_compact":
        if u2 >= 1.0:
            return NEG_INF
        return float(np.log1p(-u2))
    # truncated_gaussian
    if dist > cfg.h * cfg.R:
        return NEG_INF
    return -0.5 * u2


def kernel_logweights(cfg: KernelConfig, dists: np.ndarray) -> np.ndarray:
    """Vectorized :func:`kernel_logweight` over an array of distances."""
    dists = np.asarray(dists, dtype=float)
    u2 = (dists / cfg.h) ** 2
    if cfg.variant == "gaussian":
        return -0.5 * u2
    if cfg.variant == "quartic_compact":
        out = np.full(dists.shape, NEG_INF)
        inside = u2 < 1.0
        out[inside] = np.log1p(-u2[inside])
        return out
    out = -0.5 * u2
    out[dists > cfg.h * cfg.R] = NEG_INF
    return out


def stable_softmax(logweights) -> np.ndarray:
    """Max-shifted softmax; NEG_INF entries map to exactly zero weight."""
    lw = np.asarray(logweights, dtype=float)
    if lw.ndim != 1 or lw.size == 0:
        raise ShapeMismatch("logweights must be a nonempty vector")
    m = np.max(lw)
    if not np.isfinite(m):
        raise AllExcluded("every logweight is -inf")
    e = np.exp(lw - m)
    e[~np.isfinite(lw)] = 0.0
    s = e.sum()
    if s <= 0.0 or not np.isfinite(s):
        raise AllExcluded("finite mass underflowed")
    return e / s


def pcr_logweights(
    query: ConditioningSummary,
    candidates,
    state_reducer: PcrReducer | None = None,
    incr_reducer: PcrReducer | None = None,
    anchor_bandwidth: float = 1.0,
    incr_bandwidth: float = 1.0,
    whiten: bool = False,
) -> np.ndarray:
    """Gaussian logweights on PCR-projected anchor and increment blocks.

    l_j = -1/2 |Pi_X x - Pi_X x_j|^2 / Lx^2
          -1/2 sum_q |Pi_D dx_q - Pi_D dx_{j,q}|^2 / Ld^2
    """
    qa = (
        state_reducer.transform(query.anchor, whiten)
        if state_reducer is not None
        else query.anchor
    )
    p = query.past_increments.shape[0]
    qi = query.past_increments
    if incr_reducer is not None and p:
        qi = incr_reducer.transform(qi, whiten)
    out = np.empty(len(candidates))
    for j, cand in enumerate(candidates):
        if cand.past_increments.shape[0] != p:
            raise ShapeMismatch("candidate block structure differs from query")
        ca = (
            state_reducer.transform(cand.anchor, whiten)
            if state_reducer is not None
            else cand.anchor
        )
        val = -0.5 * float(np.sum((qa - ca) ** 2)) / anchor_bandwidth**2
        if p:
            ci = cand.past_increments
            if incr_reducer is not None:
                ci = incr_reducer.transform(ci, whiten)
            val -= 0.5 * float(np.sum((qi - ci) ** 2)) / incr_bandwidth**2
        out[j] = val
    return out
