"""Validation scores.

Predictive multivariate energy score (basic and enriched), the conditional
Gaussian-kernel transition score, and the entropic NLL selection/validation
pair. Quantiles are type-7 (linear interpolation between order statistics)
throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import EmptyInput, MissingStats, ShapeMismatch, TooShort
from .psd_linalg import FlooredPsd

__all__ = [
    "EnergyScoreConfig",
    "EntropicConfig",
    "energy_score_window",
    "energy_score_path",
    "enriched_features",
    "conditional_kernel_score",
    "conditional_kernel_aggregate",
    "entropic_nll_step",
    "entropic_select",
    "entropic_validate",
]


@dataclass(frozen=True)
class EnergyScoreConfig:
    """Windowing and Monte Carlo controls for the predictive energy score."""

    p_mem: int = 1
    K: int = 1
    L: int = 16
    stride: int = 1
    normalize_by_sqrt_q: bool = False
    dims: tuple | None = None  # optional coordinate slice before scoring

    def __post_init__(self):
        if min(self.p_mem, self.K, self.L, self.stride) < 1:
            raise ValueError("all window parameters must be positive")


@dataclass(frozen=True)
class EntropicConfig:
    """Floor and quantile level for the entropic NLL scores."""

    eps: float = 1e-8
    alpha: float = 0.9

    def __post_init__(self):
        if self.eps <= 0 or not 0.0 < self.alpha < 1.0:
            raise ValueError("need eps > 0 and alpha in (0, 1)")


def energy_score_window(ensemble, observed) -> float:
    """(1/L) sum ||z_hat - z|| - (1/2L^2) sum sum ||z_hat - z_hat'||."""
    ens = np.atleast_2d(np.asarray(ensemble, dtype=float))
    obs = np.asarray(observed, dtype=float).ravel()
    if ens.shape[1] != obs.size:
        raise ShapeMismatch(
            f"ensemble dim {ens.shape[1]} vs observed {obs.size}"
        )
    L = ens.shape[0]
    term1 = float(np.mean(np.linalg.norm(ens - obs, axis=1)))
    term2 = float(np.sum(cdist(ens, ens))) / (2.0 * L * L)
    return term1 - term2


def energy_score_path(model, validation_path, cfg: EnergyScoreConfig, rng) -> float:
    """Mean window energy score of autoregressive model continuations.

    ``model`` must provide ``sample_window(history, K, L, rng) -> (L, K, d)``
    where ``history`` is the (p_mem, d) real block seeding the model memory.
    Admissible window starts are i in {p_mem, p_mem + s, ..., n - K}.
    """
    path = np.asarray(validation_path, dtype=float)
    n = path.shape[0]
    starts = list(range(cfg.p_mem, n - cfg.K + 1, cfg.stride))
    if not starts:
        raise TooShort("path too short for one window")
    q = cfg.K * (len(cfg.dims) if cfg.dims is not None else path.shape[1])
    scale = np.sqrt(q) if cfg.normalize_by_sqrt_q else 1.0
    total = 0.0
    for i in starts:
        history = path[i - cfg.p_mem : i]
        ens = np.asarray(model.sample_window(history, cfg.K, cfg.L, rng))
        obs = path[i : i + cfg.K]
        if cfg.dims is not None:
            ens = ens[:, :, list(cfg.dims)]
            obs = obs[:, list(cfg.dims)]
        total += energy_score_window(
            ens.reshape(cfg.L, -1) / scale, obs.ravel() / scale
        )
    return total / len(starts)


def enriched_features(window, prev_state, sigma_pos: float, sigma_inc: float):
    """Per-step stacked (position, packed squared increment) features.

    ``window`` is (K, d); ``prev_state`` supplies the increment at r = 1.
    Positions are rescaled by 1/(sigma_pos sqrt(d)), vectorized outer
    products of increments by 1/(sigma_inc sqrt(d^2)).
    """
    if sigma_pos <= 0 or sigma_inc <= 0:
        raise MissingStats("training RMS scales must be positive")
    w = np.atleast_2d(np.asarray(window, dtype=float))
    prev = np.asarray(prev_state, dtype=float)
    K, d = w.shape
    states = np.vstack([prev, w])
    incs = np.diff(states, axis=0)
    out = []
    for r in range(K):
        pos = w[r] / (sigma_pos * np.sqrt(d))
        sq = np.outer(incs[r], incs[r]).ravel() / (sigma_inc * d)
        out.append(np.concatenate([pos, sq]))
    return np.concatenate(out)


def conditional_kernel_score(
    weights, atoms, observed, sigma_k: float, normalizer=None
) -> float:
    """Gaussian-kernel discrepancy between the weighted atom kernel and the
    realised validation increment.

    S = sum_{m,l} w_m w_l k(Z_m, Z_l) - 2 sum_m w_m k(Z_m, z), with
    k(a, b) = exp(-|S^{-1}(a - b)|^2 / (2 sigma_k^2)).
    """
    w = np.asarray(weights, dtype=float)
    z = np.atleast_2d(np.asarray(atoms, dtype=float))
    obs = np.asarray(observed, dtype=float)
    if w.shape[0] != z.shape[0] or obs.shape != (z.shape[1],):
        raise ShapeMismatch("weights/atoms/observed misaligned")
    if abs(w.sum() - 1.0) > 1e-8:
        raise ShapeMismatch("weights must sum to 1")
    if normalizer is not None:
        s = np.asarray(normalizer, dtype=float)
        z = z / s
        obs = obs / s
    d2 = cdist(z, z, "sqeuclidean")
    k_zz = np.exp(-d2 / (2.0 * sigma_k**2))
    k_zo = np.exp(-np.sum((z - obs) ** 2, axis=1) / (2.0 * sigma_k**2))
    return float(w @ k_zz @ w - 2.0 * (w @ k_zo))


def conditional_kernel_aggregate(scores, alpha: float = 0.9) -> float:
    """Type-7 alpha-quantile over per-query conditional kernel scores."""
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise EmptyInput("no query scores")
    return float(np.quantile(scores, alpha))


def median_pairwise_distance(atoms, normalizer=None) -> float:
    """Median heuristic bandwidth for the conditional kernel score."""
    z = np.atleast_2d(np.asarray(atoms, dtype=float))
    if normalizer is not None:
        z = z / np.asarray(normalizer, dtype=float)
    d = cdist(z, z)
    vals = d[np.triu_indices_from(d, k=1)]
    med = float(np.median(vals)) if vals.size else 1.0
    return med if med > 0 else 1.0


def entropic_nll_step(sigma: FlooredPsd, dt: float, delta) -> float:
    """Per-step Gaussian NLL of an observed increment under N(0, Sigma dt).

    1/2 logdet(Sigma_floored dt) + 1/2 delta^T (Sigma_floored dt)^{-1} delta
    + (d/2) log(2 pi).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    delta = np.asarray(delta, dtype=float)
    d = sigma.dim
    logdet = sigma.logdet + d * np.log(dt)
    quad = sigma.quad(delta) / dt
    return float(0.5 * logdet + 0.5 * quad + 0.5 * d * np.log(2.0 * np.pi))


def _family_cov(family, p: int, t: int) -> FlooredPsd:
    """A family is either a single FlooredPsd or nested per-path, per-step."""
    if isinstance(family, FlooredPsd):
        return family
    entry = family[p]
    if isinstance(entry, FlooredPsd):
        return entry
    return entry[t]


def entropic_select(candidates, paths, dts, cfg: EntropicConfig) -> int:
    """Argmin candidate family by the cross-path alpha-quantile of per-path
    mean NLL scores; ties break toward the lowest index.

    ``paths`` holds per-path increment arrays (steps, d); ``dts`` is a scalar
    or per-path step size.
    """
    if not candidates or not paths:
        raise EmptyInput("need at least one candidate and one path")
    dts = np.broadcast_to(np.asarray(dts, dtype=float), (len(paths),))
    best_idx = 0
    best_val = np.inf
    for f, family in enumerate(candidates):
        per_path = []
        for p, incs in enumerate(paths):
            incs = np.atleast_2d(np.asarray(incs, dtype=float))
            vals = [
                entropic_nll_step(_family_cov(family, p, t), dts[p], incs[t])
                for t in range(incs.shape[0])
            ]
            per_path.append(float(np.mean(vals)))
        val = float(np.quantile(per_path, cfg.alpha))
        if val < best_val - 1e-15:
            best_val = val
            best_idx = f
    return best_idx


def entropic_validate(generated, observed_increments, dts, cfg: EntropicConfig) -> float:
    """alpha-quantile of per-path mean NLL of observed increments under the
    closed-loop generated (already projected and floored) references."""
    if len(generated) != len(observed_increments):
        raise ShapeMismatch("one generated stream per observed path required")
    if not generated:
        raise EmptyInput("no paths")
    dts = np.broadcast_to(np.asarray(dts, dtype=float), (len(generated),))
    per_path = []
    for p, (covs, incs) in enumerate(zip(generated, observed_increments)):
        incs = np.atleast_2d(np.asarray(incs, dtype=float))
        if len(covs) != incs.shape[0]:
            raise ShapeMismatch("generated stream misaligned with increments")
        vals = [
            entropic_nll_step(covs[t], dts[p], incs[t])
            for t in range(incs.shape[0])
        ]
        per_path.append(float(np.mean(vals)))
    return float(np.quantile(per_path, cfg.alpha))
