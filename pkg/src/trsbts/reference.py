"""Intervalwise frozen Gaussian reference.

Coherent Doob kernel ratios and their log-gradients for one frozen interval,
plus cumulant interpolation and frozen-bridge endpoint means used by the
bridge-mean stability check. All density ratios are computed as a single
exponential of a log-space expression; two tiny densities are never divided.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, EndpointOffLeaf, KnotMismatch, TimeOutOfRange
from .psd_linalg import PINV_CUTOFF, FlooredPsd, SymMatrix

__all__ = [
    "FrozenInterval",
    "CumulantPath",
    "log_kernel_ratio",
    "kernel_ratio",
    "kernel_ratio_grad",
    "frozen_bridge_mean",
    "cumulant_interp_error",
]


@dataclass(frozen=True)
class FrozenInterval:
    """One coarse interval with a frozen (floored) covariance and left anchor."""

    t_start: float
    t_end: float
    cov: FlooredPsd
    anchor: np.ndarray

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise ValueError("need t_start < t_end")
        a = np.asarray(self.anchor, dtype=float)
        if a.shape != (self.cov.dim,):
            raise DimMismatch(f"anchor shape {a.shape} vs dim {self.cov.dim}")
        a.setflags(write=False)
        object.__setattr__(self, "anchor", a)

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    def check_time(self, t: float) -> float:
        """Remaining time alpha = t_end - t; raises off [t_start, t_end)."""
        if not (self.t_start <= t < self.t_end):
            raise TimeOutOfRange(
                f"t={t} outside [{self.t_start}, {self.t_end})"
            )
        return self.t_end - t


def log_kernel_ratio(fi: FrozenInterval, t: float, x, delta) -> float:
    """log Phi^eps(t, x, delta) for the coherent Doob kernel ratio.

    log Phi = -|x_i + delta - x|^2_inv / (2 alpha) + |delta|^2_inv / (2 beta)
              + (d/2) log(beta / alpha),

    with alpha = t_end - t, beta the interval duration and |.|_inv the
    quadratic form of the floored inverse covariance. The eps-dependent
    Gaussian normalisations cancel identically.
    """
    alpha = fi.check_time(t)
    beta = fi.duration
    x = np.asarray(x, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if x.shape != (fi.cov.dim,) or delta.shape != (fi.cov.dim,):
        raise DimMismatch("state/increment dimension mismatch")
    r = fi.anchor + delta - x
    d = fi.cov.dim
    return (
        -fi.cov.quad(r) / (2.0 * alpha)
        + fi.cov.quad(delta) / (2.0 * beta)
        + 0.5 * d * np.log(beta / alpha)
    )


def kernel_ratio(fi: FrozenInterval, t: float, x, delta) -> float:
    """Phi^eps(t, x, delta); strictly positive."""
    return float(np.exp(log_kernel_ratio(fi, t, x, delta)))


def kernel_ratio_grad(fi: FrozenInterval, t: float, x, delta) -> np.ndarray:
    """Closed-form gradient of log Phi^eps in x: (1/alpha) inv (x_i + delta - x)."""
    alpha = fi.check_time(t)
    x = np.asarray(x, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if x.shape != (fi.cov.dim,) or delta.shape != (fi.cov.dim,):
        raise DimMismatch("state/increment dimension mismatch")
    return (fi.cov.inv @ (fi.anchor + delta - x)) / alpha


class CumulantPath:
    """Covariance cumulant Gamma on [t_start, t_end], linear between knots.

    ``gammas[0]`` must be the zero matrix and the sequence nondecreasing in
    the PSD order (within a small eigenvalue tolerance).
    """

    def __init__(self, knots, gammas) -> None:
        knots = np.asarray(knots, dtype=float)
        if knots.ndim != 1 or knots.size < 2:
            raise KnotMismatch("need at least two knots")
        if np.any(np.diff(knots) <= 0):
            raise KnotMismatch("knots must be strictly ascending")
        if len(gammas) != knots.size:
            raise KnotMismatch("one Gamma per knot required")
        gammas = [g if isinstance(g, SymMatrix) else SymMatrix(g) for g in gammas]
        d = gammas[0].dim
        if np.abs(gammas[0].entries).max(initial=0.0) > 1e-12:
            raise KnotMismatch("Gamma at t_start must vanish")
        for a, b in zip(gammas, gammas[1:]):
            if SymMatrix(b.entries - a.entries).min_eig() < -1e-10:
                raise KnotMismatch("Gamma must be PSD-nondecreasing")
        self.knots = knots
        self.gammas = gammas
        self.dim = d

    @property
    def t_start(self) -> float:
        return float(self.knots[0])

    @property
    def t_end(self) -> float:
        return float(self.knots[-1])

    @property
    def terminal(self) -> SymMatrix:
        return self.gammas[-1]

    def gamma_at(self, t: float) -> np.ndarray:
        """Piecewise-linear interpolation of Gamma at time t."""
        if not (self.t_start <= t <= self.t_end):
            raise TimeOutOfRange(f"t={t} outside [{self.t_start}, {self.t_end}]")
        idx = int(np.searchsorted(self.knots, t, side="right")) - 1
        idx = min(max(idx, 0), self.knots.size - 2)
        t0, t1 = self.knots[idx], self.knots[idx + 1]
        lam = (t - t0) / (t1 - t0)
        return (1.0 - lam) * self.gammas[idx].entries + lam * self.gammas[
            idx + 1
        ].entries


def _pinv_parts(c: SymMatrix):
    """Pseudo-inverse and pseudo-inverse square root of a PSD SymMatrix."""
    w, q = c.eig
    cut = PINV_CUTOFF * max(float(w.max(initial=0.0)), 0.0)
    active = w > cut
    inv_w = np.where(active, 1.0 / np.where(active, w, 1.0), 0.0)
    pinv = (q * inv_w) @ q.T
    pinv_half = (q * np.sqrt(inv_w)) @ q.T
    proj = (q * active.astype(float)) @ q.T
    return pinv, pinv_half, proj


def frozen_bridge_mean(cum: CumulantPath, t: float, x, z) -> np.ndarray:
    """Bridge mean m_t = x + Gamma(t) C^+ (z - x), C the terminal cumulant.

    Requires z - x to lie in the range of C; otherwise raises EndpointOffLeaf.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if x.shape != (cum.dim,) or z.shape != (cum.dim,):
        raise DimMismatch("endpoint dimension mismatch")
    pinv, _, proj = _pinv_parts(cum.terminal)
    gap = z - x
    resid = gap - proj @ gap
    if np.linalg.norm(resid) > 1e-8 * max(np.linalg.norm(gap), 1e-300):
        raise EndpointOffLeaf("z - x not in the range of the terminal cumulant")
    return x + cum.gamma_at(t) @ (pinv @ gap)


def cumulant_interp_error(cum: CumulantPath, fine: CumulantPath) -> float:
    """Normalised interpolation error sup_t ||(Gamma_fine - Gamma_interp) C^{+1/2}||_op.

    ``fine`` must refine ``cum``'s knot set and share the terminal cumulant.
    """
    if cum.dim != fine.dim:
        raise KnotMismatch("dimension mismatch")
    fine_set = set(np.round(fine.knots, 12))
    if not all(np.round(k, 12) in fine_set for k in cum.knots):
        raise KnotMismatch("fine path must refine the coarse knot set")
    if (
        np.abs(cum.terminal.entries - fine.terminal.entries).max()
        > 1e-10 * max(np.abs(cum.terminal.entries).max(), 1.0)
    ):
        raise KnotMismatch("terminal cumulants differ")
    _, pinv_half, _ = _pinv_parts(cum.terminal)
    err = 0.0
    for t in fine.knots:
        diff = (fine.gamma_at(t) - cum.gamma_at(t)) @ pinv_half
        err = max(err, float(np.linalg.norm(diff, ord=2)))
    return err
