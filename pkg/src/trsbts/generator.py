"""End-to-end fitting and generation.

Fits per-level components from training paths, runs the single-component
closed loop (conditioning summary -> kernel logweights -> softmax surrogate
-> bridge step), couples levels through mixed logweights, and runs the joint
multi-level generator in which each deeper level produces the dynamic
reference covariance for the level above.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .bridge import BridgeStepConfig, step_interval
from .conditioning import (
    FALLBACK_KNN,
    NEG_INF,
    ConditioningSummary,
    KernelConfig,
    PcrReducer,
    TerminalSurrogate,
    kernel_logweights,
    pcr_fit,
    stable_softmax,
    wls_drift,
)
from .errors import AllExcluded, InsufficientData, ShapeMismatch
from .psd_linalg import FlooredPsd, SymMatrix, psd_project, spectral_floor, unvech
from .reference import FrozenInterval

__all__ = [
    "ComponentConfig",
    "CouplingConfig",
    "FittedComponent",
    "fit_component",
    "align_components",
    "compute_surrogate",
    "couple_logweights",
    "generate_single",
    "generate_joint",
    "save_model",
    "load_model",
]


@dataclass(frozen=True)
class ComponentConfig:
    """Per-level fitting and generation configuration."""

    level_id: str
    dt: float
    kernel: KernelConfig
    bridge: BridgeStepConfig
    p_max: int = 0
    pcr_threshold: float | None = None  # state-block PCR when set
    pcr_incr_threshold: float | None = None  # increment-block PCR when set
    pcr_mode: str = "blockwise"  # joint | blockwise | componentwise
    whiten: bool = False
    wls_model: str | None = None  # locally_constant | linear_in_time
    incr_bandwidth: float = 1.0
    latent_bandwidth: float = 1.0
    wls_bandwidth: float = 1.0
    use_query_metric: bool = False  # Mahalanobis increments in query cumulants
    use_logspec: bool = False  # log-spectral reference terms in the distance
    normalize_anchor: bool = False  # anchor in floored-reference eigencoordinates
    reference_scale: float | None = None  # isotropic reference variance rate

    def __post_init__(self):
        if self.p_max < 0:
            raise ValueError("p_max must be >= 0")
        if self.pcr_mode not in ("joint", "blockwise", "componentwise"):
            raise ValueError(f"unknown pcr_mode {self.pcr_mode!r}")


@dataclass(frozen=True)
class CouplingConfig:
    """Logweight mixing parameters between an adjacent level pair."""

    rho_x: float = 0.0
    rho_y: float = 0.0
    alpha: float = 0.0

    def __post_init__(self):
        for v in (self.rho_x, self.rho_y, self.alpha):
            if not 0.0 <= v <= 1.0:
                raise ValueError("coupling parameters must lie in [0, 1]")


@dataclass
class FittedComponent:
    """One level's fitted model: aligned training atoms plus reducers/configs."""

    config: ComponentConfig
    summaries: list  # ConditioningSummary per training atom
    atoms: np.ndarray  # (M, d) response increments
    source: np.ndarray  # (M, 2) of (path_id, index)
    state_reducer: PcrReducer | None = None
    incr_reducer: PcrReducer | None = None
    reference_cov: FlooredPsd | None = None
    # caches built by _build_caches
    _anchors_t: np.ndarray | None = field(default=None, repr=False)
    _incrs_t: np.ndarray | None = field(default=None, repr=False)
    _latents: np.ndarray | None = field(default=None, repr=False)
    _thetas: np.ndarray | None = field(default=None, repr=False)
    _cum_stack: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[0]

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    def transform_anchor(self, anchor: np.ndarray) -> np.ndarray:
        if self.state_reducer is not None:
            return self.state_reducer.transform(anchor, self.config.whiten)
        return anchor

    def transform_incrs(self, incrs: np.ndarray) -> np.ndarray:
        if self.incr_reducer is not None and incrs.size:
            return self.incr_reducer.transform(incrs, self.config.whiten)
        return incrs

    def build_caches(self) -> None:
        cfg = self.config
        self._anchors_t = np.array(
            [self.transform_anchor(s.anchor) for s in self.summaries]
        )
        p = cfg.p_max
        if p:
            self._incrs_t = np.array(
                [self.transform_incrs(s.past_increments) for s in self.summaries]
            )
        else:
            self._incrs_t = np.zeros((self.n_atoms, 0, 0))
        self._latents = np.array([s.latent for s in self.summaries])
        if cfg.wls_model is not None:
            self._thetas = np.array([s.wls_theta for s in self.summaries])
        if cfg.use_logspec and p:
            self._cum_stack = np.array(
                [[c.matrix for c in s.frozen_cumulants] for s in self.summaries]
            )

    def squared_distances(self, query: ConditioningSummary) -> np.ndarray:
        """Vectorized squared macro pseudo-distance from the query to all atoms."""
        cfg = self.config
        if self._anchors_t is None:
            self.build_caches()
        qa = self.transform_anchor(query.anchor)
        d2 = (
            np.sum((self._anchors_t - qa) ** 2, axis=1)
            / cfg.kernel.anchor_bandwidth**2
        )
        p = query.past_increments.shape[0]
        if p:
            if self._incrs_t.shape[1] != p:
                raise ShapeMismatch("query memory differs from training memory")
            if cfg.use_query_metric and query.frozen_cumulants:
                diffs = self.summaries_incrs() - query.past_increments
                for k in range(p):
                    inv = query.frozen_cumulants[k].inv
                    d2 += (
                        np.einsum("md,de,me->m", diffs[:, k], inv, diffs[:, k])
                        / cfg.incr_bandwidth**2
                    )
            else:
                qi = self.transform_incrs(query.past_increments)
                d2 += (
                    np.sum((self._incrs_t - qi) ** 2, axis=(1, 2))
                    / cfg.incr_bandwidth**2
                )
            if cfg.use_logspec and query.frozen_cumulants:
                d2 += self._logspec_terms(query) / 1.0
        if query.latent.size:
            d2 += (
                np.sum((self._latents - query.latent) ** 2, axis=1)
                / cfg.latent_bandwidth**2
            )
        if cfg.wls_model is not None and query.wls_theta is not None:
            d2 += (
                np.sum((self._thetas - query.wls_theta) ** 2, axis=1)
                / cfg.wls_bandwidth**2
            )
        return np.maximum(d2, 0.0)

    def summaries_incrs(self) -> np.ndarray:
        if not hasattr(self, "_raw_incrs") or self._raw_incrs is None:
            self._raw_incrs = np.array(
                [s.past_increments for s in self.summaries]
            )
        return self._raw_incrs

    def _logspec_terms(self, query: ConditioningSummary) -> np.ndarray:
        """Batched squared log-spectral distances to the stored cumulants."""
        out = np.zeros(self.n_atoms)
        p = len(query.frozen_cumulants)
        for k in range(p):
            inv_half = query.frozen_cumulants[k].inv_sqrt
            w = np.linalg.eigvalsh(
                inv_half @ self._cum_stack[:, k] @ inv_half
            )
            out += np.max(np.abs(np.log(np.maximum(w, 1e-300))), axis=1) ** 2
        return out

    def anchor_only_logweights(self, anchor: np.ndarray) -> np.ndarray:
        """Gaussian anchor-only logweight of each candidate vs a runtime state."""
        if self._anchors_t is None:
            self.build_caches()
        qa = self.transform_anchor(np.asarray(anchor, dtype=float))
        d2 = (
            np.sum((self._anchors_t - qa) ** 2, axis=1)
            / self.config.kernel.anchor_bandwidth**2
        )
        return -0.5 * d2 / self.config.kernel.h**2


def _estimate_reference(paths, dt: float) -> float:
    """Isotropic reference variance rate from mean squared increments."""
    num = 0.0
    cnt = 0
    for p in paths:
        inc = np.diff(np.asarray(p, dtype=float), axis=0)
        num += float(np.sum(inc**2))
        cnt += inc.size
    return max(num / max(cnt, 1) / dt, 1e-12)


def fit_component(
    training_paths,
    config: ComponentConfig,
    latents=None,
    references=None,
) -> FittedComponent:
    """Build training summaries and response atoms for one level.

    ``latents`` optionally supplies per-path arrays aligned with the path
    index; ``references`` optionally supplies per-path lists of FlooredPsd
    reference covariances per coarse step (the dynamic-reference case).
    Every admissible (path, index) pair with a full memory block contributes
    one atom, so a path of length T yields T - p_max - 1 atoms.
    """
    cfg = config
    paths = [np.asarray(p, dtype=float) for p in training_paths]
    if not paths:
        raise InsufficientData("no training paths")
    d = paths[0].shape[1]
    if any(p.shape[0] <= cfg.p_max + 1 for p in paths):
        raise InsufficientData("every path must be longer than p_max + 1")

    if cfg.reference_scale is not None:
        ref_rate = cfg.reference_scale
    else:
        ref_rate = _estimate_reference(paths, cfg.dt)
    reference_cov = spectral_floor(
        SymMatrix(ref_rate * np.eye(d)), cfg.bridge.epsilon
    )

    summaries = []
    atoms = []
    source = []
    for pid, path in enumerate(paths):
        T = path.shape[0]
        incs = np.diff(path, axis=0)
        lat_path = latents[pid] if latents is not None else None
        ref_path = references[pid] if references is not None else None
        for i in range(cfg.p_max, T - 1):
            p = cfg.p_max
            past = incs[i - p : i] if p else np.zeros((0, d))
            if ref_path is not None and p:
                cums = tuple(
                    _as_cumulant(ref_path[k], cfg) for k in range(i - p, i)
                )
            elif p and (cfg.use_query_metric or cfg.use_logspec):
                cums = tuple(
                    _scaled_cumulant(reference_cov, cfg) for _ in range(p)
                )
            else:
                cums = ()
            theta = None
            if cfg.wls_model is not None and p:
                wcums = cums if cums else [
                    _scaled_cumulant(reference_cov, cfg)
                ] * p
                theta = wls_drift(past, list(wcums), cfg.wls_model)
            lat = (
                np.asarray(lat_path[i], dtype=float)
                if lat_path is not None
                else np.zeros(0)
            )
            anchor = path[i]
            if cfg.normalize_anchor:
                cur_ref = (
                    _as_cumulant(ref_path[i], cfg)
                    if ref_path is not None
                    else _scaled_cumulant(reference_cov, cfg)
                )
                anchor = cur_ref.inv_sqrt @ anchor
            summaries.append(
                ConditioningSummary(
                    anchor=anchor,
                    past_increments=past,
                    latent=lat,
                    frozen_cumulants=cums,
                    wls_theta=theta,
                )
            )
            atoms.append(incs[i])
            source.append((pid, i))

    fc = FittedComponent(
        config=cfg,
        summaries=summaries,
        atoms=np.array(atoms),
        source=np.array(source, dtype=int),
        reference_cov=reference_cov,
    )
    _fit_reducers(fc)
    fc.build_caches()
    return fc


def _as_cumulant(ref, cfg: ComponentConfig) -> FlooredPsd:
    """Coerce a per-step reference into a floored cumulant C_k = dt * A_k."""
    if isinstance(ref, FlooredPsd):
        base = ref.base
    elif isinstance(ref, SymMatrix):
        base = ref
    else:
        base = SymMatrix(ref)
    return spectral_floor(
        SymMatrix(base.entries * cfg.dt), cfg.bridge.epsilon * cfg.dt
    )


def _scaled_cumulant(reference_cov: FlooredPsd, cfg: ComponentConfig) -> FlooredPsd:
    return spectral_floor(
        SymMatrix(reference_cov.base.entries * cfg.dt),
        cfg.bridge.epsilon * cfg.dt,
    )


def _fit_reducers(fc: FittedComponent) -> None:
    cfg = fc.config
    if cfg.pcr_threshold is not None:
        samples = np.array([s.anchor for s in fc.summaries])
        if cfg.pcr_mode == "componentwise":
            std = samples.std(axis=0)
            samples = samples / np.where(std > 0, std, 1.0)
        fc.state_reducer = pcr_fit(samples, cfg.pcr_threshold)
    if cfg.pcr_incr_threshold is not None and cfg.p_max:
        rows = np.concatenate(
            [s.past_increments for s in fc.summaries], axis=0
        )
        fc.incr_reducer = pcr_fit(rows, cfg.pcr_incr_threshold)


def align_components(components):
    """Restrict every component to the intersection of (path, index) sources.

    Coupled logweights index historical candidates jointly across levels, so
    the atom tables must share one candidate index set.
    """
    keysets = [
        {tuple(s) for s in map(tuple, fc.source)} for fc in components
    ]
    common = sorted(set.intersection(*keysets))
    out = []
    for fc in components:
        lookup = {tuple(s): i for i, s in enumerate(map(tuple, fc.source))}
        idx = np.array([lookup[k] for k in common], dtype=int)
        sub = FittedComponent(
            config=fc.config,
            summaries=[fc.summaries[i] for i in idx],
            atoms=fc.atoms[idx],
            source=fc.source[idx],
            state_reducer=fc.state_reducer,
            incr_reducer=fc.incr_reducer,
            reference_cov=fc.reference_cov,
        )
        sub.build_caches()
        out.append(sub)
    return out


def raw_logweights(fc: FittedComponent, query: ConditioningSummary) -> np.ndarray:
    """Kernel logweights of every training candidate for one query."""
    d2 = fc.squared_distances(query)
    return kernel_logweights(fc.config.kernel, np.sqrt(d2))


def surrogate_from_logweights(
    fc: FittedComponent,
    logweights: np.ndarray,
    query: ConditioningSummary | None = None,
) -> TerminalSurrogate:
    """Softmax the logweights; on total exclusion fall back to the nearest
    FALLBACK_KNN candidates by pseudo-distance with uniform weights."""
    try:
        w = stable_softmax(logweights)
    except AllExcluded:
        if query is None:
            raise
        d2 = fc.squared_distances(query)
        k = min(FALLBACK_KNN, fc.n_atoms)
        near = np.argpartition(d2, k - 1)[:k]
        w = np.zeros(fc.n_atoms)
        w[near] = 1.0 / k
    return TerminalSurrogate(
        weights=w, atoms=fc.atoms, source_indices=np.arange(fc.n_atoms)
    )


def compute_surrogate(fc: FittedComponent, query: ConditioningSummary):
    """(TerminalSurrogate, raw logweights) for one conditioning query."""
    lw = raw_logweights(fc, query)
    return surrogate_from_logweights(fc, lw, query), lw


def couple_logweights(lx, lf, lx0, cc: CouplingConfig):
    """Mix state and covariance logweights before the softmax.

    lbar_X = (1 - rho_x) lx + rho_x lf
    lbar_F = (1 - rho_y) lf + rho_y ((1 - alpha) lx + alpha lx0)

    Any -inf term entering with a strictly positive coefficient makes the
    mixed entry -inf.
    """
    lx = np.asarray(lx, dtype=float)
    lf = np.asarray(lf, dtype=float)
    lx0 = np.asarray(lx0, dtype=float)
    if lx.shape != lf.shape or lx.shape != lx0.shape:
        raise ShapeMismatch("logweight vectors must align")
    bar_x = _mix((1.0 - cc.rho_x, lx), (cc.rho_x, lf))
    inner = _mix((1.0 - cc.alpha, lx), (cc.alpha, lx0))
    bar_f = _mix((1.0 - cc.rho_y, lf), (cc.rho_y, inner))
    return bar_x, bar_f


def _mix(*terms):
    """Coefficient-weighted sum where -inf absorbs under positive weight."""
    out = None
    mask = None
    for coef, vec in terms:
        if coef == 0.0:
            continue
        contrib = np.where(np.isfinite(vec), coef * vec, 0.0)
        bad = ~np.isfinite(vec)
        out = contrib if out is None else out + contrib
        mask = bad if mask is None else (mask | bad)
    if out is None:  # all coefficients zero
        out = np.zeros_like(terms[0][1])
        mask = np.zeros(out.shape, dtype=bool)
    out = out.copy()
    out[mask] = NEG_INF
    return out


def build_summary(
    fc: FittedComponent, history: np.ndarray, latent=None, references=None
) -> ConditioningSummary:
    """Conditioning summary of a generated history (cold start allowed).

    ``history`` is (m+1, d) of states up to the present anchor; with fewer
    than p_max recorded increments the memory block shrinks accordingly.
    """
    cfg = fc.config
    history = np.asarray(history, dtype=float)
    incs = np.diff(history, axis=0)
    p = min(cfg.p_max, incs.shape[0])
    past = incs[incs.shape[0] - p :] if p else np.zeros((0, history.shape[1]))
    if p < cfg.p_max:
        # pad the memory block so candidate comparison stays well-shaped
        pad = np.zeros((cfg.p_max - p, history.shape[1]))
        past = np.concatenate([pad, past], axis=0)
        p = cfg.p_max
    if references is not None and p:
        got = list(references[-p:])
        while len(got) < p:
            got.insert(0, _scaled_cumulant(fc.reference_cov, cfg))
        cums = tuple(got)
    elif p and (cfg.use_query_metric or cfg.use_logspec):
        cums = tuple(_scaled_cumulant(fc.reference_cov, cfg) for _ in range(p))
    else:
        cums = ()
    theta = None
    if cfg.wls_model is not None and p:
        wcums = cums if cums else [_scaled_cumulant(fc.reference_cov, cfg)] * p
        theta = wls_drift(past, list(wcums), cfg.wls_model)
    anchor = history[-1]
    if cfg.normalize_anchor:
        cur = cums[-1] if cums else _scaled_cumulant(fc.reference_cov, cfg)
        anchor = cur.inv_sqrt @ anchor
    return ConditioningSummary(
        anchor=anchor,
        past_increments=past,
        latent=np.asarray(latent, dtype=float) if latent is not None else np.zeros(0),
        frozen_cumulants=cums,
        wls_theta=theta,
    )


def generate_single(
    fc: FittedComponent,
    warm,
    horizon: int,
    rng: np.random.Generator,
    noise: bool = True,
    reference_provider=None,
) -> np.ndarray:
    """Closed-loop single-component generation.

    ``warm`` is (w, d) with w >= 1; the output path has ``horizon`` states,
    the first min(w, horizon) of which echo the warm history. Each loop
    iteration registers the generated increment in the memory before the
    next conditioning summary is formed.
    """
    warm = np.atleast_2d(np.asarray(warm, dtype=float))
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    states = [warm[i].copy() for i in range(min(warm.shape[0], horizon))]
    dt = fc.config.dt
    while len(states) < horizon:
        m = len(states) - 1
        history = np.array(states)
        summary = build_summary(fc, history)
        surrogate, _ = compute_surrogate(fc, summary)
        if reference_provider is not None:
            cov = reference_provider(m, history)
        else:
            cov = fc.reference_cov
        fi = FrozenInterval(
            t_start=m * dt, t_end=(m + 1) * dt, cov=cov, anchor=states[-1]
        )
        states.append(
            step_interval(fi, surrogate, fc.config.bridge, states[-1], rng, noise)
        )
    return np.array(states)


# Registered backward maps: generated lower-level state -> raw descriptor for
# the level above. "unvech" unpacks a vech row; "hybrid_ribbon" decodes a
# hybrid-frame vector and returns the rank-one ribbon in vech coordinates.
def _map_unvech(state: np.ndarray) -> SymMatrix:
    return unvech(state)


def _map_hybrid_ribbon(state: np.ndarray) -> SymMatrix:
    from .descriptor import HybridFrame, hybrid_frame_decode
    from .psd_linalg import vech

    hf = HybridFrame.from_vector(state)
    ribbon = hybrid_frame_decode(hf)
    v = vech(ribbon)
    return SymMatrix(np.outer(v, v))


BACKWARD_MAPS = {
    "unvech": _map_unvech,
    "hybrid_ribbon": _map_hybrid_ribbon,
}


def generate_joint(
    levels,
    couplings,
    warms,
    horizon: int,
    rng: np.random.Generator,
    backward_maps=None,
    noise: bool = True,
    instrument=None,
) -> list:
    """Joint multi-level closed loop, levels ordered deepest-first.

    Per coarse step all levels' raw logweights are computed first, adjacent
    pairs are coupled bottom-up, then levels step deepest-first: each newly
    generated lower state is mapped (backward map, PSD projection, spectral
    floor) into the reference covariance the level above uses on the same
    interval. ``instrument`` receives (level_idx, step, FlooredPsd) for every
    dynamic reference handed upward.
    """
    n_lev = len(levels)
    if backward_maps is None:
        backward_maps = []
    maps = [
        BACKWARD_MAPS[m] if isinstance(m, str) else m for m in backward_maps
    ]
    if n_lev > 1 and len(maps) != n_lev - 1:
        raise ShapeMismatch("need one backward map per adjacent level pair")
    if len(couplings) != max(n_lev - 1, 0):
        raise ShapeMismatch("need one coupling config per adjacent level pair")
    histories = [
        [np.asarray(w[i], dtype=float) for i in range(min(len(w), horizon))]
        for w in warms
    ]
    start = len(histories[0])
    if any(len(h) != start for h in histories):
        raise ShapeMismatch("warm histories must share their length")

    # Dynamic reference cumulant history per upper level, seeded from the
    # warm prefix by applying the backward maps to the lower warm states.
    ref_hists = [None] * n_lev
    for l in range(1, n_lev):
        eps = levels[l].config.bridge.epsilon
        ref_hists[l] = [
            spectral_floor(psd_project(maps[l - 1](s)), eps)
            for s in histories[l - 1][1:]
        ]

    def _summary(l: int) -> ConditioningSummary:
        fc = levels[l]
        latent = histories[l - 1][-1] if l > 0 else None
        refs = None
        if l > 0 and ref_hists[l]:
            refs = [
                _as_cumulant(c, fc.config)
                for c in ref_hists[l][-fc.config.p_max :]
            ]
        return build_summary(fc, np.array(histories[l]), latent, refs)

    for m in range(start - 1, horizon - 1):
        raws = [raw_logweights(fc, _summary(l)) for l, fc in enumerate(levels)]
        final = list(raws)
        # couple bottom-up; level l is the covariance side (F), level l + 1
        # the state side (X) of each adjacent pair
        for l in range(n_lev - 1):
            upper = levels[l + 1]
            lx0 = upper.anchor_only_logweights(histories[l + 1][-1])
            bar_x, bar_f = couple_logweights(
                final[l + 1], raws[l], lx0, couplings[l]
            )
            final[l + 1] = bar_x
            final[l] = bar_f
        # step deepest-first, threading the dynamic reference upward
        dyn_cov = None
        pending_refs = [None] * n_lev
        for l, fc in enumerate(levels):
            hist = histories[l]
            surrogate = surrogate_from_logweights(fc, final[l], _summary(l))
            cov = dyn_cov if dyn_cov is not None else fc.reference_cov
            dt = fc.config.dt
            fi = FrozenInterval(
                t_start=m * dt, t_end=(m + 1) * dt, cov=cov, anchor=hist[-1]
            )
            new_state = step_interval(
                fi, surrogate, fc.config.bridge, hist[-1], rng, noise
            )
            hist.append(new_state)
            if l < n_lev - 1:
                raw = maps[l](new_state)
                eps = levels[l + 1].config.bridge.epsilon
                dyn_cov = spectral_floor(psd_project(raw), eps)
                pending_refs[l + 1] = dyn_cov
                if instrument is not None:
                    instrument(l + 1, m, dyn_cov)
        # register this step's dynamic references so the next step's
        # cumulant memory stays aligned with the increment memory
        for l in range(1, n_lev):
            if pending_refs[l] is not None:
                ref_hists[l].append(pending_refs[l])
    return [np.array(h) for h in histories]


# ---------------------------------------------------------------------------
# Serialization: JSON manifest + CSV atom tables.

def _fmt(a) -> list:
    return [f"{v:.17g}" for v in np.asarray(a, dtype=float).ravel()]


def _reducer_dict(r: PcrReducer | None):
    if r is None:
        return None
    return {
        "mean": _fmt(r.mean),
        "components": _fmt(r.components),
        "shape": list(r.components.shape),
        "scales": _fmt(r.scales),
        "explained_threshold": r.explained_threshold,
    }


def _reducer_from(d):
    if d is None:
        return None
    k, dim = d["shape"]
    return PcrReducer(
        mean=np.array([float(v) for v in d["mean"]]),
        components=np.array([float(v) for v in d["components"]]).reshape(k, dim),
        scales=np.array([float(v) for v in d["scales"]]),
        explained_threshold=float(d["explained_threshold"]),
    )


def save_model(dirpath: str, components) -> None:
    """Serialize fitted components: manifest.json + one CSV table per level."""
    os.makedirs(dirpath, exist_ok=True)
    manifest = {"levels": []}
    for i, fc in enumerate(components):
        cfg = fc.config
        entry = {
            "level_id": cfg.level_id,
            "config": {
                "dt": cfg.dt,
                "p_max": cfg.p_max,
                "kernel": {
                    "variant": cfg.kernel.variant,
                    "h": cfg.kernel.h,
                    "R": cfg.kernel.R,
                    "anchor_bandwidth": cfg.kernel.anchor_bandwidth,
                },
                "bridge": {
                    "n_inner": cfg.bridge.n_inner,
                    "epsilon": cfg.bridge.epsilon,
                    "drift_clip": cfg.bridge.drift_clip,
                },
                "pcr_threshold": cfg.pcr_threshold,
                "pcr_incr_threshold": cfg.pcr_incr_threshold,
                "pcr_mode": cfg.pcr_mode,
                "whiten": cfg.whiten,
                "wls_model": cfg.wls_model,
                "incr_bandwidth": cfg.incr_bandwidth,
                "latent_bandwidth": cfg.latent_bandwidth,
                "wls_bandwidth": cfg.wls_bandwidth,
                "use_query_metric": cfg.use_query_metric,
                "use_logspec": cfg.use_logspec,
                "normalize_anchor": cfg.normalize_anchor,
                "reference_scale": cfg.reference_scale,
            },
            "state_reducer": _reducer_dict(fc.state_reducer),
            "incr_reducer": _reducer_dict(fc.incr_reducer),
            "reference_rate": f"{fc.reference_cov.base.entries[0, 0]:.17g}",
            "atoms_csv": f"level_{i}_atoms.csv",
            "dim": fc.dim,
        }
        manifest["levels"].append(entry)
        _write_atoms_csv(os.path.join(dirpath, entry["atoms_csv"]), fc)
    tmp = os.path.join(dirpath, "manifest.json.tmp")
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    os.replace(tmp, os.path.join(dirpath, "manifest.json"))


def _write_atoms_csv(path: str, fc: FittedComponent) -> None:
    import csv as _csv

    d = fc.dim
    p = fc.config.p_max
    lat_q = fc.summaries[0].latent.size if fc.summaries else 0
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        w = _csv.writer(fh)
        header = (
            ["path_id", "index"]
            + [f"anchor{j}" for j in range(d)]
            + [f"inc{k}_{j}" for k in range(p) for j in range(d)]
            + [f"lat{j}" for j in range(lat_q)]
            + [f"atom{j}" for j in range(d)]
        )
        w.writerow(header)
        for s, atom, src in zip(fc.summaries, fc.atoms, fc.source):
            row = (
                [int(src[0]), int(src[1])]
                + _fmt(s.anchor)
                + _fmt(s.past_increments)
                + _fmt(s.latent)
                + _fmt(atom)
            )
            w.writerow(row)
    os.replace(tmp, path)


def load_model(dirpath: str):
    """Load components saved by :func:`save_model`."""
    import csv as _csv

    with open(os.path.join(dirpath, "manifest.json")) as fh:
        manifest = json.load(fh)
    out = []
    for entry in manifest["levels"]:
        c = entry["config"]
        cfg = ComponentConfig(
            level_id=entry["level_id"],
            dt=c["dt"],
            kernel=KernelConfig(
                variant=c["kernel"]["variant"],
                h=c["kernel"]["h"],
                R=c["kernel"]["R"],
                anchor_bandwidth=c["kernel"]["anchor_bandwidth"],
            ),
            bridge=BridgeStepConfig(
                n_inner=c["bridge"]["n_inner"],
                epsilon=c["bridge"]["epsilon"],
                drift_clip=c["bridge"]["drift_clip"],
            ),
            p_max=c["p_max"],
            pcr_threshold=c["pcr_threshold"],
            pcr_incr_threshold=c["pcr_incr_threshold"],
            pcr_mode=c["pcr_mode"],
            whiten=c["whiten"],
            wls_model=c["wls_model"],
            incr_bandwidth=c["incr_bandwidth"],
            latent_bandwidth=c["latent_bandwidth"],
            wls_bandwidth=c["wls_bandwidth"],
            use_query_metric=c["use_query_metric"],
            use_logspec=c["use_logspec"],
            normalize_anchor=c["normalize_anchor"],
            reference_scale=c["reference_scale"],
        )
        d = entry["dim"]
        p = cfg.p_max
        summaries = []
        atoms = []
        source = []
        with open(os.path.join(dirpath, entry["atoms_csv"]), newline="") as fh:
            reader = _csv.reader(fh)
            header = next(reader)
            lat_q = sum(1 for h in header if h.startswith("lat"))
            for row in reader:
                vals = [float(v) for v in row[2:]]
                k = 0
                anchor = np.array(vals[k : k + d]); k += d
                past = np.array(vals[k : k + p * d]).reshape(p, d) if p else np.zeros((0, d))
                k += p * d
                lat = np.array(vals[k : k + lat_q]); k += lat_q
                atom = np.array(vals[k : k + d])
                theta = None
                cums = ()
                summaries.append(
                    ConditioningSummary(
                        anchor=anchor,
                        past_increments=past,
                        latent=lat,
                        frozen_cumulants=cums,
                        wls_theta=theta,
                    )
                )
                atoms.append(atom)
                source.append((int(row[0]), int(row[1])))
        rate = float(entry["reference_rate"])
        fc = FittedComponent(
            config=cfg,
            summaries=summaries,
            atoms=np.array(atoms),
            source=np.array(source, dtype=int),
            state_reducer=_reducer_from(entry["state_reducer"]),
            incr_reducer=_reducer_from(entry["incr_reducer"]),
            reference_cov=spectral_floor(
                SymMatrix(rate * np.eye(d)), cfg.bridge.epsilon
            ),
        )
        # rebuild derived summary pieces dropped from the CSV
        if cfg.wls_model is not None and p:
            rebuilt = []
            for s in fc.summaries:
                wcums = [_scaled_cumulant(fc.reference_cov, cfg)] * p
                rebuilt.append(
                    replace(
                        s,
                        wls_theta=wls_drift(
                            s.past_increments, wcums, cfg.wls_model
                        ),
                    )
                )
            fc.summaries = rebuilt
        if p and (cfg.use_query_metric or cfg.use_logspec):
            fc.summaries = [
                replace(
                    s,
                    frozen_cumulants=tuple(
                        _scaled_cumulant(fc.reference_cov, cfg)
                        for _ in range(p)
                    ),
                )
                for s in fc.summaries
            ]
        fc.build_caches()
        out.append(fc)
    return out
