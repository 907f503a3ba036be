"""Experiment machinery behind the CLI.

Continuation models for predictive-energy scoring, the Monte Carlo floor
oracle for the low-rank stress experiment, the dimension sweep, the
three-phase hyperparameter ladder, and the Heston recovery pipeline.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .bridge import BridgeStepConfig
from .conditioning import KernelConfig
from .descriptor import cumulative_avg_cov, hybrid_frame_encode
from .dgp import (
    HestonConfig,
    HopfConfig,
    draw_heston_params,
    estimate_heston,
    hopf_signal_step,
    path_rng,
    simulate_heston,
    simulate_hopf,
)
from .errors import NonIncreasingHorizons
from .generator import (
    ComponentConfig,
    CouplingConfig,
    FittedComponent,
    align_components,
    fit_component,
    generate_joint,
    generate_single,
)
from .scoring import EnergyScoreConfig, energy_score_path, energy_score_window

__all__ = [
    "BridgeContinuationModel",
    "hopf_bayes_floor",
    "run_dim_cell",
    "run_dim_sweep",
    "run_ladder",
    "run_heston_experiment",
    "energy_distance",
    "write_csv_atomic",
]


class BridgeContinuationModel:
    """Adapter exposing autoregressive K-step continuations of one component."""

    def __init__(self, fc: FittedComponent, noise: bool = True):
        self.fc = fc
        self.noise = noise

    def sample_window(self, history, K, L, rng):
        history = np.asarray(history, dtype=float)
        out = np.empty((L, K, history.shape[1]))
        for ell in range(L):
            path = generate_single(
                self.fc, history, history.shape[0] + K, rng, noise=self.noise
            )
            out[ell] = path[-K:]
        return out


def energy_distance(a, b) -> float:
    """Energy distance between two sample clouds (1-d or vector samples)."""
    a = np.atleast_2d(np.asarray(a, dtype=float).T).T
    b = np.atleast_2d(np.asarray(b, dtype=float).T).T
    from scipy.spatial.distance import cdist

    return float(
        2.0 * cdist(a, b).mean() - cdist(a, a).mean() - cdist(b, b).mean()
    )


def write_csv_atomic(path: str, header, rows) -> None:
    """Atomic CSV write (temp + rename) with 17-significant-digit floats."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(
                [f"{v:.17g}" if isinstance(v, float) else v for v in row]
            )
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Low-rank stress experiment (dimension sweep)

def hopf_bayes_floor(
    cfg: HopfConfig,
    states,
    L: int,
    rng: np.random.Generator,
) -> float:
    """MC estimate of the one-step Bayes-optimal energy floor on the signal
    subspace, normalized by sqrt(q) with q = 2.

    For each conditioning state, the ensemble and the observation are both
    drawn from the true one-step signal transition.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    total = 0.0
    sq = np.sqrt(2.0)
    for s in states:
        ens = np.array(
            [hopf_signal_step(s[:2], cfg, rng) for _ in range(L)]
        )
        obs = hopf_signal_step(s[:2], cfg, rng)
        total += energy_score_window(ens / sq, obs / sq)
    return total / states.shape[0]


@dataclass(frozen=True)
class DimSweepParams:
    """Desk-scale controls for the dimension sweep."""

    dims: tuple = (4, 16, 64)
    seeds: tuple = (0, 1)
    train_atoms: int = 1500
    bandwidth_grid: tuple = (0.08, 0.12, 0.18, 0.25, 0.4, 0.6, 0.9, 1.4, 2.0)
    threshold_grid: tuple = (0.6, 0.8, 0.9)
    n_inner: int = 8
    epsilon: float = 1e-8
    score_L: int = 32
    val_L: int = 8
    floor_L: int = 64
    floor_windows: int = 100
    max_windows: int = 100
    omega: float = 48.0 * np.pi
    sigma_signal: float = 1.0
    lambda_perp: float = 50.0
    sigma_perp: float = 2.0


def _split_blocks(path: np.ndarray):
    """Contiguous 70/15/15 train/validation/test split along time."""
    n = path.shape[0]
    a = int(0.7 * n)
    b = int(0.85 * n)
    return path[:a], path[a:b], path[b:]


def _classic_component(
    train, h, threshold, params: DimSweepParams, use_pcr: bool
) -> FittedComponent:
    cfg = ComponentConfig(
        level_id="state",
        dt=1.0 / 250.0,
        kernel=KernelConfig(variant="quartic_compact", h=h),
        bridge=BridgeStepConfig(n_inner=params.n_inner, epsilon=params.epsilon),
        p_max=0,
        pcr_threshold=threshold if use_pcr else None,
    )
    return fit_component([train], cfg)


def _score_component(fc, block, L, rng, max_windows, stride=None):
    n = block.shape[0]
    if stride is None:
        stride = max(1, (n - 1) // max_windows)
    cfg = EnergyScoreConfig(
        p_mem=1, K=1, L=L, stride=stride, normalize_by_sqrt_q=True, dims=(0, 1)
    )
    model = BridgeContinuationModel(fc)
    return energy_score_path(model, block, cfg, rng)


def run_dim_cell(d, seed, variant, params: DimSweepParams):
    """One (dimension, seed, variant) sweep cell with validated bandwidth.

    Returns a dict with the test score, the selected hyperparameters, the
    Bayes floor estimate and the realized atom count.
    """
    years = params.train_atoms / (250.0 * 0.7)
    hcfg = HopfConfig(
        d=d,
        years=years,
        seed=seed,
        omega=params.omega,
        sigma_signal=params.sigma_signal,
        lambda_perp=params.lambda_perp,
        sigma_perp=params.sigma_perp,
    )
    path = simulate_hopf(hcfg)
    train, val, test = _split_blocks(path)
    use_pcr = variant == "classic_pcr"
    thresholds = params.threshold_grid if use_pcr else (None,)
    best = None
    for thr in thresholds:
        for h in params.bandwidth_grid:
            fc = _classic_component(train, h, thr, params, use_pcr)
            rng = np.random.default_rng((seed, hash(variant) & 0xFFFF, 1))
            score = _score_component(
                fc, val, params.val_L, rng, params.max_windows
            )
            if best is None or score < best[0]:
                best = (score, h, thr, fc)
    _, h_star, thr_star, fc_star = best
    rng = np.random.default_rng((seed, hash(variant) & 0xFFFF, 2))
    test_score = _score_component(
        fc_star, test, params.score_L, rng, params.max_windows
    )
    floor_rng = np.random.default_rng((seed, 3))
    floor_states = test[
        np.linspace(0, test.shape[0] - 1, params.floor_windows).astype(int)
    ]
    floor = hopf_bayes_floor(hcfg, floor_states, params.floor_L, floor_rng)
    return {
        "d": d,
        "seed": seed,
        "variant": variant,
        "score": test_score,
        "floor": floor,
        "h": h_star,
        "threshold": thr_star if thr_star is not None else float("nan"),
        "n_atoms": fc_star.n_atoms,
        "pcr_k": fc_star.state_reducer.k if fc_star.state_reducer else 0,
    }


DIM_SWEEP_HEADER = [
    "d",
    "seed",
    "variant",
    "score",
    "floor",
    "h",
    "threshold",
    "n_atoms",
    "pcr_k",
]


def run_dim_sweep(params: DimSweepParams, out_csv: str | None = None):
    """Full sweep over (d, seed, variant); optionally writes the results CSV."""
    rows = []
    for d in params.dims:
        for seed in params.seeds:
            for variant in ("classic_no_pcr", "classic_pcr"):
                cell = run_dim_cell(d, seed, variant, params)
                rows.append([cell[k] for k in DIM_SWEEP_HEADER])
    if out_csv is not None:
        write_csv_atomic(out_csv, DIM_SWEEP_HEADER, rows)
    return rows


# ---------------------------------------------------------------------------
# Three-phase hyperparameter ladder

def run_ladder(phases):
    """Generic three-phase ladder: each phase is (name, horizon, grid, scorer).

    ``scorer(point, selections)`` returns a validation score (lower is
    better); ``selections`` maps completed phase names to their chosen
    points. Horizons must be strictly increasing across phases.
    """
    horizons = [p[1] for p in phases]
    if any(b <= a for a, b in zip(horizons, horizons[1:])):
        raise NonIncreasingHorizons("phase horizons must strictly increase")
    selections = {}
    scores = {}
    for name, _horizon, grid, scorer in phases:
        best = None
        for point in grid:
            s = scorer(point, dict(selections))
            if best is None or s < best[0]:
                best = (s, point)
        selections[name] = best[1]
        scores[name] = best[0]
    return selections, scores


# ---------------------------------------------------------------------------
# Heston three-layer pipeline

@dataclass(frozen=True)
class HestonRunParams:
    """Desk-scale controls for the Heston recovery experiment."""

    n_train: int = 32
    n_val: int = 16
    T: int = 128
    warm: int = 32
    p_max: int = 2
    h_state: float = 0.8
    h_cov: float = 1.0
    h_frame: float = 1.0
    n_inner: int = 8
    epsilon: float = 1e-6
    coupling: CouplingConfig = CouplingConfig(rho_x=0.3, rho_y=0.3, alpha=0.5)
    use_query_metric: bool = True
    use_logspec: bool = False
    seed: int = 0


def _heston_streams(path: np.ndarray, dt: float):
    """(vech cumulative covariance stream, hybrid-frame stream) per path.

    Both streams are defined from coarse index 1; index 0 repeats index 1 so
    the streams align with the path grid.
    """
    dp = cumulative_avg_cov(path, dt)
    packed = np.vstack([dp.packed[0], dp.packed])
    frames = []
    for m in dp.descriptors:
        xv = max(float(m.entries[0, 0]), 1e-12)
        frames.append(hybrid_frame_encode(m, xv).to_vector())
    frames = np.vstack([frames[0], np.array(frames)])
    # refs[k] must be the covariance descriptor that drives interval
    # [k, k+1], i.e. the one realized at coarse index k + 1
    refs = list(dp.descriptors) + [dp.descriptors[-1]]
    return packed, frames, refs


def fit_heston_levels(train_paths, dt: float, rp: HestonRunParams):
    """Fit the (tertiary, secondary, primary) components, deepest first."""
    streams = [_heston_streams(p, dt) for p in train_paths]
    packed = [s[0] for s in streams]
    frames = [s[1] for s in streams]
    refs = [s[2] for s in streams]

    tert_cfg = ComponentConfig(
        level_id="frame",
        dt=dt,
        kernel=KernelConfig(variant="gaussian", h=rp.h_frame),
        bridge=BridgeStepConfig(n_inner=rp.n_inner, epsilon=rp.epsilon),
        p_max=1,
    )
    sec_cfg = ComponentConfig(
        level_id="covariance",
        dt=dt,
        kernel=KernelConfig(variant="gaussian", h=rp.h_cov),
        bridge=BridgeStepConfig(n_inner=rp.n_inner, epsilon=rp.epsilon),
        p_max=1,
    )
    prim_cfg = ComponentConfig(
        level_id="state",
        dt=dt,
        kernel=KernelConfig(variant="gaussian", h=rp.h_state),
        bridge=BridgeStepConfig(n_inner=rp.n_inner, epsilon=rp.epsilon),
        p_max=rp.p_max,
        use_query_metric=rp.use_query_metric,
        use_logspec=rp.use_logspec,
    )
    tert = fit_component(frames, tert_cfg)
    sec = fit_component(packed, sec_cfg, latents=frames)
    prim = fit_component(
        train_paths, prim_cfg, latents=packed, references=refs
    )
    return align_components([tert, sec, prim])


def _heston_classic_component(train_paths, dt: float, rp: HestonRunParams):
    """Frozen-identity-reference single-level baseline."""
    cfg = ComponentConfig(
        level_id="state",
        dt=dt,
        kernel=KernelConfig(variant="gaussian", h=rp.h_state),
        bridge=BridgeStepConfig(n_inner=rp.n_inner, epsilon=rp.epsilon),
        p_max=rp.p_max,
        reference_scale=1.0,
    )
    return fit_component(train_paths, cfg)


def generate_heston_path(levels, rp: HestonRunParams, real_path, dt, rng):
    """Warm-start closed-loop generation of one held-out path (all levels)."""
    warm_state = real_path[: rp.warm]
    packed, frames, _ = _heston_streams(real_path[: rp.warm], dt)
    warms = [frames[: rp.warm], packed[: rp.warm], warm_state]
    paths = generate_joint(
        levels,
        couplings=[rp.coupling, rp.coupling],
        warms=warms,
        horizon=real_path.shape[0],
        rng=rng,
        backward_maps=["hybrid_ribbon", "unvech"],
    )
    return paths[2]


def run_heston_experiment(rp: HestonRunParams, base: HestonConfig | None = None):
    """Train/held-out Heston recovery run, TR-SBTS vs frozen-identity baseline.

    Returns per-path (kappa, theta, xi, rho) estimates for real, TR-SBTS and
    baseline synthetic paths, plus energy distances of each parameter cloud.
    """
    if base is None:
        base = HestonConfig(T=rp.T)
    dt = base.dt
    master = rp.seed
    train_paths = []
    for pid in range(rp.n_train):
        rng = path_rng(master, pid)
        cfg = draw_heston_params(base, rng)
        train_paths.append(simulate_heston(cfg, rng))
    val_paths = []
    for pid in range(rp.n_val):
        rng = path_rng(master, 10_000 + pid)
        cfg = draw_heston_params(base, rng)
        val_paths.append(simulate_heston(cfg, rng))

    levels = fit_heston_levels(train_paths, dt, rp)
    baseline = _heston_classic_component(train_paths, dt, rp)

    est_real, est_model, est_base = [], [], []
    for pid, real in enumerate(val_paths):
        gen_rng = path_rng(master, 20_000 + pid)
        synth = generate_heston_path(levels, rp, real, dt, gen_rng)
        base_rng = path_rng(master, 30_000 + pid)
        bsynth = generate_single(
            baseline, real[: rp.warm], real.shape[0], base_rng
        )
        est_real.append(estimate_heston(real, dt))
        est_model.append(estimate_heston(synth, dt))
        est_base.append(estimate_heston(bsynth, dt))
    est_real = np.array(est_real)
    est_model = np.array(est_model)
    est_base = np.array(est_base)
    names = ("kappa", "theta", "xi", "rho")
    dists = {}
    for j, name in enumerate(names):
        dists[name] = {
            "trsbts": energy_distance(est_real[:, j], est_model[:, j]),
            "baseline": energy_distance(est_real[:, j], est_base[:, j]),
        }
    return {
        "est_real": est_real,
        "est_model": est_model,
        "est_base": est_base,
        "energy_distances": dists,
    }
