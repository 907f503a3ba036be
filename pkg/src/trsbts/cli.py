"""Config-driven command line interface.

Subcommands: fit, generate, validate, sweep-dim, ladder, heston,
select-reference. Configuration is a JSON document validated against a
published schema (unknown keys rejected). All tabular output is CSV written
atomically; every run is reproducible from (config, seed).

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .bridge import BridgeStepConfig
from .conditioning import KernelConfig
from .descriptor import cumulative_avg_cov
from .errors import ConfigError, DataError, TrsbtsError
from .generator import (
    ComponentConfig,
    CouplingConfig,
    fit_component,
    generate_single,
    load_model,
    save_model,
)
from .harness import (
    DIM_SWEEP_HEADER,
    BridgeContinuationModel,
    DimSweepParams,
    HestonRunParams,
    run_dim_sweep,
    run_heston_experiment,
    run_ladder,
    write_csv_atomic,
)
from .psd_linalg import SymMatrix, spectral_floor, sym_sqrt
from .scoring import (
    EnergyScoreConfig,
    EntropicConfig,
    energy_score_path,
    entropic_select,
)

__all__ = ["main"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


_KERNEL_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "variant": {
            "enum": ["gaussian", "quartic_compact", "truncated_gaussian"]
        },
        "h": {"type": "number", "exclusiveMinimum": 0},
        "R": {"type": "number", "exclusiveMinimum": 0},
        "anchor_bandwidth": {"type": "number", "exclusiveMinimum": 0},
    },
}

_LEVEL_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["level_id", "dt"],
    "properties": {
        "level_id": {"type": "string"},
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "kernel": _KERNEL_SCHEMA,
        "n_inner": {"type": "integer", "minimum": 1},
        "epsilon": {"type": "number", "exclusiveMinimum": 0},
        "drift_clip": {"type": ["number", "null"]},
        "p_max": {"type": "integer", "minimum": 0},
        "pcr_threshold": {"type": ["number", "null"]},
        "pcr_incr_threshold": {"type": ["number", "null"]},
        "pcr_mode": {"enum": ["joint", "blockwise", "componentwise"]},
        "whiten": {"type": "boolean"},
        "wls_model": {
            "enum": ["locally_constant", "linear_in_time", None]
        },
        "incr_bandwidth": {"type": "number", "exclusiveMinimum": 0},
        "latent_bandwidth": {"type": "number", "exclusiveMinimum": 0},
        "wls_bandwidth": {"type": "number", "exclusiveMinimum": 0},
        "use_query_metric": {"type": "boolean"},
        "use_logspec": {"type": "boolean"},
        "normalize_anchor": {"type": "boolean"},
        "reference_scale": {"type": ["number", "null"]},
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "dgp": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["hopf", "heston"]},
                "d": {"type": "integer", "minimum": 2},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "years": {"type": "number", "exclusiveMinimum": 0},
                "omega": {"type": "number"},
                "sigma_signal": {"type": "number", "exclusiveMinimum": 0},
                "lambda_perp": {"type": "number", "exclusiveMinimum": 0},
                "sigma_perp": {"type": "number", "exclusiveMinimum": 0},
                "T": {"type": "integer", "minimum": 2},
                "n_train": {"type": "integer", "minimum": 1},
                "n_val": {"type": "integer", "minimum": 1},
                "warm": {"type": "integer", "minimum": 1},
            },
        },
        "model": {"type": "array", "items": _LEVEL_SCHEMA, "minItems": 1},
        "coupling": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "rho_x": {"type": "number", "minimum": 0, "maximum": 1},
                "rho_y": {"type": "number", "minimum": 0, "maximum": 1},
                "alpha": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
        "scoring": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "p_mem": {"type": "integer", "minimum": 1},
                "K": {"type": "integer", "minimum": 1},
                "L": {"type": "integer", "minimum": 1},
                "stride": {"type": "integer", "minimum": 1},
                "normalize_by_sqrt_q": {"type": "boolean"},
                "dims": {"type": "array", "items": {"type": "integer"}},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dims": {"type": "array", "items": {"type": "integer"}},
                "seeds": {"type": "array", "items": {"type": "integer"}},
                "train_atoms": {"type": "integer", "minimum": 8},
                "bandwidth_grid": {
                    "type": "array",
                    "items": {"type": "number"},
                },
                "threshold_grid": {
                    "type": "array",
                    "items": {"type": "number"},
                },
                "score_L": {"type": "integer", "minimum": 1},
                "val_L": {"type": "integer", "minimum": 1},
                "floor_L": {"type": "integer", "minimum": 1},
                "floor_windows": {"type": "integer", "minimum": 1},
                "max_windows": {"type": "integer", "minimum": 1},
            },
        },
        "ladder": {
            "type": "object",
            "additionalProperties": False,
            "required": ["phases"],
            "properties": {
                "phases": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["name", "horizon", "grid"],
                        "properties": {
                            "name": {"type": "string"},
                            "horizon": {"type": "integer", "minimum": 1},
                            "grid": {
                                "type": "array",
                                "minItems": 1,
                                "items": {"type": "object"},
                            },
                        },
                    },
                },
            },
        },
        "reference_candidates": {
            "type": "array",
            "minItems": 1,
            "items": {
                "oneOf": [
                    {"type": "number"},
                    {
                        "type": "array",
                        "items": {
                            "type": "array",
                            "items": {"type": "number"},
                        },
                    },
                ]
            },
        },
        "entropic": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "eps": {"type": "number", "exclusiveMinimum": 0},
                "alpha": {
                    "type": "number",
                    "exclusiveMinimum": 0,
                    "exclusiveMaximum": 1,
                },
            },
        },
        "data": {"type": "string"},
        "warm": {"type": "string"},
        "horizon": {"type": "integer", "minimum": 1},
        "seeds": {"type": "array", "items": {"type": "integer"}},
        "output_dir": {"type": "string"},
    },
}


def load_config(path: str) -> dict:
    """Read and schema-validate a JSON experiment config."""
    import jsonschema

    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    try:
        jsonschema.validate(doc, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from exc
    return doc


def read_paths_csv(path: str):
    """Load (path_id, t_index, coords...) CSV into a list of (T, d) arrays."""
    try:
        fh = open(path, newline="")
    except FileNotFoundError as exc:
        raise DataError(f"data file not found: {path}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 3:
            raise DataError(f"{path}: need (path_id, t_index, coords...) header")
        rows = {}
        for row in reader:
            try:
                pid = int(row[0])
                t = int(row[1])
                coords = [float(v) for v in row[2:]]
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}: malformed row {row!r}") from exc
            rows.setdefault(pid, []).append((t, coords))
    paths = []
    for pid in sorted(rows):
        entries = sorted(rows[pid])
        paths.append(np.array([c for _, c in entries]))
    if not paths:
        raise DataError(f"{path}: no data rows")
    return paths


def write_paths_csv(path: str, paths) -> None:
    d = paths[0].shape[1]
    header = ["path_id", "t_index"] + [f"c{j}" for j in range(d)]
    rows = []
    for pid, p in enumerate(paths):
        for t, state in enumerate(p):
            rows.append([pid, t] + [float(v) for v in state])
    write_csv_atomic(path, header, rows)


def level_config(doc: dict) -> ComponentConfig:
    """Build a ComponentConfig from one validated model-level dict."""
    kern = doc.get("kernel", {})
    return ComponentConfig(
        level_id=doc["level_id"],
        dt=doc["dt"],
        kernel=KernelConfig(
            variant=kern.get("variant", "gaussian"),
            h=kern.get("h", 1.0),
            R=kern.get("R", 3.0),
            anchor_bandwidth=kern.get("anchor_bandwidth", 1.0),
        ),
        bridge=BridgeStepConfig(
            n_inner=doc.get("n_inner", 16),
            epsilon=doc.get("epsilon", 1e-8),
            drift_clip=doc.get("drift_clip"),
        ),
        p_max=doc.get("p_max", 0),
        pcr_threshold=doc.get("pcr_threshold"),
        pcr_incr_threshold=doc.get("pcr_incr_threshold"),
        pcr_mode=doc.get("pcr_mode", "blockwise"),
        whiten=doc.get("whiten", False),
        wls_model=doc.get("wls_model"),
        incr_bandwidth=doc.get("incr_bandwidth", 1.0),
        latent_bandwidth=doc.get("latent_bandwidth", 1.0),
        wls_bandwidth=doc.get("wls_bandwidth", 1.0),
        use_query_metric=doc.get("use_query_metric", False),
        use_logspec=doc.get("use_logspec", False),
        normalize_anchor=doc.get("normalize_anchor", False),
        reference_scale=doc.get("reference_scale"),
    )


def _require(cfg: dict, key: str):
    if key not in cfg:
        raise ConfigError(f"config missing required section {key!r}")
    return cfg[key]


def cmd_fit(cfg: dict, args) -> int:
    paths = read_paths_csv(_require(cfg, "data"))
    levels = [fit_component(paths, level_config(lv)) for lv in _require(cfg, "model")]
    out = args.out or cfg.get("output_dir") or "model"
    save_model(out, levels)
    print(f"fit: {len(levels)} level(s), {levels[0].n_atoms} atoms -> {out}")
    return EXIT_OK


def cmd_generate(cfg: dict, args) -> int:
    levels = load_model(_require(cfg, "data"))
    warm_paths = read_paths_csv(_require(cfg, "warm"))
    horizon = _require(cfg, "horizon")
    out = args.out or cfg.get("output_dir") or "generated.csv"
    rng = np.random.default_rng(args.seed)
    generated = [
        generate_single(levels[0], warm, horizon, rng) for warm in warm_paths
    ]
    write_paths_csv(out, generated)
    print(f"generate: {len(generated)} path(s) of {horizon} states -> {out}")
    return EXIT_OK


def _score_config(doc: dict) -> EnergyScoreConfig:
    return EnergyScoreConfig(
        p_mem=doc.get("p_mem", 1),
        K=doc.get("K", 1),
        L=doc.get("L", 16),
        stride=doc.get("stride", 1),
        normalize_by_sqrt_q=doc.get("normalize_by_sqrt_q", False),
        dims=tuple(doc["dims"]) if "dims" in doc else None,
    )


def cmd_validate(cfg: dict, args) -> int:
    levels = load_model(_require(cfg, "data"))
    val_paths = read_paths_csv(_require(cfg, "warm"))
    sc = _score_config(cfg.get("scoring", {}))
    rng = np.random.default_rng(args.seed)
    model = BridgeContinuationModel(levels[0])
    scores = [energy_score_path(model, p, sc, rng) for p in val_paths]
    result = {
        "per_path": [float(s) for s in scores],
        "mean": float(np.mean(scores)),
    }
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


def cmd_sweep_dim(cfg: dict, args) -> int:
    sw = cfg.get("sweep", {})
    dg = cfg.get("dgp", {})
    kw = {}
    for key in (
        "dims",
        "seeds",
        "train_atoms",
        "bandwidth_grid",
        "threshold_grid",
        "score_L",
        "val_L",
        "floor_L",
        "floor_windows",
        "max_windows",
    ):
        if key in sw:
            v = sw[key]
            kw[key] = tuple(v) if isinstance(v, list) else v
    for key in ("omega", "sigma_signal", "lambda_perp", "sigma_perp"):
        if key in dg:
            kw[key] = dg[key]
    params = DimSweepParams(**kw)
    out = args.out or cfg.get("output_dir") or "."
    os.makedirs(out, exist_ok=True)
    out_csv = os.path.join(out, "dim_sweep.csv")
    rows = run_dim_sweep(params, out_csv=out_csv)
    for row in rows:
        print(
            "cell d=%d seed=%d %s score=%.6f floor=%.6f"
            % (row[0], row[1], row[2], row[3], row[4])
        )
    print(f"sweep-dim: {len(rows)} rows -> {out_csv}")
    return EXIT_OK


def _descriptor_stream(path: np.ndarray, dt: float) -> np.ndarray:
    """Symmetric-square-root sequence of the cumulative covariance stream."""
    dp = cumulative_avg_cov(path, dt)
    rows = []
    for m in dp.descriptors:
        rows.append(sym_sqrt(m).entries[np.tril_indices(m.dim)])
    return np.array(rows)


def cmd_ladder(cfg: dict, args) -> int:
    paths = read_paths_csv(_require(cfg, "data"))
    n_val = max(1, len(paths) // 4)
    train, val = paths[:-n_val], paths[-n_val:]
    if not train:
        raise DataError("need at least 2 paths for a train/validation split")
    base = [level_config(lv) for lv in _require(cfg, "model")]
    if len(base) != 2:
        raise ConfigError("ladder expects a 2-level model (covariance, state)")
    cov_cfg, state_cfg = base
    dt = state_cfg.dt
    rng = np.random.default_rng(args.seed)
    phase_list = _require(cfg, "ladder")["phases"]
    if len(phase_list) != 3:
        raise ConfigError("ladder expects exactly 3 phases")

    train_desc = [_descriptor_stream(p, dt) for p in train]
    val_desc = [_descriptor_stream(p, dt) for p in val]

    from dataclasses import replace as _rep

    def phase1(point, _sel):
        c = _rep(
            cov_cfg,
            kernel=_rep(cov_cfg.kernel, h=point.get("h", cov_cfg.kernel.h)),
            p_max=point.get("p_max", cov_cfg.p_max),
            pcr_threshold=point.get("pcr_threshold", cov_cfg.pcr_threshold),
        )
        fc = fit_component(train_desc, c)
        sc = EnergyScoreConfig(
            p_mem=c.p_max + 1, K=phase_list[0]["horizon"], L=8, stride=4
        )
        model = BridgeContinuationModel(fc)
        return float(
            np.mean([energy_score_path(model, p, sc, rng) for p in val_desc])
        )

    def phase2(point, sel):
        c = _rep(
            state_cfg,
            kernel=_rep(state_cfg.kernel, h=point.get("h", state_cfg.kernel.h)),
            p_max=point.get("p_max", state_cfg.p_max),
            bridge=_rep(
                state_cfg.bridge,
                epsilon=point.get("epsilon", state_cfg.bridge.epsilon),
            ),
        )
        fc = fit_component(train, c)
        sc = EnergyScoreConfig(
            p_mem=c.p_max + 1, K=phase_list[1]["horizon"], L=8, stride=4
        )
        model = BridgeContinuationModel(fc)
        return float(
            np.mean([energy_score_path(model, p, sc, rng) for p in val])
        )

    def phase3(point, sel):
        chosen = sel["state"]
        c = _rep(
            state_cfg,
            kernel=_rep(
                state_cfg.kernel, h=chosen.get("h", state_cfg.kernel.h)
            ),
            p_max=chosen.get("p_max", state_cfg.p_max),
        )
        fc = fit_component(train, c)
        cc = CouplingConfig(
            rho_x=point.get("rho_x", 0.0),
            rho_y=point.get("rho_y", 0.0),
            alpha=point.get("alpha", 0.0),
        )
        # enriched coupled score: blend the state-level raw logweights with
        # descriptor-similarity logweights before forming the surrogate
        from .generator import (
            build_summary,
            couple_logweights,
            raw_logweights,
            surrogate_from_logweights,
        )
        from .reference import FrozenInterval
        from .bridge import step_interval

        sigma_pos = float(np.std(np.concatenate([p.ravel() for p in train])))
        sigma_inc = float(
            np.std(np.concatenate([np.diff(p, axis=0).ravel() for p in train]))
        )
        from .scoring import energy_score_window, enriched_features

        K = phase_list[2]["horizon"]
        total = 0.0
        count = 0
        for vp in val:
            starts = range(c.p_max + 1, vp.shape[0] - K, 8)
            for i in starts:
                ens = []
                for _ in range(8):
                    hist = vp[: i].copy()
                    states = list(hist[-(c.p_max + 2):])
                    for r in range(K):
                        summ = build_summary(fc, np.array(states))
                        lw = raw_logweights(fc, summ)
                        lx0 = fc.anchor_only_logweights(states[-1])
                        bar_x, _ = couple_logweights(lw, lw, lx0, cc)
                        surr = surrogate_from_logweights(fc, bar_x, summ)
                        m = i + r - 1
                        fi = FrozenInterval(
                            t_start=m * dt,
                            t_end=(m + 1) * dt,
                            cov=fc.reference_cov,
                            anchor=states[-1],
                        )
                        states.append(
                            step_interval(
                                fi, surr, c.bridge, states[-1], rng
                            )
                        )
                    ens.append(
                        enriched_features(
                            np.array(states[-K:]), vp[i - 1],
                            sigma_pos, sigma_inc,
                        )
                    )
                obs = enriched_features(
                    vp[i : i + K], vp[i - 1], sigma_pos, sigma_inc
                )
                total += energy_score_window(np.array(ens), obs)
                count += 1
        return total / max(count, 1)

    scorers = {"covariance": phase1, "state": phase2, "coupling": phase3}
    phases = []
    for ph in phase_list:
        if ph["name"] not in scorers:
            raise ConfigError(
                f"unknown ladder phase {ph['name']!r}; expected "
                "covariance, state, coupling"
            )
        phases.append(
            (ph["name"], ph["horizon"], ph["grid"], scorers[ph["name"]])
        )
    selections, scores = run_ladder(phases)
    result = {
        "selected": selections,
        "validation_scores": {k: float(v) for k, v in scores.items()},
    }
    out = args.out or cfg.get("output_dir")
    payload = json.dumps(result, indent=2, sort_keys=True)
    if out:
        os.makedirs(out, exist_ok=True)
        tmp = os.path.join(out, "ladder.json.tmp")
        with open(tmp, "w") as fh:
            fh.write(payload + "\n")
        os.replace(tmp, os.path.join(out, "ladder.json"))
    print(payload)
    return EXIT_OK


HESTON_HEADER = [
    "path_id",
    "source",
    "kappa",
    "theta",
    "xi",
    "rho",
]


def cmd_heston(cfg: dict, args) -> int:
    dg = cfg.get("dgp", {})
    rp = HestonRunParams(
        n_train=dg.get("n_train", 32),
        n_val=dg.get("n_val", 16),
        T=dg.get("T", 128),
        warm=dg.get("warm", 32),
        seed=args.seed if args.seed is not None else 0,
    )
    result = run_heston_experiment(rp)
    rows = []
    for label, block in (
        ("real", result["est_real"]),
        ("trsbts", result["est_model"]),
        ("baseline", result["est_base"]),
    ):
        for pid, est in enumerate(block):
            rows.append([pid, label] + [float(v) for v in est])
    out = args.out or cfg.get("output_dir") or "."
    os.makedirs(out, exist_ok=True)
    write_csv_atomic(os.path.join(out, "heston_estimates.csv"), HESTON_HEADER, rows)
    summary = {
        "energy_distances": result["energy_distances"],
        "n_train": rp.n_train,
        "n_val": rp.n_val,
    }
    payload = json.dumps(summary, indent=2, sort_keys=True)
    tmp = os.path.join(out, "heston_summary.json.tmp")
    with open(tmp, "w") as fh:
        fh.write(payload + "\n")
    os.replace(tmp, os.path.join(out, "heston_summary.json"))
    print(payload)
    return EXIT_OK


def cmd_select_reference(cfg: dict, args) -> int:
    paths = read_paths_csv(_require(cfg, "data"))
    increments = [np.diff(p, axis=0) for p in paths]
    d = increments[0].shape[1]
    ec = cfg.get("entropic", {})
    entro = EntropicConfig(
        eps=ec.get("eps", 1e-8), alpha=ec.get("alpha", 0.9)
    )
    candidates = []
    for cand in _require(cfg, "reference_candidates"):
        if isinstance(cand, (int, float)):
            mat = float(cand) * np.eye(d)
        else:
            mat = np.array(cand, dtype=float)
            if mat.shape != (d, d):
                raise ConfigError(
                    f"candidate shape {mat.shape} does not match data dim {d}"
                )
        candidates.append(spectral_floor(SymMatrix(mat), entro.eps))
    dts = [lv["dt"] for lv in cfg.get("model", [{"dt": 1.0}])][0]
    idx = entropic_select(candidates, increments, dts, entro)
    print(json.dumps({"selected_index": idx}))
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "generate": cmd_generate,
    "validate": cmd_validate,
    "sweep-dim": cmd_sweep_dim,
    "ladder": cmd_ladder,
    "heston": cmd_heston,
    "select-reference": cmd_select_reference,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trsbts",
        description="Triangular-reference bridge generation experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--seed", type=int, default=0, help="master seed")
        p.add_argument("--out", default=None, help="output file or directory")
        p.add_argument(
            "--threads",
            type=int,
            default=None,
            help="worker threads (default: TRSBTS_THREADS or 1)",
        )
    return parser


def _error_trailer(kind: str, message: str) -> None:
    print(
        json.dumps({"error": kind, "message": message}, sort_keys=True),
        file=sys.stderr,
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is None:
        args.threads = int(os.environ.get("TRSBTS_THREADS", "1"))
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        _error_trailer("config", str(exc))
        return EXIT_CONFIG
    except DataError as exc:
        _error_trailer("data", str(exc))
        return EXIT_DATA
    except TrsbtsError as exc:
        _error_trailer("numeric", str(exc))
        return EXIT_NUMERIC
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        _error_trailer("numeric", str(exc))
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
