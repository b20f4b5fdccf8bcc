"""End-to-end orchestration: sampling, training, optimization, validation.

The chain is simulate -> train -> optimize -> validate, with every stage
persisting its artifacts under one output directory:

    doe.csv          M x 6 raw training inputs
    T.csv            M x 31 probe temperature histories
    S.csv            M x 448 serialized residual-stress fields
    err_curves.json  truncation-error curves and the selected feature counts
    bundle.json      the trained surrogate bundle
    optimize.json    per-start solver results plus the best design
    optimize_history.csv   start index + per-evaluation history rows
    validation.json  simulator-vs-surrogate superquantile comparison

CSV artifacts are headerless, row-major, full double precision.  All
stages are deterministic under the configured seeds, so reruns reproduce
every artifact byte for byte.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .optimize import (
    OptimizeConfig,
    OptimizationResult,
    draw_material_samples,
    solve,
    stress_max_samples,
)
from .reduction import (
    decompose,
    discover,
    error_curve,
    estimate_gradients,
    normalize_inputs,
    select_feature_count,
)
from .stress import field_to_row, residual_stress
from .surrogate import (
    FeatureSurrogate,
    SurrogateBundle,
    fit_best_degree,
    save_bundle,
)
from .thermal import (
    DESIGN_BOUNDS,
    RANDOM_INPUT_BOUNDS,
    DesignPoint,
    ModelParams,
    RandomInputs,
    SimGridConfig,
    SimulationError,
    simulate,
)

__all__ = [
    "INPUT_NAMES",
    "DEFAULT_STARTS",
    "PipelineConfig",
    "ValidationReport",
    "config_to_dict",
    "config_from_dict",
    "config_hash",
    "load_config",
    "save_config",
    "default_input_bounds",
    "generate_doe",
    "run_simulations",
    "train_from_matrices",
    "run_training",
    "run_optimization",
    "simulate_stress_maxima",
    "buffered_superquantile",
    "buffered_superquantile_se",
    "validate",
    "report_to_dict",
]

INPUT_NAMES = ("v", "P", "T0", "Y", "E", "rho")

# the four initial designs exercised by the optimization stage
DEFAULT_STARTS = ((500.0, 160.0), (400.0, 100.0), (400.0, 125.0), (600.0, 100.0))

_SCHEMA_VERSION = 1
_MAXIMIN_RESTARTS = 50
_CSV_FMT = "%.17g"


def default_input_bounds() -> np.ndarray:
    rows = [DESIGN_BOUNDS["v"], DESIGN_BOUNDS["P"]]
    rows += [RANDOM_INPUT_BOUNDS[k] for k in INPUT_NAMES[2:]]
    return np.array(rows, dtype=float)


@dataclass(frozen=True)
class PipelineConfig:
    """Full study configuration; the defaults reproduce the nominal setup.

    c_r scales the elastic stress estimate for the training and
    validation simulations (the stress module's own default is a
    standalone choice; the pipeline uses a softer value so the nominal
    risk budget admits a feasible design region).
    """

    M: int = 120
    n_val: int = 50
    input_bounds: np.ndarray = field(default_factory=default_input_bounds)
    model: ModelParams = field(default_factory=ModelParams)
    grid: SimGridConfig = field(default_factory=SimGridConfig)
    optimize: OptimizeConfig = field(default_factory=OptimizeConfig)
    err_threshold: float = 0.05
    min_gain: float = 0.02
    k_max: int = 10
    c_r: float = 0.5
    seed_doe: int = 1
    seed_mc: int = 2
    seed_validation: int = 3
    out_dir: str = "out"
    workers: int = 1
    synthetic: bool = False

    def __post_init__(self):
        object.__setattr__(
            self, "input_bounds", np.asarray(self.input_bounds, dtype=float)
        )
        if self.M < 30:
            raise ValueError("M must be at least 30 for a stable quadratic fit")
        if self.n_val < 10:
            raise ValueError("n_val must be at least 10")
        b = self.input_bounds
        if b.shape != (len(INPUT_NAMES), 2):
            raise ValueError(f"input_bounds must be {(len(INPUT_NAMES), 2)}")
        if np.any(b[:, 0] >= b[:, 1]):
            raise ValueError("each lower bound must be below its upper bound")
        for i, (lo, hi) in enumerate((self.optimize.v_bounds, self.optimize.p_bounds)):
            if not (b[i, 0] <= lo and hi <= b[i, 1]):
                raise ValueError(
                    f"optimizer {INPUT_NAMES[i]} bounds exceed the training box"
                )
        if not 0.0 < self.err_threshold < 1.0:
            raise ValueError("err_threshold must lie in (0, 1)")
        if not 0.0 < self.min_gain < 1.0:
            raise ValueError("min_gain must lie in (0, 1)")
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")
        if not 0.0 < self.c_r <= 1.0:
            raise ValueError("c_r must lie in (0, 1]")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


@dataclass(frozen=True)
class ValidationReport:
    """Simulator-vs-surrogate comparison of the buffered superquantile."""

    d_star: DesignPoint
    zeta_star: float
    q_sim: float
    q_surr: float
    rel_diff: float  # (q_sim - q_surr) / q_sim, sign preserved


# ---------------------------------------------------------------------------
# configuration serialization


def config_to_dict(cfg: PipelineConfig) -> dict:
    b = cfg.input_bounds
    opt = cfg.optimize
    return {
        "schema_version": _SCHEMA_VERSION,
        "M": cfg.M,
        "n_val": cfg.n_val,
        "bounds": {
            name: [float(b[i, 0]), float(b[i, 1])]
            for i, name in enumerate(INPUT_NAMES)
        },
        "model": {
            k: float(getattr(cfg.model, k))
            for k in (
                "a0", "a1", "a2", "b0", "b1", "b2",
                "A", "r", "z0", "eps_s", "Tc", "Tliq", "l", "w", "h",
            )
        },
        "grid": {
            "cells_x": cfg.grid.cells_x,
            "cells_z": cfg.grid.cells_z,
            "cfl_factor": cfg.grid.cfl_factor,
        },
        "optimize": {
            "alpha_t": opt.alpha_t,
            "tau": opt.tau,
            "n_mc": opt.n_mc,
            "v_bounds": list(opt.v_bounds),
            "p_bounds": list(opt.p_bounds),
            "temp_window": list(opt.temp_window),
            "seed": opt.seed,
            "solver": opt.solver,
            "constraint_kind": opt.constraint_kind,
            "max_iters": opt.max_iters,
            "constraint_tol": opt.constraint_tol,
            "scan_length": opt.scan_length,
            "restarts": opt.restarts,
            "penalty_weight": opt.penalty_weight,
        },
        "reduction": {
            "err_threshold": cfg.err_threshold,
            "min_gain": cfg.min_gain,
            "k_max": cfg.k_max,
        },
        "stress": {"c_r": cfg.c_r},
        "seeds": {
            "doe": cfg.seed_doe,
            "mc": cfg.seed_mc,
            "validation": cfg.seed_validation,
        },
        "out_dir": cfg.out_dir,
        "workers": cfg.workers,
        "synthetic": cfg.synthetic,
    }


def _check_keys(given: dict, allowed, where: str) -> None:
    unknown = set(given) - set(allowed)
    if unknown:
        raise ValueError(f"unknown {where} key(s): {sorted(unknown)}")


def config_from_dict(d: dict) -> PipelineConfig:
    """Build a configuration from a (possibly partial) plain dictionary.

    Absent keys keep their defaults, so an empty document reproduces the
    nominal published setup.
    """
    base = config_to_dict(PipelineConfig())
    _check_keys(d, base, "config")
    if d.get("schema_version", _SCHEMA_VERSION) != _SCHEMA_VERSION:
        raise ValueError("unsupported config schema version")

    def merged(section: str) -> dict:
        out = dict(base[section])
        given = d.get(section, {})
        _check_keys(given, out, section)
        out.update(given)
        return out

    bounds_map = merged("bounds")
    bounds = np.array([bounds_map[name] for name in INPUT_NAMES], dtype=float)
    opt = merged("optimize")
    seeds = merged("seeds")
    red = merged("reduction")
    return PipelineConfig(
        M=int(d.get("M", base["M"])),
        n_val=int(d.get("n_val", base["n_val"])),
        input_bounds=bounds,
        model=ModelParams(**merged("model")),
        grid=SimGridConfig(**merged("grid")),
        optimize=OptimizeConfig(
            alpha_t=opt["alpha_t"],
            tau=opt["tau"],
            n_mc=int(opt["n_mc"]),
            v_bounds=tuple(opt["v_bounds"]),
            p_bounds=tuple(opt["p_bounds"]),
            temp_window=tuple(opt["temp_window"]),
            seed=int(opt["seed"]),
            solver=opt["solver"],
            constraint_kind=opt["constraint_kind"],
            max_iters=int(opt["max_iters"]),
            constraint_tol=opt["constraint_tol"],
            scan_length=opt["scan_length"],
            restarts=int(opt["restarts"]),
            penalty_weight=opt["penalty_weight"],
        ),
        err_threshold=red["err_threshold"],
        min_gain=red["min_gain"],
        k_max=int(red["k_max"]),
        c_r=merged("stress")["c_r"],
        seed_doe=int(seeds["doe"]),
        seed_mc=int(seeds["mc"]),
        seed_validation=int(seeds["validation"]),
        out_dir=str(d.get("out_dir", base["out_dir"])),
        workers=int(d.get("workers", base["workers"])),
        synthetic=bool(d.get("synthetic", base["synthetic"])),
    )


def config_hash(cfg: PipelineConfig) -> str:
    """sha256 of the canonical JSON form; keys sorted, no whitespace.

    The output directory and worker count are excluded: neither changes
    any computed value, so runs differing only in where or how parallel
    they execute share a hash.
    """
    doc = {
        k: v
        for k, v in config_to_dict(cfg).items()
        if k not in ("out_dir", "workers")
    }
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def load_config(path) -> PipelineConfig:
    with open(path, encoding="utf-8") as f:
        return config_from_dict(json.load(f))


def save_config(cfg: PipelineConfig, path) -> None:
    _write_json(config_to_dict(cfg), path)


def _write_json(doc: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


# ---------------------------------------------------------------------------
# design of experiments


def _symmetric_permutation(m: int, rng) -> np.ndarray:
    """Random stratum permutation with pi(m-1-i) = m-1-pi(i)."""
    half = m // 2
    pair = rng.permutation(half)
    flip = rng.random(half) < 0.5
    low = np.where(flip, m - 1 - pair, pair)
    perm = np.empty(m, dtype=np.intp)
    perm[:half] = low
    perm[m - 1 - np.arange(half)] = m - 1 - low
    if m % 2:
        perm[half] = half  # middle row takes the middle stratum
    return perm


def generate_doe(M: int, bounds, seed: int) -> np.ndarray:
    """Symmetric Latin hypercube over the box, maximin over restarts.

    Each coordinate's M values sit at distinct stratum midpoints and
    points i and M-1-i are reflections through the box midpoint.  Out of
    a fixed number of random designs the one maximizing the minimum
    pairwise distance (in unit-box coordinates) is kept.
    """
    from scipy.spatial.distance import pdist

    b = np.asarray(bounds, dtype=float)
    if b.ndim != 2 or b.shape[1] != 2:
        raise ValueError("bounds must be an (n, 2) array of (lower, upper)")
    if np.any(b[:, 0] >= b[:, 1]):
        raise ValueError("each lower bound must be below its upper bound")
    if M < 1:
        raise ValueError("M must be at least 1")
    rng = np.random.default_rng(seed)
    n = b.shape[0]
    best, best_score = None, -np.inf
    for _ in range(_MAXIMIN_RESTARTS):
        perms = np.column_stack([_symmetric_permutation(M, rng) for _ in range(n)])
        unit = (perms + 0.5) / M
        score = pdist(unit).min() if M > 1 else np.inf
        if score > best_score:
            best, best_score = unit, score
    return b[:, 0] + best * (b[:, 1] - b[:, 0])


# ---------------------------------------------------------------------------
# simulation stage

# fixed ridge directions and profiles for the synthetic training mode: a
# known rank-2 response built from two linear ridges along orthogonal
# input directions (any feature mixture of linear ridges stays linear,
# so the downstream fits recover it exactly)
_SYN_DIR_1 = np.full(6, 1.0 / np.sqrt(6.0))
_SYN_DIR_2 = np.array([1.0, -1.0, 1.0, -1.0, 1.0, -1.0]) / np.sqrt(6.0)


def _orthonormal_pair(first: np.ndarray, second: np.ndarray):
    p1 = first / np.linalg.norm(first)
    p2 = second - (second @ p1) * p1
    return p1, p2 / np.linalg.norm(p2)


_SYN_T_PROFILES = _orthonormal_pair(
    np.linspace(1.0, 2.0, 31), np.cos(np.linspace(0.0, np.pi, 31))
)
_SYN_S_PROFILES = _orthonormal_pair(
    np.linspace(2.0, 1.0, 448), np.sin(np.linspace(0.0, 3.0 * np.pi, 448))
)


def _synthetic_rows(cfg: PipelineConfig, xi: np.ndarray):
    u = normalize_inputs(xi, cfg.input_bounds)
    t1 = float(u @ _SYN_DIR_1)
    t2 = float(u @ _SYN_DIR_2)
    p1, p2 = _SYN_T_PROFILES
    q1, q2 = _SYN_S_PROFILES
    t_row = (10.0 + 8.0 * t1) * p1 + (1.0 + 6.0 * t2) * p2
    s_row = (20.0 + 10.0 * t1) * q1 + (2.0 - 7.0 * t2) * q2
    return t_row, s_row


def _simulate_rows(cfg: PipelineConfig, xi: np.ndarray):
    """One training run: probe history row and serialized stress row."""
    if cfg.synthetic:
        return _synthetic_rows(cfg, xi)
    d = DesignPoint(v=float(xi[0]), P=float(xi[1]))
    z = RandomInputs(T0=float(xi[2]), Y=float(xi[3]), E=float(xi[4]), rho=float(xi[5]))
    snap = simulate(d, z, cfg.model, cfg.grid)
    stress = residual_stress(snap, z, cfg.model, c_r=cfg.c_r)
    return snap.temps, field_to_row(stress.grid)


def _run_batch(cfg: PipelineConfig, rows: np.ndarray, what: str):
    """Simulate every row; results ordered by run index regardless of
    completion order."""

    def rewrap(i: int, e: SimulationError):
        return SimulationError(
            f"{what} run {i} failed for inputs {rows[i].tolist()}: {e}", e.step
        )

    if cfg.workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        from functools import partial

        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(_simulate_rows, cfg, row) for row in rows]
            results = []
            for i, fut in enumerate(futures):
                try:
                    results.append(fut.result())
                except SimulationError as e:
                    raise rewrap(i, e) from e
            return results
    results = []
    for i, row in enumerate(rows):
        try:
            results.append(_simulate_rows(cfg, row))
        except SimulationError as e:
            raise rewrap(i, e) from e
    return results


def run_simulations(cfg: PipelineConfig):
    """DOE + all training simulations; persists doe.csv, T.csv, S.csv."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doe = generate_doe(cfg.M, cfg.input_bounds, cfg.seed_doe)
    pairs = _run_batch(cfg, doe, "training")
    T = np.vstack([p[0] for p in pairs])
    S = np.vstack([p[1] for p in pairs])
    np.savetxt(out / "doe.csv", doe, fmt=_CSV_FMT, delimiter=",")
    np.savetxt(out / "T.csv", T, fmt=_CSV_FMT, delimiter=",")
    np.savetxt(out / "S.csv", S, fmt=_CSV_FMT, delimiter=",")
    return doe, T, S


# ---------------------------------------------------------------------------
# training stage


def _fit_output(cfg: PipelineConfig, u: np.ndarray, data: np.ndarray):
    k_cap = min(cfg.k_max, min(data.shape))
    errs = error_curve(data, k_cap)
    k = select_feature_count(errs, cfg.err_threshold, cfg.min_gain)
    dec = decompose(data, k)
    models = []
    for j in range(k):
        f = dec.features[:, j]
        sub = discover(estimate_gradients(u, f), cfg.input_bounds)
        poly = fit_best_degree(u @ sub.w1, f)
        models.append(FeatureSurrogate(subspace=sub, poly=poly))
    return errs, dec, tuple(models)


def train_from_matrices(
    cfg: PipelineConfig, doe: np.ndarray, T: np.ndarray, S: np.ndarray
) -> SurrogateBundle:
    """Reduce both data matrices and fit per-feature surrogates.

    Persists bundle.json and err_curves.json under the output directory.
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    u = normalize_inputs(doe, cfg.input_bounds)
    errs_t, dec_t, models_t = _fit_output(cfg, u, T)
    errs_s, dec_s, models_s = _fit_output(cfg, u, S)
    bundle = SurrogateBundle(
        input_bounds=cfg.input_bounds,
        temperature_vectors=dec_t.right_vectors,
        temperature_models=models_t,
        stress_vectors=dec_s.right_vectors,
        stress_models=models_s,
        provenance={
            "config_hash": config_hash(cfg),
            "M": cfg.M,
            "K_T": dec_t.k,
            "K_S": dec_s.k,
            "temperature_r2": [m.poly.r2 for m in models_t],
            "stress_r2": [m.poly.r2 for m in models_s],
        },
    )
    save_bundle(bundle, out / "bundle.json")
    _write_json(
        {
            "schema_version": _SCHEMA_VERSION,
            "temperature": {"errors": errs_t.tolist(), "selected": dec_t.k},
            "stress": {"errors": errs_s.tolist(), "selected": dec_s.k},
        },
        out / "err_curves.json",
    )
    return bundle


def run_training(cfg: PipelineConfig) -> SurrogateBundle:
    """The full training phase: simulate everything, then fit the bundle."""
    doe, T, S = run_simulations(cfg)
    return train_from_matrices(cfg, doe, T, S)


# ---------------------------------------------------------------------------
# optimization stage


def _result_record(d0, res: OptimizationResult) -> dict:
    return {
        "d0": [float(d0[0]), float(d0[1])],
        "d_star": [res.d_star.v, res.d_star.P],
        "zeta_star": res.zeta_star,
        "energy": res.energy,
        "bpof_lhs": res.bpof_lhs,
        "t_max_hat": res.t_max_hat,
        "iterations": res.iterations,
        "feasible": res.feasible,
    }


def run_optimization(
    cfg: PipelineConfig, bundle: SurrogateBundle, starts=DEFAULT_STARTS
):
    """Solve from every start; persists optimize.json + the history CSV.

    The best record is the lowest-energy feasible solution, or the
    lowest-energy infeasible one if no start produced a feasible point.
    """
    if len(starts) < 1:
        raise ValueError("need at least one initial design")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = [solve(bundle, cfg.optimize, DesignPoint(v=s[0], P=s[1])) for s in starts]
    # lowest-energy feasible result; infeasible ones only count as a
    # fallback when nothing is feasible
    best_i = min(
        range(len(results)),
        key=lambda i: (not results[i].feasible, results[i].energy),
    )
    best = results[best_i]
    doc = {
        "schema_version": _SCHEMA_VERSION,
        "config_hash": config_hash(cfg),
        "tau": cfg.optimize.tau,
        "alpha_t": cfg.optimize.alpha_t,
        "n_mc": cfg.optimize.n_mc,
        "solver": cfg.optimize.solver,
        "constraint_kind": cfg.optimize.constraint_kind,
        "seed": cfg.optimize.seed,
        "starts": [_result_record(d0, r) for d0, r in zip(starts, results)],
        "best": _result_record(starts[best_i], best),
    }
    _write_json(doc, out / "optimize.json")
    history = np.vstack(
        [
            np.column_stack([np.full(r.history.shape[0], i), r.history])
            for i, r in enumerate(results)
        ]
    )
    np.savetxt(out / "optimize_history.csv", history, fmt=_CSV_FMT, delimiter=",")
    return results


# ---------------------------------------------------------------------------
# validation stage


def simulate_stress_maxima(cfg: PipelineConfig, d: DesignPoint, samples) -> np.ndarray:
    """Maximum residual stress from one simulation per material sample."""
    z = np.atleast_2d(np.asarray(samples, dtype=float))
    rows = np.column_stack(
        [np.full(z.shape[0], d.v), np.full(z.shape[0], d.P), z]
    )
    pairs = _run_batch(cfg, rows, "validation")
    return np.array([p[1].max() for p in pairs])


def buffered_superquantile(values, zeta: float, alpha: float) -> float:
    """Superquantile upper bound anchored at zeta:
    zeta + mean[(x - zeta)+] / (1 - alpha)."""
    vals = np.asarray(values, dtype=float)
    return float(zeta + np.maximum(vals - zeta, 0.0).mean() / (1.0 - alpha))


def buffered_superquantile_se(values, zeta: float, alpha: float) -> float:
    """Monte Carlo standard error of the anchored superquantile."""
    vals = np.asarray(values, dtype=float)
    excess = np.maximum(vals - zeta, 0.0)
    return float(excess.std(ddof=1) / ((1.0 - alpha) * np.sqrt(vals.size)))


def validate(
    d_star: DesignPoint,
    zeta_star: float,
    b: SurrogateBundle,
    cfg: PipelineConfig,
    self_check: bool = False,
) -> ValidationReport:
    """Compare simulator-based and surrogate-based superquantiles at d_star.

    Fresh material draws feed n_val simulations on one side and n_mc
    surrogate evaluations on the other; both superquantiles anchor at
    zeta_star.  With self_check the surrogate side is replaced by a
    second independent batch of simulations, so the two estimates must
    agree up to Monte Carlo error.
    """
    if not np.array_equal(b.input_bounds, cfg.input_bounds):
        raise ValueError("bundle bounds do not match the configuration")
    alpha = cfg.optimize.alpha_t
    z_val = draw_material_samples(
        cfg.input_bounds[2:], cfg.n_val, np.random.default_rng(cfg.seed_validation)
    )
    sim_sigma = simulate_stress_maxima(cfg, d_star, z_val)
    rng_mc = np.random.default_rng(cfg.seed_mc)
    if self_check:
        z_surr = draw_material_samples(cfg.input_bounds[2:], cfg.n_val, rng_mc)
        surr_sigma = simulate_stress_maxima(cfg, d_star, z_surr)
    else:
        z_surr = draw_material_samples(
            cfg.input_bounds[2:], cfg.optimize.n_mc, rng_mc
        )
        surr_sigma = stress_max_samples(b, d_star, z_surr)
    q_sim = buffered_superquantile(sim_sigma, zeta_star, alpha)
    q_surr = buffered_superquantile(surr_sigma, zeta_star, alpha)
    report = ValidationReport(
        d_star=d_star,
        zeta_star=float(zeta_star),
        q_sim=q_sim,
        q_surr=q_surr,
        rel_diff=(q_sim - q_surr) / q_sim,
    )
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = report_to_dict(report)
    doc.update(
        {
            "schema_version": _SCHEMA_VERSION,
            "config_hash": config_hash(cfg),
            "tau": cfg.optimize.tau,
            "alpha_t": alpha,
            "n_val": cfg.n_val,
            "n_mc": cfg.optimize.n_mc,
            "self_check": self_check,
        }
    )
    _write_json(doc, out / "validation.json")
    return report


def report_to_dict(r: ValidationReport) -> dict:
    return {
        "d_star": [r.d_star.v, r.d_star.P],
        "zeta_star": r.zeta_star,
        "q_sim": r.q_sim,
        "q_surr": r.q_surr,
        "rel_diff": r.rel_diff,
    }
