"""Risk-constrained scan-energy minimization on the surrogate bundle.

Minimizes beam energy per scan over (v, P, zeta) subject to a buffered
failure-probability budget on maximum residual stress and a melt-window
band on the mean maximum temperature.  One frozen Monte Carlo sample set
per solve turns the stochastic constraints into deterministic functions
of the design (sample average approximation with common random numbers).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import risk, surrogate
from .reduction import normalize_inputs
from .thermal import DESIGN_BOUNDS, DesignPoint

__all__ = [
    "OptimizeConfig",
    "OptimizationResult",
    "HISTORY_COLUMNS",
    "SOLVER_PENALTY_NM",
    "SOLVER_COBYLA",
    "energy",
    "draw_material_samples",
    "stress_max_samples",
    "temperature_max_samples",
    "evaluate_constraints",
    "solve",
]

SOLVER_PENALTY_NM = "penalty-nelder-mead"
SOLVER_COBYLA = "cobyla"
CONSTRAINT_BPOF = "bpof"
CONSTRAINT_POF = "pof"
HISTORY_COLUMNS = ("v", "P", "zeta", "energy", "bpof_lhs", "t_max_hat")

DEFAULT_LIQUIDUS = 1650.0
_CHUNK = 4096
_SIMPLEX_TOL = 1e-4


@dataclass(frozen=True)
class OptimizeConfig:
    """Solver settings; defaults reproduce the nominal study setup."""

    alpha_t: float = 0.95
    tau: float = 825.0
    n_mc: int = 20000
    v_bounds: tuple[float, float] = DESIGN_BOUNDS["v"]
    p_bounds: tuple[float, float] = DESIGN_BOUNDS["P"]
    temp_window: tuple[float, float] = (DEFAULT_LIQUIDUS, 1.1 * DEFAULT_LIQUIDUS)
    seed: int = 0
    solver: str = SOLVER_PENALTY_NM
    constraint_kind: str = CONSTRAINT_BPOF
    max_iters: int = 500
    constraint_tol: float = 1e-4
    scan_length: float = 2.0
    restarts: int = 8
    penalty_weight: float = 100.0

    def __post_init__(self):
        if not 0.0 < self.alpha_t < 1.0:
            raise ValueError("alpha_t must lie in (0, 1)")
        if not self.tau > 0.0:
            raise ValueError("tau must be positive")
        if self.n_mc < 100:
            raise ValueError("n_mc must be at least 100")
        for name, (lo, hi) in (("v", self.v_bounds), ("P", self.p_bounds)):
            box_lo, box_hi = DESIGN_BOUNDS[name]
            if not (box_lo <= lo < hi <= box_hi):
                raise ValueError(
                    f"{name} bounds ({lo}, {hi}) must sit inside "
                    f"({box_lo}, {box_hi})"
                )
        if not self.temp_window[0] < self.temp_window[1]:
            raise ValueError("temperature window is empty")
        if self.solver not in (SOLVER_PENALTY_NM, SOLVER_COBYLA):
            raise ValueError(f"unknown solver: {self.solver!r}")
        if self.constraint_kind not in (CONSTRAINT_BPOF, CONSTRAINT_POF):
            raise ValueError(f"unknown constraint kind: {self.constraint_kind!r}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not self.constraint_tol > 0.0:
            raise ValueError("constraint_tol must be positive")
        if not self.scan_length > 0.0:
            raise ValueError("scan_length must be positive")
        if self.restarts < 0:
            raise ValueError("restarts cannot be negative")
        if not self.penalty_weight > 0.0:
            raise ValueError("penalty_weight must be positive")


@dataclass(frozen=True, eq=False)
class OptimizationResult:
    """Solver outcome plus the full evaluation history."""

    d_star: DesignPoint
    zeta_star: float
    energy: float
    bpof_lhs: float
    t_max_hat: float
    iterations: int
    feasible: bool
    history: np.ndarray = field(repr=False)  # columns HISTORY_COLUMNS


def energy(d: DesignPoint, l: float = 2.0) -> float:
    """Beam energy per scan P*l/v in joules."""
    if not d.v > 0.0:
        raise ValueError("scanning speed must be positive")
    return d.P * l / d.v


def draw_material_samples(bounds, n: int, rng) -> np.ndarray:
    """Uniform draws inside per-coordinate bounds, one row per sample."""
    b = np.asarray(bounds, dtype=float)
    if n < 1:
        raise ValueError("need at least one sample")
    return b[:, 0] + (b[:, 1] - b[:, 0]) * rng.uniform(size=(n, b.shape[0]))


def _samples_to_array(samples) -> np.ndarray:
    if isinstance(samples, np.ndarray):
        z = samples
    else:
        seq = list(samples)
        if seq and hasattr(seq[0], "T0"):
            z = np.array([[s.T0, s.Y, s.E, s.rho] for s in seq], dtype=float)
        else:
            z = np.asarray(seq, dtype=float)
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if z.size == 0:
        raise ValueError("empty sample set")
    if z.ndim != 2 or z.shape[1] != 4:
        raise ValueError("material samples must be (n, 4) rows (T0, Y, E, rho)")
    return z


def _design_rows(b: surrogate.SurrogateBundle, d: DesignPoint, z: np.ndarray):
    xi = np.column_stack(
        [np.full(z.shape[0], d.v), np.full(z.shape[0], d.P), z]
    )
    return normalize_inputs(xi, b.input_bounds)


def _rowwise_max(models, vectors, u: np.ndarray) -> np.ndarray:
    out = np.empty(u.shape[0])
    for start in range(0, u.shape[0], _CHUNK):
        block = u[start : start + _CHUNK]
        g = surrogate.feature_values(models, block)
        out[start : start + _CHUNK] = (g @ vectors.T).max(axis=1)
    return out


def stress_max_samples(b: surrogate.SurrogateBundle, d: DesignPoint, samples):
    """Predicted maximum residual stress for each material sample."""
    z = _samples_to_array(samples)
    return _rowwise_max(b.stress_models, b.stress_vectors, _design_rows(b, d, z))


def temperature_max_samples(b: surrogate.SurrogateBundle, d: DesignPoint, samples):
    """Predicted per-sample maximum snapshot temperature."""
    z = _samples_to_array(samples)
    return _rowwise_max(
        b.temperature_models, b.temperature_vectors, _design_rows(b, d, z)
    )


def _constraint_lhs(sigma: np.ndarray, zeta: float, cfg: OptimizeConfig) -> float:
    if cfg.constraint_kind == CONSTRAINT_POF:
        return float(np.mean(sigma > cfg.tau))
    return float(np.maximum(sigma - zeta, 0.0).mean() / (cfg.tau - zeta))


def evaluate_constraints(
    d: DesignPoint,
    zeta: float,
    b: surrogate.SurrogateBundle,
    samples,
    cfg: OptimizeConfig,
):
    """Constraint left-hand sides at one design on a frozen sample set.

    Returns the risk constraint value (buffered exceedance ratio, or the
    plain exceedance frequency in pof mode) and the mean per-sample
    maximum temperature.
    """
    if not zeta < cfg.tau:
        raise ValueError(f"zeta must stay below tau={cfg.tau}, got {zeta}")
    sigma = stress_max_samples(b, d, samples)
    t_hat = float(temperature_max_samples(b, d, samples).mean())
    return _constraint_lhs(sigma, zeta, cfg), t_hat


def _hull_columns(vectors: np.ndarray) -> np.ndarray:
    """Rows of `vectors` that can attain a rowwise max of g @ vectors.T.

    A linear functional over a finite point set attains its maximum at a
    vertex of the convex hull of those points, so interior rows can never
    win the max for any feature vector g and are safe to drop.
    """
    n, k = vectors.shape
    if k == 1:
        return np.unique([int(np.argmin(vectors)), int(np.argmax(vectors))])
    try:
        from scipy.spatial import ConvexHull

        return np.sort(ConvexHull(vectors).vertices)
    except Exception:
        return np.arange(n)


class _FrozenEvaluator:
    """Per-solve cache: fixed material draws with precomputed projections."""

    def __init__(self, b: surrogate.SurrogateBundle, z_raw: np.ndarray):
        self.bundle = b
        bounds = b.input_bounds
        mid = 0.5 * (bounds[:, 0] + bounds[:, 1])
        half = 0.5 * (bounds[:, 1] - bounds[:, 0])
        u_z = (z_raw - mid[2:]) / half[2:]

        def prepare(models, vectors):
            keep = _hull_columns(vectors)
            pre = [
                (m.subspace.w1[:2], u_z @ m.subspace.w1[2:], m.poly)
                for m in models
            ]
            return pre, vectors[keep]

        self._stress = prepare(b.stress_models, b.stress_vectors)
        self._temp = prepare(b.temperature_models, b.temperature_vectors)

    @staticmethod
    def _max_rows(pre, vectors, u_d: np.ndarray) -> np.ndarray:
        g = np.column_stack(
            [
                np.atleast_1d(surrogate.predict(poly, z_part + u_d @ w_d))
                for w_d, z_part, poly in pre
            ]
        )
        return (g @ vectors.T).max(axis=1)

    def stress_max(self, u_d: np.ndarray) -> np.ndarray:
        return self._max_rows(*self._stress, u_d)

    def temperature_mean_max(self, u_d: np.ndarray) -> float:
        return float(self._max_rows(*self._temp, u_d).mean())


def _nelder_mead(fun, x0: np.ndarray, step: float, max_iters: int):
    """Minimal Nelder-Mead; stops when the vertex spread per coordinate
    drops below _SIMPLEX_TOL or the iteration budget runs out."""
    n = x0.size
    simplex = [np.asarray(x0, dtype=float)]
    for i in range(n):
        v = simplex[0].copy()
        v[i] += step
        simplex.append(v)
    values = [fun(v) for v in simplex]
    iterations = 0
    while iterations < max_iters:
        order = np.argsort(values)
        simplex = [simplex[i] for i in order]
        values = [values[i] for i in order]
        spread = np.ptp(np.vstack(simplex), axis=0).max()
        if spread < _SIMPLEX_TOL:
            break
        iterations += 1
        centroid = np.mean(simplex[:-1], axis=0)
        reflected = centroid + (centroid - simplex[-1])
        f_r = fun(reflected)
        if f_r < values[0]:
            expanded = centroid + 2.0 * (centroid - simplex[-1])
            f_e = fun(expanded)
            if f_e < f_r:
                simplex[-1], values[-1] = expanded, f_e
            else:
                simplex[-1], values[-1] = reflected, f_r
        elif f_r < values[-2]:
            simplex[-1], values[-1] = reflected, f_r
        else:
            contracted = centroid + 0.5 * (simplex[-1] - centroid)
            f_c = fun(contracted)
            if f_c < values[-1]:
                simplex[-1], values[-1] = contracted, f_c
            else:
                for i in range(1, n + 1):
                    simplex[i] = simplex[0] + 0.5 * (simplex[i] - simplex[0])
                    values[i] = fun(simplex[i])
    order = np.argsort(values)
    return simplex[order[0]], values[order[0]], iterations


class _SolveState:
    """Shared bookkeeping across solver runs: history and incumbents."""

    def __init__(self, b, cfg: OptimizeConfig, ev: _FrozenEvaluator):
        self.bundle = b
        self.cfg = cfg
        self.ev = ev
        self.history: list[list[float]] = []
        self.best_feasible: tuple[float, np.ndarray] | None = None
        self.least_infeasible: tuple[float, float, np.ndarray] | None = None
        box = np.array([cfg.v_bounds, cfg.p_bounds], dtype=float)
        self.box_mid = 0.5 * (box[:, 0] + box[:, 1])
        self.box_half = 0.5 * (box[:, 1] - box[:, 0])
        tau = cfg.tau
        self.zeta_lo = 0.0
        self.zeta_hi = tau * (1.0 - 1e-9) if np.isfinite(tau) else 1.0
        lo, hi = cfg.temp_window
        self.temp_scale = (hi - lo) if np.isfinite(hi - lo) else 1.0
        bounds = b.input_bounds
        self.bundle_mid = 0.5 * (bounds[:2, 0] + bounds[:2, 1])
        self.bundle_half = 0.5 * (bounds[:2, 1] - bounds[:2, 0])

    def decode(self, x: np.ndarray):
        xc = np.clip(x, -1.0, 1.0)
        v, p = self.box_mid + self.box_half * xc[:2]
        zeta = self.zeta_lo + 0.5 * (xc[2] + 1.0) * (self.zeta_hi - self.zeta_lo)
        return v, p, zeta

    def encode(self, v: float, p: float, zeta: float) -> np.ndarray:
        u_z = 2.0 * (zeta - self.zeta_lo) / (self.zeta_hi - self.zeta_lo) - 1.0
        d = (np.array([v, p]) - self.box_mid) / self.box_half
        return np.append(d, np.clip(u_z, -1.0, 1.0))

    def assess(self, x: np.ndarray):
        """Evaluate one solver point; records history and incumbents."""
        cfg = self.cfg
        v, p, zeta = self.decode(x)
        u_d = (np.array([v, p]) - self.bundle_mid) / self.bundle_half
        sigma = self.ev.stress_max(u_d)
        lhs = _constraint_lhs(sigma, zeta, cfg)
        t_hat = self.ev.temperature_mean_max(u_d)
        e = p * cfg.scan_length / v
        budget = 1.0 - cfg.alpha_t
        lo, hi = cfg.temp_window
        viol = np.array(
            [
                max(0.0, lhs - budget) / budget,
                max(0.0, lo - t_hat, t_hat - hi) / self.temp_scale,
                float(np.linalg.norm(np.maximum(np.abs(x) - 1.0, 0.0))),
            ]
        )
        self.history.append([v, p, zeta, e, lhs, t_hat])
        total_viol = float(viol.sum())
        xc = np.clip(x, -1.0, 1.0)  # the decoded design lives at the clip
        if self._is_feasible(lhs, t_hat):
            if self.best_feasible is None or e < self.best_feasible[0]:
                self.best_feasible = (e, xc)
        key = (total_viol, e)
        if self.least_infeasible is None or key < self.least_infeasible[:2]:
            self.least_infeasible = (total_viol, e, xc)
        return e, viol

    def _is_feasible(self, lhs: float, t_hat: float) -> bool:
        cfg = self.cfg
        tol = cfg.constraint_tol
        lo, hi = cfg.temp_window
        return (
            lhs <= (1.0 - cfg.alpha_t) + tol
            and t_hat >= lo - tol * self.temp_scale
            and t_hat <= hi + tol * self.temp_scale
        )


def solve(
    b: surrogate.SurrogateBundle, cfg: OptimizeConfig, d0: DesignPoint
) -> OptimizationResult:
    """Minimize scan energy subject to the risk and melt-window constraints.

    Runs the configured derivative-free solver from d0 with seeded
    restarts on one frozen sample set, then reports the best feasible
    evaluated point (or the least-infeasible one with feasible=False).
    The returned zeta is the exact minimizer of the buffered exceedance
    ratio at the returned design, which never worsens the constraint.
    """
    if not (cfg.v_bounds[0] <= d0.v <= cfg.v_bounds[1]):
        raise ValueError(f"initial speed {d0.v} outside bounds {cfg.v_bounds}")
    if not (cfg.p_bounds[0] <= d0.P <= cfg.p_bounds[1]):
        raise ValueError(f"initial power {d0.P} outside bounds {cfg.p_bounds}")
    rng = np.random.default_rng(cfg.seed)
    z_raw = draw_material_samples(b.input_bounds[2:], cfg.n_mc, rng)
    ev = _FrozenEvaluator(b, z_raw)
    state = _SolveState(b, cfg, ev)

    # seed zeta with the exact buffered-ratio minimizer at the start point
    u_d0 = (np.array([d0.v, d0.P]) - state.bundle_mid) / state.bundle_half
    sigma0 = ev.stress_max(u_d0)
    if np.isfinite(cfg.tau):
        _, zeta0 = risk.estimate_bpof_minform(sigma0, cfg.tau)
        zeta0 = min(max(zeta0, state.zeta_lo), state.zeta_hi)
    else:
        zeta0 = 0.5 * (state.zeta_lo + state.zeta_hi)
    x0 = state.encode(d0.v, d0.P, zeta0)

    iterations = 0
    weight = cfg.penalty_weight
    incumbent_energy = np.inf
    start = x0
    for attempt in range(1 + cfg.restarts):
        if cfg.solver == SOLVER_PENALTY_NM:
            w = weight

            def penalized(x):
                e, viol = state.assess(x)
                return e + w * float(viol @ viol)

            _, _, it = _nelder_mead(penalized, start, 0.25, cfg.max_iters)
            iterations += it
        else:
            iterations += _cobyla_run(state, start, cfg)
        best = state.best_feasible
        if best is not None and best[0] < incumbent_energy - 1e-9:
            incumbent_energy = best[0]
        else:
            weight *= 2.0  # stagnation: tighten the exterior penalty
        anchor = best[1] if best is not None else state.least_infeasible[2]
        start = np.clip(anchor + rng.normal(0.0, 0.1, size=3), -1.0, 1.0)

    if state.best_feasible is not None:
        x_best = state.best_feasible[1]
        feasible_candidate = True
    else:
        x_best = state.least_infeasible[2]
        feasible_candidate = False
    v, p, _ = state.decode(x_best)
    d_star = DesignPoint(v=v, P=p)

    sigma_star = stress_max_samples(b, d_star, z_raw)
    if np.isfinite(cfg.tau):
        _, zeta_star = risk.estimate_bpof_minform(sigma_star, cfg.tau)
        if not zeta_star < cfg.tau:
            zeta_star = float(np.nextafter(cfg.tau, -np.inf))
    else:
        zeta_star = float(sigma_star.max())
    lhs, t_hat = evaluate_constraints(d_star, zeta_star, b, z_raw, cfg)
    feasible = feasible_candidate and state._is_feasible(lhs, t_hat)
    return OptimizationResult(
        d_star=d_star,
        zeta_star=float(zeta_star),
        energy=energy(d_star, cfg.scan_length),
        bpof_lhs=float(lhs),
        t_max_hat=float(t_hat),
        iterations=iterations,
        feasible=bool(feasible),
        history=np.asarray(state.history, dtype=float),
    )


def _cobyla_run(state: _SolveState, x0: np.ndarray, cfg: OptimizeConfig) -> int:
    from scipy.optimize import minimize

    def objective(x):
        e, _ = state.assess(x)
        return e

    budget = 1.0 - cfg.alpha_t
    lo, hi = cfg.temp_window

    def risk_margin(x):
        v, p, zeta = state.decode(x)
        u_d = (np.array([v, p]) - state.bundle_mid) / state.bundle_half
        return budget - _constraint_lhs(state.ev.stress_max(u_d), zeta, cfg)

    def window_low(x):
        v, p, _ = state.decode(x)
        u_d = (np.array([v, p]) - state.bundle_mid) / state.bundle_half
        return (state.ev.temperature_mean_max(u_d) - lo) / state.temp_scale

    def window_high(x):
        v, p, _ = state.decode(x)
        u_d = (np.array([v, p]) - state.bundle_mid) / state.bundle_half
        return (hi - state.ev.temperature_mean_max(u_d)) / state.temp_scale

    constraints = [
        {"type": "ineq", "fun": risk_margin},
        {"type": "ineq", "fun": window_low},
        {"type": "ineq", "fun": window_high},
    ]
    for i in range(3):
        constraints.append(
            {"type": "ineq", "fun": (lambda x, i=i: 1.0 - x[i])}
        )
        constraints.append(
            {"type": "ineq", "fun": (lambda x, i=i: x[i] + 1.0)}
        )
    res = minimize(
        objective,
        x0,
        method="COBYLA",
        constraints=constraints,
        options={
            "maxiter": cfg.max_iters,
            "rhobeg": 0.25,
            "catol": 0.5 * cfg.constraint_tol,
        },
    )
    return int(res.nfev)
