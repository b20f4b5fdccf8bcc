"""Tests for the risk-constrained energy minimizer.

The fixture bundle is synthetic: one linear ridge feature per output with
known coefficients, so the constrained optima have closed forms.  In
normalized inputs u in [-1, 1]:

    mean max temperature  t(u) = 1690 - 42 u_v + 72 u_P + 30 u_T0
    max residual stress   s(u) =  700 - 30 u_v + 20 u_P - 45 u_Y

With the melt window (1650, 1815) the ceiling never binds (max t = 1834
only without the floor; on the box the max is 1804) and the floor gives
u_P >= (42 u_v - 40) / 72.  Scan energy 2 P / v then has its minimum at
u_P = -1, u_v = -32/42: v* = 207.143, P* = 20, E* = 0.1931.

Stress is uniform over u_Y, so with threshold tau the buffered exceedance
ratio at its best zeta is (b - tau)/45 for upper endpoint b = base + 45,
twice the plain exceedance frequency (b - tau)/90.  tau = 735 makes the
risk constraint cut off the window-only optimum and moves it to the
intersection with the window floor: u_v = -0.18334, v* = 467.5,
P* = 50.38, E* = 0.21551.
"""

import numpy as np
import pytest

from pbfopt import optimize, risk, surrogate
from pbfopt.optimize import (
    HISTORY_COLUMNS,
    OptimizeConfig,
    draw_material_samples,
    energy,
    evaluate_constraints,
    solve,
    stress_max_samples,
    temperature_max_samples,
)
from pbfopt.reduction import ActiveSubspace
from pbfopt.surrogate import FeatureSurrogate, PolySurrogate, SurrogateBundle
from pbfopt.thermal import DESIGN_BOUNDS, RANDOM_INPUT_BOUNDS, DesignPoint, RandomInputs

WINDOW_ENERGY = 40.0 / (550.0 - 450.0 * 32.0 / 42.0)  # 0.193103...
RISK_ENERGY = 2.0 * 50.375 / 467.5  # 0.215508...

TEMP_COEFFS = np.array([-42.0, 72.0, 30.0, 0.0, 0.0, 0.0])
STRESS_COEFFS = np.array([-30.0, 20.0, 0.0, -45.0, 0.0, 0.0])


def physical_bounds() -> np.ndarray:
    rows = [DESIGN_BOUNDS["v"], DESIGN_BOUNDS["P"]]
    rows += [RANDOM_INPUT_BOUNDS[k] for k in ("T0", "Y", "E", "rho")]
    return np.array(rows, dtype=float)


def normalize_rows(xi: np.ndarray, bounds: np.ndarray) -> np.ndarray:
    mid = 0.5 * (bounds[:, 0] + bounds[:, 1])
    half = 0.5 * (bounds[:, 1] - bounds[:, 0])
    return (np.atleast_2d(xi) - mid) / half


def ridge_model(raw_direction: np.ndarray, intercept: float) -> FeatureSurrogate:
    scale = float(np.linalg.norm(raw_direction))
    w1 = (raw_direction / scale).reshape(-1, 1)
    eigenvalues = np.zeros(raw_direction.size)
    eigenvalues[0] = scale**2
    sub = ActiveSubspace(w1=w1, eigenvalues=eigenvalues, r=1)
    poly = PolySurrogate(
        n_vars=1, degree=1, coefficients=np.array([intercept, scale]), r2=1.0
    )
    return FeatureSurrogate(subspace=sub, poly=poly)


@pytest.fixture(scope="module")
def toy_bundle() -> SurrogateBundle:
    # spatial profiles peak at exactly 1 so the rowwise max equals the
    # (always-positive) feature value itself
    return SurrogateBundle(
        input_bounds=physical_bounds(),
        temperature_vectors=np.linspace(0.4, 1.0, 31)[:, None],
        temperature_models=(ridge_model(TEMP_COEFFS, 1690.0),),
        stress_vectors=np.linspace(0.2, 1.0, 448)[:, None],
        stress_models=(ridge_model(STRESS_COEFFS, 700.0),),
        provenance={"kind": "synthetic linear ridges"},
    )


@pytest.fixture(scope="module")
def window_result(toy_bundle):
    cfg = OptimizeConfig(n_mc=4000, seed=11, restarts=3, max_iters=300)
    return cfg, solve(toy_bundle, cfg, DesignPoint(v=500.0, P=160.0))


@pytest.fixture(scope="module")
def risk_result(toy_bundle):
    cfg = OptimizeConfig(tau=735.0, n_mc=4000, seed=7, restarts=4, max_iters=300)
    return cfg, solve(toy_bundle, cfg, DesignPoint(v=500.0, P=160.0))


class TestEnergy:
    def test_hand_values(self):
        assert energy(DesignPoint(v=500.0, P=160.0)) == pytest.approx(0.64)
        assert energy(DesignPoint(v=1000.0, P=20.0)) == pytest.approx(0.04)
        assert energy(DesignPoint(v=600.0, P=100.0)) == pytest.approx(1.0 / 3.0)

    def test_scan_length_scales_linearly(self):
        d = DesignPoint(v=400.0, P=100.0)
        assert energy(d, l=4.0) == pytest.approx(2.0 * energy(d))

    def test_zero_speed_rejected(self):
        with pytest.raises(ValueError, match="speed"):
            energy(DesignPoint(v=0.0, P=100.0))


class TestSampleDraws:
    def test_within_bounds_and_deterministic(self):
        bounds = physical_bounds()[2:]
        a = draw_material_samples(bounds, 500, np.random.default_rng(3))
        b = draw_material_samples(bounds, 500, np.random.default_rng(3))
        assert a.shape == (500, 4)
        assert np.array_equal(a, b)
        assert np.all(a >= bounds[:, 0]) and np.all(a <= bounds[:, 1])

    def test_seeds_differ(self):
        bounds = physical_bounds()[2:]
        a = draw_material_samples(bounds, 64, np.random.default_rng(0))
        b = draw_material_samples(bounds, 64, np.random.default_rng(1))
        assert not np.array_equal(a, b)

    def test_needs_positive_count(self):
        with pytest.raises(ValueError):
            draw_material_samples(physical_bounds()[2:], 0, np.random.default_rng(0))


class TestSurrogateMaxima:
    """The synthetic ridges make both per-sample maxima exactly linear."""

    def test_stress_matches_linear_form(self, toy_bundle):
        rng = np.random.default_rng(42)
        z = draw_material_samples(physical_bounds()[2:], 300, rng)
        d = DesignPoint(v=430.0, P=85.0)
        got = stress_max_samples(toy_bundle, d, z)
        xi = np.column_stack([np.full(300, d.v), np.full(300, d.P), z])
        u = normalize_rows(xi, physical_bounds())
        assert got == pytest.approx(700.0 + u @ STRESS_COEFFS, abs=1e-9)

    def test_temperature_matches_linear_form(self, toy_bundle):
        rng = np.random.default_rng(43)
        z = draw_material_samples(physical_bounds()[2:], 300, rng)
        d = DesignPoint(v=950.0, P=25.0)
        got = temperature_max_samples(toy_bundle, d, z)
        xi = np.column_stack([np.full(300, d.v), np.full(300, d.P), z])
        u = normalize_rows(xi, physical_bounds())
        assert got == pytest.approx(1690.0 + u @ TEMP_COEFFS, abs=1e-9)

    def test_accepts_random_inputs_objects(self, toy_bundle):
        rng = np.random.default_rng(44)
        z = draw_material_samples(physical_bounds()[2:], 20, rng)
        objs = [RandomInputs(T0=r[0], Y=r[1], E=r[2], rho=r[3]) for r in z]
        d = DesignPoint(v=500.0, P=100.0)
        assert np.array_equal(
            stress_max_samples(toy_bundle, d, z),
            stress_max_samples(toy_bundle, d, objs),
        )


class TestEvaluateConstraints:
    def test_matches_direct_ratio(self, toy_bundle):
        cfg = OptimizeConfig(n_mc=500)
        z = draw_material_samples(
            physical_bounds()[2:], 500, np.random.default_rng(5)
        )
        d = DesignPoint(v=300.0, P=150.0)
        zeta = 700.0
        lhs, t_hat = evaluate_constraints(d, zeta, toy_bundle, z, cfg)
        sigma = stress_max_samples(toy_bundle, d, z)
        want = np.maximum(sigma - zeta, 0.0).mean() / (cfg.tau - zeta)
        assert lhs == pytest.approx(want, rel=1e-12)
        temps = temperature_max_samples(toy_bundle, d, z)
        assert t_hat == pytest.approx(temps.mean(), rel=1e-12)

    def test_pof_mode_counts_exceedances(self, toy_bundle):
        cfg = OptimizeConfig(tau=705.0, constraint_kind="pof")
        z = draw_material_samples(
            physical_bounds()[2:], 400, np.random.default_rng(6)
        )
        d = DesignPoint(v=300.0, P=150.0)
        lhs, _ = evaluate_constraints(d, 0.0, toy_bundle, z, cfg)
        sigma = stress_max_samples(toy_bundle, d, z)
        assert lhs == pytest.approx(np.mean(sigma > 705.0))

    def test_zeta_at_or_above_tau_rejected(self, toy_bundle):
        cfg = OptimizeConfig()
        z = draw_material_samples(
            physical_bounds()[2:], 100, np.random.default_rng(7)
        )
        with pytest.raises(ValueError, match="zeta"):
            evaluate_constraints(
                DesignPoint(v=300.0, P=100.0), cfg.tau, toy_bundle, z, cfg
            )

    def test_empty_samples_rejected(self, toy_bundle):
        with pytest.raises(ValueError, match="empty"):
            evaluate_constraints(
                DesignPoint(v=300.0, P=100.0),
                0.0,
                toy_bundle,
                np.empty((0, 4)),
                OptimizeConfig(),
            )


class TestHullColumns:
    def test_single_feature_keeps_extremes(self):
        v = np.array([[0.3], [0.9], [-0.2], [0.5]])
        assert np.array_equal(optimize._hull_columns(v), [1, 2])

    def test_interior_rows_never_change_the_max(self):
        rng = np.random.default_rng(12)
        vectors = rng.normal(size=(120, 3))
        keep = optimize._hull_columns(vectors)
        assert keep.size < 120
        g = rng.normal(size=(200, 3))
        full = (g @ vectors.T).max(axis=1)
        reduced = (g @ vectors[keep].T).max(axis=1)
        assert reduced == pytest.approx(full, rel=1e-12)

    def test_degenerate_set_falls_back_to_all_rows(self):
        vectors = np.ones((8, 2))
        assert np.array_equal(optimize._hull_columns(vectors), np.arange(8))


class TestWindowConstrainedSolve:
    """tau = 825 keeps the risk constraint slack; the melt-window floor
    and the power lower bound pin the optimum."""

    def test_finds_window_optimum(self, window_result):
        cfg, res = window_result
        assert res.feasible
        assert res.energy == pytest.approx(WINDOW_ENERGY, rel=0.04)
        assert res.d_star.v == pytest.approx(550.0 - 450.0 * 32.0 / 42.0, abs=15.0)
        assert res.d_star.P <= 22.0

    def test_constraints_hold_at_reported_point(self, window_result):
        cfg, res = window_result
        assert res.bpof_lhs <= (1.0 - cfg.alpha_t) + cfg.constraint_tol
        scale = cfg.temp_window[1] - cfg.temp_window[0]
        assert res.t_max_hat >= cfg.temp_window[0] - cfg.constraint_tol * scale
        assert res.t_max_hat <= cfg.temp_window[1] + cfg.constraint_tol * scale

    def test_energy_consistent_with_design(self, window_result):
        cfg, res = window_result
        assert res.energy == pytest.approx(energy(res.d_star, cfg.scan_length))

    def test_history_schema(self, window_result):
        _, res = window_result
        assert res.history.ndim == 2
        assert res.history.shape[1] == len(HISTORY_COLUMNS)
        assert np.isfinite(res.history).all()
        assert res.iterations > 0

    def test_reported_energy_is_best_feasible_history_row(self, window_result):
        cfg, res = window_result
        v, p, zeta, e, lhs, t_hat = res.history.T
        budget = (1.0 - cfg.alpha_t) + cfg.constraint_tol
        scale = cfg.temp_window[1] - cfg.temp_window[0]
        ok = (
            (lhs <= budget)
            & (t_hat >= cfg.temp_window[0] - cfg.constraint_tol * scale)
            & (t_hat <= cfg.temp_window[1] + cfg.constraint_tol * scale)
        )
        assert ok.any()
        assert res.energy == pytest.approx(e[ok].min(), rel=1e-9)


class TestRiskConstrainedSolve:
    """tau = 735 makes the buffered constraint bind and shifts the
    optimum along the melt-window floor to higher power."""

    def test_finds_risk_window_intersection(self, risk_result):
        cfg, res = risk_result
        assert res.feasible
        assert res.energy == pytest.approx(RISK_ENERGY, rel=0.03)
        assert res.energy > WINDOW_ENERGY * 1.05

    def test_risk_constraint_is_active(self, risk_result):
        cfg, res = risk_result
        assert 0.02 <= res.bpof_lhs <= (1.0 - cfg.alpha_t) + cfg.constraint_tol

    def test_zeta_is_the_exact_ratio_minimizer(self, risk_result, toy_bundle):
        cfg, res = risk_result
        rng = np.random.default_rng(cfg.seed)
        z = draw_material_samples(toy_bundle.input_bounds[2:], cfg.n_mc, rng)
        sigma = stress_max_samples(toy_bundle, res.d_star, z)
        bpof, zeta = risk.estimate_bpof_minform(sigma, cfg.tau)
        assert res.zeta_star == pytest.approx(zeta)
        assert res.bpof_lhs == pytest.approx(bpof, rel=1e-9)
        # exhaustive scan of candidate thresholds cannot beat it
        grid = np.linspace(sigma.min(), cfg.tau - 1e-9 * cfg.tau, 400)
        ratios = [
            np.maximum(sigma - g, 0.0).mean() / (cfg.tau - g) for g in grid
        ]
        assert res.bpof_lhs <= min(ratios) + 1e-12

    def test_buffered_ratio_is_unimodal_in_zeta(self, risk_result, toy_bundle):
        cfg, res = risk_result
        rng = np.random.default_rng(cfg.seed)
        z = draw_material_samples(toy_bundle.input_bounds[2:], cfg.n_mc, rng)
        sigma = stress_max_samples(toy_bundle, res.d_star, z)
        grid = np.linspace(sigma.min(), cfg.tau - 0.5, 200)
        vals = np.array(
            [np.maximum(sigma - g, 0.0).mean() / (cfg.tau - g) for g in grid]
        )
        signs = np.sign(np.diff(vals))
        signs = signs[signs != 0.0]
        assert np.count_nonzero(np.diff(signs) != 0.0) <= 1

    def test_fresh_sample_certificate(self, risk_result, toy_bundle):
        cfg, res = risk_result
        fresh = draw_material_samples(
            toy_bundle.input_bounds[2:], 4 * cfg.n_mc, np.random.default_rng(999)
        )
        lhs, t_hat = evaluate_constraints(
            res.d_star, res.zeta_star, toy_bundle, fresh, cfg
        )
        assert lhs <= (1.0 - cfg.alpha_t) + 0.01
        assert cfg.temp_window[0] - 2.0 <= t_hat <= cfg.temp_window[1] + 2.0


class TestPofVersusBpof:
    def test_buffered_constraint_is_conservative(self, risk_result, toy_bundle):
        cfg_b, res_b = risk_result
        cfg_p = OptimizeConfig(
            tau=735.0,
            n_mc=4000,
            seed=7,
            restarts=4,
            max_iters=300,
            constraint_kind="pof",
        )
        res_p = solve(toy_bundle, cfg_p, DesignPoint(v=500.0, P=160.0))
        assert res_p.feasible
        # same budget on a smaller quantity admits cheaper designs
        assert res_p.energy <= res_b.energy + 1e-3
        # and at the buffered optimum the plain frequency sits below
        rng = np.random.default_rng(cfg_b.seed)
        z = draw_material_samples(toy_bundle.input_bounds[2:], cfg_b.n_mc, rng)
        sigma = stress_max_samples(toy_bundle, res_b.d_star, z)
        assert np.mean(sigma > cfg_b.tau) <= res_b.bpof_lhs + 1e-12


class TestDeterminismAndRestarts:
    def test_same_seed_reproduces_everything(self, toy_bundle):
        cfg = OptimizeConfig(n_mc=2000, seed=21, restarts=2, max_iters=200)
        a = solve(toy_bundle, cfg, DesignPoint(v=500.0, P=160.0))
        b = solve(toy_bundle, cfg, DesignPoint(v=500.0, P=160.0))
        assert a.d_star == b.d_star
        assert a.energy == b.energy
        assert np.array_equal(a.history, b.history)

    def test_seeds_agree_on_the_optimum_value(self, toy_bundle):
        energies = []
        for seed in (1, 2):
            cfg = OptimizeConfig(n_mc=2000, seed=seed, restarts=3, max_iters=300)
            energies.append(
                solve(toy_bundle, cfg, DesignPoint(v=500.0, P=160.0)).energy
            )
        assert energies[0] == pytest.approx(energies[1], rel=0.05)

    def test_infeasible_start_recovers(self, toy_bundle):
        cfg = OptimizeConfig(n_mc=2000, seed=31, restarts=3, max_iters=300)
        res = solve(toy_bundle, cfg, DesignPoint(v=1000.0, P=20.0))
        assert res.feasible
        assert res.energy == pytest.approx(WINDOW_ENERGY, rel=0.05)


class TestUnattainableWindow:
    def test_returns_least_infeasible_point(self, toy_bundle):
        cfg = OptimizeConfig(
            n_mc=1000,
            seed=4,
            restarts=2,
            max_iters=200,
            temp_window=(2200.0, 2300.0),
        )
        res = solve(toy_bundle, cfg, DesignPoint(v=500.0, P=160.0))
        assert not res.feasible
        # best it can do is push toward the hottest corner (about 1804)
        assert res.t_max_hat > 1770.0
        assert cfg.v_bounds[0] <= res.d_star.v <= cfg.v_bounds[1]
        assert cfg.p_bounds[0] <= res.d_star.P <= cfg.p_bounds[1]


class TestUnconstrainedCorner:
    def test_box_corner_when_constraints_disabled(self, toy_bundle):
        cfg = OptimizeConfig(
            tau=np.inf,
            temp_window=(-np.inf, np.inf),
            n_mc=1000,
            seed=13,
            restarts=2,
            max_iters=300,
        )
        res = solve(toy_bundle, cfg, DesignPoint(v=500.0, P=160.0))
        assert res.feasible
        assert res.energy == pytest.approx(0.04, rel=1e-3)
        assert res.d_star.v >= 995.0
        assert res.d_star.P <= 20.5
        assert res.bpof_lhs == 0.0


class TestCobylaSolver:
    def test_reaches_the_same_optimum(self, toy_bundle, risk_result):
        cfg = OptimizeConfig(
            tau=735.0,
            n_mc=4000,
            seed=7,
            restarts=2,
            max_iters=300,
            solver="cobyla",
        )
        res = solve(toy_bundle, cfg, DesignPoint(v=500.0, P=160.0))
        assert res.feasible
        assert res.energy == pytest.approx(RISK_ENERGY, rel=0.03)


class TestConfigValidation:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"alpha_t": 0.0},
            {"alpha_t": 1.0},
            {"tau": 0.0},
            {"tau": -5.0},
            {"n_mc": 99},
            {"v_bounds": (50.0, 1000.0)},
            {"p_bounds": (20.0, 250.0)},
            {"v_bounds": (400.0, 400.0)},
            {"temp_window": (1800.0, 1700.0)},
            {"solver": "gradient-descent"},
            {"constraint_kind": "cvar"},
            {"max_iters": 0},
            {"constraint_tol": 0.0},
            {"scan_length": 0.0},
            {"restarts": -1},
            {"penalty_weight": 0.0},
        ],
    )
    def test_bad_settings_rejected(self, kwargs):
        with pytest.raises(ValueError):
            OptimizeConfig(**kwargs)

    def test_defaults_are_valid(self):
        cfg = OptimizeConfig()
        assert cfg.alpha_t == 0.95
        assert cfg.tau == 825.0
        assert cfg.temp_window == (1650.0, pytest.approx(1815.0))

    def test_start_point_outside_bounds_rejected(self, toy_bundle):
        with pytest.raises(ValueError, match="initial"):
            solve(toy_bundle, OptimizeConfig(), DesignPoint(v=50.0, P=100.0))
