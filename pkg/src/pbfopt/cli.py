"""Command-line front end for the simulate/train/optimize/validate chain.

Every subcommand accepts ``--config PATH`` pointing at a JSON document;
absent keys fall back to the nominal defaults, so running without a
config reproduces the published setup.  Exit status is 0 on success,
1 on a domain error (bad values, missing artifacts, simulator failure)
and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import pipeline, risk
from .surrogate import load_bundle
from .thermal import DesignPoint, SimulationError

__all__ = ["main", "build_parser"]


def _parse_design(text: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise ValueError(f"design must be 'v,P', got {text!r}")
    return float(parts[0]), float(parts[1])


def _load_cfg(args) -> pipeline.PipelineConfig:
    if getattr(args, "config", None):
        return pipeline.load_config(args.config)
    return pipeline.PipelineConfig()


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(
            f"missing artifact {path}; run `pbfopt {producer}` first"
        )
    return path


def _load_csv(path: Path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


def cmd_simulate(args) -> int:
    cfg = _load_cfg(args)
    doe, T, S = pipeline.run_simulations(cfg)
    out = Path(cfg.out_dir)
    print(f"wrote {out / 'doe.csv'} ({doe.shape[0]} x {doe.shape[1]})")
    print(f"wrote {out / 'T.csv'} ({T.shape[0]} x {T.shape[1]})")
    print(f"wrote {out / 'S.csv'} ({S.shape[0]} x {S.shape[1]})")
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    out = Path(cfg.out_dir)
    doe = _load_csv(_require(out / "doe.csv", "simulate"))
    T = _load_csv(_require(out / "T.csv", "simulate"))
    S = _load_csv(_require(out / "S.csv", "simulate"))
    bundle = pipeline.train_from_matrices(cfg, doe, T, S)
    prov = bundle.provenance
    print(f"wrote {out / 'bundle.json'}")
    print(f"temperature features: {prov['K_T']} (r2 {prov['temperature_r2']})")
    print(f"stress features: {prov['K_S']} (r2 {prov['stress_r2']})")
    if args.plot_data:
        import json

        with open(out / "err_curves.json", encoding="utf-8") as f:
            curves = json.load(f)
        for name, fname in (
            ("temperature", "plot_err_temperature.csv"),
            ("stress", "plot_err_stress.csv"),
        ):
            errs = curves[name]["errors"]
            rows = np.column_stack([np.arange(1, len(errs) + 1), errs])
            np.savetxt(out / fname, rows, fmt="%.17g", delimiter=",")
            print(f"wrote {out / fname}")
    return 0


def _optimize_cfg(args) -> pipeline.PipelineConfig:
    cfg = _load_cfg(args)
    overrides = {}
    for flag, name in (
        ("alpha", "alpha_t"),
        ("tau", "tau"),
        ("n_mc", "n_mc"),
        ("seed", "seed"),
        ("solver", "solver"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[name] = value
    if overrides:
        cfg = replace(cfg, optimize=replace(cfg.optimize, **overrides))
    if getattr(args, "out", None):
        cfg = replace(cfg, out_dir=args.out)
    return cfg


def _feasible_history_rows(cfg: pipeline.PipelineConfig, history: np.ndarray):
    opt = cfg.optimize
    tol = opt.constraint_tol
    lo, hi = opt.temp_window
    scale = (hi - lo) if np.isfinite(hi - lo) else 1.0
    lhs, t_hat = history[:, 4], history[:, 5]
    return (
        (lhs <= (1.0 - opt.alpha_t) + tol)
        & (t_hat >= lo - tol * scale)
        & (t_hat <= hi + tol * scale)
    )


def cmd_optimize(args) -> int:
    cfg = _optimize_cfg(args)
    out = Path(cfg.out_dir)
    bundle = load_bundle(_require(out / "bundle.json", "train"))
    starts = tuple(args.d0) if args.d0 else pipeline.DEFAULT_STARTS
    results = pipeline.run_optimization(cfg, bundle, starts)
    for d0, res in zip(starts, results):
        tag = "feasible" if res.feasible else "infeasible"
        print(
            f"start ({d0[0]:g}, {d0[1]:g}) -> "
            f"v={res.d_star.v:.4g} P={res.d_star.P:.4g} "
            f"E={res.energy:.6g} J zeta={res.zeta_star:.6g} [{tag}]"
        )
    print(f"wrote {out / 'optimize.json'}")
    print(f"wrote {out / 'optimize_history.csv'}")
    if args.plot_data:
        rows = []
        for i, res in enumerate(results):
            ok = _feasible_history_rows(cfg, res.history)
            energies = res.history[:, 3]
            best = np.inf
            for j in range(energies.size):
                if ok[j] and energies[j] < best:
                    best = energies[j]
                if np.isfinite(best):
                    rows.append([i, j, best])
        np.savetxt(
            out / "plot_convergence.csv",
            np.asarray(rows, dtype=float),
            fmt="%.17g",
            delimiter=",",
        )
        print(f"wrote {out / 'plot_convergence.csv'}")
    return 0


def cmd_validate(args) -> int:
    cfg = _load_cfg(args)
    out = Path(cfg.out_dir)
    bundle = load_bundle(_require(out / "bundle.json", "train"))
    if args.design:
        if args.zeta is None:
            raise ValueError("--zeta is required when --design is given")
        d_star, zeta = DesignPoint(v=args.design[0], P=args.design[1]), args.zeta
    else:
        import json

        with open(_require(out / "optimize.json", "optimize"), encoding="utf-8") as f:
            best = json.load(f)["best"]
        d_star = DesignPoint(v=best["d_star"][0], P=best["d_star"][1])
        zeta = best["zeta_star"]
    report = pipeline.validate(d_star, zeta, bundle, cfg, self_check=args.self_check)
    print(f"design: ({report.d_star.v:.6g}, {report.d_star.P:.6g})")
    print(f"zeta: {report.zeta_star:.10g}")
    print(f"q_sim: {report.q_sim:.10g}")
    print(f"q_surr: {report.q_surr:.10g}")
    print(f"rel_diff: {report.rel_diff:.6%}")
    print(f"wrote {out / 'validation.json'}")
    return 0


def cmd_risk(args) -> int:
    values = np.loadtxt(args.samples, ndmin=1)
    est = risk.summarize(values, args.alpha, args.tau)
    print(f"quantile: {est.quantile:.10g}")
    print(f"superquantile: {est.superquantile:.10g}")
    print(f"pof: {est.pof:.10g}")
    print(f"bpof: {est.bpof:.10g}")
    print(f"zeta: {est.zeta:.10g}")
    return 0


def cmd_model(args) -> int:
    cfg = _load_cfg(args)
    out = Path(cfg.out_dir)
    bundle = load_bundle(_require(out / "bundle.json", "train"))
    prov = dict(bundle.provenance)
    print(f"inputs: {len(bundle.input_bounds)}")
    print(f"temperature features: {bundle.temperature_vectors.shape[1]}")
    print(f"stress features: {bundle.stress_vectors.shape[1]}")
    for name, models in (
        ("temperature", bundle.temperature_models),
        ("stress", bundle.stress_models),
    ):
        for i, m in enumerate(models):
            print(
                f"{name}[{i}]: r={m.subspace.r} degree={m.poly.degree} "
                f"r2={m.poly.r2:.6f}"
            )
    if prov:
        for key in sorted(prov):
            print(f"provenance {key}: {prov[key]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="pbfopt",
        description="Risk-based process design for a powder-bed scan model.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(name: str, func, help_text: str):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", metavar="PATH", help="JSON config file")
        sp.set_defaults(func=func)
        return sp

    common("simulate", cmd_simulate, "run the training design of experiments")

    sp = common("train", cmd_train, "reduce matrices and fit the surrogate bundle")
    sp.add_argument("--plot-data", action="store_true", help="emit err-vs-k CSVs")

    sp = common("optimize", cmd_optimize, "minimize scan energy under constraints")
    sp.add_argument(
        "--d0", action="append", metavar="V,P", type=_parse_design,
        help="initial design",
    )
    sp.add_argument("--alpha", type=float, help="risk confidence level")
    sp.add_argument("--tau", type=float, help="stress threshold, MPa")
    sp.add_argument("--n-mc", dest="n_mc", type=int, help="sample count per solve")
    sp.add_argument("--seed", type=int, help="sample-draw seed")
    sp.add_argument("--solver", choices=["penalty-nelder-mead", "cobyla"])
    sp.add_argument("--out", metavar="DIR", help="output directory override")
    sp.add_argument("--plot-data", action="store_true", help="emit convergence CSV")

    sp = common("validate", cmd_validate, "compare simulator and surrogate risk")
    sp.add_argument(
        "--design", metavar="V,P", type=_parse_design, help="design to validate"
    )
    sp.add_argument("--zeta", type=float, help="superquantile anchor, MPa")
    sp.add_argument(
        "--self-check",
        action="store_true",
        help="replace the surrogate side with fresh simulations",
    )

    sp = sub.add_parser("risk", help="risk measures of a plain sample file")
    sp.add_argument("samples", help="text file of sample values")
    sp.add_argument("--alpha", type=float, default=0.95)
    sp.add_argument("--tau", type=float, required=True)
    sp.set_defaults(func=cmd_risk)

    sp = common("model", cmd_model, "inspect a trained bundle")
    sp.add_argument("what", choices=["info"])

    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError, SimulationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
