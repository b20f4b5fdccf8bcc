"""Polynomial response surfaces over active variables.

Each retained feature gets a dense multivariate polynomial in its active
variables; a bundle groups the temperature- and stress-side models with
their right vectors so full snapshot rows and stress fields can be
predicted from one raw design/material input vector.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations_with_replacement
from math import comb
from pathlib import Path

import numpy as np

from .reduction import ActiveSubspace, normalize_inputs

__all__ = [
    "PolySurrogate",
    "FeatureSurrogate",
    "SurrogateBundle",
    "SCHEMA_VERSION",
    "monomial_exponents",
    "fit",
    "fit_best_degree",
    "predict",
    "r2_score",
    "feature_values",
    "predict_snapshot",
    "predict_stress_field",
    "bundle_to_dict",
    "bundle_from_dict",
    "save_bundle",
    "load_bundle",
]

SCHEMA_VERSION = 1
MAX_DEGREE = 6
MAX_ACTIVE_VARS = 3
# a lower degree wins whenever its training r2 sits within this margin of
# the best degree tried
DEGREE_R2_MARGIN = 0.01


@lru_cache(maxsize=None)
def monomial_exponents(n_vars: int, degree: int) -> tuple[tuple[int, ...], ...]:
    """Exponent tuples in graded order: by total degree, then by the
    lexicographic order of the variable-index combination."""
    exps = []
    for total in range(degree + 1):
        for combo in combinations_with_replacement(range(n_vars), total):
            e = [0] * n_vars
            for i in combo:
                e[i] += 1
            exps.append(tuple(e))
    return tuple(exps)


def _design_matrix(etas: np.ndarray, exps) -> np.ndarray:
    n_pts, n_vars = etas.shape
    max_pow = [max(e[i] for e in exps) for i in range(n_vars)]
    pows = []
    for i in range(n_vars):
        cols = [np.ones(n_pts)]
        for _ in range(max_pow[i]):
            cols.append(cols[-1] * etas[:, i])
        pows.append(cols)
    out = np.empty((n_pts, len(exps)))
    for j, e in enumerate(exps):
        col = pows[0][e[0]].copy()
        for i in range(1, n_vars):
            if e[i]:
                col *= pows[i][e[i]]
        out[:, j] = col
    return out


@dataclass(frozen=True)
class PolySurrogate:
    """Dense polynomial over the full monomial basis of its active vars."""

    n_vars: int
    degree: int
    coefficients: np.ndarray
    r2: float

    def __post_init__(self):
        if not 1 <= self.n_vars <= MAX_ACTIVE_VARS:
            raise ValueError(f"n_vars must lie in [1, {MAX_ACTIVE_VARS}]")
        if not 0 <= self.degree <= MAX_DEGREE:
            raise ValueError(f"degree must lie in [0, {MAX_DEGREE}]")
        coeffs = np.asarray(self.coefficients, dtype=float)
        expected = comb(self.n_vars + self.degree, self.degree)
        if coeffs.shape != (expected,):
            raise ValueError(
                f"expected {expected} coefficients for degree {self.degree} "
                f"in {self.n_vars} variables, got {coeffs.shape}"
            )
        if not self.r2 <= 1.0 + 1e-9:
            raise ValueError("r2 cannot exceed 1")
        object.__setattr__(self, "coefficients", coeffs)


def r2_score(values, predicted) -> float:
    """Coefficient of determination; constant targets give 1 when matched
    exactly and 0 otherwise."""
    y = np.asarray(values, dtype=float)
    ss_res = float(np.sum((y - np.asarray(predicted, dtype=float)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res <= 1e-12 * max(1.0, float(np.sum(y**2))) else 0.0
    return 1.0 - ss_res / ss_tot


def _check_etas(etas) -> np.ndarray:
    e = np.asarray(etas, dtype=float)
    if e.ndim == 1:
        e = e[:, None]
    if e.ndim != 2 or not 1 <= e.shape[1] <= MAX_ACTIVE_VARS:
        raise ValueError("active variables must be (M, r) with r in [1, 3]")
    return e


def fit(etas, values, degree: int) -> PolySurrogate:
    """Least-squares polynomial fit via an orthogonal factorization.

    Never forms the normal equations; degree-6 monomial bases are too
    ill-conditioned for that.
    """
    e = _check_etas(etas)
    y = np.asarray(values, dtype=float).ravel()
    if y.size != e.shape[0]:
        raise ValueError("one value per input row required")
    if not 1 <= degree <= MAX_DEGREE:
        raise ValueError(f"degree must lie in [1, {MAX_DEGREE}]")
    exps = monomial_exponents(e.shape[1], degree)
    if y.size <= len(exps):
        raise ValueError(
            f"need more than {len(exps)} samples for degree {degree} "
            f"in {e.shape[1]} variables, got {y.size}"
        )
    design = _design_matrix(e, exps)
    coeffs, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < len(exps):
        raise ValueError("rank-deficient polynomial basis on these inputs")
    return PolySurrogate(
        n_vars=e.shape[1],
        degree=degree,
        coefficients=coeffs,
        r2=r2_score(y, design @ coeffs),
    )


def fit_best_degree(etas, values, max_degree: int = MAX_DEGREE) -> PolySurrogate:
    """Fit degrees 1..max_degree (capped by sample count) and keep the
    lowest degree whose r2 comes within DEGREE_R2_MARGIN of the best."""
    e = _check_etas(etas)
    y = np.asarray(values, dtype=float).ravel()
    fits = []
    for degree in range(1, max_degree + 1):
        if y.size <= comb(e.shape[1] + degree, degree):
            break
        fits.append(fit(e, y, degree))
    if not fits:
        raise ValueError("too few samples to fit even a linear model")
    best = max(f.r2 for f in fits)
    for f in fits:
        if f.r2 >= best - DEGREE_R2_MARGIN:
            return f
    return fits[-1]


def predict(s: PolySurrogate, eta):
    """Evaluate the polynomial; scalar for one point, vector for a batch."""
    e = np.asarray(eta, dtype=float)
    single = e.ndim <= 1
    if e.ndim == 0:
        e = e[None, None]
    elif e.ndim == 1:
        # one r-vector, except in one variable where it may be a batch
        e = e[:, None] if s.n_vars == 1 else e[None, :]
        single = s.n_vars != 1 or e.shape[0] == 1
    if e.shape[1] != s.n_vars:
        raise ValueError(
            f"expected {s.n_vars} active variables, got {e.shape[1]}"
        )
    if s.n_vars == 1:
        # coefficients are ascending powers, so Horner applies directly
        out = np.polynomial.polynomial.polyval(e[:, 0], s.coefficients)
    else:
        out = (
            _design_matrix(e, monomial_exponents(s.n_vars, s.degree))
            @ s.coefficients
        )
    return float(out[0]) if single and out.size == 1 else out


@dataclass(frozen=True)
class FeatureSurrogate:
    """One feature's active subspace plus its polynomial model."""

    subspace: ActiveSubspace
    poly: PolySurrogate

    def __post_init__(self):
        if self.poly.n_vars != self.subspace.r:
            raise ValueError("polynomial arity must equal the subspace dimension")

    def evaluate(self, u: np.ndarray):
        """Feature value(s) at normalized input row(s) u."""
        return predict(self.poly, np.atleast_2d(u) @ self.subspace.w1)


@dataclass(frozen=True)
class SurrogateBundle:
    """Everything needed to predict snapshot rows and stress fields."""

    input_bounds: np.ndarray  # n x 2 physical bounds
    temperature_vectors: np.ndarray  # N_T x K_T right vectors
    temperature_models: tuple[FeatureSurrogate, ...]
    stress_vectors: np.ndarray  # N_S x K_S right vectors
    stress_models: tuple[FeatureSurrogate, ...]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(
            self, "input_bounds", np.asarray(self.input_bounds, dtype=float)
        )
        object.__setattr__(
            self,
            "temperature_vectors",
            np.asarray(self.temperature_vectors, dtype=float),
        )
        object.__setattr__(
            self, "stress_vectors", np.asarray(self.stress_vectors, dtype=float)
        )
        object.__setattr__(self, "temperature_models", tuple(self.temperature_models))
        object.__setattr__(self, "stress_models", tuple(self.stress_models))
        n = self.input_bounds.shape[0]
        for name, vectors, models in (
            ("temperature", self.temperature_vectors, self.temperature_models),
            ("stress", self.stress_vectors, self.stress_models),
        ):
            if len(models) < 1:
                raise ValueError(f"at least one {name} feature model required")
            if vectors.ndim != 2 or vectors.shape[1] != len(models):
                raise ValueError(f"{name} right-vector shape mismatch")
            for m in models:
                if m.subspace.w1.shape[0] != n:
                    raise ValueError(f"{name} subspace dimension mismatch")


def feature_values(models, u: np.ndarray) -> np.ndarray:
    """Stack feature predictions at normalized inputs u into (n_pts, K)."""
    return np.column_stack([np.atleast_1d(m.evaluate(u)) for m in models])


def _normalize(b: SurrogateBundle, xi) -> np.ndarray:
    return np.atleast_2d(normalize_inputs(xi, b.input_bounds))


def predict_snapshot(b: SurrogateBundle, xi) -> np.ndarray:
    """Predicted temperature snapshot row at one raw input vector."""
    row = feature_values(b.temperature_models, _normalize(b, xi)) @ (
        b.temperature_vectors.T
    )
    return row[0]


def predict_stress_field(b: SurrogateBundle, xi):
    """Predicted serialized stress field and its maximum entry."""
    row = feature_values(b.stress_models, _normalize(b, xi)) @ b.stress_vectors.T
    return row[0], float(row[0].max())


def _subspace_to_dict(s: ActiveSubspace) -> dict:
    return {
        "w1": s.w1.tolist(),
        "eigenvalues": s.eigenvalues.tolist(),
        "r": int(s.r),
    }


def _subspace_from_dict(d: dict) -> ActiveSubspace:
    return ActiveSubspace(
        w1=np.asarray(d["w1"], dtype=float),
        eigenvalues=np.asarray(d["eigenvalues"], dtype=float),
        r=int(d["r"]),
    )


def _model_to_dict(m: FeatureSurrogate) -> dict:
    return {
        "subspace": _subspace_to_dict(m.subspace),
        "degree": int(m.poly.degree),
        "n_vars": int(m.poly.n_vars),
        "coefficients": m.poly.coefficients.tolist(),
        "r2": float(m.poly.r2),
    }


def _model_from_dict(d: dict) -> FeatureSurrogate:
    poly = PolySurrogate(
        n_vars=int(d["n_vars"]),
        degree=int(d["degree"]),
        coefficients=np.asarray(d["coefficients"], dtype=float),
        r2=float(d["r2"]),
    )
    return FeatureSurrogate(subspace=_subspace_from_dict(d["subspace"]), poly=poly)


def bundle_to_dict(b: SurrogateBundle) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "input_bounds": b.input_bounds.tolist(),
        "temperature": {
            "right_vectors": b.temperature_vectors.tolist(),
            "features": [_model_to_dict(m) for m in b.temperature_models],
        },
        "stress": {
            "right_vectors": b.stress_vectors.tolist(),
            "features": [_model_to_dict(m) for m in b.stress_models],
        },
        "provenance": dict(b.provenance),
    }


def bundle_from_dict(d: dict) -> SurrogateBundle:
    version = d.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported bundle schema version: {version!r}")
    return SurrogateBundle(
        input_bounds=np.asarray(d["input_bounds"], dtype=float),
        temperature_vectors=np.asarray(
            d["temperature"]["right_vectors"], dtype=float
        ),
        temperature_models=tuple(
            _model_from_dict(m) for m in d["temperature"]["features"]
        ),
        stress_vectors=np.asarray(d["stress"]["right_vectors"], dtype=float),
        stress_models=tuple(_model_from_dict(m) for m in d["stress"]["features"]),
        provenance=dict(d.get("provenance", {})),
    )


def save_bundle(b: SurrogateBundle, path) -> None:
    text = json.dumps(bundle_to_dict(b), sort_keys=True, indent=2)
    Path(path).write_text(text + "\n")


def load_bundle(path) -> SurrogateBundle:
    return bundle_from_dict(json.loads(Path(path).read_text()))
