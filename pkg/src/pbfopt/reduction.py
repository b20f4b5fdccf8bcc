"""Truncated-SVD feature extraction and active-subspace discovery.

Snapshot matrices (runs x outputs) compress to features F = U_k Sigma_k
with right vectors V_k; per-feature active subspaces come from the
eigendecomposition of the gradient covariance of a global quadratic fit
over the normalized inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np

__all__ = [
    "FeatureDecomposition",
    "ActiveSubspace",
    "QuadraticModel",
    "decompose",
    "reconstruct",
    "truncation_error",
    "error_curve",
    "select_feature_count",
    "normalize_inputs",
    "denormalize_inputs",
    "fit_quadratic",
    "estimate_gradients",
    "discover",
    "active_vars",
]

MAX_ACTIVE_DIM = 3
# Relative scale below which a covariance eigenvalue counts as zero when
# sizing the active dimension; keeps noise-level directions from claiming
# a dimension through a divide-by-nothing ratio.
EIGENVALUE_FLOOR = 1e-6


@dataclass(frozen=True)
class FeatureDecomposition:
    """Truncated SVD of a snapshot matrix: features = U_k Sigma_k."""

    k: int
    features: np.ndarray  # M x k
    right_vectors: np.ndarray  # N x k
    singular_values: np.ndarray  # k


@dataclass(frozen=True)
class ActiveSubspace:
    """Dominant gradient-covariance eigenvectors for one feature."""

    w1: np.ndarray  # n x r
    eigenvalues: np.ndarray  # all n, non-increasing
    r: int
    input_bounds: np.ndarray | None = None  # n x 2 used for normalization


def _check_matrix(data) -> np.ndarray:
    m = np.asarray(data, dtype=float)
    if m.ndim != 2 or m.shape[0] < 2:
        raise ValueError("snapshot matrix must be 2D with at least 2 rows")
    if not np.isfinite(m).all():
        raise ValueError("snapshot matrix contains non-finite entries")
    return m


def _fix_signs(u: np.ndarray, vt: np.ndarray):
    """Make the largest-magnitude entry of each right vector positive."""
    for j in range(vt.shape[0]):
        i = int(np.argmax(np.abs(vt[j])))
        if vt[j, i] < 0:
            vt[j] *= -1.0
            u[:, j] *= -1.0
    return u, vt


def decompose(data, k: int) -> FeatureDecomposition:
    """Thin SVD truncated to k columns with a deterministic sign convention."""
    m = _check_matrix(data)
    rank_cap = min(m.shape)
    if not 1 <= k <= rank_cap:
        raise ValueError(f"k must lie in [1, {rank_cap}], got {k}")
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    u, vt = _fix_signs(u[:, :k].copy(), vt[:k].copy())
    return FeatureDecomposition(
        k=int(k),
        features=u * s[:k],
        right_vectors=vt.T,
        singular_values=s[:k].copy(),
    )


def reconstruct(f: FeatureDecomposition) -> np.ndarray:
    """Approximate snapshot matrix F V_k^T."""
    feats = np.asarray(f.features, dtype=float)
    vk = np.asarray(f.right_vectors, dtype=float)
    if feats.ndim != 2 or vk.ndim != 2 or feats.shape[1] != vk.shape[1]:
        raise ValueError("inconsistent feature/right-vector shapes")
    return feats @ vk.T


def error_curve(data, k_max: int) -> np.ndarray:
    """Mean relative row reconstruction error for k = 1..k_max (one SVD).

    The residual of row i at truncation k has squared norm equal to the
    tail sum of (U_ij sigma_j)^2 over j > k, so the whole curve falls out
    of suffix sums without rebuilding reconstructions.
    """
    m = _check_matrix(data)
    rank_cap = min(m.shape)
    if not 1 <= k_max <= rank_cap:
        raise ValueError(f"k_max must lie in [1, {rank_cap}], got {k_max}")
    row_norms = np.linalg.norm(m, axis=1)
    if np.any(row_norms == 0.0):
        raise ValueError("zero-norm row: relative error undefined")
    u, s, _ = np.linalg.svd(m, full_matrices=False)
    comp_sq = (u * s) ** 2  # M x rank, per-component energy
    # tail_sq[:, k] = sum of comp_sq[:, k:] = squared residual at truncation k
    tail_sq = np.concatenate(
        [np.cumsum(comp_sq[:, ::-1], axis=1)[:, ::-1], np.zeros((m.shape[0], 1))],
        axis=1,
    )
    errs = np.sqrt(np.maximum(tail_sq[:, 1 : k_max + 1], 0.0)) / row_norms[:, None]
    return errs.mean(axis=0)


def truncation_error(data, k: int) -> float:
    """Mean relative row error of the rank-k reconstruction."""
    return float(error_curve(data, k)[-1])


def select_feature_count(errs, threshold: float, min_gain: float) -> int:
    """Pick the retained feature count from an error curve.

    Returns the smallest k with errs[k] <= threshold.  If the curve never
    reaches the threshold, falls back to diminishing returns: the smallest
    k from which every subsequent marginal decrease stays below min_gain.
    """
    errs = np.asarray(errs, dtype=float)
    if errs.size == 0:
        raise ValueError("empty error curve")
    if np.any(np.diff(errs) > 1e-9):
        raise ValueError("error curve must be non-increasing")
    hit = np.nonzero(errs <= threshold)[0]
    if hit.size:
        return int(hit[0]) + 1
    gains = errs[:-1] - errs[1:]
    big = np.nonzero(gains >= min_gain)[0]
    if big.size == 0:
        return 1
    return min(int(big[-1]) + 2, errs.size)


def _check_bounds(bounds) -> np.ndarray:
    b = np.asarray(bounds, dtype=float)
    if b.ndim != 2 or b.shape[1] != 2:
        raise ValueError("bounds must be an (n, 2) array of (lower, upper)")
    if np.any(b[:, 0] >= b[:, 1]):
        raise ValueError("each lower bound must be below its upper bound")
    return b


def normalize_inputs(xi, bounds) -> np.ndarray:
    """Affine map of physical coordinates onto [-1, 1] per coordinate.

    Coordinates sticking out by more than 1e-9 (normalized units) raise;
    smaller excursions clamp.
    """
    b = _check_bounds(bounds)
    x = np.asarray(xi, dtype=float)
    mid = 0.5 * (b[:, 0] + b[:, 1])
    half = 0.5 * (b[:, 1] - b[:, 0])
    u = (x - mid) / half
    if np.any(np.abs(u) > 1.0 + 1e-9):
        worst = float(np.max(np.abs(u)))
        raise ValueError(f"input outside bounds (|normalized| up to {worst:.3e})")
    return np.clip(u, -1.0, 1.0)


def denormalize_inputs(u, bounds) -> np.ndarray:
    """Inverse of normalize_inputs."""
    b = _check_bounds(bounds)
    u = np.asarray(u, dtype=float)
    mid = 0.5 * (b[:, 0] + b[:, 1])
    half = 0.5 * (b[:, 1] - b[:, 0])
    return mid + half * u


def _quad_exponent_pairs(n: int):
    return list(combinations_with_replacement(range(n), 2))


@dataclass(frozen=True)
class QuadraticModel:
    """Full quadratic response surface: constant, linear and pair terms."""

    n_vars: int
    coeffs: np.ndarray  # 1 + n + n(n+1)/2, ordered const, linear, pairs

    def design_matrix(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        cols = [np.ones(x.shape[0]), *(x[:, i] for i in range(self.n_vars))]
        cols += [x[:, i] * x[:, j] for i, j in _quad_exponent_pairs(self.n_vars)]
        return np.column_stack(cols)

    def __call__(self, x) -> np.ndarray:
        return self.design_matrix(x) @ self.coeffs

    def gradient(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = self.n_vars
        grad = np.tile(self.coeffs[1 : n + 1], (x.shape[0], 1))
        for c, (i, j) in zip(self.coeffs[n + 1 :], _quad_exponent_pairs(n)):
            grad[:, i] += c * x[:, j]
            grad[:, j] += c * x[:, i]
        return grad


def fit_quadratic(inputs, values) -> QuadraticModel:
    """Least-squares full quadratic over normalized inputs."""
    x = np.asarray(inputs, dtype=float)
    y = np.asarray(values, dtype=float).ravel()
    if x.ndim != 2 or x.shape[0] != y.size:
        raise ValueError("inputs must be (M, n) with one value per row")
    n = x.shape[1]
    n_terms = 1 + n + n * (n + 1) // 2
    if x.shape[0] < n_terms:
        raise ValueError(
            f"need at least {n_terms} samples for a {n}-variable quadratic, "
            f"got {x.shape[0]}"
        )
    model = QuadraticModel(n_vars=n, coeffs=np.zeros(n_terms))
    design = model.design_matrix(x)
    coeffs, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < n_terms:
        raise ValueError("rank-deficient quadratic design matrix")
    return QuadraticModel(n_vars=n, coeffs=coeffs)


def estimate_gradients(inputs, values) -> np.ndarray:
    """Analytic gradients of the global quadratic fit at each input row."""
    x = np.asarray(inputs, dtype=float)
    return fit_quadratic(x, values).gradient(x)


def discover(gradients, input_bounds=None) -> ActiveSubspace:
    """Active subspace from the gradient covariance (1/M) sum g g^T.

    The active dimension r maximizes the eigenvalue ratio lambda_r /
    lambda_{r+1} over r = 1..3, with trailing eigenvalues floored at
    EIGENVALUE_FLOOR times lambda_1 so that numerically-zero directions
    cannot win the ratio; eigenvector signs fix the largest-magnitude
    component positive.
    """
    g = np.asarray(gradients, dtype=float)
    if g.ndim != 2 or g.shape[0] < 2:
        raise ValueError("gradients must be (M, n) with M >= 2")
    if not np.isfinite(g).all():
        raise ValueError("non-finite gradients")
    n = g.shape[1]
    cov = g.T @ g / g.shape[0]
    vals, vecs = np.linalg.eigh(cov)
    vals, vecs = vals[::-1].copy(), vecs[:, ::-1].copy()
    vals = np.maximum(vals, 0.0)  # Gram spectrum; negatives are fp noise
    for j in range(n):
        i = int(np.argmax(np.abs(vecs[:, j])))
        if vecs[i, j] < 0:
            vecs[:, j] *= -1.0
    r_cap = min(MAX_ACTIVE_DIM, n - 1)
    if vals[0] <= 0.0:
        r = 1
    else:
        floor = vals[0] * EIGENVALUE_FLOOR
        ratios = vals[:r_cap] / np.maximum(vals[1 : r_cap + 1], floor)
        r = int(np.argmax(ratios)) + 1
    bounds = None if input_bounds is None else _check_bounds(input_bounds)
    return ActiveSubspace(
        w1=vecs[:, :r].copy(), eigenvalues=vals, r=r, input_bounds=bounds
    )


def active_vars(s: ActiveSubspace, xi) -> np.ndarray:
    """Project normalized inputs onto the active directions: eta = w1^T xi."""
    x = np.asarray(xi, dtype=float)
    if x.shape[-1] != s.w1.shape[0]:
        raise ValueError(
            f"input dimension {x.shape[-1]} does not match subspace "
            f"dimension {s.w1.shape[0]}"
        )
    return x @ s.w1
