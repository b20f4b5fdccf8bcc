"""Sampling-based estimators for quantile, superquantile and failure risk.

All estimators operate on a one-dimensional set of limit-state samples
(larger values = closer to failure) and are pure: inputs are never
modified, and results depend only on the multiset of values.

Failure measures against a threshold ``tau``:

* probability of failure ``pof``: fraction of samples strictly above tau,
* buffered probability of failure ``bpof``: the conservative envelope
  ``min over zeta < tau of mean((g - zeta)^+) / (tau - zeta)``,
  equivalently the tail level at which the superquantile equals tau.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "RiskEstimate",
    "estimate_quantile",
    "estimate_superquantile",
    "estimate_pof",
    "estimate_bpof_minform",
    "estimate_bpof_tail",
    "bpof_decomposition",
    "summarize",
]

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class RiskEstimate:
    """Summary of the risk measures of one sample set at (alpha, tau)."""

    alpha: float
    tau: float
    quantile: float
    superquantile: float
    pof: float
    bpof: float
    zeta: float
    m: int


def _as_samples(values) -> np.ndarray:
    vals = np.asarray(getattr(values, "values", values), dtype=float).ravel()
    if vals.size < 1:
        raise ValueError("sample set must contain at least one value")
    if not np.isfinite(vals).all():
        raise ValueError("sample set contains non-finite values")
    return vals


def estimate_quantile(values, alpha: float) -> float:
    """Empirical alpha-quantile: the k-th largest sample, k = round(m*(1-alpha)).

    Rounds half away from zero and clamps k below at 1 so high levels on
    small sets return the maximum.
    """
    vals = _as_samples(values)
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    m = vals.size
    # round half up, not banker's rounding
    k = int(np.floor(m * (1.0 - alpha) + 0.5))
    k = min(max(k, 1), m)
    # k-th largest = (m - k)-th entry of the ascending sort
    return float(np.sort(vals)[m - k])


def estimate_superquantile(values, alpha: float) -> float:
    """Empirical alpha-superquantile (mean of the upper (1-alpha) tail).

    Uses the tail-average identity anchored at the empirical quantile:
    ``Q + mean((g - Q)^+) / (1 - alpha)``.  alpha = 0 returns the sample
    mean exactly.
    """
    vals = _as_samples(values)
    alpha = float(alpha)
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    if alpha == 0.0:
        return float(np.mean(vals))
    q = estimate_quantile(vals, alpha)
    excess = np.mean(np.maximum(vals - q, 0.0))
    return float(q + excess / (1.0 - alpha))


def estimate_pof(values, tau: float) -> float:
    """Fraction of samples strictly above the threshold."""
    vals = _as_samples(values)
    if not np.isfinite(tau):
        raise ValueError("tau must be finite")
    return float(np.mean(vals > tau))


def _excess_ratio(g: np.ndarray, suffix: np.ndarray, tau: float, zeta):
    """mean((g - zeta)^+) / (tau - zeta) on an ascending-sorted g."""
    zeta = np.atleast_1d(np.asarray(zeta, dtype=float))
    idx = np.searchsorted(g, zeta, side="right")
    n_above = g.size - idx
    tail_sum = suffix[idx]
    return (tail_sum - n_above * zeta) / (g.size * (tau - zeta))


def estimate_bpof_minform(values, tau: float) -> tuple[float, float]:
    """Buffered probability of failure via the minimization form.

    Returns ``(bpof, zeta)`` where zeta attains the minimum of
    ``mean((g - zeta)^+) / (tau - zeta)`` over zeta < tau.  The ratio is
    piecewise monotone between sample values, so candidates are the
    distinct sample values below tau plus one point a full span below the
    minimum; a golden-section pass then refines around the best candidate.
    Ties take the smallest zeta.

    Boundary conventions: tau at or above the sample maximum gives
    ``(0.0, max)``; tau at or below the sample mean gives 1.0 with zeta
    below tau; all-equal samples give 1.0 when tau <= the common value and
    0.0 otherwise.
    """
    vals = _as_samples(values)
    if not np.isfinite(tau):
        raise ValueError("tau must be finite")
    tau = float(tau)
    g = np.sort(vals)
    m = g.size
    gmin, gmax = float(g[0]), float(g[-1])
    gmean = float(np.mean(g))
    if gmax == gmin:
        if tau <= gmax:
            return 1.0, tau - 1.0
        return 0.0, gmax
    if tau >= gmax:
        return 0.0, gmax
    if tau <= gmean:
        return 1.0, tau - (gmax - gmin)
    span = gmax - gmin
    # suffix[i] = sum of g[i:]
    suffix = np.concatenate([np.cumsum(g[::-1])[::-1], [0.0]])
    cand = np.unique(g[g < tau])
    cand = np.concatenate([[gmin - span], cand])
    ratios = _excess_ratio(g, suffix, tau, cand)
    best = int(np.argmin(ratios))
    zeta, bpof = float(cand[best]), float(ratios[best])
    # golden-section refinement between the neighboring candidates
    lo = cand[best - 1] if best > 0 else cand[0] - span
    hi = cand[best + 1] if best + 1 < cand.size else tau
    a, b = float(lo), float(hi)
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc = float(_excess_ratio(g, suffix, tau, c)[0])
    fd = float(_excess_ratio(g, suffix, tau, d)[0])
    for _ in range(80):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = float(_excess_ratio(g, suffix, tau, c)[0])
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = float(_excess_ratio(g, suffix, tau, d)[0])
        if b - a <= 1e-14 * max(1.0, abs(tau)):
            break
    # accept the refined point only on a real improvement so plateau ties
    # keep the smallest scanned zeta
    for z, f in ((c, fc), (d, fd)):
        if f < bpof - 1e-12 and z < tau:
            bpof, zeta = float(f), float(z)
    return float(min(max(bpof, 0.0), 1.0)), zeta


def estimate_bpof_tail(values, alpha: float) -> tuple[float, float]:
    """Tail-scanning estimate of the (bpof, threshold) pair at level alpha.

    Sorts descending and grows the running mean of the top-k samples until
    it drops below the empirical alpha-superquantile.  Returns
    ``bpof = (k - 1) / m`` together with the mean of the top (k - 1)
    samples, the last running mean still at or above the superquantile, so
    the pair is consistent with the minimization form at the returned
    threshold.  If even the full mean stays above (all-equal samples),
    returns ``(1.0, mean)``.
    """
    vals = _as_samples(values)
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    sq = estimate_superquantile(vals, alpha)
    g = np.sort(vals)[::-1]
    m = g.size
    run = np.cumsum(g) / np.arange(1, m + 1)
    k = 1
    c = float(run[0])
    while c >= sq and k < m:
        k += 1
        c = float(run[k - 1])
    if c >= sq:
        # never dropped below: the whole set sits in the tail
        return 1.0, float(run[-1])
    return (k - 1) / m, float(run[k - 2])


def bpof_decomposition(values, tau: float) -> tuple[float, float]:
    """Split bpof at tau into (buffer, pof) with buffer + pof = bpof.

    The buffer is the extra mass the buffered measure assigns at and below
    tau, defined as the difference of the two estimates (clamped at zero)
    so the identity holds exactly on atomic sample distributions.
    """
    vals = _as_samples(values)
    bpof, _ = estimate_bpof_minform(vals, tau)
    pof = estimate_pof(vals, tau)
    return max(bpof - pof, 0.0), pof


def summarize(values, alpha: float, tau: float) -> RiskEstimate:
    """Evaluate all risk measures of one sample set at (alpha, tau)."""
    vals = _as_samples(values)
    bpof, zeta = estimate_bpof_minform(vals, tau)
    return RiskEstimate(
        alpha=float(alpha),
        tau=float(tau),
        quantile=estimate_quantile(vals, alpha),
        superquantile=estimate_superquantile(vals, alpha),
        pof=estimate_pof(vals, tau),
        bpof=bpof,
        zeta=zeta,
        m=int(vals.size),
    )
