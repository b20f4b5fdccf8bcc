"""Residual-stress proxy on the 32x14 grid.

A deliberately simple elastic-perfectly-plastic stand-in for a mechanical
solve: thermal strain alpha_t * (T_peak - T0) converts to stress through
the elastic modulus, scaled by a constraint factor c_r, and capped at the
yield strength.  Downstream modules treat thermal+stress as one opaque
high-fidelity model behind this interface, so a full mechanical solver can
replace it without touching feature extraction, surrogates or the
optimizer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .thermal import STRESS_GRID_SHAPE, ModelParams, RandomInputs, TemperatureSnapshot

__all__ = ["StressField", "residual_stress", "max_stress", "field_to_row", "row_to_field"]

DEFAULT_ALPHA_T = 1e-5  # thermal expansion coefficient, 1/K


@dataclass(frozen=True)
class StressField:
    """Von Mises residual stresses (MPa), axis 0 = length, axis 1 = height."""

    grid: np.ndarray
    sigma_max: float


def residual_stress(snapshot: TemperatureSnapshot, z: RandomInputs,
                    p: ModelParams, c_r: float = 0.8,
                    alpha_t: float = DEFAULT_ALPHA_T) -> StressField:
    """Elastic-perfectly-plastic stress from the peak-temperature field.

    Per grid point: sigma = min(Y, c_r * E_MPa * alpha_t * max(0, T_peak - T0)).
    c_r is a configuration knob (not physics) scaling the elastic estimate.
    """
    peak = np.asarray(snapshot.peak_field, dtype=float)
    if peak.shape != STRESS_GRID_SHAPE:
        raise ValueError(
            f"peak field shape {peak.shape} does not match the "
            f"{STRESS_GRID_SHAPE} stress grid"
        )
    if z.Y <= 0 or z.E <= 0:
        raise ValueError("yield strength and elastic modulus must be positive")
    if not 0.0 < c_r <= 1.0:
        raise ValueError("constraint factor c_r must lie in (0, 1]")
    if alpha_t <= 0:
        raise ValueError("thermal expansion coefficient must be positive")
    elastic = c_r * (z.E * 1000.0) * alpha_t * np.maximum(peak - z.T0, 0.0)
    grid = np.minimum(z.Y, elastic)
    return StressField(grid=grid, sigma_max=float(grid.max()))


def max_stress(f: StressField) -> float:
    """Maximum entry of the stress grid."""
    grid = np.asarray(f.grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty stress field")
    return float(grid.max())


def field_to_row(grid: np.ndarray) -> np.ndarray:
    """Flatten a (32, 14) field to a 448-row, length index fastest."""
    grid = np.asarray(grid, dtype=float)
    if grid.shape != STRESS_GRID_SHAPE:
        raise ValueError(f"expected {STRESS_GRID_SHAPE} grid, got {grid.shape}")
    return grid.T.reshape(-1)


def row_to_field(row: np.ndarray) -> np.ndarray:
    """Inverse of field_to_row."""
    row = np.asarray(row, dtype=float)
    n = STRESS_GRID_SHAPE[0] * STRESS_GRID_SHAPE[1]
    if row.shape != (n,):
        raise ValueError(f"expected a flat row of {n} values, got {row.shape}")
    return row.reshape(STRESS_GRID_SHAPE[1], STRESS_GRID_SHAPE[0]).T
