"""Finite-sample critical values for unit-root and cointegration tests.

Response-surface constants in the style of MacKinnon (2010): the critical
value at sample size T is b0 + b1/T + b2/T^2 + b3/T^3. Rows are the 1%,
5%, and 10% levels. ``N`` counts the integrated series under the null
(1 for a unit-root test, 2 for the residual test of a two-variable
cointegrating regression).
"""

from __future__ import annotations

import numpy as np

# deterministic-term spec -> 3x4 surface (rows: 1%, 5%, 10%)
_UNIT_ROOT = {
    "nc": np.array([
        [-2.56574, -2.2358, -3.627, 0.0],
        [-1.94100, -0.2686, -3.365, 31.223],
        [-1.61682, 0.2656, -2.714, 25.364],
    ]),
    "c": np.array([
        [-3.43035, -6.5393, -16.786, -79.433],
        [-2.86154, -2.8903, -4.234, -40.040],
        [-2.56677, -1.5384, -2.809, 0.0],
    ]),
    "ct": np.array([
        [-3.95877, -9.0531, -28.428, -134.155],
        [-3.41049, -4.3904, -9.036, -45.374],
        [-3.12705, -2.5856, -3.925, -22.380],
    ]),
}

# two-variable cointegrating regression with constant
_COINT_2VAR = np.array([
    [-3.89644, -10.9519, -33.527, 0.0],
    [-3.33613, -6.1101, -6.823, 0.0],
    [-3.04445, -4.2412, -2.720, 0.0],
])

LEVELS = (0.01, 0.05, 0.10)


def _surface_eval(table: np.ndarray, nobs: int) -> dict[float, float]:
    powers = np.array([1.0, 1.0 / nobs, 1.0 / nobs ** 2, 1.0 / nobs ** 3])
    return {lvl: float(row @ powers) for lvl, row in zip(LEVELS, table)}


def adf_critical_values(nobs: int, trend: str = "c") -> dict[float, float]:
    """Unit-root critical values for trend spec ``nc``, ``c``, or ``ct``."""
    if trend not in _UNIT_ROOT:
        raise ValueError(f"unknown trend spec {trend!r}")
    return _surface_eval(_UNIT_ROOT[trend], nobs)


def engle_granger_critical_values(nobs: int) -> dict[float, float]:
    """Residual-test critical values for a 2-variable cointegrating regression."""
    return _surface_eval(_COINT_2VAR, nobs)
