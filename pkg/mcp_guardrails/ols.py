"""Ordinary least squares shared by the three scenarios."""

import numpy as np

from mcp_guardrails.errors import DegenerateDesignError


def fit_ols(design: np.ndarray, response: np.ndarray) -> np.ndarray:
    """Least-squares coefficients of ``response`` on the columns of ``design``.

    Raises:
        DegenerateDesignError: the design does not have full column rank.
    """
    design = np.asarray(design, dtype=float)
    response = np.asarray(response, dtype=float)
    if design.ndim == 1:
        design = design[:, None]
    if design.shape[0] != response.shape[0]:
        raise DegenerateDesignError(
            f"design has {design.shape[0]} rows but response has {response.shape[0]}"
        )
    if design.shape[0] < design.shape[1]:
        raise DegenerateDesignError(
            f"{design.shape[0]} observations cannot identify {design.shape[1]} coefficients"
        )
    coefficients, _, rank, _ = np.linalg.lstsq(design, response, rcond=None)
    if rank < design.shape[1]:
        raise DegenerateDesignError(
            f"design matrix is rank {rank}, needs {design.shape[1]} (singular design)"
        )
    return coefficients


def fit_intercept_slope(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Fit ``y = a - b x`` and return ``(a, b)`` (note the sign convention on b)."""
    x = np.asarray(x, dtype=float)
    if x.size < 2 or np.ptp(x) == 0.0:
        raise DegenerateDesignError("need at least two distinct prices to fit a demand line")
    design = np.column_stack((np.ones_like(x), -x))
    intercept, slope = fit_ols(design, y)
    return float(intercept), float(slope)
