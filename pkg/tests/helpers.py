"""Shared test utilities: finite-difference oracles."""

import numpy as np


def finite_difference(loss_fn, array: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central finite differences of a scalar loss wrt every array entry."""
    fd = np.zeros_like(array, dtype=np.float64)
    it = np.nditer(array, flags=["multi_index"])
    while not it.finished:
        i = it.multi_index
        old = array[i]
        array[i] = old + h
        lp = loss_fn()
        array[i] = old - h
        lm = loss_fn()
        array[i] = old
        fd[i] = (lp - lm) / (2.0 * h)
        it.iternext()
    return fd


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    denom = max(np.linalg.norm(numeric.ravel()), floor)
    return float(np.linalg.norm((analytic - numeric).ravel()) / denom)
