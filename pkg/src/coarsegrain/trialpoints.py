"""Trial point selection and plain-text persistence."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .core import EstimationError, TimeSeries, TrialPoints


def gaussian_mapped(series: TimeSeries, m: int, nu: float = 0.2, seed=None) -> TrialPoints:
    """Standard normal draws mapped affinely onto ``[a, b]``.

    ``a = (1 - nu) min + nu max`` and ``b = nu min + (1 - nu) max``; the
    smallest draw lands on ``a`` and the largest on ``b``.
    """
    if m < 2:
        raise EstimationError("gaussian_mapped needs m >= 2")
    if not 0 < nu < 0.5:
        raise EstimationError("nu must lie in (0, 1/2)")
    lo, hi = float(series.values.min()), float(series.values.max())
    if lo == hi:
        raise EstimationError("degenerate data range")
    eta = np.random.default_rng(seed).standard_normal(m)
    return TrialPoints(map_normal_draws(eta, lo, hi, nu))


def map_normal_draws(eta, lo: float, hi: float, nu: float) -> np.ndarray:
    eta = np.asarray(eta, dtype=np.float64)
    a = (1.0 - nu) * lo + nu * hi
    b = nu * lo + (1.0 - nu) * hi
    l, r = float(eta.min()), float(eta.max())
    if l == r:
        raise EstimationError("draws are all equal; cannot map them onto an interval")
    return (a - b) / (l - r) * eta + (l * b - r * a) / (l - r)


def empirical_quantile(series: TimeSeries, m: int, seed=None, eta=None) -> TrialPoints:
    """Order statistics ``X_(k)`` at ``k = ceil(eta * N)`` for uniform ``eta``.

    ``eta`` may be passed explicitly (values in ``[0, 1]``); ``k = 0`` is
    clamped to 1.
    """
    if m < 1:
        raise EstimationError("need at least one trial point")
    n = len(series)
    if eta is None:
        eta = np.random.default_rng(seed).random(m)
    eta = np.asarray(eta, dtype=np.float64).reshape(-1)
    if np.any((eta < 0) | (eta > 1)):
        raise EstimationError("quantile levels must lie in [0, 1]")
    ranks = np.array([min(max(math.ceil(e * n), 1), n) for e in eta])
    ordered = np.sort(series.values, kind="stable")
    return TrialPoints(ordered[ranks - 1])


def save_trial_points(path, tp: TrialPoints) -> None:
    Path(path).write_text("".join(f"{v:.17g}\n" for v in tp.xi))


def load_trial_points(path) -> TrialPoints:
    values = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            values.append(float(line))
        except ValueError:
            raise EstimationError(f"{path}:{lineno}: not a number: {raw!r}") from None
    return TrialPoints(np.array(values))
