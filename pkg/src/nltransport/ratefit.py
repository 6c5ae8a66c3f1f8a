"""Exponential decay-rate estimation by least squares on log values."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class RateFit:
    rate: float       # decay positive: series ~ exp(-rate * t)
    intercept: float
    r_squared: float
    window: tuple[float, float]
    n_points: int


def fit_rate(t, values, window: float = 0.5) -> RateFit:
    """Least-squares slope of log(values) over the trailing ``window`` fraction.

    The sign convention makes decay positive.  Values inside the window must
    be positive and the window must contain at least 10 samples.
    """
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    if not 0 < window <= 1:
        raise DomainError("window fraction must lie in (0, 1]")
    t0 = t[-1] - window * (t[-1] - t[0])
    mask = t >= t0
    if int(mask.sum()) < 10:
        raise DomainError("rate fit needs at least 10 samples in the window")
    tw = t[mask]
    vw = v[mask]
    if np.any(vw <= 0):
        raise DomainError("rate fit needs positive values in the window")
    logv = np.log(vw)
    slope, intercept = np.polyfit(tw, logv, 1)
    pred = slope * tw + intercept
    ss_res = float(np.sum((logv - pred) ** 2))
    ss_tot = float(np.sum((logv - logv.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return RateFit(rate=float(-slope), intercept=float(intercept),
                   r_squared=float(min(max(r2, 0.0), 1.0)),
                   window=(float(tw[0]), float(tw[-1])), n_points=int(mask.sum()))
