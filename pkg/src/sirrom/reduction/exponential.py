"""Exponential mode augmentation."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from ..errors import DomainError
from ..models import RateFunction
from .basis import ReducedBasis


def exponential_regression(times, values):
    """Fit ``values ~ xi * exp(slope * t)`` by least squares on ``log(values)``.

    Only positive samples are used. Returns ``(xi, slope)``.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    ok = v > 0
    if ok.sum() < 3:
        raise DomainError("exponential regression needs at least 3 positive samples")
    slope, icpt = np.polyfit(t[ok], np.log(v[ok]), 1)
    return float(np.exp(icpt)), float(slope)


def augment_exponential(basis: ReducedBasis, observed, window=None) -> ReducedBasis:
    """Prepend ``b0(t) = xi * exp(-xi' t)`` fitted to ``observed`` on the fit window.

    ``observed`` is a RateFunction (or values on the basis grid); ``window``
    is the index range ``[start, stop)`` used for the regression (default: the
    whole observed grid). The stored ``xi_prime`` is the decay rate; growing
    data yields a negative internal slope, reported with ``growth=True`` and
    ``rate = |slope|`` so the published parameters stay nonnegative.
    """
    if isinstance(observed, RateFunction):
        t = observed.grid.times
        v = observed.values
    else:
        v = np.asarray(observed, dtype=float)
        t = basis.grid.times[: v.size]
    if window is not None:
        t, v = t[window[0]:window[1]], v[window[0]:window[1]]
    xi, slope = exponential_regression(t, v)
    b0 = xi * np.exp(slope * basis.grid.times)
    info = {"xi": xi, "xi_prime": -slope, "rate": abs(slope), "growth": slope > 0}
    modes = np.vstack([b0, basis.modes])
    kw = {}
    if basis.cone_sigma is not None:
        sig = np.zeros((basis.n + 1, basis.n + 1))
        sig[1:, 1:] = basis.cone_sigma
        kw["cone_sigma"] = sig
    if basis.raw_modes is not None:
        kw["raw_modes"] = np.vstack([b0, basis.raw_modes])
    return replace(basis, modes=modes, exp_mode=info, **kw)
