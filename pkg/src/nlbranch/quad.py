"""Adaptive quadrature helpers tuned for jump-measure integrands.

Densities of interest behave like ``z**(-1-alpha)`` near the origin, which is
integrable against ``z**2`` but singular.  All integrals over an interval with
left endpoint 0 are therefore split at a small radius before being handed to
the adaptive Gauss-Kronrod routine.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import QuadratureError

DEFAULT_ATOL = 1e-10
DEFAULT_RTOL = 1e-8


@dataclass(frozen=True)
class QuadratureSpec:
    """Tolerances and subdivision limits for the adaptive integrator."""

    atol: float = DEFAULT_ATOL
    rtol: float = DEFAULT_RTOL
    origin_split: float = 1e-3
    max_subdivisions: int = 200

    def __post_init__(self):
        if self.atol <= 0 or self.rtol <= 0:
            raise ValueError("quadrature tolerances must be positive")
        if self.origin_split <= 0:
            raise ValueError("origin splitting radius must be positive")


DEFAULT_QUAD = QuadratureSpec()


def integrate_interval(fn, a, b, spec=DEFAULT_QUAD, points=()):
    """Integrate ``fn`` over ``(a, b)``, splitting at the origin and at any
    interior breakpoints.  ``b`` may be ``inf``.

    Raises QuadratureError when the achieved error estimate exceeds the
    requested tolerance by more than a factor of ten.
    """
    if b <= a:
        return 0.0
    breaks = sorted(p for p in points if a < p < b)
    if a == 0.0 and spec.origin_split < b and spec.origin_split not in breaks:
        breaks.insert(0, spec.origin_split)

    total, err = 0.0, 0.0
    edges = [a] + breaks + [b]
    with warnings.catch_warnings():
        # accuracy is judged from the returned error estimate below
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        for lo, hi in zip(edges[:-1], edges[1:]):
            val, e = integrate.quad(fn, lo, hi, epsabs=spec.atol, epsrel=spec.rtol,
                                    limit=spec.max_subdivisions)
            total += val
            err += e
    tol = spec.atol + spec.rtol * abs(total)
    if not np.isfinite(total):
        raise QuadratureError("integral did not converge (non-finite value)", achieved=err)
    if err > 10.0 * max(tol, 1e-14):
        raise QuadratureError(
            f"integral error estimate {err:.3e} exceeds tolerance {tol:.3e}",
            achieved=err)
    return total
