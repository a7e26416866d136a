"""Parametric wavefunctions, normalization and parameter derivatives.

Wavefunctions are plain evaluators ``psi(x; lam)`` over configuration
coordinates, tagged with the integration domain on which their curved norm
is defined.  Parameter derivatives use a registered analytic gradient when
one exists and otherwise a Richardson-extrapolated central difference; when
a shifted parameter point leaves the admissible region the derivative falls
back to a one-sided second-order stencil and flags it.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .quadrature import QuadratureSettings, inner_product_result

__all__ = [
    "ParametricWaveFunction",
    "DerivativeInfo",
    "param_derivative",
    "normalize",
]


@dataclass(frozen=True)
class ParametricWaveFunction:
    """Complex-valued evaluator ``psi(x; lam)`` with its integration domain.

    ``eval`` maps ``(x (N,) or (N, K), lam (m,))`` to complex values of
    matching shape.  ``analytic_param_grad(x, lam, i)``, when present, is
    the exact parameter derivative and is preferred over finite
    differences.  ``admissible`` restricts the parameter region on which the
    state may be evaluated.  Instances are immutable.
    """

    eval: Callable
    domain: object
    label: str = ""
    analytic_param_grad: Optional[Callable] = None
    admissible: Optional[Callable] = None
    dim_params: int = 0

    def is_admissible(self, lam):
        return True if self.admissible is None else bool(self.admissible(lam))


@dataclass(frozen=True)
class DerivativeInfo:
    """How a parameter derivative was obtained."""

    analytic: bool
    one_sided: bool
    order: int
    step: float


def default_step(lam, i):
    """Default parameter step: balances truncation against quadrature noise."""
    return 1e-4 * (1.0 + abs(float(np.asarray(lam, dtype=float)[i])))


def _shift(lam, i, delta):
    out = np.array(lam, dtype=float, copy=True)
    out[i] += delta
    return out


def param_derivative(psi, i, lam, x, h=None, return_info=False):
    """Parameter derivative of ``psi`` with respect to parameter ``i`` at ``x``.

    Central differences at steps ``h`` and ``h/2`` are combined by
    Richardson extrapolation (fourth order).  If a shifted point is
    inadmissible the derivative is one-sided (second order) and flagged in
    the returned :class:`DerivativeInfo`.
    """
    lam = np.asarray(lam, dtype=float)
    if psi.analytic_param_grad is not None:
        val = psi.analytic_param_grad(x, lam, i)
        info = DerivativeInfo(True, False, 0, 0.0)
        return (val, info) if return_info else val

    if h is None:
        h = default_step(lam, i)
    if h <= 0:
        raise ValueError("finite-difference step must be positive")

    plus_ok = psi.is_admissible(_shift(lam, i, h))
    minus_ok = psi.is_admissible(_shift(lam, i, -h))

    if plus_ok and minus_ok:
        def central(step):
            fp = psi.eval(x, _shift(lam, i, step))
            fm = psi.eval(x, _shift(lam, i, -step))
            return (fp - fm) / (2.0 * step)

        d1 = central(h)
        d2 = central(0.5 * h)
        val = (4.0 * d2 - d1) / 3.0
        info = DerivativeInfo(False, False, 4, h)
    else:
        sign = 1.0 if plus_ok else -1.0
        if not psi.is_admissible(_shift(lam, i, 2.0 * sign * h)):
            raise ValueError(
                "no admissible one-sided stencil for parameter derivative")
        f0 = psi.eval(x, lam)
        f1 = psi.eval(x, _shift(lam, i, sign * h))
        f2 = psi.eval(x, _shift(lam, i, 2.0 * sign * h))
        val = sign * (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * h)
        info = DerivativeInfo(False, True, 2, h)

    return (val, info) if return_info else val


def norm_squared(psi, metric, lam, settings=None):
    """Curved norm squared ``<psi|psi>`` as a real number."""
    res = inner_product_result(psi, psi, metric, lam, settings)
    return float(np.real(res.value))


def normalize(psi, metric, lam, settings=None):
    """Scale ``psi`` to unit curved norm at every parameter point.

    Returns ``(psi_normalized, constant)`` where ``constant`` is the scale
    applied at ``lam``.  The returned state recomputes its normalization by
    quadrature at any other parameter point (values are cached per point),
    so parameter derivatives of the normalized state include the variation
    of the normalization constant.
    """
    settings = settings or QuadratureSettings()
    n2 = norm_squared(psi, metric, lam, settings)
    if not np.isfinite(n2) or n2 <= 0.0:
        raise ValueError(f"state {psi.label!r} has non-positive or non-finite "
                         f"curved norm {n2!r}")
    cache = {}

    def constant_at(lam_arr):
        key = tuple(np.asarray(lam_arr, dtype=float))
        c = cache.get(key)
        if c is None:
            c = 1.0 / np.sqrt(norm_squared(psi, metric, np.asarray(key), settings))
            cache[key] = c
        return c

    constant = 1.0 / np.sqrt(n2)
    cache[tuple(np.asarray(lam, dtype=float))] = constant

    def eval_normalized(x, lam_arr):
        return constant_at(lam_arr) * psi.eval(x, lam_arr)

    scaled = replace(psi, eval=eval_normalized, analytic_param_grad=None,
                     label=(psi.label + "|normalized") if psi.label else "normalized")
    return scaled, float(constant)
