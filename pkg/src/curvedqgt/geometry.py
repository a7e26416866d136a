"""Parameter-dependent configuration-space metrics and their deformation data.

A :class:`MetricField` evaluates the spatial metric ``g_munu(x; lam)`` for a
point ``x`` in an ``N``-dimensional configuration space and a point ``lam``
in an ``m``-dimensional parameter space.  The module computes determinants,
inverses and the deformation vector

    sigma_i = g_munu d_i g^{munu} = -d_i log det g,

the purely metric-induced quantity that enters every generalized term of the
geometric tensor.  :class:`IntegrationDomain` describes where curved inner
products are taken and, optionally, a coordinate transform under which the
``sqrt(det g)`` volume weight cancels against the Jacobian.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "MetricField",
    "Transform",
    "IntegrationDomain",
    "InvariantViolation",
    "metric_det",
    "metric_inverse",
    "deformation_vector",
]

_FD_STEP = 1e-6  # relative step for metric parameter derivatives


class InvariantViolation(Exception):
    """A structural guarantee of the geometry layer failed numerically."""


@dataclass(frozen=True)
class Transform:
    """Invertible map between configuration and integration coordinates.

    ``to_config`` pulls integration points back to configuration space;
    ``to_integration`` and ``jacobian_det`` (det of dU/dx) describe the
    forward map.  ``multiplicity`` is the covering factor picked up when the
    forward map is many-to-one (e.g. an even map folding a full line onto a
    half line contributes a factor 2).
    """

    to_config: Callable
    to_integration: Callable
    jacobian_det: Callable
    multiplicity: float = 1.0


def _const_scales(dim):
    def scales(lam):
        return (1.0,) * dim
    return scales


@dataclass(frozen=True)
class IntegrationDomain:
    """Region over which curved inner products are evaluated.

    ``kind`` is one of ``"full-plane"`` (integrate in configuration
    coordinates over all of R^N), ``"half-line-product"`` (configuration
    coordinates, product of half-lines / lines) or ``"transformed"``
    (integrate in transformed coordinates where the volume weight reduces to
    ``transform.multiplicity``).

    ``integration_bounds`` are per-axis (lo, hi) in integration coordinates;
    entries may be infinite.  ``inner_bounds``, when present, replaces the
    bounds of axis 1 by callables of the axis-0 coordinate (wedge domains).
    ``log_axes`` marks (0, inf) axes whose integrands carry logarithmic
    factors and are therefore meshed in ``u = exp(-s)``.  ``scale_hints``
    maps parameters to per-axis width hints used by the infinite-range maps.
    """

    kind: str
    dim: int
    config_bounds: tuple
    transform: Optional[Transform] = None
    bounds: Optional[tuple] = None
    inner_bounds: Optional[tuple] = None
    log_axes: tuple = None
    scale_hints: Optional[Callable] = None
    config_scale_hints: Optional[Callable] = None

    def __post_init__(self):
        if self.kind not in ("full-plane", "half-line-product", "transformed"):
            raise ValueError(f"unknown domain kind: {self.kind!r}")
        if self.kind == "transformed" and self.transform is None:
            raise ValueError("transformed domain requires a transform")
        if self.log_axes is None:
            object.__setattr__(self, "log_axes", (False,) * self.dim)
        for lo, hi in self.integration_bounds:
            if not lo < hi:
                raise ValueError("domain bounds must satisfy lo < hi")

    @property
    def integration_bounds(self):
        if self.bounds is not None:
            return self.bounds
        return self.config_bounds

    def integration_scales(self, lam):
        if self.scale_hints is not None:
            return self.scale_hints(lam)
        return (1.0,) * self.dim

    def config_scales(self, lam):
        if self.config_scale_hints is not None:
            return self.config_scale_hints(lam)
        return (1.0,) * self.dim


@dataclass(frozen=True)
class MetricField:
    """Evaluator of a symmetric configuration-space metric ``g(x; lam)``.

    ``eval`` maps ``(x (N,) or (N, K), lam (m,))`` to ``(N, N)`` or
    ``(N, N, K)`` arrays.  ``param_grad(x, lam, i)``, when provided, returns
    the analytic parameter derivative ``d_i g_munu`` with the same shape.
    Instances are immutable and safe to share across workers.
    """

    dim_config: int
    dim_params: int
    eval: Callable
    param_grad: Optional[Callable] = None
    domain: Optional[IntegrationDomain] = None
    is_flat: bool = False

    def __post_init__(self):
        if self.dim_config < 1 or self.dim_params < 1:
            raise ValueError("dimensions must be >= 1")


def _as_batch(x, dim):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x.reshape(dim, 1), True
    return x, False


def metric_det(metric, x, lam):
    """Determinant of the metric at ``x`` (scalar or per-column for batches).

    Raises :class:`~curvedqgt.quadrature.EvaluationError` on non-finite
    entries and :class:`InvariantViolation` if the determinant is not
    positive at an interior point.
    """
    from .quadrature import EvaluationError

    xb, squeeze = _as_batch(x, metric.dim_config)
    g = np.asarray(metric.eval(xb, np.asarray(lam, dtype=float)))
    if not np.all(np.isfinite(g)):
        raise EvaluationError("metric evaluation returned non-finite entries",
                              point=xb[:, 0])
    det = np.linalg.det(np.moveaxis(g, -1, 0)) if g.ndim == 3 else np.linalg.det(g)
    if np.any(det <= 0.0):
        raise InvariantViolation(
            "metric determinant must be positive on the domain interior")
    return float(det) if squeeze else np.asarray(det, dtype=float)


def metric_inverse(metric, x, lam):
    """Inverse metric at ``x``; shape mirrors ``metric.eval``."""
    xb, squeeze = _as_batch(x, metric.dim_config)
    g = np.asarray(metric.eval(xb, np.asarray(lam, dtype=float)))
    if g.ndim == 3:
        inv = np.linalg.inv(np.moveaxis(g, -1, 0))
        inv = np.moveaxis(inv, 0, -1)
    else:
        inv = np.linalg.inv(g)
    return inv[..., 0] if (squeeze and inv.ndim == 3) else inv


def deformation_vector(metric, i, x, lam):
    """Deformation-vector component ``sigma_i(x, lam)``.

    Uses the analytic metric parameter derivative when available, in the
    trace form ``sigma_i = -tr(g^{-1} d_i g)``; otherwise falls back to a
    central finite difference of ``log det g``, which is the same quantity
    by the determinant derivative identity.  The result is real.
    """
    lam = np.asarray(lam, dtype=float)
    xb, squeeze = _as_batch(x, metric.dim_config)

    if metric.param_grad is not None:
        g = np.asarray(metric.eval(xb, lam))
        dg = np.asarray(metric.param_grad(xb, lam, i))
        if g.ndim == 2:
            g = g[..., None]
            dg = dg[..., None]
        ginv = np.moveaxis(np.linalg.inv(np.moveaxis(g, -1, 0)), 0, -1)
        sigma = -np.einsum("abk,bak->k", ginv, dg)
    else:
        h = _FD_STEP * (1.0 + abs(float(lam[i])))
        lp = lam.copy()
        lm = lam.copy()
        lp[i] += h
        lm[i] -= h
        if lp[i] == lm[i]:
            raise ValueError("finite-difference step underflowed")
        dp = np.log(metric_det(metric, xb, lp))
        dm = np.log(metric_det(metric, xb, lm))
        sigma = -(dp - dm) / (2.0 * h)

    sigma = np.real_if_close(sigma)
    return float(sigma[0]) if squeeze else np.asarray(sigma, dtype=float)
