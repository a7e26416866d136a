"""Adaptive Gauss-Kronrod quadrature with infinite-range and wedge support.

Every integral in the package funnels through this module: curved inner
products, deformation-vector moments, spectral-sum matrix elements and the
flat cross-check integrals.  The engine is a globally adaptive bisection
scheme built on the embedded (G7, K15) rule pair, extended with

* rational maps ``u = lo + L t / (1 - t)`` for semi-infinite axes, with the
  tail truncated once probe contributions fall below ``truncation_tail_tol``,
* an optional per-axis logarithmic map ``u = exp(-s)`` for half-line axes
  whose integrands carry ``log(u)`` factors (deformation-vector moments on
  exponentially transformed coordinates),
* wedge domains, where the bounds of the inner axis depend on the outer
  coordinate,
* vector-valued integrands, so families of related integrals share one set
  of integrand evaluations and one refinement history.

Results are deterministic for fixed :class:`QuadratureSettings`: panels are
refined worst-first with a stable tie-break, and the final total is a
pairwise reduction over panels sorted by position.  Tail probes assume the
axis scale hint places the bulk of the integrand mass within a few octaves
of the hint; all built-in domains provide such hints.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "QuadratureSettings",
    "IntegralResult",
    "QuadratureError",
    "ConvergenceError",
    "EvaluationError",
    "integrate_1d",
    "integrate_2d",
    "inner_product",
    "inner_product_result",
]

# 15-point Kronrod nodes on [-1, 1] (positive half; symmetric) and weights,
# with the embedded 7-point Gauss weights on the odd-index subset.
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144838258730,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])

_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])          # 15 ascending nodes
_WK = np.concatenate([_WGK[:-1], _WGK[::-1]])              # K15 weights
_WG15 = np.zeros(15)
_WG15[1:-1:2] = np.concatenate([_WG[:-1], _WG[::-1]])      # G7 weights, embedded

_MAX_PANELS = 4000      # hard cap per 1D pass, independent of depth limit
_MAX_MAPPED_ARG = 1e12  # never probe a mapped coordinate beyond this


@dataclass(frozen=True)
class QuadratureSettings:
    """Tolerances and limits shared by all quadratures.

    ``max_subdivisions`` is a bisection depth per initial panel, not a total
    panel count.  ``truncation_tail_tol`` controls where semi-infinite axes
    are cut: the tail is dropped once probe contributions fall below this
    fraction of the accumulated magnitude.
    """

    rel_tol: float = 1e-9
    abs_tol: float = 1e-12
    max_subdivisions: int = 20
    truncation_tail_tol: float = 1e-13

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol <= 0 or self.truncation_tail_tol <= 0:
            raise ValueError("all tolerances must be positive")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be >= 1")


@dataclass(frozen=True)
class IntegralResult:
    """Value of one integral with an empirical error bound."""

    value: complex
    error_estimate: float
    evaluations: int


class QuadratureError(Exception):
    """Base class for quadrature failures."""


class ConvergenceError(QuadratureError):
    """Tolerance not reached within the subdivision budget.

    Carries the best estimate so callers may decide to proceed with it.
    """

    def __init__(self, message, result):
        super().__init__(message)
        self.result = result


class EvaluationError(QuadratureError):
    """The integrand returned a non-finite value."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


# ---------------------------------------------------------------------------
# axis maps


@dataclass(frozen=True)
class _Segment:
    """One smooth piece of an axis in a mapped variable ``t``.

    ``push(t)`` returns the original coordinate ``u`` and the positive map
    weight ``|du/dt|`` for an array of interior ``t`` values.
    """

    index: int
    t_lo: float
    t_hi: float
    push: callable


def _rational_push(lo, scale, sign):
    def push(t):
        onemt = 1.0 - t
        u = lo + sign * scale * t / onemt
        du = scale / onemt**2
        return u, du
    return push


class _TailProbe:
    """Finds the truncation point of a semi-infinite axis by doubling probes."""

    def __init__(self, evaluator, tail_tol):
        self.evaluator = evaluator  # u -> magnitude (max over components)
        self.tail_tol = tail_tol
        self.evaluations = 0

    def find_cut(self, lo, scale, sign):
        accum = 0.0
        last_u = lo
        small_streak = 0
        k_final = 6
        for k in range(-2, 62):
            u = lo + sign * scale * (2.0 ** k)
            if abs(u) > _MAX_MAPPED_ARG:
                k_final = k - 1
                break
            mag = self.evaluator(u)
            self.evaluations += 1
            if not math.isfinite(mag):
                # a blow-up beyond an already-decaying region counts as tail
                if small_streak >= 1:
                    k_final = k - 1
                    break
                raise EvaluationError(
                    "integrand not finite while probing the integration tail",
                    point=u,
                )
            contrib = mag * abs(u - last_u)
            if contrib <= self.tail_tol * max(accum, 1e-300) and k >= 3:
                small_streak += 1
                if small_streak >= 2:
                    k_final = k
                    break
            else:
                small_streak = 0
            accum += contrib
            last_u = u
            k_final = k
        u_cut = abs(scale) * (2.0 ** k_final)
        return u_cut / (scale + u_cut)  # t value of the cut


def _axis_segments(lo, hi, scale, log_axis, probe, center=None):
    """Decompose one axis into finite mapped segments.

    ``probe`` is a :class:`_TailProbe` over the integrand magnitude along
    the axis; it is consulted only to truncate semi-infinite maps.
    """
    if log_axis:
        if not (lo == 0.0 and math.isinf(hi)):
            raise ValueError("log axis requires bounds (0, inf)")
        # u = exp(-s): the s-axis runs over (-inf, inf) and the integrand
        # picks up a factor exp(-s).  Split where u is near the scale hint.
        s0 = -math.log(scale)

        def s_mag(s):
            s = min(s, 300.0)
            u = math.exp(-s)
            return probe.evaluator(u) * u

        sub = _TailProbe(s_mag, probe.tail_tol)
        segs = []
        for idx, sign in enumerate((1.0, -1.0)):
            cut = sub.find_cut(s0, 3.0, sign)
            raw_push = _rational_push(s0, 3.0, sign)

            def push(t, _raw=raw_push):
                s, ds = _raw(t)
                u = np.exp(-s)
                return u, u * ds

            segs.append(_Segment(idx, 0.0, cut, push))
        probe.evaluations += sub.evaluations
        return segs

    lo_inf = math.isinf(lo)
    hi_inf = math.isinf(hi)
    if not lo_inf and not hi_inf:
        def push(t):
            return t, np.ones_like(t)
        return [_Segment(0, lo, hi, push)]
    if not lo_inf and hi_inf:
        cut = probe.find_cut(lo, scale, 1.0)
        return [_Segment(0, 0.0, cut, _rational_push(lo, scale, 1.0))]
    if lo_inf and not hi_inf:
        cut = probe.find_cut(hi, scale, -1.0)
        return [_Segment(0, 0.0, cut, _rational_push(hi, scale, -1.0))]
    c = 0.0 if center is None else center
    return [
        _Segment(0, 0.0, probe.find_cut(c, scale, 1.0),
                 _rational_push(c, scale, 1.0)),
        _Segment(1, 0.0, probe.find_cut(c, scale, -1.0),
                 _rational_push(c, scale, -1.0)),
    ]


# ---------------------------------------------------------------------------
# adaptive core


class _Panel:
    __slots__ = ("seg", "a", "b", "depth", "value", "error", "extra")

    def __init__(self, seg, a, b, depth, value, error, extra):
        self.seg = seg
        self.a = a
        self.b = b
        self.depth = depth
        self.value = value     # (Q,) complex
        self.error = error     # (Q,) float, GK estimate
        self.extra = extra     # (Q,) float, propagated inner errors


def _pairwise(chunks):
    """Pairwise reduction of a list of equal-shape arrays (deterministic)."""
    work = list(chunks)
    while len(work) > 1:
        nxt = [work[i] + work[i + 1] for i in range(0, len(work) - 1, 2)]
        if len(work) % 2:
            nxt.append(work[-1])
        work = nxt
    return work[0]


class _Adaptive1D:
    """Globally adaptive GK15 pass over a list of segments.

    ``f`` maps an array of coordinates ``u`` (K,) to a tuple
    ``(values (Q, K), inner_errors (Q, K))``; the latter carries error
    estimates of nested inner integrals (zeros for plain integrands).
    """

    def __init__(self, f, segments, settings):
        self.f = f
        self.segments = segments
        self.settings = settings
        self.evaluations = 0

    def _eval_panel(self, seg, a, b, depth):
        c = 0.5 * (a + b)
        hw = 0.5 * (b - a)
        t = c + hw * _NODES
        u, du = seg.push(t)
        vals, inner = self.f(u)
        self.evaluations += u.size
        if not np.all(np.isfinite(vals)):
            bad = np.argwhere(~np.isfinite(vals))
            j = int(bad[0][-1])
            raise EvaluationError(
                "integrand returned a non-finite value", point=float(u[j]))
        wvals = vals * du
        k15 = hw * (wvals @ _WK)
        g7 = hw * (wvals @ _WG15)
        # QUADPACK-style scaled error estimate, per component
        resasc = hw * (np.abs(wvals - (k15 / (2.0 * hw))[:, None]) @ _WK)
        raw = np.abs(k15 - g7)
        safe = np.where(resasc > 0.0, resasc, 1.0)
        err = np.where(
            resasc > 0.0,
            resasc * np.minimum(1.0, (200.0 * raw / safe) ** 1.5),
            raw,
        )
        extra = hw * ((np.abs(inner) * du) @ _WK)
        return _Panel(seg, a, b, depth, k15, err, extra)

    def run(self):
        panels = []
        heap = []
        counter = 0

        def add(panel):
            nonlocal counter
            panels.append(panel)
            prio = float(np.max(panel.error))
            heapq.heappush(heap, (-prio, counter, panel))
            counter += 1

        for seg in self.segments:
            mid = 0.5 * (seg.t_lo + seg.t_hi)
            for (a, b) in ((seg.t_lo, mid), (mid, seg.t_hi)):
                add(self._eval_panel(seg, a, b, 1))

        def totals():
            order = sorted(panels, key=lambda q: (q.seg.index, q.a))
            value = _pairwise([p.value for p in order])
            gk = _pairwise([p.error for p in order])
            extra = _pairwise([p.extra for p in order])
            return value, gk, extra

        # Convergence is judged on this pass's own rule error; propagated
        # errors of nested inner integrals are reported but not chased, as
        # they form a floor that refinement at this level cannot lower.
        while True:
            value, gk, extra = totals()
            target = np.maximum(self.settings.abs_tol,
                                self.settings.rel_tol * np.abs(value))
            if np.all(gk <= target):
                return value, gk + extra, self.evaluations
            if len(panels) >= _MAX_PANELS:
                raise ConvergenceError(
                    "panel budget exhausted before reaching tolerance",
                    _result_from(value, gk + extra, self.evaluations))
            worst = None
            while heap:
                _, _, cand = heapq.heappop(heap)
                if cand.depth < self.settings.max_subdivisions:
                    worst = cand
                    break
            if worst is None:
                raise ConvergenceError(
                    "max_subdivisions reached before tolerance",
                    _result_from(value, gk + extra, self.evaluations))
            panels.remove(worst)
            mid = 0.5 * (worst.a + worst.b)
            add(self._eval_panel(worst.seg, worst.a, mid, worst.depth + 1))
            add(self._eval_panel(worst.seg, mid, worst.b, worst.depth + 1))


def _result_from(value, error, evaluations):
    if value.shape == (1,):
        return IntegralResult(complex(value[0]), float(error[0]), evaluations)
    return IntegralResult(value.copy(), np.asarray(error, dtype=float),
                          evaluations)


# ---------------------------------------------------------------------------
# public drivers


def integrate_multi_1d(f, bounds, settings, *, scale=1.0, log_axis=False,
                       center=None):
    """Integrate a vector-valued integrand over one axis.

    ``f`` maps coordinates ``(K,)`` to ``(values (Q, K), inner_errors (Q, K))``.
    Returns ``(value (Q,), error (Q,), evaluations)``.
    """
    def probe_mag(u):
        v, _ = f(np.array([u]))
        return float(np.max(np.abs(v)))

    probe = _TailProbe(probe_mag, settings.truncation_tail_tol)
    segments = _axis_segments(bounds[0], bounds[1], scale, log_axis, probe,
                              center)
    value, error, n = _Adaptive1D(f, segments, settings).run()
    return value, error, n + probe.evaluations


def _plain(f):
    def g(u):
        vals = np.atleast_2d(np.asarray(f(u), dtype=complex))
        return vals, np.zeros(vals.shape, dtype=float)
    return g


def integrate_1d(f, lo, hi, settings=None, *, scale=1.0, log_axis=False):
    """Adaptively integrate scalar ``f`` over ``(lo, hi)``; bounds may be inf.

    ``f`` must accept a 1D array of coordinates and return values of the
    same length.
    """
    settings = settings or QuadratureSettings()
    value, error, n = integrate_multi_1d(
        _plain(f), (lo, hi), settings, scale=scale, log_axis=log_axis)
    return IntegralResult(complex(value[0]), float(error[0]), n)


def integrate_multi_2d(f, domain, lam, settings):
    """Integrate a vector-valued integrand over a 2D domain description.

    ``f`` maps points ``(2, K)`` in integration coordinates to ``(Q, K)``
    arrays.  Axis 0 is the outer axis; inner bounds may depend on the outer
    coordinate (wedge domains).  Returns ``(value, error, evaluations)``.
    """
    bounds = domain.integration_bounds
    scales = domain.integration_scales(lam)
    logs = domain.log_axes
    inner_bounds = domain.inner_bounds
    evaluations = 0
    # run the inner passes one decade tighter so their node-to-node jitter
    # stays below the outer rule's own error estimate
    inner_settings = QuadratureSettings(
        rel_tol=0.1 * settings.rel_tol,
        abs_tol=0.1 * settings.abs_tol,
        max_subdivisions=settings.max_subdivisions,
        truncation_tail_tol=settings.truncation_tail_tol,
    )

    def inner_integral(u0):
        if inner_bounds is None:
            blo, bhi = bounds[1]
        else:
            blo, bhi = inner_bounds[0](u0), inner_bounds[1](u0)

        def g(v):
            pts = np.vstack([np.full_like(v, u0), v])
            vals = np.asarray(f(pts), dtype=complex)
            return vals, np.zeros(vals.shape, dtype=float)

        return integrate_multi_1d(g, (blo, bhi), inner_settings,
                                  scale=scales[1], log_axis=logs[1])

    def outer(u_arr):
        nonlocal evaluations
        vals = []
        errs = []
        for u0 in u_arr:
            v, e, n = inner_integral(float(u0))
            evaluations += n
            vals.append(v)
            errs.append(e)
        return np.stack(vals, axis=-1), np.stack(errs, axis=-1)

    value, error, _ = integrate_multi_1d(
        outer, bounds[0], settings, scale=scales[0], log_axis=logs[0])
    return value, error, evaluations


def integrate_2d(f, domain, settings=None, lam=None):
    """Integrate scalar ``f`` over ``domain`` (in integration coordinates).

    Infinite bounds are mapped rationally with tail truncation; wedge inner
    bounds are taken from ``domain.inner_bounds``.  Raises
    :class:`ConvergenceError` (carrying the best estimate) if the tolerance
    cannot be met within ``settings.max_subdivisions`` bisection levels, and
    :class:`EvaluationError` with the offending point if the integrand
    returns a non-finite value.
    """
    settings = settings or QuadratureSettings()

    def g(pts):
        return np.atleast_2d(np.asarray(f(pts), dtype=complex))

    value, error, n = integrate_multi_2d(g, domain, lam, settings)
    return IntegralResult(complex(value[0]), float(error[0]), n)


# ---------------------------------------------------------------------------
# curved inner products


def _domain_integrand(build_rows, domain, metric, lam):
    """Wrap a row-builder over configuration points into integration coords.

    On transformed domains the volume weight is the (constant) covering
    multiplicity; otherwise it is ``sqrt(det g)`` evaluated pointwise.
    """
    tr = domain.transform
    if tr is not None:
        mult = tr.multiplicity

        def f(pts):
            x = tr.to_config(pts, lam)
            return np.atleast_2d(np.asarray(build_rows(x), dtype=complex)) * mult
        return f

    if metric is None:
        def f(pts):
            return np.atleast_2d(np.asarray(build_rows(pts), dtype=complex))
        return f

    from .geometry import metric_det

    def f(pts):
        w = np.sqrt(metric_det(metric, pts, lam))
        return np.atleast_2d(np.asarray(build_rows(pts), dtype=complex)) * w
    return f


def integrate_curved_multi(build_rows, domain, metric, lam, settings):
    """Curved-measure integrals of several integrands in one adaptive pass.

    ``build_rows(x)`` receives configuration points ``(N, K)`` and returns
    ``(Q, K)`` integrand rows *without* the volume weight; the weight
    (multiplicity on transformed domains, ``sqrt(det g)`` otherwise) is
    applied here.  Returns ``(value (Q,), error (Q,), evaluations)``.
    """
    f = _domain_integrand(build_rows, domain, metric, lam)
    if domain.dim == 1:
        def g(u):
            vals = f(u.reshape(1, -1))
            return vals, np.zeros(vals.shape, dtype=float)

        return integrate_multi_1d(
            g, domain.integration_bounds[0], settings,
            scale=domain.integration_scales(lam)[0],
            log_axis=domain.log_axes[0])
    return integrate_multi_2d(f, domain, lam, settings)


def inner_product_result(phi, psi, metric, lam, settings=None):
    """Curved inner product of two wavefunctions, with error bookkeeping.

    Computes the integral of ``sqrt(det g) * conj(phi) * psi`` over the
    shared domain.  On domains that declare a coordinate transform the
    integration runs in transformed coordinates, where the metric weight
    cancels against the Jacobian and only the covering multiplicity remains.
    """
    settings = settings or QuadratureSettings()
    if phi.domain is not psi.domain:
        raise ValueError("wavefunctions must share an integration domain")
    lam = np.asarray(lam, dtype=float)

    def rows(x):
        return np.conj(phi.eval(x, lam)) * psi.eval(x, lam)

    value, error, n = integrate_curved_multi(
        rows, phi.domain, metric, lam, settings)
    return IntegralResult(complex(value[0]), float(error[0]), n)


def inner_product(phi, psi, metric, lam, settings=None):
    """Curved inner product ``<phi|psi>`` (value only)."""
    return inner_product_result(phi, psi, metric, lam, settings).value
