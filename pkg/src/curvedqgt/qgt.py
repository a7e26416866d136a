"""Generalized quantum geometric tensor, Berry connection and curvature.

For a normalized state ``psi(x; lam)`` on a configuration space with a
parameter-dependent metric, each tensor entry combines eight curved-measure
brackets of ``psi``, its parameter derivatives and the deformation vector
``sigma_i = -d_i log det g``.  To avoid catastrophic cancellation the
entries are assembled from the fused pointwise combinations

    Psi_i(x) = d_i psi(x) - (1/4) sigma_i(x) psi(x),

in terms of which

    G_ij = <Psi_i|Psi_j> - <Psi_i|psi><psi|Psi_j>,

with every bracket taken under the curved inner product.  Expanding the
products reproduces the eight-term sum exactly.  An independent dressed
route (:func:`dressed_qgt_matrix`) differentiates the product
``g^{1/4} psi`` by finite differences and integrates with the flat measure
in configuration coordinates; it never touches ``sigma`` and serves as the
primary cross-check of the assembly.

The modified Berry connection is

    beta_i = -i <psi|d_i psi> + (i/4) <sigma_i>,

which is real for admissible states; its finite-difference exterior
derivative is the Berry curvature ``F_ij = d_i beta_j - d_j beta_i``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import InvariantViolation, deformation_vector
from .quadrature import QuadratureSettings, integrate_curved_multi
from .states import default_step, param_derivative

__all__ = [
    "QGTMatrix",
    "BerryData",
    "qgt_component",
    "provost_vallee_component",
    "qgt_matrix",
    "dressed_qgt_matrix",
    "spectrum",
    "berry_connection",
    "berry_connection_result",
    "berry_curvature",
    "berry_data",
    "sigma_expectation",
    "normalization_identity_residual",
]

_NORM_TOL = 1e-8
_BERRY_IM_TOL = 1e-5
_HERM_TOL_FACTOR = 10.0


@dataclass(frozen=True)
class QGTMatrix:
    """Geometric-tensor block at one parameter point.

    ``entries`` is Hermitized by averaging the raw block with its conjugate
    transpose; the pre-averaging defect is folded into ``error_estimates``
    and kept in ``hermiticity_defect``.  ``variant`` distinguishes the full
    tensor from the two-term (Provost-Vallee-type) block.
    """

    params: np.ndarray
    indices: tuple
    entries: np.ndarray
    error_estimates: np.ndarray
    variant: str
    hermiticity_defect: float
    evaluations: int = 0

    @property
    def real_part(self):
        return np.real(self.entries)


@dataclass(frozen=True)
class BerryData:
    """Berry connection components and curvature block at one point."""

    params: np.ndarray
    indices: tuple
    connection: np.ndarray
    curvature: np.ndarray
    imaginary_residuals: np.ndarray
    naive_connection_magnitudes: np.ndarray


def _ensure_normalized(psi, metric, lam, settings):
    from .quadrature import inner_product_result
    res = inner_product_result(psi, psi, metric, lam, settings)
    n2 = float(np.real(res.value))
    if abs(n2 - 1.0) <= _NORM_TOL:
        return psi
    from .states import normalize
    return normalize(psi, metric, lam, settings)[0]


def _grad_rows(psi, metric, lam, indices, h=None):
    """Pointwise builder of psi, its derivatives and the fused vectors."""
    lam = np.asarray(lam, dtype=float)

    def build(x):
        base = psi.eval(x, lam)
        rows = {"psi": base}
        for i in indices:
            dpsi = param_derivative(psi, i, lam, x, h=h)
            sig = deformation_vector(metric, i, x, lam)
            rows[("d", i)] = dpsi
            rows[("fused", i)] = dpsi - 0.25 * sig * base
            rows[("sigma", i)] = sig
        return rows

    return build


def _component_core(psi, metric, lam, indices, settings, h, fused=True):
    """All tensor entries over ``indices`` in one adaptive quadrature pass.

    Returns ``(gram (m, m), conn (m,), errs_gram, errs_conn, evaluations)``
    where ``gram[a, b] = <V_a|V_b>`` and ``conn[a] = <psi|V_a>`` for the
    fused vectors (full tensor) or the bare derivatives (two-term variant).
    """
    build = _grad_rows(psi, metric, lam, indices, h=h)
    m = len(indices)
    key = "fused" if fused else "d"

    def rows(x):
        r = build(x)
        base = r["psi"]
        vs = [r[(key, i)] for i in indices]
        out = []
        for a in range(m):
            for b in range(m):
                out.append(np.conj(vs[a]) * vs[b])
        for a in range(m):
            out.append(np.conj(base) * vs[a])
        return np.stack(out)

    value, error, n = integrate_curved_multi(
        rows, psi.domain, metric, lam, settings)
    gram = value[:m * m].reshape(m, m)
    gerr = error[:m * m].reshape(m, m)
    conn = value[m * m:]
    cerr = error[m * m:]
    return gram, conn, gerr, cerr, n


def _assemble(gram, conn, gerr, cerr):
    m = conn.shape[0]
    raw = gram - np.outer(np.conj(conn), conn)
    err = gerr + (np.abs(conn)[:, None] * cerr[None, :]
                  + np.abs(conn)[None, :] * cerr[:, None])
    defect = float(np.max(np.abs(raw - raw.conj().T)))
    entries = (raw + raw.conj().T) / 2.0
    err = err + 0.5 * np.abs(raw - raw.conj().T)
    return entries, err, defect


def qgt_matrix(psi, metric, lam, indices, settings=None, h=None,
               renormalize=True):
    """Generalized geometric-tensor block over the given parameter indices.

    The state is re-normalized internally if its curved norm drifted from
    one.  Entries are Hermitized by averaging; the raw defect is recorded
    and an :class:`~curvedqgt.geometry.InvariantViolation` is raised when it
    exceeds ten times the combined error estimate.
    """
    settings = settings or QuadratureSettings()
    lam = np.asarray(lam, dtype=float)
    indices = tuple(indices)
    psi = _ensure_normalized(psi, metric, lam, settings)
    gram, conn, gerr, cerr, n = _component_core(
        psi, metric, lam, indices, settings, h, fused=True)
    entries, err, defect = _assemble(gram, conn, gerr, cerr)
    if defect > _HERM_TOL_FACTOR * max(float(np.max(err)), 1e-14):
        raise InvariantViolation(
            f"geometric tensor block is non-Hermitian beyond tolerance "
            f"(defect {defect:.3e}, error {float(np.max(err)):.3e})")
    return QGTMatrix(lam, indices, entries, err, "full", defect, n)


def provost_vallee_matrix(psi, metric, lam, indices, settings=None, h=None,
                          renormalize=True):
    """Two-term tensor block: curved inner product, no deformation terms."""
    settings = settings or QuadratureSettings()
    lam = np.asarray(lam, dtype=float)
    indices = tuple(indices)
    psi = _ensure_normalized(psi, metric, lam, settings)
    gram, conn, gerr, cerr, n = _component_core(
        psi, metric, lam, indices, settings, h, fused=False)
    entries, err, defect = _assemble(gram, conn, gerr, cerr)
    return QGTMatrix(lam, indices, entries, err, "provost-vallee", defect, n)


def qgt_component(psi, metric, i, j, lam, settings=None, h=None):
    """Single entry ``G_ij`` of the generalized geometric tensor."""
    indices = (i, j) if i != j else (i,)
    block = qgt_matrix(psi, metric, lam, indices, settings, h)
    return complex(block.entries[0, -1])


def provost_vallee_component(psi, metric, i, j, lam, settings=None, h=None):
    """Single entry of the two-term tensor (no deformation-vector terms)."""
    indices = (i, j) if i != j else (i,)
    block = provost_vallee_matrix(psi, metric, lam, indices, settings, h)
    return complex(block.entries[0, -1])


# ---------------------------------------------------------------------------
# dressed-state cross-check route


def _dressed_eval(psi, metric):
    from .geometry import metric_det

    def dressed(x, lam_arr):
        w = metric_det(metric, x, lam_arr)
        return np.asarray(w, dtype=float) ** 0.25 * psi.eval(x, lam_arr)
    return dressed


def dressed_qgt_matrix(psi, metric, lam, indices, settings=None, h=None):
    """Flat two-term tensor of the dressed state ``g^(1/4) psi``.

    This is the independent cross-check route: the metric factor is folded
    into the state, parameter derivatives are taken of the whole product by
    Richardson finite differences (never the analytic gradient), and the
    integrals run with the flat measure in configuration coordinates.  The
    deformation vector is never referenced.

    The default tolerances are looser than elsewhere because the
    finite-difference noise floor of the dressed derivatives sits near
    ``1e-11`` of the integrand scale; tighter targets would only chase it.
    """
    settings = settings or QuadratureSettings(rel_tol=1e-7, abs_tol=1e-9)
    lam = np.asarray(lam, dtype=float)
    indices = tuple(indices)
    dressed = _dressed_eval(psi, metric)
    m = len(indices)

    steps = [h if h is not None else default_step(lam, i) for i in indices]

    def rows(x):
        base = dressed(x, lam)
        vs = []
        for i, hi in zip(indices, steps):
            def shifted(delta, _i=i):
                lp = lam.copy()
                lp[_i] += delta
                return dressed(x, lp)
            d1 = (shifted(hi) - shifted(-hi)) / (2.0 * hi)
            d2 = (shifted(0.5 * hi) - shifted(-0.5 * hi)) / hi
            vs.append((4.0 * d2 - d1) / 3.0)
        out = []
        for a in range(m):
            for b in range(m):
                out.append(np.conj(vs[a]) * vs[b])
        for a in range(m):
            out.append(np.conj(base) * vs[a])
        return np.stack(out)

    flat_domain = _flat_view(psi.domain)
    value, error, n = integrate_curved_multi(
        rows, flat_domain, None, lam, settings)
    gram = value[:m * m].reshape(m, m)
    gerr = error[:m * m].reshape(m, m)
    conn = value[m * m:]
    cerr = error[m * m:]
    # finite-difference floor: Richardson pairs leave O(eps/h) noise per node
    fd_floor = 1e-11 * (1.0 + np.abs(gram))
    entries, err, defect = _assemble(gram, conn, gerr + fd_floor, cerr)
    return QGTMatrix(lam, indices, entries, err, "dressed", defect, n)


def _flat_view(domain):
    """Configuration-coordinate view of a domain (flat measure, no metric)."""
    from .geometry import IntegrationDomain
    return IntegrationDomain(
        kind=domain.kind if domain.transform is None else "half-line-product",
        dim=domain.dim,
        config_bounds=domain.config_bounds,
        scale_hints=domain.config_scale_hints,
        config_scale_hints=domain.config_scale_hints,
    )


def spectrum(matrix):
    """Determinant and eigenvalues of the real part of a tensor block.

    The real part is the quantum-metric block; eigenvalues are returned in
    ascending order with no physical ordering implied.
    """
    real = np.real(matrix.entries)
    real = (real + real.T) / 2.0
    det = float(np.linalg.det(real))
    eigenvalues = [float(v) for v in np.linalg.eigvalsh(real)]
    return det, eigenvalues


# ---------------------------------------------------------------------------
# Berry connection and curvature


def sigma_expectation(psi, metric, i, lam, settings=None):
    """Curved expectation value of the deformation-vector component ``i``.

    Raises :class:`~curvedqgt.geometry.InvariantViolation` if a significant
    imaginary part appears (the quantity is real by construction).
    """
    settings = settings or QuadratureSettings()
    lam = np.asarray(lam, dtype=float)

    def rows(x):
        base = psi.eval(x, lam)
        sig = deformation_vector(metric, i, x, lam)
        return (np.conj(base) * sig * base)[None, :]

    value, error, _ = integrate_curved_multi(
        rows, psi.domain, metric, lam, settings)
    val = complex(value[0])
    if abs(val.imag) > 1e-9 + float(error[0]):
        raise InvariantViolation(
            f"<sigma_{i}> acquired an imaginary part {val.imag:.3e}")
    return val.real


def berry_connection_result(psi, metric, i, lam, settings=None, h=None):
    """Modified Berry connection component with diagnostics.

    Returns ``(beta_i, |imaginary residual|, naive magnitude, error)``.
    The residual is the imaginary part of
    ``-i<psi|d_i psi> + (i/4)<sigma_i>`` before it is discarded (it
    vanishes when the modified normalization identity holds); the naive
    magnitude is ``|-i<psi|d_i psi>|``, the connection without the
    deformation correction.
    """
    settings = settings or QuadratureSettings()
    lam = np.asarray(lam, dtype=float)
    psi = _ensure_normalized(psi, metric, lam, settings)

    def rows(x):
        base = psi.eval(x, lam)
        dpsi = param_derivative(psi, i, lam, x, h=h)
        sig = deformation_vector(metric, i, x, lam)
        return np.stack([np.conj(base) * dpsi,
                         np.conj(base) * sig * base])

    value, error, _ = integrate_curved_multi(
        rows, psi.domain, metric, lam, settings)
    overlap = complex(value[0])
    sig_mean = float(np.real(value[1]))
    beta = -1j * overlap + 0.25j * sig_mean
    residual = abs(beta.imag)
    if residual > _BERRY_IM_TOL:
        raise InvariantViolation(
            f"Berry connection beta_{i} has imaginary residual "
            f"{residual:.3e} (> {_BERRY_IM_TOL})")
    err = float(error[0] + 0.25 * error[1])
    return float(beta.real), residual, abs(overlap), err


def berry_connection(psi, metric, i, lam, settings=None, h=None):
    """Real modified Berry connection component ``beta_i``."""
    return berry_connection_result(psi, metric, i, lam, settings, h)[0]


def berry_curvature(psi, metric, i, j, lam, settings=None, step=None,
                    with_error=False):
    """Berry curvature ``F_ij`` by central differences of the connection.

    The two directional derivatives use steps ``1e-3 (1 + |lam_i|)``; the
    combination is exactly antisymmetric under ``i <-> j``.  When a shifted
    point is inadmissible the corresponding derivative falls back to a
    one-sided stencil.  ``with_error=True`` also returns the propagated
    quadrature error of the connection evaluations.
    """
    settings = settings or QuadratureSettings()
    lam = np.asarray(lam, dtype=float)
    if i == j:
        return (0.0, 0.0) if with_error else 0.0

    def dbeta(target, direction):
        hstep = step if step is not None else 1e-3 * (1.0 + abs(lam[direction]))

        def beta_at(delta):
            lp = lam.copy()
            lp[direction] += delta
            out = berry_connection_result(psi, metric, target, lp, settings)
            return out[0], out[3]

        plus_ok = psi.is_admissible(_shifted(lam, direction, hstep))
        minus_ok = psi.is_admissible(_shifted(lam, direction, -hstep))
        if plus_ok and minus_ok:
            bp, ep = beta_at(hstep)
            bm, em = beta_at(-hstep)
            return (bp - bm) / (2.0 * hstep), (ep + em) / (2.0 * hstep)
        sign = 1.0 if plus_ok else -1.0
        b0, e0 = beta_at(0.0)
        b1, e1 = beta_at(sign * hstep)
        b2, e2 = beta_at(2.0 * sign * hstep)
        return (sign * (-3.0 * b0 + 4.0 * b1 - b2) / (2.0 * hstep),
                (3.0 * e0 + 4.0 * e1 + e2) / (2.0 * hstep))

    dj, ej = dbeta(j, i)
    di, ei = dbeta(i, j)
    if with_error:
        return dj - di, ej + ei
    return dj - di


def _shifted(lam, i, delta):
    out = np.array(lam, copy=True)
    out[i] += delta
    return out


def berry_data(psi, metric, lam, indices, settings=None):
    """Connection vector, curvature block and residuals at one point."""
    settings = settings or QuadratureSettings()
    lam = np.asarray(lam, dtype=float)
    indices = tuple(indices)
    m = len(indices)
    conn = np.zeros(m)
    resid = np.zeros(m)
    naive = np.zeros(m)
    for a, i in enumerate(indices):
        conn[a], resid[a], naive[a], _ = berry_connection_result(
            psi, metric, i, lam, settings)
    curv = np.zeros((m, m))
    for a in range(m):
        for b in range(a + 1, m):
            f = berry_curvature(psi, metric, indices[a], indices[b], lam,
                                settings)
            curv[a, b] = f
            curv[b, a] = -f
    return BerryData(lam, indices, conn, curv, resid, naive)


def normalization_identity_residual(psi, metric, i, lam, settings=None,
                                    h=None):
    """Residual of the modified normalization identity for parameter ``i``.

    For a normalized state, ``<d_i psi|psi> + <psi|d_i psi> - <sigma_i>/2``
    must vanish; the absolute value of the computed combination is returned.
    """
    settings = settings or QuadratureSettings()
    lam = np.asarray(lam, dtype=float)

    def rows(x):
        base = psi.eval(x, lam)
        dpsi = param_derivative(psi, i, lam, x, h=h)
        sig = deformation_vector(metric, i, x, lam)
        return np.stack([np.conj(dpsi) * base + np.conj(base) * dpsi,
                         np.conj(base) * sig * base])

    value, _, _ = integrate_curved_multi(
        rows, psi.domain, metric, lam, settings)
    return abs(complex(value[0]) - 0.5 * complex(value[1]))
