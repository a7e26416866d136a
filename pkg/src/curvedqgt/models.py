"""Built-in model systems on parameter-dependent curved configuration spaces.

Three two-dimensional systems are provided, each with a four-dimensional
parameter space:

``sym-toda``
    Two symmetrically coupled exponential (Toda-type) oscillators with
    parameters ``(k, kappa, lambda, beta)`` and metric
    ``diag(lambda^2 e^{-2 lambda x}, beta^2 e^{-2 beta y})``.
``anh-toda``
    An anharmonic oscillator coupled to a Toda oscillator, parameters
    ``(k, kappa, lambda, beta)``, metric
    ``diag(4 lambda^2 x^2, beta^2 e^{-2 beta y})``.
``exp-gauge``
    An exponential oscillator minimally coupled to a velocity-linear gauge
    term, parameters ``(k, kappa, lambda, Y)``, metric
    ``diag(x^2, lambda^2 e^{-2 lambda y})``.  Its ground state carries a
    complex phase and the system has a non-vanishing Berry curvature.

Each model exposes the exponential change of variables under which its
Hamiltonian becomes a pair of uncoupled oscillators; the curved volume
weight cancels against the Jacobian of that map, so all inner products run
over a product of half-lines in the transformed coordinates.  A flat
surrogate (``flat-coupled``) with the identity metric is included as the
benchmark for the spectral-sum machinery.

Conventions: hbar = 1 throughout.  The half-line transforms use
``U1 = exp(-lambda x)`` (decaying exponential), under which the potential is
harmonic in the transformed coordinates and the exact ground states below
satisfy the Schroedinger equation pointwise; this is validated numerically
by :func:`hamiltonian_residual`.  For ``exp-gauge`` the ground-state phase
is ``exp[+i Y/2 (x^4/4 + e^{-2 lambda y})]`` and the sign of the gauge terms
in the Hamiltonian is fixed so that this state is an exact eigenstate (the
opposite overall sign of ``Y`` is an equivalent convention).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from .geometry import IntegrationDomain, MetricField, Transform
from .states import ParametricWaveFunction

__all__ = [
    "ModelDefinition",
    "SpectrumData",
    "InadmissibleParameters",
    "MODEL_NAMES",
    "get_model",
    "ground_state",
    "perturbative_ground_state",
    "energy",
    "apply_hamiltonian",
    "hamiltonian_residual",
    "sample_interior_points",
    "flat_gaussian_1d",
]

_INF = math.inf


class InadmissibleParameters(ValueError):
    """Parameter point outside the model's admissible region."""


@dataclass(frozen=True)
class SpectrumData:
    """Normal-mode data of the decoupled oscillator pair at one point."""

    omega_plus: float
    omega_minus: float
    omega1: float
    omega2: float
    gamma: float
    N0: float


@dataclass(frozen=True)
class ModelDefinition:
    """A model system: metric, domain, potential, states and spectrum."""

    name: str
    param_names: tuple
    metric: MetricField
    domain: IntegrationDomain
    potential: Callable                  # V1(x, lam) -> (K,)
    admissible: Callable                 # lam -> bool
    admissible_description: str
    spectrum: Callable                   # lam -> SpectrumData
    ground: ParametricWaveFunction
    energy_fn: Callable                  # (qn, lam) -> float
    transforms: dict = field(default_factory=dict)
    gauge_covector: Optional[Callable] = None   # F_mu(x, lam) -> (N, K)
    apply_gauge: Optional[Callable] = None      # (lam, x, f0, d1) -> (K,)
    perturbative: dict = field(default_factory=dict)
    sampler: Optional[Callable] = None          # (lam, n, rng) -> (N, n)
    # parameter indices the metric does not depend on; for these d_i H is a
    # pure multiplication by potential_param_grad
    metric_independent_params: tuple = ()
    potential_param_grad: Optional[Callable] = None  # (x, lam, i) -> (K,)
    dim_config: int = 2

    def param_index(self, name):
        try:
            return self.param_names.index(name)
        except ValueError:
            raise KeyError(
                f"model {self.name!r} has parameters {self.param_names}, "
                f"not {name!r}") from None

    def check_admissible(self, lam):
        lam = np.asarray(lam, dtype=float)
        if lam.shape != (len(self.param_names),):
            raise InadmissibleParameters(
                f"model {self.name!r} expects {len(self.param_names)} "
                f"parameters {self.param_names}")
        if not self.admissible(lam):
            raise InadmissibleParameters(
                f"parameters {tuple(lam)} violate {self.admissible_description}"
                f" for model {self.name!r}")
        return lam


# ---------------------------------------------------------------------------
# shared oscillator-pair helpers


def _freqs(k, kap):
    return math.sqrt(k), math.sqrt(k + 2.0 * kap)


def _dfreqs(wp, wm, i):
    # derivatives of (omega_plus, omega_minus) wrt (k, kappa)
    if i == 0:
        return 0.5 / wp, 0.5 / wm
    if i == 1:
        return 0.0, 1.0 / wm
    return 0.0, 0.0


def _ln_norm_grad(wp, wm, dwp, dwm):
    # d ln N for N = (wp*wm)^(1/4) / sqrt(c * arctan(sqrt(wm/wp)))
    t = math.sqrt(wm / wp)
    a = math.atan(t)
    dt = 0.5 * t * (dwm / wm - dwp / wp)
    return 0.25 * (dwp / wp + dwm / wm) - 0.5 * dt / ((1.0 + t * t) * a)


def _wedge_norm_constant(wp, wm, multiplicity):
    # curved norm over the product of half-lines equals
    # multiplicity * arctan(sqrt(wm/wp)) / sqrt(wp*wm) for the pair ground
    # state; N is the inverse square root of that.
    a = math.atan(math.sqrt(wm / wp))
    return (wp * wm) ** 0.25 / math.sqrt(multiplicity * a)


def _oscillator_energy(qn, wp, wm):
    n_plus, n_minus = qn
    if n_plus < 0 or n_minus < 0:
        raise ValueError("quantum numbers must be non-negative")
    return wp * (n_plus + 0.5) + wm * (n_minus + 0.5)


def _toda_spectrum(lam, multiplicity):
    k, kap = float(lam[0]), float(lam[1])
    wp, wm = _freqs(k, kap)
    w1 = 0.5 * (wp + wm)
    gamma = 0.5 * (wp - wm)
    return SpectrumData(wp, wm, w1, w1, gamma,
                        _wedge_norm_constant(wp, wm, multiplicity))


# ---------------------------------------------------------------------------
# symmetrically coupled Toda oscillators


def _sym_toda_metric_eval(x, lam):
    k, kap, lm, bt = lam
    K = x.shape[-1]
    g = np.zeros((2, 2, K))
    g[0, 0] = lm * lm * np.exp(-2.0 * lm * x[0])
    g[1, 1] = bt * bt * np.exp(-2.0 * bt * x[1])
    return g


def _sym_toda_metric_grad(x, lam, i):
    k, kap, lm, bt = lam
    K = x.shape[-1]
    dg = np.zeros((2, 2, K))
    if i == 2:
        dg[0, 0] = 2.0 * lm * np.exp(-2.0 * lm * x[0]) * (1.0 - lm * x[0])
    elif i == 3:
        dg[1, 1] = 2.0 * bt * np.exp(-2.0 * bt * x[1]) * (1.0 - bt * x[1])
    return dg


def _sym_toda_admissible(lam):
    k, kap, lm, bt = lam
    return k > 0.0 and kap >= 0.0 and lm != 0.0 and bt != 0.0


def _sym_toda_U(x, lam):
    k, kap, lm, bt = lam
    return np.stack([np.exp(-lm * x[0]), np.exp(-bt * x[1])])


def _sym_toda_x(u, lam):
    k, kap, lm, bt = lam
    return np.stack([-np.log(u[0]) / lm, -np.log(u[1]) / bt])


def _sym_toda_jac(x, lam):
    k, kap, lm, bt = lam
    return lm * bt * np.exp(-lm * x[0] - bt * x[1])


def _sym_toda_psi0(x, lam):
    k, kap, lm, bt = lam
    wp, wm = _freqs(k, kap)
    w1 = 0.5 * (wp + wm)
    gamma = 0.5 * (wp - wm)
    n0 = _wedge_norm_constant(wp, wm, 1.0)
    u1 = np.exp(-lm * np.asarray(x)[0])
    u2 = np.exp(-bt * np.asarray(x)[1])
    expo = -0.5 * w1 * (u1 * u1 + u2 * u2) - gamma * u1 * u2
    return np.asarray(n0 * np.exp(expo), dtype=complex)


def _sym_toda_psi0_grad(x, lam, i):
    k, kap, lm, bt = lam
    wp, wm = _freqs(k, kap)
    w1 = 0.5 * (wp + wm)
    gamma = 0.5 * (wp - wm)
    u1 = np.exp(-lm * np.asarray(x)[0])
    u2 = np.exp(-bt * np.asarray(x)[1])
    base = _sym_toda_psi0(x, lam)
    if i in (0, 1):
        dwp, dwm = _dfreqs(wp, wm, i)
        dw1 = 0.5 * (dwp + dwm)
        dgam = 0.5 * (dwp - dwm)
        dln = _ln_norm_grad(wp, wm, dwp, dwm)
        dexpo = -0.5 * dw1 * (u1 * u1 + u2 * u2) - dgam * u1 * u2
        return base * (dln + dexpo)
    if i == 2:
        du1 = -np.asarray(x)[0] * u1
        return base * ((-w1 * u1 - gamma * u2) * du1)
    du2 = -np.asarray(x)[1] * u2
    return base * ((-w1 * u2 - gamma * u1) * du2)


def _sym_toda_pert_eval(order):
    def eval_fn(x, lam):
        k, kap, lm, bt = lam
        wp, wm = _freqs(k, kap)
        w1 = 0.5 * (wp + wm)
        gamma = 0.5 * (wp - wm)
        u1 = np.exp(-lm * np.asarray(x)[0])
        u2 = np.exp(-bt * np.asarray(x)[1])
        uv = u1 * u2
        poly = 1.0 - gamma * uv
        if order == 2:
            poly = poly + 0.5 * gamma * gamma * uv * uv
        n = _pert_norm(order, w1, gamma)
        expo = -0.5 * w1 * (u1 * u1 + u2 * u2)
        return np.asarray(n * np.exp(expo) * poly, dtype=complex)
    return eval_fn


def _pert_norm(order, w1, gamma):
    # closed-form normalization over the quarter plane in (U1, U2)
    w = w1 * w1
    sw = w1
    if order == 1:
        d = math.pi * gamma * gamma - 8.0 * gamma * sw + 4.0 * math.pi * w
        return 4.0 * math.sqrt(w ** 1.5 / d)
    d = (9.0 * math.pi * gamma ** 4 - 64.0 * gamma ** 3 * sw
         + 32.0 * math.pi * gamma * gamma * w - 128.0 * gamma * w ** 1.5
         + 64.0 * math.pi * w * w)
    return 16.0 * math.sqrt(w ** 2.5 / d)


def _pert_norm_grad(order, w1, gamma, dw1, dgam):
    # d ln N for the truncated states; w = w1^2
    w = w1 * w1
    sw = w1
    dw = 2.0 * w1 * dw1
    if order == 1:
        d = math.pi * gamma * gamma - 8.0 * gamma * sw + 4.0 * math.pi * w
        dd = ((2.0 * math.pi * gamma - 8.0 * sw) * dgam
              + (4.0 * math.pi - 4.0 * gamma / sw) * dw)
        return 0.75 * dw / w - 0.5 * dd / d
    d = (9.0 * math.pi * gamma ** 4 - 64.0 * gamma ** 3 * sw
         + 32.0 * math.pi * gamma * gamma * w - 128.0 * gamma * w ** 1.5
         + 64.0 * math.pi * w * w)
    dd = ((36.0 * math.pi * gamma ** 3 - 192.0 * gamma * gamma * sw
           + 64.0 * math.pi * gamma * w - 128.0 * w ** 1.5) * dgam
          + (-32.0 * gamma ** 3 / sw + 32.0 * math.pi * gamma * gamma
             - 192.0 * gamma * sw + 128.0 * math.pi * w) * dw)
    return 1.25 * dw / w - 0.5 * dd / d


def _sym_toda_pert_grad(order):
    def grad_fn(x, lam, i):
        k, kap, lm, bt = lam
        wp, wm = _freqs(k, kap)
        w1 = 0.5 * (wp + wm)
        gamma = 0.5 * (wp - wm)
        u1 = np.exp(-lm * np.asarray(x)[0])
        u2 = np.exp(-bt * np.asarray(x)[1])
        uv = u1 * u2
        poly = 1.0 - gamma * uv
        if order == 2:
            poly = poly + 0.5 * gamma * gamma * uv * uv
        base = _sym_toda_pert_eval(order)(x, lam)
        if i in (0, 1):
            dwp, dwm = _dfreqs(wp, wm, i)
            dw1 = 0.5 * (dwp + dwm)
            dgam = 0.5 * (dwp - dwm)
            dln = _pert_norm_grad(order, w1, gamma, dw1, dgam)
            dexpo = -0.5 * dw1 * (u1 * u1 + u2 * u2)
            dpoly = -dgam * uv
            if order == 2:
                dpoly = dpoly + gamma * dgam * uv * uv
            return base * (dln + dexpo + dpoly / poly)
        if i == 2:
            du1 = -np.asarray(x)[0] * u1
        else:
            du1 = None
        if i == 3:
            du2 = -np.asarray(x)[1] * u2
            dexpo = -w1 * u2 * du2
            dpoly = -gamma * u1 * du2
            if order == 2:
                dpoly = dpoly + gamma * gamma * u1 * u1 * u2 * du2
        else:
            dexpo = -w1 * u1 * du1
            dpoly = -gamma * u2 * du1
            if order == 2:
                dpoly = dpoly + gamma * gamma * u1 * u2 * u2 * du1
        return base * (dexpo + dpoly / poly)
    return grad_fn


def _sym_toda_potential(x, lam):
    k, kap, lm, bt = lam
    u1 = np.exp(-lm * x[0])
    u2 = np.exp(-bt * x[1])
    return 0.5 * k * (u1 * u1 + u2 * u2) + 0.5 * kap * (u1 - u2) ** 2


def _sym_toda_potential_grad(x, lam, i):
    k, kap, lm, bt = lam
    u1 = np.exp(-lm * x[0])
    u2 = np.exp(-bt * x[1])
    if i == 0:
        return 0.5 * (u1 * u1 + u2 * u2)
    if i == 1:
        return 0.5 * (u1 - u2) ** 2
    raise ValueError("metric depends on this parameter; use the operator "
                     "finite-difference route")


def _half_line_pair_domain(transform, spectrum, log_axes, config_hints):
    def hints(lam):
        s = spectrum(lam)
        w = max(s.omega1, 1e-12)
        return (3.0 / math.sqrt(w), 3.0 / math.sqrt(w))

    return IntegrationDomain(
        kind="transformed",
        dim=2,
        config_bounds=((-_INF, _INF), (-_INF, _INF)),
        transform=transform,
        bounds=((0.0, _INF), (0.0, _INF)),
        log_axes=log_axes,
        scale_hints=hints,
        config_scale_hints=config_hints,
    )


def _toda_sampler(to_config):
    def sample(lam, n, rng, spectrum):
        s = spectrum(lam)
        w = math.sqrt(s.omega1)
        u = rng.uniform(0.25, 1.5, size=(2, n)) / w
        return to_config(u, lam)
    return sample


def _make_sym_toda():
    transform = Transform(
        to_config=_sym_toda_x,
        to_integration=_sym_toda_U,
        jacobian_det=_sym_toda_jac,
        multiplicity=1.0,
    )
    spectrum = lambda lam: _toda_spectrum(lam, 1.0)

    def config_hints(lam):
        k, kap, lm, bt = lam
        s = spectrum(lam)
        return (3.0 / abs(lm) / max(1.0, math.sqrt(s.omega1)) + 1.0 / abs(lm),
                3.0 / abs(bt) / max(1.0, math.sqrt(s.omega1)) + 1.0 / abs(bt))

    domain = _half_line_pair_domain(transform, spectrum, (True, True),
                                    config_hints)
    metric = MetricField(2, 4, _sym_toda_metric_eval, _sym_toda_metric_grad,
                         domain)
    admissible = _sym_toda_admissible
    ground = ParametricWaveFunction(
        eval=_sym_toda_psi0, domain=domain, label="sym-toda ground state",
        analytic_param_grad=_sym_toda_psi0_grad, admissible=admissible,
        dim_params=4)
    perturbative = {
        order: ParametricWaveFunction(
            eval=_sym_toda_pert_eval(order), domain=domain,
            label=f"sym-toda truncated-coupling order {order}",
            analytic_param_grad=_sym_toda_pert_grad(order),
            admissible=admissible, dim_params=4)
        for order in (1, 2)
    }

    def energy_fn(qn, lam):
        wp, wm = _freqs(float(lam[0]), float(lam[1]))
        return _oscillator_energy(qn, wp, wm)

    sampler = _toda_sampler(_sym_toda_x)
    return ModelDefinition(
        name="sym-toda",
        param_names=("k", "kappa", "lambda", "beta"),
        metric=metric,
        domain=domain,
        potential=_sym_toda_potential,
        admissible=admissible,
        admissible_description="k > 0, kappa >= 0, lambda != 0, beta != 0",
        spectrum=spectrum,
        ground=ground,
        energy_fn=energy_fn,
        transforms={
            "U1": lambda x, lam: np.exp(-lam[2] * x[0]),
            "U2": lambda x, lam: np.exp(-lam[3] * x[1]),
            "Uplus": lambda x, lam: (np.exp(-lam[2] * x[0])
                                     + np.exp(-lam[3] * x[1])) / math.sqrt(2),
            "Uminus": lambda x, lam: (np.exp(-lam[2] * x[0])
                                      - np.exp(-lam[3] * x[1])) / math.sqrt(2),
        },
        perturbative=perturbative,
        sampler=lambda lam, n, rng: sampler(lam, n, rng, spectrum),
        metric_independent_params=(0, 1),
        potential_param_grad=_sym_toda_potential_grad,
    )


# ---------------------------------------------------------------------------
# anharmonic oscillator coupled to a Toda oscillator


def _anh_toda_metric_eval(x, lam):
    k, kap, lm, bt = lam
    K = x.shape[-1]
    g = np.zeros((2, 2, K))
    g[0, 0] = 4.0 * lm * lm * x[0] * x[0]
    g[1, 1] = bt * bt * np.exp(-2.0 * bt * x[1])
    return g


def _anh_toda_metric_grad(x, lam, i):
    k, kap, lm, bt = lam
    K = x.shape[-1]
    dg = np.zeros((2, 2, K))
    if i == 2:
        dg[0, 0] = 8.0 * lm * x[0] * x[0]
    elif i == 3:
        dg[1, 1] = 2.0 * bt * np.exp(-2.0 * bt * x[1]) * (1.0 - bt * x[1])
    return dg


def _anh_toda_admissible(lam):
    k, kap, lm, bt = lam
    return k > 0.0 and kap >= 0.0 and lm > 0.0 and bt != 0.0


def _anh_toda_U(x, lam):
    k, kap, lm, bt = lam
    return np.stack([lm * x[0] * x[0], np.exp(-bt * x[1])])


def _anh_toda_x(u, lam):
    k, kap, lm, bt = lam
    return np.stack([np.sqrt(u[0] / lm), -np.log(u[1]) / bt])


def _anh_toda_jac(x, lam):
    k, kap, lm, bt = lam
    return -2.0 * lm * x[0] * bt * np.exp(-bt * x[1])


def _anh_toda_psi0(x, lam):
    k, kap, lm, bt = lam
    wp, wm = _freqs(k, kap)
    w1 = 0.5 * (wp + wm)
    gamma = 0.5 * (wp - wm)
    n0 = _wedge_norm_constant(wp, wm, 2.0)
    u1 = lm * np.asarray(x)[0] ** 2
    u2 = np.exp(-bt * np.asarray(x)[1])
    expo = -0.5 * w1 * (u1 * u1 + u2 * u2) - gamma * u1 * u2
    return np.asarray(n0 * np.exp(expo), dtype=complex)


def _anh_toda_psi0_grad(x, lam, i):
    k, kap, lm, bt = lam
    wp, wm = _freqs(k, kap)
    w1 = 0.5 * (wp + wm)
    gamma = 0.5 * (wp - wm)
    u1 = lm * np.asarray(x)[0] ** 2
    u2 = np.exp(-bt * np.asarray(x)[1])
    base = _anh_toda_psi0(x, lam)
    if i in (0, 1):
        dwp, dwm = _dfreqs(wp, wm, i)
        dw1 = 0.5 * (dwp + dwm)
        dgam = 0.5 * (dwp - dwm)
        dln = _ln_norm_grad(wp, wm, dwp, dwm)
        dexpo = -0.5 * dw1 * (u1 * u1 + u2 * u2) - dgam * u1 * u2
        return base * (dln + dexpo)
    if i == 2:
        du1 = np.asarray(x)[0] ** 2
        return base * ((-w1 * u1 - gamma * u2) * du1)
    du2 = -np.asarray(x)[1] * u2
    return base * ((-w1 * u2 - gamma * u1) * du2)


def _anh_toda_potential(x, lam):
    k, kap, lm, bt = lam
    u1 = lm * x[0] * x[0]
    u2 = np.exp(-bt * x[1])
    return 0.5 * k * (u1 * u1 + u2 * u2) + 0.5 * kap * (u1 - u2) ** 2


def _anh_toda_potential_grad(x, lam, i):
    k, kap, lm, bt = lam
    u1 = lm * x[0] * x[0]
    u2 = np.exp(-bt * x[1])
    if i == 0:
        return 0.5 * (u1 * u1 + u2 * u2)
    if i == 1:
        return 0.5 * (u1 - u2) ** 2
    raise ValueError("metric depends on this parameter; use the operator "
                     "finite-difference route")


def _make_anh_toda():
    transform = Transform(
        to_config=_anh_toda_x,
        to_integration=_anh_toda_U,
        jacobian_det=_anh_toda_jac,
        multiplicity=2.0,
    )
    spectrum = lambda lam: _toda_spectrum(lam, 2.0)

    def config_hints(lam):
        k, kap, lm, bt = lam
        s = spectrum(lam)
        return (math.sqrt(3.0 / (lm * math.sqrt(s.omega1))),
                3.0 / abs(bt) / max(1.0, math.sqrt(s.omega1)) + 1.0 / abs(bt))

    domain = _half_line_pair_domain(transform, spectrum, (False, True),
                                    config_hints)
    metric = MetricField(2, 4, _anh_toda_metric_eval, _anh_toda_metric_grad,
                         domain)
    admissible = _anh_toda_admissible
    ground = ParametricWaveFunction(
        eval=_anh_toda_psi0, domain=domain, label="anh-toda ground state",
        analytic_param_grad=_anh_toda_psi0_grad, admissible=admissible,
        dim_params=4)

    def energy_fn(qn, lam):
        wp, wm = _freqs(float(lam[0]), float(lam[1]))
        return _oscillator_energy(qn, wp, wm)

    def sampler(lam, n, rng):
        s = spectrum(lam)
        w = math.sqrt(s.omega1)
        u = rng.uniform(0.25, 1.5, size=(2, n)) / w
        x = _anh_toda_x(u, lam)
        x[0] *= rng.choice([-1.0, 1.0], size=n)
        return x

    return ModelDefinition(
        name="anh-toda",
        param_names=("k", "kappa", "lambda", "beta"),
        metric=metric,
        domain=domain,
        potential=_anh_toda_potential,
        admissible=admissible,
        admissible_description="k > 0, kappa >= 0, lambda > 0, beta != 0",
        spectrum=spectrum,
        ground=ground,
        energy_fn=energy_fn,
        transforms={
            "U1": lambda x, lam: lam[2] * x[0] ** 2,
            "U2": lambda x, lam: np.exp(-lam[3] * x[1]),
        },
        sampler=sampler,
        metric_independent_params=(0, 1),
        potential_param_grad=_anh_toda_potential_grad,
    )


# ---------------------------------------------------------------------------
# exponential oscillator with a gauge coupling


def _exp_gauge_metric_eval(x, lam):
    k, kap, lm, Y = lam
    K = x.shape[-1]
    g = np.zeros((2, 2, K))
    g[0, 0] = x[0] * x[0]
    g[1, 1] = lm * lm * np.exp(-2.0 * lm * x[1])
    return g


def _exp_gauge_metric_grad(x, lam, i):
    k, kap, lm, Y = lam
    K = x.shape[-1]
    dg = np.zeros((2, 2, K))
    if i == 2:
        dg[1, 1] = 2.0 * lm * np.exp(-2.0 * lm * x[1]) * (1.0 - lm * x[1])
    return dg


def _exp_gauge_admissible(lam):
    k, kap, lm, Y = lam
    return k > Y * Y and kap >= 0.0 and lm != 0.0


def _exp_gauge_freqs(lam):
    k, kap, lm, Y = lam
    return k - Y * Y, k + 2.0 * kap - Y * Y


def _exp_gauge_q(x, lam):
    k, kap, lm, Y = lam
    return np.stack([0.5 * x[0] * x[0], np.exp(-lm * x[1])])


def _exp_gauge_x(q, lam):
    k, kap, lm, Y = lam
    return np.stack([np.sqrt(2.0 * q[0]), -np.log(q[1]) / lm])


def _exp_gauge_jac(x, lam):
    k, kap, lm, Y = lam
    return -x[0] * lm * np.exp(-lm * x[1])


def _exp_gauge_psi0(x, lam):
    k, kap, lm, Y = lam
    wp, wm = _exp_gauge_freqs(lam)
    n0 = _wedge_norm_constant(wp, wm, 1.0)
    q1 = 0.5 * np.asarray(x)[0] ** 2
    q2 = np.exp(-lm * np.asarray(x)[1])
    rad = q1 * q1 + q2 * q2
    expo = -0.25 * (wp + wm) * rad - 0.5 * (wp - wm) * q1 * q2
    return n0 * np.exp(expo + 0.5j * Y * rad)


def _exp_gauge_psi0_grad(x, lam, i):
    k, kap, lm, Y = lam
    wp, wm = _exp_gauge_freqs(lam)
    q1 = 0.5 * np.asarray(x)[0] ** 2
    q2 = np.exp(-lm * np.asarray(x)[1])
    rad = q1 * q1 + q2 * q2
    base = _exp_gauge_psi0(x, lam)
    if i == 0:
        return base * (_ln_norm_grad(wp, wm, 1.0, 1.0) - 0.5 * rad)
    if i == 1:
        return base * (_ln_norm_grad(wp, wm, 0.0, 2.0) - 0.5 * rad + q1 * q2)
    if i == 2:
        dq2 = -np.asarray(x)[1] * q2
        dre = (-0.5 * (wp + wm) * q2 - 0.5 * (wp - wm) * q1) * dq2
        dph = Y * q2 * dq2
        return base * (dre + 1j * dph)
    dre = Y * rad
    dph = 0.5 * rad
    return base * (_ln_norm_grad(wp, wm, -2.0 * Y, -2.0 * Y) + dre + 1j * dph)


def _exp_gauge_potential(x, lam):
    k, kap, lm, Y = lam
    wp, wm = _exp_gauge_freqs(lam)
    alpha = wp * wp + Y * Y
    alpha_p = wm * wm + Y * Y
    q1 = 0.5 * x[0] * x[0]
    q2 = np.exp(-lm * x[1])
    return 0.25 * (alpha + alpha_p) * (q1 * q1 + q2 * q2) \
        + 0.5 * (alpha - alpha_p) * q1 * q2


def _exp_gauge_covector(x, lam):
    k, kap, lm, Y = lam
    f = np.zeros((2,) + np.shape(x[0]))
    f[0] = -0.5 * Y * x[0] ** 3
    f[1] = Y * lm * np.exp(-2.0 * lm * x[1])
    return f


def _exp_gauge_apply_gauge(lam, x, f0, d1):
    k, kap, lm, Y = lam
    return 0.5j * Y * (x[0] * d1[0] - (2.0 / lm) * d1[1] + 2.0 * f0)


def _make_exp_gauge():
    transform = Transform(
        to_config=_exp_gauge_x,
        to_integration=_exp_gauge_q,
        jacobian_det=_exp_gauge_jac,
        multiplicity=1.0,
    )

    def spectrum(lam):
        wp, wm = _exp_gauge_freqs(lam)
        return SpectrumData(wp, wm, 0.5 * (wp + wm), 0.5 * (wp + wm),
                            0.5 * (wp - wm),
                            _wedge_norm_constant(wp, wm, 1.0))

    def config_hints(lam):
        k, kap, lm, Y = lam
        s = spectrum(lam)
        return (math.sqrt(6.0 / math.sqrt(s.omega1)),
                3.0 / abs(lm) / max(1.0, math.sqrt(s.omega1)) + 1.0 / abs(lm))

    domain = IntegrationDomain(
        kind="transformed",
        dim=2,
        config_bounds=((0.0, _INF), (-_INF, _INF)),
        transform=transform,
        bounds=((0.0, _INF), (0.0, _INF)),
        log_axes=(False, True),
        scale_hints=lambda lam: (
            3.0 / math.sqrt(max(spectrum(lam).omega1, 1e-12)),
            3.0 / math.sqrt(max(spectrum(lam).omega1, 1e-12)),
        ),
        config_scale_hints=config_hints,
    )
    metric = MetricField(2, 4, _exp_gauge_metric_eval, _exp_gauge_metric_grad,
                         domain)
    admissible = _exp_gauge_admissible
    ground = ParametricWaveFunction(
        eval=_exp_gauge_psi0, domain=domain, label="exp-gauge ground state",
        analytic_param_grad=_exp_gauge_psi0_grad, admissible=admissible,
        dim_params=4)

    def energy_fn(qn, lam):
        if tuple(qn) != (0, 0):
            raise ValueError("only the ground-state energy is available for "
                             "the gauge-coupled model")
        k, kap, lm, Y = (float(v) for v in lam)
        return k + kap - Y * Y

    def sampler(lam, n, rng):
        s = spectrum(lam)
        w = math.sqrt(s.omega1)
        q = rng.uniform(0.25, 1.5, size=(2, n)) / w
        return _exp_gauge_x(q, lam)

    return ModelDefinition(
        name="exp-gauge",
        param_names=("k", "kappa", "lambda", "Y"),
        metric=metric,
        domain=domain,
        potential=_exp_gauge_potential,
        admissible=admissible,
        admissible_description="k > Y^2, kappa >= 0, lambda != 0",
        spectrum=spectrum,
        ground=ground,
        energy_fn=energy_fn,
        transforms={
            "q1": lambda x, lam: 0.5 * x[0] ** 2,
            "q2": lambda x, lam: np.exp(-lam[2] * x[1]),
        },
        gauge_covector=_exp_gauge_covector,
        apply_gauge=_exp_gauge_apply_gauge,
        sampler=sampler,
    )


# ---------------------------------------------------------------------------
# flat surrogates


def _flat_metric_eval(x, lam):
    K = x.shape[-1]
    g = np.zeros((2, 2, K))
    g[0, 0] = 1.0
    g[1, 1] = 1.0
    return g


def _flat_metric_grad(x, lam, i):
    return np.zeros((2, 2, x.shape[-1]))


def _flat_coupled_psi0(x, lam):
    k, kap = float(lam[0]), float(lam[1])
    wp, wm = _freqs(k, kap)
    up = (np.asarray(x)[0] + np.asarray(x)[1]) / math.sqrt(2.0)
    um = (np.asarray(x)[0] - np.asarray(x)[1]) / math.sqrt(2.0)
    n0 = (wp * wm) ** 0.25 / math.sqrt(math.pi)
    return np.asarray(
        n0 * np.exp(-0.5 * (wp * up * up + wm * um * um)), dtype=complex)


def _flat_coupled_psi0_grad(x, lam, i):
    k, kap = float(lam[0]), float(lam[1])
    wp, wm = _freqs(k, kap)
    dwp, dwm = _dfreqs(wp, wm, i)
    up = (np.asarray(x)[0] + np.asarray(x)[1]) / math.sqrt(2.0)
    um = (np.asarray(x)[0] - np.asarray(x)[1]) / math.sqrt(2.0)
    base = _flat_coupled_psi0(x, lam)
    dln = 0.25 * (dwp / wp + dwm / wm)
    return base * (dln - 0.5 * (dwp * up * up + dwm * um * um))


def _make_flat_coupled():
    def spectrum(lam):
        wp, wm = _freqs(float(lam[0]), float(lam[1]))
        return SpectrumData(wp, wm, 0.5 * (wp + wm), 0.5 * (wp + wm),
                            0.5 * (wp - wm),
                            (wp * wm) ** 0.25 / math.sqrt(math.pi))

    def hints(lam):
        s = spectrum(lam)
        return (3.0 / math.sqrt(s.omega1), 3.0 / math.sqrt(s.omega1))

    domain = IntegrationDomain(
        kind="full-plane",
        dim=2,
        config_bounds=((-_INF, _INF), (-_INF, _INF)),
        scale_hints=hints,
        config_scale_hints=hints,
    )
    metric = MetricField(2, 2, _flat_metric_eval, _flat_metric_grad, domain,
                         is_flat=True)

    def admissible(lam):
        return float(lam[0]) > 0.0 and float(lam[1]) >= 0.0

    def potential(x, lam):
        k, kap = float(lam[0]), float(lam[1])
        return 0.5 * k * (x[0] ** 2 + x[1] ** 2) + 0.5 * kap * (x[0] - x[1]) ** 2

    def potential_grad(x, lam, i):
        if i == 0:
            return 0.5 * (x[0] ** 2 + x[1] ** 2)
        if i == 1:
            return 0.5 * (x[0] - x[1]) ** 2
        raise ValueError("flat surrogate has two parameters")

    ground = ParametricWaveFunction(
        eval=_flat_coupled_psi0, domain=domain,
        label="flat coupled-oscillator ground state",
        analytic_param_grad=_flat_coupled_psi0_grad, admissible=admissible,
        dim_params=2)

    def energy_fn(qn, lam):
        wp, wm = _freqs(float(lam[0]), float(lam[1]))
        return _oscillator_energy(qn, wp, wm)

    def sampler(lam, n, rng):
        s = spectrum(lam)
        return rng.uniform(-1.5, 1.5, size=(2, n)) / math.sqrt(s.omega1)

    return ModelDefinition(
        name="flat-coupled",
        param_names=("k", "kappa"),
        metric=metric,
        domain=domain,
        potential=potential,
        admissible=admissible,
        admissible_description="k > 0, kappa >= 0",
        spectrum=spectrum,
        ground=ground,
        energy_fn=energy_fn,
        transforms={
            "uplus": lambda x, lam: (x[0] + x[1]) / math.sqrt(2.0),
            "uminus": lambda x, lam: (x[0] - x[1]) / math.sqrt(2.0),
        },
        sampler=sampler,
        metric_independent_params=(0, 1),
        potential_param_grad=potential_grad,
    )


def flat_gaussian_1d():
    """One-dimensional flat Gaussian test state with parameter ``omega``."""
    domain = IntegrationDomain(
        kind="full-plane",
        dim=1,
        config_bounds=((-_INF, _INF),),
        scale_hints=lambda lam: (3.0 / math.sqrt(float(lam[0])),),
        config_scale_hints=lambda lam: (3.0 / math.sqrt(float(lam[0])),),
    )

    def metric_eval(x, lam):
        return np.ones((1, 1, x.shape[-1]))

    def metric_grad(x, lam, i):
        return np.zeros((1, 1, x.shape[-1]))

    metric = MetricField(1, 1, metric_eval, metric_grad, domain, is_flat=True)

    def eval_fn(x, lam):
        w = float(lam[0])
        xx = np.asarray(x)[0]
        return np.asarray((w / math.pi) ** 0.25 * np.exp(-0.5 * w * xx * xx),
                          dtype=complex)

    def grad_fn(x, lam, i):
        w = float(lam[0])
        xx = np.asarray(x)[0]
        return eval_fn(x, lam) * (0.25 / w - 0.5 * xx * xx)

    psi = ParametricWaveFunction(
        eval=eval_fn, domain=domain, label="flat 1d gaussian",
        analytic_param_grad=grad_fn,
        admissible=lambda lam: float(lam[0]) > 0.0, dim_params=1)
    return metric, psi


# ---------------------------------------------------------------------------
# registry and operations


_BUILDERS = {
    "sym-toda": _make_sym_toda,
    "anh-toda": _make_anh_toda,
    "exp-gauge": _make_exp_gauge,
    "flat-coupled": _make_flat_coupled,
}

MODEL_NAMES = tuple(sorted(_BUILDERS))


@lru_cache(maxsize=None)
def get_model(name):
    """Return the (cached, immutable) model definition for ``name``."""
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise KeyError(f"unknown model {name!r}; available: {MODEL_NAMES}") \
            from None
    return builder()


def ground_state(model, lam):
    """Normalized exact ground state of ``model``, validated at ``lam``."""
    model.check_admissible(lam)
    return model.ground


def perturbative_ground_state(model, order, lam):
    """Truncated-coupling ground state (orders 1 and 2) where available."""
    model.check_admissible(lam)
    if order not in model.perturbative:
        raise ValueError(
            f"model {model.name!r} has no order-{order} truncated state")
    return model.perturbative[order]


def energy(model, quantum_numbers, lam):
    """Eigenenergy for the given oscillator quantum numbers (hbar = 1)."""
    lam = model.check_admissible(lam)
    return float(model.energy_fn(quantum_numbers, lam))


class HamiltonianFrame:
    """Stencil bookkeeping for applying the Hamiltonian at fixed points.

    The frame precomputes the 5-point stencil node sets (per coordinate,
    steps ``step * (1 + |x_mu|)``) and all metric-derived coefficients of
    the Laplace-Beltrami operator for diagonal metrics.  Function values on
    ``frame.points`` can then be turned into ``H f`` values by
    :meth:`apply`; several operator applications at the same points share
    one frame and one set of node evaluations.
    """

    def __init__(self, model, lam, x, step=1e-4):
        lam = np.asarray(lam, dtype=float)
        x = np.asarray(x, dtype=float)
        self.model = model
        self.lam = lam
        self.x = x
        n = x.shape[0]
        self.dim = n

        g = np.asarray(model.metric.eval(x, lam))
        if n > 1:
            off = max(float(np.max(np.abs(g[a, b])))
                      for a in range(n) for b in range(n) if a != b)
            if off > 0.0:
                raise ValueError(
                    "the Laplace-Beltrami stencil supports diagonal metrics "
                    "only")
        sqrtg = np.sqrt(np.prod(np.stack([g[mu, mu] for mu in range(n)]),
                                axis=0))

        self.points = {"c": x}
        self.steps = []
        self.ginv_diag = []
        self.c_mu = []
        for mu in range(n):
            h = step * (1.0 + np.abs(x[mu]))
            self.steps.append(h)
            for s in (-2, -1, 1, 2):
                xs = np.array(x, copy=True)
                xs[mu] = xs[mu] + s * h
                self.points[(mu, s)] = xs
            self.ginv_diag.append(1.0 / g[mu, mu])

            def wvals(xs):
                gg = np.asarray(model.metric.eval(xs, lam))
                sg = np.sqrt(np.prod(np.stack([gg[v, v] for v in range(n)]),
                                     axis=0))
                return sg / gg[mu, mu]

            ws = {s: wvals(self.points[(mu, s)]) for s in (-2, -1, 1, 2)}
            dw = (-ws[2] + 8.0 * ws[1] - 8.0 * ws[-1] + ws[-2]) / (12.0 * h)
            self.c_mu.append(dw / sqrtg)

        self.potential = model.potential(x, lam)

    def evaluate(self, f):
        """Evaluate ``f`` on all stencil node sets."""
        return {key: np.asarray(f(xs), dtype=complex)
                for key, xs in self.points.items()}

    def apply(self, values):
        """Assemble ``H f`` from function values on ``frame.points``."""
        f0 = values["c"]
        d1 = []
        kinetic = np.zeros_like(f0)
        for mu in range(self.dim):
            h = self.steps[mu]
            fm2, fm1 = values[(mu, -2)], values[(mu, -1)]
            fp1, fp2 = values[(mu, 1)], values[(mu, 2)]
            d1_mu = (-fp2 + 8.0 * fp1 - 8.0 * fm1 + fm2) / (12.0 * h)
            d2_mu = (-fp2 + 16.0 * fp1 - 30.0 * f0 + 16.0 * fm1 - fm2) \
                / (12.0 * h * h)
            d1.append(d1_mu)
            kinetic = kinetic + self.ginv_diag[mu] * d2_mu \
                + self.c_mu[mu] * d1_mu
        hf = -0.5 * kinetic + self.potential * f0
        if self.model.apply_gauge is not None:
            hf = hf + self.model.apply_gauge(self.lam, self.x, f0, d1)
        return hf


def apply_hamiltonian(model, f, lam, x, step=1e-4):
    """Apply the model Hamiltonian to a configuration-space function.

    The kinetic part is the Laplace-Beltrami operator of the model metric
    (diagonal metrics only), applied with 5-point central stencils of
    per-coordinate step ``step * (1 + |x_mu|)``; gauge terms, when the model
    declares them, reuse the same first-derivative stencils; the scalar
    potential multiplies pointwise.  ``f`` maps ``(N, K)`` points to complex
    values (or stacks of them).
    """
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x.reshape(-1, 1)
    frame = HamiltonianFrame(model, lam, x, step=step)
    hf = frame.apply(frame.evaluate(f))
    return hf[..., 0] if squeeze else hf


def hamiltonian_residual(model, psi, E, lam, sample_points, step=1e-4,
                         return_details=False):
    """Relative eigenvalue-equation residual, maximized over sample points.

    Returns ``max |H psi - E psi| / (|E psi| + eps)``.  Points whose stencil
    would leave the configuration domain are skipped; with
    ``return_details=True`` the skipped points are reported alongside.
    """
    lam = model.check_admissible(lam)
    pts = np.asarray(sample_points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    if pts.shape[0] != model.dim_config:
        pts = pts.T

    keep = np.ones(pts.shape[1], dtype=bool)
    for mu, (lo, hi) in enumerate(model.domain.config_bounds):
        h = 2.0 * step * (1.0 + np.abs(pts[mu]))
        if math.isfinite(lo):
            keep &= pts[mu] - h > lo
        if math.isfinite(hi):
            keep &= pts[mu] + h < hi
    skipped = pts[:, ~keep]
    pts = pts[:, keep]
    if pts.shape[1] == 0:
        raise ValueError("all sample points were skipped")

    f0 = psi.eval(pts, lam)
    hf = apply_hamiltonian(model, lambda xs: psi.eval(xs, lam), lam, pts,
                           step=step)
    resid = np.abs(hf - E * f0) / (np.abs(E * f0) + 1e-12)
    worst = float(np.max(resid))
    if return_details:
        return worst, skipped
    return worst


def sample_interior_points(model, lam, n, rng=None):
    """Deterministic-by-seed interior sample points where the state has mass."""
    lam = model.check_admissible(lam)
    if rng is None:
        rng = np.random.default_rng(0)
    if model.sampler is None:
        raise ValueError(f"model {model.name!r} has no interior sampler")
    return model.sampler(lam, n, rng)
