"""Parameter-grid scans, invariant checks and order comparisons.

A :class:`ScanRequest` names a model, a target quantity, up to two varied
parameters (each with an inclusive range and point count) and fixed values
for the remaining parameters.  Scans evaluate the quantity at every grid
point, farm points out to a worker pool, and write one CSV row per point in
row-major grid order regardless of completion order; failed points emit
``nan`` values with a reason column and never abort the scan.  Output is
deterministic: identical requests produce byte-identical files.

The check runner executes the package's numerical invariants (curved-inner-
product symmetry, deformation-vector identities, Hermiticity, Berry
reality, spectral-sum reductions) at given parameter points and reports
machine-readable pass/fail lines.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .geometry import InvariantViolation, deformation_vector, metric_det
from .models import (InadmissibleParameters, MODEL_NAMES, get_model,
                     ground_state, perturbative_ground_state)
from .quadrature import (ConvergenceError, EvaluationError,
                         QuadratureSettings, inner_product_result)
from .qgt import (berry_connection_result, berry_curvature, dressed_qgt_matrix,
                  normalization_identity_residual, provost_vallee_matrix,
                  qgt_matrix, sigma_expectation, spectrum)

__all__ = [
    "ScanRequest",
    "ScanValidationError",
    "CheckResult",
    "run_scan",
    "run_compare",
    "run_check",
    "QUANTITIES",
    "SUITES",
]

QUANTITIES = ("component", "det", "eigenvalues", "berry-connection",
              "berry-curvature", "pv-vs-full", "compare-orders")
SUITES = ("core", "berry", "zanardi")

_CLAMP = 1e-6  # endpoint clamp, as a fraction of the varied range


class ScanValidationError(ValueError):
    """Invalid scan request; the message names the offending field."""


@dataclass(frozen=True)
class ScanRequest:
    """Grid specification driving CSV emission."""

    model: str
    quantity: str
    vary: tuple                      # ((name, lo, hi, count), ...) 1 or 2
    fixed: dict = field(default_factory=dict)
    indices: tuple = ()              # parameter names for component-like
    orders: tuple = ("analytic", 1, 2)
    settings: QuadratureSettings = field(default_factory=QuadratureSettings)
    output: str = "scan.csv"
    emit_plot: bool = False


@dataclass(frozen=True)
class CheckResult:
    suite: str
    name: str
    point: tuple
    passed: bool
    value: float
    tolerance: float
    info: str = ""


def _validate(request):
    if request.model not in MODEL_NAMES:
        raise ScanValidationError(
            f"model: unknown model {request.model!r}; available {MODEL_NAMES}")
    model = get_model(request.model)
    if request.quantity not in QUANTITIES:
        raise ScanValidationError(
            f"quantity: unknown quantity {request.quantity!r}")
    if not 1 <= len(request.vary) <= 2:
        raise ScanValidationError("vary: need one or two varied parameters")
    names = set(model.param_names)
    seen = set()
    for entry in request.vary:
        name, lo, hi, count = entry
        if name not in names:
            raise ScanValidationError(
                f"vary: {name!r} is not a parameter of {model.name!r} "
                f"(parameters: {model.param_names})")
        if name in seen:
            raise ScanValidationError(f"vary: parameter {name!r} repeated")
        seen.add(name)
        if count < 2:
            raise ScanValidationError(
                f"vary: {name!r} needs count >= 2, got {count}")
        if not lo < hi:
            raise ScanValidationError(
                f"vary: {name!r} needs min < max, got {lo} .. {hi}")
    for name in request.fixed:
        if name not in names:
            raise ScanValidationError(
                f"fix: {name!r} is not a parameter of {model.name!r}")
        if name in seen:
            raise ScanValidationError(
                f"fix: parameter {name!r} is also varied")
        seen.add(name)
    if seen != names:
        missing = names - seen
        raise ScanValidationError(
            f"fix: parameters not covered: {sorted(missing)}")
    if request.quantity in ("component", "berry-curvature", "pv-vs-full"):
        if len(request.indices) != 2:
            raise ScanValidationError(
                f"indices: quantity {request.quantity!r} needs a parameter "
                f"pair")
    if request.quantity == "berry-connection" and len(request.indices) != 1:
        raise ScanValidationError(
            "indices: berry-connection needs exactly one parameter")
    for name in request.indices:
        if name not in names:
            raise ScanValidationError(
                f"indices: {name!r} is not a parameter of {model.name!r}")
    if request.quantity == "compare-orders" and model.name != "sym-toda":
        raise ScanValidationError(
            "quantity: compare-orders is available for sym-toda only")
    return model


def _grid_axis(model, request, name, lo, hi, count):
    values = np.linspace(lo, hi, count)
    others = {}
    for vname, vlo, vhi, _ in request.vary:
        if vname != name:
            others[vname] = 0.5 * (vlo + vhi)
    others.update(request.fixed)

    def admissible_at(v):
        lam = np.array([v if p == name else others[p]
                        for p in model.param_names])
        return model.admissible(lam)

    span = hi - lo
    for idx, direction in ((0, 1.0), (count - 1, -1.0)):
        if not admissible_at(values[idx]):
            values[idx] = values[idx] + direction * _CLAMP * span
    return values


def build_grid(request):
    """Row-major list of parameter points for a validated request."""
    model = _validate(request)
    axes = [(_grid_axis(model, request, *entry), entry[0])
            for entry in request.vary]
    points = []
    if len(axes) == 1:
        values, name = axes[0]
        for v in values:
            points.append({name: float(v), **request.fixed})
    else:
        (v0, n0), (v1, n1) = axes
        for a in v0:
            for b in v1:
                points.append({n0: float(a), n1: float(b), **request.fixed})
    lam_points = []
    for p in points:
        lam_points.append(tuple(p[name] for name in model.param_names))
    return model, lam_points


# ---------------------------------------------------------------------------
# per-point evaluation (worker side)


def _settings_tuple(settings):
    return (settings.rel_tol, settings.abs_tol, settings.max_subdivisions,
            settings.truncation_tail_tol)


def _point_columns(quantity, param_names, indices):
    if quantity == "component":
        return ["re", "im", "err"]
    if quantity == "det":
        return ["det", "err"]
    if quantity == "eigenvalues":
        return [f"eig{i + 1}" for i in range(len(param_names))] + ["err"]
    if quantity == "berry-connection":
        return ["beta", "im_residual"]
    if quantity == "berry-curvature":
        return ["curvature", "err"]
    if quantity == "pv-vs-full":
        return ["det_full", "det_pv"]
    if quantity == "compare-orders":
        cols = []
        for order in ("analytic", "order1", "order2"):
            cols.extend([f"{order}_re", f"{order}_err"])
        return cols
    raise ValueError(quantity)


def _evaluate_point(task):
    (model_name, lam, quantity, indices, settings_tuple) = task
    model = get_model(model_name)
    settings = QuadratureSettings(*settings_tuple)
    lam_arr = np.asarray(lam, dtype=float)
    idx = tuple(model.param_index(nm) for nm in indices)
    try:
        if not model.admissible(lam_arr):
            raise InadmissibleParameters(
                f"violates {model.admissible_description}")
        psi = ground_state(model, lam_arr)
        if quantity == "component":
            block = qgt_matrix(psi, model.metric, lam_arr, idx, settings)
            val = block.entries[0, -1]
            return [val.real, val.imag,
                    float(block.error_estimates[0, -1])], ""
        if quantity in ("det", "eigenvalues"):
            allidx = tuple(range(len(model.param_names)))
            block = qgt_matrix(psi, model.metric, lam_arr, allidx, settings)
            det, eigs = spectrum(block)
            err = float(np.max(block.error_estimates))
            if quantity == "det":
                return [det, err], ""
            return list(eigs) + [err], ""
        if quantity == "berry-connection":
            beta, resid, _naive, _err = berry_connection_result(
                psi, model.metric, idx[0], lam_arr, settings)
            return [beta, resid], ""
        if quantity == "berry-curvature":
            f, err = berry_curvature(psi, model.metric, idx[0], idx[1],
                                     lam_arr, settings, with_error=True)
            return [f, err], ""
        if quantity == "pv-vs-full":
            full = qgt_matrix(psi, model.metric, lam_arr, idx, settings)
            pv = provost_vallee_matrix(psi, model.metric, lam_arr, idx,
                                       settings)
            return [spectrum(full)[0], spectrum(pv)[0]], ""
        if quantity == "compare-orders":
            out = []
            for order in ("analytic", 1, 2):
                state = psi if order == "analytic" else \
                    perturbative_ground_state(model, order, lam_arr)
                block = qgt_matrix(state, model.metric, lam_arr, idx, settings)
                out.extend([block.entries[0, -1].real,
                            float(block.error_estimates[0, -1])])
            return out, ""
        raise ValueError(quantity)
    except (InadmissibleParameters, InvariantViolation, EvaluationError,
            ConvergenceError, ValueError) as exc:
        ncols = len(_point_columns(quantity, model.param_names, indices))
        reason = f"{type(exc).__name__}: {exc}".replace(",", ";")
        reason = " ".join(reason.split())
        return [math.nan] * ncols, reason


def _worker_count(n_points):
    env = os.environ.get("QGT_THREADS")
    if env:
        try:
            cap = max(1, int(env))
        except ValueError:
            cap = 1
    else:
        cap = os.cpu_count() or 1
    return max(1, min(cap, n_points))


def _format(value):
    if isinstance(value, float) and math.isnan(value):
        return "nan"
    return f"{value:.11e}"


def _provenance_lines(request):
    lines = [f"# curvedqgt {__version__}",
             f"# model = {request.model}",
             f"# quantity = {request.quantity}"]
    if request.indices:
        lines.append(f"# indices = {','.join(request.indices)}")
    for name, lo, hi, count in request.vary:
        lines.append(f"# vary = {name}={lo!r}:{hi!r}:{count}")
    for name in sorted(request.fixed):
        lines.append(f"# fix = {name}={request.fixed[name]!r}")
    s = request.settings
    lines.append(f"# settings = rel_tol={s.rel_tol!r} abs_tol={s.abs_tol!r} "
                 f"max_subdivisions={s.max_subdivisions} "
                 f"truncation_tail_tol={s.truncation_tail_tol!r}")
    if request.quantity == "compare-orders":
        lines.append(f"# orders = {','.join(str(o) for o in request.orders)}")
    return lines


def run_scan(request, progress=None):
    """Execute a scan request and write its CSV; returns the output path.

    Points are evaluated by a process pool capped by the ``QGT_THREADS``
    environment variable; rows are buffered and written in grid order, so
    the output is identical whatever the pool size.
    """
    model, lam_points = build_grid(request)
    out_dir = os.path.dirname(os.path.abspath(request.output))
    if not os.path.isdir(out_dir) or not os.access(out_dir, os.W_OK):
        raise ScanValidationError(f"out: cannot write to {out_dir!r}")

    tasks = [(model.name, lam, request.quantity, tuple(request.indices),
              _settings_tuple(request.settings)) for lam in lam_points]
    workers = _worker_count(len(tasks))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_evaluate_point, tasks, chunksize=4))
    else:
        results = [_evaluate_point(t) for t in tasks]

    vary_names = [entry[0] for entry in request.vary]
    value_cols = _point_columns(request.quantity, model.param_names,
                                request.indices)
    header = vary_names + value_cols + ["reason"]
    lines = _provenance_lines(request)
    lines.append(",".join(header))
    name_to_pos = {nm: model.param_index(nm) for nm in vary_names}
    for lam, (values, reason) in zip(lam_points, results):
        row = [_format(lam[name_to_pos[nm]]) for nm in vary_names]
        row += [_format(v) for v in values]
        row.append(reason)
        lines.append(",".join(row))
    with open(request.output, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    if request.emit_plot:
        _emit_plot_script(request, vary_names, value_cols)
    return request.output


def run_compare(request):
    """Analytic vs truncated-coupling comparison scan (sym-toda)."""
    if request.quantity not in ("component", "det"):
        request = ScanRequest(**{**request.__dict__, "quantity": "component"})
    req = ScanRequest(**{**request.__dict__, "quantity": "compare-orders"})
    return run_scan(req)


def _emit_plot_script(request, vary_names, value_cols):
    path = request.output + ".gp"
    csv = os.path.basename(request.output)
    col0 = len(vary_names) + 1
    with open(path, "w") as fh:
        fh.write("# gnuplot script generated alongside the scan\n")
        fh.write("set datafile separator ','\n")
        fh.write(f"set title '{request.model}: {request.quantity}'\n")
        if len(vary_names) == 2:
            fh.write(f"set xlabel '{vary_names[0]}'\n")
            fh.write(f"set ylabel '{vary_names[1]}'\n")
            fh.write("set dgrid3d\nset hidden3d\n")
            fh.write(f"splot '{csv}' using 1:2:{col0} with lines notitle\n")
        else:
            fh.write(f"set xlabel '{vary_names[0]}'\n")
            fh.write(f"plot '{csv}' using 1:{col0} with lines "
                     f"title '{value_cols[0]}'\n")
    return path


# ---------------------------------------------------------------------------
# invariant check suites


def _check_core(model, lam, settings, results):
    point = tuple(lam)
    rng = np.random.default_rng(11)
    from .models import sample_interior_points
    pts = sample_interior_points(model, lam, 8, rng)

    g = np.asarray(model.metric.eval(pts, lam))
    sym = float(np.max(np.abs(g[0, 1] - g[1, 0]))) if g.shape[0] > 1 else 0.0
    results.append(CheckResult("core", "metric-symmetric", point,
                               sym == 0.0, sym, 0.0))
    det = metric_det(model.metric, pts, lam)
    results.append(CheckResult("core", "metric-det-positive", point,
                               bool(np.all(det > 0)), float(np.min(det)),
                               0.0))

    # deformation vector against the finite-difference determinant route
    worst = 0.0
    for i in range(len(model.param_names)):
        sig = deformation_vector(model.metric, i, pts, lam)
        h = 1e-6 * (1.0 + abs(float(lam[i])))
        lp = np.array(lam, copy=True)
        lm = np.array(lam, copy=True)
        lp[i] += h
        lm[i] -= h
        fd = -(np.log(metric_det(model.metric, pts, lp))
               - np.log(metric_det(model.metric, pts, lm))) / (2.0 * h)
        scale = np.maximum(1.0, np.abs(sig))
        worst = max(worst, float(np.max(np.abs(sig - fd) / scale)))
    results.append(CheckResult("core", "sigma-det-identity", point,
                               worst < 1e-8, worst, 1e-8))

    psi = ground_state(model, lam)
    norm = inner_product_result(psi, psi, model.metric, lam, settings)
    results.append(CheckResult("core", "ground-norm", point,
                               abs(norm.value - 1.0) < 1e-8,
                               abs(norm.value - 1.0), 1e-8))

    # transformed-coordinate route against the configuration-space route
    if model.domain.transform is not None:
        from .qgt import _flat_view
        flat = _flat_view(model.domain)

        def rows(x):
            w = np.sqrt(metric_det(model.metric, x, lam))
            v = psi.eval(x, lam)
            return (np.conj(v) * v * w)[None, :]

        from .quadrature import integrate_curved_multi
        val, _, _ = integrate_curved_multi(
            rows, flat, None, lam,
            QuadratureSettings(rel_tol=1e-8, abs_tol=1e-10))
        diff = abs(complex(val[0]) - norm.value)
        results.append(CheckResult("core", "transform-consistency", point,
                                   diff < 1e-7, diff, 1e-7))

    for i in range(len(model.param_names)):
        resid = normalization_identity_residual(psi, model.metric, i, lam,
                                                settings)
        results.append(CheckResult(
            "core", f"normalization-identity-{model.param_names[i]}", point,
            resid < 1e-6, resid, 1e-6))
        sig_mean = sigma_expectation(psi, model.metric, i, lam, settings)
        results.append(CheckResult(
            "core", f"sigma-expectation-real-{model.param_names[i]}", point,
            True, sig_mean, math.nan,
            info="value reported; imaginary part checked internally"))

    indices = tuple(range(len(model.param_names)))
    block = qgt_matrix(psi, model.metric, lam, indices, settings)
    results.append(CheckResult("core", "qgt-hermiticity", point,
                               block.hermiticity_defect < 1e-5,
                               block.hermiticity_defect, 1e-5))
    oracle = dressed_qgt_matrix(psi, model.metric, lam, indices[:2])
    diff = float(np.max(np.abs(block.entries[:2, :2] - oracle.entries)))
    allow = 2.0 * float(np.max(block.error_estimates[:2, :2]
                               + oracle.error_estimates))
    results.append(CheckResult("core", "dressed-route-agreement", point,
                               diff <= allow, diff, allow))


def _check_berry(model, lam, settings, results):
    point = tuple(lam)
    psi = ground_state(model, lam)
    m = len(model.param_names)
    for i in range(m):
        beta, resid, naive, _ = berry_connection_result(
            psi, model.metric, i, lam, settings)
        results.append(CheckResult(
            "berry", f"berry-reality-{model.param_names[i]}", point,
            resid < 1e-6, resid, 1e-6))
        results.append(CheckResult(
            "berry", f"berry-bounded-by-overlap-{model.param_names[i]}",
            point, abs(beta) <= naive + 1e-12, abs(beta) - naive, 0.0,
            info=f"beta={beta:.6e} naive={naive:.6e}"))
    f01 = berry_curvature(psi, model.metric, 0, min(2, m - 1), lam, settings)
    f10 = berry_curvature(psi, model.metric, min(2, m - 1), 0, lam, settings)
    results.append(CheckResult("berry", "curvature-antisymmetry", point,
                               f01 + f10 == 0.0, abs(f01 + f10), 0.0))
    if model.name == "sym-toda":
        worst = 0.0
        for a in range(m):
            for b in range(a + 1, m):
                worst = max(worst, abs(berry_curvature(
                    psi, model.metric, a, b, lam, settings)))
        results.append(CheckResult("berry", "curvature-vanishes", point,
                                   worst < 2e-5, worst, 2e-5))
    # the ratio between the imaginary tensor part and the curvature is
    # reported, never asserted
    indices = (0, min(2, m - 1))
    block = qgt_matrix(psi, model.metric, lam, indices, settings)
    im_g = float(block.entries[0, 1].imag)
    results.append(CheckResult(
        "berry", "im-qgt-vs-curvature", point, True, math.nan, math.nan,
        info=f"Im G={im_g:.6e} F={f01:.6e} "
             f"ratio={im_g / f01 if f01 else math.nan:.6e}"))


def _check_zanardi(model, lam, settings, results, truncation=20):
    from .perturbation import build_basis, zanardi_qgt
    point = tuple(lam)
    flat = get_model("flat-coupled")
    flam = np.array([1.0, 1.0])
    basis = build_basis(flat, truncation, flam)
    dev = float(np.max(np.abs(basis.gram - np.eye(basis.size))))
    results.append(CheckResult("zanardi", "flat-gram-identity", point,
                               dev < 1e-10, dev, 1e-10))
    k, kap = flam
    wm2 = k + 2.0 * kap
    exact = {(0, 0): 1.0 / (32.0 * k * k) + 1.0 / (32.0 * wm2 * wm2),
             (0, 1): 1.0 / (16.0 * wm2 * wm2),
             (1, 1): 1.0 / (8.0 * wm2 * wm2)}
    worst = 0.0
    for (a, b), ref in exact.items():
        val = zanardi_qgt(basis, 0, a, b).value
        worst = max(worst, abs(val - ref))
    results.append(CheckResult("zanardi", "flat-benchmark", point,
                               worst < 1e-4, worst, 1e-4,
                               info=f"truncation={truncation}"))

    if model.apply_gauge is None and model.name != "flat-coupled":
        mb = build_basis(model, 6, lam)
        results.append(CheckResult(
            "zanardi", "gram-condition", point, True, mb.gram_condition,
            math.nan, info="reported, not asserted"))
        res = zanardi_qgt(mb, 0, 0, 0)
        psi = ground_state(model, lam)
        direct = qgt_matrix(psi, model.metric, lam, (0,), settings)
        ref = float(direct.entries[0, 0].real)
        rel = abs(res.value.real - ref) / max(abs(ref), 1e-30)
        results.append(CheckResult(
            "zanardi", "matches-direct-tensor", point, rel < 0.05, rel, 0.05,
            info=f"mode={res.term_groups['mode']}"))


def run_check(model_name, points, suite, settings=None, truncation=20):
    """Run an invariant suite at the given parameter points."""
    if suite not in SUITES:
        raise ScanValidationError(f"suite: unknown suite {suite!r}")
    model = get_model(model_name)
    settings = settings or QuadratureSettings()
    results = []
    for lam in points:
        lam = model.check_admissible(lam)
        if suite == "core":
            _check_core(model, lam, settings, results)
        elif suite == "berry":
            _check_berry(model, lam, settings, results)
        else:
            _check_zanardi(model, lam, settings, results,
                           truncation=truncation)
    return results
