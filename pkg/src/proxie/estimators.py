"""Average treatment effect estimators.

Comparators that assume no unmeasured confounding (:func:`naive_or`,
:func:`naive_ipw`) sit next to the proximal estimators: g-computation
through an outcome bridge (:func:`proximal_g`), its two-stage least squares
form (:func:`two_stage_linear`), weighting through a treatment bridge
(:func:`proximal_ipw`), the doubly robust combination (:func:`proximal_dr`)
and the saturated all-binary estimator (:func:`saturated_binary`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Union

import numpy as np
from scipy.special import expit

from .bridges import (
    OutcomeBridgeSpec,
    TreatmentBridgeSpec,
    check_logit_outcome,
    design_matrix,
    eval_h,
    eval_q,
    h_contrast,
    outcome_bridge_moments,
    q_weighted_outcome,
    treatment_bridge_moments,
)
from .datamodel import Dataset
from .errors import (
    CellSupportError,
    InferenceUnreliableError,
    NearSingularityError,
    ProxieError,
    RankDeficiencyError,
    ValidationError,
)
from .moments import (
    COND_LIMIT,
    GmmConfig,
    GmmResult,
    MomentSystem,
    append_mean_parameter,
    gmm_vcov,
    ols_system,
    sandwich_vcov,
    scaled_condition,
    solve_gmm,
)

Z975 = 1.959963984540054
POSITIVITY_EPS = 1e-6
SATURATED_DET_MIN = 1e-8


@dataclass
class EstimateResult:
    estimator: str
    ate_hat: float
    se: Optional[float] = None
    ci_low: Optional[float] = None
    ci_high: Optional[float] = None
    converged: bool = True
    diagnostics: dict = field(default_factory=dict)
    n: Optional[int] = None


@dataclass(frozen=True)
class BootstrapConfig:
    replicates: int = 200
    seed: int = 0
    ci_method: str = "percentile"

    def __post_init__(self):
        if int(self.replicates) != self.replicates or self.replicates < 1:
            raise ValueError("replicates must be a positive integer")
        if self.ci_method not in ("percentile", "normal"):
            raise ValueError(f"unknown ci_method {self.ci_method!r}")


def _wald(name, est, se, n, converged=True, diagnostics=None):
    return EstimateResult(
        estimator=name,
        ate_hat=float(est),
        se=float(se),
        ci_low=float(est - Z975 * se),
        ci_high=float(est + Z975 * se),
        converged=converged,
        diagnostics=diagnostics or {},
        n=n,
    )


def _gmm_diag(res: GmmResult, prefix=""):
    return {
        f"{prefix}iterations": res.iterations,
        f"{prefix}condition": res.condition,
        f"{prefix}moment_norm": res.moment_norm,
        f"{prefix}solver": res.solver,
    }


def _stacked_vcov(data, stacked: MomentSystem, theta, config: GmmConfig):
    if stacked.dim_moments == stacked.dim_theta:
        return sandwich_vcov(data, stacked, theta)
    m = stacked.dim_moments - 1
    omega = np.zeros((m + 1, m + 1))
    omega[:m, :m] = config.omega(m)
    omega[m, m] = 1.0
    return gmm_vcov(data, stacked, theta, omega)


# ---------------------------------------------------------------------------
# comparators that ignore the proxies


def naive_or(data: Dataset) -> EstimateResult:
    """Coefficient of ``A`` in the least-squares fit of ``Y`` on ``(1, A, X)``."""
    roles = data.roles
    system = ols_system(roles.outcome, (roles.treatment,) + roles.covariates)
    res = solve_gmm(data, system, GmmConfig(solver="direct_linear"))
    se = math.sqrt(max(res.vcov[1, 1], 0.0))
    return _wald("naive_or", res.theta_hat[1], se, data.n, diagnostics=_gmm_diag(res))


def _logistic_system(treatment, covariates):
    def design(data):
        return np.column_stack([np.ones(data.n), data.matrix(covariates)])

    def residual(data, beta):
        d = design(data)
        return (data[treatment] - expit(d @ beta))[:, None] * d

    def jacobian(data, beta):
        d = design(data)
        p = expit(d @ beta)
        w = p * (1 - p)
        return -(w[:, None] * d)[:, :, None] * d[:, None, :]

    def mean_jacobian(data, beta):
        d = design(data)
        p = expit(d @ beta)
        return -(d.T @ ((p * (1 - p))[:, None] * d)) / data.n

    k = 1 + len(covariates)
    return MomentSystem(k, k, residual, jacobian, label="logistic propensity",
                        mean_jacobian=mean_jacobian)


def propensity_system(data: Dataset) -> MomentSystem:
    """Logistic score equations for ``P(A = 1 | X)``."""
    return _logistic_system(data.roles.treatment, data.roles.covariates)


def _ipw_point(data: Dataset) -> EstimateResult:
    roles = data.roles
    res = solve_gmm(data, propensity_system(data))
    d = np.column_stack([np.ones(data.n), data.matrix(roles.covariates)])
    e = expit(d @ res.theta_hat)
    a, y = data.a, data.y
    ate = float(np.mean(a * y / e - (1 - a) * y / (1 - e)))
    diag = _gmm_diag(res)
    diag["min_propensity"] = float(e.min())
    diag["max_propensity"] = float(e.max())
    outside = int(np.sum((e < POSITIVITY_EPS) | (e > 1 - POSITIVITY_EPS)))
    if outside:
        diag["positivity_warning"] = f"{outside} fitted propensities outside (1e-6, 1-1e-6)"
    return EstimateResult("naive_ipw", ate, converged=res.converged, diagnostics=diag, n=data.n)


def naive_ipw(
    data: Dataset, bootstrap_config: Optional[BootstrapConfig] = BootstrapConfig()
) -> EstimateResult:
    """Horvitz-Thompson estimate with a logistic propensity on ``(1, X)``.

    The standard error comes from the bootstrap; pass
    ``bootstrap_config=None`` to skip it.
    """
    point = _ipw_point(data)
    if bootstrap_config is None:
        return point
    return _merge_bootstrap(point, bootstrap(data, _ipw_point, bootstrap_config))


# ---------------------------------------------------------------------------
# outcome bridge


def fit_outcome_bridge(data: Dataset, h_spec: OutcomeBridgeSpec, config: Optional[GmmConfig] = None):
    """Solve the outcome-bridge moments; returns ``(system, GmmResult)``."""
    config = config or GmmConfig()
    if h_spec.link == "logit":
        check_logit_outcome(data)
    system = outcome_bridge_moments(h_spec, data.roles)
    solver = config.solver or ("direct_linear" if system.linear else "gauss_newton")
    if solver == "gauss_newton" and config.theta0 is None and h_spec.link == "identity":
        x = design_matrix(data, h_spec.basis)
        warm = np.linalg.lstsq(x, data.y, rcond=None)[0]
        config = replace(config, theta0=warm)
    return system, solve_gmm(data, system, config)


def proximal_g(
    data: Dataset,
    h_spec: Optional[OutcomeBridgeSpec] = None,
    config: Optional[GmmConfig] = None,
) -> EstimateResult:
    """Proximal g-computation ``P_n[h(W,1,X) - h(W,0,X)]`` with sandwich SE.

    The bridge moments are stacked with the g-computation moment, so the
    standard error accounts for estimating ``eta``.
    """
    h_spec = h_spec or OutcomeBridgeSpec.default(data.roles)
    config = config or GmmConfig()
    system, res = fit_outcome_bridge(data, h_spec, config)
    eta = res.theta_hat
    contribution, gradient = h_contrast(h_spec)
    tau = float(np.mean(contribution(data, eta)))
    stacked = append_mean_parameter(system, contribution, gradient)
    theta = np.append(eta, tau)
    diag = _gmm_diag(res)
    diag["eta"] = [float(v) for v in eta]
    try:
        vcov = _stacked_vcov(data, stacked, theta, config)
        se = math.sqrt(max(vcov[-1, -1], 0.0))
    except RankDeficiencyError as exc:
        if res.converged:
            raise
        diag["warning"] = str(exc)
        return EstimateResult("proximal_g", tau, converged=False, diagnostics=diag, n=data.n)
    return _wald("proximal_g", tau, se, data.n, res.converged, diag)


def two_stage_system(data: Dataset) -> MomentSystem:
    """Stacked first- and second-stage least-squares equations.

    Parameters are the first-stage coefficients for each ``W_j`` on
    ``D = (1, Z, A, X)`` followed by the second-stage coefficients on
    ``F = (1, W_hat, A, X)``.
    """
    roles = data.roles
    w_names = roles.outcome_proxies
    d_names = ("1",) + roles.treatment_proxies + (roles.treatment,) + roles.covariates
    r, d = len(w_names), len(d_names)
    f = 1 + r + 1 + len(roles.covariates)
    p = r * d + f

    def parts(data, theta):
        dmat = design_matrix(data, d_names)
        thetas = theta[: r * d].reshape(r, d)
        eta = theta[r * d:]
        w_hat = dmat @ thetas.T
        fmat = np.column_stack(
            [np.ones(data.n), w_hat, data.a, data.matrix(roles.covariates)]
        )
        return dmat, thetas, eta, w_hat, fmat

    def residual(data, theta):
        dmat, thetas, eta, w_hat, fmat = parts(data, theta)
        w = data.matrix(w_names)
        first = ((w - w_hat)[:, :, None] * dmat[:, None, :]).reshape(data.n, r * d)
        e = data.y - fmat @ eta
        return np.column_stack([first, e[:, None] * fmat])

    def jacobian(data, theta):
        dmat, thetas, eta, w_hat, fmat = parts(data, theta)
        n = data.n
        e = data.y - fmat @ eta
        out = np.zeros((n, p, p))
        ddt = dmat[:, :, None] * dmat[:, None, :]
        for j in range(r):
            sl = slice(j * d, (j + 1) * d)
            out[:, sl, sl] = -ddt
            block = -eta[1 + j] * fmat[:, :, None] * dmat[:, None, :]
            block[:, 1 + j, :] += e[:, None] * dmat
            out[:, r * d:, sl] = block
        out[:, r * d:, r * d:] = -fmat[:, :, None] * fmat[:, None, :]
        return out

    def mean_jacobian(data, theta):
        dmat, thetas, eta, w_hat, fmat = parts(data, theta)
        n = data.n
        e = data.y - fmat @ eta
        out = np.zeros((p, p))
        dtd = dmat.T @ dmat / n
        for j in range(r):
            sl = slice(j * d, (j + 1) * d)
            out[sl, sl] = -dtd
            block = -eta[1 + j] * (fmat.T @ dmat) / n
            block[1 + j, :] += e @ dmat / n
            out[r * d:, sl] = block
        out[r * d:, r * d:] = -(fmat.T @ fmat) / n
        return out

    return MomentSystem(p, p, residual, jacobian, label="two-stage linear",
                        mean_jacobian=mean_jacobian)


def _lstsq_stage(x, y, stage):
    cond = scaled_condition(x)
    if cond > math.sqrt(COND_LIMIT) * 1e2:
        raise RankDeficiencyError(
            f"{stage}: design matrix is rank deficient (condition estimate {cond:.3g})",
            condition=cond,
        )
    return np.linalg.solve(x.T @ x, x.T @ y)


def two_stage_linear(data: Dataset) -> EstimateResult:
    """Regress each ``W`` on ``(1, Z, A, X)``, then ``Y`` on ``(1, W_hat, A, X)``.

    The ATE is the coefficient of ``A`` in the second stage; its standard
    error comes from the sandwich of both stages stacked.
    """
    roles = data.roles
    d_names = ("1",) + roles.treatment_proxies + (roles.treatment,) + roles.covariates
    dmat = design_matrix(data, d_names)
    w = data.matrix(roles.outcome_proxies)
    thetas = _lstsq_stage(dmat, w, "stage 1").T
    w_hat = dmat @ thetas.T
    fmat = np.column_stack([np.ones(data.n), w_hat, data.a, data.matrix(roles.covariates)])
    eta = _lstsq_stage(fmat, data.y, "stage 2")
    theta = np.concatenate([thetas.reshape(-1), eta])
    system = two_stage_system(data)
    vcov = sandwich_vcov(data, system, theta)
    idx = thetas.size + 1 + len(roles.outcome_proxies)
    se = math.sqrt(max(vcov[idx, idx], 0.0))
    diag = {"eta": [float(v) for v in eta]}
    return _wald("two_stage_linear", eta[1 + len(roles.outcome_proxies)], se, data.n, True, diag)


# ---------------------------------------------------------------------------
# treatment bridge


def fit_treatment_bridge(
    data: Dataset, q_spec: TreatmentBridgeSpec, config: Optional[GmmConfig] = None
):
    """Solve the treatment-bridge moments; returns ``(system, GmmResult)``."""
    system = treatment_bridge_moments(q_spec, data.roles)
    return system, solve_gmm(data, system, config or GmmConfig())


def _q_diagnostics(data, q_spec, phi):
    diag: dict = {}
    q = eval_q(q_spec, data, phi, diagnostics=diag)
    a = data.a
    diag["min_q"] = float(q.min())
    diag["max_q"] = float(q.max())
    diag["mean_Aq"] = float(np.mean(a * q))
    diag["mean_1mAq"] = float(np.mean((1 - a) * q))
    return q, diag


def proximal_ipw(
    data: Dataset,
    q_spec: Optional[TreatmentBridgeSpec] = None,
    config: Optional[GmmConfig] = None,
) -> EstimateResult:
    """Proximal weighting ``P_n[(-1)^(1-A) Y q(Z, A, X)]`` with sandwich SE."""
    q_spec = q_spec or TreatmentBridgeSpec.default(data.roles)
    config = config or GmmConfig()
    system, res = fit_treatment_bridge(data, q_spec, config)
    phi = res.theta_hat
    contribution, gradient = q_weighted_outcome(q_spec)
    tau = float(np.mean(contribution(data, phi)))
    _, diag = _q_diagnostics(data, q_spec, phi)
    diag.update(_gmm_diag(res))
    diag["phi"] = [float(v) for v in phi]
    stacked = append_mean_parameter(system, contribution, gradient)
    try:
        vcov = _stacked_vcov(data, stacked, np.append(phi, tau), config)
        se = math.sqrt(max(vcov[-1, -1], 0.0))
    except RankDeficiencyError as exc:
        if res.converged:
            raise
        diag["warning"] = str(exc)
        return EstimateResult("proximal_ipw", tau, converged=False, diagnostics=diag, n=data.n)
    return _wald("proximal_ipw", tau, se, data.n, res.converged, diag)


# ---------------------------------------------------------------------------
# doubly robust


def _dr_point(data, h_spec, q_spec, config):
    _, hres = fit_outcome_bridge(data, h_spec, config)
    _, qres = fit_treatment_bridge(data, q_spec, config)
    eta, phi = hres.theta_hat, qres.theta_hat
    q, diag = _q_diagnostics(data, q_spec, phi)
    s = 2.0 * data.a - 1.0
    h = eval_h(h_spec, data, eta)
    summand = s * q * (data.y - h) + eval_h(h_spec, data, eta, a=1) - eval_h(h_spec, data, eta, a=0)
    diag.update(_gmm_diag(hres, "h_"))
    diag.update(_gmm_diag(qres, "q_"))
    diag["eta"] = [float(v) for v in eta]
    diag["phi"] = [float(v) for v in phi]
    converged = hres.converged and qres.converged
    if not converged:
        diag["warning"] = "a bridge fit did not converge"
    return summand, converged, diag


def proximal_dr(
    data: Dataset,
    h_spec: Optional[OutcomeBridgeSpec] = None,
    q_spec: Optional[TreatmentBridgeSpec] = None,
    config: Optional[GmmConfig] = None,
    bootstrap_config: Optional[BootstrapConfig] = None,
) -> EstimateResult:
    """Doubly robust estimate combining both bridges.

    The standard error is the sample standard deviation of the per-row
    summand divided by ``sqrt(n)``; with ``bootstrap_config`` the bootstrap
    SE and CI replace it.
    """
    h_spec = h_spec or OutcomeBridgeSpec.default(data.roles)
    q_spec = q_spec or TreatmentBridgeSpec.default(data.roles)
    summand, converged, diag = _dr_point(data, h_spec, q_spec, config)
    tau = float(summand.mean())
    se = float(summand.std(ddof=1) / math.sqrt(data.n)) if data.n > 1 else 0.0
    point = _wald("proximal_dr", tau, se, data.n, converged, diag)
    if bootstrap_config is None:
        return point

    def one(d):
        s, conv, _ = _dr_point(d, h_spec, q_spec, config)
        return EstimateResult("proximal_dr", float(s.mean()), converged=conv)

    return _merge_bootstrap(point, bootstrap(data, one, bootstrap_config))


# ---------------------------------------------------------------------------
# saturated binary


def solve_saturated_cell(psi, y) -> np.ndarray:
    """``h = psi^-1 y`` for one ``(a, x)`` cell, refusing near-singular ``psi``."""
    psi = np.asarray(psi, dtype=float)
    y = np.asarray(y, dtype=float)
    det = psi[0, 0] * psi[1, 1] - psi[0, 1] * psi[1, 0]
    if abs(det) < SATURATED_DET_MIN:
        raise NearSingularityError(
            f"|det psi| = {abs(det):.3g} < {SATURATED_DET_MIN:g}: proxies carry too little "
            "information to solve for the bridge (completeness failure)"
        )
    inv = np.array([[psi[1, 1], -psi[0, 1]], [-psi[1, 0], psi[0, 0]]]) / det
    return inv @ y


def _require_binary(data, names, what):
    for name in names:
        col = data[name]
        if not np.all((col == 0) | (col == 1)):
            raise ValidationError(f"saturated_binary requires binary {what}; column {name!r} is not 0/1")


def saturated_fit(data: Dataset) -> dict:
    """Cell-frequency estimates of ``psi_ax`` and ``y_ax`` and the solved bridges.

    Returns ``{"h": array[a, xcode, w], "cells": {(a, xcode): (psi, y)}}``.
    """
    roles = data.roles
    if len(roles.treatment_proxies) != 1 or len(roles.outcome_proxies) != 1:
        raise ValidationError("saturated_binary needs exactly one Z and one W column")
    _require_binary(data, (roles.outcome,), "outcome")
    _require_binary(data, roles.covariates, "covariates")
    _require_binary(data, roles.treatment_proxies + roles.outcome_proxies, "proxies")
    a = data.a.astype(int)
    z = data[roles.treatment_proxies[0]].astype(int)
    w = data[roles.outcome_proxies[0]].astype(int)
    p = len(roles.covariates)
    xcode = np.zeros(data.n, dtype=int)
    for j, name in enumerate(roles.covariates):
        xcode += data[name].astype(int) << j
    nx = 1 << p
    code = ((a * nx + xcode) * 2 + z) * 2 + w
    counts = np.bincount(code, minlength=4 * 2 * nx).reshape(2, nx, 2, 2)
    ysum = np.bincount(code, weights=data.y, minlength=4 * 2 * nx).reshape(2, nx, 2, 2)
    nz = counts.sum(axis=3)
    empty = [
        {"a": av, "x": xv, "z": zv}
        for av in range(2)
        for xv in range(nx)
        for zv in range(2)
        if nz[av, xv, zv] == 0
    ]
    if empty:
        raise CellSupportError(f"empty (a, x, z) cells: {empty}", cells=empty)
    h = np.empty((2, nx, 2))
    cells = {}
    for av in range(2):
        for xv in range(nx):
            psi = counts[av, xv] / nz[av, xv][:, None]
            yv = ysum[av, xv].sum(axis=1) / nz[av, xv]
            try:
                h[av, xv] = solve_saturated_cell(psi, yv)
            except NearSingularityError as exc:
                raise NearSingularityError(f"cell (a={av}, x={xv}): {exc}") from None
            cells[(av, xv)] = (psi, yv)
    return {"h": h, "cells": cells, "xcode": xcode, "w": w}


def _saturated_point(data: Dataset) -> EstimateResult:
    fit = saturated_fit(data)
    h, xcode, w = fit["h"], fit["xcode"], fit["w"]
    ate = float(np.mean(h[1, xcode, w] - h[0, xcode, w]))
    diag = {"h": h.tolist()}
    return EstimateResult("saturated_binary", ate, diagnostics=diag, n=data.n)


def saturated_binary(
    data: Dataset, bootstrap_config: Optional[BootstrapConfig] = BootstrapConfig()
) -> EstimateResult:
    """Nonparametric estimate for all-binary data via per-cell 2x2 inversion."""
    point = _saturated_point(data)
    if bootstrap_config is None:
        return point
    return _merge_bootstrap(point, bootstrap(data, _saturated_point, bootstrap_config))


# ---------------------------------------------------------------------------
# bootstrap


def bootstrap(
    data: Dataset,
    estimator: Callable[[Dataset], Union[EstimateResult, float]],
    config: BootstrapConfig,
) -> EstimateResult:
    """Nonparametric row bootstrap.

    Replicate ``b`` resamples rows with its own generator spawned from
    ``SeedSequence(config.seed)``. Replicates that raise or report
    ``converged=False`` are dropped and counted; more than 20% dropped
    raises :class:`InferenceUnreliableError`.
    """

    def run(d):
        out = estimator(d)
        if isinstance(out, EstimateResult):
            return out.ate_hat, out.converged, out.estimator
        return float(out), True, getattr(estimator, "__name__", "estimator")

    point, point_conv, name = run(data)
    children = np.random.SeedSequence(config.seed).spawn(config.replicates)
    values = []
    failed = 0
    for child in children:
        rng = np.random.Generator(np.random.PCG64(child))
        idx = rng.integers(0, data.n, size=data.n)
        try:
            est, conv, _ = run(data.take(idx))
        except (ProxieError, np.linalg.LinAlgError, FloatingPointError):
            failed += 1
            continue
        if not conv or not math.isfinite(est):
            failed += 1
            continue
        values.append(est)
    if failed > 0.2 * config.replicates:
        raise InferenceUnreliableError(
            f"{failed} of {config.replicates} bootstrap replicates failed or did not converge"
        )
    values = np.asarray(values)
    se = float(values.std(ddof=1)) if values.size > 1 else 0.0
    if config.ci_method == "percentile":
        lo, hi = (float(v) for v in np.quantile(values, [0.025, 0.975]))
    else:
        lo, hi = point - Z975 * se, point + Z975 * se
    return EstimateResult(
        estimator=name,
        ate_hat=float(point),
        se=se,
        ci_low=lo,
        ci_high=hi,
        converged=point_conv,
        diagnostics={
            "bootstrap_replicates": config.replicates,
            "bootstrap_failed": failed,
            "bootstrap_ci": config.ci_method,
        },
        n=data.n,
    )


def _merge_bootstrap(point: EstimateResult, boot: EstimateResult) -> EstimateResult:
    diag = dict(point.diagnostics)
    diag.update(boot.diagnostics)
    return replace(point, se=boot.se, ci_low=boot.ci_low, ci_high=boot.ci_high, diagnostics=diag)


ESTIMATORS = {
    "naive_or": naive_or,
    "naive_ipw": naive_ipw,
    "proximal_g": proximal_g,
    "two_stage_linear": two_stage_linear,
    "proximal_ipw": proximal_ipw,
    "proximal_dr": proximal_dr,
    "saturated_binary": saturated_binary,
}
