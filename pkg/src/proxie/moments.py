"""Estimating-equation / GMM engine.

A :class:`MomentSystem` bundles a row-wise residual ``f(D_i, theta)`` and its
analytic Jacobian. :func:`solve_gmm` minimises ``G_n' Omega G_n`` where
``G_n(theta)`` is the sample mean of the residuals, either by a direct
linear solve or by damped Gauss-Newton, and attaches the sandwich
covariance. All residual and Jacobian callables are vectorised over rows:
given a :class:`~proxie.datamodel.Dataset` with ``n`` rows they return
arrays of shape ``(n, m)`` and ``(n, m, p)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .datamodel import Dataset
from .errors import EvaluationError, IdentificationError, RankDeficiencyError

#: Condition-number threshold above which a linear system counts as singular.
COND_LIMIT = 1e12

Residual = Callable[[Dataset, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class MomentSystem:
    """Vector-valued estimating function with analytic Jacobian.

    ``mean_jacobian`` is an optional shortcut returning the ``(m, p)`` sample
    mean of the per-row Jacobians without materialising the ``(n, m, p)``
    array; when absent it is computed from ``jacobian``.
    """

    dim_theta: int
    dim_moments: int
    residual: Residual
    jacobian: Residual
    label: str = ""
    linear: bool = False
    mean_jacobian: Optional[Residual] = None
    param_names: tuple = ()
    moment_names: tuple = ()

    def __post_init__(self):
        if self.dim_moments < self.dim_theta:
            raise IdentificationError(
                f"{self.label or 'moment system'}: {self.dim_moments} moments for "
                f"{self.dim_theta} parameters (deficit {self.dim_theta - self.dim_moments})"
            )

    def mean_residual(self, data: Dataset, theta) -> np.ndarray:
        return self.residual(data, np.asarray(theta, dtype=float)).mean(axis=0)

    def mean_jac(self, data: Dataset, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if self.mean_jacobian is not None:
            return self.mean_jacobian(data, theta)
        return self.jacobian(data, theta).mean(axis=0)


@dataclass
class GmmConfig:
    """Solver settings.

    ``solver=None`` picks ``direct_linear`` for systems flagged linear and
    ``gauss_newton`` otherwise.
    """

    weighting: Union[str, np.ndarray] = "identity"
    solver: Optional[str] = None
    max_iter: int = 200
    tol: float = 1e-8
    theta0: Optional[Sequence[float]] = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.solver not in (None, "direct_linear", "gauss_newton"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if not isinstance(self.weighting, str):
            w = np.asarray(self.weighting, dtype=float)
            if w.ndim != 2 or w.shape[0] != w.shape[1]:
                raise ValueError("weighting matrix must be square")
            if not np.allclose(w, w.T, atol=1e-12 * max(1.0, np.abs(w).max())):
                raise ValueError("weighting matrix must be symmetric")
            if np.linalg.eigvalsh(w).min() < -1e-10 * max(1.0, np.abs(w).max()):
                raise ValueError("weighting matrix must be positive semidefinite")
            self.weighting = w
        elif self.weighting != "identity":
            raise ValueError(f"unknown weighting {self.weighting!r}")

    def omega(self, m: int) -> np.ndarray:
        if isinstance(self.weighting, str):
            return np.eye(m)
        if self.weighting.shape != (m, m):
            raise ValueError(f"weighting matrix must be {m}x{m}")
        return self.weighting


@dataclass
class GmmResult:
    theta_hat: np.ndarray
    objective: float
    converged: bool
    iterations: int
    bread: np.ndarray
    meat: np.ndarray
    vcov: np.ndarray
    moment_norm: float = np.nan
    condition: float = np.nan
    solver: str = ""
    history: list = field(default_factory=list)
    message: str = ""

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.vcov), 0.0, None))


def scaled_condition(mat: np.ndarray) -> float:
    """2-norm condition number after equilibrating rows and columns."""
    mat = np.asarray(mat, dtype=float)
    if mat.size == 0:
        return 1.0
    c = np.linalg.norm(mat, axis=0)
    r = np.linalg.norm(mat, axis=1)
    if np.any(c == 0) or np.any(r == 0):
        return np.inf
    scaled = mat / c / r[:, None]
    s = np.linalg.svd(scaled, compute_uv=False)
    if s[-1] == 0 or not np.isfinite(s[-1]):
        return np.inf
    return float(s[0] / s[-1])


def _objective(g: np.ndarray, omega: np.ndarray) -> float:
    with np.errstate(over="ignore"):
        return float(g @ omega @ g)


def _gmm_vcov(bread, meat, omega, n):
    m = bread.T @ omega @ bread
    h = np.linalg.solve(m, bread.T @ omega)
    v = h @ meat @ h.T / n
    return (v + v.T) / 2


def _meat(f: np.ndarray) -> np.ndarray:
    return f.T @ f / f.shape[0]


def _check_finite(arr, label, what="residual"):
    if not np.all(np.isfinite(arr)):
        raise EvaluationError(f"{label or 'moment system'}: non-finite {what}")


def solve_gmm(
    data: Dataset, system: MomentSystem, config: Optional[GmmConfig] = None
) -> GmmResult:
    """Estimate ``theta`` from the moment system and attach sandwich covariance.

    Rank deficiency of a directly solved linear system raises
    :class:`RankDeficiencyError`; hitting the Gauss-Newton iteration cap
    returns a result with ``converged=False``.
    """
    config = config or GmmConfig()
    p, m = system.dim_theta, system.dim_moments
    omega = config.omega(m)
    solver = config.solver or ("direct_linear" if system.linear else "gauss_newton")
    if solver == "direct_linear" and not system.linear:
        raise ValueError(f"{system.label}: direct_linear requires a linear moment system")

    if solver == "direct_linear":
        zero = np.zeros(p)
        g0 = system.mean_residual(data, zero)
        jac = system.mean_jac(data, zero)
        _check_finite(g0, system.label)
        lhs = jac if m == p else jac.T @ omega @ jac
        rhs = -g0 if m == p else -(jac.T @ omega @ g0)
        cond = scaled_condition(lhs)
        if cond > COND_LIMIT:
            raise RankDeficiencyError(
                f"{system.label}: singular linear system (condition estimate {cond:.3g})",
                condition=cond,
            )
        theta = np.linalg.solve(lhs, rhs)
        f = system.residual(data, theta)
        g = f.mean(axis=0)
        scale = max(1.0, float(np.linalg.norm(np.abs(f).mean(axis=0))))
        meat = _meat(f)
        vcov = _gmm_vcov(jac, meat, omega, data.n)
        obj = _objective(g, omega)
        return GmmResult(
            theta_hat=theta,
            objective=obj,
            converged=True,
            iterations=1,
            bread=jac,
            meat=meat,
            vcov=vcov,
            moment_norm=float(np.linalg.norm(g)) / scale,
            condition=cond,
            solver=solver,
            history=[obj],
        )

    theta = np.zeros(p) if config.theta0 is None else np.array(config.theta0, dtype=float)
    if theta.shape != (p,):
        raise ValueError(f"theta0 must have length {p}")
    g = system.mean_residual(data, theta)
    _check_finite(g, system.label)
    obj = _objective(g, omega)
    history = [obj]
    converged = False
    message = "iteration cap reached"
    it = 0
    cond = np.nan
    for it in range(1, config.max_iter + 1):
        jac = system.mean_jac(data, theta)
        _check_finite(jac, system.label, "jacobian")
        grad = 2.0 * jac.T @ omega @ g
        if np.linalg.norm(grad) <= config.tol:
            converged, message = True, "gradient tolerance reached"
            it -= 1
            break
        normal = jac.T @ omega @ jac
        cond = scaled_condition(normal)
        if cond > COND_LIMIT:
            step = -grad
        else:
            step = np.linalg.solve(normal, -(jac.T @ omega @ g))
        t = 1.0
        accepted = False
        for _ in range(60):
            cand = theta + t * step
            g_new = system.mean_residual(data, cand)
            if np.all(np.isfinite(g_new)):
                obj_new = _objective(g_new, omega)
                if obj_new <= obj:
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            message = "line search failed to decrease the objective"
            break
        moved = np.linalg.norm(cand - theta)
        theta, g, obj = cand, g_new, obj_new
        history.append(obj)
        if moved <= 1e-15 * (1.0 + np.linalg.norm(theta)):
            message = "step below machine precision"
            break
    else:
        it = config.max_iter

    jac = system.mean_jac(data, theta)
    grad_norm = float(np.linalg.norm(2.0 * jac.T @ omega @ g))
    if not converged and grad_norm <= config.tol:
        converged, message = True, "gradient tolerance reached"
    f = system.residual(data, theta)
    meat = _meat(f)
    try:
        if scaled_condition(jac.T @ omega @ jac) > COND_LIMIT:
            raise np.linalg.LinAlgError
        vcov = _gmm_vcov(jac, meat, omega, data.n)
    except np.linalg.LinAlgError:
        vcov = np.full((p, p), np.nan)
        converged = False
        message = "singular bread matrix at the final iterate"
    scale = max(1.0, float(np.linalg.norm(np.abs(f).mean(axis=0))))
    return GmmResult(
        theta_hat=theta,
        objective=obj,
        converged=converged,
        iterations=it,
        bread=jac,
        meat=meat,
        vcov=vcov,
        moment_norm=float(np.linalg.norm(g)) / scale,
        condition=float(cond),
        solver="gauss_newton",
        history=history,
        message=message,
    )


def sandwich_vcov(data: Dataset, system: MomentSystem, theta_hat) -> np.ndarray:
    """``A^-1 B A^-T / n`` for an exactly identified system.

    ``A`` is the mean Jacobian and ``B`` the mean outer product of the
    residuals, both with divisor ``n``.
    """
    if system.dim_moments != system.dim_theta:
        raise IdentificationError(
            f"{system.label}: sandwich_vcov needs an exactly identified system "
            f"({system.dim_moments} moments, {system.dim_theta} parameters)"
        )
    theta_hat = np.asarray(theta_hat, dtype=float)
    bread = system.mean_jac(data, theta_hat)
    cond = scaled_condition(bread)
    if cond > COND_LIMIT:
        raise RankDeficiencyError(
            f"{system.label}: singular bread matrix (condition estimate {cond:.3g})",
            condition=cond,
        )
    f = system.residual(data, theta_hat)
    _check_finite(f, system.label)
    ainv = np.linalg.inv(bread)
    v = ainv @ _meat(f) @ ainv.T / data.n
    return (v + v.T) / 2


def gmm_vcov(data: Dataset, system: MomentSystem, theta_hat, weighting=None) -> np.ndarray:
    """GMM sandwich ``H S H' / n`` with ``H = (G' W G)^-1 G' W``.

    Reduces to :func:`sandwich_vcov` for exactly identified systems.
    """
    theta_hat = np.asarray(theta_hat, dtype=float)
    omega = np.eye(system.dim_moments) if weighting is None else np.asarray(weighting, float)
    bread = system.mean_jac(data, theta_hat)
    cond = scaled_condition(bread.T @ omega @ bread)
    if cond > COND_LIMIT:
        raise RankDeficiencyError(
            f"{system.label}: singular GMM bread (condition estimate {cond:.3g})",
            condition=cond,
        )
    f = system.residual(data, theta_hat)
    _check_finite(f, system.label)
    return _gmm_vcov(bread, _meat(f), omega, data.n)


def check_jacobian(system: MomentSystem, row: Dataset, theta) -> float:
    """Worst relative error of the analytic Jacobian against central differences.

    The error is ``max|J_analytic - J_fd| / max|J_fd|`` over all rows of
    ``row`` and all entries; the step for coordinate ``j`` is
    ``cbrt(eps) * max(1, |theta_j|)``.
    """
    theta = np.asarray(theta, dtype=float)
    f0 = system.residual(row, theta)
    _check_finite(f0, system.label)
    analytic = system.jacobian(row, theta)
    _check_finite(analytic, system.label, "jacobian")
    fd = np.empty_like(analytic)
    base = np.cbrt(np.finfo(float).eps)
    for j in range(theta.size):
        h = base * max(1.0, abs(theta[j]))
        up, down = theta.copy(), theta.copy()
        up[j] += h
        down[j] -= h
        # recompute the actual step so rounding in theta+h cancels
        fp = system.residual(row, up)
        fm = system.residual(row, down)
        _check_finite(fp, system.label)
        _check_finite(fm, system.label)
        fd[:, :, j] = (fp - fm) / (up[j] - down[j])
    denom = np.abs(fd).max()
    err = np.abs(analytic - fd).max()
    if denom == 0.0:
        return float(err)
    return float(err / denom)


# Small generic systems used by estimators and tests.


def mean_system(column: str) -> MomentSystem:
    """``f = y - theta``: the sample mean as an M-estimator."""

    def residual(data, theta):
        return (data[column] - theta[0])[:, None]

    def jacobian(data, theta):
        return np.full((data.n, 1, 1), -1.0)

    return MomentSystem(1, 1, residual, jacobian, label=f"mean({column})", linear=True)


def ols_system(outcome: str, regressors: Sequence[str], intercept: bool = True) -> MomentSystem:
    """Least-squares normal equations ``(y - x theta) x``."""
    regressors = tuple(regressors)
    names = (("1",) if intercept else ()) + regressors

    def design(data):
        x = data.matrix(regressors)
        if intercept:
            x = np.column_stack([np.ones(data.n), x])
        return x

    def residual(data, theta):
        x = design(data)
        return (data[outcome] - x @ theta)[:, None] * x

    def jacobian(data, theta):
        x = design(data)
        return -x[:, :, None] * x[:, None, :]

    def mean_jacobian(data, theta):
        x = design(data)
        return -(x.T @ x) / data.n

    k = len(names)
    return MomentSystem(
        k,
        k,
        residual,
        jacobian,
        label=f"ols({outcome} ~ {' + '.join(names)})",
        linear=True,
        mean_jacobian=mean_jacobian,
        param_names=names,
        moment_names=names,
    )


def append_mean_parameter(
    system: MomentSystem,
    contribution: Residual,
    contribution_jac: Residual,
    name: str = "tau",
) -> MomentSystem:
    """Stack ``c_i(theta) - tau`` under ``system`` with ``tau`` as last parameter.

    ``contribution(data, theta)`` returns the per-row values ``c_i`` (shape
    ``(n,)``) and ``contribution_jac`` their gradient in ``theta`` (shape
    ``(n, p)``). The stacked solution for ``tau`` is the sample mean of
    ``c_i`` at the solved ``theta``, and the sandwich covariance of the
    stacked system accounts for the estimation of ``theta``.
    """
    p, m = system.dim_theta, system.dim_moments

    def residual(data, theta):
        base = system.residual(data, theta[:p])
        extra = contribution(data, theta[:p]) - theta[p]
        return np.column_stack([base, extra])

    def jacobian(data, theta):
        n = data.n
        out = np.zeros((n, m + 1, p + 1))
        out[:, :m, :p] = system.jacobian(data, theta[:p])
        out[:, m, :p] = contribution_jac(data, theta[:p])
        out[:, m, p] = -1.0
        return out

    def mean_jacobian(data, theta):
        out = np.zeros((m + 1, p + 1))
        out[:m, :p] = system.mean_jac(data, theta[:p])
        out[m, :p] = contribution_jac(data, theta[:p]).mean(axis=0)
        out[m, p] = -1.0
        return out

    return MomentSystem(
        p + 1,
        m + 1,
        residual,
        jacobian,
        label=f"{system.label} + mean({name})",
        linear=False,
        mean_jacobian=mean_jacobian,
        param_names=tuple(system.param_names) + (name,),
        moment_names=tuple(system.moment_names) + (name,),
    )
