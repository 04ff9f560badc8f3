"""Simulation data-generating models with known average treatment effects.

Three families are provided:

* :class:`LinearGaussianDgm` -- scalar ``X, U, Z, W`` with a logistic
  treatment, Gaussian latent confounder and Gaussian proxies, sampled in the
  order ``X -> A | X -> U | A, X -> (Z, W) | U, A, X -> Y``. Setting
  ``treatment_conditioning="on_UZWX"`` switches to the variant in which
  ``(U, Z, W)`` are drawn given ``X`` only and ``A`` is logistic in
  ``(U, Z, X)``; that variant has no closed-form parametric bridge.
* :class:`BinaryDgm` -- every variable binary, given by probability tables.
* :class:`CompletenessFailureDgm` -- two-dimensional ``U`` with scalar
  proxies, so the proxies cannot be complete for ``U``.

Every sampler is a pure function of ``(spec, n, seed)``. ``seed`` may be an
integer or a :class:`numpy.random.SeedSequence`; the generator is PCG64.

Assumption identifiers used in :class:`TruthRecord` flags:

====== ===========================================
A.1    consistency
A.2    positivity given X
A.3    unconfoundedness given X
A.4    latent unconfoundedness given (U, X)
A.5    latent positivity
A.6    Z independent of Y given (U, A, X)
A.7    W independent of (A, Z) given (U, X)
A.8    an outcome bridge function exists
A.9    Z is complete for U given (A, X)
A.10   a treatment bridge function exists
A.11   W is complete for U given (A, X)
====== ===========================================
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Union

import numpy as np
from scipy.special import expit

from .datamodel import ColumnRoles, Dataset
from .errors import ConfigurationError

HOLDS, VIOLATED, NOT_APPLICABLE = "holds", "violated", "not-applicable"

ASSUMPTIONS = {
    "A.1": "consistency",
    "A.2": "positivity given X",
    "A.3": "unconfoundedness given X",
    "A.4": "latent unconfoundedness given (U, X)",
    "A.5": "latent positivity",
    "A.6": "Z independent of Y given (U, A, X)",
    "A.7": "W independent of (A, Z) given (U, X)",
    "A.8": "outcome bridge function exists",
    "A.9": "Z complete for U given (A, X)",
    "A.10": "treatment bridge function exists",
    "A.11": "W complete for U given (A, X)",
}

#: Draws used by the interventional oracle when no closed form is available.
ORACLE_DRAWS = 1_000_000
ORACLE_SEED = 20240917

SCALAR_ROLES = ColumnRoles(
    outcome="Y",
    treatment="A",
    covariates=("X",),
    treatment_proxies=("Z",),
    outcome_proxies=("W",),
    hidden=("U",),
)
COMPLETENESS_ROLES = ColumnRoles(
    outcome="Y",
    treatment="A",
    covariates=("X",),
    treatment_proxies=("Z",),
    outcome_proxies=("W",),
    hidden=("U1", "U2"),
)


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def _check_finite(spec):
    for f in fields(spec):
        v = getattr(spec, f.name)
        if isinstance(v, (int, float)) and not isinstance(v, bool) and not math.isfinite(v):
            raise ConfigurationError(f"{f.name} must be finite, got {v!r}")


def _check_positive(spec, names):
    for name in names:
        v = getattr(spec, name)
        if not v > 0:
            raise ConfigurationError(f"{name} must be > 0, got {v!r}")


@dataclass(frozen=True)
class TruthRecord:
    true_ate: float
    assumption_flags: dict
    mc_se: float = 0.0
    method: str = "closed-form"

    def __post_init__(self):
        if not math.isfinite(self.true_ate):
            raise ConfigurationError("true ATE is not finite")


@dataclass(frozen=True)
class LinearGaussianDgm:
    """Linear-Gaussian model; defaults are the repo's valid-PCI reference.

    The reference values are a repo choice, not taken from any published
    simulation.
    """

    alpha0: float = 0.0
    alpha_x: float = 0.5
    mu0: float = 0.0
    mu_a: float = 0.8
    mu_x: float = 0.5
    sigma_u: float = 1.0
    theta0: float = 0.0
    theta_a: float = 0.3
    theta_u: float = 1.0
    theta_x: float = 0.4
    sigma_z: float = 1.0
    omega0: float = 0.0
    omega_a: float = 0.0
    omega_u: float = 1.0
    omega_x: float = 0.4
    sigma_w: float = 1.0
    sigma_zw: float = 0.0
    beta0: float = 0.0
    beta_a: float = 0.7
    beta_u: float = 1.0
    beta_x: float = 0.6
    beta_z: float = 0.0
    beta_w: float = 0.3
    sigma_y: float = 1.0
    treatment_conditioning: str = "on_X_only"
    # only used when treatment_conditioning == "on_UZWX"
    alpha_u: float = 0.0
    alpha_z: float = 0.0

    def __post_init__(self):
        _check_finite(self)
        _check_positive(self, ("sigma_u", "sigma_z", "sigma_w", "sigma_y"))
        if self.treatment_conditioning not in ("on_X_only", "on_UZWX"):
            raise ConfigurationError(
                f"treatment_conditioning must be 'on_X_only' or 'on_UZWX', "
                f"got {self.treatment_conditioning!r}"
            )
        if abs(self.zw_correlation) >= 1.0:
            raise ConfigurationError(
                "(Z, W) residual covariance is not positive definite: "
                f"|sigma_zw| must be < sigma_z * sigma_w"
            )
        if self.treatment_conditioning == "on_UZWX":
            for name in ("mu_a", "theta_a", "omega_a"):
                if getattr(self, name) != 0:
                    raise ConfigurationError(
                        f"{name} must be 0 when (U, Z, W) are drawn before A (on_UZWX)"
                    )
        elif self.alpha_u != 0 or self.alpha_z != 0:
            raise ConfigurationError("alpha_u and alpha_z require treatment_conditioning='on_UZWX'")

    @property
    def zw_correlation(self) -> float:
        return self.sigma_zw / self.sigma_z / self.sigma_w

    @property
    def is_valid_pci(self) -> bool:
        flags = assumption_flags(self)
        confounded = flags["A.3"] == VIOLATED
        return confounded and all(
            flags[k] == HOLDS for k in ("A.4", "A.6", "A.7", "A.9", "A.11")
        )


@dataclass(frozen=True)
class BinaryDgm:
    """All-binary model given by probability tables.

    ``p_ux[u, x]`` is the joint law of ``(U, X)``; ``p_a[u, x]``,
    ``p_z[u, a, x]``, ``p_w[u, x]`` and ``p_y[u, a, x]`` are the conditional
    probabilities of the value 1. ``Z`` never depends on ``Y`` and ``W``
    never depends on ``A`` or ``Z``.
    """

    p_ux: tuple = ((0.3, 0.2), (0.2, 0.3))
    p_a: tuple = ((0.3, 0.4), (0.6, 0.7))
    p_z: tuple = (((0.2, 0.25), (0.3, 0.35)), ((0.7, 0.75), (0.8, 0.85)))
    p_w: tuple = ((0.25, 0.35), (0.7, 0.8))
    p_y: tuple = (((0.2, 0.3), (0.5, 0.6)), ((0.5, 0.6), (0.8, 0.9)))

    def __post_init__(self):
        shapes = {"p_ux": (2, 2), "p_a": (2, 2), "p_z": (2, 2, 2), "p_w": (2, 2), "p_y": (2, 2, 2)}
        for name, shape in shapes.items():
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ConfigurationError(f"{name} must have shape {shape}, got {arr.shape}")
            if not np.all((arr > 0) & (arr < 1)):
                raise ConfigurationError(f"all entries of {name} must lie strictly in (0, 1)")
            object.__setattr__(self, name, _freeze(arr))
        total = float(np.sum(self.table("p_ux")))
        if abs(total - 1.0) > 1e-12:
            raise ConfigurationError(f"p_ux must sum to 1, sums to {total!r}")
        pz, pw = self.table("p_z"), self.table("p_w")
        for a in (0, 1):
            for x in (0, 1):
                if pz[1, a, x] == pz[0, a, x]:
                    raise ConfigurationError(
                        f"Z is not U-relevant at (a={a}, x={x}): P(Z=1|U) constant in U"
                    )
        for x in (0, 1):
            if pw[1, x] == pw[0, x]:
                raise ConfigurationError(
                    f"W is not U-relevant at x={x}: P(W=1|U) constant in U"
                )

    def table(self, name: str) -> np.ndarray:
        return np.asarray(getattr(self, name), dtype=float)


def _freeze(arr):
    if arr.ndim == 0:
        return float(arr)
    return tuple(_freeze(a) for a in arr)


@dataclass(frozen=True)
class CompletenessFailureDgm:
    """Two-dimensional latent confounder with scalar proxies.

    ``U | A, X ~ N(mu0 + mu_a A + mu_x X, sigma_u^2 I_2)`` and
    ``Z | U, A, X ~ N(theta0 + theta_a A + theta_x X + theta1 U1 + theta2 U2, sigma_z^2)``.
    ``g(U) = theta2 U1 - theta1 U2`` has zero conditional mean given
    ``(Z, A, X)`` but is not zero, so ``Z`` is not complete for ``U``.
    """

    alpha0: float = 0.0
    alpha_x: float = 0.5
    mu0: tuple = (0.0, 0.0)
    mu_a: tuple = (1.0, 0.0)
    mu_x: tuple = (0.3, 0.3)
    sigma_u: float = 1.0
    theta0: float = 0.0
    theta_a: float = 0.0
    theta_x: float = 0.4
    theta1: float = 1.0
    theta2: float = 1.0
    sigma_z: float = 1.0
    omega0: float = 0.0
    omega_x: float = 0.4
    omega1: float = 1.0
    omega2: float = 1.0
    sigma_w: float = 1.0
    beta0: float = 0.0
    beta_a: float = 0.7
    beta_x: float = 0.6
    beta_u1: float = 1.0
    beta_u2: float = 0.0
    beta_z: float = 0.0
    beta_w: float = 0.3
    sigma_y: float = 1.0

    def __post_init__(self):
        for name in ("mu0", "mu_a", "mu_x"):
            v = tuple(float(t) for t in getattr(self, name))
            if len(v) != 2 or not all(math.isfinite(t) for t in v):
                raise ConfigurationError(f"{name} must be a pair of finite numbers")
            object.__setattr__(self, name, v)
        _check_finite(self)
        _check_positive(self, ("sigma_u", "sigma_z", "sigma_w", "sigma_y"))
        if self.theta1 == 0 or self.theta2 == 0:
            raise ConfigurationError("theta1 and theta2 must both be nonzero")


AnyDgm = Union[LinearGaussianDgm, BinaryDgm, CompletenessFailureDgm]


# ---------------------------------------------------------------------------
# sampling


def _sample_linear_gaussian(spec: LinearGaussianDgm, n: int, rng, force_a=None):
    """Draw all columns; ``force_a`` sets A for Z, W, Y while U keeps its observational law."""
    x = rng.standard_normal(n)
    rho = spec.zw_correlation
    if spec.treatment_conditioning == "on_X_only":
        a = (rng.random(n) < expit(spec.alpha0 + spec.alpha_x * x)).astype(float)
        u = spec.mu0 + spec.mu_a * a + spec.mu_x * x + spec.sigma_u * rng.standard_normal(n)
        if force_a is not None:
            a = np.full(n, float(force_a))
        e1, e2 = rng.standard_normal(n), rng.standard_normal(n)
    else:
        u = spec.mu0 + spec.mu_x * x + spec.sigma_u * rng.standard_normal(n)
        e1, e2 = rng.standard_normal(n), rng.standard_normal(n)
        a = None
    z = spec.theta0 + spec.theta_u * u + spec.theta_x * x + spec.sigma_z * e1
    w = (
        spec.omega0 + spec.omega_u * u + spec.omega_x * x
        + spec.sigma_w * (rho * e1 + math.sqrt(1.0 - rho * rho) * e2)
    )
    if a is None:
        lin = spec.alpha0 + spec.alpha_x * x + spec.alpha_u * u + spec.alpha_z * z
        a = (rng.random(n) < expit(lin)).astype(float)
        if force_a is not None:
            a = np.full(n, float(force_a))
    else:
        z = z + spec.theta_a * a
        w = w + spec.omega_a * a
    y = (
        spec.beta0 + spec.beta_a * a + spec.beta_u * u + spec.beta_x * x
        + spec.beta_z * z + spec.beta_w * w + spec.sigma_y * rng.standard_normal(n)
    )
    return {"Y": y, "A": a, "X": x, "Z": z, "W": w, "U": u}


def _check_n(n):
    if int(n) != n or n < 1:
        raise ConfigurationError(f"n must be a positive integer, got {n!r}")
    return int(n)


def sample_linear_gaussian(spec: LinearGaussianDgm, n: int, seed) -> Dataset:
    """Sample ``n`` rows; ``U`` is tagged hidden."""
    n = _check_n(n)
    cols = _sample_linear_gaussian(spec, n, make_rng(seed))
    return Dataset(cols, SCALAR_ROLES)


def sample_binary(spec: BinaryDgm, n: int, seed) -> Dataset:
    """Ancestral sampling of ``(U, X) -> A -> Z, W -> Y`` from the tables."""
    n = _check_n(n)
    rng = make_rng(seed)
    p_ux = spec.table("p_ux").reshape(-1)
    cell = rng.choice(4, size=n, p=p_ux / p_ux.sum())
    u, x = cell // 2, cell % 2
    a = (rng.random(n) < spec.table("p_a")[u, x]).astype(int)
    z = (rng.random(n) < spec.table("p_z")[u, a, x]).astype(float)
    w = (rng.random(n) < spec.table("p_w")[u, x]).astype(float)
    y = (rng.random(n) < spec.table("p_y")[u, a, x]).astype(float)
    cols = {"Y": y, "A": a.astype(float), "X": x.astype(float), "Z": z, "W": w, "U": u.astype(float)}
    return Dataset(cols, SCALAR_ROLES)


def _sample_completeness_failure(spec: CompletenessFailureDgm, n, rng, force_a=None):
    x = rng.standard_normal(n)
    a = (rng.random(n) < expit(spec.alpha0 + spec.alpha_x * x)).astype(float)
    u1 = spec.mu0[0] + spec.mu_a[0] * a + spec.mu_x[0] * x + spec.sigma_u * rng.standard_normal(n)
    u2 = spec.mu0[1] + spec.mu_a[1] * a + spec.mu_x[1] * x + spec.sigma_u * rng.standard_normal(n)
    if force_a is not None:
        a = np.full(n, float(force_a))
    z = (
        spec.theta0 + spec.theta_a * a + spec.theta_x * x + spec.theta1 * u1
        + spec.theta2 * u2 + spec.sigma_z * rng.standard_normal(n)
    )
    w = (
        spec.omega0 + spec.omega_x * x + spec.omega1 * u1 + spec.omega2 * u2
        + spec.sigma_w * rng.standard_normal(n)
    )
    y = (
        spec.beta0 + spec.beta_a * a + spec.beta_x * x + spec.beta_u1 * u1 + spec.beta_u2 * u2
        + spec.beta_z * z + spec.beta_w * w + spec.sigma_y * rng.standard_normal(n)
    )
    return {"Y": y, "A": a, "X": x, "Z": z, "W": w, "U1": u1, "U2": u2}


def sample_completeness_failure(spec: CompletenessFailureDgm, n: int, seed) -> Dataset:
    """Sample ``n`` rows with hidden ``U1, U2`` and scalar ``Z, W``."""
    n = _check_n(n)
    cols = _sample_completeness_failure(spec, n, make_rng(seed))
    return Dataset(cols, COMPLETENESS_ROLES)


def sample(spec: AnyDgm, n: int, seed) -> Dataset:
    if isinstance(spec, LinearGaussianDgm):
        return sample_linear_gaussian(spec, n, seed)
    if isinstance(spec, BinaryDgm):
        return sample_binary(spec, n, seed)
    if isinstance(spec, CompletenessFailureDgm):
        return sample_completeness_failure(spec, n, seed)
    raise TypeError(f"unsupported DGM type {type(spec).__name__}")


# ---------------------------------------------------------------------------
# ground truth


def interventional_ate(
    spec: Union[LinearGaussianDgm, CompletenessFailureDgm],
    draws: int = ORACLE_DRAWS,
    seed=ORACLE_SEED,
    paired: bool = True,
) -> tuple[float, float]:
    """Monte Carlo ``E[Y(1) - Y(0)]`` by setting ``A`` in the structural equations.

    ``U`` keeps its observational distribution. With ``paired=True`` both
    arms share every random draw (common random numbers); otherwise each arm
    is simulated independently. Returns ``(estimate, mc_se)``.
    """
    if isinstance(spec, LinearGaussianDgm):
        sampler = _sample_linear_gaussian
    elif isinstance(spec, CompletenessFailureDgm):
        sampler = _sample_completeness_failure
    else:
        raise TypeError(f"no interventional oracle for {type(spec).__name__}")
    if paired:
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        y1 = sampler(spec, draws, make_rng(ss), force_a=1)["Y"]
        y0 = sampler(spec, draws, make_rng(ss), force_a=0)["Y"]
        diff = y1 - y0
        return float(diff.mean()), float(diff.std(ddof=1) / math.sqrt(draws))
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    s1, s0 = root.spawn(2)
    y1 = sampler(spec, draws, make_rng(s1), force_a=1)["Y"]
    y0 = sampler(spec, draws, make_rng(s0), force_a=0)["Y"]
    est = float(y1.mean() - y0.mean())
    se = math.sqrt(y1.var(ddof=1) / draws + y0.var(ddof=1) / draws)
    return est, se


def binary_ate_by_enumeration(spec: BinaryDgm) -> float:
    """``sum_{u,x} P(u, x) [P(Y=1|u,1,x) - P(Y=1|u,0,x)]``."""
    p_ux = spec.table("p_ux")
    total = float(p_ux.sum())
    if abs(total - 1.0) > 1e-12:
        raise ConfigurationError(f"p_ux sums to {total!r}, not 1")
    p_y = spec.table("p_y")
    return float(np.sum(p_ux * (p_y[:, 1, :] - p_y[:, 0, :])))


def binary_population_tables(spec: BinaryDgm):
    """Exact ``psi_ax`` and ``y_ax`` of the saturated outcome-bridge equations.

    Returns a dict keyed by ``(a, x)`` with entries ``(psi, y)`` where
    ``psi[z, w] = P(W=w | Z=z, a, x)`` and ``y[z] = E[Y | Z=z, a, x]``, plus
    the marginal ``P(W=w, X=x)`` as ``p_wx[w, x]``.
    """
    p_ux, p_a, p_z = spec.table("p_ux"), spec.table("p_a"), spec.table("p_z")
    p_w, p_y = spec.table("p_w"), spec.table("p_y")
    out = {}
    for a in (0, 1):
        for x in (0, 1):
            pa = p_a[:, x] if a == 1 else 1.0 - p_a[:, x]
            psi = np.empty((2, 2))
            yv = np.empty(2)
            for z in (0, 1):
                pz = p_z[:, a, x] if z == 1 else 1.0 - p_z[:, a, x]
                post = p_ux[:, x] * pa * pz
                post = post / post.sum()
                pw1 = float(post @ p_w[:, x])
                psi[z] = (1.0 - pw1, pw1)
                yv[z] = float(post @ p_y[:, a, x])
            out[(a, x)] = (psi, yv)
    p_wx = np.empty((2, 2))
    for x in (0, 1):
        pw1 = float(p_ux[:, x] @ p_w[:, x])
        px = float(p_ux[:, x].sum())
        p_wx[1, x] = pw1
        p_wx[0, x] = px - pw1
    out["p_wx"] = p_wx
    return out


def _flag(cond: bool) -> str:
    return HOLDS if cond else VIOLATED


def assumption_flags(spec: AnyDgm) -> dict:
    """Status of assumptions A.1-A.11 read off the parameter restrictions."""
    flags = {k: HOLDS for k in ASSUMPTIONS}
    if isinstance(spec, LinearGaussianDgm):
        s = spec
        z_ci = s.beta_z == 0 and (s.sigma_zw == 0 or s.beta_w == 0)
        if s.treatment_conditioning == "on_X_only":
            a_dep_u = s.mu_a != 0
            w_ci = s.omega_a == 0 and s.sigma_zw == 0
            flags["A.4"] = HOLDS
        else:
            a_dep_u = s.alpha_u != 0 or s.alpha_z * s.theta_u != 0
            w_ci = s.sigma_zw == 0
            flags["A.4"] = _flag(z_ci or s.alpha_z == 0)
        y_dep_u = s.beta_u != 0 or s.beta_w * s.omega_u != 0 or s.beta_z * s.theta_u != 0
        flags["A.3"] = _flag(not (a_dep_u and y_dep_u))
        flags["A.6"] = _flag(z_ci)
        flags["A.7"] = _flag(w_ci)
        flags["A.8"] = _flag(s.omega_u != 0 or s.beta_u == 0)
        flags["A.9"] = _flag(s.theta_u != 0)
        flags["A.10"] = _flag(s.theta_u != 0 or not a_dep_u)
        flags["A.11"] = _flag(s.omega_u != 0)
    elif isinstance(spec, CompletenessFailureDgm):
        s = spec
        a_dep_u = any(v != 0 for v in s.mu_a)
        y_dep_u = (s.beta_u1, s.beta_u2) != (0, 0) or (s.beta_w != 0) or (s.beta_z != 0)
        flags["A.3"] = _flag(not (a_dep_u and y_dep_u))
        flags["A.6"] = _flag(s.beta_z == 0)
        flags["A.8"] = _flag(s.beta_u1 * s.omega2 - s.beta_u2 * s.omega1 == 0)
        flags["A.9"] = VIOLATED
        flags["A.10"] = _flag(s.mu_a[0] * s.theta2 - s.mu_a[1] * s.theta1 == 0)
        flags["A.11"] = VIOLATED
    elif isinstance(spec, BinaryDgm):
        p_a, p_y = spec.table("p_a"), spec.table("p_y")
        a_dep_u = bool(np.any(p_a[1] != p_a[0]))
        y_dep_u = bool(np.any(p_y[1] != p_y[0]))
        flags["A.3"] = _flag(not (a_dep_u and y_dep_u))
    else:
        raise TypeError(f"unsupported DGM type {type(spec).__name__}")
    return flags


def true_ate(spec: AnyDgm) -> TruthRecord:
    """Ground-truth ATE and assumption flags.

    * linear-Gaussian, ``on_X_only``: ``beta_a + beta_z theta_a + beta_w omega_a``
      (``beta_a`` whenever the proxy exclusions hold);
    * binary: exact enumeration over ``(u, x)``;
    * ``on_UZWX`` variant and completeness-failure model: paired
      interventional Monte Carlo with :data:`ORACLE_DRAWS` draws.
    """
    flags = assumption_flags(spec)
    if isinstance(spec, BinaryDgm):
        return TruthRecord(binary_ate_by_enumeration(spec), flags, 0.0, "enumeration")
    if isinstance(spec, LinearGaussianDgm) and spec.treatment_conditioning == "on_X_only":
        tau = spec.beta_a + spec.beta_z * spec.theta_a + spec.beta_w * spec.omega_a
        return TruthRecord(float(tau), flags, 0.0, "closed-form")
    est, se = interventional_ate(spec)
    return TruthRecord(est, flags, se, "interventional-oracle")


# ---------------------------------------------------------------------------
# JSON round trip

KINDS = {
    "linear_gaussian": LinearGaussianDgm,
    "binary": BinaryDgm,
    "completeness_failure": CompletenessFailureDgm,
}


def _jsonable(v):
    if isinstance(v, tuple):
        return [_jsonable(t) for t in v]
    return v


def dgm_to_dict(spec: AnyDgm) -> dict:
    for kind, cls in KINDS.items():
        if type(spec) is cls:
            return {"kind": kind, "params": {k: _jsonable(v) for k, v in asdict(spec).items()}}
    raise TypeError(f"unsupported DGM type {type(spec).__name__}")


def dgm_from_dict(d: dict) -> AnyDgm:
    kind = d.get("kind")
    if kind not in KINDS:
        raise ConfigurationError(f"unknown dgm kind {kind!r}; expected one of {sorted(KINDS)}")
    cls = KINDS[kind]
    params = dict(d.get("params", {}))
    known = {f.name for f in fields(cls)}
    unknown = set(params) - known
    if unknown:
        raise ConfigurationError(f"unknown parameters for {kind}: {sorted(unknown)}")
    for k, v in params.items():
        if isinstance(v, list):
            params[k] = _freeze(np.asarray(v, dtype=float))
    return cls(**params)


def roles_for(spec: AnyDgm) -> ColumnRoles:
    return COMPLETENESS_ROLES if isinstance(spec, CompletenessFailureDgm) else SCALAR_ROLES
