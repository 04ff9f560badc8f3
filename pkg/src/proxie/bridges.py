"""Parametric outcome and treatment bridge functions and their moment systems.

Outcome bridge ``h(W, A, X; eta) = g^{-1}(basis . eta)`` with an identity,
logit or log link, estimated from

    P_n[(Y - h) k(Z, A, X)] = 0,   k = (1, Z, A, X, extras).

Treatment bridge ``q(Z, A, X; phi) = 1 + exp(s * basis . phi)`` with
``s = (-1)^(1-A)``, estimated from

    P_n[s * q * k(W, A, X) - e_A] = 0,   k = (1, W, A, X, extras),

where ``e_A`` is the unit vector picking the instrument ``A``.

Basis and instrument terms are strings: ``"1"`` for the intercept, a column
name, or a pairwise product such as ``"A*Z1"``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .datamodel import ColumnRoles, Dataset
from .errors import IdentificationError, SchemaError, ValidationError
from .moments import MomentSystem

LINKS = ("identity", "logit", "log")
EXP_CLAMP = 700.0


def parse_term(term: str) -> tuple[str, ...]:
    """Split a basis term into its factor column names (``()`` for intercept)."""
    term = term.strip()
    if term == "1":
        return ()
    factors = tuple(f.strip() for f in term.split("*"))
    if len(factors) > 2 or any(not f for f in factors):
        raise SchemaError(f"invalid basis term {term!r}: use '1', 'col' or 'col1*col2'")
    return factors


def design_matrix(
    data: Dataset, terms: Sequence[str], a: Optional[float] = None
) -> np.ndarray:
    """Evaluate basis terms on every row, optionally forcing the treatment to ``a``.

    Results are cached on the dataset (which is immutable) and returned
    read-only.
    """
    key = ("design", tuple(terms), None if a is None else float(a))
    hit = data._cache.get(key)
    if hit is not None:
        return hit
    treat = data.roles.treatment
    out = np.empty((data.n, len(terms)))
    for j, term in enumerate(terms):
        v = np.ones(data.n)
        for f in parse_term(term):
            if f == treat and a is not None:
                v = v * float(a)
            else:
                v = v * data[f]
        out[:, j] = v
    out.setflags(write=False)
    data._cache[key] = out
    return out


def _check_terms(terms, allowed, what):
    for term in terms:
        for f in parse_term(term):
            if f not in allowed:
                raise SchemaError(f"{what} term {term!r} uses column {f!r}, not allowed here")


def _link_inverse(link, lin):
    if link == "identity":
        return lin, np.ones_like(lin)
    if link == "logit":
        mu = expit(lin)
        return mu, mu * (1.0 - mu)
    mu = np.exp(np.clip(lin, -EXP_CLAMP, EXP_CLAMP))
    return mu, np.where(np.abs(lin) > EXP_CLAMP, 0.0, mu)


@dataclass(frozen=True)
class OutcomeBridgeSpec:
    """Outcome bridge form: link, ordered basis and optional parameters."""

    basis: tuple[str, ...]
    link: str = "identity"
    eta: Optional[tuple[float, ...]] = None
    extra_instruments: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "basis", tuple(self.basis))
        object.__setattr__(self, "extra_instruments", tuple(self.extra_instruments))
        if self.link not in LINKS:
            raise SchemaError(f"unknown link {self.link!r}; expected one of {LINKS}")
        if "1" not in self.basis:
            raise SchemaError("outcome bridge basis must include the intercept '1'")
        for t in self.basis + self.extra_instruments:
            parse_term(t)
        if self.eta is not None:
            object.__setattr__(self, "eta", tuple(float(v) for v in self.eta))
            if len(self.eta) != len(self.basis):
                raise SchemaError("eta length must match the basis")

    @classmethod
    def default(cls, roles: ColumnRoles, link: str = "identity", covariates: bool = True):
        """Basis ``(1, W, A, X)``; ``covariates=False`` drops ``X``."""
        basis = ("1",) + roles.outcome_proxies + (roles.treatment,)
        if covariates:
            basis += roles.covariates
        return cls(basis=basis, link=link)

    def with_eta(self, eta) -> "OutcomeBridgeSpec":
        return OutcomeBridgeSpec(self.basis, self.link, tuple(eta), self.extra_instruments)

    def instruments(self, roles: ColumnRoles) -> tuple[str, ...]:
        return (
            ("1",) + roles.treatment_proxies + (roles.treatment,) + roles.covariates
            + self.extra_instruments
        )

    def validate(self, roles: ColumnRoles) -> None:
        if roles.treatment not in self.basis:
            raise SchemaError(
                f"outcome bridge basis must include the treatment {roles.treatment!r}"
            )
        allowed = {roles.treatment, *roles.outcome_proxies, *roles.covariates}
        _check_terms(self.basis, allowed, "outcome bridge basis")
        allowed_k = {roles.treatment, *roles.treatment_proxies, *roles.covariates}
        _check_terms(self.extra_instruments, allowed_k, "outcome bridge instrument")

    def to_dict(self) -> dict:
        d = {"link": self.link, "basis": list(self.basis)}
        if self.extra_instruments:
            d["extra_instruments"] = list(self.extra_instruments)
        if self.eta is not None:
            d["eta"] = list(self.eta)
        return d

    @classmethod
    def from_dict(cls, d) -> "OutcomeBridgeSpec":
        return cls(
            basis=tuple(d["basis"]),
            link=d.get("link", "identity"),
            eta=d.get("eta"),
            extra_instruments=tuple(d.get("extra_instruments", ())),
        )


@dataclass(frozen=True)
class TreatmentBridgeSpec:
    """Treatment bridge ``q = 1 + exp((-1)^(1-A) * basis . phi)``."""

    basis: tuple[str, ...]
    phi: Optional[tuple[float, ...]] = None
    extra_instruments: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "basis", tuple(self.basis))
        object.__setattr__(self, "extra_instruments", tuple(self.extra_instruments))
        for t in self.basis + self.extra_instruments:
            parse_term(t)
        if self.phi is not None:
            object.__setattr__(self, "phi", tuple(float(v) for v in self.phi))
            if len(self.phi) != len(self.basis):
                raise SchemaError("phi length must match the basis")

    @classmethod
    def default(cls, roles: ColumnRoles, covariates: bool = True):
        """Basis ``(1, Z, A, X)``; ``covariates=False`` drops ``X``."""
        basis = ("1",) + roles.treatment_proxies + (roles.treatment,)
        if covariates:
            basis += roles.covariates
        return cls(basis=basis)

    def with_phi(self, phi) -> "TreatmentBridgeSpec":
        return TreatmentBridgeSpec(self.basis, tuple(phi), self.extra_instruments)

    def instruments(self, roles: ColumnRoles) -> tuple[str, ...]:
        return (
            ("1",) + roles.outcome_proxies + (roles.treatment,) + roles.covariates
            + self.extra_instruments
        )

    def validate(self, roles: ColumnRoles) -> None:
        allowed = {roles.treatment, *roles.treatment_proxies, *roles.covariates}
        _check_terms(self.basis, allowed, "treatment bridge basis")
        allowed_k = {roles.treatment, *roles.outcome_proxies, *roles.covariates}
        _check_terms(self.extra_instruments, allowed_k, "treatment bridge instrument")

    def to_dict(self) -> dict:
        d = {"basis": list(self.basis)}
        if self.extra_instruments:
            d["extra_instruments"] = list(self.extra_instruments)
        if self.phi is not None:
            d["phi"] = list(self.phi)
        return d

    @classmethod
    def from_dict(cls, d) -> "TreatmentBridgeSpec":
        return cls(
            basis=tuple(d["basis"]),
            phi=d.get("phi"),
            extra_instruments=tuple(d.get("extra_instruments", ())),
        )


def _params(given, stored, what):
    params = given if given is not None else stored
    if params is None:
        raise ValueError(f"no {what} supplied and the bridge carries none")
    return np.asarray(params, dtype=float)


def eval_h(
    spec: OutcomeBridgeSpec, data: Dataset, eta=None, a: Optional[float] = None
) -> np.ndarray:
    """Outcome bridge values for every row; ``a`` forces the treatment level."""
    eta = _params(eta, spec.eta, "eta")
    lin = design_matrix(data, spec.basis, a) @ eta
    return _link_inverse(spec.link, lin)[0]


def _q_exponent(spec, data, phi, a):
    x = design_matrix(data, spec.basis, a)
    s = 2.0 * (data.a if a is None else np.full(data.n, float(a))) - 1.0
    expo = s * (x @ phi)
    return x, s, expo


def eval_q(
    spec: TreatmentBridgeSpec,
    data: Dataset,
    phi=None,
    a: Optional[float] = None,
    diagnostics: Optional[dict] = None,
) -> np.ndarray:
    """Treatment bridge values ``1 + exp(s * basis . phi)`` for every row.

    Exponents are clamped to +-700; when ``diagnostics`` is a dict its
    ``"q_clamps"`` entry is incremented by the number of clamped rows.
    """
    phi = _params(phi, spec.phi, "phi")
    _, _, expo = _q_exponent(spec, data, phi, a)
    clamped = np.abs(expo) > EXP_CLAMP
    if diagnostics is not None:
        diagnostics["q_clamps"] = diagnostics.get("q_clamps", 0) + int(clamped.sum())
    return 1.0 + np.exp(np.clip(expo, -EXP_CLAMP, EXP_CLAMP))


def outcome_bridge_moments(spec: OutcomeBridgeSpec, roles: ColumnRoles) -> MomentSystem:
    """Moment system ``(Y - h(W, A, X; eta)) k(Z, A, X)`` in ``eta``."""
    spec.validate(roles)
    basis = spec.basis
    inst = spec.instruments(roles)
    if len(inst) < len(basis):
        raise IdentificationError(
            f"outcome bridge: {len(inst)} instruments for {len(basis)} parameters "
            f"(deficit {len(basis) - len(inst)})"
        )
    link = spec.link

    def parts(data, eta):
        x = design_matrix(data, basis)
        k = design_matrix(data, inst)
        mu, dmu = _link_inverse(link, x @ eta)
        return x, k, mu, dmu

    def residual(data, eta):
        _, k, mu, _ = parts(data, eta)
        return (data.y - mu)[:, None] * k

    def jacobian(data, eta):
        x, k, _, dmu = parts(data, eta)
        return -k[:, :, None] * (dmu[:, None] * x)[:, None, :]

    def mean_jacobian(data, eta):
        x, k, _, dmu = parts(data, eta)
        return -(k.T @ (dmu[:, None] * x)) / data.n

    return MomentSystem(
        len(basis),
        len(inst),
        residual,
        jacobian,
        label=f"outcome bridge ({link})",
        linear=link == "identity",
        mean_jacobian=mean_jacobian,
        param_names=basis,
        moment_names=inst,
    )


def treatment_bridge_moments(spec: TreatmentBridgeSpec, roles: ColumnRoles) -> MomentSystem:
    """Moment system ``s q(Z, A, X; phi) k(W, A, X) - e_A`` in ``phi``."""
    spec.validate(roles)
    basis = spec.basis
    inst = spec.instruments(roles)
    if len(inst) < len(basis):
        raise IdentificationError(
            f"treatment bridge: {len(inst)} instruments for {len(basis)} parameters "
            f"(deficit {len(basis) - len(inst)})"
        )
    target = np.zeros(len(inst))
    target[inst.index(roles.treatment)] = 1.0

    def parts(data, phi):
        x, s, expo = _q_exponent(spec, data, phi, None)
        k = design_matrix(data, inst)
        e = np.exp(np.clip(expo, -EXP_CLAMP, EXP_CLAMP))
        de = np.where(np.abs(expo) > EXP_CLAMP, 0.0, e)
        return x, s, k, e, de

    def residual(data, phi):
        _, s, k, e, _ = parts(data, phi)
        return (s * (1.0 + e))[:, None] * k - target

    # d(s q)/dphi = s * exp(s lin) * s * x = exp(s lin) * x
    def jacobian(data, phi):
        x, _, k, _, de = parts(data, phi)
        return k[:, :, None] * (de[:, None] * x)[:, None, :]

    def mean_jacobian(data, phi):
        x, _, k, _, de = parts(data, phi)
        return (k.T @ (de[:, None] * x)) / data.n

    return MomentSystem(
        len(basis),
        len(inst),
        residual,
        jacobian,
        label="treatment bridge",
        linear=False,
        mean_jacobian=mean_jacobian,
        param_names=basis,
        moment_names=inst,
    )


def check_logit_outcome(data: Dataset) -> None:
    """A logit-link outcome bridge needs a 0/1 outcome."""
    y = data.y
    bad = np.flatnonzero((y != 0) & (y != 1))
    if bad.size:
        raise ValidationError(
            f"logit link requires a binary outcome; row {bad[0]} has {y[bad[0]]!r}",
            row=int(bad[0]),
        )


# Per-row contributions and their gradients, used to stack ATE moments.


def h_contrast(spec: OutcomeBridgeSpec):
    """``c_i = h(W,1,X) - h(W,0,X)`` and its gradient in ``eta``."""

    def contribution(data, eta):
        return eval_h(spec, data, eta, a=1) - eval_h(spec, data, eta, a=0)

    def gradient(data, eta):
        x1 = design_matrix(data, spec.basis, 1)
        x0 = design_matrix(data, spec.basis, 0)
        _, d1 = _link_inverse(spec.link, x1 @ eta)
        _, d0 = _link_inverse(spec.link, x0 @ eta)
        return d1[:, None] * x1 - d0[:, None] * x0

    return contribution, gradient


def q_weighted_outcome(spec: TreatmentBridgeSpec):
    """``c_i = s Y q(Z, A, X)`` and its gradient in ``phi``."""

    def contribution(data, phi):
        s = 2.0 * data.a - 1.0
        return s * data.y * eval_q(spec, data, phi)

    def gradient(data, phi):
        x, _, expo = _q_exponent(spec, data, phi, None)
        de = np.where(np.abs(expo) > EXP_CLAMP, 0.0, np.exp(np.clip(expo, -EXP_CLAMP, EXP_CLAMP)))
        return (data.y * de)[:, None] * x

    return contribution, gradient
