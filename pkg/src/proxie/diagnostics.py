"""Empirical proxy checks and necessary-condition screens.

These checks can support the proxy assumptions but cannot confirm them:
completeness is untestable, and an association between a proxy and the
treatment or outcome may arise for reasons other than the hidden
confounder.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import norm

from .bridges import TreatmentBridgeSpec, eval_q
from .datamodel import ColumnRoles, Dataset
from .errors import ValidationError

CAVEAT = (
    "Caveat: these association checks are not sufficient to establish U-relevance "
    "of the proxies, and completeness cannot be tested from data. Proxies were "
    "not selected on a held-out sample; the effect of choosing proxies on the "
    "estimation data is unknown."
)

RELEVANT_P = 0.01
WEAK_P = 0.10

# Tests that speak to U-relevance of a proxy under the proxy independence
# conditions; the remaining ones are only suggestive.
INFORMATIVE_KINDS = ("Z-Y|A,X", "W-A|X", "Z-W|A,X")
SUGGESTIVE_KINDS = ("Z-A|X", "W-Y|A,X")


def _residualize(y: np.ndarray, cond: np.ndarray) -> np.ndarray:
    x = np.column_stack([np.ones(y.shape[0]), cond])
    coef, *_ = np.linalg.lstsq(x, y, rcond=None)
    return y - x @ coef


def partial_correlation(x, y, cond=None) -> float:
    """Correlation of the residuals of ``x`` and ``y`` after regressing on ``(1, cond)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    cond = np.empty((x.shape[0], 0)) if cond is None else np.asarray(cond, dtype=float).reshape(x.shape[0], -1)
    rx = _residualize(x, cond)
    ry = _residualize(y, cond)
    denom = math.sqrt(float(rx @ rx) * float(ry @ ry))
    if denom == 0.0:
        return float("nan")
    return float(np.clip(rx @ ry / denom, -1.0, 1.0))


def partial_correlation_precision(x, y, cond=None) -> float:
    """Same quantity via the inverse correlation matrix of ``(x, y, cond)``."""
    x = np.asarray(x, dtype=float)
    cols = [x, np.asarray(y, dtype=float)]
    if cond is not None:
        c = np.asarray(cond, dtype=float).reshape(x.shape[0], -1)
        cols.extend(c.T)
    prec = np.linalg.inv(np.corrcoef(np.vstack(cols)))
    return float(-prec[0, 1] / math.sqrt(prec[0, 0] * prec[1, 1]))


def fisher_z(r: float, n: int, k: int) -> tuple[float, float]:
    """Two-sided Fisher z-test of zero partial correlation with ``k`` conditioning variables."""
    df = n - k - 3
    if df <= 0:
        raise ValidationError(f"too few rows ({n}) for a partial correlation given {k} variables")
    r = min(max(r, -1.0 + 1e-16), 1.0 - 1e-16)
    stat = math.atanh(r) * math.sqrt(df)
    p = float(2.0 * norm.sf(abs(stat)))
    return stat, min(max(p, 0.0), 1.0)


@dataclass(frozen=True)
class CheckRecord:
    test_id: str
    kind: str
    left: str
    right: str
    conditioning: tuple[str, ...]
    partial_corr: Optional[float]
    z: Optional[float]
    p_value: Optional[float]
    informative: bool
    skipped: Optional[str] = None


def relevance_flag(p: Optional[float]) -> str:
    if p is None or math.isnan(p):
        return "none"
    if p < RELEVANT_P:
        return "relevant_evidence"
    if p < WEAK_P:
        return "weak"
    return "none"


@dataclass
class ProxyCheckReport:
    tests: list[CheckRecord]
    flags: dict[str, str]
    caveat: str = CAVEAT

    def test(self, kind: str, left: str, right: str) -> CheckRecord:
        for t in self.tests:
            if t.kind == kind and t.left == left and t.right == right:
                return t
        raise KeyError((kind, left, right))

    def to_text(self) -> str:
        lines = ["Proxy association checks", ""]
        hdr = f"{'id':<5} {'test':<10} {'pair':<20} {'given':<16} {'pcorr':>9} {'z':>9} {'p':>10}  role"
        lines.append(hdr)
        for t in self.tests:
            pair = f"{t.left}~{t.right}"
            given = ",".join(t.conditioning) or "-"
            role = "informative" if t.informative else "suggestive"
            if t.skipped:
                lines.append(f"{t.test_id:<5} {t.kind:<10} {pair:<20} {given:<16} skipped: {t.skipped}")
            else:
                lines.append(
                    f"{t.test_id:<5} {t.kind:<10} {pair:<20} {given:<16} "
                    f"{t.partial_corr:>9.4f} {t.z:>9.3f} {t.p_value:>10.3g}  {role}"
                )
        lines += ["", "Proxy relevance flags (informative tests only):"]
        for name, flag in self.flags.items():
            lines.append(f"  {name}: {flag}")
        lines += ["", self.caveat]
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["test_id", "kind", "left", "right", "conditioning", "partial_corr",
                    "z", "p_value", "informative", "skipped"])
        for t in self.tests:
            w.writerow([
                t.test_id, t.kind, t.left, t.right, ";".join(t.conditioning),
                "" if t.partial_corr is None else repr(t.partial_corr),
                "" if t.z is None else repr(t.z),
                "" if t.p_value is None else repr(t.p_value),
                int(t.informative), t.skipped or "",
            ])
        return buf.getvalue()


def proxy_checks(data: Dataset) -> ProxyCheckReport:
    """Run the residual-on-residual partial-correlation tests for every proxy.

    Each proxy's flag is driven by the smallest p-value among the informative
    tests it takes part in.
    """
    roles = data.roles
    y, a, x = roles.outcome, roles.treatment, roles.covariates
    zs, ws = roles.treatment_proxies, roles.outcome_proxies
    p, q, r = len(x), len(zs), len(ws)
    if data.n <= p + q + r + 5:
        raise ValidationError(
            f"proxy checks need more than {p + q + r + 5} rows, got {data.n}"
        )
    plan = []
    plan += [("Z-Y|A,X", z, y, (a,) + x) for z in zs]
    plan += [("W-A|X", w, a, x) for w in ws]
    plan += [("Z-W|A,X", z, w, (a,) + x) for z in zs for w in ws]
    plan += [("Z-A|X", z, a, x) for z in zs]
    plan += [("W-Y|A,X", w, y, (a,) + x) for w in ws]

    constant = {c for c in roles.observed if np.ptp(data[c]) == 0.0}
    tests = []
    for i, (kind, left, right, cond) in enumerate(plan, start=1):
        tid = f"T{i}"
        informative = kind in INFORMATIVE_KINDS
        dead = [c for c in (left, right) if c in constant]
        if dead:
            reason = f"constant column {dead[0]!r}"
            tests.append(CheckRecord(tid, kind, left, right, cond, None, None, None, informative, reason))
            continue
        rho = partial_correlation(data[left], data[right], data.matrix(cond))
        if math.isnan(rho):
            tests.append(CheckRecord(tid, kind, left, right, cond, None, None, None, informative,
                                    "no residual variation after conditioning"))
            continue
        stat, pval = fisher_z(rho, data.n, len(cond))
        tests.append(CheckRecord(tid, kind, left, right, cond, rho, stat, pval, informative))

    flags = {}
    for name in zs + ws:
        ps = [t.p_value for t in tests if t.informative and t.p_value is not None and name in (t.left, t.right)]
        flags[name] = relevance_flag(min(ps) if ps else None)
    return ProxyCheckReport(tests, flags)


@dataclass(frozen=True)
class DimensionalityScreen:
    declared_u_dim: int
    z_dim: int
    w_dim: int
    verdicts: dict = field(default_factory=dict)

    @property
    def violated(self) -> bool:
        return "violated" in self.verdicts.values()

    def to_text(self) -> str:
        lines = [
            "Relative dimensionality screen",
            f"  declared dim(U) = {self.declared_u_dim}, dim(Z) = {self.z_dim}, dim(W) = {self.w_dim}",
        ]
        for path, verdict in self.verdicts.items():
            lines.append(f"  {path}: {verdict}")
        lines.append(
            "  Passing is necessary, not sufficient: completeness itself cannot be tested."
        )
        return "\n".join(lines) + "\n"


def dimensionality_screen(roles: ColumnRoles, declared_u_dim: int) -> DimensionalityScreen:
    """Compare proxy counts against the declared dimension of ``U``."""
    if int(declared_u_dim) != declared_u_dim or declared_u_dim < 1:
        raise ValidationError("declared_u_dim must be a positive integer")
    k = int(declared_u_dim)
    zd, wd = len(roles.treatment_proxies), len(roles.outcome_proxies)
    verdict = "necessary-condition-met" if zd >= k and wd >= k else "violated"
    # Both bridges need both proxy sets to be at least as rich as U.
    verdicts = {"outcome_bridge": verdict, "treatment_bridge": verdict}
    return DimensionalityScreen(k, zd, wd, verdicts)


def effective_sample_size(w) -> float:
    w = np.asarray(w, dtype=float)
    ss = float(w @ w)
    return float(w.sum() ** 2 / ss) if ss > 0 else 0.0


def weight_diagnostics(data: Dataset, q_spec: TreatmentBridgeSpec, phi=None) -> dict:
    """Per-arm summary of fitted treatment-bridge weights.

    ``phi`` defaults to the coefficients stored on ``q_spec``.
    """
    counts: dict = {}
    q = eval_q(q_spec, data, phi, diagnostics=counts)
    out = {"clamped_exponents": int(counts.get("q_clamps", 0))}
    for arm in (0, 1):
        w = q[data.a == arm]
        key = f"arm{arm}"
        if w.size == 0:
            out[key] = {"n": 0}
            continue
        out[key] = {
            "n": int(w.size),
            "min_q": float(w.min()),
            "max_q": float(w.max()),
            "mean_q": float(w.mean()),
            "ess": effective_sample_size(w),
        }
    return out
