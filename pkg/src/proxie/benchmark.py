"""Replicated simulation studies with seeded, schedule-independent replications.

Replication ``r`` of a study with master seed ``s`` draws its data from
``numpy.random.SeedSequence([s, r])``. The result of a replication depends
only on ``(spec, n, s, r)``, so the table is the same whatever the number of
worker processes. Workers pin BLAS to one thread because multithreaded
reductions can change low-order bits.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import dgm as dgm_mod
from .bridges import OutcomeBridgeSpec, TreatmentBridgeSpec
from .datamodel import Dataset
from .errors import ConfigurationError, ProxieError
from .estimators import (
    ESTIMATORS,
    BootstrapConfig,
    EstimateResult,
    naive_ipw,
    proximal_dr,
    proximal_g,
    proximal_ipw,
    saturated_binary,
)
from .moments import GmmConfig

BRIDGE_ESTIMATORS = {"proximal_g": "h", "proximal_ipw": "q", "proximal_dr": "hq"}
BOOTSTRAP_ESTIMATORS = {"naive_ipw", "saturated_binary", "proximal_dr"}


def _bridge_from_dict(kind, d, roles):
    if d is None:
        d = {}
    if "basis" in d:
        return OutcomeBridgeSpec.from_dict(d) if kind == "h" else TreatmentBridgeSpec.from_dict(d)
    cov = d.get("covariates", True)
    if kind == "h":
        return OutcomeBridgeSpec.default(roles, link=d.get("link", "identity"), covariates=cov)
    return TreatmentBridgeSpec.default(roles, covariates=cov)


@dataclass(frozen=True)
class EstimatorSpec:
    """One estimator run: its name plus bridge, solver and bootstrap settings.

    ``h_spec`` and ``q_spec`` are plain dicts so the spec can be resolved
    against whatever roles the data carries. A dict with ``basis`` is used
    verbatim; otherwise the default basis is built, dropping ``X`` when
    ``covariates`` is false.
    """

    name: str
    label: Optional[str] = None
    h_spec: Optional[dict] = None
    q_spec: Optional[dict] = None
    gmm: Optional[dict] = None
    bootstrap: Optional[dict] = None

    def __post_init__(self):
        if self.name not in ESTIMATORS:
            raise ConfigurationError(
                f"unknown estimator {self.name!r}; expected one of {sorted(ESTIMATORS)}"
            )
        if self.label is None:
            object.__setattr__(self, "label", self.name)
        if self.bootstrap is not None and self.name not in BOOTSTRAP_ESTIMATORS:
            raise ConfigurationError(f"estimator {self.name!r} does not take a bootstrap block")
        if self.gmm is not None and self.name not in BRIDGE_ESTIMATORS:
            raise ConfigurationError(f"estimator {self.name!r} does not take a gmm block")
        if self.h_spec is not None and "h" not in BRIDGE_ESTIMATORS.get(self.name, ""):
            raise ConfigurationError(f"estimator {self.name!r} does not take an h_spec")
        if self.q_spec is not None and "q" not in BRIDGE_ESTIMATORS.get(self.name, ""):
            raise ConfigurationError(f"estimator {self.name!r} does not take a q_spec")

    def gmm_config(self) -> GmmConfig:
        return GmmConfig(**(self.gmm or {}))

    def bootstrap_config(self) -> Optional[BootstrapConfig]:
        return None if self.bootstrap is None else BootstrapConfig(**self.bootstrap)

    def run(self, data: Dataset) -> EstimateResult:
        roles = data.roles
        if self.name == "proximal_g":
            return proximal_g(data, _bridge_from_dict("h", self.h_spec, roles), self.gmm_config())
        if self.name == "proximal_ipw":
            return proximal_ipw(data, _bridge_from_dict("q", self.q_spec, roles), self.gmm_config())
        if self.name == "proximal_dr":
            return proximal_dr(
                data,
                _bridge_from_dict("h", self.h_spec, roles),
                _bridge_from_dict("q", self.q_spec, roles),
                self.gmm_config(),
                self.bootstrap_config(),
            )
        if self.name == "naive_ipw":
            return naive_ipw(data, self.bootstrap_config())
        if self.name == "saturated_binary":
            return saturated_binary(data, self.bootstrap_config())
        return ESTIMATORS[self.name](data)

    def to_dict(self) -> dict:
        d = {"name": self.name, "label": self.label}
        for key in ("h_spec", "q_spec", "gmm", "bootstrap"):
            if getattr(self, key) is not None:
                d[key] = getattr(self, key)
        return d

    @classmethod
    def from_dict(cls, d) -> "EstimatorSpec":
        return cls(**d)


def replication_seed(master: int, index: int) -> np.random.SeedSequence:
    """Seed sequence for replication ``index`` under master seed ``master``."""
    return np.random.SeedSequence([int(master), int(index)])


@dataclass
class ReplicationRow:
    replication: int
    estimator: str
    ate_hat: float = math.nan
    se: float = math.nan
    ci_low: float = math.nan
    ci_high: float = math.nan
    converged: bool = False
    error: str = ""


def run_replication(spec, n: int, master: int, index: int, estimators: Sequence[EstimatorSpec]):
    data = dgm_mod.sample(spec, n, replication_seed(master, index)).observed()
    rows = []
    for est in estimators:
        row = ReplicationRow(index, est.label)
        try:
            res = est.run(data)
        except (ProxieError, np.linalg.LinAlgError, ValueError) as exc:
            row.error = f"{type(exc).__name__}: {exc}"
        else:
            row.ate_hat = res.ate_hat
            row.se = math.nan if res.se is None else res.se
            row.ci_low = math.nan if res.ci_low is None else res.ci_low
            row.ci_high = math.nan if res.ci_high is None else res.ci_high
            row.converged = bool(res.converged)
        rows.append(row)
    return rows


def _job(args):
    with threadpool_limits(limits=1):
        return run_replication(*args)


@dataclass
class SummaryRow:
    estimator: str
    replications: int
    ok: int
    mean_bias: float
    mc_se: Optional[float]
    emp_sd: Optional[float]
    mean_se: Optional[float]
    coverage: Optional[float]
    convergence_rate: float

    def bias_in_mc_se(self) -> Optional[float]:
        if self.mc_se is None or self.mc_se == 0:
            return None
        return self.mean_bias / self.mc_se


def summarize(rows: Sequence[ReplicationRow], labels: Sequence[str], truth: float, replications: int):
    """Aggregate replication rows per estimator in replication-index order."""
    out = []
    for label in labels:
        mine = sorted((r for r in rows if r.estimator == label), key=lambda r: r.replication)
        ok = [r for r in mine if not r.error and math.isfinite(r.ate_hat)]
        est = np.array([r.ate_hat for r in ok])
        conv = sum(1 for r in mine if r.converged and not r.error)
        if est.size == 0:
            out.append(SummaryRow(label, replications, 0, math.nan, None, None, None, None, 0.0))
            continue
        bias = float(np.mean(est) - truth)
        sd = float(np.std(est, ddof=1)) if est.size > 1 else None
        mc_se = sd / math.sqrt(est.size) if sd is not None else None
        ses = np.array([r.se for r in ok if math.isfinite(r.se)])
        mean_se = float(ses.mean()) if ses.size else None
        cis = [(r.ci_low, r.ci_high) for r in ok if math.isfinite(r.ci_low) and math.isfinite(r.ci_high)]
        coverage = (
            float(np.mean([lo <= truth <= hi for lo, hi in cis])) if cis else None
        )
        out.append(SummaryRow(label, replications, int(est.size), bias, mc_se, sd, mean_se,
                              coverage, conv / len(mine)))
    return out


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class BenchmarkResult:
    truth: float
    truth_mc_se: float
    rows: list
    table: list
    n: int
    replications: int
    seed: int
    config: dict = field(default_factory=dict)

    def summary(self, label: str) -> SummaryRow:
        for s in self.table:
            if s.estimator == label:
                return s
        raise KeyError(label)

    def table_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["estimator", "replications", "ok", "true_ate", "mean_bias", "mc_se",
                    "emp_sd", "mean_se", "coverage", "convergence_rate"])
        for s in self.table:
            w.writerow([s.estimator, s.replications, s.ok, _fmt(self.truth), _fmt(s.mean_bias),
                        _fmt(s.mc_se), _fmt(s.emp_sd), _fmt(s.mean_se), _fmt(s.coverage),
                        _fmt(s.convergence_rate)])
        return buf.getvalue()

    def replications_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["replication", "estimator", "ate_hat", "se", "ci_low", "ci_high",
                    "converged", "error"])
        for r in sorted(self.rows, key=lambda r: (r.replication, self._order(r.estimator))):
            w.writerow([r.replication, r.estimator, _fmt(r.ate_hat), _fmt(r.se), _fmt(r.ci_low),
                        _fmt(r.ci_high), int(r.converged), r.error])
        return buf.getvalue()

    def _order(self, label):
        return [s.estimator for s in self.table].index(label)

    def text(self) -> str:
        def num(v, spec=".5f"):
            return "-" if v is None or (isinstance(v, float) and math.isnan(v)) else format(v, spec)

        lines = [
            f"true ATE {self.truth:.6f} (oracle MC SE {self.truth_mc_se:.2g}); "
            f"n = {self.n}, replications = {self.replications}, master seed = {self.seed}",
            "",
            f"{'estimator':<22}{'bias':>11}{'MC SE':>10}{'bias/MCSE':>11}{'emp SD':>10}"
            f"{'mean SE':>10}{'coverage':>10}{'conv':>7}",
        ]
        for s in self.table:
            lines.append(
                f"{s.estimator:<22}{num(s.mean_bias):>11}{num(s.mc_se):>10}"
                f"{num(s.bias_in_mc_se(), '.2f'):>11}{num(s.emp_sd):>10}{num(s.mean_se):>10}"
                f"{num(s.coverage, '.3f'):>10}{num(s.convergence_rate, '.2f'):>7}"
            )
        return "\n".join(lines) + "\n"


def run_benchmark(
    spec,
    estimators: Sequence[EstimatorSpec],
    n: int,
    replications: int,
    seed: int,
    threads: int = 1,
    truth: Optional[dgm_mod.TruthRecord] = None,
) -> BenchmarkResult:
    """Run ``replications`` seeded replications and tabulate them against the true ATE."""
    if replications < 1:
        raise ConfigurationError("replications must be at least 1")
    if threads < 1:
        raise ConfigurationError("threads must be at least 1")
    labels = [e.label for e in estimators]
    if len(set(labels)) != len(labels):
        raise ConfigurationError(f"estimator labels must be unique, got {labels}")
    truth = truth or dgm_mod.true_ate(spec)
    jobs = [(spec, n, seed, r, tuple(estimators)) for r in range(replications)]
    if threads == 1:
        results = [_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_job, jobs, chunksize=max(1, replications // (4 * threads))))
    rows = [row for rep in results for row in rep]
    table = summarize(rows, labels, truth.true_ate, replications)
    return BenchmarkResult(truth.true_ate, truth.mc_se, rows, table, n, replications, seed)
