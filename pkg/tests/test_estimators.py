import math

import numpy as np
import pytest

from proxie.bridges import OutcomeBridgeSpec, TreatmentBridgeSpec, q_weighted_outcome
from proxie.datamodel import ColumnRoles, Dataset
from proxie.dgm import BinaryDgm, LinearGaussianDgm, binary_population_tables, sample, true_ate
from proxie.errors import (
    CellSupportError,
    InferenceUnreliableError,
    NearSingularityError,
    RankDeficiencyError,
    ValidationError,
)
from proxie.estimators import (
    BootstrapConfig,
    EstimateResult,
    bootstrap,
    naive_ipw,
    naive_or,
    proximal_dr,
    proximal_g,
    proximal_ipw,
    saturated_binary,
    solve_saturated_cell,
    two_stage_linear,
)
from proxie.moments import GmmConfig

ROLES = ColumnRoles("Y", "A", ("X",), ("Z",), ("W",))
UNCONFOUNDED = LinearGaussianDgm(beta_u=0.0, beta_w=0.0)


@pytest.fixture(scope="module")
def unconfounded():
    return sample(UNCONFOUNDED, 20_000, 31).observed()


def test_naive_or_unconfounded(unconfounded):
    r = naive_or(unconfounded)
    assert abs(r.ate_hat - UNCONFOUNDED.beta_a) <= 3 * r.se


def test_naive_or_constant_outcome(pci_data):
    cols = {c: pci_data[c] for c in pci_data.roles.observed}
    cols["Y"] = np.full(pci_data.n, 4.2)
    r = naive_or(Dataset(cols, pci_data.roles))
    assert r.ate_hat == pytest.approx(0.0, abs=1e-12)
    assert r.se == pytest.approx(0.0, abs=1e-12)


def test_naive_or_collinear():
    n = 50
    rng = np.random.default_rng(0)
    a = (np.arange(n) % 2).astype(float)
    d = Dataset({"Y": rng.standard_normal(n), "A": a, "X": 3 * a, "Z": rng.standard_normal(n),
                 "W": rng.standard_normal(n)}, ROLES)
    with pytest.raises(RankDeficiencyError):
        naive_or(d)


def test_naive_ipw_balanced_covariate_is_difference_in_means():
    rng = np.random.default_rng(5)
    m = 500
    x = rng.standard_normal(m)
    a = np.r_[np.ones(m), np.zeros(m)]
    y = rng.standard_normal(2 * m) + 0.5 * a
    d = Dataset({"Y": y, "A": a, "X": np.r_[x, x], "Z": rng.standard_normal(2 * m),
                 "W": rng.standard_normal(2 * m)}, ROLES)
    r = naive_ipw(d, None)
    dim = y[a == 1].mean() - y[a == 0].mean()
    assert abs(r.ate_hat - dim) <= 1e-6
    assert r.se is None


def test_naive_ipw_unconfounded(unconfounded):
    r = naive_ipw(unconfounded, BootstrapConfig(replicates=100, seed=3))
    assert abs(r.ate_hat - UNCONFOUNDED.beta_a) <= 3 * r.se
    assert r.diagnostics["bootstrap_failed"] == 0


def test_naive_ipw_positivity_warning():
    n = 400
    rng = np.random.default_rng(1)
    x = rng.standard_normal(n)
    a = (x > 0).astype(float)
    a[0], a[-1] = 1 - a[0], 1 - a[-1]
    x[0], x[-1] = 40 * np.sign(x[0]), 40 * np.sign(x[-1])
    d = Dataset({"Y": rng.standard_normal(n), "A": a, "X": x * 5, "Z": rng.standard_normal(n),
                 "W": rng.standard_normal(n)}, ROLES)
    r = naive_ipw(d, None)
    assert "positivity_warning" in r.diagnostics
    assert math.isfinite(r.ate_hat)


def test_proximal_g_equals_eta_a(pci_data):
    r = proximal_g(pci_data)
    assert r.ate_hat == pytest.approx(r.diagnostics["eta"][2], abs=1e-12)
    assert r.ci_low <= r.ate_hat <= r.ci_high
    assert r.converged


def test_proximal_g_reduces_to_naive_or_with_null_proxies(unconfounded):
    cols = {c: unconfounded[c] for c in unconfounded.roles.observed}
    cols["Z"] = np.zeros(unconfounded.n)
    cols["W"] = np.zeros(unconfounded.n)
    d = Dataset(cols, ROLES)
    h = OutcomeBridgeSpec(("1", "A", "X"))
    assert proximal_g(d, h).ate_hat == pytest.approx(naive_or(d).ate_hat, abs=1e-8)


def test_proximal_g_gauss_newton_matches_direct(pci_data):
    a = proximal_g(pci_data, config=GmmConfig(solver="direct_linear"))
    b = proximal_g(pci_data, config=GmmConfig(solver="gauss_newton"))
    assert a.ate_hat == pytest.approx(b.ate_hat, abs=1e-8)
    assert a.se == pytest.approx(b.se, rel=1e-6)


def test_proximal_g_overidentified_runs(pci_data):
    h = OutcomeBridgeSpec(OutcomeBridgeSpec.default(ROLES).basis, extra_instruments=("A*Z",))
    r = proximal_g(pci_data, h)
    assert r.converged and r.se > 0


def test_proximal_g_logit_link_binary():
    d = sample(BinaryDgm(), 5000, 2).observed()
    r = proximal_g(d, OutcomeBridgeSpec.default(d.roles, link="logit"))
    assert math.isfinite(r.ate_hat) and r.se > 0


def test_two_stage_equals_proximal_g(pci_data):
    assert two_stage_linear(pci_data).ate_hat == pytest.approx(proximal_g(pci_data).ate_hat, abs=1e-8)
    assert two_stage_linear(pci_data).se == pytest.approx(proximal_g(pci_data).se, rel=1e-6)


def test_two_stage_duplicated_z_names_stage_one():
    roles = ColumnRoles("Y", "A", ("X",), ("Z1", "Z2"), ("W",))
    rng = np.random.default_rng(0)
    n = 200
    z = rng.standard_normal(n)
    d = Dataset({"Y": rng.standard_normal(n), "A": (np.arange(n) % 2).astype(float),
                 "X": rng.standard_normal(n), "Z1": z, "Z2": z, "W": rng.standard_normal(n)}, roles)
    with pytest.raises(RankDeficiencyError, match="stage 1"):
        two_stage_linear(d)


def test_two_stage_vector_w():
    roles = ColumnRoles("Y", "A", ("X",), ("Z1", "Z2"), ("W1", "W2"))
    rng = np.random.default_rng(8)
    n = 3000
    u = rng.standard_normal(n)
    x = rng.standard_normal(n)
    a = (rng.random(n) < 0.5).astype(float)
    d = Dataset({
        "Y": a + u + rng.standard_normal(n), "A": a, "X": x,
        "Z1": u + rng.standard_normal(n), "Z2": x * u + rng.standard_normal(n),
        "W1": u + rng.standard_normal(n), "W2": -u + rng.standard_normal(n)}, roles)
    assert two_stage_linear(d).ate_hat == pytest.approx(proximal_g(d).ate_hat, abs=1e-8)


def test_ipw_phi_zero_plugin(pci_data):
    spec = TreatmentBridgeSpec.default(ROLES)
    contribution, _ = q_weighted_outcome(spec)
    val = contribution(pci_data, np.zeros(4)).mean()
    a, y = pci_data.a, pci_data.y
    assert val == pytest.approx(2 * np.mean(a * y - (1 - a) * y), rel=1e-12)


def test_q_two_balanced_is_difference_in_means():
    rng = np.random.default_rng(2)
    n = 1000
    a = (np.arange(n) % 2).astype(float)
    y = rng.standard_normal(n) + a
    d = Dataset({"Y": y, "A": a, "X": rng.standard_normal(n), "Z": rng.standard_normal(n),
                 "W": rng.standard_normal(n)}, ROLES)
    contribution, _ = q_weighted_outcome(TreatmentBridgeSpec.default(ROLES))
    dim = y[a == 1].mean() - y[a == 0].mean()
    assert contribution(d, np.zeros(4)).mean() == pytest.approx(dim, abs=1e-12)


def test_proximal_ipw_diagnostics(pci_data):
    r = proximal_ipw(pci_data)
    assert r.converged
    assert 1.0 < r.diagnostics["min_q"] <= r.diagnostics["max_q"] < math.inf
    assert r.diagnostics["q_clamps"] == 0
    assert r.ci_low <= r.ate_hat <= r.ci_high


def test_proximal_dr_close_to_truth(pci_data):
    r = proximal_dr(pci_data)
    assert abs(r.ate_hat - 0.7) <= 4 * r.se
    assert r.converged


def test_proximal_dr_bootstrap_option(pci_data):
    small = pci_data.take(np.arange(1000))
    r = proximal_dr(small, bootstrap_config=BootstrapConfig(replicates=30, seed=1, ci_method="normal"))
    assert r.diagnostics["bootstrap_replicates"] == 30
    assert r.se > 0
    assert r.ci_low == pytest.approx(r.ate_hat - 1.959963984540054 * r.se)


def test_proximal_dr_nonconvergence_flagged(pci_data):
    r = proximal_dr(pci_data, config=GmmConfig(max_iter=1))
    assert not r.converged
    assert "warning" in r.diagnostics
    assert math.isfinite(r.ate_hat)


def test_saturated_hand_inverted_cell():
    h = solve_saturated_cell([[0.7, 0.3], [0.4, 0.6]], [1.0, 2.0])
    np.testing.assert_allclose(h, [0.0, 10 / 3], atol=1e-12)


def test_saturated_equal_rows_near_singular():
    with pytest.raises(NearSingularityError):
        solve_saturated_cell([[0.6, 0.4], [0.6, 0.4]], [1.0, 2.0])


def test_saturated_population_tables_recover_truth():
    spec = BinaryDgm()
    tables = binary_population_tables(spec)
    p_wx = tables["p_wx"]
    ate = 0.0
    for x in (0, 1):
        h1 = solve_saturated_cell(*tables[(1, x)])
        h0 = solve_saturated_cell(*tables[(0, x)])
        ate += float(p_wx[:, x] @ (h1 - h0))
    assert ate == pytest.approx(true_ate(spec).true_ate, abs=1e-12)


def _binary_rows(counts):
    """Dataset with ``counts[(a, x, z, w, y)]`` copies of each binary row."""
    rows = [k for k, c in counts.items() for _ in range(c)]
    arr = np.array(rows, dtype=float)
    return Dataset({"A": arr[:, 0], "X": arr[:, 1], "Z": arr[:, 2], "W": arr[:, 3], "Y": arr[:, 4]}, ROLES)


def test_saturated_sample_equal_rows_raises():
    counts = {}
    for a in (0, 1):
        for x in (0, 1):
            for z in (0, 1):
                counts[(a, x, z, 0, 0)] = 3
                counts[(a, x, z, 1, 1)] = 2
    with pytest.raises(NearSingularityError):
        saturated_binary(_binary_rows(counts), None)


def test_saturated_empty_cell_listed():
    counts = {(a, x, z, w, 1): 2 for a in (0, 1) for x in (0, 1) for z in (0, 1) for w in (0, 1)}
    del counts[(1, 0, 1, 0, 1)], counts[(1, 0, 1, 1, 1)]
    with pytest.raises(CellSupportError) as info:
        saturated_binary(_binary_rows(counts), None)
    assert list(info.value.cells) == [{"a": 1, "x": 0, "z": 1}]


def test_saturated_rejects_continuous(pci_data):
    with pytest.raises(ValidationError):
        saturated_binary(pci_data, None)


def test_saturated_binary_bootstrap():
    d = sample(BinaryDgm(), 20_000, 4).observed()
    r = saturated_binary(d, BootstrapConfig(replicates=40, seed=2))
    assert r.se > 0 and r.ci_low < r.ci_high
    assert abs(r.ate_hat - 0.3) <= 4 * r.se


def test_bootstrap_constant_estimator(pci_data):
    r = bootstrap(pci_data, lambda d: 1.5, BootstrapConfig(replicates=20, seed=0))
    assert r.se == 0.0
    assert r.ate_hat == 1.5


def test_bootstrap_sample_mean_clt():
    rng = np.random.default_rng(12)
    n = 10_000
    d = Dataset({"Y": rng.standard_normal(n), "A": (np.arange(n) % 2).astype(float),
                 "X": np.zeros(n), "Z": np.zeros(n), "W": np.zeros(n)}, ROLES)
    r = bootstrap(d, lambda dd: float(dd.y.mean()), BootstrapConfig(replicates=1000, seed=1))
    assert abs(r.se / 0.01 - 1) <= 0.15


def test_bootstrap_deterministic(pci_data):
    small = pci_data.take(np.arange(800))
    cfg = BootstrapConfig(replicates=25, seed=99)
    assert bootstrap(small, naive_or, cfg).se == bootstrap(small, naive_or, cfg).se


def test_bootstrap_too_many_failures(pci_data):
    calls = {"k": 0}

    def flaky(d):
        calls["k"] += 1
        if calls["k"] > 1 and calls["k"] % 3 == 0:
            return EstimateResult("flaky", 0.0, converged=False)
        return 0.0

    with pytest.raises(InferenceUnreliableError):
        bootstrap(pci_data.take(np.arange(100)), flaky, BootstrapConfig(replicates=30))


def test_bootstrap_failures_counted(pci_data):
    calls = {"k": 0}

    def flaky(d):
        calls["k"] += 1
        if calls["k"] in (2, 3):
            raise RankDeficiencyError("boom")
        return float(d.y.mean())

    r = bootstrap(pci_data.take(np.arange(100)), flaky, BootstrapConfig(replicates=20))
    assert r.diagnostics["bootstrap_failed"] == 2


def test_bootstrap_config_validation():
    with pytest.raises(ValueError):
        BootstrapConfig(replicates=0)
    with pytest.raises(ValueError):
        BootstrapConfig(ci_method="bca")
