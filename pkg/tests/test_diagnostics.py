import numpy as np
import pytest

from proxie.bridges import TreatmentBridgeSpec
from proxie.datamodel import ColumnRoles, Dataset
from proxie.dgm import LinearGaussianDgm, sample
from proxie.diagnostics import (
    CAVEAT,
    dimensionality_screen,
    effective_sample_size,
    fisher_z,
    partial_correlation,
    partial_correlation_precision,
    proxy_checks,
    relevance_flag,
    weight_diagnostics,
)
from proxie.errors import ValidationError
from proxie.estimators import proximal_ipw

ROLES = ColumnRoles("Y", "A", ("X",), ("Z",), ("W",))


def test_partial_correlation_two_implementations_agree():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = int(rng.integers(30, 400))
        k = int(rng.integers(0, 4))
        mix = rng.standard_normal((k + 2, k + 2))
        data = rng.standard_normal((n, k + 2)) @ mix
        cond = data[:, 2:] if k else None
        a = partial_correlation(data[:, 0], data[:, 1], cond)
        b = partial_correlation_precision(data[:, 0], data[:, 1], cond)
        assert abs(a - b) <= 1e-10


def test_fisher_z_zero_correlation():
    z, p = fisher_z(0.0, 100, 2)
    assert z == 0.0 and p == 1.0


def test_fisher_z_too_few_rows():
    with pytest.raises(ValidationError):
        fisher_z(0.1, 5, 2)


def test_relevance_thresholds():
    assert relevance_flag(0.001) == "relevant_evidence"
    assert relevance_flag(0.05) == "weak"
    assert relevance_flag(0.5) == "none"
    assert relevance_flag(None) == "none"


def test_valid_pci_z_w_association():
    d = sample(LinearGaussianDgm(), 100_000, 8).observed()
    rep = proxy_checks(d)
    t = rep.test("Z-W|A,X", "Z", "W")
    assert t.p_value < 0.001 and t.informative
    assert rep.flags == {"Z": "relevant_evidence", "W": "relevant_evidence"}
    assert rep.caveat == CAVEAT and CAVEAT in rep.to_text()


def test_irrelevant_w_flagged_none():
    d = sample(LinearGaussianDgm(omega_u=0.0, omega_x=0.0), 20_000, 3).observed()
    rep = proxy_checks(d)
    assert rep.test("W-A|X", "W", "A").p_value >= 0.01
    assert rep.flags["W"] == "none"


def test_report_ranges_and_csv(pci_data):
    rep = proxy_checks(pci_data)
    assert len(rep.tests) == 5
    for t in rep.tests:
        assert -1 <= t.partial_corr <= 1
        assert 0 <= t.p_value <= 1
    lines = rep.to_csv().strip().splitlines()
    assert len(lines) == 6
    assert lines[0].startswith("test_id,kind")
    kinds = {t.kind: t.informative for t in rep.tests}
    assert kinds == {"Z-Y|A,X": True, "W-A|X": True, "Z-W|A,X": True,
                     "Z-A|X": False, "W-Y|A,X": False}


def test_affine_rescaling_invariance(pci_data):
    base = proxy_checks(pci_data)
    for col in pci_data.roles.observed:
        if col == "A":
            continue
        cols = {c: pci_data[c] for c in pci_data.roles.observed}
        cols[col] = 3 * cols[col] + 1
        other = proxy_checks(Dataset(cols, pci_data.roles))
        for t0, t1 in zip(base.tests, other.tests):
            assert abs(t0.partial_corr - t1.partial_corr) <= 1e-10


def test_constant_column_skipped(pci_data):
    cols = {c: pci_data[c] for c in pci_data.roles.observed}
    cols["Z"] = np.ones(pci_data.n)
    rep = proxy_checks(Dataset(cols, pci_data.roles))
    skipped = [t for t in rep.tests if t.skipped]
    assert {t.kind for t in skipped} == {"Z-Y|A,X", "Z-W|A,X", "Z-A|X"}
    assert all("constant" in t.skipped for t in skipped)
    assert "skipped" in rep.to_text()


def test_too_few_rows(pci_data):
    with pytest.raises(ValidationError):
        proxy_checks(pci_data.take(np.arange(8)))


@pytest.mark.parametrize("u_dim,z,w,expected", [
    (2, 1, 1, "violated"),
    (1, 1, 1, "necessary-condition-met"),
    (1, 3, 1, "necessary-condition-met"),
    (2, 3, 1, "violated"),
])
def test_dimensionality(u_dim, z, w, expected):
    roles = ColumnRoles("Y", "A", ("X",), tuple(f"Z{i}" for i in range(z)), tuple(f"W{i}" for i in range(w)))
    screen = dimensionality_screen(roles, u_dim)
    assert set(screen.verdicts.values()) == {expected}
    assert screen.violated == (expected == "violated")
    assert "necessary" in screen.to_text()


def test_dimensionality_requires_positive_dim():
    with pytest.raises(ValidationError):
        dimensionality_screen(ROLES, 0)


def test_weight_diagnostics_constant_q(pci_data):
    spec = TreatmentBridgeSpec.default(ROLES).with_phi([0, 0, 0, 0])
    out = weight_diagnostics(pci_data, spec)
    n1 = int(pci_data.a.sum())
    assert out["arm1"]["ess"] == pytest.approx(n1)
    assert out["arm0"]["ess"] == pytest.approx(pci_data.n - n1)
    assert out["arm1"]["min_q"] == out["arm1"]["max_q"] == 2.0


def test_ess_extreme_weight():
    w = np.ones(100)
    w[0] = 1e9
    assert effective_sample_size(w) == pytest.approx(1.0, abs=1e-6)


def test_weight_diagnostics_fitted(pci_data):
    r = proximal_ipw(pci_data)
    spec = TreatmentBridgeSpec.default(ROLES).with_phi(r.diagnostics["phi"])
    out = weight_diagnostics(pci_data, spec)
    assert out["clamped_exponents"] == 0
    assert np.isfinite(out["arm0"]["max_q"]) and np.isfinite(out["arm1"]["max_q"])
