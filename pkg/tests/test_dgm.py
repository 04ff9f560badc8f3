import dataclasses
import math

import numpy as np
import pytest

from proxie import dgm
from proxie.dgm import (
    BinaryDgm,
    CompletenessFailureDgm,
    LinearGaussianDgm,
    binary_ate_by_enumeration,
    interventional_ate,
    sample,
    true_ate,
)
from proxie.errors import ConfigurationError


def test_degenerate_constants():
    zero = {f.name: 0.0 for f in dataclasses.fields(LinearGaussianDgm)
            if isinstance(f.default, float) and not f.name.startswith("sigma")}
    zero["beta0"] = 1.0
    spec = LinearGaussianDgm(**zero, sigma_u=1e-300, sigma_z=1e-300, sigma_w=1e-300, sigma_y=1e-300)
    d = sample(spec, 100, 0)
    np.testing.assert_array_equal(d.y, np.ones(100))


def test_confounding_sign():
    d = sample(LinearGaussianDgm(mu_a=0.5, beta_u=1.0), 100_000, 3)
    assert np.corrcoef(d.a, d["U"])[0, 1] > 0


@pytest.mark.parametrize("spec", [LinearGaussianDgm(), BinaryDgm(), CompletenessFailureDgm()])
def test_sampling_deterministic(spec):
    assert sample(spec, 300, 42).equals(sample(spec, 300, 42))
    assert not sample(spec, 300, 42).equals(sample(spec, 300, 43))


def test_nonpositive_sd_rejected():
    with pytest.raises(ConfigurationError):
        LinearGaussianDgm(sigma_u=-1.0)


def test_non_pd_residual_covariance_rejected():
    with pytest.raises(ConfigurationError, match="positive definite"):
        LinearGaussianDgm(sigma_zw=1.0)


def test_binary_outcome_mean():
    spec = BinaryDgm(p_y=np.full((2, 2, 2), 0.5))
    n = 100_000
    d = sample(spec, n, 9)
    assert abs(d.y.mean() - 0.5) <= 4 * math.sqrt(0.25 / n)
    for c in ("U", "X", "A", "Z", "W", "Y"):
        assert set(np.unique(d[c])) <= {0.0, 1.0}


def test_binary_w_irrelevant_rejected():
    with pytest.raises(ConfigurationError, match="U-relevant"):
        BinaryDgm(p_w=((0.4, 0.5), (0.4, 0.5)))


def test_binary_probability_bounds():
    with pytest.raises(ConfigurationError):
        BinaryDgm(p_a=((0.0, 0.5), (0.5, 0.5)))
    with pytest.raises(ConfigurationError, match="sum"):
        BinaryDgm(p_ux=((0.3, 0.3), (0.3, 0.3)))


def test_linear_truth_is_beta_a_and_matches_oracle():
    spec = LinearGaussianDgm(beta_a=0.7)
    rec = true_ate(spec)
    assert rec.true_ate == pytest.approx(0.7, abs=1e-12)
    est, se = interventional_ate(spec, draws=1_000_000, seed=5, paired=False)
    assert abs(est - 0.7) <= 3 * se


def test_binary_null_effect():
    p_y = np.full((2, 2, 2), 0.3)
    p_y[1] = 0.6
    spec = BinaryDgm(p_y=p_y)
    assert true_ate(spec).true_ate == pytest.approx(0.0, abs=1e-15)


def test_binary_enumeration_example():
    p_y = np.empty((2, 2, 2))
    p_y[:, 1, :] = 0.8
    p_y[:, 0, :] = 0.3
    spec = BinaryDgm(p_ux=np.full((2, 2), 0.25), p_y=p_y)
    assert binary_ate_by_enumeration(spec) == pytest.approx(0.5, abs=1e-15)


def test_binary_enumeration_matches_potential_outcome_simulation():
    spec = BinaryDgm()
    rng = np.random.default_rng(1)
    m = 400_000
    cell = rng.choice(4, size=m, p=spec.table("p_ux").reshape(-1))
    u, x = cell // 2, cell % 2
    p_y = spec.table("p_y")
    e = rng.random(m)
    diff = (e < p_y[u, 1, x]).astype(float) - (e < p_y[u, 0, x])
    se = diff.std(ddof=1) / math.sqrt(m)
    assert abs(diff.mean() - binary_ate_by_enumeration(spec)) <= 4 * se


def _z_slope(g, d, controls=()):
    x = np.column_stack([np.ones(d.n), d["Z"]] + [d[c] for c in controls])
    coef, *_ = np.linalg.lstsq(x, g, rcond=None)
    resid = g - x @ coef
    cov = np.linalg.inv(x.T @ x) * (resid @ resid) / (d.n - x.shape[1])
    return coef[1], math.sqrt(cov[1, 1])


# U independent of (A, X) with identity covariance, as in the textbook construction
INDEPENDENT_U = dict(mu0=(0.0, 0.0), mu_a=(0.0, 0.0), mu_x=(0.0, 0.0), sigma_u=1.0)


def test_completeness_failure_g_not_predicted_by_z():
    spec = CompletenessFailureDgm(**INDEPENDENT_U)
    d = sample(spec, 100_000, 17)
    g = spec.theta2 * d["U1"] - spec.theta1 * d["U2"]
    b, se = _z_slope(g, d)
    assert abs(b) <= 4 * se


def test_completeness_failure_g_slope_given_a_x_default_model():
    spec = CompletenessFailureDgm()
    d = sample(spec, 100_000, 19)
    g = spec.theta2 * d["U1"] - spec.theta1 * d["U2"]
    b, se = _z_slope(g, d, ("A", "X"))
    assert abs(b) <= 4 * se


def test_completeness_failure_g_variance():
    spec = CompletenessFailureDgm(theta1=0.8, theta2=1.3, **INDEPENDENT_U)
    d = sample(spec, 100_000, 18)
    g = spec.theta2 * d["U1"] - spec.theta1 * d["U2"]
    target = spec.theta1 ** 2 + spec.theta2 ** 2
    assert abs(g.var() / target - 1) < 0.05


def test_completeness_failure_zero_loading_rejected():
    with pytest.raises(ConfigurationError):
        CompletenessFailureDgm(theta1=0.0)


def test_completeness_failure_truth_via_oracle():
    rec = true_ate(CompletenessFailureDgm(beta_a=0.4))
    assert rec.method == "interventional-oracle"
    assert abs(rec.true_ate - 0.4) <= 3 * max(rec.mc_se, 1e-9)


def _partial_corr_given(d, a, b, cond):
    x = np.column_stack([np.ones(d.n)] + [d[c] for c in cond])
    ra = d[a] - x @ np.linalg.lstsq(x, d[a], rcond=None)[0]
    rb = d[b] - x @ np.linalg.lstsq(x, d[b], rcond=None)[0]
    return float(ra @ rb / math.sqrt((ra @ ra) * (rb @ rb)))


def test_proxy_independences_encoded():
    d = sample(LinearGaussianDgm(), 100_000, 21)
    se = 1 / math.sqrt(d.n)
    assert abs(_partial_corr_given(d, "Z", "Y", ("U", "A", "X", "W"))) <= 4 * se
    assert abs(_partial_corr_given(d, "W", "A", ("U", "X"))) <= 4 * se


def test_uzwx_mode_uses_oracle_truth():
    spec = LinearGaussianDgm(treatment_conditioning="on_UZWX", mu_a=0.0, theta_a=0.0,
                             alpha_u=0.8, alpha_z=0.4)
    rec = true_ate(spec)
    assert rec.method == "interventional-oracle"
    assert abs(rec.true_ate - spec.beta_a) <= 3 * max(rec.mc_se, 1e-9)


def test_uzwx_mode_constraints():
    with pytest.raises(ConfigurationError):
        LinearGaussianDgm(treatment_conditioning="on_UZWX")
    with pytest.raises(ConfigurationError):
        LinearGaussianDgm(alpha_u=1.0)


def test_assumption_flags():
    flags = true_ate(LinearGaussianDgm()).assumption_flags
    assert set(flags) == set(dgm.ASSUMPTIONS)
    # A.6: Z independent of Y given (U, A, X); A.7: W independent of (A, Z) given (U, X)
    assert flags["A.6"] == dgm.HOLDS and flags["A.7"] == dgm.HOLDS
    assert flags["A.3"] == dgm.VIOLATED
    bad = true_ate(LinearGaussianDgm(beta_z=0.5)).assumption_flags
    assert bad["A.6"] == dgm.VIOLATED
    bad = true_ate(LinearGaussianDgm(omega_a=0.5)).assumption_flags
    assert bad["A.7"] == dgm.VIOLATED
    cf = true_ate(CompletenessFailureDgm()).assumption_flags
    assert cf["A.9"] == dgm.VIOLATED


def test_valid_pci_reference():
    assert LinearGaussianDgm().is_valid_pci
    assert not LinearGaussianDgm(beta_z=0.3).is_valid_pci


@pytest.mark.parametrize("spec", [LinearGaussianDgm(beta_a=0.2), BinaryDgm(), CompletenessFailureDgm()])
def test_dgm_json_round_trip(spec):
    assert dgm.dgm_from_dict(dgm.dgm_to_dict(spec)) == spec


def test_dgm_from_dict_rejects_unknown():
    with pytest.raises(ConfigurationError):
        dgm.dgm_from_dict({"kind": "nope"})
    with pytest.raises(ConfigurationError):
        dgm.dgm_from_dict({"kind": "linear_gaussian", "params": {"gamma": 1}})
