import math

import numpy as np
import pytest
from scipy.special import expit

from sdglm import glm
from sdglm.errors import DegenerateVarianceError, InputError
from sdglm.glm import Dataset, LossKind
from sdglm.inference import (
    RestrictionSpec,
    confidence_interval,
    debias,
    infer,
    normal_cdf,
    two_sided_p,
    variance_alpha,
    wald_test,
)
from sdglm.nodewise import NodewiseConfig, PrecisionEstimate, estimate_precision, weighted_design
from sdglm.norms import GroupPartition, NormSpec
from sdglm.solver import fit, lambda_max

from pipelines import gaussian_null_z

LOG, GAU = LossKind.LOGISTIC, LossKind.GAUSSIAN


def exact_precision(M, rows=None):
    """PrecisionEstimate holding rows of the dense inverse of ``M``."""
    inv = np.linalg.inv(M)
    rows = range(M.shape[0]) if rows is None else rows
    z = {j: 0.0 for j in rows}
    return PrecisionEstimate({j: inv[j] for j in rows}, {}, {}, z, z)


def gaussian_data(rng, n=60, p=4):
    X = rng.normal(size=(n, p))
    return Dataset(X @ rng.normal(size=p) + rng.normal(size=n), X)


def test_zero_gradient_leaves_estimate_unchanged(rng):
    d = Dataset([1.0, 2.0], np.eye(2))
    theta = exact_precision(rng.normal(size=(2, 2)) + 3 * np.eye(2))
    assert debias([1.0, 2.0], theta, d, GAU) == {0: 1.0, 1: 2.0}


def test_exact_inverse_debiases_to_least_squares(rng):
    d = gaussian_data(rng)
    theta = exact_precision(d.X.T @ d.X / d.n)
    ols = np.linalg.solve(d.X.T @ d.X, d.X.T @ d.y)
    starts = [np.zeros(4), rng.normal(size=4) * 5, ols + 1.0]
    results = [np.array(list(debias(b, theta, d, GAU).values())) for b in starts]
    for b in results:
        assert np.abs(b - ols).max() <= 1e-10
    assert np.abs(results[0] - results[1]).max() <= 1e-10


def test_logistic_closed_form(rng):
    X = rng.normal(size=(50, 3))
    y = (rng.random(50) < 0.5).astype(float)
    d = Dataset(y, X)
    beta = rng.normal(size=3) * 0.3
    theta = exact_precision(X.T @ X / 50 + np.eye(3))
    b = debias(beta, theta, d, LOG)
    ref = beta + np.linalg.inv(X.T @ X / 50 + np.eye(3)) @ (X.T @ (y - expit(X @ beta)) / 50)
    np.testing.assert_allclose([b[j] for j in range(3)], ref, atol=1e-14)


def test_missing_row_is_an_input_error(rng):
    d = gaussian_data(rng)
    theta = exact_precision(np.eye(4), rows=[0, 1])
    with pytest.raises(InputError):
        debias(np.zeros(4), theta, d, GAU, rows=[2])
    with pytest.raises(InputError):
        variance_alpha([0, 0, 1.0, 0], theta, d, GAU, np.zeros(4))


def test_variance_unit_direction_is_sigma_j(rng):
    d = gaussian_data(rng)
    beta = rng.normal(size=4)
    theta = exact_precision(d.X.T @ d.X / d.n)
    A = glm.score_variance_matrix(GAU, d, beta)
    for j in range(4):
        e = np.eye(4)[j]
        ref = math.sqrt(theta.rows[j] @ A @ theta.rows[j])
        assert variance_alpha(e, theta, d, GAU, beta) == pytest.approx(ref, rel=1e-12)
    alpha = rng.normal(size=4)
    u = sum(alpha[j] * theta.rows[j] for j in range(4))
    assert variance_alpha(alpha, theta, d, GAU, beta) ** 2 == pytest.approx(u @ A @ u, rel=1e-12)


def test_variance_uses_only_support_rows(rng):
    d = gaussian_data(rng)
    beta = rng.normal(size=4)
    full = exact_precision(d.X.T @ d.X / d.n)
    part = exact_precision(d.X.T @ d.X / d.n, rows=[1, 3])
    alpha = np.array([0.0, 0.6, 0.0, 0.8])
    a = variance_alpha(alpha, full, d, GAU, beta)
    b = variance_alpha(alpha, part, d, GAU, beta)
    c = variance_alpha(RestrictionSpec(alpha), part, d, GAU, beta)
    assert a == b == c


def test_degenerate_variance_raises():
    d = Dataset([1.0, 2.0, 3.0], np.array([[1.0], [2.0], [3.0]]))
    theta = exact_precision(np.eye(1))
    with pytest.raises(DegenerateVarianceError):
        variance_alpha([1.0], theta, d, GAU, [1.0])
    with pytest.raises(DegenerateVarianceError):
        wald_test(RestrictionSpec([1.0, 0.0]), {0: 1.0}, 0.0, 10)


def test_wald_examples():
    r = RestrictionSpec([1.0, 0.0, 0.0], null_value=0.3)
    assert wald_test(r, {0: 0.3}, 1.0, 50) == (0.0, 1.0)
    assert two_sided_p(1.959964) == pytest.approx(0.05, abs=1e-4)
    assert normal_cdf(0.0) == 0.5
    assert two_sided_p(-3.0) == two_sided_p(3.0)


def test_sign_equivariance(rng):
    for _ in range(50):
        alpha = np.r_[rng.normal(size=3), 0.0]
        b = {j: v for j, v in enumerate(rng.normal(size=3))}
        null = rng.normal()
        z, p = wald_test(RestrictionSpec(alpha, null), b, 0.7, 80)
        zn, pn = wald_test(RestrictionSpec(-alpha, -null), b, 0.7, 80)
        assert zn == pytest.approx(-z, rel=1e-14, abs=1e-14)
        assert pn == pytest.approx(p, rel=1e-12)


def test_interval_test_duality(rng):
    for _ in range(2000):
        b = {0: rng.normal()}
        sigma, n = rng.uniform(0.2, 3), int(rng.integers(10, 500))
        delta = rng.uniform(0.01, 0.5)
        null = b[0] + rng.normal() * 3 * sigma / math.sqrt(n)
        lo, hi = confidence_interval(0, b, sigma, n, delta)
        _, p = wald_test(RestrictionSpec([1.0, 0.0], null), b, sigma, n)
        assert (lo <= null <= hi) == (p >= delta)


def test_interval_examples():
    lo, hi = confidence_interval(0, {0: 0.0}, 1.0, 100, 0.05)
    assert hi == pytest.approx(0.19600, abs=1e-5)
    assert lo == -hi
    lo, hi = confidence_interval(0, {0: 2.0}, 1.0, 100, 1 - 1e-15)
    assert hi - lo < 1e-12
    with pytest.raises(InputError):
        confidence_interval(0, {0: 0.0}, 1.0, 100, 1.0)


def test_restriction_spec():
    r = RestrictionSpec([3.0, 0.0, 4.0, 0.0], null_value=5.0)
    assert abs(np.linalg.norm(r.alpha) - 1) <= 1e-12
    assert r.null_value == 1.0 and r.coordinates.tolist() == [0, 2] and r.h == 2
    j = RestrictionSpec.joint([1, 2], [0.5, 0.5], 5)
    np.testing.assert_allclose(j.alpha, [0, 1 / math.sqrt(2), 1 / math.sqrt(2), 0, 0])
    assert j.null_value == pytest.approx(1 / math.sqrt(2))
    with pytest.raises(InputError):
        RestrictionSpec([1.0, 1.0])
    with pytest.raises(InputError):
        RestrictionSpec([0.0, 0.0])
    with pytest.raises(InputError):
        RestrictionSpec.joint([1, 1], [0, 0], 4)


def test_gaussian_sigma_close_to_noise_level():
    rng = np.random.default_rng(5)
    n, p = 500, 5
    sig = []
    for _ in range(200):
        X = rng.normal(size=(n, p))
        d = Dataset(X @ np.r_[1.0, np.zeros(p - 1)] + rng.normal(size=n), X)
        beta = fit(d, GAU, NormSpec.l1(p), 0.0).beta_hat
        theta = estimate_precision(weighted_design(d, GAU, beta), NodewiseConfig([2], lambda_nw=0.0))
        sig.append(variance_alpha(np.eye(p)[2], theta, d, GAU, beta))
    assert abs(np.mean(sig) - 1.0) <= 0.15


def test_infer_report_invariants(rng):
    X = rng.normal(size=(120, 12))
    y = (rng.random(120) < expit(X[:, 0])).astype(float)
    d = Dataset(y, X, intercept=True)
    spec = NormSpec.group_lasso(GroupPartition.contiguous([3, 3, 3, 3]))
    beta = fit(d, LOG, spec, 0.3 * lambda_max(d, LOG, spec)).beta_hat
    theta = estimate_precision(weighted_design(d, LOG, beta), NodewiseConfig([1, 2, 5], folds=3, grid_len=5))
    rep = infer(RestrictionSpec.joint([1, 2], [0, 0], 13), beta, theta, d, LOG, (5,))
    assert 0 <= rep.p_value <= 1 and math.isfinite(rep.z)
    lo, hi = rep.intervals[5]
    assert lo <= rep.b_hat[5] <= hi
    assert set(rep.to_dict()["b_hat"]) == {"1", "2", "5"}


def test_gaussian_null_z_is_finite():
    zs = [gaussian_null_z(s) for s in range(3)]
    assert all(math.isfinite(z) for z in zs)
