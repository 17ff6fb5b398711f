import math

import numpy as np
import pytest

from sdglm import glm
from sdglm.errors import ConfigError, SdglmError
from sdglm.glm import LossKind
from sdglm.inference import RestrictionSpec, wald_test
from sdglm.norms import NormSpec
from sdglm.simulate import (
    IterationRecord,
    SimConfig,
    aggregate,
    block_sizes,
    generate_dataset,
    lambda_grid,
    run_iteration,
    run_simulation,
    select_lambda_split,
    test_coordinates as coordinates_for,
    true_beta,
)
from sdglm.solver import fit, lambda_max

LOG = LossKind.LOGISTIC
SMALL = SimConfig(n=80, p=40, iterations=2, seed=3)


def test_block_lengths_examples():
    beta, part = true_beta("five", 100)
    assert [1] + [g.size for g in part.groups] == [1, 2, 30, 20, 20, 28]
    assert beta.size == 101 and beta[0] == 0
    np.testing.assert_array_equal(np.flatnonzero(beta), np.arange(33, 53))
    np.testing.assert_array_equal(beta[33:53], 1.0)
    beta, part = true_beta("ten", 100)
    assert [1] + [g.size for g in part.groups] == [1, 2, 20, 10, 10, 8, 10, 10, 10, 10, 10]
    values = [set(beta[1:][g].tolist()) for g in part.groups]
    assert values == [{0.0}, {0.0}, {1.0}, {0.0}, {0.0}, {0.0}, {0.0}, {2.0}, {0.5}, {0.0}]


@pytest.mark.parametrize("setup", ["five", "ten"])
@pytest.mark.parametrize("p", [100, 200, 400])
def test_block_lengths_sum(setup, p):
    assert 1 + sum(block_sizes(setup, p)) == p + 1
    assert true_beta(setup, p)[0].size == p + 1


def test_setup_validation():
    with pytest.raises(ConfigError):
        block_sizes("five", 101)
    with pytest.raises(ConfigError):
        block_sizes("ten", 50)
    with pytest.raises(ConfigError):
        SimConfig(p=30)
    with pytest.raises(ConfigError) as e:
        SimConfig(rho=1.5, iterations=0, setup="ten", p=105)
    assert len(e.value.problems) == 3


def test_target_coordinates():
    tested, zero, nonzero = coordinates_for("five", 100)
    beta, _ = true_beta("five", 100)
    assert tested == (1, 2) and zero == 1
    assert nonzero == 35 and beta[nonzero] == 1.0
    _, _, nonzero = coordinates_for("ten", 100)
    beta, _ = true_beta("ten", 100)
    assert nonzero == 26 and beta[nonzero] == 1.0


def test_covariance_moments():
    cfg = SimConfig(n=100_000, p=100, rho=0.5, seed=1)
    X = generate_dataset(cfg, 0).X
    _, part = true_beta("five", 100)
    g2, g3 = part.groups[1], part.groups[2]
    C = np.cov(X[:, [g2[4], g2[5], g3[0]]], rowvar=False)
    assert abs(C[0, 1] - 0.5) <= 0.01
    assert abs(C[1, 2]) <= 0.01
    assert abs(C[0, 0] - 1.0) <= 0.02


def test_dataset_determinism():
    a, b = generate_dataset(SMALL, 4), generate_dataset(SMALL, 4)
    assert a.X.tobytes() == b.X.tobytes() and a.y.tobytes() == b.y.tobytes()
    assert not np.array_equal(a.X, generate_dataset(SMALL, 5).X)
    np.testing.assert_array_equal(a.design[:, 0], 1.0)
    assert set(np.unique(a.y)) <= {0.0, 1.0}


def test_grid_ratio():
    grid = lambda_grid(2.7)
    assert grid.size == 25
    assert grid[0] == pytest.approx(2.7 * 0.3, rel=1e-15)
    np.testing.assert_allclose(grid[1:] / grid[:-1], 0.3, rtol=1e-14)


def test_split_selection_single_value():
    d = generate_dataset(SMALL, 0)
    _, part = true_beta("five", 40)
    assert select_lambda_split(d, LOG, NormSpec.group_lasso(part), [0.05]) == 0.05


def test_split_selection_beats_grid_endpoints():
    cfg = SimConfig(n=300, p=50, seed=9)
    d = generate_dataset(cfg, 0)
    _, part = true_beta("five", 50)
    spec = NormSpec.group_lasso(part)
    grid = lambda_grid(lambda_max(d, LOG, spec))[:12]
    lam = select_lambda_split(d, LOG, spec, grid)
    first, second = d.rows(slice(0, 150)), d.rows(slice(150, None))

    def held_out(l):
        return glm.empirical_risk(LOG, second, fit(first, LOG, spec, l).beta_hat)

    r = held_out(lam)
    assert r <= held_out(grid[0]) + 1e-9 and r <= held_out(grid[-1]) + 1e-9


def records(flags, failed=0):
    out = [IterationRecord(i, True, reject_size=f) for i, f in enumerate(flags)]
    out += [IterationRecord(len(flags) + k, False, error="x") for k in range(failed)]
    return out


def test_aggregate_counts():
    rep = aggregate(SMALL, records([1] * 5 + [0] * 95, failed=3))
    assert rep.size_pct == 5.0 and rep.n_ok == 100 and rep.n_failed == 3
    assert rep.power_pct == 0.0


def test_aggregate_order_invariant(rng):
    recs = [IterationRecord(i, True, *rng.integers(0, 2, size=4).tolist()) for i in range(30)]
    a = aggregate(SMALL, recs).to_dict()
    b = aggregate(SMALL, [recs[k] for k in rng.permutation(30)]).to_dict()
    assert a == b
    for key in ("size_pct", "power_pct", "cov_zero_pct", "cov_nonzero_pct"):
        assert 0 <= a[key] <= 100


def test_aggregate_needs_a_success():
    with pytest.raises(SdglmError):
        aggregate(SMALL, records([], failed=2))


def test_oracle_estimate_never_rejects_size():
    beta0, _ = true_beta("five", 100)
    b = {j: beta0[j] for j in (1, 2)}
    z, p = wald_test(RestrictionSpec.joint([1, 2], [0.0, 0.0], 101), b, 1e6, 150)
    assert z == 0.0 and int(p < 0.05) == 0


def test_smoke_iteration_desk_size():
    rec = run_iteration(SimConfig(n=150, p=100, rho=0.5, seed=7), 0)
    assert rec.ok, rec.error
    assert math.isfinite(rec.z_size) and math.isfinite(rec.z_power)
    for f in (rec.reject_size, rec.reject_power, rec.cover_zero, rec.cover_nonzero):
        assert f in (0, 1)


def test_serial_and_parallel_agree():
    a = run_simulation(SMALL)
    b = run_simulation(SMALL, workers=2)
    assert a.to_dict() == b.to_dict()
    assert "Cov.Nonzero" in a.table()
