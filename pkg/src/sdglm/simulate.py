"""Monte Carlo harness for the debiased logistic group lasso.

Each iteration draws a dataset, tunes the group-lasso penalty by fitting on
the first half of the rows and scoring the unpenalized logistic risk on the
second half, refits on all rows, runs l1 nodewise regressions with 5-fold
cross-validation on the weighted design, debiases, and records whether the
size and power tests reject and whether two intervals cover their targets.
"""
from __future__ import annotations

import enum
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.linalg import toeplitz
from scipy.special import expit

from . import glm
from .errors import ConfigError, InputError, SdglmError
from .glm import Dataset, LossKind
from .inference import RestrictionSpec, infer, wald_test
from .nodewise import NodewiseConfig, estimate_precision, weighted_design
from .norms import GroupPartition, NormSpec
from .solver import FitOptions, fit, lambda_max

log = logging.getLogger(__name__)


class Setup(enum.Enum):
    FIVE_GROUPS = "five"
    TEN_GROUPS = "ten"

    @classmethod
    def parse(cls, value) -> "Setup":
        if isinstance(value, cls):
            return value
        aliases = {"five": "five", "fivegroups": "five", "1": "five",
                   "ten": "ten", "tengroups": "ten", "2": "ten"}
        key = str(value).lower().replace("_", "").replace("-", "")
        if key not in aliases:
            raise ConfigError(f"setup: unknown value {value!r}; use 'five' or 'ten'")
        return cls(aliases[key])


@dataclass(frozen=True)
class SimConfig:
    setup: Setup = Setup.FIVE_GROUPS
    n: int = 150
    p: int = 100
    rho: float = 0.5
    iterations: int = 100
    seed: int = 0
    grid_base: float = 0.3
    grid_len: int = 25
    nominal_level: float = 0.05
    folds: int = 5
    nodewise_grid_len: int = 20
    nodewise_grid_ratio: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "setup", Setup.parse(self.setup))
        problems = []
        if self.setup is Setup.FIVE_GROUPS:
            if self.p % 5 or 2 * self.p // 5 - 12 < 1:
                problems.append("p: FiveGroups needs p divisible by 5 and 2p/5 - 12 >= 1")
        elif self.p % 10 or 2 * self.p // 10 - 12 < 1:
            problems.append("p: TenGroups needs p divisible by 10 and 2p/10 - 12 >= 1")
        if self.n < 2 * self.folds:
            problems.append(f"n: must be at least {2 * self.folds}")
        if not 0 < self.rho < 1:
            problems.append("rho: must lie in (0, 1)")
        if self.iterations < 1:
            problems.append("iterations: must be at least 1")
        if not 0 < self.grid_base < 1:
            problems.append("grid_base: must lie in (0, 1)")
        if self.grid_len < 1:
            problems.append("grid_len: must be at least 1")
        if not 0 < self.nominal_level < 1:
            problems.append("nominal_level: must lie in (0, 1)")
        if self.folds < 2:
            problems.append("folds: must be at least 2")
        if not 0 <= self.seed < 2**64:
            problems.append("seed: must be a 64-bit unsigned integer")
        if problems:
            raise ConfigError(problems)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["setup"] = self.setup.value
        return d


def block_sizes(setup, p: int) -> List[int]:
    setup = Setup.parse(setup)
    if setup is Setup.FIVE_GROUPS:
        if p % 5 or 2 * p // 5 - 12 < 1:
            raise ConfigError("p: FiveGroups needs p divisible by 5 and 2p/5 - 12 >= 1")
        q = p // 5
        return [2, q + 10, q, q, 2 * q - 12]
    if p % 10 or 2 * p // 10 - 12 < 1:
        raise ConfigError("p: TenGroups needs p divisible by 10 and 2p/10 - 12 >= 1")
    q = p // 10
    return [2, q + 10, q, q, 2 * q - 12, q, q, q, q, q]


_BLOCK_VALUES = {
    Setup.FIVE_GROUPS: {2: 1.0},
    Setup.TEN_GROUPS: {2: 1.0, 7: 2.0, 8: 0.5},
}


def true_beta(setup, p: int):
    """Coefficients ``(intercept, g_1, ..., g_m)`` of length ``p + 1`` and the
    partition of the ``p`` penalized coordinates."""
    setup = Setup.parse(setup)
    sizes = block_sizes(setup, p)
    parts = [np.zeros(1)]
    for k, size in enumerate(sizes):
        parts.append(np.full(size, _BLOCK_VALUES[setup].get(k, 0.0)))
    return np.concatenate(parts), GroupPartition.contiguous(sizes)


def test_coordinates(setup, p: int):
    """Design columns (0-based, intercept at 0) used by the four targets.

    Returns ``(tested, zero_coord, nonzero_coord)``: the two coefficients of
    the first group, its first coefficient, and the third coefficient of
    ``g_3`` (five groups) or regressor ``p/10 + 16`` (ten groups).
    """
    setup = Setup.parse(setup)
    tested = (1, 2)
    if setup is Setup.FIVE_GROUPS:
        nonzero = 1 + 2 + (p // 5 + 10) + 2
    else:
        nonzero = p // 10 + 16
    return tested, 1, nonzero


def iteration_rng(seed: int, iteration: int) -> np.random.Generator:
    """Independent stream keyed by ``(seed, iteration)``."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(iteration,)))


def generate_dataset(config: SimConfig, iteration: int) -> Dataset:
    """Block-independent Gaussian regressors with Toeplitz ``rho^|k-j|``
    covariance inside each group and Bernoulli(sigmoid(X beta_0)) responses."""
    rng = iteration_rng(config.seed, iteration)
    beta0, part = true_beta(config.setup, config.p)
    blocks = []
    for g in part.groups:
        L = np.linalg.cholesky(toeplitz(config.rho ** np.arange(g.size)))
        blocks.append(rng.standard_normal((config.n, g.size)) @ L.T)
    X = np.hstack(blocks)
    eta = beta0[0] + X @ beta0[1:]
    y = (rng.random(config.n) < expit(eta)).astype(float)
    return Dataset(y, X, intercept=True)


def lambda_grid(lmax: float, base: float = 0.3, length: int = 25) -> np.ndarray:
    """``lmax * base^k`` for ``k = 1..length``."""
    return lmax * base ** np.arange(1, length + 1)


def select_lambda_split(data: Dataset, kind, spec: NormSpec, grid, opts: Optional[FitOptions] = None) -> float:
    """Fit on rows ``[0, n//2)`` for every grid value, score the unpenalized
    risk on the remaining rows and return the minimizer (ties to larger)."""
    kind = LossKind.parse(kind)
    grid = np.asarray(grid, dtype=float).ravel()
    if grid.size == 0:
        raise InputError("empty lambda grid")
    if grid.size == 1:
        return float(grid[0])
    half = data.n // 2
    first, second = data.rows(slice(0, half)), data.rows(slice(half, None))
    order = np.argsort(-grid, kind="stable")
    risks = np.full(grid.size, np.inf)
    beta = None
    for g in order:
        res = fit(first, kind, spec, grid[g], opts, beta_init=beta)
        beta = res.beta_hat
        r = glm.empirical_risk(kind, second, beta)
        if math.isfinite(r):
            risks[g] = r
    if not np.isfinite(risks).any():
        raise ConfigError("lambda selection: every fit diverged")
    best = risks.min()
    return float(grid[risks == best].max())


@dataclass
class IterationRecord:
    iteration: int
    ok: bool
    reject_size: int = 0
    reject_power: int = 0
    cover_zero: int = 0
    cover_nonzero: int = 0
    z_size: float = float("nan")
    z_power: float = float("nan")
    lambda_o: float = float("nan")
    wgl_error: float = float("nan")
    error: str = ""


def run_iteration(config: SimConfig, iteration: int) -> IterationRecord:
    try:
        return _run_iteration(config, iteration)
    except (SdglmError, np.linalg.LinAlgError, FloatingPointError) as e:
        log.warning("iteration %d failed: %s", iteration, e)
        return IterationRecord(iteration, ok=False, error=f"{type(e).__name__}: {e}")


def tuned_fit(config: SimConfig, data: Dataset):
    """Split-sample tuned group-lasso logistic fit: ``(lambda_o, beta_hat, spec)``."""
    kind = LossKind.LOGISTIC
    _, part = true_beta(config.setup, config.p)
    spec = NormSpec.group_lasso(part)
    grid = lambda_grid(lambda_max(data, kind, spec), config.grid_base, config.grid_len)
    lam = select_lambda_split(data, kind, spec, grid)
    return lam, fit(data, kind, spec, lam).beta_hat, spec


def estimation_error(config: SimConfig, iteration: int) -> float:
    """Group-lasso norm of ``beta_hat - beta_0`` over the penalized coordinates."""
    data = generate_dataset(config, iteration)
    beta0, _ = true_beta(config.setup, config.p)
    _, beta_hat, spec = tuned_fit(config, data)
    return spec.value(beta_hat[1:] - beta0[1:])


def _run_iteration(config: SimConfig, iteration: int) -> IterationRecord:
    kind = LossKind.LOGISTIC
    data = generate_dataset(config, iteration)
    beta0, _ = true_beta(config.setup, config.p)
    lam, beta_hat, spec = tuned_fit(config, data)

    tested, zero_j, nonzero_j = test_coordinates(config.setup, config.p)
    rows = sorted({*tested, zero_j, nonzero_j})
    Xw = weighted_design(data, kind, beta_hat)
    nw = NodewiseConfig(
        target_rows=rows,
        folds=config.folds,
        grid_len=config.nodewise_grid_len,
        grid_ratio=config.nodewise_grid_ratio,
        seed=int(iteration_rng(config.seed, iteration).integers(2**63)),
    )
    theta = estimate_precision(Xw, nw)

    delta = config.nominal_level
    size_h0 = RestrictionSpec.joint(tested, [0.0, 0.0], data.n_coef)
    power_h0 = RestrictionSpec.joint(tested, [0.5, 0.5], data.n_coef)
    rep = infer(size_h0, beta_hat, theta, data, kind, (zero_j, nonzero_j), delta)
    # Same direction, so the power test reuses the debiased values and V_alpha.
    z_pow, p_pow = wald_test(power_h0, rep.b_hat, rep.v_alpha, data.n)
    lo0, hi0 = rep.intervals[zero_j]
    lo1, hi1 = rep.intervals[nonzero_j]
    return IterationRecord(
        iteration=iteration,
        ok=True,
        reject_size=int(rep.p_value < delta),
        reject_power=int(p_pow < delta),
        cover_zero=int(lo0 <= beta0[zero_j] <= hi0),
        cover_nonzero=int(lo1 <= beta0[nonzero_j] <= hi1),
        z_size=rep.z,
        z_power=z_pow,
        lambda_o=lam,
        wgl_error=spec.value(beta_hat[1:] - beta0[1:]),
    )


@dataclass
class SimReport:
    size_pct: float
    power_pct: float
    cov_zero_pct: float
    cov_nonzero_pct: float
    n_ok: int
    n_failed: int
    config: dict
    per_iteration: List[IterationRecord] = field(default_factory=list)
    runtime: float = 0.0

    def to_dict(self) -> dict:
        """Everything except the wall-clock runtime, which is not reproducible."""
        return {
            "config": self.config,
            "size_pct": self.size_pct,
            "power_pct": self.power_pct,
            "cov_zero_pct": self.cov_zero_pct,
            "cov_nonzero_pct": self.cov_nonzero_pct,
            "n_ok": self.n_ok,
            "n_failed": self.n_failed,
            "per_iteration": [asdict(r) for r in self.per_iteration],
        }

    def table(self) -> str:
        """One row in the column order Size, Power, Cov. Zero, Cov. Nonzero."""
        c = self.config
        head = f"{'':<16}{'Size':>8}{'Power':>8}{'Cov.Zero':>10}{'Cov.Nonzero':>13}"
        label = f"n={c['n']}, p={c['p']}"
        row = (f"{label:<16}{self.size_pct:>8.0f}{self.power_pct:>8.0f}"
               f"{self.cov_zero_pct:>10.0f}{self.cov_nonzero_pct:>13.0f}")
        title = f"setup={c['setup']}  rho={c['rho']}  iterations={c['iterations']}  (percent)"
        return "\n".join([title, head, row]) + "\n"


def aggregate(config: SimConfig, records: Sequence[IterationRecord]) -> SimReport:
    records = sorted(records, key=lambda r: r.iteration)
    ok = [r for r in records if r.ok]
    if not ok:
        raise SdglmError("no successful iterations to aggregate")

    def pct(attr):
        return 100.0 * sum(getattr(r, attr) for r in ok) / len(ok)

    return SimReport(
        size_pct=pct("reject_size"),
        power_pct=pct("reject_power"),
        cov_zero_pct=pct("cover_zero"),
        cov_nonzero_pct=pct("cover_nonzero"),
        n_ok=len(ok),
        n_failed=len(records) - len(ok),
        config=config.to_dict(),
        per_iteration=list(records),
    )


def _run_one(args):
    config, i = args
    return run_iteration(config, i)


def run_simulation(config: SimConfig, workers: int = 1, iterations: Optional[Sequence[int]] = None) -> SimReport:
    """Run every iteration (in a process pool when ``workers > 1``) and aggregate."""
    idx = range(config.iterations) if iterations is None else list(iterations)
    t0 = time.perf_counter()
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            records = list(pool.map(_run_one, [(config, i) for i in idx]))
    else:
        records = [run_iteration(config, i) for i in idx]
    report = aggregate(config, records)
    report.runtime = time.perf_counter() - t0
    return report
