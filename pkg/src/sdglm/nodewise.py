"""Weighted nodewise regression: rows of an approximate inverse of the
weighted Gram matrix ``Sigma = X_w' X_w / n`` with ``X_w = W X``.

Row ``j`` regresses column ``j`` of ``X_w`` on the others,

    gamma_j = argmin ||x_j - X_{-j} g||_n^2 + 2 lam Omega_weak(g),

which is solved as ``0.5 ||.||_n^2 + lam Omega_weak`` by :func:`solver.fit`.
Then ``tau_j^2 = x_j'(x_j - X_{-j} gamma_j) / n`` and
``Theta_j = (1, -gamma_j) / tau_j^2`` with the 1 placed at position ``j``.
"""
from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Union

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import lasso_path

from . import glm
from .errors import ConsistencyError, InputError
from .glm import Dataset, LossKind
from .norms import L1, GroupPartition, NormSpec
from .solver import FitOptions, fit

log = logging.getLogger(__name__)

# Precision needed for the approximate-inverse certificate to hold to 1e-8.
NODEWISE_OPTIONS = FitOptions(max_iter=20000, tol=1e-11)
CV_OPTIONS = FitOptions(max_iter=5000, tol=1e-7)
CERTIFICATE_SLACK = 1e-8
# Coordinate-descent settings for l1 cross-validation paths (duality-gap tol).
CV_PATH_TOL = 1e-8
CV_PATH_MAX_ITER = 10000


@dataclass(frozen=True)
class NodewiseConfig:
    """``weak_norm`` is ``"l1"`` or a partition of the design columns.

    ``lambda_nw`` fixes the penalty for every row; when it is ``None`` each row
    picks its own by ``folds``-fold cross-validation over ``grid_len``
    log-spaced values from the row's ``lambda_max`` down to
    ``grid_ratio * lambda_max``.
    """

    target_rows: Sequence[int]
    weak_norm: Union[str, GroupPartition] = L1
    lambda_nw: Optional[float] = None
    folds: int = 5
    grid_len: int = 20
    grid_ratio: float = 1e-3
    tau_floor: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        rows = tuple(int(j) for j in self.target_rows)
        if not rows:
            raise InputError("target_rows must be non-empty")
        if len(set(rows)) != len(rows):
            raise InputError("target_rows contains duplicates")
        object.__setattr__(self, "target_rows", rows)
        if self.folds < 2:
            raise InputError("need at least two folds")
        if self.lambda_nw is not None and self.lambda_nw < 0:
            raise InputError("lambda_nw must be non-negative")
        if self.grid_len < 1 or not 0 < self.grid_ratio <= 1:
            raise InputError("bad cross-validation grid")
        if not self.tau_floor > 0:
            raise InputError("tau_floor must be positive")
        if not (self.weak_norm == L1 or isinstance(self.weak_norm, GroupPartition)):
            raise InputError("weak_norm must be 'l1' or a GroupPartition")


@dataclass
class NodewiseRow:
    j: int
    gamma: np.ndarray
    tau_sq: float
    lam: float
    converged: bool
    floored: bool = False


@dataclass
class PrecisionEstimate:
    rows: Dict[int, np.ndarray]
    gamma: Dict[int, np.ndarray]
    tau_sq: Dict[int, float]
    lambda_used: Dict[int, float]
    inverse_residual: Dict[int, float]
    converged: Dict[int, bool] = field(default_factory=dict)
    n_floored: int = 0

    @property
    def indices(self):
        return sorted(self.rows)

    def row(self, j: int) -> np.ndarray:
        try:
            return self.rows[j]
        except KeyError:
            raise InputError(f"no precision row for coordinate {j}") from None


def weighted_design(data: Dataset, kind, beta_hat) -> np.ndarray:
    """``W X`` with ``W = diag(sqrt(rho_ddot(y_i, X_i' beta_hat)))``.

    Includes the intercept column when the dataset has one.
    """
    w = glm.hessian_weights(kind, data, beta_hat)
    return data.design * w[:, None]


def _weak_spec(weak_norm, p: int, j: int) -> NormSpec:
    if weak_norm == L1:
        return NormSpec.l1(p - 1)
    if weak_norm.p != p:
        raise InputError(f"weak-norm partition covers {weak_norm.p} columns, design has {p}")
    return NormSpec.group_lasso(weak_norm.drop(j))


def _weak_dual(weak_norm, v: np.ndarray) -> float:
    if weak_norm == L1:
        return float(np.abs(v).max())
    return NormSpec.group_lasso(weak_norm).dual(v)


def _polish_l1(A: np.ndarray, b: np.ndarray, gamma: np.ndarray, lam: float) -> np.ndarray:
    """Exact lasso solution on the current support and signs, if consistent.

    Solves ``G_SS g_S = c_S - lam sign(g_S)`` with ``G = A'A/n``, ``c = A'b/n``
    and keeps it when signs agree and the off-support KKT bound is no worse.
    """
    n = A.shape[0]
    S = np.flatnonzero(gamma)
    if S.size == 0 or S.size >= n:
        return gamma
    AS = A[:, S]
    sgn = np.sign(gamma[S])
    try:
        gS = np.linalg.solve(AS.T @ AS / n, AS.T @ b / n - lam * sgn)
    except np.linalg.LinAlgError:
        return gamma
    if lam > 0 and np.any(np.sign(gS) != sgn):
        return gamma
    cand = np.zeros_like(gamma)
    cand[S] = gS

    def violation(g):
        c = A.T @ (b - A @ g) / n
        off = np.abs(np.delete(c, S)).max(initial=0.0) - lam
        on = np.abs(c[S] - lam * np.sign(g[S])).max()
        return max(off, on, 0.0)

    return cand if violation(cand) <= violation(gamma) else gamma


def nodewise_fit(
    Xw: np.ndarray,
    j: int,
    lambda_nw: float,
    weak_norm=L1,
    tau_floor: float = 1e-8,
    opts: Optional[FitOptions] = None,
    gamma_init=None,
) -> NodewiseRow:
    """Penalized regression of column ``j`` of ``Xw`` on the remaining columns."""
    n, p = Xw.shape
    if not 0 <= j < p:
        raise InputError(f"column {j} out of range for {p} columns")
    if lambda_nw < 0:
        raise InputError("lambda_nw must be non-negative")
    xj = Xw[:, j]
    A = np.delete(Xw, j, axis=1)
    spec = _weak_spec(weak_norm, p, j)
    res = fit(Dataset(xj, A), LossKind.GAUSSIAN, spec, lambda_nw, opts or NODEWISE_OPTIONS,
              beta_init=gamma_init)
    gamma = res.beta_hat
    if weak_norm == L1:
        gamma = _polish_l1(A, xj, gamma, lambda_nw)
    tau_sq = float(xj @ (xj - A @ gamma)) / n
    floored = tau_sq < tau_floor
    if floored:
        log.warning("tau^2 = %.3g for row %d floored at %.3g", tau_sq, j, tau_floor)
        tau_sq = tau_floor
    return NodewiseRow(j, gamma, tau_sq, float(lambda_nw), res.converged, floored)


def nodewise_lambda_max(Xw: np.ndarray, j: int, weak_norm=L1) -> float:
    """Smallest penalty giving ``gamma_j = 0``."""
    n, p = Xw.shape
    A = np.delete(Xw, j, axis=1)
    return _weak_spec(weak_norm, p, j).dual(A.T @ Xw[:, j] / n)


def nodewise_grid(Xw: np.ndarray, j: int, grid_len=20, grid_ratio=1e-3, weak_norm=L1):
    lmax = nodewise_lambda_max(Xw, j, weak_norm)
    if lmax <= 0:
        return np.array([0.0])
    return lmax * np.logspace(0.0, np.log10(grid_ratio), grid_len)


def fold_assignment(n: int, folds: int, seed: int) -> np.ndarray:
    """Fold label per row: a seeded shuffle cut into contiguous blocks."""
    if n < folds:
        raise InputError(f"cannot split {n} rows into {folds} folds")
    perm = np.random.default_rng(seed).permutation(n)
    labels = np.empty(n, dtype=np.intp)
    for k, block in enumerate(np.array_split(perm, folds)):
        labels[block] = k
    return labels


def cv_select_lambda(Xw: np.ndarray, j: int, folds: int, grid, seed: int = 0, weak_norm=L1) -> float:
    """Grid value with the smallest mean held-out squared error; ties go to
    the larger penalty."""
    grid = np.asarray(grid, dtype=float).ravel()
    if grid.size == 0:
        raise InputError("empty lambda grid")
    if folds < 2:
        raise InputError("need at least two folds")
    n, p = Xw.shape
    labels = fold_assignment(n, folds, seed)
    if grid.size == 1:
        return float(grid[0])
    order = np.argsort(-grid, kind="stable")
    errors = np.zeros(grid.size)
    for k in range(folds):
        train, test = labels != k, labels == k
        Xtr, Xte = Xw[train], Xw[test]
        A_te = np.delete(Xte, j, axis=1)
        if weak_norm == L1:
            gammas = _lasso_path(np.delete(Xtr, j, axis=1), Xtr[:, j], grid[order])
        else:
            gammas, gamma = [], None
            for g in order:
                gamma = nodewise_fit(Xtr, j, grid[g], weak_norm, opts=CV_OPTIONS, gamma_init=gamma).gamma
                gammas.append(gamma)
        for g, gamma in zip(order, gammas):
            r = Xte[:, j] - A_te @ gamma
            errors[g] += r @ r / r.size
    errors /= folds
    best = errors.min()
    return float(grid[errors == best].max())


def _lasso_path(A: np.ndarray, b: np.ndarray, lams: np.ndarray) -> list:
    """Lasso solutions of ``0.5 ||b - A g||_n^2 + lam ||g||_1`` for each
    ``lam`` in decreasing order, by warm-started coordinate descent."""
    n = A.shape[0]
    A = np.asfortranarray(A)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        _, coefs, _ = lasso_path(
            A, b, alphas=lams, precompute=A.T @ A, Xy=A.T @ b,
            tol=CV_PATH_TOL, max_iter=CV_PATH_MAX_ITER,
        )
    # lasso_path returns the penalties in decreasing order, as given.
    return [coefs[:, k] for k in range(lams.size)]


def assemble_theta(rows: Sequence[NodewiseRow], Xw: np.ndarray, weak_norm=L1) -> PrecisionEstimate:
    """Form ``Theta_j = C_j / tau_j^2`` and certify each row.

    Raises :class:`ConsistencyError` when
    ``Omega_weak_*(Theta_j' Sigma - e_j') > lam_j / tau_j^2 + 1e-8``.
    """
    n, p = Xw.shape
    est = PrecisionEstimate({}, {}, {}, {}, {})
    for row in sorted(rows, key=lambda r: r.j):
        theta = np.empty(p)
        theta[row.j] = 1.0
        theta[np.arange(p) != row.j] = -row.gamma
        theta /= row.tau_sq
        resid = Xw.T @ (Xw @ theta) / n
        resid[row.j] -= 1.0
        bound = _weak_dual(weak_norm, resid)
        if bound > row.lam / row.tau_sq + CERTIFICATE_SLACK:
            raise ConsistencyError(
                f"row {row.j}: inverse residual {bound:.3e} exceeds "
                f"lambda/tau^2 = {row.lam / row.tau_sq:.3e}"
            )
        est.rows[row.j] = theta
        est.gamma[row.j] = row.gamma
        est.tau_sq[row.j] = row.tau_sq
        est.lambda_used[row.j] = row.lam
        est.inverse_residual[row.j] = bound
        est.converged[row.j] = row.converged
        est.n_floored += int(row.floored)
    return est


def estimate_precision(Xw: np.ndarray, config: NodewiseConfig, workers: int = 1) -> PrecisionEstimate:
    """Nodewise rows for ``config.target_rows`` (0-based design columns)."""
    n, p = Xw.shape
    for j in config.target_rows:
        if not 0 <= j < p:
            raise InputError(f"target row {j} out of range for {p} columns")

    def one(j):
        if config.lambda_nw is not None:
            lam = config.lambda_nw
        else:
            grid = nodewise_grid(Xw, j, config.grid_len, config.grid_ratio, config.weak_norm)
            lam = cv_select_lambda(Xw, j, config.folds, grid, config.seed, config.weak_norm)
        return nodewise_fit(Xw, j, lam, config.weak_norm, config.tau_floor)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(one, config.target_rows))
    else:
        rows = [one(j) for j in config.target_rows]
    return assemble_theta(rows, Xw, config.weak_norm)
