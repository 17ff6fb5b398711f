"""Penalized GLM fits by accelerated proximal gradient (FISTA).

The problem is ``min_beta R_n(beta) + lam * Omega(beta_pen)`` where
``R_n`` is the empirical risk and ``beta_pen`` drops the intercept.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit

from . import glm
from .errors import InputError, NumericError
from .glm import Dataset, LossKind
from .norms import L1, NormSpec

# Objective increases below this relative size are treated as rounding ties.
_ROUNDING = 64 * np.finfo(float).eps
# Backtracking gives up below this fraction of the initial step.
_MIN_STEP = 1e-14


@dataclass(frozen=True)
class FitOptions:
    max_iter: int = 5000
    tol: float = 1e-7
    backtrack: float = 0.5
    step: float = 1.0
    restart: bool = True

    def __post_init__(self):
        if not self.tol > 0:
            raise InputError("tol must be positive")
        if not 0 < self.backtrack < 1:
            raise InputError("backtracking factor must lie in (0, 1)")
        if not self.step > 0:
            raise InputError("initial step must be positive")
        if self.max_iter < 1:
            raise InputError("max_iter must be at least 1")


@dataclass
class FitResult:
    beta_hat: np.ndarray
    lam: float
    iterations: int
    kkt_residual: float
    objective: float
    converged: bool
    step: float = 1.0

    def to_dict(self) -> dict:
        return {
            "beta_hat": [float(b) for b in self.beta_hat],
            "lambda": float(self.lam),
            "iterations": int(self.iterations),
            "kkt_residual": float(self.kkt_residual),
            "objective": float(self.objective),
            "converged": bool(self.converged),
            "step": float(self.step),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        return cls(
            beta_hat=np.asarray(d["beta_hat"], dtype=float),
            lam=float(d["lambda"]),
            iterations=int(d["iterations"]),
            kkt_residual=float(d["kkt_residual"]),
            objective=float(d["objective"]),
            converged=bool(d["converged"]),
            step=float(d.get("step", 1.0)),
        )


def _check_problem(data: Dataset, kind: LossKind, spec: NormSpec) -> None:
    if spec.p != data.p:
        raise InputError(f"norm acts on {spec.p} coefficients but data have {data.p} regressors")
    glm.check_response(kind, data.y)


def _intercept_only(data: Dataset, kind: LossKind) -> np.ndarray:
    beta = np.zeros(data.n_coef)
    if data.intercept:
        ybar = data.y.mean()
        if kind is LossKind.LOGISTIC:
            if ybar <= 0.0 or ybar >= 1.0:
                raise InputError("all responses identical; the intercept-only logistic fit diverges")
            beta[0] = math.log(ybar / (1.0 - ybar))
        else:
            beta[0] = ybar
    return beta


def lambda_max(data: Dataset, kind, spec: NormSpec) -> float:
    """Smallest penalty level at which every penalized coefficient is zero.

    The dual norm of the penalized part of the gradient at the intercept-only
    fit (the zero vector when there is no intercept).
    """
    kind = LossKind.parse(kind)
    _check_problem(data, kind, spec)
    beta = _intercept_only(data, kind)
    g = glm.risk_gradient(kind, data, beta)
    return spec.dual(g[data.n_unpenalized:])


def objective(data: Dataset, kind, spec: NormSpec, lam: float, beta) -> float:
    kind = LossKind.parse(kind)
    beta = np.asarray(beta, dtype=float)
    return glm.empirical_risk(kind, data, beta) + lam * spec.value(beta[data.n_unpenalized:])


def fit(
    data: Dataset,
    kind,
    spec: NormSpec,
    lam: float,
    opts: Optional[FitOptions] = None,
    beta_init=None,
) -> FitResult:
    """Minimize ``R_n(beta) + lam * Omega(beta_pen)``.

    FISTA with backtracking, gradient-based adaptive restart and a monotone
    safeguard: a step that raises the objective (beyond rounding) is discarded
    and momentum is reset, so accepted iterates never increase the objective. Convergence is
    declared when the prox fixed-point residual
    ``||beta - prox(beta - s grad, s lam)||_inf / s`` drops below ``opts.tol``.

    Non-convergence is reported through ``converged=False``; a non-finite
    objective raises :class:`NumericError`.
    """
    kind = LossKind.parse(kind)
    opts = opts or FitOptions()
    _check_problem(data, kind, spec)
    if not lam >= 0:
        raise InputError("lambda must be non-negative")
    lam = float(lam)
    X, y, n = data.design, data.y, data.n
    off = data.n_unpenalized

    # The iteration tracks M @ x for a linear map M: the design for general
    # losses, or the Gram matrix X'X/n for the quadratic loss when p <= 2n.
    if kind is LossKind.GAUSSIAN and X.shape[1] <= 2 * n:
        M = X.T @ X / n
        c = X.T @ y / n
        yy = 0.5 * float(y @ y) / n

        def risk(Mx, x):
            return 0.5 * float(x @ Mx) - float(c @ x) + yy

        def grad(Mx):
            return Mx - c
    elif kind is LossKind.LOGISTIC:
        M = X
        # rho(y, a) = log(1 + exp((1 - 2y) a)) for y in {0, 1}
        sgn = 1.0 - 2.0 * y

        def risk(Mx, x):
            return float(np.logaddexp(0.0, sgn * Mx).sum()) / n

        def grad(Mx):
            return X.T @ (expit(Mx) - y) / n
    else:
        M = X

        def risk(Mx, x):
            r = y - Mx
            return 0.5 * float(r @ r) / n

        def grad(Mx):
            return X.T @ (Mx - y) / n

    # Unchecked penalty and prox kernels for the inner loop.
    if spec.kind == L1:
        def pen_value(b):
            return float(np.abs(b).sum())

        def pen_prox(v, t):
            return np.maximum(v - t, 0.0) + np.minimum(v + t, 0.0)
    else:
        part = spec.partition
        labels, weights, m = part.labels, part.weights, part.m

        def block_norms(v):
            nrm = np.sqrt(np.bincount(labels, weights=v * v, minlength=m))
            if not np.isfinite(nrm).all():
                nrm = part.group_norms(v)
            return nrm

        def pen_value(b):
            return float(weights @ block_norms(b))

        def pen_prox(v, t):
            nrm = block_norms(v)
            shrink = np.maximum(1.0 - t * weights / np.maximum(nrm, np.finfo(float).tiny), 0.0)
            return v * shrink[labels]

    def penalty(b):
        return lam * pen_value(b[off:]) if lam > 0 else 0.0

    def prox_step(v, s):
        if lam == 0:
            return v
        if off == 0:
            return pen_prox(v, s * lam)
        out = v.copy()
        out[off:] = pen_prox(v[off:], s * lam)
        return out

    # Non-finite values are detected and handled below, so silence warnings.
    with np.errstate(over="ignore", invalid="ignore"):
        return _fista(data, kind, spec, lam, opts, beta_init, risk, grad, M, penalty, prox_step)


def _fista(data, kind, spec, lam, opts, beta_init, risk, grad, M, penalty, prox_step) -> FitResult:
    off = data.n_unpenalized
    if beta_init is None:
        x = _intercept_only(data, kind) if off else np.zeros(data.n_coef)
    else:
        x = np.array(beta_init, dtype=float)
        if x.shape != (data.n_coef,):
            raise InputError("beta_init has the wrong length")
    Xx = M @ x
    F_x = risk(Xx, x) + penalty(x)
    if not math.isfinite(F_x):
        raise NumericError("objective is not finite at the starting point")

    x_prev, Xx_prev = x, Xx
    t = 1.0
    s = opts.step
    it = 0
    converged = False
    for it in range(1, opts.max_iter + 1):
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        mom = (t - 1.0) / t_next
        if mom > 0:
            z = x + mom * (x - x_prev)
            Xz = Xx + mom * (Xx - Xx_prev)
        else:
            z, Xz = x, Xx
        f_z = risk(Xz, z)
        g_z = grad(Xz)
        while True:
            x_new = prox_step(z - s * g_z, s)
            d = x_new - z
            Xx_new = M @ x_new
            f_new = risk(Xx_new, x_new)
            if math.isfinite(f_new):
                bound = f_z + g_z @ d + (d @ d) / (2.0 * s)
                if f_new <= bound + _ROUNDING * abs(f_z):
                    break
            if s < _MIN_STEP * opts.step:
                if not math.isfinite(f_new):
                    raise NumericError("objective became non-finite")
                break
            s *= opts.backtrack
        F_new = f_new + penalty(x_new)
        if not math.isfinite(F_new):
            raise NumericError("objective became non-finite")
        step_res = float(np.abs(d).max()) / s

        if F_new > F_x + _ROUNDING * max(abs(F_x), 1.0):
            if mom == 0:
                # Plain prox step from x did not descend: rounding floor.
                converged = step_res <= opts.tol
                break
            t, x_prev, Xx_prev = 1.0, x, Xx
            continue

        restart = opts.restart and mom > 0 and (z - x_new) @ (x_new - x) > 0
        x_prev, Xx_prev = x, Xx
        x, Xx, F_x = x_new, Xx_new, F_new
        t = 1.0 if restart else t_next

        if step_res <= opts.tol:
            if mom == 0 or _fixed_point_residual(x, grad(Xx), s, prox_step) <= opts.tol:
                converged = True
                break
            # Surrogate was met only thanks to momentum; continue without it.
            t, x_prev, Xx_prev = 1.0, x, Xx

    res = _fixed_point_residual(x, grad(Xx), s, prox_step)
    converged = converged and res <= opts.tol
    return FitResult(
        beta_hat=x,
        lam=lam,
        iterations=it,
        kkt_residual=res,
        objective=F_x,
        converged=converged,
        step=s,
    )


def _fixed_point_residual(x, g, s, prox_step) -> float:
    return float(np.abs(x - prox_step(x - s * g, s)).max()) / s
