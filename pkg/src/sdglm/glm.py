"""GLM losses rho(y, a) with derivatives in the linear predictor ``a``."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import InputError


class LossKind(enum.Enum):
    LOGISTIC = "logistic"
    GAUSSIAN = "gaussian"

    @classmethod
    def parse(cls, value) -> "LossKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise InputError(f"unknown loss {value!r}; use 'logistic' or 'gaussian'") from None


@dataclass(frozen=True)
class Dataset:
    """Response ``y`` (n,) and regressors ``X`` (n, p).

    With ``intercept=True`` an unpenalized column of ones is prepended in
    :attr:`design`, so coefficient vectors have length ``p + 1`` and the
    penalty acts on entries ``1..p``.
    """

    y: np.ndarray
    X: np.ndarray
    intercept: bool = False
    design: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        y = np.ascontiguousarray(self.y, dtype=float)
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2 or y.ndim != 1:
            raise InputError("y must be a vector and X a matrix")
        if X.shape[0] != y.shape[0]:
            raise InputError(f"y has {y.shape[0]} rows but X has {X.shape[0]}")
        if y.shape[0] < 2:
            raise InputError("need at least two observations")
        if not (np.isfinite(y).all() and np.isfinite(X).all()):
            raise InputError("data contain non-finite values")
        design = np.hstack([np.ones((X.shape[0], 1)), X]) if self.intercept else X
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "design", np.ascontiguousarray(design))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        """Number of penalized regressors."""
        return self.X.shape[1]

    @property
    def n_coef(self) -> int:
        return self.design.shape[1]

    @property
    def n_unpenalized(self) -> int:
        return int(self.intercept)

    def rows(self, idx) -> "Dataset":
        return Dataset(self.y[idx], self.X[idx], self.intercept)


def check_response(kind: LossKind, y) -> None:
    y = np.asarray(y)
    if kind is LossKind.LOGISTIC and not np.isin(y, (0.0, 1.0)).all():
        raise InputError("logistic loss requires responses in {0, 1}")


# Vectorized kernels over the linear predictor. For y in {0, 1} the logistic
# loss -y a + log(1 + e^a) equals log(1 + e^{(1 - 2y) a}), evaluated with
# logaddexp to avoid both overflow and cancellation. The curvature uses
# e^{-|a|} / (1 + e^{-|a|})^2, clipped at its analytic maximum 1/4 because
# rounding near a = 0 can overshoot by an ulp.

def rho(kind: LossKind, y, a):
    if kind is LossKind.LOGISTIC:
        return np.logaddexp(0.0, (1.0 - 2.0 * y) * a)
    r = y - a
    return 0.5 * r * r


def rho_dot(kind: LossKind, y, a):
    if kind is LossKind.LOGISTIC:
        return expit(a) - y
    return a - y


def rho_ddot(kind: LossKind, y, a):
    if kind is LossKind.LOGISTIC:
        e = np.exp(-np.abs(a))
        return np.minimum(e / ((1.0 + e) * (1.0 + e)), 0.25)
    return np.ones_like(np.asarray(a, dtype=float))


def loss_derivatives(kind: LossKind, y: float, a: float):
    """Return ``(rho, rho_dot, rho_ddot)`` at response ``y`` and predictor ``a``.

    Examples
    --------
    >>> [round(v, 4) for v in loss_derivatives(LossKind.LOGISTIC, 1.0, 0.0)]
    [0.6931, -0.5, 0.25]
    """
    kind = LossKind.parse(kind)
    check_response(kind, y)
    if not np.isfinite(a):
        raise InputError("linear predictor must be finite")
    return float(rho(kind, y, a)), float(rho_dot(kind, y, a)), float(rho_ddot(kind, y, a))


def _predictor(data: Dataset, beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (data.n_coef,):
        raise InputError(f"beta has shape {beta.shape}, expected ({data.n_coef},)")
    return data.design @ beta


def empirical_risk(kind: LossKind, data: Dataset, beta) -> float:
    """``(1/n) sum_i rho(y_i, X_i' beta)``."""
    kind = LossKind.parse(kind)
    check_response(kind, data.y)
    return float(rho(kind, data.y, _predictor(data, beta)).mean())


def risk_gradient(kind: LossKind, data: Dataset, beta) -> np.ndarray:
    """``(1/n) sum_i X_i rho_dot(y_i, X_i' beta)``."""
    kind = LossKind.parse(kind)
    check_response(kind, data.y)
    a = _predictor(data, beta)
    return data.design.T @ rho_dot(kind, data.y, a) / data.n


def hessian_weights(kind: LossKind, data: Dataset, beta) -> np.ndarray:
    """Row weights ``w_i = sqrt(rho_ddot(y_i, X_i' beta))``."""
    kind = LossKind.parse(kind)
    check_response(kind, data.y)
    return np.sqrt(rho_ddot(kind, data.y, _predictor(data, beta)))


def score_variance_matrix(kind: LossKind, data: Dataset, beta) -> np.ndarray:
    """``(1/n) sum_i X_i X_i' rho_dot(y_i, X_i' beta)^2``, symmetric PSD."""
    kind = LossKind.parse(kind)
    check_response(kind, data.y)
    s = rho_dot(kind, data.y, _predictor(data, beta))
    Z = data.design * s[:, None]
    return Z.T @ Z / data.n
