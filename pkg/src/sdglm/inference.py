"""Debiased estimates, Wald statistics and confidence intervals."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy.special import ndtri

from . import glm
from .errors import DegenerateVarianceError, InputError
from .glm import Dataset, LossKind
from .nodewise import PrecisionEstimate

VARIANCE_FLOOR = 1e-12


class RestrictionSpec:
    """Linear hypothesis ``alpha' beta = null_value`` with ``||alpha||_2 = 1``.

    ``alpha`` is rescaled to unit length at construction and ``null_value``
    is divided by the same factor, so the hypothesis itself is unchanged.
    """

    def __init__(self, alpha, null_value: float = 0.0):
        alpha = np.asarray(alpha, dtype=float).ravel()
        if not np.isfinite(alpha).all():
            raise InputError("alpha must be finite")
        scale = np.linalg.norm(alpha)
        if scale == 0:
            raise InputError("alpha must be non-zero")
        self.alpha = alpha / scale
        self.null_value = float(null_value) / scale
        self.coordinates = np.flatnonzero(self.alpha)
        if self.coordinates.size >= alpha.size:
            raise InputError("a restriction may involve at most p - 1 coordinates")

    @classmethod
    def joint(cls, coordinates: Sequence[int], values: Sequence[float], p: int) -> "RestrictionSpec":
        """Equal-weight direction for ``beta_k = values_k`` over ``coordinates``.

        ``alpha = sum_k e_k / sqrt(h)`` and null value ``sum_k values_k / sqrt(h)``.
        """
        coords = list(coordinates)
        vals = list(values)
        if len(coords) != len(vals) or not coords:
            raise InputError("coordinates and values must be non-empty and of equal length")
        if len(set(coords)) != len(coords):
            raise InputError("duplicate coordinates in restriction")
        alpha = np.zeros(p)
        alpha[coords] = 1.0
        return cls(alpha, float(np.sum(vals)))

    @property
    def h(self) -> int:
        return self.coordinates.size

    def __repr__(self):
        return f"RestrictionSpec(coordinates={self.coordinates.tolist()}, null_value={self.null_value!r})"


@dataclass
class InferenceReport:
    b_hat: Dict[int, float]
    v_alpha: float
    z: float
    p_value: float
    intervals: Dict[int, Tuple[float, float]] = field(default_factory=dict)
    sigma: Dict[int, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "b_hat": {str(j): v for j, v in sorted(self.b_hat.items())},
            "v_alpha": self.v_alpha,
            "z": self.z,
            "p_value": self.p_value,
            "sigma": {str(j): v for j, v in sorted(self.sigma.items())},
            "intervals": {str(j): list(ci) for j, ci in sorted(self.intervals.items())},
        }


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def two_sided_p(z: float) -> float:
    """``2 (1 - Phi(|z|))`` evaluated as ``erfc(|z| / sqrt 2)`` (no cancellation)."""
    return math.erfc(abs(z) / math.sqrt(2.0))


def normal_quantile(q: float) -> float:
    return float(ndtri(q))


def debias(beta_hat, theta: PrecisionEstimate, data: Dataset, kind, rows: Optional[Iterable[int]] = None) -> Dict[int, float]:
    """``b_j = beta_j - Theta_j' grad R_n(beta_hat)`` for each requested row.

    ``rows`` defaults to every row present in ``theta``.
    """
    kind = LossKind.parse(kind)
    beta_hat = np.asarray(beta_hat, dtype=float)
    g = glm.risk_gradient(kind, data, beta_hat)
    rows = theta.indices if rows is None else list(rows)
    return {int(j): float(beta_hat[j] - theta.row(j) @ g) for j in rows}


def _direction(alpha, theta: PrecisionEstimate) -> np.ndarray:
    """``Theta' alpha`` from the rows on the support of ``alpha`` only."""
    alpha = np.asarray(alpha, dtype=float)
    support = np.flatnonzero(alpha)
    if support.size == 0:
        raise InputError("alpha is zero")
    u = np.zeros_like(theta.row(int(support[0])))
    for j in support:
        u += alpha[j] * theta.row(int(j))
    return u


def variance_alpha(alpha, theta: PrecisionEstimate, data: Dataset, kind, beta_hat) -> float:
    """``sqrt(alpha' Theta A Theta' alpha)`` with ``A`` the score variance matrix.

    Computed as ``sqrt(mean((X_i' u)^2 rho_dot_i^2))`` for ``u = Theta' alpha``
    so only the rows on the support of ``alpha`` are touched.
    """
    kind = LossKind.parse(kind)
    if isinstance(alpha, RestrictionSpec):
        alpha = alpha.alpha
    u = _direction(alpha, theta)
    beta_hat = np.asarray(beta_hat, dtype=float)
    s = glm.rho_dot(kind, data.y, data.design @ beta_hat)
    q = (data.design @ u) * s
    v2 = float(q @ q) / data.n
    if not v2 >= VARIANCE_FLOOR:
        raise DegenerateVarianceError(f"variance estimate {v2:.3e} below floor {VARIANCE_FLOOR}")
    return math.sqrt(v2)


def wald_test(restriction: RestrictionSpec, b_hat: Dict[int, float], v_alpha: float, n: int):
    """Return ``(z, p_value)`` for ``sqrt(n) (alpha' b - null) / V_alpha``."""
    if not v_alpha * v_alpha >= VARIANCE_FLOOR:
        raise DegenerateVarianceError("variance below floor")
    try:
        est = sum(restriction.alpha[j] * b_hat[int(j)] for j in restriction.coordinates)
    except KeyError as e:
        raise InputError(f"no debiased estimate for coordinate {e.args[0]}") from None
    z = math.sqrt(n) * (est - restriction.null_value) / v_alpha
    return z, two_sided_p(z)


def confidence_interval(j: int, b_hat: Dict[int, float], sigma_j: float, n: int, delta: float):
    """``b_j -/+ z_{1 - delta/2} sigma_j / sqrt(n)``."""
    if not 0 < delta < 1:
        raise InputError("delta must lie in (0, 1)")
    half = normal_quantile(1.0 - delta / 2.0) * sigma_j / math.sqrt(n)
    b = b_hat[j]
    return (b - half, b + half)


def infer(
    restriction: RestrictionSpec,
    beta_hat,
    theta: PrecisionEstimate,
    data: Dataset,
    kind,
    interval_coords: Iterable[int] = (),
    delta: float = 0.05,
) -> InferenceReport:
    """Debias, test ``restriction`` and build intervals for ``interval_coords``."""
    kind = LossKind.parse(kind)
    coords = sorted(set(int(j) for j in restriction.coordinates) | set(interval_coords))
    b = debias(beta_hat, theta, data, kind, coords)
    v = variance_alpha(restriction, theta, data, kind, beta_hat)
    z, pval = wald_test(restriction, b, v, data.n)
    report = InferenceReport(b, v, z, pval)
    for j in interval_coords:
        e = np.zeros(data.n_coef)
        e[j] = 1.0
        sig = variance_alpha(e, theta, data, kind, beta_hat)
        report.sigma[j] = sig
        report.intervals[j] = confidence_interval(j, b, sig, data.n, delta)
    return report
