"""Weakly decomposable norms: the l1 norm and the weighted group lasso.

Everything here works on 0-based index arrays. The 1-based list form is only
used for (de)serialization, see :meth:`GroupPartition.from_lists`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import InputError

L1 = "l1"
WGL = "wgl"
_KINDS = (L1, WGL)


class GroupPartition:
    """Disjoint cover of ``{0, ..., p-1}`` by non-empty groups.

    Parameters
    ----------
    groups : sequence of sequences of int
        0-based coefficient indices of each group.
    p : int, optional
        Number of coefficients. Defaults to the size of the union.
    """

    def __init__(self, groups: Iterable[Sequence[int]], p: Optional[int] = None):
        groups = [np.asarray(g, dtype=np.intp).ravel() for g in groups]
        if not groups:
            raise InputError("a partition needs at least one group")
        for k, g in enumerate(groups):
            if g.size == 0:
                raise InputError(f"group {k + 1} is empty")
        flat = np.concatenate(groups)
        if p is None:
            p = flat.size
        if flat.size != p or np.unique(flat).size != p or flat.min() < 0 or flat.max() >= p:
            raise InputError(
                f"groups must be disjoint and cover exactly {p} coefficients"
            )
        self.p = int(p)
        self.groups = tuple(groups)
        self.labels = np.empty(p, dtype=np.intp)
        for k, g in enumerate(groups):
            self.labels[g] = k
        self.sizes = np.array([g.size for g in groups], dtype=float)
        self.weights = np.sqrt(self.sizes)

    @classmethod
    def from_lists(cls, lists: Iterable[Sequence[int]], p: Optional[int] = None):
        """Build from 1-based index lists (the config file format)."""
        lists = [list(g) for g in lists]
        for k, g in enumerate(lists):
            if any(not isinstance(i, (int, np.integer)) or isinstance(i, bool) for i in g):
                raise InputError(f"group {k + 1} has non-integer indices")
        return cls([[i - 1 for i in g] for g in lists], p)

    @classmethod
    def contiguous(cls, sizes: Sequence[int]):
        """Consecutive blocks of the given sizes."""
        edges = np.concatenate([[0], np.cumsum(sizes)])
        return cls([np.arange(a, b) for a, b in zip(edges[:-1], edges[1:])])

    def to_lists(self) -> list:
        return [[int(i) + 1 for i in g] for g in self.groups]

    @property
    def m(self) -> int:
        return len(self.groups)

    def group_norms(self, v: np.ndarray) -> np.ndarray:
        """Euclidean norm of every block of ``v``."""
        scale = np.abs(v).max(initial=0.0)
        if scale == 0 or not np.isfinite(scale):
            return np.sqrt(np.bincount(self.labels, weights=v * v, minlength=self.m))
        u = v / scale
        return scale * np.sqrt(np.bincount(self.labels, weights=u * u, minlength=self.m))

    def drop(self, j: int) -> "GroupPartition":
        """Partition of the remaining ``p-1`` coordinates once ``j`` is removed."""
        groups = []
        for g in self.groups:
            g = g[g != j]
            if g.size:
                groups.append(np.where(g > j, g - 1, g))
        return GroupPartition(groups, self.p - 1)

    def __eq__(self, other):
        return (
            isinstance(other, GroupPartition)
            and self.p == other.p
            and len(self.groups) == len(other.groups)
            and all(np.array_equal(a, b) for a, b in zip(self.groups, other.groups))
        )

    def __repr__(self):
        return f"GroupPartition(m={self.m}, p={self.p})"


@dataclass(frozen=True)
class NormSpec:
    """Penalty norm plus the weaker norm used for nodewise regressions.

    ``kind`` is ``"l1"`` or ``"wgl"`` (weighted group lasso, group weights
    fixed at the square root of the group size). ``weak_kind`` may be ``"l1"``
    or, for a group penalty, the same group norm.
    """

    kind: str
    p: int
    partition: Optional[GroupPartition] = field(default=None, compare=False)
    weak_kind: str = L1

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise InputError(f"unknown norm kind {self.kind!r}")
        if self.weak_kind not in _KINDS:
            raise InputError(f"unknown weak norm kind {self.weak_kind!r}")
        if self.kind == WGL:
            if self.partition is None:
                raise InputError("weighted group lasso needs a partition")
            if self.partition.p != self.p:
                raise InputError(
                    f"partition covers {self.partition.p} coefficients, expected {self.p}"
                )
        elif self.weak_kind == WGL:
            raise InputError("weak norm may not be stronger than the l1 penalty")

    @classmethod
    def l1(cls, p: int) -> "NormSpec":
        return cls(L1, int(p))

    @classmethod
    def group_lasso(cls, partition: GroupPartition, weak_kind: str = L1) -> "NormSpec":
        return cls(WGL, partition.p, partition, weak_kind)

    def weak(self) -> "NormSpec":
        """The weak norm as a standalone NormSpec."""
        if self.weak_kind == L1:
            return NormSpec.l1(self.p)
        return NormSpec.group_lasso(self.partition)

    def _check(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.p,):
            raise InputError(f"expected a vector of length {self.p}, got shape {v.shape}")
        return v

    def value(self, beta) -> float:
        beta = self._check(beta)
        if self.kind == L1:
            return float(np.abs(beta).sum())
        return float(self.partition.weights @ self.partition.group_norms(beta))

    def dual(self, omega) -> float:
        omega = self._check(omega)
        if self.kind == L1:
            return float(np.abs(omega).max())
        return float((self.partition.group_norms(omega) / self.partition.weights).max())

    def prox(self, v, t: float) -> np.ndarray:
        v = self._check(v)
        if t < 0:
            raise InputError("prox step must be non-negative")
        if self.kind == L1:
            return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)
        norms = self.partition.group_norms(v)
        with np.errstate(divide="ignore", invalid="ignore"):
            shrink = np.where(
                norms > 0, np.maximum(1.0 - t * self.partition.weights / norms, 0.0), 0.0
            )
        return v * shrink[self.partition.labels]


def norm_value(spec: NormSpec, beta) -> float:
    """Penalty value: sum of absolute values, or sum_j sqrt(|G_j|) ||beta_Gj||_2."""
    return spec.value(beta)


def dual_norm_value(spec: NormSpec, omega) -> float:
    """Dual norm: max |omega_j|, or max_j ||omega_Gj||_2 / sqrt(|G_j|)."""
    return spec.dual(omega)


def prox(spec: NormSpec, v, t: float) -> np.ndarray:
    """``argmin_u 0.5 ||u - v||^2 + t * Omega(u)``.

    Soft thresholding for l1, blockwise shrinkage for the group norm. A block
    with zero norm maps to zero.
    """
    return spec.prox(v, t)


class AllowedSet:
    """Index set for which the norm splits; whole groups for the group norm."""

    def __init__(self, indices: Iterable[int], spec: NormSpec):
        idx = np.unique(np.asarray(list(indices), dtype=np.intp))
        if idx.size and (idx.min() < 0 or idx.max() >= spec.p):
            raise InputError("allowed set indices out of range")
        if spec.kind == WGL:
            mask = np.zeros(spec.p, dtype=bool)
            mask[idx] = True
            for k, g in enumerate(spec.partition.groups):
                if 0 < mask[g].sum() < g.size:
                    raise InputError(f"set splits group {k + 1}; not allowed")
        self.indices = idx
        self.spec = spec

    @classmethod
    def from_groups(cls, spec: NormSpec, group_ids: Iterable[int]) -> "AllowedSet":
        ids = list(group_ids)
        groups = [spec.partition.groups[k] for k in ids]
        idx = np.concatenate(groups) if groups else np.array([], dtype=np.intp)
        return cls(idx, spec)

    def mask(self) -> np.ndarray:
        m = np.zeros(self.spec.p, dtype=bool)
        m[self.indices] = True
        return m


def decomposition_gap(spec: NormSpec, beta, S) -> float:
    """``Omega(beta) - Omega(beta_S) - Omega^{S^c}(beta_{S^c})``.

    For the two norms implemented the complement norm is the restriction of
    ``Omega`` to ``S^c``, so the gap is zero up to rounding.
    """
    if not isinstance(S, AllowedSet):
        S = AllowedSet(S, spec)
    elif S.spec.kind != spec.kind or S.spec.p != spec.p:
        raise InputError("allowed set was built for a different norm")
    beta = spec._check(beta)
    m = S.mask()
    return spec.value(beta) - spec.value(np.where(m, beta, 0.0)) - spec.value(
        np.where(m, 0.0, beta)
    )
