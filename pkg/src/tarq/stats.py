"""Group-partitioned second moments, the rebalanced metric, and loss splits."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import DimMismatch, EmptyBatch
from .linalg import as_sym, weighted_loss

EPS_FLOOR = 1e-30


@dataclass(frozen=True, eq=False)
class TaggedActivations:
    """Paired layer inputs for ``N`` calibration positions.

    ``x_fp`` comes from the full-precision network, ``x_q`` from the
    partially quantized one; ``tail`` marks lexical-tail positions.
    """

    x_fp: np.ndarray
    x_q: np.ndarray
    tail: np.ndarray

    def __post_init__(self):
        if self.x_fp.ndim != 2 or self.x_fp.shape != self.x_q.shape:
            raise DimMismatch(f"stream shapes differ: {self.x_fp.shape} vs {self.x_q.shape}")
        if self.tail.shape != (self.x_fp.shape[0],):
            raise DimMismatch("one tag per position required")

    @classmethod
    def from_arrays(cls, x_fp, x_q=None, tail=None) -> "TaggedActivations":
        x_fp = np.atleast_2d(np.asarray(x_fp, dtype=np.float64))
        x_q = x_fp if x_q is None else np.atleast_2d(np.asarray(x_q, dtype=np.float64))
        if tail is None:
            tail = np.zeros(x_fp.shape[0], dtype=bool)
        return cls(x_fp, x_q, np.asarray(tail, dtype=bool))

    @property
    def dim(self) -> int:
        return self.x_fp.shape[1]

    def __len__(self) -> int:
        return self.x_fp.shape[0]


@dataclass(frozen=True, eq=False)
class GroupedMoments:
    h_common: np.ndarray
    h_tail: np.ndarray
    h_delta: np.ndarray
    n_common: int
    n_tail: int

    @property
    def h_plain(self) -> np.ndarray:
        """The frequency-weighted metric ``h_common + h_tail``."""
        return as_sym(self.h_common + self.h_tail)


@dataclass(frozen=True, eq=False)
class RarebalMetric:
    h_rb: np.ndarray
    lam: float
    cost_ratio_c: float
    eps: float


def second_moment(X: np.ndarray, weights: Optional[np.ndarray] = None) -> np.ndarray:
    """``sum_t w_t x_t x_t^T`` over the rows of ``X``."""
    if weights is None:
        return as_sym(X.T @ X)
    return as_sym((X * weights[:, None]).T @ X)


def accumulate_moments(batch: TaggedActivations) -> GroupedMoments:
    if len(batch) == 0:
        raise EmptyBatch("no calibration positions")
    xq = batch.x_q
    common = xq[~batch.tail]
    tail = xq[batch.tail]
    return GroupedMoments(
        h_common=second_moment(common),
        h_tail=second_moment(tail),
        h_delta=(batch.x_fp - xq).T @ xq,
        n_common=int(common.shape[0]),
        n_tail=int(tail.shape[0]),
    )


def resolve_eps(h_base: np.ndarray, eps: Optional[float], eps_rel: float) -> float:
    if eps is not None:
        return float(eps)
    return max(eps_rel * float(np.trace(h_base)), EPS_FLOOR)


def upweight(h_base, h_up, c: float = 1.0, eps: Optional[float] = None, eps_rel: float = 1e-8) -> RarebalMetric:
    """Rescale ``h_up`` by ``c * tr(h_base) / (tr(h_up) + eps)`` and add it to ``h_base``."""
    if not c > 0:
        raise ValueError("cost ratio must be positive")
    eps = resolve_eps(h_base, eps, eps_rel)
    lam = c * float(np.trace(h_base)) / (float(np.trace(h_up)) + eps)
    return RarebalMetric(h_rb=h_base + lam * h_up, lam=lam, cost_ratio_c=c, eps=eps)


def rarebal_metric(m: GroupedMoments, c: float = 1.0, eps: Optional[float] = None,
                   eps_rel: float = 1e-8) -> RarebalMetric:
    """Trace-equalized metric ``h_common + lam * h_tail``.

    ``eps`` defaults to ``eps_rel * tr(h_common)``. With no tail positions
    ``h_tail`` is zero and the result is ``h_common`` bit-for-bit.
    """
    return upweight(m.h_common, m.h_tail, c, eps, eps_rel)


class GroupLosses(NamedTuple):
    common: float
    tail: float


def group_losses(delta_w, m: GroupedMoments) -> GroupLosses:
    return GroupLosses(weighted_loss(delta_w, m.h_common), weighted_loss(delta_w, m.h_tail))


class MixtureSplit(NamedTuple):
    l_rec: float
    p: float
    l_common_avg: float
    l_tail_avg: float


def mixture_decompose(batch: TaggedActivations, delta_w) -> MixtureSplit:
    """Average reconstruction loss and its common/tail group averages.

    An empty group contributes an average of 0 (its weight in the mixture is 0).
    """
    if len(batch) == 0:
        raise EmptyBatch("no calibration positions")
    delta_w = np.atleast_2d(np.asarray(delta_w, dtype=np.float64))
    if delta_w.shape[1] != batch.dim:
        raise DimMismatch("delta_w columns must match activation dim")
    per_pos = np.sum((batch.x_q @ delta_w.T) ** 2, axis=1)
    n = len(batch)
    n_tail = int(batch.tail.sum())
    tail_avg = float(per_pos[batch.tail].mean()) if n_tail else 0.0
    common_avg = float(per_pos[~batch.tail].mean()) if n_tail < n else 0.0
    return MixtureSplit(float(per_pos.mean()), n_tail / n, common_avg, tail_avg)


def rare_mass_share(m: GroupedMoments) -> float:
    tc, tt = float(np.trace(m.h_common)), float(np.trace(m.h_tail))
    if tc + tt <= 0:
        raise EmptyBatch("no second-moment mass")
    return tt / (tc + tt)
