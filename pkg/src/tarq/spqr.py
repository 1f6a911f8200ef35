"""Outlier-column protection with the rarity/outlier orthogonality gate."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, EmptyBatch
from .gptq import SweepConfig, gptq_sweep
from .lattice import assert_in_lattice, dequantize
from .linalg import SingularMetric, as_sym, weighted_loss
from .pipeline import LayerResult, Losses
from .stats import RarebalMetric, TaggedActivations, accumulate_moments, rarebal_metric, second_moment


@dataclass(frozen=True)
class GateConfig:
    outlier_fraction: float = 0.01
    gate_threshold: float = 3.0
    base_damp: float = 0.01

    def __post_init__(self):
        if not 0 < self.outlier_fraction <= 1:
            raise ValueError("outlier_fraction must lie in (0, 1]")
        if not self.gate_threshold > 0:
            raise ValueError("gate_threshold must be positive")


@dataclass(frozen=True, eq=False)
class OutlierSet:
    columns: np.ndarray
    saliences: np.ndarray

    def mask(self, d: int) -> np.ndarray:
        out = np.zeros(d, dtype=bool)
        out[self.columns] = True
        return out


def outlier_count(d: int, fraction: float) -> int:
    # round() first so 0.07 * 100 does not ceil to 8
    return max(1, math.ceil(round(fraction * d, 9)))


def select_outliers(W, acts: TaggedActivations, cfg: GateConfig = GateConfig()) -> OutlierSet:
    """Top ``ceil(rho * d)`` input channels by ``||W[:, j]||^2 / [H0^-1]_jj``.

    ``H0`` is the unweighted second moment of ``x_q`` plus
    ``base_damp * tr(H0) / d`` on the diagonal (undamped trace). Ties go to
    the lower column index.
    """
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    if len(acts) == 0:
        raise EmptyBatch("no calibration positions")
    d = acts.dim
    if W.shape[1] != d:
        raise DimMismatch("weight columns must match activation dim")
    H0 = second_moment(acts.x_q)
    H0 = H0 + cfg.base_damp * np.trace(H0) / d * np.eye(d)
    try:
        diag_inv = np.diag(np.linalg.inv(H0))
    except np.linalg.LinAlgError as exc:
        raise SingularMetric("outlier metric is singular") from exc
    if np.any(diag_inv <= 0) or not np.all(np.isfinite(diag_inv)):
        raise SingularMetric("outlier metric is singular")
    sal = np.sum(W**2, axis=0) / diag_inv
    k = outlier_count(d, cfg.outlier_fraction)
    order = np.argsort(-sal, kind="stable")
    return OutlierSet(columns=np.sort(order[:k]), saliences=sal)


def gate_flags(x: np.ndarray, outliers: OutlierSet, cfg: GateConfig) -> np.ndarray:
    """Positions whose largest outlier-channel magnitude exceeds ``tau * E|x|``."""
    mean_abs = float(np.mean(np.abs(x)))
    peak = np.max(np.abs(x[:, outliers.columns]), axis=1)
    return peak > cfg.gate_threshold * mean_abs


def gate_weights(acts: TaggedActivations, outliers: OutlierSet, rarity_weights,
                 cfg: GateConfig = GateConfig()) -> np.ndarray:
    """Second moment with rarity weights replaced by 1 on gated positions."""
    w = np.asarray(rarity_weights, dtype=np.float64)
    if w.shape != (len(acts),):
        raise DimMismatch("one rarity weight per position required")
    flags = gate_flags(acts.x_q, outliers, cfg)
    return second_moment(acts.x_q, np.where(flags, 1.0, w))


def rarity_weights(tail: np.ndarray, lam: float) -> np.ndarray:
    return np.where(tail, lam, 1.0)


def spqr_tarq_layer(W, batch: TaggedActivations, cfg: SweepConfig, gate: GateConfig = GateConfig(),
                    gate_enabled: bool = False, rarity: bool = True, c: float = 1.0,
                    eps_rel: float = 1e-8) -> LayerResult:
    """Protect the salient input channels at full precision and sweep the rest.

    With ``rarity`` the metric is the rarity-weighted moment (tail positions
    weighted by the trace-equalizing coefficient); ``gate_enabled`` resets
    that weight to 1 wherever an outlier channel already fires.
    """
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    m = accumulate_moments(batch)
    if W.shape[1] != batch.dim:
        raise DimMismatch("weight columns must match activation dim")
    outliers = select_outliers(W, batch, gate)
    if rarity:
        lam = rarebal_metric(m, c, eps_rel=eps_rel).lam
        w = rarity_weights(batch.tail, lam)
    else:
        lam = 1.0
        w = np.ones(len(batch))
    if gate_enabled:
        H = gate_weights(batch, outliers, w, gate)
    else:
        H = second_moment(batch.x_q, w)
    metric = RarebalMetric(h_rb=as_sym(H), lam=lam, cost_ratio_c=c, eps=0.0)
    q = gptq_sweep(W, metric.h_rb, cfg, protect=outliers.mask(batch.dim))
    assert_in_lattice(q)
    dW = W - dequantize(q)
    losses = Losses(weighted_loss(dW, m.h_common), weighted_loss(dW, m.h_tail), weighted_loss(dW, m.h_plain))
    return LayerResult(q, metric, None, losses, m)
