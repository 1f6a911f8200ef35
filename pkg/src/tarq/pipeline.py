"""Per-layer TARQ, its ablation variants, and the sequential layer sweep."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .errors import DimMismatch, EmptyBatch, ShapeChainMismatch
from .gptq import SweepConfig, gptq_sweep
from .lattice import QuantizedTensor, assert_in_lattice, dequantize
from .linalg import damped_inverse, weighted_inner, weighted_loss
from .stats import (
    EPS_FLOOR,
    GroupedMoments,
    RarebalMetric,
    TaggedActivations,
    accumulate_moments,
    rarebal_metric,
    upweight,
)

VARIANTS = ("gptq", "rarebal_only", "residual_only", "tarq", "rB", "nB", "cB")


@dataclass(frozen=True, eq=False)
class ResidualStep:
    direction: np.ndarray
    alpha: float
    pilot_displacement: np.ndarray
    target: np.ndarray
    delta: float
    eps: float


class Losses(NamedTuple):
    common: float
    tail: float
    weighted: float


@dataclass(frozen=True, eq=False)
class LayerResult:
    quantized: QuantizedTensor
    metric: RarebalMetric
    residual: Optional[ResidualStep]
    losses: Losses
    moments: GroupedMoments
    pilot: Optional[QuantizedTensor] = None

    @property
    def weight(self) -> np.ndarray:
        return dequantize(self.quantized)


def compute_direction(W, m: GroupedMoments, metric: RarebalMetric, delta: float = 0.01,
                      relative: bool = True) -> np.ndarray:
    """Drift-compensating direction ``W H_delta (H + delta I)^-1`` under the layer metric."""
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    if W.shape[1] != m.h_delta.shape[0]:
        raise DimMismatch("weight columns must match moment dimension")
    if not np.any(m.h_delta):
        return np.zeros_like(W)
    return W @ m.h_delta @ damped_inverse(metric.h_rb, delta, relative)


def fit_alpha(E, D, H, eps: Optional[float] = None) -> float:
    """Least-squares step ``<E, D>_H / (<D, D>_H + eps)``.

    The default ``eps`` is ``1e-12 <D, D>_H`` with an absolute floor so that
    ``D == 0`` gives 0.
    """
    dd = weighted_inner(D, D, H)
    if eps is None:
        eps = max(1e-12 * abs(dd), EPS_FLOOR)
    return weighted_inner(E, D, H) / (dd + eps)


def _losses(W, q: QuantizedTensor, m: GroupedMoments) -> Losses:
    dW = W - dequantize(q)
    return Losses(weighted_loss(dW, m.h_common), weighted_loss(dW, m.h_tail), weighted_loss(dW, m.h_plain))


def metric_for(variant: str, m: GroupedMoments, c: float = 1.0, eps_rel: float = 1e-8,
               batch: Optional[TaggedActivations] = None, upweight_mask: Optional[np.ndarray] = None
               ) -> RarebalMetric:
    """Rounding metric used by each ablation variant.

    ``nB`` upweights ``upweight_mask`` (a size-matched random position set)
    by trace equalization against the rest; ``cB`` applies the rare-side
    coefficient to the common positions instead of the tail.
    """
    if variant in ("gptq", "residual_only"):
        return RarebalMetric(h_rb=m.h_plain, lam=1.0, cost_ratio_c=1.0, eps=0.0)
    if variant in ("rarebal_only", "tarq", "rB"):
        return rarebal_metric(m, c, eps_rel=eps_rel)
    if variant == "cB":
        rb = rarebal_metric(m, c, eps_rel=eps_rel)
        return RarebalMetric(h_rb=rb.lam * m.h_common + m.h_tail, lam=rb.lam, cost_ratio_c=c, eps=rb.eps)
    if variant == "nB":
        if batch is None or upweight_mask is None:
            raise ValueError("nB needs the batch and a random upweight mask")
        up = batch.x_q[upweight_mask]
        rest = batch.x_q[~upweight_mask]
        return upweight(rest.T @ rest, up.T @ up, c, eps_rel=eps_rel)
    raise ValueError(f"unknown variant {variant!r}")


def _solve(W, m: GroupedMoments, metric: RarebalMetric, cfg: SweepConfig, residual: bool,
           delta: float) -> LayerResult:
    H = metric.h_rb
    pilot = gptq_sweep(W, H, cfg)
    step = None
    final = pilot
    if residual:
        D = compute_direction(W, m, metric, delta)
        E = dequantize(pilot) - W
        dd = weighted_inner(D, D, H)
        eps = max(1e-12 * abs(dd), EPS_FLOOR)
        alpha = fit_alpha(E, D, H, eps)
        target = W + alpha * D
        step = ResidualStep(D, alpha, E, target, delta, eps)
        if np.any(D):
            final = gptq_sweep(target, H, cfg)
    assert_in_lattice(final)
    return LayerResult(final, metric, step, _losses(W, final, m), m, pilot)


def _check_layer(W, batch: TaggedActivations) -> np.ndarray:
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    if len(batch) == 0:
        raise EmptyBatch("no calibration positions")
    if W.shape[1] != batch.dim:
        raise DimMismatch(f"weight has {W.shape[1]} columns, activations have {batch.dim}")
    return W


def tarq_layer(W, batch: TaggedActivations, cfg: SweepConfig, c: float = 1.0, eps_rel: float = 1e-8,
               delta: float = 0.01) -> LayerResult:
    """Rebalanced metric, pilot sweep, drift residual, final sweep on the shifted target."""
    W = _check_layer(W, batch)
    m = accumulate_moments(batch)
    return _solve(W, m, rarebal_metric(m, c, eps_rel=eps_rel), cfg, True, delta)


def ablation_variant(W, batch: TaggedActivations, cfg: SweepConfig, variant: str, c: float = 1.0,
                     eps_rel: float = 1e-8, delta: float = 0.01,
                     upweight_mask: Optional[np.ndarray] = None) -> LayerResult:
    W = _check_layer(W, batch)
    m = accumulate_moments(batch)
    metric = metric_for(variant, m, c, eps_rel, batch, upweight_mask)
    residual = variant not in ("gptq", "rarebal_only")
    return _solve(W, m, metric, cfg, residual, delta)


LayerSolver = Callable[[np.ndarray, TaggedActivations], LayerResult]


@dataclass(frozen=True, eq=False)
class SweepStep:
    result: LayerResult
    batch: TaggedActivations
    out_fp: np.ndarray
    out_q: np.ndarray


def check_chain(layers: Sequence[np.ndarray], d_in: int) -> None:
    for i, W in enumerate(layers):
        if W.ndim != 2 or W.shape[1] != d_in:
            raise ShapeChainMismatch(f"layer {i} expects {W.shape[-1]} inputs, chain provides {d_in}")
        d_in = W.shape[0]


def sequential_sweep(layers: Sequence[np.ndarray], inputs, tail, solver: LayerSolver,
                     nonlinearity: Callable[[np.ndarray], np.ndarray] = np.tanh) -> list[SweepStep]:
    """Quantize a chain of linear maps in order.

    Two streams are carried: full precision through the original weights and
    quantized through the weights already replaced. ``nonlinearity`` is
    applied between layers, not after the last one.
    """
    layers = [np.atleast_2d(np.asarray(W, dtype=np.float64)) for W in layers]
    x_fp = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    check_chain(layers, x_fp.shape[1])
    tail = np.asarray(tail, dtype=bool)
    x_q = x_fp
    steps = []
    for i, W in enumerate(layers):
        batch = TaggedActivations(x_fp, x_q, tail)
        res = solver(W, batch)
        out_fp = x_fp @ W.T
        out_q = x_q @ res.weight.T
        steps.append(SweepStep(res, batch, out_fp, out_q))
        if i + 1 < len(layers):
            x_fp, x_q = nonlinearity(out_fp), nonlinearity(out_q)
    return steps
