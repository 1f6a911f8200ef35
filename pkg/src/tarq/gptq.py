"""Metric-weighted column sweep (GPTQ) onto the group lattice."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DimMismatch
from .lattice import (
    QuantConfig,
    QuantizedTensor,
    column_groups,
    dequantize,
    group_scales,
    quantize_column,
)
from .linalg import as_sym, cholesky_of_inverse, weighted_loss


@dataclass(frozen=True)
class SweepConfig:
    quant: QuantConfig = field(default_factory=QuantConfig)
    percdamp: float = 0.01
    act_order: bool = False

    def __post_init__(self):
        if self.percdamp < 0:
            raise ValueError("percdamp must be non-negative")
        if self.act_order:
            raise NotImplementedError("activation reordering is not supported")


def gptq_sweep(W, H, cfg: SweepConfig, protect: Optional[np.ndarray] = None) -> QuantizedTensor:
    """Quantize ``W`` column by column, pushing each column's error onto the
    columns after it through the Cholesky factor of the damped ``H^-1``.

    Group scales are fixed from the input ``W`` before the sweep starts.
    Columns flagged in the boolean mask ``protect`` are kept at full
    precision: they are removed from the metric, excluded from the scale
    range, and returned through the tensor's sidecar.
    """
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    H = as_sym(H)
    m, n = W.shape
    if H.shape != (n, n):
        raise DimMismatch(f"metric {H.shape} does not match {n} input channels")
    qcfg = cfg.quant
    protect = np.zeros(n, dtype=bool) if protect is None else np.asarray(protect, dtype=bool)
    keep = np.flatnonzero(~protect)

    scales = group_scales(W, qcfg, exclude=protect if protect.any() else None)
    groups = column_groups(n, qcfg.group_size)
    codes = np.zeros((m, n), dtype=np.int8)

    if keep.size:
        U = cholesky_of_inverse(H[np.ix_(keep, keep)], cfg.percdamp).upper
        Wt = W[:, keep].copy()
        for j, col in enumerate(keep):
            s = scales[:, groups[col]]
            c = quantize_column(Wt[:, j], s, qcfg)
            codes[:, col] = c
            err = (Wt[:, j] - s * c) / U[j, j]
            Wt[:, j + 1:] -= np.outer(err, U[j, j + 1:])

    if protect.any():
        cols = np.flatnonzero(protect)
        return QuantizedTensor(codes, scales, qcfg, fp_columns=cols, fp_values=W[:, cols].copy())
    return QuantizedTensor(codes, scales, qcfg)


def sweep_loss_report(W, q: QuantizedTensor, H) -> float:
    """Weighted reconstruction loss ``tr(dW H dW^T)`` of a sweep result."""
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    return weighted_loss(W - dequantize(q), H)
