"""Uniform group quantization lattice, round-to-nearest, and 4-bit packing.

Scales are computed per row over groups of ``group_size`` contiguous input
channels. They are rounded to float32 on creation so an in-memory
:class:`QuantizedTensor` is identical to one read back from disk.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import BitsUnsupported, DimMismatch, LengthMismatch


@dataclass(frozen=True)
class QuantConfig:
    bits: int = 4
    group_size: int = 128
    scale_floor: float = 1e-12
    # "minmax" follows (max - min) / (2^b - 1); "absmax" uses max|w| / (2^(b-1) - 1).
    scale_mode: str = "minmax"

    def __post_init__(self):
        if not 2 <= self.bits <= 8:
            raise ValueError(f"bits must be in [2, 8], got {self.bits}")
        if self.group_size < 1:
            raise ValueError("group_size must be positive")
        if not self.scale_floor > 0:
            raise ValueError("scale_floor must be positive")
        if self.scale_mode not in ("minmax", "absmax"):
            raise ValueError(f"unknown scale_mode {self.scale_mode!r}")

    @property
    def qmin(self) -> int:
        return -(2 ** (self.bits - 1))

    @property
    def qmax(self) -> int:
        return 2 ** (self.bits - 1) - 1

    def n_groups(self, cols: int) -> int:
        return -(-cols // self.group_size)


@dataclass(frozen=True, eq=False)
class QuantizedTensor:
    """Integer codes plus per-group scales.

    ``fp_columns``/``fp_values`` optionally hold input channels kept at full
    precision (outlier protection); :func:`dequantize` overlays them.
    """

    codes: np.ndarray
    scales: np.ndarray
    config: QuantConfig
    fp_columns: Optional[np.ndarray] = field(default=None)
    fp_values: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        rows, cols = self.codes.shape
        if self.scales.shape != (rows, self.config.n_groups(cols)):
            raise DimMismatch(
                f"scales shape {self.scales.shape} does not match codes {self.codes.shape}"
            )
        if (self.fp_columns is None) != (self.fp_values is None):
            raise ValueError("fp_columns and fp_values must be given together")
        if self.fp_columns is not None and self.fp_values.shape != (rows, len(self.fp_columns)):
            raise DimMismatch("fp_values must be rows x len(fp_columns)")

    @property
    def rows(self) -> int:
        return self.codes.shape[0]

    @property
    def cols(self) -> int:
        return self.codes.shape[1]

    def same_as(self, other: "QuantizedTensor") -> bool:
        """Field-for-field equality (codes, scales, config, sidecar)."""
        if self.config != other.config:
            return False
        if not (np.array_equal(self.codes, other.codes) and np.array_equal(self.scales, other.scales)):
            return False
        if self.fp_columns is None or other.fp_columns is None:
            return self.fp_columns is None and other.fp_columns is None
        return np.array_equal(self.fp_columns, other.fp_columns) and np.array_equal(
            self.fp_values, other.fp_values
        )


def round_half_away(x: np.ndarray) -> np.ndarray:
    a = np.abs(x)
    f = np.floor(a)
    r = f + (a - f >= 0.5)
    return np.copysign(r, x)


def column_groups(cols: int, group_size: int) -> np.ndarray:
    return np.arange(cols) // group_size


def group_scales(W, cfg: QuantConfig, exclude: Optional[np.ndarray] = None) -> np.ndarray:
    """Per-row, per-group scales, shape ``(m, ceil(n / g))``.

    ``exclude`` is a boolean column mask of channels left out of the range
    computation (used for full-precision outlier columns).
    """
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    m, n = W.shape
    out = np.empty((m, cfg.n_groups(n)))
    keep = np.ones(n, dtype=bool) if exclude is None else ~np.asarray(exclude, dtype=bool)
    for k in range(out.shape[1]):
        sl = slice(k * cfg.group_size, min((k + 1) * cfg.group_size, n))
        block = W[:, sl][:, keep[sl]]
        if block.shape[1] == 0:
            out[:, k] = 0.0
        elif cfg.scale_mode == "minmax":
            out[:, k] = (block.max(axis=1) - block.min(axis=1)) / (2**cfg.bits - 1)
        else:
            out[:, k] = np.abs(block).max(axis=1) / cfg.qmax
    out = np.maximum(out, cfg.scale_floor)
    return out.astype(np.float32).astype(np.float64)


def quantize_column(w: np.ndarray, scale: np.ndarray, cfg: QuantConfig) -> np.ndarray:
    """Integer codes for one column given the scale of each row."""
    return np.clip(round_half_away(w / scale), cfg.qmin, cfg.qmax).astype(np.int8)


def quantize_with_scales(W, scales: np.ndarray, cfg: QuantConfig) -> QuantizedTensor:
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    expanded = scales[:, column_groups(W.shape[1], cfg.group_size)]
    codes = np.clip(round_half_away(W / expanded), cfg.qmin, cfg.qmax).astype(np.int8)
    return QuantizedTensor(codes=codes, scales=scales, config=cfg)


def quantize_rtn(W, cfg: QuantConfig) -> QuantizedTensor:
    """Round every weight to the nearest point of its group's lattice."""
    return quantize_with_scales(W, group_scales(W, cfg), cfg)


def dequantize(q: QuantizedTensor) -> np.ndarray:
    expanded = q.scales[:, column_groups(q.cols, q.config.group_size)]
    W = expanded * q.codes.astype(np.float64)
    if q.fp_columns is not None:
        W[:, q.fp_columns] = q.fp_values
    return W


def assert_in_lattice(q: QuantizedTensor) -> None:
    """Raise AssertionError if any code falls outside the signed code range."""
    if q.codes.size and (q.codes.min() < q.config.qmin or q.codes.max() > q.config.qmax):
        raise AssertionError(
            f"codes outside [{q.config.qmin}, {q.config.qmax}]: "
            f"min {q.codes.min()}, max {q.codes.max()}"
        )
    if np.any(q.scales <= 0):
        raise AssertionError("non-positive scale")


def pack4(q: QuantizedTensor) -> bytes:
    """Two codes per byte, row-major; even column in the low nibble.

    Rows of odd length are padded with a zero high nibble.
    """
    if q.config.bits != 4:
        raise BitsUnsupported(f"pack4 needs 4-bit codes, got {q.config.bits}")
    nib = (q.codes.astype(np.int16) & 0xF).astype(np.uint8)
    if q.cols % 2:
        nib = np.concatenate([nib, np.zeros((q.rows, 1), dtype=np.uint8)], axis=1)
    return (nib[:, 0::2] | (nib[:, 1::2] << 4)).astype(np.uint8).tobytes()


def unpack4(data: bytes, rows: int, cols: int, scales: np.ndarray, cfg: QuantConfig) -> QuantizedTensor:
    if cfg.bits != 4:
        raise BitsUnsupported(f"unpack4 needs 4-bit config, got {cfg.bits}")
    per_row = -(-cols // 2)
    if len(data) != rows * per_row:
        raise LengthMismatch(f"expected {rows * per_row} bytes, got {len(data)}")
    raw = np.frombuffer(data, dtype=np.uint8).reshape(rows, per_row)
    nib = np.empty((rows, 2 * per_row), dtype=np.int16)
    nib[:, 0::2] = raw & 0xF
    nib[:, 1::2] = raw >> 4
    nib = nib[:, :cols]
    codes = np.where(nib >= 8, nib - 16, nib).astype(np.int8)
    return QuantizedTensor(codes=codes, scales=np.asarray(scales, dtype=np.float64), config=cfg)
