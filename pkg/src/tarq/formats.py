"""Binary tensor container and the line-oriented report format.

Tensor files::

    b"TQT1" | u32 version (=1) | u32 section_count | section*
    section := u8 type | u64 payload_length | payload

    0x01 fp tensor     u32 ndim | u64 dims[ndim] | f32 data (row-major)
    0x02 packed quant  u32 bits | u32 group | u64 rows | u64 cols
                       | f32 scales (rows x ceil(cols/group)) | pack4 bytes
    0x03 fp columns    u64 rows | u64 count | u64 index[count]
                       | f32 values (rows x count, row-major)

All integers and floats are little-endian.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import EmptyReport, FormatError
from .lattice import QuantConfig, QuantizedTensor, pack4, unpack4

MAGIC = b"TQT1"
VERSION = 1
FP_TENSOR, PACKED_QUANT, FP_COLUMNS = 0x01, 0x02, 0x03

Section = Union[np.ndarray, QuantizedTensor]


def _fp_payload(a: np.ndarray) -> bytes:
    a = np.asarray(a)
    head = struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape)
    return head + np.ascontiguousarray(a, dtype="<f4").tobytes()


def _quant_payload(q: QuantizedTensor) -> bytes:
    head = struct.pack("<IIQQ", q.config.bits, q.config.group_size, q.rows, q.cols)
    return head + np.ascontiguousarray(q.scales, dtype="<f4").tobytes() + pack4(q)


def _sidecar_payload(q: QuantizedTensor) -> bytes:
    cols = np.asarray(q.fp_columns, dtype="<u8")
    head = struct.pack("<QQ", q.rows, len(cols)) + cols.tobytes()
    return head + np.ascontiguousarray(q.fp_values, dtype="<f4").tobytes()


def encode(sections: Sequence[Section]) -> bytes:
    """Serialize arrays (type 0x01) and quantized tensors (0x02, plus 0x03
    when the tensor carries full-precision columns)."""
    chunks = []
    for sec in sections:
        if isinstance(sec, QuantizedTensor):
            chunks.append((PACKED_QUANT, _quant_payload(sec)))
            if sec.fp_columns is not None:
                chunks.append((FP_COLUMNS, _sidecar_payload(sec)))
        else:
            chunks.append((FP_TENSOR, _fp_payload(sec)))
    out = [MAGIC, struct.pack("<II", VERSION, len(chunks))]
    for kind, payload in chunks:
        out.append(struct.pack("<BQ", kind, len(payload)))
        out.append(payload)
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("truncated tensor file")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float64)


def _decode_fp(r: _Reader) -> np.ndarray:
    (ndim,) = r.unpack("<I")
    dims = r.unpack(f"<{ndim}Q")
    return r.floats(int(np.prod(dims, dtype=np.int64))).reshape(dims)


def _decode_quant(r: _Reader) -> QuantizedTensor:
    bits, group, rows, cols = r.unpack("<IIQQ")
    try:
        cfg = QuantConfig(bits=bits, group_size=group)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc
    scales = r.floats(rows * cfg.n_groups(cols)).reshape(rows, cfg.n_groups(cols))
    return unpack4(r.take(rows * (-(-cols // 2))), rows, cols, scales, cfg)


def decode(data: bytes) -> list:
    """Inverse of :func:`encode`. A 0x03 section attaches to the preceding
    quantized tensor."""
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise FormatError("bad magic")
    version, count = r.unpack("<II")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    out = []
    for _ in range(count):
        kind, length = r.unpack("<BQ")
        sub = _Reader(r.take(length))
        if kind == FP_TENSOR:
            out.append(_decode_fp(sub))
        elif kind == PACKED_QUANT:
            out.append(_decode_quant(sub))
        elif kind == FP_COLUMNS:
            if not out or not isinstance(out[-1], QuantizedTensor):
                raise FormatError("fp-column section without a quantized tensor")
            rows, n = sub.unpack("<QQ")
            cols = np.frombuffer(sub.take(8 * n), dtype="<u8").astype(np.intp)
            vals = sub.floats(rows * n).reshape(rows, n)
            q = out[-1]
            out[-1] = QuantizedTensor(q.codes, q.scales, q.config, fp_columns=cols, fp_values=vals)
        else:
            raise FormatError(f"unknown section type 0x{kind:02x}")
        if sub.pos != length:
            raise FormatError("section payload length mismatch")
    if r.pos != len(data):
        raise FormatError("trailing bytes after last section")
    return out


def write_tensors(path, sections: Sequence[Section]) -> None:
    Path(path).write_bytes(encode(sections))


def read_tensors(path) -> list:
    return decode(Path(path).read_bytes())


# --- reports -------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def report_lines(reports: Iterable) -> list:
    """One ``config`` line per report followed by one ``layer`` line per layer."""
    lines = []
    for idx, rep in enumerate(reports):
        if not rep.per_layer:
            raise EmptyReport(f"report {idx} ({rep.method}) has no layers")
        head = {
            "record": "config", "report": idx, "method": rep.method, "trials": rep.trials,
            "config": _jsonable(rep.config),
        }
        if len(rep.trial_tail):
            head["output_common_loss"] = float(np.mean(rep.trial_common))
            head["output_tail_loss"] = float(np.mean(rep.trial_tail))
        lines.append(json.dumps(head, sort_keys=True))
        for layer, rec in enumerate(rep.per_layer):
            row = {"record": "layer", "report": idx, "method": rep.method, "layer": layer}
            row.update(_jsonable(asdict(rec)))
            lines.append(json.dumps(row, sort_keys=True))
    return lines


def emit_report(reports: Sequence, path) -> None:
    if not reports:
        raise EmptyReport("no reports to write")
    Path(path).write_text("\n".join(report_lines(reports)) + "\n", encoding="utf-8")


def read_report(path) -> list:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line]
