"""SRUF checkpoint files.

Layout (everything little-endian):

    magic "SRUF" | u32 version | u32 record count | records...

Each record: u32 name length, name bytes (utf-8), u32 rank, u32 dims[rank],
then the float64 payload, row-major.  All content, including model
metadata, is stored as named float64 records so the container stays
uniform; metadata lives under "meta/", cell weights under "sru/", "gru/"
or "lstm/", and the readout under "head/".

Loading validates magic, version, record framing (truncation and trailing
bytes are errors) and, at the model level, that the record names are
exactly the ones the architecture calls for.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .cells import (CELL_KINDS, HEAD_KINDS, CellSpec, GruParams, LstmParams,
                    SruParams, TaskHead, named_tensors, replace_tensors)
from .tensor import Tensor

MAGIC = b"SRUF"
VERSION = 1


class CheckpointError(ValueError):
    pass


def write_records(path, records: Sequence[tuple[str, np.ndarray]]) -> None:
    """Write (name, array) records; order is preserved."""
    seen = set()
    out = bytearray()
    out += MAGIC
    out += struct.pack("<II", VERSION, len(records))
    for name, arr in records:
        if name in seen:
            raise CheckpointError(f"duplicate record name: {name}")
        seen.add(name)
        nb = name.encode("utf-8")
        a = np.asarray(arr, dtype="<f8")
        if a.ndim:   # ascontiguousarray would promote scalars to rank 1
            a = np.ascontiguousarray(a)
        out += struct.pack("<I", len(nb))
        out += nb
        out += struct.pack("<I", a.ndim)
        if a.ndim:
            out += struct.pack(f"<{a.ndim}I", *a.shape)
        out += a.tobytes()
    Path(path).write_bytes(bytes(out))


def read_records(path) -> dict[str, np.ndarray]:
    """Read records back, in file order. Malformed framing raises."""
    buf = Path(path).read_bytes()
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(buf):
            raise CheckpointError("truncated checkpoint")
        piece = buf[off:off + n]
        off += n
        return piece

    if take(4) != MAGIC:
        raise CheckpointError("bad magic (not an SRUF file)")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version}")
    records: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
        n = 1
        for d in dims:
            n *= d
        payload = take(8 * n)
        if name in records:
            raise CheckpointError(f"duplicate record name: {name}")
        records[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
    if off != len(buf):
        raise CheckpointError(f"{len(buf) - off} trailing bytes after records")
    return records


_CELL_CODE = {k: float(i) for i, k in enumerate(CELL_KINDS)}
_NONLIN_CODE = {"relu": 0.0, "tanh": 1.0}
_HEAD_CODE = {k: float(i) for i, k in enumerate(HEAD_KINDS)}


def _decode(table: dict[str, float], code: float, what: str) -> str:
    for k, v in table.items():
        if v == code:
            return k
    raise CheckpointError(f"unknown {what} code {code}")


def save_model(path, spec: CellSpec, params, head: TaskHead,
               input_dim: int) -> None:
    records: list[tuple[str, np.ndarray]] = [
        ("meta/cell", np.asarray(_CELL_CODE[spec.kind])),
        ("meta/nonlinearity", np.asarray(_NONLIN_CODE[spec.nonlinearity])),
        ("meta/alphas", np.asarray(spec.alphas)),
        ("meta/num_units", np.asarray(float(spec.num_units))),
        ("meta/num_stats", np.asarray(float(spec.num_stats))),
        ("meta/summary_dims", np.asarray(float(spec.summary_dims))),
        ("meta/input_dim", np.asarray(float(input_dim))),
        ("meta/head", np.asarray(_HEAD_CODE[head.kind])),
        ("meta/target_dim", np.asarray(float(head.target_dim))),
    ]
    records += [(name, t.array) for name, t in named_tensors(params)]
    records += [(name, t.array) for name, t in named_tensors(head)]
    write_records(path, records)


def load_model(path):
    """Returns (spec, params, head, input_dim).

    Record names must be exactly those of the stored architecture; an
    unknown name is an error rather than silently ignored state.
    """
    rec = read_records(path)

    def meta(name: str) -> np.ndarray:
        if name not in rec:
            raise CheckpointError(f"missing record {name}")
        return rec.pop(name)

    kind = _decode(_CELL_CODE, float(meta("meta/cell")), "cell")
    nonlin = _decode(_NONLIN_CODE, float(meta("meta/nonlinearity")), "nonlinearity")
    alphas = tuple(float(a) for a in meta("meta/alphas"))
    num_units = int(meta("meta/num_units"))
    num_stats = int(meta("meta/num_stats"))
    summary_dims = int(meta("meta/summary_dims"))
    input_dim = int(meta("meta/input_dim"))
    head_kind = _decode(_HEAD_CODE, float(meta("meta/head")), "head")
    target_dim = int(meta("meta/target_dim"))

    spec = CellSpec(kind=kind, num_units=num_units, num_stats=num_stats,
                    summary_dims=summary_dims, alphas=alphas,
                    nonlinearity=nonlin)

    def grab(name: str, shape: tuple[int, ...]) -> Tensor:
        if name not in rec:
            raise CheckpointError(f"missing record {name}")
        arr = rec.pop(name)
        if arr.shape != shape:
            raise CheckpointError(
                f"record {name} has shape {arr.shape}, expected {shape}")
        return Tensor(arr)

    m, s, r, u = len(alphas), num_stats, summary_dims, num_units
    if kind == "sru":
        params = SruParams(
            alphas=alphas,
            w_r=grab("sru/W_r", (r, m * s)) if r else None,
            b_r=grab("sru/b_r", (r,)) if r else None,
            w_phi=grab("sru/W_phi", (s, r)) if r else None,
            w_x=grab("sru/W_x", (s, input_dim)),
            b_phi=grab("sru/b_phi", (s,)),
            w_o=grab("sru/W_o", (u, m * s)),
            b_o=grab("sru/b_o", (u,)),
        )
    elif kind == "gru":
        params = GruParams(
            w_gates=grab("gru/W_gates", (2 * u, input_dim + u)),
            b_gates=grab("gru/b_gates", (2 * u,)),
            w_cand=grab("gru/W_cand", (u, input_dim + u)),
            b_cand=grab("gru/b_cand", (u,)),
        )
    else:
        params = LstmParams(
            w=grab("lstm/W", (4 * u, input_dim + u)),
            b=grab("lstm/b", (4 * u,)),
        )
    head = TaskHead(kind=head_kind,
                    w_p=grab("head/W_p", (target_dim, u)),
                    b_p=grab("head/b_p", (target_dim,)))
    if rec:
        raise CheckpointError(f"unknown record names: {sorted(rec)}")
    return spec, params, head, input_dim


def describe(path) -> list[dict]:
    """Per-record summary used by the inspect command."""
    rec = read_records(path)
    out = []
    for name, arr in rec.items():
        out.append({
            "name": name,
            "shape": tuple(arr.shape),
            "l2": float(np.sqrt(np.vdot(arr, arr).real)),
            "min": float(arr.min()) if arr.size else float("nan"),
            "max": float(arr.max()) if arr.size else float("nan"),
        })
    return out
