"""Sequence datasets and their on-disk formats.

Two containers:

IDX (images/labels): big-endian, magic 0x00000803 for images (dims n, rows,
cols, u8 pixels) and 0x00000801 for labels (dim n, u8 labels).  Files may
be gzip-compressed; a ".gz" suffix selects that transparently.

SEQD (sequences): little-endian, fixed-length sequences.

    magic "SEQD" | u32 version | u32 n | u32 T | u32 d | u8 kind | u8 flags
    | u16 reserved | inputs n*T*d f64 | labels n f64 (end_classification only)

kind codes: 0 next_step_regression, 1 end_classification,
2 binary_next_step.  flags bit 0 marks a strictly binary payload.

Truncation, magic mismatch, bad codes and trailing bytes all raise
DataError; a loader never guesses.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

KINDS = ("next_step_regression", "end_classification", "binary_next_step")

SEQD_MAGIC = b"SEQD"
SEQD_VERSION = 1
FLAG_BINARY = 1

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataError(ValueError):
    pass


@dataclass(eq=False)
class SequenceDataset:
    """A list of (T, d) float64 sequences with a task kind.

    T may vary per sequence in principle; d must not.  labels holds the
    integer class per sequence for end_classification and is None
    otherwise.  For next-step kinds the targets are the inputs shifted by
    one step, so nothing extra is stored.
    """

    sequences: list[np.ndarray]
    kind: str
    labels: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"unknown dataset kind: {self.kind}")
        if not self.sequences:
            raise DataError("dataset must contain at least one sequence")
        seqs = []
        d = None
        for s in self.sequences:
            a = np.asarray(s, dtype=np.float64)
            if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
                raise DataError(f"sequences must be (T, d), got {a.shape}")
            if d is None:
                d = a.shape[1]
            elif a.shape[1] != d:
                raise DataError("all sequences must share the input dimension")
            if not np.all(np.isfinite(a)):
                raise DataError("non-finite values in sequence data")
            seqs.append(a)
        self.sequences = seqs
        if self.kind == "end_classification":
            if self.labels is None:
                raise DataError("end_classification requires labels")
            lab = np.asarray(self.labels)
            if lab.shape != (len(seqs),):
                raise DataError("one label per sequence required")
            if not np.all(lab == np.floor(lab)) or lab.min() < 0:
                raise DataError("labels must be nonnegative integers")
            self.labels = lab.astype(np.int64)
        elif self.labels is not None:
            raise DataError(f"{self.kind} takes no labels")
        if self.kind == "binary_next_step":
            for a in seqs:
                if not np.all((a == 0.0) | (a == 1.0)):
                    raise DataError("binary_next_step data must be 0/1 valued")

    def __len__(self) -> int:
        return len(self.sequences)

    @property
    def dim(self) -> int:
        return self.sequences[0].shape[1]

    def stacked(self) -> np.ndarray:
        """(n, T, d) array; raises if sequence lengths differ."""
        T = self.sequences[0].shape[0]
        for s in self.sequences:
            if s.shape[0] != T:
                raise DataError("sequences have differing lengths; cannot stack")
        return np.stack(self.sequences)


_KIND_CODE = {k: i for i, k in enumerate(KINDS)}


def write_seqd(path, ds: SequenceDataset) -> None:
    X = ds.stacked()
    n, T, d = X.shape
    flags = 0
    if ds.kind == "binary_next_step":
        flags |= FLAG_BINARY
    head = SEQD_MAGIC + struct.pack(
        "<IIIIBBH", SEQD_VERSION, n, T, d, _KIND_CODE[ds.kind], flags, 0)
    body = np.ascontiguousarray(X, dtype="<f8").tobytes()
    tail = b""
    if ds.labels is not None:
        tail = np.ascontiguousarray(ds.labels, dtype="<f8").tobytes()
    Path(path).write_bytes(head + body + tail)


def read_seqd(path) -> SequenceDataset:
    buf = Path(path).read_bytes()
    off = 0

    def take(nbytes: int) -> bytes:
        nonlocal off
        if off + nbytes > len(buf):
            raise DataError("truncated SEQD file")
        piece = buf[off:off + nbytes]
        off += nbytes
        return piece

    if take(4) != SEQD_MAGIC:
        raise DataError("bad magic (not a SEQD file)")
    version, n, T, d, kind_code, flags, _ = struct.unpack("<IIIIBBH", take(20))
    if version != SEQD_VERSION:
        raise DataError(f"unsupported SEQD version {version}")
    if kind_code >= len(KINDS):
        raise DataError(f"unknown dataset kind code {kind_code}")
    kind = KINDS[kind_code]
    X = np.frombuffer(take(8 * n * T * d), dtype="<f8").reshape(n, T, d).copy()
    labels = None
    if kind == "end_classification":
        labels = np.frombuffer(take(8 * n), dtype="<f8").copy()
    if off != len(buf):
        raise DataError(f"{len(buf) - off} trailing bytes in SEQD file")
    if (flags & FLAG_BINARY) and not np.all((X == 0.0) | (X == 1.0)):
        raise DataError("binary flag set but payload is not 0/1 valued")
    return SequenceDataset(sequences=list(X), kind=kind, labels=labels)


def load_binary_sequences(path) -> SequenceDataset:
    """Read a SEQD file that must hold strictly binary next-step data."""
    ds = read_seqd(path)
    if ds.kind != "binary_next_step":
        raise DataError(f"expected binary_next_step data, found {ds.kind}")
    for a in ds.sequences:
        if not np.all((a == 0.0) | (a == 1.0)):
            raise DataError("payload is not 0/1 valued")
    return ds


def _open_maybe_gz(path):
    p = Path(path)
    if p.suffix == ".gz":
        return gzip.open(p, "rb")
    return open(p, "rb")


def load_idx_images(path) -> np.ndarray:
    """(n, rows, cols) float64 images scaled to [0, 1]."""
    with _open_maybe_gz(path) as f:
        head = f.read(16)
        if len(head) != 16:
            raise DataError("truncated IDX image header")
        magic, n, rows, cols = struct.unpack(">IIII", head)
        if magic != IDX_IMAGES_MAGIC:
            raise DataError(f"bad IDX image magic 0x{magic:08x}")
        body = f.read(n * rows * cols + 1)
        if len(body) < n * rows * cols:
            raise DataError("truncated IDX image payload")
        if len(body) > n * rows * cols:
            raise DataError("trailing bytes in IDX image file")
    pixels = np.frombuffer(body, dtype=np.uint8).reshape(n, rows, cols)
    return pixels.astype(np.float64) / 255.0


def load_idx_labels(path) -> np.ndarray:
    """(n,) int64 labels."""
    with _open_maybe_gz(path) as f:
        head = f.read(8)
        if len(head) != 8:
            raise DataError("truncated IDX label header")
        magic, n = struct.unpack(">II", head)
        if magic != IDX_LABELS_MAGIC:
            raise DataError(f"bad IDX label magic 0x{magic:08x}")
        body = f.read(n + 1)
        if len(body) < n:
            raise DataError("truncated IDX label payload")
        if len(body) > n:
            raise DataError("trailing bytes in IDX label file")
    return np.frombuffer(body, dtype=np.uint8).astype(np.int64)


def write_idx_images(path, images: np.ndarray) -> None:
    """images: (n, rows, cols) uint8, or floats in [0, 1] scaled to u8."""
    a = np.asarray(images)
    if a.ndim != 3:
        raise DataError(f"images must be (n, rows, cols), got {a.shape}")
    if a.dtype != np.uint8:
        if a.min() < 0.0 or a.max() > 1.0:
            raise DataError("float images must lie in [0, 1]")
        a = np.round(a * 255.0).astype(np.uint8)
    n, rows, cols = a.shape
    p = Path(path)
    head = struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols)
    raw = head + a.tobytes()
    if p.suffix == ".gz":
        with gzip.open(p, "wb") as f:
            f.write(raw)
    else:
        p.write_bytes(raw)


def write_idx_labels(path, labels: np.ndarray) -> None:
    lab = np.asarray(labels)
    if lab.ndim != 1 or lab.min() < 0 or lab.max() > 255:
        raise DataError("labels must be a vector of bytes")
    p = Path(path)
    raw = struct.pack(">II", IDX_LABELS_MAGIC, lab.shape[0]) + \
        lab.astype(np.uint8).tobytes()
    if p.suffix == ".gz":
        with gzip.open(p, "wb") as f:
            f.write(raw)
    else:
        p.write_bytes(raw)


def pixels_to_sequence(images: np.ndarray, pool: int = 1) -> np.ndarray:
    """Mean-pool images by pool x pool, then flatten each to a sequence of
    scalars in row-major scan order.  (n, H, W) -> (n, (H//p)*(W//p), 1).
    """
    a = np.asarray(images, dtype=np.float64)
    if a.ndim != 3:
        raise DataError(f"images must be (n, H, W), got {a.shape}")
    n, h, w = a.shape
    if pool < 1:
        raise DataError("pool must be >= 1")
    if h % pool or w % pool:
        raise DataError(f"pool {pool} does not divide image size {h}x{w}")
    pooled = a.reshape(n, h // pool, pool, w // pool, pool).mean(axis=(2, 4))
    return pooled.reshape(n, -1, 1)


def images_to_dataset(images: np.ndarray, labels: np.ndarray,
                      pool: int = 1) -> SequenceDataset:
    """Pixel-scan classification dataset from an image/label pair."""
    seqs = pixels_to_sequence(images, pool)
    return SequenceDataset(sequences=list(seqs), kind="end_classification",
                           labels=np.asarray(labels))


def export_sequences_csv(path, ds: SequenceDataset, limit: int | None = None) -> None:
    """Inspection CSV: one row per (sequence, step), full float precision."""
    d = ds.dim
    cols = ["sequence", "t"] + [f"x{i}" for i in range(d)]
    lines = [",".join(cols)]
    n = len(ds) if limit is None else min(limit, len(ds))
    for i in range(n):
        seq = ds.sequences[i]
        for t in range(seq.shape[0]):
            vals = [str(i), str(t)] + [repr(float(v)) for v in seq[t]]
            lines.append(",".join(vals))
    Path(path).write_text("\n".join(lines) + "\n")
