"""Differentiable operations over Tensors.

Every op computes its value eagerly, validates finiteness, and registers a
node on the operands' tape.  Operands may be Tensors, arrays, or scalars;
non-Tensor operands (and Tensors with no tape) are treated as constants
that receive no gradient.  Mixing operands from two different tapes is an
error.  When no operand carries a tape the op runs in plain evaluation
mode and returns an untaped Tensor, which is what inference paths use.

Shape rules are deliberately narrow: matmul supports 2D@2D, 1D@2D and
2D@1D (plus a transpose_b flag for weight matrices stored out-features
first); add/sub allow equal shapes or matrix + row-vector bias broadcast;
everything else requires exact shape agreement.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.special import expit

from .tensor import Array, Tape, Tensor, as_array, check_finite

__all__ = [
    "matmul", "relu", "tanh", "sigmoid", "softmax", "add", "sub", "mul",
    "scale", "concat", "slice_last", "sum", "mean", "sq_norm", "dropout",
    "ema_update",
]


def _val(x) -> Array:
    return x.array if isinstance(x, Tensor) else as_array(x)


def _meta(*xs) -> tuple["Tape | None", list[int]]:
    tape = None
    for x in xs:
        if isinstance(x, Tensor) and x.tape is not None:
            if tape is None:
                tape = x.tape
            elif tape is not x.tape:
                raise ValueError("operands come from different tapes")
    nids = [
        x.nid if (isinstance(x, Tensor) and x.tape is not None) else -1
        for x in xs
    ]
    return tape, nids


def _emit(op: str, tape: "Tape | None", value: Array,
          nids: Sequence[int], gfn) -> Tensor:
    check_finite(value, op)
    if tape is None:
        return Tensor._wrap(value)
    return tape.record(op, value, tuple(nids), gfn)


def matmul(a, b, transpose_b: bool = False) -> Tensor:
    """Matrix product a @ b, or a @ b.T with transpose_b.

    Weight matrices in this package are stored out-features first, so the
    batched form is matmul(x, W, transpose_b=True).
    """
    A, B = _val(a), _val(b)
    tape, (pa, pb) = _meta(a, b)
    if transpose_b:
        if B.ndim != 2:
            raise ValueError("transpose_b requires a 2-D right operand")
        if A.ndim == 2:
            out = A @ B.T

            def gfn(g):
                return (g @ B if pa >= 0 else None,
                        g.T @ A if pb >= 0 else None)
        elif A.ndim == 1:
            out = B @ A

            def gfn(g):
                return (g @ B if pa >= 0 else None,
                        np.outer(g, A) if pb >= 0 else None)
        else:
            raise ValueError(f"unsupported matmul rank {A.ndim} for left operand")
    elif A.ndim == 2 and B.ndim == 2:
        out = A @ B

        def gfn(g):
            return (g @ B.T if pa >= 0 else None,
                    A.T @ g if pb >= 0 else None)
    elif A.ndim == 1 and B.ndim == 2:
        out = A @ B

        def gfn(g):
            return (B @ g if pa >= 0 else None,
                    np.outer(A, g) if pb >= 0 else None)
    elif A.ndim == 2 and B.ndim == 1:
        out = A @ B

        def gfn(g):
            return (np.outer(g, B) if pa >= 0 else None,
                    A.T @ g if pb >= 0 else None)
    else:
        raise ValueError(f"unsupported matmul ranks {A.ndim}x{B.ndim}")
    return _emit("matmul", tape, out, (pa, pb), gfn)


def relu(a) -> Tensor:
    """max(x, 0); the subgradient at exactly 0 is 0."""
    A = _val(a)
    tape, nids = _meta(a)
    out = np.maximum(A, 0.0)

    def gfn(g):
        return ((A > 0.0) * g,)

    return _emit("relu", tape, out, nids, gfn)


def tanh(a) -> Tensor:
    A = _val(a)
    tape, nids = _meta(a)
    out = np.tanh(A)

    def gfn(g):
        return ((1.0 - out * out) * g,)

    return _emit("tanh", tape, out, nids, gfn)


def sigmoid(a) -> Tensor:
    A = _val(a)
    tape, nids = _meta(a)
    out = expit(A)

    def gfn(g):
        return (out * (1.0 - out) * g,)

    return _emit("sigmoid", tape, out, nids, gfn)


def softmax(a) -> Tensor:
    """Softmax over the last axis, stabilized by max subtraction."""
    A = _val(a)
    tape, nids = _meta(a)
    shifted = A - A.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def gfn(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner),)

    return _emit("softmax", tape, out, nids, gfn)


def _binary_shapes(A: Array, B: Array, op: str):
    """Classify an add/sub shape pair: 'same', 'bias_right', 'bias_left'."""
    if A.shape == B.shape:
        return "same"
    if A.ndim == 2 and B.ndim == 1 and A.shape[1] == B.shape[0]:
        return "bias_right"
    if A.ndim == 1 and B.ndim == 2 and B.shape[1] == A.shape[0]:
        return "bias_left"
    raise ValueError(f"{op}: incompatible shapes {A.shape} and {B.shape}")


def add(a, b) -> Tensor:
    """Elementwise sum; also matrix + row-vector bias broadcast."""
    A, B = _val(a), _val(b)
    tape, (pa, pb) = _meta(a, b)
    kind = _binary_shapes(A, B, "add")
    out = A + B
    if kind == "same":
        def gfn(g):
            return (g if pa >= 0 else None, g if pb >= 0 else None)
    elif kind == "bias_right":
        def gfn(g):
            return (g if pa >= 0 else None,
                    g.sum(axis=0) if pb >= 0 else None)
    else:
        def gfn(g):
            return (g.sum(axis=0) if pa >= 0 else None,
                    g if pb >= 0 else None)
    return _emit("add", tape, out, (pa, pb), gfn)


def sub(a, b) -> Tensor:
    """Elementwise difference; same broadcast rules as add."""
    A, B = _val(a), _val(b)
    tape, (pa, pb) = _meta(a, b)
    kind = _binary_shapes(A, B, "sub")
    out = A - B
    if kind == "same":
        def gfn(g):
            return (g if pa >= 0 else None, -g if pb >= 0 else None)
    elif kind == "bias_right":
        def gfn(g):
            return (g if pa >= 0 else None,
                    -g.sum(axis=0) if pb >= 0 else None)
    else:
        def gfn(g):
            return (g.sum(axis=0) if pa >= 0 else None,
                    -g if pb >= 0 else None)
    return _emit("sub", tape, out, (pa, pb), gfn)


def mul(a, b) -> Tensor:
    """Elementwise product; shapes must match exactly."""
    A, B = _val(a), _val(b)
    tape, (pa, pb) = _meta(a, b)
    if A.shape != B.shape:
        raise ValueError(f"mul: incompatible shapes {A.shape} and {B.shape}")
    out = A * B

    def gfn(g):
        return (g * B if pa >= 0 else None, g * A if pb >= 0 else None)

    return _emit("mul", tape, out, (pa, pb), gfn)


def scale(a, c: float) -> Tensor:
    """Multiply by a python scalar constant."""
    A = _val(a)
    c = float(c)
    if not np.isfinite(c):
        raise ValueError("scale factor must be finite")
    tape, nids = _meta(a)
    out = A * c

    def gfn(g):
        return (g * c,)

    return _emit("scale", tape, out, nids, gfn)


def concat(parts: Sequence) -> Tensor:
    """Concatenate along the last axis. concat([1,2],[3]) style for vectors."""
    if len(parts) == 0:
        raise ValueError("concat of zero parts")
    vals = [_val(p) for p in parts]
    tape, nids = _meta(*parts)
    out = np.concatenate(vals, axis=-1)
    bounds = np.cumsum([0] + [v.shape[-1] for v in vals])

    def gfn(g):
        return tuple(
            g[..., bounds[i]:bounds[i + 1]] if nids[i] >= 0 else None
            for i in range(len(vals))
        )

    return _emit("concat", tape, out, nids, gfn)


def slice_last(a, lo: int, hi: int) -> Tensor:
    """Take columns [lo, hi) of the last axis."""
    A = _val(a)
    if not 0 <= lo < hi <= A.shape[-1]:
        raise ValueError(f"slice [{lo}:{hi}] out of range for {A.shape}")
    tape, nids = _meta(a)
    out = A[..., lo:hi]

    def gfn(g):
        z = np.zeros_like(A)
        z[..., lo:hi] = g
        return (z,)

    return _emit("slice", tape, out, nids, gfn)


def sum(a) -> Tensor:  # noqa: A001 - op name fixed by the module surface
    """Sum of all elements (scalar)."""
    A = _val(a)
    tape, nids = _meta(a)
    out = np.asarray(A.sum())

    def gfn(g):
        return (np.broadcast_to(g, A.shape),)

    return _emit("sum", tape, out, nids, gfn)


def mean(a) -> Tensor:
    """Mean of all elements (scalar)."""
    A = _val(a)
    tape, nids = _meta(a)
    out = np.asarray(A.mean())
    inv = 1.0 / A.size

    def gfn(g):
        return (np.broadcast_to(g * inv, A.shape),)

    return _emit("mean", tape, out, nids, gfn)


def sq_norm(a) -> Tensor:
    """Sum of squared elements (scalar)."""
    A = _val(a)
    tape, nids = _meta(a)
    out = np.asarray(np.vdot(A, A).real)

    def gfn(g):
        return ((2.0 * g) * A,)

    return _emit("sq_norm", tape, out, nids, gfn)


def dropout(a, keep: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero with probability 1-keep, scale survivors by 1/keep.

    keep == 1 produces an exact identity (every mask entry is 1.0), though
    the rng stream is still consumed, so train/eval agreement at keep=1 is
    bitwise.
    """
    if not 0.0 < keep <= 1.0:
        raise ValueError(f"dropout keep rate must be in (0, 1]: {keep}")
    A = _val(a)
    tape, nids = _meta(a)
    mask = (rng.random(A.shape) < keep) / keep
    out = A * mask

    def gfn(g):
        return (g * mask,)

    return _emit("dropout", tape, out, nids, gfn)


def ema_update(mu, phi, alpha_rep) -> Tensor:
    """One exponential moving average step over m stacked scale blocks.

    mu has last dimension m*s (m scale blocks of the s statistics), phi has
    last dimension s, and alpha_rep is the constant (m*s,) vector holding
    each block's alpha repeated s times.  Computes

        mu' = alpha_rep * mu + (1 - alpha_rep) * tile(phi, m)

    The adjoint of mu is exactly alpha_rep * g (the same elementwise
    product the forward pass uses), so the per-scale gradient decay factor
    is exact in floating point, not approximate.
    """
    MU, PHI = _val(mu), _val(phi)
    w = as_array(alpha_rep)
    if w.ndim != 1 or MU.shape[-1] != w.shape[0]:
        raise ValueError("alpha_rep must be a vector matching mu's last axis")
    s = PHI.shape[-1]
    if s == 0 or w.shape[0] % s != 0:
        raise ValueError(f"mu width {w.shape[0]} is not a multiple of phi width {s}")
    m = w.shape[0] // s
    tape, (pm, pp) = _meta(mu, phi)
    reps = (m,) if MU.ndim == 1 else (1, m)
    out = w * MU + (1.0 - w) * np.tile(PHI, reps)
    wc = 1.0 - w

    def gfn(g):
        gm = w * g if pm >= 0 else None
        if pp >= 0:
            gp = (wc * g).reshape(g.shape[:-1] + (m, s)).sum(axis=-2)
        else:
            gp = None
        return (gm, gp)

    return _emit("ema", tape, out, (pm, pp), gfn)
