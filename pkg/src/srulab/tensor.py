"""Dense float64 tensors and a reverse-mode autodiff tape.

The tape is define-by-run: every forward pass appends nodes to a fresh
Tape, so node ids are topologically ordered by construction (the inputs of
node k always have ids < k).  backward() is a single reverse sweep that
accumulates adjoints by summation across fan-out.

Everything is 64-bit.  Any operation output containing NaN or Inf raises
NonFiniteError; a non-finite value is an error condition, never a silent
state.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

Array = np.ndarray

# Maps the output adjoint to one contribution per parent (None for parents
# that are constants or need no gradient).
GradFn = Callable[[Array], Sequence["Array | None"]]


class NonFiniteError(ValueError):
    """An operation produced NaN or Inf."""


def as_array(values) -> Array:
    arr = np.asarray(values, dtype=np.float64)
    if not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    return arr


def check_finite(arr: Array, what: str = "tensor") -> Array:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {what}")
    return arr


class Tensor:
    """A float64 array value, optionally recorded on a Tape.

    shape is the dimension tuple and `data` the flat row-major view of the
    storage, so prod(shape) == len(data) always holds.  Tensors produced by
    operations under a tape carry (tape, nid) so their gradient can be read
    off after backward(); plain value tensors have tape None and nid -1.
    """

    __slots__ = ("array", "tape", "nid")

    def __init__(self, values, tape: "Tape | None" = None, nid: int = -1):
        self.array = check_finite(as_array(values))
        self.tape = tape
        self.nid = nid

    @classmethod
    def _wrap(cls, arr: Array, tape: "Tape | None" = None, nid: int = -1) -> "Tensor":
        # Internal fast path: `arr` was already validated by the caller.
        t = cls.__new__(cls)
        t.array = arr
        t.tape = tape
        t.nid = nid
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.array.shape

    @property
    def ndim(self) -> int:
        return self.array.ndim

    @property
    def size(self) -> int:
        return self.array.size

    @property
    def data(self) -> Array:
        """Flat row-major view of the storage."""
        return self.array.reshape(-1)

    def item(self) -> float:
        if self.array.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.array.reshape(()))

    def copy(self) -> "Tensor":
        return Tensor._wrap(self.array.copy())

    def __repr__(self) -> str:
        tag = f", nid={self.nid}" if self.tape is not None else ""
        return f"Tensor(shape={self.shape}{tag})"


class Tape:
    """Append-only record of one forward pass.

    Stored per node: operation id, parent node ids, the forward value, and
    the closure that maps the node's adjoint to per-parent contributions.
    A tape is built fresh for every forward pass and discarded afterwards.
    """

    __slots__ = ("ops", "values", "parents", "grad_fns")

    def __init__(self):
        self.ops: list[str] = []
        self.values: list[Array] = []
        self.parents: list[tuple[int, ...]] = []
        self.grad_fns: list[GradFn | None] = []

    def __len__(self) -> int:
        return len(self.values)

    def record(self, op: str, value: Array, parents: tuple[int, ...],
               grad_fn: GradFn | None) -> Tensor:
        nid = len(self.values)
        for p in parents:
            if p >= nid:
                raise ValueError("parent ids must precede the new node")
        self.ops.append(op)
        self.values.append(value)
        self.parents.append(parents)
        self.grad_fns.append(grad_fn)
        return Tensor._wrap(value, self, nid)

    def leaf(self, values) -> Tensor:
        """Register an input as a watched leaf (a gradient target)."""
        arr = values.array if isinstance(values, Tensor) else as_array(values)
        check_finite(arr, "leaf")
        return self.record("leaf", arr, (), None)


class Gradients:
    """Adjoints produced by one backward() call.

    Index with a node id or with a Tensor from the same tape.  Nodes that
    the loss does not reach have a zero adjoint.  When backward() was given
    an explicit `wanted` set, only those nodes are retained and anything
    else raises KeyError.
    """

    __slots__ = ("_tape", "_adj", "_kept")

    def __init__(self, tape: Tape, adj: list, kept: "set[int] | None"):
        self._tape = tape
        self._adj = adj
        self._kept = kept

    def __getitem__(self, key) -> Tensor:
        if isinstance(key, Tensor):
            if key.tape is not self._tape:
                raise KeyError("tensor is not on this tape")
            nid = key.nid
        else:
            nid = int(key)
        if nid < 0 or nid >= len(self._adj):
            raise KeyError(f"no node {nid} on this tape")
        if self._kept is not None and nid not in self._kept:
            raise KeyError(f"adjoint of node {nid} was not retained")
        g = self._adj[nid]
        if g is None:
            g = np.zeros_like(self._tape.values[nid])
            self._adj[nid] = g
        return Tensor._wrap(np.asarray(g))


def backward(tape: Tape, loss: Tensor,
             wanted: "Iterable[int] | None" = None) -> Gradients:
    """Reverse sweep from a scalar loss node; returns the adjoint map.

    wanted: node ids whose adjoints must survive the sweep.  When given,
    all other adjoints are freed as soon as they have been propagated, so
    memory for long unrolls stays proportional to the live frontier rather
    than the whole tape.  When None, every node's adjoint is kept.
    """
    if loss.tape is not tape or loss.nid < 0:
        raise ValueError("loss is not a node on this tape")
    if loss.array.size != 1:
        raise ValueError("loss must be a scalar")
    n = len(tape)
    adj: list[Array | None] = [None] * n
    # owned[i] == 1 means adj[i] is a private buffer safe for in-place +=.
    owned = bytearray(n)
    adj[loss.nid] = np.ones_like(loss.array)
    owned[loss.nid] = 1
    keep = None if wanted is None else set(wanted)
    parents, grad_fns = tape.parents, tape.grad_fns
    for nid in range(loss.nid, -1, -1):
        g = adj[nid]
        if g is None:
            continue
        fn = grad_fns[nid]
        if fn is not None:
            for pid, c in zip(parents[nid], fn(np.asarray(g))):
                if pid < 0 or c is None:
                    continue
                prev = adj[pid]
                if prev is None:
                    # May alias g or a view of it; mark as shared.
                    adj[pid] = c
                    owned[pid] = 0
                elif owned[pid]:
                    prev += c
                else:
                    adj[pid] = prev + c
                    owned[pid] = 1
        if keep is not None and nid not in keep:
            adj[nid] = None
    return Gradients(tape, adj, keep)


def finite_diff_check(f, x, eps: float = 1e-5, exclude=None) -> float:
    """Worst relative error between tape gradients of f and central differences.

    f maps a Tensor to a scalar Tensor.  It is called once with a leaf on a
    fresh tape (analytic gradient) and then twice per coordinate with plain
    value tensors (finite differences), so it must not capture a tape of
    its own.  `exclude` is an optional boolean mask of coordinates to skip,
    for points where the function is not differentiable (a ReLU input
    sitting exactly on the kink has only one-sided derivatives, so its
    coordinate is excluded by the caller rather than checked).

    Relative error per coordinate: |a - d| / max(|a|, |d|, 1e-6).
    """
    x0 = as_array(x)
    tape = Tape()
    leaf = tape.leaf(x0)
    y = f(leaf)
    if not isinstance(y, Tensor) or y.array.size != 1:
        raise ValueError("f must return a scalar Tensor")
    analytic = backward(tape, y, wanted=(leaf.nid,))[leaf].array.reshape(-1)
    skip = np.zeros(x0.size, dtype=bool)
    if exclude is not None:
        skip = np.asarray(exclude, dtype=bool).reshape(-1)
        if skip.size != x0.size:
            raise ValueError("exclude mask does not match x")
    worst = 0.0
    flat = x0.reshape(-1)
    for i in range(x0.size):
        if skip[i]:
            continue
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += eps
        xm[i] -= eps
        fp = f(Tensor(xp.reshape(x0.shape))).item()
        fm = f(Tensor(xm.reshape(x0.shape))).item()
        d = (fp - fm) / (2.0 * eps)
        a = float(analytic[i])
        err = abs(a - d) / max(abs(a), abs(d), 1e-6)
        worst = max(worst, err)
    return worst
