"""Recurrent cells: the statistical recurrent unit and GRU/LSTM baselines.

The SRU keeps no gated hidden state.  Each step computes a summary r of
the stored averages, produces statistics phi from r and the input, then
updates one exponential moving average of phi per decay scale alpha:

    r    = f(W_r mu + b_r)
    phi  = f(W_phi r + W_x x + b_phi)
    mu'  = alpha * mu + (1 - alpha) * phi      (per scale)
    o    = f(W_o mu' + b_o)

f is ReLU by default (tanh optional).  mu is stored as one flat vector of
m scale blocks in ascending-alpha order; constructors canonicalize any
other order, permuting the block-structured weight columns to match, so
storage order never changes the function computed.

All step functions accept a single vector x (shape (d,)) or a batch of
rows (shape (B, d)); states follow the same convention.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import ops
from .rng import INIT, stream
from .tensor import Tape, Tensor, as_array

DEFAULT_ALPHAS = (0.0, 0.25, 0.5, 0.9, 0.99)

CELL_KINDS = ("sru", "gru", "lstm")
NONLINEARITIES = {"relu": ops.relu, "tanh": ops.tanh}
HEAD_KINDS = ("next_step_regression", "end_classification", "binary_next_step")


@dataclass(eq=False)
class CellSpec:
    """Architecture of one cell.

    num_stats (s), summary_dims (r) and alphas apply to the SRU only;
    summary_dims = 0 drops the W_r summary path entirely rather than
    feeding a zero vector, so no dead parameters exist.
    """

    kind: str
    num_units: int
    num_stats: int = 0
    summary_dims: int = 0
    alphas: tuple[float, ...] = DEFAULT_ALPHAS
    nonlinearity: str = "relu"

    def __post_init__(self):
        if self.kind not in CELL_KINDS:
            raise ValueError(f"unknown cell kind: {self.kind}")
        if self.nonlinearity not in NONLINEARITIES:
            raise ValueError(f"unknown nonlinearity: {self.nonlinearity}")
        if self.num_units < 1:
            raise ValueError("num_units must be >= 1")
        self.alphas = _check_alphas(self.alphas)
        if self.kind == "sru":
            if self.num_stats < 1:
                raise ValueError("num_stats must be >= 1 for the sru")
            if self.summary_dims < 0:
                raise ValueError("summary_dims must be >= 0")

    @property
    def f(self) -> Callable:
        return NONLINEARITIES[self.nonlinearity]


def _check_alphas(alphas) -> tuple[float, ...]:
    a = tuple(float(x) for x in alphas)
    if len(a) == 0:
        raise ValueError("alphas must be nonempty")
    for x in a:
        if not (0.0 <= x < 1.0):
            raise ValueError(f"alpha out of [0, 1): {x}")
    if len(set(a)) != len(a):
        raise ValueError("alphas must be distinct")
    return a


def _glorot(rng: np.random.Generator, rows: int, cols: int) -> Tensor:
    limit = np.sqrt(6.0 / (rows + cols))
    return Tensor(rng.uniform(-limit, limit, size=(rows, cols)))


def _zeros(n: int) -> Tensor:
    return Tensor(np.zeros(n))


def _permute_blocks(w: Tensor, order: Sequence[int], s: int) -> Tensor:
    """Reorder the m column blocks (each s wide) of a (rows, m*s) matrix."""
    a = w.array
    m = a.shape[1] // s
    return Tensor(a.reshape(a.shape[0], m, s)[:, list(order), :].reshape(a.shape))


@dataclass(eq=False)
class SruParams:
    """SRU weights. alphas are kept ascending; unsorted construction is
    canonicalized by permuting alphas together with the matching column
    blocks of W_r and W_o, which leaves the computed function unchanged."""

    alphas: tuple[float, ...]
    w_r: Tensor | None    # (summary_dims, m*s)
    b_r: Tensor | None    # (summary_dims,)
    w_phi: Tensor | None  # (num_stats, summary_dims)
    w_x: Tensor           # (num_stats, input_dim)
    b_phi: Tensor         # (num_stats,)
    w_o: Tensor           # (num_units, m*s)
    b_o: Tensor           # (num_units,)

    def __post_init__(self):
        self.alphas = _check_alphas(self.alphas)
        s = self.w_x.shape[0]
        m = len(self.alphas)
        if self.w_o.shape[1] != m * s:
            raise ValueError(
                f"W_o width {self.w_o.shape[1]} != num_scales*num_stats {m * s}")
        r_parts = (self.w_r, self.b_r, self.w_phi)
        if any(p is None for p in r_parts) != all(p is None for p in r_parts):
            raise ValueError("W_r, b_r, W_phi must be all present or all absent")
        if self.w_r is not None and self.w_r.shape[1] != m * s:
            raise ValueError("W_r width does not match num_scales*num_stats")
        order = sorted(range(m), key=lambda i: self.alphas[i])
        if order != list(range(m)):
            self.alphas = tuple(self.alphas[i] for i in order)
            if self.w_r is not None:
                self.w_r = _permute_blocks(self.w_r, order, s)
            self.w_o = _permute_blocks(self.w_o, order, s)
        self._alpha_rep = np.repeat(np.asarray(self.alphas), s)

    @property
    def num_stats(self) -> int:
        return self.w_x.shape[0]

    @property
    def summary_dims(self) -> int:
        return 0 if self.w_r is None else self.w_r.shape[0]

    @property
    def num_units(self) -> int:
        return self.w_o.shape[0]

    @property
    def input_dim(self) -> int:
        return self.w_x.shape[1]

    @property
    def alpha_rep(self) -> np.ndarray:
        return self._alpha_rep


@dataclass(eq=False)
class SruState:
    """The m stacked EMA blocks, flat: mu[..., i*s:(i+1)*s] is scale i."""

    mu: Tensor
    num_scales: int

    @property
    def mus(self) -> list[Tensor]:
        m = self.num_scales
        s = self.mu.shape[-1] // m
        a = self.mu.array
        return [Tensor._wrap(a[..., i * s:(i + 1) * s]) for i in range(m)]

    @classmethod
    def from_mus(cls, alphas: Sequence[float], mus: Sequence) -> "SruState":
        """Build a state from per-scale vectors, restoring ascending-alpha
        order (the same canonicalization SruParams applies)."""
        a = [float(x) for x in alphas]
        if len(a) != len(mus):
            raise ValueError("one mu block per alpha required")
        order = sorted(range(len(a)), key=lambda i: a[i])
        arrs = [as_array(mus[i] if not isinstance(mus[i], Tensor) else mus[i].array)
                for i in order]
        return cls(Tensor(np.concatenate(arrs, axis=-1)), len(a))


@dataclass(eq=False)
class GruParams:
    """Gated recurrent unit. Gate halves of W_gates are [update, reset];
    h' = u*h + (1-u)*c with candidate c = tanh(W_c [x, r*h] + b_c)."""

    w_gates: Tensor  # (2u, d+u)
    b_gates: Tensor  # (2u,)
    w_cand: Tensor   # (u, d+u)
    b_cand: Tensor   # (u,)

    @property
    def num_units(self) -> int:
        return self.w_cand.shape[0]

    @property
    def input_dim(self) -> int:
        return self.w_cand.shape[1] - self.num_units


@dataclass(eq=False)
class GruState:
    h: Tensor


@dataclass(eq=False)
class LstmParams:
    """LSTM with one packed kernel; gate sections of W are [i, j, f, o].
    The forget-gate bias section is initialized to 1, so zero weights give
    the sigmoid(1) cell decay per step."""

    w: Tensor  # (4u, d+u)
    b: Tensor  # (4u,)

    @property
    def num_units(self) -> int:
        return self.w.shape[0] // 4

    @property
    def input_dim(self) -> int:
        return self.w.shape[1] - self.num_units


@dataclass(eq=False)
class LstmState:
    h: Tensor
    c: Tensor


@dataclass(eq=False)
class TaskHead:
    """Linear readout W_p o + b_p. The loss applies softmax/sigmoid."""

    kind: str
    w_p: Tensor  # (target_dim, num_units)
    b_p: Tensor  # (target_dim,)

    def __post_init__(self):
        if self.kind not in HEAD_KINDS:
            raise ValueError(f"unknown head kind: {self.kind}")

    @property
    def target_dim(self) -> int:
        return self.w_p.shape[0]


def init_cell(spec: CellSpec, input_dim: int, rng: np.random.Generator):
    """Draw initial parameters: matrices Glorot-uniform in field order,
    biases zero (LSTM forget section 1)."""
    if input_dim < 1:
        raise ValueError("input_dim must be >= 1")
    u = spec.num_units
    if spec.kind == "sru":
        m, s, r = len(spec.alphas), spec.num_stats, spec.summary_dims
        if r > 0:
            w_r, b_r = _glorot(rng, r, m * s), _zeros(r)
            w_phi = _glorot(rng, s, r)
        else:
            w_r = b_r = w_phi = None
        return SruParams(
            alphas=spec.alphas,
            w_r=w_r, b_r=b_r, w_phi=w_phi,
            w_x=_glorot(rng, s, input_dim), b_phi=_zeros(s),
            w_o=_glorot(rng, u, m * s), b_o=_zeros(u),
        )
    if spec.kind == "gru":
        return GruParams(
            w_gates=_glorot(rng, 2 * u, input_dim + u), b_gates=_zeros(2 * u),
            w_cand=_glorot(rng, u, input_dim + u), b_cand=_zeros(u),
        )
    b = np.zeros(4 * u)
    b[2 * u:3 * u] = 1.0
    return LstmParams(w=_glorot(rng, 4 * u, input_dim + u), b=Tensor(b))


def init_head(kind: str, target_dim: int, num_units: int,
              rng: np.random.Generator) -> TaskHead:
    return TaskHead(kind=kind, w_p=_glorot(rng, target_dim, num_units),
                    b_p=_zeros(target_dim))


def init_model(spec: CellSpec, input_dim: int, head_kind: str, target_dim: int,
               seed: int):
    """Cell and head from the INIT stream of a master seed."""
    rng = stream(seed, INIT)
    params = init_cell(spec, input_dim, rng)
    head = init_head(head_kind, target_dim, spec.num_units, rng)
    return params, head


def state_zero(params, batch: int | None = None):
    """Zero initial state shaped for a single vector or a batch of rows."""
    def z(width: int) -> Tensor:
        shape = (width,) if batch is None else (batch, width)
        return Tensor(np.zeros(shape))

    if isinstance(params, SruParams):
        m = len(params.alphas)
        return SruState(z(m * params.num_stats), m)
    if isinstance(params, GruParams):
        return GruState(z(params.num_units))
    if isinstance(params, LstmParams):
        u = params.num_units
        return LstmState(z(u), z(u))
    raise TypeError(f"not a cell parameter object: {type(params)!r}")


def sru_step(params: SruParams, state: SruState, x, f=ops.relu,
             need_output: bool = True):
    """One SRU step; returns (state', o) with o = None when need_output is
    False (the recurrence itself never consumes o, so callers that only
    need the final output skip the W_o product on earlier steps)."""
    mu = state.mu
    if params.w_r is not None:
        r = f(ops.add(ops.matmul(mu, params.w_r, transpose_b=True), params.b_r))
        pre = ops.add(
            ops.add(ops.matmul(r, params.w_phi, transpose_b=True),
                    ops.matmul(x, params.w_x, transpose_b=True)),
            params.b_phi)
    else:
        pre = ops.add(ops.matmul(x, params.w_x, transpose_b=True), params.b_phi)
    phi = f(pre)
    mu2 = ops.ema_update(mu, phi, params.alpha_rep)
    state2 = SruState(mu2, len(params.alphas))
    if not need_output:
        return state2, None
    o = f(ops.add(ops.matmul(mu2, params.w_o, transpose_b=True), params.b_o))
    return state2, o


def gru_step(params: GruParams, state: GruState, x, f=None,
             need_output: bool = True):
    """One GRU step. f is accepted for interface uniformity and ignored."""
    h = state.h
    u = params.num_units
    xh = ops.concat([_lift(x), h])
    gates = ops.sigmoid(
        ops.add(ops.matmul(xh, params.w_gates, transpose_b=True), params.b_gates))
    ug = ops.slice_last(gates, 0, u)
    rg = ops.slice_last(gates, u, 2 * u)
    cand_in = ops.concat([_lift(x), ops.mul(rg, h)])
    c = ops.tanh(
        ops.add(ops.matmul(cand_in, params.w_cand, transpose_b=True), params.b_cand))
    # h' = u*h + (1-u)*c, written as u*h + c - u*c to avoid a ones constant
    uc = ops.mul(ug, c)
    h2 = ops.add(ops.mul(ug, h), ops.sub(c, uc))
    return GruState(h2), h2


def lstm_step(params: LstmParams, state: LstmState, x, f=None,
              need_output: bool = True):
    """One LSTM step. f is accepted for interface uniformity and ignored."""
    h, c = state.h, state.c
    u = params.num_units
    xh = ops.concat([_lift(x), h])
    z = ops.add(ops.matmul(xh, params.w, transpose_b=True), params.b)
    ig = ops.sigmoid(ops.slice_last(z, 0, u))
    jg = ops.tanh(ops.slice_last(z, u, 2 * u))
    fg = ops.sigmoid(ops.slice_last(z, 2 * u, 3 * u))
    og = ops.sigmoid(ops.slice_last(z, 3 * u, 4 * u))
    c2 = ops.add(ops.mul(fg, c), ops.mul(ig, jg))
    h2 = ops.mul(og, ops.tanh(c2))
    return LstmState(h2, c2), h2


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


_STEPS = {SruParams: sru_step, GruParams: gru_step, LstmParams: lstm_step}


def cell_step(params, state, x, f=ops.relu, need_output: bool = True):
    return _STEPS[type(params)](params, state, x, f, need_output)


def head_apply(head: TaskHead, o) -> Tensor:
    return ops.add(ops.matmul(o, head.w_p, transpose_b=True), head.b_p)


def unroll(params, head: TaskHead, xs, f=ops.relu, dropout_keep: float = 1.0,
           rng: np.random.Generator | None = None):
    """Run the cell over a sequence (or a batch of same-length sequences).

    xs: inputs of shape (T, d), or (B, T, d) for a batch; treated as
    constants.  rng given means training mode: inverted dropout with rate
    dropout_keep is applied to every cell output that feeds the head.
    rng None means evaluation (no dropout, masks not even drawn).

    Returns (predictions, tape): a list of per-step head outputs for
    per-step head kinds, or the single final-step output for
    end_classification.  The tape is the one the parameters are watched
    on, or None for plain evaluation.
    """
    X = as_array(xs)
    if X.ndim == 2:
        batch, T = None, X.shape[0]
    elif X.ndim == 3:
        batch, T = X.shape[0], X.shape[1]
    else:
        raise ValueError(f"xs must be (T, d) or (B, T, d), got {X.shape}")
    if T == 0:
        raise ValueError("empty sequence")
    per_step = head.kind != "end_classification"
    state = state_zero_like(params, batch)
    preds = []
    o_last = None
    for t in range(T):
        x = X[t] if batch is None else X[:, t, :]
        need = per_step or t == T - 1
        state, o = cell_step(params, state, x, f, need_output=need)
        if not need:
            continue
        if rng is not None:
            o = ops.dropout(o, dropout_keep, rng)
        if per_step:
            preds.append(head_apply(head, o))
        else:
            o_last = o
    out = preds if per_step else head_apply(head, o_last)
    return out, head.w_p.tape


def state_zero_like(params, batch: int | None):
    # The zero state must live on the params' tape only if gradients are
    # wanted through it; the initial state is a constant, so it never is.
    return state_zero(params, batch)


def watch(obj, tape: Tape):
    """Copy a params/head dataclass with every Tensor field registered as a
    leaf on `tape`; non-Tensor fields pass through unchanged."""
    kw = {}
    for fld in dataclasses.fields(obj):
        v = getattr(obj, fld.name)
        kw[fld.name] = tape.leaf(v) if isinstance(v, Tensor) else v
    return type(obj)(**kw)


def _canonical(field_name: str) -> str:
    return "W" + field_name[1:] if field_name.startswith("w") else field_name


_PREFIXES = {SruParams: "sru", GruParams: "gru", LstmParams: "lstm",
             TaskHead: "head"}


def named_tensors(obj) -> list[tuple[str, Tensor]]:
    """(canonical name, tensor) pairs in field order, e.g. ("sru/W_r", ...).
    Absent optional fields (summary path with summary_dims=0) are skipped."""
    prefix = _PREFIXES[type(obj)]
    out = []
    for fld in dataclasses.fields(obj):
        v = getattr(obj, fld.name)
        if isinstance(v, Tensor):
            out.append((f"{prefix}/{_canonical(fld.name)}", v))
    return out


def replace_tensors(obj, new: dict[str, Tensor]):
    """Rebuild a params/head dataclass substituting tensors by canonical name."""
    prefix = _PREFIXES[type(obj)]
    kw = {}
    for fld in dataclasses.fields(obj):
        v = getattr(obj, fld.name)
        name = f"{prefix}/{_canonical(fld.name)}"
        kw[fld.name] = new.get(name, v) if isinstance(v, Tensor) else v
    return type(obj)(**kw)
