"""Loss functions, the SGD loop, and evaluation.

Training is plain minibatch SGD with a staircase learning-rate decay
and global-norm gradient clipping.  One iteration is one minibatch
update.  Epochs are shuffled permutations of the training set; the last
batch of an epoch may be short.

The metrics CSV written per run has a fixed header
``iteration,lr,train_loss,val_metric,seconds`` whose seconds column is
always 0.0, so that rerunning a manifest reproduces the file
byte-for-byte.  Real wall-clock times go to a separate timings CSV,
which is the one file a replay is allowed to differ in.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import cells, ops
from . import rng as rngmod
from .checkpoint import save_model
from .datasets import SequenceDataset
from .tensor import NonFiniteError, Tape, Tensor, backward

METRICS_HEADER = "iteration,lr,train_loss,val_metric,seconds"
TIMINGS_HEADER = "iteration,seconds"


class TrainingDiverged(RuntimeError):
    """Loss or parameters left the finite range; the run is void."""


@dataclass(frozen=True)
class TrainConfig:
    initial_learning_rate: float = 0.1
    lr_decay: float = 0.99
    clip_norm: float = 1.0
    dropout_keep: float = 1.0
    batch_size: int = 32
    max_iterations: int = 2000
    eval_every: int = 100

    def __post_init__(self):
        if not (np.isfinite(self.initial_learning_rate)
                and self.initial_learning_rate > 0.0):
            raise ValueError("initial_learning_rate must be positive")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must lie in (0, 1]")
        if not (np.isfinite(self.clip_norm) and self.clip_norm > 0.0):
            raise ValueError("clip_norm must be positive")
        if not 0.0 < self.dropout_keep <= 1.0:
            raise ValueError("dropout_keep must lie in (0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")


@dataclass(frozen=True)
class MetricsRecord:
    iteration: int
    learning_rate: float
    train_loss: float
    val_metric: float
    wall_time: float


@dataclass(eq=False)
class TrainResult:
    records: list[MetricsRecord]
    best_val: float
    best_iteration: int
    params: object          # cell parameters at the best validation point
    head: cells.TaskHead
    spec: cells.CellSpec
    input_dim: int
    checkpoint_path: Path | None


def lr_at(initial: float, decay: float, iteration: int) -> float:
    """Staircase schedule: initial * decay ** (iteration // 1000).

    `iteration` counts completed updates, so the update taken at step
    count g (0-based) uses lr_at(initial, decay, g): the first thousand
    updates run at the initial rate.
    """
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    return initial * decay ** (iteration // 1000)


def clip_global_norm(grads, clip_norm: float):
    """Scale a gradient set so its joint L2 norm is at most clip_norm.

    Returns (clipped list, the pre-clip norm).  No-op (same objects)
    when the norm is already within bounds.
    """
    if not np.isfinite(clip_norm) or clip_norm <= 0.0:
        raise ValueError("clip_norm must be positive")
    grads = list(grads)
    total = 0.0
    for g in grads:
        a = g.array if isinstance(g, Tensor) else np.asarray(g)
        total += float(np.vdot(a, a))
    norm = float(np.sqrt(total))
    if norm <= clip_norm:
        return grads, norm
    out = []
    for g in grads:
        a = g.array if isinstance(g, Tensor) else np.asarray(g)
        # multiply before dividing: for clip_norm 1 this is exact division
        out.append(Tensor._wrap(a * clip_norm / norm))
    return out, norm


def sgd_step(params, grads, lr: float) -> list[Tensor]:
    """One descent step over parallel lists of tensors; validates the
    result is finite so a diverging run fails loudly, not silently."""
    if len(params) != len(grads):
        raise ValueError("params and grads must align")
    out = []
    for p, g in zip(params, grads):
        pa = p.array if isinstance(p, Tensor) else np.asarray(p)
        ga = g.array if isinstance(g, Tensor) else np.asarray(g)
        if pa.shape != ga.shape:
            raise ValueError(f"gradient shape {ga.shape} != param {pa.shape}")
        out.append(Tensor(pa - lr * ga))
    return out


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean cross-entropy of integer labels under softmax(logits).

    logits: (B, K) or (K,); labels: (B,) ints or a scalar.  Stable
    log-sum-exp forward; the adjoint is (softmax - onehot)/B.
    """
    Z = logits.array if isinstance(logits, Tensor) else np.asarray(logits, float)
    squeeze = Z.ndim == 1
    if squeeze:
        Z = Z[None, :]
    if Z.ndim != 2:
        raise ValueError(f"logits must be (B, K) or (K,), got {Z.shape}")
    B, K = Z.shape
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if y.shape[0] != B:
        raise ValueError("one label per row required")
    if y.min() < 0 or y.max() >= K:
        raise ValueError(f"labels must lie in [0, {K})")
    m = Z.max(axis=1, keepdims=True)
    ex = np.exp(Z - m)
    denom = ex.sum(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(denom[:, 0])
    val = np.asarray((lse - Z[np.arange(B), y]).mean())
    probs = ex / denom

    tape = logits.tape if isinstance(logits, Tensor) else None
    if tape is None:
        return Tensor._wrap(val)

    def gfn(g):
        G = probs.copy()
        G[np.arange(B), y] -= 1.0
        G *= float(g) / B
        return (G if not squeeze else G[0],)

    return tape.record("softmax_cross_entropy", val, (logits.nid,), gfn)


def bernoulli_nll(logits, targets) -> Tensor:
    """Negative log-likelihood of 0/1 targets under independent
    sigmoid(logits), summed over the last axis and averaged over the
    rest.  Computed as max(z,0) - z*y + log1p(exp(-|z|)) for stability;
    the adjoint is (sigmoid(z) - y)/lead."""
    Z = logits.array if isinstance(logits, Tensor) else np.asarray(logits, float)
    Y = np.asarray(targets, dtype=np.float64)
    if Z.shape != Y.shape or Z.ndim < 1:
        raise ValueError(f"shape mismatch: logits {Z.shape}, targets {Y.shape}")
    if not np.all((Y == 0.0) | (Y == 1.0)):
        raise ValueError("targets must be 0/1 valued")
    lead = Z.size // Z.shape[-1]
    elt = np.maximum(Z, 0.0) - Z * Y + np.log1p(np.exp(-np.abs(Z)))
    val = np.asarray(elt.sum() / lead)

    tape = logits.tape if isinstance(logits, Tensor) else None
    if tape is None:
        return Tensor._wrap(val)

    def gfn(g):
        return ((expit(Z) - Y) * (float(g) / lead),)

    return tape.record("bernoulli_nll", val, (logits.nid,), gfn)


def loss_on_batch(spec: cells.CellSpec, params, head: cells.TaskHead, xb,
                  labels=None, dropout_keep: float = 1.0,
                  rng: np.random.Generator | None = None,
                  tape: Tape | None = None):
    """Model loss on one batch; returns (loss, watched params, watched head).

    xb: (B, T, d) or (T, d).  With a tape, parameters are registered as
    leaves on it so their gradients can be pulled after backward(); with
    tape None this is a pure forward evaluation.  Per-step kinds score
    predictions against the next-step inputs; end_classification scores
    the final-step logits against `labels`.
    """
    X = np.asarray(xb, dtype=np.float64)
    batched = X.ndim == 3
    T = X.shape[1] if batched else X.shape[0]
    B = X.shape[0] if batched else 1
    kind = head.kind
    if tape is not None:
        params = cells.watch(params, tape)
        head = cells.watch(head, tape)
    if kind == "end_classification":
        if labels is None:
            raise ValueError("end_classification needs labels")
        logits, _ = cells.unroll(params, head, X, f=spec.f,
                                 dropout_keep=dropout_keep, rng=rng)
        return softmax_cross_entropy(logits, labels), params, head
    if T < 2:
        raise ValueError("next-step objectives need at least two steps")
    inputs = X[:, :-1, :] if batched else X[:-1]
    preds, _ = cells.unroll(params, head, inputs, f=spec.f,
                            dropout_keep=dropout_keep, rng=rng)
    total = None
    for t, p in enumerate(preds):
        target = X[:, t + 1, :] if batched else X[t + 1]
        if kind == "next_step_regression":
            term = ops.sq_norm(ops.sub(p, target))
        else:  # binary_next_step
            term = bernoulli_nll(p, target)
        total = term if total is None else ops.add(total, term)
    denom = (T - 1) * B if kind == "next_step_regression" else (T - 1)
    return ops.scale(total, 1.0 / denom), params, head


def _nll_eval(Z: np.ndarray, Y: np.ndarray) -> np.ndarray:
    return np.maximum(Z, 0.0) - Z * Y + np.log1p(np.exp(-np.abs(Z)))


def evaluate_model(spec: cells.CellSpec, params, head: cells.TaskHead,
                   ds: SequenceDataset, batch_size: int = 256) -> float:
    """Task metric over a dataset: mean per-sequence MSE for regression,
    mean per-sequence NLL for binary prediction, error rate for
    classification.  Pure evaluation; no dropout, nothing recorded."""
    X = ds.stacked()
    n, T, d = X.shape
    total = 0.0
    for lo in range(0, n, batch_size):
        hi = min(lo + batch_size, n)
        xb = X[lo:hi]
        if ds.kind == "end_classification":
            logits, _ = cells.unroll(params, head, xb, f=spec.f)
            picks = np.argmax(logits.array, axis=1)
            total += float(np.sum(picks != ds.labels[lo:hi]))
            continue
        preds, _ = cells.unroll(params, head, xb[:, :-1, :], f=spec.f)
        P = np.stack([p.array for p in preds], axis=1)   # (b, T-1, d)
        Yb = xb[:, 1:, :]
        if ds.kind == "next_step_regression":
            per_seq = ((P - Yb) ** 2).sum(axis=2).mean(axis=1)
        else:
            per_seq = _nll_eval(P, Yb).sum(axis=2).mean(axis=1)
        total += float(per_seq.sum())
    return total / n


def _target_dim(data: dict[str, SequenceDataset]) -> int:
    kind = data["train"].kind
    if kind != "end_classification":
        return data["train"].dim
    top = 0
    for ds in data.values():
        if ds.labels is not None and len(ds.labels):
            top = max(top, int(ds.labels.max()))
    return top + 1


def train(spec: cells.CellSpec, config: TrainConfig,
          data: dict[str, SequenceDataset], seed: int,
          out_dir=None, log=None) -> TrainResult:
    """SGD on data["train"], tracking the metric on data["val"].

    Weights come from the seed's init stream, shuffling and dropout from
    dedicated streams, so a (spec, config, data, seed) tuple pins the
    whole trajectory.  The best-validation parameters are kept (ties go
    to the earlier iteration) and written to out_dir/checkpoint.sruf
    when out_dir is given, alongside metrics.csv and timings.csv.

    Records: one at iteration 0 (initial weights; train_loss is the
    first batch's loss without dropout) and one per eval_every updates,
    plus a final one.  train_loss in later rows is the mean minibatch
    training loss since the previous row.  Raises TrainingDiverged if
    the loss or an update stops being finite.
    """
    train_ds, val_ds = data["train"], data["val"]
    X = train_ds.stacked()
    n, T, d = X.shape
    labels = train_ds.labels
    params, head = cells.init_model(spec, d, train_ds.kind,
                                    _target_dim(data), seed)
    shuffle_rng = rngmod.stream(seed, rngmod.SHUFFLE)
    drop_rng = rngmod.stream(seed, rngmod.DROPOUT)
    t0 = time.perf_counter()

    order = shuffle_rng.permutation(n)
    pos = 0
    probe = order[:min(config.batch_size, n)]
    probe_loss, _, _ = loss_on_batch(
        spec, params, head, X[probe],
        labels[probe] if labels is not None else None)
    val0 = evaluate_model(spec, params, head, val_ds)
    records = [MetricsRecord(0, lr_at(config.initial_learning_rate,
                                      config.lr_decay, 0),
                             probe_loss.item(), val0,
                             time.perf_counter() - t0)]
    best_val, best_it = val0, 0
    best_params, best_head = params, head
    if log:
        log(f"iter 0: train_loss={probe_loss.item():.6g} val={val0:.6g}")

    acc_loss, acc_count = 0.0, 0
    for g in range(config.max_iterations):
        if pos >= n:
            order = shuffle_rng.permutation(n)
            pos = 0
        idx = order[pos:pos + config.batch_size]
        pos += config.batch_size
        yb = labels[idx] if labels is not None else None
        tape = Tape()
        try:
            loss, wp, wh = loss_on_batch(
                spec, params, head, X[idx], yb,
                dropout_keep=config.dropout_keep, rng=drop_rng, tape=tape)
            leaves = cells.named_tensors(wp) + cells.named_tensors(wh)
            grads = backward(tape, loss, wanted=[t.nid for _, t in leaves])
            glist = [grads[t] for _, t in leaves]
            clipped, _ = clip_global_norm(glist, config.clip_norm)
            lr = lr_at(config.initial_learning_rate, config.lr_decay, g)
            stepped = sgd_step([t for _, t in leaves], clipped, lr)
        except NonFiniteError as e:
            raise TrainingDiverged(
                f"non-finite value at iteration {g + 1}: {e}") from e
        new = dict(zip([nm for nm, _ in leaves], stepped))
        params = cells.replace_tensors(params, new)
        head = cells.replace_tensors(head, new)
        acc_loss += loss.item()
        acc_count += 1
        done = g + 1
        if done % config.eval_every == 0 or done == config.max_iterations:
            val = evaluate_model(spec, params, head, val_ds)
            rec = MetricsRecord(
                done,
                lr_at(config.initial_learning_rate, config.lr_decay, done),
                acc_loss / acc_count, val, time.perf_counter() - t0)
            records.append(rec)
            acc_loss, acc_count = 0.0, 0
            if val < best_val:
                best_val, best_it = val, done
                best_params, best_head = params, head
            if log:
                log(f"iter {done}: train_loss={rec.train_loss:.6g} "
                    f"val={val:.6g} lr={rec.learning_rate:.4g}")

    ckpt = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        ckpt = out / "checkpoint.sruf"
        save_model(ckpt, spec, best_params, best_head, d)
        write_metrics_csv(out / "metrics.csv", records)
        write_timings_csv(out / "timings.csv", records)
    return TrainResult(records=records, best_val=best_val,
                       best_iteration=best_it, params=best_params,
                       head=best_head, spec=spec, input_dim=d,
                       checkpoint_path=ckpt)


def evaluate(checkpoint_path, ds: SequenceDataset,
             batch_size: int = 256) -> float:
    """Metric of a stored model on a dataset, with shape/kind checks."""
    from .checkpoint import load_model
    spec, params, head, input_dim = load_model(checkpoint_path)
    if ds.dim != input_dim:
        raise ValueError(
            f"checkpoint expects input dim {input_dim}, dataset has {ds.dim}")
    if ds.kind != head.kind:
        raise ValueError(
            f"checkpoint head is {head.kind}, dataset kind is {ds.kind}")
    if ds.kind == "end_classification" and ds.labels is not None \
            and len(ds.labels) and int(ds.labels.max()) >= head.target_dim:
        raise ValueError("dataset has labels outside the head's range")
    return evaluate_model(spec, params, head, ds, batch_size)


def write_metrics_csv(path, records: list[MetricsRecord]) -> None:
    """Deterministic run log: the seconds column is pinned to 0.0 (real
    times live in the timings CSV) so replays reproduce this file
    exactly.  Floats are written with full round-trip precision."""
    lines = [METRICS_HEADER]
    for r in records:
        lines.append(f"{r.iteration},{r.learning_rate!r},{r.train_loss!r},"
                     f"{r.val_metric!r},0.0")
    Path(path).write_text("\n".join(lines) + "\n")


def write_timings_csv(path, records: list[MetricsRecord]) -> None:
    lines = [TIMINGS_HEADER]
    for r in records:
        lines.append(f"{r.iteration},{r.wall_time!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_metrics_csv(path) -> list[MetricsRecord]:
    lines = Path(path).read_text().strip().split("\n")
    if lines[0] != METRICS_HEADER:
        raise ValueError(f"unexpected metrics header: {lines[0]!r}")
    out = []
    for ln in lines[1:]:
        it, lr, tl, vm, sec = ln.split(",")
        out.append(MetricsRecord(int(it), float(lr), float(tl),
                                 float(vm), float(sec)))
    return out
