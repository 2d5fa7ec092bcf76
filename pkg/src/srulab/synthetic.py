"""Synthetic sequences drawn from a fixed, hand-specified recurrent model.

The generator keeps exponential moving averages of three per-step
statistics of a scalar signal x: its positive part, its negative part
(as a magnitude), and a recurrent accumulator z.  Five averaging scales
ALPHAS are tracked per statistic.  z integrates thresholded differences
between the two slowest scales of the positive and negative channels,
so its value depends on events hundreds of steps in the past; models
without long memory cannot predict the resulting drift reversals.

Per step, with (x)+ = max(x, 0) and (x)- = max(-x, 0):

    z_t  = (z_{t-1})+
           + ( mu4+ - mu5+ - 0.01)+  -  (-mu4- + mu5- - 0.01)+
           - (-mu4+ + mu5+ - 0.05)+  +  ( mu4- - mu5- - 0.05)+

where mu4/mu5 are the 0.99- and 0.999-scale averages from step t-1.
The averages then absorb ((x_t)+, (x_t)-, z_t), the 15 updated values
are read out through 13 fixed projection vectors, and the signal
advances by a fixed mixture of those projections:

    o_t      = ((x_t)+, -(x_t)-, v_1.mu_t, ..., v_13.mu_t)
    x_{t+1}  = x_t + w . o_t[2:]

v entries are N(0, 0.01^2), w entries N(0, 1), x_1 is N(0, 100^2);
all are drawn once per dataset seed from dedicated streams.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .datasets import SequenceDataset

ALPHAS = (0.0, 0.5, 0.9, 0.99, 0.999)

NUM_SCALES = len(ALPHAS)
NUM_PROJECTIONS = 13
NUM_STATS = 3 * NUM_SCALES

# indices of the two slowest scales used by the z update
_I4 = ALPHAS.index(0.99)
_I5 = ALPHAS.index(0.999)

_ALPHA_ROW = np.asarray(ALPHAS, dtype=np.float64)

DEFAULT_TIMESTEPS = 176
DEFAULT_SPLITS = {"train": 3200, "val": 400, "test": 400}

_SPLIT_DOMAINS = {
    "train": rngmod.DATA_TRAIN,
    "val": rngmod.DATA_VAL,
    "test": rngmod.DATA_TEST,
}


def _pos(a):
    return np.maximum(a, 0.0)


@dataclass(eq=False, frozen=True)
class GroundTruthSru:
    """Frozen generator weights for one dataset seed."""

    v: np.ndarray   # (13, 15) read-out vectors
    w: np.ndarray   # (13,) emission mixture
    seed: int

    def __post_init__(self):
        if np.shape(self.v) != (NUM_PROJECTIONS, NUM_STATS):
            raise ValueError(
                f"v must be {(NUM_PROJECTIONS, NUM_STATS)}, got {np.shape(self.v)}")
        if np.shape(self.w) != (NUM_PROJECTIONS,):
            raise ValueError(
                f"w must be ({NUM_PROJECTIONS},), got {np.shape(self.w)}")

    @classmethod
    def from_seed(cls, seed: int) -> "GroundTruthSru":
        g = rngmod.stream(seed, rngmod.GT_MODEL)
        v = g.normal(0.0, 0.01, size=(NUM_PROJECTIONS, NUM_STATS))
        w = g.normal(0.0, 1.0, size=NUM_PROJECTIONS)
        return cls(v=v, w=w, seed=seed)


@dataclass(eq=False)
class GtState:
    """Averages per statistic, shape (n, NUM_SCALES), plus the accumulator z (n,)."""

    mu_pos: np.ndarray
    mu_neg: np.ndarray
    mu_z: np.ndarray
    z: np.ndarray

    @classmethod
    def zero(cls, batch: int = 1) -> "GtState":
        return cls(
            mu_pos=np.zeros((batch, NUM_SCALES)),
            mu_neg=np.zeros((batch, NUM_SCALES)),
            mu_z=np.zeros((batch, NUM_SCALES)),
            z=np.zeros(batch),
        )


def gt_step(model: GroundTruthSru, state: GtState,
            x: np.ndarray) -> tuple[GtState, np.ndarray]:
    """Advance one step.  x is (n,); returns (new state, x_next (n,))."""
    x = np.asarray(x, dtype=np.float64)
    mp, mn = state.mu_pos, state.mu_neg

    gain_pos = _pos(mp[:, _I4] - mp[:, _I5] - 0.01)
    gain_neg = _pos(-mn[:, _I4] + mn[:, _I5] - 0.01)
    damp_pos = _pos(-mp[:, _I4] + mp[:, _I5] - 0.05)
    damp_neg = _pos(mn[:, _I4] - mn[:, _I5] - 0.05)
    z = _pos(state.z) + gain_pos - gain_neg - damp_pos + damp_neg

    xp = _pos(x)
    xn = _pos(-x)
    a = _ALPHA_ROW
    new = GtState(
        mu_pos=a * mp + (1.0 - a) * xp[:, None],
        mu_neg=a * mn + (1.0 - a) * xn[:, None],
        mu_z=a * state.mu_z + (1.0 - a) * z[:, None],
        z=z,
    )
    # read-out: projections of the 15 updated averages, mixed by w
    mu = np.concatenate([new.mu_pos, new.mu_neg, new.mu_z], axis=1)
    proj = mu @ model.v.T                     # (n, 13)
    x_next = x + proj @ model.w
    return new, x_next


def generate_sequences(model: GroundTruthSru, n: int, timesteps: int,
                       domain: int) -> np.ndarray:
    """(n, timesteps, 1) array of signal paths.

    Sequence i draws its start value from stream (seed, domain, i), so a
    split is reproducible independent of how many sequences are requested
    before it.
    """
    if timesteps < 2:
        raise ValueError("need at least two timesteps")
    x0 = np.empty(n)
    for i in range(n):
        x0[i] = rngmod.stream(model.seed, domain, i).normal(0.0, 100.0)
    out = np.empty((n, timesteps))
    out[:, 0] = x0
    state = GtState.zero(n)
    x = x0
    for t in range(1, timesteps):
        state, x = gt_step(model, state, x)
        out[:, t] = x
    if not np.all(np.isfinite(out)):
        raise ValueError("generator produced non-finite values")
    return out[:, :, None]


def generate_dataset(seed: int, splits: dict[str, int] | None = None,
                     timesteps: int = DEFAULT_TIMESTEPS,
                     ) -> dict[str, SequenceDataset]:
    """Train/val/test splits from one seed; same model weights, disjoint
    start-value streams per split."""
    if splits is None:
        splits = dict(DEFAULT_SPLITS)
    model = GroundTruthSru.from_seed(seed)
    out = {}
    for name, n in splits.items():
        if name not in _SPLIT_DOMAINS:
            raise ValueError(f"unknown split name: {name}")
        if n < 1:
            raise ValueError(f"split {name} must be nonempty")
        X = generate_sequences(model, n, timesteps, _SPLIT_DOMAINS[name])
        out[name] = SequenceDataset(sequences=list(X),
                                    kind="next_step_regression")
    return out


def sequence_mse(predictions: np.ndarray, targets: np.ndarray) -> float:
    """Mean over steps of the squared error norm: predictions and targets
    are (T-1, d) aligned so row t predicts the step-t+1 input."""
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if p.shape != y.shape or p.ndim != 2:
        raise ValueError(f"shape mismatch: {p.shape} vs {y.shape}")
    return float(((p - y) ** 2).sum(axis=1).mean())
