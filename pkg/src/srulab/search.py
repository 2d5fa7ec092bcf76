"""Random hyperparameter search over training runs.

Trial t of a sweep draws its hyperparameters from stream(seed, SEARCH, t)
and trains with a child seed derived from (seed, TRIAL, t), so any trial
can be reproduced alone, results do not depend on execution order, and
adding trials never changes earlier ones.  A trial whose run diverges is
recorded as failed with an infinite objective rather than aborting the
sweep.  The test-set objective is computed once, for the best trial by
validation objective only, to keep the test split out of selection.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from . import rng as rngmod
from .cells import CellSpec, DEFAULT_ALPHAS
from .datasets import SequenceDataset
from .training import TrainConfig, TrainingDiverged, evaluate, train


@dataclass(frozen=True)
class SearchSpace:
    """Sampling ranges.  Learning rate is log-uniform; everything else
    uniform.  Integer ranges are inclusive."""

    log_lr_min: float = -10.0
    log_lr_max: float = 0.0
    decay_min: float = 0.8
    decay_max: float = 0.999
    units_min: int = 1
    units_max: int = 256
    stats_min: int = 1
    stats_max: int = 256
    summary_min: int = 1
    summary_max: int = 64

    def __post_init__(self):
        if self.log_lr_min > self.log_lr_max:
            raise ValueError("empty learning-rate range")
        for lo, hi, what in ((self.units_min, self.units_max, "units"),
                             (self.stats_min, self.stats_max, "stats"),
                             (self.summary_min, self.summary_max, "summary")):
            if lo < 1 or hi < lo:
                raise ValueError(f"bad {what} range [{lo}, {hi}]")
        if not 0.0 < self.decay_min <= self.decay_max <= 1.0:
            raise ValueError("decay range must lie in (0, 1]")


@dataclass(frozen=True)
class TrialSpec:
    """One sampled configuration.  num_stats/summary_dims stay None for
    cells without those knobs."""

    cell: str
    initial_learning_rate: float
    lr_decay: float
    dropout_keep: float
    num_units: int
    num_stats: int | None = None
    summary_dims: int | None = None


@dataclass(frozen=True)
class TrialResult:
    trial: int
    spec: TrialSpec
    status: str                    # "ok" or "failed"
    val_objective: float           # +inf when failed
    test_objective: float | None = None
    checkpoint_path: str | None = None


def sample_trial(space: SearchSpace, rng, cell: str) -> TrialSpec:
    """Draw one configuration.  The draw order (lr, decay, keep, units,
    then stats and summary for cells that have them) is fixed; changing
    it would silently re-randomize every seeded sweep."""
    lr = math.exp(rng.uniform(space.log_lr_min, space.log_lr_max))
    decay = rng.uniform(space.decay_min, space.decay_max)
    keep = 1.0 - rng.random()      # uniform over (0, 1]
    units = int(rng.integers(space.units_min, space.units_max + 1))
    stats = summary = None
    if cell == "sru":
        stats = int(rng.integers(space.stats_min, space.stats_max + 1))
        summary = int(rng.integers(space.summary_min, space.summary_max + 1))
    return TrialSpec(cell=cell, initial_learning_rate=lr, lr_decay=decay,
                     dropout_keep=keep, num_units=units, num_stats=stats,
                     summary_dims=summary)


def cell_spec_for(trial: TrialSpec,
                  alphas=DEFAULT_ALPHAS) -> CellSpec:
    if trial.cell == "sru":
        return CellSpec(kind="sru", num_units=trial.num_units,
                        num_stats=trial.num_stats,
                        summary_dims=trial.summary_dims, alphas=tuple(alphas))
    return CellSpec(kind=trial.cell, num_units=trial.num_units)


def _run_trial(args):
    """Train one trial (module-level so process pools can pickle it)."""
    (trial_id, tspec, base_config, data, sweep_seed, out_dir, alphas) = args
    child_seed = rngmod.derive_seed(sweep_seed, rngmod.TRIAL, trial_id)
    config = replace(base_config,
                     initial_learning_rate=tspec.initial_learning_rate,
                     lr_decay=tspec.lr_decay,
                     dropout_keep=tspec.dropout_keep)
    trial_dir = None
    if out_dir is not None:
        trial_dir = Path(out_dir) / f"trial_{trial_id:03d}"
    try:
        spec = cell_spec_for(tspec, alphas)
        result = train(spec, config, data, child_seed, out_dir=trial_dir)
    except (TrainingDiverged, FloatingPointError, OverflowError):
        return TrialResult(trial=trial_id, spec=tspec, status="failed",
                           val_objective=float("inf"))
    ckpt = str(result.checkpoint_path) if result.checkpoint_path else None
    return TrialResult(trial=trial_id, spec=tspec, status="ok",
                       val_objective=result.best_val, checkpoint_path=ckpt)


@dataclass(eq=False)
class SweepResult:
    trials: list[TrialResult]
    best: TrialResult | None       # None when every trial failed


def run_sweep(cell: str, n_trials: int, base_config: TrainConfig,
              data: dict[str, SequenceDataset], seed: int,
              space: SearchSpace | None = None, out_dir=None,
              workers: int = 1, alphas=DEFAULT_ALPHAS,
              log=None) -> SweepResult:
    """Sample and train n_trials configurations; select by validation.

    The best trial's checkpoint is then scored once on data["test"] if
    that split is present.  With workers > 1 trials run in separate
    processes; results are identical to a serial sweep because each
    trial's randomness is derived only from (seed, trial index).
    """
    if n_trials < 1:
        raise ValueError("need at least one trial")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if space is None:
        space = SearchSpace()
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    specs = [sample_trial(space, rngmod.stream(seed, rngmod.SEARCH, t), cell)
             for t in range(n_trials)]
    jobs = [(t, specs[t], base_config, data, seed, out_dir, tuple(alphas))
            for t in range(n_trials)]
    if workers == 1:
        results = [_run_trial(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_trial, jobs))
    if log:
        for r in results:
            log(f"trial {r.trial}: {r.status} val={r.val_objective:.6g}")

    ok = [r for r in results if r.status == "ok"]
    best = None
    if ok:
        best = min(ok, key=lambda r: (r.val_objective, r.trial))
        if "test" in data and best.checkpoint_path is not None:
            test = evaluate(best.checkpoint_path, data["test"])
            upgraded = replace(best, test_objective=test)
            results[best.trial] = upgraded
            best = upgraded
    if out_dir is not None:
        write_sweep_csv(Path(out_dir) / "sweep.csv", results)
    return SweepResult(trials=results, best=best)


SWEEP_HEADER = ("trial,status,initial_learning_rate,lr_decay,dropout_keep,"
                "num_units,num_stats,summary_dims,val_objective,test_objective")


def write_sweep_csv(path, results: list[TrialResult]) -> None:
    """One row per trial, full float precision, blanks for fields a cell
    kind does not have and for the test objective of non-best trials."""
    lines = [SWEEP_HEADER]
    for r in results:
        s = r.spec
        cols = [
            str(r.trial), r.status,
            repr(s.initial_learning_rate), repr(s.lr_decay),
            repr(s.dropout_keep), str(s.num_units),
            "" if s.num_stats is None else str(s.num_stats),
            "" if s.summary_dims is None else str(s.summary_dims),
            repr(r.val_objective),
            "" if r.test_objective is None else repr(r.test_objective),
        ]
        lines.append(",".join(cols))
    Path(path).write_text("\n".join(lines) + "\n")
