"""Command-line interface.

Every subcommand takes --seed, --config and --out-dir.  Settings
resolve as: built-in default, then the --config file, then explicit
flags.  A command that has an output directory writes manifest.cfg
there with every resolved setting, and running the same command with
``--config manifest.cfg`` replays the run exactly (the timings CSV is
the one file allowed to differ).

Values from a config file and from flags pass through the same typed
registry, so both sources are validated identically.  Unknown config
keys are rejected rather than ignored; a manifest written by one
command cannot silently drive another.

Errors print a single ``error: ...`` line to stderr and exit 1.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from . import checkpoint as ckptmod
from . import digits as digitsmod
from . import ema as emamod
from . import rng as rngmod
from . import synthetic as synthmod
from . import training as trainmod
from .cells import CELL_KINDS, CellSpec, DEFAULT_ALPHAS, NONLINEARITIES
from .config import ConfigError, read_config, write_config
from .datasets import (SequenceDataset, export_sequences_csv,
                       images_to_dataset, load_idx_images, load_idx_labels,
                       read_seqd, write_idx_images, write_idx_labels,
                       write_seqd)
from .search import SearchSpace, run_sweep
from .training import TrainConfig

_UNSET = object()


def _pint(s: str) -> int:
    try:
        return int(s)
    except ValueError:
        raise ValueError(f"not an integer: {s!r}") from None


def _pfloat(s: str) -> float:
    try:
        return float(s)
    except ValueError:
        raise ValueError(f"not a number: {s!r}") from None


def _pbool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _palphas(s: str) -> tuple[float, ...]:
    parts = [p.strip() for p in s.split(",") if p.strip()]
    if not parts:
        raise ValueError("empty alpha list")
    return tuple(_pfloat(p) for p in parts)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(repr(float(x)) for x in v)
    return str(v)


@dataclass(frozen=True)
class Flag:
    name: str                       # dest name; the flag is --name-with-dashes
    parse: Callable[[str], object]
    default: object = None
    help: str = ""
    choices: tuple | None = None
    switch: bool = False            # presence-only boolean flag

    def coerce(self, raw: str):
        v = self.parse(raw)
        if self.choices is not None and v not in self.choices:
            raise ValueError(
                f"--{self.name.replace('_', '-')}: {v!r} is not one of "
                f"{', '.join(map(str, self.choices))}")
        return v


_COMMON = [
    Flag("seed", _pint, 0, "master seed for all random streams"),
    Flag("config", str, None, "key=value file of defaults (a manifest replays a run)"),
    Flag("out_dir", str, None, "directory for outputs and the run manifest"),
]

_DATA_FLAGS = [
    Flag("data", str, None, "directory holding the dataset splits"),
    Flag("format", str, "seqd", "dataset layout in --data", ("seqd", "idx")),
    Flag("pool", _pint, 2, "pooling factor when reading idx images"),
]

_MODEL_FLAGS = [
    Flag("cell", str, "sru", "recurrent cell kind", tuple(CELL_KINDS)),
    Flag("num_units", _pint, 64, "output units of the cell"),
    Flag("num_stats", _pint, 64, "per-scale statistics (sru only)"),
    Flag("summary_dims", _pint, 32, "summary vector width (sru only)"),
    Flag("alphas", _palphas, tuple(DEFAULT_ALPHAS),
         "comma-separated averaging scales (sru only)"),
    Flag("nonlinearity", str, "relu", "sru activation",
         tuple(sorted(NONLINEARITIES))),
]

_TRAIN_FLAGS = [
    Flag("lr", _pfloat, 0.1, "initial learning rate"),
    Flag("lr_decay", _pfloat, 0.99, "staircase decay per 1000 iterations"),
    Flag("clip_norm", _pfloat, 1.0, "global gradient-norm cap"),
    Flag("dropout_keep", _pfloat, 1.0, "keep probability on cell outputs"),
    Flag("batch_size", _pint, 32, "sequences per update"),
    Flag("iterations", _pint, 2000, "number of minibatch updates"),
    Flag("eval_every", _pint, 100, "iterations between validation points"),
]

COMMANDS: dict[str, dict] = {}


def _command(name: str, help_text: str, flags: list[Flag]):
    def wrap(fn):
        COMMANDS[name] = {"help": help_text, "flags": _COMMON + flags, "fn": fn}
        return fn
    return wrap


def _resolve(name: str, args: argparse.Namespace) -> dict:
    flags = COMMANDS[name]["flags"]
    by_name = {f.name: f for f in flags}
    cfg = {}
    raw_cfg = getattr(args, "config", _UNSET)
    if raw_cfg is not _UNSET and raw_cfg is not None:
        cfg = read_config(raw_cfg)
        cmd = cfg.pop("command", name)
        if cmd != name:
            raise ConfigError(
                f"config was written by {cmd!r}, not {name!r}")
        unknown = set(cfg) - set(by_name)
        if unknown:
            raise ConfigError(
                f"unknown config keys: {', '.join(sorted(unknown))}")
    out = {}
    for f in flags:
        raw = getattr(args, f.name)
        if raw is not _UNSET:
            out[f.name] = True if f.switch else f.coerce(raw)
        elif f.name in cfg:
            out[f.name] = f.coerce(cfg[f.name])
        else:
            out[f.name] = f.default
    return out


def _write_manifest(name: str, opts: dict) -> None:
    if opts.get("out_dir") is None:
        return
    out = Path(opts["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    values = {"command": name}
    for f in COMMANDS[name]["flags"]:
        if f.name == "config":
            continue
        v = opts[f.name]
        if v is None:
            continue
        values[f.name] = _fmt(v)
    write_config(out / "manifest.cfg", values,
                 header="resolved run settings; replay with --config")


def _require(opts: dict, *names: str) -> None:
    for n in names:
        if opts[n] is None:
            raise ValueError(f"--{n.replace('_', '-')} is required")


def _out(opts: dict) -> Path:
    out = Path(opts["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cell_spec(opts: dict) -> CellSpec:
    if opts["cell"] == "sru":
        return CellSpec(kind="sru", num_units=opts["num_units"],
                        num_stats=opts["num_stats"],
                        summary_dims=opts["summary_dims"],
                        alphas=opts["alphas"],
                        nonlinearity=opts["nonlinearity"])
    return CellSpec(kind=opts["cell"], num_units=opts["num_units"])


def _load_split_idx(data_dir: Path, split: str, pool: int) -> SequenceDataset:
    def find(stem: str) -> Path:
        plain = data_dir / f"{split}-{stem}.idx"
        if plain.exists():
            return plain
        gz = data_dir / f"{split}-{stem}.idx.gz"
        if gz.exists():
            return gz
        raise ValueError(f"no {plain.name}[.gz] in {data_dir}")

    images = load_idx_images(find("images"))
    labels = load_idx_labels(find("labels"))
    return images_to_dataset(images, labels, pool)


def _load_data(opts: dict, splits: tuple[str, ...],
               optional: tuple[str, ...] = ()) -> dict[str, SequenceDataset]:
    _require(opts, "data")
    data_dir = Path(opts["data"])
    if not data_dir.is_dir():
        raise ValueError(f"not a data directory: {data_dir}")
    out = {}
    for split in tuple(splits) + tuple(optional):
        if opts["format"] == "seqd":
            path = data_dir / f"{split}.seqd"
            if path.exists():
                out[split] = read_seqd(path)
            elif split not in optional:
                raise ValueError(f"missing {path}")
        else:
            try:
                out[split] = _load_split_idx(data_dir, split, opts["pool"])
            except ValueError:
                if split not in optional:
                    raise
    return out


@_command("generate-synthetic", "write dataset splits to --out-dir", [
    Flag("task", str, "sequence", "what to generate", ("sequence", "digits")),
    Flag("train", _pint, None, "training sequences (default per task)"),
    Flag("val", _pint, None, "validation sequences"),
    Flag("test", _pint, None, "test sequences"),
    Flag("timesteps", _pint, synthmod.DEFAULT_TIMESTEPS,
         "sequence length (sequence task)"),
    Flag("pool", _pint, 2, "pooling for the digit scan sequences"),
    Flag("export_csv", _pint, 0,
         "also dump the first N sequences of each split as CSV"),
])
def _cmd_generate(name: str, opts: dict) -> int:
    _require(opts, "out_dir")
    out = _out(opts)
    task = opts["task"]
    defaults = (synthmod.DEFAULT_SPLITS if task == "sequence"
                else digitsmod.DEFAULT_SPLITS)
    splits = {s: opts[s] if opts[s] is not None else defaults[s]
              for s in ("train", "val", "test")}
    if task == "sequence":
        data = synthmod.generate_dataset(opts["seed"], splits,
                                         opts["timesteps"])
        for split, ds in data.items():
            write_seqd(out / f"{split}.seqd", ds)
            print(f"wrote {split}.seqd: {len(ds)} sequences of length "
                  f"{ds.sequences[0].shape[0]}")
            if opts["export_csv"]:
                export_sequences_csv(out / f"{split}.csv", ds,
                                     limit=opts["export_csv"])
    else:
        rendered = digitsmod.generate_digits(opts["seed"], splits)
        for split, (images, labels) in rendered.items():
            write_idx_images(out / f"{split}-images.idx", images)
            write_idx_labels(out / f"{split}-labels.idx", labels)
            ds = images_to_dataset(images.astype(float) / 255.0, labels,
                                   opts["pool"])
            write_seqd(out / f"{split}.seqd", ds)
            print(f"wrote {split}-images.idx, {split}-labels.idx, "
                  f"{split}.seqd: {len(ds)} sequences of length "
                  f"{ds.sequences[0].shape[0]}")
            if opts["export_csv"]:
                export_sequences_csv(out / f"{split}.csv", ds,
                                     limit=opts["export_csv"])
    _write_manifest(name, opts)
    return 0


@_command("train", "fit a model and checkpoint the best validation point",
          _DATA_FLAGS + _MODEL_FLAGS + _TRAIN_FLAGS)
def _cmd_train(name: str, opts: dict) -> int:
    _require(opts, "out_dir")
    data = _load_data(opts, ("train", "val"))
    spec = _cell_spec(opts)
    config = TrainConfig(
        initial_learning_rate=opts["lr"], lr_decay=opts["lr_decay"],
        clip_norm=opts["clip_norm"], dropout_keep=opts["dropout_keep"],
        batch_size=opts["batch_size"], max_iterations=opts["iterations"],
        eval_every=opts["eval_every"])
    result = trainmod.train(spec, config, data, opts["seed"],
                            out_dir=opts["out_dir"], log=print)
    _write_manifest(name, opts)
    print(f"best_val={result.best_val!r}")
    print(f"best_iteration={result.best_iteration}")
    print(f"checkpoint={result.checkpoint_path}")
    return 0


@_command("evaluate", "score a checkpoint on a dataset split",
          _DATA_FLAGS + [
              Flag("checkpoint", str, None, "path to a stored model"),
              Flag("split", str, "test", "which split to score",
                   ("train", "val", "test")),
          ])
def _cmd_evaluate(name: str, opts: dict) -> int:
    _require(opts, "checkpoint")
    split = opts["split"]
    data = _load_data(opts, (split,))
    metric = trainmod.evaluate(opts["checkpoint"], data[split])
    _write_manifest(name, opts)
    print(f"split={split}")
    print(f"metric={metric!r}")
    return 0


@_command("search", "random hyperparameter sweep, selected on validation",
          _DATA_FLAGS + [
              Flag("cell", str, "sru", "recurrent cell kind",
                   tuple(CELL_KINDS)),
              Flag("alphas", _palphas, tuple(DEFAULT_ALPHAS),
                   "averaging scales for sru trials"),
              Flag("trials", _pint, 10, "number of sampled configurations"),
              Flag("iterations", _pint, 2000, "updates per trial"),
              Flag("batch_size", _pint, 32, "sequences per update"),
              Flag("eval_every", _pint, 100, "validation cadence per trial"),
              Flag("clip_norm", _pfloat, 1.0, "global gradient-norm cap"),
              Flag("workers", _pint, 1, "parallel trial processes"),
          ])
def _cmd_search(name: str, opts: dict) -> int:
    _require(opts, "out_dir")
    out = _out(opts)
    data = _load_data(opts, ("train", "val"), optional=("test",))
    base = TrainConfig(clip_norm=opts["clip_norm"],
                       batch_size=opts["batch_size"],
                       max_iterations=opts["iterations"],
                       eval_every=opts["eval_every"])
    sweep = run_sweep(opts["cell"], opts["trials"], base, data, opts["seed"],
                      space=SearchSpace(), out_dir=out,
                      workers=opts["workers"], alphas=opts["alphas"],
                      log=print)
    _write_manifest(name, opts)
    if sweep.best is None:
        raise ValueError("every trial failed")
    best = sweep.best
    s = best.spec
    cfg = {
        "command": "train",
        "cell": s.cell,
        "num_units": s.num_units,
        "lr": repr(s.initial_learning_rate),
        "lr_decay": repr(s.lr_decay),
        "dropout_keep": repr(s.dropout_keep),
        "clip_norm": repr(opts["clip_norm"]),
        "batch_size": opts["batch_size"],
        "iterations": opts["iterations"],
        "eval_every": opts["eval_every"],
        # the winner's own training seed, so a retrain hits the same run
        "seed": rngmod.derive_seed(opts["seed"], rngmod.TRIAL, best.trial),
    }
    if s.cell == "sru":
        cfg["num_stats"] = s.num_stats
        cfg["summary_dims"] = s.summary_dims
        cfg["alphas"] = _fmt(opts["alphas"])
    write_config(out / "best_config.cfg", cfg,
                 header="winning trial; retrain with: srulab train "
                        "--config best_config.cfg --data <dir> --out-dir <dir>")
    print(f"best_trial={best.trial}")
    print(f"best_val={best.val_objective!r}")
    if best.test_objective is not None:
        print(f"best_test={best.test_objective!r}")
    return 0


@_command("analyze-viewpoints", "export lag-kernel profiles of EMA read-outs", [
    Flag("horizon", _pint, emamod.DEFAULT_HORIZON, "largest lag to tabulate"),
])
def _cmd_viewpoints(name: str, opts: dict) -> int:
    _require(opts, "out_dir")
    out = _out(opts)
    specs = emamod.default_viewpoints(opts["horizon"])
    emamod.export_profiles(out / "viewpoints.csv", specs)
    _write_manifest(name, opts)
    for spec in specs:
        k = emamod.viewpoint_kernel(spec)
        peak = int(k.argmax())
        print(f"{spec.label}: kernel[0]={float(k[0])!r} peak_lag={peak} "
              f"peak={k[peak]:.6g}")
    print(f"wrote {out / 'viewpoints.csv'}")
    return 0


@_command("inspect-checkpoint", "list the records inside a stored model", [
    Flag("checkpoint", str, None, "path to a stored model"),
])
def _cmd_inspect(name: str, opts: dict) -> int:
    _require(opts, "checkpoint")
    rows = ckptmod.describe(opts["checkpoint"])
    width = max(len(r["name"]) for r in rows)
    print(f"{'record'.ljust(width)}  {'shape'.ljust(12)}  "
          f"{'l2'.rjust(12)}  {'min'.rjust(12)}  {'max'.rjust(12)}")
    for r in rows:
        shape = "x".join(map(str, r["shape"])) if r["shape"] else "scalar"
        print(f"{r['name'].ljust(width)}  {shape.ljust(12)}  "
              f"{r['l2']:12.5g}  {r['min']:12.5g}  {r['max']:12.5g}")
    _write_manifest(name, opts)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="srulab",
        description="sequence-model laboratory: multi-scale recurrent "
                    "averaging cells, baselines, and analysis tools")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, meta in COMMANDS.items():
        sp = sub.add_parser(name, help=meta["help"])
        for f in meta["flags"]:
            arg = f"--{f.name.replace('_', '-')}"
            if f.switch:
                sp.add_argument(arg, dest=f.name, action="store_const",
                                const="true", default=_UNSET, help=f.help)
            else:
                sp.add_argument(arg, dest=f.name, default=_UNSET,
                                metavar=f.name.upper(), help=f.help)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    name = args.command
    try:
        opts = _resolve(name, args)
        return COMMANDS[name]["fn"](name, opts)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
