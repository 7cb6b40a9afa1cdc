"""Command-line front door: train, grid, eval, inspect.

Configuration comes from flags or a ``key = value`` config file (see
docs/schemas.md); flags win over file values. Grid configs may give
comma-separated value lists for ``lr``, ``opt``, ``batch``, and ``norm``;
the grid is the cartesian product of the list-valued keys.
"""

from __future__ import annotations

import argparse
import os
import sys

from .data import load_cifar10
from .errors import NormlabError
from .harness import (
    DatasetSpec,
    TrainConfig,
    evaluate,
    grid_search,
    train_run,
)
from .instrument import read_snapshot_csv
from .norm import NormScheme
from .resnet import PRESET_NAMES

SCHEME_TAGS = tuple(s.value for s in NormScheme)


def parse_config_file(path: str) -> dict[str, str]:
    """Read ``key = value`` lines; blank lines and #-comments are skipped."""
    values: dict[str, str] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise NormlabError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


def _dataset_spec(args, file_values: dict[str, str]) -> DatasetSpec:
    data_dir = args.data or file_values.get("data")
    subset = args.subset or _maybe_int(file_values.get("subset"))
    subset_val = args.subset_val or _maybe_int(file_values.get("subset_val"))
    if data_dir:
        return DatasetSpec.cifar10(data_dir, subset_train=subset, subset_val=subset_val)
    n = args.synthetic or _maybe_int(file_values.get("synthetic")) or 500
    size = args.image_size or _maybe_int(file_values.get("image_size")) or 32
    return DatasetSpec.synthetic(n_train=n, n_val=max(n // 2, 10), image_size=size)


def _maybe_int(value):
    return int(value) if value is not None else None


def _maybe_float(value):
    return float(value) if value is not None else None


def _train_config(args, file_values: dict[str, str]) -> TrainConfig:
    def pick(flag, key, cast, default):
        if flag is not None:
            return flag
        if key in file_values:
            return cast(file_values[key])
        return default

    return TrainConfig(
        model=pick(args.model, "model", str, "resnet-tiny"),
        norm_scheme=NormScheme.from_tag(pick(args.norm, "norm", str, "batchnorm")),
        optimizer=pick(args.opt, "opt", str, "adam"),
        lr=pick(args.lr, "lr", float, 0.001),
        batch_size=pick(args.batch, "batch", int, 20),
        epochs=pick(args.epochs, "epochs", int, 1),
        seed=pick(args.seed, "seed", int, 0),
        dataset=_dataset_spec(args, file_values),
        instrumentation=args.instrument or file_values.get("instrument") == "true",
        epsilon=pick(args.epsilon, "epsilon", float, 1e-5),
        momentum=pick(args.momentum, "momentum", float, 0.1),
    )


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--model", choices=PRESET_NAMES)
    p.add_argument("--norm", choices=SCHEME_TAGS)
    p.add_argument("--opt", choices=("adam", "sgd"))
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--data", help="directory with CIFAR-10 binary batches")
    p.add_argument("--subset", type=int, help="class-balanced training subset size")
    p.add_argument("--subset-val", dest="subset_val", type=int,
                   help="class-balanced validation subset size")
    p.add_argument("--synthetic", type=int, help="train on N synthetic images")
    p.add_argument("--image-size", dest="image_size", type=int)
    p.add_argument("--instrument", action="store_true",
                   help="capture first-epoch weight/gradient snapshots")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--out", help="output directory for records and checkpoints")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="normlab",
        description="Train small residual networks under four normalization schemes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run one training configuration")
    _add_common_flags(train)

    grid = sub.add_parser("grid", help="run a hyperparameter grid")
    _add_common_flags(grid)
    grid.add_argument("--repeats", type=int, default=1)

    ev = sub.add_parser("eval", help="evaluate a checkpoint")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--data", help="directory with CIFAR-10 binary batches")
    ev.add_argument("--synthetic", type=int)
    ev.add_argument("--image-size", dest="image_size", type=int, default=32)
    ev.add_argument("--subset-val", dest="subset_val", type=int)
    ev.add_argument("--batch", type=int, default=100)

    inspect = sub.add_parser("inspect", help="print a run's instrumentation summary")
    inspect.add_argument("--run", required=True, help="run directory")
    return parser


def cmd_train(args) -> int:
    file_values = parse_config_file(args.config) if args.config else {}
    config = _train_config(args, file_values)
    record = train_run(config, out_dir=args.out)
    flagged = f" (off-grid: {', '.join(record.off_grid)})" if record.off_grid else ""
    print(f"run {record.run_id}{flagged}")
    for epoch, (loss, acc, val) in enumerate(
        zip(record.epoch_train_loss, record.epoch_train_accuracy, record.epoch_val_accuracy),
        start=1,
    ):
        print(f"  epoch {epoch}: train loss {loss:.4f}, train acc {acc:.4f}, val acc {val:.4f}")
    print(f"final validation accuracy: {record.final_val_accuracy:.4f}")
    if args.out:
        print(f"artifacts under {os.path.join(args.out, record.run_id)}")
    return 0


_GRID_AXES = {"lr": ("lr", float), "opt": ("optimizer", str),
              "batch": ("batch_size", int), "norm": ("norm_scheme", NormScheme.from_tag)}


def cmd_grid(args) -> int:
    file_values = parse_config_file(args.config) if args.config else {}
    axes: dict[str, list] = {}
    for key, (field_name, cast) in _GRID_AXES.items():
        raw = file_values.get(key)
        if raw and "," in raw:
            axes[field_name] = [cast(v.strip()) for v in raw.split(",")]
            del file_values[key]
    config = _train_config(args, file_values)
    if not axes:
        raise NormlabError(
            "grid config defines no axes; give comma-separated values for at "
            "least one of lr/opt/batch/norm"
        )
    result = grid_search(config, axes, repeats=args.repeats, out_dir=args.out)
    print(f"{len(result.cells)} cells x {args.repeats} repeats")
    for cell in result.cells:
        desc = ", ".join(f"{k}={_show(v)}" for k, v in cell.overrides.items())
        if cell.status == "ok":
            print(f"  [{desc}] mean val acc {cell.mean_val_accuracy:.4f}")
        else:
            print(f"  [{desc}] status=failed ({cell.errors[0] if cell.errors else 'no runs'})")
    if result.best is not None:
        desc = ", ".join(f"{k}={_show(v)}" for k, v in result.best.overrides.items())
        print(f"best cell: [{desc}] mean val acc {result.best.mean_val_accuracy:.4f}")
    return 0


def _show(value):
    return value.value if isinstance(value, NormScheme) else value


def cmd_eval(args) -> int:
    if args.data:
        _, dataset = load_cifar10(args.data)
        if args.subset_val:
            from .data import class_balanced_subset

            dataset = class_balanced_subset(dataset, args.subset_val)
    else:
        n = args.synthetic or 200
        spec = DatasetSpec.synthetic(n_train=n, n_val=n, image_size=args.image_size)
        _, dataset = spec.resolve()
    accuracy = evaluate(args.ckpt, dataset, batch_size=args.batch)
    print(f"accuracy: {accuracy:.4f}")
    return 0


def cmd_inspect(args) -> int:
    inst_dir = os.path.join(args.run, "instrumentation")
    snap_path = os.path.join(inst_dir, "snapshots.csv")
    if not os.path.exists(snap_path):
        raise NormlabError(f"no instrumentation CSVs under {args.run}")
    for snap in read_snapshot_csv(snap_path):
        print(
            f"{snap.layer_position}-{snap.phase} {snap.kind}: "
            f"n={snap.total_count()} mean={snap.mean:+.6f} std={snap.std:.6f} "
            f"min={snap.min:+.6f} max={snap.max:+.6f} "
            f"steps {snap.first_step}..{snap.last_step}"
        )
    ics_path = os.path.join(inst_dir, "ics.csv")
    if os.path.exists(ics_path):
        with open(ics_path) as fh:
            print(fh.read().rstrip())
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"train": cmd_train, "grid": cmd_grid, "eval": cmd_eval, "inspect": cmd_inspect}
    try:
        return handlers[args.command](args)
    except NormlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
