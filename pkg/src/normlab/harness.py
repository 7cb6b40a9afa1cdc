"""Run configuration, the training loop, grid search, and evaluation.

A run is fully determined by its ``TrainConfig``: model/scheme/optimizer
choice, the dataset selector, and a seed that fixes parameter
initialization and every epoch's shuffle order (epoch shuffles use
``seed + epoch``). Two executions of the same config produce identical
records (wall time aside) and byte-identical checkpoints.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    BatchIterator,
    Dataset,
    class_balanced_subset,
    load_cifar10,
    make_synthetic,
)
from .errors import ConfigError, DegenerateBatchError, InputError, NormlabError
from .instrument import SnapshotRecorder, export_csv, ics_proxy
from .norm import EVAL, TRAIN, NormScheme
from .optim import make_optimizer
from .reference import reference_accuracy
from .resnet import Model, ModelConfig, build_model, preset_config
from .tensor import Tensor, no_grad, softmax_cross_entropy

GRID_LEARNING_RATES = (0.01, 0.005, 0.001)
GRID_OPTIMIZERS = ("adam", "sgd")
GRID_BATCH_SIZES = tuple(range(20, 101, 10))

RECORD_FILE = "record.json"
CHECKPOINT_FILE = "model.ckpt"
INSTRUMENT_DIR = "instrumentation"
GRID_INDEX_FILE = "grid_index.jsonl"


@dataclass(frozen=True)
class DatasetSpec:
    """Selects the data a run trains and validates on."""

    kind: str  # "cifar10" | "synthetic"
    path: str | None = None
    subset_train: int | None = None
    subset_val: int | None = None
    n_train: int = 500
    n_val: int = 200
    num_classes: int = 10
    image_size: int = 32
    seed: int = 0

    @classmethod
    def cifar10(cls, path, subset_train=None, subset_val=None) -> "DatasetSpec":
        return cls("cifar10", path=str(path), subset_train=subset_train, subset_val=subset_val)

    @classmethod
    def synthetic(cls, n_train=500, n_val=200, num_classes=10, image_size=32, seed=0) -> "DatasetSpec":
        return cls(
            "synthetic",
            n_train=n_train,
            n_val=n_val,
            num_classes=num_classes,
            image_size=image_size,
            seed=seed,
        )

    def resolve(self) -> tuple[Dataset, Dataset]:
        if self.kind == "cifar10":
            if not self.path:
                raise ConfigError("cifar10 dataset spec needs a directory path")
            train, val = load_cifar10(self.path)
            if self.subset_train:
                train = class_balanced_subset(train, self.subset_train)
            if self.subset_val:
                val = class_balanced_subset(val, self.subset_val)
            return train, val
        if self.kind == "synthetic":
            train = make_synthetic(self.n_train, self.num_classes, self.image_size, self.seed)
            val = make_synthetic(self.n_val, self.num_classes, self.image_size, self.seed + 1)
            return train, dataclasses.replace(val, split="validation")
        raise ConfigError(f"unknown dataset kind {self.kind!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    """Everything needed to reproduce one training run."""

    model: str | ModelConfig
    norm_scheme: NormScheme
    optimizer: str
    lr: float
    batch_size: int
    epochs: int
    seed: int
    dataset: DatasetSpec
    instrumentation: bool = False
    epsilon: float = 1e-5
    momentum: float = 0.1

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("lr, batch_size, and epochs must be positive")

    def off_grid(self) -> list[str]:
        """Fields whose values fall outside the studied hyperparameter grid."""
        flagged = []
        if self.lr not in GRID_LEARNING_RATES:
            flagged.append("lr")
        if self.optimizer not in GRID_OPTIMIZERS:
            flagged.append("optimizer")
        if self.batch_size not in GRID_BATCH_SIZES:
            flagged.append("batch_size")
        return flagged

    def model_config(self, num_classes: int) -> ModelConfig:
        if isinstance(self.model, ModelConfig):
            # norm_scheme on the run config is the single source of truth
            return dataclasses.replace(self.model, norm_scheme=self.norm_scheme)
        return preset_config(self.model, self.norm_scheme, num_classes)

    def run_id(self) -> str:
        model = self.model if isinstance(self.model, str) else "custom"
        return (
            f"{model}-{self.norm_scheme.value}-{self.optimizer}"
            f"-lr{self.lr:g}-b{self.batch_size}-e{self.epochs}-s{self.seed}"
        )

    def to_dict(self) -> dict:
        return {
            "model": self.model if isinstance(self.model, str) else self.model.to_dict(),
            "norm_scheme": self.norm_scheme.value,
            "optimizer": self.optimizer,
            "lr": self.lr,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "seed": self.seed,
            "dataset": self.dataset.to_dict(),
            "instrumentation": self.instrumentation,
            "epsilon": self.epsilon,
            "momentum": self.momentum,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        model = d["model"]
        if isinstance(model, dict):
            model = ModelConfig.from_dict(model)
        return cls(
            model=model,
            norm_scheme=NormScheme.from_tag(d["norm_scheme"]),
            optimizer=d["optimizer"],
            lr=float(d["lr"]),
            batch_size=int(d["batch_size"]),
            epochs=int(d["epochs"]),
            seed=int(d["seed"]),
            dataset=DatasetSpec.from_dict(d["dataset"]),
            instrumentation=bool(d.get("instrumentation", False)),
            epsilon=float(d.get("epsilon", 1e-5)),
            momentum=float(d.get("momentum", 0.1)),
        )


@dataclass
class RunRecord:
    """Everything a finished run reports; persisted as one JSON file."""

    run_id: str
    config: dict
    off_grid: list[str]
    epoch_train_loss: list[float]
    epoch_train_accuracy: list[float]
    epoch_val_accuracy: list[float]
    final_val_accuracy: float
    best_val_accuracy: float
    best_epoch: int
    wall_time_s: float
    artifacts: dict = field(default_factory=dict)
    # full-scale (15-epoch, full-dataset) accuracy on record for this
    # (architecture, scheme, batch) cell; context only, never asserted
    # against desk-scale runs
    full_scale_reference: float | None = None

    def core_dict(self) -> dict:
        """Deterministic payload: everything except the wall-clock time."""
        d = self.to_dict()
        d.pop("wall_time_s")
        return d

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(**d)

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "RunRecord":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def predictions(model: Model, images: np.ndarray, batch_size: int = 100) -> np.ndarray:
    """Eval-mode class predictions, batch-size independent by construction."""
    model.set_mode(EVAL)
    out = np.empty(len(images), dtype=np.int64)
    with no_grad():
        for start in range(0, len(images), batch_size):
            chunk = images[start : start + batch_size]
            logits = model(Tensor(chunk))
            out[start : start + len(chunk)] = logits.data.argmax(axis=1)
    return out


def eval_accuracy(model: Model, dataset: Dataset, batch_size: int = 100) -> float:
    if len(dataset) == 0:
        raise InputError("cannot evaluate on an empty dataset")
    predicted = predictions(model, dataset.images, batch_size)
    return float((predicted == dataset.labels).mean())


def train_run(config: TrainConfig, out_dir: str | os.PathLike | None = None) -> RunRecord:
    """Train one model per ``config`` and report per-epoch metrics.

    When ``out_dir`` is given, ``<out_dir>/<run_id>/`` receives the record,
    the final checkpoint, and any instrumentation CSVs.
    """
    start = time.perf_counter()
    train_ds, val_ds = config.dataset.resolve()
    num_classes = int(max(train_ds.labels.max(), val_ds.labels.max())) + 1
    model_config = config.model_config(num_classes)
    model = build_model(
        model_config, seed=config.seed, epsilon=config.epsilon, momentum=config.momentum
    )
    optimizer = make_optimizer(config.optimizer, model.parameters(), config.lr)
    iterator = BatchIterator(train_ds, config.batch_size, seed=config.seed, drop_last=True)
    steps_per_epoch = iterator.batches_per_epoch()

    recorder = None
    ics_records = []  # (layer_position, IcsProxyRecord) pairs
    previous_grads: dict[str, tuple[int, np.ndarray]] = {}
    if config.instrumentation:
        recorder = SnapshotRecorder.for_epoch(steps_per_epoch)

    epoch_train_loss: list[float] = []
    epoch_train_accuracy: list[float] = []
    epoch_val_accuracy: list[float] = []

    try:
        for epoch in range(config.epochs):
            model.set_mode(TRAIN)
            losses = []
            correct = 0
            seen = 0
            for step, (images, labels) in enumerate(iterator.epoch(epoch), start=1):
                optimizer.zero_grad()
                logits = model(images)
                loss = softmax_cross_entropy(logits, labels)
                loss.backward()
                if recorder is not None and epoch == 0 and recorder.phases_for_step(step):
                    taken = recorder.capture_all(model, step)
                    for position in ("input", "final"):
                        grads = taken[(position, "gradients")]
                        prev = previous_grads.get(position)
                        if prev is not None and prev[0] == step - 1:
                            ics_records.append(
                                (position, ics_proxy(prev[1], grads, step=step))
                            )
                        previous_grads[position] = (step, grads)
                optimizer.step()
                losses.append(loss.item())
                correct += int((logits.data.argmax(axis=1) == labels).sum())
                seen += len(labels)
            epoch_train_loss.append(float(np.mean(losses)))
            epoch_train_accuracy.append(correct / seen)
            epoch_val_accuracy.append(eval_accuracy(model, val_ds))
    except DegenerateBatchError as exc:
        raise DegenerateBatchError(f"{exc} [config: {config.run_id()}]") from exc

    best_epoch = int(np.argmax(epoch_val_accuracy)) + 1
    reference = None
    if isinstance(config.model, str):
        reference = reference_accuracy(
            config.model, config.norm_scheme.value, config.batch_size
        )
    record = RunRecord(
        run_id=config.run_id(),
        config=config.to_dict(),
        off_grid=config.off_grid(),
        epoch_train_loss=epoch_train_loss,
        epoch_train_accuracy=epoch_train_accuracy,
        epoch_val_accuracy=epoch_val_accuracy,
        final_val_accuracy=epoch_val_accuracy[-1],
        best_val_accuracy=epoch_val_accuracy[best_epoch - 1],
        best_epoch=best_epoch,
        wall_time_s=time.perf_counter() - start,
        full_scale_reference=reference,
    )

    if out_dir is not None:
        run_dir = os.path.join(os.fspath(out_dir), record.run_id)
        os.makedirs(run_dir, exist_ok=True)
        ckpt_path = os.path.join(run_dir, CHECKPOINT_FILE)
        save_checkpoint(model, ckpt_path)
        record.artifacts["checkpoint"] = os.path.join(record.run_id, CHECKPOINT_FILE)
        if recorder is not None:
            inst_dir = os.path.join(run_dir, INSTRUMENT_DIR)
            os.makedirs(inst_dir, exist_ok=True)
            snap_path = os.path.join(inst_dir, "snapshots.csv")
            export_csv(recorder.snapshots(record.run_id), snap_path)
            record.artifacts["snapshots"] = os.path.join(
                record.run_id, INSTRUMENT_DIR, "snapshots.csv"
            )
            ics_path = os.path.join(inst_dir, "ics.csv")
            _write_ics_csv(ics_records, ics_path)
            record.artifacts["ics"] = os.path.join(record.run_id, INSTRUMENT_DIR, "ics.csv")
        record.artifacts["record"] = os.path.join(record.run_id, RECORD_FILE)
        record.save(os.path.join(run_dir, RECORD_FILE))

    return record


def _write_ics_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer_position", "step", "l2_delta", "cosine_similarity"])
        for position, rec in rows:
            cosine = "" if rec.cosine_similarity is None else repr(rec.cosine_similarity)
            writer.writerow([position, rec.step, repr(rec.l2_delta), cosine])


def evaluate(
    checkpoint_path: str | os.PathLike, dataset: Dataset, batch_size: int = 100
) -> float:
    """Eval-mode accuracy of a stored model on ``dataset``."""
    model = load_checkpoint(checkpoint_path)
    if dataset.labels.max() >= model.config.num_classes:
        raise InputError(
            f"dataset has labels up to {dataset.labels.max()} but the model "
            f"classifies {model.config.num_classes} classes"
        )
    return eval_accuracy(model, dataset, batch_size)


def compare_schemes(
    base: TrainConfig,
    schemes: list[NormScheme],
    seeds: list[int],
    out_dir: str | os.PathLike | None = None,
) -> dict[NormScheme, float]:
    """Mean final validation accuracy per scheme over identical-seed runs.

    Every run shares the base configuration and data; only the scheme and
    the seed vary, so accuracy differences are attributable to the scheme.
    """
    means: dict[NormScheme, float] = {}
    for scheme in schemes:
        accuracies = [
            train_run(
                dataclasses.replace(base, norm_scheme=scheme, seed=seed), out_dir
            ).final_val_accuracy
            for seed in seeds
        ]
        means[scheme] = float(np.mean(accuracies))
    return means


# -- grid search ------------------------------------------------------------


@dataclass
class CellSummary:
    overrides: dict
    status: str  # "ok" | "failed"
    mean_val_accuracy: float | None
    run_ids: list[str]
    errors: list[str]


@dataclass
class GridResult:
    cells: list[CellSummary]
    records: list[RunRecord]
    best: CellSummary | None


def grid_cells(axes: dict[str, list]) -> list[dict]:
    """Cartesian product of the axis values, in axis-listing order."""
    if not axes:
        raise ConfigError("grid search needs at least one axis")
    cells = [{}]
    for name, values in axes.items():
        if not values:
            raise ConfigError(f"grid axis {name!r} has no values")
        cells = [{**cell, name: v} for cell in cells for v in values]
    return cells


def grid_search(
    base: TrainConfig,
    axes: dict[str, list],
    repeats: int = 1,
    out_dir: str | os.PathLike | None = None,
) -> GridResult:
    """Run every cell of the grid ``repeats`` times with derived seeds.

    A cell failure is recorded and the remaining cells continue; a cell
    counts as failed only when every one of its runs raised.
    """
    if repeats < 1:
        raise ConfigError(f"repeats must be >= 1, got {repeats}")
    if "seed" in axes:
        raise ConfigError("seed cannot be a grid axis; repeats derive their own seeds")
    summaries: list[CellSummary] = []
    records: list[RunRecord] = []
    for overrides in grid_cells(axes):
        accuracies: list[float] = []
        run_ids: list[str] = []
        errors: list[str] = []
        for repeat in range(repeats):
            cell_config = dataclasses.replace(
                base, **overrides, seed=base.seed + repeat
            )
            try:
                record = train_run(cell_config, out_dir)
            except NormlabError as exc:
                errors.append(f"{cell_config.run_id()}: {exc}")
                continue
            records.append(record)
            accuracies.append(record.final_val_accuracy)
            run_ids.append(record.run_id)
            if out_dir is not None:
                _append_grid_index(out_dir, overrides, record)
        summaries.append(
            CellSummary(
                overrides=overrides,
                status="ok" if accuracies else "failed",
                mean_val_accuracy=float(np.mean(accuracies)) if accuracies else None,
                run_ids=run_ids,
                errors=errors,
            )
        )
    viable = [c for c in summaries if c.status == "ok"]
    best = max(viable, key=lambda c: c.mean_val_accuracy) if viable else None
    return GridResult(cells=summaries, records=records, best=best)


def _append_grid_index(out_dir, overrides: dict, record: RunRecord) -> None:
    entry = {
        "cell": {
            k: (v.value if isinstance(v, NormScheme) else v)
            for k, v in overrides.items()
        },
        "run_id": record.run_id,
        "final_val_accuracy": record.final_val_accuracy,
        "best_val_accuracy": record.best_val_accuracy,
    }
    with open(os.path.join(os.fspath(out_dir), GRID_INDEX_FILE), "a") as fh:
        fh.write(json.dumps(entry, sort_keys=True) + "\n")
