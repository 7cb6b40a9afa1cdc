"""Weight/gradient distribution capture around the first training epoch.

Two layers are observed: the first convolution ("input") and the linear
classifier head ("final"). Two windows of an epoch are recorded: the first
20 update steps ("early") and the last 20 ("late"). Weights and gradients
are copied after backward and before the optimizer step, so capture can
never perturb training.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .errors import InputError, NormlabError, UsageError

INPUT = "input"
FINAL = "final"
EARLY = "early"
LATE = "late"
WEIGHTS = "weights"
GRADIENTS = "gradients"

DEFAULT_BINS = 50

CSV_COLUMNS = [
    "run_id",
    "layer_position",
    "phase",
    "kind",
    "row",
    "bin_lo",
    "bin_hi",
    "count",
    "mean",
    "std",
    "min",
    "max",
    "first_step",
    "last_step",
]


@dataclass(frozen=True)
class HistogramSnapshot:
    """Binned distribution of one (layer, phase, kind) capture window."""

    run_id: str
    layer_position: str
    phase: str
    kind: str
    bin_edges: tuple[float, ...]
    counts: tuple[int, ...]
    mean: float
    std: float
    min: float
    max: float
    first_step: int
    last_step: int

    def total_count(self) -> int:
        return sum(self.counts)


@dataclass(frozen=True)
class IcsProxyRecord:
    """Gradient drift across one update: L2 distance and cosine similarity."""

    step: int
    l2_delta: float
    cosine_similarity: float | None


def capture(model, layer_position: str, kind: str) -> np.ndarray:
    """Copy the targeted layer's parameter (or gradient) scalars.

    ``input`` targets the stem convolution; ``final`` targets the classifier
    head (weight and bias). The returned buffer never aliases model memory.
    """
    if layer_position == INPUT:
        tensors = [model.stem_conv.weight]
    elif layer_position == FINAL:
        tensors = [model.head.weight, model.head.bias]
    else:
        raise InputError(f"layer_position must be 'input' or 'final', got {layer_position!r}")
    if kind == WEIGHTS:
        parts = [t.data for t in tensors]
    elif kind == GRADIENTS:
        if any(t.grad is None for t in tensors):
            raise UsageError("gradient capture requires a completed backward pass")
        parts = [t.grad for t in tensors]
    else:
        raise InputError(f"kind must be 'weights' or 'gradients', got {kind!r}")
    return np.concatenate([p.reshape(-1).copy() for p in parts])


def histogram(values: np.ndarray, num_bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform bins over [min, max]; interior edges belong to the lower bin.

    A value equal to an interior edge counts toward the bin ending at that
    edge, and both extremes are included, so every value lands in exactly
    one bin. A constant buffer degenerates to one unit-width bin centered
    on the value.
    """
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise InputError("cannot histogram an empty buffer")
    if num_bins < 1:
        raise InputError(f"num_bins must be >= 1, got {num_bins}")
    lo, hi = float(values.min()), float(values.max())
    if lo == hi:
        edges = np.array([lo - 0.5, hi + 0.5])
        return edges, np.array([values.size], dtype=np.int64)
    edges = np.linspace(lo, hi, num_bins + 1)
    idx = np.clip(np.searchsorted(edges, values, side="left") - 1, 0, num_bins - 1)
    counts = np.bincount(idx, minlength=num_bins).astype(np.int64)
    return edges, counts


def make_snapshot(
    values: np.ndarray,
    run_id: str,
    layer_position: str,
    phase: str,
    kind: str,
    step_range: tuple[int, int],
    num_bins: int = DEFAULT_BINS,
) -> HistogramSnapshot:
    edges, counts = histogram(values, num_bins)
    return HistogramSnapshot(
        run_id=run_id,
        layer_position=layer_position,
        phase=phase,
        kind=kind,
        bin_edges=tuple(float(e) for e in edges),
        counts=tuple(int(c) for c in counts),
        mean=float(values.mean()),
        std=float(values.std()),
        min=float(values.min()),
        max=float(values.max()),
        first_step=step_range[0],
        last_step=step_range[1],
    )


def ics_proxy(
    grads_before: np.ndarray, grads_after: np.ndarray, step: int = 0
) -> IcsProxyRecord:
    """Compare a gradient vector before and after a parameter update."""
    before = np.asarray(grads_before, dtype=np.float64).reshape(-1)
    after = np.asarray(grads_after, dtype=np.float64).reshape(-1)
    if before.shape != after.shape:
        raise InputError(
            f"gradient buffers differ in length: {before.size} vs {after.size}"
        )
    l2_delta = float(np.linalg.norm(before - after))
    norm_b = float(np.linalg.norm(before))
    norm_a = float(np.linalg.norm(after))
    if norm_b == 0.0 or norm_a == 0.0:
        cosine = None
    elif np.array_equal(before, after):
        cosine = 1.0  # exact by definition; sqrt roundoff must not leak in
    elif np.array_equal(before, -after):
        cosine = -1.0
    else:
        cosine = float(np.dot(before, after) / (norm_b * norm_a))
        cosine = max(-1.0, min(1.0, cosine))
    return IcsProxyRecord(step=step, l2_delta=l2_delta, cosine_similarity=cosine)


class SnapshotRecorder:
    """Accumulates weight/gradient buffers over early/late step windows."""

    def __init__(self, early_window: tuple[int, int], late_window: tuple[int, int]):
        self.windows = {EARLY: early_window, LATE: late_window}
        self._buffers: dict[tuple[str, str, str], list[np.ndarray]] = {}

    @classmethod
    def for_epoch(cls, steps_in_epoch: int, width: int = 20) -> "SnapshotRecorder":
        """Windows covering the first and last ``width`` steps of an epoch."""
        early = (1, min(width, steps_in_epoch))
        late = (max(1, steps_in_epoch - width + 1), steps_in_epoch)
        return cls(early, late)

    def phases_for_step(self, step: int) -> tuple[str, ...]:
        """Windows can overlap on short epochs; a step may belong to both."""
        return tuple(
            phase
            for phase, (first, last) in self.windows.items()
            if first <= step <= last
        )

    def capture(self, model, layer_position: str, kind: str, step: int) -> np.ndarray:
        phases = self.phases_for_step(step)
        if not phases:
            raise UsageError(
                f"step {step} lies outside the configured windows {self.windows}"
            )
        buffer = capture(model, layer_position, kind)
        for phase in phases:
            self._buffers.setdefault((layer_position, phase, kind), []).append(buffer)
        return buffer

    def capture_all(self, model, step: int) -> dict[tuple[str, str], np.ndarray]:
        """Record weights and gradients of both observed layers at one step."""
        taken = {}
        for position in (INPUT, FINAL):
            for kind in (WEIGHTS, GRADIENTS):
                taken[(position, kind)] = self.capture(model, position, kind, step)
        return taken

    def snapshots(self, run_id: str, num_bins: int = DEFAULT_BINS) -> list[HistogramSnapshot]:
        out = []
        for position in (INPUT, FINAL):
            for phase in (EARLY, LATE):
                for kind in (WEIGHTS, GRADIENTS):
                    buffers = self._buffers.get((position, phase, kind))
                    if not buffers:
                        continue
                    out.append(
                        make_snapshot(
                            np.concatenate(buffers),
                            run_id,
                            position,
                            phase,
                            kind,
                            self.windows[phase],
                            num_bins,
                        )
                    )
        return out


def export_csv(snapshots: list[HistogramSnapshot], path: str | os.PathLike) -> None:
    """One row per bin plus one summary row per snapshot; stable columns."""
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            writer.writeheader()
            for snap in snapshots:
                ident = {
                    "run_id": snap.run_id,
                    "layer_position": snap.layer_position,
                    "phase": snap.phase,
                    "kind": snap.kind,
                }
                for lo, hi, count in zip(snap.bin_edges, snap.bin_edges[1:], snap.counts):
                    writer.writerow(
                        {**ident, "row": "bin", "bin_lo": repr(lo), "bin_hi": repr(hi), "count": count}
                    )
                writer.writerow(
                    {
                        **ident,
                        "row": "summary",
                        "count": snap.total_count(),
                        "mean": repr(snap.mean),
                        "std": repr(snap.std),
                        "min": repr(snap.min),
                        "max": repr(snap.max),
                        "first_step": snap.first_step,
                        "last_step": snap.last_step,
                    }
                )
    except OSError as exc:
        raise NormlabError(f"failed to write snapshot CSV {path}: {exc}") from exc


def read_snapshot_csv(path: str | os.PathLike) -> list[HistogramSnapshot]:
    """Rebuild snapshots from a file produced by :func:`export_csv`."""
    groups: dict[tuple, dict] = {}
    order: list[tuple] = []
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != CSV_COLUMNS:
                raise NormlabError(f"{path}: unexpected columns {reader.fieldnames}")
            for row in reader:
                key = (row["run_id"], row["layer_position"], row["phase"], row["kind"])
                if key not in groups:
                    groups[key] = {"edges": [], "counts": [], "summary": None}
                    order.append(key)
                if row["row"] == "bin":
                    groups[key]["edges"].append((float(row["bin_lo"]), float(row["bin_hi"])))
                    groups[key]["counts"].append(int(row["count"]))
                else:
                    groups[key]["summary"] = row
    except OSError as exc:
        raise NormlabError(f"failed to read snapshot CSV {path}: {exc}") from exc

    snapshots = []
    for key in order:
        run_id, position, phase, kind = key
        data = groups[key]
        summary = data["summary"]
        if summary is None or not data["edges"]:
            raise NormlabError(f"{path}: incomplete snapshot group {key}")
        edges = [lo for lo, _ in data["edges"]] + [data["edges"][-1][1]]
        snapshots.append(
            HistogramSnapshot(
                run_id=run_id,
                layer_position=position,
                phase=phase,
                kind=kind,
                bin_edges=tuple(edges),
                counts=tuple(data["counts"]),
                mean=float(summary["mean"]),
                std=float(summary["std"]),
                min=float(summary["min"]),
                max=float(summary["max"]),
                first_step=int(summary["first_step"]),
                last_step=int(summary["last_step"]),
            )
        )
    return snapshots
