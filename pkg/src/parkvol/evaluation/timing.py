"""Wall-clock benchmarking of per-structure segmentation."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidArgument, ModelStateError
from ..io import STRUCTURES
from ..models.wrapper import SegmentationModel, segment_structure


@dataclass
class TimingReport:
    """Per-structure and total inference seconds, mean ± std."""

    backbone: str
    repeats: int
    n_volumes: int
    per_structure: dict[str, dict[str, float]] = field(default_factory=dict)
    total: dict[str, float] = field(default_factory=dict)

    def rows(self) -> list[tuple[str, float, float]]:
        out = [
            (name, self.per_structure[name]["mean"], self.per_structure[name]["std"])
            for name in STRUCTURES
        ]
        out.append(("Total", self.total["mean"], self.total["std"]))
        return out

    def format_table(self) -> str:
        lines = [f"{'structure':<18}{self.backbone} (s)"]
        for name, mean, std in self.rows():
            lines.append(f"{name:<18}{mean:.4f}±{std:.4f}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "backbone": self.backbone,
            "repeats": self.repeats,
            "n_volumes": self.n_volumes,
            "per_structure": self.per_structure,
            "total": self.total,
        }


def measure_segmentation_time(
    models: dict[str, SegmentationModel],
    volumes,
    repeats: int = 3,
    backbone: str | None = None,
) -> TimingReport:
    """Time segment_structure for each structure's model over the volumes.

    Only the forward+binarize call is timed (monotonic clock); file I/O and
    tensor preparation outside the call do not count. Each (repeat, volume)
    pair contributes one sample per structure; the total row sums the six
    per-structure times within each pair."""
    if repeats < 1:
        raise InvalidArgument("repeats must be >= 1")
    volumes = list(volumes)
    if not volumes:
        raise InvalidArgument("need at least one volume")
    missing = [s for s in STRUCTURES if s not in models]
    if missing:
        raise InvalidArgument(f"missing models for structures: {missing}")
    for name, model in models.items():
        if model.trained_structure is None:
            raise ModelStateError(f"model for {name} is untrained")

    samples = {name: [] for name in STRUCTURES}
    totals = []
    for _ in range(repeats):
        for vol in volumes:
            subtotal = 0.0
            for name in STRUCTURES:
                t0 = time.perf_counter()
                segment_structure(models[name], vol)
                dt = time.perf_counter() - t0
                samples[name].append(dt)
                subtotal += dt
            totals.append(subtotal)

    report = TimingReport(
        backbone=backbone or next(iter(models.values())).backbone,
        repeats=repeats,
        n_volumes=len(volumes),
    )
    for name in STRUCTURES:
        arr = np.array(samples[name])
        report.per_structure[name] = {"mean": float(arr.mean()), "std": float(arr.std())}
    tot = np.array(totals)
    report.total = {"mean": float(tot.mean()), "std": float(tot.std())}
    return report
