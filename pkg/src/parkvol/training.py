"""Dice-loss training, stratified folds, and the training loop."""

from __future__ import annotations

import copy
import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import DivergenceError, InvalidArgument
from .io import StructureMask
from .models.wrapper import SegmentationModel, save_checkpoint

DICE_EPS = 1e-6


def _as_array(x):
    if isinstance(x, StructureMask):
        return x.data
    if isinstance(x, torch.Tensor):
        return x
    return np.asarray(x)


def dice_loss(pred, target, eps: float = DICE_EPS):
    """Smoothed soft Dice loss: 1 - (2*sum(pred*target)+eps)/(sum(pred)+sum(target)+eps).

    Accepts numpy arrays (returns float) or torch tensors (returns a scalar
    tensor, differentiable w.r.t. pred)."""
    p = _as_array(pred)
    t = _as_array(target)
    if tuple(p.shape) != tuple(t.shape):
        raise InvalidArgument(f"shape mismatch: pred {tuple(p.shape)} vs target {tuple(t.shape)}")
    if isinstance(p, torch.Tensor) or isinstance(t, torch.Tensor):
        p = p if isinstance(p, torch.Tensor) else torch.as_tensor(p)
        t = t if isinstance(t, torch.Tensor) else torch.as_tensor(t)
        t = t.to(p.dtype)
        num = 2.0 * (p * t).sum() + eps
        den = p.sum() + t.sum() + eps
        return 1.0 - num / den
    t = t.astype(np.float64)
    if ((t != 0) & (t != 1)).any():
        raise InvalidArgument("target mask must be binary")
    p = p.astype(np.float64)
    num = 2.0 * float((p * t).sum()) + eps
    den = float(p.sum()) + float(t.sum()) + eps
    return 1.0 - num / den


@dataclass
class TrainSpec:
    """Training protocol knobs. Exactly one of epochs/iterations is the budget."""

    learning_rate: float = 1e-4
    batch_size: int = 1
    epochs: int | None = None
    iterations: int | None = None
    seed: int = 0
    patience: int | None = None  # early stop after this many epochs without improvement
    min_delta: float = 1e-4
    stop_loss: float | None = None  # stop once mean epoch loss falls below

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InvalidArgument("learning_rate must be > 0")
        if self.batch_size < 1:
            raise InvalidArgument("batch_size must be >= 1")
        if (self.epochs is None) == (self.iterations is None):
            raise InvalidArgument("set exactly one of epochs or iterations")
        budget = self.epochs if self.epochs is not None else self.iterations
        if budget < 0:
            raise InvalidArgument("budget must be >= 0")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "iterations": self.iterations,
            "seed": self.seed,
            "patience": self.patience,
            "min_delta": self.min_delta,
            "stop_loss": self.stop_loss,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainSpec":
        return cls(**d)


@dataclass
class FoldAssignment:
    """Stratified partition of subject ids into k folds."""

    k: int
    folds: list[list[str]]
    counts: list[dict[str, int]] = field(default_factory=list)
    seed: int = 0

    def test_ids(self, fold: int) -> list[str]:
        return list(self.folds[fold])

    def train_ids(self, fold: int) -> list[str]:
        out: list[str] = []
        for i, ids in enumerate(self.folds):
            if i != fold:
                out.extend(ids)
        return out

    def fold_of(self, subject_id: str) -> int:
        for i, ids in enumerate(self.folds):
            if subject_id in ids:
                return i
        raise InvalidArgument(f"subject {subject_id!r} is not in any fold")

    def to_dict(self) -> dict:
        return {"k": self.k, "seed": self.seed, "folds": self.folds, "counts": self.counts}

    @classmethod
    def from_dict(cls, d: dict) -> "FoldAssignment":
        return cls(int(d["k"]), [list(f) for f in d["folds"]], d.get("counts", []), int(d.get("seed", 0)))


def _id_condition(item) -> tuple[str, str]:
    if isinstance(item, tuple):
        sid, cond = item
    else:
        sid, cond = item.id, item.condition
    cond = getattr(cond, "value", cond)
    return str(sid), str(cond)


def make_folds(cohort, k: int = 3, seed: int = 0) -> FoldAssignment:
    """Per-condition shuffle then round-robin assignment; per-condition
    counts across folds differ by at most one."""
    if k < 2:
        raise InvalidArgument("k must be >= 2")
    by_cond: dict[str, list[str]] = {}
    for item in cohort:
        sid, cond = _id_condition(item)
        by_cond.setdefault(cond, []).append(sid)
    for cond, ids in by_cond.items():
        if len(ids) < k:
            raise InvalidArgument(f"condition {cond} has {len(ids)} subjects, fewer than k={k}")
    rng = np.random.default_rng([int(seed), 0xF01D])
    folds: list[list[str]] = [[] for _ in range(k)]
    counts: list[dict[str, int]] = [dict() for _ in range(k)]
    for cond in sorted(by_cond):
        ids = sorted(by_cond[cond])
        rng.shuffle(ids)
        for i, sid in enumerate(ids):
            folds[i % k].append(sid)
            counts[i % k][cond] = counts[i % k].get(cond, 0) + 1
    return FoldAssignment(k, folds, counts, int(seed))


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    wall_seconds: float


def write_history_csv(history: list[EpochStats], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss", "wall_seconds"])
        for row in history:
            writer.writerow([row.epoch, f"{row.mean_loss:.8f}", f"{row.wall_seconds:.3f}"])
    tmp.replace(path)


def train(
    model: SegmentationModel,
    train_set,
    structure: str,
    spec: TrainSpec,
    checkpoint_path=None,
) -> tuple[SegmentationModel, list[EpochStats]]:
    """Minimize the Dice loss of ``model`` against the subjects' reference
    masks for ``structure`` with Adam (default decay constants).

    The budget is either whole passes over the train set (epochs) or a
    total step count (iterations); history carries one row per pass. On a
    NaN loss the parameters roll back to the end of the previous epoch,
    a checkpoint is written if a path was given, and DivergenceError is
    raised."""
    subjects = list(train_set)
    if not subjects:
        raise InvalidArgument("train_set is empty")
    for sub in subjects:
        if structure not in sub.reference_masks:
            raise InvalidArgument(f"subject {sub.id} lacks a reference mask for {structure}")
        if tuple(sub.volume.dims) != tuple(model.input_dims):
            raise InvalidArgument(
                f"subject {sub.id} dims {sub.volume.dims} do not match model {model.input_dims}"
            )

    vols = torch.stack(
        [torch.from_numpy(np.ascontiguousarray(s.volume.data, dtype=np.float32)) for s in subjects]
    ).unsqueeze(1)
    masks = torch.stack(
        [
            torch.from_numpy(s.reference_masks[structure].data.astype(np.float32))
            for s in subjects
        ]
    ).unsqueeze(1)

    n = len(subjects)
    budget_steps = spec.iterations
    max_epochs = spec.epochs
    if budget_steps is not None:
        max_epochs = int(np.ceil(budget_steps / max(n, 1))) if budget_steps > 0 else 0

    net = model.net
    opt = torch.optim.Adam(net.parameters(), lr=spec.learning_rate)
    gen = torch.Generator().manual_seed(int(spec.seed))
    history: list[EpochStats] = []
    best_loss = float("inf")
    stale = 0
    steps_done = 0
    snapshot = copy.deepcopy(net.state_dict())
    t_start = time.perf_counter()

    net.train()
    for epoch in range(max_epochs or 0):
        order = torch.randperm(n, generator=gen)
        losses = []
        for start in range(0, n, spec.batch_size):
            if budget_steps is not None and steps_done >= budget_steps:
                break
            idx = order[start : start + spec.batch_size]
            out = net(vols[idx])
            loss = dice_loss(out, masks[idx])
            if not torch.isfinite(loss):
                net.load_state_dict(snapshot)
                model.history_summary = _summary(history, diverged=True)
                if checkpoint_path is not None:
                    model.trained_structure = structure
                    save_checkpoint(model, checkpoint_path)
                raise DivergenceError(
                    f"loss became non-finite at epoch {epoch + 1}", history=history
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
            steps_done += 1
        if not losses:
            break
        mean_loss = float(np.mean(losses))
        history.append(EpochStats(epoch + 1, mean_loss, time.perf_counter() - t_start))
        snapshot = copy.deepcopy(net.state_dict())
        if mean_loss < best_loss - spec.min_delta:
            best_loss = mean_loss
            stale = 0
        else:
            stale += 1
        if spec.stop_loss is not None and mean_loss <= spec.stop_loss:
            break
        if spec.patience is not None and stale >= spec.patience:
            break
        if budget_steps is not None and steps_done >= budget_steps:
            break

    net.eval()
    model.trained_structure = structure
    model.history_summary = _summary(history)
    if checkpoint_path is not None:
        save_checkpoint(model, checkpoint_path)
    return model, history


def _summary(history: list[EpochStats], diverged: bool = False) -> dict:
    out = {
        "epochs": len(history),
        "final_loss": history[-1].mean_loss if history else None,
        "best_loss": min((h.mean_loss for h in history), default=None),
        "wall_seconds": history[-1].wall_seconds if history else 0.0,
    }
    if diverged:
        out["diverged"] = True
    return out
