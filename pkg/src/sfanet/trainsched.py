"""Sequential cluster training: fold phases with persistent weights, then
full-dataset fine-tuning, plus the base binary-classification loop.

The trainer is generic over any bundle whose module exposes
``forward_logits(batch) -> [B]``. Weights persist across phase boundaries;
optimizer state is reset at each boundary unless the config says otherwise.
Shuffling is seeded per (seed, phase, epoch) so interrupted runs replay
identically from their checkpoints.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .core import DecisionPolicy, ImageSample, ensure_pixels
from .datapipe import Fold, Manifest
from .errors import ConfigurationError
from .heads.bundle import (
    ModelBundle,
    load_checkpoint,
    save_bundle,
    split_checkpoint_tensors,
)

FULL_DATASET = "FULL"


@dataclass(frozen=True)
class Phase:
    """One schedule entry: a dataset reference and an epoch count."""

    dataset: str
    epochs: int


@dataclass(frozen=True)
class Schedule:
    """Fold phases in cluster order followed by one full-dataset phase."""

    phases: tuple[Phase, ...]

    def validate(self, k: Optional[int] = None) -> None:
        if len(self.phases) < 2:
            raise ConfigurationError("schedule needs at least one fold phase plus FULL")
        *fold_phases, last = self.phases
        if last.dataset != FULL_DATASET:
            raise ConfigurationError(f"final phase must be {FULL_DATASET}, got {last.dataset!r}")
        expected = [f"fold_{i}" for i in range(1, len(fold_phases) + 1)]
        actual = [p.dataset for p in fold_phases]
        if actual != expected:
            raise ConfigurationError(f"fold phases must be {expected}, got {actual}")
        if any(p.epochs < 1 for p in self.phases):
            raise ConfigurationError("every phase needs at least one epoch")
        if k is not None and len(fold_phases) != k:
            raise ConfigurationError(
                f"schedule has {len(fold_phases)} fold phases, expected k={k}"
            )

    @property
    def k(self) -> int:
        return len(self.phases) - 1

    @property
    def total_epochs(self) -> int:
        return sum(p.epochs for p in self.phases)

    def to_dict(self) -> dict:
        return {"phases": [{"dataset": p.dataset, "epochs": p.epochs} for p in self.phases]}

    @classmethod
    def from_dict(cls, d: dict) -> "Schedule":
        return cls(tuple(Phase(p["dataset"], p["epochs"]) for p in d["phases"]))


def make_schedule(k: int, epochs_per_phase: int, finetune_epochs: int) -> Schedule:
    """k fold phases of epochs_per_phase each, then one FULL fine-tune phase."""
    if k < 1 or epochs_per_phase < 1 or finetune_epochs < 1:
        raise ConfigurationError(
            f"schedule arguments must be >= 1, got k={k}, "
            f"epochs_per_phase={epochs_per_phase}, finetune_epochs={finetune_epochs}"
        )
    phases = [Phase(f"fold_{i}", epochs_per_phase) for i in range(1, k + 1)]
    phases.append(Phase(FULL_DATASET, finetune_epochs))
    schedule = Schedule(tuple(phases))
    schedule.validate(k=k)
    return schedule


@dataclass(frozen=True)
class TrainConfig:
    """Binary cross-entropy + Adam hyperparameters; seed fixed per run."""

    learning_rate: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.01
    batch_size: int = 32
    seed: int = 0
    epochs_per_phase: int = 3
    finetune_epochs: int = 3
    carry_optimizer_state: bool = False

    def validate(self) -> None:
        if self.learning_rate <= 0 or self.batch_size < 1:
            raise ConfigurationError("learning_rate and batch_size must be positive")
        if not (0 <= self.betas[0] < 1 and 0 <= self.betas[1] < 1):
            raise ConfigurationError(f"betas must lie in [0, 1), got {self.betas}")
        if self.weight_decay < 0:
            raise ConfigurationError("weight_decay must be non-negative")
        if self.epochs_per_phase < 1 or self.finetune_epochs < 1:
            raise ConfigurationError("epoch counts must be positive")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["betas"] = list(self.betas)
        return d


@dataclass(frozen=True)
class LabeledImages:
    """A fully materialized training set: stacked pixels plus 0/1 labels."""

    ids: tuple[str, ...]
    images: np.ndarray
    labels: np.ndarray

    @classmethod
    def from_samples(cls, samples: Sequence[ImageSample]) -> "LabeledImages":
        if not samples:
            raise ConfigurationError("dataset is empty")
        images = []
        labels = []
        for s in samples:
            if s.label is None:
                raise ConfigurationError(f"sample {s.id!r} has no label; cannot train on it")
            images.append(ensure_pixels(s))
            labels.append(s.label.to_int())
        shapes = {img.shape for img in images}
        if len(shapes) != 1:
            raise ConfigurationError(f"samples disagree on image shape: {sorted(shapes)}")
        return cls(
            ids=tuple(s.id for s in samples),
            images=np.stack(images),
            labels=np.asarray(labels, dtype=np.int64),
        )

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class PhaseRecord:
    """Bookkeeping for one completed phase."""

    phase_index: int
    dataset: str
    epoch_losses: list[float]
    checkpoint_path: str
    start_weight_hash: str
    end_weight_hash: str
    val_metrics: Optional[dict] = None


def weight_hash(module: torch.nn.Module) -> str:
    """Order-independent digest of every weight tensor's exact bytes."""
    digest = hashlib.sha256()
    for name in sorted(module.state_dict()):
        tensor = module.state_dict()[name]
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().numpy().tobytes())
    return digest.hexdigest()


def derive_seed(seed: int, phase: int, epoch: int) -> int:
    """Stable per-(run, phase, epoch) seed for shuffling and dropout."""
    digest = hashlib.sha256(f"{seed}:{phase}:{epoch}".encode()).digest()
    return int.from_bytes(digest[:8], "little") % (2**63)


def _batch_tensor(images: np.ndarray, dtype: torch.dtype) -> torch.Tensor:
    arr = np.asarray(images, dtype=np.float32) / 255.0
    return torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous().to(dtype)


def _module_dtype(module: torch.nn.Module) -> torch.dtype:
    for p in module.parameters():
        return p.dtype
    return torch.float32


def _optimizer_arrays(
    optimizer: torch.optim.Optimizer, named: list[tuple[str, torch.nn.Parameter]]
) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    for name, param in named:
        state = optimizer.state.get(param)
        if not state:
            continue
        arrays[f"{name}.step"] = np.asarray([float(state["step"])])
        arrays[f"{name}.exp_avg"] = state["exp_avg"].detach().cpu().numpy().copy()
        arrays[f"{name}.exp_avg_sq"] = state["exp_avg_sq"].detach().cpu().numpy().copy()
    return arrays


def _restore_optimizer(
    optimizer: torch.optim.Optimizer,
    named: list[tuple[str, torch.nn.Parameter]],
    arrays: dict[str, np.ndarray],
) -> None:
    for name, param in named:
        key = f"{name}.step"
        if key not in arrays:
            continue
        optimizer.state[param] = {
            "step": torch.tensor(float(arrays[key][0])),
            "exp_avg": torch.from_numpy(arrays[f"{name}.exp_avg"].copy()).to(param.dtype),
            "exp_avg_sq": torch.from_numpy(arrays[f"{name}.exp_avg_sq"].copy()).to(param.dtype),
        }


def _train_one_epoch(
    module: torch.nn.Module,
    images: torch.Tensor,
    labels: torch.Tensor,
    optimizer: torch.optim.Optimizer,
    batch_size: int,
    epoch_seed: int,
) -> float:
    """One seeded pass; returns the sample-weighted mean batch loss."""
    n = images.shape[0]
    order = np.random.default_rng(epoch_seed).permutation(n)
    torch.manual_seed(epoch_seed)
    module.train()
    total = 0.0
    for start in range(0, n, batch_size):
        idx = torch.from_numpy(order[start : start + batch_size].copy())
        logits = module.forward_logits(images[idx])
        loss = F.binary_cross_entropy_with_logits(logits, labels[idx])
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        total += loss.item() * len(idx)
    return total / n


def evaluate_split(
    module: torch.nn.Module,
    data: LabeledImages,
    policy: DecisionPolicy,
    batch_size: int = 64,
) -> dict:
    """Validation loss and accuracy at the policy threshold."""
    dtype = _module_dtype(module)
    module.eval()
    losses = []
    correct = 0
    with torch.no_grad():
        for start in range(0, len(data), batch_size):
            chunk = slice(start, start + batch_size)
            batch = _batch_tensor(data.images[chunk], dtype)
            y = torch.from_numpy(data.labels[chunk]).to(dtype)
            logits = module.forward_logits(batch)
            losses.append(
                F.binary_cross_entropy_with_logits(logits, y).item() * len(y)
            )
            scores = torch.sigmoid(logits)
            predictions = (scores >= policy.threshold).to(torch.int64)
            correct += int((predictions == y.to(torch.int64)).sum())
    return {
        "val_loss": sum(losses) / len(data),
        "val_accuracy": correct / len(data),
    }


def _make_optimizer(module: torch.nn.Module, cfg: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.Adam(
        module.parameters(),
        lr=cfg.learning_rate,
        betas=cfg.betas,
        weight_decay=cfg.weight_decay,
    )


def _resolve_phase_dataset(
    ref: str, folds: Sequence[Fold], full: "Manifest | LabeledImages"
) -> LabeledImages:
    if ref == FULL_DATASET:
        if isinstance(full, LabeledImages):
            return full
        return LabeledImages.from_samples(full.samples)
    if not ref.startswith("fold_"):
        raise ConfigurationError(f"unknown dataset reference {ref!r}")
    index = int(ref.split("_", 1)[1]) - 1
    if not 0 <= index < len(folds):
        raise ConfigurationError(
            f"{ref!r} is out of range for {len(folds)} folds"
        )
    return LabeledImages.from_samples(folds[index].samples)


def checkpoint_name(model_name: str, phase_index: int, epoch: int) -> str:
    return f"{model_name}-phase{phase_index:02d}-epoch{epoch:02d}.ckpt"


def run_sequential(
    bundle: ModelBundle,
    folds: Sequence[Fold],
    full: "Manifest | LabeledImages",
    schedule: Schedule,
    cfg: TrainConfig,
    out_dir: "str | Path",
    val: Optional[LabeledImages] = None,
    policy: Optional[DecisionPolicy] = None,
    resume: bool = False,
) -> tuple[ModelBundle, list[PhaseRecord]]:
    """Execute the schedule phase by phase, carrying weights across boundaries.

    One checkpoint (weights + optimizer state) is written per epoch; ``resume``
    fast-forwards through checkpoints already on disk and continues after the
    last one found.
    """
    cfg.validate()
    schedule.validate(k=len(folds))
    policy = policy or DecisionPolicy()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "train_log.jsonl"

    # Resolve every phase's data up front so a bad reference fails before
    # any training happens.
    datasets = [
        _resolve_phase_dataset(phase.dataset, folds, full) for phase in schedule.phases
    ]

    dtype = _module_dtype(bundle.module)
    named_params = [(n, p) for n, p in bundle.module.named_parameters()]
    optimizer = _make_optimizer(bundle.module, cfg)
    records: list[PhaseRecord] = []

    with open(log_path, "a", encoding="utf-8") as log:
        for phase_index, (phase, data) in enumerate(
            zip(schedule.phases, datasets), start=1
        ):
            start_hash = weight_hash(bundle.module)
            if not cfg.carry_optimizer_state and phase_index > 1:
                optimizer = _make_optimizer(bundle.module, cfg)

            # Fast-forward over epochs whose checkpoints already exist.
            done_epochs = 0
            epoch_losses: list[float] = []
            if resume:
                for epoch in range(1, phase.epochs + 1):
                    ckpt = out_dir / checkpoint_name(bundle.name, phase_index, epoch)
                    if not ckpt.exists():
                        break
                    done_epochs = epoch
                if done_epochs:
                    ckpt = out_dir / checkpoint_name(bundle.name, phase_index, done_epochs)
                    tensors, meta = load_checkpoint(ckpt)
                    model_arrays, optim_arrays = split_checkpoint_tensors(tensors)
                    bundle.load_state_arrays(model_arrays)
                    _restore_optimizer(optimizer, named_params, optim_arrays)
                    epoch_losses = list(meta.get("epoch_losses", []))

            images = _batch_tensor(data.images, dtype)
            labels = torch.from_numpy(data.labels).to(dtype)
            for epoch in range(done_epochs + 1, phase.epochs + 1):
                loss = _train_one_epoch(
                    bundle.module,
                    images,
                    labels,
                    optimizer,
                    cfg.batch_size,
                    derive_seed(cfg.seed, phase_index, epoch),
                )
                epoch_losses.append(loss)
                ckpt = out_dir / checkpoint_name(bundle.name, phase_index, epoch)
                save_bundle(
                    bundle,
                    ckpt,
                    extra_meta={
                        "phase": phase_index,
                        "dataset": phase.dataset,
                        "epoch": epoch,
                        "epoch_losses": epoch_losses,
                        "train_config": cfg.to_dict(),
                    },
                    optimizer_arrays=_optimizer_arrays(optimizer, named_params),
                )
                entry = {
                    "phase": phase_index,
                    "dataset": phase.dataset,
                    "epoch": epoch,
                    "loss": loss,
                }
                log.write(json.dumps(entry, sort_keys=True) + "\n")

            val_metrics = None
            if val is not None:
                val_metrics = evaluate_split(bundle.module, val, policy)
                log.write(
                    json.dumps(
                        {"phase": phase_index, "dataset": phase.dataset, **val_metrics},
                        sort_keys=True,
                    )
                    + "\n"
                )
            records.append(
                PhaseRecord(
                    phase_index=phase_index,
                    dataset=phase.dataset,
                    epoch_losses=epoch_losses,
                    checkpoint_path=str(
                        out_dir / checkpoint_name(bundle.name, phase_index, phase.epochs)
                    ),
                    start_weight_hash=start_hash,
                    end_weight_hash=weight_hash(bundle.module),
                    val_metrics=val_metrics,
                )
            )
    return bundle, records


def train_epochs(
    bundle: ModelBundle,
    data: LabeledImages,
    epochs: int,
    cfg: TrainConfig,
    out_dir: Optional["str | Path"] = None,
    val: Optional[LabeledImages] = None,
    policy: Optional[DecisionPolicy] = None,
) -> tuple[ModelBundle, list[float]]:
    """Plain single-dataset training loop (no fold schedule)."""
    cfg.validate()
    if epochs < 1:
        raise ConfigurationError(f"epochs must be positive, got {epochs}")
    policy = policy or DecisionPolicy()
    dtype = _module_dtype(bundle.module)
    images = _batch_tensor(data.images, dtype)
    labels = torch.from_numpy(data.labels).to(dtype)
    optimizer = _make_optimizer(bundle.module, cfg)
    losses = []
    log = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log = open(out_dir / "train_log.jsonl", "a", encoding="utf-8")
    try:
        for epoch in range(1, epochs + 1):
            loss = _train_one_epoch(
                bundle.module,
                images,
                labels,
                optimizer,
                cfg.batch_size,
                derive_seed(cfg.seed, 1, epoch),
            )
            losses.append(loss)
            entry: dict = {"phase": 1, "dataset": "train", "epoch": epoch, "loss": loss}
            if val is not None:
                entry.update(evaluate_split(bundle.module, val, policy))
            if log is not None:
                log.write(json.dumps(entry, sort_keys=True) + "\n")
    finally:
        if log is not None:
            log.close()
    return bundle, losses
