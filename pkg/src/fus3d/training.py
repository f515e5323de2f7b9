"""Training and evaluation harness for the motion network.

Datasets are directories of scan containers. Epochs sample one random
window (s+2 consecutive frames) per training scan; sampling is driven
by a stateless per-epoch generator seeded with (seed, epoch), so a
resumed run continues bit-exactly without serialized RNG state.
Validation runs on fixed windows; the checkpoint tracks the best
validation motion-weighted error and carries optimizer state and
counters for exact resume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .losses import (
    LossWeights,
    correlation_loss,
    mmae,
    select_triplets,
    total_loss,
    triplet_loss,
)
from .metrics import MetricsReport, evaluate_trajectories
from .network import ModelConfig, MotionNetwork, load_model, save_model
from .optim import Adam
from .pose import accumulate, pose_to_transform
from .simulate import ScanSequence, read_scan

__all__ = [
    "TrainConfig",
    "ScanDataset",
    "TrainResult",
    "train",
    "window_motions",
    "validation_mmae",
    "validation_report",
    "constant_predictor_report",
    "infer_trajectory",
]

TRAIN_LOG_HEADER = "step,mmae,corr,triplet,total,lr"


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 4
    seq_len: int = 8  # s: each window holds s+1 frame pairs
    learning_rate: float = 1e-3
    lr_decay_factor: float = 0.8
    lr_decay_every: int = 100
    loss_weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    val_every_epochs: int = 10
    val_windows_per_scan: int = 3

    def __post_init__(self) -> None:
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch size must be positive")
        if self.seq_len < 1:
            raise ValueError("sequence length must be positive")


class ScanDataset:
    """An ordered collection of scans (sorted by directory name)."""

    def __init__(self, scans: list):
        if not scans:
            raise ValueError("dataset is empty")
        self.scans = list(scans)

    @classmethod
    def from_directory(cls, root) -> "ScanDataset":
        root = Path(root)
        dirs = sorted(p for p in root.iterdir() if (p / "frames.bin").exists())
        if not dirs:
            raise ValueError(f"no scan containers found under {root}")
        return cls([read_scan(p) for p in dirs])

    def __len__(self) -> int:
        return len(self.scans)

    def subjects(self) -> list:
        return sorted({s.subject for s in self.scans})

    def split_by_subject(self, val_fraction: float, seed: int):
        """Subject-disjoint split; subjects are shuffled deterministically."""
        subjects = self.subjects()
        if len(subjects) < 2:
            raise ValueError("need at least 2 subjects for a disjoint split")
        rng = np.random.default_rng((seed, 0xD15C))
        order = [subjects[i] for i in rng.permutation(len(subjects))]
        n_val = max(1, int(round(val_fraction * len(order))))
        if n_val >= len(order):
            raise ValueError("validation fraction leaves no training subjects")
        val_subjects = set(order[:n_val])
        train = [s for s in self.scans if s.subject not in val_subjects]
        val = [s for s in self.scans if s.subject in val_subjects]
        return ScanDataset(train), ScanDataset(val)


def window_motions(scan: ScanSequence, start: int, pairs: int) -> np.ndarray:
    """True relative motions (pairs, 6) for frames [start, start+pairs]."""
    rel = scan.truth_relative_poses()
    return np.stack([rel[i].as_array() for i in range(start, start + pairs)])


def _epoch_batches(train_scans, config: TrainConfig, epoch: int):
    """Deterministic batches for one epoch: a window per scan, shuffled."""
    window = config.seq_len + 2
    rng = np.random.default_rng((config.seed, epoch))
    order = rng.permutation(len(train_scans))
    starts = []
    for idx in order:
        scan = train_scans[idx]
        if scan.n_frames < window:
            raise ValueError(
                f"scan with {scan.n_frames} frames is shorter than a "
                f"{window}-frame window"
            )
        starts.append(int(rng.integers(0, scan.n_frames - window + 1)))
    batches = []
    for pos in range(0, len(order), config.batch_size):
        chunk = list(zip(order[pos : pos + config.batch_size],
                         starts[pos : pos + config.batch_size]))
        batches.append(chunk)
    return batches


def _batch_loss(model: MotionNetwork, scans, batch, config: TrainConfig):
    window = config.seq_len + 2
    frames = np.stack([scans[i].frames[s : s + window] for i, s in batch])
    truth = np.stack(
        [window_motions(scans[i], s, config.seq_len + 1) for i, s in batch]
    )
    out = model.forward_window(frames)
    m_terms, c_terms, t_terms = [], [], []
    for b in range(len(batch)):
        m_terms.append(mmae(truth[b], out["fused"][b],
                            epsilon=config.loss_weights.epsilon))
        c_terms.append(correlation_loss(truth[b], out["fused"][b]))
        emb = out["embeddings"][b]
        hinges = [
            triplet_loss(emb[a], emb[p], emb[n])
            for a, p, n in select_triplets(None, truth[b])
        ]
        t_terms.append(T.tensor_mean(T.stack(hinges)))
    parts = (
        T.tensor_mean(T.stack(m_terms)),
        T.tensor_mean(T.stack(c_terms)),
        T.tensor_mean(T.stack(t_terms)),
    )
    return total_loss(parts, config.loss_weights), parts


def _val_windows(scan: ScanSequence, config: TrainConfig):
    """Fixed, evenly spaced validation windows."""
    window = config.seq_len + 2
    last = scan.n_frames - window
    count = min(config.val_windows_per_scan, last + 1)
    return sorted({int(round(p)) for p in np.linspace(0, last, count)})


def validation_mmae(model: MotionNetwork, val_scans, config: TrainConfig) -> float:
    """Mean motion-weighted error over the fixed validation windows."""
    values = []
    with T.no_grad():
        for scan in val_scans:
            for start in _val_windows(scan, config):
                frames = scan.frames[start : start + config.seq_len + 2]
                truth = window_motions(scan, start, config.seq_len + 1)
                out = model.forward_window(frames[None])
                values.append(
                    mmae(truth, out["fused"][0],
                         epsilon=config.loss_weights.epsilon).item()
                )
    return float(np.mean(values))


@dataclass
class TrainResult:
    steps_done: int
    epochs_done: int
    best_val_mmae: float
    init_val_mmae: float
    final_val_mmae: float
    log_rows: list


def train(model: MotionNetwork, train_scans, val_scans, config: TrainConfig,
          log_path=None, checkpoint_path=None,
          resume_extra: dict | None = None) -> TrainResult:
    """Run the training loop; returns summary statistics.

    ``resume_extra`` is the non-parameter record dict of a checkpoint
    produced by this function (optimizer moments plus counters); model
    parameters must already be loaded.
    """
    train_scans = list(train_scans)
    val_scans = list(val_scans)
    optimizer = Adam(
        model.parameters(),
        lr=config.learning_rate,
        decay_factor=config.lr_decay_factor,
        decay_every=config.lr_decay_every,
    )
    step = 0
    epoch = 0
    batch_idx = 0
    best_val = math.inf
    if resume_extra:
        optimizer.load_state_arrays(resume_extra)
        step = int(np.asarray(resume_extra["_train.step"]).ravel()[0])
        epoch = int(np.asarray(resume_extra["_train.epoch"]).ravel()[0])
        batch_idx = int(np.asarray(resume_extra["_train.batch_idx"]).ravel()[0])
        best_val = float(np.asarray(resume_extra["_train.best_val"]).ravel()[0])

    init_val = validation_mmae(model, val_scans, config)

    log_rows = []
    log_handle = None
    if log_path is not None:
        mode = "a" if resume_extra else "w"
        log_handle = open(log_path, mode, encoding="utf-8", newline="\n")
        if not resume_extra:
            log_handle.write(TRAIN_LOG_HEADER + "\n")

    def save(best: bool) -> None:
        if checkpoint_path is None:
            return
        extra = optimizer.state_arrays()
        extra["_train.step"] = np.array(float(step))
        extra["_train.epoch"] = np.array(float(epoch))
        extra["_train.batch_idx"] = np.array(float(batch_idx))
        extra["_train.best_val"] = np.array(best_val)
        target = Path(checkpoint_path)
        save_model(target, model, extra_arrays=extra)
        if best:
            save_model(target.with_name("best_" + target.name), model)

    final_val = init_val
    try:
        while step < config.steps:
            optimizer.set_epoch(epoch)
            batches = _epoch_batches(train_scans, config, epoch)
            while batch_idx < len(batches) and step < config.steps:
                loss, parts = _batch_loss(
                    model, train_scans, batches[batch_idx], config
                )
                value = loss.item()
                if not math.isfinite(value):
                    raise FloatingPointError(
                        f"non-finite training loss at step {step}: {value}"
                    )
                model.zero_grad()
                T.backward(loss)
                optimizer.step()
                step += 1
                batch_idx += 1
                row = (step, parts[0].item(), parts[1].item(),
                       parts[2].item(), value, optimizer.lr)
                log_rows.append(row)
                if log_handle is not None:
                    log_handle.write(
                        ",".join(repr(v) for v in row) + "\n"
                    )
            if batch_idx >= len(batches):
                epoch += 1
                batch_idx = 0
            if epoch % config.val_every_epochs == 0 or step >= config.steps:
                final_val = validation_mmae(model, val_scans, config)
                if final_val < best_val:
                    best_val = final_val
                    save(best=True)
        save(best=False)
    finally:
        if log_handle is not None:
            log_handle.close()

    return TrainResult(
        steps_done=step,
        epochs_done=epoch,
        best_val_mmae=best_val,
        init_val_mmae=init_val,
        final_val_mmae=final_val,
        log_rows=log_rows,
    )


# -- evaluation helpers -----------------------------------------------------------

def infer_trajectory(model: MotionNetwork, scan: ScanSequence):
    """Predicted relative poses and the accumulated trajectory for a scan."""
    rel_poses, _ = model.infer_scan(scan.frames)
    trajectory = accumulate([pose_to_transform(p) for p in rel_poses])
    return rel_poses, trajectory


def scan_report(model: MotionNetwork, scan: ScanSequence) -> MetricsReport:
    _, trajectory = infer_trajectory(model, scan)
    report, _ = evaluate_trajectories(scan.truth, trajectory, scan.geometry)
    return report


def validation_report(model: MotionNetwork, val_scans) -> dict:
    """Per-scan and mean metrics of a model over validation scans."""
    per_scan = []
    for scan in val_scans:
        report = scan_report(model, scan)
        per_scan.append(report.as_json_dict())
    mean = {
        key: float(np.mean([r[key] for r in per_scan]))
        for key in per_scan[0]
    }
    return {"per_scan": per_scan, "mean": mean}


def constant_predictor_report(motion: np.ndarray, scans) -> dict:
    """Metrics of a constant-motion predictor (zero or dataset mean)."""
    pose_step = np.asarray(motion, dtype=float)
    per_scan = []
    for scan in scans:
        from .pose import PoseVector

        rel = [PoseVector.from_array(pose_step)] * (scan.n_frames - 1)
        trajectory = accumulate([pose_to_transform(p) for p in rel])
        report, _ = evaluate_trajectories(scan.truth, trajectory, scan.geometry)
        per_scan.append(report.as_json_dict())
    mean = {
        key: float(np.mean([r[key] for r in per_scan]))
        for key in per_scan[0]
    }
    return {"per_scan": per_scan, "mean": mean}


def mean_training_motion(train_scans) -> np.ndarray:
    """Component-wise mean relative motion over a set of scans."""
    rows = []
    for scan in train_scans:
        rows.extend(p.as_array() for p in scan.truth_relative_poses())
    return np.mean(rows, axis=0)
