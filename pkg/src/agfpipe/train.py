"""Dataset split and the three training loops.

Single-task nets see every training track once per epoch (shuffled, one
random 1-second crop per visit). The multi-task net draws one task per
mini-batch, uniformly by default, so a total budget of E epochs gives each
of T tasks about E/T effective epochs. The transfer MLP trains on frozen
per-segment embeddings with genre targets; source networks receive no
gradient by construction.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import dsp
from .errors import InvalidInputError
from .nn import Adam, softmax_cross_entropy
from .models import concat_embeddings
from .rng import rng_for


@dataclass
class TrainConfig:
    batch_size: int = 64
    lr: float = 0.001
    epochs_stn: int = 200
    epochs_mtn: int = 1000
    epochs_mlp: int = 50
    seed: int = 0
    task_schedule: str = "uniform"  # or "round_robin"

    def __post_init__(self):
        if min(self.batch_size, self.epochs_stn, self.epochs_mtn, self.epochs_mlp) < 1:
            raise InvalidInputError("epochs and batch size must be positive")
        if self.lr < 0:
            raise InvalidInputError("learning rate must be non-negative")


@dataclass
class SplitSpec:
    train_ids: list
    valid_ids: list


@dataclass
class TrackData:
    track_id: str
    mel: np.ndarray        # (128, n_frames) dB mel spectrogram
    labels: dict           # task id -> class index


@dataclass
class TrainHistory:
    rows: list = field(default_factory=list)        # (epoch, task, mean_loss)
    batch_log: list = field(default_factory=list)   # (batch_idx, task, loss)
    used_track_ids: set = field(default_factory=set)

    def losses_for(self, task):
        return [loss for _, t, loss in self.rows if t == task]


def stratified_split(track_genres: dict, ratio: float = 0.85,
                     rng: np.random.Generator = None) -> SplitSpec:
    """Per-genre shuffled partition; rounding favors the training side.

    Genres with fewer than 2 tracks cannot appear on both sides; they go to
    training with a warning.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if not track_genres:
        raise InvalidInputError("no tracks to split")
    by_genre = {}
    for tid in sorted(track_genres):
        by_genre.setdefault(track_genres[tid], []).append(tid)

    train_ids, valid_ids = [], []
    for genre in sorted(by_genre):
        ids = by_genre[genre]
        if len(ids) < 2:
            warnings.warn(f"genre {genre} has {len(ids)} track(s); "
                          "cannot stratify, assigning to training")
            train_ids.extend(ids)
            continue
        order = rng.permutation(len(ids))
        n_train = math.ceil(len(ids) * ratio)
        n_train = min(n_train, len(ids) - 1)  # keep at least one validation track
        shuffled = [ids[i] for i in order]
        train_ids.extend(shuffled[:n_train])
        valid_ids.extend(shuffled[n_train:])
    return SplitSpec(train_ids=sorted(train_ids), valid_ids=sorted(valid_ids))


def plan_task_schedule(tasks, n_batches: int, rng: np.random.Generator,
                       mode: str = "uniform") -> list:
    """Task to train on for each of n_batches mini-batches."""
    tasks = sorted(tasks)
    if mode == "uniform":
        idx = rng.integers(0, len(tasks), size=n_batches)
        return [tasks[i] for i in idx]
    if mode == "round_robin":
        return [tasks[i % len(tasks)] for i in range(n_batches)]
    raise InvalidInputError(f"unknown task schedule {mode!r}")


def _check_labels(tracks, tasks):
    for t in tracks:
        for task in tasks:
            if task not in t.labels:
                raise InvalidInputError(f"track {t.track_id!r} missing label for task {task!r}")


def _crop_batch(tracks, rng):
    segs = [dsp.segment_windows(t.mel, "random_crop", rng)[0] for t in tracks]
    return np.stack(segs)[:, None, :, :].astype(np.float32)


def train_stn(net, task: str, tracks: list, config: TrainConfig,
              rng: np.random.Generator = None) -> TrainHistory:
    """Train a single-task net; one crop per track per epoch."""
    _check_labels(tracks, [task])
    if rng is None:
        rng = rng_for(config.seed, "train_stn", task)
    adam = Adam(lr=config.lr)
    history = TrainHistory()
    n = len(tracks)
    batch_idx = 0
    for epoch in range(config.epochs_stn):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for s in range(0, n, config.batch_size):
            chunk = [tracks[i] for i in order[s:s + config.batch_size]]
            x = _crop_batch(chunk, rng)
            y = np.array([t.labels[task] for t in chunk], dtype=np.int64)
            logits = net.forward(x, task, train=True, rng=rng)
            loss, dlogits = softmax_cross_entropy(logits, y)
            net.backward(dlogits, task)
            adam.step(net.named_params(task), net.named_grads(task))
            net.clear_grads()
            history.batch_log.append((batch_idx, task, loss))
            history.used_track_ids.update(t.track_id for t in chunk)
            total += loss * len(chunk)
            count += len(chunk)
            batch_idx += 1
        history.rows.append((epoch, task, total / count))
    return history


def train_mtn(net, tasks, tracks: list, config: TrainConfig,
              rng: np.random.Generator = None) -> TrainHistory:
    """Train a shared-trunk net; each mini-batch updates one drawn task.

    Only the shared block and the drawn branch receive gradients, so every
    other branch is bit-identical after the step.
    """
    tasks = sorted(tasks)
    _check_labels(tracks, tasks)
    if rng is None:
        rng = rng_for(config.seed, "train_mtn", "".join(tasks))
    n = len(tracks)
    batches_per_epoch = math.ceil(n / config.batch_size)
    schedule = plan_task_schedule(
        tasks, config.epochs_mtn * batches_per_epoch,
        rng_for(config.seed, "mtn_schedule", "".join(tasks)),
        mode=config.task_schedule)

    adam = Adam(lr=config.lr)
    history = TrainHistory()
    batch_idx = 0
    for epoch in range(config.epochs_mtn):
        order = rng.permutation(n)
        epoch_totals = {}
        for s in range(0, n, config.batch_size):
            task = schedule[batch_idx]
            chunk = [tracks[i] for i in order[s:s + config.batch_size]]
            x = _crop_batch(chunk, rng)
            y = np.array([t.labels[task] for t in chunk], dtype=np.int64)
            logits = net.forward(x, task, train=True, rng=rng)
            loss, dlogits = softmax_cross_entropy(logits, y)
            net.backward(dlogits, task)
            adam.step(net.named_params(task), net.named_grads(task))
            net.clear_grads()
            history.batch_log.append((batch_idx, task, loss))
            history.used_track_ids.update(t.track_id for t in chunk)
            tot = epoch_totals.setdefault(task, [0.0, 0])
            tot[0] += loss * len(chunk)
            tot[1] += len(chunk)
            batch_idx += 1
        for task in sorted(epoch_totals):
            tot = epoch_totals[task]
            history.rows.append((epoch, task, tot[0] / tot[1]))
    return history


def build_embedding_dataset(source_nets: dict, tracks: list,
                            batch_size: int = 256):
    """Tiled-segment embeddings (concatenated across source nets, sorted
    task order) plus genre targets and owning track ids."""
    _check_labels(tracks, ["g"])
    seg_arrays, targets, owners = [], [], []
    for t in tracks:
        for seg in dsp.segment_windows(t.mel, "tiled"):
            seg_arrays.append(seg)
            targets.append(t.labels["g"])
            owners.append(t.track_id)
    segments = np.stack(seg_arrays).astype(np.float32)
    embeds = []
    for s in range(0, len(segments), batch_size):
        embeds.append(concat_embeddings(source_nets, segments[s:s + batch_size]))
    return (np.concatenate(embeds, axis=0),
            np.array(targets, dtype=np.int64),
            owners)


def train_transfer(mlp, source_nets: dict, tracks: list, config: TrainConfig,
                   rng: np.random.Generator = None,
                   permute_labels: bool = False) -> TrainHistory:
    """Train the transfer MLP on frozen per-segment embeddings.

    permute_labels shuffles the genre targets (seeded) for leakage
    controls: a model fit to shuffled labels should validate near chance.
    """
    if rng is None:
        rng = rng_for(config.seed, "train_transfer")
    embeddings, targets, owners = build_embedding_dataset(source_nets, tracks)
    expected = mlp.branches["g"].layers[1].nin
    if embeddings.shape[1] != expected:
        raise InvalidInputError(
            f"embedding dim {embeddings.shape[1]} does not match MLP input {expected}")
    if permute_labels:
        targets = targets[rng.permutation(len(targets))]

    adam = Adam(lr=config.lr)
    history = TrainHistory()
    history.used_track_ids.update(owners)
    n = len(embeddings)
    batch_idx = 0
    for epoch in range(config.epochs_mlp):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for s in range(0, n, config.batch_size):
            sel = order[s:s + config.batch_size]
            x = embeddings[sel]
            y = targets[sel]
            logits = mlp.forward(x, "g", train=True, rng=rng)
            loss, dlogits = softmax_cross_entropy(logits, y)
            mlp.backward(dlogits, "g")
            adam.step(mlp.named_params(), mlp.named_grads())
            mlp.clear_grads()
            history.batch_log.append((batch_idx, "g", loss))
            total += loss * len(sel)
            count += len(sel)
            batch_idx += 1
        history.rows.append((epoch, "g", total / count))
    return history
