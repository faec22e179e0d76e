"""Segment aggregation, metrics, and experiment-grid bookkeeping.

Track-level predictions are the arithmetic mean of segment-level class
probabilities. Log loss is the mean negative log of the true-class
probability (clamped to [1e-15, 1]); F1 is macro-averaged with classes
absent from both truths and predictions contributing zero.
"""

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from . import dsp
from .errors import InvalidInputError
from .models import COMBO_ORDER, canonical_combo, concat_embeddings
from .nn import softmax

PROB_FLOOR = 1e-15


@dataclass
class TrackPrediction:
    track_id: str
    segment_probs: np.ndarray  # (n_segments, n_classes)
    aggregated: np.ndarray     # (n_classes,)


@dataclass
class ResultRow:
    task_combo: str
    variant: str  # STN | MTN | wSTN
    log_loss: float
    f1: float
    n_params: int
    seed: int


def aggregate_segments(segment_probs: np.ndarray) -> np.ndarray:
    """Mean of segment probability vectors; renormalized only if the mean
    drifts from unit mass by more than 1e-9."""
    probs = np.asarray(segment_probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] < 1:
        raise InvalidInputError("need at least one segment distribution")
    if (probs < 0).any() or np.abs(probs.sum(axis=1) - 1.0).max() > 1e-6:
        raise InvalidInputError("segment rows are not probability distributions")
    agg = probs.mean(axis=0)
    drift = abs(agg.sum() - 1.0)
    if drift > 1e-9:
        agg = agg / agg.sum()
    return agg


def predict_track(mlp, source_nets: dict, track_id: str,
                  mel: np.ndarray) -> TrackPrediction:
    """Tiled segments -> per-segment MLP probabilities -> aggregated vector."""
    segments = np.stack(dsp.segment_windows(mel, "tiled")).astype(np.float32)
    feats = concat_embeddings(source_nets, segments)
    probs = softmax(mlp.forward(feats, "g", train=False))
    return TrackPrediction(track_id=track_id,
                           segment_probs=probs.astype(np.float64),
                           aggregated=aggregate_segments(probs))


def log_loss(probs: np.ndarray, truths: np.ndarray) -> float:
    """Mean -ln p[truth] over tracks, p clamped to [1e-15, 1]."""
    probs = np.asarray(probs, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.int64)
    if probs.ndim != 2 or truths.shape != (probs.shape[0],):
        raise InvalidInputError(f"shape mismatch: {probs.shape} vs {truths.shape}")
    if truths.size and (truths.min() < 0 or truths.max() >= probs.shape[1]):
        raise InvalidInputError("truth label out of range")
    p = np.clip(probs[np.arange(len(truths)), truths], PROB_FLOOR, 1.0)
    return float(-np.log(p).mean())


def f1_score(probs: np.ndarray, truths: np.ndarray) -> float:
    """Macro F1 over all classes; predicted class is the argmax of the
    aggregated probabilities with ties to the lowest index."""
    probs = np.asarray(probs, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.int64)
    if probs.ndim != 2 or truths.shape != (probs.shape[0],):
        raise InvalidInputError(f"shape mismatch: {probs.shape} vs {truths.shape}")
    n_classes = probs.shape[1]
    if truths.size and (truths.min() < 0 or truths.max() >= n_classes):
        raise InvalidInputError("truth label out of range")
    preds = np.argmax(probs, axis=1)
    f1s = np.zeros(n_classes)
    for c in range(n_classes):
        tp = int(np.sum((preds == c) & (truths == c)))
        fp = int(np.sum((preds == c) & (truths != c)))
        fn = int(np.sum((preds != c) & (truths == c)))
        denom = 2 * tp + fp + fn
        f1s[c] = (2.0 * tp / denom) if denom else 0.0
    return float(f1s.mean())


def evaluate_tracks(mlp, source_nets: dict, tracks: list):
    """Metrics over a list of TrackData, returning (log_loss, f1, predictions)."""
    preds = [predict_track(mlp, source_nets, t.track_id, t.mel) for t in tracks]
    probs = np.stack([p.aggregated for p in preds])
    truths = np.array([t.labels["g"] for t in tracks], dtype=np.int64)
    return log_loss(probs, truths), f1_score(probs, truths), preds


def enumerate_combos(tasks: str = COMBO_ORDER) -> list:
    """All non-empty task subsets as canonical combo strings (31 for 5 tasks)."""
    ids = [t for t in COMBO_ORDER if t in set(tasks)]
    if len(ids) != len(set(tasks)):
        raise InvalidInputError(f"unknown tasks in {tasks!r}")
    combos = []
    for r in range(1, len(ids) + 1):
        combos.extend("".join(c) for c in combinations(ids, r))
    return combos


def enumerate_grid_cases(tasks: str = COMBO_ORDER) -> list:
    """Feature-learning cases: every combo under both the separate-network
    and shared-network regime (62 for 5 tasks). For single-task combos the
    shared case degenerates to the separate one and is flagged so the
    runner trains it only once."""
    cases = []
    for combo in enumerate_combos(tasks):
        cases.append({"task_combo": combo, "variant": "STN",
                      "degenerate": False})
        cases.append({"task_combo": combo, "variant": "MTN",
                      "degenerate": len(combo) < 2})
    return cases


def summarize_with_without(rows: list, task: str = "g") -> dict:
    """Mean metrics over combos containing vs. excluding a task, per variant."""
    out = {}
    for with_task in (True, False):
        for variant in ("STN", "MTN"):
            sel = [r for r in rows
                   if (task in r.task_combo) == with_task and r.variant == variant]
            key = f"{'with' if with_task else 'without'}_{task}_{variant}"
            if sel:
                out[key] = {"log_loss": float(np.mean([r.log_loss for r in sel])),
                            "f1": float(np.mean([r.f1 for r in sel])),
                            "n": len(sel)}
    return out


def results_to_csv(rows: list) -> str:
    """Render result rows in the stable CSV schema (UTF-8, LF)."""
    lines = ["task_combo,variant,log_loss,f1,n_params,seed"]
    for r in rows:
        lines.append(f"{r.task_combo},{r.variant},{r.log_loss!r},{r.f1!r},"
                     f"{r.n_params},{r.seed}")
    return "\n".join(lines) + "\n"


def parse_results_csv(text: str) -> list:
    lines = [ln for ln in text.split("\n") if ln]
    header = "task_combo,variant,log_loss,f1,n_params,seed"
    if not lines or lines[0] != header:
        raise InvalidInputError("unrecognized results CSV header")
    rows = []
    for ln in lines[1:]:
        combo, variant, ll, f1, n_params, seed = ln.split(",")
        rows.append(ResultRow(canonical_combo(combo), variant, float(ll),
                              float(f1), int(n_params), int(seed)))
    return rows
