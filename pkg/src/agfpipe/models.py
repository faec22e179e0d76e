"""Model builders: single-task nets, the shared-trunk multi-task net, the
width-scaled single-task control, and the transfer MLP.

The encoder is a fixed 7-conv stack over 128x43 single-channel segments:

    conv 5x5 (16) + ELU      -> 128x43x16
    maxpool 2x1              ->  64x43x16
    conv 3x3 (32) + BN + ELU ->  64x43x32
    maxpool 2x2, dropout 0.1 ->  32x21x32
    conv 3x3 (64) + ELU      ->  32x21x64
    maxpool 2x2              ->  16x10x64
    conv 3x3 (64) + BN + ELU ->  16x10x64
    maxpool 2x2, dropout 0.1 ->   8x5x64
    conv 3x3 (128) + ELU     ->   8x5x128
    maxpool 2x2              ->   4x2x128
    conv 3x3 (256) + ELU     ->   4x2x256
    conv 1x1 (256) + BN + ELU->   4x2x256
    global average pool + BN ->   256
    dense (256) + BN + ELU   ->   256
    dropout 0.5              ->   256
    dense head               ->   n_classes

Transfer embeddings are the 256-d activation after the dense block's ELU,
before the 0.5 dropout. The multi-task variant shares exactly the first
conv + maxpool block across task branches. Width scaling multiplies every
channel count and the dense width by one global factor (heads excluded).
"""

import numpy as np

from .errors import InvalidInputError
from .nn import Sequential, MultiHeadNet

TASK_IDS = ("g", "m", "d", "e", "s")
COMBO_ORDER = "gsedm"  # canonical task order for combo strings
N_GENRES = 16
N_AGF_GROUPS = 40
BASE_CHANNELS = (16, 32, 64, 64, 128, 256, 256)
BASE_DENSE = 256
MLP_HIDDEN = 1024
SEGMENT_SHAPE = (128, 43)


def canonical_combo(tasks) -> str:
    """Normalize a task collection to its canonical combo string."""
    tasks = set(tasks)
    bad = tasks - set(TASK_IDS)
    if bad:
        raise InvalidInputError(f"unknown tasks {sorted(bad)}")
    return "".join(t for t in COMBO_ORDER if t in tasks)


def task_class_count(task: str, n_genres: int = N_GENRES,
                     n_groups: int = N_AGF_GROUPS) -> int:
    if task == "g":
        return n_genres
    if task in TASK_IDS:
        return n_groups
    raise InvalidInputError(f"unknown task {task!r}")


def scaled_widths(scale: float):
    channels = tuple(max(1, round(c * scale)) for c in BASE_CHANNELS)
    dense = max(1, round(BASE_DENSE * scale))
    return channels, dense


def _encoder_specs(channels, dense, n_classes):
    """Layer spec list for the full encoder stack (one branch)."""
    c1, c2, c3, c4, c5, c6, c7 = channels
    return [
        {"kind": "conv2d", "name": "conv1", "cin": 1, "cout": c1, "kh": 5, "kw": 5},
        {"kind": "elu", "name": "elu1"},
        {"kind": "maxpool2d", "name": "pool1", "ph": 2, "pw": 1},
        {"kind": "conv2d", "name": "conv2", "cin": c1, "cout": c2, "kh": 3, "kw": 3},
        {"kind": "batchnorm", "name": "bn2", "n": c2},
        {"kind": "elu", "name": "elu2"},
        {"kind": "maxpool2d", "name": "pool2", "ph": 2, "pw": 2},
        {"kind": "dropout", "name": "drop2", "p": 0.1},
        {"kind": "conv2d", "name": "conv3", "cin": c2, "cout": c3, "kh": 3, "kw": 3},
        {"kind": "elu", "name": "elu3"},
        {"kind": "maxpool2d", "name": "pool3", "ph": 2, "pw": 2},
        {"kind": "conv2d", "name": "conv4", "cin": c3, "cout": c4, "kh": 3, "kw": 3},
        {"kind": "batchnorm", "name": "bn4", "n": c4},
        {"kind": "elu", "name": "elu4"},
        {"kind": "maxpool2d", "name": "pool4", "ph": 2, "pw": 2},
        {"kind": "dropout", "name": "drop4", "p": 0.1},
        {"kind": "conv2d", "name": "conv5", "cin": c4, "cout": c5, "kh": 3, "kw": 3},
        {"kind": "elu", "name": "elu5"},
        {"kind": "maxpool2d", "name": "pool5", "ph": 2, "pw": 2},
        {"kind": "conv2d", "name": "conv6", "cin": c5, "cout": c6, "kh": 3, "kw": 3},
        {"kind": "elu", "name": "elu6"},
        {"kind": "conv2d", "name": "conv7", "cin": c6, "cout": c7, "kh": 1, "kw": 1},
        {"kind": "batchnorm", "name": "bn7", "n": c7},
        {"kind": "elu", "name": "elu7"},
        {"kind": "global_avg_pool", "name": "gap"},
        {"kind": "batchnorm", "name": "bn_gap", "n": c7},
        {"kind": "dense", "name": "dense", "nin": c7, "nout": dense},
        {"kind": "batchnorm", "name": "bn_dense", "n": dense},
        {"kind": "elu", "name": "elu_dense"},
        {"kind": "dropout", "name": "drop_dense", "p": 0.5},
        {"kind": "dense", "name": "head", "nin": dense, "nout": n_classes},
    ]


SHARED_BLOCK_LEN = 3  # conv1 + elu1 + pool1


def _embed_index(specs):
    """Layer count up to and including the ELU after the dense block."""
    for i, d in enumerate(specs):
        if d["name"] == "elu_dense":
            return i + 1
    raise InvalidInputError("stack has no dense block")


def count_params_in_specs(specs) -> int:
    """Closed-form trainable parameter count for a spec list."""
    total = 0
    for d in specs:
        if d["kind"] == "conv2d":
            total += d["cout"] * d["cin"] * d["kh"] * d["kw"] + d["cout"]
        elif d["kind"] == "dense":
            total += d["nin"] * d["nout"] + d["nout"]
        elif d["kind"] == "batchnorm":
            total += 2 * d["n"]
    return total


def build_stn(task: str, n_classes: int = None, width_scale: float = 1.0,
              rng=None, dtype=np.float32) -> MultiHeadNet:
    """Single-task network: the full encoder stack under one head."""
    if n_classes is None:
        n_classes = task_class_count(task)
    rng = rng if rng is not None else np.random.default_rng(0)
    channels, dense = scaled_widths(width_scale)
    specs = _encoder_specs(channels, dense, n_classes)
    branch = Sequential.from_specs(specs, rng, dtype)
    return MultiHeadNet(
        shared=Sequential([], dtype=dtype),
        branches={task: branch},
        embed_index={task: _embed_index(specs)},
        n_classes={task: n_classes},
        meta={"variant": "stn", "width_scale": width_scale},
    )


def build_mtn(tasks, n_classes: dict = None, width_scale: float = 1.0,
              rng=None, dtype=np.float32) -> MultiHeadNet:
    """Multi-task network sharing only the first conv + maxpool block."""
    tasks = sorted(set(tasks))
    if len(tasks) < 2:
        raise InvalidInputError("a multi-task net needs at least 2 tasks")
    if n_classes is None:
        n_classes = {t: task_class_count(t) for t in tasks}
    rng = rng if rng is not None else np.random.default_rng(0)
    channels, dense = scaled_widths(width_scale)
    full = _encoder_specs(channels, dense, 1)
    shared = Sequential.from_specs(full[:SHARED_BLOCK_LEN], rng, dtype)
    branches = {}
    embed_index = {}
    for t in tasks:
        specs = _encoder_specs(channels, dense, n_classes[t])[SHARED_BLOCK_LEN:]
        branches[t] = Sequential.from_specs(specs, rng, dtype)
        embed_index[t] = _embed_index(specs)
    return MultiHeadNet(shared, branches, embed_index, n_classes,
                        meta={"variant": "mtn", "width_scale": width_scale})


def wstn_scale_for(reference_param_count: int, n_classes: int = N_GENRES,
                   tolerance: float = 0.01, hard_limit: float = 0.02):
    """Bisect the global width factor until the genre-only stack's parameter
    count is within `tolerance` of the reference. Returns (scale, count)."""

    def count(scale):
        channels, dense = scaled_widths(scale)
        return count_params_in_specs(_encoder_specs(channels, dense, n_classes))

    lo, hi = 0.01, 1.0
    while count(hi) < reference_param_count:
        hi *= 2.0
        if hi > 1024:
            raise InvalidInputError("reference parameter count out of range")
    best_scale, best_count = hi, count(hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        c = count(mid)
        if abs(c - reference_param_count) < abs(best_count - reference_param_count):
            best_scale, best_count = mid, c
        if c < reference_param_count:
            lo = mid
        else:
            hi = mid
    ratio = abs(best_count / reference_param_count - 1.0)
    if ratio > hard_limit:
        raise InvalidInputError(
            f"cannot match parameter count: best ratio deviation {ratio:.4f} "
            f"exceeds {hard_limit}")
    return best_scale, best_count


def build_wstn(n_tasks: int, reference_param_count: int, n_classes: int = N_GENRES,
               rng=None, dtype=np.float32) -> MultiHeadNet:
    """Genre-only network widened to match a multi-task parameter budget."""
    if n_tasks < 2:
        raise InvalidInputError("a width-matched control implies >= 2 reference tasks")
    scale, matched = wstn_scale_for(reference_param_count, n_classes)
    net = build_stn("g", n_classes=n_classes, width_scale=scale, rng=rng, dtype=dtype)
    net.meta.update({"variant": "wstn", "width_scale": scale,
                     "reference_param_count": int(reference_param_count),
                     "matched_param_count": int(matched)})
    return net


def build_transfer_mlp(input_dim: int, n_classes: int = N_GENRES,
                       hidden: int = MLP_HIDDEN, rng=None,
                       dtype=np.float32) -> MultiHeadNet:
    """Single-hidden-layer classifier over concatenated frozen embeddings:
    dropout 0.5 -> dense(hidden) -> ELU -> dropout 0.5 -> dense(n_classes)."""
    rng = rng if rng is not None else np.random.default_rng(0)
    specs = [
        {"kind": "dropout", "name": "drop_in", "p": 0.5},
        {"kind": "dense", "name": "hidden", "nin": input_dim, "nout": hidden},
        {"kind": "elu", "name": "elu_hidden"},
        {"kind": "dropout", "name": "drop_hidden", "p": 0.5},
        {"kind": "dense", "name": "out", "nin": hidden, "nout": n_classes},
    ]
    branch = Sequential.from_specs(specs, rng, dtype)
    return MultiHeadNet(
        shared=Sequential([], dtype=dtype),
        branches={"g": branch},
        embed_index={"g": 3},
        n_classes={"g": n_classes},
        meta={"variant": "mlp", "input_dim": input_dim, "hidden": hidden},
    )


def embed_segments(net: MultiHeadNet, task: str, segments: np.ndarray) -> np.ndarray:
    """Embeddings for a batch of segments, shape (B, embed_dim)."""
    segments = np.asarray(segments)
    if segments.ndim == 2:
        segments = segments[None]
    if segments.shape[-2:] != SEGMENT_SHAPE:
        raise InvalidInputError(f"expected {SEGMENT_SHAPE} segments, got {segments.shape}")
    x = segments[:, None, :, :]  # add channel axis
    return net.embed(x, task)


def extract_embedding(net: MultiHeadNet, task: str, segment: np.ndarray) -> np.ndarray:
    """Embedding vector for a single 128x43 segment."""
    return embed_segments(net, task, segment)[0]


def concat_embeddings(nets: dict, segments: np.ndarray) -> np.ndarray:
    """Concatenate per-task embeddings in sorted task order."""
    parts = []
    for task in sorted(nets):
        net = nets[task]
        parts.append(embed_segments(net, task, segments))
    return np.concatenate(parts, axis=1)
