"""Stage orchestration: feature extraction, dictionaries, artist groups,
network training, transfer, evaluation, and the experiment grid.

All artifacts live under one data directory:

    manifest.csv            track table (written by the synth stage)
    audio/, songvec/        raw inputs
    cache/features/         per-track mel/mfcc/dmfcc tensors
    cache/codebook_*.agft   K-means centroids (m, d, e)
    cache/bow_*.agft        artist BoW tables (m, d, e, s)
    models/agf_*.agft       topic models + hard group assignments
    models/<combo>_<variant>/  checkpoints and loss histories
    results/results.csv     metric rows
    runlog.txt              one provenance line per completed stage

Stages are idempotent: outputs newer than all inputs are reused unless
forced.
"""

import hashlib
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import dsp
from .agf import assign_groups, group_label_histogram, lda_fit
from .config import PipelineConfig
from .data import (Manifest, generate_synthetic_dataset, load_agf_model,
                   load_bows, load_checkpoint, load_codebook,
                   load_feature_cache, load_manifest, read_song_vector,
                   save_agf_model, save_bows, save_checkpoint, save_codebook,
                   save_feature_cache)
from .dictionary import (artist_bow_from_codes, artist_bow_from_subgenres,
                         kmeans_assign, kmeans_fit, quantile_normalize)
from .errors import ConfigError
from .evaluate import ResultRow, enumerate_combos, evaluate_tracks, results_to_csv
from .models import (build_mtn, build_stn, build_transfer_mlp, build_wstn,
                     canonical_combo)
from .rng import rng_for
from .train import (TrackData, TrainConfig, stratified_split, train_mtn,
                    train_stn, train_transfer)

AGF_TASKS = "mdes"


# --- paths and provenance --------------------------------------------------

def paths(cfg: PipelineConfig) -> dict:
    d = cfg.data_dir
    return {
        "manifest": os.path.join(d, "manifest.csv"),
        "features": os.path.join(d, "cache", "features"),
        "cache": os.path.join(d, "cache"),
        "models": os.path.join(d, "models"),
        "results": os.path.join(d, "results", "results.csv"),
        "results_dir": os.path.join(d, "results"),
        "runlog": os.path.join(d, "runlog.txt"),
    }


def needs_rebuild(outputs, inputs) -> bool:
    """True when any output is missing or older than the newest input."""
    if any(not os.path.exists(p) for p in outputs):
        return True
    newest_in = max((os.path.getmtime(p) for p in inputs if os.path.exists(p)),
                    default=0.0)
    oldest_out = min(os.path.getmtime(p) for p in outputs)
    return oldest_out < newest_in


def _hash_files(paths_list) -> str:
    h = hashlib.sha256()
    for p in sorted(paths_list):
        if os.path.isfile(p):
            h.update(p.encode())
            with open(p, "rb") as f:
                h.update(hashlib.sha256(f.read()).digest())
    return h.hexdigest()[:12]


def log_stage(cfg: PipelineConfig, stage: str, wall: float,
              inputs, outputs) -> None:
    line = (f"stage={stage} wall={wall:.2f}s in={_hash_files(inputs)} "
            f"out={_hash_files(outputs)} config=\"{cfg.as_line()}\"\n")
    os.makedirs(cfg.data_dir, exist_ok=True)
    with open(paths(cfg)["runlog"], "a", encoding="utf-8") as f:
        f.write(line)


# --- stages -----------------------------------------------------------------

def synth_stage(cfg: PipelineConfig, n_genres: int, artists_per_genre: int,
                tracks_per_artist: int) -> Manifest:
    t0 = time.time()
    manifest = generate_synthetic_dataset(
        n_genres, artists_per_genre, tracks_per_artist, cfg.seed,
        cfg.data_dir, duration_s=cfg.duration_s)
    log_stage(cfg, "synth", time.time() - t0,
              [], [paths(cfg)["manifest"]])
    return manifest


def _feature_path(cfg, track_id):
    return os.path.join(paths(cfg)["features"], f"{track_id}.agft")


def features_stage(cfg: PipelineConfig, force: bool = False) -> int:
    """Extract and cache mel/mfcc/dmfcc tensors per track. Returns the
    number of tracks (re)computed."""
    p = paths(cfg)
    if not os.path.exists(p["manifest"]):
        raise ConfigError("manifest.csv not found; run the synth stage first "
                          "(or point --data at a dataset)")
    manifest = load_manifest(p["manifest"])
    os.makedirs(p["features"], exist_ok=True)
    t0 = time.time()
    done = 0
    for rec in manifest.records:
        out = _feature_path(cfg, rec.track_id)
        src = manifest.path_for(rec.audio_path)
        if not force and not needs_rebuild([out], [src]):
            continue
        clip = dsp.read_wav(src)
        mel = dsp.mel_spectrogram(clip)
        mf = dsp.mfcc(mel)
        save_feature_cache(out, {"mel": mel, "mfcc": mf, "dmfcc": dsp.delta(mf)})
        done += 1
    log_stage(cfg, "features", time.time() - t0, [p["manifest"]],
              [_feature_path(cfg, r.track_id) for r in manifest.records])
    return done


def _collect_frames(cfg, manifest, key):
    """Stack per-track frame features as rows, remembering track slices."""
    blocks, slices = [], {}
    pos = 0
    for rec in manifest.records:
        feats = load_feature_cache(_feature_path(cfg, rec.track_id))[key].T
        blocks.append(feats)
        slices[rec.track_id] = (pos, pos + len(feats))
        pos += len(feats)
    return np.concatenate(blocks, axis=0), slices


def dict_stage(cfg: PipelineConfig, force: bool = False) -> dict:
    """Fit codebooks and build all four artist BoW tables."""
    p = paths(cfg)
    manifest = load_manifest(p["manifest"])
    feature_files = [_feature_path(cfg, r.track_id) for r in manifest.records]
    if any(not os.path.exists(f) for f in feature_files):
        raise ConfigError("feature cache incomplete; run the features stage first")
    outputs = [os.path.join(p["cache"], f"codebook_{t}.agft") for t in "mde"] + \
              [os.path.join(p["cache"], f"bow_{t}.agft") for t in "mdes"]
    if not force and not needs_rebuild(outputs, feature_files):
        return {"skipped": True}

    t0 = time.time()
    track_artist = manifest.track_artist()
    sizes = {}

    for task, key in (("m", "mfcc"), ("d", "dmfcc")):
        frames, slices = _collect_frames(cfg, manifest, key)
        codebook = kmeans_fit(frames, cfg.k_codebook,
                              rng_for(cfg.seed, "kmeans", task),
                              feature_kind=key)
        save_codebook(os.path.join(p["cache"], f"codebook_{task}.agft"), codebook)
        codes = kmeans_assign(codebook, frames)
        track_codes = {tid: codes[a:b] for tid, (a, b) in slices.items()}
        bows = artist_bow_from_codes(track_codes, track_artist, cfg.k_codebook,
                                     vocab_kind=f"{key}_code")
        save_bows(os.path.join(p["cache"], f"bow_{task}.agft"), bows)
        sizes[task] = len(bows)

    vecs = np.stack([read_song_vector(manifest.path_for(r.song_vector_path))
                     for r in manifest.records])
    normalized = quantile_normalize(vecs)
    k_song = min(cfg.k_codebook, len(normalized))
    codebook = kmeans_fit(normalized, k_song, rng_for(cfg.seed, "kmeans", "e"),
                          feature_kind="song_vector")
    save_codebook(os.path.join(p["cache"], "codebook_e.agft"), codebook)
    codes = kmeans_assign(codebook, normalized)
    track_codes = {r.track_id: np.array([codes[i]])
                   for i, r in enumerate(manifest.records)}
    bows = artist_bow_from_codes(track_codes, track_artist, k_song,
                                 vocab_kind="song_code")
    save_bows(os.path.join(p["cache"], "bow_e.agft"), bows)
    sizes["e"] = len(bows)

    bows = artist_bow_from_subgenres(
        {r.track_id: r.subgenre_ids for r in manifest.records}, track_artist)
    save_bows(os.path.join(p["cache"], "bow_s.agft"), bows)
    sizes["s"] = len(bows)

    log_stage(cfg, "dict", time.time() - t0, feature_files, outputs)
    return sizes


def agf_stage(cfg: PipelineConfig, tasks: str = AGF_TASKS,
              force: bool = False) -> dict:
    """Fit one topic model per requested feature set and store hard groups."""
    p = paths(cfg)
    histograms = {}
    t0 = time.time()
    os.makedirs(p["models"], exist_ok=True)
    inputs, outputs = [], []
    for task in tasks:
        bow_path = os.path.join(p["cache"], f"bow_{task}.agft")
        if not os.path.exists(bow_path):
            raise ConfigError(f"BoW table for task {task!r} missing; "
                              "run the dict stage first")
        out = os.path.join(p["models"], f"agf_{task}.agft")
        inputs.append(bow_path)
        outputs.append(out)
        if not force and not needs_rebuild([out], [bow_path]):
            _, assignment = load_agf_model(out)
            histograms[task] = group_label_histogram(assignment, cfg.n_topics)
            continue
        bows = load_bows(bow_path)
        model = lda_fit(bows, cfg.n_topics, alpha=cfg.resolved_alpha(),
                        beta=cfg.lda_beta, n_iter=cfg.lda_iters,
                        seed_rng=rng_for(cfg.seed, "lda", task))
        assignment = assign_groups(model)
        save_agf_model(out, model, assignment)
        histograms[task] = group_label_histogram(assignment, cfg.n_topics)
    log_stage(cfg, "agf", time.time() - t0, inputs, outputs)
    return histograms


# --- training orchestration --------------------------------------------------

def _train_config(cfg: PipelineConfig) -> TrainConfig:
    return TrainConfig(batch_size=cfg.batch_size, lr=cfg.lr,
                       epochs_stn=cfg.epochs_stn, epochs_mtn=cfg.epochs_mtn,
                       epochs_mlp=cfg.epochs_mlp, seed=cfg.seed,
                       task_schedule=cfg.task_schedule)


def load_track_data(cfg: PipelineConfig, combo: str) -> list:
    """TrackData with genre labels plus AGF group labels for combo tasks."""
    p = paths(cfg)
    manifest = load_manifest(p["manifest"])
    assignments = {}
    for task in combo:
        if task == "g":
            continue
        model_path = os.path.join(p["models"], f"agf_{task}.agft")
        if not os.path.exists(model_path):
            raise ConfigError(f"AGF model for task {task!r} missing; "
                              "run the agf stage first")
        _, assignments[task] = load_agf_model(model_path)

    tracks = []
    for rec in manifest.records:
        feat = _feature_path(cfg, rec.track_id)
        if not os.path.exists(feat):
            raise ConfigError(f"features for {rec.track_id!r} missing; "
                              "run the features stage first")
        labels = {"g": rec.genre_id}
        for task, assignment in assignments.items():
            if rec.artist_id not in assignment:
                raise ConfigError(
                    f"artist {rec.artist_id!r} has no group for task {task!r} "
                    "(empty BoW excluded it); regenerate dictionaries")
            labels[task] = assignment[rec.artist_id]
        mel = load_feature_cache(feat)["mel"]
        tracks.append(TrackData(track_id=rec.track_id, mel=mel, labels=labels))
    return tracks


def split_tracks(cfg: PipelineConfig, tracks: list):
    spec = stratified_split({t.track_id: t.labels["g"] for t in tracks},
                            ratio=cfg.split_ratio,
                            rng=rng_for(cfg.seed, "split"))
    by_id = {t.track_id: t for t in tracks}
    return ([by_id[i] for i in spec.train_ids],
            [by_id[i] for i in spec.valid_ids])


def _case_dir(cfg, combo, variant):
    return os.path.join(paths(cfg)["models"], f"{combo}_{variant.lower()}")


def _history_csv(history) -> str:
    lines = ["epoch,task,mean_loss"]
    for epoch, task, loss in history.rows:
        lines.append(f"{epoch},{task},{loss!r}")
    return "\n".join(lines) + "\n"


def _class_counts(cfg: PipelineConfig, combo: str) -> dict:
    return {t: (cfg.n_genres if t == "g" else cfg.n_topics) for t in combo}


def train_stage(cfg: PipelineConfig, combo: str, variant: str,
                force: bool = False) -> dict:
    """Train the feature learner(s) for one (combo, variant) case."""
    combo = canonical_combo(combo)
    variant = variant.upper()
    tracks = load_track_data(cfg, combo)
    train_tracks, _ = split_tracks(cfg, tracks)
    case_dir = _case_dir(cfg, combo, variant)
    os.makedirs(case_dir, exist_ok=True)
    tconf = _train_config(cfg)
    n_classes = _class_counts(cfg, combo)
    t0 = time.time()
    out_files = []

    if variant == "STN":
        for task in combo:
            net = build_stn(task, n_classes=n_classes[task],
                            width_scale=cfg.width_scale,
                            rng=rng_for(cfg.seed, "init_stn", combo, task))
            history = train_stn(net, task, train_tracks, tconf,
                                rng=rng_for(cfg.seed, "train_stn", combo, task))
            ckpt = os.path.join(case_dir, f"stn_{task}.agft")
            save_checkpoint(ckpt, net)
            with open(os.path.join(case_dir, f"loss_stn_{task}.csv"), "w",
                      encoding="utf-8", newline="\n") as f:
                f.write(_history_csv(history))
            out_files.append(ckpt)
    elif variant == "MTN":
        if len(combo) < 2:
            raise ConfigError("the shared-network variant needs >= 2 tasks")
        net = build_mtn(combo, n_classes=n_classes, width_scale=cfg.width_scale,
                        rng=rng_for(cfg.seed, "init_mtn", combo))
        history = train_mtn(net, combo, train_tracks, tconf,
                            rng=rng_for(cfg.seed, "train_mtn", combo))
        ckpt = os.path.join(case_dir, "mtn.agft")
        save_checkpoint(ckpt, net)
        with open(os.path.join(case_dir, "loss_mtn.csv"), "w",
                  encoding="utf-8", newline="\n") as f:
            f.write(_history_csv(history))
        out_files.append(ckpt)
    elif variant == "WSTN":
        if len(combo) < 2:
            raise ConfigError("the width-matched control needs >= 2 reference tasks")
        reference = build_mtn(combo, n_classes=n_classes,
                              width_scale=cfg.width_scale,
                              rng=rng_for(cfg.seed, "ref_mtn", combo))
        net = build_wstn(len(combo), reference.param_count(),
                         n_classes=cfg.n_genres,
                         rng=rng_for(cfg.seed, "init_wstn", combo))
        history = train_stn(net, "g", train_tracks, tconf,
                            rng=rng_for(cfg.seed, "train_wstn", combo))
        ckpt = os.path.join(case_dir, "wstn.agft")
        save_checkpoint(ckpt, net)
        with open(os.path.join(case_dir, "loss_wstn.csv"), "w",
                  encoding="utf-8", newline="\n") as f:
            f.write(_history_csv(history))
        out_files.append(ckpt)
    else:
        raise ConfigError(f"unknown variant {variant!r}")

    log_stage(cfg, f"train[{combo},{variant}]", time.time() - t0,
              [paths(cfg)["manifest"]], out_files)
    return {"files": out_files}


def load_source_nets(cfg: PipelineConfig, combo: str, variant: str) -> dict:
    """Frozen feature learners keyed by the task whose branch they serve."""
    combo = canonical_combo(combo)
    variant = variant.upper()
    case_dir = _case_dir(cfg, combo, variant)
    nets = {}
    if variant == "STN":
        for task in combo:
            ckpt = os.path.join(case_dir, f"stn_{task}.agft")
            if not os.path.exists(ckpt):
                raise ConfigError(f"checkpoint {ckpt} missing; run the train stage "
                                  f"for {combo}/{variant} first")
            nets[task], _ = load_checkpoint(ckpt)
    elif variant == "MTN":
        ckpt = os.path.join(case_dir, "mtn.agft")
        if not os.path.exists(ckpt):
            raise ConfigError(f"checkpoint {ckpt} missing; run the train stage "
                              f"for {combo}/{variant} first")
        net, _ = load_checkpoint(ckpt)
        nets = {task: net for task in combo}
    elif variant == "WSTN":
        ckpt = os.path.join(case_dir, "wstn.agft")
        if not os.path.exists(ckpt):
            raise ConfigError(f"checkpoint {ckpt} missing; run the train stage "
                              f"for {combo}/{variant} first")
        net, _ = load_checkpoint(ckpt)
        nets = {"g": net}
    else:
        raise ConfigError(f"unknown variant {variant!r}")
    return nets


def transfer_stage(cfg: PipelineConfig, combo: str, variant: str,
                   permute_labels: bool = False) -> dict:
    """Train the genre MLP on frozen embeddings from the case's networks."""
    combo = canonical_combo(combo)
    variant = variant.upper()
    nets = load_source_nets(cfg, combo, variant)
    tracks = load_track_data(cfg, combo)
    train_tracks, _ = split_tracks(cfg, tracks)
    input_dim = sum(nets[t].embedding_dim(t) for t in sorted(nets))
    mlp = build_transfer_mlp(input_dim, n_classes=cfg.n_genres,
                             hidden=cfg.mlp_hidden,
                             rng=rng_for(cfg.seed, "init_mlp", combo, variant))
    t0 = time.time()
    history = train_transfer(mlp, nets, train_tracks, _train_config(cfg),
                             rng=rng_for(cfg.seed, "train_mlp", combo, variant),
                             permute_labels=permute_labels)
    case_dir = _case_dir(cfg, combo, variant)
    suffix = "_permuted" if permute_labels else ""
    ckpt = os.path.join(case_dir, f"mlp{suffix}.agft")
    save_checkpoint(ckpt, mlp)
    with open(os.path.join(case_dir, f"loss_mlp{suffix}.csv"), "w",
              encoding="utf-8", newline="\n") as f:
        f.write(_history_csv(history))
    log_stage(cfg, f"transfer[{combo},{variant}]{suffix}", time.time() - t0,
              [paths(cfg)["manifest"]], [ckpt])
    return {"checkpoint": ckpt, "history": history}


def eval_stage(cfg: PipelineConfig, combo: str, variant: str,
               permuted: bool = False) -> ResultRow:
    """Evaluate a trained case on the validation split; upsert its result row."""
    combo = canonical_combo(combo)
    variant = variant.upper()
    nets = load_source_nets(cfg, combo, variant)
    case_dir = _case_dir(cfg, combo, variant)
    suffix = "_permuted" if permuted else ""
    mlp_path = os.path.join(case_dir, f"mlp{suffix}.agft")
    if not os.path.exists(mlp_path):
        raise ConfigError(f"MLP checkpoint missing; run the transfer stage "
                          f"for {combo}/{variant} first")
    mlp, _ = load_checkpoint(mlp_path)
    tracks = load_track_data(cfg, combo)
    _, valid_tracks = split_tracks(cfg, tracks)
    t0 = time.time()
    ll, f1, _ = evaluate_tracks(mlp, nets, valid_tracks)
    n_params = sum(net.param_count() for net in
                   {id(n): n for n in nets.values()}.values())
    row = ResultRow(task_combo=combo, variant=variant if not permuted
                    else f"{variant}-permuted",
                    log_loss=ll, f1=f1, n_params=n_params, seed=cfg.seed)
    _upsert_result(cfg, row)
    log_stage(cfg, f"eval[{combo},{row.variant}]", time.time() - t0,
              [mlp_path], [paths(cfg)["results"]])
    return row


def _upsert_result(cfg: PipelineConfig, row: ResultRow) -> None:
    from .evaluate import parse_results_csv
    p = paths(cfg)
    os.makedirs(p["results_dir"], exist_ok=True)
    rows = []
    if os.path.exists(p["results"]):
        with open(p["results"], encoding="utf-8") as f:
            rows = parse_results_csv(f.read())
    rows = [r for r in rows if (r.task_combo, r.variant) != (row.task_combo, row.variant)]
    rows.append(row)
    rows.sort(key=lambda r: (len(r.task_combo), r.task_combo, r.variant))
    with open(p["results"], "w", encoding="utf-8", newline="\n") as f:
        f.write(results_to_csv(rows))


def run_case(cfg: PipelineConfig, combo: str, variant: str) -> ResultRow:
    """Train + transfer + evaluate one grid case end to end."""
    train_stage(cfg, combo, variant)
    transfer_stage(cfg, combo, variant)
    return eval_stage(cfg, combo, variant)


def _run_case_worker(args):
    cfg_kwargs, combo, variant = args
    return run_case(PipelineConfig(**cfg_kwargs), combo, variant)


def run_grid(cfg: PipelineConfig, combos: list = None, with_wstn: bool = False,
             jobs: int = 1) -> list:
    """Run (combo, variant) cases: STN for every combo, MTN where |combo| >= 2,
    then optional width-matched controls for the best MTN combo per size."""
    if combos is None:
        combos = enumerate_combos()
    combos = [canonical_combo(c) for c in combos]
    cases = []
    for combo in combos:
        cases.append((combo, "STN"))
        if len(combo) >= 2:
            cases.append((combo, "MTN"))

    if jobs > 1:
        import dataclasses
        cfg_kwargs = dataclasses.asdict(cfg)
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_case_worker,
                                 [(cfg_kwargs, c, v) for c, v in cases]))
    else:
        rows = [run_case(cfg, c, v) for c, v in cases]

    if with_wstn:
        by_size = {}
        for row in rows:
            if row.variant != "MTN":
                continue
            size = len(row.task_combo)
            if size not in by_size or row.log_loss < by_size[size].log_loss:
                by_size[size] = row
        for size in sorted(by_size):
            rows.append(run_case(cfg, by_size[size].task_combo, "WSTN"))
    return rows
