"""Dataset manifest, synthetic desk-scale dataset, and artifact persistence.

The manifest is a CSV of track rows; subgenre ids are semicolon-joined
inside one cell and kept as a multiset (counts feed the bag-of-words).
Song-level feature vectors live in sidecar files of 4374 raw little-endian
float32 values. Everything else (feature caches, codebooks, BoW tables,
topic models, checkpoints) goes through the binary tensor container.
"""

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from . import dsp
from .container import meta_entry, parse_meta, read_tensors, write_tensors
from .dictionary import SONG_VECTOR_DIM, Codebook, ArtistBow
from .agf import AgfModel
from .errors import FormatError, InvalidInputError
from .nn import Adam, MultiHeadNet
from .rng import rng_for

MANIFEST_COLUMNS = ["track_id", "audio_path", "artist_id", "genre_id",
                    "subgenre_ids", "song_vector_path"]
MAX_GENRES = 16


@dataclass
class TrackRecord:
    track_id: str
    audio_path: str
    artist_id: str
    genre_id: int
    subgenre_ids: list
    song_vector_path: str = ""


@dataclass
class Manifest:
    records: list
    base_dir: str = "."

    def path_for(self, rel: str) -> str:
        return os.path.normpath(os.path.join(self.base_dir, rel))

    @property
    def track_ids(self):
        return [r.track_id for r in self.records]

    def track_artist(self) -> dict:
        return {r.track_id: r.artist_id for r in self.records}

    def track_genre(self) -> dict:
        return {r.track_id: r.genre_id for r in self.records}


def load_manifest(path, check_files: bool = True) -> Manifest:
    """Parse and validate a manifest CSV; errors carry the offending line."""
    base_dir = os.path.dirname(os.path.abspath(path))
    records = []
    seen = set()
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty manifest")
        if header != MANIFEST_COLUMNS:
            raise FormatError(f"{path}: line 1: expected columns {MANIFEST_COLUMNS}, "
                              f"got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(MANIFEST_COLUMNS):
                raise FormatError(f"{path}: line {lineno}: expected "
                                  f"{len(MANIFEST_COLUMNS)} fields, got {len(row)}")
            track_id, audio_path, artist_id, genre_s, subg_s, songvec = row
            if track_id in seen:
                raise FormatError(f"{path}: line {lineno}: duplicate track_id {track_id!r}")
            seen.add(track_id)
            try:
                genre = int(genre_s)
            except ValueError:
                raise FormatError(f"{path}: line {lineno}: bad genre_id {genre_s!r}")
            if not 0 <= genre < MAX_GENRES:
                raise FormatError(f"{path}: line {lineno}: genre_id {genre} outside "
                                  f"[0, {MAX_GENRES})")
            subgenres = []
            if subg_s:
                for part in subg_s.split(";"):
                    try:
                        sg = int(part)
                    except ValueError:
                        raise FormatError(f"{path}: line {lineno}: bad subgenre {part!r}")
                    if not 0 <= sg < 150:
                        raise FormatError(f"{path}: line {lineno}: subgenre {sg} "
                                          "outside [0, 150)")
                    subgenres.append(sg)
            rec = TrackRecord(track_id, audio_path, artist_id, genre, subgenres, songvec)
            if check_files:
                full = os.path.join(base_dir, audio_path)
                if not os.path.exists(full):
                    raise FormatError(f"{path}: line {lineno}: audio file missing: {full}")
                if songvec and not os.path.exists(os.path.join(base_dir, songvec)):
                    raise FormatError(f"{path}: line {lineno}: song vector missing: {songvec}")
            records.append(rec)
    return Manifest(records=records, base_dir=base_dir)


def save_manifest(path, records) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for r in records:
            writer.writerow([r.track_id, r.audio_path, r.artist_id, r.genre_id,
                             ";".join(str(s) for s in r.subgenre_ids),
                             r.song_vector_path])


def read_song_vector(path) -> np.ndarray:
    vec = np.fromfile(path, dtype="<f4")
    if vec.shape != (SONG_VECTOR_DIM,):
        raise FormatError(f"{path}: expected {SONG_VECTOR_DIM} float32 values, "
                          f"got {vec.size}")
    return vec


def write_song_vector(path, vec: np.ndarray) -> None:
    vec = np.asarray(vec, dtype="<f4")
    if vec.shape != (SONG_VECTOR_DIM,):
        raise InvalidInputError(f"song vector must have {SONG_VECTOR_DIM} entries")
    vec.tofile(path)


# --- synthetic dataset ---------------------------------------------------

def _genre_recipe(genre: int):
    """Spectral recipe per genre: fundamental, partial count, tremolo, noise."""
    return {
        "f0": 110.0 * 2.0 ** (genre * 5.0 / 12.0),
        "n_partials": 2 + genre % 3,
        "trem_hz": 1.5 + 0.9 * genre,
        "noise": 0.01 + 0.004 * (genre % 5),
    }


def _render_track(genre: int, artist_local: int, artists_per_genre: int,
                  rng, duration_s: float) -> np.ndarray:
    recipe = _genre_recipe(genre)
    n = int(round(duration_s * dsp.SAMPLE_RATE))
    t = np.arange(n) / dsp.SAMPLE_RATE
    detune = 2.0 ** ((artist_local - (artists_per_genre - 1) / 2.0) * 0.012)
    tilt = 0.75 + 0.5 * artist_local / max(1, artists_per_genre - 1)

    x = np.zeros(n)
    for p in range(recipe["n_partials"]):
        freq = recipe["f0"] * detune * (p + 1)
        if freq >= dsp.SAMPLE_RATE / 2:
            break
        amp = tilt ** p / (p + 1)
        x += amp * np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))
    trem = 1.0 + 0.5 * np.sin(2 * np.pi * recipe["trem_hz"] * t + rng.uniform(0, 2 * np.pi))
    x *= trem
    x += recipe["noise"] * rng.standard_normal(n)
    x *= 0.5 / max(1e-9, np.abs(x).max())
    return x.astype(np.float32)


def _synth_song_vector(genre: int, artist_id: str, track_id: str, seed: int) -> np.ndarray:
    base = rng_for(seed, "songvec", "genre", genre).standard_normal(SONG_VECTOR_DIM)
    artist = rng_for(seed, "songvec", "artist", artist_id).standard_normal(SONG_VECTOR_DIM)
    track = rng_for(seed, "songvec", "track", track_id).standard_normal(SONG_VECTOR_DIM)
    return (base + 0.6 * artist + 0.25 * track).astype(np.float32)


def _synth_subgenres(genre: int, artist_local: int, track_local: int) -> list:
    # each genre owns a block of 9 subgenre ids; labels depend on artist + track
    base = 9 * genre
    return [base + artist_local % 9, base + (artist_local + track_local) % 9]


def generate_synthetic_dataset(n_genres: int, artists_per_genre: int,
                               tracks_per_artist: int, seed: int, out_dir,
                               duration_s: float = 4.0) -> Manifest:
    """Write a separable-by-construction audio dataset under out_dir.

    Each genre has a distinct spectral recipe (fundamental, partial count,
    tremolo rate, noise floor); each artist detunes and retilts it; each
    track adds seeded phase and noise. Song vectors and subgenre labels are
    deterministic functions of the same identities, so every AGF source
    carries genre-aligned artist structure.
    """
    if min(n_genres, artists_per_genre, tracks_per_artist) < 1:
        raise InvalidInputError("dataset dimensions must be >= 1")
    if n_genres > MAX_GENRES:
        raise InvalidInputError(f"at most {MAX_GENRES} genres supported")
    os.makedirs(os.path.join(out_dir, "audio"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "songvec"), exist_ok=True)

    records = []
    for g in range(n_genres):
        for a in range(artists_per_genre):
            artist_id = f"artist_{g:02d}_{a:02d}"
            for k in range(tracks_per_artist):
                track_id = f"track_{g:02d}_{a:02d}_{k:02d}"
                rng = rng_for(seed, "synth", track_id)
                samples = _render_track(g, a, artists_per_genre, rng, duration_s)
                audio_rel = os.path.join("audio", f"{track_id}.wav")
                dsp.write_wav(os.path.join(out_dir, audio_rel),
                              dsp.AudioClip(samples, dsp.SAMPLE_RATE))
                vec_rel = os.path.join("songvec", f"{track_id}.f32")
                write_song_vector(os.path.join(out_dir, vec_rel),
                                  _synth_song_vector(g, artist_id, track_id, seed))
                records.append(TrackRecord(
                    track_id=track_id, audio_path=audio_rel, artist_id=artist_id,
                    genre_id=g, subgenre_ids=_synth_subgenres(g, a, k),
                    song_vector_path=vec_rel))
    save_manifest(os.path.join(out_dir, "manifest.csv"), records)
    return Manifest(records=records, base_dir=os.path.abspath(out_dir))


# --- persistence ----------------------------------------------------------

def save_feature_cache(path, tensors: dict) -> None:
    write_tensors(path, tensors)


def load_feature_cache(path) -> dict:
    return read_tensors(path)


def save_codebook(path, codebook: Codebook) -> None:
    write_tensors(path, {
        "centroids": codebook.centroids.astype(np.float64),
        "__meta__": meta_entry({"feature_kind": codebook.feature_kind}),
    })


def load_codebook(path) -> Codebook:
    t = read_tensors(path)
    meta = parse_meta(t["__meta__"])
    return Codebook(centroids=t["centroids"], feature_kind=meta["feature_kind"])


def save_bows(path, bows: list) -> None:
    counts = np.stack([b.counts for b in bows]).astype(np.int64)
    write_tensors(path, {
        "counts": counts,
        "__meta__": meta_entry({"artist_ids": [b.artist_id for b in bows],
                                "vocab_kind": bows[0].vocab_kind}),
    })


def load_bows(path) -> list:
    t = read_tensors(path)
    meta = parse_meta(t["__meta__"])
    return [ArtistBow(artist_id=a, counts=c, vocab_kind=meta["vocab_kind"])
            for a, c in zip(meta["artist_ids"], t["counts"])]


def save_agf_model(path, model: AgfModel, assignment: dict) -> None:
    write_tensors(path, {
        "phi": model.phi,
        "theta": model.theta,
        "log_likelihood": model.log_likelihood,
        "groups": np.array([assignment[a] for a in model.artist_ids], dtype=np.int64),
        "__meta__": meta_entry({"n_topics": model.n_topics, "alpha": model.alpha,
                                "beta": model.beta, "artist_ids": model.artist_ids}),
    })


def load_agf_model(path):
    t = read_tensors(path)
    meta = parse_meta(t["__meta__"])
    model = AgfModel(n_topics=meta["n_topics"], alpha=meta["alpha"],
                     beta=meta["beta"], phi=t["phi"], theta=t["theta"],
                     artist_ids=meta["artist_ids"],
                     log_likelihood=t["log_likelihood"])
    assignment = {a: int(g) for a, g in zip(meta["artist_ids"], t["groups"])}
    return model, assignment


def save_checkpoint(path, net: MultiHeadNet, adam: Adam = None) -> None:
    tensors = {"__desc__": meta_entry(net.descriptor())}
    for name, arr in net.named_params().items():
        tensors[f"param/{name}"] = arr
    for name, arr in net.named_state().items():
        tensors[f"state/{name}"] = arr
    if adam is not None:
        for name, arr in adam.state_tensors().items():
            tensors[f"adam/{name}"] = arr
    write_tensors(path, tensors)


def load_checkpoint(path, dtype=np.float32):
    """Rebuild a network (and optimizer state, if stored) from a checkpoint."""
    tensors = read_tensors(path)
    if "__desc__" not in tensors:
        raise FormatError(f"{path}: not a checkpoint (missing descriptor)")
    desc = parse_meta(tensors["__desc__"])
    net = MultiHeadNet.from_descriptor(desc, dtype=dtype)
    params = {k[len("param/"):]: v for k, v in tensors.items() if k.startswith("param/")}
    state = {k[len("state/"):]: v for k, v in tensors.items() if k.startswith("state/")}
    net.load_arrays(params, state)
    adam_tensors = {k[len("adam/"):]: v for k, v in tensors.items() if k.startswith("adam/")}
    adam = None
    if adam_tensors:
        adam = Adam()
        adam.load_state_tensors(adam_tensors)
    return net, adam
