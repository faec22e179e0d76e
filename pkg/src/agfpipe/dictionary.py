"""Codebook learning and artist-level bag-of-words construction.

Continuous features (MFCC frames, delta frames, song vectors) are quantized
against a K-means codebook; each artist is then described by the count
vector of codes (or subgenre labels) over their tracks. Song-level vectors
are quantile-normalized to a standard normal per dimension before
clustering.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

from .errors import InvalidInputError

SONG_VECTOR_DIM = 4374
N_SUBGENRES = 150
KMEANS_SUBSAMPLE_CAP = 500_000


@dataclass
class Codebook:
    centroids: np.ndarray  # (K, feature_dim)
    feature_kind: str      # mfcc | dmfcc | song_vector

    @property
    def k(self) -> int:
        return self.centroids.shape[0]


@dataclass
class ArtistBow:
    artist_id: str
    counts: np.ndarray  # (V,) non-negative ints
    vocab_kind: str     # mfcc_code | dmfcc_code | song_code | subgenre


def quantile_normalize(vectors: np.ndarray) -> np.ndarray:
    """Map each dimension onto a standard normal by rank.

    Value with (0-based) rank r among N maps to ndtri((r + 0.5) / N); tied
    values share the mean of their rank positions. Input (N, D), output the
    same shape.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InvalidInputError("quantile normalization needs at least 2 vectors")
    if not np.isfinite(x).all():
        raise InvalidInputError("non-finite values in song vectors")
    n = x.shape[0]
    ranks = rankdata(x, method="average", axis=0)  # 1-based, tie-averaged
    return ndtri((ranks - 0.5) / n)


def _plus_plus_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding."""
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]), dtype=x.dtype)
    centroids[0] = x[rng.integers(n)]
    d2 = np.sum((x - centroids[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids[i:] = x[rng.integers(n, size=k - i)]
            break
        probs = d2 / total
        centroids[i] = x[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, np.sum((x - centroids[i]) ** 2, axis=1))
    return centroids


def _nearest(x: np.ndarray, centroids: np.ndarray):
    """Squared distances to nearest centroid and the argmin index per row.

    Ties resolve to the lowest centroid index (argmin takes the first hit).
    """
    # |x-c|^2 = |x|^2 - 2 x.c + |c|^2, computed blockwise to bound memory
    c_norm = np.sum(centroids ** 2, axis=1)
    assign = np.empty(x.shape[0], dtype=np.int64)
    dist = np.empty(x.shape[0], dtype=np.float64)
    block = max(1, 2_000_000 // max(1, centroids.shape[0]))
    for s in range(0, x.shape[0], block):
        xb = x[s:s + block]
        d2 = c_norm[None, :] - 2.0 * (xb @ centroids.T)
        idx = np.argmin(d2, axis=1)
        assign[s:s + block] = idx
        dist[s:s + block] = d2[np.arange(len(xb)), idx] + np.sum(xb ** 2, axis=1)
    return np.maximum(dist, 0.0), assign


def kmeans_fit(features: np.ndarray, k: int, seed_rng: np.random.Generator,
               max_iter: int = 100, tol: float = 1e-6,
               feature_kind: str = "mfcc",
               subsample_cap: int = KMEANS_SUBSAMPLE_CAP) -> Codebook:
    """Lloyd's algorithm with k-means++ init.

    Empty clusters are re-seeded with the point farthest from its current
    centroid so the codebook always keeps exactly k codes. Inertia is
    asserted non-increasing across iterations. Inputs beyond
    `subsample_cap` rows are uniformly subsampled (seeded) first.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidInputError("features must be 2-D")
    if not np.isfinite(x).all():
        raise InvalidInputError("non-finite values in features")
    if x.shape[0] < k:
        raise InvalidInputError(f"{x.shape[0]} rows < k={k}")
    if x.shape[0] > subsample_cap:
        keep = seed_rng.choice(x.shape[0], size=subsample_cap, replace=False)
        x = x[np.sort(keep)]

    centroids = _plus_plus_init(x, k, seed_rng)
    prev_inertia = np.inf
    for _ in range(max_iter):
        d2, assign = _nearest(x, centroids)
        inertia = d2.sum()
        assert inertia <= prev_inertia + 1e-6 * max(1.0, abs(prev_inertia)), \
            "k-means inertia increased"
        prev_inertia = inertia

        new_centroids = np.zeros_like(centroids)
        counts = np.bincount(assign, minlength=k).astype(np.float64)
        np.add.at(new_centroids, assign, x)
        nonempty = counts > 0
        new_centroids[nonempty] /= counts[nonempty, None]
        if not nonempty.all():
            # farthest points take over empty slots
            order = np.argsort(d2)[::-1]
            spare = iter(order)
            for j in np.flatnonzero(~nonempty):
                new_centroids[j] = x[next(spare)]

        shift = np.sqrt(np.sum((new_centroids - centroids) ** 2, axis=1)).max()
        centroids = new_centroids
        if shift < tol:
            break
    return Codebook(centroids=centroids, feature_kind=feature_kind)


def kmeans_assign(codebook: Codebook, features: np.ndarray) -> np.ndarray:
    """Index of the nearest centroid per row, ties to the lowest index."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != codebook.centroids.shape[1]:
        raise InvalidInputError(
            f"feature dim {x.shape} does not match codebook "
            f"dim {codebook.centroids.shape[1]}")
    _, assign = _nearest(x, codebook.centroids)
    return assign


def kmeans_inertia(codebook: Codebook, features: np.ndarray) -> float:
    d2, _ = _nearest(np.asarray(features, dtype=np.float64), codebook.centroids)
    return float(d2.sum())


def artist_bow_from_codes(track_codes: dict, track_artist: dict, v: int,
                          vocab_kind: str) -> list:
    """Count code occurrences per artist.

    track_codes maps track_id -> index vector (frame codes, or a single
    code for song-level features). Artists whose tracks contribute zero
    codes are dropped (they cannot enter LDA).
    """
    per_artist = {}
    for track_id, codes in track_codes.items():
        if track_id not in track_artist:
            raise InvalidInputError(f"track {track_id!r} missing from artist map")
        artist = track_artist[track_id]
        codes = np.atleast_1d(np.asarray(codes, dtype=np.int64))
        if codes.size and (codes.min() < 0 or codes.max() >= v):
            raise InvalidInputError(f"code out of range for track {track_id!r}")
        counts = per_artist.setdefault(artist, np.zeros(v, dtype=np.int64))
        counts += np.bincount(codes, minlength=v)
    return [ArtistBow(artist_id=a, counts=c, vocab_kind=vocab_kind)
            for a, c in sorted(per_artist.items()) if c.sum() > 0]


def artist_bow_from_subgenres(track_labels: dict, track_artist: dict,
                              v: int = N_SUBGENRES) -> list:
    """Aggregate subgenre label multisets per artist into count vectors."""
    for track_id, labels in track_labels.items():
        for lab in labels:
            if not 0 <= lab < v:
                raise InvalidInputError(
                    f"subgenre {lab} out of range [0, {v}) for track {track_id!r}")
    return artist_bow_from_codes(
        {t: np.asarray(list(labs), dtype=np.int64) for t, labs in track_labels.items()},
        track_artist, v, vocab_kind="subgenre")
