"""Artist grouping via LDA on bag-of-words vectors.

Each artist is a document; the topic model's document-topic posterior is
collapsed to a hard group label by argmax. Inference is collapsed Gibbs
sampling: per-token topic assignments are resampled with the topic
distributions integrated out, and phi/theta are point-estimated from the
final count state with prior smoothing.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NumericError

DEFAULT_BETA = 0.01
DEFAULT_N_ITER = 500


def default_alpha(n_topics: int) -> float:
    return 50.0 / n_topics


@dataclass
class AgfModel:
    n_topics: int
    alpha: float
    beta: float
    phi: np.ndarray       # (n_topics, V), rows sum to 1
    theta: np.ndarray     # (n_artists, n_topics), rows sum to 1
    artist_ids: list
    log_likelihood: np.ndarray  # per-sweep token log likelihood


def _token_lists(bows):
    """Expand count vectors into per-document word-id arrays."""
    docs = []
    v = bows[0].counts.shape[0]
    kind = bows[0].vocab_kind
    for bow in bows:
        if bow.vocab_kind != kind or bow.counts.shape[0] != v:
            raise InvalidInputError("mixed vocabularies in LDA corpus")
        if bow.counts.sum() <= 0:
            raise InvalidInputError(f"artist {bow.artist_id!r} has an empty BoW")
        if (bow.counts < 0).any():
            raise InvalidInputError(f"artist {bow.artist_id!r} has negative counts")
        docs.append(np.repeat(np.arange(v, dtype=np.int64), bow.counts))
    return docs, v


def _corpus_log_likelihood(doc_word_counts, phi, theta) -> float:
    """Token log likelihood under the current point estimates."""
    mix = theta @ phi  # (D, V)
    return float(np.sum(doc_word_counts * np.log(mix)))


def lda_fit(bows: list, n_topics: int, alpha: float = None,
            beta: float = DEFAULT_BETA, n_iter: int = DEFAULT_N_ITER,
            seed_rng: np.random.Generator = None) -> AgfModel:
    """Collapsed Gibbs sampling over artist BoW vectors.

    Runs n_iter full sweeps and point-estimates from the final counts:

        phi[k, v]   = (n_kv + beta)  / (n_k + V * beta)
        theta[d, k] = (n_dk + alpha) / (n_d + K * alpha)

    Token order within a sweep is fixed (documents in input order, words in
    ascending id), so a given rng yields bitwise-identical results.
    """
    if not bows:
        raise InvalidInputError("empty corpus")
    if n_topics < 2:
        raise InvalidInputError("need at least 2 topics")
    if alpha is None:
        alpha = default_alpha(n_topics)
    if seed_rng is None:
        seed_rng = np.random.default_rng(0)

    docs, v = _token_lists(bows)
    n_docs = len(docs)
    k = n_topics

    # counts kept as plain Python lists: the per-token resampling loop is an
    # order of magnitude faster than numpy indexing at these topic counts
    n_dk = [[0] * k for _ in range(n_docs)]
    n_kv = [[0] * v for _ in range(k)]
    n_k = [0] * k
    z = []
    word_lists = []
    for d, words in enumerate(docs):
        zd = seed_rng.integers(0, k, size=len(words)).tolist()
        z.append(zd)
        words = words.tolist()
        word_lists.append(words)
        nd = n_dk[d]
        for w, t in zip(words, zd):
            nd[t] += 1
            n_kv[t][w] += 1
            n_k[t] += 1

    doc_lengths = np.array([len(w) for w in docs], dtype=np.int64)
    doc_word_counts = np.stack([b.counts for b in bows]).astype(np.float64)
    total_tokens = int(doc_lengths.sum())
    v_beta = v * beta
    k_range = range(k)
    cum = [0.0] * k

    ll_history = np.empty(n_iter, dtype=np.float64)
    for sweep in range(n_iter):
        for d in range(n_docs):
            words = word_lists[d]
            zd = z[d]
            nd = n_dk[d]
            uniforms = seed_rng.random(len(words)).tolist()
            for i, w in enumerate(words):
                old = zd[i]
                nd[old] -= 1
                n_kv[old][w] -= 1
                n_k[old] -= 1

                total = 0.0
                for t in k_range:
                    total += (n_kv[t][w] + beta) / (n_k[t] + v_beta) * (nd[t] + alpha)
                    cum[t] = total
                u = uniforms[i] * total
                new = 0
                while cum[new] < u and new < k - 1:
                    new += 1

                zd[i] = new
                nd[new] += 1
                n_kv[new][w] += 1
                n_k[new] += 1

        n_dk_arr = np.array(n_dk, dtype=np.int64)
        n_kv_arr = np.array(n_kv, dtype=np.int64)
        n_k_arr = np.array(n_k, dtype=np.int64)
        if (n_dk_arr.sum(axis=1) != doc_lengths).any() or n_k_arr.sum() != total_tokens:
            raise NumericError(f"token count conservation violated at sweep {sweep}")

        phi = (n_kv_arr + beta) / (n_k_arr[:, None] + v_beta)
        theta = (n_dk_arr + alpha) / (doc_lengths[:, None] + k * alpha)
        ll_history[sweep] = _corpus_log_likelihood(doc_word_counts, phi, theta)

    return AgfModel(n_topics=k, alpha=alpha, beta=beta, phi=phi, theta=theta,
                    artist_ids=[b.artist_id for b in bows],
                    log_likelihood=ll_history)


def assign_groups(model: AgfModel) -> dict:
    """Hard group per artist: argmax over theta, ties to the lowest index."""
    groups = np.argmax(model.theta, axis=1)
    return {aid: int(g) for aid, g in zip(model.artist_ids, groups)}


def group_label_histogram(assignment: dict, n_topics: int) -> np.ndarray:
    """Artist count per group; empty groups are legitimate zero entries."""
    if not assignment:
        raise InvalidInputError("empty assignment")
    hist = np.zeros(n_topics, dtype=np.int64)
    for g in assignment.values():
        hist[g] += 1
    return hist
