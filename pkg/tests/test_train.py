import warnings

import numpy as np
import pytest

from agfpipe.errors import InvalidInputError
from agfpipe.models import build_mtn, build_stn, build_transfer_mlp
from agfpipe.rng import rng_for
from agfpipe.train import (TrackData, TrainConfig, build_embedding_dataset,
                           plan_task_schedule, stratified_split, train_mtn,
                           train_stn, train_transfer)


def synthetic_tracks(n_genres=2, per_genre=8, frames=60, seed=0):
    """Genre-separable fake mel data: per-genre spectral template plus noise."""
    rng = np.random.default_rng(seed)
    base = rng.standard_normal((n_genres, 128, 1)) * 8.0
    tracks = []
    for g in range(n_genres):
        for i in range(per_genre):
            mel = base[g] + rng.standard_normal((128, frames))
            tracks.append(TrackData(track_id=f"t{g}_{i}",
                                    mel=mel.astype(np.float32),
                                    labels={"g": g, "s": (g + 1) % n_genres}))
    return tracks


def small_config(**kw):
    base = dict(batch_size=8, lr=0.002, epochs_stn=6, epochs_mtn=10,
                epochs_mlp=8, seed=0)
    base.update(kw)
    return TrainConfig(**base)


# --- stratified split ---------------------------------------------------------

def test_split_single_genre_85_15():
    genres = {f"t{i}": 0 for i in range(100)}
    spec = stratified_split(genres, rng=np.random.default_rng(0))
    assert len(spec.train_ids) == 85
    assert len(spec.valid_ids) == 15
    assert set(spec.train_ids) | set(spec.valid_ids) == set(genres)
    assert not set(spec.train_ids) & set(spec.valid_ids)


def test_split_two_genres_rounding_toward_train():
    genres = {f"a{i}": 0 for i in range(60)}
    genres.update({f"b{i}": 1 for i in range(40)})
    spec = stratified_split(genres, rng=np.random.default_rng(1))
    train_a = [t for t in spec.train_ids if t.startswith("a")]
    valid_a = [t for t in spec.valid_ids if t.startswith("a")]
    train_b = [t for t in spec.train_ids if t.startswith("b")]
    valid_b = [t for t in spec.valid_ids if t.startswith("b")]
    assert (len(train_a), len(valid_a)) == (51, 9)
    assert (len(train_b), len(valid_b)) == (34, 6)


def test_split_same_seed_identical():
    genres = {f"t{i}": i % 4 for i in range(57)}
    a = stratified_split(genres, rng=np.random.default_rng(7))
    b = stratified_split(genres, rng=np.random.default_rng(7))
    assert a.train_ids == b.train_ids
    assert a.valid_ids == b.valid_ids


def test_split_tiny_genre_warns_and_goes_to_train():
    genres = {"t0": 0, "t1": 0, "t2": 0, "lonely": 1}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        spec = stratified_split(genres, rng=np.random.default_rng(0))
    assert any("stratify" in str(w.message) for w in caught)
    assert "lonely" in spec.train_ids


def test_split_valid_fraction_within_2pct():
    genres = {f"t{i}": i % 3 for i in range(600)}
    spec = stratified_split(genres, rng=np.random.default_rng(3))
    for g in range(3):
        total = sum(1 for t, gg in genres.items() if gg == g)
        valid = sum(1 for t in spec.valid_ids if genres[t] == g)
        assert abs(valid / total - 0.15) <= 0.02


# --- task schedule --------------------------------------------------------------

def test_uniform_schedule_share_within_5pct():
    tasks = ["g", "m", "d", "e", "s"]
    schedule = plan_task_schedule(tasks, 3000, np.random.default_rng(0))
    for t in tasks:
        share = schedule.count(t) / len(schedule)
        assert abs(share - 0.2) <= 0.05


def test_round_robin_schedule_is_exact():
    schedule = plan_task_schedule(["a", "b"], 10, np.random.default_rng(0),
                                  mode="round_robin")
    assert schedule == ["a", "b"] * 5


# --- single-task training ---------------------------------------------------------

def test_train_stn_zero_lr_keeps_params():
    tracks = synthetic_tracks()
    net = build_stn("g", n_classes=2, width_scale=0.125, rng=rng_for(0, "z"))
    before = {k: v.copy() for k, v in net.named_params().items()}
    train_stn(net, "g", tracks, small_config(lr=0.0, epochs_stn=2))
    for k, v in net.named_params().items():
        np.testing.assert_array_equal(before[k], v)


def test_train_stn_history_and_descent():
    tracks = synthetic_tracks()
    net = build_stn("g", n_classes=2, width_scale=0.125, rng=rng_for(1, "d"))
    config = small_config()
    history = train_stn(net, "g", tracks, config)
    losses = history.losses_for("g")
    assert len(losses) == config.epochs_stn
    assert losses[-1] < 0.5 * losses[0]
    assert history.used_track_ids == {t.track_id for t in tracks}


def test_train_stn_missing_label_rejected():
    tracks = synthetic_tracks()
    del tracks[0].labels["s"]
    net = build_stn("s", n_classes=2, width_scale=0.125, rng=rng_for(2, "m"))
    with pytest.raises(InvalidInputError, match="missing label"):
        train_stn(net, "s", tracks, small_config())


def test_train_stn_reproducible_with_seed():
    tracks = synthetic_tracks()
    h1 = train_stn(build_stn("g", n_classes=2, width_scale=0.125,
                             rng=rng_for(3, "r")), "g", tracks,
                   small_config(epochs_stn=3))
    h2 = train_stn(build_stn("g", n_classes=2, width_scale=0.125,
                             rng=rng_for(3, "r")), "g", tracks,
                   small_config(epochs_stn=3))
    assert h1.rows == h2.rows


# --- multi-task training ------------------------------------------------------------

def test_train_mtn_descends_on_both_tasks():
    tracks = synthetic_tracks(per_genre=12)
    net = build_mtn(["g", "s"], n_classes={"g": 2, "s": 2}, width_scale=0.125,
                    rng=rng_for(4, "mtn"))
    config = small_config(epochs_mtn=16)
    history = train_mtn(net, ["g", "s"], tracks, config)
    for task in ("g", "s"):
        batch_losses = [l for _, t, l in history.batch_log if t == task]
        assert len(batch_losses) > 3
        tenth = max(1, len(batch_losses) // 10)
        first = np.mean(batch_losses[:tenth])
        last = np.mean(batch_losses[-tenth:])
        assert last < 0.7 * first, (task, first, last)


def test_train_mtn_undrawn_branch_untouched():
    tracks = synthetic_tracks(per_genre=4)
    net = build_mtn(["g", "s"], n_classes={"g": 2, "s": 2}, width_scale=0.125,
                    rng=rng_for(5, "iso"))
    # single batch, single epoch: exactly one task gets drawn
    config = small_config(epochs_mtn=1, batch_size=len(tracks))
    before = {k: v.copy() for k, v in net.named_params().items()}
    history = train_mtn(net, ["g", "s"], tracks, config)
    [(_, drawn, _)] = history.batch_log
    other = "s" if drawn == "g" else "g"
    for name, arr in net.named_params().items():
        if name.startswith(f"task_{other}."):
            np.testing.assert_array_equal(before[name], arr)
    changed = [n for n, a in net.named_params().items()
               if n.startswith("shared.") and not np.array_equal(before[n], a)]
    assert changed


def test_train_mtn_schedule_share():
    tracks = synthetic_tracks(per_genre=4)
    net = build_mtn(["g", "s"], n_classes={"g": 2, "s": 2}, width_scale=0.125,
                    rng=rng_for(6, "sch"))
    config = small_config(epochs_mtn=40, batch_size=len(tracks))
    history = train_mtn(net, ["g", "s"], tracks, config)
    counts = {t: sum(1 for _, task, _ in history.batch_log if task == t)
              for t in ("g", "s")}
    assert counts["g"] + counts["s"] == 40


# --- transfer training ----------------------------------------------------------------

def make_sources(tracks, seed=7):
    net = build_stn("g", n_classes=2, width_scale=0.125, rng=rng_for(seed, "src"))
    train_stn(net, "g", tracks, small_config(epochs_stn=4))
    return {"g": net}


def test_transfer_sources_stay_frozen():
    tracks = synthetic_tracks()
    sources = make_sources(tracks)
    frozen = {k: v.copy() for k, v in sources["g"].named_params().items()}
    frozen_state = {k: v.copy() for k, v in sources["g"].named_state().items()}
    mlp = build_transfer_mlp(sources["g"].embedding_dim("g"), n_classes=2,
                             hidden=32, rng=rng_for(8, "mlp"))
    train_transfer(mlp, sources, tracks, small_config())
    for k, v in sources["g"].named_params().items():
        np.testing.assert_array_equal(frozen[k], v)
    for k, v in sources["g"].named_state().items():
        np.testing.assert_array_equal(frozen_state[k], v)


def test_transfer_learns_better_than_chance():
    tracks = synthetic_tracks(per_genre=10)
    sources = make_sources(tracks)
    dim = sources["g"].embedding_dim("g")
    mlp = build_transfer_mlp(dim, n_classes=2, hidden=32, rng=rng_for(9, "mlp"))
    history = train_transfer(mlp, sources, tracks, small_config())
    final_loss = history.rows[-1][2]
    assert final_loss < np.log(2.0)


def test_transfer_dimension_mismatch_rejected():
    tracks = synthetic_tracks(per_genre=2)
    sources = make_sources(tracks)
    mlp = build_transfer_mlp(sources["g"].embedding_dim("g") + 1, n_classes=2,
                             hidden=16, rng=rng_for(10, "mlp"))
    with pytest.raises(InvalidInputError, match="does not match MLP input"):
        train_transfer(mlp, sources, tracks, small_config(epochs_mlp=1))


def test_no_validation_track_in_updates():
    tracks = synthetic_tracks(per_genre=10)
    spec = stratified_split({t.track_id: t.labels["g"] for t in tracks},
                            rng=np.random.default_rng(0))
    by_id = {t.track_id: t for t in tracks}
    train_set = [by_id[i] for i in spec.train_ids]
    net = build_stn("g", n_classes=2, width_scale=0.125, rng=rng_for(11, "audit"))
    history = train_stn(net, "g", train_set, small_config(epochs_stn=2))
    assert not history.used_track_ids & set(spec.valid_ids)


def test_embedding_dataset_owners_and_targets():
    tracks = synthetic_tracks(per_genre=3, frames=90)  # 2 tiled segments each
    sources = make_sources(tracks)
    embeds, targets, owners = build_embedding_dataset(sources, tracks)
    assert len(embeds) == len(targets) == len(owners) == 2 * len(tracks)
    assert set(owners) == {t.track_id for t in tracks}
    assert embeds.shape[1] == sources["g"].embedding_dim("g")
