import numpy as np
import pytest

from agfpipe.errors import InvalidInputError
from agfpipe.evaluate import (ResultRow, aggregate_segments, enumerate_combos,
                              enumerate_grid_cases, f1_score, log_loss,
                              parse_results_csv, results_to_csv,
                              summarize_with_without)


def random_distributions(rng, n, c):
    x = rng.random((n, c)) + 1e-3
    return x / x.sum(axis=1, keepdims=True)


# --- aggregation -------------------------------------------------------------

def test_single_segment_is_identity():
    p = np.array([[0.3, 0.7]])
    np.testing.assert_allclose(aggregate_segments(p), [0.3, 0.7], atol=1e-15)


def test_two_segment_mean():
    p = np.array([[0.8, 0.2], [0.2, 0.8]])
    np.testing.assert_allclose(aggregate_segments(p), [0.5, 0.5], atol=1e-15)


def test_aggregation_matches_direct_mean_oracle():
    rng = np.random.default_rng(0)
    probs = random_distributions(rng, 7, 16)
    direct = np.array([probs[:, c].sum() / 7 for c in range(16)])
    np.testing.assert_allclose(aggregate_segments(probs), direct, atol=1e-12)


def test_aggregation_argmax_invariant_to_segment_order():
    rng = np.random.default_rng(1)
    probs = random_distributions(rng, 9, 8)
    agg = aggregate_segments(probs)
    for seed in range(5):
        perm = np.random.default_rng(seed).permutation(9)
        agg_p = aggregate_segments(probs[perm])
        assert np.argmax(agg_p) == np.argmax(agg)
        np.testing.assert_allclose(agg_p, agg, atol=1e-12)


def test_aggregation_rejects_bad_input():
    with pytest.raises(InvalidInputError):
        aggregate_segments(np.zeros((0, 4)))
    with pytest.raises(InvalidInputError):
        aggregate_segments(np.array([[0.5, 0.4]]))  # not a distribution


# --- log loss -------------------------------------------------------------------

def test_log_loss_uniform_16_classes():
    probs = np.full((10, 16), 1.0 / 16.0)
    truths = np.arange(10) % 16
    assert log_loss(probs, truths) == pytest.approx(np.log(16.0), abs=1e-9)


def test_log_loss_perfect_predictions():
    truths = np.arange(8) % 4
    probs = np.zeros((8, 4))
    probs[np.arange(8), truths] = 1.0
    assert log_loss(probs, truths) < 1e-12


def test_log_loss_matches_summation_oracle_on_fixtures():
    rng = np.random.default_rng(2)
    probs = random_distributions(rng, 10, 16)
    truths = rng.integers(0, 16, size=10)
    total = 0.0
    for i in range(10):
        total += -np.log(min(max(probs[i, truths[i]], 1e-15), 1.0))
    np.testing.assert_allclose(log_loss(probs, truths), total / 10, atol=1e-12)


def test_log_loss_strictly_monotone_in_true_prob():
    probs = np.full((3, 4), 0.25)
    truths = np.array([0, 1, 2])
    base = log_loss(probs, truths)
    better = probs.copy()
    better[0] = [0.4, 0.2, 0.2, 0.2]
    assert log_loss(better, truths) < base


def test_log_loss_rejects_mismatch():
    with pytest.raises(InvalidInputError):
        log_loss(np.full((3, 4), 0.25), np.array([0, 1]))
    with pytest.raises(InvalidInputError):
        log_loss(np.full((2, 4), 0.25), np.array([0, 4]))


# --- f1 ---------------------------------------------------------------------------

def test_f1_perfect_over_all_16_classes():
    truths = np.arange(32) % 16
    probs = np.zeros((32, 16))
    probs[np.arange(32), truths] = 1.0
    assert f1_score(probs, truths) == pytest.approx(1.0)


def test_f1_binary_fixture_half():
    # per class: TP=1, FP=1, FN=1 -> F1 = 0.5 each
    truths = np.array([0, 0, 1, 1])
    preds = np.array([0, 1, 0, 1])
    probs = np.zeros((4, 2))
    probs[np.arange(4), preds] = 1.0
    assert f1_score(probs, truths) == pytest.approx(0.5)


def test_f1_matches_confusion_matrix_oracle():
    rng = np.random.default_rng(3)
    probs = random_distributions(rng, 60, 8)
    truths = rng.integers(0, 8, size=60)
    preds = probs.argmax(axis=1)
    confusion = np.zeros((8, 8), dtype=int)
    for p, t in zip(preds, truths):
        confusion[t, p] += 1
    f1s = []
    for c in range(8):
        tp = confusion[c, c]
        fp = confusion[:, c].sum() - tp
        fn = confusion[c, :].sum() - tp
        f1s.append(2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else 0.0)
    np.testing.assert_allclose(f1_score(probs, truths), np.mean(f1s), atol=1e-12)


def test_f1_absent_classes_contribute_zero():
    truths = np.array([0, 1, 0, 1])
    probs = np.zeros((4, 4))
    probs[np.arange(4), truths] = 1.0
    assert f1_score(probs, truths) == pytest.approx(0.5)  # 2 perfect / 4 classes


def test_f1_argmax_tie_to_lowest_index():
    probs = np.array([[0.5, 0.5]])
    assert f1_score(probs, np.array([0])) == pytest.approx(0.5)  # class 0 predicted
    assert f1_score(probs, np.array([1])) == pytest.approx(0.0)


# --- grid bookkeeping ----------------------------------------------------------------

def test_enumerate_31_combos_62_cases():
    combos = enumerate_combos()
    cases = enumerate_grid_cases()
    assert len(combos) == 31
    assert len(set(combos)) == 31
    assert len(cases) == 62
    degenerate = [c for c in cases if c["degenerate"]]
    assert len(degenerate) == 5  # one per single-task combo
    assert all(len(c["task_combo"]) == 1 and c["variant"] == "MTN"
               for c in degenerate)


def test_enumerate_restricted_universe():
    assert enumerate_combos("gs") == ["g", "s", "gs"]
    cases = enumerate_grid_cases("gs")
    assert len(cases) == 6


def test_results_csv_round_trip():
    rows = [ResultRow("gs", "STN", 0.9123, 0.55, 120_000, 1),
            ResultRow("gs", "MTN", 0.8712, 0.60, 110_000, 1)]
    text = results_to_csv(rows)
    assert text.splitlines()[0] == "task_combo,variant,log_loss,f1,n_params,seed"
    back = parse_results_csv(text)
    assert back == rows


def test_summary_with_without_task():
    rows = [ResultRow("g", "STN", 1.0, 0.5, 1, 0),
            ResultRow("gs", "STN", 0.8, 0.6, 1, 0),
            ResultRow("s", "STN", 1.2, 0.4, 1, 0),
            ResultRow("gs", "MTN", 0.7, 0.65, 1, 0)]
    summary = summarize_with_without(rows)
    assert summary["with_g_STN"]["log_loss"] == pytest.approx(0.9)
    assert summary["without_g_STN"]["log_loss"] == pytest.approx(1.2)
    assert summary["with_g_MTN"]["n"] == 1
