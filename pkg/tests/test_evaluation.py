import json
from dataclasses import dataclass

import numpy as np
import pytest

from noiseadapt import evaluation as ev
from noiseadapt.errors import InvalidArgumentError
from noiseadapt.features import FeatureMatrix, lda_apply, lda_fit
from noiseadapt.signal_corpus import NoiseCondition


@dataclass
class Item:
    utt_id: str
    noise: NoiseCondition
    features: FeatureMatrix


def _test_set(rng, classes=6, per_cond=30, conds=("clean", "white:0", "music:10")):
    items = []
    for c in conds:
        cond = NoiseCondition.parse(c)
        for i in range(per_cond):
            segs = np.repeat(np.arange(4), 25)
            labels = rng.integers(0, classes, 4)[segs]
            items.append(Item(f"{c}_{i}", cond, FeatureMatrix(np.zeros((100, 2)), labels, segs)))
    return items


def test_perfect_predictor_scores_zero():
    rng = np.random.default_rng(0)
    items = _test_set(rng)
    by_id = {id(it.features): it.features.labels for it in items}
    rep = ev.score(lambda f: by_id[id(f)], items)
    assert rep.frame_error == 0 and rep.utterance_error == 0
    assert all(c.utterance_error == 0 for c in rep.conditions.values())


def test_random_predictor_matches_binomial_expectation():
    rng = np.random.default_rng(1)
    items = _test_set(rng, classes=8, per_cond=60)
    rep = ev.score(lambda f: rng.integers(0, 8, f.num_frames), items)
    assert rep.frame_error == pytest.approx(100 * (1 - 1 / 8), abs=3)


def test_macro_average_is_mean_of_conditions():
    rng = np.random.default_rng(2)
    items = _test_set(rng)
    rep = ev.score(lambda f: np.where(rng.random(f.num_frames) < 0.3, 0, f.labels), items)
    conds = rep.conditions.values()
    assert rep.macro_utterance_error == pytest.approx(np.mean([c.utterance_error for c in conds]), abs=1e-9)
    assert rep.macro_frame_error == pytest.approx(np.mean([c.frame_error for c in conds]), abs=1e-9)
    for c in conds:
        assert 0 <= c.frame_error <= 100 and 0 <= c.utterance_error <= 100


def test_utterance_is_wrong_when_any_segment_vote_fails():
    labels = np.array([1] * 5 + [2] * 5)
    segs = np.array([0] * 5 + [1] * 5)
    f = FeatureMatrix(np.zeros((10, 1)), labels, segs)
    good = ev.score_utterance("u", "clean", f, np.array([1, 1, 1, 0, 0, 2, 2, 2, 0, 0]))
    bad = ev.score_utterance("u", "clean", f, np.array([1, 1, 1, 0, 0, 2, 2, 0, 0, 0]))
    assert good.correct and good.frame_errors == 4
    assert not bad.correct


def test_segment_vote_ties_go_to_smallest_class():
    assert ev.segment_votes(np.array([3, 3, 1, 1]), np.zeros(4, int)) == {0: 1}


def test_report_round_trip_and_table():
    rng = np.random.default_rng(3)
    rep = ev.score(lambda f: rng.integers(0, 6, f.num_frames), _test_set(rng), system="baseline")
    rep.fisher_separation = {"unseen": 1.5}
    back = ev.EvalReport.from_dict(json.loads(rep.to_json()))
    assert back.to_json() == rep.to_json()
    table = rep.to_table()
    assert "white(00)" in table and "Average" in table


def test_mcnemar_closed_forms():
    assert ev.mcnemar_exact(0, 0) == 1.0
    assert ev.mcnemar_exact(10, 0) == pytest.approx(2 * 0.5 ** 10, rel=1e-12)
    assert ev.mcnemar_exact(10, 0) == pytest.approx(0.00195, abs=1e-5)
    assert ev.mcnemar_exact(7, 7) == 1.0
    for b, c in [(3, 9), (0, 4), (12, 5), (1, 30)]:
        p = ev.mcnemar_exact(b, c)
        assert 0 < p <= 1
        assert p == ev.mcnemar_exact(c, b)


def test_matched_pairs_counts_discordance():
    a = {f"u{i}": i >= 10 for i in range(20)}
    b = {f"u{i}": True for i in range(20)}
    assert ev.matched_pairs_test(a, b) == pytest.approx(ev.mcnemar_exact(10, 0))
    with pytest.raises(InvalidArgumentError):
        ev.matched_pairs_test(a, {"x": True})


def _clusters(rng, n=300, d=4, gap=4.0):
    centres = rng.standard_normal((3, d)) * gap
    x = np.vstack([c + rng.standard_normal((n, d)) for c in centres])
    return x, np.repeat(["a", "b", "c"], n)


def test_fisher_shuffled_labels_score_near_zero():
    rng = np.random.default_rng(4)
    x, y = _clusters(rng)
    structured = ev.fisher_separation(x, y)
    assert ev.fisher_separation(x, rng.permutation(y)) < 0.1 * structured


def test_fisher_point_masses_beat_one_cluster():
    rng = np.random.default_rng(5)
    masses = np.vstack([np.zeros((50, 2)), np.ones((50, 2))])
    labels = np.repeat([0, 1], 50)
    blob = rng.standard_normal((100, 2))
    assert np.isfinite(ev.fisher_separation(masses, labels))
    assert ev.fisher_separation(masses, labels) > ev.fisher_separation(blob, labels)


def test_fisher_translation_invariant():
    rng = np.random.default_rng(6)
    x, y = _clusters(rng)
    shift = rng.standard_normal(4) * 100
    assert ev.fisher_separation(x + shift, y) == pytest.approx(ev.fisher_separation(x, y), rel=1e-8)


def test_fisher_needs_two_classes():
    with pytest.raises(InvalidArgumentError):
        ev.fisher_separation(np.zeros((5, 2)), np.zeros(5))


def test_scatter_export_rows_and_definition():
    rng = np.random.default_rng(7)
    x, y = _clusters(rng, n=400)
    table = ev.export_scatter(x, y, 700, seed=3)
    assert len(table.x) == 700
    lines = table.to_csv().splitlines()
    assert lines[0] == "x,y,label" and len(lines) == 701
    names, codes = np.unique(y, return_inverse=True)
    t = lda_fit(FeatureMatrix(x, codes), 2)
    idx = np.sort(np.random.default_rng(3).choice(len(x), 700, replace=False))
    proj = lda_apply(t, FeatureMatrix(x[idx])).values
    np.testing.assert_allclose(np.column_stack([table.x, table.y]), proj, atol=1e-12)
    assert table.labels == list(y[idx])


def test_scatter_small_input_and_determinism():
    rng = np.random.default_rng(8)
    x, y = _clusters(rng, n=50)
    assert len(ev.export_scatter(x, y, 700).x) == 150
    assert ev.export_scatter(x, y, 100, seed=1).to_csv() == ev.export_scatter(x, y, 100, seed=1).to_csv()
    with pytest.raises(InvalidArgumentError):
        ev.export_scatter(x[:100], y[:100])


def test_comparison_table_marks_significance():
    rng = np.random.default_rng(9)
    items = _test_set(rng, per_cond=40)
    truth = {id(it.features): it.features.labels for it in items}
    good = ev.score(lambda f: truth[id(f)], items, system="good")
    bad = ev.score(lambda f: (truth[id(f)] + 1) % 6, items, system="bad")
    text, data = ev.comparison_table([bad, good])
    assert data["significant"]["good"]
    assert data["p_values"]["good"] < 0.05
    assert "*" in text.splitlines()[-3]
