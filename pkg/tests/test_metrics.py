import random
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from rftsim.metrics import (QSCORE_DEFINITION, SIMPLE_FRAMES, EmptyGoals, EmptyGrid, MissingSkillLabels, QScore,
                            aggregate_qscore, dataset_stats, manifest_stats, qscore, success_rate)
from rftsim.policy import SKILLS


@pytest.mark.parametrize("preds,value", [([True] * 4, 1.0), ([False] * 4, 0.0), ([True, False, True, False], 0.5)])
def test_qscore(preds, value):
    q = qscore(preds)
    assert q.value == value and q.success == (value == 1.0)


def test_qscore_errors():
    with pytest.raises(EmptyGoals):
        qscore([])
    with pytest.raises(ValueError):
        QScore(3, 2)


def test_aggregate_examples():
    assert aggregate_qscore({(1, 0): Fraction(1, 4)}) == Fraction(1, 4)
    table = {(1, 0): Fraction(1, 10), (2, 0): Fraction(2, 10), (2, 1): Fraction(4, 10)}
    assert aggregate_qscore(table) == Fraction(1, 5)
    with pytest.raises(EmptyGrid):
        aggregate_qscore({})


def test_grid_brute_force():
    rng = random.Random(0)
    for _ in range(20):
        grid = {(t, i): Fraction(rng.randint(0, 6), 6) for t in range(50) for i in range(10)}
        brute = sum(sum(grid[t, i] for i in range(10)) / 10 for t in range(50)) / 50
        assert aggregate_qscore(grid) == brute
        assert success_rate(grid) == sum(sum(grid[t, i] == 1 for i in range(10)) / Fraction(10)
                                         for t in range(50)) / 50


@settings(max_examples=100, deadline=None)
@given(st.dictionaries(st.tuples(st.integers(0, 5), st.integers(0, 5)),
                       st.builds(QScore, st.integers(0, 3), st.just(3)), min_size=1), st.randoms())
def test_aggregate_is_permutation_invariant(grid, rnd):
    items = list(grid.items())
    rnd.shuffle(items)
    assert aggregate_qscore(dict(items)) == aggregate_qscore(grid)
    assert 0 <= aggregate_qscore(grid) <= 1


def test_stats_known_mix():
    # 1/3 move-to frames, the rest split over the other skills
    eps = []
    rng = random.Random(1)
    counted = {s: 0 for s in SKILLS}
    for k in range(60):
        n = rng.randint(30, 90)
        labels = ["move to"] * (n // 3) + [rng.choice(SKILLS[1:]) for _ in range(n - n // 3)]
        for lab in labels:
            counted[lab] += 1
        eps.append((k % 4, labels))
    st_ = dataset_stats(eps)
    total = sum(counted.values())
    for s in SKILLS:
        assert abs(st_.skill_shares[s] - counted[s] / total) <= 0.01
    assert st_.skill_shares["move to"] == pytest.approx(1 / 3, abs=0.01)
    assert sum(st_.skill_shares.values()) == pytest.approx(1.0, abs=1e-9)


def test_single_skill_episode():
    st_ = dataset_stats([(1, ["open"] * 100)])
    assert st_.skill_shares["open"] == 1.0
    assert st_.per_task[1].mean_frames == 100 and st_.per_task[1].mean_unique_skills == 1


@pytest.mark.parametrize("frames,simple", [(240, True), (249, True), (250, False), (251, False), (260, False)])
def test_simple_threshold(frames, simple):
    assert SIMPLE_FRAMES == 250
    assert dataset_stats([(5, ["move to"] * frames)]).simple[5] is simple


def test_missing_labels():
    with pytest.raises(MissingSkillLabels):
        dataset_stats([(1, [])])
    with pytest.raises(MissingSkillLabels):
        dataset_stats([(1, ["juggle"])])
    with pytest.raises(EmptyGrid):
        dataset_stats([])


def test_manifest_stats(demo_store):
    store, m, ok = demo_store
    st_ = manifest_stats(m, store)
    assert sum(st_.skill_shares.values()) == pytest.approx(1.0, abs=1e-9)
    assert sum(s.episodes for s in st_.per_task.values()) == len(m.entries)
    assert "stand-in" in QSCORE_DEFINITION
