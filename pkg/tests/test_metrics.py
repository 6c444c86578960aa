"""Metric formulas against brute-force oracles."""

from __future__ import annotations

import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oclbench.metrics import (AccuracyMatrix, AucRecorder, a_auc, a_last,
                              aggregate_seeds, f_last)


def random_matrix(num_tasks: int, rng: random.Random) -> AccuracyMatrix:
    m = AccuracyMatrix(num_tasks)
    for t in range(num_tasks):
        for i in range(t + 1):
            m.set(t, i, rng.random())
    return m


def oracle_a_last(m: AccuracyMatrix) -> float:
    t = m.num_tasks - 1
    return sum(m.get(t, i) for i in range(m.num_tasks)) / m.num_tasks


def oracle_f_last(m: AccuracyMatrix) -> float:
    t = m.num_tasks - 1
    if t == 0:
        return 0.0
    terms = []
    for i in range(t):
        best = -math.inf
        for j in range(i, t):
            best = max(best, m.get(j, i) - m.get(t, i))
        terms.append(best)
    return sum(terms) / len(terms)


# ---------------------------------------------------------------------------
# a_last
# ---------------------------------------------------------------------------


def test_a_last_spot_value():
    m = AccuracyMatrix(2)
    m.set(0, 0, 0.9)
    m.set(1, 0, 0.5)
    m.set(1, 1, 0.7)
    assert a_last(m) == pytest.approx(0.6, abs=1e-15)


def test_a_last_all_ones():
    m = AccuracyMatrix(3)
    for t in range(3):
        for i in range(t + 1):
            m.set(t, i, 1.0)
    assert a_last(m) == 1.0


def test_a_last_matches_oracle_on_random_matrices():
    rng = random.Random(1)
    for _ in range(200):
        m = random_matrix(rng.randint(1, 6), rng)
        assert a_last(m) == pytest.approx(oracle_a_last(m), abs=1e-12)


def test_a_last_incomplete_row_rejected():
    m = AccuracyMatrix(2)
    m.set(1, 1, 0.5)
    with pytest.raises(ValueError):
        a_last(m)


# ---------------------------------------------------------------------------
# f_last
# ---------------------------------------------------------------------------


def test_f_last_negative_kept_when_accuracy_improves():
    m = AccuracyMatrix(2)
    m.set(0, 0, 0.6)
    m.set(1, 0, 0.8)
    m.set(1, 1, 0.9)
    assert f_last(m) == pytest.approx(-0.2, abs=1e-15)


def test_f_last_positive_drop():
    m = AccuracyMatrix(2)
    m.set(0, 0, 0.8)
    m.set(1, 0, 0.6)
    m.set(1, 1, 0.9)
    assert f_last(m) == pytest.approx(0.2, abs=1e-15)


def test_f_last_single_task_defined_zero():
    m = AccuracyMatrix(1)
    m.set(0, 0, 0.4)
    assert f_last(m) == 0.0


def test_f_last_constant_columns_is_zero():
    m = AccuracyMatrix(4)
    for t in range(4):
        for i in range(t + 1):
            m.set(t, i, 0.3 + 0.1 * i)
    assert f_last(m) == pytest.approx(0.0, abs=1e-15)


def test_f_last_matches_bruteforce_oracle():
    rng = random.Random(2)
    for _ in range(200):
        m = random_matrix(rng.randint(2, 7), rng)
        assert f_last(m) == pytest.approx(oracle_f_last(m), abs=1e-12)


def test_f_last_bounded():
    rng = random.Random(3)
    for _ in range(100):
        val = f_last(random_matrix(rng.randint(1, 5), rng))
        assert -1.0 <= val <= 1.0


# ---------------------------------------------------------------------------
# a_auc
# ---------------------------------------------------------------------------


def test_a_auc_single_checkpoint():
    rec = AucRecorder(interval=100)
    rec.record(100, 0.9)
    assert a_auc(rec) == 0.9


def test_a_auc_two_checkpoints():
    rec = AucRecorder(interval=10)
    rec.record(10, 0.0)
    rec.record(20, 1.0)
    assert a_auc(rec) == pytest.approx(0.5, abs=1e-15)


def test_a_auc_matches_mean_oracle():
    rng = random.Random(4)
    rec = AucRecorder(interval=5)
    vals = [rng.random() for _ in range(50)]
    for i, v in enumerate(vals):
        rec.record(5 * (i + 1), v)
    assert a_auc(rec) == pytest.approx(sum(vals) / len(vals), abs=1e-12)


def test_a_auc_constant_sequence_is_constant():
    rec = AucRecorder(interval=1)
    for i in range(7):
        rec.record(i, 0.625)
    assert a_auc(rec) == pytest.approx(0.625, abs=1e-15)


def test_a_auc_empty_rejected():
    with pytest.raises(ValueError):
        a_auc(AucRecorder(interval=10))


def test_recorder_rejects_out_of_range_accuracy():
    rec = AucRecorder(interval=1)
    with pytest.raises(ValueError):
        rec.record(1, 1.5)


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------


def test_aggregate_single_value():
    assert aggregate_seeds([0.8]) == (pytest.approx(0.8), pytest.approx(0.0))


def test_aggregate_two_point_population_std():
    mean, std = aggregate_seeds([0.6, 0.8])
    assert mean == pytest.approx(0.7, abs=1e-15)
    assert std == pytest.approx(0.1, abs=1e-15)


def test_aggregate_matches_oracle():
    rng = random.Random(5)
    vals = [rng.random() for _ in range(5)]
    mean, std = aggregate_seeds(vals)
    mu = sum(vals) / 5
    sigma = math.sqrt(sum((v - mu) ** 2 for v in vals) / 5)
    assert mean == pytest.approx(mu, abs=1e-14)
    assert std == pytest.approx(sigma, abs=1e-14)


def test_aggregate_empty_rejected():
    with pytest.raises(ValueError):
        aggregate_seeds([])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=12))
def test_aggregate_mean_within_range_and_std_nonnegative(vals):
    mean, std = aggregate_seeds(vals)
    assert 0.0 <= mean <= 1.0
    assert std >= 0.0


def test_metrics_are_pure():
    m = AccuracyMatrix(3)
    for t in range(3):
        for i in range(t + 1):
            m.set(t, i, 0.5)
    before = dict(m._cells)
    a_last(m), f_last(m)
    assert m._cells == before
