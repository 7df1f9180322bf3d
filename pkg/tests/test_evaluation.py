import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from movierec.data import RatingRecord
from movierec.evaluation import EvalReport, cross_validate, kfold_split, rmse
from movierec.recommenders import PredictorConfig


def records(n, seed=0):
    rng = np.random.default_rng(seed)
    return [RatingRecord(i % 7 + 1, i // 7 + 1, float(rng.integers(1, 11)) / 2, 0) for i in range(n)]


def test_fold_sizes_near_equal():
    assert kfold_split(50, 5).sizes() == [10] * 5
    assert sorted(kfold_split(53, 5).sizes()) == [10, 10, 11, 11, 11]


@given(st.integers(2, 10), st.integers(0, 200), st.integers(0, 2**32 - 1))
def test_folds_partition_the_records(k, extra, seed):
    n = k + extra
    plan = kfold_split(n, k, seed)
    tests = [set(plan.test_indices(f).tolist()) for f in range(k)]
    assert set().union(*tests) == set(range(n))
    assert sum(len(t) for t in tests) == n
    assert max(plan.sizes()) - min(plan.sizes()) <= 1
    for f in range(k):
        assert set(plan.train_indices(f).tolist()) == set(range(n)) - tests[f]


def test_fold_plan_deterministic_per_seed():
    a, b, c = kfold_split(100, 5, 42), kfold_split(100, 5, 42), kfold_split(100, 5, 43)
    np.testing.assert_array_equal(a.assignment, b.assignment)
    assert not np.array_equal(a.assignment, c.assignment)


def test_fold_errors():
    with pytest.raises(ValueError):
        kfold_split(3, 5)
    with pytest.raises(ValueError):
        kfold_split(10, 1)


def test_rmse_examples():
    assert rmse([(3.0, 3.0)]) == 0.0
    assert rmse([(1.0, 2.0), (3.0, 5.0)]) == pytest.approx(math.sqrt(2.5))
    with pytest.raises(ValueError):
        rmse([])


class Cheater:
    """Knows every held-out rating."""

    def __init__(self, truth):
        self.truth = truth

    def predict(self, user, movie):
        return self.truth[(user, movie)]


def test_cheating_predictor_scores_zero():
    recs = records(60)
    truth = {(r.user, r.movie): r.rating for r in recs}
    report = cross_validate(recs, plan=kfold_split(recs, 4), factory=lambda train: Cheater(truth))
    assert report.per_fold_rmse == [0.0] * 4
    assert report.config == {"factory": "<lambda>"}


class TrainMean:
    def __init__(self, train):
        self.mean = float(np.mean([r.rating for r in train]))

    def predict(self, user, movie):
        return self.mean


def test_train_mean_predictor_equals_baseline():
    recs = records(45, seed=3)
    plan = kfold_split(recs, 3, seed=9)
    report = cross_validate(recs, plan=plan, factory=TrainMean)
    for f in range(3):
        train = [recs[i].rating for i in plan.train_indices(f)]
        test = [recs[i].rating for i in plan.test_indices(f)]
        mean = sum(train) / len(train)
        want = math.sqrt(sum((mean - t) ** 2 for t in test) / len(test))
        assert report.per_fold_rmse[f] == pytest.approx(want, abs=1e-12)
    np.testing.assert_allclose(report.per_fold_rmse, report.baseline_per_fold, atol=1e-12)


def test_report_json_is_reproducible():
    recs = records(70, seed=1)
    plan = kfold_split(recs, 5, seed=42)
    one = cross_validate(recs, PredictorConfig(k=5), plan)
    two = cross_validate(recs, PredictorConfig(k=5), plan)
    assert one.to_json() == two.to_json()
    doc = json.loads(one.to_json())
    assert set(doc) == {"folds", "mean_rmse", "baseline_rmse", "seed", "config"}
    assert doc["mean_rmse"] == pytest.approx(np.mean(one.per_fold_rmse))
    assert "wall_time" in json.loads(one.to_json(timings=True))["folds"][0]


def test_mismatched_plan_rejected():
    with pytest.raises(ValueError):
        cross_validate(records(20), plan=kfold_split(21, 3))


def test_eval_report_means():
    r = EvalReport([1.0, 2.0], [2.0, 4.0], 42, {})
    assert (r.mean_rmse, r.baseline_rmse) == (1.5, 3.0)
