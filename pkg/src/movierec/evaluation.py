"""k-fold cross-validation and RMSE for the rating predictor."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import Dataset, RatingRecord
from .matrix import DEFAULT_SEED
from .recommenders import PredictorConfig, fit_predictor


@dataclass(frozen=True)
class FoldPlan:
    n_folds: int
    seed: int
    assignment: np.ndarray  # fold index per rating record

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != fold)

    def sizes(self) -> list[int]:
        return np.bincount(self.assignment, minlength=self.n_folds).tolist()


def kfold_split(ratings: Sequence | int, n_folds: int = 5, seed: int = DEFAULT_SEED) -> FoldPlan:
    """Seeded shuffle, then contiguous slices of near-equal size."""
    n = ratings if isinstance(ratings, int) else len(ratings)
    if n_folds < 2:
        raise ValueError(f"need at least 2 folds, got {n_folds}")
    if n < n_folds:
        raise ValueError(f"{n} ratings cannot fill {n_folds} folds")
    perm = np.random.default_rng(seed).permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    for fold, chunk in enumerate(np.array_split(perm, n_folds)):
        assignment[chunk] = fold
    return FoldPlan(n_folds, seed, assignment)


def rmse(pairs: Sequence[tuple[float, float]] | np.ndarray) -> float:
    """sqrt(mean((predicted - actual)²)) over (predicted, actual) pairs."""
    a = np.asarray(pairs, dtype=np.float64).reshape(-1, 2)
    if len(a) == 0:
        raise ValueError("rmse of an empty list is undefined")
    d = a[:, 0] - a[:, 1]
    return math.sqrt(float(np.mean(d * d)))


@dataclass
class EvalReport:
    per_fold_rmse: list[float]
    baseline_per_fold: list[float]
    seed: int
    config: dict
    wall_time: list[float] = field(default_factory=list)

    @property
    def mean_rmse(self) -> float:
        return float(np.mean(self.per_fold_rmse))

    @property
    def baseline_rmse(self) -> float:
        return float(np.mean(self.baseline_per_fold))

    def to_dict(self, timings: bool = False) -> dict:
        folds = []
        for i, (r, b) in enumerate(zip(self.per_fold_rmse, self.baseline_per_fold)):
            entry = {"fold": i, "rmse": r, "baseline_rmse": b}
            if timings:
                entry["wall_time"] = self.wall_time[i]
            folds.append(entry)
        return {
            "folds": folds,
            "mean_rmse": self.mean_rmse,
            "baseline_rmse": self.baseline_rmse,
            "seed": self.seed,
            "config": self.config,
        }

    def to_json(self, timings: bool = False) -> str:
        # Wall times are excluded by default so reports are reproducible byte for byte.
        return json.dumps(self.to_dict(timings), indent=2, sort_keys=True)


Factory = Callable[[Sequence[RatingRecord]], object]


def cross_validate(
    dataset: Dataset | Sequence[RatingRecord],
    config: PredictorConfig | None = None,
    plan: FoldPlan | None = None,
    factory: Factory | None = None,
) -> EvalReport:
    """Fit on each fold's complement, predict the held-out fold, report RMSE.

    ``factory(train_records)`` may replace the KNN predictor; it must return
    an object whose ``predict(user, movie)`` gives a float or an object with
    an ``estimate`` attribute.
    """
    config = config or PredictorConfig()
    records = list(dataset.ratings if isinstance(dataset, Dataset) else dataset)
    plan = plan or kfold_split(records, 5)
    if len(plan.assignment) != len(records):
        raise ValueError("fold plan does not match the rating count")
    fit = factory or (lambda train: fit_predictor(train, config))
    actual = np.array([r.rating for r in records])
    per_fold, baseline, times = [], [], []
    for fold in range(plan.n_folds):
        t0 = time.perf_counter()
        train = [records[i] for i in plan.train_indices(fold)]
        test = plan.test_indices(fold)
        model = fit(train)
        preds = []
        for i in test:
            p = model.predict(records[i].user, records[i].movie)
            preds.append(float(getattr(p, "estimate", p)))
        per_fold.append(rmse(np.column_stack([preds, actual[test]])))
        mean = float(np.mean([r.rating for r in train]))
        baseline.append(rmse(np.column_stack([np.full(len(test), mean), actual[test]])))
        times.append(time.perf_counter() - t0)
    echo = config.as_dict() if factory is None else {"factory": getattr(factory, "__name__", "custom")}
    return EvalReport(per_fold, baseline, plan.seed, echo, times)
