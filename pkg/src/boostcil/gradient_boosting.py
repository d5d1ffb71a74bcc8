"""Additive regression ensembles fit stagewise on residuals.

Small reference implementation of the residual-fitting principle on toy
regression: each step fits a weak learner to y - F_m(x) by least squares
and appends it with a step weight. Because the fit is a projection,
training MSE is non-increasing for step weights in (0, 2].
"""

from __future__ import annotations

import numpy as np


def _as_2d(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x.reshape(-1, 1) if x.ndim == 1 else x


class LinearLearner:
    """Least-squares affine regressor."""

    def fit(self, x, target):
        x = _as_2d(x)
        design = np.hstack([x, np.ones((len(x), 1))])
        self.coef, *_ = np.linalg.lstsq(design, np.asarray(target, dtype=np.float64), rcond=None)
        return self

    def __call__(self, x):
        x = _as_2d(x)
        return np.hstack([x, np.ones((len(x), 1))]) @ self.coef


class StumpLearner:
    """Depth-1 regression tree: one feature, one threshold, two leaf means."""

    def fit(self, x, target):
        x = _as_2d(x)
        target = np.asarray(target, dtype=np.float64)
        best = (np.inf, 0, -np.inf, target.mean(), target.mean())
        for j in range(x.shape[1]):
            col = x[:, j]
            values = np.unique(col)
            for thr in (values[:-1] + values[1:]) / 2.0:
                left = col <= thr
                lm = target[left].mean()
                rm = target[~left].mean()
                pred = np.where(left, lm, rm)
                sse = float(((target - pred) ** 2).sum())
                if sse < best[0]:
                    best = (sse, j, thr, lm, rm)
        _, self.feature, self.threshold, self.left_value, self.right_value = best
        return self

    def __call__(self, x):
        col = _as_2d(x)[:, self.feature]
        return np.where(col <= self.threshold, self.left_value, self.right_value)


LEARNER_FAMILIES = {"linear": LinearLearner, "stump": StumpLearner}


class AdditiveEnsemble:
    """Weighted sum of base learners; appending returns a new ensemble."""

    def __init__(self, members: tuple = ()):
        self.members = tuple(members)

    def __len__(self):
        return len(self.members)

    def predict(self, x) -> np.ndarray:
        x = _as_2d(x)
        out = np.zeros(len(x))
        for weight, learner in self.members:
            out += weight * learner(x)
        return out

    def append(self, learner, weight: float) -> "AdditiveEnsemble":
        return AdditiveEnsemble(self.members + ((float(weight), learner),))


def residual_target(y, prediction) -> np.ndarray:
    """y - F(x): the negative half-gradient of squared error in F."""
    y = np.asarray(y, dtype=np.float64)
    prediction = np.asarray(prediction, dtype=np.float64)
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(prediction))):
        raise FloatingPointError("residual inputs must be finite")
    return y - prediction


def boost_step(
    ensemble: AdditiveEnsemble, x, y, family: str = "stump", weight: float = 1.0
) -> AdditiveEnsemble:
    """Fit one weak learner to the current residuals and append it."""
    x = _as_2d(x)
    if len(x) == 0:
        raise ValueError("empty dataset")
    if family not in LEARNER_FAMILIES:
        raise ValueError(f"unknown learner family {family!r}")
    residual = residual_target(y, ensemble.predict(x))
    learner = LEARNER_FAMILIES[family]().fit(x, residual)
    return ensemble.append(learner, weight)


def training_mse(ensemble: AdditiveEnsemble, x, y) -> float:
    return float(np.mean((np.asarray(y, dtype=np.float64) - ensemble.predict(x)) ** 2))
