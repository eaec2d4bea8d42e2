"""Held-out unfairness estimators, the mean interval score, and 1-d Wasserstein-2.

Both unfairness estimators threshold the decision value strictly at zero, so
they are invariant under positive rescaling of the parameters and a zero
decision value counts as a negative prediction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .losses import CROSS_ENTROPY, LossSpec, Sample

DISPARATE_IMPACT = "di"
DISPARATE_MISTREATMENT = "dm"

CRITERIA = (DISPARATE_IMPACT, DISPARATE_MISTREATMENT)


@dataclass(frozen=True)
class GroupCounts:
    """Group sizes of a held-out set: overall and restricted to label -1."""

    n0: int
    n1: int
    n0_neg: int
    n1_neg: int

    @classmethod
    def from_samples(cls, data: Sequence[Sample]) -> "GroupCounts":
        z = np.array([s.z for s in data])
        y = np.array([s.y for s in data])
        return cls(
            n0=int(np.sum(z == 0)),
            n1=int(np.sum(z == 1)),
            n0_neg=int(np.sum((z == 0) & (y == -1))),
            n1_neg=int(np.sum((z == 1) & (y == -1))),
        )

    def require(self, criterion: str) -> None:
        if criterion == DISPARATE_IMPACT:
            if self.n0 == 0:
                raise ValueError("held-out data has no samples with z=0")
            if self.n1 == 0:
                raise ValueError("held-out data has no samples with z=1")
        elif criterion == DISPARATE_MISTREATMENT:
            if self.n0_neg == 0:
                raise ValueError("held-out data has no samples with z=0 and y=-1")
            if self.n1_neg == 0:
                raise ValueError("held-out data has no samples with z=1 and y=-1")
        else:
            raise ValueError(f"unknown fairness criterion {criterion!r}")


def fairness_batch(
    thetas: np.ndarray,
    data: Sequence[Sample],
    criterion: str,
    spec: LossSpec,
) -> np.ndarray:
    """Evaluate the requested unfairness estimator at each row of ``thetas``."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    if len(data) == 0:
        raise ValueError("held-out data is empty")
    counts = GroupCounts.from_samples(data)
    counts.require(criterion)
    x = np.stack([s.x for s in data])
    z = np.array([s.z for s in data])
    y = np.array([s.y for s in data])
    d = x.shape[1]
    if spec.kind == CROSS_ENTROPY:
        scores = x @ thetas.T
    else:
        scores = x @ (thetas[:, :d] - thetas[:, d:]).T
    positive = scores > 0
    if criterion == DISPARATE_IMPACT:
        mask0, mask1 = z == 0, z == 1
    else:
        mask0, mask1 = (z == 0) & (y == -1), (z == 1) & (y == -1)
    rates0 = positive[mask0].mean(axis=0)
    rates1 = positive[mask1].mean(axis=0)
    return np.abs(rates0 - rates1)


def disparate_impact(theta: np.ndarray, data: Sequence[Sample], spec: LossSpec) -> float:
    """Absolute gap in positive-prediction rates between the sensitive groups."""
    return float(fairness_batch(np.asarray(theta)[None, :], data, DISPARATE_IMPACT, spec)[0])


def disparate_mistreatment(theta: np.ndarray, data: Sequence[Sample], spec: LossSpec) -> float:
    """Absolute gap in false-positive rates between the sensitive groups."""
    return float(
        fairness_batch(np.asarray(theta)[None, :], data, DISPARATE_MISTREATMENT, spec)[0]
    )


def mean_interval_score(lower: float, upper: float, samples: Sequence[float], alpha: float) -> float:
    """Interval width plus scaled penalties for sample points outside it."""
    if lower > upper:
        raise ValueError(f"interval bounds out of order: {lower} > {upper}")
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    s = np.asarray(samples, dtype=float)
    if s.size == 0:
        raise ValueError("sample list is empty")
    over = np.sum(np.maximum(s - upper, 0.0))
    under = np.sum(np.maximum(lower - s, 0.0))
    return float((upper - lower) + (2.0 / (s.size * alpha)) * (over + under))


def wasserstein2_1d(a: Sequence[float], b: Sequence[float]) -> float:
    """Quadratic transport distance between two empirical distributions on the line.

    Equal-size inputs pair sorted values directly; otherwise both empirical
    quantile functions are read at the midpoint levels of the larger size.
    """
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValueError("distance needs nonempty inputs")
    if a.size == b.size:
        return float(np.sqrt(np.mean((a - b) ** 2)))
    m = max(a.size, b.size)
    levels = (np.arange(m) + 0.5) / m
    qa = np.quantile(a, levels, method="linear")
    qb = np.quantile(b, levels, method="linear")
    return float(np.sqrt(np.mean((qa - qb) ** 2)))
