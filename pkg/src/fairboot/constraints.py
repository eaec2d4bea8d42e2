"""Feasible slab for the impact-constrained problem and the mistreatment penalty.

The slab {theta : |n . theta| <= eps} encodes a bound on the empirical
covariance between the sensitive attribute and the decision value; projection
onto it has a closed form. The mistreatment penalty is the squared weighted
mean of clamped margins over the negative-label rows of the constraint set,
either with the hard clamp min(0, u) or a smooth surrogate.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.special import expit

from .losses import CROSS_ENTROPY, LossSpec, Sample

HARD = "hard"
SMOOTH = "smooth"

PENALTY_MODES = (HARD, SMOOTH)
DEFAULT_TAU = 50.0


@dataclass(frozen=True)
class SlabConstraint:
    """Region between two parallel hyperplanes, |normal . theta| <= epsilon."""

    normal: np.ndarray
    epsilon: float

    def __post_init__(self) -> None:
        normal = np.asarray(self.normal, dtype=float)
        if normal.ndim != 1 or not np.all(np.isfinite(normal)):
            raise ValueError("slab normal must be a finite 1-d vector")
        if np.isnan(self.epsilon) or self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "epsilon", float(self.epsilon))

    @property
    def vacuous(self) -> bool:
        """True when the slab is all of parameter space."""
        return bool(np.all(self.normal == 0.0)) or np.isinf(self.epsilon)


def build_slab(constraint_data: Sequence[Sample], epsilon: float, spec: LossSpec) -> SlabConstraint:
    """Slab whose normal is the mean of (z_i - zbar) x_i over the constraint set."""
    if len(constraint_data) == 0:
        raise ValueError("constraint dataset is empty")
    x = np.stack([s.x for s in constraint_data])
    z = np.array([s.z for s in constraint_data], dtype=float)
    base = (z - z.mean()) @ x / len(constraint_data)
    if spec.kind != CROSS_ENTROPY:
        base = np.concatenate([base, -base])
    return SlabConstraint(normal=base, epsilon=epsilon)


def project_slab(constraint: SlabConstraint, theta: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the slab; identity on the boundary and inside."""
    theta = np.asarray(theta, dtype=float)
    score = float(constraint.normal @ theta)
    eps = constraint.epsilon
    if abs(score) <= eps:
        return theta
    norm_sq = float(constraint.normal @ constraint.normal)
    if score > eps:
        return theta - ((score - eps) / norm_sq) * constraint.normal
    return theta - ((score + eps) / norm_sq) * constraint.normal


# ---------------------------------------------------------------------------
# Mistreatment penalty
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class MistreatmentPenalty:
    """Squared weighted mean of clamped margins over negative-label rows.

    ``features`` and ``z`` hold the label -1 rows of the constraint set;
    ``zbar`` is the sensitive mean over the full constraint set. ``weight``
    multiplies the penalty in the training objective but not in
    :func:`penalty_value` itself.
    """

    weight: float
    features: np.ndarray
    z: np.ndarray
    zbar: float
    mode: str = HARD
    tau: float = DEFAULT_TAU

    def __post_init__(self) -> None:
        if self.weight < 0 or not np.isfinite(self.weight):
            raise ValueError(f"penalty weight must be finite and >= 0, got {self.weight}")
        if self.mode not in PENALTY_MODES:
            raise ValueError(f"unknown penalty mode {self.mode!r}, expected one of {PENALTY_MODES}")
        if self.mode == SMOOTH and not self.tau > 0:
            raise ValueError(f"smoothing scale must be > 0, got {self.tau}")
        features = np.asarray(self.features, dtype=float)
        z = np.asarray(self.z, dtype=float)
        if features.ndim != 2 or features.shape[0] == 0:
            raise ValueError("penalty needs at least one negative-label row")
        if not 0.0 <= self.zbar <= 1.0:
            raise ValueError(f"sensitive mean must lie in [0, 1], got {self.zbar}")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "_weights", z - self.zbar)

    @property
    def sample_weights(self) -> np.ndarray:
        return self._weights

    def smoothed(self, tau: float | None = None) -> "MistreatmentPenalty":
        """Copy of this penalty with the smooth clamp."""
        if self.mode == SMOOTH:
            return self
        return replace(self, mode=SMOOTH, tau=self.tau if tau is None else tau)


def build_penalty(
    constraint_data: Sequence[Sample],
    weight: float,
    spec: LossSpec,
    mode: str = HARD,
    tau: float = DEFAULT_TAU,
) -> MistreatmentPenalty:
    if len(constraint_data) == 0:
        raise ValueError("constraint dataset is empty")
    zbar = float(np.mean([s.z for s in constraint_data]))
    negatives = [s for s in constraint_data if s.y == -1]
    if not negatives:
        raise ValueError("constraint dataset has no label -1 rows")
    return MistreatmentPenalty(
        weight=float(weight),
        features=np.stack([s.x for s in negatives]),
        z=np.array([s.z for s in negatives], dtype=float),
        zbar=zbar,
        mode=mode,
        tau=tau,
    )


def _clamp(penalty: MistreatmentPenalty, u: np.ndarray) -> np.ndarray:
    if penalty.mode == HARD:
        return np.minimum(0.0, u)
    return -np.logaddexp(0.0, -penalty.tau * u) / penalty.tau


def _clamp_deriv(penalty: MistreatmentPenalty, u: np.ndarray) -> np.ndarray:
    if penalty.mode == HARD:
        # subgradient convention: exactly zero at the kink u == 0
        return (u < 0).astype(float)
    return expit(-penalty.tau * u)


def _margins(penalty: MistreatmentPenalty, theta: np.ndarray, spec: LossSpec) -> np.ndarray:
    """y_i times decision value for the stored rows; all rows have y_i = -1."""
    theta = np.asarray(theta, dtype=float)
    d = penalty.features.shape[1]
    if spec.kind == CROSS_ENTROPY:
        return -(penalty.features @ theta)
    return -(penalty.features @ (theta[:d] - theta[d:]))


def _decision_grads(penalty: MistreatmentPenalty, spec: LossSpec) -> np.ndarray:
    """Per-row gradient of the decision value with respect to theta."""
    if spec.kind == CROSS_ENTROPY:
        return penalty.features
    return np.hstack([penalty.features, -penalty.features])


def _weighted_margin_mean(
    penalty: MistreatmentPenalty, theta: np.ndarray, spec: LossSpec
) -> float:
    u = _margins(penalty, theta, spec)
    return float(penalty.sample_weights @ _clamp(penalty, u)) / u.shape[0]


def penalty_value(penalty: MistreatmentPenalty, theta: np.ndarray, spec: LossSpec) -> float:
    """Penalty before multiplication by ``penalty.weight``."""
    return _weighted_margin_mean(penalty, theta, spec) ** 2


def penalty_grad(penalty: MistreatmentPenalty, theta: np.ndarray, spec: LossSpec) -> np.ndarray:
    u = _margins(penalty, theta, spec)
    m = u.shape[0]
    g = float(penalty.sample_weights @ _clamp(penalty, u)) / m
    # rows have y_i = -1, so d(margin)/d(theta) = -(decision gradient)
    coeff = -penalty.sample_weights * _clamp_deriv(penalty, u)
    grad_g = coeff @ _decision_grads(penalty, spec) / m
    return 2.0 * g * grad_g


def penalty_hessian(penalty: MistreatmentPenalty, theta: np.ndarray, spec: LossSpec) -> np.ndarray:
    """Curvature of the penalty; zero in hard mode by the kink convention."""
    d = penalty.features.shape[1] if spec.kind == CROSS_ENTROPY else 2 * penalty.features.shape[1]
    if penalty.mode == HARD:
        return np.zeros((d, d))
    u = _margins(penalty, theta, spec)
    m = u.shape[0]
    tau = penalty.tau
    g = float(penalty.sample_weights @ _clamp(penalty, u)) / m
    grads = _decision_grads(penalty, spec)
    coeff = -penalty.sample_weights * _clamp_deriv(penalty, u)
    grad_g = coeff @ grads / m
    curv = -tau * expit(tau * u) * expit(-tau * u)
    hess_g = (grads * (penalty.sample_weights * curv)[:, None]).T @ grads / m
    return 2.0 * np.outer(grad_g, grad_g) + 2.0 * g * hess_g
