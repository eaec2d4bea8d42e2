"""Linear binary classifiers: per-sample losses, gradients, Hessians, predictions.

Two losses are supported. The ridge-regularized logistic loss acts on a plain
parameter vector of length d. The squared one-hot loss acts on a 2 x d
coefficient matrix stored row-major as a vector of length 2d; its decision
value is the difference of the two row scores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

CROSS_ENTROPY = "ce"
SQUARED_ONE_HOT = "squared"

LOSS_KINDS = (CROSS_ENTROPY, SQUARED_ONE_HOT)


@dataclass(frozen=True)
class Sample:
    """One observation: features ``x``, sensitive bit ``z``, label ``y`` in {-1, +1}."""

    x: np.ndarray
    z: int
    y: int

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 1:
            raise ValueError(f"features must be a 1-d vector, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("features must be finite")
        z = int(self.z)
        y = int(self.y)
        if z not in (0, 1):
            raise ValueError(f"sensitive attribute must be 0 or 1, got {self.z}")
        if y not in (-1, 1):
            raise ValueError(f"label must be -1 or +1, got {self.y}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "y", y)


@dataclass(frozen=True)
class LossSpec:
    """Loss family plus ridge coefficient.

    ``kappa`` may be zero for exploratory use, but the streaming training
    guarantees assume a strongly convex objective; the CLI therefore rejects
    ``kappa == 0`` for the logistic loss.
    """

    kind: str = CROSS_ENTROPY
    kappa: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}, expected one of {LOSS_KINDS}")
        if not np.isfinite(self.kappa) or self.kappa < 0:
            raise ValueError(f"ridge coefficient must be finite and >= 0, got {self.kappa}")

    def param_dim(self, feature_dim: int) -> int:
        return feature_dim if self.kind == CROSS_ENTROPY else 2 * feature_dim

    def feature_dim(self, param_dim: int) -> int:
        if self.kind == CROSS_ENTROPY:
            return param_dim
        if param_dim % 2 != 0:
            raise ValueError(f"squared one-hot parameters must have even length, got {param_dim}")
        return param_dim // 2


def one_hot(y: int) -> np.ndarray:
    """Two-class one-hot target: +1 -> (1, 0), -1 -> (0, 1)."""
    return np.array([1.0, 0.0]) if y == 1 else np.array([0.0, 1.0])


def _check_params(spec: LossSpec, theta: np.ndarray, feature_dim: int) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    expected = spec.param_dim(feature_dim)
    if theta.ndim != 1 or theta.shape[0] != expected:
        raise ValueError(
            f"parameter shape {theta.shape} does not match expected length {expected} "
            f"for {spec.kind} loss on {feature_dim} features"
        )
    if not np.all(np.isfinite(theta)):
        raise ValueError("parameters must be finite")
    return theta


def loss_value(spec: LossSpec, theta: np.ndarray, sample: Sample) -> float:
    theta = _check_params(spec, theta, sample.x.shape[0])
    ridge = 0.5 * spec.kappa * float(theta @ theta)
    if spec.kind == CROSS_ENTROPY:
        margin = sample.y * float(sample.x @ theta)
        # logaddexp(0, -m) = log(1 + exp(-m)) without overflow for large |m|
        return float(np.logaddexp(0.0, -margin)) + ridge
    residual = one_hot(sample.y) - theta.reshape(2, -1) @ sample.x
    return float(residual @ residual) + ridge


def loss_grad(spec: LossSpec, theta: np.ndarray, sample: Sample) -> np.ndarray:
    theta = _check_params(spec, theta, sample.x.shape[0])
    if spec.kind == CROSS_ENTROPY:
        margin = sample.y * float(sample.x @ theta)
        return (-sample.y * float(expit(-margin))) * sample.x + spec.kappa * theta
    coeffs = theta.reshape(2, -1)
    residual = one_hot(sample.y) - coeffs @ sample.x
    grad = (-2.0 * residual)[:, None] * sample.x[None, :]
    return grad.reshape(-1) + spec.kappa * theta


def loss_hessian(spec: LossSpec, theta: np.ndarray, sample: Sample) -> np.ndarray:
    theta = _check_params(spec, theta, sample.x.shape[0])
    d = sample.x.shape[0]
    if spec.kind == CROSS_ENTROPY:
        score = float(sample.x @ theta)
        weight = float(expit(score)) * float(expit(-score))
        return weight * np.outer(sample.x, sample.x) + spec.kappa * np.eye(d)
    block = 2.0 * np.outer(sample.x, sample.x)
    hess = np.zeros((2 * d, 2 * d))
    hess[:d, :d] = block
    hess[d:, d:] = block
    return hess + spec.kappa * np.eye(2 * d)


def decision_value(spec: LossSpec, theta: np.ndarray, x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    theta = _check_params(spec, theta, x.shape[0])
    if spec.kind == CROSS_ENTROPY:
        return float(theta @ x)
    d = x.shape[0]
    return float((theta[:d] - theta[d:]) @ x)


def predict(spec: LossSpec, theta: np.ndarray, x: np.ndarray) -> int:
    """Predicted label; a decision value of exactly zero maps to -1."""
    return 1 if decision_value(spec, theta, x) > 0 else -1
