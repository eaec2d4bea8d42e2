"""Streaming training loops.

The impact-constrained problem is solved by weighted dual averaging: gradients
are accumulated (scaled by the step size) into a dual vector whose negation is
projected onto the slab each step. The penalized mistreatment problem is
solved by plain SGD. Both report the running average of the iterates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .constraints import MistreatmentPenalty, SlabConstraint, penalty_grad, project_slab
from .losses import LossSpec, Sample, loss_grad

MODE_DI = "di"
MODE_DM = "dm"


@dataclass(frozen=True)
class StepSchedule:
    """Power-law step size eta_k = c * k**(-a) with 1/2 < a < 1."""

    c: float = 0.01
    a: float = 0.501

    def __post_init__(self) -> None:
        if not self.c > 0:
            raise ValueError(f"step constant must be > 0, got {self.c}")
        if not 0.5 < self.a < 1.0:
            raise ValueError(f"decay exponent must lie in (1/2, 1), got {self.a}")

    def eta(self, k: int) -> float:
        return self.c * k ** (-self.a)


@dataclass
class DualAveragingState:
    dual: np.ndarray
    theta: np.ndarray
    theta_bar: np.ndarray
    k: int = 0


@dataclass
class SgdState:
    theta: np.ndarray
    theta_bar: np.ndarray
    k: int = 0


def init_dual_averaging(dim: int, dual0: np.ndarray | None = None) -> DualAveragingState:
    dual = np.zeros(dim) if dual0 is None else np.asarray(dual0, dtype=float).copy()
    return DualAveragingState(dual=dual, theta=np.zeros(dim), theta_bar=np.zeros(dim), k=0)


def init_sgd(dim: int, theta0: np.ndarray | None = None) -> SgdState:
    theta = np.zeros(dim) if theta0 is None else np.asarray(theta0, dtype=float).copy()
    return SgdState(theta=theta, theta_bar=np.zeros(dim), k=0)


def _check_grad(grad: np.ndarray, k: int) -> np.ndarray:
    if not np.all(np.isfinite(grad)):
        raise RuntimeError(f"non-finite gradient at iteration {k}")
    return grad


def dual_averaging_step(
    state: DualAveragingState,
    constraint: SlabConstraint,
    spec: LossSpec,
    sched: StepSchedule,
    sample: Sample,
    multiplier: float = 1.0,
) -> DualAveragingState:
    """One step: project the negated dual, then accumulate the new gradient."""
    k = state.k + 1
    theta = project_slab(constraint, -state.dual)
    grad = _check_grad(loss_grad(spec, theta, sample), k)
    dual = state.dual + (sched.eta(k) * multiplier) * grad
    theta_bar = state.theta_bar + (theta - state.theta_bar) / k
    return DualAveragingState(dual=dual, theta=theta, theta_bar=theta_bar, k=k)


def sgd_step(
    state: SgdState,
    penalty: MistreatmentPenalty | None,
    spec: LossSpec,
    sched: StepSchedule,
    sample: Sample,
    multiplier: float = 1.0,
) -> SgdState:
    """One SGD step; the multiplier scales the full composite gradient."""
    k = state.k + 1
    grad = loss_grad(spec, state.theta, sample)
    if penalty is not None and penalty.weight != 0.0:
        grad = grad + penalty.weight * penalty_grad(penalty, state.theta, spec)
    grad = _check_grad(grad, k)
    theta = state.theta - (sched.eta(k) * multiplier) * grad
    theta_bar = state.theta_bar + (theta - state.theta_bar) / k
    return SgdState(theta=theta, theta_bar=theta_bar, k=k)


@dataclass
class Snapshot:
    k: int
    theta: np.ndarray
    theta_bar: np.ndarray


@dataclass
class TrainingResult:
    snapshots: list[Snapshot] = field(default_factory=list)
    final: DualAveragingState | SgdState | None = None


def run_training(
    stream: Iterable[Sample],
    mode: str,
    spec: LossSpec,
    problem: SlabConstraint | MistreatmentPenalty | None,
    sched: StepSchedule,
    iters: int,
    checkpoints: Sequence[int] | None = None,
) -> TrainingResult:
    """Consume ``iters`` samples from the stream, recording requested checkpoints."""
    if iters < 1:
        raise ValueError(f"iteration count must be >= 1, got {iters}")
    if mode not in (MODE_DI, MODE_DM):
        raise ValueError(f"unknown training mode {mode!r}")
    wanted = sorted(set(checkpoints)) if checkpoints is not None else [iters]
    if wanted and (wanted[0] < 1 or wanted[-1] > iters):
        raise ValueError(f"checkpoints must lie in [1, {iters}], got {wanted}")
    wanted_set = set(wanted)

    result = TrainingResult()
    state: DualAveragingState | SgdState | None = None
    it = iter(stream)
    for k in range(1, iters + 1):
        try:
            sample = next(it)
        except StopIteration:
            raise RuntimeError(f"sample stream exhausted at iteration {k} of {iters}") from None
        if state is None:
            dim = spec.param_dim(sample.x.shape[0])
            state = init_dual_averaging(dim) if mode == MODE_DI else init_sgd(dim)
        if mode == MODE_DI:
            state = dual_averaging_step(state, problem, spec, sched, sample)
        else:
            state = sgd_step(state, problem, spec, sched, sample)
        if k in wanted_set:
            result.snapshots.append(
                Snapshot(k=k, theta=state.theta.copy(), theta_bar=state.theta_bar.copy())
            )
    result.final = state
    return result
