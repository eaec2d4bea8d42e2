"""Streaming multiplier bootstrap.

A bootstrap ensemble holds one unperturbed chain plus B replicate chains that
consume the same sample at every tick; each replicate scales its gradient by
an independent mean-1 variance-1 multiplier. The spread of the replicate
averages estimates the sampling distribution of the trained parameters, and
quantiles of the replicate unfairness values give confidence intervals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from scipy.special import expit

from .constraints import HARD, MistreatmentPenalty, SlabConstraint
from .losses import CROSS_ENTROPY, LossSpec, Sample
from .metrics import fairness_batch
from .training import (
    MODE_DI,
    MODE_DM,
    DualAveragingState,
    SgdState,
    StepSchedule,
    dual_averaging_step,
    init_dual_averaging,
    init_sgd,
    sgd_step,
)

UNIFORM = "uniform"
CONSTANT = "constant"

_SQRT3 = math.sqrt(3.0)


@dataclass(frozen=True)
class MultiplierDistribution:
    """Gradient multiplier law.

    ``uniform`` is U[1 - sqrt(3), 1 + sqrt(3)], which has mean 1 and variance
    1 exactly. ``constant`` always returns 1 and exists as a testing hook; it
    has variance 0 and produces degenerate intervals.
    """

    kind: str = UNIFORM

    def __post_init__(self) -> None:
        if self.kind not in (UNIFORM, CONSTANT):
            raise ValueError(f"unknown multiplier kind {self.kind!r}")

    @property
    def mean(self) -> float:
        return 1.0

    @property
    def variance(self) -> float:
        return 1.0 if self.kind == UNIFORM else 0.0

    def draw(self, rng: np.random.Generator) -> float:
        if self.kind == UNIFORM:
            return float(rng.uniform(1.0 - _SQRT3, 1.0 + _SQRT3))
        return 1.0


@dataclass(frozen=True)
class ConfidenceInterval:
    lower: float
    upper: float
    alpha: float
    criterion: str
    k: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.lower <= self.upper <= 1.0:
            raise ValueError(
                f"interval [{self.lower}, {self.upper}] is not an ordered pair in [0, 1]"
            )

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper


@dataclass
class BootstrapEnsemble:
    mode: str
    spec: LossSpec
    problem: SlabConstraint | MistreatmentPenalty | None
    sched: StepSchedule
    dist: MultiplierDistribution
    base: DualAveragingState | SgdState
    replicates: list[DualAveragingState | SgdState]
    rngs: list[np.random.Generator]

    @property
    def k(self) -> int:
        return self.base.k

    @property
    def size(self) -> int:
        return len(self.replicates)


def init_ensemble(
    mode: str,
    spec: LossSpec,
    problem: SlabConstraint | MistreatmentPenalty | None,
    sched: StepSchedule,
    dim: int,
    replicates: int,
    dist: MultiplierDistribution,
    seed: int | np.random.SeedSequence,
) -> BootstrapEnsemble:
    """Ensemble with identically initialized chains and one RNG stream per replicate."""
    if mode not in (MODE_DI, MODE_DM):
        raise ValueError(f"unknown training mode {mode!r}")
    if replicates < 2:
        raise ValueError(f"need at least 2 replicates, got {replicates}")
    seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    # children are keyed off the entropy directly so equal seeds always give
    # equal multiplier streams, independent of any prior spawning on `seed`
    children = [
        np.random.SeedSequence(entropy=seq.entropy, spawn_key=(*seq.spawn_key, b))
        for b in range(replicates)
    ]
    make = (lambda: init_dual_averaging(dim)) if mode == MODE_DI else (lambda: init_sgd(dim))
    return BootstrapEnsemble(
        mode=mode,
        spec=spec,
        problem=problem,
        sched=sched,
        dist=dist,
        base=make(),
        replicates=[make() for _ in range(replicates)],
        rngs=[np.random.Generator(np.random.PCG64(child)) for child in children],
    )


def ensemble_step(ensemble: BootstrapEnsemble, sample: Sample) -> BootstrapEnsemble:
    """Advance the base chain and every replicate on the same sample."""
    step = dual_averaging_step if ensemble.mode == MODE_DI else sgd_step
    ensemble.base = step(ensemble.base, ensemble.problem, ensemble.spec, ensemble.sched, sample)
    for b in range(ensemble.size):
        multiplier = ensemble.dist.draw(ensemble.rngs[b])
        try:
            ensemble.replicates[b] = step(
                ensemble.replicates[b],
                ensemble.problem,
                ensemble.spec,
                ensemble.sched,
                sample,
                multiplier=multiplier,
            )
        except Exception as exc:
            raise RuntimeError(f"bootstrap replicate {b} failed: {exc}") from exc
    return ensemble


def _project_rows(constraint: SlabConstraint | None, rows: np.ndarray) -> np.ndarray:
    """Row-wise slab projection of a stacked parameter matrix."""
    if constraint is None or constraint.vacuous:
        return rows
    scores = rows @ constraint.normal
    eps = constraint.epsilon
    norm_sq = float(constraint.normal @ constraint.normal)
    out = rows
    hi = scores > eps
    lo = scores < -eps
    if np.any(hi):
        out[hi] -= np.outer((scores[hi] - eps) / norm_sq, constraint.normal)
    if np.any(lo):
        out[lo] -= np.outer((scores[lo] + eps) / norm_sq, constraint.normal)
    return out


def _batch_loss_grads(spec: LossSpec, thetas: np.ndarray, sample: Sample) -> np.ndarray:
    """Per-sample loss gradient at every row of ``thetas``."""
    x = sample.x
    if spec.kind == CROSS_ENTROPY:
        margins = sample.y * (thetas @ x)
        coeff = -sample.y * expit(-margins)
        return coeff[:, None] * x[None, :] + spec.kappa * thetas
    d = x.shape[0]
    top = thetas[:, :d] @ x
    bottom = thetas[:, d:] @ x
    target_top = 1.0 if sample.y == 1 else 0.0
    target_bottom = 1.0 - target_top
    grad_top = (-2.0 * (target_top - top))[:, None] * x[None, :]
    grad_bottom = (-2.0 * (target_bottom - bottom))[:, None] * x[None, :]
    return np.hstack([grad_top, grad_bottom]) + spec.kappa * thetas


def _batch_penalty_grads(
    penalty: MistreatmentPenalty, thetas: np.ndarray, spec: LossSpec
) -> np.ndarray:
    """Penalty gradient at every row of ``thetas``."""
    features = penalty.features
    m = features.shape[0]
    d = features.shape[1]
    if spec.kind == CROSS_ENTROPY:
        directions = thetas
    else:
        directions = thetas[:, :d] - thetas[:, d:]
    margins = -(features @ directions.T)  # (m, rows); all stored labels are -1
    if penalty.mode == HARD:
        clamped = np.minimum(0.0, margins)
        slopes = (margins < 0).astype(float)
    else:
        clamped = -np.logaddexp(0.0, -penalty.tau * margins) / penalty.tau
        slopes = expit(-penalty.tau * margins)
    weights = penalty.sample_weights
    g = weights @ clamped / m
    core = -(weights[:, None] * slopes).T @ features / m
    if spec.kind != CROSS_ENTROPY:
        core = np.hstack([core, -core])
    return 2.0 * g[:, None] * core


def run_ensemble(
    ensemble: BootstrapEnsemble,
    stream,
    iters: int,
    checkpoints: Sequence[int] | None = None,
    callback=None,
) -> BootstrapEnsemble:
    """Advance the ensemble over ``iters`` stream samples with stacked arrays.

    Matches a loop of :func:`ensemble_step` up to floating-point reassociation
    and consumes the multiplier streams in the same order. States are written
    back at every checkpoint (where ``callback(ensemble)`` runs, if given) and
    at the end.
    """
    config_k = ensemble.k
    if config_k != 0:
        raise ValueError("run_ensemble expects a freshly initialized ensemble")
    wanted = set(checkpoints) if checkpoints is not None else set()
    rows = ensemble.size + 1  # row 0 is the unperturbed base chain
    dim = ensemble.base.theta.shape[0]
    thetas = np.zeros((rows, dim))
    theta_bars = np.zeros((rows, dim))
    duals = np.zeros((rows, dim)) if ensemble.mode == MODE_DI else None
    if ensemble.mode == MODE_DI:
        duals[0] = ensemble.base.dual
        for b, rep in enumerate(ensemble.replicates, start=1):
            duals[b] = rep.dual
    else:
        thetas[0] = ensemble.base.theta
        for b, rep in enumerate(ensemble.replicates, start=1):
            thetas[b] = rep.theta

    weight = 0.0
    if isinstance(ensemble.problem, MistreatmentPenalty) and ensemble.problem.weight != 0.0:
        weight = ensemble.problem.weight
    multipliers = np.ones(rows)

    def sync(k: int) -> None:
        if ensemble.mode == MODE_DI:
            ensemble.base = DualAveragingState(
                dual=duals[0].copy(), theta=thetas[0].copy(), theta_bar=theta_bars[0].copy(), k=k
            )
            ensemble.replicates = [
                DualAveragingState(
                    dual=duals[b].copy(),
                    theta=thetas[b].copy(),
                    theta_bar=theta_bars[b].copy(),
                    k=k,
                )
                for b in range(1, rows)
            ]
        else:
            ensemble.base = SgdState(
                theta=thetas[0].copy(), theta_bar=theta_bars[0].copy(), k=k
            )
            ensemble.replicates = [
                SgdState(theta=thetas[b].copy(), theta_bar=theta_bars[b].copy(), k=k)
                for b in range(1, rows)
            ]

    it = iter(stream)
    for k in range(1, iters + 1):
        try:
            sample = next(it)
        except StopIteration:
            raise RuntimeError(f"sample stream exhausted at iteration {k} of {iters}") from None
        for b in range(ensemble.size):
            multipliers[b + 1] = ensemble.dist.draw(ensemble.rngs[b])
        eta = ensemble.sched.eta(k)
        if ensemble.mode == MODE_DI:
            thetas = _project_rows(ensemble.problem, -duals)
            grads = _batch_loss_grads(ensemble.spec, thetas, sample)
            if not np.all(np.isfinite(grads)):
                bad = int(np.argwhere(~np.isfinite(grads))[0][0])
                raise RuntimeError(f"non-finite gradient at iteration {k} (chain {bad})")
            duals += (eta * multipliers)[:, None] * grads
        else:
            grads = _batch_loss_grads(ensemble.spec, thetas, sample)
            if weight != 0.0:
                grads = grads + weight * _batch_penalty_grads(ensemble.problem, thetas, ensemble.spec)
            if not np.all(np.isfinite(grads)):
                bad = int(np.argwhere(~np.isfinite(grads))[0][0])
                raise RuntimeError(f"non-finite gradient at iteration {k} (chain {bad})")
            thetas = thetas - (eta * multipliers)[:, None] * grads
        theta_bars += (thetas - theta_bars) / k
        if k in wanted:
            sync(k)
            if callback is not None:
                callback(ensemble)
    sync(iters)
    return ensemble


def quantile_interval(values: Sequence[float], alpha: float) -> tuple[float, float]:
    """Empirical quantiles at alpha/2 and 1 - alpha/2, linearly interpolated."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    lo, hi = np.quantile(np.asarray(values, dtype=float), [alpha / 2.0, 1.0 - alpha / 2.0])
    return float(lo), float(hi)


def replicate_fairness(
    ensemble: BootstrapEnsemble,
    heldout: Sequence[Sample],
    criterion: str,
    spec: LossSpec | None = None,
) -> np.ndarray:
    """Unfairness of each replicate's averaged parameters on the held-out set."""
    spec = ensemble.spec if spec is None else spec
    thetas = np.stack([rep.theta_bar for rep in ensemble.replicates])
    return fairness_batch(thetas, heldout, criterion, spec)


def bootstrap_ci(
    ensemble: BootstrapEnsemble,
    heldout: Sequence[Sample],
    criterion: str,
    alpha: float,
    spec: LossSpec | None = None,
) -> ConfidenceInterval:
    """Quantile interval of the replicate unfairness values at the current tick."""
    if ensemble.k < 1:
        raise ValueError("ensemble has not consumed any samples yet")
    values = replicate_fairness(ensemble, heldout, criterion, spec)
    lower, upper = quantile_interval(values, alpha)
    return ConfidenceInterval(
        lower=lower, upper=upper, alpha=alpha, criterion=criterion, k=ensemble.k
    )


def replicate_parameter_samples(ensemble: BootstrapEnsemble) -> list[np.ndarray]:
    """Averaged parameter vectors of all replicates, as copies."""
    if ensemble.k < 1:
        raise ValueError("ensemble has not consumed any samples yet")
    return [rep.theta_bar.copy() for rep in ensemble.replicates]
