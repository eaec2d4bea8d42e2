"""Reference asymptotics: locate the empirical optimum and assemble the
limit covariance of the averaged iterates.

For the slab-constrained problem the limit law is degenerate along the active
constraint normal; deviations live in the tangent space and their covariance
is a pseudo-inverse sandwich of the projected Hessian around the projected
gradient-noise covariance. For the penalized problem it is the classical
inverse-Hessian sandwich with a rank-one term from the deterministic penalty
gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .constraints import (
    MistreatmentPenalty,
    SlabConstraint,
    penalty_grad,
    penalty_hessian,
    penalty_value,
    project_slab,
)
from .losses import CROSS_ENTROPY, LossSpec, Sample
from .metrics import DISPARATE_IMPACT, DISPARATE_MISTREATMENT, fairness_batch

DEFAULT_TOL = 1e-8
_MAX_ITER = 200_000


# ---------------------------------------------------------------------------
# Batch loss helpers
# ---------------------------------------------------------------------------
def _arrays(samples: Sequence[Sample]) -> tuple[np.ndarray, np.ndarray]:
    if len(samples) == 0:
        raise ValueError("reference dataset is empty")
    x = np.stack([s.x for s in samples])
    y = np.array([s.y for s in samples], dtype=float)
    return x, y


def _one_hot_targets(y: np.ndarray) -> np.ndarray:
    return np.column_stack([(y == 1).astype(float), (y == -1).astype(float)])


def batch_loss_value(spec: LossSpec, theta: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    ridge = 0.5 * spec.kappa * float(theta @ theta)
    if spec.kind == CROSS_ENTROPY:
        margins = y * (x @ theta)
        return float(np.mean(np.logaddexp(0.0, -margins))) + ridge
    coeffs = theta.reshape(2, -1)
    resid = _one_hot_targets(y) - x @ coeffs.T
    return float(np.mean(np.sum(resid**2, axis=1))) + ridge


def batch_loss_grad(spec: LossSpec, theta: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    if spec.kind == CROSS_ENTROPY:
        margins = y * (x @ theta)
        coeff = -y * expit(-margins)
        return coeff @ x / x.shape[0] + spec.kappa * theta
    coeffs = theta.reshape(2, -1)
    resid = _one_hot_targets(y) - x @ coeffs.T
    grad = -2.0 * resid.T @ x / x.shape[0]
    return grad.reshape(-1) + spec.kappa * theta


def per_sample_grads(spec: LossSpec, theta: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-sample loss gradients stacked as rows; excludes any penalty term."""
    if spec.kind == CROSS_ENTROPY:
        margins = y * (x @ theta)
        coeff = -y * expit(-margins)
        return coeff[:, None] * x + spec.kappa * theta[None, :]
    coeffs = theta.reshape(2, -1)
    resid = _one_hot_targets(y) - x @ coeffs.T
    return np.hstack([-2.0 * resid[:, :1] * x, -2.0 * resid[:, 1:2] * x]) + spec.kappa * theta[None, :]


def batch_loss_hessian(spec: LossSpec, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    d = x.shape[1]
    if spec.kind == CROSS_ENTROPY:
        scores = x @ theta
        weights = expit(scores) * expit(-scores)
        return (x * weights[:, None]).T @ x / x.shape[0] + spec.kappa * np.eye(d)
    second_moment = x.T @ x / x.shape[0]
    hess = np.zeros((2 * d, 2 * d))
    hess[:d, :d] = 2.0 * second_moment
    hess[d:, d:] = 2.0 * second_moment
    return hess + spec.kappa * np.eye(2 * d)


# ---------------------------------------------------------------------------
# Deterministic optimizer
# ---------------------------------------------------------------------------
def _accelerated_projected_descent(
    value: Callable[[np.ndarray], float],
    grad: Callable[[np.ndarray], np.ndarray],
    project: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    tol: float,
    max_iter: int,
) -> np.ndarray:
    """Projected full-gradient descent with momentum, restarts, and backtracking.

    Stops once the distance between successive iterates drops below ``tol``.
    """
    x = project(np.asarray(x0, dtype=float).copy())
    x_prev = x.copy()
    t = 1.0
    lipschitz = 1.0
    residual = np.inf
    for it in range(max_iter):
        beta = (t - 1.0) / (0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t)))
        yk = x + beta * (x - x_prev)
        fy = value(yk)
        gy = grad(yk)
        while True:
            x_new = project(yk - gy / lipschitz)
            diff = x_new - yk
            quad = fy + float(gy @ diff) + 0.5 * lipschitz * float(diff @ diff)
            if value(x_new) <= quad + 1e-12 * max(1.0, abs(fy)):
                break
            lipschitz *= 2.0
            if lipschitz > 1e18:
                raise RuntimeError("optimizer backtracking failed; objective may be unbounded")
        residual = float(np.linalg.norm(x_new - x))
        if residual < tol and it > 0:
            return x_new
        if float(gy @ (x_new - x)) > 0:
            t = 1.0  # momentum restart on an uphill move
        t = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        x_prev = x
        x = x_new
        lipschitz = max(lipschitz * 0.95, 1e-12)
    raise RuntimeError(
        f"optimizer did not converge within {max_iter} iterations; last residual {residual:.3e}"
    )


def find_optimum(
    spec: LossSpec,
    problem: SlabConstraint | MistreatmentPenalty | None,
    reference_data: Sequence[Sample],
    tol: float = DEFAULT_TOL,
    max_iter: int = _MAX_ITER,
) -> np.ndarray:
    """Empirical optimum on a fixed reference dataset.

    Slab problems use projected gradient descent; penalized problems use
    gradient descent on loss plus penalty, with hard-clamp penalties replaced
    by their smooth surrogate so the objective is differentiable.
    """
    if not tol > 0:
        raise ValueError(f"tolerance must be > 0, got {tol}")
    x, y = _arrays(reference_data)
    dim = spec.param_dim(x.shape[1])

    if isinstance(problem, MistreatmentPenalty):
        pen = problem.smoothed()
        weight = pen.weight

        def value(theta: np.ndarray) -> float:
            return batch_loss_value(spec, theta, x, y) + weight * penalty_value(pen, theta, spec)

        def grad(theta: np.ndarray) -> np.ndarray:
            return batch_loss_grad(spec, theta, x, y) + weight * penalty_grad(pen, theta, spec)

        def project(theta: np.ndarray) -> np.ndarray:
            return theta

    else:
        slab = problem if problem is not None else SlabConstraint(np.zeros(dim), np.inf)

        def value(theta: np.ndarray) -> float:
            return batch_loss_value(spec, theta, x, y)

        def grad(theta: np.ndarray) -> np.ndarray:
            return batch_loss_grad(spec, theta, x, y)

        def project(theta: np.ndarray) -> np.ndarray:
            return project_slab(slab, theta)

    return _accelerated_projected_descent(value, grad, project, np.zeros(dim), tol, max_iter)


# ---------------------------------------------------------------------------
# Covariance estimation and assembly
# ---------------------------------------------------------------------------
def estimate_noise_cov(
    spec: LossSpec,
    problem: SlabConstraint | MistreatmentPenalty | None,
    theta_star: np.ndarray,
    samples: Sequence[Sample],
) -> np.ndarray:
    """Sample covariance (denominator N) of the per-sample loss gradients.

    The penalty gradient is deterministic and carries no noise, so it never
    enters here regardless of ``problem``.
    """
    if len(samples) < 2:
        raise ValueError("noise covariance needs at least 2 samples")
    x, y = _arrays(samples)
    grads = per_sample_grads(spec, np.asarray(theta_star, dtype=float), x, y)
    centered = grads - grads.mean(axis=0)
    cov = centered.T @ centered / grads.shape[0]
    return 0.5 * (cov + cov.T)


def estimate_hessian(
    spec: LossSpec,
    problem: SlabConstraint | MistreatmentPenalty | None,
    theta_star: np.ndarray,
    samples: Sequence[Sample],
) -> np.ndarray:
    """Mean loss Hessian, plus the weighted penalty curvature for smooth penalties."""
    x, _y = _arrays(samples)
    theta_star = np.asarray(theta_star, dtype=float)
    hess = batch_loss_hessian(spec, theta_star, x)
    if isinstance(problem, MistreatmentPenalty) and problem.weight != 0.0:
        hess = hess + problem.weight * penalty_hessian(problem, theta_star, spec)
    return 0.5 * (hess + hess.T)


def pinv_sym(matrix: np.ndarray, rel_tol: float | None = None) -> np.ndarray:
    """Pseudo-inverse of a symmetric matrix via eigendecomposition.

    Eigenvalues with magnitude at most ``rel_tol`` times the largest magnitude
    are treated as exact zeros.
    """
    matrix = np.asarray(matrix, dtype=float)
    if rel_tol is None:
        rel_tol = 1e-10 * matrix.shape[0]
    eigvals, eigvecs = np.linalg.eigh(0.5 * (matrix + matrix.T))
    scale = float(np.max(np.abs(eigvals), initial=0.0))
    keep = np.abs(eigvals) > rel_tol * scale
    inv = np.zeros_like(eigvals)
    inv[keep] = 1.0 / eigvals[keep]
    out = (eigvecs * inv) @ eigvecs.T
    return 0.5 * (out + out.T)


def tangent_projector(normal: np.ndarray) -> np.ndarray:
    """Orthogonal projector onto the hyperplane with the given normal (I when zero)."""
    normal = np.asarray(normal, dtype=float)
    dim = normal.shape[0]
    norm_sq = float(normal @ normal)
    if norm_sq == 0.0:
        return np.eye(dim)
    return np.eye(dim) - np.outer(normal, normal) / norm_sq


def di_covariance(hessian: np.ndarray, noise_cov: np.ndarray, normal: np.ndarray) -> np.ndarray:
    """Tangent-space sandwich: pinv(P H P) P S P pinv(P H P).

    A zero normal means no active constraint, reducing to pinv(H) S pinv(H).
    """
    proj = tangent_projector(normal)
    core = pinv_sym(proj @ hessian @ proj)
    out = core @ (proj @ noise_cov @ proj) @ core
    return 0.5 * (out + out.T)


def di_covariance_direct(hessian: np.ndarray, noise_cov: np.ndarray, normal: np.ndarray) -> np.ndarray:
    """Alternative assembly P pinv(H) P S P pinv(H) P, reported for comparison."""
    proj = tangent_projector(normal)
    side = proj @ pinv_sym(hessian) @ proj
    out = side @ noise_cov @ side
    return 0.5 * (out + out.T)


def dm_covariance(
    hessian: np.ndarray,
    noise_cov: np.ndarray,
    penalty_grad_at_star: np.ndarray,
    weight: float,
) -> np.ndarray:
    """Inverse-Hessian sandwich around the noise covariance plus the
    weighted outer product of the deterministic penalty gradient."""
    g = np.asarray(penalty_grad_at_star, dtype=float)
    middle = noise_cov + (weight**2) * np.outer(g, g)
    try:
        half = np.linalg.solve(hessian, middle)
        out = np.linalg.solve(hessian, half.T).T
    except np.linalg.LinAlgError as exc:
        raise ValueError("hessian is singular; cannot assemble the covariance") from exc
    return 0.5 * (out + out.T)


def sample_limit_distribution(
    optimum: np.ndarray,
    cov: np.ndarray,
    k: int,
    m: int,
    seed: int | np.random.SeedSequence | np.random.Generator,
) -> np.ndarray:
    """Draws from N(optimum, cov / k) through the symmetric PSD square root."""
    if k < 1:
        raise ValueError(f"iteration count must be >= 1, got {k}")
    optimum = np.asarray(optimum, dtype=float)
    cov = np.asarray(cov, dtype=float)
    eigvals, eigvecs = np.linalg.eigh(0.5 * (cov + cov.T))
    top = float(np.max(eigvals, initial=0.0))
    worst = float(np.min(eigvals, initial=0.0))
    if worst < -1e-8 * max(top, abs(worst)):
        raise ValueError(f"covariance has a significantly negative eigenvalue {worst:.3e}")
    root = (eigvecs * np.sqrt(np.clip(eigvals, 0.0, None) / k)) @ eigvecs.T
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    draws = rng.standard_normal((m, optimum.shape[0]))
    return optimum[None, :] + draws @ root


def fairness_of_draws(
    draws: np.ndarray,
    data: Sequence[Sample],
    criterion: str,
    spec: LossSpec,
) -> np.ndarray:
    """Unfairness estimator applied to each parameter draw."""
    return fairness_batch(np.asarray(draws, dtype=float), data, criterion, spec)


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------
@dataclass
class CovarianceReport:
    criterion: str
    optimum: np.ndarray
    hessian: np.ndarray
    noise_cov: np.ndarray
    projector: np.ndarray
    asymptotic_cov: np.ndarray
    alt_cov: np.ndarray | None = None
    alt_gap: float | None = None
    constraint_active: bool | None = None


def _slab_active(slab: SlabConstraint, optimum: np.ndarray, tol: float) -> bool:
    if slab.vacuous:
        return False
    gap = slab.epsilon - abs(float(slab.normal @ optimum))
    return gap <= max(1e4 * tol, 1e-12) * max(1.0, slab.epsilon)


def covariance_report(
    spec: LossSpec,
    problem: SlabConstraint | MistreatmentPenalty,
    reference_data: Sequence[Sample],
    tol: float = DEFAULT_TOL,
) -> CovarianceReport:
    """Locate the optimum on the reference data and assemble the limit covariance."""
    optimum = find_optimum(spec, problem, reference_data, tol=tol)
    noise = estimate_noise_cov(spec, problem, optimum, reference_data)
    hessian = estimate_hessian(spec, problem, optimum, reference_data)
    if isinstance(problem, MistreatmentPenalty):
        pen_grad = penalty_grad(problem, optimum, spec)
        cov = dm_covariance(hessian, noise, pen_grad, problem.weight)
        return CovarianceReport(
            criterion=DISPARATE_MISTREATMENT,
            optimum=optimum,
            hessian=hessian,
            noise_cov=noise,
            projector=np.eye(hessian.shape[0]),
            asymptotic_cov=cov,
        )
    active = _slab_active(problem, optimum, tol)
    normal = problem.normal if active else np.zeros_like(optimum)
    cov = di_covariance(hessian, noise, normal)
    alt = di_covariance_direct(hessian, noise, normal)
    gap = float(np.linalg.norm(cov - alt))
    return CovarianceReport(
        criterion=DISPARATE_IMPACT,
        optimum=optimum,
        hessian=hessian,
        noise_cov=noise,
        projector=tangent_projector(normal),
        asymptotic_cov=cov,
        alt_cov=alt,
        alt_gap=gap,
        constraint_active=active,
    )
