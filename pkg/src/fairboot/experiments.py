"""Run orchestration shared by the CLI commands and the acceptance suite.

A prepared problem bundles the dataset, the split, the constraint or penalty
built from the constraint set, and the step schedule. Repetition r draws its
stream with seed tag (STREAM, r); the designated bootstrap run is repetition
0 and seeds its replicate multipliers with tag (MULTIPLIER, 0); reference
draws from the limit distribution use tag (THEORY, checkpoint index).
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .asymptotics import (
    CovarianceReport,
    covariance_report,
    fairness_of_draws,
    sample_limit_distribution,
)
from .bootstrap import (
    BootstrapEnsemble,
    MultiplierDistribution,
    init_ensemble,
    quantile_interval,
    replicate_fairness,
    replicate_parameter_samples,
    run_ensemble,
)
from .config import (
    SYNTHETIC_DI,
    SYNTHETIC_DM,
    TAG_DATA,
    TAG_MULTIPLIER,
    TAG_SPLIT,
    TAG_STREAM,
    TAG_THEORY,
    ExperimentConfig,
)
from .constraints import MistreatmentPenalty, SlabConstraint, build_penalty, build_slab
from .data import FLOAT_FMT, Dataset, PoolStream, SplitConfig, load_csv, split, synthetic_di, synthetic_dm
from .losses import LossSpec, Sample
from .metrics import fairness_batch, mean_interval_score, wasserstein2_1d
from .training import StepSchedule, run_training


@dataclass
class PreparedProblem:
    config: ExperimentConfig
    dataset: Dataset
    constraint_set: list[Sample]
    heldout: list[Sample]
    base_stream: PoolStream
    spec: LossSpec
    problem: SlabConstraint | MistreatmentPenalty
    sched: StepSchedule
    dist: MultiplierDistribution
    dim: int

    @property
    def criterion(self) -> str:
        return self.config.mode

    def stream_for(self, rep: int) -> PoolStream:
        return self.base_stream.with_seed(self.config.seed_sequence(TAG_STREAM, rep)).with_length(
            self.config.iters
        )

    def pool(self) -> list[Sample]:
        return list(self.base_stream.pool)


def load_dataset(config: ExperimentConfig) -> Dataset:
    if config.data == SYNTHETIC_DI:
        return synthetic_di(config.n_data, config.seed_sequence(TAG_DATA))
    if config.data == SYNTHETIC_DM:
        return synthetic_dm(config.n_data, config.seed_sequence(TAG_DATA))
    return load_csv(config.data, config.csv_schema())


def prepare_problem(config: ExperimentConfig) -> PreparedProblem:
    dataset = load_dataset(config)
    constraint_set, heldout, stream = split(
        dataset,
        SplitConfig(
            n_constraint=config.n_constraint,
            n_heldout=config.n_heldout,
            stream_length=config.iters,
            seed=config.seed_sequence(TAG_SPLIT),
        ),
    )
    spec = LossSpec(kind=config.loss, kappa=config.kappa)
    if config.mode == "di":
        problem = build_slab(constraint_set, config.epsilon, spec)
        if np.all(problem.normal == 0.0):
            warnings.warn("constraint normal is zero; the slab constrains nothing")
    else:
        problem = build_penalty(
            constraint_set, config.r2, spec, mode=config.penalty, tau=config.tau
        )
    return PreparedProblem(
        config=config,
        dataset=dataset,
        constraint_set=constraint_set,
        heldout=heldout,
        base_stream=stream,
        spec=spec,
        problem=problem,
        sched=StepSchedule(c=config.step_c, a=config.step_a),
        dist=MultiplierDistribution(kind=config.multiplier),
        dim=spec.param_dim(dataset.feature_dim),
    )


# ---------------------------------------------------------------------------
# Single runs
# ---------------------------------------------------------------------------
@dataclass
class TrainOutput:
    checkpoints: list[int]
    theta_bars: np.ndarray  # (C, dim)
    phi: np.ndarray  # (C,)


def run_single(prep: PreparedProblem, rep: int = 0) -> TrainOutput:
    """One plain training run, with unfairness evaluated at every checkpoint."""
    checkpoints = prep.config.resolved_checkpoints()
    result = run_training(
        prep.stream_for(rep),
        prep.config.mode,
        prep.spec,
        prep.problem,
        prep.sched,
        prep.config.iters,
        checkpoints,
    )
    theta_bars = np.stack([snap.theta_bar for snap in result.snapshots])
    phi = fairness_batch(theta_bars, prep.heldout, prep.criterion, prep.spec)
    return TrainOutput(checkpoints=checkpoints, theta_bars=theta_bars, phi=phi)


@dataclass
class BootstrapOutput:
    checkpoints: list[int]
    base_phi: np.ndarray  # (C,)
    ci_lower: np.ndarray  # (C,)
    ci_upper: np.ndarray  # (C,)
    base_theta_bars: np.ndarray  # (C, dim)
    replicate_phi_final: np.ndarray  # (B,)
    replicate_params_final: np.ndarray  # (B, dim)
    final_theta_bar: np.ndarray
    ensemble: BootstrapEnsemble = field(repr=False)


def run_bootstrap(prep: PreparedProblem, rep: int = 0) -> BootstrapOutput:
    """Designated bootstrap run: base chain plus replicates on one stream."""
    config = prep.config
    checkpoints = config.resolved_checkpoints()
    wanted = set(checkpoints)
    ensemble = init_ensemble(
        mode=config.mode,
        spec=prep.spec,
        problem=prep.problem,
        sched=prep.sched,
        dim=prep.dim,
        replicates=config.b,
        dist=prep.dist,
        seed=config.seed_sequence(TAG_MULTIPLIER, rep),
    )
    alpha = config.alpha
    base_phi, lower, upper, base_bars = [], [], [], []

    def record(ens: BootstrapEnsemble) -> None:
        values = replicate_fairness(ens, prep.heldout, prep.criterion)
        lo, hi = quantile_interval(values, alpha)
        base_phi.append(
            float(fairness_batch(ens.base.theta_bar, prep.heldout, prep.criterion, prep.spec)[0])
        )
        lower.append(lo)
        upper.append(hi)
        base_bars.append(ens.base.theta_bar.copy())

    run_ensemble(ensemble, prep.stream_for(rep), config.iters, sorted(wanted), record)
    return BootstrapOutput(
        checkpoints=checkpoints,
        base_phi=np.array(base_phi),
        ci_lower=np.array(lower),
        ci_upper=np.array(upper),
        base_theta_bars=np.stack(base_bars),
        replicate_phi_final=replicate_fairness(ensemble, prep.heldout, prep.criterion),
        replicate_params_final=np.stack(replicate_parameter_samples(ensemble)),
        final_theta_bar=ensemble.base.theta_bar.copy(),
        ensemble=ensemble,
    )


# ---------------------------------------------------------------------------
# Repetition experiment
# ---------------------------------------------------------------------------
@dataclass
class ExperimentOutput:
    checkpoints: list[int]
    rep_phi: np.ndarray  # (R, C) unfairness trajectories across repetitions
    designated: BootstrapOutput
    theory_phi: np.ndarray  # (C, m) unfairness of limit-distribution draws
    w2: np.ndarray  # (C,)
    mis: np.ndarray  # (C,)
    coverage: float
    oracle: CovarianceReport
    summary: dict


def run_experiment(config: ExperimentConfig, prep: PreparedProblem | None = None) -> ExperimentOutput:
    if prep is None:
        prep = prepare_problem(config)
    checkpoints = config.resolved_checkpoints()
    oracle = covariance_report(prep.spec, prep.problem, prep.pool())

    designated = run_bootstrap(prep, rep=0)
    rep_phi = [designated.base_phi]
    for rep in range(1, config.reps):
        try:
            rep_phi.append(run_single(prep, rep=rep).phi)
        except Exception as exc:
            raise RuntimeError(f"repetition {rep} failed: {exc}") from exc
    rep_matrix = np.stack(rep_phi)

    theory_rows = []
    for index, k in enumerate(checkpoints):
        draws = sample_limit_distribution(
            oracle.optimum,
            oracle.asymptotic_cov,
            k,
            config.theory_draws,
            config.seed_sequence(TAG_THEORY, index),
        )
        theory_rows.append(fairness_of_draws(draws, prep.heldout, prep.criterion, prep.spec))
    theory = np.stack(theory_rows)

    w2 = np.array(
        [wasserstein2_1d(rep_matrix[:, i], theory[i]) for i in range(len(checkpoints))]
    )
    mis = np.array(
        [
            mean_interval_score(
                designated.ci_lower[i], designated.ci_upper[i], rep_matrix[:, i], config.alpha
            )
            for i in range(len(checkpoints))
        ]
    )
    final = rep_matrix[:, -1]
    covered = (final >= designated.ci_lower[-1]) & (final <= designated.ci_upper[-1])
    coverage = float(np.mean(covered))
    summary = {
        "criterion": prep.criterion,
        "mean_final_phi": float(final.mean()),
        "quantile_2.5_final_phi": float(np.quantile(final, 0.025)),
        "quantile_97.5_final_phi": float(np.quantile(final, 0.975)),
        "coverage": coverage,
        "ci_final": [float(designated.ci_lower[-1]), float(designated.ci_upper[-1])],
        "optimum_phi": float(
            fairness_batch(oracle.optimum, prep.heldout, prep.criterion, prep.spec)[0]
        ),
    }
    return ExperimentOutput(
        checkpoints=checkpoints,
        rep_phi=rep_matrix,
        designated=designated,
        theory_phi=theory,
        w2=w2,
        mis=mis,
        coverage=coverage,
        oracle=oracle,
        summary=summary,
    )


# ---------------------------------------------------------------------------
# File output
# ---------------------------------------------------------------------------
def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return FLOAT_FMT % float(value)


def write_csv(path: str, header: Sequence[str], rows, config: ExperimentConfig) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(f"# {config.summary_line()}\n")
        handle.write(",".join(header) + "\n")
        for row in rows:
            handle.write(",".join(_fmt(v) for v in row) + "\n")


def write_json(path: str, payload: dict, config: ExperimentConfig) -> None:
    body = {"config": config.resolved(), **payload}
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(body, handle, indent=2, sort_keys=True, default=_json_default)
        handle.write("\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def ensure_outdir(config: ExperimentConfig) -> str:
    os.makedirs(config.out, exist_ok=True)
    return config.out


def write_train_outputs(config: ExperimentConfig, prep: PreparedProblem, out: TrainOutput) -> list[str]:
    outdir = ensure_outdir(config)
    trajectory = os.path.join(outdir, "trajectory.csv")
    header = ["k", *(f"theta_bar_{i}" for i in range(out.theta_bars.shape[1])), "phi"]
    rows = (
        [k, *theta, phi]
        for k, theta, phi in zip(out.checkpoints, out.theta_bars, out.phi)
    )
    write_csv(trajectory, header, rows, config)
    final = os.path.join(outdir, "final.json")
    write_json(
        final,
        {
            "k": out.checkpoints[-1],
            "theta_bar": out.theta_bars[-1],
            "phi": float(out.phi[-1]),
            "seed": config.seed,
        },
        config,
    )
    return [trajectory, final]


def write_bootstrap_outputs(
    config: ExperimentConfig, prep: PreparedProblem, out: BootstrapOutput
) -> list[str]:
    outdir = ensure_outdir(config)
    ci_curve = os.path.join(outdir, "ci_curve.csv")
    write_csv(
        ci_curve,
        ["k", "phi", "ci_lower", "ci_upper"],
        (
            [k, phi, lo, hi]
            for k, phi, lo, hi in zip(out.checkpoints, out.base_phi, out.ci_lower, out.ci_upper)
        ),
        config,
    )
    replicate_phi = os.path.join(outdir, "replicate_phi.csv")
    write_csv(
        replicate_phi,
        ["replicate", "phi"],
        ([b, phi] for b, phi in enumerate(out.replicate_phi_final)),
        config,
    )
    replicate_params = os.path.join(outdir, "replicate_params.csv")
    write_csv(
        replicate_params,
        ["replicate", *(f"theta_bar_{i}" for i in range(out.replicate_params_final.shape[1]))],
        ([b, *row] for b, row in enumerate(out.replicate_params_final)),
        config,
    )
    return [ci_curve, replicate_phi, replicate_params]


def write_experiment_outputs(config: ExperimentConfig, out: ExperimentOutput) -> list[str]:
    outdir = ensure_outdir(config)
    paths = []

    trajectories = os.path.join(outdir, "trajectories.csv")
    write_csv(
        trajectories,
        ["k", "rep", "phi"],
        (
            [k, rep, out.rep_phi[rep, i]]
            for i, k in enumerate(out.checkpoints)
            for rep in range(out.rep_phi.shape[0])
        ),
        config,
    )
    paths.append(trajectories)

    ci_band = os.path.join(outdir, "ci_band.csv")
    write_csv(
        ci_band,
        ["k", "phi", "ci_lower", "ci_upper"],
        (
            [k, out.designated.base_phi[i], out.designated.ci_lower[i], out.designated.ci_upper[i]]
            for i, k in enumerate(out.checkpoints)
        ),
        config,
    )
    paths.append(ci_band)

    w2_curve = os.path.join(outdir, "w2_curve.csv")
    write_csv(
        w2_curve,
        ["k", "w2"],
        ([k, out.w2[i]] for i, k in enumerate(out.checkpoints)),
        config,
    )
    paths.append(w2_curve)

    mis_curve = os.path.join(outdir, "mis_curve.csv")
    write_csv(
        mis_curve,
        ["k", "mis"],
        ([k, out.mis[i]] for i, k in enumerate(out.checkpoints)),
        config,
    )
    paths.append(mis_curve)

    theoretical = os.path.join(outdir, "theoretical_phi.csv")
    write_csv(
        theoretical,
        ["k", "draw", "phi"],
        (
            [k, j, out.theory_phi[i, j]]
            for i, k in enumerate(out.checkpoints)
            for j in range(out.theory_phi.shape[1])
        ),
        config,
    )
    paths.append(theoretical)

    summary = os.path.join(outdir, "summary.json")
    write_json(summary, dict(out.summary), config)
    paths.append(summary)
    return paths


def write_asymptotics_outputs(
    config: ExperimentConfig, prep: PreparedProblem, report: CovarianceReport
) -> list[str]:
    outdir = ensure_outdir(config)
    path = os.path.join(outdir, "asymptotics.json")
    eigenvalues = np.linalg.eigvalsh(report.asymptotic_cov)
    payload = {
        "criterion": report.criterion,
        "optimum": report.optimum,
        "hessian": report.hessian,
        "noise_cov": report.noise_cov,
        "projector": report.projector,
        "asymptotic_cov": report.asymptotic_cov,
        "asymptotic_cov_eigenvalues": eigenvalues,
        "constraint_active": report.constraint_active,
    }
    if isinstance(prep.problem, SlabConstraint):
        payload["slab_normal"] = prep.problem.normal
        payload["cov_normal_product_norm"] = float(
            np.linalg.norm(report.asymptotic_cov @ prep.problem.normal)
        )
    if report.alt_cov is not None:
        payload["asymptotic_cov_alternative"] = report.alt_cov
        payload["assembly_frobenius_gap"] = report.alt_gap
    write_json(path, payload, config)
    return [path]
