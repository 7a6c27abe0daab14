"""Grid runner: one cell per declared ``(trace, lambda, seed)``.

Every cell writes rows of the long-format learning-curve CSV
``trace,lambda,seed,step,metric,value``. Values whose magnitude exceeds
``1e6`` (or that are not finite) are written as the token ``diverged``.
Cells run in a process pool but are flushed in declaration order, so the CSV
does not depend on scheduling.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    inter_algorithm_scores,
    offpolicyness,
    qpi_lambda_safety,
    read_score_csv,
    spectral_radius,
    trace_product_variance,
    verify_contraction,
    write_distribution_csv,
)
from .config import ExperimentConfig
from .errors import RetraceError
from .generators import GarnetParams, generate_chain, generate_garnet
from .mdp import Mdp, exact_q_pi, exact_q_star, load_mdp, sup_norm, uniform_policy
from .online import (
    DIVERGENCE_CAP,
    PolicySchedule,
    StepSizeSchedule,
    constant,
    epsilon_greedy,
    inverse_decay,
    linear_growth,
    mixture_behavior,
    run_control,
    softmax_policy,
)
from .rng import MASK64, SplitMix64
from .traces import (
    TraceFamily,
    TraceSpec,
    apply_expected_operator,
    apply_expected_operator_nonmarkov,
    contraction_diagnostics,
    control_matrix_A,
    default_horizon,
    respects_ratio_bound,
)

log = logging.getLogger(__name__)

CSV_HEADER = ("trace", "lambda", "seed", "step", "metric", "value")
DIVERGED = "diverged"

EXIT_OK = 0
EXIT_CELL_FAILED = 1
EXIT_CONFIG = 2


def format_value(v: float) -> str:
    v = float(v)
    if not math.isfinite(v) or abs(v) > DIVERGENCE_CAP:
        return DIVERGED
    return repr(v)


def build_mdp(config: ExperimentConfig) -> Mdp:
    m = config["mdp"]
    if m["source"] == "chain":
        return generate_chain(m["n_states"], m["gamma"])
    if m["source"] == "garnet":
        return generate_garnet(
            GarnetParams(
                n_states=m["n_states"],
                n_actions=m["n_actions"],
                branching=m["branching"],
                termination=m["termination"],
                reward_sparsity=m["reward_sparsity"],
                seed=m["seed"],
                gamma=m["gamma"],
            )
        )
    path = Path(m["path"])
    if not path.is_absolute() and config.source != "<string>":
        path = Path(config.source).parent / path
    return load_mdp(path)


def fixed_policies(config: ExperimentConfig, mdp: Mdp, q_star: np.ndarray):
    """Stationary ``(pi, mu)`` for the evaluate, verify and variance modes, built from ``Q*``."""
    p = config["policy"]
    uniform = uniform_policy(mdp)
    if p["target"] == "epsilon_greedy":
        pi = epsilon_greedy(q_star, p["epsilon0"])
    elif p["target"] == "softmax":
        pi = softmax_policy(q_star, p["beta0"])
    else:
        pi = uniform
    if p["behavior"] == "mixture":
        mu = mixture_behavior(q_star, uniform, p["eps_mix"])
    elif p["behavior"] == "uniform":
        mu = uniform
    elif p["behavior"] == "epsilon_greedy":
        mu = epsilon_greedy(q_star, p["behavior_epsilon"])
    else:
        mu = pi
    return pi, mu


def policy_schedules(config: ExperimentConfig, mdp: Mdp):
    """Target and behaviour schedules for control mode."""
    p = config["policy"]
    if p["target"] == "epsilon_greedy":
        seq = inverse_decay(p["epsilon0"]) if p["decay"] == "inverse" else constant(p["epsilon0"])
        target = PolicySchedule.epsilon_greedy(seq)
    elif p["target"] == "softmax":
        target = PolicySchedule.softmax(linear_growth(p["beta0"], p["beta_rate"]))
    else:
        target = PolicySchedule.fixed(uniform_policy(mdp))
    if p["behavior"] == "mixture":
        behavior = PolicySchedule.mixture(uniform_policy(mdp), p["eps_mix"])
    elif p["behavior"] == "uniform":
        behavior = PolicySchedule.fixed(uniform_policy(mdp))
    elif p["behavior"] == "epsilon_greedy":
        behavior = PolicySchedule.epsilon_greedy(constant(p["behavior_epsilon"]))
    else:
        behavior = target
    return target, behavior


def _random_q(mdp: Mdp, seed: int) -> np.ndarray:
    q = SplitMix64(seed).random_array(mdp.n_pairs).reshape(mdp.n_states, mdp.n_actions) * 20.0 - 10.0
    q[list(mdp.absorbing)] = 0.0
    return q


def _evaluate(config, mdp, spec, seed):
    q_star = exact_q_star(mdp)
    pi, mu = fixed_policies(config, mdp, q_star)
    q_pi = exact_q_pi(mdp, pi)
    q = _random_q(mdp, seed)
    horizon = config["trace"]["enumeration_horizon"] or default_horizon(mdp.gamma)
    rows = [(0, "error_q_pi", sup_norm(q - q_pi))]
    for k in range(1, config["experiment"]["iterations"] + 1):
        if spec.markovian:
            q = apply_expected_operator(mdp, spec, pi, mu, q)
        else:
            q = apply_expected_operator_nonmarkov(mdp, spec, pi, mu, q, horizon).q
        err = sup_norm(q - q_pi)
        rows.append((k, "error_q_pi", err))
        if not math.isfinite(err) or err > DIVERGENCE_CAP:
            break
    return rows


def _control(config, mdp, spec, seed):
    exp, step = config["experiment"], config["step"]
    q_star = exact_q_star(mdp)
    target, behavior = policy_schedules(config, mdp)
    rec = run_control(
        mdp,
        spec,
        target,
        behavior,
        StepSizeSchedule(step["alpha0"], step["exponent"]),
        np.zeros_like(q_star),
        exp["episodes"],
        seed,
        q_star,
        log_interval=exp["log_interval"],
        max_len=exp["max_len"],
    )
    scale = sup_norm(q_star)
    rows = []
    for k, e_star, e_pi in zip(rec.episodes, rec.error_q_star, rec.error_q_pi):
        rows.append((k, "error_q_star", e_star))
        if scale > 0.0:
            rows.append((k, "relative_error_q_star", e_star / scale))
        rows.append((k, "error_q_pi", e_pi))
    return rows


def _verify(config, mdp, spec, seed):
    q_star = exact_q_star(mdp)
    pi, mu = fixed_policies(config, mdp, q_star)
    horizon = config["trace"]["enumeration_horizon"]
    report = contraction_diagnostics(mdp, spec, pi, mu, horizon)
    rows = [(0, "offpolicyness", offpolicyness(pi, mu)), (0, "max_eta", report.max_eta)]
    if not spec.markovian:
        rows.append((0, "eta_truncation_bound", report.truncation_bound))
        return rows
    rows.append((0, "spectral_radius", spectral_radius(control_matrix_A(mdp, spec, pi, mu))))
    if respects_ratio_bound(spec, pi, mu):
        n = config["experiment"]["samples"]
        rows.append((0, "contraction_ratio", verify_contraction(mdp, spec, pi, mu, n, seed)))
    if spec.family is TraceFamily.QPI_LAMBDA:
        if 0.0 < mdp.gamma:
            safety = qpi_lambda_safety(pi, mu, mdp.gamma)
            if math.isfinite(safety):
                rows.append((0, "qpi_safety_threshold", safety))
    return rows


def _variance(config, mdp, spec, seed):
    exp = config["experiment"]
    q_star = exact_q_star(mdp)
    pi, mu = fixed_policies(config, mdp, q_star)
    est = trace_product_variance(mdp, spec, pi, mu, exp["samples"], exp["horizon"], seed)
    rows = [
        (0, "mean", est.mean),
        (0, "variance", est.variance),
        (0, "stderr_mean", est.stderr_mean),
        (0, "stderr_variance", est.stderr_variance),
    ]
    if est.iid_lower_bound is not None:
        rows.append((0, "iid_lower_bound", est.iid_lower_bound))
    return rows


_MODES = {"evaluate": _evaluate, "control": _control, "verify": _verify, "variance": _variance}


@dataclass(frozen=True)
class CellResult:
    family: str
    lam: float
    seed: int
    rows: list
    error: str | None = None


def run_cell(config: ExperimentConfig, family: str, lam: float, seed: int) -> CellResult:
    """Run one grid cell; library errors are captured in ``error`` instead of raised."""
    spec = TraceSpec.parse(family, lam)
    try:
        mdp = build_mdp(config)
        rows = _MODES[config.mode](config, mdp, spec, seed)
    except (RetraceError, ArithmeticError, ValueError, OSError) as exc:
        return CellResult(spec.label, lam, seed, [], f"{type(exc).__name__}: {exc}")
    return CellResult(spec.label, lam, seed, rows)


def declared_cells(config: ExperimentConfig, seed_offset: int = 0) -> list:
    seeds = [(s + seed_offset) & MASK64 for s in config.seeds]
    return [(fam, lam, seed) for fam, lam in config.traces for seed in seeds]


def _write_rows(writer, cell: CellResult):
    for step, metric, value in cell.rows:
        writer.writerow([cell.family, repr(float(cell.lam)), cell.seed, step, metric, format_value(value)])


def _write_manifest(path, config, seed_offset, cells, extra=None):
    manifest = {
        "config": config.source,
        "config_sha256": config.digest,
        "mode": config.mode,
        "seeds": [(s + seed_offset) & MASK64 for s in config.seeds],
        "seed_offset": seed_offset,
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "cells": cells,
    }
    if extra:
        manifest.update(extra)
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def run_scores(input_csv, output_csv) -> list:
    """Normalise a score table; writes ``f`` to ``output_csv`` and ``z`` beside it.

    Returns the games whose scores had zero spread.
    """
    table = read_score_csv(input_csv)
    dist = inter_algorithm_scores(table)
    output_csv = Path(output_csv)
    write_distribution_csv(output_csv, table, dist)
    z_path = output_csv.with_name(output_csv.stem + ".z.csv")
    with open(z_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["game", "algorithm", "z", "degenerate"])
        for i, game in enumerate(table.games):
            flag = int(game in dist.degenerate_games)
            for j, algo in enumerate(table.algorithms):
                w.writerow([game, algo, repr(float(dist.z[i, j])), flag])
    return dist.degenerate_games


def run_experiment(config: ExperimentConfig, out_dir=".", jobs: int | None = None, seed_offset: int = 0) -> int:
    """Execute every cell of ``config``; returns the process exit status.

    Writes ``<name>.csv`` and ``<name>.manifest.json`` into ``out_dir``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{config.name}.csv"
    manifest_path = out_dir / f"{config.name}.manifest.json"

    if config.mode == "scores":
        src = Path(config["experiment"]["input"])
        if not src.is_absolute() and config.source != "<string>":
            src = Path(config.source).parent / src
        try:
            degenerate = run_scores(src, csv_path)
        except (RetraceError, ValueError, OSError) as exc:
            log.error("scores failed: %s", exc)
            _write_manifest(manifest_path, config, seed_offset, [], {"error": str(exc)})
            return EXIT_CELL_FAILED
        _write_manifest(manifest_path, config, seed_offset, [], {"degenerate_games": degenerate})
        return EXIT_OK

    cells = declared_cells(config, seed_offset)
    jobs = jobs or os.cpu_count() or 1
    statuses = []
    failed = 0
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        if jobs == 1 or len(cells) == 1:
            results = (run_cell(config, *cell) for cell in cells)
            pool = None
        else:
            pool = ProcessPoolExecutor(max_workers=min(jobs, len(cells)))
            futures = [pool.submit(run_cell, config, *cell) for cell in cells]
            results = (f.result() for f in futures)
        try:
            for result in results:
                status = {"trace": result.family, "lambda": result.lam, "seed": result.seed}
                if result.error is None:
                    _write_rows(writer, result)
                    status["status"] = "ok"
                else:
                    failed += 1
                    log.error("cell %s(%s) seed %d failed: %s", result.family, result.lam, result.seed, result.error)
                    status.update(status="failed", error=result.error)
                statuses.append(status)
                fh.flush()
        finally:
            if pool is not None:
                pool.shutdown()
    _write_manifest(manifest_path, config, seed_offset, statuses)
    return EXIT_CELL_FAILED if failed else EXIT_OK
