"""Benchmark orchestration: shared seed sets, run loops, persistence.

A benchmark executes every (algorithm, run index) pair on one problem,
re-using the same per-run seed set across algorithms. All randomness is
derived from a single master seed through named streams, so identical
plans reproduce byte-identical output regardless of execution order or
parallelism. Each run is persisted as one CSV of per-step records plus
an entry in a benchmark-level JSON manifest.
"""

from __future__ import annotations

import csv
import json
import logging
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .ea import EaOptimizer, EaParams
from .gp import KernelSpec
from .problems import Scenario, make_objective
from .safeop import (
    InfeasibleScenarioError,
    Oracle,
    SafeOpProblem,
    TerminationReason,
    make_problem,
    sample_safe_seeds,
)
from .safegp import VARIANTS as GP_VARIANTS
from .safegp import SafeGpOptimizer, StalledAlgorithmError

__all__ = [
    "ALGORITHMS",
    "ConfigError",
    "RunConfig",
    "RunResult",
    "BenchmarkPlan",
    "load_config",
    "build_problem",
    "make_seed_sets",
    "run",
    "benchmark",
    "unsafe_count_series",
    "save_benchmark",
    "load_run_csv",
]

log = logging.getLogger(__name__)

ALGORITHMS = GP_VARIANTS + ("va-ea", "unsafe-ea")

TERMINATION_STALLED = "stalled"
TERMINATION_FAILED = "failed"


class ConfigError(ValueError):
    """Invalid or missing configuration values."""


# ---------------------------------------------------------------------------
# Configuration


DEFAULT_PROBLEM = {
    "objective": "sphere",
    "dimension": 2,
    "bounds": None,
    "nodes_per_axis": 100,
    "percentile": 95.0,
    "noise_std": 0.1,
    "seed_confidence": 1.96,
    "eval_budget": 100,
    "safety_budget": "unlimited",
    "scenario": "none",
    "n_seeds": 10,
    "master_seed": 20220709,
    "seeds_consume_budget": True,
}

DEFAULT_GP = {"lengthscale": 1.0, "signal_variance": 4.0, "beta": 2.0}

DEFAULT_EA = {
    "crossover_prob": 0.8,
    "mutation_prob": None,
    "mutation_std": 0.1,
    "mutation_mean": 0.0,
    "retry_cap": 100,
}


def load_config(path) -> dict:
    """Read a JSON experiment configuration, applying defaults.

    See README for the schema. Unknown keys are rejected so typos fail
    loudly.
    """
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return normalize_config(raw)


def normalize_config(raw: dict) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    out = {}
    for section, defaults in (
        ("problem", DEFAULT_PROBLEM),
        ("gp", DEFAULT_GP),
        ("ea", DEFAULT_EA),
    ):
        given = raw.get(section, {})
        if not isinstance(given, dict):
            raise ConfigError(f"section {section!r} must be an object")
        unknown = set(given) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
        out[section] = {**defaults, **given}
    unknown = set(raw) - {"problem", "gp", "ea"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    sb = out["problem"]["safety_budget"]
    if not (sb == "unlimited" or (isinstance(sb, int) and not isinstance(sb, bool))):
        raise ConfigError('safety_budget must be an integer or "unlimited"')
    return out


def build_problem(cfg: dict) -> SafeOpProblem:
    """Construct the SafeOpProblem described by a config's problem section."""
    p = cfg["problem"]
    try:
        objective = make_objective(
            p["objective"], dimension=int(p["dimension"]), bounds=p["bounds"]
        )
        sb = p["safety_budget"]
        return make_problem(
            objective,
            nodes_per_axis=p["nodes_per_axis"],
            percentile=float(p["percentile"]),
            noise_std=float(p["noise_std"]),
            eval_budget=int(p["eval_budget"]),
            safety_budget=None if sb == "unlimited" else int(sb),
            seed_confidence=float(p["seed_confidence"]),
            scenario=Scenario(p["scenario"]),
        )
    except InfeasibleScenarioError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _ea_params(cfg: dict, n_seeds: int) -> EaParams:
    e = cfg["ea"]
    return EaParams(
        mu=n_seeds,
        lam=n_seeds,
        crossover_prob=float(e["crossover_prob"]),
        mutation_prob=None if e["mutation_prob"] is None else float(e["mutation_prob"]),
        mutation_mean=float(e["mutation_mean"]),
        mutation_std=float(e["mutation_std"]),
        retry_cap=int(e["retry_cap"]),
    )


# ---------------------------------------------------------------------------
# Deterministic stream derivation


def derive_rng(master_seed: int, run_index: int, purpose: str) -> np.random.Generator:
    """Named per-run random stream.

    Streams are spawned from a SeedSequence over (master_seed, run_index,
    crc32(purpose)), so every (run, purpose) pair is an independent,
    reproducible stream. Purposes deliberately do not include the
    algorithm name: algorithms compared at the same run index share the
    seed set, the oracle noise stream and the optimizer stream, making
    the comparison paired (identical runs until behavior diverges).
    """
    tag = zlib.crc32(purpose.encode("utf-8"))
    return np.random.default_rng(
        np.random.SeedSequence([int(master_seed), int(run_index), tag])
    )


def make_seed_sets(
    problem: SafeOpProblem, n_runs: int, n_seeds: int, master_seed: int
) -> list[list[tuple[float, ...]]]:
    """One seed set per run index, shared by all algorithms of a benchmark."""
    return [
        sample_safe_seeds(problem, n_seeds, derive_rng(master_seed, i, "seed-set"))
        for i in range(n_runs)
    ]


# ---------------------------------------------------------------------------
# Running


@dataclass
class RunConfig:
    algorithm: str
    run_index: int
    master_seed: int
    seeds_consume_budget: bool = True

    def __post_init__(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(
                f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}"
            )


@dataclass
class StepRecord:
    step: int
    point: tuple[float, ...]
    y: float
    f_true: float
    is_unsafe: bool
    bsf_true: float


@dataclass
class RunResult:
    algorithm: str
    run_index: int
    records: list[StepRecord]
    termination: str
    diagnostics: list[dict] = field(default_factory=list)
    wall_time: float = 0.0
    error: Optional[str] = None

    @property
    def n_steps(self) -> int:
        return len(self.records)

    def bsf_series(self) -> np.ndarray:
        return np.array([r.bsf_true for r in self.records])

    def first_failure_step(self) -> Optional[int]:
        for r in self.records:
            if r.is_unsafe:
                return r.step
        return None


def unsafe_count_series(result: RunResult) -> np.ndarray:
    """Cumulative count of unsafe evaluations at each step."""
    return np.cumsum([int(r.is_unsafe) for r in result.records])


def _build_optimizer(
    name: str,
    problem: SafeOpProblem,
    seed_obs,
    rng: np.random.Generator,
    cfg: dict,
):
    if name in GP_VARIANTS:
        g = cfg["gp"]
        return SafeGpOptimizer(
            variant=name,
            problem=problem,
            seed_observations=seed_obs,
            kernel=KernelSpec(
                lengthscale=float(g["lengthscale"]),
                signal_variance=float(g["signal_variance"]),
            ),
            beta=float(g["beta"]),
            lipschitz=problem.lipschitz if name in ("safeopt", "safe-ucb") else None,
        )
    return EaOptimizer(
        problem=problem,
        seed_observations=seed_obs,
        rng=rng,
        params=_ea_params(cfg, len(seed_obs)),
        va_enabled=(name == "va-ea"),
    )


def run(
    problem: SafeOpProblem,
    config: RunConfig,
    seeds: Sequence[tuple[float, ...]],
    cfg: Optional[dict] = None,
) -> RunResult:
    """Execute one algorithm run to termination and extract its metrics."""
    cfg = cfg if cfg is not None else normalize_config({})
    t0 = time.perf_counter()
    oracle = Oracle(
        problem,
        derive_rng(config.master_seed, config.run_index, "oracle"),
        seeds_consume_budget=config.seeds_consume_budget,
    )
    seed_obs = oracle.prime(seeds)
    termination = oracle.termination.value
    diagnostics: list[dict] = []
    if oracle.running:
        optimizer = _build_optimizer(
            config.algorithm,
            problem,
            seed_obs,
            derive_rng(config.master_seed, config.run_index, "optimizer"),
            cfg,
        )
        try:
            while oracle.running:
                optimizer.step(oracle)
            termination = oracle.termination.value
        except StalledAlgorithmError:
            termination = TERMINATION_STALLED
        diagnostics = optimizer.diagnostics
    records = []
    bsf = -np.inf
    for obs in oracle.log:
        bsf = max(bsf, obs.f_true)
        records.append(
            StepRecord(
                step=obs.step_index,
                point=obs.point,
                y=obs.y,
                f_true=obs.f_true,
                is_unsafe=obs.is_unsafe,
                bsf_true=bsf,
            )
        )
    return RunResult(
        algorithm=config.algorithm,
        run_index=config.run_index,
        records=records,
        termination=termination,
        diagnostics=diagnostics,
        wall_time=time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# Benchmarks


@dataclass
class BenchmarkPlan:
    algorithms: list[str]
    config: dict  # normalized experiment config
    n_runs: int
    seed_sets: list[list[tuple[float, ...]]]

    @property
    def master_seed(self) -> int:
        return int(self.config["problem"]["master_seed"])


def make_plan(cfg: dict, algorithms: Sequence[str], n_runs: int) -> BenchmarkPlan:
    """Build the shared seed sets for a benchmark from its config."""
    algorithms = list(algorithms)
    for name in algorithms:
        if name not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {name!r}")
    if n_runs < 1:
        raise ConfigError("n_runs must be >= 1")
    problem = build_problem(cfg)
    p = cfg["problem"]
    seed_sets = make_seed_sets(
        problem, n_runs, int(p["n_seeds"]), int(p["master_seed"])
    )
    return BenchmarkPlan(
        algorithms=algorithms, config=cfg, n_runs=n_runs, seed_sets=seed_sets
    )


def _run_task(args) -> tuple[str, int, RunResult]:
    cfg, algorithm, run_index, seeds = args
    problem = build_problem(cfg)
    p = cfg["problem"]
    config = RunConfig(
        algorithm=algorithm,
        run_index=run_index,
        master_seed=int(p["master_seed"]),
        seeds_consume_budget=bool(p["seeds_consume_budget"]),
    )
    try:
        result = run(problem, config, seeds, cfg)
    except Exception as exc:  # noqa: BLE001 - failures are recorded per run
        log.warning("run %s/%d failed: %s", algorithm, run_index, exc)
        result = RunResult(
            algorithm=algorithm,
            run_index=run_index,
            records=[],
            termination=TERMINATION_FAILED,
            error=f"{type(exc).__name__}: {exc}",
        )
    return algorithm, run_index, result


def benchmark(
    plan: BenchmarkPlan, n_jobs: int = 1
) -> dict[tuple[str, int], RunResult]:
    """Run every (algorithm, run index) pair of the plan.

    Individual run failures are recorded in their RunResult; the rest of
    the benchmark still completes. Output is independent of n_jobs.
    """
    tasks = [
        (plan.config, algo, i, plan.seed_sets[i])
        for algo in plan.algorithms
        for i in range(plan.n_runs)
    ]
    results: dict[tuple[str, int], RunResult] = {}
    if n_jobs <= 1:
        problem = build_problem(plan.config)
        p = plan.config["problem"]
        for _, algo, i, seeds in tasks:
            config = RunConfig(
                algorithm=algo,
                run_index=i,
                master_seed=int(p["master_seed"]),
                seeds_consume_budget=bool(p["seeds_consume_budget"]),
            )
            try:
                results[(algo, i)] = run(problem, config, seeds, plan.config)
            except Exception as exc:  # noqa: BLE001
                log.warning("run %s/%d failed: %s", algo, i, exc)
                results[(algo, i)] = RunResult(
                    algorithm=algo,
                    run_index=i,
                    records=[],
                    termination=TERMINATION_FAILED,
                    error=f"{type(exc).__name__}: {exc}",
                )
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            for algo, i, result in pool.map(_run_task, tasks):
                results[(algo, i)] = result
    return results


# ---------------------------------------------------------------------------
# Persistence


def _fmt(v: float) -> str:
    return repr(float(v))


def run_csv_name(algorithm: str, run_index: int) -> str:
    return f"{algorithm}_run{run_index}.csv"


def write_run_csv(result: RunResult, path) -> None:
    dim = len(result.records[0].point) if result.records else 0
    header = (
        ["step"]
        + [f"x{i + 1}" for i in range(dim)]
        + ["y", "f_true", "is_unsafe", "bsf_true"]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in result.records:
            writer.writerow(
                [r.step]
                + [_fmt(c) for c in r.point]
                + [_fmt(r.y), _fmt(r.f_true), int(r.is_unsafe), _fmt(r.bsf_true)]
            )


def load_run_csv(path, algorithm: str, run_index: int) -> RunResult:
    """Rebuild a RunResult (records only) from its persisted CSV."""
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        dim = len(header) - 5
        for row in reader:
            records.append(
                StepRecord(
                    step=int(row[0]),
                    point=tuple(float(c) for c in row[1 : 1 + dim]),
                    y=float(row[1 + dim]),
                    f_true=float(row[2 + dim]),
                    is_unsafe=bool(int(row[3 + dim])),
                    bsf_true=float(row[4 + dim]),
                )
            )
    return RunResult(
        algorithm=algorithm, run_index=run_index, records=records, termination=""
    )


def save_benchmark(
    results: dict[tuple[str, int], RunResult], plan: BenchmarkPlan, outdir
) -> Path:
    """Write one CSV per run plus the benchmark manifest; returns outdir."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    runs_meta: dict[str, dict] = {}
    for (algo, i) in sorted(results):
        result = results[(algo, i)]
        write_run_csv(result, outdir / run_csv_name(algo, i))
        series = unsafe_count_series(result)
        runs_meta.setdefault(algo, {})[str(i)] = {
            "termination": result.termination,
            "n_steps": result.n_steps,
            "final_bsf": result.records[-1].bsf_true if result.records else None,
            "final_unsafe": int(series[-1]) if result.n_steps else 0,
            "first_failure_step": result.first_failure_step(),
            "wall_time": round(result.wall_time, 4),
            "error": result.error,
        }
    manifest = {
        "config": plan.config,
        "algorithms": plan.algorithms,
        "n_runs": plan.n_runs,
        "seed_sets": [[list(p) for p in s] for s in plan.seed_sets],
        "runs": runs_meta,
        "versions": {
            "safeobench": __version__,
            "numpy": np.__version__,
        },
    }
    with open(outdir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return outdir


def load_benchmark(outdir) -> tuple[dict, dict[tuple[str, int], RunResult]]:
    """Load a persisted benchmark: (manifest, results keyed by algo/run)."""
    outdir = Path(outdir)
    manifest_path = outdir / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"no manifest.json in {outdir}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    results = {}
    for algo, runs in manifest["runs"].items():
        for idx_str, meta in runs.items():
            i = int(idx_str)
            path = outdir / run_csv_name(algo, i)
            result = load_run_csv(path, algo, i)
            result.termination = meta["termination"]
            result.error = meta.get("error")
            results[(algo, i)] = result
    return manifest, results
