"""Turning a plain objective into a safe optimization problem.

A safe optimization problem wraps an objective with: a finite uniform
discretization of its box domain, a safety threshold set at a percentile
of the objective values on that grid, Gaussian evaluation noise, an
evaluation budget and a safety budget, and a rule for sampling initial
safe seeds. The :class:`Oracle` is the only thing algorithms are allowed
to query: it returns noisy observations, flags unsafe ones (observed
value below the threshold) and terminates the run when either budget
runs out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .problems import Objective, Scenario, scenario_mask, validate_scenario

__all__ = [
    "Grid",
    "SafeOpProblem",
    "Observation",
    "Oracle",
    "TerminationReason",
    "TerminatedRunError",
    "InfeasibleScenarioError",
    "discretize",
    "percentile_threshold",
    "estimate_lipschitz",
    "sample_safe_seeds",
]


class TerminationReason(str, Enum):
    RUNNING = "running"
    BUDGET_EXHAUSTED = "budget_exhausted"
    SAFETY_EXHAUSTED = "safety_exhausted"


class TerminatedRunError(RuntimeError):
    """Raised when an evaluation is requested after the run terminated."""


class InfeasibleScenarioError(ValueError):
    """Raised when a seed-sampling region holds fewer points than requested."""


@dataclass
class Grid:
    """Uniform rectangular discretization of a box domain.

    ``points`` holds the full Cartesian product in row-major order (first
    axis slowest), ``values`` the objective cached at every node. Treated
    as immutable after construction.
    """

    axes: tuple[np.ndarray, ...]
    points: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        self._index: Optional[dict[tuple[float, ...], int]] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.axes)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    @property
    def bounds(self) -> tuple[tuple[float, float], ...]:
        return tuple((float(a[0]), float(a[-1])) for a in self.axes)

    def index_of(self, point: Sequence[float]) -> int:
        """Exact index lookup for a point that is a grid node."""
        if self._index is None:
            self._index = {
                tuple(p): i for i, p in enumerate(self.points.tolist())
            }
        key = tuple(float(c) for c in point)
        try:
            return self._index[key]
        except KeyError:
            raise KeyError(f"{key} is not a grid node") from None


def discretize(objective: Objective, nodes_per_axis) -> Grid:
    """Uniformly discretize an objective's box domain and cache its values.

    Parameters
    ----------
    objective : Objective
    nodes_per_axis : int or sequence of int
        Node count per axis (>= 2); endpoints are always included.
    """
    d = objective.dimension
    if np.isscalar(nodes_per_axis):
        counts = [int(nodes_per_axis)] * d
    else:
        counts = [int(n) for n in nodes_per_axis]
        if len(counts) != d:
            raise ValueError(f"expected {d} axis counts, got {len(counts)}")
    if any(n < 2 for n in counts):
        raise ValueError(f"nodes_per_axis must be >= 2, got {counts}")
    axes = tuple(
        np.linspace(lo, hi, n) for (lo, hi), n in zip(objective.bounds, counts)
    )
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.reshape(-1) for m in mesh], axis=1)
    values = objective.eval_batch(points)
    return Grid(axes=axes, points=points, values=values)


def percentile_threshold(grid: Grid, k: float) -> float:
    """Nearest-rank percentile of the grid's cached objective values.

    Sorts values ascending and returns the element at 1-based index
    ceil(k/100 * N). ``k`` must lie in (0, 100].
    """
    if not 0.0 < k <= 100.0:
        raise ValueError(f"percentile must be in (0, 100], got {k}")
    n = grid.values.size
    if n == 0:
        raise RuntimeError("grid has no cached values")
    rank = math.ceil(k * n / 100.0)
    return float(np.sort(grid.values)[rank - 1])


def estimate_lipschitz(grid: Grid) -> float:
    """Lipschitz constant estimate: max gradient norm over the grid.

    Gradients use central finite differences of the cached values in the
    interior and one-sided differences at the boundaries; the returned
    constant is the maximum Euclidean norm over all nodes.
    """
    shape = grid.shape
    values = grid.values.reshape(shape)
    if len(shape) == 1:
        grads = [np.gradient(values, grid.axes[0])]
    else:
        grads = np.gradient(values, *grid.axes)
    sq = np.zeros(shape)
    for g in grads:
        sq += np.square(g)
    return float(np.sqrt(sq.max()))


@dataclass
class SafeOpProblem:
    """A safe optimization problem over a discretized box domain.

    ``threshold`` must equal the nearest-rank ``percentile`` of the grid
    values; use :func:`make_problem` (or the harness config loader) to
    construct instances consistently. ``safety_budget=None`` means
    unlimited. Immutable by convention; share freely across runs.
    """

    objective: Objective
    grid: Grid
    noise_std: float
    threshold: float
    percentile: float
    eval_budget: int
    safety_budget: Optional[int] = None
    seed_confidence: float = 1.96
    scenario: Scenario = Scenario.NONE

    def __post_init__(self) -> None:
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.eval_budget < 1:
            raise ValueError("eval_budget must be >= 1")
        if self.safety_budget is not None and self.safety_budget < 0:
            raise ValueError("safety_budget must be >= 0 or None")
        if self.threshold != percentile_threshold(self.grid, self.percentile):
            raise ValueError(
                "threshold must equal the stated percentile of the grid values"
            )
        self.scenario = Scenario(self.scenario)
        validate_scenario(self.scenario, self.objective)
        self._lipschitz: Optional[float] = None

    @property
    def lipschitz(self) -> float:
        """Max-gradient Lipschitz estimate on the grid (cached)."""
        if self._lipschitz is None:
            self._lipschitz = estimate_lipschitz(self.grid)
        return self._lipschitz


def make_problem(
    objective: Objective,
    nodes_per_axis,
    percentile: float,
    noise_std: float,
    eval_budget: int,
    safety_budget: Optional[int] = None,
    seed_confidence: float = 1.96,
    scenario: Scenario = Scenario.NONE,
) -> SafeOpProblem:
    """Discretize an objective and set its percentile safety threshold."""
    grid = discretize(objective, nodes_per_axis)
    h = percentile_threshold(grid, percentile)
    return SafeOpProblem(
        objective=objective,
        grid=grid,
        noise_std=noise_std,
        threshold=h,
        percentile=percentile,
        eval_budget=eval_budget,
        safety_budget=safety_budget,
        seed_confidence=seed_confidence,
        scenario=scenario,
    )


def _eligible_seed_mask(problem: SafeOpProblem, scenario: Scenario) -> np.ndarray:
    grid = problem.grid
    margin_ok = (
        grid.values - problem.noise_std * problem.seed_confidence
        >= problem.threshold
    )
    return margin_ok & scenario_mask(scenario, grid.points)


def sample_safe_seeds(
    problem: SafeOpProblem, n: int, rng: np.random.Generator
) -> list[tuple[float, ...]]:
    """Sample n distinct grid points that are safe with margin.

    Eligible points satisfy f(x) - noise_std * seed_confidence >= threshold
    and lie inside the problem's scenario region. For scenario S3 the draw
    is split ceil(n/2) from the top-left quadrant and floor(n/2) from the
    bottom-right.
    """
    if n < 1:
        raise ValueError("seed count must be >= 1")
    scenario = problem.scenario
    if scenario is Scenario.S3:
        plan = [
            (Scenario.S2_TOP_LEFT, (n + 1) // 2),
            (Scenario.S2_BOTTOM_RIGHT, n // 2),
        ]
    else:
        plan = [(scenario, n)]
    chosen: list[int] = []
    for region, count in plan:
        if count == 0:
            continue
        eligible = np.flatnonzero(_eligible_seed_mask(problem, region))
        if eligible.size < count:
            raise InfeasibleScenarioError(
                f"region {region.value!r} has only {eligible.size} eligible "
                f"seed points, {count} requested"
            )
        chosen.extend(rng.choice(eligible, size=count, replace=False).tolist())
    return [
        tuple(float(c) for c in problem.grid.points[i]) for i in chosen
    ]


@dataclass
class Observation:
    """One oracle query: where, what was observed, and whether it was safe."""

    point: tuple[float, ...]
    y: float
    f_true: float
    is_unsafe: bool
    step_index: int


class Oracle:
    """Budget-tracking noisy evaluation oracle for a single run.

    Draws observation noise from its own random stream, so two oracles
    constructed with identical streams reproduce identical observation
    sequences for identical queries. Once terminated, further evaluation
    requests raise :class:`TerminatedRunError`.
    """

    def __init__(
        self,
        problem: SafeOpProblem,
        rng: np.random.Generator,
        seeds_consume_budget: bool = True,
    ):
        self.problem = problem
        self.rng = rng
        self.seeds_consume_budget = seeds_consume_budget
        self.log: list[Observation] = []
        self.evals_used = 0
        self.unsafe_used = 0
        self.termination = TerminationReason.RUNNING
        self._budget_extra = 0  # seed evaluations exempted from the budget

    @property
    def running(self) -> bool:
        return self.termination is TerminationReason.RUNNING

    @property
    def effective_budget(self) -> int:
        return self.problem.eval_budget + self._budget_extra

    def evaluate(self, x: Sequence[float]) -> Observation:
        """Observe f(x) + noise, update budgets, maybe terminate the run."""
        if not self.running:
            raise TerminatedRunError(
                f"run already terminated ({self.termination.value})"
            )
        point = tuple(float(c) for c in x)
        if not self.problem.objective.contains(point):
            raise ValueError(f"point {point} outside the box domain")
        f = self.problem.objective.eval(point)
        eps = float(self.rng.normal(0.0, self.problem.noise_std))
        y = f + eps
        unsafe = y < self.problem.threshold
        obs = Observation(
            point=point,
            y=y,
            f_true=f,
            is_unsafe=unsafe,
            step_index=len(self.log) + 1,
        )
        self.log.append(obs)
        self.evals_used += 1
        if unsafe:
            self.unsafe_used += 1
        budget = self.problem.safety_budget
        if unsafe and budget is not None and self.unsafe_used > budget:
            self.termination = TerminationReason.SAFETY_EXHAUSTED
        elif self.evals_used >= self.effective_budget:
            self.termination = TerminationReason.BUDGET_EXHAUSTED
        return obs

    def prime(self, seeds: Sequence[Sequence[float]]) -> list[Observation]:
        """Evaluate the initial safe seeds, returning their observations.

        Seed evaluations appear in the log as the first steps. When the
        oracle was built with ``seeds_consume_budget=False`` the budget is
        extended so the optimizer still gets the full evaluation budget.
        Stops early (without raising) if a budget terminates the run
        mid-priming.
        """
        if not seeds:
            raise ValueError("need at least one seed")
        if not self.seeds_consume_budget:
            self._budget_extra += len(seeds)
        out = []
        for s in seeds:
            if not self.running:
                break
            out.append(self.evaluate(s))
        return out
