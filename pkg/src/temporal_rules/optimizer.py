"""Best-candidate search over a rule template's threshold grid."""

from __future__ import annotations

import functools
import logging
import math
import time
from collections.abc import Iterator, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any

import numpy as np

from temporal_rules.compactness import (
    CompactnessMeasure,
    CostReport,
    cm_matrix,
    compactness_values,
    total_cost,
)
from temporal_rules.config import DEFAULT_GRID_CAP
from temporal_rules.dataset import TemporalDataset, aggregate
from temporal_rules.errors import InvalidParameter
from temporal_rules.rules import (
    CandidateClassifier,
    Condition,
    Labeling,
    RuleTemplate,
    assign_classes,
    check_grid,
    condition_mask,
    indices_at,
    labeling_from_indices,
    rule_mask,
)

log = logging.getLogger(__name__)

_CHUNKS_PER_WORKER = 8

# Booleans a condition may precompute (grid values x objects) before
# falling back to per-candidate comparison.
MASK_CELLS_LIMIT = 4_000_000
COST_CACHE_SIZE = 4096


@dataclass(frozen=True)
class DeParams:
    """Differential evolution settings (DE/rand/1/bin)."""

    population_size: int = 20
    generations: int = 50
    differential_weight: float = 0.8
    crossover_rate: float = 0.9
    seed: int = 0

    def __post_init__(self) -> None:
        if self.population_size < 4:
            msg = f"population_size must be >= 4, got {self.population_size}"
            raise InvalidParameter(msg)
        if self.generations < 1:
            msg = f"generations must be >= 1, got {self.generations}"
            raise InvalidParameter(msg)
        if not 0 < self.differential_weight <= 2:
            msg = f"differential_weight must be in (0, 2], got {self.differential_weight}"
            raise InvalidParameter(msg)
        if not 0 <= self.crossover_rate <= 1:
            msg = f"crossover_rate must be in [0, 1], got {self.crossover_rate}"
            raise InvalidParameter(msg)


@dataclass(frozen=True)
class BestResult:
    """Minimal-cost candidate with its cost decomposition and labels."""

    candidate: CandidateClassifier
    cost: CostReport
    labeling: Labeling
    evaluated: int
    ties: int

    def to_dict(self, *, include_cost: bool = True) -> dict[str, Any]:
        out: dict[str, Any] = {
            "bindings": self.candidate.bindings,
            "cost_total": self.cost.total,
            "ties": self.ties,
            "evaluated": self.evaluated,
            "labels": dict(self.labeling.labels),
        }
        if include_cost:
            out["cost"] = self.cost.to_dict()
        return out


class CandidateEvaluator:
    """Classifies and scores candidates of one template on one dataset.

    Condition masks are precomputed for every grid value when the table stays
    under ``mask_cells`` booleans; finer grids compare against the bound value
    per candidate instead. Costs are memoized by labeling in a bounded LRU
    cache, since many neighbouring candidates produce the same partition.
    """

    def __init__(
        self,
        template: RuleTemplate,
        data: TemporalDataset,
        measure: CompactnessMeasure,
        normalize: bool | None = None,
        *,
        mask_cells: int = MASK_CELLS_LIMIT,
        cache_size: int = COST_CACHE_SIZE,
    ) -> None:
        self.template = template
        self.data = data
        self.measure = measure
        self.view = aggregate(data, template.aggregates)
        self.values = compactness_values(data, template.compactness_attributes, normalize)
        self.n_objects = data.n_objects
        self.n_classes = len(template.classes)

        self._grids = {p.name: p.grid() for p in template.params}
        param_pos = {p.name: i for i, p in enumerate(template.params)}
        self._conditions: list[list[tuple[int, Condition, np.ndarray | None]]] = []
        precomputed = 0
        for rule in template.rules:
            per_rule = []
            for cond in rule.conditions:
                grid = self._grids[cond.param]
                masks = None
                if grid.size * self.n_objects <= mask_cells:
                    column = self.view.column(cond.attribute)
                    masks = condition_mask(column[None, :], cond.op, grid[:, None])
                    precomputed += 1
                per_rule.append((param_pos[cond.param], cond, masks))
            self._conditions.append(per_rule)
        self._partition_cost = functools.lru_cache(maxsize=cache_size)(self._cost_of)
        log.debug(
            "Candidate evaluator ready",
            extra={"precomputed_conditions": precomputed, "cache_size": cache_size},
        )

    def _mask(
        self, indices: Sequence[int], pos: int, cond: Condition, masks: np.ndarray | None
    ) -> np.ndarray:
        if masks is not None:
            return masks[indices[pos]]
        bound = self._grids[cond.param][indices[pos]]
        return condition_mask(self.view.column(cond.attribute), cond.op, bound)

    def assign(self, indices: Sequence[int]) -> np.ndarray:
        rule_masks = [
            rule_mask(rule, [self._mask(indices, pos, cond, masks) for pos, cond, masks in conds])
            for rule, conds in zip(self.template.rules, self._conditions, strict=True)
        ]
        return assign_classes(self.template, rule_masks, self.n_objects)

    def _cost_of(self, key: bytes) -> float:
        assigned = np.frombuffer(key, dtype=np.int64)
        cm, sizes = cm_matrix(self.values, assigned, self.n_classes, self.measure)
        return total_cost(cm, sizes)

    def score(self, indices: Sequence[int]) -> float:
        return self._partition_cost(self.assign(indices).tobytes())

    def cache_info(self) -> functools._CacheInfo:
        return self._partition_cost.cache_info()

    def result(self, indices: Sequence[int], evaluated: int, ties: int) -> BestResult:
        candidate = CandidateClassifier.from_indices(self.template, indices)
        assigned = self.assign(candidate.indices)
        cm, sizes = cm_matrix(self.values, assigned, self.n_classes, self.measure)
        report = CostReport.build(self.data.time_points, self.template.classes, cm, sizes)
        labeling = labeling_from_indices(self.data.object_ids, self.template.classes, assigned)
        return BestResult(candidate, report, labeling, evaluated=evaluated, ties=ties)


# --- Brute force ---


def _odometer(sizes: Sequence[int], start: int, count: int) -> Iterator[tuple[int, ...]]:
    """*count* consecutive grid index tuples from flat position *start*."""
    current = list(indices_at(sizes, start))
    for _ in range(count):
        yield tuple(current)
        for pos in range(len(sizes) - 1, -1, -1):
            current[pos] += 1
            if current[pos] < sizes[pos]:
                break
            current[pos] = 0


@dataclass(frozen=True)
class _ScanResult:
    best_cost: float
    best_flat: int
    ties: int
    evaluated: int


def _scan(evaluator: CandidateEvaluator, start: int, stop: int) -> _ScanResult:
    """Algorithm-1 loop over flat positions [start, stop); first minimum wins."""
    sizes = evaluator.template.grid_sizes
    best_cost = math.inf
    best_flat = -1
    ties = 0
    for offset, indices in enumerate(_odometer(sizes, start, stop - start)):
        value = evaluator.score(indices)
        if value < best_cost:
            best_cost, best_flat, ties = value, start + offset, 1
        elif value == best_cost:
            ties += 1
    return _ScanResult(best_cost, best_flat, ties, stop - start)


_worker_evaluator: CandidateEvaluator | None = None


def _init_worker(
    template: RuleTemplate,
    data: TemporalDataset,
    measure: CompactnessMeasure,
    normalize: bool | None,
) -> None:
    global _worker_evaluator
    _worker_evaluator = CandidateEvaluator(template, data, measure, normalize)


def _scan_chunk(bounds: tuple[int, int]) -> _ScanResult:
    assert _worker_evaluator is not None
    return _scan(_worker_evaluator, *bounds)


def _reduce(parts: Sequence[_ScanResult]) -> _ScanResult:
    """Min by (cost, flat position); ties summed over parts at the minimum."""
    best = min(parts, key=lambda p: (p.best_cost, p.best_flat))
    ties = sum(p.ties for p in parts if p.best_cost == best.best_cost)
    evaluated = sum(p.evaluated for p in parts)
    return _ScanResult(best.best_cost, best.best_flat, ties, evaluated)


def _chunks(total: int, workers: int) -> list[tuple[int, int]]:
    size = max(1, math.ceil(total / (workers * _CHUNKS_PER_WORKER)))
    return [(lo, min(lo + size, total)) for lo in range(0, total, size)]


def brute_force(
    template: RuleTemplate,
    data: TemporalDataset,
    measure: CompactnessMeasure = CompactnessMeasure.STDDEV,
    *,
    workers: int = 1,
    cap: int = DEFAULT_GRID_CAP,
    normalize: bool | None = None,
) -> BestResult:
    """Score every candidate and return the minimal-cost one.

    Exact ties resolve to the lexicographically smallest binding vector, so
    the answer is the same for any worker count.
    """
    total = check_grid(template, cap)
    started = time.monotonic()
    log.info(
        "Brute-force search started",
        extra={"candidates": total, "workers": workers, "measure": measure.value},
    )
    evaluator = CandidateEvaluator(template, data, measure, normalize)

    if workers <= 1 or total < workers * _CHUNKS_PER_WORKER:
        scan = _scan(evaluator, 0, total)
    else:
        with ProcessPoolExecutor(
            max_workers=workers,
            initializer=_init_worker,
            initargs=(template, data, measure, normalize),
        ) as pool:
            scan = _reduce(list(pool.map(_scan_chunk, _chunks(total, workers))))

    result = evaluator.result(indices_at(template.grid_sizes, scan.best_flat), scan.evaluated, scan.ties)
    log.info(
        "Brute-force search finished",
        extra={
            "cost": result.cost.total,
            "ties": result.ties,
            "evaluated": result.evaluated,
            "bindings": result.candidate.bindings,
            "duration_seconds": round(time.monotonic() - started, 3),
        },
    )
    return result


# --- Differential evolution ---


def differential_evolution(
    template: RuleTemplate,
    data: TemporalDataset,
    measure: CompactnessMeasure = CompactnessMeasure.STDDEV,
    params: DeParams | None = None,
    *,
    normalize: bool | None = None,
) -> BestResult:
    """DE/rand/1/bin over the parameter box, each trial snapped to the grid.

    The initial population is the first generation, so exactly
    ``population_size * generations`` candidates are scored.
    """
    params = params or DeParams()
    evaluator = CandidateEvaluator(template, data, measure, normalize)
    ranges = template.params
    dims = len(ranges)
    n = params.population_size
    rng = np.random.default_rng(params.seed)
    lower = np.array([p.lower for p in ranges], dtype=np.float64)
    upper = np.array([p.upper for p in ranges], dtype=np.float64)

    best_cost = math.inf
    best_idx: tuple[int, ...] = ()
    tied: set[tuple[int, ...]] = set()
    evaluated = 0

    def evaluate(x: np.ndarray) -> float:
        nonlocal best_cost, best_idx, evaluated
        idx = tuple(p.snap(float(v)) for p, v in zip(ranges, x, strict=True))
        value = evaluator.score(idx)
        evaluated += 1
        if value < best_cost:
            best_cost, best_idx = value, idx
            tied.clear()
            tied.add(idx)
        elif value == best_cost:
            tied.add(idx)
            best_idx = min(best_idx, idx)
        return value

    population = lower + rng.random((n, dims)) * (upper - lower)
    fitness = np.array([evaluate(x) for x in population])

    for _ in range(params.generations - 1):
        next_population = population.copy()
        next_fitness = fitness.copy()
        for i in range(n):
            others = np.delete(np.arange(n), i)
            r1, r2, r3 = rng.choice(others, size=3, replace=False)
            mutant = population[r1] + params.differential_weight * (population[r2] - population[r3])
            mutant = np.clip(mutant, lower, upper)
            cross = rng.random(dims) < params.crossover_rate
            if dims:
                cross[rng.integers(dims)] = True
            trial = np.where(cross, mutant, population[i])
            value = evaluate(trial)
            if value <= fitness[i]:
                next_population[i] = trial
                next_fitness[i] = value
        population, fitness = next_population, next_fitness

    log.info(
        "Differential evolution finished",
        extra={"cost": best_cost, "evaluated": evaluated, "seed": params.seed},
    )
    return evaluator.result(best_idx, evaluated, len(tied))
