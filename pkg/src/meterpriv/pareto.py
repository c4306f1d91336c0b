"""Grid search over policy families and Pareto analysis of the trade-off.

Each policy on a parameter grid is scored as a (leakage rate, wasted
energy rate) pair: leakage from one long sampled run through the trellis
estimator, waste exactly from the stationary battery distribution.
Dominance filtering and the lower convex hull (time-sharing closure) carve
out the achievable trade-off boundary; the sweep drivers reproduce the
harvest-rate, battery-capacity and grid-waste experiments.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from . import kernels
from .errors import (
    ConvergenceError,
    EvaluationError,
    InvalidParameterError,
    PolicyValidationError,
)
from .model import (
    BatteryParams,
    BinaryEHParams,
    NoBatteryParams,
    PolicyParams,
    SystemSpec,
    build_policy,
    complementary_params,
    no_battery_leakage,
    no_battery_waste,
    symmetric_params,
)
from .simulate import (
    battery_chain,
    derive_seed,
    sample_trajectory,
    wasted_energy_exact,
    wasted_energy_mc,
)
from .trellis import estimate_leakage


@dataclass(frozen=True)
class RatePair:
    """One evaluated policy: leakage and waste rates plus provenance.

    ``leakage`` is clamped to [0, H(X)]; ``leakage_raw`` keeps the
    unclamped estimate used for dominance decisions.  ``waste`` is the
    exact stationary rate; ``waste_mc`` the Monte Carlo cross-check from
    the same run.  ``leakage_std`` is the replicate standard deviation
    when more than one seed was used.
    """

    leakage: float
    leakage_raw: float
    waste: float
    waste_mc: Optional[float]
    params: PolicyParams
    seed: Optional[int]
    n: int
    replicates: int = 1
    leakage_std: Optional[float] = None


def params_sort_key(params: PolicyParams) -> tuple:
    return (params.family, params.values())


@dataclass(frozen=True)
class ParetoFront:
    """Dominance-filtered trade-off points, optionally with their hull."""

    points: tuple[RatePair, ...]
    hull: Optional[tuple[RatePair, ...]] = None

    @property
    def min_leakage_point(self) -> RatePair:
        return min(self.points, key=lambda p: (p.leakage_raw, p.waste, params_sort_key(p.params)))

    @property
    def min_waste_point(self) -> RatePair:
        return min(self.points, key=lambda p: (p.waste, p.leakage_raw, params_sort_key(p.params)))


# --------------------------------------------------------------------------
# Parameter grids
# --------------------------------------------------------------------------


def probability_grid(step: float) -> tuple[float, ...]:
    """{0, step, 2*step, ...} up to and always including 1."""
    if not 0.0 < step <= 1.0:
        raise InvalidParameterError(f"grid step must lie in (0, 1], got {step}")
    count = int(math.floor(1.0 / step + 1e-9))
    values = [round(i * step, 12) for i in range(count + 1)]
    if values[-1] > 1.0 or 1.0 - values[-1] < 1e-9:
        values[-1] = 1.0
    else:
        values.append(1.0)
    return tuple(values)


def grid_policies(
    family: str,
    capacity: int,
    step: float,
    waste_prob: Optional[float] = None,
) -> Iterator[PolicyParams]:
    """All parameter tuples of a family on the probability grid.

    Families: ``binary-eh`` (three free choices, capacity 1),
    ``battery-symmetric`` (capacity // 2 free values under symmetry +
    complementarity) and ``battery-complementary`` (one free charge value
    per level, discharge implied).  Iteration order is lexicographic in
    the free parameters, so grids enumerate deterministically.
    """
    grid = probability_grid(step)
    if family == "binary-eh":
        if capacity != 1:
            raise InvalidParameterError("binary-eh policies require capacity 1")
        for a in grid:
            for c in grid:
                for d in grid:
                    yield BinaryEHParams(a, c, d)
    elif family == "battery-symmetric":
        for combo in itertools.product(grid, repeat=capacity // 2):
            charge, discharge = symmetric_params(capacity, combo)
            yield BatteryParams(capacity, charge, discharge, waste_prob)
    elif family == "battery-complementary":
        for combo in itertools.product(grid, repeat=capacity):
            charge, discharge = complementary_params(capacity, combo)
            yield BatteryParams(capacity, charge, discharge, waste_prob)
    else:
        raise InvalidParameterError(f"unknown policy family: {family!r}")


# --------------------------------------------------------------------------
# Policy evaluation
# --------------------------------------------------------------------------


def evaluate_policy(spec: SystemSpec, params: PolicyParams, n: int, seed: int) -> RatePair:
    """Score one policy: trellis leakage from a sampled run, exact waste."""
    try:
        policy = build_policy(params, max_harvest=spec.max_harvest)
        cp = kernels.compile_policy(spec, policy)
        traj = sample_trajectory(spec, policy, n, seed, compiled=cp)
        est = estimate_leakage(traj, spec, policy, compiled=cp)
        chain = battery_chain(spec, policy, compiled=cp)
        waste = wasted_energy_exact(spec, policy, chain=chain, compiled=cp)
    except (InvalidParameterError, PolicyValidationError, ConvergenceError) as exc:
        raise EvaluationError(params, exc) from exc
    return RatePair(
        leakage=est.leakage,
        leakage_raw=est.leakage_raw,
        waste=waste,
        waste_mc=wasted_energy_mc(traj),
        params=params,
        seed=seed,
        n=n,
    )


def evaluate_policy_replicated(
    spec: SystemSpec, params: PolicyParams, n: int, seeds: Sequence[int]
) -> RatePair:
    """Average the leakage estimate over replicate seeds; waste is exact."""
    singles = [evaluate_policy(spec, params, n, s) for s in seeds]
    if len(singles) == 1:
        return singles[0]
    raws = np.array([p.leakage_raw for p in singles])
    h_x = spec.source_entropy
    raw = float(raws.mean())
    return RatePair(
        leakage=min(max(raw, 0.0), h_x),
        leakage_raw=raw,
        waste=singles[0].waste,
        waste_mc=float(np.mean([p.waste_mc for p in singles])),
        params=params,
        seed=singles[0].seed,
        n=n,
        replicates=len(singles),
        leakage_std=float(raws.std(ddof=1)),
    )


def _evaluate_task(task) -> RatePair:
    spec, params, n, seeds = task
    return evaluate_policy_replicated(spec, params, n, seeds)


def evaluation_seeds(
    master_seed: int, context: int, index: int, replicates: int
) -> tuple[int, ...]:
    return tuple(
        derive_seed(master_seed, context, index, rep) for rep in range(replicates)
    )


def evaluate_grid(
    spec: SystemSpec,
    params_list: Sequence[PolicyParams],
    n: int,
    master_seed: int,
    *,
    replicates: int = 1,
    workers: Optional[int] = None,
    context: int = 0,
) -> list[RatePair]:
    """Evaluate a parameter list, optionally across processes.

    Every evaluation draws from its own substream derived from
    (master seed, context, grid index, replicate), and results are merged
    in grid order, so the output is identical for any worker count.
    """
    tasks = [
        (spec, params, n, evaluation_seeds(master_seed, context, i, replicates))
        for i, params in enumerate(params_list)
    ]
    if workers is not None and workers > 1 and len(tasks) > 1:
        chunk = max(1, len(tasks) // (workers * 8))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_evaluate_task, tasks, chunksize=chunk))
    return [_evaluate_task(t) for t in tasks]


# --------------------------------------------------------------------------
# Dominance filtering and the time-sharing hull
# --------------------------------------------------------------------------


def _dedup_equal_pairs(points: Iterable[RatePair]) -> list[RatePair]:
    best: dict[tuple[float, float], RatePair] = {}
    for p in points:
        key = (p.leakage_raw, p.waste)
        held = best.get(key)
        if held is None or params_sort_key(p.params) < params_sort_key(held.params):
            best[key] = p
    return list(best.values())


def pareto_filter(points: Sequence[RatePair]) -> ParetoFront:
    """Keep exactly the non-dominated (leakage, waste) pairs.

    A point dominates another when it is no worse in both coordinates and
    strictly better in at least one; raw leakage is compared so clamping
    cannot manufacture ties at zero.  Equal pairs collapse to the
    lexicographically smallest parameters.  When replicate noise levels
    are available, a point within one standard deviation in leakage is not
    eliminated by that coordinate.
    """
    pts = _dedup_equal_pairs(points)
    if not pts:
        raise ValueError("no points to filter")
    noise_aware = any(p.leakage_std for p in pts)
    if noise_aware:
        kept = []
        for q in pts:
            dominated = False
            for p in pts:
                if p is q:
                    continue
                if (
                    p.leakage_raw <= q.leakage_raw
                    and p.waste <= q.waste
                    and (p.leakage_raw < q.leakage_raw or p.waste < q.waste)
                ):
                    sigma = max(p.leakage_std or 0.0, q.leakage_std or 0.0)
                    if q.leakage_raw - p.leakage_raw > sigma:
                        dominated = True
                        break
            if not dominated:
                kept.append(q)
    else:
        pts.sort(key=lambda p: (p.leakage_raw, p.waste, params_sort_key(p.params)))
        kept = []
        best_waste = math.inf
        for p in pts:
            if p.waste < best_waste:
                kept.append(p)
                best_waste = p.waste
    kept.sort(key=lambda p: (p.leakage_raw, p.waste, params_sort_key(p.params)))
    return ParetoFront(points=tuple(kept))


def convex_hull_timeshare(front: ParetoFront) -> tuple[RatePair, ...]:
    """Lower convex hull of the front: what time-sharing two policies reaches.

    Collinear interior points are dropped, so a straight front keeps only
    its endpoints.
    """
    pts = sorted(front.points, key=lambda p: (p.leakage_raw, p.waste))
    if len(pts) <= 2:
        return tuple(pts)

    def cross(o: RatePair, a: RatePair, b: RatePair) -> float:
        return (a.leakage_raw - o.leakage_raw) * (b.waste - o.waste) - (
            a.waste - o.waste
        ) * (b.leakage_raw - o.leakage_raw)

    hull: list[RatePair] = []
    for p in pts:
        while len(hull) >= 2 and cross(hull[-2], hull[-1], p) <= 0.0:
            hull.pop()
        hull.append(p)
    return tuple(hull)


def with_hull(front: ParetoFront) -> ParetoFront:
    return replace(front, hull=convex_hull_timeshare(front))


# --------------------------------------------------------------------------
# Experiment sweeps
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class HarvestSweepEntry:
    """Corner points and full front of one harvest-rate setting."""

    harvest_prob: float
    pairs: tuple[RatePair, ...]
    front: ParetoFront
    min_leakage: RatePair
    min_waste: RatePair
    no_battery: RatePair


def no_battery_point(load_prob: float, harvest_prob: float, n: int) -> RatePair:
    leak = no_battery_leakage(load_prob, harvest_prob)
    return RatePair(
        leakage=leak,
        leakage_raw=leak,
        waste=no_battery_waste(load_prob, harvest_prob),
        waste_mc=None,
        params=NoBatteryParams(),
        seed=None,
        n=n,
    )


def sweep_harvest_rate(
    pz_values: Sequence[float],
    base_spec: SystemSpec,
    step: float,
    n: int,
    master_seed: int,
    *,
    replicates: int = 1,
    workers: Optional[int] = None,
) -> list[HarvestSweepEntry]:
    """Grid-search the harvesting policy family for each harvest rate.

    For every value the full grid is evaluated with the battery and the
    storage-free system is scored in closed form, yielding the trade-off
    corner rows (min leakage and its waste, min waste and its leakage).
    """
    entries = []
    for j, pz in enumerate(pz_values):
        spec = replace(base_spec, max_harvest=1, capacity=1, harvest_prob=float(pz))
        params_list = list(grid_policies("binary-eh", 1, step))
        pairs = evaluate_grid(
            spec, params_list, n, master_seed,
            replicates=replicates, workers=workers, context=j,
        )
        front = with_hull(pareto_filter(pairs))
        entries.append(
            HarvestSweepEntry(
                harvest_prob=float(pz),
                pairs=tuple(pairs),
                front=front,
                min_leakage=front.min_leakage_point,
                min_waste=front.min_waste_point,
                no_battery=no_battery_point(spec.load_prob, float(pz), n),
            )
        )
    return entries


@dataclass(frozen=True)
class CapacitySweepEntry:
    capacity: int
    pairs: tuple[RatePair, ...]
    best: RatePair


def sweep_battery_capacity(
    k_values: Sequence[int],
    load_prob: float,
    step: float,
    n: int,
    master_seed: int,
    *,
    replicates: int = 1,
    workers: Optional[int] = None,
) -> list[CapacitySweepEntry]:
    """Minimum leakage per battery capacity, no harvesting.

    Searches the symmetric/complementary family, which pins down the
    optimum for an equiprobable load while keeping the grid tractable.
    """
    entries = []
    for j, k in enumerate(k_values):
        spec = SystemSpec(
            max_load=1, max_harvest=0, max_output=1, capacity=int(k),
            load_prob=load_prob, harvest_prob=0.0,
        )
        params_list = list(grid_policies("battery-symmetric", int(k), step))
        pairs = evaluate_grid(
            spec, params_list, n, master_seed,
            replicates=replicates, workers=workers, context=j,
        )
        best = min(pairs, key=lambda p: (p.leakage_raw, p.waste, params_sort_key(p.params)))
        entries.append(CapacitySweepEntry(capacity=int(k), pairs=tuple(pairs), best=best))
    return entries


@dataclass(frozen=True)
class WasteSweepEntry:
    capacity: int
    waste_prob: float
    pairs: tuple[RatePair, ...]
    best: RatePair


def sweep_waste(
    k_values: Sequence[int],
    pw_values: Sequence[float],
    load_prob: float,
    step: float,
    n: int,
    master_seed: int,
    *,
    replicates: int = 1,
    workers: Optional[int] = None,
) -> list[WasteSweepEntry]:
    """Best achievable point per (capacity, waste probability), no harvesting.

    Grid-waste mode: a full battery may burn a grid unit with the given
    probability.  Only complementary charge/discharge pairs are searched,
    and the per-setting point is the minimum-leakage policy (waste breaks
    ties).
    """
    entries = []
    for jk, k in enumerate(k_values):
        spec = SystemSpec(
            max_load=1, max_harvest=0, max_output=1, capacity=int(k),
            load_prob=load_prob, harvest_prob=0.0, grid_waste=True,
        )
        for jw, pw in enumerate(pw_values):
            params_list = list(
                grid_policies("battery-complementary", int(k), step, waste_prob=float(pw))
            )
            pairs = evaluate_grid(
                spec, params_list, n, master_seed,
                replicates=replicates, workers=workers,
                context=jk * len(pw_values) + jw,
            )
            best = min(pairs, key=lambda p: (p.leakage_raw, p.waste, params_sort_key(p.params)))
            entries.append(
                WasteSweepEntry(
                    capacity=int(k), waste_prob=float(pw),
                    pairs=tuple(pairs), best=best,
                )
            )
    return entries
