"""Energy system model: alphabets, sources, policies and their validation.

The system moves integer units of energy per time slot.  An energy
management policy maps (battery level, input load, harvested units) to a
distribution over (output load, next battery level).  The built-in policy
families cover the binary harvesting model, battery-only load shaping for
arbitrary capacity, and the grid-waste variant used for high-privacy
operation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import InvalidParameterError

PROB_SUM_TOL = 1e-12


def binary_entropy(p: float) -> float:
    """Entropy of a Bernoulli(p) source in bits, with 0*log2(0) = 0."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability out of range: {p}")
    if p in (0.0, 1.0):
        return 0.0
    return -p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p)


def no_battery_output(load: int, harvest: int) -> int:
    """Grid demand of a storage-free system: whatever the harvest cannot cover."""
    if load < 0 or harvest < 0:
        raise ValueError("load and harvest must be non-negative")
    return max(load - harvest, 0)


def no_battery_leakage(load_prob: float, harvest_prob: float) -> float:
    """Exact leakage rate of the storage-free binary system, in bits/step.

    With no battery the output is the memoryless map ``max(x - z, 0)``, so
    the leakage rate is the single-letter mutual information I(X;Y) with
    Pr{Y=1} = p_x(1-p_z) and H(Y|X) = p_x * h(p_z).
    """
    if not 0.0 <= load_prob <= 1.0:
        raise ValueError(f"probability out of range: {load_prob}")
    if not 0.0 <= harvest_prob <= 1.0:
        raise ValueError(f"probability out of range: {harvest_prob}")
    p_y1 = load_prob * (1.0 - harvest_prob)
    return binary_entropy(p_y1) - load_prob * binary_entropy(harvest_prob)


def no_battery_waste(load_prob: float, harvest_prob: float) -> float:
    """Exact wasted-energy rate of the storage-free binary system.

    A unit is wasted exactly when it is harvested while no load is present.
    """
    return harvest_prob * (1.0 - load_prob)


@dataclass(frozen=True)
class SystemSpec:
    """Alphabets, source statistics and operating mode of an energy system.

    Loads, harvests and outputs take integer values in ``0..max_*``; the
    battery holds ``0..capacity`` units.  Sources are Bernoulli:
    ``load_prob`` is Pr{X=1} and ``harvest_prob`` is Pr{Z=1}.  When
    ``grid_waste`` is set, policies may discard grid energy on top of the
    harvest (otherwise only harvested energy may ever be wasted).
    """

    max_load: int = 1
    max_harvest: int = 1
    max_output: int = 1
    capacity: int = 1
    load_prob: float = 0.5
    harvest_prob: float = 0.0
    grid_waste: bool = False

    def __post_init__(self):
        for name in ("max_load", "max_harvest", "max_output", "capacity"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {v!r}")
        for name in ("load_prob", "harvest_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} out of range: {v}")
        if self.max_load == 0 and self.load_prob != 0.0:
            raise ValueError("load_prob must be 0 when max_load is 0")
        if self.max_harvest == 0 and self.harvest_prob != 0.0:
            raise ValueError("harvest_prob must be 0 when max_harvest is 0")

    @property
    def states(self) -> int:
        return self.capacity + 1

    @property
    def load_pmf(self) -> np.ndarray:
        pmf = np.zeros(self.max_load + 1)
        pmf[0] = 1.0 - self.load_prob
        if self.max_load >= 1:
            pmf[1] = self.load_prob
        else:
            pmf[0] = 1.0
        return pmf

    @property
    def harvest_pmf(self) -> np.ndarray:
        pmf = np.zeros(self.max_harvest + 1)
        pmf[0] = 1.0 - self.harvest_prob
        if self.max_harvest >= 1:
            pmf[1] = self.harvest_prob
        else:
            pmf[0] = 1.0
        return pmf

    @property
    def source_entropy(self) -> float:
        """Entropy rate of the input load in bits/step."""
        return binary_entropy(self.load_prob)

    def conditions(self):
        """All (battery, load, harvest) conditions a policy must cover."""
        for b in range(self.capacity + 1):
            for x in range(self.max_load + 1):
                for z in range(self.max_harvest + 1):
                    yield (b, x, z)


@dataclass(frozen=True)
class Branch:
    """One policy outcome: emit ``output`` and move to ``next_level``."""

    output: int
    next_level: int
    prob: float


@dataclass(frozen=True)
class Policy:
    """Dense conditional table of an energy management policy.

    ``entries`` maps each condition ``(level, load, harvest)`` to the
    branches ``(output, next_level, prob)`` available there.  Instances are
    treated as immutable after construction and are safe to share across
    workers.
    """

    entries: Mapping[tuple[int, int, int], tuple[Branch, ...]]

    def branches(self, level: int, load: int, harvest: int) -> tuple[Branch, ...]:
        return self.entries[(level, load, harvest)]

    def to_text(self) -> str:
        """Serialize to a line-oriented audit format (lossless round-trip)."""
        lines = ["# energy policy table: condition -> branches"]
        for (b, x, z) in sorted(self.entries):
            parts = [
                f"y={br.output} b'={br.next_level} p={br.prob!r}"
                for br in self.entries[(b, x, z)]
            ]
            lines.append(f"b={b} x={x} z={z}: " + " | ".join(parts))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Policy":
        entries = {}
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            head, _, tail = line.partition(":")
            cond = dict(kv.split("=") for kv in head.split())
            branches = []
            for part in tail.split("|"):
                fields = dict(kv.split("=") for kv in part.split())
                branches.append(
                    Branch(int(fields["y"]), int(fields["b'"]), float(fields["p"]))
                )
            entries[(int(cond["b"]), int(cond["x"]), int(cond["z"]))] = tuple(branches)
        return cls(entries=entries)


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    violations: tuple[str, ...]


def validate_policy(policy: Policy, spec: SystemSpec) -> ValidationReport:
    """Check a policy against every physical constraint of the system.

    Returns a report listing all violations rather than stopping at the
    first: missing conditions, branch probabilities not summing to one,
    negative energy balance, forbidden waste, and out-of-range outputs or
    battery levels.  Only positive-probability branches are held to the
    physical constraints.
    """
    violations = []
    for cond in spec.conditions():
        b, x, z = cond
        branches = policy.entries.get(cond)
        if not branches:
            violations.append(f"incomplete policy: no entry for (b={b}, x={x}, z={z})")
            continue
        total = 0.0
        for br in branches:
            if not 0.0 <= br.prob <= 1.0 + PROB_SUM_TOL:
                violations.append(
                    f"(b={b}, x={x}, z={z}): branch probability {br.prob} out of [0, 1]"
                )
            total += br.prob
            if br.prob <= 0.0:
                continue
            if not 0 <= br.output <= spec.max_output:
                violations.append(
                    f"(b={b}, x={x}, z={z}): output {br.output} outside 0..{spec.max_output}"
                )
            if not 0 <= br.next_level <= spec.capacity:
                violations.append(
                    f"(b={b}, x={x}, z={z}): next level {br.next_level} outside 0..{spec.capacity}"
                )
            # Surplus after serving the load; must be non-negative and must
            # not exceed what the waste rule allows.
            w = z + br.output + b - br.next_level - x
            if w < 0:
                violations.append(
                    f"(b={b}, x={x}, z={z}) -> (y={br.output}, b'={br.next_level}): "
                    f"energy balance violated (deficit {-w})"
                )
            else:
                limit = z + br.output if spec.grid_waste else z
                if w > limit:
                    kind = "grid+harvest" if spec.grid_waste else "harvest"
                    violations.append(
                        f"(b={b}, x={x}, z={z}) -> (y={br.output}, b'={br.next_level}): "
                        f"waste {w} exceeds {kind} limit {limit}"
                    )
        if abs(total - 1.0) > PROB_SUM_TOL:
            violations.append(
                f"(b={b}, x={x}, z={z}): branch probabilities sum to {total!r}, not 1"
            )
    return ValidationReport(ok=not violations, violations=tuple(violations))


def _check_prob(name: str, p: float) -> float:
    if not 0.0 <= p <= 1.0:
        raise InvalidParameterError(f"{name} must lie in [0, 1], got {p}")
    return float(p)


# --------------------------------------------------------------------------
# Policy parameter families
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BinaryEHParams:
    """Parameters of the two-state policy for the binary harvesting system.

    ``charge_idle``   -- probability of charging from the grid when the
                         battery is empty and neither load nor harvest arrive.
    ``charge_loaded`` -- probability of charging via the grid when load and
                         harvest arrive together on an empty battery.
    ``discharge``     -- probability of serving a load from a full battery
                         when nothing is harvested.
    """

    charge_idle: float
    charge_loaded: float
    discharge: float

    family = "binary-eh"

    def __post_init__(self):
        _check_prob("charge_idle", self.charge_idle)
        _check_prob("charge_loaded", self.charge_loaded)
        _check_prob("discharge", self.discharge)

    @property
    def capacity(self) -> int:
        return 1

    def values(self) -> tuple[float, ...]:
        return (self.charge_idle, self.charge_loaded, self.discharge)


@dataclass(frozen=True)
class BatteryParams:
    """Parameters of a battery-only policy (no harvesting, binary load).

    ``charge[b]`` is the probability of charging from the grid in level
    ``b`` (0 <= b < capacity) when no load is present; ``discharge[i]`` the
    probability of serving a load from level ``i+1`` instead of the grid.
    ``waste_prob``, if set, lets a full battery draw (and discard) a grid
    unit when idle -- the grid-waste operating mode.
    """

    capacity: int
    charge: tuple[float, ...]
    discharge: tuple[float, ...]
    waste_prob: Optional[float] = None

    def __post_init__(self):
        if self.capacity < 1:
            raise InvalidParameterError("capacity must be at least 1")
        if len(self.charge) != self.capacity or len(self.discharge) != self.capacity:
            raise InvalidParameterError(
                f"need {self.capacity} charge and discharge probabilities, got "
                f"{len(self.charge)} and {len(self.discharge)}"
            )
        for i, q in enumerate(self.charge):
            _check_prob(f"charge[{i}]", q)
        for i, r in enumerate(self.discharge):
            _check_prob(f"discharge[{i}]", r)
        if self.waste_prob is not None:
            _check_prob("waste_prob", self.waste_prob)

    @property
    def family(self) -> str:
        return "battery" if self.waste_prob is None else "battery-waste"

    def values(self) -> tuple[float, ...]:
        vals = self.charge + self.discharge
        if self.waste_prob is not None:
            vals = vals + (self.waste_prob,)
        return vals


@dataclass(frozen=True)
class NoBatteryParams:
    """Marker for the deterministic storage-free reference system."""

    family = "no-battery"

    @property
    def capacity(self) -> int:
        return 0

    def values(self) -> tuple[float, ...]:
        return ()


PolicyParams = BinaryEHParams | BatteryParams | NoBatteryParams


# --------------------------------------------------------------------------
# Policy builders
# --------------------------------------------------------------------------


def build_binary_eh_policy(params: BinaryEHParams) -> Policy:
    """Two-state policy of the binary harvesting system (eleven transitions).

    Forced moves: an empty battery charges from a lone harvest unit and
    passes a lone load through to the grid; a full battery idles, absorbs a
    simultaneous load+harvest, and drops a harvest unit it cannot store.
    The three free choices are parameterized by ``params``.
    """
    a = params.charge_idle
    c = params.charge_loaded
    d = params.discharge
    entries = {
        # empty battery
        (0, 0, 0): (Branch(1, 1, a), Branch(0, 0, 1.0 - a)),
        (0, 0, 1): (Branch(0, 1, 1.0),),
        (0, 1, 0): (Branch(1, 0, 1.0),),
        (0, 1, 1): (Branch(1, 1, c), Branch(0, 0, 1.0 - c)),
        # full battery
        (1, 0, 0): (Branch(0, 1, 1.0),),
        (1, 0, 1): (Branch(0, 1, 1.0),),  # harvest has nowhere to go: wasted
        (1, 1, 0): (Branch(0, 0, d), Branch(1, 1, 1.0 - d)),
        (1, 1, 1): (Branch(0, 1, 1.0),),
    }
    return Policy(entries=entries)


def build_battery_policy(
    capacity: int,
    charge: Sequence[float],
    discharge: Sequence[float],
    waste_prob: Optional[float] = None,
) -> Policy:
    """Battery-only policy over levels 0..capacity with binary load/output.

    No harvesting: the only condition per level is the load bit.  An empty
    battery must pass loads to the grid; a full battery idles unless
    ``waste_prob`` lets it burn a grid unit.  Everywhere else the policy
    charges with ``charge[b]`` on idle slots and discharges with
    ``discharge[b-1]`` on loaded slots.
    """
    params = BatteryParams(
        capacity=capacity,
        charge=tuple(float(v) for v in charge),
        discharge=tuple(float(v) for v in discharge),
        waste_prob=None if waste_prob is None else float(waste_prob),
    )
    k = params.capacity
    entries: dict[tuple[int, int, int], tuple[Branch, ...]] = {}
    for b in range(k + 1):
        # idle slot
        if b < k:
            q = params.charge[b]
            entries[(b, 0, 0)] = (Branch(1, b + 1, q), Branch(0, b, 1.0 - q))
        elif params.waste_prob is not None:
            pw = params.waste_prob
            entries[(b, 0, 0)] = (Branch(1, k, pw), Branch(0, k, 1.0 - pw))
        else:
            entries[(b, 0, 0)] = (Branch(0, k, 1.0),)
        # loaded slot
        if b > 0:
            r = params.discharge[b - 1]
            entries[(b, 1, 0)] = (Branch(0, b - 1, r), Branch(1, b, 1.0 - r))
        else:
            entries[(b, 1, 0)] = (Branch(1, 0, 1.0),)
    return Policy(entries=entries)


def build_no_battery_policy(max_load: int = 1, max_harvest: int = 1) -> Policy:
    """Deterministic policy of the storage-free system: y = max(x - z, 0)."""
    entries = {}
    for x in range(max_load + 1):
        for z in range(max_harvest + 1):
            entries[(0, x, z)] = (Branch(no_battery_output(x, z), 0, 1.0),)
    return Policy(entries=entries)


def build_policy(params: PolicyParams, max_harvest: int = 1) -> Policy:
    """Materialize any parameter family into its policy table."""
    if isinstance(params, BinaryEHParams):
        return build_binary_eh_policy(params)
    if isinstance(params, BatteryParams):
        return build_battery_policy(
            params.capacity, params.charge, params.discharge, params.waste_prob
        )
    if isinstance(params, NoBatteryParams):
        return build_no_battery_policy(max_load=1, max_harvest=max_harvest)
    raise InvalidParameterError(f"unknown parameter family: {params!r}")


# --------------------------------------------------------------------------
# Constrained parameterizations of the battery-only family
# --------------------------------------------------------------------------


def symmetric_params(
    capacity: int, free: Sequence[float]
) -> tuple[tuple[float, ...], tuple[float, ...]]:
    """Charge/discharge vectors under the symmetry + complementarity rules.

    The constraints are ``charge[b] + discharge[b] = 1`` (the two
    transition probabilities between adjacent levels sum to one) together
    with mirror symmetry ``charge[b] = discharge[capacity-1-b]``.  They
    leave ``capacity // 2`` free values, which fill the leading charge
    probabilities; for odd capacities the middle one is forced to 0.5.
    """
    n_free = capacity // 2
    free = tuple(float(v) for v in free)
    if len(free) != n_free:
        raise InvalidParameterError(
            f"capacity {capacity} needs {n_free} free probabilities, got {len(free)}"
        )
    for i, v in enumerate(free):
        _check_prob(f"free[{i}]", v)
    charge = [0.0] * capacity
    for b in range(capacity):
        if b < n_free:
            charge[b] = free[b]
        elif 2 * b == capacity - 1:
            charge[b] = 0.5
        else:
            charge[b] = 1.0 - charge[capacity - 1 - b]
    discharge = [charge[capacity - j] for j in range(1, capacity + 1)]
    # complementarity holds by construction; anything past rounding noise is a bug
    for b in range(capacity):
        if abs(charge[b] + discharge[b] - 1.0) > 1e-15:
            raise AssertionError("complementarity violated; constraint solver bug")
    return tuple(charge), tuple(discharge)


def complementary_params(
    capacity: int, charge: Sequence[float]
) -> tuple[tuple[float, ...], tuple[float, ...]]:
    """Discharge vector implied by complementarity alone: r = 1 - q levelwise."""
    charge = tuple(float(v) for v in charge)
    if len(charge) != capacity:
        raise InvalidParameterError(
            f"capacity {capacity} needs {capacity} charge probabilities, got {len(charge)}"
        )
    for i, v in enumerate(charge):
        _check_prob(f"charge[{i}]", v)
    return charge, tuple(1.0 - q for q in charge)
