"""Leakage-rate estimation via the scaled forward sum-product recursion.

Two state metrics run over the battery trellis: the marginal metric tracks
a scaled p(state, y_1..y_k), the joint metric a scaled p(state, x_1..x_k,
y_1..y_k).  Renormalizing both to unit sum each step and accumulating the
log scale factors recovers -log2 p(y^n) and -log2 p(x^n, y^n) without
underflow; the leakage rate follows as

    H(X) - (1/n) log2 p(y^n) + (1/n) log2 p(x^n, y^n).

Small-n brute-force oracles (exact unscaled recursion, full block
enumeration, and a recursion-free path walker) back the estimator up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .errors import EnumerationSizeError, ZeroProbabilityError
from .model import Policy, SystemSpec
from .simulate import Trajectory

METRIC_SUM_TOL = 1e-12
# enumeration budgets, sized for binary alphabets at n=12 / n=8
MAX_MARGINAL_SEQUENCES = 4096
MAX_JOINT_SEQUENCES = 65536


@dataclass(frozen=True)
class TrellisMetrics:
    """Scaled forward state metrics after ``step`` observations.

    ``marginal`` and ``joint`` each sum to one; ``log_scale_*`` accumulate
    the log2 scale factors applied so far, i.e. the running values of
    -log2 p(y^k) and -log2 p(x^k, y^k).
    """

    marginal: np.ndarray
    joint: np.ndarray
    log_scale_marginal: float
    log_scale_joint: float
    step: int


def init_metrics(capacity: int) -> TrellisMetrics:
    """Point mass on the empty battery, zero accumulated scale."""
    if capacity < 0:
        raise ValueError("capacity must be non-negative")
    marginal = np.zeros(capacity + 1)
    joint = np.zeros(capacity + 1)
    marginal[0] = 1.0
    joint[0] = 1.0
    return TrellisMetrics(
        marginal=marginal, joint=joint,
        log_scale_marginal=0.0, log_scale_joint=0.0, step=0,
    )


def forward_step(
    metrics: TrellisMetrics,
    output: int,
    load: int,
    spec: SystemSpec,
    policy: Policy,
    compiled: Optional[kernels.CompiledPolicy] = None,
) -> TrellisMetrics:
    """Advance both metrics by one observed (output, load) pair.

    The marginal metric sums the step kernel over all inputs and harvests;
    the joint metric conditions on the observed input and sums over
    harvests only.  Each result is renormalized to unit sum and the log2
    scale factor added to the running totals.
    """
    cp = compiled or kernels.compile_policy(spec, policy)
    if not 0 <= output <= spec.max_output:
        raise ValueError(f"output {output} outside alphabet 0..{spec.max_output}")
    if not 0 <= load <= spec.max_load:
        raise ValueError(f"load {load} outside alphabet 0..{spec.max_load}")
    new_marginal = metrics.marginal @ cp.marginal_kernel[output]
    s_mu = float(new_marginal.sum())
    if s_mu <= 0.0:
        raise ZeroProbabilityError(metrics.step, "marginal")
    new_joint = metrics.joint @ cp.joint_kernel[load, output]
    s_nu = float(new_joint.sum())
    if s_nu <= 0.0:
        raise ZeroProbabilityError(metrics.step, "joint")
    return TrellisMetrics(
        marginal=new_marginal / s_mu,
        joint=new_joint / s_nu,
        log_scale_marginal=metrics.log_scale_marginal - math.log2(s_mu),
        log_scale_joint=metrics.log_scale_joint - math.log2(s_nu),
        step=metrics.step + 1,
    )


@dataclass(frozen=True)
class LeakageEstimate:
    """Leakage rate of one run plus the pieces it was assembled from.

    ``leakage_raw`` is the unclamped estimate; ``leakage`` clamps it to
    [0, H(X)].  ``neg_log_py`` and ``neg_log_pxy`` are the per-step
    description lengths -(1/n) log2 p(y^n) and -(1/n) log2 p(x^n, y^n).
    """

    leakage: float
    leakage_raw: float
    source_entropy: float
    neg_log_py: float
    neg_log_pxy: float
    equivocation_rate: float
    n: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "leakage": self.leakage,
            "leakage_raw": self.leakage_raw,
            "source_entropy": self.source_entropy,
            "neg_log_py": self.neg_log_py,
            "neg_log_pxy": self.neg_log_pxy,
            "equivocation_rate": self.equivocation_rate,
            "n": self.n,
            "seed": self.seed,
        }


def forward_logprobs(
    loads: np.ndarray,
    outputs: np.ndarray,
    spec: SystemSpec,
    policy: Policy,
    compiled: Optional[kernels.CompiledPolicy] = None,
) -> tuple[float, float]:
    """log2 p(y^n) and log2 p(x^n, y^n) via the scaled recursions."""
    cp = compiled or kernels.compile_policy(spec, policy)
    loads = np.ascontiguousarray(loads, dtype=np.int8)
    outputs = np.ascontiguousarray(outputs, dtype=np.int8)
    log_py, log_pxy, fail = kernels.forward_pair(
        loads, outputs, cp.marginal_kernel, cp.joint_kernel
    )
    if fail >= 0:
        raise ZeroProbabilityError(int(fail))
    return float(log_py), float(log_pxy)


def estimate_leakage(traj: Trajectory, spec: SystemSpec, policy: Policy,
                     compiled: Optional[kernels.CompiledPolicy] = None) -> LeakageEstimate:
    """Leakage rate of a sampled run, in bits/step.

    Runs both scaled forward recursions along the trajectory and assembles
    H(X) + (1/n) log2 p(x^n,y^n) - (1/n) log2 p(y^n).  Raises a
    zero-probability error if the run is impossible under ``policy``
    (possible only when evaluating a run against a different policy).
    """
    log_py, log_pxy = forward_logprobs(
        traj.input_load, traj.output_load, spec, policy, compiled=compiled
    )
    n = traj.n
    neg_log_py = -log_py / n
    neg_log_pxy = -log_pxy / n
    h_x = spec.source_entropy
    raw = h_x + neg_log_py - neg_log_pxy
    clamped = min(max(raw, 0.0), h_x)
    return LeakageEstimate(
        leakage=clamped,
        leakage_raw=raw,
        source_entropy=h_x,
        neg_log_py=neg_log_py,
        neg_log_pxy=neg_log_pxy,
        equivocation_rate=h_x - clamped,
        n=n,
        seed=traj.seed,
    )


# --------------------------------------------------------------------------
# Exact small-n machinery
# --------------------------------------------------------------------------


def exact_sequence_logprob(
    outputs: Sequence[int],
    spec: SystemSpec,
    policy: Policy,
    compiled: Optional[kernels.CompiledPolicy] = None,
) -> float:
    """log2 p(y^n) by the unscaled forward recursion (short sequences).

    Returns -inf when the sequence has probability exactly zero.
    """
    cp = compiled or kernels.compile_policy(spec, policy)
    v = np.zeros(cp.n_states)
    v[0] = 1.0
    for y in outputs:
        v = v @ cp.marginal_kernel[int(y)]
    total = float(v.sum())
    return math.log2(total) if total > 0.0 else float("-inf")


def exact_joint_logprob(
    loads: Sequence[int],
    outputs: Sequence[int],
    spec: SystemSpec,
    policy: Policy,
    compiled: Optional[kernels.CompiledPolicy] = None,
) -> float:
    """log2 p(x^n, y^n) by the unscaled forward recursion."""
    if len(loads) != len(outputs):
        raise ValueError("load and output sequences must have equal length")
    cp = compiled or kernels.compile_policy(spec, policy)
    v = np.zeros(cp.n_states)
    v[0] = 1.0
    for x, y in zip(loads, outputs):
        v = v @ cp.joint_kernel[int(x), int(y)]
    total = float(v.sum())
    return math.log2(total) if total > 0.0 else float("-inf")


def _entropy_bits(probs: np.ndarray) -> float:
    p = probs[probs > 0.0]
    return float(-(p * np.log2(p)).sum())


def block_marginal_pmf(spec: SystemSpec, policy: Policy, n: int) -> np.ndarray:
    """p(y^n) for every output block, indexed big-endian by (y_1..y_n)."""
    ny = spec.max_output + 1
    if ny**n > MAX_MARGINAL_SEQUENCES:
        raise EnumerationSizeError(
            f"{ny}^{n} output blocks exceed the enumeration budget"
        )
    cp = kernels.compile_policy(spec, policy)
    state = np.zeros((1, cp.n_states))
    state[0, 0] = 1.0
    for _ in range(n):
        # expand every prefix by one output symbol
        state = np.einsum("ps,yst->pyt", state, cp.marginal_kernel)
        state = state.reshape(-1, cp.n_states)
    return state.sum(axis=1)


def block_joint_pmf(spec: SystemSpec, policy: Policy, n: int) -> np.ndarray:
    """p(x^n, y^n) for every block pair, indexed big-endian by (x_i, y_i) digits."""
    nx = spec.max_load + 1
    ny = spec.max_output + 1
    if (nx * ny) ** n > MAX_JOINT_SEQUENCES:
        raise EnumerationSizeError(
            f"({nx}*{ny})^{n} block pairs exceed the enumeration budget"
        )
    cp = kernels.compile_policy(spec, policy)
    joint = cp.joint_kernel.reshape(nx * ny, cp.n_states, cp.n_states)
    state = np.zeros((1, cp.n_states))
    state[0, 0] = 1.0
    for _ in range(n):
        state = np.einsum("ps,cst->pct", state, joint)
        state = state.reshape(-1, cp.n_states)
    return state.sum(axis=1)


def exact_block_leakage(spec: SystemSpec, policy: Policy, n: int) -> float:
    """Exact n-block leakage (1/n)[H(X^n) + H(Y^n) - H(X^n, Y^n)] in bits/step.

    The source term uses the analytic n*H(X) of the memoryless input; the
    output and joint terms come from full enumeration of the forward
    recursion over all blocks.
    """
    if n < 1:
        raise ValueError("block length must be positive")
    h_y = _entropy_bits(block_marginal_pmf(spec, policy, n))
    h_xy = _entropy_bits(block_joint_pmf(spec, policy, n))
    h_x = n * spec.source_entropy
    return (h_x + h_y - h_xy) / n


def brute_block_pmfs(spec: SystemSpec, policy: Policy, n: int):
    """Block pmfs by walking every (x, z, branch) path -- no recursion.

    Independent cross-check for the forward-recursion enumeration: descends
    the raw policy table step by step, multiplying source and branch
    probabilities along each path, and accumulates the probability mass of
    every (x^n, y^n) pair.  Returns (marginal over y^n, joint, marginal
    over x^n) as dicts keyed by tuples.
    """
    if (2 * (spec.max_load + 1) * (spec.max_output + 1)) ** n > 8 * MAX_JOINT_SEQUENCES:
        raise EnumerationSizeError(f"path enumeration too large at n={n}")
    load_pmf = spec.load_pmf
    harvest_pmf = spec.harvest_pmf
    marginal: dict[tuple, float] = {}
    joint: dict[tuple, float] = {}
    sources: dict[tuple, float] = {}

    def descend(step: int, level: int, xs: tuple, ys: tuple, prob: float):
        if step == n:
            joint[(xs, ys)] = joint.get((xs, ys), 0.0) + prob
            marginal[ys] = marginal.get(ys, 0.0) + prob
            sources[xs] = sources.get(xs, 0.0) + prob
            return
        for x in range(spec.max_load + 1):
            px = load_pmf[x]
            if px == 0.0:
                continue
            for z in range(spec.max_harvest + 1):
                pz = harvest_pmf[z]
                if pz == 0.0:
                    continue
                for br in policy.entries[(level, x, z)]:
                    if br.prob <= 0.0:
                        continue
                    descend(
                        step + 1, br.next_level,
                        xs + (x,), ys + (br.output,),
                        prob * px * pz * br.prob,
                    )

    descend(0, 0, (), (), 1.0)
    return marginal, joint, sources


def brute_block_leakage(spec: SystemSpec, policy: Policy, n: int) -> float:
    """n-block leakage from the path-walking enumerator (fully independent)."""
    marginal, joint, sources = brute_block_pmfs(spec, policy, n)

    def entropy(d: dict) -> float:
        return -sum(p * math.log2(p) for p in d.values() if p > 0.0)

    return (entropy(sources) + entropy(marginal) - entropy(joint)) / n
