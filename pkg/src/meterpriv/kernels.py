"""Array form of a policy plus the jit-compiled inner loops.

Everything hot runs over plain ndarrays: trajectory sampling walks the
branch tables step by step, and the leakage recursions reduce to chains of
small matrix-vector products with per-step renormalization.  The array
bundle is derived once per (system, policy) pair and shared by the
simulator, the trellis estimator and the stationary-distribution solver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import PolicyValidationError
from .model import Policy, SystemSpec


@dataclass(frozen=True)
class CompiledPolicy:
    """Dense array view of a policy for a fixed system.

    ``joint_kernel[x, y, s, s']`` is p(x)*sum_z p(z)*policy(y, s'|s, x, z),
    the one-step weight of observing input x and output y while moving the
    battery from s to s'.  ``marginal_kernel[y]`` sums it over x.  The
    branch tables drive sampling: per condition index ``(b*(N+1)+x)*(M+1)+z``
    they list the positive-probability branches with cumulative weights.
    """

    n_states: int
    n_load: int
    n_harvest: int
    n_output: int
    load_cum: np.ndarray
    harvest_cum: np.ndarray
    joint_kernel: np.ndarray      # (n_load, n_output, S, S)
    marginal_kernel: np.ndarray   # (n_output, S, S)
    branch_count: np.ndarray      # (conditions,)
    branch_cum: np.ndarray        # (conditions, max_branches)
    branch_output: np.ndarray     # (conditions, max_branches) int8
    branch_next: np.ndarray       # (conditions, max_branches) int8
    transition_matrix: np.ndarray  # (S, S) battery chain under the sources
    step_waste_mean: np.ndarray    # (S,) E[z + y - x | level]


def compile_policy(spec: SystemSpec, policy: Policy) -> CompiledPolicy:
    s = spec.states
    nx = spec.max_load + 1
    nz = spec.max_harvest + 1
    ny = spec.max_output + 1
    load_pmf = spec.load_pmf
    harvest_pmf = spec.harvest_pmf

    n_cond = s * nx * nz
    joint = np.zeros((nx, ny, s, s))
    waste_mean = np.zeros(s)
    max_branches = 1
    for cond, branches in policy.entries.items():
        live = sum(1 for br in branches if br.prob > 0.0)
        max_branches = max(max_branches, live)

    branch_count = np.zeros(n_cond, dtype=np.int64)
    branch_cum = np.ones((n_cond, max_branches))
    branch_out = np.zeros((n_cond, max_branches), dtype=np.int8)
    branch_nxt = np.zeros((n_cond, max_branches), dtype=np.int8)

    for b in range(s):
        for x in range(nx):
            for z in range(nz):
                branches = policy.entries.get((b, x, z))
                if not branches:
                    raise PolicyValidationError(
                        [f"incomplete policy: no entry for (b={b}, x={x}, z={z})"]
                    )
                c = (b * nx + x) * nz + z
                w_xz = load_pmf[x] * harvest_pmf[z]
                acc = 0.0
                j = 0
                for br in branches:
                    if br.prob <= 0.0:
                        continue
                    joint[x, br.output, b, br.next_level] += w_xz * br.prob
                    waste_mean[b] += w_xz * br.prob * (z + br.output - x)
                    acc += br.prob
                    branch_cum[c, j] = acc
                    branch_out[c, j] = br.output
                    branch_nxt[c, j] = br.next_level
                    j += 1
                branch_count[c] = j

    marginal = joint.sum(axis=0)
    transition = joint.sum(axis=(0, 1))
    return CompiledPolicy(
        n_states=s,
        n_load=nx,
        n_harvest=nz,
        n_output=ny,
        load_cum=np.cumsum(load_pmf),
        harvest_cum=np.cumsum(harvest_pmf),
        joint_kernel=joint,
        marginal_kernel=marginal,
        branch_count=branch_count,
        branch_cum=branch_cum,
        branch_output=branch_out,
        branch_next=branch_nxt,
        transition_matrix=transition,
        step_waste_mean=waste_mean,
    )


@njit(cache=True)
def sample_steps(gen, n, load_cum, harvest_cum, n_load, n_harvest,
                 branch_count, branch_cum, branch_output, branch_next):
    """Walk the policy for n steps from an empty battery.

    Draw order per step: one uniform for the load, one for the harvest,
    then one for the branch choice -- the last only where the condition
    actually has more than one branch.
    """
    loads = np.empty(n, dtype=np.int8)
    harvests = np.empty(n, dtype=np.int8)
    outputs = np.empty(n, dtype=np.int8)
    levels = np.empty(n + 1, dtype=np.int8)
    levels[0] = 0
    b = 0
    for i in range(n):
        u = gen.random()
        x = 0
        while load_cum[x] <= u:
            x += 1
        u = gen.random()
        z = 0
        while harvest_cum[z] <= u:
            z += 1
        c = (b * n_load + x) * n_harvest + z
        j = 0
        k = branch_count[c]
        if k > 1:
            u = gen.random()
            while j < k - 1 and branch_cum[c, j] <= u:
                j += 1
        outputs[i] = branch_output[c, j]
        b = branch_next[c, j]
        loads[i] = x
        harvests[i] = z
        levels[i + 1] = b
    return loads, harvests, outputs, levels


@njit(cache=True)
def forward_pair(loads, outputs, marginal_kernel, joint_kernel):
    """Scaled forward recursions for both state metrics in one pass.

    Returns the accumulated log2 of the per-step sums for the marginal and
    joint metrics (each equals the log2 sequence probability) and the index
    of the first step whose observation had probability zero, or -1.
    """
    n = loads.shape[0]
    n_states = marginal_kernel.shape[1]
    mu = np.zeros(n_states)
    nu = np.zeros(n_states)
    mu[0] = 1.0
    nu[0] = 1.0
    new_mu = np.zeros(n_states)
    new_nu = np.zeros(n_states)
    log_mu = 0.0
    log_nu = 0.0
    for i in range(n):
        y = outputs[i]
        x = loads[i]
        a = marginal_kernel[y]
        c = joint_kernel[x, y]
        s_mu = 0.0
        s_nu = 0.0
        for t in range(n_states):
            acc_m = 0.0
            acc_n = 0.0
            for f in range(n_states):
                acc_m += mu[f] * a[f, t]
                acc_n += nu[f] * c[f, t]
            new_mu[t] = acc_m
            new_nu[t] = acc_n
            s_mu += acc_m
            s_nu += acc_n
        if s_mu <= 0.0 or s_nu <= 0.0:
            return np.nan, np.nan, i
        for t in range(n_states):
            mu[t] = new_mu[t] / s_mu
            nu[t] = new_nu[t] / s_nu
        log_mu += np.log2(s_mu)
        log_nu += np.log2(s_nu)
    return log_mu, log_nu, -1


@njit(cache=True)
def forward_single(obs, kernels):
    """Scaled forward recursion over one observation stream.

    ``kernels[obs[i]]`` selects the step matrix.  Returns the accumulated
    log2 probability and the first zero-probability step (or -1).
    """
    n = obs.shape[0]
    n_states = kernels.shape[1]
    v = np.zeros(n_states)
    v[0] = 1.0
    new_v = np.zeros(n_states)
    total = 0.0
    for i in range(n):
        a = kernels[obs[i]]
        s = 0.0
        for t in range(n_states):
            acc = 0.0
            for f in range(n_states):
                acc += v[f] * a[f, t]
            new_v[t] = acc
            s += acc
        if s <= 0.0:
            return np.nan, i
        for t in range(n_states):
            v[t] = new_v[t] / s
        total += np.log2(s)
    return total, -1
