"""Acceptance gate: every criterion at its stated tolerance, full budget.

One test per criterion; each prints a PASS/FAIL line with the measured
values.  The heavy grids run at the published settings (0.1 increments,
n = 10^6 steps per policy), so the whole module takes tens of minutes on
one core.  Run it with ``pytest tests/test_acceptance.py -v -s``.
"""

import itertools

import numpy as np
import pytest

import meterpriv as mp
from meterpriv import kernels
from meterpriv.cli import main as cli_main

N_FULL = 10**6
STEP = 0.1
MASTER_SEED = 20260810


def report(criterion: str, ok: bool, detail: str) -> None:
    print(f"{'PASS' if ok else 'FAIL'} {criterion}: {detail}")
    assert ok, f"{criterion}: {detail}"


@pytest.fixture(scope="module")
def harvest_sweep():
    base = mp.SystemSpec(capacity=1, load_prob=0.5, harvest_prob=0.0)
    return mp.sweep_harvest_rate(
        [0.0, 0.2, 0.4, 0.6, 0.8, 1.0], base, STEP, N_FULL, MASTER_SEED
    )


# (min I_p, E_w at min I_p, min E_w, I_p at min E_w) per harvest rate
TRADEOFF_TABLE = {
    0.0: (0.5, 0.0, 0.0, 0.5),
    0.2: (0.213, 0.055, 0.02, 0.462),
    0.4: (0.118, 0.12, 0.081, 0.243),
    0.6: (0.062, 0.213, 0.185, 0.088),
    0.8: (0.02, 0.332, 0.32, 0.032),
    1.0: (0.0, 0.5, 0.5, 0.0),
}


def test_criterion_1_tradeoff_table(harvest_sweep):
    # Note on the pz=0.6 min-waste reference pair (0.185, 0.088): it matches
    # the grid policy (0.1, 0, 1) -> E_w = 0.1846, I_p ~ 0.088, but the same
    # grid contains (0, 0, 1) -> E_w = 0.18 exactly (stationary solution in
    # closed form) with I_p ~ 0.114 (confirmed by the exact block oracle), so
    # the true min-waste corner differs from the reference on the leakage
    # coordinate by ~0.026.  Checked faithfully as stated regardless.
    tol = 0.02
    ok = True
    details = []
    for entry in harvest_sweep:
        exp = TRADEOFF_TABLE[entry.harvest_prob]
        got = (
            entry.min_leakage.leakage,
            entry.min_leakage.waste,
            entry.min_waste.waste,
            entry.min_waste.leakage,
        )
        deltas = [abs(g - e) for g, e in zip(got, exp)]
        row_ok = max(deltas) <= tol
        ok = ok and row_ok
        details.append(
            f"pz={entry.harvest_prob}: got ({got[0]:.3f}, {got[1]:.3f}, "
            f"{got[2]:.3f}, {got[3]:.3f}) expected {exp} max|d|={max(deltas):.4f}"
            + (
                "" if row_ok or entry.harvest_prob != 0.6 else
                " [reference pair belongs to the grid neighbor (0.1, 0, 1); "
                "the true grid min-waste policy (0, 0, 1) has E_w = 0.18 "
                "exactly and leakage ~0.114 by the exact block oracle]"
            )
        )
    report("criterion 1 (harvest-rate trade-off corners)", ok, "; ".join(details))


def test_criterion_2_equiprobable_corners():
    base = mp.SystemSpec(capacity=1, load_prob=0.5, harvest_prob=0.0)
    entry = mp.sweep_harvest_rate([0.5], base, STEP, N_FULL, MASTER_SEED + 1)[0]
    lo, hi = entry.min_leakage, entry.min_waste
    tol = 0.02
    ok = (
        abs(lo.leakage - 0.088) <= tol
        and abs(lo.waste - 0.163) <= tol
        and abs(hi.waste - 0.125) <= tol
        and abs(hi.leakage - 0.171) <= tol
    )
    report(
        "criterion 2 (equiprobable corner points)", ok,
        f"min I_p=({lo.leakage:.4f}, {lo.waste:.4f}) expected (0.088, 0.163); "
        f"min E_w=({hi.leakage:.4f}, {hi.waste:.4f}) expected (0.171, 0.125)",
    )


def test_criterion_3_heavy_and_light_load():
    # Note on the light-load waste references: by conservation, every policy
    # satisfies E_w = E[Z] + E[Y] - E[X] >= p_z - p_x = 0.39 at these
    # settings (surplus harvest must overflow a finite battery), so the
    # 0.088 / 0.087 reference values cannot be reached by any policy; the
    # leakage references do hold.  Checked faithfully as stated regardless.
    tol = 0.02
    expected = {
        0.89: (0.026, 0.043, 0.011, 0.105),
        0.11: (0.027, 0.088, 0.087, 0.03),
    }
    ok = True
    details = []
    for i, (px, exp) in enumerate(expected.items()):
        base = mp.SystemSpec(capacity=1, load_prob=px, harvest_prob=0.0)
        entry = mp.sweep_harvest_rate([0.5], base, STEP, N_FULL, MASTER_SEED + 2 + i)[0]
        got = (
            entry.min_leakage.leakage,
            entry.min_leakage.waste,
            entry.min_waste.waste,
            entry.min_waste.leakage,
        )
        deltas = [abs(g - e) for g, e in zip(got, exp)]
        row_ok = max(deltas) <= tol
        ok = ok and row_ok
        details.append(
            f"px={px}: got ({got[0]:.3f}, {got[1]:.3f}, {got[2]:.3f}, {got[3]:.3f}) "
            f"expected {exp} max|d|={max(deltas):.4f}"
            + (
                "" if row_ok or px != 0.11 else
                " [waste references violate E_w >= p_z - p_x = 0.39; "
                "unreachable for any policy at p_x=0.11, p_z=0.5]"
            )
        )
    report("criterion 3 (heavy/light load corners)", ok, "; ".join(details))


def test_criterion_4_capacity_sweep():
    entries = mp.sweep_battery_capacity(
        [1, 2, 3, 4, 5, 6], 0.5, STEP, N_FULL, MASTER_SEED + 4
    )
    values = [e.best.leakage for e in entries]
    ok_k1 = abs(values[0] - 0.5) <= 0.01
    ok_monotone = all(a >= b - 1e-12 for a, b in zip(values, values[1:]))
    ok_k6 = values[-1] < 0.1
    ok = ok_k1 and ok_monotone and ok_k6
    report(
        "criterion 4 (battery capacity sweep)", ok,
        f"min I_p over K=1..6: {[round(v, 4) for v in values]} "
        f"(K=1 within 0.01 of 0.5: {ok_k1}; non-increasing: {ok_monotone}; "
        f"K=6 < 0.1: {ok_k6})",
    )


def test_criterion_5_grid_waste():
    full = mp.sweep_waste([1, 3], [1.0], 0.5, STEP, N_FULL, MASTER_SEED + 5)
    ok_full = all(
        e.best.leakage <= 0.01 and abs(e.best.waste - 0.5) <= 0.01 for e in full
    )
    half = mp.sweep_waste([1, 3], [0.5], 0.5, STEP, N_FULL, MASTER_SEED + 6)
    by_k = {e.capacity: e.best for e in half}
    # weak dominance of K=3 over K=1 at the shared waste level, allowing the
    # Monte Carlo noise floor on the leakage coordinate
    ok_dom = (
        by_k[3].leakage_raw <= by_k[1].leakage_raw + 0.005
        and by_k[3].waste <= by_k[1].waste + 1e-9
    )
    ok = ok_full and ok_dom
    report(
        "criterion 5 (grid-waste mode)", ok,
        f"pw=1 points: {[(round(e.best.leakage, 4), round(e.best.waste, 4)) for e in full]} "
        f"expected (<=0.01, 0.5 +/- 0.01); pw=0.5 K=1 ({by_k[1].leakage:.4f}, {by_k[1].waste:.4f}) "
        f"vs K=3 ({by_k[3].leakage:.4f}, {by_k[3].waste:.4f}) dominance: {ok_dom}",
    )


def test_criterion_6_oracle_equivalence():
    spec = mp.SystemSpec(capacity=1, load_prob=0.5, harvest_prob=0.5)
    policy = mp.build_binary_eh_policy(mp.BinaryEHParams(0.3, 0.6, 0.7))
    cp = kernels.compile_policy(spec, policy)
    worst = 0.0
    for y_seq in itertools.product(range(2), repeat=10):
        exact = mp.exact_sequence_logprob(y_seq, spec, policy, compiled=cp)
        scaled, fail = kernels.forward_single(np.asarray(y_seq, np.int8), cp.marginal_kernel)
        assert fail == -1
        worst = max(worst, float(abs(exact - scaled)))
    recursion = mp.exact_block_leakage(spec, policy, 6)
    pathwalk = mp.brute_block_leakage(spec, policy, 6)
    block_delta = abs(recursion - pathwalk)
    ok = worst < 1e-9 and block_delta < 1e-9
    report(
        "criterion 6 (oracle equivalence)", ok,
        f"max scaled-vs-exact delta over 2^10 sequences: {worst:.3e}; "
        f"block leakage recursion-vs-pathwalk delta at n=6: {block_delta:.3e} (tol 1e-9)",
    )


def test_criterion_7_memoryless_closed_form():
    spec = mp.SystemSpec(capacity=0, load_prob=0.5, harvest_prob=0.5)
    policy = mp.build_no_battery_policy(1, 1)
    target = mp.no_battery_leakage(0.5, 0.5)
    deltas = []
    for seed in range(5):
        traj = mp.sample_trajectory(spec, policy, N_FULL, seed=mp.derive_seed(MASTER_SEED + 7, seed))
        est = mp.estimate_leakage(traj, spec, policy)
        deltas.append(abs(est.leakage - target))
    ok = all(d <= 0.005 for d in deltas)
    report(
        "criterion 7 (memoryless closed form)", ok,
        f"|estimate - {target:.4f}| over 5 seeds: {[round(d, 5) for d in deltas]} (tol 0.005)",
    )


def test_criterion_8_exact_vs_mc_waste():
    rng = np.random.default_rng(MASTER_SEED + 8)
    spec = mp.SystemSpec(capacity=1, load_prob=0.5, harvest_prob=0.5)
    n = N_FULL
    failures = []
    for k in range(20):
        params = mp.BinaryEHParams(*rng.random(3))
        policy = mp.build_binary_eh_policy(params)
        exact = mp.wasted_energy_exact(spec, policy)
        traj = mp.sample_trajectory(spec, policy, n, seed=mp.derive_seed(MASTER_SEED + 8, k))
        mc = mp.wasted_energy_mc(traj)
        # batch-means standard error of the mean; per-step surpluses are
        # short-range correlated through the battery level
        surplus = (
            traj.harvest.astype(np.int64) + traj.output_load - traj.input_load
        ).astype(np.float64)
        batches = surplus.reshape(1000, -1).mean(axis=1)
        se = batches.std(ddof=1) / np.sqrt(len(batches))
        if abs(mc - exact) > 3 * se + 1e-12:
            failures.append((params.values(), exact, mc, se))
    ok = not failures
    report(
        "criterion 8 (exact vs Monte Carlo waste)", ok,
        f"20 random policies at n={n}: all within 3 sigma"
        + ("" if ok else f"; failures: {failures}"),
    )


def test_criterion_9_determinism(tmp_path):
    args = [
        "pareto", "--px", "0.5", "--pz", "0.5", "--K", "1",
        "--step", "0.25", "--n", "50000", "--seed", "77",
    ]
    tables = []
    for label, workers in (("a", "1"), ("b", "1"), ("c", "2")):
        out = tmp_path / label
        code = cli_main(args + ["--workers", workers, "--out", str(out)])
        assert code == 0
        tables.append((out / "results.csv").read_bytes())
    ok = tables[0] == tables[1] == tables[2]
    report(
        "criterion 9 (determinism)", ok,
        "identical master seed gives bitwise-identical result tables across "
        f"repeat runs and worker counts (1, 1, 2): {ok}",
    )
