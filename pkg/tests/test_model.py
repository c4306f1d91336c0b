import math

import numpy as np
import pytest

from meterpriv import (
    BatteryParams,
    BinaryEHParams,
    Branch,
    InvalidParameterError,
    Policy,
    PolicyValidationError,
    SystemSpec,
    binary_entropy,
    build_battery_policy,
    build_binary_eh_policy,
    build_no_battery_policy,
    complementary_params,
    no_battery_leakage,
    no_battery_output,
    no_battery_waste,
    symmetric_params,
    validate_policy,
)


class TestBinaryEntropy:
    def test_maximum(self):
        assert binary_entropy(0.5) == 1.0

    def test_degenerate(self):
        assert binary_entropy(0.0) == 0.0
        assert binary_entropy(1.0) == 0.0

    def test_heavy_load_value(self):
        # biased source tuned to half a bit per step
        assert binary_entropy(0.89) == pytest.approx(0.4999, abs=5e-5)

    def test_symmetry(self):
        for p in np.linspace(0.0, 1.0, 41):
            assert binary_entropy(p) == pytest.approx(binary_entropy(1.0 - p), abs=1e-15)

    def test_domain_error(self):
        with pytest.raises(ValueError):
            binary_entropy(-0.1)
        with pytest.raises(ValueError):
            binary_entropy(1.1)


class TestNoBattery:
    @pytest.mark.parametrize(
        "load,harvest,expected", [(1, 0, 1), (0, 1, 0), (1, 1, 0), (0, 0, 0), (3, 1, 2)]
    )
    def test_output_rule(self, load, harvest, expected):
        assert no_battery_output(load, harvest) == expected

    def test_output_rejects_negative(self):
        with pytest.raises(ValueError):
            no_battery_output(-1, 0)

    def test_leakage_no_harvest_is_source_entropy(self):
        for px in (0.1, 0.5, 0.89):
            assert no_battery_leakage(px, 0.0) == pytest.approx(binary_entropy(px), abs=1e-15)

    def test_leakage_full_harvest_is_zero(self):
        for px in (0.0, 0.3, 1.0):
            assert no_battery_leakage(px, 1.0) == pytest.approx(0.0, abs=1e-15)

    def test_leakage_half_half(self):
        # enumerating the four (x, y) cells: Pr{Y=1} = 1/4, H(Y|X) = 1/2
        expected = binary_entropy(0.25) - 0.5
        assert no_battery_leakage(0.5, 0.5) == pytest.approx(expected, abs=1e-15)
        assert expected == pytest.approx(0.3113, abs=5e-5)

    def test_waste(self):
        assert no_battery_waste(0.5, 0.5) == 0.25
        assert no_battery_waste(0.5, 0.0) == 0.0


class TestBinaryEHPolicy:
    def test_eleven_transitions(self):
        pol = build_binary_eh_policy(BinaryEHParams(0.3, 0.6, 0.7))
        count = sum(len(branches) for branches in pol.entries.values())
        assert count == 11
        assert len(pol.entries) == 8

    def test_forced_transitions(self):
        pol = build_binary_eh_policy(BinaryEHParams(0.3, 0.6, 0.7))
        assert pol.entries[(0, 1, 0)] == (Branch(1, 0, 1.0),)
        assert pol.entries[(1, 0, 1)] == (Branch(0, 1, 1.0),)  # harvest unit wasted
        assert pol.entries[(0, 0, 1)] == (Branch(0, 1, 1.0),)

    def test_free_transitions(self):
        pol = build_binary_eh_policy(BinaryEHParams(0.3, 0.6, 0.7))
        assert pol.entries[(0, 0, 0)] == (Branch(1, 1, 0.3), Branch(0, 0, 0.7))
        assert pol.entries[(0, 1, 1)][0] == Branch(1, 1, 0.6)
        assert pol.entries[(1, 1, 0)][0] == Branch(0, 0, 0.7)

    def test_parameter_range_checked(self):
        with pytest.raises(InvalidParameterError):
            BinaryEHParams(1.5, 0.5, 0.5)
        with pytest.raises(InvalidParameterError):
            BinaryEHParams(0.5, -0.1, 0.5)

    def test_always_valid(self):
        rng = np.random.default_rng(7)
        spec = SystemSpec(capacity=1, load_prob=0.5, harvest_prob=0.5)
        for _ in range(50):
            a, c, d = rng.random(3)
            pol = build_binary_eh_policy(BinaryEHParams(a, c, d))
            assert validate_policy(pol, spec).ok


class TestBatteryPolicy:
    def test_uniform_k1(self):
        pol = build_battery_policy(1, [0.5], [0.5])
        spec = SystemSpec(max_harvest=0, capacity=1, load_prob=0.5, harvest_prob=0.0)
        assert validate_policy(pol, spec).ok
        assert pol.entries[(0, 0, 0)] == (Branch(1, 1, 0.5), Branch(0, 0, 0.5))
        assert pol.entries[(1, 1, 0)] == (Branch(0, 0, 0.5), Branch(1, 1, 0.5))
        assert pol.entries[(0, 1, 0)] == (Branch(1, 0, 1.0),)
        assert pol.entries[(1, 0, 0)] == (Branch(0, 1, 1.0),)

    def test_full_battery_waste_branch(self):
        pol = build_battery_policy(2, [0.4, 0.4], [0.6, 0.6], waste_prob=1.0)
        assert pol.entries[(2, 0, 0)] == (Branch(1, 2, 1.0), Branch(0, 2, 0.0))
        spec = SystemSpec(max_harvest=0, capacity=2, load_prob=0.5,
                          harvest_prob=0.0, grid_waste=True)
        assert validate_policy(pol, spec).ok

    def test_waste_branch_invalid_without_waste_mode(self):
        pol = build_battery_policy(2, [0.4, 0.4], [0.6, 0.6], waste_prob=1.0)
        spec = SystemSpec(max_harvest=0, capacity=2, load_prob=0.5, harvest_prob=0.0)
        report = validate_policy(pol, spec)
        assert not report.ok
        assert any("waste" in v for v in report.violations)

    def test_never_charging_passes_loads_through(self):
        pol = build_battery_policy(1, [0.0], [1.0])
        # from the empty start, the battery never charges: output equals input
        live = [br for br in pol.entries[(0, 0, 0)] if br.prob > 0]
        assert live == [Branch(0, 0, 1.0)]

    def test_length_mismatch(self):
        with pytest.raises(InvalidParameterError):
            build_battery_policy(2, [0.5], [0.5, 0.5])

    def test_always_valid_random(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            k = int(rng.integers(1, 6))
            pol = build_battery_policy(k, rng.random(k), rng.random(k))
            spec = SystemSpec(max_harvest=0, capacity=k, load_prob=0.5, harvest_prob=0.0)
            assert validate_policy(pol, spec).ok


class TestSymmetricParams:
    def test_k1_fully_determined(self):
        charge, discharge = symmetric_params(1, ())
        assert charge == (0.5,)
        assert discharge == (0.5,)

    def test_k2(self):
        charge, discharge = symmetric_params(2, (0.3,))
        assert charge == (0.3, 0.7)
        assert discharge == (0.7, 0.3)

    def test_k3_middle_forced(self):
        charge, discharge = symmetric_params(3, (0.2,))
        assert charge == (0.2, 0.5, 0.8)
        assert discharge == (0.8, 0.5, 0.2)

    def test_constraints_hold(self):
        rng = np.random.default_rng(3)
        for k in range(1, 9):
            free = tuple(rng.random(k // 2))
            charge, discharge = symmetric_params(k, free)
            for b in range(k):
                # adjacent-level transition probabilities sum to one
                assert charge[b] + discharge[b] == pytest.approx(1.0, abs=1e-15)
                # mirror symmetry across the diagram
                assert charge[b] == discharge[k - 1 - b] or (
                    charge[b] == pytest.approx(discharge[k - 1 - b], abs=0.0)
                )

    def test_wrong_free_count(self):
        with pytest.raises(InvalidParameterError):
            symmetric_params(3, (0.2, 0.3))

    def test_complementary(self):
        charge, discharge = complementary_params(3, (0.1, 0.5, 0.9))
        assert charge == (0.1, 0.5, 0.9)
        assert discharge == pytest.approx((0.9, 0.5, 0.1), abs=1e-15)


class TestValidatePolicy:
    def test_energy_balance_violation(self):
        pol = Policy(entries={
            (0, 0, 0): (Branch(0, 0, 1.0),),
            (0, 0, 1): (Branch(0, 1, 1.0),),
            (0, 1, 0): (Branch(0, 0, 1.0),),  # load served from nothing
            (0, 1, 1): (Branch(0, 0, 1.0),),
            (1, 0, 0): (Branch(0, 1, 1.0),),
            (1, 0, 1): (Branch(0, 1, 1.0),),
            (1, 1, 0): (Branch(0, 0, 1.0),),
            (1, 1, 1): (Branch(0, 1, 1.0),),
        })
        spec = SystemSpec(capacity=1, load_prob=0.5, harvest_prob=0.5)
        report = validate_policy(pol, spec)
        assert not report.ok
        assert any("energy balance" in v for v in report.violations)

    def test_grid_waste_flag_controls_verdict(self):
        k = 2
        base = build_battery_policy(k, [0.5, 0.5], [0.5, 0.5])
        entries = dict(base.entries)
        # full battery pulls a grid unit while idle and keeps its level
        entries[(k, 0, 0)] = (Branch(1, k, 1.0),)
        pol = Policy(entries=entries)
        strict = SystemSpec(max_harvest=0, capacity=k, load_prob=0.5, harvest_prob=0.0)
        relaxed = SystemSpec(max_harvest=0, capacity=k, load_prob=0.5,
                             harvest_prob=0.0, grid_waste=True)
        assert not validate_policy(pol, strict).ok
        assert validate_policy(pol, relaxed).ok

    def test_incomplete_policy_reported_not_raised(self):
        pol = Policy(entries={(0, 0, 0): (Branch(0, 0, 1.0),)})
        spec = SystemSpec(capacity=1, load_prob=0.5, harvest_prob=0.5)
        report = validate_policy(pol, spec)
        assert not report.ok
        assert any("incomplete" in v for v in report.violations)

    def test_probability_sum_checked(self):
        pol = build_no_battery_policy(1, 1)
        entries = dict(pol.entries)
        entries[(0, 0, 0)] = (Branch(0, 0, 0.5),)
        bad = Policy(entries=entries)
        spec = SystemSpec(capacity=0, load_prob=0.5, harvest_prob=0.5)
        report = validate_policy(bad, spec)
        assert any("sum" in v for v in report.violations)


class TestPolicySerialization:
    def test_round_trip(self):
        pol = build_binary_eh_policy(BinaryEHParams(0.3, 1 / 3, 0.7))
        text = pol.to_text()
        back = Policy.from_text(text)
        assert back.entries == pol.entries

    def test_round_trip_battery(self):
        pol = build_battery_policy(3, [0.1, 0.5, 0.9], [0.25, 0.5, 0.75], waste_prob=0.2)
        assert Policy.from_text(pol.to_text()).entries == pol.entries


class TestSystemSpec:
    def test_rejects_bad_probs(self):
        with pytest.raises(ValueError):
            SystemSpec(load_prob=1.2)
        with pytest.raises(ValueError):
            SystemSpec(harvest_prob=-0.2)

    def test_rejects_inconsistent_alphabets(self):
        with pytest.raises(ValueError):
            SystemSpec(max_harvest=0, harvest_prob=0.5)

    def test_pmfs(self):
        spec = SystemSpec(load_prob=0.3, harvest_prob=0.8)
        assert spec.load_pmf.tolist() == [0.7, 0.3]
        assert spec.harvest_pmf.tolist() == pytest.approx([0.2, 0.8])
        assert spec.states == 2

    def test_source_entropy(self):
        assert SystemSpec(load_prob=0.5).source_entropy == 1.0
