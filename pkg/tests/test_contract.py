import numpy as np
import pytest

from swingdual.contract import (ConstantRefraction, ContractError, ExerciseChain, OffPeakVolume, TableVolume,
                                UnitVolume, chain_payoff, exercise_count, is_admissible, preset_by_name,
                                preset_exp_utility, preset_liquidation, preset_swing)


def test_swing_cashflow_on_toy_path(toy_spec):
    assert chain_payoff(toy_spec, ExerciseChain((1, 2)), [4.0, 3.0]) == pytest.approx(5.0)
    assert chain_payoff(toy_spec, (0, 1), [2.0, 4.0]) == pytest.approx(4.0)
    assert chain_payoff(toy_spec, (2, 3), [3.0, 0.0]) == pytest.approx(2.0)


def test_unit_volume_forbids_same_date(toy_spec):
    assert is_admissible(toy_spec, (1, 2), [4.0, 3.0])
    assert not is_admissible(toy_spec, (1, 1), [4.0, 4.0])
    # the cemetery takes every remaining right
    assert is_admissible(toy_spec, (3, 3), [0.0, 0.0])


def test_refraction_period_enforced():
    spec = preset_swing(rights=3, horizon=6, delta=2)
    assert spec.next_date(6) == spec.cemetery == 7
    assert is_admissible(spec, (0, 2, 4), [1.0] * 3)
    assert not is_admissible(spec, (0, 1), [1.0] * 2)
    assert not is_admissible(spec, (5, 6), [1.0] * 2)
    assert is_admissible(spec, (5, 7, 7), [1.0, 0.0, 0.0])
    assert is_admissible(spec, (6, 7, 7), [1.0, 0.0, 0.0])


def test_off_peak_profile():
    vol = OffPeakVolume(rights=3, cemetery=15)
    caps = [int(vol(j, np.ones(1))[0]) for j in range(14)]
    assert caps == [1, 1, 1, 1, 1, 2, 2, 1, 1, 1, 1, 1, 2, 2]
    assert int(vol(15, np.ones(1))[0]) == 3
    assert int(OffPeakVolume(rights=1, cemetery=15)(5, np.ones(1))[0]) == 1
    spec = preset_swing(rights=3, horizon=14, volume="offpeak")
    assert is_admissible(spec, (5, 5, 6), [1.0] * 3)
    assert not is_admissible(spec, (4, 4), [1.0] * 2)
    assert not is_admissible(spec, (5, 5, 5), [1.0] * 3)


def test_volume_profiles_return_rights_at_cemetery():
    prices = np.ones(3)
    assert list(UnitVolume(4, 9)(9, prices)) == [4, 4, 4]
    table = TableVolume(3, 4, (1, 2, 2, 1))
    assert [int(table(j, prices)[0]) for j in range(5)] == [1, 2, 2, 1, 3]
    assert ConstantRefraction(3, 10)(8) == 10


def test_exercise_count_and_chain_validation():
    assert exercise_count([1, 3, 3]) == 2
    assert exercise_count([2]) == 1
    with pytest.raises(ValueError):
        exercise_count([])
    with pytest.raises(ValueError):
        ExerciseChain((2, 1))
    with pytest.raises(ValueError):
        ExerciseChain((-1, 0))
    assert len(ExerciseChain((0, 0, 4))) == 3


def test_exp_utility_chain_is_utility_of_total():
    alpha = 0.5
    spec = preset_exp_utility(alpha, strike=1.0, rights=2, horizon=2)
    assert chain_payoff(spec, (1, 2), [4.0, 3.0]) == pytest.approx(-np.exp(-alpha * 5.0))
    u, v = spec.cashflows(1, np.array([4.0]))
    assert u[1, 0] == 0.0 and u[2, 0] == pytest.approx(-np.exp(-1.5))
    assert v[1, 0] == pytest.approx(np.exp(-1.5))
    assert v[2, 0] == 1.0
    assert u[0, 0] == 0.0 and v[0, 0] == 1.0


def test_cemetery_values_per_preset():
    assert list(preset_swing(rights=3, horizon=4).cemetery_values()) == [0.0, 0.0, 0.0, 0.0]
    assert list(preset_exp_utility(1.0, rights=3, horizon=4).cemetery_values()) == [0.0, -1.0, -1.0, -1.0]
    assert list(preset_liquidation(0.1, 1.0, rights=2, horizon=4).cemetery_values()) == [0.0, 0.0, 0.0]


def test_liquidation_same_date_block():
    a, b = 0.1, 0.7
    spec = preset_liquidation(a, b, rights=2, horizon=5)
    for j, s in [(0, 1.2), (3, 0.9)]:
        assert chain_payoff(spec, (j, j), [s, s]) == pytest.approx(s * (1.0 + np.exp(-b)))
    value, product = spec.exercise_value(1, 2, 3, np.array([0.9]))
    assert value[0] == pytest.approx(0.9 * (1.0 + np.exp(-b)))
    assert product[0] == pytest.approx(np.exp(-a * b * 3))  # V^L is one


def test_exercise_value_matches_chain_payoff():
    spec = preset_exp_utility(0.8, rights=3, horizon=3, volume="full")
    price = np.array([2.2])
    value, _ = spec.exercise_value(1, 3, 1, price)
    assert value[0] == pytest.approx(chain_payoff(spec, (1, 1, 1), [2.2] * 3))


def test_preset_preconditions():
    with pytest.raises(ContractError):
        preset_liquidation(0.1, 1.0, rights=2, horizon=20)
    with pytest.raises(ContractError):
        preset_exp_utility(0.0)
    with pytest.raises(ContractError):
        preset_swing(delta=0)
    with pytest.raises(ContractError):
        preset_swing(volume="hourly")


def test_preset_by_name_defaults():
    swing = preset_by_name("swing", strike=1.0, rights=2, horizon=5, volume=None, delta=1)
    assert swing.name == "swing" and int(swing.max_volume(0, np.ones(1))[0]) == 1
    liq = preset_by_name("liquidation", strike=1.0, rights=3, horizon=5, volume=None, delta=1, liq_a=0.1)
    assert int(liq.max_volume(0, np.ones(1))[0]) == 3
    util = preset_by_name("exputil", strike=1.0, rights=2, horizon=5, volume="offpeak", delta=2, alpha=2.0)
    assert util.name == "exputil" and util.next_date(1) == 3
    with pytest.raises(ContractError):
        preset_by_name("barrier", strike=1.0, rights=2, horizon=5, volume=None, delta=1)
