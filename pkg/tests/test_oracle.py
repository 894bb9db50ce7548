import json
import numpy as np
import pytest

from swingdual.contract import preset_exp_utility, preset_swing
from swingdual.model import MarketModel
from swingdual.oracle import (FiniteTree, OracleSizeError, admissible_chains, dual_mean, exact_value,
                              exact_value_enumeration, perturb_envelopes, random_instance, run_oracle_suite,
                              verify_dual_exactness)


def test_toy_exact_value(toy_spec, toy_prices):
    tree = FiniteTree.path(toy_prices[:-1])
    value, env = exact_value(tree, toy_spec)
    assert value == pytest.approx(5.0)
    assert exact_value_enumeration(tree, toy_spec) == pytest.approx(5.0)
    assert env.at(1)[:, 0].tolist() == pytest.approx([0.0, 3.0, 5.0])
    assert sorted(admissible_chains(toy_spec, toy_prices)) == [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3), (3, 3)]


def test_tree_from_model():
    model = MarketModel(sigma=0.5, meanrev=0.9, s0=1.0, horizon=3)
    tree = FiniteTree.from_model(model)
    assert tree.horizon == 3 and tree.node_count == 15
    assert tree.prices[1] == pytest.approx(np.exp([-0.5, 0.5]))
    _, weights = tree.leaf_paths()
    assert weights.sum() == pytest.approx(1.0)
    assert tree.path_prices().shape == (8, 5)
    three = FiniteTree.from_model(model, branching=3)
    logs = np.log(three.prices[1])
    assert np.dot(three.probs[0][0], logs) == pytest.approx(0.0, abs=1e-12)
    assert np.dot(three.probs[0][0], logs ** 2) == pytest.approx(0.25)


def test_tree_validation(rng):
    with pytest.raises(ValueError):
        FiniteTree(2, (np.array([1.0]), np.array([1.0, 2.0])), (np.array([[0.3, 0.3]]),))
    with pytest.raises(ValueError):
        FiniteTree(1, (np.array([1.0]), np.array([-1.0])), (np.ones((1, 1)),))
    with pytest.raises(OracleSizeError):
        FiniteTree.random(rng, 13)
    big = FiniteTree.random(rng, 10)
    with pytest.raises(OracleSizeError):
        exact_value_enumeration(big, preset_swing(rights=1, horizon=10))
    with pytest.raises(ValueError):
        exact_value(big, preset_swing(rights=1, horizon=9))


def test_dynamic_program_matches_enumeration(rng):
    for _ in range(25):
        tree, spec = random_instance(rng)
        value, _ = exact_value(tree, spec)
        assert exact_value_enumeration(tree, spec) == pytest.approx(value, abs=1e-12)


def test_exact_doob_inputs_close_the_gap(rng):
    for preset in ("swing", "exputil", "liquidation"):
        for _ in range(5):
            tree, spec = random_instance(rng, preset=preset)
            check = verify_dual_exactness(tree, spec)
            assert check.theta_deviation < 1e-10
            assert check.gap < 1e-10
            assert check.defect < 1e-10


def test_perturbed_envelopes_bound_from_above(rng):
    model = MarketModel(sigma=0.4, meanrev=0.5, s0=1.1, horizon=4)
    tree = FiniteTree.from_model(model)
    for spec in (preset_swing(rights=2, horizon=4, delta=2), preset_exp_utility(1.0, rights=2, horizon=4)):
        value, env = exact_value(tree, spec)
        assert dual_mean(tree, spec, env) == pytest.approx(value, abs=1e-12)
        for scale in (0.05, 0.3):
            assert dual_mean(tree, spec, perturb_envelopes(env, rng, scale)) >= value - 1e-12


def test_value_monotone_in_rights_and_refraction():
    tree = FiniteTree.from_model(MarketModel(sigma=0.5, horizon=5))
    by_rights = [exact_value(tree, preset_swing(rights=L, horizon=5))[0] for L in (1, 2, 3)]
    assert by_rights == sorted(by_rights)
    by_delta = [exact_value(tree, preset_swing(rights=2, horizon=5, delta=d))[0] for d in (1, 2, 3)]
    assert by_delta == sorted(by_delta, reverse=True)


def test_oracle_suite_reports(capsys):
    report = run_oracle_suite(count=15, seed=3)
    assert report["ok"] is True
    assert report["instances"] == 15 and not report["failures"]
    assert report["worst"]["value_mismatch"] < 1e-12
    json.dumps(report)
    err = capsys.readouterr().err
    assert '"event":"oracle_suite"' in err
