from dataclasses import dataclass

import numpy as np
import pytest
from scipy.stats import ks_2samp

from swingdual.model import (MarketModel, PATH_BLOCK, PathSet, block_sizes, path_block,
                             simulate_inner_block, simulate_inner_paths, simulate_paths)


def test_paths_shape_start_and_cemetery(small_model):
    ps = simulate_paths(small_model, 50, seed=1)
    assert ps.paths.shape == (50, small_model.horizon + 2)
    assert ps.count == 50
    assert ps.cemetery == small_model.horizon + 1
    assert np.all(ps.at(0) == small_model.s0)
    assert np.all(ps.at(ps.cemetery) == 0.0)
    assert np.all(ps.paths[:, :-1] > 0)


def test_same_seed_bit_identical_across_thread_counts(small_model):
    count = 2 * PATH_BLOCK + 17
    one = simulate_paths(small_model, count, seed=7, workers=1)
    many = simulate_paths(small_model, count, seed=7, workers=4)
    again = simulate_paths(small_model, count, seed=7, workers=16)
    assert np.array_equal(one.paths, many.paths)
    assert np.array_equal(one.paths, again.paths)


def test_different_seeds_differ(small_model):
    a = simulate_paths(small_model, 10, seed=1)
    b = simulate_paths(small_model, 10, seed=2)
    assert not np.array_equal(a.paths, b.paths)


def test_smaller_count_is_a_prefix(small_model):
    big = simulate_paths(small_model, PATH_BLOCK + 5, seed=3)
    small = simulate_paths(small_model, 100, seed=3)
    assert np.array_equal(big.paths[:100], small.paths)


def test_blocks_concatenate_to_path_set(small_model):
    count = PATH_BLOCK + 300
    blocks = [path_block(small_model, 11, b, size) for b, size in enumerate(block_sizes(count))]
    assert [len(b) for b in blocks] == [PATH_BLOCK, 300]
    joined = np.concatenate(blocks, axis=0)
    assert np.array_equal(joined, simulate_paths(small_model, count, seed=11).paths)


def test_path_set_is_read_only(small_model):
    ps = simulate_paths(small_model, 4, seed=0)
    with pytest.raises(ValueError):
        ps.paths[0, 1] = 5.0


def test_sigma_zero_paths_are_deterministic(flat_model):
    ps = simulate_paths(flat_model, 20, seed=5)
    assert np.allclose(ps.paths, ps.paths[0])
    expected = np.exp(0.1 * np.log(flat_model.s0))
    assert ps.at(1)[0] == pytest.approx(expected)


def test_inner_paths_start_at_given_state(small_model):
    inner = simulate_inner_paths(small_model, 3, 2.5, 40, seed=9, key=(0, 3))
    assert inner.start_date == 3
    assert inner.paths.shape == (40, small_model.horizon + 2 - 3)
    assert np.all(inner.at(3) == 2.5)
    assert np.all(inner.at(inner.cemetery) == 0.0)


def test_inner_streams_keyed_by_state(small_model):
    a = simulate_inner_paths(small_model, 2, 1.0, 30, seed=4, key=(0, 2))
    b = simulate_inner_paths(small_model, 2, 1.0, 30, seed=4, key=(1, 2))
    a2 = simulate_inner_paths(small_model, 2, 1.0, 30, seed=4, key=(0, 2))
    assert not np.array_equal(a.paths, b.paths)
    assert np.array_equal(a.paths, a2.paths)


def test_inner_block_matches_single_starts(small_model):
    starts = [0.8, 1.3]
    block = simulate_inner_block(small_model, 1, starts, 25, seed=2, keys=[(0, 1), (1, 1)])
    for i, s in enumerate(starts):
        single = simulate_inner_paths(small_model, 1, s, 25, seed=2, key=(i, 1))
        assert np.array_equal(block[i * 25:(i + 1) * 25], single.paths)


def test_inner_paths_at_last_date(small_model):
    T = small_model.horizon
    inner = simulate_inner_paths(small_model, T, 1.7, 5, seed=1)
    assert inner.paths.shape == (5, 2)
    assert np.all(inner.paths[:, 0] == 1.7)
    assert np.all(inner.paths[:, 1] == 0.0)


def test_one_step_law_matches_moments():
    model = MarketModel(sigma=0.5, meanrev=0.9, horizon=4)
    inner = simulate_inner_paths(model, 2, 2.0, 20000, seed=21)
    logs = np.log(inner.at(3))
    mean, var = model.log_step_moments(2.0)
    assert mean == pytest.approx(0.1 * np.log(2.0))
    assert var == pytest.approx(0.25)
    se = np.sqrt(var / logs.size)
    assert abs(logs.mean() - mean) < 5 * se
    assert logs.var(ddof=1) == pytest.approx(var, rel=0.05)
    reference = np.random.default_rng(0).normal(mean, np.sqrt(var), 20000)
    assert ks_2samp(logs, reference).pvalue > 1e-3


@pytest.mark.parametrize("kwargs", [dict(sigma=-0.1), dict(s0=0.0), dict(horizon=0)])
def test_invalid_model_parameters(kwargs):
    with pytest.raises(ValueError):
        MarketModel(**kwargs)


def test_invalid_counts_and_start_dates(small_model):
    with pytest.raises(ValueError):
        simulate_paths(small_model, 0, seed=1)
    with pytest.raises(ValueError):
        simulate_inner_paths(small_model, small_model.horizon + 1, 1.0, 5, seed=1)
    with pytest.raises(ValueError):
        simulate_inner_paths(small_model, 1, -1.0, 5, seed=1)


def test_path_set_rejects_flat_arrays():
    with pytest.raises(ValueError):
        PathSet(np.zeros(5), seed=0)


@dataclass(frozen=True)
class DriftlessWalk:
    """Geometric random walk; only what the simulators need from a price process."""
    horizon: int = 3
    s0: float = 2.0
    step: float = 0.1

    @property
    def cemetery(self) -> int:
        return self.horizon + 1

    def advance(self, log_prices, noise):
        return log_prices + self.step * noise


def test_simulators_accept_any_price_model():
    walk = DriftlessWalk()
    ps = simulate_paths(walk, 40, seed=3, workers=2)
    assert ps.paths.shape == (40, walk.cemetery + 1)
    assert np.all(ps.at(0) == 2.0) and np.all(ps.at(walk.cemetery) == 0.0)
    increments = np.diff(np.log(ps.paths[:, :-1]), axis=1)
    assert 0.07 < increments.std() < 0.13
    inner = simulate_inner_paths(walk, 1, 1.5, 10, seed=3, key=(0, 1))
    assert np.all(inner.at(1) == 1.5)


def test_path_block_is_the_matching_slice(small_model):
    count = 2 * PATH_BLOCK + 1
    assert block_sizes(count) == [PATH_BLOCK, PATH_BLOCK, 1]
    full = simulate_paths(small_model, count, seed=8).paths
    assert np.array_equal(path_block(small_model, 8, 1, PATH_BLOCK), full[PATH_BLOCK:2 * PATH_BLOCK])
    assert np.array_equal(path_block(small_model, 8, 2, 1), full[-1:])
    with pytest.raises(ValueError):
        block_sizes(0)
