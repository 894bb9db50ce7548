"""Exponential Ornstein-Uhlenbeck spot price model and path simulation.

log S_j = (1 - k)(log S_{j-1} - mu) + mu + sigma * eps_j, S_0 = s0, and the
cemetery date T+1 carries price 0 so every payoff vanishes there.

Randomness comes from counter-based Philox streams derived with
``numpy.random.SeedSequence``:
  - outer paths are produced in fixed blocks of PATH_BLOCK paths, block b
    keyed by (seed, 0, b);
  - conditional (inner) paths started from outer state (m, j) are keyed by
    (seed, 1, m, j).
Neither partition depends on the number of worker threads, which keeps every
PathSet bit-identical across thread counts.
"""
from __future__ import annotations
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Protocol, Sequence, Tuple

import numpy as np

PATH_BLOCK = 1024
OUTER_STREAM = 0
INNER_STREAM = 1


class PriceModel(Protocol):  # pragma: no cover - structural typing helper
    """What the simulators need from a price process."""
    horizon: int
    s0: float

    @property
    def cemetery(self) -> int: ...

    def advance(self, log_prices: np.ndarray, noise: np.ndarray) -> np.ndarray:
        """Map log-prices at date j and standard normals to log-prices at j+1."""
        ...


@dataclass(frozen=True)
class MarketModel:
    sigma: float = 0.5
    meanrev: float = 0.9
    mu: float = 0.0
    s0: float = 1.0
    horizon: int = 50

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if not self.s0 > 0:
            raise ValueError(f"s0 must be > 0, got {self.s0}")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ValueError(f"horizon must be an integer >= 1, got {self.horizon}")

    @property
    def cemetery(self) -> int:
        return self.horizon + 1

    def advance(self, log_prices: np.ndarray, noise: np.ndarray) -> np.ndarray:
        return (1.0 - self.meanrev) * (log_prices - self.mu) + self.mu + self.sigma * noise

    def log_step_moments(self, price: float) -> Tuple[float, float]:
        """Mean and variance of log S_{j+1} given S_j = price."""
        mean = (1.0 - self.meanrev) * (np.log(price) - self.mu) + self.mu
        return float(mean), float(self.sigma ** 2)


@dataclass(frozen=True)
class PathSet:
    """Prices indexed (path, date) for dates start_date..cemetery.

    The matrix is made read-only on construction so the set can be shared
    between threads.
    """
    paths: np.ndarray
    seed: int
    start_date: int = 0
    count: int = field(init=False)

    def __post_init__(self):
        if self.paths.ndim != 2:
            raise ValueError(f"paths must be a 2-D (path, date) matrix, got shape {self.paths.shape}")
        self.paths.setflags(write=False)
        object.__setattr__(self, "count", int(self.paths.shape[0]))

    @property
    def cemetery(self) -> int:
        return self.start_date + self.paths.shape[1] - 1

    def at(self, date: int) -> np.ndarray:
        """Prices of every path at an absolute date."""
        return self.paths[:, date - self.start_date]


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent Philox generator for (seed, key...)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))))


def _evolve(model: PriceModel, start_prices: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """Prices for dates start..cemetery given the start prices and (paths, steps) noise."""
    n_paths, steps = noise.shape
    out = np.empty((n_paths, steps + 2))
    logs = np.log(start_prices)
    out[:, 0] = start_prices
    for s in range(steps):
        logs = model.advance(logs, noise[:, s])
        out[:, s + 1] = np.exp(logs)
    out[:, -1] = 0.0
    return out


def block_sizes(count: int) -> List[int]:
    """Sizes of the PATH_BLOCK partition of `count` paths; block b starts at b * PATH_BLOCK."""
    if count < 1:
        raise ValueError(f"path count must be >= 1, got {count}")
    return [min(PATH_BLOCK, count - first) for first in range(0, count, PATH_BLOCK)]


def path_block(model: PriceModel, seed: int, index: int, size: int) -> np.ndarray:
    """Outer block `index` on its own; the same rows simulate_paths puts there."""
    noise = stream(seed, OUTER_STREAM, index).standard_normal((size, model.horizon))
    return _evolve(model, np.full(size, model.s0), noise)


def simulate_paths(model: PriceModel, count: int, seed: int, workers: int = 1) -> PathSet:
    sizes = block_sizes(count)
    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(lambda b: path_block(model, seed, b, sizes[b]), range(len(sizes))))
    else:
        blocks = [path_block(model, seed, b, sizes[b]) for b in range(len(sizes))]
    return PathSet(np.concatenate(blocks, axis=0), seed=seed)


def simulate_inner_block(model: PriceModel, start_date: int, start_prices: Sequence[float],
                         count: int, seed: int, keys: Sequence[Tuple[int, ...]]) -> np.ndarray:
    """Conditional paths for several start states at once.

    Returns a (len(start_prices) * count, cemetery - start_date + 1) matrix;
    rows [i*count, (i+1)*count) start from start_prices[i] and use the stream
    keyed by keys[i].
    """
    start_prices = np.asarray(start_prices, dtype=float)
    if not 0 <= start_date <= model.horizon:
        raise ValueError(f"start_date must lie in 0..{model.horizon}, got {start_date}")
    if count < 1:
        raise ValueError(f"path count must be >= 1, got {count}")
    if np.any(start_prices <= 0):
        raise ValueError("start prices must be > 0")
    if len(keys) != len(start_prices):
        raise ValueError(f"need one stream key per start price ({len(start_prices)}), got {len(keys)}")
    steps = model.horizon - start_date
    noise = np.empty((len(start_prices) * count, steps))
    for i, key in enumerate(keys):
        noise[i * count:(i + 1) * count] = stream(seed, INNER_STREAM, *key).standard_normal((count, steps))
    return _evolve(model, np.repeat(start_prices, count), noise)


def simulate_inner_paths(model: PriceModel, start_date: int, start_price: float, count: int,
                         seed: int, key: Tuple[int, ...] = ()) -> PathSet:
    paths = simulate_inner_block(model, start_date, [start_price], count, seed, [key])
    return PathSet(paths, seed=seed, start_date=start_date)
