"""Exact solvers on small finite trees.

A FiniteTree is a non-recombining tree over dates 0..T: node q at depth d has
children q*b .. q*b+b-1 at depth d+1, reached with per-node probabilities.
The cemetery T+1 is deterministic (price 0). On such trees conditional
expectations are exact, so the dynamic program, the dual recursion and the
gap bounds can be checked to rounding error.

Two independent exact values are provided:
  - exact_value: the multi-exercise dynamic program (n rights at once);
  - exact_value_enumeration: backward induction over single-right decisions
    with the full (last exercise date, multiplicity) state and explicit
    admissibility checks.
"""
from __future__ import annotations
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .contract import (ContractSpec, TableVolume, chain_payoff, is_admissible, preset_exp_utility,
                       preset_liquidation, preset_swing)
from .dual import SnellPath, SnellSample, defect_bound, snell_gap_table, theta_table
from .logging_util import info, warn
from .model import MarketModel
from .primal import policy_values
from .regress import ContinuationTable, bellman_step

MAX_TREE_NODES = 10_000
MAX_ENUMERATION_NODES = 2_000


class OracleSizeError(ValueError):
    """Instance too large for exhaustive solution."""


@dataclass(frozen=True)
class FiniteTree:
    branching: int
    prices: Tuple[np.ndarray, ...]   # depth d -> (branching**d,)
    probs: Tuple[np.ndarray, ...]    # depth d < T -> (branching**d, branching)

    def __post_init__(self):
        if self.node_count > MAX_TREE_NODES:
            raise OracleSizeError(f"tree has {self.node_count} nodes, limit is {MAX_TREE_NODES}")
        for d, level in enumerate(self.prices):
            if level.shape != (self.branching ** d,):
                raise ValueError(f"depth {d} must hold {self.branching ** d} prices, got {level.shape}")
            if np.any(level <= 0):
                raise ValueError(f"prices before the cemetery must be > 0 (depth {d})")
        for d, p in enumerate(self.probs):
            if p.shape != (self.branching ** d, self.branching) or np.any(p < 0):
                raise ValueError(f"bad transition weights at depth {d}")
            if not np.allclose(p.sum(axis=1), 1.0, atol=1e-12):
                raise ValueError(f"transition weights at depth {d} do not sum to 1")

    @property
    def horizon(self) -> int:
        return len(self.prices) - 1

    @property
    def node_count(self) -> int:
        return sum(level.size for level in self.prices)

    # --- constructors ------------------------------------------------------------------
    @classmethod
    def path(cls, prices: Sequence[float]) -> "FiniteTree":
        """Deterministic single-path tree."""
        levels = tuple(np.array([float(s)]) for s in prices)
        return cls(1, levels, tuple(np.ones((1, 1)) for _ in range(len(levels) - 1)))

    @classmethod
    def from_model(cls, model: MarketModel, branching: int = 2) -> "FiniteTree":
        """Gauss-Hermite discretization of the exp-OU step.

        branching=2 gives the +-sigma step with probability 1/2 each.
        """
        nodes, weights = hermegauss(branching)
        weights = weights / weights.sum()
        levels = [np.array([model.s0])]
        probs = []
        for _ in range(model.horizon):
            logs = model.advance(np.log(levels[-1])[:, None], nodes[None, :])
            probs.append(np.tile(weights, (levels[-1].size, 1)))
            levels.append(np.exp(logs).ravel())
        return cls(branching, tuple(levels), tuple(probs))

    @classmethod
    def random(cls, rng: np.random.Generator, horizon: int, branching: int = 2,
               strike: float = 1.0, spread: float = 0.4) -> "FiniteTree":
        levels = tuple(strike * np.exp(rng.normal(0.0, spread, branching ** d)) for d in range(horizon + 1))
        probs = tuple(rng.dirichlet(np.ones(branching), size=branching ** d) for d in range(horizon))
        return cls(branching, levels, probs)

    # --- exact expectations --------------------------------------------------------------
    def expect(self, depth: int, child_values: np.ndarray) -> np.ndarray:
        """E[. | node at depth] for values given at depth+1; leading axes are kept."""
        grouped = child_values.reshape(child_values.shape[:-1] + (-1, self.branching))
        return (grouped * self.probs[depth]).sum(axis=-1)

    def expect_from(self, depth: int, target: int, values: np.ndarray) -> np.ndarray:
        for d in range(target - 1, depth - 1, -1):
            values = self.expect(d, values)
        return values

    def leaf_paths(self) -> Tuple[np.ndarray, np.ndarray]:
        """Node index per depth for every root-to-leaf path, and path probabilities."""
        b, T = self.branching, self.horizon
        leaves = np.arange(b ** T)
        nodes = np.stack([leaves // b ** (T - d) for d in range(T + 1)], axis=1)
        weights = np.ones(leaves.size)
        for d in range(T):
            weights = weights * self.probs[d][nodes[:, d], nodes[:, d + 1] % b]
        return nodes, weights

    def path_prices(self) -> np.ndarray:
        nodes, _ = self.leaf_paths()
        out = np.zeros((nodes.shape[0], self.horizon + 2))
        for d in range(self.horizon + 1):
            out[:, d] = self.prices[d][nodes[:, d]]
        return out


@dataclass(frozen=True)
class Envelopes:
    """values[d][l, q]: Y^l at node q of depth d."""
    values: Tuple[np.ndarray, ...]
    cemetery: np.ndarray

    def at(self, depth: int) -> np.ndarray:
        if depth >= len(self.values):
            return self.cemetery[:, None]
        return self.values[depth]


def _check_spec(tree: FiniteTree, spec: ContractSpec) -> None:
    if spec.horizon != tree.horizon:
        raise ValueError(f"contract horizon {spec.horizon} does not match tree horizon {tree.horizon}")


def _expect_at(tree: FiniteTree, env: Envelopes, depth: int, target: int) -> np.ndarray:
    """E_depth Y_target for every node at depth, shape (L+1, nodes)."""
    nodes = tree.branching ** depth
    if target > tree.horizon:
        return np.repeat(env.cemetery[:, None], nodes, axis=1)
    return tree.expect_from(depth, target, env.values[target])


def exact_value(tree: FiniteTree, spec: ContractSpec) -> Tuple[float, Envelopes]:
    """Exact dynamic program; returns Y^{*L}_0 and the envelopes for every l."""
    _check_spec(tree, spec)
    cem = spec.cemetery_values()
    T = tree.horizon
    values: List[Optional[np.ndarray]] = [None] * (T + 1)
    for r in range(T, -1, -1):
        env = Envelopes(tuple(values), cem)  # later depths already filled
        cont_one = _expect_at(tree, env, r, r + 1)
        cont_delta = _expect_at(tree, env, r, spec.next_date(r))
        values[r] = bellman_step(spec, r, tree.prices[r], cont_one, cont_delta).value
    env = Envelopes(tuple(values), cem)
    return float(env.values[0][spec.rights, 0]), env


def exact_value_enumeration(tree: FiniteTree, spec: ContractSpec) -> float:
    """Value over all admissible exercise policies, one right at a time."""
    _check_spec(tree, spec)
    if tree.node_count > MAX_ENUMERATION_NODES:
        raise OracleSizeError(f"tree has {tree.node_count} nodes, enumeration limit is {MAX_ENUMERATION_NODES}")
    L, T, D, b = spec.rights, tree.horizon, spec.cemetery, tree.branching
    memo: Dict[Tuple[int, int, int, int, int], float] = {}

    def price(depth: int, node: int, at: int) -> float:
        return float(tree.prices[at][node // b ** (depth - at)])

    def at_cemetery(used: int) -> float:
        value, _ = spec.exercise_value(used + 1, L - used, D, np.zeros(1))
        return float(value[0])

    def best(depth: int, node: int, used: int, last: int, mult: int) -> float:
        # `used` rights exercised, the latest `mult` of them at date `last` (-1: none)
        if used == L:
            return 0.0
        key = (depth, node, used, last, mult)
        if key in memo:
            return memo[key]
        if depth == T:
            options = [at_cemetery(used)]
        else:
            children = [best(depth + 1, node * b + c, used, last, mult) for c in range(b)]
            options = [float(np.dot(tree.probs[depth][node], children))]
        s = price(depth, node, depth)
        prefix = [last] * mult + [depth] if used else [depth]
        prefix_prices = [price(depth, node, last)] * mult + [s] if used else [s]
        if is_admissible(spec, prefix, prefix_prices):
            x = np.array([s])
            now = float(spec.payoff(used + 1, depth, x)[0])
            factor = float(spec.factor(used + 1, depth, x)[0])
            again = mult + 1 if used and last == depth else 1
            options.append(now + factor * best(depth, node, used + 1, depth, again))
        memo[key] = max(options)
        return memo[key]

    return best(0, 0, 0, -1, 0)


def tree_snell(tree: FiniteTree, spec: ContractSpec, env: Envelopes) -> Tuple[np.ndarray, SnellSample, np.ndarray]:
    """Snell inputs along every leaf path, with exact one-step and rho-step expectations of env."""
    T, D, L = tree.horizon, spec.cemetery, spec.rights
    nodes, weights = tree.leaf_paths()
    P = nodes.shape[0]
    shape = (P, L + 1, D + 1)
    yhat, e_one, e_delta = np.empty(shape), np.empty(shape), np.empty(shape)
    for arr in (yhat, e_one, e_delta):
        arr[:, :, D] = env.cemetery[None, :]
    for d in range(T + 1):
        idx = nodes[:, d]
        yhat[:, :, d] = env.at(d)[:, idx].T
        e_one[:, :, d] = _expect_at(tree, env, d, d + 1)[:, idx].T
        e_delta[:, :, d] = _expect_at(tree, env, d, spec.next_date(d))[:, idx].T
    for arr in (yhat, e_one, e_delta):
        arr[:, 0, :] = 0.0
    return tree.path_prices(), SnellSample(yhat, e_one, e_delta), weights


def perturb_envelopes(env: Envelopes, rng: np.random.Generator, scale: float) -> Envelopes:
    values = []
    for level in env.values:
        noisy = level + rng.normal(0.0, scale, level.shape)
        noisy[0] = 0.0
        values.append(noisy)
    return Envelopes(tuple(values), env.cemetery)


def dual_mean(tree: FiniteTree, spec: ContractSpec, env: Envelopes) -> float:
    """Probability-weighted mean of theta for the Doob parts of env."""
    prices, snell, weights = tree_snell(tree, spec, env)
    return float(np.dot(weights, theta_table(spec, snell, prices).theta[0, 0]))


def policy_value_on_tree(tree: FiniteTree, spec: ContractSpec, table: ContinuationTable) -> float:
    prices = tree.path_prices()
    _, weights = tree.leaf_paths()
    return float(np.dot(weights, policy_values(table, spec, prices, 0)[spec.rights, 0]))


@dataclass(frozen=True)
class DualCheck:
    value: float
    theta_deviation: float
    gap: float
    defect: float


def verify_dual_exactness(tree: FiniteTree, spec: ContractSpec) -> DualCheck:
    """theta with exact Doob inputs equals Y*_0 on every path; both gap bounds vanish."""
    value, env = exact_value(tree, spec)
    prices, snell, _ = tree_snell(tree, spec, env)
    theta = theta_table(spec, snell, prices).theta[0, 0]
    gap = snell_gap_table(spec, snell, prices)[spec.rights, 0]
    defect = np.atleast_1d(defect_bound(spec, snell, prices))
    return DualCheck(value, float(np.max(np.abs(theta - value))), float(np.max(np.abs(gap))),
                     float(np.max(np.abs(defect))))


# --- brute force over chains ----------------------------------------------------------------

def admissible_chains(spec: ContractSpec, prices: np.ndarray, start: int = 0) -> Iterator[Tuple[int, ...]]:
    """All admissible L-date chains on one path, first date >= start."""
    def extend(prefix: Tuple[int, ...]) -> Iterator[Tuple[int, ...]]:
        if len(prefix) == spec.rights:
            yield prefix
            return
        lo = prefix[-1] if prefix else start
        for d in range(lo, spec.cemetery + 1):
            chain = prefix + (d,)
            if is_admissible(spec, chain, [prices[x] for x in chain]):
                yield from extend(chain)
    yield from extend(())


def _segment(row_one: np.ndarray, row_y: np.ndarray, lo: int, hi: int, shift: int) -> float:
    return float(sum(row_one[r] - row_y[r + shift] for r in range(lo, hi)))


def theta_by_enumeration(spec: ContractSpec, snell: SnellPath, prices: np.ndarray) -> float:
    """Explicit pathwise maximum over chains of payoff minus martingale increments."""
    L = spec.rights
    best = -np.inf
    for chain in admissible_chains(spec, prices):
        total, product, prev = 0.0, 1.0, None
        for k, j in enumerate(chain, start=1):
            l = L - k + 1
            if prev is None:
                penalty = _segment(snell.e_one[l], snell.yhat[l], 0, j, 1)
            elif j > prev:
                rho = spec.next_date(prev)
                penalty = snell.e_delta[l, prev] - snell.yhat[l, rho] + _segment(snell.e_one[l], snell.yhat[l], rho, j, 1)
            else:
                penalty = 0.0
            x = np.array([prices[j]])
            total += product * (float(spec.payoff(k, j, x)[0]) + penalty)
            product *= float(spec.factor(k, j, x)[0])
            prev = j
        best = max(best, total)
    return float(best)


def gap_by_enumeration(spec: ContractSpec, snell: SnellPath, prices: np.ndarray) -> float:
    """Explicit pathwise maximum over chains of the supermartingale and decision defects."""
    L, D = spec.rights, spec.cemetery
    cem = spec.cemetery_values()

    def decision(l: int, j: int) -> float:
        if j == D:
            return float(cem[l] - snell.yhat[l, j])
        x = np.array([prices[j]])
        cap = int(spec.max_volume(j, x)[0])
        options = []
        for n in range(1, min(cap, l) + 1):
            now, factor = spec.exercise_value(L - l + 1, n, j, x)
            options.append(float(now[0] + factor[0] * snell.e_delta[l - n, j]))
        return max(options) - float(snell.yhat[l, j])

    best = -np.inf
    for chain in admissible_chains(spec, prices):
        total, product, prev = 0.0, 1.0, None
        for k, j in enumerate(chain, start=1):
            l = L - k + 1
            if prev is None or j > prev:
                lo = 0 if prev is None else spec.next_date(prev)
                total += product * (_segment(snell.e_one[l], snell.yhat[l], lo, j, 0) + decision(l, j))
            product *= float(spec.factor(k, j, np.array([prices[j]]))[0])
            prev = j
        best = max(best, total)
    return float(best)


def best_chain_payoff(spec: ContractSpec, prices: np.ndarray) -> float:
    """Deterministic optimum on a single known path."""
    return max(chain_payoff(spec, c, [prices[d] for d in c]) for c in admissible_chains(spec, prices))


# --- randomized suite ------------------------------------------------------------------------

PRESETS = ("swing", "exputil", "liquidation")


def random_instance(rng: np.random.Generator, max_horizon: int = 5, max_rights: int = 3,
                    preset: Optional[str] = None) -> Tuple[FiniteTree, ContractSpec]:
    T = int(rng.integers(1, max_horizon + 1))
    L = int(rng.integers(1, max_rights + 1))
    delta = int(rng.integers(1, 4))
    caps = tuple(int(c) for c in rng.integers(1, 3, size=T + 1))
    volume = TableVolume(L, T + 1, caps)
    name = preset or PRESETS[int(rng.integers(len(PRESETS)))]
    tree = FiniteTree.random(rng, T)
    if name == "swing":
        spec = preset_swing(1.0, L, T, volume, delta)
    elif name == "exputil":
        spec = preset_exp_utility(float(rng.uniform(0.2, 2.0)), 1.0, L, T, volume, delta)
    else:
        spec = preset_liquidation(float(rng.uniform(0.1, 1.0)) / T, float(rng.uniform(0.1, 1.0)), L, T, volume, delta)
    return tree, spec


def random_snell_path(rng: np.random.Generator, spec: ContractSpec) -> SnellPath:
    shape = (spec.rights + 1, spec.cemetery + 1)
    arrays = [rng.normal(0.0, 1.0, shape) for _ in range(3)]
    for arr in arrays:
        arr[0] = 0.0
    return SnellPath(*arrays)


def run_oracle_suite(count: int = 200, seed: int = 0, enumeration_every: int = 2) -> dict:
    """Randomized cross-checks of the exact solvers and the dual identities."""
    rng = np.random.default_rng(seed)
    worst = {"value_mismatch": 0.0, "theta_deviation": 0.0, "gap": 0.0, "defect": 0.0,
             "theta_enumeration": 0.0, "gap_enumeration": 0.0}
    failures = []
    for i in range(count):
        tree, spec = random_instance(rng)
        try:
            check = verify_dual_exactness(tree, spec)
            worst["value_mismatch"] = max(worst["value_mismatch"], abs(check.value - exact_value_enumeration(tree, spec)))
            worst["theta_deviation"] = max(worst["theta_deviation"], check.theta_deviation)
            worst["gap"] = max(worst["gap"], check.gap)
            worst["defect"] = max(worst["defect"], check.defect)
            if i % enumeration_every == 0:
                prices = tree.path_prices()[0]
                snell = random_snell_path(rng, spec)
                worst["theta_enumeration"] = max(worst["theta_enumeration"], abs(
                    theta_table(spec, snell, prices).theta[0, 0, 0] - theta_by_enumeration(spec, snell, prices)))
                worst["gap_enumeration"] = max(worst["gap_enumeration"], abs(
                    snell_gap_table(spec, snell, prices)[spec.rights, 0, 0] - gap_by_enumeration(spec, snell, prices)))
        except Exception as e:  # report and keep going
            warn("oracle_instance_failed", instance=i, preset=spec.name, error=str(e))
            failures.append({"instance": i, "error": str(e)})
    limits = {"value_mismatch": 1e-12, "theta_deviation": 1e-10, "gap": 1e-10, "defect": 1e-10,
              "theta_enumeration": 1e-10, "gap_enumeration": 1e-10}
    ok = not failures and all(worst[k] < limits[k] for k in limits)
    report = {"ok": ok, "instances": count, "seed": seed, "worst": worst, "failures": failures}
    info("oracle_suite", ok=ok, instances=count, **worst)
    return report
