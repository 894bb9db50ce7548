"""Exercise policy from fitted continuation values and the low-biased estimate.

At date r with l rights left the policy exercises n rights, n being the
smallest maximizer of

    immediate_n + V-product_n * C^{delta, l-n}_r(S_r),

as soon as that maximum is >= C^{1,l}_r(S_r); it then continues from rho^r.
Whatever is left at the cemetery is exercised there.
"""
from __future__ import annotations
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .contract import ContractSpec, ExerciseChain
from .logging_util import timed
from .model import PriceModel, block_sizes, path_block
from .regress import ContinuationTable, Kind, bellman_step


@dataclass(frozen=True)
class PolicyDecision:
    exercise_now: int
    next_admissible: int


@dataclass(frozen=True)
class LowerEstimate:
    """Policy value from date 0 with L rights, plus the companion estimates.

    start_zero[l], start_one[l], start_delta[l] are the sample means of the
    l-rights policy value started at dates 0, 1 and rho^0 on the same paths.
    """
    mean: float
    std: float
    count: int
    start_zero: np.ndarray = field(repr=False)
    start_one: np.ndarray = field(repr=False)
    start_delta: np.ndarray = field(repr=False)


def _decision_rows(table: ContinuationTable, spec: ContractSpec, date: int, prices: np.ndarray, follow=None):
    return bellman_step(spec, date, prices,
                        table.evaluate_all(Kind.ONE, date, prices),
                        table.evaluate_all(Kind.DELTA, date, prices), follow=follow)


def decide(table: ContinuationTable, spec: ContractSpec, date: int, price: float, rights: int) -> PolicyDecision:
    """Stopping rule at a single (date, price, rights) state."""
    if rights <= 0:
        return PolicyDecision(0, date + 1)
    if date >= spec.cemetery:
        return PolicyDecision(rights, spec.cemetery)
    step = _decision_rows(table, spec, date, np.array([price], dtype=float))
    n = int(step.count[rights, 0])
    if n == 0:
        return PolicyDecision(0, date + 1)
    return PolicyDecision(n, spec.next_date(date))


def run_policy(table: ContinuationTable, spec: ContractSpec, path: np.ndarray, start_date: int,
               rights: int, earliest: Optional[int] = None) -> Tuple[ExerciseChain, float]:
    """Forward run of the policy for the last `rights` rights.

    `path` holds prices for dates cemetery+1-len(path) .. cemetery. `earliest`
    is the first date a previous exercise allows (defaults to start_date).
    """
    path = np.asarray(path, dtype=float)
    offset = spec.cemetery + 1 - path.shape[0]
    if not offset <= start_date <= spec.cemetery:
        raise ValueError(f"start_date {start_date} outside the path's dates {offset}..{spec.cemetery}")
    first_right = spec.rights - rights + 1
    r = max(start_date, earliest if earliest is not None else start_date)
    dates: List[int] = []
    payoff = 0.0
    product = 1.0
    while len(dates) < rights:
        remaining = rights - len(dates)
        price = path[r - offset]
        d = decide(table, spec, r, price, remaining)
        if d.exercise_now:
            value, factor = spec.exercise_value(first_right + len(dates), d.exercise_now, r, price)
            payoff += product * float(value)
            product *= float(factor)
            dates.extend([r] * d.exercise_now)
        r = d.next_admissible
    return ExerciseChain(tuple(dates)), payoff


def policy_values(table: ContinuationTable, spec: ContractSpec, prices: np.ndarray, start_date: int) -> np.ndarray:
    """Realized policy payoff for every (rights l, start date r, path).

    prices has shape (paths, cemetery - start_date + 1). The result has shape
    (L+1, cemetery - start_date + 1, paths); entry [l, c] is the payoff of the
    l-rights policy started at date start_date + c. Decisions depend only on
    (date, price, rights), so one backward sweep covers all start dates.
    """
    L, T = spec.rights, spec.horizon
    width = spec.cemetery - start_date + 1
    if prices.shape[1] != width:
        raise ValueError(f"price matrix has {prices.shape[1]} dates, expected {width}")
    out = np.empty((L + 1, width, prices.shape[0]))
    out[:, -1] = table.cemetery_values[:, None]
    for r in range(T, start_date - 1, -1):
        c = r - start_date
        follow = out[:, spec.next_date(r) - start_date]
        step = _decision_rows(table, spec, r, prices[:, c], follow=follow)
        out[:, c] = np.where(step.exercise, step.realized, out[:, c + 1])
    return out


def lower_bound(table: ContinuationTable, spec: ContractSpec, model: PriceModel, n2: int, seed: int,
                workers: int = 1) -> LowerEstimate:
    """Average policy payoff over n2 fresh paths (independent of the regression paths)."""
    rho = spec.next_date(0)
    columns = [0, min(1, spec.cemetery), rho]

    sizes = block_sizes(n2)

    def evaluate(index: int) -> np.ndarray:
        # only the three start columns outlive the task; the price block is dropped here
        block = path_block(model, seed, index, sizes[index])
        return policy_values(table, spec, block, 0)[:, columns]

    with timed("lower_bound", paths=n2, rights=spec.rights) as extra:
        if workers > 1 and len(sizes) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(evaluate, range(len(sizes))))
        else:
            parts = [evaluate(b) for b in range(len(sizes))]
        samples = np.concatenate(parts, axis=2)  # (L+1, 3, n2), fixed block order
        means = samples.mean(axis=2)
        top = samples[spec.rights, 0]
        std = float(top.std(ddof=1) / np.sqrt(n2)) if n2 > 1 else 0.0
        extra.update(mean=float(means[spec.rights, 0]), std=std)
    return LowerEstimate(float(means[spec.rights, 0]), std, n2, means[:, 0], means[:, 1], means[:, 2])
