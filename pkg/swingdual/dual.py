"""High-biased dual estimate from nested simulation.

For every outer path m and date j the policy of the primal module is run on
N4 conditional paths started from S^m_j, giving

    yhat[l][j]    ~ Y^l_j               (policy started at j)
    e_one[l][j]   ~ E_j Y^l_{j+1}       (policy started at j+1)
    e_delta[l][j] ~ E_j Y^l_{rho^j}     (policy started at rho^j)

The Doob martingale and compensator of the approximate Snell envelopes never
appear explicitly: every increment entering the pathwise maximum is written
as e_one - yhat or e_delta - yhat.

Array layout: per path (L+1, cemetery+1), rights first, date second; the
sample stacks paths in front. Row l = 0 is identically zero.
"""
from __future__ import annotations
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.stats import norm

from .contract import ContractSpec
from .logging_util import timed
from .model import PathSet, PriceModel, simulate_inner_block
from .primal import LowerEstimate, policy_values
from .regress import ContinuationTable

DEFAULT_CHUNK = 64


@dataclass(frozen=True)
class SnellPath:
    yhat: np.ndarray
    e_one: np.ndarray
    e_delta: np.ndarray


@dataclass(frozen=True)
class SnellSample:
    yhat: np.ndarray      # (paths, L+1, cemetery+1)
    e_one: np.ndarray
    e_delta: np.ndarray

    @property
    def count(self) -> int:
        return self.yhat.shape[0]

    def path(self, m: int) -> SnellPath:
        return SnellPath(self.yhat[m], self.e_one[m], self.e_delta[m])


@dataclass(frozen=True)
class ThetaState:
    """theta[n, i]: pathwise dual value with n rights already used, from date i."""
    theta: np.ndarray

    @property
    def value(self):
        return self.theta[0, 0]


@dataclass(frozen=True)
class UpperEstimate:
    mean: float
    std: float
    count: int
    values: np.ndarray = field(repr=False)


# --- Step 3: nested simulation ----------------------------------------------------------

def sample_snell(table: ContinuationTable, spec: ContractSpec, model: PriceModel, outer_paths: PathSet,
                 inner_count: int, lower: Optional[LowerEstimate], seed: int, workers: int = 1,
                 variance_reduction: bool = True, chunk: int = DEFAULT_CHUNK) -> SnellSample:
    """Nested-simulation estimates of the Snell entries along every outer path.

    Inner paths for outer state (m, j) come from the stream keyed (seed, m, j),
    and one inner set serves the three start dates j, j+1 and rho^j. With
    variance_reduction the date-0 entries are the N2-path averages stored in
    `lower` (the same for every outer path).
    """
    if inner_count < 1:
        raise ValueError(f"inner path count must be >= 1, got {inner_count}")
    if variance_reduction and lower is None:
        raise ValueError("variance reduction needs the lower estimate's date-0 companions")
    L, D = spec.rights, spec.cemetery
    m_count = outer_paths.count
    shape = (m_count, L + 1, D + 1)
    yhat, e_one, e_delta = np.empty(shape), np.empty(shape), np.empty(shape)
    cem = table.cemetery_values
    for arr in (yhat, e_one, e_delta):
        arr[:, :, D] = cem[None, :]

    first = 1 if variance_reduction else 0
    tasks: List[Tuple[int, int]] = [(j, lo) for j in range(first, D) for lo in range(0, m_count, chunk)]

    def run(task: Tuple[int, int]) -> None:
        j, lo = task
        hi = min(lo + chunk, m_count)
        inner = simulate_inner_block(model, j, outer_paths.at(j)[lo:hi], inner_count, seed,
                                     [(m, j) for m in range(lo, hi)])
        values = policy_values(table, spec, inner, j)
        values = values.reshape(L + 1, values.shape[1], hi - lo, inner_count).mean(axis=3)
        yhat[lo:hi, :, j] = values[:, 0].T
        e_one[lo:hi, :, j] = values[:, 1].T
        e_delta[lo:hi, :, j] = values[:, spec.next_date(j) - j].T

    with timed("snell_sample", outer=m_count, inner=inner_count, rights=L, tasks=len(tasks)):
        if workers > 1 and len(tasks) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                list(pool.map(run, tasks))
        else:
            for task in tasks:
                run(task)
    if variance_reduction:
        yhat[:, :, 0] = lower.start_zero[None, :]
        e_one[:, :, 0] = lower.start_one[None, :]
        e_delta[:, :, 0] = lower.start_delta[None, :]
    for arr in (yhat, e_one, e_delta):
        arr[:, 0, :] = 0.0
    return SnellSample(yhat, e_one, e_delta)


# --- Step 4: pathwise maximum -------------------------------------------------------------

def _stack(snell: Union[SnellPath, SnellSample], prices: np.ndarray):
    """Bring single-path inputs to the (paths, ...) layout."""
    prices = np.asarray(prices, dtype=float)
    if prices.ndim == 1:
        return (snell.yhat[None], snell.e_one[None], snell.e_delta[None], prices[None])
    return snell.yhat, snell.e_one, snell.e_delta, prices


def theta_table(spec: ContractSpec, snell: Union[SnellPath, SnellSample], prices: np.ndarray) -> ThetaState:
    """Backward recursion for theta over dates cemetery..0 and used rights L..0.

    theta[n, i] = max( theta[n, i+1] + e_one[L-n][i] - yhat[L-n][i+1],
                       max_nu  sum_{k=1}^{nu} (prod_{l<k} V^{n+l}_i) U^{n+k}_i
                               + (prod_{l<=nu} V^{n+l}_i)
                                 * (theta[n+nu, rho^i] + e_delta[L-n-nu][i] - yhat[L-n-nu][rho^i]) )

    with theta[n, cemetery] = value of exercising rights n+1..L at the
    cemetery. Vectorized over paths; shape (L+1, cemetery+1, paths).
    """
    yhat, e_one, e_delta, prices = _stack(snell, prices)
    L, T, D = spec.rights, spec.horizon, spec.cemetery
    P = prices.shape[0]
    cem = spec.cemetery_values()
    theta = np.empty((L + 1, D + 1, P))
    theta[:, D] = cem[::-1, None]
    for i in range(T, -1, -1):
        s = prices[:, i]
        u, v = spec.cashflows(i, s)
        caps = spec.max_volume(i, s)
        rho = spec.next_date(i)
        for n in range(L, -1, -1):
            l = L - n
            best = theta[n, i + 1] + e_one[:, l, i] - yhat[:, l, i + 1]
            immediate = np.zeros(P)
            product = np.ones(P)
            for nu in range(1, l + 1):
                immediate = immediate + product * u[n + nu]
                product = product * v[n + nu]
                candidate = immediate + product * (theta[n + nu, rho] + e_delta[:, l - nu, i] - yhat[:, l - nu, rho])
                best = np.where(nu <= caps, np.maximum(best, candidate), best)
            theta[n, i] = best
    return ThetaState(theta)


def theta_recursion(spec: ContractSpec, snell: SnellPath, prices: np.ndarray) -> float:
    """theta^{0,L}_0 for one outer path."""
    return float(theta_table(spec, snell, prices).theta[0, 0, 0])


def upper_bound(spec: ContractSpec, snell: SnellSample, outer_paths: PathSet) -> UpperEstimate:
    with timed("upper_bound", paths=snell.count, rights=spec.rights) as extra:
        values = theta_table(spec, snell, outer_paths.paths).theta[0, 0]
        mean = float(values.mean())
        std = float(values.std(ddof=1) / np.sqrt(values.size)) if values.size > 1 else 0.0
        extra.update(mean=mean, std=std)
    return UpperEstimate(mean, std, int(values.size), values)


def confidence_interval(lower: LowerEstimate, upper: UpperEstimate, level: float = 0.95) -> Tuple[float, float]:
    """[lower - z std_lower, upper + z std_upper], z the two-sided normal quantile."""
    z = float(norm.ppf(0.5 + level / 2.0))
    return lower.mean - z * lower.std, upper.mean + z * upper.std


# --- Non-recursive gap bounds -------------------------------------------------------------

def _decision_defects(spec: ContractSpec, yhat, e_delta, prices) -> np.ndarray:
    """G[l, j]: best exercise value against rho-step expectations minus yhat[l][j].

    At the cemetery every remaining right is exercised, so G is the cemetery
    value minus yhat there. Shape (L+1, cemetery+1, paths); row 0 is zero.
    """
    L, T, D = spec.rights, spec.horizon, spec.cemetery
    P = prices.shape[0]
    cem = spec.cemetery_values()
    out = np.zeros((L + 1, D + 1, P))
    for l in range(1, L + 1):
        out[l, D] = cem[l] - yhat[:, l, D]
    for j in range(T + 1):
        s = prices[:, j]
        u, v = spec.cashflows(j, s)
        caps = spec.max_volume(j, s)
        for l in range(1, L + 1):
            k = L - l + 1
            best = np.full(P, -np.inf)
            immediate = np.zeros(P)
            product = np.ones(P)
            for n in range(1, l + 1):
                immediate = immediate + product * u[k + n - 1]
                product = product * v[k + n - 1]
                candidate = immediate + product * e_delta[:, l - n, j]
                best = np.where(n <= caps, np.maximum(best, candidate), best)
            out[l, j] = best - yhat[:, l, j]
    return out


def snell_gap_table(spec: ContractSpec, snell: Union[SnellPath, SnellSample], prices: np.ndarray) -> np.ndarray:
    """Pathwise maximum over admissible chains of the supermartingale and decision defects.

    W[l, r] is the best value with l rights left, the first of them exercised
    at a date >= r, defects accumulated from r on:

        W[l, r] = max( e_one[l][r] - yhat[l][r] + W[l, r+1],
                       G[l, r] + max_{m <= v_r ^ l} (prod of m V-factors at r) * W[l-m, rho^r] )

    with W[0, .] = 0 and W[l, cemetery] = G[l, cemetery].
    """
    yhat, e_one, e_delta, prices = _stack(snell, prices)
    L, T, D = spec.rights, spec.horizon, spec.cemetery
    P = prices.shape[0]
    G = _decision_defects(spec, yhat, e_delta, prices)
    W = np.zeros((L + 1, D + 1, P))
    W[1:, D] = G[1:, D]
    for r in range(T, -1, -1):
        s = prices[:, r]
        _, v = spec.cashflows(r, s)
        caps = spec.max_volume(r, s)
        rho = spec.next_date(r)
        for l in range(1, L + 1):
            k = L - l + 1
            best_after = np.full(P, -np.inf)
            product = np.ones(P)
            for m in range(1, l + 1):
                product = product * v[k + m - 1]
                best_after = np.where(m <= caps, np.maximum(best_after, product * W[l - m, rho]), best_after)
            W[l, r] = np.maximum(e_one[:, l, r] - yhat[:, l, r] + W[l, r + 1], G[l, r] + best_after)
    return W


def snell_gap(spec: ContractSpec, snell: SnellPath, prices: np.ndarray) -> float:
    return float(snell_gap_table(spec, snell, prices)[spec.rights, 0, 0])


def defect_bound(spec: ContractSpec, snell: Union[SnellPath, SnellSample], prices: np.ndarray):
    """Sum of positive parts bounding the chain maximum without recursion.

        sum_{r<=T} max_{0<=k<L} Vmax^k (e_one[L-k][r] - yhat[L-k][r])^+
      + sum_{k=1}^{L} Vmax^{k-1} max_j (G[L-k+1, j])^+

    Vmax^k is the product over l <= k of the pathwise maximum of V^l.
    """
    yhat, e_one, e_delta, prices = _stack(snell, prices)
    L, T, D = spec.rights, spec.horizon, spec.cemetery
    P = prices.shape[0]
    factors = np.stack([spec.cashflows(j, prices[:, j])[1] for j in range(D + 1)], axis=1)  # (L+1, D+1, P)
    vmax = np.ones((L + 1, P))
    for k in range(1, L + 1):
        vmax[k] = vmax[k - 1] * factors[k].max(axis=0)
    first = np.zeros(P)
    for r in range(T + 1):
        term = np.zeros(P)
        for k in range(L):
            term = np.maximum(term, vmax[k] * np.maximum(e_one[:, L - k, r] - yhat[:, L - k, r], 0.0))
        first += term
    G = _decision_defects(spec, yhat, e_delta, prices)
    second = np.zeros(P)
    for k in range(1, L + 1):
        second += vmax[k - 1] * np.maximum(G[L - k + 1], 0.0).max(axis=0)
    total = first + second
    return float(total[0]) if total.size == 1 else total


# --- Diagnostics ---------------------------------------------------------------------------

def dump_diagnostics(spec: ContractSpec, snell: SnellSample, outer_paths: PathSet, upper: UpperEstimate,
                     path: Union[str, Path]) -> pd.DataFrame:
    """Per-path theta, defect bound and date-0/1 Snell entries as CSV."""
    defect = np.atleast_1d(defect_bound(spec, snell, outer_paths.paths))
    L = spec.rights
    frame = pd.DataFrame({
        "path": np.arange(snell.count),
        "theta": upper.values,
        "defect": defect,
        "yhat_0": snell.yhat[:, L, 0],
        "yhat_1": snell.yhat[:, L, 1],
        "e_one_0": snell.e_one[:, L, 0],
        "e_delta_0": snell.e_delta[:, L, 0],
    })
    frame.to_csv(path, index=False, float_format="%.6g")
    return frame
