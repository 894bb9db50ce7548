"""Least-squares Monte Carlo for the auxiliary dynamic program.

For every date j < T and every number l of remaining rights two continuation
functions are fitted on a set of regression paths:

    C^{1,l}_j(x)     ~ E[Y^l_{j+1}   | S_j = x]
    C^{delta,l}_j(x) ~ E[Y^l_{rho^j} | S_j = x]

by regressing the pathwise dynamic-program values on a small basis of price
functions. At dates >= T (and for delta-step targets that land on the
cemetery) the continuation is the known cemetery value of the remaining
rights.
"""
from __future__ import annotations
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd

from .contract import ContractSpec
from .logging_util import debug, timed
from .model import PathSet, PriceModel


class Kind(str, Enum):
    ONE = "one"
    DELTA = "delta"


_BASIS_FUNCTIONS: Dict[str, Callable[[np.ndarray, float], np.ndarray]] = {
    "1": lambda x, k: np.ones_like(x),
    "x": lambda x, k: x,
    "(x-K)+": lambda x, k: np.maximum(x - k, 0.0),
}


def _price_labels(labels: Tuple[str, ...], strike: float) -> Tuple[str, ...]:
    # prices before the cemetery are positive, so (x-K)+ equals x once K <= 0
    return tuple(l for l in labels if l != "(x-K)+") if strike <= 0 else labels


@dataclass(frozen=True)
class BasisSet:
    labels: Tuple[str, ...]
    strike: float

    def __post_init__(self):
        if not self.labels:
            raise ValueError("basis needs at least one function")
        unknown = [l for l in self.labels if l not in _BASIS_FUNCTIONS]
        if unknown:
            raise ValueError(f"unknown basis functions {unknown}; known: {sorted(_BASIS_FUNCTIONS)}")

    @classmethod
    def default(cls, strike: float) -> "BasisSet":
        return cls(_price_labels(("1", "x", "(x-K)+"), strike), strike)

    @classmethod
    def compact(cls, strike: float) -> "BasisSet":
        """The two price functions without an intercept."""
        return cls(_price_labels(("x", "(x-K)+"), strike), strike)

    @classmethod
    def by_name(cls, name: str, strike: float) -> "BasisSet":
        if name == "default":
            return cls.default(strike)
        if name == "compact":
            return cls.compact(strike)
        raise ValueError(f"unknown basis {name!r} (expected default or compact)")

    def __len__(self) -> int:
        return len(self.labels)

    def design(self, prices: np.ndarray) -> np.ndarray:
        """(paths, functions) design matrix."""
        prices = np.asarray(prices, dtype=float)
        return np.column_stack([_BASIS_FUNCTIONS[l](prices, self.strike) for l in self.labels])


def fit_coefficients(design: np.ndarray, targets: np.ndarray) -> Tuple[np.ndarray, int]:
    """Least squares for one or several target columns.

    SVD-based lstsq returns the minimum-norm solution when the design is
    rank deficient (e.g. sigma = 0 makes every row identical).
    """
    coeffs, _, rank, _ = np.linalg.lstsq(design, targets, rcond=None)
    return coeffs, int(rank)


@dataclass(frozen=True)
class StepOutcome:
    """Dynamic-program step at one date, rows indexed by remaining rights."""
    value: np.ndarray       # max(continue, best exercise)
    exercise: np.ndarray    # best exercise >= continue
    count: np.ndarray       # argmax n (smallest on ties), 0 where not exercising
    realized: Optional[np.ndarray]  # exercise value with `follow` in place of cont_delta


def bellman_step(spec: ContractSpec, date: int, prices: np.ndarray, cont_one: np.ndarray,
                 cont_delta: np.ndarray, follow: Optional[np.ndarray] = None) -> StepOutcome:
    """One date of the generic dynamic program for every rights count.

    cont_one[l] and cont_delta[l] hold the one-step and rho-step continuation
    values of the l-rights problem, each of shape (paths,). With l rights left
    the exercised rights are k..k+n-1 where k = L - l + 1, so exercising n of
    them is worth

        sum_{p=k}^{k+n-1} U^p prod_{q=k}^{p-1} V^q + prod_{q=k}^{k+n-1} V^q * cont_delta[l-n].
    """
    L = spec.rights
    prices = np.asarray(prices, dtype=float)
    u, v = spec.cashflows(date, prices)
    caps = spec.max_volume(date, prices)
    top = int(caps.max()) if caps.size else 0
    shape = (L + 1,) + prices.shape
    value = np.zeros(shape)
    exercise = np.zeros(shape, dtype=bool)
    count = np.zeros(shape, dtype=np.int64)
    realized = np.zeros(shape) if follow is not None else None
    for l in range(1, L + 1):
        k = L - l + 1
        best = np.full(prices.shape, -np.inf)
        best_n = np.zeros(prices.shape, dtype=np.int64)
        best_real = np.zeros(prices.shape)
        immediate = np.zeros(prices.shape)
        product = np.ones(prices.shape)
        for n in range(1, min(l, top) + 1):
            immediate = immediate + product * u[k + n - 1]
            product = product * v[k + n - 1]
            candidate = immediate + product * cont_delta[l - n]
            better = (n <= caps) & (candidate > best)
            best = np.where(better, candidate, best)
            best_n = np.where(better, n, best_n)
            if follow is not None:
                best_real = np.where(better, immediate + product * follow[l - n], best_real)
        now = best >= cont_one[l]
        exercise[l] = now
        count[l] = np.where(now, best_n, 0)
        value[l] = np.where(now, best, cont_one[l])
        if realized is not None:
            realized[l] = best_real
    return StepOutcome(value, exercise, count, realized)


@dataclass(frozen=True)
class ContinuationTable:
    """Regression coefficients indexed (date 0..T, rights 0..L, basis function).

    Rows for l = 0 and dates >= T are never read; evaluation returns the
    cemetery values there, and for delta-step lookups at dates whose
    refraction target is the cemetery.
    """
    coeffs_one: np.ndarray
    coeffs_delta: np.ndarray
    basis: BasisSet
    cemetery_values: np.ndarray
    delta_targets: np.ndarray   # rho^j for j = 0..T

    @property
    def horizon(self) -> int:
        return self.coeffs_one.shape[0] - 1

    @property
    def rights(self) -> int:
        return self.coeffs_one.shape[1] - 1

    def _coeffs(self, kind: Kind) -> np.ndarray:
        return self.coeffs_one if Kind(kind) is Kind.ONE else self.coeffs_delta

    def _terminal(self, kind: Kind, date: int) -> bool:
        if date >= self.horizon:
            return True
        return Kind(kind) is Kind.DELTA and self.delta_targets[date] > self.horizon

    def evaluate_all(self, kind: Kind, date: int, prices: np.ndarray) -> np.ndarray:
        """Continuation values for every rights count, shape (L+1, paths)."""
        prices = np.atleast_1d(np.asarray(prices, dtype=float))
        if self._terminal(kind, date):
            return np.repeat(self.cemetery_values[:, None], prices.shape[0], axis=1)
        # no BLAS: each path's value must not depend on the batch size
        out = (self._coeffs(kind)[date][:, None, :] * self.basis.design(prices)[None, :, :]).sum(axis=2)
        out[0] = 0.0
        return out

    def evaluate(self, kind: Kind, date: int, rights: int, price: Union[float, np.ndarray]):
        if rights == 0:
            return 0.0 if np.ndim(price) == 0 else np.zeros(np.shape(price))
        if self._terminal(kind, date):
            value = self.cemetery_values[rights]
            return float(value) if np.ndim(price) == 0 else np.full(np.shape(price), value)
        fitted = (self.basis.design(np.atleast_1d(price)) * self._coeffs(kind)[date, rights]).sum(axis=1)
        return float(fitted[0]) if np.ndim(price) == 0 else fitted

    # --- Persistence -----------------------------------------------------------------
    def to_frame(self) -> pd.DataFrame:
        rows = []
        for kind in Kind:
            coeffs = self._coeffs(kind)
            for date in range(self.horizon):
                for rights in range(1, self.rights + 1):
                    rows.append([date, rights, kind.value, *coeffs[date, rights]])
        return pd.DataFrame(rows, columns=["date", "rights", "kind", *[f"beta_{l}" for l in self.basis.labels]])

    def to_csv(self, path: Union[str, Path]) -> None:
        self.to_frame().to_csv(path, index=False)

    def save(self, path_or_file) -> None:
        np.savez(path_or_file, coeffs_one=self.coeffs_one, coeffs_delta=self.coeffs_delta,
                 labels=np.array(self.basis.labels), strike=self.basis.strike,
                 cemetery_values=self.cemetery_values, delta_targets=self.delta_targets)

    @classmethod
    def load(cls, path_or_file) -> "ContinuationTable":
        with np.load(path_or_file, allow_pickle=False) as data:
            basis = BasisSet(tuple(str(l) for l in data["labels"]), float(data["strike"]))
            return cls(data["coeffs_one"], data["coeffs_delta"], basis,
                       data["cemetery_values"], data["delta_targets"])


def fit_continuation(model: PriceModel, spec: ContractSpec, paths: PathSet, basis: BasisSet) -> ContinuationTable:
    """Backward induction j = T..0 over the regression paths."""
    T, L = model.horizon, spec.rights
    if spec.horizon != T:
        raise ValueError(f"contract horizon {spec.horizon} does not match model horizon {T}")
    if paths.start_date != 0 or paths.cemetery != model.cemetery:
        raise ValueError(f"paths cover dates {paths.start_date}..{paths.cemetery}, expected 0..{model.cemetery}")
    cem = spec.cemetery_values()
    n = paths.count
    nb = len(basis)
    coeffs_one = np.zeros((T + 1, L + 1, nb))
    coeffs_delta = np.zeros((T + 1, L + 1, nb))
    delta_targets = np.array([spec.next_date(j) for j in range(T + 1)])
    # values[j] holds the fitted dynamic-program value Y^l_j on every path
    values = np.empty((model.cemetery + 1, L + 1, n))
    values[model.cemetery] = cem[:, None]
    terminal = np.repeat(cem[:, None], n, axis=1)
    with timed("regression_fit", paths=n, rights=L, horizon=T, basis=list(basis.labels)):
        for j in range(T, -1, -1):
            prices = paths.at(j)
            if j == T or L == 0:
                cont_one = terminal
            else:
                cont_one, coeffs_one[j] = _fit_date(basis, prices, values[j + 1], j, Kind.ONE)
            rho = delta_targets[j]
            if rho > T or L == 0:
                cont_delta = terminal
            else:
                cont_delta, coeffs_delta[j] = _fit_date(basis, prices, values[rho], j, Kind.DELTA)
            values[j] = bellman_step(spec, j, prices, cont_one, cont_delta).value
    return ContinuationTable(coeffs_one, coeffs_delta, basis, cem, delta_targets)


def _fit_date(basis: BasisSet, prices: np.ndarray, targets: np.ndarray, date: int, kind: Kind):
    design = basis.design(prices)
    beta, rank = fit_coefficients(design, targets[1:].T)
    if rank < design.shape[1]:
        debug("regression_rank_deficient", date=date, kind=kind.value, rank=rank, functions=design.shape[1])
    coeffs = np.zeros((targets.shape[0], design.shape[1]))
    coeffs[1:] = beta.T
    fitted = coeffs @ design.T
    return fitted, coeffs
